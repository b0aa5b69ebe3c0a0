use smartpoll::strategy::{is_stable, optimize, routing_template, sweep, CanonicalProfile, Objective};

// coarse grid, still at least one point inside every region
#[test]
fn optimal_profiles_and_thresholds() {
    let grid: Vec<f64> = (0..=34).map(|k| 0.3 + k as f64 * 0.03).collect();
    let r = sweep(&routing_template(3, 1.0), 0, 0.6, &grid, 0.005, Objective::Minimize).unwrap();
    let got: Vec<f64> = r.thresholds.iter().map(|t| t.0).collect();
    let want = [0.41, 0.66, 0.73, 0.84, 1.10, 1.16];
    assert_eq!(got.len(), want.len(), "{got:?}");
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 0.01, "{got:?}");
    }
    let profiles: Vec<String> = r.regions.iter().map(|r| r.0.to_string()).collect();
    assert_eq!(
        profiles,
        [
            "(1,1,X,1,X,1)",
            "(1,2,1,1,X,1)",
            "(1,2,2,1,X,1)",
            "(1,2,2,3,1,1)",
            "(1,2,2,3,3,1)",
            "(2,2,2,3,3,1)",
            "(X,2,2,3,3,2)",
        ]
    );
    for w in r.regions.windows(2) {
        assert_eq!(w[0].2, w[1].1);
    }
}

#[test]
fn zero_service_at_queue_one_blanks_its_visit() {
    let best = optimize(&routing_template(3, 0.0), 0.6, Objective::Minimize).unwrap();
    assert_eq!(best.profile, CanonicalProfile::parse("X,1,X,1,X,1").unwrap());
}

#[test]
fn worst_stable_profile_above_five_thirds() {
    for b in [5.0 / 3.0 + 1e-3, 2.0, 2.5, 2.77] {
        let worst = optimize(&routing_template(3, b), 0.6, Objective::Maximize).unwrap();
        assert_eq!(worst.profile.to_string(), "(3,1,X,1,1,1)", "{b}");
    }
}

// that profile saturates itself at 25/9, after which something else is worst
#[test]
fn worst_profile_saturates_at_twenty_five_ninths() {
    let p = CanonicalProfile::parse("3,1,X,1,1,1").unwrap().representative();
    assert!(is_stable(&routing_template(3, 25.0 / 9.0 - 1e-6), &p, 0.6).unwrap());
    assert!(!is_stable(&routing_template(3, 25.0 / 9.0 + 1e-6), &p, 0.6).unwrap());
    let worst = optimize(&routing_template(3, 3.0), 0.6, Objective::Maximize).unwrap();
    assert_ne!(worst.profile.to_string(), "(3,1,X,1,1,1)");
}
