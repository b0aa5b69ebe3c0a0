//! Routing strategies: every period sends all arrivals of one Poisson stream
//! to a single queue. Enumerates strategies, picks the best (or worst) by
//! mean sojourn time, and sweeps the mean service time of queue 1.

use crate::error::{PollError, Result};
use crate::model::{Discipline, Distribution, PeriodId, PollingModel, StrategyProfile};
use crate::mva::{mean_visit_times, solve_mva};
use crate::stability::effective_stability_report;
use rayon::prelude::*;
use std::fmt;

/// Largest queue count for which all N^(2N) profiles are enumerated.
pub const MAX_ENUM_QUEUES: usize = 4;
const TIE: f64 = 1e-12;

/// Profile with the targets of zero-length visits blanked out. Such targets
/// never receive anyone, so profiles differing only there are the same.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalProfile {
    pub target: Vec<Option<usize>>,
}

impl fmt::Display for CanonicalProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .target
            .iter()
            .map(|t| t.map_or_else(|| "X".to_string(), |q| (q + 1).to_string()))
            .collect();
        write!(f, "({})", parts.join(","))
    }
}

impl CanonicalProfile {
    /// Any concrete profile it stands for (wildcards sent to queue 1).
    pub fn representative(&self) -> StrategyProfile {
        StrategyProfile::new(self.target.iter().map(|t| t.unwrap_or(0)).collect())
    }

    /// Same target wherever neither profile has a wildcard.
    pub fn compatible(&self, other: &Self) -> bool {
        self.target.len() == other.target.len()
            && self.target.iter().zip(&other.target).all(|(a, b)| a.is_none() || b.is_none() || a == b)
    }

    /// Fill this profile's wildcards from `other`.
    pub fn refine_with(&self, other: &Self) -> Self {
        CanonicalProfile { target: self.target.iter().zip(&other.target).map(|(a, b)| a.or(*b)).collect() }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut target = Vec::new();
        for tok in s.trim().trim_matches(|c| c == '(' || c == ')').split(',') {
            let tok = tok.trim();
            if tok.eq_ignore_ascii_case("x") {
                target.push(None);
            } else {
                let q: usize = tok.parse().ok()?;
                if q == 0 {
                    return None;
                }
                target.push(Some(q - 1));
            }
        }
        Some(CanonicalProfile { target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub profile: CanonicalProfile,
    /// Mean sojourn time; infinite when unstable.
    pub value: f64,
    pub stable: bool,
}

/// Three exhaustive queues, exponential switch-overs of mean 1, exponential
/// services of mean 1 except at queue 1, and no arrivals yet.
pub fn routing_template(n: usize, mean_b1: f64) -> PollingModel {
    let mut m = PollingModel::uniform(n, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.0);
    m.service[0] = Distribution::exp_mean(mean_b1);
    m
}

pub fn apply_strategy(template: &PollingModel, profile: &StrategyProfile, rate: f64) -> Result<PollingModel> {
    let n = template.n();
    if profile.target.len() != 2 * n {
        return Err(PollError::OutOfRange(format!(
            "profile has {} entries, the cycle has {} periods",
            profile.target.len(),
            2 * n
        )));
    }
    if let Some(&bad) = profile.target.iter().find(|&&t| t >= n) {
        return Err(PollError::OutOfRange(format!("target queue {} of {n}", bad + 1)));
    }
    let mut m = template.clone();
    m.rates = vec![vec![0.0; 2 * n]; n];
    for (p, &t) in profile.target.iter().enumerate() {
        m.rates[t][p] = rate;
    }
    Ok(m)
}

/// Arrival-weighted mean time in system. Infinite for unstable models.
pub fn mean_sojourn(model: &PollingModel) -> Result<f64> {
    let sol = match solve_mva(model) {
        Ok(s) => s,
        Err(PollError::Unstable { .. }) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let total: f64 = sol.eff_rate.iter().sum();
    if !(total > 0.0) {
        return Err(PollError::NotApplicable("no arrivals".into()));
    }
    Ok((0..model.n())
        .filter(|&i| sol.eff_rate[i] > 0.0)
        .map(|i| sol.eff_rate[i] / total * (sol.wait[i] + model.mean_service(i)))
        .sum())
}

fn canonical(model: &PollingModel, profile: &StrategyProfile) -> Result<Option<CanonicalProfile>> {
    let visits = match mean_visit_times(model) {
        Ok(v) => v,
        Err(PollError::Unstable { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let scale = visits.iter().fold(model.total_switchover(), |a, &b| a.max(b.abs()));
    let target = profile
        .target
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            let id = PeriodId::from_index(p, model.n());
            if id.is_visit() && visits[id.queue].abs() <= 1e-12 * scale {
                None
            } else {
                Some(t)
            }
        })
        .collect();
    Ok(Some(CanonicalProfile { target }))
}

/// Canonical form of a profile on a template, or `None` when unstable.
pub fn canonicalize(template: &PollingModel, profile: &StrategyProfile, rate: f64) -> Result<Option<CanonicalProfile>> {
    canonical(&apply_strategy(template, profile, rate)?, profile)
}

/// Every profile of an n-queue system, in lexicographic order.
pub fn all_profiles(n: usize) -> Vec<StrategyProfile> {
    let len = 2 * n;
    let count = n.pow(len as u32);
    (0..count)
        .map(|mut k| {
            let mut t = vec![0; len];
            for slot in t.iter_mut().rev() {
                *slot = k % n;
                k /= n;
            }
            StrategyProfile::new(t)
        })
        .collect()
}

/// Distinct stable profiles with their values, sorted by profile.
pub fn evaluate_all(template: &PollingModel, rate: f64) -> Result<Vec<Evaluated>> {
    let n = template.n();
    if n > MAX_ENUM_QUEUES {
        return Err(PollError::Unsupported(format!(
            "enumerating {n}^{} profiles is too many; at most {MAX_ENUM_QUEUES} queues",
            2 * n
        )));
    }
    let canon: Vec<Option<(CanonicalProfile, StrategyProfile)>> = all_profiles(n)
        .into_par_iter()
        .map(|p| -> Result<_> {
            let m = apply_strategy(template, &p, rate)?;
            Ok(canonical(&m, &p)?.map(|c| (c, p)))
        })
        .collect::<Result<_>>()?;
    let mut unique: Vec<(CanonicalProfile, StrategyProfile)> = canon.into_iter().flatten().collect();
    unique.sort_by(|a, b| a.0.cmp(&b.0));
    unique.dedup_by(|a, b| a.0 == b.0);
    unique
        .into_par_iter()
        .map(|(c, p)| {
            let value = mean_sojourn(&apply_strategy(template, &p, rate)?)?;
            Ok(Evaluated { profile: c, value, stable: value.is_finite() })
        })
        .collect()
}

fn better(a: &Evaluated, b: &Evaluated, objective: Objective) -> bool {
    let scale = a.value.abs().max(b.value.abs()).max(1.0);
    if (a.value - b.value).abs() <= TIE * scale {
        return a.profile < b.profile;
    }
    match objective {
        Objective::Minimize => a.value < b.value,
        Objective::Maximize => a.value > b.value,
    }
}

/// Best stable profile under the objective. Ties go to the lexicographically
/// smaller profile.
pub fn optimize(template: &PollingModel, rate: f64, objective: Objective) -> Result<Evaluated> {
    let all = evaluate_all(template, rate)?;
    pick(&all, objective)
}

fn pick(all: &[Evaluated], objective: Objective) -> Result<Evaluated> {
    let mut best: Option<&Evaluated> = None;
    for e in all.iter().filter(|e| e.stable) {
        if best.is_none_or(|b| better(e, b, objective)) {
            best = Some(e);
        }
    }
    best.cloned().ok_or_else(|| PollError::NotApplicable("no stable profile".into()))
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub parameter: f64,
    pub best: Evaluated,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Refined parameter values where the optimal profile changes, with the
    /// profiles on either side.
    pub thresholds: Vec<(f64, CanonicalProfile, CanonicalProfile)>,
    /// Profiles optimal somewhere, in order of appearance, with the range
    /// where each is optimal. Neighbouring optima that differ only where one
    /// has a wildcard count as the same strategy.
    pub regions: Vec<(CanonicalProfile, f64, f64)>,
    /// Region of every grid point.
    pub point_region: Vec<usize>,
}

/// Template with the mean service time of `queue` set to `mean`.
pub fn with_service_mean(template: &PollingModel, queue: usize, mean: f64) -> PollingModel {
    let mut m = template.clone();
    m.service[queue] = m.service[queue].with_mean(mean);
    m
}

/// Value of a canonical profile on a template.
pub fn profile_value(template: &PollingModel, profile: &CanonicalProfile, rate: f64) -> Result<f64> {
    mean_sojourn(&apply_strategy(template, &profile.representative(), rate)?)
}

/// Optimal profile at every grid value of the mean service time of `queue`,
/// with each change of optimum located by bisection to `refine_tol`.
pub fn sweep(
    template: &PollingModel,
    queue: usize,
    rate: f64,
    grid: &[f64],
    refine_tol: f64,
    objective: Objective,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(PollError::OutOfRange("empty grid".into()));
    }
    if queue >= template.n() {
        return Err(PollError::OutOfRange(format!("queue {} of {}", queue + 1, template.n())));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|&b| !(b >= 0.0)) {
        return Err(PollError::OutOfRange("grid must be increasing and non-negative".into()));
    }
    let at = |b: f64| with_service_mean(template, queue, b);
    let points: Vec<SweepPoint> = grid
        .iter()
        .map(|&b| Ok(SweepPoint { parameter: b, best: optimize(&at(b), rate, objective)? }))
        .collect::<Result<_>>()?;
    let mut thresholds = Vec::new();
    for w in points.windows(2) {
        let (l, r) = (&w[0], &w[1]);
        if l.best.profile.compatible(&r.best.profile) {
            continue;
        }
        let diff = |b: f64| -> Result<f64> {
            let a = profile_value(&at(b), &l.best.profile, rate)?;
            let c = profile_value(&at(b), &r.best.profile, rate)?;
            Ok(match objective {
                Objective::Minimize => a - c,
                Objective::Maximize => c - a,
            })
        };
        let (mut lo, mut hi) = (l.parameter, r.parameter);
        while hi - lo > refine_tol {
            let mid = 0.5 * (lo + hi);
            let d = diff(mid)?;
            // the left profile stays preferred while d <= 0
            if d > 0.0 || d.is_nan() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        thresholds.push((0.5 * (lo + hi), l.best.profile.clone(), r.best.profile.clone()));
    }
    let mut regions: Vec<(CanonicalProfile, f64, f64)> = Vec::new();
    let mut point_region = Vec::with_capacity(points.len());
    let mut cuts = thresholds.iter().map(|t| t.0);
    for (k, pt) in points.iter().enumerate() {
        let p = &pt.best.profile;
        match regions.last_mut() {
            Some(last) if k > 0 && points[k - 1].best.profile.compatible(p) => {
                last.0 = last.0.refine_with(p);
                last.2 = pt.parameter;
            }
            _ => {
                let start = match regions.last_mut() {
                    Some(last) => {
                        let cut = cuts.next().unwrap_or(pt.parameter);
                        last.2 = cut;
                        cut
                    }
                    None => pt.parameter,
                };
                regions.push((p.clone(), start, pt.parameter));
            }
        }
        point_region.push(regions.len() - 1);
    }
    Ok(SweepResult { points, thresholds, regions, point_region })
}

/// Stability of a profile on the template.
pub fn is_stable(template: &PollingModel, profile: &StrategyProfile, rate: f64) -> Result<bool> {
    Ok(effective_stability_report(&apply_strategy(template, profile, rate)?)?.stable)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA: f64 = 0.6;

    fn canon(s: &str) -> CanonicalProfile {
        CanonicalProfile::parse(s).unwrap()
    }

    #[test]
    fn strategy_five_model() {
        let t = routing_template(3, 1.0);
        let m = apply_strategy(&t, &StrategyProfile::parse("1,2,2,3,3,1", 0).unwrap(), LAMBDA).unwrap();
        assert_eq!(m.rate(0, PeriodId::visit(0)), LAMBDA);
        assert_eq!(m.rate(1, PeriodId::switchover(0)), LAMBDA);
        assert_eq!(m.rate(0, PeriodId::switchover(2)), LAMBDA);
        assert_eq!(m.rates.iter().flatten().filter(|&&r| r > 0.0).count(), 6);
        let single = apply_strategy(&routing_template(1, 1.0), &StrategyProfile::new(vec![0, 0]), 0.3).unwrap();
        assert_eq!(single.rates, vec![vec![0.3, 0.3]]);
    }

    #[test]
    fn never_joined_queues_become_wildcards() {
        let t = routing_template(3, 0.2);
        let p = StrategyProfile::parse("1,1,2,1,3,1", 0).unwrap();
        assert_eq!(canonicalize(&t, &p, LAMBDA).unwrap().unwrap(), canon("1,1,X,1,X,1"));
        assert_eq!(format!("{}", canon("x,2,2,3,3,2")), "(X,2,2,3,3,2)");
    }

    #[test]
    fn wildcards_are_compatible() {
        let a = canon("X,1,X,1,X,1");
        let b = canon("1,1,X,1,X,1");
        assert!(a.compatible(&b) && b.compatible(&a));
        assert!(!b.compatible(&canon("1,2,1,1,X,1")));
        assert_eq!(a.refine_with(&b), b);
    }

    #[test]
    fn enumeration_is_complete() {
        let all = all_profiles(3);
        assert_eq!(all.len(), 729);
        assert_eq!(all[0].target, vec![0; 6]);
        assert_eq!(all[728].target, vec![2; 6]);
    }

    #[test]
    fn symmetric_optimum_is_strategy_five() {
        let best = optimize(&routing_template(3, 1.0), LAMBDA, Objective::Minimize).unwrap();
        assert_eq!(best.profile, canon("1,2,2,3,3,1"));
        let best = optimize(&routing_template(3, 0.2), LAMBDA, Objective::Minimize).unwrap();
        assert_eq!(best.profile, canon("1,1,X,1,X,1"));
    }

    #[test]
    fn stupid_customers() {
        let worst = optimize(&routing_template(3, 0.0), LAMBDA, Objective::Maximize).unwrap();
        assert!((worst.value - 7.48).abs() < 0.01, "{worst:?}");
        let worst = optimize(&routing_template(3, 1.0), LAMBDA, Objective::Maximize).unwrap();
        assert!((worst.value - 8.5).abs() < 0.01, "{worst:?}");
        let worst = optimize(&routing_template(3, 1.8), LAMBDA, Objective::Maximize).unwrap();
        assert_eq!(worst.profile, canon("3,1,X,1,1,1"));
    }

    #[test]
    fn optimum_beats_every_stable_profile() {
        let all = evaluate_all(&routing_template(3, 0.7), LAMBDA).unwrap();
        let best = pick(&all, Objective::Minimize).unwrap();
        assert!(all.iter().filter(|e| e.stable).all(|e| best.value <= e.value));
    }

    #[test]
    fn single_point_sweep() {
        let r = sweep(&routing_template(3, 1.0), 0, LAMBDA, &[1.0], 0.005, Objective::Minimize).unwrap();
        assert!(r.thresholds.is_empty());
        assert_eq!(r.regions.len(), 1);
        assert_eq!(r.regions[0].0, canon("1,2,2,3,3,1"));
    }

    #[test]
    fn strategy_stability() {
        let t = |b| routing_template(3, b);
        for s in ["1,1,X,1,X,1", "1,2,1,1,X,1", "1,2,2,1,X,1", "1,2,2,3,1,1", "1,2,2,3,3,1"] {
            let p = canon(s).representative();
            assert!(is_stable(&t(1.6), &p, LAMBDA).unwrap(), "{s}");
            assert!(!is_stable(&t(1.7), &p, LAMBDA).unwrap(), "{s}");
        }
        for s in ["2,2,2,3,3,1", "X,2,2,3,3,2"] {
            let p = canon(s).representative();
            for b in [0.0, 2.0, 10.0] {
                assert!(is_stable(&t(b), &p, LAMBDA).unwrap(), "{s} {b}");
            }
        }
    }
}
