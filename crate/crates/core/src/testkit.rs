//! Reference models and a seeded random model generator, shared by unit
//! tests, integration tests and benchmarks.

use crate::model::{Discipline, Distribution, PeriodId, PollingModel};
use crate::stability::{load_matrix, spectral_radius};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two exhaustive queues, exponential(1) everything, rates 1/2 except that
/// nobody joins queue 1 while queue 2 is served.
pub fn example2() -> PollingModel {
    let mut m = PollingModel::uniform(
        2,
        Discipline::Exhaustive,
        Distribution::exp_mean(1.0),
        Distribution::exp_mean(1.0),
        0.5,
    );
    m.set_rate(0, PeriodId::visit(1), 0.0);
    m
}

/// Three exhaustive queues with exponential switch-overs of mean 1, service
/// mean `b1` at queue 1 and 1 elsewhere, no arrivals (rates come from a
/// routing profile).
pub fn routing_template(b1: f64) -> PollingModel {
    let mut m = PollingModel::uniform(
        3,
        Discipline::Exhaustive,
        Distribution::exp_mean(1.0),
        Distribution::exp_mean(1.0),
        0.0,
    );
    m.service[0] = Distribution::exp_mean(b1);
    m
}

fn random_distribution(rng: &mut ChaCha8Rng, mean: f64) -> Distribution {
    match rng.random_range(0..4) {
        0 => Distribution::exp_mean(mean),
        1 => Distribution::Deterministic { value: mean },
        2 => {
            let shape = rng.random_range(2..5);
            Distribution::Erlang { shape, rate: shape as f64 / mean }
        }
        _ => {
            // balanced means, squared coefficient of variation above 1
            let p: f64 = rng.random_range(0.15..0.45);
            Distribution::HyperExp2 {
                p,
                rate1: 2.0 * p / mean,
                rate2: 2.0 * (1.0 - p) / mean,
            }
        }
    }
}

/// Random stable model whose visit-period load matrix has spectral radius
/// `load`. With `zeros`, about a third of the rate entries are set to 0.
/// Disciplines are mixed.
pub fn random_model(seed: u64, n: usize, load: f64, zeros: bool) -> PollingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discipline = (0..n)
        .map(|_| if rng.random_bool(0.5) { Discipline::Exhaustive } else { Discipline::Gated })
        .collect();
    let service = (0..n)
        .map(|_| {
            let mean = rng.random_range(0.3..1.5);
            random_distribution(&mut rng, mean)
        })
        .collect();
    let switchover = (0..n)
        .map(|_| {
            let mean = rng.random_range(0.2..1.5);
            random_distribution(&mut rng, mean)
        })
        .collect();
    let rates = (0..n)
        .map(|_| {
            (0..2 * n)
                .map(|_| {
                    if zeros && rng.random_bool(0.33) {
                        0.0
                    } else {
                        rng.random_range(0.05..1.0)
                    }
                })
                .collect()
        })
        .collect();
    let mut m = PollingModel { discipline, service, switchover, rates };
    if m.rates.iter().flatten().all(|&r| r == 0.0) {
        m.rates[0][1] = 0.5;
    }
    // a nilpotent load matrix has radius 0; the largest entry keeps the
    // scale sane
    let r = load_matrix(&m);
    let radius = spectral_radius(&r).max(r.amax());
    if radius > 0.0 {
        let scale = load / radius;
        for row in m.rates.iter_mut() {
            for r in row.iter_mut() {
                *r *= scale;
            }
        }
    }
    m
}

/// Random model whose rates only change between switch-overs: every queue
/// sees one fixed rate in all visit periods.
pub fn random_visit_constant_model(seed: u64, n: usize, load: f64) -> PollingModel {
    let mut m = random_model(seed, n, load, false);
    let np = 2 * n;
    for i in 0..n {
        let v = m.rates[i][0];
        for p in (0..np).step_by(2) {
            m.rates[i][p] = v;
        }
    }
    let r = load_matrix(&m);
    let radius = spectral_radius(&r).max(r.amax());
    for row in m.rates.iter_mut() {
        for r in row.iter_mut() {
            *r *= load / radius;
        }
    }
    m
}
