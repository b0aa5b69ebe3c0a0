//! Ergodicity check through the dominant eigenvalue of the visit-period load
//! matrix.

use crate::error::{PollError, Result};
use crate::model::{validate, PeriodId, PollingModel};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    /// Dominant eigenvalue of the reduced `R - I`.
    pub margin: f64,
    /// Queues kept after deleting never-joined ones (0-based).
    pub retained_queues: Vec<usize>,
    /// Retained queues whose mean visit time solves to zero. The ergodicity
    /// condition assumes positive visit times, so these are reported rather
    /// than interpreted.
    pub zero_visit_queues: Vec<usize>,
}

impl StabilityReport {
    pub fn is_supported(&self) -> bool {
        self.zero_visit_queues.is_empty()
    }
}

const POWER_TOL: f64 = 1e-12;
const POWER_CAP: usize = 100_000;

/// R[i][j] = rate at queue i during V_j times mean service at queue i.
pub fn load_matrix(model: &PollingModel) -> DMatrix<f64> {
    let n = model.n();
    DMatrix::from_fn(n, n, |i, j| model.rate(i, PeriodId::visit(j)) * model.mean_service(i))
}

pub fn stability_report(model: &PollingModel) -> Result<StabilityReport> {
    let v = validate(model);
    if !v.is_empty() {
        return Err(PollError::InvalidModel(v.join("; ")));
    }
    let n = model.n();
    let retained: Vec<usize> = (0..n)
        .filter(|&i| model.rates[i].iter().any(|&r| r > 0.0))
        .collect();
    let margin = if retained.is_empty() {
        -1.0
    } else {
        let r = load_matrix(model);
        let k = retained.len();
        let reduced = DMatrix::from_fn(k, k, |a, b| r[(retained[a], retained[b])]);
        spectral_radius(&reduced) - 1.0
    };
    let zero_visit_queues = match crate::mva::mean_visit_times_unchecked(model) {
        Ok(v) => {
            let scale = v.iter().fold(model.total_switchover(), |a, &b| a.max(b.abs()));
            retained
                .iter()
                .copied()
                .filter(|&i| v[i].abs() <= 1e-12 * scale)
                .collect()
        }
        Err(_) => Vec::new(),
    };
    Ok(StabilityReport {
        stable: margin < 0.0,
        margin,
        retained_queues: retained,
        zero_visit_queues,
    })
}

/// Copy of the model with rates zeroed in every visit period whose mean
/// length is zero. Those rates never produce arrivals, so dropping them lets
/// the never-joined deletion rule see queues that are fed only there.
pub fn effective_model(model: &PollingModel, mean_visit: &[f64]) -> PollingModel {
    let mut m = model.clone();
    let scale = mean_visit
        .iter()
        .fold(model.total_switchover(), |a, &b| a.max(b.abs()));
    for (j, &v) in mean_visit.iter().enumerate() {
        if v.abs() <= 1e-12 * scale {
            for row in m.rates.iter_mut() {
                row[PeriodId::visit(j).index()] = 0.0;
            }
        }
    }
    m
}

/// Stability of the model after removing zero-length visit periods.
pub fn effective_stability_report(model: &PollingModel) -> Result<StabilityReport> {
    match crate::mva::mean_visit_times_unchecked(model) {
        Ok(v) => stability_report(&effective_model(model, &v)),
        // no finite mean visit times at all: saturated or worse
        Err(PollError::Singular(_)) => {
            let mut rep = stability_report(model)?;
            rep.stable = false;
            rep.margin = rep.margin.max(0.0);
            Ok(rep)
        }
        Err(e) => Err(e),
    }
}

/// Spectral radius of a non-negative square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    assert_eq!(k, m.ncols(), "spectral radius needs a square matrix");
    if k == 0 {
        return 0.0;
    }
    if m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    if is_irreducible(m) {
        if let Some(r) = power_iteration(m) {
            return r;
        }
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

// Shifting by the identity keeps the Perron root dominant and makes an
// irreducible matrix primitive, so the iteration cannot oscillate.
fn power_iteration(m: &DMatrix<f64>) -> Option<f64> {
    let k = m.nrows();
    let shifted = m + DMatrix::identity(k, k);
    let mut x = nalgebra::DVector::from_element(k, 1.0 / k as f64);
    let mut lambda = 0.0;
    for _ in 0..POWER_CAP {
        let y = &shifted * &x;
        let norm = y.iter().map(|v| v.abs()).sum::<f64>();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        let next = norm / x.iter().map(|v| v.abs()).sum::<f64>();
        x = y / norm;
        if (next - lambda).abs() < POWER_TOL * next.max(1.0) {
            return Some(next - 1.0);
        }
        lambda = next;
    }
    None
}

fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let k = m.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..k {
                let w = if forward { m[(a, b)] } else { m[(b, a)] };
                if w > 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(true) && reach(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Discipline, Distribution};
    use proptest::prelude::*;

    fn strategy_model(profile: [usize; 6], b1: f64) -> PollingModel {
        let mut m = PollingModel::uniform(
            3,
            Discipline::Exhaustive,
            Distribution::exp_mean(1.0),
            Distribution::exp_mean(1.0),
            0.0,
        );
        m.service[0] = Distribution::exp_mean(b1);
        for (p, &t) in profile.iter().enumerate() {
            m.rates[t][p] = 0.6;
        }
        m
    }

    #[test]
    fn strategy_five_margin_is_diagonal_maximum() {
        for b1 in [0.5, 1.0, 1.5, 5.0 / 3.0, 1.8] {
            let rep = stability_report(&strategy_model([0, 1, 1, 2, 2, 0], b1)).unwrap();
            let want = (0.6 * b1 - 1.0).max(0.6 - 1.0);
            assert!((rep.margin - want).abs() < 1e-12, "b1={b1}");
            assert_eq!(rep.stable, b1 < 5.0 / 3.0 - 1e-12);
        }
    }

    #[test]
    fn queue_one_deleted_when_never_joined() {
        // Strategy VII: (X,2,2,3,3,2)
        for b1 in [0.0, 2.0, 10.0] {
            let rep = stability_report(&strategy_model([1, 1, 1, 2, 2, 1], b1)).unwrap();
            assert_eq!(rep.retained_queues, vec![1, 2]);
            assert!(rep.stable);
        }
    }

    #[test]
    fn empty_system_is_stable() {
        let m = PollingModel::uniform(2, Discipline::Gated, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.0);
        let rep = stability_report(&m).unwrap();
        assert!(rep.stable);
        assert_eq!(rep.margin, -1.0);
        assert!(rep.retained_queues.is_empty());
    }

    #[test]
    fn periodic_matrix_handled() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 2.0, 0.0]);
        assert!((spectral_radius(&m) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_visit_queue_is_flagged_and_effective_model_drops_it() {
        // queue 1 fed only during its own (empty) visit
        let m = strategy_model([0, 1, 1, 2, 2, 1], 2.0);
        let rep = stability_report(&m).unwrap();
        assert!(!rep.stable);
        assert_eq!(rep.zero_visit_queues, vec![0]);
        let eff = effective_stability_report(&m).unwrap();
        assert!(eff.stable);
        assert_eq!(eff.retained_queues, vec![1, 2]);
    }

    proptest! {
        #[test]
        fn constant_rates_reduce_to_total_load(rates in proptest::collection::vec(0.0f64..0.5, 1..5), means in proptest::collection::vec(0.1f64..2.0, 5)) {
            let n = rates.len();
            let mut m = PollingModel::uniform(n, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.0);
            for i in 0..n {
                m.service[i] = Distribution::exp_mean(means[i]);
                m.rates[i] = vec![rates[i]; 2 * n];
            }
            let rho: f64 = (0..n).map(|i| rates[i] * means[i]).sum();
            let rep = stability_report(&m).unwrap();
            if rho > 0.0 {
                prop_assert!((rep.margin - (rho - 1.0)).abs() < 1e-9);
            }
        }

        #[test]
        fn switchover_rates_do_not_matter(a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let mut m = strategy_model([0, 1, 1, 2, 2, 0], 1.2);
            let base = stability_report(&m).unwrap().margin;
            m.rates[0][1] = a;
            m.rates[2][3] = b;
            prop_assert!((stability_report(&m).unwrap().margin - base).abs() < 1e-12);
        }

        #[test]
        fn margin_is_lipschitz_in_rates(eps in 0.0f64..1e-3) {
            let mut m = strategy_model([0, 1, 2, 2, 1, 0], 1.3);
            m.rates[1][0] = 0.2;
            m.rates[0][2] = 0.3;
            let base = stability_report(&m).unwrap().margin;
            m.rates[0][2] += eps;
            let moved = stability_report(&m).unwrap().margin;
            prop_assert!((moved - base).abs() <= 10.0 * eps + 1e-10);
        }
    }
}
