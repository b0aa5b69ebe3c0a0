//! Pseudo-conservation law: the weighted sum of mean waiting times written
//! in terms of mean work at switch-over epochs, checked against MVA.

use crate::error::{PollError, Result};
use crate::model::{Discipline, PeriodId, PollingModel};
use crate::mva::MvaSolution;
use std::fmt;

const RATE_EQ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PclCase {
    /// Each queue sees one arrival rate in every visit period.
    Case1,
    /// Total visit-period rate is constant and all service times are equal
    /// in law.
    Case2,
    NotApplicable,
}

impl fmt::Display for PclCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PclCase::Case1 => "case1",
            PclCase::Case2 => "case2",
            PclCase::NotApplicable => "not-applicable",
        })
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSummary {
    pub case_tag: PclCase,
    /// Mean work in the system at a random time in each switch-over.
    pub y_switch: Vec<f64>,
    /// Same, averaged over all switch-over time.
    pub y_switch_mix: f64,
    /// Mean work at a random time in a visit period, from the ancestor
    /// decomposition.
    pub y_visit: f64,
    /// Probability that the ancestor of the customer in service is of type i.
    pub ancestor_prob: Vec<f64>,
    /// Work arrival rate during visit periods.
    pub rho_v: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Short form of the right-hand side, available when the total arrival
    /// rate is the same in every period.
    pub rhs_simplified: Option<f64>,
    pub gap: f64,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATE_EQ * a.abs().max(b.abs()).max(1.0)
}

pub fn pcl_case(model: &PollingModel) -> PclCase {
    let n = model.n();
    let visit_rate = |i: usize, j: usize| model.rate(i, PeriodId::visit(j));
    if (0..n).all(|i| (0..n).all(|j| close(visit_rate(i, j), visit_rate(i, 0)))) {
        return PclCase::Case1;
    }
    let total = |j: usize| (0..n).map(|i| visit_rate(i, j)).sum::<f64>();
    let same_b = model.service.iter().all(|b| b.same_as(&model.service[0]));
    if same_b && (0..n).all(|j| close(total(j), total(0))) {
        return PclCase::Case2;
    }
    PclCase::NotApplicable
}

/// Mean work in the system at a random time during S_i.
pub fn work_at_switchover(model: &PollingModel, mva: &MvaSolution, i: usize) -> f64 {
    let n = model.n();
    let b = |j: usize| model.mean_service(j);
    let z = |j: usize| match model.discipline[j] {
        Discipline::Exhaustive => 0.0,
        Discipline::Gated => model.rate(j, PeriodId::visit(j)) * b(j) * mva.mean_visit[j],
    };
    let s = PeriodId::switchover(i);
    let residual = model.switchover[i].residual_mean();
    let mut y: f64 = (0..n).map(|j| model.rate(j, s) * b(j) * residual + z(j)).sum();
    // work gathered since each other queue was last left
    for jj in (i + 1)..(i + n) {
        let j = jj % n;
        for kk in jj..(i + n) {
            let k = kk % n;
            let k1 = (k + 1) % n;
            y += model.rate(j, PeriodId::switchover(k)) * b(j) * model.mean_switchover(k)
                + model.rate(j, PeriodId::visit(k1)) * b(j) * mva.mean_visit[k1];
        }
    }
    y
}

/// Share of customers starting an ancestral line (arrivals during
/// switch-overs), weighted by their service.
pub fn ancestor_probabilities(model: &PollingModel) -> Result<Vec<f64>> {
    let n = model.n();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| model.rate(i, PeriodId::switchover(j)) * model.mean_switchover(j))
                .sum::<f64>()
                * model.mean_service(i)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(PollError::NotApplicable(
            "no work arrives during switch-overs, so there are no ancestors".into(),
        ));
    }
    Ok(raw.iter().map(|r| r / total).collect())
}

/// Rate, mean and residual mean of the work arriving during visit periods.
fn visit_work(model: &PollingModel, case: PclCase) -> (f64, f64) {
    let n = model.n();
    match case {
        PclCase::Case1 => {
            let lam: Vec<f64> = (0..n).map(|i| model.rate(i, PeriodId::visit(0))).collect();
            let total: f64 = lam.iter().sum();
            if total == 0.0 {
                return (0.0, 0.0);
            }
            let m1: f64 = (0..n).map(|i| lam[i] / total * model.service[i].moment(1)).sum();
            let m2: f64 = (0..n).map(|i| lam[i] / total * model.service[i].moment(2)).sum();
            let residual = if m1 > 0.0 { m2 / (2.0 * m1) } else { 0.0 };
            (total * m1, residual)
        }
        _ => {
            let total: f64 = (0..n).map(|i| model.rate(i, PeriodId::visit(0))).sum();
            (total * model.mean_service(0), model.service[0].residual_mean())
        }
    }
}

pub fn pcl_verify(model: &PollingModel, mva: &MvaSolution) -> Result<WorkloadSummary> {
    let case = pcl_case(model);
    if case == PclCase::NotApplicable {
        return Err(PollError::NotApplicable(
            "visit-period work arrivals vary between visits; no conservation law applies".into(),
        ));
    }
    let n = model.n();
    let p = ancestor_probabilities(model)?;
    let (rho_v, resid_v) = visit_work(model, case);
    if rho_v >= 1.0 {
        return Err(PollError::Unstable { margin: rho_v - 1.0 });
    }
    let y_switch: Vec<f64> = (0..n).map(|i| work_at_switchover(model, mva, i)).collect();
    let es = model.total_switchover();
    let y_switch_mix: f64 = (0..n).map(|i| model.mean_switchover(i) / es * y_switch[i]).sum();
    let rho_bar = mva.rho_bar;
    let resid_b: Vec<f64> = model.service.iter().map(|b| b.residual_mean()).collect();
    let mut y_visit = 0.0;
    for i in 0..n {
        if p[i] == 0.0 {
            continue;
        }
        let w: Vec<f64> = (0..n)
            .map(|j| model.rate(i, PeriodId::switchover(j)) * model.mean_switchover(j))
            .collect();
        let wsum: f64 = w.iter().sum();
        let seen: f64 = (0..n).map(|j| w[j] / wsum * y_switch[j]).sum();
        y_visit += p[i] * (seen + resid_b[i] + rho_v / (1.0 - rho_v) * resid_v);
    }
    let lhs: f64 = (0..n).map(|i| mva.eff_load[i] * mva.wait[i]).sum();
    let rhs = (1.0 - rho_bar) * y_switch_mix
        - (0..n).map(|i| mva.eff_load[i] * resid_b[i]).sum::<f64>()
        + rho_bar * y_visit;
    let rhs_simplified = if case == PclCase::Case2 && constant_total_rate(model) {
        Some(y_switch_mix + rho_v * rho_v / (1.0 - rho_v) * resid_v)
    } else {
        None
    };
    let gap = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
    Ok(WorkloadSummary {
        case_tag: case,
        y_switch,
        y_switch_mix,
        y_visit,
        ancestor_prob: p,
        rho_v,
        lhs,
        rhs,
        rhs_simplified,
        gap,
    })
}

/// The same total arrival rate in every period.
pub fn constant_total_rate(model: &PollingModel) -> bool {
    let total = |p: usize| (0..model.n()).map(|i| model.rate_at(i, p)).sum::<f64>();
    (0..model.periods()).all(|p| close(total(p), total(0)))
}

/// Mean total work from the per-queue means.
pub fn mean_work(model: &PollingModel, mva: &MvaSolution) -> f64 {
    (0..model.n())
        .map(|i| mva.queue_len[i] * model.mean_service(i) + mva.eff_load[i] * model.service[i].residual_mean())
        .sum()
}

/// Classical conservation law for constant rates, as the right-hand side
/// of sum rho_i E[W_i].
pub fn classical_pcl(model: &PollingModel) -> Result<f64> {
    if !model.has_constant_rates() {
        return Err(PollError::NotApplicable("classical law needs constant rates".into()));
    }
    let n = model.n();
    let rho_i: Vec<f64> = (0..n).map(|i| model.rates[i][0] * model.mean_service(i)).collect();
    let rho: f64 = rho_i.iter().sum();
    if rho >= 1.0 {
        return Err(PollError::Unstable { margin: rho - 1.0 });
    }
    let es = model.total_switchover();
    let var: f64 = model.switchover.iter().map(|s| s.moment(2) - s.mean().powi(2)).sum();
    let resid_s = (var + es * es) / (2.0 * es);
    let mut v = rho * (0..n).map(|i| rho_i[i] * model.service[i].residual_mean()).sum::<f64>() / (1.0 - rho)
        + rho * resid_s
        + es / (2.0 * (1.0 - rho)) * (rho * rho - rho_i.iter().map(|r| r * r).sum::<f64>());
    for i in 0..n {
        if model.discipline[i] == Discipline::Gated {
            v += rho_i[i] * rho_i[i] * es / (1.0 - rho);
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Distribution;
    use crate::mva::solve_mva;
    use crate::testkit::{example2, random_model};
    use proptest::prelude::*;

    fn exp_model(n: usize, disc: Discipline, rate: f64) -> PollingModel {
        PollingModel::uniform(n, disc, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), rate)
    }

    #[test]
    fn classification() {
        assert_eq!(pcl_case(&exp_model(2, Discipline::Exhaustive, 0.3)), PclCase::Case1);
        assert_eq!(pcl_case(&example2()), PclCase::NotApplicable);
        let mut m = exp_model(2, Discipline::Exhaustive, 0.0);
        m.set_rate(0, PeriodId::visit(0), 0.4);
        m.set_rate(1, PeriodId::visit(1), 0.4);
        assert_eq!(pcl_case(&m), PclCase::Case2);
        m.service[1] = Distribution::Deterministic { value: 1.0 };
        assert_eq!(pcl_case(&m), PclCase::NotApplicable);
    }

    #[test]
    fn single_queue_switch_work() {
        let m = exp_model(1, Discipline::Exhaustive, 0.5);
        let sol = solve_mva(&m).unwrap();
        assert!((work_at_switchover(&m, &sol, 0) - 0.5).abs() < 1e-12);
        let none = exp_model(3, Discipline::Exhaustive, 0.0);
        let sol = solve_mva(&none).unwrap();
        assert_eq!(work_at_switchover(&none, &sol, 1), 0.0);
    }

    #[test]
    fn ancestors() {
        let mut m = exp_model(3, Discipline::Gated, 0.0);
        for (i, r) in [0.1, 0.2, 0.3].iter().enumerate() {
            m.rates[i] = vec![*r; 6];
        }
        let p = ancestor_probabilities(&m).unwrap();
        for (i, r) in [0.1, 0.2, 0.3].iter().enumerate() {
            assert!((p[i] - r / 0.6).abs() < 1e-15);
        }
        assert_eq!(ancestor_probabilities(&exp_model(1, Discipline::Gated, 0.2)).unwrap(), vec![1.0]);
        let p = ancestor_probabilities(&example2()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn refuses_inapplicable_models() {
        let m = example2();
        let sol = solve_mva(&m).unwrap();
        assert!(matches!(pcl_verify(&m, &sol), Err(PollError::NotApplicable(_))));
    }

    #[test]
    fn classical_reduction() {
        for disc in [Discipline::Exhaustive, Discipline::Gated] {
            let m = exp_model(3, disc, 0.2);
            let sol = solve_mva(&m).unwrap();
            let s = pcl_verify(&m, &sol).unwrap();
            let c = classical_pcl(&m).unwrap();
            assert!((s.rhs - c).abs() < 1e-10 * c, "{disc}: {} {c}", s.rhs);
            assert!(s.gap < 1e-10);
        }
    }

    #[test]
    fn case2_short_form() {
        // one stream of rate 0.6 routed by server position
        let mut m = exp_model(3, Discipline::Exhaustive, 0.0);
        for (p, t) in [0usize, 1, 1, 2, 2, 0].into_iter().enumerate() {
            m.rates[t][p] = 0.6;
        }
        let sol = solve_mva(&m).unwrap();
        let s = pcl_verify(&m, &sol).unwrap();
        assert_eq!(s.case_tag, PclCase::Case2);
        assert!(s.gap < 1e-9, "gap {}", s.gap);
        let short = s.rhs_simplified.unwrap();
        assert!((short - s.rhs).abs() < 1e-10 * s.rhs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn identity_and_work_balance(seed in 0u64..10_000, n in 1usize..5, case2 in any::<bool>()) {
            let mut m = random_model(seed, n, 0.6, false);
            if case2 {
                let b = m.service[0].clone();
                m.service = vec![b; n];
                // rescale visit columns to a common total
                for j in 0..n {
                    let v = PeriodId::visit(j).index();
                    let tot: f64 = (0..n).map(|i| m.rates[i][v]).sum();
                    for i in 0..n {
                        m.rates[i][v] *= 0.5 / m.mean_service(0) / tot;
                    }
                }
            } else {
                for i in 0..n {
                    let r = m.rates[i][0];
                    for j in 0..n {
                        m.rates[i][2 * j] = r;
                    }
                }
            }
            prop_assume!(crate::stability::stability_report(&m).unwrap().stable);
            let sol = solve_mva(&m).unwrap();
            let s = pcl_verify(&m, &sol).unwrap();
            prop_assert!(s.gap < 1e-8, "gap {}", s.gap);
            let balance = sol.rho_bar * s.y_visit + (1.0 - sol.rho_bar) * s.y_switch_mix;
            let work = mean_work(&m, &sol);
            prop_assert!((balance - work).abs() <= 1e-8 * work.max(1e-12));
            prop_assert!((s.ancestor_prob.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
