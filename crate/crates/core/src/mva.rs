//! Mean value analysis: mean visit and cycle times, then one linear system
//! for waiting times, queue lengths and conditional period durations.

use crate::error::{PollError, Result};
use crate::model::{validate, Discipline, PeriodId, PollingModel};
use crate::numeric::lstsq;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct CycleMeans {
    pub mean_visit: Vec<f64>,
    pub mean_cycle: f64,
    /// Fraction of time in each period, indexed by cycle position.
    pub q: Vec<f64>,
    pub eff_rate: Vec<f64>,
    pub eff_load: Vec<f64>,
    pub rho_bar: f64,
}

#[derive(Debug, Clone)]
pub struct MvaSolution {
    pub mean_visit: Vec<f64>,
    pub mean_cycle: f64,
    pub q: Vec<f64>,
    pub eff_rate: Vec<f64>,
    pub eff_load: Vec<f64>,
    pub rho_bar: f64,
    pub wait: Vec<f64>,
    /// Mean number waiting, customer in service excluded.
    pub queue_len: Vec<f64>,
    /// `[i][p]`: mean number of queue-i customers waiting during period p.
    pub cond_queue_len: Vec<Vec<f64>>,
    /// `[a][b]`: mean length of the next period a seen from inside period b.
    pub dur_forward: Vec<Vec<f64>>,
    /// `[a][b]`: mean length of the previous period a seen from inside b.
    pub dur_backward: Vec<Vec<f64>>,
    pub unknowns: usize,
    pub equations: usize,
    pub rank: usize,
    pub condition: f64,
}

impl MvaSolution {
    /// Mean number of type-i customers present, the one in service included.
    pub fn queue_len_with_service(&self, i: usize) -> f64 {
        self.queue_len[i] + self.eff_load[i]
    }
}

/// Mean visit times without a stability check (used by the stability module
/// itself). Solved in the least-squares sense so that queues fed only during
/// their own empty visit come out as exactly zero.
pub(crate) fn mean_visit_times_unchecked(model: &PollingModel) -> Result<Vec<f64>> {
    let n = model.n();
    // E[V_i] = E[B_i] * (all type-i arrivals over one cycle)
    let a = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { 1.0 } else { 0.0 };
        d - model.mean_service(i) * model.rate(i, PeriodId::visit(j))
    });
    let b = DVector::from_fn(n, |i, _| {
        model.mean_service(i)
            * (0..n)
                .map(|j| model.rate(i, PeriodId::switchover(j)) * model.mean_switchover(j))
                .sum::<f64>()
    });
    let (x, rank, _) = lstsq(a.clone(), b.clone())?;
    let resid = (&a * &x - &b).amax();
    if rank < n && resid > 1e-9 * b.amax().max(1.0) {
        return Err(PollError::Singular(format!(
            "mean visit system has rank {rank} of {n}, residual {resid:.3e}"
        )));
    }
    Ok(x.iter().copied().collect())
}

pub fn mean_visit_times(model: &PollingModel) -> Result<Vec<f64>> {
    check_stable(model)?;
    mean_visit_times_unchecked(model)
}

fn check_stable(model: &PollingModel) -> Result<()> {
    let v = validate(model);
    if !v.is_empty() {
        return Err(PollError::InvalidModel(v.join("; ")));
    }
    let rep = crate::stability::effective_stability_report(model)?;
    if !rep.stable {
        return Err(PollError::Unstable { margin: rep.margin });
    }
    Ok(())
}

pub fn mean_cycle_time(model: &PollingModel) -> Result<CycleMeans> {
    let mean_visit = mean_visit_times(model)?;
    Ok(cycle_means(model, mean_visit))
}

fn cycle_means(model: &PollingModel, mean_visit: Vec<f64>) -> CycleMeans {
    let n = model.n();
    let mean_cycle: f64 = (0..n).map(|i| mean_visit[i] + model.mean_switchover(i)).sum();
    let len = period_means(model, &mean_visit);
    let q: Vec<f64> = len.iter().map(|&l| l / mean_cycle).collect();
    let eff_rate: Vec<f64> = (0..n)
        .map(|i| (0..2 * n).map(|p| model.rate_at(i, p) * q[p]).sum())
        .collect();
    let eff_load: Vec<f64> = (0..n).map(|i| eff_rate[i] * model.mean_service(i)).collect();
    let rho_bar = eff_load.iter().sum();
    CycleMeans { mean_visit, mean_cycle, q, eff_rate, eff_load, rho_bar }
}

fn period_means(model: &PollingModel, mean_visit: &[f64]) -> Vec<f64> {
    (0..model.periods())
        .map(|p| {
            let id = PeriodId::from_index(p, model.n());
            if id.is_visit() {
                mean_visit[id.queue]
            } else {
                model.mean_switchover(id.queue)
            }
        })
        .collect()
}

/// Unknown vector layout.
struct Layout {
    n: usize,
}

impl Layout {
    fn np(&self) -> usize {
        2 * self.n
    }
    fn w(&self, i: usize) -> usize {
        i
    }
    fn lq(&self, i: usize) -> usize {
        self.n + i
    }
    fn lqc(&self, i: usize, p: usize) -> usize {
        2 * self.n + i * self.np() + p % self.np()
    }
    fn fv(&self, k: usize, p: usize) -> usize {
        2 * self.n + self.n * self.np() + k * self.np() + p % self.np()
    }
    fn bv(&self, k: usize, p: usize) -> usize {
        2 * self.n + 2 * self.n * self.np() + k * self.np() + p % self.np()
    }
    // previous S_k seen from inside V_j
    fn bs(&self, k: usize, j: usize) -> usize {
        2 * self.n + 3 * self.n * self.np() + k * self.n + j
    }
    fn total(&self) -> usize {
        2 * self.n + 7 * self.n * self.n
    }
}

/// Sparse linear expression `sum coef * x[var] + constant`.
#[derive(Default, Clone)]
struct Expr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Expr {
    fn var(v: usize, c: f64) -> Self {
        Expr { terms: vec![(v, c)], constant: 0.0 }
    }
    fn konst(c: f64) -> Self {
        Expr { terms: vec![], constant: c }
    }
    fn add(&mut self, other: &Expr, scale: f64) {
        for &(v, c) in &other.terms {
            self.terms.push((v, c * scale));
        }
        self.constant += other.constant * scale;
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

/// Period bookkeeping shared by assembly and post-solve checks.
struct Durations<'a> {
    model: &'a PollingModel,
    lay: Layout,
    len: Vec<f64>,
}

impl Durations<'_> {
    fn id(&self, p: usize) -> PeriodId {
        PeriodId::from_index(p, self.model.n())
    }

    /// Remaining length of p observed inside p.
    fn residual(&self, p: usize) -> Expr {
        let id = self.id(p);
        if id.is_visit() {
            Expr::var(self.lay.fv(id.queue, p), 1.0)
        } else {
            Expr::konst(self.model.switchover[id.queue].residual_mean())
        }
    }

    /// Elapsed length of p observed inside p.
    fn age(&self, p: usize) -> Expr {
        let id = self.id(p);
        if id.is_visit() {
            Expr::var(self.lay.bv(id.queue, p), 1.0)
        } else {
            Expr::konst(self.model.switchover[id.queue].residual_mean())
        }
    }

    /// Next occurrence of `target` seen from inside `obs` (different periods).
    fn forward(&self, target: usize, obs: usize) -> Expr {
        let id = self.id(target);
        if id.is_visit() {
            Expr::var(self.lay.fv(id.queue, obs), 1.0)
        } else {
            Expr::konst(self.model.mean_switchover(id.queue))
        }
    }

    /// Previous occurrence of `target` seen from inside `obs`.
    fn backward(&self, target: usize, obs: usize) -> Expr {
        let t = self.id(target);
        let o = self.id(obs);
        match (t.is_visit(), o.is_visit()) {
            (true, _) => Expr::var(self.lay.bv(t.queue, obs), 1.0),
            (false, true) => Expr::var(self.lay.bs(t.queue, o.queue), 1.0),
            (false, false) => Expr::konst(self.model.mean_switchover(t.queue)),
        }
    }

    /// Forward and backward expressions for the mean residual length of the
    /// interval of `length` periods starting at cycle position `start`, both
    /// multiplied by the interval's mean length.
    fn interval_forms(&self, start: usize, length: usize) -> (Expr, Expr) {
        let np = self.lay.np();
        let mut fwd = Expr::default();
        let mut bwd = Expr::default();
        for m in 0..length {
            let p = start + m;
            let w = self.len[p % np];
            if w == 0.0 {
                continue;
            }
            let mut f = self.residual(p);
            for m2 in m + 1..length {
                f.add(&self.forward(start + m2, p), 1.0);
            }
            fwd.add(&f, w);
            let mut b = self.age(p);
            for m2 in 0..m {
                b.add(&self.backward(start + m2, p), 1.0);
            }
            bwd.add(&b, w);
        }
        (fwd, bwd)
    }
}

/// Assemble and solve the full mean-value system.
pub fn solve_mva(model: &PollingModel) -> Result<MvaSolution> {
    check_stable(model)?;
    let cm = cycle_means(model, mean_visit_times_unchecked(model)?);
    solve_with_means(model, cm)
}

fn solve_with_means(model: &PollingModel, cm: CycleMeans) -> Result<MvaSolution> {
    let n = model.n();
    let np = 2 * n;
    let lay = Layout { n };
    let len = period_means(model, &cm.mean_visit);
    let d = Durations { model, lay: Layout { n }, len: len.clone() };
    let ec = cm.mean_cycle;
    let mut rows: Vec<Expr> = Vec::new();

    for i in 0..n {
        let vi = PeriodId::visit(i).index();
        let b = model.mean_service(i);
        let rb = model.service[i].residual_mean();
        let rho_ii = model.own_load(i);
        let gated = model.discipline[i] == Discipline::Gated;
        // periods strictly after p and before the next V_i
        let until_visit = |p: usize| {
            let mut v = Vec::new();
            let mut q = p + 1;
            while q % np != vi {
                v.push(q);
                q += 1;
            }
            v
        };

        // waiting time, multiplied through by the effective rate and E[C]
        if cm.eff_rate[i] > 0.0 {
            let mut e = Expr::var(lay.w(i), cm.eff_rate[i] * ec);
            for p in 0..np {
                let weight = len[p] * model.rate_at(i, p);
                if weight == 0.0 {
                    continue;
                }
                let mut part = Expr::default();
                if p == vi && !gated {
                    part.add(&Expr::var(lay.lqc(i, p), b), 1.0);
                    part.constant += rb;
                } else if p == vi {
                    part.add(&Expr::var(lay.fv(i, p), 1.0 + rho_ii), 1.0);
                    for q in until_visit(p) {
                        part.add(&d.forward(q, p), 1.0);
                    }
                } else {
                    part.add(&Expr::var(lay.lqc(i, p), b), 1.0);
                    part.add(&d.residual(p), 1.0);
                    for q in until_visit(p) {
                        part.add(&d.forward(q, p), 1.0);
                    }
                }
                e.add(&part, -weight);
            }
            rows.push(e);
        } else {
            rows.push(Expr::var(lay.w(i), 1.0));
        }

        // Little's law
        let mut e = Expr::var(lay.lq(i), 1.0);
        e.add(&Expr::var(lay.w(i), 1.0), -cm.eff_rate[i]);
        rows.push(e);

        // unconditioning over the period of observation
        let mut e = Expr::var(lay.lq(i), ec);
        for p in 0..np {
            if len[p] > 0.0 {
                e.add(&Expr::var(lay.lqc(i, p), 1.0), -len[p]);
            }
        }
        rows.push(e);

        // conditional queue lengths outside the own visit
        for p in 0..np {
            if p == vi {
                continue;
            }
            let mut e = Expr::var(lay.lqc(i, p), 1.0);
            let first = if gated { vi } else { vi + 1 };
            let mut q = first;
            let target = if p > vi { p } else { p + np };
            while q <= target {
                let rate = model.rate_at(i, q);
                if rate != 0.0 {
                    let term = if q == target { d.age(p) } else { d.backward(q, p) };
                    e.add(&term, -rate);
                }
                q += 1;
            }
            rows.push(e);
        }

        // residual of the own visit
        let coef = if gated { 1.0 + rho_ii } else { 1.0 - rho_ii };
        let mut e = Expr::var(lay.fv(i, vi), coef);
        e.add(&Expr::var(lay.lqc(i, vi), b), -1.0);
        e.constant -= rb;
        rows.push(e);

        // next own visit seen from any other period
        let coef = if gated { 1.0 } else { 1.0 - rho_ii };
        for p in 0..np {
            if p == vi {
                continue;
            }
            let mut e = Expr::var(lay.fv(i, p), coef);
            let mut arrivals = Expr::var(lay.lqc(i, p), 1.0);
            arrivals.add(&d.residual(p), model.rate_at(i, p));
            for q in until_visit(p) {
                let rate = model.rate_at(i, q);
                if rate != 0.0 {
                    arrivals.add(&d.forward(q, p), rate);
                }
            }
            e.add(&arrivals, -b);
            rows.push(e);
        }

        // age and residual of a visit coincide in mean
        let mut e = Expr::var(lay.bv(i, vi), 1.0);
        e.add(&Expr::var(lay.fv(i, vi), 1.0), -1.0);
        rows.push(e);
    }

    // forward and backward forms of every residual interval
    for start in 0..np {
        for length in 2..=np {
            let (f, b) = d.interval_forms(start, length);
            let mut e = f;
            e.add(&b, -1.0);
            rows.push(e);
        }
    }

    let m = rows.len();
    let k = lay.total();
    let mut a = DMatrix::zeros(m, k);
    let mut rhs = DVector::zeros(m);
    for (r, e) in rows.iter().enumerate() {
        for &(v, c) in &e.terms {
            a[(r, v)] += c;
        }
        rhs[r] = -e.constant;
    }
    let (x, rank, condition) = lstsq(a.clone(), rhs.clone())?;
    let resid = (&a * &x - &rhs).amax();
    let scale = a.amax() * x.amax() + rhs.amax();
    // near saturation the system is badly conditioned; allow for that
    if resid > 1e-9_f64.max(condition * 1e-14) * scale {
        return Err(PollError::Singular(format!(
            "mean-value system inconsistent: residual {resid:.3e} at scale {scale:.3e}, rank {rank} of {k}, condition {condition:.3e}"
        )));
    }
    let x: Vec<f64> = x.iter().copied().collect();

    let mut dur_forward = vec![vec![0.0; np]; np];
    let mut dur_backward = vec![vec![0.0; np]; np];
    for a_ in 0..np {
        for b_ in 0..np {
            let (f, bk) = if a_ == b_ {
                (d.residual(a_), d.age(a_))
            } else {
                (d.forward(a_, b_), d.backward(a_, b_))
            };
            dur_forward[a_][b_] = f.eval(&x);
            dur_backward[a_][b_] = bk.eval(&x);
        }
    }
    Ok(MvaSolution {
        wait: (0..n).map(|i| x[lay.w(i)]).collect(),
        queue_len: (0..n).map(|i| x[lay.lq(i)]).collect(),
        cond_queue_len: (0..n)
            .map(|i| (0..np).map(|p| x[lay.lqc(i, p)]).collect())
            .collect(),
        dur_forward,
        dur_backward,
        mean_visit: cm.mean_visit,
        mean_cycle: cm.mean_cycle,
        q: cm.q,
        eff_rate: cm.eff_rate,
        eff_load: cm.eff_load,
        rho_bar: cm.rho_bar,
        unknowns: k,
        equations: m,
        rank,
        condition,
    })
}

/// Largest gap between the forward and backward evaluation of any mean
/// residual interval length, over intervals of positive mean length.
pub fn residual_interval_gap(model: &PollingModel, sol: &MvaSolution) -> f64 {
    let n = model.n();
    let np = 2 * n;
    let len = period_means(model, &sol.mean_visit);
    let mut worst: f64 = 0.0;
    for start in 0..np {
        for length in 2..=np {
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            let mut total = 0.0;
            for m in 0..length {
                let p = (start + m) % np;
                if len[p] == 0.0 {
                    continue;
                }
                total += len[p];
                let mut f = sol.dur_forward[p][p];
                for m2 in m + 1..length {
                    f += sol.dur_forward[(start + m2) % np][p];
                }
                let mut b = sol.dur_backward[p][p];
                for m2 in 0..m {
                    b += sol.dur_backward[(start + m2) % np][p];
                }
                fwd += len[p] * f;
                bwd += len[p] * b;
            }
            if total > 0.0 {
                worst = worst.max(((fwd - bwd) / total).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Distribution;
    use proptest::prelude::*;

    fn example2() -> PollingModel {
        let mut m = PollingModel::uniform(2, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.5);
        m.set_rate(0, PeriodId::visit(1), 0.0);
        m
    }

    fn vacation(disc: Discipline) -> PollingModel {
        PollingModel::uniform(1, disc, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.5)
    }

    #[test]
    fn example_two_mean_visits_and_cycle() {
        let cm = mean_cycle_time(&example2()).unwrap();
        assert!((cm.mean_visit[0] - 2.0).abs() < 1e-12);
        assert!((cm.mean_visit[1] - 4.0).abs() < 1e-12);
        assert!((cm.mean_cycle - 8.0).abs() < 1e-12);
        assert!((cm.q.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_queue_vacation_visit() {
        let cm = mean_cycle_time(&vacation(Discipline::Exhaustive)).unwrap();
        assert!((cm.mean_visit[0] - 1.0).abs() < 1e-12);
        assert!((cm.mean_cycle - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rates_give_zero_visits() {
        let m = PollingModel::uniform(3, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.0);
        assert!(mean_visit_times(&m).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn example_two_waiting_times() {
        let s = solve_mva(&example2()).unwrap();
        assert!((s.wait[0] - 3.75).abs() < 1e-9, "{:?}", s.wait);
        assert!((s.wait[1] - 5.75).abs() < 1e-9, "{:?}", s.wait);
    }

    #[test]
    fn vacation_model_matches_decomposition() {
        // lambda E[B^2] / (2(1-rho)) + E[S^2]/(2E[S]) = 1 + 1
        let s = solve_mva(&vacation(Discipline::Exhaustive)).unwrap();
        assert!((s.wait[0] - 2.0).abs() < 1e-10, "{:?}", s.wait);
        // the backward switch-over seen from the visit is E[S^2]/E[S]
        assert!((s.dur_backward[1][0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gated_vacation_model() {
        // gated single queue with multiple vacations:
        // var(S)/(2E[S]) + lam E[B^2]/(2(1-rho)) + E[S](1+rho)/(2(1-rho))
        let s = solve_mva(&vacation(Discipline::Gated)).unwrap();
        assert!((s.wait[0] - 3.0).abs() < 1e-10, "{:?}", s.wait);
    }

    #[test]
    fn symmetric_exhaustive_closed_form() {
        // symmetric exhaustive, total switch-over S:
        // E[W] = var(S)/(2E[S]) + N lam E[B^2]/(2(1-rho)) + E[S](N-rho)/(2N(1-rho))
        let n = 3;
        let lam = 0.2;
        let m = PollingModel::uniform(n, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), lam);
        let s = solve_mva(&m).unwrap();
        let (nf, rho) = (n as f64, lam * n as f64);
        let want = nf / (2.0 * nf) + nf * lam * 2.0 / (2.0 * (1.0 - rho)) + nf * (nf - rho) / (2.0 * nf * (1.0 - rho));
        for i in 0..n {
            assert!((s.wait[i] - want).abs() < 1e-10, "{:?} vs {want}", s.wait);
        }
    }

    #[test]
    fn symmetric_gated_closed_form() {
        // gated: the last term carries N+rho instead of N-rho
        let n = 3;
        let lam = 0.2;
        let m = PollingModel::uniform(n, Discipline::Gated, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), lam);
        let s = solve_mva(&m).unwrap();
        let (nf, rho) = (n as f64, lam * n as f64);
        let want = nf / (2.0 * nf) + nf * lam * 2.0 / (2.0 * (1.0 - rho)) + nf * (nf + rho) / (2.0 * nf * (1.0 - rho));
        for i in 0..n {
            assert!((s.wait[i] - want).abs() < 1e-10, "{:?} vs {want}", s.wait);
        }
    }

    #[test]
    fn solution_invariants_example_two() {
        let m = example2();
        let s = solve_mva(&m).unwrap();
        for i in 0..2 {
            assert!((s.queue_len[i] - s.eff_rate[i] * s.wait[i]).abs() < 1e-10);
            let mix: f64 = (0..4).map(|p| s.q[p] * s.cond_queue_len[i][p]).sum();
            assert!((mix - s.queue_len[i]).abs() < 1e-10);
        }
        for p in 0..4 {
            assert!((s.dur_forward[p][p] - s.dur_backward[p][p]).abs() < 1e-10);
        }
        assert!(residual_interval_gap(&m, &s) < 1e-9);
        assert_eq!(s.dur_forward[1][0], 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scaling_service_down_does_not_increase_waits(seed in 0u64..1000) {
            let m = crate::testkit::random_model(seed, 3, 0.6, false);
            if let Ok(s) = solve_mva(&m) {
                let mut small = m.clone();
                for d in small.service.iter_mut() {
                    if let Distribution::Exponential { rate } = d {
                        *rate *= 1.25;
                    }
                }
                let t = solve_mva(&small).unwrap();
                for i in 0..m.n() {
                    if s.eff_rate[i] > 0.0 {
                        prop_assert!(t.wait[i] <= s.wait[i] + 1e-9);
                    }
                }
                prop_assert!(residual_interval_gap(&m, &s) < 1e-9);
            }
        }
    }
}
