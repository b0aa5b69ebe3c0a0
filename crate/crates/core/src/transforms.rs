//! Generating functions and fixed-point transforms: busy periods, branching
//! functions and the laws of motion for base customer types (N coordinates)
//! and for subtypes keyed by arrival period (2N^2 coordinates).
//!
//! Laws of motion are evaluated in complement coordinates `u = 1 - z`. A PGF
//! value is returned as its logarithm so that `1 - value` stays accurate for
//! arguments close to the all-ones vector.

use crate::error::{PollError, Result};
use crate::model::{Discipline, PeriodId, PollingModel};
use crate::numeric::{derivative_complex, ln1p, re, Estimate, C64};
use std::fmt;
use std::sync::Arc;

pub const DEFAULT_TOL: f64 = 1e-12;
/// Law-of-motion iteration cap, in cycles.
pub const CYCLE_CAP: usize = 100_000;
const BUSY_CAP: usize = 1_000_000;
// relative stopping threshold used when a value feeds a finite difference
const TIGHT: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Pgf,
    Lst,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Pgf => "pgf",
            TransformKind::Lst => "lst",
        })
    }
}

type Evaluator = dyn Fn(&[C64]) -> Result<C64> + Send + Sync;

/// An evaluable PGF or LST. Scalar transforms have dimension 1.
#[derive(Clone)]
pub struct Transform {
    pub kind: TransformKind,
    pub dimension: usize,
    f: Arc<Evaluator>,
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Transform({}, dim {})", self.kind, self.dimension)
    }
}

impl Transform {
    pub fn new<F>(kind: TransformKind, dimension: usize, f: F) -> Self
    where
        F: Fn(&[C64]) -> Result<C64> + Send + Sync + 'static,
    {
        Transform { kind, dimension, f: Arc::new(f) }
    }

    pub fn scalar<F>(kind: TransformKind, f: F) -> Self
    where
        F: Fn(C64) -> Result<C64> + Send + Sync + 'static,
    {
        Transform::new(kind, 1, move |x: &[C64]| f(x[0]))
    }

    pub fn eval(&self, x: &[C64]) -> Result<C64> {
        if x.len() != self.dimension {
            return Err(PollError::OutOfRange(format!(
                "transform of dimension {} evaluated at {} arguments",
                self.dimension,
                x.len()
            )));
        }
        (self.f)(x)
    }

    pub fn eval_at(&self, x: f64) -> Result<C64> {
        self.eval(&[re(x)])
    }

    /// 1 for a PGF, 0 for an LST.
    pub fn base_point(&self) -> f64 {
        match self.kind {
            TransformKind::Pgf => 1.0,
            TransformKind::Lst => 0.0,
        }
    }
}

/// k-th factorial moment (PGF) or k-th raw moment (LST) of a scalar
/// transform, by central differences and Richardson extrapolation. `at`
/// overrides the base point; the value there is then evaluated rather than
/// taken as 1.
pub fn transform_moment(t: &Transform, k: u32, at: Option<f64>) -> Result<Estimate> {
    if t.dimension != 1 {
        return Err(PollError::Unsupported("moments of joint transforms".into()));
    }
    let x0 = at.unwrap_or(t.base_point());
    let f0 = match at {
        Some(x) => t.eval_at(x)?,
        None => re(1.0),
    };
    let (d, err) = derivative_complex(|x| t.eval_at(x), x0, f0, k)?;
    let sign = match (t.kind, k % 2) {
        (TransformKind::Lst, 1) => -1.0,
        _ => 1.0,
    };
    Ok(Estimate { value: sign * d.re, error: err })
}

/// 1 - pi_i(omega) for the busy period of queue i in isolation (rate during
/// its own visit). Iterates in complement form from pi = 1.
pub(crate) fn busy_complement(model: &PollingModel, i: usize, omega: C64) -> Result<C64> {
    let lam = model.rate(i, PeriodId::visit(i));
    let b = &model.service[i];
    let mut nu = b.lst_complement(omega);
    if lam == 0.0 {
        return Ok(nu);
    }
    let mut prev = f64::INFINITY;
    for _ in 0..BUSY_CAP {
        let next = b.lst_complement(omega + nu * lam);
        let diff = (next - nu).norm();
        nu = next;
        let scale = nu.norm();
        // stop at rounding level; stalling there counts as converged
        if diff <= 1e-15 * scale || (diff <= 1e-12 * scale && diff >= prev) {
            return Ok(nu);
        }
        prev = diff;
        if !(nu.re.is_finite() && nu.im.is_finite()) {
            break;
        }
    }
    Err(PollError::NoConvergence { what: "busy-period fixed point", iterations: BUSY_CAP })
}

fn check_own_load(model: &PollingModel, i: usize) -> Result<()> {
    let load = model.own_load(i);
    if load >= 1.0 {
        return Err(PollError::OwnLoad { queue: i + 1, load });
    }
    Ok(())
}

fn check_queue(model: &PollingModel, i: usize) -> Result<()> {
    if i >= model.n() {
        return Err(PollError::OutOfRange(format!("queue {} of {}", i + 1, model.n())));
    }
    Ok(())
}

/// Busy-period LST: the root in (0,1] of pi = beta(omega + lambda (1 - pi)).
pub fn busy_period_lst(model: &PollingModel, i: usize, omega: C64) -> Result<C64> {
    check_queue(model, i)?;
    check_own_load(model, i)?;
    Ok(re(1.0) - busy_complement(model, i, omega)?)
}

/// 1 - theta_j(omega): service time (gated) or busy period (exhaustive).
pub(crate) fn theta_complement(model: &PollingModel, j: usize, omega: C64) -> Result<C64> {
    match model.discipline[j] {
        Discipline::Gated => Ok(model.service[j].lst_complement(omega)),
        Discipline::Exhaustive => busy_complement(model, j, omega),
    }
}

/// LST of the time the server spends at queue j per customer found there.
pub fn theta_lst(model: &PollingModel, j: usize, omega: C64) -> Result<C64> {
    check_queue(model, j)?;
    if model.discipline[j] == Discipline::Exhaustive {
        check_own_load(model, j)?;
    }
    Ok(re(1.0) - theta_complement(model, j, omega)?)
}

/// 1 - h_i in complement coordinates `u` (N entries).
pub(crate) fn branching_complement(model: &PollingModel, i: usize, u: &[C64]) -> Result<C64> {
    let v = PeriodId::visit(i);
    match model.discipline[i] {
        Discipline::Gated => {
            let s: C64 = (0..model.n()).map(|j| u[j] * model.rate(j, v)).sum();
            Ok(model.service[i].lst_complement(s))
        }
        Discipline::Exhaustive => {
            let s: C64 = (0..model.n())
                .filter(|&j| j != i)
                .map(|j| u[j] * model.rate(j, v))
                .sum();
            busy_complement(model, i, s)
        }
    }
}

/// Offspring PGF h_i(z) of one queue-i customer present at a visit start.
pub fn branching_pgf(model: &PollingModel, i: usize, z: &[C64]) -> Result<C64> {
    check_queue(model, i)?;
    check_len(z, model.n())?;
    let u: Vec<C64> = z.iter().map(|&x| re(1.0) - x).collect();
    Ok(re(1.0) - branching_complement(model, i, &u)?)
}

fn check_len(z: &[C64], want: usize) -> Result<()> {
    if z.len() != want {
        return Err(PollError::OutOfRange(format!("argument has {} entries, expected {want}", z.len())));
    }
    Ok(())
}

fn sup(u: &[C64]) -> f64 {
    u.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// ln sigma_k(s)
fn switch_log(model: &PollingModel, k: usize, s: C64) -> C64 {
    let c = model.switchover[k].lst_complement(s);
    if c == re(0.0) {
        re(0.0)
    } else {
        ln1p(-c)
    }
}

/// One cycle of the law of motion, seen as a sequence of steps. `back`
/// rewrites the argument at the end of step `t` into the argument at its
/// beginning and returns the log-factor collected by the step.
trait Motion {
    fn steps(&self) -> usize;
    /// Steps after which the convergence test is run.
    fn checkpoint(&self, t: usize) -> bool;
    fn back(&self, t: usize, u: &mut [C64]) -> Result<C64>;
}

/// Log of the PGF at the beginning of step `anchor`, for complement argument
/// `u`, by walking backward through the cycle until the argument is within
/// `tol` of zero.
fn evaluate_log<M: Motion>(m: &M, anchor: usize, mut u: Vec<C64>, tol: f64) -> Result<C64> {
    let steps = m.steps();
    let mut log = re(0.0);
    let start = sup(&u);
    if start == 0.0 {
        return Ok(log);
    }
    let mut t = anchor % steps;
    let limit = CYCLE_CAP * steps;
    for _ in 0..limit {
        t = (t + steps - 1) % steps;
        log += m.back(t, &mut u)?;
        if m.checkpoint(t) {
            let s = sup(&u);
            if s < tol {
                return Ok(log);
            }
            if !s.is_finite() || s > 1e8 * start.max(1.0) {
                return Err(PollError::NoConvergence { what: "law of motion (diverging)", iterations: 0 });
            }
        }
    }
    Err(PollError::NoConvergence { what: "law of motion", iterations: CYCLE_CAP })
}

fn tight_tol(u: &[C64]) -> f64 {
    (TIGHT * sup(u)).max(1e-300)
}

/// Base customer types: step 2k is the visit to queue k, step 2k+1 the
/// switch-over after it. The beginning of step p is the beginning of period p.
struct BaseMotion<'a> {
    model: &'a PollingModel,
}

impl Motion for BaseMotion<'_> {
    fn steps(&self) -> usize {
        self.model.periods()
    }
    fn checkpoint(&self, t: usize) -> bool {
        t % 2 == 1
    }
    fn back(&self, t: usize, u: &mut [C64]) -> Result<C64> {
        let k = t / 2;
        if t.is_multiple_of(2) {
            u[k] = branching_complement(self.model, k, u)?;
            Ok(re(0.0))
        } else {
            let sw = PeriodId::switchover(k);
            let s: C64 = (0..self.model.n()).map(|j| u[j] * self.model.rate(j, sw)).sum();
            Ok(switch_log(self.model, k, s))
        }
    }
}

/// Log of the joint queue-length PGF at the beginning of `period`, in
/// complement coordinates.
pub(crate) fn period_beginning_log(model: &PollingModel, period: PeriodId, u: &[C64], tol: f64) -> Result<C64> {
    evaluate_log(&BaseMotion { model }, period.index(), u.to_vec(), tol)
}

/// Same, with a tolerance relative to the size of the argument.
pub(crate) fn period_beginning_log_tight(model: &PollingModel, period: PeriodId, u: &[C64]) -> Result<C64> {
    period_beginning_log(model, period, u, tight_tol(u))
}

/// Joint queue-length PGF at the beginning of any period.
pub fn period_beginning_pgf(model: &PollingModel, period: PeriodId, z: &[C64], tol: f64) -> Result<C64> {
    check_queue(model, period.queue)?;
    check_len(z, model.n())?;
    let u: Vec<C64> = z.iter().map(|&x| re(1.0) - x).collect();
    Ok(period_beginning_log(model, period, &u, tol)?.exp())
}

/// Joint queue-length PGF at the beginning of a visit to queue i.
pub fn visit_beginning_pgf(model: &PollingModel, i: usize, z: &[C64], tol: f64) -> Result<C64> {
    period_beginning_pgf(model, PeriodId::visit(i), z, tol)
}

/// Position of subtype (queue, arrival period) in the 2N^2 argument.
pub fn subtype_index(n: usize, queue: usize, period: PeriodId) -> usize {
    queue * 2 * n + period.index()
}

/// Order in which the subtypes of queue k are served during its visit,
/// as cycle positions of their arrival periods.
pub fn service_order(model: &PollingModel, k: usize) -> Vec<usize> {
    let np = model.periods();
    let v = 2 * k;
    match model.discipline[k] {
        Discipline::Exhaustive => (1..np).map(|m| (v + m) % np).chain([v]).collect(),
        Discipline::Gated => (0..np).map(|m| (v + m) % np).collect(),
    }
}

/// Subtype law of motion. Queue k owns the block of steps
/// k(2N+1) .. k(2N+1)+2N: first one step per served subtype, in service
/// order, then its switch-over.
pub(crate) struct SubtypeMotion<'a> {
    model: &'a PollingModel,
    orders: Vec<Vec<usize>>,
}

impl<'a> SubtypeMotion<'a> {
    pub(crate) fn new(model: &'a PollingModel) -> Self {
        let orders = (0..model.n()).map(|k| service_order(model, k)).collect();
        SubtypeMotion { model, orders }
    }

    fn block(&self) -> usize {
        self.model.periods() + 1
    }

    /// Step at whose beginning queue k starts serving subtype k^(period).
    pub(crate) fn serve_step(&self, k: usize, period: PeriodId) -> usize {
        let m = self.orders[k].iter().position(|&p| p == period.index()).expect("period in cycle");
        k * self.block() + m
    }

    /// Step at whose beginning the switch-over after queue k starts.
    #[cfg(test)]
    pub(crate) fn switch_step(&self, k: usize) -> usize {
        k * self.block() + self.model.periods()
    }

    pub(crate) fn log_at(&self, step: usize, u: &[C64], tol: f64) -> Result<C64> {
        evaluate_log(self, step, u.to_vec(), tol)
    }

    pub(crate) fn log_at_tight(&self, step: usize, u: &[C64]) -> Result<C64> {
        self.log_at(step, u, tight_tol(u))
    }
}

impl Motion for SubtypeMotion<'_> {
    fn steps(&self) -> usize {
        self.model.n() * self.block()
    }
    fn checkpoint(&self, t: usize) -> bool {
        t % self.block() == self.model.periods()
    }
    fn back(&self, t: usize, u: &mut [C64]) -> Result<C64> {
        let m = self.model;
        let n = m.n();
        let np = m.periods();
        let k = t / self.block();
        let sub = t % self.block();
        if sub == np {
            let sp = 2 * k + 1;
            let s: C64 = (0..n).map(|j| u[j * np + sp] * m.rate_at(j, sp)).sum();
            return Ok(switch_log(m, k, s));
        }
        let v = 2 * k;
        let order = &self.orders[k];
        let p = order[sub];
        let gated = m.discipline[k] == Discipline::Gated;
        let last_exhaustive = !gated && p == v;
        let s: C64 = (0..n)
            .filter(|&j| !(last_exhaustive && j == k))
            .map(|j| u[j * np + v] * m.rate_at(j, v))
            .sum();
        if last_exhaustive {
            let val = busy_complement(m, k, s)?;
            for q in 0..np {
                u[k * np + q] = re(0.0);
            }
            u[k * np + v] = val;
        } else {
            let val = m.service[k].lst_complement(s);
            // subtypes served earlier in this visit are absent at its start
            for &q in &order[..sub] {
                if !(gated && q == v) {
                    u[k * np + q] = re(0.0);
                }
            }
            u[k * np + p] = val;
        }
        Ok(re(0.0))
    }
}

fn subtype_args(model: &PollingModel, i: usize, z: &[C64]) -> Result<Vec<C64>> {
    check_queue(model, i)?;
    let n = model.n();
    check_len(z, 2 * n * n)?;
    Ok(z.iter().map(|&x| re(1.0) - x).collect())
}

/// VB_i^(P): joint subtype PGF when queue i starts serving subtype i^(P).
pub fn subtype_visit_beginning_pgf(
    model: &PollingModel,
    i: usize,
    anchor: PeriodId,
    z: &[C64],
    tol: f64,
) -> Result<C64> {
    let u = subtype_args(model, i, z)?;
    let sm = SubtypeMotion::new(model);
    Ok(sm.log_at(sm.serve_step(i, anchor), &u, tol)?.exp())
}

/// VC_i^(P): joint subtype PGF when queue i completes subtype i^(P).
pub fn subtype_visit_completion_pgf(
    model: &PollingModel,
    i: usize,
    anchor: PeriodId,
    z: &[C64],
    tol: f64,
) -> Result<C64> {
    let u = subtype_args(model, i, z)?;
    let sm = SubtypeMotion::new(model);
    Ok(sm.log_at(sm.serve_step(i, anchor) + 1, &u, tol)?.exp())
}

/// psi^(P)(omega) for the cycle that starts with the visit to queue 0.
pub fn psi_recursion(model: &PollingModel, start: PeriodId, omega: C64) -> Result<C64> {
    check_queue(model, start.queue)?;
    Ok(psi_all(model, omega)?[start.index()])
}

/// All psi values, indexed by cycle position.
pub(crate) fn psi_all(model: &PollingModel, omega: C64) -> Result<Vec<C64>> {
    let n = model.n();
    let mut psi = vec![omega; 2 * n];
    // theta complements of later visits, filled from the back
    let mut tc = vec![re(0.0); n];
    for i in (0..n).rev() {
        for p in [2 * i + 1, 2 * i] {
            psi[p] = omega + ((i + 1)..n).map(|k| tc[k] * model.rate_at(k, p)).sum::<C64>();
        }
        tc[i] = theta_complement(model, i, psi[2 * i])?;
    }
    Ok(psi)
}
