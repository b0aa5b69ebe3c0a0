//! Performance-measure transforms: marginal queue-length PGFs, the joint PGF
//! of subtypes left behind at departures, waiting-time LSTs, and cycle,
//! intervisit and visit-time LSTs.
//!
//! All functions take complex arguments; moments come from
//! [`transform_moment`](crate::transforms::transform_moment) applied to the
//! [`Transform`] builders at the bottom of the file.

use crate::error::{PollError, Result};
use crate::model::{Discipline, Distribution, PeriodId, PollingModel};
use crate::mva::{mean_cycle_time, CycleMeans};
use crate::numeric::{derivative_complex, expm1, re, C64};
use crate::stability::effective_model;
use crate::transforms::{
    busy_complement, period_beginning_log_tight, psi_all, theta_complement, SubtypeMotion,
    Transform, TransformKind,
};
use std::fmt;
use std::sync::Arc;

/// Observation epoch of a queue-length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Epoch {
    Arbitrary,
    Arrival,
    Departure,
    During(PeriodId),
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epoch::Arbitrary => f.write_str("arbitrary"),
            Epoch::Arrival => f.write_str("arrival"),
            Epoch::Departure => f.write_str("departure"),
            Epoch::During(p) => write!(f, "during {p}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueueLengthPgf {
    pub queue: usize,
    pub epoch: Epoch,
    pub transform: Transform,
}

#[derive(Debug, Clone)]
pub struct WaitingTimeLst {
    pub queue: usize,
    pub transform: Transform,
    /// The model had a period of positive length without type-i arrivals,
    /// and an auxiliary queue was inserted to measure time spent in it.
    pub used_virtual_queue: bool,
}

/// Where a cycle starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleVariant {
    VisitBeginning,
    VisitEnding,
}

/// Evaluation route for cycle and intervisit LSTs. `Compact` uses the
/// subtype transform at the anchor's visit and needs positive rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleForm {
    General,
    Compact,
}

const SCALE_ZERO: f64 = 1e-12;

/// Effective model plus cycle means, shared by every formula here.
#[derive(Debug, Clone)]
struct Ctx {
    model: PollingModel,
    means: CycleMeans,
}

impl Ctx {
    fn new(model: &PollingModel) -> Result<Ctx> {
        let means = mean_cycle_time(model)?;
        let eff = effective_model(model, &means.mean_visit);
        Ok(Ctx { model: eff, means })
    }

    fn period_len(&self, p: usize) -> f64 {
        self.means.q[p] * self.means.mean_cycle
    }

    fn has_length(&self, p: usize) -> bool {
        self.period_len(p) > SCALE_ZERO * self.means.mean_cycle
    }

    fn check_queue(&self, i: usize) -> Result<()> {
        if i >= self.model.n() {
            return Err(PollError::OutOfRange(format!("queue {} of {}", i + 1, self.model.n())));
        }
        Ok(())
    }

    /// 1 - E[z^{LB_i}] at the beginning of period p, with u = 1 - z.
    fn boundary_complement(&self, i: usize, p: usize, u: C64) -> Result<C64> {
        let mut arg = vec![re(0.0); self.model.n()];
        arg[i] = u;
        let period = PeriodId::from_index(p, self.model.n());
        Ok(-expm1(period_beginning_log_tight(&self.model, period, &arg)?))
    }

    /// E[LB_i] at the beginning of period p.
    fn boundary_mean(&self, i: usize, p: usize) -> Result<f64> {
        let (d, _) = derivative_complex(|x| self.boundary_complement(i, p, re(x)), 0.0, re(0.0), 1)?;
        Ok(d.re)
    }
}

/// Boundary means for one queue, indexed by cycle position.
fn boundary_means(ctx: &Ctx, i: usize) -> Result<Vec<f64>> {
    (0..ctx.model.periods()).map(|p| ctx.boundary_mean(i, p)).collect()
}

fn is_one(z: C64) -> bool {
    z == re(1.0)
}

fn next_period(p: usize, np: usize) -> usize {
    (p + 1) % np
}

/// Queue-length PGF of queue i during a period other than its own visit,
/// with u = 1 - z and precomputed boundary means.
fn nonserving(ctx: &Ctx, lb: &[f64], i: usize, p: usize, u: C64) -> Result<C64> {
    let np = ctx.model.periods();
    let e = next_period(p, np);
    let growth = lb[e] - lb[p];
    if !(growth > 0.0) {
        return Err(PollError::InvalidModel(format!(
            "queue {} does not grow during {} although it has arrivals there",
            i + 1,
            PeriodId::from_index(p, ctx.model.n())
        )));
    }
    let diff = ctx.boundary_complement(i, e, u)? - ctx.boundary_complement(i, p, u)?;
    Ok(diff / (u * growth))
}

fn nonserving_zero_rate(ctx: &Ctx, i: usize, p: usize, u: C64) -> Result<C64> {
    let n = ctx.model.n();
    let period = PeriodId::from_index(p, n);
    if !period.is_visit() {
        return Ok(re(1.0) - ctx.boundary_complement(i, p, u)?);
    }
    let j = period.queue;
    let mean = ctx.means.mean_visit[j];
    if !(mean > 0.0) {
        return Err(PollError::NotApplicable(format!("visit {period} has zero mean length")));
    }
    // queue i is frozen during V_j, so weight its start content by V_j
    let joint = |w: f64| -> Result<C64> {
        let mut arg = vec![re(0.0); n];
        arg[i] = u;
        arg[j] = theta_complement(&ctx.model, j, re(w))?;
        Ok(period_beginning_log_tight(&ctx.model, period, &arg)?.exp())
    };
    let f0 = joint(0.0)?;
    let (d, _) = derivative_complex(joint, 0.0, f0, 1)?;
    Ok(-d / mean)
}

fn own_visit(ctx: &Ctx, lb: &[f64], i: usize, u: C64) -> Result<C64> {
    let m = &ctx.model;
    let v = 2 * i;
    let s = 2 * i + 1;
    let drop = lb[v] - lb[s];
    if !(drop > 0.0) {
        return Err(PollError::NotApplicable(format!("visit V{} is empty", i + 1)));
    }
    let boundary = (ctx.boundary_complement(i, v, u)? - ctx.boundary_complement(i, s, u)?) / (u * drop);
    let z = re(1.0) - u;
    let lam = m.rate_at(i, v);
    if lam == 0.0 {
        return Ok(z * boundary);
    }
    let rho = m.own_load(i);
    if rho >= 1.0 {
        return Err(PollError::OwnLoad { queue: i + 1, load: rho });
    }
    let bc = m.service[i].lst_complement(u * lam);
    let first = z * bc / (u - bc) * ((1.0 - rho) / rho);
    Ok(first * boundary)
}

/// PGF of queue i during period p, dispatching on the case.
fn during(ctx: &Ctx, lb: &[f64], i: usize, p: usize, z: C64) -> Result<C64> {
    if is_one(z) {
        return Ok(re(1.0));
    }
    let u = re(1.0) - z;
    if p == 2 * i {
        own_visit(ctx, lb, i, u)
    } else if ctx.model.rate_at(i, p) > 0.0 {
        nonserving(ctx, lb, i, p, u)
    } else {
        nonserving_zero_rate(ctx, i, p, u)
    }
}

fn check_nonserving(model: &PollingModel, i: usize, period: PeriodId) -> Result<()> {
    if period.queue >= model.n() {
        return Err(PollError::OutOfRange(format!("{period} in a {}-queue model", model.n())));
    }
    if period == PeriodId::visit(i) {
        return Err(PollError::OutOfRange(format!("{period} is the own visit of queue {}", i + 1)));
    }
    Ok(())
}

/// E[z^{L_i}] at an arbitrary time in `period`, for a period in which queue
/// i has arrivals and is not served.
pub fn ql_pgf_nonserving(model: &PollingModel, i: usize, period: PeriodId, z: C64) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    check_nonserving(model, i, period)?;
    let p = period.index();
    if ctx.model.rate_at(i, p) == 0.0 {
        return Err(PollError::NotApplicable(format!("queue {} has no arrivals during {period}", i + 1)));
    }
    if is_one(z) {
        return Ok(re(1.0));
    }
    let np = ctx.model.periods();
    let mut lb = vec![0.0; np];
    lb[p] = ctx.boundary_mean(i, p)?;
    lb[next_period(p, np)] = ctx.boundary_mean(i, next_period(p, np))?;
    nonserving(&ctx, &lb, i, p, re(1.0) - z)
}

/// Same for a period in which queue i has no arrivals.
pub fn ql_pgf_nonserving_zero_rate(model: &PollingModel, i: usize, period: PeriodId, z: C64) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    check_nonserving(model, i, period)?;
    if is_one(z) {
        return Ok(re(1.0));
    }
    nonserving_zero_rate(&ctx, i, period.index(), re(1.0) - z)
}

/// E[z^{L_i}] at an arbitrary time during the visit to queue i, the customer
/// in service included.
pub fn ql_pgf_during_own_visit(model: &PollingModel, i: usize, z: C64) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    if is_one(z) {
        return Ok(re(1.0));
    }
    let np = ctx.model.periods();
    let mut lb = vec![0.0; np];
    lb[2 * i] = ctx.boundary_mean(i, 2 * i)?;
    lb[2 * i + 1] = ctx.boundary_mean(i, 2 * i + 1)?;
    own_visit(&ctx, &lb, i, re(1.0) - z)
}

/// Mixture weights over periods for an arbitrary or arrival epoch.
fn epoch_weights(ctx: &Ctx, i: usize, epoch: Epoch) -> Result<Vec<f64>> {
    let np = ctx.model.periods();
    match epoch {
        Epoch::Arbitrary => Ok(ctx.means.q.clone()),
        Epoch::Arrival => {
            let total = ctx.means.eff_rate[i];
            if !(total > 0.0) {
                return Err(PollError::NotApplicable(format!("queue {} has no arrivals", i + 1)));
            }
            Ok((0..np).map(|p| ctx.model.rate_at(i, p) * ctx.means.q[p] / total).collect())
        }
        Epoch::During(p) => {
            let mut w = vec![0.0; np];
            w[p.index()] = 1.0;
            Ok(w)
        }
        Epoch::Departure => Err(PollError::Unsupported("departure weights".into())),
    }
}

fn mixture(ctx: &Ctx, lb: &[f64], i: usize, weights: &[f64], z: C64) -> Result<C64> {
    if is_one(z) {
        return Ok(re(1.0));
    }
    let mut acc = re(0.0);
    for (p, &w) in weights.iter().enumerate() {
        if w > 0.0 && ctx.has_length(p) {
            acc += during(ctx, lb, i, p, z)? * w;
        }
    }
    Ok(acc)
}

/// Marginal queue-length PGF of queue i (customer in service included) at an
/// arbitrary, arrival or departure epoch, or during a given period.
pub fn marginal_ql_pgf(model: &PollingModel, i: usize, epoch: Epoch, z: C64) -> Result<C64> {
    marginal_ql_transform(model, i, epoch)?.transform.eval(&[z])
}

/// Departure-epoch argument: every subtype coordinate of queue i set to z.
fn collapsed(n: usize, i: usize, z: C64) -> Vec<C64> {
    let mut v = vec![re(1.0); 2 * n * n];
    for p in 0..2 * n {
        v[i * 2 * n + p] = z;
    }
    v
}

/// Joint PGF of the subtype counts left behind by a departing queue-i
/// customer. `z` has one entry per (queue, arrival period), laid out as
/// `queue * 2N + period`; entries of other queues are usually 1.
pub fn departure_joint_pgf(model: &PollingModel, i: usize, z: &[C64]) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    let n = model.n();
    if z.len() != 2 * n * n {
        return Err(PollError::OutOfRange(format!("argument has {} entries, expected {}", z.len(), 2 * n * n)));
    }
    departure_eval(&ctx, i, z)
}

fn departure_eval(ctx: &Ctx, i: usize, z: &[C64]) -> Result<C64> {
    if z.iter().all(|&x| is_one(x)) {
        return Ok(re(1.0));
    }
    let m = &ctx.model;
    let np = m.periods();
    let u: Vec<C64> = z.iter().map(|&x| re(1.0) - x).collect();
    let sm = SubtypeMotion::new(m);
    let mut acc = re(0.0);
    for p in 0..np {
        if m.rate_at(i, p) == 0.0 {
            continue;
        }
        acc += departure_term(&sm, m, i, p, &u)?;
    }
    Ok(acc / (ctx.means.eff_rate[i] * ctx.means.mean_cycle))
}

/// Arrival-rate weighted argument of the service-time LST of queue i.
fn service_arg(m: &PollingModel, i: usize, u: &[C64]) -> C64 {
    let np = m.periods();
    let v = 2 * i;
    (0..m.n()).map(|j| u[j * np + v] * m.rate_at(j, v)).sum()
}

/// beta (VB - VC) / (z_P - beta) for subtype i^(P).
fn departure_term(sm: &SubtypeMotion, m: &PollingModel, i: usize, p: usize, u: &[C64]) -> Result<C64> {
    let np = m.periods();
    let k = i * np + p;
    let raw = |u: &[C64]| -> Result<(C64, C64)> {
        let bc = m.service[i].lst_complement(service_arg(m, i, u));
        let denom = bc - u[k];
        let period = PeriodId::from_index(p, m.n());
        let start = sm.serve_step(i, period);
        let cb = -expm1(sm.log_at_tight(start, u)?);
        let cc = -expm1(sm.log_at_tight(start + 1, u)?);
        Ok(((re(1.0) - bc) * (cc - cb), denom))
    };
    let (num, denom) = raw(u)?;
    let scale = u[k].norm().max(1e-300);
    if denom.norm() > 1e-7 * scale {
        return Ok(num / denom);
    }
    // removable singularity: average two nearby points on the line in u_P
    let mut acc = re(0.0);
    for s in [1.0 + 1e-5, 1.0 - 1e-5] {
        let mut w = u.to_vec();
        w[k] = u[k] * s + if u[k] == re(0.0) { re(1e-9 * (s - 1.0)) } else { re(0.0) };
        let (a, b) = raw(&w)?;
        acc += a / b;
    }
    Ok(acc / 2.0)
}

/// Where a virtual queue goes: right before a visit, or between a visit and
/// the switch-over after it.
#[derive(Debug, Clone, Copy)]
enum Slot {
    BeforeVisit(usize),
    BeforeSwitch(usize),
}

/// Model with an extra exhaustive queue with zero service time and no
/// arrivals, placed so that the cycle is otherwise unchanged. Returns the new
/// model, the map from old to new cycle positions, and the new queue's index.
fn insert_virtual(model: &PollingModel, slot: Slot) -> (PollingModel, Vec<usize>, usize, Vec<usize>) {
    let n = model.n();
    let after = match slot {
        Slot::BeforeVisit(q) => (q + n - 1) % n,
        Slot::BeforeSwitch(k) => k,
    };
    let x = after + 1;
    let qmap: Vec<usize> = (0..n).map(|j| if j <= after { j } else { j + 1 }).collect();
    let mut pmap: Vec<usize> = (0..2 * n)
        .map(|p| {
            let id = PeriodId::from_index(p, n);
            2 * qmap[id.queue] + usize::from(!id.is_visit())
        })
        .collect();
    let mut discipline = model.discipline.clone();
    let mut service = model.service.clone();
    let mut switchover = model.switchover.clone();
    discipline.insert(x, Discipline::Exhaustive);
    service.insert(x, Distribution::Zero);
    match slot {
        Slot::BeforeVisit(_) => switchover.insert(x, Distribution::Zero),
        Slot::BeforeSwitch(k) => {
            let orig = switchover[k].clone();
            switchover[k] = Distribution::Zero;
            switchover.insert(x, orig);
            pmap[2 * k + 1] = 2 * x + 1;
        }
    }
    let mut rates = vec![vec![0.0; 2 * (n + 1)]; n + 1];
    for j in 0..n {
        for p in 0..2 * n {
            rates[qmap[j]][pmap[p]] = model.rates[j][p];
        }
    }
    (PollingModel { discipline, service, switchover, rates }, pmap, x, qmap)
}

/// Augmented model for waiting-time analysis: one virtual queue in front of
/// every period of positive length without type-i arrivals.
struct Augmented {
    model: PollingModel,
    original: usize,
    queue: usize,
    /// (virtual queue, cycle position of the period it measures)
    virtuals: Vec<(usize, usize)>,
}

fn augment(ctx: &Ctx, i: usize, virtual_rate: f64) -> Augmented {
    let base = &ctx.model;
    let n = base.n();
    let offending: Vec<usize> = (0..2 * n)
        .filter(|&p| base.rate_at(i, p) == 0.0 && ctx.has_length(p))
        .collect();
    let mut model = base.clone();
    let mut pos: Vec<usize> = (0..2 * n).collect();
    let mut queue = i;
    let mut virtuals: Vec<(usize, usize)> = Vec::new();
    for &o in &offending {
        let cur = pos[o];
        let id = PeriodId::from_index(cur, model.n());
        let slot = if id.is_visit() { Slot::BeforeVisit(id.queue) } else { Slot::BeforeSwitch(id.queue) };
        let (next, pmap, x, qmap) = insert_virtual(&model, slot);
        for v in pos.iter_mut() {
            *v = pmap[*v];
        }
        for (vq, vp) in virtuals.iter_mut() {
            *vq = qmap[*vq];
            *vp = pmap[*vp];
        }
        queue = qmap[queue];
        model = next;
        virtuals.push((x, pos[o]));
    }
    for &(x, p) in &virtuals {
        model.rates[x][p] = virtual_rate;
    }
    Augmented { model, original: i, queue, virtuals }
}

/// Periods a type-i customer arriving in `from` spends time in before it
/// departs (cycle positions, exclusive of `from`).
fn path_after(np: usize, from: usize, visit: usize, gated: bool) -> Vec<usize> {
    if from == visit {
        return if gated { (1..=np).map(|d| (from + d) % np).collect() } else { Vec::new() };
    }
    let len = (visit + np - from) % np;
    (1..=len).map(|d| (from + d) % np).collect()
}

fn waiting_eval(ctx: &Ctx, aug: &Augmented, omega: C64) -> Result<C64> {
    if omega == re(0.0) {
        return Ok(re(1.0));
    }
    let m = &aug.model;
    let i = aug.queue;
    let np = m.periods();
    let v = 2 * i;
    let gated = m.discipline[i] == Discipline::Gated;
    let sm = SubtypeMotion::new(m);
    let mut base = vec![re(0.0); np * m.n()];
    for p in 0..np {
        let lam = m.rate_at(i, p);
        if lam > 0.0 {
            base[i * np + p] = omega / lam;
        }
    }
    let mut acc = re(0.0);
    for p in 0..np {
        if m.rate_at(i, p) == 0.0 {
            continue;
        }
        let path = path_after(np, p, v, gated);
        let mut u = base.clone();
        for &(x, o) in &aug.virtuals {
            if path.contains(&o) {
                u[x * np + o] = omega / m.rate_at(x, o);
            }
        }
        acc += departure_term(&sm, m, i, p, &u)?;
    }
    let beta = re(1.0) - m.service[i].lst_complement(omega);
    Ok(acc / (beta * ctx.means.eff_rate[aug.original] * ctx.means.mean_cycle))
}

/// LST of the waiting time of queue i.
pub fn waiting_time_lst(model: &PollingModel, i: usize, omega: C64) -> Result<C64> {
    waiting_time_transform(model, i)?.transform.eval(&[omega])
}

pub(crate) fn waiting_time_transform_with_rate(model: &PollingModel, i: usize, virtual_rate: f64) -> Result<WaitingTimeLst> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    if !(ctx.means.eff_rate[i] > 0.0) {
        return Err(PollError::NotApplicable(format!("queue {} has no arrivals", i + 1)));
    }
    let aug = Arc::new(augment(&ctx, i, virtual_rate));
    let used = !aug.virtuals.is_empty();
    let ctx = Arc::new(ctx);
    let transform = Transform::scalar(TransformKind::Lst, move |w| waiting_eval(&ctx, &aug, w));
    Ok(WaitingTimeLst { queue: i, transform, used_virtual_queue: used })
}

pub fn waiting_time_transform(model: &PollingModel, i: usize) -> Result<WaitingTimeLst> {
    waiting_time_transform_with_rate(model, i, 1.0)
}

pub fn marginal_ql_transform(model: &PollingModel, i: usize, epoch: Epoch) -> Result<QueueLengthPgf> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    let transform = match epoch {
        Epoch::Departure => {
            if !(ctx.means.eff_rate[i] > 0.0) {
                return Err(PollError::NotApplicable(format!("queue {} has no arrivals", i + 1)));
            }
            let n = ctx.model.n();
            let ctx = Arc::new(ctx);
            Transform::scalar(TransformKind::Pgf, move |z| departure_eval(&ctx, i, &collapsed(n, i, z)))
        }
        _ => {
            if let Epoch::During(p) = epoch {
                if p.queue >= ctx.model.n() {
                    return Err(PollError::OutOfRange(format!("{p} in a {}-queue model", ctx.model.n())));
                }
            }
            let weights = epoch_weights(&ctx, i, epoch)?;
            let lb = boundary_means(&ctx, i)?;
            let ctx = Arc::new(ctx);
            Transform::scalar(TransformKind::Pgf, move |z| mixture(&ctx, &lb, i, &weights, z))
        }
    };
    Ok(QueueLengthPgf { queue: i, epoch, transform })
}

/// ln sigma_k(s)
fn switch_log(m: &PollingModel, k: usize, s: C64) -> C64 {
    let c = m.switchover[k].lst_complement(s);
    if c == re(0.0) {
        re(0.0)
    } else {
        crate::numeric::ln1p(-c)
    }
}

/// Cycle starting with the visit to queue 0, general form. With
/// `intervisit`, the cycle starts at the end of that visit instead and stops
/// at the next visit beginning.
fn general_from_zero(m: &PollingModel, omega: C64, intervisit: bool) -> Result<C64> {
    let n = m.n();
    let psi = psi_all(m, omega)?;
    let mut u = Vec::with_capacity(n);
    for k in 0..n {
        u.push(if intervisit && k == 0 { re(0.0) } else { theta_complement(m, k, psi[2 * k])? });
    }
    let start = if intervisit { PeriodId::switchover(0) } else { PeriodId::visit(0) };
    let mut log = period_beginning_log_tight(m, start, &u)?;
    for k in 0..n {
        log += switch_log(m, k, psi[2 * k + 1]);
    }
    Ok(log.exp())
}

/// Model in which a zero-length queue sits between the visit to `anchor`
/// and its switch-over, relabeled so that this queue comes first.
fn visit_end_view(m: &PollingModel, anchor: usize) -> PollingModel {
    let (aug, _, y, _) = insert_virtual(m, Slot::BeforeSwitch(anchor));
    aug.rotated(y)
}

fn compact(ctx: &Ctx, anchor: usize, variant: CycleVariant, intervisit: bool, omega: C64) -> Result<C64> {
    let m = &ctx.model;
    let i = anchor;
    let gated = m.discipline[i] == Discipline::Gated;
    match (gated, variant, intervisit) {
        (false, CycleVariant::VisitEnding, _) | (_, _, true) | (true, CycleVariant::VisitBeginning, _) => {}
        _ => {
            return Err(PollError::NotApplicable(format!(
                "no compact cycle form for a {} queue anchored at visit {}",
                m.discipline[i],
                if variant == CycleVariant::VisitBeginning { "beginnings" } else { "endings" }
            )))
        }
    }
    let own = 2 * i;
    if gated && !intervisit && m.rate_at(i, own) == 0.0 && ctx.has_length(own) {
        // the previous visit would have to be timed across the gate
        return Err(PollError::NotApplicable(format!(
            "queue {} has no arrivals during its own visit",
            i + 1
        )));
    }
    // periods without type-i arrivals are timed by virtual queues
    let aug = augment(ctx, i, 1.0);
    let a = &aug.model;
    let q = aug.queue;
    let np = a.periods();
    let skip = |p: usize| p == 2 * q && (!gated || intervisit);
    let extra = if !gated && !intervisit { busy_complement(a, q, omega)? } else { re(0.0) };
    let mut u = vec![re(0.0); np * a.n()];
    for p in (0..np).filter(|&p| !skip(p)) {
        let lam = a.rate_at(q, p);
        if lam > 0.0 {
            u[q * np + p] = extra + omega / lam;
        }
    }
    for &(x, o) in aug.virtuals.iter().filter(|&&(_, o)| !skip(o)) {
        u[x * np + o] = omega / a.rate_at(x, o);
    }
    let start = if gated { PeriodId::visit(q) } else { PeriodId::switchover(q) };
    let sm = SubtypeMotion::new(a);
    Ok(sm.log_at_tight(sm.serve_step(q, start), &u)?.exp())
}

fn cycle_eval(ctx: &Ctx, anchor: usize, variant: CycleVariant, form: CycleForm, omega: C64) -> Result<C64> {
    if omega == re(0.0) {
        return Ok(re(1.0));
    }
    match form {
        CycleForm::Compact => compact(ctx, anchor, variant, false, omega),
        CycleForm::General => match variant {
            CycleVariant::VisitBeginning => general_from_zero(&ctx.model.rotated(anchor), omega, false),
            CycleVariant::VisitEnding => general_from_zero(&visit_end_view(&ctx.model, anchor), omega, false),
        },
    }
}

fn intervisit_eval(ctx: &Ctx, i: usize, form: CycleForm, omega: C64) -> Result<C64> {
    if omega == re(0.0) {
        return Ok(re(1.0));
    }
    match form {
        CycleForm::Compact => compact(ctx, i, CycleVariant::VisitBeginning, true, omega),
        CycleForm::General => general_from_zero(&ctx.model.rotated(i), omega, true),
    }
}

fn visit_eval(ctx: &Ctx, i: usize, omega: C64) -> Result<C64> {
    if omega == re(0.0) {
        return Ok(re(1.0));
    }
    let mut u = vec![re(0.0); ctx.model.n()];
    u[i] = theta_complement(&ctx.model, i, omega)?;
    Ok(period_beginning_log_tight(&ctx.model, PeriodId::visit(i), &u)?.exp())
}

pub fn cycle_time_lst(model: &PollingModel, anchor: usize, variant: CycleVariant, form: CycleForm, omega: C64) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(anchor)?;
    cycle_eval(&ctx, anchor, variant, form, omega)
}

pub fn intervisit_lst(model: &PollingModel, i: usize, form: CycleForm, omega: C64) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    intervisit_eval(&ctx, i, form, omega)
}

pub fn visit_time_lst(model: &PollingModel, i: usize, omega: C64) -> Result<C64> {
    let ctx = Ctx::new(model)?;
    ctx.check_queue(i)?;
    visit_eval(&ctx, i, omega)
}

pub fn cycle_time_transform(model: &PollingModel, anchor: usize, variant: CycleVariant, form: CycleForm) -> Result<Transform> {
    let ctx = Arc::new(Ctx::new(model)?);
    ctx.check_queue(anchor)?;
    Ok(Transform::scalar(TransformKind::Lst, move |w| cycle_eval(&ctx, anchor, variant, form, w)))
}

pub fn intervisit_transform(model: &PollingModel, i: usize, form: CycleForm) -> Result<Transform> {
    let ctx = Arc::new(Ctx::new(model)?);
    ctx.check_queue(i)?;
    Ok(Transform::scalar(TransformKind::Lst, move |w| intervisit_eval(&ctx, i, form, w)))
}

pub fn visit_time_transform(model: &PollingModel, i: usize) -> Result<Transform> {
    let ctx = Arc::new(Ctx::new(model)?);
    ctx.check_queue(i)?;
    Ok(Transform::scalar(TransformKind::Lst, move |w| visit_eval(&ctx, i, w)))
}
