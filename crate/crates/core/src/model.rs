//! Polling-system data model: distributions, periods, the model itself and
//! routing profiles.

use crate::error::{PollError, Result};
use crate::numeric::{expm1, ln1p, re, C64};
use std::fmt;

/// Service or switch-over time distribution. Rates are events per time unit.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// Point mass at 0 (virtual queues only).
    Zero,
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    /// `shape` phases, each exponential with `rate`.
    Erlang { shape: u32, rate: f64 },
    /// With probability `p` exponential(`rate1`), otherwise exponential(`rate2`).
    HyperExp2 { p: f64, rate1: f64, rate2: f64 },
}

impl Distribution {
    pub fn exp_mean(mean: f64) -> Self {
        if mean == 0.0 {
            Distribution::Zero
        } else {
            Distribution::Exponential { rate: 1.0 / mean }
        }
    }

    /// Raw moment E[X^k] for k in 1..=3.
    pub fn moment(&self, k: u32) -> f64 {
        assert!((1..=3).contains(&k), "moment order {k} not supported");
        let fact = [1.0, 1.0, 2.0, 6.0][k as usize];
        match *self {
            Distribution::Zero => 0.0,
            Distribution::Exponential { rate } => fact / rate.powi(k as i32),
            Distribution::Deterministic { value } => value.powi(k as i32),
            Distribution::Erlang { shape, rate } => {
                let s = shape as f64;
                (0..k).map(|j| s + j as f64).product::<f64>() / rate.powi(k as i32)
            }
            Distribution::HyperExp2 { p, rate1, rate2 } => {
                fact * (p / rate1.powi(k as i32) + (1.0 - p) / rate2.powi(k as i32))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Same family rescaled in time to the given mean. The point mass becomes
    /// exponential; a mean of 0 gives the point mass.
    pub fn with_mean(&self, mean: f64) -> Self {
        if mean == 0.0 {
            return Distribution::Zero;
        }
        let c = self.mean() / mean;
        match *self {
            Distribution::Zero => Distribution::exp_mean(mean),
            Distribution::Exponential { rate } => Distribution::Exponential { rate: rate * c },
            Distribution::Deterministic { .. } => Distribution::Deterministic { value: mean },
            Distribution::Erlang { shape, rate } => Distribution::Erlang { shape, rate: rate * c },
            Distribution::HyperExp2 { p, rate1, rate2 } => Distribution::HyperExp2 { p, rate1: rate1 * c, rate2: rate2 * c },
        }
    }

    /// Stationary-excess mean E[X^2]/(2E[X]); 0 for the point mass.
    pub fn residual_mean(&self) -> f64 {
        let m = self.mean();
        if m == 0.0 {
            0.0
        } else {
            self.moment(2) / (2.0 * m)
        }
    }

    /// Laplace-Stieltjes transform E[exp(-s X)].
    pub fn lst(&self, s: C64) -> C64 {
        match *self {
            Distribution::Zero => re(1.0),
            Distribution::Exponential { rate } => re(rate) / (s + rate),
            Distribution::Deterministic { value } => (-s * value).exp(),
            Distribution::Erlang { shape, rate } => (re(rate) / (s + rate)).powu(shape),
            Distribution::HyperExp2 { p, rate1, rate2 } => {
                re(p * rate1) / (s + rate1) + re((1.0 - p) * rate2) / (s + rate2)
            }
        }
    }

    pub fn lst_real(&self, s: f64) -> f64 {
        self.lst(re(s)).re
    }

    /// 1 - lst(s), evaluated without cancellation for small s.
    pub fn lst_complement(&self, s: C64) -> C64 {
        match *self {
            Distribution::Zero => re(0.0),
            Distribution::Exponential { rate } => s / (s + rate),
            Distribution::Deterministic { value } => -expm1(-s * value),
            Distribution::Erlang { shape, rate } => -expm1(-ln1p(s / rate) * shape as f64),
            Distribution::HyperExp2 { p, rate1, rate2 } => {
                s / (s + rate1) * p + s / (s + rate2) * (1.0 - p)
            }
        }
    }

    fn check(&self) -> Option<String> {
        let bad = |x: f64| !(x.is_finite() && x > 0.0);
        match *self {
            Distribution::Zero => None,
            Distribution::Exponential { rate } if bad(rate) => {
                Some(format!("exponential rate {rate} must be positive"))
            }
            Distribution::Deterministic { value } if !(value.is_finite() && value >= 0.0) => {
                Some(format!("deterministic value {value} must be non-negative"))
            }
            Distribution::Erlang { shape, rate } if shape == 0 || bad(rate) => {
                Some(format!("erlang({shape}, {rate}) needs shape >= 1 and positive rate"))
            }
            Distribution::HyperExp2 { p, rate1, rate2 }
                if !(0.0..=1.0).contains(&p) || bad(rate1) || bad(rate2) =>
            {
                Some(format!("hyperexponential({p}, {rate1}, {rate2}) has bad parameters"))
            }
            _ => None,
        }
    }

    /// Equality by family and parameters.
    pub fn same_as(&self, other: &Distribution) -> bool {
        self == other
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Distribution::Zero => write!(f, "zero"),
            Distribution::Exponential { rate } => write!(f, "exp {rate:?}"),
            Distribution::Deterministic { value } => write!(f, "det {value:?}"),
            Distribution::Erlang { shape, rate } => write!(f, "erlang {shape} {rate:?}"),
            Distribution::HyperExp2 { p, rate1, rate2 } => {
                write!(f, "hyperexp {p:?} {rate1:?} {rate2:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeriodKind {
    Visit,
    Switchover,
}

/// A period in the cycle. `queue` is 0-based internally; it prints 1-based
/// (`V1`, `S1`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeriodId {
    pub kind: PeriodKind,
    pub queue: usize,
}

impl PeriodId {
    pub fn visit(queue: usize) -> Self {
        PeriodId { kind: PeriodKind::Visit, queue }
    }

    pub fn switchover(queue: usize) -> Self {
        PeriodId { kind: PeriodKind::Switchover, queue }
    }

    /// Position in the cycle V1,S1,...,VN,SN (0-based).
    pub fn index(self) -> usize {
        2 * self.queue + usize::from(self.kind == PeriodKind::Switchover)
    }

    pub fn from_index(p: usize, n: usize) -> Self {
        let p = p % (2 * n);
        if p.is_multiple_of(2) {
            PeriodId::visit(p / 2)
        } else {
            PeriodId::switchover(p / 2)
        }
    }

    pub fn is_visit(self) -> bool {
        self.kind == PeriodKind::Visit
    }

    pub fn label(self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (kind, rest) = match s.chars().next()? {
            'V' | 'v' => (PeriodKind::Visit, &s[1..]),
            'S' | 's' => (PeriodKind::Switchover, &s[1..]),
            _ => return None,
        };
        let q: usize = rest.parse().ok()?;
        if q == 0 {
            return None;
        }
        Some(PeriodId { kind, queue: q - 1 })
    }
}

impl fmt::Display for PeriodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = if self.is_visit() { 'V' } else { 'S' };
        write!(f, "{c}{}", self.queue + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Discipline {
    Exhaustive,
    Gated,
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discipline::Exhaustive => write!(f, "exhaustive"),
            Discipline::Gated => write!(f, "gated"),
        }
    }
}

/// N queues served cyclically. `rates[i][p]` is the arrival rate at queue i
/// while the server is in the period with cycle position p.
#[derive(Debug, Clone, PartialEq)]
pub struct PollingModel {
    pub discipline: Vec<Discipline>,
    pub service: Vec<Distribution>,
    pub switchover: Vec<Distribution>,
    pub rates: Vec<Vec<f64>>,
}

impl PollingModel {
    pub fn new(
        discipline: Vec<Discipline>,
        service: Vec<Distribution>,
        switchover: Vec<Distribution>,
        rates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = PollingModel { discipline, service, switchover, rates };
        let v = validate(&m);
        if v.is_empty() {
            Ok(m)
        } else {
            Err(PollError::InvalidModel(v.join("; ")))
        }
    }

    /// All queues share discipline, service and switch-over distributions.
    pub fn uniform(
        n: usize,
        discipline: Discipline,
        service: Distribution,
        switchover: Distribution,
        rate: f64,
    ) -> Self {
        PollingModel {
            discipline: vec![discipline; n],
            service: vec![service; n],
            switchover: vec![switchover; n],
            rates: vec![vec![rate; 2 * n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.discipline.len()
    }

    pub fn periods(&self) -> usize {
        2 * self.n()
    }

    pub fn rate(&self, queue: usize, period: PeriodId) -> f64 {
        self.rates[queue][period.index()]
    }

    pub fn rate_at(&self, queue: usize, p: usize) -> f64 {
        self.rates[queue][p % self.periods()]
    }

    pub fn set_rate(&mut self, queue: usize, period: PeriodId, value: f64) {
        self.rates[queue][period.index()] = value;
    }

    pub fn mean_service(&self, i: usize) -> f64 {
        self.service[i].mean()
    }

    pub fn mean_switchover(&self, i: usize) -> f64 {
        self.switchover[i].mean()
    }

    /// Own-visit load rho_ii.
    pub fn own_load(&self, i: usize) -> f64 {
        self.rate(i, PeriodId::visit(i)) * self.mean_service(i)
    }

    pub fn total_switchover(&self) -> f64 {
        (0..self.n()).map(|i| self.mean_switchover(i)).sum()
    }

    /// True when every queue sees the same rate in every period.
    pub fn has_constant_rates(&self) -> bool {
        self.rates.iter().all(|row| row.iter().all(|&r| r == row[0]))
    }

    /// Relabel so that queue `k` becomes queue 0 (cyclic order preserved).
    pub fn rotated(&self, k: usize) -> PollingModel {
        let n = self.n();
        let idx = |i: usize| (i + k) % n;
        let np = self.periods();
        PollingModel {
            discipline: (0..n).map(|i| self.discipline[idx(i)]).collect(),
            service: (0..n).map(|i| self.service[idx(i)].clone()).collect(),
            switchover: (0..n).map(|i| self.switchover[idx(i)].clone()).collect(),
            rates: (0..n)
                .map(|i| (0..np).map(|p| self.rates[idx(i)][(p + 2 * k) % np]).collect())
                .collect(),
        }
    }
}

/// Assignment of one target queue to every period (0-based queue indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyProfile {
    pub target: Vec<usize>,
}

impl StrategyProfile {
    pub fn new(target: Vec<usize>) -> Self {
        StrategyProfile { target }
    }

    /// Parse "1,2,2,3,3,1" (1-based, `X` allowed and mapped to `wildcard`).
    pub fn parse(s: &str, wildcard: usize) -> Option<Self> {
        let mut target = Vec::new();
        for tok in s.trim_matches(|c| c == '(' || c == ')').split(',') {
            let tok = tok.trim();
            if tok.eq_ignore_ascii_case("x") {
                target.push(wildcard);
            } else {
                let q: usize = tok.parse().ok()?;
                if q == 0 {
                    return None;
                }
                target.push(q - 1);
            }
        }
        Some(StrategyProfile { target })
    }
}

/// Every violated invariant, described for humans. Empty means the model can
/// be analysed.
pub fn validate(model: &PollingModel) -> Vec<String> {
    let mut out = Vec::new();
    let n = model.n();
    if n == 0 {
        out.push("queue count must be at least 1".to_string());
        return out;
    }
    if model.service.len() != n || model.switchover.len() != n {
        out.push(format!(
            "expected {n} service and switch-over distributions, got {} and {}",
            model.service.len(),
            model.switchover.len()
        ));
        return out;
    }
    if model.rates.len() != n || model.rates.iter().any(|r| r.len() != 2 * n) {
        out.push(format!("rate matrix must be {n} x {}", 2 * n));
        return out;
    }
    for (i, d) in model.service.iter().enumerate() {
        if let Some(msg) = d.check() {
            out.push(format!("queue {}: service {msg}", i + 1));
        }
    }
    for (i, d) in model.switchover.iter().enumerate() {
        if let Some(msg) = d.check() {
            out.push(format!("queue {}: switch-over {msg}", i + 1));
        }
    }
    if model.switchover.iter().all(|s| s.mean() <= 0.0) {
        out.push("no positive switch-over: at least one switch-over time must have positive mean".to_string());
    }
    for (i, row) in model.rates.iter().enumerate() {
        for (p, &r) in row.iter().enumerate() {
            let label = PeriodId::from_index(p, n);
            if !r.is_finite() {
                out.push(format!("rate of queue {} during {label} is not finite", i + 1));
            } else if r < 0.0 {
                out.push(format!("negative rate {r} for queue {} during {label}", i + 1));
            }
        }
    }
    out
}

/// One full cycle of periods beginning at `start`.
pub fn period_sequence(model: &PollingModel, start: PeriodId) -> Result<Vec<PeriodId>> {
    let n = model.n();
    if start.queue >= n {
        return Err(PollError::OutOfRange(format!("{start} in a {n}-queue model")));
    }
    let s = start.index();
    Ok((0..2 * n).map(|k| PeriodId::from_index(s + k, n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rescaling_keeps_shape() {
        let cases = [
            Distribution::Exponential { rate: 2.0 },
            Distribution::Deterministic { value: 0.5 },
            Distribution::Erlang { shape: 3, rate: 4.0 },
            Distribution::HyperExp2 { p: 0.3, rate1: 1.0, rate2: 5.0 },
        ];
        for d in cases {
            let e = d.with_mean(2.5);
            assert!((e.mean() - 2.5).abs() < 1e-12, "{e:?}");
            let cv2 = |x: &Distribution| x.moment(2) / (x.mean() * x.mean());
            assert!((cv2(&d) - cv2(&e)).abs() < 1e-12, "{e:?}");
        }
        assert_eq!(Distribution::Exponential { rate: 1.0 }.with_mean(0.0), Distribution::Zero);
        assert_eq!(Distribution::Zero.with_mean(2.0), Distribution::Exponential { rate: 0.5 });
    }

    pub(crate) fn example2() -> PollingModel {
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

    #[test]
    fn validate_flags_missing_positive_switchover() {
        let mut m = example2();
        m.switchover = vec![Distribution::Zero; 2];
        let v = validate(&m);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("no positive switch-over"));
    }

    #[test]
    fn validate_accepts_example_two() {
        assert!(validate(&example2()).is_empty());
    }

    #[test]
    fn validate_flags_negative_rate() {
        let mut m = example2();
        m.rates[1][2] = -0.1;
        let v = validate(&m);
        assert!(v.iter().any(|s| s.contains("negative rate")));
    }

    #[test]
    fn period_sequences() {
        let m2 = example2();
        let names = |v: Vec<PeriodId>| v.iter().map(|p| p.label()).collect::<Vec<_>>();
        assert_eq!(
            names(period_sequence(&m2, PeriodId::visit(0)).unwrap()),
            ["V1", "S1", "V2", "S2"]
        );
        let m3 = PollingModel::uniform(3, Discipline::Gated, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.1);
        assert_eq!(
            names(period_sequence(&m3, PeriodId::switchover(1)).unwrap()),
            ["S2", "V3", "S3", "V1", "S1", "V2"]
        );
        let m1 = PollingModel::uniform(1, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.5);
        assert_eq!(names(period_sequence(&m1, PeriodId::visit(0)).unwrap()), ["V1", "S1"]);
        assert!(period_sequence(&m1, PeriodId::visit(3)).is_err());
    }

    #[test]
    fn moments_of_families() {
        let e = Distribution::Erlang { shape: 3, rate: 2.0 };
        assert!((e.mean() - 1.5).abs() < 1e-15);
        assert!((e.moment(2) - 3.0).abs() < 1e-15);
        let h = Distribution::HyperExp2 { p: 0.25, rate1: 1.0, rate2: 4.0 };
        assert!((h.moment(2) - 2.0 * (0.25 + 0.75 / 16.0)).abs() < 1e-15);
        assert_eq!(Distribution::Zero.residual_mean(), 0.0);
        assert!((Distribution::exp_mean(2.0).residual_mean() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_moves_queue_to_front() {
        let m = example2();
        let r = m.rotated(1);
        assert_eq!(r.rate(1, PeriodId::visit(0)), 0.0);
        assert_eq!(r.rotated(1), m);
    }

    fn families() -> Vec<Distribution> {
        vec![
            Distribution::Exponential { rate: 0.7 },
            Distribution::Deterministic { value: 1.3 },
            Distribution::Erlang { shape: 4, rate: 3.0 },
            Distribution::HyperExp2 { p: 0.3, rate1: 0.5, rate2: 5.0 },
        ]
    }

    #[test]
    fn lst_derivative_matches_mean() {
        for d in families() {
            let est = crate::numeric::derivative(|s| Ok(d.lst_real(s)), 0.0, 1.0, 1).unwrap();
            assert!(((-est.value) - d.mean()).abs() <= 1e-6 * d.mean(), "{d}");
            assert!(d.moment(2) >= d.mean() * d.mean());
        }
    }

    proptest! {
        #[test]
        fn lst_is_in_unit_interval_and_nonincreasing(idx in 0usize..4, a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let d = &families()[idx];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (fl, fh) = (d.lst_real(lo), d.lst_real(hi));
            prop_assert!(fl > 0.0 && fl <= 1.0);
            prop_assert!(fh > 0.0 && fh <= 1.0);
            prop_assert!(fh <= fl + 1e-15);
            prop_assert_eq!(d.lst_real(0.0), 1.0);
        }

        #[test]
        fn period_sequence_is_cyclic(n in 1usize..6, start in 0usize..12) {
            let m = PollingModel::uniform(n, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.01);
            let s = PeriodId::from_index(start, n);
            let seq = period_sequence(&m, s).unwrap();
            prop_assert_eq!(seq.len(), 2 * n);
            prop_assert_eq!(seq[0], s);
            // N periods on, a second sequence wraps back to the start after another N
            let mid = period_sequence(&m, seq[n]).unwrap();
            prop_assert_eq!(mid[n], s);
        }
    }
}
