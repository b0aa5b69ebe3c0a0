//! Discrete-event simulation of the polling system, used as an independent
//! check on the exact analysis.
//!
//! Each replication owns a ChaCha8 stream (`seed`, stream = replication
//! index), so results do not depend on the thread count.

use crate::error::{PollError, Result};
use crate::model::{validate, Discipline, Distribution, PeriodId, PollingModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp, Gamma};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::VecDeque;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub replications: usize,
    pub events_per_replication: u64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { replications: 20, events_per_replication: 1_000_000, warmup_fraction: 0.2, seed: 1 }
    }
}

impl SimConfig {
    fn check(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(PollError::OutOfRange("at least 2 replications are needed for a confidence interval".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(PollError::OutOfRange(format!("warm-up fraction {} not in [0,1)", self.warmup_fraction)));
        }
        if self.events_per_replication == 0 {
            return Err(PollError::OutOfRange("events per replication must be positive".into()));
        }
        Ok(())
    }
}

/// What an estimate measures. Queue indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Wait(usize),
    /// Time-average number waiting, the customer in service excluded.
    Waiting(usize),
    /// Time-average number present, the customer in service included.
    Present(usize),
    /// Number present seen by an arriving customer (itself excluded).
    AtArrival(usize),
    /// Number left behind by a departing customer.
    AtDeparture(usize),
    Visit(usize),
    Intervisit(usize),
    /// Time between successive visit beginnings at queue 1.
    Cycle,
    Work,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Metric::Wait(i) => write!(f, "W{}", i + 1),
            Metric::Waiting(i) => write!(f, "LQ{}", i + 1),
            Metric::Present(i) => write!(f, "L{}", i + 1),
            Metric::AtArrival(i) => write!(f, "L{}_arrival", i + 1),
            Metric::AtDeparture(i) => write!(f, "L{}_departure", i + 1),
            Metric::Visit(i) => write!(f, "V{}", i + 1),
            Metric::Intervisit(i) => write!(f, "I{}", i + 1),
            Metric::Cycle => write!(f, "C"),
            Metric::Work => write!(f, "work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub metric: Metric,
    /// NaN when no replication produced a sample.
    pub mean: f64,
    /// Half-width of the 95% t-interval over replication means.
    pub half_width: f64,
    /// Replications that contributed a sample.
    pub replications: usize,
}

impl SimEstimate {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub estimates: Vec<SimEstimate>,
    pub warnings: Vec<String>,
}

impl SimReport {
    pub fn get(&self, metric: Metric) -> Option<&SimEstimate> {
        self.estimates.iter().find(|e| e.metric == metric)
    }
}

fn draw(d: &Distribution, rng: &mut ChaCha8Rng) -> f64 {
    match *d {
        Distribution::Zero => 0.0,
        Distribution::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        Distribution::Deterministic { value } => value,
        Distribution::Erlang { shape, rate } => {
            Gamma::new(shape as f64, 1.0 / rate).expect("validated erlang").sample(rng)
        }
        Distribution::HyperExp2 { p, rate1, rate2 } => {
            let r = if rng.random_bool(p) { rate1 } else { rate2 };
            Exp::new(r).expect("validated rate").sample(rng)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Customer {
    arrival: f64,
    work: f64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    sum: f64,
    count: u64,
}

impl Tally {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }
    fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Stats {
    start: f64,
    wait: Vec<Tally>,
    at_arrival: Vec<Tally>,
    at_departure: Vec<Tally>,
    visit: Vec<Tally>,
    intervisit: Vec<Tally>,
    cycle: Tally,
    present_area: Vec<f64>,
    serve_time: Vec<f64>,
    work_area: f64,
}

impl Stats {
    fn new(n: usize, start: f64) -> Self {
        Stats {
            start,
            wait: vec![Tally::default(); n],
            at_arrival: vec![Tally::default(); n],
            at_departure: vec![Tally::default(); n],
            visit: vec![Tally::default(); n],
            intervisit: vec![Tally::default(); n],
            cycle: Tally::default(),
            present_area: vec![0.0; n],
            serve_time: vec![0.0; n],
            work_area: 0.0,
        }
    }
}

struct Replication<'a> {
    m: &'a PollingModel,
    rng: ChaCha8Rng,
    t: f64,
    queues: Vec<VecDeque<Customer>>,
    /// Type-i customers present, the one in service included.
    present: Vec<u64>,
    last_change: Vec<f64>,
    serving: Option<usize>,
    work: f64,
    events: u64,
    warmup: u64,
    total: u64,
    warm: bool,
    stats: Stats,
    /// Time-average total population over the first and second half of
    /// the measured run, for the drift warning.
    half_mark: Option<(f64, f64)>,
    last_visit_end: Vec<Option<f64>>,
    last_cycle_start: Option<f64>,
}

impl<'a> Replication<'a> {
    fn new(m: &'a PollingModel, cfg: &SimConfig, rep: usize) -> Self {
        let n = m.n();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let total = cfg.events_per_replication;
        let warmup = (cfg.warmup_fraction * total as f64).floor() as u64;
        Replication {
            m,
            rng,
            t: 0.0,
            queues: vec![VecDeque::new(); n],
            present: vec![0; n],
            last_change: vec![0.0; n],
            serving: None,
            work: 0.0,
            events: 0,
            warmup,
            total,
            warm: warmup == 0,
            stats: Stats::new(n, 0.0),
            half_mark: None,
            last_visit_end: vec![None; n],
            last_cycle_start: None,
        }
    }

    fn done(&self) -> bool {
        self.events >= self.total
    }

    fn advance(&mut self, to: f64) {
        let dt = to - self.t;
        if let Some(i) = self.serving {
            self.stats.work_area += self.work * dt - 0.5 * dt * dt;
            self.work = (self.work - dt).max(0.0);
            self.stats.serve_time[i] += dt;
        } else {
            self.stats.work_area += self.work * dt;
        }
        self.t = to;
    }

    fn set_present(&mut self, i: usize, value: u64) {
        self.stats.present_area[i] += self.present[i] as f64 * (self.t - self.last_change[i]);
        self.last_change[i] = self.t;
        self.present[i] = value;
    }

    fn flush_areas(&mut self) {
        for i in 0..self.m.n() {
            self.set_present(i, self.present[i]);
        }
    }

    fn event(&mut self) {
        self.events += 1;
        if !self.warm && self.events >= self.warmup {
            self.warm = true;
            self.flush_areas();
            self.stats = Stats::new(self.m.n(), self.t);
            self.last_visit_end.iter_mut().for_each(|v| *v = None);
            self.last_cycle_start = None;
        }
        if self.warm && self.half_mark.is_none() && self.events >= self.warmup + (self.total - self.warmup) / 2 {
            self.flush_areas();
            let area: f64 = self.stats.present_area.iter().sum();
            self.half_mark = Some((self.t, area));
        }
    }

    /// Arrivals over [t, t+d) at the rates of period p, then time moves to
    /// t+d. Pending arrivals are redrawn at every period boundary.
    fn pass(&mut self, d: f64, p: usize) {
        let end = self.t + d;
        let n = self.m.n();
        let total: f64 = (0..n).map(|i| self.m.rate_at(i, p)).sum();
        if total > 0.0 {
            let gap = Exp::new(total).expect("positive total rate");
            loop {
                let next = self.t + gap.sample(&mut self.rng);
                if next >= end {
                    break;
                }
                self.advance(next);
                let mut x = self.rng.random::<f64>() * total;
                let mut q = n - 1;
                for i in 0..n {
                    let r = self.m.rate_at(i, p);
                    if x < r {
                        q = i;
                        break;
                    }
                    x -= r;
                }
                if self.m.rate_at(q, p) == 0.0 {
                    // rounding landed past the last positive rate
                    q = (0..n).rev().find(|&i| self.m.rate_at(i, p) > 0.0).expect("some positive rate");
                }
                let work = draw(&self.m.service[q], &mut self.rng);
                if self.warm {
                    self.stats.at_arrival[q].add(self.present[q] as f64);
                }
                self.queues[q].push_back(Customer { arrival: self.t, work });
                self.set_present(q, self.present[q] + 1);
                self.work += work;
                self.event();
                if self.done() {
                    return;
                }
            }
        }
        self.advance(end);
    }

    fn serve_one(&mut self, i: usize) {
        let c = self.queues[i].pop_front().expect("queue checked non-empty");
        if self.warm {
            self.stats.wait[i].add(self.t - c.arrival);
        }
        self.serving = Some(i);
        self.pass(c.work, 2 * i);
        if self.done() {
            return;
        }
        self.serving = None;
        self.set_present(i, self.present[i] - 1);
        if self.warm {
            self.stats.at_departure[i].add(self.present[i] as f64);
        }
        self.event();
    }

    fn visit(&mut self, i: usize) {
        let start = self.t;
        if let Some(end) = self.last_visit_end[i] {
            self.stats.intervisit[i].add(start - end);
        }
        if i == 0 {
            if let Some(c) = self.last_cycle_start {
                self.stats.cycle.add(start - c);
            }
            self.last_cycle_start = self.warm.then_some(start);
        }
        match self.m.discipline[i] {
            Discipline::Exhaustive => {
                while !self.queues[i].is_empty() {
                    self.serve_one(i);
                    if self.done() {
                        return;
                    }
                }
            }
            Discipline::Gated => {
                for _ in 0..self.queues[i].len() {
                    self.serve_one(i);
                    if self.done() {
                        return;
                    }
                }
            }
        }
        debug_assert!(self.m.discipline[i] == Discipline::Gated || self.queues[i].is_empty());
        if self.warm && start >= self.stats.start {
            self.stats.visit[i].add(self.t - start);
        }
        self.last_visit_end[i] = self.warm.then_some(self.t);
    }

    fn run(mut self) -> RepResult {
        let n = self.m.n();
        'outer: loop {
            for i in 0..n {
                self.visit(i);
                if self.done() {
                    break 'outer;
                }
                let s = draw(&self.m.switchover[i], &mut self.rng);
                self.pass(s, PeriodId::switchover(i).index());
                if self.done() {
                    break 'outer;
                }
                self.event();
                if self.done() {
                    break 'outer;
                }
            }
        }
        self.flush_areas();
        let span = self.t - self.stats.start;
        let s = &self.stats;
        let mut values = Vec::new();
        for i in 0..n {
            let l = s.present_area[i] / span;
            values.push((Metric::Wait(i), s.wait[i].mean()));
            values.push((Metric::Waiting(i), l - s.serve_time[i] / span));
            values.push((Metric::Present(i), l));
            values.push((Metric::AtArrival(i), s.at_arrival[i].mean()));
            values.push((Metric::AtDeparture(i), s.at_departure[i].mean()));
            values.push((Metric::Visit(i), s.visit[i].mean()));
            values.push((Metric::Intervisit(i), s.intervisit[i].mean()));
        }
        values.push((Metric::Cycle, s.cycle.mean()));
        values.push((Metric::Work, s.work_area / span));
        let drift = self.half_mark.map(|(t_mid, area_mid)| {
            let total_area: f64 = s.present_area.iter().sum();
            let first = area_mid / (t_mid - s.start);
            let second = (total_area - area_mid) / (self.t - t_mid);
            (first, second)
        });
        RepResult { values, drift }
    }
}

struct RepResult {
    values: Vec<(Metric, f64)>,
    drift: Option<(f64, f64)>,
}

pub fn simulate(model: &PollingModel, config: &SimConfig) -> Result<SimReport> {
    let v = validate(model);
    if !v.is_empty() {
        return Err(PollError::InvalidModel(v.join("; ")));
    }
    config.check()?;
    let results: Vec<RepResult> = (0..config.replications)
        .into_par_iter()
        .map(|r| Replication::new(model, config, r).run())
        .collect();
    let metrics: Vec<Metric> = results[0].values.iter().map(|(m, _)| *m).collect();
    let estimates = metrics
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let xs: Vec<f64> = results.iter().map(|r| r.values[k].1).filter(|x| x.is_finite()).collect();
            summarize(metric, &xs)
        })
        .collect();
    let mut warnings = Vec::new();
    let drifting = results
        .iter()
        .filter_map(|r| r.drift)
        .filter(|&(a, b)| b > 1.2 * a + 1.0)
        .count();
    if 2 * drifting > results.len() {
        warnings.push(format!(
            "queue contents grow in {drifting} of {} replications; the model is probably unstable",
            results.len()
        ));
    }
    Ok(SimReport { estimates, warnings })
}

fn summarize(metric: Metric, xs: &[f64]) -> SimEstimate {
    let k = xs.len();
    if k == 0 {
        return SimEstimate { metric, mean: f64::NAN, half_width: f64::NAN, replications: 0 };
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    let half_width = if k < 2 {
        f64::INFINITY
    } else {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (k - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
        t * (var / k as f64).sqrt()
    };
    SimEstimate { metric, mean, half_width, replications: k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::example2;

    fn cfg(reps: usize, events: u64, seed: u64) -> SimConfig {
        SimConfig { replications: reps, events_per_replication: events, warmup_fraction: 0.2, seed }
    }

    #[test]
    fn vacation_queue_wait() {
        let m = PollingModel::uniform(1, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.5);
        let r = simulate(&m, &cfg(10, 200_000, 3)).unwrap();
        let w = r.get(Metric::Wait(0)).unwrap();
        assert!(w.contains(2.0) || (w.mean - 2.0).abs() < 0.05, "{w:?}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn example2_wait() {
        let r = simulate(&example2(), &cfg(10, 300_000, 5)).unwrap();
        let w = r.get(Metric::Wait(0)).unwrap();
        assert!((w.mean - 3.75).abs() < 0.15, "{w:?}");
    }

    #[test]
    fn no_arrivals_means_empty_samples() {
        let m = PollingModel::uniform(2, Discipline::Gated, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.0);
        let r = simulate(&m, &cfg(2, 1_000, 1)).unwrap();
        assert!(r.get(Metric::Wait(0)).unwrap().mean.is_nan());
        assert_eq!(r.get(Metric::Present(1)).unwrap().mean, 0.0);
        assert_eq!(r.get(Metric::Work).unwrap().mean, 0.0);
    }

    #[test]
    fn reproducible_for_a_seed() {
        let m = example2();
        let a = simulate(&m, &cfg(4, 20_000, 9)).unwrap();
        let b = simulate(&m, &cfg(4, 20_000, 9)).unwrap();
        assert_eq!(a.estimates, b.estimates);
        let c = simulate(&m, &cfg(4, 20_000, 10)).unwrap();
        assert_ne!(a.estimates, c.estimates);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let m = example2();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| simulate(&m, &cfg(4, 20_000, 9)).unwrap());
        let b = simulate(&m, &cfg(4, 20_000, 9)).unwrap();
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn unstable_model_is_flagged() {
        let m = PollingModel::uniform(2, Discipline::Exhaustive, Distribution::exp_mean(1.0), Distribution::exp_mean(1.0), 0.8);
        let r = simulate(&m, &cfg(4, 100_000, 2)).unwrap();
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn bad_config_rejected() {
        let m = example2();
        assert!(simulate(&m, &cfg(1, 10, 1)).is_err());
        let mut c = cfg(2, 10, 1);
        c.warmup_fraction = 1.0;
        assert!(simulate(&m, &c).is_err());
    }
}
