use crate::model_file::{self, ModelFile};
use crate::output::{digest, num, Manifest, Table};
use crate::{FormArg, ModelArgs, OutArgs, TransformArg, UsageError, VariantArg};
use anyhow::{anyhow, Context, Result};
use smartpoll::distributions::{
    cycle_time_transform, intervisit_transform, marginal_ql_transform, visit_time_transform, waiting_time_transform,
    CycleForm, CycleVariant, Epoch,
};
use smartpoll::mva::solve_mva;
use smartpoll::numeric::derivative;
use smartpoll::pcl::{classical_pcl, mean_work, pcl_verify};
use smartpoll::simulator::{simulate as run_simulation, Metric, SimConfig};
use smartpoll::stability::effective_stability_report;
use smartpoll::strategy::{self, CanonicalProfile, Objective};
use smartpoll::transforms::{transform_moment, Transform, TransformKind};
use smartpoll::{PeriodId, PollError, PollingModel, StrategyProfile};
use std::fmt::Write as _;
use std::path::Path;

/// The model file could not be read.
#[derive(Debug)]
pub struct ReadError(pub String);

impl std::fmt::Display for ReadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ReadError {}

struct Loaded {
    model: PollingModel,
    arrival_rate: Option<f64>,
    has_rates: bool,
    config: Vec<(String, String)>,
}

fn load(args: &ModelArgs) -> Result<Loaded> {
    let path = args.model.display().to_string();
    let text = std::fs::read_to_string(&args.model).map_err(|e| ReadError(format!("cannot read {path}: {e}")))?;
    let ModelFile { mut model, arrival_rate, has_rates } =
        model_file::parse(&text).map_err(|e| anyhow::Error::new(e).context(path.clone()))?;
    let arrival_rate = match args.arrival_rate {
        Some(r) if !(r.is_finite() && r > 0.0) => return Err(UsageError(format!("--arrival-rate must be positive, got {r}")).into()),
        Some(r) => Some(r),
        None => arrival_rate,
    };
    let mut config = Vec::new();
    let mut has_rates = has_rates;
    if let Some(s) = &args.strategy {
        let rate = arrival_rate.ok_or_else(|| UsageError("--strategy needs --arrival-rate or `arrival_rate` in the model file".into()))?;
        let profile = parse_profile(s, model.n())?;
        if has_rates {
            eprintln!("smartpoll: the strategy replaces the rate table of {path}");
        }
        model = strategy::apply_strategy(&model, &profile, rate)?;
        has_rates = true;
        config.push(("strategy".into(), s.clone()));
    }
    if args.dump_model {
        print!("{}", model_file::dump(&model, arrival_rate));
        std::process::exit(0);
    }
    Ok(Loaded { model, arrival_rate, has_rates, config })
}

fn parse_profile(s: &str, n: usize) -> Result<StrategyProfile> {
    let p = StrategyProfile::parse(s, 0)
        .filter(|p| p.target.len() == 2 * n && p.target.iter().all(|&q| q < n))
        .ok_or_else(|| UsageError(format!("strategy `{s}` must list {} queues from 1..{n} (or X)", 2 * n)))?;
    Ok(p)
}

fn need_rates(l: &Loaded) -> Result<()> {
    if l.has_rates {
        Ok(())
    } else {
        Err(UsageError("the model file has no `rates:` table; add one or pass --strategy".into()).into())
    }
}

fn manifest(command: &str, l: &Loaded, mut config: Vec<(String, String)>, seed: Option<u64>) -> Manifest {
    let mut all = l.config.clone();
    all.append(&mut config);
    Manifest {
        command: command.into(),
        model_digest: digest(&model_file::dump(&l.model, l.arrival_rate)),
        config: all,
        seed,
    }
}

fn emit(path: Option<&Path>, m: &Manifest, body: &str) -> Result<()> {
    let text = format!("{}{body}", m.header());
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn queue_index(q: usize, n: usize) -> Result<usize> {
    if q == 0 || q > n {
        return Err(UsageError(format!("queue {q} out of range 1..{n}")).into());
    }
    Ok(q - 1)
}

fn check_stable(model: &PollingModel) -> Result<()> {
    let rep = effective_stability_report(model)?;
    if !rep.stable {
        return Err(PollError::Unstable { margin: rep.margin }).context("the model is not stable; no stationary results exist");
    }
    Ok(())
}

pub fn analyze(args: &ModelArgs, out: &OutArgs) -> Result<()> {
    let l = load(args)?;
    need_rates(&l)?;
    let m = &l.model;
    let rep = effective_stability_report(m)?;
    if !rep.stable {
        return Err(PollError::Unstable { margin: rep.margin }).context("the model is not stable");
    }
    let sol = solve_mva(m)?;
    let n = m.n();
    let mut body = String::new();
    let summary = [
        ("stability_margin", num(rep.margin)),
        ("mean_cycle", num(sol.mean_cycle)),
        ("load", num(sol.rho_bar)),
        ("mean_work", num(mean_work(m, &sol))),
        ("rank", format!("{} of {}", sol.rank, sol.unknowns)),
    ];
    for (k, v) in summary {
        if out.csv {
            let _ = writeln!(body, "# {k} = {v}");
        } else {
            let _ = writeln!(body, "{k}: {v}");
        }
    }
    if !rep.zero_visit_queues.is_empty() {
        let qs: Vec<String> = rep.zero_visit_queues.iter().map(|q| (q + 1).to_string()).collect();
        eprintln!("smartpoll: queues with zero mean visit time: {}", qs.join(" "));
    }
    if !out.csv {
        body.push('\n');
    }
    let mut t = Table::new(&["queue", "arrival_rate", "load", "visit", "intervisit", "wait", "waiting", "present"]);
    for i in 0..n {
        t.push(vec![
            (i + 1).to_string(),
            num(sol.eff_rate[i]),
            num(sol.eff_load[i]),
            num(sol.mean_visit[i]),
            num(sol.mean_cycle - sol.mean_visit[i]),
            num(sol.wait[i]),
            num(sol.queue_len[i]),
            num(sol.queue_len_with_service(i)),
        ]);
    }
    body.push_str(&t.render(out.csv));
    emit(out.output.as_deref(), &manifest("analyze", &l, vec![], None), &body)
}

fn mean_and_sd(t: &Transform) -> smartpoll::Result<(f64, f64)> {
    let m1 = transform_moment(t, 1, None)?.value;
    let m2 = transform_moment(t, 2, None)?.value;
    Ok((m1, (m2 - m1 * m1).max(0.0).sqrt()))
}

fn cell(r: smartpoll::Result<f64>) -> Result<String> {
    match r {
        Ok(x) => Ok(num(x)),
        Err(PollError::NotApplicable(_)) => Ok("n/a".into()),
        Err(e) => Err(e.into()),
    }
}

pub fn moments(args: &ModelArgs, out: &OutArgs) -> Result<()> {
    let l = load(args)?;
    need_rates(&l)?;
    let m = &l.model;
    check_stable(m)?;
    let n = m.n();
    let ql = |i: usize, e: Epoch| -> smartpoll::Result<f64> { Ok(transform_moment(&marginal_ql_transform(m, i, e)?.transform, 1, None)?.value) };
    let wt = |i: usize| -> smartpoll::Result<(f64, f64)> {
        mean_and_sd(&waiting_time_transform(m, i)?.transform)
    };
    let header: Vec<String> = std::iter::once("quantity".to_string()).chain((1..=n).map(|i| format!("Q{i}"))).collect();
    let mut t = Table { header, rows: Vec::new() };
    let rows: [(&str, Epoch); 3] = [
        ("queue length at arrival", Epoch::Arrival),
        ("queue length at departure", Epoch::Departure),
        ("queue length at arbitrary epoch", Epoch::Arbitrary),
    ];
    for (label, e) in rows {
        let mut row = vec![label.to_string()];
        for i in 0..n {
            row.push(cell(ql(i, e))?);
        }
        t.push(row);
    }
    let w: Vec<smartpoll::Result<(f64, f64)>> = (0..n).map(wt).collect();
    let mut mean_row = vec!["waiting time mean".to_string()];
    let mut sd_row = vec!["waiting time std dev".to_string()];
    for r in w {
        mean_row.push(cell(r.clone().map(|x| x.0))?);
        sd_row.push(cell(r.map(|x| x.1))?);
    }
    t.push(mean_row);
    t.push(sd_row);
    emit(out.output.as_deref(), &manifest("moments", &l, vec![], None), &t.render(out.csv))
}

pub struct LstArgs {
    pub transform: TransformArg,
    pub queue: usize,
    pub epoch: String,
    pub variant: VariantArg,
    pub form: FormArg,
    pub from: f64,
    pub to: Option<f64>,
    pub points: usize,
}

fn parse_epoch(s: &str) -> Result<Epoch> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "arbitrary" => Epoch::Arbitrary,
        "arrival" => Epoch::Arrival,
        "departure" => Epoch::Departure,
        _ => Epoch::During(
            PeriodId::parse(s).ok_or_else(|| UsageError(format!("epoch `{s}`: expected arrival, departure, arbitrary or a period label")))?,
        ),
    })
}

pub fn lst(args: &ModelArgs, a: LstArgs, output: Option<&Path>) -> Result<()> {
    let l = load(args)?;
    need_rates(&l)?;
    let m = &l.model;
    check_stable(m)?;
    let i = queue_index(a.queue, m.n())?;
    if let Epoch::During(p) = parse_epoch(&a.epoch)? {
        queue_index(p.queue + 1, m.n())?;
    }
    let form = match a.form {
        FormArg::General => CycleForm::General,
        FormArg::Compact => CycleForm::Compact,
    };
    let t = match a.transform {
        TransformArg::Waiting => waiting_time_transform(m, i)?.transform,
        TransformArg::QueueLength => marginal_ql_transform(m, i, parse_epoch(&a.epoch)?)?.transform,
        TransformArg::Cycle => {
            let v = match a.variant {
                VariantArg::Begin => CycleVariant::VisitBeginning,
                VariantArg::End => CycleVariant::VisitEnding,
            };
            cycle_time_transform(m, i, v, form)?
        }
        TransformArg::Intervisit => intervisit_transform(m, i, form)?,
        TransformArg::Visit => visit_time_transform(m, i)?,
    };
    let to = a.to.unwrap_or(if t.kind == TransformKind::Pgf { 1.0 } else { 2.0 });
    if a.points < 2 || !(to > a.from) {
        return Err(UsageError("need --points >= 2 and --to greater than --from".into()).into());
    }
    let mut table = Table::new(&["argument", "value", "first_derivative", "second_derivative"]);
    for k in 0..a.points {
        let x = a.from + (to - a.from) * k as f64 / (a.points - 1) as f64;
        let f = |y: f64| t.eval_at(y).map(|c| c.re);
        let v = f(x)?;
        let d1 = derivative(f, x, v, 1)?.value;
        let d2 = derivative(f, x, v, 2)?.value;
        table.push(vec![num(x), num(v), num(d1), num(d2)]);
    }
    let config = vec![
        ("transform".into(), format!("{} ({})", transform_name(a.transform), t.kind)),
        ("queue".into(), a.queue.to_string()),
        ("epoch".into(), a.epoch.clone()),
    ];
    emit(output, &manifest("lst", &l, config, None), &table.render(true))
}

fn transform_name(t: TransformArg) -> &'static str {
    match t {
        TransformArg::Waiting => "waiting",
        TransformArg::QueueLength => "queue-length",
        TransformArg::Cycle => "cycle",
        TransformArg::Intervisit => "intervisit",
        TransformArg::Visit => "visit",
    }
}

pub fn pcl(args: &ModelArgs, out: &OutArgs) -> Result<()> {
    let l = load(args)?;
    need_rates(&l)?;
    let m = &l.model;
    check_stable(m)?;
    let sol = solve_mva(m)?;
    let s = pcl_verify(m, &sol)?;
    let mut t = Table::new(&["quantity", "value"]);
    t.push(vec!["case".into(), s.case_tag.to_string()]);
    t.push(vec!["lhs".into(), num(s.lhs)]);
    t.push(vec!["rhs".into(), num(s.rhs)]);
    t.push(vec!["gap".into(), num(s.gap)]);
    if let Some(x) = s.rhs_simplified {
        t.push(vec!["rhs_simplified".into(), num(x)]);
    }
    if m.has_constant_rates() {
        t.push(vec!["rhs_classical".into(), num(classical_pcl(m)?)]);
    }
    t.push(vec!["work_in_visits".into(), num(s.y_visit)]);
    t.push(vec!["work_in_switchovers".into(), num(s.y_switch_mix)]);
    emit(out.output.as_deref(), &manifest("pcl", &l, vec![], None), &t.render(out.csv))
}

pub fn simulate(args: &ModelArgs, out: &OutArgs, cfg: SimConfig) -> Result<()> {
    let l = load(args)?;
    need_rates(&l)?;
    let m = &l.model;
    let report = run_simulation(m, &cfg)?;
    for w in &report.warnings {
        eprintln!("smartpoll: {w}");
    }
    // exact values where the model is stable
    let exact = |metric: Metric| -> Option<f64> {
        let sol = solve_mva(m).ok()?;
        Some(match metric {
            Metric::Wait(i) => sol.wait[i],
            Metric::Waiting(i) => sol.queue_len[i],
            Metric::Present(i) => sol.queue_len_with_service(i),
            Metric::AtArrival(i) => transform_moment(&marginal_ql_transform(m, i, Epoch::Arrival).ok()?.transform, 1, None).ok()?.value,
            Metric::AtDeparture(i) => transform_moment(&marginal_ql_transform(m, i, Epoch::Departure).ok()?.transform, 1, None).ok()?.value,
            Metric::Visit(i) => sol.mean_visit[i],
            Metric::Intervisit(i) => sol.mean_cycle - sol.mean_visit[i],
            Metric::Cycle => sol.mean_cycle,
            Metric::Work => mean_work(m, &sol),
        })
    };
    let mut t = Table::new(&["metric", "mean", "half_width", "replications", "exact", "inside"]);
    for e in &report.estimates {
        let x = exact(e.metric);
        t.push(vec![
            e.metric.to_string(),
            num(e.mean),
            num(e.half_width),
            e.replications.to_string(),
            x.map_or(String::new(), num),
            x.map_or(String::new(), |x| if e.contains(x) { "yes".into() } else { "no".into() }),
        ]);
    }
    let config = vec![
        ("replications".into(), cfg.replications.to_string()),
        ("events".into(), cfg.events_per_replication.to_string()),
        ("warmup".into(), num(cfg.warmup_fraction)),
    ];
    emit(out.output.as_deref(), &manifest("simulate", &l, config, Some(cfg.seed)), &t.render(out.csv))
}

fn total_rate(l: &Loaded) -> Result<f64> {
    l.arrival_rate
        .ok_or_else(|| UsageError("give the total arrival rate with --arrival-rate or `arrival_rate` in the model file".into()).into())
}

fn objective(maximize: bool) -> Objective {
    if maximize {
        Objective::Maximize
    } else {
        Objective::Minimize
    }
}

pub fn optimize(args: &ModelArgs, out: &OutArgs, maximize: bool, all: bool) -> Result<()> {
    let l = load(args)?;
    let rate = total_rate(&l)?;
    let obj = objective(maximize);
    let mut list = strategy::evaluate_all(&l.model, rate)?;
    list.retain(|e| e.stable);
    if list.is_empty() {
        return Err(anyhow!(PollError::Unstable { margin: f64::NAN })).context("no strategy gives a stable system");
    }
    let best = strategy::optimize(&l.model, rate, obj)?;
    let mut t = Table::new(&["strategy", "mean_sojourn"]);
    if all {
        list.sort_by(|a, b| {
            let ord = a.value.total_cmp(&b.value);
            let ord = if maximize { ord.reverse() } else { ord };
            ord.then_with(|| a.profile.cmp(&b.profile))
        });
        for e in &list {
            t.push(vec![e.profile.to_string(), num(e.value)]);
        }
    } else {
        t.push(vec![best.profile.to_string(), num(best.value)]);
    }
    let config = vec![
        ("arrival_rate".into(), num(rate)),
        ("objective".into(), if maximize { "maximize" } else { "minimize" }.into()),
        ("stable_strategies".into(), list.len().to_string()),
    ];
    emit(out.output.as_deref(), &manifest("optimize", &l, config, None), &t.render(out.csv))
}

pub struct SweepArgs {
    pub queue: usize,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    pub refine: f64,
    pub maximize: bool,
}

pub fn sweep(args: &ModelArgs, a: SweepArgs, output: Option<&Path>) -> Result<()> {
    let l = load(args)?;
    let rate = total_rate(&l)?;
    let q = queue_index(a.queue, l.model.n())?;
    if !(a.step > 0.0 && a.to >= a.from && a.from >= 0.0 && a.refine > 0.0) {
        return Err(UsageError("need 0 <= --from <= --to, --step > 0 and --refine > 0".into()).into());
    }
    let count = ((a.to - a.from) / a.step + 1e-9).floor() as usize;
    // rounding keeps grid values like 0.07 from printing as 0.0700000001
    let grid: Vec<f64> = (0..=count).map(|k| ((a.from + k as f64 * a.step) * 1e12).round() / 1e12).collect();
    let obj = objective(a.maximize);
    let r = strategy::sweep(&l.model, q, rate, &grid, a.refine, obj)?;
    let profiles: Vec<CanonicalProfile> = r.regions.iter().map(|x| x.0.clone()).fold(Vec::new(), |mut v, p| {
        if !v.contains(&p) {
            v.push(p);
        }
        v
    });
    let mut body = String::new();
    for (x, left, right) in &r.thresholds {
        let _ = writeln!(body, "# threshold = {} {left} -> {right}", num(*x));
    }
    for (p, lo, hi) in &r.regions {
        let _ = writeln!(body, "# region = {p} {} {}", num(*lo), num(*hi));
    }
    let mut t = Table::new(&["parameter", "strategy", "mean_sojourn", "optimal"]);
    for (pt, &region) in r.points.iter().zip(&r.point_region) {
        let tmpl = strategy::with_service_mean(&l.model, q, pt.parameter);
        for p in &profiles {
            let v = strategy::profile_value(&tmpl, p, rate)?;
            let opt = if *p == r.regions[region].0 { "1" } else { "0" };
            t.push(vec![num(pt.parameter), p.to_string(), num(v), opt.into()]);
        }
    }
    body.push_str(&t.render(true));
    let config = vec![
        ("arrival_rate".into(), num(rate)),
        ("queue".into(), a.queue.to_string()),
        ("grid".into(), format!("{}..{} step {}", num(a.from), num(a.to), num(a.step))),
        ("refine".into(), num(a.refine)),
        ("objective".into(), if a.maximize { "maximize" } else { "minimize" }.into()),
    ];
    emit(output, &manifest("sweep", &l, config, None), &body)
}
