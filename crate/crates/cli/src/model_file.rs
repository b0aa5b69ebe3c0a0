//! Text format for models.
//!
//! ```text
//! queues = 2
//! discipline = exhaustive            # one value for all queues, or one per queue
//! service = exp(rate=1) exp(rate=1)
//! switchover = exp(mean=1)
//! arrival_rate = 0.6                 # optional, total rate for strategy commands
//!
//! rates:
//!       V1   S1   V2   S2
//!   Q1  0.5  0.5  0    0.5
//!   Q2  0.5  0.5  0.5  0.5
//! ```
//!
//! Distributions: `zero`, `exp(rate=r)` or `exp(mean=m)`, `det(value=d)`,
//! `erlang(k=n, rate=r)`, `hyperexp(p=q, rate1=a, rate2=b)`. Arguments may
//! also be given positionally. Without a `rates:` table every rate is 0,
//! which is what strategy templates use.

use smartpoll::{validate, Discipline, Distribution, PeriodId, PollingModel};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

impl std::error::Error for ParseError {}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line: Some(line), msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: PollingModel,
    pub arrival_rate: Option<f64>,
    /// Whether the file had a rate table.
    pub has_rates: bool,
}

const KEYS: [&str; 5] = ["queues", "discipline", "service", "switchover", "arrival_rate"];

pub fn parse(text: &str) -> Result<ModelFile, ParseError> {
    let mut keys: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    let mut table: Option<Table> = None;
    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(t) = table.as_mut() {
            if !line.contains('=') {
                t.push(ln, line)?;
                continue;
            }
        }
        if line == "rates:" {
            if table.is_some() {
                return err(ln, "second rate table");
            }
            table = Some(Table::default());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(ln, format!("expected `key = value` or `rates:`, found `{line}`"));
        };
        let key = key.trim();
        let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
            return err(ln, format!("unknown key `{key}` (expected one of {})", KEYS.join(", ")));
        };
        if keys.insert(known, (ln, value.trim().to_string())).is_some() {
            return err(ln, format!("`{key}` given twice"));
        }
    }

    let Some((qline, qtext)) = keys.get("queues") else {
        return Err(ParseError { line: None, msg: "missing `queues = N`".into() });
    };
    let n: usize = match qtext.parse() {
        Ok(n) if n >= 1 => n,
        _ => return err(*qline, format!("queue count must be a positive integer, found `{qtext}`")),
    };
    let per_queue = |key: &str| -> Result<Vec<(usize, String)>, ParseError> {
        let Some((ln, v)) = keys.get(key) else {
            return Err(ParseError { line: None, msg: format!("missing `{key}`") });
        };
        let items = split_items(v);
        match items.len() {
            1 => Ok(vec![(*ln, items[0].clone()); n]),
            k if k == n => Ok(items.into_iter().map(|s| (*ln, s)).collect()),
            k => err(*ln, format!("`{key}` needs 1 or {n} entries, found {k}")),
        }
    };
    let discipline = per_queue("discipline")?
        .into_iter()
        .map(|(ln, s)| match s.to_ascii_lowercase().as_str() {
            "exhaustive" => Ok(Discipline::Exhaustive),
            "gated" => Ok(Discipline::Gated),
            _ => err(ln, format!("unknown discipline `{s}` (exhaustive or gated)")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let service = per_queue("service")?
        .into_iter()
        .map(|(ln, s)| parse_distribution(&s).or_else(|m| err(ln, format!("service: {m}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let switchover = per_queue("switchover")?
        .into_iter()
        .map(|(ln, s)| parse_distribution(&s).or_else(|m| err(ln, format!("switchover: {m}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let arrival_rate = match keys.get("arrival_rate") {
        None => None,
        Some((ln, v)) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => Some(x),
            _ => return err(*ln, format!("arrival_rate must be a positive number, found `{v}`")),
        },
    };
    let has_rates = table.is_some();
    let rates = match table {
        Some(t) => t.finish(n)?,
        None => vec![vec![0.0; 2 * n]; n],
    };
    let model = PollingModel { discipline, service, switchover, rates };
    let problems = validate(&model);
    if !problems.is_empty() {
        return Err(ParseError { line: None, msg: format!("invalid model: {}", problems.join("; ")) });
    }
    Ok(ModelFile { model, arrival_rate, has_rates })
}

/// Whitespace-separated items; spaces inside parentheses do not split.
fn split_items(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0i32;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if (c.is_whitespace() || c == ';') && depth == 0 {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if !c.is_whitespace() {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn parse_distribution(s: &str) -> Result<Distribution, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let (name, args) = match s.split_once('(') {
        Some((name, rest)) => {
            let Some(inner) = rest.strip_suffix(')') else {
                return Err(format!("missing `)` in `{s}`"));
            };
            (name.to_ascii_lowercase(), inner.to_string())
        }
        None => (s.to_ascii_lowercase(), String::new()),
    };
    let mut named: Vec<(Option<String>, f64)> = Vec::new();
    for a in args.split(',').filter(|a| !a.is_empty()) {
        let (k, v) = match a.split_once('=') {
            Some((k, v)) => (Some(k.to_ascii_lowercase()), v),
            None => (None, a),
        };
        let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number in `{s}`"))?;
        named.push((k, x));
    }
    let take = |params: &[&str]| -> Result<Vec<f64>, String> {
        if named.len() != params.len() {
            return Err(format!("`{name}` takes {} argument(s) ({}), found {}", params.len(), params.join(", "), named.len()));
        }
        let mut out = vec![f64::NAN; params.len()];
        for (pos, (k, x)) in named.iter().enumerate() {
            let slot = match k {
                None => pos,
                Some(k) => params
                    .iter()
                    .position(|p| p == k)
                    .ok_or_else(|| format!("`{name}` has no parameter `{k}` (expected {})", params.join(", ")))?,
            };
            out[slot] = *x;
        }
        if out.iter().any(|x| x.is_nan()) {
            return Err(format!("`{name}` needs {}", params.join(", ")));
        }
        Ok(out)
    };
    let d = match name.as_str() {
        "zero" => {
            take(&[])?;
            Distribution::Zero
        }
        "exp" | "exponential" => {
            if named.len() == 1 && named[0].0.as_deref() == Some("mean") {
                if !(named[0].1 > 0.0) {
                    return Err("exponential mean must be positive (use `zero` for none)".into());
                }
                Distribution::exp_mean(named[0].1)
            } else {
                Distribution::Exponential { rate: take(&["rate"])?[0] }
            }
        }
        "det" | "deterministic" => Distribution::Deterministic { value: take(&["value"])?[0] },
        "erlang" => {
            let v = take(&["k", "rate"])?;
            if v[0] < 1.0 || v[0].fract() != 0.0 || v[0] > u32::MAX as f64 {
                return Err(format!("Erlang shape must be a positive integer, found {}", v[0]));
            }
            Distribution::Erlang { shape: v[0] as u32, rate: v[1] }
        }
        "hyperexp" => {
            let v = take(&["p", "rate1", "rate2"])?;
            Distribution::HyperExp2 { p: v[0], rate1: v[1], rate2: v[2] }
        }
        _ => return Err(format!("unknown distribution `{name}` (zero, exp, det, erlang, hyperexp)")),
    };
    Ok(d)
}

pub fn format_distribution(d: &Distribution) -> String {
    match *d {
        Distribution::Zero => "zero".into(),
        Distribution::Exponential { rate } => format!("exp(rate={rate})"),
        Distribution::Deterministic { value } => format!("det(value={value})"),
        Distribution::Erlang { shape, rate } => format!("erlang(k={shape}, rate={rate})"),
        Distribution::HyperExp2 { p, rate1, rate2 } => format!("hyperexp(p={p}, rate1={rate1}, rate2={rate2})"),
    }
}

/// The model in file syntax. Numbers use the shortest text that reads back
/// to the same value.
pub fn dump(model: &PollingModel, arrival_rate: Option<f64>) -> String {
    let n = model.n();
    let mut s = String::new();
    let join = |v: Vec<String>| v.join(" ");
    let _ = writeln!(s, "queues = {n}");
    let _ = writeln!(s, "discipline = {}", join(model.discipline.iter().map(|d| d.to_string()).collect()));
    let _ = writeln!(s, "service = {}", join(model.service.iter().map(format_distribution).collect()));
    let _ = writeln!(s, "switchover = {}", join(model.switchover.iter().map(format_distribution).collect()));
    if let Some(r) = arrival_rate {
        let _ = writeln!(s, "arrival_rate = {r}");
    }
    let _ = writeln!(s, "\nrates:");
    let cells: Vec<Vec<String>> = std::iter::once(
        std::iter::once(String::new()).chain((0..2 * n).map(|p| PeriodId::from_index(p, n).label())).collect(),
    )
    .chain((0..n).map(|i| {
        std::iter::once(format!("Q{}", i + 1)).chain(model.rates[i].iter().map(|r| r.to_string())).collect()
    }))
    .collect();
    let width = cells.iter().flatten().map(String::len).max().unwrap_or(1);
    for row in cells {
        let line: Vec<String> = row.iter().map(|c| format!("{c:<width$}")).collect();
        let _ = writeln!(s, "{}", line.join("  ").trim_end());
    }
    s
}

#[derive(Default)]
struct Table {
    header: Option<(usize, Vec<PeriodId>)>,
    rows: Vec<(usize, usize, Vec<f64>)>,
}

impl Table {
    fn push(&mut self, ln: usize, line: &str) -> Result<(), ParseError> {
        let cells: Vec<&str> = line.split_whitespace().collect();
        let Some((_, header)) = &self.header else {
            let mut labels = Vec::new();
            for c in cells {
                match PeriodId::parse(c) {
                    Some(p) => labels.push(p),
                    None => return err(ln, format!("rate table header: `{c}` is not a period label like V1 or S1")),
                }
            }
            self.header = Some((ln, labels));
            return Ok(());
        };
        let label = cells[0];
        let q = label
            .strip_prefix(['Q', 'q'])
            .unwrap_or(label)
            .parse::<usize>()
            .ok()
            .filter(|&q| q >= 1)
            .ok_or_else(|| ParseError { line: Some(ln), msg: format!("row label `{label}` is not a queue like Q1") })?;
        if cells.len() - 1 != header.len() {
            return err(ln, format!("row Q{q} has {} rates for {} columns", cells.len() - 1, header.len()));
        }
        let vals = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().or_else(|_| err(ln, format!("`{c}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        self.rows.push((ln, q - 1, vals));
        Ok(())
    }

    fn finish(self, n: usize) -> Result<Vec<Vec<f64>>, ParseError> {
        let Some((hl, header)) = self.header else {
            return Err(ParseError { line: None, msg: "rate table has no header row".into() });
        };
        let mut seen = vec![false; 2 * n];
        for p in &header {
            if p.queue >= n {
                return err(hl, format!("period {p} does not exist with {n} queues"));
            }
            if std::mem::replace(&mut seen[p.index()], true) {
                return err(hl, format!("period {p} appears twice"));
            }
        }
        if let Some(p) = (0..2 * n).find(|&p| !seen[p]) {
            return err(hl, format!("rate table is missing the column for period {}", PeriodId::from_index(p, n)));
        }
        let mut rates: Vec<Option<Vec<f64>>> = vec![None; n];
        for (ln, q, vals) in self.rows {
            if q >= n {
                return err(ln, format!("queue Q{} does not exist with {n} queues", q + 1));
            }
            if rates[q].is_some() {
                return err(ln, format!("row Q{} appears twice", q + 1));
            }
            let mut row = vec![0.0; 2 * n];
            for (p, v) in header.iter().zip(vals) {
                row[p.index()] = v;
            }
            rates[q] = Some(row);
        }
        rates
            .into_iter()
            .enumerate()
            .map(|(q, r)| r.ok_or_else(|| ParseError { line: None, msg: format!("rate table is missing the row for Q{}", q + 1) }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "queues = 2\ndiscipline = exhaustive\nservice = exp(1)\nswitchover = exp(mean=1)\n\nrates:\n   V1 S1 V2 S2\nQ1 0.5 0.5 0 0.5\nQ2 0.5 0.5 0.5 0.5\n";

    #[test]
    fn reads_the_two_queue_example() {
        let f = parse(EXAMPLE).unwrap();
        assert_eq!(f.model.n(), 2);
        assert_eq!(f.model.rate(0, PeriodId::visit(1)), 0.0);
        assert_eq!(f.model.rate(1, PeriodId::visit(1)), 0.5);
        assert_eq!(f.model.service[0], Distribution::Exponential { rate: 1.0 });
        assert!(f.has_rates);
    }

    #[test]
    fn columns_in_any_order() {
        let text = EXAMPLE.replace("   V1 S1 V2 S2\nQ1 0.5 0.5 0 0.5", "   V2 S1 V1 S2\nQ1 0 0.5 0.5 0.5");
        assert_eq!(parse(&text).unwrap().model, parse(EXAMPLE).unwrap().model);
    }

    #[test]
    fn missing_column_is_named() {
        let text = EXAMPLE.replace("   V1 S1 V2 S2", "   V1 S1 V2").replace(" 0 0.5\n", " 0\n").replace("0.5 0.5 0.5 0.5", "0.5 0.5 0.5");
        let e = parse(&text).unwrap_err();
        assert!(e.to_string().contains("period S2"), "{e}");
        assert_eq!(e.line, Some(7));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse(&EXAMPLE.replace("service = exp(1)", "service = exp(1) det(2) erlang(3,1)")).unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = parse(&EXAMPLE.replace("discipline = exhaustive", "disipline = exhaustive")).unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = parse(&EXAMPLE.replace("Q2 0.5 0.5 0.5 0.5", "Q2 0.5 x 0.5 0.5")).unwrap_err();
        assert_eq!(e.line, Some(9));
        let e = parse(&EXAMPLE.replace("Q2 0.5 0.5 0.5 0.5", "Q2 0.5 -1 0.5 0.5")).unwrap_err();
        assert!(e.to_string().contains("negative rate"), "{e}");
    }

    #[test]
    fn distributions_round_trip() {
        for d in [
            Distribution::Zero,
            Distribution::Exponential { rate: 0.1 },
            Distribution::Deterministic { value: 2.5 },
            Distribution::Erlang { shape: 3, rate: 1.0 / 3.0 },
            Distribution::HyperExp2 { p: 0.25, rate1: 1.0, rate2: 7.0 },
        ] {
            assert_eq!(parse_distribution(&format_distribution(&d)).unwrap(), d);
        }
        assert_eq!(parse_distribution("erlang(rate=2, k=4)").unwrap(), Distribution::Erlang { shape: 4, rate: 2.0 });
        assert!(parse_distribution("erlang(2.5, 1)").is_err());
        assert!(parse_distribution("gamma(2)").is_err());
    }

    #[test]
    fn dump_round_trip() {
        let f = parse(EXAMPLE).unwrap();
        let again = parse(&dump(&f.model, Some(0.6))).unwrap();
        assert_eq!(again.model, f.model);
        assert_eq!(again.arrival_rate, Some(0.6));
    }

    #[test]
    fn template_without_rates() {
        let text = "queues = 3\ndiscipline = exhaustive\nservice = exp(1)\nswitchover = exp(1)\narrival_rate = 0.6\n";
        let f = parse(text).unwrap();
        assert!(!f.has_rates);
        assert!(f.model.rates.iter().flatten().all(|&r| r == 0.0));
    }
}
