use sha2::{Digest, Sha256};
use std::fmt::Write as _;

/// Nine significant digits, '.' separator, trailing zeros trimmed.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // round first so the exponent reflects the printed value
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mant.to_string()))
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Short content hash of the model text.
pub fn digest(model_text: &str) -> String {
    let h = Sha256::digest(model_text.as_bytes());
    h.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub struct Manifest {
    pub command: String,
    pub model_digest: String,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# smartpoll {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# command: {}", self.command);
        let _ = writeln!(s, "# model: {}", self.model_digest);
        for (k, v) in &self.config {
            let _ = writeln!(s, "# {k} = {v}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed = {seed}");
        }
        s
    }
}

/// Rows of cells, either as CSV or as a space-aligned table.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self, csv: bool) -> String {
        let all = std::iter::once(&self.header).chain(&self.rows);
        let mut s = String::new();
        if csv {
            for r in all {
                let _ = writeln!(s, "{}", r.join(","));
            }
            return s;
        }
        let cols = self.header.len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| std::iter::once(&self.header).chain(&self.rows).map(|r| r.get(c).map_or(0, String::len)).max().unwrap_or(0))
            .collect();
        for r in all {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(s, "{}", cells.join("  ").trim_end());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(3.75), "3.75");
        assert_eq!(num(1.0 / 3.0), "0.333333333");
        assert_eq!(num(2.0 / 3.0 * 1000.0), "666.666667");
        assert_eq!(num(123456789.4), "123456789");
        assert_eq!(num(1234567890.0), "1.23456789e9");
        assert_eq!(num(1.5e-7), "1.5e-7");
        assert_eq!(num(-0.000012345678912), "-0.0000123456789");
        assert_eq!(num(9.9999999999), "10");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest("abc"), "ba7816bf8f01cfea");
    }
}
