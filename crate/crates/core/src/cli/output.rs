//! CSV tables with a metadata comment block, and the hex-float coefficient
//! dump.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::CoefficientVector;

/// Provenance lines written as `# key: value` above every table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Metadata {
    fn render(&self) -> String {
        format!(
            "# sgd-pce {}\n# experiment: {}\n# config-sha256: {}\n# seed: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.experiment,
            self.config_hash,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn render(&self, meta: &Metadata) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| Error::Io(e.to_string()))?;
        Ok(meta.render() + &body)
    }

    /// Reads a table written by [`Table::render`], skipping comment lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        Ok(Self { header, rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Shortest round-trip decimal; `NA` for missing values.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// C99-style hexadecimal float, exact for every finite `f64`.
pub fn hex_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    format!("{sign}0x{lead}{frac}p{e:+}")
}

pub fn parse_hex_float(s: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("invalid hex float `{s}`"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = match body {
        "nan" => f64::NAN,
        "inf" => f64::INFINITY,
        _ => {
            let body = body.strip_prefix("0x").ok_or_else(bad)?;
            let (m, e) = body.split_once('p').ok_or_else(bad)?;
            let e: i64 = e.parse().map_err(|_| bad())?;
            let (lead, frac) = m.split_once('.').unwrap_or((m, ""));
            if frac.len() > 13 || !(lead == "0" || lead == "1") {
                return Err(bad());
            }
            let frac_bits = if frac.is_empty() {
                0
            } else {
                u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
            };
            if lead == "0" {
                if frac_bits == 0 {
                    0.0
                } else if e == -1022 {
                    f64::from_bits(frac_bits)
                } else {
                    return Err(bad());
                }
            } else {
                if !(-1022..=1023).contains(&e) {
                    return Err(bad());
                }
                f64::from_bits((((e + 1023) as u64) << 52) | frac_bits)
            }
        }
    };
    Ok(if neg { -v } else { v })
}

/// `i j hex decimal` per line (`i` 1-based spatial, `j` 0-based stochastic),
/// after a `# key: value` header and a `spatial stochastic` size line.
pub fn coefficients_to_string(c: &CoefficientVector, meta: &Metadata) -> String {
    let mut out = meta.render();
    let _ = writeln!(out, "{} {}", c.spatial(), c.stochastic());
    for j in 0..c.stochastic() {
        for i in 0..c.spatial() {
            let v = c.get(i, j);
            let _ = writeln!(out, "{} {} {} {}", i + 1, j, hex_float(v), num(v));
        }
    }
    out
}

pub fn coefficients_from_str(text: &str) -> Result<CoefficientVector> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let size = lines.next().ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad size line `{size}`"))))
        .collect::<Result<_>>()?;
    let [spatial, stochastic] = dims[..] else {
        return Err(Error::Parse(format!("bad size line `{size}`")));
    };
    let mut c = CoefficientVector::zeros(spatial, stochastic);
    let mut seen = vec![false; c.len()];
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(Error::Parse(format!("bad coefficient line `{line}`")));
        }
        let i: usize = f[0].parse().map_err(|_| Error::Parse(format!("bad index in `{line}`")))?;
        let j: usize = f[1].parse().map_err(|_| Error::Parse(format!("bad index in `{line}`")))?;
        if i == 0 || i > spatial || j >= stochastic {
            return Err(Error::Parse(format!("index out of range in `{line}`")));
        }
        c.set(i - 1, j, parse_hex_float(f[2])?);
        seen[c.offset(i - 1, j)] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Parse("coefficient file is incomplete".into()));
    }
    Ok(c)
}
