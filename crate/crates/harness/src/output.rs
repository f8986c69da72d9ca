//! CSV emission and parsing. Every float is written in shortest round-trip
//! form, so parsing a file back reproduces the in-memory values bitwise.

use std::fs;
use std::io::Write;
use std::path::Path;

use col_core::RegretReport;
use tempfile::NamedTempFile;

use crate::error::{LabError, LabResult};

pub const ROUNDS_HEADER: [&str; 8] = [
    "round",
    "loss",
    "dyn_regret",
    "static_regret",
    "delta_n",
    "thm2_bound",
    "cor1_bound",
    "residual",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> LabResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| LabError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| LabError::io(path, e))?;
    tmp.persist(path).map_err(|e| LabError::io(path, e.error))?;
    Ok(())
}

/// Serializes rows of string fields with the given header.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> LabResult<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| LabError::io("<csv buffer>", e.into_error()))
}

pub fn rounds_csv(report: &RegretReport) -> LabResult<Vec<u8>> {
    let eq = report.equilibrium.as_ref();
    let rows = (0..report.rounds).map(|i| {
        vec![
            (i + 1).to_string(),
            fmt_f64(report.losses[i]),
            fmt_f64(report.dynamic_regret[i]),
            fmt_opt(eq.map(|e| e.static_regret[i])),
            fmt_opt(eq.map(|e| e.delta[i])),
            fmt_opt(eq.map(|e| e.thm2_bound[i])),
            fmt_opt(eq.and_then(|e| e.cor1_bound.as_ref()).map(|b| b[i])),
            fmt_f64(report.residual[i]),
        ]
    });
    csv_bytes(&ROUNDS_HEADER, rows)
}

/// Columns of a per-round CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundsTable {
    pub round: Vec<usize>,
    pub loss: Vec<f64>,
    pub dyn_regret: Vec<f64>,
    pub static_regret: Vec<Option<f64>>,
    pub delta_n: Vec<Option<f64>>,
    pub thm2_bound: Vec<Option<f64>>,
    pub cor1_bound: Vec<Option<f64>>,
    pub residual: Vec<f64>,
}

fn parse_field(text: &str, column: &str, line: usize) -> LabResult<Option<f64>> {
    if text.is_empty() {
        return Ok(None);
    }
    text.parse()
        .map(Some)
        .map_err(|_| LabError::Config(format!("line {line}: bad {column} value {text:?}")))
}

impl RoundsTable {
    pub fn parse(bytes: &[u8]) -> LabResult<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != ROUNDS_HEADER {
            return Err(LabError::Config(format!("unexpected rounds header {header:?}")));
        }
        let mut t = RoundsTable::default();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let f = |k: usize| parse_field(&record[k], ROUNDS_HEADER[k], line);
            let required = |k: usize| {
                f(k)?.ok_or_else(|| LabError::Config(format!("line {line}: empty {}", ROUNDS_HEADER[k])))
            };
            t.round.push(
                record[0]
                    .parse()
                    .map_err(|_| LabError::Config(format!("line {line}: bad round")))?,
            );
            t.loss.push(required(1)?);
            t.dyn_regret.push(required(2)?);
            t.static_regret.push(f(3)?);
            t.delta_n.push(f(4)?);
            t.thm2_bound.push(f(5)?);
            t.cor1_bound.push(f(6)?);
            t.residual.push(required(7)?);
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> LabResult<Self> {
        Self::parse(&fs::read(path).map_err(|e| LabError::io(path, e))?)
    }

    /// Bitwise comparison with the series of `report`.
    pub fn matches(&self, report: &RegretReport) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        fn same_opt(a: &[Option<f64>], b: Option<&Vec<f64>>, n: usize) -> bool {
            match b {
                Some(b) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.map(f64::to_bits) == Some(y.to_bits())),
                None => a.len() == n && a.iter().all(Option::is_none),
            }
        }
        let eq = report.equilibrium.as_ref();
        let n = report.rounds;
        self.round.iter().copied().eq(1..=n)
            && same(&self.loss, &report.losses)
            && same(&self.dyn_regret, &report.dynamic_regret)
            && same(&self.residual, &report.residual)
            && same_opt(&self.static_regret, eq.map(|e| &e.static_regret), n)
            && same_opt(&self.delta_n, eq.map(|e| &e.delta), n)
            && same_opt(&self.thm2_bound, eq.map(|e| &e.thm2_bound), n)
            && same_opt(&self.cor1_bound, eq.and_then(|e| e.cor1_bound.as_ref()), n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip_formatting() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("a.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(RoundsTable::parse(b"a,b\n1,2\n").is_err());
    }
}
