//! CSV tables: comma-delimited, header row, `.` decimals, LF line endings.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use ifam_core::linalg::SymMatrix;
use ifam_core::{GroupLabels, ReturnPanel};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// Returns panel plus the first-column row labels (dates or indices).
#[derive(Debug, Clone)]
pub struct LabeledPanel {
    pub row_labels: Vec<String>,
    pub panel: ReturnPanel,
}

fn csv_err(path: &Path, row: usize, column: usize, message: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message: message.into(),
    }
}

fn open_reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// `YYYY-MM-DD`, optionally followed by a `T…` time part.
fn is_iso_date(s: &str) -> bool {
    let date = s.split('T').next().unwrap_or("");
    let b = date.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let num = |r: std::ops::Range<usize>| date[r].parse::<u32>().ok();
    match (num(0..4), num(5..7), num(8..10)) {
        (Some(_), Some(m), Some(d)) => (1..=12).contains(&m) && (1..=31).contains(&d),
        _ => false,
    }
}

/// Reads a returns table. Missing or non-numeric cells are errors that name
/// the 1-based file line and column.
pub fn read_returns(path: &Path) -> CliResult<LabeledPanel> {
    let mut rdr = open_reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| csv_err(path, 1, 1, e.to_string()))?
        .clone();
    if header.len() < 2 {
        return Err(csv_err(path, 1, header.len().max(1), "need an index column and at least one asset"));
    }
    let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashMap::new();
    for (c, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(csv_err(path, 1, c + 2, "empty asset id"));
        }
        if let Some(prev) = seen.insert(id.clone(), c + 2) {
            return Err(csv_err(path, 1, c + 2, format!("asset id '{id}' repeats column {prev}")));
        }
    }
    let p = ids.len();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, k + 2, 1, e.to_string()))?;
        let line = line_of(&rec, k + 2);
        if rec.len() != p + 1 {
            return Err(csv_err(
                path,
                line,
                rec.len().min(p + 1) + 1,
                format!("expected {} fields, found {}", p + 1, rec.len()),
            ));
        }
        let label = rec[0].trim();
        if label.parse::<i64>().is_err() && !is_iso_date(label) {
            return Err(csv_err(path, line, 1, format!("'{label}' is neither a date nor an integer index")));
        }
        row_labels.push(label.to_string());
        for c in 0..p {
            let cell = rec[c + 1].trim();
            if cell.is_empty() {
                return Err(csv_err(path, line, c + 2, "missing value"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(path, line, c + 2, format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(csv_err(path, line, c + 2, format!("'{cell}' is not finite")));
            }
            values.push(v);
        }
    }
    let t = row_labels.len();
    if t < 2 {
        return Err(CliError::data(format!("{} has {t} data rows; need at least 2", path.display())));
    }
    let panel = ReturnPanel::new(DMatrix::from_row_slice(t, p, &values), ids)?;
    Ok(LabeledPanel { row_labels, panel })
}

/// `asset_id,<value>` rows covering every asset exactly once.
fn read_assignment(path: &Path, asset_ids: &[String], value_name: &str) -> CliResult<Vec<String>> {
    let mut rdr = open_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, 1, 1, e.to_string()))?.clone();
    if header.len() != 2 {
        return Err(csv_err(path, 1, 1, format!("expected header asset_id,{value_name}")));
    }
    let index: HashMap<&str, usize> = asset_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out: Vec<Option<String>> = vec![None; asset_ids.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, k + 2, 1, e.to_string()))?;
        let line = line_of(&rec, k + 2);
        if rec.len() != 2 {
            return Err(csv_err(path, line, rec.len().min(2) + 1, format!("expected 2 fields, found {}", rec.len())));
        }
        let id = rec[0].trim();
        let Some(&i) = index.get(id) else {
            return Err(csv_err(path, line, 1, format!("unknown asset '{id}'")));
        };
        if out[i].is_some() {
            return Err(csv_err(path, line, 1, format!("asset '{id}' listed twice")));
        }
        let v = rec[1].trim();
        if v.is_empty() {
            return Err(csv_err(path, line, 2, format!("missing {value_name}")));
        }
        out[i] = Some(v.to_string());
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| CliError::data(format!("{}: no {value_name} for asset '{}'", path.display(), asset_ids[i]))))
        .collect()
}

/// Group labels from `asset_id,group` with 1-based integer groups.
pub fn read_labels(path: &Path, asset_ids: &[String]) -> CliResult<GroupLabels> {
    let raw = read_assignment(path, asset_ids, "group")?;
    let mut groups = Vec::with_capacity(raw.len());
    for (i, g) in raw.iter().enumerate() {
        match g.parse::<usize>() {
            Ok(v) if v >= 1 => groups.push(v),
            _ => {
                return Err(CliError::data(format!(
                    "{}: group '{g}' of asset '{}' is not a positive integer",
                    path.display(),
                    asset_ids[i]
                )))
            }
        }
    }
    Ok(GroupLabels::from_raw(&groups)?)
}

/// Sector map from `asset_id,sector`; sector names are arbitrary strings.
pub fn read_sectors(path: &Path, asset_ids: &[String]) -> CliResult<GroupLabels> {
    let raw = read_assignment(path, asset_ids, "sector")?;
    Ok(GroupLabels::from_raw(&raw)?)
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writer that creates parent directories and reports the path on failure.
pub struct Table {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let out = |source| CliError::Output {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(out)?;
        }
        let file = File::create(path).map_err(out)?;
        let inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        let mut t = Self {
            path: path.to_path_buf(),
            inner,
        };
        t.row(header.iter().map(|s| s.to_string()))?;
        Ok(t)
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| self.io_err(e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::Output {
            path: self.path.clone(),
            source: e,
        })
    }

    fn io_err(&self, e: csv::Error) -> CliError {
        CliError::Output {
            path: self.path.clone(),
            source: std::io::Error::other(e.to_string()),
        }
    }
}

pub fn write_returns(path: &Path, lp: &LabeledPanel) -> CliResult<()> {
    let mut header = vec!["t".to_string()];
    header.extend(lp.panel.asset_ids().iter().cloned());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::create(path, &refs)?;
    let v = lp.panel.values();
    for (r, label) in lp.row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend((0..v.ncols()).map(|c| fmt_f64(v[(r, c)])));
        t.row(rec)?;
    }
    t.finish()
}

/// Square matrix with asset ids on both axes.
pub fn write_matrix(path: &Path, ids: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let mut header = vec!["asset_id".to_string()];
    header.extend(ids.iter().cloned());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::create(path, &refs)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..m.ncols()).map(|j| fmt_f64(m[(i, j)])));
        t.row(rec)?;
    }
    t.finish()
}

pub fn write_sym(path: &Path, ids: &[String], m: &SymMatrix) -> CliResult<()> {
    write_matrix(path, ids, m.matrix())
}

/// `asset_id,group` with groups numbered from 1 in order of first appearance.
pub fn write_labels(path: &Path, ids: &[String], labels: &GroupLabels) -> CliResult<()> {
    let canon = labels.canonical();
    let mut t = Table::create(path, &["asset_id", "group"])?;
    for (i, id) in ids.iter().enumerate() {
        t.row([id.clone(), (canon.group_of(i) + 1).to_string()])?;
    }
    t.finish()
}

/// Plain text or JSON file.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let out = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(out)?;
    }
    std::fs::write(path, text).map_err(out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_text(path, &text)
}

/// Group sizes keyed by 1-based group id, for diagnostics.
pub fn group_sizes(labels: &GroupLabels) -> BTreeMap<usize, usize> {
    labels
        .canonical()
        .group_sizes()
        .into_iter()
        .enumerate()
        .map(|(g, n)| (g + 1, n))
        .collect()
}
