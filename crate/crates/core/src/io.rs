//! CSV ingestion, preprocessing and report serialization.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::selection::{CurvePoint, GridSpec, SelectionResult};
use crate::tail::{hill_estimator, l1_norms, power_transform, Sample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeaderPolicy {
    /// Header present iff the first record has a cell that is neither
    /// numeric nor a missing-value marker.
    #[default]
    Auto,
    Present,
    Absent,
}

/// Numeric table as read from disk. Entries may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub values: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub columns: Vec<String>,
    pub dropped_rows: usize,
}

impl Table {
    pub fn from_rows(rows: Vec<Vec<f64>>, columns: Vec<String>) -> Result<Self> {
        let d = columns.len();
        if rows.is_empty() {
            return Err(Error::InvalidInput("table has no rows".into()));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput(
                "rows do not match the column count".into(),
            ));
        }
        let n = rows.len();
        Ok(Self {
            values: rows.concat(),
            n,
            d,
            columns,
            dropped_rows: 0,
        })
    }

    /// Converts to a `Sample`; fails on negative entries.
    pub fn to_sample(&self) -> Result<Sample> {
        Sample::from_flat(self.values.clone(), self.d)
    }
}

const MISSING: [&str; 5] = ["", "na", "nan", "null", "."];

fn is_missing(cell: &str) -> bool {
    let c = cell.trim().to_ascii_lowercase();
    MISSING.contains(&c.as_str())
}

fn default_columns(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

pub fn load_csv(path: &Path, header: HeaderPolicy) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    read_csv(file, header)
}

pub fn read_csv<R: Read>(input: R, header: HeaderPolicy) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::InvalidInput("empty CSV file".into())),
    };
    let d = first.len();
    let has_header = match header {
        HeaderPolicy::Present => true,
        HeaderPolicy::Absent => false,
        HeaderPolicy::Auto => first
            .iter()
            .any(|c| !is_missing(c) && c.parse::<f64>().is_err()),
    };

    let mut columns = default_columns(d);
    let mut rows: Vec<f64> = Vec::new();
    let mut dropped = 0usize;
    let mut push_record = |rec: &csv::StringRecord, line: usize| -> Result<()> {
        if rec.len() != d {
            return Err(Error::Parse {
                line,
                message: format!("expected {d} fields, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        let mut missing = false;
        for cell in rec.iter() {
            if is_missing(cell) {
                missing = true;
                continue;
            }
            let x: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            row.push(x);
        }
        if missing {
            dropped += 1;
        } else {
            rows.extend(row);
        }
        Ok(())
    };

    if has_header {
        columns = first.iter().map(str::to_string).collect();
    } else {
        push_record(&first, 1)?;
    }
    let mut line = 1usize;
    for rec in records {
        line += 1;
        let rec = rec?;
        push_record(&rec, line)?;
    }

    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing values");
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no complete numeric rows".into()));
    }
    let n = rows.len() / d;
    Ok(Table {
        values: rows,
        n,
        d,
        columns,
        dropped_rows: dropped,
    })
}

/// How the tail index used by the power transform is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AlphaChoice {
    /// Leave the data untransformed.
    #[default]
    None,
    Explicit {
        alpha: f64,
    },
    Hill {
        k: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub abs: bool,
    pub alpha: AlphaChoice,
}

/// Absolute value (optional), tail index, then `x^alpha`.
pub fn preprocess(table: &Table, config: &Preprocess) -> Result<(Sample, Option<f64>)> {
    let values: Vec<f64> = if config.abs {
        table.values.iter().map(|x| x.abs()).collect()
    } else {
        table.values.clone()
    };
    let sample = Sample::from_flat(values, table.d)?;
    let alpha = match config.alpha {
        AlphaChoice::None => return Ok((sample, None)),
        AlphaChoice::Explicit { alpha } => alpha,
        AlphaChoice::Hill { k } => hill_estimator(&l1_norms(&sample), k)?,
    };
    Ok((power_transform(&sample, alpha)?, Some(alpha)))
}

/// Inputs of one estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: String,
    pub columns: Option<Vec<String>>,
    pub preprocess: Preprocess,
    pub grid: GridSpec,
    pub out_dir: Option<String>,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        match self.preprocess.alpha {
            AlphaChoice::Explicit { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::InvalidInput(format!("alpha must be positive, got {alpha}")),
            ),
            AlphaChoice::Hill { k: 0 } => {
                Err(Error::InvalidInput("Hill level must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n: usize,
    pub d: usize,
    pub columns: Vec<String>,
    pub dropped_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCluster {
    pub indices: Cluster,
    pub names: Vec<String>,
    pub count: u64,
    pub mass: f64,
    pub maximal: bool,
    pub full_cluster: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub dataset: DatasetInfo,
    pub alpha_used: Option<f64>,
    pub k_hat: usize,
    pub k_effective: u64,
    pub threshold: f64,
    pub s_hat: usize,
    pub clusters: Vec<ReportCluster>,
    pub full_cluster_selected: bool,
    pub curve: Vec<CurvePoint>,
}

impl ClusterReport {
    pub fn new(dataset: DatasetInfo, alpha_used: Option<f64>, sel: &SelectionResult) -> Self {
        let full = Cluster::full(dataset.d);
        let clusters = sel
            .clusters
            .iter()
            .map(|c| ReportCluster {
                indices: c.clone(),
                names: c
                    .indices()
                    .map(|i| {
                        dataset
                            .columns
                            .get(i)
                            .cloned()
                            .unwrap_or_else(|| format!("x{i}"))
                    })
                    .collect(),
                count: sel.counts.get(c),
                mass: sel.zeta.get(c),
                maximal: sel.maximal_flags.get(c).copied().unwrap_or(false),
                full_cluster: *c == full,
            })
            .collect();
        Self {
            dataset,
            alpha_used,
            k_hat: sel.k_hat,
            k_effective: sel.k_effective,
            threshold: sel.threshold,
            s_hat: sel.s_hat,
            clusters,
            full_cluster_selected: sel.full_cluster_selected,
            curve: sel.curve.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn maximal_names(&self) -> Vec<Vec<String>> {
        self.clusters
            .iter()
            .filter(|c| c.maximal)
            .map(|c| c.names.clone())
            .collect()
    }
}

/// Criterion and `s_hat` per grid level, columns `k, s_hat, criterion`.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "s_hat", "criterion"])?;
    for p in curve {
        w.write_record([
            p.k.to_string(),
            p.s_hat.to_string(),
            format!("{:.12e}", p.criterion),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Station codes of the daily wind-speed file, in column order.
pub const WIND_STATIONS: [&str; 12] = [
    "RPT", "VAL", "ROS", "KIL", "SHA", "BIR", "DUB", "CLA", "MUL", "CLO", "BEL", "MAL",
];

/// Whitespace-separated `year month day` followed by twelve station speeds.
pub fn parse_wind_data(text: &str) -> Result<Table> {
    let mut values = Vec::new();
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 + WIND_STATIONS.len() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 15 fields, found {}", fields.len()),
            });
        }
        for f in &fields[3..] {
            let x: f64 = f.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("non-numeric field `{f}`"),
            })?;
            values.push(x);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty wind file".into()));
    }
    Ok(Table {
        values,
        n,
        d: WIND_STATIONS.len(),
        columns: WIND_STATIONS.iter().map(|s| s.to_string()).collect(),
        dropped_rows: 0,
    })
}

/// First table of a daily portfolio-returns file: a `,Name,Name,...` header
/// line followed by `YYYYMMDD,r,r,...` rows. Rows outside `[from, to]` are
/// skipped; rows with a `-99.99` or `-999` marker count as missing.
pub fn parse_portfolio_returns(text: &str, from: u32, to: u32) -> Result<Table> {
    let mut lines = text.lines().enumerate();
    let columns: Vec<String> = loop {
        match lines.next() {
            Some((_, l)) if l.trim_start().starts_with(',') => {
                break l.split(',').skip(1).map(|c| c.trim().to_string()).collect()
            }
            Some(_) => continue,
            None => return Err(Error::InvalidInput("no column header found".into())),
        }
    };
    let d = columns.len();
    let mut values = Vec::new();
    let mut n = 0;
    let mut dropped = 0;
    for (i, line) in lines {
        let mut cells = line.split(',').map(str::trim);
        let date = match cells.next().and_then(|c| c.parse::<u32>().ok()) {
            Some(date) if (10_000_000..100_000_000).contains(&date) => date,
            _ => break,
        };
        let row: Vec<f64> = cells
            .map(|c| {
                c.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("non-numeric cell `{c}`"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {d} returns, found {}", row.len()),
            });
        }
        if date < from || date > to {
            continue;
        }
        if row.iter().any(|&x| x <= -99.99) {
            dropped += 1;
            continue;
        }
        values.extend(row);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "no complete rows in the date range".into(),
        ));
    }
    Ok(Table {
        values,
        n,
        d,
        columns,
        dropped_rows: dropped,
    })
}

/// Writes a table with its column names as header.
pub fn write_table_csv<W: Write>(table: &Table, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)?;
    for row in table.values.chunks_exact(table.d) {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
