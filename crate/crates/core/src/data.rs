//! Labeled, group-tagged classifier logits.
//!
//! Samples are partitioned into four cells by `(label y, group a)`. Cell
//! sizes `n_ya` feed every weighting in the objective, so they travel with
//! the data (and with fitted densities in privacy mode).

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: {field} must be 0 or 1, got {value}")]
    Domain {
        line: u64,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: logit is not finite ({value})")]
    NonFinite { line: u64, value: f64 },
    #[error("missing required column `{0}` (header must be `logit,label,group`)")]
    MissingColumn(&'static str),
}

/// One classifier output with its true label and sensitive group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub logit: f64,
    pub label: u8,
    pub group: u8,
}

impl Sample {
    pub fn new(logit: f64, label: u8, group: u8) -> Result<Self, DataError> {
        if label > 1 {
            return Err(DataError::Domain {
                line: 0,
                field: "label",
                value: label.to_string(),
            });
        }
        if group > 1 {
            return Err(DataError::Domain {
                line: 0,
                field: "group",
                value: group.to_string(),
            });
        }
        if !logit.is_finite() {
            return Err(DataError::NonFinite {
                line: 0,
                value: logit,
            });
        }
        Ok(Self {
            logit,
            label,
            group,
        })
    }
}

/// Subgroup sizes `n_ya`, indexed `[y][a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    n: [[u64; 2]; 2],
}

impl Counts {
    /// `n` is indexed `[label][group]`.
    pub fn new(n: [[u64; 2]; 2]) -> Self {
        Self { n }
    }

    #[inline]
    pub fn n(&self, label: usize, group: usize) -> u64 {
        self.n[label][group]
    }

    /// `N`, the total number of samples.
    pub fn total(&self) -> u64 {
        self.n.iter().flatten().sum()
    }

    /// `N_a = n_0a + n_1a`, the number of samples in group `a`.
    pub fn group_size(&self, group: usize) -> u64 {
        self.n[0][group] + self.n[1][group]
    }

    /// `n_ya / N` as a float. Zero when `N = 0`.
    pub fn fraction(&self, label: usize, group: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.n[label][group] as f64 / total as f64
        }
    }

    pub fn as_array(&self) -> [[u64; 2]; 2] {
        self.n
    }
}

#[derive(Serialize, Deserialize)]
struct CountsWire {
    n: CellMap<u64>,
}

/// JSON object keyed by the two-character cell code `"ya"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct CellMap<T> {
    #[serde(rename = "00")]
    pub c00: T,
    #[serde(rename = "01")]
    pub c01: T,
    #[serde(rename = "10")]
    pub c10: T,
    #[serde(rename = "11")]
    pub c11: T,
}

impl<T> CellMap<T> {
    pub(crate) fn from_fn(mut f: impl FnMut(usize, usize) -> T) -> Self {
        Self {
            c00: f(0, 0),
            c01: f(0, 1),
            c10: f(1, 0),
            c11: f(1, 1),
        }
    }

    pub(crate) fn into_array(self) -> [[T; 2]; 2] {
        [[self.c00, self.c01], [self.c10, self.c11]]
    }
}

impl Serialize for Counts {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CountsWire {
            n: CellMap::from_fn(|y, a| self.n[y][a]),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Counts {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = CountsWire::deserialize(deserializer)?;
        let counts = Counts::new(wire.n.into_array());
        if counts.total() == 0 {
            return Err(D::Error::custom("counts must not all be zero"));
        }
        Ok(counts)
    }
}

impl fmt::Display for Counts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n00={} n01={} n10={} n11={}",
            self.n[0][0], self.n[0][1], self.n[1][0], self.n[1][1]
        )
    }
}

/// Logits partitioned into the four `(y, a)` cells.
///
/// Immutable once built; cheap to share behind a reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupedLogits {
    cells: [[Vec<f64>; 2]; 2],
}

impl GroupedLogits {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut cells: [[Vec<f64>; 2]; 2] = Default::default();
        for s in samples {
            cells[s.label as usize][s.group as usize].push(s.logit);
        }
        Self { cells }
    }

    /// Builds directly from per-cell logit vectors indexed `[y][a]`.
    pub fn from_cells(cells: [[Vec<f64>; 2]; 2]) -> Result<Self, DataError> {
        for v in cells.iter().flatten().flatten() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { line: 0, value: *v });
            }
        }
        Ok(Self { cells })
    }

    pub fn cell(&self, label: usize, group: usize) -> &[f64] {
        &self.cells[label][group]
    }

    pub fn counts(&self) -> Counts {
        Counts::new([
            [self.cells[0][0].len() as u64, self.cells[0][1].len() as u64],
            [self.cells[1][0].len() as u64, self.cells[1][1].len() as u64],
        ])
    }

    pub fn len(&self) -> usize {
        self.cells.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens back to samples, cell by cell in `00, 01, 10, 11` order.
    pub fn to_samples(&self) -> Vec<Sample> {
        let mut out = Vec::with_capacity(self.len());
        for y in 0..2 {
            for a in 0..2 {
                out.extend(self.cells[y][a].iter().map(|&logit| Sample {
                    logit,
                    label: y as u8,
                    group: a as u8,
                }));
            }
        }
        out
    }
}

impl FromIterator<Sample> for GroupedLogits {
    fn from_iter<I: IntoIterator<Item = Sample>>(iter: I) -> Self {
        let samples: Vec<Sample> = iter.into_iter().collect();
        Self::from_samples(&samples)
    }
}

fn column(headers: &csv::StringRecord, name: &'static str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or(DataError::MissingColumn(name))
}

fn parse_binary(field: &'static str, raw: &str, line: u64) -> Result<u8, DataError> {
    let raw = raw.trim();
    let value: f64 = raw.parse().map_err(|_| DataError::Parse {
        line,
        message: format!("{field} `{raw}` is not a number"),
    })?;
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(DataError::Domain {
            line,
            field,
            value: raw.to_string(),
        })
    }
}

/// A parsed CSV table: the samples plus any optional `prediction` column.
#[derive(Debug, Clone)]
pub struct SampleTable {
    pub samples: Vec<Sample>,
    pub predictions: Option<Vec<u8>>,
}

/// Reads a `logit,label,group` table. An optional `prediction` column is
/// picked up when present; other extra columns are ignored.
pub fn read_table<R: Read>(reader: R) -> Result<SampleTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let logit_col = column(&headers, "logit")?;
    let label_col = column(&headers, "label")?;
    let group_col = column(&headers, "group")?;
    let pred_col = headers.iter().position(|h| h.trim() == "prediction");

    let mut samples = Vec::new();
    let mut predictions = pred_col.map(|_| Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |idx: usize| {
            record.get(idx).ok_or_else(|| DataError::Parse {
                line,
                message: "row has too few fields".into(),
            })
        };
        let raw_logit = get(logit_col)?;
        let logit: f64 = raw_logit.parse().map_err(|_| DataError::Parse {
            line,
            message: format!("logit `{raw_logit}` is not a number"),
        })?;
        if !logit.is_finite() {
            return Err(DataError::NonFinite { line, value: logit });
        }
        let label = parse_binary("label", get(label_col)?, line)?;
        let group = parse_binary("group", get(group_col)?, line)?;
        samples.push(Sample {
            logit,
            label,
            group,
        });
        if let (Some(col), Some(preds)) = (pred_col, predictions.as_mut()) {
            preds.push(parse_binary("prediction", get(col)?, line)?);
        }
    }
    Ok(SampleTable {
        samples,
        predictions,
    })
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<Sample>, DataError> {
    read_table(reader).map(|t| t.samples)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<GroupedLogits, DataError> {
    let samples = read_samples(File::open(path)?)?;
    Ok(GroupedLogits::from_samples(&samples))
}

pub fn write_samples<W: Write>(writer: W, samples: &[Sample]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| DataError::Io(std::io::Error::other(e));
    wtr.write_record(["logit", "label", "group"])
        .map_err(to_io)?;
    for s in samples {
        // `{}` on f64 prints the shortest string that parses back exactly.
        wtr.write_record([
            s.logit.to_string(),
            s.label.to_string(),
            s.group.to_string(),
        ])
        .map_err(to_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, data: &GroupedLogits) -> Result<(), DataError> {
    write_samples(File::create(path)?, &data.to_samples())
}
