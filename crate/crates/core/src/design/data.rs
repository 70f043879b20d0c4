use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed sample `(y, x, z, z1)`: outcome, treatment, instrument and a
/// binary exogenous covariate (all zeros when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub z1: Vec<f64>,
}

pub const CSV_HEADER: [&str; 4] = ["y", "x", "z", "z1"];

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<f64>, z1: Vec<f64>) -> Result<Self> {
        let n = y.len();
        for (name, col) in [("x", &x), ("z", &z), ("z1", &z1)] {
            if col.len() != n {
                return Err(Error::InvalidInput(format!(
                    "column `{name}` has {} entries, `y` has {n}",
                    col.len()
                )));
            }
        }
        for (name, col) in [("y", &y), ("x", &x), ("z", &z), ("z1", &z1)] {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: i + 1,
                    message: format!("non-finite value in column `{name}`"),
                });
            }
        }
        Ok(Dataset { y, x, z, z1 })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Same data with the instrument column replaced.
    pub fn with_instrument(&self, z: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.y.clone(), self.x.clone(), z, self.z1.clone())
    }

    pub fn has_covariate_variation(&self) -> bool {
        self.z1.iter().any(|v| *v != self.z1[0])
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Parses the `y,x,z,z1` format. Rows with a blank or unparsable field
    /// are rejected with their 1-based data-row number.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
        if header != CSV_HEADER {
            return Err(Error::Data {
                row: 0,
                message: format!("header must be `y,x,z,z1`, found `{}`", header.join(",")),
            });
        }
        let mut cols: [Vec<f64>; 4] = Default::default();
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Data {
                row,
                message: e.to_string(),
            })?;
            if record.len() != 4 {
                return Err(Error::Data {
                    row,
                    message: format!("expected 4 fields, found {}", record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                if field.is_empty() {
                    return Err(Error::Data {
                        row,
                        message: format!("blank field `{}`", CSV_HEADER[c]),
                    });
                }
                let value: f64 = field.parse().map_err(|_| Error::Data {
                    row,
                    message: format!("cannot parse `{field}` in column `{}`", CSV_HEADER[c]),
                })?;
                if !value.is_finite() {
                    return Err(Error::Data {
                        row,
                        message: format!("non-finite value in column `{}`", CSV_HEADER[c]),
                    });
                }
                cols[c].push(value);
            }
        }
        let [y, x, z, z1] = cols;
        Dataset::new(y, x, z, z1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(file)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for i in 0..self.n() {
            w.write_record(&[
                self.y[i].to_string(),
                self.x[i].to_string(),
                self.z[i].to_string(),
                self.z1[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
