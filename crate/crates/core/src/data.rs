//! Observational data from a source population (covariates, treatment and
//! outcome) pooled with covariates from a target population.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column mapping for delimited text files.
#[derive(Debug, Clone)]
pub struct Schema {
    pub s: String,
    pub a: String,
    pub y: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            s: "s".into(),
            a: "a".into(),
            y: "y".into(),
            delimiter: b',',
        }
    }
}

/// Pooled source and target sample.
///
/// Treatment and outcome exist only on source rows; target rows carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    s: Vec<bool>,
    a: Vec<Option<bool>>,
    y: Vec<Option<f64>>,
    names: Vec<String>,
}

/// Row indices of the treated source units, control source units and target units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndices {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub target: Vec<usize>,
}

impl GroupIndices {
    pub fn n_source(&self) -> usize {
        self.treated.len() + self.control.len()
    }
}

impl Dataset {
    /// Validates and builds a dataset. Treatment and outcome values given for
    /// target rows are discarded.
    pub fn new(
        x: DMatrix<f64>,
        s: Vec<bool>,
        a: Vec<Option<bool>>,
        y: Vec<Option<f64>>,
    ) -> Result<Self> {
        let p = x.ncols();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(x, s, a, y, names)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        s: Vec<bool>,
        mut a: Vec<Option<bool>>,
        mut y: Vec<Option<f64>>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        for len in [s.len(), a.len(), y.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: names.len(),
            });
        }
        for i in 0..n {
            if let Some(j) = (0..x.ncols()).find(|&j| !x[(i, j)].is_finite()) {
                return Err(Error::InvalidCell {
                    row: i,
                    column: names[j].clone(),
                    message: "non-finite covariate".into(),
                });
            }
            if s[i] {
                if a[i].is_none() {
                    return Err(Error::InvalidCell {
                        row: i,
                        column: "a".into(),
                        message: "source row without treatment".into(),
                    });
                }
                match y[i] {
                    None => {
                        return Err(Error::InvalidCell {
                            row: i,
                            column: "y".into(),
                            message: "source row without outcome".into(),
                        });
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(Error::InvalidCell {
                            row: i,
                            column: "y".into(),
                            message: "non-finite outcome".into(),
                        });
                    }
                    Some(_) => {}
                }
            } else {
                a[i] = None;
                y[i] = None;
            }
        }
        let n_treated = (0..n).filter(|&i| s[i] && a[i] == Some(true)).count();
        let n_control = (0..n).filter(|&i| s[i] && a[i] == Some(false)).count();
        let n_target = s.iter().filter(|&&si| !si).count();
        if n_treated + n_control < 2 || n_treated == 0 || n_control == 0 {
            return Err(Error::InvalidDataset(format!(
                "need at least one treated and one control source unit \
                 (found {n_treated} treated, {n_control} control)"
            )));
        }
        if n_target == 0 {
            return Err(Error::InvalidDataset("no target rows".into()));
        }
        Ok(Self { x, s, a, y, names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_source(&self) -> usize {
        self.s.iter().filter(|&&s| s).count()
    }

    pub fn n_target(&self) -> usize {
        self.n() - self.n_source()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn s(&self) -> &[bool] {
        &self.s
    }

    pub fn treatment(&self, i: usize) -> Option<bool> {
        self.a[i]
    }

    pub fn outcome(&self, i: usize) -> Option<f64> {
        self.y[i]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    /// Source rows in ascending order.
    pub fn source_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i]).collect()
    }

    pub fn target_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.s[i]).collect()
    }

    /// Splits rows into treated source, control source and target index sets.
    pub fn group_indices(&self) -> GroupIndices {
        let mut groups = GroupIndices {
            treated: Vec::new(),
            control: Vec::new(),
            target: Vec::new(),
        };
        for i in 0..self.n() {
            match (self.s[i], self.a[i]) {
                (true, Some(true)) => groups.treated.push(i),
                (true, Some(false)) => groups.control.push(i),
                _ => groups.target.push(i),
            }
        }
        groups
    }

    /// Covariate rows gathered into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(rows.iter())
    }

    /// Dataset made of the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Self::with_names(
            self.select_rows(rows),
            rows.iter().map(|&r| self.s[r]).collect(),
            rows.iter().map(|&r| self.a[r]).collect(),
            rows.iter().map(|&r| self.y[r]).collect(),
            self.names.clone(),
        )
    }

    /// Copy with covariates centred and scaled to unit standard deviation
    /// using pooled (source and target) moments. Constant columns are only centred.
    pub fn standardize(&self) -> Dataset {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            for v in col.iter_mut() {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
        Dataset {
            x,
            ..self.clone()
        }
    }

    /// Reads a delimited file with a header row. Every column other than the
    /// population, treatment and outcome columns is a covariate, in file order.
    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_reader(file, schema)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (s_col, a_col, y_col) = (find(&schema.s)?, find(&schema.a)?, find(&schema.y)?);
        let cov_cols: Vec<usize> = (0..header.len())
            .filter(|j| ![s_col, a_col, y_col].contains(j))
            .collect();
        let names: Vec<String> = cov_cols.iter().map(|&j| header[j].to_string()).collect();

        let mut flat = Vec::new();
        let (mut s, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let cell = |j: usize| record.get(j).unwrap_or("");
            let bad = |j: usize, message: &str| Error::InvalidCell {
                row,
                column: header[j].to_string(),
                message: message.to_string(),
            };
            let binary = |j: usize| -> Result<Option<bool>> {
                match cell(j) {
                    "" | "NA" | "nan" | "NaN" => Ok(None),
                    "1" | "1.0" => Ok(Some(true)),
                    "0" | "0.0" => Ok(Some(false)),
                    _ => Err(bad(j, "expected 0 or 1")),
                }
            };
            let si = binary(s_col)?.ok_or_else(|| bad(s_col, "missing population indicator"))?;
            for &j in &cov_cols {
                let v: f64 = cell(j).parse().map_err(|_| bad(j, "not a number"))?;
                if !v.is_finite() {
                    return Err(bad(j, "non-finite covariate"));
                }
                flat.push(v);
            }
            if si {
                let ai = binary(a_col)?.ok_or_else(|| bad(a_col, "source row without treatment"))?;
                let yi: f64 = match cell(y_col) {
                    "" | "NA" => return Err(bad(y_col, "source row without outcome")),
                    text => text.parse().map_err(|_| bad(y_col, "not a number"))?,
                };
                if !yi.is_finite() {
                    return Err(bad(y_col, "non-finite outcome"));
                }
                a.push(Some(ai));
                y.push(Some(yi));
            } else {
                a.push(None);
                y.push(None);
            }
            s.push(si);
        }
        let x = DMatrix::from_row_slice(s.len(), cov_cols.len(), &flat);
        Self::with_names(x, s, a, y, names)
    }

    /// Writes the dataset with covariates first, then the population,
    /// treatment and outcome columns. Masked cells are left empty.
    pub fn write(&self, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        self.write_to(&mut out, schema)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W, schema: &Schema) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(schema.delimiter)
            .from_writer(out);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.extend([schema.s.as_str(), schema.a.as_str(), schema.y.as_str()]);
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut record: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            record.push(if self.s[i] { "1" } else { "0" }.into());
            record.push(self.a[i].map_or(String::new(), |a| u8::from(a).to_string()));
            record.push(self.y[i].map_or(String::new(), |v| v.to_string()));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
