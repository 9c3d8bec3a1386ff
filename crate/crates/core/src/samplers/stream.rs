//! Per-draw conditional Gaussians `p̃(θ | y_s, z_s^n)` in natural form.
//!
//! For Polya-Gamma logistic regression only the precision depends on the
//! latent draw, so the stream stores one shared `η_s` and a precision per draw.
//!
//! File format (newline-delimited JSON):
//!
//! ```text
//! {"type":"header","eta":[...]}
//! {"type":"rec","n":1,"prec_row_major":[...]}
//! ...
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussianStream {
    pub eta: Vec<f64>,
    /// Row-major precision matrices, `dim²` values per draw.
    pub precisions: Vec<f64>,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    eta: &'a [f64],
}

#[derive(Serialize)]
struct RecordOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    n: usize,
    prec_row_major: &'a [f64],
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header { eta: Vec<f64> },
    Rec { n: usize, prec_row_major: Vec<f64> },
}

impl ConditionalGaussianStream {
    pub fn new(eta: Vec<f64>) -> Self {
        Self {
            eta,
            precisions: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn len(&self) -> usize {
        let p2 = self.dim() * self.dim();
        if p2 == 0 {
            0
        } else {
            self.precisions.len() / p2
        }
    }

    pub fn is_empty(&self) -> bool {
        self.precisions.is_empty()
    }

    pub fn push(&mut self, prec: &Matrix) {
        for i in 0..prec.nrows() {
            for j in 0..prec.ncols() {
                self.precisions.push(prec[(i, j)]);
            }
        }
    }

    pub fn precision_row_major(&self, n: usize) -> &[f64] {
        let p2 = self.dim() * self.dim();
        &self.precisions[n * p2..(n + 1) * p2]
    }

    pub fn precision(&self, n: usize) -> Matrix {
        Matrix::from_row_slice(self.dim(), self.dim(), self.precision_row_major(n))
    }

    pub fn eta_vector(&self) -> Vector {
        Vector::from_column_slice(&self.eta)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &HeaderOut { kind: "header", eta: &self.eta })?;
        w.write_all(b"\n")?;
        for n in 0..self.len() {
            let rec = RecordOut {
                kind: "rec",
                n: n + 1,
                prec_row_major: self.precision_row_major(n),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<u64> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(std::fs::metadata(path)?.len())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut stream: Option<Self> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Header { eta } => {
                    if stream.is_some() {
                        return Err(Error::Validation(format!("line {}: duplicate header", i + 1)));
                    }
                    stream = Some(Self::new(eta));
                }
                Line::Rec { n, prec_row_major } => {
                    let s = stream
                        .as_mut()
                        .ok_or_else(|| Error::Validation("record before header".into()))?;
                    if n != s.len() + 1 {
                        return Err(Error::Validation(format!("record {n} out of order")));
                    }
                    if prec_row_major.len() != s.dim() * s.dim() {
                        return Err(Error::Validation(format!("record {n} has the wrong size")));
                    }
                    s.precisions.extend_from_slice(&prec_row_major);
                }
            }
        }
        stream.ok_or_else(|| Error::Validation("missing header".into()))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
