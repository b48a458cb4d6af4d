//! Intraclass correlation (Shrout–Fleiss single-rater forms) from ANOVA
//! mean squares.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccModel {
    /// ICC(1,1): one-way random effects.
    Oneway,
    /// ICC(C,1): two-way, consistency.
    TwowayRandomConsistency,
    /// ICC(A,1) / ICC(2,1): two-way random effects, absolute agreement.
    #[default]
    TwowayRandomAgreement,
}

/// Subjects × raters grid without missing cells.
#[derive(Clone, Debug, PartialEq)]
pub struct RaterMatrix {
    subjects: usize,
    raters: usize,
    ratings: Vec<f64>,
}

impl RaterMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let subjects = rows.len();
        let raters = rows.first().map_or(0, Vec::len);
        if subjects < 2 || raters < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 subjects and 2 raters, got {subjects}×{raters}"
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != raters) {
            return Err(Error::Validation(format!("subject {i} has a missing or extra rating")));
        }
        let ratings = rows.concat();
        if ratings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("ratings must be finite".into()));
        }
        Ok(Self {
            subjects,
            raters,
            ratings,
        })
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn get(&self, subject: usize, rater: usize) -> f64 {
        self.ratings[subject * self.raters + rater]
    }

    /// Reads a comma-separated grid whose first row names the raters. A
    /// leading column headed `subject` is treated as labels.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(path, e.to_string()))?
            .clone();
        let skip = usize::from(headers.get(0).is_some_and(|h| h.eq_ignore_ascii_case("subject")));
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let row = rec
                .iter()
                .skip(skip)
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::parse(path, format!("row {}: bad rating {f:?}", i + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(&rows)
    }
}

/// ANOVA decomposition of a rater matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSquares {
    /// Between subjects (rows).
    pub rows: f64,
    /// Between raters (columns).
    pub cols: f64,
    /// Residual of the two-way model.
    pub error: f64,
    /// Within subjects (one-way model).
    pub within: f64,
}

pub fn mean_squares(m: &RaterMatrix) -> MeanSquares {
    let n = m.subjects as f64;
    let k = m.raters as f64;
    let grand = m.ratings.iter().sum::<f64>() / (n * k);
    let row_means: Vec<f64> = (0..m.subjects)
        .map(|i| (0..m.raters).map(|j| m.get(i, j)).sum::<f64>() / k)
        .collect();
    let col_means: Vec<f64> = (0..m.raters)
        .map(|j| (0..m.subjects).map(|i| m.get(i, j)).sum::<f64>() / n)
        .collect();
    let ss_rows = k * row_means.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
    let ss_cols = n * col_means.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let mut ss_error = 0.0;
    let mut ss_within = 0.0;
    for (i, row_mean) in row_means.iter().enumerate() {
        for (j, col_mean) in col_means.iter().enumerate() {
            let x = m.get(i, j);
            ss_error += (x - row_mean - col_mean + grand).powi(2);
            ss_within += (x - row_mean).powi(2);
        }
    }
    MeanSquares {
        rows: ss_rows / (n - 1.0),
        cols: ss_cols / (k - 1.0),
        error: ss_error / ((n - 1.0) * (k - 1.0)),
        within: ss_within / (n * (k - 1.0)),
    }
}

pub fn icc(m: &RaterMatrix, model: IccModel) -> Result<f64> {
    let ms = mean_squares(m);
    let n = m.subjects as f64;
    let k = m.raters as f64;
    let (num, den) = match model {
        IccModel::Oneway => (ms.rows - ms.within, ms.rows + (k - 1.0) * ms.within),
        IccModel::TwowayRandomConsistency => (ms.rows - ms.error, ms.rows + (k - 1.0) * ms.error),
        IccModel::TwowayRandomAgreement => (
            ms.rows - ms.error,
            ms.rows + (k - 1.0) * ms.error + k / n * (ms.cols - ms.error),
        ),
    };
    // Relative to the data scale, so rounding residue on constant input
    // still reads as zero variance.
    let scale = m.ratings.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if den.abs() <= 1e-12 * scale {
        return Err(Error::Validation(
            "ICC undefined: no between-subject variance and no residual variance".into(),
        ));
    }
    Ok(num / den)
}
