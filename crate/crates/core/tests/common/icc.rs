//! Intraclass correlation from a total-sum-of-squares decomposition.

use crossing_intent::dataset::IccModel;

/// Shrout–Fleiss worked example: 6 subjects rated by 4 judges.
pub const WORKED: [[f64; 4]; 6] = [
    [9.0, 2.0, 5.0, 8.0],
    [6.0, 1.0, 3.0, 2.0],
    [8.0, 4.0, 6.0, 8.0],
    [7.0, 1.0, 2.0, 6.0],
    [10.0, 5.0, 6.0, 9.0],
    [6.0, 2.0, 4.0, 7.0],
];

pub fn worked_rows() -> Vec<Vec<f64>> {
    WORKED.iter().map(|r| r.to_vec()).collect()
}

/// `SS_total = SS_rows + SS_cols + SS_error`, with the within-subject sum
/// `SS_cols + SS_error`.
pub fn icc_oracle(rows: &[Vec<f64>], model: IccModel) -> f64 {
    let n = rows.len() as f64;
    let k = rows[0].len() as f64;
    let all: Vec<f64> = rows.iter().flatten().copied().collect();
    let grand = all.iter().sum::<f64>() / all.len() as f64;
    let ss_total: f64 = all.iter().map(|x| (x - grand).powi(2)).sum();
    let ss_rows: f64 = rows.iter().map(|r| k * (r.iter().sum::<f64>() / k - grand).powi(2)).sum();
    let ss_cols: f64 = (0..rows[0].len())
        .map(|j| n * (rows.iter().map(|r| r[j]).sum::<f64>() / n - grand).powi(2))
        .sum();
    let ss_error = ss_total - ss_rows - ss_cols;
    let msr = ss_rows / (n - 1.0);
    let msc = ss_cols / (k - 1.0);
    let mse = ss_error / ((n - 1.0) * (k - 1.0));
    let msw = (ss_cols + ss_error) / (n * (k - 1.0));
    match model {
        IccModel::Oneway => (msr - msw) / (msr + (k - 1.0) * msw),
        IccModel::TwowayRandomConsistency => (msr - mse) / (msr + (k - 1.0) * mse),
        IccModel::TwowayRandomAgreement => (msr - mse) / (msr + (k - 1.0) * mse + k * (msc - mse) / n),
    }
}
