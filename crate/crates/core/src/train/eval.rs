//! Evaluation: per-sample predictions, absolute errors and the MAD metric,
//! plus the relative-age bias analysis.

use crate::net::{SampleInput, SimbaModel};
use crate::train::loader::LoadedDataset;
use crate::train::stats::{pearson_ols, BiasStats, StatsError};
use crate::train::TrainError;

/// Records run through the forward pass in chunks of this size.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub bone_age: f64,
    pub predicted: f64,
    pub chronological: f64,
    /// c - b.
    pub relative_age: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One row per record, ordered by id.
    pub rows: Vec<EvalRow>,
    /// Mean absolute distance between predicted and true bone age, months.
    pub mad: f64,
}

/// Scores a model on a dataset. Bone age predictions go through
/// `predict_bone_age` semantics: relative outputs are inverted through the
/// chronological age before the error is taken.
pub fn evaluate(model: &SimbaModel<f32>, data: &LoadedDataset) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    data.require_ground_truth()?;
    let age_norm = model.config.age_norm_months;
    let relative = model.config.flags.use_relative;

    // Batch composition is a function of ids only, so the whole report
    // (including bit-level prediction values) is invariant under input
    // permutation.
    let mut order: Vec<&crate::train::loader::LoadedSample> = data.samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mut rows = Vec::with_capacity(data.len());
    for chunk in order.chunks(EVAL_BATCH) {
        let inputs: Vec<SampleInput<'_, f32>> = chunk
            .iter()
            .map(|s| SampleInput {
                stack: &s.input,
                gender: f32::from(s.gender),
                chrono_norm: (s.chronological_months / age_norm) as f32,
            })
            .collect();
        let outputs = model.forward_batch(&inputs)?;
        for (sample, &o) in chunk.iter().zip(&outputs) {
            let months = f64::from(o) * age_norm;
            let predicted = if relative {
                sample.chronological_months - months
            } else {
                months
            };
            let bone_age = sample.bone_age_months.expect("ground truth checked above");
            rows.push(EvalRow {
                id: sample.id.clone(),
                bone_age,
                predicted,
                chronological: sample.chronological_months,
                relative_age: sample.chronological_months - bone_age,
                abs_error: (predicted - bone_age).abs(),
            });
        }
    }
    let mad = rows.iter().map(|r| r.abs_error).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport { rows, mad })
}

/// Pearson correlation and OLS fit of absolute error on relative age.
pub fn bias_analysis(report: &EvalReport) -> Result<BiasStats, StatsError> {
    let xs: Vec<f64> = report.rows.iter().map(|r| r.relative_age).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.abs_error).collect();
    pearson_ols(&xs, &ys)
}
