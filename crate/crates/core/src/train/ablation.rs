//! Ablation matrix: the five flag configurations, trained per seed, with
//! per-configuration medians of the best validation MAD.

use rayon::prelude::*;

use crate::net::{AblationFlags, ModelConfig, SimbaModel};
use crate::train::loader::LoadedDataset;
use crate::train::{train, TrainConfig, TrainError};

/// Row order of the matrix: baseline (no markers, direct bone age), both
/// markers without the relative objective, then the relative objective with
/// gender only, chronological age only, and both markers (the full model).
pub const ABLATION_CONFIGS: [AblationFlags; 5] = [
    AblationFlags { use_gender: false, use_chrono: false, use_relative: false },
    AblationFlags { use_gender: true, use_chrono: true, use_relative: false },
    AblationFlags { use_gender: true, use_chrono: false, use_relative: true },
    AblationFlags { use_gender: false, use_chrono: true, use_relative: true },
    AblationFlags { use_gender: true, use_chrono: true, use_relative: true },
];

pub const FULL_MODEL: AblationFlags =
    AblationFlags { use_gender: true, use_chrono: true, use_relative: true };
pub const BASELINE: AblationFlags =
    AblationFlags { use_gender: false, use_chrono: false, use_relative: false };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub seed: u64,
    /// Best validation MAD of the run, months.
    pub val_mad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    /// Configuration-major, then seed-major: `configs x seeds` rows.
    pub rows: Vec<AblationRow>,
    /// Median best validation MAD per configuration.
    pub medians: Vec<(AblationFlags, f64)>,
}

impl AblationTable {
    pub fn median_for(&self, flags: AblationFlags) -> Option<f64> {
        self.medians.iter().find(|(f, _)| *f == flags).map(|(_, m)| *m)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("MAD values are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_one(
    train_data: &LoadedDataset,
    val_data: &LoadedDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    flags: AblationFlags,
    seed: u64,
) -> Result<AblationRow, TrainError> {
    let wrap = |source: TrainError| TrainError::AblationRun {
        gender: flags.use_gender,
        chrono: flags.use_chrono,
        relative: flags.use_relative,
        seed,
        source: Box::new(source),
    };
    let config = ModelConfig {
        flags,
        ..model_config.clone()
    };
    let mut model = SimbaModel::<f32>::init(config, seed).map_err(|e| wrap(e.into()))?;
    let cfg = TrainConfig {
        seed,
        ..train_config.clone()
    };
    let result = train(&mut model, train_data, val_data, &cfg).map_err(wrap)?;
    Ok(AblationRow {
        flags,
        seed,
        val_mad: result
            .checkpoint
            .meta
            .best_val_mad
            .unwrap_or(f64::INFINITY),
    })
}

/// Trains every configuration for every seed. Runs are independent, so
/// `parallel` only changes wall time, never results.
pub fn run_ablation_matrix(
    train_data: &LoadedDataset,
    val_data: &LoadedDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    seeds: &[u64],
    parallel: bool,
) -> Result<AblationTable, TrainError> {
    assert!(!seeds.is_empty(), "at least one seed required");
    let jobs: Vec<(AblationFlags, u64)> = ABLATION_CONFIGS
        .iter()
        .flat_map(|&flags| seeds.iter().map(move |&s| (flags, s)))
        .collect();

    let rows: Vec<AblationRow> = if parallel {
        jobs.par_iter()
            .map(|&(flags, seed)| {
                run_one(train_data, val_data, model_config, train_config, flags, seed)
            })
            .collect::<Result<_, _>>()?
    } else {
        jobs.iter()
            .map(|&(flags, seed)| {
                run_one(train_data, val_data, model_config, train_config, flags, seed)
            })
            .collect::<Result<_, _>>()?
    };

    let medians = ABLATION_CONFIGS
        .iter()
        .map(|&flags| {
            let mut vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.flags == flags)
                .map(|r| r.val_mad)
                .collect();
            (flags, median(&mut vals))
        })
        .collect();

    Ok(AblationTable { rows, medians })
}
