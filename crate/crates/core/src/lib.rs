//! Bone age assessment with identity-marker fusion.
//!
//! The model extracts convolutional features from a hand raster stacked with
//! an RoI attention heatmap, scales the patient's gender and chronological
//! age by learnable multipliers, concatenates everything, and predicts the
//! relative bone age `r = c - b` (or bone age directly, for ablations).
//! A synthetic corpus with a known growth law stands in for clinical data so
//! that every learning claim is testable.

pub mod dataset;
pub mod heatmap;
pub mod net;
pub mod plot;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use dataset::{
    load_manifest, relative_age, save_manifest, split_deterministic, DatasetError, Manifest,
    PatientRecord, RelativeAge, Split,
};
pub use heatmap::{
    attach_heatmap, export_heatmap_png, render_heatmap, GrayRaster, Heatmap, HeatmapError,
    InputStack,
};
pub use net::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainMeta};
pub use net::{AblationFlags, ModelConfig, ModelError, SampleInput, SimbaModel, SimbaParams};
pub use synthetic::{
    generate_dataset, sample_patient, template_keypoints, GrowthOracle, SyntheticError,
    SyntheticSample,
};
pub use train::ablation::{run_ablation_matrix, AblationRow, AblationTable, ABLATION_CONFIGS};
pub use train::eval::{bias_analysis, evaluate, EvalReport, EvalRow};
pub use train::loader::{LoadedDataset, LoadedSample};
pub use train::plateau::PlateauScheduler;
pub use train::stats::{pearson_ols, BiasStats, StatsError};
pub use train::{train, train_manifests, EpochRecord, TrainConfig, TrainError, TrainResult};
