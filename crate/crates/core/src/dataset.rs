//! Sample data model, manifest ingestion/validation and deterministic splits.
//!
//! A manifest is one JSON document: `{"image_size": int, "records": [...]}`
//! where each record carries `id`, `image` (path relative to the manifest),
//! `gender` (0 = male, 1 = female), `chronological_age_months`,
//! `bone_age_months` (number or null for inference-only records) and
//! `keypoints` (K `[x, y]` pairs). An optional `"split"` key tags manifests
//! produced by [`split_deterministic`].

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ages are months; anything past 300 (25 years) is treated as a unit error.
pub const MAX_AGE_MONTHS: f64 = 300.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(String),
    #[error("record {id}: invalid {field}: {detail}")]
    Validation {
        id: String,
        field: &'static str,
        detail: String,
    },
    #[error("split would leave the {0} partition empty")]
    EmptySplit(&'static str),
    #[error("split fractions must be positive and sum below 1 (got {0} + {1})")]
    BadFractions(f64, f64),
}

/// Which partition a manifest belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One sample: image reference, identity markers, ground truth and RoI keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub id: String,
    /// Path to an 8-bit single-channel PNG, relative to the manifest file.
    pub image: String,
    /// 0 = male, 1 = female.
    pub gender: u8,
    pub chronological_age_months: f64,
    /// Ground-truth bone age; `null` for inference-only records.
    pub bone_age_months: Option<f64>,
    /// Ordered anatomical RoI keypoints as (x, y) pixel coordinates.
    pub keypoints: Vec<[f64; 2]>,
}

/// Difference between chronological age and bone age, in months.
/// Negative values mean bone age exceeds chronological age (accelerated growth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeAge {
    pub value_months: f64,
}

/// r = c - b.
pub fn relative_age(chronological_months: f64, bone_months: f64) -> RelativeAge {
    RelativeAge {
        value_months: chronological_months - bone_months,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub image_size: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
    pub records: Vec<PatientRecord>,
    /// Directory the manifest was loaded from; image paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(image_size: usize, records: Vec<PatientRecord>) -> Self {
        Manifest {
            image_size,
            split: None,
            records,
            base_dir: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keypoint count shared by every record (validated on load).
    pub fn keypoint_count(&self) -> usize {
        self.records.first().map_or(0, |r| r.keypoints.len())
    }

    pub fn image_path(&self, record: &PatientRecord) -> PathBuf {
        self.base_dir.join(&record.image)
    }

    /// Checks every record invariant, naming the first violation.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        let expected_k = self.keypoint_count();
        for r in &self.records {
            let fail = |field: &'static str, detail: String| DatasetError::Validation {
                id: r.id.clone(),
                field,
                detail,
            };
            if !seen.insert(r.id.clone()) {
                return Err(fail("id", "duplicate id".into()));
            }
            if r.gender > 1 {
                return Err(fail("gender", format!("must be 0 or 1, got {}", r.gender)));
            }
            if !r.chronological_age_months.is_finite()
                || !(0.0..=MAX_AGE_MONTHS).contains(&r.chronological_age_months)
            {
                return Err(fail(
                    "chronological_age_months",
                    format!("must lie in [0, {MAX_AGE_MONTHS}], got {}", r.chronological_age_months),
                ));
            }
            if let Some(b) = r.bone_age_months {
                if !b.is_finite() || !(0.0..=MAX_AGE_MONTHS).contains(&b) {
                    return Err(fail(
                        "bone_age_months",
                        format!("must lie in [0, {MAX_AGE_MONTHS}], got {b}"),
                    ));
                }
            }
            if r.keypoints.len() != expected_k {
                return Err(fail(
                    "keypoints",
                    format!("expected {expected_k} keypoints, got {}", r.keypoints.len()),
                ));
            }
            let bound = self.image_size as f64;
            for (i, kp) in r.keypoints.iter().enumerate() {
                if !(kp[0].is_finite() && kp[1].is_finite())
                    || kp[0] < 0.0
                    || kp[1] < 0.0
                    || kp[0] >= bound
                    || kp[1] >= bound
                {
                    return Err(fail(
                        "keypoints",
                        format!("keypoint {i} at ({}, {}) outside {bound}x{bound} raster", kp[0], kp[1]),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse(e.to_string()))?;
    manifest.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Writes a manifest as pretty-printed JSON. Round-trips field-for-field
/// through [`load_manifest`].
pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), DatasetError> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| DatasetError::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// Deterministic 64-bit mix (splitmix64 finalizer); stable across platforms
// and releases, unlike the std hasher.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn record_key(seed: u64, id: &str) -> u64 {
    let mut h = mix64(seed);
    for chunk in id.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        h = mix64(h ^ u64::from_le_bytes(word));
    }
    h
}

/// Partitions a manifest into (train, val, test) as a pure function of the
/// record ids and the seed: permuting the input order does not change the
/// assignment. Partition sizes are `round(n * fraction)`.
pub fn split_deterministic(
    manifest: &Manifest,
    seed: u64,
    fractions: (f64, f64),
) -> Result<(Manifest, Manifest, Manifest), DatasetError> {
    let (f_train, f_val) = fractions;
    if !(f_train > 0.0 && f_val > 0.0 && f_train + f_val < 1.0) {
        return Err(DatasetError::BadFractions(f_train, f_val));
    }
    let n = manifest.len();
    let n_train = (n as f64 * f_train).round() as usize;
    let n_val = (n as f64 * f_val).round() as usize;
    if n_train == 0 {
        return Err(DatasetError::EmptySplit("train"));
    }
    if n_val == 0 {
        return Err(DatasetError::EmptySplit("val"));
    }
    if n_train + n_val >= n {
        return Err(DatasetError::EmptySplit("test"));
    }

    let mut order: Vec<&PatientRecord> = manifest.records.iter().collect();
    order.sort_by(|a, b| {
        record_key(seed, &a.id)
            .cmp(&record_key(seed, &b.id))
            .then_with(|| a.id.cmp(&b.id))
    });

    let make = |slice: &[&PatientRecord], split: Split| {
        let mut records: Vec<PatientRecord> = slice.iter().map(|r| (*r).clone()).collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Manifest {
            image_size: manifest.image_size,
            split: Some(split),
            records,
            base_dir: manifest.base_dir.clone(),
        }
    };
    Ok((
        make(&order[..n_train], Split::Train),
        make(&order[n_train..n_train + n_val], Split::Val),
        make(&order[n_train + n_val..], Split::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, kp: usize) -> PatientRecord {
        PatientRecord {
            id: id.to_string(),
            image: format!("images/{id}.png"),
            gender: 0,
            chronological_age_months: 100.0,
            bone_age_months: Some(96.0),
            keypoints: vec![[10.0, 10.0]; kp],
        }
    }

    fn manifest(n: usize) -> Manifest {
        Manifest::new(64, (0..n).map(|i| record(&format!("p{i:05}"), 8)).collect())
    }

    #[test]
    fn relative_age_sign_convention() {
        assert_eq!(relative_age(100.0, 138.0).value_months, -38.0);
        assert_eq!(relative_age(120.0, 120.0).value_months, 0.0);
        assert_eq!(relative_age(121.0, 120.0).value_months, 1.0);
    }

    #[test]
    fn load_rejects_bad_gender() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(3);
        m.records[1].gender = 2;
        let path = dir.path().join("manifest.json");
        let text = serde_json::to_string(&m).unwrap();
        std::fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err();
        match err {
            DatasetError::Validation { id, field, .. } => {
                assert_eq!(id, "p00001");
                assert_eq!(field, "gender");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn load_rejects_keypoint_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(3);
        m.records[2].keypoints.clear();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Validation { field: "keypoints", .. }));
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(3);
        m.records[2].id = m.records[0].id.clone();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Validation { field: "id", .. }));
    }

    #[test]
    fn load_rejects_malformed_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(DatasetError::Parse(_))));
    }

    #[test]
    fn well_formed_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(3);
        m.records[0].bone_age_months = None;
        m.records[1].chronological_age_months = 123.456789012345;
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records, m.records);
        assert_eq!(loaded.image_size, m.image_size);
        assert_eq!(loaded.split, m.split);
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let m = manifest(10);
        let (tr, va, te) = split_deterministic(&m, 7, (0.6, 0.2)).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));
        assert_eq!(tr.split, Some(Split::Train));
        assert_eq!(va.split, Some(Split::Val));
        assert_eq!(te.split, Some(Split::Test));
    }

    #[test]
    fn split_is_deterministic() {
        let m = manifest(50);
        let ids = |m: &Manifest| m.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        let (a1, b1, c1) = split_deterministic(&m, 7, (0.6, 0.2)).unwrap();
        let (a2, b2, c2) = split_deterministic(&m, 7, (0.6, 0.2)).unwrap();
        assert_eq!(ids(&a1), ids(&a2));
        assert_eq!(ids(&b1), ids(&b2));
        assert_eq!(ids(&c1), ids(&c2));
    }

    #[test]
    fn different_seeds_partition_differently() {
        let m = manifest(100);
        let (a7, _, _) = split_deterministic(&m, 7, (0.6, 0.2)).unwrap();
        let (a8, _, _) = split_deterministic(&m, 8, (0.6, 0.2)).unwrap();
        let ids7: Vec<_> = a7.records.iter().map(|r| &r.id).collect();
        let ids8: Vec<_> = a8.records.iter().map(|r| &r.id).collect();
        assert_ne!(ids7, ids8);
    }

    #[test]
    fn split_rejects_empty_partitions() {
        let m = manifest(3);
        assert!(matches!(
            split_deterministic(&m, 1, (0.34, 0.05)),
            Err(DatasetError::EmptySplit("val"))
        ));
        let m = manifest(4);
        assert!(matches!(
            split_deterministic(&m, 1, (0.5, 0.45)),
            Err(DatasetError::EmptySplit("test"))
        ));
    }

    proptest! {
        #[test]
        fn relative_age_inverts(c_q in 0u32..1200, b_q in 0u32..1200) {
            // Quarter-month grid: ages, differences and their recomposition
            // are all exactly representable, so the identity is exact.
            let c = f64::from(c_q) * 0.25;
            let b = f64::from(b_q) * 0.25;
            let r = relative_age(c, b);
            prop_assert_eq!(r.value_months + b, c);
        }

        #[test]
        fn relative_age_inverts_to_ulp_for_arbitrary_reals(c in 0.0..300.0f64, b in 0.0..300.0f64) {
            let r = relative_age(c, b);
            prop_assert!((r.value_months + b - c).abs() <= 300.0 * f64::EPSILON);
        }

        #[test]
        fn split_invariant_under_permutation(perm_seed in 0u64..1000, n in 6usize..40) {
            let m = manifest(n);
            let mut shuffled = m.clone();
            // Fisher-Yates driven by a splitmix stream.
            let mut state = perm_seed;
            for i in (1..shuffled.records.len()).rev() {
                state = mix64(state);
                let j = (state % (i as u64 + 1)) as usize;
                shuffled.records.swap(i, j);
            }
            let ids = |m: &Manifest| m.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
            let (a1, b1, c1) = split_deterministic(&m, 11, (0.5, 0.25)).unwrap();
            let (a2, b2, c2) = split_deterministic(&shuffled, 11, (0.5, 0.25)).unwrap();
            prop_assert_eq!(ids(&a1), ids(&a2));
            prop_assert_eq!(ids(&b1), ids(&b2));
            prop_assert_eq!(ids(&c1), ids(&c2));
        }
    }
}
