//! The bone-age network: a small convolutional backbone over the two-channel
//! (image, heatmap) input, learnable identity-marker multipliers, and a dense
//! head predicting either relative bone age `r = c - b` or bone age directly.

pub mod checkpoint;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heatmap::InputStack;
use crate::tensor::{Element, Tensor};
use layers::{
    conv_forward, conv_backward, conv_output_side, dense_backward, dense_forward, gap_backward,
    gap_forward, relu_backward_inplace, relu_inplace, BatchPlane, ConvParams, DenseParams,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input raster {got_w}x{got_h} does not match model image size {expected}")]
    DimensionMismatch {
        expected: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("relative-age prediction requires a chronological age")]
    MissingChronologicalAge,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("invalid model config: {0}")]
    BadConfig(String),
}

/// Ablation switches: which identity markers feed the head and whether the
/// output is trained as relative bone age.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_gender: bool,
    pub use_chrono: bool,
    pub use_relative: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_gender: true,
            use_chrono: true,
            use_relative: true,
        }
    }
}

impl AblationFlags {
    pub fn marker_slots(&self) -> usize {
        usize::from(self.use_gender) + usize::from(self.use_chrono)
    }
}

/// Architecture and normalization constants. The backbone is a stack of
/// 3x3 stride-2 conv + ReLU stages followed by global average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels per conv stage; the input has 2 channels.
    pub conv_channels: Vec<usize>,
    /// Pooled feature length F; must equal the last conv stage width.
    pub feature_dim: usize,
    /// Width of both hidden dense layers.
    pub hidden_dim: usize,
    /// Square input raster side in pixels.
    pub image_size: usize,
    /// Keypoints expected per record.
    pub keypoint_count: usize,
    /// Gaussian sigma for heatmap rendering, in pixels.
    pub heatmap_sigma: f64,
    /// Ages are divided by this before entering the network; the output head
    /// predicts in the same normalized units.
    pub age_norm_months: f64,
    pub flags: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_channels: vec![16, 32, 64, 64],
            feature_dim: 64,
            hidden_dim: 64,
            image_size: 64,
            keypoint_count: 8,
            heatmap_sigma: 4.0, // image_size / 16
            age_norm_months: 240.0,
            flags: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_channels.is_empty() {
            return Err(ModelError::BadConfig("conv_channels must be non-empty".into()));
        }
        if self.feature_dim != *self.conv_channels.last().unwrap() {
            return Err(ModelError::BadConfig(format!(
                "feature_dim {} must equal the last conv stage width {}",
                self.feature_dim,
                self.conv_channels.last().unwrap()
            )));
        }
        if self.image_size < 1 << self.conv_channels.len() {
            return Err(ModelError::BadConfig(format!(
                "image_size {} too small for {} stride-2 stages",
                self.image_size,
                self.conv_channels.len()
            )));
        }
        if self.hidden_dim == 0 {
            return Err(ModelError::BadConfig("hidden_dim must be positive".into()));
        }
        if !self.heatmap_sigma.is_finite() || self.heatmap_sigma <= 0.0 {
            return Err(ModelError::BadConfig("heatmap_sigma must be positive".into()));
        }
        if !self.age_norm_months.is_finite() || self.age_norm_months <= 0.0 {
            return Err(ModelError::BadConfig("age_norm_months must be positive".into()));
        }
        Ok(())
    }

    /// Input width of the first dense layer: F plus one slot per enabled marker.
    pub fn joint_dim(&self) -> usize {
        self.feature_dim + self.flags.marker_slots()
    }
}

/// All learnable parameters. The same structure doubles as gradient storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SimbaParams<T> {
    pub convs: Vec<ConvParams<T>>,
    pub gender_multiplier: T,
    pub chrono_multiplier: T,
    pub dense1: DenseParams<T>,
    pub dense2: DenseParams<T>,
    pub output: DenseParams<T>,
}

impl<T: Element> SimbaParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut convs = Vec::with_capacity(config.conv_channels.len());
        let mut in_c = 2;
        for &out_c in &config.conv_channels {
            convs.push(ConvParams::zeros(out_c, in_c));
            in_c = out_c;
        }
        SimbaParams {
            convs,
            gender_multiplier: T::zero(),
            chrono_multiplier: T::zero(),
            dense1: DenseParams::zeros(config.hidden_dim, config.joint_dim()),
            dense2: DenseParams::zeros(config.hidden_dim, config.hidden_dim),
            output: DenseParams::zeros(1, config.hidden_dim),
        }
    }

    /// Visits every parameter tensor in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &[usize], &[T])) {
        for (i, conv) in self.convs.iter().enumerate() {
            f(&format!("backbone.conv{i}.weight"), conv.weight.dims(), conv.weight.data());
            f(&format!("backbone.conv{i}.bias"), &[conv.bias.len()], &conv.bias);
        }
        f("head.m_g", &[], std::slice::from_ref(&self.gender_multiplier));
        f("head.m_c", &[], std::slice::from_ref(&self.chrono_multiplier));
        f("head.dense1.weight", self.dense1.weight.dims(), self.dense1.weight.data());
        f("head.dense1.bias", &[self.dense1.bias.len()], &self.dense1.bias);
        f("head.dense2.weight", self.dense2.weight.dims(), self.dense2.weight.data());
        f("head.dense2.bias", &[self.dense2.bias.len()], &self.dense2.bias);
        f("head.output.weight", self.output.weight.dims(), self.output.weight.data());
        f("head.output.bias", &[self.output.bias.len()], &self.output.bias);
    }

    /// Mutable visitation in the same order as [`Self::for_each`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            f(&format!("backbone.conv{i}.weight"), conv.weight.data_mut());
            f(&format!("backbone.conv{i}.bias"), &mut conv.bias);
        }
        f("head.m_g", std::slice::from_mut(&mut self.gender_multiplier));
        f("head.m_c", std::slice::from_mut(&mut self.chrono_multiplier));
        f("head.dense1.weight", self.dense1.weight.data_mut());
        f("head.dense1.bias", &mut self.dense1.bias);
        f("head.dense2.weight", self.dense2.weight.data_mut());
        f("head.dense2.bias", &mut self.dense2.bias);
        f("head.output.weight", self.output.weight.data_mut());
        f("head.output.bias", &mut self.output.bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _, data| n += data.len());
        n
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.for_each(|_, _, data| flat.extend_from_slice(data));
        flat
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, _, data| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn convert<U: Element>(&self) -> SimbaParams<U> {
        let widen = |t: &Tensor<T>| t.map(|v| U::of_f64(v.as_f64()));
        SimbaParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: widen(&c.weight),
                    bias: c.bias.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
                })
                .collect(),
            gender_multiplier: U::of_f64(self.gender_multiplier.as_f64()),
            chrono_multiplier: U::of_f64(self.chrono_multiplier.as_f64()),
            dense1: DenseParams {
                weight: widen(&self.dense1.weight),
                bias: self.dense1.bias.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
            },
            dense2: DenseParams {
                weight: widen(&self.dense2.weight),
                bias: self.dense2.bias.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
            },
            output: DenseParams {
                weight: widen(&self.output.weight),
                bias: self.output.bias.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
            },
        }
    }
}

/// One training/inference input: the stacked raster plus identity markers.
/// Marker values are ignored when the corresponding flag is disabled.
#[derive(Debug, Clone, Copy)]
pub struct SampleInput<'a, T> {
    pub stack: &'a InputStack<T>,
    /// 0 = male, 1 = female.
    pub gender: T,
    /// Chronological age divided by `age_norm_months`.
    pub chrono_norm: T,
}

pub struct SimbaModel<T> {
    pub config: ModelConfig,
    pub params: SimbaParams<T>,
}

// Post-ReLU activation planes per stage, plus the stage input dims and
// im2col buffers needed by the backward pass.
struct BackboneTrace<T> {
    planes: Vec<BatchPlane<T>>,
    cols: Vec<Vec<T>>,
    input_dims: Vec<(usize, usize, usize)>,
    feats: Vec<T>,
}

struct ForwardCache<T> {
    backbone: BackboneTrace<T>,
    joint: Vec<T>,
    hidden1: Vec<T>,
    hidden2: Vec<T>,
    outputs: Vec<T>,
}

impl<T: Element> SimbaModel<T> {
    /// Fan-in-scaled uniform weights, zero biases, multipliers at 1. All
    /// draws come from one stream seeded by `seed`, in visitation order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = SimbaParams::<T>::zeros(&config);
        for conv in &mut params.convs {
            let fan_in = conv.in_channels() * layers::KERNEL * layers::KERNEL;
            let limit = (1.0 / fan_in as f64).sqrt();
            for w in conv.weight.data_mut() {
                *w = T::of_f64(rng.random_range(-limit..=limit));
            }
        }
        params.gender_multiplier = T::one();
        params.chrono_multiplier = T::one();
        for dense in [&mut params.dense1, &mut params.dense2, &mut params.output] {
            let limit = (1.0 / dense.in_features() as f64).sqrt();
            for w in dense.weight.data_mut() {
                *w = T::of_f64(rng.random_range(-limit..=limit));
            }
        }
        Ok(SimbaModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: SimbaParams<T>) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(SimbaModel { config, params })
    }

    pub fn convert<U: Element>(&self) -> SimbaModel<U> {
        SimbaModel {
            config: self.config.clone(),
            params: self.params.convert(),
        }
    }

    fn check_stack(&self, stack: &InputStack<T>) -> Result<(), ModelError> {
        if stack.width != self.config.image_size || stack.height != self.config.image_size {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.image_size,
                got_w: stack.width,
                got_h: stack.height,
            });
        }
        Ok(())
    }

    fn stack_batch(&self, samples: &[SampleInput<'_, T>]) -> Result<BatchPlane<T>, ModelError> {
        let side = self.config.image_size;
        let spatial = side * side;
        let batch = samples.len();
        let mut plane = BatchPlane::zeros(2, side, side, batch);
        for (b, sample) in samples.iter().enumerate() {
            self.check_stack(sample.stack)?;
            for c in 0..2 {
                plane
                    .sample_channel_mut(c, b)
                    .copy_from_slice(&sample.stack.data[c * spatial..(c + 1) * spatial]);
            }
        }
        Ok(plane)
    }

    fn backbone_forward(&self, input: BatchPlane<T>) -> BackboneTrace<T> {
        let stages = self.params.convs.len();
        let mut trace = BackboneTrace {
            planes: Vec::with_capacity(stages),
            cols: Vec::with_capacity(stages),
            input_dims: Vec::with_capacity(stages),
            feats: Vec::new(),
        };
        for (i, conv) in self.params.convs.iter().enumerate() {
            let current = if i == 0 { &input } else { &trace.planes[i - 1] };
            trace
                .input_dims
                .push((current.channels, current.height, current.width));
            let (mut out, cols) = conv_forward(current, conv);
            relu_inplace(&mut out.data);
            trace.cols.push(cols);
            trace.planes.push(out);
        }
        trace.feats = gap_forward(trace.planes.last().unwrap());
        trace
    }

    fn fuse_batch(&self, feats: &[T], samples: &[SampleInput<'_, T>]) -> Vec<T> {
        let f_dim = self.config.feature_dim;
        let mut joint = Vec::with_capacity(samples.len() * self.config.joint_dim());
        for (b, sample) in samples.iter().enumerate() {
            joint.extend(self.fuse_markers(
                &feats[b * f_dim..(b + 1) * f_dim],
                sample.gender,
                sample.chrono_norm,
            ));
        }
        joint
    }

    fn head_forward(&self, joint: &[T], batch: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut hidden1 = dense_forward(joint, batch, &self.params.dense1);
        relu_inplace(&mut hidden1);
        let mut hidden2 = dense_forward(&hidden1, batch, &self.params.dense2);
        relu_inplace(&mut hidden2);
        let outputs = dense_forward(&hidden2, batch, &self.params.output);
        (hidden1, hidden2, outputs)
    }

    fn forward_cached(&self, samples: &[SampleInput<'_, T>]) -> Result<ForwardCache<T>, ModelError> {
        let plane = self.stack_batch(samples)?;
        let backbone = self.backbone_forward(plane);
        let joint = self.fuse_batch(&backbone.feats, samples);
        let (hidden1, hidden2, outputs) = self.head_forward(&joint, samples.len());
        Ok(ForwardCache {
            backbone,
            joint,
            hidden1,
            hidden2,
            outputs,
        })
    }

    /// Normalized head outputs for a batch.
    pub fn forward_batch(&self, samples: &[SampleInput<'_, T>]) -> Result<Vec<T>, ModelError> {
        Ok(self.forward_cached(samples)?.outputs)
    }

    /// Pooled backbone features for one raster (length F).
    pub fn extract_features(&self, stack: &InputStack<T>) -> Result<Vec<T>, ModelError> {
        self.check_stack(stack)?;
        let sample = SampleInput {
            stack,
            gender: T::zero(),
            chrono_norm: T::zero(),
        };
        let plane = self.stack_batch(std::slice::from_ref(&sample))?;
        Ok(self.backbone_forward(plane).feats)
    }

    /// Joint representation for one sample: the feature vector, then
    /// `m_g * gender` and `m_c * chrono_norm` for whichever markers are
    /// enabled. Length is `F + enabled marker count`.
    pub fn fuse_markers(&self, features: &[T], gender: T, chrono_norm: T) -> Vec<T> {
        assert_eq!(features.len(), self.config.feature_dim);
        let mut joint = Vec::with_capacity(self.config.joint_dim());
        joint.extend_from_slice(features);
        if self.config.flags.use_gender {
            joint.push(self.params.gender_multiplier * gender);
        }
        if self.config.flags.use_chrono {
            joint.push(self.params.chrono_multiplier * chrono_norm);
        }
        joint
    }

    /// Head outputs given precomputed backbone features (`[batch][F]`).
    /// The backbone does not depend on head parameters, so this matches the
    /// full forward pass exactly.
    pub fn head_outputs_from_features(
        &self,
        feats: &[T],
        genders: &[T],
        chrono_norms: &[T],
    ) -> Vec<T> {
        let f_dim = self.config.feature_dim;
        let batch = feats.len() / f_dim;
        let mut joint = Vec::with_capacity(batch * self.config.joint_dim());
        for b in 0..batch {
            joint.extend(self.fuse_markers(
                &feats[b * f_dim..(b + 1) * f_dim],
                genders[b],
                chrono_norms[b],
            ));
        }
        let (_, _, outputs) = self.head_forward(&joint, batch);
        outputs
    }

    /// Relative bone age prediction in months.
    pub fn predict_residual(&self, sample: SampleInput<'_, T>) -> Result<f64, ModelError> {
        let outputs = self.forward_batch(std::slice::from_ref(&sample))?;
        Ok(outputs[0].as_f64() * self.config.age_norm_months)
    }

    /// Bone age prediction in months. Under the relative formulation the
    /// output is inverted through the chronological age: `b = c - r`.
    pub fn predict_bone_age(
        &self,
        sample: SampleInput<'_, T>,
        chronological_months: Option<f64>,
    ) -> Result<f64, ModelError> {
        let normalized = self.forward_batch(std::slice::from_ref(&sample))?[0].as_f64();
        let months = normalized * self.config.age_norm_months;
        if self.config.flags.use_relative {
            let c = chronological_months.ok_or(ModelError::MissingChronologicalAge)?;
            Ok(c - months)
        } else {
            Ok(months)
        }
    }

    /// Mean L1 loss in normalized units and exact gradients for every
    /// parameter, including the marker multipliers.
    pub fn loss_and_gradients(
        &self,
        samples: &[SampleInput<'_, T>],
        targets_norm: &[T],
    ) -> Result<(T, SimbaParams<T>), ModelError> {
        assert_eq!(samples.len(), targets_norm.len());
        let batch = samples.len();
        let cache = self.forward_cached(samples)?;
        let inv_batch = T::one() / T::from_usize(batch).unwrap();

        let mut loss = T::zero();
        let mut d_outputs = vec![T::zero(); batch];
        for b in 0..batch {
            let diff = cache.outputs[b] - targets_norm[b];
            loss += diff.abs() * inv_batch;
            d_outputs[b] = T::of_f64(diff.as_f64().signum()) * inv_batch;
            if diff == T::zero() {
                d_outputs[b] = T::zero();
            }
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteGradient);
        }

        let mut grads = SimbaParams::<T>::zeros(&self.config);

        // Head backward.
        let mut d_hidden2 =
            dense_backward(&cache.hidden2, &d_outputs, batch, &self.params.output, &mut grads.output);
        relu_backward_inplace(&mut d_hidden2, &cache.hidden2);
        let mut d_hidden1 =
            dense_backward(&cache.hidden1, &d_hidden2, batch, &self.params.dense2, &mut grads.dense2);
        relu_backward_inplace(&mut d_hidden1, &cache.hidden1);
        let d_joint =
            dense_backward(&cache.joint, &d_hidden1, batch, &self.params.dense1, &mut grads.dense1);

        // Split joint gradients into feature and marker-slot parts.
        let f_dim = self.config.feature_dim;
        let joint_dim = self.config.joint_dim();
        let flags = self.config.flags;
        let mut d_feats = vec![T::zero(); batch * f_dim];
        for (b, sample) in samples.iter().enumerate() {
            let row = &d_joint[b * joint_dim..(b + 1) * joint_dim];
            d_feats[b * f_dim..(b + 1) * f_dim].copy_from_slice(&row[..f_dim]);
            let mut slot = f_dim;
            if flags.use_gender {
                grads.gender_multiplier += sample.gender * row[slot];
                slot += 1;
            }
            if flags.use_chrono {
                grads.chrono_multiplier += sample.chrono_norm * row[slot];
            }
        }

        // Backbone backward.
        let last = cache.backbone.planes.last().unwrap();
        let mut d_plane = gap_backward(&d_feats, last.channels, last.height, last.width, batch);
        for stage in (0..self.params.convs.len()).rev() {
            relu_backward_inplace(&mut d_plane.data, &cache.backbone.planes[stage].data);
            let d_input = conv_backward(
                &d_plane,
                &cache.backbone.cols[stage],
                &self.params.convs[stage],
                cache.backbone.input_dims[stage],
                &mut grads.convs[stage],
                stage > 0,
            );
            match d_input {
                Some(d) => d_plane = d,
                None => break,
            }
        }

        if !grads.all_finite() {
            return Err(ModelError::NonFiniteGradient);
        }
        Ok((loss, grads))
    }
}

pub fn conv_stage_sides(image_size: usize, stages: usize) -> Vec<usize> {
    let mut sides = Vec::with_capacity(stages);
    let mut side = image_size;
    for _ in 0..stages {
        side = conv_output_side(side);
        sides.push(side);
    }
    sides
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::InputStack;

    fn stack(side: usize, value: f64) -> InputStack<f64> {
        InputStack {
            width: side,
            height: side,
            data: vec![value; 2 * side * side],
        }
    }

    fn small_config(flags: AblationFlags) -> ModelConfig {
        ModelConfig {
            conv_channels: vec![4, 8],
            feature_dim: 8,
            hidden_dim: 6,
            image_size: 16,
            heatmap_sigma: 1.0,
            flags,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_params_give_zero_features_and_outputs() {
        let config = small_config(AblationFlags::default());
        let model = SimbaModel::<f64>::from_parts(config.clone(), SimbaParams::zeros(&config)).unwrap();
        let s = stack(16, 0.5);
        let feats = model.extract_features(&s).unwrap();
        assert_eq!(feats.len(), 8);
        assert!(feats.iter().all(|&v| v == 0.0));
        let out = model
            .predict_residual(SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.5 })
            .unwrap();
        assert_eq!(out, 0.0);
    }

    #[test]
    fn output_bias_alone_sets_constant_prediction() {
        let config = small_config(AblationFlags { use_relative: false, ..Default::default() });
        let mut params = SimbaParams::<f64>::zeros(&config);
        params.output.bias[0] = 0.5;
        let model = SimbaModel::from_parts(config, params).unwrap();
        let s = stack(16, 0.3);
        let b_hat = model
            .predict_bone_age(SampleInput { stack: &s, gender: 0.0, chrono_norm: 0.2 }, None)
            .unwrap();
        assert_eq!(b_hat, 120.0); // 0.5 * 240
    }

    #[test]
    fn bias_free_single_stage_is_positively_homogeneous() {
        let config = ModelConfig {
            conv_channels: vec![4],
            feature_dim: 4,
            hidden_dim: 4,
            image_size: 16,
            heatmap_sigma: 1.0,
            ..ModelConfig::default()
        };
        let model = SimbaModel::<f64>::init(config, 3).unwrap();
        // Init already leaves biases at zero.
        let s1 = stack(16, 0.25);
        let s2 = stack(16, 0.5);
        let f1 = model.extract_features(&s1).unwrap();
        let f2 = model.extract_features(&s2).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn marker_slots_follow_flags() {
        for (g, c) in [(false, false), (true, false), (false, true), (true, true)] {
            let flags = AblationFlags { use_gender: g, use_chrono: c, use_relative: true };
            let config = small_config(flags);
            let model = SimbaModel::<f64>::init(config.clone(), 0).unwrap();
            assert_eq!(model.params.dense1.in_features(), 8 + flags.marker_slots());
            let s = stack(16, 0.4);
            let feats = model.extract_features(&s).unwrap();
            let joint = model.fuse_markers(&feats, 1.0, 0.5);
            assert_eq!(joint.len(), config.joint_dim());
        }
    }

    #[test]
    fn gender_slot_is_multiplier_times_gender() {
        let config = small_config(AblationFlags::default());
        let mut params = SimbaParams::<f64>::zeros(&config);
        params.gender_multiplier = 3.0;
        params.chrono_multiplier = 2.0;
        let model = SimbaModel::from_parts(config.clone(), params).unwrap();
        let s = stack(16, 0.0);
        let feats = model.extract_features(&s).unwrap();
        let joint = model.fuse_markers(&feats, 1.0, 0.25);
        assert_eq!(joint[config.feature_dim], 3.0);
        assert_eq!(joint[config.feature_dim + 1], 0.5);
        // Gender 0 annihilates the slot regardless of the multiplier.
        let joint0 = model.fuse_markers(&feats, 0.0, 0.25);
        assert_eq!(joint0[config.feature_dim], 0.0);
    }

    #[test]
    fn baseline_never_reads_markers() {
        let flags = AblationFlags { use_gender: false, use_chrono: false, use_relative: false };
        let config = small_config(flags);
        let model = SimbaModel::<f64>::init(config, 11).unwrap();
        let s = stack(16, 0.7);
        let a = model
            .forward_batch(&[SampleInput { stack: &s, gender: 0.0, chrono_norm: 0.0 }])
            .unwrap();
        let b = model
            .forward_batch(&[SampleInput { stack: &s, gender: 1.0, chrono_norm: 1.2 }])
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relative_prediction_requires_chronological_age() {
        let config = small_config(AblationFlags::default());
        let model = SimbaModel::<f64>::init(config, 5).unwrap();
        let s = stack(16, 0.1);
        let sample = SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.5 };
        assert!(matches!(
            model.predict_bone_age(sample, None),
            Err(ModelError::MissingChronologicalAge)
        ));
        let b_hat = model.predict_bone_age(sample, Some(120.0)).unwrap();
        let r_hat = model.predict_residual(sample).unwrap();
        assert!((b_hat - (120.0 - r_hat)).abs() < 1e-12);
    }

    #[test]
    fn dense_chain_matches_straight_line_reimplementation() {
        let config = small_config(AblationFlags::default());
        let model = SimbaModel::<f64>::init(config.clone(), 17).unwrap();
        let s = stack(16, 0.6);
        let sample = SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.9 };
        let got = model.predict_residual(sample).unwrap();

        // Independent re-implementation of the three layers.
        let feats = model.extract_features(&s).unwrap();
        let mut x = feats.clone();
        x.push(model.params.gender_multiplier * 1.0);
        x.push(model.params.chrono_multiplier * 0.9);
        let dense = |w: &DenseParams<f64>, x: &[f64], relu: bool| -> Vec<f64> {
            (0..w.out_features())
                .map(|o| {
                    let mut acc = w.bias[o];
                    for (i, &xi) in x.iter().enumerate() {
                        acc += w.weight.data()[o * w.in_features() + i] * xi;
                    }
                    if relu {
                        acc.max(0.0)
                    } else {
                        acc
                    }
                })
                .collect()
        };
        let h1 = dense(&model.params.dense1, &x, true);
        let h2 = dense(&model.params.dense2, &h1, true);
        let o = dense(&model.params.output, &h2, false)[0];
        assert!((got - o * 240.0).abs() < 1e-6);
    }

    #[test]
    fn gradients_zero_when_loss_zero() {
        let config = small_config(AblationFlags::default());
        let config2 = config.clone();
        let model = SimbaModel::<f64>::from_parts(config, SimbaParams::zeros(&config2)).unwrap();
        let s = stack(16, 0.5);
        let samples = [SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.5 }];
        let (loss, grads) = model.loss_and_gradients(&samples, &[0.0]).unwrap();
        assert_eq!(loss, 0.0);
        grads.for_each(|_, _, data| assert!(data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gender_multiplier_gradient_zero_for_all_male_batch() {
        let config = small_config(AblationFlags::default());
        let model = SimbaModel::<f64>::init(config, 23).unwrap();
        let s = stack(16, 0.8);
        let samples = [
            SampleInput { stack: &s, gender: 0.0, chrono_norm: 0.3 },
            SampleInput { stack: &s, gender: 0.0, chrono_norm: 0.7 },
        ];
        let (_, grads) = model.loss_and_gradients(&samples, &[0.1, -0.2]).unwrap();
        assert_eq!(grads.gender_multiplier, 0.0);
        assert!(grads.chrono_multiplier != 0.0);
    }

    #[test]
    fn zeroed_marker_column_kills_multiplier_gradient() {
        // Gradients reach the multipliers only through their joint slot:
        // zeroing the matching dense1 input column must zero them.
        let config = small_config(AblationFlags::default());
        let mut model = SimbaModel::<f64>::init(config.clone(), 41).unwrap();
        let f_dim = config.feature_dim;
        let in_dim = model.params.dense1.in_features();
        for row in 0..model.params.dense1.out_features() {
            model.params.dense1.weight.data_mut()[row * in_dim + f_dim] = 0.0; // gender slot
        }
        let s = stack(16, 0.8);
        let samples = [
            SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.3 },
            SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.7 },
        ];
        let (_, grads) = model.loss_and_gradients(&samples, &[0.1, -0.2]).unwrap();
        assert_eq!(grads.gender_multiplier, 0.0);
        assert!(grads.chrono_multiplier != 0.0);
    }

    #[test]
    fn non_finite_inputs_surface_as_error() {
        let config = small_config(AblationFlags::default());
        let mut params = SimbaParams::<f64>::zeros(&config);
        params.output.bias[0] = f64::INFINITY;
        let model = SimbaModel::from_parts(config, params).unwrap();
        let s = stack(16, 0.5);
        let samples = [SampleInput { stack: &s, gender: 0.0, chrono_norm: 0.5 }];
        assert!(matches!(
            model.loss_and_gradients(&samples, &[0.0]),
            Err(ModelError::NonFiniteGradient)
        ));
    }

    #[test]
    fn dimension_mismatch_detected() {
        let config = small_config(AblationFlags::default());
        let model = SimbaModel::<f64>::init(config, 2).unwrap();
        let s = stack(8, 0.5);
        assert!(matches!(
            model.extract_features(&s),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let config = small_config(AblationFlags::default());
        let model = SimbaModel::<f64>::init(config, 31).unwrap();
        let s = stack(16, 0.42);
        let sample = SampleInput { stack: &s, gender: 1.0, chrono_norm: 0.6 };
        let a = model.forward_batch(&[sample]).unwrap();
        let b = model.forward_batch(&[sample]).unwrap();
        assert_eq!(a, b);
    }
}
