//! The multi-task network: one shared trunk feeding an emotion head, a gender
//! head and an age head, trained on the unweighted sum of the three losses.

mod gradcheck;
mod metrics;
pub mod trunk;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::check_model_gradients;
pub use metrics::{score, EvalReport};
pub use trunk::{CnnTrunk, FcnTrunk, Init, ParamSpec, Trunk, TrunkPass, TrunkRegistry, CNN_MIN_INPUT};

use crate::features::FeatureType;
use crate::nn::{self, Adam, NnError, Tensor};

pub const EMOTIONS: [&str; 6] = ["anger", "disgust", "fear", "happy", "neutral", "sad"];
pub const GENDERS: [&str; 2] = ["female", "male"];
pub const FCN_WIDTHS: [usize; 3] = [200, 128, 56];
/// Served age predictions are clamped to this range.
pub const AGE_RANGE: (f64, f64) = (1.0, 100.0);
/// Lower bound on any stored standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Examples per gradient chunk. Chunks run in parallel and are summed in
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown architecture '{name}' (known: {known})")]
    UnknownArch { name: String, known: String },
    #[error("input has {found} dimensions, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("non-finite loss ({0})")]
    NonFiniteLoss(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("cannot evaluate on an empty set")]
    EmptyEvaluation,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub filters1: usize,
    pub filters2: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            filters1: 32,
            filters2: 64,
            kernel: 3,
            pool: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Trunk name in the [`TrunkRegistry`] ("fcn" or "cnn" by default).
    pub arch: String,
    pub input_dim: usize,
    pub feature_type: FeatureType,
    pub cnn: CnnConfig,
    pub fcn_widths: Vec<usize>,
    pub n_emotions: usize,
    pub n_genders: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: &str, feature_type: FeatureType, seed: u64) -> Self {
        Self {
            arch: arch.to_ascii_lowercase(),
            input_dim: feature_type.expected_dim(),
            feature_type,
            cnn: CnnConfig::default(),
            fcn_widths: FCN_WIDTHS.to_vec(),
            n_emotions: EMOTIONS.len(),
            n_genders: GENDERS.len(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.fcn_widths != FCN_WIDTHS {
            return bad(format!("fcn_widths must be {FCN_WIDTHS:?}, got {:?}", self.fcn_widths));
        }
        if self.input_dim != self.feature_type.expected_dim() {
            return bad(format!(
                "input_dim {} does not match {} ({} dims)",
                self.input_dim,
                self.feature_type,
                self.feature_type.expected_dim()
            ));
        }
        if self.n_emotions != EMOTIONS.len() || self.n_genders != GENDERS.len() {
            return bad(format!(
                "expected {} emotions and {} genders, got {} and {}",
                EMOTIONS.len(),
                GENDERS.len(),
                self.n_emotions,
                self.n_genders
            ));
        }
        if self.cnn.pool != 2 || self.cnn.kernel == 0 || self.cnn.filters1 == 0 || self.cnn.filters2 == 0 {
            return bad(format!("unsupported CNN block {:?}", self.cnn));
        }
        if self.arch == "cnn" && self.input_dim < CNN_MIN_INPUT {
            return bad(format!("input_dim {} < {CNN_MIN_INPUT} for the CNN trunk", self.input_dim));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        *self.fcn_widths.last().expect("validated")
    }
}

/// Per-dimension feature standardization and age z-scoring, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub age_mean: f64,
    pub age_std: f64,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            age_mean: 0.0,
            age_std: 1.0,
        }
    }

    pub fn standardize(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&v, (m, s))| (v as f64 - m) / s)
            .collect()
    }

    pub fn age_to_z(&self, years: f64) -> f64 {
        (years - self.age_mean) / self.age_std
    }

    pub fn z_to_age(&self, z: f64) -> f64 {
        z * self.age_std + self.age_mean
    }

    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        if self.feature_mean.len() != dim || self.feature_std.len() != dim {
            return Err(ModelError::Layout(format!(
                "normalizer has {}/{} entries for {dim} dims",
                self.feature_mean.len(),
                self.feature_std.len()
            )));
        }
        let stats_ok = self.feature_mean.iter().chain([&self.age_mean]).all(|v| v.is_finite())
            && self
                .feature_std
                .iter()
                .chain([&self.age_std])
                .all(|s| s.is_finite() && *s >= STD_FLOOR);
        if !stats_ok {
            return Err(ModelError::Layout("normalizer statistics must be finite with std >= 1e-8".into()));
        }
        Ok(())
    }
}

/// Ground truth in natural units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub emotion: usize,
    pub gender: usize,
    pub age_years: f64,
}

/// Ground truth as the loss sees it: class indices and standardized age.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub emotion: usize,
    pub gender: usize,
    pub age_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub emotion: f64,
    pub gender: f64,
    pub age: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            emotion: 1.0,
            gender: 1.0,
            age: 1.0,
        }
    }
}

/// Batch-mean losses per task and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub emotion: f64,
    pub gender: f64,
    pub age: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutputs {
    pub emotion_probs: Vec<f64>,
    pub gender_probs: Vec<f64>,
    pub age_z: f64,
    pub age_years: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    trunk: TrunkPass,
    pub emotion_logits: Vec<f64>,
    pub gender_logits: Vec<f64>,
    pub emotion_probs: Vec<f64>,
    pub gender_probs: Vec<f64>,
    pub age_z: f64,
}

impl ForwardPass {
    pub fn trunk_output(&self) -> &[f64] {
        &self.trunk.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub emotion: &'static str,
    pub emotion_index: usize,
    pub emotion_probs: Vec<f64>,
    pub gender: &'static str,
    pub gender_index: usize,
    pub gender_probs: Vec<f64>,
    pub age_years: f64,
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Summed three-task loss for a single set of outputs.
pub fn total_loss(
    emotion_probs: &[f64],
    gender_probs: &[f64],
    age_z: f64,
    targets: &Targets,
) -> Result<LossBreakdown, ModelError> {
    let emotion = nn::cross_entropy(emotion_probs, targets.emotion)?;
    let gender = nn::cross_entropy(gender_probs, targets.gender)?;
    let age = nn::mse(age_z, targets.age_z).0;
    Ok(LossBreakdown {
        emotion,
        gender,
        age,
        total: emotion + gender + age,
    })
}

// indices of head tensors relative to the first head tensor
const EMO_W: usize = 0;
const EMO_B: usize = 1;
const GEN_W: usize = 2;
const GEN_B: usize = 3;
const AGE_W: usize = 4;
const AGE_B: usize = 5;

#[derive(Clone)]
pub struct MultiTaskModel {
    config: ModelConfig,
    trunk: Arc<dyn Trunk>,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor>,
    n_trunk: usize,
    normalizer: Normalizer,
}

impl std::fmt::Debug for MultiTaskModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiTaskModel")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

fn layout(trunk: &dyn Trunk, config: &ModelConfig) -> Result<(Vec<ParamSpec>, usize), ModelError> {
    config.validate()?;
    let mut specs = trunk.param_specs(config)?;
    let n_trunk = specs.len();
    let width = config.trunk_width();
    for (name, classes) in [("emotion", config.n_emotions), ("gender", config.n_genders), ("age", 1)] {
        specs.push(ParamSpec {
            name: format!("head.{name}.weight"),
            shape: vec![classes, width],
            init: Init::GlorotUniform {
                fan_in: width,
                fan_out: classes,
            },
        });
        specs.push(ParamSpec {
            name: format!("head.{name}.bias"),
            shape: vec![classes],
            init: Init::Zeros,
        });
    }
    Ok((specs, n_trunk))
}

/// Parameter tensors of a model built from `config` with the built-in
/// trunks, in storage order: trunk, then emotion, gender and age heads.
pub fn param_layout(config: &ModelConfig) -> Result<Vec<ParamSpec>, ModelError> {
    let trunk = TrunkRegistry::builtin().get(&config.arch)?;
    Ok(layout(trunk.as_ref(), config)?.0)
}

impl MultiTaskModel {
    /// Builds a freshly initialized model using the built-in trunks.
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build_with(&TrunkRegistry::builtin(), config)
    }

    pub fn build_with(registry: &TrunkRegistry, config: ModelConfig) -> Result<Self, ModelError> {
        let trunk = registry.get(&config.arch)?;
        let (specs, n_trunk) = layout(trunk.as_ref(), &config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .iter()
            .map(|spec| {
                let limit = match spec.init {
                    Init::HeUniform { fan_in } => (6.0 / fan_in as f64).sqrt(),
                    Init::GlorotUniform { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                    Init::Zeros => return Tensor::zeros(&spec.shape),
                };
                let data = (0..spec.len()).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::from_vec(&spec.shape, data).expect("spec length")
            })
            .collect();
        let normalizer = Normalizer::identity(config.input_dim);
        Ok(Self {
            config,
            trunk,
            specs,
            params,
            n_trunk,
            normalizer,
        })
    }

    /// Reassembles a model from stored tensors, checking them against the
    /// architecture's expected layout.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>, normalizer: Normalizer) -> Result<Self, ModelError> {
        let trunk = TrunkRegistry::builtin().get(&config.arch)?;
        let (specs, n_trunk) = layout(trunk.as_ref(), &config)?;
        if params.len() != specs.len() {
            return Err(ModelError::Layout(format!(
                "{} tensors supplied, {} expected",
                params.len(),
                specs.len()
            )));
        }
        for (p, s) in params.iter().zip(&specs) {
            if p.shape() != s.shape.as_slice() {
                return Err(ModelError::Layout(format!(
                    "{}: shape {:?}, expected {:?}",
                    s.name,
                    p.shape(),
                    s.shape
                )));
            }
            if !p.is_finite() {
                return Err(ModelError::Layout(format!("{}: non-finite values", s.name)));
            }
        }
        normalizer.validate(config.input_dim)?;
        Ok(Self {
            config,
            trunk,
            specs,
            params,
            n_trunk,
            normalizer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<(), ModelError> {
        normalizer.validate(self.config.input_dim)?;
        self.normalizer = normalizer;
        Ok(())
    }

    /// Index of the first head tensor; everything before it belongs to the trunk.
    pub fn head_offset(&self) -> usize {
        self.n_trunk
    }

    fn head(&self, i: usize) -> &Tensor {
        &self.params[self.n_trunk + i]
    }

    /// Forward pass on an already standardized input.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass, ModelError> {
        let trunk = self
            .trunk
            .forward(&self.config, &self.params[..self.n_trunk], x)?;
        let emotion_logits = nn::dense(&trunk.output, self.head(EMO_W), self.head(EMO_B))?;
        let gender_logits = nn::dense(&trunk.output, self.head(GEN_W), self.head(GEN_B))?;
        let age_z = nn::dense(&trunk.output, self.head(AGE_W), self.head(AGE_B))?[0];
        Ok(ForwardPass {
            emotion_probs: nn::softmax(&emotion_logits),
            gender_probs: nn::softmax(&gender_logits),
            emotion_logits,
            gender_logits,
            age_z,
            trunk,
        })
    }

    pub fn outputs(&self, x: &[f64]) -> Result<TaskOutputs, ModelError> {
        let pass = self.forward(x)?;
        Ok(TaskOutputs {
            age_years: self.normalizer.z_to_age(pass.age_z),
            emotion_probs: pass.emotion_probs,
            gender_probs: pass.gender_probs,
            age_z: pass.age_z,
        })
    }

    /// Standardizes raw features and runs the network. Age is left unclamped.
    pub fn outputs_raw(&self, features: &[f32]) -> Result<TaskOutputs, ModelError> {
        if features.len() != self.config.input_dim {
            return Err(ModelError::InputDim {
                expected: self.config.input_dim,
                found: features.len(),
            });
        }
        self.outputs(&self.normalizer.standardize(features))
    }

    /// Labelled prediction on raw (unstandardized) features, age clamped to [1, 100] years.
    pub fn predict(&self, features: &[f32]) -> Result<Prediction, ModelError> {
        let out = self.outputs_raw(features)?;
        let emotion_index = argmax(&out.emotion_probs);
        let gender_index = argmax(&out.gender_probs);
        Ok(Prediction {
            emotion: EMOTIONS[emotion_index],
            emotion_index,
            emotion_probs: out.emotion_probs,
            gender: GENDERS[gender_index],
            gender_index,
            gender_probs: out.gender_probs,
            age_years: out.age_years.clamp(AGE_RANGE.0, AGE_RANGE.1),
        })
    }

    /// Mean per-task losses over a batch of standardized inputs.
    pub fn batch_loss(&self, batch: &[(&[f64], Targets)], weights: &LossWeights) -> Result<LossBreakdown, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut sum = LossBreakdown::default();
        for (x, t) in batch {
            let pass = self.forward(x)?;
            let l = total_loss(&pass.emotion_probs, &pass.gender_probs, pass.age_z, t)?;
            sum.emotion += l.emotion;
            sum.gender += l.gender;
            sum.age += l.age;
        }
        Ok(mean_breakdown(sum, batch.len(), weights))
    }

    fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    /// Loss and gradient of the weighted summed loss, averaged over the batch.
    pub fn gradients(
        &self,
        batch: &[(&[f64], Targets)],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Vec<Tensor>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<(LossBreakdown, Vec<Tensor>)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grads = self.zero_grads();
                let mut sum = LossBreakdown::default();
                for (x, t) in chunk {
                    let l = self.accumulate_example(x, t, weights, scale, &mut grads)?;
                    sum.emotion += l.emotion;
                    sum.gender += l.gender;
                    sum.age += l.age;
                }
                Ok((sum, grads))
            })
            .collect::<Result<_, ModelError>>()?;

        let mut iter = partials.into_iter();
        let (mut sum, mut grads) = iter.next().expect("nonempty batch");
        for (s, g) in iter {
            sum.emotion += s.emotion;
            sum.gender += s.gender;
            sum.age += s.age;
            for (acc, part) in grads.iter_mut().zip(&g) {
                acc.data_mut().iter_mut().zip(part.data()).for_each(|(a, b)| *a += b);
            }
        }
        Ok((mean_breakdown(sum, batch.len(), weights), grads))
    }

    /// Backpropagates one example; the trunk receives the sum of the three
    /// head-path gradients.
    fn accumulate_example(
        &self,
        x: &[f64],
        t: &Targets,
        weights: &LossWeights,
        scale: f64,
        grads: &mut [Tensor],
    ) -> Result<LossBreakdown, ModelError> {
        let pass = self.forward(x)?;
        let loss = total_loss(&pass.emotion_probs, &pass.gender_probs, pass.age_z, t)?;

        let mut d_emotion = nn::softmax_cross_entropy_grad(&pass.emotion_probs, t.emotion)?;
        d_emotion.iter_mut().for_each(|g| *g *= weights.emotion * scale);
        let mut d_gender = nn::softmax_cross_entropy_grad(&pass.gender_probs, t.gender)?;
        d_gender.iter_mut().for_each(|g| *g *= weights.gender * scale);
        let d_age = [nn::mse(pass.age_z, t.age_z).1 * weights.age * scale];

        let h = pass.trunk_output();
        let (trunk_grads, head_grads) = grads.split_at_mut(self.n_trunk);
        let mut d_trunk = vec![0.0; h.len()];
        for (head, dy) in [(EMO_W, &d_emotion[..]), (GEN_W, &d_gender[..]), (AGE_W, &d_age[..])] {
            let (gw, gb) = head_grads[head..head + 2].split_at_mut(1);
            let dh = nn::dense_backward(h, self.head(head), dy, &mut gw[0], &mut gb[0]);
            d_trunk.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
        }
        self.trunk.backward(
            &self.config,
            &self.params[..self.n_trunk],
            &pass.trunk,
            &d_trunk,
            trunk_grads,
        );
        Ok(loss)
    }

    /// One optimizer step on the batch. Fails without touching the
    /// parameters when the loss or any gradient is non-finite.
    pub fn train_step(
        &mut self,
        adam: &mut Adam,
        batch: &[(&[f64], Targets)],
        lr: f64,
        weights: &LossWeights,
    ) -> Result<LossBreakdown, ModelError> {
        let (loss, grads) = self.gradients(batch, weights)?;
        if !loss.total.is_finite() {
            return Err(ModelError::NonFiniteLoss(loss.total));
        }
        adam.step(&mut self.params, &grads, lr)?;
        Ok(loss)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Accuracy and RMSE on labelled raw feature vectors.
    pub fn evaluate(&self, examples: &[(&[f32], Labels)]) -> Result<EvalReport, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::EmptyEvaluation);
        }
        let preds = examples
            .iter()
            .map(|(x, _)| {
                let out = self.outputs_raw(x)?;
                Ok((argmax(&out.emotion_probs), argmax(&out.gender_probs), out.age_years))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let labels: Vec<Labels> = examples.iter().map(|(_, l)| *l).collect();
        score(&preds, &labels, self.config.n_emotions)
    }
}

fn mean_breakdown(sum: LossBreakdown, n: usize, w: &LossWeights) -> LossBreakdown {
    let n = n as f64;
    let (emotion, gender, age) = (sum.emotion / n, sum.gender / n, sum.age / n);
    LossBreakdown {
        emotion,
        gender,
        age,
        total: w.emotion * emotion + w.gender * gender + w.age * age,
    }
}
