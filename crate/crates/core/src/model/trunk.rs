//! Shared trunks. Each architecture lives behind [`Trunk`] and is looked up
//! by name in a [`TrunkRegistry`], so configs and the CLI can pick one at
//! runtime.

use std::sync::Arc;

use super::{ModelConfig, ModelError};
use crate::nn::{self, Tensor};

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), for layers followed by ReLU.
    HeUniform { fan_in: usize },
    /// U(-sqrt(6 / (fan_in + fan_out)), ...), for the output heads.
    GlorotUniform { fan_in: usize, fan_out: usize },
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediate values kept from a trunk forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct TrunkPass {
    pub output: Vec<f64>,
    tensors: Vec<Tensor>,
    argmax: Vec<Vec<usize>>,
}

impl TrunkPass {
    /// Which side of each ReLU kink every stored value sits on, plus the
    /// pooling winners. Equal patterns mean the same piecewise-smooth branch.
    pub(crate) fn activation_pattern(&self) -> (Vec<bool>, Vec<Vec<usize>>) {
        let signs = self.tensors.iter().flat_map(|t| t.data().iter().map(|&v| v > 0.0)).collect();
        (signs, self.argmax.clone())
    }
}

pub trait Trunk: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter tensors in storage order.
    fn param_specs(&self, config: &ModelConfig) -> Result<Vec<ParamSpec>, ModelError>;

    fn forward(&self, config: &ModelConfig, params: &[Tensor], x: &[f64]) -> Result<TrunkPass, ModelError>;

    /// Accumulates parameter gradients for `d_out = dL/d(trunk output)` into `grads`.
    fn backward(&self, config: &ModelConfig, params: &[Tensor], pass: &TrunkPass, d_out: &[f64], grads: &mut [Tensor]);
}

fn dense_specs(prefix: &str, input: usize, widths: &[usize]) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        specs.push(ParamSpec::new(format!("{prefix}{}.weight", i + 1), &[w, fan_in], Init::HeUniform { fan_in }));
        specs.push(ParamSpec::new(format!("{prefix}{}.bias", i + 1), &[w], Init::Zeros));
        fan_in = w;
    }
    specs
}

/// Dense -> ReLU stack. Pushes each layer's input and pre-activation onto `tensors`.
fn dense_stack_forward(params: &[Tensor], x: Vec<f64>, tensors: &mut Vec<Tensor>) -> Result<Vec<f64>, ModelError> {
    let mut a = x;
    for layer in params.chunks_exact(2) {
        let z = nn::dense(&a, &layer[0], &layer[1])?;
        let next = nn::relu(&z);
        tensors.push(Tensor::from_vec(&[a.len()], a)?);
        tensors.push(Tensor::from_vec(&[z.len()], z)?);
        a = next;
    }
    Ok(a)
}

/// Reverse of [`dense_stack_forward`]; `tensors` holds (input, pre-activation) per layer.
fn dense_stack_backward(params: &[Tensor], tensors: &[Tensor], d_out: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
    let mut d = d_out.to_vec();
    let n_layers = params.len() / 2;
    for l in (0..n_layers).rev() {
        let input = &tensors[2 * l];
        let pre = &tensors[2 * l + 1];
        let dz = nn::relu_backward(pre.data(), &d);
        let (gw, gb) = grads[2 * l..2 * l + 2].split_at_mut(1);
        d = nn::dense_backward(input.data(), &params[2 * l], &dz, &mut gw[0], &mut gb[0]);
    }
    d
}

/// Three fully connected layers over the raw feature vector.
#[derive(Debug, Default)]
pub struct FcnTrunk;

impl Trunk for FcnTrunk {
    fn name(&self) -> &'static str {
        "fcn"
    }

    fn param_specs(&self, config: &ModelConfig) -> Result<Vec<ParamSpec>, ModelError> {
        Ok(dense_specs("fc", config.input_dim, &config.fcn_widths))
    }

    fn forward(&self, config: &ModelConfig, params: &[Tensor], x: &[f64]) -> Result<TrunkPass, ModelError> {
        check_input(config, x)?;
        let mut tensors = Vec::with_capacity(2 * config.fcn_widths.len());
        let output = dense_stack_forward(params, x.to_vec(), &mut tensors)?;
        Ok(TrunkPass {
            output,
            tensors,
            argmax: Vec::new(),
        })
    }

    fn backward(&self, _config: &ModelConfig, params: &[Tensor], pass: &TrunkPass, d_out: &[f64], grads: &mut [Tensor]) {
        dense_stack_backward(params, &pass.tensors, d_out, grads);
    }
}

/// Two Conv1D -> ReLU -> MaxPool blocks over the feature vector treated as a
/// one-channel sequence, flattened into the same three dense layers as the FCN.
#[derive(Debug, Default)]
pub struct CnnTrunk;

/// Smallest input that survives two conv(k=3)/pool(2) blocks.
pub const CNN_MIN_INPUT: usize = 10;

impl CnnTrunk {
    /// Sequence lengths after conv1, pool1, conv2, pool2.
    pub fn lengths(config: &ModelConfig) -> Result<[usize; 4], ModelError> {
        let k = config.cnn.kernel;
        let d = config.input_dim;
        let too_small = || {
            ModelError::InvalidConfig(format!(
                "input_dim {d} too small for two conv(k={k})/pool(2) blocks"
            ))
        };
        let c1 = d.checked_sub(k - 1).filter(|&l| l >= 2).ok_or_else(too_small)?;
        let p1 = c1 / 2;
        let c2 = p1.checked_sub(k - 1).filter(|&l| l >= 2).ok_or_else(too_small)?;
        Ok([c1, p1, c2, c2 / 2])
    }

    pub fn flatten_width(config: &ModelConfig) -> Result<usize, ModelError> {
        Ok(Self::lengths(config)?[3] * config.cnn.filters2)
    }
}

impl Trunk for CnnTrunk {
    fn name(&self) -> &'static str {
        "cnn"
    }

    fn param_specs(&self, config: &ModelConfig) -> Result<Vec<ParamSpec>, ModelError> {
        let cnn = &config.cnn;
        let flat = Self::flatten_width(config)?;
        let mut specs = vec![
            ParamSpec::new("conv1.weight", &[cnn.filters1, 1, cnn.kernel], Init::HeUniform { fan_in: cnn.kernel }),
            ParamSpec::new("conv1.bias", &[cnn.filters1], Init::Zeros),
            ParamSpec::new(
                "conv2.weight",
                &[cnn.filters2, cnn.filters1, cnn.kernel],
                Init::HeUniform {
                    fan_in: cnn.filters1 * cnn.kernel,
                },
            ),
            ParamSpec::new("conv2.bias", &[cnn.filters2], Init::Zeros),
        ];
        specs.extend(dense_specs("fc", flat, &config.fcn_widths));
        Ok(specs)
    }

    fn forward(&self, config: &ModelConfig, params: &[Tensor], x: &[f64]) -> Result<TrunkPass, ModelError> {
        check_input(config, x)?;
        let input = Tensor::from_vec(&[1, x.len()], x.to_vec())?;
        let c1 = nn::conv1d_valid(&input, &params[0], &params[1])?;
        let r1 = Tensor::from_vec(c1.shape(), nn::relu(c1.data()))?;
        let (p1, arg1) = nn::maxpool1d(&r1)?;
        let c2 = nn::conv1d_valid(&p1, &params[2], &params[3])?;
        let r2 = Tensor::from_vec(c2.shape(), nn::relu(c2.data()))?;
        let (p2, arg2) = nn::maxpool1d(&r2)?;

        let flat = p2.into_data();
        // conv-side cache: input, c1, p1, c2; then the dense stack appends its own.
        let mut tensors = vec![input, c1, p1, c2];
        let output = dense_stack_forward(&params[4..], flat, &mut tensors)?;
        Ok(TrunkPass {
            output,
            tensors,
            argmax: vec![arg1, arg2],
        })
    }

    fn backward(&self, config: &ModelConfig, params: &[Tensor], pass: &TrunkPass, d_out: &[f64], grads: &mut [Tensor]) {
        let (conv_grads, dense_grads) = grads.split_at_mut(4);
        let d_flat = dense_stack_backward(&params[4..], &pass.tensors[4..], d_out, dense_grads);

        let [input, c1, p1, c2] = &pass.tensors[..4] else {
            unreachable!("cnn pass caches four conv tensors")
        };
        let [_, _, _, len_p2] = Self::lengths(config).expect("validated at build time");
        let d_p2 = Tensor::from_vec(&[config.cnn.filters2, len_p2], d_flat).expect("flatten width");
        let d_r2 = nn::maxpool1d_backward(c2.shape(), &pass.argmax[1], &d_p2);
        let d_c2 = Tensor::from_vec(c2.shape(), nn::relu_backward(c2.data(), d_r2.data())).expect("same shape");
        let (g2w, g2b) = conv_grads[2..4].split_at_mut(1);
        let d_p1 = nn::conv1d_backward(p1, &params[2], &d_c2, &mut g2w[0], &mut g2b[0]);

        let d_r1 = nn::maxpool1d_backward(c1.shape(), &pass.argmax[0], &d_p1);
        let d_c1 = Tensor::from_vec(c1.shape(), nn::relu_backward(c1.data(), d_r1.data())).expect("same shape");
        let (g1w, g1b) = conv_grads[0..2].split_at_mut(1);
        nn::conv1d_backward(input, &params[0], &d_c1, &mut g1w[0], &mut g1b[0]);
    }
}

fn check_input(config: &ModelConfig, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != config.input_dim {
        return Err(ModelError::InputDim {
            expected: config.input_dim,
            found: x.len(),
        });
    }
    Ok(())
}

/// Trunk architectures by name.
#[derive(Clone, Default)]
pub struct TrunkRegistry {
    trunks: Vec<Arc<dyn Trunk>>,
}

impl TrunkRegistry {
    pub fn builtin() -> Self {
        let mut reg = Self::default();
        reg.register(Arc::new(FcnTrunk));
        reg.register(Arc::new(CnnTrunk));
        reg
    }

    pub fn register(&mut self, trunk: Arc<dyn Trunk>) {
        self.trunks.retain(|t| t.name() != trunk.name());
        self.trunks.push(trunk);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Trunk>, ModelError> {
        let key = name.to_ascii_lowercase();
        self.trunks
            .iter()
            .find(|t| t.name() == key)
            .cloned()
            .ok_or_else(|| ModelError::UnknownArch {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.trunks.iter().map(|t| t.name()).collect()
    }
}
