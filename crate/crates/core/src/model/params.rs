use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::derive_seed;
use crate::tensor::Tensor;

use super::{ModelConfig, ModelError};

/// Parameters per encoder layer, in layout order.
pub const LAYER_PARAMS: [&str; 10] = [
    "ln1.gain",
    "ln1.bias",
    "attn.qkv",
    "attn.proj",
    "ln2.gain",
    "ln2.bias",
    "mlp.fc1.weight",
    "mlp.fc1.bias",
    "mlp.fc2.weight",
    "mlp.fc2.bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Names, shapes and initializers of every tensor, in a fixed order.
fn layout(cfg: &ModelConfig) -> Result<Vec<(String, Vec<usize>, Init)>, ModelError> {
    cfg.validate()?;
    let (d, m, f) = (cfg.embed_dim, cfg.num_classes, cfg.mlp_dim);
    let patch_dim = cfg.patch * cfg.patch;
    let mut out = vec![
        ("patch_embed".to_string(), vec![patch_dim, d], Init::Normal),
        ("cls_token".to_string(), vec![1, d], Init::Normal),
        ("dist_token".to_string(), vec![1, d], Init::Normal),
        ("pos_embed".to_string(), vec![cfg.seq_len()?, d], Init::Normal),
    ];
    for l in 0..cfg.layers {
        let shapes: [(Vec<usize>, Init); 10] = [
            (vec![d], Init::Ones),
            (vec![d], Init::Zeros),
            (vec![d, 3 * d], Init::Normal),
            (vec![d, d], Init::Normal),
            (vec![d], Init::Ones),
            (vec![d], Init::Zeros),
            (vec![d, f], Init::Normal),
            (vec![f], Init::Zeros),
            (vec![f, d], Init::Normal),
            (vec![d], Init::Zeros),
        ];
        for (name, (shape, init)) in LAYER_PARAMS.iter().zip(shapes) {
            out.push((format!("layers.{l}.{name}"), shape, init));
        }
    }
    out.push(("final_ln.gain".to_string(), vec![d], Init::Ones));
    out.push(("final_ln.bias".to_string(), vec![d], Init::Zeros));
    out.push(("head_token".to_string(), vec![d, m], Init::Normal));
    out.push(("head_dist".to_string(), vec![d, m], Init::Normal));
    Ok(out)
}

/// Every learnable tensor of the network, addressed by name or position.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Truncated normal (±2σ, σ = `init_std`) weights and tokens, unit
    /// layer-norm gains, zero biases. Each tensor draws from its own stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| ModelError::Config(e.to_string()))?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, shape, init)) in layout(cfg)?.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
                    (0..n)
                        .map(|_| loop {
                            let v: f64 = normal.sample(&mut rng);
                            if v.abs() <= 2.0 * cfg.init_std {
                                break v;
                            }
                        })
                        .collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { names, tensors })
    }

    /// All weights zero, layer-norm gains one.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(cfg)? {
            let value = if init == Init::Ones { 1.0 } else { 0.0 };
            names.push(name);
            tensors.push(Tensor::full(shape, value));
        }
        Ok(Self { names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking them against the
    /// layout for `cfg`. The first mismatch is reported.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let expected = layout(cfg)?;
        for ((name, tensor), (exp_name, exp_shape, _)) in named.iter().zip(&expected) {
            if name != exp_name || tensor.shape() != exp_shape.as_slice() {
                return Err(ModelError::ParamMismatch {
                    name: exp_name.clone(),
                    expected: format!("{exp_shape:?}"),
                    found: format!("{name} {:?}", tensor.shape()),
                });
            }
            if !tensor.is_finite() {
                return Err(ModelError::Contract(format!("parameter {name} is not finite")));
            }
        }
        if named.len() != expected.len() {
            let name = match expected.get(named.len()) {
                Some((missing, _, _)) => missing.clone(),
                None => named[expected.len()].0.clone(),
            };
            return Err(ModelError::ParamMismatch {
                name,
                expected: format!("{} tensors", expected.len()),
                found: format!("{} tensors", named.len()),
            });
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks names and shapes against the layout for `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let named = self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect();
        Self::from_named(cfg, named).map(|_| ())
    }

    /// Exchanges the roles of the class and distiller branches: their
    /// prefix tokens, positional rows and classifier heads.
    pub fn swap_token_roles(&mut self) {
        let idx = |names: &[String], n: &str| names.iter().position(|x| x == n).expect("parameter present");
        let (a, b) = (idx(&self.names, "head_token"), idx(&self.names, "head_dist"));
        self.tensors.swap(a, b);
        let (a, b) = (idx(&self.names, "cls_token"), idx(&self.names, "dist_token"));
        self.tensors.swap(a, b);
        let pos = &mut self.tensors[idx(&self.names, "pos_embed")];
        let d = pos.dims2().1;
        let data = pos.data_mut();
        for j in 0..d {
            data.swap(j, d + j);
        }
    }
}
