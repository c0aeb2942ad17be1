use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DType;

/// How per-position hidden states are reduced to one vector before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Average over unmasked positions.
    #[default]
    Mean,
    /// Last unmasked position.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    /// State size `N` per inner channel.
    pub d_state: usize,
    /// Depthwise convolution width.
    pub d_conv: usize,
    /// `d_inner = expand · d_model`
    pub expand: usize,
    /// Width of the Δ bottleneck; `None` means `max(1, ⌈d_model/16⌉)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_rank: Option<usize>,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub max_seq_len: usize,
    pub pooling: Pooling,
    pub dtype: DType,
    /// Exact zero-order-hold drive `(exp(ΔA) − 1)/A·B` instead of `Δ·B`.
    pub exact_zoh_b: bool,
    /// Evaluate scan states with the associative tree scan.
    pub parallel_scan: bool,
    pub norm_eps: f64,
    /// Display names, one per class; empty means `class_<i>`.
    pub class_names: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            d_state: 8,
            d_conv: 4,
            expand: 2,
            dt_rank: None,
            vocab_size: 2,
            n_classes: 2,
            max_seq_len: 512,
            pooling: Pooling::Mean,
            dtype: DType::F32,
            exact_zoh_b: false,
            parallel_scan: false,
            norm_eps: 1e-5,
            class_names: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Shape of the 24-layer, ~130M-parameter reference backbone with a
    /// binary head. Expressible, not meant to be trained here.
    pub fn mamba_130m_shape() -> Self {
        Self {
            d_model: 768,
            n_layers: 24,
            d_state: 16,
            d_conv: 4,
            expand: 2,
            vocab_size: 50_280,
            n_classes: 2,
            max_seq_len: 8000,
            ..Self::default()
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_rank.unwrap_or_else(|| self.d_model.div_ceil(16).max(1))
    }

    pub fn class_name(&self, c: usize) -> String {
        self.class_names
            .get(c)
            .cloned()
            .unwrap_or_else(|| format!("class_{c}"))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("expand", self.expand),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be ≥ 1"));
            }
        }
        if self.dt_rank == Some(0) {
            return fail("dt_rank must be ≥ 1".into());
        }
        if self.n_classes < 2 {
            return fail(format!("n_classes must be ≥ 2, got {}", self.n_classes));
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be ≥ 2, got {}", self.vocab_size));
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return fail(format!("norm_eps must be > 0, got {}", self.norm_eps));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.n_classes {
            return fail(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.n_classes
            ));
        }
        Ok(())
    }
}

/// Whether a tensor is a matrix of weights or a per-channel vector
/// (norm gains, biases, skip weights).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Matrix,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn kind(&self) -> ParamKind {
        if self.shape.len() >= 2 {
            ParamKind::Matrix
        } else {
            ParamKind::Vector
        }
    }
}

pub(crate) fn block_param_specs(cfg: &ModelConfig, layer: usize) -> Vec<ParamSpec> {
    let (dm, di, n, k, r) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv, cfg.dt_rank());
    let p = |s: &str| format!("blocks.{layer}.{s}");
    vec![
        ParamSpec::new(p("norm"), &[dm]),
        ParamSpec::new(p("in_proj"), &[dm, 2 * di]),
        ParamSpec::new(p("conv_w"), &[di, k]),
        ParamSpec::new(p("conv_b"), &[di]),
        ParamSpec::new(p("x_proj"), &[di, r + 2 * n]),
        ParamSpec::new(p("dt_proj"), &[r, di]),
        ParamSpec::new(p("dt_bias"), &[di]),
        ParamSpec::new(p("a_log"), &[di, n]),
        ParamSpec::new(p("d_skip"), &[di]),
        ParamSpec::new(p("out_proj"), &[di, dm]),
    ]
}

/// Every tensor of the classifier, in canonical (checkpoint) order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = vec![ParamSpec::new("embedding", &[cfg.vocab_size, cfg.d_model])];
    for layer in 0..cfg.n_layers {
        out.extend(block_param_specs(cfg, layer));
    }
    out.push(ParamSpec::new("final_norm", &[cfg.d_model]));
    out.push(ParamSpec::new("head.weight", &[cfg.d_model, cfg.n_classes]));
    out.push(ParamSpec::new("head.bias", &[cfg.n_classes]));
    out
}

/// Exact number of scalars in the classifier.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    param_specs(cfg).iter().map(|p| p.numel() as u64).sum()
}

/// Bytes for `n_params` weights at `bytes_per_weight`, in MB (10⁶ bytes).
pub fn memory_footprint(n_params: u64, bytes_per_weight: u64) -> f64 {
    (n_params as f64 * bytes_per_weight as f64) / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            d_state: 4,
            d_conv: 4,
            expand: 2,
            dt_rank: Some(1),
            vocab_size: 10,
            n_classes: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn dt_rank_default() {
        let mut c = ModelConfig::default();
        assert_eq!(c.dt_rank(), 4);
        c.d_model = 8;
        assert_eq!(c.dt_rank(), 1);
        c.d_model = 17;
        assert_eq!(c.dt_rank(), 2);
        assert_eq!(ModelConfig::mamba_130m_shape().dt_rank(), 48);
    }

    #[test]
    fn toy_count_matches_enumeration() {
        // Frozen from an independent per-tensor enumeration of the toy shapes.
        assert_eq!(count_params(&toy()), 834);
    }

    #[test]
    fn embedding_contribution_and_layer_linearity() {
        let c = toy();
        let mut bigger = c.clone();
        bigger.vocab_size += 5;
        assert_eq!(count_params(&bigger) - count_params(&c), 5 * c.d_model as u64);

        let per_block: u64 = block_param_specs(&c, 0).iter().map(|p| p.numel() as u64).sum();
        let mut doubled = c.clone();
        doubled.n_layers = 2 * c.n_layers;
        assert_eq!(count_params(&doubled), count_params(&c) + c.n_layers as u64 * per_block);
    }

    #[test]
    fn reference_shape_is_near_130m() {
        let n = count_params(&ModelConfig::mamba_130m_shape()) as f64;
        assert!((n - 130e6).abs() / 130e6 < 0.05, "{n}");
        assert_eq!(ModelConfig::mamba_130m_shape().n_layers, 24);
    }

    #[test]
    fn footprint_arithmetic() {
        assert_eq!(memory_footprint(130_000_000, 4), 520.0);
        assert_eq!(memory_footprint(130_000_000, 1), 130.0);
        assert_eq!(1.0 - memory_footprint(130_000_000, 1) / memory_footprint(130_000_000, 4), 0.75);
        assert_eq!(memory_footprint(0, 4), 0.0);
    }

    #[test]
    fn validation() {
        assert!(toy().validate().is_ok());
        for bad in [
            ModelConfig { n_layers: 0, ..toy() },
            ModelConfig { n_classes: 1, ..toy() },
            ModelConfig { max_seq_len: 0, ..toy() },
            ModelConfig { dt_rank: Some(0), ..toy() },
            ModelConfig {
                class_names: vec!["a".into()],
                ..toy()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = toy();
        c.class_names = vec!["neg".into(), "pos".into()];
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), c);
        assert!(toml::from_str::<ModelConfig>("bogus = 1").is_err());
    }
}
