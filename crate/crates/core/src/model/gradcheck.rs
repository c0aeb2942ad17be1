//! Finite-difference verification of every parameter gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_grad, relative_error};
use crate::error::Result;
use crate::model::classifier::{InitOptions, MambaClassifier};
use crate::model::config::ModelConfig;
use crate::tensor::Tensor;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// One block, `d_model = 8`, `N = 4`.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        d_state: 4,
        d_conv: 4,
        expand: 2,
        vocab_size: 16,
        n_classes: 3,
        max_seq_len: 64,
        ..ModelConfig::default()
    }
}

/// Larger weights than the training init so every path carries signal.
pub fn check_init() -> InitOptions {
    InitOptions {
        proj_std: 0.3,
        head_std: 0.5,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub rel_error: f64,
}

impl TensorCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.rel_error < tol
    }
}

/// Compares the tape gradient of the cross-entropy on `(ids, label)` with
/// central differences of step `h`, tensor by tensor. `tamper` may alter
/// the analytic gradients before comparison.
pub fn check_gradients(
    m: &MambaClassifier<f64>,
    ids: &[usize],
    label: usize,
    h: f64,
    mut tamper: impl FnMut(usize, &mut Tensor<f64>),
) -> Result<Vec<TensorCheck>> {
    let mask = vec![true; ids.len()];
    let mut tape = m.new_tape();
    let vars = m.bind(&mut tape, true);
    let logits = m.forward_on_tape(&mut tape, &vars, ids, &mask)?;
    let loss = tape.softmax_cross_entropy(logits, label)?;
    let mut grads = tape.backward(loss)?;

    let mut out = Vec::new();
    for (i, (name, t)) in m.named_tensors().into_iter().enumerate() {
        let mut analytic = grads.take(vars[i]).expect("param gradient");
        tamper(i, &mut analytic);
        let numeric = finite_diff_grad(
            |probe| {
                let mut p = m.clone();
                *p.tensors_mut()[i] = probe.clone();
                let logits = p.forward(ids, &mask)?;
                let (l, _) = crate::ops::softmax_cross_entropy(&logits, label)?;
                Ok(l)
            },
            t,
            h,
        )?;
        out.push(TensorCheck {
            name,
            numel: t.numel(),
            rel_error: relative_error(&analytic, &numeric),
        });
    }
    Ok(out)
}

/// Random model and input for `cfg`, then [`check_gradients`].
pub fn gradcheck(
    cfg: &ModelConfig,
    seq_len: usize,
    seed: u64,
    tamper: impl FnMut(usize, &mut Tensor<f64>),
) -> Result<Vec<TensorCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = MambaClassifier::<f64>::init_with(cfg, &check_init(), &mut rng)?;
    let ids: Vec<usize> = (0..seq_len).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
    let label = rng.random_range(0..cfg.n_classes);
    check_gradients(&m, &ids, label, 1e-5, tamper)
}
