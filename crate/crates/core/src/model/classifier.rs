use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::config::{param_specs, ModelConfig, Pooling};
use crate::scan::{ScanMode, SelectiveSsmParams};
use crate::seed;
use crate::tensor::{s, Scalar, Tensor};

/// Parameters of one Mamba block.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaBlockParams<T: Scalar = f32> {
    /// RMSNorm gain, `d_model`
    pub norm: Tensor<T>,
    /// `d_model × 2·d_inner`: SSM branch then gate branch
    pub in_proj: Tensor<T>,
    /// `d_inner × d_conv`
    pub conv_w: Tensor<T>,
    /// `d_inner`
    pub conv_b: Tensor<T>,
    pub ssm: SelectiveSsmParams<T>,
    /// `d_inner × d_model`
    pub out_proj: Tensor<T>,
    pub norm_eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Standard deviation of embeddings and projection weights.
    pub proj_std: f64,
    /// Standard deviation of the head weights; 0 gives a zero head.
    pub head_std: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            proj_std: 0.02,
            head_std: 0.0,
        }
    }
}

impl<T: Scalar> MambaBlockParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, opts: &InitOptions, rng: &mut R) -> Self {
        let (dm, di, k) = (cfg.d_model, cfg.d_inner(), cfg.d_conv);
        let fan_in = 1.0 / (k as f64).sqrt();
        let mut ssm = SelectiveSsmParams::init(di, cfg.d_state, cfg.dt_rank(), opts.proj_std, rng);
        ssm.exact_zoh_b = cfg.exact_zoh_b;
        Self {
            norm: Tensor::ones(&[dm]),
            in_proj: Tensor::randn(&[dm, 2 * di], opts.proj_std, rng),
            conv_w: Tensor::uniform(&[di, k], fan_in, rng),
            conv_b: Tensor::uniform(&[di], fan_in, rng),
            ssm,
            out_proj: Tensor::randn(&[di, dm], opts.proj_std, rng),
            norm_eps: cfg.norm_eps,
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 10] {
        [
            &self.norm,
            &self.in_proj,
            &self.conv_w,
            &self.conv_b,
            &self.ssm.w_xproj,
            &self.ssm.w_dtproj,
            &self.ssm.b_dt,
            &self.ssm.a_log,
            &self.ssm.d_skip,
            &self.out_proj,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.norm,
            &mut self.in_proj,
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.ssm.w_xproj,
            &mut self.ssm.w_dtproj,
            &mut self.ssm.b_dt,
            &mut self.ssm.a_log,
            &mut self.ssm.d_skip,
            &mut self.out_proj,
        ]
    }
}

/// Tape handles for one block's tensors, in [`MambaBlockParams::tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    norm: Var,
    in_proj: Var,
    conv_w: Var,
    conv_b: Var,
    x_proj: Var,
    dt_proj: Var,
    dt_bias: Var,
    a_log: Var,
    d_skip: Var,
    out_proj: Var,
}

impl BlockVars {
    fn from_slice(v: &[Var]) -> Self {
        Self {
            norm: v[0],
            in_proj: v[1],
            conv_w: v[2],
            conv_b: v[3],
            x_proj: v[4],
            dt_proj: v[5],
            dt_bias: v[6],
            a_log: v[7],
            d_skip: v[8],
            out_proj: v[9],
        }
    }
}

/// Records one block on the tape:
/// `v = norm(u)`, `(x, z) = v·W_in`, `x = silu(conv(x))`,
/// `g = scan(x) ⊙ silu(z)`, `out = g·W_out + u`.
pub fn block_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    p: &MambaBlockParams<T>,
    vars: &BlockVars,
    u: Var,
) -> Result<Var> {
    let di = p.ssm.d_inner();
    let (n, r) = (p.ssm.d_state(), p.ssm.dt_rank());
    let v = tape.rmsnorm(u, vars.norm, p.norm_eps)?;
    let xz = tape.matmul(v, vars.in_proj)?;
    let x = tape.narrow_cols(xz, 0, di)?;
    let z = tape.narrow_cols(xz, di, di)?;
    let xc = tape.conv1d_depthwise_causal(x, vars.conv_w, vars.conv_b)?;
    let xa = tape.silu(xc)?;

    let seed = tape.matmul(xa, vars.x_proj)?;
    let low = tape.narrow_cols(seed, 0, r)?;
    let b = tape.narrow_cols(seed, r, n)?;
    let c = tape.narrow_cols(seed, r + n, n)?;
    let dt = tape.matmul(low, vars.dt_proj)?;
    let dt = tape.add_row(dt, vars.dt_bias)?;
    let delta = tape.softplus(dt)?;

    let y = tape.selective_scan(xa, delta, vars.a_log, b, c, vars.d_skip, p.ssm.exact_zoh_b)?;
    let gate = tape.silu(z)?;
    let g = tape.mul(y, gate)?;
    let out = tape.matmul(g, vars.out_proj)?;
    tape.add(out, u)
}

/// One block applied to `u` (`L × d_model`).
pub fn block_forward<T: Scalar>(p: &MambaBlockParams<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, dm) = u.expect_dims2("block_forward")?;
    if dm != p.norm.numel() {
        return Err(Error::shape(
            "block_forward",
            format!("input width {dm}, block width {}", p.norm.numel()),
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = p.tensors().iter().map(|t| tape.constant((*t).clone())).collect();
    let u = tape.constant(u.clone());
    let out = block_on_tape(&mut tape, p, &BlockVars::from_slice(&vars), u)?;
    Ok(tape.value(out).clone())
}

/// Per-row pooling weights for `mask`.
pub fn pool_weights<T: Scalar>(mask: &[bool], mode: Pooling) -> Result<Vec<T>> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::AllMasked);
    }
    let mut w = vec![T::zero(); mask.len()];
    match mode {
        Pooling::Mean => {
            let inv = T::one() / s(count as f64);
            for (wi, &m) in w.iter_mut().zip(mask) {
                if m {
                    *wi = inv;
                }
            }
        }
        Pooling::Last => {
            let last = mask.iter().rposition(|&m| m).expect("count > 0");
            w[last] = T::one();
        }
    }
    Ok(w)
}

/// Reduces `hidden` (`L × d_model`) to one `d_model` vector.
pub fn pool<T: Scalar>(hidden: &Tensor<T>, mask: &[bool], mode: Pooling) -> Result<Tensor<T>> {
    let (rows, cols) = hidden.expect_dims2("pool")?;
    if mask.len() != rows {
        return Err(Error::LengthMismatch(mask.len(), rows));
    }
    let w: Vec<T> = pool_weights(mask, mode)?;
    let mut out = vec![T::zero(); cols];
    for (r, &wr) in w.iter().enumerate() {
        if wr != T::zero() {
            for (o, &v) in out.iter_mut().zip(hidden.row(r)) {
                *o += wr * v;
            }
        }
    }
    Tensor::new(&[cols], out)
}

/// Embedding → blocks → final norm → pooling → linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaClassifier<T: Scalar = f32> {
    pub config: ModelConfig,
    /// `vocab_size × d_model`
    pub embedding: Tensor<T>,
    pub blocks: Vec<MambaBlockParams<T>>,
    pub final_norm: Tensor<T>,
    /// `d_model × n_classes`
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

impl<T: Scalar> MambaClassifier<T> {
    /// Default initialization seeded from the run seed's `init` stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = seed::rng_for(seed, "init");
        Self::init_with(config, &InitOptions::default(), &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(config: &ModelConfig, opts: &InitOptions, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dm = config.d_model;
        let embedding = Tensor::randn(&[config.vocab_size, dm], opts.proj_std, rng);
        let blocks = (0..config.n_layers)
            .map(|_| MambaBlockParams::init(config, opts, rng))
            .collect();
        let head_w = if opts.head_std > 0.0 {
            Tensor::randn(&[dm, config.n_classes], opts.head_std, rng)
        } else {
            Tensor::zeros(&[dm, config.n_classes])
        };
        Ok(Self {
            config: config.clone(),
            embedding,
            blocks,
            final_norm: Tensor::ones(&[dm]),
            head_w,
            head_b: Tensor::zeros(&[config.n_classes]),
        })
    }

    /// Every tensor with its canonical name, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let names = param_specs(&self.config).into_iter().map(|p| p.name);
        names.zip(self.tensors()).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.embedding];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.final_norm, &self.head_w, &self.head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([&mut self.final_norm, &mut self.head_w, &mut self.head_b]);
        out
    }

    /// Rebuilds a model from tensors in canonical order, checking names and shapes.
    pub fn from_named_tensors(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Malformed(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&tensors) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Malformed(format!(
                    "expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter().map(|(_, t)| t);
        let mut next = || it.next().expect("count checked");
        let embedding = next();
        let blocks = (0..config.n_layers)
            .map(|_| {
                let norm = next();
                let in_proj = next();
                let conv_w = next();
                let conv_b = next();
                let w_xproj = next();
                let w_dtproj = next();
                let b_dt = next();
                let a_log = next();
                let d_skip = next();
                let out_proj = next();
                MambaBlockParams {
                    norm,
                    in_proj,
                    conv_w,
                    conv_b,
                    ssm: SelectiveSsmParams {
                        a_log,
                        d_skip,
                        w_xproj,
                        w_dtproj,
                        b_dt,
                        exact_zoh_b: config.exact_zoh_b,
                    },
                    out_proj,
                    norm_eps: config.norm_eps,
                }
            })
            .collect();
        let final_norm = next();
        let head_w = next();
        let head_b = next();
        Ok(Self {
            config,
            embedding,
            blocks,
            final_norm,
            head_w,
            head_b,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> MambaClassifier<U> {
        let tensors = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.cast()))
            .collect();
        MambaClassifier::from_named_tensors(self.config.clone(), tensors).expect("same layout")
    }

    pub fn new_tape(&self) -> Tape<T> {
        let mode = if self.config.parallel_scan {
            ScanMode::Parallel
        } else {
            ScanMode::Sequential
        };
        Tape::new().with_scan_mode(mode)
    }

    /// Puts every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass; returns the `1 × n_classes` logits.
    ///
    /// Positions after the last unmasked one cannot influence earlier
    /// positions (every op is causal) and carry zero pooling weight, so
    /// they are not evaluated.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], ids: &[usize], mask: &[bool]) -> Result<Var> {
        let cfg = &self.config;
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if mask.len() != ids.len() {
            return Err(Error::LengthMismatch(mask.len(), ids.len()));
        }
        if ids.len() > cfg.max_seq_len {
            return Err(Error::shape(
                "model_forward",
                format!("{} ids exceed max_seq_len {}", ids.len(), cfg.max_seq_len),
            ));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: cfg.vocab_size,
            });
        }
        let used = mask.iter().rposition(|&m| m).ok_or(Error::AllMasked)? + 1;
        let weights = pool_weights(&mask[..used], cfg.pooling)?;

        let mut h = tape.embedding(vars[0], &ids[..used])?;
        for (i, block) in self.blocks.iter().enumerate() {
            let bv = BlockVars::from_slice(&vars[1 + 10 * i..1 + 10 * (i + 1)]);
            h = block_on_tape(tape, block, &bv, h)?;
        }
        let base = 1 + 10 * self.blocks.len();
        let h = tape.rmsnorm(h, vars[base], cfg.norm_eps)?;
        let pooled = tape.weighted_row_sum(h, weights)?;
        let logits = tape.matmul(pooled, vars[base + 1])?;
        tape.add_row(logits, vars[base + 2])
    }

    /// Logits for one sequence.
    pub fn forward(&self, ids: &[usize], mask: &[bool]) -> Result<Tensor<T>> {
        let mut tape = self.new_tape();
        let vars = self.bind(&mut tape, false);
        let logits = self.forward_on_tape(&mut tape, &vars, ids, mask)?;
        tape.value(logits).reshape(&[self.config.n_classes])
    }
}

/// Logits of `m` for `ids`/`mask`.
pub fn model_forward<T: Scalar>(m: &MambaClassifier<T>, ids: &[usize], mask: &[bool]) -> Result<Tensor<T>> {
    m.forward(ids, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            d_state: 4,
            d_conv: 3,
            expand: 2,
            vocab_size: 12,
            n_classes: 3,
            max_seq_len: 16,
            ..ModelConfig::default()
        }
    }

    fn toy_model(seed: u64) -> MambaClassifier<f64> {
        let opts = InitOptions {
            proj_std: 0.4,
            head_std: 0.5,
        };
        MambaClassifier::init_with(&toy_cfg(), &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn pool_examples() {
        let h = Tensor::<f64>::from_f64(&[3, 2], &[1., 5., 3., 7., 9., 9.]).unwrap();
        let mean = pool(&h, &[true, true, false], Pooling::Mean).unwrap();
        assert_eq!(mean.data(), &[2., 6.]);
        let last = pool(&h, &[true, true, false], Pooling::Last).unwrap();
        assert_eq!(last.data(), h.row(1));
        let c = Tensor::<f64>::full(&[4, 2], 1.5);
        for mode in [Pooling::Mean, Pooling::Last] {
            assert_eq!(pool(&c, &[true; 4], mode).unwrap().data(), &[1.5, 1.5]);
        }
        assert!(matches!(pool(&h, &[false; 3], Pooling::Mean), Err(Error::AllMasked)));
    }

    #[test]
    fn zero_out_proj_makes_block_an_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = MambaBlockParams::<f64>::init(&toy_cfg(), &InitOptions::default(), &mut rng);
        p.out_proj = Tensor::zeros(&[16, 8]);
        let u = Tensor::randn(&[5, 8], 1.0, &mut rng);
        assert_eq!(block_forward(&p, &u).unwrap(), u);
    }

    #[test]
    fn zero_input_gives_zero_output_without_conv_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = MambaBlockParams::<f64>::init(&toy_cfg(), &InitOptions::default(), &mut rng);
        p.conv_b = Tensor::zeros(&[16]);
        let y = block_forward(&p, &Tensor::zeros(&[4, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_head_gives_constant_logits() {
        let mut m = toy_model(1);
        m.head_w = Tensor::zeros(&[8, 3]);
        m.head_b = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        for ids in [vec![1, 2, 3], vec![7, 7, 7, 7, 0, 11]] {
            let mask = vec![true; ids.len()];
            assert_eq!(m.forward(&ids, &mask).unwrap().data(), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn single_position_pooling_modes_agree() {
        let mut m = toy_model(2);
        let mean = m.forward(&[4], &[true]).unwrap();
        m.config.pooling = Pooling::Last;
        assert_eq!(m.forward(&[4], &[true]).unwrap(), mean);
    }

    #[test]
    fn masked_tail_is_ignored() {
        let m = toy_model(3);
        let mask = [true, true, true, true, false, false, false];
        let a = m.forward(&[3, 9, 2, 5, 0, 0, 0], &mask).unwrap();
        let b = m.forward(&[3, 9, 2, 5, 11, 1, 6], &mask).unwrap();
        let c = m.forward(&[3, 9, 2, 5, 6, 11, 1], &mask).unwrap();
        assert!(a.zip_map(&b, "d", |x, y| x - y).unwrap().max_abs() < 1e-12);
        assert!(a.zip_map(&c, "d", |x, y| x - y).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = toy_model(4);
        assert!(matches!(m.forward(&[], &[]), Err(Error::EmptySequence)));
        assert!(matches!(m.forward(&[12], &[true]), Err(Error::TokenOutOfRange { id: 12, .. })));
        assert!(matches!(m.forward(&[1, 2], &[false, false]), Err(Error::AllMasked)));
        assert!(m.forward(&[1; 17], &[true; 17]).is_err());
    }

    #[test]
    fn parallel_scan_config_matches_sequential() {
        let mut m = toy_model(5);
        let ids = [1, 4, 2, 8, 5, 7, 3];
        let mask = [true; 7];
        let seq = m.forward(&ids, &mask).unwrap();
        m.config.parallel_scan = true;
        let par = m.forward(&ids, &mask).unwrap();
        assert!(seq.zip_map(&par, "d", |x, y| x - y).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn named_tensors_round_trip() {
        let m = toy_model(6);
        let named = m
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        assert_eq!(MambaClassifier::from_named_tensors(m.config.clone(), named).unwrap(), m);
        let mut bad: Vec<_> = m.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        bad.swap(1, 2);
        assert!(MambaClassifier::from_named_tensors(m.config.clone(), bad).is_err());
    }
}
