//! Tape-based reverse-mode automatic differentiation.
//!
//! Ops are coarse grained (matmul, depthwise conv, RMSNorm, the whole
//! selective scan) and each carries a hand-written backward rule. Values
//! needed by a backward rule are saved on the tape during the forward pass.

use crate::error::{Error, Result};
use crate::ops;
use crate::scan::{self, ScanInputs, ScanMode};
use crate::tensor::{s, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Silu(Var),
    Softplus(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    RmsNorm {
        x: Var,
        gamma: Var,
        inv_rms: Vec<T>,
    },
    NarrowCols {
        x: Var,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    WeightedRowSum {
        x: Var,
        weights: Vec<T>,
    },
    SelectiveScan {
        x: Var,
        delta: Var,
        a_log: Var,
        b: Var,
        c: Var,
        d_skip: Var,
        a: Vec<T>,
        states: Vec<T>,
        exact_zoh_b: bool,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, which is a topological order.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    scan_mode: ScanMode,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            scan_mode: ScanMode::Sequential,
        }
    }

    /// Selects how [`Tape::selective_scan`] evaluates its forward states.
    pub fn with_scan_mode(mut self, mode: ScanMode) -> Self {
        self.scan_mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Param, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs = self.needs(inputs);
        self.push(value, op, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.record(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self
            .value(a)
            .zip_map(self.value(b), "add", |x, y| x + y)?
            .ensure_finite("add")?;
        Ok(self.record(v, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self
            .value(a)
            .zip_map(self.value(b), "mul", |x, y| x * y)?
            .ensure_finite("mul")?;
        Ok(self.record(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x[r, :] + bias` for every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (rows, cols) = xv.dims2();
        if bv.numel() != cols {
            return Err(Error::shape(
                "add_row",
                format!("x {:?}, bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.data().to_vec();
        for r in 0..rows {
            for (o, &b) in out[r * cols..(r + 1) * cols].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let v = Tensor::new(xv.shape(), out)?.ensure_finite("add_row")?;
        Ok(self.record(v, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let v = self.value(x).map(|e| e * k).ensure_finite("scale")?;
        Ok(self.record(v, Op::Scale(x, k), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum()).ensure_finite("sum")?;
        Ok(self.record(v, Op::Sum(x), &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let v = ops::silu(self.value(x))?;
        Ok(self.record(v, Op::Silu(x), &[x]))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let v = ops::softplus(self.value(x))?;
        Ok(self.record(v, Op::Softplus(x), &[x]))
    }

    pub fn conv1d_depthwise_causal(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = ops::conv1d_depthwise_causal(self.value(x), self.value(w), self.value(b))?;
        Ok(self.record(v, Op::Conv1d { x, w, b }, &[x, w, b]))
    }

    pub fn rmsnorm(&mut self, x: Var, gamma: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("rmsnorm eps must be > 0, got {eps}")));
        }
        let (v, inv_rms) = ops::rmsnorm_with_stats(self.value(x), self.value(gamma), eps)?;
        Ok(self.record(v, Op::RmsNorm { x, gamma, inv_rms }, &[x, gamma]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.expect_dims2("narrow_cols")?;
        if len == 0 || start + len > cols {
            return Err(Error::shape(
                "narrow_cols",
                format!("columns {start}..{} of {cols}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * cols + start..r * cols + start + len]);
        }
        let v = Tensor::new(&[rows, len], out)?;
        Ok(self.record(v, Op::NarrowCols { x, start }, &[x]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, dim) = tv.expect_dims2("embedding")?;
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            out.extend_from_slice(tv.row(id));
        }
        let v = Tensor::new(&[ids.len(), dim], out)?;
        Ok(self.record(
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// `Σ_r weights[r] · x[r, :]` as a `1 × D` row.
    pub fn weighted_row_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if weights.len() != rows {
            return Err(Error::LengthMismatch(weights.len(), rows));
        }
        let mut out = vec![T::zero(); cols];
        for (r, &w) in weights.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                *o += w * v;
            }
        }
        let v = Tensor::new(&[1, cols], out)?.ensure_finite("weighted_row_sum")?;
        Ok(self.record(v, Op::WeightedRowSum { x, weights }, &[x]))
    }

    /// Selective scan over `x`, `delta` (`L × D_inner`), `a_log`
    /// (`D_inner × N`, with `A = −exp(a_log)`), `b`, `c` (`L × N`) and
    /// `d_skip` (`D_inner`). All saved states are kept for backward.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        x: Var,
        delta: Var,
        a_log: Var,
        b: Var,
        c: Var,
        d_skip: Var,
        exact_zoh_b: bool,
    ) -> Result<Var> {
        let (len, d_inner) = self.value(x).expect_dims2("selective_scan")?;
        let (_, d_state) = self.value(a_log).expect_dims2("selective_scan")?;
        let a = self.value(a_log).map(|v| -v.exp()).into_data();
        let inp = ScanInputs {
            x: self.value(x).data(),
            delta: self.value(delta).data(),
            a: &a,
            b: self.value(b).data(),
            c: self.value(c).data(),
            d_skip: self.value(d_skip).data(),
            len,
            d_inner,
            d_state,
            exact_zoh_b,
        };
        let (y, states) = scan::scan_forward(&inp, self.scan_mode)?;
        let v = Tensor::new(&[len, d_inner], y)?;
        let inputs = [x, delta, a_log, b, c, d_skip];
        Ok(self.record(
            v,
            Op::SelectiveScan {
                x,
                delta,
                a_log,
                b,
                c,
                d_skip,
                a,
                states,
                exact_zoh_b,
            },
            &inputs,
        ))
    }

    /// Scalar `−log softmax(logits)[label]`; `logits` may have any shape
    /// with `K` elements.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), label)?;
        Ok(self.record(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every [`Tape::param`] leaf gets a
    /// gradient with its own shape (zeros when the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Param) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Param => {
                    let g = grads[i].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                    if !g.is_finite() {
                        return Err(Error::NonFinite("backward"));
                    }
                }
                _ => grads[i] = None,
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(g.numel(), self.nodes[v.0].value.numel());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let (_, n) = val(*b).dims2();
                if wants(*a) {
                    // gA = G · Bᵀ
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), false, val(*b).data(), true, &mut ga, false);
                    self.accumulate(grads, *a, Tensor::new(val(*a).shape(), ga)?);
                }
                if wants(*b) {
                    // gB = Aᵀ · G
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, val(*a).data(), true, g.data(), false, &mut gb, false);
                    self.accumulate(grads, *b, Tensor::new(val(*b).shape(), gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), "mul", |x, y| x * y)?);
                }
                if wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), "mul", |x, y| x * y)?);
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if wants(*bias) {
                    let (rows, cols) = g.dims2();
                    let mut gb = vec![T::zero(); cols];
                    for r in 0..rows {
                        for (o, &v) in gb.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(val(*bias).shape(), gb)?);
                }
            }
            Op::Scale(x, k) => self.accumulate(grads, *x, g.map(|v| v * *k)),
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::full(val(*x).shape(), gv));
            }
            Op::Silu(x) => {
                let gx = g.zip_map(val(*x), "silu", |gv, xv| gv * ops::silu_grad_scalar(xv))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Softplus(x) => {
                let gx = g.zip_map(val(*x), "softplus", |gv, xv| gv * ops::sigmoid(xv))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Conv1d { x, w, b } => self.conv_backward(*x, *w, *b, g, grads)?,
            Op::RmsNorm { x, gamma, inv_rms } => {
                let xv = val(*x);
                let gm = val(*gamma).data();
                let (rows, dim) = xv.dims2();
                let n: T = s(dim as f64);
                let mut gx = vec![T::zero(); rows * dim];
                let mut gg = vec![T::zero(); dim];
                for r in 0..rows {
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    let ir = inv_rms[r];
                    // Σ_k g·γ·x
                    let dot: T = (0..dim).map(|k| gr[k] * gm[k] * xr[k]).sum();
                    let coef = dot * ir * ir * ir / n;
                    for k in 0..dim {
                        gx[r * dim + k] = gr[k] * gm[k] * ir - xr[k] * coef;
                        gg[k] += gr[k] * xr[k] * ir;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), gx)?);
                self.accumulate(grads, *gamma, Tensor::new(val(*gamma).shape(), gg)?);
            }
            Op::NarrowCols { x, start } => {
                if wants(*x) {
                    let (rows, cols) = val(*x).dims2();
                    let (_, len) = g.dims2();
                    let mut gx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        gx[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                    }
                    self.accumulate(grads, *x, Tensor::new(&[rows, cols], gx)?);
                }
            }
            Op::Embedding { table, ids } => {
                if wants(*table) {
                    let tv = val(*table);
                    let (_, dim) = tv.dims2();
                    let mut gt = vec![T::zero(); tv.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &v) in gt[id * dim..(id + 1) * dim].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *table, Tensor::new(tv.shape(), gt)?);
                }
            }
            Op::WeightedRowSum { x, weights } => {
                if wants(*x) {
                    let xv = val(*x);
                    let (rows, cols) = xv.dims2();
                    let mut gx = vec![T::zero(); rows * cols];
                    for (r, &w) in weights.iter().enumerate() {
                        for (o, &v) in gx[r * cols..(r + 1) * cols].iter_mut().zip(g.data()) {
                            *o = w * v;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape(), gx)?);
                }
            }
            Op::SelectiveScan {
                x,
                delta,
                a_log,
                b,
                c,
                d_skip,
                a,
                states,
                exact_zoh_b,
            } => {
                let (len, d_inner) = val(*x).dims2();
                let (_, d_state) = val(*a_log).dims2();
                let inp = ScanInputs {
                    x: val(*x).data(),
                    delta: val(*delta).data(),
                    a,
                    b: val(*b).data(),
                    c: val(*c).data(),
                    d_skip: val(*d_skip).data(),
                    len,
                    d_inner,
                    d_state,
                    exact_zoh_b: *exact_zoh_b,
                };
                let sg = scan::scan_backward(&inp, states, g.data());
                // A = −exp(A_log) ⇒ ∂A/∂A_log = A
                let ga_log: Vec<T> = sg.a.iter().zip(a).map(|(&gv, &av)| gv * av).collect();
                self.accumulate(grads, *x, Tensor::new(val(*x).shape(), sg.x)?);
                self.accumulate(grads, *delta, Tensor::new(val(*delta).shape(), sg.delta)?);
                self.accumulate(grads, *a_log, Tensor::new(val(*a_log).shape(), ga_log)?);
                self.accumulate(grads, *b, Tensor::new(val(*b).shape(), sg.b)?);
                self.accumulate(grads, *c, Tensor::new(val(*c).shape(), sg.c)?);
                self.accumulate(grads, *d_skip, Tensor::new(val(*d_skip).shape(), sg.d_skip)?);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gv = g.item();
                let mut gl: Vec<T> = probs.iter().map(|&p| p * gv).collect();
                gl[*label] -= gv;
                self.accumulate(grads, *logits, Tensor::new(val(*logits).shape(), gl)?);
            }
        }
        Ok(())
    }

    fn conv_backward(&self, x: Var, w: Var, b: Var, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (len, dim) = xv.dims2();
        let (_, k) = wv.dims2();
        let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
        let mut gx = vec![T::zero(); len * dim];
        let mut gw = vec![T::zero(); dim * k];
        let mut gb = vec![T::zero(); dim];
        for t in 0..len {
            let gr = &gd[t * dim..(t + 1) * dim];
            for (o, &v) in gb.iter_mut().zip(gr) {
                *o += v;
            }
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(k - 1) else {
                    continue;
                };
                for d in 0..dim {
                    gw[d * k + j] += gr[d] * xd[src * dim + d];
                    gx[src * dim + d] += gr[d] * wd[d * k + j];
                }
            }
        }
        self.accumulate(grads, x, Tensor::new(xv.shape(), gx)?);
        self.accumulate(grads, w, Tensor::new(wv.shape(), gw)?);
        self.accumulate(grads, b, Tensor::new(self.value(b).shape(), gb)?);
        Ok(())
    }
}

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, h: f64) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {h}")));
    }
    let step: T = s(h);
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (step + step));
    }
    Tensor::new(x.shape(), out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are zero.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y).to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm()).to_f64().unwrap_or(f64::NAN);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1., -2., 3., 0.5, 0., 7.]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let xv = t(&[3], &[1., 2., 3.]);
        let yv = t(&[3], &[-4., 0.5, 6.]);
        let x = tape.param(xv.clone());
        let y = tape.param(yv.clone());
        let p = tape.mul(x, y).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &yv);
        assert_eq!(g.get(y).unwrap(), &xv);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let unused = tape.param(t(&[3, 1], &[1., 2., 3.]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[3, 1]));
        let c = tape.constant(t(&[1], &[5.]));
        assert!(g.get(c).is_none());
    }

    #[test]
    fn finite_diff_examples() {
        let sq = |x: &Tensor<f64>| Ok(x.data().iter().map(|v| v * v).sum());
        let g = finite_diff_grad(sq, &t(&[2], &[1., 2.]), 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6 && (g.data()[1] - 4.0).abs() < 1e-6);

        let g = finite_diff_grad(|_| Ok(3.5), &t(&[3], &[1., 2., 3.]), 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        let silu_sum = |x: &Tensor<f64>| Ok(ops::silu(x)?.sum());
        let g = finite_diff_grad(silu_sum, &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));

        assert!(finite_diff_grad(sq, &t(&[1], &[1.]), 0.0).is_err());
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(Tensor::zeros(&[4, 2]));
        assert!(matches!(
            tape.embedding(table, &[1, 4]),
            Err(Error::TokenOutOfRange { id: 4, vocab: 4 })
        ));
        assert!(matches!(tape.embedding(table, &[]), Err(Error::EmptySequence)));
    }
}
