//! Selective (input-dependent) diagonal state-space scan.
//!
//! Each inner channel `d` carries `N` independent states. At step `t`:
//!
//! ```text
//! h[t,d,n] = exp(Δ[t,d]·A[d,n]) · h[t−1,d,n] + β(Δ[t,d], A[d,n]) · B[t,n] · x[t,d]
//! y[t,d]   = Σₙ C[t,n] · h[t,d,n] + D[d] · x[t,d]
//! ```
//!
//! with `h[−1] = 0` and drive coefficient `β = Δ` (Euler) or
//! `β = (exp(Δ·A) − 1)/A` (exact zero-order hold).
//!
//! The recurrence is first-order linear, so every step is an affine map
//! `h ↦ a·h + b` and the whole sequence can be evaluated with an associative
//! prefix scan over `(a, b)` pairs.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{s, Scalar, Tensor};

/// Associative operator with identity.
pub trait Monoid: Copy + Send + Sync {
    fn identity() -> Self;
    /// `self` happens first, then `next`.
    fn combine(self, next: Self) -> Self;
}

/// Affine step `h ↦ a·h + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanElement<T> {
    pub a: T,
    pub b: T,
}

impl<T: Scalar> ScanElement<T> {
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }
}

impl<T: Scalar> Monoid for ScanElement<T> {
    fn identity() -> Self {
        Self::new(T::one(), T::zero())
    }

    fn combine(self, next: Self) -> Self {
        scan_combine(self, next)
    }
}

/// `(a₁,b₁)∘(a₂,b₂) = (a₂·a₁, a₂·b₁ + b₂)`: apply the first step, then the second.
#[inline]
pub fn scan_combine<T: Scalar>(e1: ScanElement<T>, e2: ScanElement<T>) -> ScanElement<T> {
    ScanElement {
        a: e2.a * e1.a,
        b: e2.a * e1.b + e2.b,
    }
}

/// Levels with fewer independent combines than this run inline.
const PAR_MIN_PAIRS: usize = 1024;

/// Inclusive prefix scan using the work-efficient up-sweep/down-sweep tree.
///
/// `O(n)` combines, `O(log n)` depth. The input is padded with identities
/// up to a power of two. An empty input yields an empty output.
pub fn parallel_scan<M: Monoid>(elements: &[M]) -> Vec<M> {
    let n = elements.len();
    if n == 0 {
        return Vec::new();
    }
    let size = n.next_power_of_two();
    let mut tree = elements.to_vec();
    tree.resize(size, M::identity());

    // Up-sweep: the last slot of each block of width 2·stride becomes the
    // block total.
    let mut stride = 1;
    while stride < size {
        let width = 2 * stride;
        let up = |blk: &mut [M]| blk[width - 1] = blk[stride - 1].combine(blk[width - 1]);
        if size / width >= PAR_MIN_PAIRS {
            tree.par_chunks_mut(width).for_each(up);
        } else {
            tree.chunks_mut(width).for_each(up);
        }
        stride = width;
    }

    // Down-sweep: turn block totals into exclusive prefixes.
    tree[size - 1] = M::identity();
    let mut stride = size / 2;
    while stride >= 1 {
        let width = 2 * stride;
        let down = |blk: &mut [M]| {
            let before = blk[width - 1];
            let left = blk[stride - 1];
            blk[stride - 1] = before;
            blk[width - 1] = before.combine(left);
        };
        if size / width >= PAR_MIN_PAIRS {
            tree.par_chunks_mut(width).for_each(down);
        } else {
            tree.chunks_mut(width).for_each(down);
        }
        stride /= 2;
    }

    tree.truncate(n);
    tree.iter_mut()
        .zip(elements)
        .for_each(|(p, &e)| *p = p.combine(e));
    tree
}

/// Left fold; the reference the tree scan is checked against.
pub fn sequential_scan<M: Monoid>(elements: &[M]) -> Vec<M> {
    let mut acc = M::identity();
    elements
        .iter()
        .map(|&e| {
            acc = acc.combine(e);
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

/// Borrowed, shape-checked operands of one scan.
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a, T> {
    /// `L × D_inner`
    pub x: &'a [T],
    /// `L × D_inner`, strictly positive
    pub delta: &'a [T],
    /// `D_inner × N`, strictly negative
    pub a: &'a [T],
    /// `L × N`
    pub b: &'a [T],
    /// `L × N`
    pub c: &'a [T],
    /// `D_inner`
    pub d_skip: &'a [T],
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub exact_zoh_b: bool,
}

impl<'a, T: Scalar> ScanInputs<'a, T> {
    pub fn check(&self) -> Result<()> {
        let (l, di, n) = (self.len, self.d_inner, self.d_state);
        let ok = self.x.len() == l * di
            && self.delta.len() == l * di
            && self.a.len() == di * n
            && self.b.len() == l * n
            && self.c.len() == l * n
            && self.d_skip.len() == di;
        if !ok || l == 0 || di == 0 || n == 0 {
            return Err(Error::shape(
                "selective_scan",
                format!(
                    "L={l} D_inner={di} N={n}: x {} delta {} A {} B {} C {} D {}",
                    self.x.len(),
                    self.delta.len(),
                    self.a.len(),
                    self.b.len(),
                    self.c.len(),
                    self.d_skip.len()
                ),
            ));
        }
        Ok(())
    }

    #[inline]
    fn drive(&self, dt: T, a: T, gain: T) -> T {
        drive_coeff(dt, a, gain, self.exact_zoh_b)
    }
}

const ZOH_LIMIT: f64 = 1e-9;

#[inline]
fn drive_coeff<T: Scalar>(dt: T, a: T, gain: T, exact: bool) -> T {
    if exact && a.abs() >= s(ZOH_LIMIT) {
        (gain - T::one()) / a
    } else {
        dt
    }
}

/// `(∂β/∂Δ, ∂β/∂A)`
#[inline]
fn drive_partials<T: Scalar>(dt: T, a: T, gain: T, exact: bool) -> (T, T) {
    if !exact {
        (T::one(), T::zero())
    } else if a.abs() >= s(ZOH_LIMIT) {
        (gain, (dt * a * gain - (gain - T::one())) / (a * a))
    } else {
        (T::one(), dt * dt * s(0.5))
    }
}

/// Output `y` (`L × D_inner`) and every state `h` (`L × D_inner × N`).
pub fn scan_forward<T: Scalar>(inp: &ScanInputs<'_, T>, mode: ScanMode) -> Result<(Vec<T>, Vec<T>)> {
    inp.check()?;
    let states = match mode {
        ScanMode::Sequential => states_sequential(inp),
        ScanMode::Parallel => states_parallel(inp),
    };
    let (l, di, n) = (inp.len, inp.d_inner, inp.d_state);
    let mut y = vec![T::zero(); l * di];
    for t in 0..l {
        let ct = &inp.c[t * n..(t + 1) * n];
        for d in 0..di {
            let h = &states[(t * di + d) * n..(t * di + d + 1) * n];
            let mut acc = inp.d_skip[d] * inp.x[t * di + d];
            for k in 0..n {
                acc += ct[k] * h[k];
            }
            y[t * di + d] = acc;
        }
    }
    if !y.iter().chain(&states).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("selective_scan"));
    }
    Ok((y, states))
}

fn states_sequential<T: Scalar>(inp: &ScanInputs<'_, T>) -> Vec<T> {
    let (l, di, n) = (inp.len, inp.d_inner, inp.d_state);
    let mut states = vec![T::zero(); l * di * n];
    let mut h = vec![T::zero(); di * n];
    for t in 0..l {
        let bt = &inp.b[t * n..(t + 1) * n];
        for d in 0..di {
            let dt = inp.delta[t * di + d];
            let xv = inp.x[t * di + d];
            let ad = &inp.a[d * n..(d + 1) * n];
            let hd = &mut h[d * n..(d + 1) * n];
            for k in 0..n {
                let gain = (dt * ad[k]).exp();
                hd[k] = gain * hd[k] + inp.drive(dt, ad[k], gain) * bt[k] * xv;
            }
        }
        states[t * di * n..(t + 1) * di * n].copy_from_slice(&h);
    }
    states
}

fn states_parallel<T: Scalar>(inp: &ScanInputs<'_, T>) -> Vec<T> {
    let (l, di, n) = (inp.len, inp.d_inner, inp.d_state);
    // One independent scan along t for every (d, n) lane.
    let lanes: Vec<Vec<T>> = (0..di * n)
        .into_par_iter()
        .map(|lane| {
            let (d, k) = (lane / n, lane % n);
            let a = inp.a[d * n + k];
            let elems: Vec<ScanElement<T>> = (0..l)
                .map(|t| {
                    let dt = inp.delta[t * di + d];
                    let gain = (dt * a).exp();
                    let drive = inp.drive(dt, a, gain) * inp.b[t * n + k] * inp.x[t * di + d];
                    ScanElement::new(gain, drive)
                })
                .collect();
            parallel_scan(&elems).into_iter().map(|e| e.b).collect()
        })
        .collect();
    let mut states = vec![T::zero(); l * di * n];
    for (lane, hs) in lanes.iter().enumerate() {
        for (t, &h) in hs.iter().enumerate() {
            states[t * di * n + lane] = h;
        }
    }
    states
}

/// Gradients of a scan with respect to all of its operands.
#[derive(Debug, Clone)]
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Vec<T>,
}

/// Reverse sweep using the states saved by [`scan_forward`].
pub fn scan_backward<T: Scalar>(inp: &ScanInputs<'_, T>, states: &[T], gy: &[T]) -> ScanGrads<T> {
    let (l, di, n) = (inp.len, inp.d_inner, inp.d_state);
    let mut g = ScanGrads {
        x: vec![T::zero(); l * di],
        delta: vec![T::zero(); l * di],
        a: vec![T::zero(); di * n],
        b: vec![T::zero(); l * n],
        c: vec![T::zero(); l * n],
        d_skip: vec![T::zero(); di],
    };
    // carry[d,n] = ∂loss/∂h[t,d,n] contributed through h[t+1].
    let mut carry = vec![T::zero(); di * n];
    for t in (0..l).rev() {
        let bt = &inp.b[t * n..(t + 1) * n];
        let ct = &inp.c[t * n..(t + 1) * n];
        for d in 0..di {
            let i = t * di + d;
            let (dt, xv, gyv) = (inp.delta[i], inp.x[i], gy[i]);
            g.d_skip[d] += gyv * xv;
            let mut gx = gyv * inp.d_skip[d];
            let mut gdt = T::zero();
            for k in 0..n {
                let a = inp.a[d * n + k];
                let h = states[i * n + k];
                let h_prev = if t > 0 { states[(i - di) * n + k] } else { T::zero() };
                let gh = gyv * ct[k] + carry[d * n + k];
                g.c[t * n + k] += gyv * h;

                let gain = (dt * a).exp();
                let beta = inp.drive(dt, a, gain);
                // through the gain exp(Δ·A)
                let g_gain = gh * h_prev * gain;
                gdt += g_gain * a;
                g.a[d * n + k] += g_gain * dt;
                // through the drive β·B·x
                let g_beta = gh * bt[k] * xv;
                let (dbeta_ddt, dbeta_da) = drive_partials(dt, a, gain, inp.exact_zoh_b);
                gdt += g_beta * dbeta_ddt;
                g.a[d * n + k] += g_beta * dbeta_da;
                g.b[t * n + k] += gh * beta * xv;
                gx += gh * beta * bt[k];

                carry[d * n + k] = gh * gain;
            }
            g.x[i] = gx;
            g.delta[i] = gdt;
        }
    }
    g
}

/// Learnable parameters of one selective SSM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveSsmParams<T: Scalar = f32> {
    /// `D_inner × N`; the state matrix is `A = −exp(A_log)`.
    pub a_log: Tensor<T>,
    /// `D_inner`
    pub d_skip: Tensor<T>,
    /// `D_inner × (dt_rank + 2N)`
    pub w_xproj: Tensor<T>,
    /// `dt_rank × D_inner`
    pub w_dtproj: Tensor<T>,
    /// `D_inner`
    pub b_dt: Tensor<T>,
    pub exact_zoh_b: bool,
}

/// Range that `softplus(b_dt)` is drawn from, log-uniformly.
pub const DT_INIT_RANGE: (f64, f64) = (1e-3, 0.1);

impl<T: Scalar> SelectiveSsmParams<T> {
    /// `A[d,n] = −(n+1)`, `D = 1`, projections `N(0, proj_std²)`, and
    /// `b_dt` such that the initial step size is log-uniform in
    /// [`DT_INIT_RANGE`].
    pub fn init<R: Rng + ?Sized>(
        d_inner: usize,
        d_state: usize,
        dt_rank: usize,
        proj_std: f64,
        rng: &mut R,
    ) -> Self {
        let a_log = Tensor::from_fn(&[d_inner, d_state], |i| s((((i % d_state) + 1) as f64).ln()));
        let w_xproj = Tensor::randn(&[d_inner, dt_rank + 2 * d_state], proj_std, rng);
        let w_dtproj = Tensor::randn(&[dt_rank, d_inner], proj_std, rng);
        let (lo, hi) = (DT_INIT_RANGE.0.ln(), DT_INIT_RANGE.1.ln());
        let b_dt = Tensor::from_fn(&[d_inner], |_| {
            let dt = rng.random_range(lo..=hi).exp();
            s(ops::softplus_inv(dt))
        });
        Self {
            a_log,
            d_skip: Tensor::ones(&[d_inner]),
            w_xproj,
            w_dtproj,
            b_dt,
            exact_zoh_b: false,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn dt_rank(&self) -> usize {
        self.w_dtproj.shape()[0]
    }

    /// `A = −exp(A_log)`, strictly negative.
    pub fn a(&self) -> Tensor<T> {
        self.a_log.map(|v| -v.exp())
    }

    fn check(&self) -> Result<()> {
        let (di, n, r) = (self.d_inner(), self.d_state(), self.dt_rank());
        let ok = self.a_log.rank() == 2
            && self.d_skip.shape() == [di]
            && self.w_xproj.shape() == [di, r + 2 * n]
            && self.w_dtproj.shape() == [r, di]
            && self.b_dt.shape() == [di];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "SelectiveSsmParams",
                format!(
                    "A_log {:?} D {:?} W_xproj {:?} W_dtproj {:?} b_dt {:?}",
                    self.a_log.shape(),
                    self.d_skip.shape(),
                    self.w_xproj.shape(),
                    self.w_dtproj.shape(),
                    self.b_dt.shape()
                ),
            ))
        }
    }
}

/// Input-dependent step sizes and projections for `x` (`L × D_inner`).
pub struct Selection<T: Scalar> {
    /// `L × D_inner`, strictly positive
    pub delta: Tensor<T>,
    /// `L × N`
    pub b: Tensor<T>,
    /// `L × N`
    pub c: Tensor<T>,
}

/// `seed = x·W_xproj` split into `(Δ_low, B, C)`; `Δ = softplus(Δ_low·W_dtproj + b_dt)`.
pub fn selective_params<T: Scalar>(x: &Tensor<T>, p: &SelectiveSsmParams<T>) -> Result<Selection<T>> {
    p.check()?;
    let (len, di) = x.expect_dims2("selective_params")?;
    if di != p.d_inner() {
        return Err(Error::shape(
            "selective_params",
            format!("x has {di} channels, params expect {}", p.d_inner()),
        ));
    }
    let (r, n) = (p.dt_rank(), p.d_state());
    let seed = ops::matmul(x, &p.w_xproj)?;
    let width = r + 2 * n;
    let cols = |start: usize, count: usize| -> Result<Tensor<T>> {
        let mut out = Vec::with_capacity(len * count);
        for t in 0..len {
            out.extend_from_slice(&seed.data()[t * width + start..t * width + start + count]);
        }
        Tensor::new(&[len, count], out)
    };
    let low = cols(0, r)?;
    let b = cols(r, n)?;
    let c = cols(r + n, n)?;
    let mut pre = ops::matmul(&low, &p.w_dtproj)?;
    for t in 0..len {
        for (v, &bias) in pre.data_mut()[t * di..(t + 1) * di].iter_mut().zip(p.b_dt.data()) {
            *v += bias;
        }
    }
    let delta = ops::softplus(&pre)?;
    Ok(Selection { delta, b, c })
}

/// Runs the scan for explicitly supplied `Δ`, `B`, `C`.
pub fn scan_with<T: Scalar>(
    x: &Tensor<T>,
    sel: &Selection<T>,
    p: &SelectiveSsmParams<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    let (len, di) = x.expect_dims2("selective_scan")?;
    let a = p.a();
    let inp = ScanInputs {
        x: x.data(),
        delta: sel.delta.data(),
        a: a.data(),
        b: sel.b.data(),
        c: sel.c.data(),
        d_skip: p.d_skip.data(),
        len,
        d_inner: di,
        d_state: p.d_state(),
        exact_zoh_b: p.exact_zoh_b,
    };
    let (y, _) = scan_forward(&inp, mode)?;
    Tensor::new(&[len, di], y)
}

/// Reference evaluation: one step at a time.
pub fn selective_scan_sequential<T: Scalar>(p: &SelectiveSsmParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let sel = selective_params(x, p)?;
    scan_with(x, &sel, p, ScanMode::Sequential)
}

/// Same contract as [`selective_scan_sequential`], evaluated with
/// [`parallel_scan`] along the time axis for every `(d, n)` lane.
pub fn selective_scan_parallel<T: Scalar>(p: &SelectiveSsmParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let sel = selective_params(x, p)?;
    scan_with(x, &sel, p, ScanMode::Parallel)
}
