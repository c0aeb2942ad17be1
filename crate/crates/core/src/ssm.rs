//! Linear time-invariant state-space models.
//!
//! Continuous form `h' = A·h + B·x`, `y = C·h + D·x` with scalar input and
//! output and an `N`-dimensional state, its discretizations, and the two
//! equivalent ways of running the discrete system: step-by-step recurrence
//! and causal convolution with the kernel `K[i] = C·Āⁱ·B̄`.

use crate::error::{Error, Result};
use crate::tensor::{s, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSsm<T: Scalar = f64> {
    /// `N × N`
    pub a: Tensor<T>,
    /// `N × 1`
    pub b: Tensor<T>,
    /// `1 × N`
    pub c: Tensor<T>,
    pub d: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm<T: Scalar = f64> {
    /// `N × N`
    pub a_bar: Tensor<T>,
    /// `N × 1`
    pub b_bar: Tensor<T>,
    /// `1 × N`
    pub c: Tensor<T>,
    pub d: T,
    pub delta: T,
}

fn check_quadruple<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>) -> Result<usize> {
    let n = a.shape().first().copied().unwrap_or(0);
    if a.shape() != [n, n] || b.shape() != [n, 1] || c.shape() != [1, n] {
        return Err(Error::shape(
            "ssm",
            format!("A {:?}, B {:?}, C {:?}", a.shape(), b.shape(), c.shape()),
        ));
    }
    Ok(n)
}

impl<T: Scalar> ContinuousSsm<T> {
    pub fn new(a: Tensor<T>, b: Tensor<T>, c: Tensor<T>, d: T) -> Result<Self> {
        check_quadruple(&a, &b, &c)?;
        Ok(Self { a, b, c, d })
    }

    pub fn state_size(&self) -> usize {
        self.a.shape()[0]
    }
}

impl<T: Scalar> DiscreteSsm<T> {
    pub fn new(a_bar: Tensor<T>, b_bar: Tensor<T>, c: Tensor<T>, d: T, delta: T) -> Result<Self> {
        check_quadruple(&a_bar, &b_bar, &c)?;
        if delta.is_nan() || delta <= T::zero() {
            return Err(Error::InvalidConfig(format!("step size must be > 0, got {delta}")));
        }
        Ok(Self {
            a_bar,
            b_bar,
            c,
            d,
            delta,
        })
    }

    pub fn state_size(&self) -> usize {
        self.a_bar.shape()[0]
    }

    /// `h ← Ā·h + B̄·x`
    pub fn step_state(&self, h: &mut Vec<T>, x: T) {
        let n = self.state_size();
        let a = self.a_bar.data();
        let b = self.b_bar.data();
        let next: Vec<T> = (0..n)
            .map(|i| {
                let row = &a[i * n..(i + 1) * n];
                row.iter().zip(h.iter()).map(|(&aij, &hj)| aij * hj).sum::<T>() + b[i] * x
            })
            .collect();
        *h = next;
    }

    fn readout(&self, h: &[T], x: T) -> T {
        self.c.data().iter().zip(h).map(|(&ci, &hi)| ci * hi).sum::<T>() + self.d * x
    }
}

/// HiPPO-LegS state matrix: `−√((2n+1)(2k+1))` below the diagonal,
/// `−(n+1)` on it, zero above (0-indexed).
pub fn hippo_legs<T: Scalar>(n: usize) -> Result<Tensor<T>> {
    if n == 0 {
        return Err(Error::InvalidConfig("HiPPO state size must be ≥ 1".into()));
    }
    Ok(Tensor::from_fn(&[n, n], |i| {
        let (r, c) = (i / n, i % n);
        match r.cmp(&c) {
            std::cmp::Ordering::Greater => s(-(((2 * r + 1) * (2 * c + 1)) as f64).sqrt()),
            std::cmp::Ordering::Equal => s(-((r + 1) as f64)),
            std::cmp::Ordering::Less => T::zero(),
        }
    }))
}

/// Solves `M·X = R` in place (partial pivoting). `m` is `n × n`, `r` is `n × k`.
fn solve_in_place<T: Scalar>(m: &mut [T], r: &mut [T], n: usize, k: usize) -> Result<()> {
    let scale = m.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let tol = T::epsilon() * scale * s(n as f64);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).unwrap())
            .expect("non-empty range");
        if !(m[pivot * n + col].abs() > tol) {
            return Err(Error::SingularMatrix);
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            for j in 0..k {
                r.swap(col * k + j, pivot * k + j);
            }
        }
        let p = m[col * n + col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = m[row * n + col] / p;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = m[col * n + j];
                m[row * n + j] -= f * v;
            }
            for j in 0..k {
                let v = r[col * k + j];
                r[row * k + j] -= f * v;
            }
        }
    }
    for row in 0..n {
        let p = m[row * n + row];
        for j in 0..k {
            r[row * k + j] /= p;
        }
    }
    Ok(())
}

/// Bilinear (Tustin) transform:
/// `Ā = (I − Δ/2·A)⁻¹(I + Δ/2·A)`, `B̄ = (I − Δ/2·A)⁻¹·Δ·B`.
pub fn discretize_bilinear<T: Scalar>(ssm: &ContinuousSsm<T>, delta: T) -> Result<DiscreteSsm<T>> {
    if delta.is_nan() || delta <= T::zero() {
        return Err(Error::InvalidConfig(format!("step size must be > 0, got {delta}")));
    }
    let n = ssm.state_size();
    let half = delta * s(0.5);
    let a = ssm.a.data();
    let mut lhs: Vec<T> = (0..n * n)
        .map(|i| {
            let id = if i / n == i % n { T::one() } else { T::zero() };
            id - half * a[i]
        })
        .collect();
    // Right-hand sides [I + Δ/2·A | Δ·B] solved together.
    let k = n + 1;
    let mut rhs = vec![T::zero(); n * k];
    for r in 0..n {
        for c in 0..n {
            let id = if r == c { T::one() } else { T::zero() };
            rhs[r * k + c] = id + half * a[r * n + c];
        }
        rhs[r * k + n] = delta * ssm.b.data()[r];
    }
    solve_in_place(&mut lhs, &mut rhs, n, k)?;
    let mut a_bar = Vec::with_capacity(n * n);
    let mut b_bar = Vec::with_capacity(n);
    for r in 0..n {
        a_bar.extend_from_slice(&rhs[r * k..r * k + n]);
        b_bar.push(rhs[r * k + n]);
    }
    DiscreteSsm::new(
        Tensor::new(&[n, n], a_bar)?,
        Tensor::new(&[n, 1], b_bar)?,
        ssm.c.clone(),
        ssm.d,
        delta,
    )
}

/// Zero-order hold for diagonal `A`: `ā = exp(Δ·a)`, `b̄ = (ā − 1)/a · b`,
/// falling back to `Δ·b` when `|a| < 1e-9`.
pub fn discretize_zoh_diag<T: Scalar>(a_diag: &[T], b: &[T], delta: T) -> Result<(Vec<T>, Vec<T>)> {
    if a_diag.len() != b.len() {
        return Err(Error::LengthMismatch(a_diag.len(), b.len()));
    }
    if delta.is_nan() || delta <= T::zero() {
        return Err(Error::InvalidConfig(format!("step size must be > 0, got {delta}")));
    }
    let a_bar: Vec<T> = a_diag.iter().map(|&a| (delta * a).exp()).collect();
    let b_bar = a_diag
        .iter()
        .zip(b)
        .zip(&a_bar)
        .map(|((&a, &bv), &ab)| {
            if a.abs() < s(1e-9) {
                delta * bv
            } else {
                (ab - T::one()) / a * bv
            }
        })
        .collect();
    Ok((a_bar, b_bar))
}

/// Runs the recurrence from `h = 0`: `hₖ = Ā·hₖ₋₁ + B̄·xₖ`, `yₖ = C·hₖ + D·xₖ`.
pub fn recurrent_apply<T: Scalar>(d: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut h = vec![T::zero(); d.state_size()];
    Ok(x
        .iter()
        .map(|&xk| {
            d.step_state(&mut h, xk);
            d.readout(&h, xk)
        })
        .collect())
}

/// `K[i] = C·Āⁱ·B̄` for `i < len`, by repeated matrix-vector products.
pub fn conv_kernel<T: Scalar>(d: &DiscreteSsm<T>, len: usize) -> Result<Vec<T>> {
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut v = d.b_bar.data().to_vec();
    let mut k = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 {
            d.step_state(&mut v, T::zero());
        }
        k.push(d.readout(&v, T::zero()));
    }
    Ok(k)
}

/// Direct causal convolution `yₖ = Σ_{i≤k} K[i]·x[k−i] + D·xₖ`.
pub fn conv_apply<T: Scalar>(kernel: &[T], x: &[T], d: T) -> Result<Vec<T>> {
    if kernel.len() != x.len() {
        return Err(Error::shape(
            "conv_apply",
            format!("kernel length {} vs input length {}", kernel.len(), x.len()),
        ));
    }
    Ok((0..x.len())
        .map(|k| (0..=k).map(|i| kernel[i] * x[k - i]).sum::<T>() + d * x[k])
        .collect())
}
