//! Forward kernels shared by the tape and by the pure-function APIs.
//!
//! Every op validates shapes and rejects non-finite output.

use crate::error::{Error, Result};
use crate::tensor::{s, Scalar, Tensor};

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu_scalar<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// d/dx [x·σ(x)] = σ(x)·(1 + x·(1 − σ(x)))
#[inline]
pub fn silu_grad_scalar<T: Scalar>(x: T) -> T {
    let sg = sigmoid(x);
    sg * (T::one() + x * (T::one() - sg))
}

#[inline]
pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    // y + ln(1 − e^{−y}), stable for small y via expm1.
    y + (-(-y).exp_m1()).ln()
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.expect_dims2("matmul")?;
    let (k2, n) = b.expect_dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dims differ: {:?} × {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(&[m, n], out)?.ensure_finite("matmul")
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.map(silu_scalar).ensure_finite("silu")
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.map(softplus_scalar).ensure_finite("softplus")
}

/// Per-channel causal convolution with `k − 1` zeros of left padding.
/// `w[d, k−1]` multiplies the current position.
pub fn conv1d_depthwise_causal<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (len, dim) = x.expect_dims2("conv1d_depthwise_causal")?;
    let (wd, k) = w.expect_dims2("conv1d_depthwise_causal")?;
    if wd != dim || b.numel() != dim {
        return Err(Error::shape(
            "conv1d_depthwise_causal",
            format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let (xd, wv, bv) = (x.data(), w.data(), b.data());
    let mut out = vec![T::zero(); len * dim];
    for t in 0..len {
        let row = &mut out[t * dim..(t + 1) * dim];
        row.copy_from_slice(bv);
        for j in 0..k {
            // tap j reads x[t − (k − 1) + j]
            let Some(src) = (t + j).checked_sub(k - 1) else {
                continue;
            };
            let xr = &xd[src * dim..(src + 1) * dim];
            for d in 0..dim {
                row[d] += wv[d * k + j] * xr[d];
            }
        }
    }
    Tensor::new(&[len, dim], out)?.ensure_finite("conv1d_depthwise_causal")
}

/// Row-wise RMS normalization. Returns the output and `1/rms` per row.
pub fn rmsnorm_with_stats<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (rows, dim) = x.dims2();
    if gamma.numel() != dim {
        return Err(Error::shape(
            "rmsnorm",
            format!("x {:?}, gamma {:?}", x.shape(), gamma.shape()),
        ));
    }
    let eps_t: T = s(eps);
    let n: T = s(dim as f64);
    let g = gamma.data();
    let mut out = vec![T::zero(); rows * dim];
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x.data()[r * dim..(r + 1) * dim];
        let ms = xr.iter().map(|&v| v * v).sum::<T>() / n;
        let ir = T::one() / (ms + eps_t).sqrt();
        inv.push(ir);
        for ((o, &v), &gv) in out[r * dim..(r + 1) * dim].iter_mut().zip(xr).zip(g) {
            *o = v * ir * gv;
        }
    }
    let y = Tensor::new(x.shape(), out)?.ensure_finite("rmsnorm")?;
    Ok((y, inv))
}

pub fn rmsnorm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("rmsnorm eps must be > 0, got {eps}")));
    }
    Ok(rmsnorm_with_stats(x, gamma, eps)?.0)
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `−log softmax(logits)[label]` with max subtraction. Returns the loss
/// and the softmax probabilities (the gradient is `probs − onehot`).
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Vec<T>)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    let loss = lse - z[label];
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, softmax(z)))
}
