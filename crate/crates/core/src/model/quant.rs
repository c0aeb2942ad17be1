//! Symmetric per-tensor int8 quantization.
//!
//! Matrices are stored as `round(w / scale)` with `scale = max|w| / 127`;
//! per-channel vectors (norm gains, biases, skip weights) stay `f32`.

use crate::error::Result;
use crate::model::classifier::MambaClassifier;
use crate::model::config::{memory_footprint, ModelConfig};
use crate::tensor::{Scalar, Tensor};

/// An int8 tensor with its dequantization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub values: Vec<i8>,
    pub scale: f32,
}

impl QuantTensor {
    pub fn dequantize(&self) -> Result<Tensor<f32>> {
        Tensor::new(
            &self.shape,
            self.values.iter().map(|&q| f32::from(q) * self.scale).collect(),
        )
    }
}

/// `scale = max|w| / 127` (1.0 for an all-zero tensor), `q = round(w/scale)`.
pub fn quantize_tensor(t: &Tensor<f32>) -> QuantTensor {
    let max = t.max_abs();
    let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
    let values = t
        .data()
        .iter()
        .map(|&w| (w / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantTensor {
        shape: t.shape().to_vec(),
        values,
        scale,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    Int8(QuantTensor),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::Int8(q) => &q.shape,
        }
    }

    pub fn to_f32(&self) -> Result<Tensor<f32>> {
        match self {
            StoredTensor::F32(t) => Ok(t.clone()),
            StoredTensor::Int8(q) => q.dequantize(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub tensors: Vec<(String, StoredTensor)>,
}

/// Storage accounting of a quantized model against its `f32` original.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    /// Scalars held in int8 matrices.
    pub weight_params: u64,
    /// Scalars kept in `f32`.
    pub f32_params: u64,
    /// Number of int8 tensors, each carrying one `f32` scale.
    pub scales: u64,
}

impl Footprint {
    pub fn weights_f32_mb(&self) -> f64 {
        memory_footprint(self.weight_params, 4)
    }

    pub fn weights_int8_mb(&self) -> f64 {
        memory_footprint(self.weight_params, 1)
    }

    /// Fractional saving over the quantized matrices alone (always 0.75).
    pub fn weight_reduction(&self) -> f64 {
        if self.weight_params == 0 {
            return 0.0;
        }
        1.0 - self.weights_int8_mb() / self.weights_f32_mb()
    }

    pub fn total_f32_mb(&self) -> f64 {
        memory_footprint(self.weight_params + self.f32_params, 4)
    }

    /// Everything actually stored: int8 matrices, `f32` vectors and scales.
    pub fn total_quantized_mb(&self) -> f64 {
        memory_footprint(self.weight_params, 1) + memory_footprint(self.f32_params + self.scales, 4)
    }

    pub fn total_reduction(&self) -> f64 {
        1.0 - self.total_quantized_mb() / self.total_f32_mb()
    }

    /// Share of all parameters left in `f32`.
    pub fn f32_fraction(&self) -> f64 {
        self.f32_params as f64 / (self.weight_params + self.f32_params).max(1) as f64
    }

    /// The weight-only reduction when the `f32` remainder is under 1% of
    /// the parameters, otherwise the whole-model reduction.
    pub fn headline_reduction(&self) -> f64 {
        if self.f32_fraction() < 0.01 {
            self.weight_reduction()
        } else {
            self.total_reduction()
        }
    }
}

/// Quantizes every matrix of `m`; vectors are kept as `f32`.
pub fn quantize_int8<T: Scalar>(m: &MambaClassifier<T>) -> QuantizedModel {
    let tensors = m
        .named_tensors()
        .into_iter()
        .map(|(name, t)| {
            let t32: Tensor<f32> = t.cast();
            let stored = if t32.rank() >= 2 {
                StoredTensor::Int8(quantize_tensor(&t32))
            } else {
                StoredTensor::F32(t32)
            };
            (name, stored)
        })
        .collect();
    QuantizedModel {
        config: m.config.clone(),
        tensors,
    }
}

impl QuantizedModel {
    /// The `f32` model inference runs on.
    pub fn dequantize(&self) -> Result<MambaClassifier<f32>> {
        let tensors = self
            .tensors
            .iter()
            .map(|(n, t)| Ok((n.clone(), t.to_f32()?)))
            .collect::<Result<Vec<_>>>()?;
        MambaClassifier::from_named_tensors(self.config.clone(), tensors)
    }

    pub fn footprint(&self) -> Footprint {
        let mut f = Footprint {
            weight_params: 0,
            f32_params: 0,
            scales: 0,
        };
        for (_, t) in &self.tensors {
            let n: u64 = t.shape().iter().product::<usize>() as u64;
            match t {
                StoredTensor::F32(_) => f.f32_params += n,
                StoredTensor::Int8(_) => {
                    f.weight_params += n;
                    f.scales += 1;
                }
            }
        }
        f
    }
}
