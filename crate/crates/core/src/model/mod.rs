//! The stacked Mamba classifier: configuration, forward pass, training,
//! checkpoints and int8 quantization.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod gradcheck;
pub mod quant;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, save_quantized};
pub use classifier::{block_forward, model_forward, pool, InitOptions, MambaBlockParams, MambaClassifier};
pub use config::{count_params, memory_footprint, param_specs, ModelConfig, Pooling};
pub use quant::{quantize_int8, quantize_tensor, Footprint, QuantTensor, QuantizedModel};
pub use train::{evaluate, predict_proba, train, EpochRecord, Example, TrainConfig, TrainOutcome};
