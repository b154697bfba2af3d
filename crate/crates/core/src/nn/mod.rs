//! Minimal neural-network core: dense matrices, MLP and LSTM layers with
//! exact reverse-mode gradients, and the Adam optimizer.

pub mod adam;
pub mod lstm;
pub mod mat;
pub mod mlp;

pub use adam::AdamState;
pub use lstm::{Gate, LstmCache, LstmParams};
pub use mat::{gemm, Mat, Op};
pub use mlp::{Activation, Dense, MlpCache, MlpParams};
