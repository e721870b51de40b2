//! Neural embedding provider for `iqa-core`: CLIP image and text encoders
//! exported to ONNX and executed with tract, plus the CLIP BPE tokenizer and
//! image preprocessing they need.

pub mod onnx;
pub mod preprocess;
pub mod tokenizer;

pub use onnx::{NeuralConfig, NeuralProvider};
pub use preprocess::PreprocessPolicy;
pub use tokenizer::{ClipTokenizer, TokenizerError, CONTEXT_LENGTH};
