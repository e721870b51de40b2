//! Embedding provider backed by exported CLIP encoders in ONNX format.
//!
//! Export contract:
//!
//! - image encoder: one float input `N×3×H×W`, one output `N×dim` in the
//!   joint (projected) embedding space. Spatial dims may be symbolic, which
//!   is what an export with the positional embedding removed produces; a
//!   fixed-size export declares its size through a static input shape or an
//!   `image_size` metadata entry.
//! - text encoder: one integer input `N×77` of token ids, one output `N×dim`.
//! - optional metadata: `normalizes_output = "true"` when the export already
//!   L2-normalizes, `model_id` to name the pair.
//!
//! Tensor names are taken from the model graph; nothing is hard-coded.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use iqa_core::provider::{check_dim, validate_prompts};
use iqa_core::{
    EmbeddingProvider, EmbeddingVector, ImageInput, ProviderDescriptor, ProviderError,
};
use sha2::{Digest, Sha256};
use tract_onnx::pb::{attribute_proto, AttributeProto, GraphProto, NodeProto};
use tract_onnx::prelude::*;

use crate::preprocess::{preprocess, PreprocessPolicy};
use crate::tokenizer::{ClipTokenizer, CONTEXT_LENGTH};

type Plan = TypedRunnableModel<TypedModel>;

#[derive(Debug, Clone)]
pub struct NeuralConfig {
    pub image_model: PathBuf,
    pub text_model: PathBuf,
    pub vocab: PathBuf,
    /// `None` picks `native` for variable-size exports and
    /// `resize:<declared size>` for fixed-size ones.
    pub preprocess: Option<PreprocessPolicy>,
}

struct Encoder {
    plan: Plan,
    input_name: String,
    output_name: String,
    /// Static input dims; `None` where symbolic.
    input_dims: Vec<Option<usize>>,
    input_type: DatumType,
    output_dim: usize,
    metadata: HashMap<String, String>,
}

fn load_error(path: &Path, e: impl std::fmt::Display) -> ProviderError {
    ProviderError::ModelLoad(format!("{}: {e}", path.display()))
}

const ONNX_INT32: i64 = 6;
const ONNX_INT64: i64 = 7;

fn cast_node(name: String, input: String, to: i64) -> NodeProto {
    NodeProto {
        output: vec![name.clone()],
        name,
        op_type: "Cast".into(),
        input: vec![input],
        attribute: vec![AttributeProto {
            name: "to".into(),
            i: to,
            r#type: attribute_proto::AttributeType::Int as i32,
            ..Default::default()
        }],
        ..Default::default()
    }
}

/// tract loads `Cast(to=int64)` as a symbolic-dimension cast, so a `Range`
/// over `shape(x)[0]` mixes dimension and int64 operands and fails to type.
/// Torch emits exactly that for `x[arange(n), idx]`. Routing each operand of
/// an all-int64 `Range` through int32 gives it one concrete type.
fn narrow_integer_ranges(graph: &mut GraphProto) {
    let mut int64_outputs: HashSet<String> = graph
        .initializer
        .iter()
        .filter(|t| t.data_type == ONNX_INT64 as i32)
        .map(|t| t.name.clone())
        .collect();
    for node in &graph.node {
        let is_int64 = match node.op_type.as_str() {
            "Cast" => node.attribute.iter().any(|a| a.name == "to" && a.i == ONNX_INT64),
            "Constant" => node
                .attribute
                .iter()
                .any(|a| a.name == "value" && a.t.as_ref().is_some_and(|t| t.data_type == ONNX_INT64 as i32)),
            _ => false,
        };
        if is_int64 {
            int64_outputs.extend(node.output.iter().cloned());
        }
    }
    let mut rewritten = Vec::with_capacity(graph.node.len());
    for mut node in std::mem::take(&mut graph.node) {
        if node.op_type == "Range" && node.input.iter().all(|i| int64_outputs.contains(i)) {
            for (i, input) in node.input.iter_mut().enumerate() {
                let cast = cast_node(format!("{}/int32_{i}", node.name), input.clone(), ONNX_INT32);
                *input = cast.output[0].clone();
                rewritten.push(cast);
            }
        }
        rewritten.push(node);
    }
    graph.node = rewritten;
}

/// Inputs are fed one at a time. Fixing the batch axis to 1 also lets
/// tract type graphs that index with `arange(batch)`, as the CLIP text
/// encoder does at the end-of-text gather.
fn pin_batch(mut model: InferenceModel) -> TractResult<InferenceModel> {
    for i in 0..model.input_outlets()?.len() {
        let mut fact = model.input_fact(i)?.clone();
        if fact.shape.dim(0).is_some() {
            fact.shape.set_dim(0, 1.into());
            model.set_input_fact(i, fact)?;
        }
    }
    Ok(model)
}

impl Encoder {
    fn load(path: &Path, expected_rank: usize) -> Result<Self, ProviderError> {
        if !path.is_file() {
            return Err(load_error(path, "file not found"));
        }
        let onnx = tract_onnx::onnx();
        let mut proto = onnx
            .proto_model_for_path(path)
            .map_err(|e| load_error(path, format!("{e:#}")))?;
        if let Some(graph) = proto.graph.as_mut() {
            narrow_integer_ranges(graph);
        }
        let metadata = proto
            .metadata_props
            .iter()
            .map(|p| (p.key.clone(), p.value.clone()))
            .collect();
        let model = onnx
            .model_for_proto_model(&proto)
            .and_then(pin_batch)
            .and_then(|m| m.into_typed())
            .map_err(|e| load_error(path, format!("{e:#}")))?;

        let inputs = model.input_outlets().map_err(|e| load_error(path, e))?.to_vec();
        let outputs = model.output_outlets().map_err(|e| load_error(path, e))?.to_vec();
        if inputs.len() != 1 {
            return Err(load_error(path, format!("expected one input, found {}", inputs.len())));
        }
        let Some(&output) = outputs.first() else {
            return Err(load_error(path, "model has no outputs"));
        };
        let input_name = model.node(inputs[0].node).name.clone();
        let output_name = model
            .outlet_label(output)
            .map(str::to_owned)
            .unwrap_or_else(|| model.node(output.node).name.clone());

        let in_fact = model.outlet_fact(inputs[0]).map_err(|e| load_error(path, e))?;
        let input_type = in_fact.datum_type;
        let input_dims: Vec<Option<usize>> = in_fact
            .shape
            .iter()
            .map(|d| d.to_i64().ok().map(|v| v as usize))
            .collect();
        if input_dims.len() != expected_rank {
            return Err(load_error(
                path,
                format!("input {input_name:?} has rank {}, expected {expected_rank}", input_dims.len()),
            ));
        }
        let out_fact = model.outlet_fact(output).map_err(|e| load_error(path, e))?;
        let output_dim = match out_fact.shape.iter().collect::<Vec<_>>().as_slice() {
            [_, width] => width
                .to_i64()
                .map_err(|_| load_error(path, format!("output {output_name:?} has a symbolic width")))?
                as usize,
            other => {
                return Err(load_error(
                    path,
                    format!("output {output_name:?} has rank {}, expected 2", other.len()),
                ))
            }
        };
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| load_error(path, format!("{e:#}")))?;
        Ok(Self {
            plan,
            input_name,
            output_name,
            input_dims,
            input_type,
            output_dim,
            metadata,
        })
    }

    fn run(&self, input: Tensor) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let out = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| ProviderError::Inference(format!("{e:#}")))?;
        let out = out[0]
            .cast_to::<f32>()
            .map_err(|e| ProviderError::Inference(format!("{e:#}")))?;
        let view = out
            .to_array_view::<f32>()
            .map_err(|e| ProviderError::Inference(format!("{e:#}")))?;
        let shape = view.shape().to_vec();
        if shape.len() != 2 {
            return Err(ProviderError::Inference(format!(
                "output {:?} has shape {shape:?}",
                self.output_name
            )));
        }
        view.outer_iter()
            .map(|row| {
                EmbeddingVector::from_f32(&row.iter().copied().collect::<Vec<_>>())
                    .map_err(ProviderError::from)
            })
            .collect()
    }

    fn flag(&self, key: &str) -> bool {
        self.metadata.get(key).is_some_and(|v| v.eq_ignore_ascii_case("true"))
    }
}

/// CLIP image and text encoders running on the tract inference engine.
///
/// Inference is single-threaded per call and deterministic. The compiled
/// plans are immutable, so one instance can serve many worker threads.
pub struct NeuralProvider {
    image: Encoder,
    text: Encoder,
    tokenizer: ClipTokenizer,
    policy: PreprocessPolicy,
    /// Square input size required by a fixed-size image export.
    fixed_size: Option<u32>,
    context: usize,
    descriptor: ProviderDescriptor,
}

impl NeuralProvider {
    pub fn load(config: &NeuralConfig) -> Result<Self, ProviderError> {
        let image = Encoder::load(&config.image_model, 4)?;
        let text = Encoder::load(&config.text_model, 2)?;
        let tokenizer = ClipTokenizer::from_file(&config.vocab)
            .map_err(|e| ProviderError::ModelLoad(e.to_string()))?;

        if image.input_dims[1].is_some_and(|c| c != 3) {
            return Err(load_error(
                &config.image_model,
                format!("input {:?} must have 3 channels", image.input_name),
            ));
        }
        if !(image.input_type.is_float()) {
            return Err(load_error(&config.image_model, "image input must be floating point"));
        }
        if !matches!(text.input_type, DatumType::I64 | DatumType::I32) {
            return Err(load_error(
                &config.text_model,
                format!("token input {:?} must be int64 or int32", text.input_name),
            ));
        }
        if image.output_dim != text.output_dim {
            return Err(ProviderError::ModelLoad(format!(
                "image encoder emits {} dims but text encoder emits {}",
                image.output_dim, text.output_dim
            )));
        }

        let fixed_size = match (image.input_dims[2], image.input_dims[3]) {
            (Some(h), Some(w)) if h == w => Some(h as u32),
            (Some(h), Some(w)) => {
                return Err(load_error(
                    &config.image_model,
                    format!("fixed input {h}x{w} is not square; only square crops are produced"),
                ))
            }
            _ => image
                .metadata
                .get("image_size")
                .and_then(|s| s.parse::<u32>().ok()),
        };
        let policy = match (config.preprocess, fixed_size) {
            (None, None) => PreprocessPolicy::Native,
            (None, Some(s)) => PreprocessPolicy::Resize(s),
            (Some(PreprocessPolicy::Native), Some(s)) => {
                return Err(ProviderError::InputShape(format!(
                    "the image encoder only accepts {s}x{s} input; use resize:{s}"
                )))
            }
            (Some(PreprocessPolicy::Resize(r)), Some(s)) if r != s => {
                return Err(ProviderError::InputShape(format!(
                    "resize:{r} does not match the encoder's fixed {s}x{s} input"
                )))
            }
            (Some(p), _) => p,
        };

        let context = text.input_dims[1].unwrap_or(CONTEXT_LENGTH);
        if tokenizer.vocab_size() == 0 {
            return Err(ProviderError::ModelLoad("empty tokenizer vocabulary".into()));
        }

        let model_id = match image.metadata.get("model_id") {
            Some(id) if !id.is_empty() => format!("{id}/{policy}"),
            _ => format!(
                "clip-onnx-{}/{policy}",
                &digest_files(&[&config.image_model, &config.text_model, &config.vocab])?[..16]
            ),
        };
        let normalizes = image.flag("normalizes_output") && text.flag("normalizes_output");
        let descriptor = ProviderDescriptor::new(model_id, image.output_dim, normalizes)?;
        Ok(Self {
            image,
            text,
            tokenizer,
            policy,
            fixed_size,
            context,
            descriptor,
        })
    }

    pub fn policy(&self) -> PreprocessPolicy {
        self.policy
    }

    pub fn context_length(&self) -> usize {
        self.context
    }

    pub fn tokenizer(&self) -> &ClipTokenizer {
        &self.tokenizer
    }

    fn token_tensor(&self, ids: &[u32]) -> Result<Tensor, ProviderError> {
        let shape = (1, ids.len());
        let tensor: Tensor = match self.text.input_type {
            DatumType::I32 => tract_ndarray::Array2::from_shape_vec(
                shape,
                ids.iter().map(|&t| t as i32).collect(),
            )
            .map(Into::into),
            _ => tract_ndarray::Array2::from_shape_vec(
                shape,
                ids.iter().map(|&t| i64::from(t)).collect(),
            )
            .map(Into::into),
        }
        .map_err(|e| ProviderError::Inference(e.to_string()))?;
        Ok(tensor)
    }
}

fn digest_files(paths: &[&Path]) -> Result<String, ProviderError> {
    let mut h = Sha256::new();
    for path in paths {
        let bytes = fs::read(path).map_err(|source| ProviderError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl EmbeddingProvider for NeuralProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, ProviderError> {
        let decoded = image.decode()?;
        let tensor = preprocess(&decoded, self.policy);
        if let Some(size) = self.fixed_size {
            let shape = tensor.shape();
            if shape[2] != size as usize || shape[3] != size as usize {
                return Err(ProviderError::InputShape(format!(
                    "{}x{} input for a {size}x{size} encoder",
                    shape[2], shape[3]
                )));
            }
        }
        let mut rows = self.image.run(tensor)?;
        if rows.len() != 1 {
            return Err(ProviderError::Inference(format!(
                "expected one embedding row, got {}",
                rows.len()
            )));
        }
        let v = rows.remove(0);
        check_dim(&self.descriptor, &v)?;
        Ok(v)
    }

    fn embed_texts(&self, prompts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_prompts(prompts)?;
        prompts
            .iter()
            .enumerate()
            .map(|(index, prompt)| {
                let ids = self
                    .tokenizer
                    .tokenize(prompt, self.context)
                    .map_err(|e| ProviderError::Prompt {
                        index,
                        message: e.to_string(),
                    })?;
                let mut rows = self.text.run(self.token_tensor(&ids)?)?;
                let v = rows.pop().ok_or_else(|| {
                    ProviderError::Inference("text encoder returned no rows".into())
                })?;
                check_dim(&self.descriptor, &v)?;
                Ok(v)
            })
            .collect()
    }

    fn preprocessing(&self) -> Option<String> {
        Some(format!(
            "{}; rgb/255; mean/std normalized (CLIP constants)",
            self.policy
        ))
    }
}
