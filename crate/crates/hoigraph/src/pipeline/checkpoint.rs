//! Checkpoint persistence: versioned JSON holding the vocabulary, the run
//! configuration, every weight matrix, and training metadata. Round trips
//! are byte-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{HeadParams, HoiModel};
use crate::kge::{TransHParams, Vocab};
use crate::num::{Activation, DenseLayer, DenseStack, Matrix, Param};
use crate::pipeline::config::RunConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerData {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransHData {
    pub entities: Matrix,
    pub normals: Matrix,
    pub translations: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadWeights {
    pub message_to_human: LayerData,
    pub message_to_object: LayerData,
    pub update_human: LayerData,
    pub update_object: LayerData,
    pub verb_classifier: Vec<LayerData>,
    pub interactiveness: Vec<LayerData>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelWeights {
    pub appearance_proj: Vec<LayerData>,
    pub human_fc: LayerData,
    pub object_fc: LayerData,
    pub edge_stack: Vec<LayerData>,
    pub head: HeadWeights,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub translational: f64,
    pub interactiveness: f64,
    pub verbs: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_trained: usize,
    pub loss_curve: Vec<EpochLoss>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab: Vocab,
    pub config: RunConfig,
    pub feature_dim: usize,
    pub transh: Option<TransHData>,
    pub weights: ModelWeights,
    pub metadata: TrainingMetadata,
}

fn layer_data(layer: &DenseLayer) -> LayerData {
    LayerData {
        weights: layer.weights.value.clone(),
        bias: layer.bias.value.data().to_vec(),
        activation: layer.activation,
    }
}

fn layer_from_data(data: &LayerData, name: &str) -> Result<DenseLayer> {
    let bias = Matrix::column(&data.bias)
        .map_err(|e| Error::Checkpoint(format!("layer {name}: {e}")))?;
    DenseLayer::new(data.weights.clone(), bias, data.activation)
        .map_err(|e| Error::Checkpoint(format!("layer {name}: {e}")))
}

fn stack_data(stack: &DenseStack) -> Vec<LayerData> {
    stack.layers.iter().map(layer_data).collect()
}

fn stack_from_data(data: &[LayerData], name: &str) -> Result<DenseStack> {
    let layers: Result<Vec<DenseLayer>> = data
        .iter()
        .enumerate()
        .map(|(i, l)| layer_from_data(l, &format!("{name}[{i}]")))
        .collect();
    DenseStack::new(layers?).map_err(|e| Error::Checkpoint(format!("stack {name}: {e}")))
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::Checkpoint(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_model(model: &HoiModel, config: &RunConfig, metadata: TrainingMetadata) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            vocab: model.vocab.clone(),
            config: config.clone(),
            feature_dim: model.feature_dim,
            transh: model.transh.as_ref().map(|t| TransHData {
                entities: t.entities.value.clone(),
                normals: t.normals.value.clone(),
                translations: t.translations.value.clone(),
            }),
            weights: ModelWeights {
                appearance_proj: stack_data(&model.appearance_proj),
                human_fc: layer_data(&model.human_fc),
                object_fc: layer_data(&model.object_fc),
                edge_stack: stack_data(&model.edge_stack),
                head: HeadWeights {
                    message_to_human: layer_data(&model.head.message_to_human),
                    message_to_object: layer_data(&model.head.message_to_object),
                    update_human: layer_data(&model.head.update_human),
                    update_object: layer_data(&model.head.update_object),
                    verb_classifier: stack_data(&model.head.verb_classifier),
                    interactiveness: stack_data(&model.head.interactiveness),
                },
            },
            metadata,
        }
    }

    /// Rebuild the model, validating every shape against the config and
    /// vocabulary.
    pub fn to_model(&self) -> Result<HoiModel> {
        self.vocab
            .validate()
            .map_err(|e| Error::Checkpoint(format!("vocab: {e}")))?;
        self.config.validate()?;
        let (m, n) = (self.vocab.num_objects(), self.vocab.num_verbs());
        let k = self.config.k;
        let transh = match (&self.transh, k) {
            (None, 0) => None,
            (Some(data), k) if k > 0 => {
                expect_shape("kge.entities", &data.entities, m, k)?;
                expect_shape("kge.normals", &data.normals, n, k)?;
                expect_shape("kge.translations", &data.translations, n, k)?;
                Some(TransHParams {
                    entities: Param::new(data.entities.clone()),
                    normals: Param::new(data.normals.clone()),
                    translations: Param::new(data.translations.clone()),
                    dim: k,
                })
            }
            (present, k) => {
                return Err(Error::Checkpoint(format!(
                    "embedding size {k} inconsistent with {} translational weights",
                    if present.is_some() { "present" } else { "absent" }
                )));
            }
        };
        let nw = self.config.node_width;
        let ew = self.config.edge_width;
        let w = &self.weights;
        let model = HoiModel {
            vocab: self.vocab.clone(),
            feature_dim: self.feature_dim,
            node_width: nw,
            edge_width: ew,
            transh,
            appearance_proj: stack_from_data(&w.appearance_proj, "appearance_proj")?,
            human_fc: layer_from_data(&w.human_fc, "human_fc")?,
            object_fc: layer_from_data(&w.object_fc, "object_fc")?,
            edge_stack: stack_from_data(&w.edge_stack, "edge_stack")?,
            head: HeadParams {
                message_to_human: layer_from_data(&w.head.message_to_human, "head.message_to_human")?,
                message_to_object: layer_from_data(&w.head.message_to_object, "head.message_to_object")?,
                update_human: layer_from_data(&w.head.update_human, "head.update_human")?,
                update_object: layer_from_data(&w.head.update_object, "head.update_object")?,
                verb_classifier: stack_from_data(&w.head.verb_classifier, "head.verb_classifier")?,
                interactiveness: stack_from_data(&w.head.interactiveness, "head.interactiveness")?,
            },
        };
        expect_shape(
            "appearance_proj input",
            &model.appearance_proj.layers[0].weights.value,
            nw,
            self.feature_dim,
        )?;
        expect_shape("human_fc", &model.human_fc.weights.value, nw, nw + k)?;
        expect_shape("object_fc", &model.object_fc.weights.value, nw, nw + k)?;
        expect_shape(
            "edge_stack input",
            &model.edge_stack.layers[0].weights.value,
            ew,
            crate::graphrep::SPATIAL_DIM,
        )?;
        let n_out = model
            .head
            .verb_classifier
            .layers
            .last()
            .map(|l| l.out_dim())
            .unwrap_or(0);
        if n_out != n {
            return Err(Error::Checkpoint(format!(
                "verb classifier emits {n_out} logits for {n} verbs"
            )));
        }
        Ok(model)
    }
}

pub fn checkpoint_to_json(ckpt: &Checkpoint) -> Result<String> {
    serde_json::to_string_pretty(ckpt).map_err(|e| Error::Checkpoint(format!("serialize: {e}")))
}

pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
    if version != CHECKPOINT_FORMAT_VERSION as u64 {
        return Err(Error::Checkpoint(format!(
            "refusing checkpoint format version {version}; this build reads version {CHECKPOINT_FORMAT_VERSION} only"
        )));
    }
    let ckpt: Checkpoint =
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut text = checkpoint_to_json(ckpt)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    checkpoint_from_json(&text)
}
