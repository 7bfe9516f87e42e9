//! Bipartite graph prediction head: edge-conditioned message passing over
//! human/object nodes, per-pair verb and interactiveness scores, detection
//! prior fusion, target assignment, and the combined training objective.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graphrep::{
    appearance_project, edge_embed, filter_detections, make_pairs, node_embed, nms,
    spatial_features, BBox, Detection, GraphBatch, GroundTruthHoi, PairInfo, Scene, SPATIAL_DIM,
};
use crate::kge::{TransHParams, TransHVars, Vocab};
use crate::num::{
    dense_apply, Activation, DenseLayer, DenseStack, DenseStackVars, DenseVars, Param, Tape, VarId,
};

/// Message, residual-update, and scoring stacks of the graph head.
#[derive(Debug, Clone)]
pub struct HeadParams {
    /// Message from an object node to a human node: input `x_o (+) e`.
    pub message_to_human: DenseLayer,
    /// Message from a human node to an object node: input `x_h (+) e`.
    pub message_to_object: DenseLayer,
    /// Residual update of human nodes: input `x_h (+) mean message`.
    pub update_human: DenseLayer,
    /// Residual update of object nodes.
    pub update_object: DenseLayer,
    /// Verb logits from `x_h' (+) x_o' (+) e`.
    pub verb_classifier: DenseStack,
    /// Single interactiveness logit from the same input.
    pub interactiveness: DenseStack,
}

#[derive(Debug, Clone)]
pub struct HeadVars {
    pub message_to_human: DenseVars,
    pub message_to_object: DenseVars,
    pub update_human: DenseVars,
    pub update_object: DenseVars,
    pub verb_classifier: DenseStackVars,
    pub interactiveness: DenseStackVars,
}

impl HeadParams {
    pub fn init<R: Rng>(node_width: usize, edge_width: usize, num_verbs: usize, rng: &mut R) -> Self {
        let msg_in = node_width + edge_width;
        let pair_in = 2 * node_width + edge_width;
        HeadParams {
            message_to_human: DenseLayer::init(node_width, msg_in, Activation::Rectifier, rng),
            message_to_object: DenseLayer::init(node_width, msg_in, Activation::Rectifier, rng),
            update_human: DenseLayer::init(node_width, 2 * node_width, Activation::Rectifier, rng),
            update_object: DenseLayer::init(node_width, 2 * node_width, Activation::Rectifier, rng),
            verb_classifier: DenseStack::init_mlp(&[pair_in, node_width, num_verbs], rng),
            interactiveness: DenseStack::init_mlp(&[pair_in, node_width, 1], rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            message_to_human: self.message_to_human.bind(tape),
            message_to_object: self.message_to_object.bind(tape),
            update_human: self.update_human.bind(tape),
            update_object: self.update_object.bind(tape),
            verb_classifier: self.verb_classifier.bind(tape),
            interactiveness: self.interactiveness.bind(tape),
        }
    }

    pub fn accumulate(&mut self, tape: &Tape, vars: &HeadVars) {
        self.message_to_human.accumulate(tape, vars.message_to_human);
        self.message_to_object.accumulate(tape, vars.message_to_object);
        self.update_human.accumulate(tape, vars.update_human);
        self.update_object.accumulate(tape, vars.update_object);
        self.verb_classifier.accumulate(tape, &vars.verb_classifier);
        self.interactiveness.accumulate(tape, &vars.interactiveness);
    }
}

/// The full second-stage network: entity embeddings, appearance projection,
/// node/edge encoders, and the graph head.
#[derive(Debug, Clone)]
pub struct HoiModel {
    pub vocab: Vocab,
    pub feature_dim: usize,
    pub node_width: usize,
    pub edge_width: usize,
    /// Absent when the embedding size is 0 (appearance-only ablation).
    pub transh: Option<TransHParams>,
    pub appearance_proj: DenseStack,
    pub human_fc: DenseLayer,
    pub object_fc: DenseLayer,
    pub edge_stack: DenseStack,
    pub head: HeadParams,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub transh: Option<TransHVars>,
    pub appearance_proj: DenseStackVars,
    pub human_fc: DenseVars,
    pub object_fc: DenseVars,
    pub edge_stack: DenseStackVars,
    pub head: HeadVars,
}

impl HoiModel {
    /// Each component draws from its own stream, seeded up front in a fixed
    /// order. Components untouched by a config change (say, dropping the
    /// translational part) initialize identically, which keeps ablations
    /// paired instead of reshuffling every weight in the network.
    pub fn init<R: Rng>(
        vocab: Vocab,
        feature_dim: usize,
        embedding_dim: usize,
        node_width: usize,
        edge_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        use rand::SeedableRng;
        vocab.validate()?;
        if feature_dim == 0 || node_width == 0 || edge_width == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        let mut streams: Vec<rand_chacha::ChaCha8Rng> = (0..6)
            .map(|_| rand_chacha::ChaCha8Rng::seed_from_u64(rng.next_u64()))
            .collect();
        let transh = if embedding_dim > 0 {
            Some(crate::kge::init_transh(
                vocab.num_objects(),
                vocab.num_verbs(),
                embedding_dim,
                &mut streams[0],
            )?)
        } else {
            None
        };
        let appearance_proj =
            DenseStack::init_mlp(&[feature_dim, node_width, node_width], &mut streams[1]);
        let fc_in = node_width + embedding_dim;
        let human_fc = DenseLayer::init(node_width, fc_in, Activation::Rectifier, &mut streams[2]);
        let object_fc = DenseLayer::init(node_width, fc_in, Activation::Rectifier, &mut streams[3]);
        let edge_stack =
            DenseStack::init_mlp(&[SPATIAL_DIM, edge_width, edge_width, edge_width], &mut streams[4]);
        let head = HeadParams::init(node_width, edge_width, vocab.num_verbs(), &mut streams[5]);
        Ok(HoiModel {
            vocab,
            feature_dim,
            node_width,
            edge_width,
            transh,
            appearance_proj,
            human_fc,
            object_fc,
            edge_stack,
            head,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.transh.as_ref().map(|t| t.dim).unwrap_or(0)
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            transh: self.transh.as_ref().map(|t| t.bind(tape)),
            appearance_proj: self.appearance_proj.bind(tape),
            human_fc: self.human_fc.bind(tape),
            object_fc: self.object_fc.bind(tape),
            edge_stack: self.edge_stack.bind(tape),
            head: self.head.bind(tape),
        }
    }

    pub fn accumulate(&mut self, tape: &Tape, vars: &ModelVars) {
        if let (Some(t), Some(v)) = (self.transh.as_mut(), vars.transh) {
            t.accumulate(tape, v);
        }
        self.appearance_proj.accumulate(tape, &vars.appearance_proj);
        self.human_fc.accumulate(tape, vars.human_fc);
        self.object_fc.accumulate(tape, vars.object_fc);
        self.edge_stack.accumulate(tape, &vars.edge_stack);
        self.head.accumulate(tape, &vars.head);
    }

    /// Every trainable parameter with a stable name and whether it belongs
    /// to the translational model. Order is fixed; the optimizer and the
    /// checkpoint rely on it.
    pub fn named_params_mut(&mut self) -> Vec<(String, bool, &mut Param)> {
        let mut out: Vec<(String, bool, &mut Param)> = Vec::new();
        if let Some(t) = self.transh.as_mut() {
            out.push(("kge.entities".into(), true, &mut t.entities));
            out.push(("kge.normals".into(), true, &mut t.normals));
            out.push(("kge.translations".into(), true, &mut t.translations));
        }
        fn push_stack<'a>(
            out: &mut Vec<(String, bool, &'a mut Param)>,
            name: &str,
            stack: &'a mut DenseStack,
        ) {
            for (i, layer) in stack.layers.iter_mut().enumerate() {
                out.push((format!("{name}.{i}.weights"), false, &mut layer.weights));
                out.push((format!("{name}.{i}.bias"), false, &mut layer.bias));
            }
        }
        fn push_layer<'a>(
            out: &mut Vec<(String, bool, &'a mut Param)>,
            name: &str,
            layer: &'a mut DenseLayer,
        ) {
            out.push((format!("{name}.weights"), false, &mut layer.weights));
            out.push((format!("{name}.bias"), false, &mut layer.bias));
        }
        push_stack(&mut out, "proj", &mut self.appearance_proj);
        push_layer(&mut out, "human_fc", &mut self.human_fc);
        push_layer(&mut out, "object_fc", &mut self.object_fc);
        push_stack(&mut out, "edge", &mut self.edge_stack);
        push_layer(&mut out, "head.message_to_human", &mut self.head.message_to_human);
        push_layer(&mut out, "head.message_to_object", &mut self.head.message_to_object);
        push_layer(&mut out, "head.update_human", &mut self.head.update_human);
        push_layer(&mut out, "head.update_object", &mut self.head.update_object);
        push_stack(&mut out, "head.verb_classifier", &mut self.head.verb_classifier);
        push_stack(&mut out, "head.interactiveness", &mut self.head.interactiveness);
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, _, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Vocab and feature compatibility of a scene against this model.
    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        for (i, d) in scene.detections.iter().enumerate() {
            if d.label >= self.vocab.num_objects() {
                return Err(Error::Compatibility(format!(
                    "scene {}: detection {i} label {} outside vocab of {} objects",
                    scene.id,
                    d.label,
                    self.vocab.num_objects()
                )));
            }
            if d.feature.len() != self.feature_dim {
                return Err(Error::Compatibility(format!(
                    "scene {}: detection {i} feature length {} != {}",
                    scene.id,
                    d.feature.len(),
                    self.feature_dim
                )));
            }
        }
        for (i, gt) in scene.ground_truth.iter().enumerate() {
            if gt.object_label >= self.vocab.num_objects() {
                return Err(Error::Compatibility(format!(
                    "scene {}: ground truth {i} label outside vocab",
                    scene.id
                )));
            }
            if gt.verbs.iter().any(|&v| v >= self.vocab.num_verbs()) {
                return Err(Error::Compatibility(format!(
                    "scene {}: ground truth {i} verb outside vocab",
                    scene.id
                )));
            }
        }
        Ok(())
    }

    /// Embed every detection as nodes and every human-object pair as an
    /// edge, on the tape.
    pub fn build_graph_batch(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        detections: &[Detection],
        pairs: &[(usize, usize)],
        width: f64,
        height: f64,
    ) -> Result<GraphBatch> {
        let person = self.vocab.person;
        // Shared appearance projection per detection.
        let mut projected = Vec::with_capacity(detections.len());
        for d in detections {
            let raw = tape.constant(&d.feature);
            projected.push(appearance_project(tape, &self.appearance_proj, &vars.appearance_proj, raw)?);
        }
        let entity_row = |tape: &mut Tape, label: usize| -> Result<Option<VarId>> {
            match vars.transh {
                Some(tv) => Ok(Some(tape.row(tv.entities, label)?)),
                None => Ok(None),
            }
        };

        let mut humans = Vec::new();
        let mut human_nodes = Vec::new();
        for (i, d) in detections.iter().enumerate() {
            if d.label == person {
                let row = entity_row(tape, person)?;
                let node = node_embed(tape, &self.human_fc, vars.human_fc, projected[i], row)?;
                humans.push(i);
                human_nodes.push(node);
            }
        }
        let mut object_nodes = Vec::with_capacity(detections.len());
        for (i, d) in detections.iter().enumerate() {
            let row = entity_row(tape, d.label)?;
            object_nodes.push(node_embed(tape, &self.object_fc, vars.object_fc, projected[i], row)?);
        }

        let mut infos = Vec::with_capacity(pairs.len());
        for &(h_det, o_det) in pairs {
            let human_idx = humans
                .iter()
                .position(|&d| d == h_det)
                .ok_or_else(|| Error::Pairing(format!("pair references non-human {h_det}")))?;
            let sp = spatial_features(
                &detections[h_det].bbox,
                &detections[o_det].bbox,
                width,
                height,
            )?;
            let edge = edge_embed(tape, &self.edge_stack, &vars.edge_stack, &sp)?;
            infos.push(PairInfo {
                human: human_idx,
                object: o_det,
                edge,
                human_score: detections[h_det].score,
                object_score: detections[o_det].score,
            });
        }
        Ok(GraphBatch {
            humans,
            human_nodes,
            object_nodes,
            pairs: infos,
        })
    }
}

/// Edge-conditioned residual message passing. Per iteration, both node sets
/// read messages computed from the iteration's starting values; nodes
/// without partners pass through unchanged.
pub fn message_pass(
    tape: &mut Tape,
    head: &HeadParams,
    vars: &HeadVars,
    batch: &GraphBatch,
    iterations: usize,
) -> Result<(Vec<VarId>, Vec<VarId>)> {
    let mut humans = batch.human_nodes.clone();
    let mut objects = batch.object_nodes.clone();
    for _ in 0..iterations {
        let mut to_human: Vec<Vec<VarId>> = vec![Vec::new(); humans.len()];
        let mut to_object: Vec<Vec<VarId>> = vec![Vec::new(); objects.len()];
        for pair in &batch.pairs {
            let from_object = tape.concat(&[objects[pair.object], pair.edge])?;
            let msg_h = dense_apply(tape, &head.message_to_human, vars.message_to_human, from_object)?;
            to_human[pair.human].push(msg_h);
            let from_human = tape.concat(&[humans[pair.human], pair.edge])?;
            let msg_o = dense_apply(tape, &head.message_to_object, vars.message_to_object, from_human)?;
            to_object[pair.object].push(msg_o);
        }
        let mut next_humans = humans.clone();
        for (i, msgs) in to_human.iter().enumerate() {
            if msgs.is_empty() {
                continue;
            }
            let pooled = tape.mean(msgs)?;
            let joined = tape.concat(&[humans[i], pooled])?;
            let delta = dense_apply(tape, &head.update_human, vars.update_human, joined)?;
            next_humans[i] = tape.add(humans[i], delta)?;
        }
        let mut next_objects = objects.clone();
        for (i, msgs) in to_object.iter().enumerate() {
            if msgs.is_empty() {
                continue;
            }
            let pooled = tape.mean(msgs)?;
            let joined = tape.concat(&[objects[i], pooled])?;
            let delta = dense_apply(tape, &head.update_object, vars.update_object, joined)?;
            next_objects[i] = tape.add(objects[i], delta)?;
        }
        humans = next_humans;
        objects = next_objects;
    }
    Ok((humans, objects))
}

/// Per-pair score variables on the tape: verb probabilities (one per verb)
/// and the interactiveness probability.
#[derive(Debug, Clone, Copy)]
pub struct PairScoreVars {
    pub verb_probs: VarId,
    pub interactiveness: VarId,
}

pub fn pair_scores(
    tape: &mut Tape,
    head: &HeadParams,
    vars: &HeadVars,
    humans: &[VarId],
    objects: &[VarId],
    batch: &GraphBatch,
) -> Result<Vec<PairScoreVars>> {
    let mut out = Vec::with_capacity(batch.pairs.len());
    for pair in &batch.pairs {
        let joined = tape.concat(&[humans[pair.human], objects[pair.object], pair.edge])?;
        let logits = head.verb_classifier.apply(tape, &vars.verb_classifier, joined)?;
        let verb_probs = tape.logistic(logits);
        let ilogit = head.interactiveness.apply(tape, &vars.interactiveness, joined)?;
        let interactiveness = tape.logistic(ilogit);
        out.push(PairScoreVars {
            verb_probs,
            interactiveness: tape.index(interactiveness, 0)?,
        });
    }
    Ok(out)
}

/// Detection prior of a pair: both confidences raised to `lambda` and
/// multiplied. `lambda` is 1 during training and larger at inference to
/// damp overconfident detections.
pub fn pair_prior(human_score: f64, object_score: f64, lambda: f64) -> f64 {
    human_score.powf(lambda) * object_score.powf(lambda)
}

/// Fused action scores: the prior times each verb probability.
pub fn fuse(prior: f64, verb_probs: &[f64]) -> Vec<f64> {
    verb_probs.iter().map(|c| prior * c).collect()
}

/// Final per-pair output: verb probabilities, interactiveness, detection
/// prior, and fused action scores.
#[derive(Debug, Clone)]
pub struct PairOutput {
    pub verb_probs: Vec<f64>,
    pub interactiveness: f64,
    pub prior: f64,
    pub fused: Vec<f64>,
}

/// Binary training targets: one verb row per pair plus the pair-existence
/// bit, which is the OR of its row.
#[derive(Debug, Clone)]
pub struct Targets {
    pub verbs: Vec<Vec<bool>>,
    pub pair_exists: Vec<bool>,
}

/// Boxes and label of a candidate pair, for target assignment.
#[derive(Debug, Clone, Copy)]
pub struct PairBoxes {
    pub human: BBox,
    pub object: BBox,
    pub object_label: usize,
}

/// A pair receives a ground-truth verb when some annotation shares its
/// object label and both boxes overlap the annotation's beyond the IoU
/// threshold.
pub fn assign_targets(
    pairs: &[PairBoxes],
    ground_truth: &[GroundTruthHoi],
    num_verbs: usize,
    iou_threshold: f64,
) -> Targets {
    let mut verbs = vec![vec![false; num_verbs]; pairs.len()];
    for (j, pair) in pairs.iter().enumerate() {
        for gt in ground_truth {
            if gt.object_label != pair.object_label {
                continue;
            }
            if pair.human.iou(&gt.human_box) > iou_threshold
                && pair.object.iou(&gt.object_box) > iou_threshold
            {
                for &v in &gt.verbs {
                    if v < num_verbs {
                        verbs[j][v] = true;
                    }
                }
            }
        }
    }
    let pair_exists = verbs.iter().map(|row| row.iter().any(|&b| b)).collect();
    Targets { verbs, pair_exists }
}

/// Sum of the three objective components.
pub fn total_loss(translational: f64, interactiveness: f64, verbs: f64) -> f64 {
    translational + interactiveness + verbs
}

/// Per-scene focal loss terms for training, left unsummed on the tape.
#[derive(Debug, Default)]
pub struct SceneLossTerms {
    pub interactiveness: Vec<VarId>,
    pub verbs: Vec<VarId>,
    pub num_pairs: usize,
}

/// Knobs shared by the training forward pass and inference.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSettings {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub message_iterations: usize,
    pub focal_beta: f64,
    pub focal_gamma: f64,
    pub lambda: f64,
    pub assign_iou: f64,
}

/// Training-mode forward pass of one scene: build the graph, score pairs,
/// assign targets, and emit one focal term per pair (interactiveness) and
/// per pair-verb entry (fused action score against the verb target).
pub fn scene_loss_terms(
    tape: &mut Tape,
    model: &HoiModel,
    vars: &ModelVars,
    scene: &Scene,
    settings: &ForwardSettings,
) -> Result<SceneLossTerms> {
    model.check_scene(scene)?;
    let dets = filter_detections(&scene.detections, settings.score_threshold);
    let dets = nms(&dets, settings.nms_iou);
    let pairs = make_pairs(&dets, model.vocab.person);
    if pairs.is_empty() {
        return Ok(SceneLossTerms::default());
    }
    let batch = model.build_graph_batch(
        tape,
        vars,
        &dets,
        &pairs,
        scene.width as f64,
        scene.height as f64,
    )?;
    let (humans, objects) = message_pass(tape, &model.head, &vars.head, &batch, settings.message_iterations)?;
    let scores = pair_scores(tape, &model.head, &vars.head, &humans, &objects, &batch)?;

    let pair_boxes: Vec<PairBoxes> = batch
        .pairs
        .iter()
        .map(|p| PairBoxes {
            human: dets[batch.humans[p.human]].bbox,
            object: dets[p.object].bbox,
            object_label: dets[p.object].label,
        })
        .collect();
    let targets = assign_targets(&pair_boxes, &scene.ground_truth, model.vocab.num_verbs(), settings.assign_iou);

    let mut terms = SceneLossTerms {
        num_pairs: batch.pairs.len(),
        ..Default::default()
    };
    for (j, (pair, score)) in batch.pairs.iter().zip(&scores).enumerate() {
        let w_term = tape.focal(
            score.interactiveness,
            targets.pair_exists[j],
            settings.focal_beta,
            settings.focal_gamma,
        )?;
        terms.interactiveness.push(w_term);
        let prior = pair_prior(pair.human_score, pair.object_score, settings.lambda);
        for v in 0..model.vocab.num_verbs() {
            let c = tape.index(score.verb_probs, v)?;
            let fused = tape.scale_const(c, prior);
            let term = tape.focal(fused, targets.verbs[j][v], settings.focal_beta, settings.focal_gamma)?;
            terms.verbs.push(term);
        }
    }
    Ok(terms)
}

/// One emitted interaction hypothesis.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_label: usize,
    pub verb: usize,
    pub score: f64,
}

/// Inference settings; `lambda` defaults to the overconfidence-damping
/// exponent and predictions below the floor are dropped.
#[derive(Debug, Clone, Copy)]
pub struct InferSettings {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub message_iterations: usize,
    pub lambda: f64,
    pub top_k: usize,
    pub score_floor: f64,
}

impl Default for InferSettings {
    fn default() -> Self {
        InferSettings {
            score_threshold: 0.2,
            nms_iou: 0.5,
            message_iterations: 1,
            lambda: 2.8,
            top_k: 100,
            score_floor: 1e-4,
        }
    }
}

/// Full inference pipeline for one scene: filter, suppress, pair, embed,
/// pass messages, score, fuse with the detection prior, and rank.
pub fn infer(model: &HoiModel, scene: &Scene, settings: &InferSettings) -> Result<Vec<Prediction>> {
    model.check_scene(scene)?;
    let dets = filter_detections(&scene.detections, settings.score_threshold);
    let dets = nms(&dets, settings.nms_iou);
    let pairs = make_pairs(&dets, model.vocab.person);
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let batch = model.build_graph_batch(
        &mut tape,
        &vars,
        &dets,
        &pairs,
        scene.width as f64,
        scene.height as f64,
    )?;
    let (humans, objects) = message_pass(&mut tape, &model.head, &vars.head, &batch, settings.message_iterations)?;
    let scores = pair_scores(&mut tape, &model.head, &vars.head, &humans, &objects, &batch)?;

    let mut predictions = Vec::new();
    for (pair, score) in batch.pairs.iter().zip(&scores) {
        let prior = pair_prior(pair.human_score, pair.object_score, settings.lambda);
        let verb_probs = tape.value(score.verb_probs).to_vec();
        let output = PairOutput {
            fused: fuse(prior, &verb_probs),
            interactiveness: tape.scalar(score.interactiveness),
            prior,
            verb_probs,
        };
        let human_box = dets[batch.humans[pair.human]].bbox;
        let object_box = dets[pair.object].bbox;
        let object_label = dets[pair.object].label;
        for (verb, &fused) in output.fused.iter().enumerate() {
            if fused > settings.score_floor {
                predictions.push(Prediction {
                    human_box,
                    object_box,
                    object_label,
                    verb,
                    score: fused,
                });
            }
        }
    }
    // Stable sort: ties keep pair-then-verb order, so output is deterministic.
    predictions.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    predictions.truncate(settings.top_k);
    Ok(predictions)
}
