//! Joint training: per batch of scenes, the margin-ranking loss of the
//! translational model (fresh negatives each time) plus focal losses over
//! pair interactiveness and fused verb scores, backpropagated together and
//! applied with AdamW. Hyperplane normals are renormalized after every step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::{scene_loss_terms, ForwardSettings, HoiModel};
use crate::kge::{
    constrain, init_transh, margin_loss_on_tape, orthogonality_penalty_on_tape, sample_negatives,
    GoldenSet, TransHParams, Triplet, Vocab, UNIT_NORM_TOL,
};
use crate::num::{adamw_step, AdamWState, Tape};
use crate::pipeline::checkpoint::{Checkpoint, EpochLoss, TrainingMetadata};
use crate::pipeline::config::RunConfig;
use crate::pipeline::dataset::Dataset;

/// Weight of the optional normal/translation alignment penalty.
const ORTHOGONALITY_WEIGHT: f64 = 0.1;

/// Assignment threshold for training targets, matching the evaluation rule.
pub const TARGET_IOU: f64 = 0.5;

/// Scaled component losses of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct BatchRecord {
    pub epoch: usize,
    pub total: f64,
    pub translational: f64,
    pub interactiveness: f64,
    pub verbs: f64,
    pub num_pairs: usize,
}

/// Per-run diagnostics captured during training.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub batches: Vec<BatchRecord>,
    /// Max |norm(w_r) - 1| over relations, after each epoch.
    pub normal_drift: Vec<f64>,
}

pub fn train(config: &RunConfig, data: &Dataset) -> Result<Checkpoint> {
    train_traced(config, data).map(|(ckpt, _)| ckpt)
}

pub fn train_traced(config: &RunConfig, data: &Dataset) -> Result<(Checkpoint, TrainTrace)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = HoiModel::init(
        data.vocab.clone(),
        data.feature_dim,
        config.k,
        config.node_width,
        config.edge_width,
        &mut rng,
    )?;
    train_model(config, data, model, &mut rng)
}

/// Train from an existing model (for staged schedules: pretrain the
/// translational parameters, then continue jointly, optionally frozen).
pub fn train_from_model(
    config: &RunConfig,
    data: &Dataset,
    model: HoiModel,
) -> Result<(Checkpoint, TrainTrace)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    train_model(config, data, model, &mut rng)
}

fn train_model(
    config: &RunConfig,
    data: &Dataset,
    mut model: HoiModel,
    rng: &mut ChaCha8Rng,
) -> Result<(Checkpoint, TrainTrace)> {
    if data.scenes.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    let golden = data.golden_set()?;
    let settings = ForwardSettings {
        score_threshold: config.score_threshold,
        nms_iou: config.nms_iou,
        message_iterations: config.message_iterations,
        focal_beta: config.focal_beta,
        focal_gamma: config.focal_gamma,
        lambda: config.lambda_train,
        assign_iou: TARGET_IOU,
    };

    let mut optimizer: Vec<AdamWState> = model
        .named_params_mut()
        .iter()
        .map(|(_, _, p)| AdamWState::with_defaults(p, config.weight_decay))
        .collect();

    let mut trace = TrainTrace::default();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut tape = Tape::new();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.scenes.len()).collect();
        order.shuffle(rng);
        let mut epoch_pairs = 0usize;
        let mut epoch_sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut epoch_batches = 0usize;

        for batch in order.chunks(config.batch_size) {
            tape.clear();
            let vars = model.bind(&mut tape);
            let mut interactiveness_terms = Vec::new();
            let mut verb_terms = Vec::new();
            let mut positives: Vec<Triplet> = Vec::new();
            let mut batch_pairs = 0usize;
            for &si in batch {
                let scene = &data.scenes[si];
                let terms = scene_loss_terms(&mut tape, &model, &vars, scene, &settings)?;
                batch_pairs += terms.num_pairs;
                interactiveness_terms.extend(terms.interactiveness);
                verb_terms.extend(terms.verbs);
                for gt in &scene.ground_truth {
                    for &verb in &gt.verbs {
                        positives.push(Triplet::new(data.vocab.person, verb, gt.object_label));
                    }
                }
            }

            let translational = match (vars.transh, positives.is_empty()) {
                (Some(tvars), false) => {
                    let negatives = sample_negatives(&golden, &data.vocab, positives.len(), rng)?;
                    let mut lt =
                        margin_loss_on_tape(&mut tape, tvars, &positives, &negatives, config.margin)?;
                    if config.orthogonality_penalty {
                        let penalty = orthogonality_penalty_on_tape(
                            &mut tape,
                            tvars,
                            data.vocab.num_verbs(),
                        )?;
                        let weighted = tape.scale_const(penalty, ORTHOGONALITY_WEIGHT);
                        lt = tape.sum_scalars(&[lt, weighted])?;
                    }
                    Some(lt)
                }
                _ => None,
            };

            let mut parts = Vec::with_capacity(3);
            let lt_value = translational.map(|v| tape.scalar(v)).unwrap_or(0.0);
            let lw_value;
            let lv_value;
            if let Some(v) = translational {
                parts.push(v);
            }
            if interactiveness_terms.is_empty() {
                lw_value = 0.0;
            } else {
                let lw = tape.sum_scalars(&interactiveness_terms)?;
                lw_value = tape.scalar(lw);
                parts.push(lw);
            }
            if verb_terms.is_empty() {
                lv_value = 0.0;
            } else {
                let lv = tape.sum_scalars(&verb_terms)?;
                lv_value = tape.scalar(lv);
                parts.push(lv);
            }
            if parts.is_empty() {
                continue;
            }

            let scale = 1.0 / batch.len() as f64;
            let unscaled = tape.sum_scalars(&parts)?;
            let total = tape.scale_const(unscaled, scale);
            let total_value = tape.scalar(total);
            if !total_value.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}: {total_value}"
                )));
            }
            epoch_pairs += batch_pairs;
            let record = BatchRecord {
                epoch,
                total: total_value,
                translational: lt_value * scale,
                interactiveness: lw_value * scale,
                verbs: lv_value * scale,
                num_pairs: batch_pairs,
            };
            debug_assert!(
                (record.total - (record.translational + record.interactiveness + record.verbs))
                    .abs()
                    < 1e-12
            );

            model.zero_grads();
            tape.backward(total)?;
            model.accumulate(&tape, &vars);
            for ((name, is_kge, param), state) in
                model.named_params_mut().into_iter().zip(optimizer.iter_mut())
            {
                if is_kge && config.freeze_kge {
                    continue;
                }
                adamw_step(&name, param, state, config.learning_rate)?;
            }
            if !config.freeze_kge {
                if let Some(t) = model.transh.as_mut() {
                    constrain(t)?;
                }
            }

            epoch_sums.0 += record.total;
            epoch_sums.1 += record.translational;
            epoch_sums.2 += record.interactiveness;
            epoch_sums.3 += record.verbs;
            epoch_batches += 1;
            trace.batches.push(record);
        }

        if epoch_pairs == 0 {
            return Err(Error::Training(format!(
                "no human-object pairs survived filtering in epoch {epoch}"
            )));
        }
        let denom = epoch_batches.max(1) as f64;
        loss_curve.push(EpochLoss {
            epoch,
            total: epoch_sums.0 / denom,
            translational: epoch_sums.1 / denom,
            interactiveness: epoch_sums.2 / denom,
            verbs: epoch_sums.3 / denom,
        });
        trace.normal_drift.push(normal_drift(&model));
    }

    let metadata = TrainingMetadata {
        epochs_trained: config.epochs,
        loss_curve,
    };
    Ok((Checkpoint::from_model(&model, config, metadata), trace))
}

/// Max deviation of hyperplane normal norms from 1; 0 without a
/// translational model.
pub fn normal_drift(model: &HoiModel) -> f64 {
    model
        .transh
        .as_ref()
        .map(|t| {
            (0..t.num_relations())
                .map(|r| {
                    let norm: f64 = t.normals.value.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    (norm - 1.0).abs()
                })
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0)
}

/// Margin-ranking training of the translational model alone. Positives are
/// golden occurrences (with multiplicity); negatives are drawn fresh per
/// batch. Used for staged schedules and for link-prediction checks.
pub fn pretrain_kge(
    config: &RunConfig,
    positives: &[Triplet],
    golden: &GoldenSet,
    vocab: &Vocab,
) -> Result<TransHParams> {
    config.validate()?;
    if config.k == 0 {
        return Err(Error::Config("embedding size 0 has no translational model".into()));
    }
    if positives.is_empty() {
        return Err(Error::Training("no golden occurrences to train on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_transh(vocab.num_objects(), vocab.num_verbs(), config.k, &mut rng)?;
    let mut optimizer = [
        AdamWState::with_defaults(&params.entities, config.weight_decay),
        AdamWState::with_defaults(&params.normals, config.weight_decay),
        AdamWState::with_defaults(&params.translations, config.weight_decay),
    ];
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..positives.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Triplet> = chunk.iter().map(|&i| positives[i]).collect();
            let negatives = sample_negatives(golden, vocab, batch.len(), &mut rng)?;
            tape.clear();
            let vars = params.bind(&mut tape);
            let loss = margin_loss_on_tape(&mut tape, vars, &batch, &negatives, config.margin)?;
            let scaled = tape.scale_const(loss, 1.0 / batch.len() as f64);
            params.zero_grad();
            tape.backward(scaled)?;
            params.accumulate(&tape, vars);
            adamw_step("kge.entities", &mut params.entities, &mut optimizer[0], config.learning_rate)?;
            adamw_step("kge.normals", &mut params.normals, &mut optimizer[1], config.learning_rate)?;
            adamw_step(
                "kge.translations",
                &mut params.translations,
                &mut optimizer[2],
                config.learning_rate,
            )?;
            constrain(&mut params)?;
        }
    }
    debug_assert!({
        let drift = (0..params.num_relations())
            .map(|r| {
                let n: f64 = params.normals.value.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max);
        drift <= UNIT_NORM_TOL
    });
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::dataset::class_counts_from_scenes;
    use crate::synthgen::{corrupt_to_detections, generate_scenes, generate_world, DetectionNoise};

    fn tiny_dataset(scenes: usize, seed: u64) -> Dataset {
        let world = generate_world(5, 5, 4, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = generate_scenes(&world, scenes, &mut rng).unwrap();
        let noise = DetectionNoise {
            box_jitter: 3.0,
            miss_rate: 0.05,
            false_positive_rate: 0.1,
            label_flip_rate: 0.0,
        };
        let scenes: Vec<_> = samples
            .iter()
            .map(|s| corrupt_to_detections(s, &noise, &mut rng).unwrap())
            .collect();
        Dataset {
            vocab: world.vocab.clone(),
            feature_dim: world.feature_dim,
            splits: crate::hoieval::SplitTable::new(class_counts_from_scenes(&scenes)),
            scenes,
        }
    }

    fn tiny_config() -> RunConfig {
        RunConfig {
            k: 4,
            node_width: 8,
            edge_width: 8,
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 3,
            ..RunConfig::default()
        }
    }

    #[test]
    fn one_epoch_trains_and_checkpoints() {
        let data = tiny_dataset(6, 1);
        let config = RunConfig { epochs: 1, ..tiny_config() };
        let (ckpt, trace) = train_traced(&config, &data).unwrap();
        assert_eq!(ckpt.metadata.epochs_trained, 1);
        assert_eq!(ckpt.metadata.loss_curve.len(), 1);
        assert!(ckpt.metadata.loss_curve[0].total.is_finite());
        assert!(!trace.batches.is_empty());
        let model = ckpt.to_model().unwrap();
        assert!(model.transh.is_some());
    }

    #[test]
    fn reported_components_sum_to_total() {
        let data = tiny_dataset(6, 2);
        let (_, trace) = train_traced(&tiny_config(), &data).unwrap();
        for b in &trace.batches {
            let sum = b.translational + b.interactiveness + b.verbs;
            assert!((b.total - sum).abs() < 1e-12, "batch total {} vs {}", b.total, sum);
        }
    }

    #[test]
    fn normals_stay_unit_after_each_epoch() {
        let data = tiny_dataset(8, 3);
        let (_, trace) = train_traced(&tiny_config(), &data).unwrap();
        for (epoch, drift) in trace.normal_drift.iter().enumerate() {
            assert!(*drift <= UNIT_NORM_TOL, "epoch {epoch}: drift {drift}");
        }
    }

    #[test]
    fn freeze_kge_keeps_matrices_bitwise() {
        let data = tiny_dataset(6, 4);
        let config = RunConfig { freeze_kge: true, ..tiny_config() };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fresh = HoiModel::init(
            data.vocab.clone(),
            data.feature_dim,
            config.k,
            config.node_width,
            config.edge_width,
            &mut rng,
        )
        .unwrap();
        let before = fresh.transh.as_ref().unwrap();
        let before_entities: Vec<u64> =
            before.entities.value.data().iter().map(|v| v.to_bits()).collect();
        let before_normals: Vec<u64> =
            before.normals.value.data().iter().map(|v| v.to_bits()).collect();
        let (ckpt, _) = train_traced(&config, &data).unwrap();
        let after = ckpt.transh.as_ref().unwrap();
        let after_entities: Vec<u64> = after.entities.data().iter().map(|v| v.to_bits()).collect();
        let after_normals: Vec<u64> = after.normals.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before_entities, after_entities);
        assert_eq!(before_normals, after_normals);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(6, 5);
        let config = tiny_config();
        let a = train(&config, &data).unwrap();
        let b = train(&config, &data).unwrap();
        let ja = crate::pipeline::checkpoint::checkpoint_to_json(&a).unwrap();
        let jb = crate::pipeline::checkpoint::checkpoint_to_json(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn appearance_only_config_trains() {
        let data = tiny_dataset(6, 6);
        let config = RunConfig { k: 0, ..tiny_config() };
        let (ckpt, trace) = train_traced(&config, &data).unwrap();
        assert!(ckpt.transh.is_none());
        for b in &trace.batches {
            assert_eq!(b.translational, 0.0);
        }
    }

    #[test]
    fn two_phase_pretrain_then_frozen_head_training() {
        let data = tiny_dataset(6, 8);
        let config = tiny_config();
        let golden = data.golden_set().unwrap();
        let occurrences = data.golden_occurrences();
        let pretrain_config = RunConfig { epochs: 30, learning_rate: 0.02, ..config.clone() };
        let pretrained = pretrain_kge(&pretrain_config, &occurrences, &golden, &data.vocab).unwrap();
        let frozen_entities: Vec<u64> =
            pretrained.entities.value.data().iter().map(|v| v.to_bits()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = HoiModel::init(
            data.vocab.clone(),
            data.feature_dim,
            config.k,
            config.node_width,
            config.edge_width,
            &mut rng,
        )
        .unwrap();
        model.transh = Some(pretrained);
        let phase_two = RunConfig { freeze_kge: true, ..config };
        let (ckpt, _) = train_from_model(&phase_two, &data, model).unwrap();
        let after: Vec<u64> = ckpt
            .transh
            .as_ref()
            .unwrap()
            .entities
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(frozen_entities, after, "pretrained matrices survive frozen training");
    }

    #[test]
    fn scenes_without_pairs_fail_training() {
        let mut data = tiny_dataset(3, 7);
        for scene in &mut data.scenes {
            scene.detections.retain(|d| d.label != data.vocab.person);
        }
        let err = train(&tiny_config(), &data).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }
}
