//! Finite-difference verification of every trainable path, from single
//! layers up to the full per-scene objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graphrep::{BBox, Detection, GroundTruthHoi, Scene};
use crate::head::{scene_loss_terms, ForwardSettings, HoiModel};
use crate::kge::{init_transh, margin_loss_on_tape, Triplet, Vocab};
use crate::num::{grad_check, Activation, DenseLayer, DenseStack, Param, Tape};

/// Tolerance every check must meet.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Step used for central differences.
pub const GRAD_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub seeds: usize,
    pub max_rel_err: f64,
}

fn stack_params(stack: &mut DenseStack) -> Vec<&mut Param> {
    stack
        .layers
        .iter_mut()
        .flat_map(|l| [&mut l.weights, &mut l.bias])
        .collect()
}

/// Dense stack with rectifier hidden layers, loss = squared norm of output.
fn check_dense_stack(seeds: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stack = DenseStack::init_mlp(&[3, 4, 2], &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let rel = grad_check(
            &mut stack,
            |s, acc| {
                let mut tape = Tape::new();
                let vars = s.bind(&mut tape);
                let xv = tape.constant(&x);
                let y = s.apply(&mut tape, &vars, xv)?;
                let loss = tape.dot(y, y)?;
                let value = tape.scalar(loss);
                if acc {
                    tape.backward(loss)?;
                    s.accumulate(&tape, &vars);
                }
                Ok(value)
            },
            stack_params,
            GRAD_EPS,
        )?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Logistic into the focal loss, both label branches.
fn check_focal_chain(seeds: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = DenseLayer::init(1, 2, Activation::None, &mut rng);
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = seed % 2 == 0;
        let rel = grad_check(
            &mut layer,
            |l, acc| {
                let mut tape = Tape::new();
                let vars = l.bind(&mut tape);
                let xv = tape.constant(&x);
                let logit = crate::num::dense_apply(&mut tape, l, vars, xv)?;
                let prob = tape.logistic(logit);
                let p = tape.index(prob, 0)?;
                let loss = tape.focal(p, label, 0.5, 0.2)?;
                let value = tape.scalar(loss);
                if acc {
                    tape.backward(loss)?;
                    l.accumulate(&tape, vars);
                }
                Ok(value)
            },
            |l| vec![&mut l.weights, &mut l.bias],
            GRAD_EPS,
        )?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Margin-ranking loss through the triplet score.
fn check_margin_ranking(seeds: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    let pos = [Triplet::new(0, 0, 1), Triplet::new(0, 1, 2)];
    let neg = [Triplet::new(0, 2, 1), Triplet::new(0, 0, 3)];
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_transh(4, 3, 5, &mut rng)?;
        let rel = grad_check(
            &mut params,
            |p, acc| {
                let mut tape = Tape::new();
                let vars = p.bind(&mut tape);
                let loss = margin_loss_on_tape(&mut tape, vars, &pos, &neg, 4.0)?;
                let value = tape.scalar(loss);
                if acc {
                    tape.backward(loss)?;
                    p.accumulate(&tape, vars);
                }
                Ok(value)
            },
            |p| vec![&mut p.entities, &mut p.normals, &mut p.translations],
            GRAD_EPS,
        )?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn toy_vocab() -> Vocab {
    Vocab::new(
        vec!["person".into(), "obj01".into(), "obj02".into()],
        vec!["verb00".into(), "verb01".into()],
        0,
    )
    .expect("valid toy vocab")
}

fn toy_scene(rng: &mut ChaCha8Rng, feature_dim: usize) -> Scene {
    let feature = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    // Two humans and two objects; boxes overlap enough for varied targets.
    let detections = vec![
        Detection {
            bbox: BBox::new(10.0, 10.0, 30.0, 40.0).unwrap(),
            score: 0.9,
            label: 0,
            feature: feature(rng),
        },
        Detection {
            bbox: BBox::new(50.0, 10.0, 70.0, 40.0).unwrap(),
            score: 0.8,
            label: 0,
            feature: feature(rng),
        },
        Detection {
            bbox: BBox::new(25.0, 20.0, 40.0, 35.0).unwrap(),
            score: 0.7,
            label: 1,
            feature: feature(rng),
        },
        Detection {
            bbox: BBox::new(55.0, 25.0, 75.0, 45.0).unwrap(),
            score: 0.6,
            label: 2,
            feature: feature(rng),
        },
    ];
    let ground_truth = vec![
        GroundTruthHoi {
            human_box: BBox::new(10.0, 10.0, 30.0, 40.0).unwrap(),
            object_box: BBox::new(25.0, 20.0, 40.0, 35.0).unwrap(),
            object_label: 1,
            verbs: vec![0],
        },
        GroundTruthHoi {
            human_box: BBox::new(50.0, 10.0, 70.0, 40.0).unwrap(),
            object_box: BBox::new(55.0, 25.0, 75.0, 45.0).unwrap(),
            object_label: 2,
            verbs: vec![1],
        },
    ];
    Scene {
        id: "gradcheck".into(),
        width: 100,
        height: 60,
        detections,
        ground_truth,
    }
}

/// The full per-scene objective on a 2-human/2-object batch: node and edge
/// embeddings, message passing, pair scores, focal terms, plus the
/// margin-ranking loss, against every model parameter.
fn check_full_objective(seeds: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    let settings = ForwardSettings {
        score_threshold: 0.2,
        nms_iou: 0.5,
        message_iterations: 1,
        focal_beta: 0.5,
        focal_gamma: 0.2,
        lambda: 1.0,
        assign_iou: 0.5,
    };
    let pos = [Triplet::new(0, 0, 1), Triplet::new(0, 1, 2)];
    let neg = [Triplet::new(0, 1, 1), Triplet::new(0, 0, 2)];
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut model = HoiModel::init(toy_vocab(), 3, 2, 4, 3, &mut rng)?;
        let scene = toy_scene(&mut rng, 3);
        let rel = grad_check(
            &mut model,
            |m, acc| {
                let mut tape = Tape::new();
                let vars = m.bind(&mut tape);
                let terms = scene_loss_terms(&mut tape, m, &vars, &scene, &settings)?;
                let mut parts = terms.interactiveness.clone();
                parts.extend(terms.verbs.iter().copied());
                let tvars = vars.transh.expect("toy model keeps the translational part");
                parts.push(margin_loss_on_tape(&mut tape, tvars, &pos, &neg, 4.0)?);
                let total = tape.sum_scalars(&parts)?;
                let value = tape.scalar(total);
                if acc {
                    tape.backward(total)?;
                    m.accumulate(&tape, &vars);
                }
                Ok(value)
            },
            |m| m.named_params_mut().into_iter().map(|(_, _, p)| p).collect(),
            GRAD_EPS,
        )?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Node embedding path alone: projection, entity row, fused layer.
fn check_node_embedding(seeds: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut model = HoiModel::init(toy_vocab(), 3, 2, 4, 3, &mut rng)?;
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rel = grad_check(
            &mut model,
            |m, acc| {
                let mut tape = Tape::new();
                let vars = m.bind(&mut tape);
                let x = tape.constant(&raw);
                let projected =
                    crate::graphrep::appearance_project(&mut tape, &m.appearance_proj, &vars.appearance_proj, x)?;
                let row = tape.row(vars.transh.unwrap().entities, 1)?;
                let node = crate::graphrep::node_embed(
                    &mut tape,
                    &m.object_fc,
                    vars.object_fc,
                    projected,
                    Some(row),
                )?;
                let loss = tape.dot(node, node)?;
                let value = tape.scalar(loss);
                if acc {
                    tape.backward(loss)?;
                    m.accumulate(&tape, &vars);
                }
                Ok(value)
            },
            |m| m.named_params_mut().into_iter().map(|(_, _, p)| p).collect(),
            GRAD_EPS,
        )?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Edge stack alone, squared-norm loss over a synthetic spatial vector.
fn check_edge_embedding(seeds: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let mut stack = DenseStack::init_mlp(&[crate::graphrep::SPATIAL_DIM, 4, 4, 3], &mut rng);
        let mut sp = [0.0; crate::graphrep::SPATIAL_DIM];
        for v in sp.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let rel = grad_check(
            &mut stack,
            |s, acc| {
                let mut tape = Tape::new();
                let vars = s.bind(&mut tape);
                let e = crate::graphrep::edge_embed(&mut tape, s, &vars, &sp)?;
                let loss = tape.dot(e, e)?;
                let value = tape.scalar(loss);
                if acc {
                    tape.backward(loss)?;
                    s.accumulate(&tape, &vars);
                }
                Ok(value)
            },
            stack_params,
            GRAD_EPS,
        )?;
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Run every gradient check. Each case reports its worst relative error
/// across its seeds; all must come in at or under [`GRAD_TOLERANCE`].
pub fn run_gradient_suite() -> Result<Vec<GradCheckCase>> {
    Ok(vec![
        GradCheckCase {
            name: "dense_stack",
            seeds: 100,
            max_rel_err: check_dense_stack(100)?,
        },
        GradCheckCase {
            name: "focal_chain",
            seeds: 100,
            max_rel_err: check_focal_chain(100)?,
        },
        GradCheckCase {
            name: "margin_ranking",
            seeds: 100,
            max_rel_err: check_margin_ranking(100)?,
        },
        GradCheckCase {
            name: "node_embedding",
            seeds: 20,
            max_rel_err: check_node_embedding(20)?,
        },
        GradCheckCase {
            name: "edge_embedding",
            seeds: 20,
            max_rel_err: check_edge_embedding(20)?,
        },
        GradCheckCase {
            name: "message_passing_objective",
            seeds: 3,
            max_rel_err: check_full_objective(3)?,
        },
    ])
}
