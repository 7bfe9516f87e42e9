//! Stage-two input processing: detection filtering, class-wise NMS,
//! human-object pairing, spatial edge features, and the fused
//! appearance-plus-entity node embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{dense_apply, DenseLayer, DenseStack, DenseStackVars, DenseVars, Tape, VarId};

/// Axis-aligned box with upper-left and lower-right corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x1, self.y1, self.x2, self.y2];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Geometry(format!("invalid box corners {vals:?}")));
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::Geometry(format!(
                "degenerate box [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() * self.width() + self.height() * self.height()).sqrt()
    }

    /// Intersection-over-union; 0 for disjoint boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let iy = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// One detected instance with its appearance feature vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub label: usize,
    pub feature: Vec<f64>,
}

/// A ground-truth interaction: localized human and object plus verb ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthHoi {
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_label: usize,
    pub verbs: Vec<usize>,
}

/// One annotated image worth of detections and ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthHoi>,
}

/// Number of entries in a spatial pair descriptor.
pub const SPATIAL_DIM: usize = 18;

/// One human-object pair inside a [`GraphBatch`].
#[derive(Debug, Clone, Copy)]
pub struct PairInfo {
    /// Index into the batch's human node list.
    pub human: usize,
    /// Index into the batch's object node list (one per detection).
    pub object: usize,
    pub edge: VarId,
    pub human_score: f64,
    pub object_score: f64,
}

/// Node and edge embeddings of one scene, recorded on a tape. Humans are
/// the person-labelled detections; every detection also embeds as an
/// object node.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    /// Detection index of each human node.
    pub humans: Vec<usize>,
    pub human_nodes: Vec<VarId>,
    /// One object node per detection, aligned with the detection list.
    pub object_nodes: Vec<VarId>,
    pub pairs: Vec<PairInfo>,
}

/// Keep detections scoring at or above the threshold. A score exactly at
/// the threshold survives: only strictly lower ones are dropped.
pub fn filter_detections(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.score >= threshold)
        .cloned()
        .collect()
}

/// Class-wise greedy non-maximum suppression. Within each label, higher
/// scores win and suppress same-label boxes overlapping above the IoU
/// threshold; equal scores keep input order. Survivors come back in their
/// original input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    // Stable sort keeps input order among equal scores.
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut keep = vec![false; detections.len()];
    for (oi, &i) in order.iter().enumerate() {
        let mut suppressed = false;
        for &j in &order[..oi] {
            if keep[j]
                && detections[j].label == detections[i].label
                && detections[j].bbox.iou(&detections[i].bbox) > iou_threshold
            {
                suppressed = true;
                break;
            }
        }
        keep[i] = !suppressed;
    }
    detections
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(d, _)| d.clone())
        .collect()
}

/// All (human index, object index) pairs: humans are detections labelled as
/// the person class; every detection, persons included, can be the object.
/// A detection is never paired with itself.
pub fn make_pairs(detections: &[Detection], person_label: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (h, dh) in detections.iter().enumerate() {
        if dh.label != person_label {
            continue;
        }
        for o in 0..detections.len() {
            if o != h {
                pairs.push((h, o));
            }
        }
    }
    pairs
}

/// The 18-entry spatial descriptor of a human-object box pair, normalized
/// by the image dimensions:
/// centers and sizes of both boxes (8), center offsets in human-box units
/// (2), log width/height/area ratios (3), IoU (1), image-relative areas
/// (2), and the two aspect ratios (2).
pub fn spatial_features(human: &BBox, object: &BBox, width: f64, height: f64) -> Result<[f64; SPATIAL_DIM]> {
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::Geometry(format!(
            "image dimensions {width}x{height} must be positive"
        )));
    }
    human.validate()?;
    object.validate()?;
    let (cxh, cyh) = human.center();
    let (cxo, cyo) = object.center();
    let (wh, hh) = (human.width(), human.height());
    let (wo, ho) = (object.width(), object.height());
    Ok([
        cxh / width,
        cyh / height,
        wh / width,
        hh / height,
        cxo / width,
        cyo / height,
        wo / width,
        ho / height,
        (cxo - cxh) / wh,
        (cyo - cyh) / hh,
        (wo / wh).ln(),
        (ho / hh).ln(),
        (object.area() / human.area()).ln(),
        human.iou(object),
        human.area() / (width * height),
        object.area() / (width * height),
        wh / hh,
        wo / ho,
    ])
}

/// Project a raw appearance vector through the shared two-layer stack.
pub fn appearance_project(
    tape: &mut Tape,
    stack: &DenseStack,
    vars: &DenseStackVars,
    raw: VarId,
) -> Result<VarId> {
    stack.apply(tape, vars, raw)
}

/// Fused node embedding: rectified linear map of the appearance projection
/// concatenated with the entity embedding row. Humans pass the person row;
/// objects pass their label's row. With no entity source (embedding size 0)
/// the node is appearance-only.
pub fn node_embed(
    tape: &mut Tape,
    fc: &DenseLayer,
    fc_vars: DenseVars,
    appearance: VarId,
    entity_row: Option<VarId>,
) -> Result<VarId> {
    let input = match entity_row {
        Some(row) => tape.concat(&[appearance, row])?,
        None => appearance,
    };
    dense_apply(tape, fc, fc_vars, input)
}

/// Spatial descriptor through the three-layer edge stack.
pub fn edge_embed(
    tape: &mut Tape,
    stack: &DenseStack,
    vars: &DenseStackVars,
    spatial: &[f64; SPATIAL_DIM],
) -> Result<VarId> {
    let input = tape.constant(spatial);
    stack.apply(tape, vars, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{Activation, Matrix};

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, label: usize) -> Detection {
        Detection {
            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
            score,
            label,
            feature: vec![],
        }
    }

    #[test]
    fn filter_keeps_boundary_score() {
        let dets = vec![
            det(0.0, 0.0, 1.0, 1.0, 0.19, 0),
            det(0.0, 0.0, 1.0, 1.0, 0.20, 0),
            det(0.0, 0.0, 1.0, 1.0, 0.9, 1),
        ];
        let kept = filter_detections(&dets, 0.2);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.20);
        assert_eq!(filter_detections(&dets, 0.0).len(), 3);
        let all_above = vec![det(0.0, 0.0, 1.0, 1.0, 0.5, 0)];
        assert_eq!(filter_detections(&all_above, 0.2).len(), 1);
    }

    #[test]
    fn nms_single_box_kept() {
        let dets = vec![det(0.0, 0.0, 10.0, 10.0, 0.5, 2)];
        assert_eq!(nms(&dets, 0.5).len(), 1);
    }

    #[test]
    fn nms_suppresses_same_label_overlap() {
        // IoU of [0,0,10,10] and [2,0,12,10]: inter 80, union 120 -> 2/3.
        let dets = vec![
            det(2.0, 0.0, 12.0, 10.0, 0.8, 1),
            det(0.0, 0.0, 10.0, 10.0, 0.9, 1),
        ];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_different_labels() {
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 0.9, 1),
            det(1.0, 0.0, 11.0, 10.0, 0.8, 2),
        ];
        assert_eq!(nms(&dets, 0.5).len(), 2);
    }

    #[test]
    fn make_pairs_enumerates_humans_times_others() {
        // labels [person, person, cup] -> (0,1),(0,2),(1,0),(1,2)
        let dets = vec![
            det(0.0, 0.0, 1.0, 1.0, 0.9, 0),
            det(2.0, 0.0, 3.0, 1.0, 0.9, 0),
            det(4.0, 0.0, 5.0, 1.0, 0.9, 3),
        ];
        let pairs = make_pairs(&dets, 0);
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 0), (1, 2)]);

        let two = vec![
            det(0.0, 0.0, 1.0, 1.0, 0.9, 0),
            det(2.0, 0.0, 3.0, 1.0, 0.9, 3),
        ];
        assert_eq!(make_pairs(&two, 0).len(), 1);

        let none = vec![
            det(0.0, 0.0, 1.0, 1.0, 0.9, 3),
            det(2.0, 0.0, 3.0, 1.0, 0.9, 4),
        ];
        assert!(make_pairs(&none, 0).is_empty());
    }

    #[test]
    fn spatial_identical_boxes() {
        let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let f = spatial_features(&b, &b, 8.0, 8.0).unwrap();
        assert_eq!(f[8], 0.0);
        assert_eq!(f[9], 0.0);
        assert_eq!(f[10], 0.0);
        assert_eq!(f[11], 0.0);
        assert_eq!(f[12], 0.0);
        assert_eq!(f[13], 1.0);
    }

    #[test]
    fn spatial_hand_oracle() {
        let h = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let o = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let f = spatial_features(&h, &o, 4.0, 4.0).unwrap();
        let expect = [
            0.25,
            0.25,
            0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            0.5,
            0.0,
            0.0,
            0.0,
            1.0 / 7.0,
            0.25,
            0.25,
            1.0,
            1.0,
        ];
        for (i, (a, b)) in f.iter().zip(&expect).enumerate() {
            assert!((a - b).abs() < 1e-12, "entry {i}: {a} vs {b}");
        }
    }

    #[test]
    fn spatial_log_ratios_double_size() {
        let h = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let o = BBox::new(4.0, 4.0, 8.0, 8.0).unwrap();
        let f = spatial_features(&h, &o, 16.0, 16.0).unwrap();
        assert!((f[10] - 2f64.ln()).abs() < 1e-12);
        assert!((f[11] - 2f64.ln()).abs() < 1e-12);
        assert!((f[12] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn spatial_rejects_degenerate() {
        let ok = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert!(BBox::new(2.0, 0.0, 2.0, 2.0).is_err());
        assert!(spatial_features(&ok, &ok, 0.0, 4.0).is_err());
    }

    fn stack(layer_defs: &[(Vec<Vec<f64>>, Vec<f64>, Activation)]) -> DenseStack {
        let layers = layer_defs
            .iter()
            .map(|(w, b, act)| {
                let rows = w.len();
                let cols = w[0].len();
                let data: Vec<f64> = w.iter().flatten().copied().collect();
                DenseLayer::new(
                    Matrix::new(rows, cols, data).unwrap(),
                    Matrix::column(b).unwrap(),
                    *act,
                )
                .unwrap()
            })
            .collect();
        DenseStack::new(layers).unwrap()
    }

    #[test]
    fn appearance_projection_hand_oracle() {
        // ([[1,0],[0,1]], b=0, rectifier) then ([[1,1]], b=1): (2,-3) -> 3.
        let s = stack(&[
            (
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![0.0, 0.0],
                Activation::Rectifier,
            ),
            (vec![vec![1.0, 1.0]], vec![1.0], Activation::None),
        ]);
        let mut tape = Tape::new();
        let vars = s.bind(&mut tape);
        let x = tape.constant(&[2.0, -3.0]);
        let y = appearance_project(&mut tape, &s, &vars, x).unwrap();
        assert_eq!(tape.value(y), &[3.0]);
    }

    #[test]
    fn appearance_projection_zero_weights() {
        let s = stack(&[
            (vec![vec![0.0, 0.0]; 2], vec![0.0, 0.0], Activation::Rectifier),
            (vec![vec![0.0, 0.0]], vec![0.0], Activation::None),
        ]);
        let mut tape = Tape::new();
        let vars = s.bind(&mut tape);
        let x = tape.constant(&[1.0, 2.0]);
        let y = appearance_project(&mut tape, &s, &vars, x).unwrap();
        assert_eq!(tape.value(y), &[0.0]);
        assert_eq!(tape.shape(y).0, s.out_dim());
    }

    #[test]
    fn node_embed_hand_oracle() {
        // f=(1), ent=(2), W=[[1,1]], b=(0.5) -> rectifier(3.5) = 3.5
        let fc = DenseLayer::new(
            Matrix::new(1, 2, vec![1.0, 1.0]).unwrap(),
            Matrix::column(&[0.5]).unwrap(),
            Activation::Rectifier,
        )
        .unwrap();
        let mut tape = Tape::new();
        let vars = fc.bind(&mut tape);
        let f = tape.constant(&[1.0]);
        let ent = tape.constant(&[2.0]);
        let y = node_embed(&mut tape, &fc, vars, f, Some(ent)).unwrap();
        assert_eq!(tape.value(y), &[3.5]);
    }

    #[test]
    fn node_embed_zero_weights_gives_zero() {
        let fc = DenseLayer::zeros(3, 4, Activation::Rectifier);
        let mut tape = Tape::new();
        let vars = fc.bind(&mut tape);
        let f = tape.constant(&[1.0, -2.0]);
        let ent = tape.constant(&[0.5, 0.5]);
        let y = node_embed(&mut tape, &fc, vars, f, Some(ent)).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn node_embed_outputs_nonnegative() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let fc = DenseLayer::init(6, 5, Activation::Rectifier, &mut rng);
            let mut tape = Tape::new();
            let vars = fc.bind(&mut tape);
            use rand::Rng;
            let f_data: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let e_data: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = tape.constant(&f_data);
            let ent = tape.constant(&e_data);
            let y = node_embed(&mut tape, &fc, vars, f, Some(ent)).unwrap();
            assert!(tape.value(y).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn edge_embed_shapes_and_zero_case() {
        let s = DenseStack::new(vec![
            DenseLayer::zeros(4, SPATIAL_DIM, Activation::Rectifier),
            DenseLayer::zeros(4, 4, Activation::Rectifier),
            DenseLayer::zeros(2, 4, Activation::None),
        ])
        .unwrap();
        let mut tape = Tape::new();
        let vars = s.bind(&mut tape);
        let sp = [0.5; SPATIAL_DIM];
        let y = edge_embed(&mut tape, &s, &vars, &sp).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);
        assert_eq!(tape.shape(y).0, 2);
    }

    proptest::proptest! {
        #[test]
        fn nms_order_independent_for_distinct_scores(seed in 0u64..400) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..12);
            let mut dets = Vec::new();
            for i in 0..n {
                let x = rng.random_range(0.0..40.0);
                let y = rng.random_range(0.0..40.0);
                let w = rng.random_range(5.0..25.0);
                let h = rng.random_range(5.0..25.0);
                dets.push(det(x, y, x + w, y + h, (i + 1) as f64 / (n + 1) as f64, rng.random_range(0..3)));
            }
            let kept = nms(&dets, 0.5);
            // Reverse the input order; the kept set must be unchanged.
            let mut reversed: Vec<Detection> = dets.clone();
            reversed.reverse();
            let kept_rev = nms(&reversed, 0.5);
            let key = |d: &Detection| (d.score.to_bits(), d.label);
            let mut a: Vec<_> = kept.iter().map(key).collect();
            let mut b: Vec<_> = kept_rev.iter().map(key).collect();
            a.sort_unstable();
            b.sort_unstable();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn pair_count_matches_bruteforce(seed in 0u64..400) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(0..10);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let dets: Vec<Detection> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| det(i as f64 * 10.0, 0.0, i as f64 * 10.0 + 5.0, 5.0, 0.9, l))
                .collect();
            let pairs = make_pairs(&dets, 0);
            let mut expected = 0usize;
            for h in 0..n {
                for o in 0..n {
                    if labels[h] == 0 && h != o {
                        expected += 1;
                    }
                }
            }
            proptest::prop_assert_eq!(pairs.len(), expected);
            let humans = labels.iter().filter(|&&l| l == 0).count();
            proptest::prop_assert_eq!(expected, humans * n.saturating_sub(1));
        }

        #[test]
        fn spatial_invariant_to_uniform_rescale(seed in 0u64..400, scale in 0.1f64..8.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rand_box = |rng: &mut rand_chacha::ChaCha8Rng| {
                let x = rng.random_range(0.0..50.0);
                let y = rng.random_range(0.0..50.0);
                let w = rng.random_range(1.0..30.0);
                let h = rng.random_range(1.0..30.0);
                BBox::new(x, y, x + w, y + h).unwrap()
            };
            let hbox = rand_box(&mut rng);
            let obox = rand_box(&mut rng);
            let base = spatial_features(&hbox, &obox, 100.0, 90.0).unwrap();
            let grow = |b: &BBox| BBox::new(b.x1 * scale, b.y1 * scale, b.x2 * scale, b.y2 * scale).unwrap();
            let scaled = spatial_features(&grow(&hbox), &grow(&obox), 100.0 * scale, 90.0 * scale).unwrap();
            for (i, (a, b)) in base.iter().zip(&scaled).enumerate() {
                proptest::prop_assert!((a - b).abs() < 1e-9, "entry {} changed: {} vs {}", i, a, b);
            }
        }
    }

    #[test]
    fn edge_embed_toy_hand_oracle() {
        // 18 -> 2 -> 1 with hand weights. First layer sums the first two
        // entries (rectified); second layer doubles and subtracts one.
        let mut w1 = vec![vec![0.0; SPATIAL_DIM]; 2];
        w1[0][0] = 1.0;
        w1[0][1] = 1.0;
        w1[1][2] = -1.0;
        let s = stack(&[
            (w1, vec![0.0, 0.0], Activation::Rectifier),
            (vec![vec![2.0, 2.0]], vec![-1.0], Activation::None),
        ]);
        let mut sp = [0.0; SPATIAL_DIM];
        sp[0] = 0.25;
        sp[1] = 0.5;
        sp[2] = 0.75; // negated and rectified away
        let mut tape = Tape::new();
        let vars = s.bind(&mut tape);
        let y = edge_embed(&mut tape, &s, &vars, &sp).unwrap();
        // relu([0.75, -0.75]) = [0.75, 0]; 2*0.75 + 0 - 1 = 0.5
        assert!((tape.value(y)[0] - 0.5).abs() < 1e-15);
    }
}
