//! Seeded synthetic world and scene generator standing in for a detector:
//! plants verb-object regularities and spatial rules, then corrupts ground
//! truth into realistic detections with calibrated scores.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphrep::{BBox, Detection, GroundTruthHoi, Scene};
use crate::hoieval::{HoiClass, SplitTable};
use crate::kge::Vocab;
use rand::SeedableRng;

/// Geometric rule a verb's human-object pair must satisfy. Distances are in
/// units of the human box diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SpatialRule {
    OverlapRequired,
    Near { max_distance: f64 },
    Far { min_distance: f64 },
    Any,
}

impl SpatialRule {
    pub fn satisfied(&self, human: &BBox, object: &BBox) -> bool {
        match self {
            SpatialRule::OverlapRequired => human.iou(object) > 0.0,
            SpatialRule::Near { max_distance } => {
                center_distance(human, object) <= max_distance * human.diagonal()
            }
            SpatialRule::Far { min_distance } => {
                center_distance(human, object) >= min_distance * human.diagonal()
            }
            SpatialRule::Any => true,
        }
    }
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Default appearance feature dimension at desk scale.
pub const DEFAULT_FEATURE_DIM: usize = 32;

/// Everything that defines a synthetic world: vocabulary, verb-given-object
/// priors, per-verb spatial rules, appearance cluster geometry, and
/// scene-size distribution parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec {
    pub vocab: Vocab,
    /// Row-stochastic over each object's supported verbs; zero elsewhere.
    pub verb_priors: Vec<Vec<f64>>,
    /// One rule per verb.
    pub spatial_rules: Vec<SpatialRule>,
    pub feature_dim: usize,
    /// Per-class appearance cluster centers, `M x feature_dim`.
    pub appearance_centers: Vec<Vec<f64>>,
    pub appearance_noise: f64,
    pub persons_range: (usize, usize),
    pub objects_range: (usize, usize),
    pub frame_width: u32,
    pub frame_height: u32,
    /// P(0), P(1), P(2) verbs for a pair with a freshly placed partner.
    pub verb_count_probs: [f64; 3],
    /// Emission probability for pairs whose geometry is already fixed.
    pub secondary_emission: f64,
}

/// A pristine scene: perfect detections plus its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSample {
    pub scene: Scene,
}

/// Detector-style corruption rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectionNoise {
    /// Gaussian sigma in pixels applied to every box coordinate.
    pub box_jitter: f64,
    pub miss_rate: f64,
    pub false_positive_rate: f64,
    pub label_flip_rate: f64,
}

impl DetectionNoise {
    pub fn none() -> Self {
        DetectionNoise {
            box_jitter: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            label_flip_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("miss_rate", self.miss_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("label_flip_rate", self.label_flip_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        if self.box_jitter < 0.0 || !self.box_jitter.is_finite() {
            return Err(Error::Config("box_jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Deterministically build a world: every object class supports
/// `ceil(sparsity * N)` verbs under a skewed prior, every verb is covered
/// by at least one class, and appearance centers are standard normal.
pub fn generate_world(seed: u64, num_objects: usize, num_verbs: usize, sparsity: f64) -> Result<WorldSpec> {
    if num_objects < 2 || num_verbs < 2 {
        return Err(Error::Config("need at least 2 objects and 2 verbs".into()));
    }
    if !(0.0..=1.0).contains(&sparsity) || sparsity == 0.0 {
        return Err(Error::Config(format!("sparsity {sparsity} outside (0, 1]")));
    }
    let support = ((sparsity * num_verbs as f64).ceil() as usize).clamp(1, num_verbs);
    if support * num_objects < num_verbs {
        return Err(Error::Config(format!(
            "support {support} per class cannot cover {num_verbs} verbs with {num_objects} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let objects: Vec<String> = (0..num_objects)
        .map(|i| if i == 0 { "person".to_string() } else { format!("obj{i:02}") })
        .collect();
    let verbs: Vec<String> = (0..num_verbs).map(|i| format!("verb{i:02}")).collect();
    let vocab = Vocab::new(objects, verbs, 0)?;

    // Supports: round-robin first so every verb has a class, then fill the
    // remaining slots randomly.
    let mut supports: Vec<Vec<usize>> = vec![Vec::new(); num_objects];
    for verb in 0..num_verbs {
        supports[verb % num_objects].push(verb);
    }
    for class_support in supports.iter_mut() {
        while class_support.len() > support {
            // A class over-filled by round-robin sheds extras; they are
            // already covered elsewhere only if some other class holds them,
            // so guard by re-adding to the emptiest class below.
            class_support.pop();
        }
    }
    // Re-cover verbs dropped by the trim above.
    let mut covered = vec![false; num_verbs];
    for s in &supports {
        for &v in s {
            covered[v] = true;
        }
    }
    for (verb, is_covered) in covered.iter().enumerate() {
        if !is_covered {
            let target = (0..num_objects)
                .min_by_key(|&c| supports[c].len())
                .expect("at least one class");
            supports[target].push(verb);
        }
    }
    for class_support in supports.iter_mut() {
        while class_support.len() < support {
            let verb = rng.random_range(0..num_verbs);
            if !class_support.contains(&verb) {
                class_support.push(verb);
            }
        }
    }

    // Skewed priors: weight 1/(rank+1) over a shuffled support order.
    let mut verb_priors = vec![vec![0.0; num_verbs]; num_objects];
    for (class, class_support) in supports.iter().enumerate() {
        let mut order = class_support.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let total: f64 = (0..order.len()).map(|i| 1.0 / (i + 1) as f64).sum();
        for (rank, &verb) in order.iter().enumerate() {
            verb_priors[class][verb] = 1.0 / (rank + 1) as f64 / total;
        }
    }

    let spatial_rules: Vec<SpatialRule> = (0..num_verbs)
        .map(|_| {
            let roll: f64 = rng.random_range(0.0..1.0);
            if roll < 0.30 {
                SpatialRule::OverlapRequired
            } else if roll < 0.65 {
                SpatialRule::Near { max_distance: 1.5 }
            } else if roll < 0.75 {
                SpatialRule::Far { min_distance: 1.0 }
            } else {
                SpatialRule::Any
            }
        })
        .collect();

    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let appearance_centers: Vec<Vec<f64>> = (0..num_objects)
        .map(|_| (0..DEFAULT_FEATURE_DIM).map(|_| normal.sample(&mut rng)).collect())
        .collect();

    Ok(WorldSpec {
        vocab,
        verb_priors,
        spatial_rules,
        feature_dim: DEFAULT_FEATURE_DIM,
        appearance_centers,
        appearance_noise: 0.8,
        persons_range: (1, 3),
        objects_range: (1, 4),
        frame_width: 640,
        frame_height: 480,
        verb_count_probs: [0.30, 0.65, 0.05],
        secondary_emission: 0.02,
    })
}

struct Entity {
    bbox: BBox,
    label: usize,
    partner: Option<usize>, // person index whose placement this box satisfied
}

fn sample_box<R: Rng>(rng: &mut R, w_range: (f64, f64), h_range: (f64, f64), frame_w: f64, frame_h: f64) -> BBox {
    let w = rng.random_range(w_range.0..w_range.1);
    let h = rng.random_range(h_range.0..h_range.1);
    let x1 = rng.random_range(0.0..(frame_w - w));
    let y1 = rng.random_range(0.0..(frame_h - h));
    BBox::new(x1, y1, x1 + w, y1 + h).expect("sampled box is valid")
}

fn clamp_box(cx: f64, cy: f64, w: f64, h: f64, frame_w: f64, frame_h: f64) -> BBox {
    let x1 = (cx - w / 2.0).clamp(0.0, frame_w - w);
    let y1 = (cy - h / 2.0).clamp(0.0, frame_h - h);
    BBox::new(x1, y1, x1 + w, y1 + h).expect("clamped box is valid")
}

/// Place the object's box so every rule holds, retrying a bounded number of
/// times. Returns None when the constraints cannot be met inside the frame.
fn place_for_rules<R: Rng>(
    rng: &mut R,
    partner: &BBox,
    rules: &[SpatialRule],
    w: f64,
    h: f64,
    frame_w: f64,
    frame_h: f64,
) -> Option<BBox> {
    let (pcx, pcy) = partner.center();
    let diag = partner.diagonal();
    for _ in 0..30 {
        let candidate = if rules.iter().any(|r| matches!(r, SpatialRule::OverlapRequired)) {
            // Center inside the partner box guarantees overlap before clamping.
            let cx = rng.random_range(partner.x1..partner.x2);
            let cy = rng.random_range(partner.y1..partner.y2);
            clamp_box(cx, cy, w, h, frame_w, frame_h)
        } else if let Some(max_d) = rules
            .iter()
            .filter_map(|r| match r {
                SpatialRule::Near { max_distance } => Some(*max_distance),
                _ => None,
            })
            .reduce(f64::min)
        {
            let d = rng.random_range(0.0..max_d * diag);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            clamp_box(pcx + d * angle.cos(), pcy + d * angle.sin(), w, h, frame_w, frame_h)
        } else if let Some(min_d) = rules
            .iter()
            .filter_map(|r| match r {
                SpatialRule::Far { min_distance } => Some(*min_distance),
                _ => None,
            })
            .reduce(f64::max)
        {
            let d = rng.random_range(min_d * diag..min_d * diag * 1.6);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            clamp_box(pcx + d * angle.cos(), pcy + d * angle.sin(), w, h, frame_w, frame_h)
        } else {
            sample_box(rng, (w, w + 1e-9), (h, h + 1e-9), frame_w, frame_h)
        };
        if rules.iter().all(|r| r.satisfied(partner, &candidate)) {
            return Some(candidate);
        }
    }
    None
}

/// Draw up to `max_draws` verbs from the class prior (with replacement,
/// deduplicated).
fn draw_verbs<R: Rng>(rng: &mut R, prior: &[f64], draws: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for _ in 0..draws {
        let mut roll: f64 = rng.random_range(0.0..1.0);
        let mut picked = prior.len() - 1;
        for (v, &p) in prior.iter().enumerate() {
            if roll < p {
                picked = v;
                break;
            }
            roll -= p;
        }
        if !out.contains(&picked) {
            out.push(picked);
        }
    }
    out
}

/// Generate one scene: persons and objects with verb-bearing pairs whose
/// geometry satisfies the verbs' spatial rules, plus perfect detections.
pub fn generate_scene(world: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<SceneSample> {
    let frame_w = world.frame_width as f64;
    let frame_h = world.frame_height as f64;
    let person = world.vocab.person;
    let num_objects = world.vocab.num_objects();

    let n_persons = rng.random_range(world.persons_range.0..=world.persons_range.1);
    let n_objects = rng.random_range(world.objects_range.0..=world.objects_range.1);

    let mut entities: Vec<Entity> = Vec::new();
    // Interactions accumulate as (person entity index, object entity index, verb).
    let mut interactions: Vec<(usize, usize, usize)> = Vec::new();

    let draw_count = |rng: &mut ChaCha8Rng, probs: &[f64; 3]| -> usize {
        let roll: f64 = rng.random_range(0.0..1.0);
        if roll < probs[0] {
            0
        } else if roll < probs[0] + probs[1] {
            1
        } else {
            2
        }
    };

    // Persons: the first goes anywhere; later ones may interact with an
    // earlier person, and their placement satisfies those verbs' rules.
    for pi in 0..n_persons {
        let w = rng.random_range(60.0..140.0);
        let h = rng.random_range(90.0..200.0);
        if pi == 0 {
            let bbox = sample_box(rng, (w, w + 1e-9), (h, h + 1e-9), frame_w, frame_h);
            entities.push(Entity { bbox, label: person, partner: None });
            continue;
        }
        let partner = rng.random_range(0..pi);
        let count = draw_count(rng, &world.verb_count_probs);
        let mut verbs = draw_verbs(rng, &world.verb_priors[person], count);
        let mut bbox = None;
        while !verbs.is_empty() {
            let rules: Vec<SpatialRule> = verbs.iter().map(|&v| world.spatial_rules[v]).collect();
            if let Some(b) = place_for_rules(rng, &entities[partner].bbox, &rules, w, h, frame_w, frame_h) {
                bbox = Some(b);
                break;
            }
            verbs.pop(); // jointly unsatisfiable; try without the last verb
        }
        let bbox = bbox.unwrap_or_else(|| sample_box(rng, (w, w + 1e-9), (h, h + 1e-9), frame_w, frame_h));
        let idx = entities.len();
        entities.push(Entity { bbox, label: person, partner: Some(partner) });
        for v in verbs {
            interactions.push((partner, idx, v));
        }
    }

    // Non-person objects, each placed relative to a partner person.
    for _ in 0..n_objects {
        let label = rng.random_range(1..num_objects.max(2)).min(num_objects - 1);
        let label = if label == person { (person + 1) % num_objects } else { label };
        let w = rng.random_range(40.0..120.0);
        let h = rng.random_range(40.0..120.0);
        let partner = rng.random_range(0..n_persons);
        let count = draw_count(rng, &world.verb_count_probs);
        let mut verbs = draw_verbs(rng, &world.verb_priors[label], count);
        let mut bbox = None;
        while !verbs.is_empty() {
            let rules: Vec<SpatialRule> = verbs.iter().map(|&v| world.spatial_rules[v]).collect();
            if let Some(b) = place_for_rules(rng, &entities[partner].bbox, &rules, w, h, frame_w, frame_h) {
                bbox = Some(b);
                break;
            }
            verbs.pop();
        }
        let bbox = bbox.unwrap_or_else(|| sample_box(rng, (w, w + 1e-9), (h, h + 1e-9), frame_w, frame_h));
        let idx = entities.len();
        entities.push(Entity { bbox, label, partner: Some(partner) });
        for v in verbs {
            interactions.push((partner, idx, v));
        }
    }

    // Secondary pairs: fixed geometry, so emission conditions on the rules
    // the existing boxes already satisfy.
    for oi in 0..entities.len() {
        for pi in 0..n_persons {
            if pi == oi || entities[oi].partner == Some(pi) {
                continue;
            }
            if rng.random_range(0.0..1.0) >= world.secondary_emission {
                continue;
            }
            let label = entities[oi].label;
            let human_box = entities[pi].bbox;
            let object_box = entities[oi].bbox;
            let admissible: Vec<f64> = (0..world.vocab.num_verbs())
                .map(|v| {
                    if world.spatial_rules[v].satisfied(&human_box, &object_box) {
                        world.verb_priors[label][v]
                    } else {
                        0.0
                    }
                })
                .collect();
            let mass: f64 = admissible.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let renorm: Vec<f64> = admissible.iter().map(|p| p / mass).collect();
            let verbs = draw_verbs(rng, &renorm, 1);
            for v in verbs {
                if !interactions.contains(&(pi, oi, v)) {
                    interactions.push((pi, oi, v));
                }
            }
        }
    }

    // Detections with class-conditional appearance features.
    let normal = Normal::new(0.0, world.appearance_noise.max(1e-12)).expect("valid noise");
    let detections: Vec<Detection> = entities
        .iter()
        .map(|e| Detection {
            bbox: e.bbox,
            score: 1.0,
            label: e.label,
            feature: world.appearance_centers[e.label]
                .iter()
                .map(|c| c + normal.sample(rng))
                .collect(),
        })
        .collect();

    // Group interactions per pair into ground-truth records.
    let mut ground_truth: Vec<GroundTruthHoi> = Vec::new();
    let mut seen_pairs: Vec<(usize, usize)> = Vec::new();
    for &(pi, oi, _) in &interactions {
        if !seen_pairs.contains(&(pi, oi)) {
            seen_pairs.push((pi, oi));
        }
    }
    for (pi, oi) in seen_pairs {
        let mut verbs: Vec<usize> = interactions
            .iter()
            .filter(|&&(p, o, _)| p == pi && o == oi)
            .map(|&(_, _, v)| v)
            .collect();
        verbs.sort_unstable();
        verbs.dedup();
        ground_truth.push(GroundTruthHoi {
            human_box: entities[pi].bbox,
            object_box: entities[oi].bbox,
            object_label: entities[oi].label,
            verbs,
        });
    }

    Ok(SceneSample {
        scene: Scene {
            id: String::new(),
            width: world.frame_width,
            height: world.frame_height,
            detections,
            ground_truth,
        },
    })
}

/// The world's full class list with training-instance counts taken from
/// `scenes`. Supported classes that never occurred still appear, with a
/// count of zero, so any split generated from the same world resolves.
pub fn world_class_table(world: &WorldSpec, scenes: &[Scene]) -> SplitTable {
    let mut counts = std::collections::BTreeMap::new();
    for (object, prior) in world.verb_priors.iter().enumerate() {
        for (verb, &p) in prior.iter().enumerate() {
            if p > 0.0 {
                counts.insert(HoiClass { object, verb }, 0u32);
            }
        }
    }
    for scene in scenes {
        for gt in &scene.ground_truth {
            for &verb in &gt.verbs {
                *counts
                    .entry(HoiClass { object: gt.object_label, verb })
                    .or_insert(0) += 1;
            }
        }
    }
    SplitTable::new(counts)
}

/// Generate `count` scenes with sequential ids.
pub fn generate_scenes(world: &WorldSpec, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SceneSample>> {
    (0..count)
        .map(|i| {
            let mut sample = generate_scene(world, rng)?;
            sample.scene.id = format!("scene-{i:06}");
            Ok(sample)
        })
        .collect()
}

/// Corrupt a pristine sample into detector-like output: jittered boxes with
/// IoU-calibrated scores, dropped detections, background false positives,
/// and label flips. Ground truth stays untouched for evaluation.
pub fn corrupt_to_detections(
    sample: &SceneSample,
    noise: &DetectionNoise,
    rng: &mut ChaCha8Rng,
) -> Result<Scene> {
    noise.validate()?;
    let frame_w = sample.scene.width as f64;
    let frame_h = sample.scene.height as f64;
    let normal = Normal::new(0.0, noise.box_jitter.max(1e-12)).expect("valid jitter");
    let num_labels = sample
        .scene
        .detections
        .iter()
        .map(|d| d.label + 1)
        .max()
        .unwrap_or(1);

    let mut detections = Vec::new();
    for det in &sample.scene.detections {
        if noise.miss_rate > 0.0 && rng.random_range(0.0..1.0) < noise.miss_rate {
            continue;
        }
        let bbox = if noise.box_jitter > 0.0 {
            let x1 = det.bbox.x1 + normal.sample(rng);
            let y1 = det.bbox.y1 + normal.sample(rng);
            let x2 = det.bbox.x2 + normal.sample(rng);
            let y2 = det.bbox.y2 + normal.sample(rng);
            let x1 = x1.clamp(0.0, frame_w - 4.0);
            let y1 = y1.clamp(0.0, frame_h - 4.0);
            let x2 = x2.clamp(x1 + 4.0, frame_w);
            let y2 = y2.clamp(y1 + 4.0, frame_h);
            BBox::new(x1, y1, x2, y2)?
        } else {
            det.bbox
        };
        let score = bbox.iou(&det.bbox).clamp(0.05, 1.0);
        let label = if noise.label_flip_rate > 0.0 && rng.random_range(0.0..1.0) < noise.label_flip_rate {
            let offset = rng.random_range(1..num_labels.max(2));
            (det.label + offset) % num_labels.max(2)
        } else {
            det.label
        };
        detections.push(Detection {
            bbox,
            score,
            label,
            feature: det.feature.clone(),
        });
    }

    // Background false positives with low scores and featureless noise.
    let bg_normal = Normal::new(0.0, 1.0).expect("valid normal");
    for det in &sample.scene.detections {
        if noise.false_positive_rate > 0.0 && rng.random_range(0.0..1.0) < noise.false_positive_rate {
            let bbox = sample_box(rng, (30.0, 120.0), (30.0, 120.0), frame_w, frame_h);
            detections.push(Detection {
                bbox,
                score: rng.random_range(0.05..0.3),
                label: rng.random_range(0..num_labels.max(1)),
                feature: (0..det.feature.len()).map(|_| bg_normal.sample(rng)).collect(),
            });
        }
    }

    Ok(Scene {
        id: sample.scene.id.clone(),
        width: sample.scene.width,
        height: sample.scene.height,
        detections,
        ground_truth: sample.scene.ground_truth.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_is_deterministic() {
        let a = generate_world(7, 12, 16, 0.25).unwrap();
        let b = generate_world(7, 12, 16, 0.25).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn world_support_counts() {
        // sparsity 0.25 of 16 verbs: 4 supported verbs per class.
        let w = generate_world(7, 12, 16, 0.25).unwrap();
        for (class, prior) in w.verb_priors.iter().enumerate() {
            let support = prior.iter().filter(|&&p| p > 0.0).count();
            assert_eq!(support, 4, "class {class}");
            let total: f64 = prior.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // Full sparsity: every verb allowed everywhere.
        let full = generate_world(3, 4, 6, 1.0).unwrap();
        for prior in &full.verb_priors {
            assert!(prior.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn world_covers_every_verb() {
        for seed in 0..10 {
            let w = generate_world(seed, 12, 16, 0.25).unwrap();
            for verb in 0..16 {
                let covered = w.verb_priors.iter().any(|row| row[verb] > 0.0);
                assert!(covered, "seed {seed}: verb {verb} has no supporting class");
            }
        }
    }

    #[test]
    fn scenes_are_deterministic_given_rng_state() {
        let world = generate_world(7, 6, 8, 0.5).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(99);
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let a = generate_scene(&world, &mut rng1).unwrap();
        let b = generate_scene(&world, &mut rng2).unwrap();
        assert_eq!(
            serde_json::to_string(&a.scene).unwrap(),
            serde_json::to_string(&b.scene).unwrap()
        );
    }

    #[test]
    fn ground_truth_satisfies_spatial_rules() {
        let world = generate_world(11, 8, 10, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let sample = generate_scene(&world, &mut rng).unwrap();
            for gt in &sample.scene.ground_truth {
                for &v in &gt.verbs {
                    assert!(
                        world.spatial_rules[v].satisfied(&gt.human_box, &gt.object_box),
                        "verb {v} rule {:?} violated",
                        world.spatial_rules[v]
                    );
                }
            }
        }
    }

    #[test]
    fn overlap_rule_forces_positive_iou() {
        // Force a world where every rule is overlap-required.
        let mut world = generate_world(2, 5, 4, 0.5).unwrap();
        world.spatial_rules = vec![SpatialRule::OverlapRequired; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let sample = generate_scene(&world, &mut rng).unwrap();
            for gt in &sample.scene.ground_truth {
                assert!(gt.human_box.iou(&gt.object_box) > 0.0);
            }
        }
    }

    #[test]
    fn zero_noise_corruption_is_identity() {
        let world = generate_world(4, 5, 6, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = generate_scene(&world, &mut rng).unwrap();
        let scene = corrupt_to_detections(&sample, &DetectionNoise::none(), &mut rng).unwrap();
        assert_eq!(scene.detections.len(), sample.scene.detections.len());
        for (a, b) in scene.detections.iter().zip(&sample.scene.detections) {
            assert_eq!(a.bbox, b.bbox);
            assert_eq!(a.score, 1.0);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn full_miss_rate_leaves_only_false_positives() {
        let world = generate_world(4, 5, 6, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample = generate_scene(&world, &mut rng).unwrap();
        let noise = DetectionNoise {
            box_jitter: 0.0,
            miss_rate: 0.999_999,
            false_positive_rate: 0.5,
            label_flip_rate: 0.0,
        };
        let scene = corrupt_to_detections(&sample, &noise, &mut rng).unwrap();
        for d in &scene.detections {
            assert!(d.score < 0.3, "false positives carry low scores");
        }
    }

    #[test]
    fn jitter_keeps_scores_high_on_large_boxes() {
        // Monte Carlo oracle: sigma = 4 on a 100x100 box keeps mean IoU-derived
        // score above 0.8 over 1000 draws.
        let sample = SceneSample {
            scene: Scene {
                id: "mc".into(),
                width: 640,
                height: 480,
                detections: vec![Detection {
                    bbox: BBox::new(200.0, 150.0, 300.0, 250.0).unwrap(),
                    score: 1.0,
                    label: 1,
                    feature: vec![0.0; 4],
                }],
                ground_truth: vec![],
            },
        };
        let noise = DetectionNoise {
            box_jitter: 4.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            label_flip_rate: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut total = 0.0;
        for _ in 0..1000 {
            let scene = corrupt_to_detections(&sample, &noise, &mut rng).unwrap();
            total += scene.detections[0].score;
        }
        let mean = total / 1000.0;
        assert!(mean > 0.8, "mean score {mean}");
    }

    #[test]
    fn empirical_verb_frequencies_match_priors() {
        // Statistical oracle over 1000 generated scenes: conditional
        // verb-given-object frequencies stay within 0.05 of the prior.
        let mut world = generate_world(7, 4, 6, 0.5).unwrap();
        world.objects_range = (2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = vec![vec![0usize; 6]; 4];
        for _ in 0..1000 {
            let sample = generate_scene(&world, &mut rng).unwrap();
            for gt in &sample.scene.ground_truth {
                for &v in &gt.verbs {
                    counts[gt.object_label][v] += 1;
                }
            }
        }
        for class in 0..4 {
            let total: usize = counts[class].iter().sum();
            assert!(total > 100, "class {class} needs samples, got {total}");
            for verb in 0..6 {
                let freq = counts[class][verb] as f64 / total as f64;
                let prior = world.verb_priors[class][verb];
                assert!(
                    (freq - prior).abs() <= 0.05,
                    "class {class} verb {verb}: freq {freq:.3} vs prior {prior:.3}"
                );
            }
        }
    }

    #[test]
    fn label_frequency_baseline_beats_chance() {
        // The planted regularities make object labels predictive of verbs.
        let world = generate_world(7, 6, 8, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let train = generate_scenes(&world, 200, &mut rng).unwrap();
        let test = generate_scenes(&world, 100, &mut rng).unwrap();
        let mut table = vec![vec![0usize; 8]; 6];
        for s in &train {
            for gt in &s.scene.ground_truth {
                for &v in &gt.verbs {
                    table[gt.object_label][v] += 1;
                }
            }
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for s in &test {
            for gt in &s.scene.ground_truth {
                let best = (0..8).max_by_key(|&v| table[gt.object_label][v]).unwrap();
                for &v in &gt.verbs {
                    total += 1;
                    if v == best {
                        hits += 1;
                    }
                }
            }
        }
        let accuracy = hits as f64 / total as f64;
        assert!(accuracy > 1.0 / 8.0 + 0.1, "label-only accuracy {accuracy}");
    }
}
