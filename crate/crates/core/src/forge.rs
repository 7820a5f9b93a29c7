//! Labeled intent/action dataset generation.
//!
//! Records are generated label-first: the allocation plan fixes how many
//! records carry each quality label and each action type, then every record
//! perturbs a ground-truth action until the geometric oracle returns exactly
//! the planned label.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::oracle::{self, agreement, Agreement, OracleConfig, Scene, Target, GRID_DIAGONAL};
use crate::render::{self, RasterImage, StrokeStyle};
use crate::rng::{self, StreamRng};
use crate::trajectory::{clamp_coord, Action, ActionKind, QualityJudgment};

/// Rejection-sampling budget per injection.
pub const MAX_INJECTION_ATTEMPTS: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("invalid forge spec: {0}")]
    InvalidSpec(String),
    #[error(
        "could not reach label {label} for {kind} target `{target}` after {attempts} attempts \
         (last candidate judged {last:?})"
    )]
    Exhausted {
        label: QualityJudgment,
        kind: ActionKind,
        target: String,
        attempts: usize,
        last: Option<QualityJudgment>,
    },
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Render(#[from] render::RenderError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ForgeError + '_ {
    move |source| ForgeError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    /// Targets generated for each creditable action type.
    pub targets_per_type: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 256,
            height: 256,
            targets_per_type: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeSpec {
    pub n: usize,
    /// Excellent : Acceptable : Poor : Unacceptable.
    pub label_ratio: [u32; 4],
    /// point : line : rectangle : circle.
    pub action_balance: [u32; 4],
    pub seed: u64,
    pub scene: SceneParams,
}

impl Default for ForgeSpec {
    fn default() -> Self {
        ForgeSpec {
            n: 100,
            label_ratio: [2, 4, 3, 1],
            action_balance: [1, 1, 1, 1],
            seed: 0,
            scene: SceneParams::default(),
        }
    }
}

impl ForgeSpec {
    pub fn validate(&self) -> Result<(), ForgeError> {
        if self
            .label_ratio
            .iter()
            .chain(&self.action_balance)
            .any(|&w| w == 0)
        {
            return Err(ForgeError::InvalidSpec(
                "ratio entries must be positive".into(),
            ));
        }
        if self.n < 4 {
            return Err(ForgeError::InvalidSpec(format!(
                "n must be >= 4, got {}",
                self.n
            )));
        }
        if self.scene.width == 0 || self.scene.height == 0 || self.scene.targets_per_type == 0 {
            return Err(ForgeError::InvalidSpec(
                "scene parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` over `weights`; ties go to the
/// earlier entry.
pub fn largest_remainder(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    assert!(total > 0, "weights must not all be zero");
    let n64 = n as u64;
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|&w| (n64 * u64::from(w) / total) as usize)
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder numerators are exact integers; stable sort keeps index order on ties
    order.sort_by_key(|&i| std::cmp::Reverse(n64 * u64::from(weights[i]) % total));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Interleave categories so each appears exactly `counts[i]` times, spread
/// evenly (smooth weighted round robin).
pub fn interleave(counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let mut credit = vec![0i64; counts.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for (c, &w) in credit.iter_mut().zip(counts) {
            *c += w as i64;
        }
        let mut best = 0;
        for i in 1..credit.len() {
            if credit[i] > credit[best] {
                best = i;
            }
        }
        credit[best] -= n as i64;
        out.push(best);
    }
    out
}

fn target_id(kind: ActionKind, i: usize) -> String {
    format!("{kind}-{i}")
}

/// Deterministic scene with `targets_per_type` targets of every creditable type.
pub fn synthesize_scene(seed: u64, params: &SceneParams) -> Scene {
    let mut rng = rng::stream("scene", seed, 0);
    let mut targets = Vec::new();
    for kind in ActionKind::CREDITABLE {
        for i in 0..params.targets_per_type {
            let primitive = match kind {
                ActionKind::Point => Action::Point {
                    x: rng.random_range(100..=900),
                    y: rng.random_range(100..=900),
                },
                ActionKind::Line => {
                    let (cx, cy) = (
                        rng.random_range(200.0..=800.0),
                        rng.random_range(200.0..=800.0),
                    );
                    let half: f64 = rng.random_range(60.0..=200.0);
                    let angle: f64 = rng.random_range(0.0..TAU);
                    let (dx, dy) = (half * angle.cos(), half * angle.sin());
                    Action::Line {
                        x1: clamp_coord((cx - dx).round() as i64),
                        y1: clamp_coord((cy - dy).round() as i64),
                        x2: clamp_coord((cx + dx).round() as i64),
                        y2: clamp_coord((cy + dy).round() as i64),
                    }
                }
                ActionKind::Rectangle => {
                    let (cx, cy): (i64, i64) =
                        (rng.random_range(250..=750), rng.random_range(250..=750));
                    let (hw, hh): (i64, i64) =
                        (rng.random_range(60..=200), rng.random_range(60..=200));
                    Action::Rectangle {
                        x1: clamp_coord(cx - hw),
                        y1: clamp_coord(cy - hh),
                        x2: clamp_coord(cx + hw),
                        y2: clamp_coord(cy + hh),
                    }
                }
                ActionKind::Circle => Action::Circle {
                    cx: rng.random_range(250..=750),
                    cy: rng.random_range(250..=750),
                    r: rng.random_range(60..=180),
                },
                ActionKind::Text => unreachable!("text is not creditable"),
            };
            targets.push(Target {
                id: target_id(kind, i),
                primitive,
                intent: format!("mark the {kind} target {i}"),
            });
        }
    }
    Scene {
        width: params.width,
        height: params.height,
        background: render::WHITE,
        targets,
    }
}

/// Uniform sample from `[lo, hi]`, or `lo` when the interval is empty.
fn sample_in(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn translate_by_distance(gt: &Action, dist: f64, rng: &mut StreamRng) -> Action {
    let angle: f64 = rng.random_range(0.0..TAU);
    gt.translated(
        (dist * angle.cos()).round() as i64,
        (dist * angle.sin()).round() as i64,
    )
}

/// Scale a region about its center by `s`.
fn scale_region(gt: &Action, s: f64) -> Action {
    match *gt {
        Action::Rectangle { x1, y1, x2, y2 } => {
            let (cx, cy) = gt.center();
            let hw = (f64::from(x2) - f64::from(x1)) / 2.0 * s;
            let hh = (f64::from(y2) - f64::from(y1)) / 2.0 * s;
            Action::Rectangle {
                x1: clamp_coord((cx - hw).round() as i64),
                y1: clamp_coord((cy - hh).round() as i64),
                x2: clamp_coord((cx + hw).round() as i64),
                y2: clamp_coord((cy + hh).round() as i64),
            }
        }
        Action::Circle { cx, cy, r } => Action::Circle {
            cx,
            cy,
            r: (f64::from(r) * s).round().clamp(1.0, 1000.0) as u16,
        },
        ref other => other.clone(),
    }
}

/// Shift a rectangle horizontally or vertically by a fraction of its extent.
fn shift_rect(gt: &Action, frac: f64, rng: &mut StreamRng) -> Action {
    if let Action::Rectangle { x1, y1, x2, y2 } = *gt {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if rng.random_bool(0.5) {
            let d = (sign * frac * f64::from(x2 - x1)).round() as i64;
            gt.translated(d, 0)
        } else {
            let d = (sign * frac * f64::from(y2 - y1)).round() as i64;
            gt.translated(0, d)
        }
    } else {
        gt.clone()
    }
}

fn jitter_line_endpoints(a: &Action, amount: f64, rng: &mut StreamRng) -> Action {
    if let Action::Line { x1, y1, x2, y2 } = *a {
        let ex = (rng.random_range(-amount..=amount)).round() as i64;
        let ey = (rng.random_range(-amount..=amount)).round() as i64;
        // opposite jitter on the two endpoints keeps the midpoint
        Action::Line {
            x1: clamp_coord(i64::from(x1) + ex),
            y1: clamp_coord(i64::from(y1) + ey),
            x2: clamp_coord(i64::from(x2) - ex),
            y2: clamp_coord(i64::from(y2) - ey),
        }
    } else {
        a.clone()
    }
}

fn propose(
    gt: &Action,
    label: QualityJudgment,
    scene: &Scene,
    target: &Target,
    cfg: &OracleConfig,
    rng: &mut StreamRng,
) -> Action {
    let bands = cfg.bands_for(gt.kind());
    let swap_candidates: Vec<&Target> = scene
        .targets
        .iter()
        .filter(|t| t.id != target.id && t.primitive.kind() == gt.kind())
        .collect();
    if label == QualityJudgment::Unacceptable
        && !swap_candidates.is_empty()
        && rng.random_bool(0.25)
    {
        let pick = swap_candidates[rng.random_range(0..swap_candidates.len())];
        return pick.primitive.clone();
    }
    match agreement(gt, &target.primitive) {
        Agreement::Distance(_) => {
            let [d0, d1, d2] = bands.distance;
            let (lo, hi) = match label {
                QualityJudgment::Excellent => (0.0, d0),
                QualityJudgment::Acceptable => (d0, d1),
                QualityJudgment::Poor => (d1, d2),
                QualityJudgment::Unacceptable => (d2, (d2 + 0.4).min(0.7)),
            };
            let dist = sample_in(rng, lo, hi) * GRID_DIAGONAL;
            let moved = translate_by_distance(gt, dist, rng);
            if gt.kind() == ActionKind::Line {
                let amount = rng.random_range(0.0..=30.0);
                jitter_line_endpoints(&moved, amount, rng)
            } else {
                moved
            }
        }
        Agreement::Iou(_) => {
            let [i0, i1, i2] = bands.iou;
            let (lo, hi) = match label {
                QualityJudgment::Excellent => (i0, 1.0),
                QualityJudgment::Acceptable => (i1, i0),
                QualityJudgment::Poor => (i2, i1),
                QualityJudgment::Unacceptable => ((i2 * 0.1).max(0.01), i2),
            };
            let iou = sample_in(rng, lo, hi);
            match rng.random_range(0..3) {
                // IoU of a concentric copy scaled by s < 1 is s^2
                0 => scale_region(gt, iou.sqrt()),
                1 => scale_region(gt, 1.0 / iou.sqrt()),
                // same-size boxes offset by t of their extent have IoU (1-t)/(1+t)
                _ if gt.kind() == ActionKind::Rectangle => {
                    shift_rect(gt, (1.0 - iou) / (1.0 + iou), rng)
                }
                _ => scale_region(gt, iou.sqrt()),
            }
        }
    }
}

/// Perturb `gt` until the oracle judges it `label` against `target_id`.
pub fn inject_noise(
    gt: &Action,
    label: QualityJudgment,
    scene: &Scene,
    target_id: &str,
    cfg: &OracleConfig,
    rng: &mut StreamRng,
) -> Result<Action, ForgeError> {
    if !gt.kind().is_creditable() {
        return Err(oracle::OracleError::UnsupportedType(gt.kind()).into());
    }
    let target = scene.target(target_id)?;
    let mut last = None;
    for _ in 0..MAX_INJECTION_ATTEMPTS {
        let candidate = propose(gt, label, scene, target, cfg, rng);
        if candidate.validate().is_err() {
            continue;
        }
        let judged = oracle::judge(&target.primitive, &candidate, cfg)?;
        if judged == label {
            return Ok(candidate);
        }
        last = Some(judged);
    }
    Err(ForgeError::Exhausted {
        label,
        kind: gt.kind(),
        target: target_id.to_string(),
        attempts: MAX_INJECTION_ATTEMPTS,
        last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeRecord {
    pub index: usize,
    pub intent: String,
    pub ground_truth: Action,
    pub perturbed: Action,
    pub label: QualityJudgment,
    pub target_id: String,
    pub before_image: String,
    pub after_image: String,
    pub seed: u64,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ForgeSpec,
    pub label_counts: BTreeMap<String, usize>,
    pub action_counts: BTreeMap<String, usize>,
    pub records_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ForgeRecord>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn records_jsonl(&self) -> String {
        records_jsonl(&self.records)
    }
}

fn records_jsonl(records: &[ForgeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
        out.push('\n');
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The planned `(label, action kind)` of every record index.
pub fn allocation_plan(spec: &ForgeSpec) -> Vec<(QualityJudgment, ActionKind)> {
    let label_counts = largest_remainder(spec.n, &spec.label_ratio);
    let action_counts = largest_remainder(spec.n, &spec.action_balance);
    let labels = QualityJudgment::ALL
        .iter()
        .zip(&label_counts)
        .flat_map(|(&l, &c)| std::iter::repeat_n(l, c));
    let kinds = interleave(&action_counts)
        .into_iter()
        .map(|i| ActionKind::CREDITABLE[i]);
    labels.zip(kinds).collect()
}

fn build_record(
    spec: &ForgeSpec,
    index: usize,
    label: QualityJudgment,
    kind: ActionKind,
    cfg: &OracleConfig,
) -> Result<ForgeRecord, ForgeError> {
    let seed = rng::derive_seed("forge-record", spec.seed, index as u64);
    let scene = synthesize_scene(seed, &spec.scene);
    let mut rng = rng::stream("forge-noise", seed, 0);
    let pick = rng.random_range(0..spec.scene.targets_per_type);
    let target = scene.target(&target_id(kind, pick))?.clone();
    let perturbed = inject_noise(&target.primitive, label, &scene, &target.id, cfg, &mut rng)?;
    Ok(ForgeRecord {
        index,
        intent: target.intent.clone(),
        ground_truth: target.primitive.clone(),
        perturbed,
        label,
        target_id: target.id.clone(),
        before_image: format!("images/{index:06}_before.png"),
        after_image: format!("images/{index:06}_after.png"),
        seed,
        scene,
    })
}

/// Generate all records in memory, in index order.
pub fn compile_dataset(spec: &ForgeSpec, cfg: &OracleConfig) -> Result<Dataset, ForgeError> {
    spec.validate()?;
    cfg.validate()?;
    let plan = allocation_plan(spec);
    let records = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(label, kind))| build_record(spec, i, label, kind, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut label_counts: BTreeMap<String, usize> = QualityJudgment::ALL
        .iter()
        .map(|l| (l.name().to_string(), 0))
        .collect();
    let mut action_counts: BTreeMap<String, usize> = ActionKind::CREDITABLE
        .iter()
        .map(|k| (k.name().to_string(), 0))
        .collect();
    for r in &records {
        *label_counts.entry(r.label.name().to_string()).or_default() += 1;
        *action_counts
            .entry(r.ground_truth.kind().name().to_string())
            .or_default() += 1;
    }
    let manifest = Manifest {
        spec: spec.clone(),
        label_counts,
        action_counts,
        records_sha256: sha256_hex(records_jsonl(&records).as_bytes()),
        images_sha256: None,
    };
    Ok(Dataset { records, manifest })
}

/// Before/after images of one record.
pub fn render_record(record: &ForgeRecord) -> Result<(RasterImage, RasterImage), ForgeError> {
    let before = record.scene.base_image()?;
    let style = StrokeStyle::for_canvas(record.scene.width, record.scene.height);
    let after = render::render(&before, &record.perturbed, &style)?;
    Ok((before, after))
}

/// Compile and write `records.jsonl`, `manifest.json` and `images/` under `out`.
pub fn write_dataset(
    spec: &ForgeSpec,
    cfg: &OracleConfig,
    out: &Path,
) -> Result<Dataset, ForgeError> {
    let mut dataset = compile_dataset(spec, cfg)?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let hashes = dataset
        .records
        .par_iter()
        .map(|r| -> Result<String, ForgeError> {
            let (before, after) = render_record(r)?;
            let (b, a) = (before.to_png()?, after.to_png()?);
            let bp = out.join(&r.before_image);
            let ap = out.join(&r.after_image);
            fs::write(&bp, &b).map_err(io_err(&bp))?;
            fs::write(&ap, &a).map_err(io_err(&ap))?;
            Ok(format!("{}{}", sha256_hex(&b), sha256_hex(&a)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    dataset.manifest.images_sha256 = Some(sha256_hex(hashes.concat().as_bytes()));

    let rp = out.join("records.jsonl");
    fs::write(&rp, dataset.records_jsonl()).map_err(io_err(&rp))?;
    let mp = out.join("manifest.json");
    let manifest = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    fs::write(&mp, manifest + "\n").map_err(io_err(&mp))?;
    Ok(dataset)
}
