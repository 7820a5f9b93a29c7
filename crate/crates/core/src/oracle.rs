//! Geometric step scorer and spatial score heatmaps.
//!
//! A step is judged by how well its action agrees with a target primitive
//! of the scene. Two measures are used:
//!
//! * region agreement, when both the action and the target are regions
//!   (rectangle or circle): intersection over union, with bands
//!   `>= 0.75` Excellent, `>= 0.5` Acceptable, `>= 0.2` Poor;
//! * center distance otherwise: the distance between the action's center
//!   and the target's center divided by the grid diagonal `1000 * sqrt(2)`,
//!   with bands `<= 0.02` Excellent, `<= 0.05` Acceptable, `<= 0.15` Poor.
//!
//! Anything beyond the outermost band is Unacceptable. Bands are
//! configurable per action type.

use std::collections::HashSet;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::render::{self, RasterImage, StrokeStyle};
use crate::trajectory::{Action, ActionKind, QualityJudgment};

/// Diagonal of the normalized `1000 x 1000` grid.
pub const GRID_DIAGONAL: f64 = 1000.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("action type `{0}` cannot be scored")]
    UnsupportedType(ActionKind),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid oracle config: {0}")]
    InvalidConfig(String),
    #[error("heatmap grid must be >= 2, got {0}")]
    GridTooSmall(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: String,
    pub primitive: Action,
    pub intent: String,
}

/// Canvas plus the annotated primitives steps are judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub background: [u8; 3],
    pub targets: Vec<Target>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.width == 0 || self.height == 0 {
            return Err(OracleError::InvalidScene(format!(
                "canvas must be non-empty, got {}x{}",
                self.width, self.height
            )));
        }
        let mut seen = HashSet::new();
        for t in &self.targets {
            if !seen.insert(t.id.as_str()) {
                return Err(OracleError::InvalidScene(format!(
                    "duplicate target id `{}`",
                    t.id
                )));
            }
            t.primitive
                .validate()
                .map_err(|e| OracleError::InvalidScene(format!("target `{}`: {e}", t.id)))?;
            if !t.primitive.kind().is_creditable() {
                return Err(OracleError::InvalidScene(format!(
                    "target `{}` must be a geometric primitive, not text",
                    t.id
                )));
            }
        }
        Ok(())
    }

    pub fn target(&self, id: &str) -> Result<&Target, OracleError> {
        self.targets
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| OracleError::UnknownTarget(id.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, OracleError> {
        let scene: Scene =
            serde_json::from_str(s).map_err(|e| OracleError::InvalidScene(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serialization is infallible")
    }

    /// Background with every target drawn in a neutral blue.
    pub fn base_image(&self) -> Result<RasterImage, render::RenderError> {
        let mut img = RasterImage::new(self.width, self.height, self.background)?;
        let style = StrokeStyle {
            color: [40, 90, 200],
            ..StrokeStyle::for_canvas(self.width, self.height)
        };
        for t in &self.targets {
            render::draw(&mut img, &t.primitive, &style);
        }
        Ok(img)
    }
}

/// Band edges for one action type: distance bands ascending, IoU bands
/// descending, each for Excellent / Acceptable / Poor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub distance: [f64; 3],
    pub iou: [f64; 3],
}

impl Default for Bands {
    fn default() -> Self {
        Bands {
            distance: [0.02, 0.05, 0.15],
            iou: [0.75, 0.5, 0.2],
        }
    }
}

impl Bands {
    fn validate(&self) -> Result<(), OracleError> {
        let d = self.distance;
        let i = self.iou;
        if !(0.0 <= d[0] && d[0] <= d[1] && d[1] <= d[2]) {
            return Err(OracleError::InvalidConfig(format!(
                "distance bands must ascend: {d:?}"
            )));
        }
        if !(1.0 >= i[0] && i[0] >= i[1] && i[1] >= i[2] && i[2] > 0.0) {
            return Err(OracleError::InvalidConfig(format!(
                "iou bands must descend in (0,1]: {i:?}"
            )));
        }
        Ok(())
    }

    pub fn judge_distance(&self, d: f64) -> QualityJudgment {
        if d <= self.distance[0] {
            QualityJudgment::Excellent
        } else if d <= self.distance[1] {
            QualityJudgment::Acceptable
        } else if d <= self.distance[2] {
            QualityJudgment::Poor
        } else {
            QualityJudgment::Unacceptable
        }
    }

    pub fn judge_iou(&self, iou: f64) -> QualityJudgment {
        if iou >= self.iou[0] {
            QualityJudgment::Excellent
        } else if iou >= self.iou[1] {
            QualityJudgment::Acceptable
        } else if iou >= self.iou[2] {
            QualityJudgment::Poor
        } else {
            QualityJudgment::Unacceptable
        }
    }
}

/// Per-action-type bands (point, line, rectangle, circle).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleConfig {
    pub bands: [Bands; 4],
}

impl OracleConfig {
    pub fn uniform(bands: Bands) -> Result<Self, OracleError> {
        bands.validate()?;
        Ok(OracleConfig { bands: [bands; 4] })
    }

    /// Copy with `kind`'s distance and IoU bands widened by `factor`
    /// (distance edges multiplied, IoU edges divided).
    pub fn with_lenient(mut self, kind: ActionKind, factor: f64) -> Result<Self, OracleError> {
        let idx = kind
            .creditable_index()
            .ok_or(OracleError::UnsupportedType(kind))?;
        if !(factor >= 1.0 && factor.is_finite()) {
            return Err(OracleError::InvalidConfig(format!(
                "leniency factor must be >= 1, got {factor}"
            )));
        }
        let b = &mut self.bands[idx];
        b.distance = b.distance.map(|d| d * factor);
        b.iou = b.iou.map(|i| i / factor);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        self.bands.iter().try_for_each(Bands::validate)
    }

    pub fn bands_for(&self, kind: ActionKind) -> &Bands {
        &self.bands[kind.creditable_index().unwrap_or(0)]
    }
}

/// Axis-aligned box `(x1, y1, x2, y2)` in normalized units.
type BoxF = (f64, f64, f64, f64);

fn box_area(b: BoxF) -> f64 {
    (b.2 - b.0).max(0.0) * (b.3 - b.1).max(0.0)
}

/// IoU of two axis-aligned boxes; `None` when the union is empty.
pub fn box_iou(a: BoxF, b: BoxF) -> Option<f64> {
    let inter = box_area((a.0.max(b.0), a.1.max(b.1), a.2.min(b.2), a.3.min(b.3)));
    let union = box_area(a) + box_area(b) - inter;
    (union > 0.0).then(|| inter / union)
}

/// Area shared by two disks.
pub fn circle_intersection_area(c1: (f64, f64, f64), c2: (f64, f64, f64)) -> f64 {
    let (x1, y1, r1) = c1;
    let (x2, y2, r2) = c2;
    let d = (x1 - x2).hypot(y1 - y2);
    if d >= r1 + r2 {
        return 0.0;
    }
    if d <= (r1 - r2).abs() {
        let r = r1.min(r2);
        return PI * r * r;
    }
    let a1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1))
        .clamp(-1.0, 1.0)
        .acos();
    let a2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2))
        .clamp(-1.0, 1.0)
        .acos();
    let k = ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
        .max(0.0)
        .sqrt();
    r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k
}

pub fn circle_iou(c1: (f64, f64, f64), c2: (f64, f64, f64)) -> Option<f64> {
    let inter = circle_intersection_area(c1, c2);
    let union = PI * (c1.2 * c1.2 + c2.2 * c2.2) - inter;
    (union > 0.0).then(|| inter / union)
}

fn region_box(a: &Action) -> Option<BoxF> {
    match *a {
        Action::Rectangle { x1, y1, x2, y2 } => {
            Some((f64::from(x1), f64::from(y1), f64::from(x2), f64::from(y2)))
        }
        Action::Circle { cx, cy, r } => {
            let (cx, cy, r) = (f64::from(cx), f64::from(cy), f64::from(r));
            Some((cx - r, cy - r, cx + r, cy + r))
        }
        _ => None,
    }
}

/// Overlap between two region actions: exact for circle pairs and box
/// pairs, bounding boxes for mixed pairs. `None` if either is not a region
/// or the union is degenerate.
pub fn region_iou(a: &Action, b: &Action) -> Option<f64> {
    match (a, b) {
        (
            Action::Circle { cx, cy, r },
            Action::Circle {
                cx: ox,
                cy: oy,
                r: or,
            },
        ) => circle_iou(
            (f64::from(*cx), f64::from(*cy), f64::from(*r)),
            (f64::from(*ox), f64::from(*oy), f64::from(*or)),
        ),
        _ => box_iou(region_box(a)?, region_box(b)?),
    }
}

/// Center distance normalized by the grid diagonal.
pub fn normalized_center_distance(a: &Action, b: &Action) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by) / GRID_DIAGONAL
}

/// Geometric agreement measure used for a given action/target pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Agreement {
    Iou(f64),
    Distance(f64),
}

pub fn agreement(action: &Action, target: &Action) -> Agreement {
    match region_iou(action, target) {
        Some(iou) => Agreement::Iou(iou),
        None => Agreement::Distance(normalized_center_distance(action, target)),
    }
}

/// Judge `action` against the primitive of `target_id`.
pub fn oracle_score(
    scene: &Scene,
    target_id: &str,
    action: &Action,
    cfg: &OracleConfig,
) -> Result<QualityJudgment, OracleError> {
    let target = scene.target(target_id)?;
    judge(&target.primitive, action, cfg)
}

/// Judge `action` against a target primitive directly.
pub fn judge(
    target: &Action,
    action: &Action,
    cfg: &OracleConfig,
) -> Result<QualityJudgment, OracleError> {
    let kind = action.kind();
    if !kind.is_creditable() {
        return Err(OracleError::UnsupportedType(kind));
    }
    action
        .validate()
        .map_err(|e| OracleError::InvalidAction(e.to_string()))?;
    let bands = cfg.bands_for(kind);
    Ok(match agreement(action, target) {
        Agreement::Iou(iou) => bands.judge_iou(iou),
        Agreement::Distance(d) => bands.judge_distance(d),
    })
}

/// N x N grid of scores for one action template, row-major (row = y).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreHeatmap {
    pub n: usize,
    pub scores: Vec<f64>,
    pub template: Action,
}

/// Normalized center of cell `index` on an `n`-cell axis.
pub fn cell_center(index: usize, n: usize) -> f64 {
    (index as f64 + 0.5) * 1000.0 / n as f64
}

impl ScoreHeatmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.n + col]
    }

    /// First maximal cell in row-major order, as `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        (best / self.n, best % self.n)
    }

    /// Normalized `(x, y)` center of a cell.
    pub fn center_of(&self, row: usize, col: usize) -> (f64, f64) {
        (cell_center(col, self.n), cell_center(row, self.n))
    }

    pub fn pitch(&self) -> f64 {
        1000.0 / self.n as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.scores.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|s| format!("{s:.1}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Color render, `cell_px` pixels per cell.
    pub fn to_image(&self, cell_px: u32) -> Result<RasterImage, render::RenderError> {
        let side = cell_px * self.n as u32;
        let mut img = RasterImage::new(side, side, render::WHITE)?;
        for row in 0..self.n {
            for col in 0..self.n {
                let color = heat_color(self.get(row, col));
                let (x0, y0) = (col as u32 * cell_px, row as u32 * cell_px);
                img.fill_rect(x0, y0, x0 + cell_px, y0 + cell_px, color);
            }
        }
        Ok(img)
    }
}

/// Four-level palette, darkest for Excellent.
pub fn heat_color(score: f64) -> [u8; 3] {
    if score >= 4.0 {
        [8, 48, 107]
    } else if score >= 3.0 {
        [66, 146, 198]
    } else if score >= 2.0 {
        [158, 202, 225]
    } else {
        [239, 243, 255]
    }
}

/// Score `template` translated to the center of every cell of an `n x n` grid.
pub fn heatmap(
    scene: &Scene,
    target_id: &str,
    template: &Action,
    n: usize,
    cfg: &OracleConfig,
) -> Result<ScoreHeatmap, OracleError> {
    if n < 2 {
        return Err(OracleError::GridTooSmall(n));
    }
    let target = scene.target(target_id)?;
    if !template.kind().is_creditable() {
        return Err(OracleError::UnsupportedType(template.kind()));
    }
    let scores = (0..n * n)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / n, i % n);
            let placed = template.centered_at(cell_center(col, n), cell_center(row, n));
            judge(&target.primitive, &placed, cfg).map(QualityJudgment::score)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(ScoreHeatmap {
        n,
        scores,
        template: template.clone(),
    })
}
