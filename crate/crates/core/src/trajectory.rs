//! Actions, steps, responses and response groups.
//!
//! Every coordinate lives on the integer `0..=1000` grid. Actions serialize
//! to a canonical JSON object whose field order is fixed:
//!
//! ```text
//! {"type":"point","x":500,"y":500}
//! {"type":"line","x1":0,"y1":0,"x2":1000,"y2":1000}
//! {"type":"rectangle","x1":100,"y1":100,"x2":300,"y2":200}
//! {"type":"circle","cx":500,"cy":500,"r":100}
//! {"type":"text","x":10,"y":20,"content":"max"}
//! ```
//!
//! Trajectory files hold one [`Response`] per line with the field order
//! `prompt_id, terminal_reward, total_token_length, steps, final_answer`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Upper bound of the normalized coordinate grid.
pub const COORD_MAX: u16 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("malformed record: {0}")]
    Parse(String),
    #[error("field `{field}` = {value} is outside [0, 1000]")]
    CoordinateOutOfRange { field: &'static str, value: i64 },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("invalid group `{prompt_id}`: {reason}")]
    InvalidGroup { prompt_id: String, reason: String },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<TrajectoryError>,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

/// The five mark types a step can draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Point,
    Line,
    Rectangle,
    Circle,
    Text,
}

impl ActionKind {
    /// Kinds that take part in credit assignment, in canonical table order.
    pub const CREDITABLE: [ActionKind; 4] = [
        ActionKind::Point,
        ActionKind::Line,
        ActionKind::Rectangle,
        ActionKind::Circle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Point => "point",
            ActionKind::Line => "line",
            ActionKind::Rectangle => "rectangle",
            ActionKind::Circle => "circle",
            ActionKind::Text => "text",
        }
    }

    pub fn is_creditable(self) -> bool {
        self != ActionKind::Text
    }

    /// Position in [`ActionKind::CREDITABLE`], `None` for text.
    pub fn creditable_index(self) -> Option<usize> {
        match self {
            ActionKind::Point => Some(0),
            ActionKind::Line => Some(1),
            ActionKind::Rectangle => Some(2),
            ActionKind::Circle => Some(3),
            ActionKind::Text => None,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = TrajectoryError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(ActionKind::Point),
            "line" => Ok(ActionKind::Line),
            "rectangle" => Ok(ActionKind::Rectangle),
            "circle" => Ok(ActionKind::Circle),
            "text" => Ok(ActionKind::Text),
            other => Err(TrajectoryError::Parse(format!(
                "unknown action type `{other}`"
            ))),
        }
    }
}

/// A visual mark in normalized `0..=1000` coordinates.
///
/// Variants can be built directly; [`Action::validate`] checks the
/// invariants and every parsing path runs it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", try_from = "RawAction")]
pub enum Action {
    Point { x: u16, y: u16 },
    Line { x1: u16, y1: u16, x2: u16, y2: u16 },
    Rectangle { x1: u16, y1: u16, x2: u16, y2: u16 },
    Circle { cx: u16, cy: u16, r: u16 },
    Text { x: u16, y: u16, content: String },
}

impl Action {
    pub fn point(x: u16, y: u16) -> Result<Self> {
        let a = Action::Point { x, y };
        a.validate()?;
        Ok(a)
    }

    pub fn line(x1: u16, y1: u16, x2: u16, y2: u16) -> Result<Self> {
        let a = Action::Line { x1, y1, x2, y2 };
        a.validate()?;
        Ok(a)
    }

    pub fn rectangle(x1: u16, y1: u16, x2: u16, y2: u16) -> Result<Self> {
        let a = Action::Rectangle { x1, y1, x2, y2 };
        a.validate()?;
        Ok(a)
    }

    pub fn circle(cx: u16, cy: u16, r: u16) -> Result<Self> {
        let a = Action::Circle { cx, cy, r };
        a.validate()?;
        Ok(a)
    }

    pub fn text(x: u16, y: u16, content: impl Into<String>) -> Result<Self> {
        let a = Action::Text {
            x,
            y,
            content: content.into(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Point { .. } => ActionKind::Point,
            Action::Line { .. } => ActionKind::Line,
            Action::Rectangle { .. } => ActionKind::Rectangle,
            Action::Circle { .. } => ActionKind::Circle,
            Action::Text { .. } => ActionKind::Text,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let coords = self.named_coords();
        for (field, v) in coords.iter() {
            check_coord(field, i64::from(*v))?;
        }
        match self {
            Action::Rectangle { x1, y1, x2, y2 } if x1 > x2 || y1 > y2 => {
                Err(TrajectoryError::InvalidAction(format!(
                    "rectangle corners not ordered: ({x1},{y1})-({x2},{y2})"
                )))
            }
            Action::Circle { r: 0, .. } => Err(TrajectoryError::InvalidAction(
                "circle radius must be positive".into(),
            )),
            Action::Text { content, .. } if content.is_empty() => Err(
                TrajectoryError::InvalidAction("text content must be non-empty".into()),
            ),
            _ => Ok(()),
        }
    }

    fn named_coords(&self) -> Vec<(&'static str, u16)> {
        match *self {
            Action::Point { x, y } | Action::Text { x, y, .. } => vec![("x", x), ("y", y)],
            Action::Line { x1, y1, x2, y2 } | Action::Rectangle { x1, y1, x2, y2 } => {
                vec![("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)]
            }
            Action::Circle { cx, cy, r } => vec![("cx", cx), ("cy", cy), ("r", r)],
        }
    }

    /// Geometric center in normalized coordinates: the point itself, the
    /// line midpoint, the box center, or the circle center.
    pub fn center(&self) -> (f64, f64) {
        match *self {
            Action::Point { x, y } | Action::Text { x, y, .. } => (f64::from(x), f64::from(y)),
            Action::Line { x1, y1, x2, y2 } | Action::Rectangle { x1, y1, x2, y2 } => (
                (f64::from(x1) + f64::from(x2)) / 2.0,
                (f64::from(y1) + f64::from(y2)) / 2.0,
            ),
            Action::Circle { cx, cy, .. } => (f64::from(cx), f64::from(cy)),
        }
    }

    /// Rigid translation by `(dx, dy)`. Positional coordinates are clamped
    /// to the grid; circle radii are kept.
    pub fn translated(&self, dx: i64, dy: i64) -> Action {
        let mx = |v: u16| clamp_coord(i64::from(v) + dx);
        let my = |v: u16| clamp_coord(i64::from(v) + dy);
        match self {
            Action::Point { x, y } => Action::Point {
                x: mx(*x),
                y: my(*y),
            },
            Action::Line { x1, y1, x2, y2 } => Action::Line {
                x1: mx(*x1),
                y1: my(*y1),
                x2: mx(*x2),
                y2: my(*y2),
            },
            Action::Rectangle { x1, y1, x2, y2 } => Action::Rectangle {
                x1: mx(*x1),
                y1: my(*y1),
                x2: mx(*x2),
                y2: my(*y2),
            },
            Action::Circle { cx, cy, r } => Action::Circle {
                cx: mx(*cx),
                cy: my(*cy),
                r: *r,
            },
            Action::Text { x, y, content } => Action::Text {
                x: mx(*x),
                y: my(*y),
                content: content.clone(),
            },
        }
    }

    /// Translate so that [`Action::center`] lands as close as the integer
    /// grid allows to `(x, y)`.
    pub fn centered_at(&self, x: f64, y: f64) -> Action {
        let (cx, cy) = self.center();
        self.translated((x - cx).round() as i64, (y - cy).round() as i64)
    }
}

fn check_coord(field: &'static str, value: i64) -> Result<()> {
    if (0..=i64::from(COORD_MAX)).contains(&value) {
        Ok(())
    } else {
        Err(TrajectoryError::CoordinateOutOfRange { field, value })
    }
}

pub(crate) fn clamp_coord(v: i64) -> u16 {
    v.clamp(0, i64::from(COORD_MAX)) as u16
}

/// Wire shape used for parsing: wide integers so that out-of-range values
/// are reported as validation errors rather than as type mismatches.
#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawAction {
    Point { x: i64, y: i64 },
    Line { x1: i64, y1: i64, x2: i64, y2: i64 },
    Rectangle { x1: i64, y1: i64, x2: i64, y2: i64 },
    Circle { cx: i64, cy: i64, r: i64 },
    Text { x: i64, y: i64, content: String },
}

impl TryFrom<RawAction> for Action {
    type Error = TrajectoryError;

    fn try_from(raw: RawAction) -> Result<Self> {
        let c = |field: &'static str, v: i64| -> Result<u16> {
            check_coord(field, v)?;
            Ok(v as u16)
        };
        let action = match raw {
            RawAction::Point { x, y } => Action::Point {
                x: c("x", x)?,
                y: c("y", y)?,
            },
            RawAction::Line { x1, y1, x2, y2 } => Action::Line {
                x1: c("x1", x1)?,
                y1: c("y1", y1)?,
                x2: c("x2", x2)?,
                y2: c("y2", y2)?,
            },
            RawAction::Rectangle { x1, y1, x2, y2 } => Action::Rectangle {
                x1: c("x1", x1)?,
                y1: c("y1", y1)?,
                x2: c("x2", x2)?,
                y2: c("y2", y2)?,
            },
            RawAction::Circle { cx, cy, r } => Action::Circle {
                cx: c("cx", cx)?,
                cy: c("cy", cy)?,
                r: c("r", r)?,
            },
            RawAction::Text { x, y, content } => Action::Text {
                x: c("x", x)?,
                y: c("y", y)?,
                content,
            },
        };
        action.validate()?;
        Ok(action)
    }
}

/// Parse one serialized action record.
pub fn parse_action(record: &str) -> Result<Action> {
    let raw: RawAction =
        serde_json::from_str(record).map_err(|e| TrajectoryError::Parse(e.to_string()))?;
    Action::try_from(raw)
}

/// Canonical serialized form of an action.
pub fn serialize_action(action: &Action) -> String {
    serde_json::to_string(action).expect("action serialization is infallible")
}

/// Four-level step quality judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QualityJudgment {
    Excellent,
    Acceptable,
    Poor,
    Unacceptable,
}

impl QualityJudgment {
    /// Best to worst.
    pub const ALL: [QualityJudgment; 4] = [
        QualityJudgment::Excellent,
        QualityJudgment::Acceptable,
        QualityJudgment::Poor,
        QualityJudgment::Unacceptable,
    ];

    pub fn score(self) -> f64 {
        judgment_to_score(self)
    }

    pub fn index(self) -> usize {
        match self {
            QualityJudgment::Excellent => 0,
            QualityJudgment::Acceptable => 1,
            QualityJudgment::Poor => 2,
            QualityJudgment::Unacceptable => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityJudgment::Excellent => "Excellent",
            QualityJudgment::Acceptable => "Acceptable",
            QualityJudgment::Poor => "Poor",
            QualityJudgment::Unacceptable => "Unacceptable",
        }
    }
}

impl fmt::Display for QualityJudgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar process score of a judgment.
pub fn judgment_to_score(j: QualityJudgment) -> f64 {
    match j {
        QualityJudgment::Excellent => 4.0,
        QualityJudgment::Acceptable => 3.0,
        QualityJudgment::Poor => 2.0,
        QualityJudgment::Unacceptable => 1.0,
    }
}

/// One intent/action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStep")]
pub struct Step {
    intent: String,
    action: Action,
    token_length: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    judgment: Option<QualityJudgment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    intent: String,
    action: Action,
    token_length: u32,
    #[serde(default)]
    judgment: Option<QualityJudgment>,
}

impl TryFrom<RawStep> for Step {
    type Error = TrajectoryError;

    fn try_from(raw: RawStep) -> Result<Self> {
        Step::new(raw.intent, raw.action, raw.token_length, raw.judgment)
    }
}

impl Step {
    pub fn new(
        intent: impl Into<String>,
        action: Action,
        token_length: u32,
        judgment: Option<QualityJudgment>,
    ) -> Result<Self> {
        let intent = intent.into();
        if intent.is_empty() {
            return Err(TrajectoryError::InvalidStep(
                "intent must be non-empty".into(),
            ));
        }
        if token_length == 0 {
            return Err(TrajectoryError::InvalidStep(
                "token_length must be >= 1".into(),
            ));
        }
        action.validate()?;
        Ok(Step {
            intent,
            action,
            token_length,
            judgment,
        })
    }

    /// Step whose token length is the proxy `chars(intent) + len(serialize_action(action))`.
    pub fn with_default_length(
        intent: impl Into<String>,
        action: Action,
        judgment: Option<QualityJudgment>,
    ) -> Result<Self> {
        let intent = intent.into();
        let len = default_token_length(&intent, &action);
        Step::new(intent, action, len, judgment)
    }

    pub fn intent(&self) -> &str {
        &self.intent
    }

    pub fn action(&self) -> &Action {
        &self.action
    }

    pub fn token_length(&self) -> u32 {
        self.token_length
    }

    pub fn judgment(&self) -> Option<QualityJudgment> {
        self.judgment
    }

    pub fn with_judgment(mut self, judgment: Option<QualityJudgment>) -> Self {
        self.judgment = judgment;
        self
    }
}

/// Deterministic token-length proxy for a step.
pub fn default_token_length(intent: &str, action: &Action) -> u32 {
    let n = intent.chars().count() + serialize_action(action).chars().count();
    n.max(1) as u32
}

/// One complete multi-step answer to a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResponse")]
pub struct Response {
    prompt_id: String,
    terminal_reward: f64,
    total_token_length: u32,
    steps: Vec<Step>,
    final_answer: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    prompt_id: String,
    terminal_reward: f64,
    total_token_length: u32,
    steps: Vec<Step>,
    final_answer: String,
}

impl TryFrom<RawResponse> for Response {
    type Error = TrajectoryError;

    fn try_from(raw: RawResponse) -> Result<Self> {
        Response::new(
            raw.prompt_id,
            raw.steps,
            raw.final_answer,
            raw.terminal_reward,
            raw.total_token_length,
        )
    }
}

impl Response {
    pub fn new(
        prompt_id: impl Into<String>,
        steps: Vec<Step>,
        final_answer: impl Into<String>,
        terminal_reward: f64,
        total_token_length: u32,
    ) -> Result<Self> {
        if !terminal_reward.is_finite() {
            return Err(TrajectoryError::InvalidResponse(format!(
                "terminal_reward must be finite, got {terminal_reward}"
            )));
        }
        if total_token_length == 0 {
            return Err(TrajectoryError::InvalidResponse(
                "total_token_length must be >= 1".into(),
            ));
        }
        let step_total: u64 = steps.iter().map(|s| u64::from(s.token_length)).sum();
        if step_total > u64::from(total_token_length) {
            return Err(TrajectoryError::InvalidResponse(format!(
                "step lengths sum to {step_total}, exceeding total_token_length {total_token_length}"
            )));
        }
        Ok(Response {
            prompt_id: prompt_id.into(),
            terminal_reward,
            total_token_length,
            steps,
            final_answer: final_answer.into(),
        })
    }

    /// Response whose total length is the step lengths plus the character
    /// count of the final answer.
    pub fn with_default_length(
        prompt_id: impl Into<String>,
        steps: Vec<Step>,
        final_answer: impl Into<String>,
        terminal_reward: f64,
    ) -> Result<Self> {
        let final_answer = final_answer.into();
        let total: u32 =
            steps.iter().map(|s| s.token_length).sum::<u32>() + final_answer.chars().count() as u32;
        Response::new(
            prompt_id,
            steps,
            final_answer,
            terminal_reward,
            total.max(1),
        )
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn final_answer(&self) -> &str {
        &self.final_answer
    }

    pub fn terminal_reward(&self) -> f64 {
        self.terminal_reward
    }

    pub fn total_token_length(&self) -> u32 {
        self.total_token_length
    }

    pub fn with_terminal_reward(mut self, reward: f64) -> Result<Self> {
        if !reward.is_finite() {
            return Err(TrajectoryError::InvalidResponse(format!(
                "terminal_reward must be finite, got {reward}"
            )));
        }
        self.terminal_reward = reward;
        Ok(self)
    }

    /// Canonical single-line JSON form.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("response serialization is infallible")
    }
}

/// Sibling responses to one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseGroup {
    prompt_id: String,
    responses: Vec<Response>,
}

impl ResponseGroup {
    /// Build a group of exactly `k` responses sharing `prompt_id`.
    pub fn new(prompt_id: impl Into<String>, responses: Vec<Response>, k: usize) -> Result<Self> {
        let prompt_id = prompt_id.into();
        let fail = |reason: String| TrajectoryError::InvalidGroup {
            prompt_id: prompt_id.clone(),
            reason,
        };
        if k < 2 {
            return Err(fail(format!("group size k must be >= 2, got {k}")));
        }
        if responses.len() != k {
            return Err(fail(format!(
                "expected {k} responses, found {}",
                responses.len()
            )));
        }
        if let Some(r) = responses.iter().find(|r| r.prompt_id != prompt_id) {
            return Err(fail(format!(
                "response belongs to prompt `{}`",
                r.prompt_id
            )));
        }
        Ok(ResponseGroup {
            prompt_id,
            responses,
        })
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.terminal_reward).collect()
    }
}

/// Read a trajectory JSONL stream. Blank lines are skipped; errors carry
/// the 1-based line number.
pub fn read_trajectories<R: BufRead>(reader: R) -> Result<Vec<Response>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response: Response =
            serde_json::from_str(&line).map_err(|e| TrajectoryError::Line {
                line: idx + 1,
                source: Box::new(TrajectoryError::Parse(e.to_string())),
            })?;
        out.push(response);
    }
    Ok(out)
}

pub fn write_trajectories<W: Write>(mut writer: W, responses: &[Response]) -> Result<()> {
    for r in responses {
        writeln!(writer, "{}", r.to_json_line())?;
    }
    Ok(())
}

/// Group responses by `prompt_id` in order of first appearance, checking
/// that every group has exactly `k` members.
pub fn group_responses(responses: Vec<Response>, k: usize) -> Result<Vec<ResponseGroup>> {
    let mut order: Vec<String> = Vec::new();
    let mut buckets: HashMap<String, Vec<Response>> = HashMap::new();
    for r in responses {
        if !buckets.contains_key(&r.prompt_id) {
            order.push(r.prompt_id.clone());
        }
        buckets.entry(r.prompt_id.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|id| {
            let members = buckets.remove(&id).unwrap_or_default();
            ResponseGroup::new(id, members, k)
        })
        .collect()
}
