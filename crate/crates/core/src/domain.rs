//! Shared domain types for the whole engine.
//!
//! Conventions fixed here and relied on everywhere else:
//! - angles are stored in degrees, distances in meters;
//! - images are referenced by content hash (`sha256:<hex>`), never embedded;
//! - all values are immutable after construction and safe to share across
//!   threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude buckets for forward motion, in meters.
pub const FORWARD_MAGNITUDES: [f64; 3] = [0.25, 0.5, 0.75];
/// Magnitude buckets for turns, in degrees.
pub const TURN_MAGNITUDES: [f64; 3] = [9.0, 18.0, 27.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    MoveForward,
    TurnLeft,
    TurnRight,
}

impl ActionKind {
    pub fn label(&self) -> &'static str {
        match self {
            ActionKind::MoveForward => "move-forward",
            ActionKind::TurnLeft => "turn-left",
            ActionKind::TurnRight => "turn-right",
        }
    }
}

/// A primitive egocentric move: one of three kinds at one of three magnitudes.
///
/// The full action space has exactly 9 elements; see [`ACTION_SPACE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    /// Meters for `MoveForward`, degrees for turns.
    pub magnitude: f64,
}

impl Action {
    pub fn new(kind: ActionKind, magnitude: f64) -> Result<Self> {
        let action = Action { kind, magnitude };
        action.validate()?;
        Ok(action)
    }

    pub fn validate(&self) -> Result<()> {
        let legal = match self.kind {
            ActionKind::MoveForward => FORWARD_MAGNITUDES.contains(&self.magnitude),
            ActionKind::TurnLeft | ActionKind::TurnRight => {
                TURN_MAGNITUDES.contains(&self.magnitude)
            }
        };
        if legal {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "illegal magnitude {} for {:?}",
                self.magnitude, self.kind
            )))
        }
    }

    /// Magnitude bucket index (0.25m/9° -> 0, 0.5m/18° -> 1, 0.75m/27° -> 2).
    pub fn magnitude_bucket(&self) -> Option<usize> {
        let buckets = match self.kind {
            ActionKind::MoveForward => &FORWARD_MAGNITUDES,
            _ => &TURN_MAGNITUDES,
        };
        buckets.iter().position(|m| *m == self.magnitude)
    }

    /// Human-readable description used in prompts, e.g. "turning left 18 degrees".
    pub fn describe(&self) -> String {
        match self.kind {
            ActionKind::MoveForward => format!("moving forward {} meters", self.magnitude),
            ActionKind::TurnLeft => format!("turning left {} degrees", self.magnitude),
            ActionKind::TurnRight => format!("turning right {} degrees", self.magnitude),
        }
    }
}

/// The 9 legal actions in canonical order: forward magnitudes ascending, then
/// left turns, then right turns. Expansion and analytics rely on this order.
pub const ACTION_SPACE: [Action; 9] = [
    Action { kind: ActionKind::MoveForward, magnitude: 0.25 },
    Action { kind: ActionKind::MoveForward, magnitude: 0.5 },
    Action { kind: ActionKind::MoveForward, magnitude: 0.75 },
    Action { kind: ActionKind::TurnLeft, magnitude: 9.0 },
    Action { kind: ActionKind::TurnLeft, magnitude: 18.0 },
    Action { kind: ActionKind::TurnLeft, magnitude: 27.0 },
    Action { kind: ActionKind::TurnRight, magnitude: 9.0 },
    Action { kind: ActionKind::TurnRight, magnitude: 18.0 },
    Action { kind: ActionKind::TurnRight, magnitude: 27.0 },
];

/// A rigid transform in SE(3): camera-to-world rotation plus translation.
///
/// Axis convention (fixed for backend interop): the camera looks along +z,
/// up is +y, and the frame is right-handed, which puts +x to the camera's
/// left. A left turn is a positive rotation about +y.
///
/// JSON form: `{"rotation": [r00..r22 row-major], "translation": [x,y,z]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseWire", into = "PoseWire")]
pub struct Pose {
    /// Row-major 3x3 rotation matrix, orthonormal with det +1.
    pub rotation: [[f64; 3]; 3],
    /// Translation in meters.
    pub translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct PoseWire {
    rotation: Vec<f64>,
    translation: [f64; 3],
}

impl From<Pose> for PoseWire {
    fn from(p: Pose) -> Self {
        PoseWire {
            rotation: p.rotation.iter().flatten().copied().collect(),
            translation: p.translation,
        }
    }
}

impl TryFrom<PoseWire> for Pose {
    type Error = Error;

    fn try_from(w: PoseWire) -> Result<Self> {
        if w.rotation.len() != 9 {
            return Err(Error::validation(format!(
                "rotation must have 9 elements, got {}",
                w.rotation.len()
            )));
        }
        let r = &w.rotation;
        let pose = Pose {
            rotation: [
                [r[0], r[1], r[2]],
                [r[3], r[4], r[5]],
                [r[6], r[7], r[8]],
            ],
            translation: w.translation,
        };
        pose.check_rotation(1e-9)?;
        Ok(pose)
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    /// Max absolute deviation of RᵀR from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expected).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Validates that the rotation is orthonormal with det +1 within `tol`.
    pub fn check_rotation(&self, tol: f64) -> Result<()> {
        let ortho = self.orthonormality_error();
        if ortho > tol {
            return Err(Error::validation(format!(
                "rotation not orthonormal: max |RᵀR - I| = {ortho:e}"
            )));
        }
        let det = self.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::validation(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        Ok(())
    }
}

/// One step of a trajectory: the action taken and the cumulative pose after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: Action,
    pub pose: Pose,
}

/// An ordered egocentric action sequence with cumulative poses.
///
/// Step i's pose is the composition of the poses of steps 1..=i, so the last
/// step's pose is the camera pose at the end of the trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn empty() -> Self {
        Trajectory { steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Cumulative pose at the end of the trajectory; identity when empty.
    pub fn final_pose(&self) -> Pose {
        self.steps.last().map(|s| s.pose).unwrap_or_else(Pose::identity)
    }

    pub fn last_action(&self) -> Option<Action> {
        self.steps.last().map(|s| s.action)
    }
}

/// A multiple-choice spatial question over a reference image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    /// Content-addressed id of the initial image.
    pub image_ref: String,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_index: Option<usize>,
    pub category: String,
}

impl QuestionInstance {
    pub fn validate(&self) -> Result<()> {
        if self.choices.len() < 2 {
            return Err(Error::validation(format!(
                "a question needs at least 2 choices, got {}",
                self.choices.len()
            )));
        }
        if let Some(g) = self.gold_index {
            if g >= self.choices.len() {
                return Err(Error::validation(format!(
                    "gold_index {} out of range for {} choices",
                    g,
                    self.choices.len()
                )));
            }
        }
        Ok(())
    }
}

/// One imagined frame with provenance and (once scored) its verifier reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image_ref: String,
    pub producing_action: Action,
    /// Beam depth at creation; the initial image is not a frame, so depth >= 1.
    pub depth: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
}

impl FrameRecord {
    pub fn new(image_ref: impl Into<String>, producing_action: Action, depth: u32) -> Self {
        FrameRecord {
            image_ref: image_ref.into(),
            producing_action,
            depth,
            score: None,
            quality_score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

/// The m-frame output of one world-model rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaginedVideo {
    pub frames: Vec<FrameRecord>,
    pub source_trajectory: Trajectory,
    pub prompt: String,
}

impl ImaginedVideo {
    pub fn new(frames: Vec<FrameRecord>, source_trajectory: Trajectory, prompt: String) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::validation("an imagined video needs at least one frame"));
        }
        Ok(ImaginedVideo {
            frames,
            source_trajectory,
            prompt,
        })
    }
}

/// A single-sentence, frame-anchored spatial assertion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    /// (before_ref, after_ref) image pair the claim is anchored to.
    pub frame_range: (String, String),
}

impl Claim {
    pub fn new(text: impl Into<String>, before_ref: impl Into<String>, after_ref: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::validation("claim text is empty"));
        }
        if !is_single_sentence(trimmed) {
            return Err(Error::validation(format!(
                "claim is not a single sentence: {trimmed:?}"
            )));
        }
        Ok(Claim {
            text: trimmed.to_string(),
            frame_range: (before_ref.into(), after_ref.into()),
        })
    }
}

/// A sentence terminator is '.', '!' or '?' followed by whitespace or the end
/// of the text; a '.' inside a number ("0.5") does not terminate. Single
/// sentence means no terminator is followed by further non-whitespace text.
fn is_single_sentence(text: &str) -> bool {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let next = chars.get(i + 1);
            let terminates = next.is_none_or(|n| n.is_whitespace());
            if terminates && chars[i + 1..].iter().any(|n| !n.is_whitespace()) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Entailed,
    Contradicted,
    Insufficient,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Entailed => "ENTAILED",
            Verdict::Contradicted => "CONTRADICTED",
            Verdict::Insufficient => "INSUFFICIENT",
        };
        write!(f, "{s}")
    }
}

/// A verifier's judgment of one claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimEvaluation {
    pub verdict: Verdict,
    /// In [0,1]; constructors clamp out-of-range inputs.
    pub confidence: f64,
    pub reasoning: String,
}

impl ClaimEvaluation {
    pub fn new(verdict: Verdict, confidence: f64, reasoning: impl Into<String>) -> Self {
        let confidence = if confidence.is_finite() {
            confidence.clamp(0.0, 1.0)
        } else {
            0.0
        };
        ClaimEvaluation {
            verdict,
            confidence,
            reasoning: reasoning.into(),
        }
    }
}

/// Global top-k set of scored frames, sorted by score descending.
///
/// Ties keep insertion order: the first frame to reach a given score ranks
/// ahead of later frames with the same score, and a new frame that only ties
/// the current minimum at capacity is not admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBuffer {
    pub capacity: usize,
    pub entries: Vec<FrameRecord>,
}

impl EvidenceBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("evidence buffer capacity must be >= 1"));
        }
        Ok(EvidenceBuffer {
            capacity,
            entries: Vec::new(),
        })
    }

    /// Inserts a scored frame, keeping the invariants. Unscored or
    /// non-finite-scored frames are rejected.
    pub fn insert(&mut self, frame: FrameRecord) -> Result<()> {
        let score = frame
            .score
            .ok_or_else(|| Error::validation("cannot buffer an unscored frame"))?;
        if !score.is_finite() {
            return Err(Error::validation(format!("non-finite frame score {score}")));
        }
        // Insert after every entry with score >= new score, so equal scores
        // keep first-come order.
        let pos = self
            .entries
            .iter()
            .position(|e| e.score.unwrap_or(f64::NEG_INFINITY) < score)
            .unwrap_or(self.entries.len());
        if pos >= self.capacity {
            return Ok(());
        }
        self.entries.insert(pos, frame);
        self.entries.truncate(self.capacity);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_refs(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.image_ref.clone()).collect()
    }

    pub fn min_score(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.score)
    }
}

/// Outcome of answering one question under one (verifier, k, gamma) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub question_id: String,
    pub predicted_index: usize,
    pub correct: bool,
    /// Producing actions of the frames in the final evidence buffer.
    pub selected_actions: Vec<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_choice_log_likelihoods: Option<Vec<f64>>,
    /// Verifier name ("random", "helpfulness", "visa", or "baseline").
    pub verifier: String,
    pub top_k: usize,
    pub beam_depth: u32,
    /// Set when the answer had to be produced by a fallback (backend failure
    /// or unparseable reply). Omitted from JSON when false.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}
