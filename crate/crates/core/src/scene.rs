//! Deterministic symbolic 3D scenes: the brute-force oracle the pipeline is
//! desk-tested against.
//!
//! A scene is a set of named, colored point objects plus a starting camera
//! pose. From that we can (a) render any camera pose to an exact symbolic
//! view, (b) verify a restricted grammar of spatial-change claims with
//! certainty, and (c) generate binary spatial questions whose gold answer is
//! computed by exhaustive geometric evaluation. Objects never occlude each
//! other; that keeps every predicate exactly decidable.
//!
//! Bearing convention (fixed once, used everywhere): bearings are measured
//! from the camera's forward axis in degrees, positive to the **right**.
//! Turning left by θ therefore adds +θ to every object bearing.

use rand_core::{RngCore, SeedableRng};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::domain::{ActionKind, Claim, ClaimEvaluation, Pose, QuestionInstance, Verdict, TURN_MAGNITUDES};
use crate::error::{Error, Result};
use crate::pose::{action_to_pose, compose};
use crate::store::content_ref;

/// Field of view used by the oracle pipeline unless configured otherwise.
pub const ORACLE_FOV_DEG: f64 = 90.0;
/// Side length of rasterized oracle frames, in pixels.
pub const ORACLE_IMAGE_SIZE: u32 = 128;

// ---------------------------------------------------------------------------
// Scene and symbolic views
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    /// World position in meters, in the start camera's axes.
    pub position: [f64; 3],
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub camera_start: Pose,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.objects.iter().enumerate() {
            if !a.position.iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!(
                    "object {:?} has a non-finite position",
                    a.name
                )));
            }
            for b in &self.objects[i + 1..] {
                if a.name.eq_ignore_ascii_case(&b.name) {
                    return Err(Error::validation(format!(
                        "duplicate object name {:?}",
                        a.name
                    )));
                }
            }
        }
        self.camera_start.check_rotation(1e-9)
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Scene> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }

    fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name.eq_ignore_ascii_case(name))
    }
}

/// One object as seen from a camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub name: String,
    /// Signed degrees from camera forward; positive = right.
    pub bearing_deg: f64,
    /// Euclidean distance from the camera, meters.
    pub distance: f64,
    /// Strictly negative bearing, i.e. left of center.
    pub in_left_half: bool,
}

/// Exact symbolic rendering of a scene from one camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicFrame {
    pub visible: Vec<VisibleObject>,
    pub pose: Pose,
}

impl SymbolicFrame {
    pub fn find(&self, name: &str) -> Option<&VisibleObject> {
        self.visible.iter().find(|v| v.name.eq_ignore_ascii_case(name))
    }
}

/// Renders the scene from an absolute camera pose (world frame).
///
/// An object is visible iff its distance is positive and its bearing lies
/// within ±fov/2 (inclusive). Entries keep the scene's object order.
pub fn render_view(scene: &Scene, pose: &Pose, fov_deg: f64) -> SymbolicFrame {
    assert!(
        fov_deg > 0.0 && fov_deg <= 180.0,
        "fov must lie in (0, 180], got {fov_deg}"
    );
    let world_to_camera = pose.inverse();
    let mut visible = Vec::new();
    for object in &scene.objects {
        let p = world_to_camera.transform_point(object.position);
        let distance = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if distance <= 0.0 {
            continue;
        }
        // +x is camera-left, so right-positive bearing flips the sign of x.
        let bearing_deg = (-p[0]).atan2(p[2]).to_degrees();
        if bearing_deg.abs() <= fov_deg / 2.0 {
            visible.push(VisibleObject {
                name: object.name.clone(),
                bearing_deg,
                distance,
                in_left_half: bearing_deg < 0.0,
            });
        }
    }
    SymbolicFrame { visible, pose: *pose }
}

// ---------------------------------------------------------------------------
// Rasterization (colored discs on white)
// ---------------------------------------------------------------------------

/// Deterministically rasterizes a symbolic frame to a PNG: each visible
/// object becomes a colored disc placed by bearing, sized by 1/distance,
/// drawn far-to-near on a white background.
pub fn render_png(scene: &Scene, frame: &SymbolicFrame, fov_deg: f64, size: u32) -> Vec<u8> {
    let mut img = image::RgbImage::from_pixel(size, size, image::Rgb([255, 255, 255]));
    let mut order: Vec<&VisibleObject> = frame.visible.iter().collect();
    order.sort_by(|a, b| {
        b.distance
            .partial_cmp(&a.distance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    for v in order {
        let color = scene
            .object(&v.name)
            .map(|o| color_rgb(&o.color))
            .unwrap_or([0, 0, 0]);
        let cx = (v.bearing_deg / fov_deg + 0.5) * size as f64;
        let cy = size as f64 / 2.0;
        let radius = (size as f64 * 0.08 / v.distance.max(0.25)).clamp(2.0, size as f64 * 0.2);
        draw_disc(&mut img, cx, cy, radius, color);
    }
    let mut bytes = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut bytes);
    image::ImageEncoder::write_image(
        encoder,
        img.as_raw(),
        size,
        size,
        image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory PNG encoding cannot fail");
    bytes
}

fn draw_disc(img: &mut image::RgbImage, cx: f64, cy: f64, radius: f64, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let x0 = (cx - radius).floor().max(0.0) as u32;
    let x1 = (cx + radius).ceil().min(w as f64 - 1.0) as u32;
    let y0 = (cy - radius).floor().max(0.0) as u32;
    let y1 = (cy + radius).ceil().min(h as f64 - 1.0) as u32;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= radius * radius {
                img.put_pixel(x, y, image::Rgb(color));
            }
        }
    }
}

/// Fixed palette for common color names; anything else gets a stable color
/// derived from the name's hash.
fn color_rgb(name: &str) -> [u8; 3] {
    match name.to_ascii_lowercase().as_str() {
        "red" => [220, 50, 47],
        "green" => [64, 160, 43],
        "blue" => [38, 89, 220],
        "yellow" => [231, 195, 0],
        "orange" => [235, 125, 20],
        "purple" => [125, 60, 180],
        "cyan" => [42, 161, 152],
        "magenta" => [211, 54, 130],
        "brown" => [133, 94, 66],
        "black" => [20, 20, 20],
        "gray" | "grey" => [128, 128, 128],
        "pink" => [240, 130, 170],
        other => {
            let digest = <sha2::Sha256 as sha2::Digest>::digest(other.as_bytes());
            [digest[0], digest[1], digest[2]]
        }
    }
}

// ---------------------------------------------------------------------------
// Claim grammar and ground-truth verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn matches(&self, in_left_half: bool) -> bool {
        match self {
            Side::Left => in_left_half,
            Side::Right => !in_left_half,
        }
    }
}

/// A claim in the oracle-decidable grammar. The patterns mirror the
/// high-quality claim phrasings the claim-generation prompt enumerates, so
/// generated claims and oracle-checkable claims share one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum GrammarClaim {
    /// `<obj> appears on the left|right side`
    Appears { name: String, side: Side },
    /// `<obj> disappears on the left|right side`
    Disappears { name: String, side: Side },
    /// `<obj> moves closer to|further from the left|right edge`
    MovesEdge { name: String, closer: bool, side: Side },
    /// `<obj> becomes more|less visible on the left|right side`
    Visibility { name: String, more: bool, side: Side },
}

fn side_of(s: &str) -> Side {
    if s.eq_ignore_ascii_case("left") {
        Side::Left
    } else {
        Side::Right
    }
}

/// Parses one claim sentence against the restricted grammar; `None` when the
/// text falls outside it.
pub fn parse_grammar_claim(text: &str) -> Option<GrammarClaim> {
    static APPEAR: OnceLock<Regex> = OnceLock::new();
    static EDGE: OnceLock<Regex> = OnceLock::new();
    static VISIBILITY: OnceLock<Regex> = OnceLock::new();
    let appear = APPEAR.get_or_init(|| {
        Regex::new(r"(?i)^(?:the )?(.+?) (appears|disappears) on the (left|right) side\.?$").unwrap()
    });
    let edge = EDGE.get_or_init(|| {
        Regex::new(r"(?i)^(?:the )?(.+?) moves (closer to|further from) the (left|right) edge\.?$")
            .unwrap()
    });
    let visibility = VISIBILITY.get_or_init(|| {
        Regex::new(r"(?i)^(?:the )?(.+?) becomes (more|less) visible on the (left|right) side\.?$")
            .unwrap()
    });

    let text = text.trim();
    if let Some(c) = appear.captures(text) {
        let name = c[1].trim().to_string();
        let side = side_of(&c[3]);
        return Some(if c[2].eq_ignore_ascii_case("appears") {
            GrammarClaim::Appears { name, side }
        } else {
            GrammarClaim::Disappears { name, side }
        });
    }
    if let Some(c) = edge.captures(text) {
        return Some(GrammarClaim::MovesEdge {
            name: c[1].trim().to_string(),
            closer: c[2].eq_ignore_ascii_case("closer to"),
            side: side_of(&c[3]),
        });
    }
    if let Some(c) = visibility.captures(text) {
        return Some(GrammarClaim::Visibility {
            name: c[1].trim().to_string(),
            more: c[2].eq_ignore_ascii_case("more"),
            side: side_of(&c[3]),
        });
    }
    None
}

fn entailed(reasoning: String) -> ClaimEvaluation {
    ClaimEvaluation::new(Verdict::Entailed, 1.0, reasoning)
}

fn contradicted(reasoning: String) -> ClaimEvaluation {
    ClaimEvaluation::new(Verdict::Contradicted, 1.0, reasoning)
}

fn insufficient(reasoning: String) -> ClaimEvaluation {
    ClaimEvaluation::new(Verdict::Insufficient, 0.0, reasoning)
}

/// Decides a claim exactly from two symbolic frames.
///
/// Decidable claims get ENTAILED or CONTRADICTED at confidence 1.0. The
/// INSUFFICIENT sink (confidence 0.0) covers text outside the grammar,
/// objects the frames never saw, and motion claims about objects not visible
/// in both frames.
pub fn oracle_verify(claim: &Claim, before: &SymbolicFrame, after: &SymbolicFrame) -> ClaimEvaluation {
    let Some(parsed) = parse_grammar_claim(&claim.text) else {
        return insufficient(format!(
            "claim {:?} does not match the oracle grammar",
            claim.text
        ));
    };
    let name = match &parsed {
        GrammarClaim::Appears { name, .. }
        | GrammarClaim::Disappears { name, .. }
        | GrammarClaim::MovesEdge { name, .. }
        | GrammarClaim::Visibility { name, .. } => name.clone(),
    };
    let was = before.find(&name);
    let now = after.find(&name);
    if was.is_none() && now.is_none() {
        return insufficient(format!("no object named {name:?} is visible in either frame"));
    }

    match parsed {
        GrammarClaim::Appears { side, .. } => match (was, now) {
            (None, Some(v)) if side.matches(v.in_left_half) => entailed(format!(
                "{name} was not visible before and is now at bearing {:.2}°",
                v.bearing_deg
            )),
            (None, Some(v)) => contradicted(format!(
                "{name} appeared, but at bearing {:.2}° on the other side",
                v.bearing_deg
            )),
            (Some(_), _) => contradicted(format!("{name} was already visible before")),
            (None, None) => unreachable!("both-invisible claims return early"),
        },
        GrammarClaim::Disappears { side, .. } => match (was, now) {
            (Some(v), None) if side.matches(v.in_left_half) => entailed(format!(
                "{name} left the view from bearing {:.2}°",
                v.bearing_deg
            )),
            (Some(v), None) => contradicted(format!(
                "{name} disappeared, but from bearing {:.2}° on the other side",
                v.bearing_deg
            )),
            (_, Some(_)) => contradicted(format!("{name} is still visible after")),
            (None, None) => unreachable!("both-invisible claims return early"),
        },
        GrammarClaim::MovesEdge { closer, side, .. } => {
            let (Some(was), Some(now)) = (was, now) else {
                return insufficient(format!(
                    "{name} is not visible in both frames, so its motion is undecidable"
                ));
            };
            // Moving toward the left edge means the bearing decreases; toward
            // the right edge, increases. "Further from" flips the direction.
            let toward_side = match side {
                Side::Left => now.bearing_deg < was.bearing_deg,
                Side::Right => now.bearing_deg > was.bearing_deg,
            };
            let holds = if closer { toward_side } else { !toward_side && now.bearing_deg != was.bearing_deg };
            if holds {
                entailed(format!(
                    "{name} bearing moved {:.2}° -> {:.2}°",
                    was.bearing_deg, now.bearing_deg
                ))
            } else {
                contradicted(format!(
                    "{name} bearing moved {:.2}° -> {:.2}°, not {} the {} edge",
                    was.bearing_deg,
                    now.bearing_deg,
                    if closer { "toward" } else { "away from" },
                    match side {
                        Side::Left => "left",
                        Side::Right => "right",
                    }
                ))
            }
        }
        GrammarClaim::Visibility { more, side, .. } => {
            let (Some(was), Some(now)) = (was, now) else {
                return insufficient(format!(
                    "{name} is not visible in both frames, so its visibility change is undecidable"
                ));
            };
            if !side.matches(now.in_left_half) {
                return contradicted(format!(
                    "{name} is at bearing {:.2}°, on the other side",
                    now.bearing_deg
                ));
            }
            // More visible = nearer to the camera than before.
            let grew = now.distance < was.distance;
            let holds = if more { grew } else { now.distance > was.distance };
            if holds {
                entailed(format!(
                    "{name} distance changed {:.3} m -> {:.3} m",
                    was.distance, now.distance
                ))
            } else {
                contradicted(format!(
                    "{name} distance changed {:.3} m -> {:.3} m, not {} visible",
                    was.distance,
                    now.distance,
                    if more { "more" } else { "less" }
                ))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Question generation
// ---------------------------------------------------------------------------

/// Minimum bearing separation for an unambiguous left-of question, degrees.
const AMBIGUITY_MARGIN_DEG: f64 = 1e-6;

/// Generates a deterministic 2-choice spatial question for the scene.
///
/// The question names a turn and asks for the left/right order of two
/// objects as seen **after** that turn ("After turning left 18 degrees, is
/// the A to the left of the B?" with choices yes/no). Both objects must be
/// visible from the named viewpoint while not both visible from the start,
/// so the answer genuinely requires leaving the start view. The gold answer
/// is computed by exhaustive symbolic evaluation at the named viewpoint.
pub fn generate_question(scene: &Scene, seed: u64) -> Result<QuestionInstance> {
    scene.validate()?;
    if scene.objects.len() < 2 {
        return Err(Error::Generation(format!(
            "need at least 2 objects to pose a question, scene has {}",
            scene.objects.len()
        )));
    }
    let start_view = render_view(scene, &scene.camera_start, ORACLE_FOV_DEG);
    let start_png = render_png(scene, &start_view, ORACLE_FOV_DEG, ORACLE_IMAGE_SIZE);
    let image_ref = content_ref(&start_png);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = scene.objects.len();
    for _attempt in 0..100 {
        let kind = if rng.next_u32() % 2 == 0 {
            ActionKind::TurnLeft
        } else {
            ActionKind::TurnRight
        };
        let magnitude = TURN_MAGNITUDES[rng.next_u32() as usize % 3];
        let a = rng.next_u32() as usize % n;
        let b = (a + 1 + rng.next_u32() as usize % (n - 1)) % n;
        let turn = crate::domain::Action { kind, magnitude };

        let queried_pose = compose(&scene.camera_start, &action_to_pose(&turn));
        let view = render_view(scene, &queried_pose, ORACLE_FOV_DEG);
        let first = view.find(&scene.objects[a].name);
        let second = view.find(&scene.objects[b].name);
        let (Some(first), Some(second)) = (first, second) else {
            continue;
        };
        // must not be answerable from the start view
        if start_view.find(&first.name).is_some() && start_view.find(&second.name).is_some() {
            continue;
        }
        if (first.bearing_deg - second.bearing_deg).abs() < AMBIGUITY_MARGIN_DEG {
            continue; // collinear with the camera: ambiguous
        }

        let direction = match kind {
            ActionKind::TurnLeft => "left",
            ActionKind::TurnRight => "right",
            ActionKind::MoveForward => unreachable!("questions only use turns"),
        };
        let question = format!(
            "After turning {direction} {magnitude} degrees, is the {} to the left of the {}?",
            first.name, second.name
        );
        let gold_index = if first.bearing_deg < second.bearing_deg { 0 } else { 1 };
        let instance = QuestionInstance {
            image_ref: image_ref.clone(),
            question,
            choices: vec!["yes".into(), "no".into()],
            gold_index: Some(gold_index),
            category: "oracle".into(),
        };
        instance.validate()?;
        return Ok(instance);
    }
    Err(Error::Generation(
        "no unambiguous question found in 100 attempts; scene too degenerate".into(),
    ))
}

/// Parses a generated question back into (turn, first object, second object).
/// This is the inverse of the `generate_question` template and is what lets
/// scene-backed test backends answer questions exactly.
pub fn parse_question(text: &str) -> Option<(crate::domain::Action, String, String)> {
    static QUESTION: OnceLock<Regex> = OnceLock::new();
    let re = QUESTION.get_or_init(|| {
        Regex::new(
            r"(?i)^After turning (left|right) (\d+(?:\.\d+)?) degrees, is the (.+?) to the left of the (.+?)\?$",
        )
        .unwrap()
    });
    let c = re.captures(text.trim())?;
    let kind = if c[1].eq_ignore_ascii_case("left") {
        ActionKind::TurnLeft
    } else {
        ActionKind::TurnRight
    };
    let magnitude: f64 = c[2].parse().ok()?;
    let action = crate::domain::Action::new(kind, magnitude).ok()?;
    Some((action, c[3].trim().to_string(), c[4].trim().to_string()))
}
