//! Scene-backed oracle backends: a perfect world model and a perfect VLM.
//!
//! [`SceneSim`] wraps one scene plus a registry mapping every rendered image
//! ref back to its symbolic frame. [`OracleWorld`] implements the world-model
//! interface by rendering the exact composed pose, and [`OracleVlm`]
//! implements the chat and teacher-forcing interfaces by answering from
//! symbolic state — claims it generates are geometrically true, verdicts are
//! exact, helpfulness is the fraction of question objects in view, and the
//! solver reads object order straight out of the evidence frames. Together
//! they make the whole search → verify → answer pipeline desk-testable with
//! known ground truth.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use sha2::Digest;

use crate::client::{
    ChatBackend, ChatRequest, LogprobBackend, LogprobRequest, Part, TokenLogprobs,
};
use crate::domain::{Action, FrameRecord, ImaginedVideo, Pose, QuestionInstance};
use crate::error::{Error, Result};
use crate::pose::{action_to_pose, compose, trajectory_poses};
use crate::prompts::{
    choice_letter, CLAIM_GENERATION_SYSTEM, CLAIM_VERIFICATION_SYSTEM, HELPFULNESS_SYSTEM,
    SOLVER_SYSTEM,
};
use crate::scene::{
    generate_question, oracle_verify, parse_question, render_png, render_view, Scene,
    SymbolicFrame, VisibleObject, ORACLE_FOV_DEG, ORACLE_IMAGE_SIZE,
};
use crate::store::ImageStore;
use crate::world::{WorldBackend, WorldModelRequest};

// ---------------------------------------------------------------------------
// SceneSim: shared scene state and the ref -> frame registry
// ---------------------------------------------------------------------------

/// One scene plus everything the oracle backends share: the image store the
/// rendered views go into and a registry resolving each rendered image ref
/// back to the symbolic frame it depicts (rendering is deterministic, so a
/// ref re-registered from an identical pose maps to an identical frame).
pub struct SceneSim {
    scene: Scene,
    fov_deg: f64,
    image_size: u32,
    store: Arc<ImageStore>,
    frames: Mutex<BTreeMap<String, SymbolicFrame>>,
}

impl SceneSim {
    pub fn new(scene: Scene, store: Arc<ImageStore>) -> Result<Self> {
        scene.validate()?;
        Ok(SceneSim {
            scene,
            fov_deg: ORACLE_FOV_DEG,
            image_size: ORACLE_IMAGE_SIZE,
            store,
            frames: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn store(&self) -> &Arc<ImageStore> {
        &self.store
    }

    /// Renders the view at `pose` (world frame), stores the PNG, registers
    /// the symbolic frame under the resulting content ref, and returns it.
    pub fn register_pose(&self, pose: &Pose) -> Result<String> {
        let frame = render_view(&self.scene, pose, self.fov_deg);
        let bytes = render_png(&self.scene, &frame, self.fov_deg, self.image_size);
        let image_ref = self.store.put(bytes)?;
        self.frames
            .lock()
            .unwrap()
            .insert(image_ref.clone(), frame);
        Ok(image_ref)
    }

    /// The symbolic frame behind a rendered image ref, if the ref is ours.
    pub fn frame_for(&self, image_ref: &str) -> Option<SymbolicFrame> {
        self.frames.lock().unwrap().get(image_ref).cloned()
    }

    /// Registers and returns the x₀ view at the scene's start pose.
    pub fn start_ref(&self) -> Result<String> {
        let start = self.scene.camera_start.clone();
        self.register_pose(&start)
    }

    /// Generates the scene's question for `seed` and registers the start
    /// view so recipients of the question can resolve its image ref.
    pub fn question(&self, seed: u64) -> Result<QuestionInstance> {
        let question = generate_question(&self.scene, seed)?;
        let start = self.start_ref()?;
        debug_assert_eq!(start, question.image_ref);
        Ok(question)
    }
}

// ---------------------------------------------------------------------------
// OracleWorld: the perfect world model
// ---------------------------------------------------------------------------

/// World model that imagines by rendering the scene at the exact composed
/// pose — a pure function of (scene, trajectory, frame count).
pub struct OracleWorld {
    sim: Arc<SceneSim>,
}

impl OracleWorld {
    pub fn new(sim: Arc<SceneSim>) -> Self {
        OracleWorld { sim }
    }
}

impl WorldBackend for OracleWorld {
    fn imagine(&self, request: &WorldModelRequest) -> Result<ImaginedVideo> {
        request.validate()?;
        let actions = request.trajectory.actions();
        let last = *actions.last().expect("validated: trajectory nonempty");
        let prefix = trajectory_poses(&actions[..actions.len() - 1])?.final_pose();
        let m = request.frames_per_rollout;

        // m frames sweep the final action from 1/m of its magnitude to all of
        // it, so the last frame always sits at the trajectory's end pose.
        let mut frames = Vec::with_capacity(m);
        for i in 0..m {
            let fraction = (i + 1) as f64 / m as f64;
            let partial = Action {
                kind: last.kind,
                magnitude: last.magnitude * fraction,
            };
            let relative = compose(&prefix, &action_to_pose(&partial));
            let world_pose = compose(&self.sim.scene.camera_start, &relative);
            let image_ref = self.sim.register_pose(&world_pose)?;
            frames.push(FrameRecord::new(image_ref, last, actions.len() as u32));
        }
        ImaginedVideo::new(frames, request.trajectory.clone(), request.prompt.clone())
    }
}

// ---------------------------------------------------------------------------
// OracleVlm: the perfect vision-language model
// ---------------------------------------------------------------------------

/// Chat + teacher-forcing backend that answers every prompt from symbolic
/// scene state. Requests are dispatched on their system prompt, so this one
/// backend serves claim generation, claim verification, joint helpfulness
/// scoring, and question answering.
pub struct OracleVlm {
    sim: Arc<SceneSim>,
}

impl OracleVlm {
    pub fn new(sim: Arc<SceneSim>) -> Self {
        OracleVlm { sim }
    }

    /// Claim generation: one claim per question object describing its true
    /// state change from BEFORE to AFTER. Objects visible after get a claim
    /// the oracle verifier will entail; objects out of view get a
    /// speculative "appears" claim (insufficient if they were never seen,
    /// contradicted if they vanished), so Evidence Quality ranks frames by
    /// how much of the question they actually show.
    fn generate_claims_reply(&self, request: &ChatRequest) -> Result<String> {
        let images = image_refs(request);
        let [before_ref, after_ref] = images.as_slice() else {
            return Err(Error::protocol(
                "claim generation request must carry exactly two images",
            ));
        };
        let question = extract_prefixed(request, "The original question is: ")
            .ok_or_else(|| Error::protocol("claim generation request lacks the question"))?;
        let Some((_, first, second)) = parse_question(question) else {
            return Ok("(the question is not about this scene)".to_string());
        };
        let (Some(before), Some(after)) =
            (self.sim.frame_for(before_ref), self.sim.frame_for(after_ref))
        else {
            return Ok("(no observable changes)".to_string());
        };

        let mut lines = Vec::new();
        for name in [&first, &second] {
            let was = before.find(name);
            let text = match after.find(name) {
                Some(now) => true_claim(name, was, now)
                    .unwrap_or_else(|| format!("{name} appears on the left side")),
                None => format!("{name} appears on the left side"),
            };
            lines.push(format!("- {text}"));
        }
        Ok(lines.join("\n"))
    }

    /// Claim verification: exact symbolic evaluation of the claim grammar.
    fn verify_claim_reply(&self, request: &ChatRequest) -> Result<String> {
        let images = image_refs(request);
        let [before_ref, after_ref] = images.as_slice() else {
            return Err(Error::protocol(
                "claim verification request must carry exactly two images",
            ));
        };
        let claim_text = extract_prefixed(request, "Claim: '")
            .and_then(|rest| rest.strip_suffix('\''))
            .ok_or_else(|| Error::protocol("claim verification request lacks a claim"))?;

        let (Some(before), Some(after)) =
            (self.sim.frame_for(before_ref), self.sim.frame_for(after_ref))
        else {
            return Ok(
                "VERDICT: INSUFFICIENT\nCONFIDENCE: 0\nREASONING: unknown frames".to_string()
            );
        };
        let claim = crate::domain::Claim::new(claim_text, before_ref.clone(), after_ref.clone())?;
        let eval = oracle_verify(&claim, &before, &after);
        Ok(format!(
            "VERDICT: {}\nCONFIDENCE: {}\nREASONING: {}",
            eval.verdict, eval.confidence, eval.reasoning
        ))
    }

    /// Joint helpfulness: each candidate scores the fraction of question
    /// objects it has in view (0, 0.5, or 1 for the two-object questions).
    fn helpfulness_reply(&self, request: &ChatRequest) -> Result<String> {
        let images = image_refs(request);
        if images.is_empty() {
            return Err(Error::protocol("helpfulness request carries no images"));
        }
        let candidates = &images[1..]; // images[0] is x₀
        let objects = self.question_objects(request);
        let scores: Vec<f64> = candidates
            .iter()
            .map(|r| match (&objects, self.sim.frame_for(r)) {
                (Some((first, second)), Some(frame)) => {
                    let mut seen = 0;
                    if frame.find(first).is_some() {
                        seen += 1;
                    }
                    if frame.find(second).is_some() {
                        seen += 1;
                    }
                    seen as f64 / 2.0
                }
                _ => 0.0,
            })
            .collect();
        Ok(serde_json::to_string(&scores)?)
    }

    /// Answering: read the first evidence frame showing both question
    /// objects and compare their bearings; with no such frame, fall back to
    /// a deterministic pseudo-random guess (what a model that cannot see the
    /// answer would amount to).
    fn solver_reply(&self, request: &ChatRequest) -> Result<String> {
        let question_text = extract_question_line(request)
            .ok_or_else(|| Error::protocol("solver request lacks a question"))?;
        let choices = extract_choices(request);
        if choices.is_empty() {
            return Err(Error::protocol("solver request lacks answer choices"));
        }

        let decided = parse_question(&question_text).and_then(|(_, first, second)| {
            image_refs(request).iter().find_map(|r| {
                let frame = self.sim.frame_for(r)?;
                let a = frame.find(&first)?;
                let b = frame.find(&second)?;
                Some(a.bearing_deg < b.bearing_deg)
            })
        });
        let index = match decided {
            Some(is_left) => {
                let want = if is_left { "yes" } else { "no" };
                choices
                    .iter()
                    .position(|c| c == want)
                    .unwrap_or_else(|| hashed_choice(&question_text, choices.len()))
            }
            None => hashed_choice(&question_text, choices.len()),
        };
        Ok(format!("Answer: {}", choice_letter(index)))
    }

    fn question_objects(&self, request: &ChatRequest) -> Option<(String, String)> {
        let question = extract_question_line(request)?;
        parse_question(&question).map(|(_, first, second)| (first, second))
    }
}

impl ChatBackend for OracleVlm {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        match request.system.as_str() {
            s if s == CLAIM_GENERATION_SYSTEM => self.generate_claims_reply(request),
            s if s == CLAIM_VERIFICATION_SYSTEM => self.verify_claim_reply(request),
            s if s == HELPFULNESS_SYSTEM => self.helpfulness_reply(request),
            s if s == SOLVER_SYSTEM => self.solver_reply(request),
            _ => Err(Error::protocol(
                "oracle backend received an unrecognized system prompt",
            )),
        }
    }
}

impl LogprobBackend for OracleVlm {
    fn supports_logprobs(&self) -> bool {
        true
    }

    /// Teacher forcing: when the supplied images decide the question, the
    /// forced gold answer sums to ln 0.85 and any other choice to ln 0.15;
    /// an undecidable question scores every choice ln 0.5 (uniform).
    fn teacher_forced_logprobs(&self, request: &LogprobRequest) -> Result<TokenLogprobs> {
        let question_line = request
            .prompt
            .lines()
            .find_map(|l| l.strip_prefix("Question: "))
            .ok_or_else(|| Error::protocol("teacher-forcing prompt lacks a question"))?;

        let decided = parse_question(question_line).and_then(|(_, first, second)| {
            request.image_refs.iter().find_map(|r| {
                let frame = self.sim.frame_for(r)?;
                let a = frame.find(&first)?;
                let b = frame.find(&second)?;
                Some(a.bearing_deg < b.bearing_deg)
            })
        });
        let total = match decided {
            Some(is_left) => {
                let gold = if is_left { "yes" } else { "no" };
                if request.answer_text.trim() == gold {
                    0.85f64.ln()
                } else {
                    0.15f64.ln()
                }
            }
            None => 0.5f64.ln(),
        };

        let prompt_tokens = request.prompt.split_whitespace().count();
        let answer_tokens = request.answer_text.split_whitespace().count();
        if answer_tokens == 0 {
            return Err(Error::protocol("teacher forcing needs a nonempty answer"));
        }
        let mut token_logprobs = vec![-0.05; prompt_tokens];
        token_logprobs.extend(vec![total / answer_tokens as f64; answer_tokens]);
        let out = TokenLogprobs {
            token_logprobs,
            answer_start: prompt_tokens,
        };
        out.validate()?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Request introspection and claim construction helpers
// ---------------------------------------------------------------------------

fn image_refs(request: &ChatRequest) -> Vec<String> {
    request
        .parts
        .iter()
        .filter_map(|p| match p {
            Part::Image(r) => Some(r.clone()),
            Part::Text(_) => None,
        })
        .collect()
}

/// The remainder of the first text part starting with `prefix` (first line).
fn extract_prefixed<'a>(request: &'a ChatRequest, prefix: &str) -> Option<&'a str> {
    request.parts.iter().find_map(|p| match p {
        Part::Text(t) => t
            .lines()
            .next()
            .and_then(|line| line.strip_prefix(prefix)),
        Part::Image(_) => None,
    })
}

/// The question text, from whichever text part has a "Question: " line.
fn extract_question_line(request: &ChatRequest) -> Option<String> {
    request.parts.iter().find_map(|p| match p {
        Part::Text(t) => t
            .lines()
            .find_map(|l| l.strip_prefix("Question: "))
            .map(str::to_string),
        Part::Image(_) => None,
    })
}

/// Choice texts from a question block's "A. yes" style lines, in order.
fn extract_choices(request: &ChatRequest) -> Vec<String> {
    for part in &request.parts {
        let Part::Text(t) = part else { continue };
        if !t.contains("Choices:") {
            continue;
        }
        let mut choices = Vec::new();
        for line in t.lines() {
            let bytes = line.as_bytes();
            if bytes.len() > 3
                && bytes[0] == b'A' + choices.len() as u8
                && line[1..].starts_with(". ")
            {
                choices.push(line[3..].to_string());
            }
        }
        if !choices.is_empty() {
            return choices;
        }
    }
    Vec::new()
}

/// Deterministic pseudo-random choice for undecidable questions.
fn hashed_choice(question_text: &str, n_choices: usize) -> usize {
    let digest = sha2::Sha256::digest(question_text.as_bytes());
    digest[0] as usize % n_choices
}

fn side_word(v: &VisibleObject) -> &'static str {
    if v.in_left_half {
        "left"
    } else {
        "right"
    }
}

/// A grammar claim about `name` that the oracle verifier will entail, given
/// it is visible after; None when the views are identical for this object
/// (then no true change claim exists).
fn true_claim(name: &str, was: Option<&VisibleObject>, now: &VisibleObject) -> Option<String> {
    match was {
        None => Some(format!("{name} appears on the {} side", side_word(now))),
        Some(was) if now.bearing_deg != was.bearing_deg => {
            let edge = if now.bearing_deg < was.bearing_deg {
                "left"
            } else {
                "right"
            };
            Some(format!("{name} moves closer to the {edge} edge"))
        }
        Some(was) if now.distance != was.distance => {
            let change = if now.distance < was.distance {
                "more"
            } else {
                "less"
            };
            Some(format!(
                "{name} becomes {change} visible on the {} side",
                side_word(now)
            ))
        }
        Some(_) => None,
    }
}
