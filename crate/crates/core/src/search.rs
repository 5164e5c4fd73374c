//! Exploration beam search over imagined trajectories.
//!
//! Starting from the input view, every retained node is expanded with all
//! nine actions, each child's rollout is imagined by the world model and
//! scored by the verifier, every scored frame competes for the global top-k
//! evidence buffer, and the `beam_width` best children (by max frame score)
//! carry to the next depth. After the sweep the solver answers the question
//! from the buffer contents.
//!
//! Determinism: children are created in parent-order × action-order, buffer
//! insertions and trace rows follow that creation order even when sibling
//! expansion runs on worker threads, and score ties always favor the earlier
//! node, so a run is bit-reproducible given deterministic backends.

use serde::{Deserialize, Serialize};

use crate::client::{with_retries, ChatBackend};
use crate::domain::{
    Action, EvidenceBuffer, FrameRecord, QuestionInstance, RunResult, Trajectory, ACTION_SPACE,
};
use crate::error::{Error, Result};
use crate::pose::trajectory_poses;
use crate::prompts::solver_request;
use crate::util::ordered_parallel_map;
use crate::verifiers::{score_frames, FrameVisaTrace, VerifierConfig};
use crate::world::{WorldBackend, WorldModelRequest};

/// Verifier name recorded for no-search (x₀-only) runs.
pub const BASELINE_VERIFIER: &str = "baseline";

// ---------------------------------------------------------------------------
// Configuration and node structure
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Beam depth γ: maximum trajectory length explored.
    pub gamma: u32,
    /// Evidence buffer capacity k.
    pub top_k: usize,
    /// Nodes retained per depth.
    pub beam_width: usize,
    /// Frames per world-model rollout m.
    pub frames_per_rollout: usize,
    pub verifier: VerifierConfig,
    /// Pass-through conditioning text for the world model.
    pub prompt: String,
    /// Worker threads for sibling-node expansion (1 = inline).
    pub parallelism: usize,
}

impl SearchConfig {
    pub fn new(gamma: u32, top_k: usize, verifier: VerifierConfig) -> Self {
        SearchConfig {
            gamma,
            top_k,
            beam_width: 3,
            frames_per_rollout: 1,
            verifier,
            prompt: "an egocentric walk through the scene".to_string(),
            parallelism: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1 {
            return Err(Error::validation("gamma must be >= 1"));
        }
        if self.top_k < 1 {
            return Err(Error::validation("top_k must be >= 1"));
        }
        if self.beam_width < 1 {
            return Err(Error::validation("beam_width must be >= 1"));
        }
        if self.frames_per_rollout < 1 {
            return Err(Error::validation("frames_per_rollout must be >= 1"));
        }
        if self.parallelism < 1 {
            return Err(Error::validation("parallelism must be >= 1"));
        }
        self.verifier.validate()
    }
}

/// One beam-search node: a trajectory, its imagined frames (scored), and the
/// retention metric — the node's best frame score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamNode {
    pub trajectory: Trajectory,
    pub depth: u32,
    pub frames: Vec<FrameRecord>,
    pub best_score: f64,
}

impl BeamNode {
    /// The empty-trajectory node the search grows from.
    pub fn root() -> Self {
        BeamNode {
            trajectory: Trajectory { steps: Vec::new() },
            depth: 0,
            frames: Vec::new(),
            best_score: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Search trace
// ---------------------------------------------------------------------------

/// One trace row per created node; this is the JSONL line format of the
/// trace file analytics consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    /// 1-based creation index; the root is id 0 and has no row.
    pub node_id: usize,
    pub parent_id: usize,
    /// The action that extended the parent's trajectory.
    pub action: Action,
    pub depth: u32,
    pub frame_refs: Vec<String>,
    pub scores: Vec<f64>,
    pub retained: bool,
}

/// Everything a search run leaves behind besides the buffer itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub verifier: String,
    pub gamma: u32,
    pub top_k: usize,
    pub beam_width: usize,
    pub nodes: Vec<TraceNode>,
    /// Buffer contents at the end of the run, score-descending.
    pub buffer_refs: Vec<String>,
    pub world_calls: usize,
    /// Per-frame claim/verdict records (ViSA verifier only).
    pub visa_traces: Vec<FrameVisaTrace>,
}

impl SearchTrace {
    /// Serializes the per-node rows as JSON lines.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for node in &self.nodes {
            out.push_str(&serde_json::to_string(node)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }
}

/// Parses a trace file written by [`SearchTrace::write_file`].
pub fn read_trace_file(path: &std::path::Path) -> Result<Vec<TraceNode>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// World-model calls a full sweep makes: Σ_{d=1..γ} min(beam_width, 9^(d−1))·9.
pub fn expected_world_calls(gamma: u32, beam_width: usize) -> usize {
    let mut total = 0usize;
    let mut level = 1usize; // unconstrained node count at the previous depth
    for _ in 1..=gamma {
        total += beam_width.min(level) * ACTION_SPACE.len();
        level = level.saturating_mul(ACTION_SPACE.len());
    }
    total
}

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

struct ExpandJob {
    parent_id: usize,
    actions: Vec<Action>,
}

/// Imagines and scores one child trajectory. World or verifier failures
/// degrade the child to zero-scored (or frameless) rather than erroring, so
/// one bad rollout never aborts a sweep.
fn expand_job(
    job: &ExpandJob,
    question: &QuestionInstance,
    config: &SearchConfig,
    world: &dyn WorldBackend,
    chat: &dyn ChatBackend,
) -> (BeamNode, Vec<FrameVisaTrace>) {
    let depth = job.actions.len() as u32;
    let trajectory = match trajectory_poses(&job.actions) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("invalid trajectory {:?}: {e}", job.actions);
            return (
                BeamNode {
                    trajectory: Trajectory { steps: Vec::new() },
                    depth,
                    frames: Vec::new(),
                    best_score: 0.0,
                },
                Vec::new(),
            );
        }
    };
    let request = WorldModelRequest {
        reference_image: question.image_ref.clone(),
        prompt: config.prompt.clone(),
        trajectory: trajectory.clone(),
        frames_per_rollout: config.frames_per_rollout,
    };
    let mut frames = match world.imagine(&request) {
        Ok(video) => video.frames,
        Err(e) => {
            log::warn!("world model failed for {:?}: {e}", job.actions);
            Vec::new()
        }
    };
    let mut visa_traces = Vec::new();
    if !frames.is_empty() {
        let (scores, traces) = match score_frames(&frames, question, &config.verifier, chat) {
            Ok(result) => result,
            Err(e) => {
                log::warn!("verifier failed for {:?}: {e}; scoring 0.0", job.actions);
                (vec![0.0; frames.len()], Vec::new())
            }
        };
        for (frame, score) in frames.iter_mut().zip(&scores) {
            frame.score = Some(*score);
        }
        visa_traces = traces;
    }
    let best_score = frames
        .iter()
        .filter_map(|f| f.score)
        .fold(0.0f64, f64::max);
    (
        BeamNode {
            trajectory,
            depth,
            frames,
            best_score,
        },
        visa_traces,
    )
}

/// Expands one node with every action in the space, returning the nine
/// scored children in action order.
pub fn expand(
    node: &BeamNode,
    question: &QuestionInstance,
    config: &SearchConfig,
    world: &dyn WorldBackend,
    chat: &dyn ChatBackend,
) -> Result<Vec<BeamNode>> {
    if node.depth >= config.gamma {
        return Err(Error::validation(format!(
            "node at depth {} cannot expand beyond gamma = {}",
            node.depth, config.gamma
        )));
    }
    let base = node.trajectory.actions();
    let jobs: Vec<ExpandJob> = ACTION_SPACE
        .iter()
        .map(|a| {
            let mut actions = base.clone();
            actions.push(*a);
            ExpandJob {
                parent_id: 0,
                actions,
            }
        })
        .collect();
    Ok(ordered_parallel_map(&jobs, config.parallelism, |job| {
        expand_job(job, question, config, world, chat)
    })
    .into_iter()
    .map(|(node, _)| node)
    .collect())
}

/// Feeds scored frames to the global top-k buffer in the given order.
pub fn update_buffer(buffer: &mut EvidenceBuffer, frames: &[FrameRecord]) -> Result<()> {
    for frame in frames {
        if frame.score.is_none() {
            return Err(Error::validation(format!(
                "frame {} reached the buffer unscored",
                frame.image_ref
            )));
        }
        buffer.insert(frame.clone())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The sweep
// ---------------------------------------------------------------------------

/// Runs the full breadth-first sweep to depth γ and returns the evidence
/// buffer plus the complete trace. The run always completes; backend
/// failures only zero out the affected scores.
pub fn run_search(
    question: &QuestionInstance,
    config: &SearchConfig,
    world: &dyn WorldBackend,
    chat: &dyn ChatBackend,
) -> Result<(EvidenceBuffer, SearchTrace)> {
    config.validate()?;
    question.validate()?;

    let mut buffer = EvidenceBuffer::new(config.top_k)?;
    let mut trace_nodes: Vec<TraceNode> = Vec::new();
    let mut visa_traces: Vec<FrameVisaTrace> = Vec::new();
    let mut world_calls = 0usize;
    // (node_id, node) pairs; the root is id 0 and produces no trace row.
    let mut frontier: Vec<(usize, BeamNode)> = vec![(0, BeamNode::root())];
    let mut next_id = 1usize;

    for depth in 1..=config.gamma {
        let jobs: Vec<ExpandJob> = frontier
            .iter()
            .flat_map(|(parent_id, node)| {
                let base = node.trajectory.actions();
                ACTION_SPACE.iter().map(move |a| {
                    let mut actions = base.clone();
                    actions.push(*a);
                    ExpandJob {
                        parent_id: *parent_id,
                        actions,
                    }
                })
            })
            .collect();

        let expanded = ordered_parallel_map(&jobs, config.parallelism, |job| {
            expand_job(job, question, config, world, chat)
        });

        let level_start = trace_nodes.len();
        let mut children: Vec<(usize, BeamNode)> = Vec::with_capacity(expanded.len());
        for (job, (node, traces)) in jobs.iter().zip(expanded) {
            let node_id = next_id;
            next_id += 1;
            world_calls += 1;
            update_buffer(&mut buffer, &node.frames)?;
            trace_nodes.push(TraceNode {
                node_id,
                parent_id: job.parent_id,
                action: *job.actions.last().expect("jobs extend by one action"),
                depth,
                frame_refs: node.frames.iter().map(|f| f.image_ref.clone()).collect(),
                scores: node.frames.iter().filter_map(|f| f.score).collect(),
                retained: false,
            });
            visa_traces.extend(traces);
            children.push((node_id, node));
        }

        // Retain the beam_width best children by best_score; stable sort
        // keeps creation order on ties, and the frontier itself stays in
        // creation order so deeper levels enumerate deterministically.
        let mut order: Vec<usize> = (0..children.len()).collect();
        order.sort_by(|&a, &b| {
            children[b]
                .1
                .best_score
                .partial_cmp(&children[a].1.best_score)
                .expect("scores are finite")
        });
        let mut keep: Vec<usize> = order.into_iter().take(config.beam_width).collect();
        keep.sort_unstable();
        for &i in &keep {
            trace_nodes[level_start + i].retained = true;
        }
        frontier = keep.into_iter().map(|i| children[i].clone()).collect();
    }

    let trace = SearchTrace {
        verifier: config.verifier.kind.name().to_string(),
        gamma: config.gamma,
        top_k: config.top_k,
        beam_width: config.beam_width,
        nodes: trace_nodes,
        buffer_refs: buffer.frame_refs(),
        world_calls,
        visa_traces,
    };
    Ok((buffer, trace))
}

// ---------------------------------------------------------------------------
// Answering
// ---------------------------------------------------------------------------

/// Prompts the solver with x₀, the buffered evidence (score-descending), the
/// question, and lettered choices, then parses the predicted letter. Backend
/// failure or an unparseable reply falls back to choice 0 with the degraded
/// flag set — a benchmark sweep never aborts on one question.
pub fn answer(
    question_id: &str,
    question: &QuestionInstance,
    buffer: &EvidenceBuffer,
    verifier_name: &str,
    beam_depth: u32,
    chat: &dyn ChatBackend,
) -> RunResult {
    let refs = buffer.frame_refs();
    let ref_slices: Vec<&str> = refs.iter().map(String::as_str).collect();
    let request = solver_request(question, &ref_slices);

    let (predicted_index, degraded) = match with_retries(2, 200, || chat.chat(&request)) {
        Ok(reply) => parse_answer_reply(&reply, question.choices.len()),
        Err(e) => {
            log::warn!("solver backend failed for {question_id}: {e}; defaulting to choice 0");
            (0, true)
        }
    };
    RunResult {
        question_id: question_id.to_string(),
        predicted_index,
        correct: question.gold_index == Some(predicted_index),
        selected_actions: buffer.entries.iter().map(|e| e.producing_action).collect(),
        per_choice_log_likelihoods: None,
        verifier: verifier_name.to_string(),
        top_k: buffer.capacity,
        beam_depth,
        degraded,
    }
}

/// Letter-parse ladder for solver replies: (1) first standalone capital
/// after an "Answer" token that names a valid choice, (2) first valid
/// standalone capital anywhere, (3) most frequent valid capital letter in
/// the text, (4) choice 0 with the degraded flag.
pub fn parse_answer_reply(reply: &str, n_choices: usize) -> (usize, bool) {
    let valid = |token: &str| -> Option<usize> {
        let mut chars = token.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            return None;
        };
        let index = (c as usize).wrapping_sub('A' as usize);
        (c.is_ascii_uppercase() && index < n_choices).then_some(index)
    };
    let tokens: Vec<&str> = reply
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_ascii_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect();

    if let Some(pos) = tokens.iter().position(|t| t.eq_ignore_ascii_case("answer")) {
        if let Some(index) = tokens[pos + 1..].iter().find_map(|t| valid(t)) {
            return (index, false);
        }
    }
    if let Some(index) = tokens.iter().find_map(|t| valid(t)) {
        return (index, false);
    }
    let counts: Vec<usize> = (0..n_choices)
        .map(|i| {
            reply
                .bytes()
                .filter(|&b| b == b'A' + i as u8)
                .count()
        })
        .collect();
    if let Some((index, &count)) = counts.iter().enumerate().max_by_key(|(i, &c)| (c, n_choices - i)) {
        if count > 0 {
            return (index, false);
        }
    }
    log::warn!("no choice letter found in solver reply {reply:?}; defaulting to choice 0");
    (0, true)
}
