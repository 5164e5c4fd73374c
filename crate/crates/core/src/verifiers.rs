//! The three test-time reward functions that score imagined frames.
//!
//! - **random**: seeded uniform noise, the exploration-only control;
//! - **helpfulness**: one joint VLM prompt scoring all candidate frames at
//!   once (deliberately preserving the joint-ranking failure mode this
//!   baseline is known for);
//! - **visa**: per-frame claim generation → per-claim verification →
//!   Evidence Quality, never scoring frames jointly.
//!
//! Whatever the backend does, every verifier returns exactly one finite
//! score in [0,1] per input frame: backend failures degrade scores to 0.0
//! rather than aborting a run.

use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::client::{ChatBackend, ChatRequest};
use crate::domain::{Claim, ClaimEvaluation, FrameRecord, QuestionInstance, Verdict};
use crate::error::{Error, Result};
use crate::prompts;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Random,
    Helpfulness,
    #[serde(rename = "visa")]
    Visa,
}

impl VerifierKind {
    /// Name used in results, reports, and config files.
    pub fn name(&self) -> &'static str {
        match self {
            VerifierKind::Random => "random",
            VerifierKind::Helpfulness => "helpfulness",
            VerifierKind::Visa => "visa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(VerifierKind::Random),
            "helpfulness" => Ok(VerifierKind::Helpfulness),
            "visa" => Ok(VerifierKind::Visa),
            other => Err(Error::Config(format!(
                "unknown verifier {other:?} (expected random, helpfulness, or visa)"
            ))),
        }
    }
}

/// How Evidence Quality averages claim confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceAveraging {
    /// Canonical: average over ALL claims, whatever their verdict.
    #[default]
    AllClaims,
    /// Non-canonical alternative: average only over entailed claims.
    EntailedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub kind: VerifierKind,
    /// Required iff `kind` is Random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub claim_min: usize,
    pub claim_max: usize,
    #[serde(default)]
    pub averaging: ConfidenceAveraging,
    /// Extra verifier-level attempts after a failed helpfulness call.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl VerifierConfig {
    pub fn new(kind: VerifierKind) -> Self {
        VerifierConfig {
            kind,
            seed: None,
            claim_min: 2,
            claim_max: 4,
            averaging: ConfidenceAveraging::AllClaims,
            retries: 2,
            backoff_ms: 200,
        }
    }

    pub fn random(seed: u64) -> Self {
        VerifierConfig {
            seed: Some(seed),
            ..VerifierConfig::new(VerifierKind::Random)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.claim_min > self.claim_max {
            return Err(Error::Config(format!(
                "claim_min {} exceeds claim_max {}",
                self.claim_min, self.claim_max
            )));
        }
        match (self.kind, self.seed) {
            (VerifierKind::Random, None) => {
                Err(Error::Config("the random verifier needs a seed".into()))
            }
            (VerifierKind::Random, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Config(format!(
                "verifier {:?} does not take a seed",
                self.kind.name()
            ))),
            (_, None) => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Random verifier
// ---------------------------------------------------------------------------

/// Uniform [0,1) score per frame from a deterministic, platform-stable
/// generator: each frame's stream is keyed by SHA-256(seed ‖ image_ref), so
/// scores depend only on (seed, frame), never on list order.
pub fn score_random(frames: &[FrameRecord], seed: u64) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::validation("score_random needs at least one frame"));
    }
    Ok(frames
        .iter()
        .map(|f| random_unit(seed, &f.image_ref))
        .collect())
}

fn random_unit(seed: u64, image_ref: &str) -> f64 {
    use rand_core::{RngCore, SeedableRng};
    let mut hasher = sha2::Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(image_ref.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = rand_chacha::ChaCha8Rng::from_seed(key);
    // top 53 bits -> uniform double in [0,1), exact on every platform
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

// ---------------------------------------------------------------------------
// Joint helpfulness verifier
// ---------------------------------------------------------------------------

/// Scores all frames with ONE joint prompt (x₀, question, every candidate).
/// The reply must be a JSON array of one number per frame; values are
/// clamped to [0,1]. After the retry budget the scores fall back to all
/// zeros with a logged warning — a run never aborts here.
pub fn score_helpfulness(
    frames: &[FrameRecord],
    question: &QuestionInstance,
    config: &VerifierConfig,
    backend: &dyn ChatBackend,
) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::validation(
            "score_helpfulness needs at least one frame",
        ));
    }
    let refs: Vec<&str> = frames.iter().map(|f| f.image_ref.as_str()).collect();
    let request = prompts::helpfulness_request(question, &refs);

    let mut attempt = 0u32;
    loop {
        match try_helpfulness(&request, frames.len(), backend) {
            Ok(scores) => return Ok(scores),
            Err(e) if attempt < config.retries => {
                log::warn!("helpfulness scoring failed (attempt {}): {e}; retrying", attempt + 1);
                let delay = config.backoff_ms.saturating_mul(1 << attempt);
                if delay > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                }
                attempt += 1;
            }
            Err(e) => {
                log::warn!(
                    "helpfulness scoring failed after {} attempts: {e}; falling back to 0.0 for all {} frames",
                    attempt + 1,
                    frames.len()
                );
                return Ok(vec![0.0; frames.len()]);
            }
        }
    }
}

fn try_helpfulness(
    request: &ChatRequest,
    expected: usize,
    backend: &dyn ChatBackend,
) -> Result<Vec<f64>> {
    let reply = backend.chat(request)?;
    let scores = parse_score_array(&reply)?;
    if scores.len() != expected {
        return Err(Error::protocol(format!(
            "helpfulness reply has {} scores for {} frames",
            scores.len(),
            expected
        )));
    }
    Ok(scores.into_iter().map(|s| s.clamp(0.0, 1.0)).collect())
}

/// Extracts the first JSON array in the reply and parses it as numbers.
fn parse_score_array(reply: &str) -> Result<Vec<f64>> {
    let start = reply
        .find('[')
        .ok_or_else(|| Error::protocol(format!("no JSON array in helpfulness reply: {reply:?}")))?;
    let end = reply[start..]
        .find(']')
        .map(|i| start + i + 1)
        .ok_or_else(|| Error::protocol(format!("unterminated JSON array in reply: {reply:?}")))?;
    let scores: Vec<f64> = serde_json::from_str(&reply[start..end])
        .map_err(|e| Error::protocol(format!("helpfulness reply is not a number array: {e}")))?;
    Ok(scores)
}

// ---------------------------------------------------------------------------
// ViSA: claims, verification, Evidence Quality
// ---------------------------------------------------------------------------

/// Asks the backend for micro-claims about the (before, after) pair and
/// parses its reply: lines starting "- " become claims, the first
/// `claim_max` are kept, and fewer than `claim_min` is fine (the template
/// tells models to produce fewer claims when changes are unclear). A reply
/// with no parseable lines is an empty list, not an error.
pub fn generate_claims(
    before_ref: &str,
    after: &FrameRecord,
    question: &QuestionInstance,
    config: &VerifierConfig,
    backend: &dyn ChatBackend,
) -> Result<Vec<Claim>> {
    let request = prompts::claim_generation_request(
        &after.producing_action.describe(),
        question,
        before_ref,
        &after.image_ref,
    );
    let reply = backend.chat(&request)?;
    let mut claims = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        let Some(text) = line.strip_prefix("- ") else {
            continue;
        };
        match Claim::new(text, before_ref, &after.image_ref) {
            Ok(claim) => claims.push(claim),
            Err(e) => log::debug!("dropping malformed claim line {line:?}: {e}"),
        }
        if claims.len() == config.claim_max {
            break;
        }
    }
    Ok(claims)
}

/// Verifies one claim, parsing the template's reply format. Any failure —
/// transport, missing or unknown VERDICT, unparseable CONFIDENCE — degrades
/// to {INSUFFICIENT, 0.0, raw text}; this function never aborts a run.
pub fn verify_claim(
    claim: &Claim,
    backend: &dyn ChatBackend,
) -> ClaimEvaluation {
    let request = prompts::claim_verification_request(claim);
    match backend.chat(&request) {
        Ok(reply) => parse_verdict_reply(&reply),
        Err(e) => ClaimEvaluation::new(
            Verdict::Insufficient,
            0.0,
            format!("verification backend error: {e}"),
        ),
    }
}

/// Parses `VERDICT:` / `CONFIDENCE:` / `REASONING:` lines (keys matched
/// case-insensitively). See `verify_claim` for the degrade rule.
pub fn parse_verdict_reply(reply: &str) -> ClaimEvaluation {
    let mut verdict_text: Option<String> = None;
    let mut confidence_text: Option<String> = None;
    let mut reasoning: Option<String> = None;
    for line in reply.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        match key.trim().to_ascii_uppercase().as_str() {
            "VERDICT" if verdict_text.is_none() => verdict_text = Some(value.to_string()),
            "CONFIDENCE" if confidence_text.is_none() => confidence_text = Some(value.to_string()),
            "REASONING" if reasoning.is_none() => reasoning = Some(value.to_string()),
            _ => {}
        }
    }

    let degrade = || ClaimEvaluation::new(Verdict::Insufficient, 0.0, reply.to_string());
    let (Some(verdict_text), Some(confidence_text)) = (verdict_text, confidence_text) else {
        return degrade();
    };
    let verdict = match verdict_text
        .trim_end_matches(['.', '!'])
        .trim()
        .to_ascii_uppercase()
        .as_str()
    {
        "ENTAILED" => Verdict::Entailed,
        "CONTRADICTED" => Verdict::Contradicted,
        "INSUFFICIENT" => Verdict::Insufficient,
        _ => return degrade(),
    };
    let Some(confidence) = confidence_text
        .split_whitespace()
        .next()
        .and_then(|t| t.parse::<f64>().ok())
    else {
        return degrade();
    };
    ClaimEvaluation::new(
        verdict,
        confidence,
        reasoning.unwrap_or_else(|| reply.to_string()),
    )
}

/// Evidence Quality: (fraction of entailed claims) × (mean confidence).
///
/// The canonical mean runs over ALL claims — contradicted and insufficient
/// ones included — which is deliberate: low-confidence noise dilutes the
/// score even when every claim is entailed. An empty claim list scores 0.0.
pub fn evidence_quality(evals: &[ClaimEvaluation]) -> f64 {
    evidence_quality_with(evals, ConfidenceAveraging::AllClaims)
}

pub fn evidence_quality_with(evals: &[ClaimEvaluation], averaging: ConfidenceAveraging) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    let n = evals.len() as f64;
    let entailed: Vec<&ClaimEvaluation> =
        evals.iter().filter(|e| e.verdict == Verdict::Entailed).collect();
    let entailed_fraction = entailed.len() as f64 / n;
    let mean_confidence = match averaging {
        ConfidenceAveraging::AllClaims => evals.iter().map(|e| e.confidence).sum::<f64>() / n,
        ConfidenceAveraging::EntailedOnly => {
            if entailed.is_empty() {
                return 0.0;
            }
            entailed.iter().map(|e| e.confidence).sum::<f64>() / entailed.len() as f64
        }
    };
    entailed_fraction * mean_confidence
}

/// Per-frame record of the whole ViSA pipeline, written to the verification
/// trace: the claims, their evaluations, and the resulting EQ score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVisaTrace {
    pub frame_ref: String,
    pub claims: Vec<Claim>,
    pub evaluations: Vec<ClaimEvaluation>,
    pub eq: f64,
}

/// ViSA scores for a batch of frames: each frame is scored independently
/// (claims → verdicts → EQ), never jointly. A frame whose claim generation
/// fails entirely scores 0.0. Returns scores in input order plus the full
/// per-frame trace.
pub fn score_visa(
    frames: &[FrameRecord],
    question: &QuestionInstance,
    config: &VerifierConfig,
    backend: &dyn ChatBackend,
) -> Result<(Vec<f64>, Vec<FrameVisaTrace>)> {
    if frames.is_empty() {
        return Err(Error::validation("score_visa needs at least one frame"));
    }
    let x0 = question.image_ref.as_str();
    let mut scores = Vec::with_capacity(frames.len());
    let mut traces = Vec::with_capacity(frames.len());
    for frame in frames {
        let claims = match generate_claims(x0, frame, question, config, backend) {
            Ok(claims) => claims,
            Err(e) => {
                log::warn!(
                    "claim generation failed for {}: {e}; frame scores 0.0",
                    frame.image_ref
                );
                scores.push(0.0);
                traces.push(FrameVisaTrace {
                    frame_ref: frame.image_ref.clone(),
                    claims: Vec::new(),
                    evaluations: Vec::new(),
                    eq: 0.0,
                });
                continue;
            }
        };
        let evaluations: Vec<ClaimEvaluation> = claims
            .iter()
            .map(|c| verify_claim(c, backend))
            .collect();
        let eq = evidence_quality_with(&evaluations, config.averaging);
        scores.push(eq);
        traces.push(FrameVisaTrace {
            frame_ref: frame.image_ref.clone(),
            claims,
            evaluations,
            eq,
        });
    }
    Ok((scores, traces))
}

/// Uniform entry point used by the search engine: scores `frames` under the
/// configured verifier and returns (scores, visa traces) — traces are empty
/// for the random and helpfulness verifiers.
pub fn score_frames(
    frames: &[FrameRecord],
    question: &QuestionInstance,
    config: &VerifierConfig,
    backend: &dyn ChatBackend,
) -> Result<(Vec<f64>, Vec<FrameVisaTrace>)> {
    config.validate()?;
    match config.kind {
        VerifierKind::Random => {
            let seed = config.seed.expect("validated: random has a seed");
            Ok((score_random(frames, seed)?, Vec::new()))
        }
        VerifierKind::Helpfulness => Ok((
            score_helpfulness(frames, question, config, backend)?,
            Vec::new(),
        )),
        VerifierKind::Visa => score_visa(frames, question, config, backend),
    }
}
