//! Prompt assembly for every VLM-facing call.
//!
//! The claim-generation and claim-verification templates ship as versioned
//! text assets (`assets/prompts/*.txt`); the builders here instantiate their
//! placeholders ([action_description], [question], [choice_i], [claim_text])
//! into concrete multimodal requests, and tests pin each assembled string to
//! the asset text so the two can never drift apart. The helpfulness and
//! answering prompts have no canonical source and are defined only here.
//!
//! The system strings double as dispatch keys: scene-backed test backends
//! recognize which pipeline stage is calling by exact system-prompt match.

use crate::client::{ChatRequest, Part};
use crate::domain::{Claim, QuestionInstance};

/// Claim-generation template asset, byte-for-byte.
pub const CLAIM_GENERATION_TEMPLATE: &str = include_str!("../assets/prompts/claim_generation.txt");
/// Claim-verification template asset, byte-for-byte.
pub const CLAIM_VERIFICATION_TEMPLATE: &str =
    include_str!("../assets/prompts/claim_verification.txt");

pub const CLAIM_GENERATION_SYSTEM: &str = "You are an AI assistant that generates atomic, frame-anchored micro-claims about spatial observations when comparing two images. Your primary goal is to identify changes that help distinguish between specific answer choices for a spatial reasoning question. Generate claims that are directly relevant to the question, objectively verifiable, and useful for decision-making. Focus on binary, measurable changes rather than subjective observations. Generate EXACTLY 2-4 high-quality claims that would help a human choose between the answer options.";

pub const CLAIM_VERIFICATION_SYSTEM: &str = "You are an AI assistant that verifies micro-claims against visual frames using semantic reasoning. Your task is to determine the logical relationship between a claim and the visual evidence. Focus on whether the evidence entails, contradicts, or provides insufficient information about the claim. Be precise and consider the semantic meaning of the claim in relation to what you observe. Additionally, provide a confidence score reflecting how certain you are about your judgment.";

pub const HELPFULNESS_SYSTEM: &str = "You are an AI assistant that scores how helpful imagined views are for answering a spatial reasoning question. You will see the original view, the question, and a set of candidate views. Score every candidate view jointly on a 0.0-1.0 scale, where 1.0 means the view makes the answer obvious and 0.0 means the view is useless for the question.";

pub const SOLVER_SYSTEM: &str = "You are an AI assistant that answers multiple-choice spatial reasoning questions about a scene. You will see the original view, the question, the answer choices, and possibly additional imagined views gathered as evidence. Choose the single best answer.";

/// Instruction blocks of the claim-generation template, in listing order,
/// sent after the images. Each inner slice is one block, joined by newlines.
const CLAIM_GENERATION_BLOCKS: &[&[&str]] = &[
    &[
        "1. VISIBILITY CHANGES: Objects appearing/disappearing, moving in/out of frame",
        "2. EDGE POSITIONING: Objects moving closer to or away from frame edges",
        "3. RELATIVE POSITIONS: Clear positional shifts with reference to other objects or frame boundaries",
        "4. OCCLUSION CHANGES: Objects becoming more or less hidden by other objects",
    ],
    &[
        "Guidelines for claim generation:",
        "- Generate 2-4 claims that directly help distinguish between the answer choices",
        "- If changes are minimal or unclear, generate fewer claims (quality over quantity)",
        "- Each claim should be independently verifiable and distinct",
        "- Prioritize claims that would help a human choose between the answer options",
        "- Focus on binary, measurable changes rather than subjective observations",
    ],
    &[
        "Examples of HIGH-QUALITY claim patterns:",
        "- [Object X] [appears/disappears] on the [left/right] side of the frame",
        "- [Object X] moves [closer to/further from] the [left/right] edge",
        "- [Object X] becomes [more/less] visible on the [left/right] side",
    ],
    &[
        "AVOID these LOW-QUALITY claim types:",
        "- 'remains the same' or 'stays in position' (not useful for decision-making)",
        "- Size changes ('appears larger/smaller') as these are subjective",
        "- Vague movements ('shifts leftward') without clear reference points",
        "- Quality assessments ('looks closer/farther') without measurable changes",
        "- Multi-predicate sentences (split them into separate claims)",
    ],
    &[
        "Requirements:",
        "- Be specific about locations and reference points",
        "- Focus on binary or clear changes (visible/not visible, in frame/out of frame)",
        "- Use precise directional language (left edge, right side, top corner)",
        "- Make claims that would help answer the specific spatial reasoning question",
    ],
    &[
        "Output format:",
        "- Output the micro-claims, one per line, starting with '- '",
        "- Each claim should be a single, clear sentence",
        "- Focus on the most important changes for answering the question",
    ],
];

const VERIFICATION_INSTRUCTION_BLOCKS: &[&[&str]] = &[
    &[
        "Instructions:",
        "1. Examine the specific frames mentioned in the claim carefully",
        "2. Determine if the visual evidence ENTAILS the claim (strongly supports it)",
        "3. Check if the evidence CONTRADICTS the claim (directly opposes it)",
        "4. Assess if the evidence is INSUFFICIENT (lacks information to determine support or contradiction)",
        "5. Consider spatial relationships, object properties, movements, and transformations",
        "6. For spatial reasoning tasks, focus on directional movements, rotations, and perspective changes",
        "7. Evaluate your confidence in the judgment (0.0 = completely uncertain, 1.0 = completely certain)",
        "8. Respond with the required format including verdict, confidence, and reasoning",
    ],
    &[
        "Response format:",
        "VERDICT: [ENTAILED/CONTRADICTED/INSUFFICIENT]",
        "CONFIDENCE: [0.0-1.0]",
        "REASONING: [Clear explanation of the semantic relationship and confidence level]",
    ],
    &[
        "- 0.95-1.0: Extremely clear, unambiguous evidence",
        "- 0.85-0.94: Very clear evidence with minor uncertainties",
        "- 0.70-0.84: Clear evidence with some ambiguity",
        "- 0.50-0.69: Moderate evidence, noticeable uncertainty",
        "- 0.30-0.49: Weak evidence, significant uncertainty",
        "- 0.10-0.29: Very unclear evidence, high uncertainty",
        "- 0.00-0.09: No clear evidence or contradictory signals",
    ],
    &["Important: Use the full 0.0-1.0 range. Reserve 0.9+ for truly exceptional cases."],
];

fn join_blocks(blocks: &[&[&str]]) -> String {
    blocks
        .iter()
        .map(|block| block.join("\n"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Builds the claim-generation request for one (before, after) frame pair.
pub fn claim_generation_request(
    action_description: &str,
    question: &QuestionInstance,
    before_ref: &str,
    after_ref: &str,
) -> ChatRequest {
    let mut parts = vec![
        Part::text(format!(
            "After performing the action: '{action_description}'"
        )),
        Part::text("Compare these two images and generate 2-4 specific micro-claims about what changed:"),
        Part::text("BEFORE (previous view):"),
        Part::image(before_ref),
        Part::text("AFTER (current view):"),
        Part::image(after_ref),
        Part::text(format!("The original question is: {}", question.question)),
    ];
    if !question.choices.is_empty() {
        let choices = question
            .choices
            .iter()
            .map(|c| format!("  - {c}"))
            .collect::<Vec<_>>()
            .join("\n");
        parts.push(Part::text(format!(
            "Answer Choices:\n{choices}\n\nFocus your claims on observations that would help distinguish between these answer choices."
        )));
    }
    parts.push(Part::text(join_blocks(CLAIM_GENERATION_BLOCKS)));
    ChatRequest::new(CLAIM_GENERATION_SYSTEM, parts)
}

/// Builds the verification request for one claim against its frame pair.
pub fn claim_verification_request(claim: &Claim) -> ChatRequest {
    let (before_ref, after_ref) = &claim.frame_range;
    let parts = vec![
        Part::text("Verify this micro-claim against the provided frames:"),
        Part::text(format!("Claim: '{}'", claim.text)),
        Part::text("Frame range: [0: input_image, 1: world_model_view]"),
        Part::text("Analyze the frames and determine the semantic relationship between the claim and evidence:"),
        Part::text("For each frame in the claim's frame range:"),
        Part::text("Frame 1:"),
        Part::image(before_ref),
        Part::text("Frame 2:"),
        Part::image(after_ref),
        Part::text(join_blocks(VERIFICATION_INSTRUCTION_BLOCKS)),
    ];
    ChatRequest::new(CLAIM_VERIFICATION_SYSTEM, parts)
}

/// Builds the single joint helpfulness request covering ALL candidate frames.
pub fn helpfulness_request(
    question: &QuestionInstance,
    frame_refs: &[&str],
) -> ChatRequest {
    let mut parts = vec![
        Part::text("Original view:"),
        Part::image(&question.image_ref),
        Part::text(format!("Question: {}", question.question)),
    ];
    if !question.choices.is_empty() {
        let choices = question
            .choices
            .iter()
            .map(|c| format!("  - {c}"))
            .collect::<Vec<_>>()
            .join("\n");
        parts.push(Part::text(format!("Answer Choices:\n{choices}")));
    }
    parts.push(Part::text(format!(
        "Candidate views ({} total):",
        frame_refs.len()
    )));
    for (i, r) in frame_refs.iter().enumerate() {
        parts.push(Part::text(format!("Candidate view {}:", i + 1)));
        parts.push(Part::image(*r));
    }
    parts.push(Part::text(format!(
        "Score how helpful each candidate view is for answering the question. Respond with ONLY a JSON array of {} numbers between 0.0 and 1.0, one per candidate view, in the order presented.",
        frame_refs.len()
    )));
    ChatRequest::new(HELPFULNESS_SYSTEM, parts)
}

/// Letter label for choice index i (A, B, C, ...).
pub fn choice_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// The textual question+choices block shared by the answering chat prompt and
/// the teacher-forcing prompt, so both paths condition on identical text.
pub fn question_block(question: &QuestionInstance) -> String {
    let mut out = format!("Question: {}\n", question.question);
    out.push_str("Choices:\n");
    for (i, choice) in question.choices.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", choice_letter(i), choice));
    }
    out
}

/// Builds the answering request: original view, question, choices, and the
/// evidence frames (empty slice = baseline, question from x₀ alone).
pub fn solver_request(question: &QuestionInstance, evidence_refs: &[&str]) -> ChatRequest {
    let mut parts = vec![
        Part::text("Original view:"),
        Part::image(&question.image_ref),
        Part::text(question_block(question)),
    ];
    if !evidence_refs.is_empty() {
        parts.push(Part::text(format!(
            "Imagined views gathered as evidence ({} total):",
            evidence_refs.len()
        )));
        for (i, r) in evidence_refs.iter().enumerate() {
            parts.push(Part::text(format!("Evidence view {}:", i + 1)));
            parts.push(Part::image(*r));
        }
    }
    parts.push(Part::text(
        "Reply with the single letter of the best answer in the form 'Answer: X'.",
    ));
    ChatRequest::new(SOLVER_SYSTEM, parts)
}

/// Prompt text for teacher forcing one answer choice: the question block plus
/// an answer stem; the choice text itself is the continuation being forced.
pub fn teacher_forcing_prompt(question: &QuestionInstance) -> String {
    format!("{}Answer: ", question_block(question))
}
