//! The abstract world model: imagined egocentric video from a reference
//! image, a prompt, and an action trajectory.
//!
//! Two production paths implement [`WorldBackend`]: an HTTP client to an
//! external video-generation server ([`HttpWorld`]) and the symbolic scene
//! simulator (`oracle::OracleWorld`). Recording/replay wrappers mirror the
//! chat-client ones so a whole run can be reproduced offline.

use std::sync::Arc;
use std::time::Instant;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::client::{build_agent, map_ureq, with_retries};
use crate::domain::{FrameRecord, ImaginedVideo, Trajectory};
use crate::error::{Error, Result};
use crate::store::ImageStore;
use crate::transcript::{TranscriptReplayer, TranscriptWriter, KIND_WORLD};
use crate::util::InflightLimiter;

/// One world-model rollout request: imagine `frames_per_rollout` frames of
/// the view evolving from `reference_image` along `trajectory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelRequest {
    /// Content ref of the initial image x₀.
    pub reference_image: String,
    /// Conditioning text passed through to the backend.
    pub prompt: String,
    pub trajectory: Trajectory,
    pub frames_per_rollout: usize,
}

impl WorldModelRequest {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_rollout == 0 {
            return Err(Error::validation("frames_per_rollout must be >= 1"));
        }
        if self.trajectory.is_empty() {
            return Err(Error::validation("world rollouts need a nonempty trajectory"));
        }
        for step in &self.trajectory.steps {
            step.action.validate()?;
        }
        Ok(())
    }
}

pub trait WorldBackend: Send + Sync {
    /// Imagines the requested video; every returned frame is tagged with the
    /// trajectory's final action and the trajectory length as beam depth.
    fn imagine(&self, request: &WorldModelRequest) -> Result<ImaginedVideo>;
}

/// Assembles an [`ImaginedVideo`] from frame refs: the uniform tagging rule
/// shared by every backend (final action, depth = trajectory length).
pub fn video_from_refs(request: &WorldModelRequest, refs: Vec<String>) -> Result<ImaginedVideo> {
    request.validate()?;
    if refs.len() != request.frames_per_rollout {
        return Err(Error::protocol(format!(
            "backend returned {} frames, requested {}",
            refs.len(),
            request.frames_per_rollout
        )));
    }
    let action = request
        .trajectory
        .last_action()
        .expect("validated trajectory is nonempty");
    let depth = request.trajectory.len() as u32;
    let frames = refs
        .into_iter()
        .map(|r| FrameRecord::new(r, action, depth))
        .collect();
    ImaginedVideo::new(frames, request.trajectory.clone(), request.prompt.clone())
}

/// Transcript-side request encoding (reference image stays a content ref).
pub(crate) fn world_request_value(request: &WorldModelRequest) -> Value {
    serde_json::to_value(request).expect("request serialization cannot fail")
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// Client for an external video-generation server. The wire request is the
/// [`WorldModelRequest`] JSON with the reference image inlined as base64 PNG;
/// the response is a JSON array of base64 PNG frames (see docs/protocol.md).
pub struct HttpWorld {
    config: crate::client::HttpConfig,
    agent: ureq::Agent,
    store: Arc<ImageStore>,
    limiter: Arc<InflightLimiter>,
}

impl HttpWorld {
    pub fn new(config: crate::client::HttpConfig, store: Arc<ImageStore>) -> Self {
        let agent = build_agent(&config);
        let limiter = InflightLimiter::new(config.max_in_flight);
        HttpWorld {
            config,
            agent,
            store,
            limiter,
        }
    }

    /// Shares a global in-flight limiter with the chat/logprob clients.
    pub fn with_limiter(mut self, limiter: Arc<InflightLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    fn post_imagine(&self, body: &Value) -> Result<Value> {
        let _slot = self.limiter.acquire();
        let url = format!("{}/imagine", self.config.base_url.trim_end_matches('/'));
        let mut request = self.agent.post(&url);
        if let Some(token) = &self.config.auth_token {
            request = request.header(&self.config.auth_header, &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(map_ureq)?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| Error::protocol(format!("malformed JSON from {url}: {e}")))
    }
}

/// Decodes the wire response: an array of base64 PNG frames, or an object
/// with a "refusal"/"error" message when the backend declines to generate.
fn decode_world_response(store: &ImageStore, value: &Value) -> Result<Vec<String>> {
    if let Some(obj) = value.as_object() {
        if let Some(msg) = obj.get("refusal").or_else(|| obj.get("error")) {
            return Err(Error::Generation(
                msg.as_str().unwrap_or("backend refused generation").to_string(),
            ));
        }
    }
    let frames = value
        .as_array()
        .ok_or_else(|| Error::protocol(format!("world response is not a frame array: {value}")))?;
    let mut refs = Vec::with_capacity(frames.len());
    for frame in frames {
        let b64 = frame
            .as_str()
            .ok_or_else(|| Error::protocol("world response frame is not a base64 string"))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| Error::protocol(format!("world response frame is not valid base64: {e}")))?;
        refs.push(store.put(bytes)?);
    }
    Ok(refs)
}

impl WorldBackend for HttpWorld {
    fn imagine(&self, request: &WorldModelRequest) -> Result<ImaginedVideo> {
        request.validate()?;
        let bytes = self.store.get(&request.reference_image)?;
        let mut wire = world_request_value(request);
        wire["reference_image"] = json!(base64::engine::general_purpose::STANDARD.encode(bytes.as_slice()));
        let value = with_retries(self.config.retries, self.config.backoff_ms, || {
            self.post_imagine(&wire)
        })?;
        let refs = decode_world_response(&self.store, &value)?;
        video_from_refs(request, refs)
    }
}

// ---------------------------------------------------------------------------
// Recording and replay
// ---------------------------------------------------------------------------

/// Tees world calls to a transcript. The recorded response is the full frame
/// payload (base64 PNGs re-encoded from the store), so replay reconstructs
/// byte-identical images.
pub struct RecordingWorld<B> {
    inner: B,
    writer: Arc<TranscriptWriter>,
    store: Arc<ImageStore>,
}

impl<B> RecordingWorld<B> {
    pub fn new(inner: B, writer: Arc<TranscriptWriter>, store: Arc<ImageStore>) -> Self {
        RecordingWorld {
            inner,
            writer,
            store,
        }
    }
}

impl<B: WorldBackend> WorldBackend for RecordingWorld<B> {
    fn imagine(&self, request: &WorldModelRequest) -> Result<ImaginedVideo> {
        let started = Instant::now();
        let video = self.inner.imagine(request)?;
        let mut payload = Vec::with_capacity(video.frames.len());
        for frame in &video.frames {
            let bytes = self.store.get(&frame.image_ref)?;
            payload.push(json!(
                base64::engine::general_purpose::STANDARD.encode(bytes.as_slice())
            ));
        }
        self.writer.append(
            KIND_WORLD,
            &world_request_value(request),
            &Value::Array(payload),
            started.elapsed().as_millis() as u64,
        )?;
        Ok(video)
    }
}

/// Serves world rollouts from a transcript; decoded frames land in the store
/// with the same content refs as in the recording run.
pub struct ReplayWorld {
    replayer: Arc<TranscriptReplayer>,
    store: Arc<ImageStore>,
}

impl ReplayWorld {
    pub fn new(replayer: Arc<TranscriptReplayer>, store: Arc<ImageStore>) -> Self {
        ReplayWorld { replayer, store }
    }
}

impl WorldBackend for ReplayWorld {
    fn imagine(&self, request: &WorldModelRequest) -> Result<ImaginedVideo> {
        let value = self
            .replayer
            .lookup(KIND_WORLD, &world_request_value(request))?;
        let refs = decode_world_response(&self.store, &value)?;
        video_from_refs(request, refs)
    }
}
