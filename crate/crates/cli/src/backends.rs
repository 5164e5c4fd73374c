//! Concrete backend stacks the CLI can drive: the scene oracle, external
//! HTTP servers, either of those wrapped in a transcript recorder, or a
//! network-free transcript replay. Enums keep the engine entry points
//! (`&dyn WorldBackend` / `&dyn ChatBackend`) agnostic of the mode.

use std::sync::Arc;

use vantage_core::client::{
    ChatBackend, ChatRequest, HttpBackend, HttpConfig, LogprobBackend, LogprobRequest,
    RecordingClient, ReplayClient, TokenLogprobs,
};
use vantage_core::error::Result;
use vantage_core::domain::ImaginedVideo;
use vantage_core::oracle::{OracleVlm, OracleWorld, SceneSim};
use vantage_core::store::ImageStore;
use vantage_core::transcript::{TranscriptReplayer, TranscriptWriter};
use vantage_core::world::{HttpWorld, RecordingWorld, ReplayWorld, WorldBackend, WorldModelRequest};

use crate::config::BackendSpec;

pub enum World {
    Oracle(OracleWorld),
    RecordedOracle(RecordingWorld<OracleWorld>),
    Http(HttpWorld),
    RecordedHttp(RecordingWorld<HttpWorld>),
    Replay(ReplayWorld),
}

impl WorldBackend for World {
    fn imagine(&self, request: &WorldModelRequest) -> Result<ImaginedVideo> {
        match self {
            World::Oracle(b) => b.imagine(request),
            World::RecordedOracle(b) => b.imagine(request),
            World::Http(b) => b.imagine(request),
            World::RecordedHttp(b) => b.imagine(request),
            World::Replay(b) => b.imagine(request),
        }
    }
}

pub enum Chat {
    Oracle(OracleVlm),
    RecordedOracle(RecordingClient<OracleVlm>),
    Http(HttpBackend),
    RecordedHttp(RecordingClient<HttpBackend>),
    Replay(ReplayClient),
}

impl ChatBackend for Chat {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        match self {
            Chat::Oracle(b) => b.chat(request),
            Chat::RecordedOracle(b) => b.chat(request),
            Chat::Http(b) => b.chat(request),
            Chat::RecordedHttp(b) => b.chat(request),
            Chat::Replay(b) => b.chat(request),
        }
    }
}

impl LogprobBackend for Chat {
    fn supports_logprobs(&self) -> bool {
        match self {
            Chat::Oracle(b) => b.supports_logprobs(),
            Chat::RecordedOracle(b) => b.supports_logprobs(),
            Chat::Http(b) => b.supports_logprobs(),
            Chat::RecordedHttp(b) => b.supports_logprobs(),
            Chat::Replay(b) => b.supports_logprobs(),
        }
    }

    fn teacher_forced_logprobs(&self, request: &LogprobRequest) -> Result<TokenLogprobs> {
        match self {
            Chat::Oracle(b) => b.teacher_forced_logprobs(request),
            Chat::RecordedOracle(b) => b.teacher_forced_logprobs(request),
            Chat::Http(b) => b.teacher_forced_logprobs(request),
            Chat::RecordedHttp(b) => b.teacher_forced_logprobs(request),
            Chat::Replay(b) => b.teacher_forced_logprobs(request),
        }
    }
}

/// Recording/replay context shared by every question in a run.
pub enum Mode {
    Live,
    Recording(Arc<TranscriptWriter>),
    Replaying(Arc<TranscriptReplayer>),
}

/// Builds the world/chat pair for one question. Oracle backends bind to the
/// question's scene simulator; HTTP backends are scene-independent.
pub fn build(
    spec: &BackendSpec,
    mode: &Mode,
    sim: Option<&Arc<SceneSim>>,
    store: &Arc<ImageStore>,
) -> Result<(World, Chat)> {
    if let Mode::Replaying(replayer) = mode {
        let chat = ReplayClient::new(replayer.clone());
        return Ok((
            World::Replay(ReplayWorld::new(replayer.clone(), store.clone())),
            Chat::Replay(chat),
        ));
    }
    match spec {
        BackendSpec::Oracle { .. } => {
            let sim = sim.expect("oracle backends require a scene simulator").clone();
            let world = OracleWorld::new(sim.clone());
            let chat = OracleVlm::new(sim);
            match mode {
                Mode::Recording(writer) => Ok((
                    World::RecordedOracle(RecordingWorld::new(world, writer.clone(), store.clone())),
                    Chat::RecordedOracle(RecordingClient::new(chat, writer.clone())),
                )),
                _ => Ok((World::Oracle(world), Chat::Oracle(chat))),
            }
        }
        BackendSpec::Http {
            chat_url,
            world_url,
            deadline_ms,
            supports_logprobs,
        } => {
            let mut chat_config = HttpConfig::new(chat_url.clone()).from_env("VANTAGE_CHAT")?;
            chat_config.deadline_ms = *deadline_ms;
            chat_config.supports_logprobs = *supports_logprobs;
            let world_config = {
                let mut c = HttpConfig::new(world_url.clone()).from_env("VANTAGE_WORLD")?;
                c.deadline_ms = *deadline_ms;
                c
            };
            let world = HttpWorld::new(world_config, store.clone());
            let chat = HttpBackend::new(chat_config, store.clone());
            match mode {
                Mode::Recording(writer) => Ok((
                    World::RecordedHttp(RecordingWorld::new(world, writer.clone(), store.clone())),
                    Chat::RecordedHttp(RecordingClient::new(chat, writer.clone())),
                )),
                _ => Ok((World::Http(world), Chat::Http(chat))),
            }
        }
    }
}
