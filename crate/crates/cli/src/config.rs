//! Declarative run configuration: one TOML file per run, with scalar
//! fields overridable from the command line. Sweeps (verifier × k × γ)
//! live in the file so a benchmark run is reproducible from config alone.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vantage_core::analytics::ReportFormat;
use vantage_core::dataset::McqLayout;
use vantage_core::verifiers::VerifierKind;

/// Raised for anything that should terminate with the usage/config exit
/// code before a run starts.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    parallelism: Option<usize>,
    #[serde(default)]
    format: Option<String>,
    /// Record all backend traffic to `<out_dir>/transcript.jsonl`.
    #[serde(default)]
    record_transcript: bool,
    /// Optional perceptual-quality CSV merged into reports.
    #[serde(default)]
    quality_scores: Option<PathBuf>,
    backend: BackendSection,
    #[serde(default)]
    dataset: Option<DatasetSection>,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    entropy: EntropySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendSection {
    kind: String,
    // oracle backend
    #[serde(default)]
    scenes_dir: Option<PathBuf>,
    #[serde(default)]
    scene_limit: Option<usize>,
    // http backend
    #[serde(default)]
    chat_url: Option<String>,
    #[serde(default)]
    world_url: Option<String>,
    #[serde(default)]
    deadline_ms: Option<u64>,
    #[serde(default)]
    supports_logprobs: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    manifest: PathBuf,
    layout: String,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    #[serde(default)]
    verifiers: Option<Vec<String>>,
    #[serde(default)]
    top_k: Option<Vec<usize>>,
    #[serde(default)]
    gamma: Option<Vec<u32>>,
    #[serde(default)]
    beam_width: Option<usize>,
    #[serde(default)]
    frames_per_rollout: Option<usize>,
    #[serde(default)]
    include_baseline: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EntropySection {
    #[serde(default)]
    sample_size: Option<usize>,
}

// ---------------------------------------------------------------------------
// Resolved settings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum BackendSpec {
    /// Scene-fixture oracle: world and VLM simulated exactly.
    Oracle {
        scenes_dir: PathBuf,
        scene_limit: Option<usize>,
    },
    /// External inference servers.
    Http {
        chat_url: String,
        world_url: String,
        deadline_ms: u64,
        supports_logprobs: bool,
    },
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub verifiers: Vec<VerifierKind>,
    pub top_k: Vec<usize>,
    pub gamma: Vec<u32>,
    pub beam_width: usize,
    pub frames_per_rollout: usize,
    pub include_baseline: bool,
}

/// Fully resolved run settings: file values with CLI overrides applied.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config_path: PathBuf,
    pub config_sha: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub format: ReportFormat,
    pub record_transcript: bool,
    pub quality_scores: Option<PathBuf>,
    pub backend: BackendSpec,
    pub dataset: Option<(PathBuf, McqLayout)>,
    pub sweep: Sweep,
    pub entropy_sample_size: usize,
    /// Replay transcript path (disables live backends).
    pub replay: Option<PathBuf>,
}

/// Scalar overrides from command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub format: Option<String>,
    pub replay: Option<PathBuf>,
}

/// Paths inside the config resolve relative to the config file's directory.
fn resolve(base: &Path, path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Settings, ConfigError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ConfigError(format!("cannot read config {path:?}: {e}")))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| ConfigError(format!("config {path:?} is not UTF-8")))?;
    // toml's parse errors carry line/column positions
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| ConfigError(format!("invalid config {path:?}:\n{e}")))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let backend = match file.backend.kind.as_str() {
        "oracle" => {
            let Some(dir) = file.backend.scenes_dir.clone() else {
                return err("backend.kind = \"oracle\" requires backend.scenes_dir");
            };
            BackendSpec::Oracle {
                scenes_dir: resolve(&base, dir),
                scene_limit: file.backend.scene_limit,
            }
        }
        "http" => {
            let (Some(chat_url), Some(world_url)) = (
                file.backend.chat_url.clone(),
                file.backend.world_url.clone(),
            ) else {
                return err("backend.kind = \"http\" requires backend.chat_url and backend.world_url");
            };
            BackendSpec::Http {
                chat_url,
                world_url,
                deadline_ms: file.backend.deadline_ms.unwrap_or(30_000),
                supports_logprobs: file.backend.supports_logprobs.unwrap_or(true),
            }
        }
        other => {
            return err(format!(
                "unknown backend.kind {other:?} (expected \"oracle\" or \"http\")"
            ))
        }
    };

    let dataset = match file.dataset {
        Some(d) => {
            let layout = McqLayout::parse(&d.layout).map_err(|e| ConfigError(e.to_string()))?;
            Some((resolve(&base, d.manifest), layout))
        }
        None => None,
    };
    if matches!(backend, BackendSpec::Http { .. }) && dataset.is_none() {
        return err("the http backend requires a [dataset] section (manifest + layout)");
    }

    let verifier_names = file
        .sweep
        .verifiers
        .unwrap_or_else(|| vec!["visa".to_string()]);
    let mut verifiers = Vec::new();
    for name in &verifier_names {
        verifiers.push(VerifierKind::parse(name).map_err(|e| ConfigError(e.to_string()))?);
    }
    let sweep = Sweep {
        verifiers,
        top_k: file.sweep.top_k.unwrap_or_else(|| vec![4]),
        gamma: file.sweep.gamma.unwrap_or_else(|| vec![1]),
        beam_width: file.sweep.beam_width.unwrap_or(3),
        frames_per_rollout: file.sweep.frames_per_rollout.unwrap_or(1),
        include_baseline: file.sweep.include_baseline.unwrap_or(false),
    };
    if sweep.verifiers.is_empty() {
        return err("sweep.verifiers must not be empty");
    }
    if sweep.top_k.is_empty() || sweep.top_k.contains(&0) {
        return err("sweep.top_k must be a non-empty list of values >= 1");
    }
    if sweep.gamma.is_empty() || sweep.gamma.contains(&0) {
        return err("sweep.gamma must be a non-empty list of values >= 1");
    }
    if sweep.beam_width == 0 || sweep.frames_per_rollout == 0 {
        return err("sweep.beam_width and sweep.frames_per_rollout must be >= 1");
    }

    let format_name = overrides
        .format
        .clone()
        .or(file.format)
        .unwrap_or_else(|| "csv".to_string());
    let format = ReportFormat::parse(&format_name).map_err(|e| ConfigError(e.to_string()))?;

    let parallelism = overrides.parallel.or(file.parallelism).unwrap_or(1);
    if parallelism == 0 {
        return err("parallelism must be >= 1");
    }
    let entropy_sample_size = file.entropy.sample_size.unwrap_or(12);
    if entropy_sample_size == 0 {
        return err("entropy.sample_size must be >= 1");
    }

    Ok(Settings {
        config_path: path.to_path_buf(),
        config_sha: vantage_core::store::content_ref(&bytes),
        seed: overrides.seed.or(file.seed).unwrap_or(0),
        out_dir: overrides
            .out_dir
            .clone()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| {
                file.out_dir
                    .map(|p| resolve(&base, p))
                    .unwrap_or_else(|| PathBuf::from("vantage-out"))
            }),
        parallelism,
        format,
        record_transcript: file.record_transcript,
        quality_scores: file.quality_scores.map(|p| resolve(&base, p)),
        backend,
        dataset,
        sweep,
        entropy_sample_size,
        replay: overrides.replay.clone(),
    })
}
