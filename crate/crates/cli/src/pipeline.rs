//! Shared run plumbing: question loading (oracle scenes or dataset
//! manifests), sweep execution, and deterministic output writing.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Serialize;
use vantage_core::analytics::{
    accuracy_table, action_distribution, emit_report, ingest_quality_scores, QualityReport,
    ReportBundle,
};
use vantage_core::calibration::EntropySummary;
use vantage_core::dataset::{category_map, load_dataset, read_manifest};
use vantage_core::domain::{EvidenceBuffer, QuestionInstance, RunResult};
use vantage_core::oracle::SceneSim;
use vantage_core::scene::Scene;
use vantage_core::search::{answer, run_search, SearchConfig, SearchTrace, BASELINE_VERIFIER};
use vantage_core::store::ImageStore;
use vantage_core::transcript::{TranscriptReplayer, TranscriptWriter};
use vantage_core::verifiers::{VerifierConfig, VerifierKind};

use crate::backends::{build, Chat, Mode, World};
use crate::config::{BackendSpec, Settings};

/// One question ready to run: id, instance, and (for oracle backends) the
/// scene simulator it came from.
pub struct PlannedQuestion {
    pub id: String,
    pub seed: u64,
    pub instance: QuestionInstance,
    pub sim: Option<Arc<SceneSim>>,
}

pub struct Pipeline {
    pub settings: Settings,
    pub store: Arc<ImageStore>,
    pub questions: Vec<PlannedQuestion>,
    pub mode: Mode,
}

/// Loads scene fixtures in sorted filename order.
pub fn load_scenes(dir: &Path, limit: Option<usize>) -> anyhow::Result<Vec<(String, Scene)>> {
    let entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read scenes directory {dir:?}"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<PathBuf>>>()?;
    let mut paths: Vec<PathBuf> = entries
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if let Some(limit) = limit {
        paths.truncate(limit);
    }
    if paths.is_empty() {
        bail!("no scene fixtures (*.json) found in {dir:?}");
    }
    let mut scenes = Vec::new();
    for path in paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scene")
            .to_string();
        let scene = Scene::load(&path).with_context(|| format!("loading scene {path:?}"))?;
        scenes.push((id, scene));
    }
    Ok(scenes)
}

impl Pipeline {
    /// Prepares questions and the recording/replay mode. `sample_size`
    /// limits (dataset) or cycles (oracle scenes) the question set; `None`
    /// uses each scene or manifest row exactly once.
    pub fn prepare(settings: Settings, sample_size: Option<usize>) -> anyhow::Result<Pipeline> {
        std::fs::create_dir_all(&settings.out_dir)
            .with_context(|| format!("cannot create out dir {:?}", settings.out_dir))?;
        let store = ImageStore::in_memory();

        let mode = if let Some(path) = &settings.replay {
            let replayer =
                TranscriptReplayer::load(path).with_context(|| format!("loading transcript {path:?}"))?;
            Mode::Replaying(Arc::new(replayer))
        } else if settings.record_transcript {
            let path = settings.out_dir.join("transcript.jsonl");
            let writer = TranscriptWriter::create(&path)
                .with_context(|| format!("cannot create transcript {path:?}"))?;
            Mode::Recording(Arc::new(writer))
        } else {
            Mode::Live
        };

        let mut questions = Vec::new();
        match &settings.backend {
            BackendSpec::Oracle {
                scenes_dir,
                scene_limit,
            } => {
                let scenes = load_scenes(scenes_dir, *scene_limit)?;
                let sims: Vec<(String, Arc<SceneSim>)> = scenes
                    .into_iter()
                    .map(|(id, scene)| {
                        SceneSim::new(scene, store.clone())
                            .map(|sim| (id, Arc::new(sim)))
                            .map_err(anyhow::Error::from)
                    })
                    .collect::<anyhow::Result<_>>()?;
                let total = sample_size.unwrap_or(sims.len());
                for j in 0..total {
                    let (scene_id, sim) = &sims[j % sims.len()];
                    let seed = settings.seed.wrapping_add(j as u64);
                    let instance = sim.question(seed)?;
                    let id = if total <= sims.len() {
                        scene_id.clone()
                    } else {
                        format!("{scene_id}-q{j:03}")
                    };
                    questions.push(PlannedQuestion {
                        id,
                        seed,
                        instance,
                        sim: Some(sim.clone()),
                    });
                }
            }
            BackendSpec::Http { .. } => {
                let (manifest, layout) = settings
                    .dataset
                    .clone()
                    .expect("validated: http backend has a dataset");
                let loaded = load_dataset(&manifest, layout, &store)?;
                for (j, q) in loaded.into_iter().enumerate() {
                    if sample_size.is_some_and(|n| j >= n) {
                        break;
                    }
                    questions.push(PlannedQuestion {
                        id: q.id,
                        seed: settings.seed,
                        instance: q.instance,
                        sim: None,
                    });
                }
            }
        }
        Ok(Pipeline {
            settings,
            store,
            questions,
            mode,
        })
    }

    pub fn backends_for(&self, question: &PlannedQuestion) -> anyhow::Result<(World, Chat)> {
        Ok(build(
            &self.settings.backend,
            &self.mode,
            question.sim.as_ref(),
            &self.store,
        )?)
    }

    pub fn search_config(&self, kind: VerifierKind, top_k: usize, gamma: u32) -> SearchConfig {
        let verifier = match kind {
            VerifierKind::Random => VerifierConfig::random(self.settings.seed),
            other => VerifierConfig::new(other),
        };
        let mut config = SearchConfig::new(gamma, top_k, verifier);
        config.beam_width = self.settings.sweep.beam_width;
        config.frames_per_rollout = self.settings.sweep.frames_per_rollout;
        config.parallelism = self.settings.parallelism;
        config
    }

    /// Runs the whole sweep over every planned question. Returns results in
    /// deterministic order (baseline first, then cells in config order) and
    /// the search traces alongside.
    pub fn run_sweep(&self) -> anyhow::Result<(Vec<RunResult>, Vec<SearchTrace>)> {
        let mut results = Vec::new();
        let mut traces = Vec::new();
        let traces_dir = self.settings.out_dir.join("traces");
        std::fs::create_dir_all(&traces_dir)?;

        if self.settings.sweep.include_baseline {
            for q in &self.questions {
                let (_, chat) = self.backends_for(q)?;
                let empty = EvidenceBuffer::new(1).expect("capacity 1 is valid");
                let result = answer(&q.id, &q.instance, &empty, BASELINE_VERIFIER, 0, &chat);
                results.push(result);
            }
        }

        for kind in &self.settings.sweep.verifiers {
            for &top_k in &self.settings.sweep.top_k {
                for &gamma in &self.settings.sweep.gamma {
                    let config = self.search_config(*kind, top_k, gamma);
                    for q in &self.questions {
                        let (world, chat) = self.backends_for(q)?;
                        let (buffer, trace) = run_search(&q.instance, &config, &world, &chat)?;
                        let result =
                            answer(&q.id, &q.instance, &buffer, kind.name(), gamma, &chat);
                        let file = traces_dir.join(format!(
                            "{}--{}-k{}-g{}.jsonl",
                            q.id,
                            kind.name(),
                            top_k,
                            gamma
                        ));
                        trace.write_file(&file)?;
                        results.push(result);
                        traces.push(trace);
                    }
                }
            }
        }
        Ok((results, traces))
    }

    /// Category labels keyed by question id, for the accuracy table.
    pub fn categories(&self) -> HashMap<String, String> {
        match &self.settings.backend {
            BackendSpec::Oracle { .. } => self
                .questions
                .iter()
                .map(|q| (q.id.clone(), q.instance.category.clone()))
                .collect(),
            BackendSpec::Http { .. } => {
                let Some((manifest, _)) = &self.settings.dataset else {
                    return HashMap::new();
                };
                read_manifest(manifest)
                    .map(|entries| category_map(&entries))
                    .unwrap_or_default()
            }
        }
    }

    pub fn quality(&self, traces: &[SearchTrace]) -> anyhow::Result<Option<QualityReport>> {
        let Some(path) = &self.settings.quality_scores else {
            return Ok(None);
        };
        let mut known: HashSet<String> = HashSet::new();
        for trace in traces {
            for node in &trace.nodes {
                known.extend(node.frame_refs.iter().cloned());
            }
        }
        Ok(Some(ingest_quality_scores(path, &known)?))
    }

    /// Writes results.jsonl, report files, and the run manifest.
    pub fn write_outputs(
        &self,
        command: &str,
        results: &[RunResult],
        traces: &[SearchTrace],
        entropy: EntropySummary,
    ) -> anyhow::Result<Vec<PathBuf>> {
        let out = &self.settings.out_dir;
        let mut lines = String::new();
        for result in results {
            lines.push_str(&serde_json::to_string(result)?);
            lines.push('\n');
        }
        std::fs::write(out.join("results.jsonl"), lines)?;

        let bundle = ReportBundle {
            accuracy: accuracy_table(results, &self.categories()),
            entropy,
            actions_selected: action_distribution(traces, true),
            actions_expanded: action_distribution(traces, false),
            quality: self.quality(traces)?,
        };
        let written = emit_report(&bundle, self.settings.format, out)?;
        self.write_manifest(command)?;
        Ok(written)
    }

    /// The replay manifest: config hash, seeds, and code version. No
    /// timestamps — outputs stay byte-identical across reruns.
    fn write_manifest(&self, command: &str) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct QuestionEntry<'a> {
            id: &'a str,
            seed: u64,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            version: &'a str,
            config_path: String,
            config_sha256: &'a str,
            seed: u64,
            parallelism: usize,
            format: &'a str,
            replay: Option<String>,
            questions: Vec<QuestionEntry<'a>>,
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_path: self.settings.config_path.display().to_string(),
            config_sha256: &self.settings.config_sha,
            seed: self.settings.seed,
            parallelism: self.settings.parallelism,
            format: match self.settings.format {
                vantage_core::analytics::ReportFormat::Csv => "csv",
                vantage_core::analytics::ReportFormat::Json => "json",
                vantage_core::analytics::ReportFormat::Svg => "svg",
            },
            replay: self
                .settings
                .replay
                .as_ref()
                .map(|p| p.display().to_string()),
            questions: self
                .questions
                .iter()
                .map(|q| QuestionEntry {
                    id: &q.id,
                    seed: q.seed,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(self.settings.out_dir.join("manifest.json"), text)?;
        Ok(())
    }

    /// Count of degraded results, for the warnings summary.
    pub fn degraded_count(results: &[RunResult]) -> usize {
        results.iter().filter(|r| r.degraded).count()
    }
}
