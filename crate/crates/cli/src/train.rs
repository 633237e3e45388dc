//! `train`: one co-evolution run in its own directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json            config snapshot, seed, start time, version
//! log.csv                  one row per generation (see LOG_COLUMNS)
//! checkpoints/gen_NNN.json state after generation NNN
//! best_pipeline.json       best pipeline found, with its environment
//! held_out.json            held-out scores of the best pipeline
//! plots/                   charts written by `plot`
//! ```

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use glasspipe::coevo::{Checkpoint, CoevoConfig, Coevolution, GenerationRecord};
use log::info;
use serde::{Deserialize, Serialize};

use crate::eval::{EvalReport, PipelineArtifact};
use crate::{read_file, usage, write_file, Error, Result};

/// Environment variable naming the directory that holds run directories.
pub const OUTPUT_ROOT_VAR: &str = "GLASSPIPE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub const LOG_COLUMNS: [&str; 12] = [
    "generation",
    "best_fitness",
    "mean_fitness",
    "best_so_far",
    "vision_clusters",
    "vision_noise",
    "decision_clusters",
    "decision_noise",
    "actual_evaluations",
    "theoretical_evaluations",
    "evaluations_saved",
    "wall_time_s",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("log.csv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, generation: u64) -> PathBuf {
        self.checkpoints().join(format!("gen_{generation:03}.json"))
    }

    pub fn best_pipeline(&self) -> PathBuf {
        self.root.join("best_pipeline.json")
    }

    pub fn held_out(&self) -> PathBuf {
        self.root.join("held_out.json")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }

    /// Path of the checkpoint with the highest generation number.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.checkpoints();
        if !dir.is_dir() {
            return Ok(None);
        }
        let entries = std::fs::read_dir(&dir).map_err(|source| Error::File { path: dir.clone(), source })?;
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in entries {
            let path = entry.map_err(|source| Error::File { path: dir.clone(), source })?.path();
            let generation = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("gen_"))
                .and_then(|n| n.strip_suffix(".json"))
                .and_then(|n| n.parse::<u64>().ok());
            if let Some(g) = generation {
                if best.as_ref().is_none_or(|(b, _)| g > *b) {
                    best = Some((g, path));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNames {
    pub log: String,
    pub checkpoints: String,
    pub best_pipeline: String,
    pub held_out: String,
    pub plots: String,
}

impl Default for LayoutNames {
    fn default() -> Self {
        Self {
            log: "log.csv".into(),
            checkpoints: "checkpoints/gen_NNN.json".into(),
            best_pipeline: "best_pipeline.json".into(),
            held_out: "held_out.json".into(),
            plots: "plots/".into(),
        }
    }
}

/// Written once before generation 0 and never touched again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: CoevoConfig,
    pub seed: u64,
    pub started_unix_s: u64,
    pub version: String,
    pub layout: LayoutNames,
}

impl RunManifest {
    pub fn new(config: &CoevoConfig) -> Self {
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            config: config.clone(),
            seed: config.seed,
            started_unix_s: started,
            version: concat!("glasspipe ", env!("CARGO_PKG_VERSION")).into(),
            layout: LayoutNames::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub config: PathBuf,
    pub resume: bool,
    pub workers: Option<usize>,
    /// Run directory; defaults to `<output root>/<config stem>-seed<seed>`.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub layout: RunLayout,
    pub history: Vec<GenerationRecord>,
    pub held_out: EvalReport,
}

/// Output root from the environment, or `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn default_run_dir(config_path: &Path, cfg: &CoevoConfig) -> PathBuf {
    let stem = config_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run");
    output_root().join(format!("{stem}-seed{}", cfg.seed))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_log(path: &Path, history: &[GenerationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r)?;
    }
    if history.is_empty() {
        w.write_record(LOG_COLUMNS)?;
    }
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_log(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != LOG_COLUMNS {
        return Err(usage(format!("{}: unexpected columns {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn same_run(a: &CoevoConfig, b: &CoevoConfig) -> bool {
    let mut a = a.clone();
    a.workers = b.workers;
    a == *b
}

/// Runs (or resumes) training and writes every artifact of the run.
pub fn train(opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut cfg = crate::config::load(&opts.config)?;
    if let Some(w) = opts.workers {
        cfg.workers = w;
    }
    let layout = RunLayout::new(
        opts.run_dir
            .clone()
            .unwrap_or_else(|| default_run_dir(&opts.config, &cfg)),
    );

    let mut run = if opts.resume {
        let path = layout
            .latest_checkpoint()?
            .ok_or_else(|| usage(format!("no checkpoint to resume in {}", layout.root.display())))?;
        let checkpoint = Checkpoint::from_json(&read_file(&path)?)?;
        if !same_run(&checkpoint.config, &cfg) {
            return Err(usage(format!(
                "{} does not match the checkpoint in {}",
                opts.config.display(),
                layout.root.display()
            )));
        }
        info!("resuming {} after generation {}", layout.root.display(), checkpoint.generation);
        let mut run = Coevolution::resume(checkpoint)?;
        run.set_workers(cfg.workers)?;
        run
    } else {
        if layout.manifest().exists() {
            return Err(usage(format!(
                "{} already holds a run; pass --resume to continue it",
                layout.root.display()
            )));
        }
        let run = Coevolution::new(cfg.clone())?;
        create_dir(&layout.checkpoints())?;
        write_file(
            &layout.manifest(),
            serde_json::to_string_pretty(&RunManifest::new(&cfg))?.as_bytes(),
        )?;
        write_log(&layout.log(), &[])?;
        run
    };

    run.run_with(|run, record| {
        write_file(&layout.checkpoint(record.generation), run.checkpoint().to_json()?.as_bytes())
            .map_err(|e| glasspipe::Error::Checkpoint(e.to_string()))?;
        write_log(&layout.log(), run.history()).map_err(|e| glasspipe::Error::Checkpoint(e.to_string()))?;
        Ok(())
    })?;
    write_log(&layout.log(), run.history())?;

    let best = run.best().ok_or_else(|| usage("the run finished without a best pipeline"))?;
    let artifact = PipelineArtifact {
        pipeline: best.pipeline.clone(),
        env: run.config().env,
        fitness: Some(best.fitness),
        generation: Some(best.generation),
    };
    write_file(&layout.best_pipeline(), artifact.to_json()?.as_bytes())?;

    let scores = run.test_best(run.config().held_out_episodes)?;
    let held_out = EvalReport::new(scores, run.config().seed, run.config().env.frame_skip)?;
    write_file(&layout.held_out(), serde_json::to_string_pretty(&held_out)?.as_bytes())?;
    info!("held-out: {}", held_out.summary_line());

    Ok(TrainOutcome {
        layout,
        history: run.history().to_vec(),
        held_out,
    })
}
