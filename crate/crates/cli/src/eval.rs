//! `eval`: held-out episodes of a saved pipeline.

use std::fmt;
use std::path::Path;

use glasspipe::coevo::{held_out_scores, Pipeline};
use glasspipe::minipong::{EnvConfig, FrameSkip};
use glasspipe::stats::{self, Summary};
use serde::{Deserialize, Serialize};

use crate::{read_file, usage, Error, Result};

/// A pipeline together with the environment it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineArtifact {
    pub pipeline: Pipeline,
    pub env: EnvConfig,
    #[serde(default)]
    pub fitness: Option<f64>,
    #[serde(default)]
    pub generation: Option<u64>,
}

impl PipelineArtifact {
    pub fn new(pipeline: Pipeline, env: EnvConfig) -> Self {
        Self {
            pipeline,
            env,
            fitness: None,
            generation: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        a.pipeline.vision()?;
        a.env.validate()?;
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}

/// Parses `none`, `stochastic` (2..4 ticks) or `stochastic:MIN:MAX`.
pub fn parse_frame_skip(mode: &str) -> Result<FrameSkip> {
    let parts: Vec<&str> = mode.split(':').collect();
    let skip = match parts.as_slice() {
        ["none"] => FrameSkip::None,
        ["stochastic"] => FrameSkip::stochastic_default(),
        ["stochastic", lo, hi] => {
            let num = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| usage(format!("bad frame-skip bound {s:?}")))
            };
            FrameSkip::Stochastic {
                min: num(lo)?,
                max: num(hi)?,
            }
        }
        _ => return Err(usage(format!("unknown frame-skip mode {mode:?}"))),
    };
    if let FrameSkip::Stochastic { min, max } = skip {
        if min == 0 || min > max {
            return Err(usage(format!("frame-skip bounds {min}..{max} are invalid")));
        }
    }
    Ok(skip)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub base_seed: u64,
    pub frame_skip: FrameSkip,
    pub scores: Vec<f64>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn new(scores: Vec<f64>, base_seed: u64, frame_skip: FrameSkip) -> Result<Self> {
        let summary = stats::summarize(&scores)?;
        Ok(Self {
            base_seed,
            frame_skip,
            scores,
            summary,
        })
    }

    pub fn summary_line(&self) -> String {
        let s = &self.summary;
        match s.ci95 {
            Some(ci) => format!("n {} mean {:.3} std {:.3} ci95 ±{:.3}", s.n, s.mean, s.std, ci),
            None => format!("n {} mean {:.3} std {:.3}", s.n, s.mean, s.std),
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "episodes   {}", self.summary.n)?;
        writeln!(f, "base seed  {}", self.base_seed)?;
        writeln!(f, "mean       {:.3}", self.summary.mean)?;
        writeln!(f, "std        {:.3}", self.summary.std)?;
        match self.summary.ci95 {
            Some(ci) => writeln!(
                f,
                "ci95       ±{ci:.3} [{:.3}, {:.3}]",
                self.summary.mean - ci,
                self.summary.mean + ci
            ),
            None => writeln!(f, "ci95       n/a (one episode)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub frame_skip: Option<FrameSkip>,
}

pub fn evaluate(artifact: &PipelineArtifact, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let mut env = artifact.env;
    if let Some(skip) = opts.frame_skip {
        env.frame_skip = skip;
    }
    let scores = held_out_scores(&artifact.pipeline, &env, opts.episodes, opts.seed).map_err(Error::Core)?;
    EvalReport::new(scores, opts.seed, env.frame_skip)
}
