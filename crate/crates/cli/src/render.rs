//! `render`: PPM frame dumps and a per-step trace of one episode.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use glasspipe::imaging::{preprocess, to_raw, write_ppm, RawFrame};
use glasspipe::minipong::{EnvConfig, MiniPong, TRACE_HEADER};
use glasspipe::vision::flatten;

use crate::eval::PipelineArtifact;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub seed: u64,
    /// Agent steps to play; the episode may end sooner.
    pub steps: usize,
    /// Write every n-th frame.
    pub every: usize,
    /// Also dump the preprocessed frames, scaled back to bytes.
    pub processed: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderOutcome {
    pub frames: Vec<PathBuf>,
    pub trace: PathBuf,
    pub steps: usize,
    pub total_reward: i64,
}

fn dump(path: &Path, frame: &RawFrame) -> Result<()> {
    let wrap = |source| Error::File {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(wrap)?;
    write_ppm(BufWriter::new(file), frame)?;
    Ok(())
}

/// Plays `pipeline` (or NOP without one) and dumps frames and a CSV trace.
pub fn render(pipeline: Option<&PipelineArtifact>, env: EnvConfig, opts: &RenderOptions) -> Result<RenderOutcome> {
    let env_cfg = pipeline.map_or(env, |p| p.env);
    let vm = pipeline.map(|p| p.pipeline.vision()).transpose()?;
    std::fs::create_dir_all(&opts.out).map_err(|source| Error::File {
        path: opts.out.clone(),
        source,
    })?;
    let every = opts.every.max(1);
    let mut env = MiniPong::new(env_cfg)?;
    let mut frame = env.reset(opts.seed);
    let mut frames = Vec::new();
    let mut trace = format!("{TRACE_HEADER}\n");
    let mut total = 0i64;
    let mut steps = 0;
    while steps < opts.steps {
        let processed = preprocess(&frame)?;
        if steps % every == 0 {
            let raw = opts.out.join(format!("frame_{steps:05}.ppm"));
            dump(&raw, &frame)?;
            frames.push(raw);
            if opts.processed {
                let p = opts.out.join(format!("processed_{steps:05}.ppm"));
                dump(&p, &to_raw(&processed))?;
                frames.push(p);
            }
        }
        let action = match (&vm, pipeline) {
            (Some(vm), Some(p)) => p.pipeline.tree.evaluate(&flatten(&vm.locate(&processed)?)),
            _ => 0,
        };
        let out = env.step(action)?;
        trace.push_str(&env.trace_row(action, out.reward));
        trace.push('\n');
        total += out.reward as i64;
        steps += 1;
        frame = out.observation;
        if out.done {
            break;
        }
    }
    let trace_path = opts.out.join("trace.csv");
    crate::write_file(&trace_path, trace.as_bytes())?;
    Ok(RenderOutcome {
        frames,
        trace: trace_path,
        steps,
        total_reward: total,
    })
}
