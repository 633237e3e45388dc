//! `inspect`: interpretability report of a saved pipeline.

use std::fmt::{self, Write as _};

use glasspipe::dtree::{render_dot, render_text, simplify, ComplexityProfile, Names, Tree, VariableRange};
use glasspipe::imaging::{preprocess, response_dims, CHANNELS, CROP_ROWS, IMAGE_SIZE, RAW_HEIGHT, RAW_WIDTH};
use glasspipe::minipong::{MiniPong, ACTION_NAMES};
use glasspipe::vision::{flatten, VisionModule};

use crate::eval::PipelineArtifact;
use crate::Result;

const CHANNEL_NAMES: [&str; CHANNELS] = ["r", "g", "b"];
const ENTITY_NAMES: [&str; 3] = ["opponent", "agent", "ball"];
/// Steps between sampled frames, and how many are sampled.
const SAMPLE_STRIDE: usize = 40;
const SAMPLES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSummary {
    pub l2: f64,
    pub channels: [ChannelStats; CHANNELS],
}

/// Where one kernel fired on one sampled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub nearest: &'static str,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub step: usize,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub simplified: Tree,
    pub text: String,
    pub dot: String,
    pub profile: ComplexityProfile,
    pub m_prime: f64,
    pub m_score: f64,
    pub kernels: Vec<KernelSummary>,
    pub samples: Vec<FrameSample>,
}

/// Range of every coordinate the vision module can output.
pub fn coordinate_domain(k: usize, kernel_size: usize) -> Result<Vec<VariableRange>> {
    let (h, w) = response_dims(IMAGE_SIZE, IMAGE_SIZE, kernel_size, kernel_size)?;
    Ok((0..k)
        .flat_map(|_| [VariableRange::new(0, w as i64 - 1), VariableRange::new(0, h as i64 - 1)])
        .collect())
}

fn kernel_summary(weights: &[f64]) -> KernelSummary {
    let channels = std::array::from_fn(|c| {
        let vals: Vec<f64> = weights.iter().skip(c).step_by(CHANNELS).copied().collect();
        ChannelStats {
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    });
    KernelSummary {
        l2: weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
        channels,
    }
}

/// Response-map position of each entity's center, in `ENTITY_NAMES` order.
fn entity_positions(env: &MiniPong, half: f64) -> Vec<(f64, f64)> {
    let mut rects = Vec::new();
    env.for_each_sprite(|r, _| rects.push(r));
    let sy = IMAGE_SIZE as f64 / (RAW_HEIGHT - CROP_ROWS) as f64;
    let sx = IMAGE_SIZE as f64 / RAW_WIDTH as f64;
    rects[rects.len() - ENTITY_NAMES.len()..]
        .iter()
        .map(|r| {
            let cx = (r.x as f64 + r.width as f64 / 2.0) * sx - half;
            let cy = (r.y as f64 - CROP_ROWS as f64 + r.height as f64 / 2.0) * sy - half;
            (cx, cy)
        })
        .collect()
}

fn sample_frames(artifact: &PipelineArtifact, vm: &VisionModule) -> Result<Vec<FrameSample>> {
    let half = (artifact.pipeline.kernel_size / 2) as f64;
    let mut env = MiniPong::new(artifact.env)?;
    let mut frame = env.reset(0);
    let mut samples = Vec::new();
    for step in 0.. {
        let coords = vm.locate(&preprocess(&frame)?)?;
        if step % SAMPLE_STRIDE == 0 {
            let entities = entity_positions(&env, half);
            let detections = coords
                .iter()
                .map(|c| {
                    let (i, d) = entities
                        .iter()
                        .map(|&(ex, ey)| ((c.x as f64 - ex).powi(2) + (c.y as f64 - ey).powi(2)).sqrt())
                        .enumerate()
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .expect("three entities");
                    Detection {
                        x: c.x,
                        y: c.y,
                        nearest: ENTITY_NAMES[i],
                        distance: d,
                    }
                })
                .collect();
            samples.push(FrameSample { step, detections });
            if samples.len() == SAMPLES {
                break;
            }
        }
        let action = artifact.pipeline.tree.evaluate(&flatten(&coords));
        let out = env.step(action)?;
        if out.done {
            break;
        }
        frame = out.observation;
    }
    Ok(samples)
}

pub fn inspect(artifact: &PipelineArtifact) -> Result<InspectReport> {
    let p = &artifact.pipeline;
    let vm = p.vision()?;
    let simplified = simplify(&p.tree, &coordinate_domain(p.k, p.kernel_size)?);
    let names = Names::entities(p.k, ACTION_NAMES);
    let profile = simplified.complexity_profile();
    let per = p.kernel_size * p.kernel_size * CHANNELS;
    Ok(InspectReport {
        text: render_text(&simplified, &names),
        dot: render_dot(&simplified, &names),
        m_prime: profile.m_prime(),
        m_score: profile.m_score(),
        profile,
        kernels: p.weights.chunks(per).map(kernel_summary).collect(),
        samples: sample_frames(artifact, &vm)?,
        simplified,
    })
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "decision module")?;
        for line in self.text.lines() {
            writeln!(f, "  {line}")?;
        }
        let p = &self.profile;
        writeln!(
            f,
            "complexity  symbols {}  operations {}  non-arithmetic {}  chain {}",
            p.symbols, p.operations, p.non_arithmetic, p.max_non_arithmetic_chain
        )?;
        writeln!(f, "M' {:.1}  M {:.1}", self.m_prime, self.m_score)?;
        writeln!(f)?;
        writeln!(f, "vision module")?;
        for (i, k) in self.kernels.iter().enumerate() {
            let mut line = format!("  kernel {}  |w| {:.3}", i + 1, k.l2);
            for (name, c) in CHANNEL_NAMES.iter().zip(&k.channels) {
                let _ = write!(line, "  {name} {:+.3} [{:+.3}, {:+.3}]", c.mean, c.min, c.max);
            }
            writeln!(f, "{line}")?;
        }
        writeln!(f)?;
        writeln!(f, "detections on sampled frames (seed 0)")?;
        for s in &self.samples {
            let mut line = format!("  step {:>4}", s.step);
            for (i, d) in s.detections.iter().enumerate() {
                let _ = write!(
                    line,
                    "  k{} ({:>2},{:>2}) {} {:.1}",
                    i + 1,
                    d.x,
                    d.y,
                    d.nearest,
                    d.distance
                );
            }
            writeln!(f, "{line}")?;
        }
        writeln!(f)?;
        writeln!(f, "dot")?;
        write!(f, "{}", self.dot)
    }
}
