//! Episode rollouts of a (vision module, decision tree) pair.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtree::Tree;
use crate::error::{invalid, Result};
use crate::imaging::{PreprocessSpec, Preprocessor};
use crate::minipong::{Canvas, EnvConfig, MiniPong};
use crate::seed::{self, Stream};
use crate::vision::{flatten_into, Coordinate, SparseLocator, VisionModule};

/// A complete vision → decision pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub k: usize,
    pub kernel_size: usize,
    /// Kernel weights, kernel-major, row-major, channel innermost.
    pub weights: Vec<f64>,
    pub tree: Tree,
}

impl Pipeline {
    pub fn vision(&self) -> Result<VisionModule> {
        VisionModule::from_parameters(&self.weights, self.k, self.kernel_size, self.kernel_size)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Pipeline = serde_json::from_str(s)?;
        p.vision()?;
        Ok(p)
    }
}

/// Reusable per-worker rollout buffers.
#[derive(Debug)]
pub struct Evaluator {
    env: MiniPong,
    canvas: Canvas,
    pre: Preprocessor,
    locator: SparseLocator,
    coords: Vec<Coordinate>,
    features: Vec<f64>,
    mask: Vec<bool>,
}

impl Evaluator {
    pub fn new(env: EnvConfig) -> Result<Self> {
        Ok(Self {
            env: MiniPong::new(env)?,
            canvas: Canvas::new(),
            pre: Preprocessor::new(PreprocessSpec::default()),
            locator: SparseLocator::new(),
            coords: Vec::new(),
            features: Vec::new(),
            mask: Vec::new(),
        })
    }

    /// Total reward of one episode.
    pub fn episode(&mut self, vm: &VisionModule, tree: &Tree, seed: u64) -> Result<f64> {
        let vars = tree.variables();
        if let Some(&v) = vars.last() {
            if v >= 2 * vm.len() {
                return Err(invalid(format!("tree reads variable {v}, the vision module has {} kernels", vm.len())));
            }
        }
        self.mask.clear();
        self.mask.resize(vm.len(), false);
        for v in &vars {
            self.mask[v / 2] = true;
        }
        self.features.clear();
        self.features.resize(2 * vm.len(), 0.0);

        self.env.restart(seed);
        let mut total = 0i64;
        loop {
            let action = match tree {
                Tree::Leaf(a) => *a,
                _ => {
                    self.canvas.draw(&self.env);
                    self.pre.run_regions(self.canvas.frame(), self.canvas.regions())?;
                    self.locator.locate_masked(
                        vm,
                        self.pre.output(),
                        self.pre.nonzero_pixels(),
                        Some(&self.mask),
                        &mut self.coords,
                    )?;
                    flatten_into(&self.coords, &mut self.features);
                    tree.evaluate(&self.features)
                }
            };
            let (reward, done) = self.env.advance(action)?;
            total += reward as i64;
            if done {
                return Ok(total as f64);
            }
        }
    }

    /// Mean episode total over `seeds`. A faulting pair scores the
    /// environment minimum.
    pub fn mean_score(&mut self, vm: &VisionModule, tree: &Tree, seeds: &[u64]) -> f64 {
        let mut sum = 0.0;
        for &s in seeds {
            match self.episode(vm, tree, s) {
                Ok(r) => sum += r,
                Err(e) => {
                    warn!("episode with seed {s} failed: {e}");
                    return minimum_score(self.env.config());
                }
            }
        }
        sum / seeds.len() as f64
    }
}

/// Lowest achievable episode total.
pub fn minimum_score(env: &EnvConfig) -> f64 {
    -(env.points_to_win as f64)
}

/// Mean score of `tree` driven by `vm` over the given episode seeds.
pub fn evaluate_pair(vm: &VisionModule, tree: &Tree, env: &EnvConfig, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(invalid("at least one episode seed is required"));
    }
    Ok(Evaluator::new(*env)?.mean_score(vm, tree, seeds))
}

/// Seeds for held-out testing; disjoint from training streams.
pub fn held_out_seeds(base_seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64)
        .map(|i| seed::derive(base_seed, Stream::HeldOut, &[i]))
        .collect()
}

/// Per-episode totals of `pipeline` on `episodes` held-out seeds.
pub fn held_out_scores(pipeline: &Pipeline, env: &EnvConfig, episodes: usize, base_seed: u64) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(invalid("at least one episode is required"));
    }
    let vm = pipeline.vision()?;
    env.validate()?;
    held_out_seeds(base_seed, episodes)
        .par_iter()
        .map_init(
            || Evaluator::new(*env),
            |ev, &s| match ev {
                Ok(ev) => ev.episode(&vm, &pipeline.tree, s),
                Err(e) => Err(invalid(e.to_string())),
            },
        )
        .collect()
}
