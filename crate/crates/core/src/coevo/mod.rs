//! Two-population co-evolution: CMA-ES over kernel weights, GP over trees.
//!
//! Every generation each vision individual is paired with each decision
//! individual (with clustering, each vision representative with each
//! decision representative) and the pair plays `e` episodes. An individual's
//! fitness is its best pairing score.

mod evaluate;

use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use evaluate::{evaluate_pair, held_out_scores, held_out_seeds, minimum_score, Evaluator, Pipeline};

use crate::behavior::{
    broadcast_fitness, cluster, decision_signature, vision_signature, ClusterAssignment, ClusteringConfig, ProbeSet,
};
use crate::cmaes::{CmaConfig, CmaState};
use crate::error::{invalid, Error, Result};
use crate::gp::{self, GpConfig, GpPopulation};
use crate::imaging::PreprocessSpec;
use crate::minipong::{EnvConfig, ACTION_COUNT};
use crate::seed::{self, Stream};
use crate::vision::{VisionModule, KERNEL_SIZE};

pub const CHECKPOINT_MAGIC: &str = "glasspipe-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a row or column of the fitness matrix becomes one fitness value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaSettings {
    #[serde(rename = "p_c")]
    pub population_size: usize,
    #[serde(rename = "sigma")]
    pub initial_step_size: f64,
}

impl Default for CmaSettings {
    fn default() -> Self {
        Self {
            population_size: 50,
            initial_step_size: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoevoConfig {
    pub seed: u64,
    #[serde(rename = "g")]
    pub generations: u64,
    #[serde(rename = "e")]
    pub episodes: usize,
    pub k: usize,
    pub kernel_size: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub aggregation: Aggregation,
    pub held_out_episodes: usize,
    pub env: EnvConfig,
    pub cma: CmaSettings,
    pub gp: GpConfig,
    pub clustering: ClusteringConfig,
}

impl Default for CoevoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generations: 100,
            episodes: 3,
            k: 2,
            kernel_size: KERNEL_SIZE,
            workers: 0,
            aggregation: Aggregation::Max,
            held_out_episodes: 100,
            env: EnvConfig::default(),
            cma: CmaSettings::default(),
            gp: GpConfig::default(),
            clustering: ClusteringConfig::default(),
        }
    }
}

impl CoevoConfig {
    /// Small populations and 30 generations.
    pub fn desk(seed: u64) -> Self {
        let mut c = Self {
            seed,
            generations: 30,
            ..Self::default()
        };
        c.cma.population_size = 16;
        c.gp.population_size = 16;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.episodes == 0 {
            return Err(invalid("g and e must be at least 1"));
        }
        if self.k == 0 || self.kernel_size == 0 || self.kernel_size > PreprocessSpec::default().output_size {
            return Err(invalid("k must be positive and kernels must fit the processed frame"));
        }
        if self.gp.variable_arity != 2 * self.k {
            return Err(invalid(format!(
                "gp.variable_arity must be 2k = {}, got {}",
                2 * self.k,
                self.gp.variable_arity
            )));
        }
        if self.gp.action_count != ACTION_COUNT {
            return Err(invalid(format!("gp.action_count must be {ACTION_COUNT}")));
        }
        if self.held_out_episodes == 0 {
            return Err(invalid("held_out_episodes must be at least 1"));
        }
        self.env.validate()?;
        self.cma_config().validate()?;
        self.gp.validate()?;
        self.clustering.validate()
    }

    pub fn dimension(&self) -> usize {
        VisionModule::parameter_count(self.k, self.kernel_size, self.kernel_size)
    }

    pub fn cma_config(&self) -> CmaConfig {
        CmaConfig::new(self.dimension(), self.cma.population_size, self.cma.initial_step_size)
    }

    /// Episodes a generation costs without clustering, `p_c · p_g · e`.
    pub fn theoretical_evaluations(&self) -> u64 {
        (self.cma.population_size * self.gp.population_size * self.episodes) as u64
    }
}

/// Mean pairing scores of vision units (rows) against decision units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FitnessMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(invalid(format!("{rows}x{cols} matrix needs {} values", rows * cols)));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// First cell (row-major) holding the maximum.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<usize> = None;
        for (c, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| v > self.values[b]) {
                best = Some(c);
            }
        }
        best.map(|c| (c / self.cols, c % self.cols))
    }
}

/// Row and column maxima: `(vision fitness, decision fitness)`.
pub fn fitness_from_matrix(m: &FitnessMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    aggregate(m, Aggregation::Max)
}

pub fn aggregate(m: &FitnessMatrix, how: Aggregation) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.rows == 0 || m.cols == 0 || m.values.len() != m.rows * m.cols {
        return Err(invalid("fitness matrix is empty or malformed"));
    }
    if let Some(index) = m.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFitness {
            index,
            value: m.values[index],
        });
    }
    let reduce = |it: &mut dyn Iterator<Item = f64>, n: usize| match how {
        Aggregation::Max => it.fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => it.sum::<f64>() / n as f64,
    };
    let rows = (0..m.rows)
        .map(|i| reduce(&mut (0..m.cols).map(|j| m.get(i, j)), m.cols))
        .collect();
    let cols = (0..m.cols)
        .map(|j| reduce(&mut (0..m.rows).map(|i| m.get(i, j)), m.rows))
        .collect();
    Ok((rows, cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPipeline {
    pub pipeline: Pipeline,
    pub fitness: f64,
    pub generation: u64,
}

/// One line of the per-generation log. Evaluation counts are episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    /// Best pairing score of this generation.
    pub best_fitness: f64,
    /// Mean fitness of the decision population.
    pub mean_fitness: f64,
    pub best_so_far: f64,
    pub vision_clusters: usize,
    pub vision_noise: usize,
    pub decision_clusters: usize,
    pub decision_noise: usize,
    pub actual_evaluations: u64,
    pub theoretical_evaluations: u64,
    pub evaluations_saved: u64,
    pub wall_time_s: f64,
}

/// Cumulative evaluation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub actual: u64,
    pub theoretical: u64,
}

/// Serializable snapshot from which a run resumes exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub config: CoevoConfig,
    /// Index of the next generation to run.
    pub generation: u64,
    pub cma: CmaState,
    pub population: GpPopulation,
    pub best: Option<BestPipeline>,
    pub counters: Counters,
    pub history: Vec<GenerationRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        match v.get("magic").and_then(|m| m.as_str()) {
            Some(CHECKPOINT_MAGIC) => {}
            _ => return Err(Error::Checkpoint("missing checkpoint header".into())),
        }
        match v.get("version").and_then(|m| m.as_u64()) {
            Some(n) if n == CHECKPOINT_VERSION as u64 => {}
            other => return Err(Error::Checkpoint(format!("unsupported checkpoint version {other:?}"))),
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// Per-generation outputs beyond the log line.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationDetail {
    pub matrix: FitnessMatrix,
    pub vision: ClusterAssignment,
    pub decision: ClusterAssignment,
    pub vision_fitness: Vec<f64>,
    pub decision_fitness: Vec<f64>,
}

/// Evolution state owned by the orchestrator.
pub struct Coevolution {
    config: CoevoConfig,
    generation: u64,
    cma: CmaState,
    population: GpPopulation,
    best: Option<BestPipeline>,
    counters: Counters,
    history: Vec<GenerationRecord>,
    probes: Option<ProbeSet>,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Coevolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coevolution")
            .field("generation", &self.generation)
            .field("best", &self.best)
            .field("counters", &self.counters)
            .finish_non_exhaustive()
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

impl Coevolution {
    pub fn new(config: CoevoConfig) -> Result<Self> {
        config.validate()?;
        let cma = CmaState::new(&config.cma_config())?;
        let population = gp::init_population(&config.gp, &mut seed::rng(config.seed, Stream::Init, &[0]))?;
        Self::assemble(config, 0, cma, population, None, Counters::default(), Vec::new())
    }

    pub fn resume(checkpoint: Checkpoint) -> Result<Self> {
        let c = checkpoint;
        c.config.validate()?;
        if c.cma.dimension() != c.config.dimension() || c.cma.population_size() != c.config.cma.population_size {
            return Err(Error::Checkpoint("CMA-ES state does not match the configuration".into()));
        }
        c.population.validate(&c.config.gp)?;
        if c.history.len() as u64 != c.generation {
            return Err(Error::Checkpoint("log length does not match the generation index".into()));
        }
        Self::assemble(c.config, c.generation, c.cma, c.population, c.best, c.counters, c.history)
    }

    fn assemble(
        config: CoevoConfig,
        generation: u64,
        cma: CmaState,
        population: GpPopulation,
        best: Option<BestPipeline>,
        counters: Counters,
        history: Vec<GenerationRecord>,
    ) -> Result<Self> {
        let probes = if config.clustering.enabled {
            Some(ProbeSet::generate(
                &config.env,
                PreprocessSpec::default(),
                (config.kernel_size, config.kernel_size),
                config.k,
                config.clustering.n_vm,
                config.clustering.n_dm,
                config.seed,
            )?)
        } else {
            None
        };
        let pool = build_pool(config.workers)?;
        Ok(Self {
            config,
            generation,
            cma,
            population,
            best,
            counters,
            history,
            probes,
            pool,
        })
    }

    /// Replaces the worker pool; results do not depend on the count.
    pub fn set_workers(&mut self, workers: usize) -> Result<()> {
        self.pool = build_pool(workers)?;
        self.config.workers = workers;
        Ok(())
    }

    pub fn config(&self) -> &CoevoConfig {
        &self.config
    }

    /// Generations completed so far.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_finished(&self) -> bool {
        self.generation >= self.config.generations
    }

    pub fn best(&self) -> Option<&BestPipeline> {
        self.best.as_ref()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn history(&self) -> &[GenerationRecord] {
        &self.history
    }

    pub fn cma(&self) -> &CmaState {
        &self.cma
    }

    pub fn population(&self) -> &GpPopulation {
        &self.population
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            generation: self.generation,
            cma: self.cma.clone(),
            population: self.population.clone(),
            best: self.best.clone(),
            counters: self.counters,
            history: self.history.clone(),
        }
    }

    pub fn step(&mut self) -> Result<GenerationRecord> {
        Ok(self.step_detailed()?.0)
    }

    /// Runs one generation and returns its log line with the full matrix
    /// and clustering outcome.
    pub fn step_detailed(&mut self) -> Result<(GenerationRecord, GenerationDetail)> {
        let start = Instant::now();
        let cfg = &self.config;
        let gen = self.generation;
        let candidates = self.cma.ask(&mut seed::rng(cfg.seed, Stream::Cma, &[gen]))?;
        let vms = candidates
            .iter()
            .map(|c| VisionModule::from_parameters(c, cfg.k, cfg.kernel_size, cfg.kernel_size))
            .collect::<Result<Vec<_>>>()?;
        let trees = &self.population.individuals;

        let (va, da) = match &self.probes {
            Some(probes) => {
                let (vs, ds) = self.pool.install(|| {
                    rayon::join(
                        || vms.par_iter().map(|v| vision_signature(v, probes)).collect::<Result<Vec<_>>>(),
                        || {
                            trees
                                .par_iter()
                                .map(|t| decision_signature(t, probes, ACTION_COUNT))
                                .collect::<Vec<_>>()
                        },
                    )
                });
                let c = &cfg.clustering;
                (
                    cluster(&vs?, c.vision_schedule().at(gen), c.min_pts),
                    cluster(&ds, c.decision_schedule().at(gen), c.min_pts),
                )
            }
            None => (ClusterAssignment::identity(vms.len()), ClusterAssignment::identity(trees.len())),
        };

        let (rows, cols) = (va.unit_count(), da.unit_count());
        let episodes = cfg.episodes as u64;
        let values = self.pool.install(|| {
            (0..rows * cols)
                .into_par_iter()
                .map_init(
                    || Evaluator::new(cfg.env),
                    |ev, cell| {
                        let i = va.representatives[cell / cols];
                        let j = da.representatives[cell % cols];
                        let seeds: Vec<u64> = (0..episodes)
                            .map(|ep| seed::derive(cfg.seed, Stream::Episode, &[gen, i as u64, j as u64, ep]))
                            .collect();
                        match ev {
                            Ok(ev) => Ok(ev.mean_score(&vms[i], &trees[j], &seeds)),
                            Err(e) => Err(Error::Environment(e.to_string())),
                        }
                    },
                )
                .collect::<Result<Vec<f64>>>()
        })?;
        let matrix = FitnessMatrix::new(rows, cols, values)?;
        let (vision_units, decision_units) = aggregate(&matrix, cfg.aggregation)?;
        let vision_fitness = broadcast_fitness(&va, &vision_units)?;
        let decision_fitness = broadcast_fitness(&da, &decision_units)?;

        let (bu, bw) = matrix.argmax().ok_or_else(|| invalid("empty fitness matrix"))?;
        let top = matrix.get(bu, bw);
        if self.best.as_ref().is_none_or(|b| top > b.fitness) {
            let (i, j) = (va.representatives[bu], da.representatives[bw]);
            self.best = Some(BestPipeline {
                pipeline: Pipeline {
                    k: cfg.k,
                    kernel_size: cfg.kernel_size,
                    weights: candidates[i].clone(),
                    tree: trees[j].clone(),
                },
                fitness: top,
                generation: gen,
            });
        }

        let next_population = gp::next_generation(
            &self.population,
            &decision_fitness,
            &cfg.gp,
            &mut seed::rng(cfg.seed, Stream::Gp, &[gen]),
        )?;
        self.cma.tell(&candidates, &vision_fitness)?;
        self.population = next_population;

        let actual = (rows * cols) as u64 * episodes;
        let theoretical = cfg.theoretical_evaluations();
        self.counters.actual += actual;
        self.counters.theoretical += theoretical;
        let record = GenerationRecord {
            generation: gen,
            best_fitness: top,
            mean_fitness: decision_fitness.iter().sum::<f64>() / decision_fitness.len() as f64,
            best_so_far: self.best.as_ref().map_or(top, |b| b.fitness),
            vision_clusters: va.cluster_count(),
            vision_noise: va.noise_count(),
            decision_clusters: da.cluster_count(),
            decision_noise: da.noise_count(),
            actual_evaluations: actual,
            theoretical_evaluations: theoretical,
            evaluations_saved: theoretical - actual,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        info!(
            "generation {gen}: best {:.2}, mean {:.2}, best so far {:.2}, {} of {} episodes",
            record.best_fitness, record.mean_fitness, record.best_so_far, actual, theoretical
        );
        self.history.push(record.clone());
        self.generation += 1;
        let detail = GenerationDetail {
            matrix,
            vision: va,
            decision: da,
            vision_fitness,
            decision_fitness,
        };
        Ok((record, detail))
    }

    /// Steps until `g` generations are done, calling `observer` after each.
    pub fn run_with(&mut self, mut observer: impl FnMut(&Coevolution, &GenerationRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let record = self.step()?;
            observer(self, &record)?;
        }
        Ok(())
    }

    /// Held-out scores of the best pipeline found so far.
    pub fn test_best(&self, episodes: usize) -> Result<Vec<f64>> {
        let best = self.best.as_ref().ok_or_else(|| invalid("no generation has run yet"))?;
        self.pool
            .install(|| held_out_scores(&best.pipeline, &self.config.env, episodes, self.config.seed))
    }
}

/// Runs a whole co-evolution from scratch.
pub fn run(config: CoevoConfig) -> Result<Coevolution> {
    let mut c = Coevolution::new(config)?;
    c.run_with(|_, _| Ok(()))?;
    Ok(c)
}

#[cfg(test)]
mod tests;
