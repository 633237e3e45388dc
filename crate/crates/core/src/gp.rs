//! Mutation-only strongly typed GP over decision trees: grow initialization,
//! tournament selection and elitism.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dtree::{ArithOp, CompareOp, Comparison, Expr, Limits, Tree};
use crate::error::{invalid, Error, Result};

/// Standard deviation of the constant-perturbation operator.
pub const CONSTANT_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    #[serde(rename = "p_g")]
    pub population_size: usize,
    pub crossover_probability: f64,
    pub mutation_probability: f64,
    pub tournament_size: usize,
    pub elites: usize,
    pub max_tree_depth: usize,
    pub max_condition_depth: usize,
    pub action_count: usize,
    pub variable_arity: usize,
    pub constant_range: (f64, f64),
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            crossover_probability: 0.0,
            mutation_probability: 1.0,
            tournament_size: 10,
            elites: 1,
            max_tree_depth: 4,
            max_condition_depth: 2,
            action_count: 4,
            variable_arity: 4,
            constant_range: (0.0, 96.0),
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tournament_size < 1 || self.population_size < self.tournament_size {
            return Err(invalid(format!(
                "need population_size ({}) >= tournament_size ({}) >= 1",
                self.population_size, self.tournament_size
            )));
        }
        if self.elites >= self.population_size {
            return Err(invalid("elites must be fewer than the population size"));
        }
        for (name, p) in [
            ("crossover_probability", self.crossover_probability),
            ("mutation_probability", self.mutation_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.crossover_probability != 0.0 {
            return Err(invalid("crossover is not supported; crossover_probability must be 0"));
        }
        if self.action_count == 0 {
            return Err(invalid("action_count must be at least 1"));
        }
        let (lo, hi) = self.constant_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid("constant_range must be a finite interval"));
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_tree_depth: self.max_tree_depth,
            max_condition_depth: self.max_condition_depth,
            variable_arity: self.variable_arity,
            action_count: self.action_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpPopulation {
    pub individuals: Vec<Tree>,
    pub generation: u64,
}

impl GpPopulation {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn validate(&self, cfg: &GpConfig) -> Result<()> {
        let limits = cfg.limits();
        for (i, t) in self.individuals.iter().enumerate() {
            t.validate(&limits)
                .map_err(|e| invalid(format!("individual {i}: {e}")))?;
        }
        Ok(())
    }
}

fn random_constant<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> f64 {
    let (lo, hi) = cfg.constant_range;
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Uniform over the terminal set: every variable, plus one constant slot.
fn random_terminal<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> Expr {
    let pick = rng.random_range(0..=cfg.variable_arity);
    if pick < cfg.variable_arity {
        Expr::Var(pick)
    } else {
        Expr::Const(random_constant(cfg, rng))
    }
}

/// Grows an expression whose root sits at expression depth `depth`.
pub fn grow_expr<R: Rng + ?Sized>(depth: usize, cfg: &GpConfig, rng: &mut R) -> Expr {
    let max = cfg.max_condition_depth;
    if depth >= max || rng.random_bool((depth + 1) as f64 / (max + 1) as f64) {
        return random_terminal(cfg, rng);
    }
    let op = ArithOp::ALL[rng.random_range(0..ArithOp::ALL.len())];
    let left = grow_expr(depth + 1, cfg, rng);
    let right = grow_expr(depth + 1, cfg, rng);
    Expr::arith(op, left, right)
}

fn random_comparison<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> Comparison {
    let op = CompareOp::ALL[rng.random_range(0..CompareOp::ALL.len())];
    let left = grow_expr(0, cfg, rng);
    let right = grow_expr(0, cfg, rng);
    Comparison::new(op, left, right)
}

/// Grows a tree whose root sits at condition depth `depth`. The leaf
/// probability is `(depth + 1) / (max + 1)`, reaching 1 at the limit.
pub fn grow_tree<R: Rng + ?Sized>(depth: usize, cfg: &GpConfig, rng: &mut R) -> Tree {
    let max = cfg.max_tree_depth;
    if depth >= max || rng.random_bool((depth + 1) as f64 / (max + 1) as f64) {
        return Tree::Leaf(rng.random_range(0..cfg.action_count));
    }
    let test = random_comparison(cfg, rng);
    let if_true = grow_tree(depth + 1, cfg, rng);
    let if_false = grow_tree(depth + 1, cfg, rng);
    Tree::condition(test, if_true, if_false)
}

pub fn init_population<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> Result<GpPopulation> {
    cfg.validate()?;
    let individuals = (0..cfg.population_size)
        .map(|_| grow_tree(0, cfg, rng))
        .collect();
    Ok(GpPopulation {
        individuals,
        generation: 0,
    })
}

enum Site<'a> {
    Tree { node: &'a mut Tree, depth: usize },
    Expr { node: &'a mut Expr, depth: usize },
    Compare(&'a mut CompareOp),
}

/// Pre-order walk over every mutable site; stops once `f` returns true.
fn walk(t: &mut Tree, depth: usize, f: &mut dyn FnMut(Site<'_>) -> bool) -> bool {
    if f(Site::Tree { node: t, depth }) {
        return true;
    }
    match t {
        Tree::Leaf(_) => false,
        Tree::Condition {
            test,
            if_true,
            if_false,
        } => {
            f(Site::Compare(&mut test.op))
                || walk_expr(&mut test.left, 0, f)
                || walk_expr(&mut test.right, 0, f)
                || walk(if_true, depth + 1, f)
                || walk(if_false, depth + 1, f)
        }
    }
}

fn walk_expr(e: &mut Expr, depth: usize, f: &mut dyn FnMut(Site<'_>) -> bool) -> bool {
    if f(Site::Expr { node: e, depth }) {
        return true;
    }
    match e {
        Expr::Arith { left, right, .. } => walk_expr(left, depth + 1, f) || walk_expr(right, depth + 1, f),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    SubtreeReplacement,
    PointMutation,
    ConstantPerturbation,
    LeafResample,
}

#[derive(Default)]
struct SiteCounts {
    nodes: usize,
    operators: usize,
    constants: usize,
    leaves: usize,
}

fn count_sites(tree: &mut Tree) -> SiteCounts {
    let mut c = SiteCounts::default();
    walk(tree, 0, &mut |site| {
        match site {
            Site::Tree { node, .. } => {
                c.nodes += 1;
                if let Tree::Leaf(_) = node {
                    c.leaves += 1;
                }
            }
            Site::Expr { node, .. } => {
                c.nodes += 1;
                match node {
                    Expr::Const(_) => c.constants += 1,
                    Expr::Arith { .. } => c.operators += 1,
                    Expr::Var(_) => {}
                }
            }
            Site::Compare(_) => c.operators += 1,
        }
        false
    });
    c
}

fn other<T: Copy + PartialEq, R: Rng + ?Sized>(all: &[T], current: T, rng: &mut R) -> T {
    let choices: Vec<T> = all.iter().copied().filter(|&x| x != current).collect();
    choices[rng.random_range(0..choices.len())]
}

/// Applies one operator drawn uniformly from those applicable to `tree`.
pub fn mutate<R: Rng + ?Sized>(tree: &Tree, cfg: &GpConfig, rng: &mut R) -> Tree {
    mutate_traced(tree, cfg, rng).0
}

pub fn mutate_traced<R: Rng + ?Sized>(tree: &Tree, cfg: &GpConfig, rng: &mut R) -> (Tree, MutationKind) {
    let mut out = tree.clone();
    let counts = count_sites(&mut out);
    let mut kinds = vec![MutationKind::SubtreeReplacement];
    if counts.operators > 0 {
        kinds.push(MutationKind::PointMutation);
    }
    if counts.constants > 0 {
        kinds.push(MutationKind::ConstantPerturbation);
    }
    if counts.leaves > 0 && cfg.action_count > 1 {
        kinds.push(MutationKind::LeafResample);
    }
    let kind = kinds[rng.random_range(0..kinds.len())];
    let total = match kind {
        MutationKind::SubtreeReplacement => counts.nodes,
        MutationKind::PointMutation => counts.operators,
        MutationKind::ConstantPerturbation => counts.constants,
        MutationKind::LeafResample => counts.leaves,
    };
    let mut k = rng.random_range(0..total);
    walk(&mut out, 0, &mut |site| {
        let hit = match (&site, kind) {
            (Site::Tree { .. } | Site::Expr { .. }, MutationKind::SubtreeReplacement) => true,
            (Site::Compare(_), MutationKind::PointMutation) => true,
            (Site::Expr { node: Expr::Arith { .. }, .. }, MutationKind::PointMutation) => true,
            (Site::Expr { node: Expr::Const(_), .. }, MutationKind::ConstantPerturbation) => true,
            (Site::Tree { node: Tree::Leaf(_), .. }, MutationKind::LeafResample) => true,
            _ => false,
        };
        if !hit {
            return false;
        }
        if k > 0 {
            k -= 1;
            return false;
        }
        match (site, kind) {
            (Site::Tree { node, depth }, MutationKind::SubtreeReplacement) => *node = grow_tree(depth, cfg, rng),
            (Site::Expr { node, depth }, MutationKind::SubtreeReplacement) => *node = grow_expr(depth, cfg, rng),
            (Site::Compare(op), _) => *op = other(&CompareOp::ALL, *op, rng),
            (Site::Expr { node: Expr::Arith { op, .. }, .. }, _) => *op = other(&ArithOp::ALL, *op, rng),
            (Site::Expr { node: Expr::Const(c), .. }, _) => {
                *c += Normal::new(0.0, CONSTANT_SIGMA).unwrap().sample(rng);
            }
            (Site::Tree { node: Tree::Leaf(a), .. }, _) => {
                let all: Vec<usize> = (0..cfg.action_count).collect();
                *a = other(&all, *a, rng);
            }
            _ => unreachable!("site kind filtered above"),
        }
        true
    });
    (out, kind)
}

/// Index of the fittest of `tournament_size` uniform draws (with
/// replacement); ties go to the lowest index.
pub fn tournament_index<R: Rng + ?Sized>(fitness: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = usize::MAX;
    for _ in 0..size {
        let i = rng.random_range(0..fitness.len());
        if best == usize::MAX || fitness[i] > fitness[best] || (fitness[i] == fitness[best] && i < best) {
            best = i;
        }
    }
    best
}

pub fn tournament_select<'a, R: Rng + ?Sized>(
    pop: &'a GpPopulation,
    fitness: &[f64],
    cfg: &GpConfig,
    rng: &mut R,
) -> Result<&'a Tree> {
    check_fitness(pop, fitness)?;
    Ok(&pop.individuals[tournament_index(fitness, cfg.tournament_size, rng)])
}

fn check_fitness(pop: &GpPopulation, fitness: &[f64]) -> Result<()> {
    if fitness.len() != pop.len() || pop.is_empty() {
        return Err(invalid(format!(
            "{} fitness values for {} individuals",
            fitness.len(),
            pop.len()
        )));
    }
    if let Some(i) = fitness.iter().position(|f| f.is_nan()) {
        return Err(Error::NonFiniteFitness {
            index: i,
            value: fitness[i],
        });
    }
    Ok(())
}

/// Indices sorted by descending fitness, ties by ascending index.
pub fn ranking(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    order
}

/// Elites first (best first), then mutated tournament winners.
pub fn next_generation<R: Rng + ?Sized>(
    pop: &GpPopulation,
    fitness: &[f64],
    cfg: &GpConfig,
    rng: &mut R,
) -> Result<GpPopulation> {
    cfg.validate()?;
    check_fitness(pop, fitness)?;
    let mut individuals: Vec<Tree> = ranking(fitness)
        .into_iter()
        .take(cfg.elites)
        .map(|i| pop.individuals[i].clone())
        .collect();
    while individuals.len() < cfg.population_size {
        let parent = &pop.individuals[tournament_index(fitness, cfg.tournament_size, rng)];
        let child = if rng.random::<f64>() < cfg.mutation_probability {
            mutate(parent, cfg, rng)
        } else {
            parent.clone()
        };
        individuals.push(child);
    }
    Ok(GpPopulation {
        individuals,
        generation: pop.generation + 1,
    })
}
