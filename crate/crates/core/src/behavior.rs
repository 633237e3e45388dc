//! Behavioral clustering: probe-set signatures, DBSCAN, a decaying radius
//! schedule, medoid representatives and fitness broadcast.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dtree::Tree;
use crate::error::{invalid, Error, Result};
use crate::imaging::{response_dims, PreprocessSpec, Preprocessor, ProcessedFrame};
use crate::minipong::{Canvas, EnvConfig, MiniPong, ACTION_COUNT};
use crate::seed::{self, Stream};
use crate::vision::{flatten_into, Coordinate, SparseLocator, VisionModule};

/// Upper bound on the length of the probe episode.
const PROBE_EPISODE_CAP: u64 = 20_000;

/// A module's outputs on a frozen probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSignature {
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for BehaviorSignature {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Frames for vision signatures and coordinate vectors for decision ones.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    frames: Vec<ProcessedFrame>,
    nonzero: Vec<Vec<usize>>,
    coordinates: Vec<Vec<f64>>,
}

impl ProbeSet {
    pub fn new(frames: Vec<ProcessedFrame>, coordinates: Vec<Vec<f64>>) -> Self {
        let nonzero = frames
            .iter()
            .map(|f| {
                f.data()
                    .chunks_exact(3)
                    .enumerate()
                    .filter(|(_, p)| p.iter().any(|&v| v != 0.0))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Self {
            frames,
            nonzero,
            coordinates,
        }
    }

    /// Samples `n_vm` frames from one random-policy episode and `n_dm`
    /// coordinate vectors uniformly over the response-map grid of `k`
    /// `kernel_h × kernel_w` kernels.
    pub fn generate(
        env: &EnvConfig,
        spec: PreprocessSpec,
        kernel_shape: (usize, usize),
        k: usize,
        n_vm: usize,
        n_dm: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if n_vm == 0 || n_dm == 0 || k == 0 {
            return Err(invalid("probe counts and k must be positive"));
        }
        let episode_seed = seed::derive(master_seed, Stream::Probes, &[0]);
        let play = |mut visit: Box<dyn FnMut(u64, &MiniPong) -> Result<()> + '_>| -> Result<u64> {
            let mut env = MiniPong::new(*env)?;
            env.reset(episode_seed);
            let mut actions = seed::rng(master_seed, Stream::Probes, &[1]);
            let mut t = 0;
            while !env.is_done() && t < PROBE_EPISODE_CAP {
                visit(t, &env)?;
                env.advance(actions.random_range(0..ACTION_COUNT))?;
                t += 1;
            }
            Ok(t)
        };

        let length = play(Box::new(|_, _| Ok(())))? as usize;
        let mut rng = seed::rng(master_seed, Stream::Probes, &[2]);
        let mut picks: Vec<usize> = if length >= n_vm {
            index::sample(&mut rng, length, n_vm).into_vec()
        } else {
            (0..n_vm).map(|i| i % length).collect()
        };
        picks.sort_unstable();

        let mut frames = Vec::with_capacity(n_vm);
        let mut pre = Preprocessor::new(spec);
        let mut canvas = Canvas::new();
        let mut next = 0;
        play(Box::new(|t, env| {
            while next < picks.len() && picks[next] as u64 == t {
                canvas.draw(env);
                frames.push(pre.run(canvas.frame())?.clone());
                next += 1;
            }
            Ok(())
        }))?;

        let (h, w) = response_dims(spec.output_size, spec.output_size, kernel_shape.0, kernel_shape.1)?;
        let coordinates = (0..n_dm)
            .map(|_| {
                (0..k)
                    .flat_map(|_| [rng.random_range(0..w) as f64, rng.random_range(0..h) as f64])
                    .collect()
            })
            .collect();
        Ok(Self::new(frames, coordinates))
    }

    pub fn frames(&self) -> &[ProcessedFrame] {
        &self.frames
    }

    pub fn coordinates(&self) -> &[Vec<f64>] {
        &self.coordinates
    }
}

/// Flat `(x, y)` locate outputs over every probe frame; length `2k · n_vm`.
pub fn vision_signature(vm: &VisionModule, probes: &ProbeSet) -> Result<BehaviorSignature> {
    let mut locator = SparseLocator::new();
    let mut coords: Vec<Coordinate> = Vec::with_capacity(vm.len());
    let mut flat = Vec::with_capacity(2 * vm.len());
    let mut values = Vec::with_capacity(2 * vm.len() * probes.frames.len());
    for (frame, nonzero) in probes.frames.iter().zip(&probes.nonzero) {
        locator.locate(vm, frame, nonzero, &mut coords)?;
        flatten_into(&coords, &mut flat);
        values.extend_from_slice(&flat);
    }
    Ok(BehaviorSignature { values })
}

/// One-hot actions over every probe coordinate vector; length `n_dm · A`.
pub fn decision_signature(tree: &Tree, probes: &ProbeSet, action_count: usize) -> BehaviorSignature {
    let mut values = vec![0.0; probes.coordinates.len() * action_count];
    for (block, x) in values.chunks_exact_mut(action_count).zip(&probes.coordinates) {
        let a = tree.evaluate(x);
        if let Some(slot) = block.get_mut(a) {
            *slot = 1.0;
        }
    }
    BehaviorSignature { values }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn distance_matrix<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(points[i].as_ref(), points[j].as_ref());
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Cluster label per point; `None` is noise.
pub type Label = Option<usize>;

/// DBSCAN with Euclidean distance. A point is core when at least `min_pts`
/// points (itself included) lie within `eps`. Clusters are numbered in order
/// of their lowest core index; a border point reachable from several
/// clusters joins the lowest-numbered one.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> Vec<Label> {
    dbscan_with(&distance_matrix(points), eps, min_pts)
}

fn dbscan_with(d: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Label> {
    let n = d.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| d[i][j] <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: Vec<Label> = vec![None; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        stack.push(start);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// Radius schedule `ε_i = ε_0 · γ^i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl EpsilonSchedule {
    pub fn new(initial: f64, decay: f64) -> Result<Self> {
        let s = Self { initial, decay };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(invalid(format!("initial epsilon must be positive, got {}", self.initial)));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(invalid(format!("epsilon decay must lie in [0, 1), got {}", self.decay)));
        }
        Ok(())
    }

    pub fn at(&self, generation: u64) -> f64 {
        epsilon_at(self, generation)
    }
}

pub fn epsilon_at(schedule: &EpsilonSchedule, generation: u64) -> f64 {
    schedule.initial * schedule.decay.powi(generation.min(i32::MAX as u64) as i32)
}

/// Clustering outcome for one population.
///
/// Individuals are grouped into *units*: one per cluster plus one per noise
/// point, numbered in order of their lowest member index. Only each unit's
/// representative gets evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    /// Individual index evaluated for each unit.
    pub representatives: Vec<usize>,
    /// Unit of each individual.
    pub unit_of: Vec<usize>,
}

impl ClusterAssignment {
    /// Every individual stands for itself.
    pub fn identity(n: usize) -> Self {
        Self {
            labels: vec![None; n],
            representatives: (0..n).collect(),
            unit_of: (0..n).collect(),
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&m| m + 1)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn unit_count(&self) -> usize {
        self.representatives.len()
    }
}

/// Medoid per cluster (smallest distance sum to the other members, lowest
/// index on ties); noise points represent themselves.
pub fn select_representatives<P: AsRef<[f64]>>(points: &[P], labels: &[Label]) -> ClusterAssignment {
    assign(&distance_matrix(points), labels)
}

fn assign(d: &[Vec<f64>], labels: &[Label]) -> ClusterAssignment {
    let n = labels.len();
    let clusters = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(i);
        }
    }
    let medoid = |m: &[usize]| -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in m {
            let s: f64 = m.iter().map(|&j| d[i][j]).sum();
            if s < best.0 {
                best = (s, i);
            }
        }
        best.1
    };

    let mut unit_of_cluster = vec![usize::MAX; clusters];
    let mut representatives = Vec::new();
    let mut unit_of = Vec::with_capacity(n);
    for (i, l) in labels.iter().enumerate() {
        let u = match l {
            None => {
                representatives.push(i);
                representatives.len() - 1
            }
            Some(c) => {
                if unit_of_cluster[*c] == usize::MAX {
                    representatives.push(medoid(&members[*c]));
                    unit_of_cluster[*c] = representatives.len() - 1;
                }
                unit_of_cluster[*c]
            }
        };
        unit_of.push(u);
    }
    ClusterAssignment {
        labels: labels.to_vec(),
        representatives,
        unit_of,
    }
}

/// DBSCAN followed by representative selection.
pub fn cluster<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> ClusterAssignment {
    let d = distance_matrix(points);
    let labels = dbscan_with(&d, eps, min_pts);
    assign(&d, &labels)
}

/// Gives every individual the fitness of its unit's representative.
/// `unit_fitness[u]` belongs to unit `u`.
pub fn broadcast_fitness(assignment: &ClusterAssignment, unit_fitness: &[f64]) -> Result<Vec<f64>> {
    if unit_fitness.len() < assignment.unit_count() {
        return Err(Error::MissingFitness(assignment.representatives[unit_fitness.len()]));
    }
    Ok(assignment.unit_of.iter().map(|&u| unit_fitness[u]).collect())
}

/// Clustering parameters for both populations. Radii are given per probe
/// and scaled by the square root of the probe count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub enabled: bool,
    pub n_vm: usize,
    pub n_dm: usize,
    pub vision_epsilon: f64,
    pub decision_epsilon: f64,
    pub decay: f64,
    pub min_pts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_vm: 100,
            n_dm: 100,
            vision_epsilon: 4.0,
            decision_epsilon: 0.6,
            decay: 0.95,
            min_pts: 2,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vm == 0 || self.n_dm == 0 {
            return Err(invalid("n_vm and n_dm must be positive"));
        }
        if self.min_pts == 0 {
            return Err(invalid("min_pts must be at least 1"));
        }
        self.vision_schedule().validate()?;
        self.decision_schedule().validate()
    }

    pub fn vision_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            initial: self.vision_epsilon * (self.n_vm as f64).sqrt(),
            decay: self.decay,
        }
    }

    pub fn decision_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            initial: self.decision_epsilon * (self.n_dm as f64).sqrt(),
            decay: self.decay,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtree::fixtures::pong_policy;
    use crate::vision::Kernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    /// Union-find over core-core edges; border points join the neighboring
    /// component with the lowest core index.
    pub(crate) fn oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Label> {
        let n = points.len();
        let near = |i: usize, j: usize| distance(&points[i], &points[j]) <= eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            r
        }
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        // Roots are the lowest core index of each component.
        let mut out = vec![None; n];
        for i in 0..n {
            if core[i] {
                out[i] = Some(find(&mut parent, i));
            } else {
                out[i] = (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| find(&mut parent, j))
                    .min();
            }
        }
        let mut roots: Vec<usize> = out.iter().flatten().copied().collect();
        roots.sort_unstable();
        roots.dedup();
        out.iter()
            .map(|l| l.map(|r| roots.binary_search(&r).unwrap()))
            .collect()
    }

    /// Same partition up to renaming.
    pub(crate) fn same_partition(a: &[Label], b: &[Label]) -> bool {
        a.len() == b.len()
            && (0..a.len()).all(|i| {
                (0..a.len()).all(|j| {
                    let sa = a[i].is_some() && a[i] == a[j];
                    let sb = b[i].is_some() && b[i] == b[j];
                    sa == sb && a[i].is_none() == b[i].is_none()
                })
            })
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let p = vec![vec![1.0, 2.0]; 6];
        let l = dbscan(&p, 0.1, 2);
        assert!(l.iter().all(|&x| x == Some(0)));
    }

    #[test]
    fn two_groups_and_an_outlier() {
        let p = pts(&[&[0.0], &[0.1], &[0.2], &[10.0], &[10.1], &[10.2], &[50.0]]);
        let l = dbscan(&p, 0.5, 2);
        assert_eq!(l, vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), None]);
        assert_eq!(l, oracle(&p, 0.5, 2));
    }

    #[test]
    fn tiny_radius_gives_all_noise() {
        let p = pts(&[&[0.0], &[1.0], &[2.0]]);
        assert!(dbscan(&p, 1e-12, 2).iter().all(Option::is_none));
    }

    #[test]
    fn border_point_goes_to_lowest_cluster() {
        // Points 0,1 and 3,4 are cores; 2 is a border point of both.
        let p = pts(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let l = dbscan(&p, 1.0, 3);
        assert_eq!(l, oracle(&p, 1.0, 3));
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..=30);
            let dim = rng.random_range(1..=4);
            let p: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(0..6) as f64).collect())
                .collect();
            let eps = rng.random_range(0.5..3.0);
            let min_pts = rng.random_range(1..=4);
            let got = dbscan(&p, eps, min_pts);
            assert!(same_partition(&got, &oracle(&p, eps, min_pts)), "{p:?} {eps} {min_pts}");
        }
    }

    #[test]
    fn schedule_values() {
        let s = EpsilonSchedule::new(1.0, 0.5).unwrap();
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(2), 0.25);
        let z = EpsilonSchedule::new(3.0, 0.0).unwrap();
        assert_eq!(z.at(0), 3.0);
        assert_eq!(z.at(1), 0.0);
        assert!(EpsilonSchedule::new(0.0, 0.5).is_err());
        assert!(EpsilonSchedule::new(1.0, 1.0).is_err());
    }

    #[test]
    fn medoid_and_noise_representatives() {
        let p = pts(&[&[0.0], &[1.0], &[2.0]]);
        let a = select_representatives(&p, &[Some(0), Some(0), Some(0)]);
        assert_eq!(a.representatives, vec![1]);
        assert_eq!(a.unit_of, vec![0, 0, 0]);

        let same = vec![vec![3.0]; 4];
        assert_eq!(select_representatives(&same, &[Some(0); 4]).representatives, vec![0]);

        let noise = select_representatives(&p, &[None, None, None]);
        assert_eq!(noise, ClusterAssignment::identity(3));
    }

    #[test]
    fn broadcast_mixed_case() {
        // Clusters {0, 2, 5} and {3, 6}; 1 and 4 are noise.
        let p = pts(&[&[0.0], &[100.0], &[1.0], &[50.0], &[200.0], &[2.0], &[51.0]]);
        let labels = vec![Some(0), None, Some(0), Some(1), None, Some(0), Some(1)];
        let a = select_representatives(&p, &labels);
        assert_eq!(a.representatives, vec![2, 1, 3, 4]);
        assert_eq!(a.unit_of, vec![0, 1, 0, 2, 3, 0, 2]);
        let f = broadcast_fitness(&a, &[7.0, -1.0, 3.0, 0.5]).unwrap();
        assert_eq!(f, vec![7.0, -1.0, 7.0, 3.0, 0.5, 7.0, 3.0]);
        assert!(matches!(broadcast_fitness(&a, &[7.0, -1.0]), Err(Error::MissingFitness(3))));

        let five = ClusterAssignment {
            labels: vec![Some(0); 5],
            representatives: vec![2],
            unit_of: vec![0; 5],
        };
        assert_eq!(broadcast_fitness(&five, &[3.0]).unwrap(), vec![3.0; 5]);
    }

    fn probes() -> ProbeSet {
        ProbeSet::generate(&EnvConfig::default(), PreprocessSpec::default(), (5, 5), 2, 100, 100, 3).unwrap()
    }

    #[test]
    fn signature_lengths_and_purity() {
        let p = probes();
        assert_eq!(p.frames().len(), 100);
        assert!(p.coordinates().iter().flatten().all(|&c| (0.0..=91.0).contains(&c)));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f64> = (0..VisionModule::parameter_count(2, 5, 5))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let vm = VisionModule::from_parameters(&params, 2, 5, 5).unwrap();
        let s = vision_signature(&vm, &p).unwrap();
        assert_eq!(s.values.len(), 400);
        assert_eq!(s, vision_signature(&vm.clone(), &p).unwrap());
        // Agrees with dense localization.
        for (i, f) in p.frames().iter().enumerate().take(10) {
            let dense = crate::vision::flatten(&vm.locate(f).unwrap());
            assert_eq!(&s.values[4 * i..4 * i + 4], &dense[..]);
        }

        let zero = VisionModule::new(vec![Kernel::zeros(5, 5); 2]).unwrap();
        assert!(vision_signature(&zero, &p).unwrap().values.iter().all(|&v| v == 0.0));

        let d = decision_signature(&pong_policy(), &p, 4);
        assert_eq!(d.values.len(), 400);
        assert_eq!(d, decision_signature(&pong_policy(), &p, 4));
        let leaf = decision_signature(&Tree::Leaf(2), &p, 4);
        assert!(leaf.values.chunks(4).all(|b| b == [0.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn one_hot_distance_counts_disagreements() {
        let p = probes();
        let a = decision_signature(&pong_policy(), &p, 4);
        let b = decision_signature(&Tree::Leaf(0), &p, 4);
        let m = p
            .coordinates()
            .iter()
            .filter(|x| pong_policy().evaluate(x) != 0)
            .count();
        assert!(m > 0);
        let d = distance(&a.values, &b.values);
        assert!((d * d - 2.0 * m as f64).abs() < 1e-9);
    }

    #[test]
    fn probes_are_reproducible() {
        let a = probes();
        let b = probes();
        assert_eq!(a.frames(), b.frames());
        assert_eq!(a.coordinates(), b.coordinates());
    }
}
