use super::*;
use crate::dtree::fixtures::{cmp, cst, var};
use crate::dtree::{ArithOp, CompareOp, Expr, Tree};
use crate::vision::Kernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> CoevoConfig {
    let mut c = CoevoConfig::desk(seed);
    c.generations = 3;
    c.episodes = 1;
    c.workers = 1;
    c.env.points_to_win = 2;
    c.cma.population_size = 4;
    c.gp.population_size = 5;
    c.gp.tournament_size = 2;
    c.clustering.n_vm = 20;
    c.clustering.n_dm = 20;
    c
}

fn comparable(h: &[GenerationRecord]) -> Vec<GenerationRecord> {
    h.iter()
        .map(|r| GenerationRecord {
            wall_time_s: 0.0,
            ..r.clone()
        })
        .collect()
}

/// Ball detector (blue against green) and agent-paddle detector (green
/// against red).
pub(crate) fn tracker() -> Pipeline {
    let mut ball = vec![0.0; 75];
    let mut paddle = vec![0.0; 75];
    for p in 0..25 {
        ball[3 * p..3 * p + 3].copy_from_slice(&[0.0, -1.0, 2.0]);
        paddle[3 * p] = -1.0;
        paddle[3 * p + 1] = 1.0;
    }
    let vm = VisionModule::new(vec![Kernel::new(5, 5, ball).unwrap(), Kernel::new(5, 5, paddle).unwrap()]).unwrap();
    let tree = Tree::condition(
        cmp(CompareOp::Less, var(1), Expr::arith(ArithOp::Add, var(3), cst(2.0))),
        Tree::Leaf(2),
        Tree::Leaf(3),
    );
    Pipeline {
        k: 2,
        kernel_size: 5,
        weights: vm.to_parameters(),
        tree,
    }
}

#[test]
fn matrix_aggregation_examples() {
    let m = FitnessMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap();
    assert_eq!(fitness_from_matrix(&m).unwrap(), (vec![2.0, 3.0], vec![3.0, 2.0]));
    let one = FitnessMatrix::new(1, 1, vec![5.0]).unwrap();
    assert_eq!(fitness_from_matrix(&one).unwrap(), (vec![5.0], vec![5.0]));
    let c = FitnessMatrix::new(2, 3, vec![-4.0; 6]).unwrap();
    assert_eq!(fitness_from_matrix(&c).unwrap(), (vec![-4.0; 2], vec![-4.0; 3]));
    assert!(fitness_from_matrix(&FitnessMatrix::new(0, 0, vec![]).unwrap()).is_err());
    assert_eq!(
        aggregate(&m, Aggregation::Mean).unwrap(),
        (vec![1.5, 1.5], vec![2.0, 1.0])
    );
}

#[test]
fn max_aggregation_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let v: Vec<f64> = (0..r * c).map(|_| rng.random_range(-21.0..21.0)).collect();
        let m = FitnessMatrix::new(r, c, v.clone()).unwrap();
        let s = FitnessMatrix::new(r, c, v.iter().map(|x| x * 2.5).collect()).unwrap();
        let (a, b) = fitness_from_matrix(&m).unwrap();
        let (sa, sb) = fitness_from_matrix(&s).unwrap();
        assert!(a.iter().zip(&sa).all(|(x, y)| (x * 2.5 - y).abs() < 1e-9));
        assert!(b.iter().zip(&sb).all(|(x, y)| (x * 2.5 - y).abs() < 1e-9));
        assert_eq!(m.argmax(), s.argmax());
    }
}

#[test]
fn pair_evaluation_contracts() {
    let env = EnvConfig::default();
    let vm = tracker().vision().unwrap();
    let nop = Tree::Leaf(0);
    let s = evaluate_pair(&vm, &nop, &env, &[1, 2]).unwrap();
    assert!(s <= 0.0);
    let single = evaluate_pair(&vm, &nop, &env, &[9]).unwrap();
    let mut ev = Evaluator::new(env).unwrap();
    assert_eq!(single, ev.episode(&vm, &nop, 9).unwrap());
    let p = tracker();
    let a = evaluate_pair(&vm, &p.tree, &env, &[3, 4]).unwrap();
    assert_eq!(a, evaluate_pair(&vm, &p.tree, &env, &[3, 4]).unwrap());
    assert!(evaluate_pair(&vm, &nop, &env, &[]).is_err());
}

#[test]
fn hand_built_tracker_wins() {
    let scores = held_out_scores(&tracker(), &EnvConfig::default(), 5, 0).unwrap();
    assert!(scores.iter().all(|&s| s >= 15.0), "{scores:?}");
}

#[test]
fn masked_rollout_matches_dense_policy() {
    // The tree only reads the ball kernel; results must equal a dense loop.
    let p = tracker();
    let vm = p.vision().unwrap();
    let tree = Tree::condition(cmp(CompareOp::Less, var(1), cst(50.0)), Tree::Leaf(2), Tree::Leaf(3));
    let mut ev = Evaluator::new(EnvConfig::default()).unwrap();
    let fast = ev.episode(&vm, &tree, 5).unwrap();

    let mut env = crate::minipong::MiniPong::new(EnvConfig::default()).unwrap();
    let mut frame = env.reset(5);
    let mut total = 0.0;
    loop {
        let image = crate::imaging::preprocess(&frame).unwrap();
        let x = crate::vision::flatten(&vm.locate(&image).unwrap());
        let step = env.step(tree.evaluate(&x)).unwrap();
        total += step.reward as f64;
        frame = step.observation;
        if step.done {
            break;
        }
    }
    assert_eq!(fast, total);
}

#[test]
fn bad_variable_scores_minimum() {
    let vm = tracker().vision().unwrap();
    let t = Tree::condition(cmp(CompareOp::Less, var(7), cst(1.0)), Tree::Leaf(2), Tree::Leaf(3));
    let env = EnvConfig::default();
    assert_eq!(evaluate_pair(&vm, &t, &env, &[1]).unwrap(), minimum_score(&env));
}

#[test]
fn unclustered_generation_evaluates_every_pair() {
    let mut c = tiny(1);
    c.clustering.enabled = false;
    let mut run = Coevolution::new(c.clone()).unwrap();
    let (rec, detail) = run.step_detailed().unwrap();
    assert_eq!((detail.matrix.rows, detail.matrix.cols), (4, 5));
    assert_eq!(rec.actual_evaluations, 20);
    assert_eq!(rec.theoretical_evaluations, 20);
    assert_eq!(rec.evaluations_saved, 0);
    let (v, d) = fitness_from_matrix(&detail.matrix).unwrap();
    assert_eq!(detail.vision_fitness, v);
    assert_eq!(detail.decision_fitness, d);
}

#[test]
fn identical_vision_individuals_share_one_evaluation() {
    let mut c = tiny(2);
    c.cma.initial_step_size = 1e-300;
    let mut run = Coevolution::new(c).unwrap();
    run.cma.mean.fill(1.0);
    let (rec, detail) = run.step_detailed().unwrap();
    assert_eq!(detail.vision.unit_count(), 1);
    assert_eq!(rec.actual_evaluations, detail.decision.unit_count() as u64);
    // Members inherit their unit's fitness.
    assert!(detail.vision_fitness.iter().all(|&f| f == detail.vision_fitness[0]));
}

#[test]
fn clustered_accounting_is_bounded() {
    let mut run = Coevolution::new(tiny(3)).unwrap();
    for _ in 0..3 {
        let (rec, detail) = run.step_detailed().unwrap();
        let units = (detail.vision.unit_count() * detail.decision.unit_count()) as u64;
        assert_eq!(rec.actual_evaluations, units);
        assert!(rec.actual_evaluations <= rec.theoretical_evaluations);
    }
    let c = run.counters();
    assert!(c.actual <= c.theoretical);
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let a = run(tiny(5)).unwrap();
    let mut c = tiny(5);
    c.workers = 3;
    let b = run(c).unwrap();
    assert_eq!(comparable(a.history()), comparable(b.history()));
    assert_eq!(a.best(), b.best());
    assert_eq!(a.population(), b.population());
}

#[test]
fn best_so_far_is_monotone_and_one_record_per_generation() {
    let mut c = tiny(6);
    c.generations = 1;
    let one = run(c).unwrap();
    assert_eq!(one.history().len(), 1);

    let r = run(tiny(6)).unwrap();
    let h = r.history();
    assert_eq!(h.len(), 3);
    assert!(h.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
    let best = r.best().unwrap();
    assert_eq!(best.fitness, h.last().unwrap().best_so_far);
    assert!(h.iter().all(|x| x.best_fitness <= best.fitness));
}

#[test]
fn resume_replays_exactly() {
    let full = run(tiny(7)).unwrap();

    let mut part = Coevolution::new(tiny(7)).unwrap();
    part.step().unwrap();
    let text = part.checkpoint().to_json().unwrap();
    drop(part);
    let mut resumed = Coevolution::resume(Checkpoint::from_json(&text).unwrap()).unwrap();
    resumed.run_with(|_, _| Ok(())).unwrap();

    assert_eq!(comparable(full.history()), comparable(resumed.history()));
    assert_eq!(full.best(), resumed.best());
    assert_eq!(full.cma(), resumed.cma());
    assert_eq!(full.population(), resumed.population());
}

#[test]
fn checkpoint_header_is_checked() {
    let run = Coevolution::new(tiny(8)).unwrap();
    let text = run.checkpoint().to_json().unwrap();
    assert_eq!(Checkpoint::from_json(&text).unwrap(), run.checkpoint());
    let bad = text.replace(CHECKPOINT_MAGIC, "something-else");
    assert!(matches!(Checkpoint::from_json(&bad), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::from_json("{}").is_err());
}

#[test]
fn config_validation() {
    CoevoConfig::default().validate().unwrap();
    CoevoConfig::desk(1).validate().unwrap();
    let mut c = CoevoConfig::default();
    c.k = 3;
    assert!(c.validate().is_err());
    let mut c = CoevoConfig::default();
    c.episodes = 0;
    assert!(c.validate().is_err());
    let mut c = CoevoConfig::default();
    c.gp.crossover_probability = 0.5;
    assert!(c.validate().is_err());
}

#[test]
fn pipeline_json_round_trip() {
    let p = tracker();
    assert_eq!(Pipeline::from_json(&p.to_json().unwrap()).unwrap(), p);
    let mut bad = p.clone();
    bad.weights.pop();
    assert!(Pipeline::from_json(&bad.to_json().unwrap()).is_err());
}
