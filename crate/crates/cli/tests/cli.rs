use std::path::{Path, PathBuf};
use std::process::Command;

use glasspipe::coevo::{CoevoConfig, GenerationRecord, Pipeline};
use glasspipe::dtree::{CompareOp, Comparison, Expr, Tree};
use glasspipe::minipong::{EnvConfig, FrameSkip};
use glasspipe_cli::eval::{evaluate, parse_frame_skip, EvalOptions, EvalReport, PipelineArtifact};
use glasspipe_cli::inspect::inspect;
use glasspipe_cli::plot::{plot, plot_data, EVALUATIONS_CHART, FITNESS_CHART};
use glasspipe_cli::render::{render, RenderOptions};
use glasspipe_cli::train::{read_log, train, RunLayout, TrainOptions, LOG_COLUMNS};
use glasspipe_cli::{config, Error};

const TINY: &str = r#"
seed = 11
g = 4
e = 1
held_out_episodes = 4
workers = 1

[env]
points_to_win = 2

[cma]
p_c = 4

[gp]
p_g = 4
tournament_size = 2

[clustering]
n_vm = 10
n_dm = 10
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn opts(config: PathBuf, run_dir: PathBuf) -> TrainOptions {
    TrainOptions {
        config,
        resume: false,
        workers: None,
        run_dir: Some(run_dir),
    }
}

/// Every column except wall time.
fn replayable(h: &[GenerationRecord]) -> Vec<GenerationRecord> {
    h.iter()
        .map(|r| GenerationRecord {
            wall_time_s: 0.0,
            ..r.clone()
        })
        .collect()
}

fn glasspipe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glasspipe"))
}

fn one_condition_pipeline() -> PipelineArtifact {
    let tree = Tree::condition(
        Comparison::new(CompareOp::Less, Expr::Var(1), Expr::Var(3)),
        Tree::Leaf(1),
        Tree::Leaf(2),
    );
    PipelineArtifact::new(
        Pipeline {
            k: 2,
            kernel_size: 5,
            weights: (0..150).map(|i| ((i * 37 % 11) as f64 - 5.0) / 10.0).collect(),
            tree,
        },
        EnvConfig::default(),
    )
}

#[test]
fn config_round_trip_is_idempotent() {
    for cfg in [CoevoConfig::default(), CoevoConfig::desk(4)] {
        let text = config::to_toml(&cfg).unwrap();
        let back = config::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(config::to_toml(&back).unwrap(), text);
    }
    let tiny = config::parse(TINY).unwrap();
    assert_eq!((tiny.generations, tiny.cma.population_size, tiny.gp.population_size), (4, 4, 4));
}

#[test]
fn unknown_or_bad_keys_are_named() {
    let err = config::parse("seed = 1\npopulation = 5\n").unwrap_err();
    assert!(err.contains("population"), "{err}");
    let err = config::parse("[gp]\np_g = 4\ntournamnet_size = 2\n").unwrap_err();
    assert!(err.contains("tournamnet_size"), "{err}");
    let err = config::parse("k = 3\n").unwrap_err();
    assert!(err.contains("variable_arity"), "{err}");
    assert!(config::parse("g = \"many\"\n").is_err());
}

#[test]
fn train_writes_the_run_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = train(&opts(cfg, dir.path().join("run"))).unwrap();
    let layout = &out.layout;
    for p in [layout.manifest(), layout.log(), layout.best_pipeline(), layout.held_out()] {
        assert!(p.is_file(), "{} missing", p.display());
    }
    for g in 0..4 {
        assert!(layout.checkpoint(g).is_file());
    }
    let log = read_log(&layout.log()).unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(replayable(&log), replayable(&out.history));
    let header = std::fs::read_to_string(layout.log()).unwrap();
    assert_eq!(header.lines().next().unwrap(), LOG_COLUMNS.join(","));
    assert_eq!(out.held_out.summary.n, 4);
    let artifact = PipelineArtifact::load(&layout.best_pipeline()).unwrap();
    assert_eq!(artifact.fitness, Some(log[3].best_so_far));

    // A second fresh run into the same directory is refused.
    let again = train(&opts(write_config(dir.path(), "tiny.toml", TINY), layout.root.clone()));
    assert!(matches!(again, Err(Error::Usage(_))));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let full = train(&opts(cfg.clone(), dir.path().join("full"))).unwrap();

    // Interrupted after generation 1: later checkpoints and final artifacts
    // never got written, and the log holds two rows.
    let part = train(&opts(cfg.clone(), dir.path().join("part"))).unwrap().layout;
    for g in 2..4 {
        std::fs::remove_file(part.checkpoint(g)).unwrap();
    }
    std::fs::remove_file(part.best_pipeline()).unwrap();
    std::fs::remove_file(part.held_out()).unwrap();
    let log = read_log(&part.log()).unwrap();
    glasspipe_cli::train::write_log(&part.log(), &log[..2]).unwrap();

    let mut o = opts(cfg, part.root.clone());
    o.resume = true;
    o.workers = Some(2);
    let resumed = train(&o).unwrap();
    assert_eq!(
        replayable(&read_log(&part.log()).unwrap()),
        replayable(&read_log(&full.layout.log()).unwrap())
    );
    assert_eq!(
        std::fs::read(part.best_pipeline()).unwrap(),
        std::fs::read(full.layout.best_pipeline()).unwrap()
    );
    assert_eq!(resumed.held_out, full.held_out);
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let run = train(&opts(cfg, dir.path().join("run"))).unwrap().layout;
    let other = write_config(dir.path(), "other.toml", &TINY.replace("seed = 11", "seed = 12"));
    let mut o = opts(other, run.root.clone());
    o.resume = true;
    assert!(matches!(train(&o), Err(Error::Usage(_))));
    let mut o = opts(write_config(dir.path(), "t.toml", TINY), dir.path().join("empty"));
    o.resume = true;
    assert!(matches!(train(&o), Err(Error::Usage(_))));
}

#[test]
fn missing_config_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    let status = glasspipe()
        .args(["train", "--config"])
        .arg(dir.path().join("absent.toml"))
        .env("GLASSPIPE_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("absent.toml"));
    assert!(!root.exists());

    let bad = write_config(dir.path(), "bad.toml", "g = 2\nbogus_key = 1\n");
    let status = glasspipe()
        .args(["train", "--config"])
        .arg(&bad)
        .env("GLASSPIPE_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("bogus_key"));
    assert!(!root.exists());
}

#[test]
fn binary_trains_into_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let root = dir.path().join("runs");
    let out = glasspipe()
        .args(["train", "--workers", "1", "--config"])
        .arg(&cfg)
        .env("GLASSPIPE_OUTPUT_ROOT", &root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let layout = RunLayout::new(root.join("tiny-seed11"));
    assert_eq!(read_log(&layout.log()).unwrap().len(), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("held-out"));
}

#[test]
fn ci_matches_the_worked_example() {
    let r = EvalReport::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0, FrameSkip::None).unwrap();
    assert_eq!(r.summary.mean, 3.0);
    assert!((r.summary.std - 1.5811).abs() < 1e-4);
    let expected = 2.7764 * 2.5f64.sqrt() / 5f64.sqrt();
    assert!((r.summary.ci95.unwrap() - expected).abs() < 1e-3);
    assert!((r.summary.ci95.unwrap() - 1.963).abs() < 1e-3);
    assert!(r.to_string().contains("±1.963"));
}

#[test]
fn eval_contracts() {
    let a = one_condition_pipeline();
    let o = EvalOptions {
        episodes: 3,
        seed: 9,
        frame_skip: None,
    };
    let r1 = evaluate(&a, &o).unwrap();
    assert_eq!(r1, evaluate(&a, &o).unwrap());
    assert_eq!(r1.scores.len(), 3);
    let zero = EvalOptions { episodes: 0, ..o.clone() };
    assert!(evaluate(&a, &zero).is_err());
    let fs = EvalOptions {
        frame_skip: Some(FrameSkip::stochastic_default()),
        ..o
    };
    assert_eq!(evaluate(&a, &fs).unwrap().frame_skip, FrameSkip::stochastic_default());
}

#[test]
fn frame_skip_modes() {
    assert_eq!(parse_frame_skip("none").unwrap(), FrameSkip::None);
    assert_eq!(parse_frame_skip("stochastic").unwrap(), FrameSkip::Stochastic { min: 2, max: 4 });
    assert_eq!(parse_frame_skip("stochastic:2:2").unwrap(), FrameSkip::Stochastic { min: 2, max: 2 });
    for bad in ["", "skip", "stochastic:3:2", "stochastic:0:2", "stochastic:a:b"] {
        assert!(parse_frame_skip(bad).is_err(), "{bad}");
    }
}

#[test]
fn corrupt_artifact_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    std::fs::write(&p, "{\"pipeline\": 3}").unwrap();
    assert!(PipelineArtifact::load(&p).is_err());
    let mut a = one_condition_pipeline();
    a.pipeline.weights.pop();
    std::fs::write(&p, a.to_json().unwrap()).unwrap();
    let err = PipelineArtifact::load(&p).unwrap_err().to_string();
    assert!(err.contains("parameters"), "{err}");
}

#[test]
fn inspect_reports() {
    let mut leaf = one_condition_pipeline();
    leaf.pipeline.tree = Tree::Leaf(2);
    let r = inspect(&leaf).unwrap();
    assert_eq!(r.m_prime, 0.0);
    assert_eq!(r.text, "UP");

    let a = one_condition_pipeline();
    let r = inspect(&a).unwrap();
    assert_eq!(r.text, "if y_1 < y_2 then FIRE else UP");
    assert_eq!(r.kernels.len(), 2);
    assert!(!r.samples.is_empty() && r.samples.iter().all(|s| s.detections.len() == 2));
    assert_eq!(r, inspect(&a).unwrap());
    assert_eq!(r.to_string(), inspect(&a).unwrap().to_string());

    // A condition that cannot fail on the coordinate grid disappears.
    let mut always = one_condition_pipeline();
    always.pipeline.tree = Tree::condition(
        Comparison::new(CompareOp::Less, Expr::Var(0), Expr::Const(500.0)),
        a.pipeline.tree.clone(),
        Tree::Leaf(0),
    );
    assert_eq!(inspect(&always).unwrap().text, r.text);
}

#[test]
fn plot_one_and_many_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for seed in [1, 2] {
        let cfg = write_config(dir.path(), "t.toml", &TINY.replace("seed = 11", &format!("seed = {seed}")));
        runs.push(train(&opts(cfg, dir.path().join(format!("r{seed}")))).unwrap().layout.root);
    }
    let files = plot(&runs[..1], None).unwrap();
    assert_eq!(files.len(), 2);
    assert!(files[0].ends_with(FITNESS_CHART) && files[1].ends_with(EVALUATIONS_CHART));
    assert!(files.iter().all(|f| std::fs::read_to_string(f).unwrap().starts_with("<svg")));

    let out = dir.path().join("both");
    let files = plot(&runs, Some(&out)).unwrap();
    assert!(files.iter().all(|f| f.starts_with(&out)));

    let logs: Vec<_> = runs.iter().map(|r| read_log(&RunLayout::new(r).log()).unwrap()).collect();
    let d = plot_data(&logs).unwrap();
    assert_eq!(d.theoretical_cumulative, vec![16.0, 32.0, 48.0, 64.0]);
    let first: f64 = logs.iter().map(|l| l[0].actual_evaluations as f64).sum::<f64>() / 2.0;
    assert_eq!(d.actual_cumulative.mean[0], first);

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    glasspipe_cli::train::write_log(&RunLayout::new(&empty).log(), &[]).unwrap();
    assert!(plot(&[empty], None).is_err());
    assert!(plot(&[], None).is_err());
}

#[test]
fn render_dumps_frames_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let a = one_condition_pipeline();
    let o = RenderOptions {
        seed: 3,
        steps: 12,
        every: 5,
        processed: true,
        out: dir.path().join("frames"),
    };
    let r = render(Some(&a), EnvConfig::default(), &o).unwrap();
    assert_eq!(r.steps, 12);
    assert_eq!(r.frames.len(), 6);
    let raw = std::fs::read(&r.frames[0]).unwrap();
    assert!(raw.starts_with(b"P6\n160 210\n255\n"));
    let processed = std::fs::read(&r.frames[1]).unwrap();
    assert!(processed.starts_with(b"P6\n96 96\n255\n"));
    let trace = std::fs::read_to_string(&r.trace).unwrap();
    assert_eq!(trace.lines().count(), 13);
    let again = render(Some(&a), EnvConfig::default(), &o).unwrap();
    assert_eq!(std::fs::read_to_string(&again.trace).unwrap(), trace);
}
