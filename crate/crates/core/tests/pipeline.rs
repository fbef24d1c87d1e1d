//! Whole iterations through `Run`, on scripted fixtures and on the toy backend.

use std::path::Path;

use evocot::config::{BackendConfig, RunConfig};
use evocot::data::{guided_prompt, read_jsonl, write_jsonl, Problem, Source};
use evocot::events::Observer;
use evocot::evolution::Run;
use evocot::gateway::FixtureRecord;
use evocot::stage1::UnsolvedRecord;
use evocot::CotTrajectory;

const GOOD: &str = "a\n\nb\n\n\\boxed{12}";
const BAD: &str = "x\n\n\\boxed{12}";

/// One hard problem (always answered 11) and one solved problem.
fn scripted_run(root: &Path, with_hard: bool) -> Run {
    let config = RunConfig {
        train_batch_size: 2,
        mini_batch_size: 2,
        max_train_steps: 10,
        ..RunConfig::default()
    };
    let t = &config.templates;
    let hard = Problem::new("p1", "Q1", "12", Source::Math);
    let easy = Problem::new("p2", "Q2", "5", Source::Math);
    let mut records = vec![
        FixtureRecord::for_prompt("Q1", vec!["\\boxed{11}".into()]),
        FixtureRecord::for_prompt("Q2", vec!["\\boxed{5}".into()]),
        FixtureRecord::for_prompt(&t.generation_prompt("Q1", "12"), vec![GOOD.into(), BAD.into()]),
        FixtureRecord::for_prompt(&t.verification_prompt("Q1", GOOD), vec!["\\boxed{12}".into()]),
        FixtureRecord::for_prompt(&t.verification_prompt("Q1", BAD), vec!["\\boxed{13}".into()]),
    ];
    let steps: Vec<String> = GOOD.split("\n\n").map(str::to_string).collect();
    for k in 1..=3 {
        records.push(FixtureRecord::for_prompt(
            &guided_prompt("Q1", &steps[..k]),
            vec!["\\boxed{12}".into(), "\\boxed{1}".into()],
        ));
    }
    let fixture = root.join("fixture.jsonl");
    write_jsonl(&fixture, &records).unwrap();
    let data = root.join("problems.jsonl");
    let problems = if with_hard { vec![hard, easy] } else { vec![easy] };
    write_jsonl(&data, &problems).unwrap();
    let config = RunConfig {
        backend: BackendConfig::Scripted { fixture_path: fixture },
        dataset: Some(data),
        ..config
    };
    Run::open(config, root, "run", Observer::silent()).unwrap()
}

#[test]
fn scripted_iteration_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = scripted_run(dir.path(), true);
    let r = run.run_iteration(1).unwrap();
    assert_eq!(r.selected_hard_count, 1);
    // Two recorded candidates cycled to eight; the even ones verify.
    assert_eq!((r.stage1_generated, r.stage1_verified), (8, 4));
    assert_eq!(r.stage1_yield, 0.5);
    // k = 3, 2, 1, 0 in batches of two.
    assert_eq!((r.curriculum_samples, r.train_steps_executed), (4, 2));
    // Guided levels score 4/8; the bare question 0/8.
    assert_eq!(r.rollout_correct_curve, vec![(1, 8), (2, 4)]);
    assert_eq!(r.eval_pass_at_1, 50.0);

    let d = run.iter_dir(1);
    let trajectories: Vec<CotTrajectory> = read_jsonl(&d.join("trajectories.jsonl")).unwrap();
    assert_eq!(trajectories[0].steps, vec!["a", "b", "\\boxed{12}"]);
    let exported = std::fs::read_to_string(d.join("train_export.jsonl")).unwrap();
    assert_eq!(exported.lines().count(), 2);
    assert_eq!(std::fs::read_to_string(d.join("curve.csv")).unwrap(), "step,correct_count\n1,8\n2,4\n");
}

#[test]
fn empty_hard_set_trains_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = scripted_run(dir.path(), false);
    let r = run.run_iteration(1).unwrap();
    assert_eq!((r.selected_hard_count, r.train_steps_executed, r.stage1_generated), (0, 0, 0));
    assert!(r.rollout_correct_curve.is_empty());
    assert_eq!(r.eval_pass_at_1, 100.0);
}

#[test]
fn run_directory_is_locked_while_open() {
    let dir = tempfile::tempdir().unwrap();
    let run = scripted_run(dir.path(), true);
    let again = Run::open(run.config.clone(), dir.path(), "run", Observer::silent());
    assert!(matches!(again, Err(evocot::Error::Locked(_))));
    let config = run.config.clone();
    drop(run);
    assert!(Run::open(config.clone(), dir.path(), "run", Observer::silent()).is_ok());
    let changed = RunConfig { seed: 9, ..config };
    assert!(Run::open(changed, dir.path(), "run", Observer::silent()).is_err());
}

fn toy_config() -> RunConfig {
    let mut c = RunConfig {
        learning_rate: 1e-2,
        max_train_steps: 4,
        iterations: 2,
        stop_on_saturation: false,
        ..RunConfig::default()
    };
    c.toy.tasks.count = 60;
    c
}

#[test]
fn toy_iteration_produces_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::open(toy_config(), dir.path(), "toy", Observer::silent()).unwrap();
    let out = run.evolve().unwrap();
    assert_eq!(out.reports.len(), 2);
    let r = &out.reports[0];
    assert!(r.stage1_yield > 0.0 && r.stage1_yield <= 1.0);
    assert!(!r.rollout_correct_curve.is_empty());
    assert!(r.validate().is_ok());
    // Later iterations select from the first hard pool.
    assert!(out.reports[1].selected_hard_count <= r.selected_hard_count);
    for d in &out.diagnostics {
        let unsolved: Vec<UnsolvedRecord> = read_jsonl(&run.iter_dir(2).join("unsolved.jsonl")).unwrap();
        assert!(unsolved.iter().any(|u| u.problem_id == d.problem_id));
    }
}

#[test]
fn interrupted_stage1_resumes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let reference = {
        let mut run = Run::open(toy_config(), dir.path(), "a", Observer::silent()).unwrap();
        run.select_step(1).unwrap();
        run.stage1_step(1).unwrap();
        std::fs::read(run.iter_dir(1).join("trajectories.jsonl")).unwrap()
    };

    let mut run = Run::open(toy_config(), dir.path(), "b", Observer::silent()).unwrap();
    run.select_step(1).unwrap();
    run.stage1_step(1).unwrap();
    let d = run.iter_dir(1);
    // Simulate a crash half way: keep half of the checkpoint, lose the outputs.
    let ckpt = std::fs::read_to_string(d.join("stage1_checkpoint.jsonl")).unwrap();
    let lines: Vec<&str> = ckpt.lines().collect();
    std::fs::write(d.join("stage1_checkpoint.jsonl"), lines[..lines.len() / 2].join("\n") + "\n").unwrap();
    std::fs::remove_file(d.join("trajectories.jsonl")).unwrap();
    run.stage1_step(1).unwrap();
    assert_eq!(std::fs::read(d.join("trajectories.jsonl")).unwrap(), reference);
    let rewritten = std::fs::read_to_string(d.join("stage1_checkpoint.jsonl")).unwrap();
    assert_eq!(rewritten.lines().count(), lines.len());
}

#[test]
fn evolve_skips_finished_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let first = {
        let mut run = Run::open(toy_config(), dir.path(), "r", Observer::silent()).unwrap();
        run.evolve().unwrap().reports
    };
    let stamp = std::fs::metadata(dir.path().join("r/iter1/rollouts.jsonl")).unwrap().modified().unwrap();
    let mut run = Run::open(toy_config(), dir.path(), "r", Observer::silent()).unwrap();
    assert_eq!(run.evolve().unwrap().reports, first);
    let after = std::fs::metadata(dir.path().join("r/iter1/rollouts.jsonl")).unwrap().modified().unwrap();
    assert_eq!(stamp, after);
}
