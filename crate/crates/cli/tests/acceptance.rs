//! Acceptance suite: one PASS/FAIL line per criterion, each within its time budget.
//!
//! Runs as a plain binary (`harness = false`) so the lines come out in order
//! and a failing criterion does not hide the others.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use evocot::config::RunConfig;
use evocot::data::{CotTrajectory, CurriculumSample, Problem, RolloutGroup, Source, STEP_DELIMITER};
use evocot::eval::{evaluate, pass_at_k_exact};
use evocot::events::Observer;
use evocot::evolution::{detect_saturation, Run};
use evocot::gateway::{FixtureRecord, Gateway, ScriptedBackend};
use evocot::stage1::{build_trajectories, verify_cot};
use evocot::stage2::{compute_advantages, schedule_curriculum};
use evocot::toy::{cot_steps, surrogate_objective, toy_grad, ToyPolicy, Vocab};
use evocot::verifier::{raw_equivalent, score_completion};
use ndarray::Array2;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

/// Name, time budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy_config() -> RunConfig {
    RunConfig::load(&workspace_root().join("configs/toy.json")).expect("configs/toy.json loads")
}

const SEEDS: [u64; 3] = [0, 1, 2];

// 1. Group-relative advantages.
fn advantages() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut uniform_groups = 0;
    for trial in 0..10_000 {
        let g = rng.random_range(2..=16usize);
        let rewards: Vec<f64> = match trial % 4 {
            0 => vec![f64::from(rng.random_range(0..2u8)); g],
            1 => (0..g).map(|_| rng.random_range(-3.0..3.0)).collect(),
            _ => (0..g).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
        };
        let adv = compute_advantages(&rewards).map_err(|e| e.to_string())?;
        let sum: f64 = adv.iter().sum();
        ensure(sum.abs() <= 1e-9, || format!("trial {trial}: advantages sum to {sum}"))?;
        if rewards.iter().all(|&r| r == rewards[0]) {
            uniform_groups += 1;
            ensure(adv.iter().all(|&a| a == 0.0), || format!("trial {trial}: uniform rewards, {adv:?}"))?;
        }
        // Welford mean and population variance, independent of the two-pass code.
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (i, &r) in rewards.iter().enumerate() {
            let d = r - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (r - mean);
        }
        let std = (m2 / g as f64).sqrt();
        for (i, (&a, &r)) in adv.iter().zip(&rewards).enumerate() {
            let expected = if std == 0.0 { 0.0 } else { (r - mean) / (std + 1e-8) };
            ensure((a - expected).abs() <= 1e-12, || format!("trial {trial}[{i}]: {a} vs oracle {expected}"))?;
        }
    }
    Ok(format!("10000 groups, {uniform_groups} uniform"))
}

// 2. Step-truncation curriculum schedule.
fn curriculum() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..300 {
        let count = rng.random_range(1..=12usize);
        let problems: Vec<Problem> = (0..count)
            .map(|i| Problem::new(format!("p{trial}-{i}"), format!("question {i}"), "1", Source::Math))
            .collect();
        let trajectories: Vec<CotTrajectory> = problems
            .iter()
            .map(|p| CotTrajectory {
                problem_id: p.id.clone(),
                steps: (0..rng.random_range(1..=50usize)).map(|s| format!("step {s} of {}", p.id)).collect(),
                iteration: 1,
                verified: true,
                verifier_answer: "1".into(),
            })
            .collect();
        let batch = rng.random_range(1..=64usize);
        let max_steps = rng.random_range(1..=40usize);
        let config = RunConfig {
            train_batch_size: batch,
            mini_batch_size: batch,
            max_train_steps: max_steps,
            ..RunConfig::default()
        };
        let batches = schedule_curriculum(&problems, &trajectories, &config).map_err(|e| e.to_string())?;

        // Hand-rolled oracle: every level of every trajectory in dataset order, then the cut.
        let mut oracle = Vec::new();
        for t in &trajectories {
            let mut k = t.steps.len() as i64;
            while k >= 0 {
                oracle.push((t.problem_id.clone(), k as usize));
                k -= 1;
            }
        }
        oracle.truncate(batch * max_steps);
        let got: Vec<(String, usize)> = batches
            .iter()
            .flat_map(|b| b.samples.iter().map(|s| (s.problem_id.clone(), s.retained_steps)))
            .collect();
        ensure(got == oracle, || format!("trial {trial}: schedule differs from oracle"))?;
        ensure(batches.len() == oracle.len().div_ceil(batch), || format!("trial {trial}: batch count"))?;
        for (i, b) in batches.iter().enumerate() {
            ensure(b.step_index == i + 1 && b.samples.len() <= batch, || format!("trial {trial}: batch {i}"))?;
        }

        // Untruncated: n + 1 strictly decreasing levels per trajectory with the right prompts.
        let full = RunConfig {
            max_train_steps: usize::MAX,
            ..config
        };
        let all: Vec<CurriculumSample> = schedule_curriculum(&problems, &trajectories, &full)
            .map_err(|e| e.to_string())?
            .into_iter()
            .flat_map(|b| b.samples)
            .collect();
        let mut offset = 0;
        for (p, t) in problems.iter().zip(&trajectories) {
            let n = t.steps.len();
            let chunk = &all[offset..offset + n + 1];
            offset += n + 1;
            for (j, s) in chunk.iter().enumerate() {
                ensure(s.problem_id == p.id && s.retained_steps == n - j, || format!("trial {trial}: levels of {}", p.id))?;
                let mut prompt = p.question.clone();
                for step in &t.steps[..s.retained_steps] {
                    prompt.push_str(STEP_DELIMITER);
                    prompt.push_str(step);
                }
                ensure(s.prompt == prompt, || format!("trial {trial}: prompt of {} k={}", p.id, s.retained_steps))?;
            }
        }
        ensure(offset == all.len(), || format!("trial {trial}: extra samples"))?;
    }
    Ok("300 random schedules".into())
}

// 3. Stage-1 filter soundness on scripted fixtures.
fn filter_soundness() -> Check {
    let config = RunConfig {
        stage1_candidates: 3,
        ..RunConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut expected: HashMap<String, Option<usize>> = HashMap::new();
    let mut candidates: HashMap<String, Vec<(Vec<String>, bool)>> = HashMap::new();
    for i in 0..40 {
        let answer = rng.random_range(1..100i64).to_string();
        let p = Problem::new(format!("q{i}"), format!("Problem {i}: what is the value?"), answer.clone(), Source::Math);
        let mut texts = Vec::new();
        let mut verdicts = Vec::new();
        for c in 0..3 {
            let steps: Vec<String> = (0..rng.random_range(1..=4usize)).map(|s| format!("q{i} c{c} s{s}")).collect();
            let verdict = match rng.random_range(0..3u8) {
                0 => format!("so \\boxed{{{answer}}}"),
                1 => format!("so \\boxed{{{}}}", answer.parse::<i64>().unwrap() + 1),
                _ => "I cannot tell.".to_string(),
            };
            let ok = verdict.contains(&format!("{{{answer}}}"));
            records.push(FixtureRecord::for_prompt(
                &config.templates.verification_prompt(&p.question, &steps.join(STEP_DELIMITER)),
                vec![verdict.clone()],
            ));
            texts.push(steps.join(STEP_DELIMITER));
            verdicts.push((steps, ok));
        }
        records.push(FixtureRecord::for_prompt(&config.templates.generation_prompt(&p.question, &p.answer), texts));
        let best = verdicts
            .iter()
            .enumerate()
            .filter(|(_, (_, ok))| *ok)
            .min_by_key(|(idx, (steps, _))| (steps.len(), *idx))
            .map(|(idx, _)| idx);
        expected.insert(p.id.clone(), best);
        candidates.insert(p.id.clone(), verdicts);
        problems.push(p);
    }

    // The hand-built three-candidate case: lengths 3, 2, 2 all verified -> index 1.
    let p = Problem::new("tie", "Tie question?", "5", Source::Math);
    let mut texts = Vec::new();
    for (c, len) in [3usize, 2, 2].into_iter().enumerate() {
        let steps: Vec<String> = (0..len).map(|s| format!("tie c{c} s{s}")).collect();
        records.push(FixtureRecord::for_prompt(
            &config.templates.verification_prompt(&p.question, &steps.join(STEP_DELIMITER)),
            vec!["\\boxed{5}".into()],
        ));
        texts.push(steps.join(STEP_DELIMITER));
        candidates.entry(p.id.clone()).or_default().push((steps, true));
    }
    records.push(FixtureRecord::for_prompt(&config.templates.generation_prompt(&p.question, &p.answer), texts));
    expected.insert(p.id.clone(), Some(1));
    problems.push(p);

    let gateway = Gateway::new(Arc::new(ScriptedBackend::from_records(records)));
    let result = build_trajectories(&problems, &gateway, &config, 1, None, &Observer::silent()).map_err(|e| e.to_string())?;
    let by_id: HashMap<&str, &CotTrajectory> = result.trajectories.iter().map(|t| (t.problem_id.as_str(), t)).collect();
    for p in &problems {
        let cands = &candidates[&p.id];
        match (expected[&p.id], by_id.get(p.id.as_str())) {
            (None, None) => {}
            (Some(idx), Some(t)) => {
                ensure(t.steps == cands[idx].0, || format!("{}: selected {:?}, expected candidate {idx}", p.id, t.steps))?;
                let again = verify_cot(p, &t.steps.join(STEP_DELIMITER), &gateway, &config).map_err(|e| e.to_string())?;
                ensure(again.verified, || format!("{}: emitted trajectory does not re-verify", p.id))?;
                for (steps, ok) in cands {
                    ensure(*ok || *steps != t.steps, || format!("{}: non-verifying candidate emitted", p.id))?;
                }
            }
            (e, got) => return Err(format!("{}: expected {e:?}, got {:?}", p.id, got.map(|t| &t.steps))),
        }
    }
    let unsolved = expected.values().filter(|e| e.is_none()).count();
    ensure(result.unsolved.len() == unsolved, || format!("{} unsolved, expected {unsolved}", result.unsolved.len()))?;
    Ok(format!("{} problems, {} trajectories, {} unsolved", problems.len(), result.trajectories.len(), unsolved))
}

// 4. Equivalence corpus generated by the rational-arithmetic oracle script.
fn verifier_corpus() -> Check {
    let text = std::fs::read_to_string(workspace_root().join("crates/core/tests/data/verifier_corpus.tsv"))
        .map_err(|e| e.to_string())?;
    let mut rows = 0;
    let mut wrong = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 4 {
            return Err(format!("line {}: {} cells", i + 1, cells.len()));
        }
        let left = cells[1].replace('⏎', "\n");
        let got = match cells[0] {
            "answer" => raw_equivalent(&left, cells[2]),
            "completion" => score_completion(&left, cells[2]).correct,
            m => return Err(format!("line {}: mode {m}", i + 1)),
        };
        if got != (cells[3] == "equivalent") {
            wrong.push(i + 1);
        }
        rows += 1;
    }
    ensure(rows >= 100, || format!("only {rows} rows"))?;
    ensure(wrong.is_empty(), || format!("disagreement on lines {wrong:?}"))?;
    Ok(format!("{rows}/{rows} rows agree"))
}

// 5. Analytic toy gradient against central finite differences.
fn gradient() -> Check {
    let labels = ["+1", "+2", "×2", "−1"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let instances = 40;
    for inst in 0..instances {
        let len = rng.random_range(1..=3usize);
        let v = rng.random_range(2..=4usize);
        let g = rng.random_range(2..=8usize);
        let vocab = Vocab::from_labels(&labels[..v]).map_err(|e| e.to_string())?;
        let beta = rng.random_range(0.0..0.5);
        let reference = Array2::from_shape_fn((len, v), |_| rng.random_range(-1.5..1.5));
        let mut policy = ToyPolicy::from_logits(reference);
        policy.logits_mut().mapv_inplace(|x| x + rng.random_range(-1.0..1.0));
        let k = rng.random_range(0..len);
        let start = rng.random_range(0..10i64);
        let problem = Problem::new("g", "q", "0", Source::Synthetic);
        let mut sample = CurriculumSample::bare(&problem);
        sample.retained_steps = k;
        let completions: Vec<String> = (0..g)
            .map(|_| {
                let ops: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
                cot_steps(start, &ops, 0, &vocab).unwrap().join(STEP_DELIMITER)
            })
            .collect();
        let rewards: Vec<f64> = (0..g).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let advantages = compute_advantages(&rewards).map_err(|e| e.to_string())?;
        let group = RolloutGroup {
            sample,
            completions,
            rewards,
            advantages,
            group_size: g,
        };
        let analytic = toy_grad(&policy, &group, &vocab, beta);
        let h = 1e-5;
        let mut fd = Array2::zeros((len, v));
        for i in 0..len {
            for j in 0..v {
                let mut plus = policy.clone();
                plus.logits_mut()[[i, j]] += h;
                let mut minus = policy.clone();
                minus.logits_mut()[[i, j]] -= h;
                fd[[i, j]] = (surrogate_objective(&plus, &group, &vocab, beta)
                    - surrogate_objective(&minus, &group, &vocab, beta))
                    / (2.0 * h);
            }
        }
        let diff = (&analytic - &fd).mapv(|x| x * x).sum().sqrt();
        let scale = analytic.mapv(|x| x * x).sum().sqrt().max(fd.mapv(|x| x * x).sum().sqrt());
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
        ensure(rel < 1e-4, || format!("instance {inst} (L={len}, |V|={v}, G={g}): relative error {rel:e}"))?;
    }
    Ok(format!("{instances} instances, worst relative error {worst:.1e}"))
}

fn open_run(config: RunConfig, root: &Path, id: &str) -> Result<Run, String> {
    Run::open(config, root, id, Observer::silent()).map_err(|e| e.to_string())
}

// 6. One iteration against a bare-question GRPO baseline with the same update budget.
fn bottleneck() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let config = RunConfig {
            seed,
            iterations: 1,
            ..toy_config()
        };
        let mut evo = open_run(config.clone(), root.path(), &format!("evo{seed}"))?;
        let initial = evaluate(&evo.eval_set, &evo.gateway, &evo.config, evo.eval_seed()).summary.pass_at_1;
        ensure(evo.dataset.len() >= 200, || format!("seed {seed}: {} tasks", evo.dataset.len()))?;
        ensure(initial < 5.0, || format!("seed {seed}: initial pass@1 {initial:.2}"))?;
        let report = evo.evolve().map_err(|e| e.to_string())?.reports.remove(0);

        let mut base = open_run(config, root.path(), &format!("base{seed}"))?;
        let baseline = base.baseline(report.train_steps_executed).map_err(|e| e.to_string())?;
        let base_pass = baseline.evaluation.summary.pass_at_1;
        let lift = report.eval_pass_at_1 - base_pass;
        ensure(lift > 10.0, || {
            format!("seed {seed}: evocot {:.2} vs baseline {base_pass:.2}", report.eval_pass_at_1)
        })?;

        let (a, b) = (&report.rollout_correct_curve, &baseline.stage2.curve);
        ensure(a.len() == b.len() && !a.is_empty(), || format!("seed {seed}: curve lengths {} / {}", a.len(), b.len()))?;
        let final_third = a.len().div_ceil(3);
        for ((step, ca), (_, cb)) in a.iter().zip(b).skip(a.len() - final_third) {
            ensure(ca > cb, || format!("seed {seed}: step {step} curve {ca} <= baseline {cb}"))?;
        }
        lines.push(format!("seed {seed}: {initial:.2} -> {:.2} vs baseline {base_pass:.2}", report.eval_pass_at_1));
    }
    Ok(lines.join("; "))
}

// 7. Three iterations: gains shrink and saturation is detected.
fn saturation() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let config = RunConfig {
            seed,
            iterations: 3,
            stop_on_saturation: false,
            ..toy_config()
        };
        let epsilon = config.saturation_epsilon;
        let mut run = open_run(config, root.path(), &format!("sat{seed}"))?;
        let reports = run.evolve().map_err(|e| e.to_string())?.reports;
        ensure(reports.len() == 3, || format!("seed {seed}: {} reports", reports.len()))?;
        let p: Vec<f64> = reports.iter().map(|r| r.eval_pass_at_1).collect();
        let (g12, g23) = (p[1] - p[0], p[2] - p[1]);
        ensure(g23 < g12, || format!("seed {seed}: gain 2->3 {g23:.2} not below gain 1->2 {g12:.2}"))?;
        let fired = (2..=3).find(|&t| detect_saturation(&reports[..t], epsilon));
        ensure(fired.is_some(), || format!("seed {seed}: no saturation (pass@1 {p:?})"))?;
        lines.push(format!("seed {seed}: gains {g12:+.2} {g23:+.2}, saturated at {}", fired.unwrap()));
    }
    Ok(lines.join("; "))
}

// 8. pass@1 = c/n and monotone in k.
fn pass_at_k() -> Check {
    let mut cases = 0;
    for n in 1..=16u64 {
        for c in 0..=n {
            let p1 = pass_at_k_exact(n, c, 1).map_err(|e| e.to_string())?;
            ensure(p1 == BigRational::new(c.into(), n.into()), || format!("pass@1({n},{c}) = {p1}"))?;
            let mut prev = BigRational::zero();
            for k in 1..=n {
                let v = pass_at_k_exact(n, c, k).map_err(|e| e.to_string())?;
                ensure(v >= prev && v <= BigRational::one(), || format!("pass@{k}({n},{c}) = {v} after {prev}"))?;
                prev = v;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (n, c, k) cases"))
}

// 9. Two CLI runs, byte-identical reports.
fn reproducibility() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = workspace_root().join("configs/toy.json");
    let mut outputs = Vec::new();
    for id in ["first", "second"] {
        let status = Command::new(env!("CARGO_BIN_EXE_evocot"))
            .arg("evolve")
            .arg("--config")
            .arg(&config)
            .args(["--seed", "0", "--iterations", "3", "--run-id", id, "--quiet", "--out"])
            .arg(root.path())
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || format!("{id}: {}", String::from_utf8_lossy(&status.stderr)))?;
        outputs.push(std::fs::read(root.path().join(id).join("reports.jsonl")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "reports.jsonl differ between runs".into())?;
    Ok(format!("{} identical bytes", outputs[0].len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 advantages", 5, advantages),
        ("2 curriculum schedule", 5, curriculum),
        ("3 filter soundness", 5, filter_soundness),
        ("4 verifier corpus", 2, verifier_corpus),
        ("5 gradient check", 30, gradient),
        ("6 bottleneck analogue", 600, bottleneck),
        ("7 saturation analogue", 1800, saturation),
        ("8 pass@k identity", 1, pass_at_k),
        ("9 reproducibility", 600, reproducibility),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(budget) => {
                Err(format!("{detail}; took {elapsed:.2?}, budget {budget}s"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {elapsed:>10.2?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {elapsed:>10.2?}  {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
