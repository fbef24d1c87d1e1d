use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{completion_actions, Vocab};
use crate::data::RolloutGroup;
use crate::error::{Error, Result};
use crate::stage2::{TrainStats, Trainer};

/// Independent categorical distribution over operations at every position.
/// `reference` is the snapshot the KL penalty is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    logits: Array2<f64>,
    reference: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    logits: Vec<Vec<f64>>,
    reference: Vec<Vec<f64>>,
}

pub(crate) fn softmax(z: impl Iterator<Item = f64>, temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = z.collect();
    if temperature == 0.0 {
        let best = argmax(&z);
        return (0..z.len()).map(|j| if j == best { 1.0 } else { 0.0 }).collect();
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in z.iter().enumerate() {
        if x > z[best] {
            best = j;
        }
    }
    best
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("policy file: logits must be a non-empty rectangular matrix".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::Config(format!("policy file: {e}")))
}

impl ToyPolicy {
    /// Uniform policy: all logits zero.
    pub fn uniform(max_len: usize, vocab_size: usize) -> Self {
        Self::from_logits(Array2::zeros((max_len, vocab_size)))
    }

    /// The reference starts equal to the given logits.
    pub fn from_logits(logits: Array2<f64>) -> Self {
        Self {
            reference: logits.clone(),
            logits,
        }
    }

    pub fn max_len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array2<f64> {
        &mut self.logits
    }

    pub fn reference(&self) -> &Array2<f64> {
        &self.reference
    }

    /// Action distribution at `position`; temperature 0 is one-hot on the argmax.
    pub fn probs(&self, position: usize, temperature: f64) -> Vec<f64> {
        softmax(self.logits.row(position).iter().cloned(), temperature)
    }

    pub fn reference_probs(&self, position: usize) -> Vec<f64> {
        softmax(self.reference.row(position).iter().cloned(), 1.0)
    }

    pub fn sample<R: Rng>(&self, position: usize, temperature: f64, rng: &mut R) -> usize {
        if temperature == 0.0 {
            return argmax(&self.logits.row(position).to_vec());
        }
        let p = self.probs(position, temperature);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                return j;
            }
        }
        p.len() - 1
    }

    /// KL(current || reference) at one position.
    pub fn kl(&self, position: usize) -> f64 {
        kl(&self.probs(position, 1.0), &self.reference_probs(position))
    }

    pub fn mean_kl(&self) -> f64 {
        (0..self.max_len()).map(|i| self.kl(i)).sum::<f64>() / self.max_len() as f64
    }

    pub fn snapshot_reference(&mut self) {
        self.reference = self.logits.clone();
    }

    /// Probability of the exact operation sequence `ops[k..]` at temperature 1.
    pub fn path_probability(&self, ops: &[usize], k: usize) -> f64 {
        ops.iter()
            .enumerate()
            .skip(k)
            .map(|(i, &a)| self.probs(i, 1.0)[a])
            .product()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PolicyFile {
            logits: to_rows(&self.logits),
            reference: to_rows(&self.reference),
        };
        std::fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        let logits = from_rows(&file.logits)?;
        let reference = from_rows(&file.reference)?;
        if logits.dim() != reference.dim() {
            return Err(Error::Config("policy file: logits and reference shapes differ".into()));
        }
        Ok(Self { logits, reference })
    }
}

/// Sum over the group's completions of
/// `A * d log pi(a_pos) / dz  -  beta * d KL_pos / dz` at every sampled
/// position (positions before the retained-step count are guidance).
pub fn toy_grad(policy: &ToyPolicy, group: &RolloutGroup, vocab: &Vocab, kl_coefficient: f64) -> Array2<f64> {
    let mut grad = Array2::zeros(policy.logits.dim());
    let k = group.sample.retained_steps;
    for (completion, &adv) in group.completions.iter().zip(&group.advantages) {
        let actions = completion_actions(completion, vocab);
        for (pos, &a) in actions.iter().enumerate().skip(k).take(policy.max_len().saturating_sub(k)) {
            let p = policy.probs(pos, 1.0);
            let q = policy.reference_probs(pos);
            let kl_pos = kl(&p, &q);
            let mut row = grad.row_mut(pos);
            for j in 0..p.len() {
                let onehot = if j == a { 1.0 } else { 0.0 };
                let dkl = p[j] * (p[j].ln() - q[j].ln() - kl_pos);
                row[j] += adv * (onehot - p[j]) - kl_coefficient * dkl;
            }
        }
    }
    grad
}

/// The objective whose gradient [`toy_grad`] returns:
/// `sum_c sum_pos [A_c log pi(a_pos) - beta KL_pos]`.
pub fn surrogate_objective(policy: &ToyPolicy, group: &RolloutGroup, vocab: &Vocab, kl_coefficient: f64) -> f64 {
    let k = group.sample.retained_steps;
    let mut total = 0.0;
    for (completion, &adv) in group.completions.iter().zip(&group.advantages) {
        let actions = completion_actions(completion, vocab);
        for (pos, &a) in actions.iter().enumerate().skip(k).take(policy.max_len().saturating_sub(k)) {
            total += adv * policy.probs(pos, 1.0)[a].ln() - kl_coefficient * policy.kl(pos);
        }
    }
    total
}

/// Gradient ascent on the shared toy policy.
pub struct ToyTrainer {
    policy: Arc<RwLock<ToyPolicy>>,
    vocab: Vocab,
    learning_rate: f64,
    kl_coefficient: f64,
}

impl ToyTrainer {
    pub fn new(policy: Arc<RwLock<ToyPolicy>>, vocab: Vocab, learning_rate: f64, kl_coefficient: f64) -> Self {
        Self {
            policy,
            vocab,
            learning_rate,
            kl_coefficient,
        }
    }

    pub fn policy(&self) -> Arc<RwLock<ToyPolicy>> {
        self.policy.clone()
    }
}

impl Trainer for ToyTrainer {
    fn begin_iteration(&mut self, _dir: &Path) -> Result<()> {
        self.policy.write().snapshot_reference();
        Ok(())
    }

    fn update(&mut self, groups: &[RolloutGroup]) -> Result<TrainStats> {
        let mut stats = TrainStats::from_groups(groups);
        let total: usize = groups.iter().map(|g| g.completions.len()).sum();
        if total == 0 {
            return Ok(stats);
        }
        let mut policy = self.policy.write();
        let mut grad = Array2::zeros(policy.logits.dim());
        let mut objective = 0.0;
        for g in groups {
            grad += &toy_grad(&policy, g, &self.vocab, self.kl_coefficient);
            objective += surrogate_objective(&policy, g, &self.vocab, self.kl_coefficient);
        }
        grad /= total as f64;
        stats.loss = -objective / total as f64;
        if grad.iter().all(|x| x.is_finite()) {
            policy.logits.scaled_add(self.learning_rate, &grad);
            stats.update_applied = true;
        } else {
            log::warn!("non-finite toy gradient; update skipped");
        }
        stats.kl = policy.mean_kl();
        Ok(stats)
    }

    fn save_state(&self, path: &Path) -> Result<()> {
        self.policy.read().save(path)
    }

    fn load_state(&mut self, path: &Path) -> Result<()> {
        let loaded = ToyPolicy::load(path)?;
        let mut policy = self.policy.write();
        if loaded.logits.dim() != policy.logits.dim() {
            return Err(Error::Config(format!(
                "{}: policy shape {:?} does not match {:?}",
                path.display(),
                loaded.logits.dim(),
                policy.logits.dim()
            )));
        }
        *policy = loaded;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CurriculumSample, Problem, Source};
    use crate::toy::{render_task, ToyTask};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::from_labels(&["+1", "+2", "×2", "−1"]).unwrap()
    }

    fn group(task: &ToyTask, k: usize, completions: Vec<Vec<usize>>, advantages: Vec<f64>) -> RolloutGroup {
        let v = vocab();
        let (q, a, _) = render_task(task, &v);
        let problem = Problem::new("t", q, a, Source::Synthetic);
        let mut sample = CurriculumSample::bare(&problem);
        sample.retained_steps = k;
        let texts: Vec<String> = completions
            .iter()
            .map(|ops| {
                crate::toy::cot_steps(task.start, ops, 0, &v)
                    .unwrap()
                    .join(crate::data::STEP_DELIMITER)
            })
            .collect();
        let n = texts.len();
        RolloutGroup {
            sample,
            completions: texts,
            rewards: vec![0.0; n],
            advantages,
            group_size: n,
        }
    }

    fn random_policy(seed: u64, rows: usize, cols: usize) -> ToyPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ToyPolicy::from_logits(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0)));
        p.logits_mut().mapv_inplace(|x| x + rng.random_range(-0.5..0.5));
        p
    }

    #[test]
    fn distributions_are_normalized() {
        let p = random_policy(1, 5, 4);
        for i in 0..5 {
            for t in [0.0, 0.3, 1.0, 2.5] {
                let s: f64 = p.probs(i, t).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn greedy_ties_pick_lowest_index() {
        let p = ToyPolicy::uniform(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.sample(0, 0.0, &mut rng), 0);
        assert_eq!(p.probs(1, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_advantage_and_zero_kl_give_zero_gradient() {
        let p = ToyPolicy::uniform(3, 4);
        let task = ToyTask::new(1, vec![0, 1, 2], &vocab()).unwrap();
        let g = group(&task, 0, vec![vec![0, 1, 2], vec![3, 3, 3]], vec![0.0, 0.0]);
        assert!(toy_grad(&p, &g, &vocab(), 0.5).iter().all(|x| *x == 0.0));
        assert_eq!(p.mean_kl(), 0.0);
    }

    #[test]
    fn guidance_positions_get_no_gradient() {
        let p = random_policy(3, 3, 4);
        let task = ToyTask::new(1, vec![0, 1, 2], &vocab()).unwrap();
        let g = group(&task, 2, vec![vec![0, 1, 2], vec![0, 1, 3]], vec![1.0, -1.0]);
        let grad = toy_grad(&p, &g, &vocab(), 0.1);
        assert!(grad.row(0).iter().chain(grad.row(1).iter()).all(|x| *x == 0.0));
        assert!(grad.row(2).iter().any(|x| *x != 0.0));
    }

    #[test]
    fn gradient_step_raises_rewarded_action() {
        let policy = Arc::new(RwLock::new(ToyPolicy::uniform(3, 4)));
        let task = ToyTask::new(1, vec![0, 1, 2], &vocab()).unwrap();
        let g = group(&task, 0, vec![vec![0, 1, 2], vec![3, 3, 3]], vec![1.0, -1.0]);
        let before = policy.read().path_probability(&task.ops, 0);
        let mut trainer = ToyTrainer::new(policy.clone(), vocab(), 0.5, 0.0);
        let stats = trainer.update(&[g]).unwrap();
        assert!(stats.update_applied);
        assert!(policy.read().path_probability(&task.ops, 0) > before);
    }

    #[test]
    fn kl_pulls_towards_reference() {
        let mut p = ToyPolicy::uniform(1, 3);
        p.logits_mut()[[0, 0]] = 2.0;
        let task = ToyTask::new(1, vec![0], &vocab()).unwrap();
        let g = group(&task, 0, vec![vec![1]], vec![0.0]);
        let grad = toy_grad(&p, &g, &vocab(), 1.0);
        assert!(grad[[0, 0]] < 0.0);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut p = random_policy(9, 4, 4);
        p.snapshot_reference();
        p.logits_mut()[[1, 2]] += 0.25;
        p.save(&path).unwrap();
        assert_eq!(ToyPolicy::load(&path).unwrap(), p);
    }

    proptest! {
        /// Central finite differences of the surrogate match the analytic gradient.
        #[test]
        fn gradient_matches_finite_differences(
            seed in 0u64..1000,
            k in 0usize..3,
            beta in 0.0f64..1.0,
            advs in prop::collection::vec(-2.0f64..2.0, 4),
            paths in prop::collection::vec(prop::collection::vec(0usize..4, 3), 4),
        ) {
            let v = vocab();
            let p = random_policy(seed, 3, 4);
            let task = ToyTask::new(2, vec![0, 1, 2], &v).unwrap();
            let g = group(&task, k, paths, advs);
            let analytic = toy_grad(&p, &g, &v, beta);
            let h = 1e-5;
            for i in 0..3 {
                for j in 0..4 {
                    let mut plus = p.clone();
                    plus.logits_mut()[[i, j]] += h;
                    let mut minus = p.clone();
                    minus.logits_mut()[[i, j]] -= h;
                    let fd = (surrogate_objective(&plus, &g, &v, beta) - surrogate_objective(&minus, &g, &v, beta)) / (2.0 * h);
                    let a = analytic[[i, j]];
                    let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
                    prop_assert!(err < 1e-4, "({i},{j}) analytic {a} fd {fd}");
                }
            }
        }

        #[test]
        fn update_keeps_rows_normalized(seed in 0u64..500, lr in 0.0f64..5.0) {
            let v = vocab();
            let policy = Arc::new(RwLock::new(random_policy(seed, 3, 4)));
            let task = ToyTask::new(2, vec![0, 1, 2], &v).unwrap();
            let g = group(&task, 0, vec![vec![0, 1, 2], vec![3, 2, 1]], vec![1.0, -1.0]);
            ToyTrainer::new(policy.clone(), v, lr, 0.1).update(&[g]).unwrap();
            let p = policy.read();
            for i in 0..3 {
                prop_assert!((p.probs(i, 1.0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
