//! Group-relative policy optimization over per-query candidate slates.
//!
//! The training loop treats each query as an independent bandit: the policy
//! keeps one logit vector per query, samples candidates from its softmax at
//! temperature 1, and ascends the clipped surrogate objective. Advantages are
//! computed per group by normalizing rewards with the group mean and
//! population standard deviation, so no value network is involved, and there
//! is no KL penalty. Each optimization step snapshots the policy, splits the
//! batch into mini-batches of [`MINI_BATCH_GROUPS`] groups, and applies one
//! ascent update per mini-batch with probability ratios taken against the
//! snapshot.
//!
//! [`train`] wires the loop to a [`SyntheticEnv`]: every step it shuffles a
//! query batch, draws `group_size` candidates per query, scores them with the
//! reward schedule at the current step, and records per-step means in a
//! [`TrainingLog`] that serializes to CSV.

use std::io;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dialogue::TurnAnnotation;
use crate::reward::{
    best_matching, format_reward, length_reward_for_len, scales_at, think_length, LengthUnit,
    RewardConfig, RewardError,
};
use crate::rollout::parse_output;
use crate::synth::SyntheticEnv;

/// Number of groups per mini-batch inside one optimization step.
pub const MINI_BATCH_GROUPS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("relative advantages need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("group for query {query_id} has {rewards} rewards for {samples} samples")]
    UnscoredGroup {
        query_id: String,
        samples: usize,
        rewards: usize,
    },
    #[error("query {0} is not registered with the policy")]
    UnknownQuery(String),
    #[error(transparent)]
    Scoring(#[from] RewardError),
}

/// Group-normalized advantages: each reward minus the group mean, divided by
/// the population standard deviation plus `eta`.
pub fn group_advantages(rewards: &[f64], eta: f64) -> Result<Vec<f64>, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = variance.sqrt() + eta;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// The per-sample clipped surrogate: the minimum of the raw importance-ratio
/// term and the term with the ratio clamped to `[1 - epsilon, 1 + epsilon]`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - max - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Value of the clipped surrogate for one sample, as a function of the new
/// logits. `old_logits` fixes the denominator of the importance ratio.
pub fn surrogate_value(
    new_logits: &[f64],
    old_logits: &[f64],
    candidate: usize,
    advantage: f64,
    epsilon: f64,
) -> f64 {
    let ratio = (log_softmax(new_logits)[candidate] - log_softmax(old_logits)[candidate]).exp();
    clipped_term(ratio, advantage, epsilon)
}

/// Gradient of [`surrogate_value`] with respect to `new_logits`, plus a flag
/// for whether the clipped branch was active. When the clamped term is
/// strictly smaller the objective is locally constant in the logits, so the
/// gradient is zero.
pub fn surrogate_gradient(
    new_logits: &[f64],
    old_logits: &[f64],
    candidate: usize,
    advantage: f64,
    epsilon: f64,
) -> (Vec<f64>, bool) {
    let ratio = (log_softmax(new_logits)[candidate] - log_softmax(old_logits)[candidate]).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if clipped < unclipped {
        return (vec![0.0; new_logits.len()], true);
    }
    let probs = softmax(new_logits);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let indicator = if j == candidate { 1.0 } else { 0.0 };
            advantage * ratio * (indicator - p)
        })
        .collect();
    (grad, false)
}

/// A tabular softmax policy: one logit vector per registered query.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    logits: IndexMap<String, Vec<f64>>,
    pub learning_rate: f64,
    pub step: usize,
}

impl CategoricalPolicy {
    pub fn new(learning_rate: f64) -> Self {
        CategoricalPolicy {
            logits: IndexMap::new(),
            learning_rate,
            step: 0,
        }
    }

    /// Adds a query with `candidates` options and uniform initial logits.
    /// Re-registering a query resets it.
    ///
    /// Panics if `candidates < 2`: a slate with fewer options has nothing to
    /// optimize.
    pub fn register(&mut self, query_id: impl Into<String>, candidates: usize) {
        assert!(candidates >= 2, "a candidate slate needs at least 2 entries");
        self.logits.insert(query_id.into(), vec![0.0; candidates]);
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> + '_ {
        self.logits.keys().map(String::as_str)
    }

    pub fn logits(&self, query_id: &str) -> Option<&[f64]> {
        self.logits.get(query_id).map(Vec::as_slice)
    }

    /// Replaces the logits of a registered query.
    ///
    /// Panics if the new vector's length does not match the registered slate.
    pub fn set_logits(&mut self, query_id: &str, logits: Vec<f64>) -> Result<(), GrpoError> {
        let slot = self
            .logits
            .get_mut(query_id)
            .ok_or_else(|| GrpoError::UnknownQuery(query_id.to_string()))?;
        assert_eq!(slot.len(), logits.len(), "logit vector changes slate size");
        *slot = logits;
        Ok(())
    }

    pub fn probabilities(&self, query_id: &str) -> Result<Vec<f64>, GrpoError> {
        self.logits
            .get(query_id)
            .map(|l| softmax(l))
            .ok_or_else(|| GrpoError::UnknownQuery(query_id.to_string()))
    }

    /// Log-probability of one candidate under the current softmax.
    ///
    /// Panics if `candidate` is outside the registered slate.
    pub fn log_prob(&self, query_id: &str, candidate: usize) -> Result<f64, GrpoError> {
        self.logits
            .get(query_id)
            .map(|l| log_softmax(l)[candidate])
            .ok_or_else(|| GrpoError::UnknownQuery(query_id.to_string()))
    }

    /// Index of the highest-logit candidate.
    pub fn argmax(&self, query_id: &str) -> Result<usize, GrpoError> {
        let logits = self
            .logits
            .get(query_id)
            .ok_or_else(|| GrpoError::UnknownQuery(query_id.to_string()))?;
        let mut best = 0;
        for (i, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Draws one candidate index at temperature 1 by inverting the softmax
    /// CDF on a uniform variate.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        query_id: &str,
        rng: &mut R,
    ) -> Result<usize, GrpoError> {
        let probs = self.probabilities(query_id)?;
        let u: f64 = rng.gen();
        let mut cumulative = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return Ok(i);
            }
        }
        Ok(probs.len() - 1)
    }
}

/// One query's scored rollouts for a single optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query_id: String,
    pub annotation: TurnAnnotation,
    /// `(output_text, candidate_index)` per sample.
    pub samples: Vec<(String, usize)>,
    /// Final rewards, parallel to `samples`.
    pub rewards: Vec<f64>,
}

/// Aggregates over all samples seen by one [`grpo_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// Fraction of samples whose surrogate took the clipped branch.
    pub clipped_frac: f64,
}

/// One optimization step over a batch of scored groups.
///
/// The policy is snapshotted on entry; mini-batches of [`MINI_BATCH_GROUPS`]
/// groups are then processed in order, each applying one averaged ascent
/// update with importance ratios measured against the snapshot. Ratios are
/// exactly 1 in the first mini-batch and drift only for queries that appear
/// in more than one mini-batch.
///
/// Panics if `groups` is empty or a sample's candidate index is outside the
/// query's registered slate.
pub fn grpo_step(
    policy: &mut CategoricalPolicy,
    groups: &[RolloutGroup],
    cfg: &RewardConfig,
) -> Result<UpdateStats, GrpoError> {
    assert!(!groups.is_empty(), "an optimization step needs groups");
    for group in groups {
        let slate = policy
            .logits
            .get(&group.query_id)
            .ok_or_else(|| GrpoError::UnknownQuery(group.query_id.clone()))?
            .len();
        if group.rewards.len() != group.samples.len() {
            return Err(GrpoError::UnscoredGroup {
                query_id: group.query_id.clone(),
                samples: group.samples.len(),
                rewards: group.rewards.len(),
            });
        }
        if group.samples.len() < 2 {
            return Err(GrpoError::GroupTooSmall(group.samples.len()));
        }
        for &(_, candidate) in &group.samples {
            assert!(
                candidate < slate,
                "candidate {candidate} outside the {slate}-candidate slate of {}",
                group.query_id
            );
        }
    }

    let snapshot = policy.logits.clone();
    let mut total_samples = 0usize;
    let mut clipped_samples = 0usize;
    let mut reward_sum = 0.0;
    let mut abs_advantage_sum = 0.0;

    for chunk in groups.chunks(MINI_BATCH_GROUPS) {
        let mut gradients: IndexMap<&str, Vec<f64>> = IndexMap::new();
        let mut chunk_samples = 0usize;
        for group in chunk {
            let advantages = group_advantages(&group.rewards, cfg.eta)?;
            let current = policy.logits[&group.query_id].clone();
            let old = &snapshot[&group.query_id];
            for (i, &(_, candidate)) in group.samples.iter().enumerate() {
                let (grad, was_clipped) =
                    surrogate_gradient(&current, old, candidate, advantages[i], cfg.clip_epsilon);
                if was_clipped {
                    clipped_samples += 1;
                }
                let acc = gradients
                    .entry(group.query_id.as_str())
                    .or_insert_with(|| vec![0.0; grad.len()]);
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += g;
                }
                reward_sum += group.rewards[i];
                abs_advantage_sum += advantages[i].abs();
                chunk_samples += 1;
                total_samples += 1;
            }
        }
        let scale = policy.learning_rate / chunk_samples as f64;
        for (query_id, grad) in gradients {
            let logits = policy.logits.get_mut(query_id).expect("validated above");
            for (l, g) in logits.iter_mut().zip(grad) {
                *l += scale * g;
            }
        }
    }

    policy.step += 1;
    Ok(UpdateStats {
        mean_reward: reward_sum / total_samples as f64,
        mean_abs_advantage: abs_advantage_sum / total_samples as f64,
        clipped_frac: clipped_samples as f64 / total_samples as f64,
    })
}

/// Per-step means over every sample drawn during that step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// 1-based step number.
    pub step: usize,
    pub mean_format: f64,
    pub mean_correct: f64,
    pub mean_length: f64,
    pub mean_final: f64,
    pub clipped_frac: f64,
    pub scale_format_hi: f64,
    pub scale_correct_hi: f64,
    /// Mean thinking length in Unicode scalar values. Not part of the CSV.
    pub mean_think_chars: f64,
    /// Mean correctness under each shadow config from
    /// [`TrainOptions::shadow_configs`], scored on the same samples. Not part
    /// of the CSV.
    pub shadow_mean_correct: Vec<f64>,
}

/// The full training trajectory, one [`StepStats`] per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub steps: Vec<StepStats>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str =
        "step,mean_format,mean_correct,mean_length,mean_final,clipped_frac,scale_format_hi,scale_correct_hi";

    pub fn write_csv<W: io::Write>(&self, writer: &mut W) -> io::Result<()> {
        writeln!(writer, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            writeln!(
                writer,
                "{},{},{},{},{},{},{},{}",
                s.step,
                s.mean_format,
                s.mean_correct,
                s.mean_length,
                s.mean_final,
                s.clipped_frac,
                s.scale_format_hi,
                s.scale_correct_hi
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

/// Knobs for [`train_with_options`] beyond the required parameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub learning_rate: f64,
    /// Queries sampled per step; capped at the environment size.
    pub batch_queries: usize,
    /// Extra configs whose correctness is evaluated on the same sampled
    /// candidates each step and reported in [`StepStats::shadow_mean_correct`].
    /// They do not influence the update.
    pub shadow_configs: Vec<RewardConfig>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.5,
            batch_queries: 64,
            shadow_configs: Vec::new(),
        }
    }
}

/// A finished run: the per-step log and the policy it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub policy: CategoricalPolicy,
}

// Candidate slates are fixed, and only the scales and the length schedule
// depend on the step, so each candidate is scored once up front and per-step
// rewards are rebuilt from the cached pieces with the exact arithmetic of
// `score_parsed`.
struct PrescoredCandidate {
    text: String,
    format_pass: bool,
    correct_ratio: f64,
    think_len: usize,
    shadow_ratios: Vec<f64>,
}

impl PrescoredCandidate {
    fn build(
        text: &str,
        annotation: &TurnAnnotation,
        cfg: &RewardConfig,
        shadows: &[RewardConfig],
    ) -> Result<Self, RewardError> {
        let out = parse_output(text);
        let trace = best_matching(&annotation.expected_calls, &out.tool_calls, cfg)?;
        let mut shadow_ratios = Vec::with_capacity(shadows.len());
        for shadow in shadows {
            let shadow_trace = best_matching(&annotation.expected_calls, &out.tool_calls, shadow)?;
            shadow_ratios.push(shadow_trace.total / shadow_trace.max_total);
        }
        Ok(PrescoredCandidate {
            text: text.to_string(),
            format_pass: format_reward(&out, annotation),
            correct_ratio: trace.total / trace.max_total,
            think_len: think_length(&out, LengthUnit::Scalars),
            shadow_ratios,
        })
    }

    /// `(format, correctness, length, final)` at `step`, matching
    /// `score_parsed` bit for bit.
    fn reward_at(&self, cfg: &RewardConfig, step: usize) -> (f64, f64, f64, f64) {
        let scales = scales_at(cfg, step);
        let format = scales.format_value(self.format_pass);
        let correctness = scales.correctness_value(self.correct_ratio);
        let length = length_reward_for_len(self.think_len, cfg, step);
        (format, correctness, length, format + correctness + length)
    }
}

/// Runs `steps` optimization steps against the environment and returns the
/// per-step log. See [`train_with_options`] for the extended form.
pub fn train(
    env: &SyntheticEnv,
    cfg: &RewardConfig,
    steps: usize,
    group_size: usize,
    seed: u64,
) -> Result<TrainingLog, GrpoError> {
    train_with_options(env, cfg, steps, group_size, seed, &TrainOptions::default())
        .map(|outcome| outcome.log)
}

/// [`train`] with explicit [`TrainOptions`], also returning the final policy.
///
/// Each step shuffles the task order, takes up to `batch_queries` tasks,
/// draws `group_size` candidates per task from the policy, scores them with
/// the schedule at the current 1-based step, and applies one [`grpo_step`].
/// The run is fully determined by `seed`.
///
/// Panics if `steps` is 0 or the environment has no tasks.
pub fn train_with_options(
    env: &SyntheticEnv,
    cfg: &RewardConfig,
    steps: usize,
    group_size: usize,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainOutcome, GrpoError> {
    assert!(steps >= 1, "training needs at least one step");
    assert!(!env.tasks.is_empty(), "training needs at least one task");
    if group_size < 2 {
        return Err(GrpoError::GroupTooSmall(group_size));
    }

    let mut prescored: Vec<Vec<PrescoredCandidate>> = Vec::with_capacity(env.tasks.len());
    for task in &env.tasks {
        let mut slate = Vec::with_capacity(task.candidates.len());
        for candidate in &task.candidates {
            slate.push(PrescoredCandidate::build(
                &candidate.text,
                &task.annotation,
                cfg,
                &options.shadow_configs,
            )?);
        }
        prescored.push(slate);
    }

    let mut policy = CategoricalPolicy::new(options.learning_rate);
    for task in &env.tasks {
        policy.register(&task.query_id, task.candidates.len());
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut log = TrainingLog::default();
    let shadow_count = options.shadow_configs.len();

    for step in 1..=steps {
        let mut order: Vec<usize> = (0..env.tasks.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(options.batch_queries.min(env.tasks.len()));

        let mut groups = Vec::with_capacity(order.len());
        let mut samples_seen = 0usize;
        let mut format_sum = 0.0;
        let mut correct_sum = 0.0;
        let mut length_sum = 0.0;
        let mut final_sum = 0.0;
        let mut think_sum = 0.0;
        let mut shadow_sums = vec![0.0; shadow_count];
        let shadow_scales: Vec<_> = options
            .shadow_configs
            .iter()
            .map(|shadow| scales_at(shadow, step))
            .collect();

        for &task_index in &order {
            let task = &env.tasks[task_index];
            let mut samples = Vec::with_capacity(group_size);
            let mut rewards = Vec::with_capacity(group_size);
            for _ in 0..group_size {
                let candidate = policy.sample(&task.query_id, &mut rng)?;
                let scored = &prescored[task_index][candidate];
                let (format, correctness, length, total) = scored.reward_at(cfg, step);
                format_sum += format;
                correct_sum += correctness;
                length_sum += length;
                final_sum += total;
                think_sum += scored.think_len as f64;
                for (j, ratio) in scored.shadow_ratios.iter().enumerate() {
                    shadow_sums[j] += shadow_scales[j].correctness_value(*ratio);
                }
                samples_seen += 1;
                samples.push((scored.text.clone(), candidate));
                rewards.push(total);
            }
            groups.push(RolloutGroup {
                query_id: task.query_id.clone(),
                annotation: task.annotation.clone(),
                samples,
                rewards,
            });
        }

        let stats = grpo_step(&mut policy, &groups, cfg)?;
        let scales = scales_at(cfg, step);
        let n = samples_seen as f64;
        log.steps.push(StepStats {
            step,
            mean_format: format_sum / n,
            mean_correct: correct_sum / n,
            mean_length: length_sum / n,
            mean_final: final_sum / n,
            clipped_frac: stats.clipped_frac,
            scale_format_hi: scales.format_hi,
            scale_correct_hi: scales.correct_hi,
            mean_think_chars: think_sum / n,
            shadow_mean_correct: shadow_sums.iter().map(|s| s / n).collect(),
        });
    }

    Ok(TrainOutcome { log, policy })
}
