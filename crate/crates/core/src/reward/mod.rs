//! Reward computation for tool-calling rollouts.
//!
//! A rollout earns three additive components:
//!
//! * **format**: a pass/fail gate on the output structure (the right tags,
//!   each exactly once, in canonical order, with no stray text), scaled to the
//!   schedule's format range.
//! * **correctness**: the optimal-assignment match score between predicted and
//!   expected tool calls (see [`matching`]), normalized by the best total the
//!   ground truth allows and affinely mapped onto the schedule's correctness
//!   range. With the default scales a perfect prediction earns exactly the top
//!   of the range and an empty one exactly the bottom.
//! * **length**: an optional bonus for thinking length, capped at 1.
//!
//! Scales may change over training. `scales_at` resolves the active ranges for
//! a given step: a fixed split, a hard two-phase switch, or a linear
//! interpolation in normalized progress. Note the interpolating schedule's
//! format range converges to `[-1, 1]`, not the fixed schedule's `[0, 1]`; the
//! endpoints are intentionally those of the published formulas.

mod matching;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::TurnAnnotation;
use crate::rollout::{parse_output, ParsedOutput, Tag};

pub use matching::{best_matching, pair_score, MatchTrace, MatchedPair, MAX_CALLS};

/// How finely correctness distinguishes partially right predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Name-set Jaccard plus per-pair key Jaccard and value matches.
    #[default]
    Original,
    /// All-or-nothing name set and key sets; value matches still count singly.
    Finegrained,
    /// Name-set Jaccard plus an all-or-nothing indicator per matched call.
    Intermediate,
    /// A single indicator: the predicted call set equals the expected one.
    Coarse,
}

/// Whether and how thinking length is rewarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    #[default]
    Off,
    /// `min(len / target, 1)`.
    Fixed,
    /// `min(len / (target * (1 + p)), 1)` with progress `p`, so the length
    /// needed to saturate grows over training.
    Dynamic,
}

/// How the format and correctness ranges evolve over training steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Format `[0, 1]`, correctness `[-3, 3]`, constant.
    #[default]
    Original,
    /// Format `[0, 1]`, correctness `[-1, 1]`, constant.
    EqualMax,
    /// Early phase format `[0, 1]` / correctness `[-1, 1]`; from the switch
    /// step on, format `[0, 0.5]` / correctness `[-3, 3]`.
    TwoStage,
    /// Linear interpolation in progress `p`: format `[-2 + p, 2 - p]`,
    /// correctness `[-2 - p, 2 + p]`.
    Dynamic,
}

/// Unit in which thinking length is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    /// Unicode scalar values, the default.
    #[default]
    Scalars,
    /// UTF-8 bytes.
    Bytes,
}

/// Everything that shapes reward computation. Deserializes from partial
/// documents; every field has the default shown on [`RewardConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub granularity: Granularity,
    pub length_mode: LengthMode,
    /// Thinking length at which the fixed-mode bonus saturates.
    pub length_target: usize,
    pub scale_mode: ScaleMode,
    /// First step of the late phase under the two-stage schedule.
    pub switch_step: usize,
    /// Step count that normalizes training progress to `[0, 1]`.
    pub total_steps: usize,
    /// Stabilizer added to the advantage denominator.
    pub eta: f64,
    /// Policy-ratio clip radius.
    pub clip_epsilon: f64,
    /// Compare values by their literal JSON spelling instead of canonical
    /// equality (`1` stops matching `1.0`, object key order matters).
    pub strict_string_values: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            granularity: Granularity::Original,
            length_mode: LengthMode::Off,
            length_target: 512,
            scale_mode: ScaleMode::Original,
            switch_step: 30,
            total_steps: 300,
            eta: 1e-6,
            clip_epsilon: 0.2,
            strict_string_values: false,
        }
    }
}

impl RewardConfig {
    /// Rejects configurations that would make scoring or training degenerate.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.length_target == 0 {
            return Err(ConfigError::ZeroLengthTarget);
        }
        if self.total_steps == 0 {
            return Err(ConfigError::ZeroTotalSteps);
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ConfigError::BadEta(self.eta));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(ConfigError::BadClipEpsilon(self.clip_epsilon));
        }
        Ok(())
    }

    /// Training progress `p` for `step`, clamped to `[0, 1]`.
    pub fn progress(&self, step: usize) -> f64 {
        (step as f64 / self.total_steps.max(1) as f64).clamp(0.0, 1.0)
    }
}

/// A [`RewardConfig`] that failed validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("length_target must be positive")]
    ZeroLengthTarget,
    #[error("total_steps must be positive")]
    ZeroTotalSteps,
    #[error("eta must be a positive finite number, got {0}")]
    BadEta(f64),
    #[error("clip_epsilon must lie strictly between 0 and 1, got {0}")]
    BadClipEpsilon(f64),
}

/// Scoring failed for a structural reason, as opposed to scoring low.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("{side} call list has {len} entries, above the supported {MAX_CALLS}")]
    SizeExceeded { side: &'static str, len: usize },
}

/// The active format and correctness ranges at some training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScales {
    pub format_lo: f64,
    pub format_hi: f64,
    pub correct_lo: f64,
    pub correct_hi: f64,
}

impl RewardScales {
    /// Maps the format gate onto the format range.
    pub fn format_value(&self, passed: bool) -> f64 {
        if passed {
            self.format_hi
        } else {
            self.format_lo
        }
    }

    /// Affinely maps a normalized match ratio in `[0, 1]` onto the
    /// correctness range.
    pub fn correctness_value(&self, ratio: f64) -> f64 {
        (self.correct_hi - self.correct_lo) * ratio + self.correct_lo
    }
}

/// Resolves the reward ranges in effect at `step` under the configured
/// schedule. Steps count from 1 during training; step 0 is valid and scores
/// with the schedule's initial ranges.
pub fn scales_at(cfg: &RewardConfig, step: usize) -> RewardScales {
    match cfg.scale_mode {
        ScaleMode::Original => RewardScales {
            format_lo: 0.0,
            format_hi: 1.0,
            correct_lo: -3.0,
            correct_hi: 3.0,
        },
        ScaleMode::EqualMax => RewardScales {
            format_lo: 0.0,
            format_hi: 1.0,
            correct_lo: -1.0,
            correct_hi: 1.0,
        },
        ScaleMode::TwoStage => {
            if step < cfg.switch_step {
                RewardScales {
                    format_lo: 0.0,
                    format_hi: 1.0,
                    correct_lo: -1.0,
                    correct_hi: 1.0,
                }
            } else {
                RewardScales {
                    format_lo: 0.0,
                    format_hi: 0.5,
                    correct_lo: -3.0,
                    correct_hi: 3.0,
                }
            }
        }
        ScaleMode::Dynamic => {
            let p = cfg.progress(step);
            RewardScales {
                format_lo: -2.0 + p,
                format_hi: 2.0 - p,
                correct_lo: -2.0 - p,
                correct_hi: 2.0 + p,
            }
        }
    }
}

/// The structural gate: passes when the output contains exactly the tags the
/// annotation demands, each once, in canonical order, with nothing outside
/// them. Thinking is always required; the tool call and response tags must be
/// present iff the turn expects calls or a response. Whether call lines inside
/// a present tool block parse is a correctness matter, not a format one.
pub fn format_reward(out: &ParsedOutput, gt: &TurnAnnotation) -> bool {
    out.tags_canonical()
        && out.stray_segments.is_empty()
        && out.contains(Tag::Think)
        && out.contains(Tag::ToolCall) == !gt.expected_calls.is_empty()
        && out.contains(Tag::Response) == gt.response_required
}

/// Length of the thinking text in the requested unit; 0 when absent.
pub fn think_length(out: &ParsedOutput, unit: LengthUnit) -> usize {
    match &out.think {
        None => 0,
        Some(text) => match unit {
            LengthUnit::Scalars => text.chars().count(),
            LengthUnit::Bytes => text.len(),
        },
    }
}

/// Thinking-length bonus at `step`, measured in Unicode scalar values.
pub fn length_reward(out: &ParsedOutput, cfg: &RewardConfig, step: usize) -> f64 {
    length_reward_with_unit(out, cfg, step, LengthUnit::Scalars)
}

/// Thinking-length bonus with an explicit measurement unit.
pub fn length_reward_with_unit(
    out: &ParsedOutput,
    cfg: &RewardConfig,
    step: usize,
    unit: LengthUnit,
) -> f64 {
    length_reward_for_len(think_length(out, unit), cfg, step)
}

/// Thinking-length bonus for an already measured length. The other length
/// functions delegate here, so a cached length reproduces their results
/// exactly.
pub fn length_reward_for_len(len: usize, cfg: &RewardConfig, step: usize) -> f64 {
    let len = len as f64;
    let target = cfg.length_target.max(1) as f64;
    match cfg.length_mode {
        LengthMode::Off => 0.0,
        LengthMode::Fixed => (len / target).min(1.0),
        LengthMode::Dynamic => (len / (target * (1.0 + cfg.progress(step)))).min(1.0),
    }
}

/// Correctness of the predicted calls against the expected ones, mapped onto
/// `scales`, together with the match trace that explains the number.
pub fn correctness_reward(
    out: &ParsedOutput,
    gt: &TurnAnnotation,
    cfg: &RewardConfig,
    scales: &RewardScales,
) -> Result<(f64, MatchTrace), RewardError> {
    let trace = best_matching(&gt.expected_calls, &out.tool_calls, cfg)?;
    let ratio = trace.total / trace.max_total;
    Ok((scales.correctness_value(ratio), trace))
}

/// One fully scored rollout: the three components, their sum, and the scales
/// and match trace that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub correctness: f64,
    pub length: f64,
    #[serde(rename = "final")]
    pub total: f64,
    pub scales: RewardScales,
    pub trace: MatchTrace,
}

/// Scores an already parsed output. Splitting this from [`final_reward`] lets
/// callers that need parse diagnostics parse once.
pub fn score_parsed(
    out: &ParsedOutput,
    gt: &TurnAnnotation,
    cfg: &RewardConfig,
    step: usize,
) -> Result<RewardBreakdown, RewardError> {
    let scales = scales_at(cfg, step);
    let format = scales.format_value(format_reward(out, gt));
    let (correctness, trace) = correctness_reward(out, gt, cfg, &scales)?;
    let length = length_reward(out, cfg, step);
    Ok(RewardBreakdown {
        format,
        correctness,
        length,
        total: format + correctness + length,
        scales,
        trace,
    })
}

/// Parses raw model output and scores it at `step`.
pub fn final_reward(
    output_text: &str,
    gt: &TurnAnnotation,
    cfg: &RewardConfig,
    step: usize,
) -> Result<RewardBreakdown, RewardError> {
    score_parsed(&parse_output(output_text), gt, cfg, step)
}
