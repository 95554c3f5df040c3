//! Reward design sandbox for tool-calling assistants.
//!
//! The crate models one assistant turn end to end: tag-structured output text is
//! parsed into tool calls ([`rollout`]), scored against a ground-truth annotation
//! with decomposed format/correctness/length rewards ([`reward`]), and used to
//! train a per-query categorical policy with group-relative advantage estimation
//! ([`grpo`]) on seeded synthetic tasks ([`synth`]).

pub mod call;
pub mod dialogue;
pub mod grpo;
pub mod reward;
pub mod rollout;
pub mod synth;
pub mod value;

pub use call::{canonicalize, params_match, CallError, ParamSpec, ParamType, ToolCall, ToolSpec};
pub use grpo::{
    clipped_term, group_advantages, grpo_step, surrogate_gradient, surrogate_value, train,
    train_with_options, CategoricalPolicy, GrpoError, RolloutGroup, StepStats, TrainOptions,
    TrainOutcome, TrainingLog, UpdateStats, MINI_BATCH_GROUPS,
};
pub use reward::{
    best_matching, correctness_reward, final_reward, format_reward, length_reward, pair_score,
    scales_at, score_parsed, ConfigError, Granularity, LengthMode, LengthUnit, MatchTrace,
    MatchedPair, RewardBreakdown, RewardConfig, RewardError, RewardScales, ScaleMode,
};
pub use dialogue::{DialogueError, DialogueEvent, DialogueHistory, TurnAnnotation};
pub use rollout::{parse_output, render_history, render_output, ParsedOutput, RenderError, Tag};
pub use synth::{
    corrupt, gen_env, gen_task, oracle_best_matching, Candidate, CandidateLabel, CorruptionMode,
    Difficulty, SynthError, SyntheticEnv, SyntheticTask,
};
pub use value::{value_equal, value_equal_strict, JsonValue};
