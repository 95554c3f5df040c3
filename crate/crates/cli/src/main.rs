//! Command-line front end for the reward sandbox.
//!
//! Four subcommands: `score` evaluates a JSONL file of sample records against
//! a reward config, `gen` emits synthetic records plus a candidate sidecar,
//! `train` runs the optimization loop and writes its CSV log, and `ablate`
//! sweeps the reward variants with a shared seed. Diagnostics go to stderr;
//! data artifacts go to files and stdout.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use toolgym_core::reward::{Granularity, LengthMode, RewardBreakdown, ScaleMode};
use toolgym_core::synth::{gen_task, Difficulty, SyntheticEnv, SyntheticTask, DIFFICULTIES};
use toolgym_core::{
    final_reward, gen_env, train, train_with_options, DialogueHistory, RewardConfig, ToolSpec,
    TrainOptions, TrainingLog, TurnAnnotation,
};

/// Per-task seed splitting, same scheme as the environment generator.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Parser)]
#[command(name = "toolgym", version, about = "Reward sandbox for tool-calling assistants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a JSONL file of sample records and write per-record breakdowns.
    Score {
        /// JSONL file of sample records.
        #[arg(long)]
        input: PathBuf,
        /// Reward config in TOML form; unknown keys are rejected.
        #[arg(long)]
        config: PathBuf,
        /// Output JSONL path for breakdowns plus a trailing aggregate line.
        #[arg(long)]
        out: PathBuf,
        /// Training step whose reward scales apply.
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Generate synthetic sample records plus an all-candidates sidecar.
    Gen {
        /// Number of records.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// single_call, multi_call, response_only, masked_names, or mixed.
        #[arg(long, default_value = "mixed")]
        difficulty: String,
        /// Output JSONL path; the sidecar lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on synthetic tasks and write the per-step CSV log.
    Train {
        /// Reward config in TOML form.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        /// Samples drawn per query per step.
        #[arg(long, default_value_t = 4)]
        group_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out_csv: PathBuf,
        /// Task set as JSONL (the `gen` sidecar format); defaults to a
        /// built-in 64-task environment derived from the seed.
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Train every reward variant with a shared seed and emit curve CSVs.
    Ablate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// One scorable rollout: the context it was produced in, the raw model text,
/// and the annotation to score against.
#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    tools: Vec<ToolSpec>,
    history: DialogueHistory,
    output: String,
    ground_truth: TurnAnnotation,
}

#[derive(Serialize)]
struct ScoredLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    breakdown: &'a RewardBreakdown,
}

/// Trailing summary line of a score file. Means cover scored records only.
#[derive(Debug, Serialize, Deserialize)]
struct AggregateLine {
    count: usize,
    malformed: usize,
    mean_format: f64,
    mean_correct: f64,
    mean_final: f64,
}

/// A record either scores to (id, breakdown) or is skipped with a diagnostic.
type ScoreOutcome = Result<(String, RewardBreakdown), String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score {
            input,
            config,
            out,
            step,
        } => cmd_score(&input, &config, &out, step),
        Command::Gen {
            n,
            seed,
            difficulty,
            out,
        } => cmd_gen(n, seed, &difficulty, &out),
        Command::Train {
            config,
            steps,
            group_size,
            seed,
            out_csv,
            tasks,
        } => cmd_train(&config, steps, group_size, seed, &out_csv, tasks.as_deref()),
        Command::Ablate { seed, out_dir } => cmd_ablate(seed, &out_dir),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<RewardConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RewardConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    cfg.validate()
        .with_context(|| format!("validating config {}", path.display()))?;
    Ok(cfg)
}

fn cmd_score(input: &Path, config: &Path, out: &Path, step: usize) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let text = fs::read_to_string(input)
        .with_context(|| format!("reading input {}", input.display()))?;

    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut records: Vec<(usize, Result<SampleRecord, String>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let parsed = serde_json::from_str::<SampleRecord>(line)
            .map_err(|e| format!("line {line_no}: {e}"))
            .and_then(|record| {
                if seen_ids.insert(record.id.clone()) {
                    Ok(record)
                } else {
                    Err(format!("line {line_no}: duplicate id {}", record.id))
                }
            });
        records.push((line_no, parsed));
    }

    let scored: Vec<(usize, ScoreOutcome)> = records
        .into_par_iter()
        .map(|(line_no, parsed)| {
            let outcome = parsed.and_then(|record| {
                final_reward(&record.output, &record.ground_truth, &cfg, step)
                    .map(|breakdown| (record.id, breakdown))
                    .map_err(|e| format!("line {line_no}: {e}"))
            });
            (line_no, outcome)
        })
        .collect();

    let mut writer = BufWriter::new(
        File::create(out).with_context(|| format!("creating {}", out.display()))?,
    );
    let mut diagnostics = Vec::new();
    let mut count = 0usize;
    let mut format_sum = 0.0;
    let mut correct_sum = 0.0;
    let mut final_sum = 0.0;
    for (_, outcome) in &scored {
        match outcome {
            Ok((id, breakdown)) => {
                let line = serde_json::to_string(&ScoredLine { id, breakdown })?;
                writeln!(writer, "{line}")?;
                count += 1;
                format_sum += breakdown.format;
                correct_sum += breakdown.correctness;
                final_sum += breakdown.total;
            }
            Err(message) => diagnostics.push(message.clone()),
        }
    }
    let n = count.max(1) as f64;
    let aggregate = AggregateLine {
        count,
        malformed: diagnostics.len(),
        mean_format: format_sum / n,
        mean_correct: correct_sum / n,
        mean_final: final_sum / n,
    };
    let aggregate_line = serde_json::to_string(&aggregate)?;
    writeln!(writer, "{aggregate_line}")?;
    writer.flush()?;
    println!("{aggregate_line}");

    if diagnostics.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for message in &diagnostics {
            eprintln!("skipped {message}");
        }
        Ok(ExitCode::from(2))
    }
}

fn parse_difficulties(name: &str) -> Result<Vec<Difficulty>> {
    if name == "mixed" {
        return Ok(DIFFICULTIES.to_vec());
    }
    for d in DIFFICULTIES {
        if d.to_string() == name {
            return Ok(vec![d]);
        }
    }
    bail!("unknown difficulty {name}; expected mixed or one of single_call, multi_call, response_only, masked_names");
}

fn sidecar_path(out: &Path) -> PathBuf {
    match out.extension() {
        Some(ext) => out.with_extension(format!("candidates.{}", ext.to_string_lossy())),
        None => out.with_extension("candidates"),
    }
}

fn cmd_gen(n: usize, seed: u64, difficulty: &str, out: &Path) -> Result<ExitCode> {
    ensure!(n >= 1, "--n must be at least 1");
    let rotation = parse_difficulties(difficulty)?;

    let mut records = BufWriter::new(
        File::create(out).with_context(|| format!("creating {}", out.display()))?,
    );
    let sidecar = sidecar_path(out);
    let mut candidates = BufWriter::new(
        File::create(&sidecar).with_context(|| format!("creating {}", sidecar.display()))?,
    );
    for i in 0..n {
        let difficulty = rotation[i % rotation.len()];
        let task_seed = seed ^ SEED_STRIDE.wrapping_mul(i as u64 + 1);
        let mut rng = ChaCha12Rng::seed_from_u64(task_seed);
        let mut task = gen_task(&mut rng, difficulty);
        task.query_id = format!("{difficulty}-{i:03}");
        let record = SampleRecord {
            id: task.query_id.clone(),
            tools: task.tools.clone(),
            history: task.history.clone(),
            output: task.candidates[0].text.clone(),
            ground_truth: task.annotation.clone(),
        };
        writeln!(records, "{}", serde_json::to_string(&record)?)?;
        writeln!(candidates, "{}", serde_json::to_string(&task)?)?;
    }
    records.flush()?;
    candidates.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn load_tasks(path: &Path) -> Result<SyntheticEnv> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading tasks {}", path.display()))?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: SyntheticTask = serde_json::from_str(line)
            .with_context(|| format!("parsing task on line {}", i + 1))?;
        ensure!(
            task.candidates.len() >= 2,
            "task {} has {} candidates; training needs at least 2",
            task.query_id,
            task.candidates.len()
        );
        tasks.push(task);
    }
    ensure!(!tasks.is_empty(), "task file {} is empty", path.display());
    Ok(SyntheticEnv { tasks })
}

fn cmd_train(
    config: &Path,
    steps: usize,
    group_size: usize,
    seed: u64,
    out_csv: &Path,
    tasks: Option<&Path>,
) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    ensure!(steps >= 1, "--steps must be at least 1");
    let env = match tasks {
        Some(path) => load_tasks(path)?,
        None => gen_env(seed, 16),
    };
    let log = train(&env, &cfg, steps, group_size, seed)?;
    write_csv(&log, out_csv)?;
    let last = log.steps.last().expect("at least one step");
    println!(
        "step {}: mean_format {:.4} mean_correct {:.4} mean_length {:.4} mean_final {:.4}",
        last.step, last.mean_format, last.mean_correct, last.mean_length, last.mean_final
    );
    Ok(ExitCode::SUCCESS)
}

fn write_csv(log: &TrainingLog, path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    log.write_csv(&mut writer)?;
    writer.flush()?;
    Ok(())
}

fn variant_configs() -> Vec<(&'static str, RewardConfig)> {
    let base = RewardConfig::default();
    vec![
        ("original", base.clone()),
        (
            "length_fixed",
            RewardConfig {
                length_mode: LengthMode::Fixed,
                ..base.clone()
            },
        ),
        (
            "length_dynamic",
            RewardConfig {
                length_mode: LengthMode::Dynamic,
                ..base.clone()
            },
        ),
        (
            "equal_max",
            RewardConfig {
                scale_mode: ScaleMode::EqualMax,
                ..base.clone()
            },
        ),
        (
            "two_stage",
            RewardConfig {
                scale_mode: ScaleMode::TwoStage,
                ..base.clone()
            },
        ),
        (
            "dynamic_scale",
            RewardConfig {
                scale_mode: ScaleMode::Dynamic,
                ..base.clone()
            },
        ),
        (
            "finegrained",
            RewardConfig {
                granularity: Granularity::Finegrained,
                ..base.clone()
            },
        ),
        (
            "intermediate",
            RewardConfig {
                granularity: Granularity::Intermediate,
                ..base.clone()
            },
        ),
        (
            "coarse",
            RewardConfig {
                granularity: Granularity::Coarse,
                ..base
            },
        ),
    ]
}

fn cmd_ablate(seed: u64, out_dir: &Path) -> Result<ExitCode> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let env = gen_env(seed, 16);
    let steps = 300;
    let group_size = 4;

    let mut summary = String::from(
        "variant,mean_format,mean_correct,mean_length,mean_final,mean_think_step_1,mean_think_step_300\n",
    );
    for (name, cfg) in variant_configs() {
        let log = if name == "original" {
            // The coarse run below resamples under its own policy, so pair
            // coarse scoring with the original run's exact samples here.
            let coarse = RewardConfig {
                granularity: Granularity::Coarse,
                ..RewardConfig::default()
            };
            let options = TrainOptions {
                shadow_configs: vec![coarse],
                ..TrainOptions::default()
            };
            let outcome = train_with_options(&env, &cfg, steps, group_size, seed, &options)?;
            let mut paired = String::from("step,original_mean_correct,coarse_mean_correct\n");
            for s in &outcome.log.steps {
                paired.push_str(&format!(
                    "{},{},{}\n",
                    s.step, s.mean_correct, s.shadow_mean_correct[0]
                ));
            }
            fs::write(out_dir.join("dominance_paired.csv"), paired)?;
            outcome.log
        } else {
            train(&env, &cfg, steps, group_size, seed)?
        };
        write_csv(&log, &out_dir.join(format!("{name}.csv")))?;
        let first = &log.steps[0];
        let last = log.steps.last().expect("at least one step");
        summary.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            last.mean_format,
            last.mean_correct,
            last.mean_length,
            last.mean_final,
            first.mean_think_chars,
            last.mean_think_chars
        ));
    }
    fs::write(out_dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}
