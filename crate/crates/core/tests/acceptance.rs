//! End-to-end acceptance checks, one per release criterion. The single test
//! below runs every criterion, prints one PASS/FAIL line each, and fails if
//! any criterion fails. Run with `-- --nocapture` to see the table on a green
//! run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use toolgym_core::reward::{think_length, LengthUnit};
use toolgym_core::synth::oracle_best_matching;
use toolgym_core::value::JsonValue;
use toolgym_core::{
    best_matching, final_reward, gen_env, params_match, parse_output, render_output, scales_at,
    surrogate_gradient, surrogate_value, train, train_with_options, group_advantages,
    Granularity, LengthMode, ParsedOutput, RewardConfig, ScaleMode, ToolCall, TrainOptions,
    TurnAnnotation,
};

const NAMES: [&str; 6] = [
    "get_weather",
    "search_flights",
    "lookup_user",
    "send_message",
    "convert_units",
    "fetch_data",
];
const KEYS: [&str; 8] = [
    "city", "date", "query", "limit", "user_id", "amount", "unit", "flag",
];
const WORDS: [&str; 8] = [
    "check", "the", "available", "options", "before", "deciding", "于是", "結論",
];

fn rand_value(rng: &mut ChaCha12Rng, depth: usize) -> JsonValue {
    let top = if depth == 0 { 5 } else { 7 };
    match rng.gen_range(0..top) {
        0 => JsonValue::Null,
        1 => JsonValue::from(rng.gen::<bool>()),
        2 => JsonValue::from(rng.gen_range(-50i64..500)),
        3 => JsonValue::from(rng.gen_range(-500i64..500) as f64 / 10.0),
        4 => JsonValue::from(["beijing", "tomorrow", "metric", "cheap", "express"][rng.gen_range(0..5)]),
        5 => JsonValue::Array((0..rng.gen_range(0..3)).map(|_| rand_value(rng, depth - 1)).collect()),
        _ => JsonValue::Object(
            (0..rng.gen_range(0..3))
                .map(|i| (format!("k{i}"), rand_value(rng, depth - 1)))
                .collect::<IndexMap<_, _>>(),
        ),
    }
}

fn rand_call(rng: &mut ChaCha12Rng) -> ToolCall {
    let name = NAMES[rng.gen_range(0..NAMES.len())];
    let mut keys = KEYS;
    keys.shuffle(rng);
    let params: IndexMap<String, JsonValue> = keys[..rng.gen_range(0..=3)]
        .iter()
        .map(|k| (k.to_string(), rand_value(rng, 1)))
        .collect();
    ToolCall::new(name, params).expect("pool names are non-empty")
}

fn rand_calls(rng: &mut ChaCha12Rng, lo: usize, hi: usize) -> Vec<ToolCall> {
    (0..rng.gen_range(lo..=hi)).map(|_| rand_call(rng)).collect()
}

fn rand_text(rng: &mut ChaCha12Rng) -> String {
    let n = rng.gen_range(0..24);
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        words.push(WORDS[rng.gen_range(0..WORDS.len())]);
    }
    words.join(" ")
}

fn rand_annotation(rng: &mut ChaCha12Rng) -> TurnAnnotation {
    if rng.gen_range(0..4) == 0 {
        TurnAnnotation::response_only(rand_text(rng))
    } else {
        let required: bool = rng.gen();
        let reference = required.then(|| rand_text(rng));
        TurnAnnotation::new(rand_calls(rng, 1, 3), required, reference)
            .expect("non-empty expected calls")
    }
}

fn canonical_text(
    rng: &mut ChaCha12Rng,
    calls: Vec<ToolCall>,
    with_response: bool,
) -> String {
    let think = Some(rand_text(rng));
    let response = with_response.then(|| rand_text(rng));
    render_output(&ParsedOutput::canonical(think, calls, response)).expect("canonical renders")
}

// ---------------------------------------------------------------------------
// Criterion bodies
// ---------------------------------------------------------------------------

fn reward_bounds() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let cfg = RewardConfig::default();
    let fragments = [
        "<think>",
        "</think>",
        "<tool_call>",
        "</tool_call>",
        "<response>",
        "</response>",
        "{\"name\": \"fetch_data\", \"parameters\": {}}",
        "{\"name\": \"search_flights\", \"parameters\": {\"city\": \"beijing\"}}",
        "{\"name\": broken json",
        "plain prose line",
        "考えてから答える",
        "",
    ];
    let mut attained = [false; 6];
    for i in 0..100_000 {
        let annotation = rand_annotation(&mut rng);
        let text = match i % 5 {
            0 => canonical_text(
                &mut rng,
                annotation.expected_calls.clone(),
                annotation.response_required,
            ),
            1 => String::from("no tags at all, just prose"),
            2 => {
                let calls = rand_calls(&mut rng, 0, 3);
                let with_response = rng.gen();
                canonical_text(&mut rng, calls, with_response)
            }
            _ => {
                let n = rng.gen_range(0..12);
                (0..n)
                    .map(|_| fragments[rng.gen_range(0..fragments.len())])
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        };
        let breakdown = final_reward(&text, &annotation, &cfg, 0).expect("within size bounds");
        assert!(
            breakdown.format == 0.0 || breakdown.format == 1.0,
            "format {} outside {{0, 1}}",
            breakdown.format
        );
        assert!(
            (-3.0..=3.0).contains(&breakdown.correctness),
            "correctness {} outside [-3, 3]",
            breakdown.correctness
        );
        assert!(
            (-3.0..=4.0).contains(&breakdown.total),
            "final {} outside [-3, 4]",
            breakdown.total
        );
        attained[0] |= breakdown.format == 0.0;
        attained[1] |= breakdown.format == 1.0;
        attained[2] |= breakdown.correctness == -3.0;
        attained[3] |= breakdown.correctness == 3.0;
        attained[4] |= breakdown.total == -3.0;
        attained[5] |= breakdown.total == 4.0;
    }
    assert_eq!(attained, [true; 6], "some boundary value never attained");
    assert!(start.elapsed() < Duration::from_secs(30), "took {:?}", start.elapsed());
}

fn matching_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    let granularities = [
        Granularity::Original,
        Granularity::Finegrained,
        Granularity::Intermediate,
        Granularity::Coarse,
    ];
    for _ in 0..10_000 {
        let gt = rand_calls(&mut rng, 0, 4);
        let pred = rand_calls(&mut rng, 0, 4);
        let cfg = RewardConfig {
            granularity: granularities[rng.gen_range(0..granularities.len())],
            strict_string_values: rng.gen(),
            ..RewardConfig::default()
        };
        let trace = best_matching(&gt, &pred, &cfg).expect("within matcher bounds");
        let oracle = oracle_best_matching(&gt, &pred, &cfg).expect("within oracle bounds");
        assert_eq!(trace.total, oracle, "gt {gt:?} pred {pred:?} cfg {cfg:?}");
    }
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
}

fn worked_examples() {
    let cfg = RewardConfig::default();
    let scales = scales_at(&cfg, 0);

    let gt = vec![
        ToolCall::with_params("get_weather", [("city", "Beijing"), ("date", "2024-06-01")])
            .unwrap(),
    ];
    let pred = vec![
        ToolCall::with_params("get_weather", [("city", "Beijing"), ("date", "2024-06-02")])
            .unwrap(),
    ];
    let trace = best_matching(&gt, &pred, &cfg).unwrap();
    assert_eq!(oracle_best_matching(&gt, &pred, &cfg).unwrap(), trace.total);
    assert_eq!(scales.correctness_value(trace.total / trace.max_total), 1.5);

    let gt = vec![
        ToolCall::with_params("search_flights", [("origin", "PEK")]).unwrap(),
        ToolCall::with_params("book_hotel", [("city", "Shanghai")]).unwrap(),
    ];
    let pred = vec![ToolCall::with_params("search_flights", [("origin", "PEK")]).unwrap()];
    let trace = best_matching(&gt, &pred, &cfg).unwrap();
    assert_eq!(oracle_best_matching(&gt, &pred, &cfg).unwrap(), trace.total);
    assert_eq!(scales.correctness_value(trace.total / trace.max_total), 0.0);
}

fn advantage_normalization() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for _ in 0..1_000 {
        let n = rng.gen_range(2..=16);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..4.0)).collect();
        let advantages = group_advantages(&rewards, 1e-6).unwrap();
        let sum: f64 = advantages.iter().sum();
        assert!(sum.abs() <= 1e-9 * n as f64, "sum {sum} for n {n}");
    }
    let advantages = group_advantages(&[4.0, 0.0, 0.0, 0.0], 1e-6).unwrap();
    let expected = [1.73205, -0.57735, -0.57735, -0.57735];
    for (a, e) in advantages.iter().zip(expected) {
        assert!((a - e).abs() <= 1e-4, "advantage {a} vs expected {e}");
    }
}

fn gradient_check() {
    fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - max - lse).collect()
    }

    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let epsilon = 0.2;
    let mut accepted = 0;
    while accepted < 100 {
        let k = rng.gen_range(2..=6);
        let new_logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let old_logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let candidate = rng.gen_range(0..k);
        let advantage: f64 = rng.gen_range(-2.0..2.0);
        if advantage.abs() < 0.05 {
            continue;
        }
        let ratio =
            (log_softmax(&new_logits)[candidate] - log_softmax(&old_logits)[candidate]).exp();
        // Central differences straddle the clip kink, so keep clear of it.
        if (ratio - (1.0 - epsilon)).abs() < 1e-3 || (ratio - (1.0 + epsilon)).abs() < 1e-3 {
            continue;
        }
        let (analytic, _) =
            surrogate_gradient(&new_logits, &old_logits, candidate, advantage, epsilon);
        let h = 1e-5;
        for j in 0..k {
            let mut plus = new_logits.clone();
            plus[j] += h;
            let mut minus = new_logits.clone();
            minus[j] -= h;
            let numeric = (surrogate_value(&plus, &old_logits, candidate, advantage, epsilon)
                - surrogate_value(&minus, &old_logits, candidate, advantage, epsilon))
                / (2.0 * h);
            let scale = analytic[j].abs().max(numeric.abs()).max(1e-3);
            assert!(
                (analytic[j] - numeric).abs() / scale < 1e-5,
                "coordinate {j}: analytic {} vs numeric {numeric}",
                analytic[j]
            );
        }
        accepted += 1;
    }
}

fn sandbox_convergence() {
    let start = Instant::now();
    let env = gen_env(7, 16);
    let cfg = RewardConfig::default();
    let outcome =
        train_with_options(&env, &cfg, 300, 4, 7, &TrainOptions::default()).unwrap();
    let mut matched = 0;
    for task in &env.tasks {
        let best = (0..task.candidates.len())
            .max_by(|&a, &b| {
                let score = |i: usize| {
                    final_reward(&task.candidates[i].text, &task.annotation, &cfg, 300)
                        .unwrap()
                        .total
                };
                score(a).partial_cmp(&score(b)).unwrap()
            })
            .unwrap();
        if outcome.policy.argmax(&task.query_id).unwrap() == best {
            matched += 1;
        }
    }
    assert!(
        matched as f64 >= 0.95 * env.tasks.len() as f64,
        "policy argmax matches the best candidate on only {matched}/{} queries",
        env.tasks.len()
    );
    assert!(start.elapsed() < Duration::from_secs(120), "took {:?}", start.elapsed());
}

fn schedule_fidelity() {
    let two_stage = RewardConfig {
        scale_mode: ScaleMode::TwoStage,
        ..RewardConfig::default()
    };
    let early = scales_at(&two_stage, 29);
    assert_eq!(
        (early.format_lo, early.format_hi, early.correct_lo, early.correct_hi),
        (0.0, 1.0, -1.0, 1.0)
    );
    let late = scales_at(&two_stage, 30);
    assert_eq!(
        (late.format_lo, late.format_hi, late.correct_lo, late.correct_hi),
        (0.0, 0.5, -3.0, 3.0)
    );

    let dynamic = RewardConfig {
        scale_mode: ScaleMode::Dynamic,
        ..RewardConfig::default()
    };
    let first = scales_at(&dynamic, 0);
    assert_eq!(
        (first.format_lo, first.format_hi, first.correct_lo, first.correct_hi),
        (-2.0, 2.0, -2.0, 2.0)
    );
    let last = scales_at(&dynamic, 300);
    assert_eq!(
        (last.format_lo, last.format_hi, last.correct_lo, last.correct_hi),
        (-1.0, 1.0, -3.0, 3.0)
    );
    assert_eq!(scales_at(&dynamic, 900), last, "progress must clamp at 1");
}

fn multiset_equal(a: &[ToolCall], b: &[ToolCall]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    'outer: for g in a {
        for (i, p) in b.iter().enumerate() {
            if !used[i] && g.name.trim() == p.name.trim() && params_match(g, p, false) {
                used[i] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

fn granularity_dominance() {
    let original = RewardConfig::default();
    let coarse = RewardConfig {
        granularity: Granularity::Coarse,
        ..RewardConfig::default()
    };
    let scales = scales_at(&original, 0);
    let mut rng = ChaCha12Rng::seed_from_u64(808);
    let mut sentinel = 0usize;

    for _ in 0..10_000 {
        let gt = rand_calls(&mut rng, 1, 3);
        // Predictions stay related to the ground truth: an exact (shuffled)
        // copy, one structural mutation, or a few value substitutions. Each
        // single mutation leaves some name or parameter overlap, which keeps
        // the equality direction of the check meaningful.
        let mut pred = gt.clone();
        match rng.gen_range(0..10) {
            0..=2 => pred.shuffle(&mut rng),
            3..=6 => loop {
                match rng.gen_range(0..6) {
                    0 => {
                        let i = rng.gen_range(0..pred.len());
                        pred[i].name.push_str("_alt");
                    }
                    1 => {
                        let i = rng.gen_range(0..pred.len());
                        if pred[i].parameters.is_empty() {
                            continue;
                        }
                        let key = pred[i].parameters.keys().next().unwrap().clone();
                        pred[i].parameters.shift_remove(&key);
                    }
                    2 => {
                        sentinel += 1;
                        let i = rng.gen_range(0..pred.len());
                        pred[i]
                            .parameters
                            .insert(format!("zz_added_{sentinel}"), rand_value(&mut rng, 1));
                    }
                    3 => {
                        if pred.len() < 2 {
                            continue;
                        }
                        let i = rng.gen_range(0..pred.len());
                        pred.remove(i);
                    }
                    4 => {
                        let i = rng.gen_range(0..pred.len());
                        pred.push(pred[i].clone());
                    }
                    _ => {
                        sentinel += 1;
                        pred.push(ToolCall::bare(&format!("zz_novel_{sentinel}")).unwrap());
                    }
                }
                break;
            },
            _ => {
                for _ in 0..rng.gen_range(1..=3) {
                    let i = rng.gen_range(0..pred.len());
                    if pred[i].parameters.is_empty() {
                        continue;
                    }
                    let pick = rng.gen_range(0..pred[i].parameters.len());
                    let key = pred[i].parameters.keys().nth(pick).unwrap().clone();
                    sentinel += 1;
                    pred[i]
                        .parameters
                        .insert(key, JsonValue::from(format!("zz_mutated_{sentinel}")));
                }
            }
        }

        let original_trace = best_matching(&gt, &pred, &original).unwrap();
        let coarse_trace = best_matching(&gt, &pred, &coarse).unwrap();
        let original_corr = scales.correctness_value(original_trace.total / original_trace.max_total);
        let coarse_corr = scales.correctness_value(coarse_trace.total / coarse_trace.max_total);
        assert!(
            coarse_corr <= original_corr,
            "coarse {coarse_corr} above original {original_corr} for gt {gt:?} pred {pred:?}"
        );
        assert_eq!(
            coarse_corr == original_corr,
            multiset_equal(&gt, &pred),
            "equality disagrees with multiset comparison for gt {gt:?} pred {pred:?}"
        );
    }
}

fn parser_round_trip() {
    let mut rng = ChaCha12Rng::seed_from_u64(909);
    for _ in 0..10_000 {
        let think = rng.gen::<bool>().then(|| rand_text(&mut rng));
        let calls = rand_calls(&mut rng, 0, 3);
        let response = rng.gen::<bool>().then(|| rand_text(&mut rng));
        let original = ParsedOutput::canonical(think, calls, response);
        let rendered = render_output(&original).expect("canonical renders");
        assert_eq!(parse_output(&rendered), original, "round trip diverged");
    }
    for _ in 0..100_000 {
        let len = rng.gen_range(0..200);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let text = String::from_utf8_lossy(&bytes);
        let parsed = parse_output(&text);
        // Degenerate inputs must still produce a structurally sound value.
        assert!(parsed.tool_calls.len() <= text.len().max(1));
    }
}

fn ablation_directions() {
    let env = gen_env(7, 16);
    let length_cfg = RewardConfig {
        length_mode: LengthMode::Fixed,
        ..RewardConfig::default()
    };
    let log = train(&env, &length_cfg, 300, 4, 7).unwrap();
    let first = log.steps.first().unwrap();
    let last = log.steps.last().unwrap();
    assert!(
        last.mean_think_chars > first.mean_think_chars,
        "mean think length fell from {} to {}",
        first.mean_think_chars,
        last.mean_think_chars
    );

    let coarse = RewardConfig {
        granularity: Granularity::Coarse,
        ..RewardConfig::default()
    };
    let options = TrainOptions {
        shadow_configs: vec![coarse],
        ..TrainOptions::default()
    };
    let outcome =
        train_with_options(&env, &RewardConfig::default(), 300, 4, 7, &options).unwrap();
    for step in &outcome.log.steps {
        assert!(
            step.shadow_mean_correct[0] <= step.mean_correct + 1e-12,
            "step {}: coarse {} above original {}",
            step.step,
            step.shadow_mean_correct[0],
            step.mean_correct
        );
    }
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn()); 10] = [
        ("reward bounds", reward_bounds),
        ("matching oracle equivalence", matching_oracle_equivalence),
        ("worked examples", worked_examples),
        ("advantage normalization", advantage_normalization),
        ("gradient check", gradient_check),
        ("sandbox convergence", sandbox_convergence),
        ("schedule fidelity", schedule_fidelity),
        ("granularity dominance", granularity_dominance),
        ("parser round-trip and totality", parser_round_trip),
        ("ablation direction checks", ablation_directions),
    ];

    let mut failures = Vec::new();
    for (i, (label, body)) in criteria.iter().enumerate() {
        let number = i + 1;
        let start = Instant::now();
        match catch_unwind(AssertUnwindSafe(body)) {
            Ok(()) => println!(
                "ACCEPTANCE {number} ({label}): PASS [{:.2?}]",
                start.elapsed()
            ),
            Err(panic) => {
                let message = panic
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| panic.downcast_ref::<&str>().copied())
                    .unwrap_or("panic without message");
                println!("ACCEPTANCE {number} ({label}): FAIL - {message}");
                failures.push(format!("{number} ({label})"));
            }
        }
    }
    assert!(
        failures.is_empty(),
        "failed acceptance criteria: {}",
        failures.join(", ")
    );
}

// Keep an eye on the length measurement the ablation direction check relies
// on: parsed think text is counted in Unicode scalar values.
#[test]
fn think_length_counts_scalars() {
    let out = parse_output("<think>日本語</think>");
    assert_eq!(think_length(&out, LengthUnit::Scalars), 3);
    assert_eq!(think_length(&out, LengthUnit::Bytes), 9);
}
