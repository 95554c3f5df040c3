//! Seeded synthetic tool-calling tasks, corrupted candidate outputs, and the
//! brute-force matching oracle.
//!
//! Every task is generated from an owned RNG, so the whole environment is a
//! pure function of its seed and reruns are byte-identical. A task carries a
//! fixed slate of candidate outputs: one perfect rendering of the annotation
//! and a cycle of corruptions, each damaging exactly one aspect of the output.
//! Corruption modes map one-to-one onto reward components, so each component
//! is exercised by at least one candidate, and every corruption scores
//! strictly below the perfect candidate under the default reward config.
//!
//! [`oracle_best_matching`] re-scores call alignments by exhaustive
//! enumeration of injective assignments. It shares only the value-equality
//! primitive with the production matcher and exists to check it.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::{ParamSpec, ParamType, ToolCall, ToolSpec};
use crate::dialogue::{DialogueHistory, TurnAnnotation};
use crate::reward::{Granularity, RewardConfig};
use crate::rollout::{render_output, ParsedOutput, Tag};
use crate::value::{values_match, JsonValue};

/// Candidate outputs per task: one perfect plus seven corruptions.
pub const CANDIDATES_PER_TASK: usize = 8;

/// Largest smaller-side call count the exhaustive oracle will enumerate.
pub const ORACLE_MAX_CALLS: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("oracle enumeration needs one side with at most {ORACLE_MAX_CALLS} calls, got {len}")]
    SizeExceeded { len: usize },
    #[error("corruption {mode} does not apply to this output")]
    Inapplicable { mode: CorruptionMode },
}

/// Task flavors, each stressing a different tool-use skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// Exactly one expected call.
    SingleCall,
    /// Two or three expected calls in one turn.
    MultiCall,
    /// No calls; the right move is answering directly.
    ResponseOnly,
    /// Calls against tools whose names are opaque random identifiers.
    MaskedNames,
}

pub const DIFFICULTIES: [Difficulty; 4] = [
    Difficulty::SingleCall,
    Difficulty::MultiCall,
    Difficulty::ResponseOnly,
    Difficulty::MaskedNames,
];

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Difficulty::SingleCall => "single_call",
            Difficulty::MultiCall => "multi_call",
            Difficulty::ResponseOnly => "response_only",
            Difficulty::MaskedNames => "masked_names",
        };
        f.write_str(name)
    }
}

/// One deliberate defect applied to a perfect output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Rename one call to an identifier outside the expected name set.
    WrongName,
    /// Remove one parameter from a parameterized call.
    DropParam,
    /// Replace one parameter value with a non-matching one.
    WrongValue,
    /// Append a call to a tool nobody asked for.
    ExtraCall,
    /// Remove one expected call, keeping the block itself.
    DropCall,
    /// Break the tag structure without touching the calls.
    FormatBreak,
    /// Add a response block to a turn that must not respond.
    SpuriousResponse,
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CorruptionMode::WrongName => "wrong_name",
            CorruptionMode::DropParam => "drop_param",
            CorruptionMode::WrongValue => "wrong_value",
            CorruptionMode::ExtraCall => "extra_call",
            CorruptionMode::DropCall => "drop_call",
            CorruptionMode::FormatBreak => "format_break",
            CorruptionMode::SpuriousResponse => "spurious_response",
        };
        f.write_str(name)
    }
}

/// What a candidate output is known to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateLabel {
    Perfect,
    WrongName,
    DropParam,
    WrongValue,
    ExtraCall,
    DropCall,
    FormatBreak,
    SpuriousResponse,
}

impl From<CorruptionMode> for CandidateLabel {
    fn from(mode: CorruptionMode) -> Self {
        match mode {
            CorruptionMode::WrongName => CandidateLabel::WrongName,
            CorruptionMode::DropParam => CandidateLabel::DropParam,
            CorruptionMode::WrongValue => CandidateLabel::WrongValue,
            CorruptionMode::ExtraCall => CandidateLabel::ExtraCall,
            CorruptionMode::DropCall => CandidateLabel::DropCall,
            CorruptionMode::FormatBreak => CandidateLabel::FormatBreak,
            CorruptionMode::SpuriousResponse => CandidateLabel::SpuriousResponse,
        }
    }
}

/// One candidate output with its known defect (or lack of one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub label: CandidateLabel,
}

/// A generated single-turn task: the toolbox, the opening dialogue, the
/// expected behavior, and a fixed slate of candidate outputs. The candidate
/// at index 0 is always the perfect one and no other candidate carries that
/// label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub query_id: String,
    pub tools: Vec<ToolSpec>,
    pub history: DialogueHistory,
    pub annotation: TurnAnnotation,
    pub candidates: Vec<Candidate>,
}

/// A fixed roster of tasks to train against.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv {
    pub tasks: Vec<SyntheticTask>,
}

// ---------------------------------------------------------------------------
// Brute-force matching oracle
// ---------------------------------------------------------------------------

fn oracle_ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn oracle_indicator(cond: bool) -> BigRational {
    if cond {
        BigRational::one()
    } else {
        BigRational::zero()
    }
}

fn oracle_jaccard(a: &HashSet<&str>, b: &HashSet<&str>) -> BigRational {
    if a.is_empty() && b.is_empty() {
        return BigRational::one();
    }
    let shared = a.iter().filter(|x| b.contains(**x)).count();
    let union = a.len() + b.len() - shared;
    oracle_ratio(shared, union)
}

fn oracle_params_equal(g: &ToolCall, p: &ToolCall, strict: bool) -> bool {
    if g.parameters.len() != p.parameters.len() {
        return false;
    }
    for (k, gv) in &g.parameters {
        match p.parameters.get(k.as_str()) {
            Some(pv) if values_match(gv, pv, strict) => {}
            _ => return false,
        }
    }
    true
}

fn oracle_pair_score(
    g: &ToolCall,
    p: &ToolCall,
    granularity: Granularity,
    strict: bool,
) -> BigRational {
    let g_keys: HashSet<&str> = g.parameters.keys().map(String::as_str).collect();
    let p_keys: HashSet<&str> = p.parameters.keys().map(String::as_str).collect();
    let matched_values = g
        .parameters
        .iter()
        .filter(|(k, gv)| {
            p.parameters
                .get(k.as_str())
                .is_some_and(|pv| values_match(gv, pv, strict))
        })
        .count();
    match granularity {
        Granularity::Original => {
            oracle_jaccard(&g_keys, &p_keys) + oracle_ratio(matched_values, 1)
        }
        Granularity::Finegrained => {
            oracle_indicator(g_keys == p_keys) + oracle_ratio(matched_values, 1)
        }
        Granularity::Intermediate => oracle_indicator(oracle_params_equal(g, p, strict)),
        Granularity::Coarse => oracle_indicator(
            g.name.trim() == p.name.trim() && oracle_params_equal(g, p, strict),
        ),
    }
}

fn oracle_enumerate(
    matrix: &[Vec<BigRational>],
    assign_gt_side: bool,
    pos: usize,
    used: &mut [bool],
    acc: &BigRational,
    best: &mut BigRational,
) {
    let k = if assign_gt_side {
        matrix.len()
    } else {
        matrix.first().map_or(0, Vec::len)
    };
    if pos == k {
        if *acc > *best {
            *best = acc.clone();
        }
        return;
    }
    for partner in 0..used.len() {
        if used[partner] {
            continue;
        }
        used[partner] = true;
        let cell = if assign_gt_side {
            &matrix[pos][partner]
        } else {
            &matrix[partner][pos]
        };
        let next = acc + cell;
        oracle_enumerate(matrix, assign_gt_side, pos + 1, used, &next, best);
        used[partner] = false;
    }
}

/// Reference matcher: the maximum over every injective assignment between the
/// call lists, found by exhaustive enumeration of the smaller side, plus the
/// name score. Independent of the production matcher; agrees with its `total`
/// bit for bit because both reduce the same rational before converting.
pub fn oracle_best_matching(
    gt: &[ToolCall],
    preds: &[ToolCall],
    cfg: &RewardConfig,
) -> Result<f64, SynthError> {
    let k = gt.len().min(preds.len());
    if k > ORACLE_MAX_CALLS {
        return Err(SynthError::SizeExceeded { len: k });
    }
    let strict = cfg.strict_string_values;

    if cfg.granularity == Granularity::Coarse {
        let mut taken = vec![false; preds.len()];
        let mut all_found = gt.len() == preds.len();
        'outer: for g in gt {
            if !all_found {
                break;
            }
            for (i, p) in preds.iter().enumerate() {
                if !taken[i]
                    && g.name.trim() == p.name.trim()
                    && oracle_params_equal(g, p, strict)
                {
                    taken[i] = true;
                    continue 'outer;
                }
            }
            all_found = false;
        }
        return Ok(if all_found { 1.0 } else { 0.0 });
    }

    let gt_names: HashSet<&str> = gt.iter().map(|c| c.name.trim()).collect();
    let pred_names: HashSet<&str> = preds.iter().map(|c| c.name.trim()).collect();
    let name = match cfg.granularity {
        Granularity::Finegrained => oracle_indicator(gt_names == pred_names),
        _ => oracle_jaccard(&gt_names, &pred_names),
    };

    let matrix: Vec<Vec<BigRational>> = gt
        .iter()
        .map(|g| {
            preds
                .iter()
                .map(|p| oracle_pair_score(g, p, cfg.granularity, strict))
                .collect()
        })
        .collect();

    let mut best = BigRational::zero();
    if k > 0 {
        let assign_gt_side = gt.len() <= preds.len();
        let larger = gt.len().max(preds.len());
        let mut used = vec![false; larger];
        oracle_enumerate(
            &matrix,
            assign_gt_side,
            0,
            &mut used,
            &BigRational::zero(),
            &mut best,
        );
    }

    Ok((name + best).to_f64().expect("oracle total converts to f64"))
}

// ---------------------------------------------------------------------------
// Task generation
// ---------------------------------------------------------------------------

const VERBS: [&str; 8] = [
    "get", "list", "search", "create", "update", "cancel", "fetch", "check",
];
const NOUNS: [&str; 10] = [
    "weather", "flights", "hotels", "contacts", "invoices", "orders", "tickets", "routes",
    "events", "stocks",
];
const PARAM_NAMES: [&str; 12] = [
    "city", "unit", "query", "limit", "date", "id", "amount", "currency", "flag", "tags",
    "options", "label",
];
const STRING_VALUES: [&str; 10] = [
    "SF", "NYC", "Berlin", "Tokyo", "alpha", "beta", "west", "east", "primary", "backup",
];
const OBJECT_KEYS: [&str; 4] = ["k1", "k2", "mode", "depth"];
const FILLER: [&str; 8] = [
    "The request names a concrete operation, so a tool call is the right move.",
    "Checking the available tools for one whose contract covers this.",
    "The required arguments are all present in the user's message.",
    "No other tool in the list is a plausible fit.",
    "Copying the argument values exactly as the user stated them.",
    "Optional arguments the user did not mention stay unset.",
    "The parameter types line up with the declared schema.",
    "Nothing in the history changes what the user wants here.",
];
const RESPONSE_QA: [(&str, &str); 6] = [
    (
        "What is the capital of France?",
        "The capital of France is Paris.",
    ),
    (
        "How many days are there in a leap year?",
        "A leap year has 366 days.",
    ),
    (
        "Thanks, that covers everything for now.",
        "Glad to help. Let me know if anything else comes up.",
    ),
    (
        "What does HTTP stand for?",
        "HTTP stands for Hypertext Transfer Protocol.",
    ),
    (
        "Which planet is closest to the sun?",
        "Mercury is the planet closest to the sun.",
    ),
    (
        "Can you briefly explain what a mutex is?",
        "A mutex is a lock that lets only one thread into a critical section at a time.",
    ),
];
const SPURIOUS_RESPONSES: [&str; 3] = [
    "I went ahead and completed that for you.",
    "All done, the results are above.",
    "Here is the answer you were looking for.",
];

fn random_suffix<R: Rng>(rng: &mut R, len: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

fn novel_identifier<R: Rng>(rng: &mut R, taken: &HashSet<String>) -> String {
    loop {
        let name = format!("tool_{}", random_suffix(rng, 6));
        if !taken.contains(&name) {
            return name;
        }
    }
}

fn gen_param_type<R: Rng>(rng: &mut R) -> ParamType {
    // Scalars dominate; containers appear often enough to exercise deep
    // value comparison.
    match rng.gen_range(0..12) {
        0..=3 => ParamType::String,
        4..=7 => ParamType::Number,
        8..=9 => ParamType::Boolean,
        10 => ParamType::Object,
        _ => ParamType::Array,
    }
}

fn gen_scalar<R: Rng>(rng: &mut R) -> JsonValue {
    match rng.gen_range(0..3) {
        0 => JsonValue::from(*STRING_VALUES.choose(rng).expect("pool is non-empty")),
        1 => JsonValue::from(rng.gen_range(-50i64..=500)),
        _ => JsonValue::from(rng.gen_bool(0.5)),
    }
}

fn gen_value<R: Rng>(rng: &mut R, ty: ParamType) -> JsonValue {
    match ty {
        ParamType::String => JsonValue::from(*STRING_VALUES.choose(rng).expect("pool is non-empty")),
        ParamType::Number => {
            if rng.gen_bool(0.5) {
                JsonValue::from(rng.gen_range(-50i64..=500))
            } else {
                JsonValue::from(rng.gen_range(-500i64..=5000) as f64 / 10.0)
            }
        }
        ParamType::Boolean => JsonValue::from(rng.gen_bool(0.5)),
        ParamType::Object => {
            let mut map = IndexMap::new();
            for _ in 0..rng.gen_range(1..=2) {
                let key = *OBJECT_KEYS.choose(rng).expect("pool is non-empty");
                map.insert(key.to_owned(), gen_scalar(rng));
            }
            JsonValue::Object(map)
        }
        ParamType::Array => {
            JsonValue::Array((0..rng.gen_range(0..=3)).map(|_| gen_scalar(rng)).collect())
        }
    }
}

fn build_tools<R: Rng>(rng: &mut R, count: usize, masked: bool) -> Vec<ToolSpec> {
    let mut names: HashSet<String> = HashSet::new();
    let mut tools = Vec::with_capacity(count);
    while tools.len() < count {
        let name = if masked {
            format!("fn_{}", random_suffix(rng, 6))
        } else {
            format!(
                "{}_{}",
                VERBS.choose(rng).expect("pool is non-empty"),
                NOUNS.choose(rng).expect("pool is non-empty")
            )
        };
        if !names.insert(name.clone()) {
            continue;
        }
        let description = if masked {
            "Applies an undisclosed operation to its arguments.".to_owned()
        } else {
            let noun = name.split('_').nth(1).expect("name has two segments");
            format!("Works with {noun} records on the user's behalf.")
        };
        let mut param_names: HashSet<String> = HashSet::new();
        let mut parameters = Vec::new();
        let param_count = rng.gen_range(0..=4);
        while parameters.len() < param_count {
            let pname = if masked {
                format!("p_{}", random_suffix(rng, 4))
            } else {
                PARAM_NAMES.choose(rng).expect("pool is non-empty").to_string()
            };
            if !param_names.insert(pname.clone()) {
                continue;
            }
            let param_type = gen_param_type(rng);
            parameters.push(ParamSpec {
                name: pname.clone(),
                param_type,
                required: rng.gen_bool(0.6),
                description: if masked {
                    "An opaque argument.".to_owned()
                } else {
                    format!("The {pname} to use.")
                },
            });
        }
        tools.push(ToolSpec {
            name,
            description,
            parameters,
        });
    }
    tools
}

fn build_call<R: Rng>(rng: &mut R, spec: &ToolSpec) -> ToolCall {
    let mut parameters = IndexMap::new();
    for param in &spec.parameters {
        if param.required || rng.gen_bool(0.5) {
            parameters.insert(param.name.clone(), gen_value(rng, param.param_type));
        }
    }
    ToolCall::new(&spec.name, parameters).expect("generated tool names are non-empty")
}

fn describe_call(call: &ToolCall) -> String {
    if call.parameters.is_empty() {
        return format!("run {} with no arguments", call.name);
    }
    let args: Vec<String> = call
        .parameters
        .iter()
        .map(|(k, v)| {
            let rendered = serde_json::to_string(&serde_json::Value::from(v.clone()))
                .expect("generated values serialize");
            format!("{k}={rendered}")
        })
        .collect();
    format!("run {} with {}", call.name, args.join(", "))
}

fn gen_query<R: Rng>(rng: &mut R, calls: &[ToolCall]) -> String {
    let lead = ["Please", "Could you", "I need you to"]
        .choose(rng)
        .expect("pool is non-empty");
    let parts: Vec<String> = calls.iter().map(describe_call).collect();
    format!("{lead} {}.", parts.join(", then "))
}

fn gen_think<R: Rng>(rng: &mut R) -> String {
    let target = rng.gen_range(32..=700);
    let start = rng.gen_range(0..FILLER.len());
    let mut text = String::new();
    let mut i = 0;
    while text.chars().count() < target {
        if i > 0 {
            text.push(' ');
        }
        text.push_str(FILLER[(start + i) % FILLER.len()]);
        i += 1;
    }
    text
}

/// Corruption modes that can apply to an output for this annotation, in
/// taxonomy order. Never empty: a format break is always possible.
pub fn applicable_modes(annotation: &TurnAnnotation) -> Vec<CorruptionMode> {
    let calls = &annotation.expected_calls;
    let mut modes = Vec::new();
    if !calls.is_empty() {
        modes.push(CorruptionMode::WrongName);
    }
    if calls.iter().any(|c| !c.parameters.is_empty()) {
        modes.push(CorruptionMode::DropParam);
        modes.push(CorruptionMode::WrongValue);
    }
    modes.push(CorruptionMode::ExtraCall);
    if !calls.is_empty() {
        modes.push(CorruptionMode::DropCall);
    }
    modes.push(CorruptionMode::FormatBreak);
    if !annotation.response_required {
        modes.push(CorruptionMode::SpuriousResponse);
    }
    modes
}

/// Generates one task. Pure in the RNG: the same seeded RNG and difficulty
/// always produce the same task. The query id is drawn from the RNG;
/// [`gen_env`] replaces it with a positional id.
pub fn gen_task<R: Rng>(rng: &mut R, difficulty: Difficulty) -> SyntheticTask {
    let masked = difficulty == Difficulty::MaskedNames;
    let tool_count = rng.gen_range(1..=4);
    let tools = build_tools(rng, tool_count, masked);

    let call_count = match difficulty {
        Difficulty::SingleCall => 1,
        Difficulty::MultiCall => rng.gen_range(2..=3),
        Difficulty::ResponseOnly => 0,
        Difficulty::MaskedNames => rng.gen_range(1..=3),
    };
    let expected: Vec<ToolCall> = (0..call_count)
        .map(|_| {
            let spec = tools.choose(rng).expect("at least one tool").clone();
            build_call(rng, &spec)
        })
        .collect();

    let (query, annotation) = if call_count == 0 {
        let (q, a) = RESPONSE_QA.choose(rng).expect("pool is non-empty");
        ((*q).to_owned(), TurnAnnotation::response_only(*a))
    } else {
        (
            gen_query(rng, &expected),
            TurnAnnotation::calls_only(expected).expect("call list is non-empty"),
        )
    };

    let perfect = ParsedOutput::canonical(
        Some(gen_think(rng)),
        annotation.expected_calls.clone(),
        annotation.reference_response.clone(),
    );
    let perfect_text = render_output(&perfect).expect("generated outputs are canonical");

    let modes = applicable_modes(&annotation);
    let mut candidates = Vec::with_capacity(CANDIDATES_PER_TASK);
    candidates.push(Candidate {
        text: perfect_text,
        label: CandidateLabel::Perfect,
    });
    for i in 0..CANDIDATES_PER_TASK - 1 {
        let mode = modes[i % modes.len()];
        candidates.push(Candidate {
            text: corrupt(&perfect, mode, rng).expect("cycled modes are applicable"),
            label: mode.into(),
        });
    }

    SyntheticTask {
        query_id: format!("{difficulty}-{:08x}", rng.gen::<u32>()),
        tools,
        history: DialogueHistory::opening(query),
        annotation,
        candidates,
    }
}

fn rerender(out: &ParsedOutput) -> String {
    render_output(out).expect("corrupted structures still render")
}

fn single_block_text(perfect: &ParsedOutput, tag: Tag) -> String {
    let mut isolated = ParsedOutput {
        think: None,
        tool_calls: Vec::new(),
        malformed_call_count: 0,
        response: None,
        tag_sequence: vec![tag],
        stray_segments: Vec::new(),
    };
    match tag {
        Tag::Think => isolated.think = perfect.think.clone(),
        Tag::ToolCall => isolated.tool_calls = perfect.tool_calls.clone(),
        Tag::Response => isolated.response = perfect.response.clone(),
    }
    rerender(&isolated)
}

fn format_break_variant<R: Rng>(perfect: &ParsedOutput, variant: usize, rng: &mut R) -> String {
    let rendered = rerender(perfect);
    match variant {
        // Unterminated think: its content leaks out as stray text.
        0 => rendered.replacen("</think>", "", 1),
        // Stray prose before the first tag.
        1 => format!("Okay, working on it.\n{rendered}"),
        // A second think block; duplicate tags are never canonical.
        2 => format!(
            "<think>{}</think>\n{rendered}",
            FILLER[rng.gen_range(0..FILLER.len())]
        ),
        // Same blocks, reversed order.
        _ => {
            let mut blocks: Vec<String> = perfect
                .tag_sequence
                .iter()
                .map(|&tag| single_block_text(perfect, tag))
                .collect();
            blocks.reverse();
            blocks.join("\n")
        }
    }
}

/// Applies one corruption mode to a canonical output and re-renders it. The
/// result differs from the perfect text only in the stated defect.
pub fn corrupt<R: Rng>(
    perfect: &ParsedOutput,
    mode: CorruptionMode,
    rng: &mut R,
) -> Result<String, SynthError> {
    let parameterized: Vec<usize> = perfect
        .tool_calls
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.parameters.is_empty())
        .map(|(i, _)| i)
        .collect();

    match mode {
        CorruptionMode::WrongName => {
            if perfect.tool_calls.is_empty() {
                return Err(SynthError::Inapplicable { mode });
            }
            let mut out = perfect.clone();
            let idx = rng.gen_range(0..out.tool_calls.len());
            let taken: HashSet<String> =
                out.tool_calls.iter().map(|c| c.name.clone()).collect();
            out.tool_calls[idx].name = novel_identifier(rng, &taken);
            Ok(rerender(&out))
        }
        CorruptionMode::DropParam => {
            let Some(&idx) = parameterized.as_slice().choose(rng) else {
                return Err(SynthError::Inapplicable { mode });
            };
            let mut out = perfect.clone();
            let params = &mut out.tool_calls[idx].parameters;
            let key = params
                .get_index(rng.gen_range(0..params.len()))
                .map(|(k, _)| k.clone())
                .expect("index is in range");
            params.shift_remove(&key);
            Ok(rerender(&out))
        }
        CorruptionMode::WrongValue => {
            let Some(&idx) = parameterized.as_slice().choose(rng) else {
                return Err(SynthError::Inapplicable { mode });
            };
            let mut out = perfect.clone();
            let params = &mut out.tool_calls[idx].parameters;
            let slot = rng.gen_range(0..params.len());
            let (_, value) = params.get_index_mut(slot).expect("index is in range");
            *value = mutate_value(rng, value);
            Ok(rerender(&out))
        }
        CorruptionMode::ExtraCall => {
            let taken: HashSet<String> =
                perfect.tool_calls.iter().map(|c| c.name.clone()).collect();
            let mut parameters = IndexMap::new();
            for i in 0..rng.gen_range(0..=2) {
                parameters.insert(format!("arg{i}"), gen_scalar(rng));
            }
            let novel = ToolCall::new(novel_identifier(rng, &taken), parameters)
                .expect("novel identifiers are non-empty");
            let mut calls = perfect.tool_calls.clone();
            calls.push(novel);
            Ok(rerender(&ParsedOutput::canonical(
                perfect.think.clone(),
                calls,
                perfect.response.clone(),
            )))
        }
        CorruptionMode::DropCall => {
            if perfect.tool_calls.is_empty() {
                return Err(SynthError::Inapplicable { mode });
            }
            let mut out = perfect.clone();
            out.tool_calls.remove(rng.gen_range(0..out.tool_calls.len()));
            // The tag sequence is untouched, so a now-empty block still
            // renders and the damage stays on correctness alone.
            Ok(rerender(&out))
        }
        CorruptionMode::FormatBreak => {
            let variant = rng.gen_range(0..4);
            Ok(format_break_variant(perfect, variant, rng))
        }
        CorruptionMode::SpuriousResponse => {
            if perfect.response.is_some() {
                return Err(SynthError::Inapplicable { mode });
            }
            let mut out = perfect.clone();
            out.response = Some(
                SPURIOUS_RESPONSES
                    .choose(rng)
                    .expect("pool is non-empty")
                    .to_string(),
            );
            out.tag_sequence.push(Tag::Response);
            Ok(rerender(&out))
        }
    }
}

/// Replaces a value with one that never matches it, preserving the JSON type
/// where that is possible.
fn mutate_value<R: Rng>(rng: &mut R, value: &JsonValue) -> JsonValue {
    match value {
        JsonValue::Bool(b) => JsonValue::from(!b),
        JsonValue::Null => JsonValue::from(true),
        JsonValue::String(s) => JsonValue::from(format!("{s}_alt")),
        JsonValue::Number(n) => {
            if n.value().is_finite() && n.value().abs() < 1e15 {
                JsonValue::from(n.value() + f64::from(rng.gen_range(1i32..=9)))
            } else {
                JsonValue::from(0i64)
            }
        }
        JsonValue::Array(items) => {
            let mut items = items.clone();
            items.push(JsonValue::from(999i64));
            JsonValue::Array(items)
        }
        JsonValue::Object(map) => {
            let mut map = map.clone();
            let mut key = String::from("extra");
            while map.contains_key(&key) {
                key.push('_');
            }
            map.insert(key, JsonValue::from(1i64));
            JsonValue::Object(map)
        }
    }
}

/// Builds a roster of `tasks_per_difficulty` tasks for each difficulty. Each
/// task gets its own RNG derived from `seed` and its position, so generation
/// is order-independent and reproducible, and query ids are positional
/// (`single_call-000`, ...).
pub fn gen_env(seed: u64, tasks_per_difficulty: usize) -> SyntheticEnv {
    let mut tasks = Vec::with_capacity(DIFFICULTIES.len() * tasks_per_difficulty);
    for (d_idx, &difficulty) in DIFFICULTIES.iter().enumerate() {
        for i in 0..tasks_per_difficulty {
            let position = (d_idx * tasks_per_difficulty + i) as u64;
            let task_seed = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(position + 1);
            let mut rng = ChaCha12Rng::seed_from_u64(task_seed);
            let mut task = gen_task(&mut rng, difficulty);
            task.query_id = format!("{difficulty}-{i:03}");
            tasks.push(task);
        }
    }
    SyntheticEnv { tasks }
}
