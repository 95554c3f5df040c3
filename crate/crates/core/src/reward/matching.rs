//! Optimal alignment of predicted tool calls against expected tool calls.
//!
//! Correctness scoring needs the best one-to-one assignment between the two call
//! lists under the configured granularity. Pair scores are small rationals
//! (Jaccard fractions plus integer value-match counts), so the matcher does all
//! comparison and summation in exact rational arithmetic and converts to f64
//! once at the end. Two mathematically equal totals are then the same float no
//! matter which of the algorithms in this crate produced them.
//!
//! Algorithm: a rectangular Hungarian solve (shortest augmenting path over
//! potentials) gives the optimal total; the reported pair list is reconstructed
//! greedily so that, among all optimal full matchings, the lexicographically
//! smallest (gt_index, pred_index) list is returned. Ties therefore never change
//! the total and always reproduce the same trace.

use std::cmp::min;
use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::call::{calls_match, params_match, ToolCall};
use crate::value::values_match;

use super::{Granularity, RewardConfig, RewardError};

/// Calls per side the matcher accepts. Exact assignment above this is not a
/// scoring scenario this harness supports.
pub const MAX_CALLS: usize = 16;

/// One matched (expected, predicted) pair and its pair score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt_index: usize,
    pub pred_index: usize,
    pub score: f64,
}

/// The audit trail of one correctness evaluation.
///
/// `total` is the achieved score (name agreement plus all matched pair scores)
/// and `max_total` the best score this ground truth allows, so correctness
/// normalizes `total / max_total`. Which component fields are populated depends
/// on granularity: the whole-set modes fold everything into `name_score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchTrace {
    pub pairs: Vec<MatchedPair>,
    pub name_score: f64,
    pub key_score: f64,
    pub value_score: f64,
    pub total: f64,
    pub max_total: f64,
}

pub(super) struct ExactPair {
    pub score: BigRational,
    pub key_part: BigRational,
    pub value_part: BigRational,
}

fn rational(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn indicator(cond: bool) -> BigRational {
    if cond {
        BigRational::one()
    } else {
        BigRational::zero()
    }
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> BigRational {
    if a.is_empty() && b.is_empty() {
        return BigRational::one();
    }
    let intersection = a.intersection(b).count();
    let union = a.union(b).count();
    rational(intersection, union)
}

fn key_set(call: &ToolCall) -> BTreeSet<&str> {
    call.parameters.keys().map(String::as_str).collect()
}

fn name_set(calls: &[ToolCall]) -> BTreeSet<&str> {
    calls.iter().map(|c| c.name.trim()).collect()
}

/// Count of expected parameters whose predicted value matches exactly.
fn value_matches(g: &ToolCall, p: &ToolCall, strict: bool) -> BigRational {
    let count = g
        .parameters
        .iter()
        .filter(|(k, gv)| {
            p.parameters
                .get(k.as_str())
                .is_some_and(|pv| values_match(gv, pv, strict))
        })
        .count();
    rational(count, 1)
}

/// Set-level name agreement between the two call lists.
pub(super) fn exact_name_score(
    gt: &[ToolCall],
    preds: &[ToolCall],
    granularity: Granularity,
) -> BigRational {
    let g = name_set(gt);
    let p = name_set(preds);
    match granularity {
        Granularity::Finegrained => indicator(g == p),
        _ => jaccard(&g, &p),
    }
}

/// Score of pairing expected call `g` with predicted call `p` under the
/// configured granularity, split into its key and value components.
pub(super) fn exact_pair(
    g: &ToolCall,
    p: &ToolCall,
    granularity: Granularity,
    strict: bool,
) -> ExactPair {
    let (key_part, value_part) = match granularity {
        Granularity::Original => (jaccard(&key_set(g), &key_set(p)), value_matches(g, p, strict)),
        Granularity::Finegrained => (
            indicator(key_set(g) == key_set(p)),
            value_matches(g, p, strict),
        ),
        Granularity::Intermediate => (indicator(params_match(g, p, strict)), BigRational::zero()),
        Granularity::Coarse => (indicator(calls_match(g, p, strict)), BigRational::zero()),
    };
    ExactPair {
        score: &key_part + &value_part,
        key_part,
        value_part,
    }
}

/// Best attainable total for this ground truth under the granularity: the
/// denominator of correctness normalization.
pub(super) fn exact_max_total(gt: &[ToolCall], granularity: Granularity) -> BigRational {
    let n = match granularity {
        Granularity::Original | Granularity::Finegrained => {
            1 + gt.len() + gt.iter().map(|c| c.parameters.len()).sum::<usize>()
        }
        Granularity::Intermediate => 1 + gt.len(),
        Granularity::Coarse => 1,
    };
    rational(n, 1)
}

/// True when the two lists contain the same calls as multisets.
pub(super) fn calls_multiset_equal(gt: &[ToolCall], preds: &[ToolCall], strict: bool) -> bool {
    if gt.len() != preds.len() {
        return false;
    }
    let mut used = vec![false; preds.len()];
    'outer: for g in gt {
        for (i, p) in preds.iter().enumerate() {
            if !used[i] && calls_match(g, p, strict) {
                used[i] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Maximum-weight full assignment value over `rows` x `cols` of `score`,
/// solved by the Hungarian method on exact rationals.
fn hungarian_max(score: &[Vec<BigRational>], rows: &[usize], cols: &[usize]) -> BigRational {
    if rows.is_empty() || cols.is_empty() {
        return BigRational::zero();
    }
    let n = rows.len().max(cols.len());

    let mut cmax = BigRational::zero();
    for &r in rows {
        for &c in cols {
            if score[r][c] > cmax {
                cmax = score[r][c].clone();
            }
        }
    }
    // Minimization form with non-negative costs; padding entries act as
    // zero-score dummies.
    let cost = |i: usize, j: usize| -> BigRational {
        if i < rows.len() && j < cols.len() {
            &cmax - &score[rows[i]][cols[j]]
        } else {
            cmax.clone()
        }
    };

    // Shortest augmenting path with row/column potentials, 1-based arrays,
    // None standing in for infinity.
    let mut u = vec![BigRational::zero(); n + 1];
    let mut v = vec![BigRational::zero(); n + 1];
    let mut assigned_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv: Vec<Option<BigRational>> = vec![None; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta: Option<BigRational> = None;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = &(&cost(i0 - 1, j - 1) - &u[i0]) - &v[j];
                if minv[j].as_ref().is_none_or(|m| cur < *m) {
                    minv[j] = Some(cur);
                    way[j] = j0;
                }
                if let Some(m) = &minv[j] {
                    if delta.as_ref().is_none_or(|d| m < d) {
                        delta = Some(m.clone());
                        j1 = j;
                    }
                }
            }
            let d = delta.expect("an unassigned column is always reachable");
            for j in 0..=n {
                if used[j] {
                    let row = assigned_row[j];
                    u[row] = &u[row] + &d;
                    v[j] = &v[j] - &d;
                } else if let Some(m) = &mut minv[j] {
                    *m = &*m - &d;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut total = BigRational::zero();
    for j in 1..=n {
        let i = assigned_row[j];
        if i >= 1 && i <= rows.len() && j <= cols.len() {
            total = &total + &score[rows[i - 1]][cols[j - 1]];
        }
    }
    total
}

/// Optimal full assignment plus the lexicographically smallest pair list that
/// attains it: rows are matched in ascending gt order, each to the smallest
/// predicted index that preserves optimality.
fn assign_lex_max(score: &[Vec<BigRational>]) -> (Vec<(usize, usize)>, BigRational) {
    let m = score.len();
    let n = if m == 0 { 0 } else { score[0].len() };
    let all_rows: Vec<usize> = (0..m).collect();
    let mut avail: Vec<usize> = (0..n).collect();

    let total = hungarian_max(score, &all_rows, &avail);
    let mut target = total.clone();
    let mut need = min(m, n);
    let mut pairs = Vec::with_capacity(need);

    for g in 0..m {
        if need == 0 {
            break;
        }
        let rows_after: Vec<usize> = (g + 1..m).collect();
        let mut chosen: Option<usize> = None;
        for (slot, &p) in avail.iter().enumerate() {
            let mut rest = avail.clone();
            rest.remove(slot);
            let attainable = &score[g][p] + &hungarian_max(score, &rows_after, &rest);
            if attainable == target {
                chosen = Some(slot);
                break;
            }
        }
        if let Some(slot) = chosen {
            let p = avail.remove(slot);
            target = &target - &score[g][p];
            pairs.push((g, p));
            need -= 1;
        }
    }

    (pairs, total)
}

/// Computes the full [`MatchTrace`] for one (expected, predicted) call pair of
/// lists. Ground truth drives `max_total`; ties in the assignment are broken
/// deterministically (see module docs). The coarse granularity bypasses
/// matching entirely and scores whole-set equality.
pub fn best_matching(
    gt: &[ToolCall],
    preds: &[ToolCall],
    cfg: &RewardConfig,
) -> Result<MatchTrace, RewardError> {
    for (side, len) in [("expected", gt.len()), ("predicted", preds.len())] {
        if len > MAX_CALLS {
            return Err(RewardError::SizeExceeded { side, len });
        }
    }

    let strict = cfg.strict_string_values;
    let max_total = exact_max_total(gt, cfg.granularity)
        .to_f64()
        .expect("small integer converts to f64");

    if cfg.granularity == Granularity::Coarse {
        let equal = calls_multiset_equal(gt, preds, strict);
        let total = if equal { 1.0 } else { 0.0 };
        return Ok(MatchTrace {
            pairs: Vec::new(),
            name_score: total,
            key_score: 0.0,
            value_score: 0.0,
            total,
            max_total,
        });
    }

    let cells: Vec<Vec<ExactPair>> = gt
        .iter()
        .map(|g| {
            preds
                .iter()
                .map(|p| exact_pair(g, p, cfg.granularity, strict))
                .collect()
        })
        .collect();
    let scores: Vec<Vec<BigRational>> = cells
        .iter()
        .map(|row| row.iter().map(|c| c.score.clone()).collect())
        .collect();

    let name = exact_name_score(gt, preds, cfg.granularity);
    let (pair_indices, pair_total) = assign_lex_max(&scores);

    let mut key_sum = BigRational::zero();
    let mut value_sum = BigRational::zero();
    let pairs = pair_indices
        .iter()
        .map(|&(g, p)| {
            let cell = &cells[g][p];
            key_sum = &key_sum + &cell.key_part;
            value_sum = &value_sum + &cell.value_part;
            MatchedPair {
                gt_index: g,
                pred_index: p,
                score: cell.score.to_f64().expect("pair score converts to f64"),
            }
        })
        .collect();

    let total = (&name + &pair_total)
        .to_f64()
        .expect("matching total converts to f64");

    Ok(MatchTrace {
        pairs,
        name_score: name.to_f64().expect("name score converts to f64"),
        key_score: key_sum.to_f64().expect("key score converts to f64"),
        value_score: value_sum.to_f64().expect("value score converts to f64"),
        total,
        max_total,
    })
}

/// Score of pairing one expected call with one predicted call, as used inside
/// the assignment. Exposed for audits; the coarse mode reports whole-call
/// equality since no finer pairing notion exists there.
pub fn pair_score(g: &ToolCall, p: &ToolCall, cfg: &RewardConfig) -> f64 {
    exact_pair(g, p, cfg.granularity, cfg.strict_string_values)
        .score
        .to_f64()
        .expect("pair score converts to f64")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardConfig;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    fn weather_gt() -> ToolCall {
        ToolCall::with_params("get_weather", [("city", "SF"), ("unit", "C")]).unwrap()
    }

    #[test]
    fn test_pair_score_weather_example() {
        // Identical keys, one of two values agrees: 1 + 1 = 2.
        let p = ToolCall::with_params("get_weather", [("city", "SF"), ("unit", "F")]).unwrap();
        assert_eq!(pair_score(&weather_gt(), &p, &cfg()), 2.0);
    }

    #[test]
    fn test_pair_score_perfect_two_params() {
        assert_eq!(pair_score(&weather_gt(), &weather_gt(), &cfg()), 3.0);
    }

    #[test]
    fn test_pair_score_parameterless_calls() {
        let g = ToolCall::bare("ping").unwrap();
        let p = ToolCall::bare("pong").unwrap();
        // Both key sets empty: Jaccard 1, no values to match.
        assert_eq!(pair_score(&g, &p, &cfg()), 1.0);
    }

    #[test]
    fn test_pair_score_one_side_empty_keys() {
        let g = ToolCall::bare("f").unwrap();
        let p = ToolCall::with_params("f", [("a", 1i64)]).unwrap();
        assert_eq!(pair_score(&g, &p, &cfg()), 0.0);
    }

    #[test]
    fn test_best_matching_two_call_example() {
        let gt = vec![
            ToolCall::with_params("A", [("x", 1i64)]).unwrap(),
            ToolCall::with_params("B", [("y", 2i64)]).unwrap(),
        ];
        let preds = vec![ToolCall::with_params("A", [("x", 1i64)]).unwrap()];
        let trace = best_matching(&gt, &preds, &cfg()).unwrap();
        assert_eq!(trace.name_score, 0.5);
        assert_eq!(trace.pairs.len(), 1);
        assert_eq!(trace.pairs[0].gt_index, 0);
        assert_eq!(trace.pairs[0].pred_index, 0);
        assert_eq!(trace.pairs[0].score, 2.0);
        assert_eq!(trace.total, 2.5);
        assert_eq!(trace.max_total, 5.0);
    }

    #[test]
    fn test_best_matching_prefers_higher_total_over_order() {
        // Swapped prediction order: the assignment must cross.
        let gt = vec![
            ToolCall::with_params("A", [("x", 1i64)]).unwrap(),
            ToolCall::with_params("B", [("y", 2i64)]).unwrap(),
        ];
        let preds = vec![
            ToolCall::with_params("B", [("y", 2i64)]).unwrap(),
            ToolCall::with_params("A", [("x", 1i64)]).unwrap(),
        ];
        let trace = best_matching(&gt, &preds, &cfg()).unwrap();
        // Name set 1, each crossed pair scores key 1 plus value 1.
        assert_eq!(trace.total, 5.0);
        assert_eq!(
            trace
                .pairs
                .iter()
                .map(|p| (p.gt_index, p.pred_index))
                .collect::<Vec<_>>(),
            vec![(0, 1), (1, 0)]
        );
    }

    #[test]
    fn test_best_matching_breaks_ties_lexicographically() {
        // Two identical predictions: both assignments score the same, so the
        // reported pairs must be the lexicographically smallest list.
        let gt = vec![
            ToolCall::bare("f").unwrap(),
            ToolCall::bare("f").unwrap(),
        ];
        let preds = gt.clone();
        let trace = best_matching(&gt, &preds, &cfg()).unwrap();
        assert_eq!(
            trace
                .pairs
                .iter()
                .map(|p| (p.gt_index, p.pred_index))
                .collect::<Vec<_>>(),
            vec![(0, 0), (1, 1)]
        );
    }

    #[test]
    fn test_best_matching_empty_sides() {
        let trace = best_matching(&[], &[], &cfg()).unwrap();
        assert_eq!(trace.name_score, 1.0);
        assert_eq!(trace.total, 1.0);
        assert_eq!(trace.max_total, 1.0);

        let gt = vec![weather_gt()];
        let trace = best_matching(&gt, &[], &cfg()).unwrap();
        assert_eq!(trace.name_score, 0.0);
        assert_eq!(trace.total, 0.0);
        assert_eq!(trace.max_total, 4.0);
    }

    #[test]
    fn test_best_matching_duplicate_names_distinguished_by_params() {
        // Same tool called twice with different arguments; name set collapses
        // but the assignment still aligns each call with its argument twin.
        let gt = vec![
            ToolCall::with_params("f", [("a", 1i64)]).unwrap(),
            ToolCall::with_params("f", [("a", 2i64)]).unwrap(),
        ];
        let preds = vec![
            ToolCall::with_params("f", [("a", 2i64)]).unwrap(),
            ToolCall::with_params("f", [("a", 1i64)]).unwrap(),
        ];
        let trace = best_matching(&gt, &preds, &cfg()).unwrap();
        assert_eq!(trace.name_score, 1.0);
        assert_eq!(trace.total, 1.0 + 2.0 + 2.0);
        assert_eq!(
            trace
                .pairs
                .iter()
                .map(|p| (p.gt_index, p.pred_index))
                .collect::<Vec<_>>(),
            vec![(0, 1), (1, 0)]
        );
    }

    #[test]
    fn test_best_matching_size_bound() {
        let gt: Vec<ToolCall> = (0..MAX_CALLS + 1)
            .map(|i| ToolCall::bare(&format!("t{i}")).unwrap())
            .collect();
        let err = best_matching(&gt, &[], &cfg()).unwrap_err();
        assert!(matches!(err, RewardError::SizeExceeded { len: 17, .. }));
    }

    #[test]
    fn test_trace_components_sum_to_total() {
        let gt = vec![
            ToolCall::with_params("A", [("x", 1i64), ("y", 2i64)]).unwrap(),
            ToolCall::with_params("B", [("z", 3i64)]).unwrap(),
        ];
        let preds = vec![
            ToolCall::with_params("A", [("x", 1i64), ("w", 9i64)]).unwrap(),
            ToolCall::with_params("C", [("z", 3i64)]).unwrap(),
        ];
        let trace = best_matching(&gt, &preds, &cfg()).unwrap();
        let component_sum = trace.name_score + trace.key_score + trace.value_score;
        assert!((trace.total - component_sum).abs() < 1e-12);
        let pair_sum: f64 = trace.pairs.iter().map(|p| p.score).sum();
        assert!((trace.total - (trace.name_score + pair_sum)).abs() < 1e-12);
    }

    #[test]
    fn test_coarse_trace_is_whole_set_indicator() {
        let mut coarse = cfg();
        coarse.granularity = Granularity::Coarse;
        let gt = vec![weather_gt()];

        let exact = best_matching(&gt, &gt.clone(), &coarse).unwrap();
        assert_eq!(exact.total, 1.0);
        assert_eq!(exact.max_total, 1.0);
        assert!(exact.pairs.is_empty());

        let off = vec![ToolCall::with_params("get_weather", [("city", "SF"), ("unit", "F")]).unwrap()];
        let miss = best_matching(&gt, &off, &coarse).unwrap();
        assert_eq!(miss.total, 0.0);
    }

    #[test]
    fn test_strict_values_change_pair_score() {
        let val = |text: &str| crate::value::parse_value(text).unwrap();
        let g = ToolCall::with_params("f", [("a", val("1"))]).unwrap();
        let p = ToolCall::with_params("f", [("a", val("1.0"))]).unwrap();
        assert_eq!(pair_score(&g, &p, &cfg()), 2.0);
        let mut strict = cfg();
        strict.strict_string_values = true;
        assert_eq!(pair_score(&g, &p, &strict), 1.0);
    }
}
