//! JSON parameter values with canonical equality.
//!
//! Tool-call parameters are JSON, and the reward engine compares them by typed deep
//! equality: `1`, `1.0`, and `1e0` are the same number, and object key order never
//! affects the outcome. Each number also retains its as-parsed spelling so the strict
//! audit mode can report where spelling-level and typed comparison disagree.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// A JSON value whose `==` is the typed deep comparison used for scoring:
/// numbers by numeric value, objects by key set regardless of order, strings
/// and booleans exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "serde_json::Value", into = "serde_json::Value")]
pub enum JsonValue {
    Null,
    Bool(bool),
    Number(JsonNumber),
    String(String),
    Array(Vec<JsonValue>),
    Object(IndexMap<String, JsonValue>),
}

/// A JSON number stored canonically as `f64`, plus the spelling it arrived with.
///
/// Equality uses only the canonical value. JSON cannot encode NaN or infinities,
/// so `==` on the canonical value is a genuine equivalence relation.
#[derive(Debug, Clone)]
pub struct JsonNumber {
    value: f64,
    text: String,
}

impl JsonNumber {
    pub fn from_f64(value: f64) -> Self {
        JsonNumber {
            value,
            text: format!("{value}"),
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// The spelling this number had when parsed (`"1"` vs `"1.0"`).
    pub fn text(&self) -> &str {
        &self.text
    }
}

impl PartialEq for JsonNumber {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl PartialEq for JsonValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (JsonValue::Null, JsonValue::Null) => true,
            (JsonValue::Bool(a), JsonValue::Bool(b)) => a == b,
            (JsonValue::Number(a), JsonValue::Number(b)) => a == b,
            (JsonValue::String(a), JsonValue::String(b)) => a == b,
            (JsonValue::Array(a), JsonValue::Array(b)) => a == b,
            // IndexMap equality is length plus per-key lookup, so insertion
            // order is irrelevant here.
            (JsonValue::Object(a), JsonValue::Object(b)) => a == b,
            _ => false,
        }
    }
}

impl From<serde_json::Value> for JsonValue {
    fn from(v: serde_json::Value) -> Self {
        match v {
            serde_json::Value::Null => JsonValue::Null,
            serde_json::Value::Bool(b) => JsonValue::Bool(b),
            serde_json::Value::Number(n) => JsonValue::Number(JsonNumber {
                value: n.as_f64().expect("standard JSON numbers convert to f64"),
                text: n.to_string(),
            }),
            serde_json::Value::String(s) => JsonValue::String(s),
            serde_json::Value::Array(items) => {
                JsonValue::Array(items.into_iter().map(JsonValue::from).collect())
            }
            serde_json::Value::Object(entries) => JsonValue::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, JsonValue::from(v)))
                    .collect(),
            ),
        }
    }
}

impl From<JsonValue> for serde_json::Value {
    fn from(v: JsonValue) -> Self {
        match v {
            JsonValue::Null => serde_json::Value::Null,
            JsonValue::Bool(b) => serde_json::Value::Bool(b),
            JsonValue::Number(n) => {
                let f = n.value;
                if f.fract() == 0.0 && f.abs() <= 9.007_199_254_740_992e15 {
                    serde_json::Value::from(f as i64)
                } else {
                    serde_json::Number::from_f64(f)
                        .map(serde_json::Value::Number)
                        .unwrap_or(serde_json::Value::Null)
                }
            }
            JsonValue::String(s) => serde_json::Value::String(s),
            JsonValue::Array(items) => {
                serde_json::Value::Array(items.into_iter().map(serde_json::Value::from).collect())
            }
            JsonValue::Object(entries) => serde_json::Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, serde_json::Value::from(v)))
                    .collect(),
            ),
        }
    }
}

impl From<bool> for JsonValue {
    fn from(b: bool) -> Self {
        JsonValue::Bool(b)
    }
}

impl From<i64> for JsonValue {
    fn from(n: i64) -> Self {
        JsonValue::Number(JsonNumber {
            value: n as f64,
            text: n.to_string(),
        })
    }
}

impl From<f64> for JsonValue {
    fn from(n: f64) -> Self {
        JsonValue::Number(JsonNumber::from_f64(n))
    }
}

impl From<&str> for JsonValue {
    fn from(s: &str) -> Self {
        JsonValue::String(s.to_owned())
    }
}

impl From<String> for JsonValue {
    fn from(s: String) -> Self {
        JsonValue::String(s)
    }
}

/// Typed deep equality with canonical numbers. This is `==` on [`JsonValue`],
/// named so call sites scoring rewards read as what they do.
pub fn value_equal(a: &JsonValue, b: &JsonValue) -> bool {
    a == b
}

/// Spelling-level audit comparison: numbers compare by their as-parsed text
/// and objects compare order-sensitively, so `1` vs `1.0` and re-ordered keys
/// both count as different.
pub fn value_equal_strict(a: &JsonValue, b: &JsonValue) -> bool {
    match (a, b) {
        (JsonValue::Number(x), JsonValue::Number(y)) => x.text == y.text,
        (JsonValue::Array(x), JsonValue::Array(y)) => {
            x.len() == y.len()
                && x.iter()
                    .zip(y.iter())
                    .all(|(va, vb)| value_equal_strict(va, vb))
        }
        (JsonValue::Object(x), JsonValue::Object(y)) => {
            x.len() == y.len()
                && x.iter()
                    .zip(y.iter())
                    .all(|((ka, va), (kb, vb))| ka == kb && value_equal_strict(va, vb))
        }
        _ => a == b,
    }
}

/// Dispatches between [`value_equal`] and [`value_equal_strict`] on the
/// scorer's audit flag.
pub fn values_match(a: &JsonValue, b: &JsonValue, strict: bool) -> bool {
    if strict {
        value_equal_strict(a, b)
    } else {
        value_equal(a, b)
    }
}

/// Parses a JSON document into a [`JsonValue`].
pub fn parse_value(text: &str) -> Result<JsonValue, serde_json::Error> {
    serde_json::from_str::<serde_json::Value>(text).map(JsonValue::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(text: &str) -> JsonValue {
        parse_value(text).unwrap()
    }

    #[test]
    fn test_number_spellings_equal() {
        assert_eq!(v("1"), v("1.0"));
        assert_eq!(v("1"), v("1e0"));
        assert_eq!(v("0.5"), v("5e-1"));
        assert_ne!(v("1"), v("2"));
    }

    #[test]
    fn test_object_key_order_ignored() {
        assert_eq!(v(r#"{"a":1,"b":2}"#), v(r#"{"b":2,"a":1}"#));
        assert_ne!(v(r#"{"a":1}"#), v(r#"{"a":1,"b":2}"#));
    }

    #[test]
    fn test_strings_compare_exactly() {
        assert_ne!(v(r#""SF""#), v(r#""sf""#));
        assert_ne!(v(r#""1""#), v("1"));
    }

    #[test]
    fn test_nested_structures() {
        assert_eq!(
            v(r#"{"pos":[1,2.0],"meta":{"ok":true}}"#),
            v(r#"{"meta":{"ok":true},"pos":[1.0,2]}"#)
        );
        assert_ne!(v("[1,2]"), v("[2,1]"));
    }

    #[test]
    fn test_strict_distinguishes_number_spelling() {
        assert!(value_equal(&v("1"), &v("1.0")));
        assert!(!value_equal_strict(&v("1"), &v("1.0")));
        assert!(value_equal_strict(&v("1"), &v("1")));
    }

    #[test]
    fn test_strict_objects_are_order_sensitive() {
        let ab = v(r#"{"a":1,"b":2}"#);
        let ba = v(r#"{"b":2,"a":1}"#);
        assert!(value_equal(&ab, &ba));
        assert!(!value_equal_strict(&ab, &ba));
        assert!(value_equal_strict(&ab, &ab.clone()));
    }

    #[test]
    fn test_values_match_dispatch() {
        assert!(values_match(&v("1"), &v("1.0"), false));
        assert!(!values_match(&v("1"), &v("1.0"), true));
    }

    fn arb_json() -> impl Strategy<Value = JsonValue> {
        let leaf = prop_oneof![
            Just(JsonValue::Null),
            any::<bool>().prop_map(JsonValue::from),
            (-1_000_000i64..1_000_000).prop_map(JsonValue::from),
            (-1e9f64..1e9).prop_map(JsonValue::from),
            "[a-z]{0,8}".prop_map(JsonValue::from),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(JsonValue::Array),
                prop::collection::vec(("[a-z]{1,4}", inner), 0..4).prop_map(|pairs| {
                    JsonValue::Object(pairs.into_iter().collect())
                }),
            ]
        })
    }

    fn roundtrip(v: &JsonValue) -> JsonValue {
        parse_value(&serde_json::to_string(v).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn prop_equality_reflexive(a in arb_json()) {
            prop_assert!(value_equal(&a, &a));
            prop_assert!(value_equal_strict(&a, &a));
        }

        #[test]
        fn prop_equality_symmetric(a in arb_json(), b in arb_json()) {
            prop_assert_eq!(value_equal(&a, &b), value_equal(&b, &a));
            prop_assert_eq!(value_equal_strict(&a, &b), value_equal_strict(&b, &a));
        }

        // Serialization may change a number's spelling (1.0 prints as 1), so the
        // chain a, roundtrip(a), roundtrip(roundtrip(a)) exercises transitivity
        // across genuinely different spellings.
        #[test]
        fn prop_equality_survives_roundtrip(a in arb_json()) {
            let b = roundtrip(&a);
            let c = roundtrip(&b);
            prop_assert!(value_equal(&a, &b));
            prop_assert!(value_equal(&b, &c));
            prop_assert!(value_equal(&a, &c));
        }
    }
}
