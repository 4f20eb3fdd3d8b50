//! LLM prompt templates and response parsing.

use serde_json::Value;

use crate::{Error, Result};

pub const INTERACTION_TEMPLATE: &str = include_str!("../../templates/interaction_prompt.txt");
pub const DECOMPOSITION_TEMPLATE: &str = include_str!("../../templates/decomposition_prompt.txt");

pub const INTERACTION_WORD_BUDGET: usize = 25;
pub const PERSON_WORD_BUDGET: usize = 15;

/// Single-pass placeholder substitution: text produced by a substitution is
/// never rescanned, and unknown `{...}` sequences are left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        for (key, value) in values {
            let token = format!("{{{key}}}");
            if rest.starts_with(&token) {
                out.push_str(value);
                rest = &rest[token.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

/// Request for `m` new two-person descriptions in the style of `examples`.
pub fn build_interaction_prompt(theme: &str, tags: &[String], examples: &[String], m: usize) -> Result<String> {
    if m == 0 {
        return Err(Error::BadArgument("m must be at least 1".into()));
    }
    if examples.is_empty() {
        return Err(Error::BadArgument("at least one reference example is required".into()));
    }
    if theme.trim().is_empty() {
        return Err(Error::BadArgument("theme is empty".into()));
    }
    let tags = tags.join(", ");
    let k = examples.len().to_string();
    let m = m.to_string();
    let examples = examples.join("\n");
    Ok(fill(
        INTERACTION_TEMPLATE,
        &[("theme", theme), ("tags", &tags), ("k", &k), ("examples", &examples), ("m", &m)],
    ))
}

/// Request to split a two-person description into one line per person.
pub fn build_decomposition_prompt(two_person_text: &str) -> Result<String> {
    let text = two_person_text.trim();
    if text.is_empty() {
        return Err(Error::BadArgument("two-person text is empty".into()));
    }
    Ok(fill(DECOMPOSITION_TEMPLATE, &[("two-person text", text)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    ArrayOfStrings,
    PersonPair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Descriptions(Vec<String>),
    Pair(String, String),
}

fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(inner) = t.strip_prefix("```") {
        let inner = inner.strip_suffix("```").unwrap_or(inner);
        let inner = inner.strip_prefix("json").unwrap_or(inner);
        return inner.trim();
    }
    t
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn nonempty(v: &Value, what: &str) -> Result<String> {
    let s = v
        .as_str()
        .ok_or_else(|| Error::MalformedResponse(format!("{what} is not a string")))?
        .trim();
    if s.is_empty() {
        return Err(Error::MalformedResponse(format!("{what} is empty")));
    }
    Ok(s.to_string())
}

fn check_budget(s: &str, budget: usize) {
    let n = word_count(s);
    if n > budget {
        log::warn!("LLM output has {n} words (budget {budget}): {s:?}");
    }
}

/// Strict JSON parse of an LLM reply. A surrounding markdown code fence is
/// tolerated. Over-budget strings are kept with a warning.
pub fn parse_llm_descriptions(raw: &str, expected: Expected) -> Result<Parsed> {
    let v: Value = serde_json::from_str(strip_fence(raw)).map_err(|e| Error::MalformedResponse(e.to_string()))?;
    match expected {
        Expected::ArrayOfStrings => {
            let arr = v
                .as_array()
                .ok_or_else(|| Error::MalformedResponse("expected a JSON array".into()))?;
            if arr.is_empty() {
                return Err(Error::MalformedResponse("empty array".into()));
            }
            let out: Vec<String> = arr
                .iter()
                .enumerate()
                .map(|(i, s)| nonempty(s, &format!("element {i}")))
                .collect::<Result<_>>()?;
            out.iter().for_each(|s| check_budget(s, INTERACTION_WORD_BUDGET));
            Ok(Parsed::Descriptions(out))
        }
        Expected::PersonPair => {
            let obj = v
                .as_object()
                .filter(|o| o.len() == 1)
                .and_then(|o| o.get("1"))
                .and_then(Value::as_object)
                .ok_or_else(|| Error::MalformedResponse("expected {\"1\": {\"person1\": .., \"person2\": ..}}".into()))?;
            let p1 = nonempty(obj.get("person1").unwrap_or(&Value::Null), "person1")?;
            let p2 = nonempty(obj.get("person2").unwrap_or(&Value::Null), "person2")?;
            check_budget(&p1, PERSON_WORD_BUDGET);
            check_budget(&p2, PERSON_WORD_BUDGET);
            Ok(Parsed::Pair(p1, p2))
        }
    }
}
