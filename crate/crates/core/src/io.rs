//! Weight, subset and order files.
//!
//! Weights come as CSV (`id,weight` or a lone `weight` column, header
//! required) or JSON (an array of numbers, or of `{"id", "weight"}`
//! objects). Subsets and orders are JSON arrays of ids or zero-based indices.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::model::{validate_weights, ModelError, SubsetSpec, Tolerances, WeightVector};

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl InputError {
    pub fn name(&self) -> &'static str {
        match self {
            InputError::Io { .. } => "IoError",
            InputError::Format(_) => "FormatError",
            InputError::Model(e) => e.name(),
        }
    }
}

fn read(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Raw rows of a weight file, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWeights {
    pub weights: Vec<f64>,
    pub ids: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonWeight {
    Plain(f64),
    Labelled { id: Value, weight: f64 },
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses weight-file text; JSON when it starts with `[`, CSV otherwise.
pub fn parse_weights(text: &str) -> Result<RawWeights, InputError> {
    if text.trim_start().starts_with('[') {
        parse_weights_json(text)
    } else {
        parse_weights_csv(text)
    }
}

fn parse_weights_json(text: &str) -> Result<RawWeights, InputError> {
    let rows: Vec<JsonWeight> =
        serde_json::from_str(text).map_err(|e| InputError::Format(format!("weights JSON: {e}")))?;
    let mut weights = Vec::with_capacity(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    let mut labelled = 0;
    for row in rows {
        match row {
            JsonWeight::Plain(w) => weights.push(w),
            JsonWeight::Labelled { id, weight } => {
                labelled += 1;
                weights.push(weight);
                ids.push(id_string(&id));
            }
        }
    }
    let ids = match labelled {
        0 => None,
        l if l == weights.len() => Some(ids),
        _ => return Err(InputError::Format("weights JSON mixes numbers and objects".into())),
    };
    Ok(RawWeights { weights, ids })
}

fn parse_weights_csv(text: &str) -> Result<RawWeights, InputError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| InputError::Format(format!("weights CSV header: {e}")))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let weight_col = column("weight")
        .ok_or_else(|| InputError::Format("weights CSV needs a `weight` column header".into()))?;
    let id_col = column("id");

    let mut weights = Vec::new();
    let mut ids = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| InputError::Format(format!("weights CSV: {e}")))?;
        let field = record.get(weight_col).unwrap_or("");
        let w: f64 = field
            .parse()
            .map_err(|_| InputError::Format(format!("row {}: invalid weight {field:?}", line + 1)))?;
        weights.push(w);
        if let Some(c) = id_col {
            ids.push(record.get(c).unwrap_or("").to_string());
        }
    }
    Ok(RawWeights {
        weights,
        ids: id_col.map(|_| ids),
    })
}

/// Reads and validates a weight file for sample size `k`.
pub fn load_weights(path: &Path, k: usize, normalize: bool) -> Result<WeightVector, InputError> {
    let raw = parse_weights(&read(path)?)?;
    let wv = validate_weights(&raw.weights, k, normalize, &Tolerances::DEFAULT)?;
    Ok(match raw.ids {
        Some(ids) => wv.with_ids(ids)?,
        None => wv,
    })
}

/// Resolves a JSON array of ids or indices against `wv`.
pub fn parse_index_list(text: &str, wv: &WeightVector) -> Result<Vec<usize>, InputError> {
    let items: Vec<Value> =
        serde_json::from_str(text).map_err(|e| InputError::Format(format!("expected a JSON array: {e}")))?;
    items
        .iter()
        .map(|item| match item {
            Value::String(s) => Ok(wv.index_of(s)?),
            Value::Number(num) => {
                let i = num
                    .as_u64()
                    .ok_or_else(|| InputError::Format(format!("invalid index {num}")))? as usize;
                if i >= wv.n() {
                    return Err(ModelError::IndexOutOfRange { index: i, n: wv.n() }.into());
                }
                Ok(i)
            }
            other => Err(InputError::Format(format!("expected id or index, got {other}"))),
        })
        .collect()
}

pub fn load_subset(path: &Path, wv: &WeightVector) -> Result<SubsetSpec, InputError> {
    let members = parse_index_list(&read(path)?, wv)?;
    Ok(SubsetSpec::new(members, wv.n())?)
}

/// Reads an order file; permutation checks happen in the sampler.
pub fn load_order(path: &Path, wv: &WeightVector) -> Result<Vec<usize>, InputError> {
    parse_index_list(&read(path)?, wv)
}

/// Parses `"0.25"`, `"2/15"` or `"1/3-1/5"` style rationals (sums and
/// differences of fractions).
pub fn parse_fraction(text: &str) -> Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty number".into());
    }
    let mut total = 0.0;
    let mut term_start = 0;
    let bytes = s.as_bytes();
    let mut i = 1;
    let mut terms = Vec::new();
    while i <= bytes.len() {
        let at_sign = i < bytes.len()
            && (bytes[i] == b'+' || bytes[i] == b'-')
            && !matches!(bytes[i - 1], b'e' | b'E' | b'/');
        if i == bytes.len() || at_sign {
            terms.push(&s[term_start..i]);
            term_start = i;
        }
        i += 1;
    }
    for term in terms {
        let value = match term.split_once('/') {
            Some((num, den)) => {
                let num: f64 = num.parse().map_err(|_| format!("invalid numerator in {text:?}"))?;
                let den: f64 = den.parse().map_err(|_| format!("invalid denominator in {text:?}"))?;
                if den == 0.0 {
                    return Err(format!("zero denominator in {text:?}"));
                }
                num / den
            }
            None => term.parse::<f64>().map_err(|_| format!("invalid number {text:?}"))?,
        };
        total += value;
    }
    if !total.is_finite() {
        return Err(format!("non-finite number {text:?}"));
    }
    Ok(total)
}
