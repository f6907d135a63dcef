//! JSON input files: scenario and quantizer bank.
//!
//! Matrices are arrays of rows. Infinite cell bounds are written as the
//! strings `"inf"` and `"-inf"`.

use std::fmt;
use std::path::{Path, PathBuf};

use qflqg_core::quantizer::{Cell, Interval, QuantizerBank, QuantizerSpec};
use qflqg_core::{validate_scenario, Matrix, RawScenario, ScenarioModel, Vector};
use serde_json::{json, Map, Value};

/// A problem with one key of an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub key: String,
    pub message: String,
}

impl FieldError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{}\": {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: not valid JSON: {source}", path.display())]
    Syntax { path: PathBuf, source: serde_json::Error },
    #[error("{}", fields.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("\n"))]
    Fields { fields: Vec<FieldError> },
}

impl InputError {
    /// Keys named by the error, if any.
    pub fn keys(&self) -> Vec<&str> {
        match self {
            InputError::Fields { fields } => fields.iter().map(|f| f.key.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

pub fn read_json(path: &Path) -> Result<Value, InputError> {
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| InputError::Syntax { path: path.into(), source })
}

fn matrix_from_value(value: &Value) -> Result<Matrix, String> {
    let rows = value.as_array().ok_or("expected an array of rows")?;
    if rows.is_empty() {
        return Err("matrix has no rows".into());
    }
    let mut data = Vec::new();
    let mut width = None;
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| format!("row {i} is not an array"))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format!("row {i} has {} entries, expected {w}", row.len()));
            }
            _ => {}
        }
        for (j, v) in row.iter().enumerate() {
            let x = v.as_f64().ok_or_else(|| format!("entry ({i},{j}) is not a number"))?;
            data.push(x);
        }
    }
    let cols = width.unwrap_or(0);
    if cols == 0 {
        return Err("matrix has no columns".into());
    }
    Ok(Matrix::from_row_slice(rows.len(), cols, &data))
}

pub fn matrix_to_value(m: &Matrix) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::from(m.row(i).iter().copied().collect::<Vec<f64>>())).collect())
}

const SCENARIO_KEYS: [&str; 11] = ["A", "B", "C", "W", "V", "Sigma_x", "mu0", "Q1", "Q2", "R", "T"];
/// Accepted alternative spellings.
const ALIASES: [(&str, &str); 2] = [("Q", "Q1"), ("Q_f", "Q2")];
const IGNORED_KEYS: [&str; 4] = ["name", "description", "comment", "manifest_sha256"];

/// Parse a scenario object into unvalidated form, reporting every bad key.
pub fn parse_scenario(value: &Value) -> Result<RawScenario, Vec<FieldError>> {
    let obj = value.as_object().ok_or_else(|| vec![FieldError::new("<root>", "expected a JSON object")])?;
    let mut canonical: Map<String, Value> = Map::new();
    let mut errs = Vec::new();
    for (k, v) in obj {
        let key = ALIASES.iter().find(|(alias, _)| alias == k).map_or(k.as_str(), |(_, target)| target);
        if SCENARIO_KEYS.contains(&key) {
            if canonical.insert(key.to_string(), v.clone()).is_some() {
                errs.push(FieldError::new(key, "given more than once (directly and through an alias)"));
            }
        } else if !IGNORED_KEYS.contains(&k.as_str()) {
            errs.push(FieldError::new(k.as_str(), "unknown key"));
        }
    }
    let mut matrix = |key: &str| -> Matrix {
        match canonical.get(key) {
            None => {
                errs.push(FieldError::new(key, "missing"));
                Matrix::zeros(0, 0)
            }
            Some(v) => matrix_from_value(v).unwrap_or_else(|e| {
                errs.push(FieldError::new(key, e));
                Matrix::zeros(0, 0)
            }),
        }
    };
    let a = matrix("A");
    let b = matrix("B");
    let c = matrix("C");
    let w = matrix("W");
    let v = matrix("V");
    let sigma_x = matrix("Sigma_x");
    let q1 = matrix("Q1");
    let q2 = matrix("Q2");
    let r = matrix("R");
    let mu0 = match canonical.get("mu0") {
        None => {
            errs.push(FieldError::new("mu0", "missing"));
            Vector::zeros(0)
        }
        Some(v) => match v.as_array().map(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>()) {
            Some(Some(xs)) => Vector::from_vec(xs),
            _ => {
                errs.push(FieldError::new("mu0", "expected an array of numbers"));
                Vector::zeros(0)
            }
        },
    };
    let horizon = match canonical.get("T") {
        None => {
            errs.push(FieldError::new("T", "missing"));
            0
        }
        Some(v) => v.as_i64().unwrap_or_else(|| {
            errs.push(FieldError::new("T", "expected an integer"));
            0
        }),
    };
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(RawScenario { a, b, c, w, v, sigma_x, mu0, q1, q2, r, horizon })
}

/// Parse and validate; `horizon_override` replaces `T` before validation.
pub fn scenario_from_value(value: &Value, horizon_override: Option<i64>) -> Result<ScenarioModel, InputError> {
    let mut raw = parse_scenario(value).map_err(|fields| InputError::Fields { fields })?;
    if let Some(t) = horizon_override {
        raw.horizon = t;
    }
    validate_scenario(&raw).map_err(|e| {
        let fields = if e.violations().is_empty() {
            vec![FieldError::new("<scenario>", e.to_string())]
        } else {
            e.violations().iter().map(|v| FieldError::new(v.key(), v.to_string())).collect()
        };
        InputError::Fields { fields }
    })
}

pub fn load_scenario(path: &Path, horizon_override: Option<i64>) -> Result<ScenarioModel, InputError> {
    scenario_from_value(&read_json(path)?, horizon_override)
}

pub fn scenario_to_value(model: &ScenarioModel) -> Value {
    json!({
        "A": matrix_to_value(model.a()),
        "B": matrix_to_value(model.b()),
        "C": matrix_to_value(model.c()),
        "W": matrix_to_value(model.w()),
        "V": matrix_to_value(model.v()),
        "Sigma_x": matrix_to_value(model.sigma_x()),
        "mu0": model.mu0().iter().copied().collect::<Vec<f64>>(),
        "Q1": matrix_to_value(model.q1()),
        "Q2": matrix_to_value(model.q2()),
        "R": matrix_to_value(model.r()),
        "T": model.horizon(),
    })
}

fn bound_from_value(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" | "+inf" | "Infinity" => Some(f64::INFINITY),
            "-inf" | "-Infinity" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

fn bound_to_value(x: f64) -> Value {
    if x == f64::INFINITY {
        Value::from("inf")
    } else if x == f64::NEG_INFINITY {
        Value::from("-inf")
    } else {
        Value::from(x)
    }
}

fn cell_from_value(v: &Value) -> Result<Cell, String> {
    let sides = v.as_array().ok_or("a cell is an array of [lo, hi] pairs")?;
    let mut bounds = Vec::with_capacity(sides.len());
    for (d, side) in sides.iter().enumerate() {
        let pair = side.as_array().filter(|p| p.len() == 2).ok_or_else(|| format!("side {d} is not a [lo, hi] pair"))?;
        let lo = bound_from_value(&pair[0]).ok_or_else(|| format!("side {d}: bad lower bound"))?;
        let hi = bound_from_value(&pair[1]).ok_or_else(|| format!("side {d}: bad upper bound"))?;
        bounds.push(Interval::new(lo, hi));
    }
    Ok(Cell::new(bounds))
}

/// Parse and validate a bank file. `bit_rate_override` replaces `bit_rate`.
pub fn bank_from_value(value: &Value, bit_rate_override: Option<u32>) -> Result<QuantizerBank, InputError> {
    let fail = |key: &str, msg: String| InputError::Fields { fields: vec![FieldError::new(key, msg)] };
    let obj = value.as_object().ok_or_else(|| fail("<root>", "expected a JSON object".into()))?;
    let bit_rate = match (bit_rate_override, obj.get("bit_rate")) {
        (Some(r), _) => r,
        (None, Some(v)) => v
            .as_u64()
            .and_then(|r| u32::try_from(r).ok())
            .ok_or_else(|| fail("bit_rate", "expected a positive integer".into()))?,
        (None, None) => return Err(fail("bit_rate", "missing".into())),
    };
    let list = obj
        .get("quantizers")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("quantizers", "expected an array".into()))?;
    let mut specs = Vec::with_capacity(list.len());
    let mut errs = Vec::new();
    for (i, q) in list.iter().enumerate() {
        let key = format!("quantizers[{i}]");
        let price = q.get("price").and_then(Value::as_f64);
        let cells = q.get("cells").and_then(Value::as_array);
        match (price, cells) {
            (Some(price), Some(cells)) => {
                let parsed: Result<Vec<Cell>, String> = cells.iter().map(cell_from_value).collect();
                match parsed {
                    Ok(cells) => specs.push(QuantizerSpec::new(i, cells, price)),
                    Err(e) => errs.push(FieldError::new(format!("{key}.cells"), e)),
                }
            }
            (None, _) => errs.push(FieldError::new(format!("{key}.price"), "missing or not a number")),
            (_, None) => errs.push(FieldError::new(format!("{key}.cells"), "missing or not an array")),
        }
    }
    if !errs.is_empty() {
        return Err(InputError::Fields { fields: errs });
    }
    QuantizerBank::new(specs, bit_rate).map_err(|e| fail("quantizers", e.to_string()))
}

pub fn load_bank(path: &Path, bit_rate_override: Option<u32>) -> Result<QuantizerBank, InputError> {
    bank_from_value(&read_json(path)?, bit_rate_override)
}

/// Bank file in the order the quantizers were supplied.
pub fn bank_to_value(bank: &QuantizerBank) -> Value {
    let mut qs: Vec<&QuantizerSpec> = bank.quantizers().iter().collect();
    qs.sort_by_key(|q| q.index);
    json!({
        "bit_rate": bank.bit_rate(),
        "quantizers": qs.iter().map(|q| json!({
            "price": q.price,
            "cells": q.cells.iter().map(|c| c.bounds.iter()
                .map(|iv| vec![bound_to_value(iv.lo), bound_to_value(iv.hi)])
                .collect::<Vec<_>>()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}
