//! File formats. Every JSON artifact carries `"schema": "mixvol/1"` and a
//! `kind` tag; writers emit pretty JSON with a trailing newline so that
//! read-write cycles are byte-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchicalModel, RatioSlice};
use crate::localvol::LocalVolSurface;
use crate::market::{LogMoneynessDensity, OptionChain};
use crate::mc::{McEstimate, PathBatch, PayoffSpec};
use crate::mixture::MixtureModel;

pub const SCHEMA: &str = "mixvol/1";

fn check_envelope(schema: &str, kind: &str, expected: &str) -> Result<()> {
    if schema != SCHEMA {
        return Err(Error::Parse(format!(
            "unsupported schema {schema:?}, expected {SCHEMA:?}"
        )));
    }
    if kind != expected {
        return Err(Error::Parse(format!(
            "expected kind {expected:?}, found {kind:?}"
        )));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("cannot parse {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| Error::Parse(format!("cannot write {}: {e}", path.display())))
}

/// Market input: option chains per maturity plus the rate curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainsFile {
    pub schema: String,
    pub kind: String,
    pub t0: f64,
    pub x0: f64,
    /// Piecewise-constant forward rates as (time, rate) knots.
    pub rates: Vec<(f64, f64)>,
    pub chains: Vec<OptionChain>,
}

pub fn load_chains(path: &Path) -> Result<ChainsFile> {
    let file: ChainsFile = read_json(path)?;
    check_envelope(&file.schema, &file.kind, "chains")?;
    for c in &file.chains {
        c.validate()?;
    }
    Ok(file)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub kind: String,
    pub model: MixtureModel,
}

pub fn save_model(path: &Path, model: &MixtureModel) -> Result<()> {
    write_json(
        path,
        &ModelFile { schema: SCHEMA.into(), kind: "model".into(), model: model.clone() },
    )
}

pub fn load_model(path: &Path) -> Result<MixtureModel> {
    let file: ModelFile = read_json(path)?;
    check_envelope(&file.schema, &file.kind, "model")?;
    file.model.mixing.validate()?;
    Ok(file.model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub schema: String,
    pub kind: String,
    pub model: HierarchicalModel,
}

pub fn save_hierarchy(path: &Path, model: &HierarchicalModel) -> Result<()> {
    write_json(
        path,
        &HierarchyFile { schema: SCHEMA.into(), kind: "hierarchy".into(), model: model.clone() },
    )
}

pub fn load_hierarchy(path: &Path) -> Result<HierarchicalModel> {
    let file: HierarchyFile = read_json(path)?;
    check_envelope(&file.schema, &file.kind, "hierarchy")?;
    file.model.validate()?;
    Ok(file.model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayoffFile {
    pub schema: String,
    pub kind: String,
    pub payoff: PayoffSpec,
}

pub fn load_payoff(path: &Path) -> Result<PayoffSpec> {
    let file: PayoffFile = read_json(path)?;
    check_envelope(&file.schema, &file.kind, "payoff")?;
    Ok(file.payoff)
}

pub fn save_payoff(path: &Path, payoff: &PayoffSpec) -> Result<()> {
    write_json(
        path,
        &PayoffFile { schema: SCHEMA.into(), kind: "payoff".into(), payoff: *payoff },
    )
}

/// Input for hierarchical builds: spot log-moneyness densities per
/// maturity and ratio densities per consecutive period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlicesFile {
    pub schema: String,
    pub kind: String,
    pub t0: f64,
    pub x0: f64,
    pub rates: Vec<(f64, f64)>,
    pub spot: Vec<LogMoneynessDensity>,
    pub ratio: Vec<RatioSlice>,
}

pub fn load_slices(path: &Path) -> Result<SlicesFile> {
    let file: SlicesFile = read_json(path)?;
    check_envelope(&file.schema, &file.kind, "slices")?;
    Ok(file)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceFile {
    pub schema: String,
    pub kind: String,
    pub price: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
}

pub fn save_price(path: &Path, price: f64, mc: Option<&McEstimate>) -> Result<()> {
    write_json(
        path,
        &PriceFile {
            schema: SCHEMA.into(),
            kind: "price".into(),
            price,
            std_error: mc.map(|m| m.std_error),
            n_paths: mc.map(|m| m.n_paths),
        },
    )
}

/// CSV rendering of a projected surface: first row holds the price grid,
/// each following row a time then the volatility (or variance) values.
/// Masked cells render as `nan`.
pub fn surface_csv(surface: &LocalVolSurface, as_variance: bool) -> String {
    let mut out = String::from("t");
    for x in &surface.space {
        out.push(',');
        out.push_str(&format!("{x}"));
    }
    out.push('\n');
    for (ti, &t) in surface.times.iter().enumerate() {
        out.push_str(&format!("{t}"));
        for (xi, _) in surface.space.iter().enumerate() {
            out.push(',');
            if surface.masked[ti][xi] {
                out.push_str("nan");
            } else {
                let v = surface.variance[ti][xi];
                let val = if as_variance { v } else { v.sqrt() };
                out.push_str(&format!("{val}"));
            }
        }
        out.push('\n');
    }
    out
}

/// CSV rendering of simulated paths: header `path,t...`, one row per path.
pub fn paths_csv(batch: &PathBatch) -> String {
    let mut out = String::from("path");
    for t in &batch.times {
        out.push(',');
        out.push_str(&format!("{t}"));
    }
    out.push('\n');
    for p in 0..batch.n_paths {
        out.push_str(&format!("{p}"));
        for ti in 0..batch.times.len() {
            out.push(',');
            out.push_str(&format!("{}", batch.value(p, ti)));
        }
        out.push('\n');
    }
    out
}
