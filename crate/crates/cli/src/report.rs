//! JSON reports written by `--report`.

use serde::Serialize;
use serde_json::Value;
use spectral_denoise::{DenoiseResult, VERSION};

pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Serialize)]
pub struct Flags {
    pub rank_zero: bool,
    pub amse_clamped: bool,
    pub clipped: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub shape: [usize; 2],
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub amse_estimate: f64,
    pub clipped_components: Vec<usize>,
    pub flags: Flags,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, Value>,
}

impl Report {
    pub fn from_result(command: &'static str, config: Value, res: &DenoiseResult) -> Self {
        let sp = &res.spikes;
        let g = &res.geometry;
        let weighted = g.rank == sp.rank;
        Self {
            version: VERSION,
            command,
            config,
            shape: [res.x_hat.nrows(), res.x_hat.ncols()],
            rank: sp.rank,
            singular_values: sp.lambda.clone(),
            t: sp.t.clone(),
            c: sp.c.clone(),
            c_tilde: sp.c_tilde.clone(),
            alpha: weighted.then(|| g.alpha.clone()),
            beta: weighted.then(|| g.beta.clone()),
            mu: weighted.then_some(g.mu),
            nu: weighted.then_some(g.nu),
            amse_estimate: res.amse_estimate,
            clipped_components: res.clipped_components.clone(),
            flags: Flags {
                rank_zero: res.flags.rank_zero,
                amse_clamped: res.flags.amse_clamped,
                clipped: !res.clipped_components.is_empty(),
            },
            extra: serde_json::Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).expect("report values serialize"));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

impl Report {
    /// Report for an estimator that exposes only its rank and risk estimate.
    pub fn summary(command: &'static str, config: Value, shape: [usize; 2], rank: usize, amse: f64) -> Self {
        Self {
            version: VERSION,
            command,
            config,
            shape,
            rank,
            singular_values: Vec::new(),
            t: Vec::new(),
            c: Vec::new(),
            c_tilde: Vec::new(),
            alpha: None,
            beta: None,
            mu: None,
            nu: None,
            amse_estimate: amse,
            clipped_components: Vec::new(),
            flags: Flags {
                rank_zero: rank == 0,
                amse_clamped: false,
                clipped: false,
            },
            extra: serde_json::Map::new(),
        }
    }
}
