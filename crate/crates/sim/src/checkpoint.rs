//! Policy checkpoints: a versioned JSON document with named arrays.

use std::path::Path;

use keysel_core::policy::{AttributeSlot, PolicyParams, PolicyShape, FEATURE_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{atomic_write, read_text};

pub const FORMAT: &str = "keysel-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Feature order of `w_select` and of each `u_instr` row.
    pub features: Vec<String>,
    /// Attribute slots whose nonempty subsets index the `u_instr` rows.
    pub instruction_slots: Vec<String>,
    pub colors: Vec<String>,
    pub k_max: usize,
    pub w_select: Vec<f64>,
    pub w_count: Vec<f64>,
    /// One row per instruction option.
    pub u_instr: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, colors: &[String]) -> Checkpoint {
        let shape = params.shape();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            instruction_slots: AttributeSlot::ALL.iter().map(|s| s.name().to_string()).collect(),
            colors: colors.to_vec(),
            k_max: shape.k_max,
            w_select: params.w_select.clone(),
            w_count: params.w_count.clone(),
            u_instr: params
                .u_instr
                .chunks(shape.features.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
        }
    }

    /// Parameters, after checking the document against the expected shape
    /// and color vocabulary.
    pub fn into_params(self, shape: PolicyShape, colors: &[String]) -> keysel_core::Result<PolicyParams> {
        use keysel_core::Error;
        let config = |key: &str, reason: String| Error::InvalidConfig {
            key: key.into(),
            reason,
        };
        if self.format != FORMAT || self.version != VERSION {
            return Err(config(
                "format",
                format!("expected {FORMAT} v{VERSION}, found {} v{}", self.format, self.version),
            ));
        }
        if self.features != FEATURE_NAMES {
            return Err(config(
                "features",
                format!("expected {FEATURE_NAMES:?}, found {:?}", self.features),
            ));
        }
        let slots: Vec<&str> = AttributeSlot::ALL.iter().map(|s| s.name()).collect();
        if self.instruction_slots != slots {
            return Err(config("instruction_slots", format!("expected {slots:?}")));
        }
        if self.colors != colors {
            return Err(config(
                "colors",
                format!("checkpoint has {:?}, config has {colors:?}", self.colors),
            ));
        }
        if self.k_max != self.w_count.len() {
            return Err(Error::ShapeMismatch {
                field: "k_max".into(),
                expected: self.w_count.len(),
                found: self.k_max,
            });
        }
        if let Some(row) = self.u_instr.iter().find(|r| r.len() != self.w_select.len()) {
            return Err(Error::ShapeMismatch {
                field: "u_instr".into(),
                expected: self.w_select.len(),
                found: row.len(),
            });
        }
        let params = PolicyParams {
            w_select: self.w_select,
            w_count: self.w_count,
            u_instr: self.u_instr.concat(),
        };
        params.check_shape(shape)?;
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(params)
    }
}

pub fn save(path: &Path, params: &PolicyParams, colors: &[String]) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint::new(params, colors)).map_err(|e| CliError::format(path, e))?;
    atomic_write(path, format!("{text}\n").as_bytes())
}

pub fn load(path: &Path, shape: PolicyShape, colors: &[String]) -> Result<PolicyParams> {
    let doc: Checkpoint = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::format(path, e))?;
    Ok(doc.into_params(shape, colors)?)
}
