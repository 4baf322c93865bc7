//! Run configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use beris_core::Params;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    FullBeris,
    TrotterRate,
    EricksenLimit,
    XiEscape,
    PhaseMismatch,
    VortexDefects,
    OdePortrait,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::FullBeris,
        Experiment::TrotterRate,
        Experiment::EricksenLimit,
        Experiment::XiEscape,
        Experiment::PhaseMismatch,
        Experiment::VortexDefects,
        Experiment::OdePortrait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FullBeris => "full_beris",
            Experiment::TrotterRate => "trotter_rate",
            Experiment::EricksenLimit => "ericksen_limit",
            Experiment::XiEscape => "xi_escape",
            Experiment::PhaseMismatch => "phase_mismatch",
            Experiment::VortexDefects => "vortex_defects",
            Experiment::OdePortrait => "ode_portrait",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    /// Band-limited seeded data.
    Random,
    Zero,
    /// The uniform uniaxial state `s₊(e₁⊗e₁ - I/3)`.
    SPlusUniform,
}

/// Experiment-specific settings. Every field is optional; the README lists the
/// defaults of each experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Initial>,
    /// Fraction of the eigenvalue interval filled by random `Q` data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fill: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmax_sq: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_amp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_amp: Option<f64>,
    /// Steps between diagnostic rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_every: Option<u64>,
    /// Time between diagnostic rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Also run the `xi = 0` control.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_radii: Option<Vec<f64>>,
    /// Compare the coupled limit solver with the characteristic oracle instead of the
    /// defect growth study.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_check: Option<bool>,
    /// Repeat the run at `dt/2` and `dt/4` and report the observed order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_convergence: Option<bool>,
    /// Lattice resolution of initial eigenvalue pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub params: Params,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Steps between field snapshots; 0 writes only the final state.
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default)]
    pub options: Options,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, HarnessError> {
        serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("malformed config: {e}")))
    }

    pub fn from_value(v: Value) -> Result<RunConfig, HarnessError> {
        serde_json::from_value(v)
            .map_err(|e| HarnessError::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        RunConfig::from_json(&read_config(path)?)
    }

    /// Checks the run-level settings; module preconditions are checked by the experiments.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.params.validate()?;
        let bad = |m: String| Err(HarnessError::Core(beris_core::Error::Validation(m)));
        if self.n < 8 || !self.n.is_multiple_of(2) {
            return bad(format!("n must be even and at least 8 (n = {})", self.n));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt > 0 violated (dt = {})", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end >= 0 violated (t_end = {})", self.t_end));
        }
        Ok(())
    }
}

pub fn read_config(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))
}

const TOP_KEYS: [&str; 5] = ["n", "dt", "t_end", "seed", "snapshot_every"];
const PARAM_KEYS: [&str; 6] = ["eps", "xi", "kappa", "a", "b", "c"];
const OPTION_KEYS: [&str; 9] = [
    "fill",
    "kmax_sq",
    "u_amp",
    "q_amp",
    "sample_every",
    "sample_dt",
    "lambda",
    "oracle_dt",
    "pairs",
];
const INTEGER_KEYS: [&str; 6] = [
    "n",
    "seed",
    "snapshot_every",
    "kmax_sq",
    "sample_every",
    "pairs",
];

/// Sets a numeric key in a raw config. Bare names are looked up among the top-level,
/// `params` and `options` keys; `section.key` addresses one directly.
pub fn set_numeric(root: &mut Value, key: &str, v: f64) -> Result<(), HarnessError> {
    let (section, name) = match key.split_once('.') {
        Some((s, k)) if s == "params" || s == "options" => (Some(s), k),
        Some(_) => return Err(HarnessError::Config(format!("unknown config key '{key}'"))),
        None if TOP_KEYS.contains(&key) => (None, key),
        None if PARAM_KEYS.contains(&key) => (Some("params"), key),
        None if OPTION_KEYS.contains(&key) => (Some("options"), key),
        None => {
            return Err(HarnessError::Config(format!(
                "'{key}' is not a numeric config key"
            )))
        }
    };
    let known = match section {
        None => TOP_KEYS.contains(&name),
        Some("params") => PARAM_KEYS.contains(&name),
        _ => OPTION_KEYS.contains(&name),
    };
    if !known {
        return Err(HarnessError::Config(format!(
            "'{key}' is not a numeric config key"
        )));
    }
    let number = if INTEGER_KEYS.contains(&name) {
        if v.fract() != 0.0 || v < 0.0 {
            return Err(HarnessError::Config(format!(
                "'{key}' takes a non-negative integer, got {v}"
            )));
        }
        Value::from(v as u64)
    } else {
        serde_json::Number::from_f64(v)
            .map(Value::Number)
            .ok_or_else(|| HarnessError::Config(format!("non-finite value {v} for '{key}'")))?
    };
    let obj = root
        .as_object_mut()
        .ok_or_else(|| HarnessError::Config("config must be a JSON object".into()))?;
    let target = match section {
        None => obj,
        Some(s) => obj
            .entry(s)
            .or_insert_with(|| Value::Object(Default::default()))
            .as_object_mut()
            .ok_or_else(|| HarnessError::Config(format!("'{s}' must be an object")))?,
    };
    target.insert(name.to_string(), number);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"experiment": "full_beris", "n": 8, "dt": 0.01, "t_end": 0.1}"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.experiment, Experiment::FullBeris);
        assert_eq!(c.params, Params::default());
        assert_eq!(c.options, Options::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
        c.validate().unwrap();
    }

    #[test]
    fn partial_params_keep_defaults() {
        let c = RunConfig::from_json(
            r#"{"experiment": "xi_escape", "n": 8, "dt": 0.01, "t_end": 1, "params": {"xi": 1}}"#,
        )
        .unwrap();
        assert_eq!(c.params, Params::default().with_xi(1.0));
    }

    #[test]
    fn unknown_experiment_and_keys_are_config_errors() {
        for text in [
            r#"{"experiment": "nope", "n": 8, "dt": 0.01, "t_end": 1}"#,
            r#"{"experiment": "full_beris", "n": 8, "dt": 0.01, "t_end": 1, "colour": 3}"#,
            r#"{"experiment": "full_beris", "n": 8, "dt": 0.01, "t_end": 1, "options": {"lamda": 1}}"#,
            "{",
        ] {
            assert!(
                matches!(RunConfig::from_json(text), Err(HarnessError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn negative_c_is_a_validation_error_naming_the_constraint() {
        let c = RunConfig::from_json(
            r#"{"experiment": "full_beris", "n": 8, "dt": 0.01, "t_end": 1, "params": {"c": -1}}"#,
        )
        .unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("c > 0"), "{e}");
    }

    #[test]
    fn set_numeric_resolves_sections() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        set_numeric(&mut v, "eps", 0.1).unwrap();
        set_numeric(&mut v, "lambda", 1e-3).unwrap();
        set_numeric(&mut v, "n", 16.0).unwrap();
        set_numeric(&mut v, "options.kmax_sq", 4.0).unwrap();
        let c = RunConfig::from_value(v.clone()).unwrap();
        assert_eq!(c.params.eps, 0.1);
        assert_eq!(c.options.lambda, Some(1e-3));
        assert_eq!(c.options.kmax_sq, Some(4));
        assert_eq!(c.n, 16);
        assert!(set_numeric(&mut v, "n", 16.5).is_err());
        assert!(set_numeric(&mut v, "experiment", 1.0).is_err());
        assert!(set_numeric(&mut v, "params.flow", 1.0).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.options.eps_list = Some(vec![0.2, 0.1]);
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
