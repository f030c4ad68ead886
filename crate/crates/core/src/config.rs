//! JSON experiment configuration.
//!
//! A configuration file is one JSON object with a required `seed` and four
//! optional tables, `noise`, `drift`, `system` and `study`. Every field
//! other than `seed` has a default, listed on the field. Unknown keys are
//! rejected.
//!
//! ```json
//! {
//!   "seed": 42,
//!   "noise":  { "dim": 1, "alpha": 1.5, "mode": "isotropic" },
//!   "drift":  { "kind": "holder_mean", "a": 1.0, "c": 0.5, "beta": 0.75 },
//!   "system": { "particles": 256, "delta": 0.0625, "horizon": 1.0 },
//!   "study":  { "replications": 16, "error_p": 1.0 }
//! }
//! ```
//!
//! Overrides use dotted keys, `system.particles=512`; the value is parsed as
//! JSON and falls back to a plain string.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::drift::{mollify_drift, DriftSpec};
use crate::harness::{
    Band, EmpiricalRateConfig, StudyConfig, StudyKind, DEFAULT_PROXY_FACTOR, DEFAULT_REFINEMENT,
};
use crate::integrator::{InitialLaw, SystemConfig};
use crate::noise::{SpectralMode, StableParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Default 1.
    pub dim: usize,
    /// Default 1.5.
    pub alpha: f64,
    /// `isotropic` (default) or `per_axis`.
    pub mode: SpectralMode,
    /// Default 1.
    pub scale: f64,
    /// Sample count for `noise-check`, default 200000.
    pub check_samples: usize,
    /// Time increment for `noise-check`, default 1.
    pub check_dt: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            dim: 1,
            alpha: 1.5,
            mode: SpectralMode::Isotropic,
            scale: 1.0,
            check_samples: 200_000,
            check_dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftName {
    Zero,
    HolderMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    /// `holder_mean` (default) or `zero`.
    pub kind: DriftName,
    /// Hölder amplitude, default 1.
    pub a: f64,
    /// Interaction amplitude, default 0.5.
    pub c: f64,
    /// Default 0.75.
    pub beta: f64,
    /// Default 1.
    pub kappa: f64,
    /// Mollification level; unset by default.
    pub mollify_n: Option<u32>,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection {
            kind: DriftName::HolderMean,
            a: 1.0,
            c: 0.5,
            beta: 0.75,
            kappa: 1.0,
            mollify_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    /// Default 256.
    pub particles: usize,
    /// Default 0.0625.
    pub delta: f64,
    /// Default 1.
    pub horizon: f64,
    /// Noise cells per step, default 1.
    pub substeps: u32,
    /// Default `{"law": "gaussian", "mean": 0, "sd": 1}`.
    pub init: InitialLaw,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            particles: 256,
            delta: 0.0625,
            horizon: 1.0,
            substeps: 1,
            init: InitialLaw::Gaussian { mean: 0.0, sd: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Defaults per study: `study-dt` and `study-moment` use `2^-4 … 2^-9`,
    /// `study-n` uses `16, 64, 256, 1024`, `study-emprate` uses
    /// `32, 64, …, 2048` and `study-mollify` uses `2, 4, …, 32`.
    pub grid: Option<Vec<f64>>,
    /// Default 1.
    pub error_p: f64,
    /// Default `(p + α) / 2`; `4p` for `study-emprate`.
    pub moment_q: Option<f64>,
    /// Default 16.
    pub replications: usize,
    /// `study-dt` reference refinement below the finest step, default 4.
    pub refinement: u32,
    /// `study-n` reference size, default four times the largest grid value.
    pub reference_particles: Option<usize>,
    /// Override for the lower end of the acceptance band.
    pub band_lo: Option<f64>,
    /// Override for the upper end of the acceptance band.
    pub band_hi: Option<f64>,
    /// `study-emprate` sampling law, default `system.init`.
    pub law: Option<InitialLaw>,
    /// `study-emprate` one-dimensional proxy multiplier, default 16.
    pub proxy_factor: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            grid: None,
            error_p: 1.0,
            moment_q: None,
            replications: 16,
            refinement: DEFAULT_REFINEMENT,
            reference_particles: None,
            band_lo: None,
            band_hi: None,
            law: None,
            proxy_factor: DEFAULT_PROXY_FACTOR,
        }
    }
}

pub fn default_grid(kind: StudyKind) -> Vec<f64> {
    match kind {
        StudyKind::StepSize | StudyKind::Moment => (4..=9).map(|k| 2f64.powi(-k)).collect(),
        StudyKind::Chaos => vec![16.0, 64.0, 256.0, 1024.0],
        StudyKind::EmpiricalRate => (5..=11).map(|k| f64::from(1u32 << k)).collect(),
        StudyKind::Mollification => vec![2.0, 4.0, 8.0, 16.0, 32.0],
    }
}

/// Applies one `dotted.key=value` assignment to a raw JSON document.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    for (i, part) in path.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{key}`: `{}` is not a table",
                path[..i].join(".")
            ))
        })?;
        if i + 1 == path.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one segment")
}

impl ExperimentConfig {
    /// Parses `text`, applies overrides in order, then the seed override.
    pub fn load(text: &str, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !doc.is_object() {
            return Err(Error::Config("top level must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if let Some(seed) = seed {
            doc["seed"] = Value::from(seed);
        }
        if doc.get("seed").is_none() {
            return Err(Error::Config("`seed` is required".into()));
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    /// The configuration with all defaults filled in.
    pub fn resolved(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn noise_params(&self) -> Result<StableParams> {
        let n = &self.noise;
        StableParams::new(n.dim, n.alpha, n.mode, n.scale)
    }

    pub fn drift_spec(&self) -> Result<DriftSpec> {
        let d = &self.drift;
        let dim = self.noise.dim;
        let spec = match d.kind {
            DriftName::Zero => DriftSpec::zero(dim),
            DriftName::HolderMean => DriftSpec::holder_mean(dim, d.beta, d.a, d.c)?,
        };
        let spec = DriftSpec {
            beta: d.beta,
            ..spec
        }
        .with_kappa(d.kappa);
        spec.validate_with_alpha(self.noise.alpha)?;
        match d.mollify_n {
            Some(n) => mollify_drift(&spec, n),
            None => Ok(spec),
        }
    }

    pub fn system_config(&self) -> Result<SystemConfig> {
        let s = &self.system;
        let cfg = SystemConfig {
            particles: s.particles,
            delta: s.delta,
            horizon: s.horizon,
            substeps: s.substeps,
            drift: self.drift_spec()?,
            noise: self.noise_params()?,
            init: s.init.clone(),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn grid(&self, kind: StudyKind) -> Vec<f64> {
        self.study
            .grid
            .clone()
            .unwrap_or_else(|| default_grid(kind))
    }

    fn band(&self) -> Option<Band> {
        let s = &self.study;
        (s.band_lo.is_some() || s.band_hi.is_some()).then_some(Band {
            lo: s.band_lo,
            hi: s.band_hi,
        })
    }

    /// Study configuration for every study except `study-emprate`.
    pub fn study_config(&self, kind: StudyKind) -> Result<StudyConfig> {
        let s = &self.study;
        let cfg = StudyConfig {
            base: self.system_config()?,
            grid: self.grid(kind),
            error_p: s.error_p,
            moment_q: s.moment_q,
            replications: s.replications,
            refinement: s.refinement,
            reference_particles: s.reference_particles,
            band: self.band(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn emprate_config(&self) -> Result<EmpiricalRateConfig> {
        let s = &self.study;
        let cfg = EmpiricalRateConfig {
            law: s.law.clone().unwrap_or_else(|| self.system.init.clone()),
            dim: self.noise.dim,
            grid: self.grid(StudyKind::EmpiricalRate),
            p: s.error_p,
            q: s.moment_q,
            replications: s.replications,
            seed: self.seed,
            proxy_factor: s.proxy_factor,
            band: self.band(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full validation of the system and the generic study settings.
    pub fn validate(&self) -> Result<()> {
        self.study_config(StudyKind::StepSize).map(|_| ())
    }
}
