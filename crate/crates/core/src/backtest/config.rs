use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::QuantileMode;
use crate::copula::DEFAULT_SAMPLES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MethodId {
    SystemRaw,
    SystemCqr,
    SystemCacp,
    Copula,
    CopulaCqr,
    CopulaCacp,
}

/// Source of the raw interval a method starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    System,
    Copula,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Calibration {
    Raw,
    Cqr,
    Cacp,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::SystemRaw,
        MethodId::SystemCqr,
        MethodId::SystemCacp,
        MethodId::Copula,
        MethodId::CopulaCqr,
        MethodId::CopulaCacp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::SystemRaw => "SYSTEM_RAW",
            MethodId::SystemCqr => "SYSTEM_CQR",
            MethodId::SystemCacp => "SYSTEM_CACP",
            MethodId::Copula => "COPULA",
            MethodId::CopulaCqr => "COPULA_CQR",
            MethodId::CopulaCacp => "COPULA_CACP",
        }
    }

    pub fn family(self) -> Family {
        match self {
            MethodId::SystemRaw | MethodId::SystemCqr | MethodId::SystemCacp => Family::System,
            _ => Family::Copula,
        }
    }

    pub fn calibration(self) -> Calibration {
        match self {
            MethodId::SystemRaw | MethodId::Copula => Calibration::Raw,
            MethodId::SystemCqr | MethodId::CopulaCqr => Calibration::Cqr,
            MethodId::SystemCacp | MethodId::CopulaCacp => Calibration::Cacp,
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Rolling day-ahead evaluation settings. Every field has a default, so an
/// empty TOML file is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub warmup_months: u32,
    /// Overrides `warmup_months` when set.
    pub warmup_days: Option<u32>,
    pub alphas: Vec<f64>,
    /// Monte Carlo draws per hour.
    pub samples: usize,
    /// Lagged fleet values in the context vector.
    pub lags: usize,
    pub gamma_grid: Vec<f64>,
    pub seed: u64,
    pub methods: Vec<MethodId>,
    pub conformal_mode: QuantileMode,
    pub validation_days: u32,
    /// Put the validation week back into the calibration pool after gamma
    /// selection.
    pub merge_validation: bool,
    /// Trailing window for correlation refits; all history when unset.
    pub correlation_window_days: Option<u32>,
    /// Replace the fitted correlation with the identity.
    pub independent_copula: bool,
    /// Fixed local-time offset; derived from mean site longitude when unset.
    pub utc_offset: Option<i32>,
    /// Score and calibrate only hours inside the estimated generating window.
    pub daylight_only: bool,
    pub sun_window_days: usize,
    /// Regions to evaluate; all regions in the site metadata when empty.
    pub regions: Vec<String>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            warmup_months: 6,
            warmup_days: None,
            alphas: vec![0.1, 0.2, 0.3, 0.4],
            samples: DEFAULT_SAMPLES,
            lags: crate::context::DEFAULT_LAGS,
            gamma_grid: vec![0.01, 0.05, 0.1, 0.5, 1.0, 5.0],
            seed: 0,
            methods: MethodId::ALL.to_vec(),
            conformal_mode: QuantileMode::Plain,
            validation_days: 7,
            merge_validation: false,
            correlation_window_days: None,
            independent_copula: false,
            utc_offset: None,
            daylight_only: false,
            sun_window_days: 7,
            regions: Vec::new(),
        }
    }
}

impl ProtocolConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alphas.is_empty() {
            return bad("alphas must not be empty".into());
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if !(*a > 0.0 && *a < 1.0) {
                return bad(format!("alpha {a} outside (0, 1)"));
            }
            if self.alphas[..i].contains(a) {
                return bad(format!("alpha {a} listed twice"));
            }
        }
        if self.gamma_grid.is_empty() {
            return bad("gamma_grid must not be empty".into());
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return bad(format!("gamma {g} must be finite and >= 0"));
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.validation_days == 0 {
            return bad("validation_days must be at least 1".into());
        }
        if self.warmup_days.is_none() && self.warmup_months == 0 {
            return bad("warmup must be positive".into());
        }
        if self.warmup_days == Some(0) {
            return bad("warmup_days must be positive".into());
        }
        if self.correlation_window_days == Some(0) {
            return bad("correlation_window_days must be positive".into());
        }
        if self.sun_window_days == 0 {
            return bad("sun_window_days must be positive".into());
        }
        Ok(())
    }

    pub fn uses(&self, family: Family) -> bool {
        self.methods.iter().any(|m| m.family() == family)
    }
}
