use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};

/// Which correction steps run each iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Random flagging.
    #[serde(rename = "RLC", alias = "rlc")]
    Rlc,
    /// Flag the highest misannotation scores.
    #[serde(rename = "ALC", alias = "alc")]
    Alc,
    /// ALC preceded by auto-correction.
    #[serde(rename = "DALC", alias = "dalc")]
    Dalc,
    /// DALC followed by filtering.
    #[serde(rename = "ALC3", alias = "alc3")]
    Alc3,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Rlc, Strategy::Alc, Strategy::Dalc, Strategy::Alc3];

    pub fn auto_corrects(self) -> bool {
        matches!(self, Strategy::Dalc | Strategy::Alc3)
    }

    pub fn filters(self) -> bool {
        self == Strategy::Alc3
    }

    pub fn is_random(self) -> bool {
        self == Strategy::Rlc
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Rlc => "RLC",
            Strategy::Alc => "ALC",
            Strategy::Dalc => "DALC",
            Strategy::Alc3 => "ALC3",
        }
    }

    /// Stable small integer for seed derivation.
    pub(crate) fn tag(self) -> u64 {
        match self {
            Strategy::Rlc => 1,
            Strategy::Alc => 2,
            Strategy::Dalc => 3,
            Strategy::Alc3 => 4,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RLC" => Ok(Strategy::Rlc),
            "ALC" => Ok(Strategy::Alc),
            "DALC" => Ok(Strategy::Dalc),
            "ALC3" => Ok(Strategy::Alc3),
            _ => Err(Error::config(
                "strategy",
                format!("unknown strategy {s:?} (expected RLC, ALC, DALC or ALC3)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Held-out primary metric within `band` (absolute) of the oracle reference.
    CloseToOracle { band: f64 },
    /// MP precision of the latest iteration fell below `threshold`.
    MpPrecisionFloor { threshold: f64 },
    /// Cumulative annotated fraction reached `max_annotated_fraction`.
    Budget { max_annotated_fraction: f64 },
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::CloseToOracle { band } => write!(f, "close_to_oracle(band={band})"),
            StopRule::MpPrecisionFloor { threshold } => write!(f, "mp_precision_floor(threshold={threshold})"),
            StopRule::Budget { max_annotated_fraction } => {
                write!(f, "budget(max_annotated_fraction={max_annotated_fraction})")
            }
        }
    }
}

/// Engine configuration. Field names double as the config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub strategy: Strategy,
    /// Fraction `M` of the full dataset flagged per iteration.
    #[serde(alias = "M", alias = "m")]
    pub flag_fraction: f64,
    /// Auto-correction threshold on `p(y*|x)`.
    pub delta: f64,
    /// `m_filter = filter_multiplier · m_corr` when the filter gate is open.
    pub filter_multiplier: f64,
    /// Initial noise-fraction estimate; estimated from the test split when absent.
    pub eta0: Option<f64>,
    pub max_iterations: usize,
    pub seed: u64,
    pub stop_rules: Vec<StopRule>,
    /// Oracle performance (primary metric) used by the close-to-oracle rule.
    pub oracle_reference: Option<f64>,
    pub train: TrainConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Alc3,
            flag_fraction: 0.025,
            delta: 0.9,
            filter_multiplier: 3.0,
            eta0: None,
            max_iterations: 20,
            seed: 0,
            stop_rules: vec![StopRule::CloseToOracle { band: 0.01 }],
            oracle_reference: None,
            train: TrainConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Number of examples flagged per iteration: `round(M · |D|)`.
    pub fn flag_count(&self, dataset_len: usize) -> usize {
        (self.flag_fraction * dataset_len as f64).round() as usize
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let m = self.flag_fraction;
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::config("flag_fraction", format!("M must lie in (0, 1), got {m}")));
        }
        if self.flag_count(dataset_len) < 1 {
            return Err(Error::config(
                "flag_fraction",
                format!("M = {m} flags no examples of a {dataset_len}-example dataset"),
            ));
        }
        if !(self.delta > 0.5 && self.delta <= 1.0) {
            return Err(Error::config(
                "delta",
                format!("delta must lie in (0.5, 1], got {}", self.delta),
            ));
        }
        if !(self.filter_multiplier > 0.0 && self.filter_multiplier.is_finite()) {
            return Err(Error::config("filter_multiplier", "must be a positive number"));
        }
        if let Some(eta0) = self.eta0 {
            if !(0.0..1.0).contains(&eta0) {
                return Err(Error::config("eta0", format!("eta0 must lie in [0, 1), got {eta0}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be positive"));
        }
        for rule in &self.stop_rules {
            match *rule {
                StopRule::CloseToOracle { band } if !(band >= 0.0 && band.is_finite()) => {
                    return Err(Error::config("stop_rules", "close_to_oracle band must be non-negative"))
                }
                StopRule::MpPrecisionFloor { threshold } if !(0.0..=1.0).contains(&threshold) => {
                    return Err(Error::config(
                        "stop_rules",
                        "mp_precision_floor threshold must lie in [0, 1]",
                    ))
                }
                StopRule::Budget { max_annotated_fraction }
                    if !(max_annotated_fraction > 0.0 && max_annotated_fraction <= 1.0) =>
                {
                    return Err(Error::config(
                        "stop_rules",
                        "budget max_annotated_fraction must lie in (0, 1]",
                    ))
                }
                _ => {}
            }
        }
        if let Some(r) = self.oracle_reference {
            if !r.is_finite() {
                return Err(Error::config("oracle_reference", "must be finite"));
            }
        }
        self.train.validate()
    }

    pub fn close_to_oracle_band(&self) -> Option<f64> {
        self.stop_rules.iter().find_map(|r| match r {
            StopRule::CloseToOracle { band } => Some(*band),
            _ => None,
        })
    }
}
