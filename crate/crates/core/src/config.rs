//! Resolved analysis settings, loadable from JSON or `key = value` text.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::GradcheckParams;
use crate::error::{Error, Result};
use crate::grid::{NoteGrid, YingramParams};
use crate::loss::LossConfig;
use crate::yin::F0Params;

/// Every tunable of the pipeline. Reports embed the resolved value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub start_note: i32,
    pub num_channels: usize,
    pub bins_per_octave: u32,
    pub reference_note: i32,
    pub reference_hz: f64,
    pub lambda_yin: f64,
    pub threshold: f64,
    pub voicing_cutoff: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Largest accepted |measured − expected| semitone error.
    pub shift_tolerance: f64,
    /// Smallest accepted co-voiced fraction for a shift verdict.
    pub min_overlap: f64,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let grid = NoteGrid::default();
        let f0 = F0Params::default();
        AnalysisConfig {
            sample_rate: crate::ANALYSIS_SAMPLE_RATE,
            window: 2048,
            hop: 256,
            start_note: grid.start_note,
            num_channels: grid.num_channels,
            bins_per_octave: grid.bins_per_octave,
            reference_note: grid.reference_note,
            reference_hz: grid.reference_hz,
            lambda_yin: LossConfig::default().lambda_yin,
            threshold: f0.threshold,
            voicing_cutoff: f0.voicing_cutoff,
            f_min: f0.f_min,
            f_max: f0.f_max,
            shift_tolerance: 0.5,
            min_overlap: 0.5,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    /// Reads a config file: JSON if it parses as a JSON object, otherwise
    /// `key = value` lines with `#` comments. Missing keys keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let cfg: AnalysisConfig =
                serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        let mut fields = match serde_json::to_value(AnalysisConfig::default())? {
            serde_json::Value::Object(map) => map,
            _ => unreachable!("config serializes to an object"),
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim().replace('-', "_");
            let slot = fields
                .get_mut(&key)
                .ok_or_else(|| Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)))?;
            *slot = serde_json::from_str(value.trim())
                .map_err(|_| Error::Config(format!("line {}: `{}` is not a number", lineno + 1, value.trim())))?;
        }
        let cfg: AnalysisConfig = serde_json::from_value(serde_json::Value::Object(fields))
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.window == 0 || self.hop == 0 {
            return Err(Error::Config("sample_rate, window and hop must be positive".into()));
        }
        self.grid().validate()?;
        self.loss().validate()?;
        if !(self.shift_tolerance >= 0.0 && (0.0..=1.0).contains(&self.min_overlap)) {
            return Err(Error::Config("shift_tolerance must be >= 0 and min_overlap in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> NoteGrid {
        NoteGrid {
            start_note: self.start_note,
            num_channels: self.num_channels,
            bins_per_octave: self.bins_per_octave,
            reference_note: self.reference_note,
            reference_hz: self.reference_hz,
        }
    }

    pub fn yingram(&self) -> YingramParams {
        YingramParams { window: self.window, hop: self.hop, grid: self.grid() }
    }

    pub fn f0(&self) -> F0Params {
        F0Params {
            threshold: self.threshold,
            voicing_cutoff: self.voicing_cutoff,
            f_min: self.f_min,
            f_max: self.f_max,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda_yin: self.lambda_yin }
    }

    pub fn gradcheck(&self, eps: f64, probes: usize) -> GradcheckParams {
        GradcheckParams { eps, probes, tolerance: 1e-4, seed: self.seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = AnalysisConfig::default();
        assert_eq!((c.sample_rate, c.window, c.hop), (22050, 2048, 256));
        assert_eq!((c.start_note, c.num_channels, c.bins_per_octave, c.reference_note), (-5, 80, 24, 69));
        assert_eq!(c.reference_hz, 440.0);
        assert_eq!(c.lambda_yin, 45.0);
        assert_eq!((c.threshold, c.voicing_cutoff), (0.1, 0.25));
        assert_eq!((c.f_min, c.f_max), (52.0, 508.0));
        assert_eq!((c.shift_tolerance, c.min_overlap, c.seed), (0.5, 0.5, 0));
    }

    #[test]
    fn key_value_overrides() {
        let c = AnalysisConfig::parse("# comment\nhop = 512\nlambda-yin = 10 # inline\n\nf_min=80\n").unwrap();
        assert_eq!(c.hop, 512);
        assert_eq!(c.lambda_yin, 10.0);
        assert_eq!(c.f_min, 80.0);
        assert_eq!(c.window, 2048);
    }

    #[test]
    fn json_partial() {
        let c = AnalysisConfig::parse(r#"{"window": 1024, "seed": 7}"#).unwrap();
        assert_eq!((c.window, c.seed, c.hop), (1024, 7, 256));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(AnalysisConfig::parse("hop 12").is_err());
        assert!(AnalysisConfig::parse("nope = 1").is_err());
        assert!(AnalysisConfig::parse("hop = fast").is_err());
        assert!(AnalysisConfig::parse("hop = 0").is_err());
        assert!(AnalysisConfig::parse(r#"{"lambda_yin": -1}"#).is_err());
        assert!(AnalysisConfig::parse(r#"{"bogus": 1}"#).is_err());
    }
}
