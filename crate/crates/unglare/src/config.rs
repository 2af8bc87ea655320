//! Pipeline configuration files.
//!
//! Same `key = value` syntax as scene files. Keys:
//!
//! ```text
//! illumination          = white | r,g,b | divide:r,g,b
//! initial_k             = 1
//! tau_dev               = 0.1
//! tau_frac              = 0.1
//! min_cluster_size      = auto | N
//! seed                  = 0
//! max_iterations        = 10
//! max_kmeans_iterations = 100
//! bin_width             = 0.005
//! peak_mass_fraction    = 0.005
//! peak_min_count        = 5
//! fallback_percentile   = 0.02
//! downsample            = off | N    # long-edge target of the fast path
//! threads               = N
//! ```
//!
//! Command-line flags override file values.

use std::str::FromStr;

use unglare_core::cluster::MinClusterSize;
use unglare_core::pipeline::{Illumination, PipelineConfig, PipelineError};

use crate::scenefile::parse_color;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("bad value for {key}: `{value}`")]
    Value { key: String, value: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Invalid(#[from] PipelineError),
}

/// A pipeline config plus the settings that live outside the library.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub threads: Option<usize>,
}

pub fn parse_illumination(s: &str) -> Option<Illumination> {
    let s = s.trim();
    if s == "white" {
        return Some(Illumination::White);
    }
    if let Some(rest) = s.strip_prefix("divide:") {
        return parse_color(rest).map(Illumination::Divide);
    }
    parse_color(s).map(Illumination::Chromaticity)
}

pub fn parse_min_cluster_size(s: &str) -> Option<MinClusterSize> {
    match s.trim() {
        "auto" => Some(MinClusterSize::Auto),
        n => n.parse().ok().map(MinClusterSize::Fixed),
    }
}

pub fn parse_downsample(s: &str) -> Option<Option<usize>> {
    match s.trim() {
        "off" => Some(None),
        n => n.parse().ok().map(Some),
    }
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: v.into(),
    })
}

fn custom<T>(key: &str, v: &str, parsed: Option<T>) -> Result<T, ConfigError> {
    parsed.ok_or_else(|| ConfigError::Value {
        key: key.into(),
        value: v.into(),
    })
}

impl Settings {
    /// Applies one setting by name.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let p = &mut self.pipeline;
        match key {
            "illumination" => p.illumination = custom(key, v, parse_illumination(v))?,
            "initial_k" => p.cluster.initial_k = value(key, v)?,
            "tau_dev" => p.cluster.tau_dev = value(key, v)?,
            "tau_frac" => p.cluster.tau_frac = value(key, v)?,
            "min_cluster_size" => p.cluster.min_cluster_size = custom(key, v, parse_min_cluster_size(v))?,
            "seed" => p.cluster.seed = value(key, v)?,
            "max_iterations" => p.cluster.max_iterations = value(key, v)?,
            "max_kmeans_iterations" => p.cluster.max_kmeans_iterations = value(key, v)?,
            "bin_width" => p.recovery.bin_width = value(key, v)?,
            "peak_mass_fraction" => p.recovery.peak_mass_fraction = value(key, v)?,
            "peak_min_count" => p.recovery.peak_min_count = value(key, v)?,
            "fallback_percentile" => p.recovery.fallback_percentile = value(key, v)?,
            "downsample" => p.downsample = custom(key, v, parse_downsample(v))?,
            "threads" => self.threads = Some(value(key, v)?),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses a config file on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        for (idx, raw) in text.lines().enumerate() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content.split_once('=').ok_or(ConfigError::Syntax {
                line: idx + 1,
                message: "expected `key = value`".into(),
            })?;
            s.set(key.trim(), v.trim()).map_err(|e| ConfigError::Syntax {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        s.pipeline.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use unglare_core::model::l2_chromaticity;
    use unglare_core::Rgb;

    #[test]
    fn defaults_from_empty_file() {
        let s = Settings::parse("# nothing\n\n").unwrap();
        assert_eq!(s, Settings::default());
        assert_eq!(s.pipeline.downsample, Some(200));
    }

    #[test]
    fn every_key() {
        let text = "illumination = divide:0.6,0.588,0.542\ninitial_k = 8\ntau_dev = 0.05\n\
                    tau_frac = 0.2\nmin_cluster_size = 50\nseed = 9\nmax_iterations = 4\n\
                    max_kmeans_iterations = 30\nbin_width = 0.01\npeak_mass_fraction = 0.01\n\
                    peak_min_count = 3\nfallback_percentile = 0.05\ndownsample = off\nthreads = 2\n";
        let s = Settings::parse(text).unwrap();
        let c = l2_chromaticity(Rgb::new(0.6, 0.588, 0.542)).unwrap();
        assert_eq!(s.pipeline.illumination, Illumination::Divide(c));
        assert_eq!(s.pipeline.cluster.initial_k, 8);
        assert_eq!(s.pipeline.cluster.min_cluster_size, MinClusterSize::Fixed(50));
        assert_eq!(s.pipeline.cluster.seed, 9);
        assert_eq!(s.pipeline.cluster.max_kmeans_iterations, 30);
        assert_eq!(s.pipeline.recovery.bin_width, 0.01);
        assert_eq!(s.pipeline.recovery.fallback_percentile, 0.05);
        assert_eq!(s.pipeline.downsample, None);
        assert_eq!(s.threads, Some(2));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(Settings::parse("initial_k = many"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Settings::parse("\nwhat = 1"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(Settings::parse("downsample = 8"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Settings::parse("illumination = 1,2"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn illumination_forms() {
        assert_eq!(parse_illumination("white"), Some(Illumination::White));
        assert!(matches!(parse_illumination("0.6,0.59,0.54"), Some(Illumination::Chromaticity(_))));
        assert!(matches!(parse_illumination("divide:1,1,1"), Some(Illumination::Divide(_))));
        assert_eq!(parse_illumination("0,0,0"), None);
    }
}
