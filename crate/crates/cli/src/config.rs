//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Command-line overrides use
//! the same syntax and win over the file. Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sgheat::krylov::FgmresConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config field `{0}`")]
    Unknown(String),
    #[error("missing config field `{0}`")]
    Missing(&'static str),
    #[error("config field `{field}`: {reason} (got `{value}`)")]
    Invalid {
        field: &'static str,
        value: String,
        reason: String,
    },
    #[error("environment variable {var}: {reason}")]
    Env { var: &'static str, reason: String },
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "M",
    "q",
    "eta",
    "d_min",
    "T",
    "level",
    "levels",
    "k",
    "r",
    "slabs",
    "p",
    "p_min",
    "p_max",
    "milestones",
    "seed",
    "exact_only",
    "rel_tol",
    "abs_tol",
    "max_iter",
    "restart",
    "timings",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    SgRefine,
    SgSpacetime,
    McRun,
    Compare,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::SgRefine => "sg-refine",
            Study::SgSpacetime => "sg-spacetime",
            Study::McRun => "mc-run",
            Study::Compare => "compare",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw key/value pairs after overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig(pub BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            raw.set(line).map_err(|e| match e {
                ConfigError::Syntax { text, .. } => ConfigError::Syntax { line: i + 1, text },
                e => e,
            })?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: 0,
                text: assignment.to_string(),
            });
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::Unknown(key.to_string()));
        }
        self.0.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    fn get<T: FromStr>(&self, field: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.0
            .get(field)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                    field,
                    value: v.clone(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn require<T: FromStr>(&self, field: &'static str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(field)?.ok_or(ConfigError::Missing(field))
    }

    fn list<T: FromStr>(&self, field: &'static str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self.0.get(field).ok_or(ConfigError::Missing(field))?;
        v.split(',')
            .map(|s| {
                s.trim().parse().map_err(|e: T::Err| ConfigError::Invalid {
                    field,
                    value: v.clone(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}

/// Validated configuration of one study.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub study: Study,
    /// number of random variables, 2 (toy field) or 4 (standard field)
    pub m: usize,
    pub q: u32,
    pub eta: f64,
    pub d_min: f64,
    pub t_final: f64,
    /// mesh levels; one entry except for `sg-spacetime`
    pub levels: Vec<u32>,
    pub k: usize,
    pub r: usize,
    /// slabs on the first level; doubled with each further level
    pub slabs: usize,
    /// chaos degrees of the SG rows
    pub degrees: Vec<u32>,
    pub milestones: Vec<usize>,
    pub seed: u64,
    pub exact_only: bool,
    pub fgmres: FgmresConfig,
    pub timings: bool,
}

fn invalid(field: &'static str, value: impl fmt::Display, reason: &str) -> ConfigError {
    ConfigError::Invalid {
        field,
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn positive<T: PartialOrd + Default + fmt::Display>(field: &'static str, v: T) -> Result<T, ConfigError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(invalid(field, v, "must be positive"))
    }
}

impl RunConfig {
    pub fn from_raw(study: Study, raw: &RawConfig) -> Result<Self, ConfigError> {
        let m: usize = raw.require("M")?;
        if m != 2 && m != 4 {
            return Err(invalid("M", m, "must be 2 or 4"));
        }
        let q = raw.require("q")?;
        let eta: f64 = raw.require("eta")?;
        if !eta.is_finite() {
            return Err(invalid("eta", eta, "must be finite"));
        }
        let d_min = positive("d_min", raw.require::<f64>("d_min")?)?;
        let t_final = positive("T", raw.require::<f64>("T")?)?;
        let k = positive("k", raw.require("k")?)?;
        let r = raw.require("r")?;
        let slabs = positive("slabs", raw.require("slabs")?)?;

        let levels = if study == Study::SgSpacetime {
            let l: Vec<u32> = raw.list("levels")?;
            if l.len() < 2 || l.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(invalid("levels", raw.0["levels"].clone(), "need at least two consecutive levels"));
            }
            l
        } else {
            vec![raw.require("level")?]
        };
        if let Some(&l) = levels.iter().find(|&&l| l == 0 || l > 10) {
            return Err(invalid(if levels.len() > 1 { "levels" } else { "level" }, l, "must lie in 1..=10"));
        }

        let degrees = match study {
            Study::SgRefine | Study::Compare => {
                let lo: u32 = raw.require("p_min")?;
                let hi: u32 = raw.require("p_max")?;
                if hi < lo {
                    return Err(invalid("p_max", hi, "must not be below p_min"));
                }
                (lo..=hi).collect()
            }
            Study::SgSpacetime => vec![raw.require("p")?],
            Study::McRun => vec![],
        };

        let (milestones, seed) = match study {
            Study::McRun | Study::Compare => {
                let ms: Vec<usize> = raw.list("milestones")?;
                if ms.is_empty() || ms[0] == 0 || ms.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("milestones", raw.0["milestones"].clone(), "must be positive and strictly increasing"));
                }
                (ms, raw.require("seed")?)
            }
            _ => (vec![], raw.get("seed")?.unwrap_or(0)),
        };

        let d = FgmresConfig::default();
        let fgmres = FgmresConfig {
            rel_tol: positive("rel_tol", raw.get("rel_tol")?.unwrap_or(d.rel_tol))?,
            abs_tol: raw.get("abs_tol")?.unwrap_or(d.abs_tol),
            max_iter: positive("max_iter", raw.get("max_iter")?.unwrap_or(d.max_iter))?,
            restart: raw.get("restart")?.unwrap_or(d.restart),
        };
        if fgmres.abs_tol.is_nan() || fgmres.abs_tol < 0.0 {
            return Err(invalid("abs_tol", fgmres.abs_tol, "must be non-negative"));
        }

        Ok(RunConfig {
            study,
            m,
            q,
            eta,
            d_min,
            t_final,
            levels,
            k,
            r,
            slabs,
            degrees,
            milestones,
            seed,
            exact_only: raw.get("exact_only")?.unwrap_or(false),
            fgmres,
            timings: raw.get("timings")?.unwrap_or(true),
        })
    }
}

/// Worker count from `SG_HEAT_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, ConfigError> {
    let Ok(v) = std::env::var("SG_HEAT_THREADS") else {
        return Ok(None);
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(Some(n)),
        _ => Err(ConfigError::Env {
            var: "SG_HEAT_THREADS",
            reason: format!("expected a positive integer, got `{v}`"),
        }),
    }
}
