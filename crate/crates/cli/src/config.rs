//! `key = value` config file with `[acquisition]`, `[lm]` and `[svr]` sections.
//!
//! Unknown sections and keys are errors. Seeds are not configurable here; they
//! come from `--seed` only.

use std::path::Path;
use std::str::FromStr;

use glucal_core::acquisition::{AcquisitionConfig, CohortMix};
use glucal_core::lm::LmConfig;
use glucal_core::regression::SvrParams;
use glucal_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mix {
    Calibration,
    Validation,
}

impl Mix {
    pub fn cohort_mix(self) -> CohortMix {
        match self {
            Mix::Calibration => CohortMix::CALIBRATION,
            Mix::Validation => CohortMix::VALIDATION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub acquisition: AcquisitionConfig,
    pub mix: Mix,
    pub lm: LmConfig,
    pub svr: SvrParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            acquisition: AcquisitionConfig::default(),
            mix: Mix::Calibration,
            lm: LmConfig::default(),
            svr: SvrParams::default(),
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("config line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(line, format!("{key}: cannot parse {value:?}")))
}

// accepts `inf` as well as plain numbers
fn float(line: usize, key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(line, key, value)?;
    if v.is_nan() {
        return Err(bad(line, format!("{key}: NaN is not allowed")));
    }
    Ok(v)
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                }
            }
        })?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split(['#', ';']).next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| bad(line, "unterminated section header"))?
                    .trim();
                if !matches!(name, "acquisition" | "lm" | "svr") {
                    return Err(bad(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| bad(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let Some(sec) = section.as_deref() else {
                return Err(bad(line, format!("{key} is outside any section")));
            };
            cfg.set(sec, key, value, line)?;
        }
        cfg.acquisition.validate()?;
        cfg.lm.validate()?;
        cfg.svr.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        let a = &mut self.acquisition;
        let lm = &mut self.lm;
        let svr = &mut self.svr;
        match (section, key) {
            ("acquisition", "adc_bits") => a.adc_bits = num(line, key, value)?,
            ("acquisition", "full_scale") => a.full_scale = float(line, key, value)?,
            ("acquisition", "sample_rate") => a.sample_rate = float(line, key, value)?,
            ("acquisition", "averaging_count") => a.averaging_count = num(line, key, value)?,
            ("acquisition", "snr_db") => a.snr_db = float(line, key, value)?,
            ("acquisition", "noise_power") => a.noise_power = float(line, key, value)?,
            ("acquisition", "mix") => {
                self.mix = match value {
                    "calibration" => Mix::Calibration,
                    "validation" => Mix::Validation,
                    _ => return Err(bad(line, format!("mix must be calibration or validation, got {value:?}"))),
                }
            }
            ("lm", "lambda_init") => lm.lambda_init = float(line, key, value)?,
            ("lm", "lambda_up") => lm.lambda_up = float(line, key, value)?,
            ("lm", "lambda_down") => lm.lambda_down = float(line, key, value)?,
            ("lm", "max_iters") => lm.max_iters = num(line, key, value)?,
            ("lm", "grad_tol") => lm.grad_tol = float(line, key, value)?,
            ("svr", "c") => svr.c = float(line, key, value)?,
            ("svr", "epsilon") => svr.epsilon = float(line, key, value)?,
            ("svr", "gamma") => svr.gamma = Some(float(line, key, value)?),
            ("svr", "max_iter") => svr.max_iter = num(line, key, value)?,
            _ => return Err(bad(line, format!("unknown key {key:?} in [{section}]"))),
        }
        Ok(())
    }
}
