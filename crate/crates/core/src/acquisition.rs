//! Synthetic detector acquisition: a per-channel glucose → voltage law,
//! Gaussian noise on raw ADC samples, coherent averaging and 16-bit
//! quantization.
//!
//! The forward model is made up. No transfer law from glucose to detector
//! voltage is known for the hardware, so [`ForwardModel::SYNTHETIC`] exists
//! only to give the calibration code a ground truth to be tested against.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CHANNEL_RANGES, GLUCOSE_RANGE};
use crate::{Cohort, Dataset, Error, Prandial, Provenance, Result, SampleRecord, Sex};

/// First timestamp of generated datasets (2020-01-01T00:00:00Z).
pub const EPOCH_START: i64 = 1_577_836_800;
/// Spacing between generated readings, seconds.
pub const READING_INTERVAL: i64 = 300;
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub adc_bits: u32,
    pub full_scale: f64,
    /// Raw samples per second.
    pub sample_rate: f64,
    /// Raw samples averaged into one reading.
    pub averaging_count: usize,
    /// Ratio of mean signal power to noise power on raw samples.
    /// `+∞` disables noise.
    pub snr_db: f64,
    /// Reported noise power; only used by [`AcquisitionConfig::implied_signal_rms`].
    pub noise_power: f64,
    pub channel_ranges: [(f64, f64); 3],
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            adc_bits: 16,
            full_scale: 4.096,
            sample_rate: 128.0,
            averaging_count: 128,
            snr_db: 25.2,
            noise_power: 0.08,
            channel_ranges: CHANNEL_RANGES,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn noiseless() -> Self {
        AcquisitionConfig {
            snr_db: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=24).contains(&self.adc_bits) {
            return Err(Error::InvalidArgument(format!("adc_bits must be in 8..=24, got {}", self.adc_bits)));
        }
        if !(self.full_scale > 0.0 && self.full_scale.is_finite()) {
            return Err(Error::InvalidArgument("full_scale must be positive".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if self.averaging_count == 0 {
            return Err(Error::InvalidArgument("averaging_count must be at least 1".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument("snr_db must be a number or +inf".into()));
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return Err(Error::InvalidArgument("noise_power must be non-negative".into()));
        }
        if self.channel_ranges.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("channel range bounds out of order".into()));
        }
        Ok(())
    }

    /// Voltage step between adjacent ADC codes.
    pub fn lsb(&self) -> f64 {
        self.full_scale / ((1u64 << self.adc_bits) - 1) as f64
    }

    /// Noise standard deviation on a raw sample whose mean is `mean`.
    pub fn noise_sigma(&self, mean: f64) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            mean.abs() / 10f64.powf(self.snr_db / 10.0).sqrt()
        }
    }

    /// Signal RMS implied by `noise_power` at `snr_db`, in the same unit
    /// as the square root of `noise_power`.
    pub fn implied_signal_rms(&self) -> f64 {
        (self.noise_power * 10f64.powf(self.snr_db / 10.0)).sqrt()
    }

    /// Seconds of raw sampling behind one reading.
    pub fn reading_duration(&self) -> f64 {
        self.averaging_count as f64 / self.sample_rate
    }
}

/// Clamps to `[0, full_scale]` and rounds to the nearest of `2^bits`
/// evenly spaced levels.
pub fn quantize_adc(v: f64, cfg: &AcquisitionConfig) -> f64 {
    let lsb = cfg.lsb();
    let clamped = if v.is_nan() { 0.0 } else { v.clamp(0.0, cfg.full_scale) };
    let code = (clamped / lsb).round().min(((1u64 << cfg.adc_bits) - 1) as f64);
    if code == ((1u64 << cfg.adc_bits) - 1) as f64 {
        cfg.full_scale
    } else {
        code * lsb
    }
}

pub fn coherent_average(readings: &[f64]) -> Result<f64> {
    if readings.is_empty() {
        return Err(Error::InvalidInput("coherent average of no readings".into()));
    }
    Ok(readings.iter().sum::<f64>() / readings.len() as f64)
}

/// One channel: `v = alpha + beta·u + gamma·u³ + nuisance·w`, with
/// `u = (g − 260) / 190` mapping 70–450 mg/dl onto `[−1, 1]` and `w` the
/// per-subject nuisance factors, each in `[−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub nuisance: [f64; 2],
}

impl ChannelMap {
    pub const CENTER: f64 = 260.0;
    pub const HALF_SPAN: f64 = 190.0;

    pub fn eval(&self, glucose: f64, w: [f64; 2]) -> f64 {
        let u = (glucose - Self::CENTER) / Self::HALF_SPAN;
        self.alpha + self.beta * u + self.gamma * u * u * u + self.nuisance[0] * w[0] + self.nuisance[1] * w[1]
    }

    /// dv/du; its sign over `[−1, 1]` decides monotonicity.
    fn slope(&self, u: f64) -> f64 {
        self.beta + 3.0 * self.gamma * u * u
    }

    fn nuisance_reach(&self) -> f64 {
        self.nuisance[0].abs() + self.nuisance[1].abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub channels: [ChannelMap; 3],
}

impl ForwardModel {
    /// Synthetic coefficients. Channel 1 is affine in glucose; channels 2
    /// and 3 carry a small cubic term. Two nuisance factors (think skin
    /// tone and tissue thickness) shift each channel by the equivalent of
    /// (+30, −30, 0) and (+20, +20, −40) mg/dl, so they cancel in a blend
    /// of all three channels but leak into any two-channel estimate.
    pub const SYNTHETIC: ForwardModel = ForwardModel {
        channels: [
            ChannelMap { alpha: 3.64, beta: -0.33, gamma: 0.0, nuisance: [-0.052, -0.035] },
            ChannelMap { alpha: 2.0, beta: -0.20, gamma: -0.01, nuisance: [0.032, -0.021] },
            ChannelMap { alpha: 1.2, beta: 0.12, gamma: 0.01, nuisance: [0.0, -0.025] },
        ],
    };

    /// Mean voltages for a subject with nuisance factors `w`.
    pub fn mean_volts(&self, glucose: f64, w: [f64; 2]) -> [f64; 3] {
        self.channels.map(|c| c.eval(glucose, w))
    }

    /// Mean voltages for the nominal subject (`w = 0`).
    pub fn nominal_volts(&self, glucose: f64) -> [f64; 3] {
        self.mean_volts(glucose, [0.0; 2])
    }

    pub fn has_nuisance(&self) -> bool {
        self.channels.iter().any(|c| c.nuisance_reach() > 0.0)
    }

    /// Checks strict monotonicity in glucose and that every channel stays
    /// within its measurement range for any nuisance in `[−1, 1]²`.
    pub fn validate(&self, ranges: &[(f64, f64); 3]) -> Result<()> {
        for (i, (map, (lo, hi))) in self.channels.iter().zip(ranges).enumerate() {
            // the slope is extremal at u = 0 and u = ±1
            let (s0, s1) = (map.slope(0.0), map.slope(1.0));
            if s0 == 0.0 || s1 == 0.0 || s0.signum() != s1.signum() {
                return Err(Error::InvalidInput(format!("forward map for channel {} is not monotone", i + 1)));
            }
            let ends = [map.eval(GLUCOSE_RANGE.0, [0.0; 2]), map.eval(GLUCOSE_RANGE.1, [0.0; 2])];
            let reach = map.nuisance_reach();
            let (vmin, vmax) = (ends[0].min(ends[1]) - reach, ends[0].max(ends[1]) + reach);
            if vmin < *lo || vmax > *hi {
                return Err(Error::InvalidInput(format!("forward map for channel {} leaves its range", i + 1)));
            }
        }
        Ok(())
    }
}

impl Default for ForwardModel {
    fn default() -> Self {
        Self::SYNTHETIC
    }
}

/// Seeded acquisition front end. One instance owns one random stream.
pub struct Acquisition {
    cfg: AcquisitionConfig,
    fm: ForwardModel,
    rng: ChaCha8Rng,
}

impl Acquisition {
    pub fn new(cfg: AcquisitionConfig, fm: ForwardModel) -> Result<Self> {
        cfg.validate()?;
        fm.validate(&cfg.channel_ranges)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Acquisition { cfg, fm, rng })
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.cfg
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `count` raw (pre-averaging, unquantized) samples around `mean`.
    pub fn raw_samples(&mut self, mean: f64, count: usize) -> Vec<f64> {
        let sigma = self.cfg.noise_sigma(mean);
        if sigma == 0.0 {
            return vec![mean; count];
        }
        let normal = Normal::new(mean, sigma).expect("finite sigma");
        (0..count).map(|_| normal.sample(&mut self.rng)).collect()
    }

    /// One reading of the nominal subject.
    pub fn simulate_reading(&mut self, glucose: f64) -> Result<[f64; 3]> {
        self.simulate_subject_reading(glucose, [0.0; 2])
    }

    /// One reading per channel: noisy raw samples, averaged, then
    /// quantized. Readings outside a channel's range are redrawn.
    pub fn simulate_subject_reading(&mut self, glucose: f64, w: [f64; 2]) -> Result<[f64; 3]> {
        let (lo, hi) = GLUCOSE_RANGE;
        if !(lo..=hi).contains(&glucose) {
            return Err(Error::InvalidInput(format!("glucose {glucose} outside {lo}-{hi} mg/dl")));
        }
        if w.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::InvalidInput("nuisance factors must lie in [-1, 1]".into()));
        }
        let means = self.fm.mean_volts(glucose, w);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let (vlo, vhi) = self.cfg.channel_ranges[ch];
            let mut attempt = 0;
            out[ch] = loop {
                let raw = self.raw_samples(means[ch], self.cfg.averaging_count);
                let v = quantize_adc(coherent_average(&raw)?, &self.cfg);
                if (vlo..=vhi).contains(&v) {
                    break v;
                }
                attempt += 1;
                if attempt >= MAX_REDRAWS {
                    return Err(Error::Numeric(format!("channel {} keeps reading out of range", ch + 1)));
                }
            };
        }
        Ok(out)
    }
}

/// One-shot reading with a fresh generator seeded from `cfg.seed`.
pub fn simulate_reading(glucose: f64, cfg: &AcquisitionConfig, fm: &ForwardModel) -> Result<[f64; 3]> {
    Acquisition::new(cfg.clone(), *fm)?.simulate_reading(glucose)
}

/// Empirical SNR in dB of raw samples about their known mean.
pub fn estimate_snr_db(samples: &[f64], mean: f64) -> f64 {
    let noise = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / samples.len() as f64;
    10.0 * (mean * mean / noise).log10()
}

/// Relative weight of each (cohort, sex) cell, indexed like
/// `Cohort::ALL` × `Sex::ALL`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CohortMix {
    pub weights: [[f64; 2]; 3],
}

impl CohortMix {
    /// Calibration cohort: 18/13 prediabetic, 16/14 diabetic, 19/17 healthy (M/F).
    pub const CALIBRATION: CohortMix = CohortMix::from_counts([[19, 17], [18, 13], [16, 14]]);
    /// Validation cohort: 11/10 prediabetic, 17/11 diabetic, 36/8 healthy (M/F).
    pub const VALIDATION: CohortMix = CohortMix::from_counts([[36, 8], [11, 10], [17, 11]]);

    /// Cell counts in `Cohort::ALL` × `Sex::ALL` order.
    pub const fn from_counts(counts: [[u32; 2]; 3]) -> Self {
        let mut total = 0;
        let mut c = 0;
        while c < 3 {
            total += counts[c][0] + counts[c][1];
            c += 1;
        }
        let mut weights = [[0.0; 2]; 3];
        let mut c = 0;
        while c < 3 {
            weights[c][0] = counts[c][0] as f64 / total as f64;
            weights[c][1] = counts[c][1] as f64 / total as f64;
            c += 1;
        }
        CohortMix { weights }
    }

    pub fn validate(&self) -> Result<()> {
        let flat = self.weights.iter().flatten();
        if flat.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("cohort weights must be non-negative".into()));
        }
        let sum: f64 = flat.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("cohort fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Splits `n` across the cells by largest remainder; ties go to the
    /// earlier cell.
    pub fn apportion(&self, n: usize) -> [[usize; 2]; 3] {
        let mut counts = [[0usize; 2]; 3];
        let mut rest = Vec::with_capacity(6);
        let mut assigned = 0;
        for c in 0..3 {
            for s in 0..2 {
                let exact = self.weights[c][s] * n as f64;
                counts[c][s] = exact.floor() as usize;
                assigned += counts[c][s];
                rest.push((exact - exact.floor(), c, s));
            }
        }
        rest.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, c, s) in rest.iter().take(n - assigned) {
            counts[c][s] += 1;
        }
        counts
    }
}

/// Glucose range for a cohort, mg/dl.
pub fn glucose_band(cohort: Cohort) -> (f64, f64) {
    match cohort {
        Cohort::Healthy => (70.0, 140.0),
        Cohort::Prediabetic => (140.0, 200.0),
        Cohort::Diabetic => (200.0, 450.0),
    }
}

/// Age range for a cohort and sex, years.
pub fn age_band(cohort: Cohort, sex: Sex) -> (u32, u32) {
    match (cohort, sex) {
        (Cohort::Healthy, Sex::Male) => (22, 65),
        (Cohort::Healthy, Sex::Female) => (17, 70),
        (Cohort::Prediabetic, Sex::Male) => (22, 65),
        (Cohort::Prediabetic, Sex::Female) => (26, 75),
        (Cohort::Diabetic, Sex::Male) => (30, 68),
        (Cohort::Diabetic, Sex::Female) => (30, 73),
    }
}

/// Generates `n` synthetic records. Cell sizes follow `mix`, the cell
/// order is shuffled, glucose is drawn uniformly in the cohort's band
/// (whole mg/dl) and each record gets its own nuisance factors.
pub fn generate_dataset(n: usize, mix: &CohortMix, cfg: &AcquisitionConfig, fm: &ForwardModel) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    mix.validate()?;
    let mut acq = Acquisition::new(cfg.clone(), *fm)?;
    let counts = mix.apportion(n);
    let mut cells = Vec::with_capacity(n);
    for (c, cohort) in Cohort::ALL.iter().enumerate() {
        for (s, sex) in Sex::ALL.iter().enumerate() {
            cells.extend(std::iter::repeat_n((*cohort, *sex), counts[c][s]));
        }
    }
    cells.shuffle(acq.rng());

    let mut records = Vec::with_capacity(n);
    for (i, (cohort, sex)) in cells.into_iter().enumerate() {
        let (glo, ghi) = glucose_band(cohort);
        let (alo, ahi) = age_band(cohort, sex);
        let rng = acq.rng();
        let glucose = rng.random_range(glo..=ghi).round();
        let age_years = rng.random_range(alo..=ahi);
        let prandial = Prandial::ALL[rng.random_range(0..Prandial::ALL.len())];
        let w = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        let [v1, v2, v3] = acq.simulate_subject_reading(glucose, w)?;
        records.push(SampleRecord {
            sample_id: format!("syn{}-{:04}", cfg.seed, i),
            age_years,
            sex,
            cohort,
            prandial,
            v1,
            v2,
            v3,
            ref_glucose: glucose,
            timestamp: EPOCH_START + READING_INTERVAL * i as i64,
        });
    }
    Dataset::new(records, Provenance::Synthetic)
}
