use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::col;
use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Reference frequency of the switching-loss term.
pub const F_REF_HZ: f64 = 50.0;

const STEADY_LEVEL: f64 = 0.8;
const INTERMITTENT_ON_LEVEL: f64 = 0.9;
const MIXED_OFF_PROB: f64 = 0.15;
const MIN_RUNNING_SPEED: f64 = 0.05;
/// Per-sample mean reversion of the speed and torque walks.
const WALK_REVERSION: f64 = 0.01;
const AMBIENT_JITTER_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoeffs {
    /// Conduction loss, W/A².
    pub k1: f64,
    /// Switching loss per amp at the reference frequency, W/A.
    pub k2: f64,
    /// Fraction of shaft power lost.
    pub k3: f64,
}

impl LossCoeffs {
    /// Loss in watts for current (A), frequency (Hz) and power (kW).
    pub fn power_loss(&self, current: f64, frequency: f64, power_kw: f64) -> f64 {
        self.k1 * current * current + self.k2 * current * frequency / F_REF_HZ + self.k3 * power_kw * 1000.0
    }
}

/// How the drive's speed command evolves over time. Periods and segment
/// lengths are in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadPattern {
    Steady,
    Intermittent { duty: f64, period: usize },
    PartialLoad { fraction: f64 },
    /// Piecewise-constant random regimes, including stops.
    Mixed { segment: usize },
}

fn default_sample_interval() -> f64 {
    60.0
}
fn default_rated_current() -> f64 {
    100.0
}
fn default_rated_power() -> f64 {
    55.0
}
fn default_frequency_range() -> (f64, f64) {
    (10.0, 50.0)
}
fn default_walk_std() -> f64 {
    0.005
}
fn default_ambient_period() -> usize {
    1440
}

/// Parameters of one synthetic converter installation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    #[serde(default)]
    pub name: String,
    /// Thermal resistance, K/W.
    pub r_th: f64,
    /// Thermal time constant, s.
    pub tau: f64,
    pub loss_coeffs: LossCoeffs,
    pub load_pattern: LoadPattern,
    /// Ambient temperature interval, °C.
    pub ambient_range: (f64, f64),
    /// Target noise, K.
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default = "default_rated_current")]
    pub rated_current: f64,
    #[serde(default = "default_rated_power")]
    pub rated_power_kw: f64,
    /// Output frequency at minimum and full speed, Hz.
    #[serde(default = "default_frequency_range")]
    pub frequency_range: (f64, f64),
    /// Step std of the speed random walk (fraction of full speed).
    #[serde(default = "default_walk_std")]
    pub walk_std: f64,
    /// Length of the ambient daily cycle in samples.
    #[serde(default = "default_ambient_period")]
    pub ambient_period: usize,
}

impl DomainProfile {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::config(format!("profile `{}`: {what}", self.name)));
        if !(self.r_th > 0.0) {
            return fail("r_th must be > 0");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be > 0");
        }
        if !(self.noise_std >= 0.0) {
            return fail("noise_std must be >= 0");
        }
        if !(self.sample_interval > 0.0) {
            return fail("sample_interval must be > 0");
        }
        let step = self.sample_interval / self.tau;
        if step > 1.0 {
            return fail("sample_interval must not exceed tau (the discrete model overshoots)");
        }
        let LossCoeffs { k1, k2, k3 } = self.loss_coeffs;
        if !(k1 >= 0.0 && k2 >= 0.0 && k3 >= 0.0) {
            return fail("loss coefficients must be >= 0");
        }
        match self.load_pattern {
            LoadPattern::Steady => {}
            LoadPattern::Intermittent { duty, period } => {
                if !(duty > 0.0 && duty <= 1.0) {
                    return fail("intermittent duty must be in (0, 1]");
                }
                if period == 0 {
                    return fail("intermittent period must be >= 1");
                }
            }
            LoadPattern::PartialLoad { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return fail("partial-load fraction must be in (0, 1]");
                }
            }
            LoadPattern::Mixed { segment } => {
                if segment == 0 {
                    return fail("mixed segment must be >= 1");
                }
            }
        }
        let (lo, hi) = self.ambient_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return fail("ambient_range must be a finite interval");
        }
        let (flo, fhi) = self.frequency_range;
        if !(flo >= 0.0 && flo <= fhi && fhi.is_finite()) {
            return fail("frequency_range must be a non-negative interval");
        }
        if !(self.rated_current > 0.0 && self.rated_power_kw > 0.0) {
            return fail("rated current and power must be > 0");
        }
        if !(self.walk_std >= 0.0 && self.walk_std.is_finite()) {
            return fail("walk_std must be >= 0");
        }
        if self.ambient_period == 0 {
            return fail("ambient_period must be >= 1");
        }
        Ok(())
    }

    /// The same installation observed under a different seed.
    pub fn reseeded(&self, seed: u64) -> DomainProfile {
        DomainProfile { seed: rng::derive_seed(self.seed, seed), ..self.clone() }
    }
}

/// Samples `n_samples` consecutive observations of the profile.
pub fn generate(profile: &DomainProfile, n_samples: usize) -> Result<Dataset> {
    profile.validate()?;
    if n_samples == 0 {
        return Err(Error::config("n_samples must be >= 1"));
    }
    let features = simulate_inputs(profile, n_samples);
    let mut targets = simulate_targets(profile, &features)?;
    add_noise(profile, &mut targets);
    Dataset::new(features, targets, profile.sample_interval)
}

fn simulate_inputs(p: &DomainProfile, n: usize) -> Matrix {
    let mut rng = rng::stream(p.seed, "inputs");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let phase = rng.random_range(0.0..2.0 * PI);
    let (amb_lo, amb_hi) = p.ambient_range;
    let (f_lo, f_hi) = p.frequency_range;

    let mut speed_walk = 0.0;
    let mut torque_walk = 0.0;
    let mut mixed_level = 0.0;
    let mut out = Matrix::zeros(n, 4);
    for t in 0..n {
        let command = match p.load_pattern {
            LoadPattern::Steady => STEADY_LEVEL,
            LoadPattern::PartialLoad { fraction } => fraction,
            LoadPattern::Intermittent { duty, period } => {
                if ((t % period) as f64) < duty * period as f64 {
                    INTERMITTENT_ON_LEVEL
                } else {
                    0.0
                }
            }
            LoadPattern::Mixed { segment } => {
                if t % segment == 0 {
                    mixed_level =
                        if rng.random_bool(MIXED_OFF_PROB) { 0.0 } else { rng.random_range(0.2..=1.0) };
                }
                mixed_level
            }
        };
        speed_walk = speed_walk * (1.0 - WALK_REVERSION) + p.walk_std * unit.sample(&mut rng);
        torque_walk = torque_walk * (1.0 - WALK_REVERSION) + p.walk_std * unit.sample(&mut rng);
        let jitter = AMBIENT_JITTER_STD * unit.sample(&mut rng);

        let row = out.row_mut(t);
        if command > 0.0 {
            let speed = (command + speed_walk).clamp(MIN_RUNNING_SPEED, 1.0);
            let torque = (1.0 + torque_walk).clamp(0.6, 1.4);
            row[col::CURRENT] = p.rated_current * (0.25 + 0.75 * speed * speed) * torque;
            row[col::FREQUENCY] = f_lo + (f_hi - f_lo) * speed;
            row[col::POWER] = p.rated_power_kw * speed * speed * speed * torque;
        }
        let day = 0.5 - 0.5 * libm::cos(2.0 * PI * t as f64 / p.ambient_period as f64 + phase);
        row[col::AMBIENT] = (amb_lo + (amb_hi - amb_lo) * day + jitter).clamp(amb_lo, amb_hi);
    }
    out
}

/// Noise-free relative temperature for the given raw feature trajectory.
pub fn simulate_targets(profile: &DomainProfile, features: &Matrix) -> Result<Vec<f64>> {
    profile.validate()?;
    if features.cols() != 4 {
        return Err(Error::shape(format!("expected 4 feature columns, got {}", features.cols())));
    }
    let step = profile.sample_interval / profile.tau;
    let mut temps = Vec::with_capacity(features.rows());
    let mut t_rel = 0.0;
    // Row t is paired with the temperature at the end of its interval, after
    // the row's inputs have acted; the state before the first row is 0.
    for r in 0..features.rows() {
        let row = features.row(r);
        let loss = profile.loss_coeffs.power_loss(row[col::CURRENT], row[col::FREQUENCY], row[col::POWER]);
        t_rel += step * (profile.r_th * loss - t_rel);
        temps.push(t_rel);
    }
    Ok(temps)
}

fn add_noise(profile: &DomainProfile, targets: &mut [f64]) {
    if profile.noise_std == 0.0 {
        return;
    }
    let mut rng = rng::stream(profile.seed, "noise");
    let noise = Normal::new(0.0, profile.noise_std).expect("validated noise_std");
    for t in targets {
        *t += noise.sample(&mut rng);
    }
}

/// Scales current and power by `factor` inside `window` and re-runs the
/// thermal model so targets stay consistent with the shifted inputs. The
/// noise realisation is the profile's, so `factor == 1` is the identity on
/// data produced by `generate` with the same profile.
pub fn load_shift(data: &Dataset, profile: &DomainProfile, factor: f64, window: Range<usize>) -> Result<Dataset> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::config(format!("load-shift factor must be > 0, got {factor}")));
    }
    if window.start > window.end || window.end > data.len() {
        return Err(Error::config(format!(
            "load-shift window {}..{} outside 0..{}",
            window.start,
            window.end,
            data.len()
        )));
    }
    if data.is_normalized() {
        return Err(Error::config("load_shift expects raw (unnormalized) data"));
    }
    if data.sample_interval() != profile.sample_interval {
        return Err(Error::config("dataset and profile sample intervals differ"));
    }
    let mut features = data.features().clone();
    for r in window {
        let row = features.row_mut(r);
        row[col::CURRENT] *= factor;
        row[col::POWER] *= factor;
    }
    let mut targets = simulate_targets(profile, &features)?;
    add_noise(profile, &mut targets);
    Ok(data.with_features(features).with_targets(targets))
}
