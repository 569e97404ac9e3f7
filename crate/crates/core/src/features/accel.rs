//! Spectral and energy features of accelerometer bursts.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::types::{AccelSample, DayPeriod};

use super::{mean, population_std, FeatureConfig};

pub const DAILY_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstSummary {
    /// Hz; `None` when the burst is too short for spectral analysis.
    pub dominant_freq: Option<f64>,
    /// Single-sided amplitude (m/s^2) of the dominant bin.
    pub dominant_amp: Option<f64>,
    /// Mean squared raw magnitude.
    pub energy: f64,
}

/// Sampling rate from per-sample offsets; `None` if the burst spans no time.
pub fn sampling_rate(samples: &[AccelSample]) -> Option<f64> {
    let (first, last) = (samples.first()?, samples.last()?);
    let span = f64::from(last.dt_ms) - f64::from(first.dt_ms);
    (span > 0.0).then(|| (samples.len() - 1) as f64 * 1000.0 / span)
}

pub fn analyze_burst(samples: &[AccelSample], min_spectral: usize, planner: &mut FftPlanner<f64>) -> BurstSummary {
    let mags: Vec<f64> = samples.iter().map(AccelSample::magnitude).collect();
    let energy = mags.iter().map(|m| m * m).sum::<f64>() / mags.len().max(1) as f64;
    let fs = sampling_rate(samples);
    let (dominant_freq, dominant_amp) = match fs {
        Some(fs) if samples.len() >= min_spectral.max(2) => {
            let n = mags.len();
            let m = mags.iter().sum::<f64>() / n as f64;
            let mut buf: Vec<Complex<f64>> = mags.iter().map(|&v| Complex::new(v - m, 0.0)).collect();
            planner.plan_fft_forward(n).process(&mut buf);
            let mut best = (1usize, -1.0f64);
            for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
                let amp = 2.0 * c.norm() / n as f64;
                if amp > best.1 {
                    best = (k, amp);
                }
            }
            // Rounding noise below 1e-9 counts as a flat spectrum.
            if best.1 < 1e-9 {
                (Some(0.0), Some(0.0))
            } else {
                (Some(best.0 as f64 * fs / n as f64), Some(best.1))
            }
        }
        _ => (None, None),
    };
    BurstSummary { dominant_freq, dominant_amp, energy }
}

/// Mean and std (population) over the day's bursts of dominant frequency and
/// amplitude, then mean and std of energy per period.
pub fn accel_daily(bursts: &[(DayPeriod, &[AccelSample])], cfg: &FeatureConfig) -> Vec<Option<f64>> {
    let mut planner = FftPlanner::new();
    let summaries: Vec<(DayPeriod, BurstSummary)> =
        bursts.iter().map(|(p, s)| (*p, analyze_burst(s, cfg.min_spectral_samples, &mut planner))).collect();
    let freqs: Vec<f64> = summaries.iter().filter_map(|s| s.1.dominant_freq).collect();
    let amps: Vec<f64> = summaries.iter().filter_map(|s| s.1.dominant_amp).collect();
    let mut out = vec![mean(&freqs), population_std(&freqs), mean(&amps), population_std(&amps)];
    let energy = |p: DayPeriod| -> Vec<f64> { summaries.iter().filter(|s| s.0 == p).map(|s| s.1.energy).collect() };
    out.extend(DayPeriod::PARTS.iter().map(|&p| mean(&energy(p))));
    out.extend(DayPeriod::PARTS.iter().map(|&p| population_std(&energy(p))));
    out
}
