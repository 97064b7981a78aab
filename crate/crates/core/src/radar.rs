//! FMCW chirp synthesis, target echoes, interference and the dechirped IF
//! signal model.
//!
//! The victim radar transmits linear chirps; echoes return delayed copies,
//! other radars inject chirps with different slopes, and the receiver mixes
//! with the conjugate transmit signal before low-pass filtering. Interference
//! appears as time-limited wideband bursts in the IF signal.

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::ComplexSignal;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Victim chirp parameters. `slope == bandwidth / effective_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpParams {
    /// Start frequency f0, Hz.
    pub start_freq: f64,
    /// FM slope K, Hz/s.
    pub slope: f64,
    /// Effective bandwidth B, Hz.
    pub bandwidth: f64,
    /// Effective time width Tc, s.
    pub effective_width: f64,
    /// Chirp duration T, s.
    pub duration: f64,
    /// Transmit amplitude, relative units.
    pub amplitude: f64,
}

impl ChirpParams {
    /// 76.5 GHz start, 20 us duration, 0.03 GHz/us slope victim radar.
    pub fn table_i_victim() -> Self {
        let duration = 20e-6;
        let slope = 0.03e9 / 1e-6; // 0.03 GHz/us
        ChirpParams {
            start_freq: 76.5e9,
            slope,
            bandwidth: slope * duration,
            effective_width: duration,
            duration,
            amplitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.bandwidth / self.effective_width;
        if (self.slope - k).abs() > 1e-12 * self.slope.abs().max(k.abs()) {
            return Err(Error::invalid("slope != bandwidth / effective_width"));
        }
        if !(self.effective_width > 0.0 && self.effective_width <= self.duration) {
            return Err(Error::invalid("need 0 < Tc <= T"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub range_m: f64,
    /// Signed radial speed, m/s.
    pub speed_mps: f64,
    /// Echo amplitude, relative units.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererSpec {
    pub start_freq: f64,
    /// Signed FM slope, Hz/s.
    pub slope: f64,
    pub amplitude: f64,
    /// Burst start within the victim chirp, s.
    pub time_offset: f64,
}

/// Randomized radar scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub targets: Vec<TargetSpec>,
    pub interferers: Vec<InterfererSpec>,
    pub noise_std: f64,
    pub seed: u64,
}

/// Sampling configuration tied to the victim chirp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Sampling rate, Hz.
    pub fs: f64,
    /// Samples per chirp.
    pub n_samples: usize,
    /// Chirps per frame.
    pub n_chirps: usize,
    /// Low-pass cutoff, Hz.
    pub f_lpf: f64,
}

impl SimConfig {
    /// Table-I setup: 1024 samples over 20 us gives fs = 51.2 Msps; the LPF
    /// keeps 90% of the Nyquist band.
    pub fn table_i(p: &ChirpParams) -> Self {
        let n_samples = 1024;
        let fs = n_samples as f64 / p.duration;
        SimConfig {
            fs,
            n_samples,
            n_chirps: 128,
            f_lpf: 0.9 * fs / 2.0,
        }
    }

    /// Shorter signals for desk-scale experiments; same duration, lower fs.
    pub fn toy(p: &ChirpParams, n_samples: usize) -> Self {
        let fs = n_samples as f64 / p.duration;
        SimConfig {
            fs,
            n_samples,
            n_chirps: 16,
            f_lpf: 0.9 * fs / 2.0,
        }
    }

    pub fn validate(&self, p: &ChirpParams) -> Result<()> {
        let expect = (self.fs * p.duration).round() as usize;
        if expect != self.n_samples {
            return Err(Error::invalid(format!(
                "n_samples {} != round(fs * T) = {}",
                self.n_samples, expect
            )));
        }
        if !(self.f_lpf > 0.0 && self.f_lpf <= self.fs / 2.0) {
            return Err(Error::invalid("need 0 < f_lpf <= fs/2"));
        }
        Ok(())
    }
}

/// Transmit chirp: A_T exp(j 2 pi (f0 t + K/2 t^2)), phase reference t = 0.
pub fn tx_chirp(p: &ChirpParams, cfg: &SimConfig) -> Result<ComplexSignal> {
    p.validate()?;
    cfg.validate(p)?;
    let mut iq = Vec::with_capacity(cfg.n_samples);
    for n in 0..cfg.n_samples {
        let t = n as f64 / cfg.fs;
        let phase = 2.0 * PI * (p.start_freq * t + 0.5 * p.slope * t * t);
        iq.push(Complex64::from_polar(p.amplitude, phase));
    }
    Ok(ComplexSignal::new(iq, cfg.fs))
}

/// Delayed echo of the transmit chirp. Samples before the echo arrives
/// (t < tau) are zero. Errors when the delay exceeds the chirp duration.
pub fn target_echo(
    p: &ChirpParams,
    tgt: &TargetSpec,
    chirp_index: usize,
    cfg: &SimConfig,
) -> Result<ComplexSignal> {
    let tau = echo_delay(tgt, chirp_index, p.duration);
    if tau >= p.duration {
        return Err(Error::OutOfRange(format!(
            "echo delay {tau:.3e} s >= chirp duration {:.3e} s",
            p.duration
        )));
    }
    let mut iq = Vec::with_capacity(cfg.n_samples);
    for n in 0..cfg.n_samples {
        let t = n as f64 / cfg.fs;
        if t < tau {
            iq.push(Complex64::new(0.0, 0.0));
        } else {
            let td = t - tau;
            let phase = 2.0 * PI * (p.start_freq * td + 0.5 * p.slope * td * td);
            iq.push(Complex64::from_polar(tgt.amplitude, phase));
        }
    }
    Ok(ComplexSignal::new(iq, cfg.fs))
}

/// Round-trip delay at the start of chirp `chirp_index`.
pub fn echo_delay(tgt: &TargetSpec, chirp_index: usize, chirp_duration: f64) -> f64 {
    2.0 * (tgt.range_m + tgt.speed_mps * chirp_index as f64 * chirp_duration) / SPEED_OF_LIGHT
}

/// Interferer chirp as seen at the victim receiver; zero before its burst
/// starts.
pub fn interferer_signal(spec: &InterfererSpec, cfg: &SimConfig) -> ComplexSignal {
    let mut iq = Vec::with_capacity(cfg.n_samples);
    for n in 0..cfg.n_samples {
        let t = n as f64 / cfg.fs;
        if t < spec.time_offset {
            iq.push(Complex64::new(0.0, 0.0));
        } else {
            let td = t - spec.time_offset;
            let phase = 2.0 * PI * (spec.start_freq * td + 0.5 * spec.slope * td * td);
            iq.push(Complex64::from_polar(spec.amplitude, phase));
        }
    }
    ComplexSignal::new(iq, cfg.fs)
}

/// Dechirp: pointwise mix of the received signal against the transmit chirp,
/// then an ideal frequency-domain brick-wall low-pass at `f_lpf`.
///
/// The conjugation is chosen so a target at delay tau produces a beat at
/// +K*tau, i.e. range peaks land in the positive-frequency bins.
pub fn dechirp_lpf(rx: &ComplexSignal, tx: &ComplexSignal, cfg: &SimConfig) -> Result<ComplexSignal> {
    if rx.len() != tx.len() {
        return Err(Error::invalid("dechirp: rx/tx length mismatch"));
    }
    let mixed: Vec<Complex64> = rx.iq.iter().zip(&tx.iq).map(|(r, t)| r.conj() * t).collect();
    let mut spec = fft::dft(&mixed)?;
    let n = spec.len();
    for (k, v) in spec.iter_mut().enumerate() {
        let f = bin_frequency(k, n, cfg.fs);
        if f.abs() > cfg.f_lpf {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    let iq = fft::idft(&spec)?;
    Ok(ComplexSignal::new(iq, cfg.fs))
}

/// Dechirped interference burst at the victim's sampling rate.
///
/// The mixed interferer chirp sweeps far beyond the victim's Nyquist band, so
/// mixing at the ADC rate would alias that energy into the passband. The
/// analog chain filters before sampling; this mirrors it by mixing at an
/// oversampled rate, brick-wall filtering at `f_lpf`, then decimating.
pub fn dechirp_interferer(
    intf: &InterfererSpec,
    p: &ChirpParams,
    cfg: &SimConfig,
) -> Result<ComplexSignal> {
    let sweep_bound = (intf.start_freq - p.start_freq).abs()
        + p.slope.abs() * p.duration
        + intf.slope.abs() * p.duration;
    let mut os = 1usize;
    while (os as f64) * cfg.fs / 2.0 < 1.1 * sweep_bound && os < 256 {
        os *= 2;
    }
    let fs_os = cfg.fs * os as f64;
    let n_os = cfg.n_samples * os;
    let mut mixed = Vec::with_capacity(n_os);
    for i in 0..n_os {
        let t = i as f64 / fs_os;
        if t < intf.time_offset {
            mixed.push(Complex64::new(0.0, 0.0));
            continue;
        }
        let tx_phase = 2.0 * PI * (p.start_freq * t + 0.5 * p.slope * t * t);
        let td = t - intf.time_offset;
        let int_phase = 2.0 * PI * (intf.start_freq * td + 0.5 * intf.slope * td * td);
        // conj(interferer) * tx, matching dechirp_lpf's convention
        mixed.push(Complex64::from_polar(
            p.amplitude * intf.amplitude,
            tx_phase - int_phase,
        ));
    }
    let mut spec = fft::dft(&mixed)?;
    for (k, v) in spec.iter_mut().enumerate() {
        let f = bin_frequency(k, n_os, fs_os);
        if f.abs() > cfg.f_lpf {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    let full = fft::idft(&spec)?;
    let iq = full.iter().step_by(os).cloned().collect();
    Ok(ComplexSignal::new(iq, cfg.fs))
}

/// Signed frequency of FFT bin `k` for an `n`-point transform at rate `fs`.
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    if k <= n / 2 {
        k as f64 * fs / n as f64
    } else {
        (k as f64 - n as f64) * fs / n as f64
    }
}

/// FFT bin of the beat frequency for a target at `range_m`.
pub fn beat_bin(range_m: f64, p: &ChirpParams, cfg: &SimConfig) -> usize {
    let tau = 2.0 * range_m / SPEED_OF_LIGHT;
    let beat = p.slope * tau;
    (beat / cfg.fs * cfg.n_samples as f64).round() as usize
}

/// One (interfered, clean) IF pair for a chirp of the scene. The clean signal
/// carries only the dechirped target echoes; the interfered signal adds the
/// dechirped interference and circular complex Gaussian noise.
pub fn synth_if_pair(
    scene: &SceneSpec,
    p: &ChirpParams,
    cfg: &SimConfig,
    chirp_index: usize,
) -> Result<(ComplexSignal, ComplexSignal)> {
    let tx = tx_chirp(p, cfg)?;
    let mut clean = ComplexSignal::zeros(cfg.n_samples, cfg.fs);
    for tgt in &scene.targets {
        let echo = target_echo(p, tgt, chirp_index, cfg)?;
        let beat = dechirp_lpf(&echo, &tx, cfg)?;
        for (c, b) in clean.iq.iter_mut().zip(&beat.iq) {
            *c += b;
        }
    }
    let mut interfered = clean.clone();
    for intf in &scene.interferers {
        let burst = dechirp_interferer(intf, p, cfg)?;
        for (a, b) in interfered.iq.iter_mut().zip(&burst.iq) {
            *a += b;
        }
    }
    if scene.noise_std > 0.0 {
        // per-chirp noise stream derived from the scene seed
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ (chirp_index as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let comp = Normal::new(0.0, scene.noise_std / f64::sqrt(2.0))
            .map_err(|e| Error::invalid(e.to_string()))?;
        for v in interfered.iq.iter_mut() {
            *v += Complex64::new(comp.sample(&mut rng), comp.sample(&mut rng));
        }
    }
    Ok((interfered, clean))
}

/// Table-I parameter intervals for scene sampling. Speeds default to a signed
/// interval (configurable); see `SceneDistribution::table_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDistribution {
    pub n_targets: (usize, usize),
    pub range_m: (f64, f64),
    pub speed_mps: (f64, f64),
    pub target_amplitude: (f64, f64),
    pub n_interferers: (usize, usize),
    pub interferer_slope: (f64, f64),
    pub interferer_start_freq: (f64, f64),
    pub interferer_amplitude: (f64, f64),
    pub noise_std: f64,
    /// Victim chirp duration, bounds the interferer time offset.
    pub chirp_duration: f64,
}

impl SceneDistribution {
    pub fn table_i() -> Self {
        SceneDistribution {
            n_targets: (1, 3),
            range_m: (3.0, 45.0),
            speed_mps: (-45.0, 45.0),
            target_amplitude: (0.4, 3.0),
            n_interferers: (0, 5),
            interferer_slope: (-0.0675e9 / 1e-6, 0.0675e9 / 1e-6),
            interferer_start_freq: (76.2e9, 76.8e9),
            interferer_amplitude: (6.0, 33.0),
            noise_std: 0.05,
            chirp_duration: 20e-6,
        }
    }
}

/// Deterministic scene draw from the configured intervals.
pub fn sample_scene_from(dist: &SceneDistribution, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_targets = rng.gen_range(dist.n_targets.0..=dist.n_targets.1);
    let targets = (0..n_targets)
        .map(|_| TargetSpec {
            range_m: rng.gen_range(dist.range_m.0..dist.range_m.1),
            speed_mps: rng.gen_range(dist.speed_mps.0..dist.speed_mps.1),
            amplitude: rng.gen_range(dist.target_amplitude.0..dist.target_amplitude.1),
        })
        .collect();
    let n_interferers = rng.gen_range(dist.n_interferers.0..=dist.n_interferers.1);
    let interferers = (0..n_interferers)
        .map(|_| InterfererSpec {
            start_freq: rng.gen_range(dist.interferer_start_freq.0..dist.interferer_start_freq.1),
            slope: rng.gen_range(dist.interferer_slope.0..dist.interferer_slope.1),
            amplitude: rng.gen_range(dist.interferer_amplitude.0..dist.interferer_amplitude.1),
            time_offset: rng.gen_range(0.0..dist.chirp_duration),
        })
        .collect();
    SceneSpec {
        targets,
        interferers,
        noise_std: dist.noise_std,
        seed,
    }
}

/// Table-I scene draw.
pub fn sample_scene(seed: u64) -> SceneSpec {
    sample_scene_from(&SceneDistribution::table_i(), seed)
}
