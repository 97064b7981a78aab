//! Training machinery: Kaiming initialization, the hybrid time-frequency
//! loss, Adam with cosine-annealing warm restarts, and the epoch loop.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumMode {
    /// Compare magnitude spectra (default; the informative choice).
    Magnitude,
    /// Compare complex spectra. By Parseval this term is exactly
    /// proportional to the time-domain term, so the loss degenerates to a
    /// scaled RMSE; shipped for comparison, not recommended.
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the frequency term, in [0, 1].
    pub lambda: f64,
    pub spectrum_mode: SpectrumMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.3,
            spectrum_mode: SpectrumMode::Magnitude,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("loss lambda must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Hybrid time-frequency reconstruction loss on a graph:
/// `(1−λ)/√N·‖y−ŷ‖₂ + λ/√N·‖spec(y)−spec(ŷ)‖₂` where `spec` is the
/// magnitude (or complex) DFT of the I/Q sequence.
pub fn hybrid_loss_nodes(
    g: &mut Graph,
    pred: NodeId,
    target: NodeId,
    cfg: &LossConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let sh = g.shape(pred).to_vec();
    if g.shape(target) != sh {
        return Err(Error::invalid("loss: prediction/target shape mismatch"));
    }
    if sh.len() != 2 || sh[1] != 2 {
        return Err(Error::invalid("loss expects [signal_len, 2] I/Q tensors"));
    }
    let n = sh[0] as f64;
    let diff = g.sub(pred, target)?;
    let time_norm = g.l2_norm(diff);
    let time_term = g.scale(time_norm, (1.0 - cfg.lambda) / n.sqrt());
    let fp = g.dft_iq(pred)?;
    let ft = g.dft_iq(target)?;
    let freq_norm = match cfg.spectrum_mode {
        SpectrumMode::Magnitude => {
            let mp = g.complex_mag(fp)?;
            let mt = g.complex_mag(ft)?;
            let d = g.sub(mp, mt)?;
            g.l2_norm(d)
        }
        SpectrumMode::Complex => {
            let d = g.sub(fp, ft)?;
            g.l2_norm(d)
        }
    };
    let freq_term = g.scale(freq_norm, cfg.lambda / n.sqrt());
    g.add(time_term, freq_term)
}

/// Tensor-level hybrid loss value.
pub fn hybrid_loss(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new_inference();
    let p = g.constant(pred);
    let t = g.constant(target);
    let loss = hybrid_loss_nodes(&mut g, p, t, cfg)?;
    Ok(g.data(loss)[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    /// First restart period, epochs.
    pub t0: usize,
    /// Period multiplier at each restart.
    pub t_mult: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr_max: 1e-4,
            lr_min: 1e-6,
            t0: 50,
            t_mult: 2,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_min >= self.lr_max {
            return Err(Error::invalid("lr_min must be below lr_max"));
        }
        if self.t0 == 0 || self.t_mult == 0 {
            return Err(Error::invalid("T0 and T_mult must be >= 1"));
        }
        Ok(())
    }
}

/// Cosine annealing with warm restarts: within the current period `T_i`,
/// `lr = lr_min + ½(lr_max − lr_min)(1 + cos(π·t_cur/T_i))`; periods are
/// `T0, T0·T_mult, T0·T_mult², …`.
pub fn lr_schedule(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let mut period = cfg.t0;
    let mut start = 0usize;
    while epoch >= start + period {
        start += period;
        period = period.saturating_mul(cfg.t_mult.max(1));
    }
    let t_cur = (epoch - start) as f64;
    cfg.lr_min
        + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t_cur / period as f64).cos())
}

/// Adam moment buffers and step counter for one ordered parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl OptimizerState {
    pub fn new(param_lens: &[usize], base_lr: f64) -> Self {
        OptimizerState {
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
        }
    }
}

/// One bias-corrected Adam update. Reads each tensor's `grad` buffer;
/// parameter order must match the state's buffers.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::InvalidState(format!(
            "optimizer holds {} buffers for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::InvalidState("adam_step: missing gradient".into()))?
            .clone();
        if grad.len() != p.len() {
            return Err(Error::InvalidState("gradient length mismatch".into()));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (x, g)) in p.data_mut().iter_mut().zip(&grad).enumerate() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Zero-mean normal draws with variance `2 / fan_in`, deterministic per seed.
pub fn kaiming_init(shape: Vec<usize>, fan_in: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kaiming_init_with(shape, fan_in, &mut rng)
}

/// Kaiming draw from a caller-owned stream, for initializing many tensors in
/// one deterministic sequence.
pub fn kaiming_init_with(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("kaiming fan_in must be >= 1"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiming_statistics() {
        let t = kaiming_init(vec![10_000], 50, 7).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 0.04).abs() < 0.002, "var {var}");
    }

    #[test]
    fn kaiming_deterministic() {
        let a = kaiming_init(vec![4, 4], 4, 99).unwrap();
        let b = kaiming_init(vec![4, 4], 4, 99).unwrap();
        assert_eq!(a, b);
        let c = kaiming_init(vec![4, 4], 4, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kaiming_fan_in_two_targets_unit_variance() {
        let t = kaiming_init(vec![20_000], 2, 3).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn kaiming_zero_fan_in_rejected() {
        assert!(kaiming_init(vec![2], 0, 1).is_err());
    }
}
