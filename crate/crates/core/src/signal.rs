//! Complex I/Q time series, the IF-signal unit of work.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use num_complex::Complex64;

/// Fixed-length complex time series with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub iq: Vec<Complex64>,
    pub fs: f64,
}

impl ComplexSignal {
    pub fn new(iq: Vec<Complex64>, fs: f64) -> Self {
        ComplexSignal { iq, fs }
    }

    pub fn zeros(n: usize, fs: f64) -> Self {
        ComplexSignal {
            iq: vec![Complex64::new(0.0, 0.0); n],
            fs,
        }
    }

    pub fn len(&self) -> usize {
        self.iq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iq.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.iq.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Two-channel real representation `[n, 2]` with I and Q columns.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.iq.len() * 2);
        for v in &self.iq {
            data.push(v.re);
            data.push(v.im);
        }
        Tensor::new(vec![self.iq.len(), 2], data).expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor, fs: f64) -> Result<Self> {
        let sh = t.shape();
        if sh.len() != 2 || sh[1] != 2 {
            return Err(Error::invalid("expected [n, 2] I/Q tensor"));
        }
        let iq = t
            .data()
            .chunks(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        Ok(ComplexSignal { iq, fs })
    }

    /// Largest absolute value over the I and Q components.
    pub fn peak_component(&self) -> f64 {
        self.iq
            .iter()
            .flat_map(|v| [v.re.abs(), v.im.abs()])
            .fold(0.0, f64::max)
    }
}

/// Peak normalization: divides by the max absolute I/Q component so the
/// output peaks at 1. Returns the scale that restores the original.
pub fn normalize_signal(x: &ComplexSignal) -> Result<(ComplexSignal, f64)> {
    let scale = x.peak_component();
    if scale == 0.0 {
        return Err(Error::DegenerateInput("normalize of all-zero signal".into()));
    }
    let iq = x.iq.iter().map(|v| v / scale).collect();
    Ok((ComplexSignal { iq, fs: x.fs }, scale))
}
