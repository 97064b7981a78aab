//! Discrete Fourier transforms.
//!
//! The forward path is an iterative radix-2 FFT for power-of-two lengths and
//! an O(N^2) direct summation otherwise. The direct path doubles as the test
//! oracle for the fast path.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Unnormalized forward DFT: X[k] = sum_n x[n] exp(-j 2 pi k n / N).
pub fn dft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::invalid("dft of empty input"));
    }
    if x.len().is_power_of_two() {
        let mut buf = x.to_vec();
        fft_in_place(&mut buf, false);
        Ok(buf)
    } else {
        Ok(dft_direct(x))
    }
}

/// Inverse DFT with 1/N normalization.
pub fn idft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::invalid("idft of empty input"));
    }
    let n = x.len() as f64;
    let mut buf;
    if x.len().is_power_of_two() {
        buf = x.to_vec();
        fft_in_place(&mut buf, true);
    } else {
        buf = idft_direct_unnormalized(x);
    }
    for v in &mut buf {
        *v /= n;
    }
    Ok(buf)
}

/// Direct O(N^2) forward DFT. Kept as the independent oracle for the FFT.
pub fn dft_direct(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ang = -2.0 * PI * (k as f64) * (i as f64) / (n as f64);
            acc += v * Complex64::new(ang.cos(), ang.sin());
        }
        *o = acc;
    }
    out
}

fn idft_direct_unnormalized(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ang = 2.0 * PI * (k as f64) * (i as f64) / (n as f64);
            acc += v * Complex64::new(ang.cos(), ang.sin());
        }
        *o = acc;
    }
    out
}

/// Iterative radix-2 Cooley-Tukey. `inverse` flips the twiddle sign only;
/// normalization is the caller's business.
fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u32).reverse_bits() >> (32 - bits);
        let j = j as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / (len as f64);
        let wlen = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

/// DFT of a real sequence (imaginary parts taken as zero).
pub fn dft_real(x: &[f64]) -> Result<Vec<Complex64>> {
    let cx: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft(&cx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let x = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        let s = dft(&x).unwrap();
        for v in s {
            assert!(approx(v, Complex64::new(1.0, 0.0), 1e-12));
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let c = Complex64::new(2.5, -1.0);
        let x = vec![c; 8];
        let s = dft(&x).unwrap();
        assert!(approx(s[0], c * 8.0, 1e-12));
        for v in &s[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_against_direct_summation() {
        let mut state = 0x12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64) * 2.0 - 1.0
        };
        let x: Vec<Complex64> = (0..64).map(|_| Complex64::new(next(), next())).collect();
        let s = dft(&x).unwrap();
        let num: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        let den: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        assert!((num / den - 64.0).abs() / 64.0 < 1e-9);
    }

    #[test]
    fn fft_matches_direct_oracle() {
        for n in [8usize, 64, 1024] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| {
                    let t = i as f64;
                    Complex64::new((0.1 * t).sin(), (0.07 * t + 0.3).cos())
                })
                .collect();
            let fast = dft(&x).unwrap();
            let slow = dft_direct(&x);
            let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0) * n as f64;
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10 * scale, "n={n}");
            }
        }
    }

    #[test]
    fn round_trip_inverse() {
        let x: Vec<Complex64> = (0..32)
            .map(|i| Complex64::new((i as f64 * 0.3).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let back = idft(&dft(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn non_power_of_two_falls_back() {
        let x: Vec<Complex64> = (0..12)
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let s = dft(&x).unwrap();
        let o = dft_direct(&x);
        for (a, b) in s.iter().zip(&o) {
            assert!((a - b).norm() < 1e-9);
        }
        let back = idft(&s).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(dft(&[]).is_err());
    }
}
