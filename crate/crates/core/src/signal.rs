//! Radix-2 FFT, causal convolution, and the FFT form of the structured
//! softmax `softmax(c·0, …, c·(L−1))`.

use std::f64::consts::PI;

use crate::cnum::Complex;
use crate::error::{DssError, Result};
use crate::kernel::Kernel;

/// Coefficients whose length is a power of two.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex>,
}

impl Spectrum {
    pub fn new(coeffs: Vec<Complex>) -> Result<Self> {
        if !coeffs.len().is_power_of_two() {
            return Err(DssError::NotPowerOfTwo(coeffs.len()));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[Complex] {
        &self.coeffs
    }

    pub fn into_inner(self) -> Vec<Complex> {
        self.coeffs
    }

    /// In-place forward or inverse transform.
    pub fn transform(&mut self, inverse: bool) {
        fft_in_place(&mut self.coeffs, inverse);
    }
}

/// Iterative decimation-in-time transform. The inverse uses `e^{+2πi/L}`
/// twiddles and divides by `L`.
pub fn fft(x: &[Complex], inverse: bool) -> Result<Vec<Complex>> {
    let mut s = Spectrum::new(x.to_vec())?;
    s.transform(inverse);
    Ok(s.into_inner())
}

fn fft_in_place(a: &mut [Complex], inverse: bool) {
    let n = a.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            a.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let angle = sign * 2.0 * PI / len as f64;
        // Twiddles computed directly rather than by recurrence to keep
        // round-off independent of the stage length.
        let twiddles: Vec<Complex> = (0..half).map(|k| Complex::from_polar(1.0, angle * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = a[start + k];
                let v = a[start + k + half] * twiddles[k];
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        a.iter_mut().for_each(|v| *v *= scale);
    }
}

/// `y_k = Σ_{j≤k} K_j u_{k−j}` by the double loop.
pub fn causal_conv_naive(k: &Kernel, u: &[f64]) -> Result<Vec<f64>> {
    if k.len() != u.len() {
        return Err(DssError::LengthMismatch(k.len(), u.len()));
    }
    Ok((0..u.len())
        .map(|i| (0..=i).map(|j| k.values[j] * u[i - j]).sum())
        .collect())
}

/// Causal convolution through zero-padded FFTs of length `≥ 2L`.
pub fn causal_conv_fft(k: &Kernel, u: &[f64]) -> Result<Vec<f64>> {
    if k.len() != u.len() {
        return Err(DssError::LengthMismatch(k.len(), u.len()));
    }
    let l = u.len();
    if l == 0 {
        return Ok(Vec::new());
    }
    let kf = padded_spectrum(&k.values, 2 * l);
    Ok(convolve_with_spectrum(&kf, u))
}

/// Forward transform of `x` zero-padded to the next power of two `≥ min_len`.
pub fn padded_spectrum(x: &[f64], min_len: usize) -> Vec<Complex> {
    let size = min_len.next_power_of_two();
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for (slot, &v) in buf.iter_mut().zip(x) {
        slot.re = v;
    }
    fft_in_place(&mut buf, false);
    buf
}

/// First `u.len()` outputs of the product of `kernel_spectrum` with the
/// spectrum of `u` padded to the same size.
pub fn convolve_with_spectrum(kernel_spectrum: &[Complex], u: &[f64]) -> Vec<f64> {
    let mut buf = padded_spectrum(u, kernel_spectrum.len());
    for (b, kf) in buf.iter_mut().zip(kernel_spectrum) {
        *b *= kf;
    }
    fft_in_place(&mut buf, true);
    buf.iter().take(u.len()).map(|v| v.re).collect()
}

const FFT_SOFTMAX_SINGULAR_TOL: f64 = 1e-9;

/// `softmax(c·0, …, c·(L−1))` as the inverse FFT of `(r+1)/(r+ω^k)`, with
/// `p = [Re c > 0]`, `n = 1 − p`, `e = exp(c(n − p))`,
/// `r = (n − pe)/(p − ne)` and `ω = e^{−2πi/L}`. Only non-positive real
/// parts are exponentiated.
pub fn softmax_via_fft(c: Complex, l: usize) -> Result<Vec<Complex>> {
    if !l.is_power_of_two() {
        return Err(DssError::NotPowerOfTwo(l));
    }
    if c.re == 0.0 {
        return Err(DssError::InvalidArgument("Re(c) must be nonzero".into()));
    }
    // Singularities sit at c = −2πik/L, i.e. on the imaginary axis.
    let step = 2.0 * PI / l as f64;
    let nearest = (-c.im / step).round();
    let pole = Complex::new(0.0, -step * nearest);
    if (c - pole).norm() < FFT_SOFTMAX_SINGULAR_TOL {
        return Err(DssError::FftSoftmaxSingular);
    }
    let one = Complex::new(1.0, 0.0);
    let (p, n) = if c.re > 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
    let e = (c * (n - p)).exp();
    let r = (n - e * p) / (p - e * n);
    let values: Vec<Complex> = (0..l)
        .map(|k| {
            let omega_k = Complex::from_polar(1.0, -step * k as f64);
            (r + one) / (r + omega_k)
        })
        .collect();
    fft(&values, true)
}
