//! Radix-2 FFT.

use crate::error::{Error, Result};
use num_complex::Complex64;

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fft length must be a power of two, got {n}"
        )));
    }
    Ok(())
}

fn fft_in_place(x: &mut [Complex64], inverse: bool) {
    let n = x.len();
    if n == 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            x.swap(i, j);
        }
    }
    // Iterative butterflies.
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let w_len = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let even = x[start + k];
                let odd = x[start + k + len / 2] * w;
                x[start + k] = even + odd;
                x[start + k + len / 2] = even - odd;
                w *= w_len;
            }
        }
        len <<= 1;
    }
}

/// Unnormalized forward DFT of a power-of-two-length signal.
pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_pow2(x.len())?;
    let mut out = x.to_vec();
    fft_in_place(&mut out, false);
    Ok(out)
}

/// Inverse DFT with 1/n normalization.
pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_pow2(x.len())?;
    let mut out = x.to_vec();
    fft_in_place(&mut out, true);
    let scale = 1.0 / out.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}
