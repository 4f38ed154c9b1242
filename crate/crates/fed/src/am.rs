//! Fourier amplitude mixing: keep an image's phase, blend its amplitude
//! spectrum with one received from another client.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{FedError, Result};

/// In-place 2-D DFT of a row-major `h × w` grid.
fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    if inverse {
        let s = 1.0 / (h * w) as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// Per-channel 2-D DFT of a `[C, H, W]` image.
pub fn spectrum(image: &[f64], channels: usize, h: usize, w: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for c in 0..channels {
        fft2(&mut planner, &mut buf[c * h * w..(c + 1) * h * w], h, w, false);
    }
    buf
}

/// `|DFT2|` of every channel of a `[C, H, W]` image.
pub fn amplitude(image: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    spectrum(image, channels, h, w).iter().map(|z| z.norm()).collect()
}

/// Per channel, `IDFT2(((1−λ)|F| + λ·A) · e^{i·arg F})`, real part, where
/// `F = DFT2(image)` and `A` is the foreign amplitude.
pub fn amplitude_mix(image: &[f64], foreign: &[f64], channels: usize, h: usize, w: usize, lambda: f64) -> Result<Vec<f64>> {
    if image.len() != channels * h * w || foreign.len() != image.len() {
        return Err(FedError::Shape(format!(
            "amplitude_mix: image {} and amplitude {} values for {channels}x{h}x{w}",
            image.len(),
            foreign.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FedError::Config(format!("amplitude_mix: lambda {lambda} outside [0,1]")));
    }
    let mut planner = FftPlanner::new();
    let mut buf = spectrum(image, channels, h, w);
    for (z, &a) in buf.iter_mut().zip(foreign) {
        let mixed = (1.0 - lambda) * z.norm() + lambda * a;
        *z = Complex64::from_polar(mixed, z.arg());
    }
    for c in 0..channels {
        fft2(&mut planner, &mut buf[c * h * w..(c + 1) * h * w], h, w, true);
    }
    Ok(buf.iter().map(|z| z.re).collect())
}
