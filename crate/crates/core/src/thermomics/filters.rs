//! Filter bank: Laplacian of Gaussian, Gabor and undecimated Haar wavelet.
//!
//! Every response has the input's size; borders use symmetric (half-sample)
//! reflection.

use std::f64::consts::PI;

use super::ThermomicsError;
use crate::Matrix;

pub const LOG_SIGMAS: [f64; 2] = [1.0, 2.0];
pub const GABOR_WAVELENGTH: f64 = 4.0;
pub const GABOR_SIGMA: f64 = 2.0;
pub const MIN_SIDE: usize = 8;

/// Names of the filtered images in [`filter_bank`] order.
pub const FILTER_NAMES: [&str; 10] = [
    "LOG-1-0",
    "LOG-2-0",
    "Gabor-0",
    "Gabor-π/4",
    "Gabor-π/2",
    "Gabor-3π/4",
    "Wavelet-LL",
    "Wavelet-LH",
    "Wavelet-HL",
    "Wavelet-HH",
];

/// Symmetric reflection of an index into `0..n`.
pub(crate) fn reflect(idx: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let k = idx.rem_euclid(period);
    if k < n as isize {
        k as usize
    } else {
        (period - 1 - k) as usize
    }
}

/// Centered correlation with an odd-sized kernel.
pub fn correlate(image: &Matrix, kernel: &Matrix) -> Matrix {
    let (rows, cols) = image.shape();
    let (kr, kc) = (kernel.nrows() as isize / 2, kernel.ncols() as isize / 2);
    Matrix::from_fn(rows, cols, |i, j| {
        let mut acc = 0.0;
        for u in 0..kernel.nrows() {
            let ii = reflect(i as isize + u as isize - kr, rows);
            for v in 0..kernel.ncols() {
                let jj = reflect(j as isize + v as isize - kc, cols);
                acc += kernel[(u, v)] * image[(ii, jj)];
            }
        }
        acc
    })
}

fn subtract_mean(mut k: Matrix) -> Matrix {
    let mu = k.mean();
    k.add_scalar_mut(-mu);
    k
}

/// Sampled LoG kernel of radius `⌈4σ⌉`, shifted to zero sum.
pub fn log_kernel(sigma: f64) -> Matrix {
    let r = (4.0 * sigma).ceil() as isize;
    let size = (2 * r + 1) as usize;
    let s2 = sigma * sigma;
    let k = Matrix::from_fn(size, size, |i, j| {
        let (y, x) = (i as isize - r, j as isize - r);
        let rr = (x * x + y * y) as f64;
        -1.0 / (PI * s2 * s2) * (1.0 - rr / (2.0 * s2)) * (-rr / (2.0 * s2)).exp()
    });
    subtract_mean(k)
}

/// Real Gabor kernel of radius `⌈3σ⌉`, shifted to zero sum.
pub fn gabor_kernel(theta: f64, wavelength: f64, sigma: f64) -> Matrix {
    let r = (3.0 * sigma).ceil() as isize;
    let size = (2 * r + 1) as usize;
    let (s, c) = theta.sin_cos();
    let k = Matrix::from_fn(size, size, |i, j| {
        let (y, x) = ((i as isize - r) as f64, (j as isize - r) as f64);
        let xr = x * c + y * s;
        let yr = -x * s + y * c;
        (-(xr * xr + yr * yr) / (2.0 * sigma * sigma)).exp() * (2.0 * PI * xr / wavelength).cos()
    });
    subtract_mean(k)
}

/// Undecimated single-level Haar subbands `[LL, LH, HL, HH]`.
pub fn haar_subbands(image: &Matrix) -> [Matrix; 4] {
    let (rows, cols) = image.shape();
    let at = |i: usize, j: usize| image[(reflect(i as isize, rows), reflect(j as isize, cols))];
    let band = |f: fn(f64, f64, f64, f64) -> f64| {
        Matrix::from_fn(rows, cols, |i, j| f(at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1)))
    };
    [
        band(|a, b, c, d| (a + b + c + d) / 2.0),
        band(|a, b, c, d| (a + b - c - d) / 2.0),
        band(|a, b, c, d| (a - b + c - d) / 2.0),
        band(|a, b, c, d| (a - b - c + d) / 2.0),
    ]
}

/// All ten filtered images, named by [`FILTER_NAMES`].
pub fn filter_bank(image: &Matrix) -> Result<Vec<(&'static str, Matrix)>, ThermomicsError> {
    let (rows, cols) = image.shape();
    if rows < MIN_SIDE || cols < MIN_SIDE {
        return Err(ThermomicsError::ImageTooSmall(rows, cols));
    }
    let mut responses = Vec::with_capacity(FILTER_NAMES.len());
    for sigma in LOG_SIGMAS {
        responses.push(correlate(image, &log_kernel(sigma)));
    }
    for k in 0..4 {
        let theta = k as f64 * PI / 4.0;
        responses.push(correlate(image, &gabor_kernel(theta, GABOR_WAVELENGTH, GABOR_SIGMA)));
    }
    responses.extend(haar_subbands(image));
    Ok(FILTER_NAMES.into_iter().zip(responses).collect())
}
