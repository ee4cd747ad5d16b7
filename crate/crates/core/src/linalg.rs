//! Split-storage complex matrices (separate real and imaginary planes).

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let i = r * self.cols + c;
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        let i = r * self.cols + c;
        self.re[i] = v.re;
        self.im[i] = v.im;
    }

    pub fn row(&self, r: usize) -> (&[f64], &[f64]) {
        let s = r * self.cols..(r + 1) * self.cols;
        (&self.re[s.clone()], &self.im[s])
    }

    pub fn row_mut(&mut self, r: usize) -> (&mut [f64], &mut [f64]) {
        let s = r * self.cols..(r + 1) * self.cols;
        (&mut self.re[s.clone()], &mut self.im[s])
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.re, &self.im)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

pub fn norm_sqr(re: &[f64], im: &[f64]) -> f64 {
    re.iter().map(|v| v * v).sum::<f64>() + im.iter().map(|v| v * v).sum::<f64>()
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: Complex64, x_re: &[f64], x_im: &[f64], y_re: &mut [f64], y_im: &mut [f64]) {
    for (((yr, yi), xr), xi) in y_re.iter_mut().zip(y_im.iter_mut()).zip(x_re).zip(x_im) {
        *yr += a.re * xr - a.im * xi;
        *yi += a.re * xi + a.im * xr;
    }
}

/// `y += conj(a) * x`.
#[inline]
pub fn axpy_conj(a: Complex64, x_re: &[f64], x_im: &[f64], y_re: &mut [f64], y_im: &mut [f64]) {
    for (((yr, yi), xr), xi) in y_re.iter_mut().zip(y_im.iter_mut()).zip(x_re).zip(x_im) {
        *yr += a.re * xr + a.im * xi;
        *yi += a.re * xi - a.im * xr;
    }
}
