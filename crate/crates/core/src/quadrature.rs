//! Gauss rules, Gregory-corrected running integrals and discrete convolutions on a uniform grid.

use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Nodes and weights of a Gauss rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch: eigen-decomposition of the symmetric Jacobi matrix.
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> GaussRule {
    let n = diag.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
        if i + 1 < n {
            jac[(i, i + 1)] = off[i];
            jac[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Laguerre rule for ∫₀^∞ e^{−x} f(x) dx.
pub fn gauss_laguerre(n: usize) -> GaussRule {
    let diag: Vec<f64> = (0..n).map(|i| (2 * i + 1) as f64).collect();
    let off: Vec<f64> = (1..n).map(|i| i as f64).collect();
    golub_welsch(&diag, &off, 1.0)
}

/// Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> GaussRule {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &off, 2.0)
}

pub(crate) fn laguerre_cached(n: usize) -> &'static GaussRule {
    static L200: OnceLock<GaussRule> = OnceLock::new();
    static L400: OnceLock<GaussRule> = OnceLock::new();
    match n {
        200 => L200.get_or_init(|| gauss_laguerre(200)),
        400 => L400.get_or_init(|| gauss_laguerre(400)),
        _ => panic!("no cached Laguerre rule with {n} nodes"),
    }
}

pub(crate) fn legendre_cached(n: usize) -> &'static GaussRule {
    static G16: OnceLock<GaussRule> = OnceLock::new();
    static G24: OnceLock<GaussRule> = OnceLock::new();
    match n {
        16 => G16.get_or_init(|| gauss_legendre(16)),
        24 => G24.get_or_init(|| gauss_legendre(24)),
        _ => panic!("no cached Legendre rule with {n} nodes"),
    }
}

/// Values that can be accumulated by a quadrature rule.
pub trait Accumulate:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
}
impl<T> Accumulate for T where
    T: Copy + Default + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>
{
}

/// Gregory end corrections (third order in the differences): weights 3/8, 7/6, 23/24 at each end.
pub const GREGORY: [f64; 3] = [-15.0 / 24.0, 4.0 / 24.0, -1.0 / 24.0];

/// Running integral ∫₀^{t_n} f on a uniform grid, extended one sample at a time.
///
/// Uses trapezoid at n = 1 and the Gregory rule (exact for cubics) for n ≥ 2,
/// which reduces to Simpson at n = 2 and Simpson 3/8 at n = 3.
#[derive(Debug, Clone)]
pub struct Cumulative<T: Accumulate> {
    h: f64,
    head: [T; 3],
    tail: [T; 3],
    sum: T,
    len: usize,
}

impl<T: Accumulate> Cumulative<T> {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            head: [T::default(); 3],
            tail: [T::default(); 3],
            sum: T::default(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append f(t_n) and return ∫₀^{t_n} f.
    pub fn push(&mut self, f: T) -> T {
        if self.len < 3 {
            self.head[self.len] = f;
        }
        self.tail = [f, self.tail[0], self.tail[1]];
        self.sum = self.sum + f;
        self.len += 1;
        self.value()
    }

    pub fn value(&self) -> T {
        match self.len {
            0 | 1 => T::default(),
            2 => (self.head[0] + self.head[1]) * (0.5 * self.h),
            _ => {
                let mut acc = self.sum;
                for ((&h, &t), g) in self.head.iter().zip(&self.tail).zip(GREGORY) {
                    acc = acc + h * g + t * g;
                }
                acc * self.h
            }
        }
    }
}

/// Gregory weights correction terms for the integral over samples 0..=n:
/// ∫ = h·(Σ f_j + Σ corr_j f_j). Returned as (index, correction) pairs.
pub fn gregory_corrections(n: usize) -> Vec<(usize, f64)> {
    match n {
        0 => vec![(0, -1.0)],
        1 => vec![(0, -0.5), (1, -0.5)],
        _ => {
            let mut out = Vec::with_capacity(6);
            for (i, g) in GREGORY.into_iter().enumerate() {
                out.push((i, g));
                out.push((n - i, g));
            }
            out
        }
    }
}

/// Integral of uniformly sampled values by the Gregory rule.
pub fn gregory_integral<T: Accumulate>(f: &[T], h: f64) -> T {
    if f.is_empty() {
        return T::default();
    }
    let n = f.len() - 1;
    let mut acc = f.iter().fold(T::default(), |a, &x| a + x);
    for (j, c) in gregory_corrections(n) {
        acc = acc + f[j] * c;
    }
    acc * h
}

/// FFT evaluation of the running memory integrals
/// c_n = ∫₀^{t_n} k(t_n − s) g(s) ds for every grid point n,
/// with the same Gregory weights as [`Cumulative`].
pub struct Convolver {
    points: usize,
    len: usize,
    h: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// A kernel prepared for repeated convolution.
pub struct KernelSpectrum {
    samples: Vec<Complex64>,
    spectrum: Vec<Complex64>,
}

impl Convolver {
    pub fn new(points: usize, h: f64) -> Self {
        let len = (2 * points).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        Self {
            points,
            len,
            h,
            fwd,
            inv,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn padded(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.points);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        buf[..self.points].copy_from_slice(x);
        buf
    }

    pub fn prepare(&self, kernel: &[Complex64]) -> KernelSpectrum {
        let mut spectrum = self.padded(kernel);
        self.fwd.process(&mut spectrum);
        KernelSpectrum {
            samples: kernel.to_vec(),
            spectrum,
        }
    }

    pub fn convolve(&self, k: &KernelSpectrum, g: &[Complex64]) -> Vec<Complex64> {
        let mut buf = self.padded(g);
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        for (b, s) in buf.iter_mut().zip(&k.spectrum) {
            *b = *b * *s * scale;
        }
        self.inv.process(&mut buf);
        buf.truncate(self.points);
        let ks = &k.samples;
        for (n, out) in buf.iter_mut().enumerate() {
            let mut acc = *out;
            for (j, c) in gregory_corrections(n) {
                acc += ks[n - j] * g[j] * c;
            }
            *out = acc * self.h;
        }
        buf
    }
}

/// Direct O(n) evaluation of one memory integral, for checking [`Convolver`].
pub fn convolution_direct(k: &[Complex64], g: &[Complex64], n: usize, h: f64) -> Complex64 {
    let f: Vec<Complex64> = (0..=n).map(|j| k[n - j] * g[j]).collect();
    gregory_integral(&f, h)
}
