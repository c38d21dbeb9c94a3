//! Bloch equations of the TLS in each spin-bath sector, their integration, steady state,
//! and the closed-form references.

use log::warn;
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{cexp_m1, BathKernels, PolaronConstants, Spectrum, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::quadrature::{gregory_integral, Cumulative};
use crate::sectors::{binomial_u128, kernel_k_tilde_pm, sector_eigens, Axis, SectorEigens};
use crate::special::KahanSum;
use crate::tcl::{coherence_forcing, Coherence, MemoryKernels, SectorMemory};

/// Largest N accepted by configuration validation.
pub const MAX_SPINS: u32 = 24;

const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

/// TLS and spin-bath parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub epsilon: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub alpha: f64,
    pub gamma: f64,
    #[serde(rename = "N")]
    pub n: u32,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("system.epsilon", self.epsilon),
            ("system.J", self.j),
            ("system.alpha", self.alpha),
            ("system.gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        if !self.n.is_multiple_of(2) {
            return Err(Error::validation(
                "system.N",
                format!("spin count must be even, got {}", self.n),
            ));
        }
        if self.n > MAX_SPINS {
            return Err(Error::validation(
                "system.N",
                format!("at most {MAX_SPINS} spins supported, got {}", self.n),
            ));
        }
        Ok(())
    }

    pub fn m_values(&self) -> impl Iterator<Item = i32> {
        let h = (self.n / 2) as i32;
        -h..=h
    }

    pub fn eigens(&self, k: &PolaronConstants) -> Vec<SectorEigens> {
        self.m_values()
            .map(|m| sector_eigens(m, self.epsilon, k, self.alpha))
            .collect()
    }
}

/// Initial TLS state in the original frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialTls {
    #[default]
    Down,
    Up,
}

impl InitialTls {
    pub fn s0(self) -> i32 {
        match self {
            InitialTls::Down => -1,
            InitialTls::Up => 1,
        }
    }
}

/// Thermal population of sector m: αᵉ_m = e^{−βαm}/Z_S and the total weight Σ_l ν(l)αᵉ_m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorWeight {
    pub m: i32,
    pub alpha_e: f64,
    pub weight: f64,
}

/// Sector populations with Z_S = (2cosh(βα/2))^N.
///
/// Σ_l ν(l) = C(N, N/2+m), so the weights form a binomial distribution with
/// success probability p = 1/(1+e^{βα}); this form never overflows.
pub fn sector_weights(n: u32, beta: f64, alpha: f64) -> Vec<SectorWeight> {
    let x = beta * alpha;
    // ln p and ln(1−p) for p = 1/(1+e^{x})
    let softplus = |y: f64| {
        if y > 0.0 {
            y + (-y).exp().ln_1p()
        } else {
            y.exp().ln_1p()
        }
    };
    let (lp, lq) = (-softplus(x), -softplus(-x));
    let half = (n / 2) as i32;
    (-half..=half)
        .map(|m| {
            let k = (half + m) as u32;
            let c = binomial_u128(n, k) as f64;
            let alpha_e = (k as f64 * lp + (n - k) as f64 * lq).exp();
            SectorWeight {
                m,
                alpha_e,
                weight: c * alpha_e,
            }
        })
        .collect()
}

/// Homogeneous rates G^{ξ±}_{mi}, index i = x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HomogeneousRates {
    pub g1p: [f64; 3],
    pub g1m: [f64; 3],
    pub g2p: [f64; 3],
    pub g2m: [f64; 3],
}

impl HomogeneousRates {
    fn from_gamma(g1: [Complex64; 3], g2: [Complex64; 3], j: f64) -> Self {
        let j2 = j * j;
        Self {
            g1p: g1.map(|g| 2.0 * j2 * g.re),
            g1m: g1.map(|g| -2.0 * j2 * g.im),
            g2p: g2.map(|g| 2.0 * j2 * g.re),
            g2m: g2.map(|g| -2.0 * j2 * g.im),
        }
    }

    fn as_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (k, part) in [self.g1p, self.g1m, self.g2p, self.g2m].iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(part);
        }
        out
    }

    fn from_array(a: [f64; 12]) -> Self {
        let part = |k: usize| [a[3 * k], a[3 * k + 1], a[3 * k + 2]];
        Self {
            g1p: part(0),
            g1m: part(1),
            g2p: part(2),
            g2m: part(3),
        }
    }
}

/// Integrands of γ¹ and γ² at lag s given φ(s).
fn rate_integrands(
    eig: &SectorEigens,
    s: f64,
    phi: Complex64,
    theta2: f64,
) -> ([Complex64; 3], [Complex64; 3]) {
    let em = cexp_m1(-phi);
    let ep = cexp_m1(phi);
    let b1 = (em - ep) * theta2;
    let b2 = (em + ep) * theta2;
    let mut g1 = [Complex64::default(); 3];
    let mut g2 = [Complex64::default(); 3];
    for (k, ax) in AXES.iter().enumerate() {
        let (plus, minus) = kernel_k_tilde_pm(*ax, -s, eig);
        g1[k] = minus * b1;
        g2[k] = plus * b2;
    }
    (g1, g2)
}

/// Streaming evaluation of γ¹_{mi}(t) = Θ²∫₀ᵗ K̃^{i−}_m(−s)[e^{−φ(s)} − e^{φ(s)}]ds and
/// γ²_{mi}(t) = Θ²∫₀ᵗ K̃^{i+}_m(−s)[e^{−φ(s)} + e^{φ(s)} − 2]ds.
///
/// K̃^{i±}_m(−s) only contains the frequencies 0 and ±ε_m, so the six rates are linear
/// combinations of the three integrals ∫₀ᵗ e^{ifs}b(s)ds per bracket b.
#[derive(Debug, Clone)]
pub struct RateAccumulator {
    h: f64,
    theta2: f64,
    j: f64,
    freq: [f64; 3],
    /// [axis][frequency] weights of the γ¹ and γ² integrands.
    coef1: [[Complex64; 3]; 3],
    coef2: [[Complex64; 3]; 3],
    i1: [Cumulative<Complex64>; 3],
    i2: [Cumulative<Complex64>; 3],
    /// Most recent brackets, newest first.
    recent: [(Complex64, Complex64); 3],
}

impl RateAccumulator {
    pub fn new(eig: SectorEigens, h: f64, theta: f64, j: f64) -> Self {
        let parts = eig.fourier_parts(Mat2::sigma_plus());
        // K̃^i(u) = Σ_ω κ_{iω} e^{iωu}, κ_{iω} = Tr(σ_i A_ω)/2
        let kappa: [[Complex64; 3]; 3] = [0, 1, 2].map(|i| parts.map(|(_, a)| a.bloch()[i] * 0.5));
        let freq = [0.0, eig.eps, -eig.eps];
        // e^{ifs} weight in K̃^{i±}(−s): κ_{i,−f} ± κ_{i,f}*; index of −f is [0, 2, 1]
        let neg = [0, 2, 1];
        let coef = |sign: f64| {
            [0, 1, 2].map(|i| [0, 1, 2].map(|f| kappa[i][neg[f]] + kappa[i][f].conj() * sign))
        };
        let c = || Cumulative::new(h);
        Self {
            h,
            theta2: theta * theta,
            j,
            freq,
            coef1: coef(-1.0),
            coef2: coef(1.0),
            i1: [c(), c(), c()],
            i2: [c(), c(), c()],
            recent: [(Complex64::default(), Complex64::default()); 3],
        }
    }

    pub fn len(&self) -> usize {
        self.i1[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current time of the last absorbed sample.
    pub fn t(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.h
    }

    /// Absorb φ at the next grid time.
    pub fn push(&mut self, phi: Complex64) {
        let s = self.len() as f64 * self.h;
        let em = cexp_m1(-phi);
        let ep = cexp_m1(phi);
        let b1 = (em - ep) * self.theta2;
        let b2 = (em + ep) * self.theta2;
        for f in 0..3 {
            let e = Complex64::from_polar(1.0, self.freq[f] * s);
            self.i1[f].push(e * b1);
            self.i2[f].push(e * b2);
        }
        self.recent = [(b1, b2), self.recent[0], self.recent[1]];
    }

    /// ∫₀ᵗ e^{ifs}b(s)ds for f = 0, ε_m, −ε_m and both brackets.
    pub fn frequency_integrals(&self) -> ([Complex64; 3], [Complex64; 3]) {
        (
            self.i1.each_ref().map(|c| c.value()),
            self.i2.each_ref().map(|c| c.value()),
        )
    }

    /// Asymptotic ∫_t^∞ e^{ifs}b(s)ds for the oscillating frequencies, by repeated integration
    /// by parts with finite-difference derivatives; zero where |f|t is too small for the expansion.
    pub fn oscillating_tails(&self) -> ([Complex64; 3], [Complex64; 3]) {
        let t = self.t();
        let h = self.h;
        let r = self.recent;
        let tail = |b: [Complex64; 3], f: f64| {
            if self.len() < 3 || f.abs() * t < 50.0 {
                return Complex64::default();
            }
            let d1 = (b[0] * 3.0 - b[1] * 4.0 + b[2]) / (2.0 * h);
            let d2 = (b[0] - b[1] * 2.0 + b[2]) / (h * h);
            let w = Complex64::new(0.0, f);
            Complex64::from_polar(1.0, f * t) * (-b[0] / w + d1 / (w * w) - d2 / (w * w * w))
        };
        let b1 = [r[0].0, r[1].0, r[2].0];
        let b2 = [r[0].1, r[1].1, r[2].1];
        let mut out = ([Complex64::default(); 3], [Complex64::default(); 3]);
        for f in 1..3 {
            out.0[f] = tail(b1, self.freq[f]);
            out.1[f] = tail(b2, self.freq[f]);
        }
        out
    }

    /// True when the frequency-f integrals are treated as oscillating at the current time.
    pub fn is_oscillating(&self, f: usize) -> bool {
        f > 0 && self.freq[f].abs() * self.t() >= 50.0
    }

    /// Rates assembled from given frequency integrals.
    pub fn rates_from(&self, i1: &[Complex64; 3], i2: &[Complex64; 3]) -> HomogeneousRates {
        let comb = |c: &[[Complex64; 3]; 3], v: &[Complex64; 3]| {
            c.map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum::<Complex64>())
        };
        HomogeneousRates::from_gamma(comb(&self.coef1, i1), comb(&self.coef2, i2), self.j)
    }

    pub fn rates(&self) -> HomogeneousRates {
        let (i1, i2) = self.frequency_integrals();
        self.rates_from(&i1, &i2)
    }
}

/// Homogeneous rates at grid index i by direct quadrature over the kernel table.
pub fn homogeneous_rates(
    eig: &SectorEigens,
    kernels: &BathKernels,
    j: f64,
    i: usize,
) -> Result<HomogeneousRates> {
    if i >= kernels.len() {
        return Err(Error::OutOfRange {
            t: kernels.grid.t(i),
            t_max: kernels.grid.t_max(),
        });
    }
    let theta2 = kernels.theta().powi(2);
    let samples: Vec<([Complex64; 3], [Complex64; 3])> = (0..=i)
        .map(|k| rate_integrands(eig, kernels.grid.t(k), kernels.phi[k], theta2))
        .collect();
    let g1 = [0, 1, 2].map(|a| {
        gregory_integral(
            &samples.iter().map(|s| s.0[a]).collect::<Vec<_>>(),
            kernels.grid.h,
        )
    });
    let g2 = [0, 1, 2].map(|a| {
        gregory_integral(
            &samples.iter().map(|s| s.1[a]).collect::<Vec<_>>(),
            kernels.grid.h,
        )
    });
    Ok(HomogeneousRates::from_gamma(g1, g2, j))
}

/// Bloch matrix M(t) of sector m.
pub fn bloch_matrix(eig: &SectorEigens, r: &HomogeneousRates, j_tilde: f64) -> Matrix3<f64> {
    let (x, y, z) = (0, 1, 2);
    let e = eig.eps_tilde;
    Matrix3::new(
        -r.g1m[y],
        r.g1m[x] - e,
        0.0,
        r.g2p[y] + e,
        -r.g2p[x],
        -2.0 * j_tilde,
        r.g2p[z],
        r.g1m[z] + 2.0 * j_tilde,
        -(r.g2p[x] + r.g1m[y]),
    )
}

/// Inhomogeneous term proportional to αᵉ_m.
pub fn inhomogeneous_re(r: &HomogeneousRates, alpha_e: f64) -> Vector3<f64> {
    Vector3::new(r.g1p[2], r.g2m[2], -(r.g1p[0] + r.g2m[1])) * alpha_e
}

/// First-order inhomogeneous term for the TLS initially down, from d_m(t).
pub fn inhomogeneous_r1(
    eig: &SectorEigens,
    kernels: &BathKernels,
    i: usize,
    alpha_e: f64,
) -> Vector3<f64> {
    let d = kernels.d_m(eig.m, i);
    let (dp, dm) = (2.0 * d.re, -2.0 * d.im);
    let (sn, cs) = (eig.eps * kernels.grid.t(i)).sin_cos();
    let (c, s) = (eig.c, eig.s);
    let a = kernels.theta() * alpha_e;
    let env = s * s * cs + c * c;
    Vector3::new(
        -a * dm * env,
        a * dp * env,
        a * s * (sn * dp - c * (cs - 1.0) * dm),
    )
}

/// Real Bloch components (Tr σ_xA, Tr σ_yA, Tr σ_zA).
pub fn bloch_vector(a: Mat2) -> Vector3<f64> {
    let b = a.bloch();
    Vector3::new(b[0].re, b[1].re, b[2].re)
}

/// First- and second-order inhomogeneous terms of sector m on every grid point, per unit αᵉ_m,
/// in the Schrödinger picture of the polaron frame.
pub fn inhomogeneous_tables(
    kernels: &BathKernels,
    mem: &MemoryKernels,
    sector: &SectorMemory,
    j: f64,
    initial: InitialTls,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let coh = Coherence::diagonal(sector.eig.m, initial.s0());
    let f = coherence_forcing(kernels, mem, sector, sector, coh, j, 1.0);
    let to_bloch = |x: &Mat2, i: usize| {
        let u = sector.eig.propagator(kernels.grid.t(i));
        bloch_vector(u * *x * u.adjoint())
    };
    let r1 = f
        .first
        .iter()
        .enumerate()
        .map(|(i, x)| to_bloch(x, i))
        .collect();
    let r2 = f
        .second
        .iter()
        .enumerate()
        .map(|(i, x)| to_bloch(x, i))
        .collect();
    (r1, r2)
}

/// Second-order inhomogeneous term at grid index i for the TLS initially down.
pub fn inhomogeneous_r2(
    eig: &SectorEigens,
    kernels: &BathKernels,
    j: f64,
    i: usize,
    alpha_e: f64,
) -> Vector3<f64> {
    let mem = MemoryKernels::new(kernels, i + 1);
    let sector = SectorMemory::new(*eig, &mem);
    let (_, r2) = inhomogeneous_tables(kernels, &mem, &sector, j, InitialTls::Down);
    r2[i] * alpha_e
}

/// Step policy: dt = min(0.01, 2π/(50 max_m ε_m)).
pub fn default_dt(eigs: &[SectorEigens]) -> f64 {
    let max_gap = eigs.iter().map(|e| e.eps).fold(0.0, f64::max);
    if max_gap > 0.0 {
        (2.0 * std::f64::consts::PI / (50.0 * max_gap)).min(0.01)
    } else {
        0.01
    }
}

/// Number of RK4 steps and the step that lands exactly on t_max.
pub fn step_plan(t_max: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::validation(
            "run.t_max",
            "must be positive and finite",
        ));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("run.dt", "must be positive and finite"));
    }
    let steps = (t_max / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, t_max / steps as f64))
}

/// Integration settings for a TLS trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsSettings {
    pub t_max: f64,
    pub dt: Option<f64>,
    pub initial: InitialTls,
    /// Keep every k-th step in the output.
    pub stride: usize,
}

impl DynamicsSettings {
    pub fn new(t_max: f64) -> Self {
        Self {
            t_max,
            dt: None,
            initial: InitialTls::Down,
            stride: 1,
        }
    }
}

/// Per-sector Bloch vectors along the output times.
#[derive(Debug, Clone)]
pub struct SectorTrace {
    pub m: i32,
    pub alpha_e: f64,
    pub weight: f64,
    /// α_m(t) at each output time.
    pub alpha: Vec<[f64; 3]>,
}

/// Observables along a trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    pub sigma_z: Vec<f64>,
    pub sigma_x_p: Vec<f64>,
    pub sigma_y_p: Vec<f64>,
    pub p1: Vec<f64>,
    pub sectors: Vec<SectorTrace>,
}

fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut s = KahanSum::new();
    for v in values {
        s.add(v);
    }
    s.value()
}

/// Integrate the Bloch equations of every sector with fixed-step RK4 on the kernel grid,
/// in the integrating-factor form that treats the coherent rotation exactly.
pub fn integrate(
    system: &SystemParams,
    spectrum: &Spectrum,
    settings: &DynamicsSettings,
) -> Result<Trajectory> {
    system.validate()?;
    let constants = crate::bath::polaron_constants(system.j, system.gamma, spectrum);
    let eigs = system.eigens(&constants);
    let dt = settings.dt.unwrap_or_else(|| default_dt(&eigs));
    let (steps, dt) = step_plan(settings.t_max, dt)?;
    let stride = settings.stride.max(1);
    let grid = TimeGrid {
        h: 0.5 * dt,
        len: 2 * steps + 1,
    };
    let kernels = BathKernels::build(spectrum, system.j, system.gamma, grid);
    let weights = sector_weights(system.n, spectrum.beta(), system.alpha);
    let inhomogeneous = !kernels.tls_decoupled && system.j != 0.0;
    let mem = inhomogeneous.then(|| MemoryKernels::new(&kernels, grid.len));

    let traces: Vec<Result<Vec<[f64; 3]>>> = eigs
        .par_iter()
        .map(|eig| {
            let forcing = mem.as_ref().map(|mem| {
                let sector = SectorMemory::new(*eig, mem);
                inhomogeneous_tables(&kernels, mem, &sector, system.j, settings.initial)
            });
            let mut acc = RateAccumulator::new(*eig, grid.h, kernels.theta(), system.j);
            let mut rhs = Vec::with_capacity(grid.len);
            for i in 0..grid.len {
                acc.push(kernels.phi[i]);
                let r = acc.rates();
                let mut inh = inhomogeneous_re(&r, 1.0);
                if let Some((r1, r2)) = &forcing {
                    inh += r1[i] + r2[i];
                }
                rhs.push((bloch_matrix(eig, &r, constants.j_tilde), inh));
            }
            // Lawson RK4: the constant coherent rotation M₀ is propagated exactly and
            // only the bath part M(t) − M₀ is sampled by the stages.
            let m0 = bloch_matrix(eig, &HomogeneousRates::default(), constants.j_tilde);
            let half = (m0 * (0.5 * dt)).exp();
            let full = half * half;
            let f = |i: usize, y: &Vector3<f64>| (rhs[i].0 - m0) * y + rhs[i].1;
            let mut y = Vector3::new(0.0, 0.0, settings.initial.s0() as f64);
            let mut out = Vec::with_capacity(steps / stride + 1);
            out.push([y.x, y.y, y.z]);
            for s in 0..steps {
                let n = 2 * s;
                let k1 = f(n, &y);
                let k2 = f(n + 1, &(half * (y + k1 * (0.5 * dt))));
                let k3 = f(n + 1, &(half * y + k2 * (0.5 * dt)));
                let k4 = f(n + 2, &(full * y + half * k3 * dt));
                y = full * y + (full * k1 + half * (k2 + k3) * 2.0 + k4) * (dt / 6.0);
                if !(y.x.is_finite() && y.y.is_finite() && y.z.is_finite()) {
                    return Err(Error::Divergence {
                        sector: format!("m = {}", eig.m),
                        t: (s + 1) as f64 * dt,
                    });
                }
                if (s + 1) % stride == 0 || s + 1 == steps {
                    out.push([y.x, y.y, y.z]);
                }
            }
            Ok(out)
        })
        .collect();
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;

    let mut t: Vec<f64> = (0..=steps).step_by(stride).map(|s| s as f64 * dt).collect();
    if steps % stride != 0 {
        t.push(steps as f64 * dt);
    }
    let theta = kernels.theta();
    let reduce = |k: usize, c: usize| {
        ordered_sum(
            weights
                .iter()
                .zip(&traces)
                .map(|(w, tr)| w.weight * tr[k][c]),
        )
    };
    let sigma_z: Vec<f64> = (0..t.len()).map(|k| reduce(k, 2)).collect();
    let sigma_x_p = (0..t.len()).map(|k| theta * reduce(k, 0)).collect();
    let sigma_y_p = (0..t.len()).map(|k| theta * reduce(k, 1)).collect();
    let p1 = sigma_z.iter().map(|z| 0.5 * (1.0 + z)).collect();
    let sectors = weights
        .iter()
        .zip(traces)
        .map(|(w, tr)| SectorTrace {
            m: w.m,
            alpha_e: w.alpha_e,
            weight: w.weight,
            alpha: tr.into_iter().map(|a| a.map(|x| x * w.alpha_e)).collect(),
        })
        .collect();
    Ok(Trajectory {
        dt,
        t,
        sigma_z,
        sigma_x_p,
        sigma_y_p,
        p1,
        sectors,
    })
}

/// Settings of the long-time rate integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadySettings {
    pub dt: Option<f64>,
    /// Relative change of the extrapolated rates accepted as converged.
    pub tolerance: f64,
    /// Longest integration time before giving up on convergence.
    pub t_cap: f64,
}

impl Default for SteadySettings {
    fn default() -> Self {
        Self {
            dt: None,
            tolerance: 1e-8,
            t_cap: 3200.0,
        }
    }
}

/// Long-time solution α_m(∞) = −M(∞)⁻¹R^e_m(∞).
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub p1: f64,
    pub sigma_z: f64,
    /// (m, α_m(∞)).
    pub alpha: Vec<(i32, [f64; 3])>,
    pub t_final: f64,
    pub converged: bool,
}

/// Homogeneous rates of every sector extrapolated to t → ∞.
///
/// The rates are integrated to T₀ = max(200, 20/ω_c) and then to successively doubled times.
/// Oscillating frequency components get an asymptotic tail from integration by parts; the
/// static component, whose tail has an expansion in 1/T, is Richardson-extrapolated over the
/// last three doublings. Returns the rates, the final time and whether the tolerance was met.
pub fn asymptotic_rates(
    system: &SystemParams,
    spectrum: &Spectrum,
    settings: &SteadySettings,
) -> Result<(Vec<HomogeneousRates>, f64, bool)> {
    system.validate()?;
    let constants = crate::bath::polaron_constants(system.j, system.gamma, spectrum);
    let eigs = system.eigens(&constants);
    let dt = settings.dt.unwrap_or_else(|| default_dt(&eigs));
    let h = 0.5 * dt;
    let omega_c = match spectrum {
        Spectrum::Cubic(p) => p.omega_c,
        Spectrum::Discrete { modes, .. } => {
            modes.iter().map(|m| m.omega).fold(0.0, f64::max).max(1e-12)
        }
    };
    let mut target = (200.0f64).max(20.0 / omega_c);
    let mut accs: Vec<RateAccumulator> = eigs
        .iter()
        .map(|e| RateAccumulator::new(*e, h, constants.theta, system.j))
        .collect();
    type Level = ([Complex64; 3], [Complex64; 3]);
    // per sector, raw integrals at the last three levels (newest last)
    let mut history: Vec<Vec<Level>> = vec![Vec::new(); accs.len()];
    let mut prev: Option<Vec<[f64; 12]>> = None;
    let mut i = 0usize;
    loop {
        let end = (target / h).round() as usize;
        while i <= end {
            let phi = spectrum.response(crate::bath::Channel::TT, i as f64 * h);
            for a in accs.iter_mut() {
                a.push(phi);
            }
            i += 1;
        }
        let mut rates = Vec::with_capacity(accs.len());
        for (a, hist) in accs.iter().zip(history.iter_mut()) {
            hist.push(a.frequency_integrals());
            if hist.len() > 3 {
                hist.remove(0);
            }
            let (tail1, tail2) = a.oscillating_tails();
            let n = hist.len();
            let extrapolate = |pick: fn(&Level) -> [Complex64; 3], tail: [Complex64; 3]| {
                let last = pick(&hist[n - 1]);
                [0, 1, 2].map(|f| {
                    if a.is_oscillating(f) {
                        last[f] + tail[f]
                    } else {
                        match n {
                            1 => last[f],
                            2 => last[f] * 2.0 - pick(&hist[0])[f],
                            _ => {
                                (last[f] * 8.0 - pick(&hist[1])[f] * 6.0 + pick(&hist[0])[f]) / 3.0
                            }
                        }
                    }
                })
            };
            let e1 = extrapolate(|l| l.0, tail1);
            let e2 = extrapolate(|l| l.1, tail2);
            rates.push(a.rates_from(&e1, &e2).as_array());
        }
        if let Some(p) = &prev {
            let scale = rates
                .iter()
                .flatten()
                .fold(0.0f64, |a, x| a.max(x.abs()))
                .max(f64::MIN_POSITIVE);
            let change = rates
                .iter()
                .flatten()
                .zip(p.iter().flatten())
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            let converged = history[0].len() == 3 && change <= settings.tolerance * scale;
            if converged || 2.0 * target > settings.t_cap {
                if !converged {
                    warn!(
                        "steady-state rates not converged at t = {target}: relative change {:.3e}",
                        change / scale
                    );
                }
                return Ok((
                    rates
                        .into_iter()
                        .map(HomogeneousRates::from_array)
                        .collect(),
                    target,
                    converged,
                ));
            }
        }
        prev = Some(rates);
        target *= 2.0;
    }
}

/// Steady state of the TLS from the asymptotic Bloch matrices.
pub fn steady_state(
    system: &SystemParams,
    spectrum: &Spectrum,
    settings: &SteadySettings,
) -> Result<SteadyState> {
    let constants = crate::bath::polaron_constants(system.j, system.gamma, spectrum);
    let eigs = system.eigens(&constants);
    let (rates, t_final, converged) = asymptotic_rates(system, spectrum, settings)?;
    let weights = sector_weights(system.n, spectrum.beta(), system.alpha);
    let mut alpha = Vec::with_capacity(eigs.len());
    let mut sz = KahanSum::new();
    for ((eig, r), w) in eigs.iter().zip(&rates).zip(&weights) {
        let m = bloch_matrix(eig, r, constants.j_tilde);
        let re = inhomogeneous_re(r, 1.0);
        let scale = m.abs().max();
        let lu = m.lu();
        if scale == 0.0 || lu.determinant().abs() <= 1e-13 * scale.powi(3) {
            return Err(Error::NoSteadyState { m: eig.m });
        }
        let a = -lu.solve(&re).ok_or(Error::NoSteadyState { m: eig.m })?;
        sz.add(w.weight * a.z);
        alpha.push((eig.m, [a.x * w.alpha_e, a.y * w.alpha_e, a.z * w.alpha_e]));
    }
    let sigma_z = sz.value();
    Ok(SteadyState {
        p1: 0.5 * (1.0 + sigma_z),
        sigma_z,
        alpha,
        t_final,
        converged,
    })
}

/// P₁(t) without T–B coupling:
/// (1/Z_S)Σ_{lm} J²e^{−βαm}ν(l) sin²(ω_mt)/ω_m², ω_m = √(J² + (ε/2 + γm)²).
pub fn exact_xi0_p1(system: &SystemParams, beta: f64, t: f64) -> f64 {
    let j2 = system.j * system.j;
    ordered_sum(
        sector_weights(system.n, beta, system.alpha)
            .iter()
            .map(|w| {
                let b = 0.5 * system.epsilon + system.gamma * w.m as f64;
                let om2 = j2 + b * b;
                if om2 == 0.0 {
                    return 0.0;
                }
                let s = (om2.sqrt() * t).sin();
                w.weight * j2 * s * s / om2
            }),
    )
}

/// Gibbs up-state probability of the isolated TLS, ½[1 − tanh(βΩ)(ε/2)/Ω], Ω = √(J² + ε²/4).
pub fn gibbs_p1(eps: f64, j: f64, beta: f64) -> f64 {
    let om = (j * j + 0.25 * eps * eps).sqrt();
    if om == 0.0 {
        return 0.5;
    }
    0.5 * (1.0 - (beta * om).tanh() * 0.5 * eps / om)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{polaron_constants, BathParams};
    use crate::tcl::{coupling_op, HomogeneousMemory};
    use approx::assert_relative_eq;

    fn relaxation(gamma: f64, kappa2: f64) -> (SystemParams, Spectrum) {
        (
            SystemParams {
                epsilon: 1.0,
                j: 1.0,
                alpha: 1.0,
                gamma,
                n: 10,
            },
            Spectrum::Cubic(BathParams::new(0.05, kappa2, 0.1, 2.0, 2.0)),
        )
    }

    #[test]
    fn weights_sum_to_one() {
        for (beta, alpha) in [(2.0, 1.0), (100.0, 1.0), (0.0, 1.0), (50.0, -3.0)] {
            let w = sector_weights(10, beta, alpha);
            let total: f64 = ordered_sum(w.iter().map(|x| x.weight));
            assert!((total - 1.0).abs() < 1e-12);
            let zs = (2.0 * (0.5 * beta * alpha).cosh()).powi(10);
            if zs.is_finite() {
                for x in &w {
                    assert_relative_eq!(
                        x.alpha_e,
                        (-beta * alpha * x.m as f64).exp() / zs,
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn gibbs_reference_values() {
        assert!((gibbs_p1(1.0, 1.0, 2.0) - 0.2814).abs() < 1e-4);
        assert_eq!(gibbs_p1(1.0, 1.0, 0.0), 0.5);
        assert!(gibbs_p1(1.0, 0.0, 1e6) < 1e-12);
        assert_eq!(gibbs_p1(0.0, 1.0, 3.0), 0.5);
    }

    #[test]
    fn xi0_collapses_without_spin_coupling() {
        let s = SystemParams {
            epsilon: 1.0,
            j: 1.0,
            alpha: 1.0,
            gamma: 0.0,
            n: 10,
        };
        for t in [0.0, 0.3, 1.405, 7.0] {
            let w = (1.25f64).sqrt();
            assert_relative_eq!(
                exact_xi0_p1(&s, 2.0, t),
                (w * t).sin().powi(2) / 1.25,
                epsilon = 1e-14
            );
        }
        let zero = SystemParams { j: 0.0, ..s };
        assert_eq!(exact_xi0_p1(&zero, 2.0, 3.0), 0.0);
    }

    #[test]
    fn rates_vanish_at_origin_and_without_coupling() {
        let (s, spec) = relaxation(0.3, 0.02);
        let c = polaron_constants(1.0, 0.3, &spec);
        let k = BathKernels::build(&spec, 1.0, 0.3, TimeGrid::covering(2.0, 0.01));
        let e = sector_eigens(2, s.epsilon, &c, 1.0);
        assert_eq!(
            homogeneous_rates(&e, &k, 1.0, 0).unwrap(),
            HomogeneousRates::default()
        );
        let free = Spectrum::Cubic(BathParams::new(0.0, 0.0, 0.1, 2.0, 2.0));
        let kf = BathKernels::build(&free, 1.0, 0.3, TimeGrid::covering(2.0, 0.01));
        assert_eq!(
            homogeneous_rates(&e, &kf, 1.0, 150).unwrap(),
            HomogeneousRates::default()
        );
        assert!(homogeneous_rates(&e, &k, 1.0, k.len()).is_err());
    }

    /// The closed-form Bloch matrix and R^e agree with the operator form of the homogeneous TCL2
    /// generator plus the coherent rotation.
    #[test]
    fn bloch_matrix_matches_operator_generator() {
        for (gamma, kappa2, m) in [(0.3, 0.02, 2), (0.0, 0.0, 0), (0.8, 0.02, -4)] {
            let (_, spec) = relaxation(gamma, kappa2);
            let c = polaron_constants(1.0, gamma, &spec);
            let k = BathKernels::build(&spec, 1.0, gamma, TimeGrid::covering(3.0, 0.005));
            let e = sector_eigens(m, 1.0, &c, 1.0);
            let mut hm = HomogeneousMemory::new(e, k.grid.h);
            let mut acc = RateAccumulator::new(e, k.grid.h, k.theta(), 1.0);
            for i in 0..k.len() {
                let g = hm.advance(&k);
                acc.push(k.phi[i]);
                if i % 97 != 0 {
                    continue;
                }
                let r = acc.rates();
                let closed = bloch_matrix(&e, &r, c.j_tilde);
                let h = e.hamiltonian();
                let rhs = |rho: Mat2| {
                    let coh = (h * rho - rho * h) * Complex64::new(0.0, -1.0);
                    bloch_vector(coh + g.apply(rho, 1.0))
                };
                let sig = [Mat2::sigma_x(), Mat2::sigma_y(), Mat2::sigma_z()];
                for col in 0..3 {
                    let v = rhs(sig[col] * 0.5);
                    for row in 0..3 {
                        assert!(
                            (closed[(row, col)] - v[row]).abs() < 1e-12,
                            "M[{row},{col}] at i={i}"
                        );
                    }
                }
                let re = inhomogeneous_re(&r, 1.0);
                let v = rhs(Mat2::identity() * 0.5);
                assert!((re - v).norm() < 1e-12, "R^e at i={i}: {re:?} vs {v:?}");
            }
        }
    }

    #[test]
    fn closed_form_r1_matches_operator_form() {
        let (_, spec) = relaxation(0.4, 0.02);
        let c = polaron_constants(1.0, 0.4, &spec);
        let k = BathKernels::build(&spec, 1.0, 0.4, TimeGrid::covering(4.0, 0.01));
        let mem = MemoryKernels::new(&k, k.len());
        for m in [-5, 0, 3] {
            let e = sector_eigens(m, 1.0, &c, 1.0);
            let (r1, _) =
                inhomogeneous_tables(&k, &mem, &SectorMemory::new(e, &mem), 1.0, InitialTls::Down);
            for i in (0..k.len()).step_by(37) {
                let closed = inhomogeneous_r1(&e, &k, i, 1.0);
                assert!(
                    (closed - r1[i]).norm() < 1e-13,
                    "m={m} i={i}: {closed:?} vs {:?}",
                    r1[i]
                );
            }
        }
    }

    #[test]
    fn r1_reduces_for_unbiased_cross_coupling() {
        let (_, spec) = relaxation(0.0, 0.0);
        let c = polaron_constants(1.0, 0.0, &spec);
        let k = BathKernels::build(&spec, 1.0, 0.0, TimeGrid::covering(2.0, 0.01));
        let e = sector_eigens(0, 1.0, &c, 1.0);
        let i = 120;
        let t = k.grid.t(i);
        let expect =
            -c.theta * 2.0 * k.phi2(i).sin() * 0.3 * (e.s * e.s * (e.eps * t).cos() + e.c * e.c);
        assert!((inhomogeneous_r1(&e, &k, i, 0.3).x - expect).abs() < 1e-15);
    }

    #[test]
    fn inhomogeneous_terms_vanish_at_origin() {
        let (_, spec) = relaxation(0.4, 0.02);
        let c = polaron_constants(1.0, 0.4, &spec);
        let k = BathKernels::build(&spec, 1.0, 0.4, TimeGrid::covering(1.0, 0.01));
        let e = sector_eigens(1, 1.0, &c, 1.0);
        assert!(inhomogeneous_r1(&e, &k, 0, 1.0).norm() == 0.0);
        assert!(inhomogeneous_r2(&e, &k, 1.0, 0, 1.0).norm() < 1e-300);
    }

    #[test]
    fn r2_second_order_scale() {
        // weak coupling: R2 is quadratic in the coupling while R1 is linear in d_m
        let spec = Spectrum::Cubic(BathParams::new(0.01, 0.0, 0.1, 2.0, 2.0));
        let c = polaron_constants(1.0, 0.0, &spec);
        let k = BathKernels::build(&spec, 1.0, 0.0, TimeGrid::covering(3.0, 0.01));
        let mem = MemoryKernels::new(&k, k.len());
        let e = sector_eigens(0, 1.0, &c, 1.0);
        let (r1, r2) =
            inhomogeneous_tables(&k, &mem, &SectorMemory::new(e, &mem), 1.0, InitialTls::Down);
        let max1 = r1.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let max2 = r2.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max1 > 0.0 && max2 > 0.0);
        assert!(max2 <= 10.0 * max1, "|R2| = {max2}, |R1| = {max1}");
        let _ = coupling_op(0);
    }

    #[test]
    fn frequency_split_matches_direct_rates() {
        let (_, spec) = relaxation(0.6, 0.02);
        let c = polaron_constants(1.0, 0.6, &spec);
        let k = BathKernels::build(&spec, 1.0, 0.6, TimeGrid::covering(6.0, 0.01));
        let e = sector_eigens(-3, 1.0, &c, 1.0);
        let mut acc = RateAccumulator::new(e, k.grid.h, k.theta(), 1.0);
        for i in 0..k.len() {
            acc.push(k.phi[i]);
            if i % 111 == 0 || i + 1 == k.len() {
                let a = acc.rates().as_array();
                let b = homogeneous_rates(&e, &k, 1.0, i).unwrap().as_array();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-13, "i={i}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn oscillating_tail_predicts_later_integral() {
        let (_, spec) = relaxation(0.2, 0.0);
        let c = polaron_constants(1.0, 0.2, &spec);
        let e = sector_eigens(1, 1.0, &c, 1.0);
        let h = 0.005;
        let mut acc = RateAccumulator::new(e, h, c.theta, 1.0);
        let mut i = 0;
        let mut push_to = |acc: &mut RateAccumulator, t: f64| {
            while (i as f64) * h <= t + 1e-9 {
                acc.push(spec.response(crate::bath::Channel::TT, i as f64 * h));
                i += 1;
            }
        };
        push_to(&mut acc, 200.0);
        let (raw, _) = acc.frequency_integrals();
        let (tail, _) = acc.oscillating_tails();
        push_to(&mut acc, 1600.0);
        let (late, _) = acc.frequency_integrals();
        let (late_tail, _) = acc.oscillating_tails();
        for f in 1..3 {
            let predicted = raw[f] + tail[f];
            let reference = late[f] + late_tail[f];
            assert!(
                (predicted - reference).norm() < 1e-9 * reference.norm().max(1e-3),
                "f={f}"
            );
            assert!(tail[f].norm() > 1e3 * (predicted - reference).norm());
        }
    }

    #[test]
    fn integrate_reproduces_xi0_closed_form() {
        let s = SystemParams {
            epsilon: 1.0,
            j: 1.0,
            alpha: 1.0,
            gamma: 0.3,
            n: 6,
        };
        let spec = Spectrum::Cubic(BathParams::new(0.0, 0.0, 0.1, 2.0, 2.0));
        let tr = integrate(&s, &spec, &DynamicsSettings::new(5.0)).unwrap();
        for (t, p) in tr.t.iter().zip(&tr.p1) {
            assert!((p - exact_xi0_p1(&s, 2.0, *t)).abs() < 1e-8);
        }
        assert!((tr.sigma_z[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_requires_boson_coupling() {
        let s = SystemParams {
            epsilon: 1.0,
            j: 1.0,
            alpha: 1.0,
            gamma: 0.0,
            n: 2,
        };
        let spec = Spectrum::Cubic(BathParams::new(0.0, 0.0, 0.1, 2.0, 2.0));
        let settings = SteadySettings {
            dt: Some(0.05),
            ..Default::default()
        };
        assert!(matches!(
            steady_state(&s, &spec, &settings),
            Err(Error::NoSteadyState { .. })
        ));
    }

    #[test]
    fn step_plan_lands_on_t_max() {
        let (n, dt) = step_plan(20.0, 0.0075).unwrap();
        assert_eq!(n, 2667);
        assert!((n as f64 * dt - 20.0).abs() < 1e-12);
        assert!(step_plan(0.0, 0.01).is_err());
        assert!(step_plan(1.0, -0.01).is_err());
    }
}
