//! Second-order TCL memory terms for the polaron coupling J(σ₊D + σ₋D†).
//!
//! Coupling index a = 0 is (σ₊, D) and a = 1 is (σ₋, D†); D = e^{εB₂} − Θ with ε = ±1.
//! Thermal correlators are ⟨B_a(u)B_b(0)⟩ = Θ²(e^{−ε_aε_bφ(u)} − 1). The initial-correlation
//! correlators in the (m, m') coherence factorize through
//! E_ε(t) = e^{−εψ_{mm'}(t)} e^{iε(θ_m(t)+θ_{m'}(t))/2}, θ_m = 2mχ₂ + s₀φ₂, giving
//! ⟨B_a(t)B_b(s)⟩_Q = e^{−x/2}Θ²{e^{−ε_aε_bφ(t−s)}E_a(t)E_b(s) − E_a(t) − E_b(s) − e^{−ε_aε_bφ(t−s)} + 2}
//! with x = (m−m')²ψ₁(0).

use num_complex::Complex64;

use crate::bath::{cexp_m1, BathKernels};
use crate::linalg::Mat2;
use crate::quadrature::{Convolver, Cumulative, KernelSpectrum};
use crate::sectors::SectorEigens;

/// ε_a for the two coupling channels.
pub const SIGN: [f64; 2] = [1.0, -1.0];

/// TLS operator paired with bath operator a.
pub fn coupling_op(a: usize) -> Mat2 {
    if a == 0 {
        Mat2::sigma_plus()
    } else {
        Mat2::sigma_minus()
    }
}

/// Index of ε_aε_b: 0 for +1, 1 for −1.
pub fn product_index(a: usize, b: usize) -> usize {
    usize::from(a != b)
}

/// Initial TLS projector |1̄⟩⟨1̄| (s₀ = −1) or |1⟩⟨1| (s₀ = +1).
pub fn initial_projector(s0: i32) -> Mat2 {
    if s0 < 0 {
        Mat2::down()
    } else {
        Mat2::up()
    }
}

/// Thermal correlator ⟨B_a(u)B_b(0)⟩ at grid index i (u = t_i ≥ 0).
pub fn thermal_correlator(kernels: &BathKernels, a: usize, b: usize, i: usize) -> Complex64 {
    let s = SIGN[a] * SIGN[b];
    cexp_m1(-kernels.phi[i] * s) * kernels.theta().powi(2)
}

/// Factors describing the initial-correlation part of the (m, m') coherence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    pub m: i32,
    pub mp: i32,
    pub s0: i32,
}

impl Coherence {
    pub fn diagonal(m: i32, s0: i32) -> Self {
        Self { m, mp: m, s0 }
    }

    /// e^{−x/2}, x = (m−m')²ψ₁(0).
    pub fn gaussian(&self, kernels: &BathKernels) -> f64 {
        let d = (self.m - self.mp) as f64;
        (-0.5 * d * d * kernels.psi1(0)).exp()
    }

    /// E_ε(t_i) for coupling index a.
    pub fn e(&self, kernels: &BathKernels, a: usize, i: usize) -> Complex64 {
        let eps = SIGN[a];
        let psi = kernels.psi_offset(self.m - self.mp, i);
        let phase = 0.5
            * (kernels.sector_phase(self.m, self.s0, i)
                + kernels.sector_phase(self.mp, self.s0, i));
        Complex64::from_polar((-eps * psi).exp(), eps * phase)
    }

    /// E_ε(t_i) − 1 without cancellation.
    pub fn e_m1(&self, kernels: &BathKernels, a: usize, i: usize) -> Complex64 {
        let eps = SIGN[a];
        let psi = kernels.psi_offset(self.m - self.mp, i);
        let phase = 0.5
            * (kernels.sector_phase(self.m, self.s0, i)
                + kernels.sector_phase(self.mp, self.s0, i));
        cexp_m1(Complex64::new(-eps * psi, eps * phase))
    }

    /// ⟨B_a(t_i)⟩_Q.
    pub fn mean(&self, kernels: &BathKernels, a: usize, i: usize) -> Complex64 {
        self.e_m1(kernels, a, i) * (kernels.theta() * self.gaussian(kernels))
    }

    /// ⟨B_a(t_i)B_b(t_j)⟩_Q.
    pub fn pair(&self, kernels: &BathKernels, a: usize, b: usize, i: usize, j: usize) -> Complex64 {
        let s = SIGN[a] * SIGN[b];
        let ph = if i >= j {
            kernels.phi[i - j]
        } else {
            kernels.phi[j - i].conj()
        };
        let k = cexp_m1(-ph * s);
        let (ea, eb) = (self.e_m1(kernels, a, i), self.e_m1(kernels, b, j));
        // e^{−σφ}E_aE_b − E_a − E_b − e^{−σφ} + 2 = k(E_aE_b − 1) + (E_a−1)(E_b−1)
        let eab_m1 = ea * eb + ea + eb;
        (k * eab_m1 + ea * eb) * (self.gaussian(kernels) * kernels.theta().powi(2))
    }
}

/// Time-local homogeneous generator of one sector, in the Schrödinger picture:
/// L(ρ) = −J²[Aρ − Σ_a V_a ρ X_a + ρB − Σ_a X_a ρ V'_a].
#[derive(Debug, Clone, Copy)]
pub struct Generator {
    pub a: Mat2,
    pub b: Mat2,
    pub v: [Mat2; 2],
    pub vp: [Mat2; 2],
}

impl Generator {
    pub fn zero() -> Self {
        Self {
            a: Mat2::zero(),
            b: Mat2::zero(),
            v: [Mat2::zero(); 2],
            vp: [Mat2::zero(); 2],
        }
    }

    pub fn apply(&self, rho: Mat2, j: f64) -> Mat2 {
        let mut out = self.a * rho + rho * self.b;
        for a in 0..2 {
            let x = coupling_op(a);
            out = out - self.v[a] * rho * x - x * rho * self.vp[a];
        }
        out * (-j * j)
    }

    /// Conjugate every operator by U, giving the interaction-picture generator.
    pub fn conjugated(&self, u: Mat2) -> InteractionGenerator {
        let ud = u.adjoint();
        let c = |x: Mat2| ud * x * u;
        InteractionGenerator {
            a: c(self.a),
            b: c(self.b),
            v: [c(self.v[0]), c(self.v[1])],
            vp: [c(self.vp[0]), c(self.vp[1])],
            x: [c(coupling_op(0)), c(coupling_op(1))],
        }
    }
}

/// Per-sector operators of the homogeneous term in the interaction picture.
#[derive(Debug, Clone, Copy)]
pub struct InteractionGenerator {
    pub a: Mat2,
    pub b: Mat2,
    pub v: [Mat2; 2],
    pub vp: [Mat2; 2],
    pub x: [Mat2; 2],
}

/// dh_{mm'} for the block between a left sector and a right sector.
pub fn block_homogeneous(
    left: &InteractionGenerator,
    right: &InteractionGenerator,
    h: Mat2,
    j: f64,
) -> Mat2 {
    let mut out = left.a * h + h * right.b;
    for a in 0..2 {
        out = out - left.v[a] * h * right.x[a] - left.x[a] * h * right.vp[a];
    }
    out * (-j * j)
}

/// Running memory integrals Z_ab(t) = ∫₀ᵗ C_ab(u) X_b(−u) du and
/// Z'_ab(t) = ∫₀ᵗ C_ba(−u) X_b(−u) du for one sector, extended one grid point at a time.
#[derive(Debug, Clone)]
pub struct HomogeneousMemory {
    eig: SectorEigens,
    z: [[Cumulative<Mat2>; 2]; 2],
    zp: [[Cumulative<Mat2>; 2]; 2],
}

impl HomogeneousMemory {
    pub fn new(eig: SectorEigens, h: f64) -> Self {
        let c = || Cumulative::new(h);
        Self {
            eig,
            z: [[c(), c()], [c(), c()]],
            zp: [[c(), c()], [c(), c()]],
        }
    }

    /// Number of grid points absorbed so far.
    pub fn len(&self) -> usize {
        self.z[0][0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Absorb grid point `len()` and return the generator at that time.
    pub fn advance(&mut self, kernels: &BathKernels) -> Generator {
        let i = self.len();
        let u = kernels.grid.t(i);
        let ops = [
            self.eig.evolve(coupling_op(0), -u),
            self.eig.evolve(coupling_op(1), -u),
        ];
        for a in 0..2 {
            for (b, &op) in ops.iter().enumerate() {
                let c = thermal_correlator(kernels, a, b, i);
                self.z[a][b].push(op * c);
                self.zp[a][b].push(op * c.conj());
            }
        }
        self.generator()
    }

    pub fn generator(&self) -> Generator {
        let mut g = Generator::zero();
        for a in 0..2 {
            let x = coupling_op(a);
            for b in 0..2 {
                let z = self.z[a][b].value();
                let zp = self.zp[a][b].value();
                g.a += x * z;
                g.b += zp * x;
                g.v[a] += z;
                g.vp[a] += zp;
            }
        }
        g
    }
}

/// Kernels e^{−σφ(u)} − 1 and e^{−σφ(u)*} − 1 (σ = ±1) prepared for FFT convolution.
pub struct MemoryKernels {
    pub conv: Convolver,
    /// [σ index]: e^{−σφ} − 1.
    pub k: [KernelSpectrum; 2],
    /// [σ index]: e^{−σφ*} − 1.
    pub kbar: [KernelSpectrum; 2],
}

impl MemoryKernels {
    pub fn new(kernels: &BathKernels, points: usize) -> Self {
        let conv = Convolver::new(points, kernels.grid.h);
        let table = |s: f64, conj: bool| -> Vec<Complex64> {
            (0..points)
                .map(|i| {
                    let p = if conj {
                        kernels.phi[i].conj()
                    } else {
                        kernels.phi[i]
                    };
                    cexp_m1(-p * s)
                })
                .collect()
        };
        let k = [
            conv.prepare(&table(1.0, false)),
            conv.prepare(&table(-1.0, false)),
        ];
        let kbar = [
            conv.prepare(&table(1.0, true)),
            conv.prepare(&table(-1.0, true)),
        ];
        Self { conv, k, kbar }
    }

    pub fn points(&self) -> usize {
        self.conv.points()
    }
}

/// Sector data reused by every coherence that involves the sector.
pub struct SectorMemory {
    pub eig: SectorEigens,
    /// Fourier parts of X_b(t) for b = 0, 1.
    pub parts: [[(f64, Mat2); 3]; 2],
    /// [kernel kind (k, k̄)][σ index][frequency]: ∫₀ᵗ k(t−s) e^{iωs} ds on the grid.
    pub c0: [[[Vec<Complex64>; 3]; 2]; 2],
}

impl SectorMemory {
    pub fn new(eig: SectorEigens, mem: &MemoryKernels) -> Self {
        let parts = [
            eig.fourier_parts(coupling_op(0)),
            eig.fourier_parts(coupling_op(1)),
        ];
        let n = mem.points();
        let h = mem.conv.h();
        let freqs = [parts[0][0].0, parts[0][1].0, parts[0][2].0];
        let c0 = [&mem.k, &mem.kbar].map(|kind| {
            [0, 1].map(|s| {
                freqs.map(|w| {
                    let g: Vec<Complex64> = (0..n)
                        .map(|j| Complex64::from_polar(1.0, w * j as f64 * h))
                        .collect();
                    mem.conv.convolve(&kind[s], &g)
                })
            })
        });
        Self { eig, parts, c0 }
    }

    /// X_a(t) in the interaction picture from the Fourier parts.
    pub fn op_at(&self, a: usize, t: f64) -> Mat2 {
        self.parts[a].iter().fold(Mat2::zero(), |acc, (w, m)| {
            acc + *m * Complex64::from_polar(1.0, w * t)
        })
    }
}

/// Inhomogeneous forcing (first plus second order) of the (m, m') coherence in the
/// interaction picture, on every grid point of `mem`:
///
/// F = w{−iJ Σ_a ⟨B_a(t)⟩_Q [X_a^L(t)P₀ − P₀X_a^R(t)]
///      − J² Σ_ab [X_a^L(t) W1_ab P₀ − W1_ab P₀ X_a^R(t) + P₀ W2_ab X_a^R(t) − X_a^L(t) P₀ W2_ab]},
/// W1_ab(t) = ∫₀ᵗ ⟨B_a(t)B_b(s)⟩_Q X_b^L(s) ds, W2_ab(t) = ∫₀ᵗ ⟨B_b(s)B_a(t)⟩_Q X_b^R(s) ds.
///
/// `weight` is the initial population factor (q_mq_m' or αᵉ_m).
pub fn coherence_forcing(
    kernels: &BathKernels,
    mem: &MemoryKernels,
    left: &SectorMemory,
    right: &SectorMemory,
    coh: Coherence,
    j: f64,
    weight: f64,
) -> Forcing {
    let n = mem.points();
    let h = kernels.grid.h;
    let p0 = initial_projector(coh.s0);
    let gauss = coh.gaussian(kernels);
    let theta = kernels.theta();
    let pref = gauss * theta * theta;
    let em1: [Vec<Complex64>; 2] =
        [0, 1].map(|a| (0..n).map(|i| coh.e_m1(kernels, a, i)).collect());

    let mut w1 = vec![[[Mat2::zero(); 2]; 2]; n];
    let mut w2 = vec![[[Mat2::zero(); 2]; 2]; n];
    for b in 0..2 {
        for (side, sector, kind) in [(0usize, left, &mem.k), (1, right, &mem.kbar)] {
            for (k, &(w, op)) in sector.parts[b].iter().enumerate() {
                let g: Vec<Complex64> = (0..n)
                    .map(|i| em1[b][i] * Complex64::from_polar(1.0, w * i as f64 * h))
                    .collect();
                let conv = [
                    mem.conv.convolve(&kind[0], &g),
                    mem.conv.convolve(&kind[1], &g),
                ];
                let mut cum = Cumulative::<Complex64>::new(h);
                for i in 0..n {
                    let s1 = cum.push(g[i]);
                    for a in 0..2 {
                        let s = product_index(a, b);
                        let ea_m1 = em1[a][i];
                        // k(E_aE_b − 1) + (E_a − 1)(E_b − 1) with E_aE_b − 1 = E_a(E_b−1) + (E_a−1)
                        let coef =
                            (ea_m1 + 1.0) * conv[s][i] + ea_m1 * (sector.c0[side][s][k][i] + s1);
                        let target = if side == 0 {
                            &mut w1[i][a][b]
                        } else {
                            &mut w2[i][a][b]
                        };
                        *target += op * (coef * pref);
                    }
                }
            }
        }
    }

    let mut out = Forcing {
        first: Vec::with_capacity(n),
        second: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = kernels.grid.t(i);
        let xl = [left.op_at(0, t), left.op_at(1, t)];
        let xr = [right.op_at(0, t), right.op_at(1, t)];
        let mut first = Mat2::zero();
        let mut second = Mat2::zero();
        for a in 0..2 {
            let q = em1[a][i] * (theta * gauss);
            first += (xl[a] * p0 - p0 * xr[a]) * q;
            for b in 0..2 {
                let (u, v) = (w1[i][a][b], w2[i][a][b]);
                second += xl[a] * u * p0 - u * p0 * xr[a] + p0 * v * xr[a] - xl[a] * p0 * v;
            }
        }
        out.first.push(first * Complex64::new(0.0, -j * weight));
        out.second.push(second * (-j * j * weight));
    }
    out
}

/// First- and second-order inhomogeneous forcing on the grid, interaction picture.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub first: Vec<Mat2>,
    pub second: Vec<Mat2>,
}

impl Forcing {
    pub fn total(&self, i: usize) -> Mat2 {
        self.first[i] + self.second[i]
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// Direct O(n) evaluation of the same forcing at one grid point, used to validate the FFT path.
pub fn coherence_forcing_direct(
    kernels: &BathKernels,
    left: &SectorEigens,
    right: &SectorEigens,
    coh: Coherence,
    j: f64,
    weight: f64,
    n: usize,
) -> Mat2 {
    let h = kernels.grid.h;
    let p0 = initial_projector(coh.s0);
    let t = kernels.grid.t(n);
    let xl = [
        left.evolve(coupling_op(0), t),
        left.evolve(coupling_op(1), t),
    ];
    let xr = [
        right.evolve(coupling_op(0), t),
        right.evolve(coupling_op(1), t),
    ];
    let mut first = Mat2::zero();
    let mut second = Mat2::zero();
    for a in 0..2 {
        first += (xl[a] * p0 - p0 * xr[a]) * coh.mean(kernels, a, n);
        for b in 0..2 {
            let f1: Vec<Mat2> = (0..=n)
                .map(|s| {
                    left.evolve(coupling_op(b), kernels.grid.t(s)) * coh.pair(kernels, a, b, n, s)
                })
                .collect();
            let f2: Vec<Mat2> = (0..=n)
                .map(|s| {
                    right.evolve(coupling_op(b), kernels.grid.t(s)) * coh.pair(kernels, b, a, s, n)
                })
                .collect();
            let u = crate::quadrature::gregory_integral(&f1, h);
            let v = crate::quadrature::gregory_integral(&f2, h);
            second += xl[a] * u * p0 - u * p0 * xr[a] + p0 * v * xr[a] - xl[a] * p0 * v;
        }
    }
    (first * Complex64::new(0.0, -j) + second * (-j * j)) * weight
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{polaron_constants, BathParams, Spectrum, TimeGrid};
    use crate::sectors::sector_eigens;

    fn setup(t_max: f64, h: f64) -> (BathKernels, Vec<SectorEigens>) {
        let p = BathParams::new(0.05, 0.02, 0.1, 2.0, 2.0);
        let s = Spectrum::Cubic(p);
        let k = BathKernels::build(&s, 1.0, 0.4, TimeGrid::covering(t_max, h));
        let c = polaron_constants(1.0, 0.4, &s);
        let eigs = (-2..=2).map(|m| sector_eigens(m, 1.0, &c, 1.0)).collect();
        (k, eigs)
    }

    #[test]
    fn q_pair_matches_closed_forms() {
        let (k, _) = setup(3.0, 0.01);
        let coh = Coherence {
            m: 1,
            mp: -1,
            s0: -1,
        };
        let (i, j) = (170, 60);
        let x = 4.0 * k.psi1(0);
        let pre = (-0.5 * x).exp() * (-k.phi1(0)).exp();
        let d = |m: i32, n: usize| k.d_m(m, n) + 1.0;
        let root = |n: usize| (d(1, n) * d(-1, n)).sqrt();
        let psi = |n: usize| k.psi_offset(2, n);
        let ph = k.phi[i - j];
        let dd = pre
            * ((-ph).exp() * (-psi(i) - psi(j)).exp() * root(i) * root(j)
                - (-psi(i)).exp() * root(i)
                - (-psi(j)).exp() * root(j)
                - ((-ph).exp() - 2.0));
        assert!((coh.pair(&k, 0, 0, i, j) - dd).norm() < 1e-14);
        let ddag = pre
            * (ph.exp() * (-psi(i) + psi(j)).exp() * root(i) * root(j).conj()
                - (-psi(i)).exp() * root(i)
                - psi(j).exp() * root(j).conj()
                - (ph.exp() - 2.0));
        assert!((coh.pair(&k, 0, 1, i, j) - ddag).norm() < 1e-14);
        let dagd = pre
            * (ph.exp() * (psi(i) - psi(j)).exp() * root(i).conj() * root(j)
                - psi(i).exp() * root(i).conj()
                - (-psi(j)).exp() * root(j)
                - (ph.exp() - 2.0));
        assert!((coh.pair(&k, 1, 0, i, j) - dagd).norm() < 1e-14);
        // ⟨D†(t)D†(s)⟩_{mm'} = ⟨D(s)D(t)⟩*_{m'm}
        let swapped = Coherence {
            m: -1,
            mp: 1,
            s0: -1,
        };
        assert!((coh.pair(&k, 1, 1, i, j) - swapped.pair(&k, 0, 0, j, i).conj()).norm() < 1e-14);
        // ⟨D(t)⟩_Q closed form and ⟨D†(t)⟩_{mm'} = ⟨D(t)⟩*_{m'm}
        let mean = k.theta() * (-0.5 * x).exp() * ((-psi(i)).exp() * root(i) - 1.0);
        assert!((coh.mean(&k, 0, i) - mean).norm() < 1e-14);
        assert!((coh.mean(&k, 1, i) - swapped.mean(&k, 0, i).conj()).norm() < 1e-14);
    }

    #[test]
    fn q_pair_vanishes_at_origin_on_diagonal() {
        let (k, _) = setup(1.0, 0.01);
        let coh = Coherence::diagonal(2, -1);
        for a in 0..2 {
            for b in 0..2 {
                assert!(coh.pair(&k, a, b, 0, 0).norm() < 1e-16);
            }
        }
    }

    #[test]
    fn fft_forcing_matches_direct_evaluation() {
        let (k, eigs) = setup(2.0, 0.01);
        let mem = MemoryKernels::new(&k, k.len());
        let sm: Vec<SectorMemory> = eigs.iter().map(|e| SectorMemory::new(*e, &mem)).collect();
        for (l, r, s0) in [(1usize, 3usize, -1), (2, 2, -1), (4, 0, 1)] {
            let coh = Coherence {
                m: eigs[l].m,
                mp: eigs[r].m,
                s0,
            };
            let fast = coherence_forcing(&k, &mem, &sm[l], &sm[r], coh, 1.0, 0.3);
            for n in [0, 1, 2, 5, 77, k.len() - 1] {
                let slow = coherence_forcing_direct(&k, &eigs[l], &eigs[r], coh, 1.0, 0.3, n);
                assert!(
                    (fast.total(n) - slow).norm() < 1e-12,
                    "pair ({l},{r}) n={n}: {:?} vs {:?}",
                    fast.total(n),
                    slow
                );
            }
        }
    }

    #[test]
    fn forcing_of_swapped_coherence_is_adjoint() {
        let (k, eigs) = setup(1.5, 0.01);
        let mem = MemoryKernels::new(&k, k.len());
        let (a, b) = (
            SectorMemory::new(eigs[0], &mem),
            SectorMemory::new(eigs[3], &mem),
        );
        let f = coherence_forcing(
            &k,
            &mem,
            &a,
            &b,
            Coherence {
                m: -2,
                mp: 1,
                s0: -1,
            },
            1.0,
            0.2,
        );
        let g = coherence_forcing(
            &k,
            &mem,
            &b,
            &a,
            Coherence {
                m: 1,
                mp: -2,
                s0: -1,
            },
            1.0,
            0.2,
        );
        for n in 0..k.len() {
            assert!((f.total(n) - g.total(n).adjoint()).norm() < 1e-13);
        }
    }

    #[test]
    fn homogeneous_memory_matches_direct_quadrature() {
        let (k, eigs) = setup(1.0, 0.01);
        let e = eigs[1];
        let mut hm = HomogeneousMemory::new(e, k.grid.h);
        let mut g = Generator::zero();
        for _ in 0..k.len() {
            g = hm.advance(&k);
        }
        let n = k.len() - 1;
        let mut a = Mat2::zero();
        for ai in 0..2 {
            for b in 0..2 {
                let f: Vec<Mat2> = (0..=n)
                    .map(|i| {
                        e.evolve(coupling_op(b), -k.grid.t(i)) * thermal_correlator(&k, ai, b, i)
                    })
                    .collect();
                a += coupling_op(ai) * crate::quadrature::gregory_integral(&f, k.grid.h);
            }
        }
        assert!((g.a - a).norm() < 1e-14);
    }

    #[test]
    fn homogeneous_generator_preserves_trace_and_hermiticity() {
        let (k, eigs) = setup(2.0, 0.01);
        let mut hm = HomogeneousMemory::new(eigs[4], k.grid.h);
        let mut g = Generator::zero();
        for _ in 0..150 {
            g = hm.advance(&k);
        }
        let rho = Mat2::new(
            Complex64::new(0.3, 0.0),
            Complex64::new(0.1, 0.2),
            Complex64::new(0.1, -0.2),
            Complex64::new(0.7, 0.0),
        );
        let d = g.apply(rho, 1.0);
        assert!(d.trace().norm() < 1e-14);
        assert!((d - d.adjoint()).norm() < 1e-14);
    }
}
