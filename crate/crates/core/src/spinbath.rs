//! Reduced dynamics of the spin bath in the l = N/2 sector, starting from |+x̂⟩ with the TLS down.
//!
//! The relevant part evolves as 2×2 TLS blocks h_{mm'} in the interaction picture; the
//! irrelevant part uses the zeroth-order approximation Qρ̃(t) ≈ Qρ̃(0).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{polaron_constants, BathKernels, Spectrum, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::sectors::{pair_eigens, q_coeffs, SectorEigens};
use crate::special::KahanSum;
use crate::tcl::{
    block_homogeneous, coherence_forcing, initial_projector, Coherence, Forcing, HomogeneousMemory,
    InteractionGenerator, MemoryKernels, SectorMemory,
};
use crate::tls::{default_dt, step_plan, InitialTls, SystemParams};

/// How the TLS factor of the m ↔ n phase is evaluated when assembling [Θ_S]_{mn}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseConvention {
    /// e^{i(H_n − H_m)t} from the diagonalization of H_n − H_m.
    #[default]
    Difference,
    /// e^{iH_n t}e^{−iH_m t}.
    Exact,
}

/// Blocks h_{mm'} over m, m' ∈ {−N/2, …, N/2}, each a 2×2 TLS matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub half: i32,
    pub blocks: Vec<Mat2>,
}

impl HMatrix {
    pub fn zeros(n: u32) -> Self {
        let size = n as usize + 1;
        Self {
            half: (n / 2) as i32,
            blocks: vec![Mat2::zero(); size * size],
        }
    }

    pub fn size(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    fn idx(&self, m: i32, mp: i32) -> usize {
        (m + self.half) as usize * self.size() + (mp + self.half) as usize
    }

    pub fn get(&self, m: i32, mp: i32) -> Mat2 {
        self.blocks[self.idx(m, mp)]
    }

    pub fn set(&mut self, m: i32, mp: i32, x: Mat2) {
        let i = self.idx(m, mp);
        self.blocks[i] = x;
    }

    /// max ‖h_{mm'} − h_{m'm}†‖.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in -self.half..=self.half {
            for mp in m..=self.half {
                worst = worst.max((self.get(m, mp) - self.get(mp, m).adjoint()).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.is_finite())
    }

    fn axpy(&self, a: f64, x: &HMatrix) -> HMatrix {
        HMatrix {
            half: self.half,
            blocks: self
                .blocks
                .iter()
                .zip(&x.blocks)
                .map(|(p, q)| *p + *q * a)
                .collect(),
        }
    }
}

/// Initial relevant part h_{mm'}(0) = q_mq_{m'}e^{−(m−m')²ψ₁(0)/2}P₀.
pub fn initial_h(n: u32, kernels: &BathKernels, initial: InitialTls) -> Result<HMatrix> {
    let q = q_coeffs(n)?;
    let p0 = initial_projector(initial.s0());
    let mut h = HMatrix::zeros(n);
    let half = h.half;
    for m in -half..=half {
        for mp in -half..=half {
            let g = Coherence {
                m,
                mp,
                s0: initial.s0(),
            }
            .gaussian(kernels);
            h.set(
                m,
                mp,
                p0 * (q[(m + half) as usize] * q[(mp + half) as usize] * g),
            );
        }
    }
    Ok(h)
}

/// TLS phase factor W with ⟨m|ρ_S|n⟩ traced over the TLS equal to Tr(h_{mn}W).
pub fn phase_factor(
    em: &SectorEigens,
    en: &SectorEigens,
    t: f64,
    convention: PhaseConvention,
) -> Mat2 {
    match convention {
        PhaseConvention::Difference => pair_eigens(en, em).phase_operator(t),
        PhaseConvention::Exact => {
            let w = en.propagator(t).adjoint() * em.propagator(t);
            w * Complex64::from_polar(1.0, (en.shift - em.shift) * t)
        }
    }
}

/// Relevant part e^{−(m−n)²ψ₁(0)/2}Tr(h_{mn}W).
pub fn relevant_theta(h_mn: Mat2, gaussian: f64, w: Mat2) -> Complex64 {
    (h_mn * w).trace() * gaussian
}

/// Irrelevant part q_mq_n e^{−(m−n)²ψ₁(0)}Tr(P₀W)(e^{(n−m)[(n−m)ψ₁(t) + i(n+m)ψ₂(t) + is₀χ₂(t)]} − 1)
/// at grid index i.
#[allow(clippy::too_many_arguments)]
pub fn irrelevant_theta(
    m: i32,
    n: i32,
    qm: f64,
    qn: f64,
    kernels: &BathKernels,
    i: usize,
    w: Mat2,
    s0: i32,
) -> Complex64 {
    if m == n {
        return Complex64::default();
    }
    let d = (n - m) as f64;
    let x = d * d * kernels.psi1(0);
    let chi2 = -kernels.cross[i].im;
    let z = Complex64::new(
        d * d * kernels.psi1(i),
        d * ((n + m) as f64 * kernels.psi2(i) + s0 as f64 * chi2),
    );
    (initial_projector(s0) * w).trace() * crate::bath::cexp_m1(z) * (qm * qn * (-x).exp())
}

/// Θ_{±±} = Σ_{mn}(±1)^m(±1)^n q_mq_n[Θ_S]_{mn}, ordered (++, +−, −+, −−).
pub fn theta_pm(theta: &[Complex64], q: &[f64]) -> [Complex64; 4] {
    let size = q.len();
    let half = (size / 2) as i32;
    let sign = |s: i32, m: i32| {
        if s < 0 && m.rem_euclid(2) == 1 {
            -1.0
        } else {
            1.0
        }
    };
    [(1, 1), (1, -1), (-1, 1), (-1, -1)].map(|(a, b)| {
        let mut re = KahanSum::new();
        let mut im = KahanSum::new();
        for (mi, m) in (-half..=half).enumerate() {
            for (ni, n) in (-half..=half).enumerate() {
                let v = theta[mi * size + ni] * (sign(a, m) * sign(b, n) * q[mi] * q[ni]);
                re.add(v.re);
                im.add(v.im);
            }
        }
        Complex64::new(re.value(), im.value())
    })
}

/// Decoherence-free evolution [Θ_S]_{mn} = q_mq_n e^{−itf(t)(m²−n²)}, row-major.
pub fn mqs_reference(t: f64, n: u32, spectrum: &Spectrum) -> Result<Vec<Complex64>> {
    let q = q_coeffs(n)?;
    let half = (n / 2) as i32;
    let tf = t * spectrum.f_mqs(t);
    let mut out = Vec::with_capacity(q.len() * q.len());
    for (mi, m) in (-half..=half).enumerate() {
        for (ni, k) in (-half..=half).enumerate() {
            out.push(Complex64::from_polar(
                q[mi] * q[ni],
                -tf * (m * m - k * k) as f64,
            ));
        }
    }
    Ok(out)
}

/// Root of t·f(t) = π/2 on [0, upper] by bisection.
pub fn tau_mqs(spectrum: &Spectrum, upper: f64) -> Result<f64> {
    let g = |t: f64| t * spectrum.f_mqs(t) - std::f64::consts::FRAC_PI_2;
    let (mut lo, mut hi) = (0.0, upper);
    if g(hi) < 0.0 {
        return Err(Error::NoRoot { upper });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Settings for the spin-bath run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinBathSettings {
    pub t_max: f64,
    pub dt: Option<f64>,
    pub phase: PhaseConvention,
    pub initial: InitialTls,
    pub stride: usize,
}

impl SpinBathSettings {
    pub fn new(t_max: f64) -> Self {
        Self {
            t_max,
            dt: None,
            phase: PhaseConvention::Difference,
            initial: InitialTls::Down,
            stride: 1,
        }
    }
}

/// Θ_{±±}(t) along the run with diagnostics.
#[derive(Debug, Clone)]
pub struct SpinBathRun {
    pub dt: f64,
    pub t: Vec<f64>,
    /// (Θ₊₊, Θ₊₋, Θ₋₊, Θ₋₋) at each output time.
    pub theta: Vec<[Complex64; 4]>,
    /// Σ_m [Θ_S]_{mm}.
    pub trace: Vec<f64>,
    /// Largest ‖h_{mm'} − h_{m'm}†‖ seen.
    pub hermiticity: f64,
    /// [Θ_S]_{mn} at t_max, row-major.
    pub final_matrix: Vec<Complex64>,
}

impl SpinBathRun {
    /// Largest |Σ_m [Θ_S]_{mm} − 1| over the run.
    pub fn trace_drift(&self) -> f64 {
        self.trace
            .iter()
            .map(|x| (x - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

struct Assembler<'a> {
    kernels: &'a BathKernels,
    eigs: &'a [SectorEigens],
    q: Vec<f64>,
    phase: PhaseConvention,
    s0: i32,
}

impl Assembler<'_> {
    fn matrix(&self, h: &HMatrix, i: usize) -> Vec<Complex64> {
        let t = self.kernels.grid.t(i);
        let half = h.half;
        let size = h.size();
        let mut out = vec![Complex64::default(); size * size];
        for (mi, m) in (-half..=half).enumerate() {
            for (ni, n) in (-half..=half).enumerate() {
                let w = phase_factor(&self.eigs[mi], &self.eigs[ni], t, self.phase);
                let g = Coherence {
                    m,
                    mp: n,
                    s0: self.s0,
                }
                .gaussian(self.kernels);
                out[mi * size + ni] = relevant_theta(h.get(m, n), g, w)
                    + irrelevant_theta(m, n, self.q[mi], self.q[ni], self.kernels, i, w, self.s0);
            }
        }
        out
    }
}

/// Evolve h_{mm'} with RK4 and assemble Θ_{±±}(t).
pub fn evolve(
    system: &SystemParams,
    spectrum: &Spectrum,
    settings: &SpinBathSettings,
) -> Result<SpinBathRun> {
    system.validate()?;
    let constants = polaron_constants(system.j, system.gamma, spectrum);
    let eigs = system.eigens(&constants);
    let dt = settings.dt.unwrap_or_else(|| default_dt(&eigs));
    let (steps, dt) = step_plan(settings.t_max, dt)?;
    let stride = settings.stride.max(1);
    let grid = TimeGrid {
        h: 0.5 * dt,
        len: 2 * steps + 1,
    };
    let kernels = BathKernels::build(spectrum, system.j, system.gamma, grid);
    let s0 = settings.initial.s0();
    let q = q_coeffs(system.n)?;
    let half = (system.n / 2) as i32;
    let size = system.n as usize + 1;
    let coupled = !kernels.tls_decoupled && system.j != 0.0;

    // forcing for m ≤ m'; the other triangle is the adjoint
    let forcing: Option<Vec<Forcing>> = coupled.then(|| {
        let mem = MemoryKernels::new(&kernels, grid.len);
        let sectors: Vec<SectorMemory> = eigs
            .par_iter()
            .map(|e| SectorMemory::new(*e, &mem))
            .collect();
        let pairs: Vec<(usize, usize)> = (0..size)
            .flat_map(|a| (a..size).map(move |b| (a, b)))
            .collect();
        pairs
            .par_iter()
            .map(|&(a, b)| {
                let coh = Coherence {
                    m: eigs[a].m,
                    mp: eigs[b].m,
                    s0,
                };
                coherence_forcing(
                    &kernels,
                    &mem,
                    &sectors[a],
                    &sectors[b],
                    coh,
                    system.j,
                    q[a] * q[b],
                )
            })
            .collect()
    });
    let pair_index = |a: usize, b: usize| a * size - a * (a + 1) / 2 + b;

    let mut memories: Vec<HomogeneousMemory> = eigs
        .iter()
        .map(|e| HomogeneousMemory::new(*e, grid.h))
        .collect();
    let mut generators = |i: usize| -> Vec<InteractionGenerator> {
        let t = grid.t(i);
        memories
            .iter_mut()
            .zip(&eigs)
            .map(|(mem, e)| {
                debug_assert_eq!(mem.len(), i);
                mem.advance(&kernels).conjugated(e.propagator(t))
            })
            .collect()
    };
    let rhs = |gens: &[InteractionGenerator], i: usize, h: &HMatrix| -> HMatrix {
        let f = forcing.as_ref().expect("coupled run");
        let mut out = HMatrix::zeros(system.n);
        for a in 0..size {
            for b in 0..size {
                let (m, mp) = (a as i32 - half, b as i32 - half);
                let force = if a <= b {
                    f[pair_index(a, b)].total(i)
                } else {
                    f[pair_index(b, a)].total(i).adjoint()
                };
                out.set(
                    m,
                    mp,
                    block_homogeneous(&gens[a], &gens[b], h.get(m, mp), system.j) + force,
                );
            }
        }
        out
    };

    let assembler = Assembler {
        kernels: &kernels,
        eigs: &eigs,
        q: q.clone(),
        phase: settings.phase,
        s0,
    };
    let mut h = initial_h(system.n, &kernels, settings.initial)?;
    let mut run = SpinBathRun {
        dt,
        t: Vec::new(),
        theta: Vec::new(),
        trace: Vec::new(),
        hermiticity: h.hermiticity_error(),
        final_matrix: Vec::new(),
    };
    let record = |run: &mut SpinBathRun, h: &HMatrix, i: usize, last: bool| {
        let mat = assembler.matrix(h, i);
        run.t.push(grid.t(i));
        run.theta.push(theta_pm(&mat, &q));
        let mut tr = KahanSum::new();
        for k in 0..size {
            tr.add(mat[k * size + k].re);
        }
        run.trace.push(tr.value());
        run.hermiticity = run.hermiticity.max(h.hermiticity_error());
        if last {
            run.final_matrix = mat;
        }
    };
    record(&mut run, &h, 0, steps == 0);
    if coupled {
        let mut g0 = generators(0);
        for s in 0..steps {
            let n = 2 * s;
            let g1 = generators(n + 1);
            let g2 = generators(n + 2);
            let k1 = rhs(&g0, n, &h);
            let k2 = rhs(&g1, n + 1, &h.axpy(0.5 * dt, &k1));
            let k3 = rhs(&g1, n + 1, &h.axpy(0.5 * dt, &k2));
            let k4 = rhs(&g2, n + 2, &h.axpy(dt, &k3));
            for (((y, a), (b, c)), d) in h
                .blocks
                .iter_mut()
                .zip(&k1.blocks)
                .zip(k2.blocks.iter().zip(&k3.blocks))
                .zip(&k4.blocks)
            {
                *y += (*a + (*b + *c) * 2.0 + *d) * (dt / 6.0);
            }
            if !h.is_finite() {
                let bad = h.blocks.iter().position(|b| !b.is_finite()).unwrap_or(0);
                let (m, mp) = ((bad / size) as i32 - half, (bad % size) as i32 - half);
                return Err(Error::Divergence {
                    sector: format!("h[{m},{mp}]"),
                    t: (s + 1) as f64 * dt,
                });
            }
            if (s + 1) % stride == 0 || s + 1 == steps {
                record(&mut run, &h, n + 2, s + 1 == steps);
            }
            g0 = g2;
        }
    } else {
        // no TLS–boson coupling: the relevant part is frozen in the interaction picture
        for s in 0..steps {
            if (s + 1) % stride == 0 || s + 1 == steps {
                record(&mut run, &h, 2 * s + 2, s + 1 == steps);
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathParams;
    use crate::sectors::sector_eigens;
    use approx::assert_relative_eq;

    fn cold_spectrum(kappa1: f64) -> Spectrum {
        Spectrum::Cubic(BathParams::new(kappa1, 0.0, 0.5, 1.0, 100.0))
    }

    fn coherence_system(gamma: f64) -> SystemParams {
        SystemParams {
            epsilon: 1.0,
            j: 0.1,
            alpha: 0.0,
            gamma,
            n: 10,
        }
    }

    #[test]
    fn tau_mqs_matches_caption() {
        let tau = tau_mqs(&cold_spectrum(0.0), 10.0).unwrap();
        assert!((tau - 1.685).abs() < 0.005, "τ = {tau}");
        assert!(tau_mqs(
            &Spectrum::Cubic(BathParams::new(0.0, 0.0, 0.01, 1.0, 100.0)),
            10.0
        )
        .is_err());
    }

    #[test]
    fn reference_is_periodic_and_inverts() {
        let spec = cold_spectrum(0.0);
        let q = q_coeffs(10).unwrap();
        let tau = tau_mqs(&spec, 10.0).unwrap();
        let at = |t: f64| theta_pm(&mqs_reference(t, 10, &spec).unwrap(), &q);
        for v in at(tau) {
            assert_relative_eq!(v.norm(), 0.5, epsilon = 1e-12);
        }
        // t f(t) = π: |−x̂⟩; the root is solved directly since f depends on t
        let mut lo = tau;
        let mut hi = 10.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * spec.f_mqs(mid) < std::f64::consts::PI {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let inv = at(lo);
        assert_relative_eq!(inv[3].norm(), 1.0, epsilon = 1e-9);
        assert!(inv[0].norm() < 1e-9 && inv[1].norm() < 1e-9);
        let start = at(0.0);
        assert_relative_eq!(start[0].re, 1.0, epsilon = 1e-12);
        for v in &start[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn theta_at_origin_is_plus_x() {
        let spec = cold_spectrum(0.05);
        let run = evolve(
            &coherence_system(0.5),
            &spec,
            &SpinBathSettings {
                dt: Some(0.01),
                ..SpinBathSettings::new(0.02)
            },
        )
        .unwrap();
        let th = run.theta[0];
        assert_relative_eq!(th[0].re, 1.0, epsilon = 1e-12);
        assert!(th[0].im.abs() < 1e-12);
        for v in &th[1..] {
            assert!(v.norm() < 1e-12);
        }
        assert!((run.trace[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn irrelevant_part_restores_initial_state() {
        // relevant e^{−x}q_mq_n plus irrelevant q_mq_n(1 − e^{−x}) at t = 0
        let spec = cold_spectrum(0.05);
        let k = BathKernels::build(&spec, 0.1, 0.0, TimeGrid::covering(0.1, 0.01));
        let c = polaron_constants(0.1, 0.0, &spec);
        let (em, en) = (
            sector_eigens(-2, 1.0, &c, 0.0),
            sector_eigens(1, 1.0, &c, 0.0),
        );
        let w = phase_factor(&em, &en, 0.0, PhaseConvention::Difference);
        let h0 = initial_h(10, &k, InitialTls::Down).unwrap();
        let q = q_coeffs(10).unwrap();
        let g = Coherence {
            m: -2,
            mp: 1,
            s0: -1,
        }
        .gaussian(&k);
        let total =
            relevant_theta(h0.get(-2, 1), g, w) + irrelevant_theta(-2, 1, q[3], q[6], &k, 0, w, -1);
        assert_relative_eq!(total.re, q[3] * q[6], epsilon = 1e-15);
        assert!(total.im.abs() < 1e-15);
        assert_eq!(
            irrelevant_theta(1, 1, q[6], q[6], &k, 5, w, -1),
            Complex64::default()
        );
    }

    #[test]
    fn phase_conventions_agree_for_commuting_sectors() {
        let spec = cold_spectrum(0.0);
        let c = polaron_constants(0.1, 0.0, &spec);
        let (em, en) = (
            sector_eigens(-2, 1.0, &c, 0.3),
            sector_eigens(3, 1.0, &c, 0.3),
        );
        for t in [0.0, 0.7, 2.9] {
            let a = phase_factor(&em, &en, t, PhaseConvention::Difference);
            let b = phase_factor(&em, &en, t, PhaseConvention::Exact);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn decoupled_run_matches_dephased_reference() {
        // κ₁ = κ₂ = γ = 0: Θ_mn = q_mq_n e^{itf(t)(m²−n²)} e^{−(m−n)²(ψ₁(0)−ψ₁(t))}
        let spec = cold_spectrum(0.0);
        let run = evolve(&coherence_system(0.0), &spec, &SpinBathSettings::new(2.0)).unwrap();
        let k = BathKernels::build(&spec, 0.1, 0.0, TimeGrid::covering(2.0, 0.5 * run.dt));
        let q = q_coeffs(10).unwrap();
        let i = k.len() - 1;
        let t = k.grid.t(i);
        let tf = t * spec.f_mqs(t);
        let mut expect = Vec::new();
        for m in -5i32..=5 {
            for n in -5i32..=5 {
                let d = (m - n) as f64;
                let amp = q[(m + 5) as usize]
                    * q[(n + 5) as usize]
                    * (-d * d * (k.psi1(0) - k.psi1(i))).exp();
                expect.push(Complex64::from_polar(amp, tf * (m * m - n * n) as f64));
            }
        }
        for (a, b) in run.final_matrix.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn coupled_run_keeps_hermiticity_and_trace() {
        let spec = Spectrum::Cubic(BathParams::new(0.1, 0.0, 0.5, 1.0, 100.0));
        let sys = SystemParams {
            n: 4,
            ..coherence_system(0.5)
        };
        let run = evolve(&sys, &spec, &SpinBathSettings::new(1.0)).unwrap();
        assert!(run.hermiticity < 1e-12, "{}", run.hermiticity);
        assert!(run.trace_drift() < 0.05, "{}", run.trace_drift());
        for th in &run.theta {
            assert!((th[1] - th[2].conj()).norm() < 1e-12);
        }
    }
}
