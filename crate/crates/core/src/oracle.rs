//! Exact propagation of the full model with a few spins and a truncated, discretized boson bath.
//!
//! Every term of H is diagonal in L_z, so each m sector evolves independently under
//! H_m = (ε/2)σ_z + Jσ_x + αm + γmσ_z + Σ_k (mη_k + σ_zξ_k/2)(b_k + b_k†) + Σ_k ω_k b_k†b_k.
//! Sectors are propagated through a dense eigendecomposition, so evolution is exactly unitary.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{BathParams, Mode};
use crate::error::{Error, Result};
use crate::sectors::q_coeffs;
use crate::tcl::{Coherence, SIGN};
use crate::tls::{sector_weights, InitialTls};

pub const MAX_SPINS: u32 = 4;
pub const MAX_MODES: usize = 3;
pub const MAX_FOCK: usize = 8;
pub const MAX_DIMENSION: usize = 20_000;

/// Fock configurations with thermal weight below this are dropped from the initial mixture.
const MIXTURE_CUTOFF: f64 = 1e-14;

/// Small model propagated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedModel {
    pub n_spins: u32,
    pub modes: Vec<Mode>,
    pub n_max: usize,
    pub epsilon: f64,
    pub j: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TruncatedModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_spins > MAX_SPINS || self.n_spins % 2 == 1 {
            return Err(Error::validation(
                "oracle.n_spins",
                format!("must be even and ≤ {MAX_SPINS}, got {}", self.n_spins),
            ));
        }
        if self.modes.is_empty() || self.modes.len() > MAX_MODES {
            return Err(Error::validation(
                "oracle.modes",
                format!("need 1..={MAX_MODES} modes, got {}", self.modes.len()),
            ));
        }
        if self.n_max == 0 || self.n_max > MAX_FOCK {
            return Err(Error::validation(
                "oracle.n_max",
                format!("must be in 1..={MAX_FOCK}, got {}", self.n_max),
            ));
        }
        if self.dimension() > MAX_DIMENSION {
            return Err(Error::validation(
                "oracle",
                format!(
                    "Hilbert dimension {} exceeds {MAX_DIMENSION}",
                    self.dimension()
                ),
            ));
        }
        for m in &self.modes {
            if !(m.omega > 0.0 && m.omega.is_finite() && m.xi.is_finite() && m.eta.is_finite()) {
                return Err(Error::validation(
                    "oracle.modes",
                    format!("invalid mode {m:?}"),
                ));
            }
        }
        for (name, v) in [
            ("system.epsilon", self.epsilon),
            ("system.J", self.j),
            ("system.gamma", self.gamma),
            ("system.alpha", self.alpha),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(name, format!("must be finite, got {v}")));
            }
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::validation("bath.beta", "must be > 0"));
        }
        Ok(())
    }

    /// 2·2^N·(n_max+1)^K.
    pub fn dimension(&self) -> usize {
        2 * (1usize << self.n_spins) * self.fock_dimension()
    }

    pub fn fock_dimension(&self) -> usize {
        (self.n_max + 1).pow(self.modes.len() as u32)
    }

    /// Occupation numbers of Fock index c (mode 0 fastest).
    fn occupations(&self, mut c: usize) -> Vec<usize> {
        self.modes
            .iter()
            .map(|_| {
                let n = c % (self.n_max + 1);
                c /= self.n_max + 1;
                n
            })
            .collect()
    }

    fn stride(&self, k: usize) -> usize {
        (self.n_max + 1).pow(k as u32)
    }

    /// Bath part: Σ ω_k n_k on the diagonal, plus Σ_k c_k(b_k + b_k†) with c_k = coupling(k).
    fn add_bath(&self, h: &mut DMatrix<f64>, offset: usize, coupling: impl Fn(usize) -> f64) {
        let f = self.fock_dimension();
        for c in 0..f {
            let occ = self.occupations(c);
            h[(offset + c, offset + c)] += occ
                .iter()
                .zip(&self.modes)
                .map(|(&n, m)| n as f64 * m.omega)
                .sum::<f64>();
            for (k, &n) in occ.iter().enumerate() {
                let g = coupling(k);
                if n < self.n_max && g != 0.0 {
                    let up = c + self.stride(k);
                    let v = g * ((n + 1) as f64).sqrt();
                    h[(offset + up, offset + c)] += v;
                    h[(offset + c, offset + up)] += v;
                }
            }
        }
    }

    /// H restricted to L_z = m, on TLS ⊗ Fock with TLS index 0 = up.
    pub fn sector_hamiltonian(&self, m: i32) -> DMatrix<f64> {
        let f = self.fock_dimension();
        let mf = m as f64;
        let mut h = DMatrix::zeros(2 * f, 2 * f);
        for (t, s) in [(0usize, 1.0f64), (1, -1.0)] {
            let diag = 0.5 * self.epsilon * s + self.alpha * mf + self.gamma * mf * s;
            for c in 0..f {
                h[(t * f + c, t * f + c)] += diag;
            }
            self.add_bath(&mut h, t * f, |k| {
                mf * self.modes[k].eta + 0.5 * s * self.modes[k].xi
            });
        }
        for c in 0..f {
            h[(c, f + c)] += self.j;
            h[(f + c, c)] += self.j;
        }
        h
    }

    /// Full H on TLS ⊗ 2^N spins ⊗ Fock, index ((tls·2^N) + spins)·F + fock.
    pub fn build_hamiltonian(&self) -> Result<DMatrix<f64>> {
        self.validate()?;
        let f = self.fock_dimension();
        let ns = 1usize << self.n_spins;
        let dim = self.dimension();
        let mut h = DMatrix::zeros(dim, dim);
        for (t, s) in [(0usize, 1.0f64), (1, -1.0)] {
            for cfg in 0..ns {
                let m = lz_of(cfg, self.n_spins);
                let base = (t * ns + cfg) * f;
                let diag = 0.5 * self.epsilon * s + self.alpha * m + self.gamma * m * s;
                for c in 0..f {
                    h[(base + c, base + c)] += diag;
                }
                self.add_bath(&mut h, base, |k| {
                    m * self.modes[k].eta + 0.5 * s * self.modes[k].xi
                });
            }
        }
        for cfg in 0..ns {
            for c in 0..f {
                let (a, b) = (cfg * f + c, (ns + cfg) * f + c);
                h[(a, b)] += self.j;
                h[(b, a)] += self.j;
            }
        }
        Ok(h)
    }

    /// L² on the same basis as [`build_hamiltonian`](Self::build_hamiltonian).
    pub fn total_spin_squared(&self) -> DMatrix<f64> {
        let f = self.fock_dimension();
        let n = self.n_spins as usize;
        let ns = 1usize << n;
        // L² = L_z² + (L₊L₋ + L₋L₊)/2 over spin configurations
        let mut l2 = DMatrix::<f64>::zeros(ns, ns);
        for cfg in 0..ns {
            let m = lz_of(cfg, self.n_spins);
            l2[(cfg, cfg)] += m * m;
            // (L₊L₋ + L₋L₊)/2 = Σ_{ij} (σ₊^iσ₋^j + σ₋^iσ₊^j)/2
            for i in 0..n {
                for j in 0..n {
                    for (from, to) in [(true, false), (false, true)] {
                        // σ₋^j then σ₊^i (from = true) or σ₊^j then σ₋^i
                        let bit_j = cfg >> j & 1 == 1;
                        if bit_j != from {
                            continue;
                        }
                        let mid = cfg ^ (1 << j);
                        let bit_i = mid >> i & 1 == 1;
                        if bit_i != to {
                            continue;
                        }
                        l2[(mid ^ (1 << i), cfg)] += 0.5;
                    }
                }
            }
        }
        let dim = self.dimension();
        let mut out = DMatrix::zeros(dim, dim);
        for t in 0..2 {
            for a in 0..ns {
                for b in 0..ns {
                    if l2[(a, b)] != 0.0 {
                        for c in 0..f {
                            out[((t * ns + a) * f + c, (t * ns + b) * f + c)] = l2[(a, b)];
                        }
                    }
                }
            }
        }
        out
    }

    /// Normalized Boltzmann weights of the truncated Fock configurations, small ones dropped.
    pub fn thermal_mixture(&self) -> Vec<(usize, f64)> {
        let f = self.fock_dimension();
        let energies: Vec<f64> = (0..f)
            .map(|c| {
                self.occupations(c)
                    .iter()
                    .zip(&self.modes)
                    .map(|(&n, m)| n as f64 * m.omega)
                    .sum()
            })
            .collect();
        let raw: Vec<f64> = energies.iter().map(|e| (-self.beta * e).exp()).collect();
        let z: f64 = raw.iter().sum();
        let kept: Vec<(usize, f64)> = raw
            .iter()
            .enumerate()
            .map(|(c, w)| (c, w / z))
            .filter(|(_, w)| *w >= MIXTURE_CUTOFF)
            .collect();
        let norm: f64 = kept.iter().map(|(_, w)| w).sum();
        kept.into_iter().map(|(c, w)| (c, w / norm)).collect()
    }
}

/// Spin up bit = +1/2.
fn lz_of(cfg: usize, n: u32) -> f64 {
    let ups = cfg.count_ones() as f64;
    ups - 0.5 * n as f64
}

/// Log-spaced modes over [ω_c/20, 6ω_c] whose Σξ²/ω² and Ση²/ω² equal ∫J_TT/ω² and ∫J_SS/ω².
///
/// One mode per bin forces ξ_kη_k ∝ J_TS with κ₂ = sign·√(κ₁κ₃); `p.kappa2` is not used.
pub fn log_discretization(p: &BathParams, k: usize, sign: f64) -> Result<Vec<Mode>> {
    p.validate()?;
    if k == 0 || k > MAX_MODES {
        return Err(Error::validation(
            "oracle.modes",
            format!("need 1..={MAX_MODES} modes, got {k}"),
        ));
    }
    let wc = p.omega_c;
    let (lo, hi) = (wc / 20.0, 6.0 * wc);
    let edges: Vec<f64> = (0..=k)
        .map(|i| lo * (hi / lo).powf(i as f64 / k as f64))
        .collect();
    // ∫ ω e^{−ω/ω_c} dω = −ω_c(ω + ω_c)e^{−ω/ω_c}
    let anti = |w: f64| -wc * (w + wc) * (-w / wc).exp();
    let bins: Vec<f64> = edges.windows(2).map(|e| anti(e[1]) - anti(e[0])).collect();
    let total_bins: f64 = bins.iter().sum();
    // ∫₀^∞ J/ω² = κω_c²/ω_ph²
    let moment = |kappa: f64| kappa * wc * wc / (p.omega_ph * p.omega_ph);
    Ok(edges
        .windows(2)
        .zip(&bins)
        .map(|(e, &b)| {
            let omega = (e[0] * e[1]).sqrt();
            let share = b / total_bins;
            Mode {
                omega,
                xi: omega * (moment(p.kappa1) * share).sqrt(),
                eta: sign.signum() * omega * (moment(p.kappa3) * share).sqrt(),
            }
        })
        .collect())
}

/// TLS observables of an exact run, mixed over spin sectors and bath configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub t: Vec<f64>,
    pub sigma_z: Vec<f64>,
    pub sigma_x: Vec<f64>,
    /// Polaron-frame ⟨σ_x⟩ and ⟨σ_y⟩, i.e. 2Re and 2Im of ⟨σ₊e^{−B₂}⟩.
    pub sigma_x_p: Vec<f64>,
    pub sigma_y_p: Vec<f64>,
    pub p1: Vec<f64>,
    /// Largest |‖ψ(t)‖ − 1| over all propagated states.
    pub norm_drift: f64,
    /// Largest |⟨H⟩(t) − ⟨H⟩(0)| over all propagated states.
    pub energy_drift: f64,
    /// Largest mixture-averaged population in any mode's top Fock level.
    pub cutoff_tail: f64,
}

impl OracleRun {
    /// Cutoff adequacy: top-level population below 1e-6.
    pub fn cutoff_adequate(&self) -> bool {
        self.cutoff_tail < 1e-6
    }
}

struct SectorPropagator {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl SectorPropagator {
    fn new(h: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(h);
        Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
        }
    }

    /// Eigenbasis amplitudes of a basis state.
    fn amplitudes(&self, index: usize) -> DVector<f64> {
        self.vectors.row(index).transpose()
    }

    fn state(&self, amps: &DVector<f64>, t: f64) -> DVector<Complex64> {
        let phased = DVector::from_iterator(
            amps.len(),
            amps.iter()
                .zip(self.values.iter())
                .map(|(a, e)| Complex64::from_polar(*a, -e * t)),
        );
        self.vectors.map(|x| Complex64::new(x, 0.0)) * phased
    }

    fn energy(&self, amps: &DVector<f64>) -> f64 {
        amps.iter()
            .zip(self.values.iter())
            .map(|(a, e)| a * a * e)
            .sum()
    }
}

fn tls_index(initial: InitialTls) -> usize {
    match initial {
        InitialTls::Up => 0,
        InitialTls::Down => 1,
    }
}

/// ⟨σ_z⟩ and ⟨σ_x⟩ with the spin bath thermal in αL_z and the boson bath thermal.
pub fn propagate(model: &TruncatedModel, initial: InitialTls, times: &[f64]) -> Result<OracleRun> {
    model.validate()?;
    let f = model.fock_dimension();
    let mixture = model.thermal_mixture();
    let weights = sector_weights(model.n_spins, model.beta, model.alpha);
    let mut run = OracleRun {
        t: times.to_vec(),
        sigma_z: vec![0.0; times.len()],
        sigma_x: vec![0.0; times.len()],
        sigma_x_p: vec![0.0; times.len()],
        sigma_y_p: vec![0.0; times.len()],
        p1: vec![0.0; times.len()],
        norm_drift: 0.0,
        energy_drift: 0.0,
        cutoff_tail: 0.0,
    };
    let h_unit = 2.0 * model.n_max as f64;
    let dressing = (-displacement_generator(model, |m| m.xi)).exp();
    let mut tails = vec![vec![0.0; times.len()]; model.modes.len()];
    let top: Vec<Vec<usize>> = (0..model.modes.len())
        .map(|k| {
            (0..f)
                .filter(|&c| model.occupations(c)[k] == model.n_max)
                .collect()
        })
        .collect();
    for w in &weights {
        let prop = SectorPropagator::new(model.sector_hamiltonian(w.m));
        for &(c, pc) in &mixture {
            let amps = prop.amplitudes(tls_index(initial) * f + c);
            let e0 = prop.energy(&amps);
            for (ti, &t) in times.iter().enumerate() {
                let psi = prop.state(&amps, t);
                let (mut up, mut down, mut coh) = (0.0, 0.0, Complex64::default());
                for c in 0..f {
                    up += psi[c].norm_sqr();
                    down += psi[f + c].norm_sqr();
                    coh += psi[c].conj() * psi[f + c];
                }
                let lower = psi.rows(f, f).into_owned();
                let z = psi.rows(0, f).dotc(&(&dressing * lower));
                let norm = up + down;
                run.norm_drift = run.norm_drift.max((norm.sqrt() - 1.0).abs());
                let wt = w.weight * pc;
                run.sigma_z[ti] += wt * (up - down);
                run.sigma_x[ti] += wt * 2.0 * coh.re;
                run.sigma_x_p[ti] += wt * 2.0 * z.re;
                run.sigma_y_p[ti] += wt * 2.0 * z.im;
                for (tops, tail) in top.iter().zip(tails.iter_mut()) {
                    tail[ti] += wt
                        * tops
                            .iter()
                            .map(|&c| psi[c].norm_sqr() + psi[f + c].norm_sqr())
                            .sum::<f64>();
                }
            }
            // eigen-propagation conserves ⟨H⟩ by construction; recorded against rounding
            run.energy_drift = run
                .energy_drift
                .max((prop.energy(&amps) - e0).abs() / h_unit.max(1.0));
        }
    }
    run.cutoff_tail = tails.iter().flatten().fold(0.0, |a, &b| a.max(b));
    for (p, z) in run.p1.iter_mut().zip(&run.sigma_z) {
        *p = 0.5 * (1.0 + z);
    }
    if run.norm_drift > 1e-10 {
        return Err(Error::Oracle(format!(
            "norm drift {:.3e} exceeds 1e-10",
            run.norm_drift
        )));
    }
    Ok(run)
}

/// [Θ_S]_{mn}(t) for the spin bath started in |+x̂⟩ and the TLS in `initial`, row-major.
pub fn spin_matrix(model: &TruncatedModel, initial: InitialTls, t: f64) -> Result<Vec<Complex64>> {
    model.validate()?;
    let f = model.fock_dimension();
    let q = q_coeffs(model.n_spins)?;
    let half = (model.n_spins / 2) as i32;
    let size = q.len();
    let mixture = model.thermal_mixture();
    let props: Vec<SectorPropagator> = (-half..=half)
        .map(|m| SectorPropagator::new(model.sector_hamiltonian(m)))
        .collect();
    let mut out = vec![Complex64::default(); size * size];
    for &(c, pc) in &mixture {
        let states: Vec<DVector<Complex64>> = props
            .iter()
            .map(|p| p.state(&p.amplitudes(tls_index(initial) * f + c), t))
            .collect();
        for a in 0..size {
            for b in 0..size {
                // ⟨m|ρ_S|n⟩ = q_mq_n⟨ψ_n|ψ_m⟩
                out[a * size + b] += states[b].dotc(&states[a]) * (pc * q[a] * q[b]);
            }
        }
    }
    Ok(out)
}

/// B = Σ_k (c_k/ω_k)(b_k† − b_k) on the truncated Fock space.
fn displacement_generator(
    model: &TruncatedModel,
    coupling: impl Fn(&Mode) -> f64,
) -> DMatrix<Complex64> {
    let f = model.fock_dimension();
    let mut b = DMatrix::<Complex64>::zeros(f, f);
    for c in 0..f {
        for (k, &n) in model.occupations(c).iter().enumerate() {
            if n < model.n_max {
                let up = c + model.stride(k);
                let v = coupling(&model.modes[k]) / model.modes[k].omega * ((n + 1) as f64).sqrt();
                b[(up, c)] += Complex64::new(v, 0.0);
                b[(c, up)] -= Complex64::new(v, 0.0);
            }
        }
    }
    b
}

/// Bath-only operators on the truncated Fock space.
pub struct FockBath<'a> {
    model: &'a TruncatedModel,
    b1: DMatrix<Complex64>,
    b2: DMatrix<Complex64>,
    rho: DMatrix<Complex64>,
    energies: Vec<f64>,
}

impl<'a> FockBath<'a> {
    pub fn new(model: &'a TruncatedModel) -> Self {
        let f = model.fock_dimension();
        let energies: Vec<f64> = (0..f)
            .map(|c| {
                model
                    .occupations(c)
                    .iter()
                    .zip(&model.modes)
                    .map(|(&n, m)| n as f64 * m.omega)
                    .sum()
            })
            .collect();
        let mut rho = DMatrix::<Complex64>::zeros(f, f);
        for (c, w) in model.thermal_mixture() {
            rho[(c, c)] = Complex64::new(w, 0.0);
        }
        Self {
            model,
            b1: displacement_generator(model, |m| m.eta),
            b2: displacement_generator(model, |m| m.xi),
            rho,
            energies,
        }
    }

    fn heisenberg(&self, x: &DMatrix<Complex64>, t: f64) -> DMatrix<Complex64> {
        let f = self.model.fock_dimension();
        DMatrix::from_fn(f, f, |r, c| {
            x[(r, c)] * Complex64::from_polar(1.0, (self.energies[r] - self.energies[c]) * t)
        })
    }

    /// ⟨e^{εB₂}⟩ in the thermal state.
    pub fn theta(&self) -> Complex64 {
        (self.b2.clone().exp() * &self.rho).trace()
    }

    /// B_a(t) = e^{iH_Bt}(e^{ε_aB₂} − Θ)e^{−iH_Bt}.
    pub fn coupling(&self, a: usize, t: f64) -> DMatrix<Complex64> {
        let f = self.model.fock_dimension();
        let d = (&self.b2 * Complex64::new(SIGN[a], 0.0)).exp();
        let theta = (&d * &self.rho).trace();
        self.heisenberg(&(d - DMatrix::identity(f, f) * theta), t)
    }

    /// e^{mB₁ + s₀B₂/2}ρ_B e^{−m'B₁ − s₀B₂/2}.
    pub fn displaced(&self, coh: Coherence) -> DMatrix<Complex64> {
        let gen = |m: i32| {
            (&self.b1 * Complex64::new(m as f64, 0.0)
                + &self.b2 * Complex64::new(0.5 * coh.s0 as f64, 0.0))
            .exp()
        };
        // e^{−X} = (e^{X})† for anti-Hermitian X
        gen(coh.m) * &self.rho * gen(coh.mp).adjoint()
    }

    /// ⟨B_a(t)⟩_Q = Tr[B_a(t)ρ̃^{mm'}].
    pub fn q_mean(&self, coh: Coherence, a: usize, t: f64) -> Complex64 {
        (self.coupling(a, t) * self.displaced(coh)).trace()
    }

    /// ⟨B_a(t)B_b(s)⟩_Q = Tr[B_a(t)B_b(s)ρ̃^{mm'}] − Tr[ρ̃^{mm'}]⟨B_a(t)B_b(s)⟩.
    pub fn q_pair(&self, coh: Coherence, a: usize, b: usize, t: f64, s: f64) -> Complex64 {
        let prod = self.coupling(a, t) * self.coupling(b, s);
        let rt = self.displaced(coh);
        (&prod * &rt).trace() - rt.trace() * (&prod * &self.rho).trace()
    }
}
