//! Dicke sectors of the spin bath, sector diagonalization of the polaron-frame Hamiltonian,
//! and the interaction-picture kernels.

use num_complex::Complex64;

use crate::bath::PolaronConstants;
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::special::binomial;

/// Largest N for which degeneracies are exact integers.
pub const MAX_EXACT_N: u32 = 60;

fn check_even(n: u32) -> Result<()> {
    if !n.is_multiple_of(2) {
        return Err(Error::validation(
            "system.N",
            format!("spin count must be even, got {n}"),
        ));
    }
    Ok(())
}

pub fn binomial_u128(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c * (n as u128 - k + i) / i;
    }
    c
}

/// ν(l, N/2) = C(N, l+N/2) − C(N, l+1+N/2), the multiplicity of total spin l.
pub fn degeneracy(l: u32, n: u32) -> Result<u128> {
    check_even(n)?;
    if n > MAX_EXACT_N {
        return Err(Error::validation(
            "system.N",
            format!("exact degeneracies need N ≤ {MAX_EXACT_N}"),
        ));
    }
    if l > n / 2 {
        return Err(Error::Domain(format!(
            "total spin l = {l} exceeds N/2 = {}",
            n / 2
        )));
    }
    let half = n / 2;
    Ok(binomial_u128(n, l + half) - binomial_u128(n, l + 1 + half))
}

/// One (l, m) block with its degeneracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectorEntry {
    pub l: u32,
    pub m: i32,
    pub nu: u128,
}

/// All (l, m) sectors, ordered by l then m ascending.
#[derive(Debug, Clone)]
pub struct SectorTable {
    pub n: u32,
    pub entries: Vec<SectorEntry>,
}

impl SectorTable {
    pub fn new(n: u32) -> Result<Self> {
        check_even(n)?;
        let mut entries = Vec::new();
        for l in 0..=n / 2 {
            let nu = degeneracy(l, n)?;
            for m in -(l as i32)..=l as i32 {
                entries.push(SectorEntry { l, m, nu });
            }
        }
        Ok(Self { n, entries })
    }

    /// Sector labels m = −N/2..N/2.
    pub fn m_values(&self) -> impl Iterator<Item = i32> {
        let h = (self.n / 2) as i32;
        -h..=h
    }

    /// Σ_l ν(l)(2l+1), which must equal 2^N.
    pub fn dimension(&self) -> u128 {
        self.entries.iter().map(|e| e.nu).sum()
    }
}

/// Diagonalization of the polaron-frame TLS Hamiltonian (ε̃_m/2)σ_z + J̃σ_x in sector m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorEigens {
    pub m: i32,
    pub eps_tilde: f64,
    pub eps: f64,
    pub theta: f64,
    pub c: f64,
    pub s: f64,
    /// αm − ηm², the spin-bath energy shared by both levels.
    pub shift: f64,
    pub e_plus: f64,
    pub e_minus: f64,
    /// J̃ = 0 and ε̃_m = 0: θ is undefined and set to π/2.
    pub degenerate: bool,
}

pub fn sector_eigens(m: i32, eps: f64, k: &PolaronConstants, alpha: f64) -> SectorEigens {
    let mf = m as f64;
    let eps_tilde = eps + 2.0 * k.gamma_tilde * mf;
    let gap = (4.0 * k.j_tilde * k.j_tilde + eps_tilde * eps_tilde).sqrt();
    let degenerate = k.j_tilde == 0.0 && eps_tilde == 0.0;
    let theta = if degenerate {
        std::f64::consts::FRAC_PI_2
    } else {
        (2.0 * k.j_tilde).atan2(eps_tilde)
    };
    let shift = alpha * mf - k.eta * mf * mf;
    SectorEigens {
        m,
        eps_tilde,
        eps: gap,
        theta,
        c: theta.cos(),
        s: theta.sin(),
        shift,
        e_plus: shift + 0.5 * gap,
        e_minus: shift - 0.5 * gap,
        degenerate,
    }
}

impl SectorEigens {
    /// TLS part of the sector Hamiltonian, without the common shift.
    pub fn hamiltonian(&self) -> Mat2 {
        (Mat2::sigma_z() * self.c + Mat2::sigma_x() * self.s) * (0.5 * self.eps)
    }

    /// e^{−iHt} for the TLS part.
    pub fn propagator(&self, t: f64) -> Mat2 {
        let (sn, cs) = (0.5 * self.eps * t).sin_cos();
        let n = Mat2::sigma_z() * self.c + Mat2::sigma_x() * self.s;
        Mat2::identity() * cs + n * Complex64::new(0.0, -sn)
    }

    /// Interaction-picture operator e^{iHt} X e^{−iHt}.
    pub fn evolve(&self, x: Mat2, t: f64) -> Mat2 {
        let u = self.propagator(t);
        u.adjoint() * x * u
    }

    /// Spectral projectors onto |φ⁺_m⟩ and |φ⁻_m⟩.
    pub fn projectors(&self) -> (Mat2, Mat2) {
        let n = Mat2::sigma_z() * self.c + Mat2::sigma_x() * self.s;
        ((Mat2::identity() + n) * 0.5, (Mat2::identity() - n) * 0.5)
    }

    /// Split X into Fourier components, e^{iHt} X e^{−iHt} = Σ_ω A_ω e^{iωt}, ω ∈ {0, ε_m, −ε_m}.
    pub fn fourier_parts(&self, x: Mat2) -> [(f64, Mat2); 3] {
        let (pp, pm) = self.projectors();
        [
            (0.0, pp * x * pp + pm * x * pm),
            (self.eps, pp * x * pm),
            (-self.eps, pm * x * pp),
        ]
    }
}

/// Cartesian component index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// K^i_m(t): components of σ̃₊(t) in the pseudo-spin basis of sector m.
pub fn kernel_k(i: Axis, t: f64, eig: &SectorEigens) -> Complex64 {
    let e = Complex64::from_polar(1.0, eig.eps * t);
    let (a, b) = (0.25 * (1.0 + eig.c), 0.25 * (1.0 - eig.c));
    match i {
        Axis::X => e * a - e.conj() * b,
        Axis::Y => Complex64::new(0.0, 1.0) * (e * a + e.conj() * b),
        Axis::Z => Complex64::new(0.5 * eig.s, 0.0),
    }
}

/// K̃^i_m(t): the kernels rotated back to the σ basis, σ̃₊(t) = Σ_i K̃^i σ_i.
pub fn kernel_k_tilde(i: Axis, t: f64, eig: &SectorEigens) -> Complex64 {
    match i {
        Axis::X => kernel_k(Axis::X, t, eig) * eig.c + kernel_k(Axis::Z, t, eig) * eig.s,
        Axis::Y => kernel_k(Axis::Y, t, eig),
        Axis::Z => kernel_k(Axis::X, t, eig) * -eig.s + kernel_k(Axis::Z, t, eig) * eig.c,
    }
}

/// K̃^{i±} = K̃^i ± K̃^{i*}.
pub fn kernel_k_tilde_pm(i: Axis, t: f64, eig: &SectorEigens) -> (Complex64, Complex64) {
    let k = kernel_k_tilde(i, t, eig);
    (k + k.conj(), k - k.conj())
}

/// Diagonalization of H_n − H_m for the spin-bath coherence between sectors n and m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEigens {
    pub n: i32,
    pub m: i32,
    pub theta: f64,
    pub gap: f64,
    pub e_plus: f64,
    pub e_minus: f64,
}

pub fn pair_eigens(en: &SectorEigens, em: &SectorEigens) -> PairEigens {
    let dc = en.eps * en.c - em.eps * em.c;
    let ds = en.eps * en.s - em.eps * em.s;
    let gap = dc.hypot(ds);
    let theta = if gap == 0.0 { 0.0 } else { ds.atan2(dc) };
    let shift = en.shift - em.shift;
    PairEigens {
        n: en.m,
        m: em.m,
        theta,
        gap,
        e_plus: shift + 0.5 * gap,
        e_minus: shift - 0.5 * gap,
    }
}

impl PairEigens {
    /// e^{i(H_n − H_m)t} on the TLS factor, including the spin-bath energy difference.
    pub fn phase_operator(&self, t: f64) -> Mat2 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let pp = (Mat2::identity() + Mat2::sigma_z() * c + Mat2::sigma_x() * s) * 0.5;
        let pm = Mat2::identity() - pp;
        pp * Complex64::from_polar(1.0, self.e_plus * t)
            + pm * Complex64::from_polar(1.0, self.e_minus * t)
    }
}

/// Spin-coherent state coefficients ⟨N/2, m|Ω̂⟩ for m = −N/2..N/2 (gauge angle zero).
pub fn spin_coherent_coeffs(theta: f64, phi: f64, n: u32) -> Result<Vec<Complex64>> {
    check_even(n)?;
    let h = (n / 2) as i32;
    let u = Complex64::from_polar((0.5 * theta).cos(), -0.5 * phi);
    let v = Complex64::from_polar((0.5 * theta).sin(), 0.5 * phi);
    Ok((-h..=h)
        .map(|m| {
            let (a, b) = (h + m, h - m);
            u.powi(a) * v.powi(b) * binomial(n, a as u32).sqrt()
        })
        .collect())
}

/// q_m = 2^{−N/2} √C(N, N/2+m).
pub fn q_coeffs(n: u32) -> Result<Vec<f64>> {
    check_even(n)?;
    let norm = 2f64.powf(-(n as f64) / 2.0);
    Ok((0..=n).map(|k| norm * binomial(n, k).sqrt()).collect())
}

/// Coefficients of |±x̂⟩ = Σ (±1)^m q_m |N/2, m⟩.
pub fn x_state_coeffs(sign: i32, n: u32) -> Result<Vec<f64>> {
    let h = (n / 2) as i32;
    Ok(q_coeffs(n)?
        .into_iter()
        .zip(-h..=h)
        .map(|(q, m)| {
            if sign < 0 && m.rem_euclid(2) == 1 {
                -q
            } else {
                q
            }
        })
        .collect())
}
