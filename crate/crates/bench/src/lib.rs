//! Parameter sets shared by the benchmarks.

use dualbath::{BathParams, Spectrum, SystemParams};

/// Steady-state and transient parameters with the spin bath at N spins.
pub fn relaxation(n: u32, gamma: f64) -> (SystemParams, Spectrum) {
    (
        SystemParams {
            epsilon: 1.0,
            j: 1.0,
            alpha: 1.0,
            gamma,
            n,
        },
        Spectrum::Cubic(BathParams::new(0.05, 0.02, 0.1, 2.0, 2.0)),
    )
}

/// Cold bath with strong spin–boson coupling, used for the spin-bath coherence.
pub fn coherence(n: u32, kappa1: f64, gamma: f64) -> (SystemParams, Spectrum) {
    (
        SystemParams {
            epsilon: 1.0,
            j: 0.1,
            alpha: 0.0,
            gamma,
            n,
        },
        Spectrum::Cubic(BathParams::new(kappa1, 0.0, 0.5, 1.0, 100.0)),
    )
}
