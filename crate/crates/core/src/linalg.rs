//! Dense 2×2 complex matrices for the TLS factor of sector operators.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Row-major 2×2 complex matrix in the (|1⟩, |1̄⟩) basis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn zero() -> Self {
        Mat2([[ZERO; 2]; 2])
    }

    pub fn identity() -> Self {
        Mat2::new(ONE, ZERO, ZERO, ONE)
    }

    pub fn sigma_x() -> Self {
        Mat2::new(ZERO, ONE, ONE, ZERO)
    }

    pub fn sigma_y() -> Self {
        Mat2::new(ZERO, -I, I, ZERO)
    }

    pub fn sigma_z() -> Self {
        Mat2::new(ONE, ZERO, ZERO, -ONE)
    }

    /// σ₊ = |1⟩⟨1̄|.
    pub fn sigma_plus() -> Self {
        Mat2::new(ZERO, ONE, ZERO, ZERO)
    }

    /// σ₋ = |1̄⟩⟨1|.
    pub fn sigma_minus() -> Self {
        Mat2::new(ZERO, ZERO, ONE, ZERO)
    }

    /// |1̄⟩⟨1̄|, the TLS down-state projector.
    pub fn down() -> Self {
        Mat2::new(ZERO, ZERO, ZERO, ONE)
    }

    /// |1⟩⟨1|.
    pub fn up() -> Self {
        Mat2::new(ONE, ZERO, ZERO, ZERO)
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Mat2::new(
            m[0][0].conj(),
            m[1][0].conj(),
            m[0][1].conj(),
            m[1][1].conj(),
        )
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let m = &self.0;
        Mat2::new(m[0][0] * c, m[0][1] * c, m[1][0] * c, m[1][1] * c)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Bloch components Tr(σ_i A) for i = x, y, z.
    pub fn bloch(&self) -> [Complex64; 3] {
        let m = &self.0;
        [
            m[1][0] + m[0][1],
            I * (m[0][1] - m[1][0]),
            m[0][0] - m[1][1],
        ]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2::new(
            a[0][0] + b[0][0],
            a[0][1] + b[0][1],
            a[1][0] + b[1][0],
            a[1][1] + b[1][1],
        )
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2::new(
            a[0][0] - b[0][0],
            a[0][1] - b[0][1],
            a[1][0] - b[1][0],
            a[1][1] - b[1][1],
        )
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self * -1.0
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, c: f64) -> Mat2 {
        let m = &self.0;
        Mat2::new(m[0][0] * c, m[0][1] * c, m[1][0] * c, m[1][1] * c)
    }
}

impl Mul<Complex64> for Mat2 {
    type Output = Mat2;
    fn mul(self, c: Complex64) -> Mat2 {
        self.scale(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_algebra() {
        let (x, y, z) = (Mat2::sigma_x(), Mat2::sigma_y(), Mat2::sigma_z());
        assert_eq!(x * y, z.scale(I));
        assert_eq!(x * x, Mat2::identity());
        assert_eq!(Mat2::sigma_plus() + Mat2::sigma_minus(), x);
        assert_eq!(Mat2::sigma_plus().adjoint(), Mat2::sigma_minus());
    }

    #[test]
    fn bloch_components() {
        let rho = (Mat2::identity()
            + Mat2::sigma_x() * 0.3
            + Mat2::sigma_y() * -0.2
            + Mat2::sigma_z() * 0.5)
            * 0.5;
        let b = rho.bloch();
        assert!((b[0] - 0.3).norm() < 1e-15);
        assert!((b[1] + 0.2).norm() < 1e-15);
        assert!((b[2] - 0.5).norm() < 1e-15);
    }
}
