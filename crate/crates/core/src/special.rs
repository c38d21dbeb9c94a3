//! Special functions and exact combinatorics.

use num_complex::Complex64;

/// Complex trigamma function ψ'(z) for Re z > 0.
///
/// Upward recurrence until Re z ≥ 10, then the Bernoulli asymptotic series.
pub fn trigamma(z: Complex64) -> Complex64 {
    debug_assert!(z.re > 0.0, "trigamma needs Re z > 0, got {z}");
    let mut z = z;
    let mut acc = Complex64::new(0.0, 0.0);
    while z.re < 10.0 {
        acc += (z * z).inv();
        z += 1.0;
    }
    let w = z.inv();
    let w2 = w * w;
    // 1/z + 1/(2z²) + Σ B_{2k}/z^{2k+1}
    let series = w2
        * (1.0 / 6.0
            + w2 * (-1.0 / 30.0
                + w2 * (1.0 / 42.0
                    + w2 * (-1.0 / 30.0
                        + w2 * (5.0 / 66.0 + w2 * (-691.0 / 2730.0 + w2 * (7.0 / 6.0)))))));
    acc + w + 0.5 * w2 + w * series
}

/// Binomial coefficient C(n, k) as f64; exact integer arithmetic up to n = 60, log-sum beyond.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 60 {
        let mut c: u128 = 1;
        for i in 1..=k as u128 {
            c = c * (n as u128 - k as u128 + i) / i;
        }
        c as f64
    } else {
        ln_binomial(n, k).exp().round()
    }
}

/// ln C(n, k) by direct summation of log ratios.
pub fn ln_binomial(n: u32, k: u32) -> f64 {
    assert!(k <= n);
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn trigamma_by_sum(z: Complex64) -> Complex64 {
        // Σ_{k<K} 1/(z+k)² plus the Euler–Maclaurin tail at K.
        let k_max = 20_000;
        let mut s = Complex64::new(0.0, 0.0);
        for k in 0..k_max {
            let w = z + k as f64;
            s += (w * w).inv();
        }
        let w = z + k_max as f64;
        s + w.inv() + 0.5 * (w * w).inv() + (w * w * w).inv() / 6.0
    }

    #[test]
    fn trigamma_special_values() {
        assert_relative_eq!(
            trigamma(Complex64::new(1.0, 0.0)).re,
            PI * PI / 6.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            trigamma(Complex64::new(0.5, 0.0)).re,
            PI * PI / 2.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn trigamma_matches_series_off_axis() {
        for &(x, y) in &[
            (1.0, 0.3),
            (1.0, 7.5),
            (2.5, -40.0),
            (1.0005, 0.002),
            (12.0, 3.0),
        ] {
            let z = Complex64::new(x, y);
            let a = trigamma(z);
            let b = trigamma_by_sum(z);
            assert!((a - b).norm() < 1e-12, "z={z}: {a} vs {b}");
        }
    }

    #[test]
    fn trigamma_recurrence() {
        let z = Complex64::new(1.3, 2.2);
        let lhs = trigamma(z);
        let rhs = trigamma(z + 1.0) + (z * z).inv();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 5), 252.0);
        assert_eq!(binomial(10, 11), 0.0);
        assert_eq!(binomial(60, 30), 118264581564861424.0);
        assert_relative_eq!(
            binomial(80, 40),
            1.0750720873333618e23,
            max_relative = 1e-12
        );
        assert_relative_eq!(ln_binomial(10, 5), 252f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = KahanSum::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert_relative_eq!(s.value(), 1e-16, max_relative = 1e-12);
    }
}
