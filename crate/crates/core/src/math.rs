//! Small dense-vector helpers and `libm` wrappers so the crate stays `no_std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln C(k, v)` via log-gamma; exact enough for `k` in the thousands.
pub fn ln_binomial(k: usize, v: usize) -> f64 {
    debug_assert!(v <= k);
    if v == 0 || v == k {
        return 0.0;
    }
    ln_gamma(k as f64 + 1.0) - ln_gamma(v as f64 + 1.0) - ln_gamma((k - v) as f64 + 1.0)
}

pub fn binomial(k: usize, v: usize) -> f64 {
    // Small cases exactly, so tests against hand computed values are not at
    // the mercy of lgamma rounding.
    if k <= 60 {
        let v = v.min(k - v);
        let mut acc = 1u128;
        for i in 0..v {
            acc = acc * (k - i) as u128 / (i + 1) as u128;
        }
        return acc as f64;
    }
    libm::round(exp(ln_binomial(k, v)))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_match_pascal() {
        let mut row = [0u128; 71];
        row[0] = 1;
        for k in 1..=70usize {
            for v in (1..=k).rev() {
                row[v] += row[v - 1];
            }
            for v in 0..=k {
                let got = binomial(k, v);
                let want = row[v] as f64;
                assert!((got - want).abs() <= want * 1e-12, "C({k},{v})");
            }
        }
    }

    #[test]
    fn large_binomial_is_finite() {
        let c = binomial(1024, 512);
        assert!(c.is_finite() && c > 1e300);
    }
}
