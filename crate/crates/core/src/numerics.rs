//! Quadrature, root finding and summation helpers shared by the pricing and
//! simulation modules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Gauss–Hermite rule rescaled to integrate against the standard normal law.
///
/// `expect(f)` approximates `E[f(Z)]` for `Z ~ N(0,1)`; the weights sum to one.
#[derive(Debug, Clone)]
pub struct NormalQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalQuadrature {
    /// Builds an `n`-node rule by Newton iteration on the orthonormal Hermite
    /// recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(crate::error::invalid(
                "quadrature_nodes",
                "must be positive",
            ));
        }
        let (x, w) = gauss_hermite(n)?;
        let scale = 1.0 / std::f64::consts::PI.sqrt();
        Ok(Self {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v * scale).collect(),
        })
    }

    /// Shared, lazily built rule for `n` nodes.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<NormalQuadrature>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(q) = cache.lock().expect("quadrature cache poisoned").get(&n) {
            return Ok(q.clone());
        }
        let q = Arc::new(Self::new(n)?);
        cache
            .lock()
            .expect("quadrature cache poisoned")
            .insert(n, q.clone());
        Ok(q)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Z)]` under the rule.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| if w == 0.0 { 0.0 } else { w * f(z) })
            .collect();
        pairwise_sum(&terms)
    }
}

/// Nodes and weights for `∫ e^{-x²} f(x) dx` (physicists' convention).
fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    const MAXIT: usize = 200;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAXIT {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Quadrature(format!(
                "Gauss-Hermite node {i} of {n} did not converge"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if !diff.is_finite() {
        return Err(Error::Quadrature("non-finite integrand".into()));
    }
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson recursion limit reached on [{a}, {b}]"
        )));
    }
    Ok(
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
    )
}

/// Bisection for an increasing function `f` on `[lo, hi]`, stopping when the
/// bracket is narrower than `tol`.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let flo = f(lo);
    let fhi = f(hi);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::NotBracketed(format!(
            "f({lo}) = {flo}, f({hi}) = {fhi}"
        )));
    }
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pairwise summation with a fixed split order, so the result depends only on
/// the slice contents.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0, n };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n as f64 - 1.0);
        Self {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_rule_reproduces_gaussian_moments() {
        let q = NormalQuadrature::new(128).unwrap();
        assert_relative_eq!(q.expect(|_| 1.0), 1.0, epsilon = 1e-13);
        assert!(q.expect(|z| z).abs() < 1e-13);
        assert_relative_eq!(q.expect(|z| z * z), 1.0, epsilon = 1e-12);
        assert_relative_eq!(q.expect(|z| z.powi(4)), 3.0, epsilon = 1e-11);
        for a in [0.1, 0.3, 1.0, 2.0] {
            assert_relative_eq!(
                q.expect(|z| (a * z).exp()),
                (0.5 * a * a).exp(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn small_rules_are_exact_for_low_degree() {
        for n in [1usize, 2, 3, 5, 8] {
            let q = NormalQuadrature::new(n).unwrap();
            assert_relative_eq!(q.expect(|_| 1.0), 1.0, epsilon = 1e-13);
            if n >= 2 {
                assert_relative_eq!(q.expect(|z| z * z), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-11);
        let w = adaptive_simpson(&|x: f64| x.powf(-0.5), 1e-8, 1.0, 1e-10).unwrap();
        assert_relative_eq!(w, 2.0 - 2.0 * 1e-4, epsilon = 1e-8);
    }

    #[test]
    fn bisection_finds_root_and_rejects_bad_bracket() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), epsilon = 1e-13);
        assert!(matches!(
            bisect(|x| x + 10.0, 0.0, 1.0, 1e-6),
            Err(Error::NotBracketed(_))
        ));
    }

    #[test]
    fn pairwise_sum_is_order_fixed_and_accurate() {
        let xs: Vec<f64> = (0..10_000).map(|i| 0.1 + i as f64 * 1e-9).collect();
        let s = pairwise_sum(&xs);
        let exact = 1000.0 + 1e-9 * (9_999.0 * 10_000.0 / 2.0);
        assert_relative_eq!(s, exact, max_relative = 1e-14);
    }

    #[test]
    fn mean_se_matches_textbook() {
        let m = MeanSe::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m.mean, 2.5);
        assert_relative_eq!(m.se, (5.0f64 / 3.0 / 4.0).sqrt());
    }

    #[test]
    fn normal_cdf_values() {
        assert_relative_eq!(norm_cdf(0.0), 0.5);
        assert_relative_eq!(norm_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-12);
        assert_relative_eq!(
            norm_cdf(-8.0),
            6.220_960_574_271_78e-16,
            max_relative = 1e-9
        );
    }
}
