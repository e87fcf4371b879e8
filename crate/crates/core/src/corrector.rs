//! First corrector: band half-width `ξ̂`, loss rate `h` and the piecewise
//! quartic profile `ϖ` of the fast variable `ξ = (x − θ)/ε`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frictionless::{FrictionlessPoint, FrictionlessSolution, LossModel};
use crate::market::{bs_functionals, MarketParams, Payoff};

/// Constant used for the exponential loss rate `h`.
///
/// `Section6` is the value consistent with the corrector equation,
/// `σ²π_pp ξ̂²/(2π_p²)`, i.e. `(9/32)^{1/3} σ² η^{1/3} |δ|^{4/3}`. `Eq45` uses the
/// printed constant `(3/16)^{2/3}`, half as large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HConvention {
    #[default]
    Section6,
    Eq45,
}

impl HConvention {
    /// Multiplier `c_h` in `h = c_h σ² η^{1/3} |δ|^{4/3}`.
    pub fn exponential_constant(self) -> f64 {
        match self {
            HConvention::Section6 => (9.0f64 / 32.0).cbrt(),
            HConvention::Eq45 => (3.0f64 / 16.0).powf(2.0 / 3.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HConvention::Section6 => "section6",
            HConvention::Eq45 => "eq45",
        }
    }
}

/// Rescaled stock displacement `ξ = (x − θ)/ε`.
pub fn fast_variable(x: f64, theta: f64, eps: f64) -> f64 {
    (x - theta) / eps
}

/// Solution of the first corrector equation at a frozen point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSolution {
    pub xi_hat: f64,
    pub h: f64,
    /// Quartic coefficient inside the band, `−1/(8ξ̂³)`.
    pub k4: f64,
    /// Quadratic coefficient inside the band, `3/(4ξ̂)`.
    pub k2: f64,
    /// Offset of the linear branches, `−3ξ̂/8`.
    pub k0: f64,
}

impl CorrectorSolution {
    pub(crate) fn from_xi_hat(xi_hat: f64, h: f64) -> Self {
        Self {
            xi_hat,
            h,
            k4: -1.0 / (8.0 * xi_hat * xi_hat * xi_hat),
            k2: 3.0 / (4.0 * xi_hat),
            k0: -3.0 * xi_hat / 8.0,
        }
    }

    /// Profile `ϖ(ξ)`.
    pub fn varpi(&self, xi: f64) -> f64 {
        if xi.abs() < self.xi_hat {
            let x2 = xi * xi;
            (self.k4 * x2 + self.k2) * x2
        } else {
            xi.abs() + self.k0
        }
    }

    /// `ϖ_ξ`, equal to `±1` outside the band.
    pub fn varpi_xi(&self, xi: f64) -> f64 {
        if xi.abs() < self.xi_hat {
            (4.0 * self.k4 * xi * xi + 2.0 * self.k2) * xi
        } else {
            xi.signum()
        }
    }

    /// `ϖ_ξξ`, zero outside the band.
    pub fn varpi_xixi(&self, xi: f64) -> f64 {
        if xi.abs() < self.xi_hat {
            12.0 * self.k4 * xi * xi + 2.0 * self.k2
        } else {
            0.0
        }
    }

    /// `∂ϖ/∂ξ̂` at fixed `ξ`.
    pub fn varpi_dxihat(&self, xi: f64) -> f64 {
        if xi.abs() < self.xi_hat {
            let r = xi / self.xi_hat;
            let r2 = r * r;
            0.375 * r2 * r2 - 0.75 * r2
        } else {
            -0.375
        }
    }

    /// Residual `−½(π_pp/π_p²)σ²ξ² + h − ½σ²δ²ϖ_ξξ(ξ)` of the elliptic branch.
    pub fn residual(&self, xi: f64, curvature: f64, sigma: f64, delta: f64) -> f64 {
        let s2 = sigma * sigma;
        -0.5 * curvature * s2 * xi * xi + self.h - 0.5 * s2 * delta * delta * self.varpi_xixi(xi)
    }
}

/// `ξ̂ = ((3/2)δ²π_p²/π_pp)^{1/3}` and `h = σ²π_pp ξ̂²/(2π_p²)` with the quartic
/// profile.
pub fn solve_first_corrector(
    pi_p: f64,
    pi_pp: f64,
    delta: f64,
    sigma: f64,
) -> Result<CorrectorSolution> {
    let finite = pi_p.is_finite() && pi_pp.is_finite() && delta.is_finite();
    if !(finite && pi_p > 0.0 && pi_pp > 0.0 && delta != 0.0 && sigma > 0.0) {
        return Err(Error::Degenerate(format!(
            "need pi_p > 0, pi_pp > 0, delta != 0, sigma > 0; got {pi_p}, {pi_pp}, {delta}, {sigma}"
        )));
    }
    let xi_hat = (1.5 * delta * delta * pi_p * pi_p / pi_pp).cbrt();
    let h = sigma * sigma * pi_pp * xi_hat * xi_hat / (2.0 * pi_p * pi_p);
    Ok(CorrectorSolution::from_xi_hat(xi_hat, h))
}

/// Unit-coefficient corrector (`δ = σ = 1`, `π_p²/π_pp = 1`), whose band is
/// `ξ̌ = (3/2)^{1/3}`.
pub fn unit_corrector() -> CorrectorSolution {
    let xi = 1.5f64.cbrt();
    CorrectorSolution::from_xi_hat(xi, 0.5 * xi * xi)
}

/// Exponential-loss `(ξ̂, h)` at `(t, s)`; `h` follows `convention`.
pub fn corrector_exponential(
    t: f64,
    s: f64,
    eta: f64,
    market: &MarketParams,
    payoff: &Payoff,
    convention: HConvention,
) -> Result<(f64, f64)> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    let g = bs_functionals(payoff, market, t, s, 2)?;
    let delta = s * s * g.dss - market.lambda / (market.sigma * eta);
    exponential_from_delta(delta, eta, market.sigma, convention)
}

/// `(ξ̂, h)` for the exponential loss from `δ` directly.
pub fn exponential_from_delta(
    delta: f64,
    eta: f64,
    sigma: f64,
    convention: HConvention,
) -> Result<(f64, f64)> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::Degenerate(format!("delta = {delta}")));
    }
    let d = delta.abs();
    let xi_hat = (1.5 / eta).cbrt() * d.powf(2.0 / 3.0);
    let h = convention.exponential_constant() * sigma * sigma * eta.cbrt() * d.powf(4.0 / 3.0);
    Ok((xi_hat, h))
}

/// Power-loss `(ξ̂, h)` at `(t, p)`.
pub fn corrector_power(
    t: f64,
    p: f64,
    beta: f64,
    kappa: f64,
    market: &MarketParams,
) -> Result<(f64, f64)> {
    if !(p < 0.0) {
        return Err(Error::Domain(format!("threshold p = {p} must be negative")));
    }
    let sol = FrictionlessSolution::new(*market, Payoff::zero(), LossModel::power(beta, kappa)?)?;
    let pt = sol.eval(t, 1.0, p)?;
    let c = solve_first_corrector(pt.pi_p, pt.pi_pp, pt.delta, market.sigma)?;
    Ok((c.xi_hat, c.h))
}

/// Corrector at a frictionless point. For exponential losses `h` follows
/// `convention`; other losses always use the corrector-equation value.
pub fn corrector_at(
    pt: &FrictionlessPoint,
    sigma: f64,
    exponential: bool,
    convention: HConvention,
) -> Result<CorrectorSolution> {
    let mut c = solve_first_corrector(pt.pi_p, pt.pi_pp, pt.delta, sigma)?;
    if exponential && convention == HConvention::Eq45 {
        c.h *=
            HConvention::Eq45.exponential_constant() / HConvention::Section6.exponential_constant();
    }
    Ok(c)
}
