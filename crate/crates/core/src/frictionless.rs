//! Loss functions and the frictionless solution: the price `π`, the target
//! holding `θ`, the threshold volatility `â` and the displacement coefficient
//! `δ`.
//!
//! Exponential and power losses have closed forms. Any loss can also be priced
//! through the duality formula, which finds the multiplier `q̂` solving
//! `E[I(q̂ Q_T)] = p` and integrates `Φ∘I(q̂ Q_T)` under the risk-neutral law.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{bs_functionals, BsGreeks, MarketParams, Payoff};
use crate::numerics::NormalQuadrature;

/// User-supplied loss function together with its duality companions.
pub trait CustomLoss: Send + Sync + Debug {
    /// Loss `Ψ(r)`, concave, non-decreasing and non-positive.
    fn psi(&self, r: f64) -> f64;
    /// Derivative `Ψ'(r)`.
    fn psi_prime(&self, r: f64) -> f64;
    /// Inverse `Φ = Ψ⁻¹` on the image of `Ψ`.
    fn phi(&self, p: f64) -> f64;
    /// `Φ'(p)`.
    fn phi_prime(&self, p: f64) -> f64;
    /// `I = (Φ')⁻¹`.
    fn inverse_marginal(&self, q: f64) -> f64;
    /// Open interval of admissible thresholds.
    fn image(&self) -> (f64, f64);
}

#[derive(Debug, Clone)]
pub enum LossKind {
    /// `Ψ(r) = −exp(−ηr)`.
    Exponential {
        eta: f64,
    },
    /// `Ψ(r) = −(r+κ)^{−β}` for `r > −κ`.
    Power {
        beta: f64,
        kappa: f64,
    },
    Custom(Arc<dyn CustomLoss>),
}

/// Loss model `Ψ` with `Φ`, `Φ'` and `I`.
#[derive(Debug, Clone)]
pub struct LossModel {
    pub kind: LossKind,
}

impl LossModel {
    pub fn exponential(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        Ok(Self {
            kind: LossKind::Exponential { eta },
        })
    }

    pub fn power(beta: f64, kappa: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta", "must be positive"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", "must be positive"));
        }
        Ok(Self {
            kind: LossKind::Power { beta, kappa },
        })
    }

    pub fn custom(loss: Arc<dyn CustomLoss>) -> Self {
        Self {
            kind: LossKind::Custom(loss),
        }
    }

    pub fn psi(&self, r: f64) -> f64 {
        match &self.kind {
            LossKind::Exponential { eta } => -(-eta * r).exp(),
            LossKind::Power { beta, kappa } => {
                if r + kappa > 0.0 {
                    -(r + kappa).powf(-beta)
                } else {
                    f64::NEG_INFINITY
                }
            }
            LossKind::Custom(c) => c.psi(r),
        }
    }

    pub fn psi_prime(&self, r: f64) -> f64 {
        match &self.kind {
            LossKind::Exponential { eta } => eta * (-eta * r).exp(),
            LossKind::Power { beta, kappa } => {
                if r + kappa > 0.0 {
                    beta * (r + kappa).powf(-beta - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            LossKind::Custom(c) => c.psi_prime(r),
        }
    }

    pub fn phi(&self, p: f64) -> f64 {
        match &self.kind {
            LossKind::Exponential { eta } => -(-p).ln() / eta,
            LossKind::Power { beta, kappa } => (-p).powf(-1.0 / beta) - kappa,
            LossKind::Custom(c) => c.phi(p),
        }
    }

    pub fn phi_prime(&self, p: f64) -> f64 {
        match &self.kind {
            LossKind::Exponential { eta } => -1.0 / (eta * p),
            LossKind::Power { beta, .. } => (-p).powf(-1.0 / beta - 1.0) / beta,
            LossKind::Custom(c) => c.phi_prime(p),
        }
    }

    /// `I(q)`, the inverse of `Φ'`; increasing in `q`.
    pub fn inverse_marginal(&self, q: f64) -> f64 {
        match &self.kind {
            LossKind::Exponential { eta } => -1.0 / (eta * q),
            LossKind::Power { beta, .. } => -(beta * q).powf(-beta / (1.0 + beta)),
            LossKind::Custom(c) => c.inverse_marginal(q),
        }
    }

    /// Image of `Ψ`, the open interval of admissible thresholds.
    pub fn image(&self) -> (f64, f64) {
        match &self.kind {
            LossKind::Exponential { .. } | LossKind::Power { .. } => (f64::NEG_INFINITY, 0.0),
            LossKind::Custom(c) => c.image(),
        }
    }

    pub fn check_threshold(&self, p: f64) -> Result<()> {
        let (lo, hi) = self.image();
        if p > lo && p < hi && p.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "threshold p = {p} outside the image ({lo}, {hi})"
            )))
        }
    }

    pub fn eta(&self) -> Option<f64> {
        match self.kind {
            LossKind::Exponential { eta } => Some(eta),
            _ => None,
        }
    }

    pub fn power_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            LossKind::Power { beta, kappa } => Some((beta, kappa)),
            _ => None,
        }
    }
}

/// `π = π̄(t,s) − λ²(T−t)/(2η) − ln(−p)/η` for the exponential loss.
pub fn price_exponential(
    t: f64,
    s: f64,
    p: f64,
    eta: f64,
    market: &MarketParams,
    payoff: &Payoff,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    if !(p < 0.0) {
        return Err(Error::Domain(format!("threshold p = {p} must be negative")));
    }
    let bar = bs_functionals(payoff, market, t, s, 0)?.value;
    Ok(bar + exponential_threshold_part(t, p, eta, market))
}

fn exponential_threshold_part(t: f64, p: f64, eta: f64, market: &MarketParams) -> f64 {
    let tau = market.horizon - t;
    -market.lambda * market.lambda * tau / (2.0 * eta) - (-p).ln() / eta
}

/// `m(t) = exp(−λ²(T−t)/(2(1+β)))`.
pub fn power_m(t: f64, beta: f64, market: &MarketParams) -> f64 {
    let tau = market.horizon - t;
    (-market.lambda * market.lambda * tau / (2.0 * (1.0 + beta))).exp()
}

/// Power-loss price `π = −κ + (−p)^{−1/β} m(t)`, returned with `m(t)`.
pub fn price_power(
    t: f64,
    p: f64,
    beta: f64,
    kappa: f64,
    market: &MarketParams,
    payoff: &Payoff,
) -> Result<(f64, f64)> {
    if !payoff.is_zero() {
        return Err(invalid("payoff", "the power loss requires the zero payoff"));
    }
    if !(p < 0.0) {
        return Err(Error::Domain(format!("threshold p = {p} must be negative")));
    }
    if t > market.horizon {
        return Err(Error::Domain(format!("t = {t} is after T")));
    }
    let m = power_m(t, beta, market);
    Ok((-kappa + (-p).powf(-1.0 / beta) * m, m))
}

/// Threshold part of the duality solution at `(t, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityPoint {
    /// Multiplier `q̂`, equal to `π_p`.
    pub q_hat: f64,
    /// `E^Q[Φ∘I(q̂ Q_T)]`.
    pub value: f64,
    /// `π_pp = 1 / E[Q_T I'(q̂ Q_T)]`.
    pub pi_pp: f64,
}

/// Solves `E[I(q Q_T)] = p` and evaluates the threshold part of the price.
pub fn duality_point(
    t: f64,
    p: f64,
    loss: &LossModel,
    market: &MarketParams,
    quad: &NormalQuadrature,
) -> Result<DualityPoint> {
    loss.check_threshold(p)?;
    if t > market.horizon {
        return Err(Error::Domain(format!("t = {t} is after T")));
    }
    let tau = (market.horizon - t).max(0.0);
    let lam = market.lambda;
    let qs: Vec<f64> = quad
        .nodes
        .iter()
        .map(|z| (0.5 * lam * lam * tau + lam * tau.sqrt() * z).exp())
        .collect();
    let mean_i = |q: f64| -> f64 {
        let terms: Vec<f64> = qs
            .iter()
            .zip(&quad.weights)
            .map(|(qt, w)| w * loss.inverse_marginal(q * qt))
            .collect();
        crate::numerics::pairwise_sum(&terms)
    };
    let f = |lq: f64| mean_i(lq.exp()) - p;
    let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
    let mut grown = 0;
    while !(f(lo) < 0.0) {
        lo -= std::f64::consts::LN_2 * (1 << grown.min(10)) as f64;
        grown += 1;
        if grown > 200 || !lo.is_finite() {
            return Err(Error::NotBracketed(format!(
                "no lower multiplier for p = {p}"
            )));
        }
    }
    grown = 0;
    while !(f(hi) > 0.0) {
        hi += std::f64::consts::LN_2 * (1 << grown.min(10)) as f64;
        grown += 1;
        if grown > 200 || !hi.is_finite() {
            return Err(Error::NotBracketed(format!(
                "no upper multiplier for p = {p}"
            )));
        }
    }
    for _ in 0..300 {
        if (hi - lo) <= 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q_hat = (0.5 * (lo + hi)).exp();
    let mut vals = Vec::with_capacity(qs.len());
    let mut slopes = Vec::with_capacity(qs.len());
    for (qt, w) in qs.iter().zip(&quad.weights) {
        let y = q_hat * qt;
        vals.push(w * loss.phi(loss.inverse_marginal(y)) / qt);
        let h = 1e-5 * y;
        let di = (loss.inverse_marginal(y + h) - loss.inverse_marginal(y - h)) / (2.0 * h);
        slopes.push(w * qt * di);
    }
    let value = crate::numerics::pairwise_sum(&vals);
    let slope = crate::numerics::pairwise_sum(&slopes);
    if !(value.is_finite() && slope > 0.0) {
        return Err(Error::Quadrature(format!(
            "duality integrals are not finite at t = {t}, p = {p}"
        )));
    }
    Ok(DualityPoint {
        q_hat,
        value,
        pi_pp: 1.0 / slope,
    })
}

/// Duality price `E^Q[g(S_T)] + E^Q[Φ∘I(q̂ Q_T)]` with `nodes` Gauss–Hermite
/// points.
pub fn price_duality(
    t: f64,
    s: f64,
    p: f64,
    loss: &LossModel,
    market: &MarketParams,
    payoff: &Payoff,
    nodes: usize,
) -> Result<f64> {
    let quad = NormalQuadrature::cached(nodes)?;
    let d = duality_point(t, p, loss, market, &quad)?;
    Ok(bs_functionals(payoff, market, t, s, 0)?.value + d.value)
}

/// How the frictionless quantities are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingPath {
    ClosedForm,
    Duality,
}

/// All frictionless quantities at one point `ζ = (t, s, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrictionlessPoint {
    pub t: f64,
    pub s: f64,
    pub p: f64,
    pub pi: f64,
    pub pi_s: f64,
    pub pi_ss: f64,
    pub pi_sss: f64,
    pub pi_p: f64,
    pub pi_pp: f64,
    pub pi_sp: f64,
    pub theta: f64,
    pub theta_s: f64,
    pub theta_p: f64,
    pub theta_t: f64,
    pub hat_a: f64,
    pub delta: f64,
}

impl FrictionlessPoint {
    /// `θ − sπ_s − π_p â/σ`, zero for a consistent solution.
    pub fn relation_residual(&self, sigma: f64) -> f64 {
        self.theta - self.s * self.pi_s - self.pi_p * self.hat_a / sigma
    }

    /// `π_pp / π_p²`.
    pub fn curvature_ratio(&self) -> f64 {
        self.pi_pp / (self.pi_p * self.pi_p)
    }
}

/// `δ = sθ_s − θ + (θ_p/π_p)(θ − sπ_s)`.
pub fn delta_generic(
    s: f64,
    theta: f64,
    theta_s: f64,
    theta_p: f64,
    pi_p: f64,
    pi_s: f64,
) -> Result<f64> {
    if pi_p == 0.0 {
        return Err(Error::Degenerate("pi_p = 0".into()));
    }
    Ok(s * theta_s - theta + theta_p / pi_p * (theta - s * pi_s))
}

/// `â = (λ π_p − σ s π_ps) / π_pp`.
pub fn hat_a_generic(
    lambda: f64,
    sigma: f64,
    s: f64,
    pi_p: f64,
    pi_ps: f64,
    pi_pp: f64,
) -> Result<f64> {
    if pi_pp == 0.0 {
        return Err(Error::Degenerate("pi_pp = 0".into()));
    }
    Ok((lambda * pi_p - sigma * s * pi_ps) / pi_pp)
}

/// Frictionless solution for a market, payoff and loss.
#[derive(Debug, Clone)]
pub struct FrictionlessSolution {
    pub market: MarketParams,
    pub payoff: Payoff,
    pub loss: LossModel,
    pub path: PricingPath,
    quad: Arc<NormalQuadrature>,
}

impl FrictionlessSolution {
    /// Closed forms for exponential and power losses, duality otherwise.
    pub fn new(market: MarketParams, payoff: Payoff, loss: LossModel) -> Result<Self> {
        if loss.power_params().is_some() && !payoff.is_zero() {
            return Err(invalid("payoff", "the power loss requires the zero payoff"));
        }
        let path = match loss.kind {
            LossKind::Custom(_) => PricingPath::Duality,
            _ => PricingPath::ClosedForm,
        };
        Ok(Self {
            market,
            payoff,
            loss,
            path,
            quad: NormalQuadrature::cached(128)?,
        })
    }

    /// Forces the duality path; closed forms are unavailable for custom losses.
    pub fn with_path(mut self, path: PricingPath) -> Result<Self> {
        if path == PricingPath::ClosedForm && matches!(self.loss.kind, LossKind::Custom(_)) {
            return Err(invalid("path", "custom losses have no closed form"));
        }
        self.path = path;
        Ok(self)
    }

    pub fn with_quadrature_nodes(mut self, n: usize) -> Result<Self> {
        self.quad = NormalQuadrature::cached(n)?;
        Ok(self)
    }

    fn check(&self, t: f64, s: f64, p: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.market.horizon) {
            return Err(Error::Domain(format!("t = {t} outside [0, T]")));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("spot s = {s} must be positive")));
        }
        self.loss.check_threshold(p)
    }

    /// Price `π(t, s, p)`.
    pub fn price(&self, t: f64, s: f64, p: f64) -> Result<f64> {
        self.check(t, s, p)?;
        match (self.path, &self.loss.kind) {
            (PricingPath::ClosedForm, LossKind::Exponential { eta }) => {
                price_exponential(t, s, p, *eta, &self.market, &self.payoff)
            }
            (PricingPath::ClosedForm, LossKind::Power { beta, kappa }) => {
                Ok(price_power(t, p, *beta, *kappa, &self.market, &self.payoff)?.0)
            }
            _ => {
                let d = duality_point(t, p, &self.loss, &self.market, &self.quad)?;
                Ok(bs_functionals(&self.payoff, &self.market, t, s, 0)?.value + d.value)
            }
        }
    }

    /// `v = π − x`.
    pub fn v(&self, t: f64, s: f64, p: f64, x: f64) -> Result<f64> {
        Ok(self.price(t, s, p)? - x)
    }

    pub fn theta(&self, t: f64, s: f64, p: f64) -> Result<f64> {
        Ok(self.eval(t, s, p)?.theta)
    }

    pub fn hat_a(&self, t: f64, s: f64, p: f64) -> Result<f64> {
        Ok(self.eval(t, s, p)?.hat_a)
    }

    pub fn delta_coeff(&self, t: f64, s: f64, p: f64) -> Result<f64> {
        Ok(self.eval(t, s, p)?.delta)
    }

    /// Every frictionless quantity at `(t, s, p)`.
    pub fn eval(&self, t: f64, s: f64, p: f64) -> Result<FrictionlessPoint> {
        self.check(t, s, p)?;
        let bar = bs_functionals(&self.payoff, &self.market, t, s, 3)?;
        match (self.path, &self.loss.kind) {
            (PricingPath::ClosedForm, LossKind::Exponential { eta }) => {
                Ok(self.exponential_point(t, s, p, *eta, bar))
            }
            (PricingPath::ClosedForm, LossKind::Power { beta, kappa }) => {
                Ok(self.power_point(t, s, p, *beta, *kappa))
            }
            _ => self.duality_eval(t, s, p, bar),
        }
    }

    fn exponential_point(
        &self,
        t: f64,
        s: f64,
        p: f64,
        eta: f64,
        bar: BsGreeks,
    ) -> FrictionlessPoint {
        let MarketParams { lambda, sigma, .. } = self.market;
        let pi_p = -1.0 / (eta * p);
        let pi_pp = 1.0 / (eta * p * p);
        let hat_a = -lambda * p;
        let theta = s * bar.ds + lambda / (sigma * eta);
        let theta_s = bar.ds + s * bar.dss;
        let theta_t = -sigma * sigma * s * s * bar.dss - 0.5 * sigma * sigma * s * s * s * bar.dsss;
        FrictionlessPoint {
            t,
            s,
            p,
            pi: bar.value + exponential_threshold_part(t, p, eta, &self.market),
            pi_s: bar.ds,
            pi_ss: bar.dss,
            pi_sss: bar.dsss,
            pi_p,
            pi_pp,
            pi_sp: 0.0,
            theta,
            theta_s,
            theta_p: 0.0,
            theta_t,
            hat_a,
            delta: s * s * bar.dss - lambda / (sigma * eta),
        }
    }

    fn power_point(&self, t: f64, s: f64, p: f64, beta: f64, kappa: f64) -> FrictionlessPoint {
        let MarketParams { lambda, sigma, .. } = self.market;
        let c = 1.0 / beta;
        let m = power_m(t, beta, &self.market);
        let q = -p;
        let scale = q.powf(-c);
        let theta = lambda * m * scale / (sigma * (1.0 + beta));
        FrictionlessPoint {
            t,
            s,
            p,
            pi: -kappa + scale * m,
            pi_s: 0.0,
            pi_ss: 0.0,
            pi_sss: 0.0,
            pi_p: c * scale / q * m,
            pi_pp: c * (c + 1.0) * scale / (q * q) * m,
            pi_sp: 0.0,
            theta,
            theta_s: 0.0,
            theta_p: c * theta / q,
            theta_t: theta * lambda * lambda / (2.0 * (1.0 + beta)),
            hat_a: lambda * beta * q / (1.0 + beta),
            delta: theta * (lambda / (sigma * (1.0 + beta)) - 1.0),
        }
    }

    /// Threshold part of `θ`: `λ π_p² / (σ π_pp)`.
    fn duality_theta_part(&self, t: f64, p: f64) -> Result<f64> {
        let d = duality_point(t, p, &self.loss, &self.market, &self.quad)?;
        Ok(self.market.lambda * d.q_hat * d.q_hat / (self.market.sigma * d.pi_pp))
    }

    fn duality_eval(&self, t: f64, s: f64, p: f64, bar: BsGreeks) -> Result<FrictionlessPoint> {
        let MarketParams {
            lambda,
            sigma,
            horizon,
        } = self.market;
        let d = duality_point(t, p, &self.loss, &self.market, &self.quad)?;
        let pi_p = d.q_hat;
        let pi_pp = d.pi_pp;
        let hat_a = hat_a_generic(lambda, sigma, s, pi_p, 0.0, pi_pp)?;
        let theta_hat = lambda * pi_p * pi_p / (sigma * pi_pp);
        let theta = s * bar.ds + theta_hat;

        let hp = 1e-4 * p.abs();
        let (lo, hi) = self.loss.image();
        let (pu, pd) = ((p + hp).min(0.5 * (p + hi)), (p - hp).max(0.5 * (p + lo)));
        let theta_p =
            (self.duality_theta_part(t, pu)? - self.duality_theta_part(t, pd)?) / (pu - pd);

        let tau = horizon - t;
        let ht = 1e-4 * tau.max(1e-8);
        let (tu, td) = ((t + ht).min(horizon), (t - ht).max(0.0));
        let theta_t_hat = if tu > td {
            (self.duality_theta_part(tu, p)? - self.duality_theta_part(td, p)?) / (tu - td)
        } else {
            0.0
        };
        let theta_s = bar.ds + s * bar.dss;
        let theta_t = -sigma * sigma * s * s * bar.dss - 0.5 * sigma * sigma * s * s * s * bar.dsss
            + theta_t_hat;
        let delta = delta_generic(s, theta, theta_s, theta_p, pi_p, bar.ds)?;
        Ok(FrictionlessPoint {
            t,
            s,
            p,
            pi: bar.value + d.value,
            pi_s: bar.ds,
            pi_ss: bar.dss,
            pi_sss: bar.dsss,
            pi_p,
            pi_pp,
            pi_sp: 0.0,
            theta,
            theta_s,
            theta_p,
            theta_t,
            hat_a,
            delta,
        })
    }
}
