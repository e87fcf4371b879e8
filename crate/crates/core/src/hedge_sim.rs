//! Simulation of the near-optimal band strategies under proportional costs.
//!
//! The stock position is kept inside `[θ − εξ, θ + εξ]` by reflection at the
//! edges; every transfer is charged `ε³` per unit of currency. The threshold
//! martingale `P^ε` is stepped alongside, and the terminal wealth is liquidated
//! and scored with the loss function.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corrector::{
    corrector_at, exponential_from_delta, unit_corrector, CorrectorSolution, HConvention,
};
use crate::error::{invalid, Error, Result};
use crate::frictionless::{FrictionlessPoint, FrictionlessSolution, LossKind};
use crate::market::{RngSpec, TimeGrid};
use crate::second_corrector::USurface;

/// Threshold values are kept strictly below this level.
const P_CEILING: f64 = -1e-12;

/// Expansion parameter `ε ∈ (0, 1)`; the proportional cost is `ε³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Epsilon(f64);

impl Epsilon {
    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps < 1.0 {
            Ok(Self(eps))
        } else {
            Err(invalid("eps", "must lie in (0, 1)"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Proportional cost `ε³`.
    pub fn cost(self) -> f64 {
        self.0 * self.0 * self.0
    }
}

impl TryFrom<f64> for Epsilon {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Epsilon> for f64 {
    fn from(e: Epsilon) -> f64 {
        e.0
    }
}

/// Liquidation value `ℓ^ε(x) = x − ε³|x|`.
pub fn liquidation_value(x: f64, eps: Epsilon) -> f64 {
    x - eps.cost() * x.abs()
}

/// Clamps `x` into `[θ − w, θ + w]` and pays for the transfer from cash.
/// Returns `(x′, y′)` with `y′ = y + ℓ^ε(x − x′)`.
pub fn project_to_band(x: f64, y: f64, theta: f64, half_width: f64, eps: Epsilon) -> (f64, f64) {
    let x_new = x.clamp(theta - half_width, theta + half_width);
    (x_new, y + liquidation_value(x - x_new, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Exponential,
    Power,
}

/// Rule fixing the initial capital and the stopping construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapitalRule {
    /// `y₀ = v + ε⁴ϖ̌ + ε²(c + 1)` with the unit band.
    Prop61,
    /// `y₀ = v + ε²û + ε⁴ϖ + ε³(c + 1)` with the model band.
    Prop62,
    /// `y₀ = v + ε²û + ε⁴ϖ + 3ε^{5/2} + cε³` with the model band.
    Power,
}

/// Which half-width the band uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSource {
    /// Constant `ξ̌ = (3/2)^{1/3}`.
    Check,
    /// Model band `ξ̂(t, s, p)`.
    Hat,
}

/// Stop level. For the power model `Auto` is the liquidation trigger
/// `ε^{5/2} − κ` and `Fixed(k)` stops at wealth `−k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum StopLevel {
    /// `k = −η⁻¹ ln(p₀(e^{−ηε^m} − 1)/c) + 1`, `m = 2` for `Prop61`, `3` for `Prop62`.
    Auto,
    Fixed(f64),
    Never,
}

/// Volatility used for the threshold martingale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdVol {
    /// `â^ε`, including the corrector terms.
    #[default]
    Full,
    /// Frictionless `â`.
    Frictionless,
}

/// Near-optimal strategy family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub model: ModelTag,
    pub capital_rule: CapitalRule,
    pub band: BandSource,
    /// Cushion `c ≥ 0` standing in for the unknown admissibility constant.
    pub cushion: f64,
    pub stop: StopLevel,
    /// Floor on `|δ|` for the model band.
    pub delta_min: f64,
    pub threshold_vol: ThresholdVol,
    /// Charge no cost on transfers (band kept).
    pub zero_cost: bool,
    /// Discrete frictionless strategy: no band, no cost, no stop.
    pub baseline: bool,
}

impl StrategySpec {
    /// Default pairing for a capital rule.
    pub fn for_rule(rule: CapitalRule, cushion: f64) -> Self {
        let (model, band) = match rule {
            CapitalRule::Prop61 => (ModelTag::Exponential, BandSource::Check),
            CapitalRule::Prop62 => (ModelTag::Exponential, BandSource::Hat),
            CapitalRule::Power => (ModelTag::Power, BandSource::Hat),
        };
        Self {
            model,
            capital_rule: rule,
            band,
            cushion,
            stop: StopLevel::Auto,
            delta_min: 1e-4,
            threshold_vol: ThresholdVol::Full,
            zero_cost: false,
            baseline: false,
        }
    }

    /// The frictionless counterpart of `self`, sharing its model tag.
    pub fn as_baseline(mut self) -> Self {
        self.baseline = true;
        self.stop = StopLevel::Never;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cushion >= 0.0 && self.cushion.is_finite()) {
            return Err(invalid("cushion", "must be finite and non-negative"));
        }
        if !(self.delta_min > 0.0) {
            return Err(invalid("delta_min", "must be positive"));
        }
        let ok = matches!(
            (self.model, self.capital_rule, self.band),
            (
                ModelTag::Exponential,
                CapitalRule::Prop61,
                BandSource::Check
            ) | (ModelTag::Exponential, CapitalRule::Prop62, BandSource::Hat)
                | (ModelTag::Power, CapitalRule::Power, BandSource::Hat)
        );
        if !ok {
            return Err(invalid(
                "strategy",
                "prop61 pairs with the check band, prop62 and power with the hat band",
            ));
        }
        if let StopLevel::Fixed(k) = self.stop {
            if k.is_nan() {
                return Err(invalid("stop", "level is NaN"));
            }
        }
        Ok(())
    }
}

/// Why a path stopped trading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Exponential wealth floor; positions frozen to maturity.
    WealthFloor,
    /// Power liquidation; cash held to maturity.
    Liquidated,
}

/// State of a simulated portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub p: f64,
    pub l_plus: f64,
    pub l_minus: f64,
    pub stopped: Option<StopReason>,
}

impl PortfolioState {
    /// `Y + ℓ^ε(X)`.
    pub fn liquidation_wealth(&self, eps: Epsilon) -> f64 {
        self.y + liquidation_value(self.x, eps)
    }
}

/// Outcome of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalOutcome {
    pub y_t: f64,
    pub x_t: f64,
    pub s_t: f64,
    pub p_t: f64,
    pub l_plus: f64,
    pub l_minus: f64,
    /// `Y_T + ℓ^ε(X_T)`.
    pub wealth: f64,
    /// `Δ = wealth − g(S_T)`.
    pub shortfall: f64,
    /// `Ψ(Δ)`.
    pub loss: f64,
    pub stop: Option<StopReason>,
    /// Smallest `Y + ℓ^ε(X)` observed while trading.
    pub min_wealth: f64,
    /// `|δ|` was floored somewhere on the path.
    pub degenerate: bool,
    /// The threshold had to be clipped below zero.
    pub clipped: bool,
    /// Trading steps that ended outside the band.
    pub band_violations: u32,
}

/// One row of a path trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "L_plus")]
    pub l_plus: f64,
    #[serde(rename = "L_minus")]
    pub l_minus: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Auto stop level `k = −η⁻¹ ln(p₀(e^{−ηε^m} − 1)/c) + 1`; infinite when `c = 0`.
pub fn auto_stop_level(p0: f64, eta: f64, eps: Epsilon, cushion: f64, order: i32) -> f64 {
    if cushion <= 0.0 {
        return f64::INFINITY;
    }
    let e = eps.value().powi(order);
    -(p0 * ((-eta * e).exp() - 1.0) / cushion).ln() / eta + 1.0
}

/// Exponential rule: stop once `Y + ℓ^ε(X) ≤ −k`.
pub fn stopping_rule_exponential(state: &PortfolioState, k: f64, eps: Epsilon) -> bool {
    state.liquidation_wealth(eps) <= -k
}

/// Power trigger level `ε^{5/2} − κ`.
pub fn power_trigger_level(eps: Epsilon, kappa: f64) -> f64 {
    eps.value().powf(2.5) - kappa
}

/// Power rule: liquidate once `Y + ℓ^ε(X) ≤ ε^{5/2} − κ`.
pub fn stopping_rule_power(state: &PortfolioState, eps: Epsilon, kappa: f64) -> bool {
    state.liquidation_wealth(eps) <= power_trigger_level(eps, kappa)
}

/// Terms of the prescribed initial capital.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapitalDecomposition {
    /// `v = π − x₀`.
    pub v_part: f64,
    /// `ε²û`.
    pub eps2_part: f64,
    /// `ε⁴ϖ(ξ)`.
    pub eps4_part: f64,
    /// Cushion term of the rule.
    pub cushion_part: f64,
    pub total: f64,
}

/// Band, corrector and frictionless data at one state.
#[derive(Debug, Clone, Copy)]
pub struct BandState {
    pub point: FrictionlessPoint,
    pub theta: f64,
    /// `εξ` (zero for the baseline).
    pub half_width: f64,
    pub corrector: CorrectorSolution,
    /// `∂ξ̂/∂s`, `∂ξ̂/∂p` (zero for the unit band).
    pub xi_hat_s: f64,
    pub xi_hat_p: f64,
    /// `û_s`, `û_p` entering `â^ε`.
    pub u_s: f64,
    pub u_p: f64,
    pub degenerate: bool,
}

impl BandState {
    pub fn lower(&self) -> f64 {
        self.theta - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.theta + self.half_width
    }
}

/// A strategy bound to a model, an `ε` and a time grid.
#[derive(Debug, Clone)]
pub struct Hedger {
    pub solution: FrictionlessSolution,
    pub spec: StrategySpec,
    pub eps: Epsilon,
    pub convention: HConvention,
    pub grid: TimeGrid,
    u_surface: Option<Arc<USurface>>,
    /// Band of the exponential model without payoff, which only depends on
    /// `(t, p)` through a few closed-form entries.
    constant_band: Option<BandState>,
}

impl Hedger {
    pub fn new(
        solution: FrictionlessSolution,
        spec: StrategySpec,
        eps: Epsilon,
        convention: HConvention,
        grid: TimeGrid,
    ) -> Result<Self> {
        spec.validate()?;
        let tag = match solution.loss.kind {
            LossKind::Exponential { .. } => ModelTag::Exponential,
            LossKind::Power { .. } => ModelTag::Power,
            LossKind::Custom(_) => {
                return Err(invalid(
                    "loss",
                    "band strategies need the exponential or power loss",
                ))
            }
        };
        if tag != spec.model {
            return Err(invalid("strategy.model", "does not match the loss model"));
        }
        if (grid.horizon - solution.market.horizon).abs() > 1e-12 {
            return Err(invalid("grid", "must end at the market horizon"));
        }
        let mut hedger = Self {
            solution,
            spec,
            eps,
            convention,
            grid,
            u_surface: None,
            constant_band: None,
        };
        if hedger.solution.payoff.is_zero() && tag == ModelTag::Exponential {
            hedger.constant_band = Some(hedger.band_at(grid.t0, 1.0, -1.0)?);
        }
        Ok(hedger)
    }

    /// Supplies `û_s` for the exponential model band with a payoff.
    pub fn with_u_surface(mut self, surface: Arc<USurface>) -> Self {
        self.u_surface = Some(surface);
        self
    }

    /// Proportional cost actually charged: zero for the baseline and the zero-cost control.
    pub fn cost(&self) -> f64 {
        if self.spec.baseline || self.spec.zero_cost {
            0.0
        } else {
            self.eps.cost()
        }
    }

    fn liquidate(&self, x: f64) -> f64 {
        x - self.cost() * x.abs()
    }

    /// Stop level in force for this strategy and starting threshold.
    pub fn stop_level(&self, p0: f64) -> f64 {
        if self.spec.baseline {
            return f64::INFINITY;
        }
        match (self.spec.stop, self.solution.loss.eta()) {
            (StopLevel::Never, _) | (_, None) => f64::INFINITY,
            (StopLevel::Fixed(k), _) => k,
            (StopLevel::Auto, Some(eta)) => {
                let order = if self.spec.capital_rule == CapitalRule::Prop61 {
                    2
                } else {
                    3
                };
                auto_stop_level(p0, eta, self.eps, self.spec.cushion, order)
            }
        }
    }

    /// Wealth level at or below which the strategy stops; `−∞` if it never
    /// stops.
    pub fn stop_threshold(&self, p0: f64) -> f64 {
        if self.spec.baseline || self.spec.stop == StopLevel::Never {
            return f64::NEG_INFINITY;
        }
        match self.solution.loss.power_params() {
            Some((_, kappa)) => match self.spec.stop {
                StopLevel::Fixed(k) => -k,
                _ => power_trigger_level(self.eps, kappa),
            },
            None => -self.stop_level(p0),
        }
    }

    /// Band and corrector data at `(t, s, p)`; `t` is kept off the maturity.
    pub fn band_at(&self, t: f64, s: f64, p: f64) -> Result<BandState> {
        let market = &self.solution.market;
        let t = t.min(market.horizon - 1e-10);
        if let (Some(band), Some(eta)) = (&self.constant_band, self.solution.loss.eta()) {
            if !(t >= 0.0 && s > 0.0 && p < 0.0) {
                return self.solution.eval(t, s, p).map(|_| *band);
            }
            let mut band = *band;
            let pt = &mut band.point;
            pt.t = t;
            pt.s = s;
            pt.p = p;
            pt.pi = -market.lambda * market.lambda * (market.horizon - t) / (2.0 * eta)
                - (-p).ln() / eta;
            pt.pi_p = -1.0 / (eta * p);
            pt.pi_pp = 1.0 / (eta * p * p);
            pt.hat_a = -market.lambda * p;
            return Ok(band);
        }
        let point = self.solution.eval(t, s, p)?;
        let eps = self.eps.value();
        let mut degenerate = false;
        let mut delta = point.delta;
        if delta.abs() < self.spec.delta_min {
            degenerate = true;
            delta = if delta < 0.0 {
                -self.spec.delta_min
            } else {
                self.spec.delta_min
            };
        }
        let mut state = BandState {
            point,
            theta: point.theta,
            half_width: 0.0,
            corrector: unit_corrector(),
            xi_hat_s: 0.0,
            xi_hat_p: 0.0,
            u_s: 0.0,
            u_p: 0.0,
            degenerate,
        };
        match self.spec.band {
            BandSource::Check => {}
            BandSource::Hat => match self.solution.loss.kind {
                LossKind::Exponential { eta } => {
                    let (xi_hat, h) =
                        exponential_from_delta(delta, eta, market.sigma, self.convention)?;
                    state.corrector = CorrectorSolution::from_xi_hat(xi_hat, h);
                    if !degenerate {
                        let delta_s = 2.0 * s * point.pi_ss + s * s * point.pi_sss;
                        state.xi_hat_s = 2.0 / 3.0 * xi_hat * delta_s / delta;
                    }
                    if let Some(surface) = &self.u_surface {
                        state.u_s = surface.eval(t, s).1;
                    }
                }
                LossKind::Power { beta, .. } => {
                    let mut pt = point;
                    pt.delta = delta;
                    state.corrector = corrector_at(&pt, market.sigma, false, self.convention)?;
                    let c = 1.0 / beta;
                    let u = state.corrector.h * (market.horizon - t);
                    state.u_p = c * u / (-p);
                    state.xi_hat_p = c * state.corrector.xi_hat / (-p);
                }
                LossKind::Custom(_) => unreachable!("rejected in Hedger::new"),
            },
        }
        if !self.spec.baseline {
            state.half_width = eps * state.corrector.xi_hat;
        }
        Ok(state)
    }

    /// Threshold volatility at stock position `x` given the band data.
    pub fn threshold_vol(&self, band: &BandState, x: f64) -> f64 {
        let pt = &band.point;
        if self.spec.baseline || self.spec.threshold_vol == ThresholdVol::Frictionless {
            return pt.hat_a;
        }
        let eps = self.eps.value();
        let (e2, e3, e4) = (eps * eps, eps * eps * eps, eps * eps * eps * eps);
        let sigma = self.solution.market.sigma;
        let xi = (x - band.theta) / eps;
        let c = &band.corrector;
        let w_xi = c.varpi_xi(xi);
        let w_hat = c.varpi_dxihat(xi);
        let s = pt.s;
        let s_psi_s = s * pt.pi_s + e2 * s * band.u_s - e3 * w_xi * s * pt.theta_s
            + e4 * w_hat * s * band.xi_hat_s;
        let psi_x = -1.0 + e3 * w_xi;
        let psi_p = pt.pi_p + e2 * band.u_p - e3 * w_xi * pt.theta_p + e4 * w_hat * band.xi_hat_p;
        -sigma * (s_psi_s + x * psi_x) / psi_p
    }

    /// Prescribed initial capital at `(t₀, s₀, p₀, x₀)`; `u` is the second
    /// corrector, required by `Prop62` and `Power`.
    pub fn prescribe_capital(
        &self,
        s0: f64,
        p0: f64,
        x0: f64,
        u: Option<f64>,
    ) -> Result<CapitalDecomposition> {
        let t0 = self.grid.t0;
        let eps = self.eps.value();
        let band = self.band_at(t0, s0, p0)?;
        let v_part = band.point.pi - x0;
        let xi = (x0 - band.theta) / eps;
        let eps4_part = eps.powi(4) * band.corrector.varpi(xi);
        let c = self.spec.cushion;
        let need_u =
            || u.ok_or_else(|| invalid("u", "the capital rule needs the second corrector"));
        let (eps2_part, cushion_part) = match self.spec.capital_rule {
            CapitalRule::Prop61 => (0.0, eps * eps * (c + 1.0)),
            CapitalRule::Prop62 => (eps * eps * need_u()?, eps.powi(3) * (c + 1.0)),
            CapitalRule::Power => (eps * eps * need_u()?, 3.0 * eps.powf(2.5) + c * eps.powi(3)),
        };
        Ok(CapitalDecomposition {
            v_part,
            eps2_part,
            eps4_part,
            cushion_part,
            total: v_part + eps2_part + eps4_part + cushion_part,
        })
    }

    /// Simulates path `path_id` from `(s0, p0, x0, y0)` at the grid start.
    pub fn simulate(
        &self,
        s0: f64,
        p0: f64,
        x0: f64,
        y0: f64,
        rng: &RngSpec,
        path_id: u64,
    ) -> Result<TerminalOutcome> {
        let mut dw = Vec::with_capacity(self.grid.n_steps);
        rng.brownian_increments(path_id, &self.grid, &mut dw);
        self.simulate_increments(s0, p0, x0, y0, &dw, None)
    }

    /// Simulates one path driven by the P-Brownian increments `dw`,
    /// optionally recording a trace.
    pub fn simulate_increments(
        &self,
        s0: f64,
        p0: f64,
        x0: f64,
        y0: f64,
        dw: &[f64],
        mut trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<TerminalOutcome> {
        self.solution.loss.check_threshold(p0)?;
        if dw.len() != self.grid.n_steps {
            return Err(invalid(
                "increments",
                "length must equal the number of steps",
            ));
        }
        let market = &self.solution.market;
        let sigma = market.sigma;
        let dt = self.grid.dt();
        let drift = (market.mu() - 0.5 * sigma * sigma) * dt;
        let cost = self.cost();
        let level = self.stop_threshold(p0);
        let power = self.spec.model == ModelTag::Power;

        let mut st = PortfolioState {
            t: self.grid.t0,
            s: s0,
            x: x0,
            y: y0,
            p: p0,
            l_plus: 0.0,
            l_minus: 0.0,
            stopped: None,
        };
        let mut band = self.band_at(st.t, st.s, st.p)?;
        let mut degenerate = band.degenerate;
        let mut clipped = false;
        let mut min_wealth = f64::INFINITY;
        let mut band_violations = 0;

        let cash = |lp: f64, lm: f64| y0 - (1.0 + cost) * lp + (1.0 - cost) * lm;
        // Reflect into the band, then apply the stop rule.
        let settle = |st: &mut PortfolioState, band: &BandState, min_wealth: &mut f64| {
            if st.x < band.lower() {
                st.l_plus += band.lower() - st.x;
                st.x = band.lower();
            } else if st.x > band.upper() {
                st.l_minus += st.x - band.upper();
                st.x = band.upper();
            }
            st.y = cash(st.l_plus, st.l_minus);
            let wealth = st.y + self.liquidate(st.x);
            *min_wealth = min_wealth.min(wealth);
            if wealth > level {
                return;
            }
            if power {
                if st.x > 0.0 {
                    st.l_minus += st.x;
                } else {
                    st.l_plus -= st.x;
                }
                st.x = 0.0;
                st.y = cash(st.l_plus, st.l_minus);
                st.stopped = Some(StopReason::Liquidated);
            } else {
                st.stopped = Some(StopReason::WealthFloor);
            }
        };
        settle(&mut st, &band, &mut min_wealth);
        let record =
            |st: &PortfolioState, band: &BandState, trace: &mut Option<&mut Vec<TraceRow>>| {
                if let Some(rows) = trace.as_deref_mut() {
                    rows.push(TraceRow {
                        t: st.t,
                        s: st.s,
                        x: st.x,
                        y: st.y,
                        p: st.p,
                        l_plus: st.l_plus,
                        l_minus: st.l_minus,
                        band_lo: band.lower(),
                        band_hi: band.upper(),
                    });
                }
            };
        record(&st, &band, &mut trace);

        for (k, &w) in dw.iter().enumerate() {
            let growth = (drift + sigma * w).exp();
            let active = st.stopped.is_none();
            let a = if active {
                self.threshold_vol(&band, st.x)
            } else {
                0.0
            };
            st.t = self.grid.time(k + 1);
            st.s *= growth;
            st.x *= growth;
            if !active {
                continue;
            }
            st.p += a * w;
            if st.p >= P_CEILING {
                st.p = P_CEILING;
                clipped = true;
            }
            band = self.band_at(st.t, st.s, st.p)?;
            degenerate |= band.degenerate;
            settle(&mut st, &band, &mut min_wealth);
            if st.stopped.is_none() && !(band.lower() <= st.x && st.x <= band.upper()) {
                band_violations += 1;
            }
            record(&st, &band, &mut trace);
        }
        if let Some(rows) = trace {
            if st.stopped.is_some() {
                rows.push(TraceRow {
                    t: st.t,
                    s: st.s,
                    x: st.x,
                    y: st.y,
                    p: st.p,
                    l_plus: st.l_plus,
                    l_minus: st.l_minus,
                    band_lo: f64::NAN,
                    band_hi: f64::NAN,
                });
            }
        }

        let wealth = st.y + self.liquidate(st.x);
        let shortfall = wealth - self.solution.payoff.eval(st.s);
        Ok(TerminalOutcome {
            y_t: st.y,
            x_t: st.x,
            s_t: st.s,
            p_t: st.p,
            l_plus: st.l_plus,
            l_minus: st.l_minus,
            wealth,
            shortfall,
            loss: self.solution.loss.psi(shortfall),
            stop: st.stopped,
            min_wealth,
            degenerate,
            clipped,
            band_violations,
        })
    }
}

/// One-call form of [`Hedger::simulate`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_hedge(
    s0: f64,
    p0: f64,
    x0: f64,
    y0: f64,
    spec: StrategySpec,
    eps: Epsilon,
    solution: &FrictionlessSolution,
    convention: HConvention,
    grid: &TimeGrid,
    rng: &RngSpec,
    path_id: u64,
) -> Result<TerminalOutcome> {
    Hedger::new(solution.clone(), spec, eps, convention, *grid)?
        .simulate(s0, p0, x0, y0, rng, path_id)
}
