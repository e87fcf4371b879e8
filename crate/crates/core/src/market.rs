//! Constant-coefficient Black–Scholes market with zero interest rate: path
//! simulation under the physical and risk-neutral measures, the density of the
//! risk-neutral measure, and closed-form prices and Greeks of bounded payoffs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{norm_cdf, norm_pdf, NormalQuadrature};

/// Market price of risk, volatility and horizon. The drift is `μ = λσ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub lambda: f64,
    pub sigma: f64,
    pub horizon: f64,
}

impl MarketParams {
    pub fn new(lambda: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(invalid("lambda", "must be finite"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", "must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("T", "must be positive"));
        }
        Ok(Self {
            lambda,
            sigma,
            horizon,
        })
    }

    /// Stock drift `λσ`.
    pub fn mu(&self) -> f64 {
        self.lambda * self.sigma
    }
}

/// Probability measure used to drive the spot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    P,
    Q,
}

/// Payoff tabulated on increasing spots, interpolated linearly and extended
/// flat outside the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPayoff {
    spots: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedPayoff {
    pub fn new(spots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if spots.len() < 2 || spots.len() != values.len() {
            return Err(invalid(
                "payoff.table",
                "needs at least two (spot, value) pairs of equal length",
            ));
        }
        if spots.windows(2).any(|w| !(w[1] > w[0])) || spots[0] <= 0.0 {
            return Err(invalid(
                "payoff.table",
                "spots must be positive and strictly increasing",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("payoff.table", "values must be finite"));
        }
        Ok(Self { spots, values })
    }

    pub fn spots(&self) -> &[f64] {
        &self.spots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, s: f64) -> Option<usize> {
        if s <= self.spots[0] || s >= self.spots[self.spots.len() - 1] {
            return None;
        }
        Some(self.spots.partition_point(|&k| k <= s) - 1)
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.spots.len();
        if s <= self.spots[0] {
            return self.values[0];
        }
        if s >= self.spots[n - 1] {
            return self.values[n - 1];
        }
        let i = self.segment(s).unwrap_or(0);
        let w = (s - self.spots[i]) / (self.spots[i + 1] - self.spots[i]);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    fn slope(&self, s: f64) -> Result<f64> {
        let n = self.spots.len();
        let slope_of =
            |i: usize| (self.values[i + 1] - self.values[i]) / (self.spots[i + 1] - self.spots[i]);
        if let Some(j) = self.spots.iter().position(|&k| k == s) {
            let left = if j == 0 { 0.0 } else { slope_of(j - 1) };
            let right = if j == n - 1 { 0.0 } else { slope_of(j) };
            if left != right {
                return Err(Error::Kink(s));
            }
            return Ok(left);
        }
        Ok(self.segment(s).map_or(0.0, slope_of))
    }
}

/// Supported payoff shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffKind {
    Zero,
    Put {
        strike: f64,
    },
    CallSpread {
        k1: f64,
        k2: f64,
    },
    /// Cash-or-nothing call paying one unit when `S_T ≥ strike`.
    Digital {
        strike: f64,
    },
    Custom(TabulatedPayoff),
}

/// A bounded European payoff `g(S_T)` with its absolute bound `K_g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub kind: PayoffKind,
    pub bound: f64,
    /// Gauss–Hermite nodes used for tabulated payoffs.
    pub quadrature_nodes: usize,
}

impl Payoff {
    pub fn zero() -> Self {
        Self {
            kind: PayoffKind::Zero,
            bound: 0.0,
            quadrature_nodes: 128,
        }
    }

    pub fn put(strike: f64) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(invalid("payoff.strike", "must be positive"));
        }
        Ok(Self {
            kind: PayoffKind::Put { strike },
            bound: strike,
            quadrature_nodes: 128,
        })
    }

    pub fn call_spread(k1: f64, k2: f64) -> Result<Self> {
        if !(k1 > 0.0 && k2 > k1 && k2.is_finite()) {
            return Err(invalid("payoff.k1/k2", "need 0 < k1 < k2"));
        }
        Ok(Self {
            kind: PayoffKind::CallSpread { k1, k2 },
            bound: k2 - k1,
            quadrature_nodes: 128,
        })
    }

    pub fn digital(strike: f64) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(invalid("payoff.strike", "must be positive"));
        }
        Ok(Self {
            kind: PayoffKind::Digital { strike },
            bound: 1.0,
            quadrature_nodes: 128,
        })
    }

    pub fn tabulated(table: TabulatedPayoff) -> Self {
        let bound = table.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self {
            kind: PayoffKind::Custom(table),
            bound,
            quadrature_nodes: 128,
        }
    }

    pub fn with_quadrature_nodes(mut self, n: usize) -> Self {
        self.quadrature_nodes = n;
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PayoffKind::Zero)
    }

    /// Payoff value `g(s)`.
    pub fn eval(&self, s: f64) -> f64 {
        match &self.kind {
            PayoffKind::Zero => 0.0,
            PayoffKind::Put { strike } => (strike - s).max(0.0),
            PayoffKind::CallSpread { k1, k2 } => (s - k1).max(0.0) - (s - k2).max(0.0),
            PayoffKind::Digital { strike } => {
                if s >= *strike {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffKind::Custom(t) => t.eval(s),
        }
    }
}

/// Uniform time grid on `[t0, horizon]` with `n_steps` steps.
///
/// `level` counts how many times the grid was halved from its base; it selects
/// the Brownian-bridge refinement draws so refined paths share the coarse
/// increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub level: u32,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t0 < horizon) {
            return Err(invalid(
                "t0",
                format!("need 0 <= t0 < T, got t0 = {t0}, T = {horizon}"),
            ));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "grid is empty"));
        }
        Ok(Self {
            t0,
            horizon,
            n_steps,
            level: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    /// Same interval with the step halved.
    pub fn refined(&self) -> Self {
        Self {
            n_steps: self.n_steps * 2,
            level: self.level + 1,
            ..*self
        }
    }

    pub fn base_steps(&self) -> usize {
        self.n_steps >> self.level
    }
}

/// Seed of the per-path random streams. Path `i` always reads stream `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn stream(&self, path_id: u64, level: u32) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..12].copy_from_slice(&level.to_le_bytes());
        key[16..24].copy_from_slice(b"losshdg1");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(path_id);
        rng
    }

    /// Brownian increments of `grid` for path `path_id`.
    ///
    /// The base grid uses the level-0 stream; each refinement level splits
    /// every increment with a Brownian-bridge midpoint drawn from its own
    /// stream, so coarse increments equal sums of fine ones.
    pub fn brownian_increments(&self, path_id: u64, grid: &TimeGrid, out: &mut Vec<f64>) {
        let base = grid.base_steps();
        let mut h = (grid.horizon - grid.t0) / base as f64;
        let sq = h.sqrt();
        out.clear();
        out.reserve(grid.n_steps);
        let mut rng = self.stream(path_id, 0);
        for _ in 0..base {
            let z: f64 = rng.sample(StandardNormal);
            out.push(sq * z);
        }
        let mut scratch = Vec::with_capacity(grid.n_steps);
        for level in 1..=grid.level {
            let mut rng = self.stream(path_id, level);
            let half = 0.5 * h.sqrt();
            scratch.clear();
            for &dw in out.iter() {
                let z: f64 = rng.sample(StandardNormal);
                let a = 0.5 * dw + half * z;
                scratch.push(a);
                scratch.push(dw - a);
            }
            std::mem::swap(out, &mut scratch);
            h *= 0.5;
        }
    }
}

/// Exact lognormal spot path on `grid`, including the initial point.
pub fn simulate_gbm(
    params: &MarketParams,
    s0: f64,
    grid: &TimeGrid,
    measure: Measure,
    rng: &RngSpec,
    path_id: u64,
) -> Result<Vec<f64>> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(invalid("s0", "must be positive"));
    }
    if grid.n_steps == 0 {
        return Err(invalid("n_steps", "grid is empty"));
    }
    let mut dw = Vec::new();
    rng.brownian_increments(path_id, grid, &mut dw);
    let drift = match measure {
        Measure::P => params.mu(),
        Measure::Q => 0.0,
    };
    let dt = grid.dt();
    let step_drift = (drift - 0.5 * params.sigma * params.sigma) * dt;
    let mut path = Vec::with_capacity(grid.n_steps + 1);
    let mut s = s0;
    path.push(s);
    for w in dw {
        s *= (step_drift + params.sigma * w).exp();
        path.push(s);
    }
    Ok(path)
}

/// Density `dQ/dP = 1/Q_T` with `Q_T = exp(½λ²(T−t) + λw)`, where `w` is the
/// Brownian increment between `t` and `T` under the physical measure.
pub fn radon_nikodym_qp(params: &MarketParams, t: f64, w: f64) -> Result<f64> {
    if t >= params.horizon {
        return Err(Error::Domain(format!(
            "t = {t} must be before T = {}",
            params.horizon
        )));
    }
    let tau = params.horizon - t;
    Ok((-0.5 * params.lambda * params.lambda * tau - params.lambda * w).exp())
}

/// Risk-neutral price `π̄ = E^Q[g(S_T)]` and its first three spot derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BsGreeks {
    pub value: f64,
    pub ds: f64,
    pub dss: f64,
    pub dsss: f64,
}

impl std::ops::Sub for BsGreeks {
    type Output = BsGreeks;
    fn sub(self, o: BsGreeks) -> BsGreeks {
        BsGreeks {
            value: self.value - o.value,
            ds: self.ds - o.ds,
            dss: self.dss - o.dss,
            dsss: self.dsss - o.dsss,
        }
    }
}

/// Price and spot derivatives up to `order` of `payoff` at `(t, s)`.
///
/// Entries above `order` are left at zero. At `t = T` the payoff and its
/// one-sided derivatives are returned; kinks raise [`Error::Kink`].
pub fn bs_functionals(
    payoff: &Payoff,
    params: &MarketParams,
    t: f64,
    s: f64,
    order: usize,
) -> Result<BsGreeks> {
    if order > 3 {
        return Err(Error::Order(order));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid("s", "spot must be positive"));
    }
    if t > params.horizon {
        return Err(Error::Domain(format!(
            "t = {t} is after T = {}",
            params.horizon
        )));
    }
    let tau = params.horizon - t;
    let mut g = if tau <= 0.0 {
        terminal_greeks(payoff, s, order)?
    } else {
        let v = params.sigma * tau.sqrt();
        match &payoff.kind {
            PayoffKind::Zero => BsGreeks::default(),
            PayoffKind::Put { strike } => put_greeks(s, *strike, v),
            PayoffKind::CallSpread { k1, k2 } => call_greeks(s, *k1, v) - call_greeks(s, *k2, v),
            PayoffKind::Digital { strike } => digital_greeks(s, *strike, v),
            PayoffKind::Custom(table) => tabulated_greeks(table, payoff.quadrature_nodes, s, v)?,
        }
    };
    if order < 3 {
        g.dsss = 0.0;
    }
    if order < 2 {
        g.dss = 0.0;
    }
    if order < 1 {
        g.ds = 0.0;
    }
    Ok(g)
}

fn terminal_greeks(payoff: &Payoff, s: f64, order: usize) -> Result<BsGreeks> {
    let value = payoff.eval(s);
    if order == 0 {
        return Ok(BsGreeks {
            value,
            ..Default::default()
        });
    }
    let ds = match &payoff.kind {
        PayoffKind::Zero => 0.0,
        PayoffKind::Put { strike } => {
            if s == *strike {
                return Err(Error::Kink(s));
            }
            if s < *strike {
                -1.0
            } else {
                0.0
            }
        }
        PayoffKind::CallSpread { k1, k2 } => {
            if s == *k1 || s == *k2 {
                return Err(Error::Kink(s));
            }
            if s > *k1 && s < *k2 {
                1.0
            } else {
                0.0
            }
        }
        PayoffKind::Digital { strike } => {
            if s == *strike {
                return Err(Error::Kink(s));
            }
            0.0
        }
        PayoffKind::Custom(table) => table.slope(s)?,
    };
    Ok(BsGreeks {
        value,
        ds,
        dss: 0.0,
        dsss: 0.0,
    })
}

/// Greeks shared by vanilla calls and puts beyond the delta: `Γ` and `∂Γ/∂s`.
fn gamma_terms(s: f64, d1: f64, v: f64) -> (f64, f64) {
    let pdf = norm_pdf(d1);
    let gamma = pdf / (s * v);
    let speed = -pdf / (s * s * v) * (1.0 + d1 / v);
    (gamma, speed)
}

fn d1(s: f64, k: f64, v: f64) -> f64 {
    ((s / k).ln() + 0.5 * v * v) / v
}

fn put_greeks(s: f64, k: f64, v: f64) -> BsGreeks {
    let d1 = d1(s, k, v);
    let d2 = d1 - v;
    let (gamma, speed) = gamma_terms(s, d1, v);
    BsGreeks {
        value: k * norm_cdf(-d2) - s * norm_cdf(-d1),
        ds: -norm_cdf(-d1),
        dss: gamma,
        dsss: speed,
    }
}

fn call_greeks(s: f64, k: f64, v: f64) -> BsGreeks {
    let d1 = d1(s, k, v);
    let d2 = d1 - v;
    let (gamma, speed) = gamma_terms(s, d1, v);
    BsGreeks {
        value: s * norm_cdf(d1) - k * norm_cdf(d2),
        ds: norm_cdf(d1),
        dss: gamma,
        dsss: speed,
    }
}

fn digital_greeks(s: f64, k: f64, v: f64) -> BsGreeks {
    let d2 = d1(s, k, v) - v;
    let pdf = norm_pdf(d2);
    let a = 1.0 + d2 / v;
    BsGreeks {
        value: norm_cdf(d2),
        ds: pdf / (s * v),
        dss: -pdf / (s * s * v) * a,
        dsss: pdf / (s * s * s * v) * (d2 * a / v + 2.0 * a - 1.0 / (v * v)),
    }
}

/// Gauss–Hermite quadrature against the lognormal terminal law. Spot
/// derivatives come from likelihood-ratio weights in `u = ln s`.
fn tabulated_greeks(table: &TabulatedPayoff, nodes: usize, s: f64, v: f64) -> Result<BsGreeks> {
    let full = tabulated_moments(table, nodes, s, v)?;
    let half = tabulated_moments(table, nodes.div_ceil(2).max(1), s, v)?;
    let scale = table.values.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    if (full[0] - half[0]).abs() > 1e-2 * scale {
        return Err(Error::Quadrature(format!(
            "tabulated payoff price changes by {:.3e} between {} and {} nodes",
            (full[0] - half[0]).abs(),
            nodes,
            nodes.div_ceil(2)
        )));
    }
    let [f, fu, fuu, fuuu] = full;
    Ok(BsGreeks {
        value: f,
        ds: fu / s,
        dss: (fuu - fu) / (s * s),
        dsss: (fuuu - 3.0 * fuu + 2.0 * fu) / (s * s * s),
    })
}

fn tabulated_moments(table: &TabulatedPayoff, nodes: usize, s: f64, v: f64) -> Result<[f64; 4]> {
    let q = NormalQuadrature::cached(nodes)?;
    let m = s.ln() - 0.5 * v * v;
    let mut acc: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(q.len()));
    for (&z, &w) in q.nodes.iter().zip(&q.weights) {
        let g = w * table.eval((m + v * z).exp());
        acc[0].push(g);
        acc[1].push(g * z);
        acc[2].push(g * (z * z - 1.0));
        acc[3].push(g * (z * z * z - 3.0 * z));
    }
    let sum = |xs: &Vec<f64>| crate::numerics::pairwise_sum(xs);
    Ok([
        sum(&acc[0]),
        sum(&acc[1]) / v,
        sum(&acc[2]) / (v * v),
        sum(&acc[3]) / (v * v * v),
    ])
}
