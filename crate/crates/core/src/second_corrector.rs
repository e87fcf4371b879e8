//! Second corrector `u`, the `ε²` coefficient of the price expansion.
//!
//! Three solvers are provided: a Feynman–Kac Monte Carlo estimator valid for
//! any loss, a finite-difference solver in log-spot for the exponential loss,
//! and the closed form of the power loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{corrector_at, corrector_power, exponential_from_delta, HConvention};
use crate::error::{invalid, Error, Result};
use crate::frictionless::{FrictionlessSolution, LossKind};
use crate::market::{bs_functionals, MarketParams, Payoff, RngSpec, TimeGrid};
use crate::numerics::{adaptive_simpson, MeanSe};

/// Solver that produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FkMc,
    FdPde,
    PowerClosed,
}

/// Value of `u` with its standard error (zero for deterministic solvers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondCorrectorEstimate {
    pub value: f64,
    pub se: f64,
    pub method: Method,
    /// Paths on which the threshold had to be clipped below zero.
    pub clipped_paths: usize,
    /// Simulated path steps, or grid cell updates for the PDE solver.
    pub work_units: u64,
}

/// Loss rate `h(t, s, p)`; zero where `δ` vanishes.
pub fn loss_rate(
    sol: &FrictionlessSolution,
    convention: HConvention,
    t: f64,
    s: f64,
    p: f64,
) -> Result<f64> {
    if let (LossKind::Exponential { eta }, crate::frictionless::PricingPath::ClosedForm) =
        (&sol.loss.kind, sol.path)
    {
        return exponential_rate(&sol.payoff, &sol.market, *eta, convention, t, s);
    }
    let pt = sol.eval(t, s, p)?;
    if pt.delta == 0.0 {
        return Ok(0.0);
    }
    let exponential = matches!(sol.loss.kind, LossKind::Exponential { .. });
    Ok(corrector_at(&pt, sol.market.sigma, exponential, convention)?.h)
}

fn exponential_rate(
    payoff: &Payoff,
    market: &MarketParams,
    eta: f64,
    convention: HConvention,
    t: f64,
    s: f64,
) -> Result<f64> {
    let g = bs_functionals(payoff, market, t, s, 2)?;
    let delta = s * s * g.dss - market.lambda / (market.sigma * eta);
    if delta == 0.0 {
        return Ok(0.0);
    }
    Ok(exponential_from_delta(delta, eta, market.sigma, convention)?.1)
}

/// Feynman–Kac estimate of `u(t, s, p) = E^Q[∫_t^T h(τ, S_τ, P̂_τ) dτ]`.
///
/// Under the risk-neutral measure the spot is driftless and the threshold
/// follows `dP̂ = â (dW^Q − λ dt)`. The threshold is stepped exactly for the
/// power loss and by Euler otherwise; `h` is integrated by the trapezoidal
/// rule on `grid`, with the value at maturity replaced by the value one step
/// earlier (`h` blows up at `T` when the spot ends near a payoff kink).
#[allow(clippy::too_many_arguments)]
pub fn u_feynman_kac(
    t: f64,
    s: f64,
    p: f64,
    sol: &FrictionlessSolution,
    convention: HConvention,
    n_paths: usize,
    grid: &TimeGrid,
    rng: &RngSpec,
) -> Result<SecondCorrectorEstimate> {
    sol.loss.check_threshold(p)?;
    if n_paths < 2 {
        return Err(invalid("n_paths", "need at least two paths"));
    }
    if (grid.t0 - t).abs() > 1e-12 || (grid.horizon - sol.market.horizon).abs() > 1e-12 {
        return Err(invalid("grid", "must start at t and end at T"));
    }
    let MarketParams { lambda, sigma, .. } = sol.market;
    let power = sol.loss.power_params();
    let dt = grid.dt();
    let results: Vec<Result<(f64, bool)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let mut dw = Vec::new();
            rng.brownian_increments(id, grid, &mut dw);
            let (mut st, mut pt) = (s, p);
            let mut clipped = false;
            let mut prev_h = loss_rate(sol, convention, t, st, pt)?;
            let mut acc = 0.5 * prev_h;
            for (k, w) in dw.iter().enumerate() {
                let tk = grid.time(k);
                if let Some((beta, _)) = power {
                    let a = lambda * beta / (1.0 + beta);
                    pt *= ((a * lambda - 0.5 * a * a) * dt - a * w).exp();
                } else {
                    let a = sol.eval(tk, st, pt)?.hat_a;
                    pt += a * (w - lambda * dt);
                    if pt >= -1e-12 {
                        pt = -1e-12;
                        clipped = true;
                    }
                }
                st *= (-0.5 * sigma * sigma * dt + sigma * w).exp();
                if k + 1 == grid.n_steps {
                    acc += 0.5 * prev_h;
                } else {
                    let hk = loss_rate(sol, convention, grid.time(k + 1), st, pt)?;
                    acc += hk;
                    prev_h = hk;
                }
            }
            Ok((acc * dt, clipped))
        })
        .collect();
    let mut values = Vec::with_capacity(n_paths);
    let mut clipped_paths = 0;
    for r in results {
        let (v, c) = r?;
        values.push(v);
        clipped_paths += c as usize;
    }
    if clipped_paths as f64 > 1e-3 * n_paths as f64 {
        return Err(Error::Domain(format!(
            "threshold left the loss image on {clipped_paths} of {n_paths} paths"
        )));
    }
    let stats = MeanSe::from_slice(&values);
    Ok(SecondCorrectorEstimate {
        value: stats.mean,
        se: stats.se,
        method: Method::FkMc,
        clipped_paths,
        work_units: (n_paths * grid.n_steps) as u64,
    })
}

/// Edge treatment of the finite-difference grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `u` is extrapolated linearly in log-spot at both edges.
    #[default]
    LinearExtrapolation,
}

/// Log-spot grid for the exponential second corrector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdGrid {
    pub n_s: usize,
    pub n_t: usize,
    /// Half-width in units of `σ√(T−t)`.
    pub width_sd: f64,
    pub boundary: Boundary,
}

impl Default for FdGrid {
    fn default() -> Self {
        Self {
            n_s: 801,
            n_t: 400,
            width_sd: 6.0,
            boundary: Boundary::LinearExtrapolation,
        }
    }
}

impl FdGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_s < 3 {
            return Err(invalid("fd.n_s", "need at least three nodes"));
        }
        if self.n_t < 3 {
            return Err(invalid("fd.n_t", "need at least three time steps"));
        }
        if !(self.width_sd >= 5.0) {
            return Err(invalid(
                "fd.width_sd",
                "grid must span at least five standard deviations",
            ));
        }
        Ok(())
    }
}

/// Solution of `û_t + ½σ²s²û_ss + h = 0`, `û(T,·) = 0` on a log-spot grid, kept
/// at every time level so values and spot derivatives can be read along paths.
#[derive(Debug, Clone)]
pub struct USurface {
    t0: f64,
    horizon: f64,
    x_lo: f64,
    dx: f64,
    /// Times to maturity of the stored levels, increasing from zero.
    taus: Vec<f64>,
    levels: Vec<Vec<f64>>,
    work_units: u64,
}

impl USurface {
    /// Solves on `[t0, T]` with the grid centred at `ln s0`.
    pub fn solve(
        t0: f64,
        s0: f64,
        eta: f64,
        convention: HConvention,
        market: &MarketParams,
        payoff: &Payoff,
        grid: &FdGrid,
    ) -> Result<Self> {
        grid.validate()?;
        if !(eta > 0.0) {
            return Err(invalid("eta", "must be positive"));
        }
        if !(s0 > 0.0) {
            return Err(invalid("s0", "must be positive"));
        }
        if !(t0 >= 0.0 && t0 <= market.horizon) {
            return Err(Error::Domain(format!("t = {t0} outside [0, T]")));
        }
        let horizon = market.horizon;
        let total = horizon - t0;
        let n = grid.n_s;
        let half = grid.width_sd * market.sigma * total.sqrt().max(1e-8);
        let x_lo = s0.ln() - half;
        let dx = 2.0 * half / (n - 1) as f64;
        if total <= 0.0 {
            return Ok(Self {
                t0,
                horizon,
                x_lo,
                dx,
                taus: vec![0.0],
                levels: vec![vec![0.0; n]],
                work_units: 0,
            });
        }
        let xs: Vec<f64> = (0..n).map(|i| x_lo + dx * i as f64).collect();
        let source = |tau: f64| -> Result<Vec<f64>> {
            let t = horizon - tau;
            xs.iter()
                .map(|x| exponential_rate(payoff, market, eta, convention, t, x.exp()))
                .collect()
        };
        let s2 = market.sigma * market.sigma;
        // L u = ½σ²(u_xx − u_x) with central differences.
        let lo_c = 0.5 * s2 * (1.0 / (dx * dx) + 0.5 / dx);
        let di_c = -s2 / (dx * dx);
        let up_c = 0.5 * s2 * (1.0 / (dx * dx) - 0.5 / dx);
        let apply_l = |u: &[f64], i: usize| lo_c * u[i - 1] + di_c * u[i] + up_c * u[i + 1];

        let nt = grid.n_t;
        let taus: Vec<f64> = (0..=nt)
            .map(|j| total * (j as f64 / nt as f64).powi(2))
            .collect();
        let mut levels = Vec::with_capacity(nt + 1);
        let mut u = vec![0.0; n];
        levels.push(u.clone());
        let mut h_prev: Option<Vec<f64>> = None;
        let mut sub = vec![0.0; n];
        let mut dia = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for j in 0..nt {
            let dtau = taus[j + 1] - taus[j];
            let h_next = source(taus[j + 1])?;
            let implicit = j < 2;
            let w = if implicit { 1.0 } else { 0.5 };
            for i in 1..n - 1 {
                sub[i] = -w * dtau * lo_c;
                dia[i] = 1.0 - w * dtau * di_c;
                sup[i] = -w * dtau * up_c;
                rhs[i] = if implicit {
                    u[i] + dtau * h_next[i]
                } else {
                    let hp = h_prev.as_ref().map_or(h_next[i], |h| h[i]);
                    u[i] + 0.5 * dtau * apply_l(&u, i) + 0.5 * dtau * (hp + h_next[i])
                };
            }
            // Fold u_0 = 2u_1 − u_2 and u_{n−1} = 2u_{n−2} − u_{n−3} into the
            // first and last interior rows.
            dia[1] += 2.0 * sub[1];
            sup[1] -= sub[1];
            let last = n - 2;
            dia[last] += 2.0 * sup[last];
            sub[last] -= sup[last];
            let interior = solve_tridiagonal(
                &sub[1..=last],
                &dia[1..=last],
                &sup[1..=last],
                &rhs[1..=last],
            );
            u[1..=last].copy_from_slice(&interior);
            u[0] = 2.0 * u[1] - u[2];
            u[n - 1] = 2.0 * u[n - 2] - u[n - 3];
            levels.push(u.clone());
            h_prev = Some(h_next);
        }
        Ok(Self {
            t0,
            horizon,
            x_lo,
            dx,
            taus,
            levels,
            work_units: (nt * n) as u64,
        })
    }

    pub fn work_units(&self) -> u64 {
        self.work_units
    }

    fn level_value(&self, level: &[f64], x: f64) -> (f64, f64) {
        let n = level.len();
        let pos = ((x - self.x_lo) / self.dx).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        let value = level[i] + w * (level[i + 1] - level[i]);
        let slope = |k: usize| -> f64 {
            if k == 0 {
                (level[1] - level[0]) / self.dx
            } else if k == n - 1 {
                (level[n - 1] - level[n - 2]) / self.dx
            } else {
                (level[k + 1] - level[k - 1]) / (2.0 * self.dx)
            }
        };
        let du = slope(i) + w * (slope(i + 1) - slope(i));
        (value, du)
    }

    /// `(û, û_s)` at `(t, s)`, interpolated linearly in time-to-maturity and
    /// log-spot; held flat outside the grid.
    pub fn eval(&self, t: f64, s: f64) -> (f64, f64) {
        if self.levels.len() == 1 {
            return (0.0, 0.0);
        }
        let tau = (self.horizon - t).clamp(0.0, self.horizon - self.t0);
        let j = self
            .taus
            .partition_point(|&v| v <= tau)
            .clamp(1, self.taus.len() - 1);
        let (ta, tb) = (self.taus[j - 1], self.taus[j]);
        let w = if tb > ta { (tau - ta) / (tb - ta) } else { 0.0 };
        let x = s.ln();
        let (va, da) = self.level_value(&self.levels[j - 1], x);
        let (vb, db) = self.level_value(&self.levels[j], x);
        let value = va + w * (vb - va);
        let du = da + w * (db - da);
        (value, du / s)
    }
}

fn solve_tridiagonal(sub: &[f64], dia: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = dia.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / dia[0];
    d[0] = rhs[0] / dia[0];
    for i in 1..n {
        let m = dia[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Exponential second corrector by finite differences in log-spot.
pub fn u_fd_exponential(
    t: f64,
    s: f64,
    eta: f64,
    convention: HConvention,
    market: &MarketParams,
    payoff: &Payoff,
    grid: &FdGrid,
) -> Result<SecondCorrectorEstimate> {
    let surface = USurface::solve(t, s, eta, convention, market, payoff, grid)?;
    Ok(SecondCorrectorEstimate {
        value: surface.eval(t, s).0,
        se: 0.0,
        method: Method::FdPde,
        clipped_paths: 0,
        work_units: surface.work_units(),
    })
}

/// Power second corrector
/// `û(t,p) = (−p)^{−1/β} ∫_t^T h(τ,−1) exp(−λ²(τ−t)/(2(1+β))) dτ`.
pub fn u_power_closed(
    t: f64,
    p: f64,
    beta: f64,
    kappa: f64,
    market: &MarketParams,
) -> Result<SecondCorrectorEstimate> {
    if !(p < 0.0) {
        return Err(Error::Domain(format!("threshold p = {p} must be negative")));
    }
    if !(t >= 0.0 && t <= market.horizon) {
        return Err(Error::Domain(format!("t = {t} outside [0, T]")));
    }
    let (_, h_end) = corrector_power(market.horizon, -1.0, beta, kappa, market)?;
    let rate = market.lambda * market.lambda / (2.0 * (1.0 + beta));
    let m = |tau: f64| (-rate * (market.horizon - tau)).exp();
    let integrand = |tau: f64| h_end * m(tau) * (-rate * (tau - t)).exp();
    let integral = adaptive_simpson(&integrand, t, market.horizon, 1e-12)?;
    Ok(SecondCorrectorEstimate {
        value: (-p).powf(-1.0 / beta) * integral,
        se: 0.0,
        method: Method::PowerClosed,
        clipped_paths: 0,
        work_units: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::corrector_exponential;
    use crate::frictionless::LossModel;
    use approx::assert_relative_eq;

    fn mkt() -> MarketParams {
        MarketParams::new(0.3, 0.2, 1.0).unwrap()
    }

    #[test]
    fn fd_constant_rate_is_linear_in_time() {
        let (_, h) = corrector_exponential(
            0.0,
            100.0,
            2.0,
            &mkt(),
            &Payoff::zero(),
            HConvention::Section6,
        )
        .unwrap();
        let e = u_fd_exponential(
            0.25,
            100.0,
            2.0,
            HConvention::Section6,
            &mkt(),
            &Payoff::zero(),
            &FdGrid::default(),
        )
        .unwrap();
        assert!(
            (e.value - h * 0.75).abs() < 1e-8,
            "{} vs {}",
            e.value,
            h * 0.75
        );
        let end = u_fd_exponential(
            1.0,
            100.0,
            2.0,
            HConvention::Section6,
            &mkt(),
            &Payoff::zero(),
            &FdGrid::default(),
        )
        .unwrap();
        assert_eq!(end.value, 0.0);
    }

    #[test]
    fn fd_grid_validation() {
        let bad = FdGrid {
            width_sd: 3.0,
            ..FdGrid::default()
        };
        assert!(u_fd_exponential(
            0.0,
            100.0,
            1.0,
            HConvention::Section6,
            &mkt(),
            &Payoff::zero(),
            &bad
        )
        .is_err());
        let bad = FdGrid {
            n_s: 2,
            ..FdGrid::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fd_put_is_grid_converged() {
        let put = Payoff::put(100.0).unwrap();
        let a = u_fd_exponential(
            0.0,
            100.0,
            1.0,
            HConvention::Section6,
            &mkt(),
            &put,
            &FdGrid::default(),
        )
        .unwrap();
        let fine = FdGrid {
            n_s: 1601,
            n_t: 800,
            ..FdGrid::default()
        };
        let b =
            u_fd_exponential(0.0, 100.0, 1.0, HConvention::Section6, &mkt(), &put, &fine).unwrap();
        assert!(a.value > 0.0);
        assert!(
            (a.value - b.value).abs() < 2e-3 * b.value,
            "{} vs {}",
            a.value,
            b.value
        );
    }

    #[test]
    fn power_closed_form_properties() {
        let m = mkt();
        assert_eq!(u_power_closed(1.0, -1.0, 1.0, 1.0, &m).unwrap().value, 0.0);
        let (_, h) = corrector_power(0.0, -1.0, 1.0, 1.0, &m).unwrap();
        let u = u_power_closed(0.0, -1.0, 1.0, 1.0, &m).unwrap();
        assert_relative_eq!(u.value, h, max_relative = 1e-10);
        let u2 = u_power_closed(0.0, -2.5, 1.0, 1.0, &m).unwrap();
        assert_relative_eq!(u2.value, u.value / 2.5, max_relative = 1e-10);
        let (_, h4) = corrector_power(0.3, -4.0, 2.0, 1.0, &m).unwrap();
        let u4 = u_power_closed(0.3, -4.0, 2.0, 1.0, &m).unwrap();
        assert_relative_eq!(u4.value, h4 * 0.7, max_relative = 1e-9);
        assert!(u_power_closed(0.0, 1.0, 1.0, 1.0, &m).is_err());
    }

    #[test]
    fn fk_constant_rate() {
        let sol =
            FrictionlessSolution::new(mkt(), Payoff::zero(), LossModel::exponential(2.0).unwrap())
                .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let e = u_feynman_kac(
            0.0,
            100.0,
            -1.0,
            &sol,
            HConvention::Section6,
            200,
            &grid,
            &RngSpec::new(1),
        )
        .unwrap();
        let (_, h) = corrector_exponential(
            0.0,
            100.0,
            2.0,
            &mkt(),
            &Payoff::zero(),
            HConvention::Section6,
        )
        .unwrap();
        assert!((e.value - h).abs() < 1e-12);
        assert_eq!(e.method, Method::FkMc);
    }

    #[test]
    fn fk_power_tracks_closed_form() {
        let sol =
            FrictionlessSolution::new(mkt(), Payoff::zero(), LossModel::power(1.0, 1.0).unwrap())
                .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let e = u_feynman_kac(
            0.0,
            100.0,
            -1.0,
            &sol,
            HConvention::Section6,
            20_000,
            &grid,
            &RngSpec::new(2),
        )
        .unwrap();
        let c = u_power_closed(0.0, -1.0, 1.0, 1.0, &mkt()).unwrap();
        assert!(
            (e.value - c.value).abs() <= (3.0 * e.se).max(0.01 * c.value),
            "{e:?} vs {c:?}"
        );
    }

    #[test]
    fn surface_derivative_matches_difference() {
        let put = Payoff::put(100.0).unwrap();
        let surf = USurface::solve(
            0.0,
            100.0,
            1.0,
            HConvention::Section6,
            &mkt(),
            &put,
            &FdGrid::default(),
        )
        .unwrap();
        let (_, du) = surf.eval(0.3, 104.0);
        let fd = (surf.eval(0.3, 104.5).0 - surf.eval(0.3, 103.5).0) / 1.0;
        assert!((du - fd).abs() < 1e-2 * fd.abs().max(1.0), "{du} vs {fd}");
    }
}
