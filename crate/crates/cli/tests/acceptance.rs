//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use losshedge::corrector::{corrector_at, HConvention};
use losshedge::experiments::{
    calibration_study, convergence_study, indifference_asymptotics, simulate_study, LossSpec,
    PathScaling, Prepared, Scenario,
};
use losshedge::frictionless::{
    power_m, price_duality, price_exponential, price_power, FrictionlessSolution, LossModel,
    PricingPath,
};
use losshedge::hedge_sim::CapitalRule;
use losshedge::market::{MarketParams, Payoff, RngSpec, TimeGrid};
use losshedge::second_corrector::{u_fd_exponential, u_feynman_kac, u_power_closed, FdGrid};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn criterion(name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let detail = format!("{detail} [{:.1} s]", start.elapsed().as_secs_f64());
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn market(lambda: f64, sigma: f64, horizon: f64) -> MarketParams {
    MarketParams::new(lambda, sigma, horizon).unwrap()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn corrector_exactness() -> Result<(bool, String), String> {
    let start = Instant::now();
    let m = market(0.3, 0.2, 1.0);
    let exp = FrictionlessSolution::new(
        m,
        Payoff::put(100.0).map_err(err)?,
        LossModel::exponential(1.0).map_err(err)?,
    )
    .map_err(err)?;
    let pow =
        FrictionlessSolution::new(m, Payoff::zero(), LossModel::power(1.0, 1.0).map_err(err)?)
            .map_err(err)?;
    let times = [0.0, 0.2, 0.4, 0.6, 0.8];
    let mut points = Vec::new();
    for &t in &times {
        for s in [80.0, 90.0, 100.0, 110.0, 120.0] {
            points.push((exp.eval(t, s, -1.0).map_err(err)?, true));
        }
        for p in [-0.5, -1.0, -2.0, -4.0, -8.0] {
            points.push((pow.eval(t, 100.0, p).map_err(err)?, false));
        }
    }
    let (mut worst_res, mut worst_paste, mut shape_ok) = (0.0_f64, 0.0_f64, true);
    for (pt, exponential) in &points {
        let c = corrector_at(pt, m.sigma, *exponential, HConvention::Section6).map_err(err)?;
        let curv = pt.curvature_ratio();
        let scale = c.h.max(1.0);
        for k in 0..200 {
            let xi = -2.0 * c.xi_hat + 4.0 * c.xi_hat * (k as f64 + 0.5) / 200.0;
            let r = c.residual(xi, curv, m.sigma, pt.delta);
            if xi.abs() < c.xi_hat {
                worst_res = worst_res.max(r.abs() / scale);
            } else if r > 1e-12 * scale {
                shape_ok = false;
            }
            let w = c.varpi(xi);
            shape_ok &= w >= 0.0 && c.varpi_xi(xi).abs() <= 1.0 && w.abs() <= xi.abs();
        }
        shape_ok &= c.varpi(0.0) == 0.0;
        for edge in [c.xi_hat, -c.xi_hat] {
            let inner = edge.next_toward(0.0);
            let paste = (c.varpi(inner) - c.varpi(edge)).abs()
                + (c.varpi_xi(inner) - c.varpi_xi(edge)).abs()
                + (c.varpi_xixi(inner) - c.varpi_xixi(edge)).abs() * c.xi_hat;
            worst_paste = worst_paste.max(paste);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_res <= 1e-12 && worst_paste <= 1e-12 && shape_ok && secs < 1.0;
    Ok((
        pass,
        format!(
            "{} points x 200 xi; max relative residual {worst_res:.2e}, pasting gap {worst_paste:.2e}, profile bounds {}",
            points.len(),
            if shape_ok { "hold" } else { "violated" }
        ),
    ))
}

trait NextToward {
    fn next_toward(self, target: f64) -> f64;
}

impl NextToward for f64 {
    fn next_toward(self, target: f64) -> f64 {
        if self > target {
            self.next_down()
        } else {
            self.next_up()
        }
    }
}

fn duality_oracle() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut worst_m = 0.0_f64;
    let put = Payoff::put(100.0).map_err(err)?;
    for lambda in [0.0, 0.3, 0.6] {
        let m = market(lambda, 0.25, 1.0);
        for t in [0.0, 0.5, 0.9] {
            for p in [-0.5, -1.0, -3.0] {
                for eta in [0.5, 2.0] {
                    let loss = LossModel::exponential(eta).map_err(err)?;
                    let d = price_duality(t, 100.0, p, &loss, &m, &put, 128).map_err(err)?;
                    let c = price_exponential(t, 100.0, p, eta, &m, &put).map_err(err)?;
                    worst = worst.max((d - c).abs());
                }
                for beta in [0.5, 1.0, 2.0] {
                    let loss = LossModel::power(beta, 1.0).map_err(err)?;
                    let d =
                        price_duality(t, 100.0, p, &loss, &m, &Payoff::zero(), 128).map_err(err)?;
                    let (c, _) = price_power(t, p, beta, 1.0, &m, &Payoff::zero()).map_err(err)?;
                    worst = worst.max((d - c).abs());
                    let m_quad = (d + 1.0) * (-p).powf(1.0 / beta);
                    worst_m = worst_m.max((m_quad - power_m(t, beta, &m)).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-8 && worst_m <= 1e-8 && secs < 5.0,
        format!("3x3x3 grid, max price gap {worst:.2e}, max m(t) gap {worst_m:.2e}"),
    ))
}

fn relation_residual() -> Result<(bool, String), String> {
    let m = market(0.3, 0.2, 1.0);
    let solutions = [
        FrictionlessSolution::new(m, Payoff::zero(), LossModel::exponential(2.0).map_err(err)?)
            .map_err(err)?,
        FrictionlessSolution::new(
            m,
            Payoff::put(100.0).map_err(err)?,
            LossModel::exponential(1.0).map_err(err)?,
        )
        .map_err(err)?,
        FrictionlessSolution::new(
            m,
            Payoff::call_spread(95.0, 110.0).map_err(err)?,
            LossModel::exponential(1.0).map_err(err)?,
        )
        .map_err(err)?,
        FrictionlessSolution::new(m, Payoff::zero(), LossModel::power(1.0, 1.0).map_err(err)?)
            .map_err(err)?,
        FrictionlessSolution::new(m, Payoff::zero(), LossModel::power(2.0, 0.5).map_err(err)?)
            .map_err(err)?,
    ];
    let mut worst = 0.0_f64;
    let mut count = 0;
    for sol in solutions {
        for path in [PricingPath::ClosedForm, PricingPath::Duality] {
            let sol = sol.clone().with_path(path).map_err(err)?;
            for t in [0.0, 0.3, 0.6, 0.9] {
                for s in [80.0, 100.0, 125.0] {
                    for p in [-0.4, -1.0, -2.5] {
                        let pt = sol.eval(t, s, p).map_err(err)?;
                        worst = worst.max(pt.relation_residual(m.sigma).abs());
                        count += 1;
                    }
                }
            }
        }
    }
    Ok((
        worst <= 1e-10,
        format!("{count} points over closed-form and duality paths, max |residual| {worst:.2e}"),
    ))
}

fn second_corrector_cross_method() -> Result<(bool, String), String> {
    let start = Instant::now();
    let m = market(0.3, 0.2, 1.0);
    let put = Payoff::put(100.0).map_err(err)?;
    let exp = FrictionlessSolution::new(m, put.clone(), LossModel::exponential(1.0).map_err(err)?)
        .map_err(err)?;
    let grid = TimeGrid::new(0.0, 1.0, 400).map_err(err)?;
    let fk = u_feynman_kac(
        0.0,
        100.0,
        -1.0,
        &exp,
        HConvention::Section6,
        100_000,
        &grid,
        &RngSpec::new(101),
    )
    .map_err(err)?;
    let fd = u_fd_exponential(
        0.0,
        100.0,
        1.0,
        HConvention::Section6,
        &m,
        &put,
        &FdGrid::default(),
    )
    .map_err(err)?;
    let tol_put = (3.0 * fk.se).max(0.01 * fd.value.abs());
    let ok_put = (fk.value - fd.value).abs() <= tol_put;

    let pow =
        FrictionlessSolution::new(m, Payoff::zero(), LossModel::power(1.0, 1.0).map_err(err)?)
            .map_err(err)?;
    let fk_p = u_feynman_kac(
        0.0,
        100.0,
        -1.0,
        &pow,
        HConvention::Section6,
        100_000,
        &grid,
        &RngSpec::new(102),
    )
    .map_err(err)?;
    let closed = u_power_closed(0.0, -1.0, 1.0, 1.0, &m).map_err(err)?;
    let tol_pow = (3.0 * fk_p.se).max(0.01 * closed.value.abs());
    let ok_pow = (fk_p.value - closed.value).abs() <= tol_pow;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        ok_put && ok_pow && secs < 60.0,
        format!(
            "put fk {:.4} (se {:.4}) vs fd {:.4}, tol {:.4}; power fk {:.6e} (se {:.1e}) vs closed {:.6e}, tol {:.1e}",
            fk.value, fk.se, fd.value, tol_put, fk_p.value, fk_p.se, closed.value, tol_pow
        ),
    ))
}

fn exponential_zero() -> Scenario {
    let mut sc = Scenario::new(
        "acc_exp_zero",
        market(0.3, 0.2, 1.0),
        LossSpec::Exponential { eta: 2.0 },
        Payoff::zero(),
    );
    sc.capital_rule = CapitalRule::Prop61;
    sc.n_paths = 100_000;
    sc.n_steps = 2000;
    sc.seed = 1;
    sc
}

fn power_zero() -> Scenario {
    let mut sc = Scenario::new(
        "acc_power_zero",
        market(0.3, 0.2, 1.0),
        LossSpec::Power {
            beta: 1.0,
            kappa: 1.0,
        },
        Payoff::zero(),
    );
    sc.n_paths = 100_000;
    sc.n_steps = 2000;
    sc.seed = 2;
    sc
}

fn attainment(sc: Scenario) -> Result<(bool, String), String> {
    let start = Instant::now();
    let prep = Prepared::new(sc).map_err(err)?;
    let report = calibration_study(&prep, &[0.2, 0.1, 0.05]).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let pass = report.flags.get("constraint_attainment") == Some(&true)
        && report.flags.get("out_of_sample") == Some(&true)
        && secs < 300.0;
    let summary: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.quantity == "calibrated_cushion" || r.quantity == "out_of_sample_loss")
        .map(|r| {
            if r.quantity == "calibrated_cushion" {
                format!("eps {} cushion {}", r.eps, r.estimate)
            } else {
                format!("fresh E[loss] {:.5} (se {:.5})", r.estimate, r.se)
            }
        })
        .collect();
    Ok((pass, summary.join(", ")))
}

fn expansion_convergence() -> Result<(bool, String), String> {
    let start = Instant::now();
    let mut sc = Scenario::new(
        "acc_convergence",
        market(0.3, 1.0, 2.0),
        LossSpec::Exponential { eta: 1.0 },
        Payoff::zero(),
    );
    sc.capital_rule = CapitalRule::Prop62;
    sc.n_paths = 25_000;
    sc.path_scaling = PathScaling::InverseSquare { eps_ref: 0.2 };
    sc.n_steps = 4000;
    sc.seed = 3;
    let prep = Prepared::new(sc).map_err(err)?;
    let report = convergence_study(&prep, &[0.2, 0.14, 0.1, 0.07, 0.05]).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let pass = report.flags.get("expansion_convergence_trend") == Some(&true)
        && report.flags.get("expansion_convergence_final") == Some(&true)
        && secs < 1800.0;
    let devs: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.quantity == "premium")
        .map(|r| format!("{}: {:.4}±{:.4}", r.eps, r.estimate, r.se))
        .collect();
    Ok((
        pass,
        format!("u = {:.5}; premium {}", prep.u, devs.join(", ")),
    ))
}

fn ledger_exactness() -> Result<(bool, String), String> {
    let mut details = Vec::new();
    let mut pass = true;
    let mut put = Scenario::new(
        "acc_ledger_put",
        market(0.3, 0.2, 1.0),
        LossSpec::Exponential { eta: 1.0 },
        Payoff::put(100.0).map_err(err)?,
    );
    put.capital_rule = CapitalRule::Prop62;
    put.delta_min = 1e-6;
    put.n_steps = 1000;
    for mut sc in [exponential_zero(), power_zero(), put] {
        sc.n_paths = 10_000;
        let id = sc.id.clone();
        let prep = Prepared::new(sc).map_err(err)?;
        let report = simulate_study(&prep, &[0.2, 0.1, 0.05]).map_err(err)?;
        let keys = [
            "ledger_exactness",
            "band_containment",
            "martingale_bias",
            "martingale_refinement",
        ];
        let ok = keys.iter().all(|k| report.flags.get(*k) == Some(&true));
        let failed: Vec<&str> = keys
            .iter()
            .copied()
            .filter(|k| report.flags.get(*k) != Some(&true))
            .collect();
        pass &= ok;
        details.push(if ok {
            format!("{id} ok")
        } else {
            format!("{id} failed {failed:?}")
        });
    }
    Ok((pass, details.join(", ")))
}

fn indifference() -> Result<(bool, String), String> {
    let mut sc = Scenario::new(
        "acc_put_indiff",
        market(0.3, 0.2, 1.0),
        LossSpec::Exponential { eta: 1.0 },
        Payoff::put(100.0).map_err(err)?,
    );
    sc.capital_rule = CapitalRule::Prop62;
    sc.delta_min = 1e-6;
    sc.n_paths = 20_000;
    sc.n_steps = 1000;
    sc.seed = 4;
    let prep = Prepared::new(sc).map_err(err)?;
    let report = indifference_asymptotics(&prep, &[0.2, 0.14, 0.1, 0.07, 0.05]).map_err(err)?;
    let both = report.derived.contains_key("reference_section6")
        && report.derived.contains_key("reference_eq45");
    let pass = report.flags.get("indifference_trend") == Some(&true) && both;
    let devs: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.quantity == "deviation")
        .map(|r| format!("{}: {:.3}", r.eps, r.estimate))
        .collect();
    Ok((
        pass,
        format!(
            "references section6 {:.4}, eq45 {:.4}; deviation {}",
            report.derived["reference_section6"],
            report.derived["reference_eq45"],
            devs.join(", ")
        ),
    ))
}

const SMALL: &str = r#"id = "det"

[market]
lambda = 0.3
sigma = 0.2
T = 1.0

[model]
kind = "exponential"
eta = 1.0

[numeric]
eps_list = [0.2, 0.14, 0.1]
n_paths = 600
n_steps = 80
seed = 9
capital_rule = "prop62"
delta_min = 1e-6
"#;

fn run_all(config: &Path, out: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let commands: [(&str, &[&str]); 5] = [
        ("price", &[]),
        ("simulate", &["--trace-paths", "2"]),
        ("converge", &[]),
        ("calibrate", &[]),
        (
            "indiff",
            &["--set", "payoff.kind=put", "--set", "payoff.strike=100"],
        ),
    ];
    for (cmd, extra) in commands {
        let status = Command::new(env!("CARGO_BIN_EXE_losshedge"))
            .arg(cmd)
            .arg("--config")
            .arg(config)
            .args(["--threads", threads, "--out-dir"])
            .arg(out)
            .args(extra)
            .output()
            .map_err(err)?;
        if !matches!(status.status.code(), Some(0 | 1)) {
            return Err(format!(
                "{cmd} failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .map_err(err)?
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn determinism() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("det.toml");
    std::fs::write(&config, SMALL).map_err(err)?;
    let a = run_all(&config, &dir.path().join("a"), "1")?;
    let b = run_all(&config, &dir.path().join("b"), "4")?;
    let c = run_all(&config, &dir.path().join("c"), "1")?;
    let same = a == b && a == c;
    Ok((
        same && a.len() == 10,
        format!(
            "{} report files identical across reruns and 1 vs 4 threads: {same}",
            a.len()
        ),
    ))
}

type Check = Box<dyn FnOnce() -> Result<(bool, String), String>>;

fn main() {
    let checks: Vec<(&'static str, Check)> = vec![
        ("corrector exactness", Box::new(corrector_exactness)),
        ("duality oracle", Box::new(duality_oracle)),
        ("frictionless relation", Box::new(relation_residual)),
        (
            "second corrector cross-method",
            Box::new(second_corrector_cross_method),
        ),
        (
            "constraint attainment (exponential)",
            Box::new(|| attainment(exponential_zero())),
        ),
        (
            "constraint attainment (power)",
            Box::new(|| attainment(power_zero())),
        ),
        ("expansion convergence", Box::new(expansion_convergence)),
        ("ledger exactness", Box::new(ledger_exactness)),
        ("indifference asymptotics", Box::new(indifference)),
        ("determinism", Box::new(determinism)),
    ];
    // Positional arguments act as name filters, as with the default harness.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let outcomes: Vec<Outcome> = checks
        .into_iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .map(|(name, f)| criterion(name, f))
        .collect();
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if !failed.is_empty() {
        for o in failed {
            eprintln!("failed: {} ({})", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
