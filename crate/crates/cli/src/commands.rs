//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;

use losshedge::corrector::{corrector_at, HConvention};
use losshedge::experiments::{self, LossSpec, Prepared, Scenario};
use losshedge::frictionless::FrictionlessSolution;
use losshedge::hedge_sim::Epsilon;
use losshedge::report::ExperimentReport;
use losshedge::second_corrector::{u_fd_exponential, u_power_closed};

use crate::config::LoadedConfig;
use crate::CliError;

/// One line of the `price` table.
struct PriceLine {
    quantity: &'static str,
    convention: Option<HConvention>,
    eps: Option<f64>,
    value: f64,
}

/// `û(t₀, s₀, p₀)` given the loss rate `h` at the point.
fn second_corrector(sc: &Scenario, convention: HConvention, h: f64) -> losshedge::Result<f64> {
    let tau = sc.market.horizon - sc.t0;
    Ok(match sc.loss {
        LossSpec::Power { beta, kappa } => {
            u_power_closed(sc.t0, sc.p0, beta, kappa, &sc.market)?.value
        }
        LossSpec::Exponential { .. } if sc.payoff.is_zero() => h * tau,
        LossSpec::Exponential { .. } if tau == 0.0 => 0.0,
        LossSpec::Exponential { eta } => {
            u_fd_exponential(
                sc.t0, sc.s0, eta, convention, &sc.market, &sc.payoff, &sc.fd,
            )?
            .value
        }
    })
}

fn price_lines(cfg: &LoadedConfig, sc: &Scenario) -> losshedge::Result<Vec<PriceLine>> {
    let sol = FrictionlessSolution::new(sc.market, sc.payoff.clone(), sc.loss.model()?)?;
    let pt = sol.eval(sc.t0, sc.s0, sc.p0)?;
    let v = pt.pi - sc.x0.unwrap_or(pt.theta);
    let plain = |quantity, value| PriceLine {
        quantity,
        convention: None,
        eps: None,
        value,
    };
    let mut lines = vec![
        plain("pi", pt.pi),
        plain("theta", pt.theta),
        plain("hat_a", pt.hat_a),
        plain("delta", pt.delta),
        plain("v", v),
    ];
    let exponential = matches!(sc.loss, LossSpec::Exponential { .. });
    for conv in cfg.config.numeric.h_constant_convention.listed() {
        let c = corrector_at(&pt, sc.market.sigma, exponential, conv)?;
        let u = second_corrector(sc, conv, c.h)?;
        let tagged = |quantity, eps, value| PriceLine {
            quantity,
            convention: Some(conv),
            eps,
            value,
        };
        lines.push(tagged("xi_hat", None, c.xi_hat));
        lines.push(tagged("h", None, c.h));
        lines.push(tagged("u", None, u));
        for e in cfg.eps_values() {
            lines.push(tagged("prediction", Some(e), v + e * e * u));
        }
    }
    Ok(lines)
}

/// Prints `π, θ, â, δ, ξ̂, h, û` and `v + ε²û`, and writes the same table as CSV.
pub fn price(cfg: &LoadedConfig, out_dir: &Path) -> Result<bool, CliError> {
    let sc = cfg.scenario()?;
    let lines = price_lines(cfg, &sc)?;
    let mut csv = String::from("quantity,convention,eps,value\n");
    println!(
        "{:<12} {:<10} {:>8} {:>22}",
        "quantity", "convention", "eps", "value"
    );
    for l in &lines {
        let conv = l.convention.map(HConvention::name).unwrap_or("");
        let eps = l.eps.map(|e| e.to_string()).unwrap_or_default();
        println!(
            "{:<12} {:<10} {:>8} {:>22.12}",
            l.quantity, conv, eps, l.value
        );
        let _ = writeln!(csv, "{},{conv},{eps},{}", l.quantity, l.value);
    }
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{}_price_{}.csv", sc.id, sc.seed));
    std::fs::write(&path, csv)?;
    eprintln!("wrote {}", path.display());
    Ok(true)
}

fn finish(report: &ExperimentReport, out_dir: &Path) -> Result<bool, CliError> {
    let (json, csv) = report.write(out_dir)?;
    for (name, pass) in &report.flags {
        println!("{:<32} {}", name, if *pass { "PASS" } else { "FAIL" });
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    eprintln!("wrote {} and {}", json.display(), csv.display());
    Ok(report.all_pass())
}

fn prepared(cfg: &LoadedConfig) -> Result<Prepared, CliError> {
    Prepared::new(cfg.scenario()?).map_err(|e| cfg.attribute(e))
}

pub fn simulate(cfg: &LoadedConfig, out_dir: &Path, trace_paths: usize) -> Result<bool, CliError> {
    let eps = cfg.require_eps()?;
    let prep = prepared(cfg)?;
    let report = experiments::simulate_study(&prep, &eps).map_err(|e| cfg.attribute(e))?;
    if trace_paths > 0 {
        let mut csv = String::from("path,eps,t,S,X,Y,P,L_plus,L_minus,band_lo,band_hi\n");
        for &e in &eps {
            let traces = experiments::trace_paths(&prep, Epsilon::new(e)?, trace_paths)?;
            for (id, rows) in traces.iter().enumerate() {
                for r in rows {
                    let _ = writeln!(
                        csv,
                        "{id},{e},{},{},{},{},{},{},{},{},{}",
                        r.t, r.s, r.x, r.y, r.p, r.l_plus, r.l_minus, r.band_lo, r.band_hi
                    );
                }
            }
        }
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(format!("{}_traces.csv", report.file_stem()));
        std::fs::write(&path, csv)?;
        eprintln!("wrote {}", path.display());
    }
    finish(&report, out_dir)
}

pub fn converge(cfg: &LoadedConfig, out_dir: &Path) -> Result<bool, CliError> {
    let eps = cfg.require_eps()?;
    let prep = prepared(cfg)?;
    let report = experiments::convergence_study(&prep, &eps).map_err(|e| cfg.attribute(e))?;
    finish(&report, out_dir)
}

pub fn indiff(cfg: &LoadedConfig, out_dir: &Path) -> Result<bool, CliError> {
    let eps = cfg.require_eps()?;
    let prep = prepared(cfg)?;
    let report =
        experiments::indifference_asymptotics(&prep, &eps).map_err(|e| cfg.attribute(e))?;
    finish(&report, out_dir)
}

pub fn calibrate(cfg: &LoadedConfig, out_dir: &Path) -> Result<bool, CliError> {
    let eps = cfg.require_eps()?;
    let prep = prepared(cfg)?;
    let report = experiments::calibration_study(&prep, &eps).map_err(|e| cfg.attribute(e))?;
    finish(&report, out_dir)
}
