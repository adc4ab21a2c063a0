//! One function per experiment kind. Each returns its table, its checks and
//! a JSON value with the numbers behind them.

use darksol::diagnostics::{
    alpha_scaling, chain_perturbation, crossterm_bound_check, f_expansion_check, min_nu, polynomial_crossterm_check, run_chain,
    stability_report, ChainExperiment, ChainRun, Polynomial,
};
use darksol::evolution::Evolver;
use darksol::field_ops::{inner, momentum};
use darksol::linearization::{assemble_hc, constrained_coercivity, essential_spectrum_floor, far_field_floor, low_spectrum};
use darksol::modulation::{build_chain, ChainSpec, Tracker};
use darksol::profile::{build_profile, default_step, momentum_derivative, soliton_momentum};
use darksol::{FieldOps, Grid, Nonlinearity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{AppendixParams, ChainStabilityParams, EvolveParams, ProfileParams, SpectrumParams};
use crate::output::{indexed, Check, Table};

/// Relative gap allowed between the grid momentum and the quadrature value.
pub const MOMENTUM_TOL: f64 = 1e-6;

pub struct Outcome {
    pub tables: Vec<(Option<&'static str>, Table)>,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
}

pub fn profile(nl: &Nonlinearity, grid: &Grid, p: &ProfileParams) -> darksol::Result<Outcome> {
    let prof = build_profile(nl, p.speed, grid)?;
    let mut table = Table::new(["x", "eta", "v"]);
    for j in 0..grid.n {
        table.push(vec![grid.x(j), prof.eta[j], prof.v[j]]);
    }
    let p_quad = soliton_momentum(nl, p.speed)?;
    let p_grid = momentum(&prof.field());
    let dp = momentum_derivative(nl, p.speed, default_step(nl, p.speed)?)?;
    let rel = (p_grid - p_quad).abs() / p_quad.abs();
    let checks = vec![Check::new(
        "momentum consistency",
        rel <= MOMENTUM_TOL,
        format!("grid {p_grid:.12e} vs quadrature {p_quad:.12e} (rel {rel:.2e})"),
    )];
    let results = json!({
        "c": p.speed,
        "xi_c": prof.xi_c,
        "nu_c": prof.nu_c,
        "tail_floor": prof.tail_floor,
        "momentum": p_quad,
        "momentum_grid": p_grid,
        "dp_dc": dp.dp_dc,
        "split_term": dp.split_term,
    });
    Ok(Outcome { tables: vec![(None, table)], checks, results })
}

pub fn spectrum(nl: &Nonlinearity, grid: &Grid, p: &SpectrumParams) -> darksol::Result<Outcome> {
    let prof = build_profile(nl, p.speed, grid)?;
    let op = assemble_hc(nl, &prof)?;
    let eig = low_spectrum(&op, p.eigenvalues)?;
    let dq = prof.soliton.sample_dx(grid, 0.0);
    let mut table = Table::new(["index", "eigenvalue", "kernel_cosine"]);
    let mut cosines = Vec::new();
    for (i, e) in eig.iter().enumerate() {
        let cos = inner(&e.vector, &dq).abs() / (inner(&e.vector, &e.vector) * inner(&dq, &dq)).sqrt();
        cosines.push(cos);
        table.push(vec![i as f64, e.value, cos]);
    }
    let negative = eig.iter().filter(|e| e.value < -1e-6).count();
    let kernel: Vec<usize> = (0..eig.len()).filter(|&i| eig[i].value.abs() < 1e-4).collect();
    let aligned = kernel.len() == 1 && cosines[kernel[0]] > 0.999;
    let l_c = constrained_coercivity(&op, &prof.soliton, true)?;
    let c_s = nl.sound_speed()?;
    let checks = vec![
        Check::new("single negative direction", negative == 1, format!("{negative} eigenvalues below -1e-6")),
        Check::new(
            "kernel spanned by dQ/dx",
            aligned,
            format!(
                "{} eigenvalues of magnitude below 1e-4{}",
                kernel.len(),
                kernel.first().map_or(String::new(), |&i| format!(", cosine {:.7}", cosines[i]))
            ),
        ),
        Check::new("constrained coercivity", l_c > 0.0, format!("l_c = {l_c:.6e}")),
    ];
    let results = json!({
        "c": p.speed,
        "eigenvalues": eig.iter().map(|e| e.value).collect::<Vec<_>>(),
        "kernel_cosines": cosines,
        "l_c": l_c,
        "essential_spectrum_floor": essential_spectrum_floor(c_s, p.speed),
        "far_field_floor": far_field_floor(c_s, p.speed),
    });
    Ok(Outcome { tables: vec![(None, table)], checks, results })
}

pub fn evolve(nl: &Nonlinearity, grid: &Grid, seed: u64, p: &EvolveParams) -> darksol::Result<Outcome> {
    let ops = FieldOps::new(nl.clone(), *grid);
    let n = p.chain.len();
    let q0 = build_chain(&p.chain, nl, grid)?.add(&chain_perturbation(&ops, &p.chain.positions, p.alpha0, seed));
    q0.check_vacuum()?;
    let ev = Evolver::new(ops.clone());
    let mut cfg = p.evolution;
    let (steps, dt) = cfg.schedule(grid.dx());
    cfg.snapshot_every = ((p.snapshot_dt / dt).round() as usize).max(1);

    let mut header = vec!["t".to_string(), "energy".into(), "momentum".into(), "max_eta".into()];
    if p.track {
        header.extend(indexed("a", n));
        header.extend(indexed("c", n));
        header.push("eps_xnorm".into());
    }
    let mut table = Table::new(header);
    let (e0, p0) = (ops.energy(&q0)?, momentum(&q0));
    let (mut e_drift, mut p_drift) = (0.0f64, 0.0f64);
    let mut tracker = p.track.then(|| Tracker::new(&ops, ChainSpec::new(p.chain.speeds.clone(), p.chain.positions.clone(), 0.0)));
    let mut track_error = None;
    ev.integrate(&q0, &cfg, |t, f| {
        let (e, m) = (ops.energy(f)?, momentum(f));
        e_drift = e_drift.max(((e - e0) / e0).abs());
        p_drift = p_drift.max(((m - p0) / p0).abs());
        let mut row = vec![t, e, m, f.max_eta()];
        if p.track {
            match tracker.as_mut().map(|tr| tr.push(t, f)) {
                Some(Ok(fit)) => {
                    row.extend(&fit.a);
                    row.extend(&fit.c);
                    row.push(fit.eps_xnorm);
                }
                Some(Err(err)) => {
                    track_error = Some(format!("t = {t}: {err}"));
                    tracker = None;
                    row.extend(std::iter::repeat_n(f64::NAN, 2 * n + 1));
                }
                None => row.extend(std::iter::repeat_n(f64::NAN, 2 * n + 1)),
            }
        }
        table.push(row);
        Ok(())
    })?;
    let defect = tracker.map(|t| t.finish().max_modulation_defect());

    let tol = p.drift_tolerance;
    let mut checks = vec![
        Check::new("energy conservation", e_drift < tol, format!("max relative drift {e_drift:.3e} (tolerance {tol:e})")),
        Check::new("momentum conservation", p_drift < tol, format!("max relative drift {p_drift:.3e} (tolerance {tol:e})")),
    ];
    if p.track {
        let detail = match (&track_error, defect) {
            (Some(e), _) => format!("lost at {e}"),
            (None, Some(d)) => format!("max |a'-c| + |c'| = {d:.3e}"),
            (None, None) => String::new(),
        };
        checks.push(Check::new("modulation tracking", track_error.is_none(), detail));
    }
    let results = json!({
        "steps": steps,
        "dt": dt,
        "energy_drift": e_drift,
        "momentum_drift": p_drift,
        "max_modulation_defect": defect,
        "track_error": track_error,
    });
    Ok(Outcome { tables: vec![(None, table)], checks, results })
}

fn chain_table(run: &ChainRun, n: usize) -> Table {
    let mut header: Vec<String> =
        ["t", "energy", "momentum", "g", "eps_xnorm", "max_eta", "dist_star"].iter().map(|s| s.to_string()).collect();
    header.extend(indexed("a", n));
    header.extend(indexed("c", n));
    header.extend(indexed("p_tilde", n));
    let mut table = Table::new(header);
    for r in &run.records {
        let mut row = vec![r.t, r.energy, r.momentum, r.g, r.eps_xnorm, r.max_eta, r.dist_star];
        row.extend(&r.a);
        row.extend(&r.c);
        row.extend(&r.p_tilde);
        table.push(row);
    }
    table
}

pub fn chain_stability(nl: &Nonlinearity, grid: &Grid, seed: u64, p: &ChainStabilityParams) -> darksol::Result<Outcome> {
    let ops = FieldOps::new(nl.clone(), *grid);
    let rates = match p.rates {
        Some(r) => r,
        None => darksol::localization::CutoffRates::default_for(min_nu(nl, &p.chain.speeds)?),
    };
    let exp = ChainExperiment {
        chain: p.chain.clone(),
        alpha0: p.alpha0,
        seed,
        rates,
        extra_rates: p.extra_rates.clone(),
        evolution: p.evolution,
        snapshot_dt: p.snapshot_dt,
    };
    let n = p.chain.len();
    let c_star = &p.chain.speeds;
    let sigma = p.chain.sigma_star();
    let l0 = p.chain.min_gap;
    let run = run_chain(&ops, &exp)?;
    let stab = stability_report(&run.records, &run.track, c_star, p.alpha0, l0, rates.tau0);
    let reached = run.records.last().map_or(0.0, |r| r.t);
    let complete = reached >= p.evolution.t_end - 1e-9 && run.track.error.is_none();

    let mut checks = vec![Check::new(
        "orbital stability",
        complete && stab.verdict == Some(true),
        format!(
            "sup |Q - R| = {:.3e}, {} x (alpha0 + exp(-tau0 L/2)) = {:.3e}, reached t = {reached}",
            stab.sup_distance,
            darksol::diagnostics::SAFETY,
            darksol::diagnostics::SAFETY * stab.k_value
        ),
    )];
    let mono = if run.records.len() >= 2 && n >= 2 { Some(run.monotonicity(sigma, rates.tau0)?) } else { None };
    if let Some(m) = &mono {
        let worst = m.tilde.iter().map(|v| v.extreme_increment).fold(f64::INFINITY, f64::min);
        checks.push(Check::new(
            "monotonicity",
            m.pass,
            format!("min increment of p~_k (k >= 2) {worst:.3e}, max increment of G {:.3e}", m.g.extreme_increment),
        ));
        let r0 = &run.records[0];
        let gap_ok = run.records.iter().all(|r| (1..n).all(|k| r.a[k] - r.a[k - 1] >= r0.a[k] - r0.a[k - 1] + 0.9 * sigma * r.t));
        checks.push(Check::new("gap growth", gap_ok, format!("a_(k+1) - a_k >= gap(0) + 0.9 sigma* t with sigma* = {sigma}")));
    }
    let extra: Vec<serde_json::Value> = (0..p.extra_rates.len())
        .map(|i| {
            let r = p.extra_rates[i];
            let m = if run.records.len() >= 2 && n >= 2 { Some(run.extra_monotonicity(i, sigma, r.tau0)?) } else { None };
            Ok(json!({ "rates": r, "monotonicity": m }))
        })
        .collect::<darksol::Result<_>>()?;

    let mut tables = vec![(None, chain_table(&run, n))];
    let mut half_json = serde_json::Value::Null;
    if p.halve_alpha {
        let half = run_chain(&ops, &ChainExperiment { alpha0: 0.5 * p.alpha0, ..exp })?;
        let hs = stability_report(&half.records, &half.track, c_star, 0.5 * p.alpha0, l0, rates.tau0);
        let ratio = alpha_scaling(&stab, &hs);
        checks.push(Check::new(
            "alpha scaling",
            (0.3..=0.8).contains(&ratio) && half.track.error.is_none(),
            format!("sup distance ratio {ratio:.3} for alpha0 -> alpha0/2"),
        ));
        half_json = json!({ "stability": hs, "ratio": ratio });
        tables.push((Some("half"), chain_table(&half, n)));
    }
    let results = json!({
        "rates": rates,
        "stability": stab,
        "monotonicity": mono,
        "extra_monotonicity": extra,
        "half_alpha": half_json,
        "track_error": run.track.error.as_ref().map(|e| e.to_string()),
        "max_modulation_defect": run.track.max_modulation_defect(),
    });
    Ok(Outcome { tables, checks, results })
}

pub fn verify_appendix(nl: &Nonlinearity, grid: &Grid, seed: u64, p: &AppendixParams) -> darksol::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..p.draws {
        let a: f64 = rng.gen_range(-50.0..50.0);
        let d: f64 = rng.gen_range(1e-3..60.0);
        let q = if rng.gen_bool(0.2) { f64::INFINITY } else { rng.gen_range(1.0..10.0) };
        let r = crossterm_bound_check(a, a + d, rng.gen_range(0.01..5.0), rng.gen_range(0.01..5.0), q)?;
        failures += usize::from(!r.pass);
        if r.bound > 0.0 {
            worst = worst.max(r.computed / r.bound);
        }
    }
    let s22 = polynomial_crossterm_check(nl, &p.speeds, &Polynomial::s(2, 2), p.p, &p.gaps, grid)?;
    let b2 = polynomial_crossterm_check(nl, &p.speeds, &Polynomial::b(2), p.p, &p.gaps, grid)?;
    let fexp = f_expansion_check(nl, &p.f_speeds, p.p, &p.gaps, grid)?;

    let mut table = Table::new(["gap", "s22_norm", "b2_norm", "f_expansion_norm"]);
    for (i, &l) in p.gaps.iter().enumerate() {
        table.push(vec![l, s22.norms[i], b2.norms[i], fexp.norms[i]]);
    }
    let rate = |name: &str, f: &darksol::diagnostics::DecayFit| {
        Check::new(name, f.pass, format!("fitted rate {:.4} = {:.3} x min nu", f.rate, f.rate / f.min_nu))
    };
    let checks = vec![
        Check::new(
            "cross-term bound",
            failures == 0,
            format!("{failures}/{} draws exceed the bound, worst computed/bound {worst:.4}", p.draws),
        ),
        rate("S22 decay", &s22),
        rate("B2 decay", &b2),
        rate("F-expansion decay", &fexp),
    ];
    let results = json!({
        "draws": p.draws,
        "bound_failures": failures,
        "worst_bound_ratio": worst,
        "s22": s22,
        "b2": b2,
        "f_expansion": fexp,
    });
    Ok(Outcome { tables: vec![(None, table)], checks, results })
}
