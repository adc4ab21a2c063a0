//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::time::Instant;

use darksol::diagnostics::{
    alpha_scaling, crossterm_bound_check, expansion_check, f_expansion_check, fitted_decay_rate, fitted_power, min_nu,
    polynomial_crossterm_check, project_orthogonal, run_chain, stability_report, virial_identity_check, ChainExperiment, ChainRun,
    Polynomial, VirialCutoff, VIRIAL_DT,
};
use darksol::evolution::{EvolutionConfig, Evolver};
use darksol::field_ops::{inner, momentum};
use darksol::linearization::{assemble_hc, constrained_coercivity, essential_spectrum_floor, low_spectrum};
use darksol::localization::{build_cutoffs, CutoffRates};
use darksol::modulation::{build_chain, ChainSpec, Tracker};
use darksol::profile::{build_profile, default_step, momentum_derivative, soliton_momentum, Soliton};
use darksol::{FieldOps, Grid, HydroField, Nonlinearity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn gp() -> Nonlinearity {
    Nonlinearity::gross_pitaevskii()
}

fn speed_for_nu(nu: f64) -> f64 {
    (2.0 - nu * nu).sqrt()
}

fn profile_oracle() -> Outcome {
    let start = Instant::now();
    let g = Grid::new(4096, 200.0).unwrap();
    let p = build_profile(&gp(), 1.0, &g).unwrap();
    let mut err: f64 = 0.0;
    for j in 0..g.n {
        let x = g.x(j);
        if x.abs() <= 20.0 {
            let s = 1.0 / (0.5 * x).cosh();
            err = err.max((p.eta[j] - 0.5 * s * s).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (err < 1e-8 && secs < 1.0, format!("max error {err:.2e}, {secs:.2} s"))
}

fn transonic_momentum() -> Outcome {
    let start = Instant::now();
    let nus = [0.3, 0.2, 0.1, 0.05];
    let c_s = 2f64.sqrt();
    let k = -6.0;
    let ratios: Vec<f64> =
        nus.iter().map(|&nu| soliton_momentum(&gp(), speed_for_nu(nu)).unwrap() * k * k / (6.0 * c_s * nu * nu * nu)).collect();
    let monotone = ratios.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs());
    let last = (ratios[3] - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();
    (monotone && last < 0.05 && secs < 5.0, format!("ratios {ratios:.4?}, {secs:.2} s"))
}

fn transonic_dp_dc() -> Outcome {
    let nus = [0.3, 0.2, 0.1, 0.05];
    let mut ratios = Vec::new();
    let mut negative = true;
    for &nu in &nus {
        let c = speed_for_nu(nu);
        let d = momentum_derivative(&gp(), c, default_step(&gp(), c).unwrap()).unwrap().dp_dc;
        negative &= d < 0.0;
        // −18c_s²ν/k² = −ν for GP
        ratios.push(d / (-nu));
    }
    for c in [0.3, 0.6, 0.9, 1.2, 1.35] {
        negative &= momentum_derivative(&gp(), c, default_step(&gp(), c).unwrap()).unwrap().dp_dc < 0.0;
    }
    let last = (ratios[3] - 1.0).abs();
    (last < 0.05 && negative, format!("ratios {ratios:.4?}, all negative: {negative}"))
}

fn spectral_structure() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for c in [1.2, 1.3] {
        let mut lcs = Vec::new();
        for n in [2048usize, 4096] {
            let g = Grid::new(n, 200.0).unwrap();
            let p = build_profile(&gp(), c, &g).unwrap();
            let op = assemble_hc(&gp(), &p).unwrap();
            if n == 2048 {
                let eig = low_spectrum(&op, 4).unwrap();
                let negative = eig.iter().filter(|e| e.value < -1e-6).count();
                let dq = p.soliton.sample_dx(&g, 0.0);
                let kernel: Vec<_> = eig.iter().filter(|e| e.value.abs() < 1e-4).collect();
                let cosine = kernel
                    .first()
                    .map(|e| inner(&e.vector, &dq).abs() / (inner(&e.vector, &e.vector) * inner(&dq, &dq)).sqrt())
                    .unwrap_or(0.0);
                ok &= negative == 1 && kernel.len() == 1 && cosine > 0.999;
                notes.push(format!("c={c}: negative {negative}, kernel {} (cos {cosine:.7})", kernel.len()));
            }
            lcs.push(constrained_coercivity(&op, &p.soliton, true).unwrap());
        }
        let stable = lcs[0] > 0.0 && lcs[1] > 0.0 && ((lcs[1] - lcs[0]) / lcs[0]).abs() < 0.1;
        ok &= stable;
        notes.push(format!("l_c {:.5} -> {:.5}", lcs[0], lcs[1]));
    }
    let floor = essential_spectrum_floor(2f64.sqrt(), 1.0);
    let exact = 1.0 / (3.0 + 5f64.sqrt());
    // c_s² = (√2)² is 2 only up to one rounding, so allow a few ulps
    ok &= (floor - exact).abs() <= 4.0 * f64::EPSILON * exact;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    (ok, format!("{}; floor {floor:e} vs {exact:e}; {secs:.1} s", notes.join("; ")))
}

struct SingleRun {
    e_drift: f64,
    p_drift: f64,
    times: Vec<f64>,
    a: Vec<f64>,
    max_defect: f64,
}

fn single_soliton_run(c: f64) -> SingleRun {
    let g = Grid::new(2048, 200.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let spec = ChainSpec::new(vec![c], vec![-10.0], 0.0);
    let f0 = build_chain(&spec, &gp(), &g).unwrap();
    let ev = Evolver::new(ops.clone());
    let mut cfg = EvolutionConfig::new(20.0);
    let (_, dt) = cfg.schedule(g.dx());
    cfg.snapshot_every = (0.5 / dt).round() as usize;
    let (e0, p0) = (ops.energy(&f0).unwrap(), momentum(&f0));
    let mut tracker = Tracker::new(&ops, spec);
    let mut e_drift: f64 = 0.0;
    let mut p_drift: f64 = 0.0;
    ev.integrate(&f0, &cfg, |t, f| {
        e_drift = e_drift.max(((ops.energy(f)? - e0) / e0).abs());
        p_drift = p_drift.max(((momentum(f) - p0) / p0).abs());
        tracker.push(t, f).map(|_| ())
    })
    .unwrap();
    let tr = tracker.finish();
    SingleRun {
        e_drift,
        p_drift,
        times: tr.points.iter().map(|p| p.t).collect(),
        a: tr.points.iter().map(|p| p.a[0]).collect(),
        max_defect: tr.max_modulation_defect(),
    }
}

fn rk4_order() -> f64 {
    let g = Grid::new(2048, 200.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let f0 = Soliton::new(&gp(), 1.0).unwrap().sample(&g, 0.0);
    let ev = Evolver::new(ops.clone());
    let t = 0.2;
    // the production step 0.2·dx² and three halvings of it
    let base = ((t / (0.2 * g.dx() * g.dx())).ceil()) as usize;
    let runs: Vec<HydroField> = [1, 2, 4, 8].iter().map(|m| ev.advance(&f0, t, base * m).unwrap()).collect();
    let err = |i: usize| ops.x_norm(&runs[i].sub(&runs[3]));
    // e(dt) − e(dt/8) ≈ e(dt), likewise for dt/2, so the ratio is close to 16
    err(0) / err(1)
}

fn conservation(run: &SingleRun) -> Outcome {
    let ratio = rk4_order();
    (
        run.e_drift < 1e-6 && run.p_drift < 1e-6 && ratio >= 8.0,
        format!("E drift {:.2e}, p drift {:.2e}, RK4 halving ratio {ratio:.2}", run.e_drift, run.p_drift),
    )
}

fn propagation(run: &SingleRun, c: f64) -> Outcome {
    let n = run.times.len() as f64;
    let mt = run.times.iter().sum::<f64>() / n;
    let ma = run.a.iter().sum::<f64>() / n;
    let sxy: f64 = run.times.iter().zip(&run.a).map(|(t, a)| (t - mt) * (a - ma)).sum();
    let sxx: f64 = run.times.iter().map(|t| (t - mt).powi(2)).sum();
    let speed = sxy / sxx;
    let rel = (speed - c).abs() / c;
    (rel < 5e-3 && run.max_defect < 1e-3, format!("fitted speed {speed:.6} (rel {rel:.2e}), max |a'-c|+|c'| {:.2e}", run.max_defect))
}

const C_STAR: [f64; 2] = [1.2, 1.3];
const L0: f64 = 60.0;

fn tuned_rates() -> CutoffRates {
    let nu = min_nu(&gp(), &C_STAR).unwrap();
    CutoffRates { tau: 0.225 * nu, tau0: 0.4 * nu }
}

fn chain_run(alpha0: f64) -> ChainRun {
    let g = Grid::new(8192, 800.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let nu = min_nu(&gp(), &C_STAR).unwrap();
    let exp = ChainExperiment {
        chain: ChainSpec::new(C_STAR.to_vec(), vec![-150.0, -150.0 + L0], L0 - 1.0),
        alpha0,
        seed: 1,
        rates: tuned_rates(),
        extra_rates: vec![CutoffRates::default_for(nu)],
        evolution: EvolutionConfig::new(100.0),
        snapshot_dt: 0.5,
    };
    run_chain(&ops, &exp).unwrap()
}

fn orbital_stability(full: &ChainRun, half: &ChainRun, secs: f64) -> Outcome {
    let tau0 = tuned_rates().tau0;
    let r1 = stability_report(&full.records, &full.track, &C_STAR, 1e-3, L0, tau0);
    let r2 = stability_report(&half.records, &half.track, &C_STAR, 5e-4, L0, tau0);
    let bound = 10.0 * (1e-3 + (-0.5 * tau0 * L0).exp());
    let scale = alpha_scaling(&r1, &r2);
    let complete = full.track.error.is_none() && half.track.error.is_none() && full.records.last().unwrap().t >= 100.0 - 1e-9;
    (
        complete && r1.sup_distance <= bound && (0.3..=0.8).contains(&scale) && secs < 1800.0,
        format!("sup {:.3e} <= {bound:.3e}, alpha halving ratio {scale:.3}, {secs:.0} s for both runs", r1.sup_distance),
    )
}

fn monotonicity(run: &ChainRun) -> Outcome {
    let tau0 = tuned_rates().tau0;
    let sigma = C_STAR[1] - C_STAR[0];
    let rep = run.monotonicity(sigma, tau0).unwrap();
    let min_dp = rep.tilde[0].extreme_increment;
    let max_dg = rep.g.extreme_increment;
    let gap0 = run.records[0].a[1] - run.records[0].a[0];
    let gap_ok = run.records.iter().all(|r| r.a[1] - r.a[0] >= gap0 + 0.9 * sigma * r.t);
    let nu = min_nu(&gp(), &C_STAR).unwrap();
    let default = run.extra_monotonicity(0, sigma, nu / 16.0).unwrap();
    (
        min_dp >= -1e-6 && max_dg <= 1e-6 && gap_ok,
        format!(
            "tau0={tau0:.4}: min dp~2 {min_dp:.2e}, max dG {max_dg:.2e}, gap growth ok {gap_ok}; default tau0={:.4} (informational): min dp~2 {:.2e}",
            nu / 16.0,
            default.tilde[0].extreme_increment
        ),
    )
}

fn random_field(g: Grid, rng: &mut ChaCha8Rng) -> HydroField {
    let xs = g.nodes();
    let mut f = HydroField::zeros(g);
    for _ in 0..3 {
        let (x0, w, ae, av): (f64, f64, f64, f64) =
            (rng.gen_range(-10.0..10.0), rng.gen_range(1.5..4.0), rng.gen_range(-0.2..0.3), rng.gen_range(-0.3..0.3));
        for j in 0..g.n {
            let y = (xs[j] - x0) / w;
            let b = (-y * y).exp();
            f.eta[j] += ae * b;
            f.v[j] += av * b;
        }
    }
    f
}

fn virial() -> Outcome {
    let g = Grid::new(512, 80.0).unwrap();
    let ev = Evolver::new(FieldOps::new(gp(), g));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let f = random_field(g, &mut rng);
        let chi = VirialCutoff::Tanh { center: rng.gen_range(-5.0..5.0), rate: rng.gen_range(0.1..0.5), speed: rng.gen_range(-1.0..1.0) };
        worst = worst.max(virial_identity_check(&ev, &f, &chi, VIRIAL_DT).unwrap().relative());
    }
    let f = random_field(g, &mut rng);
    let one = virial_identity_check(&ev, &f, &VirialCutoff::One, VIRIAL_DT).unwrap();
    (
        worst < 1e-5 && one.lhs.abs() < 1e-8 && one.rhs == 0.0,
        format!("worst relative mismatch {worst:.2e}, chi=1 drift {:.2e}", one.lhs.abs()),
    )
}

fn appendix_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = 0;
    for _ in 0..10_000 {
        let a: f64 = rng.gen_range(-50.0..50.0);
        let d: f64 = rng.gen_range(1e-3..60.0);
        let p = if rng.gen_bool(0.2) { f64::INFINITY } else { rng.gen_range(1.0..10.0) };
        let r = crossterm_bound_check(a, a + d, rng.gen_range(0.01..5.0), rng.gen_range(0.01..5.0), p).unwrap();
        failures += usize::from(!r.pass);
    }
    let g = Grid::new(4096, 400.0).unwrap();
    let ls = [40.0, 60.0, 80.0];
    let s22 = polynomial_crossterm_check(&gp(), &C_STAR, &Polynomial::s(2, 2), 2.0, &ls, &g).unwrap();
    let b2 = polynomial_crossterm_check(&gp(), &C_STAR, &Polynomial::b(2), 2.0, &ls, &g).unwrap();
    let fexp = f_expansion_check(&gp(), &[1.35, 1.38], 2.0, &ls, &g).unwrap();
    let secs = start.elapsed().as_secs_f64();
    (
        failures == 0 && s22.pass && b2.pass && fexp.pass && secs < 10.0,
        format!(
            "bound failures {failures}/10000; rates/min nu: S22 {:.3}, B2 {:.3}, F-expansion {:.3}; {secs:.2} s",
            s22.rate / s22.min_nu,
            b2.rate / b2.min_nu,
            fexp.rate / fexp.min_nu
        ),
    )
}

fn expansions() -> Outcome {
    let g = Grid::new(4096, 400.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let speeds = vec![1.38, 1.39];
    let nu = min_nu(&gp(), &speeds).unwrap();
    let rates = CutoffRates::default_for(nu);
    let ls = [40.0, 60.0, 80.0];
    let mut e_tail = Vec::new();
    let mut p_tail = [Vec::new(), Vec::new()];
    for &l in &ls {
        let spec = ChainSpec::new(speeds.clone(), vec![-l / 2.0, l / 2.0], l - 1.0);
        let cf = build_cutoffs(&spec.positions, l, rates.tau, rates.tau0, &g).unwrap();
        let rep = expansion_check(&ops, &spec, &HydroField::zeros(g), &cf).unwrap();
        e_tail.push(rep.e_residual);
        for k in 0..2 {
            p_tail[k].push(rep.p_residual[k]);
        }
    }
    let threshold = 0.5 * nu.min(rates.tau0);
    let e_rate = fitted_decay_rate(&ls, &e_tail);
    let p_rates: Vec<f64> = p_tail.iter().map(|t| fitted_decay_rate(&ls, t)).collect();

    let spec = ChainSpec::new(vec![1.2, 1.3], vec![-30.0, 30.0], 59.0);
    let cf = build_cutoffs(&spec.positions, 60.0, rates.tau, rates.tau0, &g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raw = random_field(g, &mut rng);
    let mut shifted = raw.shift_cells((-30.0 / g.dx()) as isize).add(&raw.shift_cells((30.0 / g.dx()) as isize));
    shifted = project_orthogonal(&gp(), &spec, &shifted).unwrap();
    let unit = shifted.scale(1.0 / ops.x_norm(&shifted));
    let ss = [1e-2, 5e-3, 2.5e-3];
    let cubic: Vec<f64> = ss.iter().map(|&s| expansion_check(&ops, &spec, &unit.scale(s), &cf).unwrap().e_cubic).collect();
    let power = fitted_power(&ss, &cubic);
    (
        e_rate >= threshold && p_rates.iter().all(|r| *r >= threshold) && power >= 2.7,
        format!("tail rates E {e_rate:.4}, p_k {p_rates:.4?} vs {threshold:.4}; cubic exponent {power:.3}"),
    )
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |i: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {i:>2} ({name}): {}", if o.0 { "PASS" } else { "FAIL" }, o.1);
        results.push((i, name, o));
    };
    report(1, "profile oracle", profile_oracle());
    report(2, "transonic momentum", transonic_momentum());
    report(3, "transonic dp/dc", transonic_dp_dc());
    report(4, "spectral structure", spectral_structure());
    let single = single_soliton_run(1.0);
    report(5, "conservation", conservation(&single));
    report(6, "propagation", propagation(&single, 1.0));
    let start = Instant::now();
    let full = chain_run(1e-3);
    let half = chain_run(5e-4);
    let secs = start.elapsed().as_secs_f64();
    report(7, "orbital stability", orbital_stability(&full, &half, secs));
    report(8, "monotonicity", monotonicity(&full));
    report(9, "virial identity", virial());
    report(10, "cross-term suite", appendix_suite());
    report(11, "expansions", expansions());
    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed in {:.0} s", results.len() - failed.len(), results.len(), total.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
