//! Cross-module checks: profile → chain → evolution → tracking → diagnostics.

use darksol::diagnostics::{chain_perturbation, min_nu, run_chain, stability_report, ChainExperiment};
use darksol::evolution::{EvolutionConfig, Evolver};
use darksol::field_ops::momentum;
use darksol::localization::{build_cutoffs, localized_momentum_pk, CutoffRates};
use darksol::modulation::{build_chain, decompose, ChainSpec, Tracker};
use darksol::profile::{soliton_momentum, Soliton};
use darksol::{FieldOps, Grid, Nonlinearity};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

fn gp() -> Nonlinearity {
    Nonlinearity::gross_pitaevskii()
}

#[test]
fn chain_momentum_is_sum_of_soliton_momenta() {
    let g = Grid::new(2048, 300.0).unwrap();
    let speeds = vec![0.9, 1.1, 1.25];
    let spec = ChainSpec::new(speeds.clone(), vec![-60.0, 0.0, 60.0], 50.0);
    let r = build_chain(&spec, &gp(), &g).unwrap();
    let expected: f64 = speeds.iter().map(|&c| soliton_momentum(&gp(), c).unwrap()).sum();
    // cross terms decay like e^{−ν·60}
    assert!((momentum(&r) - expected).abs() < 1e-8 * expected);

    // the localized momenta split the total; with τ₀ = 0.3 the windows leak e^{−0.3·30}
    let nu = min_nu(&gp(), &speeds).unwrap();
    let rates = CutoffRates { tau: 0.16, tau0: 0.3 };
    rates.check(nu).unwrap();
    let cf = build_cutoffs(&spec.positions, 50.0, rates.tau, rates.tau0, &g).unwrap();
    let parts: Vec<f64> = (1..=3).map(|k| localized_momentum_pk(&r, &cf, k)).collect();
    assert!((parts.iter().sum::<f64>() - momentum(&r)).abs() < 1e-12);
    for (p, &c) in parts.iter().zip(&speeds) {
        let single = soliton_momentum(&gp(), c).unwrap();
        assert!((p - single).abs() < 2e-3 * single, "{p} vs {single}");
    }
}

#[test]
fn decomposition_inverts_chain_construction() {
    let g = Grid::new(2048, 300.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let truth = ChainSpec::new(vec![1.0, 1.2], vec![-40.3, 25.7], 50.0);
    let r = build_chain(&truth, &gp(), &g).unwrap();
    let guess = ChainSpec::new(vec![0.97, 1.22], vec![-40.0, 26.5], 0.0);
    let fit = decompose(&ops, &r, &guess).unwrap();
    for k in 0..2 {
        assert!((fit.c[k] - truth.speeds[k]).abs() < 1e-7, "{:?}", fit.c);
        assert!((fit.a[k] - truth.positions[k]).abs() < 1e-6, "{:?}", fit.a);
    }
    assert!(fit.eps_xnorm < 1e-6);
}

#[test]
fn perturbed_chain_evolves_with_tracked_constant_speeds() {
    let g = Grid::new(1024, 240.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let spec = ChainSpec::new(vec![1.1, 1.3], vec![-40.0, 20.0], 50.0);
    let q0 = build_chain(&spec, &gp(), &g).unwrap().add(&chain_perturbation(&ops, &spec.positions, 1e-3, 9));
    let ev = Evolver::new(ops.clone());
    let mut cfg = EvolutionConfig::new(4.0);
    let (_, dt) = cfg.schedule(g.dx());
    cfg.snapshot_every = (0.5 / dt).round() as usize;
    let (e0, p0) = (ops.energy(&q0).unwrap(), momentum(&q0));
    let mut tracker = Tracker::new(&ops, spec.clone());
    let last = ev
        .integrate(&q0, &cfg, |t, f| {
            assert!(((ops.energy(f)? - e0) / e0).abs() < 1e-9);
            assert!(((momentum(f) - p0) / p0).abs() < 1e-9);
            tracker.push(t, f).map(|_| ())
        })
        .unwrap();
    let track = tracker.finish();
    assert!(track.error.is_none());
    let end = track.points.last().unwrap();
    assert!((end.t - 4.0).abs() < 1e-9);
    for k in 0..2 {
        // speeds stay within O(α₀) of c*, positions advance at that speed
        assert!((end.c[k] - spec.speeds[k]).abs() < 1e-2);
        let travelled = end.a[k] - track.points[0].a[k];
        assert!((travelled - 4.0 * spec.speeds[k]).abs() < 0.1, "{travelled}");
    }
    assert!(end.eps_xnorm < 5e-3);
    assert!(last.is_finite());
}

#[test]
fn unperturbed_chain_stays_on_its_manifold() {
    let g = Grid::new(1024, 240.0).unwrap();
    let ops = FieldOps::new(gp(), g);
    let speeds = vec![1.2, 1.3];
    let exp = ChainExperiment {
        chain: ChainSpec::new(speeds.clone(), vec![-40.0, 20.0], 59.0),
        alpha0: 0.0,
        seed: 0,
        rates: CutoffRates::default_for(min_nu(&gp(), &speeds).unwrap()),
        extra_rates: vec![],
        evolution: EvolutionConfig::new(3.0),
        snapshot_dt: 0.5,
    };
    let run = run_chain(&ops, &exp).unwrap();
    assert_eq!(run.records.len(), 7);
    assert!(run.records.windows(2).all(|w| w[1].t > w[0].t));
    let rep = stability_report(&run.records, &run.track, &speeds, 0.0, 59.0, exp.rates.tau0);
    // only the e^{−ν·60} soliton overlap separates R from a true two-soliton state
    assert!(rep.sup_distance < 1e-6, "{}", rep.sup_distance);
    assert_eq!(rep.verdict, Some(true));
}

#[test]
fn mirrored_positions_give_mirrored_samples() {
    // η(−x) = η(x) and v(−x) = v(x): sampling at −a mirrors the field
    let g = Grid::new(512, 100.0).unwrap();
    let s = Soliton::new(&gp(), 0.7).unwrap();
    let f = s.sample(&g, 7.0);
    let m = s.sample(&g, -7.0);
    for j in 1..g.n {
        assert!((f.eta[j] - m.eta[g.n - j]).abs() < 1e-14);
        assert!((f.v[j] - m.v[g.n - j]).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_momentum_matches_quadrature(c in 0.2..1.35f64) {
        let nl = gp();
        let s = Soliton::new(&nl, c).unwrap();
        let half = (20.0 / s.nu).max(30.0);
        let n = ((2.0 * half / 0.1) as usize).next_power_of_two();
        let g = Grid::new(n, 2.0 * half).unwrap();
        let p = momentum(&s.sample(&g, 0.0));
        let q = soliton_momentum(&nl, c).unwrap();
        prop_assert!((p - q).abs() <= 1e-8 * q.abs(), "c = {c}: {p} vs {q}");
    }

    #[test]
    fn energy_is_translation_invariant(c in 0.3..1.3f64, shift in -40i32..40) {
        let g = Grid::new(512, 120.0).unwrap();
        let ops = FieldOps::new(gp(), g);
        let f = Soliton::new(&gp(), c).unwrap().sample(&g, 0.0);
        let e = ops.energy(&f).unwrap();
        let e2 = ops.energy(&f.shift_cells(shift as isize)).unwrap();
        prop_assert!((e - e2).abs() <= 1e-13 * e.abs());
    }
}
