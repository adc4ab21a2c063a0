//! Tanh partitions of unity around a chain, localized momenta and the
//! functional G = E − Σ c*_k p_k.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{FieldOps, Grid, HydroField};

/// Rates of the two cutoff families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffRates {
    pub tau: f64,
    pub tau0: f64,
}

impl CutoffRates {
    /// τ = ν/8 and τ₀ = ν/16 for the slowest-decaying soliton rate ν.
    pub fn default_for(nu: f64) -> Self {
        Self { tau: nu / 8.0, tau0: nu / 16.0 }
    }

    /// Checks τ₀ < 2τ < ν/2.
    pub fn check(&self, nu: f64) -> Result<()> {
        check_pair(self.tau, self.tau0)?;
        if 2.0 * self.tau >= 0.5 * nu {
            return Err(Error::BadOrdering(format!("2·tau = {} must be below nu/2 = {}", 2.0 * self.tau, 0.5 * nu)));
        }
        Ok(())
    }
}

fn check_pair(tau: f64, tau0: f64) -> Result<()> {
    if !(tau > 0.0 && tau0 > 0.0) {
        return Err(Error::BadOrdering(format!("rates must be positive (tau = {tau}, tau0 = {tau0})")));
    }
    if tau0 >= 2.0 * tau {
        return Err(Error::BadOrdering(format!("tau0 = {tau0} must be below 2·tau = {}", 2.0 * tau)));
    }
    Ok(())
}

/// χ for a single interface centered at m: ½(1 + tanh(τ₀(x − m))).
pub fn chi_step(x: f64, m: f64, tau0: f64) -> f64 {
    0.5 * (1.0 + (tau0 * (x - m)).tanh())
}

/// Sampled cutoffs. Indices follow the math: `phi[k-1]` is Φ_k (k = 1..N),
/// `phi_pair[k]` is Φ_{k,k+1} (k = 0..N), `chi[k-1]` is χ_k (k = 1..N+1).
#[derive(Debug, Clone)]
pub struct CutoffFamily {
    pub a: Vec<f64>,
    pub tau: f64,
    pub tau0: f64,
    pub l: f64,
    pub grid: Grid,
    pub phi: Vec<Vec<f64>>,
    pub phi_pair: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
}

pub fn build_cutoffs(a: &[f64], l: f64, tau: f64, tau0: f64, grid: &Grid) -> Result<CutoffFamily> {
    if a.is_empty() {
        return Err(Error::BadOrdering("at least one position is required".into()));
    }
    if a.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadOrdering("positions must be strictly increasing".into()));
    }
    check_pair(tau, tau0)?;
    let n = a.len();
    let xs = grid.nodes();
    let q = l / 4.0;
    let th = |x: f64, s: f64| (tau * (x - s)).tanh();
    let phi = a.iter().map(|&ak| xs.iter().map(|&x| 0.5 * (th(x, ak - q) - th(x, ak + q))).collect()).collect();
    let mut phi_pair = Vec::with_capacity(n + 1);
    phi_pair.push(xs.iter().map(|&x| 0.5 * (1.0 - th(x, a[0] - q))).collect());
    for k in 1..n {
        phi_pair.push(xs.iter().map(|&x| 0.5 * (th(x, a[k - 1] + q) - th(x, a[k] - q))).collect());
    }
    phi_pair.push(xs.iter().map(|&x| 0.5 * (1.0 + th(x, a[n - 1] + q))).collect());
    let mut chi = Vec::with_capacity(n + 1);
    chi.push(vec![1.0; grid.n]);
    for k in 1..n {
        let m = 0.5 * (a[k] + a[k - 1]);
        chi.push(xs.iter().map(|&x| chi_step(x, m, tau0)).collect());
    }
    chi.push(vec![0.0; grid.n]);
    Ok(CutoffFamily { a: a.to_vec(), tau, tau0, l, grid: *grid, phi, phi_pair, chi })
}

impl CutoffFamily {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// χ_k − χ_{k+1} for 1 ≤ k ≤ N.
    pub fn window(&self, k: usize) -> Vec<f64> {
        assert!(k >= 1 && k <= self.len(), "window index {k} out of range");
        self.chi[k - 1].iter().zip(&self.chi[k]).map(|(a, b)| a - b).collect()
    }
}

fn weighted_momentum(field: &HydroField, w: &[f64]) -> f64 {
    let s: f64 = (0..field.grid.n).map(|j| field.eta[j] * field.v[j] * w[j]).sum();
    0.5 * field.grid.dx() * s
}

/// p_k = ∫½ηv(χ_k − χ_{k+1}).
pub fn localized_momentum_pk(field: &HydroField, cutoffs: &CutoffFamily, k: usize) -> f64 {
    weighted_momentum(field, &cutoffs.window(k))
}

/// p̃_k = ∫½ηvχ_k.
pub fn tilde_momentum(field: &HydroField, cutoffs: &CutoffFamily, k: usize) -> f64 {
    assert!(k >= 1 && k <= cutoffs.len(), "tilde index {k} out of range");
    weighted_momentum(field, &cutoffs.chi[k - 1])
}

/// G = E − Σ c*_k p_k.
pub fn functional_g(ops: &FieldOps, field: &HydroField, c_star: &[f64], cutoffs: &CutoffFamily) -> Result<f64> {
    if c_star.len() != cutoffs.len() {
        return Err(Error::Invalid(format!("{} speeds for {} cutoffs", c_star.len(), cutoffs.len())));
    }
    let e = ops.energy(field)?;
    let s: f64 = c_star.iter().enumerate().map(|(i, c)| c * localized_momentum_pk(field, cutoffs, i + 1)).sum();
    Ok(e - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_ops::momentum;
    use crate::nonlinearity::Nonlinearity;
    use crate::profile::Soliton;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(2048, 400.0).unwrap()
    }

    fn chain(nl: &Nonlinearity, cs: &[f64], a: &[f64], g: &Grid) -> HydroField {
        let mut f = HydroField::zeros(*g);
        for (c, x) in cs.iter().zip(a) {
            f = f.add(&Soliton::new(nl, *c).unwrap().sample(g, *x));
        }
        f
    }

    #[test]
    fn single_position_partition() {
        let g = grid();
        let cf = build_cutoffs(&[3.0], 50.0, 0.1, 0.05, &g).unwrap();
        for j in 0..g.n {
            let s = cf.phi[0][j] + cf.phi_pair[0][j] + cf.phi_pair[1][j];
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_peak_approaches_one() {
        let g = Grid::new(1024, 2000.0).unwrap();
        let tau = 0.1;
        let l = 400.0 / tau / 4.0;
        let a = [-l / 2.0, l / 2.0];
        let cf = build_cutoffs(&a, l, tau, 0.05, &g).unwrap();
        let j = a.iter().map(|&ak| ((ak / g.dx()).round() as isize + g.n as isize / 2) as usize);
        for (k, jk) in j.enumerate() {
            // tanh(τL/4) with τL = 100
            assert!((cf.phi[k][jk] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn chi_vanishes_behind() {
        let g = grid();
        let tau0 = 0.2;
        let a = [-150.0, -100.0, 100.0];
        assert!(tau0 * (a[2] - a[0]) / 2.0 >= 20.0);
        let cf = build_cutoffs(&a, 40.0, 0.2, tau0, &g).unwrap();
        let j1 = (g.n as f64 / 2.0 + a[0] / g.dx()).round() as usize;
        assert!(cf.chi[2][j1] < 1e-8);
        assert_eq!(cf.chi[0][j1], 1.0);
        assert_eq!(cf.chi[3][j1], 0.0);
    }

    #[test]
    fn ordering_errors() {
        let g = grid();
        assert!(matches!(build_cutoffs(&[1.0, 0.0], 10.0, 0.1, 0.05, &g), Err(Error::BadOrdering(_))));
        assert!(matches!(build_cutoffs(&[0.0], 10.0, 0.1, 0.2, &g), Err(Error::BadOrdering(_))));
        assert!(CutoffRates::default_for(0.5).check(0.5).is_ok());
        assert!(CutoffRates { tau: 0.2, tau0: 0.1 }.check(0.5).is_err());
    }

    #[test]
    fn gp_chain_localized_momenta() {
        let nl = Nonlinearity::gross_pitaevskii();
        let g = grid();
        let cs = [1.2, 1.3];
        let a = [-40.0, 40.0];
        let nu = (2.0f64 - 1.69).sqrt();
        let r = CutoffRates::default_for(nu);
        let cf = build_cutoffs(&a, 80.0, r.tau, r.tau0, &g).unwrap();
        let f = chain(&nl, &cs, &a, &g);
        let total: f64 = (1..=2).map(|k| localized_momentum_pk(&f, &cf, k)).sum();
        assert!((total - momentum(&f)).abs() < 1e-12);
        assert!((tilde_momentum(&f, &cf, 1) - momentum(&f)).abs() < 1e-12);
        for (k, c) in cs.iter().enumerate() {
            let sol = Soliton::new(&nl, *c).unwrap();
            // the soliton tail leaking through χ: ∫ e^{−ν|x|} over the far side of the interface
            let tail = 2.0 * sol.xi * (-0.5 * sol.nu * 80.0f64).exp() / sol.nu + (-r.tau0 * 40.0f64).exp();
            let pk = localized_momentum_pk(&f, &cf, k + 1);
            assert!((pk - sol.momentum()).abs() < 1e-6 + tail, "k={k} pk={pk}");
        }
        let p2 = Soliton::new(&nl, 1.3).unwrap().momentum();
        let pt2 = tilde_momentum(&f, &cf, 2);
        assert!((pt2 - p2).abs() < 1e-6 + (-r.tau0 * 40.0f64).exp());
    }

    #[test]
    fn zero_field_gives_zero() {
        let g = grid();
        let cf = build_cutoffs(&[-20.0, 20.0], 40.0, 0.1, 0.05, &g).unwrap();
        let z = HydroField::zeros(g);
        assert_eq!(localized_momentum_pk(&z, &cf, 1), 0.0);
        assert_eq!(tilde_momentum(&z, &cf, 2), 0.0);
    }

    #[test]
    fn single_soliton_g_is_e_minus_cp() {
        let nl = Nonlinearity::gross_pitaevskii();
        let g = grid();
        let ops = FieldOps::new(nl.clone(), g);
        let f = chain(&nl, &[1.1], &[5.0], &g);
        let cf = build_cutoffs(&[5.0], 40.0, 0.1, 0.05, &g).unwrap();
        let gv = functional_g(&ops, &f, &[1.1], &cf).unwrap();
        let direct = ops.energy(&f).unwrap() - 1.1 * momentum(&f);
        assert!((gv - direct).abs() < 1e-13);
    }

    #[test]
    fn pk_ignores_far_bumps() {
        let nl = Nonlinearity::gross_pitaevskii();
        let g = grid();
        let a = [-60.0, 60.0];
        let cf = build_cutoffs(&a, 120.0, 0.2, 0.3, &g).unwrap();
        let f = chain(&nl, &[1.2, 1.3], &a, &g);
        let w = cf.window(2);
        let xs = g.nodes();
        // compact bump centered where χ_2 − χ_3 is below 1e−14
        let centre = -150.0;
        let bump: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let s = (x - centre) / 5.0;
                if s.abs() < 1.0 {
                    0.1 * (-1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            })
            .collect();
        for (j, b) in bump.iter().enumerate() {
            if *b != 0.0 {
                assert!(w[j] < 1e-14);
            }
        }
        let pert = f.add(&HydroField { grid: g, eta: bump.clone(), v: bump });
        let d = localized_momentum_pk(&pert, &cf, 2) - localized_momentum_pk(&f, &cf, 2);
        assert!(d.abs() < 1e-14);
    }

    #[test]
    fn g_shift_invariant() {
        let nl = Nonlinearity::gross_pitaevskii();
        let g = grid();
        let ops = FieldOps::new(nl.clone(), g);
        let a = [-30.0, 30.0];
        let cs = [1.2, 1.3];
        let f = chain(&nl, &cs, &a, &g);
        let cf = build_cutoffs(&a, 60.0, 0.1, 0.05, &g).unwrap();
        let m = 37isize;
        let shifted: Vec<f64> = a.iter().map(|x| x + m as f64 * g.dx()).collect();
        let cf2 = build_cutoffs(&shifted, 60.0, 0.1, 0.05, &g).unwrap();
        let g1 = functional_g(&ops, &f, &cs, &cf).unwrap();
        let g2 = functional_g(&ops, &f.shift_cells(m), &cs, &cf2).unwrap();
        assert!((g1 - g2).abs() < 1e-11 * g1.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn partitions_sum_to_one(
            a0 in -80.0..-20.0f64,
            gaps in proptest::collection::vec(5.0..40.0f64, 0..4),
            l in 5.0..60.0f64,
            tau in 0.01..0.5f64,
            frac in 0.05..0.95f64,
        ) {
            let g = Grid::new(512, 300.0).unwrap();
            let mut a = vec![a0];
            for d in gaps {
                let last = *a.last().unwrap();
                a.push(last + d);
            }
            let cf = build_cutoffs(&a, l, tau, frac * 2.0 * tau, &g).unwrap();
            let n = a.len();
            prop_assert_eq!(cf.chi[0].iter().all(|&x| x == 1.0), true);
            prop_assert_eq!(cf.chi[n].iter().all(|&x| x == 0.0), true);
            for j in 0..g.n {
                let s: f64 = (0..n).map(|k| cf.phi[k][j]).sum::<f64>()
                    + (0..=n).map(|k| cf.phi_pair[k][j]).sum::<f64>();
                prop_assert!((s - 1.0).abs() < 1e-12);
                let w: f64 = (1..=n).map(|k| cf.chi[k - 1][j] - cf.chi[k][j]).sum();
                prop_assert!((w - 1.0).abs() < 1e-12);
            }
        }
    }
}
