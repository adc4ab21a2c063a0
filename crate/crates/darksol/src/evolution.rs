//! Method-of-lines RK4 integration of the hydrodynamical system on a periodic grid.
//!
//! The right-hand side is written as ∂ₜ(η, v) = (−2D ∂_vE, −2D ∂_ηE) with the
//! discrete gradient of the energy, so the semi-discrete flow conserves the
//! discrete energy exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{FieldOps, HydroField, VACUUM_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Explicit step; when absent dt = cfl_lambda·dx².
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl_lambda: f64,
    #[serde(default)]
    pub dealias: bool,
    #[serde(default = "default_snapshot")]
    pub snapshot_every: usize,
}

fn default_cfl() -> f64 {
    0.2
}

fn default_snapshot() -> usize {
    100
}

impl EvolutionConfig {
    pub fn new(t_end: f64) -> Self {
        Self { dt: None, t_end, cfl_lambda: 0.2, dealias: false, snapshot_every: 100 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Invalid(format!("t_end = {} must be finite and >= 0", self.t_end)));
        }
        if !(self.cfl_lambda > 0.0 && self.cfl_lambda <= 0.25) {
            return Err(Error::Invalid(format!("cfl_lambda = {} must lie in (0, 0.25]", self.cfl_lambda)));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Invalid(format!("dt = {dt} must be positive")));
            }
        }
        if self.snapshot_every == 0 {
            return Err(Error::Invalid("snapshot_every must be >= 1".into()));
        }
        Ok(())
    }

    /// (number of steps, step size) landing exactly on t_end.
    pub fn schedule(&self, dx: f64) -> (usize, f64) {
        let target = self.dt.unwrap_or(self.cfl_lambda * dx * dx);
        if self.t_end == 0.0 {
            return (0, target);
        }
        let steps = (self.t_end / target).ceil().max(1.0) as usize;
        (steps, self.t_end / steps as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Evolver {
    pub ops: FieldOps,
}

impl Evolver {
    pub fn new(ops: FieldOps) -> Self {
        Self { ops }
    }

    pub fn rhs(&self, field: &HydroField) -> Result<HydroField> {
        let g = self.ops.grad_energy(field)?;
        let (dgv, dge) = self.ops.spec.deriv2(&g.v, &g.eta, 1);
        Ok(HydroField { grid: field.grid, eta: dgv.iter().map(|x| -2.0 * x).collect(), v: dge.iter().map(|x| -2.0 * x).collect() })
    }

    fn guard(&self, field: &HydroField, t: f64) -> Result<()> {
        if !field.is_finite() {
            return Err(Error::NonFinite(t));
        }
        let m = field.max_eta();
        if m >= VACUUM_THRESHOLD {
            return Err(Error::BlowUpDetected { t, max_eta: m });
        }
        Ok(())
    }

    fn stage(&self, field: &HydroField, t: f64) -> Result<HydroField> {
        self.guard(field, t)?;
        self.rhs(field).map_err(|e| match e {
            Error::VacuumBreach(m) => Error::BlowUpDetected { t, max_eta: m },
            other => other,
        })
    }

    /// One classical RK4 step (dt may be negative).
    pub fn step(&self, field: &HydroField, t: f64, dt: f64) -> Result<HydroField> {
        let k1 = self.stage(field, t)?;
        let k2 = self.stage(&field.axpy(0.5 * dt, &k1), t + 0.5 * dt)?;
        let k3 = self.stage(&field.axpy(0.5 * dt, &k2), t + 0.5 * dt)?;
        let k4 = self.stage(&field.axpy(dt, &k3), t + dt)?;
        let n = field.grid.n;
        let mut out = field.clone();
        let w = dt / 6.0;
        for j in 0..n {
            out.eta[j] += w * (k1.eta[j] + 2.0 * k2.eta[j] + 2.0 * k3.eta[j] + k4.eta[j]);
            out.v[j] += w * (k1.v[j] + 2.0 * k2.v[j] + 2.0 * k3.v[j] + k4.v[j]);
        }
        Ok(out)
    }

    fn filter(&self, field: HydroField) -> HydroField {
        let (eta, v) = self.ops.spec.dealias2(&field.eta, &field.v);
        HydroField { grid: field.grid, eta, v }
    }

    /// Advance to cfg.t_end, calling `on_snapshot(t, field)` at t = 0, every
    /// `snapshot_every` steps and at the final time.
    pub fn integrate<F>(&self, initial: &HydroField, cfg: &EvolutionConfig, mut on_snapshot: F) -> Result<HydroField>
    where
        F: FnMut(f64, &HydroField) -> Result<()>,
    {
        cfg.validate()?;
        self.guard(initial, 0.0)?;
        let (steps, dt) = cfg.schedule(initial.grid.dx());
        let mut field = if cfg.dealias { self.filter(initial.clone()) } else { initial.clone() };
        on_snapshot(0.0, &field)?;
        for s in 0..steps {
            let t = s as f64 * dt;
            field = self.step(&field, t, dt)?;
            if cfg.dealias {
                field = self.filter(field);
            }
            let t_new = (s + 1) as f64 * dt;
            self.guard(&field, t_new)?;
            if (s + 1) % cfg.snapshot_every == 0 || s + 1 == steps {
                on_snapshot(t_new, &field)?;
            }
        }
        Ok(field)
    }

    /// Fixed-step integration over [0, t_end] with n equal steps, no callbacks.
    pub fn advance(&self, initial: &HydroField, t_end: f64, steps: usize) -> Result<HydroField> {
        let dt = t_end / steps as f64;
        let mut f = initial.clone();
        for s in 0..steps {
            f = self.step(&f, s as f64 * dt, dt)?;
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_ops::{momentum, Grid};
    use crate::nonlinearity::Nonlinearity;
    use crate::profile::Soliton;

    fn evolver(nl: Nonlinearity, n: usize, len: f64) -> Evolver {
        Evolver::new(FieldOps::new(nl, Grid::new(n, len).unwrap()))
    }

    #[test]
    fn zero_field_is_stationary() {
        let ev = evolver(Nonlinearity::gross_pitaevskii(), 64, 20.0);
        let z = HydroField::zeros(ev.ops.grid());
        assert!(ev.rhs(&z).unwrap().eta.iter().all(|&x| x == 0.0));
        let out = ev.integrate(&z, &EvolutionConfig::new(1.0), |_, _| Ok(())).unwrap();
        assert!(out.eta.iter().chain(&out.v).all(|&x| x == 0.0));
    }

    #[test]
    fn traveling_wave_residual() {
        let nl = Nonlinearity::poly_one_minus_rho(vec![1.0, 0.4]).unwrap();
        let ev = evolver(nl.clone(), 1024, 100.0);
        let g = ev.ops.grid();
        for &c in &[0.8, 1.2] {
            let sol = Soliton::new(&nl, c).unwrap();
            let q = sol.sample(&g, 3.3);
            let dq = sol.sample_dx(&g, 3.3);
            let r = ev.rhs(&q).unwrap().axpy(c, &dq);
            assert!(ev.ops.x_norm(&r) < 1e-4 * ev.ops.x_norm(&q), "c={c}");
        }
    }

    #[test]
    fn dispersion_relation() {
        let nl = Nonlinearity::gross_pitaevskii();
        let len = 20.0 * std::f64::consts::PI;
        let ev = evolver(nl, 128, len);
        let g = ev.ops.grid();
        for &m in &[3usize, 8] {
            let k = 2.0 * std::f64::consts::PI * m as f64 / len;
            let omega = (k.powi(4) + 2.0 * k * k).sqrt();
            let x = g.nodes();
            let eps = 1e-6;
            let f0 = HydroField::new(g, x.iter().map(|x| eps * (k * x).cos()).collect(), vec![0.0; g.n]).unwrap();
            let amp = |f: &HydroField| 2.0 / len * f.eta.iter().zip(&x).map(|(e, x)| e * (k * x).cos()).sum::<f64>() * g.dx();
            let period = 2.0 * std::f64::consts::PI / omega;
            let dt = period / 400.0;
            let mut f = f0;
            let mut prev = amp(&f);
            let mut crossings = vec![];
            let mut t = 0.0;
            while crossings.len() < 3 {
                f = ev.step(&f, t, dt).unwrap();
                t += dt;
                let a = amp(&f);
                if prev > 0.0 && a <= 0.0 || prev < 0.0 && a >= 0.0 {
                    crossings.push(t - dt * a / (a - prev));
                }
                prev = a;
            }
            let measured = std::f64::consts::PI / (crossings[2] - crossings[1]);
            assert!((measured - omega).abs() < 0.01 * omega, "k={k}: {measured} vs {omega}");
        }
    }

    #[test]
    fn time_reversal() {
        let nl = Nonlinearity::gross_pitaevskii();
        let ev = evolver(nl.clone(), 256, 60.0);
        let g = ev.ops.grid();
        let a = Soliton::new(&nl, 1.1).unwrap().sample(&g, -8.0);
        let b = Soliton::new(&nl, 0.9).unwrap().sample(&g, 6.0);
        let q0 = a.add(&b);
        let dt = 0.2 * g.dx().powi(2);
        let steps = (2.0 / dt).ceil() as usize;
        let q1 = ev.advance(&q0, 2.0, steps).unwrap();
        let flipped = HydroField { grid: g, eta: q1.eta.clone(), v: q1.v.iter().map(|x| -x).collect() };
        let back = ev.advance(&flipped, 2.0, steps).unwrap();
        let back = HydroField { grid: g, eta: back.eta, v: back.v.iter().map(|x| -x).collect() };
        assert!(ev.ops.x_norm(&back.sub(&q0)) < 1e-5);
    }

    #[test]
    fn asymmetric_data_conserves_momentum_and_energy() {
        let nl = Nonlinearity::poly_one_minus_rho(vec![1.0, 0.4]).unwrap();
        let ev = evolver(nl.clone(), 256, 60.0);
        let g = ev.ops.grid();
        let q0 = Soliton::new(&nl, 1.0).unwrap().sample(&g, -5.0).add(&Soliton::new(&nl, 1.3).unwrap().sample(&g, 7.0));
        let (p0, e0) = (momentum(&q0), ev.ops.energy(&q0).unwrap());
        let q1 = ev.integrate(&q0, &EvolutionConfig::new(2.0), |_, _| Ok(())).unwrap();
        assert!((momentum(&q1) - p0).abs() < 1e-9 * p0.abs());
        assert!((ev.ops.energy(&q1).unwrap() - e0).abs() < 1e-9 * e0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let nl = Nonlinearity::gross_pitaevskii();
        let ev = evolver(nl.clone(), 64, 40.0);
        let g = ev.ops.grid();
        let q0 = Soliton::new(&nl, 1.0).unwrap().sample(&g, 0.0);
        let base = 0.05 * g.dx().powi(2);
        let steps = (1.0 / base).ceil() as usize;
        let reference = ev.advance(&q0, 1.0, steps * 8).unwrap();
        let e1 = ev.ops.x_norm(&ev.advance(&q0, 1.0, steps).unwrap().sub(&reference));
        let e2 = ev.ops.x_norm(&ev.advance(&q0, 1.0, steps * 2).unwrap().sub(&reference));
        let ratio = e1 / e2;
        assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
    }

    #[test]
    fn blow_up_is_reported() {
        let nl = Nonlinearity::gross_pitaevskii();
        let ev = evolver(nl, 64, 20.0);
        let g = ev.ops.grid();
        let mut f = HydroField::zeros(g);
        f.eta[10] = 1.0;
        let r = ev.integrate(&f, &EvolutionConfig::new(1.0), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::BlowUpDetected { .. })));
        let mut f = HydroField::zeros(g);
        f.v[3] = f64::NAN;
        let r = ev.integrate(&f, &EvolutionConfig::new(1.0), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = EvolutionConfig::new(1.0);
        c.cfl_lambda = 0.3;
        assert!(c.validate().is_err());
        let c = EvolutionConfig::new(1.0);
        let (n, dt) = c.schedule(0.1);
        assert_eq!(n, 500);
        assert!((n as f64 * dt - 1.0).abs() < 1e-15);
    }
}
