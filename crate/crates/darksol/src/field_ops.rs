//! Periodic grids, spectral derivatives, hydrodynamical fields and the
//! energy/momentum functionals with their first and second variations.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;

/// Fields with max η at or above this level are treated as having hit the vacuum.
pub const VACUUM_THRESHOLD: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub length: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::Invalid(format!("grid size {n} must be a power of two >= 16")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Invalid(format!("grid length {length} must be positive")));
        }
        Ok(Self { n, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    pub fn half_length(&self) -> f64 {
        0.5 * self.length
    }

    /// Angular wavenumber of FFT bin j (Nyquist bin carries the negative sign).
    pub fn wavenumber(&self, j: usize) -> f64 {
        let n = self.n as i64;
        let m = if (j as i64) < n / 2 { j as i64 } else { j as i64 - n };
        2.0 * std::f64::consts::PI * m as f64 / self.length
    }

    /// Minimum-image periodic displacement x − a.
    pub fn wrap(&self, d: f64) -> f64 {
        d - self.length * (d / self.length).round()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    #[default]
    Spectral,
    /// Fourth-order centered differences.
    FiniteDifference,
}

/// FFT-backed differentiation and filtering on a fixed grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    mode: DerivativeMode,
    k: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).field("mode", &self.mode).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        Self::with_mode(grid, DerivativeMode::Spectral)
    }

    pub fn with_mode(grid: Grid, mode: DerivativeMode) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        let k = (0..grid.n).map(|j| grid.wavenumber(j)).collect();
        Self { grid, mode, k, fwd, inv }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    /// Multiply the spectrum of two real signals by a Hermitian symbol in a
    /// single complex transform (a + i b packing).
    fn apply_pair<S: Fn(usize) -> Complex64>(&self, a: &[f64], b: &[f64], symbol: S) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.n;
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.fwd.process(&mut buf);
        let scale = 1.0 / n as f64;
        for (j, z) in buf.iter_mut().enumerate() {
            *z *= symbol(j) * scale;
        }
        self.inv.process(&mut buf);
        (buf.iter().map(|z| z.re).collect(), buf.iter().map(|z| z.im).collect())
    }

    fn deriv_symbol(&self, order: u32) -> impl Fn(usize) -> Complex64 + '_ {
        let n = self.grid.n;
        move |j| {
            if order % 2 == 1 && j == n / 2 {
                return Complex64::new(0.0, 0.0);
            }
            Complex64::new(0.0, self.k[j]).powu(order)
        }
    }

    pub fn deriv(&self, u: &[f64], order: u32) -> Vec<f64> {
        match self.mode {
            DerivativeMode::Spectral => {
                let zero = vec![0.0; u.len()];
                self.apply_pair(u, &zero, self.deriv_symbol(order)).0
            }
            DerivativeMode::FiniteDifference => {
                let mut w = u.to_vec();
                for _ in 0..order {
                    w = self.fd1(&w);
                }
                w
            }
        }
    }

    /// Derivatives of two real signals at once.
    pub fn deriv2(&self, a: &[f64], b: &[f64], order: u32) -> (Vec<f64>, Vec<f64>) {
        match self.mode {
            DerivativeMode::Spectral => self.apply_pair(a, b, self.deriv_symbol(order)),
            DerivativeMode::FiniteDifference => (self.deriv(a, order), self.deriv(b, order)),
        }
    }

    /// First and second derivative of a single signal from one forward transform.
    pub fn d1_d2(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.mode {
            DerivativeMode::Spectral => {
                let n = self.grid.n;
                let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.fwd.process(&mut buf);
                let scale = 1.0 / n as f64;
                for (j, z) in buf.iter_mut().enumerate() {
                    let k = self.k[j];
                    let d1 = if j == n / 2 { 0.0 } else { k };
                    // (i k + i·(−k²)) û packs Du in the real part and D²u in the imaginary part.
                    *z *= Complex64::new(0.0, d1 - k * k) * scale;
                }
                self.inv.process(&mut buf);
                (buf.iter().map(|z| z.re).collect(), buf.iter().map(|z| z.im).collect())
            }
            DerivativeMode::FiniteDifference => (self.deriv(u, 1), self.deriv(u, 2)),
        }
    }

    fn fd1(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let h = self.grid.dx();
        (0..n)
            .map(|j| {
                let p1 = u[(j + 1) % n];
                let p2 = u[(j + 2) % n];
                let m1 = u[(j + n - 1) % n];
                let m2 = u[(j + n - 2) % n];
                (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
            })
            .collect()
    }

    /// Multiply the spectrum by a real even symbol.
    pub fn apply_real_symbol<S: Fn(usize) -> f64>(&self, u: &[f64], symbol: S) -> Vec<f64> {
        let zero = vec![0.0; u.len()];
        self.apply_pair(u, &zero, |j| Complex64::new(symbol(j), 0.0)).0
    }

    /// Zero the modes with |k| above two thirds of the Nyquist wavenumber.
    pub fn dealias2(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let kmax = std::f64::consts::PI / self.grid.dx();
        let cut = 2.0 / 3.0 * kmax;
        self.apply_pair(a, b, |j| if self.k[j].abs() > cut { Complex64::new(0.0, 0.0) } else { Complex64::new(1.0, 0.0) })
    }

    /// Circular shift by m cells; positive m moves data toward larger x.
    pub fn shift_cells(u: &[f64], m: isize) -> Vec<f64> {
        let n = u.len() as isize;
        (0..n).map(|j| u[(((j - m) % n + n) % n) as usize]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydroField {
    pub grid: Grid,
    pub eta: Vec<f64>,
    pub v: Vec<f64>,
}

impl HydroField {
    pub fn new(grid: Grid, eta: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if eta.len() != grid.n || v.len() != grid.n {
            return Err(Error::Invalid("field length does not match grid".into()));
        }
        Ok(Self { grid, eta, v })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, eta: vec![0.0; grid.n], v: vec![0.0; grid.n] }
    }

    pub fn max_eta(&self) -> f64 {
        self.eta.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn check_vacuum(&self) -> Result<()> {
        let m = self.max_eta();
        if !(m < VACUUM_THRESHOLD) {
            return Err(Error::VacuumBreach(m));
        }
        Ok(())
    }

    /// self + s·other
    pub fn axpy(&self, s: f64, other: &HydroField) -> HydroField {
        HydroField {
            grid: self.grid,
            eta: self.eta.iter().zip(&other.eta).map(|(a, b)| a + s * b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> HydroField {
        HydroField { grid: self.grid, eta: self.eta.iter().map(|a| s * a).collect(), v: self.v.iter().map(|a| s * a).collect() }
    }

    pub fn sub(&self, other: &HydroField) -> HydroField {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &HydroField) -> HydroField {
        self.axpy(1.0, other)
    }

    pub fn shift_cells(&self, m: isize) -> HydroField {
        HydroField { grid: self.grid, eta: Spectral::shift_cells(&self.eta, m), v: Spectral::shift_cells(&self.v, m) }
    }
}

/// Trapezoidal sum dx·Σ u_j (spectrally accurate for periodic integrands).
pub fn integrate(grid: &Grid, u: &[f64]) -> f64 {
    grid.dx() * u.iter().sum::<f64>()
}

pub fn dot(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.dx() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// L²×L² pairing ⟨a, b⟩ = ∫ a_η b_η + a_v b_v.
pub fn inner(a: &HydroField, b: &HydroField) -> f64 {
    dot(&a.grid, &a.eta, &b.eta) + dot(&a.grid, &a.v, &b.v)
}

pub fn l2_norm(a: &HydroField) -> f64 {
    inner(a, a).sqrt()
}

/// p = ½∫ηv.
pub fn momentum(field: &HydroField) -> f64 {
    0.5 * dot(&field.grid, &field.eta, &field.v)
}

/// ∇p = (v/2, η/2).
pub fn grad_momentum(field: &HydroField) -> HydroField {
    HydroField { grid: field.grid, eta: field.v.iter().map(|x| 0.5 * x).collect(), v: field.eta.iter().map(|x| 0.5 * x).collect() }
}

/// Energy functional and its derivatives for a fixed nonlinearity and grid.
#[derive(Debug, Clone)]
pub struct FieldOps {
    pub nl: Nonlinearity,
    pub spec: Spectral,
}

impl FieldOps {
    pub fn new(nl: Nonlinearity, grid: Grid) -> Self {
        Self { nl, spec: Spectral::new(grid) }
    }

    pub fn with_mode(nl: Nonlinearity, grid: Grid, mode: DerivativeMode) -> Self {
        Self { nl, spec: Spectral::with_mode(grid, mode) }
    }

    pub fn grid(&self) -> Grid {
        self.spec.grid()
    }

    /// ‖(η, v)‖_X = (∫η² + (Dη)² + v²)^{1/2}.
    pub fn x_norm(&self, field: &HydroField) -> f64 {
        self.x_inner(field, field).max(0.0).sqrt()
    }

    pub fn x_inner(&self, a: &HydroField, b: &HydroField) -> f64 {
        let g = &a.grid;
        let (da, db) = self.spec.deriv2(&a.eta, &b.eta, 1);
        dot(g, &a.eta, &b.eta) + dot(g, &da, &db) + dot(g, &a.v, &b.v)
    }

    pub fn energy(&self, field: &HydroField) -> Result<f64> {
        field.check_vacuum()?;
        let d = self.spec.deriv(&field.eta, 1);
        let mut kin = 0.0;
        let mut flow = 0.0;
        let mut pot = 0.0;
        for j in 0..field.grid.n {
            let r = 1.0 - field.eta[j];
            kin += d[j] * d[j] / r;
            flow += r * field.v[j] * field.v[j];
            pot += self.nl.big_f(r);
        }
        let dx = field.grid.dx();
        Ok(dx * (kin / 8.0 + 0.5 * flow + 0.5 * pot))
    }

    /// L² representative of dE, exact for the discrete energy.
    pub fn grad_energy(&self, field: &HydroField) -> Result<HydroField> {
        field.check_vacuum()?;
        let n = field.grid.n;
        let d = self.spec.deriv(&field.eta, 1);
        let q: Vec<f64> = (0..n).map(|j| d[j] / (1.0 - field.eta[j])).collect();
        let dq = self.spec.deriv(&q, 1);
        let mut ge = vec![0.0; n];
        let mut gv = vec![0.0; n];
        for j in 0..n {
            let r = 1.0 - field.eta[j];
            let v = field.v[j];
            ge[j] = -0.25 * dq[j] + d[j] * d[j] / (8.0 * r * r) - 0.5 * v * v + 0.5 * self.nl.f(r);
            gv[j] = r * v;
        }
        Ok(HydroField { grid: field.grid, eta: ge, v: gv })
    }

    /// Apply the second variation of E at `field` to `eps`.
    pub fn hessian_energy_apply(&self, field: &HydroField, eps: &HydroField) -> Result<HydroField> {
        field.check_vacuum()?;
        let n = field.grid.n;
        let (deta, de) = self.spec.deriv2(&field.eta, &eps.eta, 1);
        let mut flux = vec![0.0; n];
        let mut bprod = vec![0.0; n];
        let mut local = vec![0.0; n];
        for j in 0..n {
            let r = 1.0 - field.eta[j];
            let a = 0.25 / r;
            let b = deta[j] / (2.0 * r * r);
            let dd = deta[j] * deta[j] / (4.0 * r * r * r) - 0.5 * self.nl.df(r);
            flux[j] = a * de[j];
            bprod[j] = b * eps.eta[j];
            local[j] = 0.5 * b * de[j] + dd * eps.eta[j];
        }
        let (dflux, db) = self.spec.deriv2(&flux, &bprod, 1);
        let mut he = vec![0.0; n];
        let mut hv = vec![0.0; n];
        for j in 0..n {
            he[j] = -dflux[j] - 0.5 * db[j] + local[j] - field.v[j] * eps.v[j];
            hv[j] = -field.v[j] * eps.eta[j] + (1.0 - field.eta[j]) * eps.v[j];
        }
        Ok(HydroField { grid: field.grid, eta: he, v: hv })
    }
}
