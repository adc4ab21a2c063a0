//! Soliton chains, the modulated decomposition Q = Σ Q_{c_k,a_k} + ε under
//! the 2N orthogonality conditions, and tracking of (c, a) in time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{inner, FieldOps, Grid, HydroField, VACUUM_THRESHOLD};
use crate::nonlinearity::Nonlinearity;
use crate::profile::Soliton;

pub const MAX_NEWTON_ITERS: usize = 50;
const MAX_HALVINGS: usize = 8;
const REL_TOL: f64 = 1e-10;
const ABS_TOL: f64 = 1e-14;

/// Speeds and positions of a chain; `min_gap` is the separation scale L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub speeds: Vec<f64>,
    pub positions: Vec<f64>,
    #[serde(default)]
    pub min_gap: f64,
}

impl ChainSpec {
    pub fn new(speeds: Vec<f64>, positions: Vec<f64>, min_gap: f64) -> Self {
        Self { speeds, positions, min_gap }
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Admissible speeds in (0, c_s), strictly increasing, and gaps above `min_gap`.
    pub fn validate(&self, nl: &Nonlinearity) -> Result<()> {
        if self.speeds.is_empty() || self.speeds.len() != self.positions.len() {
            return Err(Error::Invalid(format!("{} speeds and {} positions", self.speeds.len(), self.positions.len())));
        }
        let c_s = nl.sound_speed()?;
        for &c in &self.speeds {
            if !(c > 0.0 && c < c_s) {
                return Err(Error::BadSpeed { c, c_s });
            }
        }
        if self.speeds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadOrdering("speeds must be strictly increasing".into()));
        }
        if self.positions.windows(2).any(|w| w[1] - w[0] <= self.min_gap) {
            return Err(Error::BadOrdering(format!("position gaps must exceed L = {}", self.min_gap)));
        }
        Ok(())
    }

    /// σ* = min_k (c_{k+1} − c_k); zero for a single soliton.
    pub fn sigma_star(&self) -> f64 {
        if self.speeds.len() < 2 {
            return 0.0;
        }
        self.speeds.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

fn solitons(nl: &Nonlinearity, speeds: &[f64]) -> Result<Vec<Soliton>> {
    speeds.iter().map(|&c| Soliton::new(nl, c)).collect()
}

fn sum_samples(sols: &[Soliton], a: &[f64], grid: &Grid) -> HydroField {
    let mut f = HydroField::zeros(*grid);
    for (s, &x) in sols.iter().zip(a) {
        let q = s.sample(grid, x);
        for j in 0..grid.n {
            f.eta[j] += q.eta[j];
            f.v[j] += q.v[j];
        }
    }
    f
}

/// R_{c,a} = Σ Q_{c_k,a_k} sampled on the grid.
pub fn build_chain(spec: &ChainSpec, nl: &Nonlinearity, grid: &Grid) -> Result<HydroField> {
    spec.validate(nl)?;
    let sols = solitons(nl, &spec.speeds)?;
    let h = grid.half_length();
    for (s, &a) in sols.iter().zip(&spec.positions) {
        let margin = 10.0 / s.nu;
        if a - margin < -h || a + margin > h {
            return Err(Error::GridTooSmall { half_length: h, required: a.abs() + margin });
        }
    }
    let f = sum_samples(&sols, &spec.positions, grid);
    let m = f.max_eta();
    if m >= VACUUM_THRESHOLD {
        return Err(Error::VacuumBreach(m));
    }
    Ok(f)
}

/// Result of the orthogonal decomposition.
#[derive(Debug, Clone)]
pub struct ModulationFit {
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub epsilon: HydroField,
    pub eps_xnorm: f64,
    /// max over the 2N conditions of |residual|
    pub residual_norm: f64,
    /// the convergence threshold the residual was held to
    pub tolerance: f64,
    pub newton_iters: usize,
}

impl ModulationFit {
    pub fn spec(&self) -> ChainSpec {
        ChainSpec::new(self.c.clone(), self.a.clone(), 0.0)
    }
}

/// Per-soliton samples used by the residual and its Jacobian.
struct Pieces {
    q: HydroField,
    qx: HydroField,
    qxx: HydroField,
    qc: HydroField,
    qxc: HydroField,
}

fn half_swap(f: &HydroField) -> HydroField {
    // ∇p(u) = (u_v/2, u_η/2)
    HydroField { grid: f.grid, eta: f.v.iter().map(|x| 0.5 * x).collect(), v: f.eta.iter().map(|x| 0.5 * x).collect() }
}

fn c_step(nl: &Nonlinearity, c: f64) -> Result<f64> {
    Ok(1e-3 * (nl.sound_speed()? - c).max(1e-6))
}

fn pieces(nl: &Nonlinearity, grid: &Grid, c: f64, a: f64) -> Result<Pieces> {
    let h = c_step(nl, c)?;
    let s0 = Soliton::new(nl, c)?;
    let sp = Soliton::new(nl, c + h)?;
    let sm = Soliton::new(nl, c - h)?;
    let n = grid.n;
    let mut out = Pieces {
        q: HydroField::zeros(*grid),
        qx: HydroField::zeros(*grid),
        qxx: HydroField::zeros(*grid),
        qc: HydroField::zeros(*grid),
        qxc: HydroField::zeros(*grid),
    };
    let k = 0.5 / h;
    for j in 0..n {
        let y = grid.wrap(grid.x(j) - a);
        let p = s0.eval(y);
        let pp = sp.eval(y);
        let pm = sm.eval(y);
        out.q.eta[j] = p.eta;
        out.q.v[j] = p.v;
        out.qx.eta[j] = p.deta;
        out.qx.v[j] = p.dv;
        out.qxx.eta[j] = p.d2eta;
        out.qxx.v[j] = p.d2v;
        out.qc.eta[j] = k * (pp.eta - pm.eta);
        out.qc.v[j] = k * (pp.v - pm.v);
        out.qxc.eta[j] = k * (pp.deta - pm.deta);
        out.qxc.v[j] = k * (pp.dv - pm.dv);
    }
    Ok(out)
}

/// Q_k and ∂ₓQ_k only, for residual evaluation during the line search.
fn light_pieces(nl: &Nonlinearity, grid: &Grid, c: f64, a: f64) -> Result<(HydroField, HydroField)> {
    let s = Soliton::new(nl, c)?;
    let mut q = HydroField::zeros(*grid);
    let mut qx = HydroField::zeros(*grid);
    for j in 0..grid.n {
        let p = s.eval(grid.wrap(grid.x(j) - a));
        q.eta[j] = p.eta;
        q.v[j] = p.v;
        qx.eta[j] = p.deta;
        qx.v[j] = p.dv;
    }
    Ok((q, qx))
}

fn remainder(field: &HydroField, qs: &[&HydroField]) -> HydroField {
    let mut e = field.clone();
    for q in qs {
        for j in 0..e.grid.n {
            e.eta[j] -= q.eta[j];
            e.v[j] -= q.v[j];
        }
    }
    e
}

/// Residual vector (⟨ε, ∂ₓQ_k⟩, ∇p(Q_k)·ε) for k = 1..N.
fn residual_vector(eps: &HydroField, q: &[&HydroField], qx: &[&HydroField]) -> DVector<f64> {
    let n = q.len();
    let mut r = DVector::zeros(2 * n);
    for k in 0..n {
        r[k] = inner(eps, qx[k]);
        r[k + n] = inner(&half_swap(q[k]), eps);
    }
    r
}

fn tolerance(ops: &FieldOps, eps_xnorm: f64, q: &[&HydroField]) -> f64 {
    q.iter().map(|qk| (REL_TOL * eps_xnorm * ops.x_norm(qk)).max(ABS_TOL)).fold(f64::INFINITY, f64::min)
}

fn max_abs(r: &DVector<f64>) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// The 2N×2N matrix of the modulation system, unknowns ordered (a, c).
fn jacobian(parts: &[Pieces], eps: &HydroField) -> DMatrix<f64> {
    let n = parts.len();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let pk = &parts[k];
        let gp = half_swap(&pk.q);
        for j in 0..n {
            let pj = &parts[j];
            m[(k, j)] = inner(&pj.qx, &pk.qx);
            m[(k, j + n)] = -inner(&pj.qc, &pk.qx);
            m[(k + n, j)] = inner(&gp, &pj.qx);
            m[(k + n, j + n)] = -inner(&gp, &pj.qc);
        }
        m[(k, k)] -= inner(&pk.qxx, eps);
        m[(k, k + n)] += inner(&pk.qxc, eps);
        m[(k + n, k)] -= inner(&half_swap(&pk.qx), eps);
        m[(k + n, k + n)] += inner(&half_swap(&pk.qc), eps);
    }
    m
}

fn trial_residual(ops: &FieldOps, field: &HydroField, c: &[f64], a: &[f64]) -> Result<(f64, HydroField, DVector<f64>)> {
    let grid = field.grid;
    let mut q = Vec::with_capacity(c.len());
    let mut qx = Vec::with_capacity(c.len());
    for (&ck, &ak) in c.iter().zip(a) {
        let (x, y) = light_pieces(&ops.nl, &grid, ck, ak)?;
        q.push(x);
        qx.push(y);
    }
    let qr: Vec<&HydroField> = q.iter().collect();
    let qxr: Vec<&HydroField> = qx.iter().collect();
    let eps = remainder(field, &qr);
    let r = residual_vector(&eps, &qr, &qxr);
    let tol = tolerance(ops, ops.x_norm(&eps), &qr);
    Ok((tol, eps, r))
}

/// Damped Newton on the orthogonality conditions, starting from `guess`.
pub fn decompose(ops: &FieldOps, field: &HydroField, guess: &ChainSpec) -> Result<ModulationFit> {
    let n = guess.len();
    if n == 0 || guess.positions.len() != n {
        return Err(Error::Invalid("guess needs matching, non-empty speeds and positions".into()));
    }
    let c_s = ops.nl.sound_speed()?;
    // speed band standing in for the modulation tube: c may move at most half
    // way from the guess to either end of (0, c_s)
    let band: Vec<(f64, f64)> = guess.speeds.iter().map(|&c| (0.5 * c, 0.5 * (c + c_s))).collect();
    let mut c = guess.speeds.clone();
    let mut a = guess.positions.clone();
    let grid = field.grid;
    let mut parts: Vec<Pieces> = Vec::with_capacity(n);
    for k in 0..n {
        parts.push(pieces(&ops.nl, &grid, c[k], a[k])?);
    }
    let q: Vec<&HydroField> = parts.iter().map(|p| &p.q).collect();
    let mut eps = remainder(field, &q);
    let mut r = residual_vector(&eps, &q, &parts.iter().map(|p| &p.qx).collect::<Vec<_>>());
    let mut tol = tolerance(ops, ops.x_norm(&eps), &q);
    let mut res = max_abs(&r);
    let mut iters = 0;
    while res > tol {
        if iters == MAX_NEWTON_ITERS {
            return Err(Error::NoConvergence { iters, residual: res });
        }
        iters += 1;
        let jac = jacobian(&parts, &eps);
        let step = jac.lu().solve(&(-&r)).ok_or(Error::NoConvergence { iters, residual: res })?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let ta: Vec<f64> = (0..n).map(|k| a[k] + lambda * step[k]).collect();
            let tc: Vec<f64> = (0..n).map(|k| c[k] + lambda * step[k + n]).collect();
            if tc.iter().zip(&band).any(|(x, (lo, hi))| !(x > lo && x < hi)) {
                lambda *= 0.5;
                continue;
            }
            if let Ok((ttol, teps, tr)) = trial_residual(ops, field, &tc, &ta) {
                let tres = max_abs(&tr);
                if tres < res || tres <= ttol {
                    accepted = Some((ta, tc, ttol, teps, tr, tres));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((ta, tc, ttol, teps, tr, tres)) = accepted else {
            return Err(Error::NoConvergence { iters, residual: res });
        };
        a = ta;
        c = tc;
        eps = teps;
        r = tr;
        tol = ttol;
        res = tres;
        if res > tol {
            for k in 0..n {
                parts[k] = pieces(&ops.nl, &grid, c[k], a[k])?;
            }
        }
    }
    let eps_xnorm = ops.x_norm(&eps);
    Ok(ModulationFit { c, a, epsilon: eps, eps_xnorm, residual_norm: res, tolerance: tol, newton_iters: iters })
}

/// M = D + H, the matrix of the modulation ODE.
#[derive(Debug, Clone)]
pub struct ModulationMatrix {
    pub m: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

pub fn modulation_matrix(ops: &FieldOps, field: &HydroField, fit: &ModulationFit) -> Result<ModulationMatrix> {
    let n = fit.c.len();
    let grid = field.grid;
    let parts: Vec<Pieces> = (0..n).map(|k| pieces(&ops.nl, &grid, fit.c[k], fit.a[k])).collect::<Result<_>>()?;
    let q: Vec<&HydroField> = parts.iter().map(|p| &p.q).collect();
    let eps = remainder(field, &q);
    let m = jacobian(&parts, &eps);
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let p = &parts[k];
        let gp = half_swap(&p.q);
        d[(k, k)] = inner(&p.qx, &p.qx);
        d[(k, k + n)] = -inner(&p.qc, &p.qx);
        d[(k + n, k)] = inner(&gp, &p.qx);
        d[(k + n, k + n)] = -inner(&gp, &p.qc);
    }
    let h = &m - &d;
    Ok(ModulationMatrix { m, d, h })
}

/// One row of a tracked series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackPoint {
    pub t: f64,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub eps_xnorm: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub newton_iters: usize,
}

/// Tracked series with centered-difference rates. `error` holds the failure
/// that cut the series short, if any.
#[derive(Debug, Clone)]
pub struct Track {
    pub points: Vec<TrackPoint>,
    pub a_dot: Vec<Vec<f64>>,
    pub c_dot: Vec<Vec<f64>>,
    pub error: Option<Error>,
}

impl Track {
    /// max over t and k of |a′_k − c_k| + |c′_k|.
    pub fn max_modulation_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            for k in 0..p.c.len() {
                m = m.max((self.a_dot[i][k] - p.c[k]).abs() + self.c_dot[i][k].abs());
            }
        }
        m
    }
}

/// Streaming tracker: each snapshot is decomposed with a warm start from the
/// previous fit, with positions advanced by c·Δt.
#[derive(Debug)]
pub struct Tracker<'a> {
    ops: &'a FieldOps,
    guess: ChainSpec,
    last_t: Option<f64>,
    points: Vec<TrackPoint>,
    error: Option<Error>,
}

impl<'a> Tracker<'a> {
    pub fn new(ops: &'a FieldOps, guess: ChainSpec) -> Self {
        Self { ops, guess, last_t: None, points: Vec::new(), error: None }
    }

    pub fn push(&mut self, t: f64, field: &HydroField) -> Result<ModulationFit> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let mut guess = self.guess.clone();
        if let Some(t0) = self.last_t {
            for k in 0..guess.len() {
                guess.positions[k] += guess.speeds[k] * (t - t0);
            }
        }
        match decompose(self.ops, field, &guess) {
            Ok(fit) => {
                self.points.push(TrackPoint {
                    t,
                    c: fit.c.clone(),
                    a: fit.a.clone(),
                    eps_xnorm: fit.eps_xnorm,
                    residual: fit.residual_norm,
                    tolerance: fit.tolerance,
                    newton_iters: fit.newton_iters,
                });
                self.guess = fit.spec();
                self.last_t = Some(t);
                Ok(fit)
            }
            Err(e) => {
                self.error = Some(e.clone());
                Err(e)
            }
        }
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn finish(self) -> Track {
        let (a_dot, c_dot) = rates(&self.points);
        Track { points: self.points, a_dot, c_dot, error: self.error }
    }
}

/// Centered differences on (possibly non-uniform) snapshot times, one-sided at the ends.
fn rates(points: &[TrackPoint]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = points.len();
    let diff = |pick: &dyn Fn(&TrackPoint) -> &Vec<f64>| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                if m < 2 {
                    return vec![0.0; pick(&points[i]).len()];
                }
                let (lo, hi) = (i.saturating_sub(1), (i + 1).min(m - 1));
                let dt = points[hi].t - points[lo].t;
                pick(&points[hi]).iter().zip(pick(&points[lo])).map(|(x, y)| (x - y) / dt).collect()
            })
            .collect()
    };
    (diff(&|p| &p.a), diff(&|p| &p.c))
}

/// Tracks a whole snapshot stream; a failed solve ends the series early.
pub fn track<'f, I>(ops: &FieldOps, snapshots: I, guess: ChainSpec) -> Track
where
    I: IntoIterator<Item = (f64, &'f HydroField)>,
{
    let mut tr = Tracker::new(ops, guess);
    for (t, f) in snapshots {
        if tr.push(t, f).is_err() {
            break;
        }
    }
    tr.finish()
}
