//! The linearized operator H_c = ∇²(E − c p)(Q_c), its low spectrum, the
//! essential-spectrum floor and the constrained coercivity constant l_c.
//!
//! Unknowns are interleaved as (ε_η(x_0), ε_v(x_0), ε_η(x_1), ...). The kinetic
//! part −(a ε′)′ with a = 1/(4(1−η_c)) is discretized as Gᵀ diag(a) G where G is
//! a difference operator onto half nodes, so the matrix is symmetric and the
//! kinetic form is nonnegative. The default difference is fourth order; the
//! three-point form leaves an O(dx²) residual on the translation mode. Periodic wrap-around rows of G are kept apart
//! as a low-rank positive term, which leaves a banded core for Cholesky solves.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{Grid, HydroField, Spectral};
use crate::nonlinearity::Nonlinearity;
use crate::profile::{Soliton, SolitonProfile};

/// Matrices with 2n at or below this size are diagonalized densely.
pub const DENSE_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// Three-point divergence form (second order).
    Second,
    /// Staggered fourth-order difference, seven-point divergence form.
    #[default]
    Fourth,
}

impl Stencil {
    /// (offset from j, weight·dx) of the half-node difference at x_{j+1/2}.
    fn taps(self) -> &'static [(isize, f64)] {
        match self {
            Stencil::Second => &[(0, -1.0), (1, 1.0)],
            Stencil::Fourth => &[(-1, 1.0 / 24.0), (0, -9.0 / 8.0), (1, 9.0 / 8.0), (2, -1.0 / 24.0)],
        }
    }

    fn reach(self) -> usize {
        match self {
            Stencil::Second => 1,
            Stencil::Fourth => 3,
        }
    }
}

/// Symmetric banded matrix in lower storage: band[i*(bw+1) + k] = A[i][i−k].
#[derive(Debug, Clone)]
struct Banded {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl Banded {
    fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, band: vec![0.0; n * (bw + 1)] }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        assert!(k <= self.bw, "entry outside band");
        self.band[r * (self.bw + 1) + k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        if k > self.bw {
            0.0
        } else {
            self.band[r * (self.bw + 1) + k]
        }
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let row = &self.band[i * w..(i + 1) * w];
            let mut acc = row[0] * x[i];
            for k in 1..w.min(i + 1) {
                acc += row[k] * x[i - k];
                y[i - k] += row[k] * x[i];
            }
            y[i] += acc;
        }
    }

    /// Cholesky factor of (self − σI) in the same storage; None if not positive definite.
    fn cholesky_shifted(&self, sigma: f64) -> Option<Banded> {
        let w = self.bw + 1;
        let mut l = self.clone();
        for i in 0..self.n {
            l.band[i * w] -= sigma;
        }
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let mut s = l.band[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(self.bw));
                for k in k0..j {
                    s -= l.band[i * w + (i - k)] * l.band[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l.band[i * w] = s.sqrt();
                } else {
                    l.band[i * w + (i - j)] = s / l.band[j * w];
                }
            }
        }
        Some(l)
    }

    fn chol_solve(&self, b: &[f64]) -> Vec<f64> {
        let w = self.bw + 1;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in 1..w.min(i + 1) {
                s -= self.band[i * w + k] * y[i - k];
            }
            y[i] = s / self.band[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in 1..w.min(self.n - i) {
                s -= self.band[(i + k) * w + k] * y[i + k];
            }
            y[i] = s / self.band[i * w];
        }
        y
    }
}

/// Discretized H_c acting on interleaved (ε_η, ε_v) samples.
#[derive(Debug, Clone)]
pub struct HcOperator {
    pub c: f64,
    pub grid: Grid,
    pub stencil: Stencil,
    core: Banded,
    /// Columns u with A = core + Σ u uᵀ (wrap-around kinetic terms).
    wrap: Vec<Vec<(usize, f64)>>,
    /// Half-node coefficients a_{j+1/2} and nodal potential, coupling, lower block.
    a_half: Vec<f64>,
    potential: Vec<f64>,
    coupling: Vec<f64>,
    lower: Vec<f64>,
}

pub fn assemble_hc(nl: &Nonlinearity, profile: &SolitonProfile) -> Result<HcOperator> {
    assemble_hc_with(nl, &profile.soliton, &profile.grid, Stencil::default())
}

pub fn assemble_hc_with(nl: &Nonlinearity, sol: &Soliton, grid: &Grid, stencil: Stencil) -> Result<HcOperator> {
    let n = grid.n;
    let dx = grid.dx();
    let c = sol.c;
    let mut potential = vec![0.0; n];
    let mut coupling = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut a_half = vec![0.0; n];
    for j in 0..n {
        let eta = sol.eta_at(grid.x(j));
        if eta >= crate::field_ops::VACUUM_THRESHOLD {
            return Err(Error::VacuumBreach(eta));
        }
        let r = 1.0 - eta;
        potential[j] = c * c * eta / (4.0 * r * r * r) - (2.0 * nl.big_f(r) + 2.0 * r * nl.f(r) + 2.0 * r * r * nl.df(r)) / (4.0 * r * r);
        coupling[j] = -c / (2.0 * r);
        lower[j] = r;
        let eh = sol.eta_at(grid.wrap(grid.x(j) + 0.5 * dx));
        a_half[j] = 0.25 / (1.0 - eh);
    }
    let bw = 2 * stencil.reach() + 1;
    let mut core = Banded::zeros(2 * n, bw);
    for j in 0..n {
        core.add(2 * j, 2 * j, potential[j]);
        core.add(2 * j + 1, 2 * j, coupling[j]);
        core.add(2 * j + 1, 2 * j + 1, lower[j]);
    }
    let taps = stencil.taps();
    let mut wrap = vec![];
    for (h, &ah) in a_half.iter().enumerate() {
        let idx: Vec<(isize, f64)> = taps.iter().map(|&(o, w)| (h as isize + o, w / dx)).collect();
        let wraps = idx.iter().any(|&(i, _)| i < 0 || i >= n as isize);
        let cols: Vec<(usize, f64)> = idx.iter().map(|&(i, w)| (2 * i.rem_euclid(n as isize) as usize, w)).collect();
        if wraps {
            let s = ah.sqrt();
            wrap.push(cols.iter().map(|&(i, w)| (i, s * w)).collect());
        } else {
            for &(i, wi) in &cols {
                for &(k, wk) in &cols {
                    if i >= k {
                        core.add(i, k, ah * wi * wk);
                    }
                }
            }
        }
    }
    Ok(HcOperator { c, grid: *grid, stencil, core, wrap, a_half, potential, coupling, lower })
}

fn interleave(f: &HydroField) -> Vec<f64> {
    let mut x = vec![0.0; 2 * f.grid.n];
    for j in 0..f.grid.n {
        x[2 * j] = f.eta[j];
        x[2 * j + 1] = f.v[j];
    }
    x
}

fn deinterleave(grid: &Grid, x: &[f64]) -> HydroField {
    HydroField { grid: *grid, eta: x.iter().step_by(2).copied().collect(), v: x.iter().skip(1).step_by(2).copied().collect() }
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vnorm(a: &[f64]) -> f64 {
    vdot(a, a).sqrt()
}

impl HcOperator {
    pub fn dim(&self) -> usize {
        2 * self.grid.n
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.core.matvec(x, &mut y);
        for u in &self.wrap {
            let s: f64 = u.iter().map(|&(i, w)| w * x[i]).sum();
            for &(i, w) in u {
                y[i] += w * s;
            }
        }
        y
    }

    pub fn apply(&self, eps: &HydroField) -> HydroField {
        deinterleave(&self.grid, &self.matvec(&interleave(eps)))
    }

    /// Dense copy (for small problems and symmetry checks).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i.saturating_sub(self.core.bw)..=i {
                let v = self.core.get(i, j);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        for u in &self.wrap {
            for &(i, wi) in u {
                for &(k, wk) in u {
                    a[(i, k)] += wi * wk;
                }
            }
        }
        a
    }

    /// ∫ a (ε_η′)² + V ε_η² + 2·coupling·ε_η ε_v + (1−η) ε_v², summed node by node.
    pub fn quadratic_form(&self, eps: &HydroField) -> f64 {
        let n = self.grid.n;
        let dx = self.grid.dx();
        let taps = self.stencil.taps();
        let mut s = 0.0;
        for h in 0..n {
            let d: f64 = taps.iter().map(|&(o, w)| w * eps.eta[(h as isize + o).rem_euclid(n as isize) as usize]).sum::<f64>() / dx;
            s += self.a_half[h] * d * d;
        }
        for j in 0..n {
            let (e, v) = (eps.eta[j], eps.v[j]);
            s += self.potential[j] * e * e + 2.0 * self.coupling[j] * e * v + self.lower[j] * v * v;
        }
        s * dx
    }

    pub fn coupling_diagonal(&self) -> &[f64] {
        &self.coupling
    }

    /// Solver for (A − σ I) x = b through the banded core and a Woodbury correction.
    fn shifted_solver(&self, sigma: f64) -> Option<ShiftedSolver> {
        let chol = self.core.cholesky_shifted(sigma)?;
        let m = self.dim();
        let r = self.wrap.len();
        let mut z = Vec::with_capacity(r);
        for u in &self.wrap {
            let mut col = vec![0.0; m];
            for &(i, w) in u {
                col[i] += w;
            }
            z.push(chol.chol_solve(&col));
        }
        let mut cap = DMatrix::identity(r, r);
        for (a, u) in self.wrap.iter().enumerate() {
            for b in 0..r {
                cap[(a, b)] += u.iter().map(|&(i, w)| w * z[b][i]).sum::<f64>();
            }
        }
        let cap_inv = cap.try_inverse()?;
        Some(ShiftedSolver { chol, z, cap_inv, wrap: self.wrap.clone() })
    }
}

struct ShiftedSolver {
    chol: Banded,
    z: Vec<Vec<f64>>,
    cap_inv: DMatrix<f64>,
    wrap: Vec<Vec<(usize, f64)>>,
}

impl ShiftedSolver {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.chol.chol_solve(b);
        let r = self.wrap.len();
        if r == 0 {
            return x;
        }
        let ut: Vec<f64> = self.wrap.iter().map(|u| u.iter().map(|&(i, w)| w * x[i]).sum()).collect();
        for a in 0..r {
            let coef: f64 = (0..r).map(|b| self.cap_inv[(a, b)] * ut[b]).sum();
            for (xi, zi) in x.iter_mut().zip(&self.z[a]) {
                *xi -= coef * zi;
            }
        }
        x
    }
}

/// (c_s² − c²)/(1 + c_s² + √((1 − c_s²)² + 4c²)).
pub fn essential_spectrum_floor(c_s: f64, c: f64) -> f64 {
    (c_s * c_s - c * c) / (1.0 + c_s * c_s + ((1.0 - c_s * c_s).powi(2) + 4.0 * c * c).sqrt())
}

/// Bottom of the far-field symbol [[(k² + c_s²)/4, −c/2], [−c/2, 1]] over k.
pub fn far_field_floor(c_s: f64, c: f64) -> f64 {
    let s2 = c_s * c_s;
    (s2 - c * c) / (2.0 + 0.5 * s2 + ((2.0 - 0.5 * s2).powi(2) + 4.0 * c * c).sqrt())
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: HydroField,
}

struct LanczosOut {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

type Projector<'a> = &'a dyn Fn(&mut Vec<f64>);

/// Lanczos with full reorthogonalization for the `want` largest eigenvalues
/// of a symmetric operator (negate it for the smallest).
fn lanczos_largest<F: FnMut(&[f64]) -> Vec<f64>>(
    mut op: F,
    start: Vec<f64>,
    want: usize,
    tol: f64,
    max_iter: usize,
    project: Option<Projector>,
) -> Result<LanczosOut> {
    let dim = start.len();
    let max_iter = max_iter.min(dim);
    let mut q = start;
    if let Some(p) = project {
        p(&mut q);
    }
    let nq = vnorm(&q);
    if nq == 0.0 {
        return Err(Error::SolverFail("zero start vector".into()));
    }
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = vec![];
    let mut beta: Vec<f64> = vec![];
    loop {
        let k = basis.len() - 1;
        let mut w = op(&basis[k]);
        if let Some(p) = project {
            p(&mut w);
        }
        let a = vdot(&w, &basis[k]);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let h = vdot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= h * y);
            }
        }
        let bnext = vnorm(&w);
        let m = alpha.len();
        if m < want && bnext < 1e-14 {
            return Err(Error::SolverFail("Krylov space exhausted before enough eigenpairs".into()));
        }
        let check = m >= want && (m.is_multiple_of(5) || m == max_iter || bnext < 1e-14);
        if check {
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alpha[i];
                if i + 1 < m {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
            let scale = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
            let converged = order[..want].iter().all(|&i| (bnext * eig.eigenvectors[(m - 1, i)]).abs() <= tol * scale);
            if converged || m >= max_iter || bnext < 1e-14 {
                if !converged && bnext >= 1e-14 {
                    return Err(Error::SolverFail(format!("Lanczos did not converge in {m} steps")));
                }
                let mut values = vec![];
                let mut vectors = vec![];
                for &i in &order[..want.min(m)] {
                    values.push(eig.eigenvalues[i]);
                    let mut v = vec![0.0; dim];
                    for (kk, b) in basis.iter().enumerate() {
                        let s = eig.eigenvectors[(kk, i)];
                        v.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
                    }
                    vectors.push(v);
                }
                return Ok(LanczosOut { values, vectors });
            }
        }
        beta.push(bnext);
        w.iter_mut().for_each(|x| *x /= bnext);
        basis.push(w);
    }
}

fn random_start(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// The m smallest eigenpairs of the discretized operator, ascending.
pub fn low_spectrum(op: &HcOperator, m: usize) -> Result<Vec<EigenPair>> {
    if m == 0 || m > 10 {
        return Err(Error::Invalid(format!("requested {m} eigenpairs; must be in 1..=10")));
    }
    let dim = op.dim();
    let mut pairs: Vec<(f64, Vec<f64>)> = if dim <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(op.to_dense());
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        idx[..m].iter().map(|&i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect())).collect()
    } else {
        let mut sigma = -0.05;
        let solver = loop {
            if let Some(s) = op.shifted_solver(sigma) {
                break s;
            }
            sigma *= 2.0;
            if sigma < -1e8 {
                return Err(Error::SolverFail("no admissible shift below the spectrum".into()));
            }
        };
        let out = lanczos_largest(|x| solver.solve(x), random_start(dim, 17), m, 1e-12, 600, None)?;
        out.values.iter().zip(out.vectors).map(|(&t, v)| (sigma + 1.0 / t, v)).collect()
    };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs
        .into_iter()
        .map(|(value, v)| {
            let nv = vnorm(&v);
            EigenPair { value, vector: deinterleave(&op.grid, &v.iter().map(|x| x / nv).collect::<Vec<_>>()) }
        })
        .collect())
}

/// Smallest Rayleigh quotient ⟨Aε, ε⟩/‖ε‖²_X over ε ⟂ {∂ₓQ_c, ∇p(Q_c)} in L²×L².
/// With `constrained = false` the orthogonality conditions are dropped.
pub fn constrained_coercivity(op: &HcOperator, sol: &Soliton, constrained: bool) -> Result<f64> {
    let grid = op.grid;
    let n = grid.n;
    let spec = Spectral::new(grid);
    let k2: Vec<f64> = (0..n).map(|j| grid.wavenumber(j).powi(2)).collect();
    // G^{−1/2}: (1 + k²)^{−1/2} on the η component, identity on v
    let gmh = |x: &[f64]| -> Vec<f64> {
        let f = deinterleave(&grid, x);
        let eta = spec.apply_real_symbol(&f.eta, |j| 1.0 / (1.0 + k2[j]).sqrt());
        interleave(&HydroField { grid, eta, v: f.v })
    };
    let mut cons: Vec<Vec<f64>> = vec![];
    if constrained {
        let dq = sol.sample_dx(&grid, 0.0);
        let q = sol.sample(&grid, 0.0);
        let gp = crate::field_ops::grad_momentum(&q);
        for c in [dq, gp] {
            let mut v = gmh(&interleave(&c));
            for b in &cons {
                let h = vdot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= h * y);
            }
            let nv = vnorm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            cons.push(v);
        }
    }
    let project = |w: &mut Vec<f64>| {
        for _ in 0..2 {
            for b in &cons {
                let h = vdot(w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= h * y);
            }
        }
    };
    let op_neg = |x: &[f64]| -> Vec<f64> {
        let y = gmh(&op.matvec(&gmh(x)));
        y.into_iter().map(|v| -v).collect()
    };
    let out = lanczos_largest(op_neg, random_start(op.dim(), 23), 1, 1e-7, 1500, Some(&project))?;
    Ok(-out.values[0])
}
