//! Quantitative checks on runs and on soliton chains: the virial identity,
//! monotonicity of localized momenta, orbital stability, second-order
//! expansions around a chain, and exponential cross-term estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, Evolver};
use crate::field_ops::{dot, inner, FieldOps, Grid, HydroField};
use crate::localization::{build_cutoffs, functional_g, localized_momentum_pk, tilde_momentum, CutoffFamily, CutoffRates};
use crate::modulation::{build_chain, ChainSpec, Track, Tracker};
use crate::nonlinearity::Nonlinearity;
use crate::profile::Soliton;

pub const SAFETY: f64 = 10.0;

/// One row of a chain run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub momentum: f64,
    pub p_tilde: Vec<f64>,
    pub g: f64,
    pub eps_xnorm: f64,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub max_eta: f64,
    /// ‖Q(t) − R_{c*,a(t)}‖_X
    pub dist_star: f64,
}

// ---------------------------------------------------------------- virial

/// Smooth weight χ̃(t, x) for the virial identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VirialCutoff {
    One,
    /// ½(1 + tanh(rate·(x − center − speed·t)))
    Tanh {
        center: f64,
        rate: f64,
        speed: f64,
    },
}

impl VirialCutoff {
    /// (χ, ∂ₜχ, ∂ₓχ, ∂ₓ³χ) at (t, x).
    fn eval(&self, t: f64, x: f64) -> (f64, f64, f64, f64) {
        match *self {
            VirialCutoff::One => (1.0, 0.0, 0.0, 0.0),
            VirialCutoff::Tanh { center, rate, speed } => {
                let s = (rate * (x - center - speed * t)).tanh();
                let q = 1.0 - s * s;
                let dx = 0.5 * rate * q;
                let dxxx = -rate * rate * rate * q * (1.0 - 3.0 * s * s);
                (0.5 * (1.0 + s), -speed * dx, dx, dxxx)
            }
        }
    }

    fn sample(&self, grid: &Grid, t: f64) -> Vec<f64> {
        (0..grid.n).map(|j| self.eval(t, grid.x(j)).0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VirialCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub mismatch: f64,
}

impl VirialCheck {
    pub fn relative(&self) -> f64 {
        self.mismatch / (self.lhs.abs() + self.rhs.abs() + 1.0)
    }
}

pub const VIRIAL_DT: f64 = 1e-4;

/// Compares a centered time difference of ∫χ̃ηv with the closed-form derivative.
pub fn virial_identity_check(ev: &Evolver, field: &HydroField, chi: &VirialCutoff, dt: f64) -> Result<VirialCheck> {
    field.check_vacuum()?;
    let grid = field.grid;
    let weighted =
        |f: &HydroField, t: f64| dot(&grid, &chi.sample(&grid, t), &f.eta.iter().zip(&f.v).map(|(a, b)| a * b).collect::<Vec<_>>());
    let fwd = ev.step(field, 0.0, dt)?;
    let bwd = ev.step(field, 0.0, -dt)?;
    let lhs = (weighted(&fwd, dt) - weighted(&bwd, -dt)) / (2.0 * dt);
    let rhs = virial_rhs(&ev.ops, field, chi, 0.0)?;
    Ok(VirialCheck { lhs, rhs, mismatch: (lhs - rhs).abs() })
}

/// ∫∂ₜχ̃ηv + ∫∂ₓχ̃((1−2η)v² + F̃(η) + (3−2η)(∂ₓη)²/(4(1−η)²)) + ½∫∂ₓ³χ̃(η + ln(1−η)).
pub fn virial_rhs(ops: &FieldOps, field: &HydroField, chi: &VirialCutoff, t: f64) -> Result<f64> {
    field.check_vacuum()?;
    let grid = field.grid;
    let d = ops.spec.deriv(&field.eta, 1);
    let mut s = 0.0;
    for j in 0..grid.n {
        let (_, ct, cx, cxxx) = chi.eval(t, grid.x(j));
        let (e, v) = (field.eta[j], field.v[j]);
        let r = 1.0 - e;
        let flux = (1.0 - 2.0 * e) * v * v + ops.nl.f_tilde(e) + (3.0 - 2.0 * e) * d[j] * d[j] / (4.0 * r * r);
        s += ct * e * v + cx * flux + 0.5 * cxxx * (e + r.ln());
    }
    Ok(s * grid.dx())
}

// ---------------------------------------------------------------- monotonicity

/// Upper exponential envelope C·e^{−λt} of the positive part of a rate series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub amplitude: f64,
    pub rate: f64,
    /// ∫₀^T C e^{−λt} dt
    pub integrated: f64,
}

/// Fits an envelope to the positive part of `sign`·dy/dt.
fn fit_envelope(times: &[f64], y: &[f64], sign: f64) -> Option<EnvelopeFit> {
    let mut pts = Vec::new();
    for i in 0..times.len().saturating_sub(1) {
        let dt = times[i + 1] - times[i];
        let r = sign * (y[i + 1] - y[i]) / dt;
        if r > 0.0 && dt > 0.0 {
            pts.push((0.5 * (times[i] + times[i + 1]), r.ln()));
        }
    }
    if pts.is_empty() {
        return None;
    }
    let rate = if pts.len() >= 2 { -least_squares_slope(&pts) } else { 0.0 };
    let log_amp = pts.iter().map(|(t, l)| l + rate * t).fold(f64::NEG_INFINITY, f64::max);
    let amplitude = log_amp.exp();
    let t_end = times[times.len() - 1] - times[0];
    let integrated = if rate.abs() * t_end < 1e-12 { amplitude * t_end } else { amplitude * (-(-rate * t_end).exp_m1()) / rate };
    Some(EnvelopeFit { amplitude, rate, integrated })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesVerdict {
    pub k: usize,
    /// min_t (p̃_k(t) − p̃_k(0)), or max_t (G(t) − G(0)) for the G row
    pub extreme_increment: f64,
    pub envelope: Option<EnvelopeFit>,
    /// fitted λ / (τ₀σ*), the exponent constant a of the envelope
    pub fitted_a: Option<f64>,
    pub flagged: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub tilde: Vec<SeriesVerdict>,
    pub g: SeriesVerdict,
    /// max_t |p̃_1(t) − p̃_1(0)|
    pub p1_drift: f64,
    pub pass: bool,
}

fn verdict(k: usize, times: &[f64], y: &[f64], sign: f64, tau0: f64, sigma_star: f64) -> SeriesVerdict {
    let y0 = y[0];
    // sign = 1 tracks decrease (p̃), sign = −1 tracks increase (G)
    let extreme = if sign > 0.0 {
        y.iter().map(|v| v - y0).fold(f64::INFINITY, f64::min)
    } else {
        y.iter().map(|v| v - y0).fold(f64::NEG_INFINITY, f64::max)
    };
    let env = fit_envelope(times, y, -sign);
    let target = 0.5 * tau0 * sigma_star;
    let fitted_a = env.map(|e| e.rate / (tau0 * sigma_star));
    let flagged = env.is_some_and(|e| e.rate < target);
    let allowed = SAFETY * env.map_or(0.0, |e| e.integrated);
    let pass = sign * extreme >= -allowed;
    SeriesVerdict { k, extreme_increment: extreme, envelope: env, fitted_a, flagged, pass }
}

/// `p_tilde[i][k−1]` is p̃_k at `times[i]`.
pub fn monotonicity_report(times: &[f64], p_tilde: &[Vec<f64>], g: &[f64], sigma_star: f64, tau0: f64) -> Result<MonotonicityReport> {
    if times.len() < 2 || p_tilde.len() != times.len() || g.len() != times.len() {
        return Err(Error::Invalid("monotonicity needs matching series of length >= 2".into()));
    }
    let n = p_tilde[0].len();
    let col = |k: usize| -> Vec<f64> { p_tilde.iter().map(|r| r[k]).collect() };
    let p1 = col(0);
    let p1_drift = p1.iter().map(|v| (v - p1[0]).abs()).fold(0.0, f64::max);
    let tilde: Vec<SeriesVerdict> = (1..n).map(|k| verdict(k + 1, times, &col(k), 1.0, tau0, sigma_star)).collect();
    let gv = verdict(0, times, g, -1.0, tau0, sigma_star);
    let pass = tilde.iter().all(|v| v.pass) && gv.pass;
    Ok(MonotonicityReport { tilde, g: gv, p1_drift, pass })
}

// ---------------------------------------------------------------- stability

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub alpha0: f64,
    pub l0: f64,
    pub tau0: f64,
    pub sup_distance: f64,
    /// α₀ + e^{−τ₀L₀/2}
    pub k_value: f64,
    pub ratio: f64,
    pub sup_modulation_defect: f64,
    pub ordering_violation: bool,
    /// None when the speeds are not strictly increasing
    pub verdict: Option<bool>,
}

pub fn stability_report(records: &[DiagnosticsRecord], track: &Track, c_star: &[f64], alpha0: f64, l0: f64, tau0: f64) -> StabilityReport {
    let ordering_violation = c_star.windows(2).any(|w| w[1] <= w[0]);
    let sup_distance = records.iter().map(|r| r.dist_star).fold(0.0, f64::max);
    let k_value = alpha0 + (-0.5 * tau0 * l0).exp();
    let ratio = sup_distance / k_value;
    let verdict = if ordering_violation { None } else { Some(ratio.is_finite() && ratio <= SAFETY && track.error.is_none()) };
    StabilityReport {
        alpha0,
        l0,
        tau0,
        sup_distance,
        k_value,
        ratio,
        sup_modulation_defect: track.max_modulation_defect(),
        ordering_violation,
        verdict,
    }
}

/// sup-distance ratio between a run at α₀/2 and one at α₀.
pub fn alpha_scaling(full: &StabilityReport, half: &StabilityReport) -> f64 {
    half.sup_distance / full.sup_distance
}

// ---------------------------------------------------------------- chain runs

/// Inputs for an evolved, tracked chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainExperiment {
    pub chain: ChainSpec,
    pub alpha0: f64,
    pub seed: u64,
    pub rates: CutoffRates,
    #[serde(default)]
    pub extra_rates: Vec<CutoffRates>,
    pub evolution: EvolutionConfig,
    /// time between tracked snapshots
    pub snapshot_dt: f64,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub records: Vec<DiagnosticsRecord>,
    /// (p̃, G) series for each of `extra_rates`
    pub extra: Vec<Vec<(Vec<f64>, f64)>>,
    pub track: Track,
}

impl ChainRun {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn monotonicity(&self, sigma_star: f64, tau0: f64) -> Result<MonotonicityReport> {
        let pt: Vec<Vec<f64>> = self.records.iter().map(|r| r.p_tilde.clone()).collect();
        let g: Vec<f64> = self.records.iter().map(|r| r.g).collect();
        monotonicity_report(&self.times(), &pt, &g, sigma_star, tau0)
    }

    pub fn extra_monotonicity(&self, i: usize, sigma_star: f64, tau0: f64) -> Result<MonotonicityReport> {
        let pt: Vec<Vec<f64>> = self.extra[i].iter().map(|r| r.0.clone()).collect();
        let g: Vec<f64> = self.extra[i].iter().map(|r| r.1).collect();
        monotonicity_report(&self.times(), &pt, &g, sigma_star, tau0)
    }
}

/// Smooth random perturbation near the chain positions with ‖·‖_X = alpha.
pub fn chain_perturbation(ops: &FieldOps, centres: &[f64], alpha: f64, seed: u64) -> HydroField {
    let grid = ops.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = grid.nodes();
    let mut p = HydroField::zeros(grid);
    if alpha == 0.0 {
        return p;
    }
    for &x0 in centres {
        let (s1, s2): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let shift: f64 = rng.gen_range(-3.0..3.0);
        for j in 0..grid.n {
            let y = (xs[j] - x0 - shift) / 3.0;
            let b = (-y * y).exp();
            p.eta[j] += s1 * b;
            p.v[j] += s2 * b * y;
        }
    }
    let norm = ops.x_norm(&p);
    p.scale(alpha / norm)
}

/// Evolves R_{c*,a⁰} + perturbation and records tracked diagnostics at every snapshot.
pub fn run_chain(ops: &FieldOps, exp: &ChainExperiment) -> Result<ChainRun> {
    let nl = &ops.nl;
    let grid = ops.grid();
    let c_star = exp.chain.speeds.clone();
    let nu = min_nu(nl, &c_star)?;
    exp.rates.check(nu)?;
    let r0 = build_chain(&exp.chain, nl, &grid)?;
    let q0 = r0.add(&chain_perturbation(ops, &exp.chain.positions, exp.alpha0, exp.seed));
    let ev = Evolver::new(ops.clone());
    let mut cfg = exp.evolution;
    let (_, dt) = cfg.schedule(grid.dx());
    cfg.snapshot_every = ((exp.snapshot_dt / dt).round() as usize).max(1);
    let sols: Vec<Soliton> = c_star.iter().map(|&c| Soliton::new(nl, c)).collect::<Result<_>>()?;
    let mut tracker = Tracker::new(ops, ChainSpec::new(c_star.clone(), exp.chain.positions.clone(), 0.0));
    let mut records = Vec::new();
    let mut extra = vec![Vec::new(); exp.extra_rates.len()];
    let l = exp.chain.min_gap;
    let result = ev.integrate(&q0, &cfg, |t, f| {
        let fit = tracker.push(t, f)?;
        let mut star = HydroField::zeros(grid);
        for (s, &a) in sols.iter().zip(&fit.a) {
            star = star.add(&s.sample(&grid, a));
        }
        let dist_star = ops.x_norm(&f.sub(&star));
        let a_sorted = sorted_positions(&fit.a);
        let cf = build_cutoffs(&a_sorted, l, exp.rates.tau, exp.rates.tau0, &grid)?;
        let (p_tilde, g) = tilde_and_g(ops, f, &c_star, &cf)?;
        for (i, r) in exp.extra_rates.iter().enumerate() {
            let cf = build_cutoffs(&a_sorted, l, r.tau, r.tau0, &grid)?;
            extra[i].push(tilde_and_g(ops, f, &c_star, &cf)?);
        }
        records.push(DiagnosticsRecord {
            t,
            energy: ops.energy(f)?,
            momentum: crate::field_ops::momentum(f),
            p_tilde,
            g,
            eps_xnorm: fit.eps_xnorm,
            c: fit.c.clone(),
            a: fit.a.clone(),
            max_eta: f.max_eta(),
            dist_star,
        });
        Ok(())
    });
    match result {
        Ok(_) | Err(Error::NoConvergence { .. }) => Ok(ChainRun { records, extra, track: tracker.finish() }),
        Err(e) => Err(e),
    }
}

fn sorted_positions(a: &[f64]) -> Vec<f64> {
    let mut s = a.to_vec();
    s.sort_by(f64::total_cmp);
    // keep the cutoff builder's strict ordering even if two fits coincide
    for i in 1..s.len() {
        if s[i] <= s[i - 1] {
            s[i] = s[i - 1] + 1e-9;
        }
    }
    s
}

fn tilde_and_g(ops: &FieldOps, f: &HydroField, c_star: &[f64], cf: &CutoffFamily) -> Result<(Vec<f64>, f64)> {
    let pt = (1..=cf.len()).map(|k| tilde_momentum(f, cf, k)).collect();
    Ok((pt, functional_g(ops, f, c_star, cf)?))
}

pub fn min_nu(nl: &Nonlinearity, speeds: &[f64]) -> Result<f64> {
    let c_s = nl.sound_speed()?;
    let cmax = speeds.iter().cloned().fold(0.0, f64::max);
    Ok((c_s * c_s - cmax * cmax).max(0.0).sqrt())
}

// ---------------------------------------------------------------- expansions

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub eps_xnorm: f64,
    /// E(R) − Σ E(Q_k)
    pub e_tail: f64,
    /// dE(R)·ε
    pub e_first: f64,
    /// ½∇²E(R)(ε,ε) − ½(Σ∇²E(Q_k)(ε_k,ε_k) + Σ∇²E(0)(ε_{k,k+1},ε_{k,k+1}))
    pub e_partition: f64,
    /// E(R+ε) − E(R) − dE(R)·ε − ½∇²E(R)(ε,ε)
    pub e_cubic: f64,
    /// E(R+ε) minus the full second-order expansion
    pub e_residual: f64,
    /// p_k(R) − p(Q_k)
    pub p_tail: Vec<f64>,
    /// ∇p_k(R)·ε
    pub p_first: Vec<f64>,
    /// p_k(R+ε) minus its second-order expansion
    pub p_residual: Vec<f64>,
}

/// Projects ε onto the L²×L² complement of {∂ₓQ_k, ∇p(Q_k)}.
pub fn project_orthogonal(nl: &Nonlinearity, chain: &ChainSpec, eps: &HydroField) -> Result<HydroField> {
    let grid = eps.grid;
    let mut dirs = Vec::new();
    for (&c, &a) in chain.speeds.iter().zip(&chain.positions) {
        let s = Soliton::new(nl, c)?;
        dirs.push(s.sample_dx(&grid, a));
        dirs.push(crate::field_ops::grad_momentum(&s.sample(&grid, a)));
    }
    let m = dirs.len();
    let gram = nalgebra::DMatrix::from_fn(m, m, |i, j| inner(&dirs[i], &dirs[j]));
    let rhs = nalgebra::DVector::from_fn(m, |i, _| inner(&dirs[i], eps));
    let coef = gram.lu().solve(&rhs).ok_or_else(|| Error::SolverFail("singular orthogonality Gram matrix".into()))?;
    let mut out = eps.clone();
    for (i, d) in dirs.iter().enumerate() {
        out = out.axpy(-coef[i], d);
    }
    Ok(out)
}

fn weighted(f: &HydroField, w: &[f64]) -> HydroField {
    HydroField {
        grid: f.grid,
        eta: f.eta.iter().zip(w).map(|(a, b)| a * b.max(0.0).sqrt()).collect(),
        v: f.v.iter().zip(w).map(|(a, b)| a * b.max(0.0).sqrt()).collect(),
    }
}

fn quad_form(ops: &FieldOps, at: &HydroField, w: &HydroField) -> Result<f64> {
    Ok(inner(&ops.hessian_energy_apply(at, w)?, w))
}

/// Second-order expansions of E and p_k around the chain, split by term.
pub fn expansion_check(ops: &FieldOps, chain: &ChainSpec, eps: &HydroField, cutoffs: &CutoffFamily) -> Result<ExpansionReport> {
    let grid = ops.grid();
    let nl = &ops.nl;
    let n = chain.len();
    let qs: Vec<HydroField> =
        chain.speeds.iter().zip(&chain.positions).map(|(&c, &a)| Ok(Soliton::new(nl, c)?.sample(&grid, a))).collect::<Result<_>>()?;
    let mut r = HydroField::zeros(grid);
    for q in &qs {
        r = r.add(q);
    }
    let full = r.add(eps);
    full.check_vacuum()?;
    let e_r = ops.energy(&r)?;
    let e_full = ops.energy(&full)?;
    let e_sum: f64 = qs.iter().map(|q| ops.energy(q)).sum::<Result<f64>>()?;
    let e_first = inner(&ops.grad_energy(&r)?, eps);
    let hess_r = quad_form(ops, &r, eps)?;
    let zero = HydroField::zeros(grid);
    let mut local = 0.0;
    for k in 0..n {
        local += quad_form(ops, &qs[k], &weighted(eps, &cutoffs.phi[k]))?;
    }
    for w in &cutoffs.phi_pair {
        local += quad_form(ops, &zero, &weighted(eps, w))?;
    }
    let e_cubic = e_full - e_r - e_first - 0.5 * hess_r;
    let e_residual = e_full - e_sum - 0.5 * local;

    let mut p_tail = Vec::with_capacity(n);
    let mut p_first = Vec::with_capacity(n);
    let mut p_residual = Vec::with_capacity(n);
    for k in 1..=n {
        let win = cutoffs.window(k);
        let pq = crate::field_ops::momentum(&qs[k - 1]);
        p_tail.push(localized_momentum_pk(&r, cutoffs, k) - pq);
        let first: f64 = 0.5 * grid.dx() * (0..grid.n).map(|j| win[j] * (r.v[j] * eps.eta[j] + r.eta[j] * eps.v[j])).sum::<f64>();
        p_first.push(first);
        let ek = weighted(eps, &cutoffs.phi[k - 1]);
        let mut second = dot(&grid, &ek.eta, &ek.v);
        for w in [&cutoffs.phi_pair[k - 1], &cutoffs.phi_pair[k]] {
            let e = weighted(eps, w);
            second += grid.dx() * (0..grid.n).map(|j| win[j] * e.eta[j] * e.v[j]).sum::<f64>();
        }
        p_residual.push(localized_momentum_pk(&full, cutoffs, k) - pq - 0.5 * second);
    }
    Ok(ExpansionReport {
        eps_xnorm: ops.x_norm(eps),
        e_tail: e_r - e_sum,
        e_first,
        e_partition: 0.5 * (hess_r - local),
        e_cubic,
        e_residual,
        p_tail,
        p_first,
        p_residual,
    })
}

/// Slope of ln|y| against x, negated: the fitted exponential decay rate.
pub fn fitted_decay_rate(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (*x, y.abs().ln())).collect();
    -least_squares_slope(&pts)
}

/// Slope of ln|y| against ln s.
pub fn fitted_power(ss: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ss.iter().zip(ys).map(|(s, y)| (s.ln(), y.abs().ln())).collect();
    least_squares_slope(&pts)
}

// ---------------------------------------------------------------- cross terms

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrosstermCheck {
    pub computed: f64,
    pub bound: f64,
    pub pass: bool,
}

/// ‖e^{−ν_a(·−a)⁺} e^{−ν_b(·−b)⁻}‖_{L^p} in closed form, against
/// (2/(p·min ν) + b − a)^{1/p} e^{−min ν (b−a)}. Use p = ∞ for the sup norm.
pub fn crossterm_bound_check(a: f64, b: f64, nu_a: f64, nu_b: f64, p: f64) -> Result<CrosstermCheck> {
    if !(a < b && nu_a > 0.0 && nu_b > 0.0 && p >= 1.0) {
        return Err(Error::Invalid(format!("need a < b, positive rates and p >= 1 (a={a}, b={b}, p={p})")));
    }
    let d = b - a;
    let (m, big) = (nu_a.min(nu_b), nu_a.max(nu_b));
    if p.is_infinite() {
        let computed = (-m * d).exp();
        let bound = (-m * d).exp();
        return Ok(CrosstermCheck { computed, bound, pass: computed <= bound * (1.0 + 1e-12) });
    }
    let left = (-p * nu_b * d).exp() / (p * nu_b);
    let right = (-p * nu_a * d).exp() / (p * nu_a);
    let gap = p * (big - m);
    let middle = if gap * d < 1e-12 { d * (-p * m * d).exp() } else { (-p * m * d).exp() * (-(-gap * d).exp_m1()) / gap };
    let computed = (left + middle + right).powf(1.0 / p);
    let bound = (2.0 / (p * m) + d).powf(1.0 / p) * (-m * d).exp();
    Ok(CrosstermCheck { computed, bound, pass: computed <= bound * (1.0 + 1e-12) })
}

/// Field evaluated for a polynomial variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Eta,
    V,
    DEta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Var {
    pub soliton: usize,
    pub comp: Component,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    pub factors: Vec<(Var, u32)>,
}

/// Polynomial in soliton-attached variables. Every term must couple at least
/// two different solitons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polynomial {
    pub terms: Vec<Term>,
}

fn x(k: usize) -> Var {
    Var { soliton: k, comp: Component::Eta }
}

fn mono(coef: f64, factors: Vec<(Var, u32)>) -> Term {
    Term { coef, factors }
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if m < k {
        return vec![];
    }
    let mut out = subsets(m - 1, k);
    for mut s in subsets(m - 1, k - 1) {
        s.push(m - 1);
        out.push(s);
    }
    out
}

impl Polynomial {
    /// Elementary symmetric polynomial S^{k,M}.
    pub fn s(k: usize, m: usize) -> Self {
        let terms = subsets(m, k).into_iter().map(|s| mono(1.0, s.into_iter().map(|i| (x(i), 1)).collect())).collect();
        Self { terms }
    }

    fn pairs(m: usize, pow: u32, first: Component) -> Self {
        let mut terms = Vec::new();
        for k in 0..m {
            for j in 0..m {
                if j != k {
                    terms.push(mono(1.0, vec![(Var { soliton: k, comp: first }, pow), (x(j), 1)]));
                }
            }
        }
        Self { terms }
    }

    /// B^M = Σ_{k≠j} X_k² X_j.
    pub fn b(m: usize) -> Self {
        Self::pairs(m, 2, Component::Eta)
    }

    /// B̃ = Σ_{k≠j} Y_k² X_j with Y_k the derivative of η_k.
    pub fn b_tilde(m: usize) -> Self {
        Self::pairs(m, 2, Component::DEta)
    }

    /// C^M = Σ_{k≠j} X_k³ X_j.
    pub fn c(m: usize) -> Self {
        Self::pairs(m, 3, Component::Eta)
    }

    /// D^M = Π(1 − X_k) − (1 − ΣX_k) = Σ_{k≥2} (−1)^k S^{k,M}.
    pub fn d(m: usize) -> Self {
        let mut terms = Vec::new();
        for k in 2..=m {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for mut t in Self::s(k, m).terms {
                t.coef = sign;
                terms.push(t);
            }
        }
        Self { terms }
    }

    pub fn max_soliton(&self) -> Option<usize> {
        self.terms.iter().flat_map(|t| t.factors.iter().map(|f| f.0.soliton)).max()
    }

    /// Rejects constant terms and terms that involve only one soliton.
    pub fn check_class(&self) -> Result<()> {
        for t in &self.terms {
            if t.coef == 0.0 {
                continue;
            }
            let mut ids: Vec<usize> = t.factors.iter().filter(|f| f.1 > 0).map(|f| f.0.soliton).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < 2 {
                return Err(Error::BadPolynomial(format!("term {t:?} does not couple two solitons")));
            }
        }
        Ok(())
    }

    /// Pointwise value given per-soliton samples (η, v, ∂ₓη).
    pub fn eval(&self, fields: &[[&[f64]; 3]], j: usize) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.factors.iter().fold(t.coef, |acc, (v, e)| {
                    let idx = match v.comp {
                        Component::Eta => 0,
                        Component::V => 1,
                        Component::DEta => 2,
                    };
                    acc * fields[v.soliton][idx][j].powi(*e as i32)
                })
            })
            .sum()
    }
}

fn lp_norm(grid: &Grid, u: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        u.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else {
        (grid.dx() * u.iter().map(|x| x.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub ls: Vec<f64>,
    pub norms: Vec<f64>,
    pub rate: f64,
    pub min_nu: f64,
    pub pass: bool,
}

fn decay_fit(ls: &[f64], norms: Vec<f64>, p: f64, m: f64, threshold: f64) -> DecayFit {
    let scaled: Vec<f64> =
        ls.iter().zip(&norms).map(|(l, n)| if p.is_infinite() { *n } else { n / (2.0 / (p * m) + l).powf(1.0 / p) }).collect();
    let rate = fitted_decay_rate(ls, &scaled);
    DecayFit { ls: ls.to_vec(), norms, rate, min_nu: m, pass: rate >= threshold * m }
}

/// Samples of each soliton of a chain with consecutive gaps L, centered on the grid.
fn chain_samples(nl: &Nonlinearity, speeds: &[f64], l: f64, grid: &Grid) -> Result<Vec<[Vec<f64>; 3]>> {
    let n = speeds.len();
    let start = -0.5 * l * (n as f64 - 1.0);
    speeds
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = Soliton::new(nl, c)?;
            let a = start + l * i as f64;
            let f = s.sample_with(grid, a, |p| (p.eta, p.v));
            let d = s.sample_dx(grid, a);
            Ok([f.eta, f.v, d.eta])
        })
        .collect()
}

/// ‖P(τ_{a_1}Q_1, …)‖_{L^p} over a sweep of separations, with the decay rate
/// fitted after dividing out (2/(p·min ν) + L)^{1/p}. Passes at rate ≥ 0.9·min ν.
pub fn polynomial_crossterm_check(
    nl: &Nonlinearity,
    speeds: &[f64],
    poly: &Polynomial,
    p: f64,
    ls: &[f64],
    grid: &Grid,
) -> Result<DecayFit> {
    poly.check_class()?;
    if poly.max_soliton().is_some_and(|m| m >= speeds.len()) {
        return Err(Error::BadPolynomial("polynomial refers to more solitons than given".into()));
    }
    let m = min_nu(nl, speeds)?;
    let mut norms = Vec::with_capacity(ls.len());
    for &l in ls {
        let samples = chain_samples(nl, speeds, l, grid)?;
        let refs: Vec<[&[f64]; 3]> = samples.iter().map(|s| [&s[0][..], &s[1][..], &s[2][..]]).collect();
        let vals: Vec<f64> = (0..grid.n).map(|j| poly.eval(&refs, j)).collect();
        norms.push(lp_norm(grid, &vals, p));
    }
    Ok(decay_fit(ls, norms, p, m, 0.9))
}

/// ‖F(1 − Ση_k) − ΣF(1 − η_k)‖_{L^p} over a sweep of separations.
pub fn f_expansion_check(nl: &Nonlinearity, speeds: &[f64], p: f64, ls: &[f64], grid: &Grid) -> Result<DecayFit> {
    let m = min_nu(nl, speeds)?;
    let mut norms = Vec::with_capacity(ls.len());
    for &l in ls {
        let samples = chain_samples(nl, speeds, l, grid)?;
        let vals: Vec<f64> = (0..grid.n)
            .map(|j| {
                let total: f64 = samples.iter().map(|s| s[0][j]).sum();
                nl.big_f(1.0 - total) - samples.iter().map(|s| nl.big_f(1.0 - s[0][j])).sum::<f64>()
            })
            .collect();
        norms.push(lp_norm(grid, &vals, p));
    }
    Ok(decay_fit(ls, norms, p, m, 0.9))
}
