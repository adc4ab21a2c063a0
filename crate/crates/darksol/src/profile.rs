//! Single dark-soliton profiles Q_c = (η_c, v_c) from the first integral
//! −(η′)² = N_c(η), the peak amplitude ξ_c, the momentum p(Q_c) and their
//! c-derivatives.
//!
//! Writing N_c(x) = x² g(x) with g a polynomial, g(0) = −ν_c² and
//! g(x) = (x − ξ_c) q(x) with q > 0 on [0, ξ_c]. The substitution
//! η = ξ_c sech²(u/2) turns x(η) into the smooth integral
//! x(u) = ∫₀^u dw / (√ξ_c √q(η(w))), which is tabulated and inverted.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field_ops::{Grid, HydroField};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature;

/// Ratio tail_floor / ξ_c below which the exponential tail takes over.
pub const TAIL_RATIO: f64 = 1e-10;
const DU: f64 = 0.005;
const GL_ORDER: usize = 6;
const SCAN_POINTS: usize = 10_000;

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| quadrature::gauss_legendre(GL_ORDER))
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    if p.len() <= 1 {
        return vec![0.0];
    }
    p.iter().enumerate().skip(1).map(|(i, &a)| i as f64 * a).collect()
}

/// N_c(x) = c²x² − 4(1−x)F(1−x), stored through its reduced factor g = N_c/x².
#[derive(Debug, Clone, PartialEq)]
pub struct NcPolynomial {
    pub c: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
    d2g: Vec<f64>,
}

impl NcPolynomial {
    pub fn new(nl: &Nonlinearity, c: f64) -> Self {
        // F(1−x) = Σ b_j x^{j+1}/(j+1) = x² h(x)
        let b = nl.coeffs();
        let h: Vec<f64> = b.iter().enumerate().map(|(m, &bj)| bj / (m + 2) as f64).collect();
        let mut g = vec![0.0; h.len() + 1];
        for (m, &hm) in h.iter().enumerate() {
            g[m] -= 4.0 * hm;
            g[m + 1] += 4.0 * hm;
        }
        g[0] += c * c;
        let dg = poly_deriv(&g);
        let d2g = poly_deriv(&dg);
        Self { c, g, dg, d2g }
    }

    pub fn g(&self, x: f64) -> f64 {
        poly_eval(&self.g, x)
    }

    pub fn dg(&self, x: f64) -> f64 {
        poly_eval(&self.dg, x)
    }

    pub fn n(&self, x: f64) -> f64 {
        x * x * self.g(x)
    }

    pub fn dn(&self, x: f64) -> f64 {
        2.0 * x * self.g(x) + x * x * self.dg(x)
    }

    pub fn d2n(&self, x: f64) -> f64 {
        2.0 * self.g(x) + 4.0 * x * self.dg(x) + x * x * poly_eval(&self.d2g, x)
    }

    /// Smallest zero ξ of N_c in (0, 1), with N_c < 0 before it and N_c′(ξ) > 0.
    pub fn first_zero(&self) -> Result<f64> {
        let top = 1.0 - 1e-9;
        let mut lo = 0.0;
        let mut hi = None;
        for i in 1..=SCAN_POINTS {
            let x = top * i as f64 / SCAN_POINTS as f64;
            if self.g(x) >= 0.0 {
                hi = Some(x);
                break;
            }
            lo = x;
        }
        let mut hi = hi.ok_or(Error::NoZero(self.c))?;
        if self.g(0.0) >= 0.0 {
            return Err(Error::NoZero(self.c));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let xi = if self.g(hi).abs() < self.g(lo).abs() { hi } else { lo };
        if !(self.dg(xi) > 0.0) {
            return Err(Error::NoZero(self.c));
        }
        Ok(xi)
    }

    /// q(y) = g(y)/(y − ξ) by synthetic division.
    fn deflate(&self, xi: f64) -> Vec<f64> {
        let d = self.g.len() - 1;
        let mut q = vec![0.0; d.max(1)];
        let mut acc = 0.0;
        for i in (1..=d).rev() {
            acc = acc * xi + self.g[i];
            q[i - 1] = acc;
        }
        q
    }
}

fn check_speed(nl: &Nonlinearity, c: f64) -> Result<f64> {
    let c_s = nl.sound_speed()?;
    if !(c > 0.0 && c < c_s) {
        return Err(Error::BadSpeed { c, c_s });
    }
    Ok(c_s)
}

pub fn find_xi(nl: &Nonlinearity, c: f64) -> Result<f64> {
    check_speed(nl, c)?;
    NcPolynomial::new(nl, c).first_zero()
}

/// dξ_c/dc = −2cξ_c²/N_c′(ξ_c).
pub fn xi_derivative(nl: &Nonlinearity, c: f64) -> Result<f64> {
    let xi = find_xi(nl, c)?;
    let np = NcPolynomial::new(nl, c);
    Ok(-2.0 * c * xi * xi / np.dn(xi))
}

/// Values and x-derivatives of a profile at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfilePoint {
    pub eta: f64,
    pub deta: f64,
    pub d2eta: f64,
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
}

/// Grid-independent representation of Q_c, evaluable at any x.
#[derive(Debug, Clone)]
pub struct Soliton {
    pub c: f64,
    pub xi: f64,
    pub nu: f64,
    pub tail_floor: f64,
    nc: NcPolynomial,
    q: Vec<f64>,
    us: Vec<f64>,
    xs: Vec<f64>,
    slopes: Vec<f64>,
}

impl Soliton {
    pub fn new(nl: &Nonlinearity, c: f64) -> Result<Self> {
        let c_s = check_speed(nl, c)?;
        let nc = NcPolynomial::new(nl, c);
        let xi = nc.first_zero()?;
        let q = nc.deflate(xi);
        let nu = (c_s * c_s - c * c).sqrt();
        let tail_floor = TAIL_RATIO * xi;
        let u_max = 2.0 * (1.0 / TAIL_RATIO).sqrt().acosh();
        let panels = (u_max / DU).ceil() as usize;
        let du = u_max / panels as f64;
        let mut sol = Self {
            c,
            xi,
            nu,
            tail_floor,
            nc,
            q,
            us: Vec::with_capacity(panels + 1),
            xs: Vec::with_capacity(panels + 1),
            slopes: Vec::with_capacity(panels + 1),
        };
        let mut x = 0.0;
        for i in 0..=panels {
            let u = i as f64 * du;
            if i > 0 {
                x += sol.x_increment(u - du, u);
            }
            sol.us.push(u);
            sol.xs.push(x);
            sol.slopes.push(sol.dudx(u));
        }
        Ok(sol)
    }

    fn eta_of_u(&self, u: f64) -> f64 {
        let s = 1.0 / (0.5 * u).cosh();
        self.xi * s * s
    }

    fn qv(&self, y: f64) -> f64 {
        poly_eval(&self.q, y)
    }

    fn dudx(&self, u: f64) -> f64 {
        self.xi.sqrt() * self.qv(self.eta_of_u(u)).sqrt()
    }

    fn x_increment(&self, u0: f64, u1: f64) -> f64 {
        let (nodes, weights) = gl_rule();
        let m = 0.5 * (u0 + u1);
        let h = 0.5 * (u1 - u0);
        let s: f64 = nodes.iter().zip(weights).map(|(&t, &w)| w / self.dudx(m + h * t)).sum();
        s * h
    }

    /// Abscissa where the tabulated profile hands over to the exponential tail.
    pub fn x_switch(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Parameter u with x(u) = |x| (requires |x| ≤ x_switch).
    fn u_of_x(&self, ax: f64) -> f64 {
        let i = match self.xs.binary_search_by(|v| v.total_cmp(&ax)) {
            Ok(i) => return self.us[i],
            Err(i) => i.clamp(1, self.xs.len() - 1) - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let hx = x1 - x0;
        let t = (ax - x0) / hx;
        let (t2, t3) = (t * t, t * t * t);
        let u = (2.0 * t3 - 3.0 * t2 + 1.0) * self.us[i]
            + (t3 - 2.0 * t2 + t) * hx * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.us[i + 1]
            + (t3 - t2) * hx * self.slopes[i + 1];
        // one Newton polish against the exact quadrature
        let xu = x0 + self.x_increment(self.us[i], u);
        u + (ax - xu) * self.dudx(u)
    }

    pub fn eta_at(&self, x: f64) -> f64 {
        let ax = x.abs();
        let xs = self.x_switch();
        if ax > xs {
            self.tail_floor * (-self.nu * (ax - xs)).exp()
        } else {
            self.eta_of_u(self.u_of_x(ax))
        }
    }

    pub fn eval(&self, x: f64) -> ProfilePoint {
        let ax = x.abs();
        let sgn = if x < 0.0 { -1.0 } else { 1.0 };
        let xs = self.x_switch();
        let (eta, deta, d2eta) = if ax > xs {
            let eta = self.tail_floor * (-self.nu * (ax - xs)).exp();
            (eta, -sgn * self.nu * eta, self.nu * self.nu * eta)
        } else {
            let u = self.u_of_x(ax);
            let eta = self.eta_of_u(u);
            // √(ξ − η) = √ξ tanh(u/2) avoids cancellation near the peak
            let root = self.xi.sqrt() * (0.5 * u).tanh() * self.qv(eta).sqrt();
            (eta, -sgn * eta * root, -0.5 * self.nc.dn(eta))
        };
        let r = 1.0 - eta;
        let c = self.c;
        ProfilePoint {
            eta,
            deta,
            d2eta,
            v: c * eta / (2.0 * r),
            dv: c * deta / (2.0 * r * r),
            d2v: 0.5 * c * (d2eta / (r * r) + 2.0 * deta * deta / (r * r * r)),
        }
    }

    /// Samples of Q_{c,a} on a periodic grid, using the nearest periodic image.
    pub fn sample(&self, grid: &Grid, a: f64) -> HydroField {
        let mut eta = Vec::with_capacity(grid.n);
        let mut v = Vec::with_capacity(grid.n);
        for j in 0..grid.n {
            let e = self.eta_at(grid.wrap(grid.x(j) - a));
            eta.push(e);
            v.push(self.c * e / (2.0 * (1.0 - e)));
        }
        HydroField { grid: *grid, eta, v }
    }

    /// Samples of ∂ₓQ_{c,a}.
    pub fn sample_dx(&self, grid: &Grid, a: f64) -> HydroField {
        self.sample_with(grid, a, |p| (p.deta, p.dv))
    }

    /// Samples of ∂ₓ²Q_{c,a}.
    pub fn sample_dxx(&self, grid: &Grid, a: f64) -> HydroField {
        self.sample_with(grid, a, |p| (p.d2eta, p.d2v))
    }

    pub fn sample_with<F: Fn(&ProfilePoint) -> (f64, f64)>(&self, grid: &Grid, a: f64, pick: F) -> HydroField {
        let mut eta = Vec::with_capacity(grid.n);
        let mut v = Vec::with_capacity(grid.n);
        for j in 0..grid.n {
            let (e, w) = pick(&self.eval(grid.wrap(grid.x(j) - a)));
            eta.push(e);
            v.push(w);
        }
        HydroField { grid: *grid, eta, v }
    }

    /// p(Q_c) = (c/2)∫₀^ξ x/((1−x)√(−g(x))) dx, desingularized by x = ξ − s².
    pub fn momentum(&self) -> f64 {
        let xi = self.xi;
        let integrand = |s: f64| {
            let x = xi - s * s;
            2.0 * x / ((1.0 - x) * self.qv(x).sqrt())
        };
        let r = quadrature::adaptive(integrand, 0.0, xi.sqrt(), 1e-300, 1e-14);
        0.5 * self.c * r.value
    }

    /// II_c = cξ^{5/2}/((1−ξ)√N_c′(ξ)).
    pub fn split_term(&self) -> f64 {
        let xi = self.xi;
        self.c * xi.powf(2.5) / ((1.0 - xi) * self.nc.dn(xi).sqrt())
    }

    pub fn nc(&self) -> &NcPolynomial {
        &self.nc
    }
}

/// Q_c sampled on a grid, centered at 0.
#[derive(Debug, Clone)]
pub struct SolitonProfile {
    pub c: f64,
    pub xi_c: f64,
    pub nu_c: f64,
    pub grid: Grid,
    pub eta: Vec<f64>,
    pub v: Vec<f64>,
    pub tail_floor: f64,
    pub soliton: Soliton,
}

impl SolitonProfile {
    pub fn field(&self) -> HydroField {
        HydroField { grid: self.grid, eta: self.eta.clone(), v: self.v.clone() }
    }
}

pub fn check_grid(grid: &Grid, nu: f64) -> Result<()> {
    let required = 10.0 / nu;
    if grid.half_length() < required {
        return Err(Error::GridTooSmall { half_length: grid.half_length(), required });
    }
    Ok(())
}

pub fn build_profile(nl: &Nonlinearity, c: f64, grid: &Grid) -> Result<SolitonProfile> {
    let sol = Soliton::new(nl, c)?;
    check_grid(grid, sol.nu)?;
    let f = sol.sample(grid, 0.0);
    Ok(SolitonProfile { c, xi_c: sol.xi, nu_c: sol.nu, grid: *grid, eta: f.eta, v: f.v, tail_floor: sol.tail_floor, soliton: sol })
}

/// Default finite-difference step h = 1e−3·(c_s − c).
pub fn default_step(nl: &Nonlinearity, c: f64) -> Result<f64> {
    Ok(1e-3 * (nl.sound_speed()? - c))
}

/// Central differences (Q_{c+h} − Q_{c−h})/(2h) of profiles centered at a.
pub fn c_derivative_field(nl: &Nonlinearity, c: f64, h: f64, grid: &Grid, a: f64) -> Result<HydroField> {
    let plus = Soliton::new(nl, c + h)?.sample(grid, a);
    let minus = Soliton::new(nl, c - h)?.sample(grid, a);
    Ok(plus.sub(&minus).scale(0.5 / h))
}

pub fn profile_c_derivative(nl: &Nonlinearity, c: f64, grid: &Grid, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = c_derivative_field(nl, c, h, grid, 0.0)?;
    Ok((d.eta, d.v))
}

pub fn soliton_momentum(nl: &Nonlinearity, c: f64) -> Result<f64> {
    Ok(Soliton::new(nl, c)?.momentum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentumDerivative {
    pub dp_dc: f64,
    pub split_term: f64,
}

pub fn momentum_derivative(nl: &Nonlinearity, c: f64, h: f64) -> Result<MomentumDerivative> {
    let pp = soliton_momentum(nl, c + h)?;
    let pm = soliton_momentum(nl, c - h)?;
    Ok(MomentumDerivative { dp_dc: (pp - pm) / (2.0 * h), split_term: Soliton::new(nl, c)?.split_term() })
}
