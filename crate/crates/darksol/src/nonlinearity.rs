//! Nonlinearities f(ρ) = Σ_{j≥1} b_j (1−ρ)^j, their derivatives and primitive,
//! the model constants and the standing-hypothesis checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form: `{"kind":"gp"}` or `{"kind":"poly_1mr","coeffs":[b1,b2,...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityKind {
    #[serde(rename = "gp")]
    GrossPitaevskii,
    #[serde(rename = "poly_1mr")]
    PolynomialInOneMinusRho { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConstants {
    pub c_s: f64,
    pub k: f64,
    pub k_tilde: f64,
    pub c0_hint: f64,
}

impl Nonlinearity {
    pub fn gross_pitaevskii() -> Self {
        Self { kind: NonlinearityKind::GrossPitaevskii, b: vec![1.0] }
    }

    pub fn poly_one_minus_rho(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Invalid("nonlinearity needs at least one coefficient".into()));
        }
        if coeffs.iter().any(|b| !b.is_finite()) {
            return Err(Error::Invalid("nonlinearity coefficients must be finite".into()));
        }
        let mut b = coeffs.clone();
        while b.len() > 1 && *b.last().unwrap() == 0.0 {
            b.pop();
        }
        Ok(Self { kind: NonlinearityKind::PolynomialInOneMinusRho { coeffs }, b })
    }

    pub fn from_kind(kind: &NonlinearityKind) -> Result<Self> {
        match kind {
            NonlinearityKind::GrossPitaevskii => Ok(Self::gross_pitaevskii()),
            NonlinearityKind::PolynomialInOneMinusRho { coeffs } => Self::poly_one_minus_rho(coeffs.clone()),
        }
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    /// Coefficients b_1, b_2, ... of the expansion in powers of (1−ρ).
    pub fn coeffs(&self) -> &[f64] {
        &self.b
    }

    pub fn f(&self, rho: f64) -> f64 {
        let u = 1.0 - rho;
        self.b.iter().rev().fold(0.0, |acc, &bj| (acc + bj) * u)
    }

    pub fn df(&self, rho: f64) -> f64 {
        let u = 1.0 - rho;
        let mut acc = 0.0;
        for (i, &bj) in self.b.iter().enumerate().rev() {
            acc = acc * u + (i + 1) as f64 * bj;
        }
        -acc
    }

    pub fn d2f(&self, rho: f64) -> f64 {
        let u = 1.0 - rho;
        let mut acc = 0.0;
        for (i, &bj) in self.b.iter().enumerate().skip(1).rev() {
            let j = (i + 1) as f64;
            acc = acc * u + j * (j - 1.0) * bj;
        }
        acc
    }

    pub fn d3f(&self, rho: f64) -> f64 {
        let u = 1.0 - rho;
        let mut acc = 0.0;
        for (i, &bj) in self.b.iter().enumerate().skip(2).rev() {
            let j = (i + 1) as f64;
            acc = acc * u + j * (j - 1.0) * (j - 2.0) * bj;
        }
        -acc
    }

    /// Primitive F(r) = ∫_r^1 f.
    pub fn big_f(&self, r: f64) -> f64 {
        let u = 1.0 - r;
        let mut acc = 0.0;
        for (i, &bj) in self.b.iter().enumerate().rev() {
            acc = acc * u + bj / (i + 2) as f64;
        }
        acc * u * u
    }

    /// F̃(ρ) = ρ f(1−ρ) − F(1−ρ), the flux appearing in the virial identity.
    pub fn f_tilde(&self, eta: f64) -> f64 {
        eta * self.f(1.0 - eta) - self.big_f(1.0 - eta)
    }

    /// Degree of F as a polynomial in (1−r).
    pub fn primitive_degree(&self) -> usize {
        self.b.len() + 1
    }

    pub fn sound_speed(&self) -> Result<f64> {
        let d1 = self.df(1.0);
        if d1 >= 0.0 {
            return Err(Error::DefocusingViolated(d1));
        }
        Ok((-2.0 * d1).sqrt())
    }

    pub fn transonic_constants(&self) -> Result<ModelConstants> {
        self.transonic_constants_with(0.0, 1e-12)
    }

    pub fn transonic_constants_with(&self, c0_hint: f64, tol: f64) -> Result<ModelConstants> {
        let c_s = self.sound_speed()?;
        let h3 = self.d2f(1.0) + 3.0 * self.df(1.0);
        if h3.abs() < tol {
            return Err(Error::H3Violated(h3.abs()));
        }
        let k = 2.0 * self.d2f(1.0) + 6.0 * self.df(1.0);
        Ok(ModelConstants { c_s, k, k_tilde: -3.0 / k, c0_hint })
    }

    pub fn check_hypotheses(&self, rho_scan: RhoScan) -> Result<HypothesisReport> {
        self.check_hypotheses_with(rho_scan, 1e-12)
    }

    pub fn check_hypotheses_with(&self, scan: RhoScan, tol: f64) -> Result<HypothesisReport> {
        if !(scan.lo >= 0.0 && scan.hi >= 2.0 && scan.hi.is_finite() && scan.points >= 2) {
            return Err(Error::Invalid("rho scan must lie in [0, rho_max] with rho_max >= 2".into()));
        }
        let d1 = self.df(1.0);
        let defocusing =
            Verdict { pass: d1 < 0.0, violating_rho: if d1 < 0.0 { None } else { Some(1.0) }, detail: format!("f'(1) = {d1:e}") };
        let c2 = -2.0 * d1;
        let rhos: Vec<f64> = (0..scan.points).map(|i| scan.lo + (scan.hi - scan.lo) * i as f64 / (scan.points - 1) as f64).collect();

        let mut h1_violation = None;
        let mut worst = 0.0_f64;
        for &r in &rhos {
            let gap = c2 * (1.0 - r).powi(2) / 4.0 - self.big_f(r);
            if gap > tol && h1_violation.is_none() {
                h1_violation = Some(r);
            }
            worst = worst.max(gap);
        }
        let h1 = Verdict {
            pass: h1_violation.is_none() && d1 < 0.0,
            violating_rho: h1_violation,
            detail: format!("max of c_s^2(1-rho)^2/4 - F(rho) on scan = {worst:e}"),
        };

        let q = (self.primitive_degree() as f64).max(2.0);
        let lo2 = scan.lo.max(2.0);
        let mut m = 0.0_f64;
        let mut h2_violation = None;
        for i in 0..scan.points {
            let r = lo2 + (scan.hi - lo2) * i as f64 / (scan.points - 1) as f64;
            let ratio = self.big_f(r) / (r - 1.0).abs().powf(q);
            if !ratio.is_finite() && h2_violation.is_none() {
                h2_violation = Some(r);
            }
            m = m.max(ratio);
        }
        let h2 = H2Verdict {
            verdict: Verdict {
                pass: h2_violation.is_none(),
                violating_rho: h2_violation,
                detail: format!("verified on window [{lo2}, {}]", scan.hi),
            },
            m,
            q,
        };

        let h3v = self.d2f(1.0) + 3.0 * d1;
        let h3 = Verdict {
            pass: h3v.abs() >= tol,
            violating_rho: if h3v.abs() >= tol { None } else { Some(1.0) },
            detail: format!("f''(1) + 3 f'(1) = {h3v:e}"),
        };
        Ok(HypothesisReport { defocusing, h1, h2, h3 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoScan {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl RhoScan {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub violating_rho: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Verdict {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub m: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub defocusing: Verdict,
    pub h1: Verdict,
    pub h2: H2Verdict,
    pub h3: Verdict,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.defocusing.pass && self.h1.pass && self.h2.verdict.pass && self.h3.pass
    }
}
