//! Scalar phase-space functions H(q,p) with analytic first and second derivatives.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{KhsError, Result};
use crate::phase_space::{PhaseSpaceGrid, ScalarField};

/// Σ c_ij q^i p^j, kept merged and free of zero coefficients.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polynomial {
    terms: BTreeMap<(u32, u32), f64>,
}

fn powi(x: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(n as i32),
    }
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(c: f64, i: u32, j: u32) -> Self {
        let mut p = Self::zero();
        p.add_term(c, i, j);
        p
    }

    pub fn from_terms(terms: &[(f64, u32, u32)]) -> Self {
        let mut p = Self::zero();
        for &(c, i, j) in terms {
            p.add_term(c, i, j);
        }
        p
    }

    fn add_term(&mut self, c: f64, i: u32, j: u32) {
        let e = self.terms.entry((i, j)).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&(i, j));
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, u32, u32)> + '_ {
        self.terms.iter().map(|(&(i, j), &c)| (c, i, j))
    }

    pub fn coefficient(&self, i: u32, j: u32) -> f64 {
        self.terms.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|&(i, j)| i + j).max().unwrap_or(0)
    }

    pub fn eval(&self, q: f64, p: f64) -> f64 {
        self.terms.iter().map(|(&(i, j), &c)| c * powi(q, i) * powi(p, j)).sum()
    }

    pub fn d_q(&self) -> Self {
        let mut out = Self::zero();
        for (c, i, j) in self.terms() {
            if i > 0 {
                out.add_term(c * i as f64, i - 1, j);
            }
        }
        out
    }

    pub fn d_p(&self) -> Self {
        let mut out = Self::zero();
        for (c, i, j) in self.terms() {
            if j > 0 {
                out.add_term(c * j as f64, i, j - 1);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (c, i, j) in other.terms() {
            out.add_term(c, i, j);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero();
        for (c, i, j) in self.terms() {
            out.add_term(c * s, i, j);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (a, i, j) in self.terms() {
            for (b, k, l) in other.terms() {
                out.add_term(a * b, i + k, j + l);
            }
        }
        out
    }

    /// {self, other} = ∂q self ∂p other − ∂p self ∂q other.
    pub fn poisson_bracket(&self, other: &Self) -> Self {
        self.d_q()
            .mul(&other.d_p())
            .add(&self.d_p().mul(&other.d_q()).scale(-1.0))
    }

    pub fn is_homogeneous_quadratic(&self) -> bool {
        self.terms.keys().all(|&(i, j)| i + j == 2)
    }
}

type ValueFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, f64) -> (f64, f64) + Send + Sync;

#[derive(Clone)]
enum Repr {
    Poly(Polynomial, Polynomial, Polynomial),
    Custom { f: Arc<ValueFn>, grad: Arc<GradFn> },
}

#[derive(Clone)]
pub struct HamiltonianTerm {
    repr: Repr,
    quadratic: bool,
}

impl fmt::Debug for HamiltonianTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Poly(p, _, _) => f.debug_tuple("HamiltonianTerm").field(p).finish(),
            Repr::Custom { .. } => f.write_str("HamiltonianTerm(<custom>)"),
        }
    }
}

const PROBES: [(f64, f64); 5] = [(0.3, -0.2), (-0.7, 0.45), (1.1, 0.9), (0.05, -0.6), (-0.4, -1.3)];

/// Sampled values and analytic gradient on every node.
#[derive(Clone, Debug)]
pub struct TermSample {
    pub h: Vec<f64>,
    pub hq: Vec<f64>,
    pub hp: Vec<f64>,
}

impl HamiltonianTerm {
    pub fn polynomial(p: Polynomial) -> Self {
        let quadratic = p.is_homogeneous_quadratic() && p.degree() == 2;
        let (dq, dp) = (p.d_q(), p.d_p());
        Self {
            repr: Repr::Poly(p, dq, dp),
            quadratic,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::polynomial(Polynomial::monomial(c, 0, 0))
    }

    /// p²/2m + mω²q²/2.
    pub fn harmonic(m: f64, omega: f64) -> Self {
        Self::polynomial(Polynomial::from_terms(&[
            (0.5 / m, 0, 2),
            (0.5 * m * omega * omega, 2, 0),
        ]))
    }

    /// User-supplied H with its gradient; the gradient is spot-checked against
    /// central differences at a few probe points.
    pub fn custom<F, G>(f: F, grad: G, quadratic: bool) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
    {
        let term = Self {
            repr: Repr::Custom {
                f: Arc::new(f),
                grad: Arc::new(grad),
            },
            quadratic,
        };
        let rel = term.gradient_check(&PROBES);
        if rel > 1e-6 {
            return Err(KhsError::GradientMismatch { rel });
        }
        Ok(term)
    }

    fn gradient_check(&self, probes: &[(f64, f64)]) -> f64 {
        let mut worst: f64 = 0.0;
        for &(q, p) in probes {
            let h = 1e-5 * (1.0 + q.abs().max(p.abs()));
            let fd_q = (self.value(q + h, p) - self.value(q - h, p)) / (2.0 * h);
            let fd_p = (self.value(q, p + h) - self.value(q, p - h)) / (2.0 * h);
            let (gq, gp) = self.gradient(q, p);
            let scale = gq.hypot(gp).max(1e-8);
            worst = worst.max((fd_q - gq).hypot(fd_p - gp) / scale);
        }
        worst
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match &self.repr {
            Repr::Poly(p, _, _) => Some(p),
            Repr::Custom { .. } => None,
        }
    }

    pub fn is_quadratic_homogeneous(&self) -> bool {
        self.quadratic
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.repr, Repr::Poly(p, _, _) if p.terms.is_empty())
    }

    /// S with H = ½ zᵀ S z, when H is a homogeneous quadratic polynomial.
    pub fn quadratic_form(&self) -> Option<[[f64; 2]; 2]> {
        match &self.repr {
            Repr::Poly(p, _, _) if self.quadratic => {
                let sqq = 2.0 * p.coefficient(2, 0);
                let spp = 2.0 * p.coefficient(0, 2);
                let sqp = p.coefficient(1, 1);
                Some([[sqq, sqp], [sqp, spp]])
            }
            _ => None,
        }
    }

    #[inline]
    pub fn value(&self, q: f64, p: f64) -> f64 {
        match &self.repr {
            Repr::Poly(h, _, _) => h.eval(q, p),
            Repr::Custom { f, .. } => f(q, p),
        }
    }

    #[inline]
    pub fn gradient(&self, q: f64, p: f64) -> (f64, f64) {
        match &self.repr {
            Repr::Poly(_, dq, dp) => (dq.eval(q, p), dp.eval(q, p)),
            Repr::Custom { grad, .. } => grad(q, p),
        }
    }

    /// [[∂qq, ∂qp], [∂pq, ∂pp]]; exact for polynomials, central differences otherwise.
    pub fn hessian(&self, q: f64, p: f64) -> [[f64; 2]; 2] {
        match &self.repr {
            Repr::Poly(_, dq, dp) => {
                let qq = dq.d_q().eval(q, p);
                let qp = dq.d_p().eval(q, p);
                let pp = dp.d_p().eval(q, p);
                [[qq, qp], [qp, pp]]
            }
            Repr::Custom { grad, .. } => {
                let h = 1e-5 * (1.0 + q.abs().max(p.abs()));
                let (a1, b1) = grad(q + h, p);
                let (a0, b0) = grad(q - h, p);
                let (c1, d1) = grad(q, p + h);
                let (c0, d0) = grad(q, p - h);
                let qq = (a1 - a0) / (2.0 * h);
                let pp = (d1 - d0) / (2.0 * h);
                let qp = 0.5 * ((b1 - b0) + (c1 - c0)) / (2.0 * h);
                [[qq, qp], [qp, pp]]
            }
        }
    }

    pub fn sample(&self, grid: &PhaseSpaceGrid) -> TermSample {
        let n = grid.len();
        let (mut h, mut hq, mut hp) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let (q, p) = grid.node(i);
            h.push(self.value(q, p));
            let (a, b) = self.gradient(q, p);
            hq.push(a);
            hp.push(b);
        }
        TermSample { h, hq, hp }
    }

    /// Σ c_k H_k. Polynomial inputs stay polynomial.
    pub fn linear_combination(parts: &[(f64, &HamiltonianTerm)]) -> HamiltonianTerm {
        let polys: Option<Vec<(f64, Polynomial)>> = parts
            .iter()
            .map(|(c, t)| t.as_polynomial().map(|p| (*c, p.clone())))
            .collect();
        if let Some(polys) = polys {
            let sum = polys
                .iter()
                .fold(Polynomial::zero(), |acc, (c, p)| acc.add(&p.scale(*c)));
            return Self::polynomial(sum);
        }
        let owned: Vec<(f64, HamiltonianTerm)> = parts.iter().map(|(c, t)| (*c, (*t).clone())).collect();
        let owned_g = owned.clone();
        let quadratic = parts.iter().all(|(c, t)| *c == 0.0 || t.quadratic);
        Self {
            repr: Repr::Custom {
                f: Arc::new(move |q, p| owned.iter().map(|(c, t)| c * t.value(q, p)).sum()),
                grad: Arc::new(move |q, p| {
                    owned_g.iter().fold((0.0, 0.0), |(a, b), (c, t)| {
                        let (x, y) = t.gradient(q, p);
                        (a + c * x, b + c * y)
                    })
                }),
            },
            quadratic,
        }
    }

    /// {H, f} with H differentiated analytically and f spectrally.
    pub fn bracket_with(&self, f: &ScalarField) -> ScalarField {
        let grid = &f.grid;
        let (fq, fp) = (grid.d_q(&f.values), grid.d_p(&f.values));
        let values = (0..grid.len())
            .map(|i| {
                let (q, p) = grid.node(i);
                let (hq, hp) = self.gradient(q, p);
                fp[i] * hq - fq[i] * hp
            })
            .collect();
        ScalarField::from_raw(grid, values)
    }

    /// {self, other} when both are polynomials.
    pub fn poisson_bracket(&self, other: &HamiltonianTerm) -> Option<HamiltonianTerm> {
        Some(Self::polynomial(
            self.as_polynomial()?.poisson_bracket(other.as_polynomial()?),
        ))
    }
}
