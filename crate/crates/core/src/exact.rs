//! Closed-form oracles for H₀ + (q²/2)(α·σ) with H₀ = p²/2m + mω²q²/2.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{KhsError, Result};
use crate::gauge::GaugePotential;
use crate::hamiltonian::{HamiltonianTerm, Polynomial};
use crate::hybrid::{pauli_dot, CMatrix, DensityMatrix, HybridField, HybridHamiltonian, MatrixField};
use crate::phase_space::{pairwise_sum, BicubicInterpolator, PhaseSpaceGrid, ScalarField, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactModelParams {
    pub m: f64,
    pub omega: f64,
    pub alpha: [f64; 3],
    pub beta: f64,
    pub hbar: f64,
}

impl Default for ExactModelParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            omega: 1.0,
            alpha: [0.95, 0.0, 0.0],
            beta: 1e5,
            hbar: 1.0,
        }
    }
}

impl ExactModelParams {
    pub fn new(m: f64, omega: f64, alpha: [f64; 3], beta: f64, hbar: f64) -> Result<Self> {
        let p = Self { m, omega, alpha, beta, hbar };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("omega", self.omega), ("beta", self.beta), ("hbar", self.hbar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KhsError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(KhsError::InvalidArgument("alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: [f64; 3]) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// (ω₊, ω₋) = (√(ω² + λ/m), √(ω² − λ/m)).
    pub fn branch_frequencies(&self) -> Result<(f64, f64)> {
        let w2 = self.omega * self.omega;
        let shift = self.lambda() / self.m;
        if w2 - shift <= 0.0 {
            return Err(KhsError::UnsupportedRegime(format!(
                "lambda = {} reaches m*omega^2 = {}",
                self.lambda(),
                self.m * w2
            )));
        }
        Ok(((w2 + shift).sqrt(), (w2 - shift).sqrt()))
    }

    pub fn h0(&self, q: f64, p: f64) -> f64 {
        p * p / (2.0 * self.m) + 0.5 * self.m * self.omega * self.omega * q * q
    }

    pub fn h0_term(&self) -> HamiltonianTerm {
        HamiltonianTerm::harmonic(self.m, self.omega)
    }

    pub fn coupling_term(&self) -> HamiltonianTerm {
        HamiltonianTerm::polynomial(Polynomial::monomial(0.5, 2, 0))
    }

    pub fn hamiltonian(&self) -> HybridHamiltonian {
        if self.lambda() == 0.0 {
            return HybridHamiltonian::scalar_only(2, self.h0_term());
        }
        HybridHamiltonian::new(2, self.h0_term(), vec![(self.coupling_term(), pauli_dot(self.alpha))])
            .expect("α·σ is Hermitian")
    }

    pub fn hamiltonian_at(&self, q: f64, p: f64) -> CMatrix {
        CMatrix::identity(2, 2) * C64::new(self.h0(q, p), 0.0) + pauli_dot(self.alpha) * C64::new(0.5 * q * q, 0.0)
    }

    /// Thermal widths (σ_q, σ_p) = (1/√(βmω²), √(m/β)).
    pub fn thermal_widths(&self) -> (f64, f64) {
        (
            1.0 / (self.beta * self.m * self.omega * self.omega).sqrt(),
            (self.m / self.beta).sqrt(),
        )
    }

    /// 384² nodes over ±32 thermal widths.
    pub fn default_grid(&self) -> Result<PhaseSpaceGrid> {
        let (sq, sp) = self.thermal_widths();
        PhaseSpaceGrid::new(384, 384, 32.0 * sq, 32.0 * sp)
    }

    /// Phase-space point z(−t) under the harmonic flow of frequency w.
    pub fn backward_point(&self, w: f64, q: f64, p: f64, t: f64) -> (f64, f64, [[f64; 2]; 2]) {
        let (s, c) = (w * t).sin_cos();
        let mw = self.m * w;
        let r = [[c, -s / mw], [mw * s, c]];
        (r[0][0] * q + r[0][1] * p, r[1][0] * q + r[1][1] * p, r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalizationResult {
    pub lambda: f64,
    pub u: [[C64; 2]; 2],
}

impl DiagonalizationResult {
    pub fn u_matrix(&self) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[self.u[0][0], self.u[0][1], self.u[1][0], self.u[1][1]])
    }
}

fn canonical_row(v: [C64; 2]) -> [C64; 2] {
    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let lead = if v[0].norm() > 1e-14 * norm { v[0] } else { v[1] };
    let phase = lead.conj() / lead.norm();
    [v[0] * phase / norm, v[1] * phase / norm]
}

fn pick(a: [C64; 2], b: [C64; 2]) -> [C64; 2] {
    let na = a[0].norm_sqr() + a[1].norm_sqr();
    let nb = b[0].norm_sqr() + b[1].norm_sqr();
    if na >= nb {
        a
    } else {
        b
    }
}

/// Û with Û(α·σ)Û† = λσ₃; row k is the conjugated eigenvector for ±λ with
/// its first nonzero entry real positive.
pub fn diagonalize_coupling(alpha: [f64; 3]) -> Result<DiagonalizationResult> {
    let lambda = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(lambda > 0.0) {
        return Err(KhsError::DegenerateCoupling);
    }
    let [a1, a2, a3] = alpha;
    let off = C64::new(a1, -a2);
    let c = |x: f64| C64::new(x, 0.0);
    let plus = pick([off, c(lambda - a3)], [c(a3 + lambda), off.conj()]);
    let minus = pick([off, c(-(a3 + lambda))], [c(lambda - a3), -off.conj()]);
    let row = |v: [C64; 2]| canonical_row([v[0].conj(), v[1].conj()]);
    Ok(DiagonalizationResult {
        lambda,
        u: [row(plus), row(minus)],
    })
}

/// Value and phase-space gradient of a complex function at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub value: C64,
    pub dq: C64,
    pub dp: C64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { value: ZERO, dq: ZERO, dp: ZERO };

    pub fn scale(self, c: C64) -> Self {
        Jet2 { value: self.value * c, dq: self.dq * c, dp: self.dp * c }
    }

    pub fn add(self, o: Self) -> Self {
        Jet2 { value: self.value + o.value, dq: self.dq + o.dq, dp: self.dp + o.dp }
    }
}

/// Initial two-component data Υ₀ with gradients.
pub trait HybridInitialState: Sync {
    fn jet(&self, q: f64, p: f64) -> [Jet2; 2];
}

/// g(s) = (1 − (1+s)e^{−s})/s² and g′(s).
pub fn thermal_profile(s: f64) -> (f64, f64) {
    if s < 0.1 {
        // g = Σ (−1)^k (k+1) s^k / (k+2)!
        let mut coef = [0.0; 12];
        let mut fact = 2.0;
        for (k, c) in coef.iter_mut().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *c = sign * (k + 1) as f64 / fact;
            fact *= (k + 3) as f64;
        }
        let g = coef.iter().rev().fold(0.0, |acc, c| acc * s + c);
        let dg = coef.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, c)| acc * s + k as f64 * c);
        return (g, dg);
    }
    let e = (-s).exp();
    let g = (-(-s).exp_m1() - s * e) / (s * s);
    (g, e / s - 2.0 * g / s)
}

/// Zero-phase amplitude whose harmonic-gauge Clebsch density is (ωβ/2π)e^{−βH₀}.
pub fn thermal_amplitude(params: &ExactModelParams, q: f64, p: f64) -> Jet2 {
    let pref = params.omega * params.beta / (2.0 * PI);
    let s = params.beta * params.h0(q, p);
    let (g, dg) = thermal_profile(s);
    let psi = (pref * g).sqrt();
    let du = pref * dg * params.beta;
    let hq = params.m * params.omega * params.omega * q;
    let hp = p / params.m;
    let scale = du / (2.0 * psi);
    Jet2 {
        value: C64::new(psi, 0.0),
        dq: C64::new(scale * hq, 0.0),
        dp: C64::new(scale * hp, 0.0),
    }
}

/// Υ₀ = ψ_thermal·(1, 0).
#[derive(Clone, Copy, Debug)]
pub struct ThermalState {
    pub params: ExactModelParams,
}

impl HybridInitialState for ThermalState {
    fn jet(&self, q: f64, p: f64) -> [Jet2; 2] {
        [thermal_amplitude(&self.params, q, p), Jet2::ZERO]
    }
}

/// Normalized complex Gaussian ψ(q,p)·spinor with |ψ|² of widths (σ_q, σ_p).
#[derive(Clone, Copy, Debug)]
pub struct GaussianState {
    pub center: (f64, f64),
    pub widths: (f64, f64),
    pub wavevector: (f64, f64),
    pub spinor: [C64; 2],
}

impl HybridInitialState for GaussianState {
    fn jet(&self, q: f64, p: f64) -> [Jet2; 2] {
        let (q0, p0) = self.center;
        let (sq, sp) = self.widths;
        let (kq, kp) = self.wavevector;
        let snorm = (self.spinor[0].norm_sqr() + self.spinor[1].norm_sqr()).sqrt();
        let amp = 1.0 / ((2.0 * PI * sq * sp).sqrt() * snorm);
        let (x, y) = (q - q0, p - p0);
        let v = C64::from_polar(amp * (-(x * x) / (4.0 * sq * sq) - y * y / (4.0 * sp * sp)).exp(), kq * q + kp * p);
        let base = Jet2 {
            value: v,
            dq: v * C64::new(-x / (2.0 * sq * sq), kq),
            dp: v * C64::new(-y / (2.0 * sp * sp), kp),
        };
        [base.scale(self.spinor[0]), base.scale(self.spinor[1])]
    }
}

/// Bicubic interpolant of a sampled two-component field.
pub struct SampledState {
    interps: [BicubicInterpolator; 2],
}

impl SampledState {
    pub fn new(y: &HybridField) -> Result<Self> {
        if y.n() != 2 {
            return Err(KhsError::DimensionMismatch { expected: 2, got: y.n() });
        }
        Ok(Self {
            interps: [BicubicInterpolator::new(y.component(0)), BicubicInterpolator::new(y.component(1))],
        })
    }
}

impl HybridInitialState for SampledState {
    fn jet(&self, q: f64, p: f64) -> [Jet2; 2] {
        let f = |i: &BicubicInterpolator| {
            let (value, dq, dp) = i.eval_with_gradient(q, p);
            Jet2 { value, dq, dp }
        };
        [f(&self.interps[0]), f(&self.interps[1])]
    }
}

fn apply_u(u: &[[C64; 2]; 2], v: [Jet2; 2]) -> [Jet2; 2] {
    [
        v[0].scale(u[0][0]).add(v[1].scale(u[0][1])),
        v[0].scale(u[1][0]).add(v[1].scale(u[1][1])),
    ]
}

fn apply_u_dagger(u: &[[C64; 2]; 2], v: [Jet2; 2]) -> [Jet2; 2] {
    [
        v[0].scale(u[0][0].conj()).add(v[1].scale(u[1][0].conj())),
        v[0].scale(u[0][1].conj()).add(v[1].scale(u[1][1].conj())),
    ]
}

/// Diagonalization, falling back to the identity for α = 0.
fn model_basis(params: &ExactModelParams) -> Result<([[C64; 2]; 2], f64, f64)> {
    let (wp, wm) = params.branch_frequencies()?;
    let u = match diagonalize_coupling(params.alpha) {
        Ok(d) => d.u,
        Err(KhsError::DegenerateCoupling) => [[C64::new(1.0, 0.0), ZERO], [ZERO, C64::new(1.0, 0.0)]],
        Err(e) => return Err(e),
    };
    Ok((u, wp, wm))
}

fn transported(params: &ExactModelParams, init: &dyn HybridInitialState, w: f64, q: f64, p: f64, t: f64) -> [Jet2; 2] {
    let (bq, bp, r) = params.backward_point(w, q, p, t);
    let j = init.jet(bq, bp);
    j.map(|x| Jet2 {
        value: x.value,
        dq: x.dq * r[0][0] + x.dp * r[1][0],
        dp: x.dq * r[0][1] + x.dp * r[1][1],
    })
}

/// Υ(z,t) with gradients: Û†(y₁(R₊z), y₂(R₋z)) where y = ÛΥ₀.
pub fn hybrid_exact_jet(params: &ExactModelParams, init: &dyn HybridInitialState, q: f64, p: f64, t: f64) -> Result<[Jet2; 2]> {
    let (u, wp, wm) = model_basis(params)?;
    let fast = apply_u(&u, transported(params, init, wp, q, p, t))[0];
    let slow = apply_u(&u, transported(params, init, wm, q, p, t))[1];
    Ok(apply_u_dagger(&u, [fast, slow]))
}

pub fn hybrid_exact(params: &ExactModelParams, init: &dyn HybridInitialState, q: f64, p: f64, t: f64) -> Result<[C64; 2]> {
    let j = hybrid_exact_jet(params, init, q, p, t)?;
    Ok([j[0].value, j[1].value])
}

fn node_map<T: Send, F: Fn(f64, f64) -> T + Sync>(grid: &PhaseSpaceGrid, f: F) -> Vec<T> {
    (0..grid.len()).into_par_iter().map(|i| {
        let (q, p) = grid.node(i);
        f(q, p)
    }).collect()
}

pub fn hybrid_exact_field(params: &ExactModelParams, init: &dyn HybridInitialState, grid: &PhaseSpaceGrid, t: f64) -> Result<HybridField> {
    model_basis(params)?;
    let vals = node_map(grid, |q, p| hybrid_exact(params, init, q, p, t).expect("regime checked"));
    let planes = (0..2).map(|k| vals.iter().map(|v| v[k]).collect()).collect();
    Ok(HybridField::from_planes(grid, planes))
}

/// Pointwise pieces of D̂ = M − div(JA M) + iħ{Υ,Υ†} from jets.
fn density_parts(jets: &[Jet2; 2], g: &GaugePotential, q: f64, p: f64, hbar: f64) -> (CMatrix, CMatrix) {
    let jet = g.jet(q, p);
    let (jq, jp) = jet.ja();
    let div = jet.div_ja();
    let mut reg = CMatrix::zeros(2, 2);
    let mut bracket = CMatrix::zeros(2, 2);
    for a in 0..2 {
        for b in 0..2 {
            let (ya, yb) = (jets[a], jets[b]);
            let m = ya.value * yb.value.conj();
            let mq = ya.dq * yb.value.conj() + ya.value * yb.dq.conj();
            let mp = ya.dp * yb.value.conj() + ya.value * yb.dp.conj();
            reg[(a, b)] = m * (1.0 - div) - (mq * jq + mp * jp);
            bracket[(a, b)] = C64::new(0.0, hbar) * (ya.dq * yb.dp.conj() - ya.dp * yb.dq.conj());
        }
    }
    (reg, bracket)
}

/// D̂(z,t) of the exact hybrid solution, any gauge, analytic gradients.
pub fn exact_hybrid_density(
    params: &ExactModelParams,
    init: &dyn HybridInitialState,
    g: &GaugePotential,
    q: f64,
    p: f64,
    t: f64,
) -> Result<CMatrix> {
    let jets = hybrid_exact_jet(params, init, q, p, t)?;
    let (reg, br) = density_parts(&jets, g, q, p, params.hbar);
    Ok(reg + br)
}

pub fn exact_hybrid_density_field(
    params: &ExactModelParams,
    init: &dyn HybridInitialState,
    g: &GaugePotential,
    grid: &PhaseSpaceGrid,
    t: f64,
) -> Result<MatrixField> {
    model_basis(params)?;
    let vals = node_map(grid, |q, p| exact_hybrid_density(params, init, g, q, p, t).expect("regime checked"));
    Ok(MatrixField::from_fn_values(grid, 2, &vals))
}

/// ρ̂ = ∫(ΥΥ† − div(JA ΥΥ†)); equal to ∫ΥΥ† but free of slowly decaying tails.
pub fn exact_quantum_density(
    params: &ExactModelParams,
    init: &dyn HybridInitialState,
    g: &GaugePotential,
    grid: &PhaseSpaceGrid,
    t: f64,
) -> Result<DensityMatrix> {
    model_basis(params)?;
    let vals = node_map(grid, |q, p| {
        let jets = hybrid_exact_jet(params, init, q, p, t).expect("regime checked");
        density_parts(&jets, g, q, p, params.hbar).0
    });
    DensityMatrix::new(integrate_matrices(grid, &vals))
}

fn integrate_matrices(grid: &PhaseSpaceGrid, vals: &[CMatrix]) -> CMatrix {
    let n = vals[0].nrows();
    CMatrix::from_fn(n, n, |a, b| {
        let xs: Vec<C64> = vals.iter().map(|m| m[(a, b)]).collect();
        pairwise_sum(&xs) * grid.cell_area()
    })
}

/// Observables of one exact snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactObservables {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub rho: DensityMatrix,
    pub rho_min: f64,
    pub rho_integral: f64,
    pub min_eigenvalue: f64,
}

/// Grid observables of the exact hybrid solution; reductions run in node order.
pub fn exact_observables(
    params: &ExactModelParams,
    init: &dyn HybridInitialState,
    g: &GaugePotential,
    grid: &PhaseSpaceGrid,
    t: f64,
) -> Result<ExactObservables> {
    model_basis(params)?;
    let per_node = node_map(grid, |q, p| {
        let jets = hybrid_exact_jet(params, init, q, p, t).expect("regime checked");
        let (reg, br) = density_parts(&jets, g, q, p, params.hbar);
        let d = &reg + br;
        let energy = (params.hamiltonian_at(q, p) * &d).trace().re;
        let classical = d.trace().re;
        let min_ev = crate::hybrid::hermitian_eigenvalues(&d)[0];
        (reg, classical, energy, min_ev)
    });
    let regs: Vec<CMatrix> = per_node.iter().map(|v| v.0.clone()).collect();
    let classical: Vec<f64> = per_node.iter().map(|v| v.1).collect();
    let energies: Vec<f64> = per_node.iter().map(|v| v.2).collect();
    let rho = DensityMatrix::new(integrate_matrices(grid, &regs))?;
    let area = grid.cell_area();
    Ok(ExactObservables {
        t,
        norm: rho.trace(),
        energy: pairwise_sum(&energies) * area,
        rho,
        rho_min: classical.iter().cloned().fold(f64::INFINITY, f64::min),
        rho_integral: pairwise_sum(&classical) * area,
        min_eigenvalue: per_node.iter().map(|v| v.3).fold(f64::INFINITY, f64::min),
    })
}

/// φ(z,t) = λ/(2mħω³)·[(p² − m²ω²q²)/(2m)·sin 2ωt − ω(2H₀t + pq(cos 2ωt − 1))].
pub fn ag_phase(params: &ExactModelParams, q: f64, p: f64, t: f64) -> f64 {
    let (m, w) = (params.m, params.omega);
    let lambda = params.lambda();
    let (s2, c2) = (2.0 * w * t).sin_cos();
    let bracket = (p * p - m * m * w * w * q * q) / (2.0 * m) * s2 - w * (2.0 * params.h0(q, p) * t + p * q * (c2 - 1.0));
    lambda / (2.0 * m * params.hbar * w * w * w) * bracket
}

/// Initial density matrix D̂₀(z).
pub trait DensitySource: Sync {
    fn density(&self, q: f64, p: f64) -> CMatrix;
}

/// diag((ωβ/2π)e^{−βH₀}, 0).
#[derive(Clone, Copy, Debug)]
pub struct ThermalDensity {
    pub params: ExactModelParams,
}

impl DensitySource for ThermalDensity {
    fn density(&self, q: f64, p: f64) -> CMatrix {
        let pr = &self.params;
        let rho = pr.omega * pr.beta / (2.0 * PI) * (-pr.beta * pr.h0(q, p)).exp();
        CMatrix::from_row_slice(2, 2, &[C64::new(rho, 0.0), ZERO, ZERO, ZERO])
    }
}

/// D̂₀ of a hybrid initial state in a given gauge.
pub struct HybridDensitySource<'a> {
    pub params: ExactModelParams,
    pub state: &'a dyn HybridInitialState,
    pub gauge: GaugePotential,
}

impl DensitySource for HybridDensitySource<'_> {
    fn density(&self, q: f64, p: f64) -> CMatrix {
        let jets = self.state.jet(q, p);
        let (reg, br) = density_parts(&jets, &self.gauge, q, p, self.params.hbar);
        reg + br
    }
}

/// Bicubic interpolant of each entry of a sampled matrix field.
pub struct SampledDensity {
    n: usize,
    interps: Vec<BicubicInterpolator>,
}

impl SampledDensity {
    pub fn new(d: &MatrixField) -> Self {
        Self {
            n: d.n,
            interps: d
                .entries
                .iter()
                .map(|e| BicubicInterpolator::new(&ScalarField::from_raw(&d.grid, e.clone())))
                .collect(),
        }
    }
}

impl DensitySource for SampledDensity {
    fn density(&self, q: f64, p: f64) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |a, b| self.interps[a * self.n + b].eval(q, p))
    }
}

/// Û†[[d₁₁(ω₊), e^{iφ}d₁₂(ω)], [e^{−iφ}d₂₁(ω), d₂₂(ω₋)]]Û with d = ÛD̂₀Û† at backward-rotated points.
pub fn ag_exact(params: &ExactModelParams, d0: &dyn DensitySource, q: f64, p: f64, t: f64) -> Result<CMatrix> {
    let (u, wp, wm) = model_basis(params)?;
    let um = CMatrix::from_row_slice(2, 2, &[u[0][0], u[0][1], u[1][0], u[1][1]]);
    let rotated = |w: f64| {
        let (bq, bp, _) = params.backward_point(w, q, p, t);
        &um * d0.density(bq, bp) * um.adjoint()
    };
    let fast = rotated(wp);
    let slow = rotated(wm);
    let bare = rotated(params.omega);
    let phase = C64::from_polar(1.0, ag_phase(params, q, p, t));
    let d = CMatrix::from_row_slice(
        2,
        2,
        &[fast[(0, 0)], phase * bare[(0, 1)], phase.conj() * bare[(1, 0)], slow[(1, 1)]],
    );
    Ok(um.adjoint() * d * um)
}

pub fn ag_exact_field(params: &ExactModelParams, d0: &dyn DensitySource, grid: &PhaseSpaceGrid, t: f64) -> Result<MatrixField> {
    model_basis(params)?;
    let vals = node_map(grid, |q, p| ag_exact(params, d0, q, p, t).expect("regime checked"));
    Ok(MatrixField::from_fn_values(grid, 2, &vals))
}

/// ∫D̂ of the AG solution.
pub fn ag_quantum_density(params: &ExactModelParams, d0: &dyn DensitySource, grid: &PhaseSpaceGrid, t: f64) -> Result<DensityMatrix> {
    model_basis(params)?;
    let vals = node_map(grid, |q, p| ag_exact(params, d0, q, p, t).expect("regime checked"));
    DensityMatrix::new(integrate_matrices(grid, &vals))
}

/// Grid observables of the AG solution; no PSD guarantee applies to its D̂.
pub fn ag_observables(params: &ExactModelParams, d0: &dyn DensitySource, grid: &PhaseSpaceGrid, t: f64) -> Result<ExactObservables> {
    model_basis(params)?;
    let vals = node_map(grid, |q, p| ag_exact(params, d0, q, p, t).expect("regime checked"));
    let per_node: Vec<(f64, f64, f64)> = vals
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (q, p) = grid.node(i);
            let energy = (params.hamiltonian_at(q, p) * d).trace().re;
            (d.trace().re, energy, crate::hybrid::hermitian_eigenvalues(d)[0])
        })
        .collect();
    let classical: Vec<f64> = per_node.iter().map(|v| v.0).collect();
    let energies: Vec<f64> = per_node.iter().map(|v| v.1).collect();
    let rho = DensityMatrix::new(integrate_matrices(grid, &vals))?;
    let area = grid.cell_area();
    Ok(ExactObservables {
        t,
        norm: rho.trace(),
        energy: pairwise_sum(&energies) * area,
        rho,
        rho_min: classical.iter().cloned().fold(f64::INFINITY, f64::min),
        rho_integral: pairwise_sum(&classical) * area,
        min_eigenvalue: per_node.iter().map(|v| v.2).fold(f64::INFINITY, f64::min),
    })
}

/// Requires dq ≤ σ_q/4 and lq ≥ 6σ_q, likewise in p.
pub fn check_thermal_resolution(params: &ExactModelParams, grid: &PhaseSpaceGrid) -> Result<()> {
    let (sq, sp) = params.thermal_widths();
    let checks = [
        (grid.dq <= sq / 4.0 * (1.0 + 1e-12), format!("dq = {:e} exceeds sigma_q/4 = {:e}", grid.dq, sq / 4.0)),
        (grid.dp <= sp / 4.0 * (1.0 + 1e-12), format!("dp = {:e} exceeds sigma_p/4 = {:e}", grid.dp, sp / 4.0)),
        (grid.lq >= 6.0 * sq, format!("lq = {:e} below 6 sigma_q = {:e}", grid.lq, 6.0 * sq)),
        (grid.lp >= 6.0 * sp, format!("lp = {:e} below 6 sigma_p = {:e}", grid.lp, 6.0 * sp)),
    ];
    for (ok, msg) in checks {
        if !ok {
            return Err(KhsError::Unresolved(format!(
                "{msg}; need 16 nodes per 4 thermal widths and a domain of at least 6 widths"
            )));
        }
    }
    Ok(())
}

pub fn thermal_initial_state(params: &ExactModelParams, grid: &PhaseSpaceGrid) -> Result<HybridField> {
    params.validate()?;
    check_thermal_resolution(params, grid)?;
    let psi = ScalarField::from_real_fn(grid, |q, p| thermal_amplitude(params, q, p).value.re);
    HybridField::new(vec![psi, ScalarField::zeros(grid)])
}

/// Radial target density as a function of s = βH₀.
pub trait RadialProfile {
    fn rho(&self, s: f64) -> f64;
    /// Points where ρ is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<F: Fn(f64) -> f64> RadialProfile for F {
    fn rho(&self, s: f64) -> f64 {
        self(s)
    }
}

/// ρ(s) = (ωβ/2π)e^{−s}.
#[derive(Clone, Copy, Debug)]
pub struct BoltzmannProfile {
    pub params: ExactModelParams,
}

impl RadialProfile for BoltzmannProfile {
    fn rho(&self, s: f64) -> f64 {
        self.params.omega * self.params.beta / (2.0 * PI) * (-s).exp()
    }
}

/// ρ = c on s ≤ s0 and 0 beyond.
#[derive(Clone, Copy, Debug)]
pub struct UniformProfile {
    pub level: f64,
    pub s0: f64,
}

impl RadialProfile for UniformProfile {
    fn rho(&self, s: f64) -> f64 {
        if s <= self.s0 {
            self.level
        } else {
            0.0
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.s0]
    }
}

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    half * GL_NODES.iter().zip(&GL_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
}

/// u(s) = s⁻²∫₀ˢσρ(σ)dσ at each requested s, by cumulative Gauss–Legendre over sorted points.
pub fn radial_amplitude_squared(profile: &dyn RadialProfile, s_values: &[f64]) -> Result<Vec<f64>> {
    if s_values.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(KhsError::InvalidArgument("radial coordinate must be finite and nonnegative".into()));
    }
    let mut order: Vec<usize> = (0..s_values.len()).collect();
    order.sort_by(|&a, &b| s_values[a].partial_cmp(&s_values[b]).unwrap());
    let mut breaks = profile.breakpoints();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let integrand = |s: f64| s * profile.rho(s);
    let mut out = vec![0.0; s_values.len()];
    let (mut pos, mut acc, mut bi) = (0.0f64, 0.0f64, 0usize);
    for &i in &order {
        let s = s_values[i];
        while bi < breaks.len() && breaks[bi] <= s {
            if breaks[bi] > pos {
                acc += subdivided(&integrand, pos, breaks[bi]);
                pos = breaks[bi];
            }
            bi += 1;
        }
        if s > pos {
            acc += subdivided(&integrand, pos, s);
            pos = s;
        }
        out[i] = if s == 0.0 { 0.5 * profile.rho(0.0) } else { acc / (s * s) };
    }
    if out.iter().any(|u| *u < 0.0) || s_values.iter().any(|s| profile.rho(*s) < 0.0) {
        return Err(KhsError::InvalidArgument("target density must be nonnegative".into()));
    }
    Ok(out)
}

fn subdivided<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    // panels of at most unit width in s keep the 8-point rule near machine precision
    let panels = ((b - a).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    (0..panels).map(|k| gauss_legendre(f, a + k as f64 * h, a + (k + 1) as f64 * h)).sum()
}

/// Real zero-phase Ψ whose harmonic-gauge Clebsch density is the radial target.
pub fn amplitude_from_density(profile: &dyn RadialProfile, params: &ExactModelParams, grid: &PhaseSpaceGrid) -> Result<ScalarField> {
    params.validate()?;
    let s: Vec<f64> = (0..grid.len()).map(|i| {
        let (q, p) = grid.node(i);
        params.beta * params.h0(q, p)
    }).collect();
    let u = radial_amplitude_squared(profile, &s)?;
    Ok(ScalarField::from_real(grid, &u.iter().map(|v| v.sqrt()).collect::<Vec<_>>()))
}
