//! Hybrid classical–quantum dynamics for an n-level quantum factor.

use nalgebra::DMatrix;

use crate::error::{KhsError, Result};
use crate::exact::diagonalize_coupling;
use crate::gauge::{GaugeKind, GaugePotential};
use crate::kvh::{
    density_planes, density_planes_expanded, propagate_characteristics, rk4_planes, HamiltonianTerm,
    KvhPropagator, LiouvillianKernel, DEFAULT_CFL_SAFETY,
};
use crate::phase_space::{pairwise_sum, PhaseSpaceGrid, ScalarField, C64};

pub type CMatrix = DMatrix<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// n-component wavefunction Υ_α(z).
#[derive(Clone, Debug, PartialEq)]
pub struct HybridField {
    components: Vec<ScalarField>,
}

impl HybridField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| KhsError::InvalidArgument("hybrid field needs a component".into()))?;
        if components.iter().any(|c| c.grid != first.grid) {
            return Err(KhsError::GridMismatch);
        }
        Ok(Self { components })
    }

    pub(crate) fn from_planes(grid: &PhaseSpaceGrid, planes: Vec<Vec<C64>>) -> Self {
        Self {
            components: planes.into_iter().map(|v| ScalarField::from_raw(grid, v)).collect(),
        }
    }

    /// Ψ(z)·ψ.
    pub fn factorized(psi: &ScalarField, spinor: &[C64]) -> Self {
        Self {
            components: spinor.iter().map(|&c| psi.scale(c)).collect(),
        }
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.components[0].grid
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn planes(&self) -> Vec<Vec<C64>> {
        self.components.iter().map(|c| c.values.clone()).collect()
    }

    /// ‖Υ‖² = Tr∫ΥΥ†.
    pub fn norm_sq(&self) -> f64 {
        self.components.iter().map(|c| c.norm_sq()).sum()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.components.iter().zip(&other.components).map(|(a, b)| a.inner(b)).sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            components: self.components.iter().zip(&other.components).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            components: self.components.iter().map(|a| a.scale(c)).collect(),
        }
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.sub(other).norm_sq().sqrt()
    }

    pub fn normalized(&self) -> Self {
        self.scale(C64::new(1.0 / self.norm_sq().sqrt(), 0.0))
    }
}

/// α·σ.
pub fn pauli_dot(alpha: [f64; 3]) -> CMatrix {
    CMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(alpha[2], 0.0),
            C64::new(alpha[0], -alpha[1]),
            C64::new(alpha[0], alpha[1]),
            C64::new(-alpha[2], 0.0),
        ],
    )
}

pub fn pauli() -> [CMatrix; 3] {
    [pauli_dot([1.0, 0.0, 0.0]), pauli_dot([0.0, 1.0, 0.0]), pauli_dot([0.0, 0.0, 1.0])]
}

fn hermiticity_residual(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Ĥ = H₀·I + Σ_j V_j·M_j with constant Hermitian M_j.
#[derive(Clone, Debug)]
pub struct HybridHamiltonian {
    n: usize,
    scalar: HamiltonianTerm,
    couplings: Vec<(HamiltonianTerm, CMatrix)>,
}

impl HybridHamiltonian {
    pub fn new(n: usize, scalar: HamiltonianTerm, couplings: Vec<(HamiltonianTerm, CMatrix)>) -> Result<Self> {
        for (_, m) in &couplings {
            if m.nrows() != n || m.ncols() != n {
                return Err(KhsError::DimensionMismatch { expected: n, got: m.nrows() });
            }
            let residual = hermiticity_residual(m);
            if residual > 1e-12 {
                return Err(KhsError::NonHermitian { residual });
            }
        }
        Ok(Self { n, scalar, couplings })
    }

    pub fn scalar_only(n: usize, h: HamiltonianTerm) -> Self {
        Self { n, scalar: h, couplings: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scalar(&self) -> &HamiltonianTerm {
        &self.scalar
    }

    pub fn couplings(&self) -> &[(HamiltonianTerm, CMatrix)] {
        &self.couplings
    }

    /// (V, α) when Ĥ = H₀ + V·(α·σ).
    pub fn single_coupling(&self) -> Option<(&HamiltonianTerm, [f64; 3])> {
        if self.n != 2 || self.couplings.len() != 1 {
            return None;
        }
        let (v, m) = &self.couplings[0];
        let tr = m[(0, 0)] + m[(1, 1)];
        if tr.norm() > 1e-14 {
            return None;
        }
        Some((v, [m[(1, 0)].re, m[(1, 0)].im, m[(0, 0)].re]))
    }

    pub fn is_scalar_plus_single_coupling(&self) -> bool {
        self.single_coupling().is_some()
    }

    pub fn matrix_at(&self, q: f64, p: f64) -> CMatrix {
        let mut m = CMatrix::identity(self.n, self.n) * C64::new(self.scalar.value(q, p), 0.0);
        for (v, c) in &self.couplings {
            m += c * C64::new(v.value(q, p), 0.0);
        }
        m
    }

    pub fn gradient_at(&self, q: f64, p: f64) -> (CMatrix, CMatrix) {
        let (a, b) = self.scalar.gradient(q, p);
        let id = CMatrix::identity(self.n, self.n);
        let mut mq = &id * C64::new(a, 0.0);
        let mut mp = &id * C64::new(b, 0.0);
        for (v, c) in &self.couplings {
            let (x, y) = v.gradient(q, p);
            mq += c * C64::new(x, 0.0);
            mp += c * C64::new(y, 0.0);
        }
        (mq, mp)
    }

    pub(crate) fn kernel(&self, grid: &PhaseSpaceGrid, g: &GaugePotential, hbar: f64) -> Result<LiouvillianKernel> {
        LiouvillianKernel::new(grid, g, hbar, self.n, &self.scalar, &self.couplings)
    }

    /// Analytic samples of Ĥ, its gradient and Hessian as matrix fields.
    pub fn sample_jets(&self, grid: &PhaseSpaceGrid) -> HamiltonianJets {
        let n = self.n;
        let len = grid.len();
        let mut fields: Vec<MatrixField> = (0..6).map(|_| MatrixField::zeros(grid, n)).collect();
        let mut add = |term: &HamiltonianTerm, m: &CMatrix| {
            for i in 0..len {
                let (q, p) = grid.node(i);
                let (hq, hp) = term.gradient(q, p);
                let hs = term.hessian(q, p);
                let vals = [term.value(q, p), hq, hp, hs[0][0], hs[0][1], hs[1][1]];
                for (f, &v) in fields.iter_mut().zip(&vals) {
                    if v == 0.0 {
                        continue;
                    }
                    for a in 0..n {
                        for b in 0..n {
                            let c = m[(a, b)];
                            if c != ZERO {
                                f.entries[a * n + b][i] += c * v;
                            }
                        }
                    }
                }
            }
        };
        add(&self.scalar, &CMatrix::identity(n, n));
        for (v, m) in &self.couplings {
            add(v, m);
        }
        let mut it = fields.into_iter();
        HamiltonianJets {
            h: it.next().unwrap(),
            hq: it.next().unwrap(),
            hp: it.next().unwrap(),
            hqq: it.next().unwrap(),
            hqp: it.next().unwrap(),
            hpp: it.next().unwrap(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianJets {
    pub h: MatrixField,
    pub hq: MatrixField,
    pub hp: MatrixField,
    pub hqq: MatrixField,
    pub hqp: MatrixField,
    pub hpp: MatrixField,
}

/// n×n matrix per node, stored as n² planes indexed a·n + b.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    pub grid: PhaseSpaceGrid,
    pub n: usize,
    pub entries: Vec<Vec<C64>>,
}

pub type HybridDensityField = MatrixField;

impl MatrixField {
    pub fn zeros(grid: &PhaseSpaceGrid, n: usize) -> Self {
        Self {
            grid: grid.clone(),
            n,
            entries: vec![vec![ZERO; grid.len()]; n * n],
        }
    }

    pub fn from_entries(grid: &PhaseSpaceGrid, n: usize, entries: Vec<Vec<C64>>) -> Result<Self> {
        if entries.len() != n * n || entries.iter().any(|e| e.len() != grid.len()) {
            return Err(KhsError::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        Ok(Self { grid: grid.clone(), n, entries })
    }

    pub fn from_fn<F: Fn(f64, f64) -> CMatrix>(grid: &PhaseSpaceGrid, n: usize, f: F) -> Self {
        let mut out = Self::zeros(grid, n);
        for i in 0..grid.len() {
            let (q, p) = grid.node(i);
            let m = f(q, p);
            for a in 0..n {
                for b in 0..n {
                    out.entries[a * n + b][i] = m[(a, b)];
                }
            }
        }
        out
    }

    pub(crate) fn from_fn_values(grid: &PhaseSpaceGrid, n: usize, vals: &[CMatrix]) -> Self {
        let mut out = Self::zeros(grid, n);
        for (i, m) in vals.iter().enumerate() {
            for a in 0..n {
                for b in 0..n {
                    out.entries[a * n + b][i] = m[(a, b)];
                }
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, i: usize) -> C64 {
        self.entries[a * self.n + b][i]
    }

    pub fn at(&self, i: usize) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |a, b| self.get(a, b, i))
    }

    pub fn map_entries<F: Fn(&[C64]) -> Vec<C64>>(&self, f: F) -> Self {
        Self {
            grid: self.grid.clone(),
            n: self.n,
            entries: self.entries.iter().map(|e| f(e)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map_entries(|e| e.iter().map(|v| v * c).collect())
    }

    fn zip_with<F: Fn(C64, C64) -> C64>(&self, other: &Self, f: F) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            grid: self.grid.clone(),
            n: self.n,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        }
    }

    /// Nodewise matrix product.
    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(&self.grid, n);
        for a in 0..n {
            for b in 0..n {
                let dst = &mut out.entries[a * n + b];
                for c in 0..n {
                    let (x, y) = (&self.entries[a * n + c], &other.entries[c * n + b]);
                    for i in 0..dst.len() {
                        dst[i] += x[i] * y[i];
                    }
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.matmul(other).sub(&other.matmul(self))
    }

    pub fn scale_by(&self, f: &[f64]) -> Self {
        self.map_entries(|e| e.iter().zip(f).map(|(v, s)| v * *s).collect())
    }

    pub fn d_q(&self) -> Self {
        self.map_entries(|e| self.grid.d_q(e))
    }

    pub fn d_p(&self) -> Self {
        self.map_entries(|e| self.grid.d_p(e))
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(&self.grid, n);
        for a in 0..n {
            for b in 0..n {
                out.entries[a * n + b] = self.entries[b * n + a].iter().map(|v| v.conj()).collect();
            }
        }
        out
    }

    /// max over nodes and entries of |D − D†|.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in a..n {
                for (x, y) in self.entries[a * n + b].iter().zip(&self.entries[b * n + a]) {
                    worst = worst.max((x - y.conj()).norm());
                }
            }
        }
        worst
    }

    pub fn sup_norm(&self) -> f64 {
        self.entries.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Real part of the nodewise trace.
    pub fn trace(&self) -> ScalarField {
        let n = self.n;
        let mut acc = self.entries[0].clone();
        for a in 1..n {
            for (s, v) in acc.iter_mut().zip(&self.entries[a * n + a]) {
                *s += v;
            }
        }
        ScalarField::from_raw(&self.grid, acc.into_iter().map(|v| C64::new(v.re, 0.0)).collect())
    }

    pub fn integrate(&self) -> CMatrix {
        let area = self.grid.cell_area();
        CMatrix::from_fn(self.n, self.n, |a, b| pairwise_sum(&self.entries[a * self.n + b]) * area)
    }

    /// Smallest nodewise eigenvalue and the node where it occurs.
    pub fn min_eigenvalue(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.grid.len() {
            let e = hermitian_eigenvalues(&self.at(i))[0];
            if e < best.0 {
                best = (e, i);
            }
        }
        best
    }
}

/// Ascending eigenvalues of a Hermitian matrix (closed form for 2×2).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 1 {
        return vec![m[(0, 0)].re];
    }
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
        let mid = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        return vec![mid - r, mid + r];
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let scale = m.iter().map(|v| v.norm()).fold(1.0, f64::max);
        let residual = hermiticity_residual(&m);
        if residual > 1e-10 * scale {
            return Err(KhsError::NonHermitian { residual });
        }
        Ok(Self { m: (&m + m.adjoint()) * C64::new(0.5, 0.0) })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    pub fn normalized(&self) -> Self {
        Self { m: &self.m * C64::new(1.0 / self.trace(), 0.0) }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.m)
    }
}

/// Tr ρ̂².
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.m.iter().map(|v| v.norm_sqr()).sum()
}

/// n = Tr(σρ̂).
pub fn bloch_vector(rho: &DensityMatrix) -> Result<[f64; 3]> {
    if rho.n() != 2 {
        return Err(KhsError::DimensionMismatch { expected: 2, got: rho.n() });
    }
    let m = &rho.m;
    Ok([
        2.0 * m[(1, 0)].re,
        2.0 * m[(1, 0)].im,
        (m[(0, 0)] - m[(1, 1)]).re,
    ])
}

fn check_dims(h: &HybridHamiltonian, y: &HybridField) -> Result<()> {
    if h.n != y.n() {
        return Err(KhsError::DimensionMismatch { expected: h.n, got: y.n() });
    }
    Ok(())
}

/// L̂_ĤΥ = ĤΥ − ∇Ĥ·Ẑ₊Υ.
pub fn apply_hybrid_liouvillian(h: &HybridHamiltonian, g: &GaugePotential, y: &HybridField, hbar: f64) -> Result<HybridField> {
    check_dims(h, y)?;
    let k = h.kernel(y.grid(), g, hbar)?;
    Ok(HybridField::from_planes(y.grid(), k.apply(&y.planes())))
}

/// D̂ = ΥΥ† + div(Υ Ẑ₋Υ†).
pub fn hybrid_density_divergence_form(y: &HybridField, g: &GaugePotential, hbar: f64) -> Result<HybridDensityField> {
    let a = g.sample(y.grid())?;
    MatrixField::from_entries(y.grid(), y.n(), density_planes(y.grid(), &y.planes(), &a, hbar))
}

/// D̂ = ΥΥ† − div(JA ΥΥ†) + iħ{Υ,Υ†}.
pub fn hybrid_density(y: &HybridField, g: &GaugePotential, hbar: f64) -> Result<HybridDensityField> {
    let a = g.sample(y.grid())?;
    MatrixField::from_entries(y.grid(), y.n(), density_planes_expanded(y.grid(), &y.planes(), &a, hbar))
}

/// ρ̂ = ∫ΥΥ†.
pub fn quantum_density(y: &HybridField) -> DensityMatrix {
    let n = y.n();
    let area = y.grid().cell_area();
    let mut m = CMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let (ya, yb) = (&y.components[a].values, &y.components[b].values);
            let prod: Vec<C64> = ya.iter().zip(yb).map(|(u, v)| u * v.conj()).collect();
            let s = pairwise_sum(&prod) * area;
            if a == b {
                m[(a, a)] = C64::new(s.re, 0.0);
            } else {
                m[(a, b)] = s;
                m[(b, a)] = s.conj();
            }
        }
    }
    DensityMatrix { m }
}

/// ρ = Tr D̂.
pub fn classical_density(y: &HybridField, g: &GaugePotential, hbar: f64) -> Result<ScalarField> {
    Ok(hybrid_density(y, g, hbar)?.trace())
}

/// ⟨Â⟩ = ⟨Υ|L̂_ÂΥ⟩.
pub fn hybrid_expectation(a: &HybridHamiltonian, y: &HybridField, g: &GaugePotential, hbar: f64) -> Result<f64> {
    let la = apply_hybrid_liouvillian(a, g, y, hbar)?;
    Ok(y.inner(&la).re)
}

/// ⟨Â⟩ = Tr∫ÂD̂.
pub fn expectation_from_density(a: &HybridHamiltonian, d: &HybridDensityField) -> Result<f64> {
    if a.n != d.n {
        return Err(KhsError::DimensionMismatch { expected: a.n, got: d.n });
    }
    let jets = a.sample_jets(&d.grid);
    Ok(jets.h.matmul(d).trace().values.iter().map(|v| v.re).collect::<Vec<_>>().as_slice().pipe_integrate(&d.grid))
}

trait PipeIntegrate {
    fn pipe_integrate(&self, grid: &PhaseSpaceGrid) -> f64;
}

impl PipeIntegrate for [f64] {
    fn pipe_integrate(&self, grid: &PhaseSpaceGrid) -> f64 {
        pairwise_sum(self) * grid.cell_area()
    }
}

/// (1/iħ)⟨Υ|[L̂_Â, L̂_Ĥ]Υ⟩ = (2/ħ) Im⟨L̂_ÂΥ, L̂_ĤΥ⟩.
pub fn ehrenfest_rate(
    a: &HybridHamiltonian,
    h: &HybridHamiltonian,
    y: &HybridField,
    g: &GaugePotential,
    hbar: f64,
) -> Result<f64> {
    let la = apply_hybrid_liouvillian(a, g, y, hbar)?;
    let lh = apply_hybrid_liouvillian(h, g, y, hbar)?;
    Ok(2.0 * la.inner(&lh).im / hbar)
}

#[derive(Clone, Debug)]
pub struct HybridPropagator {
    kernel: LiouvillianKernel,
    safety: f64,
}

impl HybridPropagator {
    pub fn new(h: &HybridHamiltonian, g: &GaugePotential, grid: &PhaseSpaceGrid, hbar: f64) -> Result<Self> {
        Ok(Self {
            kernel: h.kernel(grid, g, hbar)?,
            safety: DEFAULT_CFL_SAFETY,
        })
    }

    pub fn with_cfl_safety(mut self, safety: f64) -> Self {
        self.safety = safety;
        self
    }

    pub fn cfl_bound(&self) -> f64 {
        self.kernel.cfl_bound(self.safety)
    }

    pub fn step(&self, y: &HybridField, dt: f64) -> Result<HybridField> {
        if y.n() != self.kernel.n {
            return Err(KhsError::DimensionMismatch { expected: self.kernel.n, got: y.n() });
        }
        if *y.grid() != self.kernel.grid {
            return Err(KhsError::GridMismatch);
        }
        if dt == 0.0 {
            return Ok(y.clone());
        }
        let bound = self.cfl_bound();
        if dt.abs() > bound {
            return Err(KhsError::CflViolation { dt, bound });
        }
        Ok(HybridField::from_planes(y.grid(), self.kernel.rk4(&y.planes(), dt)))
    }

    pub fn propagate(&self, y: &HybridField, t: f64, dt: f64) -> Result<HybridField> {
        let steps = (t / dt).abs().ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut cur = y.clone();
        for _ in 0..steps {
            cur = self.step(&cur, h)?;
        }
        Ok(cur)
    }
}

pub fn step_rk4_hybrid(h: &HybridHamiltonian, g: &GaugePotential, y: &HybridField, dt: f64, hbar: f64) -> Result<HybridField> {
    HybridPropagator::new(h, g, y.grid(), hbar)?.step(y, dt)
}

fn rotate(u: &CMatrix, y: &HybridField) -> HybridField {
    let n = y.n();
    let planes = (0..n)
        .map(|a| {
            (0..y.grid().len())
                .map(|i| (0..n).map(|b| u[(a, b)] * y.components[b].values[i]).sum())
                .collect()
        })
        .collect();
    HybridField::from_planes(y.grid(), planes)
}

/// Diagonalizes the coupling, evolves the branches under H₀ ± λV and rotates
/// back. Branches use characteristics when quadratic in the harmonic gauge and
/// RK4 with step `dt` otherwise.
pub fn branch_propagate(
    h: &HybridHamiltonian,
    g: &GaugePotential,
    y: &HybridField,
    t: f64,
    hbar: f64,
    dt: f64,
) -> Result<HybridField> {
    let (v, alpha) = h.single_coupling().ok_or(KhsError::NotSingleCoupling)?;
    check_dims(h, y)?;
    if t == 0.0 {
        return Ok(y.clone());
    }
    let d = diagonalize_coupling(alpha)?;
    let u = d.u_matrix();
    let rotated = rotate(&u, y);
    let mut out = Vec::with_capacity(2);
    for (k, sign) in [(0usize, 1.0), (1, -1.0)] {
        let branch = HamiltonianTerm::linear_combination(&[(1.0, &h.scalar), (sign * d.lambda, v)]);
        let psi = rotated.component(k);
        let evolved = if branch.is_quadratic_homogeneous() && g.kind() == GaugeKind::HarmonicOscillator {
            propagate_characteristics(&branch, g, psi, t, hbar)?
        } else {
            KvhPropagator::new(&branch, g, y.grid(), hbar)?.propagate(psi, t, dt)?
        };
        out.push(evolved);
    }
    Ok(rotate(&u.adjoint(), &HybridField::new(out)?))
}

/// Per-group pieces of the ∂tD̂ right-hand side and their sum.
#[derive(Clone, Debug)]
pub struct DEvolution {
    pub groups: Vec<MatrixField>,
    pub total: MatrixField,
}

/// {A,B} for matrix fields given their gradients: A_q B_p − A_p B_q.
fn matrix_bracket(aq: &MatrixField, ap: &MatrixField, bq: &MatrixField, bp: &MatrixField) -> MatrixField {
    aq.matmul(bp).sub(&ap.matmul(bq))
}

#[inline]
fn sbr(fq: C64, fp: C64, gq: C64, gp: C64) -> C64 {
    fq * gp - fp * gq
}

/// ∂tD̂ assembled from the eight displayed groups of terms, with K = JA·∇Ĥ.
pub fn d_evolution_rhs(y: &HybridField, h: &HybridHamiltonian, g: &GaugePotential, hbar: f64) -> Result<DEvolution> {
    check_dims(h, y)?;
    let grid = y.grid();
    let n = y.n();
    let len = grid.len();
    let ih = C64::new(0.0, hbar);
    let jets = h.sample_jets(grid);
    let HamiltonianJets { h: hm, hq, hp, hqq, hqp, hpp } = &jets;

    let mut ja_q = Vec::with_capacity(len);
    let mut ja_p = Vec::with_capacity(len);
    let mut dja = Vec::with_capacity(len);
    for i in 0..len {
        let (q, p) = grid.node(i);
        let jet = g.jet(q, p);
        let (a, b) = jet.ja();
        ja_q.push(a);
        ja_p.push(b);
        dja.push(jet.ja_jac());
    }
    let k = hq.scale_by(&ja_q).add(&hp.scale_by(&ja_p));
    let col = |r: usize, c: usize| dja.iter().map(|m: &[[f64; 2]; 2]| m[r][c]).collect::<Vec<f64>>();
    let kq = hq
        .scale_by(&col(0, 0))
        .add(&hqq.scale_by(&ja_q))
        .add(&hp.scale_by(&col(1, 0)))
        .add(&hqp.scale_by(&ja_p));
    let kp = hq
        .scale_by(&col(0, 1))
        .add(&hqp.scale_by(&ja_q))
        .add(&hp.scale_by(&col(1, 1)))
        .add(&hpp.scale_by(&ja_p));

    let d = hybrid_density(y, g, hbar)?;
    let (dq, dp) = (d.d_q(), d.d_p());
    let ys = y.planes();
    let yq: Vec<Vec<C64>> = ys.iter().map(|v| grid.d_q(v)).collect();
    let yp: Vec<Vec<C64>> = ys.iter().map(|v| grid.d_p(v)).collect();
    let mut m = MatrixField::zeros(grid, n);
    let mut pbyy = MatrixField::zeros(grid, n);
    for a in 0..n {
        for b in 0..n {
            for i in 0..len {
                m.entries[a * n + b][i] = ys[a][i] * ys[b][i].conj();
                pbyy.entries[a * n + b][i] = sbr(yq[a][i], yp[a][i], yq[b][i].conj(), yp[b][i].conj());
            }
        }
    }

    let t1 = hm.commutator(&d).scale(C64::new(0.0, -1.0 / hbar));
    let t2 = matrix_bracket(hq, hp, &dq, &dp).sub(&matrix_bracket(&dq, &dp, hq, hp));

    let fq = m.scale_by(&ja_q);
    let fp = m.scale_by(&ja_p);
    let (fqq, fqp) = (fq.d_q(), fq.d_p());
    let (fpq, fpp) = (fp.d_q(), fp.d_p());
    let t3 = matrix_bracket(&fqq, &fqp, hqq, hqp)
        .sub(&matrix_bracket(hqq, hqp, &fqq, &fqp))
        .add(&matrix_bracket(&fpq, &fpp, hqp, hpp))
        .sub(&matrix_bracket(hqp, hpp, &fpq, &fpp));

    let t4 = k
        .commutator(&fq)
        .d_q()
        .add(&k.commutator(&fp).d_p())
        .scale(C64::new(0.0, 1.0 / hbar));

    let t5 = k.commutator(&pbyy);

    // gradients of (JA)^c Υ_a; those of (JA)^c Υ*_b are their conjugates
    let mut t6 = MatrixField::zeros(grid, n);
    for (c, ja) in [&ja_q, &ja_p].into_iter().enumerate() {
        let grads: Vec<(Vec<C64>, Vec<C64>)> = ys
            .iter()
            .map(|v| {
                let f: Vec<C64> = v.iter().zip(ja.iter()).map(|(x, s)| x * *s).collect();
                (grid.d_q(&f), grid.d_p(&f))
            })
            .collect();
        let mut vfield = MatrixField::zeros(grid, n);
        for a in 0..n {
            for b in 0..n {
                let dst = &mut vfield.entries[a * n + b];
                for gm in 0..n {
                    for i in 0..len {
                        let first = sbr(
                            hq.get(a, gm, i),
                            hp.get(a, gm, i),
                            grads[b].0[i].conj(),
                            grads[b].1[i].conj(),
                        ) * ys[gm][i];
                        let second = sbr(grads[a].0[i], grads[a].1[i], hq.get(gm, b, i), hp.get(gm, b, i))
                            * ys[gm][i].conj();
                        dst[i] += first - second;
                    }
                }
            }
        }
        t6 = t6.add(&if c == 0 { vfield.d_q() } else { vfield.d_p() });
    }

    let mut t7 = MatrixField::zeros(grid, n);
    let mut t8 = MatrixField::zeros(grid, n);
    for a in 0..n {
        for b in 0..n {
            for gm in 0..n {
                let inner1: Vec<C64> = (0..len)
                    .map(|i| sbr(hq.get(a, gm, i), hp.get(a, gm, i), yq[b][i].conj(), yp[b][i].conj()))
                    .collect();
                let inner2: Vec<C64> = (0..len)
                    .map(|i| sbr(yq[a][i], yp[a][i], hq.get(gm, b, i), hp.get(gm, b, i)))
                    .collect();
                let (i1q, i1p) = (grid.d_q(&inner1), grid.d_p(&inner1));
                let (i2q, i2p) = (grid.d_q(&inner2), grid.d_p(&inner2));
                let d7 = &mut t7.entries[a * n + b];
                for i in 0..len {
                    d7[i] += ys[gm][i] * sbr(kq.get(a, gm, i), kp.get(a, gm, i), yq[b][i].conj(), yp[b][i].conj())
                        - sbr(yq[a][i], yp[a][i], kq.get(gm, b, i), kp.get(gm, b, i)) * ys[gm][i].conj();
                }
                let d8 = &mut t8.entries[a * n + b];
                for i in 0..len {
                    d8[i] += -ih * sbr(yq[gm][i], yp[gm][i], i1q[i], i1p[i])
                        + ih * sbr(i2q[i], i2p[i], yq[gm][i].conj(), yp[gm][i].conj());
                }
            }
        }
    }

    let groups = vec![t1, t2, t3, t4, t5, t6, t7, t8];
    let total = groups.iter().skip(1).fold(groups[0].clone(), |acc, g| acc.add(g));
    Ok(DEvolution { groups, total })
}

/// −(i/ħ)[Ĥ,D̂] + ½({Ĥ,D̂} − {D̂,Ĥ}).
pub fn ag_rhs(d: &HybridDensityField, h: &HybridHamiltonian, hbar: f64) -> Result<HybridDensityField> {
    if h.n != d.n {
        return Err(KhsError::DimensionMismatch { expected: h.n, got: d.n });
    }
    Ok(AgPropagator::from_jets(h.sample_jets(&d.grid), hbar).rhs(d))
}

/// RK4 integrator for the AG equation with cached Hamiltonian samples.
#[derive(Clone, Debug)]
pub struct AgPropagator {
    jets: HamiltonianJets,
    hbar: f64,
}

impl AgPropagator {
    pub fn new(h: &HybridHamiltonian, grid: &PhaseSpaceGrid, hbar: f64) -> Self {
        Self::from_jets(h.sample_jets(grid), hbar)
    }

    fn from_jets(jets: HamiltonianJets, hbar: f64) -> Self {
        Self { jets, hbar }
    }

    pub fn rhs(&self, d: &MatrixField) -> MatrixField {
        let j = &self.jets;
        let (dq, dp) = (d.d_q(), d.d_p());
        let brackets = matrix_bracket(&j.hq, &j.hp, &dq, &dp).sub(&matrix_bracket(&dq, &dp, &j.hq, &j.hp));
        j.h.commutator(d)
            .scale(C64::new(0.0, -1.0 / self.hbar))
            .add(&brackets.scale(C64::new(0.5, 0.0)))
    }

    pub fn step(&self, d: &MatrixField, dt: f64) -> MatrixField {
        let entries = rk4_planes(&d.entries, dt, |e| {
            let f = MatrixField { grid: d.grid.clone(), n: d.n, entries: e.to_vec() };
            self.rhs(&f).entries
        });
        MatrixField { grid: d.grid.clone(), n: d.n, entries }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialTraceReport {
    /// max over interior samples of max |dρ̂/dt − (1/iħ)∫[Ĥ,D̂]| over entries.
    pub quantum_residual: f64,
    /// max over interior samples and nodes of |∂tρ − Tr{Ĥ,D̂}|.
    pub classical_residual: f64,
    /// max |∂tρ| seen, for scaling.
    pub classical_scale: f64,
}

/// Centered finite-difference check of the quantum and classical partial-trace equations.
pub fn partial_trace_check(
    trajectory: &[(f64, HybridField)],
    h: &HybridHamiltonian,
    g: &GaugePotential,
    hbar: f64,
) -> Result<PartialTraceReport> {
    if trajectory.len() < 3 {
        return Err(KhsError::InvalidArgument("partial-trace check needs at least 3 snapshots".into()));
    }
    let grid = trajectory[0].1.grid().clone();
    let jets = h.sample_jets(&grid);
    let mut report = PartialTraceReport { quantum_residual: 0.0, classical_residual: 0.0, classical_scale: 0.0 };
    for w in trajectory.windows(3) {
        let (t0, y0) = (&w[0].0, &w[0].1);
        let (t1, y1) = (&w[1].0, &w[1].1);
        let (t2, y2) = (&w[2].0, &w[2].1);
        let _ = t1;
        let span = t2 - t0;
        let rq = (quantum_density(y2).m - quantum_density(y0).m) / C64::new(span, 0.0);
        let d = hybrid_density(y1, g, hbar)?;
        let comm = jets.h.commutator(&d).integrate() / C64::new(0.0, hbar);
        let qres = (rq - comm).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let rho2 = classical_density(y2, g, hbar)?;
        let rho0 = classical_density(y0, g, hbar)?;
        let (dq, dp) = (d.d_q(), d.d_p());
        let tr = matrix_bracket(&jets.hq, &jets.hp, &dq, &dp).trace();
        let mut cres: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..grid.len() {
            let fd = (rho2.values[i].re - rho0.values[i].re) / span;
            cres = cres.max((fd - tr.values[i].re).abs());
            scale = scale.max(fd.abs());
        }
        report.quantum_residual = report.quantum_residual.max(qres);
        report.classical_residual = report.classical_residual.max(cres);
        report.classical_scale = report.classical_scale.max(scale);
    }
    Ok(report)
}
