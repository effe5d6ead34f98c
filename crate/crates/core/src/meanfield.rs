//! Mean-field closure Υ = Ψ(z)ψ with a shared RK4 clock.

use crate::error::{KhsError, Result};
use crate::gauge::GaugePotential;
use crate::hybrid::{CMatrix, DensityMatrix, HybridHamiltonian};
use crate::kvh::{HamiltonianTerm, LiouvillianKernel, DEFAULT_CFL_SAFETY};
use crate::phase_space::{PhaseSpaceGrid, ScalarField, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldState {
    pub psi: ScalarField,
    pub spinor: Vec<C64>,
}

impl MeanFieldState {
    pub fn new(psi: ScalarField, spinor: Vec<C64>) -> Result<Self> {
        if spinor.is_empty() {
            return Err(KhsError::InvalidArgument("quantum state needs a component".into()));
        }
        Ok(Self { psi, spinor })
    }

    pub fn spinor_norm_sq(&self) -> f64 {
        self.spinor.iter().map(|c| c.norm_sqr()).sum()
    }

    /// ψψ†/|ψ|².
    pub fn quantum_density(&self) -> DensityMatrix {
        let n = self.spinor.len();
        let s = self.spinor_norm_sq();
        let m = CMatrix::from_fn(n, n, |a, b| self.spinor[a] * self.spinor[b].conj() / s);
        DensityMatrix::new(m).expect("outer product is Hermitian")
    }
}

/// The n×n matrices multiplying each term: identity for H₀, then the couplings.
fn term_matrices(h: &HybridHamiltonian) -> Vec<(&HamiltonianTerm, CMatrix)> {
    let mut out = vec![(h.scalar(), CMatrix::identity(h.n(), h.n()))];
    out.extend(h.couplings().iter().map(|(v, m)| (v, m.clone())));
    out
}

fn expectation(m: &CMatrix, spinor: &[C64]) -> f64 {
    let n = spinor.len();
    let mut acc = C64::new(0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            acc += spinor[a].conj() * m[(a, b)] * spinor[b];
        }
    }
    acc.re
}

/// H_eff(z) = ⟨ψ|Ĥ(z)ψ⟩.
pub fn effective_hamiltonian(h: &HybridHamiltonian, spinor: &[C64]) -> Result<HamiltonianTerm> {
    check_dim(h, spinor)?;
    let coeffs: Vec<(f64, &HamiltonianTerm)> = term_matrices(h).into_iter().map(|(t, m)| (expectation(&m, spinor), t)).collect();
    Ok(HamiltonianTerm::linear_combination(&coeffs))
}

fn check_dim(h: &HybridHamiltonian, spinor: &[C64]) -> Result<()> {
    if h.n() != spinor.len() {
        return Err(KhsError::DimensionMismatch { expected: h.n(), got: spinor.len() });
    }
    Ok(())
}

/// Per-term scalar Liouvillians, so that L̂ is linear in the coefficients.
#[derive(Clone, Debug)]
pub struct MeanFieldPropagator {
    kernels: Vec<LiouvillianKernel>,
    matrices: Vec<CMatrix>,
    norms: Vec<f64>,
    hbar: f64,
    safety: f64,
}

impl MeanFieldPropagator {
    pub fn new(h: &HybridHamiltonian, g: &GaugePotential, grid: &PhaseSpaceGrid, hbar: f64) -> Result<Self> {
        let mut kernels = Vec::new();
        let mut matrices = Vec::new();
        for (t, m) in term_matrices(h) {
            kernels.push(LiouvillianKernel::new(grid, g, hbar, 1, t, &[])?);
            matrices.push(m);
        }
        let norms = matrices
            .iter()
            .map(|m| crate::hybrid::hermitian_eigenvalues(m).iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .collect();
        Ok(Self { kernels, matrices, norms, hbar, safety: DEFAULT_CFL_SAFETY })
    }

    pub fn with_cfl_safety(mut self, safety: f64) -> Self {
        self.safety = safety;
        self
    }

    /// Stability bound for a quantum factor of squared norm `s`.
    pub fn cfl_bound(&self, s: f64) -> f64 {
        let speed: f64 = self.kernels.iter().zip(&self.norms).map(|(k, n)| k.max_speed() * n * s).sum();
        if speed == 0.0 {
            return f64::INFINITY;
        }
        let grid = &self.kernels[0].grid;
        self.safety * grid.dq.min(grid.dp) / speed
    }

    fn raw_rhs(&self, psi: &[C64], spinor: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let grid = &self.kernels[0].grid;
        let area = grid.cell_area();
        let f = C64::new(0.0, -1.0 / self.hbar);
        let mut dpsi = vec![C64::new(0.0, 0.0); psi.len()];
        let n = spinor.len();
        let mut gen = CMatrix::zeros(n, n);
        let input = [psi.to_vec()];
        for (k, m) in self.kernels.iter().zip(&self.matrices) {
            let l = k.apply(&input).pop().expect("one component");
            let c = expectation(m, spinor);
            let prods: Vec<C64> = psi.iter().zip(&l).map(|(a, b)| a.conj() * b).collect();
            let e = crate::phase_space::pairwise_sum(&prods).re * area;
            for (d, v) in dpsi.iter_mut().zip(&l) {
                *d += f * c * v;
            }
            gen += m * C64::new(e, 0.0);
        }
        let dspinor = (0..n).map(|a| f * (0..n).map(|b| gen[(a, b)] * spinor[b]).sum::<C64>()).collect();
        (dpsi, dspinor)
    }

    pub fn rhs(&self, state: &MeanFieldState) -> Result<(ScalarField, Vec<C64>)> {
        self.check(state)?;
        let (a, b) = self.raw_rhs(&state.psi.values, &state.spinor);
        Ok((ScalarField::from_raw(&state.psi.grid, a), b))
    }

    fn check(&self, state: &MeanFieldState) -> Result<()> {
        if state.spinor.len() != self.matrices[0].nrows() {
            return Err(KhsError::DimensionMismatch { expected: self.matrices[0].nrows(), got: state.spinor.len() });
        }
        if state.psi.grid != self.kernels[0].grid {
            return Err(KhsError::GridMismatch);
        }
        Ok(())
    }

    /// Coupled RK4 with simultaneous stages.
    pub fn step(&self, state: &MeanFieldState, dt: f64) -> Result<MeanFieldState> {
        self.check(state)?;
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let bound = self.cfl_bound(state.spinor_norm_sq());
        if dt.abs() > bound {
            return Err(KhsError::CflViolation { dt, bound });
        }
        let y0 = (&state.psi.values[..], &state.spinor[..]);
        let shift = |y: (&[C64], &[C64]), k: &(Vec<C64>, Vec<C64>), a: f64| -> (Vec<C64>, Vec<C64>) {
            (
                y.0.iter().zip(&k.0).map(|(u, v)| u + v * a).collect(),
                y.1.iter().zip(&k.1).map(|(u, v)| u + v * a).collect(),
            )
        };
        let k1 = self.raw_rhs(y0.0, y0.1);
        let s2 = shift(y0, &k1, 0.5 * dt);
        let k2 = self.raw_rhs(&s2.0, &s2.1);
        let s3 = shift(y0, &k2, 0.5 * dt);
        let k3 = self.raw_rhs(&s3.0, &s3.1);
        let s4 = shift(y0, &k3, dt);
        let k4 = self.raw_rhs(&s4.0, &s4.1);
        let w = dt / 6.0;
        let comb = |y: &[C64], a: &[C64], b: &[C64], c: &[C64], d: &[C64]| -> Vec<C64> {
            (0..y.len()).map(|i| y[i] + (a[i] + (b[i] + c[i]) * 2.0 + d[i]) * w).collect()
        };
        Ok(MeanFieldState {
            psi: ScalarField::from_raw(&state.psi.grid, comb(y0.0, &k1.0, &k2.0, &k3.0, &k4.0)),
            spinor: comb(y0.1, &k1.1, &k2.1, &k3.1, &k4.1),
        })
    }

    pub fn propagate(&self, state: &MeanFieldState, t: f64, dt: f64) -> Result<MeanFieldState> {
        let steps = (t / dt).abs().ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut cur = state.clone();
        for _ in 0..steps {
            cur = self.step(&cur, h)?;
        }
        Ok(cur)
    }
}

/// G = ∫Ψ*L̂_ĤΨ, entrywise.
pub fn quantum_generator(psi: &ScalarField, h: &HybridHamiltonian, g: &GaugePotential, hbar: f64) -> Result<CMatrix> {
    let mut gen = CMatrix::zeros(h.n(), h.n());
    for (t, m) in term_matrices(h) {
        let l = crate::kvh::apply_covariant_liouvillian(t, g, psi, hbar)?;
        gen += m * psi.inner(&l);
    }
    Ok(gen)
}

/// (dΨ/dt, dψ/dt) from iħ∂tΨ = L̂_{H_eff}Ψ and iħ∂tψ = Gψ.
pub fn meanfield_rhs(state: &MeanFieldState, h: &HybridHamiltonian, g: &GaugePotential, hbar: f64) -> Result<(ScalarField, Vec<C64>)> {
    check_dim(h, &state.spinor)?;
    MeanFieldPropagator::new(h, g, &state.psi.grid, hbar)?.rhs(state)
}

pub fn step_meanfield_rk4(state: &MeanFieldState, h: &HybridHamiltonian, g: &GaugePotential, dt: f64, hbar: f64) -> Result<MeanFieldState> {
    check_dim(h, &state.spinor)?;
    MeanFieldPropagator::new(h, g, &state.psi.grid, hbar)?.step(state, dt)
}

/// h = ∫Ψ*⟨ψ|L̂_Ĥψ⟩Ψ.
pub fn meanfield_energy(state: &MeanFieldState, h: &HybridHamiltonian, g: &GaugePotential, hbar: f64) -> Result<f64> {
    let eff = effective_hamiltonian(h, &state.spinor)?;
    crate::kvh::kvh_energy(&state.psi, &eff, g, hbar)
}
