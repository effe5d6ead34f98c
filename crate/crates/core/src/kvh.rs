//! Classical Koopman–van Hove dynamics: covariant Liouvillian, propagation,
//! energy functional, Clebsch density and polar diagnostics.

use nalgebra::DMatrix;

use crate::error::{KhsError, Result};
use crate::gauge::{z_plus_scalar, GaugeKind, GaugePotential, GaugeSample};
use crate::phase_space::{BicubicInterpolator, PhaseSpaceGrid, ScalarField, C64};

pub use crate::hamiltonian::{HamiltonianTerm, Polynomial, TermSample};

pub const DEFAULT_CFL_SAFETY: f64 = 0.5;

/// A Hamiltonian term sampled on the grid together with its phase function.
#[derive(Clone, Debug)]
pub(crate) struct SampledTerm {
    pub hq: Vec<f64>,
    pub hp: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SampledTerm {
    pub fn new(term: &HamiltonianTerm, grid: &PhaseSpaceGrid, a: &GaugeSample) -> Self {
        let TermSample { h, hq, hp } = term.sample(grid);
        let phase = (0..grid.len()).map(|i| h[i] + hq[i] * a.ap[i] - hp[i] * a.aq[i]).collect();
        Self { hq, hp, phase }
    }
}

fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)].norm();
        let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        return (0.5 * (a + d)).abs() + r;
    }
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// L̂ for Ĥ = H₀·I + Σ_j V_j·M_j acting on n component planes.
#[derive(Clone, Debug)]
pub(crate) struct LiouvillianKernel {
    pub grid: PhaseSpaceGrid,
    pub hbar: f64,
    pub n: usize,
    scalar: SampledTerm,
    couplings: Vec<(SampledTerm, DMatrix<C64>)>,
    max_speed: f64,
}

impl LiouvillianKernel {
    pub fn new(
        grid: &PhaseSpaceGrid,
        gauge: &GaugePotential,
        hbar: f64,
        n: usize,
        scalar: &HamiltonianTerm,
        couplings: &[(HamiltonianTerm, DMatrix<C64>)],
    ) -> Result<Self> {
        if !(hbar > 0.0) {
            return Err(KhsError::InvalidArgument("hbar must be positive".into()));
        }
        let a = gauge.sample(grid)?;
        let scalar = SampledTerm::new(scalar, grid, &a);
        let couplings: Vec<(SampledTerm, DMatrix<C64>)> = couplings
            .iter()
            .map(|(v, m)| (SampledTerm::new(v, grid, &a), m.clone()))
            .collect();
        let norms: Vec<f64> = couplings.iter().map(|(_, m)| spectral_norm(m)).collect();
        let mut max_speed: f64 = 0.0;
        for i in 0..grid.len() {
            let mut sq = scalar.hq[i].abs();
            let mut sp = scalar.hp[i].abs();
            for ((t, _), nm) in couplings.iter().zip(&norms) {
                sq += nm * t.hq[i].abs();
                sp += nm * t.hp[i].abs();
            }
            max_speed = max_speed.max(sq.hypot(sp));
        }
        Ok(Self {
            grid: grid.clone(),
            hbar,
            n,
            scalar,
            couplings,
            max_speed,
        })
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn cfl_bound(&self, safety: f64) -> f64 {
        if self.max_speed == 0.0 {
            f64::INFINITY
        } else {
            safety * self.grid.dq.min(self.grid.dp) / self.max_speed
        }
    }

    /// iħ{H,Υ} + φ_H Υ, term by term.
    pub fn apply(&self, comps: &[Vec<C64>]) -> Vec<Vec<C64>> {
        assert_eq!(comps.len(), self.n);
        let g = &self.grid;
        let ih = C64::new(0.0, self.hbar);
        let derivs: Vec<(Vec<C64>, Vec<C64>)> = comps.iter().map(|y| (g.d_q(y), g.d_p(y))).collect();
        let s = &self.scalar;
        let mut out: Vec<Vec<C64>> = comps
            .iter()
            .zip(&derivs)
            .map(|(y, (dq, dp))| {
                (0..g.len())
                    .map(|i| ih * (s.hq[i] * dp[i] - s.hp[i] * dq[i]) + s.phase[i] * y[i])
                    .collect()
            })
            .collect();
        for (t, m) in &self.couplings {
            for (beta, (y, (dq, dp))) in comps.iter().zip(&derivs).enumerate() {
                let col: Vec<(usize, C64)> = (0..self.n)
                    .filter(|&alpha| m[(alpha, beta)] != C64::new(0.0, 0.0))
                    .map(|alpha| (alpha, m[(alpha, beta)]))
                    .collect();
                if col.is_empty() {
                    continue;
                }
                for i in 0..g.len() {
                    let v = ih * (t.hq[i] * dp[i] - t.hp[i] * dq[i]) + t.phase[i] * y[i];
                    for &(alpha, c) in &col {
                        out[alpha][i] += c * v;
                    }
                }
            }
        }
        out
    }

    /// ∂tΥ = −(i/ħ)L̂Υ.
    pub fn rhs(&self, comps: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let f = C64::new(0.0, -1.0 / self.hbar);
        let mut out = self.apply(comps);
        for c in &mut out {
            for v in c.iter_mut() {
                *v *= f;
            }
        }
        out
    }

    pub fn rk4(&self, y: &[Vec<C64>], dt: f64) -> Vec<Vec<C64>> {
        rk4_planes(y, dt, |s| self.rhs(s))
    }
}

fn axpy(y: &[Vec<C64>], a: f64, k: &[Vec<C64>]) -> Vec<Vec<C64>> {
    y.iter()
        .zip(k)
        .map(|(yc, kc)| yc.iter().zip(kc).map(|(u, v)| u + v * a).collect())
        .collect()
}

/// One classical RK4 step for a system of planes.
pub(crate) fn rk4_planes<F>(y: &[Vec<C64>], dt: f64, f: F) -> Vec<Vec<C64>>
where
    F: Fn(&[Vec<C64>]) -> Vec<Vec<C64>>,
{
    let k1 = f(y);
    let k2 = f(&axpy(y, 0.5 * dt, &k1));
    let k3 = f(&axpy(y, 0.5 * dt, &k2));
    let k4 = f(&axpy(y, dt, &k3));
    let w = dt / 6.0;
    (0..y.len())
        .map(|c| {
            (0..y[c].len())
                .map(|i| y[c][i] + (k1[c][i] + (k2[c][i] + k3[c][i]) * 2.0 + k4[c][i]) * w)
                .collect()
        })
        .collect()
}

/// D_{αβ} = Υ_αΥ*_β + div(Υ_α Ẑ₋Υ*_β), returned as n² planes (row-major in α, β).
pub(crate) fn density_planes(
    grid: &PhaseSpaceGrid,
    comps: &[Vec<C64>],
    a: &GaugeSample,
    hbar: f64,
) -> Vec<Vec<C64>> {
    let n = comps.len();
    let ih = C64::new(0.0, hbar);
    let derivs: Vec<(Vec<C64>, Vec<C64>)> = comps.iter().map(|y| (grid.d_q(y), grid.d_p(y))).collect();
    let mut out = Vec::with_capacity(n * n);
    for alpha in 0..n {
        for beta in 0..n {
            let (ya, yb) = (&comps[alpha], &comps[beta]);
            let (dqb, dpb) = &derivs[beta];
            let mut wq = Vec::with_capacity(grid.len());
            let mut wp = Vec::with_capacity(grid.len());
            for i in 0..grid.len() {
                let f = yb[i].conj();
                wq.push(ya[i] * (ih * dpb[i].conj() - a.ap[i] * f));
                wp.push(ya[i] * (-ih * dqb[i].conj() + a.aq[i] * f));
            }
            let (dq, dp) = (grid.d_q(&wq), grid.d_p(&wp));
            out.push(
                (0..grid.len())
                    .map(|i| ya[i] * yb[i].conj() + dq[i] + dp[i])
                    .collect(),
            );
        }
    }
    out
}

/// ΥΥ† − div(JA ΥΥ†) + iħ{Υ,Υ†} as n² planes.
pub(crate) fn density_planes_expanded(
    grid: &PhaseSpaceGrid,
    comps: &[Vec<C64>],
    a: &GaugeSample,
    hbar: f64,
) -> Vec<Vec<C64>> {
    let n = comps.len();
    let ih = C64::new(0.0, hbar);
    let derivs: Vec<(Vec<C64>, Vec<C64>)> = comps.iter().map(|y| (grid.d_q(y), grid.d_p(y))).collect();
    let mut out = Vec::with_capacity(n * n);
    for alpha in 0..n {
        for beta in 0..n {
            let (ya, yb) = (&comps[alpha], &comps[beta]);
            let m: Vec<C64> = (0..grid.len()).map(|i| ya[i] * yb[i].conj()).collect();
            // div(JA m) = JA·∇m − m, since curl A = −1; A itself is not periodic.
            let (dq, dp) = (grid.d_q(&m), grid.d_p(&m));
            let (dqa, dpa) = &derivs[alpha];
            let (dqb, dpb) = &derivs[beta];
            out.push(
                (0..grid.len())
                    .map(|i| {
                        let pb = dqa[i] * dpb[i].conj() - dpa[i] * dqb[i].conj();
                        m[i] * 2.0 - a.ap[i] * dq[i] + a.aq[i] * dp[i] + ih * pb
                    })
                    .collect(),
            );
        }
    }
    out
}

fn real_part(grid: &PhaseSpaceGrid, v: &[C64]) -> ScalarField {
    ScalarField::from_raw(grid, v.iter().map(|z| C64::new(z.re, 0.0)).collect())
}

fn scalar_kernel(h: &HamiltonianTerm, g: &GaugePotential, grid: &PhaseSpaceGrid, hbar: f64) -> Result<LiouvillianKernel> {
    LiouvillianKernel::new(grid, g, hbar, 1, h, &[])
}

/// L̂_HΨ = iħ{H,Ψ} + φ_HΨ.
pub fn apply_covariant_liouvillian(
    h: &HamiltonianTerm,
    g: &GaugePotential,
    psi: &ScalarField,
    hbar: f64,
) -> Result<ScalarField> {
    let k = scalar_kernel(h, g, &psi.grid, hbar)?;
    let out = k.apply(std::slice::from_ref(&psi.values));
    Ok(ScalarField::from_raw(&psi.grid, out.into_iter().next().unwrap()))
}

/// L̂_HΨ = HΨ − ∇H·Ẑ₊Ψ, evaluated literally.
pub fn apply_covariant_liouvillian_direct(
    h: &HamiltonianTerm,
    g: &GaugePotential,
    psi: &ScalarField,
    hbar: f64,
) -> Result<ScalarField> {
    let grid = &psi.grid;
    let a = g.sample(grid)?;
    let z = z_plus_scalar(psi, &a, hbar);
    let s = h.sample(grid);
    let v = (0..grid.len())
        .map(|i| s.h[i] * psi.values[i] - (s.hq[i] * z.q.values[i] + s.hp[i] * z.p.values[i]))
        .collect();
    Ok(ScalarField::from_raw(grid, v))
}

/// ρ = |Ψ|² + div(Ψ*Ẑ₊Ψ), real part. Loses accuracy where Ψ has slowly decaying tails.
pub fn clebsch_density_divergence_form(psi: &ScalarField, g: &GaugePotential, hbar: f64) -> Result<ScalarField> {
    let a = g.sample(&psi.grid)?;
    let d = density_planes(&psi.grid, std::slice::from_ref(&psi.values), &a, hbar);
    Ok(real_part(&psi.grid, &d[0]))
}

/// ρ = |Ψ|² − div(JA|Ψ|²) + ħ Im{Ψ*,Ψ}, real part.
pub fn clebsch_density(psi: &ScalarField, g: &GaugePotential, hbar: f64) -> Result<ScalarField> {
    let a = g.sample(&psi.grid)?;
    let d = density_planes_expanded(&psi.grid, std::slice::from_ref(&psi.values), &a, hbar);
    Ok(real_part(&psi.grid, &d[0]))
}

/// ⟨Ψ, L̂_HΨ⟩ including its (ideally vanishing) imaginary part.
pub fn kvh_energy_complex(psi: &ScalarField, h: &HamiltonianTerm, g: &GaugePotential, hbar: f64) -> Result<C64> {
    let l = apply_covariant_liouvillian(h, g, psi, hbar)?;
    Ok(psi.inner(&l))
}

pub fn kvh_energy(psi: &ScalarField, h: &HamiltonianTerm, g: &GaugePotential, hbar: f64) -> Result<f64> {
    Ok(kvh_energy_complex(psi, h, g, hbar)?.re)
}

/// RK4 stepper for the scalar KvH equation with cached samples.
#[derive(Clone, Debug)]
pub struct KvhPropagator {
    kernel: LiouvillianKernel,
    safety: f64,
}

impl KvhPropagator {
    pub fn new(h: &HamiltonianTerm, g: &GaugePotential, grid: &PhaseSpaceGrid, hbar: f64) -> Result<Self> {
        Ok(Self {
            kernel: scalar_kernel(h, g, grid, hbar)?,
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

    pub fn step(&self, psi: &ScalarField, dt: f64) -> Result<ScalarField> {
        if psi.grid != self.kernel.grid {
            return Err(KhsError::GridMismatch);
        }
        if dt == 0.0 {
            return Ok(psi.clone());
        }
        let bound = self.cfl_bound();
        if dt.abs() > bound {
            return Err(KhsError::CflViolation { dt, bound });
        }
        let out = self.kernel.rk4(std::slice::from_ref(&psi.values), dt);
        Ok(ScalarField::from_raw(&psi.grid, out.into_iter().next().unwrap()))
    }

    /// Integrates to time t in ceil(t/dt) equal steps.
    pub fn propagate(&self, psi: &ScalarField, t: f64, dt: f64) -> Result<ScalarField> {
        let steps = (t / dt).abs().ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut cur = psi.clone();
        for _ in 0..steps {
            cur = self.step(&cur, h)?;
        }
        Ok(cur)
    }
}

pub fn step_rk4(h: &HamiltonianTerm, g: &GaugePotential, psi: &ScalarField, dt: f64, hbar: f64) -> Result<ScalarField> {
    KvhPropagator::new(h, g, &psi.grid, hbar)?.step(psi, dt)
}

/// exp(tJS) for the linear flow ż = JSz.
pub fn quadratic_flow(s: [[f64; 2]; 2], t: f64) -> [[f64; 2]; 2] {
    let a = [[s[1][0], s[1][1]], [-s[0][0], -s[0][1]]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let (c, f) = if det > 0.0 {
        let w = det.sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    } else if det < 0.0 {
        let k = (-det).sqrt();
        ((k * t).cosh(), (k * t).sinh() / k)
    } else {
        (1.0, t)
    };
    [
        [c + f * a[0][0], f * a[0][1]],
        [f * a[1][0], c + f * a[1][1]],
    ]
}

pub fn apply_flow(r: &[[f64; 2]; 2], q: f64, p: f64) -> (f64, f64) {
    (r[0][0] * q + r[0][1] * p, r[1][0] * q + r[1][1] * p)
}

/// Ψ(z,t) = Ψ₀(exp(−tJS)z) by bicubic interpolation; the phase function
/// vanishes for homogeneous quadratic H in the harmonic gauge.
pub fn propagate_characteristics(
    h: &HamiltonianTerm,
    g: &GaugePotential,
    psi: &ScalarField,
    t: f64,
    _hbar: f64,
) -> Result<ScalarField> {
    let s = h.quadratic_form().ok_or(KhsError::NonQuadratic)?;
    if g.kind() != GaugeKind::HarmonicOscillator {
        return Err(KhsError::InvalidArgument(
            "characteristics require the harmonic gauge".into(),
        ));
    }
    if t == 0.0 {
        return Ok(psi.clone());
    }
    let back = quadratic_flow(s, -t);
    let it = BicubicInterpolator::new(psi);
    let grid = &psi.grid;
    let values = grid.sample(|q, p| {
        let (x, y) = apply_flow(&back, q, p);
        it.eval(x, y)
    });
    Ok(ScalarField::from_raw(grid, values))
}

#[derive(Clone, Debug)]
pub struct PolarFields {
    pub density: Vec<f64>,
    /// ħ·arg Ψ on the principal branch; zero where masked out.
    pub phase: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn polar_fields(psi: &ScalarField, hbar: f64, threshold: f64) -> PolarFields {
    let density: Vec<f64> = psi.values.iter().map(|v| v.norm_sqr()).collect();
    let max = density.iter().cloned().fold(0.0, f64::max);
    let mask: Vec<bool> = density.iter().map(|&d| d > threshold * max).collect();
    let phase = psi
        .values
        .iter()
        .zip(&mask)
        .map(|(v, &m)| if m { hbar * v.arg() } else { 0.0 })
        .collect();
    PolarFields { density, phase, mask }
}

/// ∇S = ħ Im(Ψ*∇Ψ)/|Ψ|², free of branch jumps; zero where |Ψ| vanishes.
pub fn phase_gradient(psi: &ScalarField, hbar: f64) -> (Vec<f64>, Vec<f64>) {
    let g = &psi.grid;
    let (dq, dp) = (g.d_q(&psi.values), g.d_p(&psi.values));
    let mut sq = Vec::with_capacity(g.len());
    let mut sp = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let d = psi.values[i].norm_sqr();
        if d > 0.0 {
            sq.push(hbar * (psi.values[i].conj() * dq[i]).im / d);
            sp.push(hbar * (psi.values[i].conj() * dp[i]).im / d);
        } else {
            sq.push(0.0);
            sp.push(0.0);
        }
    }
    (sq, sp)
}
