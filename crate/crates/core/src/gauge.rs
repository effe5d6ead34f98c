//! Symplectic potentials A(z), the operators Ẑ± and the phase function φ_H.

use std::fmt;
use std::sync::Arc;

use crate::error::{KhsError, Result};
use crate::hamiltonian::HamiltonianTerm;
use crate::hybrid::HybridField;
use crate::phase_space::{PhaseSpaceGrid, ScalarField, VectorField, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaugeKind {
    Liouville,
    HarmonicOscillator,
    Custom,
}

/// A and its Jacobian at a point; `jac[i][j] = ∂_j A_i` with index 0 = q, 1 = p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaugeJet {
    pub aq: f64,
    pub ap: f64,
    pub jac: [[f64; 2]; 2],
}

impl GaugeJet {
    /// ∂q A_p − ∂p A_q, which must equal −1.
    pub fn curl(&self) -> f64 {
        self.jac[1][0] - self.jac[0][1]
    }

    /// JA = (A_p, −A_q).
    pub fn ja(&self) -> (f64, f64) {
        (self.ap, -self.aq)
    }

    /// ∂_j (JA)_i.
    pub fn ja_jac(&self) -> [[f64; 2]; 2] {
        [
            [self.jac[1][0], self.jac[1][1]],
            [-self.jac[0][0], -self.jac[0][1]],
        ]
    }

    pub fn div_ja(&self) -> f64 {
        self.jac[1][0] - self.jac[0][1]
    }
}

type JetFn = dyn Fn(f64, f64) -> GaugeJet + Send + Sync;

#[derive(Clone)]
pub struct GaugePotential {
    kind: GaugeKind,
    custom: Option<Arc<JetFn>>,
}

impl fmt::Debug for GaugePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GaugePotential({:?})", self.kind)
    }
}

const CURL_TOL: f64 = 1e-10;

/// Nodewise samples of A and JA.
#[derive(Clone, Debug)]
pub struct GaugeSample {
    pub aq: Vec<f64>,
    pub ap: Vec<f64>,
}

impl GaugePotential {
    pub fn liouville() -> Self {
        Self {
            kind: GaugeKind::Liouville,
            custom: None,
        }
    }

    pub fn harmonic() -> Self {
        Self {
            kind: GaugeKind::HarmonicOscillator,
            custom: None,
        }
    }

    /// A custom potential with analytic Jacobian. The curl constraint and the
    /// Jacobian are spot-checked here and checked again on every sampled node.
    pub fn custom<F>(jet: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> GaugeJet + Send + Sync + 'static,
    {
        let g = Self {
            kind: GaugeKind::Custom,
            custom: Some(Arc::new(jet)),
        };
        for &(q, p) in &[(0.0, 0.0), (0.3, -0.2), (-0.8, 0.6), (1.4, 1.1)] {
            let j = g.jet(q, p);
            let residual = (j.curl() + 1.0).abs();
            if residual > CURL_TOL {
                return Err(KhsError::CurlViolation { residual });
            }
            let h = 1e-5 * (1.0 + f64::max(q.abs(), p.abs()));
            let (xp, xm) = (g.jet(q + h, p), g.jet(q - h, p));
            let (yp, ym) = (g.jet(q, p + h), g.jet(q, p - h));
            let fd = [
                [(xp.aq - xm.aq) / (2.0 * h), (yp.aq - ym.aq) / (2.0 * h)],
                [(xp.ap - xm.ap) / (2.0 * h), (yp.ap - ym.ap) / (2.0 * h)],
            ];
            let scale = j.jac.iter().flatten().fold(1e-8f64, |a, b| a.max(b.abs()));
            let err = (0..4).fold(0.0f64, |a, k| a.max((fd[k / 2][k % 2] - j.jac[k / 2][k % 2]).abs()));
            if err > 1e-6 * scale {
                return Err(KhsError::GradientMismatch { rel: err / scale });
            }
        }
        Ok(g)
    }

    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "liouville" => Ok(Self::liouville()),
            "harmonic" => Ok(Self::harmonic()),
            other => Err(KhsError::InvalidArgument(format!("unknown gauge '{other}'"))),
        }
    }

    pub fn kind(&self) -> GaugeKind {
        self.kind
    }

    #[inline]
    pub fn jet(&self, q: f64, p: f64) -> GaugeJet {
        match self.kind {
            GaugeKind::Liouville => GaugeJet {
                aq: p,
                ap: 0.0,
                jac: [[0.0, 1.0], [0.0, 0.0]],
            },
            GaugeKind::HarmonicOscillator => GaugeJet {
                aq: 0.5 * p,
                ap: -0.5 * q,
                jac: [[0.0, 0.5], [-0.5, 0.0]],
            },
            GaugeKind::Custom => (self.custom.as_ref().expect("custom gauge evaluator"))(q, p),
        }
    }

    pub fn sample(&self, grid: &PhaseSpaceGrid) -> Result<GaugeSample> {
        let n = grid.len();
        let (mut aq, mut ap) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let (q, p) = grid.node(i);
            let j = self.jet(q, p);
            worst = worst.max((j.curl() + 1.0).abs());
            aq.push(j.aq);
            ap.push(j.ap);
        }
        if worst > CURL_TOL {
            return Err(KhsError::CurlViolation { residual: worst });
        }
        Ok(GaugeSample { aq, ap })
    }
}

pub fn evaluate_gauge(g: &GaugePotential, grid: &PhaseSpaceGrid) -> Result<VectorField> {
    let s = g.sample(grid)?;
    VectorField::new(
        ScalarField::from_real(grid, &s.aq),
        ScalarField::from_real(grid, &s.ap),
    )
}

/// Ẑ₊Ψ = (−iħ∂pΨ − A_pΨ, iħ∂qΨ + A_qΨ) for one component.
pub fn z_plus_scalar(psi: &ScalarField, a: &GaugeSample, hbar: f64) -> VectorField {
    let grid = &psi.grid;
    let (dq, dp) = (grid.d_q(&psi.values), grid.d_p(&psi.values));
    let ih = C64::new(0.0, hbar);
    let zq = (0..grid.len()).map(|i| -ih * dp[i] - a.ap[i] * psi.values[i]).collect();
    let zp = (0..grid.len()).map(|i| ih * dq[i] + a.aq[i] * psi.values[i]).collect();
    VectorField {
        q: ScalarField::from_raw(grid, zq),
        p: ScalarField::from_raw(grid, zp),
    }
}

/// Ẑ₋F = (iħ∂pF − A_pF, −iħ∂qF + A_qF) for one component.
pub fn z_minus_scalar(f: &ScalarField, a: &GaugeSample, hbar: f64) -> VectorField {
    let grid = &f.grid;
    let (dq, dp) = (grid.d_q(&f.values), grid.d_p(&f.values));
    let ih = C64::new(0.0, hbar);
    let zq = (0..grid.len()).map(|i| ih * dp[i] - a.ap[i] * f.values[i]).collect();
    let zp = (0..grid.len()).map(|i| -ih * dq[i] + a.aq[i] * f.values[i]).collect();
    VectorField {
        q: ScalarField::from_raw(grid, zq),
        p: ScalarField::from_raw(grid, zp),
    }
}

fn apply_componentwise(
    psi: &HybridField,
    g: &GaugePotential,
    hbar: f64,
    op: fn(&ScalarField, &GaugeSample, f64) -> VectorField,
) -> Result<[HybridField; 2]> {
    let a = g.sample(psi.grid())?;
    let (mut zq, mut zp) = (Vec::new(), Vec::new());
    for c in psi.components() {
        let v = op(c, &a, hbar);
        zq.push(v.q);
        zp.push(v.p);
    }
    Ok([HybridField::new(zq)?, HybridField::new(zp)?])
}

pub fn apply_z_plus(psi: &HybridField, g: &GaugePotential, hbar: f64) -> Result<[HybridField; 2]> {
    apply_componentwise(psi, g, hbar, z_plus_scalar)
}

pub fn apply_z_minus(f: &HybridField, g: &GaugePotential, hbar: f64) -> Result<[HybridField; 2]> {
    apply_componentwise(f, g, hbar, z_minus_scalar)
}

/// φ_H = H + ∇H·JA at a point.
#[inline]
pub fn phase_at(h: f64, hq: f64, hp: f64, jet: &GaugeJet) -> f64 {
    h + hq * jet.ap - hp * jet.aq
}

pub fn phase_function(h: &HamiltonianTerm, g: &GaugePotential, grid: &PhaseSpaceGrid) -> ScalarField {
    ScalarField::from_real_fn(grid, |q, p| {
        let (hq, hp) = h.gradient(q, p);
        phase_at(h.value(q, p), hq, hp, &g.jet(q, p))
    })
}
