//! Invariant suite for a configured model.

use khs_core::exact::{
    ag_exact_field, check_thermal_resolution, diagonalize_coupling, exact_hybrid_density_field, exact_observables,
    hybrid_exact_field, thermal_initial_state, GaussianState, ThermalDensity, ThermalState,
};
use khs_core::hybrid::{apply_hybrid_liouvillian, hybrid_density, hybrid_density_divergence_form, pauli_dot};
use khs_core::kvh::clebsch_density;
use khs_core::{CMatrix, GaugePotential, C64};

use crate::config::ExperimentConfig;
use crate::CliResult;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<44} {:>12.3e} {:>10.1e}  {}",
            self.name,
            self.value,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

pub fn verify(config: &ExperimentConfig) -> CliResult<Vec<CheckResult>> {
    config.validate()?;
    let params = config.model;
    let hbar = params.hbar;
    let grid = config.grid()?;
    let g = config.gauge_potential()?;
    let harmonic = GaugePotential::harmonic();
    let h = params.hamiltonian();
    let mut out = Vec::new();

    let resolved = check_thermal_resolution(&params, &grid);
    out.push(CheckResult::new("grid resolves the thermal state", if resolved.is_ok() { 0.0 } else { 1.0 }, 0.0));
    if let Err(e) = resolved {
        log::warn!("{e}");
        return Ok(out);
    }

    let y0 = thermal_initial_state(&params, &grid)?;
    let rho = clebsch_density(y0.component(0), &harmonic, hbar)?;
    let peak = params.omega * params.beta / (2.0 * std::f64::consts::PI);
    let mut worst: f64 = 0.0;
    for i in 0..grid.len() {
        let (q, p) = grid.node(i);
        let want = peak * (-params.beta * params.h0(q, p)).exp();
        if want > 1e-6 * peak {
            worst = worst.max((rho.values[i].re - want).abs());
        }
    }
    out.push(CheckResult::new("thermal density is Boltzmann (sup rel)", worst / peak, 1e-8));

    let (sq, sp) = params.thermal_widths();
    let gauss = |c: (f64, f64), k: (f64, f64), s: [C64; 2]| GaussianState {
        center: (c.0 * sq, c.1 * sp),
        widths: (sq, sp),
        wavevector: (k.0 / sq, k.1 / sp),
        spinor: s,
    };
    let a = hybrid_exact_field(
        &params,
        &gauss((0.5, -0.3), (0.7, 0.2), [C64::new(0.8, 0.0), C64::new(0.3, 0.5)]),
        &grid,
        0.0,
    )?;
    let b = hybrid_exact_field(
        &params,
        &gauss((-0.4, 0.6), (-0.2, 0.9), [C64::new(0.1, -0.4), C64::new(0.9, 0.0)]),
        &grid,
        0.0,
    )?;
    let la = apply_hybrid_liouvillian(&h, &g, &a, hbar)?;
    let lb = apply_hybrid_liouvillian(&h, &g, &b, hbar)?;
    let herm = (a.inner(&lb) - la.inner(&b)).norm() / (la.norm_sq() * lb.norm_sq()).sqrt().max(1.0);
    out.push(CheckResult::new("Liouvillian Hermiticity", herm, 1e-10));

    let d1 = hybrid_density(&a, &g, hbar)?;
    let d2 = hybrid_density_divergence_form(&a, &g, hbar)?;
    out.push(CheckResult::new(
        "hybrid density two-form agreement (rel)",
        d1.sub(&d2).sup_norm() / d1.sup_norm(),
        1e-10,
    ));

    if params.alpha.iter().any(|x| *x != 0.0) {
        let d = diagonalize_coupling(params.alpha)?;
        let u = d.u_matrix();
        let m = &u * pauli_dot(params.alpha) * u.adjoint();
        let (l, z) = (C64::new(d.lambda, 0.0), C64::new(0.0, 0.0));
        let target = CMatrix::from_row_slice(2, 2, &[l, z, z, -l]);
        out.push(CheckResult::new("coupling diagonalization", (m - target).norm(), 1e-12));
    }

    let init = ThermalState { params };
    let o0 = exact_observables(&params, &init, &g, &grid, 0.0)?;
    let o1 = exact_observables(&params, &init, &g, &grid, config.t_final)?;
    out.push(CheckResult::new("exact norm drift", (o1.norm - o0.norm).abs(), 1e-9));
    out.push(CheckResult::new("exact energy drift", (o1.energy - o0.energy).abs(), 1e-8));
    out.push(CheckResult::new("quantum density PSD (-min eigenvalue)", -o1.rho.eigenvalues()[0], 1e-10));

    let hy = exact_hybrid_density_field(&params, &init, &harmonic, &grid, config.t_final)?.trace();
    let ag = ag_exact_field(&params, &ThermalDensity { params }, &grid, config.t_final)?.trace();
    out.push(CheckResult::new(
        "hybrid vs AG classical density (sup rel)",
        hy.sub(&ag).sup_norm() / ag.sup_norm(),
        1e-6,
    ));
    Ok(out)
}
