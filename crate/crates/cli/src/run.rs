//! Experiment execution.

use std::path::{Path, PathBuf};

use khs_core::exact::{
    ag_observables, check_thermal_resolution, exact_hybrid_density_field, exact_observables, hybrid_exact_field,
    ExactObservables, ThermalDensity, ThermalState,
};
use khs_core::hybrid::{
    bloch_vector, branch_propagate, classical_density, hybrid_expectation, purity, quantum_density, HybridPropagator,
};
use khs_core::kvh::propagate_characteristics;
use khs_core::phase_space::{integrate, write_snapshot};
use khs_core::{
    ExactModelParams, GaugeKind, GaugePotential, HybridField, HybridHamiltonian, HybridInitialState, KvhPropagator,
    ScalarField,
};
use log::info;

use crate::config::{Experiment, ExperimentConfig, InitialState, Solver};
use crate::observables::{emit_observables_with_comment, emit_pairs, ObservableRow};
use crate::svg::{heatmap, line_plot};
use crate::{CliError, CliResult, VERSION_TAG};

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub rows: Vec<ObservableRow>,
    pub files: Vec<PathBuf>,
    /// Largest max|Υ(t) − Υ₀| (stationarity only).
    pub max_deviation: Option<f64>,
    /// (dt, L² error) pairs (convergence only).
    pub convergence: Vec<(f64, f64)>,
}

struct Tolerances {
    norm: f64,
    energy: f64,
    psd: Option<f64>,
}

impl Tolerances {
    fn for_solver(solver: Solver) -> Self {
        match solver {
            Solver::Exact => Self { norm: 1e-9, energy: 1e-8, psd: Some(1e-10) },
            _ => Self { norm: 1e-5, energy: 1e-5, psd: Some(1e-8) },
        }
    }
}

/// Drift and PSD monitor against the first row.
struct Monitor {
    tol: Tolerances,
    first: Option<ObservableRow>,
    breach: Option<String>,
}

impl Monitor {
    fn new(tol: Tolerances) -> Self {
        Self { tol, first: None, breach: None }
    }

    fn check(&mut self, row: &ObservableRow, min_eig: f64) {
        let first = *self.first.get_or_insert(*row);
        if self.breach.is_some() {
            return;
        }
        let dn = (row.norm - first.norm).abs();
        let de = (row.energy - first.energy).abs();
        if !(dn <= self.tol.norm) {
            self.breach = Some(format!("norm drift {dn:e} exceeds {:e} at t = {}", self.tol.norm, row.t));
        } else if !(de <= self.tol.energy) {
            self.breach = Some(format!("energy drift {de:e} exceeds {:e} at t = {}", self.tol.energy, row.t));
        } else if let Some(psd) = self.tol.psd {
            if !(min_eig >= -psd) {
                self.breach = Some(format!(
                    "quantum density eigenvalue {min_eig:e} below -{psd:e} at t = {}",
                    row.t
                ));
            }
        }
    }
}

fn row_from_exact(o: &ExactObservables) -> CliResult<(ObservableRow, f64)> {
    let r = o.rho.normalized();
    let row = ObservableRow {
        t: o.t,
        norm: o.norm,
        energy: o.energy,
        purity: purity(&r),
        n: bloch_vector(&r)?,
        rho_min: o.rho_min,
        rho_integral: o.rho_integral,
    };
    Ok((row, o.rho.eigenvalues()[0]))
}

fn row_from_field(
    t: f64,
    y: &HybridField,
    h: &HybridHamiltonian,
    g: &GaugePotential,
    hbar: f64,
) -> CliResult<(ObservableRow, f64)> {
    let rho = quantum_density(y);
    let r = rho.normalized();
    let cl = classical_density(y, g, hbar)?;
    let row = ObservableRow {
        t,
        norm: y.norm_sq(),
        energy: hybrid_expectation(h, y, g, hbar)?,
        purity: purity(&r),
        n: bloch_vector(&r)?,
        rho_min: cl.re().iter().cloned().fold(f64::INFINITY, f64::min),
        rho_integral: integrate(&cl).re,
    };
    Ok((row, rho.eigenvalues()[0]))
}

fn initial_state(config: &ExperimentConfig) -> Box<dyn HybridInitialState> {
    match config.initial {
        InitialState::Thermal => Box::new(ThermalState { params: config.model }),
        InitialState::Gaussian => Box::new(config.gaussian_state()),
    }
}

fn uncoupled(params: &ExactModelParams) -> bool {
    params.alpha.iter().all(|a| *a == 0.0)
}

/// Υ(t) from Υ₀ by characteristics or branch diagonalization.
fn evolve_direct(
    config: &ExperimentConfig,
    h: &HybridHamiltonian,
    g: &GaugePotential,
    y0: &HybridField,
    t: f64,
) -> CliResult<HybridField> {
    let hbar = config.model.hbar;
    if !uncoupled(&config.model) {
        return Ok(branch_propagate(h, g, y0, t, hbar, config.dt)?);
    }
    let h0 = config.model.h0_term();
    let comps = y0
        .components()
        .iter()
        .map(|c| {
            if c.sup_norm() == 0.0 {
                Ok(c.clone())
            } else if g.kind() == GaugeKind::HarmonicOscillator {
                propagate_characteristics(&h0, g, c, t, hbar)
            } else {
                KvhPropagator::new(&h0, g, &c.grid, hbar)?.propagate(c, t, config.dt)
            }
        })
        .collect::<khs_core::Result<Vec<ScalarField>>>()?;
    Ok(HybridField::new(comps)?)
}

/// `t = 2.4` gives `0002p400`; no dot, so file extensions stay intact.
fn time_tag(t: f64) -> String {
    format!("{t:08.3}").replace('.', "p")
}

fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{}", time_tag(t))
}

fn write_field_snapshot(dir: &Path, y: &HybridField, t: f64, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let base = dir.join(snapshot_name(t));
    let comps: Vec<&ScalarField> = y.components().iter().collect();
    write_snapshot(&base, &comps, t)?;
    files.push(base.with_extension("bin"));
    files.push(base.with_extension("json"));
    Ok(())
}

fn write_density_heatmap(dir: &Path, rho: &ScalarField, t: f64, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let path = dir.join(format!("density_t{}.svg", time_tag(t)));
    heatmap(
        &path,
        &format!("classical density, t = {t}"),
        &rho.re(),
        rho.grid.nq,
        rho.grid.np,
        128,
    )?;
    files.push(path);
    Ok(())
}

fn write_series_plots(dir: &Path, rows: &[ObservableRow], bloch: bool, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.purity).collect();
    let path = dir.join("purity.svg");
    line_plot(&path, "purity vs time", &ts, &ps, None, Some((0.0, 1.0)))?;
    files.push(path);
    if bloch {
        let ny: Vec<f64> = rows.iter().map(|r| r.n[1]).collect();
        let nz: Vec<f64> = rows.iter().map(|r| r.n[2]).collect();
        let path = dir.join("bloch_yz.svg");
        line_plot(&path, "Bloch vector, n_z vs n_y", &ny, &nz, Some((-1.0, 1.0)), Some((-1.0, 1.0)))?;
        files.push(path);
    }
    Ok(())
}

/// Snapshot times whose nearest sample is t.
fn is_snapshot_time(config: &ExperimentConfig, t: f64) -> Vec<f64> {
    let half = 0.5 * config.sample_interval();
    config
        .snapshot_times
        .iter()
        .cloned()
        .filter(|&ts| ts >= t - half && ts < t + half)
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig, quiet: bool) -> CliResult<RunSummary> {
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let comment = format!("{VERSION_TAG} config-hash={}", config.hash());
    let mut summary = match config.experiment {
        Experiment::Fig2 => run_ag(config, &dir, quiet)?,
        Experiment::Convergence => run_convergence(config, &dir, quiet)?,
        _ => run_hybrid(config, &dir, quiet)?,
    };
    let obs = dir.join("observables.csv");
    emit_observables_with_comment(&summary.rows.0, &obs, Some(&comment))?;
    summary.files.push(obs);
    if let Some(rows) = &summary.deviation {
        let path = dir.join("deviation.csv");
        emit_pairs(&path, "t,max_deviation", rows, Some(&comment))?;
        summary.files.push(path);
    }
    if !summary.convergence.is_empty() {
        let path = dir.join("convergence.csv");
        emit_pairs(&path, "dt,l2_error", &summary.convergence, Some(&comment))?;
        summary.files.push(path);
    }
    if config.emit_plots && config.experiment != Experiment::Convergence {
        write_series_plots(&dir, &summary.rows.0, config.experiment != Experiment::Fig2, &mut summary.files)?;
    }
    if !quiet {
        println!(
            "{}: {} samples written to {}",
            config.experiment.name(),
            summary.rows.0.len(),
            dir.display()
        );
    }
    let out = RunSummary {
        rows: summary.rows.0,
        files: summary.files,
        max_deviation: summary.deviation.as_ref().map(|d| d.iter().map(|v| v.1).fold(0.0, f64::max)),
        convergence: summary.convergence,
    };
    if let Some(msg) = summary.rows.1 {
        return Err(CliError::InvariantBreach(msg));
    }
    if config.experiment == Experiment::Stationarity {
        let dev = out.max_deviation.unwrap_or(0.0);
        if !(dev <= STATIONARITY_TOL) {
            return Err(CliError::InvariantBreach(format!(
                "max |Y(t) - Y0| = {dev:e} exceeds {STATIONARITY_TOL:e}"
            )));
        }
    }
    Ok(out)
}

pub const STATIONARITY_TOL: f64 = 1e-6;

struct Partial {
    /// Rows and the first breach message, if any.
    rows: (Vec<ObservableRow>, Option<String>),
    files: Vec<PathBuf>,
    deviation: Option<Vec<(f64, f64)>>,
    convergence: Vec<(f64, f64)>,
}

fn run_hybrid(config: &ExperimentConfig, dir: &Path, quiet: bool) -> CliResult<Partial> {
    let params = config.model;
    let hbar = params.hbar;
    let grid = config.grid()?;
    let g = config.gauge_potential()?;
    let h = params.hamiltonian();
    let init = initial_state(config);
    if config.initial == InitialState::Thermal {
        check_thermal_resolution(&params, &grid)?;
    }
    let y0 = hybrid_exact_field(&params, init.as_ref(), &grid, 0.0)?;
    let mut monitor = Monitor::new(Tolerances::for_solver(config.solver));
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut deviation = (config.experiment == Experiment::Stationarity).then(Vec::new);
    let propagator = match config.solver {
        Solver::Rk4 => Some(HybridPropagator::new(&h, &g, &grid, hbar)?),
        _ => None,
    };
    let mut y = y0.clone();
    let times = config.sample_times();
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            if let Some(p) = &propagator {
                for _ in 0..config.sample_every {
                    y = p.step(&y, config.dt)?;
                }
            }
        }
        let snaps = if config.emit_snapshots { is_snapshot_time(config, t) } else { Vec::new() };
        let needs_field = config.solver != Solver::Exact || !snaps.is_empty() || deviation.is_some();
        match config.solver {
            Solver::Exact => {
                if needs_field {
                    y = hybrid_exact_field(&params, init.as_ref(), &grid, t)?;
                }
            }
            Solver::Characteristics | Solver::Branch => y = evolve_direct(config, &h, &g, &y0, t)?,
            Solver::Rk4 => {}
        }
        let (row, min_eig) = match config.solver {
            Solver::Exact => row_from_exact(&exact_observables(&params, init.as_ref(), &g, &grid, t)?)?,
            _ => row_from_field(t, &y, &h, &g, hbar)?,
        };
        monitor.check(&row, min_eig);
        if let Some(dev) = deviation.as_mut() {
            let d = y
                .components()
                .iter()
                .zip(y0.components())
                .map(|(a, b)| a.sub(b).sup_norm())
                .fold(0.0, f64::max);
            dev.push((t, d));
        }
        for _ in &snaps {
            write_field_snapshot(dir, &y, t, &mut files)?;
            if config.emit_plots {
                let rho = match config.solver {
                    Solver::Exact => exact_hybrid_density_field(&params, init.as_ref(), &g, &grid, t)?.trace(),
                    _ => classical_density(&y, &g, hbar)?,
                };
                write_density_heatmap(dir, &rho, t, &mut files)?;
            }
        }
        if !quiet && (k % 50 == 0 || k + 1 == times.len()) {
            info!("t = {t:.4}: purity {:.10}, n = {:?}", row.purity, row.n);
        }
        rows.push(row);
        if monitor.breach.is_some() {
            break;
        }
    }
    Ok(Partial {
        rows: (rows, monitor.breach),
        files,
        deviation,
        convergence: Vec::new(),
    })
}

fn run_ag(config: &ExperimentConfig, dir: &Path, quiet: bool) -> CliResult<Partial> {
    let params = config.model;
    let grid = config.grid()?;
    check_thermal_resolution(&params, &grid)?;
    let src = ThermalDensity { params };
    let mut monitor = Monitor::new(Tolerances { norm: 1e-9, energy: 1e-8, psd: None });
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let times = config.sample_times();
    for (k, &t) in times.iter().enumerate() {
        let (row, min_eig) = row_from_exact(&ag_observables(&params, &src, &grid, t)?)?;
        monitor.check(&row, min_eig);
        if config.emit_snapshots && !is_snapshot_time(config, t).is_empty() {
            let d = khs_core::exact::ag_exact_field(&params, &src, &grid, t)?;
            let comps = d
                .entries
                .iter()
                .map(|e| ScalarField::new(&grid, e.clone()))
                .collect::<khs_core::Result<Vec<_>>>()?;
            let refs: Vec<&ScalarField> = comps.iter().collect();
            let base = dir.join(snapshot_name(t));
            write_snapshot(&base, &refs, t)?;
            files.push(base.with_extension("bin"));
            files.push(base.with_extension("json"));
            if config.emit_plots {
                write_density_heatmap(dir, &d.trace(), t, &mut files)?;
            }
        }
        if !quiet && (k % 100 == 0 || k + 1 == times.len()) {
            info!("t = {t:.1}: AG purity {:.10}", row.purity);
        }
        rows.push(row);
        if monitor.breach.is_some() {
            break;
        }
    }
    Ok(Partial {
        rows: (rows, monitor.breach),
        files,
        deviation: None,
        convergence: Vec::new(),
    })
}

/// RK4 against the exact solution at t_final for dt, dt/2, dt/4.
fn run_convergence(config: &ExperimentConfig, _dir: &Path, quiet: bool) -> CliResult<Partial> {
    let params = config.model;
    let hbar = params.hbar;
    let grid = config.grid()?;
    let g = config.gauge_potential()?;
    let h = params.hamiltonian();
    let init = initial_state(config);
    if config.initial == InitialState::Thermal {
        check_thermal_resolution(&params, &grid)?;
    }
    let y0 = hybrid_exact_field(&params, init.as_ref(), &grid, 0.0)?;
    let reference = hybrid_exact_field(&params, init.as_ref(), &grid, config.t_final)?;
    let prop = HybridPropagator::new(&h, &g, &grid, hbar)?;
    let mut convergence = Vec::new();
    let mut finest = y0.clone();
    for k in 0..3 {
        let dt = config.dt / f64::powi(2.0, k);
        finest = prop.propagate(&y0, config.t_final, dt)?;
        let err = finest.l2_distance(&reference);
        if !quiet {
            info!("dt = {dt:e}: L2 error {err:e}");
        }
        convergence.push((dt, err));
    }
    let mut monitor = Monitor::new(Tolerances::for_solver(Solver::Rk4));
    let mut rows = Vec::new();
    for (t, y) in [(0.0, &y0), (config.t_final, &finest)] {
        let (row, min_eig) = row_from_field(t, y, &h, &g, hbar)?;
        monitor.check(&row, min_eig);
        rows.push(row);
    }
    Ok(Partial {
        rows: (rows, monitor.breach),
        files: Vec::new(),
        deviation: None,
        convergence,
    })
}
