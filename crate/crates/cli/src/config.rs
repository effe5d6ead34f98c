//! `key=value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use khs_core::exact::GaussianState;
use khs_core::{ExactModelParams, GaugePotential, PhaseSpaceGrid, C64};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Fig1,
    Fig2,
    Stationarity,
    Convergence,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Stationarity => "stationarity",
            Self::Convergence => "convergence",
            Self::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "fig1" => Self::Fig1,
            "fig2" => Self::Fig2,
            "stationarity" => Self::Stationarity,
            "convergence" => Self::Convergence,
            "custom" => Self::Custom,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Exact,
    Characteristics,
    Rk4,
    Branch,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Characteristics => "characteristics",
            Self::Rk4 => "rk4",
            Self::Branch => "branch",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "exact" => Self::Exact,
            "characteristics" => Self::Characteristics,
            "rk4" => Self::Rk4,
            "branch" => Self::Branch,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    Thermal,
    Gaussian,
}

impl InitialState {
    pub fn name(self) -> &'static str {
        match self {
            Self::Thermal => "thermal",
            Self::Gaussian => "gaussian",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ExactModelParams,
    pub nq: Option<usize>,
    pub np: Option<usize>,
    pub lq: Option<f64>,
    pub lp: Option<f64>,
    pub gauge: String,
    pub solver: Solver,
    pub initial: InitialState,
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    pub output_dir: PathBuf,
    pub emit_snapshots: bool,
    pub snapshot_times: Vec<f64>,
    pub emit_plots: bool,
    pub seed: u64,
}

pub const KEYS: &[&str] = &[
    "experiment",
    "m",
    "omega",
    "alpha",
    "beta",
    "hbar",
    "nq",
    "np",
    "lq",
    "lp",
    "gauge",
    "solver",
    "initial",
    "dt",
    "t_final",
    "sample_every",
    "output_dir",
    "emit_snapshots",
    "snapshot_times",
    "emit_plots",
    "seed",
];

impl ExperimentConfig {
    /// Defaults for a named experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            model: ExactModelParams::default(),
            nq: None,
            np: None,
            lq: None,
            lp: None,
            gauge: "harmonic".into(),
            solver: Solver::Exact,
            initial: InitialState::Thermal,
            dt: 0.02,
            t_final: 10.0,
            sample_every: 1,
            output_dir: PathBuf::from("out"),
            emit_snapshots: false,
            snapshot_times: Vec::new(),
            emit_plots: true,
            seed: 0,
        };
        match experiment {
            Experiment::Fig1 => {
                c.emit_snapshots = true;
                c.snapshot_times = vec![0.0, 2.4, 5.7, 8.8];
            }
            Experiment::Fig2 => {
                c.dt = 1.0;
                c.t_final = 2000.0;
            }
            Experiment::Stationarity => {
                c.model.alpha = [0.0; 3];
                c.dt = 0.1;
            }
            Experiment::Convergence => {
                c.solver = Solver::Rk4;
                c.initial = InitialState::Gaussian;
                c.dt = 1.6e-3;
                c.t_final = 1.0;
                c.nq = Some(256);
                c.np = Some(256);
                c.emit_plots = false;
            }
            Experiment::Custom => {}
        }
        c
    }

    /// Grid from explicit keys, falling back to the model default for the rest.
    pub fn grid(&self) -> CliResult<PhaseSpaceGrid> {
        let base = self.model.default_grid()?;
        let (sq, sp) = self.model.thermal_widths();
        let (dlq, dlp) = match self.experiment {
            Experiment::Convergence => (20.0 * sq, 20.0 * sp),
            _ => (base.lq, base.lp),
        };
        Ok(PhaseSpaceGrid::new(
            self.nq.unwrap_or(base.nq),
            self.np.unwrap_or(base.np),
            self.lq.unwrap_or(dlq),
            self.lp.unwrap_or(dlp),
        )?)
    }

    pub fn gauge_potential(&self) -> CliResult<GaugePotential> {
        Ok(GaugePotential::from_key(&self.gauge)?)
    }

    /// Displaced Gaussian used when `initial=gaussian`.
    pub fn gaussian_state(&self) -> GaussianState {
        let (sq, sp) = self.model.thermal_widths();
        GaussianState {
            center: (3.0 * sq, 0.0),
            widths: (sq, sp),
            wavevector: (0.0, 0.0),
            spinor: [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        }
    }

    /// Sample interval dt·sample_every.
    pub fn sample_interval(&self) -> f64 {
        self.dt * self.sample_every as f64
    }

    /// Sample times k·dt·sample_every up to t_final.
    pub fn sample_times(&self) -> Vec<f64> {
        let h = self.sample_interval();
        let n = (self.t_final / h + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * h).collect()
    }

    /// Every key except `output_dir`, in fixed order, floats in shortest round-trip form.
    pub fn canonical(&self) -> String {
        let m = &self.model;
        let opt_u = |v: Option<usize>| v.map_or("default".to_string(), |x| x.to_string());
        let opt_f = |v: Option<f64>| v.map_or("default".to_string(), |x| format!("{x:e}"));
        let times: Vec<String> = self.snapshot_times.iter().map(|t| format!("{t:e}")).collect();
        let mut s = String::new();
        let _ = writeln!(s, "experiment={}", self.experiment.name());
        let _ = writeln!(s, "m={:e}", m.m);
        let _ = writeln!(s, "omega={:e}", m.omega);
        let _ = writeln!(s, "alpha={:e},{:e},{:e}", m.alpha[0], m.alpha[1], m.alpha[2]);
        let _ = writeln!(s, "beta={:e}", m.beta);
        let _ = writeln!(s, "hbar={:e}", m.hbar);
        let _ = writeln!(s, "nq={}", opt_u(self.nq));
        let _ = writeln!(s, "np={}", opt_u(self.np));
        let _ = writeln!(s, "lq={}", opt_f(self.lq));
        let _ = writeln!(s, "lp={}", opt_f(self.lp));
        let _ = writeln!(s, "gauge={}", self.gauge);
        let _ = writeln!(s, "solver={}", self.solver.name());
        let _ = writeln!(s, "initial={}", self.initial.name());
        let _ = writeln!(s, "dt={:e}", self.dt);
        let _ = writeln!(s, "t_final={:e}", self.t_final);
        let _ = writeln!(s, "sample_every={}", self.sample_every);
        let _ = writeln!(s, "emit_snapshots={}", self.emit_snapshots);
        let _ = writeln!(s, "snapshot_times={}", times.join(","));
        let _ = writeln!(s, "emit_plots={}", self.emit_plots);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// First 16 hex digits of SHA-256 over the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |key: &str, msg: &str| {
            Err(CliError::InvalidValue {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", "dt must be positive");
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad("t_final", "t_final must be nonnegative");
        }
        if self.sample_every < 1 {
            return bad("sample_every", "sample_every must be at least 1");
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0) || *t > self.t_final) {
            return bad("snapshot_times", "snapshot times must lie in [0, t_final]");
        }
        self.model.validate()?;
        self.gauge_potential()?;
        if self.experiment == Experiment::Fig2 && self.solver != Solver::Exact {
            return bad("solver", "fig2 uses the exact AG solution only");
        }
        if self.solver == Solver::Characteristics && self.gauge != "harmonic" {
            return bad("solver", "characteristics require the harmonic gauge");
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str) -> CliResult<f64> {
    let x: f64 = v.trim().parse().map_err(|_| CliError::InvalidValue {
        key: key.into(),
        msg: format!("`{v}` is not a number"),
    })?;
    if !x.is_finite() {
        return Err(CliError::InvalidValue {
            key: key.into(),
            msg: format!("`{v}` is not finite"),
        });
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> CliResult<usize> {
    v.trim().parse().map_err(|_| CliError::InvalidValue {
        key: key.into(),
        msg: format!("`{v}` is not a nonnegative integer"),
    })
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::InvalidValue {
            key: key.into(),
            msg: format!("`{v}` is not a boolean"),
        }),
    }
}

fn parse_list(key: &str, v: &str) -> CliResult<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_f64(key, x)).collect()
}

pub fn parse_config_str(text: &str) -> CliResult<ExperimentConfig> {
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    let mut order = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Syntax {
            line: n + 1,
            text: raw.to_string(),
        })?;
        let k = k.trim().to_string();
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::UnknownKey(k));
        }
        if pairs.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::DuplicateKey(k));
        }
        order.push(k);
    }
    let name = pairs.get("experiment").ok_or(CliError::MissingExperiment)?;
    let experiment = Experiment::parse(name).ok_or_else(|| CliError::InvalidValue {
        key: "experiment".into(),
        msg: format!("unknown experiment `{name}`"),
    })?;
    let mut c = ExperimentConfig::defaults(experiment);
    for key in &order {
        let v = pairs[key].as_str();
        let k = key.as_str();
        match k {
            "experiment" => {}
            "m" => c.model.m = parse_f64(k, v)?,
            "omega" => c.model.omega = parse_f64(k, v)?,
            "alpha" => {
                let xs = parse_list(k, v)?;
                let arr: [f64; 3] = xs.try_into().map_err(|_| CliError::InvalidValue {
                    key: k.into(),
                    msg: "expected three comma-separated components".into(),
                })?;
                c.model.alpha = arr;
            }
            "beta" => c.model.beta = parse_f64(k, v)?,
            "hbar" => c.model.hbar = parse_f64(k, v)?,
            "nq" => c.nq = Some(parse_usize(k, v)?),
            "np" => c.np = Some(parse_usize(k, v)?),
            "lq" => c.lq = Some(parse_f64(k, v)?),
            "lp" => c.lp = Some(parse_f64(k, v)?),
            "gauge" => {
                GaugePotential::from_key(v).map_err(|_| CliError::InvalidValue {
                    key: k.into(),
                    msg: format!("unknown gauge `{v}` (liouville, harmonic)"),
                })?;
                c.gauge = v.to_string();
            }
            "solver" => {
                c.solver = Solver::parse(v).ok_or_else(|| CliError::InvalidValue {
                    key: k.into(),
                    msg: format!("unknown solver `{v}` (exact, characteristics, rk4, branch)"),
                })?
            }
            "initial" => {
                c.initial = match v {
                    "thermal" => InitialState::Thermal,
                    "gaussian" => InitialState::Gaussian,
                    _ => {
                        return Err(CliError::InvalidValue {
                            key: k.into(),
                            msg: format!("unknown initial state `{v}` (thermal, gaussian)"),
                        })
                    }
                }
            }
            "dt" => c.dt = parse_f64(k, v)?,
            "t_final" => c.t_final = parse_f64(k, v)?,
            "sample_every" => c.sample_every = parse_usize(k, v)?,
            "output_dir" => c.output_dir = PathBuf::from(v),
            "emit_snapshots" => c.emit_snapshots = parse_bool(k, v)?,
            "snapshot_times" => c.snapshot_times = parse_list(k, v)?,
            "emit_plots" => c.emit_plots = parse_bool(k, v)?,
            "seed" => {
                c.seed = v.parse().map_err(|_| CliError::InvalidValue {
                    key: k.into(),
                    msg: format!("`{v}` is not a nonnegative integer"),
                })?
            }
            _ => unreachable!("keys are checked against KEYS"),
        }
    }
    if !pairs.contains_key("snapshot_times") {
        // preset times past a shortened horizon are dropped
        let t_final = c.t_final;
        c.snapshot_times.retain(|t| *t <= t_final);
    }
    c.validate()?;
    Ok(c)
}

pub fn parse_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}
