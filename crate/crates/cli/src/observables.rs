//! Observable series and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::{CliError, CliResult};

pub const CSV_HEADER: &str = "t,norm,energy,purity,n_x,n_y,n_z,rho_min,rho_integral";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservableRow {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub purity: f64,
    pub n: [f64; 3],
    pub rho_min: f64,
    pub rho_integral: f64,
}

impl ObservableRow {
    fn values(&self) -> [f64; 9] {
        [
            self.t,
            self.norm,
            self.energy,
            self.purity,
            self.n[0],
            self.n[1],
            self.n[2],
            self.rho_min,
            self.rho_integral,
        ]
    }
}

/// 15 significant digits in scientific notation.
pub fn format_value(x: f64) -> String {
    format!("{x:.14e}")
}

pub fn format_observables(series: &[ObservableRow], comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(CSV_HEADER);
    s.push('\n');
    for row in series {
        let cells: Vec<String> = row.values().iter().map(|&v| format_value(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn emit_observables(series: &[ObservableRow], path: &Path) -> CliResult<()> {
    emit_observables_with_comment(series, path, None)
}

pub fn emit_observables_with_comment(series: &[ObservableRow], path: &Path, comment: Option<&str>) -> CliResult<()> {
    if series.is_empty() {
        return Err(CliError::Config("observable series is empty".into()));
    }
    std::fs::write(path, format_observables(series, comment))?;
    Ok(())
}

/// Parses an observables file; `#` lines are skipped.
pub fn parse_observables(text: &str) -> CliResult<Vec<ObservableRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(CliError::Config(format!(
                "unexpected header `{}`",
                other.unwrap_or("")
            )))
        }
    }
    lines
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|_| CliError::Config(format!("bad cell `{c}`"))))
                .collect::<CliResult<_>>()?;
            if v.len() != 9 {
                return Err(CliError::Config(format!("expected 9 columns, got {}", v.len())));
            }
            Ok(ObservableRow {
                t: v[0],
                norm: v[1],
                energy: v[2],
                purity: v[3],
                n: [v[4], v[5], v[6]],
                rho_min: v[7],
                rho_integral: v[8],
            })
        })
        .collect()
}

/// Two-column CSV for auxiliary series such as stationarity deviations.
pub fn emit_pairs(path: &Path, header: &str, rows: &[(f64, f64)], comment: Option<&str>) -> CliResult<()> {
    let mut s = String::new();
    if let Some(c) = comment {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(header);
    s.push('\n');
    for (a, b) in rows {
        let _ = writeln!(s, "{},{}", format_value(*a), format_value(*b));
    }
    std::fs::write(path, s)?;
    Ok(())
}
