//! Uniform periodic phase-space grids, complex fields and spectral calculus.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{KhsError, Result};

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

struct Plans {
    fwd_q: Arc<dyn Fft<f64>>,
    inv_q: Arc<dyn Fft<f64>>,
    fwd_p: Arc<dyn Fft<f64>>,
    inv_p: Arc<dyn Fft<f64>>,
    kq: Vec<f64>,
    kp: Vec<f64>,
}

/// Wavenumbers for a periodic axis of length 2l; the Nyquist entry is zero.
fn wavenumbers(n: usize, l: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let m = if k < n / 2 {
                k as f64
            } else if k == n / 2 {
                0.0
            } else {
                k as f64 - n as f64
            };
            std::f64::consts::PI * m / l
        })
        .collect()
}

fn signed_mode(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[derive(Clone)]
pub struct PhaseSpaceGrid {
    pub nq: usize,
    pub np: usize,
    pub lq: f64,
    pub lp: f64,
    pub dq: f64,
    pub dp: f64,
    plans: Arc<Plans>,
}

impl fmt::Debug for PhaseSpaceGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseSpaceGrid")
            .field("nq", &self.nq)
            .field("np", &self.np)
            .field("lq", &self.lq)
            .field("lp", &self.lp)
            .finish()
    }
}

impl PartialEq for PhaseSpaceGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.plans, &other.plans)
            || (self.nq == other.nq
                && self.np == other.np
                && self.lq == other.lq
                && self.lp == other.lp)
    }
}

pub fn make_grid(nq: usize, np: usize, lq: f64, lp: f64) -> Result<PhaseSpaceGrid> {
    PhaseSpaceGrid::new(nq, np, lq, lp)
}

impl PhaseSpaceGrid {
    pub fn new(nq: usize, np: usize, lq: f64, lp: f64) -> Result<Self> {
        for (name, n) in [("nq", nq), ("np", np)] {
            if n < 8 || n % 2 != 0 {
                return Err(KhsError::InvalidGrid(format!(
                    "{name} = {n} must be even and at least 8"
                )));
            }
        }
        for (name, l) in [("lq", lq), ("lp", lp)] {
            if !(l > 0.0) || !l.is_finite() {
                return Err(KhsError::InvalidGrid(format!("{name} = {l} must be positive")));
            }
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            fwd_q: planner.plan_fft_forward(nq),
            inv_q: planner.plan_fft_inverse(nq),
            fwd_p: planner.plan_fft_forward(np),
            inv_p: planner.plan_fft_inverse(np),
            kq: wavenumbers(nq, lq),
            kp: wavenumbers(np, lp),
        };
        Ok(Self {
            nq,
            np,
            lq,
            lp,
            dq: 2.0 * lq / nq as f64,
            dp: 2.0 * lp / np as f64,
            plans: Arc::new(plans),
        })
    }

    pub fn len(&self) -> usize {
        self.nq * self.np
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q(&self, j: usize) -> f64 {
        -self.lq + j as f64 * self.dq
    }

    pub fn p(&self, k: usize) -> f64 {
        -self.lp + k as f64 * self.dp
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.np + k
    }

    /// Coordinates of the node with flat index `i`.
    #[inline]
    pub fn node(&self, i: usize) -> (f64, f64) {
        (self.q(i / self.np), self.p(i % self.np))
    }

    pub fn cell_area(&self) -> f64 {
        self.dq * self.dp
    }

    pub fn sample<F: Fn(f64, f64) -> C64>(&self, f: F) -> Vec<C64> {
        (0..self.len())
            .map(|i| {
                let (q, p) = self.node(i);
                f(q, p)
            })
            .collect()
    }

    pub fn sample_real<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (q, p) = self.node(i);
                f(q, p)
            })
            .collect()
    }

    fn check_len(&self, n: usize) {
        assert_eq!(n, self.len(), "plane length does not match the grid");
    }

    /// Spectral ∂/∂p of a plane.
    pub fn d_p(&self, f: &[C64]) -> Vec<C64> {
        self.check_len(f.len());
        let mut buf = f.to_vec();
        self.plans.fwd_p.process(&mut buf);
        let scale = 1.0 / self.np as f64;
        for row in buf.chunks_mut(self.np) {
            for (v, &k) in row.iter_mut().zip(&self.plans.kp) {
                *v *= I * (k * scale);
            }
        }
        self.plans.inv_p.process(&mut buf);
        buf
    }

    /// Spectral ∂/∂q of a plane.
    pub fn d_q(&self, f: &[C64]) -> Vec<C64> {
        self.check_len(f.len());
        let (nq, np) = (self.nq, self.np);
        let mut buf = transpose(f, nq, np);
        self.plans.fwd_q.process(&mut buf);
        let scale = 1.0 / nq as f64;
        for col in buf.chunks_mut(nq) {
            for (v, &k) in col.iter_mut().zip(&self.plans.kq) {
                *v *= I * (k * scale);
            }
        }
        self.plans.inv_q.process(&mut buf);
        transpose(&buf, np, nq)
    }

    /// Zero all modes with |m| > n/3 along either axis.
    pub fn dealias(&self, f: &mut [C64]) {
        self.check_len(f.len());
        let (nq, np) = (self.nq, self.np);
        let cq = (nq / 3) as i64;
        let cp = (np / 3) as i64;
        self.plans.fwd_p.process(f);
        let mut t = transpose(f, nq, np);
        self.plans.fwd_q.process(&mut t);
        let scale = 1.0 / (nq * np) as f64;
        for (kp, col) in t.chunks_mut(nq).enumerate() {
            let mp = signed_mode(kp, np).abs();
            for (kq, v) in col.iter_mut().enumerate() {
                let mq = signed_mode(kq, nq).abs();
                if mq > cq || mp > cp {
                    *v = C64::new(0.0, 0.0);
                } else {
                    *v *= scale;
                }
            }
        }
        self.plans.inv_q.process(&mut t);
        let back = transpose(&t, np, nq);
        f.copy_from_slice(&back);
        self.plans.inv_p.process(f);
    }

    /// max |f| on the outer ring of nodes relative to max |f| overall.
    pub fn boundary_ratio(&self, f: &[C64]) -> f64 {
        self.check_len(f.len());
        let total = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if total == 0.0 {
            return 0.0;
        }
        let mut edge: f64 = 0.0;
        for j in 0..self.nq {
            for k in 0..self.np {
                if j == 0 || k == 0 || j == self.nq - 1 || k == self.np - 1 {
                    edge = edge.max(f[self.index(j, k)].norm());
                }
            }
        }
        edge / total
    }

    pub fn warn_if_boundary(&self, what: &str, f: &[C64]) {
        let r = self.boundary_ratio(f);
        if r > 1e-10 {
            log::warn!("{what}: boundary amplitude ratio {r:.3e} exceeds 1e-10");
        }
    }
}

fn transpose(f: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); f.len()];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = f[r * cols + c];
                }
            }
        }
    }
    out
}

/// Deterministic pairwise summation.
pub fn pairwise_sum<T>(xs: &[T]) -> T
where
    T: Copy + Default + std::ops::Add<Output = T>,
{
    if xs.len() <= 64 {
        return xs.iter().fold(T::default(), |a, &b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: PhaseSpaceGrid,
    pub values: Vec<C64>,
}

impl ScalarField {
    pub fn new(grid: &PhaseSpaceGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KhsError::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(KhsError::NonFinite);
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_raw(grid: &PhaseSpaceGrid, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &PhaseSpaceGrid) -> Self {
        Self::from_raw(grid, vec![C64::new(0.0, 0.0); grid.len()])
    }

    pub fn from_fn<F: Fn(f64, f64) -> C64>(grid: &PhaseSpaceGrid, f: F) -> Self {
        Self::from_raw(grid, grid.sample(f))
    }

    pub fn from_real_fn<F: Fn(f64, f64) -> f64>(grid: &PhaseSpaceGrid, f: F) -> Self {
        Self::from_raw(grid, grid.sample(|q, p| C64::new(f(q, p), 0.0)))
    }

    pub fn from_real(grid: &PhaseSpaceGrid, v: &[f64]) -> Self {
        Self::from_raw(grid, v.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    pub fn conj(&self) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|v| v.conj()).collect())
    }

    pub fn abs_sq(&self) -> Self {
        Self::from_raw(
            &self.grid,
            self.values.iter().map(|v| C64::new(v.norm_sqr(), 0.0)).collect(),
        )
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        Self::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        Self::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        Self::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        )
    }

    /// ⟨self, other⟩ = ∫ self* · other.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.grid, other.grid);
        let prod: Vec<C64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .collect();
        pairwise_sum(&prod) * self.grid.cell_area()
    }

    pub fn norm_sq(&self) -> f64 {
        let prod: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        pairwise_sum(&prod) * self.grid.cell_area()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn dealiased(&self) -> Self {
        let mut v = self.values.clone();
        self.grid.dealias(&mut v);
        Self::from_raw(&self.grid, v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub q: ScalarField,
    pub p: ScalarField,
}

impl VectorField {
    pub fn new(q: ScalarField, p: ScalarField) -> Result<Self> {
        if q.grid != p.grid {
            return Err(KhsError::GridMismatch);
        }
        Ok(Self { q, p })
    }

    /// J(a, b) = (b, −a).
    pub fn symplectic(&self) -> Self {
        Self {
            q: self.p.clone(),
            p: self.q.scale(C64::new(-1.0, 0.0)),
        }
    }
}

pub fn spectral_gradient(f: &ScalarField) -> VectorField {
    let g = &f.grid;
    VectorField {
        q: ScalarField::from_raw(g, g.d_q(&f.values)),
        p: ScalarField::from_raw(g, g.d_p(&f.values)),
    }
}

pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    if v.q.grid != v.p.grid {
        return Err(KhsError::GridMismatch);
    }
    let g = &v.q.grid;
    let a = g.d_q(&v.q.values);
    let b = g.d_p(&v.p.values);
    Ok(ScalarField::from_raw(
        g,
        a.iter().zip(&b).map(|(x, y)| x + y).collect(),
    ))
}

pub fn poisson_bracket(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    poisson_bracket_with(f, g, false)
}

/// {f,g} = ∂q f ∂p g − ∂p f ∂q g, optionally with 2/3-rule dealiasing.
pub fn poisson_bracket_with(f: &ScalarField, g: &ScalarField, dealias: bool) -> Result<ScalarField> {
    if f.grid != g.grid {
        return Err(KhsError::GridMismatch);
    }
    let grid = &f.grid;
    let (mut fq, mut fp) = (grid.d_q(&f.values), grid.d_p(&f.values));
    let (mut gq, mut gp) = (grid.d_q(&g.values), grid.d_p(&g.values));
    if dealias {
        for v in [&mut fq, &mut fp, &mut gq, &mut gp] {
            grid.dealias(v);
        }
    }
    let mut out: Vec<C64> = (0..grid.len())
        .map(|i| fq[i] * gp[i] - fp[i] * gq[i])
        .collect();
    if dealias {
        grid.dealias(&mut out);
    }
    Ok(ScalarField::from_raw(grid, out))
}

pub fn integrate(f: &ScalarField) -> C64 {
    pairwise_sum(&f.values) * f.grid.cell_area()
}

pub fn integrate_real(grid: &PhaseSpaceGrid, f: &[f64]) -> f64 {
    pairwise_sum(f) * grid.cell_area()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub nq: usize,
    pub np: usize,
    pub lq: f64,
    pub lp: f64,
    pub components: usize,
    pub time: f64,
}

/// Writes `<base>.bin` (per component: real plane, then imaginary plane) and `<base>.json`.
pub fn write_snapshot(base: &Path, components: &[&ScalarField], time: f64) -> Result<()> {
    let first = components
        .first()
        .ok_or_else(|| KhsError::InvalidArgument("snapshot needs a component".into()))?;
    let grid = &first.grid;
    if components.iter().any(|c| c.grid != *grid) {
        return Err(KhsError::GridMismatch);
    }
    let mut bytes = Vec::with_capacity(components.len() * grid.len() * 16);
    for c in components {
        for v in &c.values {
            bytes.extend_from_slice(&v.re.to_le_bytes());
        }
        for v in &c.values {
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    fs::File::create(base.with_extension("bin"))?.write_all(&bytes)?;
    let meta = SnapshotMeta {
        nq: grid.nq,
        np: grid.np,
        lq: grid.lq,
        lp: grid.lp,
        components: components.len(),
        time,
    };
    fs::write(base.with_extension("json"), serde_json::to_string(&meta)?)?;
    Ok(())
}

pub fn read_snapshot(base: &Path) -> Result<(SnapshotMeta, Vec<ScalarField>)> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
    let grid = PhaseSpaceGrid::new(meta.nq, meta.np, meta.lq, meta.lp)?;
    let mut bytes = Vec::new();
    fs::File::open(base.with_extension("bin"))?.read_to_end(&mut bytes)?;
    let n = grid.len();
    if bytes.len() != meta.components * n * 16 {
        return Err(KhsError::DimensionMismatch {
            expected: meta.components * n * 16,
            got: bytes.len(),
        });
    }
    let read = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let mut out = Vec::with_capacity(meta.components);
    for c in 0..meta.components {
        let base_off = c * n * 16;
        let values = (0..n)
            .map(|i| C64::new(read(base_off + 8 * i), read(base_off + 8 * (n + i))))
            .collect();
        out.push(ScalarField::new(&grid, values)?);
    }
    Ok((meta, out))
}

/// Periodic Hermite bicubic interpolation from spectrally computed nodal
/// values, first derivatives and the mixed derivative.
#[derive(Clone, Debug)]
pub struct BicubicInterpolator {
    grid: PhaseSpaceGrid,
    f: Vec<C64>,
    fq: Vec<C64>,
    fp: Vec<C64>,
    fqp: Vec<C64>,
}

#[inline]
fn hermite(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2],
        [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t],
    )
}

impl BicubicInterpolator {
    pub fn new(field: &ScalarField) -> Self {
        let g = &field.grid;
        let fq = g.d_q(&field.values);
        let fp = g.d_p(&field.values);
        let fqp = g.d_p(&fq);
        Self {
            grid: g.clone(),
            f: field.values.clone(),
            fq,
            fp,
            fqp,
        }
    }

    fn locate(n: usize, x: f64) -> (usize, usize, f64) {
        let x = x.rem_euclid(n as f64);
        let j = x.floor();
        let t = x - j;
        let j = (j as usize) % n;
        (j, (j + 1) % n, t)
    }

    /// Value and gradient (∂q, ∂p) at an arbitrary point, wrapping periodically.
    pub fn eval_with_gradient(&self, q: f64, p: f64) -> (C64, C64, C64) {
        let g = &self.grid;
        let (j0, j1, tx) = Self::locate(g.nq, (q + g.lq) / g.dq);
        let (k0, k1, ty) = Self::locate(g.np, (p + g.lp) / g.dp);
        let (hx, dhx) = hermite(tx);
        let (hy, dhy) = hermite(ty);
        let (dq, dp) = (g.dq, g.dp);
        let mut v = C64::new(0.0, 0.0);
        let mut vq = C64::new(0.0, 0.0);
        let mut vp = C64::new(0.0, 0.0);
        for (a, j) in [(0usize, j0), (1, j1)] {
            for (b, k) in [(0usize, k0), (1, k1)] {
                let i = g.index(j, k);
                let (x0, x1, dx0, dx1) = (hx[2 * a], hx[2 * a + 1] * dq, dhx[2 * a], dhx[2 * a + 1] * dq);
                let (y0, y1, dy0, dy1) = (hy[2 * b], hy[2 * b + 1] * dp, dhy[2 * b], dhy[2 * b + 1] * dp);
                let (f, fq, fp, fqp) = (self.f[i], self.fq[i], self.fp[i], self.fqp[i]);
                v += f * (x0 * y0) + fq * (x1 * y0) + fp * (x0 * y1) + fqp * (x1 * y1);
                vq += (f * (dx0 * y0) + fq * (dx1 * y0) + fp * (dx0 * y1) + fqp * (dx1 * y1)) / dq;
                vp += (f * (x0 * dy0) + fq * (x1 * dy0) + fp * (x0 * dy1) + fqp * (x1 * dy1)) / dp;
            }
        }
        (v, vq, vp)
    }

    pub fn eval(&self, q: f64, p: f64) -> C64 {
        self.eval_with_gradient(q, p).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sup(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn grid_layout() {
        let g = make_grid(8, 8, 1.0, 1.0).unwrap();
        assert_eq!(g.dq, 0.25);
        assert_eq!(g.dp, 0.25);
        assert_eq!(g.node(0), (-1.0, -1.0));
        let g = make_grid(256, 256, 0.05, 0.05).unwrap();
        assert!((g.dq - 3.90625e-4).abs() < 1e-18);
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(make_grid(7, 8, 1.0, 1.0).is_err());
        assert!(make_grid(6, 8, 1.0, 1.0).is_err());
        assert!(make_grid(8, 8, 0.0, 1.0).is_err());
        assert!(make_grid(8, 8, 1.0, -2.0).is_err());
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = make_grid(16, 16, 1.0, 2.0).unwrap();
        let f = ScalarField::from_fn(&g, |_, _| C64::new(3.0, -1.0));
        let d = spectral_gradient(&f);
        assert!(d.q.sup_norm() < 1e-13 && d.p.sup_norm() < 1e-13);
    }

    #[test]
    fn gradient_of_mode() {
        let g = make_grid(64, 64, 1.3, 1.0).unwrap();
        let l = g.lq;
        let f = ScalarField::from_real_fn(&g, |q, _| (PI * q / l).sin());
        let d = spectral_gradient(&f);
        let want = g.sample(|q, _| c(PI / l * (PI * q / l).cos()));
        assert!(sup(&d.q.values, &want) <= 1e-12);
        assert!(d.p.sup_norm() <= 1e-12);
    }

    #[test]
    fn gradient_of_gaussian() {
        let g = make_grid(128, 128, 1.0, 1.0).unwrap();
        let f = ScalarField::from_real_fn(&g, |q, p| (-50.0 * (q * q + p * p)).exp());
        let d = spectral_gradient(&f);
        let wq = g.sample(|q, p| c(-100.0 * q * (-50.0 * (q * q + p * p)).exp()));
        let wp = g.sample(|q, p| c(-100.0 * p * (-50.0 * (q * q + p * p)).exp()));
        assert!(sup(&d.q.values, &wq) <= 1e-10);
        assert!(sup(&d.p.values, &wp) <= 1e-10);
    }

    #[test]
    fn gradient_of_real_field_is_real() {
        let g = make_grid(32, 48, 1.0, 1.5).unwrap();
        let f = ScalarField::from_real_fn(&g, |q, p| (3.0 * q).sin() * (p * p).cos() + q);
        let d = spectral_gradient(&f);
        let imax = d.q.im().iter().chain(d.p.im().iter()).fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(imax <= 1e-13, "{imax}");
    }

    #[test]
    fn divergence_examples() {
        let g = make_grid(64, 64, 1.0, 2.0).unwrap();
        let k = ScalarField::from_fn(&g, |_, _| c(2.5));
        let v = VectorField::new(k.clone(), k).unwrap();
        assert!(divergence(&v).unwrap().sup_norm() < 1e-13);

        let l = g.lq;
        let s = ScalarField::from_real_fn(&g, |q, _| (PI * q / l).sin());
        let v = VectorField::new(s, ScalarField::zeros(&g)).unwrap();
        let want = g.sample(|q, _| c(PI / l * (PI * q / l).cos()));
        assert!(sup(&divergence(&v).unwrap().values, &want) <= 1e-12);
    }

    #[test]
    fn divergence_is_sum_of_one_dimensional_derivatives() {
        let g = make_grid(64, 64, 1.0, 1.0).unwrap();
        let (lq, lp) = (g.lq, g.lp);
        let a = ScalarField::from_real_fn(&g, |q, p| (PI * q / lq).sin() * (2.0 * PI * p / lp).cos());
        let b = ScalarField::from_real_fn(&g, |q, p| (PI * q / lq).cos() * (PI * p / lp).sin());
        let want = g.sample(|q, p| {
            c(PI / lq * (PI * q / lq).cos() * (2.0 * PI * p / lp).cos()
                + PI / lp * (PI * q / lq).cos() * (PI * p / lp).cos())
        });
        let d = divergence(&VectorField::new(a, b).unwrap()).unwrap();
        assert!(sup(&d.values, &want) <= 1e-11);
    }

    #[test]
    fn divergence_rejects_mismatch() {
        let g1 = make_grid(8, 8, 1.0, 1.0).unwrap();
        let g2 = make_grid(8, 10, 1.0, 1.0).unwrap();
        let v = VectorField {
            q: ScalarField::zeros(&g1),
            p: ScalarField::zeros(&g2),
        };
        assert!(divergence(&v).is_err());
        assert!(poisson_bracket(&v.q, &v.p).is_err());
    }

    #[test]
    fn bracket_examples() {
        let g = make_grid(64, 64, 1.0, 1.5).unwrap();
        let (lq, lp) = (g.lq, g.lp);
        let f = ScalarField::from_real_fn(&g, |q, _| (PI * q / lq).sin());
        let h = ScalarField::from_real_fn(&g, |_, p| (PI * p / lp).cos());
        assert!(poisson_bracket(&f, &f).unwrap().sup_norm() < 1e-13);
        let b = poisson_bracket(&f, &h).unwrap();
        let want = g.sample(|q, p| c(-(PI * PI / (lq * lp)) * (PI * q / lq).cos() * (PI * p / lp).sin()));
        assert!(sup(&b.values, &want) <= 1e-12);
    }

    fn band_limited(g: &PhaseSpaceGrid, coeffs: &[(i32, i32, f64, f64)]) -> ScalarField {
        let (lq, lp) = (g.lq, g.lp);
        ScalarField::from_fn(g, |q, p| {
            coeffs
                .iter()
                .map(|&(a, b, re, im)| {
                    let ph = PI * (a as f64 * q / lq + b as f64 * p / lp);
                    C64::new(re, im) * C64::from_polar(1.0, ph)
                })
                .sum()
        })
    }

    #[test]
    fn jacobi_identity() {
        let g = make_grid(128, 128, 1.0, 1.0).unwrap();
        let f = band_limited(&g, &[(1, 0, 1.0, 0.0), (2, -1, 0.3, 0.1)]);
        let h = band_limited(&g, &[(0, 1, 0.7, 0.0), (-1, 3, 0.2, -0.4)]);
        let k = band_limited(&g, &[(1, 1, 0.5, 0.2), (3, 0, -0.1, 0.0)]);
        let pb = |a: &ScalarField, b: &ScalarField| poisson_bracket_with(a, b, true).unwrap();
        let r = pb(&f, &pb(&h, &k)).add(&pb(&h, &pb(&k, &f))).add(&pb(&k, &pb(&f, &h)));
        let scale = pb(&f, &pb(&h, &k)).sup_norm();
        assert!(r.sup_norm() <= 1e-10 * scale.max(1.0), "{}", r.sup_norm());
    }

    #[test]
    fn integrate_examples() {
        let g = make_grid(128, 128, 1.0, 1.0).unwrap();
        let one = ScalarField::from_fn(&g, |_, _| c(1.0));
        assert!((integrate(&one).re - 4.0).abs() < 1e-13);
        let gauss = ScalarField::from_real_fn(&g, |q, p| 50.0 / PI * (-50.0 * (q * q + p * p)).exp());
        assert!((integrate(&gauss).re - 1.0).abs() <= 1e-12);
        let odd = ScalarField::from_real_fn(&g, |q, p| q * (-50.0 * (q * q + p * p)).exp());
        assert!(integrate(&odd).norm() <= 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(8, 10, 1.0, 2.0).unwrap();
        let a = ScalarField::from_fn(&g, |q, p| C64::new(q, p));
        let b = ScalarField::from_fn(&g, |q, p| C64::new(q * p, -1.0));
        let base = dir.path().join("snap");
        write_snapshot(&base, &[&a, &b], 2.4).unwrap();
        let (meta, comps) = read_snapshot(&base).unwrap();
        assert_eq!(meta.components, 2);
        assert_eq!(meta.time, 2.4);
        assert_eq!(comps[0].values, a.values);
        assert_eq!(comps[1].values, b.values);
        let bytes = std::fs::read(base.with_extension("bin")).unwrap();
        assert_eq!(bytes.len(), 2 * 80 * 16);
        assert_eq!(f64::from_le_bytes(bytes[0..8].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(bytes[80 * 8..80 * 8 + 8].try_into().unwrap()), -2.0);
    }

    #[test]
    fn boundary_ratio_flags_wide_fields() {
        let g = make_grid(32, 32, 1.0, 1.0).unwrap();
        let narrow = g.sample(|q, p| c((-200.0 * (q * q + p * p)).exp()));
        let wide = g.sample(|q, p| c((-(q * q + p * p)).exp()));
        assert!(g.boundary_ratio(&narrow) < 1e-10);
        assert!(g.boundary_ratio(&wide) > 0.1);
    }

    #[test]
    fn bicubic_reproduces_nodes_and_smooth_fields() {
        let g = make_grid(64, 64, 2.0, 2.0).unwrap();
        let f = ScalarField::from_fn(&g, |q, p| C64::from_polar((-3.0 * (q * q + p * p)).exp(), q - 0.5 * p));
        let it = BicubicInterpolator::new(&f);
        let (q, p) = g.node(1234);
        assert!((it.eval(q, p) - f.values[1234]).norm() < 1e-15);
        let exact = |q: f64, p: f64| C64::from_polar((-3.0 * (q * q + p * p)).exp(), q - 0.5 * p);
        let mut worst: f64 = 0.0;
        for &(q, p) in &[(0.013, -0.27), (0.41, 0.33), (-0.7, 0.05), (0.2, -0.61)] {
            worst = worst.max((it.eval(q, p) - exact(q, p)).norm());
        }
        assert!(worst < 1e-5, "{worst}");
        // periodic wrap
        assert!((it.eval(2.0 - 1e-3, 0.1) - it.eval(-2.0 - 1e-3, 0.1)).norm() < 1e-15);
        let (_, vq, vp) = it.eval_with_gradient(0.1, 0.2);
        let h = 1e-6;
        let fdq = (it.eval(0.1 + h, 0.2) - it.eval(0.1 - h, 0.2)) / (2.0 * h);
        let fdp = (it.eval(0.1, 0.2 + h) - it.eval(0.1, 0.2 - h)) / (2.0 * h);
        assert!((vq - fdq).norm() < 1e-7 && (vp - fdp).norm() < 1e-7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bracket_is_antisymmetric(a in -2i32..3, b in -2i32..3, x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let g = make_grid(32, 32, 1.0, 1.0).unwrap();
            let f = band_limited(&g, &[(a, b, x, y), (1, 2, 0.5, 0.0)]);
            let h = band_limited(&g, &[(b, a, y, x), (-1, 1, 0.0, 0.3)]);
            let fg = poisson_bracket(&f, &h).unwrap();
            let gf = poisson_bracket(&h, &f).unwrap();
            prop_assert!(fg.add(&gf).sup_norm() <= 1e-14 * fg.sup_norm().max(1.0) * 10.0);
        }

        #[test]
        fn bracket_leibniz_rule(a in -2i32..3, b in -2i32..3, x in -1.0f64..1.0) {
            let g = make_grid(64, 64, 1.0, 1.0).unwrap();
            let f = band_limited(&g, &[(a, b, x, 0.2), (0, 1, 1.0, 0.0)]);
            let h = band_limited(&g, &[(1, -1, 0.4, 0.0), (b, 0, 0.3, x)]);
            let k = band_limited(&g, &[(2, 1, 0.6, -0.1)]);
            let pb = |u: &ScalarField, v: &ScalarField| poisson_bracket_with(u, v, true).unwrap();
            let lhs = pb(&f, &h.mul(&k));
            let rhs = h.mul(&pb(&f, &k)).add(&pb(&f, &h).mul(&k));
            prop_assert!(lhs.sub(&rhs).sup_norm() <= 1e-10 * lhs.sup_norm().max(1.0));
        }

        #[test]
        fn divergence_integrates_to_zero(x0 in -0.3f64..0.3, p0 in -0.3f64..0.3, w in 20.0f64..80.0) {
            let g = make_grid(96, 96, 1.0, 1.0).unwrap();
            let vq = ScalarField::from_fn(&g, |q, p| C64::new(q, 1.0) * (-w * ((q - x0).powi(2) + (p - p0).powi(2))).exp());
            let vp = ScalarField::from_fn(&g, |q, p| C64::new(p * q, -0.5) * (-w * ((q + p0).powi(2) + (p - x0).powi(2))).exp());
            let d = divergence(&VectorField::new(vq, vp).unwrap()).unwrap();
            prop_assert!(integrate(&d).norm() <= 1e-12);
        }
    }
}
