//! Matrix weight fields and their Muckenhoupt-type characteristics.
//!
//! All suprema over cubes run over the dyadic family of the grid, so every
//! reported characteristic is a lower bound of the quantity taken over all
//! cubes. Essential suprema are maxima over samples.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CubeWindow, DyadicCube, TorusGrid, MAX_DIM};
use crate::matrix::{matrix_power, operator_norm, product_norm, CMatrix, HermitianPd};

/// One matrix entry in JSON: either a real number or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> Complex64 {
        match self {
            Entry::Real(r) => Complex64::new(r, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Generator description for a [`MatrixWeightField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Identity,
    Constant {
        matrix: Vec<Vec<Entry>>,
    },
    /// `diag(dist(x, center)^{a_1}, ..., dist(x, center)^{a_m})`.
    DiagonalPower {
        exponents: Vec<f64>,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// Diagonal power weight conjugated by a rotation of angle
    /// `pi * rate * x_1` in the first coordinate plane. Integer rates keep
    /// the field continuous across the periodic seam.
    Rotating {
        exponents: Vec<f64>,
        #[serde(default)]
        center: Vec<f64>,
        rate: f64,
    },
    /// `dist(x, center)^a * I_m`.
    Scalar {
        exponents: Vec<f64>,
        #[serde(default)]
        center: Vec<f64>,
    },
}

impl WeightSpec {
    pub fn constant(matrix: &HermitianPd) -> Self {
        let a = matrix.as_matrix();
        let rows = (0..a.nrows())
            .map(|i| {
                (0..a.ncols())
                    .map(|j| {
                        let z = a[(i, j)];
                        if z.im == 0.0 {
                            Entry::Real(z.re)
                        } else {
                            Entry::Complex([z.re, z.im])
                        }
                    })
                    .collect()
            })
            .collect();
        WeightSpec::Constant { matrix: rows }
    }

    pub fn exponents(&self) -> &[f64] {
        match self {
            WeightSpec::DiagonalPower { exponents, .. }
            | WeightSpec::Rotating { exponents, .. }
            | WeightSpec::Scalar { exponents, .. } => exponents,
            _ => &[],
        }
    }

    /// Classical power-weight admissibility for the class at exponent `p`:
    /// `a in (-n, n(p-1))` for `p > 1`, `a in (-n, 0]` for `p <= 1`.
    pub fn admissible_for(&self, n: usize, p: f64) -> bool {
        let n = n as f64;
        self.exponents().iter().all(|&a| {
            if p > 1.0 {
                a > -n && a < n * (p - 1.0)
            } else {
                a > -n && a <= 0.0
            }
        })
    }
}

/// Pointwise positive definite matrices on a torus grid.
#[derive(Clone, Debug)]
pub struct MatrixWeightField {
    grid: TorusGrid,
    m: usize,
    values: Vec<HermitianPd>,
}

impl MatrixWeightField {
    pub fn from_values(grid: TorusGrid, values: Vec<HermitianPd>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} matrices for {} samples",
                values.len(),
                grid.len()
            )));
        }
        let m = values[0].dim();
        if values.iter().any(|v| v.dim() != m) {
            return Err(Error::ShapeMismatch("mixed matrix sizes".into()));
        }
        Ok(Self { grid, m, values })
    }

    pub fn constant(grid: TorusGrid, w: HermitianPd) -> Self {
        let m = w.dim();
        Self {
            grid,
            m,
            values: vec![w; grid.len()],
        }
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn at(&self, i: usize) -> &HermitianPd {
        &self.values[i]
    }

    pub fn values(&self) -> &[HermitianPd] {
        &self.values
    }

    /// Pointwise map, e.g. scaling or conjugation.
    pub fn try_map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&HermitianPd) -> Result<HermitianPd> + Sync + Send,
    {
        let values = self.values.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: self.grid,
            m: self.m,
            values,
        })
    }

    /// `W(x - tau)` for a grid shift `tau` in samples.
    pub fn translated(&self, shift: [i64; MAX_DIM]) -> Self {
        let values = (0..self.grid.len())
            .map(|i| {
                self.values[self.grid.translate_index(i, [-shift[0], -shift[1]])].clone()
            })
            .collect();
        Self {
            grid: self.grid,
            m: self.m,
            values,
        }
    }

    /// Cached `W^{1/p}` and `W^{-1/p}` at every sample.
    pub fn powers(&self, p: f64) -> Result<WeightPowers> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::config("p", "must be a positive finite number"));
        }
        let pairs = self
            .values
            .par_iter()
            .map(|w| {
                let root = matrix_power(w, 1.0 / p)?.into_matrix();
                let inv = matrix_power(w, -1.0 / p)?.into_matrix();
                Ok((root, inv))
            })
            .collect::<Result<Vec<_>>>()?;
        let (root, inv_root) = pairs.into_iter().unzip();
        Ok(WeightPowers {
            grid: self.grid,
            m: self.m,
            p,
            root,
            inv_root,
        })
    }

    /// Pointwise `W^{-p'/p}`, the dual weight for exponent `p > 1`.
    pub fn dual(&self, p: f64) -> Result<Self> {
        let pp = conjugate_exponent(p);
        self.try_map(|w| matrix_power(w, -pp / p))
    }
}

/// `W^{1/p}` and `W^{-1/p}` at every sample for one exponent `p`.
#[derive(Clone, Debug)]
pub struct WeightPowers {
    grid: TorusGrid,
    m: usize,
    p: f64,
    root: Vec<CMatrix>,
    inv_root: Vec<CMatrix>,
}

impl WeightPowers {
    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }
    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }
    /// `W^{1/p}(x_i)`.
    #[inline]
    pub fn root(&self, i: usize) -> &CMatrix {
        &self.root[i]
    }
    /// `W^{-1/p}(x_i)`.
    #[inline]
    pub fn inv_root(&self, i: usize) -> &CMatrix {
        &self.inv_root[i]
    }
}

/// Hoelder conjugate `p/(p-1)`.
pub fn conjugate_exponent(p: f64) -> f64 {
    p / (p - 1.0)
}

fn center_point(grid: &TorusGrid, center: &[f64]) -> Result<[f64; MAX_DIM]> {
    let n = grid.dim();
    let mut c = [0.0; MAX_DIM];
    if center.is_empty() {
        return Ok(c);
    }
    if center.len() != n {
        return Err(Error::config("center", format!("expected {n} coordinates")));
    }
    let side = grid.side() as f64;
    for a in 0..n {
        let s = center[a] * side;
        if !s.is_finite() || (s - s.round()).abs() > 1e-9 {
            return Err(Error::config("center", "must lie on the grid"));
        }
        c[a] = center[a].rem_euclid(1.0);
    }
    Ok(c)
}

fn check_exponents(exponents: &[f64], m: usize, n: usize, exact_len: bool) -> Result<()> {
    if exact_len && exponents.len() != m {
        return Err(Error::config(
            "exponents",
            format!("expected {m} exponents, got {}", exponents.len()),
        ));
    }
    if exponents.is_empty() {
        return Err(Error::config("exponents", "empty"));
    }
    for &a in exponents {
        if !a.is_finite() {
            return Err(Error::config("exponents", "non-finite"));
        }
        if a <= -(n as f64) {
            return Err(Error::InadmissibleExponent(a));
        }
    }
    Ok(())
}

/// Torus distance to `center` with the singular sample moved to half a
/// grid spacing.
fn regularized_dist(grid: &TorusGrid, i: usize, center: [f64; MAX_DIM]) -> f64 {
    let d = grid.dist_to_point(i, center);
    if d < 0.25 * grid.spacing() {
        0.5 * grid.spacing()
    } else {
        d
    }
}

fn rotation(m: usize, theta: f64) -> CMatrix {
    let mut r = CMatrix::identity(m, m);
    if m >= 2 {
        let (s, c) = theta.sin_cos();
        r[(0, 0)] = Complex64::new(c, 0.0);
        r[(0, 1)] = Complex64::new(-s, 0.0);
        r[(1, 0)] = Complex64::new(s, 0.0);
        r[(1, 1)] = Complex64::new(c, 0.0);
    }
    r
}

/// Build a weight field from `spec`.
pub fn generate_weight(spec: &WeightSpec, grid: TorusGrid, m: usize) -> Result<MatrixWeightField> {
    if m == 0 {
        return Err(Error::config("m", "must be positive"));
    }
    let n = grid.dim();
    let diag_at = |exponents: &[f64], center: [f64; MAX_DIM], i: usize| -> Result<Vec<f64>> {
        let d = regularized_dist(&grid, i, center);
        let vals: Vec<f64> = exponents.iter().map(|&a| d.powf(a)).collect();
        if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Overflow);
        }
        Ok(vals)
    };
    match spec {
        WeightSpec::Identity => Ok(MatrixWeightField::constant(grid, HermitianPd::identity(m))),
        WeightSpec::Constant { matrix } => {
            if matrix.len() != m || matrix.iter().any(|r| r.len() != m) {
                return Err(Error::config("matrix", format!("expected {m}x{m}")));
            }
            let a = DMatrix::from_fn(m, m, |i, j| matrix[i][j].value());
            Ok(MatrixWeightField::constant(grid, HermitianPd::new(a)?))
        }
        WeightSpec::DiagonalPower { exponents, center } => {
            check_exponents(exponents, m, n, true)?;
            let c = center_point(&grid, center)?;
            let values = (0..grid.len())
                .map(|i| HermitianPd::from_diagonal(&diag_at(exponents, c, i)?))
                .collect::<Result<Vec<_>>>()?;
            MatrixWeightField::from_values(grid, values)
        }
        WeightSpec::Scalar { exponents, center } => {
            check_exponents(exponents, m, n, false)?;
            let c = center_point(&grid, center)?;
            let values = (0..grid.len())
                .map(|i| {
                    let v = diag_at(&exponents[..1], c, i)?[0];
                    HermitianPd::from_diagonal(&vec![v; m])
                })
                .collect::<Result<Vec<_>>>()?;
            MatrixWeightField::from_values(grid, values)
        }
        WeightSpec::Rotating {
            exponents,
            center,
            rate,
        } => {
            check_exponents(exponents, m, n, true)?;
            if !rate.is_finite() {
                return Err(Error::config("rate", "non-finite"));
            }
            let c = center_point(&grid, center)?;
            let values = (0..grid.len())
                .map(|i| {
                    let d = diag_at(exponents, c, i)?;
                    let theta = std::f64::consts::PI * rate * grid.point(i)[0];
                    let r = rotation(m, theta);
                    let mut dm = CMatrix::zeros(m, m);
                    for (k, v) in d.iter().enumerate() {
                        dm[(k, k)] = Complex64::new(*v, 0.0);
                    }
                    HermitianPd::new(&r * dm * r.transpose())
                })
                .collect::<Result<Vec<_>>>()?;
            MatrixWeightField::from_values(grid, values)
        }
    }
}

/// One scanned cube of an A_p scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApRow {
    pub level: u32,
    pub cube_index: usize,
    pub bracket: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApReport {
    pub p: f64,
    pub value: f64,
    pub argmax: (u32, usize),
    pub rows: Vec<ApRow>,
}

impl ApReport {
    /// Largest bracket per level.
    pub fn level_maxima(&self) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((l, v)) if *l == r.level => *v = v.max(r.bracket),
                _ => out.push((r.level, r.bracket)),
            }
        }
        out
    }

    /// CSV with header `level,cube_index,bracket_value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,cube_index,bracket_value\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:e}\n", r.level, r.cube_index, r.bracket));
        }
        s
    }
}

/// Default A_p scan: every dyadic level from the whole torus down to single
/// samples.
pub fn full_levels(grid: &TorusGrid) -> RangeInclusive<u32> {
    0..=grid.depth()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bracket of the matrix A_p condition on one sample set.
fn ap_bracket(powers: &WeightPowers, samples: &[usize]) -> f64 {
    let p = powers.p;
    let m = powers.m;
    let inner = |x: usize, scratch: &mut CMatrix| -> f64 {
        let rx = &powers.root[x];
        if p > 1.0 {
            let pp = conjugate_exponent(p);
            let s: f64 = samples
                .iter()
                .map(|&y| product_norm(rx, &powers.inv_root[y], scratch).powf(pp))
                .sum();
            (s / samples.len() as f64).powf(p / pp)
        } else {
            0.0
        }
    };
    if p > 1.0 {
        let per_x: Vec<f64> = if samples.len() >= 256 {
            samples
                .par_iter()
                .map_init(|| CMatrix::zeros(m, m), |scratch, &x| inner(x, scratch))
                .collect()
        } else {
            let mut scratch = CMatrix::zeros(m, m);
            samples.iter().map(|&x| inner(x, &mut scratch)).collect()
        };
        mean(&per_x)
    } else {
        // esssup over y of the x-average of ||W^{1/p}(x) W^{-1/p}(y)||^p
        let per_y = |y: usize, scratch: &mut CMatrix| -> f64 {
            let iy = &powers.inv_root[y];
            let s: f64 = samples
                .iter()
                .map(|&x| product_norm(&powers.root[x], iy, scratch).powf(p))
                .sum();
            s / samples.len() as f64
        };
        let vals: Vec<f64> = if samples.len() >= 256 {
            samples
                .par_iter()
                .map_init(|| CMatrix::zeros(m, m), |scratch, &y| per_y(y, scratch))
                .collect()
        } else {
            let mut scratch = CMatrix::zeros(m, m);
            samples.iter().map(|&y| per_y(y, &mut scratch)).collect()
        };
        vals.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Matrix A_p characteristic over the dyadic cubes at `levels`.
pub fn ap_characteristic(powers: &WeightPowers, levels: RangeInclusive<u32>) -> Result<ApReport> {
    let grid = powers.grid;
    let mut rows = Vec::new();
    for level in levels {
        if level > grid.depth() {
            break;
        }
        let cubes = grid.cubes(level);
        let vals: Vec<f64> = cubes
            .par_iter()
            .map(|q| ap_bracket(powers, &q.samples(&grid)))
            .collect();
        for (q, b) in cubes.iter().zip(vals) {
            if !b.is_finite() {
                return Err(Error::Overflow);
            }
            rows.push(ApRow {
                level,
                cube_index: q.linear_index(grid.dim()),
                bracket: b,
            });
        }
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.bracket.total_cmp(&b.bracket))
        .copied()
        .ok_or_else(|| Error::config("levels", "empty scan"))?;
    Ok(ApReport {
        p: powers.p,
        value: best.bracket,
        argmax: (best.level, best.cube_index),
        rows,
    })
}

/// Classical scalar A_p characteristic (`p >= 1`) over dyadic cubes.
pub fn scalar_ap_characteristic(
    grid: &TorusGrid,
    w: &[f64],
    p: f64,
    levels: RangeInclusive<u32>,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::config("p", "scalar A_p needs p >= 1"));
    }
    if w.len() != grid.len() {
        return Err(Error::ShapeMismatch("scalar weight length".into()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::config("w", "weight must be finite and nonnegative"));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateWeight);
    }
    let mut best = f64::NEG_INFINITY;
    for level in levels {
        if level > grid.depth() {
            break;
        }
        for q in grid.cubes(level) {
            let s = q.samples(grid);
            let avg = s.iter().map(|&i| w[i]).sum::<f64>() / s.len() as f64;
            if avg == 0.0 {
                if p > 1.0 {
                    return Err(Error::DegenerateWeight);
                }
                continue;
            }
            let b = if p > 1.0 {
                let e = 1.0 / (1.0 - p);
                let dual = s.iter().map(|&i| w[i].powf(e)).sum::<f64>() / s.len() as f64;
                avg * dual.powf(p - 1.0)
            } else {
                let min = s.iter().map(|&i| w[i]).fold(f64::INFINITY, f64::min);
                avg / min
            };
            best = best.max(b);
        }
    }
    Ok(best)
}

/// `w_y(x) = |W^{1/p}(x) y|^p` for a unit vector `y`.
pub fn scalar_reduction(powers: &WeightPowers, y: &[Complex64]) -> Result<Vec<f64>> {
    if y.len() != powers.m {
        return Err(Error::ShapeMismatch("direction length".into()));
    }
    let norm = crate::matrix::vec_norm(y);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::config("y", "direction must be a unit vector"));
    }
    Ok(direction_field(powers, y))
}

fn direction_field(powers: &WeightPowers, z: &[Complex64]) -> Vec<f64> {
    let p = powers.p;
    powers
        .root
        .iter()
        .map(|r| crate::matrix::apply_norm(r, z).powf(p))
        .collect()
}

/// `||W^{1/p}(x)||^p` at every sample.
pub fn norm_weight_field(powers: &WeightPowers) -> Vec<f64> {
    powers
        .root
        .iter()
        .map(|r| operator_norm(r).powf(powers.p))
        .collect()
}

/// `(A_p char of W, A_{p'} char of W^{-p'/p})`.
pub fn duality_check(field: &MatrixWeightField, p: f64) -> Result<(f64, f64)> {
    if !(p > 1.0) {
        return Err(Error::config("p", "duality needs p > 1"));
    }
    let levels = full_levels(field.grid());
    let direct = ap_characteristic(&field.powers(p)?, levels.clone())?.value;
    let pp = conjugate_exponent(p);
    let dual = ap_characteristic(&field.dual(p)?.powers(pp)?, levels)?.value;
    Ok((direct, dual))
}

/// Deterministic low-discrepancy unit directions in `C^m`: the `m`
/// standard basis vectors followed by `count` Halton points pushed through
/// Box-Muller and normalized.
pub fn doubling_directions(m: usize, count: usize, seed: u64) -> Vec<Vec<Complex64>> {
    const PRIMES: [u64; 24] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83,
        89,
    ];
    assert!(4 * m <= PRIMES.len(), "direction generator supports m <= 6");
    let halton = |mut i: u64, base: u64| -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    let mut out = Vec::with_capacity(m + count);
    for b in 0..m {
        let mut e = vec![Complex64::new(0.0, 0.0); m];
        e[b] = Complex64::new(1.0, 0.0);
        out.push(e);
    }
    let start = 1 + seed % 1_000_003;
    for s in 0..count as u64 {
        let idx = start + s;
        let mut z = Vec::with_capacity(m);
        for c in 0..m {
            let mut g = [0.0; 2];
            for (part, gv) in g.iter_mut().enumerate() {
                let u1 = halton(idx, PRIMES[4 * c + 2 * part]).max(1e-12);
                let u2 = halton(idx, PRIMES[4 * c + 2 * part + 1]);
                *gv = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
            z.push(Complex64::new(g[0], g[1]));
        }
        let norm = crate::matrix::vec_norm(&z);
        out.push(z.into_iter().map(|c| c / norm).collect());
    }
    out
}

/// Periodic window sums over a scalar field via a summed-area table of the
/// doubled torus.
pub(crate) struct WindowSums {
    grid: TorusGrid,
    ext: usize,
    table: Vec<f64>,
}

impl WindowSums {
    pub(crate) fn new(grid: &TorusGrid, w: &[f64]) -> Self {
        let side = grid.side();
        let ext = 2 * side;
        match grid.dim() {
            1 => {
                let mut table = vec![0.0; ext + 1];
                for i in 0..ext {
                    table[i + 1] = table[i] + w[i % side];
                }
                Self {
                    grid: *grid,
                    ext,
                    table,
                }
            }
            _ => {
                let stride = ext + 1;
                let mut table = vec![0.0; stride * stride];
                for a in 0..ext {
                    let mut row = 0.0;
                    for b in 0..ext {
                        row += w[(a % side) * side + (b % side)];
                        table[(a + 1) * stride + b + 1] = table[a * stride + b + 1] + row;
                    }
                }
                Self {
                    grid: *grid,
                    ext,
                    table,
                }
            }
        }
    }

    /// Sum over a wrapped integer window (`start2` must be even).
    pub(crate) fn sum(&self, win: &CubeWindow) -> f64 {
        let side = self.grid.side() as i64;
        let f = win.first();
        let len = win.len;
        debug_assert!(len <= side as usize);
        match self.grid.dim() {
            1 => {
                let s = f[0].rem_euclid(side) as usize;
                self.table[s + len] - self.table[s]
            }
            _ => {
                let stride = self.ext + 1;
                let a = f[0].rem_euclid(side) as usize;
                let b = f[1].rem_euclid(side) as usize;
                let t = |r: usize, c: usize| self.table[r * stride + c];
                t(a + len, b + len) - t(a, b + len) - t(a + len, b) + t(a, b)
            }
        }
    }
}

/// Doubling exponent estimate with an explicit direction set.
///
/// Scans dyadic cubes at levels `1..L-1` together with their translates by
/// half an edge along each axis, so cubes concentric with dyadic corners are
/// included.
pub fn doubling_exponent_with(powers: &WeightPowers, directions: &[Vec<Complex64>]) -> f64 {
    let grid = powers.grid;
    let n = grid.dim();
    let offsets: Vec<[i64; MAX_DIM]> = match n {
        1 => vec![[0, 0], [1, 0]],
        _ => vec![[0, 0], [1, 0], [0, 1], [1, 1]],
    };
    let per_dir: Vec<f64> = directions
        .par_iter()
        .map(|z| {
            let mut w = direction_field(powers, z);
            // flat fields become exact ones, so their ratios are exact powers of two
            let top = w.iter().cloned().fold(0.0, f64::max);
            w.iter_mut().for_each(|v| *v /= top);
            let sums = WindowSums::new(&grid, &w);
            let mut best = f64::NEG_INFINITY;
            for level in 1..grid.depth() {
                for q in grid.cubes(level) {
                    let base = q.window(&grid);
                    for off in &offsets {
                        // shift by half an edge: len samples == len half-steps * 2
                        let half = base.len as i64;
                        let win = base.shifted([off[0] * half, off[1] * half]);
                        let inner = sums.sum(&win);
                        if inner > 0.0 {
                            let outer = sums.sum(&win.doubled());
                            best = best.max((outer / inner).log2());
                        }
                    }
                }
            }
            best
        })
        .collect();
    per_dir.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Number of seeded low-discrepancy directions used by [`doubling_exponent`].
pub const DOUBLING_DIRECTIONS: usize = 64;

/// Doubling exponent with the default direction set.
pub fn doubling_exponent(powers: &WeightPowers, seed: u64) -> f64 {
    let dirs = doubling_directions(powers.m, DOUBLING_DIRECTIONS, seed);
    doubling_exponent_with(powers, &dirs)
}

/// Cube of the scan reported by [`ApReport::argmax`].
pub fn argmax_cube(grid: &TorusGrid, report: &ApReport) -> DyadicCube {
    let (level, lin) = report.argmax;
    let per = 1usize << level;
    let index = match grid.dim() {
        1 => [lin, 0],
        _ => [lin / per, lin % per],
    };
    DyadicCube { level, index }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(depth: u32) -> TorusGrid {
        TorusGrid::new(1, depth).unwrap()
    }

    fn power1(a: f64) -> WeightSpec {
        WeightSpec::DiagonalPower {
            exponents: vec![a],
            center: vec![0.0],
        }
    }

    #[test]
    fn identity_and_constant_generators() {
        let g = TorusGrid::new(2, 3).unwrap();
        let w = generate_weight(&WeightSpec::Identity, g, 2).unwrap();
        assert!(w.values().iter().all(|v| *v == HermitianPd::identity(2)));
        let w0 = HermitianPd::from_real_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let c = generate_weight(&WeightSpec::constant(&w0), g, 2).unwrap();
        assert!(c.values().iter().all(|v| *v == w0));
    }

    #[test]
    fn power_weight_hand_value() {
        let g = grid1(3);
        let w = generate_weight(&power1(1.0), g, 1).unwrap();
        assert!((w.at(2).as_matrix()[(0, 0)].re - 0.25).abs() < 1e-15);
        // singular sample replaced by the value at half a spacing
        assert!((w.at(0).as_matrix()[(0, 0)].re - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn generator_errors() {
        let g = grid1(4);
        assert!(matches!(
            generate_weight(&power1(-1.0), g, 1),
            Err(Error::InadmissibleExponent(_))
        ));
        let off = WeightSpec::DiagonalPower {
            exponents: vec![0.5],
            center: vec![0.01],
        };
        assert!(generate_weight(&off, g, 1).is_err());
        let json = r#"{"kind":"rotating","exponents":[0.5,-0.3],"center":[0.25],"rate":2}"#;
        let spec: WeightSpec = serde_json::from_str(json).unwrap();
        let w = generate_weight(&spec, g, 2).unwrap();
        assert_eq!(w.m(), 2);
    }

    #[test]
    fn spec_json_round_trip() {
        let specs = vec![
            WeightSpec::Identity,
            WeightSpec::Constant {
                matrix: vec![
                    vec![Entry::Real(2.0), Entry::Complex([0.1, 0.2])],
                    vec![Entry::Complex([0.1, -0.2]), Entry::Real(1.0)],
                ],
            },
            power1(0.5),
        ];
        for s in specs {
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<WeightSpec>(&j).unwrap(), s);
        }
    }

    #[test]
    fn identity_characteristic_is_one() {
        let g = grid1(5);
        let w = generate_weight(&WeightSpec::Identity, g, 2).unwrap();
        for p in [0.5, 1.0, 2.0, 4.0] {
            let r = ap_characteristic(&w.powers(p).unwrap(), full_levels(&g)).unwrap();
            assert!((r.value - 1.0).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn constant_characteristic_low_p() {
        let g = grid1(5);
        let w0 = HermitianPd::from_real_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let w = MatrixWeightField::constant(g, w0);
        for p in [0.5, 1.0] {
            let r = ap_characteristic(&w.powers(p).unwrap(), full_levels(&g)).unwrap();
            assert!((r.value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_characteristic_basics() {
        let g = grid1(5);
        let ones = vec![1.0; g.len()];
        let cst = vec![7.0; g.len()];
        for p in [1.0, 2.0, 3.5] {
            assert!((scalar_ap_characteristic(&g, &ones, p, full_levels(&g)).unwrap() - 1.0).abs() < 1e-12);
            assert!((scalar_ap_characteristic(&g, &cst, p, full_levels(&g)).unwrap() - 1.0).abs() < 1e-12);
        }
        let mut holes = ones.clone();
        holes[..4].iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(
            scalar_ap_characteristic(&g, &holes, 2.0, full_levels(&g)),
            Err(Error::DegenerateWeight)
        ));
    }

    #[test]
    fn matrix_scan_matches_scalar_scan_for_m1() {
        let g = grid1(7);
        let w = generate_weight(&power1(0.5), g, 1).unwrap();
        let vals: Vec<f64> = w.values().iter().map(|v| v.as_matrix()[(0, 0)].re).collect();
        for p in [1.5, 2.0, 3.0] {
            let matrix = ap_characteristic(&w.powers(p).unwrap(), full_levels(&g)).unwrap().value;
            let scalar = scalar_ap_characteristic(&g, &vals, p, full_levels(&g)).unwrap();
            assert!((matrix - scalar).abs() < 1e-9 * scalar, "p={p}");
        }
    }

    #[test]
    fn reductions() {
        let g = grid1(4);
        let id = generate_weight(&WeightSpec::Identity, g, 2).unwrap().powers(2.0).unwrap();
        let e1 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(scalar_reduction(&id, &e1).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(norm_weight_field(&id).iter().all(|v| (v - 1.0).abs() < 1e-14));

        let spec = WeightSpec::DiagonalPower {
            exponents: vec![0.5, -0.25],
            center: vec![0.0],
        };
        let w = generate_weight(&spec, g, 2).unwrap();
        let pw = w.powers(3.0).unwrap();
        let red = scalar_reduction(&pw, &e1).unwrap();
        for (i, r) in red.iter().enumerate() {
            assert!((r - w.at(i).as_matrix()[(0, 0)].re).abs() < 1e-12);
        }
        assert!(scalar_reduction(&pw, &[Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)]).is_err());

        let w0 = HermitianPd::from_real_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let cw = MatrixWeightField::constant(g, w0.clone()).powers(1.5).unwrap();
        let expected = operator_norm(w0.power(1.0 / 1.5).unwrap().as_matrix()).powf(1.5);
        assert!(norm_weight_field(&cw).iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn duality_trivial_cases() {
        let g = grid1(5);
        let id = generate_weight(&WeightSpec::Identity, g, 2).unwrap();
        let (a, b) = duality_check(&id, 3.0).unwrap();
        assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
        let w0 = HermitianPd::from_real_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (a, b) = duality_check(&MatrixWeightField::constant(g, w0), 2.0).unwrap();
        assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
        let pw = generate_weight(&power1(0.5), grid1(8), 1).unwrap();
        let (a, b) = duality_check(&pw, 2.0).unwrap();
        assert!(a.is_finite() && b.is_finite() && a >= 1.0 && b >= 1.0);
    }

    #[test]
    fn doubling_of_flat_weights_is_dimension() {
        for n in 1..=2 {
            let g = TorusGrid::new(n, 4).unwrap();
            let id = generate_weight(&WeightSpec::Identity, g, 2).unwrap();
            assert_eq!(doubling_exponent(&id.powers(1.0).unwrap(), 0), n as f64);
            let w0 = HermitianPd::from_real_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
            let c = MatrixWeightField::constant(g, w0);
            assert_eq!(doubling_exponent(&c.powers(0.7).unwrap(), 3), n as f64);
        }
    }

    #[test]
    fn doubling_monotone_in_direction_set() {
        let g = grid1(7);
        let spec = WeightSpec::Rotating {
            exponents: vec![0.5, -0.4],
            center: vec![0.5],
            rate: 1.0,
        };
        let pw = generate_weight(&spec, g, 2).unwrap().powers(2.0).unwrap();
        let dirs = doubling_directions(2, 64, 7);
        let few = doubling_exponent_with(&pw, &dirs[..6]);
        let all = doubling_exponent_with(&pw, &dirs);
        assert!(all >= few);
    }

    #[test]
    fn window_sums_match_enumeration() {
        let g = TorusGrid::new(2, 3).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let sums = WindowSums::new(&g, &w);
        for q in g.cubes(2) {
            let win = q.window(&g).shifted([2, 2]).doubled();
            let direct: f64 = win.samples(&g).iter().map(|&i| w[i]).sum();
            assert!((sums.sum(&win) - direct).abs() < 1e-12);
        }
    }
}
