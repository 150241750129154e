//! Sampled fields on the unit torus `[0,1)^n`.
//!
//! A [`TorusGrid`] carries `N = 2^L` uniform samples per axis. Fields are
//! stored row-major over the grid, then over the vector index, so sample `i`
//! of an `m`-vector field lives in `values[i*m .. (i+1)*m]`. Integer
//! frequencies use the signed range `-N/2 ..= N/2-1` on every axis and the
//! discrete Fourier transform is unitary in both directions.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Div;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Uniform periodic grid with `2^depth` samples per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    n: usize,
    depth: u32,
}

impl TorusGrid {
    pub fn new(n: usize, depth: u32) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(Error::InvalidGrid(format!("dimension {n} not in 1..=2")));
        }
        if depth < 3 {
            return Err(Error::InvalidGrid(format!("depth {depth} below 3")));
        }
        if depth > 24 {
            return Err(Error::InvalidGrid(format!("depth {depth} too large")));
        }
        Ok(Self { n, depth })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Dyadic depth `L`.
    #[inline]
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Samples per axis, `N = 2^L`.
    #[inline]
    pub fn side(&self) -> usize {
        1 << self.depth
    }

    /// Total number of samples, `N^n`.
    #[inline]
    pub fn len(&self) -> usize {
        self.side().pow(self.n as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.side() as f64
    }

    /// Lebesgue weight of one sample, `N^{-n}`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Per-axis integer coordinates of a linear sample index.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; MAX_DIM] {
        let side = self.side();
        match self.n {
            1 => [idx, 0],
            _ => [idx / side, idx % side],
        }
    }

    #[inline]
    pub fn index(&self, c: [usize; MAX_DIM]) -> usize {
        match self.n {
            1 => c[0],
            _ => c[0] * self.side() + c[1],
        }
    }

    /// Index of `c` shifted by `shift` with periodic wrap.
    #[inline]
    pub fn wrap_index(&self, c: [i64; MAX_DIM]) -> usize {
        let side = self.side() as i64;
        let w = |v: i64| v.rem_euclid(side) as usize;
        match self.n {
            1 => w(c[0]),
            _ => w(c[0]) * self.side() + w(c[1]),
        }
    }

    pub fn translate_index(&self, idx: usize, shift: [i64; MAX_DIM]) -> usize {
        let c = self.coords(idx);
        self.wrap_index([c[0] as i64 + shift[0], c[1] as i64 + shift[1]])
    }

    /// Position of a sample in `[0,1)^n`.
    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.coords(idx);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.n {
            x[a] = c[a] as f64 * h;
        }
        x
    }

    /// Signed integer frequency of an FFT bin.
    pub fn frequency(&self, idx: usize) -> [i64; MAX_DIM] {
        let c = self.coords(idx);
        let side = self.side() as i64;
        let half = side / 2;
        let mut k = [0i64; MAX_DIM];
        for a in 0..self.n {
            let v = c[a] as i64;
            k[a] = if v < half { v } else { v - side };
        }
        k
    }

    /// Euclidean length of the frequency of bin `idx`.
    pub fn frequency_norm(&self, idx: usize) -> f64 {
        let k = self.frequency(idx);
        k[..self.n]
            .iter()
            .map(|&v| (v * v) as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Bin holding integer frequency `k` (aliased modulo `N`).
    pub fn frequency_index(&self, k: [i64; MAX_DIM]) -> usize {
        self.wrap_index(k)
    }

    /// Wrapped per-axis sample offset in `0..=N/2`.
    #[inline]
    pub fn axis_offset(&self, a: usize, b: usize) -> usize {
        let side = self.side();
        let d = a.abs_diff(b);
        d.min(side - d)
    }

    /// Euclidean torus distance between two samples.
    pub fn torus_dist(&self, i: usize, j: usize) -> f64 {
        let a = self.coords(i);
        let b = self.coords(j);
        let mut s = 0.0;
        for ax in 0..self.n {
            let d = self.axis_offset(a[ax], b[ax]) as f64;
            s += d * d;
        }
        s.sqrt() * self.spacing()
    }

    /// Torus distance from sample `i` to the point `x`.
    pub fn dist_to_point(&self, i: usize, x: [f64; MAX_DIM]) -> f64 {
        let p = self.point(i);
        let mut s = 0.0;
        for ax in 0..self.n {
            let d = (p[ax] - x[ax]).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            s += d * d;
        }
        s.sqrt()
    }

    /// Table of torus distances indexed by the wrapped offset between two
    /// samples: `offset_dist()[grid.index(offset)]`.
    pub fn offset_distances(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.torus_dist(0, i)).collect()
    }

    /// Linear offset index of `j - i`, used with [`Self::offset_distances`].
    #[inline]
    pub fn offset_index(&self, i: usize, j: usize) -> usize {
        let a = self.coords(i);
        let b = self.coords(j);
        let side = self.side();
        match self.n {
            1 => (b[0] + side - a[0]) % side,
            _ => ((b[0] + side - a[0]) % side) * side + (b[1] + side - a[1]) % side,
        }
    }

    /// All dyadic cubes at `level`.
    pub fn cubes(&self, level: u32) -> Vec<DyadicCube> {
        assert!(level <= self.depth);
        let per_axis = 1usize << level;
        let count = per_axis.pow(self.n as u32);
        (0..count)
            .map(|lin| {
                let index = match self.n {
                    1 => [lin, 0],
                    _ => [lin / per_axis, lin % per_axis],
                };
                DyadicCube { level, index }
            })
            .collect()
    }

    /// Dyadic cube at `level` containing sample `idx`.
    pub fn cube_of(&self, level: u32, idx: usize) -> DyadicCube {
        let shift = self.depth - level;
        let c = self.coords(idx);
        DyadicCube {
            level,
            index: [c[0] >> shift, c[1] >> shift],
        }
    }

    /// For each sample, the linear index of its level-`level` cube.
    pub fn cube_labels(&self, level: u32) -> Vec<usize> {
        (0..self.len())
            .map(|i| self.cube_of(level, i).linear_index(self.n))
            .collect()
    }
}

/// Dyadic cube `Q_{jk} = prod 2^{-j}[k_i, k_i+1)` on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    pub level: u32,
    pub index: [usize; MAX_DIM],
}

impl DyadicCube {
    pub fn new(grid: &TorusGrid, level: u32, index: [usize; MAX_DIM]) -> Result<Self> {
        if level > grid.depth() {
            return Err(Error::InvalidGrid(format!(
                "cube level {level} exceeds depth {}",
                grid.depth()
            )));
        }
        let per_axis = 1usize << level;
        for a in 0..grid.dim() {
            if index[a] >= per_axis {
                return Err(Error::InvalidGrid(format!(
                    "cube index {} out of range at level {level}",
                    index[a]
                )));
            }
        }
        Ok(Self { level, index })
    }

    pub fn linear_index(&self, n: usize) -> usize {
        match n {
            1 => self.index[0],
            _ => (self.index[0] << self.level) + self.index[1],
        }
    }

    /// Samples per axis inside the cube.
    pub fn edge_samples(&self, grid: &TorusGrid) -> usize {
        grid.side() >> self.level
    }

    /// Edge length `2^{-j}`.
    pub fn edge(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn center(&self, grid: &TorusGrid) -> [f64; MAX_DIM] {
        let e = self.edge();
        let mut c = [0.0; MAX_DIM];
        for a in 0..grid.dim() {
            c[a] = (self.index[a] as f64 + 0.5) * e;
        }
        c
    }

    pub fn window(&self, grid: &TorusGrid) -> CubeWindow {
        let s = self.edge_samples(grid);
        CubeWindow {
            start2: [
                2 * (self.index[0] * s) as i64,
                2 * (self.index[1] * s) as i64,
            ],
            len: s,
        }
    }

    pub fn samples(&self, grid: &TorusGrid) -> Vec<usize> {
        self.window(grid).samples(grid)
    }

    pub fn contains(&self, grid: &TorusGrid, idx: usize) -> bool {
        grid.cube_of(self.level, idx) == *self
    }
}

/// Axis-parallel cube of `len` samples per axis, anchored at a
/// half-integer sample position `start2 / 2`, wrapped on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CubeWindow {
    /// Twice the (possibly half-integer) start coordinate, per axis.
    pub start2: [i64; MAX_DIM],
    pub len: usize,
}

impl CubeWindow {
    /// Concentric cube with twice the edge length.
    pub fn doubled(&self) -> CubeWindow {
        CubeWindow {
            start2: [
                self.start2[0] - self.len as i64,
                self.start2[1] - self.len as i64,
            ],
            len: 2 * self.len,
        }
    }

    /// Translate by `half_steps / 2` samples on every axis.
    pub fn shifted(&self, half_steps: [i64; MAX_DIM]) -> CubeWindow {
        CubeWindow {
            start2: [
                self.start2[0] + half_steps[0],
                self.start2[1] + half_steps[1],
            ],
            len: self.len,
        }
    }

    /// First integer sample coordinate on each axis: `ceil(start2 / 2)`.
    pub fn first(&self) -> [i64; MAX_DIM] {
        [
            self.start2[0].div_euclid(2) + self.start2[0].rem_euclid(2),
            self.start2[1].div_euclid(2) + self.start2[1].rem_euclid(2),
        ]
    }

    /// Samples whose positions lie in the window, wrapped.
    pub fn samples(&self, grid: &TorusGrid) -> Vec<usize> {
        let f = self.first();
        let len = self.len as i64;
        match grid.dim() {
            1 => (0..len).map(|a| grid.wrap_index([f[0] + a, 0])).collect(),
            _ => {
                let mut out = Vec::with_capacity(self.len * self.len);
                for a in 0..len {
                    for b in 0..len {
                        out.push(grid.wrap_index([f[0] + a, f[1] + b]));
                    }
                }
                out
            }
        }
    }
}

/// Sample set of the concentric double `2Q`.
pub fn double_cube_samples(grid: &TorusGrid, q: &DyadicCube) -> Result<Vec<usize>> {
    if q.level == 0 {
        return Err(Error::DoublingExceedsDomain);
    }
    Ok(q.window(grid).doubled().samples(grid))
}

/// Arithmetic mean of `values` over the samples of `q`.
pub fn cube_mean<T>(grid: &TorusGrid, values: &[T], q: &DyadicCube) -> T
where
    T: Copy + std::iter::Sum<T> + Div<f64, Output = T>,
{
    let samples = q.samples(grid);
    let count = samples.len() as f64;
    samples.into_iter().map(|i| values[i]).sum::<T>() / count
}

/// Complex `m`-vector field sampled on a torus grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledField {
    grid: TorusGrid,
    m: usize,
    values: Vec<Complex64>,
    band_limit: Option<usize>,
}

impl SampledField {
    pub fn zeros(grid: TorusGrid, m: usize) -> Self {
        Self {
            grid,
            m,
            values: vec![Complex64::new(0.0, 0.0); grid.len() * m],
            band_limit: None,
        }
    }

    pub fn from_values(grid: TorusGrid, m: usize, values: Vec<Complex64>) -> Result<Self> {
        if m == 0 || values.len() != grid.len() * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for m={m}, got {}",
                grid.len() * m,
                values.len()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite sample".into()));
        }
        Ok(Self {
            grid,
            m,
            values,
            band_limit: None,
        })
    }

    /// Sample `f` at every grid point.
    pub fn from_fn<F>(grid: TorusGrid, m: usize, f: F) -> Self
    where
        F: Fn([f64; MAX_DIM]) -> Vec<Complex64>,
    {
        let mut values = Vec::with_capacity(grid.len() * m);
        for i in 0..grid.len() {
            let v = f(grid.point(i));
            assert_eq!(v.len(), m, "from_fn closure returned wrong length");
            values.extend(v);
        }
        Self {
            grid,
            m,
            values,
            band_limit: None,
        }
    }

    /// Single Fourier mode `e^{2 pi i k.x} v`.
    pub fn plane_wave(grid: TorusGrid, k: [i64; MAX_DIM], v: &[Complex64]) -> Self {
        let n = grid.dim();
        let mut f = Self::from_fn(grid, v.len(), |x| {
            let phase: f64 = (0..n).map(|a| k[a] as f64 * x[a]).sum::<f64>()
                * std::f64::consts::TAU;
            let e = Complex64::from_polar(1.0, phase);
            v.iter().map(|c| c * e).collect()
        });
        f.band_limit = Some(k[..n].iter().map(|c| c.unsigned_abs() as usize).max().unwrap());
        f
    }

    pub fn with_band_limit(mut self, band: Option<usize>) -> Self {
        self.band_limit = band;
        self
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
    pub fn band_limit(&self) -> Option<usize> {
        self.band_limit
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Vector value at sample `i`.
    #[inline]
    pub fn at(&self, i: usize) -> &[Complex64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn component(&self, c: usize) -> Vec<Complex64> {
        self.values.iter().skip(c).step_by(self.m).copied().collect()
    }

    /// Sum of `|value|^2` over samples.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `L^2` norm with Lebesgue weight `N^{-n}` per sample.
    pub fn l2_norm(&self) -> f64 {
        (self.energy() * self.grid.cell_volume()).sqrt()
    }

    /// Maximum over samples of the Euclidean vector modulus.
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.at(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z *= c);
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        out.band_limit = match (self.band_limit, other.band_limit) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        Ok(out)
    }

    /// `g(x) = f(x - tau)` for a grid vector `tau` given in samples.
    pub fn translated(&self, shift: [i64; MAX_DIM]) -> Self {
        let mut out = Self::zeros(self.grid, self.m);
        for i in 0..self.grid.len() {
            let src = self.grid.translate_index(i, [-shift[0], -shift[1]]);
            out.values[i * self.m..(i + 1) * self.m].copy_from_slice(self.at(src));
        }
        out.band_limit = self.band_limit;
        out
    }

    /// `g(x) = f(2x)`; the spectrum moves from `k` to `2k`.
    pub fn dilated2(&self) -> Self {
        let mut out = Self::zeros(self.grid, self.m);
        for i in 0..self.grid.len() {
            let c = self.grid.coords(i);
            let src = self.grid.wrap_index([2 * c[0] as i64, 2 * c[1] as i64]);
            out.values[i * self.m..(i + 1) * self.m].copy_from_slice(self.at(src));
        }
        out.band_limit = self.band_limit.map(|b| 2 * b);
        out
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.m != other.m {
            return Err(Error::ShapeMismatch("fields on different grids".into()));
        }
        Ok(())
    }
}

/// Unitary spectrum of a [`SampledField`], same layout as the field.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    grid: TorusGrid,
    m: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_coeffs(grid: TorusGrid, m: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if m == 0 || coeffs.len() != grid.len() * m {
            return Err(Error::ShapeMismatch("spectrum length".into()));
        }
        Ok(Self { grid, m, coeffs })
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
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    pub fn at(&self, bin: usize) -> &[Complex64] {
        &self.coeffs[bin * self.m..(bin + 1) * self.m]
    }

    pub fn at_frequency(&self, k: [i64; MAX_DIM]) -> &[Complex64] {
        self.at(self.grid.frequency_index(k))
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Multiply bin `b` (all components) by `sigma(b)`.
    pub fn map_bins<S: Fn(usize) -> Complex64>(&mut self, sigma: S) {
        let m = self.m;
        for (b, chunk) in self.coeffs.chunks_mut(m).enumerate() {
            let s = sigma(b);
            chunk.iter_mut().for_each(|z| *z *= s);
        }
    }
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place unitary n-D transform of one scalar component.
fn transform_scalar(grid: &TorusGrid, data: &mut [Complex64], inverse: bool) {
    let side = grid.side();
    let fft = plan(side, inverse);
    match grid.dim() {
        1 => fft.process(data),
        _ => {
            // rows are contiguous; process them in one batch
            fft.process(data);
            let mut col = vec![Complex64::new(0.0, 0.0); side];
            for c in 0..side {
                for r in 0..side {
                    col[r] = data[r * side + c];
                }
                fft.process(&mut col);
                for r in 0..side {
                    data[r * side + c] = col[r];
                }
            }
        }
    }
    let scale = 1.0 / (grid.len() as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= scale);
}

fn transform(grid: &TorusGrid, m: usize, values: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); values.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); grid.len()];
    for c in 0..m {
        for (i, z) in buf.iter_mut().enumerate() {
            *z = values[i * m + c];
        }
        transform_scalar(grid, &mut buf, inverse);
        for (i, z) in buf.iter().enumerate() {
            out[i * m + c] = *z;
        }
    }
    out
}

/// Unitary forward transform, componentwise in the vector index.
pub fn fft_forward(f: &SampledField) -> Spectrum {
    Spectrum {
        grid: f.grid,
        m: f.m,
        coeffs: transform(&f.grid, f.m, &f.values, false),
    }
}

/// Unitary inverse transform.
pub fn fft_inverse(s: &Spectrum) -> SampledField {
    SampledField {
        grid: s.grid,
        m: s.m,
        values: transform(&s.grid, s.m, &s.coeffs, true),
        band_limit: None,
    }
}

/// Multiply the spectrum of `f` by `sigma(k)` at every integer frequency.
///
/// `sigma` receives the signed frequency `k` (length `n`).
pub fn convolve_symbol<S>(f: &SampledField, sigma: S) -> SampledField
where
    S: Fn(&[i64]) -> Complex64,
{
    let grid = f.grid;
    let n = grid.dim();
    let mut spec = fft_forward(f);
    spec.map_bins(|b| {
        let k = grid.frequency(b);
        sigma(&k[..n])
    });
    let mut out = fft_inverse(&spec);
    out.band_limit = f.band_limit;
    out
}

/// Real-valued symbol convenience wrapper around [`convolve_symbol`].
pub fn convolve_real_symbol<S>(f: &SampledField, sigma: S) -> SampledField
where
    S: Fn(&[i64]) -> f64,
{
    convolve_symbol(f, |k| Complex64::new(sigma(k), 0.0))
}

/// Largest `|k|_inf` carrying a coefficient above `rel_tol * max|coeff|`.
pub fn measured_band_limit(spec: &Spectrum, rel_tol: f64) -> usize {
    let grid = spec.grid;
    let n = grid.dim();
    let cutoff = spec.max_abs() * rel_tol;
    let mut band = 0usize;
    for b in 0..grid.len() {
        if spec.at(b).iter().any(|z| z.norm() > cutoff) {
            let k = grid.frequency(b);
            let inf = k[..n].iter().map(|v| v.unsigned_abs() as usize).max().unwrap();
            band = band.max(inf);
        }
    }
    band
}

const BINARY_MAGIC: &[u8; 4] = b"MWTF";

impl SampledField {
    /// CSV: header `n,L,m,band_limit`, one value row (empty band when
    /// unknown), then one `re,im` row per component in row-major order.
    pub fn to_csv(&self) -> String {
        let band = self.band_limit.map(|b| b.to_string()).unwrap_or_default();
        let mut out = format!(
            "n,L,m,band_limit\n{},{},{},{}\nre,im\n",
            self.grid.dim(),
            self.grid.depth(),
            self.m,
            band
        );
        for z in &self.values {
            out.push_str(&format!("{:e},{:e}\n", z.re, z.im));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |msg: &str| Error::Parse(format!("field csv: {msg}"));
        if lines.next().map(str::trim) != Some("n,L,m,band_limit") {
            return Err(bad("missing header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| bad("missing shape row"))?.split(',').collect();
        if meta.len() != 4 {
            return Err(bad("shape row needs 4 fields"));
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer"));
        let grid = TorusGrid::new(num(meta[0])?, num(meta[1])? as u32)?;
        let m = num(meta[2])?;
        let band = if meta[3].trim().is_empty() { None } else { Some(num(meta[3])?) };
        if lines.next().map(str::trim) != Some("re,im") {
            return Err(bad("missing value header"));
        }
        let mut values = Vec::with_capacity(grid.len() * m);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (re, im) = line.split_once(',').ok_or_else(|| bad("value row needs re,im"))?;
            let f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad float"));
            values.push(Complex64::new(f(re)?, f(im)?));
        }
        Ok(Self::from_values(grid, m, values)?.with_band_limit(band))
    }

    /// Little-endian binary: magic, `n, L, m, band` as `u64` (band
    /// `u64::MAX` when unknown), then interleaved `f64` components.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + 16 * self.values.len());
        out.extend_from_slice(BINARY_MAGIC);
        let band = self.band_limit.map_or(u64::MAX, |b| b as u64);
        for v in [self.grid.dim() as u64, self.grid.depth() as u64, self.m as u64, band] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for z in &self.values {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("field binary: {msg}"));
        if bytes.len() < 36 || &bytes[..4] != BINARY_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap());
        let grid = TorusGrid::new(word(0) as usize, word(1) as u32)?;
        let m = word(2) as usize;
        let band = (word(3) != u64::MAX).then(|| word(3) as usize);
        let body = &bytes[36..];
        if body.len() % 16 != 0 {
            return Err(bad("truncated values"));
        }
        let values = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(Self::from_values(grid, m, values)?.with_band_limit(band))
    }
}
