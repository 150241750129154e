//! Matrix-weighted Triebel-Lizorkin quasi-norms on the torus.
//!
//! Every norm is assembled the same way: a nonnegative field `G_j(x)` per
//! scale of the profile window, then `(sum_j (2^{j alpha} G_j)^q)^{1/q}`
//! (max over `j` for `q = inf`), then `L^p` with Lebesgue weight `N^{-n}`
//! per sample.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SampledField, TorusGrid, MAX_DIM};
use crate::lp::{lp_pieces, AnalysisProfile};
use crate::matrix::{apply_norm, operator_norm, product_norm, CMatrix};
use crate::reducing::ReducingFamily;
use crate::weights::WeightPowers;

/// Smoothness, integrability, summability and the two maximal exponents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceParams {
    pub alpha: f64,
    pub p: f64,
    #[serde(with = "exponent_serde")]
    pub q: f64,
    pub a: f64,
    pub lambda: f64,
}

/// `q` may be written as a number or as `"inf"`.
pub(crate) mod exponent_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> Result<S::Ok, S::Error> {
        if q.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*q)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => {
                Ok(f64::INFINITY)
            }
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad exponent {t}"))),
        }
    }
}

impl SpaceParams {
    pub fn new(alpha: f64, p: f64, q: f64, a: f64, lambda: f64) -> Result<Self> {
        let s = Self { alpha, p, q, a, lambda };
        s.validate()?;
        Ok(s)
    }

    /// Defaults strictly inside the theorem ranges for doubling exponent `beta`.
    pub fn with_defaults(n: usize, alpha: f64, p: f64, q: f64, beta: f64) -> Result<Self> {
        let a = a_threshold(n, p, q, beta) + 1.0;
        let lambda = lambda_threshold(n, p, q, beta) + 0.5;
        Self::new(alpha, p, q, a, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be finite"));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::config("p", "must lie in (0, inf)"));
        }
        if !(self.q > 0.0) {
            return Err(Error::config("q", "must lie in (0, inf]"));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::config("a", "must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be positive"));
        }
        Ok(())
    }

    pub fn a_valid(&self, n: usize, beta: f64) -> bool {
        self.a > a_threshold(n, self.p, self.q, beta)
    }

    pub fn lambda_valid(&self, n: usize, beta: f64) -> bool {
        self.lambda > lambda_threshold(n, self.p, self.q, beta)
    }

    /// Smoothness order above which multiplier constants are controlled:
    /// `n/min(1,p,q) + beta/p + n/2`.
    pub fn ell_threshold(&self, n: usize, beta: f64) -> f64 {
        a_threshold(n, self.p, self.q, beta) + n as f64 / 2.0
    }
}

fn min1pq(p: f64, q: f64) -> f64 {
    1f64.min(p).min(q)
}

/// `n/min(1,p,q) + beta/p`.
pub fn a_threshold(n: usize, p: f64, q: f64, beta: f64) -> f64 {
    n as f64 / min1pq(p, q) + beta / p
}

/// `1/min(1,p,q) + beta/(n p)`.
pub fn lambda_threshold(n: usize, p: f64, q: f64, beta: f64) -> f64 {
    1.0 / min1pq(p, q) + beta / (n as f64 * p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "F")]
    F,
    #[serde(rename = "F_AQ")]
    FAq,
    #[serde(rename = "star")]
    Star,
    #[serde(rename = "star_AQ")]
    StarAq,
    #[serde(rename = "starstar_AQ")]
    StarStarAq,
    #[serde(rename = "square")]
    Square,
    #[serde(rename = "gstar")]
    Gstar,
    #[serde(rename = "gstar_AQ")]
    GstarAq,
}

impl NormKind {
    pub const ALL: [NormKind; 8] = [
        NormKind::F,
        NormKind::FAq,
        NormKind::Star,
        NormKind::StarAq,
        NormKind::StarStarAq,
        NormKind::Square,
        NormKind::Gstar,
        NormKind::GstarAq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::F => "F",
            NormKind::FAq => "F_AQ",
            NormKind::Star => "star",
            NormKind::StarAq => "star_AQ",
            NormKind::StarStarAq => "starstar_AQ",
            NormKind::Square => "square",
            NormKind::Gstar => "gstar",
            NormKind::GstarAq => "gstar_AQ",
        }
    }

    pub fn uses_family(self) -> bool {
        matches!(
            self,
            NormKind::FAq | NormKind::StarAq | NormKind::StarStarAq | NormKind::GstarAq
        )
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NormKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("norm_kind", format!("unknown norm `{s}`")))
    }
}

// ---------------------------------------------------------------------------
// maximal machinery

/// `out[x] = max_{t = x-s+1 ..= x} vals[t mod N]`.
fn circular_window_max(vals: &[f64], s: usize) -> Vec<f64> {
    let n = vals.len();
    if s >= n {
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return vec![m; n];
    }
    let ext = |i: usize| vals[(i + n - (s - 1)) % n];
    let mut out = vec![0.0; n];
    let mut dq = std::collections::VecDeque::<usize>::new();
    for i in 0..n + s - 1 {
        let v = ext(i);
        while dq.back().is_some_and(|&b| ext(b) <= v) {
            dq.pop_back();
        }
        dq.push_back(i);
        if dq[0] + s <= i {
            dq.pop_front();
        }
        if i + 1 >= s {
            out[i + 1 - s] = ext(dq[0]);
        }
    }
    out
}

/// `out[a] = sum_{t = a ..< a+s} vals[t mod N]`.
fn circular_window_sum(vals: &[f64], s: usize) -> Vec<f64> {
    let n = vals.len();
    let mut acc: f64 = (0..s).map(|t| vals[t % n]).sum();
    let mut out = vec![0.0; n];
    for a in 0..n {
        out[a] = acc;
        acc += vals[(a + s) % n] - vals[a];
    }
    out
}

/// Apply a 1D circular operation along one axis of a 2D array.
fn along_axis(grid: &TorusGrid, data: &[f64], axis: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let side = grid.side();
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; side];
    for other in 0..side {
        for t in 0..side {
            let c = if axis == 0 { [t, other] } else { [other, t] };
            line[t] = data[grid.index(c)];
        }
        let res = op(&line);
        for t in 0..side {
            let c = if axis == 0 { [t, other] } else { [other, t] };
            out[grid.index(c)] = res[t];
        }
    }
    out
}

/// Discrete Hardy-Littlewood maximal function: max of the sample mean over
/// all wrapped equal-side windows containing `x`, every side `1..=N`.
pub fn hl_maximal(grid: &TorusGrid, h: &[f64]) -> Vec<f64> {
    let side = grid.side();
    let mut best = h.to_vec();
    for s in 2..=side {
        let maxed = if grid.dim() == 1 {
            let sums = circular_window_sum(h, s);
            let means: Vec<f64> = sums.iter().map(|v| v / s as f64).collect();
            circular_window_max(&means, s)
        } else {
            let rows = along_axis(grid, h, 1, |l| circular_window_sum(l, s));
            let sums = along_axis(grid, &rows, 0, |l| circular_window_sum(l, s));
            let area = (s * s) as f64;
            let means: Vec<f64> = sums.iter().map(|v| v / area).collect();
            let m1 = along_axis(grid, &means, 1, |l| circular_window_max(l, s));
            along_axis(grid, &m1, 0, |l| circular_window_max(l, s))
        };
        for (b, v) in best.iter_mut().zip(maxed) {
            *b = b.max(v);
        }
    }
    best
}

/// Piecewise-constant means over the level-`j` dyadic cubes.
pub fn ej_average(grid: &TorusGrid, h: &[f64], j: u32) -> Result<Vec<f64>> {
    if j > grid.depth() {
        return Err(Error::config("j", format!("level {j} exceeds depth {}", grid.depth())));
    }
    let labels = grid.cube_labels(j);
    let cubes = 1usize << (j as usize * grid.dim());
    let mut sum = vec![0.0; cubes];
    let mut count = vec![0usize; cubes];
    for (i, &l) in labels.iter().enumerate() {
        sum[l] += h[i];
        count[l] += 1;
    }
    Ok(labels.iter().map(|&l| sum[l] / count[l] as f64).collect())
}

/// `||W^{1/p}(x) A_{Q(x)}^{-1}||` with `Q(x)` the level-`j` cube of `x`.
pub fn gamma_field(powers: &WeightPowers, family: &ReducingFamily, j: u32) -> Result<Vec<f64>> {
    check_family(powers, family)?;
    if !family.covers(j) {
        return Err(Error::config("family", format!("level {j} not covered")));
    }
    let m = powers.m();
    Ok((0..powers.grid().len())
        .into_par_iter()
        .map_init(
            || CMatrix::zeros(m, m),
            |scratch, x| product_norm(powers.root(x), family.op_inv_at(j, x), scratch),
        )
        .collect())
}

fn check_family(powers: &WeightPowers, family: &ReducingFamily) -> Result<()> {
    if powers.grid() != family.grid() || powers.m() != family.m() {
        return Err(Error::ShapeMismatch("weight and family differ in grid or m".into()));
    }
    if (powers.p() - family.p()).abs() > 1e-12 {
        return Err(Error::config("p", "weight powers and family use different p"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// per-scale fields

/// `(1 + 2^j |offset|)^{-expo}` indexed by offset.
fn decay_kernel(grid: &TorusGrid, j: i32, expo: f64) -> Vec<f64> {
    let s = (j as f64).exp2();
    grid.offset_distances()
        .iter()
        .map(|d| (1.0 + s * d).powf(-expo))
        .collect()
}

/// `sup_y |M(x) v(y)| K(x - y)` for a pointwise matrix `M(x)`.
fn peetre_pointwise(piece: &SampledField, powers: &WeightPowers, kernel: &[f64]) -> Vec<f64> {
    let grid = *piece.grid();
    let mods: Vec<f64> = (0..grid.len()).map(|y| crate::matrix::vec_norm(piece.at(y))).collect();
    (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let mx = powers.root(x);
            let bound = operator_norm(mx);
            let mut best = apply_norm(mx, piece.at(x));
            for y in 0..grid.len() {
                let k = kernel[grid.offset_index(x, y)];
                if bound * mods[y] * k <= best {
                    continue;
                }
                best = best.max(apply_norm(mx, piece.at(y)) * k);
            }
            best
        })
        .collect()
}

/// Samples grouped by their level-`j` cube.
fn cube_members(grid: &TorusGrid, j: u32) -> Vec<Vec<usize>> {
    let labels = grid.cube_labels(j);
    let mut groups = vec![Vec::new(); 1usize << (j as usize * grid.dim())];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Per-cube fields for `A_Q`: `f(cube members, |A_Q v(y)| for all y)`.
fn per_cube<F>(piece: &SampledField, family: &ReducingFamily, j: u32, body: F) -> Vec<f64>
where
    F: Fn(&[usize], &[f64]) -> Vec<f64> + Sync,
{
    let grid = *piece.grid();
    let groups = cube_members(&grid, j);
    let parts: Vec<(usize, Vec<f64>)> = groups
        .par_iter()
        .enumerate()
        .map(|(c, members)| {
            let a = family.op_at(j, members[0]);
            let u: Vec<f64> = (0..grid.len()).map(|y| apply_norm(a, piece.at(y))).collect();
            (c, body(members, &u))
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    for (c, vals) in parts {
        for (&x, v) in groups[c].iter().zip(vals) {
            out[x] = v;
        }
    }
    out
}

fn sup_weighted(grid: &TorusGrid, u: &[f64], kernel: &[f64], x: usize) -> f64 {
    let mut best = 0.0f64;
    for y in 0..grid.len() {
        best = best.max(u[y] * kernel[grid.offset_index(x, y)]);
    }
    best
}

#[inline]
fn pow_q(modulus: f64, q: f64) -> f64 {
    if q == 2.0 {
        modulus * modulus
    } else if q == 1.0 {
        modulus
    } else {
        modulus.powf(q)
    }
}

#[derive(Clone, Copy)]
enum Weighting<'a> {
    Field(&'a WeightPowers),
    Family(&'a ReducingFamily),
}

struct Prepared<'a> {
    grid: TorusGrid,
    params: SpaceParams,
    scales: Vec<i32>,
    pieces: Vec<SampledField>,
    powers: Option<&'a WeightPowers>,
    family: Option<&'a ReducingFamily>,
}

impl<'a> Prepared<'a> {
    fn new(
        f: &SampledField,
        powers: Option<&'a WeightPowers>,
        family: Option<&'a ReducingFamily>,
        params: &SpaceParams,
        profile: &AnalysisProfile,
    ) -> Result<Self> {
        params.validate()?;
        let grid = *f.grid();
        if profile.grid() != &grid {
            return Err(Error::ShapeMismatch("profile and field grids differ".into()));
        }
        if let Some(w) = powers {
            if w.grid() != &grid || w.m() != f.m() {
                return Err(Error::ShapeMismatch("weight and field differ in grid or m".into()));
            }
            if (w.p() - params.p).abs() > 1e-12 {
                return Err(Error::config("p", "weight powers computed for a different p"));
            }
        }
        if let Some(fam) = family {
            if fam.grid() != &grid || fam.m() != f.m() {
                return Err(Error::ShapeMismatch("family and field differ in grid or m".into()));
            }
            if (fam.p() - params.p).abs() > 1e-12 {
                return Err(Error::config("p", "reducing family built for a different p"));
            }
            if let Some(j) = profile.scales().find(|&j| !fam.covers(j as u32)) {
                return Err(Error::config("family", format!("level {j} of the window not covered")));
            }
        }
        Ok(Self {
            grid,
            params: *params,
            scales: profile.scales().collect(),
            pieces: lp_pieces(f, profile),
            powers,
            family,
        })
    }

    fn weighting(&self, kind: NormKind) -> Weighting<'a> {
        if kind.uses_family() {
            Weighting::Family(self.family.expect("family checked"))
        } else {
            Weighting::Field(self.powers.expect("weight checked"))
        }
    }

    fn pointwise(&self, idx: usize, w: Weighting<'_>) -> Vec<f64> {
        let piece = &self.pieces[idx];
        let j = self.scales[idx] as u32;
        (0..self.grid.len())
            .map(|x| {
                let mx = match w {
                    Weighting::Field(p) => p.root(x),
                    Weighting::Family(f) => f.op_at(j, x),
                };
                apply_norm(mx, piece.at(x))
            })
            .collect()
    }

    fn peetre(&self, idx: usize, w: Weighting<'_>, expo: f64) -> Vec<f64> {
        let piece = &self.pieces[idx];
        let j = self.scales[idx];
        let kernel = decay_kernel(&self.grid, j, expo);
        match w {
            Weighting::Field(p) => peetre_pointwise(piece, p, &kernel),
            Weighting::Family(f) => per_cube(piece, f, j as u32, |members, u| {
                members.iter().map(|&x| sup_weighted(&self.grid, u, &kernel, x)).collect()
            }),
        }
    }

    fn starstar(&self, idx: usize) -> Vec<f64> {
        let j = self.scales[idx] as u32;
        let star = self.peetre(idx, self.weighting(NormKind::StarAq), self.params.a);
        let mut out = vec![0.0; self.grid.len()];
        for members in cube_members(&self.grid, j) {
            let top = members.iter().map(|&z| star[z]).fold(0.0, f64::max);
            for x in members {
                out[x] = top;
            }
        }
        out
    }

    fn square(&self, idx: usize) -> Vec<f64> {
        let piece = &self.pieces[idx];
        let j = self.scales[idx];
        let radius = (-j as f64).exp2();
        let powers = self.powers.expect("weight checked");
        let offsets: Vec<[i64; MAX_DIM]> = self
            .grid
            .offset_distances()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < radius)
            .map(|(o, _)| {
                let c = self.grid.coords(o);
                [c[0] as i64, c[1] as i64]
            })
            .collect();
        let q = self.params.q;
        (0..self.grid.len())
            .into_par_iter()
            .map(|x| {
                let mx = powers.root(x);
                let vals = offsets
                    .iter()
                    .map(|&o| apply_norm(mx, piece.at(self.grid.translate_index(x, o))));
                if q.is_infinite() {
                    vals.fold(0.0, f64::max)
                } else {
                    let s: f64 = vals.map(|v| pow_q(v, q)).sum();
                    (s / offsets.len() as f64).powf(1.0 / q)
                }
            })
            .collect()
    }

    fn gstar(&self, idx: usize, w: Weighting<'_>) -> Result<Vec<f64>> {
        let n = self.grid.dim() as f64;
        let (q, lambda) = (self.params.q, self.params.lambda);
        let j = self.scales[idx];
        if q.is_infinite() {
            let expo = lambda * n;
            return Ok(match w {
                Weighting::Field(_) => self.peetre(idx, w, expo),
                Weighting::Family(_) => {
                    let star = self.peetre(idx, w, expo);
                    sup_over_cubes(&self.grid, j as u32, &star)
                }
            });
        }
        let expo = lambda * n * q;
        if expo <= n {
            return Err(Error::TailDivergence(expo));
        }
        let piece = &self.pieces[idx];
        let kernel = decay_kernel(&self.grid, j, expo);
        let scale = (j as f64 * n).exp2() * self.grid.cell_volume();
        let grid = self.grid;
        let integral = |u: &[f64], x: usize| -> f64 {
            let s: f64 = (0..grid.len()).map(|y| u[y] * kernel[grid.offset_index(x, y)]).sum();
            scale * s
        };
        Ok(match w {
            Weighting::Field(p) => (0..grid.len())
                .into_par_iter()
                .map(|x| {
                    let mx = p.root(x);
                    let s: f64 = (0..grid.len())
                        .map(|y| pow_q(apply_norm(mx, piece.at(y)), q) * kernel[grid.offset_index(x, y)])
                        .sum();
                    (scale * s).powf(1.0 / q)
                })
                .collect(),
            Weighting::Family(f) => per_cube(piece, f, j as u32, |members, u| {
                let uq: Vec<f64> = u.iter().map(|&v| pow_q(v, q)).collect();
                let top = members.iter().map(|&z| integral(&uq, z)).fold(0.0, f64::max);
                vec![top.powf(1.0 / q); members.len()]
            }),
        })
    }

    fn scale_field(&self, kind: NormKind, idx: usize) -> Result<Vec<f64>> {
        let w = self.weighting(kind);
        Ok(match kind {
            NormKind::F | NormKind::FAq => self.pointwise(idx, w),
            NormKind::Star | NormKind::StarAq => self.peetre(idx, w, self.params.a),
            NormKind::StarStarAq => self.starstar(idx),
            NormKind::Square => self.square(idx),
            NormKind::Gstar | NormKind::GstarAq => self.gstar(idx, w)?,
        })
    }

    fn norm(&self, kind: NormKind) -> Result<f64> {
        let mut fields = Vec::with_capacity(self.scales.len());
        for idx in 0..self.scales.len() {
            fields.push(self.scale_field(kind, idx)?);
        }
        Ok(combine(&self.grid, &self.params, &self.scales, &fields))
    }
}

fn sup_over_cubes(grid: &TorusGrid, j: u32, field: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for members in cube_members(grid, j) {
        let top = members.iter().map(|&z| field[z]).fold(0.0, f64::max);
        for x in members {
            out[x] = top;
        }
    }
    out
}

/// `|| (sum_j (2^{j alpha} G_j)^q)^{1/q} ||_{L^p}`.
fn combine(grid: &TorusGrid, params: &SpaceParams, scales: &[i32], fields: &[Vec<f64>]) -> f64 {
    let (p, q) = (params.p, params.q);
    let weights: Vec<f64> = scales.iter().map(|&j| (j as f64 * params.alpha).exp2()).collect();
    let mut total = 0.0;
    for x in 0..grid.len() {
        let inner = if q.is_infinite() {
            fields
                .iter()
                .zip(&weights)
                .map(|(g, w)| w * g[x])
                .fold(0.0, f64::max)
        } else {
            fields
                .iter()
                .zip(&weights)
                .map(|(g, w)| pow_q(w * g[x], q))
                .sum::<f64>()
                .powf(1.0 / q)
        };
        total += if p == 2.0 { inner * inner } else { inner.powf(p) };
    }
    (total * grid.cell_volume()).powf(1.0 / p)
}

// ---------------------------------------------------------------------------
// public norms

#[allow(non_snake_case)]
pub fn norm_F(f: &SampledField, powers: &WeightPowers, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, Some(powers), None, params, profile)?.norm(NormKind::F)
}

#[allow(non_snake_case)]
pub fn norm_F_AQ(f: &SampledField, family: &ReducingFamily, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, None, Some(family), params, profile)?.norm(NormKind::FAq)
}

pub fn norm_star(f: &SampledField, powers: &WeightPowers, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, Some(powers), None, params, profile)?.norm(NormKind::Star)
}

#[allow(non_snake_case)]
pub fn norm_star_AQ(f: &SampledField, family: &ReducingFamily, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, None, Some(family), params, profile)?.norm(NormKind::StarAq)
}

#[allow(non_snake_case)]
pub fn norm_starstar_AQ(f: &SampledField, family: &ReducingFamily, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, None, Some(family), params, profile)?.norm(NormKind::StarStarAq)
}

pub fn norm_square(f: &SampledField, powers: &WeightPowers, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, Some(powers), None, params, profile)?.norm(NormKind::Square)
}

pub fn norm_gstar(f: &SampledField, powers: &WeightPowers, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, Some(powers), None, params, profile)?.norm(NormKind::Gstar)
}

#[allow(non_snake_case)]
pub fn norm_gstar_AQ(f: &SampledField, family: &ReducingFamily, params: &SpaceParams, profile: &AnalysisProfile) -> Result<f64> {
    Prepared::new(f, None, Some(family), params, profile)?.norm(NormKind::GstarAq)
}

/// Several norms of one field, sharing the Littlewood-Paley pieces. Kinds
/// needing a family are skipped when `family` is `None`.
pub fn norms_of(
    f: &SampledField,
    powers: &WeightPowers,
    family: Option<&ReducingFamily>,
    params: &SpaceParams,
    profile: &AnalysisProfile,
    kinds: &[NormKind],
) -> Result<BTreeMap<NormKind, f64>> {
    let prep = Prepared::new(f, Some(powers), family, params, profile)?;
    let mut out = BTreeMap::new();
    for &k in kinds {
        if k.uses_family() && family.is_none() {
            continue;
        }
        out.insert(k, prep.norm(k)?);
    }
    Ok(out)
}

/// `sup_y |W^{1/p}(x) (phi_j * f)(y)| / (1 + 2^j |x - y|)^a` on the grid.
pub fn peetre_field(
    f: &SampledField,
    powers: &WeightPowers,
    profile: &AnalysisProfile,
    j: i32,
    a: f64,
) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::config("a", "must be positive"));
    }
    if !profile.contains_scale(j) {
        return Err(Error::config("j", format!("scale {j} outside the window")));
    }
    let params = SpaceParams::new(0.0, powers.p(), 2.0, a, 1.0)?;
    let prep = Prepared::new(f, Some(powers), None, &params, profile)?;
    let idx = (j - profile.spec().jmin) as usize;
    Ok(prep.peetre(idx, Weighting::Field(powers), a))
}

/// Lower bound for `norm_gstar / norm_square`: per scale the `g*` integrand
/// dominates the ball average times `2^{-lambda n}` and the ratio of the
/// discrete ball volume to `2^{-jn}`.
pub fn gstar_square_floor(grid: &TorusGrid, params: &SpaceParams, profile: &AnalysisProfile) -> f64 {
    let n = grid.dim() as f64;
    let dists = grid.offset_distances();
    let shrink = (-params.lambda * n).exp2();
    profile
        .scales()
        .map(|j| {
            if params.q.is_infinite() {
                return shrink;
            }
            let radius = (-j as f64).exp2();
            let count = dists.iter().filter(|&&d| d < radius).count() as f64;
            let vol = count * grid.cell_volume() * (j as f64 * n).exp2();
            shrink * vol.powf(1.0 / params.q)
        })
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// lemma checks

/// `sum_{l in Z^n} (1 + |l|)^{-eta}` periodized onto `side^n` residues, with
/// the far tail spread evenly. Returns the kernel indexed like a level grid.
fn periodized_lattice_kernel(n: usize, side: usize, eta: f64) -> Vec<f64> {
    let cells = side.pow(n as u32);
    let mut k = vec![0.0; cells];
    let tail;
    if n == 1 {
        let r = (1usize << 17).max(64 * side) as i64;
        for l in -r..=r {
            k[l.rem_euclid(side as i64) as usize] += (1.0 + l.abs() as f64).powf(-eta);
        }
        tail = 2.0 * (1.5 + r as f64).powf(1.0 - eta) / (eta - 1.0);
    } else {
        let r = 512i64.max(8 * side as i64);
        let r2 = (r * r) as f64;
        for a in -r..=r {
            for b in -r..=r {
                let d2 = (a * a + b * b) as f64;
                if d2 > r2 {
                    continue;
                }
                let idx = a.rem_euclid(side as i64) as usize * side + b.rem_euclid(side as i64) as usize;
                k[idx] += (1.0 + d2.sqrt()).powf(-eta);
            }
        }
        let rr = r as f64 + 0.5;
        tail = 2.0
            * std::f64::consts::PI
            * ((1.0 + rr).powf(2.0 - eta) / (eta - 2.0) - (1.0 + rr).powf(1.0 - eta) / (eta - 1.0));
    }
    for v in &mut k {
        *v += tail / cells as f64;
    }
    k
}

/// `sum_{l in Z^n} (1 + |l|)^{-eta}`.
pub fn lattice_sum(n: usize, eta: f64) -> Result<f64> {
    if !(eta > n as f64) || n == 0 || n > MAX_DIM {
        return Err(Error::config("eta", "need eta > n"));
    }
    Ok(periodized_lattice_kernel(n, 1, eta).iter().sum())
}

/// Largest ratio of the lattice-weighted cube averages at level `j` to the
/// maximal function.
pub fn jcf_check(grid: &TorusGrid, h: &[f64], j: u32, eta: f64) -> Result<f64> {
    let n = grid.dim();
    if !(eta > n as f64) {
        return Err(Error::config("eta", "need eta > n"));
    }
    if h.len() != grid.len() || h.iter().any(|&v| v < 0.0) {
        return Err(Error::config("h", "need a nonnegative field on the grid"));
    }
    let means = ej_average(grid, h, j)?;
    let side = 1usize << j;
    let kernel = periodized_lattice_kernel(n, side, eta);
    let labels = grid.cube_labels(j);
    let cells = side.pow(n as u32);
    let mut cube_mean = vec![0.0; cells];
    for (i, &l) in labels.iter().enumerate() {
        cube_mean[l] = means[i];
    }
    let coords = |c: usize| if n == 1 { [c, 0] } else { [c / side, c % side] };
    let lhs: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|k| {
            let ck = coords(k);
            (0..cells)
                .map(|l| {
                    let cl = coords(l);
                    let d0 = (ck[0] + side - cl[0]) % side;
                    let d1 = (ck[1] + side - cl[1]) % side;
                    let off = if n == 1 { d0 } else { d0 * side + d1 };
                    kernel[off] * cube_mean[l]
                })
                .sum()
        })
        .collect();
    let maximal = hl_maximal(grid, h);
    Ok((0..grid.len())
        .map(|x| {
            let num = lhs[labels[x]];
            if maximal[x] == 0.0 {
                0.0
            } else {
                num / maximal[x]
            }
        })
        .fold(0.0, f64::max))
}

fn lp_lq(grid: &TorusGrid, fields: &[Vec<f64>], p: f64, q: f64) -> f64 {
    let mut total = 0.0;
    for x in 0..grid.len() {
        let inner = if q.is_infinite() {
            fields.iter().map(|h| h[x].abs()).fold(0.0, f64::max)
        } else {
            fields.iter().map(|h| h[x].abs().powf(q)).sum::<f64>().powf(1.0 / q)
        };
        total += inner.powf(p);
    }
    (total * grid.cell_volume()).powf(1.0 / p)
}

/// `||(sum_i M(h_i)^q)^{1/q}||_p / ||(sum_i |h_i|^q)^{1/q}||_p`.
pub fn fs_check(grid: &TorusGrid, hs: &[Vec<f64>], p: f64, q: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) || !(q > 1.0) {
        return Err(Error::config("p,q", "need p in (1, inf) and q in (1, inf]"));
    }
    if hs.iter().any(|h| h.len() != grid.len()) {
        return Err(Error::ShapeMismatch("field length differs from grid".into()));
    }
    let abs: Vec<Vec<f64>> = hs.iter().map(|h| h.iter().map(|v| v.abs()).collect()).collect();
    let den = lp_lq(grid, &abs, p, q);
    if den == 0.0 {
        return Ok(0.0);
    }
    let maxed: Vec<Vec<f64>> = abs.par_iter().map(|h| hl_maximal(grid, h)).collect();
    Ok(lp_lq(grid, &maxed, p, q) / den)
}

/// `||{gamma_j E_j(f_j)}||_{L^p(l^q)} / ||{E_j(f_j)}||_{L^p(l^q)}` with the
/// fields given per level.
pub fn c38_check(
    powers: &WeightPowers,
    family: &ReducingFamily,
    q: f64,
    fields: &[(u32, Vec<f64>)],
) -> Result<f64> {
    check_family(powers, family)?;
    let grid = *powers.grid();
    let mut lhs = Vec::with_capacity(fields.len());
    let mut rhs = Vec::with_capacity(fields.len());
    for (j, f) in fields {
        let e = ej_average(&grid, f, *j)?;
        let gamma = gamma_field(powers, family, *j)?;
        lhs.push(e.iter().zip(&gamma).map(|(a, b)| a * b).collect::<Vec<_>>());
        rhs.push(e);
    }
    let den = lp_lq(&grid, &rhs, powers.p(), q);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(lp_lq(&grid, &lhs, powers.p(), q) / den)
}

/// Largest [`c38_check`] ratio over seeded trials of uniform random fields,
/// one per covered level.
pub fn c38_trials(
    powers: &WeightPowers,
    family: &ReducingFamily,
    q: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let grid = *powers.grid();
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let fields: Vec<(u32, Vec<f64>)> = family
            .levels()
            .into_iter()
            .map(|j| (j, (0..grid.len()).map(|_| rng.gen::<f64>()).collect()))
            .collect();
        worst = worst.max(c38_check(powers, family, q, &fields)?);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// equivalence report

/// Ratio pairs tracked by the equivalence report, `(numerator, denominator)`.
pub const RATIO_PAIRS: [(NormKind, NormKind); 8] = [
    (NormKind::Star, NormKind::F),
    (NormKind::Square, NormKind::F),
    (NormKind::Gstar, NormKind::F),
    (NormKind::FAq, NormKind::F),
    (NormKind::StarAq, NormKind::F),
    (NormKind::StarStarAq, NormKind::F),
    (NormKind::GstarAq, NormKind::F),
    (NormKind::StarStarAq, NormKind::StarAq),
];

pub fn pair_name(pair: (NormKind, NormKind)) -> String {
    format!("{}/{}", pair.0, pair.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub config_id: String,
    pub member_id: usize,
    pub values: BTreeMap<NormKind, f64>,
}

impl NormReport {
    /// Ratio for a pair, `None` when either value is missing or the
    /// denominator vanishes.
    pub fn ratio(&self, pair: (NormKind, NormKind)) -> Option<f64> {
        let num = *self.values.get(&pair.0)?;
        let den = *self.values.get(&pair.1)?;
        (den > 0.0).then(|| num / den)
    }

    pub fn ratios(&self) -> BTreeMap<String, f64> {
        RATIO_PAIRS
            .iter()
            .filter_map(|&pr| self.ratio(pr).map(|r| (pair_name(pr), r)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAggregate {
    pub pair: String,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub config_id: String,
    pub params: SpaceParams,
    pub a_valid: bool,
    pub lambda_valid: bool,
    pub members: Vec<NormReport>,
    pub aggregates: Vec<PairAggregate>,
}

impl EquivalenceReport {
    pub fn aggregate(&self, pair: (NormKind, NormKind)) -> Option<&PairAggregate> {
        let name = pair_name(pair);
        self.aggregates.iter().find(|a| a.pair == name)
    }

    /// CSV `config_id,member_id,norm_kind,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config_id,member_id,norm_kind,value\n");
        for r in &self.members {
            for (k, v) in &r.values {
                out.push_str(&format!("{},{},{},{:e}\n", r.config_id, r.member_id, k, v));
            }
        }
        out
    }

    pub fn aggregates_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregates)?)
    }
}

pub fn aggregate_ratios(members: &[NormReport]) -> Vec<PairAggregate> {
    RATIO_PAIRS
        .iter()
        .filter_map(|&pr| {
            let rs: Vec<f64> = members.iter().filter_map(|m| m.ratio(pr)).collect();
            if rs.is_empty() {
                return None;
            }
            let max_ratio = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min_ratio = rs.iter().copied().fold(f64::INFINITY, f64::min);
            Some(PairAggregate {
                pair: pair_name(pr),
                max_ratio,
                min_ratio,
                spread: max_ratio / min_ratio,
            })
        })
        .collect()
}

/// All norms of every corpus member plus per-pair aggregates. `beta` is the
/// doubling exponent used for the theorem-range flags.
#[allow(clippy::too_many_arguments)]
pub fn equivalence_report(
    config_id: &str,
    corpus: &[SampledField],
    powers: &WeightPowers,
    family: Option<&ReducingFamily>,
    params: &SpaceParams,
    profile: &AnalysisProfile,
    kinds: &[NormKind],
    beta: f64,
) -> Result<EquivalenceReport> {
    let n = profile.grid().dim();
    let members = corpus
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(NormReport {
                config_id: config_id.to_string(),
                member_id: i,
                values: norms_of(f, powers, family, params, profile, kinds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquivalenceReport {
        config_id: config_id.to_string(),
        params: *params,
        a_valid: params.a_valid(n, beta),
        lambda_valid: params.lambda_valid(n, beta),
        aggregates: aggregate_ratios(&members),
        members,
    })
}
