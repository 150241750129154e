//! Reducing operators: one positive definite matrix per dyadic cube whose
//! vector norm is two-sided comparable to the `L^p` cube average of
//! `|W^{1/p}(x) z|`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DyadicCube, TorusGrid};
use crate::matrix::{apply_norm, matrix_power, operator_norm, vec_norm, CMatrix, HermitianPd};
use crate::weights::{conjugate_exponent, WeightPowers};

/// Number of sampled directions in the ellipsoid fit.
pub const JOHN_DIRECTIONS: usize = 128;
/// Duality-gap tolerance of the ellipsoid fit.
pub const JOHN_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducingMethod {
    Gram2,
    John,
}

impl ReducingMethod {
    pub fn name(self) -> &'static str {
        match self {
            ReducingMethod::Gram2 => "gram2",
            ReducingMethod::John => "john",
        }
    }
}

impl std::str::FromStr for ReducingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram2" => Ok(Self::Gram2),
            "john" => Ok(Self::John),
            other => Err(Error::config("method", format!("unknown method `{other}`"))),
        }
    }
}

/// Operators of one dyadic level, indexed by linear cube index.
#[derive(Clone, Debug)]
struct LevelOps {
    ops: Vec<CMatrix>,
    inv: Vec<CMatrix>,
    labels: Vec<usize>,
}

/// Reducing operators `A_Q` on a set of dyadic levels.
#[derive(Clone, Debug)]
pub struct ReducingFamily {
    grid: TorusGrid,
    m: usize,
    p: f64,
    method: ReducingMethod,
    seed: u64,
    levels: BTreeMap<u32, LevelOps>,
    constants: Option<(f64, f64)>,
}

impl ReducingFamily {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn method(&self) -> ReducingMethod {
        self.method
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn levels(&self) -> Vec<u32> {
        self.levels.keys().copied().collect()
    }
    pub fn covers(&self, level: u32) -> bool {
        self.levels.contains_key(&level)
    }

    /// `(C1, C2)` recorded by the last [`verify_reducing`] run.
    pub fn constants(&self) -> Option<(f64, f64)> {
        self.constants
    }

    fn level(&self, level: u32) -> &LevelOps {
        self.levels
            .get(&level)
            .unwrap_or_else(|| panic!("family does not cover level {level}"))
    }

    /// `A_Q` for the cube `Q`.
    pub fn op(&self, q: &DyadicCube) -> &CMatrix {
        &self.level(q.level).ops[q.linear_index(self.grid.dim())]
    }

    /// `A_Q^{-1}`.
    pub fn op_inv(&self, q: &DyadicCube) -> &CMatrix {
        &self.level(q.level).inv[q.linear_index(self.grid.dim())]
    }

    /// `A_Q` for the level-`level` cube containing sample `i`.
    pub fn op_at(&self, level: u32, i: usize) -> &CMatrix {
        let l = self.level(level);
        &l.ops[l.labels[i]]
    }

    /// `A_Q^{-1}` for the level-`level` cube containing sample `i`.
    pub fn op_inv_at(&self, level: u32, i: usize) -> &CMatrix {
        let l = self.level(level);
        &l.inv[l.labels[i]]
    }

    /// CSV with header `level,cube_index,row,col,re,im`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,cube_index,row,col,re,im\n");
        for (level, l) in &self.levels {
            for (k, a) in l.ops.iter().enumerate() {
                for r in 0..self.m {
                    for c in 0..self.m {
                        let z = a[(r, c)];
                        s.push_str(&format!("{level},{k},{r},{c},{:e},{:e}\n", z.re, z.im));
                    }
                }
            }
        }
        s
    }
}

/// Seeded uniformly distributed unit vectors in `C^m`.
pub fn random_unit_vectors(m: usize, count: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let z: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(gaussian(&mut rng), gaussian(&mut rng)))
                .collect();
            let norm = vec_norm(&z);
            if norm > 1e-8 {
                break z.into_iter().map(|c| c / norm).collect();
            }
        })
        .collect()
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `rho_Q(z) = (mean_{x in Q} |W^{1/p}(x) z|^p)^{1/p}`.
pub fn cube_norm(powers: &WeightPowers, samples: &[usize], z: &[Complex64]) -> f64 {
    let p = powers.p();
    let s: f64 = samples
        .iter()
        .map(|&x| apply_norm(powers.root(x), z).powf(p))
        .sum();
    (s / samples.len() as f64).powf(1.0 / p)
}

fn gram2_op(powers: &WeightPowers, samples: &[usize]) -> Result<CMatrix> {
    let m = powers.m();
    let mut acc = CMatrix::zeros(m, m);
    for &x in samples {
        let r = powers.root(x);
        acc += r * r;
    }
    acc /= Complex64::new(samples.len() as f64, 0.0);
    let herm = HermitianPd::new((&acc + acc.adjoint()) * Complex64::new(0.5, 0.0))
        .map_err(|_| Error::WeightNotInvertible)?;
    Ok(matrix_power(&herm, 0.5)
        .map_err(|_| Error::WeightNotInvertible)?
        .into_matrix())
}

#[cfg(test)]
fn outer_sum(points: &[Vec<Complex64>], weights: &[f64], m: usize) -> CMatrix {
    let mut x = CMatrix::zeros(m, m);
    for (pt, &u) in points.iter().zip(weights) {
        if u == 0.0 {
            continue;
        }
        for r in 0..m {
            for c in 0..m {
                x[(r, c)] += pt[r] * pt[c].conj() * u;
            }
        }
    }
    x
}

fn quad_form(a: &CMatrix, v: &[Complex64]) -> f64 {
    let m = v.len();
    let mut s = Complex64::new(0.0, 0.0);
    for r in 0..m {
        let mut row = Complex64::new(0.0, 0.0);
        for c in 0..m {
            row += a[(r, c)] * v[c];
        }
        s += v[r].conj() * row;
    }
    s.re
}

/// Minimum-volume centered Hermitian ellipsoid `{z : z^* H z <= 1}`
/// enclosing the circled hull of `points`.
///
/// `H` is parametrized by its `m^2` real coordinates, in which every
/// containment constraint `x^* H x <= 1` is linear, and `min -log det H` is
/// solved by a log-barrier Newton method to duality gap `tol`. Constraints
/// enter through an active set: the fit runs on the longest points and is
/// repeated with the worst violators added until every point satisfies
/// `x^* H x <= 1 + tol`.
pub fn min_volume_ellipsoid(points: &[Vec<Complex64>], tol: f64) -> Result<CMatrix> {
    let k = points.len();
    let m = points.first().map_or(0, |p| p.len());
    if k == 0 || m == 0 || points.iter().any(|p| p.len() != m) {
        return Err(Error::DegenerateWeight);
    }
    let span = CMatrix::from_fn(k, m, |i, j| points[i][j]);
    if span.rank(1e-12 * span.norm().max(1.0)) < m {
        // points do not span C^m: the ellipsoid is unbounded
        return Err(Error::DegenerateWeight);
    }
    let basis = hermitian_basis(m);
    let dim = basis.len();
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|x| basis.iter().map(|b| quad_form(b, x)).collect())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    let len2: Vec<f64> = points.iter().map(|x| vec_norm(x).powi(2)).collect();
    order.sort_by(|&a, &b| len2[b].total_cmp(&len2[a]));
    let mut active: Vec<usize> = order.iter().copied().take(2 * dim).collect();
    loop {
        let sub = CMatrix::from_fn(active.len(), m, |i, j| points[active[i]][j]);
        if sub.rank(1e-12 * sub.norm().max(1.0)) < m {
            let extra = order.iter().copied().find(|i| !active.contains(i));
            match extra {
                Some(i) => {
                    active.push(i);
                    continue;
                }
                None => return Err(Error::DegenerateWeight),
            }
        }
        let sub_rows: Vec<&[f64]> = active.iter().map(|&i| rows[i].as_slice()).collect();
        let h = barrier_mvee(&sub_rows, &basis, m, tol)?;
        let mut viol: Vec<(usize, f64)> = (0..k)
            .filter(|i| !active.contains(i))
            .map(|i| (i, dot(&rows[i], &h)))
            .filter(|&(_, v)| v > 1.0 + tol)
            .collect();
        if viol.is_empty() {
            return Ok(compose(&basis, &h, m));
        }
        viol.sort_by(|a, b| b.1.total_cmp(&a.1));
        active.extend(viol.iter().take(dim).map(|&(i, _)| i));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn compose(basis: &[CMatrix], h: &[f64], m: usize) -> CMatrix {
    let mut out = CMatrix::zeros(m, m);
    for (c, b) in h.iter().zip(basis) {
        out.zip_apply(b, |o, v| *o += v * *c);
    }
    out
}

/// Barrier path following on the constraints `rows . h <= 1`.
fn barrier_mvee(rows: &[&[f64]], basis: &[CMatrix], m: usize, tol: f64) -> Result<Vec<f64>> {
    let dim = basis.len();
    let k = rows.len();
    let top = rows
        .iter()
        .map(|r| r[..m].iter().sum::<f64>())
        .fold(0.0, f64::max);
    let mut h = vec![0.0; dim];
    for v in h.iter_mut().take(m) {
        *v = 0.5 / top;
    }
    let barrier = |h: &[f64], t: f64| -> f64 {
        let mut val = 0.0;
        for r in rows {
            let s = 1.0 - dot(r, h);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            val -= s.ln();
        }
        match compose(basis, h, m).cholesky() {
            Some(ch) => {
                let logdet: f64 = ch.l().diagonal().iter().map(|z| 2.0 * z.re.ln()).sum();
                val - t * logdet
            }
            None => f64::INFINITY,
        }
    };
    let mut grad = DVector::<f64>::zeros(dim);
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let mut t = 1.0;
    loop {
        for _ in 0..100 {
            let hinv = compose(basis, &h, m)
                .try_inverse()
                .ok_or(Error::DegenerateWeight)?;
            let proj: Vec<CMatrix> = basis.iter().map(|b| &hinv * b).collect();
            grad.fill(0.0);
            hess.fill(0.0);
            for a in 0..dim {
                grad[a] = -t * proj[a].trace().re;
                for b in a..dim {
                    let mut tr = 0.0;
                    for r in 0..m {
                        for c in 0..m {
                            tr += (proj[a][(r, c)] * proj[b][(c, r)]).re;
                        }
                    }
                    hess[(a, b)] = t * tr;
                }
            }
            for r in rows {
                let inv_s = 1.0 / (1.0 - dot(r, &h));
                for a in 0..dim {
                    let ra = r[a] * inv_s;
                    grad[a] += ra;
                    for b in a..dim {
                        hess[(a, b)] += ra * r[b] * inv_s;
                    }
                }
            }
            for a in 0..dim {
                for b in 0..a {
                    hess[(a, b)] = hess[(b, a)];
                }
            }
            let ch = hess.clone().cholesky().ok_or(Error::DegenerateWeight)?;
            let step = -ch.solve(&grad);
            let decrement = -grad.dot(&step);
            if decrement <= 1e-9 {
                break;
            }
            let f0 = barrier(&h, t);
            let mut alpha = 1.0;
            let mut cand = h.clone();
            loop {
                for (c, (a, b)) in cand.iter_mut().zip(h.iter().zip(step.iter())) {
                    *c = a + alpha * b;
                }
                if barrier(&cand, t) <= f0 - 0.25 * alpha * decrement {
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    return Ok(h);
                }
            }
            h = cand;
        }
        if k as f64 / t <= tol {
            return Ok(h);
        }
        t *= 50.0;
    }
}

/// Real basis of the `m x m` Hermitian matrices: `E_rr`, then for `r < s`
/// the pairs `E_rs + E_sr` and `i (E_rs - E_sr)`.
fn hermitian_basis(m: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(m * m);
    for r in 0..m {
        let mut b = CMatrix::zeros(m, m);
        b[(r, r)] = Complex64::new(1.0, 0.0);
        out.push(b);
    }
    for r in 0..m {
        for s in r + 1..m {
            let mut re = CMatrix::zeros(m, m);
            re[(r, s)] = Complex64::new(1.0, 0.0);
            re[(s, r)] = Complex64::new(1.0, 0.0);
            out.push(re);
            let mut im = CMatrix::zeros(m, m);
            im[(r, s)] = Complex64::new(0.0, 1.0);
            im[(s, r)] = Complex64::new(0.0, -1.0);
            out.push(im);
        }
    }
    out
}

/// Passes of the ellipsoid fit; each pass draws its directions in the frame
/// whitened by the previous estimate.
const JOHN_PASSES: usize = 2;

fn john_op(powers: &WeightPowers, samples: &[usize], dirs: &[Vec<Complex64>]) -> Result<CMatrix> {
    let m = powers.m();
    // the quadratic proxy makes the sampled body nearly round
    let mut frame = gram2_op(powers, samples)?;
    for _ in 0..JOHN_PASSES {
        frame = john_pass(powers, samples, dirs, &frame)?;
    }
    debug_assert_eq!(frame.nrows(), m);
    Ok(frame)
}

fn john_pass(
    powers: &WeightPowers,
    samples: &[usize],
    dirs: &[Vec<Complex64>],
    frame: &CMatrix,
) -> Result<CMatrix> {
    let finv = frame.clone().try_inverse().ok_or(Error::WeightNotInvertible)?;
    let mul = |a: &CMatrix, v: &[Complex64]| -> Vec<Complex64> {
        (0..v.len())
            .map(|r| (0..v.len()).map(|c| a[(r, c)] * v[c]).sum())
            .collect()
    };
    let vs: Vec<Vec<Complex64>> = dirs
        .iter()
        .map(|u| {
            let v = mul(&finv, u);
            let norm = vec_norm(&v);
            v.into_iter().map(|c| c / norm).collect()
        })
        .collect();
    let rhos: Vec<f64> = vs.iter().map(|v| cube_norm(powers, samples, v)).collect();
    let top = rhos.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) || rhos.iter().any(|&r| !(r > 1e-14 * top)) {
        return Err(Error::WeightNotInvertible);
    }
    // boundary points of the rho-ball, expressed in the whitened frame
    let points: Vec<Vec<Complex64>> = vs
        .iter()
        .zip(&rhos)
        .map(|(v, &r)| mul(frame, v).into_iter().map(|c| c / r).collect())
        .collect();
    let hy = min_volume_ellipsoid(&points, JOHN_TOL)?;
    let h = frame.adjoint() * hy * frame;
    let h = HermitianPd::new((&h + h.adjoint()) * Complex64::new(0.5, 0.0))
        .map_err(|_| Error::WeightNotInvertible)?;
    let a = matrix_power(&h, 0.5)?.into_matrix();
    // anchor the worst sampled direction: max rho/|A v| = 1
    let scale = vs
        .iter()
        .zip(&rhos)
        .map(|(v, &r)| r / apply_norm(&a, v))
        .fold(0.0, f64::max);
    Ok(a * Complex64::new(scale, 0.0))
}

/// Fit directions for the ellipsoid method: the standard basis plus
/// [`JOHN_DIRECTIONS`] seeded random unit vectors.
pub fn john_directions(m: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let mut dirs = Vec::with_capacity(m + JOHN_DIRECTIONS);
    for b in 0..m {
        let mut e = vec![Complex64::new(0.0, 0.0); m];
        e[b] = Complex64::new(1.0, 0.0);
        dirs.push(e);
    }
    dirs.extend(random_unit_vectors(m, JOHN_DIRECTIONS, seed));
    dirs
}

/// Build `A_Q` for every dyadic cube at `levels`.
pub fn build_reducing(
    powers: &WeightPowers,
    method: ReducingMethod,
    levels: &[u32],
    seed: u64,
) -> Result<ReducingFamily> {
    let grid = *powers.grid();
    let dirs = john_directions(powers.m(), seed);
    let mut out = BTreeMap::new();
    for &level in levels {
        if level > grid.depth() {
            return Err(Error::config(
                "levels",
                format!("level {level} exceeds grid depth {}", grid.depth()),
            ));
        }
        let cubes = grid.cubes(level);
        let ops = cubes
            .par_iter()
            .map(|q| {
                let samples = q.samples(&grid);
                let a = match method {
                    ReducingMethod::Gram2 => gram2_op(powers, &samples)?,
                    ReducingMethod::John => john_op(powers, &samples, &dirs)?,
                };
                let inv = a.clone().try_inverse().ok_or(Error::WeightNotInvertible)?;
                Ok((a, inv))
            })
            .collect::<Result<Vec<_>>>()?;
        let (ops, inv) = ops.into_iter().unzip();
        out.insert(
            level,
            LevelOps {
                ops,
                inv,
                labels: grid.cube_labels(level),
            },
        );
    }
    Ok(ReducingFamily {
        grid,
        m: powers.m(),
        p: powers.p(),
        method,
        seed,
        levels: out,
        constants: None,
    })
}

/// Verification summary, serialized as `{C1, C2, method, p, trials, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub method: ReducingMethod,
    pub p: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Extreme ratios `rho_Q(z) / |A_Q z|` over `trials` seeded unit vectors and
/// every cube of the family. Records the constants on the family.
pub fn verify_reducing(
    family: &mut ReducingFamily,
    powers: &WeightPowers,
    trials: usize,
    seed: u64,
) -> VerificationReport {
    let grid = family.grid;
    let zs = random_unit_vectors(family.m, trials.max(1), seed);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (&level, l) in &family.levels {
        let cubes = grid.cubes(level);
        let per: Vec<(f64, f64)> = cubes
            .par_iter()
            .zip(l.ops.par_iter())
            .map(|(q, a)| {
                let samples = q.samples(&grid);
                zs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), z| {
                    let r = cube_norm(powers, &samples, z) / apply_norm(a, z);
                    (lo.min(r), hi.max(r))
                })
            })
            .collect();
        for (a, b) in per {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    family.constants = Some((lo, hi));
    VerificationReport {
        c1: lo,
        c2: hi,
        method: family.method,
        p: family.p,
        trials: zs.len(),
        seed,
    }
}

fn wrapped_index_distance(a: &DyadicCube, b: &DyadicCube, n: usize) -> f64 {
    let per = 1i64 << a.level;
    (0..n)
        .map(|ax| {
            let d = (a.index[ax] as i64 - b.index[ax] as i64).rem_euclid(per);
            let d = d.min(per - d) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn product_op_norm(a: &CMatrix, b: &CMatrix) -> f64 {
    operator_norm(&(a * b))
}

/// Number of seeded pairs scanned on every level finer than the coarsest.
pub const WEAK_DOUBLING_PAIRS: usize = 512;

/// Empirical weak doubling order `max log||A_k A_l^{-1}|| / log(1+|k-l|)`.
pub fn weak_doubling_order(family: &ReducingFamily, seed: u64) -> f64 {
    let grid = family.grid;
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let mut coarsest = true;
    for (&level, l) in &family.levels {
        let cubes = grid.cubes(level);
        if cubes.len() < 2 {
            continue;
        }
        let pairs: Vec<(usize, usize)> = if coarsest {
            coarsest = false;
            (0..cubes.len())
                .flat_map(|a| (0..cubes.len()).map(move |b| (a, b)))
                .filter(|(a, b)| a != b)
                .collect()
        } else {
            (0..WEAK_DOUBLING_PAIRS)
                .map(|_| {
                    let a = rng.gen_range(0..cubes.len());
                    let mut b = rng.gen_range(0..cubes.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    (a, b)
                })
                .collect()
        };
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let dist = wrapped_index_distance(&cubes[a], &cubes[b], n);
                let norm = product_op_norm(&l.ops[a], &l.inv[b]);
                norm.ln() / (1.0 + dist).ln()
            })
            .collect();
        best = vals.into_iter().fold(best, f64::max);
    }
    best
}

/// Number of seeded cube pairs in [`strong_doubling_check`].
pub const STRONG_DOUBLING_PAIRS: usize = 4096;

/// Empirical constant of the strong doubling bound
/// `||A_Q A_P^{-1}||^p <= C max{(l(P)/l(Q))^n, (l(Q)/l(P))^(beta-n)} (1 + |x_Q - x_P| / max l)^beta`
/// over seeded cube pairs across the family's levels (plus `Q = P`).
pub fn strong_doubling_check(family: &ReducingFamily, beta: f64, seed: u64) -> f64 {
    let grid = family.grid;
    let n = grid.dim() as f64;
    let p = family.p;
    let levels = family.levels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng| -> DyadicCube {
        let level = levels[rng.gen_range(0..levels.len())];
        let per = 1usize << level;
        let mut index = [0usize; 2];
        for a in index.iter_mut().take(grid.dim()) {
            *a = rng.gen_range(0..per);
        }
        DyadicCube { level, index }
    };
    let mut pairs: Vec<(DyadicCube, DyadicCube)> = levels
        .iter()
        .map(|&level| {
            let q = DyadicCube { level, index: [0, 0] };
            (q, q)
        })
        .collect();
    for _ in 0..STRONG_DOUBLING_PAIRS {
        let q = pick(&mut rng);
        let p = pick(&mut rng);
        pairs.push((q, p));
    }
    pairs
        .par_iter()
        .map(|(q, pc)| {
            let lhs = product_op_norm(family.op(q), family.op_inv(pc)).powf(p);
            let (lq, lp) = (q.edge(), pc.edge());
            let scale = (lp / lq).powf(n).max((lq / lp).powf(beta - n));
            let cq = q.center(&grid);
            let cp = pc.center(&grid);
            let mut d2 = 0.0;
            for a in 0..grid.dim() {
                let d = (cq[a] - cp[a]).rem_euclid(1.0);
                let d = d.min(1.0 - d);
                d2 += d * d;
            }
            let rhs = scale * (1.0 + d2.sqrt() / lq.max(lp)).powf(beta);
            lhs / rhs
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// One row of [`reducing_bound_scan`]; `eta = None` marks the essential sup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub eta: Option<f64>,
    pub value: f64,
}

/// Number of exponents in the `eta` grid of [`reducing_bound_scan`].
pub const ETA_STEPS: usize = 8;

/// `sup_Q mean_{x in Q} ||A_Q W^{-1/p}(x)||^eta` for `eta` on an even grid of
/// `(0, p']` when `p > 1`; `sup_Q max_{x in Q} ||A_Q W^{-1/p}(x)||` otherwise.
pub fn reducing_bound_scan(family: &ReducingFamily, powers: &WeightPowers) -> Vec<BoundRow> {
    let grid = family.grid;
    let p = family.p;
    let etas: Vec<Option<f64>> = if p > 1.0 {
        let pp = conjugate_exponent(p);
        (1..=ETA_STEPS)
            .map(|k| Some(pp * k as f64 / ETA_STEPS as f64))
            .collect()
    } else {
        vec![None]
    };
    // per cube: norms ||A_Q W^{-1/p}(x)|| for x in Q
    let mut per_cube: Vec<Vec<f64>> = Vec::new();
    for &level in family.levels.keys() {
        let cubes = grid.cubes(level);
        let norms: Vec<Vec<f64>> = cubes
            .par_iter()
            .map(|q| {
                let a = family.op(q);
                q.samples(&grid)
                    .into_iter()
                    .map(|x| product_op_norm(a, powers.inv_root(x)))
                    .collect()
            })
            .collect();
        per_cube.extend(norms);
    }
    etas.into_iter()
        .map(|eta| {
            let value = per_cube
                .iter()
                .map(|v| match eta {
                    Some(e) => v.iter().map(|s| s.powf(e)).sum::<f64>() / v.len() as f64,
                    None => v.iter().cloned().fold(0.0, f64::max),
                })
                .fold(0.0, f64::max);
            BoundRow { eta, value }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::HermitianPd;
    use crate::weights::{generate_weight, MatrixWeightField, WeightSpec};

    fn random_field(grid: TorusGrid, m: usize, seed: u64) -> MatrixWeightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.len())
            .map(|_| crate::matrix::tests::random_spd(m, &mut rng))
            .collect();
        MatrixWeightField::from_values(grid, vals).unwrap()
    }

    fn all_levels(grid: &TorusGrid) -> Vec<u32> {
        (0..=grid.depth()).collect()
    }

    #[test]
    fn identity_gives_identity() {
        let g = TorusGrid::new(1, 5).unwrap();
        let w = MatrixWeightField::constant(g, HermitianPd::identity(2));
        for p in [0.5, 2.0, 3.0] {
            let pw = w.powers(p).unwrap();
            for method in [ReducingMethod::Gram2, ReducingMethod::John] {
                let mut fam = build_reducing(&pw, method, &all_levels(&g), 1).unwrap();
                for level in fam.levels() {
                    for q in g.cubes(level) {
                        let d = fam.op(&q) - CMatrix::identity(2, 2);
                        assert!(crate::matrix::frobenius(&d) < 1e-6, "{method:?} p={p}");
                    }
                }
                let r = verify_reducing(&mut fam, &pw, 50, 2);
                assert!((r.c1 - 1.0).abs() < 1e-6 && (r.c2 - 1.0).abs() < 1e-6);
                assert!(weak_doubling_order(&fam, 3).abs() < 1e-6);
                assert!((strong_doubling_check(&fam, 1.0, 4) - 1.0).abs() < 1e-6);
                for row in reducing_bound_scan(&fam, &pw) {
                    assert!((row.value - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn constant_weight_gram2_is_root() {
        let g = TorusGrid::new(2, 3).unwrap();
        let w0 = HermitianPd::from_real_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let w = MatrixWeightField::constant(g, w0.clone());
        for p in [0.5, 2.0, 4.0] {
            let pw = w.powers(p).unwrap();
            let fam = build_reducing(&pw, ReducingMethod::Gram2, &[0, 1, 3], 0).unwrap();
            let expect = w0.power(1.0 / p).unwrap().into_matrix();
            let q = DyadicCube { level: 1, index: [1, 0] };
            assert!(crate::matrix::frobenius(&(fam.op(&q) - &expect)) < 1e-10);
            let rows = reducing_bound_scan(&fam, &pw);
            assert!(rows.iter().all(|r| (r.value - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn gram2_exact_at_p2() {
        let g = TorusGrid::new(1, 6).unwrap();
        for m in [2, 3] {
            let w = random_field(g, m, 10 + m as u64);
            let pw = w.powers(2.0).unwrap();
            let mut fam = build_reducing(&pw, ReducingMethod::Gram2, &all_levels(&g), 0).unwrap();
            // direct quadratic-form oracle on a few cubes
            for z in random_unit_vectors(m, 100, 5) {
                let q = DyadicCube { level: 2, index: [3, 0] };
                let samples = q.samples(&g);
                let mut direct = 0.0;
                for &x in &samples {
                    let v = &w.at(x).as_matrix().clone();
                    direct += quad_form(v, &z);
                }
                let direct = (direct / samples.len() as f64).sqrt();
                assert!((direct - apply_norm(fam.op(&q), &z)).abs() < 1e-9 * direct);
            }
            let r = verify_reducing(&mut fam, &pw, 100, 7);
            assert!((r.c1 - 1.0).abs() < 1e-9 && (r.c2 - 1.0).abs() < 1e-9);
            assert_eq!(fam.constants(), Some((r.c1, r.c2)));
        }
    }

    /// Smooth admissible weight with seeded random exponents and a seeded
    /// constant conjugation.
    fn random_smooth(grid: TorusGrid, m: usize, seed: u64) -> MatrixWeightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let exponents: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.45..0.0)).collect();
        let spec = WeightSpec::Rotating {
            exponents,
            center: vec![0.25],
            rate: rng.gen_range(0.5..2.0),
        };
        let c = crate::matrix::tests::random_spd(m, &mut rng);
        generate_weight(&spec, grid, m)
            .unwrap()
            .try_map(|w| w.conjugated(c.as_matrix()))
            .unwrap()
    }

    #[test]
    fn john_within_sqrt_m() {
        let g = TorusGrid::new(1, 6).unwrap();
        for m in [2, 3] {
            let w = random_smooth(g, m, 40 + m as u64);
            for p in [0.5, 1.0, 3.0] {
                let pw = w.powers(p).unwrap();
                let mut fam = build_reducing(&pw, ReducingMethod::John, &all_levels(&g), 9).unwrap();
                let r = verify_reducing(&mut fam, &pw, 100, 11);
                let bound = (m as f64).sqrt() * (1.0 + 1e-3);
                assert!(r.c2 / r.c1 <= bound, "m={m} p={p}: {} {}", r.c1, r.c2);
            }
        }
    }

    #[test]
    fn john_exact_for_constant_weight() {
        let g = TorusGrid::new(1, 4).unwrap();
        let w0 = HermitianPd::from_real_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let w = MatrixWeightField::constant(g, w0);
        let pw = w.powers(0.5).unwrap();
        let mut fam = build_reducing(&pw, ReducingMethod::John, &[0, 2, 4], 1).unwrap();
        let r = verify_reducing(&mut fam, &pw, 100, 2);
        assert!((r.c1 - 1.0).abs() < 1e-6 && (r.c2 - 1.0).abs() < 1e-6, "{r:?}");
    }

    /// Textbook barycentric MVEE iteration, used as an independent oracle.
    fn khachiyan_reference(points: &[Vec<Complex64>], tol: f64) -> CMatrix {
        let m = points[0].len();
        let d = m as f64;
        let mut u = vec![1.0 / points.len() as f64; points.len()];
        loop {
            let xinv = outer_sum(points, &u, m).try_inverse().unwrap();
            let (j, mj) = points
                .iter()
                .map(|p| quad_form(&xinv, p))
                .enumerate()
                .fold((0, 0.0), |b, (i, v)| if v > b.1 { (i, v) } else { b });
            if mj / d - 1.0 <= tol {
                return xinv / Complex64::new(d, 0.0);
            }
            let alpha = (mj / d - 1.0) / (mj - 1.0);
            u.iter_mut().for_each(|v| *v *= 1.0 - alpha);
            u[j] += alpha;
        }
    }

    #[test]
    fn barrier_matches_khachiyan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in [2, 3] {
            let pts: Vec<Vec<Complex64>> = random_unit_vectors(m, 12, m as u64)
                .into_iter()
                .map(|v| {
                    let s = rng.gen_range(0.5..2.0);
                    v.into_iter().map(|c| c * s).collect()
                })
                .collect();
            let a = min_volume_ellipsoid(&pts, JOHN_TOL).unwrap();
            let b = khachiyan_reference(&pts, 1e-6);
            let rel = crate::matrix::frobenius(&(&a - &b)) / crate::matrix::frobenius(&b);
            assert!(rel < 1e-3, "m={m} rel={rel}");
        }
    }

    #[test]
    fn degenerate_points_rejected() {
        let e1 = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(min_volume_ellipsoid(&[e1.clone(), e1], 1e-7).is_err());
    }

    #[test]
    fn ellipsoid_of_basis_is_ball() {
        let pts = john_directions(3, 0);
        let h = min_volume_ellipsoid(&pts[..3], 1e-10).unwrap();
        assert!(crate::matrix::frobenius(&(h - CMatrix::identity(3, 3))) < 1e-8);
    }

    #[test]
    fn ellipsoid_contains_points() {
        let pts = random_unit_vectors(2, 40, 3)
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.into_iter().map(|c| c * (1.0 + 0.1 * (i % 5) as f64)).collect())
            .collect::<Vec<Vec<Complex64>>>();
        let h = min_volume_ellipsoid(&pts, 1e-9).unwrap();
        for p in &pts {
            assert!(quad_form(&h, p) <= 1.0 + 1e-7);
        }
    }

    #[test]
    fn gram2_unitary_equivariance() {
        let g = TorusGrid::new(1, 5).unwrap();
        let w = random_field(g, 2, 77);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(s, 0.0),
                Complex64::new(0.0, s),
                Complex64::new(0.0, s),
                Complex64::new(s, 0.0),
            ],
        );
        let rotated = w.try_map(|a| a.conjugated(&u)).unwrap();
        let pw = w.powers(2.0).unwrap();
        let pr = rotated.powers(2.0).unwrap();
        let levels = all_levels(&g);
        let fa = build_reducing(&pw, ReducingMethod::Gram2, &levels, 0).unwrap();
        let fb = build_reducing(&pr, ReducingMethod::Gram2, &levels, 0).unwrap();
        for z in random_unit_vectors(2, 10, 1) {
            let uz: Vec<Complex64> = (0..2).map(|r| u[(r, 0)] * z[0] + u[(r, 1)] * z[1]).collect();
            for q in g.cubes(3) {
                let lhs = apply_norm(fb.op(&q), &z);
                let rhs = apply_norm(fa.op(&q), &uz);
                assert!((lhs - rhs).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn diagonal_power_doubling_orders_finite() {
        let g = TorusGrid::new(1, 8).unwrap();
        let spec = WeightSpec::DiagonalPower {
            exponents: vec![0.5, -0.3],
            center: vec![0.0],
        };
        let w = generate_weight(&spec, g, 2).unwrap();
        let pw = w.powers(2.0).unwrap();
        let fam = build_reducing(&pw, ReducingMethod::Gram2, &[2, 3, 4, 5, 6], 0).unwrap();
        let beta = crate::weights::doubling_exponent(&pw, 0);
        let r = weak_doubling_order(&fam, 5);
        assert!(r.is_finite() && r >= 0.0);
        assert!(r <= beta / 2.0 + 0.2, "r={r} beta={beta}");
        assert!(strong_doubling_check(&fam, beta, 6).is_finite());
    }

    #[test]
    fn csv_and_json_shapes() {
        let g = TorusGrid::new(1, 3).unwrap();
        let w = MatrixWeightField::constant(g, HermitianPd::identity(2));
        let pw = w.powers(2.0).unwrap();
        let mut fam = build_reducing(&pw, ReducingMethod::Gram2, &[1], 0).unwrap();
        let csv = fam.to_csv();
        assert!(csv.starts_with("level,cube_index,row,col,re,im\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
        let rep = verify_reducing(&mut fam, &pw, 3, 0);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["C1", "C2", "method", "p", "trials", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["method"], "gram2");
    }

    #[test]
    fn rejects_levels_past_depth() {
        let g = TorusGrid::new(1, 3).unwrap();
        let w = MatrixWeightField::constant(g, HermitianPd::identity(1));
        let pw = w.powers(2.0).unwrap();
        assert!(build_reducing(&pw, ReducingMethod::Gram2, &[4], 0).is_err());
    }
}
