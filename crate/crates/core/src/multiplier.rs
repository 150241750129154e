//! Fourier multipliers: Hörmander constants on dyadic lattice shells and
//! spectral application.
//!
//! Symbols are functions of `xi = 2 pi k` for integer frequencies `k`, the
//! normalization matching `f^(xi) = int f(x) e^{-i x xi} dx`. Shell sums and
//! derivatives are taken in integer-frequency units, i.e. for
//! `k -> m(2 pi k)`, with one unit of volume per lattice point.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{convolve_symbol, SampledField, TorusGrid};
use crate::lp::AnalysisProfile;
use crate::norms::{norm_F, SpaceParams};
use crate::weights::WeightPowers;

type SymbolFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Largest smoothness order handled by finite differences.
pub const MAX_FD_ORDER: u32 = 3;

#[derive(Clone)]
pub enum SymbolKind {
    Identity,
    /// `-i xi_d / |xi|`, `d` counted from 1.
    Riesz { d: usize },
    /// `|xi|^{-s}`.
    Power,
    /// Evaluated pointwise at `xi`; derivatives by finite differences.
    Custom { name: String, eval: SymbolFn },
}

impl fmt::Debug for SymbolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolKind::Identity => write!(f, "Identity"),
            SymbolKind::Riesz { d } => write!(f, "Riesz({d})"),
            SymbolKind::Power => write!(f, "Power"),
            SymbolKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Multiplier symbol of order `s` with smoothness `ell`.
#[derive(Clone, Debug)]
pub struct MultiplierSymbol {
    kind: SymbolKind,
    s: f64,
    ell: u32,
}

/// JSON form `{kind, s, ell, params}`. A missing `ell` is filled in by the
/// caller before [`MultiplierSymbol::from_spec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolSpec {
    pub kind: String,
    #[serde(default)]
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<u32>,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl MultiplierSymbol {
    pub fn identity(ell: u32) -> Result<Self> {
        Self::checked(SymbolKind::Identity, 0.0, ell)
    }

    pub fn riesz(d: usize, ell: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("params.d", "Riesz index counts from 1"));
        }
        Self::checked(SymbolKind::Riesz { d }, 0.0, ell)
    }

    /// `|xi|^{-s}`, a symbol of order `s`.
    pub fn power(s: f64, ell: u32) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::config("s", "must be finite"));
        }
        Self::checked(SymbolKind::Power, s, ell)
    }

    pub fn custom<F>(name: &str, s: f64, ell: u32, eval: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        if ell > MAX_FD_ORDER {
            return Err(Error::config("ell", format!("finite differences support ell <= {MAX_FD_ORDER}")));
        }
        Self::checked(
            SymbolKind::Custom { name: name.to_string(), eval: Arc::new(eval) },
            s,
            ell,
        )
    }

    fn checked(kind: SymbolKind, s: f64, ell: u32) -> Result<Self> {
        if ell < 1 {
            return Err(Error::config("ell", "must be at least 1"));
        }
        Ok(Self { kind, s, ell })
    }

    /// Pointwise product, of order `s1 + s2` and smoothness `min(ell1, ell2)`.
    pub fn product(&self, other: &Self) -> Self {
        let (a, b) = (self.clone(), other.clone());
        Self {
            kind: SymbolKind::Custom {
                name: format!("{}*{}", self.name(), other.name()),
                eval: Arc::new(move |xi| a.eval(xi) * b.eval(xi)),
            },
            s: self.s + other.s,
            ell: self.ell.min(other.ell),
        }
    }

    pub fn kind(&self) -> &SymbolKind {
        &self.kind
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn name(&self) -> String {
        match &self.kind {
            SymbolKind::Identity => "identity".into(),
            SymbolKind::Riesz { d } => format!("riesz({d})"),
            SymbolKind::Power => format!("power({})", self.s),
            SymbolKind::Custom { name, .. } => name.clone(),
        }
    }

    pub fn from_spec(spec: &SymbolSpec) -> Result<Self> {
        let ell = spec.ell.ok_or_else(|| Error::config("ell", "symbol needs an ell"))?;
        match spec.kind.as_str() {
            "identity" => Self::identity(ell),
            "riesz" => {
                let d = spec
                    .params
                    .get("d")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| Error::config("params.d", "riesz needs an integer d"))?;
                Self::riesz(d as usize, ell)
            }
            "power" => Self::power(spec.s, ell),
            "custom" => Err(Error::config("kind", "custom symbols are constructed in code")),
            other => Err(Error::config("kind", format!("unknown symbol `{other}`"))),
        }
    }

    pub fn to_spec(&self) -> SymbolSpec {
        let (kind, params) = match &self.kind {
            SymbolKind::Identity => ("identity".to_string(), serde_json::Value::Null),
            SymbolKind::Riesz { d } => ("riesz".to_string(), serde_json::json!({ "d": d })),
            SymbolKind::Power => ("power".to_string(), serde_json::Value::Null),
            SymbolKind::Custom { name, .. } => ("custom".to_string(), serde_json::json!({ "name": name })),
        };
        SymbolSpec { kind, s: self.s, ell: Some(self.ell), params }
    }

    /// `m(xi)` for `xi != 0`.
    pub fn eval(&self, xi: &[f64]) -> Complex64 {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        match &self.kind {
            SymbolKind::Identity => Complex64::new(1.0, 0.0),
            SymbolKind::Riesz { d } => Complex64::new(0.0, -xi.get(d - 1).copied().unwrap_or(0.0) / r),
            SymbolKind::Power => Complex64::new(r.powf(-self.s), 0.0),
            SymbolKind::Custom { eval, .. } => eval(xi),
        }
    }

    /// `m(2 pi k)`, zero at `k = 0`.
    pub fn at_frequency(&self, k: &[i64]) -> Complex64 {
        if k.iter().all(|&v| v == 0) {
            return Complex64::new(0.0, 0.0);
        }
        let xi: Vec<f64> = k.iter().map(|&v| 2.0 * PI * v as f64).collect();
        self.eval(&xi)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if let SymbolKind::Riesz { d } = self.kind {
            if d > n {
                return Err(Error::config("params.d", format!("Riesz index {d} exceeds dimension {n}")));
            }
        }
        Ok(())
    }

    /// `d^sigma` of `k -> m(2 pi k)` at a real frequency point `k`.
    pub fn derivative(&self, sigma: [u32; 2], k: &[f64], shell_r: f64) -> Complex64 {
        let order = (sigma[0] + sigma[1]) as usize;
        match &self.kind {
            SymbolKind::Custom { .. } => self.finite_difference(sigma, k, shell_r * 1e-3),
            _ => {
                let (factor, jet) = self.jet(k, order);
                let fact = |v: u32| (1..=v).map(|i| i as f64).product::<f64>();
                factor * jet.coeff(sigma[0] as usize, sigma[1] as usize) * fact(sigma[0]) * fact(sigma[1])
            }
        }
    }

    /// Builtin symbols as `factor * real jet` in integer-frequency units.
    fn jet(&self, k: &[f64], order: usize) -> (Complex64, Jet) {
        let n = k.len();
        let vars: Vec<Jet> = (0..n).map(|i| Jet::variable(order, i, k[i])).collect();
        let mut r2 = Jet::constant(order, 0.0);
        for v in &vars {
            r2 = r2.add(&v.mul(v));
        }
        match &self.kind {
            SymbolKind::Identity => (Complex64::new(1.0, 0.0), Jet::constant(order, 1.0)),
            SymbolKind::Power => (
                Complex64::new((2.0 * PI).powf(-self.s), 0.0),
                r2.powf(-self.s / 2.0),
            ),
            SymbolKind::Riesz { d } => {
                let num = vars.get(d - 1).cloned().unwrap_or_else(|| Jet::constant(order, 0.0));
                (Complex64::new(0.0, -1.0), num.mul(&r2.powf(-0.5)))
            }
            SymbolKind::Custom { .. } => unreachable!("custom symbols use finite differences"),
        }
    }

    fn finite_difference(&self, sigma: [u32; 2], k: &[f64], h: f64) -> Complex64 {
        let n = k.len();
        let stencil = |r: u32| -> Vec<(f64, f64)> {
            (0..=r)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    (sign * binomial(r, i), (r as f64 / 2.0 - i as f64) * h)
                })
                .collect()
        };
        let s0 = stencil(sigma[0]);
        let s1 = if n > 1 { stencil(sigma[1]) } else { vec![(1.0, 0.0)] };
        let mut acc = Complex64::new(0.0, 0.0);
        for &(w0, d0) in &s0 {
            for &(w1, d1) in &s1 {
                let mut xi: Vec<f64> = k.iter().map(|v| 2.0 * PI * v).collect();
                xi[0] += 2.0 * PI * d0;
                if n > 1 {
                    xi[1] += 2.0 * PI * d1;
                }
                acc += self.eval(&xi) * (w0 * w1);
            }
        }
        acc / h.powi((sigma[0] + sigma[1]) as i32)
    }
}

fn binomial(r: u32, i: u32) -> f64 {
    (0..i).fold(1.0, |acc, t| acc * (r - t) as f64 / (t + 1) as f64)
}

/// Truncated Taylor polynomial in up to two variables.
#[derive(Clone, Debug)]
struct Jet {
    order: usize,
    c: Vec<f64>,
}

impl Jet {
    fn constant(order: usize, v: f64) -> Self {
        let mut c = vec![0.0; (order + 1) * (order + 1)];
        c[0] = v;
        Self { order, c }
    }

    fn variable(order: usize, axis: usize, v: f64) -> Self {
        let mut j = Self::constant(order, v);
        if order >= 1 {
            let idx = if axis == 0 { j.at(1, 0) } else { j.at(0, 1) };
            j.c[idx] = 1.0;
        }
        j
    }

    #[inline]
    fn at(&self, a: usize, b: usize) -> usize {
        a * (self.order + 1) + b
    }

    fn coeff(&self, a: usize, b: usize) -> f64 {
        if a + b > self.order {
            0.0
        } else {
            self.c[self.at(a, b)]
        }
    }

    fn add(&self, o: &Jet) -> Jet {
        Jet { order: self.order, c: self.c.iter().zip(&o.c).map(|(x, y)| x + y).collect() }
    }

    fn mul(&self, o: &Jet) -> Jet {
        let d = self.order;
        let mut out = Jet::constant(d, 0.0);
        for a in 0..=d {
            for b in 0..=d - a {
                let mut s = 0.0;
                for a1 in 0..=a {
                    for b1 in 0..=b {
                        s += self.c[self.at(a1, b1)] * o.c[o.at(a - a1, b - b1)];
                    }
                }
                let i = out.at(a, b);
                out.c[i] = s;
            }
        }
        out
    }

    /// `self^e` by the Taylor series of `u^e` about the constant term.
    fn powf(&self, e: f64) -> Jet {
        let u0 = self.c[0];
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let mut out = Jet::constant(self.order, 0.0);
        let mut term = Jet::constant(self.order, 1.0);
        let mut coef = 1.0;
        for r in 0..=self.order {
            let scale = coef * u0.powf(e - r as f64);
            for (o, t) in out.c.iter_mut().zip(&term.c) {
                *o += scale * t;
            }
            coef *= (e - r as f64) / (r as f64 + 1.0);
            term = term.mul(&delta);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderRow {
    pub sigma: [u32; 2],
    pub shell_t: u32,
    pub bracket: f64,
}

/// Brackets `R^{-n+2s+2|sigma|} sum_{R <= |k| < 2R} |d^sigma m|^2` on the
/// integer lattice (unit cell weight) and their maxima `A_sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderReport {
    pub n: usize,
    pub s: f64,
    pub ell: u32,
    pub normalization: String,
    pub rows: Vec<HormanderRow>,
    pub a_sigma: Vec<([u32; 2], f64)>,
}

impl HormanderReport {
    pub fn sigma_label(&self, sigma: [u32; 2]) -> String {
        if self.n == 1 {
            sigma[0].to_string()
        } else {
            format!("{}-{}", sigma[0], sigma[1])
        }
    }

    /// `A_sigma` from the table.
    pub fn constant(&self, sigma: [u32; 2]) -> Option<f64> {
        self.a_sigma.iter().find(|(s, _)| *s == sigma).map(|(_, a)| *a)
    }

    /// Max of the brackets for `sigma` over shells with `R >= r_min`.
    pub fn constant_from(&self, sigma: [u32; 2], r_min: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.sigma == sigma && (r.shell_t as f64).exp2() >= r_min)
            .map(|r| r.bracket)
            .reduce(f64::max)
    }

    pub fn brackets(&self, sigma: [u32; 2]) -> Vec<(u32, f64)> {
        self.rows
            .iter()
            .filter(|r| r.sigma == sigma)
            .map(|r| (r.shell_t, r.bracket))
            .collect()
    }

    /// CSV `sigma,shell_t,bracket,A_sigma`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,shell_t,bracket,A_sigma\n");
        for r in &self.rows {
            let a = self.constant(r.sigma).unwrap_or(f64::NAN);
            out.push_str(&format!("{},{},{:e},{:e}\n", self.sigma_label(r.sigma), r.shell_t, r.bracket, a));
        }
        out
    }
}

fn multi_indices(n: usize, ell: u32) -> Vec<[u32; 2]> {
    let mut out = Vec::new();
    for a in 0..=ell {
        if n == 1 {
            out.push([a, 0]);
        } else {
            for b in 0..=ell - a {
                out.push([a, b]);
            }
        }
    }
    out
}

fn shell_points(n: usize, r: i64) -> Vec<[i64; 2]> {
    let mut pts = Vec::new();
    if n == 1 {
        for k in r..2 * r {
            pts.push([k, 0]);
            pts.push([-k, 0]);
        }
    } else {
        for a in -2 * r..=2 * r {
            for b in -2 * r..=2 * r {
                let d2 = a * a + b * b;
                if d2 >= r * r && d2 < 4 * r * r {
                    pts.push([a, b]);
                }
            }
        }
    }
    pts
}

/// Brackets over shells `R = 2^t` with `2R <= N/2`, every `|sigma| <= ell`.
pub fn hormander_constants(sym: &MultiplierSymbol, grid: &TorusGrid) -> Result<HormanderReport> {
    let n = grid.dim();
    sym.check_dim(n)?;
    let tmax = grid.depth() - 2;
    let sigmas = multi_indices(n, sym.ell);
    let jobs: Vec<([u32; 2], u32)> = sigmas
        .iter()
        .flat_map(|&s| (0..=tmax).map(move |t| (s, t)))
        .collect();
    let rows: Vec<HormanderRow> = jobs
        .par_iter()
        .map(|&(sigma, t)| {
            let r = 1i64 << t;
            let rf = r as f64;
            let sum: f64 = shell_points(n, r)
                .iter()
                .map(|k| {
                    let kf: Vec<f64> = k[..n].iter().map(|&v| v as f64).collect();
                    sym.derivative(sigma, &kf, rf).norm_sqr()
                })
                .sum();
            let expo = -(n as f64) + 2.0 * sym.s + 2.0 * (sigma[0] + sigma[1]) as f64;
            HormanderRow { sigma, shell_t: t, bracket: rf.powf(expo) * sum }
        })
        .collect();
    let a_sigma = sigmas
        .iter()
        .map(|&s| {
            let a = rows.iter().filter(|r| r.sigma == s).map(|r| r.bracket).fold(0.0, f64::max);
            (s, a)
        })
        .collect();
    Ok(HormanderReport {
        n,
        s: sym.s,
        ell: sym.ell,
        normalization: "integer-frequency lattice, unit cell weight; derivatives of k -> m(2 pi k); \
                        continuum identity value (2^n - 1) vol(B^n)"
            .into(),
        rows,
        a_sigma,
    })
}

/// `T_m f` with spectrum `m(2 pi k) f^(k)` and `m(0) = 0`.
pub fn apply_multiplier(f: &SampledField, sym: &MultiplierSymbol) -> Result<SampledField> {
    let n = f.grid().dim();
    sym.check_dim(n)?;
    if let SymbolKind::Identity = sym.kind {
        return Ok(f.clone());
    }
    Ok(convolve_symbol(f, |k| sym.at_frequency(k)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub symbol: SymbolSpec,
    pub ell_threshold: f64,
    pub ell_valid: bool,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub min_ratio: f64,
}

impl BoundednessReport {
    /// CSV `member_id,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("member_id,ratio\n");
        for (i, r) in self.ratios.iter().enumerate() {
            out.push_str(&format!("{i},{r:e}\n"));
        }
        out
    }
}

/// `norm_F(T_m f; alpha + s) / norm_F(f; alpha)` per corpus member. Zero
/// members are skipped. `beta` sets the smoothness-threshold flag.
pub fn boundedness_report(
    corpus: &[SampledField],
    powers: &WeightPowers,
    params: &SpaceParams,
    sym: &MultiplierSymbol,
    profile: &AnalysisProfile,
    beta: f64,
) -> Result<BoundednessReport> {
    let n = profile.grid().dim();
    let mut shifted = *params;
    shifted.alpha += sym.s;
    let ratios = corpus
        .iter()
        .map(|f| {
            let base = norm_F(f, powers, params, profile)?;
            if base == 0.0 {
                return Ok(None);
            }
            let out = apply_multiplier(f, sym)?;
            Ok(Some(norm_F(&out, powers, &shifted, profile)? / base))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<f64>>();
    let ell_threshold = params.ell_threshold(n, beta);
    Ok(BoundednessReport {
        symbol: sym.to_spec(),
        ell_threshold,
        ell_valid: sym.ell as f64 > ell_threshold,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{band_limited_field, make_profile, ProfileSpec};
    use crate::matrix::HermitianPd;
    use crate::weights::MatrixWeightField;

    fn grid(n: usize, depth: u32) -> TorusGrid {
        TorusGrid::new(n, depth).unwrap()
    }

    #[test]
    fn identity_leaves_field_unchanged() {
        let g = grid(1, 6);
        let f = band_limited_field(&g, 2, (2.0, 20.0), 1).unwrap();
        let out = apply_multiplier(&f, &MultiplierSymbol::identity(2).unwrap()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn hilbert_transform_of_cosine() {
        let g = grid(1, 7);
        let f = SampledField::from_fn(g, 1, |x| vec![Complex64::new((2.0 * PI * x[0]).cos(), 0.0)]);
        let out = apply_multiplier(&f, &MultiplierSymbol::riesz(1, 2).unwrap()).unwrap();
        for i in 0..g.len() {
            let want = (2.0 * PI * g.point(i)[0]).sin();
            assert!((out.at(i)[0] - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn power_on_single_frequency() {
        let g = grid(1, 7);
        for k in [1i64, 5, -9, 30] {
            let f = SampledField::plane_wave(g, [k, 0], &[Complex64::new(1.0, 0.0)]);
            let out = apply_multiplier(&f, &MultiplierSymbol::power(1.0, 2).unwrap()).unwrap();
            let want = f.scaled(Complex64::new(1.0 / (2.0 * PI * k.abs() as f64), 0.0));
            assert!(out.sub(&want).unwrap().sup_norm() < 1e-13);
        }
    }

    #[test]
    fn composition_idempotence_and_shifts() {
        let g = grid(1, 7);
        let f = band_limited_field(&g, 2, (1.0, 40.0), 4).unwrap();
        let r = MultiplierSymbol::riesz(1, 2).unwrap();
        let p = MultiplierSymbol::power(0.7, 2).unwrap();
        let two = apply_multiplier(&apply_multiplier(&f, &r).unwrap(), &p).unwrap();
        let once = apply_multiplier(&f, &r.product(&p)).unwrap();
        assert!(two.sub(&once).unwrap().sup_norm() < 1e-10);
        let rr = apply_multiplier(&apply_multiplier(&f, &r).unwrap(), &r).unwrap();
        assert!(rr.add(&f).unwrap().sup_norm() < 1e-10);
        let shift = [17, 0];
        let a = apply_multiplier(&f.translated(shift), &p).unwrap();
        let b = apply_multiplier(&f, &p).unwrap().translated(shift);
        assert!(a.sub(&b).unwrap().sup_norm() < 1e-10);

        let g2 = grid(2, 5);
        let f2 = band_limited_field(&g2, 1, (1.0, 10.0), 3).unwrap();
        let r2 = MultiplierSymbol::riesz(2, 2).unwrap();
        let a = apply_multiplier(&f2.translated([3, -4]), &r2).unwrap();
        let b = apply_multiplier(&f2, &r2).unwrap().translated([3, -4]);
        assert!(a.sub(&b).unwrap().sup_norm() < 1e-10);
        assert!(apply_multiplier(&f, &r2).is_err());
    }

    #[test]
    fn identity_brackets() {
        let g = grid(1, 10);
        let rep = hormander_constants(&MultiplierSymbol::identity(3).unwrap(), &g).unwrap();
        for (t, b) in rep.brackets([0, 0]) {
            if t >= 3 {
                assert!((b - 2.0).abs() < 0.1);
            }
        }
        assert!((rep.constant_from([0, 0], 8.0).unwrap() - 2.0).abs() < 0.1);
        for s in 1..=3 {
            assert_eq!(rep.constant([s, 0]).unwrap(), 0.0);
        }
        let csv = rep.to_csv();
        assert!(csv.starts_with("sigma,shell_t,bracket,A_sigma\n"));
        assert_eq!(csv.lines().count(), 1 + 4 * 9);
    }

    #[test]
    fn power_bracket_is_shell_independent() {
        let g = grid(1, 10);
        let s = 0.6;
        let rep = hormander_constants(&MultiplierSymbol::power(s, 2).unwrap(), &g).unwrap();
        // direct lattice sum of |2 pi k|^{-2s} over the shell, scaled
        let direct = |r: i64| -> f64 {
            let sum: f64 = (r..2 * r).map(|k| 2.0 * (2.0 * PI * k as f64).powf(-2.0 * s)).sum();
            (r as f64).powf(-1.0 + 2.0 * s) * sum
        };
        let rows = rep.brackets([0, 0]);
        for &(t, b) in &rows {
            assert!((b / direct(1 << t) - 1.0).abs() < 1e-12);
        }
        let mid: Vec<f64> = rows.iter().filter(|(t, _)| (3..=7).contains(t)).map(|r| r.1).collect();
        let hi = mid.iter().copied().fold(0.0, f64::max);
        let lo = mid.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 1.1);
    }

    #[test]
    fn riesz_brackets_in_two_dims() {
        let g = grid(2, 6);
        let riesz = hormander_constants(&MultiplierSymbol::riesz(1, 2).unwrap(), &g).unwrap();
        let ident = hormander_constants(&MultiplierSymbol::identity(2).unwrap(), &g).unwrap();
        // |m|^2 + |R_2 m|^2 = 1, so the two Riesz brackets sum to the identity's
        let other = hormander_constants(&MultiplierSymbol::riesz(2, 2).unwrap(), &g).unwrap();
        for ((a, b), c) in riesz.brackets([0, 0]).iter().zip(other.brackets([0, 0])).zip(ident.brackets([0, 0])) {
            assert!((a.1 + b.1 - c.1).abs() < 1e-9);
        }
        for sigma in [[1, 0], [0, 1], [1, 1], [2, 0]] {
            let a = riesz.constant(sigma).unwrap();
            assert!(a.is_finite() && a > 0.0);
        }
    }

    #[test]
    fn jets_match_closed_form_and_finite_differences() {
        let p = MultiplierSymbol::power(0.8, 3).unwrap();
        // d^r |x|^{-s} for x > 0 in k units
        let k = 5.0f64;
        let c = (2.0 * PI).powf(-0.8);
        let closed = [
            c * k.powf(-0.8),
            c * -0.8 * k.powf(-1.8),
            c * 0.8 * 1.8 * k.powf(-2.8),
            c * -0.8 * 1.8 * 2.8 * k.powf(-3.8),
        ];
        for (r, want) in closed.iter().enumerate() {
            let got = p.derivative([r as u32, 0], &[k], 4.0);
            assert!((got.re - want).abs() < 1e-12 * want.abs());
        }
        let custom = MultiplierSymbol::custom("riesz-copy", 0.0, 3, |xi| {
            let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            Complex64::new(0.0, -xi[0] / r)
        })
        .unwrap();
        let riesz = MultiplierSymbol::riesz(1, 3).unwrap();
        for sigma in multi_indices(2, 3) {
            let pt = [6.0, -3.0];
            let a = custom.derivative(sigma, &pt, 4.0);
            let b = riesz.derivative(sigma, &pt, 4.0);
            assert!((a - b).norm() < 1e-5 * (1.0 + b.norm()), "{sigma:?}: {a} vs {b}");
        }
        assert!(MultiplierSymbol::custom("x", 0.0, 4, |_| Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn spec_round_trip() {
        for sym in [
            MultiplierSymbol::identity(2).unwrap(),
            MultiplierSymbol::riesz(2, 3).unwrap(),
            MultiplierSymbol::power(-1.0, 4).unwrap(),
        ] {
            let json = serde_json::to_string(&sym.to_spec()).unwrap();
            let back = MultiplierSymbol::from_spec(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back.to_spec(), sym.to_spec());
        }
        assert!(MultiplierSymbol::identity(0).is_err());
        let bad = SymbolSpec { kind: "riesz".into(), s: 0.0, ell: Some(2), params: serde_json::Value::Null };
        assert!(MultiplierSymbol::from_spec(&bad).is_err());
    }

    #[test]
    fn boundedness_identity_and_power() {
        let g = grid(1, 8);
        let prof = make_profile(&g, ProfileSpec::default_for(&g)).unwrap();
        let powers = MatrixWeightField::constant(g, HermitianPd::identity(1)).powers(2.0).unwrap();
        let prm = SpaceParams::with_defaults(1, 0.0, 2.0, 2.0, 1.0).unwrap();
        let corpus: Vec<SampledField> = (0..6)
            .map(|s| band_limited_field(&g, 1, prof.tiling_band(), s).unwrap())
            .collect();
        let id = boundedness_report(&corpus, &powers, &prm, &MultiplierSymbol::identity(4).unwrap(), &prof, 1.0)
            .unwrap();
        assert!(id.ratios.iter().all(|r| (r - 1.0).abs() < 1e-9));
        assert!(id.ell_valid);
        // with xi = 2 pi k the ratio per scale is 2^j / (2 pi |k|), |k| in (2^j c1, 2^j c2)
        let pw = boundedness_report(&corpus, &powers, &prm, &MultiplierSymbol::power(1.0, 4).unwrap(), &prof, 1.0)
            .unwrap();
        let (c1, c2) = (prof.spec().c1, prof.spec().c2);
        assert!(pw.min_ratio > 1.0 / (2.0 * PI * c2) && pw.max_ratio < 1.0 / (2.0 * PI * c1));
    }
}
