//! Littlewood-Paley analysis on the torus.
//!
//! The analysis profile is a smooth radial bump on the annulus `[c1, c2]`
//! (in units of integer frequency), square-normalized so that
//! `sum_j g(t/2^j)^2 = 1` for every `t > 0` when the sum runs over all of
//! `Z`. Restricted to the scale window `jmin..=jmax` the identity is exact on
//! the tiling band `[c2 2^(jmin-1), c1 2^(jmax+1)]`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft_forward, fft_inverse, SampledField, Spectrum, TorusGrid};

/// Serializable profile parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub c1: f64,
    pub c2: f64,
    pub jmin: i32,
    pub jmax: i32,
}

impl ProfileSpec {
    /// `c1 = 1/2`, `c2 = 2`, scales `1..=L-2`.
    pub fn default_for(grid: &TorusGrid) -> Self {
        Self {
            c1: 0.5,
            c2: 2.0,
            jmin: 1,
            jmax: grid.depth() as i32 - 2,
        }
    }
}

/// Square-normalized radial analysis profile on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisProfile {
    spec: ProfileSpec,
    grid: TorusGrid,
}

/// Build and validate a profile for `grid`.
pub fn make_profile(grid: &TorusGrid, spec: ProfileSpec) -> Result<AnalysisProfile> {
    let ProfileSpec { c1, c2, jmin, jmax } = spec;
    if !(c1 > 0.0 && c2 > c1 && c2.is_finite()) {
        return Err(Error::config("profile", "need 0 < c1 < c2"));
    }
    if c2 / c1 <= 2.0 {
        return Err(Error::config(
            "profile",
            "c2/c1 must exceed 2 so dilates cover every frequency",
        ));
    }
    if jmin < 0 || jmax < jmin {
        return Err(Error::config("profile", "need 0 <= jmin <= jmax"));
    }
    let nyquist = grid.side() as f64 / 2.0;
    if c2 * (jmax as f64).exp2() > nyquist {
        return Err(Error::Aliasing(format!(
            "c2*2^jmax = {} exceeds N/2 = {nyquist}",
            c2 * (jmax as f64).exp2()
        )));
    }
    Ok(AnalysisProfile { spec, grid: *grid })
}

impl AnalysisProfile {
    #[inline]
    pub fn spec(&self) -> ProfileSpec {
        self.spec
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn scales(&self) -> std::ops::RangeInclusive<i32> {
        self.spec.jmin..=self.spec.jmax
    }

    pub fn contains_scale(&self, j: i32) -> bool {
        self.scales().contains(&j)
    }

    /// Unnormalized bump `exp(1 - 1/(1-u^2))` on `(c1, c2)`, with `u` the
    /// log-linear coordinate mapping the annulus onto `(-1, 1)`.
    pub fn bump(&self, t: f64) -> f64 {
        let (c1, c2) = (self.spec.c1, self.spec.c2);
        if !(t > c1 && t < c2) {
            return 0.0;
        }
        let u = (2.0 * t.ln() - c1.ln() - c2.ln()) / (c2.ln() - c1.ln());
        let s = 1.0 - u * u;
        if s <= 0.0 {
            0.0
        } else {
            (1.0 - 1.0 / s).exp()
        }
    }

    /// Normalized profile `g(t) = b(t) / sqrt(sum_l b(2^l t)^2)`.
    pub fn value(&self, t: f64) -> f64 {
        let b = self.bump(t);
        if b == 0.0 {
            return 0.0;
        }
        let (c1, c2) = (self.spec.c1, self.spec.c2);
        let lo = (c1 / t).log2().floor() as i32;
        let hi = (c2 / t).log2().ceil() as i32;
        let total: f64 = (lo..=hi)
            .map(|l| self.bump(t * (l as f64).exp2()).powi(2))
            .sum();
        b / total.sqrt()
    }

    /// Per-scale symbol `sigma_j(t) = g(t / 2^j)` for a frequency modulus.
    #[inline]
    pub fn symbol(&self, j: i32, t: f64) -> f64 {
        self.value(t / (j as f64).exp2())
    }

    /// Frequencies where some scale in the window is nonzero.
    pub fn support_band(&self) -> (f64, f64) {
        (
            self.spec.c1 * (self.spec.jmin as f64).exp2(),
            self.spec.c2 * (self.spec.jmax as f64).exp2(),
        )
    }

    /// Frequencies where the window-restricted square tiling is exact.
    pub fn tiling_band(&self) -> (f64, f64) {
        (
            self.spec.c2 * ((self.spec.jmin - 1) as f64).exp2(),
            self.spec.c1 * ((self.spec.jmax + 1) as f64).exp2(),
        )
    }

    pub fn is_covered(&self, t: f64) -> bool {
        let (lo, hi) = self.tiling_band();
        t >= lo - 1e-12 && t <= hi + 1e-12
    }

    /// `sum_{j in window} sigma_j(t)^2`.
    pub fn tiling_sum(&self, t: f64) -> f64 {
        self.scales().map(|j| self.symbol(j, t).powi(2)).sum()
    }

    /// Scales of the window at which `sigma_j(t) != 0`.
    pub fn active_scales(&self, t: f64) -> Vec<i32> {
        self.scales().filter(|&j| self.symbol(j, t) != 0.0).collect()
    }

    fn symbol_table(&self, j: i32) -> Vec<f64> {
        (0..self.grid.len())
            .map(|b| self.symbol(j, self.grid.frequency_norm(b)))
            .collect()
    }
}

/// Profile pair `(phi, psi)` with `sum_j phi_j psi_j = 1` on the tiling band.
/// The square-normalized profile allows `psi = phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisPair {
    pub phi: AnalysisProfile,
    pub psi: AnalysisProfile,
}

pub fn make_pair(profile: &AnalysisProfile) -> AnalysisPair {
    AnalysisPair {
        phi: profile.clone(),
        psi: profile.clone(),
    }
}

impl AnalysisPair {
    /// `sum_j phi_hat(t/2^j) psi_hat(t/2^j)` over the window.
    pub fn tiling_sum(&self, t: f64) -> f64 {
        self.phi
            .scales()
            .map(|j| self.phi.symbol(j, t) * self.psi.symbol(j, t))
            .sum()
    }

    pub fn is_covered(&self, t: f64) -> bool {
        self.phi.is_covered(t)
    }

    /// Largest `|tiling_sum - 1|` over covered integer frequencies of the grid.
    pub fn tiling_residual(&self) -> f64 {
        let grid = self.phi.grid;
        (0..grid.len())
            .map(|b| grid.frequency_norm(b))
            .filter(|&t| t > 0.0 && self.is_covered(t))
            .map(|t| (self.tiling_sum(t) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `phi_j * f` for one scale of the window.
pub fn lp_piece(f: &SampledField, profile: &AnalysisProfile, j: i32) -> Result<SampledField> {
    if !profile.contains_scale(j) {
        return Err(Error::config("j", format!("scale {j} outside the window")));
    }
    let spec = fft_forward(f);
    Ok(piece_from_spectrum(&spec, profile, j, f.band_limit()))
}

fn piece_from_spectrum(
    spec: &Spectrum,
    profile: &AnalysisProfile,
    j: i32,
    band: Option<usize>,
) -> SampledField {
    let table = profile.symbol_table(j);
    let mut s = spec.clone();
    s.map_bins(|b| Complex64::new(table[b], 0.0));
    let out = fft_inverse(&s);
    let top = (profile.spec.c2 * (j as f64).exp2()).ceil() as usize;
    out.with_band_limit(Some(band.map_or(top, |b| b.min(top))))
}

/// All pieces `phi_j * f` for `j` in the window, in increasing `j`.
pub fn lp_pieces(f: &SampledField, profile: &AnalysisProfile) -> Vec<SampledField> {
    let spec = fft_forward(f);
    profile
        .scales()
        .map(|j| piece_from_spectrum(&spec, profile, j, f.band_limit()))
        .collect()
}

/// Fails with [`Error::OutsideWindow`] if `f` carries spectrum outside the
/// tiling band (relative threshold `1e-10` of the largest coefficient).
pub fn check_covered(f: &SampledField, profile: &AnalysisProfile) -> Result<()> {
    let spec = fft_forward(f);
    let grid = f.grid();
    let cutoff = 1e-10 * spec.max_abs();
    for b in 0..grid.len() {
        let t = grid.frequency_norm(b);
        if (t == 0.0 || !profile.is_covered(t)) && spec.at(b).iter().any(|z| z.norm() > cutoff) {
            return Err(Error::OutsideWindow);
        }
    }
    Ok(())
}

/// Relative sup-norm residual of `sum_j phi_j * psi_j * f - f`.
pub fn calderon_check(pair: &AnalysisPair, f: &SampledField) -> Result<f64> {
    let sup = f.sup_norm();
    if sup == 0.0 {
        return Ok(0.0);
    }
    check_covered(f, &pair.phi)?;
    let grid = *f.grid();
    let mut spec = fft_forward(f);
    let weights: Vec<f64> = (0..grid.len())
        .map(|b| pair.tiling_sum(grid.frequency_norm(b)))
        .collect();
    spec.map_bins(|b| Complex64::new(weights[b], 0.0));
    let rebuilt = fft_inverse(&spec);
    Ok(rebuilt.sub(f)?.sup_norm() / sup)
}

/// Random zero-mean field with complex Gaussian-like coefficients on the
/// frequencies `lo <= |k| <= hi`.
pub fn band_limited_field(
    grid: &TorusGrid,
    m: usize,
    band: (f64, f64),
    seed: u64,
) -> Result<SampledField> {
    let (lo, hi) = band;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::config("band", "need 0 < lo <= hi"));
    }
    if hi >= grid.side() as f64 / 2.0 {
        return Err(Error::Aliasing("band reaches the Nyquist frequency".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len() * m];
    let mut any = false;
    for b in 0..grid.len() {
        let t = grid.frequency_norm(b);
        if t >= lo && t <= hi {
            any = true;
            for c in 0..m {
                // sum of uniforms is close enough to Gaussian for test data
                let g = |rng: &mut ChaCha8Rng| -> f64 {
                    (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5
                };
                coeffs[b * m + c] = Complex64::new(g(&mut rng), g(&mut rng));
            }
        }
    }
    if !any {
        return Err(Error::config("band", "no integer frequency in band"));
    }
    let spec = Spectrum::from_coeffs(*grid, m, coeffs)?;
    Ok(fft_inverse(&spec).with_band_limit(Some(hi.floor() as usize)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SampledField;

    fn setup(n: usize, depth: u32) -> (TorusGrid, AnalysisProfile) {
        let g = TorusGrid::new(n, depth).unwrap();
        let p = make_profile(&g, ProfileSpec::default_for(&g)).unwrap();
        (g, p)
    }

    #[test]
    fn rejects_aliasing_and_bad_annulus() {
        let g = TorusGrid::new(1, 6).unwrap();
        let bad = ProfileSpec { c1: 0.5, c2: 2.0, jmin: 1, jmax: 5 };
        assert!(matches!(make_profile(&g, bad), Err(Error::Aliasing(_))));
        let narrow = ProfileSpec { c1: 1.0, c2: 1.5, jmin: 1, jmax: 3 };
        assert!(make_profile(&g, narrow).is_err());
    }

    #[test]
    fn square_tiling_on_covered_band() {
        let (_, p) = setup(1, 10);
        let (lo, hi) = p.tiling_band();
        let mut t = lo;
        while t <= hi {
            assert!((p.tiling_sum(t) - 1.0).abs() < 1e-10, "t={t}");
            t *= 1.013;
        }
        assert!((p.tiling_sum(hi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn outside_support_is_zero() {
        let (_, p) = setup(1, 8);
        let (lo, hi) = p.support_band();
        for t in [0.0, 0.3 * lo, lo, hi, hi * 1.5] {
            assert!(p.scales().all(|j| p.symbol(j, t) == 0.0), "t={t}");
        }
    }

    #[test]
    fn at_most_three_active_scales() {
        let (g, p) = setup(1, 10);
        let (lo, hi) = p.tiling_band();
        for k in 1..g.side() / 2 {
            let t = k as f64;
            let count = p.active_scales(t).len();
            assert!(count <= 3);
            if t >= lo && t <= hi {
                assert!(count >= 1);
            }
        }
    }

    #[test]
    fn pair_tiling_and_positivity() {
        let (g, p) = setup(2, 6);
        let pair = make_pair(&p);
        assert!(pair.tiling_residual() < 1e-10);
        let (lo, _) = p.tiling_band();
        assert!(!pair.is_covered(0.5 * lo));
        assert_eq!(pair.tiling_sum(0.2), 0.0);
        for b in 0..g.len() {
            let t = g.frequency_norm(b);
            for j in p.scales() {
                assert!(pair.phi.symbol(j, t) * pair.psi.symbol(j, t) >= 0.0);
            }
        }
    }

    #[test]
    fn piece_of_plane_wave() {
        let (g, p) = setup(1, 8);
        let v = [Complex64::new(1.0, 0.5), Complex64::new(-0.25, 0.0)];
        let f = SampledField::plane_wave(g, [11, 0], &v);
        for j in p.scales() {
            let piece = lp_piece(&f, &p, j).unwrap();
            let expected = f.scaled(Complex64::new(p.symbol(j, 11.0), 0.0));
            assert!(piece.sub(&expected).unwrap().sup_norm() < 1e-12);
        }
        assert!(lp_piece(&f, &p, 0).is_err());
    }

    #[test]
    fn constant_has_no_pieces() {
        let (g, p) = setup(2, 5);
        let f = SampledField::from_fn(g, 1, |_| vec![Complex64::new(3.0, 0.0)]);
        for piece in lp_pieces(&f, &p) {
            assert!(piece.sup_norm() < 1e-12);
        }
    }

    #[test]
    fn piece_energies_sum_to_field_energy() {
        let (g, p) = setup(1, 9);
        let f = band_limited_field(&g, 2, p.tiling_band(), 17).unwrap();
        let total: f64 = lp_pieces(&f, &p)
            .iter()
            .map(|piece| fft_forward(piece).energy())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let spec = fft_forward(&f);
        let mut weighted = 0.0;
        for b in 0..g.len() {
            let t = g.frequency_norm(b);
            let s: f64 = p.scales().map(|j| p.symbol(j, t).powi(2)).sum();
            weighted += s * spec.at(b).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        assert!((total - weighted).abs() / weighted < 1e-10);
        assert!((total - f.energy()).abs() / f.energy() < 1e-8);
    }

    #[test]
    fn calderon_identity() {
        let (g, p) = setup(1, 8);
        let pair = make_pair(&p);
        let single = SampledField::plane_wave(g, [9, 0], &[Complex64::new(1.0, 0.0)]);
        assert!(calderon_check(&pair, &single).unwrap() < 1e-12);
        assert_eq!(calderon_check(&pair, &SampledField::zeros(g, 2)).unwrap(), 0.0);
        let f = band_limited_field(&g, 2, p.tiling_band(), 3).unwrap();
        assert!(calderon_check(&pair, &f).unwrap() < 1e-8);
        let low = SampledField::plane_wave(g, [1, 0], &[Complex64::new(1.0, 0.0)]);
        assert!(matches!(calderon_check(&pair, &low), Err(Error::OutsideWindow)));
    }

    #[test]
    fn pieces_commute_with_translation() {
        let (g, p) = setup(2, 5);
        let f = band_limited_field(&g, 1, p.tiling_band(), 8).unwrap();
        let shift = [3, -5];
        for j in p.scales() {
            let a = lp_piece(&f.translated(shift), &p, j).unwrap();
            let b = lp_piece(&f, &p, j).unwrap().translated(shift);
            assert!(a.sub(&b).unwrap().sup_norm() < 1e-10);
        }
    }
}
