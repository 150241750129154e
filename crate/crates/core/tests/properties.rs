use num_complex::Complex64;
use proptest::prelude::*;

use mwtl::grid::{fft_forward, fft_inverse, SampledField, TorusGrid};
use mwtl::lp::{band_limited_field, make_profile, AnalysisProfile, ProfileSpec};
use mwtl::matrix::HermitianPd;
use mwtl::norms::{norms_of, NormKind, SpaceParams};
use mwtl::weights::{generate_weight, MatrixWeightField, WeightPowers, WeightSpec};

const KINDS: [NormKind; 4] = [NormKind::F, NormKind::Star, NormKind::Square, NormKind::Gstar];

fn setup(p: f64) -> (TorusGrid, AnalysisProfile, WeightPowers) {
    let g = TorusGrid::new(1, 7).unwrap();
    let prof = make_profile(&g, ProfileSpec::default_for(&g)).unwrap();
    let w = HermitianPd::from_real_rows(&[vec![2.0, 0.7], vec![0.7, 1.0]]).unwrap();
    let pw = MatrixWeightField::constant(g, w).powers(p).unwrap();
    (g, prof, pw)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn norms_are_homogeneous(seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0, p in 0.7f64..3.0) {
        prop_assume!(re.hypot(im) > 1e-2);
        let (g, prof, pw) = setup(p);
        let params = SpaceParams::with_defaults(1, 0.5, p, 2.0, 1.0).unwrap();
        let f = band_limited_field(&g, 2, prof.tiling_band(), seed).unwrap();
        let c = Complex64::new(re, im);
        let a = norms_of(&f, &pw, None, &params, &prof, &KINDS).unwrap();
        let b = norms_of(&f.scaled(c), &pw, None, &params, &prof, &KINDS).unwrap();
        for k in KINDS {
            prop_assert!(close(b[&k], c.norm() * a[&k], 1e-9), "{k}: {} vs {}", b[&k], a[&k]);
        }
    }

    #[test]
    fn constant_weight_norms_are_translation_invariant(seed in 0u64..1000, shift in 0i64..128) {
        let (g, prof, pw) = setup(1.5);
        let params = SpaceParams::with_defaults(1, 0.0, 1.5, 3.0, 1.0).unwrap();
        let f = band_limited_field(&g, 2, prof.tiling_band(), seed).unwrap();
        let a = norms_of(&f, &pw, None, &params, &prof, &KINDS).unwrap();
        let b = norms_of(&f.translated([shift, 0]), &pw, None, &params, &prof, &KINDS).unwrap();
        for k in KINDS {
            prop_assert!(close(a[&k], b[&k], 1e-9), "{k}: {} vs {}", a[&k], b[&k]);
        }
    }

    #[test]
    fn translated_weight_and_field_give_same_norm(seed in 0u64..1000, shift in 0i64..128) {
        let g = TorusGrid::new(1, 7).unwrap();
        let prof = make_profile(&g, ProfileSpec::default_for(&g)).unwrap();
        let spec = WeightSpec::DiagonalPower { exponents: vec![0.5, 0.0], center: vec![] };
        let field = generate_weight(&spec, g, 2).unwrap();
        let params = SpaceParams::with_defaults(1, 0.0, 2.0, 2.0, 1.5).unwrap();
        let f = band_limited_field(&g, 2, prof.tiling_band(), seed).unwrap();
        let a = norms_of(&f, &field.powers(2.0).unwrap(), None, &params, &prof, &KINDS).unwrap();
        let moved = field.translated([shift, 0]).powers(2.0).unwrap();
        let b = norms_of(&f.translated([shift, 0]), &moved, None, &params, &prof, &KINDS).unwrap();
        for k in KINDS {
            prop_assert!(close(a[&k], b[&k], 1e-9), "{k}: {} vs {}", a[&k], b[&k]);
        }
    }

    #[test]
    fn fft_round_trip(vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 64)) {
        let g = TorusGrid::new(2, 3).unwrap();
        let f = SampledField::from_values(g, 1, vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
        let back = fft_inverse(&fft_forward(&f));
        prop_assert!(back.sub(&f).unwrap().sup_norm() < 1e-12);
        prop_assert!(close(fft_forward(&f).energy(), f.energy(), 1e-12));
    }

    #[test]
    fn field_serialization_round_trip(seed in 0u64..1000) {
        let g = TorusGrid::new(1, 5).unwrap();
        let f = band_limited_field(&g, 2, (2.0, 8.0), seed).unwrap();
        prop_assert_eq!(SampledField::from_bytes(&f.to_bytes()).unwrap(), f.clone());
        let csv = SampledField::from_csv(&f.to_csv()).unwrap();
        prop_assert!(csv.sub(&f).unwrap().sup_norm() == 0.0);
    }
}
