mod common;

use common::*;
use derain::{compose, effective_transmission, recover_background, AtmosphereLight, Error, Field, Image, Mask, RainScene};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64, h: usize, w: usize) -> (Image, Field, Field, AtmosphereLight) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = random_image(&mut rng, h, w);
    let (ts, tv) = random_maps(&mut rng, h, w);
    (j, ts, tv, random_atmosphere(&mut rng))
}

#[test]
fn compose_matches_scalar_oracle() {
    let (j, ts, tv, a) = scene(3, 7, 5);
    let i = compose(&j, &ts, &tv, a).unwrap();
    for r in 0..7 {
        for c in 0..5 {
            for ch in 0..3 {
                let want = compose_scalar(j.pixel(r, c)[ch], ts.get(r, c), tv.get(r, c), a.rgb()[ch]);
                assert!((i.pixel(r, c)[ch] - want).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn hand_evaluated_pixels() {
    let j = Image::filled(1, 1, [0.2; 3]);
    let white = AtmosphereLight::gray(1.0).unwrap();
    let (ts, zero) = (Field::filled(1, 1, 0.25), Field::filled(1, 1, 0.0));
    let i = compose(&j, &ts, &zero, white).unwrap();
    assert!((i.pixel(0, 0)[0] - 0.8).abs() < 1e-12);
    let back = recover_background(&i, &ts, &zero, white, 0.05).unwrap();
    assert!((back.pixel(0, 0)[1] - 0.2).abs() < 1e-12);

    let a = AtmosphereLight::new([0.3, 0.6, 0.9]).unwrap();
    let rainy = Image::filled(2, 2, [0.3, 0.6, 0.9]);
    let z = Field::filled(2, 2, 0.0);
    let j = recover_background(&rainy, &z, &z, a, 0.05).unwrap();
    assert!(max_abs_diff(j.data(), rainy.data()) < 1e-12);
}

#[test]
fn scene_invariants() {
    let (j, ts, tv, a) = scene(9, 12, 10);
    let s = RainScene::build(j, ts, tv, a, Mask::empty(12, 10)).unwrap();
    assert!(s.consistency_error().unwrap() <= 1e-6);
    assert!(matches!(
        RainScene::build(Image::filled(3, 3, [0.5; 3]), Field::filled(3, 3, 1.0), Field::filled(3, 3, 0.0), a, Mask::empty(3, 4)),
        Err(Error::DimensionMismatch(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recover_inverts_compose(seed in any::<u64>(), h in 1usize..24, w in 1usize..24, eps in 0.01f64..0.5) {
        let (j, ts, tv, a) = scene(seed, h, w);
        let i = compose(&j, &ts, &tv, a).unwrap();
        let back = recover_background(&i, &ts, &tv, a, eps).unwrap();
        for p in 0..h * w {
            if ts.data()[p] + tv.data()[p] >= eps {
                for c in 0..3 {
                    prop_assert!((back.data()[3 * p + c] - j.data()[3 * p + c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn outputs_stay_in_unit_range(seed in any::<u64>(), h in 1usize..16, w in 1usize..16, eps in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (j, ts, tv, a) = scene(seed, h, w);
        let i = compose(&j, &ts, &tv, a).unwrap();
        prop_assert!(i.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // any image and any maps, not only consistent ones
        let other = random_image(&mut rng, h, w);
        let out = recover_background(&other, &ts, &tv, a, eps).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let t = effective_transmission(&ts, &tv, eps).unwrap();
        prop_assert!(t.data().iter().all(|v| (eps..=1.0).contains(v)));
    }

    #[test]
    fn excess_transmission_is_rejected(seed in any::<u64>(), excess in 1e-6f64..0.5) {
        let (j, mut ts, tv, a) = scene(seed, 4, 4);
        let mut data = ts.data().to_vec();
        data[5] = 1.0 - tv.data()[5] + excess;
        if data[5] <= 1.0 {
            ts = Field::new(4, 4, data).unwrap();
            let is_range_violation = matches!(compose(&j, &ts, &tv, a), Err(Error::TransmissionRangeViolation { row: 1, col: 1, .. }));
            prop_assert!(is_range_violation);
        }
    }
}
