use std::collections::BTreeSet;

use bolf::data::*;
use bolf::tensor::Tensor;
use proptest::prelude::*;

fn spec(family: Family, seed: u64) -> DatasetSpec {
    DatasetSpec {
        family,
        train: 6,
        val: 2,
        test: 2,
        frames_per_video: 3,
        seed,
        ..DatasetSpec::default()
    }
}

fn l2(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn originals_are_deterministic_and_in_range() {
    let s = spec(Family::A, 3);
    let a = gen_original(&s, "a-train-0000-real", 2);
    let b = gen_original(&s, "a-train-0000-real", 2);
    assert_eq!(a, b);
    assert_eq!(a.label, 0);
    assert!(a.tamper_mask.is_none());
    assert_eq!(a.pixels.shape(), &[32, 32, 1]);
    assert!(a.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let other_seed = gen_original(&spec(Family::A, 4), "a-train-0000-real", 2);
    assert_ne!(a.pixels, other_seed.pixels);
}

#[test]
fn frames_of_a_video_are_closer_than_different_videos() {
    let s = spec(Family::A, 11);
    let mut within = Vec::new();
    let mut between = Vec::new();
    for v in 0..12 {
        let id = s.original_id(Split::Train, v);
        let f0 = gen_original(&s, &id, 0);
        let f1 = gen_original(&s, &id, 1);
        within.push(l2(&f0.pixels, &f1.pixels));
        let other = gen_original(&s, &s.original_id(Split::Train, v + 100), 0);
        between.push(l2(&f0.pixels, &other.pixels));
    }
    let (w, b) = (mean(&within), mean(&between));
    assert!(w < 0.5 * b, "within-video {w} vs between-video {b}");
}

#[test]
fn fakes_keep_everything_outside_the_mask() {
    for family in [Family::A, Family::B] {
        let s = spec(family, 5);
        let mut inside_deltas = Vec::new();
        for v in 0..20 {
            let orig = gen_original(&s, &s.original_id(Split::Val, v), 0);
            let fake = gen_manipulated(&orig, &s);
            assert_eq!(fake.label, 1);
            assert!(fake.video_id.ends_with("-fake"));
            assert_eq!(identity_of(&fake.video_id), identity_of(&orig.video_id));
            let mask = fake.tamper_mask.as_ref().expect("fake carries a mask");
            let frac = fake.mask_fraction();
            assert!((0.02..0.25).contains(&frac), "mask fraction {frac}");

            let (mut inside, mut n_in, mut outside, mut total) = (0.0, 0.0, 0.0, 0.0);
            for (i, (&a, &b)) in orig.pixels.data().iter().zip(fake.pixels.data()).enumerate() {
                let d = (a as f64 - b as f64).abs();
                total += d;
                if mask[i] != 0 {
                    inside += d;
                    n_in += 1.0;
                } else {
                    assert_eq!(a.to_bits(), b.to_bits(), "pixel {i} changed outside the mask");
                    outside += d;
                }
            }
            assert_eq!(outside, 0.0);
            inside_deltas.push(inside / n_in);
            let global = total / orig.pixels.len() as f64;
            assert!(global < 0.05, "global mean change {global}");
        }
        assert!(mean(&inside_deltas) > 0.02, "{family}: inside mean change {}", mean(&inside_deltas));
    }
}

#[test]
fn tamper_region_stays_in_the_central_half() {
    let s = spec(Family::A, 9);
    for v in 0..30 {
        let fake = gen_manipulated(&gen_original(&s, &s.original_id(Split::Test, v), 1), &s);
        let mask = fake.tamper_mask.unwrap();
        for (i, &m) in mask.iter().enumerate() {
            if m != 0 {
                let (y, x) = (i / 32, i % 32);
                assert!((8..24).contains(&y) && (8..24).contains(&x), "mask pixel at ({y}, {x})");
            }
        }
    }
}

#[test]
fn dataset_is_balanced_disjoint_and_sized() {
    let s = spec(Family::B, 1);
    let ds = build_dataset(&s).unwrap();
    let mut seen: Vec<BTreeSet<String>> = Vec::new();
    for split in Split::ALL {
        let samples = ds.split(split);
        assert_eq!(samples.len(), s.samples_in(split));
        let fakes = samples.iter().filter(|x| x.label == 1).count();
        assert_eq!(2 * fakes, samples.len());
        assert!(samples.iter().all(|x| x.tamper_mask.is_some() == (x.label == 1)));
        assert!(samples.iter().all(|x| x.family == Family::B));
        let ids: BTreeSet<String> = samples.iter().map(|x| identity_of(&x.video_id).to_string()).collect();
        assert_eq!(ids.len(), s.count(split));
        for earlier in &seen {
            assert!(earlier.is_disjoint(&ids));
        }
        seen.push(ids);
    }
    assert_eq!(build_dataset(&s).unwrap(), ds);
}

/// Mean squared residual after removing the 3×3 local mean: a proxy for
/// fine texture energy.
fn texture_variance(img: &Tensor<f32>) -> f64 {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let px = |y: usize, x: usize| img.data()[y * w + x] as f64;
    let mut acc = 0.0;
    let mut n = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut m = 0.0;
            for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    m += px(yy, xx);
                }
            }
            acc += (px(y, x) - m / 9.0).powi(2);
            n += 1.0;
        }
    }
    acc / n
}

#[test]
fn families_differ_in_texture_statistics() {
    let stat = |family| {
        let ds = build_dataset(&spec(family, 2)).unwrap();
        mean(&ds.train.iter().filter(|s| s.label == 0).map(|s| texture_variance(&s.pixels)).collect::<Vec<_>>())
    };
    let (a, b) = (stat(Family::A), stat(Family::B));
    assert!((b - a).abs() / a.min(b) > 0.2, "A {a} vs B {b}");
}

fn gray(value: f32) -> Tensor<f32> {
    Tensor::full(&[32, 32, 1], value)
}

#[test]
fn level_zero_is_identity() {
    let img = gen_original(&spec(Family::A, 0), "a-val-0000-real", 0).pixels;
    for kind in PerturbKind::ALL {
        let out = perturb(&img, &PerturbationSpec::single(kind, 0), 9).unwrap();
        assert_eq!(out, img, "{kind}");
    }
}

#[test]
fn noise_sigma_follows_level() {
    let img = gray(0.5);
    for level in [1u8, 2, 3] {
        let out = perturb(&img, &PerturbationSpec::single(PerturbKind::GaussianNoise, level), 4).unwrap();
        let d: Vec<f64> = out.data().iter().map(|&v| v as f64 - 0.5).collect();
        let m = mean(&d);
        let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        let want = 0.02 * level as f64;
        assert!((sd - want).abs() < 0.1 * want, "level {level}: sd {sd}");
    }
}

#[test]
fn blur_preserves_constants_and_smooths_edges() {
    let flat = gray(0.3);
    let out = perturb(&flat, &PerturbationSpec::single(PerturbKind::GaussianBlur, 4), 0).unwrap();
    assert!(out.max_abs_diff(&flat) < 1e-6);
    let mut step = vec![0.0f32; 32 * 32];
    for y in 0..32 {
        for x in 16..32 {
            step[y * 32 + x] = 1.0;
        }
    }
    let step = Tensor::new(&[32, 32, 1], step).unwrap();
    let out = perturb(&step, &PerturbationSpec::single(PerturbKind::GaussianBlur, 3), 0).unwrap();
    let row: Vec<f32> = (0..32).map(|x| out.data()[5 * 32 + x]).collect();
    assert!(row[15] > 0.1 && row[15] < 0.5 && row[16] > 0.5 && row[16] < 0.9, "{row:?}");
    assert!(row.windows(2).all(|w| w[0] <= w[1] + 1e-6));
}

#[test]
fn quantization_psnr_drops_with_level() {
    let img = gen_original(&spec(Family::A, 6), "a-test-0001-real", 0).pixels;
    let p1 = psnr(&img, &perturb(&img, &PerturbationSpec::single(PerturbKind::BlockQuantize, 1), 0).unwrap()).unwrap();
    let p5 = psnr(&img, &perturb(&img, &PerturbationSpec::single(PerturbKind::BlockQuantize, 5), 0).unwrap()).unwrap();
    assert!(p5.is_finite() && p1.is_finite());
    assert!(p5 < p1, "psnr level 5 {p5} vs level 1 {p1}");
}

#[test]
fn brightness_shift_moves_the_mean_by_the_level_step() {
    let img = gray(0.5);
    let out = perturb(&img, &PerturbationSpec::single(PerturbKind::BrightnessShift, 2), 1).unwrap();
    let shift = mean(&out.data().iter().map(|&v| v as f64 - 0.5).collect::<Vec<_>>());
    assert!((shift.abs() - 0.1).abs() < 1e-6, "{shift}");
}

#[test]
fn mixing_stacks_distinct_kinds() {
    let img = gen_original(&spec(Family::A, 6), "a-test-0001-real", 0).pixels;
    let mix = PerturbationSpec {
        kind: PerturbKind::GaussianNoise,
        level: Level::Fixed(3),
        mix_count: 3,
    };
    let a = perturb(&img, &mix, 17).unwrap();
    assert_eq!(a, perturb(&img, &mix, 17).unwrap());
    let single = perturb(&img, &PerturbationSpec { mix_count: 1, ..mix }, 17).unwrap();
    assert_ne!(a, single);
    assert!(perturb(&img, &PerturbationSpec { mix_count: 5, ..mix }, 0).is_err());
}

#[test]
fn parsing_perturbation_names() {
    assert_eq!("gaussian_blur".parse::<PerturbKind>().unwrap(), PerturbKind::GaussianBlur);
    assert!("jpeg".parse::<PerturbKind>().is_err());
    assert_eq!("random".parse::<Level>().unwrap(), Level::Random);
    assert_eq!("3".parse::<Level>().unwrap(), Level::Fixed(3));
    assert!("6".parse::<Level>().is_err());
}

#[test]
fn pnm_roundtrip_of_generated_images() {
    let dir = tempfile::tempdir().unwrap();
    let s = DatasetSpec { channels: 3, ..spec(Family::A, 8) };
    let img = gen_manipulated(&gen_original(&s, "a-train-0002-real", 0), &s);
    let path = dir.path().join("x.ppm");
    write_pnm(&path, &img.pixels).unwrap();
    let back = read_pnm(&path).unwrap();
    assert_eq!(back.shape(), img.pixels.shape());
    assert!(back.max_abs_diff(&img.pixels) <= 0.5 / 255.0 + 1e-7);
}

fn arb_kind() -> impl Strategy<Value = PerturbKind> {
    prop::sample::select(PerturbKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn retention_and_subtlety_hold_for_any_seed(seed in any::<u64>(), v in 0usize..1000, f in 0u32..20, b in any::<bool>()) {
        let s = spec(if b { Family::B } else { Family::A }, seed);
        let orig = gen_original(&s, &s.original_id(Split::Train, v), f);
        let fake = gen_manipulated(&orig, &s);
        let mask = fake.tamper_mask.as_ref().unwrap();
        let frac = fake.mask_fraction();
        prop_assert!((0.02..0.25).contains(&frac));
        let mut total = 0.0;
        for (i, (&a, &c)) in orig.pixels.data().iter().zip(fake.pixels.data()).enumerate() {
            if mask[i] == 0 {
                prop_assert_eq!(a.to_bits(), c.to_bits());
            }
            prop_assert!((0.0..=1.0).contains(&c));
            total += (a as f64 - c as f64).abs();
        }
        prop_assert!(total / orig.pixels.len() as f64 <= 0.05);
    }

    #[test]
    fn perturbations_keep_shape_and_range(seed in any::<u64>(), kind in arb_kind(), level in 0u8..=5, mix in 1usize..=4, rgb in any::<bool>()) {
        let s = DatasetSpec { channels: if rgb { 3 } else { 1 }, ..spec(Family::A, seed) };
        let img = gen_original(&s, "a-test-0000-real", 0).pixels;
        let p = PerturbationSpec { kind, level: Level::Fixed(level), mix_count: mix };
        let out = perturb(&img, &p, seed).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(&out, &perturb(&img, &p, seed).unwrap());
    }

    #[test]
    fn level_one_is_mild_except_brightness(seed in any::<u64>(), kind in arb_kind()) {
        prop_assume!(kind != PerturbKind::BrightnessShift);
        let img = gen_original(&spec(Family::A, seed), "a-val-0003-real", 1).pixels;
        let out = perturb(&img, &PerturbationSpec::single(kind, 1), seed).unwrap();
        let delta = (out.data().iter().map(|&v| v as f64).sum::<f64>() - img.data().iter().map(|&v| v as f64).sum::<f64>())
            / img.len() as f64;
        prop_assert!(delta.abs() < 0.02, "{} shifted the mean by {}", kind, delta);
    }
}
