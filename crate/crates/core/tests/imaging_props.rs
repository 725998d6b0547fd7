//! Corruption, masking, rotation and preprocessing invariants.

mod support;

use proptest::prelude::*;
use sspb_core::imaging::{
    corrupt_swap, deprocess, flip_channels, mask_patch, preprocess, rotate_image, uncorrupt, PreprocessParams,
};
use sspb_core::pretext::{build_pretext_dataset, PretextConfig, PretextTask, Target};
use sspb_core::rng::{rng_from, split};
use sspb_core::Image;

#[test]
fn fifty_corruptions_round_trip_bitwise() {
    for i in 0..50 {
        let img = support::rand_u8_image(split(10, i), 64, 64);
        let mut rng = rng_from(split(11, i));
        let (bad, record) = corrupt_swap(&img, 100, 9, &mut rng).unwrap();
        assert_eq!(record.swaps.len(), 100);
        assert_eq!(support::pixel_multiset(&bad), support::pixel_multiset(&img), "image {i}");
        let back = uncorrupt(&bad, &record).unwrap();
        assert_eq!(back.pixels(), img.pixels(), "image {i}");
    }
}

#[test]
fn reference_patch_size_round_trips_at_64() {
    // 30-pixel patches are the largest that fit twice into 64 pixels.
    let img = support::rand_u8_image(3, 64, 64);
    let (bad, record) = corrupt_swap(&img, 100, 30, &mut rng_from(4)).unwrap();
    assert_eq!(uncorrupt(&bad, &record).unwrap(), img);
}

#[test]
fn preprocess_round_trip_on_hundred_images() {
    let params = PreprocessParams::default();
    for i in 0..100 {
        let img = support::rand_u8_image(split(20, i), 12, 9);
        let back = deprocess(&preprocess(&img, &params).unwrap(), &params, false).unwrap();
        let worst = img.pixels().iter().zip(back.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 1e-5, "image {i}: {worst}");
        assert_eq!(flip_channels(&flip_channels(&img)), img);
    }
}

#[test]
fn rotation_by_zero_and_ninety() {
    for (i, n) in [16usize, 15, 8, 33].into_iter().enumerate() {
        let img = support::rand_u8_image(split(30, i as u64), n, n);
        assert_eq!(rotate_image(&img, 0.0).unwrap(), img);
        let got = rotate_image(&img, 90.0).unwrap();
        let want = support::rot90_ref(&img);
        let worst = got.pixels().iter().zip(want.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 1e-4, "side {n}: {worst}");
    }
}

#[test]
fn rotation_labels_are_decile_uniform() {
    let img = support::rand_u8_image(5, 8, 8);
    let images = vec![img; 10_000];
    let ds = build_pretext_dataset(&images, PretextTask::Rotation, &PretextConfig::default().resolve(8), 77).unwrap();
    let mut bins = [0usize; 10];
    for e in &ds.examples {
        let Target::Label(l) = e.target else { panic!("rotation target") };
        assert!((0.0..1.0).contains(&l));
        bins[(l * 10.0) as usize] += 1;
    }
    for (d, &count) in bins.iter().enumerate() {
        assert!((850..=1150).contains(&count), "decile {d}: {count}");
    }
}

fn image_strategy(max_side: usize) -> impl Strategy<Value = Image> {
    (2..=max_side, 2..=max_side, any::<u64>()).prop_map(|(h, w, seed)| support::rand_u8_image(seed, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corruption_is_a_reversible_permutation(
        seed in any::<u64>(),
        side in 8usize..40,
        patch_frac in 0.05f64..0.5,
        n_swaps in prop::sample::select(vec![0usize, 1, 10, 100]),
    ) {
        let img = support::rand_u8_image(seed, side, side);
        let patch = ((side as f64 * patch_frac) as usize).clamp(1, side / 2);
        let (bad, record) = corrupt_swap(&img, n_swaps, patch, &mut rng_from(seed ^ 1)).unwrap();
        prop_assert_eq!(support::pixel_multiset(&bad), support::pixel_multiset(&img));
        prop_assert_eq!(uncorrupt(&bad, &record).unwrap(), img);
    }

    #[test]
    fn mask_touches_only_its_square(img in image_strategy(20), r in 0usize..20, c in 0usize..20, side in 1usize..10) {
        let (h, w) = img.dims();
        prop_assume!(r + side <= h && c + side <= w);
        let out = mask_patch(&img, (r, c), side).unwrap();
        prop_assert!(img.count_differing_pixels(&out) <= side * side);
        for row in 0..h {
            for col in 0..w {
                let inside = (r..r + side).contains(&row) && (c..c + side).contains(&col);
                if inside {
                    prop_assert_eq!(out.pixel(row, col), [0.0; 3]);
                } else {
                    prop_assert_eq!(out.pixel(row, col), img.pixel(row, col));
                }
            }
        }
    }

    #[test]
    fn preprocess_inverts_for_any_means(img in image_strategy(12), m in prop::array::uniform3(0.0f32..255.0)) {
        let params = PreprocessParams { means_bgr: m };
        let back = deprocess(&preprocess(&img, &params).unwrap(), &params, false).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn quarter_turns_compose_to_identity(img in image_strategy(12)) {
        let (h, w) = img.dims();
        let sq = Image::from_fn(h.min(w), h.min(w), |r, c| img.pixel(r, c)).unwrap();
        let mut x = sq.clone();
        for _ in 0..4 {
            x = rotate_image(&x, 90.0).unwrap();
        }
        prop_assert_eq!(x, sq);
    }

    #[test]
    fn image_targets_match_input_dims(img in image_strategy(24), seed in any::<u64>()) {
        let side = img.height().min(img.width());
        prop_assume!(side >= 4);
        for task in [PretextTask::Inpaint, PretextTask::Corrupt] {
            let cfg = PretextConfig::default().resolve(side);
            let ds = build_pretext_dataset(std::slice::from_ref(&img), task, &cfg, seed).unwrap();
            let Target::Image(t) = &ds.examples[0].target else { panic!("image target") };
            prop_assert_eq!(t.dims(), ds.examples[0].input.dims());
        }
    }
}
