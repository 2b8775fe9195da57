use proptest::prelude::*;

use histoseg_core::patching::{
    center_crop, extract_global_patch, extract_local_patch, extract_pairs, plan_patch_grid,
    resize_bilinear, stitch_predictions,
};
use histoseg_core::raster::RasterImage;
use histoseg_core::rng::SeededRng;

fn random_rgb(h: usize, w: usize, seed: u64) -> RasterImage {
    let mut rng = SeededRng::new(seed);
    RasterImage::from_fn(h, w, 3, |_, _, _| rng.below(256) as f64).unwrap()
}

fn random_probs(h: usize, w: usize, seed: u64) -> RasterImage {
    let mut rng = SeededRng::new(seed);
    RasterImage::from_fn(h, w, 1, |_, _, _| rng.uniform()).unwrap()
}

#[test]
fn thousand_pixel_slide_grid() {
    let grid = plan_patch_grid(1000, 1000, 256, 64).unwrap();
    assert_eq!(grid.len(), 16);
    let mut rows: Vec<usize> = grid.origins.iter().map(|o| o.0).collect();
    rows.dedup();
    assert_eq!(rows, [0, 256, 512, 744]);
    let cols: Vec<usize> = grid.origins.iter().take(4).map(|o| o.1).collect();
    assert_eq!(cols, [0, 256, 512, 744]);
}

#[test]
fn every_global_patch_of_the_thousand_grid_centers_on_its_local() {
    let img = random_rgb(1000, 1000, 1);
    let grid = plan_patch_grid(1000, 1000, 256, 64).unwrap();
    for pair in extract_pairs(&img, &grid).unwrap() {
        assert_eq!(pair.global_raw.dims(), (384, 384));
        assert_eq!(center_crop(&pair.global_raw, 256).unwrap(), pair.local);
    }
}

#[test]
fn corner_padding_and_interior_patch() {
    let img = RasterImage::filled(1000, 1000, 3, 200.0).unwrap();
    let g = extract_global_patch(&img, (0, 0), 256, 64).unwrap();
    for r in 0..384 {
        for c in 0..384 {
            let padded = r < 64 || c < 64;
            for ch in 0..3 {
                assert_eq!(g.get(r, c, ch) == 0.0, padded, "({r},{c})");
            }
        }
    }
    let interior = extract_global_patch(&img, (256, 256), 256, 64).unwrap();
    assert!(interior.pixels().iter().all(|&v| v == 200.0));
}

#[test]
fn ramp_patch_and_full_image_extraction() {
    let ramp = RasterImage::from_fn(6, 7, 1, |r, c, _| (10 * r + c) as f64).unwrap();
    let sub = extract_local_patch(&ramp, (0, 0), 3).unwrap();
    assert_eq!(sub.pixels(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0, 20.0, 21.0, 22.0]);
    let square = random_rgb(9, 9, 2);
    assert_eq!(extract_local_patch(&square, (0, 0), 9).unwrap(), square);
    assert!(extract_local_patch(&square, (5, 0), 5).is_err());
}

#[test]
fn non_overlapping_tiles_reassemble_exactly() {
    let img = random_rgb(64, 96, 3);
    let grid = plan_patch_grid(64, 96, 32, 8).unwrap();
    assert_eq!(grid.len(), 6);
    let mut out = RasterImage::filled(64, 96, 3, -1.0).unwrap();
    for &(r0, c0) in &grid.origins {
        let tile = extract_local_patch(&img, (r0, c0), 32).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                for ch in 0..3 {
                    out.set(r0 + r, c0 + c, ch, tile.get(r, c, ch));
                }
            }
        }
    }
    assert_eq!(out, img);
}

#[test]
fn single_patch_stitch_and_constant_maps() {
    let grid = plan_patch_grid(16, 16, 16, 4).unwrap();
    let map = random_probs(16, 16, 4);
    assert_eq!(stitch_predictions(&grid, std::slice::from_ref(&map)).unwrap(), map);

    let grid = plan_patch_grid(40, 40, 16, 4).unwrap();
    let maps = vec![RasterImage::filled(16, 16, 1, 0.7).unwrap(); grid.len()];
    let stitched = stitch_predictions(&grid, &maps).unwrap();
    assert!(stitched.pixels().iter().all(|&v| v == 0.7));
    assert!(stitch_predictions(&grid, &maps[1..]).is_err());
}

#[test]
fn resize_examples() {
    let img = RasterImage::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(resize_bilinear(&img, 1, 1).unwrap().pixels(), &[0.5]);
    let rgb = random_rgb(7, 5, 5);
    assert_eq!(resize_bilinear(&rgb, 7, 5).unwrap(), rgb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grids_cover_every_pixel_and_stay_inside(
        h in 1usize..300,
        w in 1usize..300,
        p in 1usize..80,
    ) {
        prop_assume!(p <= h && p <= w);
        let grid = plan_patch_grid(h, w, p, 8).unwrap();
        let mut covered = vec![false; h * w];
        for &(r0, c0) in &grid.origins {
            prop_assert!(r0 + p <= h && c0 + p <= w);
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    covered[r * w + c] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn global_centers_on_local_and_pads_with_exact_zeros(
        h in 8usize..60,
        w in 8usize..60,
        p in 4usize..9,
        margin in 0usize..12,
        seed in any::<u64>(),
    ) {
        let img = {
            // Strictly positive so padding is distinguishable.
            let mut rng = SeededRng::new(seed);
            RasterImage::from_fn(h, w, 3, |_, _, _| 1.0 + rng.below(255) as f64).unwrap()
        };
        let grid = plan_patch_grid(h, w, p, margin).unwrap();
        for pair in extract_pairs(&img, &grid).unwrap() {
            prop_assert_eq!(&center_crop(&pair.global_raw, p).unwrap(), &pair.local);
            let (r0, c0) = pair.origin;
            let size = p + 2 * margin;
            for i in 0..size {
                for j in 0..size {
                    let sr = r0 as isize - margin as isize + i as isize;
                    let sc = c0 as isize - margin as isize + j as isize;
                    let outside = sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize;
                    for ch in 0..3 {
                        let v = pair.global_raw.get(i, j, ch);
                        if outside {
                            prop_assert_eq!(v, 0.0);
                        } else {
                            prop_assert_eq!(v, img.get(sr as usize, sc as usize, ch));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn stitching_extracted_maps_is_the_identity(
        h in 4usize..70,
        w in 4usize..70,
        p in 2usize..20,
        seed in any::<u64>(),
    ) {
        prop_assume!(p <= h && p <= w);
        let map = random_probs(h, w, seed);
        let grid = plan_patch_grid(h, w, p, 3).unwrap();
        let maps: Vec<RasterImage> = grid
            .origins
            .iter()
            .map(|&o| extract_local_patch(&map, o, p).unwrap())
            .collect();
        prop_assert_eq!(stitch_predictions(&grid, &maps).unwrap(), map);
    }

    #[test]
    fn resizing_a_constant_keeps_it(
        h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, v in 0.0f64..255.0,
    ) {
        let img = RasterImage::filled(h, w, 3, v).unwrap();
        let out = resize_bilinear(&img, oh, ow).unwrap();
        prop_assert!(out.pixels().iter().all(|&x| (x - v).abs() <= 1e-12 * v.max(1.0)));
    }
}
