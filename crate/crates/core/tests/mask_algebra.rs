use exedit_core::data::{generate_mask, parse_region, Rect, RegionKind, RegionPreset, RegionSpec};
use exedit_core::generator::{compose, corrupt};
use exedit_core::graph::Graph;
use exedit_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, res: usize) -> Tensor<f32> {
    Tensor::from_fn(&[3, res, res], |_| rng.gen_range(-1.0f32..=1.0))
}

fn random_mask(rng: &mut ChaCha8Rng, res: usize) -> Tensor<f32> {
    let density = rng.gen_range(0.0..=1.0);
    Tensor::from_fn(&[res, res], |_| if rng.gen_bool(density) { 1.0 } else { 0.0 })
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn full_region_is_all_ones() {
    let m = generate_mask::<f32>(&RegionSpec::full(), 4, 4).unwrap();
    assert!(m.data().iter().all(|&v| v == 1.0));
}

#[test]
fn no_rectangles_is_all_zeros() {
    let m = generate_mask::<f32>(&RegionSpec::union(vec![]), 4, 4).unwrap();
    assert!(m.data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_rectangle_support() {
    let m = generate_mask::<f32>(&RegionSpec::rect(Rect::new(1, 3, 0, 2)), 4, 4).unwrap();
    let ones: Vec<(usize, usize)> = (0..16).filter(|i| m.data()[*i] == 1.0).map(|i| (i / 4, i % 4)).collect();
    assert_eq!(ones, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
}

#[test]
fn out_of_bounds_rectangle_is_rejected() {
    for r in [Rect::new(0, 5, 0, 2), Rect::new(0, 2, 3, 5), Rect::new(3, 2, 0, 1)] {
        let err = generate_mask::<f32>(&RegionSpec::rect(r), 4, 4).unwrap_err();
        assert!(matches!(err, exedit_core::Error::Validation(_)));
    }
}

#[test]
fn mask_matches_membership_exhaustively_up_to_16() {
    for h in 1..=16 {
        for w in 1..=16 {
            // Every rectangle with corners on a coarse lattice, plus unions of pairs.
            let cuts = |n: usize| -> Vec<usize> { (0..=n).step_by((n / 4).max(1)).chain([n]).collect() };
            let rows = cuts(h);
            let cols = cuts(w);
            let mut rects = Vec::new();
            for &r0 in &rows {
                for &r1 in rows.iter().filter(|&&r| r >= r0) {
                    for &c0 in &cols {
                        for &c1 in cols.iter().filter(|&&c| c >= c0) {
                            rects.push(Rect::new(r0, r1, c0, c1));
                        }
                    }
                }
            }
            for (k, r) in rects.iter().enumerate() {
                let other = rects[(k * 7 + 3) % rects.len()];
                for spec in [RegionSpec::rect(*r), RegionSpec::union(vec![*r, other])] {
                    let m = generate_mask::<f32>(&spec, h, w).unwrap();
                    for row in 0..h {
                        for col in 0..w {
                            let inside = spec
                                .rectangles
                                .iter()
                                .any(|q| q.row0 <= row && row < q.row1 && q.col0 <= col && col < q.col1);
                            let v = m.data()[row * w + col];
                            assert!(v == 0.0 || v == 1.0);
                            assert_eq!(v == 1.0, inside, "{spec:?} at ({row}, {col}) on {h}x{w}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn presets_parse_and_stay_in_bounds() {
    for res in [32, 64, 128] {
        for name in ["mouth", "eyes", "components", "full", "all"] {
            let spec = parse_region(name, res).unwrap();
            spec.validate(res, res).unwrap();
            let m = generate_mask::<f32>(&spec, res, res).unwrap();
            let ones = m.data().iter().filter(|&&v| v == 1.0).count();
            assert!(ones > 0 && (ones < res * res || name == "all"), "{name} at {res}");
        }
        assert_eq!(parse_region("all", res).unwrap().kind, RegionKind::Full);
        assert_eq!(parse_region("full", res).unwrap(), RegionPreset::Face.region(res));
    }
    let custom = parse_region("1,3,0,2; 0,1,3,4", 4).unwrap();
    assert_eq!(custom, RegionSpec::union(vec![Rect::new(1, 3, 0, 2), Rect::new(0, 1, 3, 4)]));
    assert!(parse_region("1,3,0", 4).is_err());
    assert!(parse_region("nose-ish", 4).is_err());
    assert!(parse_region("0,9,0,1", 4).is_err());
}

#[test]
fn corrupt_checkerboard_matches_elementwise_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_image(&mut rng, 16);
    let m = Tensor::from_fn(&[16, 16], |i| ((i / 16 + i % 16) % 2) as f32);
    let out = corrupt(&a, &m).unwrap();
    for c in 0..3 {
        for p in 0..256 {
            let expect = a.data()[c * 256 + p] * (1.0 - m.data()[p]);
            assert_eq!(out.data()[c * 256 + p], expect);
        }
    }
}

#[test]
fn compose_matches_per_pixel_select() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let a = random_image(&mut rng, 16);
        let a_b = random_image(&mut rng, 16);
        let m = random_mask(&mut rng, 16);
        let y = compose(&a_b, &corrupt(&a, &m).unwrap(), &m).unwrap();
        for i in 0..y.len() {
            let expect = if m.data()[i % 256] == 1.0 { a_b.data()[i] } else { a.data()[i] };
            assert_eq!(y.data()[i].to_bits(), expect.to_bits());
        }
    }
}

#[test]
fn identities_hold_bit_exactly_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for res in [16, 128] {
        let zeros = Tensor::zeros(&[res, res]);
        let ones = Tensor::ones(&[res, res]);
        for _ in 0..1000 {
            let a = random_image(&mut rng, res);
            let m = random_mask(&mut rng, res);
            assert_eq!(bits(&corrupt(&a, &zeros).unwrap()), bits(&a));
            assert!(corrupt(&a, &ones).unwrap().data().iter().all(|&v| v == 0.0));
            assert_eq!(bits(&compose(&a, &corrupt(&a, &m).unwrap(), &m).unwrap()), bits(&a));
        }
        let a = random_image(&mut rng, res);
        let a_b = random_image(&mut rng, res);
        assert_eq!(bits(&compose(&a_b, &corrupt(&a, &zeros).unwrap(), &zeros).unwrap()), bits(&a));
        assert_eq!(bits(&compose(&a_b, &corrupt(&a, &ones).unwrap(), &ones).unwrap()), bits(&a_b));
    }
}

#[test]
fn shape_mismatches_are_validation_errors() {
    let a = Tensor::<f32>::zeros(&[3, 8, 8]);
    assert!(corrupt(&a, &Tensor::zeros(&[8, 7])).is_err());
    assert!(compose(&a, &Tensor::zeros(&[3, 8, 7]), &Tensor::zeros(&[8, 8])).is_err());
    assert!(corrupt(&a, &Tensor::full(&[8, 8], 0.5)).is_err());
}

#[test]
fn compose_gradient_is_mask_over_3hw() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (6, 5);
    let a_b: Tensor<f64> = Tensor::from_fn(&[1, 3, h, w], |_| rng.gen_range(-1.0..1.0));
    let a: Tensor<f64> = Tensor::from_fn(&[1, 3, h, w], |_| rng.gen_range(-1.0..1.0));
    let m: Tensor<f64> = Tensor::from_fn(&[h, w], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    let a_tilde = corrupt(&a, &m).unwrap();
    let mut g = Graph::new();
    let xb = g.variable(a_b.clone());
    let kept = g.constant(a_tilde.clone());
    let y = g.compose(xb, kept, &m).unwrap();
    // y > -5 everywhere, so mean |y - (-5)| = mean(y) + 5.
    let offset = g.constant(Tensor::full(&[1, 3, h, w], -5.0));
    let mean = g.mean_abs_diff(y, offset).unwrap();
    let grad = g.backward(mean).unwrap().wrt(xb).unwrap().clone();
    let mean_of = |t: &Tensor<f64>| compose(t, &a_tilde, &m).unwrap().mean();
    let step = 1e-5;
    for i in 0..a_b.len() {
        let analytic = grad.data()[i];
        let expected = m.data()[i % (h * w)] / (3 * h * w) as f64;
        assert_eq!(analytic, expected);
        let mut plus = a_b.clone();
        plus.data_mut()[i] += step;
        let mut minus = a_b.clone();
        minus.data_mut()[i] -= step;
        let fd = (mean_of(&plus) - mean_of(&minus)) / (2.0 * step);
        let rel = (fd - expected).abs() / expected.abs().max(1e-12);
        assert!(if expected == 0.0 { fd.abs() < 1e-12 } else { rel < 1e-4 }, "entry {i}: fd {fd} vs {expected}");
    }
}

proptest! {
    #[test]
    fn compose_never_leaks_outside_the_hole(seed in any::<u64>(), res in 1usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, res);
        let a_b = random_image(&mut rng, res);
        let m = random_mask(&mut rng, res);
        let y = compose(&a_b, &corrupt(&a, &m).unwrap(), &m).unwrap();
        for i in 0..y.len() {
            if m.data()[i % (res * res)] == 0.0 {
                prop_assert_eq!(y.data()[i].to_bits(), a.data()[i].to_bits());
            }
        }
    }

    #[test]
    fn generated_masks_are_binary(r0 in 0usize..10, dr in 0usize..10, c0 in 0usize..10, dc in 0usize..10) {
        let spec = RegionSpec::rect(Rect::new(r0, (r0 + dr).min(12), c0, (c0 + dc).min(12)));
        let m = generate_mask::<f32>(&spec, 12, 12).unwrap();
        prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(m.data().iter().filter(|&&v| v == 1.0).count(), spec.rectangles[0].area());
    }
}
