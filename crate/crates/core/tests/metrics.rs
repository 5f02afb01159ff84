use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scamkit::metrics::{auc_judd, cc, nss, shuffled_auc, sim};
use scamkit::tensor::Tensor;

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(&[h, w], (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    (0..n).map(|_| (rng.gen_range(0..h), rng.gen_range(0..w))).collect()
}

#[test]
fn cc_of_mirrored_map_is_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_map(&mut rng, 6, 6);
    let y = x.map(|v| 3.0 - v);
    assert!((cc(&x, &y).unwrap() + 1.0).abs() <= 1e-12);
}

#[test]
fn cc_matches_direct_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_map(&mut rng, 5, 7);
    let b = random_map(&mut rng, 5, 7);
    let n = a.len() as f64;
    let (sa, sb, sab, saa, sbb) = a.data().iter().zip(b.data()).fold((0.0, 0.0, 0.0, 0.0, 0.0), |acc, (&x, &y)| {
        (acc.0 + x, acc.1 + y, acc.2 + x * y, acc.3 + x * x, acc.4 + y * y)
    });
    let want = (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt());
    assert!((cc(&a, &b).unwrap() - want).abs() <= 1e-12);
}

#[test]
fn cc_rejects_constant_and_mismatched_maps() {
    let x = Tensor::full(&[3, 3], 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(cc(&x, &random_map(&mut rng, 3, 3)).is_err());
    assert!(cc(&random_map(&mut rng, 3, 3), &random_map(&mut rng, 3, 4)).is_err());
}

#[test]
fn sim_cases() {
    let a = Tensor::new(&[2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let b = Tensor::new(&[2, 2], vec![0.0, 0.0, 2.0, 5.0]).unwrap();
    assert_eq!(sim(&a, &b).unwrap(), 0.0);
    assert!((sim(&a, &a.map(|v| 4.0 * v)).unwrap() - 1.0).abs() <= 1e-12);
    assert!(sim(&a, &Tensor::zeros(&[2, 2])).is_err());
}

#[test]
fn nss_hand_case() {
    let ps = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!((nss(&ps, &[(0, 0)]).unwrap() - 1.732_050_8).abs() <= 1e-6);
    assert!(nss(&Tensor::full(&[2, 2], 0.5), &[(0, 0)]).is_err());
    assert!(nss(&ps, &[]).is_err());
    assert!(nss(&ps, &[(2, 0)]).is_err());
}

#[test]
fn nss_over_every_pixel_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ps = random_map(&mut rng, 4, 5);
    let all: Vec<_> = (0..4).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
    assert!(nss(&ps, &all).unwrap().abs() <= 1e-12);
}

#[test]
fn duplicate_fixations_count_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ps = random_map(&mut rng, 4, 4);
    assert_eq!(nss(&ps, &[(1, 1), (2, 3), (1, 1)]).unwrap(), nss(&ps, &[(1, 1), (2, 3)]).unwrap());
    assert_eq!(auc_judd(&ps, &[(1, 1), (1, 1)]).unwrap(), auc_judd(&ps, &[(1, 1)]).unwrap());
}

#[test]
fn auc_cases() {
    let fl = [(0, 1), (2, 2)];
    let mut perfect = Tensor::zeros(&[3, 3]);
    for &(r, c) in &fl {
        perfect.data_mut()[r * 3 + c] = 1.0;
    }
    assert_eq!(auc_judd(&perfect, &fl).unwrap(), 1.0);
    assert_eq!(auc_judd(&Tensor::full(&[3, 3], 0.4), &fl).unwrap(), 0.5);
    let all: Vec<_> = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).collect();
    assert!(auc_judd(&perfect, &all).is_err());
}

#[test]
fn shuffled_auc_cases() {
    let fl = [(0, 0), (1, 1)];
    let other_a = [(2, 2), (3, 3)];
    let other_b = [(0, 3), (0, 0)];
    let others: Vec<&[(usize, usize)]> = vec![&other_a, &other_b];
    let mut perfect = Tensor::zeros(&[4, 4]);
    perfect.data_mut()[0] = 1.0;
    perfect.data_mut()[5] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert_eq!(shuffled_auc(&perfect, &fl, &others, &mut rng).unwrap(), 1.0);
    assert_eq!(shuffled_auc(&Tensor::full(&[4, 4], 0.1), &fl, &others, &mut rng).unwrap(), 0.5);
    // the only other fixation coincides with a positive
    let same: [(usize, usize); 1] = [(0, 0)];
    assert!(shuffled_auc(&perfect, &fl, &[&same[..]], &mut rng).is_err());
}

#[test]
fn shuffled_auc_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ps = random_map(&mut rng, 16, 16);
    let fl = random_points(&mut rng, 10, 16, 16);
    let pools: Vec<Vec<(usize, usize)>> = (0..20).map(|_| random_points(&mut rng, 10, 16, 16)).collect();
    let others: Vec<&[(usize, usize)]> = pools.iter().map(|p| p.as_slice()).collect();
    let a = shuffled_auc(&ps, &fl, &others, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = shuffled_auc(&ps, &fl, &others, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_is_invariant_to_monotone_rescaling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = random_map(&mut rng, 8, 8);
        let fl = random_points(&mut rng, 6, 8, 8);
        let warped = ps.map(|v| (3.0 * v).exp() - 7.0);
        prop_assert!((auc_judd(&ps, &fl).unwrap() - auc_judd(&warped, &fl).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn nss_and_cc_are_affine_invariant(seed in any::<u64>(), k in 0.01f64..100.0, c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = random_map(&mut rng, 6, 6);
        let cf = random_map(&mut rng, 6, 6);
        let fl = random_points(&mut rng, 5, 6, 6);
        let moved = ps.map(|v| k * v + c);
        prop_assert!((nss(&ps, &fl).unwrap() - nss(&moved, &fl).unwrap()).abs() <= 1e-9);
        prop_assert!((cc(&ps, &cf).unwrap() - cc(&moved, &cf).unwrap()).abs() <= 1e-9);
        prop_assert!((cc(&ps, &cf).unwrap() - cc(&ps, &cf.map(|v| k * v + c)).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn metric_ranges_and_symmetry(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_map(&mut rng, 5, 5);
        let b = random_map(&mut rng, 5, 5);
        let fl = random_points(&mut rng, 4, 5, 5);
        let s = sim(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - sim(&b, &a).unwrap()).abs() <= 1e-15);
        let r = cc(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - cc(&b, &a).unwrap()).abs() <= 1e-15);
        let auc = auc_judd(&a, &fl).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
    }
}
