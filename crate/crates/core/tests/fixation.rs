use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scamkit::camscam::Granularity;
use scamkit::cgcn::Frl;
use scamkit::fixation::{fuse_agg, fuse_final, FpKind, FpNet, FpSpec};
use scamkit::nets::{Checkpoint, VideoFragment};
use scamkit::tensor::{minmax_normalize, Tensor};

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(&[h, w], (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn fragment(rng: &mut ChaCha8Rng, side: usize) -> VideoFragment {
    let mut frame = || Tensor::new(&[3, side, side], (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let frames = [frame(), frame(), frame()];
    let spec = Tensor::new(&[32, 32], (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    VideoFragment::new(frames, spec, 0, 0, 1, true).unwrap()
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn spec(kind: FpKind) -> FpSpec {
    FpSpec {
        kind,
        frame: 32,
        steps: 2,
        frl: Some(Frl::default()),
    }
}

#[test]
fn fuse_final_of_identical_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_map(&mut rng, 5, 5);
    let zx = minmax_normalize(&x);
    let want = zx.map(|v| 0.5 * v * v * v + 0.5 * v);
    assert!(max_diff(&fuse_final(&x, &x, &x).unwrap(), &want) <= 1e-12);
    let agg = zx.map(|v| 0.25 * v * v * v * v);
    assert!(max_diff(&fuse_agg(&x, &x, &x).unwrap(), &agg) <= 1e-12);
}

#[test]
fn zero_map_kills_the_product_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_map(&mut rng, 4, 4);
    let b = random_map(&mut rng, 4, 4);
    let zero = Tensor::zeros(&[4, 4]);
    let sum = minmax_normalize(&a.zip_map(&b, "add", |x, y| x + y).unwrap());
    let fin = fuse_final(&a, &b, &zero).unwrap();
    assert!(max_diff(&fin, &sum.map(|v| 0.5 * v)) <= 1e-12);
    assert!(fuse_agg(&a, &b, &zero).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fusion_rejects_mismatched_maps() {
    let a = Tensor::zeros(&[2, 2]);
    let b = Tensor::zeros(&[2, 3]);
    assert!(fuse_final(&a, &a, &b).is_err());
    assert!(fuse_agg(&a, &b, &a).is_err());
}

#[test]
fn kind_names_round_trip() {
    for name in ["sta", "sta+short", "sta+long"] {
        let k: FpKind = name.parse().unwrap();
        assert_eq!(k.to_string(), name);
        assert_eq!(FpKind::from_code(k.code()).unwrap(), k);
    }
    assert!("sta+cross".parse::<FpKind>().is_err());
    assert!(FpNet::<f64>::new(spec(FpKind::StaPlus(Granularity::Cross)), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn sta_predicts_one_unit_map_at_frame_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = FpNet::<f64>::new(spec(FpKind::Sta), &mut rng).unwrap();
    let f = fragment(&mut rng, 32);
    let maps = net.predict(&[(&f, 1.0)]).unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].shape(), &[32, 32]);
    assert!(maps[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(net.predict(&[(&f, 1.0), (&f, 1.0)]).is_err());
    let small = fragment(&mut rng, 64);
    assert!(net.predict(&[(&small, 1.0)]).is_err());
}

#[test]
fn sta_plus_predicts_three_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = FpNet::<f64>::new(spec(FpKind::StaPlus(Granularity::Short)), &mut rng).unwrap();
    let [a, b, c] = [fragment(&mut rng, 32), fragment(&mut rng, 32), fragment(&mut rng, 32)];
    let maps = net.predict(&[(&a, 1.0), (&b, 0.0), (&c, 1.0)]).unwrap();
    assert_eq!(maps.len(), 3);
    for m in &maps {
        assert_eq!(m.shape(), &[32, 32]);
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(net.predict(&[(&a, 1.0)]).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [FpKind::Sta, FpKind::StaPlus(Granularity::Long)] {
        let net = FpNet::<f64>::new(spec(kind), &mut rng).unwrap();
        let bytes = net.to_checkpoint(3, 7, 99).to_bytes().unwrap();
        let back = FpNet::<f64>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.spec.kind, kind);
        assert_eq!(back.spec.steps, 2);
        assert_eq!(back.spec.frl, Some(Frl::default()));
        assert_eq!(back.to_checkpoint(3, 7, 99).to_bytes().unwrap(), bytes);
        let inputs: Vec<VideoFragment> = (0..3).map(|_| fragment(&mut rng, 32)).collect();
        let n = if kind == FpKind::Sta { 1 } else { 3 };
        let refs: Vec<(&VideoFragment, f64)> = inputs.iter().take(n).map(|f| (f, 1.0)).collect();
        let x = net.predict(&refs).unwrap();
        let y = back.predict(&refs).unwrap();
        assert!(x.iter().zip(&y).all(|(p, q)| p.bit_eq(q)));
    }
}

#[test]
fn same_seed_builds_identical_nets() {
    let a = FpNet::<f64>::new(spec(FpKind::Sta), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let b = FpNet::<f64>::new(spec(FpKind::Sta), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a.to_checkpoint(0, 6, 0).to_bytes().unwrap(), b.to_checkpoint(0, 6, 0).to_bytes().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fuse_final_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_map(&mut rng, 4, 6), random_map(&mut rng, 4, 6), random_map(&mut rng, 4, 6));
        let base = fuse_final(&a, &b, &c).unwrap();
        for (x, y, z) in [(&a, &c, &b), (&b, &a, &c), (&b, &c, &a), (&c, &a, &b), (&c, &b, &a)] {
            prop_assert!(max_diff(&base, &fuse_final(x, y, z).unwrap()) <= 1e-9);
        }
        prop_assert!(base.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let agg = fuse_agg(&a, &b, &c).unwrap();
        prop_assert!(agg.data().iter().all(|v| (0.0..=0.25).contains(v)));
    }

    #[test]
    fn fuse_final_of_copies_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, 5, 5);
        let zx = minmax_normalize(&x);
        let f = fuse_final(&x, &x, &x).unwrap();
        for i in 0..25 {
            for j in 0..25 {
                if zx.data()[i] <= zx.data()[j] {
                    prop_assert!(f.data()[i] <= f.data()[j] + 1e-12);
                }
            }
        }
    }
}
