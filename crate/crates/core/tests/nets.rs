use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scamkit::cgcn::Frl;
use scamkit::nets::classifier::argmax;
use scamkit::nets::encoders::{AudioProjector, SpatialEncoder};
use scamkit::nets::{st_fuse, sa_fuse, Checkpoint, ClassifierOutput, ClsNet, Ctx, NetInput, NetKind, NetSpec, ParamStore, Source, VideoFragment};
use scamkit::tensor::{Graph, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn fragment(rng: &mut ChaCha8Rng, side: usize) -> VideoFragment {
    let frames = [rand_t(rng, &[3, side, side], 0.0, 1.0), rand_t(rng, &[3, side, side], 0.0, 1.0), rand_t(rng, &[3, side, side], 0.0, 1.0)];
    VideoFragment::new(frames, rand_t(rng, &[32, 32], 0.0, 1.0), 1, 0, 1, true).unwrap()
}

fn net(kind: NetKind, seed: u64) -> ClsNet<f64> {
    let spec = NetSpec {
        kind,
        classes: 3,
        frame: 64,
        steps: 2,
        frl: Some(Frl::default()),
    };
    ClsNet::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn spatial_feature_grid_and_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = fragment(&mut rng, 64);
    for (kind, channels) in [("s", 32), ("sa", 64), ("st", 64)] {
        let n = net(kind.parse().unwrap(), 1);
        let mut ctx = Ctx::new(&n.store, false);
        let b = n.branch(&mut ctx, &f, 1.0).unwrap();
        assert_eq!(ctx.g.shape(b), &[channels, 8, 8], "{kind}");
    }
}

#[test]
fn zero_frame_with_zero_weights_gives_zero_feature() {
    let mut store = ParamStore::<f64>::new();
    let enc = SpatialEncoder::new(&mut store, "enc", &mut ChaCha8Rng::seed_from_u64(2));
    let mut ctx = Ctx::new(&store, false);
    let x = ctx.input(Tensor::zeros(&[3, 64, 64]));
    let s = enc.forward(&mut ctx, x).unwrap().s;
    assert!(ctx.g.value(s).data().iter().all(|&v| v == 0.0));
}

#[test]
fn features_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = fragment(&mut rng, 64);
    let n = net(NetKind::Base(Source::St), 3);
    let (a, ma) = n.predict(&NetInput::single(&f, 1.0)).unwrap();
    let (b, mb) = n.predict(&NetInput::single(&f, 1.0)).unwrap();
    assert_eq!(a, b);
    assert!(ma.bit_eq(&mb));
}

#[test]
fn st_fuse_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = rand_t(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let v = rand_t(&mut rng, &[2, 3, 3], -2.0, 2.0);
    let mut g = Graph::new();
    let (sv, vv) = (g.constant(s.clone()), g.constant(v.clone()));
    let out = st_fuse(&mut g, sv, vv).unwrap();
    let got = g.value(out);
    assert_eq!(got.shape(), &[4, 3, 3]);
    for i in 0..18 {
        let x = s.data()[i];
        assert_eq!(got.data()[i], (sigmoid(v.data()[i]) * x + x).max(0.0));
        assert_eq!(got.data()[18 + i], x);
    }
    let zero = g.constant(Tensor::zeros(&[2, 3, 3]));
    let out = st_fuse(&mut g, zero, vv).unwrap();
    assert!(g.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn closed_audio_gate_leaves_half_modulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let proj = AudioProjector::new(&mut store, "proj", 8, &mut rng).unwrap();
    let s = rand_t(&mut rng, &[32, 8, 8], -1.0, 1.0);
    let a = rand_t(&mut rng, &[scamkit::nets::encoders::AUDIO_DIM], 0.0, 1.0);
    let mut ctx = Ctx::new(&store, false);
    let (sv, av) = (ctx.input(s.clone()), ctx.input(a));
    let out = sa_fuse(&mut ctx, &proj, sv, av, 0.0).unwrap();
    let got = ctx.g.value(out);
    assert_eq!(got.shape(), &[64, 8, 8]);
    let n = s.len();
    for i in 0..n {
        let x = s.data()[i];
        assert!((got.data()[i] - (1.5 * x).max(0.0)).abs() <= 1e-15);
        assert_eq!(got.data()[n + i], x);
    }
}

#[test]
fn zero_head_gives_half_confidences() {
    let mut n = net(NetKind::Base(Source::S), 6);
    let w = n.head().conv.w;
    n.store.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let f = fragment(&mut ChaCha8Rng::seed_from_u64(6), 64);
    let (out, _) = n.predict(&NetInput::single(&f, 1.0)).unwrap();
    assert_eq!(out.confidences, vec![0.5; 3]);
}

#[test]
fn confidences_follow_logits() {
    let out = ClassifierOutput::from_logits(&Tensor::new(&[4], vec![-1.0, 2.5, 0.3, 2.5]).unwrap());
    assert_eq!(out.argmax(), 1);
    assert_eq!(argmax(&out.confidences), 1);
    assert!(out.confidences.iter().all(|&c| c > 0.0 && c < 1.0));
    assert_eq!(out.confidences[2], sigmoid(0.3));
}

#[test]
fn msm_loss_at_zero_logits_is_log_two() {
    for c in [2, 3, 7] {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[c]));
        let mut target = vec![0.0; c];
        target[0] = 1.0;
        let l = g.msm_loss(logits, &target).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() <= 1e-12);
    }
    let mut g = Graph::<f64>::new();
    let logits = g.constant(Tensor::new(&[2], vec![40.0, -40.0]).unwrap());
    let l = g.msm_loss(logits, &[1.0, 0.0]).unwrap();
    assert!(g.value(l).item() < 1e-12);
}

#[test]
fn untrained_zero_switch_closes_the_gate() {
    let mut n = net(NetKind::Switch, 7);
    for p in n.store.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let f = fragment(&mut ChaCha8Rng::seed_from_u64(7), 64);
    assert_eq!(n.switch_gate(&f).unwrap(), 0.0);
    assert!(net(NetKind::Base(Source::Sa), 7).switch_gate(&f).is_err());
}

#[test]
fn plus_nets_need_partners() {
    let n = net(NetKind::Plus(Source::S), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let [t, a, b] = [fragment(&mut rng, 64), fragment(&mut rng, 64), fragment(&mut rng, 64)];
    assert!(n.predict(&NetInput::single(&t, 1.0)).is_err());
    let (out, map) = n
        .predict(&NetInput {
            target: &t,
            gate: 1.0,
            granular: Some([&a, &b]),
        })
        .unwrap();
    assert_eq!(out.confidences.len(), 3);
    assert_eq!(map.shape(), &[3, 8, 8]);
}

#[test]
fn warm_start_copies_the_base_net() {
    let base = net(NetKind::Base(Source::St), 9);
    let mut plus = net(NetKind::Plus(Source::St), 10);
    assert!(plus.warm_start(&base).unwrap() > 0);
    for p in base.store.params() {
        let name = match p.name.strip_prefix("head.") {
            Some(rest) => format!("node.{rest}"),
            None => p.name.clone(),
        };
        let q = plus.store.params().iter().find(|q| q.name == name).unwrap();
        assert!(q.value.bit_eq(&p.value), "{name}");
    }
    let mut wrong = net(NetKind::Plus(Source::S), 11);
    assert!(wrong.warm_start(&base).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = fragment(&mut rng, 64);
    for kind in ["s", "sa", "st", "switch"] {
        let n = net(kind.parse().unwrap(), 12);
        let bytes = n.to_checkpoint(5, 12, 1).to_bytes().unwrap();
        let back = ClsNet::<f64>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.kind(), n.kind());
        let (a, _) = n.predict(&NetInput::single(&f, 1.0)).unwrap();
        let (b, _) = back.predict(&NetInput::single(&f, 1.0)).unwrap();
        assert_eq!(a, b);
    }
    assert!(Checkpoint::<f64>::from_bytes(b"not a checkpoint").is_err());
}

#[test]
fn net_names_round_trip() {
    for name in ["s", "sa", "st", "s+", "sa+", "st+", "switch"] {
        let k: NetKind = name.parse().unwrap();
        assert_eq!(k.to_string(), name);
        assert_eq!(NetKind::from_code(k.code()).unwrap(), k);
    }
    assert!("sta".parse::<NetKind>().is_err());
}
