use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scamkit::cgcn::{channel_mean, frl_mask, frl_refine, mask_from_cmean, update_mg, update_target, Cgcn, Edges, Frl, GraphState};
use scamkit::nets::gradcheck::check_params;
use scamkit::nets::{Ctx, ParamStore};
use scamkit::tensor::{Graph, Tensor};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn identity_queries(store: &mut ParamStore<f64>, c: usize) {
    for p in store.params_mut() {
        if p.name.ends_with(".w") {
            let v = p.value.data_mut();
            v.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..c {
                v[i * c + i] = 1.0;
            }
        }
    }
}

fn net(c: usize, steps: usize, frl: Option<Frl>, seed: u64) -> (ParamStore<f64>, Cgcn) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Cgcn::new(&mut store, "cgcn", c, steps, frl, &mut rng).unwrap();
    (store, g)
}

#[test]
fn one_hot_nodes_attend_at_a_single_pixel_pair() {
    let (mut store, g) = net(2, 1, None, 1);
    identity_queries(&mut store, 2);
    let mut h = Tensor::zeros(&[2, 2, 2]);
    h.data_mut()[3] = 1.0;
    let mut ctx = Ctx::new(&store, false);
    let a = ctx.input(h.clone());
    let b = ctx.input(h);
    let f = g.interattention(&mut ctx, a, b).unwrap();
    let nonzero: Vec<usize> = ctx.g.value(f).data().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    assert_eq!(nonzero, vec![3 * 4 + 3]);
}

#[test]
fn zero_partner_gives_zero_affinity() {
    let (store, g) = net(3, 1, None, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ctx = Ctx::new(&store, false);
    let a = ctx.input(rand_t(&mut rng, &[3, 4, 4], -1.0, 1.0));
    let b = ctx.input(Tensor::zeros(&[3, 4, 4]));
    let f = g.interattention(&mut ctx, a, b).unwrap();
    assert!(ctx.g.value(f).data().iter().all(|&v| v == 0.0));
}

#[test]
fn shared_branches_make_affinity_transpose_symmetric() {
    let (store, g) = net(3, 1, None, 3);
    let g = g.with_shared_branches();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ctx = Ctx::new(&store, false);
    let a = ctx.input(rand_t(&mut rng, &[3, 2, 3], -1.0, 1.0));
    let b = ctx.input(rand_t(&mut rng, &[3, 2, 3], -1.0, 1.0));
    let fab = g.interattention(&mut ctx, a, b).unwrap();
    let fba = g.interattention(&mut ctx, b, a).unwrap();
    let n = 6;
    for i in 0..n {
        for j in 0..n {
            let x = ctx.g.value(fab).data()[i * n + j];
            let y = ctx.g.value(fba).data()[j * n + i];
            assert!((x - y).abs() < 1e-12);
        }
    }
}

fn state(g: &mut Graph<f64>, ta: Tensor<f64>, mg: Vec<Tensor<f64>>) -> GraphState {
    GraphState {
        ta: g.constant(ta),
        mg: mg.into_iter().map(|t| g.constant(t)).collect(),
        step: 0,
    }
}

fn identity_edges(g: &mut Graph<f64>, n: usize, hw: usize) -> Edges {
    let mut eye = Tensor::zeros(&[hw, hw]);
    for i in 0..hw {
        eye.data_mut()[i * hw + i] = 1.0;
    }
    let mut e = || g.constant(eye.clone());
    Edges {
        ta_mg: (0..n).map(|_| e()).collect(),
        mg_ta: (0..n).map(|_| e()).collect(),
        mg_mg: (0..n).map(|i| (0..n).map(|j| if i == j { None } else { Some(e()) }).collect()).collect(),
    }
}

#[test]
fn silent_neighbours_halve_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ta = rand_t(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let mut g = Graph::new();
    let s = state(&mut g, ta.clone(), vec![Tensor::zeros(&[2, 3, 3]), Tensor::zeros(&[2, 3, 3])]);
    let e = identity_edges(&mut g, 2, 9);
    let out = update_target(&mut g, &s, &e).unwrap();
    for (o, t) in g.value(out).data().iter().zip(ta.data()) {
        assert_eq!(*o, 0.5 * t);
    }
}

#[test]
fn identity_edge_passes_neighbour_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ta = rand_t(&mut rng, &[2, 2, 2], -1.0, 1.0);
    let mg = rand_t(&mut rng, &[2, 2, 2], -1.0, 1.0);
    let mut g = Graph::new();
    let s = state(&mut g, ta.clone(), vec![mg.clone()]);
    let e = identity_edges(&mut g, 1, 4);
    let out = update_target(&mut g, &s, &e).unwrap();
    for ((o, t), m) in g.value(out).data().iter().zip(ta.data()).zip(mg.data()) {
        assert!((o - t * sigmoid(*m)).abs() < 1e-15);
    }
}

#[test]
fn granularity_node_halves_when_peers_are_silent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mg0 = rand_t(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let mut g = Graph::new();
    let s = state(&mut g, Tensor::zeros(&[2, 3, 3]), vec![mg0.clone(), Tensor::zeros(&[2, 3, 3])]);
    let e = identity_edges(&mut g, 2, 9);
    let out = update_mg(&mut g, &s, &e, 0).unwrap();
    assert_eq!(g.shape(out), &[2, 3, 3]);
    for (o, t) in g.value(out).data().iter().zip(mg0.data()) {
        assert_eq!(*o, 0.5 * t);
    }
}

#[test]
fn single_granularity_node_hears_only_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ta = rand_t(&mut rng, &[2, 2, 2], -1.0, 1.0);
    let mg = rand_t(&mut rng, &[2, 2, 2], -1.0, 1.0);
    let mut g = Graph::new();
    let s = state(&mut g, ta.clone(), vec![mg.clone()]);
    let e = identity_edges(&mut g, 1, 4);
    let out = update_mg(&mut g, &s, &e, 0).unwrap();
    for ((o, m), t) in g.value(out).data().iter().zip(mg.data()).zip(ta.data()) {
        assert!((o - m * sigmoid(*t)).abs() < 1e-15);
    }
}

#[test]
fn missing_edges_are_rejected() {
    let mut g = Graph::new();
    let s = state(&mut g, Tensor::zeros(&[1, 2, 2]), vec![Tensor::zeros(&[1, 2, 2])]);
    let e = Edges {
        ta_mg: vec![],
        mg_ta: vec![],
        mg_mg: vec![],
    };
    assert!(update_target(&mut g, &s, &e).is_err());
    assert!(update_mg(&mut g, &s, &e, 0).is_err());
}

#[test]
fn mask_hand_case() {
    let cm = Tensor::new(&[2, 2], vec![1.0, 0.5, 0.9, 0.2]).unwrap();
    assert_eq!(mask_from_cmean(&cm, 0.8).data(), &[0.0, 1.0, 0.0, 1.0]);
    let constant = Tensor::full(&[3, 3], 0.4);
    assert!(mask_from_cmean(&constant, 0.8).data().iter().all(|&v| v == 0.0));
    assert!(mask_from_cmean(&constant, 1.0).data().iter().all(|&v| v == 0.0));
    let one_peak = Tensor::new(&[2, 2], vec![0.2, 0.9, 0.1, 0.3]).unwrap();
    assert_eq!(mask_from_cmean(&one_peak, 0.999_999).data(), &[1.0, 0.0, 1.0, 1.0]);
}

#[test]
fn mask_uses_channel_mean() {
    let h = Tensor::new(&[2, 1, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(channel_mean(&h).unwrap().data(), &[1.0, 0.5]);
    assert_eq!(frl_mask(&h, 0.8).unwrap().data(), &[0.0, 1.0]);
}

fn refine(h: &Tensor<f64>, mask: &Tensor<f64>, tr: f64) -> Tensor<f64> {
    let mut g = Graph::new();
    let x = g.constant(h.clone());
    let y = frl_refine(&mut g, x, mask, tr).unwrap();
    g.value(y).clone()
}

#[test]
fn empty_mask_collapses_refinement() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = rand_t(&mut rng, &[3, 2, 2], -1.0, 1.0);
    let cm = channel_mean(&h).unwrap();
    let out = refine(&h, &Tensor::zeros(&[2, 2]), 0.6);
    for c in 0..3 {
        for p in 0..4 {
            let v = h.data()[c * 4 + p];
            let want = 0.5 * (v * sigmoid(cm.data()[p]) + v);
            assert!((out.data()[c * 4 + p] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn unit_attenuation_ignores_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = rand_t(&mut rng, &[3, 3, 3], -1.0, 1.0);
    let mask = frl_mask(&h, 0.8).unwrap();
    assert!(refine(&h, &mask, 1.0).bit_eq(&refine(&h, &Tensor::zeros(&[3, 3]), 1.0)));
}

#[test]
fn masked_pixels_are_attenuated_more() {
    // equal channel means, so the only difference is the mask
    let h = Tensor::new(&[1, 1, 2], vec![0.7, 0.7]).unwrap();
    let mask = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
    let out = refine(&h, &mask, 0.6);
    assert!(out.data()[0] < out.data()[1]);
}

#[test]
fn zero_steps_are_rejected() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    assert!(Cgcn::new(&mut store, "g", 2, 0, None, &mut rng).is_err());
}

fn reason_once(store: &ParamStore<f64>, g: &Cgcn, nodes: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut ctx = Ctx::new(store, false);
    let vars: Vec<_> = nodes.iter().map(|t| ctx.input(t.clone())).collect();
    let s = GraphState {
        ta: vars[0],
        mg: vars[1..].to_vec(),
        step: 0,
    };
    let out = g.reason(&mut ctx, s).unwrap();
    assert_eq!(out.step, g.steps);
    std::iter::once(out.ta).chain(out.mg).map(|v| ctx.g.value(v).clone()).collect()
}

#[test]
fn reasoning_keeps_shapes_and_is_deterministic() {
    let (store, g) = net(3, 3, Some(Frl::default()), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nodes: Vec<_> = (0..3).map(|_| rand_t(&mut rng, &[3, 4, 4], -1.0, 1.0)).collect();
    let a = reason_once(&store, &g, &nodes);
    let b = reason_once(&store, &g, &nodes);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.shape(), &[3, 4, 4]);
        assert!(x.bit_eq(y));
    }
}

#[test]
fn reasoning_rejects_mismatched_nodes() {
    let (store, g) = net(2, 1, None, 12);
    let mut ctx = Ctx::new(&store, false);
    let ta = ctx.input(Tensor::zeros(&[2, 2, 2]));
    let mg = ctx.input(Tensor::zeros(&[2, 3, 3]));
    let s = GraphState { ta, mg: vec![mg], step: 0 };
    assert!(g.reason(&mut ctx, s).is_err());
    let s = GraphState { ta, mg: vec![], step: 0 };
    assert!(g.reason(&mut ctx, s).is_err());
}

#[test]
fn two_step_reasoning_gradients_match_finite_differences() {
    let (store, g) = net(3, 2, Some(Frl::default()), 13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let nodes: Vec<_> = (0..3).map(|_| rand_t(&mut rng, &[3, 4, 4], -1.0, 1.0)).collect();
    let target = rand_t(&mut rng, &[3, 4, 4], -1.0, 1.0);
    let report = check_params(&store, 6, 1e-5, &mut rng, |ctx| {
        let vars: Vec<_> = nodes.iter().map(|t| ctx.input(t.clone())).collect();
        let s = GraphState {
            ta: vars[0],
            mg: vars[1..].to_vec(),
            step: 0,
        };
        let out = g.reason(ctx, s)?;
        let t = ctx.input(target.clone());
        let prod = ctx.g.mul(out.ta, t)?;
        let mut total = ctx.g.sum(prod)?;
        for h in out.mg {
            let sq = ctx.g.mul(h, h)?;
            let s = ctx.g.sum(sq)?;
            total = ctx.g.add(total, s)?;
        }
        Ok(total)
    })
    .unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_err() <= 1e-4, "{:?}", report.per_param);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edge_rows_are_distributions(seed in any::<u64>(), scale in 0.1f64..5.0) {
        let (store, g) = net(3, 1, None, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ctx = Ctx::new(&store, false);
        let a = ctx.input(rand_t(&mut rng, &[3, 3, 3], -scale, scale));
        let b = ctx.input(rand_t(&mut rng, &[3, 3, 3], -scale, scale));
        let e = g.edge(&mut ctx, a, b).unwrap();
        for row in ctx.g.value(e).data().chunks(9) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn refinement_never_amplifies(seed in any::<u64>(), td in 0.05f64..1.0, tr in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = rand_t(&mut rng, &[2, 3, 3], -3.0, 3.0);
        let mask = frl_mask(&h, td).unwrap();
        let out = refine(&h, &mask, tr);
        for (o, x) in out.data().iter().zip(h.data()) {
            prop_assert!(o.abs() <= x.abs() + 1e-15);
        }
    }

    #[test]
    fn one_step_is_contractive(seed in any::<u64>(), with_frl in any::<bool>()) {
        let frl = with_frl.then(Frl::default);
        let (store, g) = net(2, 1, frl, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<_> = (0..3).map(|_| rand_t(&mut rng, &[2, 3, 3], -2.0, 2.0)).collect();
        let out = reason_once(&store, &g, &nodes);
        for (o, x) in out.iter().zip(&nodes) {
            let (mo, mx) = (o.data().iter().fold(0.0f64, |m, v| m.max(v.abs())), x.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
            prop_assert!(mo <= mx + 1e-15);
        }
    }
}
