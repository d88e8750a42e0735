use gradcore::store::{Container, KIND_WEIGHTS};
use gradcore::Array;
use graphcnnpred::graphbuild::FeatureGraph;
use graphcnnpred::model::{
    gat_layer, gcn_layer, graph_pool, GatLayerParams, GcnLayerParams, HeadKind, Network, PoolKind,
    Preset,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> FeatureGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    FeatureGraph::from_edges(n, &edges).unwrap()
}

proptest! {
    #[test]
    fn zero_attention_is_neighbourhood_mean(seed in 0u64..500, n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(n, 0.4, &mut rng);
        let x = random(&[n, 3], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let out = gat_layer(&x, &g, &GatLayerParams { weight: w.clone(), attention: Array::zeros([8]) }).unwrap();
        for v in 0..n {
            let mut hood = vec![v];
            hood.extend_from_slice(g.neighbors(v));
            for c in 0..4 {
                let mean = hood
                    .iter()
                    .map(|&u| (0..3).map(|k| x.at(&[u, k]) * w.at(&[k, c])).sum::<f64>())
                    .sum::<f64>()
                    / hood.len() as f64;
                prop_assert!((out.at(&[v, c]) - mean.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edgeless_gcn_is_a_node_wise_dense_layer(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[5, 2], &mut rng);
        let w = random(&[2, 3], &mut rng);
        let out = gcn_layer(&x, &FeatureGraph::empty(5), &GcnLayerParams { weight: w.clone() }).unwrap();
        for v in 0..5 {
            for c in 0..3 {
                let z: f64 = (0..2).map(|k| x.at(&[v, k]) * w.at(&[k, c])).sum();
                prop_assert!((out.at(&[v, c]) - z.max(0.0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pooling_bounds(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[4, 6, 2], &mut rng);
        let mean = graph_pool(&x, PoolKind::Mean, None).unwrap();
        let max = graph_pool(&x, PoolKind::Max, None).unwrap();
        prop_assert_eq!(mean.shape(), &[4, 2]);
        for (a, b) in mean.data().iter().zip(max.data()) {
            prop_assert!(a <= b);
        }
        let ones = Array::full([6], 1.0 / 6.0);
        let fc = graph_pool(&x, PoolKind::FullyConnected, Some(&ones)).unwrap();
        prop_assert!(fc.max_abs_diff(&mean) < 1e-12);
    }
}

#[test]
fn node_count_mismatch_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_graph(4, 0.5, &mut rng);
    let x = random(&[5, 2], &mut rng);
    assert!(gcn_layer(&x, &g, &GcnLayerParams { weight: random(&[2, 2], &mut rng) }).is_err());
}

#[test]
fn every_preset_traces_its_inferred_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(6, 0.4, &mut rng);
    for preset in Preset::ALL {
        for head in [HeadKind::Binary5, HeadKind::Ternary15] {
            for pool in PoolKind::ALL {
                let cfg = preset.config(pool, head, 24, 6);
                let net = Network::new(cfg, Some(&g), 3).unwrap();
                let x = random(&[24, 6], &mut rng);
                let traced = net.trace_shapes(&x).unwrap();
                let inferred: Vec<Vec<usize>> = net.shapes().iter().map(|s| s.dims()).collect();
                assert_eq!(traced, inferred, "{preset:?} {pool:?}");
                let out = net.predict(&x).unwrap();
                assert_eq!(out.len(), head.outputs());
                match head {
                    HeadKind::Binary5 => assert!(out.data().iter().all(|p| (0.0..=1.0).contains(p))),
                    HeadKind::Ternary15 => {
                        for k in 0..5 {
                            assert!((out.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn weights_round_trip_through_container() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_graph(6, 0.5, &mut rng);
    let cfg = Preset::CnnGatCnn.config(PoolKind::FullyConnected, HeadKind::Ternary15, 24, 6);
    let net = Network::new(cfg.clone(), Some(&g), 11).unwrap();
    let bytes = Container::from_params(KIND_WEIGHTS, [7; 32], net.params()).to_bytes();
    let back = Container::from_bytes(&bytes).unwrap();
    let restored = Network::from_params(cfg, Some(&g), &back.to_params()).unwrap();
    let x = random(&[24, 6], &mut rng);
    assert_eq!(net.predict(&x).unwrap(), restored.predict(&x).unwrap());
}

#[test]
fn same_seed_same_init() {
    let g = FeatureGraph::empty(6);
    let cfg = Preset::GcnCnn.config(PoolKind::Mean, HeadKind::Binary5, 24, 6);
    let a = Network::new(cfg.clone(), Some(&g), 5).unwrap();
    let b = Network::new(cfg.clone(), Some(&g), 5).unwrap();
    let c = Network::new(cfg, Some(&g), 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn graph_layout_requires_graph() {
    let cfg = Preset::Gat.config(PoolKind::Mean, HeadKind::Binary5, 24, 6);
    assert!(Network::new(cfg.clone(), None, 1).is_err());
    assert!(Network::new(cfg, Some(&FeatureGraph::empty(5)), 1).is_err());
    let cnn = Preset::Cnnpred3d.config(PoolKind::Mean, HeadKind::Binary5, 24, 6);
    assert!(Network::new(cnn, None, 1).is_ok());
}
