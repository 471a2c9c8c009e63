mod common;

use kalm::contexts::{ContextMask, DocEdgeType, DocumentGraph, GlobalSubgraph};
use kalm::kgstore::EntityId;
use kalm::layers::{
    attentive_pool, load_params, save_params, EncoderBlock, ForwardCtx, FusionKind, FusionLayer, GatLayer,
};
use kalm::numcore::{fd_check, DropoutRng, ParamStore, Tape, Tensor};
use common::graphs::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;


fn stack(rows: &[&Tensor]) -> Tensor {
    let rows: Vec<&[f64]> = rows.iter().flat_map(|t| (0..t.rows()).map(move |r| t.row_slice(r))).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn param(store: &ParamStore, name: &str) -> Tensor {
    store.get(store.id(name).unwrap_or_else(|| panic!("no param {name}"))).clone()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x · W` with plain loops.
fn mat_vec(x: &[f64], w: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|c| (0..w.rows()).map(|r| x[r] * w.get(r, c)).sum())
        .collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

// ---------------------------------------------------------------- document layer



fn four_node_graph(rng: &mut ChaCha8Rng, kge: usize) -> DocumentGraph {
    let e7 = DocEdgeType::Entity(EntityId(7));
    let e9 = DocEdgeType::Entity(EntityId(9));
    let mut edges = Vec::new();
    edges.extend(pair(1, 2, e7));
    edges.extend(pair(1, 2, e9));
    edges.extend(pair(2, 3, e9));
    for i in 1..=3 {
        edges.extend(pair(0, i, DocEdgeType::Super));
    }
    doc_graph(3, edges, vec![7, 9], Some(rand_tensor(rng, 2, kge)))
}

/// Dense re-implementation of the document layer straight from its formula.
fn doc_oracle(store: &ParamStore, name: &str, g: &Tensor, graph: &DocumentGraph, reserved: &Tensor) -> Tensor {
    let theta = param(store, &format!("{name}.theta"));
    let a = param(store, &format!("{name}.attn")).into_data();
    let w = param(store, &format!("{name}.rel_proj.w"));
    let b = param(store, &format!("{name}.rel_proj.b")).into_data();
    let d = theta.rows();
    let n = g.rows();
    let h: Vec<Vec<f64>> = (0..n).map(|i| mat_vec(g.row_slice(i), &theta)).collect();
    let rel_vec = |kind: DocEdgeType| -> Vec<f64> {
        let raw = match kind {
            DocEdgeType::Entity(e) => {
                let r = graph.relation_entities.iter().position(|&x| x == e).unwrap();
                graph.relation_features.as_ref().unwrap().row_slice(r).to_vec()
            }
            DocEdgeType::SelfLoop => reserved.row_slice(0).to_vec(),
            DocEdgeType::Super => reserved.row_slice(1).to_vec(),
        };
        let f: Vec<f64> = mat_vec(&raw, &w).iter().zip(&b).map(|(x, y)| x + y).collect();
        mat_vec(&f, &theta)
    };
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let mut incoming: Vec<(usize, DocEdgeType)> = vec![(i, DocEdgeType::SelfLoop)];
        incoming.extend(graph.edges.iter().filter(|e| e.dst == i).map(|e| (e.src, e.kind)));
        let logits: Vec<f64> = incoming
            .iter()
            .map(|&(j, kind)| elu(dot(&a[..d], &h[i]) + dot(&a[d..2 * d], &h[j]) + dot(&a[2 * d..], &rel_vec(kind))))
            .collect();
        let alpha = softmax(&logits);
        for (&(j, _), al) in incoming.iter().zip(alpha) {
            for c in 0..d {
                out[i * d + c] += al * h[j][c];
            }
        }
    }
    Tensor::matrix(n, d, out.into_iter().map(f64::tanh).collect()).unwrap()
}



#[test]
fn doc_layer_matches_dense_oracle_on_four_nodes() {
    for seed in 0..5 {
        let (d, kge) = (6, 5);
        let (layer, store) = new_doc_layer(seed, d, kge);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let graph = four_node_graph(&mut rng, kge);
        let g = rand_tensor(&mut rng, 4, d);
        let reserved = rand_tensor(&mut rng, 2, kge);
        let (out, _) = run_doc(&layer, &store, &g, &graph, &reserved);
        let oracle = doc_oracle(&store, "doc", &g, &graph, &reserved);
        assert!(out.max_abs_diff(&oracle) < 1e-10, "seed {seed}: {}", out.max_abs_diff(&oracle));
    }
}

#[test]
fn doc_node_with_only_a_self_loop_is_tanh_theta_g() {
    let (d, kge) = (5, 3);
    let (layer, store) = new_doc_layer(1, d, kge);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let graph = doc_graph(1, vec![], vec![], None);
    let g = rand_tensor(&mut rng, 2, d);
    let reserved = rand_tensor(&mut rng, 2, kge);
    let (out, alpha) = run_doc(&layer, &store, &g, &graph, &reserved);
    let expect = g.matmul(&param(&store, "doc.theta")).unwrap().map(f64::tanh);
    assert!(out.max_abs_diff(&expect) < 1e-12);
    assert_eq!(alpha.data(), &[1.0, 1.0]);
}

#[test]
fn doc_layer_uniform_attention_with_zero_attention_vector() {
    let (d, kge) = (4, 3);
    let (layer, mut store) = new_doc_layer(3, d, kge);
    let id = store.id("doc.attn").unwrap();
    *store.get_mut(id) = Tensor::zeros(3 * d, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let graph = doc_graph(1, pair(0, 1, DocEdgeType::Super).to_vec(), vec![], None);
    let g = rand_tensor(&mut rng, 2, d);
    let reserved = rand_tensor(&mut rng, 2, kge);
    let (out, _) = run_doc(&layer, &store, &g, &graph, &reserved);
    let h = g.matmul(&param(&store, "doc.theta")).unwrap();
    for i in 0..2 {
        for c in 0..d {
            let expect = (0.5 * h.get(0, c) + 0.5 * h.get(1, c)).tanh();
            assert!((out.get(i, c) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn doc_attention_is_stochastic_per_destination() {
    let (layer, store) = new_doc_layer(5, 6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let graph = four_node_graph(&mut rng, 5);
    let g = rand_tensor(&mut rng, 4, 6);
    let reserved = rand_tensor(&mut rng, 2, 5);
    let mut tape = Tape::new();
    let gv = tape.constant(g);
    let rv = tape.constant(reserved);
    let o = layer.forward(&mut tape, &store, gv, &graph, rv).unwrap();
    let mut sums = vec![0.0; o.edges.n_nodes];
    for (e, &dst) in o.edges.dst.iter().enumerate() {
        let a = o.alpha.data()[e];
        assert!(a >= 0.0);
        sums[dst] += a;
    }
    for s in sums {
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn doc_layer_depends_on_edge_types() {
    let (d, kge) = (6, 5);
    for seed in 0..20 {
        let (layer, store) = new_doc_layer(seed, d, kge);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let graph = four_node_graph(&mut rng, kge);
        let g = rand_tensor(&mut rng, 4, d);
        let reserved = rand_tensor(&mut rng, 2, kge);
        let (base, _) = run_doc(&layer, &store, &g, &graph, &reserved);
        // Entity 7 only links paragraphs 1 and 2.
        let mut changed = graph.clone();
        let rel = changed.relation_features.as_mut().unwrap();
        let fresh = rand_tensor(&mut rng, 1, kge);
        for c in 0..kge {
            rel.set(0, c, fresh.get(0, c));
        }
        let (out, _) = run_doc(&layer, &store, &g, &changed, &reserved);
        let row_diff = |r: usize| (0..d).map(|c| (out.get(r, c) - base.get(r, c)).abs()).fold(0.0, f64::max);
        assert!(row_diff(1) > 0.0 && row_diff(2) > 0.0, "seed {seed}");
        assert_eq!(row_diff(3), 0.0);
    }
}

// ------------------------------------------------------------------ global layer





fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Dense multi-head graph attention over the symmetric adjacency plus self-loops.
fn gat_oracle(store: &ParamStore, k: &Tensor, sub: &GlobalSubgraph, heads: usize) -> Tensor {
    let w = param(store, "gat.w");
    let a_src = param(store, "gat.a_src");
    let a_dst = param(store, "gat.a_dst");
    let wo = param(store, "gat.out.w");
    let bo = param(store, "gat.out.b");
    let n = k.rows();
    let d = w.cols();
    let dh = d / heads;
    let mut adj = vec![vec![false; n]; n];
    for e in &sub.edges {
        adj[e.src][e.dst] = true;
        adj[e.dst][e.src] = true;
    }
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = true;
    }
    let wh: Vec<Vec<f64>> = (0..n).map(|i| mat_vec(k.row_slice(i), &w)).collect();
    let mut cat = vec![vec![0.0; d]; n];
    for hd in 0..heads {
        let part = |i: usize| &wh[i][hd * dh..(hd + 1) * dh];
        let col = |t: &Tensor| (0..dh).map(|r| t.get(r, hd)).collect::<Vec<f64>>();
        let (asr, ads) = (col(&a_src), col(&a_dst));
        for i in 0..n {
            let nb: Vec<usize> = (0..n).filter(|&j| adj[i][j]).collect();
            let logits: Vec<f64> = nb.iter().map(|&j| leaky(dot(&ads, part(i)) + dot(&asr, part(j)))).collect();
            for (&j, al) in nb.iter().zip(softmax(&logits)) {
                for c in 0..dh {
                    cat[i][hd * dh + c] += al * part(j)[c];
                }
            }
        }
    }
    let mut out = Vec::with_capacity(n * d);
    for row in &cat {
        let y = mat_vec(row, &wo);
        out.extend(y.iter().zip(bo.data()).map(|(x, b)| (x + b).tanh()));
    }
    Tensor::matrix(n, d, out).unwrap()
}

#[test]
fn gat_matches_dense_oracle_on_six_nodes() {
    let edges = vec![
        gedge(0, 1),
        gedge(0, 2),
        gedge(0, 3),
        gedge(0, 4),
        gedge(0, 5),
        gedge(1, 2),
        gedge(2, 1),
        gedge(3, 4),
        gedge(3, 4),
        gedge(5, 5),
    ];
    let sub = subgraph(5, edges);
    for seed in 0..5 {
        let (layer, store) = new_gat(seed, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let k = rand_tensor(&mut rng, 6, 8);
        let out = run_gat(&layer, &store, &k, &sub);
        let oracle = gat_oracle(&store, &k, &sub, 2);
        assert!(out.max_abs_diff(&oracle) < 1e-10, "seed {seed}");
    }
}

#[test]
fn gat_star_with_identical_leaves_is_leaf_order_free() {
    let (layer, store) = new_gat(9, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let center = rand_tensor(&mut rng, 1, 8);
    let leaf = rand_tensor(&mut rng, 1, 8);
    let k = stack(&[&center, &leaf, &leaf, &leaf, &leaf]);
    let forward = subgraph(4, (1..=4).map(|i| gedge(0, i)).collect());
    let reversed = subgraph(4, (1..=4).rev().map(|i| gedge(i, 0)).collect());
    let a = run_gat(&layer, &store, &k, &forward);
    let b = run_gat(&layer, &store, &k, &reversed);
    assert_eq!(a.row_slice(0), b.row_slice(0));
}

#[test]
fn gat_attention_is_stochastic_per_node_and_head() {
    let (layer, store) = new_gat(11, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sub = subgraph(4, vec![gedge(0, 1), gedge(1, 2), gedge(2, 3), gedge(4, 0)]);
    let mut tape = Tape::new();
    let kv = tape.constant(rand_tensor(&mut rng, 5, 8));
    let o = layer.forward(&mut tape, &store, kv, &sub).unwrap();
    assert_eq!(o.alpha.len(), 4);
    for alpha in &o.alpha {
        let mut sums = vec![0.0; 5];
        for (e, &dst) in o.edges.dst.iter().enumerate() {
            assert!(alpha.data()[e] >= 0.0);
            sums[dst] += alpha.data()[e];
        }
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }
}

// ------------------------------------------------------------------ equivariance




proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn doc_layer_is_permutation_equivariant(seed in 0u64..10_000, n in 2usize..7) {
        prop_assert!(doc_equivariance_diff(seed, n) < 1e-10);
    }

    #[test]
    fn gat_is_permutation_equivariant(seed in 0u64..10_000, s in 1usize..8) {
        prop_assert!(gat_equivariance_diff(seed, s) < 1e-10);
    }

    #[test]
    fn local_encoder_ignores_paragraph_order(seed in 0u64..10_000, n in 1usize..6) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderBlock::new(&mut store, &mut rng, "enc", None, 8, 2).unwrap();
        let x = rand_tensor(&mut rng, n + 1, 8);
        let perm = random_perm(&mut rng, n);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let o = enc.forward(&mut tape, &store, xv, &mut ForwardCtx::eval()).unwrap();
            tape.value(o.out).clone()
        };
        prop_assert!(permute_rows(&run(&x), &perm).max_abs_diff(&run(&permute_rows(&x, &perm))) < 1e-10);
    }
}

// ------------------------------------------------------------- encoder and pool

#[test]
fn encoder_preserves_shape_and_attention_is_stochastic() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = EncoderBlock::new(&mut store, &mut rng, "enc", None, 16, 8).unwrap();
    for n in [1, 5, 40] {
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(&mut rng, n + 1, 16));
        let o = enc.forward(&mut tape, &store, x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(tape.value(o.out).shape(), &[n + 1, 16]);
        assert_eq!(o.attention.len(), 8);
        for a in &o.attention {
            for r in 0..a.rows() {
                assert!(a.row_slice(r).iter().all(|&v| v >= 0.0));
                assert!((a.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn encoder_rejects_wrong_width() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = EncoderBlock::new(&mut store, &mut rng, "enc", None, 8, 2).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(3, 6));
    let err = enc.forward(&mut tape, &store, x, &mut ForwardCtx::eval()).unwrap_err();
    assert!(matches!(err, kalm::KalmError::Dimension(_)));
    assert!(EncoderBlock::new(&mut store, &mut rng, "bad", None, 10, 3).is_err());
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let enc = EncoderBlock::new(&mut store, &mut rng, "enc", None, 8, 2).unwrap();
    let x = rand_tensor(&mut rng, 4, 8);
    let report = fd_check(&store, 1e-5, None, |p, tape| {
        let xv = tape.constant(x.clone());
        let mut ctx = ForwardCtx::train(0.5, DropoutRng::new(3));
        let o = enc.forward(tape, p, xv, &mut ctx)?;
        let y = tape.tanh(o.out)?;
        let y = tape.mul(y, y)?;
        tape.sum(y)
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "{:?}", report.worst());
}

fn pool(q: &Tensor, keys: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone());
    let kv = tape.constant(keys.clone());
    let out = attentive_pool(&mut tape, qv, kv).unwrap();
    tape.value(out).clone()
}

#[test]
fn attentive_pool_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let key = rand_tensor(&mut rng, 1, 5);
    let same = stack(&[&key, &key, &key]);
    assert!(pool(&rand_tensor(&mut rng, 1, 5), &same).max_abs_diff(&key) < 1e-12);

    let keys = rand_tensor(&mut rng, 4, 5);
    let mean: Vec<f64> = (0..5).map(|c| (0..4).map(|r| keys.get(r, c)).sum::<f64>() / 4.0).collect();
    let got = pool(&Tensor::zeros(1, 5), &keys);
    assert!(got.max_abs_diff(&Tensor::row(&mean).unwrap()) < 1e-12);

    let eye = Tensor::identity(5);
    let q = Tensor::row(eye.row_slice(3)).unwrap().scale(50.0);
    let got = pool(&q, &eye);
    assert!(got.max_abs_diff(&Tensor::row(eye.row_slice(3)).unwrap()) < 1e-6);
}

// ------------------------------------------------------------------------ fusion

fn new_fusion(seed: u64, kind: FusionKind, d: usize) -> (FusionLayer, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = FusionLayer::new(&mut store, &mut rng, "fusion", None, kind, ContextMask::ALL, d, 2).unwrap();
    (f, store)
}

#[test]
fn identity_fusion_keeps_portals() {
    let (f, store) = new_fusion(1, FusionKind::Identity, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let ctxs: Vec<Tensor> = [3, 2, 5].iter().map(|&n| rand_tensor(&mut rng, n, 4)).collect();
    let vars: Vec<_> = ctxs.iter().map(|t| tape.constant(t.clone())).collect();
    let o = f
        .forward(&mut tape, &store, [Some(vars[0]), Some(vars[1]), Some(vars[2])], &mut ForwardCtx::eval())
        .unwrap();
    for (c, t) in ctxs.iter().enumerate() {
        assert_eq!(tape.value(o.portals[c].unwrap()).data(), t.row_slice(0));
    }
    assert!(o.attention.is_empty());
}

#[test]
fn sum_fusion_with_identity_map_adds_portals() {
    let (f, mut store) = new_fusion(2, FusionKind::Sum, 4);
    let lin = f.sum_linear().unwrap().clone();
    *store.get_mut(lin.w) = Tensor::identity(4);
    *store.get_mut(lin.b.unwrap()) = Tensor::zeros(1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ctxs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, 2, 4)).collect();
    let mut tape = Tape::new();
    let vars: Vec<_> = ctxs.iter().map(|t| tape.constant(t.clone())).collect();
    let o = f
        .forward(&mut tape, &store, [Some(vars[0]), Some(vars[1]), Some(vars[2])], &mut ForwardCtx::eval())
        .unwrap();
    let expect: Vec<f64> = (0..4).map(|c| ctxs.iter().map(|t| t.get(0, c)).sum()).collect();
    for p in o.portals {
        let got = tape.value(p.unwrap()).data().to_vec();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn context_fusion_attention_is_six_by_six_and_stochastic() {
    let (f, store) = new_fusion(3, FusionKind::ContextFusion, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let vars: Vec<_> = [4, 4, 1].iter().map(|&n| tape.constant(rand_tensor(&mut rng, n, 8))).collect();
    let o = f
        .forward(&mut tape, &store, [Some(vars[0]), Some(vars[1]), Some(vars[2])], &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(o.attention.len(), 2);
    for a in &o.attention {
        assert_eq!(a.shape(), &[6, 6]);
        for r in 0..6 {
            assert!((a.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn context_fusion_carries_global_information_to_the_local_portal() {
    for seed in 0..20 {
        let (f, store) = new_fusion(seed, FusionKind::ContextFusion, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let mut tape = Tape::new();
        let t = tape.constant(rand_tensor(&mut rng, 3, 8));
        let g = tape.constant(rand_tensor(&mut rng, 3, 8));
        let k = tape.input(rand_tensor(&mut rng, 4, 8));
        let o = f.forward(&mut tape, &store, [Some(t), Some(g), Some(k)], &mut ForwardCtx::eval()).unwrap();
        let loss = tape.sum(o.portals[0].unwrap()).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gk = grads.wrt(k).expect("gradient reaches the global context");
        assert!(gk.data().iter().any(|&v| v != 0.0), "seed {seed}");
    }
}

#[test]
fn mint_needs_local_and_global() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mask = ContextMask {
        global: false,
        ..ContextMask::ALL
    };
    assert!(FusionLayer::new(&mut store, &mut rng, "f", None, FusionKind::MInt, mask, 4, 2).is_err());
}

// -------------------------------------------------------------------- checkpoint

#[test]
fn checkpoint_round_trip_is_bit_exact_after_f32_rounding() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    EncoderBlock::new(&mut store, &mut rng, "enc", Some(0), 8, 2).unwrap();
    GatLayer::new(&mut store, &mut rng, "gat", Some(1), 8, 2).unwrap();
    store.round_to_f32();
    let dir = tempfile::tempdir().unwrap();
    save_params(dir.path(), &store).unwrap();
    let back = load_params(dir.path()).unwrap();
    assert_eq!(back.len(), store.len());
    for (a, b) in store.entries().iter().zip(back.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.layer, b.layer);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.tensor), bits(&b.tensor));
    }
}
