//! Small graphs, layer constructors and permutation helpers for the layer tests.

use std::collections::BTreeSet;

use kalm::contexts::{DocEdge, DocEdgeType, DocumentGraph, GlobalEdge, GlobalEdgeType, GlobalSubgraph};
use kalm::kgstore::{EntityId, RelationId};
use kalm::layers::{DocGnn, GatLayer};
use kalm::numcore::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn doc_graph(n_par: usize, edges: Vec<DocEdge>, relation_entities: Vec<u32>, rel: Option<Tensor>) -> DocumentGraph {
    DocumentGraph {
        features: Tensor::zeros(n_par, 4),
        edges,
        relation_entities: relation_entities.into_iter().map(EntityId).collect(),
        relation_features: rel,
    }
}

pub fn pair(a: usize, b: usize, kind: DocEdgeType) -> [DocEdge; 2] {
    [DocEdge { src: a, dst: b, kind }, DocEdge { src: b, dst: a, kind }]
}

pub fn new_doc_layer(seed: u64, d: usize, kge: usize) -> (DocGnn, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = DocGnn::new(&mut store, &mut rng, "doc", None, d, kge).unwrap();
    (layer, store)
}

pub fn run_doc(layer: &DocGnn, store: &ParamStore, g: &Tensor, graph: &DocumentGraph, reserved: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let gv = tape.constant(g.clone());
    let rv = tape.constant(reserved.clone());
    let o = layer.forward(&mut tape, store, gv, graph, rv).unwrap();
    (tape.value(o.out).clone(), o.alpha)
}

pub fn gedge(src: usize, dst: usize) -> GlobalEdge {
    GlobalEdge {
        src,
        dst,
        kind: GlobalEdgeType::Kg(RelationId(0)),
    }
}

pub fn subgraph(n_entities: usize, edges: Vec<GlobalEdge>) -> GlobalSubgraph {
    GlobalSubgraph {
        entities: (0..n_entities as u32).map(EntityId).collect(),
        edges,
        features: None,
    }
}

pub fn new_gat(seed: u64, d: usize, heads: usize) -> (GatLayer, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = GatLayer::new(&mut store, &mut rng, "gat", None, d, heads).unwrap();
    (layer, store)
}

pub fn run_gat(layer: &GatLayer, store: &ParamStore, k: &Tensor, sub: &GlobalSubgraph) -> Tensor {
    let mut tape = Tape::new();
    let kv = tape.constant(k.clone());
    let o = layer.forward(&mut tape, store, kv, sub).unwrap();
    tape.value(o.out).clone()
}

/// Relabels non-fusion node `i >= 1` as `perm[i - 1] + 1`.
pub fn relabel(perm: &[usize], i: usize) -> usize {
    if i == 0 {
        0
    } else {
        perm[i - 1] + 1
    }
}

pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = t.clone();
    for i in 0..t.rows() {
        let j = relabel(perm, i);
        for c in 0..t.cols() {
            out.set(j, c, t.get(i, c));
        }
    }
    out
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Random document graph on `n` paragraphs, run before and after a random
/// relabelling; returns the largest output difference after aligning rows.
pub fn doc_equivariance_diff(seed: u64, n: usize) -> f64 {
    let (d, kge) = (6, 4);
    let (layer, store) = new_doc_layer(seed, d, kge);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut edges = Vec::new();
    let mut ents = BTreeSet::new();
    for i in 1..=n {
        edges.extend(pair(0, i, DocEdgeType::Super));
        for j in i + 1..=n {
            if rng.random_bool(0.5) {
                let e: u32 = rng.random_range(0..3);
                ents.insert(e);
                edges.extend(pair(i, j, DocEdgeType::Entity(EntityId(e))));
            }
        }
    }
    let ents: Vec<u32> = ents.into_iter().collect();
    let rel = (!ents.is_empty()).then(|| rand_tensor(&mut rng, ents.len(), kge));
    let graph = doc_graph(n, edges.clone(), ents.clone(), rel.clone());
    let g = rand_tensor(&mut rng, n + 1, d);
    let reserved = rand_tensor(&mut rng, 2, kge);
    let perm = random_perm(&mut rng, n);
    let pedges = edges
        .iter()
        .map(|e| DocEdge { src: relabel(&perm, e.src), dst: relabel(&perm, e.dst), kind: e.kind })
        .collect();
    let pgraph = doc_graph(n, pedges, ents, rel);
    let (out, _) = run_doc(&layer, &store, &g, &graph, &reserved);
    let (pout, _) = run_doc(&layer, &store, &permute_rows(&g, &perm), &pgraph, &reserved);
    permute_rows(&out, &perm).max_abs_diff(&pout)
}

/// Same as [`doc_equivariance_diff`] for the global layer on `s` entities.
pub fn gat_equivariance_diff(seed: u64, s: usize) -> f64 {
    let (layer, store) = new_gat(seed, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef);
    let mut edges: Vec<GlobalEdge> = (1..=s).map(|i| gedge(0, i)).collect();
    for i in 1..=s {
        for j in 1..=s {
            if i != j && rng.random_bool(0.3) {
                edges.push(gedge(i, j));
            }
        }
    }
    let k = rand_tensor(&mut rng, s + 1, 8);
    let perm = random_perm(&mut rng, s);
    let pedges = edges.iter().map(|e| gedge(relabel(&perm, e.src), relabel(&perm, e.dst))).collect();
    let out = run_gat(&layer, &store, &k, &subgraph(s, edges));
    let pout = run_gat(&layer, &store, &permute_rows(&k, &perm), &subgraph(s, pedges));
    permute_rows(&out, &perm).max_abs_diff(&pout)
}
