#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use meta_kgr::autodiff::{ParamStore, Tape};
use meta_kgr::kg::{EntityId, GraphOptions, KnowledgeGraph, RelationId, Triple, Vocabulary};
use meta_kgr::model::{ModelDims, ModelLayout};
use meta_kgr::reasoner::{advance, policy_distribution, reset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random graph with `n` entities and `r` base relations, plus its triples.
pub fn random_graph(n: usize, r: usize, edges: usize, seed: u64, inverse: bool) -> (KnowledgeGraph, Vec<Triple>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vocabulary::new();
    let ents: Vec<EntityId> = (0..n).map(|i| vocab.entity(&format!("e{i}"))).collect();
    let rels: Vec<RelationId> = (0..r).map(|i| vocab.relation(&format!("r{i}"))).collect();
    let triples: Vec<Triple> = (0..edges)
        .map(|_| {
            Triple::new(
                ents[rng.random_range(0..n)],
                rels[rng.random_range(0..r)],
                ents[rng.random_range(0..n)],
            )
        })
        .collect();
    let opts = GraphOptions {
        inverse_edges: inverse,
        stop_edges: true,
    };
    (KnowledgeGraph::build(vocab, &triples, opts).unwrap(), triples)
}

/// Edge set rebuilt from the raw triple list, independent of the graph's adjacency.
pub fn oracle_edges(g: &KnowledgeGraph, triples: &[Triple]) -> BTreeMap<EntityId, BTreeSet<(RelationId, EntityId)>> {
    let n_rel = g.num_base_relations() as u32;
    let mut out: BTreeMap<EntityId, BTreeSet<(RelationId, EntityId)>> = BTreeMap::new();
    for e in 0..g.num_entities() as u32 {
        out.entry(EntityId(e)).or_default();
    }
    for t in triples {
        out.get_mut(&t.subject).unwrap().insert((t.relation, t.object));
        if g.options().inverse_edges {
            out.get_mut(&t.object).unwrap().insert((RelationId(t.relation.0 + n_rel), t.subject));
        }
    }
    out
}

/// Every relation sequence of length `n` from `s` to `t`, by brute force over
/// all sequences; STOP may only be followed by STOP.
pub fn oracle_paths(g: &KnowledgeGraph, triples: &[Triple], s: EntityId, t: EntityId, n: usize) -> BTreeSet<Vec<RelationId>> {
    let edges = oracle_edges(g, triples);
    let stop = g.stop();
    let mut out = BTreeSet::new();
    let mut stack: Vec<(EntityId, Vec<RelationId>)> = vec![(s, Vec::new())];
    while let Some((at, path)) = stack.pop() {
        if path.len() == n {
            if at == t {
                out.insert(path);
            }
            continue;
        }
        if path.last() == Some(&stop) {
            let mut p = path.clone();
            p.push(stop);
            stack.push((at, p));
            continue;
        }
        for &(r, e) in &edges[&at] {
            let mut p = path.clone();
            p.push(r);
            stack.push((e, p));
        }
        let mut p = path.clone();
        p.push(stop);
        stack.push((at, p));
    }
    out
}

pub fn small_layout(g: &KnowledgeGraph, seed: u64, std: f64) -> (ParamStore<f64>, ModelLayout) {
    let mut store = ParamStore::new(seed);
    let layout = ModelLayout::init(&mut store, ModelDims::for_graph(g, 4, 4, 6), std).unwrap();
    (store, layout)
}

/// Log-probability of every complete action sequence of length `steps`,
/// reduced to the best score per end entity.
pub fn exhaustive_scores(
    store: &ParamStore<f64>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    start: EntityId,
    rep: &[f64],
    steps: usize,
) -> (BTreeMap<EntityId, f64>, usize) {
    let mut tape = Tape::new();
    let rep = tape.constant_vec(rep.to_vec()).unwrap();
    let root = reset(&mut tape, g, layout, start, rep, None).unwrap();
    let mut best: BTreeMap<EntityId, f64> = BTreeMap::new();
    let mut count = 0;
    let mut frontier = vec![(root, 0.0f64)];
    for _ in 0..steps {
        let mut next = Vec::new();
        for (state, score) in &frontier {
            let dist = policy_distribution(&mut tape, store, layout, g, state).unwrap();
            let lps = tape.value(dist.log_probs).to_vec();
            for (a, lp) in lps.iter().enumerate() {
                let mut s = state.clone();
                advance(&mut s, &dist, a);
                next.push((s, score + lp));
            }
        }
        frontier = next;
    }
    for (state, score) in frontier {
        count += 1;
        let e = best.entry(state.current).or_insert(f64::NEG_INFINITY);
        *e = e.max(score);
    }
    (best, count)
}

/// Linear regression task: `L(w) = 0.5 * mean_i (a_i . w - y_i)^2`.
#[derive(Clone, Debug)]
pub struct LsqEpisode {
    pub support: (Vec<Vec<f64>>, Vec<f64>),
    pub query: (Vec<Vec<f64>>, Vec<f64>),
}

pub struct LeastSquares {
    pub w: meta_kgr::autodiff::ParamId,
}

impl meta_kgr::meta::MetaObjective<f64> for LeastSquares {
    type Episode = LsqEpisode;

    fn loss(
        &self,
        tape: &mut Tape<f64>,
        store: &ParamStore<f64>,
        ep: &LsqEpisode,
        phase: meta_kgr::meta::Phase,
        _step: usize,
    ) -> meta_kgr::Result<(meta_kgr::autodiff::Var, f64)> {
        let (a, y) = match phase {
            meta_kgr::meta::Phase::Adapt => &ep.support,
            meta_kgr::meta::Phase::Meta => &ep.query,
        };
        let m = a.len();
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        let am = tape.constant(&meta_kgr::autodiff::Tensor::matrix(m, a[0].len(), flat)?)?;
        let w = tape.param(store, self.w);
        let pred = tape.matvec(am, w)?;
        let target = tape.constant_vec(y.clone())?;
        let r = tape.sub(pred, target)?;
        let sq = tape.mul(r, r)?;
        let s = tape.sum(sq)?;
        let loss = tape.scale(s, 0.5 / m as f64)?;
        let value = tape.scalar(loss);
        Ok((loss, value))
    }
}

/// Closed-form gradient `A^T (A w - y) / m`.
pub fn lsq_grad(a: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let m = a.len() as f64;
    let mut g = vec![0.0; w.len()];
    for (row, &yi) in a.iter().zip(y) {
        let r: f64 = row.iter().zip(w).map(|(x, wj)| x * wj).sum::<f64>() - yi;
        for (gj, x) in g.iter_mut().zip(row) {
            *gj += r * x / m;
        }
    }
    g
}

/// Hand-derived first-order update: `k` SGD steps per task on the support
/// loss, then `w - beta * sum_i grad L_query_i(w_i')`.
pub fn lsq_reference(w: &[f64], episodes: &[LsqEpisode], k: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut total = vec![0.0; w.len()];
    for ep in episodes {
        let mut wi = w.to_vec();
        for _ in 0..k {
            let g = lsq_grad(&ep.support.0, &ep.support.1, &wi);
            for (x, gx) in wi.iter_mut().zip(g) {
                *x -= alpha * gx;
            }
        }
        for (t, g) in total.iter_mut().zip(lsq_grad(&ep.query.0, &ep.query.1, &wi)) {
            *t += g;
        }
    }
    w.iter().zip(total).map(|(x, g)| x - beta * g).collect()
}

pub fn lsq_family(seed: u64, tasks: usize, dim: usize, rows: usize) -> Vec<LsqEpisode> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha8Rng, w_true: &[f64]| {
        let a: Vec<Vec<f64>> = (0..rows).map(|_| (0..dim).map(|_| normal.sample(rng)).collect()).collect();
        let y = a.iter().map(|r| r.iter().zip(w_true).map(|(x, w)| x * w).sum::<f64>() + 0.1 * normal.sample(rng)).collect();
        (a, y)
    };
    (0..tasks)
        .map(|_| {
            let w_true: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            LsqEpisode {
                support: draw(&mut rng, &w_true),
                query: draw(&mut rng, &w_true),
            }
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 { diff } else { diff / scale }
}
