//! Central finite-difference checks of every differentiable pathway, run in `f64`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::encoder::{neighbor_task_rep, path_task_rep, PathOptions};
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphOptions, KnowledgeGraph, RelationId, Triple, Vocabulary};
use crate::meta::{adapt, MetaObjective, Phase};
use crate::model::{Model, ModelDims, ModelLayout};
use crate::reasoner::{
    advance, policy_distribution, reinforce_loss, replay, reset, rollout_group, Baseline, RolloutMode,
};

pub const TOLERANCE: f64 = 1e-4;
pub const EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub seeds: usize,
    pub max_rel_err: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// `||a - b|| / max(||a|| + ||b||, 1e-6)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (norm(a) + norm(b)).max(1e-6)
}

/// Analytic gradients of `loss` for every parameter tensor.
pub fn analytic_grads<L>(store: &ParamStore<f64>, loss: &L) -> Result<Vec<Vec<f64>>>
where
    L: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, &work)?;
    tape.backward(l, &mut work)?;
    Ok(work.ids().map(|id| work.grad(id).to_vec()).collect())
}

/// Central differences of `loss`, one parameter element at a time.
pub fn numeric_grads<L>(store: &ParamStore<f64>, loss: &L, eps: f64) -> Result<Vec<Vec<f64>>>
where
    L: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, s)?;
        Ok(tape.scalar(l))
    };
    let mut work = store.clone();
    let ids: Vec<_> = work.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mut g = vec![0.0; work.value(id).len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest per-tensor relative error between analytic and numeric gradients.
pub fn check<L>(store: &ParamStore<f64>, loss: L) -> Result<f64>
where
    L: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let a = analytic_grads(store, &loss)?;
    let n = numeric_grads(store, &loss, EPSILON)?;
    Ok(a.iter().zip(&n).map(|(x, y)| rel_err(x, y)).fold(0.0, f64::max))
}

/// A small random graph and model (all dimensions at most 8).
pub struct Fixture {
    pub graph: KnowledgeGraph,
    pub model: Model<f64>,
    pub triples: Vec<Triple>,
    pub rng: ChaCha8Rng,
}

impl Fixture {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab = Vocabulary::new();
        let n = 6;
        let ents: Vec<EntityId> = (0..n).map(|i| vocab.entity(&format!("e{i}"))).collect();
        let rels: Vec<RelationId> = (0..2).map(|i| vocab.relation(&format!("r{i}"))).collect();
        let mut triples = Vec::new();
        for _ in 0..9 {
            let s = *ents.choose(&mut rng).expect("entities");
            let o = *ents.choose(&mut rng).expect("entities");
            let r = *rels.choose(&mut rng).expect("relations");
            if s != o {
                triples.push(Triple::new(s, r, o));
            }
        }
        let graph = KnowledgeGraph::build(vocab, &triples, GraphOptions::default())?;
        let mut model = Model::with_embedding_std(ModelDims::for_graph(&graph, 4, 4, 4), seed, 0.5)?;
        // non-zero biases so every term of the affine maps is exercised
        for id in [model.layout.neighbor_b, model.layout.policy_lstm.bias, model.layout.path_lstm.bias] {
            for v in model.store.value_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        triples.sort();
        triples.dedup();
        Ok(Self {
            graph,
            model,
            triples,
            rng,
        })
    }

    fn random_entity(&mut self) -> EntityId {
        EntityId(self.rng.random_range(0..self.graph.num_entities() as u32))
    }

    fn coefficients(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(-1.0..1.0)).collect()
    }
}

fn weighted_sum(tape: &mut Tape<f64>, v: Var, coefs: &[f64]) -> Result<Var> {
    let c = tape.constant_vec(coefs.to_vec())?;
    let p = tape.mul(v, c)?;
    tape.sum(p)
}

/// Two policy steps; loss mixes log-probabilities and probabilities.
pub fn policy_step_suite(seed: u64) -> Result<f64> {
    let mut fx = Fixture::new(seed)?;
    let start = fx.random_entity();
    let relation = RelationId(fx.rng.random_range(0..2));
    let first = fx.graph.outgoing(start)?.len();
    let choice = fx.rng.random_range(0..first);
    let second = fx.graph.outgoing(fx.graph.outgoing(start)?[choice].1)?.len();
    let c1 = fx.coefficients(first);
    let c2 = fx.coefficients(first);
    let c3 = fx.coefficients(second);
    let (g, layout) = (&fx.graph, fx.model.layout);
    check(&fx.model.store, |tape, store| {
        let rep = tape.lookup(store, layout.task_relation_emb, relation.index())?;
        let mut state = reset(tape, g, &layout, start, rep, None)?;
        let d1 = policy_distribution(tape, store, &layout, g, &state)?;
        let a = weighted_sum(tape, d1.log_probs, &c1)?;
        let b = weighted_sum(tape, d1.probs, &c2)?;
        advance(&mut state, &d1, choice);
        let d2 = policy_distribution(tape, store, &layout, g, &state)?;
        let c = weighted_sum(tape, d2.log_probs, &c3)?;
        let ab = tape.add(a, b)?;
        tape.add(ab, c)
    })
}

/// REINFORCE surrogate with baseline and entropy bonus over fixed sampled walks.
pub fn reinforce_suite(seed: u64) -> Result<f64> {
    let mut fx = Fixture::new(seed)?;
    let (g, layout) = (&fx.graph, fx.model.layout);
    let relation = RelationId(0);
    let mut walks = Vec::new();
    for _ in 0..3 {
        let n = g.num_entities() as u32;
        let start = EntityId(fx.rng.random_range(0..n));
        let target = EntityId(fx.rng.random_range(0..n));
        let mut tape = Tape::new();
        let rep = tape.lookup(&fx.model.store, layout.task_relation_emb, relation.index())?;
        let trajs = rollout_group(
            &mut tape,
            &fx.model.store,
            &layout,
            g,
            start,
            target,
            rep,
            3,
            2,
            RolloutMode::Sample,
            None,
            &mut fx.rng,
        )?;
        for t in trajs {
            let edges: Vec<_> = t.relations.iter().copied().zip(t.entities[1..].iter().copied()).collect();
            walks.push((start, target, edges));
        }
    }
    check(&fx.model.store, |tape, store| {
        let rep = tape.lookup(store, layout.task_relation_emb, relation.index())?;
        let batch = walks
            .iter()
            .map(|(s, t, e)| replay(tape, store, &layout, g, *s, *t, rep, e, None))
            .collect::<Result<Vec<_>>>()?;
        let mut baseline = Baseline {
            value: 0.3,
            decay: 0.95,
        };
        reinforce_loss(tape, &batch, &mut baseline, 0.02)
    })
}

fn random_support(fx: &mut Fixture, n: usize) -> Vec<Triple> {
    (0..n)
        .map(|_| {
            let s = fx.random_entity();
            let o = fx.random_entity();
            Triple::new(s, RelationId(0), o)
        })
        .collect()
}

pub fn neighbor_suite(seed: u64) -> Result<f64> {
    let mut fx = Fixture::new(seed)?;
    let support = random_support(&mut fx, 3);
    let coefs = fx.coefficients(fx.model.layout.dims.dim);
    let (g, layout) = (&fx.graph, fx.model.layout);
    check(&fx.model.store, |tape, store| {
        let rep = neighbor_task_rep(tape, store, &layout, g, &support)?;
        weighted_sum(tape, rep.value, &coefs)
    })
}

/// Support triples whose endpoints are joined by at least one path of length `len`.
fn connected_support(fx: &mut Fixture, n: usize, len: usize) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for _ in 0..1000 {
        if out.len() == n {
            break;
        }
        let s = fx.random_entity();
        let mut e = s;
        for _ in 0..len - 1 {
            let next = fx.graph.outgoing(e)?;
            e = next[fx.rng.random_range(0..next.len())].1;
        }
        out.push(Triple::new(s, RelationId(1), e));
    }
    if out.len() < n {
        return Err(Error::contract("could not find connected support triples"));
    }
    Ok(out)
}

pub fn path_suite(seed: u64) -> Result<f64> {
    let mut fx = Fixture::new(seed)?;
    let support = connected_support(&mut fx, 3, 3)?;
    let coefs = fx.coefficients(fx.model.layout.dims.dim);
    let (g, layout) = (&fx.graph, fx.model.layout);
    let opts = PathOptions {
        length: 3,
        max_paths: 50,
        mask_query_edge: false,
    };
    check(&fx.model.store, |tape, store| {
        let rep = path_task_rep(tape, store, &layout, g, &support, opts)?;
        weighted_sum(tape, rep.value, &coefs)
    })
}

/// Deterministic REINFORCE objective over fixed walks with a neighbor-encoded representation.
struct ReplayObjective<'a> {
    graph: &'a KnowledgeGraph,
    layout: ModelLayout,
    support: Vec<Triple>,
    walks: Vec<(EntityId, EntityId, Vec<(RelationId, EntityId)>)>,
}

impl MetaObjective<f64> for ReplayObjective<'_> {
    type Episode = ();

    fn loss(&self, tape: &mut Tape<f64>, store: &ParamStore<f64>, _: &(), _: Phase, _: usize) -> Result<(Var, f64)> {
        let rep = neighbor_task_rep(tape, store, &self.layout, self.graph, &self.support)?;
        let batch = self
            .walks
            .iter()
            .map(|(s, t, e)| replay(tape, store, &self.layout, self.graph, *s, *t, rep.value, e, None))
            .collect::<Result<Vec<_>>>()?;
        let mut baseline = Baseline {
            value: 0.1,
            decay: 0.95,
        };
        Ok((reinforce_loss(tape, &batch, &mut baseline, 0.02)?, 0.0))
    }
}

/// One adaptation step: `(theta - theta') / alpha` must equal the numeric gradient at theta.
pub fn adaptation_suite(seed: u64) -> Result<f64> {
    let mut fx = Fixture::new(seed)?;
    let support = random_support(&mut fx, 2);
    let layout = fx.model.layout;
    let mut walks = Vec::new();
    for t in &support {
        let mut e = t.subject;
        let mut edges = Vec::new();
        for _ in 0..2 {
            let next = fx.graph.outgoing(e)?;
            let step = next[fx.rng.random_range(0..next.len())];
            edges.push(step);
            e = step.1;
        }
        walks.push((t.subject, t.object, edges));
    }
    let objective = ReplayObjective {
        graph: &fx.graph,
        layout,
        support,
        walks,
    };
    let alpha = 0.1;
    let adapted = adapt(&objective, &fx.model.store, &(), 1, alpha)?;
    let implied: Vec<Vec<f64>> = fx
        .model
        .store
        .ids()
        .map(|id| {
            let before = fx.model.store.value(id).data();
            let after = adapted.value(id).data();
            before.iter().zip(after).map(|(b, a)| (b - a) / alpha).collect()
        })
        .collect();
    let loss = |tape: &mut Tape<f64>, store: &ParamStore<f64>| -> Result<Var> {
        Ok(objective.loss(tape, store, &(), Phase::Adapt, 0)?.0)
    };
    let numeric = numeric_grads(&fx.model.store, &loss, EPSILON)?;
    Ok(implied.iter().zip(&numeric).map(|(x, y)| rel_err(x, y)).fold(0.0, f64::max))
}

pub type Suite = fn(u64) -> Result<f64>;

pub const SUITES: [(&str, Suite); 5] = [
    ("policy-step", policy_step_suite),
    ("reinforce", reinforce_suite),
    ("neighbor-encoder", neighbor_suite),
    ("path-encoder", path_suite),
    ("adaptation-step", adaptation_suite),
];

/// Runs every suite on `seeds` consecutive seeds starting at `base_seed`.
pub fn run_all(seeds: usize, base_seed: u64) -> Result<Vec<SuiteResult>> {
    SUITES
        .iter()
        .map(|&(suite, f)| {
            let mut max_rel_err = 0.0f64;
            for s in 0..seeds as u64 {
                max_rel_err = max_rel_err.max(f(base_seed + s)?);
            }
            Ok(SuiteResult {
                suite,
                seeds,
                max_rel_err,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_basics() {
        assert_eq!(rel_err(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(rel_err(&[0.0], &[0.0]), 0.0);
        assert!((rel_err(&[1.0], &[-1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_seed_each() {
        for (name, f) in SUITES {
            let e = f(3).unwrap();
            assert!(e < TOLERANCE, "{name}: {e}");
        }
    }
}
