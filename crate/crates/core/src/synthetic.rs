//! Compositional toy graphs: random base-relation edges plus relations
//! defined by two-hop rules `r_c := r_a . r_b` whose triples never enter `G`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphOptions, KnowledgeGraph, RelationId, Triple, Vocabulary};
use crate::meta::{Task, TaskRole};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub n_base_relations: usize,
    pub edges_per_relation: usize,
    pub n_rules: usize,
    /// Explicit `(a, b)` base-relation index pairs; sampled when empty.
    #[serde(default)]
    pub rules: Vec<(usize, usize)>,
    pub meta_train: usize,
    pub meta_dev: usize,
    pub meta_test: usize,
    /// Held-out queries per meta-dev/meta-test task; the rest are training triples.
    pub eval_queries: usize,
    /// Resample random rules until every held-out rule's first relation is
    /// the first relation of some meta-train rule, and likewise for the second.
    #[serde(default)]
    pub cover_held_out: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_base_relations: 12,
            edges_per_relation: 200,
            n_rules: 10,
            rules: Vec::new(),
            meta_train: 8,
            meta_dev: 1,
            meta_test: 1,
            eval_queries: 50,
            cover_held_out: true,
            seed: 7,
        }
    }
}

/// A composed relation and its defining pair of base relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub relation: RelationId,
    pub first: RelationId,
    pub second: RelationId,
}

#[derive(Clone, Debug)]
pub struct SyntheticKg {
    pub dataset: Dataset,
    pub base_triples: Vec<Triple>,
    pub rules: Vec<Rule>,
    /// All composed triples, one list per rule.
    pub composed: Vec<Vec<Triple>>,
}

/// `(x, relation, z)` for every `x -first-> y -second-> z` in `triples`.
pub fn compose(triples: &[Triple], first: RelationId, second: RelationId, relation: RelationId) -> Vec<Triple> {
    let mut by_subject: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for t in triples.iter().filter(|t| t.relation == second) {
        by_subject.entry(t.subject).or_default().push(t.object);
    }
    let mut out = BTreeSet::new();
    for t in triples.iter().filter(|t| t.relation == first) {
        for &z in by_subject.get(&t.object).into_iter().flatten() {
            out.insert(Triple::new(t.subject, relation, z));
        }
    }
    out.into_iter().collect()
}

fn sample_edges<R: Rng>(n: usize, count: usize, rng: &mut R) -> BTreeSet<(u32, u32)> {
    let mut edges = BTreeSet::new();
    while edges.len() < count {
        let h = rng.random_range(0..n as u32);
        let t = rng.random_range(0..n as u32);
        if h != t {
            edges.insert((h, t));
        }
    }
    edges
}

fn held_out_covered(pairs: &[(usize, usize)], n_train: usize) -> bool {
    let (train, held) = pairs.split_at(n_train);
    held.iter()
        .all(|&(a, b)| train.iter().any(|t| t.0 == a) && train.iter().any(|t| t.1 == b))
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticKg> {
    let (n, b) = (spec.n_entities, spec.n_base_relations);
    if n < 3 || b == 0 {
        return Err(Error::Generation("need at least 3 entities and one base relation".into()));
    }
    if spec.edges_per_relation > n * (n - 1) {
        return Err(Error::Generation(format!(
            "{} edges per relation do not fit {n} entities",
            spec.edges_per_relation
        )));
    }
    let n_rules = if spec.rules.is_empty() { spec.n_rules } else { spec.rules.len() };
    if spec.meta_train + spec.meta_dev + spec.meta_test != n_rules {
        return Err(Error::Generation(format!(
            "task split {}/{}/{} does not cover {n_rules} rules",
            spec.meta_train, spec.meta_dev, spec.meta_test
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let pairs: Vec<(usize, usize)> = if spec.rules.is_empty() {
        let all: Vec<(usize, usize)> = (0..b).flat_map(|x| (0..b).filter(move |&y| y != x).map(move |y| (x, y))).collect();
        if n_rules > all.len() {
            return Err(Error::Generation(format!("{n_rules} rules from {b} base relations")));
        }
        let mut attempts = 0;
        loop {
            let pick: Vec<(usize, usize)> = all.choose_multiple(&mut rng, n_rules).copied().collect();
            if !spec.cover_held_out || held_out_covered(&pick, spec.meta_train) {
                break pick;
            }
            attempts += 1;
            if attempts == 10_000 {
                return Err(Error::Generation("no rule draw covers the held-out rules".into()));
            }
        }
    } else {
        if let Some(&(x, y)) = spec.rules.iter().find(|&&(x, y)| x >= b || y >= b) {
            return Err(Error::Generation(format!("rule ({x}, {y}) names a missing base relation")));
        }
        spec.rules.clone()
    };

    let mut vocab = Vocabulary::new();
    let entities: Vec<EntityId> = (0..n).map(|i| vocab.entity(&format!("e{i}"))).collect();
    let base: Vec<RelationId> = (0..b).map(|i| vocab.relation(&format!("r{i}"))).collect();
    let rules: Vec<Rule> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Rule {
            relation: vocab.relation(&format!("c{i}_r{x}_r{y}")),
            first: base[x],
            second: base[y],
        })
        .collect();

    let mut base_triples = Vec::with_capacity(b * spec.edges_per_relation);
    for &r in &base {
        for (h, t) in sample_edges(n, spec.edges_per_relation, &mut rng) {
            base_triples.push(Triple::new(entities[h as usize], r, entities[t as usize]));
        }
    }
    let composed: Vec<Vec<Triple>> = rules
        .iter()
        .map(|rule| compose(&base_triples, rule.first, rule.second, rule.relation))
        .collect();
    if let Some(i) = composed.iter().position(|c| c.is_empty()) {
        return Err(Error::Generation(format!("rule {i} yields no composed triples")));
    }

    let labels: Vec<String> = vocab.relations.labels().to_vec();
    let graph = KnowledgeGraph::build(vocab, &base_triples, GraphOptions::default())?;
    let mut tasks = Vec::with_capacity(rules.len());
    for (i, (rule, triples)) in rules.iter().zip(&composed).enumerate() {
        let role = if i < spec.meta_train {
            TaskRole::MetaTrain
        } else if i < spec.meta_train + spec.meta_dev {
            TaskRole::MetaDev
        } else {
            TaskRole::MetaTest
        };
        let mut train = triples.clone();
        let eval = if role == TaskRole::MetaTrain {
            Vec::new()
        } else {
            if train.len() <= spec.eval_queries {
                return Err(Error::Generation(format!(
                    "rule {i} has {} triples, {} held out would leave none for training",
                    train.len(),
                    spec.eval_queries
                )));
            }
            train.shuffle(&mut rng);
            let mut eval = train.split_off(train.len() - spec.eval_queries);
            train.sort();
            eval.sort();
            eval
        };
        tasks.push(Task {
            relation: rule.relation,
            label: labels[rule.relation.index()].clone(),
            train,
            eval,
            role,
        });
    }
    Ok(SyntheticKg {
        dataset: Dataset { graph, tasks },
        base_triples,
        rules,
        composed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_yields_single_triple() {
        let (a, b, c) = (EntityId(0), EntityId(1), EntityId(2));
        let (r1, r2, rc) = (RelationId(0), RelationId(1), RelationId(2));
        let triples = [Triple::new(a, r1, b), Triple::new(b, r2, c)];
        assert_eq!(compose(&triples, r1, r2, rc), vec![Triple::new(a, rc, c)]);
        assert!(compose(&triples, r2, r1, rc).is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            edges_per_relation: 60,
            eval_queries: 5,
            ..Default::default()
        };
        let x = gen_synthetic(&spec).unwrap();
        let y = gen_synthetic(&spec).unwrap();
        assert_eq!(x.base_triples, y.base_triples);
        assert_eq!(x.dataset.tasks, y.dataset.tasks);
        assert_eq!(x.dataset.graph.num_base_relations(), 22);
    }

    #[test]
    fn unsatisfiable_spec_fails() {
        let spec = SyntheticSpec {
            n_entities: 5,
            n_base_relations: 2,
            edges_per_relation: 1,
            n_rules: 1,
            rules: vec![(0, 0)],
            meta_train: 1,
            meta_dev: 0,
            meta_test: 0,
            eval_queries: 0,
            cover_held_out: false,
            seed: 0,
        };
        assert!(matches!(gen_synthetic(&spec), Err(Error::Generation(_))));
        let bad_split = SyntheticSpec {
            meta_train: 3,
            ..Default::default()
        };
        assert!(gen_synthetic(&bad_split).is_err());
    }
}
