//! Background graph plus tasks, loaded from triple files and a relation split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{load_triples, GraphOptions, KnowledgeGraph, RelationId, Triple, Vocabulary};
use crate::meta::{Task, TaskRole};

pub const SPLIT_VERSION: u32 = 1;

/// Relation partition for a real dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub version: u32,
    pub meta_dev: Vec<String>,
    pub meta_test: Vec<String>,
    /// Defaults to every other relation of the training file.
    #[serde(default)]
    pub meta_train: Option<Vec<String>>,
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: SplitFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if split.version != SPLIT_VERSION {
            return Err(Error::Config(format!(
                "{}: split version {} (expected {SPLIT_VERSION})",
                path.display(),
                split.version
            )));
        }
        Ok(split)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: KnowledgeGraph,
    pub tasks: Vec<Task>,
}

impl Dataset {
    pub fn tasks_with(&self, role: TaskRole) -> Vec<Task> {
        self.tasks.iter().filter(|t| t.role == role).cloned().collect()
    }

    /// Builds `G` from the meta-train relations of `train_path`; meta-dev and
    /// meta-test tasks take their eval triples from `test_path`, or hold out
    /// `eval_fraction` of their training triples when no test file is given.
    pub fn from_files(
        train_path: &Path,
        test_path: Option<&Path>,
        split: &SplitFile,
        eval_fraction: f64,
        graph_options: GraphOptions,
        seed: u64,
    ) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        let train = load_triples(train_path, &mut vocab)?;
        let test = match test_path {
            Some(p) => Some(load_triples(p, &mut vocab)?),
            None => None,
        };
        let lookup = |names: &[String]| -> Result<Vec<RelationId>> {
            names
                .iter()
                .map(|n| {
                    vocab
                        .relations
                        .get(n)
                        .map(RelationId)
                        .ok_or_else(|| Error::Config(format!("split names unknown relation `{n}`")))
                })
                .collect()
        };
        let dev = lookup(&split.meta_dev)?;
        let held: BTreeSet<RelationId> = dev.iter().chain(&lookup(&split.meta_test)?).copied().collect();
        let test_rel = lookup(&split.meta_test)?;
        let meta_train: Vec<RelationId> = match &split.meta_train {
            Some(names) => lookup(names)?,
            None => (0..vocab.relations.len() as u32)
                .map(RelationId)
                .filter(|r| !held.contains(r))
                .collect(),
        };
        if let Some(r) = meta_train.iter().find(|r| held.contains(r)) {
            return Err(Error::Config(format!(
                "relation `{}` is both meta-train and held out",
                vocab.relations.label(r.0).unwrap_or("?")
            )));
        }

        let mut by_rel: BTreeMap<RelationId, Vec<Triple>> = BTreeMap::new();
        for t in &train {
            by_rel.entry(t.relation).or_default().push(*t);
        }
        let mut eval_by_rel: BTreeMap<RelationId, Vec<Triple>> = BTreeMap::new();
        for t in test.iter().flatten() {
            eval_by_rel.entry(t.relation).or_default().push(*t);
        }
        let train_set: BTreeSet<RelationId> = meta_train.iter().copied().collect();
        let g_triples: Vec<Triple> = train.iter().filter(|t| train_set.contains(&t.relation)).copied().collect();
        let labels: Vec<String> = (0..vocab.relations.len() as u32)
            .map(|r| vocab.relations.label(r).unwrap_or("?").to_owned())
            .collect();
        let graph = KnowledgeGraph::build(vocab, &g_triples, graph_options)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tasks = Vec::new();
        for (role, rels) in [
            (TaskRole::MetaTrain, &meta_train),
            (TaskRole::MetaDev, &dev),
            (TaskRole::MetaTest, &test_rel),
        ] {
            for &r in rels.iter() {
                let mut own = by_rel.get(&r).cloned().unwrap_or_default();
                let eval = match (role, &test) {
                    (TaskRole::MetaTrain, _) => Vec::new(),
                    (_, Some(_)) => eval_by_rel.get(&r).cloned().unwrap_or_default(),
                    (_, None) => {
                        own.shuffle(&mut rng);
                        let n_eval = ((own.len() as f64) * eval_fraction).round() as usize;
                        own.split_off(own.len() - n_eval.min(own.len()))
                    }
                };
                tasks.push(Task {
                    relation: r,
                    label: labels[r.index()].clone(),
                    train: own,
                    eval,
                    role,
                });
            }
        }
        Ok(Self { graph, tasks })
    }
}
