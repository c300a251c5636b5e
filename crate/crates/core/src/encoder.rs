//! Meta-encoders: turn a task's few-shot support triples into the vector
//! that stands in for the query-relation embedding.
//!
//! * neighbor: `NE_e = tanh(mean_{(r,e') in N_e} W_c [v_r; v_e'] + b_c)` and
//!   `R = NE_target - NE_source`, averaged over support triples.
//! * path: every relation path between source and target is run through an
//!   LSTM; the final hidden states are averaged over all paths of all
//!   support triples.

use std::collections::{BTreeMap, HashMap};

use crate::autodiff::{lstm_step, ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationPath, Triple};
use crate::model::ModelLayout;

/// How a task representation was produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Neighbor { empty_neighborhoods: usize },
    Path { paths: usize, fallback: bool },
    /// Learned per-relation row; `fresh` when the row was never trained.
    Identity { fresh: bool },
    Zero,
    /// Externally supplied vector (e.g. a random representation in ablations).
    Supplied,
}

#[derive(Clone, Debug)]
pub struct TaskRepresentation {
    pub value: Var,
    pub provenance: Provenance,
    pub support_size: usize,
}

/// Settings for path gathering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathOptions {
    pub length: usize,
    pub max_paths: usize,
    /// Drop each support triple's own edge from its first hop.
    pub mask_query_edge: bool,
}

/// Neighbor embedding of one entity. An empty neighborhood yields `tanh(b_c)`.
pub fn neighbor_embed<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    entity: EntityId,
) -> Result<Var> {
    let neighbors = g.neighbors(entity)?;
    let w = tape.param(store, layout.neighbor_w);
    let b = tape.param(store, layout.neighbor_b);
    let features = if neighbors.is_empty() {
        tape.zeros(2 * layout.dims.dim)
    } else {
        // W(mean x) + b == mean(W x + b); neighbors() is sorted, so the
        // summation order is canonical
        let mut inputs = Vec::with_capacity(neighbors.len());
        for &(r, e) in &neighbors {
            let rv = tape.lookup(store, layout.relation_emb, r.index())?;
            let ev = tape.lookup(store, layout.entity_emb, e.index())?;
            inputs.push(tape.concat(&[rv, ev])?);
        }
        tape.mean(&inputs)?
    };
    let c = tape.affine(w, Some(b), features)?;
    tape.tanh(c)
}

/// Mean over support triples of `NE_object - NE_subject`.
pub fn neighbor_task_rep<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    support: &[Triple],
) -> Result<TaskRepresentation> {
    if support.is_empty() {
        return Err(Error::contract("neighbor encoder needs at least one support triple"));
    }
    let mut cache: HashMap<EntityId, Var> = HashMap::new();
    let mut empty = 0;
    let mut embed = |tape: &mut Tape<F>, e: EntityId| -> Result<Var> {
        if let Some(&v) = cache.get(&e) {
            return Ok(v);
        }
        if g.neighbors(e)?.is_empty() {
            empty += 1;
        }
        let v = neighbor_embed(tape, store, layout, g, e)?;
        cache.insert(e, v);
        Ok(v)
    };
    let mut sorted = support.to_vec();
    sorted.sort();
    let mut diffs = Vec::with_capacity(sorted.len());
    for t in &sorted {
        let src = embed(tape, t.subject)?;
        let dst = embed(tape, t.object)?;
        diffs.push(tape.sub(dst, src)?);
    }
    let value = tape.mean(&diffs)?;
    Ok(TaskRepresentation {
        value,
        provenance: Provenance::Neighbor {
            empty_neighborhoods: empty,
        },
        support_size: support.len(),
    })
}

/// Final LSTM hidden state over the relation embeddings of `path`.
pub fn path_encode<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    path: &[crate::kg::RelationId],
    expected_len: usize,
) -> Result<Var> {
    if path.len() != expected_len || path.is_empty() {
        return Err(Error::contract(format!(
            "path of length {} where {expected_len} is required",
            path.len()
        )));
    }
    let hs = layout.path_lstm.hidden;
    let mut h = tape.zeros(hs);
    let mut c = tape.zeros(hs);
    for r in path {
        let x = tape.lookup(store, layout.relation_emb, r.index())?;
        (h, c) = lstm_step(tape, store, &layout.path_lstm, h, c, x)?;
    }
    Ok(h)
}

/// All paths of every support triple, as a multiset in canonical order.
pub fn gather_paths(
    g: &KnowledgeGraph,
    support: &[Triple],
    opts: PathOptions,
) -> Result<BTreeMap<RelationPath, usize>> {
    let mut all = BTreeMap::new();
    for t in support {
        let mask = opts.mask_query_edge.then_some(*t);
        for p in g.enumerate_paths(t.subject, t.object, opts.length, opts.max_paths, mask)? {
            *all.entry(p).or_insert(0) += 1;
        }
    }
    Ok(all)
}

/// Mean path encoding over all paths of all support triples; zero when no path exists.
pub fn path_task_rep<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    support: &[Triple],
    opts: PathOptions,
) -> Result<TaskRepresentation> {
    if support.is_empty() {
        return Err(Error::contract("path encoder needs at least one support triple"));
    }
    let paths = gather_paths(g, support, opts)?;
    let total: usize = paths.values().sum();
    if total == 0 {
        return Ok(TaskRepresentation {
            value: tape.zeros(layout.dims.dim),
            provenance: Provenance::Path {
                paths: 0,
                fallback: true,
            },
            support_size: support.len(),
        });
    }
    let mut weighted = Vec::with_capacity(paths.len());
    for (p, &count) in &paths {
        let enc = path_encode(tape, store, layout, p, opts.length)?;
        weighted.push(tape.scale(enc, F::lit(count as f64))?);
    }
    // mean over distinct paths, rescaled to a mean over all path instances
    let mean = tape.mean(&weighted)?;
    let value = tape.scale(mean, F::lit(paths.len() as f64 / total as f64))?;
    Ok(TaskRepresentation {
        value,
        provenance: Provenance::Path {
            paths: total,
            fallback: false,
        },
        support_size: support.len(),
    })
}
