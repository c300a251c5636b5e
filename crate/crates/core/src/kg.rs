//! Triple loading and the background graph the agent walks on.
//!
//! Relation ids are laid out as `[base relations | inverse relations | STOP]`.
//! The inverse block only exists when the graph is built with inverse edges.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

/// Bidirectional label <-> dense index table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelTable {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl LabelTable {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Entity and (base) relation vocabularies. Grows while loading triples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: LabelTable,
    pub relations: LabelTable,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn relation(&mut self, label: &str) -> RelationId {
        RelationId(self.relations.intern(label))
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }
}

/// Reads a tab-separated triple file, extending `vocab` with every new label.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn load_triples(path: impl AsRef<Path>, vocab: &mut Vocabulary) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&text, path, vocab)
}

pub(crate) fn parse_triples(text: &str, path: &Path, vocab: &mut Vocabulary) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!(
                    "expected `subject<TAB>relation<TAB>object`, found {} field(s)",
                    fields.len()
                ),
            });
        }
        let s = vocab.entity(fields[0]);
        let r = vocab.relation(fields[1]);
        let o = vocab.entity(fields[2]);
        triples.push(Triple::new(s, r, o));
    }
    Ok(triples)
}

/// Edge-label options for [`KnowledgeGraph::build`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub inverse_edges: bool,
    pub stop_edges: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            inverse_edges: true,
            stop_edges: true,
        }
    }
}

/// Immutable background graph with sorted outgoing adjacency.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: Vocabulary,
    options: GraphOptions,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
    duplicates_removed: usize,
}

/// A fixed-length relation sequence; trailing STOPs pad shorter walks.
pub type RelationPath = Vec<RelationId>;

impl KnowledgeGraph {
    /// Builds the graph over every entity in `vocab`.
    ///
    /// Duplicate triples collapse into one edge; see [`Self::duplicates_removed`].
    pub fn build(vocab: Vocabulary, triples: &[Triple], options: GraphOptions) -> Result<Self> {
        let n_ent = vocab.num_entities();
        let n_rel = vocab.num_relations();
        let unique: BTreeSet<Triple> = triples.iter().copied().collect();
        let duplicates_removed = triples.len() - unique.len();

        let mut adjacency = vec![Vec::new(); n_ent];
        for t in &unique {
            if t.subject.index() >= n_ent || t.object.index() >= n_ent {
                return Err(Error::Lookup {
                    kind: "entity",
                    id: t.subject.index().max(t.object.index()),
                    size: n_ent,
                });
            }
            if t.relation.index() >= n_rel {
                return Err(Error::Lookup {
                    kind: "relation",
                    id: t.relation.index(),
                    size: n_rel,
                });
            }
            adjacency[t.subject.index()].push((t.relation, t.object));
            if options.inverse_edges {
                let inv = RelationId(t.relation.0 + n_rel as u32);
                adjacency[t.object.index()].push((inv, t.subject));
            }
        }
        let mut graph = Self {
            vocab,
            options,
            adjacency,
            duplicates_removed,
        };
        let stop = graph.stop();
        for (e, edges) in graph.adjacency.iter_mut().enumerate() {
            if options.stop_edges {
                edges.push((stop, EntityId(e as u32)));
            }
            edges.sort_unstable();
            edges.dedup();
        }
        Ok(graph)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn options(&self) -> GraphOptions {
        self.options
    }

    pub fn num_entities(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Number of relation ids including the reserved inverse and STOP ids.
    pub fn num_relations(&self) -> usize {
        self.stop().index() + 1
    }

    pub fn stop(&self) -> RelationId {
        let n = self.num_base_relations() as u32;
        if self.options.inverse_edges {
            RelationId(2 * n)
        } else {
            RelationId(n)
        }
    }

    pub fn is_stop(&self, r: RelationId) -> bool {
        r == self.stop()
    }

    /// Inverse of a base relation (or base relation of an inverse), if inverses exist.
    pub fn inverse_of(&self, r: RelationId) -> Option<RelationId> {
        if !self.options.inverse_edges {
            return None;
        }
        let n = self.num_base_relations() as u32;
        match r.0 {
            x if x < n => Some(RelationId(x + n)),
            x if x < 2 * n => Some(RelationId(x - n)),
            _ => None,
        }
    }

    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.num_entities() {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "entity",
                id: e.index(),
                size: self.num_entities(),
            })
        }
    }

    /// Outgoing edges of `e`, sorted by relation id then target id.
    pub fn outgoing(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.check_entity(e)?;
        Ok(&self.adjacency[e.index()])
    }

    pub fn has_edge(&self, s: EntityId, r: RelationId, o: EntityId) -> bool {
        self.adjacency
            .get(s.index())
            .is_some_and(|edges| edges.binary_search(&(r, o)).is_ok())
    }

    /// Outgoing edges of `e` other than its STOP self-loop.
    pub fn neighbors(&self, e: EntityId) -> Result<Vec<(RelationId, EntityId)>> {
        let stop = self.stop();
        Ok(self
            .outgoing(e)?
            .iter()
            .copied()
            .filter(|&(r, o)| !(r == stop && o == e))
            .collect())
    }

    pub fn entity_label(&self, e: EntityId) -> String {
        self.vocab
            .entities
            .label(e.0)
            .map_or_else(|| format!("#{}", e.0), str::to_owned)
    }

    pub fn relation_label(&self, r: RelationId) -> String {
        let n = self.num_base_relations() as u32;
        if r == self.stop() {
            return "STOP".to_owned();
        }
        if r.0 < n {
            return self.vocab.relations.label(r.0).unwrap_or("?").to_owned();
        }
        match self.inverse_of(r) {
            Some(base) => format!("{}_inv", self.relation_label(base)),
            None => format!("#{}", r.0),
        }
    }

    /// Relation sequences of length exactly `n` that walk from `source` to
    /// `target`.
    ///
    /// STOP only appears as a trailing suffix. Up to `max_paths` distinct
    /// sequences are kept in depth-first discovery order; the result is then
    /// sorted. `mask` removes that edge and its inverse from the first hop.
    pub fn enumerate_paths(
        &self,
        source: EntityId,
        target: EntityId,
        n: usize,
        max_paths: usize,
        mask: Option<Triple>,
    ) -> Result<Vec<RelationPath>> {
        if n == 0 {
            return Err(Error::contract("path length must be at least 1"));
        }
        self.check_entity(source)?;
        self.check_entity(target)?;
        let mut found = Vec::new();
        let mut seen = HashSet::new();
        let mut prefix = Vec::with_capacity(n);
        let masked = self.masked_edges(mask);
        self.paths_dfs(
            source, target, n, max_paths, &masked, &mut prefix, &mut seen, &mut found,
        );
        found.sort();
        Ok(found)
    }

    /// The forward and inverse edge of `mask`, as (source, relation, target).
    pub(crate) fn masked_edges(&self, mask: Option<Triple>) -> Vec<(EntityId, RelationId, EntityId)> {
        let mut out = Vec::new();
        if let Some(t) = mask {
            out.push((t.subject, t.relation, t.object));
            if let Some(inv) = self.inverse_of(t.relation) {
                out.push((t.object, inv, t.subject));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn paths_dfs(
        &self,
        at: EntityId,
        target: EntityId,
        remaining: usize,
        max_paths: usize,
        masked: &[(EntityId, RelationId, EntityId)],
        prefix: &mut Vec<RelationId>,
        seen: &mut HashSet<RelationPath>,
        found: &mut Vec<RelationPath>,
    ) {
        if found.len() >= max_paths {
            return;
        }
        let stop = self.stop();
        if prefix.last() == Some(&stop) {
            // only STOP may follow a STOP
            if at == target && self.options.stop_edges {
                let mut path = prefix.clone();
                path.resize(prefix.len() + remaining, stop);
                if seen.insert(path.clone()) {
                    found.push(path);
                }
            }
            return;
        }
        if remaining == 0 {
            if at == target && seen.insert(prefix.clone()) {
                found.push(prefix.clone());
            }
            return;
        }
        let first_hop = prefix.is_empty();
        for &(r, next) in &self.adjacency[at.index()] {
            if first_hop && masked.iter().any(|&(s, mr, o)| s == at && mr == r && o == next) {
                continue;
            }
            prefix.push(r);
            self.paths_dfs(next, target, remaining - 1, max_paths, masked, prefix, seen, found);
            prefix.pop();
            if found.len() >= max_paths {
                return;
            }
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject.0, self.relation.0, self.object.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> KnowledgeGraph {
        let mut v = Vocabulary::new();
        let (a, b, c) = (v.entity("a"), v.entity("b"), v.entity("c"));
        let (r1, r2) = (v.relation("r1"), v.relation("r2"));
        let triples = vec![Triple::new(a, r1, b), Triple::new(b, r2, c)];
        KnowledgeGraph::build(v, &triples, GraphOptions::default()).unwrap()
    }

    #[test]
    fn parse_two_lines() {
        let mut v = Vocabulary::new();
        let t = parse_triples("a\tr\tb\nb\tr\tc\n", Path::new("x"), &mut v).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(v.num_entities(), 3);
        assert_eq!(v.num_relations(), 1);
    }

    #[test]
    fn parse_empty_and_comments() {
        let mut v = Vocabulary::new();
        assert!(parse_triples("", Path::new("x"), &mut v).unwrap().is_empty());
        assert!(parse_triples("# header\n\n", Path::new("x"), &mut v)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn parse_two_fields_reports_line() {
        let mut v = Vocabulary::new();
        let err = parse_triples("a\tr\n", Path::new("x"), &mut v).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_triple_graph() {
        let mut v = Vocabulary::new();
        let (a, b) = (v.entity("a"), v.entity("b"));
        let r = v.relation("r");
        let g = KnowledgeGraph::build(v, &[Triple::new(a, r, b)], GraphOptions::default()).unwrap();
        let inv = g.inverse_of(r).unwrap();
        assert_eq!(g.outgoing(a).unwrap(), &[(r, b), (g.stop(), a)]);
        assert_eq!(g.outgoing(b).unwrap(), &[(inv, a), (g.stop(), b)]);
        assert_eq!(g.num_edges(), 1 + 1 + 2);
        assert_eq!(g.relation_label(inv), "r_inv");
    }

    #[test]
    fn empty_graph() {
        let g = KnowledgeGraph::build(Vocabulary::new(), &[], GraphOptions::default()).unwrap();
        assert_eq!(g.num_entities(), 0);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn duplicates_collapse() {
        let mut v = Vocabulary::new();
        let (a, b) = (v.entity("a"), v.entity("b"));
        let r = v.relation("r");
        let t = Triple::new(a, r, b);
        let g = KnowledgeGraph::build(v, &[t, t], GraphOptions::default()).unwrap();
        assert_eq!(g.duplicates_removed(), 1);
        assert_eq!(g.neighbors(a).unwrap(), vec![(r, b)]);
    }

    #[test]
    fn star_and_leaf_neighbors() {
        let mut v = Vocabulary::new();
        let c = v.entity("c");
        let leaves: Vec<_> = ["x", "y", "z"].iter().map(|l| v.entity(l)).collect();
        let r = v.relation("r");
        let triples: Vec<_> = leaves.iter().map(|&l| Triple::new(c, r, l)).collect();
        let opts = GraphOptions {
            inverse_edges: false,
            stop_edges: true,
        };
        let g = KnowledgeGraph::build(v, &triples, opts).unwrap();
        assert_eq!(g.neighbors(c).unwrap().len(), 3);
        assert!(g.neighbors(leaves[0]).unwrap().is_empty());
        assert!(g.neighbors(EntityId(9)).is_err());
    }

    #[test]
    fn chain_paths() {
        let g = chain();
        let (a, c) = (EntityId(0), EntityId(2));
        let paths = g.enumerate_paths(a, c, 3, 100, None).unwrap();
        assert_eq!(paths, vec![vec![RelationId(0), RelationId(1), g.stop()]]);
        assert_eq!(g.enumerate_paths(a, a, 1, 100, None).unwrap(), vec![vec![g.stop()]]);
        assert!(g.enumerate_paths(c, a, 1, 100, None).unwrap().is_empty());
    }

    #[test]
    fn masked_first_hop_paths() {
        let g = chain();
        let (a, b) = (EntityId(0), EntityId(1));
        let mask = Triple::new(a, RelationId(0), b);
        assert!(g.enumerate_paths(a, b, 2, 100, Some(mask)).unwrap().is_empty());
        assert_eq!(g.enumerate_paths(a, b, 2, 100, None).unwrap().len(), 1);
    }

    #[test]
    fn path_cap_truncates() {
        let mut v = Vocabulary::new();
        let (a, b) = (v.entity("a"), v.entity("b"));
        let triples: Vec<_> = (0..5)
            .map(|i| {
                let r = v.relation(&format!("r{i}"));
                Triple::new(a, r, b)
            })
            .collect();
        let g = KnowledgeGraph::build(v, &triples, GraphOptions::default()).unwrap();
        let all = g.enumerate_paths(a, b, 3, 1000, None).unwrap();
        let capped = g.enumerate_paths(a, b, 3, 3, None).unwrap();
        assert_eq!(capped.len(), 3);
        assert!(all.len() > 3);
    }
}
