//! Parameter layout shared by the walking policy and the meta-encoders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{LstmCell, ParamId, ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId};

/// Sizes that determine every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_entities: usize,
    /// Graph relation ids including inverse and STOP ids (the BEGIN row is extra).
    pub num_relations: usize,
    /// Base relations, one identity row each.
    pub num_task_relations: usize,
    pub dim: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
}

impl ModelDims {
    pub fn for_graph(g: &KnowledgeGraph, dim: usize, hidden: usize, mlp_hidden: usize) -> Self {
        Self {
            num_entities: g.num_entities(),
            num_relations: g.num_relations(),
            num_task_relations: g.num_base_relations(),
            dim,
            hidden,
            mlp_hidden,
        }
    }
}

/// Parameter ids of the full model (policy `f` plus encoders `g`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelLayout {
    pub dims: ModelDims,
    pub entity_emb: ParamId,
    pub relation_emb: ParamId,
    pub task_relation_emb: ParamId,
    pub policy_lstm: LstmCell,
    pub w1: ParamId,
    pub w2: ParamId,
    pub neighbor_w: ParamId,
    pub neighbor_b: ParamId,
    pub path_lstm: LstmCell,
}

/// Default standard deviation of the embedding tables.
pub const EMBEDDING_STD: f64 = 0.01;

impl ModelLayout {
    /// Registers freshly initialized parameters in `store`: embedding tables
    /// from normal(0, `embedding_std`), matrices uniform in ±1/sqrt(fan_in),
    /// biases zero.
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, dims: ModelDims, embedding_std: f64) -> Result<Self> {
        if !(embedding_std > 0.0 && embedding_std.is_finite()) {
            return Err(Error::contract(format!("embedding std {embedding_std} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(store.seed());
        let d = dims.dim;
        let entity_emb = store.insert_normal("entity_emb", vec![dims.num_entities, d], embedding_std, &mut rng)?;
        let relation_emb =
            store.insert_normal("relation_emb", vec![dims.num_relations + 1, d], embedding_std, &mut rng)?;
        let task_relation_emb = store.insert_normal(
            "task_relation_emb",
            vec![dims.num_task_relations.max(1), d],
            embedding_std,
            &mut rng,
        )?;
        let policy_lstm = LstmCell::init(store, "policy.lstm", 2 * d, dims.hidden, &mut rng)?;
        let w1 = store.insert_uniform("policy.w1", dims.mlp_hidden, dims.hidden + 2 * d, &mut rng)?;
        let w2 = store.insert_uniform("policy.w2", 2 * d, dims.mlp_hidden, &mut rng)?;
        let neighbor_w = store.insert_uniform("neighbor.w", d, 2 * d, &mut rng)?;
        let neighbor_b = store.insert_zeros("neighbor.b", vec![d])?;
        let path_lstm = LstmCell::init(store, "path.lstm", d, d, &mut rng)?;
        Ok(Self {
            dims,
            entity_emb,
            relation_emb,
            task_relation_emb,
            policy_lstm,
            w1,
            w2,
            neighbor_w,
            neighbor_b,
            path_lstm,
        })
    }

    /// Recovers the layout of a store produced by [`ModelLayout::init`] (e.g. a checkpoint).
    pub fn from_store<F: Scalar>(store: &ParamStore<F>) -> Result<Self> {
        let entity_emb = store.id("entity_emb")?;
        let relation_emb = store.id("relation_emb")?;
        let task_relation_emb = store.id("task_relation_emb")?;
        let policy_lstm = LstmCell::from_store(store, "policy.lstm")?;
        let w1 = store.id("policy.w1")?;
        let w2 = store.id("policy.w2")?;
        let neighbor_w = store.id("neighbor.w")?;
        let neighbor_b = store.id("neighbor.b")?;
        let path_lstm = LstmCell::from_store(store, "path.lstm")?;
        let ent = store.value(entity_emb).shape();
        let rel = store.value(relation_emb).shape();
        let task = store.value(task_relation_emb).shape();
        let dims = ModelDims {
            num_entities: ent[0],
            num_relations: rel[0] - 1,
            num_task_relations: task[0],
            dim: ent[1],
            hidden: policy_lstm.hidden,
            mlp_hidden: store.value(w1).shape()[0],
        };
        Ok(Self {
            dims,
            entity_emb,
            relation_emb,
            task_relation_emb,
            policy_lstm,
            w1,
            w2,
            neighbor_w,
            neighbor_b,
            path_lstm,
        })
    }

    /// Row of the relation table holding the learned BEGIN action.
    pub fn begin(&self) -> RelationId {
        RelationId(self.dims.num_relations as u32)
    }

    pub fn check_graph(&self, g: &KnowledgeGraph) -> Result<()> {
        if g.num_entities() != self.dims.num_entities || g.num_relations() != self.dims.num_relations {
            return Err(Error::contract(format!(
                "model sized for {} entities / {} relations, graph has {} / {}",
                self.dims.num_entities,
                self.dims.num_relations,
                g.num_entities(),
                g.num_relations()
            )));
        }
        Ok(())
    }
}

/// A parameter store together with its layout.
#[derive(Clone, Debug)]
pub struct Model<F> {
    pub layout: ModelLayout,
    pub store: ParamStore<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        Self::with_embedding_std(dims, seed, EMBEDDING_STD)
    }

    pub fn with_embedding_std(dims: ModelDims, seed: u64, embedding_std: f64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let layout = ModelLayout::init(&mut store, dims, embedding_std)?;
        Ok(Self { layout, store })
    }

    pub fn from_store(store: ParamStore<F>) -> Result<Self> {
        let layout = ModelLayout::from_store(&store)?;
        Ok(Self { layout, store })
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            layout: self.layout,
            store: self.store.cast(),
        }
    }
}
