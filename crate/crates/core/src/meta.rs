//! Tasks, support/query sampling and first-order MAML with a meta-encoder.
//!
//! The outer loop is written against [`MetaObjective`] so the same driver
//! runs the REINFORCE objective ([`RlObjective`]) and analytic test losses.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, OptimizerKind, ParamStore, Scalar, Tape, Var};
use crate::encoder::{neighbor_task_rep, path_task_rep, PathOptions, Provenance, TaskRepresentation};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId, Triple};
use crate::model::{Model, ModelLayout};
use crate::reasoner::{reinforce_loss, rollout_group, Baseline, RolloutMode, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskRole {
    MetaTrain,
    MetaDev,
    MetaTest,
}

/// One query relation and its triples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub relation: RelationId,
    pub label: String,
    pub train: Vec<Triple>,
    pub eval: Vec<Triple>,
    pub role: TaskRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Neighbor,
    Path,
    /// Learned per-relation embedding (MAML, Transfer, Random).
    Identity,
    /// All-zero representation (MAML-Mask).
    Zero,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neighbor" => Ok(Self::Neighbor),
            "path" => Ok(Self::Path),
            "identity" => Ok(Self::Identity),
            "zero" => Ok(Self::Zero),
            other => Err(Error::contract(format!("unknown encoder kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    Transfer,
    Maml,
    MamlMask,
    Neighbor,
    Path,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Random,
        Method::Transfer,
        Method::Maml,
        Method::MamlMask,
        Method::Neighbor,
        Method::Path,
    ];

    pub fn encoder_kind(self) -> EncoderKind {
        match self {
            Method::Random | Method::Transfer | Method::Maml => EncoderKind::Identity,
            Method::MamlMask => EncoderKind::Zero,
            Method::Neighbor => EncoderKind::Neighbor,
            Method::Path => EncoderKind::Path,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Transfer => "transfer",
            Method::Maml => "maml",
            Method::MamlMask => "maml-mask",
            Method::Neighbor => "neighbor",
            Method::Path => "path",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Transfer => "Transfer",
            Method::Maml => "MAML",
            Method::MamlMask => "MAML-Mask",
            Method::Neighbor => "Neighbor",
            Method::Path => "Path",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Uniformly samples `meta_batch` distinct task indices.
pub fn sample_task_batch<R: Rng>(num_tasks: usize, meta_batch: usize, rng: &mut R) -> Result<Vec<usize>> {
    if meta_batch == 0 || meta_batch > num_tasks {
        return Err(Error::contract(format!(
            "meta batch of {meta_batch} from {num_tasks} tasks"
        )));
    }
    Ok(rand::seq::index::sample(rng, num_tasks, meta_batch).into_vec())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportQuery {
    pub support: Vec<Triple>,
    pub query: Vec<Triple>,
    /// True when there were too few triples for disjoint sets.
    pub overlap: bool,
}

fn draw<R: Rng>(pool: &[Triple], n: usize, rng: &mut R) -> Vec<Triple> {
    if n <= pool.len() {
        pool.choose_multiple(rng, n).copied().collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Draws a support set `D` and a query set `D'`, disjoint whenever the task is large enough.
pub fn split_support_query<R: Rng>(
    triples: &[Triple],
    support_size: usize,
    query_size: usize,
    rng: &mut R,
) -> Result<SupportQuery> {
    if triples.is_empty() {
        return Err(Error::contract("cannot split an empty task"));
    }
    if triples.len() >= support_size + query_size {
        let mut shuffled = triples.to_vec();
        shuffled.shuffle(rng);
        let query = shuffled[support_size..support_size + query_size].to_vec();
        shuffled.truncate(support_size);
        return Ok(SupportQuery {
            support: shuffled,
            query,
            overlap: false,
        });
    }
    let support = draw(triples, support_size, rng);
    let query = draw(triples, query_size, rng);
    Ok(SupportQuery {
        support,
        query,
        overlap: true,
    })
}

/// Builds the task representation of `kind` from support triples.
#[allow(clippy::too_many_arguments)]
pub fn make_task_rep<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    relation: RelationId,
    fresh: bool,
    support: &[Triple],
    paths: PathOptions,
) -> Result<TaskRepresentation> {
    match kind {
        EncoderKind::Neighbor => neighbor_task_rep(tape, store, layout, g, support),
        EncoderKind::Path => path_task_rep(tape, store, layout, g, support, paths),
        EncoderKind::Identity => {
            let value = tape.lookup(store, layout.task_relation_emb, relation.index())?;
            Ok(TaskRepresentation {
                value,
                provenance: Provenance::Identity { fresh },
                support_size: support.len(),
            })
        }
        EncoderKind::Zero => Ok(TaskRepresentation {
            value: tape.zeros(layout.dims.dim),
            provenance: Provenance::Zero,
            support_size: support.len(),
        }),
    }
}

/// Which data an objective evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Support set `D_i`, used by adaptation steps.
    Adapt,
    /// Query set `D_i'`, used for the meta-gradient.
    Meta,
}

/// A per-task loss for the MAML driver.
pub trait MetaObjective<F: Scalar>: Sync {
    type Episode: Sync;

    /// Records the loss of `episode` on `tape` and returns it with a scalar
    /// statistic (mean reward for RL objectives).
    fn loss(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        episode: &Self::Episode,
        phase: Phase,
        step: usize,
    ) -> Result<(Var, f64)>;
}

/// `k` SGD steps on the support loss, starting from a copy of `store`.
///
/// `store` itself is never modified; `k == 0` returns an exact copy.
pub fn adapt<F: Scalar, O: MetaObjective<F>>(
    objective: &O,
    store: &ParamStore<F>,
    episode: &O::Episode,
    steps: usize,
    lr: f64,
) -> Result<ParamStore<F>> {
    let mut adapted = store.clone();
    adapted.zero_grad();
    for step in 0..steps {
        let mut tape = Tape::new();
        let (loss, _) = objective.loss(&mut tape, &adapted, episode, Phase::Adapt, step)?;
        tape.backward(loss, &mut adapted)?;
        adapted.sgd_step(lr)?;
    }
    Ok(adapted)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetaStepStats {
    pub adaptation_updates: usize,
    pub meta_updates: usize,
    /// Mean query loss over the task batch.
    pub loss: f64,
    /// Mean of the objective's statistic on the query sets.
    pub stat: f64,
}

/// First-order meta-gradients: for each episode, adapt, then take the query
/// loss gradient at the adapted parameters. Returns a store (same layout as
/// `store`) whose gradient slots hold the sum over episodes.
pub fn meta_gradients<F: Scalar, O: MetaObjective<F>>(
    objective: &O,
    store: &ParamStore<F>,
    episodes: &[O::Episode],
    steps: usize,
    lr: f64,
) -> Result<(ParamStore<F>, MetaStepStats)> {
    if episodes.is_empty() {
        return Err(Error::contract("meta step needs at least one task"));
    }
    let per_task: Vec<(ParamStore<F>, f64, f64)> = episodes
        .par_iter()
        .map(|ep| {
            let mut adapted = adapt(objective, store, ep, steps, lr)?;
            let mut tape = Tape::new();
            let (loss, stat) = objective.loss(&mut tape, &adapted, ep, Phase::Meta, steps)?;
            let loss_value = tape.scalar(loss).as_f64();
            tape.backward(loss, &mut adapted)?;
            Ok((adapted, loss_value, stat))
        })
        .collect::<Result<_>>()?;

    let mut total = store.clone();
    total.zero_grad();
    let mut stats = MetaStepStats {
        adaptation_updates: steps * episodes.len(),
        meta_updates: 0,
        ..Default::default()
    };
    for (adapted, loss, stat) in &per_task {
        total.accumulate_grads(adapted)?;
        stats.loss += loss / episodes.len() as f64;
        stats.stat += stat / episodes.len() as f64;
    }
    total.check_grads_finite()?;
    Ok((total, stats))
}

/// `theta <- theta - beta * sum_i grad_{theta_i'} L_i(theta_i')`, via `optimizer`.
pub fn meta_step<F: Scalar, O: MetaObjective<F>>(
    objective: &O,
    store: &mut ParamStore<F>,
    episodes: &[O::Episode],
    steps: usize,
    lr: f64,
    meta_lr: f64,
    optimizer: &mut Optimizer,
) -> Result<MetaStepStats> {
    let (grads, mut stats) = meta_gradients(objective, store, episodes, steps, lr)?;
    store.zero_grad();
    store.accumulate_grads(&grads)?;
    optimizer.step(store, meta_lr)?;
    stats.meta_updates = 1;
    Ok(stats)
}

/// REINFORCE settings shared by meta-training, transfer and fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlSettings {
    pub kind: EncoderKind,
    pub path_len: usize,
    pub rollouts: usize,
    pub entropy_weight: f64,
    pub baseline: f64,
    pub baseline_decay: f64,
    pub paths: PathOptions,
    pub mask_query_edge: bool,
}

/// One sampled task instance for [`RlObjective`].
#[derive(Clone, Debug)]
pub struct RlEpisode {
    pub relation: RelationId,
    pub fresh: bool,
    /// `D_i`: adaptation data and the source of the meta-information.
    pub support: Vec<Triple>,
    /// `D_i'`: data for the meta-gradient.
    pub query: Vec<Triple>,
    pub seed: u64,
}

pub struct RlObjective<'a> {
    pub graph: &'a KnowledgeGraph,
    pub layout: &'a ModelLayout,
    pub settings: RlSettings,
}

pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.random()
}

/// Samples `rollouts` walks from each triple's subject toward its object.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    settings: &RlSettings,
    rep: Var,
    data: &[Triple],
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(data.len() * settings.rollouts);
    for t in data {
        let mask = (settings.mask_query_edge && g.has_edge(t.subject, t.relation, t.object)).then_some(*t);
        out.extend(rollout_group(
            tape,
            store,
            layout,
            g,
            t.subject,
            t.object,
            rep,
            settings.path_len,
            settings.rollouts,
            RolloutMode::Sample,
            mask,
            rng,
        )?);
    }
    Ok(out)
}

/// REINFORCE loss of one task on `data`, with the representation built from `support`.
#[allow(clippy::too_many_arguments)]
pub fn task_loss<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    settings: &RlSettings,
    relation: RelationId,
    fresh: bool,
    support: &[Triple],
    data: &[Triple],
    rng: &mut R,
) -> Result<(Var, f64)> {
    let rep = make_task_rep(tape, store, layout, g, settings.kind, relation, fresh, support, settings.paths)?;
    let trajs = rollout_batch(tape, store, layout, g, settings, rep.value, data, rng)?;
    let mut baseline = Baseline {
        value: settings.baseline,
        decay: settings.baseline_decay,
    };
    let loss = reinforce_loss(tape, &trajs, &mut baseline, settings.entropy_weight)?;
    let reward = trajs.iter().map(|t| t.reward).sum::<f64>() / trajs.len() as f64;
    Ok((loss, reward))
}

impl<F: Scalar> MetaObjective<F> for RlObjective<'_> {
    type Episode = RlEpisode;

    fn loss(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ep: &RlEpisode,
        phase: Phase,
        step: usize,
    ) -> Result<(Var, f64)> {
        let salt = match phase {
            Phase::Adapt => step as u64,
            Phase::Meta => 1 << 32 | step as u64,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ep.seed, salt));
        let data = match phase {
            Phase::Adapt => &ep.support,
            Phase::Meta => &ep.query,
        };
        task_loss(
            tape,
            store,
            self.layout,
            self.graph,
            &self.settings,
            ep.relation,
            ep.fresh,
            &ep.support,
            data,
            &mut rng,
        )
    }
}

/// Hyper-parameters of meta-training and transfer pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub meta_steps: usize,
    pub meta_batch: usize,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    pub meta_lr: f64,
    pub optimizer: OptimizerKind,
    pub support_size: usize,
    pub query_size: usize,
    pub rollouts: usize,
    pub path_len: usize,
    pub max_paths: usize,
    pub entropy_weight: f64,
    pub entropy_decay: f64,
    pub entropy_decay_every: usize,
    pub baseline_decay: f64,
    pub mask_query_edge: bool,
    pub transfer_batch: usize,
    pub transfer_steps: usize,
    pub transfer_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            meta_steps: 2000,
            meta_batch: 5,
            adapt_steps: 1,
            adapt_lr: 0.01,
            meta_lr: 0.001,
            optimizer: OptimizerKind::Sgd,
            support_size: 5,
            query_size: 5,
            rollouts: 20,
            path_len: 3,
            max_paths: 100,
            entropy_weight: 0.02,
            entropy_decay: 0.9,
            entropy_decay_every: 200,
            baseline_decay: 0.95,
            mask_query_edge: true,
            transfer_batch: 128,
            transfer_steps: 2000,
            transfer_lr: 0.001,
        }
    }
}

impl TrainConfig {
    /// Adaptation defaults per method: k = 1 for Path; otherwise `k_other`
    /// steps, with alpha = 0.01 when k = 1 and 0.001 otherwise.
    pub fn with_method_defaults(mut self, method: Method, k_other: usize) -> Self {
        self.adapt_steps = match method {
            Method::Path => 1,
            _ => k_other,
        };
        self.adapt_lr = if self.adapt_steps == 1 { 0.01 } else { 0.001 };
        self.meta_lr = 0.001;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.meta_batch == 0 {
            return bad("meta_batch must be at least 1");
        }
        if !(self.adapt_lr > 0.0 && self.meta_lr > 0.0 && self.transfer_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.path_len == 0 || self.rollouts == 0 || self.support_size == 0 || self.query_size == 0 {
            return bad("path_len, rollouts, support_size and query_size must be positive");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must be in [0, 1)");
        }
        Ok(())
    }

    pub fn entropy_at(&self, step: usize) -> f64 {
        let every = self.entropy_decay_every.max(1);
        self.entropy_weight * self.entropy_decay.powi((step / every) as i32)
    }

    pub fn rl_settings(&self, kind: EncoderKind, baseline: f64, step: usize) -> RlSettings {
        RlSettings {
            kind,
            path_len: self.path_len,
            rollouts: self.rollouts,
            entropy_weight: self.entropy_at(step),
            baseline,
            baseline_decay: self.baseline_decay,
            paths: PathOptions {
                length: self.path_len,
                max_paths: self.max_paths,
                mask_query_edge: self.mask_query_edge,
            },
            mask_query_edge: self.mask_query_edge,
        }
    }
}

/// One row of `loss.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub reward: f64,
}

/// First-order MAML: meta-trains `model` on the meta-training tasks.
pub fn meta_train(
    model: &mut Model<f32>,
    g: &KnowledgeGraph,
    tasks: &[Task],
    kind: EncoderKind,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    model.layout.check_graph(g)?;
    let tasks: Vec<&Task> = tasks.iter().filter(|t| !t.train.is_empty()).collect();
    if tasks.is_empty() {
        return Err(Error::contract("no meta-training task has training triples"));
    }
    let batch = cfg.meta_batch.min(tasks.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, &model.store);
    let mut baseline = Baseline::new(cfg.baseline_decay);
    let mut curve = Vec::with_capacity(cfg.meta_steps);
    for step in 0..cfg.meta_steps {
        let picked = sample_task_batch(tasks.len(), batch, &mut rng)?;
        let episodes = picked
            .into_iter()
            .map(|i| {
                let t = tasks[i];
                let sq = split_support_query(&t.train, cfg.support_size, cfg.query_size, &mut rng)?;
                Ok(RlEpisode {
                    relation: t.relation,
                    fresh: false,
                    support: sq.support,
                    query: sq.query,
                    seed: rng.random(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let objective = RlObjective {
            graph: g,
            layout: &model.layout,
            settings: cfg.rl_settings(kind, baseline.value, step),
        };
        let stats = meta_step(
            &objective,
            &mut model.store,
            &episodes,
            cfg.adapt_steps,
            cfg.adapt_lr,
            cfg.meta_lr,
            &mut optimizer,
        )?;
        baseline.update(stats.stat);
        if step % 50 == 0 {
            log::debug!("meta step {step}: loss {:.4} reward {:.3}", stats.loss, stats.stat);
        }
        curve.push(LossRecord {
            step,
            loss: stats.loss,
            reward: stats.stat,
        });
    }
    Ok(curve)
}

/// Multi-task REINFORCE over the pooled meta-training triples with identity representations.
pub fn train_transfer(
    model: &mut Model<f32>,
    g: &KnowledgeGraph,
    tasks: &[Task],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    model.layout.check_graph(g)?;
    let pool: Vec<Triple> = tasks.iter().flat_map(|t| t.train.iter().copied()).collect();
    if pool.is_empty() {
        return Err(Error::contract("no meta-training triples to pool"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, &model.store);
    let mut baseline = Baseline::new(cfg.baseline_decay);
    let mut curve = Vec::with_capacity(cfg.transfer_steps);
    for step in 0..cfg.transfer_steps {
        let batch = draw(&pool, cfg.transfer_batch.min(pool.len()).max(1), &mut rng);
        let (loss, reward) = pooled_step(model, g, cfg, &batch, &mut baseline, step, &mut rng)?;
        optimizer.step(&mut model.store, cfg.transfer_lr)?;
        curve.push(LossRecord { step, loss, reward });
    }
    Ok(curve)
}

fn pooled_step<R: Rng>(
    model: &mut Model<f32>,
    g: &KnowledgeGraph,
    cfg: &TrainConfig,
    batch: &[Triple],
    baseline: &mut Baseline,
    step: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let settings = cfg.rl_settings(EncoderKind::Identity, baseline.value, step);
    let mut tape = Tape::new();
    let mut trajs = Vec::new();
    let mut relations: Vec<RelationId> = batch.iter().map(|t| t.relation).collect();
    relations.sort();
    relations.dedup();
    for r in relations {
        let data: Vec<Triple> = batch.iter().filter(|t| t.relation == r).copied().collect();
        let rep = make_task_rep(
            &mut tape,
            &model.store,
            &model.layout,
            g,
            EncoderKind::Identity,
            r,
            false,
            &data,
            settings.paths,
        )?;
        trajs.extend(rollout_batch(&mut tape, &model.store, &model.layout, g, &settings, rep.value, &data, rng)?);
    }
    let loss = reinforce_loss(&mut tape, &trajs, baseline, settings.entropy_weight)?;
    let value = tape.scalar(loss).as_f64();
    tape.backward(loss, &mut model.store)?;
    let reward = trajs.iter().map(|t| t.reward).sum::<f64>() / trajs.len() as f64;
    Ok((value, reward))
}

/// Produces the initial parameters of `method`: untouched random init for
/// Random, pooled pre-training for Transfer, first-order meta-training otherwise.
pub fn train_method(
    method: Method,
    model: &mut Model<f32>,
    g: &KnowledgeGraph,
    meta_train_tasks: &[Task],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<LossRecord>> {
    match method {
        Method::Random => Ok(Vec::new()),
        Method::Transfer => train_transfer(model, g, meta_train_tasks, cfg, seed),
        _ => meta_train(model, g, meta_train_tasks, method.encoder_kind(), cfg, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triples(n: usize) -> Vec<Triple> {
        use crate::kg::EntityId;
        (0..n)
            .map(|i| Triple::new(EntityId(i as u32), RelationId(0), EntityId(i as u32 + 1)))
            .collect()
    }

    #[test]
    fn batch_sampling() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let x = sample_task_batch(10, 5, &mut a).unwrap();
        assert_eq!(x, sample_task_batch(10, 5, &mut b).unwrap());
        let mut sorted = x.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
        let mut all = sample_task_batch(10, 10, &mut a).unwrap();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(sample_task_batch(3, 4, &mut a).is_err());
    }

    #[test]
    fn split_disjoint_and_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sq = split_support_query(&triples(20), 5, 5, &mut rng).unwrap();
        assert_eq!((sq.support.len(), sq.query.len(), sq.overlap), (5, 5, false));
        assert!(sq.support.iter().all(|t| !sq.query.contains(t)));

        let sq = split_support_query(&triples(6), 5, 5, &mut rng).unwrap();
        assert!(sq.overlap);
        assert_eq!((sq.support.len(), sq.query.len()), (5, 5));

        let a = split_support_query(&triples(20), 5, 5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = split_support_query(&triples(20), 5, 5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        assert!(split_support_query(&[], 5, 5, &mut rng).is_err());
    }

    #[test]
    fn method_defaults() {
        let c = TrainConfig::default().with_method_defaults(Method::Neighbor, 5);
        assert_eq!((c.adapt_steps, c.adapt_lr, c.meta_lr), (5, 0.001, 0.001));
        let c = TrainConfig::default().with_method_defaults(Method::Path, 5);
        assert_eq!((c.adapt_steps, c.adapt_lr), (1, 0.01));
        assert_eq!(c.meta_batch, 5);
        assert_eq!(TrainConfig::default().entropy_at(450), 0.02 * 0.9f64.powi(2));
    }
}
