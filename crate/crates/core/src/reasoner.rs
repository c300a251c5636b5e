//! The walking MDP and its LSTM policy.
//!
//! At each step the history `h_t = LSTM(h_{t-1}, [a_{t-1}; o_t])` is
//! combined with the current entity and the task representation `r_q`, and
//! the outgoing edges are scored by
//! `softmax(A_t · W2 · relu(W1 [h_t; o_t; r_q]))`, where row `i` of `A_t`
//! is `[relation; target entity]` for candidate edge `i`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lstm_step, ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::model::ModelLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub current: EntityId,
    pub step: usize,
    pub h: Var,
    pub c: Var,
    pub prev_relation: RelationId,
    pub task_rep: Var,
    pub mask: Option<Triple>,
}

/// Candidate edges out of the current entity, in graph order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSlate {
    pub edges: Vec<(RelationId, EntityId)>,
}

/// Output of one policy evaluation.
#[derive(Clone, Debug)]
pub struct StepDistribution {
    pub slate: ActionSlate,
    pub scores: Var,
    pub probs: Var,
    pub log_probs: Var,
    pub h: Var,
    pub c: Var,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    /// Scalar log pi(a_t) per step, on the tape that produced the rollout.
    pub step_log_probs: Vec<Var>,
    /// Scalar policy entropy per step.
    pub step_entropies: Vec<Var>,
    pub reward: f64,
}

impl Trajectory {
    pub fn end(&self) -> EntityId {
        *self.entities.last().expect("trajectory has a start entity")
    }
}

pub fn reset<F: Scalar>(
    tape: &mut Tape<F>,
    g: &KnowledgeGraph,
    layout: &ModelLayout,
    start: EntityId,
    task_rep: Var,
    mask: Option<Triple>,
) -> Result<EpisodeState> {
    g.check_entity(start)?;
    if tape.shape(task_rep) != [layout.dims.dim] {
        return Err(Error::shape(
            "reset",
            format!("task representation {:?}, expected [{}]", tape.shape(task_rep), layout.dims.dim),
        ));
    }
    let hs = layout.dims.hidden;
    Ok(EpisodeState {
        current: start,
        step: 0,
        h: tape.zeros(hs),
        c: tape.zeros(hs),
        prev_relation: layout.begin(),
        task_rep,
        mask,
    })
}

/// Outgoing edges of the current entity, minus the masked query edge on the first hop.
pub fn action_slate(g: &KnowledgeGraph, state: &EpisodeState) -> Result<ActionSlate> {
    let out = g.outgoing(state.current)?;
    let masked = if state.step == 0 { g.masked_edges(state.mask) } else { Vec::new() };
    let edges: Vec<_> = out
        .iter()
        .copied()
        .filter(|&(r, o)| !masked.iter().any(|&(s, mr, mo)| s == state.current && mr == r && mo == o))
        .collect();
    if edges.is_empty() {
        return Err(Error::InvalidActionSet);
    }
    Ok(ActionSlate { edges })
}

/// Evaluates the policy at `state`.
pub fn policy_distribution<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    state: &EpisodeState,
) -> Result<StepDistribution> {
    let slate = action_slate(g, state)?;
    let prev = tape.lookup(store, layout.relation_emb, state.prev_relation.index())?;
    let here = tape.lookup(store, layout.entity_emb, state.current.index())?;
    let x = tape.concat(&[prev, here])?;
    let (h, c) = lstm_step(tape, store, &layout.policy_lstm, state.h, state.c, x)?;

    let obs = tape.concat(&[h, here, state.task_rep])?;
    let w1 = tape.param(store, layout.w1);
    let w2 = tape.param(store, layout.w2);
    let hidden = tape.matvec(w1, obs)?;
    let hidden = tape.relu(hidden)?;
    let proj = tape.matvec(w2, hidden)?;

    let mut rows = Vec::with_capacity(slate.edges.len());
    for &(r, e) in &slate.edges {
        let rv = tape.lookup(store, layout.relation_emb, r.index())?;
        let ev = tape.lookup(store, layout.entity_emb, e.index())?;
        rows.push(tape.concat(&[rv, ev])?);
    }
    let actions = tape.stack(&rows)?;
    let scores = tape.matvec(actions, proj)?;
    let mask = vec![true; slate.edges.len()];
    let probs = tape.softmax_masked(scores, &mask)?;
    let log_probs = tape.log_softmax_masked(scores, &mask)?;
    Ok(StepDistribution {
        slate,
        scores,
        probs,
        log_probs,
        h,
        c,
    })
}

/// Moves `state` along action `index` of `dist`.
pub fn advance(state: &mut EpisodeState, dist: &StepDistribution, index: usize) {
    let (r, e) = dist.slate.edges[index];
    state.current = e;
    state.prev_relation = r;
    state.h = dist.h;
    state.c = dist.c;
    state.step += 1;
}

fn entropy<F: Scalar>(tape: &mut Tape<F>, dist: &StepDistribution) -> Result<Var> {
    let plogp = tape.mul(dist.probs, dist.log_probs)?;
    let s = tape.sum(plogp)?;
    tape.scale(s, -F::one())
}

fn choose<F: Scalar, R: Rng>(probs: &[F], mode: RolloutMode, rng: &mut R) -> usize {
    match mode {
        RolloutMode::Greedy => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        RolloutMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p.as_f64();
                if u < acc {
                    return i;
                }
            }
            // rounding left u above the final cumulative sum
            probs.iter().rposition(|p| *p > F::zero()).unwrap_or(probs.len() - 1)
        }
    }
}

/// Where a rollout should go next.
enum Driver<'a, R> {
    Policy(RolloutMode, &'a mut R),
    Replay(&'a [(RelationId, EntityId)]),
}

#[allow(clippy::too_many_arguments)]
fn drive<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    start: EntityId,
    target: EntityId,
    task_rep: Var,
    steps: usize,
    mask: Option<Triple>,
    mut driver: Driver<'_, R>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::contract("rollout length must be at least 1"));
    }
    let mut state = reset(tape, g, layout, start, task_rep, mask)?;
    let mut traj = Trajectory {
        entities: vec![start],
        relations: Vec::with_capacity(steps),
        step_log_probs: Vec::with_capacity(steps),
        step_entropies: Vec::with_capacity(steps),
        reward: 0.0,
    };
    for t in 0..steps {
        let dist = policy_distribution(tape, store, layout, g, &state)?;
        let index = match &mut driver {
            Driver::Policy(mode, rng) => choose(tape.value(dist.probs), *mode, *rng),
            Driver::Replay(edges) => {
                let want = edges[t];
                dist.slate
                    .edges
                    .iter()
                    .position(|&e| e == want)
                    .ok_or_else(|| Error::contract(format!("replayed edge {want:?} is not available at step {t}")))?
            }
        };
        let lp = tape.pick(dist.log_probs, index)?;
        let ent = entropy(tape, &dist)?;
        advance(&mut state, &dist, index);
        traj.relations.push(state.prev_relation);
        traj.entities.push(state.current);
        traj.step_log_probs.push(lp);
        traj.step_entropies.push(ent);
    }
    traj.reward = if traj.end() == target { 1.0 } else { 0.0 };
    Ok(traj)
}

/// Walks `steps` edges from `start`; reward is 1 iff the walk ends at `target`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    start: EntityId,
    target: EntityId,
    task_rep: Var,
    steps: usize,
    mode: RolloutMode,
    mask: Option<Triple>,
    rng: &mut R,
) -> Result<Trajectory> {
    drive(
        tape,
        store,
        layout,
        g,
        start,
        target,
        task_rep,
        steps,
        mask,
        Driver::Policy(mode, rng),
    )
}

/// `count` walks from `start`, sharing the policy evaluation of every
/// common action prefix. Equivalent to `count` calls to [`rollout`] with
/// the same `rng`, but records each distinct prefix on the tape only once.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    start: EntityId,
    target: EntityId,
    task_rep: Var,
    steps: usize,
    count: usize,
    mode: RolloutMode,
    mask: Option<Triple>,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if steps == 0 {
        return Err(Error::contract("rollout length must be at least 1"));
    }
    let root = reset(tape, g, layout, start, task_rep, mask)?;
    let mut cache: HashMap<Vec<usize>, (StepDistribution, Var)> = HashMap::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut state = root.clone();
        let mut prefix = Vec::with_capacity(steps);
        let mut traj = Trajectory {
            entities: vec![start],
            relations: Vec::with_capacity(steps),
            step_log_probs: Vec::with_capacity(steps),
            step_entropies: Vec::with_capacity(steps),
            reward: 0.0,
        };
        for _ in 0..steps {
            if !cache.contains_key(&prefix) {
                let dist = policy_distribution(tape, store, layout, g, &state)?;
                let ent = entropy(tape, &dist)?;
                cache.insert(prefix.clone(), (dist, ent));
            }
            let (dist, ent) = &cache[&prefix];
            let index = choose(tape.value(dist.probs), mode, rng);
            let lp = tape.pick(dist.log_probs, index)?;
            advance(&mut state, dist, index);
            traj.relations.push(state.prev_relation);
            traj.entities.push(state.current);
            traj.step_log_probs.push(lp);
            traj.step_entropies.push(*ent);
            prefix.push(index);
        }
        traj.reward = if traj.end() == target { 1.0 } else { 0.0 };
        out.push(traj);
    }
    Ok(out)
}

/// Re-scores a fixed walk (its edges after the start entity) under the current parameters.
#[allow(clippy::too_many_arguments)]
pub fn replay<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    start: EntityId,
    target: EntityId,
    task_rep: Var,
    edges: &[(RelationId, EntityId)],
    mask: Option<Triple>,
) -> Result<Trajectory> {
    drive::<F, rand_chacha::ChaCha8Rng>(
        tape,
        store,
        layout,
        g,
        start,
        target,
        task_rep,
        edges.len(),
        mask,
        Driver::Replay(edges),
    )
}

/// Exponential moving average of rewards used as the REINFORCE baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { value: 0.0, decay }
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward;
    }
}

/// `-mean[(R - b) * sum_t log pi(a_t)] - entropy_weight * mean entropy`.
///
/// The baseline is a constant inside the loss and is updated afterwards with
/// the batch's mean reward.
pub fn reinforce_loss<F: Scalar>(
    tape: &mut Tape<F>,
    batch: &[Trajectory],
    baseline: &mut Baseline,
    entropy_weight: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("reinforce_loss needs at least one trajectory"));
    }
    let b = baseline.value;
    let mut pg_terms = Vec::with_capacity(batch.len());
    let mut ent_terms = Vec::with_capacity(batch.len());
    for traj in batch {
        let logp = sum_scalars(tape, &traj.step_log_probs)?;
        pg_terms.push(tape.scale(logp, F::lit(-(traj.reward - b)))?);
        ent_terms.push(tape.mean(&traj.step_entropies)?);
    }
    let pg = tape.mean(&pg_terms)?;
    let ent = tape.mean(&ent_terms)?;
    let ent = tape.scale(ent, F::lit(-entropy_weight))?;
    let loss = tape.add(pg, ent)?;
    let mean_reward = batch.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64;
    baseline.update(mean_reward);
    Ok(loss)
}

fn sum_scalars<F: Scalar>(tape: &mut Tape<F>, xs: &[Var]) -> Result<Var> {
    let v = tape.concat(xs)?;
    tape.sum(v)
}

/// `e0 -r1-> e1 -r2-> ... [reward]` with labels.
pub fn format_trajectory(g: &KnowledgeGraph, traj: &Trajectory) -> String {
    let mut s = g.entity_label(traj.entities[0]);
    for (r, e) in traj.relations.iter().zip(&traj.entities[1..]) {
        s.push_str(&format!(" -{}-> {}", g.relation_label(*r), g.entity_label(*e)));
    }
    s.push_str(&format!(" [{}]", traj.reward));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{GraphOptions, Vocabulary};
    use crate::model::{Model, ModelDims};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(opts: GraphOptions) -> KnowledgeGraph {
        let mut v = Vocabulary::new();
        let (a, b, c) = (v.entity("a"), v.entity("b"), v.entity("c"));
        let (r1, r2) = (v.relation("r1"), v.relation("r2"));
        KnowledgeGraph::build(v, &[Triple::new(a, r1, b), Triple::new(b, r2, c)], opts).unwrap()
    }

    fn model(g: &KnowledgeGraph, seed: u64) -> Model<f64> {
        Model::new(ModelDims::for_graph(g, 4, 5, 6), seed).unwrap()
    }

    #[test]
    fn reset_and_mask() {
        let g = chain(GraphOptions::default());
        let m = model(&g, 1);
        let mut tape = Tape::<f64>::new();
        let rep = tape.zeros(4);
        let s = reset(&mut tape, &g, &m.layout, EntityId(0), rep, None).unwrap();
        assert_eq!((s.current, s.step), (EntityId(0), 0));
        assert!(tape.value(s.h).iter().all(|v| *v == 0.0));
        let masked = Triple::new(EntityId(0), RelationId(0), EntityId(1));
        let s = reset(&mut tape, &g, &m.layout, EntityId(0), rep, Some(masked)).unwrap();
        let slate = action_slate(&g, &s).unwrap();
        assert_eq!(slate.edges, vec![(g.stop(), EntityId(0))]);
        assert!(reset(&mut tape, &g, &m.layout, EntityId(7), rep, None).is_err());
    }

    #[test]
    fn stop_only_entity_is_certain() {
        let g = chain(GraphOptions {
            inverse_edges: false,
            stop_edges: true,
        });
        let m = model(&g, 2);
        let mut tape = Tape::new();
        let rep = tape.zeros(4);
        let s = reset(&mut tape, &g, &m.layout, EntityId(2), rep, None).unwrap();
        let d = policy_distribution(&mut tape, &m.store, &m.layout, &g, &s).unwrap();
        assert_eq!(tape.value(d.probs), &[1.0]);
    }

    #[test]
    fn sampled_rollouts_repeat_with_seed() {
        let g = chain(GraphOptions::default());
        let m = model(&g, 3);
        let run = |seed| {
            let mut tape = Tape::new();
            let rep = tape.zeros(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rollout(
                &mut tape, &m.store, &m.layout, &g, EntityId(0), EntityId(2), rep, 3,
                RolloutMode::Sample, None, &mut rng,
            )
            .unwrap();
            (t.entities, t.relations)
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn trajectory_dump_uses_labels() {
        let g = chain(GraphOptions::default());
        let m = model(&g, 4);
        let mut tape = Tape::new();
        let rep = tape.zeros(4);
        let edges = [(RelationId(0), EntityId(1)), (RelationId(1), EntityId(2)), (g.stop(), EntityId(2))];
        let t = replay(&mut tape, &m.store, &m.layout, &g, EntityId(0), EntityId(2), rep, &edges, None).unwrap();
        assert_eq!(format_trajectory(&g, &t), "a -r1-> b -r2-> c -STOP-> c [1]");
    }

    #[test]
    fn zero_advantage_leaves_entropy_term() {
        let g = chain(GraphOptions::default());
        let m = model(&g, 5);
        let mut tape = Tape::new();
        let rep = tape.zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout(
            &mut tape, &m.store, &m.layout, &g, EntityId(0), EntityId(2), rep, 2,
            RolloutMode::Sample, None, &mut rng,
        )
        .unwrap();
        let mut baseline = Baseline { value: t.reward, decay: 0.95 };
        let ent: f64 = t.step_entropies.iter().map(|e| tape.scalar(*e)).sum::<f64>() / 2.0;
        let loss = reinforce_loss(&mut tape, &[t.clone()], &mut baseline, 0.3).unwrap();
        assert!((tape.scalar(loss) - (-0.3 * ent)).abs() < 1e-12);

        let mut baseline = Baseline::new(0.95);
        let mut tape2 = Tape::new();
        let rep = tape2.zeros(4);
        let edges: Vec<_> = t.relations.iter().copied().zip(t.entities[1..].iter().copied()).collect();
        let mut t2 = replay(&mut tape2, &m.store, &m.layout, &g, EntityId(0), EntityId(2), rep, &edges, None).unwrap();
        t2.reward = 1.0;
        let logp: f64 = t2.step_log_probs.iter().map(|v| tape2.scalar(*v)).sum();
        let loss = reinforce_loss(&mut tape2, &[t2], &mut baseline, 0.0).unwrap();
        assert!((tape2.scalar(loss) + logp).abs() < 1e-12);
        assert!((baseline.value - 0.05).abs() < 1e-12);
    }
}
