//! Beam decoding, ranking metrics and the fine-tuning evaluation protocol.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Scalar, Tape};
use crate::encoder::Provenance;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::meta::{derive_seed, make_task_rep, task_loss, EncoderKind, Task, TrainConfig};
use crate::model::{Model, ModelLayout};
use crate::reasoner::{advance, policy_distribution, reset, EpisodeState};

/// How complete paths ending at the same entity are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Best single path.
    #[default]
    Max,
    /// Log-sum-exp over all beam paths.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    pub path_len: usize,
    pub score_mode: ScoreMode,
}

/// Ranks end entities by beam search over the policy.
///
/// Keeps the `width` most probable partial paths at every step (ties keep
/// the earlier beam, then the earlier action). Entities are sorted by score
/// descending, then by id.
#[allow(clippy::too_many_arguments)]
pub fn beam_decode<F: Scalar>(
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    start: EntityId,
    task_rep: &[F],
    cfg: BeamConfig,
    mask: Option<Triple>,
) -> Result<Vec<(EntityId, f64)>> {
    if cfg.width == 0 {
        return Err(Error::contract("beam width must be at least 1"));
    }
    let mut tape = Tape::new();
    let rep = tape.constant_vec(task_rep.to_vec())?;
    let mut beams: Vec<(EpisodeState, f64)> = vec![(reset(&mut tape, g, layout, start, rep, mask)?, 0.0)];
    for _ in 0..cfg.path_len {
        let mut candidates = Vec::new();
        let mut dists = Vec::with_capacity(beams.len());
        for (b, (state, score)) in beams.iter().enumerate() {
            let dist = policy_distribution(&mut tape, store, layout, g, state)?;
            for (a, lp) in tape.value(dist.log_probs).iter().enumerate() {
                candidates.push((score + lp.as_f64(), b, a));
            }
            dists.push(dist);
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        candidates.truncate(cfg.width);
        beams = candidates
            .into_iter()
            .map(|(score, b, a)| {
                let mut state = beams[b].0.clone();
                advance(&mut state, &dists[b], a);
                (state, score)
            })
            .collect();
    }
    let mut per_entity: BTreeMap<EntityId, Vec<f64>> = BTreeMap::new();
    for (state, score) in &beams {
        per_entity.entry(state.current).or_default().push(*score);
    }
    let mut ranked: Vec<(EntityId, f64)> = per_entity
        .into_iter()
        .map(|(e, scores)| (e, combine(&scores, cfg.score_mode)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

fn combine(scores: &[f64], mode: ScoreMode) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match mode {
        ScoreMode::Max => max,
        ScoreMode::Sum => max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln(),
    }
}

/// 1-based rank of `target`, skipping entities in `skip`; `None` if unreached.
pub fn rank_of(ranked: &[(EntityId, f64)], target: EntityId, skip: &HashSet<EntityId>) -> Option<usize> {
    ranked
        .iter()
        .filter(|(e, _)| *e == target || !skip.contains(e))
        .position(|(e, _)| *e == target)
        .map(|i| i + 1)
}

/// Mean reciprocal rank; unreached (`None`) counts as 0.
pub fn mrr(ranks: &[Option<usize>]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::contract("mrr of an empty rank list"));
    }
    let total: f64 = ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum();
    Ok(total / ranks.len() as f64)
}

pub fn hits_at_k(ranks: &[Option<usize>], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::contract("hits@k of an empty rank list"));
    }
    if k == 0 {
        return Err(Error::contract("hits@k needs k >= 1"));
    }
    let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TaskMetrics {
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub n: usize,
}

impl TaskMetrics {
    pub fn from_ranks(ranks: &[Option<usize>]) -> Result<Self> {
        Ok(Self {
            hits1: hits_at_k(ranks, 1)?,
            hits3: hits_at_k(ranks, 3)?,
            hits10: hits_at_k(ranks, 10)?,
            mrr: mrr(ranks)?,
            n: ranks.len(),
        })
    }

    /// Unweighted mean over tasks; `n` is the total query count.
    pub fn macro_average(tasks: &[TaskMetrics]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::contract("macro-average over no tasks"));
        }
        let k = tasks.len() as f64;
        Ok(Self {
            hits1: tasks.iter().map(|t| t.hits1).sum::<f64>() / k,
            hits3: tasks.iter().map(|t| t.hits3).sum::<f64>() / k,
            hits10: tasks.iter().map(|t| t.hits10).sum::<f64>() / k,
            mrr: tasks.iter().map(|t| t.mrr).sum::<f64>() / k,
            n: tasks.iter().map(|t| t.n).sum(),
        })
    }

    pub fn hits_monotone(&self) -> bool {
        self.hits1 <= self.hits3 && self.hits3 <= self.hits10
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankResult {
    pub query: Triple,
    pub ranked: Vec<(EntityId, f64)>,
    pub rank: Option<usize>,
}

/// Evaluation-time view of a task: the few-shot support and the held-out queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalTask {
    pub label: String,
    pub relation: RelationId,
    pub support: Vec<Triple>,
    pub eval: Vec<Triple>,
    /// The relation's identity row was never trained.
    pub fresh: bool,
}

/// Draws exactly `shots` support triples per task from its training triples.
pub fn eval_tasks(tasks: &[Task], shots: usize, seed: u64) -> Result<Vec<EvalTask>> {
    tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if shots == 0 || t.train.len() < shots {
                return Err(Error::contract(format!(
                    "task {} has {} training triples, {shots} shots requested",
                    t.label,
                    t.train.len()
                )));
            }
            if t.eval.is_empty() {
                return Err(Error::contract(format!("task {} has no eval triples", t.label)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let support = rand::seq::index::sample(&mut rng, t.train.len(), shots)
                .into_iter()
                .map(|j| t.train[j])
                .collect();
            Ok(EvalTask {
                label: t.label.clone(),
                relation: t.relation,
                support,
                eval: t.eval.clone(),
                fresh: t.role != crate::meta::TaskRole::MetaTrain,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub score_mode: ScoreMode,
    pub filtered: bool,
    /// Largest fine-tuning step count considered on meta-dev.
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub shots: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            beam_width: 100,
            score_mode: ScoreMode::Max,
            filtered: false,
            finetune_steps: 10,
            finetune_lr: 0.01,
            shots: 5,
        }
    }
}

/// Task representation values built from the support set only.
pub fn task_rep_values<F: Scalar>(
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    task: &EvalTask,
    train: &TrainConfig,
) -> Result<(Vec<F>, Provenance)> {
    let mut tape = Tape::new();
    let settings = train.rl_settings(kind, 0.0, 0);
    let rep = make_task_rep(
        &mut tape,
        store,
        layout,
        g,
        kind,
        task.relation,
        task.fresh,
        &task.support,
        settings.paths,
    )?;
    Ok((tape.value(rep.value).to_vec(), rep.provenance))
}

/// Ranks every eval triple of `task` against a fixed representation.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with_rep<F: Scalar>(
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    task: &EvalTask,
    rep: &[F],
    train: &TrainConfig,
    cfg: &EvalConfig,
) -> Result<(TaskMetrics, Vec<RankResult>)> {
    if task.eval.is_empty() {
        return Err(Error::contract(format!("task {} has no eval triples", task.label)));
    }
    let beam = BeamConfig {
        width: cfg.beam_width,
        path_len: train.path_len,
        score_mode: cfg.score_mode,
    };
    let results: Vec<RankResult> = task
        .eval
        .par_iter()
        .map(|q| {
            let mask = (train.mask_query_edge && g.has_edge(q.subject, q.relation, q.object)).then_some(*q);
            let ranked = beam_decode(store, layout, g, q.subject, rep, beam, mask)?;
            let skip: HashSet<EntityId> = if cfg.filtered {
                task.support
                    .iter()
                    .chain(&task.eval)
                    .filter(|t| t.subject == q.subject && t.object != q.object)
                    .map(|t| t.object)
                    .collect()
            } else {
                HashSet::new()
            };
            let rank = rank_of(&ranked, q.object, &skip);
            Ok(RankResult {
                query: *q,
                ranked,
                rank,
            })
        })
        .collect::<Result<_>>()?;
    let ranks: Vec<Option<usize>> = results.iter().map(|r| r.rank).collect();
    Ok((TaskMetrics::from_ranks(&ranks)?, results))
}

/// Builds the representation from the support set, then ranks the eval triples.
pub fn evaluate_task<F: Scalar>(
    store: &ParamStore<F>,
    layout: &ModelLayout,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    task: &EvalTask,
    train: &TrainConfig,
    cfg: &EvalConfig,
) -> Result<(TaskMetrics, Vec<RankResult>)> {
    let (rep, _) = task_rep_values(store, layout, g, kind, task, train)?;
    evaluate_with_rep(store, layout, g, task, &rep, train, cfg)
}

/// One REINFORCE-SGD step of policy and encoder on the support set.
pub fn finetune_step(
    model: &mut Model<f32>,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    task: &EvalTask,
    train: &TrainConfig,
    lr: f64,
    seed: u64,
    step: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, step as u64));
    let settings = train.rl_settings(kind, 0.0, 0);
    let mut tape = Tape::new();
    let (loss, reward) = task_loss(
        &mut tape,
        &model.store,
        &model.layout,
        g,
        &settings,
        task.relation,
        task.fresh,
        &task.support,
        &task.support,
        &mut rng,
    )?;
    tape.backward(loss, &mut model.store)?;
    model.store.sgd_step(lr)?;
    Ok(reward)
}

/// Metrics of all tasks at one fine-tuning step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub step: usize,
    pub tasks: Vec<(String, TaskMetrics)>,
    pub macro_avg: TaskMetrics,
}

impl MetricReport {
    pub fn new(step: usize, tasks: Vec<(String, TaskMetrics)>) -> Result<Self> {
        let per: Vec<TaskMetrics> = tasks.iter().map(|(_, m)| *m).collect();
        Ok(Self {
            step,
            macro_avg: TaskMetrics::macro_average(&per)?,
            tasks,
        })
    }
}

/// Fine-tunes a copy of `model` on each task and reports metrics at every
/// step in `steps` (sorted, may include 0 for the initial point).
pub fn evaluate_at_steps(
    model: &Model<f32>,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    tasks: &[EvalTask],
    steps: &[usize],
    train: &TrainConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    if tasks.is_empty() {
        return Err(Error::contract("evaluation needs at least one task"));
    }
    let mut wanted = steps.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let last = wanted.last().copied().unwrap_or(0);
    let mut per_step: Vec<Vec<(String, TaskMetrics)>> = vec![Vec::new(); wanted.len()];
    for (ti, task) in tasks.iter().enumerate() {
        let mut tuned = model.clone();
        let task_seed = derive_seed(seed, ti as u64);
        let mut next = 0;
        for step in 0..=last {
            if step > 0 {
                finetune_step(&mut tuned, g, kind, task, train, cfg.finetune_lr, task_seed, step - 1)?;
            }
            if wanted.get(next) == Some(&step) {
                let (m, _) = evaluate_task(&tuned.store, &tuned.layout, g, kind, task, train, cfg)?;
                per_step[next].push((task.label.clone(), m));
                next += 1;
            }
        }
    }
    wanted
        .into_iter()
        .zip(per_step)
        .map(|(step, tasks)| MetricReport::new(step, tasks))
        .collect()
}

/// Fine-tuning step count; must be frozen on meta-dev before meta-test.
#[derive(Clone, Debug, PartialEq)]
pub enum FineTuneSchedule {
    Unfrozen,
    Frozen { steps: usize },
}

impl FineTuneSchedule {
    /// Picks the step with the best macro MRR (earliest on ties).
    pub fn select(dev: &[MetricReport]) -> Result<Self> {
        let best = dev
            .iter()
            .fold(None::<&MetricReport>, |best, r| match best {
                Some(b) if b.macro_avg.mrr >= r.macro_avg.mrr => Some(b),
                _ => Some(r),
            })
            .ok_or_else(|| Error::contract("no meta-dev reports to select from"))?;
        Ok(Self::Frozen { steps: best.step })
    }

    pub fn frozen_steps(&self) -> Result<usize> {
        match self {
            Self::Frozen { steps } => Ok(*steps),
            Self::Unfrozen => Err(Error::Protocol(
                "fine-tuning schedule must be selected on meta-dev before meta-test".into(),
            )),
        }
    }
}

/// Initial and Best reports on meta-test under a frozen schedule.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_meta_test(
    model: &Model<f32>,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    tasks: &[EvalTask],
    schedule: &FineTuneSchedule,
    train: &TrainConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(MetricReport, MetricReport)> {
    let steps = schedule.frozen_steps()?;
    let reports = evaluate_at_steps(model, g, kind, tasks, &[0, steps], train, cfg, seed)?;
    let initial = reports[0].clone();
    let best = reports.last().cloned().unwrap_or_else(|| initial.clone());
    Ok((initial, best))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaEvalResult {
    pub schedule: FineTuneSchedule,
    pub dev: Vec<MetricReport>,
    pub initial: MetricReport,
    pub best: MetricReport,
}

/// Selects the fine-tuning step count on meta-dev, freezes it, then reports
/// Initial and Best on meta-test.
#[allow(clippy::too_many_arguments)]
pub fn meta_evaluate(
    model: &Model<f32>,
    g: &KnowledgeGraph,
    kind: EncoderKind,
    dev: &[EvalTask],
    test: &[EvalTask],
    train: &TrainConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<MetaEvalResult> {
    let steps: Vec<usize> = (0..=cfg.finetune_steps).collect();
    let dev_reports = evaluate_at_steps(model, g, kind, dev, &steps, train, cfg, seed)?;
    let schedule = FineTuneSchedule::select(&dev_reports)?;
    let (initial, best) = evaluate_meta_test(model, g, kind, test, &schedule, train, cfg, seed ^ 1)?;
    Ok(MetaEvalResult {
        schedule,
        dev: dev_reports,
        initial,
        best,
    })
}

/// Formats a float so that equal values always print identically.
pub fn fmt_metric(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes `task,step,hits1,hits3,hits10,mrr,n` rows (per task plus a `macro` row) to `out`.
pub fn write_metrics<W: Write>(out: W, reports: &[&MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "step", "hits1", "hits3", "hits10", "mrr", "n"])?;
    for r in reports {
        let rows = r.tasks.iter().map(|(l, m)| (l.as_str(), m)).chain([("macro", &r.macro_avg)]);
        for (label, m) in rows {
            w.write_record([
                label.to_owned(),
                r.step.to_string(),
                fmt_metric(m.hits1),
                fmt_metric(m.hits3),
                fmt_metric(m.hits10),
                fmt_metric(m.mrr),
                m.n.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("metrics csv", e))?;
    Ok(())
}

pub fn write_metrics_file(path: &Path, reports: &[&MetricReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(file, reports)
}

/// Markdown table with Initial and Best column groups, one row per method.
pub fn summary_table(rows: &[(String, &MetricReport, &MetricReport)]) -> String {
    let mut s = String::new();
    s.push_str("| Method | Initial MRR | Initial Hits@1 | Initial Hits@3 | Initial Hits@10 | Best MRR | Best Hits@1 | Best Hits@3 | Best Hits@10 |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for (name, init, best) in rows {
        let (i, b) = (&init.macro_avg, &best.macro_avg);
        s.push_str(&format!(
            "| {name} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            i.mrr, i.hits1, i.hits3, i.hits10, b.mrr, b.hits1, b.hits3, b.hits10
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert!((mrr(&[Some(1), Some(2), Some(4)]).unwrap() - 0.5833333333333334).abs() < 1e-12);
        assert_eq!(mrr(&[None, None]).unwrap(), 0.0);
        assert_eq!(mrr(&[Some(1); 3]).unwrap(), 1.0);
        assert_eq!(hits_at_k(&[Some(1), Some(4), Some(2)], 3).unwrap(), 2.0 / 3.0);
        assert_eq!(hits_at_k(&[None], 10).unwrap(), 0.0);
        assert_eq!(hits_at_k(&[Some(2), Some(3)], 3).unwrap(), 1.0);
        assert!(mrr(&[]).is_err());
        assert!(hits_at_k(&[], 1).is_err());
        assert!(hits_at_k(&[Some(1)], 0).is_err());
    }

    #[test]
    fn rank_with_filter_and_ties() {
        let ranked = vec![(EntityId(3), -0.1), (EntityId(1), -0.5), (EntityId(2), -0.9)];
        assert_eq!(rank_of(&ranked, EntityId(2), &HashSet::new()), Some(3));
        let skip: HashSet<_> = [EntityId(3)].into();
        assert_eq!(rank_of(&ranked, EntityId(2), &skip), Some(2));
        assert_eq!(rank_of(&ranked, EntityId(9), &HashSet::new()), None);
    }

    #[test]
    fn log_sum_exp_combination() {
        let s = combine(&[(0.25f64).ln(), (0.25f64).ln()], ScoreMode::Sum);
        assert!((s - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(combine(&[-1.0, -2.0], ScoreMode::Max), -1.0);
    }

    #[test]
    fn schedule_selection() {
        let report = |step, mrr| MetricReport {
            step,
            tasks: vec![],
            macro_avg: TaskMetrics {
                mrr,
                ..Default::default()
            },
        };
        let dev = [report(0, 0.1), report(1, 0.3), report(2, 0.3), report(3, 0.2)];
        assert_eq!(FineTuneSchedule::select(&dev).unwrap(), FineTuneSchedule::Frozen { steps: 1 });
        assert!(matches!(
            FineTuneSchedule::Unfrozen.frozen_steps(),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn macro_average_is_unweighted() {
        let a = TaskMetrics::from_ranks(&[Some(1)]).unwrap();
        let b = TaskMetrics::from_ranks(&[None, None, None]).unwrap();
        let m = TaskMetrics::macro_average(&[a, b]).unwrap();
        assert_eq!((m.mrr, m.hits10, m.n), (0.5, 0.5, 4));
    }
}
