mod common;

use meta_kgr::autodiff::{Optimizer, OptimizerKind, ParamStore, Tensor};
use meta_kgr::kg::RelationId;
use meta_kgr::meta::{
    adapt, meta_gradients, meta_step, sample_task_batch, split_support_query, EncoderKind, RlEpisode, RlObjective, TaskRole,
    TrainConfig,
};
use meta_kgr::model::{Model, ModelDims};
use meta_kgr::synthetic::{gen_synthetic, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{lsq_family, lsq_grad, lsq_reference, rel_err, LeastSquares};

fn lsq_store(dim: usize) -> (ParamStore<f64>, LeastSquares) {
    let mut store = ParamStore::new(0);
    let w0: Vec<f64> = (0..dim).map(|i| 0.3 - 0.1 * i as f64).collect();
    let w = store.insert("w", Tensor::vector(w0).unwrap()).unwrap();
    (store, LeastSquares { w })
}

#[test]
fn task_batches_are_uniform_within_three_sigma() {
    let (tasks, batch, draws) = (12usize, 5usize, 6000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = vec![0usize; tasks];
    for _ in 0..draws {
        let picked = sample_task_batch(tasks, batch, &mut rng).unwrap();
        let mut uniq = picked.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), batch);
        for i in picked {
            counts[i] += 1;
        }
    }
    let p = batch as f64 / tasks as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() < 3.0 * sigma, "task {i}: {c} draws, expected {mean:.0} +- {:.0}", 3.0 * sigma);
    }
}

#[test]
fn first_order_update_matches_closed_form() {
    for k in [0usize, 1, 3] {
        let (mut store, obj) = lsq_store(4);
        let episodes = lsq_family(k as u64 + 1, 5, 4, 8);
        let w0 = store.value(obj.w).to_f64_vec();
        let expected = lsq_reference(&w0, &episodes, k, 0.05, 0.01);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &store);
        let stats = meta_step(&obj, &mut store, &episodes, k, 0.05, 0.01, &mut opt).unwrap();
        assert_eq!(stats.adaptation_updates, k * episodes.len());
        let got = store.value(obj.w).to_f64_vec();
        let err = rel_err(&got, &expected);
        assert!(err < 1e-10, "k={k}: rel-err {err:e}");
    }
}

#[test]
fn zero_adaptation_steps_is_plain_training() {
    let (store, obj) = lsq_store(3);
    let episodes = lsq_family(9, 4, 3, 6);
    let adapted = adapt(&obj, &store, &episodes[0], 0, 0.1).unwrap();
    assert!(adapted.bitwise_eq(&store));
    let (grads, _) = meta_gradients(&obj, &store, &episodes, 0, 0.1).unwrap();
    let w = store.value(obj.w).to_f64_vec();
    let mut plain = vec![0.0; 3];
    for ep in &episodes {
        for (p, g) in plain.iter_mut().zip(lsq_grad(&ep.query.0, &ep.query.1, &w)) {
            *p += g;
        }
    }
    assert!(rel_err(&grads.grad(obj.w).to_vec(), &plain) < 1e-12);
}

#[test]
fn adaptation_leaves_the_meta_parameters_alone() {
    let (store, obj) = lsq_store(3);
    let before = store.clone();
    let episodes = lsq_family(2, 3, 3, 6);
    let adapted = adapt(&obj, &store, &episodes[0], 2, 0.1).unwrap();
    assert!(store.bitwise_eq(&before));
    assert!(!adapted.bitwise_eq(&store));
}

fn rl_fixture() -> (meta_kgr::synthetic::SyntheticKg, Model<f64>) {
    let spec = SyntheticSpec {
        edges_per_relation: 60,
        eval_queries: 3,
        ..Default::default()
    };
    let kg = gen_synthetic(&spec).unwrap();
    let dims = ModelDims::for_graph(&kg.dataset.graph, 6, 6, 8);
    let model = Model::<f64>::with_embedding_std(dims, 3, 0.3).unwrap();
    (kg, model)
}

fn episodes_for(kg: &meta_kgr::synthetic::SyntheticKg, relations: &[RelationId]) -> Vec<RlEpisode> {
    let tasks = kg.dataset.tasks_with(TaskRole::MetaTrain);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    tasks
        .iter()
        .take(relations.len())
        .zip(relations)
        .map(|(t, &r)| {
            let sq = split_support_query(&t.train, 3, 3, &mut rng).unwrap();
            RlEpisode {
                relation: r,
                fresh: false,
                support: sq.support,
                query: sq.query,
                seed: 11,
            }
        })
        .collect()
}

#[test]
fn masked_meta_gradients_ignore_task_identity() {
    let (kg, model) = rl_fixture();
    let ids: Vec<RelationId> = kg.dataset.tasks_with(TaskRole::MetaTrain).iter().take(4).map(|t| t.relation).collect();
    let mut permuted = ids.clone();
    permuted.rotate_left(1);
    let cfg = TrainConfig {
        rollouts: 3,
        path_len: 2,
        ..Default::default()
    };
    let grads = |kind: EncoderKind, rels: &[RelationId]| {
        let obj = RlObjective {
            graph: &kg.dataset.graph,
            layout: &model.layout,
            settings: cfg.rl_settings(kind, 0.1, 0),
        };
        meta_gradients(&obj, &model.store, &episodes_for(&kg, rels), 1, 0.01).unwrap().0
    };
    let a = grads(EncoderKind::Zero, &ids);
    let b = grads(EncoderKind::Zero, &permuted);
    for id in a.ids() {
        assert_eq!(a.grad(id), b.grad(id), "{}", a.name(id));
    }
    let a = grads(EncoderKind::Identity, &ids);
    let b = grads(EncoderKind::Identity, &permuted);
    assert!(a.ids().any(|id| a.grad(id) != b.grad(id)));
}

#[test]
fn meta_gradients_do_not_depend_on_thread_count() {
    let (kg, model) = rl_fixture();
    let ids: Vec<RelationId> = kg.dataset.tasks_with(TaskRole::MetaTrain).iter().take(5).map(|t| t.relation).collect();
    let cfg = TrainConfig {
        rollouts: 3,
        path_len: 2,
        ..Default::default()
    };
    let obj = RlObjective {
        graph: &kg.dataset.graph,
        layout: &model.layout,
        settings: cfg.rl_settings(EncoderKind::Neighbor, 0.1, 0),
    };
    let eps = episodes_for(&kg, &ids);
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let a = pool(1).install(|| meta_gradients(&obj, &model.store, &eps, 1, 0.01).unwrap().0);
    let b = pool(3).install(|| meta_gradients(&obj, &model.store, &eps, 1, 0.01).unwrap().0);
    for id in a.ids() {
        assert_eq!(a.grad(id), b.grad(id));
    }
}
