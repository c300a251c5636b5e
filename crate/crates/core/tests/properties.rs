mod common;

use std::collections::BTreeSet;

use meta_kgr::autodiff::{Tape, Tensor};
use meta_kgr::encoder::{neighbor_task_rep, path_task_rep, PathOptions};
use meta_kgr::eval::{beam_decode, BeamConfig, ScoreMode};
use meta_kgr::kg::{EntityId, RelationId, Triple};
use meta_kgr::reasoner::{rollout, RolloutMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{exhaustive_scores, oracle_edges, oracle_paths, random_graph, small_layout};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn neighbors_match_triple_list(seed in 0u64..10_000, n in 2usize..20, r in 1usize..4, edges in 0usize..60, inverse: bool) {
        let (g, triples) = random_graph(n, r, edges, seed, inverse);
        let oracle = oracle_edges(&g, &triples);
        for e in 0..n as u32 {
            let got: BTreeSet<_> = g.neighbors(EntityId(e)).unwrap().into_iter().collect();
            prop_assert_eq!(&got, &oracle[&EntityId(e)]);
            prop_assert!(g.outgoing(EntityId(e)).unwrap().contains(&(g.stop(), EntityId(e))));
        }
    }

    #[test]
    fn enumerate_paths_matches_brute_force(seed in 0u64..10_000, n in 2usize..12, edges in 1usize..25, len in 1usize..4) {
        let (g, triples) = random_graph(n, 2, edges, seed, true);
        let s = EntityId((seed % n as u64) as u32);
        let t = EntityId(((seed / 7) % n as u64) as u32);
        let got: BTreeSet<_> = g.enumerate_paths(s, t, len, usize::MAX, None).unwrap().into_iter().collect();
        prop_assert_eq!(got, oracle_paths(&g, &triples, s, t, len));
    }

    #[test]
    fn masked_softmax_is_a_distribution(xs in prop::collection::vec(-30.0f64..30.0, 1..12), keep in prop::collection::vec(any::<bool>(), 12)) {
        let mut mask: Vec<bool> = keep[..xs.len()].to_vec();
        mask[0] = true;
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(&Tensor::vector(xs.clone()).unwrap()).unwrap();
        let p = tape.softmax_masked(v, &mask).unwrap();
        let lp = tape.log_softmax_masked(v, &mask).unwrap();
        let probs = tape.value(p).to_vec();
        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for (i, &m) in mask.iter().enumerate() {
            if m {
                prop_assert!((tape.value(lp)[i].exp() - probs[i]).abs() < 1e-12);
            } else {
                prop_assert_eq!(probs[i], 0.0);
            }
        }
    }

    #[test]
    fn rollouts_follow_graph_edges(seed in 0u64..10_000, steps in 1usize..5) {
        let (g, triples) = random_graph(12, 3, 30, seed, true);
        let (store, layout) = small_layout(&g, seed, 0.5);
        let oracle = oracle_edges(&g, &triples);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let rep = tape.constant_vec(vec![0.1; layout.dims.dim]).unwrap();
        let start = EntityId((seed % 12) as u32);
        let traj = rollout(&mut tape, &store, &layout, &g, start, EntityId(0), rep, steps, RolloutMode::Sample, None, &mut rng).unwrap();
        prop_assert_eq!(traj.relations.len(), steps);
        prop_assert_eq!(traj.entities.len(), steps + 1);
        prop_assert_eq!(traj.reward, if traj.end() == EntityId(0) { 1.0 } else { 0.0 });
        for (i, &r) in traj.relations.iter().enumerate() {
            let (from, to) = (traj.entities[i], traj.entities[i + 1]);
            if r == g.stop() {
                prop_assert_eq!(from, to);
            } else {
                prop_assert!(oracle[&from].contains(&(r, to)));
            }
        }
    }

    #[test]
    fn encoders_ignore_support_order(seed in 0u64..10_000, shift in 1usize..5) {
        let (g, triples) = random_graph(10, 2, 30, seed, true);
        let (store, layout) = small_layout(&g, seed, 0.5);
        let support: Vec<Triple> = triples.iter().take(5).copied().collect();
        let mut rotated = support.clone();
        rotated.rotate_left(shift % support.len());
        let opts = PathOptions { length: 2, max_paths: 100, mask_query_edge: true };
        let mut tape = Tape::new();
        let a = neighbor_task_rep(&mut tape, &store, &layout, &g, &support).unwrap().value;
        let b = neighbor_task_rep(&mut tape, &store, &layout, &g, &rotated).unwrap().value;
        prop_assert_eq!(tape.value(a), tape.value(b));
        let a = path_task_rep(&mut tape, &store, &layout, &g, &support, opts).unwrap().value;
        let b = path_task_rep(&mut tape, &store, &layout, &g, &rotated, opts).unwrap().value;
        prop_assert_eq!(tape.value(a), tape.value(b));
    }
}

#[test]
fn neighbor_rep_is_a_mean_over_support() {
    let (g, triples) = random_graph(10, 2, 30, 3, true);
    let (store, layout) = small_layout(&g, 3, 0.5);
    let one = &triples[..1];
    let twice = [triples[0], triples[0]];
    let mut tape = Tape::new();
    let a = neighbor_task_rep(&mut tape, &store, &layout, &g, one).unwrap().value;
    let b = neighbor_task_rep(&mut tape, &store, &layout, &g, &twice).unwrap().value;
    for (x, y) in tape.value(a).iter().zip(tape.value(b)) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn path_rep_falls_back_to_zero_without_paths() {
    let (g, _) = random_graph(6, 1, 0, 1, true);
    let (store, layout) = small_layout(&g, 1, 0.5);
    let support = [Triple::new(EntityId(0), RelationId(0), EntityId(1))];
    let opts = PathOptions { length: 2, max_paths: 10, mask_query_edge: true };
    let mut tape = Tape::new();
    let rep = path_task_rep(&mut tape, &store, &layout, &g, &support, opts).unwrap();
    assert!(tape.value(rep.value).iter().all(|&x| x == 0.0));
}

/// Beam search with a width covering every action sequence must agree with
/// scoring all sequences exhaustively.
pub fn beam_matches_exhaustive(seed: u64) -> bool {
    let n = 6 + (seed % 25) as usize;
    let (g, _) = random_graph(n, 2, n + (seed % 7) as usize, seed, true);
    let (store, layout) = small_layout(&g, seed, 0.5);
    let rep: Vec<f64> = (0..layout.dims.dim).map(|i| ((seed + i as u64) % 5) as f64 * 0.1 - 0.2).collect();
    let start = EntityId((seed % n as u64) as u32);
    let steps = 1 + (seed % 3) as usize;
    let (oracle, count) = exhaustive_scores(&store, &layout, &g, start, &rep, steps);
    let cfg = BeamConfig { width: count, path_len: steps, score_mode: ScoreMode::Max };
    let ranked = beam_decode(&store, &layout, &g, start, &rep, cfg, None).unwrap();
    let mut expected: Vec<(EntityId, f64)> = oracle.into_iter().collect();
    expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.len() == expected.len()
        && ranked.iter().zip(&expected).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-12)
}

#[test]
fn beam_exactness_on_random_graphs() {
    for seed in 0..20 {
        assert!(beam_matches_exhaustive(seed), "seed {seed}");
    }
}

#[test]
fn greedy_beam_of_width_one() {
    let (g, _) = random_graph(10, 2, 25, 11, true);
    let (store, layout) = small_layout(&g, 11, 0.5);
    let rep = vec![0.05; layout.dims.dim];
    let cfg = BeamConfig { width: 1, path_len: 3, score_mode: ScoreMode::Max };
    let ranked = beam_decode(&store, &layout, &g, EntityId(2), &rep, cfg, None).unwrap();
    let mut tape = Tape::new();
    let r = tape.constant_vec(rep.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = rollout(&mut tape, &store, &layout, &g, EntityId(2), EntityId(0), r, 3, RolloutMode::Greedy, None, &mut rng).unwrap();
    assert_eq!(ranked.len(), 1);
    assert_eq!(ranked[0].0, traj.end());
}
