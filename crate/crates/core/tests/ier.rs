mod common;

use std::time::Instant;

use common::{ents, ier_instance, oracle_rerank, query};
use mkgc::ier::{final_rank, rerank, rerank_trace};
use mkgc::kg::{EntityIx, Query};
use mkgc::Result;
use proptest::prelude::*;

fn replay(picks: Vec<EntityIx>) -> impl FnMut(&Query, &[EntityIx]) -> Result<EntityIx> {
    let mut it = picks.into_iter();
    move |_, _| Ok(it.next().expect("scorer called more than N_t times"))
}

fn ids(list: &[EntityIx]) -> Vec<u32> {
    list.iter().map(|e| e.0).collect()
}

#[test]
fn brute_force_oracle_on_1000_instances() {
    let start = Instant::now();
    let mut mismatches = 0;
    for seed in 0..1000 {
        let inst = ier_instance(seed, 30);
        let out = rerank(&query(), &ents(&inst.initial), &mut replay(ents(&inst.picks)), inst.n_t).unwrap();
        if ids(&out.entities) != oracle_rerank(&inst.initial, &inst.picks) {
            mismatches += 1;
        }
        assert_eq!(out.round, inst.n_t + 1);
    }
    assert_eq!(mismatches, 0);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn every_intermediate_list_matches_the_oracle() {
    for seed in 0..200 {
        let inst = ier_instance(seed, 30);
        let (_, rounds) =
            rerank_trace(&query(), &ents(&inst.initial), &mut replay(ents(&inst.picks)), inst.n_t).unwrap();
        for r in &rounds {
            assert_eq!(ids(&r.list), oracle_rerank(&inst.initial, &inst.picks[..r.t - 1]));
            assert_eq!(ids(&r.list_after()), oracle_rerank(&inst.initial, &inst.picks[..r.t]));
            assert_eq!(r.remaining.len(), inst.initial.len() - (r.t - 1));
        }
    }
}

#[test]
fn gold_outside_the_list_keeps_the_retriever_rank() {
    assert_eq!(final_rank(&ents(&[4, 5, 6]), EntityIx(5), 2), 2);
    assert_eq!(final_rank(&ents(&[4, 5, 6]), EntityIx(9), 40), 40);
    assert_eq!(final_rank(&ents(&[4, 5, 6]), EntityIx(9), 2), 4);
}

fn instance() -> impl Strategy<Value = (Vec<u32>, usize, Vec<u32>)> {
    proptest::collection::hash_set(0u32..500, 1..=30)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>())
        .prop_flat_map(|initial| {
            let m = initial.len();
            (Just(initial.clone()), 1..=m, Just(initial).prop_shuffle())
        })
        .prop_map(|(initial, n_t, order)| (initial, n_t, order[..n_t].to_vec()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn output_is_a_permutation((initial, n_t, picks) in instance()) {
        let out = rerank(&query(), &ents(&initial), &mut replay(ents(&picks)), n_t).unwrap();
        let mut a = ids(&out.entities);
        let mut b = initial.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn earlier_positions_are_never_disturbed((initial, n_t, picks) in instance()) {
        let (_, rounds) = rerank_trace(&query(), &ents(&initial), &mut replay(ents(&picks)), n_t).unwrap();
        for r in &rounds {
            let after = r.list_after();
            prop_assert_eq!(&after[..r.t - 1], &r.list[..r.t - 1]);
            prop_assert_eq!(after[r.t - 1], r.pick);
        }
    }

    #[test]
    fn perfect_scorer_puts_gold_first((initial, n_t, _picks) in instance(), g in any::<prop::sample::Index>()) {
        let gold = EntityIx(initial[g.index(initial.len())]);
        let mut oracle = |_: &Query, rem: &[EntityIx]| -> Result<EntityIx> {
            Ok(if rem.contains(&gold) { gold } else { rem[rem.len() - 1] })
        };
        let out = rerank(&query(), &ents(&initial), &mut oracle, n_t).unwrap();
        prop_assert_eq!(final_rank(&out.entities, gold, 1000), 1);
    }

    #[test]
    fn full_depth_returns_the_pick_order(perm in proptest::collection::hash_set(0u32..500, 1..=30)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>())
        .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())))
    {
        let (initial, picks) = perm;
        let out = rerank(&query(), &ents(&initial), &mut replay(ents(&picks)), initial.len()).unwrap();
        prop_assert_eq!(ids(&out.entities), picks);
    }
}
