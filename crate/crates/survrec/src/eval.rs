//! Ranking metrics: NDCG@k and its time-decayed variant NDCG-t@k.
//!
//! Plain NDCG uses binary relevance (every held-out test course counts 1).
//! NDCG-t decays relevance linearly in the normalized time-to-event:
//! completions score `1 - 0.5 t` (fast completions are best) and dropouts
//! score `0.5 t` (late dropouts beat early ones), so every completed course
//! outranks every dropout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, EventKind, InteractionMatrix};
use crate::error::{Error, Result};
use crate::rerank::RankedList;

/// Per-user relevance maps, indexed like the split's users.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceJudgments {
    per_user: Vec<BTreeMap<usize, f64>>,
}

impl RelevanceJudgments {
    pub fn user(&self, user: usize) -> &BTreeMap<usize, f64> {
        &self.per_user[user]
    }

    pub fn n_users(&self) -> usize {
        self.per_user.len()
    }

    /// Binary relevance: each judged test course counts 1.
    pub fn binary(test: &InteractionMatrix) -> RelevanceJudgments {
        let per_user = (0..test.n_users())
            .map(|u| test.user_cells(u).iter().map(|&(c, _)| (c, 1.0)).collect())
            .collect();
        RelevanceJudgments { per_user }
    }

    /// Time-decayed relevance from the test cells.
    pub fn time_decayed(test: &InteractionMatrix) -> RelevanceJudgments {
        let per_user = (0..test.n_users())
            .map(|u| {
                test.user_cells(u)
                    .iter()
                    .map(|&(c, cell)| (c, time_decayed_relevance(cell.event, cell.normalized_time)))
                    .collect()
            })
            .collect();
        RelevanceJudgments { per_user }
    }
}

/// Relevance of one outcome: completions decay from 1.0 down to 0.5,
/// dropouts grow from 0.0 up to 0.5.
pub fn time_decayed_relevance(event: EventKind, normalized_time: f64) -> f64 {
    match event {
        EventKind::Completed => 1.0 - 0.5 * normalized_time,
        EventKind::Dropout => 0.5 * normalized_time,
    }
}

/// NDCG at cutoff `k` for one user. Returns `None` when the user has no
/// positively judged item (such users are excluded from means, with a
/// warning count, rather than scored zero).
pub fn ndcg_at_k(rec: &RankedList, relevance: &BTreeMap<usize, f64>, k: usize) -> Option<f64> {
    assert!(k >= 1, "k must be >= 1");
    let discount = |position: usize| ((position + 1) as f64).log2();
    let dcg: f64 = rec
        .entries()
        .iter()
        .take(k)
        .map(|e| relevance.get(&e.course).copied().unwrap_or(0.0) / discount(e.position))
        .sum();
    let mut ideal: Vec<f64> = relevance.values().copied().filter(|&r| r > 0.0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_by(|a, b| b.partial_cmp(a).expect("finite relevance"));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| r / discount(i + 1))
        .sum();
    Some(dcg / idcg)
}

/// Mean metrics at one cutoff over all evaluated users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub ndcg: f64,
    pub ndcg_t: f64,
    /// Users contributing to the means.
    pub users: usize,
    /// Users excluded for having no rankable or no judged items.
    pub excluded: usize,
}

/// Evaluate one recommendation run against the split's test cells.
///
/// `recommendations` is indexed by user and must cover every test user;
/// lists shorter than a cutoff are scored on what they contain.
pub fn evaluate_run(
    recommendations: &[RankedList],
    split: &DatasetSplit,
    ks: &[usize],
) -> Result<Vec<MetricRow>> {
    let test = &split.test;
    let binary = RelevanceJudgments::binary(test);
    let decayed = RelevanceJudgments::time_decayed(test);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut ndcg_sum = 0.0;
        let mut ndcg_t_sum = 0.0;
        let mut users = 0usize;
        let mut excluded = 0usize;
        for u in 0..test.n_users() {
            if test.user_cells(u).is_empty() {
                continue;
            }
            let rec = recommendations
                .get(u)
                .filter(|r| r.user == u)
                .ok_or_else(|| Error::MissingUser(test.users()[u].clone()))?;
            if rec.is_empty() {
                excluded += 1;
                continue;
            }
            match (
                ndcg_at_k(rec, binary.user(u), k),
                ndcg_at_k(rec, decayed.user(u), k),
            ) {
                (Some(a), Some(b)) => {
                    ndcg_sum += a;
                    ndcg_t_sum += b;
                    users += 1;
                }
                _ => excluded += 1,
            }
        }
        if users == 0 {
            return Err(Error::Parameter("no users could be evaluated".to_string()));
        }
        rows.push(MetricRow {
            k,
            ndcg: ndcg_sum / users as f64,
            ndcg_t: ndcg_t_sum / users as f64,
            users,
            excluded,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rerank::Provenance;

    fn list(user: usize, courses: &[usize]) -> RankedList {
        RankedList::from_ordered(
            user,
            courses
                .iter()
                .map(|&c| (c, Provenance::default()))
                .collect(),
        )
    }

    fn rel(pairs: &[(usize, f64)]) -> BTreeMap<usize, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn ideal_ordering_scores_exactly_one() {
        let rec = list(0, &[0, 1, 2]);
        let judgments = rel(&[(0, 1.0), (1, 1.0), (2, 1.0)]);
        assert_eq!(ndcg_at_k(&rec, &judgments, 3), Some(1.0));
    }

    #[test]
    fn single_relevant_in_second_place() {
        // rec [A, B, C], only B relevant: DCG = 1/log2(3), IDCG = 1.
        let rec = list(0, &[10, 20, 30]);
        let judgments = rel(&[(20, 1.0)]);
        let got = ndcg_at_k(&rec, &judgments, 3).unwrap();
        let expected = 1.0 / 3.0f64.log2();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn matches_two_line_oracle_on_random_lists() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(90);
        for _ in 0..50 {
            let n = 12usize;
            let mut courses: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            courses.shuffle(&mut rng);
            let rec = list(0, &courses);
            let mut judged: BTreeMap<usize, f64> = BTreeMap::new();
            for c in 0..n {
                if rng.random_bool(0.4) {
                    judged.insert(c, rng.random_range(0.1..2.0));
                }
            }
            if judged.is_empty() {
                continue;
            }
            let k = rng.random_range(1..=n);
            // Oracle: direct DCG over the list, DCG over sorted judgments.
            let dcg: f64 = courses
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, c)| judged.get(c).copied().unwrap_or(0.0) / ((i + 2) as f64).log2())
                .sum();
            let mut sorted: Vec<f64> = judged.values().copied().collect();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let idcg: f64 = sorted
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, r)| r / ((i + 2) as f64).log2())
                .sum();
            let got = ndcg_at_k(&rec, &judged, k).unwrap();
            assert!((got - dcg / idcg).abs() < 1e-12);
        }
    }

    #[test]
    fn demoting_a_relevant_item_strictly_decreases_ndcg() {
        let judgments = rel(&[(0, 2.0), (1, 1.0)]);
        let better = list(0, &[0, 1, 2, 3]);
        let worse = list(0, &[1, 0, 2, 3]);
        let a = ndcg_at_k(&better, &judgments, 4).unwrap();
        let b = ndcg_at_k(&worse, &judgments, 4).unwrap();
        assert!(a > b);
    }

    #[test]
    fn user_without_positive_relevance_is_excluded() {
        let rec = list(0, &[0, 1]);
        assert_eq!(ndcg_at_k(&rec, &rel(&[(5, 0.0)]), 2), None);
        assert_eq!(ndcg_at_k(&rec, &rel(&[]), 2), None);
    }

    #[test]
    fn decay_formula_endpoints() {
        assert_eq!(time_decayed_relevance(EventKind::Completed, 0.0), 1.0);
        assert_eq!(time_decayed_relevance(EventKind::Completed, 1.0), 0.5);
        assert_eq!(time_decayed_relevance(EventKind::Dropout, 1.0), 0.5);
        assert_eq!(time_decayed_relevance(EventKind::Dropout, 0.0), 0.0);
    }

    #[test]
    fn completions_always_outrank_dropouts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(91);
        for _ in 0..1000 {
            let tc: f64 = rng.random();
            let td: f64 = rng.random();
            assert!(
                time_decayed_relevance(EventKind::Completed, tc)
                    >= time_decayed_relevance(EventKind::Dropout, td)
            );
        }
    }

    fn split_fixture() -> DatasetSplit {
        use crate::data::{self, EventKind, InteractionRecord};
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(92);
        let mut records = Vec::new();
        for u in 0..12 {
            let mut courses: Vec<usize> = (0..10).collect();
            courses.shuffle(&mut rng);
            for (k, &c) in courses.iter().take(7).enumerate() {
                let event = if k < 3 || rng.random_bool(0.5) {
                    EventKind::Completed
                } else {
                    EventKind::Dropout
                };
                records.push(InteractionRecord {
                    user: format!("u{u:02}"),
                    course: format!("c{c:02}"),
                    elapsed_days: rng.random_range(0.0..20.0),
                    event,
                });
            }
        }
        let m = data::normalize_times(&records).unwrap();
        data::split(&m, 17).unwrap()
    }

    #[test]
    fn perfect_recommendations_score_one() {
        let split = split_fixture();
        let test = &split.test;
        // Recommend each user exactly their test courses, best-first by
        // decayed relevance, so both metrics hit 1 at k=3.
        let recs: Vec<RankedList> = (0..test.n_users())
            .map(|u| {
                let mut cells: Vec<(usize, f64)> = test
                    .user_cells(u)
                    .iter()
                    .map(|&(c, cell)| (c, time_decayed_relevance(cell.event, cell.normalized_time)))
                    .collect();
                cells.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                list(u, &cells.iter().map(|&(c, _)| c).collect::<Vec<_>>())
            })
            .collect();
        let rows = evaluate_run(&recs, &split, &[3]).unwrap();
        assert!((rows[0].ndcg - 1.0).abs() < 1e-12);
        assert!((rows[0].ndcg_t - 1.0).abs() < 1e-12);
        assert_eq!(rows[0].excluded, 0);
    }

    #[test]
    fn mean_equals_arithmetic_mean_of_per_user_scores() {
        use rand::SeedableRng;
        use rand::seq::SliceRandom;
        let split = split_fixture();
        let test = &split.test;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(93);
        let recs: Vec<RankedList> = (0..test.n_users())
            .map(|u| {
                let mut all: Vec<usize> = (0..test.n_courses()).collect();
                all.shuffle(&mut rng);
                all.truncate(5);
                list(u, &all)
            })
            .collect();
        let rows = evaluate_run(&recs, &split, &[5]).unwrap();
        let binary = RelevanceJudgments::binary(test);
        let mut scores = Vec::new();
        for u in 0..test.n_users() {
            if let Some(s) = ndcg_at_k(&recs[u], binary.user(u), 5) {
                scores.push(s);
            }
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!((rows[0].ndcg - mean).abs() < 1e-12);
    }

    #[test]
    fn missing_user_is_reported_by_name() {
        let split = split_fixture();
        let recs: Vec<RankedList> = vec![list(0, &[0, 1, 2])];
        match evaluate_run(&recs, &split, &[3]) {
            Err(Error::MissingUser(name)) => assert_eq!(name, "u01"),
            other => panic!("expected missing user, got {other:?}"),
        }
    }

    #[test]
    fn all_completions_at_time_zero_make_both_metrics_agree() {
        use crate::data::{self, EventKind, InteractionRecord};
        // Completions at the course minimum have decayed relevance exactly
        // 1.0, so NDCG-t reduces to plain NDCG.
        let mut records = Vec::new();
        for u in 0..3 {
            for c in 0..6 {
                let days = if u == 0 { 0.0 } else { (c + 2) as f64 };
                records.push(InteractionRecord {
                    user: format!("u{u}"),
                    course: format!("c{c}"),
                    elapsed_days: days,
                    event: EventKind::Completed,
                });
            }
        }
        let m = data::normalize_times(&records).unwrap();
        let split = data::split(&m, 5).unwrap();
        let test = &split.test;
        let u0 = test.user_index("u0").unwrap();
        assert!(
            test.user_cells(u0)
                .iter()
                .all(|(_, cell)| cell.normalized_time == 0.0)
        );
        let rec = list(
            u0,
            &test
                .user_cells(u0)
                .iter()
                .map(|&(c, _)| c)
                .collect::<Vec<_>>(),
        );
        let binary = RelevanceJudgments::binary(test);
        let decayed = RelevanceJudgments::time_decayed(test);
        assert_eq!(
            ndcg_at_k(&rec, binary.user(u0), 3),
            ndcg_at_k(&rec, decayed.user(u0), 3)
        );
    }
}
