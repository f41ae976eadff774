//! Ranked lists and the survival-risk re-ranking step.
//!
//! A collaborative-filtering model proposes each user's `l` most probable
//! enrollments; survival models order courses by predicted risk. Completion
//! risk ranks descending (high risk = fast completion, good), dropout risk
//! ranks ascending (high risk = fast dropout, bad). [`aggregate_ranks`]
//! averages a course's positions in the two lists, and [`re_rank`] imposes
//! the survival ordering on the CF candidate pool and keeps the top `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an entry's position came from. Every field is optional because a
/// list may be produced by CF alone, one survival model, or an aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cf_score: Option<f64>,
    pub dropout_rank: Option<usize>,
    pub completion_rank: Option<usize>,
    pub aggregate_rank: Option<f64>,
}

impl Provenance {
    fn merged(self, other: Provenance) -> Provenance {
        Provenance {
            cf_score: self.cf_score.or(other.cf_score),
            dropout_rank: self.dropout_rank.or(other.dropout_rank),
            completion_rank: self.completion_rank.or(other.completion_rank),
            aggregate_rank: self.aggregate_rank.or(other.aggregate_rank),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub course: usize,
    /// 1-based position in the list.
    pub position: usize,
    pub provenance: Provenance,
}

/// An ordered course list for one user. Positions are contiguous 1..len and
/// courses are unique; the constructor enforces both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    entries: Vec<RankEntry>,
}

impl RankedList {
    /// Build a list from courses in rank order, assigning positions 1..len.
    pub fn from_ordered(user: usize, ordered: Vec<(usize, Provenance)>) -> RankedList {
        let mut seen = std::collections::HashSet::new();
        let entries = ordered
            .into_iter()
            .enumerate()
            .map(|(idx, (course, provenance))| {
                assert!(
                    seen.insert(course),
                    "duplicate course {course} in ranked list"
                );
                RankEntry {
                    course,
                    position: idx + 1,
                    provenance,
                }
            })
            .collect();
        RankedList { user, entries }
    }

    pub fn entries(&self) -> &[RankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn courses(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.course)
    }

    pub fn position_of(&self, course: usize) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.course == course)
            .map(|e| e.position)
    }

    pub fn entry_of(&self, course: usize) -> Option<&RankEntry> {
        self.entries.iter().find(|e| e.course == course)
    }

    /// First `k` entries as a new list (positions re-assigned 1..k).
    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList::from_ordered(
            self.user,
            self.entries
                .iter()
                .take(k)
                .map(|e| (e.course, e.provenance))
                .collect(),
        )
    }
}

/// How risk scores translate into list order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankDirection {
    /// Lowest risk first; used for dropout models.
    AscendingRisk,
    /// Highest risk first; used for completion models.
    DescendingRisk,
}

/// Order candidate courses by predicted risk. Ties break by ascending
/// course index.
pub fn rank_by_risk(user: usize, risks: &[(usize, f64)], direction: RankDirection) -> RankedList {
    let mut order: Vec<(usize, f64)> = risks.to_vec();
    order.sort_by(|a, b| {
        let primary = match direction {
            RankDirection::AscendingRisk => a.1.partial_cmp(&b.1),
            RankDirection::DescendingRisk => b.1.partial_cmp(&a.1),
        }
        .expect("finite risks");
        primary.then(a.0.cmp(&b.0))
    });
    let provenance = |course_rank: usize| match direction {
        RankDirection::AscendingRisk => Provenance {
            dropout_rank: Some(course_rank),
            ..Default::default()
        },
        RankDirection::DescendingRisk => Provenance {
            completion_rank: Some(course_rank),
            ..Default::default()
        },
    };
    RankedList::from_ordered(
        user,
        order
            .into_iter()
            .enumerate()
            .map(|(idx, (course, _))| (course, provenance(idx + 1)))
            .collect(),
    )
}

/// Average the positions of each course in the completion and dropout lists
/// and order by that average. Ties break by dropout-list position, then by
/// course index.
pub fn aggregate_ranks(completion: &RankedList, dropout: &RankedList) -> Result<RankedList> {
    if completion.len() != dropout.len() {
        return Err(Error::CandidateSetMismatch);
    }
    let mut combined = Vec::with_capacity(completion.len());
    for entry in completion.entries() {
        let d_pos = dropout
            .position_of(entry.course)
            .ok_or(Error::CandidateSetMismatch)?;
        let aggregate = (entry.position + d_pos) as f64 / 2.0;
        combined.push((entry.course, entry.position, d_pos, aggregate));
    }
    combined.sort_by(|a, b| {
        a.3.partial_cmp(&b.3)
            .expect("finite aggregate")
            .then(a.2.cmp(&b.2))
            .then(a.0.cmp(&b.0))
    });
    Ok(RankedList::from_ordered(
        completion.user,
        combined
            .into_iter()
            .map(|(course, c_pos, d_pos, aggregate)| {
                (
                    course,
                    Provenance {
                        cf_score: None,
                        completion_rank: Some(c_pos),
                        dropout_rank: Some(d_pos),
                        aggregate_rank: Some(aggregate),
                    },
                )
            })
            .collect(),
    ))
}

/// Restrict the survival ordering to the CF candidate pool and keep the
/// first `k`. The CF list decides *which* courses are eligible; the
/// survival list decides their order.
pub fn re_rank(cf_list: &RankedList, survival_list: &RankedList, k: usize) -> Result<RankedList> {
    if k < 1 {
        return Err(Error::Parameter("re_rank requires k >= 1".to_string()));
    }
    let pool: std::collections::HashSet<usize> = cf_list.courses().collect();
    for course in pool.iter() {
        if survival_list.position_of(*course).is_none() {
            return Err(Error::CandidateSetMismatch);
        }
    }
    let ordered = survival_list
        .entries()
        .iter()
        .filter(|e| pool.contains(&e.course))
        .take(k)
        .map(|e| {
            let cf_entry = cf_list.entry_of(e.course).expect("course in pool");
            (e.course, e.provenance.merged(cf_entry.provenance))
        })
        .collect();
    Ok(RankedList::from_ordered(cf_list.user, ordered))
}
