//! Enrollment data: loading, cold-start filtering, per-course time
//! normalization, binarization, and train/validation/test splitting.
//!
//! The input schema is delimited text (comma separator, UTF-8) with header
//! `user_id,item_id,elapsed_days,event` where `event` is `c` (completed) or
//! `d` (dropout). `elapsed_days` is the number of days between a user's
//! first and last interaction with the course.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of a user-course interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Completed,
    Dropout,
}

impl EventKind {
    pub fn code(self) -> &'static str {
        match self {
            EventKind::Completed => "c",
            EventKind::Dropout => "d",
        }
    }

    pub fn from_code(code: &str) -> Option<EventKind> {
        match code {
            "c" => Some(EventKind::Completed),
            "d" => Some(EventKind::Dropout),
            _ => None,
        }
    }
}

/// One observed user-course interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user: String,
    pub course: String,
    /// Days between the user's first and last interaction with the course.
    pub elapsed_days: f64,
    pub event: EventKind,
}

/// A stored matrix cell: the raw and per-course-normalized time plus outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub raw_days: f64,
    /// Min-max normalized within the course, in [0, 1].
    pub normalized_time: f64,
    pub event: EventKind,
}

/// Raw time range of a course, kept so duration can be used as a covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CourseStats {
    pub raw_min_days: f64,
    pub raw_max_days: f64,
}

impl CourseStats {
    pub fn duration_days(&self) -> f64 {
        self.raw_max_days - self.raw_min_days
    }
}

/// Sparse user-by-course matrix of `(time, event)` tuples.
///
/// Users and courses are mapped to dense contiguous indices (lexicographic
/// order of the opaque ids), and the mapping travels with every artifact
/// derived from the matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionMatrix {
    users: Vec<String>,
    courses: Vec<String>,
    /// Per user, `(course_index, cell)` sorted by course index.
    rows: Vec<Vec<(usize, Cell)>>,
    course_stats: Vec<CourseStats>,
    n_cells: usize,
}

impl InteractionMatrix {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_courses(&self) -> usize {
        self.courses.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Fraction of the full user-by-course grid that is empty.
    pub fn sparsity(&self) -> f64 {
        let total = (self.n_users() * self.n_courses()) as f64;
        if total == 0.0 {
            return 0.0;
        }
        1.0 - self.n_cells as f64 / total
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn courses(&self) -> &[String] {
        &self.courses
    }

    pub fn user_index(&self, user: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(user)).ok()
    }

    pub fn course_index(&self, course: &str) -> Option<usize> {
        self.courses
            .binary_search_by(|c| c.as_str().cmp(course))
            .ok()
    }

    pub fn course_stats(&self, course: usize) -> CourseStats {
        self.course_stats[course]
    }

    /// Cells of one user, sorted by course index.
    pub fn user_cells(&self, user: usize) -> &[(usize, Cell)] {
        &self.rows[user]
    }

    pub fn cell(&self, user: usize, course: usize) -> Option<Cell> {
        let row = &self.rows[user];
        row.binary_search_by_key(&course, |(c, _)| *c)
            .ok()
            .map(|pos| row[pos].1)
    }

    /// All cells as `(user, course, cell)`, in row-major order.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, Cell)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(c, cell)| (u, c, cell)))
    }

    /// A sibling matrix with the same axes and course stats but a different
    /// cell set. Used by `split`.
    fn with_cells(&self, mut cells: Vec<(usize, usize, Cell)>) -> InteractionMatrix {
        cells.sort_by_key(|&(u, c, _)| (u, c));
        let mut rows: Vec<Vec<(usize, Cell)>> = vec![Vec::new(); self.users.len()];
        let n_cells = cells.len();
        for (u, c, cell) in cells {
            rows[u].push((c, cell));
        }
        InteractionMatrix {
            users: self.users.clone(),
            courses: self.courses.clone(),
            rows,
            course_stats: self.course_stats.clone(),
            n_cells,
        }
    }
}

/// Binary view of an [`InteractionMatrix`]: 1 where the user enrolled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollmentMatrix {
    users: Vec<String>,
    courses: Vec<String>,
    /// Per user, sorted enrolled course indices.
    rows: Vec<Vec<usize>>,
    /// Per course, sorted enrolled user indices.
    cols: Vec<Vec<usize>>,
    n_cells: usize,
}

impl EnrollmentMatrix {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_courses(&self) -> usize {
        self.courses.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn sparsity(&self) -> f64 {
        let total = (self.n_users() * self.n_courses()) as f64;
        if total == 0.0 {
            return 0.0;
        }
        1.0 - self.n_cells as f64 / total
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn courses(&self) -> &[String] {
        &self.courses
    }

    /// Sorted course indices the user enrolled in.
    pub fn user_row(&self, user: usize) -> &[usize] {
        &self.rows[user]
    }

    /// Sorted user indices enrolled in the course.
    pub fn course_col(&self, course: usize) -> &[usize] {
        &self.cols[course]
    }

    pub fn is_enrolled(&self, user: usize, course: usize) -> bool {
        self.rows[user].binary_search(&course).is_ok()
    }

    /// Dense 0/1 matrix, users by courses.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut e = ndarray::Array2::zeros((self.n_users(), self.n_courses()));
        for (u, row) in self.rows.iter().enumerate() {
            for &c in row {
                e[[u, c]] = 1.0;
            }
        }
        e
    }
}

/// Disjoint train/validation/test partition of a filtered dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: InteractionMatrix,
    pub validation: InteractionMatrix,
    pub test: InteractionMatrix,
}

pub const CSV_HEADER: &str = "user_id,item_id,elapsed_days,event";
pub const CSV_HEADER_NORMALIZED: &str = "user_id,item_id,elapsed_days,event,normalized_time";

/// Parse interaction records from delimited text.
///
/// Errors name the offending 1-based line (header included). Duplicate
/// `(user, course)` pairs are rejected.
pub fn load_interactions<R: Read>(source: R) -> Result<Vec<InteractionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    {
        let headers = reader.headers()?;
        let expected = ["user_id", "item_id", "elapsed_days", "event"];
        let got: Vec<&str> = headers.iter().collect();
        if got.len() < 4 || got[..4] != expected {
            return Err(Error::Load {
                line: 1,
                message: format!("expected header `{CSV_HEADER}`, got `{}`", got.join(",")),
            });
        }
    }

    let mut records = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() < 4 {
            return Err(Error::Load {
                line,
                message: format!("expected at least 4 fields, got {}", row.len()),
            });
        }
        let user = row[0].to_string();
        let course = row[1].to_string();
        let elapsed_days: f64 = row[2].parse().map_err(|_| Error::Load {
            line,
            message: format!("elapsed_days `{}` is not a number", &row[2]),
        })?;
        if !elapsed_days.is_finite() || elapsed_days < 0.0 {
            return Err(Error::Load {
                line,
                message: format!("elapsed_days `{}` must be finite and non-negative", &row[2]),
            });
        }
        let event = EventKind::from_code(&row[3]).ok_or_else(|| Error::Load {
            line,
            message: format!("unknown event code `{}` (expected `c` or `d`)", &row[3]),
        })?;
        if !seen.insert((user.clone(), course.clone())) {
            return Err(Error::Load {
                line,
                message: format!("duplicate interaction for user `{user}` and course `{course}`"),
            });
        }
        records.push(InteractionRecord {
            user,
            course,
            elapsed_days,
            event,
        });
    }
    Ok(records)
}

pub fn load_interactions_path(path: &Path) -> Result<Vec<InteractionRecord>> {
    load_interactions(std::fs::File::open(path)?)
}

/// Remove cold-start users and courses until a fixed point.
///
/// A user survives with at least `min_interactions` interactions of which at
/// least `min_completions` are completions; a course survives with at least
/// `min_interactions` interactions. Removing one side can re-expose the
/// other, so both rules are re-applied until nothing changes.
pub fn filter_cold_start(
    records: &[InteractionRecord],
    min_interactions: usize,
    min_completions: usize,
) -> Result<Vec<InteractionRecord>> {
    if min_interactions < min_completions {
        return Err(Error::Parameter(format!(
            "min_interactions ({min_interactions}) must be >= min_completions ({min_completions})"
        )));
    }
    let mut kept: Vec<&InteractionRecord> = records.iter().collect();
    loop {
        let mut user_counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut course_counts: HashMap<&str, usize> = HashMap::new();
        for r in &kept {
            let entry = user_counts.entry(r.user.as_str()).or_insert((0, 0));
            entry.0 += 1;
            if r.event == EventKind::Completed {
                entry.1 += 1;
            }
            *course_counts.entry(r.course.as_str()).or_insert(0) += 1;
        }
        let next: Vec<&InteractionRecord> = kept
            .iter()
            .copied()
            .filter(|r| {
                let (n, completed) = user_counts[r.user.as_str()];
                n >= min_interactions
                    && completed >= min_completions
                    && course_counts[r.course.as_str()] >= min_interactions
            })
            .collect();
        let stable = next.len() == kept.len();
        kept = next;
        if stable {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::DatasetEliminatedByFilter);
    }
    Ok(kept.into_iter().cloned().collect())
}

/// Build the interaction matrix, min-max normalizing times within each course.
///
/// A degenerate course (all raw times equal) maps every cell to 0.5, which
/// keeps values defined and order-neutral.
pub fn normalize_times(records: &[InteractionRecord]) -> Result<InteractionMatrix> {
    let mut users: Vec<String> = records
        .iter()
        .map(|r| r.user.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    users.sort();
    let mut courses: Vec<String> = records
        .iter()
        .map(|r| r.course.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    courses.sort();

    let user_lookup: HashMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let course_lookup: HashMap<&str, usize> = courses
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut course_stats = vec![
        CourseStats {
            raw_min_days: f64::INFINITY,
            raw_max_days: f64::NEG_INFINITY,
        };
        courses.len()
    ];
    for r in records {
        let c = course_lookup[r.course.as_str()];
        course_stats[c].raw_min_days = course_stats[c].raw_min_days.min(r.elapsed_days);
        course_stats[c].raw_max_days = course_stats[c].raw_max_days.max(r.elapsed_days);
    }

    let mut rows: Vec<Vec<(usize, Cell)>> = vec![Vec::new(); users.len()];
    for r in records {
        let u = user_lookup[r.user.as_str()];
        let c = course_lookup[r.course.as_str()];
        let stats = course_stats[c];
        let range = stats.raw_max_days - stats.raw_min_days;
        let normalized_time = if range > 0.0 {
            (r.elapsed_days - stats.raw_min_days) / range
        } else {
            0.5
        };
        rows[u].push((
            c,
            Cell {
                raw_days: r.elapsed_days,
                normalized_time,
                event: r.event,
            },
        ));
    }
    for row in &mut rows {
        row.sort_by_key(|(c, _)| *c);
    }

    Ok(InteractionMatrix {
        users,
        courses,
        rows,
        course_stats,
        n_cells: records.len(),
    })
}

/// Drop times and outcomes, keeping only the enrollment pattern.
pub fn binarize(m: &InteractionMatrix) -> EnrollmentMatrix {
    let rows: Vec<Vec<usize>> = m
        .rows
        .iter()
        .map(|r| r.iter().map(|(c, _)| *c).collect())
        .collect();
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m.courses.len()];
    for (u, row) in rows.iter().enumerate() {
        for &c in row {
            cols[c].push(u);
        }
    }
    EnrollmentMatrix {
        users: m.users.clone(),
        courses: m.courses.clone(),
        rows,
        cols,
        n_cells: m.n_cells,
    }
}

/// Partition each user's cells into 3 test (at least one completed),
/// 1 validation, and the rest train.
///
/// The guaranteed completed test cell is drawn first, then the remaining two
/// test slots are filled uniformly from whatever is left.
pub fn split(m: &InteractionMatrix, seed: u64) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();

    for (u, row) in m.rows.iter().enumerate() {
        if row.len() < 5 {
            return Err(Error::Split {
                user: m.users[u].clone(),
                reason: format!("needs at least 5 interactions, has {}", row.len()),
            });
        }
        let completed: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, (_, cell))| cell.event == EventKind::Completed)
            .map(|(pos, _)| pos)
            .collect();
        if completed.is_empty() {
            return Err(Error::Split {
                user: m.users[u].clone(),
                reason: "has no completed course for the test set".to_string(),
            });
        }
        let anchor = *completed.choose(&mut rng).expect("non-empty");
        let mut remaining: Vec<usize> = (0..row.len()).filter(|&p| p != anchor).collect();
        remaining.shuffle(&mut rng);
        let mut test_positions = [anchor, remaining[0], remaining[1]];
        test_positions.sort_unstable();
        let validation_position = remaining[2];
        for (pos, &(c, cell)) in row.iter().enumerate() {
            if test_positions.contains(&pos) {
                test.push((u, c, cell));
            } else if pos == validation_position {
                validation.push((u, c, cell));
            } else {
                train.push((u, c, cell));
            }
        }
    }

    Ok(DatasetSplit {
        train: m.with_cells(train),
        validation: m.with_cells(validation),
        test: m.with_cells(test),
    })
}

/// Write a matrix in the input schema extended with the normalized time.
pub fn write_matrix_csv<W: Write>(m: &InteractionMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "user_id",
        "item_id",
        "elapsed_days",
        "event",
        "normalized_time",
    ])?;
    for (u, c, cell) in m.iter_cells() {
        w.write_record([
            m.users[u].as_str(),
            m.courses[c].as_str(),
            &format!("{}", cell.raw_days),
            cell.event.code(),
            &format!("{}", cell.normalized_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv_path(m: &InteractionMatrix, path: &Path) -> Result<()> {
    write_matrix_csv(m, std::fs::File::create(path)?)
}

/// Read a matrix written by [`write_matrix_csv`]. The normalized-time column
/// is trusted as written, so a split round-trips exactly.
pub fn read_matrix_csv<R: Read>(source: R, axes: &InteractionMatrix) -> Result<InteractionMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let mut cells = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Load { line, message };
        let u = axes
            .user_index(&row[0])
            .ok_or_else(|| bad(format!("unknown user `{}`", &row[0])))?;
        let c = axes
            .course_index(&row[1])
            .ok_or_else(|| bad(format!("unknown course `{}`", &row[1])))?;
        let raw_days: f64 = row[2]
            .parse()
            .map_err(|_| bad(format!("bad elapsed_days `{}`", &row[2])))?;
        let event = EventKind::from_code(&row[3])
            .ok_or_else(|| bad(format!("unknown event code `{}`", &row[3])))?;
        let normalized_time: f64 = row[4]
            .parse()
            .map_err(|_| bad(format!("bad normalized_time `{}`", &row[4])))?;
        cells.push((
            u,
            c,
            Cell {
                raw_days,
                normalized_time,
                event,
            },
        ));
    }
    Ok(axes.with_cells(cells))
}
