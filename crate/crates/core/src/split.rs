//! Evaluation-split planning: leave-one-subject-out and k-fold by subject
//! group.
//!
//! Both planners key strictly on `subject_id`, so a subject's images can
//! never appear on both sides of a fold. All ordering derives from the
//! sorted subject list, making plans a pure function of the manifest's
//! subject set:
//!
//! - **Leave-one-subject-out**: one fold per subject, in sorted-id order;
//!   each fold tests exactly that subject and trains on all others.
//! - **K-fold**: either an explicit grouping (one test group per fold, as
//!   shipped with a dataset) or, absent one, subjects assigned round-robin
//!   by sorted id — subject `i` lands in group `i mod k`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::manifest::{distinct_subjects, FaceSample};

/// How a plan's folds were derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitProtocol {
    /// One fold per subject.
    Loso,
    /// `k` folds of subject groups.
    Kfold(usize),
}

impl core::fmt::Display for SplitProtocol {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SplitProtocol::Loso => f.write_str("loso"),
            SplitProtocol::Kfold(k) => write!(f, "kfold{k}"),
        }
    }
}

/// One train/test division. Both sides are sorted, deduplicated subject
/// sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    /// Subjects trained on.
    pub train_subjects: Vec<String>,
    /// Subjects held out for testing.
    pub test_subjects: Vec<String>,
}

impl FoldSpec {
    /// Whether `subject` is in the test set (both sides are sorted).
    pub fn tests_subject(&self, subject: &str) -> bool {
        self.test_subjects.binary_search_by(|s| s.as_str().cmp(subject)).is_ok()
    }

    /// Whether `subject` is in the train set.
    pub fn trains_subject(&self, subject: &str) -> bool {
        self.train_subjects.binary_search_by(|s| s.as_str().cmp(subject)).is_ok()
    }
}

/// A full cross-validation plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// Protocol the plan implements.
    pub protocol: SplitProtocol,
    /// Folds in canonical order.
    pub folds: Vec<FoldSpec>,
}

impl SplitPlan {
    /// Number of folds.
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }
}

/// Split-planning contract violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitError {
    /// Leave-one-subject-out needs at least two subjects.
    TooFewSubjects {
        /// Distinct subjects found.
        got: usize,
    },
    /// K-fold needs `k >= 2`.
    KTooSmall {
        /// The k requested.
        got: usize,
    },
    /// More folds than subjects would leave empty test sets.
    KExceedsSubjects {
        /// The k requested.
        k: usize,
        /// Distinct subjects found.
        subjects: usize,
    },
    /// Explicit grouping has the wrong number of groups.
    GroupCountMismatch {
        /// Folds requested.
        expected: usize,
        /// Groups supplied.
        got: usize,
    },
    /// Explicit grouping is not an exact partition of the subject set.
    GroupsNotPartition {
        /// What is missing, duplicated or unknown.
        detail: String,
    },
    /// A fold index outside the plan.
    FoldOutOfRange {
        /// Index requested.
        index: usize,
        /// Folds available.
        folds: usize,
    },
}

impl core::fmt::Display for SplitError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SplitError::TooFewSubjects { got } => {
                write!(f, "leave-one-subject-out needs at least 2 distinct subjects, found {got}")
            }
            SplitError::KTooSmall { got } => write!(f, "k-fold needs k >= 2, got {got}"),
            SplitError::KExceedsSubjects { k, subjects } => {
                write!(f, "cannot make {k} folds from {subjects} subjects")
            }
            SplitError::GroupCountMismatch { expected, got } => {
                write!(f, "expected {expected} subject groups, got {got}")
            }
            SplitError::GroupsNotPartition { detail } => {
                write!(f, "groups do not partition the subjects: {detail}")
            }
            SplitError::FoldOutOfRange { index, folds } => {
                write!(f, "fold {index} out of range (plan has {folds} folds)")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SplitError {}

/// Plan leave-one-subject-out folds over the manifest's subjects.
pub fn plan_loso(samples: &[FaceSample]) -> Result<SplitPlan, SplitError> {
    let subjects = distinct_subjects(samples);
    if subjects.len() < 2 {
        return Err(SplitError::TooFewSubjects { got: subjects.len() });
    }
    let folds = subjects
        .iter()
        .map(|held_out| FoldSpec {
            train_subjects: subjects.iter().filter(|s| *s != held_out).cloned().collect(),
            test_subjects: alloc::vec![held_out.clone()],
        })
        .collect();
    Ok(SplitPlan { protocol: SplitProtocol::Loso, folds })
}

/// Plan `k` folds of subject groups.
///
/// With `groups`, each group becomes one fold's test set (after validating
/// an exact partition). Without, subjects are grouped round-robin over the
/// sorted id list.
pub fn plan_kfold(
    samples: &[FaceSample],
    k: usize,
    groups: Option<&[Vec<String>]>,
) -> Result<SplitPlan, SplitError> {
    if k < 2 {
        return Err(SplitError::KTooSmall { got: k });
    }
    let subjects = distinct_subjects(samples);
    if k > subjects.len() {
        return Err(SplitError::KExceedsSubjects { k, subjects: subjects.len() });
    }

    let mut test_sets: Vec<Vec<String>> = match groups {
        Some(explicit) => {
            if explicit.len() != k {
                return Err(SplitError::GroupCountMismatch { expected: k, got: explicit.len() });
            }
            let mut seen: Vec<&String> = Vec::new();
            for group in explicit {
                for subject in group {
                    if subjects.binary_search(subject).is_err() {
                        return Err(SplitError::GroupsNotPartition {
                            detail: alloc::format!("`{subject}` is not in the manifest"),
                        });
                    }
                    if seen.contains(&subject) {
                        return Err(SplitError::GroupsNotPartition {
                            detail: alloc::format!("`{subject}` appears in more than one group"),
                        });
                    }
                    seen.push(subject);
                }
            }
            if seen.len() != subjects.len() {
                let missing = subjects
                    .iter()
                    .find(|s| !seen.contains(s))
                    .map(|s| s.to_string())
                    .unwrap_or_default();
                return Err(SplitError::GroupsNotPartition {
                    detail: alloc::format!("`{missing}` is in no group"),
                });
            }
            explicit
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.sort_unstable();
                    g
                })
                .collect()
        }
        None => {
            let mut sets: Vec<Vec<String>> = alloc::vec![Vec::new(); k];
            for (i, subject) in subjects.iter().enumerate() {
                sets[i % k].push(subject.clone());
            }
            sets
        }
    };

    let folds = test_sets
        .drain(..)
        .map(|test| {
            let train: Vec<String> = subjects
                .iter()
                .filter(|s| test.binary_search(s).is_err())
                .cloned()
                .collect();
            FoldSpec { train_subjects: train, test_subjects: test }
        })
        .collect();
    Ok(SplitPlan { protocol: SplitProtocol::Kfold(k), folds })
}

/// Sample indices of one fold: `(train, test)`, in manifest order.
pub fn partition_indices(samples: &[FaceSample], fold: &FoldSpec) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        if fold.tests_subject(&sample.subject_id) {
            test.push(i);
        } else if fold.trains_subject(&sample.subject_id) {
            train.push(i);
        }
    }
    (train, test)
}

/// Parse a groups file: one line per fold, subject ids separated by
/// spaces; `#` comments and blank lines ignored.
pub fn parse_groups(source: &str) -> Vec<Vec<String>> {
    source
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}
