//! Pre-specified simplification of the IE status / pattern covariates.
//!
//! Patterns are numbered by the first visit affected by the intercurrent
//! event (1..=5); pattern 6 is "no event". A pattern with no patient observed
//! through the final visit in either arm is merged into the previous pattern
//! group, and cells left without any observed outcome at a visit are folded
//! into a neighbouring level (previous first, then later, then on-treatment).

use std::fmt;

use crate::config::{Arm, N_POST, N_VISITS};
use crate::dgm::TrialDataset;
use crate::error::{Error, Result};

const NO_IE: usize = N_VISITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodingTarget {
    /// Two levels: post-IE vs on-treatment.
    Status,
    /// One level per IE pattern group.
    Pattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatternIssueReport {
    /// No patient of the pattern observed at every visit from its first
    /// affected visit to the final visit (in at least one arm).
    pub pattern_issue: [bool; N_POST],
    /// No post-IE outcome observed at the visit (in at least one arm).
    pub data_issue: [bool; N_POST],
    /// Post-IE patients exist at the visit but none of them is observed there.
    pub estimation_issue: [bool; N_POST],
}

impl PatternIssueReport {
    pub fn from_pattern_issues(p: [bool; N_POST]) -> Self {
        Self {
            pattern_issue: p,
            ..Default::default()
        }
    }
}

pub fn detect_issues(data: &TrialDataset) -> PatternIssueReport {
    let mut r = PatternIssueReport::default();
    for arm in Arm::BOTH {
        let mut has_complete = [false; N_POST];
        let mut post_obs = [false; N_POST];
        let mut post_any = [false; N_POST];
        for p in data.arm_patients(arm) {
            let Some(tau) = p.ie_visit else { continue };
            // monotone missingness: observed at the last visit means observed throughout
            if !p.is_missing(N_POST) {
                has_complete[tau - 1] = true;
            }
            for j in tau..N_VISITS {
                post_any[j - 1] = true;
                if !p.is_missing(j) {
                    post_obs[j - 1] = true;
                }
            }
        }
        for k in 0..N_POST {
            r.pattern_issue[k] |= !has_complete[k];
            r.data_issue[k] |= !post_obs[k];
            r.estimation_issue[k] |= post_any[k] && !post_obs[k];
        }
    }
    r
}

/// Pattern groups after merging, always ending with the no-IE pattern 6
/// (merged into the last group only when every pattern has an issue).
pub fn merge_pattern_groups(p: &[bool; N_POST]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    // whether the group holds at least one pattern without an issue
    let mut anchored: Vec<bool> = Vec::new();
    for k in 0..N_POST {
        let pat = k + 1;
        let issue = p[k];
        let extend_last = match anchored.last() {
            // an all-issue group absorbs the next pattern
            Some(false) => true,
            // an issue pattern joins the previous group
            Some(true) => issue,
            None => false,
        };
        if extend_last {
            groups.last_mut().unwrap().push(pat);
            let a = anchored.last_mut().unwrap();
            *a = *a || !issue;
        } else {
            groups.push(vec![pat]);
            anchored.push(!issue);
        }
    }
    if anchored.last() == Some(&false) {
        groups.last_mut().unwrap().push(NO_IE);
    } else {
        groups.push(vec![NO_IE]);
    }
    groups
}

fn group_label(groups: &[Vec<usize>]) -> String {
    groups
        .iter()
        .map(|g| g.iter().map(|p| p.to_string()).collect::<String>())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Visit-specific covariate levels for the status/pattern models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCoding {
    target: CodingTarget,
    /// Number of pattern groups selected by the merge step.
    n_patterns: usize,
    groups: Vec<Vec<usize>>,
    /// `codes[j - 1][pattern - 1]` is the level at visit `j`.
    codes: [[u8; N_VISITS]; N_POST],
}

impl PatternCoding {
    /// Coding with no merging (6 patterns / 2 statuses).
    pub fn identity(target: CodingTarget) -> Self {
        plan_collapse(&PatternIssueReport::default(), target).expect("empty report is consistent")
    }

    pub fn target(&self) -> CodingTarget {
        self.target
    }

    /// Number of levels in the fitted model (6 down to 1; the status model
    /// has 2 or 1). Levels are numbered 1..=n in IE-time order.
    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Level of patients still on treatment (the highest level).
    pub fn on_treatment_level(&self) -> u8 {
        self.n_patterns as u8
    }

    /// Level at post-baseline visit `j` of a patient with the given pattern (1..=6).
    pub fn level(&self, visit: usize, pattern: usize) -> u8 {
        self.codes[visit - 1][pattern - 1]
    }

    /// Distinct levels in use at a visit, ascending.
    pub fn levels_at(&self, visit: usize) -> Vec<u8> {
        let mut v: Vec<u8> = self.codes[visit - 1].to_vec();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Merged-pattern summary, e.g. `"1, 23, 4, 5, 6"` or `"12345, 6"`.
    pub fn label(&self) -> String {
        group_label(&self.groups)
    }

    /// Level table: one row per pattern, one column per visit.
    pub fn level_table(&self) -> [[u8; N_POST]; N_VISITS] {
        std::array::from_fn(|pat| std::array::from_fn(|j| self.codes[j][pat]))
    }

    fn remap_at_visit(&mut self, visit: usize, from: u8, to: u8) {
        for c in self.codes[visit - 1].iter_mut() {
            if *c == from {
                *c = to;
            }
        }
    }
}

impl fmt::Display for PatternCoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} pattern{})", self.label(), self.n_patterns, if self.n_patterns == 1 { "" } else { "s" })
    }
}

/// Coding from the pattern-issue indicators plus the estimation-issue rule.
pub fn plan_collapse(report: &PatternIssueReport, target: CodingTarget) -> Result<PatternCoding> {
    for k in 0..N_POST {
        if report.estimation_issue[k] && !report.data_issue[k] {
            return Err(Error::InvalidParameter(format!(
                "inconsistent issue report: estimation issue without data issue at visit {}",
                k + 1
            )));
        }
    }
    let merged = merge_pattern_groups(&report.pattern_issue);
    let groups = match target {
        CodingTarget::Pattern => merged,
        CodingTarget::Status if merged.len() == 1 => merged,
        CodingTarget::Status => vec![(1..N_VISITS).collect(), vec![NO_IE]],
    };
    let n_patterns = groups.len();
    let on_trt = n_patterns as u8;
    let mut codes = [[0u8; N_VISITS]; N_POST];
    for j in 1..N_VISITS {
        for pat in 1..=N_VISITS {
            codes[j - 1][pat - 1] = if pat > j {
                on_trt
            } else {
                (groups.iter().position(|g| g.contains(&pat)).unwrap() + 1) as u8
            };
        }
    }
    let mut coding = PatternCoding {
        target,
        n_patterns,
        groups,
        codes,
    };
    if n_patterns >= 2 {
        for j in 1..N_VISITS {
            if report.estimation_issue[j - 1] {
                for pat in 1..=j {
                    coding.codes[j - 1][pat - 1] = on_trt;
                }
            }
        }
    }
    Ok(coding)
}

/// Patients and observed outcomes per (arm, level) at one visit.
fn cell_counts(data: &TrialDataset, coding: &PatternCoding, visit: usize) -> Vec<(Arm, u8, usize, usize)> {
    let mut out: Vec<(Arm, u8, usize, usize)> = Vec::new();
    for p in &data.patients {
        let lv = coding.level(visit, p.pattern());
        let obs = usize::from(!p.is_missing(visit));
        match out.iter_mut().find(|c| c.0 == p.arm && c.1 == lv) {
            Some(c) => {
                c.2 += 1;
                c.3 += obs;
            }
            None => out.push((p.arm, lv, 1, obs)),
        }
    }
    out
}

/// Folds any (arm, level, visit) cell that has patients but no observed
/// outcome into a neighbouring level at that visit, for both arms.
pub fn repair(mut coding: PatternCoding, data: &TrialDataset) -> PatternCoding {
    let on_trt = coding.on_treatment_level();
    for j in 1..N_VISITS {
        loop {
            let counts = cell_counts(data, &coding, j);
            let bad = counts
                .iter()
                .filter(|c| c.1 != on_trt && c.2 > 0 && c.3 == 0)
                .map(|c| c.1)
                .min();
            let Some(lv) = bad else { break };
            let populated = |l: u8| {
                l != lv
                    && l != on_trt
                    && counts.iter().filter(|c| c.1 == l).all(|c| c.3 > 0)
                    && counts.iter().any(|c| c.1 == l)
            };
            let post_levels: Vec<u8> = coding
                .levels_at(j)
                .into_iter()
                .filter(|&l| l != on_trt)
                .collect();
            let target = post_levels
                .iter()
                .rev()
                .copied()
                .find(|&l| l < lv && populated(l))
                .or_else(|| post_levels.iter().copied().find(|&l| l > lv && populated(l)))
                .unwrap_or(on_trt);
            coding.remap_at_visit(j, lv, target);
        }
    }
    coding
}

/// Detect, plan and repair in one step.
pub fn collapse(data: &TrialDataset, target: CodingTarget) -> Result<PatternCoding> {
    let report = detect_issues(data);
    let coding = plan_collapse(&report, target)?;
    Ok(repair(coding, data))
}

/// Per-patient covariate levels at visits 1..=5.
pub fn recode(data: &TrialDataset, coding: &PatternCoding) -> Vec<[u8; N_POST]> {
    data.patients
        .iter()
        .map(|p| std::array::from_fn(|k| coding.level(k + 1, p.pattern())))
        .collect()
}
