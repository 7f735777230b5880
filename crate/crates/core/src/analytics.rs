//! Ranking statistics for human evaluation: tie-adjusted ranks, pairwise
//! win rates with ties as half-wins, win rate by the baseline's rank, and
//! feedback-incorporation proportions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Proportion;

/// Default tag of the outputs refinements are compared against.
pub const INITIAL_SUMMARY_TAG: &str = "initial_summary";

/// Checks competition-style ranks: every entry equals 1 plus the number of
/// entries ranked strictly better. `(1,2,2,4,5)` is valid, `(1,2,2,3,5)` is
/// not.
pub fn check_tie_structure(raw: &[u32]) -> Result<()> {
    let mut sorted = raw.to_vec();
    sorted.sort_unstable();
    let fail = |reason: String| Error::TieStructure {
        ranks: raw.to_vec(),
        reason,
    };
    let mut i = 0;
    while i < sorted.len() {
        let r = sorted[i];
        let expected = i as u32 + 1;
        if r != expected {
            return Err(fail(format!(
                "rank {r} where {expected} was expected after {i} better entries"
            )));
        }
        let run = sorted[i..].iter().take_while(|&&x| x == r).count();
        i += run;
    }
    Ok(())
}

/// Maps every entry tied at rank r (n members) to (r + (r + n − 1)) / 2.
pub fn tie_adjust(raw: &[u32]) -> Result<Vec<f64>> {
    check_tie_structure(raw)?;
    Ok(raw
        .iter()
        .map(|&r| {
            let n = raw.iter().filter(|&&x| x == r).count() as f64;
            (r as f64 + (r as f64 + n - 1.0)) / 2.0
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub item_id: String,
    pub evaluator_id: String,
    pub raw_ranks: BTreeMap<String, u32>,
    pub adjusted_ranks: BTreeMap<String, f64>,
}

impl RankingRecord {
    pub fn new(
        item_id: impl Into<String>,
        evaluator_id: impl Into<String>,
        raw_ranks: BTreeMap<String, u32>,
    ) -> Result<Self> {
        let adjusted_ranks = adjust_map(&raw_ranks)?;
        Ok(RankingRecord {
            item_id: item_id.into(),
            evaluator_id: evaluator_id.into(),
            raw_ranks,
            adjusted_ranks,
        })
    }

    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        match adjust_map(&self.raw_ranks) {
            Err(_) => out.push("raw ranks form a valid tie ranking"),
            Ok(expected) if expected != self.adjusted_ranks => {
                out.push("adjusted_ranks is exactly tie_adjust(raw_ranks)")
            }
            Ok(_) => {}
        }
        out
    }
}

fn adjust_map(raw: &BTreeMap<String, u32>) -> Result<BTreeMap<String, f64>> {
    let values: Vec<u32> = raw.values().copied().collect();
    let adjusted = tie_adjust(&values)?;
    Ok(raw.keys().cloned().zip(adjusted).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub method_a: String,
    pub method_b: String,
    pub n_items: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub p: f64,
    pub se: f64,
    /// Records skipped because one of the two methods was not ranked.
    #[serde(default)]
    pub excluded: usize,
}

/// Win rate of `method_a` over `method_b`; a lower adjusted rank wins and
/// equal ranks count as half a win.
pub fn win_rate(records: &[RankingRecord], method_a: &str, method_b: &str) -> Result<WinRateReport> {
    let (mut wins, mut ties, mut losses, mut excluded) = (0, 0, 0, 0);
    for rec in records {
        match (rec.adjusted_ranks.get(method_a), rec.adjusted_ranks.get(method_b)) {
            (Some(a), Some(b)) => {
                if a < b {
                    wins += 1;
                } else if a == b {
                    ties += 1;
                } else {
                    losses += 1;
                }
            }
            _ => excluded += 1,
        }
    }
    let n_items = wins + ties + losses;
    if n_items == 0 {
        return Err(Error::NoRecords(format!(
            "no record ranks both `{method_a}` and `{method_b}`"
        )));
    }
    let prop = Proportion::from_count(wins as f64 + 0.5 * ties as f64, n_items);
    Ok(WinRateReport {
        method_a: method_a.to_string(),
        method_b: method_b.to_string(),
        n_items,
        wins,
        ties,
        losses,
        p: prop.p,
        se: prop.se,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBucket {
    pub baseline_rank: u32,
    pub n_records: usize,
    pub report: Option<WinRateReport>,
}

/// Groups records by the baseline's raw rank and computes the method's win
/// rate over the baseline within each group. Buckets run from rank 1 to
/// the largest rank seen; empty ones carry `n_records = 0` and no report.
pub fn win_rate_by_initial_rank(
    records: &[RankingRecord],
    method: &str,
    baseline: &str,
) -> Result<Vec<RankBucket>> {
    let mut groups: BTreeMap<u32, Vec<RankingRecord>> = BTreeMap::new();
    for rec in records {
        let rank = rec.raw_ranks.get(baseline).ok_or_else(|| Error::Unknown {
            what: "baseline in record",
            id: format!("{}/{}", rec.item_id, baseline),
        })?;
        groups.entry(*rank).or_default().push(rec.clone());
    }
    let max_rank = groups.keys().copied().max().unwrap_or(0);
    (1..=max_rank)
        .map(|rank| {
            let group = groups.get(&rank).map(Vec::as_slice).unwrap_or(&[]);
            let report = if group.is_empty() {
                None
            } else {
                match win_rate(group, method, baseline) {
                    Ok(r) => Some(r),
                    Err(Error::NoRecords(_)) => None,
                    Err(e) => return Err(e),
                }
            };
            Ok(RankBucket {
                baseline_rank: rank,
                n_records: group.len(),
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncorporationJudgment {
    pub item_id: String,
    pub method_tag: String,
    pub at_least_one: bool,
    pub more_than_one: bool,
    pub all_points: bool,
}

impl IncorporationJudgment {
    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.all_points && !self.at_least_one {
            out.push("all_points implies at_least_one");
        }
        if self.more_than_one && !self.at_least_one {
            out.push("more_than_one implies at_least_one");
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.violations().as_slice() {
            [] => Ok(()),
            v => Err(Error::invalid(format!(
                "judgment for {}/{}: {}",
                self.item_id,
                self.method_tag,
                v.join("; ")
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncorporationStats {
    pub method_tag: String,
    pub n: usize,
    pub at_least_one: Proportion,
    pub more_than_one: Proportion,
    pub all_points: Proportion,
}

pub fn incorporation_stats(judgments: &[IncorporationJudgment], method: &str) -> IncorporationStats {
    let mine: Vec<&IncorporationJudgment> =
        judgments.iter().filter(|j| j.method_tag == method).collect();
    let n = mine.len();
    let count = |f: fn(&IncorporationJudgment) -> bool| {
        Proportion::from_count(mine.iter().filter(|j| f(j)).count() as f64, n)
    };
    IncorporationStats {
        method_tag: method.to_string(),
        n,
        at_least_one: count(|j| j.at_least_one),
        more_than_one: count(|j| j.more_than_one),
        all_points: count(|j| j.all_points),
    }
}
