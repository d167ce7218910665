//! Retrieval quality metrics: average precision (full and truncated),
//! precision at a cutoff, and batch evaluation over ranked results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One query's ranking over a labeled gallery.
#[derive(Debug, Clone)]
pub struct RankedResult {
    pub query_label: usize,
    /// Permutation of gallery indices, best match first.
    pub ranking: Vec<usize>,
    pub gallery_labels: Vec<usize>,
}

/// Aggregate metrics over the evaluated queries.
///
/// The serialized document carries exactly the fixed fields below;
/// per-query APs stay in memory only.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub map_all: f64,
    pub map_at_k: f64,
    pub prec_at_k: f64,
    pub k: usize,
    pub evaluated_queries: usize,
    pub skipped_queries: usize,
    #[serde(skip)]
    pub per_query_ap: Vec<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("cannot parse metrics report: {e}")))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Average precision of a relevance-flag sequence.
///
/// `AP = (1 / min(R, K_eff)) * sum_{ranks i <= K_eff with flag} hits(i) / i`
/// where `R` is the total relevant count and `K_eff` the cutoff (or the full
/// length when `cutoff` is `None`).
pub fn average_precision(
    flags: &[bool],
    total_relevant: usize,
    cutoff: Option<usize>,
) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one relevant item".into(),
        ));
    }
    let k_eff = cutoff.unwrap_or(flags.len()).min(flags.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in flags.iter().take(k_eff).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant.min(k_eff.max(1)) as f64)
}

/// Fraction of the top `k` ranks that are relevant; the divisor is `k` even
/// when the ranking is shorter.
pub fn precision_at(flags: &[bool], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("precision cutoff must be at least 1".into()));
    }
    let hits = flags.iter().take(k).filter(|&&r| r).count();
    Ok(hits as f64 / k as f64)
}

/// Scores every query against its ranking, skipping queries with no relevant
/// gallery item. Relevance is label equality.
pub fn evaluate(results: &[RankedResult], k: usize) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Data("cannot evaluate an empty result set".into()));
    }
    if k == 0 {
        return Err(Error::Config("metric cutoff k must be at least 1".into()));
    }
    let mut per_query_ap = Vec::new();
    let mut sum_ap_all = 0.0;
    let mut sum_ap_k = 0.0;
    let mut sum_prec_k = 0.0;
    let mut skipped = 0usize;
    for (qi, r) in results.iter().enumerate() {
        let n = r.gallery_labels.len();
        if r.ranking.len() != n {
            return Err(Error::Data(format!(
                "query {qi}: ranking has {} entries for a gallery of {n}",
                r.ranking.len()
            )));
        }
        let mut seen = vec![false; n];
        for &idx in &r.ranking {
            if idx >= n || seen[idx] {
                return Err(Error::Data(format!(
                    "query {qi}: ranking is not a permutation of gallery indices"
                )));
            }
            seen[idx] = true;
        }
        let total_relevant = r
            .gallery_labels
            .iter()
            .filter(|&&l| l == r.query_label)
            .count();
        if total_relevant == 0 {
            skipped += 1;
            continue;
        }
        let flags: Vec<bool> = r
            .ranking
            .iter()
            .map(|&idx| r.gallery_labels[idx] == r.query_label)
            .collect();
        let ap_all = average_precision(&flags, total_relevant, None)?;
        sum_ap_all += ap_all;
        sum_ap_k += average_precision(&flags, total_relevant, Some(k))?;
        sum_prec_k += precision_at(&flags, k)?;
        per_query_ap.push(ap_all);
    }
    let evaluated = per_query_ap.len();
    if evaluated == 0 {
        return Err(Error::Data(format!(
            "all {} queries were skipped: no relevant gallery items",
            results.len()
        )));
    }
    let n = evaluated as f64;
    Ok(MetricsReport {
        map_all: sum_ap_all / n,
        map_at_k: sum_ap_k / n,
        prec_at_k: sum_prec_k / n,
        k,
        evaluated_queries: evaluated,
        skipped_queries: skipped,
        per_query_ap,
    })
}
