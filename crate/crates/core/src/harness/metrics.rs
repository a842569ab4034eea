//! Ranking metrics per language and their unweighted average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LangMetrics {
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, LangMetrics>,
    /// Arithmetic mean over languages, each language weighted equally.
    pub avg: LangMetrics,
    pub config_digest: String,
    pub n: usize,
    pub counts: BTreeMap<String, usize>,
}

/// `ranks` are 1-based gold ranks tagged with the query language.
pub fn compute_metrics(ranks: &[(usize, String)]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(invalid!("no ranks to score"));
    }
    let mut by_lang: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (rank, lang) in ranks {
        if *rank == 0 {
            return Err(invalid!("ranks are 1-based; got 0 for {lang}"));
        }
        by_lang.entry(lang.clone()).or_default().push(*rank);
    }
    let mut metrics = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (lang, rs) in &by_lang {
        let n = rs.len() as f64;
        let hits = |k: usize| rs.iter().filter(|r| **r <= k).count() as f64 / n;
        let mrr = rs.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / n;
        metrics.insert(lang.clone(), LangMetrics { h1: hits(1), h3: hits(3), h10: hits(10), mrr });
        counts.insert(lang.clone(), rs.len());
    }
    let k = metrics.len() as f64;
    let mut avg = LangMetrics::default();
    for m in metrics.values() {
        avg.h1 += m.h1 / k;
        avg.h3 += m.h3 / k;
        avg.h10 += m.h10 / k;
        avg.mrr += m.mrr / k;
    }
    Ok(MetricsReport { metrics, avg, config_digest: String::new(), n: ranks.len(), counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn en(ranks: &[usize]) -> Vec<(usize, String)> {
        ranks.iter().map(|r| (*r, "en".to_string())).collect()
    }

    #[test]
    fn hand_cases() {
        let all_one = compute_metrics(&en(&[1, 1, 1])).unwrap();
        assert_eq!(all_one.avg, LangMetrics { h1: 1.0, h3: 1.0, h10: 1.0, mrr: 1.0 });
        let r = compute_metrics(&en(&[2, 4])).unwrap();
        assert_eq!(r.avg, LangMetrics { h1: 0.0, h3: 0.5, h10: 1.0, mrr: 0.375 });
        assert_eq!(r.n, 2);
        assert!(compute_metrics(&[]).is_err());
        assert!(compute_metrics(&en(&[0])).is_err());
    }

    #[test]
    fn average_is_unweighted_over_languages() {
        let mut ranks = en(&[1, 1, 1]);
        ranks.push((2, "fr".into()));
        let r = compute_metrics(&ranks).unwrap();
        assert_eq!(r.avg.mrr, 0.75);
        assert_eq!(r.counts["en"], 3);
    }
}
