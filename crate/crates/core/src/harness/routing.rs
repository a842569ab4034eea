//! Expert-selection frequency tables from a routing log.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::selector::RoutingRecord;

/// Selection counts keyed by `(layer, key)`, one column per expert `(group, expert)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertTable {
    pub key_name: String,
    pub n_groups: usize,
    pub n_experts: usize,
    pub rows: BTreeMap<(usize, String), Vec<usize>>,
}

impl ExpertTable {
    fn build(records: &[RoutingRecord], key_name: &str, key: impl Fn(&RoutingRecord) -> String) -> Self {
        let n_groups = records.iter().map(|r| r.group_scores.len()).max().unwrap_or(1);
        let n_experts = records.iter().map(|r| r.sk.len()).max().unwrap_or(1);
        let mut rows: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
        for r in records {
            let row = rows.entry((r.layer, key(r))).or_insert_with(|| vec![0; n_groups * n_experts]);
            row[r.group * n_experts + r.expert] += 1;
        }
        Self { key_name: key_name.to_string(), n_groups, n_experts, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("layer,{}", self.key_name);
        for g in 0..self.n_groups {
            for e in 0..self.n_experts {
                s.push_str(&format!(",g{g}e{e}"));
            }
        }
        s.push('\n');
        for ((layer, key), counts) in &self.rows {
            s.push_str(&format!("{layer},{key}"));
            for c in counts {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTables {
    pub by_language: ExpertTable,
    pub by_relation: ExpertTable,
}

pub fn export_routing_analysis(records: &[RoutingRecord]) -> Result<RoutingTables> {
    if records.is_empty() {
        return Err(invalid!("routing log is empty"));
    }
    Ok(RoutingTables {
        by_language: ExpertTable::build(records, "language", |r| r.lang.clone()),
        by_relation: ExpertTable::build(records, "relation", |r| r.relation.to_string()),
    })
}

/// Share of cross-language sample pairs, in one layer, that picked the same
/// expert: among pairs with the same relation, and among pairs with different
/// relations.
pub fn expert_agreement(records: &[RoutingRecord], layer: usize, lang_a: &str, lang_b: &str) -> (f64, f64) {
    let pick = |lang: &str| -> Vec<(u64, (usize, usize))> {
        records
            .iter()
            .filter(|r| r.layer == layer && r.lang == lang)
            .map(|r| (r.relation, (r.group, r.expert)))
            .collect()
    };
    let (a, b) = (pick(lang_a), pick(lang_b));
    let (mut same, mut same_n, mut cross, mut cross_n) = (0usize, 0usize, 0usize, 0usize);
    for (ra, ea) in &a {
        for (rb, eb) in &b {
            let agree = usize::from(ea == eb);
            if ra == rb {
                same += agree;
                same_n += 1;
            } else {
                cross += agree;
                cross_n += 1;
            }
        }
    }
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    (rate(same, same_n), rate(cross, cross_n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(sample: usize, layer: usize, lang: &str, relation: u64, group: usize, expert: usize) -> RoutingRecord {
        RoutingRecord {
            sample,
            layer,
            lang: lang.into(),
            relation,
            group,
            expert,
            group_scores: vec![1.5, 1.5],
            sk: vec![1.5, 1.5],
            sl: vec![1.5, 1.5],
        }
    }

    #[test]
    fn single_sample_one_cell_per_layer() {
        let t = export_routing_analysis(&[rec(0, 0, "en", 3, 1, 0), rec(0, 1, "en", 3, 0, 1)]).unwrap();
        for row in t.by_language.rows.values() {
            assert_eq!(row.iter().filter(|c| **c > 0).count(), 1);
        }
        assert_eq!(t.by_language.rows[&(0, "en".into())], vec![0, 0, 1, 0]);
        assert!(t.by_relation.to_csv().starts_with("layer,relation,g0e0,g0e1,g1e0,g1e1\n0,3,0,0,1,0\n"));
        assert!(export_routing_analysis(&[]).is_err());
    }

    #[test]
    fn rows_sum_to_sample_counts() {
        let recs: Vec<_> =
            (0..10).map(|i| rec(i, 0, if i < 6 { "en" } else { "fr" }, i as u64 % 3, i % 2, (i / 2) % 2)).collect();
        let t = export_routing_analysis(&recs).unwrap();
        assert_eq!(t.by_language.rows[&(0, "en".into())].iter().sum::<usize>(), 6);
        assert_eq!(t.by_language.rows[&(0, "fr".into())].iter().sum::<usize>(), 4);
        let (same, cross) = expert_agreement(&recs, 0, "en", "fr");
        assert!((0.0..=1.0).contains(&same) && (0.0..=1.0).contains(&cross));
    }
}
