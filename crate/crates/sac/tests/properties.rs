//! Randomized invariants over the filter step, the score parser, and the
//! robustness checker.

use std::collections::BTreeMap;

use proptest::prelude::*;

use sac::graph::UndirectedGraph;
use sac::llm_adapter::parse_score;
use sac::protocol::filter_neighbors;

proptest! {
    #[test]
    fn filter_cardinality_invariants(
        scores in proptest::collection::btree_map(0usize..32, 0.0f64..=1.0, 0..12),
        self_score in 0.0f64..=1.0,
        f in 0usize..6,
    ) {
        let out = filter_neighbors(&scores, self_score, f);
        prop_assert!(out.dropped.len() <= f);
        prop_assert!(out.dropped.len() <= out.low.len());
        // dropped and retained partition the neighbor set
        prop_assert_eq!(out.dropped.len() + out.retained.len(), scores.len());
        for j in &out.dropped {
            prop_assert!(scores[j] < self_score);
        }
        // nothing retained scores below every dropped neighbor
        if let Some(worst_kept) = out
            .retained
            .iter()
            .map(|j| scores[j])
            .fold(None::<f64>, |acc, s| Some(acc.map_or(s, |a| a.min(s))))
        {
            for j in &out.dropped {
                prop_assert!(scores[j] <= worst_kept);
            }
        }
    }

    #[test]
    fn parse_score_total_and_bounded(raw in ".*") {
        let v = parse_score(&raw);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(parse_score(&format!("{}", v)), v);
    }

    #[test]
    fn robustness_is_monotone_in_r(
        edge_bits in proptest::collection::vec(any::<bool>(), 15),
    ) {
        // random graph on 6 nodes from the 15 possible edges
        let mut g = UndirectedGraph::new(6).unwrap();
        let mut idx = 0;
        for a in 0..6 {
            for b in (a + 1)..6 {
                if edge_bits[idx] {
                    g.add_edge(a, b).unwrap();
                }
                idx += 1;
            }
        }
        let levels: Vec<bool> = (1..=3)
            .map(|r| g.is_r_robust(r).unwrap())
            .collect();
        for w in levels.windows(2) {
            // r-robust implies (r-1)-robust: no false below a true
            prop_assert!(w[0] || !w[1]);
        }
        let report = g.max_robustness().unwrap();
        if report.r_max >= 1 {
            prop_assert!(g.is_r_robust(report.r_max).unwrap());
        }
        prop_assert!(!g.is_r_robust(report.r_max + 1).unwrap());
    }
}

#[test]
fn filter_accepts_empty_scores() {
    let out = filter_neighbors(&BTreeMap::new(), 0.5, 3);
    assert!(out.low.is_empty() && out.dropped.is_empty() && out.retained.is_empty());
}
