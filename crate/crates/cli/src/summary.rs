//! Category percentages per method and filter across one or more runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use seasonal_modes::spectral::Category;
use seasonal_modes::ssa::Method;
use serde::{Deserialize, Serialize};

use crate::config::Filter;
use crate::pipeline::RunReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub filter: Filter,
    /// Successful decompositions counted.
    pub n: usize,
    /// No complete fundamental pair: `none` plus `deficient`.
    pub no_harmonics_pct: f64,
    pub fundamental_pct: f64,
    pub multiple_pct: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

fn pct(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * count as f64 / n as f64
    }
}

pub fn summarize(reports: &[RunReport]) -> Summary {
    // filters sort by their display form so the table order is stable
    let mut groups: BTreeMap<(Method, String), (Filter, [usize; 4], usize)> = BTreeMap::new();
    for report in reports {
        for (_, f, m) in report.outcomes() {
            let entry = groups.entry((m.method, f.filter.to_string())).or_insert((f.filter, [0; 4], 0));
            match m.outcome.result() {
                Some(r) => {
                    let slot = Category::ALL.iter().position(|c| *c == r.category).expect("known category");
                    entry.1[slot] += 1;
                }
                None => entry.2 += 1,
            }
        }
    }
    let rows = groups
        .into_iter()
        .map(|((method, _), (filter, counts, failed))| {
            let n: usize = counts.iter().sum();
            SummaryRow {
                method,
                filter,
                n,
                no_harmonics_pct: pct(counts[0] + counts[1], n),
                fundamental_pct: pct(counts[2], n),
                multiple_pct: pct(counts[3], n),
                failed,
            }
        })
        .collect();
    Summary { rows }
}

impl Summary {
    pub fn row(&self, method: Method, filter: Filter) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.filter == filter)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\tfilter\tn\tno_H_pct\tH1_pct\tH2plus_pct\tfailed\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{}",
                r.method, r.filter, r.n, r.no_harmonics_pct, r.fundamental_pct, r.multiple_pct, r.failed
            );
        }
        s
    }
}
