//! Tabular sweep output.

use serde::{Deserialize, Serialize};

use crate::economics::SurfacePoint;
use crate::error::{Error, Result};

pub const SWEEP_HEADER: &str = "n,rho,q1_hat,q1_ci_low,q1_ci_high,total_cost,feasible";

/// One grid point of a reserve sweep. Column order is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputRow {
    pub n: u32,
    pub rho: f64,
    pub q1_hat: f64,
    pub q1_ci_low: f64,
    pub q1_ci_high: f64,
    pub total_cost: f64,
    pub feasible: bool,
}

impl From<&SurfacePoint> for OutputRow {
    fn from(s: &SurfacePoint) -> Self {
        Self {
            n: s.n,
            rho: s.rho,
            q1_hat: s.q1.value,
            q1_ci_low: s.q1.ci.low,
            q1_ci_high: s.q1.ci.high,
            total_cost: s.costs.total,
            feasible: s.feasible,
        }
    }
}

/// Header plus one line per row. `f64` display is the shortest string that
/// parses back to the same value.
pub fn write_sweep(rows: &[OutputRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n, r.rho, r.q1_hat, r.q1_ci_low, r.q1_ci_high, r.total_cost, r.feasible
        ));
    }
    out
}

pub fn parse_sweep(text: &str) -> Result<Vec<OutputRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SWEEP_HEADER => {}
        _ => {
            return Err(Error::MalformedLog {
                line: 1,
                reason: format!("expected header `{SWEEP_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |reason: &str| Error::MalformedLog {
                line: i + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(bad("expected 7 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            Ok(OutputRow {
                n: cols[0].parse().map_err(|_| bad("bad n"))?,
                rho: num(cols[1])?,
                q1_hat: num(cols[2])?,
                q1_ci_low: num(cols[3])?,
                q1_ci_high: num(cols[4])?,
                total_cost: num(cols[5])?,
                feasible: cols[6].parse().map_err(|_| bad("bad feasible flag"))?,
            })
        })
        .collect()
}

/// Minimum-cost feasible row; the first one wins exact ties.
pub fn best_row(rows: &[OutputRow]) -> Option<&OutputRow> {
    rows.iter()
        .filter(|r| r.feasible)
        .fold(None, |best: Option<&OutputRow>, r| match best {
            Some(b) if b.total_cost <= r.total_cost => Some(b),
            _ => Some(r),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn sweep_rows_round_trip(
            rows in proptest::collection::vec(
                (0u32..50, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..1e6, any::<bool>()),
                0..20,
            )
        ) {
            let rows: Vec<OutputRow> = rows
                .into_iter()
                .map(|(n, rho, q, lo, hi, cost, feasible)| OutputRow {
                    n, rho, q1_hat: q, q1_ci_low: lo, q1_ci_high: hi, total_cost: cost, feasible,
                })
                .collect();
            let text = write_sweep(&rows);
            prop_assert_eq!(parse_sweep(&text).unwrap(), rows);
        }
    }

    #[test]
    fn header_is_required() {
        assert!(parse_sweep("n,rho\n").is_err());
        assert_eq!(parse_sweep(&format!("{SWEEP_HEADER}\n")).unwrap(), vec![]);
    }
}
