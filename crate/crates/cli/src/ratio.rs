//! Partial-sum tables for the similarity series.
//!
//! Row m holds the m-th partial ratio (delta plus the first m-1 series
//! terms), its distance to the limit, and a bound on that distance: the
//! magnitudes of the terms still ahead of row m within the computed horizon,
//! plus the tail estimate past the horizon. Both sequences are cut at the
//! same orbit length, so the bound is a genuine triangle inequality and not
//! an estimate against a differently truncated limit.

use critlab::orbit::{ratio_sequence, similarity_factor_with};
use critlab::ratmap::RatDirection;
use critlab::{Error, Map64, Result};

use crate::mapdef::{pair, MapDefinition};
use crate::report::{Assertions, ConfigEcho, RatioRow, RatioTable, Report};

/// Parses a column direction: `sigma`, `b`, or a 1-based value index.
pub fn parse_direction(s: &str) -> Result<RatDirection> {
    match s {
        "sigma" => Ok(RatDirection::Sigma),
        "b" => Ok(RatDirection::B),
        _ => match s.strip_prefix('v').unwrap_or(s).parse::<usize>() {
            Ok(k) if k >= 1 => Ok(RatDirection::V(k)),
            _ => Err(Error::invalid(format!(
                "direction must be sigma, b, or a value index like 2 or v2, got {s:?}"
            ))),
        },
    }
}

pub fn run(
    def: &MapDefinition,
    f: &Map64,
    j: usize,
    direction: RatDirection,
    m_max: usize,
    config: ConfigEcho,
    assertions: Assertions,
) -> Result<Report> {
    let horizon = m_max.max(config.max_terms);
    let limit = similarity_factor_with(f, j, direction, config.tolerance, horizon)?;
    // One entry past the horizon so consecutive differences recover every
    // term the limit summed.
    let seq = ratio_sequence(f, j, direction, horizon + 1)?;

    // suffix[i] = sum of |term_n| for entries after index i.
    let mut suffix = vec![0.0; seq.len()];
    for i in (0..seq.len().saturating_sub(1)).rev() {
        suffix[i] = suffix[i + 1] + (seq[i + 1] - seq[i]).norm();
    }

    let rows = (0..m_max.min(seq.len()))
        .map(|i| {
            let tail = suffix[i] + limit.tail_bound;
            RatioRow {
                m: i + 1,
                ratio: pair(seq[i]),
                abs_error: (seq[i] - limit.value).norm(),
                tail_bound: tail.is_finite().then_some(tail),
            }
        })
        .collect();

    let mut report = Report::new("ratio-table", def.clone(), config, assertions);
    report.ratio_table = Some(RatioTable {
        j,
        direction: direction.to_string(),
        limit: pair(limit.value),
        limit_tail_bound: limit.tail_bound.is_finite().then_some(limit.tail_bound),
        limit_status: format!("{:?}", limit.status),
        rows,
    });
    Ok(report)
}
