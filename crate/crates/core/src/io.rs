//! CSV formats for arrivals, trial results and adversary reports.
//!
//! Arrivals: header `time` or `time,feature`, one row per sample, times in
//! seconds. Results: header `trial,seed,n,policy,alpha,J,W,F,J_opt,ratio`;
//! failed trials leave the numeric cells empty.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::adversary::AdversaryReport;
use crate::cost::FeatureId;
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::sim::{RatioSummary, TrialMetrics, TrialRecord};

pub const RESULTS_HEADER: [&str; 10] = [
    "trial", "seed", "n", "policy", "alpha", "J", "W", "F", "J_opt", "ratio",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedArrivals {
    pub instance: ProblemInstance,
    /// The file listed arrivals in non-decreasing time order.
    pub was_sorted: bool,
}

pub fn load_arrivals(path: impl AsRef<Path>) -> Result<LoadedArrivals> {
    read_arrivals(File::open(path)?)
}

/// Parse an arrivals CSV. Out-of-order rows are stably sorted by time.
pub fn read_arrivals<R: Read>(reader: R) -> Result<LoadedArrivals> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let time_col = col("time").ok_or(Error::Parse {
        line: 1,
        message: "missing `time` column".into(),
    })?;
    let feature_col = col("feature");

    let mut rows: Vec<(f64, FeatureId)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse { line, message };
        let raw = rec
            .get(time_col)
            .ok_or_else(|| err("missing time".into()))?;
        let t: f64 = raw.parse().map_err(|_| err(format!("bad time `{raw}`")))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(err(format!("time {t} must be finite and non-negative")));
        }
        let feature = match feature_col
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
        {
            None => FeatureId(0),
            Some(s) => FeatureId(s.parse().map_err(|_| err(format!("bad feature `{s}`")))?),
        };
        rows.push((t, feature));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no arrivals".into(),
        });
    }
    let was_sorted = rows.windows(2).all(|w| w[0].0 <= w[1].0);
    if !was_sorted {
        log::warn!("arrivals out of order; sorting by time");
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let (times, features) = rows.into_iter().unzip();
    Ok(LoadedArrivals {
        instance: ProblemInstance::new(times, features)?,
        was_sorted,
    })
}

pub fn write_arrivals<W: Write>(writer: W, inst: &ProblemInstance) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "feature"])?;
    for (t, f) in inst.times().iter().zip(inst.features()) {
        w.write_record([t.to_string(), f.0.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_arrivals(path: impl AsRef<Path>, inst: &ProblemInstance) -> Result<()> {
    write_arrivals(File::create(path)?, inst)
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_results<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        let m = r.metrics();
        w.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            r.n.to_string(),
            r.policy.clone(),
            opt_cell(r.alpha),
            opt_cell(m.map(|m| m.j)),
            opt_cell(m.map(|m| m.w)),
            opt_cell(m.map(|m| m.f)),
            opt_cell(m.map(|m| m.j_opt)),
            opt_cell(m.map(|m| m.ratio)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_results`]. Failed trials come back with an empty
/// error message, which the file does not store.
pub fn read_results<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(RESULTS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", RESULTS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| Error::Parse {
            line,
            message: format!("bad `{}` cell `{}`", RESULTS_HEADER[i], cell(i)),
        };
        let num = |i: usize| -> Result<Option<f64>> {
            match cell(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(i)),
            }
        };
        let int = |i: usize| cell(i).parse::<u64>().map_err(|_| bad(i));
        let metrics = [num(5)?, num(6)?, num(7)?, num(8)?, num(9)?];
        let outcome = match metrics {
            [Some(j), Some(w), Some(f), Some(j_opt), Some(ratio)] => Ok(TrialMetrics {
                j,
                w,
                f,
                j_opt,
                ratio,
            }),
            [None, None, None, None, None] => Err(String::new()),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "partially empty metrics".into(),
                })
            }
        };
        out.push(TrialRecord {
            trial: int(0)?,
            seed: int(1)?,
            n: int(2)? as usize,
            policy: cell(3).to_string(),
            alpha: num(4)?,
            outcome,
        });
    }
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "rate", "n", "policy", "count", "errors", "min", "q1", "median", "q3", "max",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rate: String,
    pub n: usize,
    pub policy: String,
    pub summary: RatioSummary,
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.rate.clone(),
            r.n.to_string(),
            r.policy.clone(),
            s.count.to_string(),
            s.errors.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const ADVERSARY_HEADER: [&str; 16] = [
    "policy",
    "cost",
    "rounds",
    "epsilon",
    "n",
    "J_alg",
    "odd_cost",
    "even_cost",
    "opt_upper",
    "opt_exact",
    "ratio_vs_avg",
    "ratio_vs_exact",
    "limit_bound",
    "finite_round_bound",
    "epsilon_correction",
    "wave_split",
];

/// The report as a header plus one CSV row.
pub fn write_adversary_report<W: Write>(
    writer: W,
    policy: &str,
    cost: &str,
    rounds: usize,
    r: &AdversaryReport,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ADVERSARY_HEADER)?;
    w.write_record([
        policy.to_string(),
        cost.to_string(),
        rounds.to_string(),
        r.epsilon.to_string(),
        r.instance.len().to_string(),
        r.alg_cost.total.to_string(),
        r.odd_cost.to_string(),
        r.even_cost.to_string(),
        r.opt_upper.to_string(),
        r.opt_exact.to_string(),
        r.ratio_vs_avg.to_string(),
        r.ratio_vs_exact.to_string(),
        r.limit_bound.to_string(),
        r.finite_round_bound.to_string(),
        r.epsilon_correction.to_string(),
        r.wave_split.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
