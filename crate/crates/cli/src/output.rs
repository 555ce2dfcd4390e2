//! CSV and JSON result files.

use std::io::{Read, Write};
use std::path::Path;

use memiss_core::{EngineKind, PosteriorResult};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub engine: EngineKind,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
}

pub fn summary_rows(results: &[&PosteriorResult]) -> Vec<SummaryRow> {
    results
        .iter()
        .flat_map(|r| {
            r.params.iter().map(|p| SummaryRow {
                parameter: p.name.clone(),
                engine: r.engine,
                mean: p.mean,
                sd: p.sd,
                q025: p.q025,
                q975: p.q975,
                ess: p.ess,
                rhat: p.rhat,
            })
        })
        .collect()
}

fn out_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(out_err)?;
    }
    w.flush().map_err(out_err)
}

pub fn read_summary<R: Read>(reader: R) -> CliResult<Vec<SummaryRow>> {
    csv::Reader::from_reader(reader).deserialize().collect::<Result<_, _>>().map_err(out_err)
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    write_csv(std::io::BufWriter::new(file), rows)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(out_err)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub engine: EngineKind,
    pub site: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn latent_rows(results: &[&PosteriorResult]) -> Vec<LatentRow> {
    results
        .iter()
        .flat_map(|r| r.latent_x.iter().map(|l| LatentRow { engine: r.engine, site: l.site, mean: l.mean, sd: l.sd }))
        .collect()
}

/// Writes retained draws in long-by-iteration form:
/// `engine, chain, iteration, <param>...`.
pub fn write_draws<W: Write>(writer: W, result: &PosteriorResult) -> CliResult<()> {
    let Some(draws) = &result.draws else { return Ok(()) };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["engine".to_string(), "chain".into(), "iteration".into()];
    header.extend(draws.names.iter().cloned());
    w.write_record(&header).map_err(out_err)?;
    for (c, chain) in draws.chains.iter().enumerate() {
        for (t, row) in chain.iter().enumerate() {
            let mut rec = vec![result.engine.to_string(), c.to_string(), t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(out_err)?;
        }
    }
    w.flush().map_err(out_err)
}

/// Per-parameter comparison of a marginal and a Gibbs fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub parameter: String,
    pub mean_marginal: f64,
    pub mean_gibbs: f64,
    pub abs_diff: f64,
    pub mcse: Option<f64>,
    /// `|Δmean| / MCSE`.
    pub ratio: Option<f64>,
}

impl AgreementRow {
    pub fn agrees(&self, tolerance: f64) -> bool {
        self.ratio.is_some_and(|r| r <= tolerance)
    }
}

pub fn agreement(marginal: &PosteriorResult, gibbs: &PosteriorResult) -> Vec<AgreementRow> {
    marginal
        .params
        .iter()
        .filter_map(|m| {
            let g = gibbs.param(&m.name)?;
            let abs_diff = (m.mean - g.mean).abs();
            let mcse = g.mcse();
            Some(AgreementRow {
                parameter: m.name.clone(),
                mean_marginal: m.mean,
                mean_gibbs: g.mean,
                abs_diff,
                mcse,
                ratio: mcse.map(|s| abs_diff / s),
            })
        })
        .collect()
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<18} {:<9} {:>12} {:>11} {:>12} {:>12} {:>8} {:>7}\n",
        "parameter", "engine", "mean", "sd", "q025", "q975", "ess", "rhat"
    );
    for r in rows {
        s += &format!(
            "{:<18} {:<9} {:>12.5} {:>11.5} {:>12.5} {:>12.5} {:>8} {:>7}\n",
            r.parameter,
            r.engine.as_str(),
            r.mean,
            r.sd,
            r.q025,
            r.q975,
            opt(r.ess, 0),
            opt(r.rhat, 3)
        );
    }
    s
}

pub fn format_agreement(rows: &[AgreementRow]) -> String {
    let mut s = format!(
        "{:<18} {:>12} {:>12} {:>10} {:>10} {:>10}\n",
        "parameter", "marginal", "gibbs", "|diff|", "mcse", "|diff|/mcse"
    );
    for r in rows {
        s += &format!(
            "{:<18} {:>12.5} {:>12.5} {:>10.5} {:>10} {:>10}\n",
            r.parameter,
            r.mean_marginal,
            r.mean_gibbs,
            r.abs_diff,
            opt(r.mcse, 5),
            opt(r.ratio, 2)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e300..1e300f64, -1.0..1.0f64, Just(0.0), Just(f64::MIN_POSITIVE)]
    }

    fn row() -> impl Strategy<Value = SummaryRow> {
        (
            "[a-z_][a-z0-9_]{0,12}",
            any::<bool>(),
            (finite(), finite(), finite(), finite()),
            proptest::option::of(finite()),
            proptest::option::of(finite()),
        )
            .prop_map(|(parameter, g, (mean, sd, q025, q975), ess, rhat)| SummaryRow {
                parameter,
                engine: if g { EngineKind::Gibbs } else { EngineKind::Marginal },
                mean,
                sd,
                q025,
                q975,
                ess,
                rhat,
            })
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(1.0)
    }

    proptest! {
        #[test]
        fn summary_round_trips(rows in proptest::collection::vec(row(), 0..20)) {
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows).unwrap();
            let back = read_summary(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in rows.iter().zip(&back) {
                prop_assert_eq!(&a.parameter, &b.parameter);
                prop_assert_eq!(a.engine, b.engine);
                for (x, y) in [(a.mean, b.mean), (a.sd, b.sd), (a.q025, b.q025), (a.q975, b.q975)] {
                    prop_assert!(close(x, y));
                }
                prop_assert_eq!(a.ess.is_some(), b.ess.is_some());
                prop_assert_eq!(a.rhat.is_some(), b.rhat.is_some());
                if let (Some(x), Some(y)) = (a.ess, b.ess) { prop_assert!(close(x, y)); }
                if let (Some(x), Some(y)) = (a.rhat, b.rhat) { prop_assert!(close(x, y)); }
            }
        }
    }

    #[test]
    fn header_matches_schema() {
        let mut buf = Vec::new();
        let r = SummaryRow {
            parameter: "beta0".into(),
            engine: EngineKind::Marginal,
            mean: 1.0,
            sd: 0.5,
            q025: 0.0,
            q975: 2.0,
            ess: None,
            rhat: None,
        };
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "parameter,engine,mean,sd,q025,q975,ess,rhat");
        assert_eq!(text.lines().nth(1).unwrap(), "beta0,marginal,1.0,0.5,0.0,2.0,,");
    }
}
