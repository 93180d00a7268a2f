//! Metrics and suite-report CSV rendering.

use std::fmt::Write;

use super::experiment::ExperimentRecord;
use super::stats::{mean, ttest_95, SignificanceResult};
use crate::da::Method;
use crate::error::{Error, Result};
use crate::qg::SECONDS_PER_DAY;

pub const METRICS_HEADER: &str = "cycle_time,layer,rmse,spread";
pub const REPORT_HEADER: &str = "name,method,ensemble_size,relaxation,localization_km,upper_rmse,lower_rmse,\
upper_diff,upper_t,upper_dof,upper_significant,lower_diff,lower_t,lower_dof,lower_significant";

/// Daily verification series, as stored in a metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub times: Vec<f64>,
    pub rmse: [Vec<f64>; 2],
    pub spread: Option<[Vec<f64>; 2]>,
}

impl From<&ExperimentRecord> for Metrics {
    fn from(r: &ExperimentRecord) -> Self {
        Self {
            times: r.times.clone(),
            rmse: r.rmse.clone(),
            spread: r.spread.clone(),
        }
    }
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * self.times.len());
        s.push_str(METRICS_HEADER);
        s.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            for l in 0..2 {
                let spread = self.spread.as_ref().map(|sp| format!("{:e}", sp[l][k])).unwrap_or_default();
                writeln!(s, "{t},{},{:e},{spread}", l + 1, self.rmse[l][k]).unwrap();
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::config(format!("metrics line {line}: {what}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == METRICS_HEADER => {}
            _ => return Err(bad(1, &format!("expected header {METRICS_HEADER:?}"))),
        }
        let mut m = Metrics {
            times: Vec::new(),
            rmse: [Vec::new(), Vec::new()],
            spread: None,
        };
        let mut spread: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut has_spread = None;
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1, "expected 4 fields"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(i + 1, &format!("not a number: {s:?}")));
            let layer: usize = f[1].trim().parse().map_err(|_| bad(i + 1, "bad layer"))?;
            if !(1..=2).contains(&layer) {
                return Err(bad(i + 1, "layer must be 1 or 2"));
            }
            let t = num(f[0])?;
            if layer == 1 {
                m.times.push(t);
            } else if m.times.last() != Some(&t) || m.rmse[1].len() + 1 != m.times.len() {
                return Err(bad(i + 1, "layer 2 row does not follow its layer 1 row"));
            }
            m.rmse[layer - 1].push(num(f[2])?);
            let s = f[3].trim();
            if *has_spread.get_or_insert(!s.is_empty()) != !s.is_empty() {
                return Err(bad(i + 1, "spread present on some rows only"));
            }
            if !s.is_empty() {
                spread[layer - 1].push(num(s)?);
            }
        }
        if m.rmse[0].len() != m.rmse[1].len() {
            return Err(Error::config("metrics file ends without the final layer 2 row"));
        }
        if has_spread == Some(true) {
            m.spread = Some(spread);
        }
        Ok(m)
    }
}

/// One experiment's identity and metrics, as listed in a suite report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub method: Method,
    pub ensemble_size: usize,
    pub relaxation: f64,
    pub localization_m: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: RunSummary,
    pub mean_rmse: [f64; 2],
    /// Test against the first run; `None` for the first run itself.
    pub significance: Option<[SignificanceResult; 2]>,
}

/// Time-mean RMSE per run and two-sample tests against the first run,
/// skipping `skip_days` of DA spin-up.
pub fn report_rows(runs: &[RunSummary], skip_days: usize) -> Result<Vec<ReportRow>> {
    let tail = |m: &Metrics, l: usize| -> Vec<f64> { m.rmse[l][skip_days.min(m.times.len())..].to_vec() };
    let mut rows = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        let series = [tail(&run.metrics, 0), tail(&run.metrics, 1)];
        if series[0].is_empty() {
            return Err(Error::Statistics(format!(
                "run {:?} has no days after the {skip_days}-day spin-up",
                run.name
            )));
        }
        let significance = if k == 0 {
            None
        } else {
            let base = &runs[0].metrics;
            Some([
                ttest_95(&series[0], &tail(base, 0), 1.0)?,
                ttest_95(&series[1], &tail(base, 1), 1.0)?,
            ])
        };
        rows.push(ReportRow {
            run: run.clone(),
            mean_rmse: [mean(&series[0]), mean(&series[1])],
            significance,
        });
    }
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let run = &r.run;
        write!(
            s,
            "{},{},{},{},{},{:e},{:e}",
            run.name,
            run.method,
            run.ensemble_size,
            run.relaxation,
            run.localization_m / 1000.0,
            r.mean_rmse[0],
            r.mean_rmse[1]
        )
        .unwrap();
        for l in 0..2 {
            match &r.significance {
                Some(sig) => write!(s, ",{:e},{:.4},{:.2},{}", sig[l].mean_diff, sig[l].t, sig[l].dof, sig[l].significant),
                None => write!(s, ",,,,"),
            }
            .unwrap();
        }
        s.push('\n');
    }
    s
}

/// Day index of a verification time.
pub fn day_of(time: f64) -> usize {
    (time / SECONDS_PER_DAY).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(offset: f64, days: usize, spread: bool) -> Metrics {
        let rmse = |l: usize| -> Vec<f64> {
            (0..days)
                .map(|d| offset + [1e-5, 2e-7][l] * (1.0 + 0.3 * ((d * 7919) % 101) as f64 / 101.0))
                .collect()
        };
        Metrics {
            times: (0..days).map(|d| d as f64 * SECONDS_PER_DAY).collect(),
            rmse: [rmse(0), rmse(1)],
            spread: spread.then(|| [rmse(0), rmse(1)]),
        }
    }

    #[test]
    fn metrics_round_trip() {
        for spread in [false, true] {
            let m = metrics(0.0, 30, spread);
            let csv = m.to_csv();
            assert!(csv.starts_with("cycle_time,layer,rmse,spread\n0,1,"));
            assert_eq!(Metrics::from_csv(&csv).unwrap(), m);
        }
        assert!(Metrics::from_csv("time,x\n").is_err());
        assert!(Metrics::from_csv("cycle_time,layer,rmse,spread\n0,1,1e-5,\n").is_err());
        assert!(Metrics::from_csv("cycle_time,layer,rmse,spread\n0,3,1e-5,\n0,2,1,\n").is_err());
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(report_csv(&report_rows(&[], 60).unwrap()), format!("{REPORT_HEADER}\n"));
    }

    #[test]
    fn report_flags_large_differences() {
        let run = |name: &str, offset: f64| RunSummary {
            name: name.into(),
            method: Method::EnKF,
            ensemble_size: 20,
            relaxation: 0.55,
            localization_m: 1e5,
            metrics: metrics(offset, 200, true),
        };
        let rows = report_rows(&[run("base", 0.0), run("same", 0.0), run("worse", 1e-3)], 60).unwrap();
        assert!(rows[0].significance.is_none());
        assert!(!rows[1].significance.unwrap()[0].significant);
        assert!(rows[2].significance.unwrap().iter().all(|s| s.significant));
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("base,enkf,20,0.55,100,"));
        assert!(csv.lines().nth(3).unwrap().ends_with(",true"));
        assert!(report_rows(&[run("short", 0.0)], 500).is_err());
    }
}
