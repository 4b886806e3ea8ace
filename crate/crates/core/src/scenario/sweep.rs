//! One-parameter sweeps over a scalar config key.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{key_type, ConfigError, ScenarioConfig};
use super::run::{run, RunError, RunOptions};
use crate::baths::engine_rates;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub gamma: f64,
    pub d: f64,
    pub n_o: f64,
    pub drift: f64,
    pub peak_eta: f64,
    pub beyond_carnot_duration: f64,
    /// `ok`, or the error that stopped this point.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    /// Axis value where `gamma + Gamma_M` changes sign, if bracketed.
    pub gain_threshold: Option<f64>,
}

pub const SWEEP_HEADER: &str = "value,gamma,d,n_O,drift,peak_eta,beyond_carnot_duration,status";

impl SweepRow {
    fn csv_line(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            self.value, self.gamma, self.d, self.n_o, self.drift, self.peak_eta, self.beyond_carnot_duration, self.status
        )
    }
}

impl SweepOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("axis = {}\npoints = {}\n", self.axis, self.rows.len());
        match self.gain_threshold {
            Some(v) => writeln!(s, "gain_threshold = {v:?}").unwrap(),
            None => writeln!(s, "gain_threshold = none in range").unwrap(),
        }
        s
    }

    /// Writes `sweep.csv` and `sweep_summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("sweep.csv"), &self.to_csv())?;
        write_atomic(&dir.join("sweep_summary.txt"), &self.summary())
    }
}

fn write_atomic(path: &Path, body: &str) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body)?;
    std::fs::rename(&tmp, path)
}

fn with_value(base: &ScenarioConfig, axis: &str, value: f64) -> Result<ScenarioConfig, ConfigError> {
    let mut raw = base.raw().clone();
    raw.insert(axis.to_string(), format!("{value:?}"));
    ScenarioConfig::from_raw(raw)
}

fn point(base: &ScenarioConfig, axis: &str, value: f64) -> SweepRow {
    let mut row = SweepRow {
        value,
        gamma: f64::NAN,
        d: f64::NAN,
        n_o: f64::NAN,
        drift: f64::NAN,
        peak_eta: f64::NAN,
        beyond_carnot_duration: f64::NAN,
        status: "ok".into(),
    };
    let out = with_value(base, axis, value).map_err(RunError::from).and_then(|cfg| run(&cfg, RunOptions::default()));
    match out {
        Ok(o) => {
            row.gamma = o.rates.gamma;
            row.d = o.rates.d;
            row.n_o = o.rates.n_o;
            row.drift = o.rates.drift();
            if let Some(st) = o.states.first() {
                if let Some(l) = st.oracle.as_ref().or(st.analytic.as_ref()) {
                    row.peak_eta = l.peak_efficiency().unwrap_or(f64::NAN);
                    row.beyond_carnot_duration = l.beyond_carnot_duration();
                }
            }
        }
        Err(e) => {
            row.status = e.to_string().replace([',', '\n'], ";");
            if let Ok(r) = with_value(base, axis, value).map_err(|e| e.to_string()).and_then(|c| engine_rates(&c.params).map_err(|e| e.to_string())) {
                row.gamma = r.gamma;
                row.d = r.d;
                row.n_o = r.n_o;
                row.drift = r.drift();
            }
        }
    }
    row
}

fn drift_at(base: &ScenarioConfig, axis: &str, value: f64) -> Option<f64> {
    let cfg = with_value(base, axis, value).ok()?;
    engine_rates(&cfg.params).ok().map(|r| r.drift())
}

fn bisect_threshold(base: &ScenarioConfig, axis: &str, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut flo = drift_at(base, axis, lo)?;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = drift_at(base, axis, mid)?;
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Runs `base` once per value of `axis`. Points run in parallel; when `out`
/// is given each point's row is written to `out/points/` as it completes.
pub fn sweep(base: &ScenarioConfig, axis: &str, values: &[f64], out: Option<&Path>) -> Result<SweepOutcome, RunError> {
    match key_type(axis) {
        None => return Err(ConfigError::UnknownKey(axis.into()).into()),
        Some(t) if !t.is_scalar() => {
            return Err(ConfigError::Invalid { key: axis.into(), msg: "sweep axis must be a scalar (numeric) key".into() }.into())
        }
        _ => {}
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError::Invalid { key: axis.into(), msg: "sweep needs at least one finite value".into() }.into());
    }
    let points_dir: Option<PathBuf> = out.map(|d| d.join("points"));
    if let Some(d) = &points_dir {
        std::fs::create_dir_all(d)?;
    }
    let rows: Vec<SweepRow> = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| -> io::Result<SweepRow> {
            let row = point(base, axis, v);
            if let Some(d) = &points_dir {
                write_atomic(&d.join(format!("point_{i:04}.csv")), &format!("{SWEEP_HEADER}\n{}\n", row.csv_line()))?;
            }
            Ok(row)
        })
        .collect::<io::Result<_>>()?;
    let mut rows = rows;
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    let gain_threshold = rows
        .windows(2)
        .find(|w| w[0].drift.is_finite() && w[1].drift.is_finite() && (w[0].drift < 0.0) != (w[1].drift < 0.0))
        .and_then(|w| bisect_threshold(base, axis, w[0].value, w[1].value));
    let outcome = SweepOutcome { axis: axis.into(), rows, gain_threshold };
    if let Some(d) = out {
        outcome.write(d)?;
    }
    Ok(outcome)
}
