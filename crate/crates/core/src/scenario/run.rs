//! Oracle, analytic and compare pipelines for one scenario.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::config::{ConfigError, LabelledState, Pipeline, ScenarioConfig, TimeEnd};
use crate::baths::{engine_rates, optical_steady_state, BathError, EngineRates, RegimeReport};
use crate::hilbert::{self, FockState, HilbertError, StateKind, StateSpec};
use crate::lindblad::{build_generators, fit_drift_diffusion, DriftDiffusionFit, EvolveOptions, JointState, LindbladError};
use crate::phasespace::{energy_trajectory, sample_ou, OUFlow, PhaseEnsemble, PhaseSpaceError};
use crate::thermo::{build_ledger, spohn_check, SpohnCheck, StencilGrid, ThermoError, TrajectorySource, WorkLedger};

/// Leak budget used to size the mechanical truncation.
pub const DIM_BUDGET: f64 = 1e-8;
/// Leak budget for the initial mechanical state.
pub const INITIAL_BUDGET: f64 = 1e-12;
/// Optical levels are added until `r^(dim-1)` drops below this.
pub const OPTICAL_TAIL: f64 = 1e-9;
/// Regime margins below this are reported.
pub const REGIME_MARGIN: f64 = 10.0;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("regime check failed (strict): {0}")]
    Regime(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Regime(_) => 4,
            RunError::Io(_) => 1,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical_from!(BathError, HilbertError, LindbladError, PhaseSpaceError, ThermoError);

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub strict: bool,
}

/// Largest deviation of one observable between the oracle and its analytic
/// counterpart: `|oracle - analytic| / max(|analytic|, 1e-12)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub observable: &'static str,
    pub max_rel: f64,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub e_oracle: f64,
    pub e_law: f64,
    pub w_oracle: f64,
    pub w_analytic: f64,
    pub s_oracle: f64,
    pub s_analytic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub deviations: Vec<Deviation>,
}

pub const COMPARE_HEADER: &str = "t,E_M_oracle,E_M_law,W_max_oracle,W_max_analytic,S_M_oracle,S_M_analytic";

pub fn relative_deviation(observed: f64, reference: f64) -> f64 {
    (observed - reference).abs() / reference.abs().max(1e-12)
}

impl Comparison {
    pub fn deviation(&self, observable: &str) -> Option<&Deviation> {
        self.deviations.iter().find(|d| d.observable == observable)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARE_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t, r.e_oracle, r.e_law, r.w_oracle, r.w_analytic, r.s_oracle, r.s_analytic
            )
            .unwrap();
        }
        s
    }
}

fn max_deviation(observable: &'static str, pairs: impl Iterator<Item = (f64, f64, f64)>) -> Deviation {
    let mut d = Deviation { observable, max_rel: 0.0, at: 0.0 };
    for (t, o, a) in pairs {
        let r = relative_deviation(o, a);
        if r > d.max_rel || r.is_nan() {
            d = Deviation { observable, max_rel: r, at: t };
        }
    }
    d
}

/// Oracle ledger against the energy law started from `n0`, and against the
/// analytic ledger when there is one.
pub fn compare(oracle: &WorkLedger, analytic: Option<&WorkLedger>, n0: f64, flow: &OUFlow, omega: f64) -> Comparison {
    let rows: Vec<CompareRow> = oracle
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = analytic.map(|l| &l.rows[i]);
            CompareRow {
                t: r.t,
                e_oracle: r.e_m,
                e_law: energy_trajectory(n0, flow, r.t, omega),
                w_oracle: r.w_max,
                w_analytic: a.map_or(f64::NAN, |a| a.w_max),
                s_oracle: r.s_m,
                s_analytic: a.map_or(f64::NAN, |a| a.s_m),
            }
        })
        .collect();
    let mut deviations = vec![max_deviation("E_M", rows.iter().map(|r| (r.t, r.e_oracle, r.e_law)))];
    if analytic.is_some() {
        deviations.push(max_deviation("W_max", rows.iter().map(|r| (r.t, r.w_oracle, r.w_analytic))));
        deviations.push(max_deviation("S_M", rows.iter().map(|r| (r.t, r.s_oracle, r.s_analytic))));
    }
    Comparison { rows, deviations }
}

/// `(|beta|^2, thermal width)` bounding the P-function support of a state.
fn spread(kind: &StateKind) -> (f64, f64) {
    match kind {
        StateKind::Coherent(b) => (b.norm_sqr(), 0.0),
        StateKind::Thermal(n) => (0.0, *n),
        StateKind::PhaseAveragedCoherent(r) => (r * r, 0.0),
        StateKind::Fock(n) => (0.0, *n as f64),
        StateKind::Mixture(parts) => parts.iter().map(|(_, k)| spread(k)).fold((0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1))),
    }
}

/// Mechanical truncation that holds the state's evolved P-function support
/// over `[0, t_end]`.
pub fn auto_dim_m(spec: &StateSpec, flow: &OUFlow, t_end: f64) -> Result<usize, HilbertError> {
    let (r2, s2) = spread(&spec.kind);
    let r2max = r2.max(r2 * flow.amplitude_factor(t_end).powi(2));
    let s2max = s2.max(flow.width(s2, t_end));
    let d = (hilbert::displaced_thermal_dim(r2max, s2max, DIM_BUDGET) as f64 * 1.2).ceil() as usize + 10;
    Ok(d.max(spec.required_dim(INITIAL_BUDGET)?))
}

/// Optical truncation for a geometric distribution with ratio `r`.
pub fn auto_dim_o(ratio: f64) -> usize {
    let r = ratio.max(1e-3);
    let mut d = 3;
    while r.powi(d as i32 - 1) >= OPTICAL_TAIL {
        d += 1;
    }
    d
}

pub fn time_end(cfg: &ScenarioConfig, rates: &EngineRates) -> Result<f64, RunError> {
    match cfg.t_end {
        TimeEnd::Fixed(t) => Ok(t),
        TimeEnd::DriftWindows(w) => {
            let a = rates.drift();
            if a == 0.0 {
                return Err(RunError::Config(ConfigError::Invalid {
                    key: "grid.t_end".into(),
                    msg: "auto needs a nonzero drift rate gamma + Gamma_M".into(),
                }));
            }
            Ok(w / a.abs())
        }
    }
}

pub fn stencil(cfg: &ScenarioConfig, rates: &EngineRates, t_end: f64) -> Result<StencilGrid, RunError> {
    let a = rates.drift().abs();
    let max_delta = if a > 0.0 { 0.05 / a } else { f64::INFINITY };
    Ok(StencilGrid::uniform(0.0, t_end, cfg.samples, max_delta)?)
}

#[derive(Debug, Clone)]
pub struct StateRun {
    pub label: String,
    pub spec: StateSpec,
    pub n0: f64,
    pub dim_o: usize,
    pub dim_m: usize,
    pub oracle: Option<WorkLedger>,
    pub analytic: Option<WorkLedger>,
    pub comparison: Option<Comparison>,
    pub fit: Option<DriftDiffusionFit>,
    /// Monte Carlo estimate of `<n_M>(t_end)` with its standard error.
    pub monte_carlo: Option<(f64, f64)>,
    pub notes: Vec<String>,
}

impl StateRun {
    pub fn spohn(&self) -> Vec<(&'static str, SpohnCheck)> {
        let mut v = Vec::new();
        if let Some(l) = &self.oracle {
            v.push(("oracle", spohn_check(l)));
        }
        if let Some(l) = &self.analytic {
            v.push(("analytic", spohn_check(l)));
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub pipeline: Pipeline,
    pub rates: EngineRates,
    pub regime: RegimeReport,
    pub t_end: f64,
    pub warnings: Vec<String>,
    pub states: Vec<StateRun>,
}

/// Rates, window and the Eq. 3 style regime check, without running anything.
pub struct Prepared {
    pub rates: EngineRates,
    pub t_end: f64,
    pub grid: StencilGrid,
    pub regime: RegimeReport,
    pub n_max: f64,
}

pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared, RunError> {
    let rates = engine_rates(&cfg.params)?;
    let t_end = time_end(cfg, &rates)?;
    let grid = stencil(cfg, &rates, t_end)?;
    let flow = OUFlow::from_rates(&rates);
    let n_max = cfg
        .states
        .iter()
        .map(|s| {
            let n0 = spec_mean_number(&s.spec);
            grid.samples().iter().map(|&t| flow.width(n0, t)).fold(n0, f64::max)
        })
        .fold(0.0, f64::max);
    let regime = rates.regime(n_max, t_end);
    Ok(Prepared { rates, t_end, grid, regime, n_max })
}

fn spec_mean_number(spec: &StateSpec) -> f64 {
    fn n(k: &StateKind) -> f64 {
        match k {
            StateKind::Coherent(b) => b.norm_sqr(),
            StateKind::Thermal(n) => *n,
            StateKind::PhaseAveragedCoherent(r) => r * r,
            StateKind::Fock(m) => *m as f64,
            StateKind::Mixture(p) => {
                let w: f64 = p.iter().map(|(w, _)| w).sum();
                p.iter().map(|(x, k)| x * n(k)).sum::<f64>() / w
            }
        }
    }
    n(&spec.kind)
}

fn run_state(cfg: &ScenarioConfig, prep: &Prepared, state: &LabelledState) -> Result<StateRun, RunError> {
    let p = &cfg.params;
    let flow = OUFlow::from_rates(&prep.rates);
    let steady = optical_steady_state(p)?;
    let dim_o = cfg.dim_o.unwrap_or_else(|| auto_dim_o(steady.ratio));
    let mut notes = Vec::new();
    let mut n0 = spec_mean_number(&state.spec);
    let mut dim_m = 0;

    let oracle = if cfg.pipeline != Pipeline::Analytic {
        dim_m = match cfg.dim_m {
            Some(d) => d,
            None => auto_dim_m(&state.spec, &flow, prep.t_end)?,
        };
        let rho_m = hilbert::make_state_with_budget(&state.spec, dim_m, INITIAL_BUDGET)?;
        n0 = rho_m.mean_number();
        let pops = steady.populations(dim_o);
        let tot: f64 = pops.iter().sum();
        let rho_o = FockState::from_populations(&pops.iter().map(|v| v / tot).collect::<Vec<_>>(), p.omega_o)?;
        let initial = JointState::from_product(&rho_o, &rho_m);
        let gens = build_generators(p, dim_o, dim_m)?;
        let options = EvolveOptions { tol: cfg.tol, leak_limit: cfg.leak_limit, ..EvolveOptions::default() };
        log::info!("{}: oracle on {dim_o}x{dim_m} levels to t = {}", state.label, prep.t_end);
        let l = build_ledger(TrajectorySource::Oracle { initial: &initial, gens: &gens, options, dressing: cfg.dressing }, p, &prep.grid)?;
        Some(l)
    } else {
        None
    };

    let mut monte_carlo = None;
    let analytic = if cfg.pipeline != Pipeline::Oracle {
        match PhaseEnsemble::from_spec(&state.spec) {
            Ok(e) => {
                if let (PhaseEnsemble::Gaussian(g), true) = (&e, cfg.mc_trajectories > 0) {
                    let m = sample_ou(g, &flow, prep.t_end, cfg.samples, cfg.mc_trajectories, cfg.seed);
                    let n = m.mean.norm_sqr() + m.sigma2;
                    monte_carlo = Some((n, m.sigma2_stderr));
                }
                let rates = if cfg.negate_gamma { prep.rates.with_negated_gamma() } else { prep.rates.clone() };
                Some(build_ledger(TrajectorySource::Analytic { ensemble: &e, rates: &rates }, p, &prep.grid)?)
            }
            Err(PhaseSpaceError::NotRepresentable(why)) => {
                let msg = format!("{}: no phase-space ensemble ({why}); analytic ledger skipped", state.label);
                log::warn!("{msg}");
                notes.push(msg);
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    let comparison = oracle.as_ref().map(|o| compare(o, analytic.as_ref(), n0, &flow, p.omega_m));
    let fit = match &oracle {
        Some(l) => {
            let t: Vec<f64> = l.rows.iter().map(|r| r.t).collect();
            let m: Vec<_> = l.rows.iter().map(|r| r.mean_m).collect();
            let n: Vec<f64> = l.rows.iter().map(|r| r.n_m).collect();
            match fit_drift_diffusion(&t, Some(&m), &n, p.gamma_m) {
                Ok(f) => Some(f),
                Err(e) => {
                    notes.push(format!("{}: drift/diffusion fit unavailable: {e}", state.label));
                    None
                }
            }
        }
        None => None,
    };
    Ok(StateRun { label: state.label.clone(), spec: state.spec.clone(), n0, dim_o, dim_m, oracle, analytic, comparison, fit, monte_carlo, notes })
}

/// Runs every configured initial state through the configured pipeline.
pub fn run(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutcome, RunError> {
    let prep = prepare(cfg)?;
    let mut warnings = Vec::new();
    if !prep.regime.within(REGIME_MARGIN) {
        let msg = format!("outside the weak-coupling regime at n_M <= {:.4e}, t <= {:.4e}: {}", prep.n_max, prep.t_end, prep.regime);
        if opts.strict {
            return Err(RunError::Regime(msg));
        }
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut states = Vec::with_capacity(cfg.states.len());
    for s in &cfg.states {
        let r = run_state(cfg, &prep, s)?;
        warnings.extend(r.notes.iter().cloned());
        states.push(r);
    }
    Ok(RunOutcome {
        name: cfg.name.clone(),
        pipeline: cfg.pipeline,
        rates: prep.rates,
        regime: prep.regime,
        t_end: prep.t_end,
        warnings,
        states,
    })
}

/// Rate table for the `rates` verb.
pub fn rates_table(cfg: &ScenarioConfig) -> Result<String, RunError> {
    let p = &cfg.params;
    let r = engine_rates(p)?;
    let h = &r.harmonics;
    let mut s = String::new();
    writeln!(s, "scenario = {}", cfg.name).unwrap();
    writeln!(s, "omega_O = {:?}", h.omega_o).unwrap();
    writeln!(s, "omega_plus = {:?}", h.omega_plus).unwrap();
    writeln!(s, "omega_minus = {:?}", h.omega_minus).unwrap();
    writeln!(s, "(g/Omega_M)^2 = {:?}", r.coupling_sq).unwrap();
    writeln!(s, "bath,G(omega_O),G(-omega_O),G(omega_plus),G(-omega_plus),G(omega_minus),G(-omega_minus)").unwrap();
    for (name, b) in [("hot", &h.hot), ("cold", &h.cold)] {
        writeln!(s, "{name},{:?},{:?},{:?},{:?},{:?},{:?}", b.o_down, b.o_up, b.plus_down, b.plus_up, b.minus_down, b.minus_up).unwrap();
    }
    writeln!(s, "channel,frequency,gamma,d").unwrap();
    for c in &r.channels {
        writeln!(s, "{}{},{:?},{:?},{:?}", c.bath, c.sideband, c.frequency, c.gamma, c.d).unwrap();
    }
    writeln!(s, "n_O = {:?}", r.n_o).unwrap();
    writeln!(s, "gamma = {:?}", r.gamma).unwrap();
    writeln!(s, "d = {:?}", r.d).unwrap();
    writeln!(s, "Gamma_M = {:?}", r.gamma_m).unwrap();
    writeln!(s, "d_M = {:?}", r.d_m).unwrap();
    writeln!(s, "drift = {:?}", r.drift()).unwrap();
    writeln!(s, "gain = {}", r.gain()).unwrap();
    Ok(s)
}

impl RunOutcome {
    /// Deterministic plain-text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let r = &self.rates;
        writeln!(s, "scenario = {}", self.name).unwrap();
        writeln!(s, "pipeline = {}", self.pipeline).unwrap();
        writeln!(s, "gamma = {:?}", r.gamma).unwrap();
        writeln!(s, "d = {:?}", r.d).unwrap();
        writeln!(s, "drift = {:?}", r.drift()).unwrap();
        writeln!(s, "n_O = {:?}", r.n_o).unwrap();
        writeln!(s, "t_end = {:?}", self.t_end).unwrap();
        writeln!(s, "regime_min_margin = {:?}", self.regime.min_margin).unwrap();
        for w in &self.warnings {
            writeln!(s, "warning = {w}").unwrap();
        }
        for st in &self.states {
            writeln!(s, "\n[{}]", st.label).unwrap();
            writeln!(s, "n0 = {:?}", st.n0).unwrap();
            if st.oracle.is_some() {
                writeln!(s, "dims = {}x{}", st.dim_o, st.dim_m).unwrap();
            }
            for (src, l) in [("oracle", &st.oracle), ("analytic", &st.analytic)] {
                if let Some(l) = l {
                    let sp = spohn_check(l);
                    writeln!(s, "{src}.peak_eta = {:?}", l.peak_efficiency().unwrap_or(f64::NAN)).unwrap();
                    writeln!(s, "{src}.beyond_carnot_duration = {:?}", l.beyond_carnot_duration()).unwrap();
                    writeln!(s, "{src}.spohn_min_slack = {:?} at t = {:?} ({})", sp.min_slack, sp.at, if sp.pass { "pass" } else { "FAIL" }).unwrap();
                }
            }
            if let Some(f) = &st.fit {
                writeln!(s, "fit.gamma = {:?}", f.gamma).unwrap();
                writeln!(s, "fit.d = {:?}", f.d).unwrap();
            }
            if let Some((n, se)) = st.monte_carlo {
                writeln!(s, "monte_carlo.n_end = {n:?} +- {se:?}").unwrap();
            }
            if let Some(c) = &st.comparison {
                for d in &c.deviations {
                    writeln!(s, "deviation.{} = {:?} at t = {:?}", d.observable, d.max_rel, d.at).unwrap();
                }
            }
        }
        s
    }

    /// Writes `<label>_<source>.csv`, `<label>_compare.csv` and `summary.txt`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> io::Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        for st in &self.states {
            if let Some(l) = &st.oracle {
                put(format!("{}_oracle.csv", st.label), l.to_csv())?;
            }
            if let Some(l) = &st.analytic {
                put(format!("{}_analytic.csv", st.label), l.to_csv())?;
            }
            if let Some(c) = &st.comparison {
                put(format!("{}_compare.csv", st.label), c.to_csv())?;
            }
        }
        put("summary.txt".into(), self.summary())?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::config::ScenarioConfig;

    #[test]
    fn auto_dims_cover_the_window() {
        assert_eq!(auto_dim_o(0.0), 5);
        assert_eq!(auto_dim_o((-1.0f64).exp()), 22);
        let flow = OUFlow::new(-0.06, 0.1).unwrap();
        let spec = StateSpec::coherent(num_complex::Complex64::new(1.0, 0.0), 1.0);
        let d = auto_dim_m(&spec, &flow, 10.0).unwrap();
        let r2 = (0.6f64).exp();
        let s2 = flow.width(0.0, 10.0);
        assert!(d > hilbert::displaced_thermal_dim(r2, s2, DIM_BUDGET));
    }

    #[test]
    fn analytic_pipeline_is_deterministic() {
        let cfg = ScenarioConfig::load(
            "default_engine",
            &[("run.pipeline".into(), "analytic".into()), ("grid.samples".into(), "6".into())],
        )
        .unwrap();
        let a = run(&cfg, RunOptions::default()).unwrap();
        let b = run(&cfg, RunOptions::default()).unwrap();
        assert_eq!(a.summary(), b.summary());
        assert!(a.rates.gain());
        assert_eq!(a.states[0].analytic.as_ref().unwrap().rows.len(), 6);
    }

    #[test]
    fn strict_mode_rejects_out_of_regime() {
        let cfg = ScenarioConfig::load("default_engine", &[("run.pipeline".into(), "analytic".into())]).unwrap();
        let e = run(&cfg, RunOptions { strict: true }).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn comparison_of_a_ledger_with_itself() {
        let cfg = ScenarioConfig::load("thermal_noise_gain", &[("grid.samples".into(), "5".into())]).unwrap();
        let prep = prepare(&cfg).unwrap();
        let e = PhaseEnsemble::from_spec(&cfg.states[0].spec).unwrap();
        let l = build_ledger(TrajectorySource::Analytic { ensemble: &e, rates: &prep.rates }, &cfg.params, &prep.grid).unwrap();
        let c = compare(&l, Some(&l), l.rows[0].n_m, &OUFlow::from_rates(&prep.rates), 1.0);
        assert!(c.deviation("E_M").unwrap().max_rel < 1e-12);
        assert_eq!(c.deviation("S_M").unwrap().max_rel, 0.0);
    }
}
