//! Work, heat and efficiency bookkeeping for the mechanical mode.
//!
//! Work is measured by nonpassivity: `W_max = E - E_Gibbs(S)` (bound
//! ergotropy) and `W_unitary = E - E_passive` (ergotropy). The maximal power
//! is `dE/dt - T_M dS/dt`, with `T_M` the temperature of the Gibbs state of
//! equal entropy.

use std::io::{self, Write};

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::baths::{BathLabel, EngineParams, EngineRates};
use crate::hilbert::{self, thermal_entropy, temperature_of_occupancy, HilbertError};
use crate::lindblad::{self, heat_currents, reduced_m, EnergyModel, EvolveOptions, GeneratorSet, JointState, LindbladError};
use crate::phasespace::{self, propagate, OUFlow, PhaseEnsemble, PhaseSpaceError, WORK_BUDGET};

/// Spohn slack below this counts as a Second-Law violation.
pub const SPOHN_TOL: f64 = 1e-6;
/// Slack allowed on `eta <= 1 - T_M/T_h`.
pub const EFFICIENCY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    PhaseSpace(#[from] PhaseSpaceError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
    #[error("not in engine mode: hot-bath current J_h = {0:e} <= 0")]
    NotEngineMode(f64),
    #[error("invalid time grid: {0}")]
    BadGrid(String),
}

/// `dE/dt - T_M dS/dt`
pub fn max_power(de_dt: f64, ds_dt: f64, t_m: f64) -> f64 {
    de_dt - t_m * ds_dt
}

/// [`max_power`] via `T_M dS/dt = dE_Gibbs/dt`.
pub fn max_power_gibbs(de_dt: f64, de_gibbs_dt: f64) -> f64 {
    de_dt - de_gibbs_dt
}

/// Low-temperature entropy production
/// `(gamma + Gamma_M + 2d)(<M^dag M> - <M^dag><M>) + d`.
pub fn entropy_rate_lowt(n: f64, mean_m: C64, gamma: f64, gamma_m: f64, d: f64) -> f64 {
    (gamma + gamma_m + 2.0 * d) * (n - mean_m.norm_sqr()) + d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyReport {
    pub eta_observed: f64,
    /// `1 - T_c/T_h`
    pub carnot_two_bath: f64,
    /// `1 - T_M/T_h`
    pub carnot_effective: f64,
    /// `T_M < T_c`
    pub beyond_carnot: bool,
    /// `eta <= 1 - T_M/T_h + EFFICIENCY_TOL`
    pub within_effective_bound: bool,
}

impl EfficiencyReport {
    pub fn exceeds_two_bath(&self) -> bool {
        self.eta_observed > self.carnot_two_bath
    }
}

/// `eta = P_max / J_h`, only meaningful while heat flows in from the hot bath.
pub fn efficiency(p_max: f64, j_h: f64, t_m: f64, t_h: f64, t_c: f64) -> Result<EfficiencyReport, ThermoError> {
    if !(j_h > 0.0) {
        return Err(ThermoError::NotEngineMode(j_h));
    }
    let eta = p_max / j_h;
    let carnot_effective = 1.0 - t_m / t_h;
    Ok(EfficiencyReport {
        eta_observed: eta,
        carnot_two_bath: 1.0 - t_c / t_h,
        carnot_effective,
        beyond_carnot: t_m < t_c,
        within_effective_bound: eta <= carnot_effective + EFFICIENCY_TOL,
    })
}

/// Thermodynamic state of the mechanical mode plus heat currents at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerPoint {
    pub t: f64,
    pub energy: f64,
    pub entropy: f64,
    pub w_max: f64,
    pub w_unitary: f64,
    pub temperature: f64,
    pub gibbs_energy: f64,
    pub n_m: f64,
    pub mean_m: C64,
    pub j_h: f64,
    pub j_c: f64,
    pub j_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub e_m: f64,
    pub s_m: f64,
    pub w_max: f64,
    pub w_unitary: f64,
    pub t_m: f64,
    pub j_h: f64,
    pub j_c: f64,
    pub j_p: f64,
    pub p_max: f64,
    /// Same power from the Gibbs-energy derivative.
    pub p_max_gibbs: f64,
    /// `NaN` outside engine mode.
    pub eta: f64,
    pub spohn_slack: f64,
    pub de_dt: f64,
    pub ds_dt: f64,
    pub n_m: f64,
    pub mean_m: C64,
    /// `T_M < T_c`
    pub beyond_carnot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerSource {
    Oracle,
    Analytic,
}

impl std::fmt::Display for LedgerSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LedgerSource::Oracle => "oracle",
            LedgerSource::Analytic => "analytic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkLedger {
    pub source: LedgerSource,
    pub t_h: f64,
    pub t_c: f64,
    /// Phonon bath temperature.
    pub t_p: f64,
    pub rows: Vec<LedgerRow>,
}

pub const CSV_HEADER: &str = "t,E_M,S_M,W_max,W_unitary,T_M,J_h,J_c,P_max,eta,spohn_slack";

impl WorkLedger {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t, r.e_m, r.s_m, r.w_max, r.w_unitary, r.t_m, r.j_h, r.j_c, r.p_max, r.eta, r.spohn_slack
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn peak_efficiency(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.eta).filter(|e| e.is_finite()).fold(None, |m, e| Some(m.map_or(e, |m: f64| m.max(e))))
    }

    /// Total time, summed over sample intervals, during which `eta` exceeds
    /// the two-bath Carnot efficiency at the interval start.
    pub fn beyond_carnot_duration(&self) -> f64 {
        let carnot = 1.0 - self.t_c / self.t_h;
        0.0 + self.rows.windows(2).filter(|w| w[0].eta.is_finite() && w[0].eta > carnot).map(|w| w[1].t - w[0].t).sum::<f64>()
    }

    pub fn efficiency_reports(&self) -> Vec<Option<EfficiencyReport>> {
        self.rows.iter().map(|r| efficiency(r.p_max, r.j_h, r.t_m, self.t_h, self.t_c).ok()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpohnCheck {
    pub min_slack: f64,
    pub at: f64,
    pub pass: bool,
}

/// Minimum of `dS/dt - J_h/T_h - J_c/T_c - J_p/T_p` over the ledger.
pub fn spohn_check(ledger: &WorkLedger) -> SpohnCheck {
    let (min_slack, at) = ledger
        .rows
        .iter()
        .map(|r| (r.spohn_slack, r.t))
        .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 || b.0.is_nan() { b } else { a });
    SpohnCheck { min_slack, at, pass: min_slack >= -SPOHN_TOL }
}

fn entropy_flow(j: f64, t: f64) -> f64 {
    if t > 0.0 {
        j / t
    } else if j == 0.0 {
        0.0
    } else {
        j.signum() * f64::INFINITY
    }
}

/// Output times plus the extra points needed for finite-difference rates:
/// `t - delta, t, t + delta` for every sample, and `t0, t0 + delta, t0 + 2 delta`
/// for the first.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilGrid {
    samples: Vec<f64>,
    delta: f64,
    points: Vec<f64>,
}

impl StencilGrid {
    pub fn new(samples: Vec<f64>, delta: f64) -> Result<Self, ThermoError> {
        if samples.len() < 2 || samples.windows(2).any(|w| !(w[1] > w[0])) || samples.iter().any(|t| !t.is_finite()) {
            return Err(ThermoError::BadGrid("need >= 2 strictly increasing finite samples".into()));
        }
        let min_gap = samples.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if !(delta > 0.0 && 3.0 * delta < min_gap) {
            return Err(ThermoError::BadGrid(format!("stencil width {delta} must be in (0, {})", min_gap / 3.0)));
        }
        let mut points = vec![samples[0], samples[0] + delta, samples[0] + 2.0 * delta];
        for &t in &samples[1..] {
            points.extend([t - delta, t, t + delta]);
        }
        Ok(Self { samples, delta, points })
    }

    /// Uniform samples on `[t0, t_end]` with a stencil of a quarter spacing,
    /// capped at `max_delta`.
    pub fn uniform(t0: f64, t_end: f64, samples: usize, max_delta: f64) -> Result<Self, ThermoError> {
        if samples < 2 || !(t_end > t0) {
            return Err(ThermoError::BadGrid(format!("[{t0}, {t_end}] with {samples} samples")));
        }
        let h = (t_end - t0) / (samples - 1) as f64;
        let ts = (0..samples).map(|i| if i + 1 == samples { t_end } else { t0 + h * i as f64 }).collect();
        Self::new(ts, (0.25 * h).min(max_delta))
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Every time at which the trajectory must be evaluated, in order.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    fn derivative(&self, i: usize, f: &[f64]) -> f64 {
        let k = 3 * i;
        if i == 0 {
            (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * self.delta)
        } else {
            (f[k + 2] - f[k]) / (2.0 * self.delta)
        }
    }

    fn centre(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            3 * i + 1
        }
    }
}

/// Rows from points evaluated at `grid.points()`.
pub fn ledger_from_points(
    grid: &StencilGrid,
    points: &[LedgerPoint],
    source: LedgerSource,
    t_h: f64,
    t_c: f64,
    t_p: f64,
) -> Result<WorkLedger, ThermoError> {
    if points.len() != grid.points().len() {
        return Err(ThermoError::BadGrid(format!("{} points for a {}-point stencil", points.len(), grid.points().len())));
    }
    let e: Vec<f64> = points.iter().map(|p| p.energy).collect();
    let s: Vec<f64> = points.iter().map(|p| p.entropy).collect();
    let g: Vec<f64> = points.iter().map(|p| p.gibbs_energy).collect();
    let mut rows = Vec::with_capacity(grid.samples().len());
    for i in 0..grid.samples().len() {
        let p = &points[grid.centre(i)];
        let de_dt = grid.derivative(i, &e);
        let ds_dt = grid.derivative(i, &s);
        let p_max = max_power(de_dt, ds_dt, p.temperature);
        let eta = if p.j_h > 0.0 { p_max / p.j_h } else { f64::NAN };
        rows.push(LedgerRow {
            t: p.t,
            e_m: p.energy,
            s_m: p.entropy,
            w_max: p.w_max,
            w_unitary: p.w_unitary,
            t_m: p.temperature,
            j_h: p.j_h,
            j_c: p.j_c,
            j_p: p.j_p,
            p_max,
            p_max_gibbs: max_power_gibbs(de_dt, grid.derivative(i, &g)),
            eta,
            spohn_slack: ds_dt - entropy_flow(p.j_h, t_h) - entropy_flow(p.j_c, t_c) - entropy_flow(p.j_p, t_p),
            de_dt,
            ds_dt,
            n_m: p.n_m,
            mean_m: p.mean_m,
            beyond_carnot: p.temperature < t_c,
        });
    }
    Ok(WorkLedger { source, t_h, t_c, t_p, rows })
}

/// Mechanical-mode thermodynamics and heat currents of one oracle state.
pub fn oracle_point(t: f64, s: &JointState, gens: &GeneratorSet, energy: &EnergyModel) -> Result<LedgerPoint, ThermoError> {
    let rho = reduced_m(s, energy.omega_m);
    let w = hilbert::work_summary(&rho)?;
    let hc = heat_currents(s, gens, energy);
    let mom = s.moments();
    Ok(LedgerPoint {
        t,
        energy: w.energy,
        entropy: w.entropy,
        w_max: w.bound_ergotropy,
        w_unitary: w.ergotropy,
        temperature: w.temperature,
        gibbs_energy: w.energy - w.bound_ergotropy,
        n_m: mom.n_m,
        mean_m: mom.mean_m,
        j_h: hc.hot,
        j_c: hc.cold,
        j_p: hc.phonon,
    })
}

/// Analytic state at `t`: the ensemble propagated by `flow`, with heat
/// currents from `rates` at the propagated occupation.
pub fn analytic_point(t: f64, e0: &PhaseEnsemble, flow: &OUFlow, rates: &EngineRates) -> Result<LedgerPoint, ThermoError> {
    let e = propagate(e0, flow, t)?;
    let omega = e.omega();
    let n = e.mean_number();
    let (entropy, w_max, w_unitary, temperature, mean_m) = match &e {
        PhaseEnsemble::Gaussian(g) => {
            let w = omega * g.mean.norm_sqr();
            (thermal_entropy(g.sigma2), w, w, temperature_of_occupancy(g.sigma2, omega), g.mean)
        }
        _ => {
            let w = hilbert::work_summary(&phasespace::to_fock(&e, WORK_BUDGET)?)?;
            let mean = match &e {
                PhaseEnsemble::Mixture(c) => c.iter().map(|(w, g)| g.mean * *w).sum(),
                _ => C64::new(0.0, 0.0),
            };
            // Energy from the ensemble moments; the Fock state only supplies
            // entropy-derived quantities.
            let shift = omega * n - w.energy;
            (w.entropy, w.bound_ergotropy + shift, w.ergotropy + shift, w.temperature, mean)
        }
    };
    let (j_h, j_c, j_p) = rates.heat_currents(n);
    Ok(LedgerPoint {
        t,
        energy: omega * n,
        entropy,
        w_max,
        w_unitary,
        temperature,
        gibbs_energy: omega * n - w_max,
        n_m: n,
        mean_m,
        j_h,
        j_c,
        j_p,
    })
}

fn log_product_assumption(p: &EngineParams) {
    log::info!(
        "mechanical entropy treated as additive (product-state approximation, error O((g/Omega)^4) = {:.2e})",
        p.coupling_sq().powi(2)
    );
}

/// Where a ledger's trajectory comes from.
pub enum TrajectorySource<'a> {
    Oracle { initial: &'a JointState, gens: &'a GeneratorSet, options: EvolveOptions, dressing: bool },
    Analytic { ensemble: &'a PhaseEnsemble, rates: &'a EngineRates },
}

/// Evaluates the trajectory on the stencil grid and assembles the ledger.
pub fn build_ledger(source: TrajectorySource<'_>, p: &EngineParams, grid: &StencilGrid) -> Result<WorkLedger, ThermoError> {
    log_product_assumption(p);
    let (t_h, t_c) = (p.hot.temperature, p.cold.temperature);
    let t_p = temperature_of_occupancy(p.n_m_th, p.omega_m);
    match source {
        TrajectorySource::Oracle { initial, gens, options, dressing } => {
            let energy = EnergyModel::new(p, dressing);
            let mut pts = Vec::with_capacity(grid.points().len());
            lindblad::evolve_with(initial, gens, grid.points(), &options, |t, s| {
                pts.push(oracle_point(t, s, gens, &energy).map_err(|e| match e {
                    ThermoError::Hilbert(h) => LindbladError::Hilbert(h),
                    ThermoError::Lindblad(l) => l,
                    other => LindbladError::BadGrid(other.to_string()),
                })?);
                Ok(())
            })?;
            ledger_from_points(grid, &pts, LedgerSource::Oracle, t_h, t_c, t_p)
        }
        TrajectorySource::Analytic { ensemble, rates } => {
            let flow = OUFlow::from_rates(rates);
            let pts = grid
                .points()
                .iter()
                .map(|&t| analytic_point(t, ensemble, &flow, rates))
                .collect::<Result<Vec<_>, _>>()?;
            ledger_from_points(grid, &pts, LedgerSource::Analytic, t_h, t_c, t_p)
        }
    }
}

/// Heat currents per bath label from an analytic rate set at occupation `n_m`.
pub fn analytic_current(rates: &EngineRates, label: BathLabel, n_m: f64) -> f64 {
    let (h, c, p) = rates.heat_currents(n_m);
    match label {
        BathLabel::Hot => h,
        BathLabel::Cold => c,
        BathLabel::Phonon => p,
    }
}
