//! Time stepping for the sector-decomposed master equation.
//!
//! Three-stage, L-stable, stiffly accurate SDIRK (Alexander's third-order
//! scheme) with step-doubling error control. The optical relaxation rates are
//! orders of magnitude faster than the mechanical dynamics, so an implicit
//! scheme lets the step follow the slow dynamics. All three stages share the
//! matrix `I - h g L`, factored once per sector and step size.

use num_complex::Complex64 as C64;

use super::banded::{Banded, BandedLu};
use super::{GeneratorSet, JointState, LindbladError};

const G: f64 = 0.435_866_521_508_459;

fn a21() -> f64 {
    0.5 * (1.0 - G)
}

fn b1() -> f64 {
    -(6.0 * G * G - 16.0 * G + 1.0) / 4.0
}

fn b2() -> f64 {
    (6.0 * G * G - 20.0 * G + 5.0) / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Absolute tolerance on the per-step error estimate of any matrix element.
    pub tol: f64,
    pub initial_step: Option<f64>,
    pub min_step: f64,
    pub max_step: f64,
    /// Largest population allowed in the top level of either mode at any output time.
    pub leak_limit: f64,
    /// Most negative population tolerated at an output time.
    pub positivity_floor: f64,
    /// Richardson-extrapolate accepted steps.
    pub extrapolate: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            initial_step: None,
            min_step: 1e-12,
            max_step: f64::INFINITY,
            leak_limit: 1e-6,
            positivity_floor: -1e-8,
            extrapolate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
    pub max_step: f64,
}

struct Stepper {
    ops: Vec<Banded>,
}

impl Stepper {
    fn new(gens: &GeneratorSet, s: &JointState) -> Self {
        let loss = gens.loss_table();
        Self { ops: s.sectors.iter().map(|sec| gens.sector_operator(sec.ko, sec.km, &loss)).collect() }
    }

    fn factor(&self, h: f64) -> Result<Vec<BandedLu>, f64> {
        self.ops.iter().map(|op| op.shifted_identity(h * G).factor()).collect()
    }
}

fn sdirk_step(lu: &BandedLu, y: &[C64], h: f64) -> Vec<C64> {
    let hg = h * G;
    let mut y1 = y.to_vec();
    lu.solve(&mut y1);
    let k1: Vec<C64> = y1.iter().zip(y).map(|(a, b)| (a - b) / hg).collect();
    let rhs2: Vec<C64> = y.iter().zip(&k1).map(|(a, k)| a + k * (h * a21())).collect();
    let mut y2 = rhs2.clone();
    lu.solve(&mut y2);
    let (c1, c2) = (h * b1(), h * b2());
    let mut y3: Vec<C64> = (0..y.len()).map(|i| y[i] + k1[i] * c1 + (y2[i] - rhs2[i]) / hg * c2).collect();
    lu.solve(&mut y3);
    y3
}

/// Evolves `state` through `grid`, calling `observer` at every grid time
/// (including the first, with the initial state).
pub fn evolve_with<F>(
    state: &JointState,
    gens: &GeneratorSet,
    grid: &[f64],
    opts: &EvolveOptions,
    mut observer: F,
) -> Result<EvolveStats, LindbladError>
where
    F: FnMut(f64, &JointState) -> Result<(), LindbladError>,
{
    if grid.is_empty() {
        return Err(LindbladError::BadGrid("empty time grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] >= w[0])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(LindbladError::BadGrid("times must be finite and sorted".into()));
    }
    if gens.dim_o != state.dim_o() || gens.dim_m != state.dim_m() {
        return Err(LindbladError::DimMismatch(format!(
            "generator {}x{} vs state {}x{}",
            gens.dim_o,
            gens.dim_m,
            state.dim_o(),
            state.dim_m()
        )));
    }
    let stepper = Stepper::new(gens, state);
    let mut cur = state.clone();
    let tr0 = cur.trace();
    let t0 = grid[0];
    let span = grid[grid.len() - 1] - t0;
    let mut h = opts.initial_step.unwrap_or(if span > 0.0 { span / 64.0 } else { 1.0 }).min(opts.max_step);
    let mut stats = EvolveStats { min_step: f64::INFINITY, ..Default::default() };
    let mut t = t0;
    check(&cur, t, tr0, 0.0, opts)?;
    observer(t, &cur)?;
    let mut cached: Option<(f64, Vec<BandedLu>, Vec<BandedLu>)> = None;
    for &target in &grid[1..] {
        while target - t > 1e-13 * (1.0 + target.abs()) {
            let hh = h.min(target - t);
            let reuse = matches!(&cached, Some((hc, _, _)) if *hc == hh);
            if !reuse {
                let full = stepper.factor(hh).map_err(|_| LindbladError::StepFailure { t, h: hh, err: f64::NAN })?;
                let half = stepper.factor(0.5 * hh).map_err(|_| LindbladError::StepFailure { t, h: hh, err: f64::NAN })?;
                cached = Some((hh, full, half));
            }
            let (_, full, half) = cached.as_ref().expect("factorizations cached above");
            let mut err = 0.0f64;
            let mut next = Vec::with_capacity(cur.sectors.len());
            for (i, sec) in cur.sectors.iter().enumerate() {
                let y1 = sdirk_step(&full[i], &sec.data, hh);
                let mid = sdirk_step(&half[i], &sec.data, 0.5 * hh);
                let mut y2 = sdirk_step(&half[i], &mid, 0.5 * hh);
                for (a, b) in y2.iter_mut().zip(&y1) {
                    let e = (*a - b) / 7.0;
                    err = err.max(e.norm());
                    if opts.extrapolate {
                        *a += e;
                    }
                }
                next.push(y2);
            }
            if !err.is_finite() {
                err = f64::INFINITY;
            }
            let factor = if err > 0.0 { 0.9 * (opts.tol / err).powf(0.25) } else { 4.0 };
            if err <= opts.tol {
                for (sec, y) in cur.sectors.iter_mut().zip(next) {
                    sec.data = y;
                }
                t += hh;
                stats.accepted += 1;
                stats.min_step = stats.min_step.min(hh);
                stats.max_step = stats.max_step.max(hh);
                // Keep the step (and its factorization) while it is adequate.
                if hh < h {
                    if factor < 1.0 {
                        h = h.min(hh * factor.max(0.2));
                    }
                } else if !(1.0..=1.5).contains(&factor) {
                    h = (hh * factor.clamp(0.2, 2.0)).min(opts.max_step);
                }
            } else {
                stats.rejected += 1;
                h = hh * factor.clamp(0.1, 0.9);
                if h < opts.min_step {
                    return Err(LindbladError::StepFailure { t, h, err });
                }
            }
        }
        t = target;
        check(&cur, t, tr0, t - t0, opts)?;
        observer(t, &cur)?;
    }
    log::debug!(
        "evolve: {} accepted, {} rejected steps, h in [{:.3e}, {:.3e}]",
        stats.accepted,
        stats.rejected,
        stats.min_step,
        stats.max_step
    );
    Ok(stats)
}

fn check(s: &JointState, t: f64, tr0: f64, elapsed: f64, opts: &EvolveOptions) -> Result<(), LindbladError> {
    let (top_o, top_m) = s.top_populations();
    if top_o > opts.leak_limit {
        return Err(LindbladError::TruncationLeak { t, mode: "O", population: top_o, limit: opts.leak_limit });
    }
    if top_m > opts.leak_limit {
        return Err(LindbladError::TruncationLeak { t, mode: "M", population: top_m, limit: opts.leak_limit });
    }
    let minp = s.min_population();
    if minp < opts.positivity_floor {
        return Err(LindbladError::NotPositive { t, value: minp });
    }
    let drift = (s.trace() - tr0).abs();
    if drift > 1e-9 * elapsed.max(1.0) {
        log::warn!("trace drifted by {drift:e} after t = {elapsed}");
    }
    Ok(())
}

/// Evolves and returns the state at every grid time.
pub fn evolve(state: &JointState, gens: &GeneratorSet, grid: &[f64], opts: &EvolveOptions) -> Result<Vec<JointState>, LindbladError> {
    let mut out = Vec::with_capacity(grid.len());
    evolve_with(state, gens, grid, opts, |_, s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}
