//! Linearized mechanical dynamics in phase space.
//!
//! With the optical mode slaved to its quasi-steady state, the P-function of
//! the mechanical mode obeys an Ornstein-Uhlenbeck equation with drift rate
//! `a = gamma + Gamma_M` and diffusion `d`:
//!
//! ```text
//! dP/dt = (a/2)(d_b b + d_b* b*) P + d d_b d_b* P
//! ```
//!
//! Its Green's function maps a Gaussian P-function of mean `b` and width
//! `s2` to mean `b e^{-at/2}` and width `s2 e^{-at} + d (1 - e^{-at})/a`.

use num_complex::Complex64 as C64;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::baths::EngineRates;
use crate::hilbert::{
    self, displaced_thermal, displaced_thermal_dim, phase_averaged_displaced_thermal, FockState, HilbertError, StateKind,
    StateSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseSpaceError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid phase-space parameter: {0}")]
    InvalidParameter(String),
    #[error("state has no nonnegative regular P-function: {0}")]
    NotRepresentable(String),
    #[error("threshold undefined without diffusion (d*t = {0})")]
    NoDiffusion(f64),
    #[error("radial profile is not normalizable (integral {0})")]
    NotNormalizable(f64),
}

/// Gaussian P-function: displaced thermal state with `nbar = sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPhaseState {
    pub mean: C64,
    pub sigma2: f64,
    pub omega: f64,
}

impl GaussianPhaseState {
    pub fn new(mean: C64, sigma2: f64, omega: f64) -> Result<Self, PhaseSpaceError> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) || !mean.is_finite() || !(omega > 0.0) {
            return Err(PhaseSpaceError::InvalidParameter(format!(
                "mean {mean}, width {sigma2}, omega {omega}"
            )));
        }
        Ok(Self { mean, sigma2, omega })
    }

    pub fn coherent(beta: C64, omega: f64) -> Self {
        Self { mean: beta, sigma2: 0.0, omega }
    }

    pub fn thermal(nbar: f64, omega: f64) -> Self {
        Self { mean: C64::new(0.0, 0.0), sigma2: nbar, omega }
    }

    pub fn mean_number(&self) -> f64 {
        self.mean.norm_sqr() + self.sigma2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseEnsemble {
    Gaussian(GaussianPhaseState),
    /// Gaussian of width `sigma2` smeared uniformly over a ring of `radius`.
    PhaseAveraged { radius: f64, sigma2: f64, omega: f64 },
    /// Convex combination; all components share one frequency.
    Mixture(Vec<(f64, GaussianPhaseState)>),
}

impl PhaseEnsemble {
    pub fn omega(&self) -> f64 {
        match self {
            PhaseEnsemble::Gaussian(g) => g.omega,
            PhaseEnsemble::PhaseAveraged { omega, .. } => *omega,
            PhaseEnsemble::Mixture(c) => c.first().map_or(1.0, |(_, g)| g.omega),
        }
    }

    pub fn mean_number(&self) -> f64 {
        match self {
            PhaseEnsemble::Gaussian(g) => g.mean_number(),
            PhaseEnsemble::PhaseAveraged { radius, sigma2, .. } => radius * radius + sigma2,
            PhaseEnsemble::Mixture(c) => c.iter().map(|(w, g)| w * g.mean_number()).sum(),
        }
    }

    pub fn validate(&self) -> Result<(), PhaseSpaceError> {
        let bad = |m: String| Err(PhaseSpaceError::InvalidParameter(m));
        match self {
            PhaseEnsemble::Gaussian(g) => GaussianPhaseState::new(g.mean, g.sigma2, g.omega).map(|_| ()),
            PhaseEnsemble::PhaseAveraged { radius, sigma2, omega } => {
                if !(*radius >= 0.0 && *sigma2 >= 0.0 && radius.is_finite() && sigma2.is_finite() && *omega > 0.0) {
                    return bad(format!("ring radius {radius}, width {sigma2}, omega {omega}"));
                }
                Ok(())
            }
            PhaseEnsemble::Mixture(c) => {
                if c.is_empty() {
                    return bad("empty mixture".into());
                }
                let total: f64 = c.iter().map(|(w, _)| w).sum();
                if c.iter().any(|(w, _)| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return bad(format!("mixture weights must be >= 0 and sum to 1 (sum {total})"));
                }
                if c.iter().any(|(_, g)| g.omega != c[0].1.omega) {
                    return bad("mixture components have different frequencies".into());
                }
                c.iter().try_for_each(|(_, g)| GaussianPhaseState::new(g.mean, g.sigma2, g.omega).map(|_| ()))
            }
        }
    }

    /// Phase-space form of a state family. Fock states are rejected: their
    /// P-function is not a density.
    pub fn from_spec(spec: &StateSpec) -> Result<Self, PhaseSpaceError> {
        let omega = spec.omega;
        let gaussian = |kind: &StateKind| -> Result<GaussianPhaseState, PhaseSpaceError> {
            match kind {
                StateKind::Coherent(b) => Ok(GaussianPhaseState::coherent(*b, omega)),
                StateKind::Thermal(n) => GaussianPhaseState::new(C64::new(0.0, 0.0), *n, omega),
                other => Err(PhaseSpaceError::NotRepresentable(format!("{other:?} inside a mixture"))),
            }
        };
        let e = match &spec.kind {
            StateKind::Coherent(_) | StateKind::Thermal(_) => PhaseEnsemble::Gaussian(gaussian(&spec.kind)?),
            StateKind::PhaseAveragedCoherent(r) => PhaseEnsemble::PhaseAveraged { radius: *r, sigma2: 0.0, omega },
            StateKind::Fock(n) => return Err(PhaseSpaceError::NotRepresentable(format!("Fock state |{n}>"))),
            StateKind::Mixture(parts) => PhaseEnsemble::Mixture(
                parts.iter().map(|(w, k)| gaussian(k).map(|g| (*w, g))).collect::<Result<_, _>>()?,
            ),
        };
        e.validate()?;
        Ok(e)
    }
}

/// Ornstein-Uhlenbeck coefficients: drift rate `a` (negative under gain) and diffusion `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OUFlow {
    pub rate: f64,
    pub diffusion: f64,
}

impl OUFlow {
    pub fn new(rate: f64, diffusion: f64) -> Result<Self, PhaseSpaceError> {
        if !(diffusion >= 0.0 && diffusion.is_finite() && rate.is_finite()) {
            return Err(PhaseSpaceError::InvalidParameter(format!("rate {rate}, diffusion {diffusion}")));
        }
        Ok(Self { rate, diffusion })
    }

    pub fn from_rates(r: &EngineRates) -> Self {
        Self { rate: r.drift(), diffusion: r.d }
    }

    /// `(1 - e^{-a t}) / a`, equal to `t` at `a = 0`.
    pub fn growth_integral(&self, t: f64) -> f64 {
        let x = self.rate * t;
        if x.abs() < 1e-14 {
            t
        } else {
            -(-x).exp_m1() / self.rate
        }
    }

    pub fn amplitude_factor(&self, t: f64) -> f64 {
        (-0.5 * self.rate * t).exp()
    }

    pub fn width(&self, sigma2: f64, t: f64) -> f64 {
        sigma2 * (-self.rate * t).exp() + self.diffusion * self.growth_integral(t)
    }

    /// Long-time width `d/a`, defined only for damping flows.
    pub fn stationary_width(&self) -> Option<f64> {
        (self.rate > 0.0).then(|| self.diffusion / self.rate)
    }
}

fn check_time(t: f64) -> Result<(), PhaseSpaceError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PhaseSpaceError::InvalidParameter(format!("propagation time {t} must be >= 0")))
    }
}

fn propagate_gaussian(g: &GaussianPhaseState, f: &OUFlow, t: f64) -> GaussianPhaseState {
    GaussianPhaseState { mean: g.mean * f.amplitude_factor(t), sigma2: f.width(g.sigma2, t), omega: g.omega }
}

pub fn propagate(e: &PhaseEnsemble, f: &OUFlow, t: f64) -> Result<PhaseEnsemble, PhaseSpaceError> {
    check_time(t)?;
    Ok(match e {
        PhaseEnsemble::Gaussian(g) => PhaseEnsemble::Gaussian(propagate_gaussian(g, f, t)),
        PhaseEnsemble::PhaseAveraged { radius, sigma2, omega } => PhaseEnsemble::PhaseAveraged {
            radius: radius * f.amplitude_factor(t),
            sigma2: f.width(*sigma2, t),
            omega: *omega,
        },
        PhaseEnsemble::Mixture(c) => {
            PhaseEnsemble::Mixture(c.iter().map(|(w, g)| (*w, propagate_gaussian(g, f, t))).collect())
        }
    })
}

/// `Omega <n>`; P-function moments are normally ordered, so no vacuum term.
pub fn mean_energy(e: &PhaseEnsemble) -> f64 {
    e.omega() * e.mean_number()
}

/// Mean energy at time `t` from an initial occupation `n0`:
/// `Omega (d (1 - e^{-at})/a + e^{-at} n0)`.
pub fn energy_trajectory(n0: f64, f: &OUFlow, t: f64, omega: f64) -> f64 {
    omega * f.width(n0, t)
}

/// Density matrix on the smallest Fock truncation that keeps the leak below `budget`.
pub fn to_fock(e: &PhaseEnsemble, budget: f64) -> Result<FockState, PhaseSpaceError> {
    e.validate()?;
    let omega = e.omega();
    match e {
        PhaseEnsemble::Gaussian(g) => {
            let dim = displaced_thermal_dim(g.mean.norm_sqr(), g.sigma2, budget);
            Ok(displaced_thermal(g.mean, g.sigma2, dim, omega, budget)?)
        }
        PhaseEnsemble::PhaseAveraged { radius, sigma2, .. } => {
            let dim = displaced_thermal_dim(radius * radius, *sigma2, budget);
            Ok(phase_averaged_displaced_thermal(*radius, *sigma2, dim, omega, budget)?)
        }
        PhaseEnsemble::Mixture(c) => {
            let dim = c.iter().map(|(_, g)| displaced_thermal_dim(g.mean.norm_sqr(), g.sigma2, budget)).max().unwrap_or(2);
            let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            for (w, g) in c {
                let s = displaced_thermal(g.mean, g.sigma2, dim, omega, budget)?;
                m += s.matrix() * C64::new(*w, 0.0);
            }
            Ok(FockState::from_matrix(m, omega)?)
        }
    }
}

/// Truncation budget used when converting ensembles for work accounting.
pub const WORK_BUDGET: f64 = 1e-10;

/// Maximum extractable work (bound ergotropy). A single Gaussian is a
/// displaced thermal state whose equal-entropy Gibbs state is the undisplaced
/// thermal state, so its work is exactly `Omega |mean|^2`.
pub fn work_capacity(e: &PhaseEnsemble) -> Result<f64, PhaseSpaceError> {
    match e {
        PhaseEnsemble::Gaussian(g) => {
            e.validate()?;
            Ok(g.omega * g.mean.norm_sqr())
        }
        _ => work_capacity_fock(e),
    }
}

/// [`work_capacity`] evaluated on the Fock basis for every ensemble kind.
pub fn work_capacity_fock(e: &PhaseEnsemble) -> Result<f64, PhaseSpaceError> {
    let s = to_fock(e, WORK_BUDGET)?;
    Ok(hilbert::bound_ergotropy(&s)?)
}

/// Non-increasing test for a radial P-profile sampled at `samples` points on
/// `[0, r_max]`, after normalizing `2 pi int r P dr` to one. Rises smaller
/// than `1e-9` are ignored.
pub fn is_passive_radial<F: Fn(f64) -> f64>(profile: F, r_max: f64, samples: usize) -> Result<bool, PhaseSpaceError> {
    if !(r_max > 0.0) || samples < 3 {
        return Err(PhaseSpaceError::InvalidParameter(format!("r_max {r_max}, samples {samples}")));
    }
    let h = r_max / (samples - 1) as f64;
    let vals: Vec<f64> = (0..samples).map(|i| profile(i as f64 * h)).collect();
    if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(PhaseSpaceError::NotNormalizable(f64::NAN));
    }
    let norm = 2.0 * std::f64::consts::PI * trapezoid(&vals.iter().enumerate().map(|(i, v)| i as f64 * h * v).collect::<Vec<_>>(), h);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(PhaseSpaceError::NotNormalizable(norm));
    }
    Ok(vals.windows(2).all(|w| (w[1] - w[0]) / norm <= 1e-9))
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

/// Unnormalized radial profile `e^{-r^2}(1 + b2 r^2)` of a phase-averaged
/// coherent state in scaled coordinates.
pub fn phase_averaged_profile(b2: f64) -> impl Fn(f64) -> f64 {
    move |r| (-r * r).exp() * (1.0 + b2 * r * r)
}

/// Exact radial P-profile of a ring of `radius` diffused to width `sigma2`:
/// `exp(-(r^2 + R^2)/s2) I0(2 r R / s2) / (pi s2)`, with the Bessel factor
/// evaluated by its angular integral.
pub fn ring_profile(radius: f64, sigma2: f64) -> impl Fn(f64) -> f64 {
    move |r| {
        let n = 256;
        let mut acc = 0.0;
        for k in 0..n {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let d2 = r * r + radius * radius - 2.0 * r * radius * th.cos();
            acc += (-d2 / sigma2).exp();
        }
        acc / n as f64 / (std::f64::consts::PI * sigma2)
    }
}

/// Propagates an isotropic profile through the flow by direct quadrature of
/// the Green's function; `rho_max` bounds the support of `profile`. Returns
/// the propagated profile at `r`.
pub fn propagate_radial_profile<F: Fn(f64) -> f64>(
    profile: &F,
    f: &OUFlow,
    t: f64,
    rho_max: f64,
    r: f64,
) -> f64 {
    let lam = f.amplitude_factor(t);
    let s = f.diffusion * f.growth_integral(t);
    if s <= 0.0 {
        return profile(r / lam) / (lam * lam);
    }
    let nr = 400;
    let nth = 128;
    let h = rho_max / nr as f64;
    let mut total = 0.0;
    for i in 0..=nr {
        let rho = i as f64 * h;
        let w = if i == 0 || i == nr { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let p0 = profile(rho);
        if p0 == 0.0 {
            continue;
        }
        let mut ang = 0.0;
        for k in 0..nth {
            let th = 2.0 * std::f64::consts::PI * k as f64 / nth as f64;
            let d2 = r * r + lam * lam * rho * rho - 2.0 * r * lam * rho * th.cos();
            ang += (-d2 / s).exp();
        }
        ang *= 2.0 * std::f64::consts::PI / nth as f64 / (std::f64::consts::PI * s);
        total += w * rho * p0 * ang;
    }
    total * h / 3.0
}

/// Scaled ring parameter `|b0'|^2 = 4 |b0|^2 / (d t)` and whether it exceeds
/// one. `radius` is the ring radius at the time of evaluation, so under gain
/// pass the amplified radius.
pub fn phase_averaged_threshold(radius: f64, d: f64, t: f64) -> Result<(f64, bool), PhaseSpaceError> {
    let dt = d * t;
    if !(dt > 0.0) {
        return Err(PhaseSpaceError::NoDiffusion(dt));
    }
    let b2 = 4.0 * radius * radius / dt;
    Ok((b2, b2 > 1.0))
}

/// Propagates then displaces back to the origin. Returns the centred state
/// and the work `Omega |mean(t)|^2` taken out by the displacement.
pub fn displace_to_passive(s: &GaussianPhaseState, f: &OUFlow, t: f64) -> Result<(GaussianPhaseState, f64), PhaseSpaceError> {
    check_time(t)?;
    let p = propagate_gaussian(s, f, t);
    let work = p.omega * p.mean.norm_sqr();
    Ok((GaussianPhaseState { mean: C64::new(0.0, 0.0), ..p }, work))
}

/// Temperature of a coherent state diffused for time `t`:
/// `Omega / ln((1 + d t)/(d t))`, zero at `d t = 0`.
pub fn effective_temperature_coherent(d: f64, t: f64, omega: f64) -> f64 {
    let x = d * t;
    if x <= 0.0 {
        0.0
    } else {
        omega / (1.0 / x).ln_1p()
    }
}

/// Monte-Carlo estimate of the propagated first and second moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuSample {
    pub mean: C64,
    /// Standard error of each component of `mean`.
    pub mean_stderr: f64,
    /// `E|b - E b|^2`
    pub sigma2: f64,
    pub sigma2_stderr: f64,
    pub trajectories: usize,
}

const CHUNK: usize = 8192;

/// Samples the initial Gaussian and integrates the OU process with exact
/// transition steps. Reproducible for a fixed `seed` regardless of the
/// thread count.
pub fn sample_ou(s: &GaussianPhaseState, f: &OUFlow, t: f64, steps: usize, trajectories: usize, seed: u64) -> OuSample {
    let steps = steps.max(1);
    let h = t / steps as f64;
    let lam = f.amplitude_factor(h);
    let kick = (0.5 * f.diffusion * f.growth_integral(h)).sqrt();
    let init = (0.5 * s.sigma2).sqrt();
    let chunks = trajectories.div_ceil(CHUNK);
    let parts: Vec<[f64; 6]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StdRng::seed_from_u64(seed.wrapping_add((c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let n = CHUNK.min(trajectories - c * CHUNK);
            let mut acc = [0.0f64; 6];
            for _ in 0..n {
                let mut nrm = || -> f64 { StandardNormal.sample(&mut rng) };
                let mut b = s.mean + C64::new(nrm(), nrm()) * init;
                for _ in 0..steps {
                    b = b * lam + C64::new(nrm(), nrm()) * kick;
                }
                let q = b.norm_sqr();
                acc[0] += b.re;
                acc[1] += b.im;
                acc[2] += b.re * b.re;
                acc[3] += b.im * b.im;
                acc[4] += q;
                acc[5] += q * q;
            }
            acc
        })
        .collect();
    let mut tot = [0.0f64; 6];
    for p in &parts {
        for k in 0..6 {
            tot[k] += p[k];
        }
    }
    let n = trajectories as f64;
    let mean = C64::new(tot[0] / n, tot[1] / n);
    let var_re = tot[2] / n - mean.re * mean.re;
    let var_im = tot[3] / n - mean.im * mean.im;
    let sigma2 = var_re + var_im;
    let q_mean = tot[4] / n;
    let q_var = tot[5] / n - q_mean * q_mean;
    OuSample {
        mean,
        mean_stderr: (var_re.max(var_im) / n).sqrt(),
        sigma2,
        sigma2_stderr: (q_var / n).sqrt(),
        trajectories,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{gibbs_equivalent, make_state};
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn coh(re: f64, im: f64) -> PhaseEnsemble {
        PhaseEnsemble::Gaussian(GaussianPhaseState::coherent(C64::new(re, im), 1.0))
    }

    #[test]
    fn propagation_examples() {
        let f = OUFlow::new(-0.2, 0.05).unwrap();
        let e = coh(1.0, 0.0);
        assert_eq!(propagate(&e, &f, 0.0).unwrap(), e);
        let PhaseEnsemble::Gaussian(g) = propagate(&e, &f, 5.0).unwrap() else { panic!() };
        approx(g.mean.re, 0.5f64.exp(), 1e-12);
        approx(g.sigma2, 0.05 * (1f64.exp() - 1.0) / 0.2, 1e-12);

        let damp = OUFlow::new(0.3, 0.12).unwrap();
        let th = PhaseEnsemble::Gaussian(GaussianPhaseState::thermal(2.0, 1.0));
        let PhaseEnsemble::Gaussian(g) = propagate(&th, &damp, 200.0).unwrap() else { panic!() };
        approx(g.sigma2, 0.4, 1e-12);
        assert_eq!(g.mean, C64::new(0.0, 0.0));

        let zero = OUFlow::new(0.0, 0.1).unwrap();
        approx(zero.width(1.0, 3.0), 1.3, 1e-15);
        assert!(propagate(&e, &f, -1.0).is_err());
    }

    #[test]
    fn ou_sampler_matches_green_function() {
        let s = GaussianPhaseState::coherent(C64::new(1.0, 0.0), 1.0);
        let f = OUFlow::new(-0.2, 0.05).unwrap();
        let mc = sample_ou(&s, &f, 5.0, 20, 1_000_000, 7);
        let mean = 0.5f64.exp();
        let width = 0.05 * (1f64.exp() - 1.0) / 0.2;
        assert!((mc.mean.re - mean).abs() < 3.0 * mc.mean_stderr, "{mc:?}");
        assert!(mc.mean.im.abs() < 3.0 * mc.mean_stderr);
        let q = mc.sigma2 + mc.mean.norm_sqr();
        assert!((q - (mean * mean + width)).abs() < 3.0 * mc.sigma2_stderr, "{mc:?}");
        assert_eq!(sample_ou(&s, &f, 5.0, 20, 20_000, 7), sample_ou(&s, &f, 5.0, 20, 20_000, 7));
    }

    #[test]
    fn energy_law() {
        let f = OUFlow::new(0.25, 0.1).unwrap();
        approx(energy_trajectory(3.0, &f, 0.0, 2.0), 6.0, 1e-15);
        approx(energy_trajectory(3.0, &f, 400.0, 2.0), 2.0 * 0.4, 1e-12);
        let g = OUFlow::new(-0.1, 0.1).unwrap();
        let e1 = energy_trajectory(1.0, &g, 10.0, 1.0);
        approx(e1, (1.0f64).exp() + (1f64.exp() - 1.0), 1e-12);
        let pa = PhaseEnsemble::PhaseAveraged { radius: 1.0, sigma2: 0.0, omega: 1.0 };
        approx(mean_energy(&propagate(&pa, &g, 10.0).unwrap()), e1, 1e-12);
    }

    #[test]
    fn work_capacity_examples() {
        let th = PhaseEnsemble::Gaussian(GaussianPhaseState::thermal(1.5, 1.0));
        assert_eq!(work_capacity(&th).unwrap(), 0.0);
        assert!(work_capacity_fock(&th).unwrap().abs() < 1e-8);

        let f = OUFlow::new(-0.2, 0.05).unwrap();
        let grown = propagate(&coh(0.6, 0.8), &f, 3.0).unwrap();
        approx(work_capacity(&grown).unwrap(), 0.6f64.exp(), 1e-12);
        approx(work_capacity_fock(&grown).unwrap(), 0.6f64.exp(), 1e-6);

        let pa = PhaseEnsemble::PhaseAveraged { radius: 1.0, sigma2: 0.25, omega: 1.0 };
        assert!(work_capacity(&pa).unwrap() > 1e-3);
        let (b2, flag) = phase_averaged_threshold(1.0, 0.25, 1.0).unwrap();
        approx(b2, 16.0, 1e-12);
        assert!(flag);

        let mix = PhaseEnsemble::Mixture(vec![
            (0.5, GaussianPhaseState::thermal(0.2, 1.0)),
            (0.5, GaussianPhaseState::thermal(0.2, 1.0)),
        ]);
        assert!(work_capacity(&mix).unwrap().abs() < 1e-8);
    }

    #[test]
    fn radial_passivity_examples() {
        assert!(is_passive_radial(|r| (-r * r).exp(), 6.0, 2000).unwrap());
        assert!(!is_passive_radial(phase_averaged_profile(1.5), 6.0, 2000).unwrap());
        assert!(is_passive_radial(phase_averaged_profile(1.0), 6.0, 2000).unwrap());
        assert!(!is_passive_radial(phase_averaged_profile(1.02), 6.0, 2000).unwrap());
        assert!(is_passive_radial(|_| 0.0, 1.0, 10).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(phase_averaged_threshold(1.0, 1.0, 2.0).unwrap(), (2.0, true));
        assert_eq!(phase_averaged_threshold(1.0, 2.0, 4.0).unwrap(), (0.5, false));
        assert_eq!(phase_averaged_threshold(0.0, 1.0, 1.0).unwrap(), (0.0, false));
        assert!(matches!(phase_averaged_threshold(1.0, 1.0, 0.0), Err(PhaseSpaceError::NoDiffusion(_))));
    }

    #[test]
    fn displacement_removes_the_coherent_work() {
        let s = GaussianPhaseState::new(C64::new(2.0, 0.0), 0.3, 1.0).unwrap();
        let none = OUFlow::new(0.0, 0.0).unwrap();
        let (c, w) = displace_to_passive(&s, &none, 0.0).unwrap();
        assert_eq!((c.mean, c.sigma2), (C64::new(0.0, 0.0), 0.3));
        approx(w, 4.0, 1e-15);
        let centred = GaussianPhaseState::thermal(0.3, 1.0);
        assert_eq!(displace_to_passive(&centred, &none, 0.0).unwrap(), (centred, 0.0));

        let f = OUFlow::new(-0.1, 0.05).unwrap();
        let s = GaussianPhaseState::coherent(C64::new(0.5, 0.5), 1.0);
        let (_, w) = displace_to_passive(&s, &f, 4.0).unwrap();
        let wc = work_capacity(&propagate(&PhaseEnsemble::Gaussian(s), &f, 4.0).unwrap()).unwrap();
        approx(w, wc, 1e-9);
    }

    #[test]
    fn effective_temperature_matches_entropy_matched_gibbs() {
        assert_eq!(effective_temperature_coherent(0.1, 0.0, 1.0), 0.0);
        approx(effective_temperature_coherent(1.0, 1.0, 1.0), 1.0 / 2f64.ln(), 1e-15);
        for &dt in &[0.01, 0.1, 1.0, 3.0, 10.0] {
            let s = displaced_thermal(C64::new(1.0, 0.0), dt, displaced_thermal_dim(1.0, dt, 1e-12), 1.0, 1e-12).unwrap();
            let g = gibbs_equivalent(&s).unwrap();
            let t = effective_temperature_coherent(1.0, dt, 1.0);
            assert!((g.temperature / t - 1.0).abs() < 0.01, "dt {dt}: {} vs {t}", g.temperature);
        }
        let th = make_state(&StateSpec::thermal(3.0, 1.0), 200).unwrap();
        approx(gibbs_equivalent(&th).unwrap().temperature, effective_temperature_coherent(1.0, 3.0, 1.0), 1e-6);
    }

    #[test]
    fn heat_without_work_under_gain() {
        let f = OUFlow::new(-0.1, 0.08).unwrap();
        let th = PhaseEnsemble::Gaussian(GaussianPhaseState::thermal(1.0, 1.0));
        let mut last = mean_energy(&th);
        for k in 1..=6 {
            let e = propagate(&th, &f, 5.0 * k as f64).unwrap();
            assert!(mean_energy(&e) > last);
            last = mean_energy(&e);
            assert_eq!(work_capacity(&e).unwrap(), 0.0);
            let PhaseEnsemble::Gaussian(g) = e else { panic!() };
            assert_eq!(g.mean, C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn uniform_disc_stays_passive() {
        let disc = |r: f64| if r <= 1.5 { 1.0 } else { 0.0 };
        for &(a, d) in &[(-0.2, 0.05), (0.3, 0.1), (-0.05, 0.4)] {
            let f = OUFlow::new(a, d).unwrap();
            let prof: Vec<f64> = (0..80).map(|i| propagate_radial_profile(&disc, &f, 2.0, 1.5, i as f64 * 0.05)).collect();
            assert!(prof.windows(2).all(|w| w[1] <= w[0] + 1e-9), "flow ({a}, {d})");
        }
    }

    #[test]
    fn ring_profile_matches_small_ring_expansion() {
        let p = ring_profile(0.05, 1.0);
        let q = phase_averaged_profile(0.0025);
        let k = p(0.0) / q(0.0);
        for &r in &[0.3, 0.8, 1.5] {
            approx(p(r) / (k * q(r)), 1.0, 1e-4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup(re in -2.0..2.0f64, im in -2.0..2.0f64, s2 in 0.0..3.0f64, a in -0.5..0.5f64,
                     d in 0.0..0.5f64, t1 in 0.0..4.0f64, t2 in 0.0..4.0f64) {
            let f = OUFlow::new(a, d).unwrap();
            let e = PhaseEnsemble::Gaussian(GaussianPhaseState::new(C64::new(re, im), s2, 1.0).unwrap());
            let PhaseEnsemble::Gaussian(x) = propagate(&propagate(&e, &f, t1).unwrap(), &f, t2).unwrap() else { unreachable!() };
            let PhaseEnsemble::Gaussian(y) = propagate(&e, &f, t1 + t2).unwrap() else { unreachable!() };
            prop_assert!((x.mean - y.mean).norm() <= 1e-12 * (1.0 + y.mean.norm()));
            prop_assert!((x.sigma2 - y.sigma2).abs() <= 1e-12 * (1.0 + y.sigma2));
        }

        #[test]
        fn passivity_preserved_for_centred_mixtures(
            ws in proptest::collection::vec((0.05..1.0f64, 0.1..3.0f64), 1..4),
            a in -0.3..0.3f64, d in 0.0..0.3f64, t in 0.0..6.0f64,
        ) {
            let total: f64 = ws.iter().map(|(w, _)| w).sum();
            let mix = PhaseEnsemble::Mixture(ws.iter().map(|(w, s)| (w / total, GaussianPhaseState::thermal(*s, 1.0))).collect());
            let f = OUFlow::new(a, d).unwrap();
            let PhaseEnsemble::Mixture(c) = propagate(&mix, &f, t).unwrap() else { unreachable!() };
            let prof = |r: f64| c.iter().map(|(w, g)| w * (-r * r / g.sigma2).exp() / g.sigma2).sum::<f64>();
            let rmax = 6.0 * c.iter().map(|(_, g)| g.sigma2.sqrt()).fold(0.0, f64::max);
            prop_assert!(is_passive_radial(prof, rmax, 500).unwrap());
        }
    }
}
