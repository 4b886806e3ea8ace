//! Single-mode states on a truncated Fock basis, and the passivity toolkit
//! (passive states, ergotropy, equal-entropy Gibbs references) that defines
//! extractable work for the mechanical mode.
//!
//! Units: `hbar = k_B = 1`. The mode Hamiltonian is `omega * a^dagger a`
//! with no zero-point offset.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Population allowed to leak above the top retained Fock level.
pub const DEFAULT_TRUNCATION_BUDGET: f64 = 1e-8;
/// Maximum elementwise anti-Hermitian part accepted by [`FockState::from_matrix`].
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Maximum deviation of the trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Eigenvalues in `[EIGEN_FLOOR, 0)` are truncation noise and are clamped to zero.
pub const EIGEN_FLOOR: f64 = -1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("Fock truncation dim must be at least 2 (got {0})")]
    DimTooSmall(usize),
    #[error("state needs dim >= {required} to keep leaked population below {budget:e} (got dim = {dim})")]
    Truncation { dim: usize, required: usize, budget: f64 },
    #[error("matrix is not Hermitian (max |rho - rho^dagger| = {0:e})")]
    NotHermitian(f64),
    #[error("trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("invalid state parameter: {0}")]
    InvalidParameter(String),
    #[error("mixture weights sum to {0}, expected 1")]
    BadWeights(f64),
    #[error("mixture components have different mode frequencies")]
    MixedFrequencies,
    #[error("entropy {entropy} exceeds the maximum ln({dim}) of the truncated space")]
    EntropyTooLarge { entropy: f64, dim: usize },
    #[error("state has a negative eigenvalue {0:e} below the clamping floor")]
    NotPositive(f64),
}

/// Density matrix of one bosonic mode on levels `0..dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    matrix: DMatrix<C64>,
    omega: f64,
}

impl FockState {
    /// Wraps a density matrix after checking shape, Hermiticity and trace.
    pub fn from_matrix(matrix: DMatrix<C64>, omega: f64) -> Result<Self, HilbertError> {
        let (r, c) = matrix.shape();
        if r != c {
            return Err(HilbertError::NotSquare(r, c));
        }
        if r < 2 {
            return Err(HilbertError::DimTooSmall(r));
        }
        let mut herm = 0.0f64;
        for i in 0..r {
            for j in i..r {
                herm = herm.max((matrix[(i, j)] - matrix[(j, i)].conj()).norm());
            }
        }
        if herm > HERMITIAN_TOL {
            return Err(HilbertError::NotHermitian(herm));
        }
        let tr: f64 = (0..r).map(|i| matrix[(i, i)].re).sum();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(HilbertError::BadTrace(tr));
        }
        Ok(Self { matrix, omega })
    }

    /// Diagonal state with the given populations (normalized by the caller).
    pub fn from_populations(populations: &[f64], omega: f64) -> Result<Self, HilbertError> {
        if populations.iter().any(|p| !p.is_finite() || *p < EIGEN_FLOOR) {
            return Err(HilbertError::InvalidParameter(
                "populations must be finite and nonnegative".into(),
            ));
        }
        let d = DVector::from_iterator(populations.len(), populations.iter().map(|&p| C64::new(p, 0.0)));
        Self::from_matrix(DMatrix::from_diagonal(&d), omega)
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<C64>, omega: f64) -> Self {
        Self { matrix, omega }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn population(&self, n: usize) -> f64 {
        self.matrix[(n, n)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.population(n)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|n| self.population(n)).sum()
    }

    /// Largest off-diagonal modulus.
    pub fn max_coherence(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.matrix[(i, j)].norm());
                }
            }
        }
        m
    }

    /// `<a^dagger a>`
    pub fn mean_number(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.population(n)).sum()
    }

    /// `<a> = sum_m sqrt(m) rho_{m, m-1}`
    pub fn mean_annihilation(&self) -> C64 {
        (1..self.dim())
            .map(|m| self.matrix[(m, m - 1)] * (m as f64).sqrt())
            .sum()
    }

    /// Population sitting in the top retained level.
    pub fn top_population(&self) -> f64 {
        self.population(self.dim() - 1)
    }

    /// Eigenvalues in descending order, with truncation noise clamped to zero.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut ev = raw_eigenvalues(&self.matrix);
        clamp_spectrum(&mut ev);
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// Full positivity check; `Err` if an eigenvalue lies below the floor.
    pub fn check_positive(&self) -> Result<(), HilbertError> {
        let ev = raw_eigenvalues(&self.matrix);
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        if min < EIGEN_FLOOR {
            Err(HilbertError::NotPositive(min))
        } else {
            Ok(())
        }
    }

    /// Same state embedded in (or cut down to) `dim` levels. Cutting is only
    /// accepted when the discarded population stays within `budget`.
    pub fn resized(&self, dim: usize, budget: f64) -> Result<Self, HilbertError> {
        if dim < 2 {
            return Err(HilbertError::DimTooSmall(dim));
        }
        let old = self.dim();
        if dim < old {
            let lost: f64 = (dim..old).map(|n| self.population(n)).sum();
            if lost > budget {
                return Err(HilbertError::Truncation { dim, required: old, budget });
            }
        }
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        let k = dim.min(old);
        m.view_mut((0, 0), (k, k)).copy_from(&self.matrix.view((0, 0), (k, k)));
        let tr: f64 = (0..dim).map(|n| m[(n, n)].re).sum();
        m /= C64::new(tr, 0.0);
        Ok(Self { matrix: m, omega: self.omega })
    }
}

fn is_diagonal(m: &DMatrix<C64>) -> bool {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)].norm() > 1e-15 {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a Hermitian matrix. Diagonal matrices short-circuit, and
/// trailing levels with negligible population are dropped before the dense
/// decomposition (their coherences are bounded by the square root of it).
/// Relative population below which a trailing block of levels is left out of
/// the eigen-decomposition; its diagonal stands in for its eigenvalues.
const SPECTRUM_TAIL: f64 = 1e-14;

fn raw_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    if is_diagonal(m) {
        return (0..m.nrows()).map(|i| m[(i, i)].re).collect();
    }
    let n = m.nrows();
    let tr: f64 = (0..n).map(|i| m[(i, i)].re.abs()).sum();
    let mut eff = n;
    let mut tail = 0.0;
    while eff > 2 {
        let d = m[(eff - 1, eff - 1)].re.abs();
        if tail + d > SPECTRUM_TAIL * tr {
            break;
        }
        tail += d;
        eff -= 1;
    }
    let block = m.view((0, 0), (eff, eff));
    let scale = block.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let mut ev: Vec<f64> = if block.iter().all(|z| z.im.abs() <= 1e-15 * scale) {
        block.map(|z| z.re).symmetric_eigenvalues().iter().copied().collect()
    } else {
        block.into_owned().symmetric_eigenvalues().iter().copied().collect()
    };
    ev.extend((eff..n).map(|i| m[(i, i)].re));
    ev
}

fn clamp_spectrum(ev: &mut [f64]) {
    let mut clamped = 0.0;
    for v in ev.iter_mut() {
        if *v < 0.0 {
            if *v < EIGEN_FLOOR {
                log::warn!("eigenvalue {v:e} below positivity floor");
            }
            clamped += *v;
            *v = 0.0;
        }
    }
    if clamped != 0.0 {
        let total: f64 = ev.iter().sum();
        if total > 0.0 {
            for v in ev.iter_mut() {
                *v /= total;
            }
        }
        log::debug!("clamped negative eigenvalue mass {clamped:e}");
    }
}

/// State families that can be built on the Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub enum StateKind {
    Coherent(C64),
    Fock(usize),
    Thermal(f64),
    /// Coherent state with uniformly random phase; parameter is `|beta|`.
    PhaseAveragedCoherent(f64),
    Mixture(Vec<(f64, StateKind)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub kind: StateKind,
    pub omega: f64,
}

impl StateSpec {
    pub fn new(kind: StateKind, omega: f64) -> Self {
        Self { kind, omega }
    }

    pub fn coherent(beta: C64, omega: f64) -> Self {
        Self::new(StateKind::Coherent(beta), omega)
    }

    pub fn fock(n: usize, omega: f64) -> Self {
        Self::new(StateKind::Fock(n), omega)
    }

    pub fn thermal(nbar: f64, omega: f64) -> Self {
        Self::new(StateKind::Thermal(nbar), omega)
    }

    pub fn phase_averaged(radius: f64, omega: f64) -> Self {
        Self::new(StateKind::PhaseAveragedCoherent(radius), omega)
    }

    /// Smallest truncation that satisfies the leak budget (and the
    /// `|beta|^2 <= dim/4` rule for coherent families).
    pub fn required_dim(&self, budget: f64) -> Result<usize, HilbertError> {
        required_dim(&self.kind, budget)
    }
}

fn poisson_populations(mean: f64, dim: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(dim);
    let mut cur = (-mean).exp();
    for n in 0..dim {
        if n > 0 {
            cur *= mean / n as f64;
        }
        p.push(cur);
    }
    p
}

fn thermal_populations(nbar: f64, dim: usize) -> Vec<f64> {
    let x = nbar / (nbar + 1.0);
    let mut p = Vec::with_capacity(dim);
    let mut cur = 1.0 / (nbar + 1.0);
    for _ in 0..dim {
        p.push(cur);
        cur *= x;
    }
    p
}

fn coherent_amplitudes(beta: C64, dim: usize) -> Vec<C64> {
    let mut c = Vec::with_capacity(dim);
    let mut cur = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        if n > 0 {
            cur *= beta / (n as f64).sqrt();
        }
        c.push(cur);
    }
    c
}

fn leak_of(kind: &StateKind, dim: usize) -> Result<f64, HilbertError> {
    Ok(match kind {
        StateKind::Coherent(b) => 1.0 - poisson_populations(b.norm_sqr(), dim).iter().sum::<f64>(),
        StateKind::PhaseAveragedCoherent(r) => 1.0 - poisson_populations(r * r, dim).iter().sum::<f64>(),
        StateKind::Thermal(nb) => (nb / (nb + 1.0)).powi(dim as i32),
        StateKind::Fock(n) => {
            if *n < dim {
                0.0
            } else {
                1.0
            }
        }
        StateKind::Mixture(parts) => {
            let mut l = 0.0;
            for (w, k) in parts {
                l += w * leak_of(k, dim)?;
            }
            l
        }
    }
    .max(0.0))
}

fn validate_kind(kind: &StateKind) -> Result<(), HilbertError> {
    match kind {
        StateKind::Coherent(b) if !(b.re.is_finite() && b.im.is_finite()) => {
            Err(HilbertError::InvalidParameter("coherent amplitude must be finite".into()))
        }
        StateKind::Thermal(nb) if !(nb.is_finite() && *nb >= 0.0) => {
            Err(HilbertError::InvalidParameter(format!("thermal occupancy {nb} must be >= 0")))
        }
        StateKind::PhaseAveragedCoherent(r) if !(r.is_finite() && *r >= 0.0) => {
            Err(HilbertError::InvalidParameter(format!("radius {r} must be >= 0")))
        }
        StateKind::Mixture(parts) => {
            if parts.is_empty() {
                return Err(HilbertError::InvalidParameter("empty mixture".into()));
            }
            let total: f64 = parts.iter().map(|(w, _)| *w).sum();
            if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(HilbertError::BadWeights(total));
            }
            parts.iter().try_for_each(|(_, k)| validate_kind(k))
        }
        _ => Ok(()),
    }
}

fn coherent_rule_dim(kind: &StateKind) -> usize {
    match kind {
        StateKind::Coherent(b) => (4.0 * b.norm_sqr()).ceil() as usize,
        StateKind::PhaseAveragedCoherent(r) => (4.0 * r * r).ceil() as usize,
        StateKind::Mixture(parts) => parts.iter().map(|(_, k)| coherent_rule_dim(k)).max().unwrap_or(0),
        _ => 0,
    }
}

fn required_dim(kind: &StateKind, budget: f64) -> Result<usize, HilbertError> {
    validate_kind(kind)?;
    let mut d = coherent_rule_dim(kind).max(2);
    while leak_of(kind, d)? >= budget {
        d = if d < 64 { d + 1 } else { d + d / 16 };
        if d > 1 << 22 {
            return Err(HilbertError::InvalidParameter("state too large to truncate".into()));
        }
    }
    // Walk back down in case the coarse steps overshot.
    while d > 2 && d > coherent_rule_dim(kind) && leak_of(kind, d - 1)? < budget {
        d -= 1;
    }
    Ok(d)
}

/// Builds a normalized state on `dim` levels with the default leak budget.
pub fn make_state(spec: &StateSpec, dim: usize) -> Result<FockState, HilbertError> {
    make_state_with_budget(spec, dim, DEFAULT_TRUNCATION_BUDGET)
}

pub fn make_state_with_budget(spec: &StateSpec, dim: usize, budget: f64) -> Result<FockState, HilbertError> {
    if dim < 2 {
        return Err(HilbertError::DimTooSmall(dim));
    }
    validate_kind(&spec.kind)?;
    if leak_of(&spec.kind, dim)? >= budget || coherent_rule_dim(&spec.kind) > dim {
        let required = required_dim(&spec.kind, budget)?;
        return Err(HilbertError::Truncation { dim, required, budget });
    }
    let mut m = build_matrix(&spec.kind, dim);
    let tr: f64 = (0..dim).map(|n| m[(n, n)].re).sum();
    m /= C64::new(tr, 0.0);
    Ok(FockState::from_matrix_unchecked(m, spec.omega))
}

fn build_matrix(kind: &StateKind, dim: usize) -> DMatrix<C64> {
    match kind {
        StateKind::Coherent(b) => {
            let c = DVector::from_vec(coherent_amplitudes(*b, dim));
            &c * c.adjoint()
        }
        StateKind::Fock(n) => {
            let mut m = DMatrix::zeros(dim, dim);
            m[(*n, *n)] = C64::new(1.0, 0.0);
            m
        }
        StateKind::Thermal(nb) => diag_matrix(&thermal_populations(*nb, dim)),
        StateKind::PhaseAveragedCoherent(r) => diag_matrix(&poisson_populations(r * r, dim)),
        StateKind::Mixture(parts) => {
            let mut m = DMatrix::zeros(dim, dim);
            for (w, k) in parts {
                let mut part = build_matrix(k, dim);
                let tr: f64 = (0..dim).map(|n| part[(n, n)].re).sum();
                part *= C64::new(w / tr, 0.0);
                m += part;
            }
            m
        }
    }
}

fn diag_matrix(p: &[f64]) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_iterator(p.len(), p.iter().map(|&x| C64::new(x, 0.0))))
}

/// Magnitudes `|<n+k| D(beta) rho_th D(beta)^dagger |n>|` for `n + k < dim`:
///
/// `nbar^n / (1+nbar)^(n+k+1) sqrt(n!/(n+k)!) |beta|^k e^{-|beta|^2/(1+nbar)} L_n^(k)(-y)`
/// with `y = |beta|^2 / (nbar (1+nbar))`, evaluated in log space.
fn displaced_thermal_band(radius2: f64, nbar: f64, dim: usize, k: usize, lnfact: &[f64]) -> Vec<f64> {
    let len = dim.saturating_sub(k);
    let y = radius2 / (nbar * (1.0 + nbar));
    let (ln_nb, ln_1nb) = (nbar.ln(), nbar.ln_1p());
    let base = 0.5 * (k as f64) * radius2.ln() - radius2 / (1.0 + nbar) - (k as f64 + 1.0) * ln_1nb;
    let base = if k == 0 { -radius2 / (1.0 + nbar) - ln_1nb } else { base };
    let kf = k as f64;
    let (mut prev, mut cur, mut scale) = (0.0f64, 1.0f64, 0.0f64);
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        if n == 1 {
            prev = cur;
            cur = 1.0 + kf + y;
        } else if n > 1 {
            let m = (n - 1) as f64;
            let next = ((2.0 * m + 1.0 + kf + y) * cur - (m + kf) * prev) / (m + 1.0);
            prev = cur;
            cur = next;
        }
        if cur > 1e250 {
            prev /= 1e250;
            cur /= 1e250;
            scale += 1e250f64.ln();
        }
        let nf = n as f64;
        let lv = base + nf * (ln_nb - ln_1nb) + 0.5 * (lnfact[n] - lnfact[n + k]) + cur.ln() + scale;
        out.push(lv.exp());
    }
    out
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    v.push(0.0);
    for j in 1..=n {
        acc += (j as f64).ln();
        v.push(acc);
    }
    v
}

/// Populations of the phase-averaged displaced thermal state with ring
/// radius `radius` and thermal occupancy `nbar`.
pub fn phase_averaged_displaced_thermal_populations(radius: f64, nbar: f64, dim: usize) -> Vec<f64> {
    if nbar <= 0.0 {
        return poisson_populations(radius * radius, dim);
    }
    displaced_thermal_band(radius * radius, nbar, dim, 0, &ln_factorials(dim))
}

fn displaced_thermal_required_dim(radius2: f64, nbar: f64, budget: f64) -> usize {
    let mean = radius2 + nbar;
    let var = nbar * (nbar + 1.0) + radius2 * (2.0 * nbar + 1.0);
    let mut guess = (mean + 8.0 * var.sqrt() + 25.0 * (nbar + 1.0) + 8.0).ceil() as usize;
    loop {
        let p = phase_averaged_displaced_thermal_populations(radius2.sqrt(), nbar, guess);
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if 1.0 - acc < budget {
                return (i + 1).max(2);
            }
        }
        guess *= 2;
    }
}

/// `D(beta) rho_th(nbar) D(beta)^dagger` on `dim` levels.
pub fn displaced_thermal(beta: C64, nbar: f64, dim: usize, omega: f64, budget: f64) -> Result<FockState, HilbertError> {
    if dim < 2 {
        return Err(HilbertError::DimTooSmall(dim));
    }
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(HilbertError::InvalidParameter(format!("thermal occupancy {nbar} must be >= 0")));
    }
    let mut m = if nbar <= 0.0 {
        let c = DVector::from_vec(coherent_amplitudes(beta, dim));
        &c * c.adjoint()
    } else {
        let lnfact = ln_factorials(dim);
        let phase = if beta.norm() > 0.0 { beta / beta.norm() } else { C64::new(1.0, 0.0) };
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        let mut ph = C64::new(1.0, 0.0);
        for k in 0..dim {
            for (n, v) in displaced_thermal_band(beta.norm_sqr(), nbar, dim, k, &lnfact).into_iter().enumerate() {
                m[(n + k, n)] = ph * v;
                m[(n, n + k)] = (ph * v).conj();
            }
            ph *= phase;
        }
        m
    };
    let tr: f64 = (0..dim).map(|n| m[(n, n)].re).sum();
    if 1.0 - tr > budget {
        let required = displaced_thermal_required_dim(beta.norm_sqr(), nbar, budget);
        return Err(HilbertError::Truncation { dim, required, budget });
    }
    m /= C64::new(tr, 0.0);
    Ok(FockState::from_matrix_unchecked(m, omega))
}

/// Phase average of [`displaced_thermal`]; diagonal in the Fock basis.
pub fn phase_averaged_displaced_thermal(
    radius: f64,
    nbar: f64,
    dim: usize,
    omega: f64,
    budget: f64,
) -> Result<FockState, HilbertError> {
    if dim < 2 {
        return Err(HilbertError::DimTooSmall(dim));
    }
    if !(nbar >= 0.0 && nbar.is_finite() && radius >= 0.0) {
        return Err(HilbertError::InvalidParameter("radius and occupancy must be >= 0".into()));
    }
    let p = phase_averaged_displaced_thermal_populations(radius, nbar, dim);
    let tr: f64 = p.iter().sum();
    if 1.0 - tr > budget {
        let required = displaced_thermal_required_dim(radius * radius, nbar, budget);
        return Err(HilbertError::Truncation { dim, required, budget });
    }
    let p: Vec<f64> = p.iter().map(|v| v / tr).collect();
    Ok(FockState::from_matrix_unchecked(diag_matrix(&p), omega))
}

/// Truncation needed by a displaced thermal state with `|beta|^2 = radius2`.
pub fn displaced_thermal_dim(radius2: f64, nbar: f64, budget: f64) -> usize {
    displaced_thermal_required_dim(radius2, nbar, budget)
}

/// `omega * sum_n n rho_nn`
pub fn mean_energy(s: &FockState) -> f64 {
    s.omega * s.mean_number()
}

/// `-sum lambda ln lambda` over the clamped spectrum.
pub fn von_neumann_entropy(s: &FockState) -> f64 {
    spectrum_entropy(&s.spectrum())
}

fn spectrum_entropy(ev: &[f64]) -> f64 {
    ev.iter().filter(|&&l| l > 0.0).map(|&l| -l * l.ln()).sum::<f64>().max(0.0)
}

/// Entropy of a thermal oscillator with mean occupancy `nbar` (untruncated).
pub fn thermal_entropy(nbar: f64) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    (nbar + 1.0) * nbar.ln_1p() - nbar * nbar.ln()
}

/// Inverts [`thermal_entropy`] by bisection on `nbar`.
pub fn thermal_occupancy_for_entropy(entropy: f64) -> f64 {
    if entropy <= 1e-10 {
        return 0.0;
    }
    let mut hi = 1.0;
    while thermal_entropy(hi) < entropy {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = thermal_entropy(mid);
        if (s - entropy).abs() < 1e-13 {
            return mid;
        }
        if s < entropy {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Temperature of a thermal mode with occupancy `nbar`; zero for `nbar = 0`.
pub fn temperature_of_occupancy(nbar: f64, omega: f64) -> f64 {
    if nbar <= 0.0 {
        0.0
    } else {
        omega / (1.0 / nbar).ln_1p()
    }
}

/// Minimal-energy state with the same spectrum: eigenvalues sorted
/// descending onto levels `0, 1, 2, ...`. Ties keep their original order.
pub fn passive_state(s: &FockState) -> FockState {
    let ev = s.spectrum();
    FockState::from_matrix_unchecked(diag_matrix(&ev), s.omega)
}

fn passive_energy(ev_desc: &[f64], omega: f64) -> f64 {
    omega * ev_desc.iter().enumerate().map(|(n, l)| n as f64 * l).sum::<f64>()
}

/// Work extractable by unitaries: `E(s) - E(passive(s))`.
pub fn ergotropy(s: &FockState) -> f64 {
    let ev = s.spectrum();
    mean_energy(s) - passive_energy(&ev, s.omega)
}

/// Thermal state with the same von Neumann entropy as some input.
#[derive(Debug, Clone)]
pub struct GibbsEquivalent {
    pub state: FockState,
    pub nbar: f64,
    pub temperature: f64,
    pub entropy: f64,
}

impl GibbsEquivalent {
    pub fn energy(&self) -> f64 {
        self.state.omega * self.nbar
    }
}

pub fn gibbs_equivalent(s: &FockState) -> Result<GibbsEquivalent, HilbertError> {
    gibbs_from_entropy(von_neumann_entropy(s), s.dim(), s.omega)
}

fn gibbs_from_entropy(entropy: f64, dim: usize, omega: f64) -> Result<GibbsEquivalent, HilbertError> {
    if entropy > (dim as f64).ln() + 1e-12 {
        return Err(HilbertError::EntropyTooLarge { entropy, dim });
    }
    let nbar = thermal_occupancy_for_entropy(entropy);
    let state = if nbar == 0.0 {
        make_state(&StateSpec::fock(0, omega), dim)?
    } else {
        let spec = StateSpec::thermal(nbar, omega);
        let budget = 1e-13;
        match make_state_with_budget(&spec, dim, budget) {
            Ok(st) => st,
            // The reference energy is closed-form; a Gibbs state that needs more
            // levels than the input still has a well-defined energy, so build it
            // at the size it needs.
            Err(HilbertError::Truncation { required, .. }) => make_state_with_budget(&spec, required, budget)?,
            Err(e) => return Err(e),
        }
    };
    Ok(GibbsEquivalent { state, nbar, temperature: temperature_of_occupancy(nbar, omega), entropy })
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(a) b sqrt(a)))^2`. States of different
/// truncation are compared on the larger basis (missing levels are empty).
pub fn fidelity(a: &FockState, b: &FockState) -> f64 {
    let n = a.dim().max(b.dim());
    let pad = |s: &FockState| {
        let mut m = DMatrix::<C64>::zeros(n, n);
        m.view_mut((0, 0), (s.dim(), s.dim())).copy_from(&s.matrix);
        m
    };
    let (ma, mb) = (pad(a), pad(b));
    if is_diagonal(&ma) && is_diagonal(&mb) {
        let f: f64 = (0..n).map(|i| (ma[(i, i)].re.max(0.0) * mb[(i, i)].re.max(0.0)).sqrt()).sum();
        return f * f;
    }
    let eig = nalgebra::SymmetricEigen::new(ma);
    let sq = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)));
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.adjoint();
    let inner = &root * mb * &root;
    let ev = inner.symmetric_eigenvalues();
    // Rounding noise on zero eigenvalues would otherwise enter as its square root.
    let floor = 1e-13 * ev.iter().fold(0.0f64, |a, &l| a.max(l));
    let f: f64 = ev.iter().filter(|&&l| l > floor).map(|&l| l.sqrt()).sum();
    f * f
}

/// Upper bound on extractable work: `E(s) - E(Gibbs state with S(s))`.
pub fn bound_ergotropy(s: &FockState) -> Result<f64, HilbertError> {
    let g = gibbs_equivalent(s)?;
    Ok(mean_energy(s) - g.energy())
}

/// Everything the work accounting needs from one eigen-decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkSummary {
    pub energy: f64,
    pub entropy: f64,
    pub ergotropy: f64,
    pub bound_ergotropy: f64,
    pub temperature: f64,
}

pub fn work_summary(s: &FockState) -> Result<WorkSummary, HilbertError> {
    let ev = s.spectrum();
    let energy = mean_energy(s);
    let entropy = spectrum_entropy(&ev);
    if entropy > (s.dim() as f64).ln() + 1e-12 {
        return Err(HilbertError::EntropyTooLarge { entropy, dim: s.dim() });
    }
    let nbar = thermal_occupancy_for_entropy(entropy);
    Ok(WorkSummary {
        energy,
        entropy,
        ergotropy: energy - passive_energy(&ev, s.omega),
        bound_ergotropy: energy - s.omega * nbar,
        temperature: temperature_of_occupancy(nbar, s.omega),
    })
}
