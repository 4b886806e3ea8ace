//! Fock-space oracle for the coupled optical and mechanical modes.
//!
//! Every jump operator of the engine is a monomial in `O`, `O^dagger`, `M`,
//! `M^dagger`, so the generator maps a matrix element `|n,m><n',m'|` only to
//! elements with the same offsets `(n - n', m - m')`. The joint density matrix
//! is therefore stored as independent *sectors*, one per offset pair, and each
//! sector evolves under its own real banded generator. Only sectors with
//! `k_O > 0`, or `k_O = 0` and `k_M >= 0`, are stored; the rest follow by
//! Hermiticity. Sectors that start out negligibly small are dropped because
//! the sector projection commutes with the dynamics.

mod banded;
pub mod integrator;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::baths::{BathError, BathLabel, EngineParams, Harmonics};
use crate::hilbert::{FockState, HilbertError};

pub use integrator::{evolve, evolve_with, EvolveOptions, EvolveStats};

use banded::Banded;

/// Sectors whose Frobenius norm falls below this are not stored.
pub const SECTOR_PRUNE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LindbladError {
    #[error("joint truncation needs dim_O, dim_M >= 2 (got {dim_o}x{dim_m})")]
    DimTooSmall { dim_o: usize, dim_m: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("step size control failed at t = {t}: step {h:e} still has error estimate {err:e}")]
    StepFailure { t: f64, h: f64, err: f64 },
    #[error("population {population:e} in the top {mode} level at t = {t} exceeds {limit:e}; raise dim_{mode}")]
    TruncationLeak { t: f64, mode: &'static str, population: f64, limit: f64 },
    #[error("population {value:e} below the positivity floor at t = {t}")]
    NotPositive { t: f64, value: f64 },
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),
    #[error("dense representation of {0} levels requested; limit is 64")]
    DenseTooLarge(usize),
}

/// Jump operators; `O` lowers the optical mode, `M` the mechanical one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpOp {
    O,
    ODag,
    /// `W_1 = O M`
    OM,
    ODagMDag,
    /// `W_-1 = O M^dagger`
    OMDag,
    ODagM,
    M,
    MDag,
}

impl JumpOp {
    /// Change `(dn_O, dn_M)` caused by the operator.
    pub fn shift(self) -> (i32, i32) {
        match self {
            JumpOp::O => (-1, 0),
            JumpOp::ODag => (1, 0),
            JumpOp::OM => (-1, -1),
            JumpOp::ODagMDag => (1, 1),
            JumpOp::OMDag => (-1, 1),
            JumpOp::ODagM => (1, -1),
            JumpOp::M => (0, -1),
            JumpOp::MDag => (0, 1),
        }
    }

    /// Matrix element `<n+s_O, m+s_M| A |n, m>` (before truncation).
    #[inline]
    pub fn coeff(self, n: usize, m: usize) -> f64 {
        let (n, m) = (n as f64, m as f64);
        match self {
            JumpOp::O => n.sqrt(),
            JumpOp::ODag => (n + 1.0).sqrt(),
            JumpOp::OM => (n * m).sqrt(),
            JumpOp::ODagMDag => ((n + 1.0) * (m + 1.0)).sqrt(),
            JumpOp::OMDag => (n * (m + 1.0)).sqrt(),
            JumpOp::ODagM => ((n + 1.0) * m).sqrt(),
            JumpOp::M => m.sqrt(),
            JumpOp::MDag => (m + 1.0).sqrt(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            JumpOp::O => "O",
            JumpOp::ODag => "O+",
            JumpOp::OM => "O M",
            JumpOp::ODagMDag => "O+ M+",
            JumpOp::OMDag => "O M+",
            JumpOp::ODagM => "O+ M",
            JumpOp::M => "M",
            JumpOp::MDag => "M+",
        }
    }
}

/// One dissipator `rate * D[A]` with `D[A] rho = A rho A^dagger - {A^dagger A, rho}/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub bath: BathLabel,
    /// Harmonic index: 0 for `w_O`, +1 for `w_+`, -1 for `w_-`; 0 for the phonon bath.
    pub harmonic: i8,
    pub op: JumpOp,
    /// Signed frequency at which the bath response was sampled.
    pub frequency: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSet {
    pub dim_o: usize,
    pub dim_m: usize,
    pub channels: Vec<Channel>,
}

/// Builds the joint generator.
///
/// The sideband dissipators carry the prefactor `(g/Omega_M)^2`: the
/// commutator form with `g^2/(2 Omega_M^2)` equals `(g/Omega_M)^2 G D[W]`.
pub fn build_generators(p: &EngineParams, dim_o: usize, dim_m: usize) -> Result<GeneratorSet, LindbladError> {
    if dim_o < 2 || dim_m < 2 {
        return Err(LindbladError::DimTooSmall { dim_o, dim_m });
    }
    p.validate()?;
    let h = Harmonics::new(p)?;
    let k = p.coupling_sq();
    let mut channels = Vec::with_capacity(14);
    for (bath, s) in [(BathLabel::Hot, &h.hot), (BathLabel::Cold, &h.cold)] {
        let mut push = |harmonic, op, frequency, rate| channels.push(Channel { bath, harmonic, op, frequency, rate });
        push(0, JumpOp::O, h.omega_o, s.o_down);
        push(0, JumpOp::ODag, -h.omega_o, s.o_up);
        push(1, JumpOp::OM, h.omega_plus, k * s.plus_down);
        push(1, JumpOp::ODagMDag, -h.omega_plus, k * s.plus_up);
        push(-1, JumpOp::OMDag, h.omega_minus, k * s.minus_down);
        push(-1, JumpOp::ODagM, -h.omega_minus, k * s.minus_up);
    }
    let phonon = BathLabel::Phonon;
    channels.push(Channel { bath: phonon, harmonic: 0, op: JumpOp::M, frequency: p.omega_m, rate: p.gamma_m * (p.n_m_th + 1.0) });
    channels.push(Channel { bath: phonon, harmonic: 0, op: JumpOp::MDag, frequency: -p.omega_m, rate: p.gamma_m * p.n_m_th });
    Ok(GeneratorSet { dim_o, dim_m, channels })
}

impl GeneratorSet {
    /// Generator of a single bath (used for per-bath heat currents).
    pub fn restricted_to(&self, bath: BathLabel) -> Self {
        Self { channels: self.channels.iter().filter(|c| c.bath == bath).copied().collect(), ..self.clone() }
    }

    pub fn without_sidebands(&self) -> Self {
        Self { channels: self.channels.iter().filter(|c| c.harmonic == 0).copied().collect(), ..self.clone() }
    }

    pub fn rate(&self, bath: BathLabel, op: JumpOp) -> f64 {
        self.channels.iter().filter(|c| c.bath == bath && c.op == op).map(|c| c.rate).sum()
    }

    fn active(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.rate > 0.0)
    }

    /// Total decay rate `sum_A rate |<x+s|A|x>|^2` of every joint level,
    /// with transitions leaving the truncated space excluded.
    pub(crate) fn loss_table(&self) -> Vec<f64> {
        let (d_o, d_m) = (self.dim_o, self.dim_m);
        let mut lam = vec![0.0; d_o * d_m];
        for c in self.active() {
            let (so, sm) = c.op.shift();
            for n in 0..d_o {
                let n2 = n as i64 + so as i64;
                if n2 < 0 || n2 >= d_o as i64 {
                    continue;
                }
                for m in 0..d_m {
                    let m2 = m as i64 + sm as i64;
                    if m2 < 0 || m2 >= d_m as i64 {
                        continue;
                    }
                    lam[n * d_m + m] += c.rate * c.op.coeff(n, m).powi(2);
                }
            }
        }
        lam
    }

    pub(crate) fn sector_operator(&self, ko: i32, km: i32, loss: &[f64]) -> Banded {
        let lay = Layout::new(self.dim_o, self.dim_m, ko, km);
        let half = if lay.nm > 1 { lay.no + 1 } else { 1 };
        let mut b = Banded::zeros(lay.len(), half, half);
        for q in 0..lay.nm {
            for pp in 0..lay.no {
                let i = lay.index(pp, q);
                let (n, m, n2, m2) = lay.full(pp, q);
                b.add(i, i, -0.5 * (loss[n * self.dim_m + m] + loss[n2 * self.dim_m + m2]));
                for c in self.active() {
                    let (so, sm) = c.op.shift();
                    let sp = pp as i64 - so as i64;
                    let sq = q as i64 - sm as i64;
                    if sp < 0 || sp >= lay.no as i64 || sq < 0 || sq >= lay.nm as i64 {
                        continue;
                    }
                    let (sp, sq) = (sp as usize, sq as usize);
                    let (a, bm, a2, b2) = lay.full(sp, sq);
                    let v = c.rate * c.op.coeff(a, bm) * c.op.coeff(a2, b2);
                    if v != 0.0 {
                        b.add(i, lay.index(sp, sq), v);
                    }
                }
            }
        }
        b
    }

    /// `L rho`, sector by sector.
    pub fn apply(&self, s: &JointState) -> JointState {
        let loss = self.loss_table();
        let sectors = s
            .sectors
            .iter()
            .map(|sec| {
                let op = self.sector_operator(sec.ko, sec.km, &loss);
                let mut out = vec![C64::new(0.0, 0.0); sec.data.len()];
                op.matvec(&sec.data, &mut out);
                Sector { ko: sec.ko, km: sec.km, data: out }
            })
            .collect();
        JointState { dim_o: s.dim_o, dim_m: s.dim_m, sectors }
    }

    /// Dense superoperator acting on row-major `vec(rho)`, built directly
    /// from `A rho A^dagger - {A^dagger A, rho}/2` with truncated matrices.
    pub fn dense_superoperator(&self) -> Result<DMatrix<C64>, LindbladError> {
        let d = self.dim_o * self.dim_m;
        if d > 64 {
            return Err(LindbladError::DenseTooLarge(d));
        }
        let mut sup = DMatrix::<C64>::zeros(d * d, d * d);
        let id = DMatrix::<C64>::identity(d, d);
        for c in self.active() {
            let a = self.dense_op(c.op);
            let ad = a.adjoint();
            let ada = &ad * &a;
            // row-major vec: vec(X rho Y) = (X kron Y^T) vec(rho)
            sup += (a.kronecker(&a.conjugate()) - (ada.kronecker(&id) + id.kronecker(&ada.transpose())) * C64::new(0.5, 0.0))
                * C64::new(c.rate, 0.0);
        }
        Ok(sup)
    }

    pub fn dense_op(&self, op: JumpOp) -> DMatrix<C64> {
        let (d_o, d_m) = (self.dim_o, self.dim_m);
        let d = d_o * d_m;
        let mut a = DMatrix::<C64>::zeros(d, d);
        let (so, sm) = op.shift();
        for n in 0..d_o {
            for m in 0..d_m {
                let n2 = n as i64 + so as i64;
                let m2 = m as i64 + sm as i64;
                if n2 < 0 || n2 >= d_o as i64 || m2 < 0 || m2 >= d_m as i64 {
                    continue;
                }
                a[(n2 as usize * d_m + m2 as usize, n * d_m + m)] = C64::new(op.coeff(n, m), 0.0);
            }
        }
        a
    }
}

/// Index map of one sector: element `(p, q)` is `|p + r_O, q + r_M><p + c_O, q + c_M|`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub no: usize,
    pub nm: usize,
    ro: usize,
    rm: usize,
    co: usize,
    cm: usize,
}

impl Layout {
    pub fn new(dim_o: usize, dim_m: usize, ko: i32, km: i32) -> Self {
        Self {
            no: dim_o - ko.unsigned_abs() as usize,
            nm: dim_m - km.unsigned_abs() as usize,
            ro: ko.max(0) as usize,
            rm: km.max(0) as usize,
            co: (-ko).max(0) as usize,
            cm: (-km).max(0) as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.no * self.nm
    }

    #[inline]
    pub fn index(&self, p: usize, q: usize) -> usize {
        q * self.no + p
    }

    /// `(n, m, n', m')`
    #[inline]
    pub fn full(&self, p: usize, q: usize) -> (usize, usize, usize, usize) {
        (p + self.ro, q + self.rm, p + self.co, q + self.cm)
    }
}

fn canonical(ko: i32, km: i32) -> bool {
    ko > 0 || (ko == 0 && km >= 0)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Sector {
    pub ko: i32,
    pub km: i32,
    pub data: Vec<C64>,
}

impl Sector {
    fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Joint density matrix of the optical and mechanical modes on
/// `|n_O> (x) |n_M>`, stored by sectors.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    dim_o: usize,
    dim_m: usize,
    pub(crate) sectors: Vec<Sector>,
}

impl JointState {
    pub fn dim_o(&self) -> usize {
        self.dim_o
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn sector_count(&self) -> usize {
        self.sectors.len()
    }

    /// Number of stored complex amplitudes.
    pub fn stored_len(&self) -> usize {
        self.sectors.iter().map(|s| s.data.len()).sum()
    }

    fn build<F: Fn(usize, usize, usize, usize) -> C64>(dim_o: usize, dim_m: usize, f: F) -> Self {
        let mut sectors = Vec::new();
        for ko in 0..dim_o as i32 {
            let km_lo = if ko == 0 { 0 } else { -(dim_m as i32 - 1) };
            for km in km_lo..dim_m as i32 {
                debug_assert!(canonical(ko, km));
                let lay = Layout::new(dim_o, dim_m, ko, km);
                let mut data = vec![C64::new(0.0, 0.0); lay.len()];
                for q in 0..lay.nm {
                    for p in 0..lay.no {
                        let (n, m, n2, m2) = lay.full(p, q);
                        data[lay.index(p, q)] = f(n, m, n2, m2);
                    }
                }
                let s = Sector { ko, km, data };
                if (ko == 0 && km == 0) || s.norm() >= SECTOR_PRUNE {
                    sectors.push(s);
                }
            }
        }
        Self { dim_o, dim_m, sectors }
    }

    /// `rho_O (x) rho_M`
    pub fn from_product(rho_o: &FockState, rho_m: &FockState) -> Self {
        let (a, b) = (rho_o.matrix(), rho_m.matrix());
        Self::build(rho_o.dim(), rho_m.dim(), |n, m, n2, m2| a[(n, n2)] * b[(m, m2)])
    }

    /// From a dense matrix in O-major ordering (`index = n * dim_m + m`).
    pub fn from_dense(matrix: &DMatrix<C64>, dim_o: usize, dim_m: usize) -> Result<Self, LindbladError> {
        if matrix.nrows() != dim_o * dim_m || matrix.ncols() != dim_o * dim_m {
            return Err(LindbladError::DimMismatch(format!(
                "{}x{} matrix for {dim_o}x{dim_m} modes",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self::build(dim_o, dim_m, |n, m, n2, m2| matrix[(n * dim_m + m, n2 * dim_m + m2)]))
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>, LindbladError> {
        let d = self.dim_o * self.dim_m;
        if d > 4096 {
            return Err(LindbladError::DenseTooLarge(d));
        }
        let mut out = DMatrix::<C64>::zeros(d, d);
        for s in &self.sectors {
            let lay = Layout::new(self.dim_o, self.dim_m, s.ko, s.km);
            for q in 0..lay.nm {
                for p in 0..lay.no {
                    let (n, m, n2, m2) = lay.full(p, q);
                    let v = s.data[lay.index(p, q)];
                    let (i, j) = (n * self.dim_m + m, n2 * self.dim_m + m2);
                    out[(i, j)] = v;
                    out[(j, i)] = v.conj();
                }
            }
        }
        Ok(out)
    }

    fn sector(&self, ko: i32, km: i32) -> Option<&Sector> {
        self.sectors.iter().find(|s| s.ko == ko && s.km == km)
    }

    /// Element `<n,m| rho |n',m'>`.
    pub fn element(&self, n: usize, m: usize, n2: usize, m2: usize) -> C64 {
        let (ko, km) = (n as i32 - n2 as i32, m as i32 - m2 as i32);
        if !canonical(ko, km) {
            return self.element(n2, m2, n, m).conj();
        }
        match self.sector(ko, km) {
            Some(s) => {
                let lay = Layout::new(self.dim_o, self.dim_m, ko, km);
                s.data[lay.index(n.min(n2), m.min(m2))]
            }
            None => C64::new(0.0, 0.0),
        }
    }

    /// Joint populations `p[n * dim_m + m]`.
    pub fn populations(&self) -> Vec<f64> {
        let s = self.sector(0, 0).expect("diagonal sector is always stored");
        let mut out = vec![0.0; self.dim_o * self.dim_m];
        for q in 0..self.dim_m {
            for p in 0..self.dim_o {
                out[p * self.dim_m + q] = s.data[q * self.dim_o + p].re;
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.sector(0, 0).map(|s| s.data.iter().map(|z| z.re).sum()).unwrap_or(0.0)
    }

    pub fn min_population(&self) -> f64 {
        self.sector(0, 0).map(|s| s.data.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)).unwrap_or(0.0)
    }

    /// Population in the top retained level of `(O, M)`.
    pub fn top_populations(&self) -> (f64, f64) {
        let pops = self.populations();
        let top_o = (0..self.dim_m).map(|m| pops[(self.dim_o - 1) * self.dim_m + m]).sum();
        let top_m = (0..self.dim_o).map(|n| pops[n * self.dim_m + self.dim_m - 1]).sum();
        (top_o, top_m)
    }

    fn reduced_matrix_m(&self) -> DMatrix<C64> {
        let d = self.dim_m;
        let mut r = DMatrix::<C64>::zeros(d, d);
        for s in self.sectors.iter().filter(|s| s.ko == 0) {
            let lay = Layout::new(self.dim_o, d, 0, s.km);
            for q in 0..lay.nm {
                let v: C64 = (0..lay.no).map(|p| s.data[lay.index(p, q)]).sum();
                let (m, m2) = (q + lay.rm, q + lay.cm);
                r[(m, m2)] = v;
                r[(m2, m)] = v.conj();
            }
        }
        r
    }

    fn reduced_matrix_o(&self) -> DMatrix<C64> {
        let d = self.dim_o;
        let mut r = DMatrix::<C64>::zeros(d, d);
        for s in self.sectors.iter().filter(|s| s.km == 0) {
            let lay = Layout::new(d, self.dim_m, s.ko, 0);
            for p in 0..lay.no {
                let v: C64 = (0..lay.nm).map(|q| s.data[lay.index(p, q)]).sum();
                let (n, n2) = (p + lay.ro, p + lay.co);
                r[(n, n2)] = v;
                r[(n2, n)] = v.conj();
            }
        }
        r
    }

    /// `<n_O>`, `<n_M>`, `<M>`, `<n_O n_M>` in one pass.
    pub fn moments(&self) -> JointMoments {
        let pops = self.populations();
        let (mut n_o, mut n_m, mut corr) = (0.0, 0.0, 0.0);
        for n in 0..self.dim_o {
            for m in 0..self.dim_m {
                let p = pops[n * self.dim_m + m];
                n_o += n as f64 * p;
                n_m += m as f64 * p;
                corr += (n * m) as f64 * p;
            }
        }
        let mut mean_m = C64::new(0.0, 0.0);
        if let Some(s) = self.sector(0, 1) {
            let lay = Layout::new(self.dim_o, self.dim_m, 0, 1);
            for q in 0..lay.nm {
                let v: C64 = (0..lay.no).map(|p| s.data[lay.index(p, q)]).sum();
                mean_m += v * ((q + 1) as f64).sqrt();
            }
        }
        JointMoments { n_o, n_m, mean_m, n_o_n_m: corr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointMoments {
    pub n_o: f64,
    pub n_m: f64,
    /// `<M> = Tr(M rho)`
    pub mean_m: C64,
    pub n_o_n_m: f64,
}

/// Partial trace over the optical mode.
pub fn reduced_m(s: &JointState, omega_m: f64) -> FockState {
    FockState::from_matrix_unchecked(s.reduced_matrix_m(), omega_m)
}

/// Partial trace over the mechanical mode.
pub fn reduced_o(s: &JointState, omega_o: f64) -> FockState {
    FockState::from_matrix_unchecked(s.reduced_matrix_o(), omega_o)
}

/// Diagonal energy `H = w_O n - kerr n^2 + Omega m` used for heat accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub omega_o: f64,
    pub omega_m: f64,
    /// `g^2 / Omega_M` when the dressing shift is included, otherwise 0.
    pub kerr: f64,
}

impl EnergyModel {
    pub fn new(p: &EngineParams, dressing: bool) -> Self {
        Self { omega_o: p.omega_o, omega_m: p.omega_m, kerr: if dressing { p.g * p.g / p.omega_m } else { 0.0 } }
    }

    #[inline]
    pub fn energy(&self, n: usize, m: usize) -> f64 {
        let nf = n as f64;
        self.omega_o * nf - self.kerr * nf * nf + self.omega_m * m as f64
    }

    pub fn mean(&self, s: &JointState) -> f64 {
        let pops = s.populations();
        let mut e = 0.0;
        for n in 0..s.dim_o {
            for m in 0..s.dim_m {
                e += self.energy(n, m) * pops[n * s.dim_m + m];
            }
        }
        e
    }
}

/// Heat currents into the modes, `J_j = Tr(H L_j rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatCurrents {
    pub hot: f64,
    pub cold: f64,
    pub phonon: f64,
}

impl HeatCurrents {
    pub fn total(&self) -> f64 {
        self.hot + self.cold + self.phonon
    }
}

/// Current contributed by one channel. Only populations enter because the
/// energy operator is diagonal.
pub fn channel_current(s: &JointState, c: &Channel, energy: &EnergyModel) -> f64 {
    if c.rate == 0.0 {
        return 0.0;
    }
    let pops = s.populations();
    let (so, sm) = c.op.shift();
    let mut j = 0.0;
    for n in 0..s.dim_o {
        let n2 = n as i64 + so as i64;
        if n2 < 0 || n2 >= s.dim_o as i64 {
            continue;
        }
        for m in 0..s.dim_m {
            let m2 = m as i64 + sm as i64;
            if m2 < 0 || m2 >= s.dim_m as i64 {
                continue;
            }
            let p = pops[n * s.dim_m + m];
            if p == 0.0 {
                continue;
            }
            let de = energy.energy(n2 as usize, m2 as usize) - energy.energy(n, m);
            j += p * c.op.coeff(n, m).powi(2) * de;
        }
    }
    c.rate * j
}

pub fn heat_currents(s: &JointState, gens: &GeneratorSet, energy: &EnergyModel) -> HeatCurrents {
    let mut hc = HeatCurrents { hot: 0.0, cold: 0.0, phonon: 0.0 };
    for c in &gens.channels {
        let j = channel_current(s, c, energy);
        match c.bath {
            BathLabel::Hot => hc.hot += j,
            BathLabel::Cold => hc.cold += j,
            BathLabel::Phonon => hc.phonon += j,
        }
    }
    hc
}

/// Empirical drift and diffusion of the mechanical mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftDiffusionFit {
    /// `gamma_emp = a - Gamma_M`
    pub gamma: f64,
    pub d: f64,
    /// Fitted `a = gamma + Gamma_M`.
    pub drift: f64,
    /// Standard error of the drift from the regression residuals.
    pub drift_stderr: f64,
    /// RMS relative residual of the occupation fit.
    pub occupation_residual: f64,
}

/// Fits `d<M>/dt = -(a/2) <M>` (log-linear regression on `|<M>|`) and then
/// `N(t) = e^{-a t} N_0 + d (1 - e^{-a t}) / a` for `d`. Without usable
/// amplitudes, `a` and `d` come from regressing centered differences of `N`
/// on `N`.
pub fn fit_drift_diffusion(
    times: &[f64],
    means: Option<&[C64]>,
    occupations: &[f64],
    gamma_m: f64,
) -> Result<DriftDiffusionFit, LindbladError> {
    let k = times.len();
    if k < 3 || occupations.len() != k || means.is_some_and(|m| m.len() != k) {
        return Err(LindbladError::IllConditioned(format!("need >= 3 aligned samples (got {k})")));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LindbladError::BadGrid("times must be strictly increasing".into()));
    }
    let tbar = times.iter().sum::<f64>() / k as f64;
    let sxx: f64 = times.iter().map(|t| (t - tbar).powi(2)).sum();
    let span = times[k - 1] - times[0];
    let usable = means.filter(|m| m.iter().all(|z| z.norm() > 1e-10));
    let (drift, drift_stderr) = if let Some(ms) = usable {
        let y: Vec<f64> = ms.iter().map(|z| z.norm().ln()).collect();
        let ybar = y.iter().sum::<f64>() / k as f64;
        let slope = times.iter().zip(&y).map(|(t, v)| (t - tbar) * (v - ybar)).sum::<f64>() / sxx;
        let icpt = ybar - slope * tbar;
        let rss: f64 = times.iter().zip(&y).map(|(t, v)| (v - icpt - slope * t).powi(2)).sum();
        let se = if k > 2 { (rss / (k - 2) as f64 / sxx).sqrt() } else { f64::INFINITY };
        (-2.0 * slope, 2.0 * se)
    } else {
        let mut xs = Vec::with_capacity(k - 2);
        let mut ys = Vec::with_capacity(k - 2);
        for i in 1..k - 1 {
            xs.push(occupations[i]);
            ys.push((occupations[i + 1] - occupations[i - 1]) / (times[i + 1] - times[i - 1]));
        }
        let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
        let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx_n: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        if !(sxx_n > 1e-20 * (1.0 + xbar * xbar)) {
            return Err(LindbladError::IllConditioned(format!(
                "occupation barely changes (variance {sxx_n:e}); drift not identifiable without <M>"
            )));
        }
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum::<f64>() / sxx_n;
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ybar - slope * (x - xbar)).powi(2)).sum();
        let se = (rss / (xs.len().max(3) - 2) as f64 / sxx_n).sqrt();
        (-slope, se)
    };
    let n0 = occupations[0];
    let f = |tau: f64| {
        let x = drift * tau;
        if x.abs() < 1e-8 {
            tau * (1.0 - 0.5 * x)
        } else {
            -(-x).exp_m1() / drift
        }
    };
    let (mut sfy, mut sff) = (0.0, 0.0);
    for i in 1..k {
        let tau = times[i] - times[0];
        let fi = f(tau);
        let yi = occupations[i] - (-drift * tau).exp() * n0;
        sfy += fi * yi;
        sff += fi * fi;
    }
    if !(sff > 1e-24 * span * span) {
        return Err(LindbladError::IllConditioned(format!("diffusion regressor vanishes (sum f^2 = {sff:e})")));
    }
    let d = sfy / sff;
    let mut res = 0.0;
    for i in 0..k {
        let tau = times[i] - times[0];
        let model = (-drift * tau).exp() * n0 + d * f(tau);
        res += ((occupations[i] - model) / occupations[i].abs().max(1e-12)).powi(2);
    }
    Ok(DriftDiffusionFit {
        gamma: drift - gamma_m,
        d,
        drift,
        drift_stderr,
        occupation_residual: (res / k as f64).sqrt(),
    })
}

/// Fits drift and diffusion to an oracle trajectory.
pub fn extract_drift_diffusion(trajectory: &[(f64, JointState)], gamma_m: f64) -> Result<DriftDiffusionFit, LindbladError> {
    let times: Vec<f64> = trajectory.iter().map(|(t, _)| *t).collect();
    let mom: Vec<JointMoments> = trajectory.iter().map(|(_, s)| s.moments()).collect();
    let means: Vec<C64> = mom.iter().map(|m| m.mean_m).collect();
    let occ: Vec<f64> = mom.iter().map(|m| m.n_m).collect();
    fit_drift_diffusion(&times, Some(&means), &occ, gamma_m)
}
