//! Bath response spectra and the rates they induce on the mechanical mode.
//!
//! A spectrum stores only its positive-frequency shape; the response at
//! negative frequency always follows from detailed balance,
//! `G(-w) = exp(-w/T) G(w)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BathError {
    #[error("bath temperature must be finite and >= 0 (got {0})")]
    InvalidTemperature(f64),
    #[error("invalid spectrum shape: {0}")]
    InvalidShape(String),
    #[error("frequency {omega} outside tabulated range [{lo}, {hi}]")]
    OutOfRange { omega: f64, lo: f64, hi: f64 },
    #[error("no optical steady state (population inversion): G(-w_O)/G(w_O) = {0}")]
    PopulationInversion(f64),
    #[error("invalid engine parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BathLabel {
    Hot,
    Cold,
    Phonon,
}

impl fmt::Display for BathLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BathLabel::Hot => "hot",
            BathLabel::Cold => "cold",
            BathLabel::Phonon => "phonon",
        })
    }
}

/// Positive-frequency shape of a coupling spectrum.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumShape {
    /// `peak * (w/2)^2 / ((omega - center)^2 + (w/2)^2)`, `width` is the FWHM.
    Lorentzian { center: f64, width: f64, peak: f64 },
    /// `peak` everywhere except a zero stop band `[stop_lo, stop_hi]`,
    /// joined to the pass band by raised-cosine ramps of width `edge`
    /// lying outside the stop band.
    BandStop { peak: f64, stop_lo: f64, stop_hi: f64, edge: f64 },
    Flat { peak: f64 },
    /// Sorted `(omega, G)` samples, linearly interpolated.
    Tabulated(Vec<(f64, f64)>),
}

impl SpectrumShape {
    pub fn validate(&self) -> Result<(), BathError> {
        let bad = |m: &str| Err(BathError::InvalidShape(m.to_string()));
        match self {
            SpectrumShape::Lorentzian { center, width, peak } => {
                if !(width.is_finite() && *width > 0.0) {
                    return bad("lorentzian width must be > 0");
                }
                if !(peak.is_finite() && *peak >= 0.0 && center.is_finite()) {
                    return bad("lorentzian peak must be >= 0");
                }
            }
            SpectrumShape::BandStop { peak, stop_lo, stop_hi, edge } => {
                if !(peak.is_finite() && *peak >= 0.0) {
                    return bad("band-stop peak must be >= 0");
                }
                if !(stop_lo.is_finite() && stop_hi.is_finite() && stop_lo <= stop_hi) {
                    return bad("band-stop needs stop_lo <= stop_hi");
                }
                if !(edge.is_finite() && *edge >= 0.0) {
                    return bad("band-stop edge must be >= 0");
                }
            }
            SpectrumShape::Flat { peak } => {
                if !(peak.is_finite() && *peak >= 0.0) {
                    return bad("flat peak must be >= 0");
                }
            }
            SpectrumShape::Tabulated(pts) => {
                if pts.len() < 2 {
                    return bad("tabulated spectrum needs at least two points");
                }
                if pts.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return bad("tabulated frequencies must be strictly increasing");
                }
                if pts.iter().any(|(w, g)| !(w.is_finite() && g.is_finite() && *g >= 0.0)) {
                    return bad("tabulated values must be finite and >= 0");
                }
            }
        }
        Ok(())
    }

    /// Shape value at `omega >= 0`.
    pub fn eval(&self, omega: f64) -> Result<f64, BathError> {
        Ok(match self {
            SpectrumShape::Lorentzian { center, width, peak } => {
                let h = 0.5 * width;
                peak * h * h / ((omega - center).powi(2) + h * h)
            }
            SpectrumShape::BandStop { peak, stop_lo, stop_hi, edge } => {
                if omega >= *stop_lo && omega <= *stop_hi {
                    0.0
                } else {
                    let dist = if omega > *stop_hi { omega - stop_hi } else { stop_lo - omega };
                    if dist >= *edge {
                        *peak
                    } else {
                        peak * 0.5 * (1.0 - (std::f64::consts::PI * dist / edge).cos())
                    }
                }
            }
            SpectrumShape::Flat { peak } => *peak,
            SpectrumShape::Tabulated(pts) => {
                let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
                if omega < lo || omega > hi {
                    return Err(BathError::OutOfRange { omega, lo, hi });
                }
                let i = pts.partition_point(|p| p.0 <= omega).clamp(1, pts.len() - 1);
                let (w0, g0) = pts[i - 1];
                let (w1, g1) = pts[i];
                g0 + (g1 - g0) * (omega - w0) / (w1 - w0)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathSpectrum {
    pub label: BathLabel,
    pub temperature: f64,
    pub shape: SpectrumShape,
}

/// `exp(-omega / T)`, with the `T -> 0` limit taken for `omega > 0`.
pub fn boltzmann(omega: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        if omega > 0.0 {
            0.0
        } else if omega == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (-omega / temperature).exp()
    }
}

/// Planck occupancy `1 / (exp(omega/T) - 1)`.
pub fn planck(omega: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        0.0
    } else {
        1.0 / (omega / temperature).exp_m1()
    }
}

impl BathSpectrum {
    /// A temperature of exactly 0 is accepted as the zero-temperature limit.
    pub fn new(label: BathLabel, temperature: f64, shape: SpectrumShape) -> Result<Self, BathError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(BathError::InvalidTemperature(temperature));
        }
        shape.validate()?;
        Ok(Self { label, temperature, shape })
    }

    /// Signed-frequency response; see [`response`].
    pub fn response(&self, omega: f64) -> Result<f64, BathError> {
        let g = self.shape.eval(omega.abs())?;
        Ok(if omega < 0.0 { g * boltzmann(-omega, self.temperature) } else { g })
    }
}

pub fn response(b: &BathSpectrum, omega: f64) -> Result<f64, BathError> {
    b.response(omega)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineParams {
    pub omega_o: f64,
    pub omega_m: f64,
    pub g: f64,
    pub hot: BathSpectrum,
    pub cold: BathSpectrum,
    pub gamma_m: f64,
    pub n_m_th: f64,
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), BathError> {
        let err = |m: String| Err(BathError::InvalidParams(m));
        if !(self.omega_m > 0.0 && self.omega_m.is_finite()) {
            return err(format!("Omega_M must be > 0 (got {})", self.omega_m));
        }
        if !(self.omega_o > self.omega_m && self.omega_o.is_finite()) {
            return err(format!("omega_O must exceed Omega_M (got {} <= {})", self.omega_o, self.omega_m));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return err(format!("g must be >= 0 (got {})", self.g));
        }
        if !(self.gamma_m >= 0.0 && self.gamma_m.is_finite()) {
            return err(format!("Gamma_M must be >= 0 (got {})", self.gamma_m));
        }
        if !(self.n_m_th >= 0.0 && self.n_m_th.is_finite()) {
            return err(format!("n_M_th must be >= 0 (got {})", self.n_m_th));
        }
        Ok(())
    }

    pub fn omega_plus(&self) -> f64 {
        self.omega_o + self.omega_m
    }

    pub fn omega_minus(&self) -> f64 {
        self.omega_o - self.omega_m
    }

    /// `(g / Omega_M)^2`
    pub fn coupling_sq(&self) -> f64 {
        (self.g / self.omega_m).powi(2)
    }

    /// `d_M = Gamma_M * n_M_th`
    pub fn d_m(&self) -> f64 {
        self.gamma_m * self.n_m_th
    }

    pub fn bath(&self, label: BathLabel) -> Option<&BathSpectrum> {
        match label {
            BathLabel::Hot => Some(&self.hot),
            BathLabel::Cold => Some(&self.cold),
            BathLabel::Phonon => None,
        }
    }

    /// Same engine with both optical baths replaced by `bath`, with its
    /// response split evenly so the combined `G` equals the bath's own.
    pub fn single_bath(&self, bath: &BathSpectrum) -> Self {
        let half = |label| BathSpectrum {
            label,
            temperature: bath.temperature,
            shape: scaled_shape(&bath.shape, 0.5),
        };
        Self { hot: half(BathLabel::Hot), cold: half(BathLabel::Cold), ..self.clone() }
    }
}

fn scaled_shape(s: &SpectrumShape, k: f64) -> SpectrumShape {
    match s {
        SpectrumShape::Lorentzian { center, width, peak } => {
            SpectrumShape::Lorentzian { center: *center, width: *width, peak: peak * k }
        }
        SpectrumShape::BandStop { peak, stop_lo, stop_hi, edge } => {
            SpectrumShape::BandStop { peak: peak * k, stop_lo: *stop_lo, stop_hi: *stop_hi, edge: *edge }
        }
        SpectrumShape::Flat { peak } => SpectrumShape::Flat { peak: peak * k },
        SpectrumShape::Tabulated(p) => SpectrumShape::Tabulated(p.iter().map(|(w, g)| (*w, g * k)).collect()),
    }
}

/// One bath sampled at the engine harmonics. `*_down` is `G(+w)`
/// (emission into the bath), `*_up` is `G(-w)` (absorption from it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSamples {
    pub o_down: f64,
    pub o_up: f64,
    pub plus_down: f64,
    pub plus_up: f64,
    pub minus_down: f64,
    pub minus_up: f64,
}

impl BathSamples {
    fn new(b: &BathSpectrum, wo: f64, wp: f64, wm: f64) -> Result<Self, BathError> {
        Ok(Self {
            o_down: b.response(wo)?,
            o_up: b.response(-wo)?,
            plus_down: b.response(wp)?,
            plus_up: b.response(-wp)?,
            minus_down: b.response(wm)?,
            minus_up: b.response(-wm)?,
        })
    }

    fn add(&self, o: &Self) -> Self {
        Self {
            o_down: self.o_down + o.o_down,
            o_up: self.o_up + o.o_up,
            plus_down: self.plus_down + o.plus_down,
            plus_up: self.plus_up + o.plus_up,
            minus_down: self.minus_down + o.minus_down,
            minus_up: self.minus_up + o.minus_up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonics {
    pub omega_o: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub hot: BathSamples,
    pub cold: BathSamples,
}

impl Harmonics {
    pub fn new(p: &EngineParams) -> Result<Self, BathError> {
        let (wo, wp, wm) = (p.omega_o, p.omega_plus(), p.omega_minus());
        Ok(Self {
            omega_o: wo,
            omega_plus: wp,
            omega_minus: wm,
            hot: BathSamples::new(&p.hot, wo, wp, wm)?,
            cold: BathSamples::new(&p.cold, wo, wp, wm)?,
        })
    }

    /// `G = G_h + G_c` at every harmonic.
    pub fn total(&self) -> BathSamples {
        self.hot.add(&self.cold)
    }

    pub fn bath(&self, label: BathLabel) -> &BathSamples {
        match label {
            BathLabel::Cold => &self.cold,
            _ => &self.hot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalSteadyState {
    /// `r = G(-w_O) / G(w_O)`
    pub ratio: f64,
    pub n_o: f64,
}

impl OpticalSteadyState {
    /// Geometric populations `r^n (1 - r)` on `dim` levels.
    pub fn populations(&self, dim: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(dim);
        let mut cur = 1.0 - self.ratio;
        for _ in 0..dim {
            v.push(cur);
            cur *= self.ratio;
        }
        v
    }
}

fn steady_from_harmonics(h: &Harmonics) -> Result<OpticalSteadyState, BathError> {
    let t = h.total();
    if !(t.o_down > 0.0) || t.o_up >= t.o_down {
        let r = if t.o_down > 0.0 { t.o_up / t.o_down } else { f64::INFINITY };
        return Err(BathError::PopulationInversion(r));
    }
    let r = t.o_up / t.o_down;
    Ok(OpticalSteadyState { ratio: r, n_o: r / (1.0 - r) })
}

/// Quasi-steady state of the optical mode under the `q = 0` generators.
///
/// The mean occupancy is the mean of the geometric distribution, `r / (1 - r)`.
pub fn optical_steady_state(p: &EngineParams) -> Result<OpticalSteadyState, BathError> {
    p.validate()?;
    steady_from_harmonics(&Harmonics::new(p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sideband {
    /// `w_+ = w_O + Omega_M`, jump operator `O M`.
    Plus,
    /// `w_- = w_O - Omega_M`, jump operator `O M^dagger`.
    Minus,
}

impl fmt::Display for Sideband {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sideband::Plus => "+",
            Sideband::Minus => "-",
        })
    }
}

/// Contribution of one bath through one sideband to the drift and diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    pub bath: BathLabel,
    pub sideband: Sideband,
    pub frequency: f64,
    pub gamma: f64,
    pub d: f64,
}

impl ChannelRates {
    /// Net phonon creation rate through this channel at mechanical occupancy `n_m`.
    pub fn phonon_flow(&self, n_m: f64) -> f64 {
        -self.gamma * n_m + self.d
    }
}

/// Eq. 3 style small parameters with their safety margins (`1 / parameter`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    /// `(g/Omega)^2 <n_M>`
    pub amplitude_param: f64,
    /// `g^2 / Omega * n_O^2 * t`
    pub kerr_param: f64,
    /// `|gamma + Gamma_M| / (G(w_O) - G(-w_O))`
    pub timescale_param: f64,
    pub min_margin: f64,
}

impl RegimeReport {
    pub fn within(&self, margin: f64) -> bool {
        self.min_margin >= margin
    }
}

impl fmt::Display for RegimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(g/Omega)^2 n_M = {:.3e}, g^2/Omega n_O^2 t = {:.3e}, |a|/optical relaxation = {:.3e}, min margin = {:.3e}",
            self.amplitude_param, self.kerr_param, self.timescale_param, self.min_margin
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineRates {
    pub gamma: f64,
    /// Indirect diffusion plus `d_m`.
    pub d: f64,
    pub gamma_m: f64,
    pub d_m: f64,
    pub n_o: f64,
    pub omega_m: f64,
    pub coupling_sq: f64,
    pub g: f64,
    pub harmonics: Harmonics,
    pub channels: Vec<ChannelRates>,
}

impl EngineRates {
    /// OU drift rate `a = gamma + Gamma_M`.
    pub fn drift(&self) -> f64 {
        self.gamma + self.gamma_m
    }

    pub fn gain(&self) -> bool {
        self.drift() < 0.0
    }

    pub fn regime(&self, n_m: f64, t: f64) -> RegimeReport {
        let relax = self.harmonics.total().o_down - self.harmonics.total().o_up;
        let amplitude_param = self.coupling_sq * n_m;
        let kerr_param = self.g * self.g / self.omega_m * self.n_o * self.n_o * t;
        let timescale_param = if relax > 0.0 { self.drift().abs() / relax } else { f64::INFINITY };
        let margin = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
        RegimeReport {
            amplitude_param,
            kerr_param,
            timescale_param,
            min_margin: margin(amplitude_param).min(margin(kerr_param)).min(margin(timescale_param)),
        }
    }

    /// Heat currents `(J_h, J_c, J_phonon)` into the engine at mechanical
    /// occupancy `n_m`, with the optical mode held at its quasi-steady state.
    ///
    /// Sideband channels carry `w_+` per `O M` event and `w_-` per `O M^dagger`
    /// event. The `q = 0` channels carry `w_O` per photon and must replace the
    /// photons the sidebands consume; that replacement is shared between the
    /// baths in proportion to their optical relaxation rates
    /// `G_j(w_O) - G_j(-w_O)`, on top of the direct hot-to-cold leak at the
    /// unperturbed occupancy.
    pub fn heat_currents(&self, n_m: f64) -> (f64, f64, f64) {
        let h = &self.harmonics;
        let tot = h.total();
        let relax = tot.o_down - tot.o_up;
        let mut photon_creation = 0.0;
        let mut sideband = [0.0f64; 2];
        for c in &self.channels {
            let x = c.phonon_flow(n_m);
            let idx = if c.bath == BathLabel::Cold { 1 } else { 0 };
            match c.sideband {
                Sideband::Plus => {
                    sideband[idx] += h.omega_plus * x;
                    photon_creation += x;
                }
                Sideband::Minus => {
                    sideband[idx] -= h.omega_minus * x;
                    photon_creation -= x;
                }
            }
        }
        let optical = |s: &BathSamples| {
            let base = h.omega_o * (s.o_up - (s.o_down - s.o_up) * self.n_o);
            let share = if relax > 0.0 { (s.o_down - s.o_up) / relax } else { 0.0 };
            base - share * h.omega_o * photon_creation
        };
        let jh = sideband[0] + optical(&h.hot);
        let jc = sideband[1] + optical(&h.cold);
        let jp = self.omega_m * (-self.gamma_m * n_m + self.d_m);
        (jh, jc, jp)
    }

    /// Copy with every sideband drift negated. Produces rates that violate the
    /// Second Law; used as a negative control for entropy-balance checks.
    pub fn with_negated_gamma(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.channels {
            c.gamma = -c.gamma;
        }
        r.gamma = -r.gamma;
        r
    }
}

/// Drift and diffusion rates induced on the mechanical mode (Fokker-Planck
/// coefficients), using the combined response `G = G_h + G_c`.
pub fn engine_rates(p: &EngineParams) -> Result<EngineRates, BathError> {
    p.validate()?;
    let h = Harmonics::new(p)?;
    let st = steady_from_harmonics(&h)?;
    let k = p.coupling_sq();
    let n = st.n_o;
    let n1 = n + 1.0;
    let mut channels = Vec::with_capacity(4);
    for (label, s) in [(BathLabel::Hot, &h.hot), (BathLabel::Cold, &h.cold)] {
        channels.push(ChannelRates {
            bath: label,
            sideband: Sideband::Plus,
            frequency: h.omega_plus,
            gamma: k * (s.plus_down * n - s.plus_up * n1),
            d: k * s.plus_up * n1,
        });
        channels.push(ChannelRates {
            bath: label,
            sideband: Sideband::Minus,
            frequency: h.omega_minus,
            gamma: k * (s.minus_up * n1 - s.minus_down * n),
            d: k * s.minus_down * n,
        });
    }
    let t = h.total();
    let gamma = k * (t.plus_down * n + t.minus_up * n1 - (t.minus_down * n + t.plus_up * n1));
    let d_ind = k * (t.minus_down * n + t.plus_up * n1);
    let rates = EngineRates {
        gamma,
        d: d_ind + p.d_m(),
        gamma_m: p.gamma_m,
        d_m: p.d_m(),
        n_o: n,
        omega_m: p.omega_m,
        coupling_sq: k,
        g: p.g,
        harmonics: h,
        channels,
    };
    let rep = rates.regime(0.0, 0.0);
    if !rep.within(10.0) {
        log::warn!("optical relaxation not well separated from mechanical drift: {rep}");
    }
    Ok(rates)
}

/// One product term `G_a(w_q) G_b(w_O) (e^{-x} - e^{-y})` of the full
/// drift expression.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTerm {
    pub label: String,
    pub sideband: Sideband,
    /// Bath sampled at the sideband frequency.
    pub sideband_bath: BathLabel,
    /// Bath sampled at the optical frequency.
    pub optical_bath: BathLabel,
    pub product: f64,
    pub bracket: f64,
    /// `normalization * product * bracket`
    pub value: f64,
    /// Cross-bath term that can turn negative when the hot bath feeds `w_+`
    /// and the cold bath absorbs at `w_O`, or the cold bath feeds `w_-`.
    pub potentially_negative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaFull {
    pub total: f64,
    /// `(g/Omega)^2 <n+1>_O / G(w_O)`
    pub normalization: f64,
    pub terms: Vec<GammaTerm>,
}

impl GammaFull {
    pub fn negative_terms(&self) -> impl Iterator<Item = &GammaTerm> {
        self.terms.iter().filter(|t| t.value < 0.0)
    }
}

/// The drift rate written as eight per-bath product terms with explicit
/// Boltzmann factors. The bracket sum is divided by `G(w_O)`, which makes
/// the total identical to [`engine_rates`]' `gamma`.
pub fn gamma_full(p: &EngineParams) -> Result<GammaFull, BathError> {
    p.validate()?;
    let h = Harmonics::new(p)?;
    let st = steady_from_harmonics(&h)?;
    let (wo, wp, wm) = (h.omega_o, h.omega_plus, h.omega_minus);
    let g0 = h.total().o_down;
    let norm = p.coupling_sq() * (st.n_o + 1.0) / g0;
    let temp = |l: BathLabel| if l == BathLabel::Hot { p.hot.temperature } else { p.cold.temperature };
    use BathLabel::{Cold as C, Hot as H};
    // (sideband, sideband bath, optical bath) in the order of the printed expression
    let order = [
        (Sideband::Plus, H, H),
        (Sideband::Minus, C, C),
        (Sideband::Minus, H, H),
        (Sideband::Plus, C, C),
        (Sideband::Plus, C, H),
        (Sideband::Minus, H, C),
        (Sideband::Plus, H, C),
        (Sideband::Minus, C, H),
    ];
    let mut terms = Vec::with_capacity(8);
    for (i, (sb, a, b)) in order.into_iter().enumerate() {
        let sa = h.bath(a);
        let sbb = h.bath(b);
        let (g_side, bracket, w) = match sb {
            Sideband::Plus => (sa.plus_down, boltzmann(wo, temp(b)) - boltzmann(wp, temp(a)), wp),
            Sideband::Minus => (sa.minus_down, boltzmann(wm, temp(a)) - boltzmann(wo, temp(b)), wm),
        };
        let product = g_side * sbb.o_down;
        let name = |l: BathLabel| if l == H { "h" } else { "c" };
        terms.push(GammaTerm {
            label: format!("G_{}(w{}={w})*G_{}(w_O)", name(a), sb, name(b)),
            sideband: sb,
            sideband_bath: a,
            optical_bath: b,
            product,
            bracket,
            value: norm * product * bracket,
            potentially_negative: i >= 6,
        });
    }
    let total = terms.iter().map(|t| t.value).sum();
    Ok(GammaFull { total, normalization: norm, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(label: BathLabel, t: f64, g: f64) -> BathSpectrum {
        BathSpectrum::new(label, t, SpectrumShape::Flat { peak: g }).unwrap()
    }

    fn params(hot: BathSpectrum, cold: BathSpectrum) -> EngineParams {
        EngineParams { omega_o: 10.0, omega_m: 1.0, g: 1.0 / 3.0, hot, cold, gamma_m: 1e-3, n_m_th: 0.0 }
    }

    pub(crate) fn default_like() -> EngineParams {
        let hot = BathSpectrum::new(
            BathLabel::Hot,
            20.0,
            SpectrumShape::BandStop { peak: 1.0, stop_lo: 0.0, stop_hi: 10.0, edge: 1.0 },
        )
        .unwrap();
        let cold = BathSpectrum::new(
            BathLabel::Cold,
            1.0,
            SpectrumShape::Lorentzian { center: 10.0, width: 300.0, peak: 300.0 },
        )
        .unwrap();
        EngineParams { omega_o: 10.0, omega_m: 1.0, g: 1.0 / 3.0, hot, cold, gamma_m: 1.0 / 3000.0, n_m_th: 100.0 }
    }

    #[test]
    fn response_examples() {
        let b = flat(BathLabel::Hot, 1.0, 1.0);
        assert!((b.response(-2.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        let l = BathSpectrum::new(BathLabel::Cold, 3.0, SpectrumShape::Lorentzian { center: 5.0, width: 1.0, peak: 2.0 })
            .unwrap();
        assert_eq!(l.response(5.0).unwrap(), 2.0);
        assert_eq!(l.response(0.0).unwrap(), l.shape.eval(0.0).unwrap());
        let t = BathSpectrum::new(BathLabel::Hot, 1.0, SpectrumShape::Tabulated(vec![(0.0, 1.0), (2.0, 3.0)])).unwrap();
        assert!((t.response(1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(t.response(-2.5), Err(BathError::OutOfRange { .. })));
    }

    #[test]
    fn band_stop_shape() {
        let s = SpectrumShape::BandStop { peak: 2.0, stop_lo: 3.0, stop_hi: 5.0, edge: 1.0 };
        assert_eq!(s.eval(4.0).unwrap(), 0.0);
        assert_eq!(s.eval(5.0).unwrap(), 0.0);
        assert!((s.eval(5.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((s.eval(2.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.eval(6.0).unwrap(), 2.0);
        assert_eq!(s.eval(1.0).unwrap(), 2.0);
    }

    #[test]
    fn steady_state_examples() {
        let p = params(flat(BathLabel::Hot, 0.0, 1.0), flat(BathLabel::Cold, 0.0, 1.0));
        let st = optical_steady_state(&p).unwrap();
        assert_eq!(st.n_o, 0.0);
        assert_eq!(st.populations(3), vec![1.0, 0.0, 0.0]);

        let t = 4.0;
        let p = params(flat(BathLabel::Hot, t, 1.0), flat(BathLabel::Cold, t, 2.0));
        let st = optical_steady_state(&p).unwrap();
        assert!((st.n_o - 1.0 / ((10.0f64 / t).exp() - 1.0)).abs() < 1e-12);

        // T_h = 2 w_O, T_c = 0.2 w_O, equal weights; long-time limit of the
        // photon-number rate equation integrated by RK4
        let p = params(flat(BathLabel::Hot, 20.0, 1.0), flat(BathLabel::Cold, 2.0, 1.0));
        let st = optical_steady_state(&p).unwrap();
        let r = ((-0.5f64).exp() + (-5.0f64).exp()) / 2.0;
        assert!((st.ratio - r).abs() < 1e-15);
        let (gd, gu) = (2.0, (-0.5f64).exp() + (-5.0f64).exp());
        let dim = 40;
        let mut rho = vec![0.0; dim];
        rho[0] = 1.0;
        let f = |r: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|n| {
                    let nf = n as f64;
                    let mut v = -((nf + 1.0) * gu * if n + 1 < dim { 1.0 } else { 0.0 } + nf * gd) * r[n];
                    if n + 1 < dim {
                        v += (nf + 1.0) * gd * r[n + 1];
                    }
                    if n > 0 {
                        v += nf * gu * r[n - 1];
                    }
                    v
                })
                .collect()
        };
        let h = 0.005;
        for _ in 0..40000 {
            let k1 = f(&rho);
            let y2: Vec<f64> = rho.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let k2 = f(&y2);
            let y3: Vec<f64> = rho.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let k3 = f(&y3);
            let y4: Vec<f64> = rho.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let k4 = f(&y4);
            for n in 0..dim {
                rho[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
            }
        }
        let mean: f64 = rho.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        assert!((mean - st.n_o).abs() < 1e-9, "{mean} vs {}", st.n_o);
    }

    #[test]
    fn inversion_is_an_error() {
        let p = params(flat(BathLabel::Hot, 1.0, 0.0), flat(BathLabel::Cold, 1.0, 0.0));
        assert!(matches!(optical_steady_state(&p), Err(BathError::PopulationInversion(_))));
    }

    #[test]
    fn single_flat_bath_gives_damping() {
        let p = params(flat(BathLabel::Hot, 3.0, 1.0), flat(BathLabel::Cold, 3.0, 1.0));
        let r = engine_rates(&p).unwrap();
        assert!(r.gamma > 0.0);
    }

    #[test]
    fn decoupled_modes() {
        let mut p = default_like();
        p.g = 0.0;
        let r = engine_rates(&p).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert_eq!(r.d, p.d_m());
    }

    #[test]
    fn default_engine_has_gain_and_full_expression_agrees() {
        let p = default_like();
        let r = engine_rates(&p).unwrap();
        assert!(r.gamma < 0.0 && r.gamma.abs() > r.gamma_m);
        let full = gamma_full(&p).unwrap();
        assert!(((full.total - r.gamma) / r.gamma).abs() < 1e-12);
        let sum: f64 = full.terms.iter().map(|t| t.value).sum();
        assert!((sum - full.total).abs() <= 1e-12 * full.total.abs());
        let chan: f64 = r.channels.iter().map(|c| c.gamma).sum();
        assert!((chan - r.gamma).abs() < 1e-14);
        assert!(full.negative_terms().all(|t| t.potentially_negative));
    }

    #[test]
    fn full_expression_normalization_in_flat_single_bath() {
        let p = params(flat(BathLabel::Hot, 5.0, 0.7), flat(BathLabel::Cold, 5.0, 0.3));
        let r = engine_rates(&p).unwrap();
        let full = gamma_full(&p).unwrap();
        assert!(((full.total - r.gamma) / r.gamma).abs() < 1e-12);
        assert!(full.total >= 0.0);
    }

    #[test]
    fn hot_feeds_plus_cold_absorbs_gives_negative_gamma() {
        let hot = BathSpectrum::new(BathLabel::Hot, 50.0, SpectrumShape::BandStop { peak: 1.0, stop_lo: 0.0, stop_hi: 10.5, edge: 0.1 })
            .unwrap();
        let cold = BathSpectrum::new(BathLabel::Cold, 0.5, SpectrumShape::Tabulated(vec![(0.0, 1.0), (10.4, 1.0), (10.6, 0.0), (100.0, 0.0)]))
            .unwrap();
        let p = params(hot, cold);
        let full = gamma_full(&p).unwrap();
        assert!(full.total < 0.0);
        let cross: f64 = full.terms.iter().filter(|t| t.potentially_negative).map(|t| t.value).sum();
        assert!(cross < 0.0 && cross.abs() > full.total.abs() * 0.99);
    }

    #[test]
    fn equal_temperature_equal_response_brackets_cancel() {
        // flat response everywhere, one temperature: e^{-b w0} - e^{-b w+} from the
        // (+) terms and e^{-b w-} - e^{-b w0} from the (-) terms, summed symbolically
        let t = 2.0;
        let p = params(flat(BathLabel::Hot, t, 1.0), flat(BathLabel::Cold, t, 1.0));
        let full = gamma_full(&p).unwrap();
        let b = 1.0 / t;
        let e = |w: f64| (-b * w).exp();
        let symbolic = 4.0 * ((e(10.0) - e(11.0)) + (e(9.0) - e(10.0)));
        let raw: f64 = full.terms.iter().map(|t| t.product * t.bracket).sum();
        assert!((raw - symbolic).abs() < 1e-14);
        // (h,c) and (c,h) cross terms coincide with the diagonal ones at equal T
        for s in [Sideband::Plus, Sideband::Minus] {
            let v: Vec<f64> = full.terms.iter().filter(|x| x.sideband == s).map(|x| x.bracket).collect();
            assert!(v.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
        }
    }

    #[test]
    fn raising_hot_temperature_never_reduces_gain() {
        let mut p = default_like();
        let mut last = f64::INFINITY;
        for i in 0..40 {
            p.hot.temperature = 1.0 + i as f64 * 2.5;
            let g = engine_rates(&p).unwrap().gamma;
            assert!(g <= last + 1e-15);
            last = g;
        }
    }

    #[test]
    fn analytic_heat_currents_close_energy_balance() {
        let p = default_like();
        let r = engine_rates(&p).unwrap();
        for n_m in [0.0, 1.0, 25.0] {
            let (jh, jc, jp) = r.heat_currents(n_m);
            let de = p.omega_m * (-(r.gamma + r.gamma_m) * n_m + r.d);
            assert!((jh + jc + jp - de).abs() < 1e-12 * (1.0 + de.abs()));
            if n_m > 0.0 {
                assert!(jh > 0.0 && jc < 0.0);
            }
        }
        let p = params(flat(BathLabel::Hot, 3.0, 1.0), flat(BathLabel::Cold, 3.0, 1.0));
        let r = engine_rates(&p).unwrap();
        // mechanical occupancy at the bath temperature: global equilibrium
        let n = planck(1.0, 3.0);
        let (jh, jc, _) = r.heat_currents(n);
        assert!(jh.abs() < 1e-12 && jc.abs() < 1e-12);
    }

    fn arb_shape() -> impl Strategy<Value = SpectrumShape> {
        prop_oneof![
            (0.0f64..40.0, 0.1f64..50.0, 0.0f64..5.0).prop_map(|(c, w, p)| SpectrumShape::Lorentzian { center: c, width: w, peak: p }),
            (0.01f64..5.0, 0.0f64..30.0, 0.0f64..10.0, 0.0f64..3.0)
                .prop_map(|(p, lo, span, e)| SpectrumShape::BandStop { peak: p, stop_lo: lo, stop_hi: lo + span, edge: e }),
            (0.01f64..5.0).prop_map(|p| SpectrumShape::Flat { peak: p }),
            prop::collection::vec(0.0f64..3.0, 4..12).prop_map(|g| {
                let n = g.len();
                SpectrumShape::Tabulated(g.into_iter().enumerate().map(|(i, v)| (i as f64 * 60.0 / (n - 1) as f64, v)).collect())
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn kms_ratio(shape in arb_shape(), t in 0.05f64..50.0, w in 0.01f64..50.0) {
            let b = BathSpectrum::new(BathLabel::Hot, t, shape).unwrap();
            let up = b.response(-w).unwrap();
            let down = b.response(w).unwrap();
            prop_assert!(up >= 0.0 && down >= 0.0);
            if down > 0.0 {
                prop_assert!((up / down - (-w / t).exp()).abs() <= 1e-14 * (-w / t).exp().max(1e-300));
            }
        }

        #[test]
        fn diffusion_dominates_phonon_part(hs in arb_shape(), cs in arb_shape(), th in 0.1f64..40.0, tc in 0.1f64..40.0,
                                           g in 0.0f64..0.5, nth in 0.0f64..50.0) {
            let mut p = default_like();
            p.hot = BathSpectrum::new(BathLabel::Hot, th, hs).unwrap();
            p.cold = BathSpectrum::new(BathLabel::Cold, tc, cs).unwrap();
            p.g = g;
            p.n_m_th = nth;
            if let Ok(r) = engine_rates(&p) {
                prop_assert!(r.d >= 0.0 && r.d >= r.d_m);
            }
        }
    }
}
