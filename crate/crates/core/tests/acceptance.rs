//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use optomech::baths::{engine_rates, planck, BathLabel, BathSpectrum, EngineParams, SpectrumShape};
use optomech::hilbert::{
    self, bound_ergotropy, displaced_thermal, displaced_thermal_dim, ergotropy, fidelity, temperature_of_occupancy,
    thermal_occupancy_for_entropy, von_neumann_entropy, FockState, StateSpec,
};
use optomech::lindblad::{build_generators, evolve, reduced_m, EvolveOptions, JointState};
use optomech::phasespace::{
    effective_temperature_coherent, is_passive_radial, phase_averaged_threshold, propagate, ring_profile, to_fock,
    work_capacity, work_capacity_fock, GaussianPhaseState, OUFlow, PhaseEnsemble, WORK_BUDGET,
};
use optomech::scenario::config::bundled_names;
use optomech::scenario::run::StateRun;
use optomech::scenario::{run, sweep, RunOptions, RunOutcome, ScenarioConfig};
use optomech::thermo::{spohn_check, WorkLedger, SPOHN_TOL};

type Verdict = Result<(bool, String), String>;

fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn load(name: &str, pairs: &[(&str, &str)]) -> Result<ScenarioConfig, String> {
    ScenarioConfig::load(name, &ov(pairs)).map_err(|e| e.to_string())
}

fn timed_run(name: &str, pairs: &[(&str, &str)]) -> Result<(RunOutcome, Duration), String> {
    let cfg = load(name, pairs)?;
    let start = Instant::now();
    let out = run(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed()))
}

fn state<'a>(out: &'a RunOutcome, label: &str) -> Result<&'a StateRun, String> {
    out.states.iter().find(|s| s.label == label).ok_or_else(|| format!("{}: no state {label}", out.name))
}

fn oracle(st: &StateRun) -> Result<&WorkLedger, String> {
    st.oracle.as_ref().ok_or_else(|| format!("{}: no oracle ledger", st.label))
}

fn analytic(st: &StateRun) -> Result<&WorkLedger, String> {
    st.analytic.as_ref().ok_or_else(|| format!("{}: no analytic ledger", st.label))
}

fn rel(x: f64, reference: f64) -> f64 {
    (x / reference - 1.0).abs()
}

struct Runs {
    default: (RunOutcome, Duration),
    default_thermal: RunOutcome,
    default_fock: RunOutcome,
    fig2: RunOutcome,
    noise_gain: RunOutcome,
    single: RunOutcome,
}

impl Runs {
    fn new() -> Result<Self, String> {
        let default = timed_run("default_engine", &[])?;
        let default_thermal = timed_run("default_engine", &[("state.kind", "thermal")])?.0;
        let default_fock = timed_run("default_engine", &[("state.kind", "fock")])?.0;
        let fig2 = timed_run("fig2_states", &[])?.0;
        let noise_gain = timed_run("thermal_noise_gain", &[])?.0;
        let single = timed_run("single_bath", &[])?.0;
        Ok(Self { default, default_thermal, default_fock, fig2, noise_gain, single })
    }

    fn all(&self) -> [&RunOutcome; 6] {
        [&self.default.0, &self.default_thermal, &self.default_fock, &self.fig2, &self.noise_gain, &self.single]
    }
}

fn c1_drift_rate(r: &Runs) -> Verdict {
    let (out, elapsed) = &r.default;
    let fit = out.states[0].fit.as_ref().ok_or("no drift/diffusion fit")?;
    let eg = rel(fit.gamma, out.rates.gamma);
    let ed = rel(fit.d, out.rates.d);
    let fast = elapsed.as_secs_f64() < 300.0;
    let margin = out.regime.min_margin;
    Ok((
        eg <= 0.10 && ed <= 0.15 && fast,
        format!(
            "gamma_emp {:.6} vs {:.6} ({:.2}% <= 10%), d_emp {:.6} vs {:.6} ({:.2}% <= 15%), runtime {:.1}s; regime margin {margin:.3}{}",
            fit.gamma,
            out.rates.gamma,
            100.0 * eg,
            fit.d,
            out.rates.d,
            100.0 * ed,
            elapsed.as_secs_f64(),
            if margin < 10.0 { " (below the 10x weak-coupling margin)" } else { "" }
        ),
    ))
}

fn c2_energy_law(r: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for out in [&r.default.0, &r.default_thermal, &r.default_fock] {
        let st = &out.states[0];
        let dev = st.comparison.as_ref().and_then(|c| c.deviation("E_M")).ok_or("no E_M comparison")?;
        pass &= dev.max_rel <= 0.05;
        parts.push(format!("{} {:.2}% at t={:.1}", st.label, 100.0 * dev.max_rel, dev.at));
    }
    Ok((pass, format!("max |E_oracle/E_law - 1| over [0, 3/|a|]: {} (limit 5%)", parts.join(", "))))
}

fn random_shape(rng: &mut StdRng) -> SpectrumShape {
    let peak = 10f64.powf(rng.gen_range(-2.0..2.5));
    match rng.gen_range(0..3) {
        0 => SpectrumShape::Lorentzian { center: rng.gen_range(0.0..40.0), width: 10f64.powf(rng.gen_range(-1.0..2.7)), peak },
        1 => {
            let lo = rng.gen_range(0.0..20.0);
            SpectrumShape::BandStop { peak, stop_lo: lo, stop_hi: lo + rng.gen_range(0.5..20.0), edge: rng.gen_range(0.1..5.0) }
        }
        _ => SpectrumShape::Flat { peak },
    }
}

fn c3_one_bath(r: &Runs) -> Verdict {
    let base = load("default_engine", &[])?.params;
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut negative = 0;
    let mut redrawn = 0;
    let mut accepted = 0;
    while accepted < 1000 {
        let temperature = 10f64.powf(rng.gen_range(-1.3..2.0));
        let bath = BathSpectrum::new(BathLabel::Hot, temperature, random_shape(&mut rng)).map_err(|e| e.to_string())?;
        let mut p: EngineParams = base.single_bath(&bath);
        p.omega_o = rng.gen_range(2.0..30.0);
        p.g = rng.gen_range(0.01..0.5);
        // An optical mode the bath cannot reach has no steady state.
        if bath.response(p.omega_o).map_err(|e| e.to_string())? <= 0.0 {
            redrawn += 1;
            continue;
        }
        accepted += 1;
        let rates = engine_rates(&p).map_err(|e| e.to_string())?;
        let scale: f64 = rates.channels.iter().map(|c| c.gamma.abs()).sum::<f64>().max(1e-300);
        let x = rates.gamma / scale;
        worst = worst.min(x);
        if rates.gamma < -1e-12 * scale {
            negative += 1;
        }
    }

    let cfg = load("single_bath", &[])?;
    let st = &r.single.states[0];
    let p = &cfg.params;
    let rho_o = hilbert::make_state(&StateSpec::fock(0, p.omega_o), st.dim_o).map_err(|e| e.to_string())?;
    let rho_m = hilbert::make_state(&cfg.states[0].spec, st.dim_m).map_err(|e| e.to_string())?;
    let gens = build_generators(p, st.dim_o, st.dim_m).map_err(|e| e.to_string())?;
    let opts = EvolveOptions { tol: cfg.tol, leak_limit: cfg.leak_limit, ..EvolveOptions::default() };
    let t_end = r.single.t_end;
    let s = evolve(&JointState::from_product(&rho_o, &rho_m), &gens, &[0.0, t_end], &opts).map_err(|e| e.to_string())?;
    let n_th = planck(p.omega_m, p.hot.temperature);
    let gibbs = hilbert::make_state(&StateSpec::thermal(n_th, p.omega_m), st.dim_m).map_err(|e| e.to_string())?;
    let f = fidelity(&reduced_m(&s[1], p.omega_m), &gibbs);
    Ok((
        negative == 0 && f > 0.999,
        format!(
            "{negative}/1000 random one-bath engines with gamma < 0 (min gamma/sum|channel| = {worst:.3e}, {redrawn} draws uncoupled at w_O redrawn); single_bath fidelity to thermal(n={n_th:.3}) at t={t_end}: {f:.6} (> 0.999)"
        ),
    ))
}

fn c4_work_vs_heat(r: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let st = &r.noise_gain.states[0];
    let omega_m = 1.0;
    for (name, l) in [("oracle", oracle(st)?), ("analytic", analytic(st)?)] {
        let growth = l.rows.last().unwrap().e_m / l.rows[0].e_m;
        let w = l.rows.iter().map(|x| x.w_max).fold(f64::NEG_INFINITY, f64::max);
        pass &= growth >= 10.0 && w < 1e-6 * omega_m;
        parts.push(format!("thermal {name}: E growth {growth:.1}x, max W_max {w:.2e}"));
    }
    let (out, _) = &r.default;
    let a = out.rates.drift();
    let co = &out.states[0];
    for (name, l, tol) in [("analytic", analytic(co)?, 0.03), ("oracle", oracle(co)?, 0.10)] {
        let w0 = l.rows[0].w_max;
        let dev = l.rows.iter().map(|x| rel(x.w_max / w0, (-a * x.t).exp())).fold(0.0, f64::max);
        pass &= dev <= tol;
        parts.push(format!("coherent {name}: max |W/W0 e^(at) - 1| {:.2}% (<= {:.0}%)", 100.0 * dev, 100.0 * tol));
    }
    Ok((pass, parts.join("; ")))
}

fn c5_state_ordering(r: &Runs) -> Verdict {
    let dw = |label: &str| -> Result<(f64, Vec<f64>), String> {
        let l = oracle(state(&r.fig2, label)?)?;
        let w0 = l.rows[0].w_max;
        let all: Vec<f64> = l.rows[1..].iter().map(|x| x.w_max - w0).collect();
        Ok((*all.last().unwrap(), all))
    };
    let (coh, _) = dw("coherent")?;
    let (pa, _) = dw("phase_averaged")?;
    let (fock, fock_all) = dw("fock")?;
    let t = r.fig2.t_end;
    let fock_always = fock_all.iter().all(|x| *x < 0.0);
    Ok((
        coh > pa && pa > 0.0 && 0.0 > fock && fock_always,
        format!(
            "dW_max at t=1/|a|={t:.2}: coherent {coh:.4}, phase-averaged {pa:.4}, Fock {fock:.4}; Fock dW < 0 at all {} samples: {fock_always}",
            fock_all.len()
        ),
    ))
}

fn c6_threshold() -> Verdict {
    let radius = 1.0;
    let w = |s2: f64| -> Result<f64, String> {
        work_capacity_fock(&PhaseEnsemble::PhaseAveraged { radius, sigma2: s2, omega: 1.0 }).map_err(|e| e.to_string())
    };
    let level = 1e-6;
    let (mut lo, mut hi) = (1.0f64, 100.0f64);
    if !(w(lo)? > level && w(hi)? < level) {
        return Ok((false, format!("crossing of {level:e} not bracketed by d t in [{lo}, {hi}]")));
    }
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if w(mid)? > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dt = (lo * hi).sqrt();
    let (b2, _) = phase_averaged_threshold(radius, 1.0, dt).map_err(|e| e.to_string())?;
    // Where the propagated P-profile itself stops being monotone.
    let flips: Vec<f64> = (1..=60)
        .map(|i| 0.1 * i as f64)
        .filter_map(|s2| is_passive_radial(ring_profile(radius, s2), radius + 8.0 * s2.sqrt(), 2000).ok().map(|p| (s2, p)))
        .collect::<Vec<_>>()
        .windows(2)
        .filter(|w| !w[0].1 && w[1].1)
        .map(|w| 4.0 * radius * radius / w[1].0)
        .collect();
    Ok((
        (b2 - 1.0).abs() <= 0.02,
        format!(
            "|b0| = {radius}: Fock-space bound ergotropy crosses {level:e} at d t = {dt:.3}, |b0'|^2 = {b2:.4} (target 1 +- 0.02); P-profile becomes monotone at |b0'|^2 ~ {}",
            flips.first().map_or("n/a".into(), |b| format!("{b:.3}"))
        ),
    ))
}

fn c7_second_law(r: &Runs) -> Verdict {
    let mut worst = (f64::INFINITY, String::new());
    let mut count = 0;
    let mut covered: Vec<&str> = Vec::new();
    for out in r.all() {
        covered.push(&out.name);
        for st in &out.states {
            for (src, c) in st.spohn() {
                count += 1;
                if c.min_slack < worst.0 {
                    worst = (c.min_slack, format!("{}/{}/{src} at t={:.2}", out.name, st.label, c.at));
                }
            }
        }
    }
    let missing: Vec<&str> = bundled_names().iter().copied().filter(|n| !covered.contains(n)).collect();
    let control = load("default_engine", &[("run.pipeline", "analytic"), ("run.negate_gamma", "true")])?;
    let out = run(&control, RunOptions::default()).map_err(|e| e.to_string())?;
    let tampered = spohn_check(analytic(&out.states[0])?);
    Ok((
        worst.0 >= -SPOHN_TOL && missing.is_empty() && !tampered.pass,
        format!(
            "{count} ledgers over all bundled scenarios, min slack {:.3e} ({}); missing scenarios: {missing:?}; tampered-gamma control min slack {:.3e} -> {}",
            worst.0,
            worst.1,
            tampered.min_slack,
            if tampered.pass { "passes (should fail)" } else { "fails as expected" }
        ),
    ))
}

fn c8_beyond_carnot(r: &Runs) -> Verdict {
    let (out, _) = &r.default;
    let l = oracle(&out.states[0])?;
    let carnot = 1.0 - l.t_c / l.t_h;
    let t_m0 = l.rows[0].t_m;
    let inside = |x: &optomech::thermo::LedgerRow| x.eta > carnot && x.eta <= 1.0 - x.t_m / l.t_h + 1e-6;
    let window: Vec<f64> = l.rows.iter().filter(|x| inside(x)).map(|x| x.t).collect();
    let closes = l.rows.iter().position(|x| x.t_m > l.t_c).map_or(true, |i| !l.rows[i..].iter().any(inside));
    let peak = l.peak_efficiency().unwrap_or(f64::NAN);

    let base = load("default_engine", &[("run.pipeline", "analytic")])?;
    let amps = [0.5, 1.0, 2.0, 4.0, 8.0];
    let s = sweep(&base, "state.amplitude", &amps, None).map_err(|e| e.to_string())?;
    let peaks: Vec<f64> = s.rows.iter().map(|x| x.peak_eta).collect();
    let decreasing = peaks.windows(2).all(|w| w[1] < w[0]);
    Ok((
        t_m0 == 0.0 && !window.is_empty() && closes && decreasing,
        format!(
            "T_M(0) = {t_m0}, two-bath Carnot {carnot:.3}, oracle peak eta {peak:.4}, beyond-Carnot samples {}; peak eta over |b0| {amps:?}: {} (strictly decreasing: {decreasing})",
            window.len(),
            peaks.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn c9_effective_temperature(r: &Runs) -> Verdict {
    let d = r.default.0.rates.d;
    let mut worst = (0.0f64, 0.0);
    for i in 0..31 {
        let dt = 10f64.powf(-2.0 + 3.0 * i as f64 / 30.0);
        let budget = 1e-12;
        let dim = displaced_thermal_dim(1.0, dt, budget);
        let s = displaced_thermal(C64::new(1.0, 0.0), dt, dim, 1.0, budget).map_err(|e| e.to_string())?;
        let t_gibbs = temperature_of_occupancy(thermal_occupancy_for_entropy(von_neumann_entropy(&s)), 1.0);
        let e = rel(effective_temperature_coherent(d, dt / d, 1.0), t_gibbs);
        if e > worst.0 {
            worst = (e, dt);
        }
    }
    Ok((worst.0 <= 0.01, format!("31 points d t in [0.01, 10]: max relative gap {:.2e} at d t = {:.3} (<= 1%)", worst.0, worst.1)))
}

fn random_density(rng: &mut StdRng, dim: usize) -> Result<FockState, String> {
    let a = DMatrix::<C64>::from_fn(dim, dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let mut m = &a * a.adjoint();
    let tr = m.trace();
    m /= tr;
    FockState::from_matrix(m, 1.0).map_err(|e| e.to_string())
}

fn c10_properties(start: Instant) -> Verdict {
    let mut failed = Vec::new();
    let mut rng = StdRng::seed_from_u64(11);

    let mut erg_ok = true;
    for _ in 0..200 {
        let dim = rng.gen_range(2..9);
        let s = random_density(&mut rng, dim)?;
        let (e, b) = (ergotropy(&s), bound_ergotropy(&s).map_err(|e| e.to_string())?);
        erg_ok &= e >= -1e-12 && b >= e - 1e-10;
    }
    if !erg_ok {
        failed.push("ergotropy nonnegativity");
    }

    let gain = OUFlow::new(-0.06, 0.1).map_err(|e| e.to_string())?;
    let thermal = PhaseEnsemble::Gaussian(GaussianPhaseState::thermal(0.3, 1.0));
    let mut passive_ok = true;
    for t in [1.0, 10.0, 40.0] {
        let e = propagate(&thermal, &gain, t).map_err(|e| e.to_string())?;
        passive_ok &= work_capacity(&e).map_err(|e| e.to_string())? == 0.0;
        passive_ok &= work_capacity_fock(&e).map_err(|e| e.to_string())?.abs() < 1e-8;
    }
    if !passive_ok {
        failed.push("passivity preservation");
    }

    let mut semi_ok = true;
    for e in [
        PhaseEnsemble::Gaussian(GaussianPhaseState::coherent(C64::new(0.7, -0.4), 1.0)),
        PhaseEnsemble::PhaseAveraged { radius: 1.3, sigma2: 0.2, omega: 1.0 },
    ] {
        let once = propagate(&e, &gain, 7.0).map_err(|e| e.to_string())?;
        let twice = propagate(&propagate(&e, &gain, 3.0).map_err(|e| e.to_string())?, &gain, 4.0).map_err(|e| e.to_string())?;
        let (a, b) = (to_fock(&once, WORK_BUDGET).map_err(|e| e.to_string())?, to_fock(&twice, WORK_BUDGET).map_err(|e| e.to_string())?);
        semi_ok &= a.dim() == b.dim() && (a.matrix() - b.matrix()).norm() < 1e-10;
    }
    if !semi_ok {
        failed.push("semigroup");
    }

    let mut kms_ok = true;
    for name in bundled_names() {
        let p = load(name, &[])?.params;
        for bath in [&p.hot, &p.cold] {
            for w in [0.5, 3.0, 9.0, 10.0, 11.0, 25.0] {
                let (up, down) = (bath.response(-w).map_err(|e| e.to_string())?, bath.response(w).map_err(|e| e.to_string())?);
                kms_ok &= (up - (-w / bath.temperature).exp() * down).abs() <= 1e-12 * down.abs().max(1e-300);
            }
        }
    }
    if !kms_ok {
        failed.push("KMS");
    }

    let cfg = load("thermal_noise_gain", &[])?;
    let p = &cfg.params;
    let rho_o = hilbert::make_state(&StateSpec::fock(0, p.omega_o), 4).map_err(|e| e.to_string())?;
    let rho_m = hilbert::make_state(&StateSpec::coherent(C64::new(0.5, 0.2), 1.0), 14).map_err(|e| e.to_string())?;
    let gens = build_generators(p, 4, 14).map_err(|e| e.to_string())?;
    let states = evolve(&JointState::from_product(&rho_o, &rho_m), &gens, &[0.0, 1.0, 100.0, 1000.0], &EvolveOptions::default())
        .map_err(|e| e.to_string())?;
    if !states.iter().all(|s| (s.trace() - 1.0).abs() < 1e-9 && s.min_population() >= -1e-8) {
        failed.push("trace preservation");
    }

    let small = run(&load("thermal_noise_gain", &[("state.kind", "coherent"), ("run.pipeline", "oracle"), ("grid.samples", "11")])?, RunOptions::default())
        .map_err(|e| e.to_string())?;
    let dim = small.states[0].dim_m;
    let big = run(
        &load(
            "thermal_noise_gain",
            &[("state.kind", "coherent"), ("run.pipeline", "oracle"), ("grid.samples", "11"), ("run.dim_m", &(dim + 20).to_string()), ("run.dim_o", "7")],
        )?,
        RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let trunc_ok = oracle(&small.states[0])?
        .rows
        .iter()
        .zip(&oracle(&big.states[0])?.rows)
        .all(|(x, y)| (x.e_m - y.e_m).abs() < 1e-7 * x.e_m.max(1.0) && (x.w_max - y.w_max).abs() < 1e-6);
    if !trunc_ok {
        failed.push("truncation robustness");
    }

    let elapsed = start.elapsed().as_secs_f64();
    Ok((
        failed.is_empty() && elapsed < 900.0,
        format!(
            "ergotropy, passivity, semigroup, KMS, trace, truncation: {}; acceptance runtime {elapsed:.0}s (< 900s)",
            if failed.is_empty() { "all hold".to_string() } else { format!("failed {failed:?}") }
        ),
    ))
}

fn main() {
    let start = Instant::now();
    let titles = [
        "drift-rate equivalence",
        "energy law",
        "one-bath no-work",
        "work-vs-heat separation",
        "state ordering",
        "phase-averaged threshold",
        "second law",
        "beyond-Carnot regime",
        "effective temperature",
        "unit/property suites",
    ];
    let runs = Runs::new();
    let mut verdicts: Vec<Verdict> = Vec::new();
    match &runs {
        Ok(r) => {
            verdicts.push(c1_drift_rate(r));
            verdicts.push(c2_energy_law(r));
            verdicts.push(c3_one_bath(r));
            verdicts.push(c4_work_vs_heat(r));
            verdicts.push(c5_state_ordering(r));
            verdicts.push(c6_threshold());
            verdicts.push(c7_second_law(r));
            verdicts.push(c8_beyond_carnot(r));
            verdicts.push(c9_effective_temperature(r));
        }
        Err(e) => {
            for _ in 0..9 {
                verdicts.push(Err(format!("scenario runs failed: {e}")));
            }
        }
    }
    verdicts.push(c10_properties(start));

    let mut failures = 0;
    for (i, (title, v)) in titles.iter().zip(&verdicts).enumerate() {
        let (pass, detail) = match v {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!("{} criterion {:>2} {title}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} passed, {failures} failed", titles.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
