//! Canned scenarios and the quantitative checks each one must satisfy.
//!
//! Every check is a named value against a window, so the CLI report and
//! the acceptance suite print the same numbers. `advisory` checks are
//! reported but do not gate: they describe expected-but-uncontracted
//! behavior (for example, where the uncompensated ripple should land).

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::freq;
use crate::params::ToleranceSpec;
use crate::plant::LoadStep;
use crate::sim::{metrics, Engine, RunOutput};

/// Bleed resistor emulating ~700 W of standby loss per module DC bus.
pub const BLEED_R_OHM: f64 = 2150.0 * 2150.0 / 700.0;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
    pub advisory: bool,
}

impl Check {
    pub fn window(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo,
            hi,
            pass: value >= lo && value <= hi,
            advisory: false,
        }
    }

    pub fn at_most(name: &str, value: f64, hi: f64) -> Self {
        Self::window(name, value, f64::NEG_INFINITY, hi)
    }

    pub fn at_least(name: &str, value: f64, lo: f64) -> Self {
        Self::window(name, value, lo, f64::INFINITY)
    }

    pub fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }

    /// True unless a non-advisory check failed.
    pub fn all_pass(checks: &[Check]) -> bool {
        checks.iter().all(|c| c.pass || c.advisory)
    }
}

/// Names of the canned scenarios, in catalog order.
pub const SCENARIO_NAMES: [&str; 5] = ["startup", "load_step", "balance", "ripple", "margins"];

fn base_config() -> Config {
    let mut cfg = Config::default();
    cfg.scenario.load_profile.mvdc_bleed_r = Some(BLEED_R_OHM);
    cfg
}

fn step(time: f64, p_lv: f64, ramp: f64) -> LoadStep {
    LoadStep {
        time,
        i_lv: None,
        p_lv: Some(p_lv),
        ramp,
    }
}

/// Black start from a dead system through to grid-tied regulation.
pub fn startup_config() -> Config {
    let mut cfg = base_config();
    cfg.scenario.name = "startup".into();
    cfg.scenario.duration = 1.6;
    cfg.scenario.startup_enabled = true;
    cfg
}

/// Full-power application and rejection on the LVDC bus.
pub fn load_step_config() -> Config {
    let mut cfg = base_config();
    cfg.scenario.name = "load_step".into();
    cfg.scenario.duration = 1.2;
    cfg.scenario.load_profile.steps = vec![step(0.2, 1.0e6, 0.0), step(0.7, 0.0, 0.0)];
    cfg
}

/// Component tolerances on, load swinging between full and half power.
/// Transients are rate-limited: the module buses hold only ~6 kJ total, so
/// an instantaneous megawatt swing would necessarily unbalance them beyond
/// any sensible bound while the loops catch up.
pub fn balance_config() -> Config {
    let mut cfg = base_config();
    cfg.scenario.name = "balance".into();
    cfg.scenario.duration = 1.4;
    cfg.scenario.tolerances_enabled = true;
    cfg.scenario.load_profile.steps = vec![
        step(0.0, 1.0e6, 0.0),
        step(0.5, 0.5e6, 0.1),
        step(0.9, 1.0e6, 0.1),
    ];
    cfg
}

/// Ripple study, module resonant branches on or off. Loaded to half
/// system power: there the single-phase pulsation through each module
/// peaks right at its rated transfer, the largest load the phase-shift
/// power curve can follow without clipping at the crests. The long
/// horizon lets the narrowband rejector finish acquiring (its envelope
/// settles over ~0.6 s).
pub fn ripple_config(resonant: bool) -> Config {
    let mut cfg = base_config();
    cfg.scenario.name = if resonant { "ripple_on" } else { "ripple_off" }.into();
    cfg.scenario.duration = 2.0;
    cfg.scenario.resonant_enabled = resonant;
    cfg.scenario.load_profile.steps = vec![step(0.0, 0.5e6, 0.0)];
    cfg
}

pub fn run_config(cfg: &Config) -> Result<RunOutput> {
    Engine::new(cfg)?.run()
}

fn residual_check(out: &RunOutput) -> Check {
    Check::at_most(
        &format!("{}: max bookkeeping residual [W]", out.summary.name),
        out.summary.max_residual_w,
        1.0e3,
    )
}

/// Start-up sequence checks: completion, no current before the breaker
/// closes, bounded inrush after, monotone bus droop while the converter
/// carries itself between precharge and grid power.
pub fn check_startup(out: &RunOutput) -> Vec<Check> {
    let s = &out.summary;
    let mut checks = vec![
        Check::window(
            "startup: completed (1 = nominal)",
            (s.final_phase == "nominal" && s.aborted.is_none()) as u8 as f64,
            1.0,
            1.0,
        ),
        Check::at_most("startup: line current before close [A]", s.max_abs_i_preclose_a, 0.0),
        Check::at_most(
            "startup: line current first 100 ms [A]",
            s.max_abs_i_first_100ms_a,
            1.5 * 87.5,
        ),
        Check::at_most(
            "startup: final LVDC error [V]",
            (s.final_v_lv - 750.0).abs(),
            7.5,
        ),
        Check::at_most(
            "startup: final module bus error [V]",
            (s.final_v_mv_mean - 2150.0).abs(),
            43.0,
        ),
    ];

    // The self-carry window: from loop handover until the breaker actually
    // closes. After closure the grid recharges the bus, so the droop
    // requirement ends there even though the sequencer dwells a little
    // longer before declaring nominal.
    let t_regulate = s
        .startup_phases
        .iter()
        .find(|(p, _)| p == "mvdc_regulate")
        .map(|&(_, t)| t);
    let worst_rise = match (t_regulate, s.t_breaker_closed) {
        (Some(t0), Some(t1)) => {
            let mut worst = f64::NEG_INFINITY;
            let mut prev: Option<f64> = None;
            for f in &out.frames {
                if f.t < t0 || f.t > t1 {
                    continue;
                }
                if let Some(p) = prev {
                    worst = worst.max(f.v_lv - p);
                }
                prev = Some(f.v_lv);
            }
            worst
        }
        _ => f64::INFINITY,
    };
    checks.push(Check::at_most(
        "startup: max LVDC rise during self-carry [V/frame]",
        worst_rise,
        1.0e-3,
    ));
    checks.push(residual_check(out));
    checks
}

/// LVDC regulation checks for the full-power step pair.
pub fn check_load_step(out: &RunOutput) -> Vec<Check> {
    let ts: Vec<f64> = out.frames.iter().map(|f| f.t).collect();
    let vs: Vec<f64> = out.frames.iter().map(|f| f.v_lv).collect();
    let band = 7.5;
    let mut checks = Vec::new();
    for (label, t_ev, t_end) in [("apply", 0.2, 0.7), ("reject", 0.7, 1.2)] {
        // Window each event to its own segment: the settling scan must not
        // see the next step's excursion.
        let seg_end = ts.partition_point(|&t| t <= t_end);
        let settle = metrics::settling_time(&ts[..seg_end], &vs[..seg_end], t_ev, 750.0, band)
            .map(|t| t - t_ev)
            .unwrap_or(f64::INFINITY);
        checks.push(Check::at_most(
            &format!("load_step: {label} settling to +/-1% [s]"),
            settle,
            0.2,
        ));
        checks.push(Check::at_most(
            &format!("load_step: {label} max deviation [V]"),
            metrics::max_abs_dev(&ts, &vs, t_ev, t_end, 750.0),
            0.08 * 750.0,
        ));
    }
    checks.push(residual_check(out));
    checks
}

/// Module balance under tolerances: worst within-phase spreads of DC-bus
/// voltage and transferred power, across the whole record including the
/// ramped load transients.
///
/// Sharing is judged on trailing one-line-cycle means. With ripple
/// compensation active each module's transfer deliberately pulsates
/// between zero and twice its average, so an instantaneous spread would
/// measure pulsation synchrony and resonator state, not how the modules
/// split the load. The secondary pair of checks repeats the measurement
/// over the half-load dwell, where the phase-shift power curve still has
/// crest headroom and the sharing mechanism can be seen undisturbed by
/// transfer-ceiling clipping.
pub fn check_balance(out: &RunOutput, n_blocks: usize) -> Vec<Check> {
    let n = 3 * n_blocks;
    let frame_dt = if out.frames.len() > 1 {
        out.frames[1].t - out.frames[0].t
    } else {
        out.summary.dt_plant
    };
    let win = ((1.0 / 60.0) / frame_dt).round().max(1.0) as usize;
    let mut sum_v = vec![0.0; n];
    let mut sum_p = vec![0.0; n];
    let mut worst_v: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    let mut dwell_v: f64 = 0.0;
    let mut dwell_p: f64 = 0.0;
    let mut means_v = vec![0.0; n];
    let mut means_p = vec![0.0; n];
    for (i, f) in out.frames.iter().enumerate() {
        for k in 0..n {
            sum_v[k] += f.v_mv[k];
            sum_p[k] += f.p_dab[k];
        }
        if i >= win {
            let old = &out.frames[i - win];
            for k in 0..n {
                sum_v[k] -= old.v_mv[k];
                sum_p[k] -= old.p_dab[k];
            }
        }
        if i + 1 < win {
            continue;
        }
        for k in 0..n {
            means_v[k] = sum_v[k] / win as f64;
            means_p[k] = sum_p[k] / win as f64;
        }
        let sv = metrics::per_phase_spread(&means_v, n_blocks);
        let sp = metrics::per_phase_spread(&means_p, n_blocks);
        worst_v = worst_v.max(sv);
        worst_p = worst_p.max(sp);
        if (0.7..=0.9).contains(&f.t) {
            dwell_v = dwell_v.max(sv);
            dwell_p = dwell_p.max(sp);
        }
    }
    vec![
        Check::at_most("balance: worst module voltage spread [V]", worst_v, 0.01 * 2150.0),
        Check::at_most("balance: worst module power spread [W]", worst_p, 0.02 * 55.6e3),
        Check::at_most("balance: half-load dwell voltage spread [V]", dwell_v, 0.01 * 2150.0),
        Check::at_most("balance: half-load dwell power spread [W]", dwell_p, 0.02 * 55.6e3),
        residual_check(out),
    ]
}

/// Double-line-frequency ripple on the module buses, with and without the
/// resonant branch. Measured per module over the trailing quarter second;
/// the worst module gates.
pub fn check_ripple(on: &RunOutput, off: &RunOutput) -> Result<Vec<Check>> {
    let worst_ripple = |out: &RunOutput| -> Result<f64> {
        let n = out.summary.n_modules;
        let t_from = out.summary.duration - 0.25;
        let ts: Vec<f64> = out
            .frames
            .iter()
            .filter(|f| f.t >= t_from)
            .map(|f| f.t)
            .collect();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let vs: Vec<f64> = out
                .frames
                .iter()
                .filter(|f| f.t >= t_from)
                .map(|f| f.v_mv[k])
                .collect();
            worst = worst.max(metrics::ripple_pp(&ts, &vs, 120.0)?);
        }
        Ok(worst)
    };
    let pp_on = worst_ripple(on)?;
    let pp_off = worst_ripple(off)?;
    Ok(vec![
        Check::at_most("ripple: compensated module ripple [Vpp]", pp_on, 5.0),
        Check::at_least("ripple: suppression ratio off/on", pp_off / pp_on, 8.0),
        Check::window("ripple: uncompensated ripple [Vpp]", pp_off, 40.0, 130.0).advisory(),
        residual_check(on),
        residual_check(off),
    ])
}

/// Analytic design checks: loop margins, blocking-filter placement, and
/// the separation-of-timescales audit.
pub fn check_margins(cfg: &Config) -> Result<Vec<Check>> {
    let m = freq::margins(&cfg.spm, &cfg.dab_gains, cfg.system.omega_0, 0.0)?;
    let f_r = cfg.spm.blocking_resonance();
    let audit = freq::timescale_audit(&cfg.spm, &cfg.system, &cfg.dab_gains)?;
    let audit_failures = audit.iter().filter(|e| !e.ok).count() as f64;
    Ok(vec![
        Check::window("margins: loop crossover [Hz]", m.crossover_hz, 623.0, 663.0),
        Check::window("margins: phase margin [deg]", m.phase_margin_deg, 50.0, 60.0),
        Check::window("margins: gain margin [dB]", m.gain_margin_db, 9.0, 11.0),
        Check::window("margins: blocking resonance [Hz]", f_r, 6190.0 * 0.99, 6190.0 * 1.01),
        Check::window(
            "margins: resonance inside switching window [Hz]",
            f_r,
            cfg.spm.f_s1 / 10.0,
            cfg.spm.f_s1 / 2.0,
        ),
        Check::window("margins: timescale audit failures", audit_failures, 0.0, 0.0),
    ])
}

/// Controller discretization fidelity against the continuous design, up
/// to a tenth of the module control rate.
pub fn check_discretization(cfg: &Config) -> Vec<Check> {
    let mut worst_mag: f64 = 0.0;
    let mut worst_ph: f64 = 0.0;
    for f in freq::log_grid(10.0, 2000.0, 400) {
        let (dm, dp) = freq::discretization_error(&cfg.dab_gains, cfg.system.omega_0, f);
        worst_mag = worst_mag.max(dm.abs());
        worst_ph = worst_ph.max(dp.abs());
    }
    vec![
        Check::at_most("discretization: worst magnitude error [dB]", worst_mag, 0.2),
        Check::at_most("discretization: worst phase error [deg]", worst_ph, 1.0),
    ]
}

/// The module-count-independent tolerance ladder used when a config does
/// not pin one explicitly.
pub fn default_ladder(n_modules: usize) -> ToleranceSpec {
    ToleranceSpec::default_for(n_modules)
}
