//! Multirate time-domain engine.
//!
//! Three clocks, all integer-locked to the plant step:
//!
//! * plant integration (RK4, `dt_plant`, default 1 us);
//! * per-module controllers every `1/f_s1` (default 20 kHz);
//! * central controller every `1/f_c` (default 10 kHz).
//!
//! Controller outputs are zero-order-held between their ticks. All
//! controllers that fire on the same boundary read the same pre-step
//! snapshot, so the order the modules are evaluated in cannot matter; a
//! test hook lets that claim be checked bit-for-bit.
//!
//! # Energy bookkeeping
//!
//! The plant is lossless, so the stored energy must track the integral of
//! the boundary powers (grid + precharge - load - bleed) exactly. That
//! integral is carried as an extra quadrature state integrated by the same
//! RK4 stages as the dynamics, which makes the identity hold to truncation
//! error even across load discontinuities; any modeling or sign mistake
//! shows up as a per-step residual orders of magnitude above the numeric
//! floor.

pub mod catalog;
pub mod metrics;
pub mod scenario;
pub mod trace;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::central::{CentralCommand, CentralController, CentralMeasurements};
use crate::config::Config;
use crate::dab::DabController;
use crate::error::{Error, Result};
use crate::params::{DabGains, SpmParams, SystemParams};
use crate::plant::{
    dab_shape, line_current_derivs, precharge_current, LoadProfile, LoadStep, PrechargeParams,
    V_FLOOR,
};
use scenario::Event;
use trace::{GateRow, TraceFrame};

/// Time constant of the open-loop magnetizing path used while the module
/// buses are charged from the LVDC side during start-up [s].
pub const RECTIFY_TAU: f64 = 5.0e-3;

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<TraceFrame>,
    pub gate_rows: Vec<GateRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub duration: f64,
    pub dt_plant: f64,
    pub steps: u64,
    pub n_modules: usize,
    pub seed: u64,
    /// Worst per-step bookkeeping residual, as a power [W].
    pub max_residual_w: f64,
    /// End-of-run stored-energy drift against the boundary integral [J].
    pub energy_drift_j: f64,
    /// Energy deliberately dumped (breaker trips) [J].
    pub dissipated_j: f64,
    pub final_v_lv: f64,
    pub final_v_mv_mean: f64,
    pub final_v_mv_spread: f64,
    pub max_abs_i_preclose_a: f64,
    pub max_abs_i_first_100ms_a: f64,
    pub t_breaker_closed: Option<f64>,
    pub startup_phases: Vec<(String, f64)>,
    pub final_phase: String,
    pub aborted: Option<String>,
}

pub struct Engine {
    sys: SystemParams,
    gains: DabGains,
    scenario: scenario::ScenarioSpec,
    name: String,
    // Per-module plant constants (tolerance-adjusted).
    c_mv: Vec<f64>,
    coef_dab: Vec<f64>,
    n_turns: f64,
    n_modules: usize,
    n_blocks: usize,
    // Clocks.
    dt: f64,
    n_steps: u64,
    steps_per_dab: u64,
    steps_per_ctl: u64,
    // Grid source.
    v_amp: f64,
    omega0: f64,
    // Loads and sources.
    load: LoadProfile,
    bleed_r: Option<f64>,
    pc: PrechargeParams,
    // Controllers.
    dabs: Vec<DabController>,
    central: CentralController,
    module_order: Vec<usize>,
    // Zero-order-held actuator values.
    phi: Vec<f64>,
    m: Vec<f64>,
    charge_duty: Option<f64>,
    precharge_on: bool,
    breaker_closed: bool,
    afe_gated: bool,
    dab_gated: bool,
    breaker_forced_open: bool,
    p_cmd: f64,
    // Integration state: [v_mv x n, i_a, i_b, i_c, v_lv, e_in].
    state: Vec<f64>,
    // Timed events, keyed by plant step.
    events: Vec<(u64, Event)>,
    dissipated: f64,
}

impl Engine {
    pub fn new(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let sys = cfg.system.clone();
        let gains = cfg.dab_gains.clone();
        let sc = cfg.scenario.clone();
        let n_modules = sys.spm_count();
        let n_blocks = sys.n_blocks;
        let dt = sc.dt_plant;

        let steps_per_dab = (gains.t_s1 / dt).round() as u64;
        let steps_per_ctl = ((1.0 / sys.f_c) / dt).round() as u64;
        for (name, steps, period) in [
            ("module control period", steps_per_dab, gains.t_s1),
            ("central control period", steps_per_ctl, 1.0 / sys.f_c),
        ] {
            if steps == 0 || (steps as f64 * dt - period).abs() > 1.0e-9 * period {
                return Err(Error::Scenario(format!(
                    "dt_plant = {dt} s does not divide the {name} ({period} s)"
                )));
            }
        }
        let n_steps = (sc.duration / dt).round() as u64;

        // Tolerance ladder, assigned to modules by a seeded shuffle so the
        // worst-case neighbors are not always the same physical slots.
        let tol = cfg.effective_tolerances();
        let mut assignment: Vec<usize> = (0..n_modules).collect();
        if sc.tolerances_enabled {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            assignment.shuffle(&mut rng);
        }
        let spm_k: Vec<SpmParams> = assignment
            .iter()
            .map(|&i| tol.apply_tolerances(&cfg.spm, i))
            .collect::<Result<_>>()?;
        let c_mv: Vec<f64> = spm_k.iter().map(|p| p.c_mv).collect();
        let coef_dab: Vec<f64> = spm_k
            .iter()
            .map(|p| p.n_turns / (2.0 * std::f64::consts::PI * p.f_s1 * p.l_leak))
            .collect();

        // Load program: explicit profile plus any set_load events, snapped
        // to the plant grid so a change always lands exactly on a step
        // boundary.
        let snap = |time: f64| (time / dt).round() * dt;
        let mut load = sc.load_profile.clone();
        let mut events: Vec<(u64, Event)> = Vec::new();
        for ev in &sc.events {
            match ev.clone() {
                Event::SetLoad {
                    time,
                    i_lv,
                    p_lv,
                    ramp,
                } => load.steps.push(LoadStep {
                    time: snap(time),
                    i_lv,
                    p_lv,
                    ramp,
                }),
                other => events.push(((other.time() / dt).round() as u64, other)),
            }
        }
        for s in &mut load.steps {
            s.time = snap(s.time);
        }
        load.steps
            .sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        load.validate(sc.duration)?;
        events.sort_by_key(|(step, _)| *step);
        let bleed_r = load.mvdc_bleed_r;

        let pc = PrechargeParams {
            i_limit: sc.startup.i_limit_a,
            v_target: sc.startup.v_target,
            r_pc: sc.startup.r_pc,
        };

        let mut central =
            CentralController::new(&sys, &cfg.spm, &gains, &sc.startup, !sc.startup_enabled);
        let mut dabs: Vec<DabController> = (0..n_modules)
            .map(|_| {
                let mut d = DabController::new(&gains, sys.omega_0);
                d.resonant_enabled = sc.resonant_enabled;
                d
            })
            .collect();

        // Initial plant state.
        let v_amp = sys.v_phase_amp();
        let mut state = vec![0.0; n_modules + 5];
        if !sc.startup_enabled {
            let v_lv0 = sys.v_lv_ref;
            let v_mv0 = gains.k_v * v_lv0;
            let i_load0 = load.level_at(0.0).current(v_lv0, sys.v_lv_ref);
            let p_load0 = v_lv0 * i_load0;
            let p_bleed_each = bleed_r.map_or(0.0, |r| v_mv0 * v_mv0 / r);
            let p_total = p_load0 + p_bleed_each * n_modules as f64;
            let p_each = p_total / n_modules as f64;
            for k in 0..n_modules {
                state[k] = v_mv0;
                // Invert the transfer law for this module's leakage.
                let cap = coef_dab[k] * v_lv0 * v_mv0;
                let disc = 1.0 - 4.0 * p_each / cap;
                if disc < 0.0 {
                    return Err(Error::Scenario(format!(
                        "initial load {p_each:.0} W/module exceeds the transfer ceiling"
                    )));
                }
                let phi0 = 0.5 * (1.0 - disc.sqrt());
                dabs[k].prime_steady(v_mv0, v_lv0, phi0);
            }
            let i_amp = 2.0 * p_total / (3.0 * v_amp);
            for ph in 0..3 {
                state[n_modules + ph] =
                    i_amp * (-(ph as f64) * 2.0 * std::f64::consts::PI / 3.0).cos();
            }
            state[n_modules + 3] = v_lv0;
            central.prime_steady(0.0, p_bleed_each * n_modules as f64);
        }

        let engine = Self {
            sys,
            gains,
            name: sc.name.clone(),
            scenario: sc,
            c_mv,
            coef_dab,
            n_turns: cfg.spm.n_turns,
            n_modules,
            n_blocks,
            dt,
            n_steps,
            steps_per_dab,
            steps_per_ctl,
            v_amp,
            omega0: cfg.system.omega_0,
            load,
            bleed_r,
            pc,
            dabs,
            central,
            module_order: (0..n_modules).collect(),
            phi: vec![0.0; n_modules],
            m: vec![0.0; n_modules],
            charge_duty: None,
            precharge_on: false,
            breaker_closed: !cfg.scenario.startup_enabled,
            afe_gated: !cfg.scenario.startup_enabled,
            dab_gated: !cfg.scenario.startup_enabled,
            breaker_forced_open: false,
            p_cmd: 0.0,
            state,
            events,
            dissipated: 0.0,
        };
        // No actuator pre-fill needed: both controller clocks tick at step
        // zero, before the first integration, and a primed controller's
        // first output is its primed operating point.
        Ok(engine)
    }

    /// Override the order the module controllers are evaluated in. The
    /// result must be bit-identical for any permutation; tests rely on it.
    pub fn set_module_order(&mut self, order: Vec<usize>) -> Result<()> {
        let mut seen = vec![false; self.n_modules];
        for &k in &order {
            if k >= self.n_modules || seen[k] {
                return Err(Error::Invariant(format!(
                    "not a permutation of 0..{}",
                    self.n_modules
                )));
            }
            seen[k] = true;
        }
        if order.len() != self.n_modules {
            return Err(Error::Invariant("wrong permutation length".into()));
        }
        self.module_order = order;
        Ok(())
    }

    fn v_src(&self, t: f64) -> [f64; 3] {
        let th = self.omega0 * t;
        [
            self.v_amp * th.cos(),
            self.v_amp * (th - 2.0 * std::f64::consts::PI / 3.0).cos(),
            self.v_amp * (th + 2.0 * std::f64::consts::PI / 3.0).cos(),
        ]
    }

    /// Stored energy of every reactive element.
    fn energy(&self, s: &[f64]) -> f64 {
        let n = self.n_modules;
        let mut e = 0.0;
        for k in 0..n {
            e += 0.5 * self.c_mv[k] * s[k] * s[k];
        }
        for ph in 0..3 {
            e += 0.5 * self.sys.l_filter * s[n + ph] * s[n + ph];
        }
        e + 0.5 * self.sys.c_lv * s[n + 3] * s[n + 3]
    }

    /// Slopes for the full state vector, including the boundary-power
    /// quadrature. Every power term here appears symmetrically in the
    /// stored-energy identity; keep the two in lockstep when editing.
    fn deriv(&self, t: f64, s: &[f64], out: &mut [f64]) {
        let n = self.n_modules;
        let v_src = self.v_src(t);
        let v_lv = s[n + 3];

        let mut stack = [0.0; 3];
        for k in 0..n {
            stack[k / self.n_blocks] += self.m[k] * s[k];
        }
        let conduct = self.breaker_closed && self.afe_gated;
        let i_ph = [s[n], s[n + 1], s[n + 2]];
        let di = line_current_derivs(&v_src, &stack, self.sys.l_filter, conduct);

        let i_pc = if self.precharge_on {
            precharge_current(v_lv, &self.pc)
        } else {
            0.0
        };
        let i_load = self.load.level_at(t).current(v_lv, self.sys.v_lv_ref);

        let mut p_into_lv = 0.0;
        let mut p_bleed = 0.0;
        for k in 0..n {
            let v = s[k];
            let ph = k / self.n_blocks;
            let p_afe = self.m[k] * v * i_ph[ph];
            // Bleed in current form stays exact all the way to 0 V.
            let bleed_slope = self
                .bleed_r
                .map_or(0.0, |r| v / (r * self.c_mv[k]));
            p_bleed += self.bleed_r.map_or(0.0, |r| v * v / r);
            let mut dv = p_afe / (self.c_mv[k] * v.max(V_FLOOR)) - bleed_slope;
            if self.dab_gated {
                let p_dab = self.coef_dab[k] * v_lv * v * dab_shape(self.phi[k]);
                dv -= p_dab / (self.c_mv[k] * v.max(V_FLOOR));
                p_into_lv += p_dab;
            } else if let Some(d) = self.charge_duty {
                // One-way magnetizing path: the module bus follows
                // d * 2 n v_lv with a 5 ms lag and cannot push back.
                let v_tgt = d * 2.0 * self.n_turns * v_lv;
                let rect = ((v_tgt - v) / RECTIFY_TAU).max(0.0);
                dv += rect;
                p_into_lv -= self.c_mv[k] * v * rect;
            }
            out[k] = dv;
        }

        out[n] = di[0];
        out[n + 1] = di[1];
        out[n + 2] = di[2];
        out[n + 3] = (i_pc - i_load + p_into_lv / v_lv.max(V_FLOOR)) / self.sys.c_lv;
        // Boundary powers: grid in, precharge in, load out, bleed out.
        let p_grid: f64 = (0..3).map(|ph| v_src[ph] * i_ph[ph]).sum();
        out[n + 4] = p_grid + v_lv * i_pc - v_lv * i_load - p_bleed;
    }

    fn measurements(&self, t: f64) -> CentralMeasurements {
        let n = self.n_modules;
        let v_lv = self.state[n + 3];
        CentralMeasurements {
            v_lv,
            i_lv: self.load.level_at(t).current(v_lv, self.sys.v_lv_ref),
            v_abc: self.v_src(t),
            i_abc: [self.state[n], self.state[n + 1], self.state[n + 2]],
        }
    }

    fn apply_command(&mut self, cmd: &CentralCommand) {
        self.m.copy_from_slice(&cmd.m_duty);
        self.charge_duty = cmd.charge_duty;
        self.precharge_on = cmd.precharge_on;
        self.breaker_closed = cmd.breaker_closed && !self.breaker_forced_open;
        self.afe_gated = cmd.afe_gated;
        self.dab_gated = cmd.dab_gated;
        self.p_cmd = cmd.p_cmd;
    }

    fn apply_event(&mut self, ev: &Event) {
        match *ev {
            Event::SetLoad { .. } => unreachable!("merged into the load profile"),
            Event::SetQref { q_var, .. } => self.central.set_q_ref(q_var),
            Event::ToggleResonant { enabled, .. } => {
                for d in &mut self.dabs {
                    d.resonant_enabled = enabled;
                }
            }
            Event::OpenBreaker { .. } => {
                let n = self.n_modules;
                for ph in 0..3 {
                    self.dissipated +=
                        0.5 * self.sys.l_filter * self.state[n + ph] * self.state[n + ph];
                    self.state[n + ph] = 0.0;
                }
                self.breaker_forced_open = true;
                self.breaker_closed = false;
            }
        }
    }

    fn make_frame(&self, t: f64) -> TraceFrame {
        let n = self.n_modules;
        let s = &self.state;
        let v_lv = s[n + 3];
        let i_ph = [s[n], s[n + 1], s[n + 2]];
        let mut p_dab = vec![0.0; n];
        let mut p_afe = vec![0.0; n];
        for k in 0..n {
            let phx = k / self.n_blocks;
            p_afe[k] = self.m[k] * s[k] * i_ph[phx];
            if self.dab_gated {
                p_dab[k] = self.coef_dab[k] * v_lv * s[k] * dab_shape(self.phi[k]);
            } else if let Some(d) = self.charge_duty {
                let v_tgt = d * 2.0 * self.n_turns * v_lv;
                let rect = ((v_tgt - s[k]) / RECTIFY_TAU).max(0.0);
                p_dab[k] = -self.c_mv[k] * s[k] * rect;
            }
        }
        TraceFrame {
            t,
            v_lv,
            i_lv: self.load.level_at(t).current(v_lv, self.sys.v_lv_ref),
            v_abc: self.v_src(t),
            i_abc: i_ph,
            v_mv: s[..n].to_vec(),
            phi: self.phi.clone(),
            p_dab,
            p_afe,
            phase: self.central.seq.phase,
            p_gref: self.p_cmd,
        }
    }

    fn guard(&self, t: f64, step: u64) -> Result<()> {
        let n = self.n_modules;
        let s = &self.state;
        let v_mv_lim = 10.0 * self.gains.k_v * self.sys.v_lv_ref;
        let i_lim = 10.0 * 2.0 * self.sys.s_rated / (3.0 * self.v_amp);
        for (what, bad) in [
            (
                "module bus voltage",
                s[..n].iter().any(|v| !v.is_finite() || v.abs() > v_mv_lim),
            ),
            (
                "line current",
                (0..3).any(|ph| !s[n + ph].is_finite() || s[n + ph].abs() > i_lim),
            ),
            (
                "LVDC bus voltage",
                !s[n + 3].is_finite() || s[n + 3].abs() > 10.0 * self.sys.v_lv_ref,
            ),
        ] {
            if bad {
                return Err(Error::Diverged {
                    t,
                    step,
                    what: what.into(),
                });
            }
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput> {
        let n = self.n_modules;
        let dim = n + 5;
        let mut k1 = vec![0.0; dim];
        let mut k2 = vec![0.0; dim];
        let mut k3 = vec![0.0; dim];
        let mut k4 = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];

        let mut frames: Vec<TraceFrame> =
            Vec::with_capacity((self.n_steps / self.scenario.decimate as u64 + 2) as usize);
        let mut gate_rows: Vec<GateRow> =
            Vec::with_capacity((self.n_steps / self.steps_per_ctl + 1) as usize);

        let e_start = self.energy(&self.state);
        let mut prev_e = e_start;
        let mut prev_e_in = 0.0;
        let mut prev_diss = 0.0;
        let mut max_residual_w: f64 = 0.0;
        let mut max_i_preclose: f64 = 0.0;
        let mut max_i_100ms: f64 = 0.0;
        let mut t_breaker_closed: Option<f64> = None;
        let mut next_event = 0usize;

        for step in 0..self.n_steps {
            let t = step as f64 * self.dt;

            while next_event < self.events.len() && self.events[next_event].0 == step {
                let ev = self.events[next_event].1.clone();
                self.apply_event(&ev);
                next_event += 1;
            }

            if step % self.steps_per_ctl == 0 {
                let meas = self.measurements(t);
                let cmd = self.central.tick(t, &meas);
                if let Some(reason) = self.central.seq.aborted.clone() {
                    return Err(Error::Scenario(reason));
                }
                gate_rows.push(GateRow {
                    t,
                    codes: cmd.gates.clone(),
                });
                self.apply_command(&cmd);
                if self.breaker_closed && t_breaker_closed.is_none() {
                    t_breaker_closed = Some(t);
                }
            }

            if step % self.steps_per_dab == 0 {
                let v_lv = self.state[n + 3];
                for idx in 0..self.module_order.len() {
                    let k = self.module_order[idx];
                    if self.dab_gated {
                        self.phi[k] = self.dabs[k].step(self.state[k], v_lv);
                    } else {
                        self.dabs[k].idle_step(self.state[k], v_lv);
                        self.phi[k] = 0.0;
                    }
                }
            }

            if step % self.scenario.decimate as u64 == 0 {
                frames.push(self.make_frame(t));
            }

            // Classic RK4 with the actuators frozen across the step.
            let h = self.dt;
            self.deriv(t, &self.state, &mut k1);
            for j in 0..dim {
                tmp[j] = self.state[j] + 0.5 * h * k1[j];
            }
            self.deriv(t + 0.5 * h, &tmp, &mut k2);
            for j in 0..dim {
                tmp[j] = self.state[j] + 0.5 * h * k2[j];
            }
            self.deriv(t + 0.5 * h, &tmp, &mut k3);
            for j in 0..dim {
                tmp[j] = self.state[j] + h * k3[j];
            }
            self.deriv(t + h, &tmp, &mut k4);
            for j in 0..dim {
                self.state[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }

            let t1 = (step + 1) as f64 * self.dt;
            self.guard(t1, step + 1)?;

            // Per-step audit: stored-energy change vs boundary integral.
            let e_now = self.energy(&self.state);
            let e_in = self.state[n + 4];
            let residual =
                (e_now - prev_e) - (e_in - prev_e_in) + (self.dissipated - prev_diss);
            max_residual_w = max_residual_w.max((residual / self.dt).abs());
            prev_e = e_now;
            prev_e_in = e_in;
            prev_diss = self.dissipated;

            let i_max_now = (0..3).fold(0.0_f64, |a, ph| a.max(self.state[n + ph].abs()));
            match t_breaker_closed {
                None => max_i_preclose = max_i_preclose.max(i_max_now),
                Some(tc) if t1 <= tc + 0.1 => max_i_100ms = max_i_100ms.max(i_max_now),
                _ => {}
            }
        }

        let t_end = self.n_steps as f64 * self.dt;
        frames.push(self.make_frame(t_end));

        let v_mv_final = &self.state[..n];
        let mean = v_mv_final.iter().sum::<f64>() / n as f64;
        let spread = metrics::peak_to_peak(v_mv_final);
        let summary = RunSummary {
            name: self.name.clone(),
            duration: t_end,
            dt_plant: self.dt,
            steps: self.n_steps,
            n_modules: n,
            seed: self.scenario.seed,
            max_residual_w,
            energy_drift_j: (self.energy(&self.state) - e_start) - self.state[n + 4]
                + self.dissipated,
            dissipated_j: self.dissipated,
            final_v_lv: self.state[n + 3],
            final_v_mv_mean: mean,
            final_v_mv_spread: spread,
            max_abs_i_preclose_a: max_i_preclose,
            max_abs_i_first_100ms_a: max_i_100ms,
            t_breaker_closed,
            startup_phases: self
                .central
                .seq
                .history
                .iter()
                .map(|(p, t)| (p.as_str().to_string(), *t))
                .collect(),
            final_phase: self.central.seq.phase.as_str().to_string(),
            aborted: self.central.seq.aborted.clone(),
        };
        Ok(RunOutput {
            frames,
            gate_rows,
            summary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::LoadStep;
    use approx::assert_relative_eq;

    fn nominal_cfg(duration: f64, p_load: f64) -> Config {
        let mut cfg = Config::default();
        cfg.scenario.name = "test".into();
        cfg.scenario.duration = duration;
        cfg.scenario.load_profile.mvdc_bleed_r = Some(2150.0 * 2150.0 / 700.0);
        if p_load > 0.0 {
            cfg.scenario.load_profile.steps.push(LoadStep {
                time: 0.0,
                i_lv: None,
                p_lv: Some(p_load),
                ramp: 0.0,
            });
        }
        cfg
    }

    fn csv_bytes(out: &RunOutput) -> Vec<u8> {
        let mut buf = Vec::new();
        trace::write_csv(&out.frames, out.summary.n_modules, &mut buf).unwrap();
        buf
    }

    #[test]
    fn primed_steady_state_stays_put() {
        let cfg = nominal_cfg(0.05, 0.0);
        let out = Engine::new(&cfg).unwrap().run().unwrap();
        assert!((out.summary.final_v_lv - 750.0).abs() < 0.75);
        assert!((out.summary.final_v_mv_mean - 2150.0).abs() < 5.0);
        assert!(out.summary.final_v_mv_spread < 1.0);
        assert!(out.summary.max_residual_w < 0.1, "{}", out.summary.max_residual_w);
    }

    #[test]
    fn full_load_steady_state_stays_put() {
        // Priming sets the cycle-average operating point; the 120 Hz
        // pulsation then has to establish itself. At full load the
        // phase-shift ceiling clips module transfer at the pulsation
        // crests, which leaves a small sub-10-Hz wobble (+/- ~2 V) on the
        // bus, so the hold band here is wider than at half load.
        let cfg = nominal_cfg(0.6, 1.0e6);
        let out = Engine::new(&cfg).unwrap().run().unwrap();
        assert!(
            (out.summary.final_v_lv - 750.0).abs() < 4.0,
            "v_lv {}",
            out.summary.final_v_lv
        );
        // Clipped crests park surplus energy on the module buses, so their
        // cycle mean rides above the tracking reference.
        assert!((out.summary.final_v_mv_mean - 2150.0).abs() < 100.0);
        // Full power flows: grid feeds ~1 MW + bleed.
        let f = out.frames.last().unwrap();
        let p_dab_sum: f64 = f.p_dab.iter().sum();
        assert_relative_eq!(p_dab_sum, 1.0e6, max_relative = 0.05);
        assert!(out.summary.max_residual_w < 2.0, "{}", out.summary.max_residual_w);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = nominal_cfg(0.03, 1.0e6);
        let a = Engine::new(&cfg).unwrap().run().unwrap();
        let b = Engine::new(&cfg).unwrap().run().unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
    }

    #[test]
    fn module_evaluation_order_cannot_matter() {
        let mut cfg = nominal_cfg(0.03, 1.0e6);
        cfg.scenario.tolerances_enabled = true;
        let a = Engine::new(&cfg).unwrap().run().unwrap();
        let mut eng = Engine::new(&cfg).unwrap();
        let reversed: Vec<usize> = (0..18).rev().collect();
        eng.set_module_order(reversed).unwrap();
        let b = eng.run().unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
    }

    #[test]
    fn rejects_non_permutation_order() {
        let cfg = nominal_cfg(0.01, 0.0);
        let mut eng = Engine::new(&cfg).unwrap();
        assert!(eng.set_module_order(vec![0; 18]).is_err());
        assert!(eng.set_module_order(vec![0, 1]).is_err());
    }

    #[test]
    fn startup_prefix_precharges_the_bus() {
        let mut cfg = Config::default();
        cfg.scenario.duration = 0.2;
        cfg.scenario.startup_enabled = true;
        cfg.scenario.load_profile.mvdc_bleed_r = Some(2150.0 * 2150.0 / 700.0);
        let out = Engine::new(&cfg).unwrap().run().unwrap();
        // 50 A into 50 mF: 1000 V/s.
        assert_relative_eq!(out.summary.final_v_lv, 200.0, max_relative = 0.01);
        assert_eq!(out.summary.final_phase, "precharge");
        assert_eq!(out.summary.max_abs_i_preclose_a, 0.0);
        assert!(out.summary.max_residual_w < 0.1, "{}", out.summary.max_residual_w);
    }

    #[test]
    fn events_fire_and_are_merged() {
        let mut cfg = nominal_cfg(0.03, 0.0);
        cfg.scenario.events = vec![
            Event::SetLoad {
                time: 0.01,
                i_lv: Some(100.0),
                p_lv: None,
                ramp: 0.0,
            },
            Event::OpenBreaker { time: 0.02 },
        ];
        let out = Engine::new(&cfg).unwrap().run().unwrap();
        // After the breaker event the line currents are pinned at zero and
        // the dumped inductor energy is tracked, keeping the books closed.
        let f = out.frames.last().unwrap();
        assert_eq!(f.i_abc, [0.0; 3]);
        assert!(out.summary.dissipated_j > 0.0);
        assert!(out.summary.max_residual_w < 0.5, "{}", out.summary.max_residual_w);
    }

    #[test]
    fn mismatched_timestep_is_rejected() {
        let mut cfg = nominal_cfg(0.01, 0.0);
        cfg.scenario.dt_plant = 3.0e-6;
        assert!(matches!(Engine::new(&cfg), Err(Error::Scenario(_))));
    }
}
