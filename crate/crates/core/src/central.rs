//! Central controller: grid synchronization, LVDC bus regulation, phase
//! current control, multilevel modulation, and the start-up sequencer.
//!
//! This controller never sees an individual module DC-bus voltage. It
//! commands one stack voltage per phase and every module in the phase
//! receives the same averaged duty; module-level balancing is left
//! entirely to the decentralized per-module loops. The staircase gate
//! pattern (which modules switch at full level and which one modulates
//! the remainder, rotating every line cycle) is still computed and logged
//! so the switching story stays inspectable, but the averaged plant
//! integrates the uniform duty.

use serde::{Deserialize, Serialize};

use crate::dab::Biquad;
use crate::params::{DabGains, SpmParams, SystemParams};

/// Everything the central controller is allowed to measure.
#[derive(Debug, Clone, Copy, Default)]
pub struct CentralMeasurements {
    pub v_lv: f64,
    /// Load current drawn from the LVDC bus [A].
    pub i_lv: f64,
    pub v_abc: [f64; 3],
    pub i_abc: [f64; 3],
}

/// Synchronous-reference-frame PLL with amplitude normalization and a
/// free-running fallback when the grid voltage collapses.
#[derive(Debug, Clone)]
pub struct Pll {
    pub theta: f64,
    pub omega: f64,
    pub v_amp: f64,
    integ: f64,
    kp: f64,
    ki: f64,
    omega_0: f64,
    amp_floor: f64,
    /// Set for exactly one tick whenever theta wraps a full cycle.
    pub cycle_wrapped: bool,
}

impl Pll {
    pub fn new(omega_0: f64, bw_hz: f64, v_amp_nom: f64) -> Self {
        // Critically damped loop: kp = 2 zeta wn, ki = wn^2 on the
        // normalized q-axis error (radians of phase).
        let wn = 2.0 * std::f64::consts::PI * bw_hz;
        Self {
            theta: 0.0,
            omega: omega_0,
            v_amp: 0.0,
            integ: 0.0,
            kp: 2.0 * wn,
            ki: wn * wn,
            omega_0,
            amp_floor: 0.01 * v_amp_nom,
            cycle_wrapped: false,
        }
    }

    pub fn prime(&mut self, theta: f64, v_amp: f64) {
        self.theta = theta.rem_euclid(2.0 * std::f64::consts::PI);
        self.v_amp = v_amp;
        self.integ = 0.0;
        self.omega = self.omega_0;
    }

    pub fn step(&mut self, v_abc: [f64; 3], dt: f64) {
        let [va, vb, vc] = v_abc;
        let v_alpha = (2.0 * va - vb - vc) / 3.0;
        let v_beta = (vb - vc) / 3.0_f64.sqrt();
        self.v_amp = v_alpha.hypot(v_beta);
        if self.v_amp >= self.amp_floor {
            // Normalized q-axis voltage ~ sin(theta_grid - theta).
            let eq = (-self.theta.sin() * v_alpha + self.theta.cos() * v_beta) / self.v_amp;
            self.integ += self.ki * eq * dt;
            self.omega = self.omega_0 + self.integ + self.kp * eq;
        } else {
            self.integ = 0.0;
            self.omega = self.omega_0;
        }
        let next = self.theta + self.omega * dt;
        self.cycle_wrapped = next >= 2.0 * std::f64::consts::PI;
        self.theta = next.rem_euclid(2.0 * std::f64::consts::PI);
    }

    pub fn locked_to_grid(&self) -> bool {
        self.v_amp >= self.amp_floor
    }
}

/// LVDC bus PI regulator producing a grid power command, with load-current
/// feedforward and apparent-power saturation (conditional integration).
#[derive(Debug, Clone)]
pub struct LvdcRegulator {
    pub kp: f64,
    pub ki: f64,
    integ: f64,
    v_ref: f64,
    s_rated: f64,
}

impl LvdcRegulator {
    pub fn new(v_ref: f64, c_eff: f64, bw_hz: f64, s_rated: f64) -> Self {
        // kp sized so the voltage loop crosses near bw_hz against the
        // effective bus capacitance (LV caps plus the module DC buses
        // reflected through the DC-DC conversion ratio); integral corner a
        // factor of five below crossover.
        let wc = 2.0 * std::f64::consts::PI * bw_hz;
        let kp = wc * c_eff * v_ref;
        Self {
            kp,
            ki: kp * wc / 5.0,
            integ: 0.0,
            v_ref,
            s_rated,
        }
    }

    /// Preset the integrator (used when a run starts already regulating).
    pub fn prime(&mut self, p_trim: f64) {
        self.integ = p_trim;
    }

    pub fn reset(&mut self) {
        self.integ = 0.0;
    }

    pub fn step(&mut self, v_lv: f64, p_feedforward: f64, q_ref: f64, dt: f64) -> f64 {
        let err = self.v_ref - v_lv;
        let p_lim = (self.s_rated * self.s_rated - q_ref * q_ref).max(0.0).sqrt();
        let integ_cand = self.integ + self.ki * err * dt;
        let raw = self.kp * err + integ_cand + p_feedforward;
        if raw.abs() <= p_lim {
            self.integ = integ_cand;
            raw
        } else {
            raw.clamp(-p_lim, p_lim)
        }
    }
}

/// Phase current references for commanded P and Q at the sensed grid angle
/// and amplitude. Returns zero (converter coasts) below 10% grid voltage
/// rather than commanding unbounded current into a sag.
pub fn current_refs(p_cmd: f64, q_cmd: f64, theta: f64, v_amp: f64, v_amp_nom: f64) -> [f64; 3] {
    if v_amp < 0.1 * v_amp_nom {
        return [0.0; 3];
    }
    let scale = 2.0 / (3.0 * v_amp);
    let i_alpha = scale * (p_cmd * theta.cos() + q_cmd * theta.sin());
    let i_beta = scale * (p_cmd * theta.sin() - q_cmd * theta.cos());
    [
        i_alpha,
        (-i_alpha + 3.0_f64.sqrt() * i_beta) / 2.0,
        (-i_alpha - 3.0_f64.sqrt() * i_beta) / 2.0,
    ]
}

/// Per-phase proportional-resonant current controller with grid-voltage
/// feedforward. Output is the stack voltage each phase should present.
#[derive(Debug, Clone)]
pub struct CurrentController {
    kp: f64,
    res: [Biquad; 3],
    dt: f64,
}

impl CurrentController {
    pub fn new(l_filter: f64, bw_hz: f64, omega_0: f64, dt: f64) -> Self {
        let kp = l_filter * 2.0 * std::f64::consts::PI * bw_hz;
        // Resonant branch g s / (s^2 + wb s + w0^2): 5 Hz band so the
        // fundamental re-acquires within ~60 ms after a load step, center
        // magnitude g/wb = 250 to bury the reactive drop and any stack
        // gain error at line frequency.
        let wb = 2.0 * std::f64::consts::PI * 5.0;
        let t_r = 0.004;
        let res = Biquad::resonant(wb / t_r, wb, omega_0, dt);
        Self {
            kp,
            res: [res.clone(), res.clone(), res],
            dt,
        }
    }

    pub fn reset(&mut self) {
        for r in &mut self.res {
            r.reset();
        }
    }

    pub fn step(&mut self, i_ref: [f64; 3], i_meas: [f64; 3], v_grid: [f64; 3]) -> [f64; 3] {
        let mut v_cmd = [0.0; 3];
        for ph in 0..3 {
            let e = i_ref[ph] - i_meas[ph];
            let u = self.kp * e + self.res[ph].step(e);
            // Raising the stack voltage lowers the absorbed current, hence
            // the feedforward-minus-correction form.
            v_cmd[ph] = v_grid[ph] - u;
        }
        v_cmd
    }

    /// Discrete loop-shaping response of the compensator alone.
    pub fn response(&self, f_hz: f64) -> num_complex::Complex64 {
        self.kp + self.res[0].response(f_hz, self.dt)
    }
}

/// Nearest-level staircase modulator.
///
/// The averaged plant receives one uniform duty per phase (`m`, the
/// rotation-averaged value every module converges to), while the gate
/// codes record the instantaneous staircase: `k_full` modules hard-on, one
/// module PWM-ing the remainder against an alternating-level carrier, the
/// rest idle, with roles rotating one slot per line cycle so thermal and
/// conduction stress average out.
#[derive(Debug, Clone)]
pub struct Modulator {
    n_blocks: usize,
    v_mv_nom: f64,
    rotation: usize,
    carrier_high: bool,
}

/// Gate code per module: 0 = bypass, 1 = insert positive, 2 = insert
/// negative. Code 3 (shoot-through) must never be emitted.
pub type GateCode = u8;

#[derive(Debug, Clone)]
pub struct ModulationResult {
    /// Per-phase uniform module duty in [-1, 1].
    pub m: [f64; 3],
    /// Per-module gate codes, phase-major (3 * n_blocks entries).
    pub gates: Vec<GateCode>,
    pub saturated: bool,
}

impl Modulator {
    pub fn new(n_blocks: usize, v_mv_nom: f64) -> Self {
        Self {
            n_blocks,
            v_mv_nom,
            rotation: 0,
            carrier_high: false,
        }
    }

    /// Advance the staircase role assignment one slot (call on line-cycle
    /// boundaries).
    pub fn advance_rotation(&mut self) {
        self.rotation = (self.rotation + 1) % self.n_blocks;
    }

    /// Alternate the carrier level (call every control tick; two ticks per
    /// switching period).
    pub fn toggle_carrier(&mut self) {
        self.carrier_high = !self.carrier_high;
    }

    /// `v_mv_est` is the controller's belief about the per-module DC bus;
    /// the stack realizes duty * actual bus, so a stale estimate shows up
    /// as a gain error on the whole phase-leg voltage.
    pub fn modulate(&self, v_cmd: [f64; 3], v_mv_est: f64) -> ModulationResult {
        let n = self.n_blocks;
        let nf = n as f64;
        let carrier = if self.carrier_high { 0.75 } else { 0.25 };
        let mut m = [0.0; 3];
        let mut gates = vec![0u8; 3 * n];
        let mut saturated = false;
        for ph in 0..3 {
            let lvl_raw = v_cmd[ph] / v_mv_est;
            let lvl = lvl_raw.clamp(-nf, nf);
            saturated |= lvl != lvl_raw;
            m[ph] = lvl / nf;
            let a = lvl.abs();
            let k_full = (a.floor() as usize).min(n);
            let rem = a - k_full as f64;
            for j in 0..n {
                let role = (j + self.rotation) % n;
                let duty = if role < k_full {
                    1.0
                } else if role == k_full {
                    rem
                } else {
                    0.0
                };
                gates[ph * n + j] = if duty >= carrier {
                    if lvl >= 0.0 {
                        1
                    } else {
                        2
                    }
                } else {
                    0
                };
            }
        }
        ModulationResult { m, gates, saturated }
    }
}

/// Start-up sequencer tunables. Defaults walk the full sequence in about
/// 1.4 s for the reference stack.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StartupParams {
    /// Precharge source current limit [A].
    pub i_limit_a: f64,
    /// Precharge source open voltage [V].
    pub v_target: f64,
    /// Precharge source series resistance [ohm].
    pub r_pc: f64,
    /// Open-loop module-bus magnetizing ramp duration [s].
    pub duty_ramp_s: f64,
    /// Dwell at the ramp endpoint before handing over to the closed
    /// per-module loops [s].
    pub post_ramp_hold_s: f64,
    /// Dwell in closed-loop regulation before closing the breaker [s].
    pub ready_latency_s: f64,
    /// Dwell with the breaker closed but the front end still idle [s].
    pub breaker_close_delay_s: f64,
    /// Per-phase watchdog; busting it aborts the sequence [s].
    pub phase_timeout_s: f64,
}

impl Default for StartupParams {
    fn default() -> Self {
        Self {
            i_limit_a: 50.0,
            v_target: 750.0,
            r_pc: 1.0,
            duty_ramp_s: 0.5,
            post_ramp_hold_s: 0.1,
            ready_latency_s: 0.05,
            breaker_close_delay_s: 0.02,
            phase_timeout_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartupPhase {
    Idle,
    Precharge,
    DutyRamp,
    MvdcRegulate,
    BreakerClose,
    Nominal,
}

impl StartupPhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            StartupPhase::Idle => "idle",
            StartupPhase::Precharge => "precharge",
            StartupPhase::DutyRamp => "duty_ramp",
            StartupPhase::MvdcRegulate => "mvdc_regulate",
            StartupPhase::BreakerClose => "breaker_close",
            StartupPhase::Nominal => "nominal",
        }
    }
}

/// Phase walker for the black-start sequence:
///
/// Idle -> Precharge (current-limited LVDC source)
///      -> DutyRamp (module buses magnetized open-loop from the LVDC side)
///      -> MvdcRegulate (per-module loops close; precharge disconnects)
///      -> BreakerClose (grid breaker in; front end still un-gated, the
///         stacked module voltages block any diode conduction)
///      -> Nominal (front-end gating and LVDC regulation active)
#[derive(Debug, Clone)]
pub struct StartupSequencer {
    pub phase: StartupPhase,
    params: StartupParams,
    /// Final magnetizing duty; matches the closed-loop operating point so
    /// the handover is bumpless.
    duty_end: f64,
    phase_entered: f64,
    pub aborted: Option<String>,
    /// (phase, entry time) log.
    pub history: Vec<(StartupPhase, f64)>,
}

impl StartupSequencer {
    pub fn new(params: &StartupParams, duty_end: f64, start_nominal: bool) -> Self {
        let phase = if start_nominal {
            StartupPhase::Nominal
        } else {
            StartupPhase::Idle
        };
        Self {
            phase,
            params: params.clone(),
            duty_end,
            phase_entered: 0.0,
            aborted: None,
            history: vec![(phase, 0.0)],
        }
    }

    fn enter(&mut self, phase: StartupPhase, t: f64) {
        self.phase = phase;
        self.phase_entered = t;
        self.history.push((phase, t));
    }

    pub fn tick(&mut self, t: f64, v_lv: f64) {
        if self.aborted.is_some() {
            return;
        }
        let dwell = t - self.phase_entered;
        if self.phase != StartupPhase::Nominal
            && self.phase != StartupPhase::Idle
            && dwell > self.params.phase_timeout_s
        {
            self.aborted = Some(format!(
                "startup watchdog: {} still active after {:.2} s",
                self.phase.as_str(),
                dwell
            ));
            self.enter(StartupPhase::Idle, t);
            return;
        }
        match self.phase {
            StartupPhase::Idle => self.enter(StartupPhase::Precharge, t),
            StartupPhase::Precharge => {
                if v_lv >= 0.95 * self.params.v_target {
                    self.enter(StartupPhase::DutyRamp, t);
                }
            }
            StartupPhase::DutyRamp => {
                if dwell >= self.params.duty_ramp_s + self.params.post_ramp_hold_s {
                    self.enter(StartupPhase::MvdcRegulate, t);
                }
            }
            StartupPhase::MvdcRegulate => {
                if dwell >= self.params.ready_latency_s {
                    self.enter(StartupPhase::BreakerClose, t);
                }
            }
            StartupPhase::BreakerClose => {
                if dwell >= self.params.breaker_close_delay_s {
                    self.enter(StartupPhase::Nominal, t);
                }
            }
            StartupPhase::Nominal => {}
        }
    }

    /// Open-loop magnetizing duty while ramping, `None` once the
    /// per-module loops own the buses.
    pub fn charge_duty(&self, t: f64) -> Option<f64> {
        match self.phase {
            StartupPhase::DutyRamp => {
                let x = ((t - self.phase_entered) / self.params.duty_ramp_s).clamp(0.0, 1.0);
                Some(self.duty_end * x)
            }
            _ => None,
        }
    }

    pub fn precharge_on(&self) -> bool {
        matches!(self.phase, StartupPhase::Precharge | StartupPhase::DutyRamp)
    }

    pub fn dab_gated(&self) -> bool {
        matches!(
            self.phase,
            StartupPhase::MvdcRegulate | StartupPhase::BreakerClose | StartupPhase::Nominal
        )
    }

    pub fn breaker_closed(&self) -> bool {
        matches!(self.phase, StartupPhase::BreakerClose | StartupPhase::Nominal)
    }

    pub fn afe_gated(&self) -> bool {
        self.phase == StartupPhase::Nominal
    }
}

/// What the central controller tells the plant and the module controllers
/// each tick.
#[derive(Debug, Clone)]
pub struct CentralCommand {
    /// Per-module averaged AC duty, phase-major.
    pub m_duty: Vec<f64>,
    /// Per-module staircase gate code, phase-major.
    pub gates: Vec<GateCode>,
    /// Open-loop magnetizing duty during the ramp phase.
    pub charge_duty: Option<f64>,
    pub precharge_on: bool,
    pub dab_gated: bool,
    pub breaker_closed: bool,
    pub afe_gated: bool,
    pub phase: StartupPhase,
    /// Grid power command [W] (zero while not regulating).
    pub p_cmd: f64,
}

#[derive(Debug, Clone)]
pub struct CentralController {
    pub pll: Pll,
    pub lvdc: LvdcRegulator,
    cc: CurrentController,
    modulator: Modulator,
    pub seq: StartupSequencer,
    q_ref: f64,
    dt: f64,
    v_amp_nom: f64,
    n_blocks: usize,
    k_v: f64,
}

impl CentralController {
    pub fn new(
        sys: &SystemParams,
        spm: &SpmParams,
        gains: &DabGains,
        startup: &StartupParams,
        start_nominal: bool,
    ) -> Self {
        let dt = 1.0 / sys.f_c;
        let v_amp_nom = sys.v_phase_amp();
        // Module DC buses look like capacitance on the LVDC side through
        // the square of the conversion ratio.
        let c_eff =
            sys.c_lv + sys.spm_count() as f64 * spm.c_mv * gains.k_v * gains.k_v;
        let duty_end = gains.k_v / (2.0 * spm.n_turns);
        Self {
            pll: Pll::new(sys.omega_0, sys.pll_bw_hz, v_amp_nom),
            lvdc: LvdcRegulator::new(sys.v_lv_ref, c_eff, sys.lvdc_bw_hz, sys.s_rated),
            cc: CurrentController::new(sys.l_filter, sys.cc_bw_hz, sys.omega_0, dt),
            modulator: Modulator::new(sys.n_blocks, spm.v_mv_nom),
            seq: StartupSequencer::new(startup, duty_end, start_nominal),
            q_ref: 0.0,
            dt,
            v_amp_nom,
            n_blocks: sys.n_blocks,
            k_v: gains.k_v,
        }
    }

    pub fn set_q_ref(&mut self, q: f64) {
        self.q_ref = q;
    }

    pub fn q_ref(&self) -> f64 {
        self.q_ref
    }

    /// Seed for a run that begins already on the grid at steady state.
    pub fn prime_steady(&mut self, theta0: f64, p_trim: f64) {
        self.pll.prime(theta0, self.v_amp_nom);
        self.lvdc.prime(p_trim);
    }

    pub fn tick(&mut self, t: f64, meas: &CentralMeasurements) -> CentralCommand {
        self.pll.step(meas.v_abc, self.dt);
        if self.pll.cycle_wrapped {
            self.modulator.advance_rotation();
        }
        self.modulator.toggle_carrier();
        self.seq.tick(t, meas.v_lv);

        let module_count = 3 * self.n_blocks;
        if self.seq.afe_gated() {
            let p_ff = meas.v_lv * meas.i_lv;
            let p_cmd = self.lvdc.step(meas.v_lv, p_ff, self.q_ref, self.dt);
            let refs = current_refs(
                p_cmd,
                self.q_ref,
                self.pll.theta,
                self.pll.v_amp,
                self.v_amp_nom,
            );
            let v_cmd = self.cc.step(refs, meas.i_abc, meas.v_abc);
            // Module buses track k_v * v_lv, so scale duties by that estimate
            // (floored well below any sane operating point) rather than a
            // fixed nominal; otherwise a sagging bus mis-scales the stack.
            let v_mv_est = (self.k_v * meas.v_lv).max(0.3 * self.modulator.v_mv_nom);
            let md = self.modulator.modulate(v_cmd, v_mv_est);
            let mut m_duty = Vec::with_capacity(module_count);
            for ph in 0..3 {
                for _ in 0..self.n_blocks {
                    m_duty.push(md.m[ph]);
                }
            }
            CentralCommand {
                m_duty,
                gates: md.gates,
                charge_duty: None,
                precharge_on: false,
                dab_gated: true,
                breaker_closed: true,
                afe_gated: true,
                phase: self.seq.phase,
                p_cmd,
            }
        } else {
            self.cc.reset();
            self.lvdc.reset();
            CentralCommand {
                m_duty: vec![0.0; module_count],
                gates: vec![0; module_count],
                charge_duty: self.seq.charge_duty(t),
                precharge_on: self.seq.precharge_on(),
                dab_gated: self.seq.dab_gated(),
                breaker_closed: self.seq.breaker_closed(),
                afe_gated: false,
                phase: self.seq.phase,
                p_cmd: 0.0,
            }
        }
    }
}
