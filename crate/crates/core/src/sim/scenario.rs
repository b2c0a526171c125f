//! Scenario description: what a run does and when.

use serde::{Deserialize, Serialize};

use crate::central::StartupParams;
use crate::error::{Error, Result};
use crate::plant::LoadProfile;

/// Timed one-shot actions applied during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    /// Change the LVDC load (merged into the load profile at init).
    SetLoad {
        time: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        i_lv: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_lv: Option<f64>,
        #[serde(default)]
        ramp: f64,
    },
    /// Change the reactive power setpoint.
    SetQref { time: f64, q_var: f64 },
    /// Enable or disable every module's resonant ripple branch.
    ToggleResonant { time: f64, enabled: bool },
    /// Trip the grid breaker (the stored filter-inductor energy is dumped
    /// into the breaker and tracked as dissipation).
    OpenBreaker { time: f64 },
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::SetLoad { time, .. }
            | Event::SetQref { time, .. }
            | Event::ToggleResonant { time, .. }
            | Event::OpenBreaker { time } => time,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Simulated span [s].
    pub duration: f64,
    /// Plant integration step [s].
    pub dt_plant: f64,
    /// Trace decimation: one frame every this many plant steps.
    pub decimate: usize,
    /// Seed for the tolerance-assignment shuffle.
    pub seed: u64,
    pub load_profile: LoadProfile,
    /// Apply per-module component tolerances.
    pub tolerances_enabled: bool,
    /// Start the modules' resonant ripple branches enabled.
    pub resonant_enabled: bool,
    /// Begin de-energized and walk the start-up sequence; otherwise the
    /// run starts already grid-connected in steady state.
    pub startup_enabled: bool,
    pub startup: StartupParams,
    pub events: Vec<Event>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            duration: 1.0,
            dt_plant: 1.0e-6,
            decimate: 100,
            seed: 1,
            load_profile: LoadProfile::default(),
            tolerances_enabled: false,
            resonant_enabled: true,
            startup_enabled: false,
            startup: StartupParams::default(),
            events: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Scenario(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.dt_plant > 0.0 && self.dt_plant <= 1.0e-4) {
            return Err(Error::Scenario(format!(
                "dt_plant must be in (0, 100 us], got {}",
                self.dt_plant
            )));
        }
        if self.decimate == 0 {
            return Err(Error::Scenario("decimate must be >= 1".into()));
        }
        self.load_profile.validate(self.duration)?;
        for (i, ev) in self.events.iter().enumerate() {
            let t = ev.time();
            if !(0.0..=self.duration).contains(&t) {
                return Err(Error::Scenario(format!(
                    "event {i} at t = {t} s is outside the run (0..{} s)",
                    self.duration
                )));
            }
            if let Event::SetLoad { i_lv, p_lv, ramp, .. } = ev {
                if i_lv.is_some() == p_lv.is_some() {
                    return Err(Error::Scenario(format!(
                        "event {i}: exactly one of i_lv / p_lv required"
                    )));
                }
                if *ramp < 0.0 {
                    return Err(Error::Scenario(format!("event {i}: negative ramp")));
                }
            }
        }
        let s = &self.startup;
        for (name, v) in [
            ("i_limit_a", s.i_limit_a),
            ("v_target", s.v_target),
            ("r_pc", s.r_pc),
            ("duty_ramp_s", s.duty_ramp_s),
            ("ready_latency_s", s.ready_latency_s),
            ("breaker_close_delay_s", s.breaker_close_delay_s),
            ("phase_timeout_s", s.phase_timeout_s),
        ] {
            if !(v > 0.0) {
                return Err(Error::Scenario(format!(
                    "startup.{name} must be positive, got {v}"
                )));
            }
        }
        if s.post_ramp_hold_s < 0.0 {
            return Err(Error::Scenario(
                "startup.post_ramp_hold_s must be non-negative".into(),
            ));
        }
        Ok(())
    }
}
