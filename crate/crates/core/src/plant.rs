//! Cycle-averaged plant model.
//!
//! Switching ripple is not simulated; each bridge appears as its averaged
//! quantity. The AC front end of module k is a controlled voltage source
//! m_k * v_mv_k in series with the rest of its phase stack, the DC-DC
//! stage is a power valve obeying the phase-shift law, and the buses are
//! ideal capacitors. Lossless by construction, which is what makes the
//! energy-bookkeeping audit in the engine meaningful.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::SpmParams;

/// Divisor floor used wherever a power is converted to a current or a
/// voltage slope. Every physical power path in the model scales to zero
/// with its bus voltage, so the floor only ever bounds startup arithmetic.
pub const V_FLOOR: f64 = 1.0;

/// Per-module plant snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpmPlantState {
    /// Module DC-bus voltage [V].
    pub v_mv: f64,
    /// Averaged front-end modulation in [-1, 1].
    pub m_afe: f64,
    /// Applied DAB phase shift (per unit of a half period).
    pub phi: f64,
    /// Power into the bus from the AC front end [W].
    pub p_afe: f64,
    /// Power leaving the bus through the DC-DC stage [W].
    pub p_dab: f64,
}

/// Grid-side plant snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridPlantState {
    /// Source electrical angle [rad].
    pub theta_grid: f64,
    /// Line currents, grid into converter positive [A].
    pub i_phase: [f64; 3],
    /// Line-to-neutral source voltages [V].
    pub v_phase: [f64; 3],
    /// LVDC bus voltage [V].
    pub v_lv: f64,
    /// Load current drawn from the LVDC bus [A].
    pub i_lv: f64,
    pub breaker_closed: bool,
    pub precharge_active: bool,
}

/// Phase-shift power transfer of one dual-active-bridge stage:
///
/// ```text
/// P(phi) = n v_lv v_mv / (2 pi f_s1 L) * phi (1 - |phi|) * sign(phi)
/// ```
///
/// written here so that P is odd in phi (phi > 0 transfers MV -> LV,
/// phi < 0 reverses). Maximum magnitude sits exactly at |phi| = 0.5.
pub fn dab_power(phi: f64, v_lv: f64, v_mv: f64, p: &SpmParams) -> f64 {
    let coefficient = p.n_turns * v_lv * v_mv / (2.0 * PI * p.f_s1 * p.l_leak);
    coefficient * dab_shape(phi)
}

/// Dimensionless phase-shift shape phi (1 - |phi|), odd in phi.
pub fn dab_shape(phi: f64) -> f64 {
    debug_assert!(phi.abs() <= 0.5 + 1e-12, "phase shift out of range: {phi}");
    if phi >= 0.0 {
        phi * (1.0 - phi)
    } else {
        phi * (1.0 + phi)
    }
}

/// Slope of one module's DC-bus voltage from the power balance
/// d/dt (C v^2 / 2) = p_afe - p_dab - p_bleed, i.e.
/// dv/dt = (p_afe - p_dab - p_bleed) / (C v).
///
/// Below `V_FLOOR` the divisor is floored; all the power terms themselves
/// vanish with v, so the slope stays bounded and the energy books stay
/// exact everywhere the buses actually operate.
pub fn spm_derivative(s: &SpmPlantState, p: &SpmParams, i_line: f64, bleed_r: Option<f64>) -> f64 {
    let p_afe = s.m_afe * s.v_mv * i_line;
    let p_bleed = bleed_r.map_or(0.0, |r| s.v_mv * s.v_mv / r);
    (p_afe - s.p_dab - p_bleed) / (p.c_mv * s.v_mv.max(V_FLOOR))
}

/// Series-stack voltage of one phase: sum of m_k * v_mv_k over its modules.
pub fn phase_stack_voltage(modules: &[SpmPlantState]) -> f64 {
    modules.iter().map(|m| m.m_afe * m.v_mv).sum()
}

/// Line-current slopes for the three-wire connection,
/// di_k/dt = (v_src_k - v_stack_k - v_n) / L, where the floating-neutral
/// shift v_n keeps the three currents summing to zero (there is no return
/// path for a zero-sequence component). Open breaker pins the currents.
pub fn line_current_derivs(
    v_src: &[f64; 3],
    v_stack: &[f64; 3],
    l_filter: f64,
    breaker_closed: bool,
) -> [f64; 3] {
    if !breaker_closed {
        return [0.0; 3];
    }
    let v_n = (0..3).map(|k| v_src[k] - v_stack[k]).sum::<f64>() / 3.0;
    [
        (v_src[0] - v_stack[0] - v_n) / l_filter,
        (v_src[1] - v_stack[1] - v_n) / l_filter,
        (v_src[2] - v_stack[2] - v_n) / l_filter,
    ]
}

/// Pre-charge source parameters: a current-limited supply behind a series
/// resistor, feeding the LVDC bus until the main path takes over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrechargeParams {
    /// Current limit [A].
    pub i_limit: f64,
    /// Source voltage / charge target [V].
    pub v_target: f64,
    /// Series resistance [ohm].
    pub r_pc: f64,
}

impl Default for PrechargeParams {
    fn default() -> Self {
        Self {
            i_limit: 50.0,
            v_target: 750.0,
            r_pc: 1.0,
        }
    }
}

/// Pre-charge current into the LVDC bus: min(i_limit, (v_target - v_lv)/r),
/// clamped at zero because the source cannot sink.
pub fn precharge_current(v_lv: f64, pc: &PrechargeParams) -> f64 {
    ((pc.v_target - v_lv) / pc.r_pc).clamp(0.0, pc.i_limit)
}

/// One step of the load program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStep {
    /// When the step takes effect [s].
    pub time: f64,
    /// Constant-current load target [A]. Exactly one of `i_lv` / `p_lv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_lv: Option<f64>,
    /// Constant-power load target [W].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_lv: Option<f64>,
    /// Optional linear ramp duration to the new target [s]; 0 = hard step.
    #[serde(default)]
    pub ramp: f64,
}

/// LVDC load program plus the optional DC-bus bleed resistor used to
/// emulate per-module standby losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadProfile {
    pub steps: Vec<LoadStep>,
    /// Resistor across every module DC bus [ohm], if present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mvdc_bleed_r: Option<f64>,
}

/// Load demand at one instant, in its native unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadLevel {
    Amps(f64),
    Watts(f64),
}

impl LoadLevel {
    /// Current drawn at bus voltage `v_lv`. Constant-power demand is
    /// current-limited below 10% of `v_nom`, as a real converter load
    /// would be.
    pub fn current(&self, v_lv: f64, v_nom: f64) -> f64 {
        match *self {
            LoadLevel::Amps(i) => i,
            LoadLevel::Watts(p) => p / v_lv.max(0.1 * v_nom),
        }
    }

    fn value(&self) -> f64 {
        match *self {
            LoadLevel::Amps(v) | LoadLevel::Watts(v) => v,
        }
    }

    fn with_value(&self, v: f64) -> LoadLevel {
        match *self {
            LoadLevel::Amps(_) => LoadLevel::Amps(v),
            LoadLevel::Watts(_) => LoadLevel::Watts(v),
        }
    }
}

impl LoadProfile {
    pub fn validate(&self, duration: f64) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        let mut prev_kind_amps: Option<bool> = None;
        for (i, s) in self.steps.iter().enumerate() {
            match (s.i_lv, s.p_lv) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(Error::Scenario(format!(
                        "load step {i}: exactly one of i_lv / p_lv required"
                    )))
                }
                _ => {}
            }
            if s.time < 0.0 || s.time > duration {
                return Err(Error::Scenario(format!(
                    "load step {i} at t = {} s is outside the run (0..{duration} s)",
                    s.time
                )));
            }
            if s.time <= prev {
                return Err(Error::Scenario(format!(
                    "load step {i} times must be strictly increasing"
                )));
            }
            if s.ramp < 0.0 {
                return Err(Error::Scenario(format!("load step {i}: negative ramp")));
            }
            let is_amps = s.i_lv.is_some();
            if s.ramp > 0.0 {
                if let Some(prev_amps) = prev_kind_amps {
                    if prev_amps != is_amps {
                        return Err(Error::Scenario(format!(
                            "load step {i}: ramp between current- and power-type \
                             steps is ambiguous"
                        )));
                    }
                }
            }
            prev = s.time;
            prev_kind_amps = Some(is_amps);
        }
        if let Some(r) = self.mvdc_bleed_r {
            if !(r > 0.0) {
                return Err(Error::Scenario(format!("mvdc_bleed_r must be positive, got {r}")));
            }
        }
        Ok(())
    }

    /// Demand at time `t`, linearly interpolated through any ramp.
    pub fn level_at(&self, t: f64) -> LoadLevel {
        let mut level = LoadLevel::Amps(0.0);
        for s in &self.steps {
            if t < s.time {
                break;
            }
            let target = match (s.i_lv, s.p_lv) {
                (Some(i), _) => LoadLevel::Amps(i),
                (_, Some(p)) => LoadLevel::Watts(p),
                _ => unreachable!("validated"),
            };
            if s.ramp > 0.0 && t < s.time + s.ramp {
                let frac = (t - s.time) / s.ramp;
                let from = level.value();
                level = target.with_value(from + (target.value() - from) * frac);
            } else {
                level = target;
            }
        }
        level
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spm() -> SpmParams {
        SpmParams::default()
    }

    #[test]
    fn dab_power_zero_at_zero() {
        assert_eq!(dab_power(0.0, 750.0, 2150.0, &spm()), 0.0);
    }

    #[test]
    fn dab_power_rated_operating_point() {
        // phi = 0.2717 carries the 55.6 kW module rating at nominal buses.
        let p = dab_power(0.2717, 750.0, 2150.0, &spm());
        assert_relative_eq!(p, 55.6e3, max_relative = 1e-3);
    }

    #[test]
    fn dab_power_ceiling() {
        // Transfer coefficient is 281.0 kW at nominal buses; the quarter-point
        // shape maximum puts the ceiling at 70.25 kW.
        let p = dab_power(0.5, 750.0, 2150.0, &spm());
        assert_relative_eq!(p, 70.26e3, max_relative = 1e-3);
        assert_relative_eq!(p / 0.25, 281.0e3, max_relative = 1e-3);
    }

    #[test]
    fn dab_power_scales_with_leakage() {
        let base = dab_power(0.25, 750.0, 2150.0, &spm());
        let bigger_l = SpmParams {
            l_leak: 2.0 * spm().l_leak,
            ..spm()
        };
        assert_relative_eq!(dab_power(0.25, 750.0, 2150.0, &bigger_l), base / 2.0);
    }

    proptest! {
        #[test]
        fn dab_power_is_odd(phi in 0.0..=0.5f64) {
            let fwd = dab_power(phi, 750.0, 2150.0, &spm());
            let rev = dab_power(-phi, 750.0, 2150.0, &spm());
            prop_assert!((fwd + rev).abs() <= 1e-9 * fwd.abs().max(1.0));
        }

        #[test]
        fn dab_power_peaks_at_half(phi in 0.0..0.5f64) {
            let peak = dab_power(0.5, 750.0, 2150.0, &spm());
            prop_assert!(dab_power(phi, 750.0, 2150.0, &spm()) <= peak);
        }
    }

    #[test]
    fn bus_slope_balances_to_zero() {
        let s = SpmPlantState {
            v_mv: 2150.0,
            m_afe: 0.5,
            p_dab: 0.5 * 2150.0 * 10.0,
            ..Default::default()
        };
        assert_eq!(spm_derivative(&s, &spm(), 10.0, None), 0.0);
    }

    #[test]
    fn bus_slope_at_rated_export_deficit() {
        // 55.6 kW of unmatched draw discharges 268 uF at 2150 V by 96.5 kV/s.
        let s = SpmPlantState {
            v_mv: 2150.0,
            p_dab: 55.6e3,
            ..Default::default()
        };
        let dv = spm_derivative(&s, &spm(), 0.0, None);
        assert_relative_eq!(dv, -96.5e3, max_relative = 1e-3);
    }

    #[test]
    fn bus_slope_bleed_only() {
        // 700 W of bleed at nominal voltage: -1.215 kV/s.
        let r = 2150.0 * 2150.0 / 700.0;
        let s = SpmPlantState {
            v_mv: 2150.0,
            ..Default::default()
        };
        let dv = spm_derivative(&s, &spm(), 0.0, Some(r));
        assert_relative_eq!(dv, -1.215e3, max_relative = 1e-3);
    }

    #[test]
    fn bus_slope_bounded_near_zero_volts() {
        let s = SpmPlantState {
            v_mv: 1.0e-6,
            p_dab: -10.0,
            ..Default::default()
        };
        assert!(spm_derivative(&s, &spm(), 0.0, None).is_finite());
    }

    #[test]
    fn stack_voltage_cases() {
        let zeros = vec![SpmPlantState::default(); 6];
        assert_eq!(phase_stack_voltage(&zeros), 0.0);

        let full: Vec<_> = (0..6)
            .map(|_| SpmPlantState {
                v_mv: 2150.0,
                m_afe: 1.0,
                ..Default::default()
            })
            .collect();
        assert_relative_eq!(phase_stack_voltage(&full), 12.9e3);

        let alternating: Vec<_> = (0..6)
            .map(|k| SpmPlantState {
                v_mv: 2150.0,
                m_afe: if k % 2 == 0 { 1.0 } else { -1.0 },
                ..Default::default()
            })
            .collect();
        assert_relative_eq!(phase_stack_voltage(&alternating), 0.0);
    }

    proptest! {
        #[test]
        fn stack_voltage_permutation_invariant(
            ms in proptest::collection::vec(-1.0..1.0f64, 6),
            vs in proptest::collection::vec(1000.0..3000.0f64, 6),
            swap_a in 0usize..6,
            swap_b in 0usize..6,
        ) {
            let mut modules: Vec<_> = ms
                .iter()
                .zip(&vs)
                .map(|(&m, &v)| SpmPlantState { v_mv: v, m_afe: m, ..Default::default() })
                .collect();
            let before = phase_stack_voltage(&modules);
            modules.swap(swap_a, swap_b);
            let after = phase_stack_voltage(&modules);
            prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
        }
    }

    #[test]
    fn line_current_slopes() {
        let l = 12.0e-3;
        // Stack matches the source: no slope.
        let v = [100.0, -40.0, -60.0];
        let d = line_current_derivs(&v, &v, l, true);
        assert_eq!(d, [0.0; 3]);
        // Breaker open pins everything.
        let d = line_current_derivs(&v, &[0.0; 3], l, false);
        assert_eq!(d, [0.0; 3]);
        // Zero-sequence stack error drives no current.
        let stack = [10.0, 10.0, 10.0];
        let d = line_current_derivs(&[0.0; 3], &stack, l, true);
        assert_relative_eq!(d[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 0.0, epsilon = 1e-12);
        // Differential error drives balanced slopes.
        let d = line_current_derivs(&[120.0, -60.0, -60.0], &[0.0; 3], l, true);
        assert_relative_eq!(d[0], 120.0 / l);
        assert_relative_eq!(d[0] + d[1] + d[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn precharge_current_cases() {
        let pc = PrechargeParams::default();
        assert_eq!(precharge_current(750.0, &pc), 0.0);
        assert_eq!(precharge_current(0.0, &pc), 50.0);
        assert_relative_eq!(precharge_current(740.0, &pc), 10.0);
        // Above target the source cannot sink.
        assert_eq!(precharge_current(800.0, &pc), 0.0);
    }

    #[test]
    fn load_profile_steps_and_ramps() {
        let profile = LoadProfile {
            steps: vec![
                LoadStep {
                    time: 0.1,
                    i_lv: None,
                    p_lv: Some(1.0e6),
                    ramp: 0.0,
                },
                LoadStep {
                    time: 0.5,
                    i_lv: None,
                    p_lv: Some(0.5e6),
                    ramp: 0.2,
                },
            ],
            mvdc_bleed_r: None,
        };
        profile.validate(1.0).unwrap();
        assert_eq!(profile.level_at(0.0), LoadLevel::Amps(0.0));
        assert_eq!(profile.level_at(0.1), LoadLevel::Watts(1.0e6));
        assert_eq!(profile.level_at(0.6), LoadLevel::Watts(0.75e6));
        assert_eq!(profile.level_at(0.9), LoadLevel::Watts(0.5e6));
    }

    #[test]
    fn load_profile_rejects_double_spec() {
        let profile = LoadProfile {
            steps: vec![LoadStep {
                time: 0.1,
                i_lv: Some(10.0),
                p_lv: Some(1.0e3),
                ramp: 0.0,
            }],
            mvdc_bleed_r: None,
        };
        assert!(profile.validate(1.0).is_err());
    }

    #[test]
    fn constant_power_load_current_limits() {
        let l = LoadLevel::Watts(1.0e6);
        assert_relative_eq!(l.current(750.0, 750.0), 1333.3, max_relative = 1e-4);
        // Below 10% of nominal the draw is current-limited.
        assert_relative_eq!(l.current(10.0, 750.0), 1.0e6 / 75.0);
    }
}
