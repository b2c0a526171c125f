//! Converter ratings, per-module component values, and controller gains.
//!
//! All quantities are SI (volts, amps, watts, hertz, farads, henries,
//! rad/s, seconds). The defaults describe one 1 MVA, 13.2 kV-to-750 V
//! installation built from 18 single-phase modules: three phases, each a
//! series stack of 6 blocks on the AC side, all DC outputs paralleled on
//! the 750 V bus.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Electrical parameters of a single power module (AC front end plus
/// isolated DC-DC stage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpmParams {
    /// Nominal module DC-bus voltage [V].
    pub v_mv_nom: f64,
    /// Nominal module AC-side voltage [V rms].
    pub v_ac_nom: f64,
    /// Nominal low-voltage DC bus [V].
    pub v_lv_nom: f64,
    /// Module real-power rating [W].
    pub p_rated: f64,
    /// Module reactive-power rating [VAR].
    pub q_rated: f64,
    /// DC-DC stage switching frequency [Hz].
    pub f_s1: f64,
    /// AC front-end switching frequency [Hz].
    pub f_s2: f64,
    /// Module DC-bus capacitance [F].
    pub c_mv: f64,
    /// Transformer leakage (power-transfer) inductance, MV-side referred [H].
    pub l_leak: f64,
    /// Transformer turns ratio MV:LV.
    pub n_turns: f64,
    /// MV-side DC-blocking capacitor [F].
    pub c_b1: f64,
    /// LV-side DC-blocking capacitor [F].
    pub c_b2: f64,
}

impl Default for SpmParams {
    fn default() -> Self {
        Self {
            v_mv_nom: 2150.0,
            v_ac_nom: 1270.0,
            v_lv_nom: 750.0,
            p_rated: 55.6e3,
            q_rated: 25.0e3,
            f_s1: 20.0e3,
            f_s2: 5.0e3,
            c_mv: 268.0e-6,
            l_leak: 137.0e-6,
            n_turns: 3.0,
            c_b1: 6.8e-6,
            c_b2: 150.0e-6,
        }
    }
}

impl SpmParams {
    /// Series resonance of the transformer leakage with the two DC-blocking
    /// capacitors (LV-side cap reflected through the turns ratio):
    ///
    /// ```text
    /// f_r = (1 / 2 pi) sqrt( (n^2 C_b1 + C_b2) / (L C_b1 C_b2) )
    /// ```
    ///
    /// The blocking caps must not resonate anywhere near the power-transfer
    /// frequency, so a healthy design keeps f_s1/10 < f_r < f_s1/2.
    pub fn blocking_resonance(&self) -> f64 {
        let num = self.n_turns * self.n_turns * self.c_b1 + self.c_b2;
        let den = self.l_leak * self.c_b1 * self.c_b2;
        (num / den).sqrt() / (2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_mv_nom", self.v_mv_nom),
            ("v_ac_nom", self.v_ac_nom),
            ("v_lv_nom", self.v_lv_nom),
            ("p_rated", self.p_rated),
            ("f_s1", self.f_s1),
            ("f_s2", self.f_s2),
            ("c_mv", self.c_mv),
            ("l_leak", self.l_leak),
            ("n_turns", self.n_turns),
            ("c_b1", self.c_b1),
            ("c_b2", self.c_b2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invariant(format!(
                    "spm.{name} must be positive and finite, got {v}"
                )));
            }
        }
        let fr = self.blocking_resonance();
        if !(fr > self.f_s1 / 10.0 && fr < self.f_s1 / 2.0) {
            return Err(Error::Invariant(format!(
                "blocking-cap resonance {fr:.1} Hz outside (f_s1/10, f_s1/2) = \
                 ({:.1}, {:.1}) Hz",
                self.f_s1 / 10.0,
                self.f_s1 / 2.0
            )));
        }
        Ok(())
    }
}

/// Installation-level ratings and the structure of the stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Apparent-power rating [VA].
    pub s_rated: f64,
    /// Real-power rating [W].
    pub p_rated: f64,
    /// Reactive-power rating [VAR].
    pub q_rated: f64,
    /// Grid line-to-line voltage [V rms].
    pub v_grid_ll: f64,
    /// Grid angular frequency [rad/s].
    pub omega_0: f64,
    /// LVDC bus setpoint [V].
    pub v_lv_ref: f64,
    /// Series blocks per phase (modules per phase).
    pub n_blocks: usize,
    /// Central-controller execution rate [Hz].
    pub f_c: f64,
    /// Grid-side filter inductance per phase [H].
    pub l_filter: f64,
    /// LVDC bus capacitance [F].
    pub c_lv: f64,
    /// LVDC voltage-loop bandwidth target [Hz].
    pub lvdc_bw_hz: f64,
    /// PLL bandwidth target [Hz].
    pub pll_bw_hz: f64,
    /// Grid current-loop bandwidth target [Hz].
    pub cc_bw_hz: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            s_rated: 1.1e6,
            p_rated: 1.0e6,
            q_rated: 450.0e3,
            v_grid_ll: 13.2e3,
            omega_0: 2.0 * PI * 60.0,
            v_lv_ref: 750.0,
            n_blocks: 6,
            f_c: 10.0e3,
            l_filter: 12.0e-3,
            c_lv: 50.0e-3,
            lvdc_bw_hz: 30.0,
            pll_bw_hz: 25.0,
            cc_bw_hz: 400.0,
        }
    }
}

impl SystemParams {
    /// Total module count (3 phases x n_blocks).
    pub fn spm_count(&self) -> usize {
        3 * self.n_blocks
    }

    /// Peak line-to-neutral grid voltage [V].
    pub fn v_phase_amp(&self) -> f64 {
        2.0_f64.sqrt() * self.v_grid_ll / 3.0_f64.sqrt()
    }

    pub fn validate(&self, spm: &SpmParams) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(Error::Invariant("n_blocks must be >= 1".into()));
        }
        let positive = [
            ("s_rated", self.s_rated),
            ("p_rated", self.p_rated),
            ("v_grid_ll", self.v_grid_ll),
            ("omega_0", self.omega_0),
            ("v_lv_ref", self.v_lv_ref),
            ("f_c", self.f_c),
            ("l_filter", self.l_filter),
            ("c_lv", self.c_lv),
            ("lvdc_bw_hz", self.lvdc_bw_hz),
            ("pll_bw_hz", self.pll_bw_hz),
            ("cc_bw_hz", self.cc_bw_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invariant(format!(
                    "system.{name} must be positive and finite, got {v}"
                )));
            }
        }
        // Stack arithmetic must be self-consistent with the module ratings.
        let v_module = self.v_grid_ll / (3.0_f64.sqrt() * self.n_blocks as f64);
        let rel = (v_module - spm.v_ac_nom).abs() / spm.v_ac_nom;
        if rel > 0.01 {
            return Err(Error::Invariant(format!(
                "per-module AC voltage v_grid_ll/(sqrt(3) n_blocks) = {v_module:.1} V \
                 disagrees with spm.v_ac_nom = {:.1} V by {:.2}% (> 1%)",
                spm.v_ac_nom,
                100.0 * rel
            )));
        }
        let p_module = self.p_rated / (3.0 * self.n_blocks as f64);
        let rel = (p_module - spm.p_rated).abs() / spm.p_rated;
        if rel > 0.01 {
            return Err(Error::Invariant(format!(
                "per-module power p_rated/(3 n_blocks) = {p_module:.0} W disagrees \
                 with spm.p_rated = {:.0} W by {:.2}% (> 1%)",
                spm.p_rated,
                100.0 * rel
            )));
        }
        Ok(())
    }
}

/// Gains and filter constants of the per-module DC-bus voltage loop.
///
/// The loop regulates each module's DC bus to a scaled, low-passed copy of
/// the LVDC bus via the DAB phase shift:
///
/// ```text
/// v_ref  = K_v * H_ref(s) * v_lv          H_ref = w_ref / (s + w_ref)
/// F(s)   = k_pmv [ 1 + 1/(s t_imv) + (w_bmv / t_rmv) s / (s^2 + w_bmv s + (2 w0)^2) ]
/// sensor = w_vs / (s + w_vs) * e^(-s t_vs)
/// ```
///
/// plus one control period `t_s1` of computation delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DabGains {
    /// MVDC reference scale: v_mv_nom / v_lv_nom.
    pub k_v: f64,
    /// Reference low-pass corner [rad/s].
    pub omega_ref: f64,
    /// Proportional gain [per-unit phase shift per volt].
    pub k_pmv: f64,
    /// Integral time [s].
    pub t_imv: f64,
    /// Resonant time scale [s].
    pub t_rmv: f64,
    /// Resonant bandwidth [rad/s].
    pub omega_bmv: f64,
    /// Voltage-sensor bandwidth [rad/s].
    pub omega_vs: f64,
    /// Voltage-sensor transport delay [s].
    pub t_vs: f64,
    /// Controller sample period (one DC-DC switching period) [s].
    pub t_s1: f64,
}

impl Default for DabGains {
    fn default() -> Self {
        Self {
            k_v: 2150.0 / 750.0,
            omega_ref: 2.0 * PI * 130.0,
            k_pmv: 0.0082,
            t_imv: 0.01,
            t_rmv: 0.01,
            omega_bmv: PI,
            omega_vs: 2.0 * PI * 1.0e5,
            t_vs: 77.0e-6,
            t_s1: 1.0 / 20.0e3,
        }
    }
}

impl DabGains {
    /// Defaults consistent with a given module's ratings.
    pub fn default_for(spm: &SpmParams) -> Self {
        Self {
            k_v: spm.v_mv_nom / spm.v_lv_nom,
            t_s1: 1.0 / spm.f_s1,
            ..Self::default()
        }
    }

    pub fn validate(&self, spm: &SpmParams) -> Result<()> {
        let positive = [
            ("k_v", self.k_v),
            ("omega_ref", self.omega_ref),
            ("k_pmv", self.k_pmv),
            ("t_imv", self.t_imv),
            ("t_rmv", self.t_rmv),
            ("omega_bmv", self.omega_bmv),
            ("omega_vs", self.omega_vs),
            ("t_s1", self.t_s1),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invariant(format!(
                    "dab_gains.{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.t_vs < 0.0 || !self.t_vs.is_finite() {
            return Err(Error::Invariant(format!(
                "dab_gains.t_vs must be non-negative, got {}",
                self.t_vs
            )));
        }
        let ratio = spm.v_mv_nom / spm.v_lv_nom;
        if (self.k_v - ratio).abs() / ratio > 1.0e-3 {
            return Err(Error::Invariant(format!(
                "dab_gains.k_v = {} must equal v_mv_nom / v_lv_nom = {ratio:.6}",
                self.k_v
            )));
        }
        Ok(())
    }
}

/// Per-module component tolerance multipliers, one entry per module.
///
/// The default ladder spreads evenly from 0.91 to 1.08 (17% worst-case
/// spread) across the stack, exercising the balancing claim with strongly
/// mismatched hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSpec {
    /// Multiplier on each module's transfer inductance.
    pub l_multipliers: Vec<f64>,
    /// Multiplier on each module's DC-bus capacitance.
    pub c_mv_multipliers: Vec<f64>,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        Self::default_for(18)
    }
}

impl ToleranceSpec {
    /// Evenly spaced ladder 0.91..=1.08 over `count` modules. For the
    /// reference 18-module stack this is the classic 0.01-step ladder.
    pub fn default_for(count: usize) -> Self {
        let ladder: Vec<f64> = if count == 1 {
            vec![1.0]
        } else {
            (0..count)
                .map(|k| 0.91 + 0.17 * k as f64 / (count - 1) as f64)
                .collect()
        };
        Self {
            l_multipliers: ladder.clone(),
            c_mv_multipliers: ladder,
        }
    }

    /// Identity (all multipliers 1.0).
    pub fn unity(count: usize) -> Self {
        Self {
            l_multipliers: vec![1.0; count],
            c_mv_multipliers: vec![1.0; count],
        }
    }

    pub fn validate(&self, count: usize) -> Result<()> {
        for (name, list) in [
            ("l_multipliers", &self.l_multipliers),
            ("c_mv_multipliers", &self.c_mv_multipliers),
        ] {
            if list.len() != count {
                return Err(Error::Invariant(format!(
                    "tolerances.{name} has {} entries, expected one per module ({count})",
                    list.len()
                )));
            }
            for (index, &m) in list.iter().enumerate() {
                if !(m > 0.0) || !m.is_finite() {
                    return Err(Error::ModuleInvariant {
                        index,
                        what: format!("tolerances.{name} must be positive, got {m}"),
                    });
                }
            }
            let max = list.iter().cloned().fold(f64::MIN, f64::max);
            let min = list.iter().cloned().fold(f64::MAX, f64::min);
            if max - min > 0.17 + 1.0e-9 {
                return Err(Error::Invariant(format!(
                    "tolerances.{name} spread {:.3} exceeds the 17% design envelope",
                    max - min
                )));
            }
        }
        Ok(())
    }

    /// Module parameters with this module's multipliers applied.
    pub fn apply_tolerances(&self, base: &SpmParams, index: usize) -> Result<SpmParams> {
        let l = *self
            .l_multipliers
            .get(index)
            .ok_or(Error::ModuleInvariant {
                index,
                what: "no l_multiplier for this module".into(),
            })?;
        let c = *self
            .c_mv_multipliers
            .get(index)
            .ok_or(Error::ModuleInvariant {
                index,
                what: "no c_mv_multiplier for this module".into(),
            })?;
        Ok(SpmParams {
            l_leak: base.l_leak * l,
            c_mv: base.c_mv * c,
            ..base.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid() {
        let spm = SpmParams::default();
        let sys = SystemParams::default();
        spm.validate().unwrap();
        sys.validate(&spm).unwrap();
        DabGains::default_for(&spm).validate(&spm).unwrap();
        ToleranceSpec::default().validate(sys.spm_count()).unwrap();
    }

    #[test]
    fn default_capacitance_matches_rating_sheet() {
        assert_eq!(SpmParams::default().c_mv, 268.0e-6);
    }

    #[test]
    fn blocking_resonance_reference_value() {
        let fr = SpmParams::default().blocking_resonance();
        // (1/2pi) sqrt((9 * 6.8u + 150u) / (137u * 6.8u * 150u)) = 6.187 kHz
        assert_relative_eq!(fr, 6.19e3, max_relative = 0.01);
        let spm = SpmParams::default();
        assert!(fr > spm.f_s1 / 10.0 && fr < spm.f_s1 / 2.0);
    }

    #[test]
    fn blocking_resonance_symmetric_case() {
        // n = 1 and equal caps collapse to sqrt(2 / (L C)) / 2pi.
        let spm = SpmParams {
            n_turns: 1.0,
            c_b1: 10.0e-6,
            c_b2: 10.0e-6,
            ..SpmParams::default()
        };
        let expected = (2.0 / (spm.l_leak * 10.0e-6)).sqrt() / (2.0 * PI);
        assert_relative_eq!(spm.blocking_resonance(), expected, max_relative = 1e-12);
    }

    #[test]
    fn resonance_window_enforced() {
        // A huge blocking cap drags f_r below f_s1 / 10.
        let spm = SpmParams {
            c_b1: 800.0e-6,
            c_b2: 8000.0e-6,
            ..SpmParams::default()
        };
        let err = spm.validate().unwrap_err().to_string();
        assert!(err.contains("resonance"), "unexpected message: {err}");
    }

    #[test]
    fn zero_blocks_rejected_with_message() {
        let sys = SystemParams {
            n_blocks: 0,
            ..SystemParams::default()
        };
        let err = sys.validate(&SpmParams::default()).unwrap_err().to_string();
        assert_eq!(err, "n_blocks must be >= 1");
    }

    #[test]
    fn stack_voltage_cross_check() {
        // 13200 / (sqrt(3) * 6) = 1270.2 V, within 1% of the module rating.
        let sys = SystemParams::default();
        let v = sys.v_grid_ll / (3.0_f64.sqrt() * sys.n_blocks as f64);
        assert_relative_eq!(v, 1270.2, max_relative = 1e-4);
    }

    #[test]
    fn reactive_command_fits_apparent_rating() {
        let sys = SystemParams::default();
        let s = (sys.p_rated.powi(2) + sys.q_rated.powi(2)).sqrt();
        assert_relative_eq!(s, 1.097e6, max_relative = 1e-3);
        assert!(s <= sys.s_rated);
    }

    #[test]
    fn tolerance_ladder_default_shape() {
        let t = ToleranceSpec::default();
        assert_eq!(t.l_multipliers.len(), 18);
        assert_relative_eq!(t.l_multipliers[0], 0.91, max_relative = 1e-12);
        assert_relative_eq!(t.l_multipliers[17], 1.08, max_relative = 1e-12);
        assert_relative_eq!(t.l_multipliers[9], 1.0, epsilon = 1e-9);
        // Even 0.01 steps on the reference stack.
        for w in t.l_multipliers.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.01, epsilon = 1e-9);
        }
        t.validate(18).unwrap();
    }

    #[test]
    fn tolerance_application() {
        let base = SpmParams::default();
        let t = ToleranceSpec::default();
        let hi = t.apply_tolerances(&base, 17).unwrap();
        assert_relative_eq!(hi.c_mv, 289.44e-6, max_relative = 1e-9);
        let lo = t.apply_tolerances(&base, 0).unwrap();
        assert_relative_eq!(lo.l_leak, 124.67e-6, max_relative = 1e-6);
        // Untouched fields pass through.
        assert_eq!(hi.n_turns, base.n_turns);

        let unity = ToleranceSpec::unity(18);
        let same = unity.apply_tolerances(&base, 5).unwrap();
        assert_eq!(same, base);
    }

    #[test]
    fn tolerance_length_mismatch_names_problem() {
        let t = ToleranceSpec {
            l_multipliers: vec![1.0; 4],
            c_mv_multipliers: vec![1.0; 18],
        };
        let err = t.validate(18).unwrap_err().to_string();
        assert!(err.contains("l_multipliers"), "unexpected message: {err}");
    }

    proptest! {
        #[test]
        fn resonance_monotone_decreasing_in_inductance(
            l1 in 50.0e-6..500.0e-6f64,
            l2 in 50.0e-6..500.0e-6f64,
        ) {
            prop_assume!(l1 < l2);
            let f = |l| SpmParams { l_leak: l, ..SpmParams::default() }.blocking_resonance();
            prop_assert!(f(l1) > f(l2));
        }
    }
}
