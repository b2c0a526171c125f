//! Decentralized per-module DC-bus voltage controller.
//!
//! Every module runs an identical controller at its own DC-DC switching
//! rate using two strictly local measurements: the shared LVDC bus voltage
//! and the module's own (sensed, delayed) DC-bus voltage. No inter-module
//! communication exists on this path; modules balance because they all
//! chase the same reference
//!
//! ```text
//! v_ref = K_v * H_ref(s) * v_lv,    H_ref(s) = w_ref / (s + w_ref)
//! ```
//!
//! The compensator is a PI with a resonant term centered at twice the line
//! frequency so the module passes its single-phase power pulsation through
//! to the LVDC side instead of buffering it in the DC-bus capacitor:
//!
//! ```text
//! F(s) = k_pmv [ 1 + 1/(s t_imv) + (w_bmv / t_rmv) s / (s^2 + w_bmv s + (2 w0)^2) ]
//! ```
//!
//! The loop is closed as phi = F(v_sensed - v_ref): raising phi raises the
//! MV -> LV export, which discharges the module bus, so this sign closes a
//! stable negative-feedback loop with the published margins. The output is
//! saturated to [-0.5, 0.5] (negative phase shift imports from the LVDC
//! bus, which the start-up hold relies on) with conditional integration
//! while saturated, and is applied one sample late to model computation
//! time.

use std::collections::VecDeque;
use std::f64::consts::PI;

use crate::params::DabGains;

pub const PHI_MAX: f64 = 0.5;
pub const PHI_MIN: f64 = -0.5;

/// First-order low-pass, bilinear discretization of w/(s+w).
#[derive(Debug, Clone)]
pub struct Lp1 {
    a: f64,
    b: f64,
    y: f64,
    u_prev: f64,
}

impl Lp1 {
    pub fn new(omega: f64, dt: f64) -> Self {
        let two_over_t = 2.0 / dt;
        Self {
            a: (two_over_t - omega) / (two_over_t + omega),
            b: omega / (two_over_t + omega),
            y: 0.0,
            u_prev: 0.0,
        }
    }

    pub fn step(&mut self, u: f64) -> f64 {
        self.y = self.a * self.y + self.b * (u + self.u_prev);
        self.u_prev = u;
        self.y
    }

    pub fn prime(&mut self, value: f64) {
        self.y = value;
        self.u_prev = value;
    }

    pub fn output(&self) -> f64 {
        self.y
    }
}

/// Resonant biquad y/x = g s / (s^2 + wb s + wc^2), bilinear with the
/// frequency axis prewarped so the discrete peak lands exactly on wc.
/// Direct-form II transposed; b1 is identically zero for this shape.
#[derive(Debug, Clone)]
pub struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    w1: f64,
    w2: f64,
}

impl Biquad {
    pub fn resonant(gain: f64, omega_band: f64, omega_center: f64, dt: f64) -> Self {
        let k = omega_center / (omega_center * dt / 2.0).tan();
        let d0 = k * k + omega_band * k + omega_center * omega_center;
        Self {
            b0: gain * k / d0,
            b2: -gain * k / d0,
            a1: 2.0 * (omega_center * omega_center - k * k) / d0,
            a2: (k * k - omega_band * k + omega_center * omega_center) / d0,
            w1: 0.0,
            w2: 0.0,
        }
    }

    /// Output for input `x` without committing the state update.
    pub fn output(&self, x: f64) -> f64 {
        self.b0 * x + self.w1
    }

    /// Commit the state update for input `x` and the output `y` previously
    /// obtained from [`Biquad::output`]. Splitting the two lets a caller
    /// hold the filter during actuator saturation.
    pub fn commit(&mut self, x: f64, y: f64) {
        self.w1 = self.w2 - self.a1 * y;
        self.w2 = self.b2 * x - self.a2 * y;
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.output(x);
        self.commit(x, y);
        y
    }

    pub fn reset(&mut self) {
        self.w1 = 0.0;
        self.w2 = 0.0;
    }

    /// Frequency response of the discrete filter at `f_hz` for sample
    /// period `dt`.
    pub fn response(&self, f_hz: f64, dt: f64) -> num_complex::Complex64 {
        use num_complex::Complex64;
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f_hz * dt);
        let z2 = z1 * z1;
        (self.b0 + self.b2 * z2) / (Complex64::new(1.0, 0.0) + self.a1 * z1 + self.a2 * z2)
    }
}

/// One module's controller state.
#[derive(Debug, Clone)]
pub struct DabController {
    gains: DabGains,
    omega_0: f64,
    dt: f64,
    /// Reference low-pass on K_v * v_lv.
    ref_filter: Lp1,
    /// Sensor pole state (matched-z; the pole sits far above Nyquist, so a
    /// bilinear map would ring at the Nyquist rate instead of tracking).
    sensor_y: f64,
    sensor_alpha: f64,
    /// Sensor transport delay, rounded to whole samples.
    delay: VecDeque<f64>,
    delay_len: usize,
    /// Integrator state (volts; multiplied by k_pmv on output).
    integ: f64,
    err_prev: f64,
    resonator: Biquad,
    pub resonant_enabled: bool,
    /// Last computed phase shift, applied next step.
    phi_next: f64,
}

impl DabController {
    pub fn new(gains: &DabGains, omega_0: f64) -> Self {
        let dt = gains.t_s1;
        let delay_len = (gains.t_vs / dt).round() as usize;
        Self {
            gains: gains.clone(),
            omega_0,
            dt,
            ref_filter: Lp1::new(gains.omega_ref, dt),
            sensor_y: 0.0,
            sensor_alpha: 1.0 - (-gains.omega_vs * dt).exp(),
            delay: VecDeque::from(vec![0.0; delay_len]),
            delay_len,
            integ: 0.0,
            err_prev: 0.0,
            resonator: Biquad::resonant(
                gains.omega_bmv / gains.t_rmv,
                gains.omega_bmv,
                2.0 * omega_0,
                dt,
            ),
            resonant_enabled: true,
            phi_next: 0.0,
        }
    }

    pub fn delay_samples(&self) -> usize {
        self.delay_len
    }

    /// Advance the reference chain one sample: v_ref = K_v lowpassed v_lv.
    pub fn mv_reference(&mut self, v_lv_meas: f64) -> f64 {
        self.ref_filter.step(self.gains.k_v * v_lv_meas)
    }

    /// Advance the sensor chain one sample: first-order pole at omega_vs
    /// followed by the transport delay.
    pub fn sense_mv(&mut self, v_mv_true: f64) -> f64 {
        self.sensor_y += self.sensor_alpha * (v_mv_true - self.sensor_y);
        self.delay.push_back(self.sensor_y);
        self.delay.pop_front().unwrap_or(self.sensor_y)
    }

    /// One compensator sample. Integrator and resonator hold while the
    /// output saturates (conditional integration), which keeps deep
    /// saturation from winding up hidden state.
    pub fn pir_step(&mut self, err: f64) -> f64 {
        let res_out = if self.resonant_enabled {
            self.resonator.output(err)
        } else {
            0.0
        };
        let integ_cand = self.integ + self.dt / (2.0 * self.gains.t_imv) * (err + self.err_prev);
        let raw = self.gains.k_pmv * (err + integ_cand + res_out);
        let out = if (PHI_MIN..=PHI_MAX).contains(&raw) {
            self.integ = integ_cand;
            if self.resonant_enabled {
                self.resonator.commit(err, res_out);
            }
            raw
        } else {
            raw.clamp(PHI_MIN, PHI_MAX)
        };
        self.err_prev = err;
        out
    }

    /// Full per-sample control step. Returns the phase shift to apply this
    /// period, which is the value computed one period ago.
    pub fn step(&mut self, v_mv_true: f64, v_lv_meas: f64) -> f64 {
        let sensed = self.sense_mv(v_mv_true);
        let v_ref = self.mv_reference(v_lv_meas);
        let phi_new = self.pir_step(sensed - v_ref);
        std::mem::replace(&mut self.phi_next, phi_new)
    }

    /// Gating-disabled step: keeps the sensor chain warm and parks the
    /// reference chain on the measured bus, so enabling the loop later is
    /// bumpless — the error wakes at zero and the reference pole slews the
    /// target over to K_v * v_lv instead of stepping it, which would ring
    /// the stored difference through the LVDC bus.
    pub fn idle_step(&mut self, v_mv_true: f64, _v_lv_meas: f64) {
        self.sense_mv(v_mv_true);
        self.ref_filter.prime(self.sensor_y);
        self.integ = 0.0;
        self.err_prev = 0.0;
        self.resonator.reset();
        self.phi_next = 0.0;
    }

    /// Seed every state for an established operating point (used when a
    /// scenario starts in steady state rather than from power-up).
    pub fn prime_steady(&mut self, v_mv: f64, v_lv: f64, phi: f64) {
        self.ref_filter.prime(self.gains.k_v * v_lv);
        self.sensor_y = v_mv;
        for slot in self.delay.iter_mut() {
            *slot = v_mv;
        }
        self.integ = phi / self.gains.k_pmv;
        self.err_prev = 0.0;
        self.resonator.reset();
        self.phi_next = phi;
    }

    /// Discrete compensator response F(z) at `f_hz`, for comparison against
    /// the continuous design transfer.
    pub fn pir_response(&self, f_hz: f64) -> num_complex::Complex64 {
        pir_discrete_response(&self.gains, self.omega_0, f_hz)
    }
}

/// Frequency response of the discretized compensator (proportional +
/// trapezoidal integrator + prewarped resonator), excluding the sensor
/// model and the one-sample computation delay.
pub fn pir_discrete_response(
    gains: &DabGains,
    omega_0: f64,
    f_hz: f64,
) -> num_complex::Complex64 {
    use num_complex::Complex64;
    let dt = gains.t_s1;
    let z1 = Complex64::from_polar(1.0, -2.0 * PI * f_hz * dt);
    let one = Complex64::new(1.0, 0.0);
    // Trapezoidal 1/(s t_imv): (dt / 2 t_imv) (1 + z^-1) / (1 - z^-1).
    let integ = dt / (2.0 * gains.t_imv) * (one + z1) / (one - z1);
    let res = Biquad::resonant(
        gains.omega_bmv / gains.t_rmv,
        gains.omega_bmv,
        2.0 * omega_0,
        dt,
    )
    .response(f_hz, dt);
    gains.k_pmv * (one + integ + res)
}
