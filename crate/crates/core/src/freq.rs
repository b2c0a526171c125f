//! Frequency-domain design checks for the per-module DC-bus voltage loop.
//!
//! Everything here evaluates closed-form transfer functions; nothing is
//! fitted from simulation. The loop under study is
//!
//! ```text
//! L(s) = P(s) * F(s) * H_vs(s) * e^(-s T_s1)
//!
//! P(s)    = n v_lv (1 - 2 phi) / (2 pi f_s1 L C s)     averaged power stage
//! F(s)    = k_pmv [1 + 1/(s t_imv) + g s/(s^2 + w_b s + (2 w0)^2)]
//! H_vs(s) = w_vs / (s + w_vs) * e^(-s t_vs)             sensor + transport
//! ```
//!
//! with the loop sign normalized positive (the controller's error sign
//! absorbs the power stage's negative gain). Margins come from bisection
//! on the closed forms, not from grid interpolation, so the reported
//! numbers are good to far better than the tolerances they are checked
//! against.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::dab::pir_discrete_response;
use crate::error::{Error, Result};
use crate::params::{DabGains, SpmParams, SystemParams};

/// Magnitude coefficient of the averaged power stage integrator,
/// n v_lv k_pmv / (2 pi f_s1 L C) [rad/s]. The loop magnitude below the
/// resonant shelf is this over omega.
pub fn loop_coefficient(spm: &SpmParams, gains: &DabGains) -> f64 {
    spm.n_turns * spm.v_lv_nom * gains.k_pmv
        / (2.0 * PI * spm.f_s1 * spm.l_leak * spm.c_mv)
}

/// Averaged power-stage response (sign-normalized positive), evaluated at
/// the operating-point phase shift `phi_op`.
pub fn plant_response(spm: &SpmParams, phi_op: f64, f_hz: f64) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * PI * f_hz);
    let k = spm.n_turns * spm.v_lv_nom * (1.0 - 2.0 * phi_op.abs())
        / (2.0 * PI * spm.f_s1 * spm.l_leak * spm.c_mv);
    k / s
}

/// Continuous compensator F(s).
pub fn compensator_response(gains: &DabGains, omega_0: f64, f_hz: f64) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * PI * f_hz);
    let one = Complex64::new(1.0, 0.0);
    let integ = one / (s * gains.t_imv);
    let wc = 2.0 * omega_0;
    let g = gains.omega_bmv / gains.t_rmv;
    let res = g * s / (s * s + gains.omega_bmv * s + wc * wc);
    gains.k_pmv * (one + integ + res)
}

/// Sensor chain: first-order pole plus pure transport delay.
pub fn sensor_response(gains: &DabGains, f_hz: f64) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * PI * f_hz);
    let pole = gains.omega_vs / (s + gains.omega_vs);
    pole * (-s * gains.t_vs).exp()
}

/// Open-loop response including the one-sample computation delay.
pub fn loop_response(
    spm: &SpmParams,
    gains: &DabGains,
    omega_0: f64,
    phi_op: f64,
    f_hz: f64,
) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * PI * f_hz);
    plant_response(spm, phi_op, f_hz)
        * compensator_response(gains, omega_0, f_hz)
        * sensor_response(gains, f_hz)
        * (-s * gains.t_s1).exp()
}

/// Loop phase in degrees, computed from smooth closed forms (each term
/// stays within a half-turn) so no numeric unwrapping is involved.
fn loop_phase_deg(spm: &SpmParams, gains: &DabGains, omega_0: f64, phi_op: f64, f_hz: f64) -> f64 {
    let _ = (spm, phi_op);
    let w = 2.0 * PI * f_hz;
    // Compensator: Re(F) >= k_pmv > 0, so atan2 never wraps.
    let f = compensator_response(gains, omega_0, f_hz);
    let comp = f.arg().to_degrees();
    let pole = -(w / gains.omega_vs).atan().to_degrees();
    let delay = -(w * (gains.t_s1 + gains.t_vs)).to_degrees();
    -90.0 + comp + pole + delay
}

fn loop_mag(spm: &SpmParams, gains: &DabGains, omega_0: f64, phi_op: f64, f_hz: f64) -> f64 {
    loop_response(spm, gains, omega_0, phi_op, f_hz).norm()
}

/// Stability margins of the module voltage loop.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Margins {
    pub crossover_hz: f64,
    pub phase_margin_deg: f64,
    pub f180_hz: f64,
    pub gain_margin_db: f64,
}

fn bisect(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gain and phase margins at the given operating point. Scans a log grid
/// for the outermost unity-gain and phase crossings, then refines each by
/// bisection on the closed-form response.
pub fn margins(spm: &SpmParams, gains: &DabGains, omega_0: f64, phi_op: f64) -> Result<Margins> {
    let grid = log_grid(1.0, spm.f_s1 / 2.0, 2000);
    // Last downward unity crossing.
    let mut cross = None;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if loop_mag(spm, gains, omega_0, phi_op, a) >= 1.0
            && loop_mag(spm, gains, omega_0, phi_op, b) < 1.0
        {
            cross = Some((a, b));
        }
    }
    let (a, b) = cross.ok_or_else(|| {
        Error::Invariant("loop gain never falls through unity below Nyquist".into())
    })?;
    let crossover_hz = bisect(a, b, |f| loop_mag(spm, gains, omega_0, phi_op, f).ln());
    let phase_margin_deg = 180.0 + loop_phase_deg(spm, gains, omega_0, phi_op, crossover_hz);

    // First -180 degree crossing above the unity crossover.
    let mut cross180 = None;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a < crossover_hz {
            continue;
        }
        if loop_phase_deg(spm, gains, omega_0, phi_op, a) > -180.0
            && loop_phase_deg(spm, gains, omega_0, phi_op, b) <= -180.0
        {
            cross180 = Some((a, b));
            break;
        }
    }
    let (a, b) = cross180.ok_or_else(|| {
        Error::Invariant("loop phase never reaches -180 deg below Nyquist".into())
    })?;
    let f180_hz = bisect(a, b, |f| {
        loop_phase_deg(spm, gains, omega_0, phi_op, f) + 180.0
    });
    let gain_margin_db = -20.0 * loop_mag(spm, gains, omega_0, phi_op, f180_hz).log10();

    Ok(Margins {
        crossover_hz,
        phase_margin_deg,
        f180_hz,
        gain_margin_db,
    })
}

/// Logarithmically spaced frequency grid, inclusive of both ends.
pub fn log_grid(f_lo: f64, f_hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && f_lo > 0.0 && f_hi > f_lo);
    let (a, b) = (f_lo.ln(), f_hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// A sampled frequency response, for export and plotting.
#[derive(Debug, Clone)]
pub struct FreqResponse {
    pub f_hz: Vec<f64>,
    pub h: Vec<Complex64>,
}

impl FreqResponse {
    pub fn sweep(grid: &[f64], mut eval: impl FnMut(f64) -> Complex64) -> Self {
        Self {
            f_hz: grid.to_vec(),
            h: grid.iter().map(|&f| eval(f)).collect(),
        }
    }

    pub fn mag_db(&self) -> Vec<f64> {
        self.h.iter().map(|c| 20.0 * c.norm().log10()).collect()
    }

    /// Phase in degrees, unwrapped by nearest-half-turn continuation.
    pub fn phase_deg_unwrapped(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.h.len());
        let mut prev = 0.0;
        for (i, c) in self.h.iter().enumerate() {
            let mut p = c.arg().to_degrees();
            if i > 0 {
                while p - prev > 180.0 {
                    p -= 360.0;
                }
                while p - prev < -180.0 {
                    p += 360.0;
                }
            }
            prev = p;
            out.push(p);
        }
        out
    }
}

/// Discretization fidelity of the compensator: discrete-minus-continuous
/// (magnitude dB, phase degrees) at one frequency.
pub fn discretization_error(gains: &DabGains, omega_0: f64, f_hz: f64) -> (f64, f64) {
    let hd = pir_discrete_response(gains, omega_0, f_hz);
    let hc = compensator_response(gains, omega_0, f_hz);
    let dmag = 20.0 * (hd.norm() / hc.norm()).log10();
    let mut dph = (hd.arg() - hc.arg()).to_degrees();
    while dph > 180.0 {
        dph -= 360.0;
    }
    while dph < -180.0 {
        dph += 360.0;
    }
    (dmag, dph)
}

/// One named separation-of-timescales check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AuditEntry {
    pub name: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub ok: bool,
}

impl AuditEntry {
    fn new(name: &'static str, value: f64, lo: f64, hi: f64) -> Self {
        let ok = value >= lo && value <= hi;
        Self {
            name,
            value,
            lo,
            hi,
            ok,
        }
    }
}

/// The frequency plan that makes the cascaded design decouple. Each entry
/// is a dimensioned quantity with the window it must sit in:
///
/// * the blocking-capacitor resonance must stay between f_s1/10 and f_s1/2
///   so it neither collides with the control band nor the switching rate;
/// * the module voltage loop must cross at least a decade below f_s1;
/// * the sensor pole and the reference prefilter must bracket the
///   crossover (fast and slow respectively);
/// * the ripple frequency 2 f0 must fall inside the loop band so the
///   resonant branch has authority;
/// * the central LVDC loop and the PLL must both sit well below the module
///   loop crossover so the cascade does not interact.
pub fn timescale_audit(
    spm: &SpmParams,
    sys: &SystemParams,
    gains: &DabGains,
) -> Result<Vec<AuditEntry>> {
    let m = margins(spm, gains, sys.omega_0, 0.0)?;
    let f0 = sys.omega_0 / (2.0 * PI);
    let entries = vec![
        AuditEntry::new(
            "blocking_resonance_hz",
            spm.blocking_resonance(),
            spm.f_s1 / 10.0,
            spm.f_s1 / 2.0,
        ),
        AuditEntry::new("loop_crossover_hz", m.crossover_hz, 0.0, spm.f_s1 / 10.0),
        AuditEntry::new(
            "sensor_pole_over_crossover",
            gains.omega_vs / (2.0 * PI * m.crossover_hz),
            20.0,
            f64::INFINITY,
        ),
        AuditEntry::new(
            "crossover_over_ref_corner",
            2.0 * PI * m.crossover_hz / gains.omega_ref,
            2.0,
            f64::INFINITY,
        ),
        AuditEntry::new("ripple_in_band", m.crossover_hz / (2.0 * f0), 2.0, f64::INFINITY),
        AuditEntry::new(
            "module_over_lvdc_crossover",
            m.crossover_hz / sys.lvdc_bw_hz,
            10.0,
            f64::INFINITY,
        ),
        AuditEntry::new("grid_over_pll_bw", f0 / sys.pll_bw_hz, 1.5, f64::INFINITY),
    ];
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const OMEGA_0: f64 = 2.0 * PI * 60.0;

    fn defaults() -> (SpmParams, DabGains) {
        (SpmParams::default(), DabGains::default())
    }

    #[test]
    fn loop_coefficient_value() {
        let (spm, g) = defaults();
        assert_relative_eq!(loop_coefficient(&spm, &g), 3998.8, max_relative = 1e-3);
    }

    #[test]
    fn plant_is_a_pure_integrator() {
        let (spm, g) = defaults();
        let k = loop_coefficient(&spm, &g) / g.k_pmv;
        let h = plant_response(&spm, 0.0, 100.0);
        assert_relative_eq!(h.norm(), k / (2.0 * PI * 100.0), max_relative = 1e-12);
        assert_relative_eq!(h.arg().to_degrees(), -90.0, max_relative = 1e-12);
        // Loaded operating point weakens the small-signal gain.
        let h_loaded = plant_response(&spm, 0.27, 100.0);
        assert_relative_eq!(h_loaded.norm() / h.norm(), 1.0 - 0.54, max_relative = 1e-12);
    }

    #[test]
    fn compensator_ripple_frequency_magnitude() {
        // At 2 f0 the resonant branch contributes its full 1/t_rmv = 100
        // on top of the PI: |F(j 2 w0)| = 0.8282.
        let (_, g) = defaults();
        let f = compensator_response(&g, OMEGA_0, 120.0);
        assert_relative_eq!(f.norm(), 0.8282, max_relative = 1e-3);
    }

    #[test]
    fn sensor_chain_values() {
        let (_, g) = defaults();
        // Pole corner at 100 kHz.
        let h = sensor_response(&g, 1.0e5);
        assert_relative_eq!(h.norm(), 1.0 / 2.0_f64.sqrt(), max_relative = 1e-9);
        // At 1 kHz the transport delay dominates the phase.
        let h = sensor_response(&g, 1000.0);
        let delay_deg = -360.0 * 1000.0 * 77.0e-6;
        let pole_deg = -(1000.0 / 1.0e5_f64).atan().to_degrees();
        assert_relative_eq!(h.arg().to_degrees(), delay_deg + pole_deg, max_relative = 1e-9);
    }

    #[test]
    fn design_margins_land_on_the_published_point() {
        let (spm, g) = defaults();
        let m = margins(&spm, &g, OMEGA_0, 0.0).unwrap();
        assert_relative_eq!(m.crossover_hz, 640.0, max_relative = 5e-3);
        assert_relative_eq!(m.phase_margin_deg, 54.33, max_relative = 6e-3);
        assert_relative_eq!(m.f180_hz, 1900.9, max_relative = 5e-3);
        assert_relative_eq!(m.gain_margin_db, 9.50, max_relative = 0.015);
    }

    #[test]
    fn margins_inside_the_design_windows() {
        let (spm, g) = defaults();
        let m = margins(&spm, &g, OMEGA_0, 0.0).unwrap();
        assert!((m.crossover_hz - 643.0).abs() <= 20.0);
        assert!((m.phase_margin_deg - 55.0).abs() <= 5.0);
        assert!((m.gain_margin_db - 10.0).abs() <= 1.0);
    }

    #[test]
    fn extra_delay_erodes_phase_margin() {
        let (spm, mut g) = defaults();
        let base = margins(&spm, &g, OMEGA_0, 0.0).unwrap();
        g.t_vs *= 3.0;
        let slow = margins(&spm, &g, OMEGA_0, 0.0).unwrap();
        assert!(slow.phase_margin_deg < base.phase_margin_deg - 5.0);
        assert!(slow.gain_margin_db < base.gain_margin_db);
    }

    #[test]
    fn loaded_operating_point_only_moves_gain() {
        // (1 - 2 phi) scales magnitude, so crossover drops but the phase
        // curve is untouched; margins must still exist at full load.
        let (spm, g) = defaults();
        let m0 = margins(&spm, &g, OMEGA_0, 0.0).unwrap();
        let ml = margins(&spm, &g, OMEGA_0, 0.27).unwrap();
        assert!(ml.crossover_hz < m0.crossover_hz);
        assert_relative_eq!(ml.f180_hz, m0.f180_hz, max_relative = 1e-9);
        assert!(ml.gain_margin_db > m0.gain_margin_db);
    }

    #[test]
    fn resonant_phase_dip_stays_clear_of_flip() {
        // Near 2 f0 the resonator swings the loop phase hard; the PI's real
        // part keeps the dip above -180 so the phase crossing is unique.
        let (spm, g) = defaults();
        let mut min_phase: f64 = 0.0;
        for f in log_grid(100.0, 160.0, 400) {
            min_phase = min_phase.min(loop_phase_deg(&spm, &g, OMEGA_0, 0.0, f));
        }
        assert!(min_phase > -179.0, "dip to {min_phase:.1} deg");
        assert!(min_phase < -165.0, "expected a pronounced dip, got {min_phase:.1}");
    }

    #[test]
    fn discretization_stays_faithful_to_two_kilohertz() {
        let (_, g) = defaults();
        for f in log_grid(10.0, 2000.0, 300) {
            let (dmag, dph) = discretization_error(&g, OMEGA_0, f);
            assert!(dmag.abs() <= 0.2, "{dmag:.3} dB at {f:.0} Hz");
            assert!(dph.abs() <= 1.0, "{dph:.3} deg at {f:.0} Hz");
        }
    }

    #[test]
    fn timescale_audit_passes_for_defaults() {
        let (spm, g) = defaults();
        let sys = SystemParams::default();
        let audit = timescale_audit(&spm, &sys, &g).unwrap();
        assert_eq!(audit.len(), 7);
        for e in &audit {
            assert!(e.ok, "{} = {:.3} outside [{}, {}]", e.name, e.value, e.lo, e.hi);
        }
    }

    #[test]
    fn log_grid_shape() {
        let grid = log_grid(1.0, 1000.0, 4);
        assert_relative_eq!(grid[0], 1.0);
        assert_relative_eq!(grid[1], 10.0, max_relative = 1e-12);
        assert_relative_eq!(grid[3], 1000.0, max_relative = 1e-12);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn unwrapped_phase_has_no_jumps() {
        // The resonant branch swings the loop phase through ~170 degrees
        // within a fraction of a hertz around 120 Hz; the grid must be
        // dense enough there that a legitimate swing never looks like a
        // wrap artifact.
        let (spm, g) = defaults();
        let grid = log_grid(1.0, 5000.0, 8000);
        let fr = FreqResponse::sweep(&grid, |f| loop_response(&spm, &g, OMEGA_0, 0.0, f));
        let ph = fr.phase_deg_unwrapped();
        for w in ph.windows(2) {
            assert!((w[1] - w[0]).abs() < 60.0, "jump {} -> {}", w[0], w[1]);
        }
        // Ends far below -180 thanks to the accumulated transport delay.
        assert!(*ph.last().unwrap() < -300.0);
    }
}
