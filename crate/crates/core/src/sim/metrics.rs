//! Post-run measurements used by scenario checks and reports.

use crate::error::{Error, Result};

/// Peak-to-peak amplitude of the `f_hz` component of a uniformly sampled
/// signal, computed by single-bin correlation over the largest whole
/// number of cycles that fits at the end of the record. Windowing to whole
/// cycles keeps neighboring tones from leaking into the estimate.
pub fn ripple_pp(ts: &[f64], vs: &[f64], f_hz: f64) -> Result<f64> {
    if ts.len() != vs.len() || ts.len() < 8 {
        return Err(Error::Invariant(format!(
            "ripple estimate needs matched samples, got {}/{}",
            ts.len(),
            vs.len()
        )));
    }
    let dt = (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64;
    let span = dt * (ts.len() - 1) as f64;
    let cycles = (span * f_hz).floor();
    if cycles < 1.0 {
        return Err(Error::Invariant(format!(
            "record of {span:.4} s holds no whole cycle of {f_hz} Hz"
        )));
    }
    // An integer sample count closest to the whole-cycle span; together with
    // removing the window mean this keeps DC and slow drift out of the bin.
    let m = ((cycles / f_hz) / dt).round() as usize;
    let tail = &vs[vs.len() - m..];
    let t_tail = &ts[ts.len() - m..];
    let mean = tail.iter().sum::<f64>() / m as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for (&t, &v) in t_tail.iter().zip(tail) {
        let ph = 2.0 * std::f64::consts::PI * f_hz * t;
        re += (v - mean) * ph.cos();
        im += (v - mean) * ph.sin();
    }
    let amp = 2.0 * (re * re + im * im).sqrt() / m as f64;
    Ok(2.0 * amp)
}

/// Raw max-minus-min of a record.
pub fn peak_to_peak(vs: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vs {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if vs.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Largest within-phase spread (max minus min) across the three phase
/// groups of a phase-major per-module vector.
pub fn per_phase_spread(values: &[f64], n_blocks: usize) -> f64 {
    assert_eq!(values.len(), 3 * n_blocks);
    let mut worst: f64 = 0.0;
    for ph in 0..3 {
        let group = &values[ph * n_blocks..(ph + 1) * n_blocks];
        worst = worst.max(peak_to_peak(group));
    }
    worst
}

/// First time at or after `t_from` from which the signal stays inside
/// `v_final +/- band` for the rest of the record. `None` if it never
/// settles.
pub fn settling_time(ts: &[f64], vs: &[f64], t_from: f64, v_final: f64, band: f64) -> Option<f64> {
    assert_eq!(ts.len(), vs.len());
    let mut settled_at: Option<f64> = None;
    for (&t, &v) in ts.iter().zip(vs) {
        if t < t_from {
            continue;
        }
        if (v - v_final).abs() <= band {
            settled_at.get_or_insert(t);
        } else {
            settled_at = None;
        }
    }
    settled_at
}

/// Largest |v - v_ref| over the window [t0, t1].
pub fn max_abs_dev(ts: &[f64], vs: &[f64], t0: f64, t1: f64, v_ref: f64) -> f64 {
    ts.iter()
        .zip(vs)
        .filter(|(&t, _)| t >= t0 && t <= t1)
        .map(|(_, &v)| (v - v_ref).abs())
        .fold(0.0, f64::max)
}
