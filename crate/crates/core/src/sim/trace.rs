//! Run traces and their CSV form.
//!
//! Floats are written with the shortest representation that round-trips
//! exactly, so a written trace is a faithful record of the run and two
//! identical runs produce byte-identical files.

use std::io::Write;

use crate::central::StartupPhase;
use crate::error::Result;

/// One decimated sample of everything observable.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub t: f64,
    pub v_lv: f64,
    pub i_lv: f64,
    pub v_abc: [f64; 3],
    pub i_abc: [f64; 3],
    pub v_mv: Vec<f64>,
    pub phi: Vec<f64>,
    pub p_dab: Vec<f64>,
    pub p_afe: Vec<f64>,
    pub phase: StartupPhase,
    /// Central grid power command [W].
    pub p_gref: f64,
}

/// Column header for a stack of `n_modules` modules.
pub fn csv_header(n_modules: usize) -> String {
    let mut cols: Vec<String> = ["t", "v_lv", "i_lv", "va", "vb", "vc", "ia", "ib", "ic"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for group in ["vmv", "phi", "pdab", "pafe"] {
        for k in 0..n_modules {
            cols.push(format!("{group}_{k:02}"));
        }
    }
    cols.push("phase".into());
    cols.push("pgref".into());
    cols.join(",")
}

pub fn write_csv<W: Write>(frames: &[TraceFrame], n_modules: usize, mut w: W) -> Result<()> {
    writeln!(w, "{}", csv_header(n_modules))?;
    let mut line = String::with_capacity(n_modules * 80);
    for f in frames {
        line.clear();
        push(&mut line, f.t);
        push(&mut line, f.v_lv);
        push(&mut line, f.i_lv);
        for v in f.v_abc {
            push(&mut line, v);
        }
        for v in f.i_abc {
            push(&mut line, v);
        }
        for group in [&f.v_mv, &f.phi, &f.p_dab, &f.p_afe] {
            debug_assert_eq!(group.len(), n_modules);
            for &v in group.iter() {
                push(&mut line, v);
            }
        }
        line.push_str(f.phase.as_str());
        line.push(',');
        line.push_str(&format!("{}", f.p_gref));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn push(line: &mut String, v: f64) {
    line.push_str(&format!("{v}"));
    line.push(',');
}

/// Gate codes at one control tick, phase-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRow {
    pub t: f64,
    pub codes: Vec<u8>,
}

pub fn write_gates_csv<W: Write>(rows: &[GateRow], n_modules: usize, mut w: W) -> Result<()> {
    let mut cols = vec!["t".to_string()];
    for k in 0..n_modules {
        cols.push(format!("gate_{k:02}"));
    }
    writeln!(w, "{}", cols.join(","))?;
    for r in rows {
        let mut line = format!("{}", r.t);
        for &c in &r.codes {
            line.push(',');
            line.push_str(&format!("{c}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Two-column CSV used for exported plot data.
pub fn write_xy_csv<W: Write>(
    names: (&str, &str),
    xs: &[f64],
    ys: &[f64],
    mut w: W,
) -> Result<()> {
    writeln!(w, "{},{}", names.0, names.1)?;
    for (x, y) in xs.iter().zip(ys) {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64, n: usize) -> TraceFrame {
        TraceFrame {
            t,
            v_lv: 750.0 + t,
            i_lv: 1333.333_333_333_333_4,
            v_abc: [1.0, 2.0, 3.0],
            i_abc: [0.1, 0.2, 0.3],
            v_mv: (0..n).map(|k| 2150.0 + k as f64 * 0.123_456_789).collect(),
            phi: vec![0.271_7; n],
            p_dab: vec![55.6e3; n],
            p_afe: vec![55.6e3; n],
            phase: StartupPhase::Nominal,
            p_gref: 1.0e6,
        }
    }

    #[test]
    fn header_layout_for_reference_stack() {
        let h = csv_header(18);
        let cols: Vec<&str> = h.split(',').collect();
        assert_eq!(cols.len(), 83);
        assert_eq!(cols[0], "t");
        assert_eq!(cols[9], "vmv_00");
        assert_eq!(cols[26], "vmv_17");
        assert_eq!(cols[27], "phi_00");
        assert_eq!(cols[45], "pdab_00");
        assert_eq!(cols[62], "pdab_17");
        assert_eq!(cols[63], "pafe_00");
        assert_eq!(cols[80], "pafe_17");
        assert_eq!(cols[81], "phase");
        assert_eq!(cols[82], "pgref");
    }

    #[test]
    fn rows_round_trip_exactly() {
        let f = frame(0.012_345_678_901_234_5, 3);
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&f), 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 23);
        assert_eq!(cells[0].parse::<f64>().unwrap(), f.t);
        assert_eq!(cells[2].parse::<f64>().unwrap(), f.i_lv);
        assert_eq!(cells[11].parse::<f64>().unwrap(), f.v_mv[2]);
        assert_eq!(cells[21], "nominal");
    }

    #[test]
    fn identical_frames_serialize_identically() {
        let frames: Vec<TraceFrame> = (0..5).map(|k| frame(k as f64 * 1.0e-4, 18)).collect();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&frames, 18, &mut a).unwrap();
        write_csv(&frames.clone(), 18, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gate_rows_serialize() {
        let rows = vec![GateRow {
            t: 1.0e-4,
            codes: vec![0, 1, 2],
        }];
        let mut buf = Vec::new();
        write_gates_csv(&rows, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,gate_00,gate_01,gate_02\n0.0001,0,1,2\n");
    }
}
