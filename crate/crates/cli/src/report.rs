//! `report`: fold the per-scenario check tables back into one view of
//! the verification suite.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

/// A check row round-tripped from a checks.csv file.
#[derive(Debug, Clone)]
struct Row {
    name: String,
    value: f64,
    lo: f64,
    hi: f64,
    pass: bool,
    advisory: bool,
}

/// The suite's criteria, keyed by check-name prefix. A row matches the
/// first entry whose predicate accepts it, so the residual bucket must
/// come before the per-scenario ones.
const CRITERIA: [(usize, &str); 9] = [
    (7, "energy bookkeeping residuals"),
    (1, "module voltage loop margins"),
    (2, "blocking-filter placement"),
    (3, "double-line-frequency ripple rejection"),
    (4, "module balancing under tolerances"),
    (5, "LVDC regulation under load steps"),
    (6, "soft start-up"),
    (8, "controller discretization fidelity"),
    (9, "determinism and step-size robustness"),
];

fn criterion_of(name: &str) -> Option<usize> {
    if name.contains("residual") {
        return Some(7);
    }
    if name.starts_with("margins:") {
        return Some(if name.contains("resonance") { 2 } else { 1 });
    }
    let table = [
        ("ripple:", 3),
        ("balance:", 4),
        ("load_step:", 5),
        ("startup:", 6),
        ("discretization:", 8),
        ("determinism:", 9),
    ];
    table
        .iter()
        .find(|(prefix, _)| name.starts_with(prefix))
        .map(|&(_, c)| c)
}

fn parse_checks_csv(path: &Path) -> Result<Vec<Row>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue; // header
        }
        // Check names contain no commas; five fields follow the name.
        let mut parts: Vec<&str> = line.rsplitn(6, ',').collect();
        parts.reverse();
        if parts.len() != 6 {
            bail!("{}: malformed row {:?}", path.display(), line);
        }
        rows.push(Row {
            name: parts[0].to_string(),
            value: parts[1].parse()?,
            lo: parts[2].parse()?,
            hi: parts[3].parse()?,
            pass: parts[4].parse()?,
            advisory: parts[5].parse()?,
        });
    }
    Ok(rows)
}

pub fn cmd_report(run_dir: PathBuf, strict: bool, json: bool) -> Result<()> {
    let mut rows: Vec<Row> = Vec::new();
    let mut found: Vec<String> = Vec::new();
    if run_dir.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&run_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for dir in entries {
            let checks = dir.join("checks.csv");
            if checks.is_file() {
                rows.extend(parse_checks_csv(&checks)?);
                if let Some(name) = dir.file_name().and_then(|n| n.to_str()) {
                    found.push(name.to_string());
                }
            }
        }
    }

    let expected = ["startup", "load_step", "balance", "ripple", "margins", "determinism"];
    let missing: Vec<&str> = expected
        .iter()
        .filter(|s| !found.iter().any(|f| f == *s))
        .copied()
        .collect();

    if rows.is_empty() && !json {
        println!("no check results under {}", run_dir.display());
        if !missing.is_empty() {
            println!("missing scenarios: {}", missing.join(", "));
        }
        return Ok(());
    }

    let mut failed_criteria = 0usize;
    let mut json_rows = Vec::new();
    if !json && !rows.is_empty() {
        println!("{:<3} {:<44} {:>6} {:>6} {}", "#", "criterion", "checks", "miss", "status");
    }
    let mut ordered = CRITERIA;
    ordered.sort();
    for (idx, title) in ordered {
        let hits: Vec<&Row> = rows
            .iter()
            .filter(|r| criterion_of(&r.name) == Some(idx))
            .collect();
        if hits.is_empty() {
            continue;
        }
        let misses: Vec<&&Row> = hits.iter().filter(|r| !r.pass && !r.advisory).collect();
        let advisory_misses = hits.iter().filter(|r| !r.pass && r.advisory).count();
        let status = if misses.is_empty() {
            if advisory_misses > 0 {
                "PASS (advisory miss)"
            } else {
                "PASS"
            }
        } else {
            failed_criteria += 1;
            "FAIL"
        };
        if json {
            json_rows.push(serde_json::json!({
                "criterion": idx,
                "title": title,
                "checks": hits.len(),
                "missed": misses.len() + advisory_misses,
                "status": status,
            }));
            continue;
        }
        println!(
            "{:<3} {:<44} {:>6} {:>6} {}",
            idx,
            title,
            hits.len(),
            misses.len() + advisory_misses,
            status
        );
        for r in hits.iter().filter(|r| !r.pass) {
            println!(
                "      miss: {} = {} (window {} .. {}){}",
                r.name,
                r.value,
                r.lo,
                r.hi,
                if r.advisory { " [advisory]" } else { "" }
            );
        }
    }
    if json {
        let doc = serde_json::json!({
            "criteria": json_rows,
            "missing_scenarios": missing,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else if !missing.is_empty() {
        println!("missing scenarios: {}", missing.join(", "));
    }

    if strict && failed_criteria > 0 {
        bail!("{failed_criteria} criterion(s) failed");
    }
    Ok(())
}
