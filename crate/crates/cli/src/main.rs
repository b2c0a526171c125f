//! Command-line front end: runs the canned scenarios, writes traces and
//! figure-ready CSV plus a machine-readable check table per run, and
//! tabulates the whole design-verification suite back out of a results
//! directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use isopsim_core::config::Config;
use isopsim_core::freq;
use isopsim_core::plant::LoadStep;
use isopsim_core::sim::catalog::{self, Check};
use isopsim_core::sim::{metrics, trace, RunOutput};

mod report;

#[derive(Parser)]
#[command(name = "isopsim", version, about = "Modular MVAC-LVDC converter simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write its outputs under --out.
    Run(RunArgs),
    /// Tabulate check results previously written by `run`.
    Report(ReportArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Scenario {
    Startup,
    LoadStep,
    Balance,
    Ripple,
    Margins,
    All,
}

impl Scenario {
    fn name(self) -> &'static str {
        match self {
            Scenario::Startup => "startup",
            Scenario::LoadStep => "load_step",
            Scenario::Balance => "balance",
            Scenario::Ripple => "ripple",
            Scenario::Margins => "margins",
            Scenario::All => "all",
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// What to simulate. `all` runs every scenario (concurrently) plus a
    /// determinism cross-check.
    #[arg(value_enum)]
    scenario: Scenario,
    /// JSON config file. Defaults to $ISOPSIM_CONFIG, then to built-in
    /// defaults. The file's scenario section is replaced by the canned
    /// scenario being run; plant and controller sections carry through.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results root; each scenario writes to <out>/<scenario>/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the tolerance-assignment shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit nonzero if any non-advisory check misses its window.
    #[arg(long)]
    check: bool,
    /// Override trace decimation (plant steps per recorded frame).
    #[arg(long)]
    decimate: Option<usize>,
    /// Force the module ripple rejectors on or off. Ignored by `ripple`,
    /// which always runs the on/off pair, and by `margins`.
    #[arg(long, value_enum)]
    resonant: Option<OnOff>,
    /// Override the simulated span [s].
    #[arg(long)]
    duration: Option<f64>,
    /// Replace an existing scenario output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory previously passed to `run --out`.
    run_dir: PathBuf,
    /// Exit nonzero if any tabulated criterion failed.
    #[arg(long)]
    strict: bool,
    /// Emit the consolidated report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() {
    let result = match Cli::parse().cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Report(args) => report::cmd_report(args.run_dir, args.strict, args.json),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- run

fn cmd_run(args: RunArgs) -> Result<()> {
    let (base, config_path) = load_base_config(args.config.as_deref())?;

    let scenarios: Vec<Scenario> = match args.scenario {
        Scenario::All => vec![
            Scenario::Startup,
            Scenario::LoadStep,
            Scenario::Balance,
            Scenario::Ripple,
            Scenario::Margins,
        ],
        s => vec![s],
    };
    for s in &scenarios {
        prepare_dir(&args.out.join(s.name()), args.force)?;
    }
    if args.scenario == Scenario::All {
        prepare_dir(&args.out.join("determinism"), args.force)?;
    }

    // Scenario runs are independent; `all` fans them out across threads
    // and each writes only to its own directory.
    let mut results: Vec<(Scenario, Result<Vec<Check>>)> = Vec::new();
    if scenarios.len() == 1 {
        let s = scenarios[0];
        results.push((s, run_scenario(s, &base, &config_path, &args)));
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = scenarios
                .iter()
                .map(|&s| {
                    let base = &base;
                    let config_path = &config_path;
                    let args = &args;
                    (s, scope.spawn(move || run_scenario(s, base, config_path, args)))
                })
                .collect();
            for (s, h) in handles {
                results.push((s, h.join().expect("scenario thread panicked")));
            }
        });
        results.push((
            Scenario::All, // determinism piggybacks on `all`
            run_determinism(&base, &config_path, &args),
        ));
    }

    let mut missed = 0usize;
    for (s, res) in &results {
        let checks = res
            .as_ref()
            .map_err(|e| anyhow::anyhow!("{}: {e}", s.name()))?;
        for c in checks {
            print_check(c);
            if !c.pass && !c.advisory {
                missed += 1;
            }
        }
    }

    if args.check && missed > 0 {
        bail!("{missed} check(s) outside their windows");
    }
    Ok(())
}

/// Resolve the base config: --config beats $ISOPSIM_CONFIG beats defaults.
fn load_base_config(flag: Option<&Path>) -> Result<(Config, String)> {
    let path = flag
        .map(|p| p.to_path_buf())
        .or_else(|| std::env::var_os("ISOPSIM_CONFIG").map(PathBuf::from));
    match path {
        Some(p) => {
            let cfg = Config::load(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((cfg, p.display().to_string()))
        }
        None => Ok((Config::default(), "(builtin defaults)".into())),
    }
}

/// Refuse to clobber prior results unless asked to.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        if !force {
            bail!(
                "{} already holds results; pass --force to replace them",
                dir.display()
            );
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// The canned scenario section grafted onto the user's plant sections,
/// with command-line overrides on top.
fn scenario_config(s: Scenario, base: &Config, args: &RunArgs) -> Result<Config> {
    let canned = match s {
        Scenario::Startup => catalog::startup_config(),
        Scenario::LoadStep => catalog::load_step_config(),
        Scenario::Balance => catalog::balance_config(),
        Scenario::Ripple => unreachable!("ripple builds its own pair"),
        Scenario::Margins | Scenario::All => unreachable!("not a single sim"),
    };
    let mut cfg = base.clone();
    cfg.scenario = canned.scenario;
    apply_overrides(&mut cfg, args)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut Config, args: &RunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(decimate) = args.decimate {
        cfg.scenario.decimate = decimate;
    }
    if let Some(duration) = args.duration {
        cfg.scenario.duration = duration;
    }
    if let Some(r) = args.resonant {
        cfg.scenario.resonant_enabled = matches!(r, OnOff::On);
    }
    cfg.validate()?;
    Ok(())
}

fn run_scenario(
    s: Scenario,
    base: &Config,
    config_path: &str,
    args: &RunArgs,
) -> Result<Vec<Check>> {
    let dir = args.out.join(s.name());
    let checks = match s {
        Scenario::Startup | Scenario::LoadStep | Scenario::Balance => {
            let cfg = scenario_config(s, base, args)?;
            let out = catalog::run_config(&cfg)?;
            let checks = match s {
                Scenario::Startup => catalog::check_startup(&out),
                Scenario::LoadStep => catalog::check_load_step(&out),
                _ => catalog::check_balance(&out, cfg.system.n_blocks),
            };
            // The load-step summary names its headline numbers directly;
            // everything else reads them from the check table.
            let extras = if matches!(s, Scenario::LoadStep) {
                let of = |needle: &str| {
                    checks
                        .iter()
                        .find(|c| c.name.contains(needle))
                        .map_or(f64::NAN, |c| c.value)
                };
                vec![
                    (
                        "settle_time_s",
                        serde_json::json!({
                            "apply": of("apply settling"),
                            "reject": of("reject settling"),
                        }),
                    ),
                    (
                        "max_deviation_v",
                        serde_json::json!({
                            "apply": of("apply max deviation"),
                            "reject": of("reject max deviation"),
                        }),
                    ),
                ]
            } else {
                Vec::new()
            };
            write_run_outputs(&dir, &cfg, &out, "", &extras)?;
            write_plot(&dir, s, &out)?;
            checks
        }
        Scenario::Ripple => {
            let mut on = base.clone();
            on.scenario = catalog::ripple_config(true).scenario;
            apply_overrides(&mut on, args)?;
            let mut off = base.clone();
            off.scenario = catalog::ripple_config(false).scenario;
            apply_overrides(&mut off, args)?;
            let run_on = catalog::run_config(&on)?;
            let run_off = catalog::run_config(&off)?;
            write_run_outputs(&dir, &on, &run_on, "_on", &[])?;
            write_run_outputs(&dir, &off, &run_off, "_off", &[])?;
            write_ripple_plot(&dir, &run_on, &run_off)?;
            catalog::check_ripple(&run_on, &run_off)?
        }
        Scenario::Margins => {
            let cfg = base.clone();
            cfg.validate()?;
            write_bode(&dir, &cfg)?;
            let mut checks = catalog::check_margins(&cfg)?;
            checks.extend(catalog::check_discretization(&cfg));
            checks
        }
        Scenario::All => unreachable!(),
    };
    write_checks_csv(&dir.join("checks.csv"), &checks)?;
    write_manifest(&dir, s.name(), config_path, base, args, &checks)?;
    Ok(checks)
}

/// Same inputs, same bytes out: two identical runs must produce identical
/// traces, and halving the integration step must not move the endpoint
/// beyond discretization noise.
fn run_determinism(base: &Config, config_path: &str, args: &RunArgs) -> Result<Vec<Check>> {
    let dir = args.out.join("determinism");
    let mut cfg = base.clone();
    cfg.scenario.name = "determinism".into();
    cfg.scenario.duration = 0.3;
    cfg.scenario.load_profile.mvdc_bleed_r = Some(catalog::BLEED_R_OHM);
    cfg.scenario.load_profile.steps = vec![LoadStep {
        time: 0.0,
        i_lv: None,
        p_lv: Some(0.5e6),
        ramp: 0.0,
    }];
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    cfg.validate()?;

    let csv_of = |out: &RunOutput, n: usize| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        trace::write_csv(&out.frames, n, &mut buf)?;
        Ok(buf)
    };
    let n = cfg.system.spm_count();
    let a = catalog::run_config(&cfg)?;
    let b = catalog::run_config(&cfg)?;
    let identical = csv_of(&a, n)? == csv_of(&b, n)?;

    let mut half = cfg.clone();
    half.scenario.dt_plant /= 2.0;
    let h = catalog::run_config(&half)?;
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);

    let checks = vec![
        Check::window(
            "determinism: repeat run differs",
            if identical { 0.0 } else { 1.0 },
            0.0,
            0.0,
        ),
        Check::at_most(
            "determinism: LVDC endpoint shift at half step [rel]",
            rel(h.summary.final_v_lv, a.summary.final_v_lv),
            1.0e-4,
        ),
        Check::at_most(
            "determinism: module bus endpoint shift at half step [rel]",
            rel(h.summary.final_v_mv_mean, a.summary.final_v_mv_mean),
            1.0e-4,
        ),
    ];
    write_checks_csv(&dir.join("checks.csv"), &checks)?;
    write_manifest(&dir, "determinism", config_path, base, args, &checks)?;
    Ok(checks)
}

// ------------------------------------------------------------- output

fn write_run_outputs(
    dir: &Path,
    cfg: &Config,
    out: &RunOutput,
    suffix: &str,
    extras: &[(&str, serde_json::Value)],
) -> Result<()> {
    let n = cfg.system.spm_count();
    let f = fs::File::create(dir.join(format!("trace{suffix}.csv")))?;
    trace::write_csv(&out.frames, n, BufWriter::new(f))?;
    let f = fs::File::create(dir.join(format!("gates{suffix}.csv")))?;
    trace::write_gates_csv(&out.gate_rows, n, BufWriter::new(f))?;
    let mut summary = serde_json::to_value(&out.summary)?;
    for (key, value) in extras {
        summary[key] = value.clone();
    }
    fs::write(
        dir.join(format!("summary{suffix}.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    scenario: &str,
    config_path: &str,
    base: &Config,
    args: &RunArgs,
    checks: &[Check],
) -> Result<()> {
    let canonical = serde_json::to_string(base)?;
    let metrics: serde_json::Map<String, serde_json::Value> = checks
        .iter()
        .map(|c| (c.name.clone(), serde_json::json!(c.value)))
        .collect();
    let manifest = serde_json::json!({
        "scenario": scenario,
        "config_path": config_path,
        "out_dir": dir.display().to_string(),
        "seed": args.seed.unwrap_or(base.scenario.seed),
        "run_id": run_id(scenario, &canonical, args.seed.unwrap_or(base.scenario.seed)),
        "checks_total": checks.len(),
        "checks_failed": checks.iter().filter(|c| !c.pass && !c.advisory).count(),
        "advisory_missed": checks.iter().filter(|c| !c.pass && c.advisory).count(),
        "metrics": metrics,
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Content-addressed run id: same scenario, config, and seed always map
/// to the same 40-hex-digit tag.
fn run_id(scenario: &str, canonical_cfg: &str, seed: u64) -> String {
    let mut id = String::new();
    for salt in 0u64..3 {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        eat(scenario.as_bytes());
        eat(canonical_cfg.as_bytes());
        eat(&seed.to_le_bytes());
        id.push_str(&format!("{h:016x}"));
    }
    id.truncate(40);
    id
}

fn write_checks_csv(path: &Path, checks: &[Check]) -> Result<()> {
    let mut text = String::from("name,value,lo,hi,pass,advisory\n");
    for c in checks {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.name, c.value, c.lo, c.hi, c.pass, c.advisory
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

fn print_check(c: &Check) {
    let window = match (c.lo.is_finite(), c.hi.is_finite()) {
        (true, true) => format!("[{} .. {}]", c.lo, c.hi),
        (true, false) => format!(">= {}", c.lo),
        (false, true) => format!("<= {}", c.hi),
        (false, false) => "(unbounded)".into(),
    };
    let status = match (c.pass, c.advisory) {
        (true, _) => "ok",
        (false, true) => "MISS (advisory)",
        (false, false) => "MISS",
    };
    println!("{:<58} {:>12.4} {:<22} {}", c.name, c.value, window, status);
}

// Figure-ready projections of the trace.

fn write_table(path: &Path, cols: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    use std::io::Write;
    writeln!(w, "{}", cols.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn write_plot(dir: &Path, s: Scenario, out: &RunOutput) -> Result<()> {
    let rows: Vec<Vec<f64>>;
    let cols: &[&str];
    match s {
        Scenario::Startup => {
            cols = &["t", "v_lv", "vmv_mean", "ia", "ib", "ic"];
            rows = out
                .frames
                .iter()
                .map(|f| {
                    let mean = f.v_mv.iter().sum::<f64>() / f.v_mv.len() as f64;
                    vec![f.t, f.v_lv, mean, f.i_abc[0], f.i_abc[1], f.i_abc[2]]
                })
                .collect();
        }
        Scenario::LoadStep => {
            cols = &["t", "v_lv", "i_lv", "pgref"];
            rows = out
                .frames
                .iter()
                .map(|f| vec![f.t, f.v_lv, f.i_lv, f.p_gref])
                .collect();
        }
        Scenario::Balance => {
            // Instantaneous within-phase spreads; the check table applies
            // the line-cycle averaging.
            cols = &["t", "spread_v", "spread_p"];
            let n_blocks = out.frames[0].v_mv.len() / 3;
            rows = out
                .frames
                .iter()
                .map(|f| {
                    vec![
                        f.t,
                        metrics::per_phase_spread(&f.v_mv, n_blocks),
                        metrics::per_phase_spread(&f.p_dab, n_blocks),
                    ]
                })
                .collect();
        }
        _ => return Ok(()),
    }
    write_table(&dir.join("plot.csv"), cols, &rows)
}

/// Module-0 bus voltage with the rejector on and off on a shared
/// timebase; the pair is the whole story of the ripple study.
fn write_ripple_plot(dir: &Path, on: &RunOutput, off: &RunOutput) -> Result<()> {
    let rows: Vec<Vec<f64>> = on
        .frames
        .iter()
        .zip(&off.frames)
        .map(|(a, b)| vec![a.t, a.v_mv[0], b.v_mv[0]])
        .collect();
    write_table(&dir.join("plot.csv"), &["t", "vmv_on", "vmv_off"], &rows)
}

/// Open-loop response of the module voltage loop across the audit band.
fn write_bode(dir: &Path, cfg: &Config) -> Result<()> {
    let grid = freq::log_grid(1.0, cfg.spm.f_s1 / 2.0, 600);
    let resp = freq::FreqResponse::sweep(&grid, |f| {
        freq::loop_response(&cfg.spm, &cfg.dab_gains, cfg.system.omega_0, 0.0, f)
    });
    let mags = resp.mag_db();
    let phases = resp.phase_deg_unwrapped();
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .zip(mags.iter().zip(&phases))
        .map(|(&f, (&m, &p))| vec![f, m, p])
        .collect();
    write_table(&dir.join("bode.csv"), &["f_hz", "mag_db", "phase_deg"], &rows)
}
