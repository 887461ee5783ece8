use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use arvdm::config::{load_ladder, read_text, ExperimentConfig, SweepPoint};
use arvdm::decomposition::{self, audit, fmt_f64, AuditStatus, DecompositionReport};
use arvdm::lowerbound::{self, MinimaxOutcome, HalfKlCheck};
use arvdm::plot::{render_svg, Table};
use arvdm::sampler::sample_paths;
use arvdm::schedule::{validate, ValidationReport};
use arvdm::{Error, Result};

#[derive(Parser)]
#[command(name = "arvdm", version, about = "Error decomposition lab for autoregressive video diffusion")]
struct Cli {
    /// Worker threads for sweeps and Monte Carlo.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a ladder file against the schedule requirements.
    Validate { path: PathBuf },
    /// Run the error decomposition for every sweep point.
    Decompose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two-point lower-bound numerics.
    Lowerbound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a sweep CSV as an SVG line chart.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional document with a [plot] section.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Dump Monte Carlo draws of the generated video as CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Validate { path } => cmd_validate(&path),
        Command::Decompose { config, out, seed } => cmd_decompose(&config, &out, seed),
        Command::Lowerbound { config, out, seed } => cmd_lowerbound(&config, &out, seed),
        Command::Plot { csv, out, config } => cmd_plot(&csv, &out, config.as_deref()),
        Command::Sample {
            config,
            out,
            seed,
            n_paths,
        } => cmd_sample(&config, &out, seed, n_paths),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_failure() { 2 } else { 1 })
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cmd_validate(path: &Path) -> Result<u8> {
    let ladder = load_ladder(path)?;
    let report = validate(&ladder);
    for v in &report.violations {
        println!("{v}");
    }
    if report.ok() {
        println!("valid: w={} delta={} T={}", ladder.w(), ladder.delta(), ladder.horizon());
    }
    println!("{}", ValidationReport::CAUSALITY);
    Ok(if report.ok() { 0 } else { 1 })
}

#[derive(Serialize)]
struct Assignment<'a> {
    name: &'a str,
    value: &'a str,
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    sweep: Vec<Assignment<'a>>,
    audit_ratio: f64,
    report: &'a DecompositionReport,
}

fn cmd_decompose(config: &Path, out: &Path, seed: Option<u64>) -> Result<u8> {
    let cfg = load_config(config, seed)?;
    let points: Vec<SweepPoint> = cfg.sweep_points()?;
    let reports: Vec<DecompositionReport> = points
        .par_iter()
        .map(|p| decomposition::decomposition_report(&p.run))
        .collect::<Result<_>>()?;

    let mut header: Vec<String> = cfg.sweep.iter().map(|a| a.name.clone()).collect();
    header.extend(decomposition::CSV_COLUMNS.iter().map(|c| c.to_string()));
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut fatal = false;
    for (p, r) in points.iter().zip(&reports) {
        let (ratio, status) = audit(r);
        let label: Vec<String> = p.assignments.iter().map(|(n, v)| format!("{n}={v}")).collect();
        let label = if label.is_empty() { "run".to_string() } else { label.join(" ") };
        let verdict = match status {
            AuditStatus::Pass => "pass",
            AuditStatus::Logged => "logged",
            AuditStatus::Fatal => "fatal",
        };
        println!(
            "{label}: measured_joint_kl={} bound_total={} mb_total={} audit={verdict} ratio={}",
            fmt_f64(r.measured_joint_kl),
            fmt_f64(r.bound_total()),
            fmt_f64(r.mb_total()),
            fmt_f64(ratio)
        );
        fatal |= status == AuditStatus::Fatal;
        let mut row: Vec<String> = p.assignments.iter().map(|(_, v)| v.clone()).collect();
        row.extend(r.csv_row().split(',').map(str::to_string));
        rows.push(row);
        records.push(SweepRecord {
            sweep: p.assignments.iter().map(|(n, v)| Assignment { name: n, value: v }).collect(),
            audit_ratio: ratio,
            report: r,
        });
    }
    let json = serde_json::to_string_pretty(&records).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(out, "decompose.json", &(json + "\n"))?;
    write_file(out, "decompose.csv", &csv_text(&header, &rows)?)?;
    if fatal {
        eprintln!("error: measured KL exceeds {}x the summed bound", decomposition::AUDIT_FATAL_FACTOR);
        return Ok(1);
    }
    Ok(0)
}

#[derive(Serialize)]
struct LowerboundReport {
    s: f64,
    eps: f64,
    entropy_residual: f64,
    cmi: f64,
    cmi_ok: bool,
    tv: f64,
    tv_ok: bool,
    half_kl_check: HalfKlCheck,
    half_kl_grid_ok: bool,
    reverse_pinsker_grid_ok: bool,
    minimax: MinimaxOutcome,
}

fn cmd_lowerbound(config: &Path, out: &Path, seed: Option<u64>) -> Result<u8> {
    let cfg = load_config(config, seed)?;
    let seed = cfg.require_seed()?;
    let lb = cfg
        .lowerbound
        .as_ref()
        .ok_or_else(|| Error::Config("lowerbound needs a [lowerbound] section".into()))?;
    if !(lb.s > 0.0 && lb.s <= 1.0) {
        return Err(Error::InvalidArgument(format!("s={} outside (0, 1]", lb.s)));
    }
    let eps = lowerbound::binary_entropy_inverse(1.0 - lb.s)?;
    let entropy_residual = (lowerbound::binary_entropy(eps)? - (1.0 - lb.s)).abs();
    let (p0, p1) = (lowerbound::construct_p0(), lowerbound::construct_p1(eps)?);
    let cmi = lowerbound::cmi_discrete(&p1);
    let tv = lowerbound::tv(&p0, &p1);
    let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 100.0).collect();
    let mut half_kl_grid_ok = true;
    let mut reverse_pinsker_grid_ok = true;
    for &e in &grid {
        half_kl_grid_ok &= lowerbound::verify_tv_half_kl(e)?.ok;
        reverse_pinsker_grid_ok &= lowerbound::verify_reverse_pinsker(&lowerbound::construct_p1(e)?, &p0)?;
    }
    let report = LowerboundReport {
        s: lb.s,
        eps,
        entropy_residual,
        cmi,
        cmi_ok: (cmi - lb.s).abs() <= 1e-10,
        tv,
        tv_ok: (tv - (1.0 - 2.0 * eps) / 2.0).abs() <= 1e-12,
        half_kl_check: lowerbound::verify_tv_half_kl(eps)?,
        half_kl_grid_ok,
        reverse_pinsker_grid_ok,
        minimax: lowerbound::minimax_demo(lb.s, lb.n, lb.trials, seed)?,
    };
    println!("s={} eps={}", fmt_f64(report.s), fmt_f64(report.eps));
    println!("cmi={} ok={}", fmt_f64(report.cmi), report.cmi_ok);
    println!("tv={} ok={}", fmt_f64(report.tv), report.tv_ok);
    println!(
        "tv_half_kl tv={} half_kl={} ok={} grid_ok={}",
        fmt_f64(report.half_kl_check.tv),
        fmt_f64(report.half_kl_check.half_kl),
        report.half_kl_check.ok,
        report.half_kl_grid_ok
    );
    println!("reverse_pinsker grid_ok={}", report.reverse_pinsker_grid_ok);
    println!(
        "minimax fraction={} threshold={} limit_kl={} (N={}, trials={})",
        fmt_f64(report.minimax.fraction),
        fmt_f64(report.minimax.threshold),
        fmt_f64(report.minimax.limit_kl),
        lb.n,
        lb.trials
    );
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(out, "lowerbound.json", &(json + "\n"))?;
    let ok = report.cmi_ok && report.tv_ok && report.half_kl_check.ok && report.half_kl_grid_ok && report.reverse_pinsker_grid_ok;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_plot(csv: &Path, out: &Path, config: Option<&Path>) -> Result<u8> {
    let table = Table::parse(&read_text(csv)?)?;
    let cfg = config.map(ExperimentConfig::load).transpose()?;
    let svg = render_svg(&table, cfg.as_ref().and_then(|c| c.plot.as_ref()))?;
    let name = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    let path = write_file(out, &format!("{name}.svg"), &svg)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_sample(config: &Path, out: &Path, seed: Option<u64>, n_paths: Option<usize>) -> Result<u8> {
    let cfg = load_config(config, seed)?;
    cfg.require_seed()?;
    let n = n_paths
        .or(cfg.sample.as_ref().map(|s| s.n_paths))
        .ok_or_else(|| Error::Config("sample needs --n-paths or a [sample] section".into()))?;
    let mut points = cfg.sweep_points()?;
    if points.len() != 1 {
        return Err(Error::Config("sample runs a single configuration; remove the sweep axes".into()));
    }
    let run = points.remove(0).run;
    let x = sample_paths(&run, n)?;
    let d = run.model.frame_dim;
    let header: Vec<String> = (0..x.ncols())
        .map(|c| if d == 1 { format!("y{}", c + 1) } else { format!("y{}_{}", c / d + 1, c % d + 1) })
        .collect();
    let rows: Vec<Vec<String>> = (0..x.nrows()).map(|r| x.row(r).iter().map(|v| fmt_f64(*v)).collect()).collect();
    let path = write_file(out, "samples.csv", &csv_text(&header, &rows)?)?;
    println!("wrote {} paths x {} coordinates to {}", x.nrows(), x.ncols(), path.display());
    Ok(0)
}
