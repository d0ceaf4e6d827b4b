//! Command-line front end: run missions, compare controllers, check the
//! model, and inspect the resolved mission.
//!
//! Exit codes: 0 success, 1 I/O trouble, 2 configuration problems,
//! 3 a run diverged, 4 an invariant or model check failed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use uam_sim::analysis::{self, CompareReport};
use uam_sim::config::{run_one, run_pair, AppConfig, ControllerKind};
use uam_sim::sim::{write_trace_csv, RunOutcome, SimTrace};
use uam_sim::SimError;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

/// Post-settle window start used for the summary metrics, s.
const SETTLE_TIME: f64 = 10.0;

#[derive(Parser)]
#[command(
    name = "uam-sim",
    version,
    about = "Closed-loop simulation of an aerial manipulator with modular adaptive sliding-mode control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mission with one controller; write trace CSV and summary JSON.
    Simulate(SimulateArgs),
    /// Run both controllers on the same scenario; also write a comparison report.
    Compare(CompareArgs),
    /// Run the structural model checks; nonzero exit if any fails.
    Verify(VerifyArgs),
    /// Mission inspection.
    Mission {
        #[command(subcommand)]
        action: MissionAction,
    },
}

#[derive(Subcommand)]
enum MissionAction {
    /// Print the resolved mission as JSON.
    Show {
        /// Configuration file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mission duration override, s.
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for the disturbance phase when the config leaves it free.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mission duration override, s.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which controller to fly.
    #[arg(long, value_enum, default_value_t = ControllerArg::Proposed)]
    controller: ControllerArg,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the random state sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Proposed,
    Baseline,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Proposed => ControllerKind::Proposed,
            ControllerArg::Baseline => ControllerKind::Baseline,
        }
    }
}

fn main() -> ExitCode {
    // Exit quietly when the read end of a pipe closes early (e.g.
    // `uam-sim mission show | head`) instead of panicking on the
    // resulting write error; dying on SIGPIPE is the Unix convention.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Map an error to the exit-code contract. Configuration and mission
/// shape problems are operator input (2); I/O is environmental (1);
/// everything else reaching here is a broken invariant (4).
fn classify(e: &SimError) -> u8 {
    match e {
        SimError::Config(_) | SimError::InvalidMission(_) | SimError::InvalidParameter(_) => {
            EXIT_CONFIG
        }
        SimError::Io(_) => EXIT_IO,
        _ => EXIT_INVARIANT,
    }
}

fn dispatch(cli: Cli) -> uam_sim::Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare(args),
        Command::Verify(args) => verify(args),
        Command::Mission {
            action: MissionAction::Show { config, duration },
        } => mission_show(config.as_deref(), duration),
    }
}

/// Load the configuration; any failure here is an operator problem.
fn load_config(path: Option<&Path>) -> uam_sim::Result<AppConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| SimError::Config(format!("cannot read {}: {e}", p.display())))?;
            AppConfig::from_json(&text)
        }
        None => Ok(AppConfig::default()),
    }
}

fn write_outputs(out: &Path, stem: &str, trace: &SimTrace) -> uam_sim::Result<()> {
    std::fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{stem}.csv"));
    let mut w = BufWriter::new(File::create(&csv_path)?);
    write_trace_csv(trace, &mut w)?;
    w.flush()?;

    let summary = analysis::summarize(trace, SETTLE_TIME)?;
    let json_path = out.join(format!("{stem}_summary.json"));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn report_outcome(trace: &SimTrace) -> ExitCode {
    match &trace.outcome {
        RunOutcome::Completed => ExitCode::SUCCESS,
        RunOutcome::Diverged { t, reason } => {
            eprintln!("run diverged at t = {t:.3} s: {reason}");
            ExitCode::from(EXIT_DIVERGED)
        }
    }
}

fn simulate(args: SimulateArgs) -> uam_sim::Result<ExitCode> {
    let cfg = load_config(args.common.config.as_deref())?;
    let kind: ControllerKind = args.controller.into();
    let trace = run_one(&cfg, args.common.seed, args.common.duration, kind)?;
    let stem = match kind {
        ControllerKind::Proposed => "proposed_trace",
        ControllerKind::Baseline => "baseline_trace",
    };
    write_outputs(&args.common.out, stem, &trace)?;
    Ok(report_outcome(&trace))
}

fn write_compare_csv(report: &CompareReport, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "channel,proposed_rms,baseline_rms,reduction_pct")?;
    let row = |w: &mut dyn Write, name: &str, p: f64, b: f64, red: f64| {
        writeln!(w, "{name},{p:e},{b:e},{red:e}")
    };
    let labels = ["x", "y", "z"];
    for i in 0..3 {
        row(
            w,
            &format!("position_{}", labels[i]),
            report.proposed_rms.position[i],
            report.baseline_rms.position[i],
            report.reduction_pct.position[i],
        )?;
    }
    let att = ["roll", "pitch", "yaw"];
    for i in 0..3 {
        row(
            w,
            &format!("attitude_{}", att[i]),
            report.proposed_rms.attitude[i],
            report.baseline_rms.attitude[i],
            report.reduction_pct.attitude[i],
        )?;
    }
    for (i, (p, b)) in report
        .proposed_rms
        .arm
        .iter()
        .zip(report.baseline_rms.arm.iter())
        .enumerate()
    {
        row(
            w,
            &format!("arm_{}", i + 1),
            *p,
            *b,
            report.reduction_pct.arm[i],
        )?;
    }
    row(
        w,
        "position_norm",
        report.proposed_position_rms,
        report.baseline_position_rms,
        report.position_reduction_pct,
    )?;
    Ok(())
}

fn compare(args: CompareArgs) -> uam_sim::Result<ExitCode> {
    let cfg = load_config(args.common.config.as_deref())?;
    let (proposed, baseline) = run_pair(&cfg, args.common.seed, args.common.duration)?;
    write_outputs(&args.common.out, "proposed_trace", &proposed)?;
    write_outputs(&args.common.out, "baseline_trace", &baseline)?;

    let p_code = report_outcome(&proposed);
    let b_code = report_outcome(&baseline);
    if p_code != ExitCode::SUCCESS || b_code != ExitCode::SUCCESS {
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }

    let t_end = proposed.duration;
    let report = analysis::compare_traces(&proposed, &baseline, SETTLE_TIME, t_end)?;
    std::fs::create_dir_all(&args.common.out)?;
    let csv_path = args.common.out.join("compare.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    write_compare_csv(&report, &mut w)?;
    w.flush()?;
    let json_path = args.common.out.join("compare.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    println!(
        "position RMS (norm): proposed {:.4} m, baseline {:.4} m, reduction {:.1} %",
        report.proposed_position_rms, report.baseline_position_rms, report.position_reduction_pct
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(args: VerifyArgs) -> uam_sim::Result<ExitCode> {
    let cfg = load_config(args.config.as_deref())?;
    let checks = analysis::verify_model(&cfg.params, args.seed)?;
    let mut all_ok = true;
    for c in &checks {
        let status = if c.passed { "ok  " } else { "FAIL" };
        println!("[{status}] {} — {}", c.name, c.detail);
        all_ok &= c.passed;
    }
    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    })
}

fn mission_show(config: Option<&Path>, duration: Option<f64>) -> uam_sim::Result<ExitCode> {
    let cfg = load_config(config)?;
    let sc = cfg.scenario(0, duration)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&sc.mission).expect("mission serializes")
    );
    Ok(ExitCode::SUCCESS)
}
