use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hbci_core::robot::{log_from_jsonl, log_to_jsonl, replay};
use hbci_core::runner::{decode_file, run_offline, EvaluationReport, MethodAccuracy, OfflineOptions, WindowPlan};
use hbci_core::AppConfig;
use hbci_gateway::ServeOptions;

#[derive(Parser)]
#[command(name = "hbci", version, about = "Hybrid SSVEP + P300 BCI simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize sessions, store them as EDF and decode them.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sessions: Option<u32>,
        #[arg(long)]
        out_edf: Option<PathBuf>,
        /// Report path; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Robot command log as JSON lines.
        #[arg(long)]
        command_log: Option<PathBuf>,
        /// Include wall-clock decode timings in the report.
        #[arg(long)]
        timings: bool,
    },
    /// Decode a recorded EDF file.
    Decode {
        #[arg(long)]
        in_edf: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Explicit analysis window `START:END` in seconds; repeatable.
        /// Defaults to the protocol's focus windows.
        #[arg(long = "window", value_parser = parse_window)]
        windows: Vec<(f64, f64)>,
        #[arg(long)]
        timings: bool,
    },
    /// Print accuracy tables for one or more reports.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        report: Vec<PathBuf>,
    },
    /// Run the live loop behind the WebSocket gateway.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the configured gateway port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many decision windows.
        #[arg(long)]
        max_windows: Option<usize>,
    },
    /// Replay a command log and print the final pose.
    Replay {
        #[arg(long)]
        command_log: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(format!("window {a}:{b} must have start < end"));
    }
    Ok((a, b))
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None => Ok(AppConfig::default()),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pct(m: &MethodAccuracy) -> String {
    if m.total == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * m.accuracy)
    }
}

fn add(a: &mut MethodAccuracy, b: &MethodAccuracy) {
    a.correct += b.correct;
    a.decided += b.decided;
    a.total += b.total;
    a.accuracy = if a.total > 0 {
        a.correct as f64 / a.total as f64
    } else {
        0.0
    };
}

fn evaluate(paths: &[PathBuf]) -> Result<()> {
    let zero = MethodAccuracy {
        correct: 0,
        decided: 0,
        total: 0,
        accuracy: 0.0,
    };
    let mut pooled = [zero; 3];
    let mut scored = 0;
    println!(
        "{:<32} {:<6} {:>7} {:>7} {:>5} {:>8}",
        "report", "method", "correct", "decided", "total", "accuracy"
    );
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let report = EvaluationReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))?;
        let name = p
            .file_name()
            .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        let Some(acc) = report.accuracy else {
            println!("{name:<32} (no ground truth, {} windows)", report.windows.len());
            continue;
        };
        scored += 1;
        for (i, (method, m)) in [("ssvep", &acc.ssvep), ("p300", &acc.p300), ("fused", &acc.fused)]
            .into_iter()
            .enumerate()
        {
            println!(
                "{name:<32} {method:<6} {:>7} {:>7} {:>5} {:>8}",
                m.correct,
                m.decided,
                m.total,
                pct(m)
            );
            add(&mut pooled[i], m);
        }
    }
    if scored == 0 {
        bail!("no report has ground truth to score");
    }
    if paths.len() > 1 {
        for (method, m) in ["ssvep", "p300", "fused"].iter().zip(&pooled) {
            println!(
                "{:<32} {method:<6} {:>7} {:>7} {:>5} {:>8}",
                "(all)",
                m.correct,
                m.decided,
                m.total,
                pct(m)
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Simulate {
            config,
            seed,
            sessions,
            out_edf,
            report,
            command_log,
            timings,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut opts = OfflineOptions::new(seed.unwrap_or(cfg.synth.seed));
            opts.sessions = sessions;
            opts.timings = timings;
            let run = run_offline(&cfg, &opts)?;
            if let Some(p) = &out_edf {
                fs::write(p, &run.edf).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = &command_log {
                fs::write(p, log_to_jsonl(&run.command_log)).with_context(|| format!("writing {}", p.display()))?;
            }
            for w in &run.report.warnings {
                eprintln!("warning: {w}");
            }
            write_out(report.as_deref(), &run.report.to_json())
        }
        Cmd::Decode {
            in_edf,
            config,
            report,
            windows,
            timings,
        } => {
            let cfg = load_config(config.as_deref())?;
            let plan = if windows.is_empty() {
                WindowPlan::Protocol
            } else {
                WindowPlan::Explicit(windows)
            };
            let r =
                decode_file(&in_edf, &cfg, &plan, timings).with_context(|| format!("decoding {}", in_edf.display()))?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            write_out(report.as_deref(), &r.to_json())
        }
        Cmd::Evaluate { report } => evaluate(&report),
        Cmd::Serve {
            config,
            port,
            host,
            seed,
            max_windows,
        } => {
            let cfg = load_config(config.as_deref())?;
            let addr = SocketAddr::new(host, port.unwrap_or(cfg.gateway.port));
            let mut opts = ServeOptions::new(addr, seed.unwrap_or(cfg.synth.seed));
            opts.max_windows = max_windows;
            let rt = tokio::runtime::Runtime::new()?;
            let summary = rt.block_on(async {
                let g = hbci_gateway::start(cfg, opts).await?;
                eprintln!("listening on {}", g.addr());
                anyhow::Ok(g.run_until_stopped().await?)
            })?;
            eprintln!(
                "{} windows decided, robot at ({}, {}) facing {:?}",
                summary.decisions.iter().filter(|d| d.decision.is_some()).count(),
                summary.robot.x,
                summary.robot.y,
                summary.robot.heading
            );
            Ok(())
        }
        Cmd::Replay { command_log } => {
            let text =
                fs::read_to_string(&command_log).with_context(|| format!("reading {}", command_log.display()))?;
            let log = log_from_jsonl(&text)?;
            let s = replay(&log);
            let pose = serde_json::json!({"x": s.x, "y": s.y, "heading": s.heading, "commands": log.len()});
            println!("{pose}");
            Ok(())
        }
        Cmd::Config => {
            println!("{}", AppConfig::default().to_json_pretty().trim_end());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
