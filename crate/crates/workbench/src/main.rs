use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hybridflow_core::runtime::run_worker;
use hybridflow_core::server::{default_address, ServerConfig, StreamServer};
use hybridflow_workbench::{lifecycle, methods, run_bench, Bench, BenchConfig, Harness};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "hybridflow", version, about = "Hybrid task and stream workflows")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a benchmark and write its results as CSV.
    Bench {
        /// uc1, uc2, uc3, uc4, scale or lifecycle.
        bench: Bench,
        /// TOML file overriding the bench's preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-task lifecycle CSV (lifecycle bench only).
        #[arg(long)]
        tasks_out: Option<PathBuf>,
    },
    /// Print the simulated makespans and gain of a uc1 or uc2 config.
    Predict {
        bench: Bench,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a stream server. The address defaults to DS_SERVER_HOST:DS_SERVER_PORT.
    Server {
        #[arg(long)]
        addr: Option<String>,
        /// Directory monitor period.
        #[arg(long, default_value_t = 200)]
        tick_ms: u64,
        /// Append-only journal that survives restarts.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Serve tasks for a master.
    Worker(WorkerArgs),
}

#[derive(clap::Args)]
struct WorkerArgs {
    #[arg(long)]
    master: String,
    #[arg(long, default_value_t = 1)]
    cores: u32,
    #[arg(long)]
    name: Option<String>,
}

fn load(bench: Bench, path: Option<&PathBuf>) -> anyhow::Result<BenchConfig> {
    Ok(match path {
        Some(p) => BenchConfig::load(bench, p)?,
        None => BenchConfig::preset(bench),
    })
}

fn bench(bench: Bench, config: Option<PathBuf>, out: Option<PathBuf>, tasks_out: Option<PathBuf>) -> anyhow::Result<bool> {
    let cfg = load(bench, config.as_ref())?;
    let report = if let Some(path) = tasks_out.filter(|_| bench == Bench::Lifecycle) {
        let h = Harness::start(&cfg)?;
        let mut rows = Vec::new();
        let r = lifecycle::bench(&h, &cfg, Some(&mut rows))?;
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["config", "task_id", "method", "analysis_ms", "schedule_ms", "execution_ms"])?;
        for (c, row) in rows {
            w.write_record([
                c,
                row.task_id.to_string(),
                row.method,
                format!("{:.6}", row.analysis_ms),
                format!("{:.6}", row.schedule_ms),
                format!("{:.6}", row.execution_ms),
            ])?;
        }
        w.flush()?;
        r
    } else {
        run_bench(bench, &cfg)?
    };
    match &out {
        Some(p) => report.write_csv(File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => report.write_csv(std::io::stdout())?,
    }
    for c in &report.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        eprintln!("{mark} {} {}", c.name, c.detail);
    }
    Ok(report.all_passed())
}

fn predict(bench: Bench, config: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load(bench, config.as_ref())?;
    let mut shapes = Vec::new();
    match bench {
        Bench::Uc1 => {
            shapes.push((cfg.config_id.clone(), hybridflow_workbench::oracle::uc1(&hybridflow_workbench::uc1::shape_of(&cfg))));
            for (id, s) in hybridflow_workbench::uc1::sweeps(&cfg) {
                shapes.push((id, hybridflow_workbench::oracle::uc1(&s)));
            }
        }
        Bench::Uc2 => {
            for &it in &cfg.iterations {
                let s = hybridflow_workbench::uc2::shape_of(&cfg, it);
                shapes.push((format!("{}-it{it}", cfg.config_id), hybridflow_workbench::oracle::uc2(&s)));
            }
        }
        other => anyhow::bail!("no prediction model for {other}"),
    }
    println!("config_id,pure_ms,hybrid_ms,gain");
    for (id, p) in shapes {
        println!("{id},{:.1},{:.1},{:.4}", p.pure_ms, p.hybrid_ms, p.gain());
    }
    Ok(())
}

fn worker(a: WorkerArgs) -> anyhow::Result<()> {
    let name = a.name.unwrap_or_else(|| format!("worker-{}", std::process::id()));
    run_worker(&a.master, &name, a.cores, methods::registry()).with_context(|| format!("master {}", a.master))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().cmd {
        Cmd::Bench {
            bench: b,
            config,
            out,
            tasks_out,
        } => bench(b, config, out, tasks_out),
        Cmd::Predict { bench, config } => predict(bench, config).map(|_| true),
        Cmd::Server { addr, tick_ms, journal } => {
            let addr = addr.unwrap_or_else(default_address);
            let config = ServerConfig {
                monitor_tick: Duration::from_millis(tick_ms.max(1)),
                journal,
                ..Default::default()
            };
            StreamServer::start(addr.as_str(), config)
                .map(|s| {
                    eprintln!("stream server listening on {}", s.local_addr());
                    s.wait();
                    true
                })
                .map_err(Into::into)
        }
        Cmd::Worker(a) => worker(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
