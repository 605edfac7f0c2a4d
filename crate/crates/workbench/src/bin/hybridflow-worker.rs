//! Worker process: connects to a master and runs the tasks it is sent.

use anyhow::Context;
use clap::Parser;
use hybridflow_core::runtime::run_worker;
use hybridflow_workbench::methods;

#[derive(Parser)]
#[command(name = "hybridflow-worker", version, about = "Run tasks for a hybridflow master")]
struct Args {
    /// Master address as host:port.
    #[arg(long)]
    master: String,
    #[arg(long, default_value_t = 1)]
    cores: u32,
    #[arg(long)]
    name: Option<String>,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let a = Args::parse();
    let name = a.name.unwrap_or_else(|| format!("worker-{}", std::process::id()));
    run_worker(&a.master, &name, a.cores, methods::registry()).with_context(|| format!("master {}", a.master))
}
