//! Use-case workflows and benchmarks built on the hybrid runtime, with a
//! discrete-event oracle for the expected gains.

pub mod config;
pub mod gain;
pub mod harness;
pub mod lifecycle;
pub mod methods;
pub mod oracle;
pub mod report;
pub mod scale;
pub mod uc1;
pub mod uc2;
pub mod uc3;
pub mod uc4;
pub mod work;

pub use config::{Bench, BenchConfig, Mode};
pub use harness::{BenchError, BenchResult, Harness};
pub use report::Report;

/// Runs one bench with its config and returns the CSV rows and checks.
pub fn run_bench(bench: Bench, cfg: &BenchConfig) -> BenchResult<Report> {
    let h = Harness::start(cfg)?;
    match bench {
        Bench::Uc1 => uc1::bench(&h, cfg),
        Bench::Uc2 => uc2::bench(&h, cfg),
        Bench::Uc3 => uc3::bench(&h, cfg),
        Bench::Uc4 => uc4::bench(&h, cfg),
        Bench::Scale => scale::bench(&h, cfg),
        Bench::Lifecycle => lifecycle::bench(&h, cfg, None),
    }
}
