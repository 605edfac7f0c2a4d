//! Small, fast runs of each workflow against their conservation checks.

use hybridflow_workbench::config::{Bench, BenchConfig, Mode};
use hybridflow_workbench::harness::Harness;
use hybridflow_workbench::oracle::Uc1Shape;
use hybridflow_workbench::{scale, uc1, uc2, uc3, uc4};

fn preset(bench: Bench, overlay: &str) -> BenchConfig {
    BenchConfig::preset(bench).overlay_toml(overlay).unwrap()
}

#[test]
fn overlay_replaces_only_given_keys() {
    let cfg = preset(Bench::Uc1, "num_files = 7\nprocess_time_ms = 12.5\n");
    let base = BenchConfig::preset(Bench::Uc1);
    assert_eq!(cfg.num_files, 7);
    assert_eq!(cfg.process_time_ms, 12.5);
    assert_eq!(cfg.workers, base.workers);
    assert_eq!(cfg.generation_sweep_ms, base.generation_sweep_ms);
    assert!(BenchConfig::preset(Bench::Uc1).overlay_toml("no_such_key = 1").is_err());
    assert!(BenchConfig::preset(Bench::Uc1).overlay_toml("workers = 0").is_err());
    assert_eq!(preset(Bench::Uc2, "mode = \"HYBRID\"").modes(), vec![Mode::Hybrid]);
}

#[test]
fn uc1_small_run_conserves_every_file() {
    let cfg = BenchConfig::preset(Bench::Uc1);
    let h = Harness::start(&cfg).unwrap();
    let shape = Uc1Shape {
        num_sims: 2,
        num_files: 4,
        generation_ms: 5.0,
        process_ms: 10.0,
        merge_ms: 0.0,
        sim_cores: 1,
        workers: vec![3],
    };
    for mode in [Mode::PureTask, Mode::Hybrid] {
        let r = uc1::run_once(&h, &shape, 64, mode).unwrap();
        assert!(r.conserved(&shape), "{mode}: {:?}", r.merged);
    }
}

#[test]
fn uc2_small_run_completes_every_iteration() {
    let cfg = preset(Bench::Uc2, "init_time_ms = 2.0\niteration_time_ms = 2.0\nexchange_time_ms = 1.0");
    let h = Harness::start(&cfg).unwrap();
    let s = uc2::shape_of(&cfg, 5);
    for mode in [Mode::PureTask, Mode::Hybrid] {
        assert!(uc2::run_once(&h, &s, mode).unwrap().complete(&s), "{mode}");
    }
}

#[test]
fn uc3_delivers_exactly_once_and_survives_a_crash() {
    let cfg = preset(Bench::Uc3, "payloads = 40\nfilters = 3");
    let h = Harness::start(&cfg).unwrap();
    let r = uc3::run_once(&h, &cfg, false).unwrap();
    assert!(r.exactly_once(), "{:?}", r.tally);
    let r = uc3::run_once(&h, &cfg, true).unwrap();
    assert!(r.at_least_once(), "{:?}", r.tally);
}

#[test]
fn uc4_spawns_one_subtask_per_batch() {
    let cfg = preset(Bench::Uc4, "sensor_gap_ms = 0.5");
    let h = Harness::start(&cfg).unwrap();
    for (payloads, batch) in [(100, 10), (105, 10), (7, 1), (3, 10)] {
        let r = uc4::run_once(&h, &cfg, payloads, batch).unwrap();
        assert_eq!(r.spawned, payloads.div_ceil(batch), "{payloads}/{batch}");
        assert!(r.conserved(), "{payloads}/{batch}: {:?}", r.summary);
    }
}

#[test]
fn scale_reads_every_element_once() {
    let cfg = preset(Bench::Scale, "elements = 30\nprocess_time_ms = 2.0\ngeneration_time_ms = 0.5");
    let h = Harness::start(&cfg).unwrap();
    for (w, r) in [(1, 1), (1, 3), (2, 2)] {
        let run = scale::run_once(&h, &cfg, w, r).unwrap();
        assert!(run.conserved(), "w{w} r{r}");
        assert_eq!(run.balance().total(), 30);
        assert!(run.first_reader().is_some());
    }
}
