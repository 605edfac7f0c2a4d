use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hybridflow_core::runtime::worker::Worker;
use hybridflow_core::runtime::{
    pick_next, Candidate, DependencyGraph, Direction, LifecycleReport, MethodRegistry, ParamRef, ParamSpec,
    ParamType, ResourceState, Runtime, RuntimeConfig, RuntimeError, SchedulerPolicy, TaskError, TaskState,
    TraceKind,
};
use hybridflow_core::server::{ServerConfig, StreamServer};
use hybridflow_core::stream::{StreamHandle, StreamOptions};
use hybridflow_core::types::{ConsumerMode, StreamKind};
use proptest::prelude::*;

fn server() -> StreamServer {
    StreamServer::start(
        "127.0.0.1:0",
        ServerConfig {
            monitor_tick: Duration::from_millis(10),
            ..Default::default()
        },
    )
    .unwrap()
}

fn handle(id: &str) -> StreamHandle {
    StreamHandle {
        id: id.into(),
        alias: None,
        kind: StreamKind::Object,
        base_dir: None,
        consumer_mode: ConsumerMode::ExactlyOnce,
        group: None,
    }
}

fn methods() -> MethodRegistry {
    let mut reg = MethodRegistry::new();
    reg.register("inc", |ctx| {
        let v: i64 = ctx.input_as(0)?;
        ctx.set_output_as(1, &(v + 1))
    });
    reg.register("inc_inplace", |ctx| {
        let v: i64 = ctx.input_as(0)?;
        ctx.set_output_as(0, &(v + 1))
    });
    reg.register("sleep", |ctx| {
        let ms: u64 = ctx.input_as(0)?;
        std::thread::sleep(Duration::from_millis(ms));
        Ok(())
    });
    reg.register("fail", |_| Err(TaskError::msg("always fails")));
    reg.register("produce", |ctx| {
        let n: u32 = ctx.input_as(0)?;
        let gap: u64 = ctx.input_as(1)?;
        let s = ctx.stream(2)?;
        for i in 0..n {
            std::thread::sleep(Duration::from_millis(gap));
            s.publish_json(&i)?;
        }
        Ok(())
    });
    reg.register("consume", |ctx| {
        let s = ctx.stream(0)?;
        let mut got = Vec::new();
        loop {
            let out = s.poll_outcome(Some(Duration::from_millis(200)))?;
            for e in out.elements {
                got.push(serde_json::from_slice::<u32>(&e.payload)?);
            }
            if out.drained {
                break;
            }
        }
        got.sort();
        ctx.set_output_as(1, &got)
    });
    reg
}

fn local(n: usize, cores: u32) -> Runtime {
    Runtime::start(RuntimeConfig::local(n, cores), methods()).unwrap()
}

fn with_streams(s: &StreamServer, n: usize, cores: u32) -> Runtime {
    let cfg = RuntimeConfig::local(n, cores).with_stream_server(s.local_addr());
    Runtime::start(cfg, methods()).unwrap()
}

fn wait_until(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + limit;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    f()
}

// ---- dependency analysis against a brute-force oracle ----

#[derive(Debug, Clone)]
enum P {
    Data(ParamType, Direction, u64),
    Stream(Direction, u8),
}

fn param() -> impl Strategy<Value = P> {
    let dir = prop_oneof![Just(Direction::In), Just(Direction::Out), Just(Direction::InOut)];
    let sdir = prop_oneof![Just(Direction::In), Just(Direction::Out)];
    let ptype = prop_oneof![Just(ParamType::Object), Just(ParamType::File)];
    prop_oneof![
        3 => (ptype, dir, 1u64..=6).prop_map(|(t, d, x)| P::Data(t, d, x)),
        1 => (sdir, 0u8..3).prop_map(|(d, s)| P::Stream(d, s)),
    ]
}

fn program() -> impl Strategy<Value = Vec<Vec<P>>> {
    prop::collection::vec(prop::collection::vec(param(), 0..4), 0..=12)
}

fn to_specs(task: &[P]) -> Vec<ParamSpec> {
    task.iter()
        .map(|p| match p {
            P::Data(t, d, x) => ParamSpec::new(*t, *d, ParamRef::Data(*x)),
            P::Stream(d, s) => ParamSpec::new(ParamType::Stream, *d, ParamRef::Stream(handle(&format!("s{s}")))),
        })
        .collect()
}

/// For each read, the closest earlier task writing the same data.
fn oracle_edges(prog: &[Vec<P>]) -> BTreeSet<(u64, u64, u64)> {
    let mut edges = BTreeSet::new();
    for (j, task) in prog.iter().enumerate() {
        for p in task {
            let P::Data(_, dir, d) = p else { continue };
            if !matches!(dir, Direction::In | Direction::InOut) {
                continue;
            }
            let writer = (0..j).rev().find(|&i| {
                prog[i]
                    .iter()
                    .any(|q| matches!(q, P::Data(_, Direction::Out | Direction::InOut, e) if e == d))
            });
            if let Some(i) = writer {
                edges.insert((i as u64 + 1, j as u64 + 1, *d));
            }
        }
    }
    edges
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn edges_match_the_last_writer_oracle(prog in program()) {
        let mut g = DependencyGraph::new();
        for (i, task) in prog.iter().enumerate() {
            g.add_task(i as u64 + 1, &to_specs(task)).unwrap();
        }
        let got: BTreeSet<_> = g.edges().iter().map(|e| (e.from, e.to, e.data)).collect();
        prop_assert_eq!(&got, &oracle_edges(&prog));
        // acyclic: every edge points forward in submission order
        prop_assert!(got.iter().all(|(f, t, _)| f < t));
        let writers = prog.iter().flatten().filter(|p| matches!(p, P::Stream(Direction::Out, _))).count();
        prop_assert_eq!(g.stream_writers().len(), writers);
    }
}

// ---- placement policy ----

fn contention() -> impl Strategy<Value = (Vec<Candidate>, Vec<ResourceState>)> {
    let cand = (1u32..=2, prop::collection::vec(0u64..4, 0..3), prop::option::of(0u8..2), prop::option::of(0u8..2));
    (prop::collection::vec(cand, 1..6), prop::collection::vec((1u32..=3, 0u32..=3, 0u8..3), 1..4)).prop_map(
        |(cands, workers)| {
            let cands = cands
                .into_iter()
                .enumerate()
                .map(|(i, (cores, in_data, sin, sout))| Candidate {
                    task_id: i as u64 + 1,
                    cores,
                    in_data,
                    stream_in: sin.map(|s| format!("s{s}")).into_iter().collect(),
                    stream_out: sout.map(|s| format!("s{s}")).into_iter().collect(),
                    avoid: None,
                })
                .collect();
            let workers = workers
                .into_iter()
                .enumerate()
                .map(|(w, (total, free, hist))| {
                    let mut r = ResourceState::new(w, format!("w{w}"), total);
                    r.free_cores = free.min(total);
                    r.data_locations.insert(w as u64);
                    if hist > 0 {
                        r.stream_producer_history.insert(format!("s{}", hist - 1));
                    }
                    r
                })
                .collect();
            (cands, workers)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn placement_invariants((cands, workers) in contention(), k in 0.1f64..50.0) {
        let policy = SchedulerPolicy::default();
        let pick = pick_next(&cands, &workers, &policy);
        if let Some((t, w)) = pick {
            let c = cands.iter().find(|c| c.task_id == t).unwrap();
            // fits
            prop_assert!(workers[w].free_cores >= c.cores);
            // never a consumer while a ready task produces its stream
            prop_assert!(!cands.iter().any(|p| p.task_id != t && p.stream_out.iter().any(|s| c.stream_in.contains(s))));
            // a consumer goes to a free history worker when one exists
            let history_free = workers.iter().any(|r| {
                r.free_cores >= c.cores && c.stream_in.iter().any(|s| r.stream_producer_history.contains(s))
            });
            let no_data_pull = c.in_data.is_empty();
            if history_free && no_data_pull {
                prop_assert!(c.stream_in.iter().any(|s| workers[w].stream_producer_history.contains(s)));
            }
        } else {
            // nothing undominated fits anywhere
            for c in &cands {
                let dominated = cands.iter().any(|p| p.task_id != c.task_id && p.stream_out.iter().any(|s| c.stream_in.contains(s)));
                prop_assert!(dominated || workers.iter().all(|r| r.free_cores < c.cores));
            }
        }
        let scaled = SchedulerPolicy { data_weight: policy.data_weight * k, stream_weight: policy.stream_weight * k };
        prop_assert_eq!(pick_next(&cands, &workers, &scaled), pick);
    }
}

// ---- execution and synchronization ----

#[test]
fn chains_produce_values_and_locations() {
    let rt = local(2, 1);
    let x = rt.put_json(&1i64);
    let y = rt.new_object();
    let t1 = rt.submit("inc", vec![ParamSpec::object_in(x), ParamSpec::object_out(y)]).unwrap();
    rt.submit("inc_inplace", vec![ParamSpec::object_inout(y)]).unwrap();
    rt.submit("inc_inplace", vec![ParamSpec::object_inout(y)]).unwrap();
    assert_eq!(rt.wait_on_as::<i64>(y).unwrap(), 4);
    assert_eq!(rt.wait_on_as::<i64>(x).unwrap(), 1);
    let w = rt.task_worker(3).unwrap();
    assert!(rt.workers()[w].data_locations.contains(&y));
    assert_eq!(rt.workers().iter().filter(|r| r.data_locations.contains(&y)).count(), 1);
    let d = rt.task(t1).unwrap();
    assert_eq!(d.state, TaskState::Done);
    assert!(d.timings.analysis_ms.is_some() && d.timings.schedule_ms.is_some() && d.timings.execution_ms.is_some());
}

#[test]
fn submission_errors() {
    let rt = local(1, 2);
    assert!(matches!(rt.submit("nope", vec![]), Err(RuntimeError::UnknownMethod(_))));
    let bad = ParamSpec::new(ParamType::Stream, Direction::InOut, ParamRef::Stream(handle("s")));
    assert!(matches!(rt.submit("sleep", vec![bad]), Err(RuntimeError::InvalidAnnotation(_))));
    assert!(matches!(
        rt.submit("sleep", vec![ParamSpec::stream_in(&handle("s"))]),
        Err(RuntimeError::NoStreamServer)
    ));
    assert!(matches!(
        rt.submit_with("sleep", vec![ParamSpec::value(b"1".to_vec())], 3),
        Err(RuntimeError::NoWorkerFits { cores: 3 })
    ));
    let never = rt.new_object();
    assert!(matches!(rt.wait_on(never), Err(RuntimeError::UnknownData(_))));
    assert!(matches!(rt.wait_on(999), Err(RuntimeError::UnknownData(999))));
    assert!(matches!(
        rt.submit("inc", vec![ParamSpec::object_in(never), ParamSpec::object_out(never)]),
        Err(RuntimeError::UnknownData(_))
    ));
    assert!(rt.graph().nodes().is_empty());
}

#[test]
fn one_time_fault_is_retried_on_another_worker() {
    let attempts = Arc::new(AtomicU32::new(0));
    let mut reg = methods();
    let a = attempts.clone();
    reg.register("flaky", move |ctx| {
        if a.fetch_add(1, Ordering::SeqCst) == 0 {
            return Err(TaskError::msg("transient"));
        }
        ctx.set_output_as(0, &7i64)
    });
    let rt = Runtime::start(RuntimeConfig::local(2, 1), reg).unwrap();
    let out = rt.new_object();
    let t = rt.submit("flaky", vec![ParamSpec::object_out(out)]).unwrap();
    assert_eq!(rt.wait_on_as::<i64>(out).unwrap(), 7);
    assert_eq!(attempts.load(Ordering::SeqCst), 2);
    assert_eq!(rt.task_state(t), Some(TaskState::Done));
    let trace = rt.trace();
    let workers: Vec<usize> = trace.iter().filter(|e| e.kind == TraceKind::Scheduled).map(|e| e.worker).collect();
    assert_eq!(workers.len(), 2);
    assert_ne!(workers[0], workers[1]);
    assert!(trace.iter().any(|e| e.kind == TraceKind::Retry));
}

#[test]
fn repeated_fault_fails_every_descendant_and_nothing_else() {
    let rt = local(2, 1);
    let a = rt.new_object();
    let b = rt.new_object();
    let c = rt.new_object();
    let ok = rt.put_json(&0i64);
    let unrelated = rt.new_object();
    // graph: fail -> a -> b -> c, plus an unrelated chain
    let t1 = rt.submit("fail", vec![ParamSpec::object_out(a)]).unwrap();
    let t2 = rt.submit("inc", vec![ParamSpec::object_in(a), ParamSpec::object_out(b)]).unwrap();
    let t3 = rt.submit("inc", vec![ParamSpec::object_in(b), ParamSpec::object_out(c)]).unwrap();
    let t4 = rt.submit("inc", vec![ParamSpec::object_in(ok), ParamSpec::object_out(unrelated)]).unwrap();
    rt.barrier();
    // reachability oracle over the recorded edges
    let edges: Vec<(u64, u64)> = rt.graph().edges().iter().map(|e| (e.from, e.to)).collect();
    let mut reach = BTreeSet::from([t1]);
    loop {
        let before = reach.len();
        for (f, t) in &edges {
            if reach.contains(f) {
                reach.insert(*t);
            }
        }
        if reach.len() == before {
            break;
        }
    }
    for t in [t1, t2, t3, t4] {
        let expect = if reach.contains(&t) { TaskState::Failed } else { TaskState::Done };
        assert_eq!(rt.task_state(t), Some(expect), "task {t}");
    }
    // dependents never started
    let scheduled: BTreeSet<u64> = rt.trace().iter().filter(|e| e.kind == TraceKind::Scheduled).map(|e| e.task_id).collect();
    assert!(!scheduled.contains(&t2) && !scheduled.contains(&t3));
    match rt.wait_on(c) {
        Err(RuntimeError::ExecutionFailure { task, .. }) => assert_eq!(task, t1),
        other => panic!("expected a propagated failure, got {other:?}"),
    }
    // late submissions depending on failed data fail immediately
    let late = rt.submit("inc", vec![ParamSpec::object_in(c), ParamSpec::object_out(rt.new_object())]).unwrap();
    assert_eq!(rt.task_state(late), Some(TaskState::Failed));
    assert_eq!(rt.wait_on_as::<i64>(unrelated).unwrap(), 1);
}

#[test]
fn barrier_waits_for_the_slowest_task() {
    let rt = local(4, 4);
    let t0 = Instant::now();
    rt.barrier();
    assert!(t0.elapsed() < Duration::from_millis(50));
    for i in 0..10u64 {
        rt.submit("sleep", vec![ParamSpec::value(serde_json::to_vec(&(10 + i * 10)).unwrap())]).unwrap();
    }
    let t0 = Instant::now();
    rt.barrier();
    assert!(t0.elapsed() >= Duration::from_millis(90));
    assert!(rt.graph().nodes().iter().all(|t| rt.task_state(*t) == Some(TaskState::Done)));
}

#[test]
fn consumer_of_a_stream_without_producer_blocks_the_barrier() {
    let s = server();
    let rt = with_streams(&s, 1, 2);
    let st = rt.create_stream(StreamKind::Object, StreamOptions::default()).unwrap();
    let out = rt.new_object();
    let t = rt.submit("consume", vec![ParamSpec::stream_in(st.handle()), ParamSpec::object_out(out)]).unwrap();
    assert!(!rt.barrier_timeout(Duration::from_millis(300)));
    assert_eq!(rt.task_state(t), Some(TaskState::Running));
    // closing from the main program releases it
    st.close().unwrap();
    assert!(rt.barrier_timeout(Duration::from_secs(5)));
    assert_eq!(rt.wait_on_as::<Vec<u32>>(out).unwrap(), Vec::<u32>::new());
}

#[test]
fn writer_failed_at_submission_still_closes_its_stream() {
    let s = server();
    let rt = with_streams(&s, 1, 2);
    let a = rt.new_object();
    rt.submit("fail", vec![ParamSpec::object_out(a)]).unwrap();
    rt.barrier();
    let st = rt.create_stream(StreamKind::Object, StreamOptions::default()).unwrap();
    // the extra failed input makes the writer fail before it ever runs
    let w = rt
        .submit(
            "produce",
            vec![
                ParamSpec::value(b"3".to_vec()),
                ParamSpec::value(b"0".to_vec()),
                ParamSpec::stream_out(st.handle()),
                ParamSpec::object_in(a),
            ],
        )
        .unwrap();
    assert_eq!(rt.task_state(w), Some(TaskState::Failed));
    let out = rt.new_object();
    rt.submit("consume", vec![ParamSpec::stream_in(st.handle()), ParamSpec::object_out(out)]).unwrap();
    assert!(rt.barrier_timeout(Duration::from_secs(5)));
    assert_eq!(rt.wait_on_as::<Vec<u32>>(out).unwrap(), Vec::<u32>::new());
}

#[test]
fn stream_consumer_runs_while_its_producer_runs() {
    let s = server();
    let rt = with_streams(&s, 2, 1);
    let st = rt.create_stream(StreamKind::Object, StreamOptions::default()).unwrap();
    let out = rt.new_object();
    let p = rt
        .submit(
            "produce",
            vec![
                ParamSpec::value(b"20".to_vec()),
                ParamSpec::value(b"10".to_vec()),
                ParamSpec::stream_out(st.handle()),
            ],
        )
        .unwrap();
    let c = rt.submit("consume", vec![ParamSpec::stream_in(st.handle()), ParamSpec::object_out(out)]).unwrap();
    assert!(rt.graph().edges().is_empty());
    assert!(wait_until(Duration::from_secs(2), || {
        rt.task_state(p) == Some(TaskState::Running) && rt.task_state(c) == Some(TaskState::Running)
    }));
    // the producer's grant is closed when it finishes, draining the consumer
    assert_eq!(rt.wait_on_as::<Vec<u32>>(out).unwrap(), (0..20).collect::<Vec<_>>());
    assert_eq!(rt.task_state(p), Some(TaskState::Done));
}

#[test]
fn producer_takes_the_last_slot_before_its_consumer() {
    let s = server();
    let rt = with_streams(&s, 1, 1);
    let st = rt.create_stream(StreamKind::Object, StreamOptions::default()).unwrap();
    // occupy the only slot so both stream tasks become ready together
    rt.submit("sleep", vec![ParamSpec::value(b"100".to_vec())]).unwrap();
    let out = rt.new_object();
    let c = rt.submit("consume", vec![ParamSpec::stream_in(st.handle()), ParamSpec::object_out(out)]).unwrap();
    let p = rt
        .submit(
            "produce",
            vec![
                ParamSpec::value(b"3".to_vec()),
                ParamSpec::value(b"0".to_vec()),
                ParamSpec::stream_out(st.handle()),
            ],
        )
        .unwrap();
    rt.barrier();
    let at = |t| rt.trace().iter().find(|e| e.task_id == t && e.kind == TraceKind::Scheduled).unwrap().at_ms;
    assert!(at(p) < at(c));
    assert_eq!(rt.wait_on_as::<Vec<u32>>(out).unwrap(), vec![0, 1, 2]);
}

#[test]
fn consumers_follow_the_producer_worker() {
    let s = server();
    let rt = with_streams(&s, 3, 2);
    let st = rt.create_stream(StreamKind::Object, StreamOptions::default()).unwrap();
    let p = rt
        .submit(
            "produce",
            vec![
                ParamSpec::value(b"5".to_vec()),
                ParamSpec::value(b"20".to_vec()),
                ParamSpec::stream_out(st.handle()),
            ],
        )
        .unwrap();
    let c = rt
        .submit("consume", vec![ParamSpec::stream_in(st.handle()), ParamSpec::object_out(rt.new_object())])
        .unwrap();
    rt.barrier();
    assert_eq!(rt.task_worker(p), rt.task_worker(c));
    assert!(rt.workers()[rt.task_worker(p).unwrap()].stream_producer_history.contains(st.id()));
}

#[test]
fn cores_are_never_oversubscribed() {
    let rt = local(2, 3);
    for i in 0..30u64 {
        let cores = 1 + (i % 3) as u32;
        rt.submit_with("sleep", vec![ParamSpec::value(serde_json::to_vec(&(2 + i % 5)).unwrap())], cores)
            .unwrap();
    }
    rt.barrier();
    let cores: HashMap<u64, u32> =
        rt.graph().nodes().iter().map(|t| (*t, rt.task(*t).unwrap().cores_required)).collect();
    let mut used = [0u32; 2];
    for e in rt.trace() {
        match e.kind {
            TraceKind::Scheduled => used[e.worker] += cores[&e.task_id],
            TraceKind::Done | TraceKind::Failed | TraceKind::Retry => used[e.worker] -= cores[&e.task_id],
        }
        assert!(used[e.worker] <= 3);
    }
    assert!(rt.workers().iter().all(|w| w.free_cores == w.total_cores));
}

#[test]
fn lifecycle_report_has_rows_and_aggregates() {
    let rt = local(2, 2);
    for _ in 0..100 {
        rt.submit("sleep", vec![ParamSpec::value(b"0".to_vec())]).unwrap();
    }
    rt.barrier();
    let report: LifecycleReport = rt.lifecycle();
    assert_eq!(report.rows.len(), 100);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "task_id,method,analysis_ms,schedule_ms,execution_ms");
    assert_eq!(lines.len(), 1 + 100 + 2);
    assert!(lines[101].starts_with("mean,sleep,"));
    assert!(lines[102].starts_with("stddev,sleep,"));
}

#[test]
fn nested_submission_from_inside_a_task() {
    let mut reg = methods();
    let spawned = Arc::new(AtomicUsize::new(0));
    let sp = spawned.clone();
    reg.register("fanout", move |ctx| {
        let rt = ctx.runtime().expect("in-process worker").clone();
        let mut outs = Vec::new();
        for i in 0..4i64 {
            let o = rt.new_object();
            rt.submit("inc", vec![ParamSpec::value(serde_json::to_vec(&i)?), ParamSpec::object_out(o)])?;
            sp.fetch_add(1, Ordering::SeqCst);
            outs.push(o);
        }
        let mut sum = 0i64;
        for o in outs {
            sum += rt.wait_on_as::<i64>(o)?;
        }
        ctx.set_output_as(0, &sum)
    });
    let rt = Runtime::start(RuntimeConfig::local(1, 2), reg).unwrap();
    let out = rt.new_object();
    rt.submit("fanout", vec![ParamSpec::object_out(out)]).unwrap();
    assert_eq!(rt.wait_on_as::<i64>(out).unwrap(), 1 + 2 + 3 + 4);
    assert_eq!(spawned.load(Ordering::SeqCst), 4);
}

// ---- remote workers ----

fn listening() -> Runtime {
    let cfg = RuntimeConfig {
        worker_listen: Some("127.0.0.1:0".into()),
        ..Default::default()
    };
    Runtime::start(cfg, methods()).unwrap()
}

#[test]
fn remote_workers_run_tasks() {
    let rt = listening();
    let addr = rt.worker_address().unwrap().to_string();
    let w1 = Worker::connect(&addr, "r1", 2, methods()).unwrap();
    assert!(rt.wait_for_workers(1, Duration::from_secs(2)));
    let x = rt.put_json(&41i64);
    let y = rt.new_object();
    rt.submit("inc", vec![ParamSpec::object_in(x), ParamSpec::object_out(y)]).unwrap();
    assert_eq!(rt.wait_on_as::<i64>(y).unwrap(), 42);
    assert_eq!(rt.workers()[w1.id()].name, "r1");
    rt.shutdown();
    w1.join().unwrap();
}

#[test]
fn tasks_on_a_crashed_worker_move_elsewhere() {
    let rt = listening();
    let addr = rt.worker_address().unwrap().to_string();
    let doomed = Worker::connect(&addr, "doomed", 1, methods()).unwrap();
    assert!(rt.wait_for_workers(1, Duration::from_secs(2)));
    let t = rt.submit("sleep", vec![ParamSpec::value(b"300".to_vec())]).unwrap();
    assert!(wait_until(Duration::from_secs(2), || rt.task_state(t) == Some(TaskState::Running)));
    let _spare = Worker::connect(&addr, "spare", 1, methods()).unwrap();
    doomed.kill();
    assert!(rt.barrier_timeout(Duration::from_secs(5)));
    assert_eq!(rt.task_state(t), Some(TaskState::Done));
    assert_eq!(rt.workers()[rt.task_worker(t).unwrap()].name, "spare");
    assert_eq!(rt.workers()[doomed.id()].total_cores, 0);
}

#[test]
fn remote_stream_tasks_reach_the_stream_server() {
    let s = server();
    let cfg = RuntimeConfig {
        worker_listen: Some("127.0.0.1:0".into()),
        stream_server: Some(s.local_addr().to_string()),
        ..Default::default()
    };
    let rt = Runtime::start(cfg, methods()).unwrap();
    let addr = rt.worker_address().unwrap().to_string();
    let _a = Worker::connect(&addr, "a", 1, methods()).unwrap();
    let _b = Worker::connect(&addr, "b", 1, methods()).unwrap();
    assert!(rt.wait_for_workers(2, Duration::from_secs(2)));
    let st = rt.create_stream(StreamKind::Object, StreamOptions::default()).unwrap();
    let out = rt.new_object();
    rt.submit(
        "produce",
        vec![ParamSpec::value(b"10".to_vec()), ParamSpec::value(b"5".to_vec()), ParamSpec::stream_out(st.handle())],
    )
    .unwrap();
    rt.submit("consume", vec![ParamSpec::stream_in(st.handle()), ParamSpec::object_out(out)]).unwrap();
    assert_eq!(rt.wait_on_as::<Vec<u32>>(out).unwrap(), (0..10).collect::<Vec<_>>());
}
