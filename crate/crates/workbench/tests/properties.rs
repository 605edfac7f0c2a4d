use hybridflow_workbench::gain::{gain, BalanceReport, GainError, GainReport};
use hybridflow_workbench::oracle::{self, critical_path, simulate, SimTask, Uc1Shape, Uc2Shape};
use hybridflow_workbench::report::{mean, median};
use proptest::prelude::*;

// integer-millisecond reference: the subtraction is exact before the one division
fn gain_oracle(original: i64, hybrid: i64) -> f64 {
    (original - hybrid) as f64 / original as f64
}

proptest! {
    #[test]
    fn gain_is_bit_exact_for_integer_times(o in 1i64..10_000_000, h in 0i64..20_000_000) {
        let g = gain(o as f64, h as f64).unwrap();
        prop_assert_eq!(g.to_bits(), gain_oracle(o, h).to_bits());
        let r = GainReport::new(o as f64, h as f64).unwrap();
        prop_assert_eq!(r.gain.to_bits(), g.to_bits());
        prop_assert_eq!(g > 0.0, h < o);
        prop_assert!(g <= 1.0);
    }

    #[test]
    fn zero_original_is_rejected(h in 0.0f64..1e6) {
        prop_assert_eq!(gain(0.0, h), Err(GainError::DivisionByZero));
    }

    #[test]
    fn balance_fractions_sum_to_one(counts in prop::collection::vec(0usize..1000, 1..16)) {
        let b = BalanceReport::from_counts(counts.clone());
        prop_assert_eq!(b.total(), counts.iter().sum::<usize>());
        let sum: f64 = b.fractions.iter().sum();
        if b.total() == 0 {
            prop_assert_eq!(sum, 0.0);
        } else {
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for (c, f) in counts.iter().zip(&b.fractions) {
                prop_assert_eq!(*f, *c as f64 / b.total() as f64);
            }
        }
    }

    #[test]
    fn median_and_mean_stay_within_range(xs in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let lo = xs.iter().copied().fold(f64::MAX, f64::min);
        let hi = xs.iter().copied().fold(f64::MIN, f64::max);
        for v in [mean(&xs), median(&xs)] {
            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }
}

fn dag() -> impl Strategy<Value = (Vec<SimTask>, Vec<u32>)> {
    let workers = prop::collection::vec(1u32..4, 1..4);
    (workers, prop::collection::vec((1u32..4, 0u32..50, 0u32..30, prop::collection::vec(any::<prop::sample::Index>(), 0..3)), 1..25))
        .prop_map(|(workers, raw)| {
            let max = *workers.iter().max().unwrap();
            let tasks = raw
                .into_iter()
                .enumerate()
                .map(|(i, (cores, dur, rel, deps))| {
                    let deps: Vec<usize> = if i == 0 { vec![] } else { deps.iter().map(|d| d.index(i)).collect() };
                    SimTask::new(cores.min(max), dur as f64).released_at(rel as f64).after(deps)
                })
                .collect();
            (tasks, workers)
        })
}

proptest! {
    #[test]
    fn simulated_schedules_are_feasible((tasks, workers) in dag()) {
        let s = simulate(&tasks, &workers);
        for (i, t) in tasks.iter().enumerate() {
            prop_assert!(s.start[i] >= t.release_ms);
            prop_assert_eq!(s.end[i], s.start[i] + t.duration_ms);
            for &d in &t.deps {
                prop_assert!(s.start[i] >= s.end[d]);
            }
        }
        // no worker is ever oversubscribed: check at every start instant
        for i in 0..tasks.len() {
            let at = s.start[i];
            for (w, &cap) in workers.iter().enumerate() {
                let used: u32 = (0..tasks.len())
                    .filter(|&j| s.worker[j] == w && tasks[j].duration_ms > 0.0 && s.start[j] <= at && at < s.end[j])
                    .map(|j| tasks[j].cores)
                    .sum();
                prop_assert!(used <= cap);
            }
        }
        let work: f64 = tasks.iter().map(|t| t.duration_ms * t.cores as f64).sum();
        let cores: u32 = workers.iter().sum();
        prop_assert!(s.makespan() >= critical_path(&tasks) - 1e-9);
        prop_assert!(s.makespan() >= work / cores as f64 - 1e-9);
    }

    #[test]
    fn uc1_hybrid_never_loses_and_respects_its_bound(
        files in 1usize..12, gen in 1u32..100, proc in 1u32..500, slots in 2u32..8,
    ) {
        let s = Uc1Shape {
            num_sims: 1,
            num_files: files,
            generation_ms: gen as f64,
            process_ms: proc as f64,
            merge_ms: 0.0,
            sim_cores: 1,
            workers: vec![slots],
        };
        let p = oracle::uc1(&s);
        prop_assert!(p.hybrid_ms <= p.pure_ms + 1e-9);
        prop_assert!(p.hybrid_ms >= oracle::uc1_hybrid_lower_bound(&s) - 1e-9);
    }

    #[test]
    fn uc2_gain_grows_with_iterations(it in 1usize..32, comps in 2usize..4) {
        let s = |iterations| Uc2Shape {
            computations: comps,
            iterations,
            init_ms: 20.0,
            iteration_ms: 20.0,
            exchange_ms: 10.0,
            workers: vec![comps as u32],
        };
        let (a, b) = (oracle::uc2(&s(it)).gain(), oracle::uc2(&s(it + 1)).gain());
        prop_assert!(a > 0.0 && b >= a - 1e-12);
    }
}
