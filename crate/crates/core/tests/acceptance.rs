//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use fass::bench::{run_condition, BenchConfig, Condition, DEFAULT_SEED};
use fass::builder::{create_dag, finish_create_dags, ValidationErrorKind};
use fass::executor::{self, RunLimit, RuntimeConfig};
use fass::model::{Attributes, JobIndex, Value};
use fass::pubsub::{
    run_pubsub, sink_callback, source_callback, Callback, NodeSpec, PubSubGraph, StampPolicy, SyncPolicy,
    Synchronizer, Trigger,
};
use fass::time::{ClockMode, DurationNs, TimePoint};
use fass::trace::{completion_boundary_violations, deadline_met, job_completion, release_time, write_samples_csv};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

const JOBS: u64 = 500;

fn zero_join_latency() -> Result<String, String> {
    let t0 = Instant::now();
    let mut total = 0;
    for n in [2, 4, 6] {
        let cell = run_condition(Condition::Fass, &BenchConfig::new(n, JOBS, DEFAULT_SEED)).map_err(|e| e.to_string())?;
        ensure!(cell.rows.len() as u64 == JOBS, "n={n}: {} samples, expected {JOBS}", cell.rows.len());
        let nonzero = cell.rows.iter().filter(|r| !r.matched || r.latency_ns != Some(0)).count();
        ensure!(nonzero == 0, "n={n}: {nonzero} samples not exactly 0 ns");
        total += cell.rows.len();
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    Ok(format!("{total} samples, all 0 ns, {:.2}s", elapsed.as_secs_f64()))
}

fn completion_boundary() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut starts = 0;
    for i in 0..100 {
        let mut b = [random_valid_dag(&mut rng, 12)];
        let dags = finish_create_dags(&mut b).map_err(|e| format!("dag {i}: {e}"))?;
        let cfg = RuntimeConfig {
            workers: rng.gen_range(1..=4),
            clock: ClockMode::Virtual,
            limit: RunLimit::Jobs(rng.gen_range(5..=30)),
            seed: i,
            ..RuntimeConfig::default()
        };
        let report = executor::run(&dags, cfg).map_err(|e| format!("dag {i}: {e}"))?;
        let v = completion_boundary_violations(&report);
        ensure!(v.is_empty(), "dag {i}: {} violations, first {:?}", v.len(), v[0]);
        starts += report.events_of(fass::trace::EventKind::Start).count();
    }
    for n in [2, 4, 6] {
        let cell = run_condition(Condition::Fass, &BenchConfig::new(n, JOBS, DEFAULT_SEED)).map_err(|e| e.to_string())?;
        let v = completion_boundary_violations(&cell.report);
        ensure!(v.is_empty(), "fork-join n={n}: {} violations", v.len());
        starts += cell.report.events_of(fass::trace::EventKind::Start).count();
    }
    Ok(format!("103 traces, {starts} starts checked, 0 violations"))
}

/// Sources of the FasS side of the crate. Application code there only ever
/// sees a plain function from inputs to outputs.
const FASS_SOURCES: [(&str, &str); 5] = [
    ("builder.rs", include_str!("../src/builder.rs")),
    ("executor.rs", include_str!("../src/executor.rs")),
    ("channels.rs", include_str!("../src/channels.rs")),
    ("model.rs", include_str!("../src/model.rs")),
    ("dispatch.rs", include_str!("../src/dispatch.rs")),
];

fn baseline_violation() -> Result<String, String> {
    let mid: Callback = Arc::new(|ctx| {
        ctx.work(ms(2));
        let now = ctx.now();
        ctx.publish("a", now, Value::new(0u64)).expect("declared topic");
        ctx.work(ms(10));
    });
    let mut g = PubSubGraph::new();
    g.add_node(NodeSpec::new("src", Trigger::Timer { period: ms(25) }, vec!["x"], source_callback(vec!["x".into()])).exec_time(ms(1)));
    g.add_node(NodeSpec::new("mid", Trigger::Subscription { topic: "x".into() }, vec!["a"], mid));
    g.add_node(NodeSpec::new("sink", Trigger::Subscription { topic: "a".into() }, vec![], sink_callback()).exec_time(ms(1)));
    let cfg = RuntimeConfig {
        workers: 3,
        limit: RunLimit::Jobs(10),
        ..RuntimeConfig::default()
    };
    let report = run_pubsub(&g, SyncPolicy::exact(), StampPolicy::Propagate, &cfg).map_err(|e| e.to_string())?;
    let pubsub_violations = completion_boundary_violations(&report);
    ensure!(!pubsub_violations.is_empty(), "mid-callback publish produced no violation");

    // Same graph in FasS: the middle function can only return its outputs.
    let mut dag = create_dag();
    let a = |d| Attributes::default().exec_time(d);
    dag.register_periodic_subtask::<_, (u64,)>(|| (0,), vec!["x"], ms(25), a(ms(1))).map_err(|e| e.to_string())?;
    dag.register_subtask::<_, (u64,), (u64,)>(|x| x, vec!["x"], vec!["a"], a(ms(12))).map_err(|e| e.to_string())?;
    dag.register_sink_subtask::<_, (u64,)>(|_| {}, vec!["a"], a(ms(1))).map_err(|e| e.to_string())?;
    let dags = finish_create_dags(&mut [dag]).map_err(|e| e.to_string())?;
    let report = executor::run(&dags, cfg).map_err(|e| e.to_string())?;
    let fass_violations = completion_boundary_violations(&report);
    ensure!(fass_violations.is_empty(), "FasS trace has {} violations", fass_violations.len());

    for (file, src) in FASS_SOURCES {
        let defines_publish = ["fn publish(", "fn publish<", "fn try_publish"].iter().any(|p| src.contains(p));
        ensure!(!defines_publish, "{file} defines a publish operation");
    }
    ensure!(
        FASS_SOURCES[0].1.contains("pub type SubtaskFn = Arc<dyn Fn(&[Value]) -> Vec<Value> + Send + Sync>;"),
        "subtask bodies are not plain functions of their inputs"
    );
    Ok(format!(
        "pub/sub: {} violations (first: start {} < finish {}); FasS: 0; no publish in FasS API",
        pubsub_violations.len(),
        pubsub_violations[0].successor_start,
        pubsub_violations[0].predecessor_finish.map(|t| t.to_string()).unwrap_or_default(),
    ))
}

fn exact_parity() -> Result<String, String> {
    let mut out = Vec::new();
    for n in [2, 4, 6] {
        let cell = run_condition(Condition::Exact, &BenchConfig::new(n, JOBS, DEFAULT_SEED)).map_err(|e| e.to_string())?;
        let s = &cell.summary.stats;
        ensure!(s.match_rate == 1.0, "n={n}: match rate {}", s.match_rate);
        ensure!(s.median == Some(0.0), "n={n}: median {:?}", s.median);
        out.push(format!("n={n} median=0"));
    }
    Ok(format!("{} (match rate 100%)", out.join(", ")))
}

fn approx_trends() -> Result<String, String> {
    let intervals = [10, 30, 50];
    let ns = [2, 4, 6];
    let mut grid = [[0.0f64; 3]; 3];
    let mut exact = [0.0f64; 3];
    for (i, &n) in ns.iter().enumerate() {
        let cfg = BenchConfig::new(n, JOBS, DEFAULT_SEED);
        let e = run_condition(Condition::Exact, &cfg).map_err(|e| e.to_string())?;
        exact[i] = e.summary.stats.mean.ok_or("no exact samples")?;
        for (j, &mi) in intervals.iter().enumerate() {
            let c = run_condition(Condition::Approx { max_interval_ms: mi }, &cfg).map_err(|e| e.to_string())?;
            grid[i][j] = c.summary.stats.mean.ok_or(format!("n={n} approx{mi}: no samples"))?;
        }
    }
    for j in 0..3 {
        for i in 0..2 {
            ensure!(
                grid[i][j] <= grid[i + 1][j],
                "approx{}: mean falls from n={} to n={}: {:.0} > {:.0}",
                intervals[j], ns[i], ns[i + 1], grid[i][j], grid[i + 1][j]
            );
        }
    }
    for i in 0..3 {
        for j in 0..2 {
            ensure!(
                grid[i][j] >= grid[i][j + 1],
                "n={}: mean rises from {}ms to {}ms",
                ns[i], intervals[j], intervals[j + 1]
            );
        }
        for j in 0..3 {
            ensure!(
                grid[i][j] > 0.0 && grid[i][j] >= 5.0 * exact[i],
                "n={} approx{}: {:.0} not 5x exact {:.0}",
                ns[i], intervals[j], grid[i][j], exact[i]
            );
        }
    }
    let rows: Vec<String> = ns
        .iter()
        .enumerate()
        .map(|(i, n)| format!("n={n}: {:.0}/{:.0}/{:.0}", grid[i][0] / 1e6, grid[i][1] / 1e6, grid[i][2] / 1e6))
        .collect();
    Ok(format!("mean ms at 10/30/50: {}; exact 0", rows.join(", ")))
}

fn feed_exact(topics: usize, arrivals: &[(usize, u64, u64)], queue: usize) -> Result<Vec<u64>, String> {
    let names = (0..topics).map(topic_name).collect();
    let mut s = Synchronizer::new(names, SyncPolicy::exact().with_queue_size(queue)).map_err(|e| e.to_string())?;
    let mut emitted = Vec::new();
    for &(t, stamp, id) in arrivals {
        if let Some(set) = s.push(message(t, stamp, id)).map_err(|e| e.to_string())? {
            let pairs = ids(&set);
            ensure!(pairs.iter().all(|p| p.0 == pairs[0].0), "unequal stamps in exact set {pairs:?}");
            emitted.push(pairs[0].0);
        }
    }
    Ok(emitted)
}

fn check_approx(topics: usize, arrivals: &[(usize, u64, u64)], tol: u64, queue: usize) -> Result<(), String> {
    let names = (0..topics).map(topic_name).collect();
    let policy = SyncPolicy::approximate(DurationNs::from_nanos(tol)).with_queue_size(queue);
    let mut s = Synchronizer::new(names, policy).map_err(|e| e.to_string())?;
    let mut oracle = ApproxOracle::new(topics, tol, queue);
    for (step, &(t, stamp, id)) in arrivals.iter().enumerate() {
        let got = s.push(message(t, stamp, id)).map_err(|e| e.to_string())?.map(|set| ids(&set));
        let want = oracle.push(t, stamp, id);
        ensure!(
            got == want,
            "arrivals {arrivals:?} tol {tol} queue {queue}: step {step} got {got:?}, oracle {want:?}"
        );
    }
    ensure!(s.drops() == oracle.drops, "drop counts differ on {arrivals:?}");
    Ok(())
}

/// Random order of the per-topic streams that keeps each stream's order.
fn interleave<R: Rng>(rng: &mut R, streams: &[Vec<u64>]) -> Vec<(usize, u64, u64)> {
    let mut next = vec![0usize; streams.len()];
    let mut out = Vec::new();
    let mut id = 0;
    loop {
        let open: Vec<usize> = (0..streams.len()).filter(|&t| next[t] < streams[t].len()).collect();
        if open.is_empty() {
            return out;
        }
        let t = open[rng.gen_range(0..open.len())];
        out.push((t, streams[t][next[t]], id));
        next[t] += 1;
        id += 1;
    }
}

fn matcher_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c1e);

    for case in 0..1000 {
        let topics = rng.gen_range(1..=4);
        let streams: Vec<Vec<u64>> = (0..topics)
            .map(|_| (0..30u64).filter(|_| rng.gen_bool(0.5)).map(|s| s * MS).collect())
            .collect();
        let arrivals = interleave(&mut rng, &streams);
        let queue = streams.iter().map(Vec::len).max().unwrap_or(0) + 1;
        let got = feed_exact(topics, &arrivals, queue)?;
        let want = exact_oracle(&streams);
        ensure!(got == want, "exact case {case}: got {got:?}, oracle {want:?}");
    }

    let mut exhaustive = 0;
    let values2: Vec<u64> = [0, 5, 10, 15].iter().map(|v| v * MS).collect();
    let values3: Vec<u64> = [0, 5, 10].iter().map(|v| v * MS).collect();
    for (topics, max_len, values) in [(2usize, 3usize, &values2), (3, 2, &values3)] {
        let per_topic: Vec<Vec<u64>> = (1..=max_len).flat_map(|l| monotone_sequences(values, l)).collect();
        let mut choice = vec![0usize; topics];
        loop {
            let streams: Vec<&Vec<u64>> = choice.iter().map(|&c| &per_topic[c]).collect();
            let counts: Vec<usize> = streams.iter().map(|s| s.len()).collect();
            for order in interleavings(&counts) {
                let mut next = vec![0usize; topics];
                let arrivals: Vec<(usize, u64, u64)> = order
                    .iter()
                    .enumerate()
                    .map(|(id, &t)| {
                        next[t] += 1;
                        (t, streams[t][next[t] - 1], id as u64)
                    })
                    .collect();
                for tol in [1, 5 * MS, 10 * MS] {
                    for queue in [2, 3] {
                        check_approx(topics, &arrivals, tol, queue)?;
                        exhaustive += 1;
                    }
                }
            }
            let mut t = topics;
            loop {
                if t == 0 {
                    break;
                }
                t -= 1;
                choice[t] += 1;
                if choice[t] < per_topic.len() {
                    break;
                }
                choice[t] = 0;
                if t == 0 {
                    t = usize::MAX;
                    break;
                }
            }
            if t == usize::MAX {
                break;
            }
        }
    }

    for _ in 0..5000 {
        let topics = rng.gen_range(1..=3);
        let streams: Vec<Vec<u64>> = (0..topics)
            .map(|_| (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..=20) * MS).collect())
            .collect();
        let arrivals = interleave(&mut rng, &streams);
        check_approx(topics, &arrivals, rng.gen_range(1..=12) * MS, rng.gen_range(1..=6))?;
    }
    Ok(format!("exact: 1000 streams; approx: {exhaustive} exhaustive + 5000 random streams"))
}

fn validation() -> Result<String, String> {
    let split_chain = || {
        let mut dag = create_dag();
        let a = || Attributes::default();
        dag.register_periodic_subtask::<_, (i32,)>(|| (1,), vec!["topic0"], ms(25), a().named("f0")).unwrap();
        dag.register_subtask::<_, (i32,), (i32, i32)>(|(x,)| (x, x), vec!["topic0"], vec!["topic1", "topic2"], a().named("f1"))
            .unwrap();
        dag.register_sink_subtask::<_, (i32, i32)>(|_| {}, vec!["topic1", "topic2"], a().named("f2")).unwrap();
        dag
    };

    let dags = finish_create_dags(&mut [split_chain()]).map_err(|e| format!("split_chain rejected: {e}"))?;
    let d = &dags[0];
    let order: Vec<&str> = d.topological_order().iter().map(|&id| d.subtask(id).name()).collect();
    ensure!(order == ["f0", "f1", "f2"], "topological order {order:?}");
    let mut edges: Vec<(String, String, String)> = d
        .edges()
        .iter()
        .map(|e| (d.subtask(e.from).name().into(), d.subtask(e.to).name().into(), e.topic.clone()))
        .collect();
    edges.sort();
    let want: Vec<(String, String, String)> = [("f0", "f1", "topic0"), ("f1", "f2", "topic1"), ("f1", "f2", "topic2")]
        .iter()
        .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
        .collect();
    ensure!(edges == want, "edges {edges:?}");

    let mut multi = split_chain();
    multi
        .register_subtask::<_, (i32,), (i32,)>(|x| x, vec!["topic1"], vec!["topic0"], Attributes::default().named("f3"))
        .unwrap();
    let err = finish_create_dags(&mut [multi]).err().ok_or("double publisher accepted")?;
    let mp = err
        .errors()
        .iter()
        .find(|e| e.kind == ValidationErrorKind::MultiPublisher)
        .ok_or(format!("no MultiPublisher in {err}"))?;
    ensure!(mp.topics == ["topic0"], "MultiPublisher names {:?}", mp.topics);

    let mut cyc = create_dag();
    cyc.register_subtask::<_, (i32,), (i32,)>(|x| x, vec!["a"], vec!["a"], Attributes::default().named("loop"))
        .unwrap();
    let err = finish_create_dags(&mut [cyc]).err().ok_or("self-loop accepted")?;
    ensure!(
        err.errors().iter().any(|e| e.kind == ValidationErrorKind::Cycle && e.subtasks == ["loop"]),
        "no Cycle on the self-loop: {err}"
    );

    // A batch with one broken DAG commits nothing; fixing it commits both.
    let mut broken = create_dag();
    broken
        .register_periodic_subtask::<_, (i32,)>(|| (1,), vec!["x"], ms(25), Attributes::default())
        .unwrap();
    broken
        .register_sink_subtask::<_, (i32, i32)>(|_| {}, vec!["x", "y"], Attributes::default())
        .unwrap();
    let mut batch = [split_chain(), broken];
    ensure!(finish_create_dags(&mut batch).is_err(), "batch with a dangling input committed");
    ensure!(batch.iter().all(|b| !b.is_committed()), "failed commit froze a builder");
    batch[1]
        .register_subtask::<_, (i32,), (i32,)>(|x| x, vec!["x"], vec!["y"], Attributes::default())
        .map_err(|e| e.to_string())?;
    let dags = finish_create_dags(&mut batch).map_err(|e| format!("fixed batch rejected: {e}"))?;
    ensure!(dags.len() == 2 && batch.iter().all(|b| b.is_committed()), "fixed batch not committed");
    Ok("split_chain commits; MultiPublisher and Cycle rejected; failed batch commits nothing".into())
}

fn csv_bytes(cond: Condition, n: usize) -> Result<Vec<u8>, String> {
    let cell = run_condition(cond, &BenchConfig::new(n, JOBS, DEFAULT_SEED)).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_samples_csv(&cell.rows, &mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn determinism() -> Result<String, String> {
    let mut cells = 0;
    for cond in Condition::matrix() {
        for n in [2, 4, 6] {
            let a = csv_bytes(cond, n)?;
            let b = csv_bytes(cond, n)?;
            ensure!(a == b, "{cond} n={n}: CSVs differ");
            cells += 1;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_fass-bench"))
            .args(["--condition", "approx", "--max-interval-ms", "30", "--n", "4", "--out"])
            .arg(&path)
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(status.success(), "fass-bench exited with {status}");
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "CLI outputs differ");
    ensure!(outputs[0] == csv_bytes(Condition::Approx { max_interval_ms: 30 }, 4)?, "CLI and library CSVs differ");
    Ok(format!("{cells} cells byte-identical across runs; CLI output identical"))
}

fn deadline_formula() -> Result<String, String> {
    let r = TimePoint::from_millis(10);
    let d = ms(25);
    let at = |ns: u64| TimePoint::from_nanos(ns);

    let (trace, dag) = hand_trace(r, &[at(20 * MS), at(35 * MS)]);
    ensure!(deadline_met(&trace, dag, JobIndex(0), d) == Ok(true), "f = r + D must meet the deadline");
    let (trace, dag) = hand_trace(r, &[at(20 * MS), at(35 * MS + 1)]);
    ensure!(deadline_met(&trace, dag, JobIndex(0), d) == Ok(false), "f = r + D + 1ns must miss");
    let (trace, dag) = hand_trace(r, &[at(35 * MS + 1), at(20 * MS)]);
    ensure!(deadline_met(&trace, dag, JobIndex(0), d) == Ok(false), "latest sink decides, not the first");

    let mut rng = ChaCha8Rng::seed_from_u64(0xdead);
    for _ in 0..2000 {
        let release = rng.gen_range(0..=100 * MS);
        let sinks: Vec<u64> = (0..rng.gen_range(1..=4)).map(|_| release + rng.gen_range(0..=60 * MS)).collect();
        let deadline = rng.gen_range(0..=60 * MS);
        let finishes: Vec<TimePoint> = sinks.iter().map(|&f| at(f)).collect();
        let (trace, dag) = hand_trace(at(release), &finishes);
        let direct = *sinks.iter().max().unwrap() <= release + deadline;
        let got = deadline_met(&trace, dag, JobIndex(0), DurationNs::from_nanos(deadline)).map_err(|e| e.to_string())?;
        ensure!(got == direct, "release {release} sinks {sinks:?} D {deadline}: got {got}");
    }

    // The executor's per-job verdicts follow the same formula.
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1);
    let mut jobs = 0;
    for _ in 0..20 {
        let dags = finish_create_dags(&mut [random_valid_dag(&mut rng, 8)]).map_err(|e| e.to_string())?;
        let cfg = RuntimeConfig {
            workers: 2,
            limit: RunLimit::Jobs(10),
            ..RuntimeConfig::default()
        };
        let report = executor::run(&dags, cfg).map_err(|e| e.to_string())?;
        for j in &report.metrics.jobs {
            let f = job_completion(&report, j.dag, j.job).map_err(|e| e.to_string())?;
            let r = release_time(&report, j.dag, j.job).map_err(|e| e.to_string())?;
            let direct = f <= r + dags[0].relative_deadline();
            ensure!(j.deadline_met == Some(direct), "job {} verdict {:?}, direct {direct}", j.job, j.deadline_met);
            jobs += 1;
        }
    }
    Ok(format!("boundary cases + 2000 random traces + {jobs} executed jobs agree"))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 9] = [
        ("zero join latency under FasS", zero_join_latency),
        ("completion boundary on random DAGs and fork-join", completion_boundary),
        ("pub/sub boundary violation and FasS API surface", baseline_violation),
        ("ExactTime parity", exact_parity),
        ("ApproximateTime trends", approx_trends),
        ("matcher oracles", matcher_oracles),
        ("commit-time validation", validation),
        ("CSV determinism", determinism),
        ("deadline formula", deadline_formula),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name} ({secs:.2}s): {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 9 - failed, 9);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
