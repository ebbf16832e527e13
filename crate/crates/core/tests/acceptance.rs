//! Acceptance criteria. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{aligned_scenario, all_policies, colliding_pending, oracle_select, parse_rows, BASES};
use rsu_sched::cli::{self, parse_config, report_rows, Config};
use rsu_sched::metrics::SimReport;
use rsu_sched::model::{Clock, PriorityClass};
use rsu_sched::sched::{PendingQueue, Policy, SchedContext};
use rsu_sched::traffic::{generate_workload, ScenarioParams};
use rsu_sched::{reference_simulate, simulate, SimSettings};

const RATES: &str = "0.5,1,2,4,8,16";
const SEEDS: usize = 20;
const THREADS: usize = 8;
const PT: f64 = 0.01;

type Outcome = Result<String, String>;

struct Sweep {
    config: Config,
    runs: Vec<(ScenarioParams, Policy, SimReport)>,
    elapsed_s: f64,
}

impl Sweep {
    fn run(overrides: &[&str]) -> Sweep {
        let mut all: Vec<String> = vec![format!("sweep=request_rate={RATES}"), format!("seeds={SEEDS}")];
        all.extend(overrides.iter().map(|s| s.to_string()));
        let mut config = parse_config(None, &all).expect("acceptance config");
        config.threads = THREADS;
        let t = Instant::now();
        let runs = cli::run_reports(&config).expect("sweep runs");
        Sweep { config, runs, elapsed_s: t.elapsed().as_secs_f64() }
    }

    fn rates(&self) -> Vec<f64> {
        RATES.split(',').map(|r| r.parse().unwrap()).collect()
    }

    /// Mean over seeds of the exact per-run service ratio.
    fn mean_ratio(&self, policy: &str, rate: f64, class: Option<u8>) -> f64 {
        let xs: Vec<f64> = self
            .runs
            .iter()
            .filter(|(p, pol, _)| pol.to_string() == policy && p.request_rate == rate)
            .filter_map(|(_, _, r)| rsu_sched::service_ratio(r, class.map(PriorityClass)).map(|f| f.to_f64()))
            .collect();
        assert_eq!(xs.len(), SEEDS, "{policy} at {rate}");
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    fn mean_broadcast(&self, policy: &str, rate: f64) -> f64 {
        let xs: Vec<f64> = self
            .runs
            .iter()
            .filter(|(p, pol, _)| pol.to_string() == policy && p.request_rate == rate)
            .filter_map(|(_, _, r)| r.overall.mean_broadcast_size().map(|f| f.to_f64()))
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    fn csv_rows(&self) -> Vec<String> {
        self.runs.iter().flat_map(|(p, pol, r)| report_rows(p, *pol, r, None)).collect()
    }
}

fn pts(x: f64) -> String {
    format!("{:+.2}", x * 100.0)
}

fn c1(mixed: &Sweep) -> Outcome {
    let rates = mixed.rates();
    let (lo, hi) = (rates[0], *rates.last().unwrap());
    let low_gap = mixed.mean_ratio("fdf", lo, None) - mixed.mean_ratio("sdf", lo, None);
    let high_gap = mixed.mean_ratio("sdf", hi, None) - mixed.mean_ratio("fdf", hi, None);
    let msg = format!(
        "FDF-SDF at {lo}/s = {} pts (need >= +2), SDF-FDF at {hi}/s = {} pts (need >= +2), sweep {:.1}s (budget 60s)",
        pts(low_gap),
        pts(high_gap),
        mixed.elapsed_s
    );
    if low_gap >= 2.0 * PT && high_gap >= 2.0 * PT && mixed.elapsed_s < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c2(mixed: &Sweep) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut worst_rate = 0.0;
    let mut strictly_above = Vec::new();
    for rate in mixed.rates() {
        let ds = mixed.mean_ratio("ds", rate, None);
        let best = mixed.mean_ratio("fdf", rate, None).max(mixed.mean_ratio("sdf", rate, None));
        if ds - best < worst {
            worst = ds - best;
            worst_rate = rate;
        }
        if ds > best {
            strictly_above.push(rate);
        }
    }
    let msg = format!(
        "min(DS - max(FDF,SDF)) = {} pts at {worst_rate}/s (need >= -1); DS strictly above both at {:?}",
        pts(worst),
        strictly_above
    );
    if worst >= -PT && !strictly_above.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c3(download_only: &Sweep) -> Outcome {
    let rates = download_only.rates();
    let top2 = &rates[rates.len() - 2..];
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for agg in ["earliest", "median", "mean"] {
        let name = format!("dsn:{agg}");
        for &rate in &rates {
            let gain = download_only.mean_ratio(&name, rate, None) - download_only.mean_ratio("ds", rate, None);
            if gain < 0.0 {
                failures.push(format!("{name} below DS at {rate}/s by {:.6}", -gain));
            }
            if top2.contains(&rate) {
                notes.push(format!("{name}@{rate}: {} pts", pts(gain)));
                if gain < 5.0 * PT {
                    failures.push(format!("{name} gain at {rate}/s only {} pts", pts(gain)));
                }
                let b = download_only.mean_broadcast(&name, rate);
                if b <= 1.0 {
                    failures.push(format!("{name} mean broadcast size {b:.3} at {rate}/s"));
                }
            }
        }
    }
    let msg = format!("high-rate gains over DS: {}", notes.join(", "));
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; failures: {}", failures.join("; ")))
    }
}

fn c4(classes: &Sweep) -> Outcome {
    let rates = classes.rates();
    let top2 = &rates[rates.len() - 2..];
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for &rate in &rates {
        let flat = classes.mean_ratio("ds", rate, None);
        let hi = classes.mean_ratio("mlq(ds)", rate, Some(0));
        let lo = classes.mean_ratio("mlq(ds)", rate, Some(1));
        if hi < flat {
            failures.push(format!("class 0 {hi:.4} < flat {flat:.4} at {rate}/s"));
        }
        if lo > flat {
            failures.push(format!("class 1 {lo:.4} > flat {flat:.4} at {rate}/s"));
        }
        if top2.contains(&rate) {
            notes.push(format!("{rate}/s: c0 {hi:.3} c1 {lo:.3} flat {flat:.3}"));
            if hi - lo < 5.0 * PT {
                failures.push(format!("class gap {} pts at {rate}/s", pts(hi - lo)));
            }
        }
    }
    let msg = notes.join("; ");
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; failures: {}", failures.join("; ")))
    }
}

fn c5(sweeps: &[&Sweep]) -> Outcome {
    let mut rows = 0usize;
    for s in sweeps {
        let mut csv = s.config.csv_header();
        csv.push('\n');
        for r in s.csv_rows() {
            csv.push_str(&r);
            csv.push('\n');
        }
        for row in parse_rows(&csv) {
            rows += 1;
            if row.submitted != row.served + row.expired {
                return Err(format!("row violates conservation: {row:?}"));
            }
        }
        for (_, _, rep) in &s.runs {
            if !rep.overall.is_conserved() || !rep.per_class.iter().all(|c| c.is_conserved()) {
                return Err("report violates conservation (with residual split out)".into());
            }
        }
    }
    Ok(format!("{rows} rows, submitted = served + expired on every row"))
}

fn c6() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let scenarios = 120;
    let mut comparisons = 0;
    let mut requests = 0;
    for i in 0..scenarios {
        let (w, s) = aligned_scenario(&mut rng, 2, i % 3 != 0);
        requests += w.requests.len();
        for policy in all_policies() {
            let fast = simulate(&w, &s, policy).map_err(|e| e.to_string())?;
            let slow = reference_simulate(&w, &s, policy, 1000).map_err(|e| e.to_string())?;
            if fast.served != slow.served || fast.dropped != slow.dropped || fast.residual != slow.residual {
                return Err(format!("scenario {i} policy {policy}: outcome sets differ"));
            }
            if fast != slow {
                return Err(format!("scenario {i} policy {policy}: reports differ"));
            }
            comparisons += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let msg = format!("{scenarios} scenarios ({requests} requests), {comparisons} policy runs identical, {secs:.2}s (budget 10s)");
    if secs < 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sets = 1200;
    let mut checks = 0;
    let mut ties = 0;
    for i in 0..sets {
        let now = Clock(rng.random_range(0..50_000));
        let (pending, catalog) = colliding_pending(&mut rng, now);
        let rate = [8_000_000u64, 1_000_000, 3][i % 3];
        let strict = i % 2 == 0;
        let ctx = SchedContext { catalog: &catalog, data_rate_bps: rate, strict_completion: strict };
        for base in BASES {
            for policy in [Policy::Flat(base), Policy::Mlq(base)] {
                let mut q = PendingQueue::new();
                for r in &pending {
                    q.enqueue(*r).unwrap();
                }
                let got = q.select_next(now, policy, &ctx).map(|d| d.members);
                let want = oracle_select(&pending, now, policy, &catalog, rate, strict);
                if got != want {
                    return Err(format!("set {i} policy {policy}: got {got:?}, oracle {want:?}"));
                }
                checks += 1;
            }
        }
        // count sets where at least two requests collide on DS value
        let mut values = BTreeMap::new();
        for r in &pending {
            if r.deadline >= now {
                *values
                    .entry(rsu_sched::ds_value(r.deadline, now, catalog.size_of(r.item_id)))
                    .or_insert(0) += 1;
            }
        }
        if values.values().any(|&c| c > 1) {
            ties += 1;
        }
    }
    if ties < sets / 2 {
        return Err(format!("only {ties} of {sets} sets had value collisions"));
    }
    Ok(format!("{sets} pending sets, {checks} selections equal to enumeration ({ties} sets with value ties)"))
}

fn c8(mixed: &Sweep) -> Outcome {
    let small = |threads: usize| {
        let mut c = parse_config(
            None,
            &["sweep=request_rate=1,8".into(), "seeds=4".into(), "policy=fdf,dsn:mean,mlq(ds)".into()],
        )
        .unwrap();
        c.threads = threads;
        cli::run_sweep(&c).unwrap()
    };
    let a = small(0);
    if a != small(0) {
        return Err("sequential reruns differ".into());
    }
    if small(1) != small(8) {
        return Err("1 vs 8 threads differ".into());
    }
    let mut c = mixed.config.clone();
    c.threads = 1;
    let one = cli::run_sweep(&c).unwrap();
    c.threads = 8;
    let eight = cli::run_sweep(&c).unwrap();
    if one != eight {
        return Err("full sweep differs between 1 and 8 threads".into());
    }
    Ok(format!("reruns byte-identical; 1 vs 8 threads byte-identical ({} bytes)", one.len()))
}

fn c9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scenarios = 100;
    for i in 0..scenarios {
        let p = ScenarioParams {
            seed: rng.random(),
            num_classes: 1,
            p_class: vec![1.0],
            request_rate: rng.random_range(0.5..12.0),
            download_fraction: rng.random_range(0.5..=1.0),
            duration_s: 60,
            ..Default::default()
        };
        let w = generate_workload(&p).unwrap();
        let s = SimSettings::from(&p);
        for base in BASES {
            let flat = simulate(&w, &s, Policy::Flat(base)).unwrap();
            let mlq = simulate(&w, &s, Policy::Mlq(base)).unwrap();
            if flat.served != mlq.served || flat.decisions != mlq.decisions {
                return Err(format!("scenario {i}: mlq({base}) differs from {base}"));
            }
        }
    }
    Ok(format!("{scenarios} scenarios x {} inner policies identical", BASES.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mixed = Sweep::run(&["policy=fdf,sdf,ds"]);
    let download_only = Sweep::run(&["policy=ds,dsn:earliest,dsn:median,dsn:mean", "download_fraction=1"]);
    let classes = Sweep::run(&["policy=ds,mlq(ds)", "p_class=0.5,0.5"]);

    let results: Vec<(&str, Outcome)> = vec![
        ("1 FDF/SDF crossover", guarded(|| c1(&mixed))),
        ("2 D*S improvement", guarded(|| c2(&mixed))),
        ("3 merging gain", guarded(|| c3(&download_only))),
        ("4 MLQ class separation", guarded(|| c4(&classes))),
        ("5 conservation", guarded(|| c5(&[&mixed, &download_only, &classes]))),
        ("6 oracle equivalence", guarded(c6)),
        ("7 policy argmin oracle", guarded(c7)),
        ("8 determinism", guarded(|| c8(&mixed))),
        ("9 MLQ degeneracy", guarded(c9)),
    ];

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(m) => println!("criterion {name}: PASS ({m})"),
            Err(m) => {
                failed += 1;
                println!("criterion {name}: FAIL ({m})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
