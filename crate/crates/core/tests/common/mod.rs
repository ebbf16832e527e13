#![allow(dead_code)]

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;

use rsu_sched::model::{Catalog, Clock, OpType, PriorityClass, ReqId, Request};
use rsu_sched::sched::{Aggregate, BasePolicy, Policy};
use rsu_sched::traffic::Workload;
use rsu_sched::{service_time, SimSettings};

pub const BASES: [BasePolicy; 6] = [
    BasePolicy::Fdf,
    BasePolicy::Sdf,
    BasePolicy::Ds,
    BasePolicy::Dsn(Aggregate::Earliest),
    BasePolicy::Dsn(Aggregate::Median),
    BasePolicy::Dsn(Aggregate::Mean),
];

pub fn all_policies() -> Vec<Policy> {
    BASES
        .iter()
        .flat_map(|&b| [Policy::Flat(b), Policy::Mlq(b)])
        .collect()
}

fn rat(n: u128, d: u128) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exhaustive choice: builds every candidate, keys it with an exact
/// rational value plus (deadline, size, min id), sorts, takes the head.
/// Expired requests are skipped.
pub fn oracle_select(
    pending: &[Request],
    now: Clock,
    policy: Policy,
    catalog: &Catalog,
    data_rate_bps: u64,
    strict: bool,
) -> Option<Vec<ReqId>> {
    let alive: Vec<&Request> = pending
        .iter()
        .filter(|r| {
            let st = service_time(catalog.size_of(r.item_id), data_rate_bps);
            if strict {
                r.deadline.0 >= now.0 + st
            } else {
                r.deadline.0 >= now.0
            }
        })
        .collect();
    let alive: Vec<&Request> = if policy.is_multilevel() {
        let top = alive.iter().map(|r| r.class).min()?;
        alive.into_iter().filter(|r| r.class == top).collect()
    } else {
        alive
    };

    let mut cands: Vec<(BigRational, u64, u64, ReqId, Vec<ReqId>)> = Vec::new();
    match policy.base() {
        BasePolicy::Dsn(agg) => {
            let mut items: BTreeMap<u32, Vec<&Request>> = BTreeMap::new();
            for r in &alive {
                if r.op == OpType::Download {
                    items.entry(r.item_id).or_default().push(r);
                } else {
                    let size = catalog.size_of(r.item_id);
                    let v = rat((r.deadline.0 - now.0) as u128 * size as u128, 1);
                    cands.push((v, r.deadline.0, size, r.req_id, vec![r.req_id]));
                }
            }
            for (item, rs) in items {
                let mut ds: Vec<u64> = rs.iter().map(|r| r.deadline.0).collect();
                ds.sort();
                let n = ds.len();
                let agg_deadline = match agg {
                    Aggregate::Earliest => ds[0],
                    Aggregate::Median => {
                        if n % 2 == 1 {
                            ds[n / 2]
                        } else {
                            (ds[n / 2 - 1] + ds[n / 2]) / 2
                        }
                    }
                    Aggregate::Mean => ds.iter().sum::<u64>() / n as u64,
                };
                let size = catalog.size_of(item);
                let v = rat((agg_deadline - now.0) as u128 * size as u128, n as u128);
                let mut ids: Vec<ReqId> = rs.iter().map(|r| r.req_id).collect();
                ids.sort();
                cands.push((v, agg_deadline, size, ids[0], ids));
            }
        }
        base => {
            for r in &alive {
                let size = catalog.size_of(r.item_id);
                let v = match base {
                    BasePolicy::Fdf => rat(r.deadline.0 as u128, 1),
                    BasePolicy::Sdf => rat(size as u128, 1),
                    _ => rat((r.deadline.0 - now.0) as u128 * size as u128, 1),
                };
                cands.push((v, r.deadline.0, size, r.req_id, vec![r.req_id]));
            }
        }
    }
    cands.sort_by(|a, b| (&a.0, a.1, a.2, a.3).cmp(&(&b.0, b.1, b.2, b.3)));
    cands.into_iter().next().map(|c| c.4)
}

/// Pending set built to collide on values: few distinct sizes and
/// deadlines, several items, both ops and classes.
pub fn colliding_pending<R: Rng>(rng: &mut R, now: Clock) -> (Vec<Request>, Catalog) {
    let catalog = Catalog::from_sizes((0..6).map(|_| [1u64, 2, 3, 4, 6, 8][rng.random_range(0..6)]));
    let n = rng.random_range(1..=50);
    let pending = (0..n)
        .map(|i| {
            let slack = [0u64, 1, 2, 3, 4, 6, 8, 12][rng.random_range(0..8)] * 1000;
            Request {
                req_id: 100 + i as u64 * 3,
                vehicle_id: i as u64,
                item_id: rng.random_range(0..6),
                op: if rng.random_bool(0.8) { OpType::Download } else { OpType::Upload },
                deadline: Clock(now.0 + slack),
                class: PriorityClass(rng.random_range(0..2)),
                submitted_at: Clock(0),
            }
        })
        .collect();
    (pending, catalog)
}

/// Small scenario whose submission times and service durations are all
/// multiples of `tick` (1000 us at 1 Mbit/s: sizes in 125-byte steps).
pub fn aligned_scenario<R: Rng>(rng: &mut R, num_classes: u8, strict: bool) -> (Workload, SimSettings) {
    let tick = 1000u64;
    let catalog = Catalog::from_sizes((0..rng.random_range(1..=5)).map(|_| 125 * rng.random_range(1..=40u64)));
    let vehicles = rng.random_range(0..=10);
    let mut requests = Vec::new();
    for v in 0..vehicles {
        let enter = tick * rng.random_range(0..200u64);
        let dwell = rng.random_range(1_000..60_000u64);
        let exit = enter + dwell;
        for _ in 0..rng.random_range(1..=3) {
            if requests.len() >= 30 {
                break;
            }
            let submitted = enter + tick * rng.random_range(0..(dwell / tick).max(1));
            requests.push(Request {
                req_id: 0,
                vehicle_id: v,
                item_id: rng.random_range(0..catalog.len() as u32),
                op: if rng.random_bool(0.8) { OpType::Download } else { OpType::Upload },
                deadline: Clock(exit.max(submitted)),
                class: PriorityClass(rng.random_range(0..num_classes)),
                submitted_at: Clock(submitted),
            });
        }
    }
    requests.sort_by_key(|r| r.submitted_at);
    for (i, r) in requests.iter_mut().enumerate() {
        r.req_id = i as u64;
    }
    let settings = SimSettings {
        data_rate_bps: 1_000_000,
        strict_completion: strict,
        horizon: Clock(tick * rng.random_range(50..300u64)),
        num_classes,
    };
    (Workload { catalog, requests }, settings)
}

/// Parsed run CSV row.
#[derive(Debug, Clone)]
pub struct Row {
    pub policy: String,
    pub rate: f64,
    pub seed: u64,
    pub class: String,
    pub submitted: u64,
    pub served: u64,
    pub expired: u64,
    pub ratio: Option<f64>,
    pub mean_broadcast: Option<f64>,
}

pub fn parse_rows(csv: &str) -> Vec<Row> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let opt = |s: &str| (!s.is_empty()).then(|| s.parse::<f64>().unwrap());
            Row {
                policy: f[0].to_string(),
                rate: f[1].parse().unwrap(),
                seed: f[2].parse().unwrap(),
                class: f[3].to_string(),
                submitted: f[4].parse().unwrap(),
                served: f[5].parse().unwrap(),
                expired: f[6].parse().unwrap(),
                ratio: opt(f[7]),
                mean_broadcast: opt(f[9]),
            }
        })
        .collect()
}
