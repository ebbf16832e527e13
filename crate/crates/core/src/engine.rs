//! Discrete-event simulation of one RSU serving a request stream over a
//! serial channel, and a fixed-tick reference simulator used to check it.
//!
//! Scheduling happens only when the channel is idle, after all events that
//! share the current timestamp have been applied. Service completions are
//! applied before arrivals at the same instant. Service is non-preemptive.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::metrics::{ReportBuilder, SimReport};
use crate::model::{
    ds_value, Catalog, Clock, Micros, OpType, PriorityClass, ReqId, Request, ServiceDecision,
    MICROS_PER_SEC,
};
use crate::sched::{Aggregate, BasePolicy, PendingQueue, Policy, SchedContext, SchedError};
use crate::traffic::{generate_workload, ParamError, ScenarioParams, Workload};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("request {req_id} has class {class}, but only {num_classes} classes are configured")]
    ClassOutOfRange { req_id: ReqId, class: u8, num_classes: u8 },
    #[error("request {0} has a deadline before its submission time")]
    DeadlineBeforeSubmission(ReqId),
    #[error("tick must be between 1 and 1000 us, got {0}")]
    BadTick(Micros),
    #[error("{what} = {value} is not a multiple of the {tick} us tick")]
    Misaligned { what: String, value: u64, tick: Micros },
}

/// Transfer time of `size` bytes at `data_rate_bps`, rounded up to the microsecond.
pub fn service_time(size: u64, data_rate_bps: u64) -> Micros {
    assert!(data_rate_bps >= 1, "zero data rate");
    let bits_us = size as u128 * 8 * MICROS_PER_SEC as u128;
    bits_us.div_ceil(data_rate_bps as u128) as Micros
}

/// Run-level knobs the engine needs beyond the workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimSettings {
    pub data_rate_bps: u64,
    pub strict_completion: bool,
    /// No new service starts at or after this time; a transfer already in
    /// progress still completes.
    pub horizon: Clock,
    pub num_classes: u8,
}

impl From<&ScenarioParams> for SimSettings {
    fn from(p: &ScenarioParams) -> Self {
        SimSettings {
            data_rate_bps: p.data_rate_bps,
            strict_completion: p.strict_completion,
            horizon: p.horizon(),
            num_classes: p.num_classes,
        }
    }
}

impl SimSettings {
    fn context<'a>(&self, catalog: &'a Catalog) -> SchedContext<'a> {
        SchedContext {
            catalog,
            data_rate_bps: self.data_rate_bps,
            strict_completion: self.strict_completion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    ServiceComplete(ServiceDecision),
    RequestArrival(Request),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub at: Clock,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (Clock, u8, ReqId) {
        match &self.kind {
            EventKind::ServiceComplete(d) => (self.at, 0, d.members[0]),
            EventKind::RequestArrival(r) => (self.at, 1, r.req_id),
        }
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct RsuState {
    pending: PendingQueue,
    in_flight: Option<ServiceDecision>,
}

fn check_workload(w: &Workload, s: &SimSettings) -> Result<(), EngineError> {
    for r in &w.requests {
        if w.catalog.get(r.item_id).is_none() {
            return Err(SchedError::UnknownItem { req_id: r.req_id, item_id: r.item_id }.into());
        }
        if r.class.level() >= s.num_classes {
            return Err(EngineError::ClassOutOfRange {
                req_id: r.req_id,
                class: r.class.level(),
                num_classes: s.num_classes,
            });
        }
        if r.deadline < r.submitted_at {
            return Err(EngineError::DeadlineBeforeSubmission(r.req_id));
        }
    }
    Ok(())
}

/// Event-driven simulation of `workload` under `policy`.
pub fn simulate(workload: &Workload, settings: &SimSettings, policy: Policy) -> Result<SimReport, EngineError> {
    check_workload(workload, settings)?;
    let ctx = settings.context(&workload.catalog);
    let mut report = ReportBuilder::new(settings.num_classes, &workload.requests);
    let mut events: BinaryHeap<Reverse<Event>> = workload
        .requests
        .iter()
        .map(|r| Reverse(Event { at: r.submitted_at, kind: EventKind::RequestArrival(*r) }))
        .collect();
    let mut rsu = RsuState::default();

    while let Some(Reverse(first)) = events.pop() {
        let now = first.at;
        let mut batch = vec![first];
        while events.peek().is_some_and(|Reverse(e)| e.at == now) {
            batch.push(events.pop().unwrap().0);
        }
        for ev in batch {
            match ev.kind {
                EventKind::ServiceComplete(d) => {
                    report.record_service(&d);
                    rsu.in_flight = None;
                }
                EventKind::RequestArrival(r) => rsu.pending.enqueue(r)?,
            }
        }
        if rsu.in_flight.is_none() && now < settings.horizon && !rsu.pending.is_empty() {
            report.record_drops(&rsu.pending.drop_expired(now, &ctx));
            if let Some(d) = rsu.pending.select_next(now, policy, &ctx) {
                events.push(Reverse(Event { at: d.finish, kind: EventKind::ServiceComplete(d.clone()) }));
                rsu.in_flight = Some(d);
            }
        }
    }

    let residual: Vec<ReqId> = rsu.pending.drain().iter().map(|r| r.req_id).collect();
    report.record_residual(&residual);
    Ok(report.finish())
}

/// Generates the workload for `params` and simulates it.
pub fn run(params: &ScenarioParams, policy: Policy) -> Result<SimReport, EngineError> {
    let workload = generate_workload(params)?;
    simulate(&workload, &SimSettings::from(params), policy)
}

/// Fixed-tick reference simulator. Rebuilds every candidate from the raw
/// pending list at each tick instead of keeping indexes, and compares
/// values with plain cross-multiplication. Every submission time, service
/// duration and the horizon must be multiples of `tick`.
pub fn reference_simulate(
    workload: &Workload,
    settings: &SimSettings,
    policy: Policy,
    tick: Micros,
) -> Result<SimReport, EngineError> {
    if tick == 0 || tick > 1000 {
        return Err(EngineError::BadTick(tick));
    }
    check_workload(workload, settings)?;
    let aligned = |what: String, value: u64| {
        if value.is_multiple_of(tick) {
            Ok(())
        } else {
            Err(EngineError::Misaligned { what, value, tick })
        }
    };
    aligned("horizon".into(), settings.horizon.0)?;
    for r in &workload.requests {
        aligned(format!("request {} submitted_at", r.req_id), r.submitted_at.0)?;
        let st = service_time(workload.catalog.size_of(r.item_id), settings.data_rate_bps);
        aligned(format!("service time of item {}", r.item_id), st)?;
    }

    let size = |r: &Request| workload.catalog.size_of(r.item_id);
    let duration = |r: &Request| service_time(size(r), settings.data_rate_bps);
    let expired = |r: &Request, now: Clock| {
        if settings.strict_completion {
            r.deadline.0 < now.0 + duration(r)
        } else {
            r.deadline.0 < now.0
        }
    };

    let mut arrivals = workload.requests.clone();
    arrivals.sort_by_key(|r| (r.submitted_at, r.req_id));
    let mut arrivals = arrivals.into_iter().peekable();
    let mut report = ReportBuilder::new(settings.num_classes, &workload.requests);
    let mut pending: Vec<Request> = Vec::new();
    let mut in_flight: Option<ServiceDecision> = None;
    let mut now = Clock::ZERO;

    loop {
        if in_flight.as_ref().is_some_and(|d| d.finish == now) {
            report.record_service(&in_flight.take().unwrap());
        }
        while arrivals.peek().is_some_and(|r| r.submitted_at <= now) {
            let r = arrivals.next().unwrap();
            if pending.iter().any(|p| p.req_id == r.req_id) {
                return Err(SchedError::DuplicateRequest(r.req_id).into());
            }
            pending.push(r);
        }
        if in_flight.is_none() && now < settings.horizon && !pending.is_empty() {
            let mut dropped: Vec<ReqId> =
                pending.iter().filter(|r| expired(r, now)).map(|r| r.req_id).collect();
            dropped.sort_unstable();
            pending.retain(|r| !expired(r, now));
            report.record_drops(&dropped);
            if let Some((members, value)) = reference_pick(&pending, now, policy, &size) {
                let first = *pending.iter().find(|r| r.req_id == members[0]).unwrap();
                pending.retain(|r| !members.contains(&r.req_id));
                in_flight = Some(ServiceDecision {
                    item_id: first.item_id,
                    op: first.op,
                    members,
                    value,
                    start: now,
                    finish: Clock(now.0 + duration(&first)),
                });
            }
        }
        if now >= settings.horizon && in_flight.is_none() {
            break;
        }
        now = Clock(now.0 + tick);
    }

    let mut residual: Vec<ReqId> = pending.iter().map(|r| r.req_id).chain(arrivals.map(|r| r.req_id)).collect();
    residual.sort_unstable();
    report.record_residual(&residual);
    Ok(report.finish())
}

/// Brute-force choice over an already expiry-filtered pending list.
/// Returns sorted member ids and the floored primary value.
fn reference_pick(
    pending: &[Request],
    now: Clock,
    policy: Policy,
    size: &dyn Fn(&Request) -> u64,
) -> Option<(Vec<ReqId>, u128)> {
    let class: Option<PriorityClass> = match policy {
        Policy::Flat(_) => None,
        Policy::Mlq(_) => Some(pending.iter().map(|r| r.class).min()?),
    };
    let pool: Vec<&Request> = pending
        .iter()
        .filter(|r| class.is_none_or(|c| r.class == c))
        .collect();

    match policy.base() {
        BasePolicy::Dsn(agg) => {
            // (numerator, n, deadline, size, min id, members)
            let mut by_item: BTreeMap<u32, Vec<&Request>> = BTreeMap::new();
            let mut cands: Vec<(u128, u128, Clock, u64, ReqId, Vec<ReqId>)> = Vec::new();
            for r in &pool {
                match r.op {
                    OpType::Download => by_item.entry(r.item_id).or_default().push(r),
                    OpType::Upload => cands.push((
                        ds_value(r.deadline, now, size(r)),
                        1,
                        r.deadline,
                        size(r),
                        r.req_id,
                        vec![r.req_id],
                    )),
                }
            }
            for (_, rs) in by_item {
                let mut deadlines: Vec<u64> = rs.iter().map(|r| r.deadline.0).collect();
                deadlines.sort_unstable();
                let n = deadlines.len();
                let agg_deadline = Clock(match agg {
                    Aggregate::Earliest => deadlines[0],
                    Aggregate::Median if n % 2 == 1 => deadlines[n / 2],
                    Aggregate::Median => ((deadlines[n / 2 - 1] as u128 + deadlines[n / 2] as u128) / 2) as u64,
                    Aggregate::Mean => (deadlines.iter().map(|&d| d as u128).sum::<u128>() / n as u128) as u64,
                });
                let mut members: Vec<ReqId> = rs.iter().map(|r| r.req_id).collect();
                members.sort_unstable();
                let sz = size(rs[0]);
                cands.push((
                    (agg_deadline.0 - now.0) as u128 * sz as u128,
                    n as u128,
                    agg_deadline,
                    sz,
                    members[0],
                    members,
                ));
            }
            cands
                .into_iter()
                .min_by(|a, b| {
                    (a.0 * b.1)
                        .cmp(&(b.0 * a.1))
                        .then((a.2, a.3, a.4).cmp(&(b.2, b.3, b.4)))
                })
                .map(|c| (c.5, c.0 / c.1))
        }
        base => pool
            .iter()
            .map(|r| {
                let primary = match base {
                    BasePolicy::Fdf => r.deadline.0 as u128,
                    BasePolicy::Sdf => size(r) as u128,
                    _ => (r.deadline.0 - now.0) as u128 * size(r) as u128,
                };
                (primary, r.deadline, size(r), r.req_id)
            })
            .min()
            .map(|(v, _, _, id)| (vec![id], v)),
    }
}
