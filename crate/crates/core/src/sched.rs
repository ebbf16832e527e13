//! Pending-request storage and the selection policies.
//!
//! Every policy answers the same question: given the pending set and the
//! clock, which request (or download broadcast group) goes on the channel
//! next. Expired requests are removed lazily by [`PendingQueue::drop_expired`]
//! and are skipped by selection even if they have not been dropped yet.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::service_time;
use crate::model::{
    ds_value, dsn_value, is_expired, tie_break, Catalog, Clock, DsnValue, ItemId, Micros, OpType,
    PriorityClass, ReqId, Request, ServiceDecision, TieKey,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedError {
    #[error("request {0} is already pending")]
    DuplicateRequest(ReqId),
    #[error("request {req_id} names unknown item {item_id}")]
    UnknownItem { req_id: ReqId, item_id: ItemId },
    #[error("invalid policy `{0}`")]
    InvalidPolicy(String),
}

/// How a download group's deadline is derived from its members' deadlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Earliest,
    /// Even-sized groups use the floored mean of the two middle deadlines.
    Median,
    /// Arithmetic mean, floored to the microsecond.
    Mean,
}

impl Aggregate {
    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Earliest => "earliest",
            Aggregate::Median => "median",
            Aggregate::Mean => "mean",
        }
    }

    /// Aggregate deadline of a non-empty set of deadlines.
    pub fn apply(self, deadlines: &[Clock]) -> Clock {
        assert!(!deadlines.is_empty(), "aggregate of empty group");
        match self {
            Aggregate::Earliest => *deadlines.iter().min().unwrap(),
            Aggregate::Median => {
                let mut sorted = deadlines.to_vec();
                sorted.sort_unstable();
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    sorted[mid]
                } else {
                    let sum = sorted[mid - 1].0 as u128 + sorted[mid].0 as u128;
                    Clock((sum / 2) as u64)
                }
            }
            Aggregate::Mean => {
                let sum: u128 = deadlines.iter().map(|d| d.0 as u128).sum();
                Clock((sum / deadlines.len() as u128) as u64)
            }
        }
    }
}

/// A single-queue selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasePolicy {
    /// First Deadline First.
    Fdf,
    /// Smallest Data-size First.
    Sdf,
    /// Minimum `(deadline - now) * size`.
    Ds,
    /// Minimum `(deadline - now) * size / n` over per-item download groups.
    Dsn(Aggregate),
}

/// A selection discipline. The multi-level variant serves strictly by
/// class, applying its inner rule within the lowest-numbered class that has
/// a schedulable request. Nesting is one level deep by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Flat(BasePolicy),
    Mlq(BasePolicy),
}

impl Policy {
    pub const FDF: Policy = Policy::Flat(BasePolicy::Fdf);
    pub const SDF: Policy = Policy::Flat(BasePolicy::Sdf);
    pub const DS: Policy = Policy::Flat(BasePolicy::Ds);

    pub fn base(self) -> BasePolicy {
        match self {
            Policy::Flat(b) | Policy::Mlq(b) => b,
        }
    }

    pub fn is_multilevel(self) -> bool {
        matches!(self, Policy::Mlq(_))
    }
}

impl fmt::Display for BasePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasePolicy::Fdf => f.write_str("fdf"),
            BasePolicy::Sdf => f.write_str("sdf"),
            BasePolicy::Ds => f.write_str("ds"),
            BasePolicy::Dsn(agg) => write!(f, "dsn:{}", agg.name()),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Flat(b) => write!(f, "{b}"),
            Policy::Mlq(b) => write!(f, "mlq({b})"),
        }
    }
}

impl FromStr for BasePolicy {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "fdf" => BasePolicy::Fdf,
            "sdf" => BasePolicy::Sdf,
            "ds" => BasePolicy::Ds,
            "dsn:earliest" => BasePolicy::Dsn(Aggregate::Earliest),
            "dsn:median" => BasePolicy::Dsn(Aggregate::Median),
            "dsn:mean" => BasePolicy::Dsn(Aggregate::Mean),
            _ => return Err(SchedError::InvalidPolicy(s.to_string())),
        })
    }
}

impl FromStr for Policy {
    type Err = SchedError;

    /// `fdf | sdf | ds | dsn:earliest | dsn:median | dsn:mean | mlq(<inner>)`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Some(inner) = t.strip_prefix("mlq(").and_then(|r| r.strip_suffix(')')) {
            return inner
                .parse::<BasePolicy>()
                .map(Policy::Mlq)
                .map_err(|_| SchedError::InvalidPolicy(s.to_string()));
        }
        t.parse::<BasePolicy>()
            .map(Policy::Flat)
            .map_err(|_| SchedError::InvalidPolicy(s.to_string()))
    }
}

/// Item sizes, channel rate and the expiry mode: everything selection needs
/// beyond the pending set itself.
#[derive(Debug, Clone, Copy)]
pub struct SchedContext<'a> {
    pub catalog: &'a Catalog,
    pub data_rate_bps: u64,
    pub strict_completion: bool,
}

impl SchedContext<'_> {
    pub fn size_of(&self, item: ItemId) -> u64 {
        self.catalog.size_of(item)
    }

    pub fn service_time_of(&self, item: ItemId) -> Micros {
        service_time(self.size_of(item), self.data_rate_bps)
    }

    pub fn is_expired(&self, r: &Request, now: Clock) -> bool {
        is_expired(r, now, self.service_time_of(r.item_id), self.strict_completion)
    }
}

/// A download broadcast candidate (or a singleton upload).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub item_id: ItemId,
    pub op: OpType,
    /// Sorted ascending.
    pub members: Vec<ReqId>,
    pub agg_deadline: Clock,
    pub size: u64,
}

impl Group {
    pub fn n(&self) -> u64 {
        self.members.len() as u64
    }
}

/// Pending requests keyed by id, with an index of pending downloads per item.
#[derive(Debug, Clone, Default)]
pub struct PendingQueue {
    requests: BTreeMap<ReqId, Request>,
    downloads_by_item: BTreeMap<ItemId, BTreeSet<ReqId>>,
}

impl PendingQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn get(&self, id: ReqId) -> Option<&Request> {
        self.requests.get(&id)
    }

    pub fn requests(&self) -> impl Iterator<Item = &Request> {
        self.requests.values()
    }

    /// Pending download ids for `item`.
    pub fn downloads_of(&self, item: ItemId) -> impl Iterator<Item = ReqId> + '_ {
        self.downloads_by_item.get(&item).into_iter().flatten().copied()
    }

    pub fn enqueue(&mut self, r: Request) -> Result<(), SchedError> {
        if self.requests.contains_key(&r.req_id) {
            return Err(SchedError::DuplicateRequest(r.req_id));
        }
        if r.op == OpType::Download {
            self.downloads_by_item.entry(r.item_id).or_default().insert(r.req_id);
        }
        self.requests.insert(r.req_id, r);
        Ok(())
    }

    fn remove(&mut self, id: ReqId) -> Option<Request> {
        let r = self.requests.remove(&id)?;
        if r.op == OpType::Download {
            if let Some(set) = self.downloads_by_item.get_mut(&r.item_id) {
                set.remove(&id);
                if set.is_empty() {
                    self.downloads_by_item.remove(&r.item_id);
                }
            }
        }
        Some(r)
    }

    /// Removes every request that can no longer be served in time and
    /// returns their ids in ascending order.
    pub fn drop_expired(&mut self, now: Clock, ctx: &SchedContext<'_>) -> Vec<ReqId> {
        let dropped: Vec<ReqId> = self
            .requests
            .values()
            .filter(|r| ctx.is_expired(r, now))
            .map(|r| r.req_id)
            .collect();
        for id in &dropped {
            self.remove(*id);
        }
        dropped
    }

    /// Removes all pending requests, returning them in id order.
    pub fn drain(&mut self) -> Vec<Request> {
        self.downloads_by_item.clear();
        std::mem::take(&mut self.requests).into_values().collect()
    }

    /// Lowest class level with at least one non-expired request.
    fn active_class(&self, now: Clock, ctx: &SchedContext<'_>) -> Option<PriorityClass> {
        self.requests
            .values()
            .filter(|r| !ctx.is_expired(r, now))
            .map(|r| r.class)
            .min()
    }

    /// One group per item with a pending non-expired download, plus one
    /// singleton group per pending non-expired upload. With `class` set, only
    /// requests of that class take part.
    pub fn build_groups(
        &self,
        now: Clock,
        agg: Aggregate,
        ctx: &SchedContext<'_>,
        class: Option<PriorityClass>,
    ) -> Vec<Group> {
        let eligible = |r: &Request| class.is_none_or(|c| r.class == c) && !ctx.is_expired(r, now);
        let mut groups = Vec::new();
        for (&item_id, ids) in &self.downloads_by_item {
            let members: Vec<&Request> = ids
                .iter()
                .map(|id| &self.requests[id])
                .filter(|r| eligible(r))
                .collect();
            if members.is_empty() {
                continue;
            }
            let deadlines: Vec<Clock> = members.iter().map(|r| r.deadline).collect();
            groups.push(Group {
                item_id,
                op: OpType::Download,
                members: members.iter().map(|r| r.req_id).collect(),
                agg_deadline: agg.apply(&deadlines),
                size: ctx.size_of(item_id),
            });
        }
        for r in self
            .requests
            .values()
            .filter(|r| r.op == OpType::Upload && eligible(r))
        {
            groups.push(Group {
                item_id: r.item_id,
                op: OpType::Upload,
                members: vec![r.req_id],
                agg_deadline: r.deadline,
                size: ctx.size_of(r.item_id),
            });
        }
        groups
    }

    /// Picks the next decision under `policy`, removes its members from the
    /// queue and returns it. `None` means nothing schedulable is pending.
    pub fn select_next(
        &mut self,
        now: Clock,
        policy: Policy,
        ctx: &SchedContext<'_>,
    ) -> Option<ServiceDecision> {
        let class = match policy {
            Policy::Flat(_) => None,
            Policy::Mlq(_) => Some(self.active_class(now, ctx)?),
        };
        let (group, value) = match policy.base() {
            BasePolicy::Dsn(agg) => self.pick_group(now, agg, ctx, class)?,
            base => self.pick_single(now, base, ctx, class)?,
        };
        for id in &group.members {
            self.remove(*id);
        }
        Some(ServiceDecision {
            item_id: group.item_id,
            op: group.op,
            members: group.members,
            value,
            start: now,
            finish: now.after(service_time(group.size, ctx.data_rate_bps)),
        })
    }

    fn pick_single(
        &self,
        now: Clock,
        base: BasePolicy,
        ctx: &SchedContext<'_>,
        class: Option<PriorityClass>,
    ) -> Option<(Group, u128)> {
        let primary = |r: &Request| -> u128 {
            match base {
                BasePolicy::Fdf => r.deadline.0 as u128,
                BasePolicy::Sdf => ctx.size_of(r.item_id) as u128,
                BasePolicy::Ds => ds_value(r.deadline, now, ctx.size_of(r.item_id)),
                BasePolicy::Dsn(_) => unreachable!("groups are ranked by pick_group"),
            }
        };
        let tie = |r: &Request| TieKey {
            deadline: r.deadline,
            size: ctx.size_of(r.item_id),
            min_req_id: r.req_id,
        };
        let best = self
            .requests
            .values()
            .filter(|r| class.is_none_or(|c| r.class == c) && !ctx.is_expired(r, now))
            .map(|r| (primary(r), tie(r), r))
            .min_by(|a, b| a.0.cmp(&b.0).then_with(|| tie_break(&a.1, &b.1)))?;
        let r = best.2;
        Some((
            Group {
                item_id: r.item_id,
                op: r.op,
                members: vec![r.req_id],
                agg_deadline: r.deadline,
                size: ctx.size_of(r.item_id),
            },
            best.0,
        ))
    }

    fn pick_group(
        &self,
        now: Clock,
        agg: Aggregate,
        ctx: &SchedContext<'_>,
        class: Option<PriorityClass>,
    ) -> Option<(Group, u128)> {
        let key = |g: &Group| -> (DsnValue, TieKey) {
            (
                dsn_value(g.agg_deadline, now, g.size, g.n()),
                TieKey {
                    deadline: g.agg_deadline,
                    size: g.size,
                    min_req_id: g.members[0],
                },
            )
        };
        self.build_groups(now, agg, ctx, class)
            .into_iter()
            .map(|g| (key(&g), g))
            .min_by(|(a, _), (b, _)| a.0.cmp(&b.0).then_with(|| tie_break(&a.1, &b.1)))
            .map(|((v, _), g)| (g, v.floor()))
    }
}
