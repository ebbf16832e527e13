//! Domain records shared by the scheduler, the workload generator and the
//! simulation engine, plus the scalar value functions the policies rank by.
//!
//! Time is integer microseconds everywhere. Value arithmetic is integer or
//! exact rational so that runs are reproducible bit-for-bit.

use std::cmp::Ordering;
use std::fmt;

/// Duration in microseconds.
pub type Micros = u64;

pub type ReqId = u64;
pub type VehicleId = u64;
pub type ItemId = u32;

pub const MICROS_PER_SEC: u64 = 1_000_000;

/// Simulation time in microseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Clock(pub u64);

impl Clock {
    pub const ZERO: Clock = Clock(0);

    pub const fn from_micros(us: u64) -> Self {
        Clock(us)
    }

    pub const fn from_secs(s: u64) -> Self {
        Clock(s * MICROS_PER_SEC)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn after(self, d: Micros) -> Clock {
        Clock(self.0.checked_add(d).expect("clock overflow"))
    }

    /// `self - earlier`, or `None` when `earlier` is later than `self`.
    pub fn since(self, earlier: Clock) -> Option<Micros> {
        self.0.checked_sub(earlier.0)
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpType {
    Download,
    Upload,
}

/// Request class carried in the TYPE field. Level 0 is the most important.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PriorityClass(pub u8);

impl PriorityClass {
    pub const HIGHEST: PriorityClass = PriorityClass(0);

    pub fn level(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataItem {
    pub item_id: ItemId,
    /// Bytes, at least 1.
    pub size: u64,
}

/// Data items indexed by their id; ids are dense `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Catalog {
    items: Vec<DataItem>,
}

impl Catalog {
    /// Builds a catalog where item `i` has size `sizes[i]`.
    ///
    /// Panics if any size is zero.
    pub fn from_sizes(sizes: impl IntoIterator<Item = u64>) -> Self {
        let items = sizes
            .into_iter()
            .enumerate()
            .map(|(i, size)| {
                assert!(size >= 1, "item {i} has zero size");
                DataItem {
                    item_id: i as ItemId,
                    size,
                }
            })
            .collect();
        Catalog { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ItemId) -> Option<&DataItem> {
        self.items.get(id as usize)
    }

    /// Size of `id` in bytes. Panics on an unknown id.
    pub fn size_of(&self, id: ItemId) -> u64 {
        self.items[id as usize].size
    }

    pub fn items(&self) -> &[DataItem] {
        &self.items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Request {
    pub req_id: ReqId,
    pub vehicle_id: VehicleId,
    pub item_id: ItemId,
    pub op: OpType,
    pub deadline: Clock,
    pub class: PriorityClass,
    pub submitted_at: Clock,
}

/// One scheduling outcome: a single request, or a broadcast serving every
/// listed download of the same item.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceDecision {
    pub item_id: ItemId,
    pub op: OpType,
    /// Sorted ascending, never empty.
    pub members: Vec<ReqId>,
    /// Primary ranking value of the winner under the active policy (floored
    /// for D*S/N). Informational only.
    pub value: u128,
    pub start: Clock,
    pub finish: Clock,
}

impl ServiceDecision {
    pub fn duration(&self) -> Micros {
        self.finish.0 - self.start.0
    }
}

/// `(deadline - now) * size`.
///
/// Panics if `deadline < now`; expired requests must be filtered first.
pub fn ds_value(deadline: Clock, now: Clock, size: u64) -> u128 {
    let slack = deadline
        .since(now)
        .unwrap_or_else(|| panic!("ds_value: deadline {deadline} before now {now}"));
    slack as u128 * size as u128
}

/// `(deadline - now) * size / n`, kept as an exact fraction.
///
/// Ordering compares the fractions exactly without floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsnValue {
    pub slack: Micros,
    pub size: u64,
    pub n: u64,
}

/// Panics if `agg_deadline < now` or `n == 0`.
pub fn dsn_value(agg_deadline: Clock, now: Clock, size: u64, n: u64) -> DsnValue {
    assert!(n >= 1, "dsn_value: empty group");
    let slack = agg_deadline
        .since(now)
        .unwrap_or_else(|| panic!("dsn_value: deadline {agg_deadline} before now {now}"));
    DsnValue { slack, size, n }
}

impl DsnValue {
    /// `slack * size`, the numerator.
    pub fn numerator(&self) -> u128 {
        self.slack as u128 * self.size as u128
    }

    pub fn floor(&self) -> u128 {
        self.numerator() / self.n as u128
    }
}

impl Ord for DsnValue {
    fn cmp(&self, other: &Self) -> Ordering {
        // a/p vs b/q. Integer parts first, then the remainders cross-multiplied;
        // both remainder products are below 2^128 so nothing can overflow.
        let (a, p) = (self.numerator(), self.n as u128);
        let (b, q) = (other.numerator(), other.n as u128);
        (a / p)
            .cmp(&(b / q))
            .then_with(|| ((a % p) * q).cmp(&((b % q) * p)))
    }
}

impl PartialOrd for DsnValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Without strict completion a request expires only once its deadline has
/// passed. With it, a request also expires when service started now would
/// finish after the deadline. Finishing exactly at the deadline is on time.
pub fn is_expired(r: &Request, now: Clock, service_duration: Micros, strict_completion: bool) -> bool {
    if strict_completion {
        (r.deadline.0 as u128) < now.0 as u128 + service_duration as u128
    } else {
        r.deadline < now
    }
}

/// Secondary keys used when two candidates have the same primary value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TieKey {
    pub deadline: Clock,
    pub size: u64,
    pub min_req_id: ReqId,
}

/// Earlier deadline, then smaller size, then smaller request id.
pub fn tie_break(a: &TieKey, b: &TieKey) -> Ordering {
    a.deadline
        .cmp(&b.deadline)
        .then(a.size.cmp(&b.size))
        .then(a.min_req_id.cmp(&b.min_req_id))
}
