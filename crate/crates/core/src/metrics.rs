//! Per-run bookkeeping and the service-ratio family of metrics.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{Clock, PriorityClass, ReqId, Request, ServiceDecision};

/// Counters and samples for one slice of requests (one class, or all).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SliceStats {
    pub submitted: u64,
    pub served: u64,
    /// Dropped before service.
    pub expired: u64,
    /// Still pending when the run ended.
    pub residual: u64,
    /// `finish - submitted_at` for each served request, in service order.
    pub response_us: Vec<u64>,
    /// Member count of every decision that served at least one request of
    /// this slice.
    pub broadcast_sizes: Vec<u64>,
}

impl SliceStats {
    /// Expired plus residual; residual requests are lost once their
    /// vehicles leave coverage.
    pub fn lost(&self) -> u64 {
        self.expired + self.residual
    }

    pub fn is_conserved(&self) -> bool {
        self.submitted == self.served + self.expired + self.residual
            && self.response_us.len() as u64 == self.served
    }

    pub fn service_ratio(&self) -> Option<Fraction> {
        Fraction::new(self.served as u128, self.submitted as u128)
    }

    pub fn mean_response_us(&self) -> Option<Fraction> {
        Fraction::new(
            self.response_us.iter().map(|&r| r as u128).sum(),
            self.response_us.len() as u128,
        )
    }

    pub fn mean_broadcast_size(&self) -> Option<Fraction> {
        Fraction::new(
            self.broadcast_sizes.iter().map(|&b| b as u128).sum(),
            self.broadcast_sizes.len() as u128,
        )
    }
}

/// Outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimReport {
    pub overall: SliceStats,
    pub per_class: Vec<SliceStats>,
    pub decisions: Vec<ServiceDecision>,
    /// Finish time of every served request.
    pub served: BTreeMap<ReqId, Clock>,
    pub dropped: BTreeSet<ReqId>,
    pub residual: BTreeSet<ReqId>,
}

impl SimReport {
    pub fn slice(&self, class: Option<PriorityClass>) -> Option<&SliceStats> {
        match class {
            None => Some(&self.overall),
            Some(c) => self.per_class.get(c.level() as usize),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }
}

/// Accumulates a [`SimReport`] as the engine reports outcomes.
#[derive(Debug)]
pub struct ReportBuilder {
    requests: BTreeMap<ReqId, (PriorityClass, Clock)>,
    report: SimReport,
}

impl ReportBuilder {
    pub fn new(num_classes: u8, requests: &[Request]) -> Self {
        let mut report = SimReport {
            per_class: vec![SliceStats::default(); num_classes as usize],
            ..Default::default()
        };
        for r in requests {
            report.overall.submitted += 1;
            report.per_class[r.class.level() as usize].submitted += 1;
        }
        ReportBuilder {
            requests: requests.iter().map(|r| (r.req_id, (r.class, r.submitted_at))).collect(),
            report,
        }
    }

    fn class_of(&self, id: ReqId) -> PriorityClass {
        self.requests[&id].0
    }

    pub fn record_service(&mut self, d: &ServiceDecision) {
        let size = d.members.len() as u64;
        let mut classes = BTreeSet::new();
        for &id in &d.members {
            let (class, submitted) = self.requests[&id];
            let response = d.finish.since(submitted).expect("served before submission");
            for s in [&mut self.report.overall, &mut self.report.per_class[class.level() as usize]] {
                s.served += 1;
                s.response_us.push(response);
            }
            classes.insert(class);
            let prev = self.report.served.insert(id, d.finish);
            assert!(prev.is_none(), "request {id} served twice");
        }
        self.report.overall.broadcast_sizes.push(size);
        for c in classes {
            self.report.per_class[c.level() as usize].broadcast_sizes.push(size);
        }
        self.report.decisions.push(d.clone());
    }

    pub fn record_drops(&mut self, ids: &[ReqId]) {
        for &id in ids {
            let class = self.class_of(id);
            self.report.overall.expired += 1;
            self.report.per_class[class.level() as usize].expired += 1;
            assert!(self.report.dropped.insert(id), "request {id} dropped twice");
        }
    }

    pub fn record_residual(&mut self, ids: &[ReqId]) {
        for &id in ids {
            let class = self.class_of(id);
            self.report.overall.residual += 1;
            self.report.per_class[class.level() as usize].residual += 1;
            self.report.residual.insert(id);
        }
    }

    pub fn finish(self) -> SimReport {
        self.report
    }
}

/// Exact non-negative ratio `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u128,
    pub den: u128,
}

impl Fraction {
    /// `None` when `den == 0`.
    pub fn new(num: u128, den: u128) -> Option<Self> {
        (den > 0).then_some(Fraction { num, den })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Decimal rendering with six fractional digits, rounding half to even.
    pub fn to_fixed6(self) -> String {
        const SCALE: u128 = 1_000_000;
        let scaled = self.num * SCALE;
        let mut q = scaled / self.den;
        let twice_rem = 2 * (scaled % self.den);
        if twice_rem > self.den || (twice_rem == self.den && q % 2 == 1) {
            q += 1;
        }
        format!("{}.{:06}", q / SCALE, q % SCALE)
    }
}

/// Served over submitted for one class, or overall when `class` is `None`.
/// Absent when the slice has no submissions.
pub fn service_ratio(rep: &SimReport, class: Option<PriorityClass>) -> Option<Fraction> {
    rep.slice(class)?.service_ratio()
}

/// Mean and sample standard deviation of a set of observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub count: usize,
    pub mean: f64,
    /// `n - 1` denominator; absent for a single observation.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.len() > 1).then(|| {
            let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        Some(MeanStd { count: samples.len(), mean, std })
    }
}

/// Across-seed statistics for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSummary {
    pub service_ratio: Option<MeanStd>,
    pub mean_response_us: Option<MeanStd>,
    pub mean_broadcast_size: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub overall: SliceSummary,
    pub per_class: Vec<SliceSummary>,
}

fn summarize_slice<'a>(slices: impl Iterator<Item = &'a SliceStats> + Clone) -> SliceSummary {
    let collect = |f: fn(&SliceStats) -> Option<Fraction>| -> Option<MeanStd> {
        let xs: Vec<f64> = slices.clone().filter_map(|s| f(s).map(Fraction::to_f64)).collect();
        MeanStd::from_samples(&xs)
    };
    SliceSummary {
        service_ratio: collect(SliceStats::service_ratio),
        mean_response_us: collect(SliceStats::mean_response_us),
        mean_broadcast_size: collect(SliceStats::mean_broadcast_size),
    }
}

/// Mean and standard deviation of each per-run metric across `reports`
/// (typically one per seed). Runs where a metric is undefined are skipped
/// for that metric. Panics on an empty slice.
pub fn summarize(reports: &[SimReport]) -> Summary {
    assert!(!reports.is_empty(), "summarize needs at least one report");
    let classes = reports.iter().map(SimReport::num_classes).max().unwrap_or(0);
    Summary {
        runs: reports.len(),
        overall: summarize_slice(reports.iter().map(|r| &r.overall)),
        per_class: (0..classes)
            .map(|c| summarize_slice(reports.iter().filter_map(move |r| r.per_class.get(c))))
            .collect(),
    }
}
