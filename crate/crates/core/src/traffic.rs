//! Vehicular workload: Poisson vehicle arrivals at constant velocity through
//! the RSU coverage segment, each vehicle submitting requests that expire
//! when it leaves coverage.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Poisson, Zipf};
use thiserror::Error;

use crate::model::{Catalog, Clock, DataItem, ItemId, OpType, PriorityClass, Request, VehicleId, MICROS_PER_SEC};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid `{key}`: {reason}")]
pub struct ParamError {
    pub key: &'static str,
    pub reason: String,
}

impl ParamError {
    fn new(key: &'static str, reason: impl Into<String>) -> Self {
        ParamError { key, reason: reason.into() }
    }
}

/// Scenario knobs. Defaults follow the road and radio setup of the studied
/// deployment; workload-shape knobs default to the values used by the
/// acceptance suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub road_length_m: u64,
    pub lanes_per_direction: u32,
    pub tx_range_m: u64,
    pub data_rate_bps: u64,
    pub desired_velocity_kmh: f64,
    pub velocity_jitter_fraction: f64,
    /// Requests per second offered to the RSU.
    pub request_rate: f64,
    pub requests_per_vehicle_mean: f64,
    pub num_classes: u8,
    pub p_class: Vec<f64>,
    pub catalog_size: u32,
    pub item_size_min: u64,
    pub item_size_max: u64,
    pub zipf_skew: f64,
    pub download_fraction: f64,
    /// Simulated horizon in seconds.
    pub duration_s: u64,
    pub seed: u64,
    pub strict_completion: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            road_length_m: 1000,
            lanes_per_direction: 2,
            tx_range_m: 250,
            data_rate_bps: 1_000_000,
            desired_velocity_kmh: 140.0,
            velocity_jitter_fraction: 0.1,
            request_rate: 2.0,
            requests_per_vehicle_mean: 3.0,
            num_classes: 2,
            p_class: vec![0.5, 0.5],
            catalog_size: 20,
            item_size_min: 10_000,
            item_size_max: 100_000,
            zipf_skew: 0.8,
            download_fraction: 0.9,
            duration_s: 600,
            seed: 0,
            strict_completion: true,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let finite_pos = |key, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ParamError::new(key, format!("must be a positive number, got {v}")))
            }
        };
        if self.road_length_m == 0 {
            return Err(ParamError::new("road_length_m", "must be positive"));
        }
        if self.tx_range_m == 0 {
            return Err(ParamError::new("tx_range_m", "must be positive"));
        }
        if self.tx_range_m * 2 > self.road_length_m {
            return Err(ParamError::new(
                "tx_range_m",
                format!("{} exceeds half the road length {}", self.tx_range_m, self.road_length_m),
            ));
        }
        if self.lanes_per_direction == 0 {
            return Err(ParamError::new("lanes_per_direction", "must be positive"));
        }
        if self.data_rate_bps == 0 {
            return Err(ParamError::new("data_rate_bps", "must be positive"));
        }
        finite_pos("desired_velocity_kmh", self.desired_velocity_kmh)?;
        if !(0.0..1.0).contains(&self.velocity_jitter_fraction) {
            return Err(ParamError::new("velocity_jitter_fraction", "must be in [0, 1)"));
        }
        finite_pos("request_rate", self.request_rate)?;
        finite_pos("requests_per_vehicle_mean", self.requests_per_vehicle_mean)?;
        if self.num_classes == 0 {
            return Err(ParamError::new("num_classes", "must be at least 1"));
        }
        if self.p_class.len() != self.num_classes as usize {
            return Err(ParamError::new(
                "p_class",
                format!("has {} entries, num_classes is {}", self.p_class.len(), self.num_classes),
            ));
        }
        if self.p_class.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ParamError::new("p_class", "entries must be non-negative"));
        }
        let total: f64 = self.p_class.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ParamError::new("p_class", format!("sums to {total}, not 1")));
        }
        if self.catalog_size == 0 {
            return Err(ParamError::new("catalog_size", "must be at least 1"));
        }
        if self.item_size_min == 0 {
            return Err(ParamError::new("item_size_min", "must be at least 1 byte"));
        }
        if self.item_size_max < self.item_size_min {
            return Err(ParamError::new("item_size_max", "is below item_size_min"));
        }
        if !(self.zipf_skew.is_finite() && self.zipf_skew >= 0.0) {
            return Err(ParamError::new("zipf_skew", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.download_fraction) {
            return Err(ParamError::new("download_fraction", "must be in [0, 1]"));
        }
        if self.duration_s == 0 {
            return Err(ParamError::new("duration_s", "must be positive"));
        }
        if self.duration_s > 24 * 3600 {
            return Err(ParamError::new("duration_s", "runs are limited to 24 simulated hours"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> Clock {
        Clock::from_secs(self.duration_s)
    }

    /// Length of road covered by the RSU, centred on it.
    pub fn coverage_length_m(&self) -> u64 {
        2 * self.tx_range_m
    }

    /// Vehicle arrival rate per second.
    pub fn vehicle_rate(&self) -> f64 {
        self.request_rate / self.requests_per_vehicle_mean
    }
}

/// km/h to micrometres per second, floored.
pub fn kmh_to_um_per_s(kmh: f64) -> u64 {
    (kmh * 1e9 / 3600.0).floor() as u64
}

/// Time to cross `length_m` metres at `kmh`, floored to the microsecond.
pub fn crossing_time_us(length_m: u64, kmh: f64) -> u64 {
    (length_m as f64 * 3.6 * MICROS_PER_SEC as f64 / kmh).floor() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vehicle {
    pub vehicle_id: VehicleId,
    pub enter_cov: Clock,
    pub exit_cov: Clock,
    pub velocity_um_s: u64,
    pub direction: Direction,
}

impl Vehicle {
    pub fn dwell(&self) -> u64 {
        self.exit_cov.0 - self.enter_cov.0
    }
}

/// Everything one simulation run consumes: item sizes and the request
/// stream sorted by `(submitted_at, req_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Workload {
    pub catalog: Catalog,
    pub requests: Vec<Request>,
}

/// Item sizes drawn uniformly from the configured byte range.
pub fn build_catalog<R: Rng>(params: &ScenarioParams, rng: &mut R) -> Catalog {
    Catalog::from_sizes(
        (0..params.catalog_size).map(|_| rng.random_range(params.item_size_min..=params.item_size_max)),
    )
}

/// Vehicles whose coverage entry falls inside the horizon, in entry order.
pub fn spawn_vehicles<R: Rng>(params: &ScenarioParams, rng: &mut R) -> Vec<Vehicle> {
    let gap = Exp::new(params.vehicle_rate()).expect("vehicle rate validated positive");
    let base_velocity = params.desired_velocity_kmh;
    let horizon = params.horizon();
    let mut vehicles = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += gap.sample(rng);
        let enter = Clock((t * 1e6).floor() as u64);
        if enter >= horizon {
            break;
        }
        let factor = if params.velocity_jitter_fraction > 0.0 {
            let delta = rng.random_range(0.0..params.velocity_jitter_fraction);
            if rng.random_bool(0.5) {
                1.0 + delta
            } else {
                1.0 - delta
            }
        } else {
            1.0
        };
        let direction = if rng.random_bool(0.5) {
            Direction::Forward
        } else {
            Direction::Backward
        };
        let kmh = base_velocity * factor;
        let velocity_um_s = kmh_to_um_per_s(kmh).max(1);
        let dwell = crossing_time_us(params.coverage_length_m(), kmh).max(1);
        vehicles.push(Vehicle {
            vehicle_id: vehicles.len() as VehicleId,
            enter_cov: enter,
            exit_cov: enter.after(dwell),
            velocity_um_s,
            direction,
        });
    }
    vehicles
}

/// Samples an item by Zipf popularity over ranks; item 0 is the most popular.
pub struct ItemSampler<'a> {
    catalog: &'a Catalog,
    zipf: Zipf<f64>,
}

impl<'a> ItemSampler<'a> {
    pub fn new(catalog: &'a Catalog, skew: f64) -> Self {
        assert!(!catalog.is_empty(), "empty catalog");
        let zipf = Zipf::new(catalog.len() as f64, skew).expect("zipf skew validated");
        ItemSampler { catalog, zipf }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DataItem {
        let rank = self.zipf.sample(rng) as usize;
        *self
            .catalog
            .get((rank.clamp(1, self.catalog.len()) - 1) as ItemId)
            .unwrap()
    }
}

/// Requests for one vehicle with ids left as zero; the caller numbers them
/// in global submission order.
pub fn gen_requests<R: Rng>(
    v: &Vehicle,
    params: &ScenarioParams,
    items: &ItemSampler<'_>,
    classes: &WeightedIndex<f64>,
    rng: &mut R,
) -> Vec<Request> {
    debug_assert!(v.exit_cov > v.enter_cov);
    let count = Poisson::new(params.requests_per_vehicle_mean)
        .expect("mean validated positive")
        .sample(rng) as u64;
    (0..count.max(1))
        .map(|_| {
            let submitted_at = Clock(rng.random_range(v.enter_cov.0..v.exit_cov.0));
            let op = if rng.random_bool(params.download_fraction) {
                OpType::Download
            } else {
                OpType::Upload
            };
            let class = PriorityClass(classes.sample(rng) as u8);
            let item = items.sample(rng);
            Request {
                req_id: 0,
                vehicle_id: v.vehicle_id,
                item_id: item.item_id,
                op,
                deadline: v.exit_cov,
                class,
                submitted_at,
            }
        })
        .collect()
}

/// Full workload for `params`, a pure function of the parameters and seed.
/// Requests submitted at or after the horizon are not generated.
pub fn generate_workload(params: &ScenarioParams) -> Result<Workload, ParamError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let catalog = build_catalog(params, &mut rng);
    let items = ItemSampler::new(&catalog, params.zipf_skew);
    let classes = WeightedIndex::new(&params.p_class)
        .map_err(|e| ParamError::new("p_class", e.to_string()))?;
    let horizon = params.horizon();

    let mut requests = Vec::new();
    for v in spawn_vehicles(params, &mut rng) {
        requests.extend(
            gen_requests(&v, params, &items, &classes, &mut rng)
                .into_iter()
                .filter(|r| r.submitted_at < horizon),
        );
    }
    // stable: equal timestamps keep vehicle and draw order
    requests.sort_by_key(|r| r.submitted_at);
    for (i, r) in requests.iter_mut().enumerate() {
        r.req_id = i as u64;
    }
    Ok(Workload { catalog, requests })
}
