//! Seeded instance generation: random-walk mobility, disk sensing regions,
//! i.i.d. or hotspot weight fields, and region-proportional costs.
//!
//! Every random draw for slot `t` comes from a ChaCha stream keyed by
//! `(seed, t, lane)`, so a whole trace is a pure function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridset::GridSet;
use crate::world::{GridMap, SlotRealization, WeightField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightMode {
    /// Each grid's weight is drawn i.i.d. `Uniform(0, 2·mean)` every slot.
    UniformIid,
    /// Gaussian bump centered on the map with `σ = sigma_fraction × map width`.
    Hotspot { sigma_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub map: GridMap,
    pub n_users: usize,
    pub radius_min_m: f64,
    pub radius_max_m: f64,
    pub weight_mode: WeightMode,
    pub mean_weight: f64,
    /// Multiply hotspot weights by i.i.d. `Uniform(0.5, 1.5)` per slot.
    pub temporal_noise: bool,
    pub cost_to_weight_ratio: f64,
    /// Multiplicative cost jitter range `[low, high]`.
    pub cost_jitter: (f64, f64),
    pub step_max_m: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            map: GridMap {
                width_grids: 50,
                height_grids: 50,
                grid_edge_m: 200.0,
            },
            n_users: 100,
            radius_min_m: 400.0,
            radius_max_m: 800.0,
            weight_mode: WeightMode::UniformIid,
            mean_weight: 0.5,
            temporal_noise: true,
            cost_to_weight_ratio: 0.8,
            cost_jitter: (0.5, 1.5),
            step_max_m: 200.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        GridMap::new(
            self.map.width_grids,
            self.map.height_grids,
            self.map.grid_edge_m,
        )?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_users == 0 {
            return bad("n_users must be at least 1".into());
        }
        if !(self.radius_min_m >= 0.0 && self.radius_min_m <= self.radius_max_m)
            || !self.radius_max_m.is_finite()
        {
            return bad(format!(
                "radius range [{}, {}] is invalid",
                self.radius_min_m, self.radius_max_m
            ));
        }
        if !(self.mean_weight.is_finite() && self.mean_weight > 0.0) {
            return bad(format!(
                "mean_weight must be positive, got {}",
                self.mean_weight
            ));
        }
        if !(self.cost_to_weight_ratio.is_finite() && self.cost_to_weight_ratio >= 0.0) {
            return bad(format!(
                "cost_to_weight_ratio must be >= 0, got {}",
                self.cost_to_weight_ratio
            ));
        }
        let (lo, hi) = self.cost_jitter;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("cost_jitter ({lo}, {hi}) is invalid"));
        }
        if !(self.step_max_m.is_finite() && self.step_max_m >= 0.0) {
            return bad(format!("step_max_m must be >= 0, got {}", self.step_max_m));
        }
        if let WeightMode::Hotspot { sigma_fraction } = self.weight_mode {
            if !(sigma_fraction.is_finite() && sigma_fraction > 0.0) {
                return bad(format!(
                    "sigma_fraction must be positive, got {sigma_fraction}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Mobility = 1,
    Realization = 2,
    Policy = 3,
}

/// Deterministic generator for `(seed, slot, lane)`.
pub fn slot_rng(seed: u64, slot: u64, lane: Lane) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (lane as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(slot);
    rng
}

fn hotspot_profile(map: &GridMap, mean_weight: f64, sigma_fraction: f64) -> Vec<f64> {
    let sigma = sigma_fraction * map.width_m();
    let (cx, cy) = (map.width_m() / 2.0, map.height_m() / 2.0);
    let raw: Vec<f64> = (0..map.grid_count())
        .map(|i| {
            let (x, y) = map.center(i);
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w * mean_weight / mean).collect()
}

pub fn generate_weight_field<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    _slot: u64,
    rng: &mut R,
) -> WeightField {
    let grids = config.map.grid_count();
    let weights = match config.weight_mode {
        WeightMode::UniformIid => (0..grids)
            .map(|_| rng.gen_range(0.0..2.0 * config.mean_weight))
            .collect(),
        WeightMode::Hotspot { sigma_fraction } => {
            let mut w = hotspot_profile(&config.map, config.mean_weight, sigma_fraction);
            if config.temporal_noise {
                for v in &mut w {
                    *v *= rng.gen_range(0.5..1.5);
                }
            }
            w
        }
    };
    WeightField::new(weights).expect("generated weights are finite and non-negative")
}

/// User positions in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityState {
    pub positions: Vec<(f64, f64)>,
}

impl MobilityState {
    /// Positions drawn uniformly over the map.
    pub fn uniform<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Self {
        let (w, h) = (config.map.width_m(), config.map.height_m());
        MobilityState {
            positions: (0..config.n_users)
                .map(|_| (rng.gen_range(0.0..w), rng.gen_range(0.0..h)))
                .collect(),
        }
    }
}

fn reflect(mut v: f64, upper: f64) -> f64 {
    while !(0.0..=upper).contains(&v) {
        if v < 0.0 {
            v = -v;
        }
        if v > upper {
            v = 2.0 * upper - v;
        }
    }
    v
}

/// Each user jumps by a displacement uniform in the disk of radius
/// `step_max_m`, reflected at the map boundary.
pub fn step_mobility<R: Rng + ?Sized>(
    state: &MobilityState,
    config: &ScenarioConfig,
    rng: &mut R,
) -> MobilityState {
    let (w, h) = (config.map.width_m(), config.map.height_m());
    let positions = state
        .positions
        .iter()
        .map(|&(x, y)| {
            if config.step_max_m == 0.0 {
                return (x, y);
            }
            let r = config.step_max_m * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            (reflect(x + r * a.cos(), w), reflect(y + r * a.sin(), h))
        })
        .collect();
    MobilityState { positions }
}

/// Grids whose centers lie within `radius` of `center`.
pub fn disk_region(map: &GridMap, center: (f64, f64), radius: f64) -> GridSet {
    let mut set = GridSet::new(map.grid_count());
    let e = map.grid_edge_m;
    let span = |c: f64, len: usize| {
        let lo = ((c - radius) / e - 0.5).ceil().max(0.0) as usize;
        let hi = ((c + radius) / e - 0.5).floor();
        if hi < 0.0 {
            return (1, 0);
        }
        (lo, (hi as usize).min(len - 1))
    };
    let (c0, c1) = span(center.0, map.width_grids);
    let (r0, r1) = span(center.1, map.height_grids);
    let r2 = radius * radius;
    for row in r0..=r1 {
        for col in c0..=c1 {
            let i = map.index(col, row);
            let (gx, gy) = map.center(i);
            if (gx - center.0).powi(2) + (gy - center.1).powi(2) <= r2 {
                set.insert(i);
            }
        }
    }
    set
}

pub fn build_slot_realization<R: Rng + ?Sized>(
    state: &MobilityState,
    config: &ScenarioConfig,
    slot: u64,
    rng: &mut R,
) -> SlotRealization {
    let mut regions = Vec::with_capacity(state.positions.len());
    let mut costs = Vec::with_capacity(state.positions.len());
    let (lo, hi) = config.cost_jitter;
    for &pos in &state.positions {
        let radius = if config.radius_max_m > config.radius_min_m {
            rng.gen_range(config.radius_min_m..=config.radius_max_m)
        } else {
            config.radius_min_m
        };
        let region = disk_region(&config.map, pos, radius);
        let jitter = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        costs.push(
            config.cost_to_weight_ratio * config.mean_weight * region.count() as f64 * jitter,
        );
        regions.push(region);
    }
    let weights = generate_weight_field(config, slot, rng);
    SlotRealization::new(weights, regions, costs).expect("generated slot is consistent")
}

/// Endless slot-by-slot realization stream for one seed.
#[derive(Clone, Debug)]
pub struct ScenarioStream {
    config: ScenarioConfig,
    mobility: MobilityState,
    next_slot: u64,
}

impl ScenarioStream {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mobility =
            MobilityState::uniform(&config, &mut slot_rng(config.seed, 0, Lane::Mobility));
        Ok(ScenarioStream {
            config,
            mobility,
            next_slot: 1,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn mobility(&self) -> &MobilityState {
        &self.mobility
    }

    /// Realization of the next slot (slots are numbered from 1).
    pub fn next_realization(&mut self) -> SlotRealization {
        let t = self.next_slot;
        if t > 1 {
            let mut rng = slot_rng(self.config.seed, t, Lane::Mobility);
            self.mobility = step_mobility(&self.mobility, &self.config, &mut rng);
        }
        let mut rng = slot_rng(self.config.seed, t, Lane::Realization);
        let real = build_slot_realization(&self.mobility, &self.config, t, &mut rng);
        self.next_slot += 1;
        real
    }
}

impl Iterator for ScenarioStream {
    type Item = SlotRealization;

    fn next(&mut self) -> Option<SlotRealization> {
        Some(self.next_realization())
    }
}

pub fn generate_trace(config: &ScenarioConfig, t_slots: usize) -> Result<Vec<SlotRealization>> {
    Ok(ScenarioStream::new(config.clone())?.take(t_slots).collect())
}

/// Shape of small random instances used for solver, auction and benchmark checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceShape {
    pub min_users: usize,
    pub max_users: usize,
    pub width_grids: usize,
    pub height_grids: usize,
    /// Regions are axis-aligned rectangles with sides in `1..=max_side`.
    pub max_side: usize,
    pub max_weight: f64,
    /// True costs are `Uniform(0, cost_scale × region value)`.
    pub cost_scale: f64,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            min_users: 1,
            max_users: 8,
            width_grids: 8,
            height_grids: 6,
            max_side: 4,
            max_weight: 1.0,
            cost_scale: 1.2,
        }
    }
}

pub fn random_instance<R: Rng + ?Sized>(shape: &InstanceShape, rng: &mut R) -> SlotRealization {
    let n = rng.gen_range(shape.min_users..=shape.max_users);
    random_instance_with_users(shape, n, rng)
}

pub fn random_instance_with_users<R: Rng + ?Sized>(
    shape: &InstanceShape,
    n: usize,
    rng: &mut R,
) -> SlotRealization {
    let (w, h) = (shape.width_grids, shape.height_grids);
    let grids = w * h;
    let weights: Vec<f64> = (0..grids)
        .map(|_| rng.gen_range(0.0..=shape.max_weight))
        .collect();
    let mut regions = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for _ in 0..n {
        let sw = rng.gen_range(1..=shape.max_side.min(w));
        let sh = rng.gen_range(1..=shape.max_side.min(h));
        let x0 = rng.gen_range(0..=w - sw);
        let y0 = rng.gen_range(0..=h - sh);
        let region = GridSet::from_indices(
            grids,
            (y0..y0 + sh).flat_map(|y| (x0..x0 + sw).map(move |x| y * w + x)),
        );
        let value = region.weighted_sum(&weights);
        costs.push(rng.gen_range(0.0..=shape.cost_scale * value.max(1e-6)));
        regions.push(region);
    }
    SlotRealization::new(WeightField::new(weights).unwrap(), regions, costs)
        .expect("random instance is consistent")
}
