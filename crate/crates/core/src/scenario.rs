//! Highway drops: RSU row, six lanes of constant-speed vehicles, service mix.
//!
//! The highway is a ring in `x` (wrap-around at `highway_length`), so every
//! distance computed here is the shorter of the direct and the wrapped
//! separation along the road.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const LANE_COUNT: u8 = 6;
pub const KMH_TO_MPS: f64 = 1.0 / 3.6;

pub type VehicleId = u32;
pub type RsuId = u32;

/// A point on the highway plane: `x` along the road, `y` lateral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }
}

/// Euclidean distance with wrap-around in `x` on a ring of `length` meters.
pub fn wrapped_distance(a: Position, b: Position, length: f64) -> f64 {
    let dx = wrapped_dx(a.x, b.x, length);
    dx.hypot(a.y - b.y)
}

/// Shortest separation along the ring, in `[0, length / 2]`.
pub fn wrapped_dx(a: f64, b: f64, length: f64) -> f64 {
    let dx = (a - b).abs().rem_euclid(length);
    dx.min(length - dx)
}

/// Inter-vehicle gap band of a density scenario, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityBand {
    pub min: f64,
    pub max: f64,
}

impl DensityBand {
    pub const DENSE: DensityBand = DensityBand { min: 1.0, max: 100.0 };
    pub const MEDIUM: DensityBand = DensityBand { min: 100.0, max: 200.0 };
    pub const SPARSE: DensityBand = DensityBand { min: 200.0, max: 300.0 };

    /// Band of the numbered density scenario (1 dense, 2 medium, 3 sparse).
    pub fn scenario(number: u8) -> Option<DensityBand> {
        match number {
            1 => Some(Self::DENSE),
            2 => Some(Self::MEDIUM),
            3 => Some(Self::SPARSE),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.min, self.max)
    }

    pub fn mean_gap(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub position: Position,
    pub lane: u8,
    /// +1 moves toward increasing `x`, -1 toward decreasing `x`.
    pub direction: i8,
    /// Meters per second.
    pub speed: f64,
    pub wants_video: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rsu {
    pub id: RsuId,
    pub position: Position,
}

/// Static layout parameters of a drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub highway_length: f64,
    pub band: DensityBand,
    pub lane_width: f64,
    pub rsu_spacing: f64,
    /// Lateral distance between the RSU row and the first lane.
    pub rsu_offset: f64,
    pub speed_kmh: f64,
    pub video_fraction: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            highway_length: 2000.0,
            band: DensityBand::DENSE,
            lane_width: 4.0,
            rsu_spacing: 1732.0,
            rsu_offset: 35.0,
            speed_kmh: 140.0,
            video_fraction: 0.5,
        }
    }
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let band = self.band;
        if !(band.min.is_finite() && band.max.is_finite()) || band.min <= 0.0 || band.min >= band.max {
            return bad(format!("density band needs 0 < d_min < d_max, got ({}, {})", band.min, band.max));
        }
        if !(self.highway_length.is_finite() && self.highway_length > 0.0) {
            return bad(format!("highway length must be positive, got {}", self.highway_length));
        }
        if self.highway_length < band.max {
            return bad(format!(
                "highway of {} m is shorter than one inter-vehicle gap (up to {} m)",
                self.highway_length, band.max
            ));
        }
        if !(self.video_fraction > 0.0 && self.video_fraction <= 1.0) {
            return bad(format!("video fraction must lie in (0, 1], got {}", self.video_fraction));
        }
        if !(self.rsu_spacing > 0.0) || !(self.lane_width > 0.0) || !(self.speed_kmh >= 0.0) {
            return bad("RSU spacing and lane width must be positive, speed non-negative".into());
        }
        Ok(())
    }

    pub fn lane_y(&self, lane: u8) -> f64 {
        f64::from(lane) * self.lane_width
    }

    /// Lanes 0-2 travel toward decreasing `x`, lanes 3-5 toward increasing `x`.
    pub fn lane_direction(lane: u8) -> i8 {
        if lane < LANE_COUNT / 2 {
            -1
        } else {
            1
        }
    }
}

/// One immutable drop of RSUs and vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub rsus: Vec<Rsu>,
    /// Sorted by id; `vehicles[i].id == i`.
    pub vehicles: Vec<Vehicle>,
    pub highway_length: f64,
    pub density_band: DensityBand,
}

/// Place RSUs every `rsu_spacing` meters from `x = 0` and fill each lane with
/// i.i.d. uniform gaps drawn from the density band.
pub fn generate_drop(layout: &Layout, rng: &mut RngStream) -> Result<Scenario> {
    layout.validate()?;
    let length = layout.highway_length;
    let gaps = Uniform::new_inclusive(layout.band.min, layout.band.max)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let video = Bernoulli::new(layout.video_fraction).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let speed = layout.speed_kmh * KMH_TO_MPS;

    let mut vehicles = Vec::new();
    for lane in 0..LANE_COUNT {
        // First vehicle lands within one maximal gap of the origin; placement
        // stops before wrapping so the sorted in-lane gaps all come from the band.
        let mut x = rng.random_range(0.0..layout.band.max.min(length));
        while x < length {
            vehicles.push(Vehicle {
                id: vehicles.len() as VehicleId,
                position: Position::new(x, layout.lane_y(lane)),
                lane,
                direction: Layout::lane_direction(lane),
                speed,
                wants_video: false,
            });
            x += gaps.sample(rng);
        }
    }
    for vehicle in &mut vehicles {
        vehicle.wants_video = video.sample(rng);
    }

    let rsus = (0..)
        .map(|i| f64::from(i) * layout.rsu_spacing)
        .take_while(|&x| x < length)
        .enumerate()
        .map(|(i, x)| Rsu {
            id: i as RsuId,
            position: Position::new(x, -layout.rsu_offset),
        })
        .collect();

    Ok(Scenario {
        rsus,
        vehicles,
        highway_length: length,
        density_band: layout.band,
    })
}

impl Scenario {
    pub fn distance(&self, a: Position, b: Position) -> f64 {
        wrapped_distance(a, b, self.highway_length)
    }

    pub fn video_vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().filter(|v| v.wants_video)
    }

    /// Advance every vehicle by `dt` seconds in place.
    pub fn advance(&mut self, dt: f64) {
        let length = self.highway_length;
        for v in &mut self.vehicles {
            let x = v.position.x + f64::from(v.direction) * v.speed * dt;
            let mut wrapped = x.rem_euclid(length);
            // rem_euclid can round up to `length` for tiny negative inputs.
            if wrapped >= length {
                wrapped = 0.0;
            }
            v.position.x = wrapped;
        }
    }

    /// Sorted in-lane gaps (not including the wrap-around gap) for each lane.
    pub fn lane_gaps(&self) -> Vec<Vec<f64>> {
        (0..LANE_COUNT)
            .map(|lane| {
                let mut xs: Vec<f64> = self
                    .vehicles
                    .iter()
                    .filter(|v| v.lane == lane)
                    .map(|v| v.position.x)
                    .collect();
                xs.sort_by(f64::total_cmp);
                xs.windows(2).map(|w| w[1] - w[0]).collect()
            })
            .collect()
    }

    /// Versioned CSV dump, one row per vehicle.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# v2xsim scenario v1\nid,x,y,lane,direction,wants_video\n");
        for v in &self.vehicles {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{},{},{}",
                v.id,
                v.position.x,
                v.position.y,
                v.lane,
                v.direction,
                u8::from(v.wants_video)
            );
        }
        out
    }
}

/// Pure form of [`Scenario::advance`].
pub fn step_mobility(scenario: &Scenario, dt: f64) -> Result<Scenario> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("mobility step must be non-negative, got {dt}")));
    }
    let mut next = scenario.clone();
    next.advance(dt);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(length: f64, band: DensityBand) -> Layout {
        Layout {
            highway_length: length,
            band,
            ..Layout::default()
        }
    }

    #[test]
    fn gaps_respect_band() {
        for seed in 0..20 {
            let mut rng = RngStream::new(seed, "topology");
            let s = generate_drop(&layout(1732.0, DensityBand { min: 1.0, max: 100.0 }), &mut rng).unwrap();
            for gaps in s.lane_gaps() {
                assert!(gaps.iter().all(|&g| (1.0..=100.0).contains(&g)));
            }
            assert!(s.vehicles.iter().all(|v| (0.0..1732.0).contains(&v.position.x)));
        }
    }

    #[test]
    fn rsu_count_on_ten_km() {
        let mut rng = RngStream::new(1, "topology");
        let s = generate_drop(&layout(10_000.0, DensityBand::SPARSE), &mut rng).unwrap();
        assert_eq!(s.rsus.len(), 6);
        assert_eq!(s.rsus[5].position.x, 5.0 * 1732.0);
        assert!(s.rsus.iter().all(|r| r.position.y == -35.0));
    }

    #[test]
    fn lane_directions_and_speed() {
        let mut rng = RngStream::new(3, "topology");
        let s = generate_drop(&layout(2000.0, DensityBand::MEDIUM), &mut rng).unwrap();
        for v in &s.vehicles {
            assert_eq!(v.direction, if v.lane < 3 { -1 } else { 1 });
            assert!((v.speed - 38.888_888).abs() < 1e-5);
            assert_eq!(v.position.y, 4.0 * f64::from(v.lane));
        }
        assert!(s.vehicles.iter().enumerate().all(|(i, v)| v.id as usize == i));
    }

    #[test]
    fn rejects_bad_layouts() {
        let mut rng = RngStream::new(0, "topology");
        let inverted = layout(2000.0, DensityBand { min: 100.0, max: 100.0 });
        assert!(generate_drop(&inverted, &mut rng).is_err());
        let short = layout(50.0, DensityBand { min: 60.0, max: 80.0 });
        assert!(generate_drop(&short, &mut rng).is_err());
        let mut no_video = layout(2000.0, DensityBand::DENSE);
        no_video.video_fraction = 0.0;
        assert!(generate_drop(&no_video, &mut rng).is_err());
    }

    #[test]
    fn mobility_wraps() {
        let mut rng = RngStream::new(0, "topology");
        let mut s = generate_drop(&layout(10_000.0, DensityBand::SPARSE), &mut rng).unwrap();
        let v = &mut s.vehicles[0];
        v.position.x = 9999.0;
        v.direction = 1;
        let next = step_mobility(&s, 1.0).unwrap();
        assert!((next.vehicles[0].position.x - 37.89).abs() < 0.01);
        assert_eq!(step_mobility(&s, 0.0).unwrap(), s);
        assert!(step_mobility(&s, -1.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let p = Position::new;
        assert_eq!(wrapped_distance(p(5.0, 2.0), p(5.0, 2.0), 10_000.0), 0.0);
        assert!((wrapped_distance(p(0.0, 0.0), p(9990.0, 0.0), 10_000.0) - 10.0).abs() < 1e-9);
        assert!((wrapped_distance(p(0.0, 0.0), p(3.0, 4.0), 10_000.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_vehicle() {
        let mut rng = RngStream::new(9, "topology");
        let s = generate_drop(&layout(2000.0, DensityBand::SPARSE), &mut rng).unwrap();
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), s.vehicles.len() + 2);
        assert!(csv.starts_with("# v2xsim scenario v1\nid,x,y,lane,direction,wants_video\n"));
    }
}
