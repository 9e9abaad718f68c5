//! Ego-centric scene model.
//!
//! Actors are classified relative to the ego vehicle into one of four
//! distance bins (`[0,10)`, `[10,20)`, `[20,30)`, `[30,40)` meters) and one
//! of twelve lane-relative sectors. The per-cell vehicle counts, the set of
//! applicable traffic signs and the walker count form a [`SceneDescriptor`].
//!
//! Coordinates are planar. In the ego frame `x` is the offset along the ego
//! forward vector and `y` the offset along its left vector.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Tolerance used for unit-norm and orthogonality checks.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Default lane width in meters.
pub const DEFAULT_LANE_WIDTH: f64 = 3.0;
/// Default sensing range in meters.
pub const DEFAULT_MAX_RANGE: f64 = 40.0;
/// Adjacent-lane vehicles with `|x|` below this are "beside" the ego vehicle.
pub const SIDE_THRESHOLD: f64 = 2.0;
/// Walker counts saturate here (3-bit hash field).
pub const MAX_WALKERS: u8 = 7;
/// Width of one distance bin in meters.
pub const BIN_WIDTH: f64 = 10.0;

const SAME_DIRECTION_DOT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    /// Counter-clockwise rotation by `theta` radians.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Perpendicular pointing to the left of `self`.
    pub fn perp_left(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

fn is_unit(v: Vec2) -> bool {
    (v.norm() - 1.0).abs() <= UNIT_TOLERANCE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Vehicle,
    Walker,
    TrafficSign,
}

/// Traffic sign kinds, in hash bit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignKind {
    TrafficLight,
    StopSign,
    YieldSign,
    SpeedLimit,
}

impl SignKind {
    pub const ALL: [SignKind; 4] = [
        SignKind::TrafficLight,
        SignKind::StopSign,
        SignKind::YieldSign,
        SignKind::SpeedLimit,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            SignKind::TrafficLight => "traffic_light",
            SignKind::StopSign => "stop_sign",
            SignKind::YieldSign => "yield_sign",
            SignKind::SpeedLimit => "speed_limit",
        }
    }
}

impl FromStr for SignKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SignKind::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::input(format!("unknown traffic sign kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub id: u64,
    pub position: Vec2,
    pub heading: Vec2,
    pub kind: ActorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_kind: Option<SignKind>,
}

impl ActorState {
    pub fn vehicle(id: u64, position: Vec2, heading: Vec2) -> Self {
        Self {
            id,
            position,
            heading,
            kind: ActorKind::Vehicle,
            sign_kind: None,
        }
    }

    pub fn walker(id: u64, position: Vec2) -> Self {
        Self {
            id,
            position,
            heading: Vec2::new(1.0, 0.0),
            kind: ActorKind::Walker,
            sign_kind: None,
        }
    }

    pub fn sign(id: u64, position: Vec2, sign: SignKind) -> Self {
        Self {
            id,
            position,
            heading: Vec2::new(1.0, 0.0),
            kind: ActorKind::TrafficSign,
            sign_kind: Some(sign),
        }
    }
}

/// Ego pose: origin plus orthonormal forward/left axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoFrame {
    position: Vec2,
    forward: Vec2,
    left: Vec2,
}

impl EgoFrame {
    /// Builds a frame from a unit forward vector; `left` is its
    /// counter-clockwise perpendicular.
    pub fn new(position: Vec2, forward: Vec2) -> Result<Self> {
        Self::from_axes(position, forward, forward.perp_left())
    }

    pub fn from_axes(position: Vec2, forward: Vec2, left: Vec2) -> Result<Self> {
        if !is_unit(forward) || !is_unit(left) {
            return Err(Error::input("ego forward/left axes must be unit vectors"));
        }
        if forward.dot(left).abs() > UNIT_TOLERANCE {
            return Err(Error::input("ego forward and left axes are not orthogonal"));
        }
        Ok(Self {
            position,
            forward,
            left,
        })
    }

    pub fn position(&self) -> Vec2 {
        self.position
    }

    pub fn forward(&self) -> Vec2 {
        self.forward
    }

    pub fn left(&self) -> Vec2 {
        self.left
    }

    /// World point to ego coordinates `(x forward, y left)`.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let rel = p - self.position;
        Vec2::new(rel.dot(self.forward), rel.dot(self.left))
    }
}

/// One of the four 10 m distance bins, indexed 1 to 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DistanceBin(u8);

impl DistanceBin {
    pub const COUNT: usize = 4;
    pub const ALL: [DistanceBin; 4] = [DistanceBin(1), DistanceBin(2), DistanceBin(3), DistanceBin(4)];

    pub fn new(index: u8) -> Result<Self> {
        if (1..=4).contains(&index) {
            Ok(Self(index))
        } else {
            Err(Error::input(format!("distance bin index {index} outside 1..=4")))
        }
    }

    /// Bin containing `distance`, half-open on the right.
    pub fn from_distance(distance: f64) -> Option<Self> {
        if !(0.0..BIN_WIDTH * 4.0).contains(&distance) {
            return None;
        }
        let idx = (distance / BIN_WIDTH).floor() as u8;
        Some(Self(idx.min(3) + 1))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Zero-based position, for array indexing.
    pub fn slot(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn from_slot(slot: usize) -> Self {
        Self::ALL[slot]
    }

    pub fn range(self) -> (f64, f64) {
        let lo = f64::from(self.0 - 1) * BIN_WIDTH;
        (lo, lo + BIN_WIDTH)
    }

    pub fn key(self) -> &'static str {
        ["0-10m", "10-20m", "20-30m", "30-40m"][self.slot()]
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.key() == key)
    }
}

impl fmt::Display for DistanceBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// The twelve lane-relative sectors. Declaration order is the canonical
/// order used by hashing and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectorLabel {
    LeftLaneFrontSide,
    LeftSide,
    LeftLaneBackSide,
    InLaneFrontSide,
    InLaneBackSide,
    RightLaneFrontSide,
    RightSide,
    RightLaneBackSide,
    OpposingLaneFront,
    OpposingLaneBack,
    OtherLaneFront,
    OtherLaneBack,
}

impl SectorLabel {
    pub const COUNT: usize = 12;
    pub const ALL: [SectorLabel; 12] = [
        SectorLabel::LeftLaneFrontSide,
        SectorLabel::LeftSide,
        SectorLabel::LeftLaneBackSide,
        SectorLabel::InLaneFrontSide,
        SectorLabel::InLaneBackSide,
        SectorLabel::RightLaneFrontSide,
        SectorLabel::RightSide,
        SectorLabel::RightLaneBackSide,
        SectorLabel::OpposingLaneFront,
        SectorLabel::OpposingLaneBack,
        SectorLabel::OtherLaneFront,
        SectorLabel::OtherLaneBack,
    ];

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn from_slot(slot: usize) -> Self {
        Self::ALL[slot]
    }

    pub fn key(self) -> &'static str {
        match self {
            SectorLabel::LeftLaneFrontSide => "left_lane_front_side",
            SectorLabel::LeftSide => "left_side",
            SectorLabel::LeftLaneBackSide => "left_lane_back_side",
            SectorLabel::InLaneFrontSide => "in_lane_front_side",
            SectorLabel::InLaneBackSide => "in_lane_back_side",
            SectorLabel::RightLaneFrontSide => "right_lane_front_side",
            SectorLabel::RightSide => "right_side",
            SectorLabel::RightLaneBackSide => "right_lane_back_side",
            SectorLabel::OpposingLaneFront => "opposing_lane_front",
            SectorLabel::OpposingLaneBack => "opposing_lane_back",
            SectorLabel::OtherLaneFront => "other_lane_front",
            SectorLabel::OtherLaneBack => "other_lane_back",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.key() == key)
    }

    /// Sectors populated by same-direction traffic.
    pub fn is_same_direction(self) -> bool {
        self.slot() < 8
    }
}

impl fmt::Display for SectorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Same,
    Opposing,
    Other,
}

fn require_vehicle(actor: &ActorState) -> Result<()> {
    if actor.kind != ActorKind::Vehicle {
        return Err(Error::input(format!(
            "actor {} is a {:?}, only vehicles have a lane direction",
            actor.id, actor.kind
        )));
    }
    if !is_unit(actor.heading) {
        return Err(Error::input(format!(
            "actor {} heading has norm {}, expected 1",
            actor.id,
            actor.heading.norm()
        )));
    }
    Ok(())
}

/// Same if the heading dot product exceeds 0.5, opposing below -0.5, other
/// otherwise. Both boundaries are strict, so exactly +-0.5 is `Other`.
pub fn classify_direction(actor: &ActorState, ego: &EgoFrame) -> Result<Direction> {
    require_vehicle(actor)?;
    let dot = ego.forward.dot(actor.heading);
    Ok(if dot > SAME_DIRECTION_DOT {
        Direction::Same
    } else if dot < -SAME_DIRECTION_DOT {
        Direction::Opposing
    } else {
        Direction::Other
    })
}

pub fn classify_sector(actor: &ActorState, ego: &EgoFrame, lane_width: f64) -> Result<SectorLabel> {
    if !(lane_width > 0.0) {
        return Err(Error::config(format!("lane width must be positive, got {lane_width}")));
    }
    let direction = classify_direction(actor, ego)?;
    let local = ego.to_local(actor.position);
    let front = local.x >= 0.0;
    let half = lane_width / 2.0;
    let beside = local.x.abs() < SIDE_THRESHOLD;

    use SectorLabel::*;
    let label = match direction {
        Direction::Same if local.y > half => {
            if beside {
                LeftSide
            } else if front {
                LeftLaneFrontSide
            } else {
                LeftLaneBackSide
            }
        }
        Direction::Same if local.y < -half => {
            if beside {
                RightSide
            } else if front {
                RightLaneFrontSide
            } else {
                RightLaneBackSide
            }
        }
        Direction::Same => {
            if front {
                InLaneFrontSide
            } else {
                InLaneBackSide
            }
        }
        Direction::Opposing => {
            if front {
                OpposingLaneFront
            } else {
                OpposingLaneBack
            }
        }
        Direction::Other => {
            if front {
                OtherLaneFront
            } else {
                OtherLaneBack
            }
        }
    };
    Ok(label)
}

/// Per-scene vehicle counts per (bin, sector) cell plus signs and walkers.
///
/// Per-bin totals are always derived from the cell counts, so they cannot
/// drift out of sync.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SceneDescriptor {
    cells: [[u32; SectorLabel::COUNT]; DistanceBin::COUNT],
    signs: BTreeSet<SignKind>,
    walkers: u8,
}

impl SceneDescriptor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, bin: DistanceBin, sector: SectorLabel) -> u32 {
        self.cells[bin.slot()][sector.slot()]
    }

    pub fn set_count(&mut self, bin: DistanceBin, sector: SectorLabel, count: u32) {
        self.cells[bin.slot()][sector.slot()] = count;
    }

    pub fn add_count(&mut self, bin: DistanceBin, sector: SectorLabel, n: u32) {
        let cell = &mut self.cells[bin.slot()][sector.slot()];
        *cell = cell.saturating_add(n);
    }

    pub fn cells(&self) -> &[[u32; SectorLabel::COUNT]; DistanceBin::COUNT] {
        &self.cells
    }

    pub fn bin_counts(&self, bin: DistanceBin) -> &[u32; SectorLabel::COUNT] {
        &self.cells[bin.slot()]
    }

    pub fn total_vehicles(&self, bin: DistanceBin) -> u32 {
        self.cells[bin.slot()].iter().sum()
    }

    pub fn signs(&self) -> &BTreeSet<SignKind> {
        &self.signs
    }

    pub fn insert_sign(&mut self, sign: SignKind) {
        self.signs.insert(sign);
    }

    pub fn walkers(&self) -> u8 {
        self.walkers
    }

    /// Stores `min(n, 7)`.
    pub fn set_walkers(&mut self, n: u32) {
        self.walkers = n.min(u32::from(MAX_WALKERS)) as u8;
    }

    pub fn is_empty(&self) -> bool {
        self.walkers == 0 && self.signs.is_empty() && self.cells.iter().flatten().all(|&c| c == 0)
    }

    /// Non-zero cells of one bin in canonical sector order.
    pub fn occupied(&self, bin: DistanceBin) -> impl Iterator<Item = (SectorLabel, u32)> + '_ {
        self.cells[bin.slot()]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| (SectorLabel::from_slot(s), c))
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("descriptor serialization is infallible")
    }

    /// Pretty JSON with four-space indentation.
    pub fn to_json_pretty(&self) -> String {
        let mut out = Vec::new();
        let fmt = serde_json::ser::PrettyFormatter::with_indent(b"    ");
        let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
        self.serialize(&mut ser)
            .expect("descriptor serialization is infallible");
        String::from_utf8(out).expect("serde_json emits utf-8")
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::input("scene descriptor must be a JSON object"))?;
        let mut d = SceneDescriptor::new();
        for (key, v) in obj {
            if let Some(bin) = DistanceBin::from_key(key) {
                let bin_obj = v
                    .as_object()
                    .ok_or_else(|| Error::input(format!("`{key}` must be an object")))?;
                let mut stated_total = None;
                for (k, c) in bin_obj {
                    let n = c
                        .as_u64()
                        .and_then(|n| u32::try_from(n).ok())
                        .ok_or_else(|| Error::input(format!("`{key}.{k}` must be a non-negative integer")))?;
                    if k == "total_vehicles" {
                        stated_total = Some(n);
                    } else if let Some(sector) = SectorLabel::from_key(k) {
                        d.set_count(bin, sector, n);
                    } else {
                        return Err(Error::input(format!("unknown sector key `{k}` in `{key}`")));
                    }
                }
                if let Some(total) = stated_total {
                    if total != d.total_vehicles(bin) {
                        return Err(Error::input(format!(
                            "`{key}.total_vehicles` is {total} but sector counts sum to {}",
                            d.total_vehicles(bin)
                        )));
                    }
                }
            } else if key == "applicable_traffic_signs" {
                let arr = v
                    .as_array()
                    .ok_or_else(|| Error::input("`applicable_traffic_signs` must be an array"))?;
                for s in arr {
                    let s = s
                        .as_str()
                        .ok_or_else(|| Error::input("traffic sign entries must be strings"))?;
                    d.insert_sign(s.parse()?);
                }
            } else if key == "walkers" {
                let n = v
                    .as_u64()
                    .ok_or_else(|| Error::input("`walkers` must be a non-negative integer"))?;
                d.set_walkers(u32::try_from(n).unwrap_or(u32::MAX));
            } else {
                return Err(Error::input(format!("unknown descriptor key `{key}`")));
            }
        }
        Ok(d)
    }
}

impl Serialize for SceneDescriptor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Bin<'a>(&'a SceneDescriptor, DistanceBin);
        impl Serialize for Bin<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(None)?;
                map.serialize_entry("total_vehicles", &self.0.total_vehicles(self.1))?;
                for (sector, n) in self.0.occupied(self.1) {
                    map.serialize_entry(sector.key(), &n)?;
                }
                map.end()
            }
        }

        let mut map = serializer.serialize_map(Some(DistanceBin::COUNT + 2))?;
        for bin in DistanceBin::ALL {
            map.serialize_entry(bin.key(), &Bin(self, bin))?;
        }
        let signs: Vec<&str> = self.signs.iter().map(|s| s.key()).collect();
        map.serialize_entry("applicable_traffic_signs", &signs)?;
        map.serialize_entry("walkers", &self.walkers)?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for SceneDescriptor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        SceneDescriptor::from_json_value(&value).map_err(de::Error::custom)
    }
}

/// Bins vehicles within `max_range` by distance and sector, counts walkers
/// (clamped to 7) and collects sign kinds. Distances are compared strictly,
/// so an actor at exactly `max_range` is dropped.
pub fn build_scene_descriptor(actors: &[ActorState], ego: &EgoFrame, max_range: f64) -> Result<SceneDescriptor> {
    build_scene_descriptor_with(actors, ego, max_range, DEFAULT_LANE_WIDTH)
}

pub fn build_scene_descriptor_with(
    actors: &[ActorState],
    ego: &EgoFrame,
    max_range: f64,
    lane_width: f64,
) -> Result<SceneDescriptor> {
    if !(max_range > 0.0) {
        return Err(Error::config(format!("max range must be positive, got {max_range}")));
    }
    let mut d = SceneDescriptor::new();
    let mut walkers = 0u32;
    for actor in actors {
        let distance = (actor.position - ego.position).norm();
        if distance >= max_range {
            continue;
        }
        match actor.kind {
            ActorKind::Vehicle => {
                // Beyond the last bin nothing can be recorded.
                let Some(bin) = DistanceBin::from_distance(distance) else {
                    continue;
                };
                let sector = classify_sector(actor, ego, lane_width)?;
                d.add_count(bin, sector, 1);
            }
            ActorKind::Walker => walkers += 1,
            ActorKind::TrafficSign => {
                if let Some(sign) = actor.sign_kind {
                    d.insert_sign(sign);
                }
            }
        }
    }
    d.set_walkers(walkers);
    Ok(d)
}

macro_rules! serde_by_key {
    ($ty:ty, $what:literal) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.key())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let key = String::deserialize(d)?;
                <$ty>::from_key(&key).ok_or_else(|| de::Error::custom(format!("unknown {} `{key}`", $what)))
            }
        }
    };
}

serde_by_key!(DistanceBin, "distance bin");
serde_by_key!(SectorLabel, "sector");
