//! Seeded synthetic traffic snapshots with ground-truth descriptors.
//!
//! Each scene draws from its own ChaCha stream keyed by `(seed, scene_id)`,
//! so scenes can be generated in any order. Vehicles are placed in the ego
//! frame (longitudinal offset uniform in (-40, 40) m, lateral offset on
//! 3 m lane centres with a little jitter) and then carried into world
//! coordinates by a random ego pose. The descriptor is always recomputed
//! from the world-frame actors.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::caption::{generate_caption, CaptionTemplates};
use crate::error::{Error, Result};
use crate::hash::{encode_hash, SceneHash};
use crate::scene::{
    build_scene_descriptor, ActorState, DistanceBin, EgoFrame, SceneDescriptor, SectorLabel, SignKind, Vec2,
    DEFAULT_MAX_RANGE,
};

const LANE_SPACING: f64 = 3.0;
const LANE_JITTER: f64 = 0.5;
const HEADING_JITTER: f64 = 20.0 * PI / 180.0;
const CAPTION_SALT: u64 = 0x5ca1_ab1e_c0ff_ee00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Highway,
    Urban,
    Intersection,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::Highway, ScenarioKind::Urban, ScenarioKind::Intersection];

    /// Weights for same / opposing / crossing headings.
    fn direction_weights(self) -> [f64; 3] {
        match self {
            ScenarioKind::Highway => [0.55, 0.40, 0.05],
            ScenarioKind::Urban => [0.45, 0.40, 0.15],
            ScenarioKind::Intersection => [0.35, 0.25, 0.40],
        }
    }

    /// Probability that a parallel-heading vehicle sits on a far street
    /// rather than the ego road.
    fn far_street_probability(self) -> f64 {
        match self {
            ScenarioKind::Highway => 0.0,
            ScenarioKind::Urban => 0.25,
            ScenarioKind::Intersection => 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Inclusive range of vehicles placed per scene (some may fall out of range).
    pub vehicles: [u32; 2],
    pub walkers: [u32; 2],
    /// Presence probability per sign kind, in hash bit order.
    pub sign_probability: [f64; 4],
    /// Fixed kind, or `None` to draw from `kind_mix`.
    pub kind: Option<ScenarioKind>,
    /// Highway / urban / intersection weights.
    pub kind_mix: [f64; 3],
    pub captions_per_scene: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vehicles: [1, 12],
            walkers: [0, 3],
            sign_probability: [0.3, 0.15, 0.1, 0.25],
            kind: None,
            kind_mix: [0.5, 0.3, 0.2],
            captions_per_scene: 5,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("vehicle", self.vehicles), ("walker", self.walkers)] {
            if lo > hi {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] has min > max")));
            }
        }
        if let Some(p) = self.sign_probability.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::config(format!("sign probability {p} is outside [0, 1]")));
        }
        let bad_mix =
            self.kind_mix.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.kind_mix.iter().sum::<f64>() <= 0.0;
        if self.kind.is_none() && bad_mix {
            return Err(Error::config(format!("invalid scenario mix {:?}", self.kind_mix)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScene {
    pub scene_id: u64,
    pub kind: ScenarioKind,
    pub actors: Vec<ActorState>,
    pub ego: EgoFrame,
    pub descriptor: SceneDescriptor,
    #[serde(skip)]
    pub hash: Option<SceneHash>,
}

impl LabeledScene {
    pub fn hash(&self) -> SceneHash {
        self.hash.clone().unwrap_or_else(|| encode_hash(&self.descriptor))
    }
}

fn scene_rng(seed: u64, scene_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_id);
    rng
}

fn jittered_heading(rng: &mut ChaCha8Rng, base: f64) -> Vec2 {
    Vec2::from_angle(base + rng.random_range(-HEADING_JITTER..HEADING_JITTER))
}

/// Lane index on the ego road for a same-direction vehicle.
fn same_lane(rng: &mut ChaCha8Rng, kind: ScenarioKind) -> i32 {
    let (lanes, weights): (&[i32], &[f64]) = match kind {
        ScenarioKind::Highway => (&[0, 1, -1, -2], &[0.40, 0.25, 0.25, 0.10]),
        _ => (&[0, 1, -1], &[0.5, 0.2, 0.3]),
    };
    let dist = WeightedIndex::new(weights).expect("static weights");
    lanes[dist.sample(rng)]
}

fn far_street(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(3..=13) as f64 * LANE_SPACING;
    if rng.random_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Local `(position, heading angle)` for one vehicle.
fn place_vehicle(rng: &mut ChaCha8Rng, kind: ScenarioKind) -> (Vec2, f64) {
    let dist = WeightedIndex::new(kind.direction_weights()).expect("static weights");
    let x = rng.random_range(-DEFAULT_MAX_RANGE..DEFAULT_MAX_RANGE);
    let jitter = rng.random_range(-LANE_JITTER..LANE_JITTER);
    match dist.sample(rng) {
        0 => {
            let y = if rng.random_bool(kind.far_street_probability()) {
                far_street(rng)
            } else {
                f64::from(same_lane(rng, kind)) * LANE_SPACING
            };
            (Vec2::new(x, y + jitter), 0.0)
        }
        1 => {
            let y = if rng.random_bool(kind.far_street_probability()) {
                far_street(rng)
            } else {
                f64::from(rng.random_range(1..=3)) * LANE_SPACING
            };
            (Vec2::new(x, y + jitter), PI)
        }
        _ => {
            // crossing traffic: anywhere in range, heading roughly perpendicular
            let y = rng.random_range(-DEFAULT_MAX_RANGE..DEFAULT_MAX_RANGE);
            let side = if rng.random_bool(0.5) { PI / 2.0 } else { -PI / 2.0 };
            (Vec2::new(x, y), side)
        }
    }
}

fn local_point_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    Vec2::from_angle(rng.random_range(0.0..2.0 * PI)).scale(r)
}

/// One labelled scene; a pure function of `(cfg, scene_id)`.
pub fn generate_scene(cfg: &ScenarioConfig, scene_id: u64) -> Result<LabeledScene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, scene_id);
    let kind = match cfg.kind {
        Some(k) => k,
        None => {
            ScenarioKind::ALL[WeightedIndex::new(cfg.kind_mix)
                .map_err(|e| Error::config(format!("scenario mix: {e}")))?
                .sample(&mut rng)]
        }
    };

    let yaw = rng.random_range(0.0..2.0 * PI);
    let origin = Vec2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
    let ego = EgoFrame::new(origin, Vec2::from_angle(yaw))?;
    let to_world = |local: Vec2| origin + local.rotate(yaw);

    let mut actors = Vec::new();
    let mut next_id = scene_id << 16;
    let mut id = || {
        next_id += 1;
        next_id
    };

    let n_vehicles = rng.random_range(cfg.vehicles[0]..=cfg.vehicles[1]);
    for _ in 0..n_vehicles {
        let (local, angle) = place_vehicle(&mut rng, kind);
        let heading = jittered_heading(&mut rng, yaw + angle);
        actors.push(ActorState::vehicle(id(), to_world(local), heading));
    }
    let n_walkers = rng.random_range(cfg.walkers[0]..=cfg.walkers[1]);
    for _ in 0..n_walkers {
        let local = local_point_in_disc(&mut rng, DEFAULT_MAX_RANGE);
        actors.push(ActorState::walker(id(), to_world(local)));
    }
    for sign in SignKind::ALL {
        if rng.random_bool(cfg.sign_probability[sign.index()]) {
            let local = local_point_in_disc(&mut rng, 35.0);
            actors.push(ActorState::sign(id(), to_world(local), sign));
        }
    }

    let descriptor = build_scene_descriptor(&actors, &ego, DEFAULT_MAX_RANGE)?;
    let hash = Some(encode_hash(&descriptor));
    Ok(LabeledScene {
        scene_id,
        kind,
        actors,
        ego,
        descriptor,
        hash,
    })
}

/// Per-scene caption seeds, independent of the placement stream.
pub fn caption_seeds(cfg: &ScenarioConfig, scene_id: u64) -> Vec<u64> {
    let mut rng = scene_rng(cfg.seed ^ CAPTION_SALT, scene_id);
    (0..cfg.captions_per_scene).map(|_| rng.random()).collect()
}

/// One JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub kind: ScenarioKind,
    pub descriptor: SceneDescriptor,
    pub hash_hex: String,
    pub captions: Vec<String>,
    pub caption_seeds: Vec<u64>,
}

pub fn scene_record(cfg: &ScenarioConfig, scene: &LabeledScene, templates: &CaptionTemplates) -> Result<SceneRecord> {
    let seeds = caption_seeds(cfg, scene.scene_id);
    let captions = seeds
        .iter()
        .map(|&s| generate_caption(&scene.descriptor, s, templates).map(|c| c.text))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::input(format!("scene {}: {e}", scene.scene_id)))?;
    Ok(SceneRecord {
        scene_id: scene.scene_id,
        kind: scene.kind,
        descriptor: scene.descriptor.clone(),
        hash_hex: scene.hash().to_hex(),
        captions,
        caption_seeds: seeds,
    })
}

/// Occupancy histogram over a corpus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetStats {
    pub scenes: usize,
    pub kinds: [usize; 3],
    /// Scenes with at least one vehicle in the cell.
    pub occupancy: [[u64; SectorLabel::COUNT]; DistanceBin::COUNT],
    /// Vehicles per cell summed over scenes.
    pub vehicles: [[u64; SectorLabel::COUNT]; DistanceBin::COUNT],
    pub walkers: u64,
    pub signs: [u64; 4],
}

impl DatasetStats {
    pub fn add(&mut self, kind: ScenarioKind, d: &SceneDescriptor) {
        self.scenes += 1;
        self.kinds[kind as usize] += 1;
        for bin in DistanceBin::ALL {
            for sector in SectorLabel::ALL {
                let n = u64::from(d.count(bin, sector));
                self.vehicles[bin.slot()][sector.slot()] += n;
                self.occupancy[bin.slot()][sector.slot()] += u64::from(n > 0);
            }
        }
        self.walkers += u64::from(d.walkers());
        for s in d.signs() {
            self.signs[s.index()] += 1;
        }
    }

    pub fn bin_total(&self, bin: DistanceBin) -> u64 {
        self.vehicles[bin.slot()].iter().sum()
    }

    pub fn sector_total(&self, sector: SectorLabel) -> u64 {
        self.vehicles.iter().map(|row| row[sector.slot()]).sum()
    }

    pub fn empty_cells(&self) -> Vec<(DistanceBin, SectorLabel)> {
        DistanceBin::ALL
            .iter()
            .flat_map(|&b| SectorLabel::ALL.iter().map(move |&s| (b, s)))
            .filter(|&(b, s)| self.occupancy[b.slot()][s.slot()] == 0)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let grid = |table: &[[u64; SectorLabel::COUNT]; DistanceBin::COUNT]| {
            let mut bins = serde_json::Map::new();
            for bin in DistanceBin::ALL {
                let mut row = serde_json::Map::new();
                for sector in SectorLabel::ALL {
                    row.insert(sector.key().into(), table[bin.slot()][sector.slot()].into());
                }
                bins.insert(bin.key().into(), row.into());
            }
            serde_json::Value::Object(bins)
        };
        let per_bin: serde_json::Map<_, _> = DistanceBin::ALL
            .iter()
            .map(|&b| (b.key().to_string(), self.bin_total(b).into()))
            .collect();
        let per_sector: serde_json::Map<_, _> = SectorLabel::ALL
            .iter()
            .map(|&s| (s.key().to_string(), self.sector_total(s).into()))
            .collect();
        let signs: serde_json::Map<_, _> = SignKind::ALL
            .iter()
            .map(|&s| (s.key().to_string(), self.signs[s.index()].into()))
            .collect();
        json!({
            "scenes": self.scenes,
            "kinds": {
                "highway": self.kinds[0],
                "urban": self.kinds[1],
                "intersection": self.kinds[2],
            },
            "per_bin_totals": per_bin,
            "per_sector_totals": per_sector,
            "cell_vehicles": grid(&self.vehicles),
            "cell_occupancy": grid(&self.occupancy),
            "walkers": self.walkers,
            "signs": signs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub scenes: PathBuf,
    pub stats: PathBuf,
    pub summary: DatasetStats,
}

/// Writes `scenes.jsonl` and `stats.json` into `out`.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    n: usize,
    out: &Path,
    templates: &CaptionTemplates,
) -> Result<DatasetFiles> {
    if n == 0 {
        return Err(Error::config("dataset size must be at least 1"));
    }
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scenes_path = out.join("scenes.jsonl");
    let stats_path = out.join("stats.json");

    let file = File::create(&scenes_path).map_err(|e| Error::io(&scenes_path, e))?;
    let mut w = BufWriter::new(file);
    let mut stats = DatasetStats::default();
    for scene_id in 0..n as u64 {
        let scene = generate_scene(cfg, scene_id)?;
        let record = scene_record(cfg, &scene, templates)?;
        stats.add(scene.kind, &scene.descriptor);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io(&scenes_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&scenes_path, e))?;

    let mut body = serde_json::to_string_pretty(&stats.to_json())?;
    body.push('\n');
    std::fs::write(&stats_path, body).map_err(|e| Error::io(&stats_path, e))?;
    Ok(DatasetFiles {
        scenes: scenes_path,
        stats: stats_path,
        summary: stats,
    })
}

/// Reads a JSONL dataset; blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::parse_caption;

    #[test]
    fn empty_config_gives_empty_scene() {
        let cfg = ScenarioConfig {
            vehicles: [0, 0],
            walkers: [0, 0],
            sign_probability: [0.0; 4],
            ..Default::default()
        };
        let s = generate_scene(&cfg, 3).unwrap();
        assert!(s.descriptor.is_empty());
        assert!(s.actors.is_empty());
    }

    #[test]
    fn deterministic_per_scene() {
        let cfg = ScenarioConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_scene(&cfg, 5).unwrap(), generate_scene(&cfg, 5).unwrap());
        assert_ne!(
            generate_scene(&cfg, 5).unwrap().actors,
            generate_scene(&cfg, 6).unwrap().actors
        );
    }

    #[test]
    fn stored_actors_reproduce_descriptor() {
        let cfg = ScenarioConfig::default();
        for id in 0..200 {
            let s = generate_scene(&cfg, id).unwrap();
            assert_eq!(build_scene_descriptor(&s.actors, &s.ego, 40.0).unwrap(), s.descriptor);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = ScenarioConfig {
            vehicles: [3, 2],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.vehicles = [1, 2];
        cfg.sign_probability[1] = 1.5;
        assert!(cfg.validate().is_err());
        cfg.sign_probability[1] = 0.5;
        cfg.kind_mix = [0.0; 3];
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"seeds": 1}"#).is_err());
    }

    #[test]
    fn single_record_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let t = CaptionTemplates::default();
        let files = generate_dataset(&ScenarioConfig::default(), 1, dir.path(), &t).unwrap();
        let records = read_dataset(&files.scenes).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.captions.len(), 5);
        for c in &r.captions {
            let p = parse_caption(c, &t);
            assert!(p.is_clean());
            assert_eq!(p.descriptor, r.descriptor);
        }
        assert_eq!(SceneHash::from_hex(&r.hash_hex).unwrap(), encode_hash(&r.descriptor));
    }
}
