//! Versioned JSON artifacts with atomic writes.
//!
//! Bulk float arrays are stored as base64 of little-endian `f64` bytes so
//! files are compact and round-trip bit-exactly.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{GainField, ShadowingMethod, TruthParams};
use crate::error::{Error, Result};
use crate::grid::{Cell, GenParams, GridSpec, JointAction, Point3, SwarmState, UrbanWorld};
use crate::kriging::KrigingModel;
use crate::mission::MissionConfig;
use crate::planners::{MissionPlan, PlannerKind};

pub const SCHEMA_VERSION: u32 = 1;

pub(crate) mod f64_b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn encode(v: &[f64]) -> String {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(s: &str) -> std::result::Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
        if bytes.len() % 8 != 0 {
            return Err(format!("{} bytes is not a whole number of f64", bytes.len()));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let s = String::deserialize(d)?;
        decode(&s).map_err(serde::de::Error::custom)
    }
}

/// Serialize `value` as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    out.push(b'\n');
    out
}

/// Write via a temporary sibling file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn check_schema(path: &Path, found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "{}: schema_version {found}, expected {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("artifact types serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub schema_version: u32,
    pub grid: GridSpec,
    #[serde(with = "f64_b64")]
    pub heights: Vec<f64>,
    #[serde(default)]
    pub nofly: BTreeSet<Cell>,
    pub seed: Option<u64>,
    pub params: Option<GenParams>,
    pub offset: Cell,
}

impl From<&UrbanWorld> for WorldFile {
    fn from(w: &UrbanWorld) -> Self {
        WorldFile {
            schema_version: SCHEMA_VERSION,
            grid: w.grid,
            heights: w.heights.clone(),
            nofly: w.nofly.clone(),
            seed: w.seed,
            params: w.params.clone(),
            offset: w.offset,
        }
    }
}

pub fn save_world(path: &Path, world: &UrbanWorld) -> Result<()> {
    write_json(path, &WorldFile::from(world))
}

pub fn load_world(path: &Path) -> Result<UrbanWorld> {
    let f: WorldFile = read_json(path)?;
    check_schema(path, f.schema_version)?;
    let mut w = UrbanWorld::new(f.grid, f.heights)?;
    w.nofly = f.nofly;
    w.seed = f.seed;
    w.params = f.params;
    w.offset = f.offset;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFile {
    pub schema_version: u32,
    pub grid: GridSpec,
    pub tx: Point3,
    pub seed: u64,
    pub truth: TruthParams,
    pub shadowing: ShadowingMethod,
    #[serde(with = "f64_b64")]
    pub pred_plane: Vec<f64>,
    #[serde(with = "f64_b64")]
    pub uav_plane: Vec<f64>,
}

pub fn save_field(path: &Path, field: &GainField) -> Result<()> {
    write_json(
        path,
        &FieldFile {
            schema_version: SCHEMA_VERSION,
            grid: field.grid,
            tx: field.tx,
            seed: field.seed,
            truth: field.truth,
            shadowing: field.shadowing,
            pred_plane: field.pred_plane.clone(),
            uav_plane: field.uav_plane.clone(),
        },
    )
}

pub fn load_field(path: &Path) -> Result<GainField> {
    let f: FieldFile = read_json(path)?;
    check_schema(path, f.schema_version)?;
    let n = f.grid.n_cells();
    if f.pred_plane.len() != n || f.uav_plane.len() != n {
        return Err(Error::Malformed(format!("{}: plane length does not match the grid", path.display())));
    }
    Ok(GainField {
        grid: f.grid,
        tx: f.tx,
        seed: f.seed,
        truth: f.truth,
        shadowing: f.shadowing,
        pred_plane: f.pred_plane,
        uav_plane: f.uav_plane,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub model: KrigingModel,
}

pub fn save_model(path: &Path, model: &KrigingModel) -> Result<()> {
    write_json(path, &ModelFile { schema_version: SCHEMA_VERSION, model: model.clone() })
}

pub fn load_model(path: &Path) -> Result<KrigingModel> {
    let f: ModelFile = read_json(path)?;
    check_schema(path, f.schema_version)?;
    f.model.validate()?;
    Ok(f.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub schema_version: u32,
    pub planner: PlannerKind,
    pub seed: u64,
    pub params: MissionConfig,
    pub actions: Vec<JointAction>,
    pub positions: Vec<SwarmState>,
    pub step_rewards: Vec<f64>,
    pub objective_value: f64,
    #[serde(default)]
    pub events: Vec<String>,
}

impl PlanFile {
    pub fn new(plan: &MissionPlan, config: &MissionConfig) -> Self {
        PlanFile {
            schema_version: SCHEMA_VERSION,
            planner: plan.planner,
            seed: config.planner_seed,
            params: config.clone(),
            actions: plan.actions.clone(),
            positions: plan.positions.clone(),
            step_rewards: plan.step_rewards.clone(),
            objective_value: plan.objective_value,
            events: plan.events.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub config: MissionConfig,
}

pub fn load_mission_config(path: &Path) -> Result<MissionConfig> {
    let f: ConfigFile = read_json(path)?;
    check_schema(path, f.schema_version)?;
    f.config.validate()?;
    Ok(f.config)
}

pub fn save_mission_config(path: &Path, config: &MissionConfig) -> Result<()> {
    write_json(path, &ConfigFile { schema_version: SCHEMA_VERSION, config: config.clone() })
}

/// Paths of a mission result bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub plan: PathBuf,
    pub log: PathBuf,
    pub posterior: PathBuf,
    pub snapshots: PathBuf,
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    inner: &'a T,
}

/// Write plan, log, posterior and snapshots of a mission into `dir`.
pub fn save_bundle(dir: &Path, result: &crate::mission::MissionResult) -> Result<Bundle> {
    let b = Bundle {
        plan: dir.join("plan.json"),
        log: dir.join("log.json"),
        posterior: dir.join("posterior.json"),
        snapshots: dir.join("snapshots.json"),
    };
    write_json(&b.plan, &PlanFile::new(&result.trajectory, &result.config))?;
    write_json(&b.log, &Versioned { schema_version: SCHEMA_VERSION, inner: &result.log })?;
    #[derive(Serialize)]
    struct Post<'a> {
        cells: &'a [Cell],
        #[serde(with = "f64_b64")]
        mean: &'a [f64],
        #[serde(with = "f64_b64")]
        variance: &'a [f64],
    }
    let p = &result.posterior;
    write_json(
        &b.posterior,
        &Versioned { schema_version: SCHEMA_VERSION, inner: &Post { cells: &p.cells, mean: &p.mean, variance: &p.variance } },
    )?;
    #[derive(Serialize)]
    struct Snaps<'a> {
        snapshots: &'a [crate::mission::Snapshot],
        aborted: &'a Option<String>,
    }
    write_json(
        &b.snapshots,
        &Versioned { schema_version: SCHEMA_VERSION, inner: &Snaps { snapshots: &result.snapshots, aborted: &result.aborted } },
    )?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b64_roundtrip_is_exact() {
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -123.456_789_012_345_67];
        let back = f64_b64::decode(&f64_b64::encode(&v)).unwrap();
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), back.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(f64_b64::decode("AAAA").is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = MissionConfig::default();
        let b = MissionConfig { planner_seed: 1, ..a.clone() };
        assert_eq!(digest(&a), digest(&a.clone()));
        assert_ne!(digest(&a), digest(&b));
        assert_eq!(digest(&a).len(), 64);
    }
}
