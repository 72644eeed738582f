//! On-disk formats: scene TOML, ToA caches, checkpoints, trajectory CSV and
//! run manifests.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toanav_core::eval::TraceRow;
use toanav_core::linalg::v3;
use toanav_core::policy::{Policy, LAYOUT_VERSION};
use toanav_core::scene::Scene;
use toanav_core::toa::{GridSpec, ToAField};
use toanav_core::training::{Adam, TrainConfig};

pub const SCENE_SCHEMA: &str = "toanav.scene/1";
pub const MANIFEST_SCHEMA: &str = "toanav.manifest/1";
const TOA_MAGIC: &[u8; 4] = b"TOAF";
const TOA_VERSION: u32 = 1;
const CKPT_MAGIC: &[u8; 4] = b"TNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: schema mismatch, expected {expected}, found {found}")]
    Schema {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl ToString) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    schema: String,
    scene: Scene,
}

pub fn scene_to_string(scene: &Scene) -> String {
    toml::to_string(&SceneFile {
        schema: SCENE_SCHEMA.into(),
        scene: scene.clone(),
    })
    .expect("scene serialises")
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), FormatError> {
    fs::write(path, scene_to_string(scene)).map_err(io_err(path))
}

pub fn read_scene(path: &Path) -> Result<Scene, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: SceneFile = toml::from_str(&text).map_err(|e| parse_err(path, e))?;
    if file.schema != SCENE_SCHEMA {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            expected: SCENE_SCHEMA.into(),
            found: file.schema,
        });
    }
    if let Some(i) = file.scene.primitives.iter().position(|p| !p.is_valid()) {
        return Err(parse_err(path, format!("primitive {i} has invalid dimensions")));
    }
    Ok(file.scene)
}

/// Little-endian byte reader over a buffer.
struct Reader<'a> {
    buf: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(parse_err(self.path, "truncated file"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| parse_err(self.path, "length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn bytes(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        if self.take(4)? != magic {
            return Err(parse_err(self.path, "bad magic"));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

pub fn toa_to_bytes(field: &ToAField) -> Vec<u8> {
    let g = &field.grid;
    let mut out = Vec::with_capacity(96 + 8 * field.times.len());
    out.extend_from_slice(TOA_MAGIC);
    out.extend_from_slice(&TOA_VERSION.to_le_bytes());
    put_f64s(&mut out, &[g.origin.x, g.origin.y, g.origin.z, g.h]);
    for d in g.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_f64s(&mut out, &[field.goal.x, field.goal.y, field.goal.z]);
    put_f64s(&mut out, &field.times);
    out
}

pub fn write_toa(path: &Path, field: &ToAField) -> Result<(), FormatError> {
    fs::write(path, toa_to_bytes(field)).map_err(io_err(path))
}

pub fn read_toa(path: &Path) -> Result<ToAField, FormatError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let mut r = Reader { buf: &buf, path };
    r.magic(TOA_MAGIC)?;
    let version = r.u32()?;
    if version != TOA_VERSION {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            expected: TOA_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let o = r.f64s(4)?;
    let dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
    let grid = GridSpec::new(v3(o[0], o[1], o[2]), o[3], dims).map_err(|e| parse_err(path, e))?;
    let g = r.f64s(3)?;
    let times = r.f64s(grid.len())?;
    if !r.buf.is_empty() {
        return Err(parse_err(path, "trailing bytes"));
    }
    Ok(ToAField {
        grid,
        times,
        goal: v3(g[0], g[1], g[2]),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Iterations completed.
    pub iteration: u64,
    pub config: TrainConfig,
    pub params: Vec<f64>,
    pub adam: Option<Adam>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        put_bytes(&mut out, &serde_json::to_vec(&self.config).expect("config serialises"));
        let layout = Policy::new(self.config.policy).map(|p| p.layout).ok();
        put_bytes(&mut out, &serde_json::to_vec(&layout).expect("layout serialises"));
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        put_f64s(&mut out, &self.params);
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.t.to_le_bytes());
                put_f64s(&mut out, &a.m);
                put_f64s(&mut out, &a.v);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self, FormatError> {
        let mut r = Reader { buf, path };
        r.magic(CKPT_MAGIC)?;
        let version = r.u32()?;
        let layout_version = r.u32()?;
        if version != CHECKPOINT_VERSION || layout_version != LAYOUT_VERSION {
            return Err(FormatError::Schema {
                path: path.to_path_buf(),
                expected: format!("checkpoint {CHECKPOINT_VERSION}, layout {LAYOUT_VERSION}"),
                found: format!("checkpoint {version}, layout {layout_version}"),
            });
        }
        let iteration = r.u64()?;
        let config: TrainConfig = serde_json::from_slice(r.bytes()?).map_err(|e| parse_err(path, e))?;
        let stored: Option<toanav_core::policy::Layout> =
            serde_json::from_slice(r.bytes()?).map_err(|e| parse_err(path, e))?;
        let policy = Policy::new(config.policy).map_err(|e| parse_err(path, e))?;
        if stored.as_ref() != Some(&policy.layout) {
            return Err(FormatError::Schema {
                path: path.to_path_buf(),
                expected: "layout matching the stored policy config".into(),
                found: "different tensor layout".into(),
            });
        }
        let n = r.u64()? as usize;
        if n != policy.num_params() {
            return Err(parse_err(path, format!("{n} parameters, layout needs {}", policy.num_params())));
        }
        let params = r.f64s(n)?;
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let t = r.u64()?;
                let m = r.f64s(n)?;
                let v = r.f64s(n)?;
                Some(Adam {
                    config: config.optimizer,
                    m,
                    v,
                    t,
                })
            }
            _ => return Err(parse_err(path, "bad optimizer flag")),
        };
        if !r.buf.is_empty() {
            return Err(parse_err(path, "trailing bytes"));
        }
        Ok(Checkpoint {
            iteration,
            config,
            params,
            adam,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let buf = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&buf, path)
    }
}

pub const TRAJECTORY_HEADER: [&str; 16] = [
    "t_s",
    "px_m",
    "py_m",
    "pz_m",
    "vx_m_per_s",
    "vy_m_per_s",
    "vz_m_per_s",
    "qw",
    "qx",
    "qy",
    "qz",
    "thrust_x_m_per_s2",
    "thrust_y_m_per_s2",
    "thrust_z_m_per_s2",
    "yaw_setpoint_rad",
    "clearance_m",
];

fn row_values(r: &TraceRow) -> [f64; 16] {
    [
        r.t,
        r.p.x,
        r.p.y,
        r.p.z,
        r.v.x,
        r.v.y,
        r.v.z,
        r.q[0],
        r.q[1],
        r.q[2],
        r.q[3],
        r.thrust.x,
        r.thrust.y,
        r.thrust.z,
        r.yaw_setpoint,
        r.clearance,
    ]
}

pub fn write_trajectory_to(out: impl Write, trace: &[TraceRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in trace {
        w.write_record(row_values(r).iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV row per trace step behind a header with units.
pub fn export_trajectory(trace: &[TraceRow], path: &Path) -> Result<(), FormatError> {
    if trace.is_empty() {
        return Err(parse_err(path, "empty trace"));
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_trajectory_to(io::BufWriter::new(file), trace).map_err(|e| parse_err(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TraceRow>, FormatError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        let x: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, e))?;
        if x.len() != 16 {
            return Err(parse_err(path, "expected 16 columns"));
        }
        rows.push(TraceRow {
            t: x[0],
            p: v3(x[1], x[2], x[3]),
            v: v3(x[4], x[5], x[6]),
            q: [x[7], x[8], x[9], x[10]],
            thrust: v3(x[11], x[12], x[13]),
            yaw_setpoint: x[14],
            clearance: x[15],
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 over the input files, hex encoded.
    pub input_hash: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, inputs: &[PathBuf]) -> io::Result<Self> {
        Ok(RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            config,
            seed,
            input_hash: hash_files(inputs)?,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), FormatError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, FormatError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| parse_err(&path, e))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(FormatError::Schema {
                path,
                expected: MANIFEST_SCHEMA.into(),
                found: m.schema,
            });
        }
        Ok(m)
    }
}

/// Hash of each file's name and contents, in the order given.
pub fn hash_files(paths: &[PathBuf]) -> io::Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        let mut f = fs::File::open(p)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        h.update((buf.len() as u64).to_le_bytes());
        h.update(&buf);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use toanav_core::scene::{Arena, Primitive};
    use toanav_core::toa::{build_speed_grid, solve_fmm, SpeedParams};

    fn scene() -> Scene {
        Scene {
            arena: Arena::default(),
            goal: v3(0.0, 0.0, 1.5),
            primitives: vec![
                Primitive::sphere(v3(3.0, 1.0, 1.0), 0.7),
                Primitive::cylinder(v3(-2.0, 4.0, 0.0), 0.4, 3.0),
                Primitive::aabb(v3(1.0, -5.0, 0.0), v3(2.0, -4.0, 4.0)),
            ],
        }
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        write_scene(&path, &scene()).unwrap();
        assert_eq!(read_scene(&path).unwrap(), scene());
    }

    #[test]
    fn scene_schema_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let text = scene_to_string(&scene()).replace(SCENE_SCHEMA, "toanav.scene/0");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_scene(&path), Err(FormatError::Schema { .. })));
    }

    #[test]
    fn toa_round_trip_keeps_infinities() {
        let s = scene();
        let grid = GridSpec::covering(&s.arena, 1.0);
        let field = solve_fmm(&build_speed_grid(&s, grid, &SpeedParams::default()).unwrap(), s.goal).unwrap();
        assert!(field.times.iter().any(|t| t.is_infinite()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_toa(&path, &field).unwrap();
        let back = read_toa(&path).unwrap();
        assert_eq!(back.grid, field.grid);
        assert_eq!(back.goal, field.goal);
        assert!(back.times.iter().zip(&field.times).all(|(a, b)| a.to_bits() == b.to_bits()));
        fs::write(&path, &toa_to_bytes(&field)[..100]).unwrap();
        assert!(read_toa(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let mut config = TrainConfig::default();
        config.policy.feature_dim = 4;
        config.policy.depth_width = 4;
        config.policy.depth_height = 3;
        let p = Policy::new(config.policy).unwrap();
        let params = p.init_params(1);
        let mut adam = Adam::new(config.optimizer, params.len());
        let mut q = params.clone();
        adam.step(&mut q, &params);
        let ck = Checkpoint {
            iteration: 7,
            config,
            params: q,
            adam: Some(adam),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        ck.write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), ck);
        let mut bytes = ck.to_bytes();
        bytes[4] = 9;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(FormatError::Schema { .. })));
    }

    fn trace_row(i: usize) -> TraceRow {
        let x = i as f64;
        TraceRow {
            t: 0.01 * x,
            p: v3(1.0 / 3.0, -x, 2.5e-12),
            v: v3(0.1, 0.2, -0.3),
            q: [1.0, 0.0, 0.0, 0.0],
            thrust: v3(0.0, 0.0, 9.81),
            yaw_setpoint: -std::f64::consts::PI,
            clearance: 0.7,
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        export_trajectory(&[trace_row(0)], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("t_s,px_m"));
        let rows: Vec<_> = (0..5).map(trace_row).collect();
        export_trajectory(&rows, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            let (x, y) = (row_values(a), row_values(b));
            assert!(x.iter().zip(&y).all(|(u, v)| (u - v).abs() <= 1e-9));
        }
        assert!(export_trajectory(&[], &path).is_err());
    }

    #[test]
    fn manifest_hash_depends_on_contents() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        fs::write(&a, "one").unwrap();
        let h1 = hash_files(&[a.clone()]).unwrap();
        fs::write(&a, "two").unwrap();
        let h2 = hash_files(&[a.clone()]).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(h1.len(), 64);
        let m = RunManifest::new("toa", serde_json::json!({"h": 0.25}), 3, &[a]).unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
