//! On-disk formats.
//!
//! * `UIM1`: motion plus skeleton as a JSON document.
//! * `UIV1`: semantic volume. Little-endian: magic, u32 T, H, W, D, f32 pitch
//!   (h, w, d), f32 origin (x, y, z), then one label byte per voxel in
//!   t, h, w, d order.
//! * `UHF1`: heatmap field dump. The `UIV1` header with its own magic, then
//!   u32 K, a mode byte (0 target, 1 raw) and f32 values in t, k, h, w, d
//!   order.
//! * JSON sidecars describing generated samples.
//! * ASCII PLY point clouds for inspection.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotionSequence, NamedJoints, SkeletonTopology};
use crate::heatmap::{normalize, FieldMode, HeatmapField};
use crate::synthdata::{TaskId, ToySample};
use crate::uiv::{label, combine_codes, voxel_to_world, SemanticVolume, VolumeSpec};
use crate::vec3::Vec3;

pub const UIM1: &str = "UIM1";
pub const UIV1_MAGIC: &[u8; 4] = b"UIV1";
pub const UHF1_MAGIC: &[u8; 4] = b"UHF1";

/// Capsule radius assumed for bones when a motion file does not list any.
pub const DEFAULT_CAPSULE_RADIUS: f64 = 0.05;

/// Little-endian cursor over a byte buffer that reports truncation as a
/// format error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    format: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], format: &'static str) -> Self {
        Self { buf, format }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.format, "unexpected end of data"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.format, format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize, format: &'static str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(format, "length exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

// ---------------------------------------------------------------- UIM1

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MotionDocument {
    version: String,
    fps: f64,
    #[serde(rename = "K")]
    joints: usize,
    #[serde(rename = "T")]
    frames: usize,
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    named_indices: NamedJoints,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capsule_radii: Option<Vec<f64>>,
    positions: Vec<Vec<Vec3>>,
}

pub fn motion_to_string(motion: &MotionSequence, topo: &SkeletonTopology) -> Result<String> {
    motion.check_topology(topo)?;
    let doc = MotionDocument {
        version: UIM1.into(),
        fps: motion.fps(),
        joints: motion.joints(),
        frames: motion.frames(),
        joint_names: topo.joint_names().to_vec(),
        parents: topo.parents().to_vec(),
        named_indices: *topo.named(),
        capsule_radii: Some(topo.capsule_radii().to_vec()),
        positions: (0..motion.frames()).map(|t| motion.frame(t).to_vec()).collect(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::format(UIM1, e.to_string()))
}

/// Parses a motion document. Bones without listed radii get
/// [`DEFAULT_CAPSULE_RADIUS`].
pub fn motion_from_str(s: &str) -> Result<(MotionSequence, SkeletonTopology)> {
    let doc: MotionDocument = serde_json::from_str(s).map_err(|e| Error::format(UIM1, e.to_string()))?;
    if doc.version != UIM1 {
        return Err(Error::format(UIM1, format!("unsupported version {:?}", doc.version)));
    }
    if doc.positions.len() != doc.frames || doc.positions.iter().any(|f| f.len() != doc.joints) {
        return Err(Error::format(UIM1, format!("positions are not {} x {} x 3", doc.frames, doc.joints)));
    }
    let bones = doc.parents.iter().filter(|p| p.is_some()).count();
    let radii = doc.capsule_radii.unwrap_or_else(|| vec![DEFAULT_CAPSULE_RADIUS; bones]);
    let topo = SkeletonTopology::new(doc.joint_names, doc.parents, doc.named_indices, radii)?;
    let motion = MotionSequence::from_frames(doc.fps, doc.positions)?;
    motion.check_topology(&topo)?;
    Ok((motion, topo))
}

pub fn write_motion(path: &Path, motion: &MotionSequence, topo: &SkeletonTopology) -> Result<()> {
    write_file(path, motion_to_string(motion, topo)?.as_bytes())
}

pub fn read_motion(path: &Path) -> Result<(MotionSequence, SkeletonTopology)> {
    let bytes = read_file(path)?;
    let s = std::str::from_utf8(&bytes).map_err(|_| Error::format(UIM1, "not UTF-8"))?;
    motion_from_str(s)
}

// ---------------------------------------------------------------- UIV1 / UHF1

fn put_grid_header(out: &mut Vec<u8>, magic: &[u8; 4], frames: usize, spec: &VolumeSpec, format: &'static str) -> Result<()> {
    out.extend_from_slice(magic);
    put_u32(out, frames, format)?;
    for d in spec.dims {
        put_u32(out, d, format)?;
    }
    for v in spec.pitch.iter().chain(&spec.origin) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(())
}

fn read_grid_header(r: &mut ByteReader<'_>, magic: &[u8; 4], format: &'static str) -> Result<(usize, VolumeSpec)> {
    if r.take(4)? != magic {
        return Err(Error::format(format, "bad magic"));
    }
    let frames = r.u32()?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let mut vals = [0.0f64; 6];
    for v in &mut vals {
        *v = r.f32()? as f64;
    }
    let spec = VolumeSpec::new(dims, [vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]])
        .map_err(|e| Error::format(format, e.to_string()))?;
    Ok((frames, spec))
}

pub fn volume_to_bytes(vol: &SemanticVolume) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(40 + vol.codes().len());
    put_grid_header(&mut out, UIV1_MAGIC, vol.frames(), vol.spec(), "UIV1")?;
    out.extend_from_slice(vol.codes());
    Ok(out)
}

/// Parses a volume, rejecting unknown magic, truncation, trailing bytes and
/// label bytes above 3.
pub fn volume_from_bytes(bytes: &[u8]) -> Result<SemanticVolume> {
    let mut r = ByteReader::new(bytes, "UIV1");
    let (frames, spec) = read_grid_header(&mut r, UIV1_MAGIC, "UIV1")?;
    let n = frames
        .checked_mul(spec.voxel_count())
        .ok_or_else(|| Error::format("UIV1", "volume size overflows"))?;
    let labels = r.take(n)?;
    r.finish()?;
    if let Some(bad) = labels.iter().find(|&&c| c > label::SCENE) {
        return Err(Error::format("UIV1", format!("label byte {bad}")));
    }
    SemanticVolume::from_codes(spec, frames, labels.to_vec())
}

pub fn write_volume(path: &Path, vol: &SemanticVolume) -> Result<()> {
    write_file(path, &volume_to_bytes(vol)?)
}

pub fn read_volume(path: &Path) -> Result<SemanticVolume> {
    volume_from_bytes(&read_file(path)?)
}

pub fn field_to_bytes(field: &HeatmapField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(45 + 4 * field.values().len());
    put_grid_header(&mut out, UHF1_MAGIC, field.frames(), field.spec(), "UHF1")?;
    put_u32(&mut out, field.joints(), "UHF1")?;
    out.push(match field.mode() {
        FieldMode::Target => 0,
        FieldMode::Raw => 1,
    });
    for v in field.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses a field dump. Target-mode fields are checked at single precision
/// and renormalized.
pub fn field_from_bytes(bytes: &[u8]) -> Result<HeatmapField> {
    let mut r = ByteReader::new(bytes, "UHF1");
    let (frames, spec) = read_grid_header(&mut r, UHF1_MAGIC, "UHF1")?;
    let joints = r.u32()?;
    let mode = match r.take(1)?[0] {
        0 => FieldMode::Target,
        1 => FieldMode::Raw,
        m => return Err(Error::format("UHF1", format!("mode byte {m}"))),
    };
    let n = frames
        .checked_mul(joints)
        .and_then(|c| c.checked_mul(spec.voxel_count()))
        .ok_or_else(|| Error::format("UHF1", "field size overflows"))?;
    let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format("UHF1", "field size overflows"))?)?;
    r.finish()?;
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let field = HeatmapField::from_values(spec, frames, joints, values, FieldMode::Raw)?;
    match mode {
        FieldMode::Raw => Ok(field),
        FieldMode::Target => {
            let as_target = normalize(&field);
            // Mass lost to clamping shows up as a distance between the two.
            let moved: f64 = as_target.values().iter().zip(field.values()).map(|(a, b)| (a - b).abs()).sum();
            if moved > 1e-4 * (frames * joints) as f64 {
                return Err(Error::format("UHF1", "target-mode channels are not normalized"));
            }
            Ok(as_target)
        }
    }
}

pub fn write_field(path: &Path, field: &HeatmapField) -> Result<()> {
    write_file(path, &field_to_bytes(field)?)
}

pub fn read_field(path: &Path) -> Result<HeatmapField> {
    field_from_bytes(&read_file(path)?)
}

// ---------------------------------------------------------------- sidecars

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactLabels {
    pub lhand: Vec<bool>,
    pub rhand: Vec<bool>,
}

/// Per-sample metadata written next to the volume and motion files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub task_id: TaskId,
    pub seed: u64,
    pub goal: Option<Vec3>,
    pub contact_labels: ContactLabels,
    /// Object points used to derive contact labels; empty when there is no object.
    #[serde(default)]
    pub object_points: Vec<Vec3>,
}

impl Sidecar {
    pub fn from_sample(s: &ToySample) -> Self {
        Self {
            task_id: s.task,
            seed: s.seed,
            goal: s.goal,
            contact_labels: ContactLabels {
                lhand: s.contacts.iter().map(|c| c[0]).collect(),
                rhand: s.contacts.iter().map(|c| c[1]).collect(),
            },
            object_points: s.object_points.clone(),
        }
    }

    /// Contact labels as `[lhand, rhand]` per frame.
    pub fn contacts(&self) -> Result<Vec<[bool; 2]>> {
        let c = &self.contact_labels;
        if c.lhand.len() != c.rhand.len() {
            return Err(Error::format("sidecar", "hand label lengths differ"));
        }
        Ok(c.lhand.iter().zip(&c.rhand).map(|(&l, &r)| [l, r]).collect())
    }
}

pub fn write_sidecar(path: &Path, s: &Sidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(s).map_err(|e| Error::format("sidecar", e.to_string()))?;
    write_file(path, text.as_bytes())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::format("sidecar", e.to_string()))
}

// ---------------------------------------------------------------- PLY

/// Vertex colors by label code (index 1..=3) and for joints (index 0).
pub const PLY_COLORS: [[u8; 3]; 4] = [[255, 215, 0], [220, 70, 60], [60, 140, 230], [150, 150, 150]];

/// ASCII PLY of the occupied voxel centers of `vol` (labels merged over
/// frames) and every joint position of `motion`, colored by class.
pub fn ply_string(vol: Option<&SemanticVolume>, motion: Option<&MotionSequence>) -> String {
    let mut verts: Vec<(Vec3, [u8; 3])> = Vec::new();
    if let Some(vol) = vol {
        let spec = vol.spec();
        let n = spec.voxel_count();
        let mut merged = vec![label::EMPTY; n];
        for t in 0..vol.frames() {
            for (m, &c) in merged.iter_mut().zip(vol.frame_codes(t)) {
                *m = combine_codes(*m, c);
            }
        }
        for (idx, &c) in merged.iter().enumerate() {
            if c != label::EMPTY {
                let [h, w, d] = spec.unravel(idx);
                verts.push((voxel_to_world([h as f64, w as f64, d as f64], spec), PLY_COLORS[c as usize]));
            }
        }
    }
    if let Some(m) = motion {
        verts.extend(m.positions().iter().map(|p| (*p, PLY_COLORS[0])));
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment voxel centers and joint positions\n");
    s.push_str(&format!("element vertex {}\n", verts.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, c) in verts {
        s.push_str(&format!("{} {} {} {} {} {}\n", p[0] as f32, p[1] as f32, p[2] as f32, c[0], c[1], c[2]));
    }
    s
}

pub fn write_ply(path: &Path, vol: Option<&SemanticVolume>, motion: Option<&MotionSequence>) -> Result<()> {
    write_file(path, ply_string(vol, motion).as_bytes())
}
