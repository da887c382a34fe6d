//! File containers and importers.
//!
//! Binary containers share one layout: a 4-byte magic tag, a little-endian
//! `u32` header length, a UTF-8 JSON header, then little-endian payload
//! blocks in the order the header declares.
//!
//! * `FKT1`: face model. Payload: mean `f32[n*3]`, identity basis
//!   `f32[k*n*3]`, blendshape basis `f32[m*n*3]`, triangles `u32[t*3]`.
//! * `FMAP`: one rendered map. Payload: `f32[C*H*W]`, planar.
//! * `BSC1`: blendshape clip. Payload: `f64[frames*dims]`, row-major.
//!
//! Parameters are stored as JSON and landmark tracks as JSON lines.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::ProjectiveCamera;
use crate::diffusion::BlendshapeClip;
use crate::error::{Error, Result};
use crate::facemodel::{
    Basis, ContourSet, Eyeball, FaceModel, FaceParams, LandmarkEmbedding,
};
use crate::fit::{LandmarkFrame, LandmarkTrack};
use crate::image::Image;
use crate::rotation::Rot6;

pub const MODEL_MAGIC: &[u8; 4] = b"FKT1";
pub const MAP_MAGIC: &[u8; 4] = b"FMAP";
pub const CLIP_MAGIC: &[u8; 4] = b"BSC1";

fn encode(magic: &[u8; 4], header: &impl Serialize, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::Format("header larger than 4 GiB".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn decode<'a, H: DeserializeOwned>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    let tag = String::from_utf8_lossy(magic);
    if bytes.len() < 8 {
        return Err(Error::Format(format!("{tag}: file too short")));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic bytes {:?}, expected {tag}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < len {
        return Err(Error::Format(format!("{tag}: truncated header")));
    }
    let header = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Format(format!("{tag}: header: {e}")))?;
    Ok((header, &body[len..]))
}

/// Reads fixed-size little-endian blocks off the front of a payload.
struct Blocks<'a> {
    tag: &'static str,
    rest: &'a [u8],
}

impl<'a> Blocks<'a> {
    fn take(&mut self, what: &str, n_bytes: usize) -> Result<&'a [u8]> {
        if self.rest.len() < n_bytes {
            return Err(Error::Format(format!(
                "{}: {what} block needs {n_bytes} bytes, {} left",
                self.tag,
                self.rest.len()
            )));
        }
        let (head, tail) = self.rest.split_at(n_bytes);
        self.rest = tail;
        Ok(head)
    }

    fn f32s(&mut self, what: &str, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(what, n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    fn f64s(&mut self, what: &str, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(what, n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn u32s(&mut self, what: &str, n: usize) -> Result<Vec<u32>> {
        Ok(self
            .take(what, n * 4)?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if !self.rest.is_empty() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.tag,
                self.rest.len()
            )));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    n_vertices: usize,
    n_triangles: usize,
    n_identity: usize,
    n_blendshapes: usize,
    blendshape_names: Vec<String>,
    eyeballs: [Eyeball; 2],
    iris_rings: [Vec<u32>; 2],
    symmetry: Vec<u32>,
    landmarks: Vec<LandmarkEmbedding>,
    contours: ContourSet,
    blocks: Vec<String>,
}

const MODEL_BLOCKS: [&str; 4] = ["mean", "identity", "blendshapes", "triangles"];

pub fn model_to_bytes(model: &FaceModel) -> Result<Vec<u8>> {
    let header = ModelHeader {
        n_vertices: model.n_vertices(),
        n_triangles: model.triangles.len(),
        n_identity: model.n_identity(),
        n_blendshapes: model.n_blendshapes(),
        blendshape_names: model.blendshape_names.clone(),
        eyeballs: model.eyeballs,
        iris_rings: model.iris_rings.clone(),
        symmetry: model.symmetry.clone(),
        landmarks: model.landmarks.clone(),
        contours: model.contours.clone(),
        blocks: MODEL_BLOCKS.iter().map(|s| s.to_string()).collect(),
    };
    let mut payload = Vec::new();
    push_f32s(&mut payload, model.mean.iter().flatten().copied());
    push_f32s(&mut payload, model.identity.as_slice().iter().copied());
    push_f32s(&mut payload, model.blendshapes.as_slice().iter().copied());
    for t in model.triangles.iter().flatten() {
        payload.extend_from_slice(&t.to_le_bytes());
    }
    encode(MODEL_MAGIC, &header, &payload)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<FaceModel> {
    let (h, payload): (ModelHeader, _) = decode(MODEL_MAGIC, bytes)?;
    if h.blocks != MODEL_BLOCKS {
        return Err(Error::Format(format!("FKT1: unsupported block order {:?}", h.blocks)));
    }
    let n = h.n_vertices;
    let mut b = Blocks {
        tag: "FKT1",
        rest: payload,
    };
    let mean = b
        .f32s("mean", n * 3)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let identity = Basis::new(h.n_identity, n, b.f32s("identity", h.n_identity * n * 3)?)?;
    let blendshapes = Basis::new(h.n_blendshapes, n, b.f32s("blendshapes", h.n_blendshapes * n * 3)?)?;
    let triangles = b
        .u32s("triangles", h.n_triangles * 3)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    b.finish()?;
    let model = FaceModel {
        mean,
        triangles,
        identity,
        blendshapes,
        blendshape_names: h.blendshape_names,
        eyeballs: h.eyeballs,
        iris_rings: h.iris_rings,
        symmetry: h.symmetry,
        landmarks: h.landmarks,
        contours: h.contours,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &FaceModel) -> Result<()> {
    write_file(path, &model_to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<FaceModel> {
    model_from_bytes(&fs::read(path)?)
}

/// A rendered map with its semantic tag (`"P"`, `"S"`, `"flow"`, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedMap {
    pub tag: String,
    pub image: Image,
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    channels: usize,
    height: usize,
    width: usize,
    tag: String,
}

pub fn map_to_bytes(map: &TaggedMap) -> Result<Vec<u8>> {
    let img = &map.image;
    let header = MapHeader {
        channels: img.channels,
        height: img.height,
        width: img.width,
        tag: map.tag.clone(),
    };
    let mut payload = Vec::with_capacity(img.data.len() * 4);
    push_f32s(&mut payload, img.data.iter().copied());
    encode(MAP_MAGIC, &header, &payload)
}

pub fn map_from_bytes(bytes: &[u8]) -> Result<TaggedMap> {
    let (h, payload): (MapHeader, _) = decode(MAP_MAGIC, bytes)?;
    let mut b = Blocks {
        tag: "FMAP",
        rest: payload,
    };
    let data = b.f32s("map", h.channels * h.height * h.width)?;
    b.finish()?;
    Ok(TaggedMap {
        tag: h.tag,
        image: Image::new(h.channels, h.height, h.width, data)?,
    })
}

pub fn save_map(path: &Path, map: &TaggedMap) -> Result<()> {
    write_file(path, &map_to_bytes(map)?)
}

pub fn load_map(path: &Path) -> Result<TaggedMap> {
    map_from_bytes(&fs::read(path)?)
}

/// Clip together with the blendshape name of each column.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedClip {
    pub names: Vec<String>,
    pub clip: BlendshapeClip,
}

#[derive(Serialize, Deserialize)]
struct ClipHeader {
    frames: usize,
    dims: usize,
    names: Vec<String>,
    /// `"f64"` or `"f32"`.
    dtype: String,
    #[serde(default = "default_fps")]
    fps: f64,
}

fn default_fps() -> f64 {
    crate::fit::DEFAULT_FPS
}

pub fn clip_to_bytes(clip: &NamedClip) -> Result<Vec<u8>> {
    let c = &clip.clip;
    if !clip.names.is_empty() && clip.names.len() != c.dims {
        return Err(Error::Dimension {
            what: "clip names",
            expected: c.dims,
            got: clip.names.len(),
        });
    }
    let header = ClipHeader {
        frames: c.frames,
        dims: c.dims,
        names: clip.names.clone(),
        dtype: "f64".into(),
        fps: default_fps(),
    };
    let mut payload = Vec::with_capacity(c.data.len() * 8);
    for v in &c.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    encode(CLIP_MAGIC, &header, &payload)
}

pub fn clip_from_bytes(bytes: &[u8]) -> Result<NamedClip> {
    let (h, payload): (ClipHeader, _) = decode(CLIP_MAGIC, bytes)?;
    let mut b = Blocks {
        tag: "BSC1",
        rest: payload,
    };
    let n = h.frames * h.dims;
    let data = match h.dtype.as_str() {
        "f64" => b.f64s("clip", n)?,
        "f32" => b.f32s("clip", n)?.into_iter().map(f64::from).collect(),
        other => return Err(Error::Format(format!("BSC1: unknown dtype {other:?}"))),
    };
    b.finish()?;
    if !h.names.is_empty() && h.names.len() != h.dims {
        return Err(Error::Format(format!(
            "BSC1: {} names for {} columns",
            h.names.len(),
            h.dims
        )));
    }
    Ok(NamedClip {
        names: h.names,
        clip: BlendshapeClip::new(h.frames, h.dims, data)?,
    })
}

pub fn save_clip(path: &Path, clip: &NamedClip) -> Result<()> {
    write_file(path, &clip_to_bytes(clip)?)
}

pub fn load_clip(path: &Path) -> Result<NamedClip> {
    clip_from_bytes(&fs::read(path)?)
}

/// Per-frame part of a parameter record. `alpha` is present only when the
/// frame's identity differs from the shared one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub beta: Vec<f64>,
    pub rot_head: Rot6,
    pub trans_head: [f64; 3],
    pub rot_eyes: [Rot6; 2],
}

/// Fitted parameters of a sequence: shared identity plus per-frame records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub alpha: Vec<f64>,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<ProjectiveCamera>,
}

impl ParamsFile {
    /// Identity of frame 0 becomes the shared one.
    pub fn from_params(params: &[FaceParams], camera: Option<&ProjectiveCamera>) -> Self {
        let alpha = params.first().map(|p| p.alpha.clone()).unwrap_or_default();
        let frames = params
            .iter()
            .enumerate()
            .map(|(i, p)| FrameRecord {
                frame: i,
                alpha: (p.alpha != alpha).then(|| p.alpha.clone()),
                beta: p.beta.clone(),
                rot_head: p.rot_head,
                trans_head: p.trans_head,
                rot_eyes: p.rot_eyes,
            })
            .collect();
        Self {
            alpha,
            frames,
            camera: camera.cloned(),
        }
    }

    /// Records must be numbered `0..n` in order.
    pub fn to_params(&self) -> Result<Vec<FaceParams>> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.frame != i {
                    return Err(Error::Format(format!(
                        "params record {i} is numbered {}",
                        r.frame
                    )));
                }
                Ok(FaceParams {
                    alpha: r.alpha.clone().unwrap_or_else(|| self.alpha.clone()),
                    beta: r.beta.clone(),
                    rot_head: r.rot_head,
                    trans_head: r.trans_head,
                    rot_eyes: r.rot_eyes,
                })
            })
            .collect()
    }
}

pub fn save_params(path: &Path, file: &ParamsFile) -> Result<()> {
    write_file(path, &serde_json::to_vec_pretty(file)?)
}

pub fn load_params(path: &Path) -> Result<ParamsFile> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Serialize, Deserialize)]
struct LandmarkRecord {
    frame: usize,
    points: Vec<[f64; 2]>,
    visible: Vec<bool>,
}

/// One JSON object per line: `{frame, points: [[x, y], ...], visible}`.
pub fn save_landmarks(path: &Path, frames: &[LandmarkFrame]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (i, f) in frames.iter().enumerate() {
        let rec = LandmarkRecord {
            frame: i,
            points: f.points.clone(),
            visible: f.visible.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Records may come in any order but must cover `0..n` exactly once.
/// Blank lines are skipped.
pub fn load_landmarks(path: &Path) -> Result<Vec<LandmarkFrame>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut by_frame: HashMap<usize, LandmarkFrame> = HashMap::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LandmarkRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("landmarks line {}: {e}", line_no + 1)))?;
        if rec.points.len() != rec.visible.len() {
            return Err(Error::Format(format!(
                "landmarks frame {}: {} points but {} visibility flags",
                rec.frame,
                rec.points.len(),
                rec.visible.len()
            )));
        }
        let frame = LandmarkFrame {
            points: rec.points,
            visible: rec.visible,
        };
        if by_frame.insert(rec.frame, frame).is_some() {
            return Err(Error::Format(format!("landmarks frame {} repeated", rec.frame)));
        }
    }
    (0..by_frame.len())
        .map(|i| {
            by_frame
                .remove(&i)
                .ok_or_else(|| Error::Format(format!("landmarks frame {i} missing")))
        })
        .collect()
}

pub fn load_landmark_track(path: &Path, width: usize, height: usize) -> Result<LandmarkTrack> {
    Ok(LandmarkTrack::new(width, height, load_landmarks(path)?))
}

/// Vertices and faces of a Wavefront OBJ file. Polygons are fan
/// triangulated; texture and normal indices are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjMesh {
    pub positions: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let bad = |msg: &str| Error::Format(format!("obj line {}: {msg}", line_no + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f32> = it
                    .take(3)
                    .map(|s| s.parse::<f32>().map_err(|_| bad("bad coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                positions.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let first = s.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        // negative indices count back from the latest vertex
                        let abs = if i < 0 { positions.len() as i64 + i } else { i - 1 };
                        if abs < 0 || abs >= positions.len() as i64 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(abs as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(ObjMesh {
        positions,
        triangles,
    })
}

pub fn load_obj(path: &Path) -> Result<ObjMesh> {
    parse_obj(&fs::read_to_string(path)?)
}

/// Mirror partner of every vertex across `x = 0`: the nearest vertex to the
/// reflected position if it lies within `tolerance` and the match is
/// mutual, otherwise the vertex itself.
pub fn mirror_map(positions: &[[f32; 3]], tolerance: f64) -> Vec<u32> {
    let cell = tolerance.max(1e-9) * 4.0;
    let key = |p: [f64; 3]| -> [i64; 3] { p.map(|c| (c / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let pos: Vec<[f64; 3]> = positions.iter().map(|p| p.map(f64::from)).collect();
    for (i, p) in pos.iter().enumerate() {
        grid.entry(key(*p)).or_default().push(i as u32);
    }
    let nearest = |q: [f64; 3]| -> Option<u32> {
        let k = key(q);
        let mut best = (tolerance * tolerance, None);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cands) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &j in cands {
                        let p = pos[j as usize];
                        let d = (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
                        if d <= best.0 {
                            best = (d, Some(j));
                        }
                    }
                }
            }
        }
        best.1
    };
    let partner: Vec<Option<u32>> = pos.iter().map(|p| nearest([-p[0], p[1], p[2]])).collect();
    partner
        .iter()
        .enumerate()
        .map(|(i, m)| match m {
            Some(j) if partner[*j as usize] == Some(i as u32) => *j,
            _ => i as u32,
        })
        .collect()
}

/// Builds a model from a neutral OBJ and per-shape OBJs with the same
/// topology. Shapes become displacement fields from the neutral; landmark
/// embedding and contours are left empty.
pub fn import_obj_model(
    neutral: &ObjMesh,
    identity: &[ObjMesh],
    blendshapes: &[(String, ObjMesh)],
    mirror_tolerance: f64,
) -> Result<FaceModel> {
    let n = neutral.positions.len();
    let fields = |meshes: &[&ObjMesh]| -> Result<Basis> {
        let mut data = Vec::with_capacity(meshes.len() * n * 3);
        for m in meshes {
            if m.positions.len() != n {
                return Err(Error::Dimension {
                    what: "obj shape vertices",
                    expected: n,
                    got: m.positions.len(),
                });
            }
            for (p, q) in m.positions.iter().zip(&neutral.positions) {
                data.extend((0..3).map(|c| p[c] - q[c]));
            }
        }
        Basis::new(meshes.len(), n, data)
    };
    let id_refs: Vec<&ObjMesh> = identity.iter().collect();
    let bs_refs: Vec<&ObjMesh> = blendshapes.iter().map(|(_, m)| m).collect();
    let model = FaceModel {
        mean: neutral.positions.clone(),
        triangles: neutral.triangles.clone(),
        identity: fields(&id_refs)?,
        blendshapes: fields(&bs_refs)?,
        blendshape_names: blendshapes.iter().map(|(s, _)| s.clone()).collect(),
        eyeballs: [Eyeball::default(); 2],
        iris_rings: [Vec::new(), Vec::new()],
        symmetry: mirror_map(&neutral.positions, mirror_tolerance),
        landmarks: Vec::new(),
        contours: ContourSet::default(),
    };
    model.validate()?;
    Ok(model)
}
