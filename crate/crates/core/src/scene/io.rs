//! Scene file schema and dataset directory layout.
//!
//! A scene is one UTF-8 JSON document: raster floats travel as base64
//! little-endian f32, the mask as base64 packed bits (row-major,
//! LSB-first within each byte). A dataset is a directory of scene files
//! plus `index.json` listing their relative paths.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{
    AgentTrack, BevRaster, DrivableMask, GridFrame, Pose, PriorGrid, Scene, SceneError,
    PRIOR_FLOOR,
};

pub const INDEX_FILE: &str = "index.json";
const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    resolution: f64,
    origin: XY,
    raster: RasterFile,
    mask: MaskFile,
    tracks: Vec<TrackFile>,
}

#[derive(Serialize, Deserialize)]
struct XY {
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct RasterFile {
    h: usize,
    w: usize,
    c: usize,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    data: String,
}

#[derive(Serialize, Deserialize)]
struct TrackFile {
    id: u32,
    past: Vec<[f64; 2]>,
    future: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    scenes: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl ToString) -> SceneError {
    SceneError::Parse {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    let raster_bytes: Vec<u8> = scene
        .raster
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let mask_bits = pack_bits(scene.mask.data());
    let file = SceneFile {
        version: SCHEMA_VERSION,
        resolution: scene.frame().resolution,
        origin: XY {
            x: scene.frame().origin.x,
            y: scene.frame().origin.y,
        },
        raster: RasterFile {
            h: scene.raster.height,
            w: scene.raster.width,
            c: scene.raster.channels,
            data: B64.encode(raster_bytes),
        },
        mask: MaskFile {
            data: B64.encode(mask_bits),
        },
        tracks: scene
            .tracks
            .iter()
            .map(|t| TrackFile {
                id: t.agent_id,
                past: t.past.iter().map(|p| [p.x, p.y]).collect(),
                future: t.future.iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("scene schema serializes");
    fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e));
    let file: SceneFile =
        serde_json::from_str(&text?).map_err(|e| parse_err(path, e))?;
    if file.version != SCHEMA_VERSION {
        return Err(parse_err(
            path,
            format!("schema version {} != {SCHEMA_VERSION}", file.version),
        ));
    }

    let raster_bytes = B64
        .decode(&file.raster.data)
        .map_err(|e| parse_err(path, format!("raster data: {e}")))?;
    if raster_bytes.len() % 4 != 0 {
        return Err(parse_err(path, "raster byte length not a multiple of 4"));
    }
    let raster_vals: Vec<f32> = raster_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let frame = GridFrame {
        origin: Pose::new(file.origin.x, file.origin.y),
        resolution: file.resolution,
    };
    let raster = BevRaster::new(file.raster.h, file.raster.w, file.raster.c, frame, raster_vals)?;

    let mask_bytes = B64
        .decode(&file.mask.data)
        .map_err(|e| parse_err(path, format!("mask data: {e}")))?;
    let cells = file.raster.h * file.raster.w;
    if mask_bytes.len() != cells.div_ceil(8) {
        return Err(parse_err(
            path,
            format!(
                "mask byte length {} != ceil({cells}/8)",
                mask_bytes.len()
            ),
        ));
    }
    let mask = DrivableMask::new(
        file.raster.h,
        file.raster.w,
        unpack_bits(&mask_bytes, cells),
    )?;

    let tracks = file
        .tracks
        .into_iter()
        .map(|t| AgentTrack {
            agent_id: t.id,
            past: t.past.iter().map(|p| Pose::new(p[0], p[1])).collect(),
            future: t.future.iter().map(|p| Pose::new(p[0], p[1])).collect(),
        })
        .collect();

    let prior = PriorGrid::build(&mask, PRIOR_FLOOR)?;
    let scene = Scene {
        raster,
        mask,
        prior,
        tracks,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn write_index(dir: &Path, names: &[String]) -> Result<(), SceneError> {
    let index = IndexFile {
        version: SCHEMA_VERSION,
        scenes: names.to_vec(),
    };
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

/// Loads every scene listed in the directory's index, in index order.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Scene)>, SceneError> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let index: IndexFile = serde_json::from_str(&text).map_err(|e| parse_err(&path, e))?;
    index
        .scenes
        .iter()
        .map(|name| Ok((name.clone(), load_scene(&dir.join(name))?)))
        .collect()
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}
