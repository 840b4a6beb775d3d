//! On-disk formats.
//!
//! A volume is a pair of files: a JSON header (`name.json`) and a raw
//! payload of little-endian `f32` values in x-fastest order (`name.raw`).
//! Paths passed to [`read_volume`] and [`write_volume`] name the header;
//! the payload path is derived by swapping the extension.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotations::ExtremePointSet;
use crate::error::{Error, Result};
use crate::model::ToyModel;
use crate::phantom::PhantomSpec;
use crate::trainer::TrainConfig;
use crate::volume::{validate_geometry, Shape, Spacing, Volume};

pub const DTYPE: &str = "f32le";
pub const ORDER: &str = "x-fastest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub shape: Shape,
    pub spacing: Spacing,
    pub dtype: String,
    pub order: String,
}

pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let preceding: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    preceding + column.saturating_sub(1)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(path, &text)
}

/// Pretty-printed JSON with a trailing newline; field order follows the
/// type definition.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let header: VolumeHeader = read_json(path)?;
    let bad = |message: String| Error::Header {
        path: path.to_path_buf(),
        message,
    };
    if header.dtype != DTYPE {
        return Err(bad(format!("unsupported dtype {:?} (expected {DTYPE:?})", header.dtype)));
    }
    if header.order != ORDER {
        return Err(bad(format!("unsupported order {:?} (expected {ORDER:?})", header.order)));
    }
    validate_geometry(header.shape, header.spacing).map_err(|e| bad(e.to_string()))?;
    Ok(header)
}

pub fn read_volume(path: &Path) -> Result<Volume<f32>> {
    let header = read_header(path)?;
    let payload = payload_path(path);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = 4 * header.shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::PayloadLength {
            path: payload,
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(header.shape, header.spacing, data).map_err(|e| Error::Header {
        path: payload,
        message: e.to_string(),
    })
}

pub fn write_volume(path: &Path, vol: &Volume<f32>) -> Result<()> {
    let header = VolumeHeader {
        shape: vol.shape(),
        spacing: vol.spacing(),
        dtype: DTYPE.into(),
        order: ORDER.into(),
    };
    write_json(path, &header)?;
    let bytes: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(&payload_path(path), &bytes)
}

/// Masks are stored as 0/1 volumes and read back with a 0.5 threshold.
pub fn read_mask(path: &Path) -> Result<Volume<bool>> {
    Ok(read_volume(path)?.map(|v| v >= 0.5))
}

pub fn write_mask(path: &Path, mask: &Volume<bool>) -> Result<()> {
    write_volume(path, &mask.map(|b| if b { 1.0f32 } else { 0.0 }))
}

pub fn write_probability(path: &Path, prob: &Volume<f64>) -> Result<()> {
    write_volume(path, &prob.map(|p| p as f32))
}

pub fn read_points(path: &Path) -> Result<ExtremePointSet> {
    read_json(path)
}

pub fn write_points(path: &Path, pts: &ExtremePointSet) -> Result<()> {
    write_json(path, pts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(model: &ToyModel, config: &TrainConfig) -> Self {
        Checkpoint {
            weights: model.weights.clone(),
            bias: model.bias,
            config: config.clone(),
        }
    }

    pub fn model(&self) -> Result<ToyModel> {
        let model = ToyModel {
            weights: self.weights.clone(),
            bias: self.bias,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// File names are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCase {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub image: String,
    pub gt: String,
    pub points: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub spec: PhantomSpec,
    pub cases: Vec<ManifestCase>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestCase> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

#[derive(Clone, Debug)]
pub struct LoadedCase {
    pub id: String,
    pub image: Volume<f32>,
    pub gt: Volume<bool>,
    pub points: ExtremePointSet,
}

impl Dataset {
    /// Accepts either the manifest file or its directory.
    pub fn open(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_NAME))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        Ok(Dataset {
            root,
            manifest: read_json(&file)?,
        })
    }

    pub fn load(&self, case: &ManifestCase) -> Result<LoadedCase> {
        let image = read_volume(&self.root.join(&case.image))?;
        let gt = read_mask(&self.root.join(&case.gt))?;
        let points = read_points(&self.root.join(&case.points))?;
        image.check_shape(&gt)?;
        points.check_inside(image.shape())?;
        Ok(LoadedCase {
            id: case.id.clone(),
            image,
            gt,
            points,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<LoadedCase>> {
        self.manifest.split(split).map(|c| self.load(c)).collect()
    }
}
