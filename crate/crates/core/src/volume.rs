//! Volumes, label maps and the `VOL1` on-disk format.
//!
//! A `VOL1` file is a 29-byte header followed by a raw C-order payload
//! (z-major, then y, then x), all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "VOL1"
//!      4     8  z (u64)
//!     12     8  y (u64)
//!     20     8  x (u64)
//!     28     1  dtype code: 0 = u8 intensity, 1 = u32 label, 2 = f32 intensity
//!     29     …  payload, z·y·x·bytes_per_voxel bytes
//! ```
//!
//! Voxel size metadata, when present, lives in a JSON sidecar next to the
//! volume file (`<path>.meta.json`, `{ "voxel_size_nm": [z, y, x] }`).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VOL1";
pub const HEADER_LEN: usize = 29;

/// Element type of a `VOL1` payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    U8 = 0,
    U32 = 1,
    F32 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::U8),
            1 => Ok(DType::U32),
            2 => Ok(DType::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U32 | DType::F32 => 4,
        }
    }
}

/// Parsed `VOL1` header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VolumeHeader {
    pub dims: [u64; 3],
    pub dtype: DType,
}

impl VolumeHeader {
    pub fn payload_len(&self) -> Result<usize> {
        self.dims
            .iter()
            .try_fold(self.dtype.bytes_per_voxel() as u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Format(format!("payload size overflows for dims {:?}", self.dims)))
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        for (i, d) in self.dims.iter().enumerate() {
            out[4 + 8 * i..12 + 8 * i].copy_from_slice(&d.to_le_bytes());
        }
        out[28] = self.dtype as u8;
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "header truncated: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let mut dims = [0u64; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap());
        }
        if dims.contains(&0) {
            return Err(Error::Format(format!("zero-sized dimension in {dims:?}")));
        }
        Ok(VolumeHeader {
            dims,
            dtype: DType::from_code(bytes[28])?,
        })
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape(format!("shape {shape:?} has an empty axis")));
    }
    let expect: usize = shape.iter().product();
    if expect != len {
        return Err(Error::shape(format!(
            "shape {shape:?} needs {expect} voxels, got {len}"
        )));
    }
    Ok(())
}

/// A 3D intensity volume with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    data: Vec<f32>,
    pub voxel_size: Option<[f64; 3]>,
}

impl Volume {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Encoding(format!("intensity {v} at voxel {i} outside [0, 1]")));
        }
        Ok(Volume {
            shape,
            data,
            voxel_size: None,
        })
    }

    pub fn with_voxel_size(mut self, voxel_size: [f64; 3]) -> Self {
        self.voxel_size = Some(voxel_size);
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, h, w] = self.shape;
        self.data[(z * h + y) * w + x]
    }

    pub fn slice(&self, z: usize) -> Result<Image2D> {
        let [d, h, w] = self.shape;
        if z >= d {
            return Err(Error::Bounds(format!("slice {z} of a volume with depth {d}")));
        }
        Ok(Image2D {
            shape: [h, w],
            data: self.data[z * h * w..(z + 1) * h * w].to_vec(),
        })
    }

    /// Frames `z_start..z_end` as a new volume.
    pub fn sub_volume(&self, z_start: usize, z_end: usize) -> Result<Volume> {
        let [d, h, w] = self.shape;
        if z_start >= z_end || z_end > d {
            return Err(Error::Bounds(format!(
                "z range {z_start}..{z_end} of a volume with depth {d}"
            )));
        }
        Ok(Volume {
            shape: [z_end - z_start, h, w],
            data: self.data[z_start * h * w..z_end * h * w].to_vec(),
            voxel_size: self.voxel_size,
        })
    }

    pub fn from_slices(slices: &[Image2D]) -> Result<Volume> {
        let first = slices.first().ok_or_else(|| Error::shape("cannot stack zero slices"))?;
        let [h, w] = first.shape;
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if s.shape != first.shape {
                return Err(Error::shape("slices differ in shape"));
            }
            data.extend_from_slice(&s.data);
        }
        Volume::new([slices.len(), h, w], data)
    }
}

/// A 3D instance label map; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u32>,
    pub voxel_size: Option<[u64; 3]>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], data: Vec<u32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(LabelMap {
            shape,
            data,
            voxel_size: None,
        })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        LabelMap {
            shape,
            data: vec![0; shape.iter().product()],
            voxel_size: None,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u32 {
        let [_, h, w] = self.shape;
        self.data[(z * h + y) * w + x]
    }

    pub fn slice(&self, z: usize) -> Result<LabelMap2D> {
        let [d, h, w] = self.shape;
        if z >= d {
            return Err(Error::Bounds(format!("slice {z} of a label map with depth {d}")));
        }
        Ok(LabelMap2D {
            shape: [h, w],
            data: self.data[z * h * w..(z + 1) * h * w].to_vec(),
        })
    }

    pub fn set_slice(&mut self, z: usize, slice: &LabelMap2D) -> Result<()> {
        let [d, h, w] = self.shape;
        if z >= d {
            return Err(Error::Bounds(format!("slice {z} of a label map with depth {d}")));
        }
        if slice.shape != [h, w] {
            return Err(Error::shape(format!(
                "slice shape {:?} does not match ({h}, {w})",
                slice.shape
            )));
        }
        self.data[z * h * w..(z + 1) * h * w].copy_from_slice(&slice.data);
        Ok(())
    }

    pub fn sub_volume(&self, z_start: usize, z_end: usize) -> Result<LabelMap> {
        let [d, h, w] = self.shape;
        if z_start >= z_end || z_end > d {
            return Err(Error::Bounds(format!(
                "z range {z_start}..{z_end} of a label map with depth {d}"
            )));
        }
        Ok(LabelMap {
            shape: [z_end - z_start, h, w],
            data: self.data[z_start * h * w..z_end * h * w].to_vec(),
            voxel_size: self.voxel_size,
        })
    }

    pub fn from_slices(slices: &[LabelMap2D]) -> Result<LabelMap> {
        let first = slices.first().ok_or_else(|| Error::shape("cannot stack zero slices"))?;
        let [h, w] = first.shape;
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if s.shape != first.shape {
                return Err(Error::shape("slices differ in shape"));
            }
            data.extend_from_slice(&s.data);
        }
        LabelMap::new([slices.len(), h, w], data)
    }

    /// Distinct non-zero ids, ascending.
    pub fn ids(&self) -> BTreeSet<u32> {
        self.data.iter().copied().filter(|&v| v != 0).collect()
    }
}

/// A single 2D intensity frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

impl Image2D {
    pub fn new(shape: [usize; 2], data: Vec<f32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Image2D { shape, data })
    }

    pub fn filled(shape: [usize; 2], value: f32) -> Self {
        Image2D {
            shape,
            data: vec![value; shape[0] * shape[1]],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.shape[1] + x]
    }
}

/// A single 2D label map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap2D {
    pub shape: [usize; 2],
    pub data: Vec<u32>,
}

impl LabelMap2D {
    pub fn new(shape: [usize; 2], data: Vec<u32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(LabelMap2D { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        LabelMap2D {
            shape,
            data: vec![0; shape[0] * shape[1]],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.shape[1] + x]
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.data.iter().copied().filter(|&v| v != 0).collect()
    }

    pub fn area(&self, id: u32) -> usize {
        self.data.iter().filter(|&&v| v == id).count()
    }

    /// Binary indicator of `id` as `f32` (1 inside, 0 outside).
    pub fn indicator(&self, id: u32) -> Vec<f32> {
        self.data
            .iter()
            .map(|&v| if v == id && id != 0 { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Contents of a `VOL1` file.
#[derive(Clone, Debug, PartialEq)]
pub enum Grid {
    /// Intensities quantised to `u8` on disk (`value · 255`, rounded).
    U8(Volume),
    /// Intensities stored as raw `f32`.
    F32(Volume),
    Labels(LabelMap),
}

impl Grid {
    pub fn dtype(&self) -> DType {
        match self {
            Grid::U8(_) => DType::U8,
            Grid::F32(_) => DType::F32,
            Grid::Labels(_) => DType::U32,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        match self {
            Grid::U8(v) | Grid::F32(v) => v.shape(),
            Grid::Labels(l) => l.shape(),
        }
    }

    pub fn into_volume(self) -> Result<Volume> {
        match self {
            Grid::U8(v) | Grid::F32(v) => Ok(v),
            Grid::Labels(_) => Err(Error::Format("expected an intensity volume, found labels".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelMap> {
        match self {
            Grid::Labels(l) => Ok(l),
            _ => Err(Error::Format("expected a label map, found intensities".into())),
        }
    }

    fn voxel_size(&self) -> Option<[f64; 3]> {
        match self {
            Grid::U8(v) | Grid::F32(v) => v.voxel_size,
            Grid::Labels(l) => l.voxel_size.map(|s| s.map(|x| x as f64)),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    voxel_size_nm: [f64; 3],
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Serialises a grid into `VOL1` bytes (header + payload).
pub fn encode_grid(grid: &Grid) -> Result<Vec<u8>> {
    let [z, y, x] = grid.shape();
    let header = VolumeHeader {
        dims: [z as u64, y as u64, x as u64],
        dtype: grid.dtype(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len()?);
    out.extend_from_slice(&header.encode());
    match grid {
        Grid::U8(v) => {
            for &value in v.data() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Encoding(format!("intensity {value} cannot be stored as u8")));
                }
                out.push((value * 255.0).round() as u8);
            }
        }
        Grid::F32(v) => {
            for &value in v.data() {
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
        Grid::Labels(l) => {
            for &value in l.data() {
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses `VOL1` bytes; never returns a partially filled grid.
pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    let header = VolumeHeader::decode(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let expect = header.payload_len()?;
    if payload.len() != expect {
        return Err(Error::Format(format!(
            "payload is {} bytes, header declares {expect}",
            payload.len()
        )));
    }
    let shape = header.dims.map(|d| d as usize);
    Ok(match header.dtype {
        DType::U8 => Grid::U8(Volume::new(shape, payload.iter().map(|&b| b as f32 / 255.0).collect())?),
        DType::F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Grid::F32(Volume::new(shape, data).map_err(|e| Error::Format(e.to_string()))?)
        }
        DType::U32 => Grid::Labels(LabelMap::new(
            shape,
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )?),
    })
}

/// Writes `grid` to `path` and, if it carries a voxel size, the JSON sidecar.
pub fn write_volume(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_grid(grid)?;
    write_atomic(path, &bytes)?;
    if let Some(voxel_size_nm) = grid.voxel_size() {
        let json = serde_json::to_vec_pretty(&Sidecar { voxel_size_nm }).map_err(|e| Error::Encoding(e.to_string()))?;
        write_atomic(&sidecar_path(path), &json)?;
    }
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
    let mut grid = decode_grid(&bytes).map_err(|e| e.context(path.display().to_string()))?;
    let side = sidecar_path(path);
    if side.exists() {
        let raw = fs::read(&side).map_err(|e| Error::storage(&side, e))?;
        let meta: Sidecar =
            serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        match &mut grid {
            Grid::U8(v) | Grid::F32(v) => v.voxel_size = Some(meta.voxel_size_nm),
            Grid::Labels(l) => l.voxel_size = Some(meta.voxel_size_nm.map(|x| x as u64)),
        }
    }
    Ok(grid)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::storage(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::storage(&tmp, e))?;
    file.sync_all().map_err(|e| Error::storage(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::storage(path, e))
}

/// `length` consecutive frames starting at `z_start`, plus the label slice at
/// `z_start` as the reference frame.
pub fn extract_sequence(
    volume: &Volume,
    labels: &LabelMap,
    z_start: usize,
    length: usize,
) -> Result<(Vec<Image2D>, LabelMap2D)> {
    let [d, h, w] = volume.shape();
    if labels.shape() != volume.shape() {
        return Err(Error::shape(format!(
            "volume {:?} and labels {:?} differ",
            volume.shape(),
            labels.shape()
        )));
    }
    if length == 0 || z_start + length > d {
        return Err(Error::Bounds(format!(
            "sequence {z_start}..{} of a volume with depth {d}",
            z_start + length
        )));
    }
    let frames = (z_start..z_start + length)
        .map(|z| Image2D {
            shape: [h, w],
            data: volume.data()[z * h * w..(z + 1) * h * w].to_vec(),
        })
        .collect();
    Ok((frames, labels.slice(z_start)?))
}

/// Nearest-neighbour (top-left of each 2×2 block) label pyramid; level 0 is
/// the input.
pub fn label_pyramid(labels: &LabelMap2D, levels: usize) -> Result<Vec<LabelMap2D>> {
    if levels == 0 {
        return Err(Error::shape("label pyramid needs at least one level"));
    }
    let factor = 1usize << (levels - 1);
    let [h, w] = labels.shape;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "({h}, {w}) not divisible by {factor} for {levels} pyramid levels"
        )));
    }
    let mut out = vec![labels.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        let [ph, pw] = prev.shape;
        let (nh, nw) = (ph / 2, pw / 2);
        let mut data = Vec::with_capacity(nh * nw);
        for y in 0..nh {
            for x in 0..nw {
                data.push(prev.get(2 * y, 2 * x));
            }
        }
        out.push(LabelMap2D { shape: [nh, nw], data });
    }
    Ok(out)
}
