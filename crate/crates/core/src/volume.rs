//! CT and mask volumes plus the MetaImage (`.mhd` + `.raw`) reader and writer.
//!
//! Only uncompressed little-endian `MET_SHORT` and `MET_UCHAR` payloads with
//! `NDims = 3` are accepted. The writer output is byte-stable: the same volume
//! always produces the same header text and payload.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Voxel grid geometry: `dims` in voxels, `spacing` and `origin` in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::GeometryMismatch(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::GeometryMismatch(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        Ok(Geometry {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit spacing, zero origin.
    pub fn with_dims(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn depth(&self) -> usize {
        self.dims[2]
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims
    }
}

/// Element types that can be stored in a MetaImage payload.
pub trait Voxel: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const ELEMENT_TYPE: &'static str;
    const BYTES: usize;
    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
}

impl Voxel for i16 {
    const ELEMENT_TYPE: &'static str = "MET_SHORT";
    const BYTES: usize = 2;
    fn read_le(bytes: &[u8]) -> Self {
        i16::from_le_bytes([bytes[0], bytes[1]])
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Voxel for u8 {
    const ELEMENT_TYPE: &'static str = "MET_UCHAR";
    const BYTES: usize = 1;
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
}

/// A 3D voxel grid stored x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<V> {
    geometry: Geometry,
    voxels: Vec<V>,
}

/// Hounsfield-unit CT volume.
pub type CtVolume = Volume<i16>;

impl<V: Copy> Volume<V> {
    pub fn new(geometry: Geometry, voxels: Vec<V>) -> Result<Self> {
        if voxels.len() != geometry.voxel_count() {
            return Err(Error::DimMismatch {
                expected: geometry.voxel_count(),
                found: voxels.len(),
            });
        }
        Ok(Volume { geometry, voxels })
    }

    pub fn filled(geometry: Geometry, value: V) -> Self {
        Volume {
            voxels: vec![value; geometry.voxel_count()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn voxels(&self) -> &[V] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<V> {
        self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> V {
        let [nx, ny, _] = self.geometry.dims;
        self.voxels[x + nx * (y + ny * z)]
    }

    /// Axial slice `z` as a row-major `ny x nx` buffer.
    pub fn slice(&self, z: usize) -> &[V] {
        let len = self.geometry.slice_len();
        &self.voxels[z * len..(z + 1) * len]
    }

    /// Applies `f` voxelwise, keeping the geometry.
    pub fn map<W: Copy>(&self, f: impl Fn(V) -> W) -> Volume<W> {
        Volume {
            geometry: self.geometry,
            voxels: self.voxels.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Association of anatomical roles to integer labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelMap {
    pub left_lung: u8,
    pub right_lung: u8,
    pub trachea: Option<u8>,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            left_lung: 1,
            right_lung: 2,
            trachea: None,
        }
    }
}

impl LabelMap {
    pub fn contains(&self, label: u8) -> bool {
        label == self.left_lung || label == self.right_lung || Some(label) == self.trachea
    }

    pub fn is_lung(&self, label: u8) -> bool {
        label == self.left_lung || label == self.right_lung
    }
}

/// Ground-truth label grid together with the map that gives its labels meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    volume: Volume<u8>,
    label_map: LabelMap,
    strict: bool,
}

impl LabelVolume {
    /// In strict mode every nonzero voxel must carry a mapped label.
    pub fn new(volume: Volume<u8>, label_map: LabelMap, strict: bool) -> Result<Self> {
        if strict {
            check_mapped(volume.voxels(), &label_map)?;
        }
        Ok(LabelVolume {
            volume,
            label_map,
            strict,
        })
    }

    pub fn volume(&self) -> &Volume<u8> {
        &self.volume
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    pub fn geometry(&self) -> &Geometry {
        self.volume.geometry()
    }
}

fn check_mapped(voxels: &[u8], map: &LabelMap) -> Result<()> {
    match voxels.iter().find(|&&v| v != 0 && !map.contains(v)) {
        Some(&v) => Err(Error::UnmappedLabel(v)),
        None => Ok(()),
    }
}

/// Volume whose voxels are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Volume<u8>);

impl BinaryMask {
    pub fn new(geometry: Geometry, voxels: Vec<u8>) -> Result<Self> {
        Self::from_volume(Volume::new(geometry, voxels)?)
    }

    pub fn from_volume(volume: Volume<u8>) -> Result<Self> {
        if let Some(&v) = volume.voxels().iter().find(|&&v| v > 1) {
            return Err(Error::UnsupportedType(format!(
                "binary mask voxel must be 0 or 1, found {v}"
            )));
        }
        Ok(BinaryMask(volume))
    }

    pub fn zeros(geometry: Geometry) -> Self {
        BinaryMask(Volume::filled(geometry, 0))
    }

    pub fn as_volume(&self) -> &Volume<u8> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<u8> {
        self.0
    }

    pub fn geometry(&self) -> &Geometry {
        self.0.geometry()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    pub fn voxels(&self) -> &[u8] {
        self.0.voxels()
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        self.0.slice(z)
    }

    pub fn count_ones(&self) -> usize {
        self.0.voxels().iter().filter(|&&v| v == 1).count()
    }
}

/// Merges the left and right lung labels into one binary target. Trachea and
/// every other label become background.
pub fn to_binary_lung(labels: &LabelVolume) -> Result<BinaryMask> {
    if labels.strict {
        check_mapped(labels.volume.voxels(), &labels.label_map)?;
    }
    let map = labels.label_map;
    Ok(BinaryMask(
        labels.volume.map(|v| u8::from(v != 0 && map.is_lung(v))),
    ))
}

/// A volume decoded from a MetaImage file, typed by its `ElementType`.
#[derive(Debug, Clone, PartialEq)]
pub enum MhdVolume {
    Ct(CtVolume),
    Label(Volume<u8>),
}

impl MhdVolume {
    pub fn geometry(&self) -> &Geometry {
        match self {
            MhdVolume::Ct(v) => v.geometry(),
            MhdVolume::Label(v) => v.geometry(),
        }
    }

    pub fn into_ct(self) -> Result<CtVolume> {
        match self {
            MhdVolume::Ct(v) => Ok(v),
            MhdVolume::Label(_) => Err(Error::UnsupportedType(
                "expected a MET_SHORT CT volume, found MET_UCHAR".into(),
            )),
        }
    }

    pub fn into_labels(self) -> Result<Volume<u8>> {
        match self {
            MhdVolume::Label(v) => Ok(v),
            MhdVolume::Ct(_) => Err(Error::UnsupportedType(
                "expected a MET_UCHAR label volume, found MET_SHORT".into(),
            )),
        }
    }
}

struct Header {
    fields: HashMap<String, String>,
}

impl Header {
    fn parse(text: &str) -> Result<Self> {
        let mut fields = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::BadHeader {
                    key: line.to_string(),
                    value: String::new(),
                });
            };
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Header { fields })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    fn triple<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<[T; 3]> {
        let bad = || Error::BadHeader {
            key: key.to_string(),
            value: value.to_string(),
        };
        let parts: Vec<T> = value
            .split_whitespace()
            .map(|p| p.parse::<T>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        <[T; 3]>::try_from(parts).map_err(|_| bad())
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key)
            .is_some_and(|v| v.eq_ignore_ascii_case("true") || v == "1")
    }
}

/// Reads a MetaImage header and its raw payload.
pub fn read_mhd(path: impl AsRef<Path>) -> Result<MhdVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = Header::parse(&text)?;

    let ndims = header.required("NDims")?;
    if ndims != "3" {
        return Err(Error::UnsupportedType(format!("NDims = {ndims}")));
    }
    let dims_text = header.required("DimSize")?;
    let dims: [usize; 3] = header.triple("DimSize", dims_text)?;
    let spacing: [f64; 3] = match header.get("ElementSpacing") {
        Some(v) => header.triple("ElementSpacing", v)?,
        None => [1.0; 3],
    };
    let origin: [f64; 3] = match header
        .get("Offset")
        .or_else(|| header.get("Origin"))
        .or_else(|| header.get("Position"))
    {
        Some(v) => header.triple("Offset", v)?,
        None => [0.0; 3],
    };
    let element_type = header.required("ElementType")?;
    let data_file = header.required("ElementDataFile")?;

    if header.flag("ElementByteOrderMSB") || header.flag("BinaryDataByteOrderMSB") {
        return Err(Error::UnsupportedType("big-endian payload".into()));
    }
    if header.flag("CompressedData") {
        return Err(Error::UnsupportedType("compressed payload".into()));
    }
    if let Some(size) = header.get("HeaderSize") {
        if size != "0" {
            return Err(Error::UnsupportedType(format!("HeaderSize = {size}")));
        }
    }
    if data_file.eq_ignore_ascii_case("LOCAL") || data_file.contains('%') {
        return Err(Error::UnsupportedType(format!(
            "ElementDataFile = {data_file}"
        )));
    }
    if let Some(channels) = header.get("ElementNumberOfChannels") {
        if channels != "1" {
            return Err(Error::UnsupportedType(format!(
                "ElementNumberOfChannels = {channels}"
            )));
        }
    }

    let geometry = Geometry::new(dims, spacing, origin).map_err(|_| Error::BadHeader {
        key: "DimSize/ElementSpacing".into(),
        value: format!("{dims_text} / {spacing:?}"),
    })?;
    let raw_path = sibling(path, data_file);
    let payload = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;

    match element_type {
        "MET_SHORT" => decode(geometry, &payload).map(MhdVolume::Ct),
        "MET_UCHAR" => decode(geometry, &payload).map(MhdVolume::Label),
        other => Err(Error::UnsupportedType(other.to_string())),
    }
}

fn sibling(header_path: &Path, name: &str) -> PathBuf {
    match header_path.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn decode<V: Voxel>(geometry: Geometry, payload: &[u8]) -> Result<Volume<V>> {
    let expected = geometry.voxel_count() * V::BYTES;
    if payload.len() != expected {
        return Err(Error::DimMismatch {
            expected,
            found: payload.len(),
        });
    }
    let voxels = payload.chunks_exact(V::BYTES).map(V::read_le).collect();
    Volume::new(geometry, voxels)
}

/// Header text exactly as [`write_mhd`] emits it.
pub fn header_text<V: Voxel>(volume: &Volume<V>, data_file: &str) -> String {
    let g = volume.geometry();
    let mut out = String::new();
    let _ = writeln!(out, "NDims = 3");
    let _ = writeln!(out, "DimSize = {} {} {}", g.dims[0], g.dims[1], g.dims[2]);
    let _ = writeln!(
        out,
        "ElementSpacing = {} {} {}",
        g.spacing[0], g.spacing[1], g.spacing[2]
    );
    let _ = writeln!(
        out,
        "Offset = {} {} {}",
        g.origin[0], g.origin[1], g.origin[2]
    );
    let _ = writeln!(out, "ElementType = {}", V::ELEMENT_TYPE);
    let _ = writeln!(out, "ElementByteOrderMSB = False");
    let _ = writeln!(out, "ElementDataFile = {data_file}");
    out
}

/// Little-endian payload bytes.
pub fn payload_bytes<V: Voxel>(volume: &Volume<V>) -> Vec<u8> {
    let mut out = Vec::with_capacity(volume.voxels().len() * V::BYTES);
    for &v in volume.voxels() {
        v.write_le(&mut out);
    }
    out
}

/// Writes `path` (header) and a sibling `.raw` payload with the same stem.
pub fn write_mhd<V: Voxel>(volume: &Volume<V>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = path.with_extension("raw");
    let data_file = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad output path {}", path.display())))?
        .to_string();
    fs::write(&raw_path, payload_bytes(volume)).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(path, header_text(volume, &data_file)).map_err(|e| Error::io(path, e))?;
    Ok(())
}
