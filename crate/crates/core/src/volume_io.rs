//! NIfTI-1 subset reader/writer, specimen manifests and slice extraction.
//!
//! Only single-channel `u8`, `i16` and `f32` payloads are supported, in either
//! byte order. Orientation matrices (qform/sform) are ignored: voxels are kept
//! in file order, x fastest and z slowest.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Axis, Provenance, SliceImage};
use crate::labels::LabelSet;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const MIN_FILE_HEADER: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("header truncated: {0} bytes available, at least 352 required")]
    TruncatedHeader(usize),
    #[error("bad NIfTI magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("payload has {got} bytes, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("slice index {index} out of range for axis {axis} (dim {dim})")]
    IndexOutOfRange { axis: Axis, index: usize, dim: usize },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VolumeError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        VolumeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self, VolumeError> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            other => Err(VolumeError::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    /// `(nx, ny, nz)`
    pub dims: [usize; 3],
    pub datatype: Datatype,
    /// Zero in the file means "unset"; [`VolumeHeader::effective_slope`]
    /// treats it as 1.
    pub scale_slope: f64,
    pub scale_inter: f64,
    /// Voxel spacing in micrometres.
    pub voxel_size: [f64; 3],
    pub vox_offset: usize,
    pub endianness: Endianness,
    /// `true` for the two-file (`ni1`) variant.
    pub pair_file: bool,
}

impl VolumeHeader {
    pub fn new(dims: [usize; 3], datatype: Datatype) -> Self {
        Self {
            dims,
            datatype,
            scale_slope: 1.0,
            scale_inter: 0.0,
            voxel_size: [1.0; 3],
            vox_offset: MIN_FILE_HEADER,
            endianness: Endianness::Little,
            pair_file: false,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.voxel_count() * self.datatype.bytes_per_voxel()
    }

    pub fn effective_slope(&self) -> f64 {
        if self.scale_slope == 0.0 || !self.scale_slope.is_finite() {
            1.0
        } else {
            self.scale_slope
        }
    }

    pub fn dim(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.dims[0],
            Axis::Y => self.dims[1],
            Axis::Z => self.dims[2],
        }
    }
}

/// Decodes the fixed 348-byte NIfTI-1 header. Byte order is detected from
/// `sizeof_hdr`, which must read 348 in one of the two orders.
pub fn parse_header(bytes: &[u8]) -> Result<VolumeHeader, VolumeError> {
    if bytes.len() < MIN_FILE_HEADER {
        return Err(VolumeError::TruncatedHeader(bytes.len()));
    }
    let endianness = if LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        Endianness::Little
    } else if BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        Endianness::Big
    } else {
        return Err(VolumeError::InvalidHeader(
            "sizeof_hdr is not 348 in either byte order".into(),
        ));
    };
    match endianness {
        Endianness::Little => parse_fields::<LittleEndian>(bytes, endianness),
        Endianness::Big => parse_fields::<BigEndian>(bytes, endianness),
    }
}

fn parse_fields<B: ByteOrder>(bytes: &[u8], endianness: Endianness) -> Result<VolumeHeader, VolumeError> {
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[offsets::MAGIC..offsets::MAGIC + 4]);
    let pair_file = match &magic {
        b"n+1\0" => false,
        b"ni1\0" => true,
        _ => return Err(VolumeError::BadMagic(magic)),
    };

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&bytes[offsets::DIM + 2 * i..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::InvalidHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=ndim as usize {
        let d = dim[i];
        if d < 1 {
            return Err(VolumeError::InvalidHeader(format!("dim[{i}] = {d}")));
        }
        if i <= 3 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(VolumeError::InvalidHeader(format!(
                "only 3D volumes are supported (dim[{i}] = {d})"
            )));
        }
    }

    let datatype = Datatype::from_code(B::read_i16(&bytes[offsets::DATATYPE..]))?;
    let bitpix = B::read_i16(&bytes[offsets::BITPIX..]);
    if bitpix != 0 && bitpix as usize != 8 * datatype.bytes_per_voxel() {
        return Err(VolumeError::InvalidHeader(format!(
            "bitpix {bitpix} does not match datatype {datatype:?}"
        )));
    }

    let mut voxel_size = [1.0f64; 3];
    for (i, v) in voxel_size.iter_mut().enumerate() {
        let p = B::read_f32(&bytes[offsets::PIXDIM + 4 * (i + 1)..]) as f64;
        // Exporters frequently leave pixdim at 0 for unit spacing.
        *v = if p.is_finite() && p != 0.0 { p.abs() } else { 1.0 };
    }

    let vox_offset_f = B::read_f32(&bytes[offsets::VOX_OFFSET..]);
    if !vox_offset_f.is_finite() || vox_offset_f < 0.0 {
        return Err(VolumeError::InvalidHeader(format!("vox_offset = {vox_offset_f}")));
    }
    let vox_offset = vox_offset_f as usize;
    if !pair_file && vox_offset < MIN_FILE_HEADER {
        return Err(VolumeError::InvalidHeader(format!(
            "vox_offset {vox_offset} overlaps the header"
        )));
    }

    Ok(VolumeHeader {
        dims,
        datatype,
        scale_slope: B::read_f32(&bytes[offsets::SCL_SLOPE..]) as f64,
        scale_inter: B::read_f32(&bytes[offsets::SCL_INTER..]) as f64,
        voxel_size,
        vox_offset,
        endianness,
        pair_file,
    })
}

/// Raw, unscaled voxel payload.
#[derive(Debug, Clone, PartialEq)]
pub enum RawVoxels {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl RawVoxels {
    pub fn len(&self) -> usize {
        match self {
            RawVoxels::U8(v) => v.len(),
            RawVoxels::I16(v) => v.len(),
            RawVoxels::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn datatype(&self) -> Datatype {
        match self {
            RawVoxels::U8(_) => Datatype::U8,
            RawVoxels::I16(_) => Datatype::I16,
            RawVoxels::F32(_) => Datatype::F32,
        }
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            RawVoxels::U8(v) => v[i] as f64,
            RawVoxels::I16(v) => v[i] as f64,
            RawVoxels::F32(v) => v[i] as f64,
        }
    }
}

fn decode_payload(header: &VolumeHeader, payload: &[u8]) -> Result<RawVoxels, VolumeError> {
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            got: payload.len(),
        });
    }
    let n = header.voxel_count();
    Ok(match (header.datatype, header.endianness) {
        (Datatype::U8, _) => RawVoxels::U8(payload.to_vec()),
        (Datatype::I16, e) => {
            let mut out = vec![0i16; n];
            match e {
                Endianness::Little => LittleEndian::read_i16_into(payload, &mut out),
                Endianness::Big => BigEndian::read_i16_into(payload, &mut out),
            }
            RawVoxels::I16(out)
        }
        (Datatype::F32, e) => {
            let mut out = vec![0f32; n];
            match e {
                Endianness::Little => LittleEndian::read_f32_into(payload, &mut out),
                Endianness::Big => BigEndian::read_f32_into(payload, &mut out),
            }
            RawVoxels::F32(out)
        }
    })
}

/// Serialises a single-file (`n+1`) NIfTI image. The header's datatype is
/// taken from `voxels`; `vox_offset` is forced to 352.
pub fn encode_nifti(header: &VolumeHeader, voxels: &RawVoxels) -> Result<Vec<u8>, VolumeError> {
    if voxels.len() != header.voxel_count() {
        return Err(VolumeError::SizeMismatch {
            expected: header.voxel_count(),
            got: voxels.len(),
        });
    }
    match header.endianness {
        Endianness::Little => Ok(encode_with::<LittleEndian>(header, voxels)),
        Endianness::Big => Ok(encode_with::<BigEndian>(header, voxels)),
    }
}

fn encode_with<B: ByteOrder>(header: &VolumeHeader, voxels: &RawVoxels) -> Vec<u8> {
    let datatype = voxels.datatype();
    let mut buf = vec![0u8; MIN_FILE_HEADER + voxels.len() * datatype.bytes_per_voxel()];
    B::write_i32(&mut buf[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dims = [3i16, header.dims[0] as i16, header.dims[1] as i16, header.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        B::write_i16(&mut buf[offsets::DIM + 2 * i..], *d);
    }
    B::write_i16(&mut buf[offsets::DATATYPE..], datatype.code());
    B::write_i16(&mut buf[offsets::BITPIX..], 8 * datatype.bytes_per_voxel() as i16);
    let pixdim = [1.0f32, header.voxel_size[0] as f32, header.voxel_size[1] as f32, header.voxel_size[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        B::write_f32(&mut buf[offsets::PIXDIM + 4 * i..], *p);
    }
    B::write_f32(&mut buf[offsets::VOX_OFFSET..], MIN_FILE_HEADER as f32);
    B::write_f32(&mut buf[offsets::SCL_SLOPE..], header.scale_slope as f32);
    B::write_f32(&mut buf[offsets::SCL_INTER..], header.scale_inter as f32);
    buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");
    let payload = &mut buf[MIN_FILE_HEADER..];
    match voxels {
        RawVoxels::U8(v) => payload.copy_from_slice(v),
        RawVoxels::I16(v) => B::write_i16_into(v, payload),
        RawVoxels::F32(v) => B::write_f32_into(v, payload),
    }
    buf
}

/// A specimen scan: voxels rescaled by (slope, intercept) and then min-max
/// normalised to `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Volume {
    pub header: VolumeHeader,
    voxels: Vec<f32>,
    pub specimen_id: String,
    pub species: String,
    /// Scaled intensity range before normalisation.
    pub intensity_range: (f64, f64),
    /// Zero-range input: every voxel normalised to 0.
    pub degenerate: bool,
}

impl Volume {
    /// Normalises raw voxels into a volume.
    pub fn from_raw(
        header: VolumeHeader,
        raw: &RawVoxels,
        specimen_id: impl Into<String>,
        species: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        if raw.len() != header.voxel_count() {
            return Err(VolumeError::SizeMismatch {
                expected: header.payload_len(),
                got: raw.len() * raw.datatype().bytes_per_voxel(),
            });
        }
        let slope = header.effective_slope();
        let inter = if header.scale_inter.is_finite() {
            header.scale_inter
        } else {
            0.0
        };
        let scaled: Vec<f64> = (0..raw.len()).map(|i| raw.value(i) * slope + inter).collect();
        let (lo, hi) = scaled
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        let degenerate = !(range > 0.0);
        let voxels = if degenerate {
            vec![0.0; scaled.len()]
        } else {
            scaled
                .iter()
                .map(|&v| {
                    if v.is_finite() {
                        (((v - lo) / range) as f32).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        Ok(Self {
            header,
            voxels,
            specimen_id: specimen_id.into(),
            species: species.into(),
            intensity_range: if degenerate && !lo.is_finite() { (0.0, 0.0) } else { (lo, hi) },
            degenerate,
        })
    }

    /// Parses an in-memory `.nii` file.
    pub fn from_nifti_bytes(
        bytes: &[u8],
        specimen_id: impl Into<String>,
        species: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        let header = parse_header(bytes)?;
        if header.vox_offset > bytes.len() {
            return Err(VolumeError::SizeMismatch {
                expected: header.payload_len(),
                got: 0,
            });
        }
        let raw = decode_payload(&header, &bytes[header.vox_offset..])?;
        Self::from_raw(header, &raw, specimen_id, species)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    #[inline]
    pub fn voxel(&self, x: usize, y: usize, z: usize) -> f32 {
        let [nx, ny, _] = self.header.dims;
        self.voxels[(z * ny + y) * nx + x]
    }

    /// Re-encodes the volume in its header's datatype, inverting the
    /// normalisation and the (slope, intercept) scaling. Integer types are
    /// rounded, so `u8`/`i16` payloads survive a load/write cycle unchanged.
    pub fn to_raw(&self) -> RawVoxels {
        let (lo, hi) = self.intensity_range;
        let slope = self.header.effective_slope();
        let inter = if self.header.scale_inter.is_finite() {
            self.header.scale_inter
        } else {
            0.0
        };
        let unscale = |n: f32| {
            let scaled = lo + n as f64 * (hi - lo);
            (scaled - inter) / slope
        };
        match self.header.datatype {
            Datatype::U8 => RawVoxels::U8(
                self.voxels.iter().map(|&n| unscale(n).round().clamp(0.0, 255.0) as u8).collect(),
            ),
            Datatype::I16 => RawVoxels::I16(
                self.voxels
                    .iter()
                    .map(|&n| unscale(n).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
                    .collect(),
            ),
            Datatype::F32 => RawVoxels::F32(self.voxels.iter().map(|&n| unscale(n) as f32).collect()),
        }
    }

    pub fn to_nifti_bytes(&self) -> Result<Vec<u8>, VolumeError> {
        encode_nifti(&self.header, &self.to_raw())
    }
}

/// Loads a `.nii` (or `ni1` `.hdr` + `.img` pair) for a manifest entry.
pub fn load_volume(path: impl AsRef<Path>, entry: &ManifestEntry) -> Result<Volume, VolumeError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    let header = parse_header(&bytes)?;
    if header.pair_file {
        let img_path = path.with_extension("img");
        let img = fs::read(&img_path).map_err(|e| VolumeError::io(&img_path, e))?;
        let start = header.vox_offset.min(img.len());
        let raw = decode_payload(&header, &img[start..])?;
        return Volume::from_raw(header, &raw, entry.specimen_id.clone(), entry.species.clone());
    }
    Volume::from_nifti_bytes(&bytes, entry.specimen_id.clone(), entry.species.clone())
}

/// Writes a volume back to a single-file NIfTI.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let path = path.as_ref();
    let bytes = volume.to_nifti_bytes()?;
    fs::write(path, bytes).map_err(|e| VolumeError::io(path, e))
}

/// Extracts an axis-aligned slice.
///
/// Orientation: a Z slice is the (x, y) plane with x along columns and y
/// along rows; a Y slice is (x, z) with z along rows; an X slice is (y, z)
/// with y along columns and z along rows.
pub fn extract_slice(volume: &Volume, axis: Axis, index: usize) -> Result<SliceImage, VolumeError> {
    let [nx, ny, nz] = volume.dims();
    let dim = volume.header.dim(axis);
    if index >= dim {
        return Err(VolumeError::IndexOutOfRange { axis, index, dim });
    }
    let image = match axis {
        Axis::Z => {
            let start = index * nx * ny;
            SliceImage::new(nx, ny, volume.voxels[start..start + nx * ny].to_vec())
        }
        Axis::Y => Ok(SliceImage::from_fn(nx, nz, |x, z| volume.voxel(x, index, z))),
        Axis::X => Ok(SliceImage::from_fn(ny, nz, |y, z| volume.voxel(index, y, z))),
    }
    .expect("normalised voxels are always in [0, 1]");
    Ok(image.with_provenance(Provenance {
        volume_id: volume.specimen_id.clone(),
        axis,
        index,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// As written in the manifest (relative paths resolve against the
    /// manifest's directory).
    pub path: PathBuf,
    pub specimen_id: String,
    pub species: String,
}

/// Tab-separated `path<TAB>specimen_id<TAB>species` list. Lines starting with
/// `#` are comments, except `#species:` which overrides the label set with a
/// comma-separated list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub species_set: LabelSet,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, VolumeError> {
        let mut species_set = LabelSet::species();
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, raw_line) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw_line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#species:") {
                species_set = LabelSet::new(rest.split(',').map(str::trim).filter(|s| !s.is_empty()));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(VolumeError::Manifest {
                    line: line_no,
                    message: "expected path<TAB>specimen_id<TAB>species".into(),
                });
            }
            let (path, specimen_id, species) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if !seen.insert(specimen_id.to_string()) {
                return Err(VolumeError::Manifest {
                    line: line_no,
                    message: format!("duplicate specimen id {specimen_id}"),
                });
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                specimen_id: specimen_id.to_string(),
                species: species.to_string(),
            });
        }
        for (n, e) in entries.iter().enumerate() {
            if !species_set.contains(&e.species) {
                return Err(VolumeError::Manifest {
                    line: n + 1,
                    message: format!("species {} is not in the label set", e.species),
                });
            }
        }
        Ok(Self {
            entries,
            species_set,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VolumeError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| VolumeError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if self.species_set != LabelSet::species() {
            out.push_str("#species: ");
            out.push_str(&self.species_set.as_slice().join(","));
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.path.display(), e.specimen_id, e.species));
        }
        out
    }

    /// Loads every entry, returning per-entry results so one corrupt file
    /// does not abort a batch.
    pub fn load_all(&self) -> Vec<Result<Volume, VolumeError>> {
        self.entries
            .iter()
            .map(|e| load_volume(self.resolve(e), e))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(dims: [i16; 4], datatype: i16, big: bool) -> Vec<u8> {
        let mut h = VolumeHeader::new([dims[1] as usize, dims[2] as usize, dims[3] as usize], Datatype::U8);
        if big {
            h.endianness = Endianness::Big;
        }
        let n = h.voxel_count();
        let mut bytes = encode_nifti(&h, &RawVoxels::U8(vec![0; n])).unwrap();
        let code = datatype.to_be_bytes();
        let code = if big { code } else { datatype.to_le_bytes() };
        bytes[70..72].copy_from_slice(&code);
        bytes[72..74].copy_from_slice(&[0, 0]);
        bytes
    }

    #[test]
    fn parses_both_byte_orders() {
        let le = parse_header(&header_bytes([3, 4, 4, 4], 2, false)).unwrap();
        let be = parse_header(&header_bytes([3, 4, 4, 4], 2, true)).unwrap();
        assert_eq!(le.dims, [4, 4, 4]);
        assert_eq!(le.datatype, Datatype::U8);
        assert_eq!(be.endianness, Endianness::Big);
        assert_eq!(le.dims, be.dims);
        assert_eq!(le.datatype, be.datatype);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_header(&[0u8; 100]), Err(VolumeError::TruncatedHeader(100))));
        let mut b = header_bytes([3, 2, 2, 2], 2, false);
        b[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(parse_header(&b), Err(VolumeError::BadMagic(_))));
        let b = header_bytes([3, 2, 2, 2], 64, false);
        assert!(matches!(parse_header(&b), Err(VolumeError::UnsupportedDatatype(64))));
    }

    #[test]
    fn payload_size_is_checked() {
        let h = VolumeHeader::new([2, 2, 2], Datatype::U8);
        let mut bytes = encode_nifti(&h, &RawVoxels::U8(vec![1; 8])).unwrap();
        bytes.pop();
        assert!(matches!(
            Volume::from_nifti_bytes(&bytes, "s", "Alveolina"),
            Err(VolumeError::SizeMismatch { expected: 8, got: 7 })
        ));
    }

    #[test]
    fn u8_range_normalises_to_unit_interval() {
        let h = VolumeHeader::new([16, 16, 1], Datatype::U8);
        let raw = RawVoxels::U8((0..=255).collect());
        let v = Volume::from_raw(h, &raw, "a", "Alveolina").unwrap();
        assert_eq!(v.voxels()[0], 0.0);
        assert_eq!(v.voxels()[255], 1.0);
        assert!(!v.degenerate);
    }

    #[test]
    fn constant_volume_is_degenerate() {
        let h = VolumeHeader::new([2, 2, 2], Datatype::U8);
        let v = Volume::from_raw(h, &RawVoxels::U8(vec![7; 8]), "a", "Alveolina").unwrap();
        assert!(v.degenerate);
        assert!(v.voxels().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn slope_and_intercept_apply_before_normalisation() {
        let mut h = VolumeHeader::new([2, 2, 2], Datatype::F32);
        h.scale_slope = 2.0;
        h.scale_inter = 1.0;
        let raw = [0.0f32, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let v = Volume::from_raw(h, &RawVoxels::F32(raw.to_vec()), "a", "Alveolina").unwrap();
        // Oracle: 2v + 1 spans [1, 15].
        assert_eq!(v.intensity_range, (1.0, 15.0));
        for (i, &r) in raw.iter().enumerate() {
            let expected = ((2.0 * r as f64 + 1.0) - 1.0) / 14.0;
            assert!((v.voxels()[i] as f64 - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn slice_orientation_and_bounds() {
        let h = VolumeHeader::new([4, 4, 4], Datatype::U8);
        let raw: Vec<u8> = (0..64).map(|i| (i % 4) as u8).collect(); // v = x
        let v = Volume::from_raw(h, &RawVoxels::U8(raw), "ramp", "Alveolina").unwrap();
        let z0 = extract_slice(&v, Axis::Z, 0).unwrap();
        assert_eq!((z0.width(), z0.height()), (4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(z0.get(x, y), v.voxel(x, y, 0));
            }
        }
        let x3 = extract_slice(&v, Axis::X, 3).unwrap();
        assert!(x3.pixels().iter().all(|&p| p == 1.0));
        assert_eq!(x3.provenance().unwrap().index, 3);
        assert!(matches!(
            extract_slice(&v, Axis::Z, 9),
            Err(VolumeError::IndexOutOfRange { index: 9, dim: 4, .. })
        ));
    }

    #[test]
    fn manifest_parsing() {
        let text = "# comment\na.nii\tS1\tAlveolina\n\nb.nii\tS2\tOrbitoides\n";
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/data/b.nii"));
        assert!(Manifest::parse("a.nii\tS1\tNotAForam\n", ".").is_err());
        assert!(Manifest::parse("a.nii\tS1\tAlveolina\nb.nii\tS1\tAlveolina\n", ".").is_err());
        assert!(Manifest::parse("a.nii S1 Alveolina\n", ".").is_err());
        let custom = Manifest::parse("#species: a,b\nx.nii\tS\tb\n", ".").unwrap();
        assert_eq!(custom.species_set.len(), 2);
        assert_eq!(Manifest::parse(&custom.to_tsv(), ".").unwrap().entries, custom.entries);
    }
}
