//! NIfTI-1 single-file (`n+1`) and header/image pair (`ni1`) volumes,
//! optionally gzip-compressed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const SINGLE_FILE_OFFSET: usize = 352;
const NIFTI2_HEADER_SIZE: i32 = 540;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const CAL_MAX: usize = 124;
    pub const CAL_MIN: usize = 128;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("sizeof_hdr is {0}, expected 348")]
    HeaderSize(i32),
    #[error("NIfTI-2 files are not supported")]
    Nifti2Unsupported,
    #[error("bad magic \"{}\", expected \"n+1\\0\" or \"ni1\\0\"", .0.escape_ascii())]
    BadMagic([u8; 4]),
    #[error("dim[0] = {0}: only 3D and 4D volumes are supported")]
    DimCount(i16),
    #[error("dim[{index}] = {value} is not a positive extent")]
    DimExtent { index: usize, value: i16 },
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("vox_offset {0} is invalid")]
    VoxOffset(f32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("volume with {voxels} voxels overflows the addressable size")]
    TooLarge { voxels: u128 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            8 => Some(Datatype::I32),
            16 => Some(Datatype::F32),
            64 => Some(Datatype::F64),
            _ => None,
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Datatype::U8 => "uint8",
            Datatype::I16 => "int16",
            Datatype::I32 => "int32",
            Datatype::F32 => "float32",
            Datatype::F64 => "float64",
        }
    }
}

/// Parsed NIfTI-1 header together with its raw bytes, which are reused
/// when writing derived maps so orientation fields survive untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    raw: [u8; HEADER_SIZE],
    pub big_endian: bool,
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub single_file: bool,
}

fn read_i16(b: &[u8], big: bool) -> i16 {
    if big {
        BigEndian::read_i16(b)
    } else {
        LittleEndian::read_i16(b)
    }
}

fn read_i32(b: &[u8], big: bool) -> i32 {
    if big {
        BigEndian::read_i32(b)
    } else {
        LittleEndian::read_i32(b)
    }
}

fn read_f32(b: &[u8], big: bool) -> f32 {
    if big {
        BigEndian::read_f32(b)
    } else {
        LittleEndian::read_f32(b)
    }
}

fn put_i16(b: &mut [u8], v: i16, big: bool) {
    if big {
        BigEndian::write_i16(b, v)
    } else {
        LittleEndian::write_i16(b, v)
    }
}

fn put_i32(b: &mut [u8], v: i32, big: bool) {
    if big {
        BigEndian::write_i32(b, v)
    } else {
        LittleEndian::write_i32(b, v)
    }
}

fn put_f32(b: &mut [u8], v: f32, big: bool) {
    if big {
        BigEndian::write_f32(b, v)
    } else {
        LittleEndian::write_f32(b, v)
    }
}

impl NiftiHeader {
    pub fn parse(raw: &[u8; HEADER_SIZE]) -> std::result::Result<Self, NiftiError> {
        let size_le = LittleEndian::read_i32(&raw[offset::SIZEOF_HDR..]);
        let size_be = BigEndian::read_i32(&raw[offset::SIZEOF_HDR..]);
        if size_le == NIFTI2_HEADER_SIZE || size_be == NIFTI2_HEADER_SIZE || &raw[4..8] == b"n+2\0" {
            return Err(NiftiError::Nifti2Unsupported);
        }

        let mut magic = [0u8; 4];
        magic.copy_from_slice(&raw[offset::MAGIC..offset::MAGIC + 4]);
        let single_file = match &magic {
            m if m == MAGIC_SINGLE => true,
            m if m == MAGIC_PAIR => false,
            _ => return Err(NiftiError::BadMagic(magic)),
        };

        // Byte order follows whichever reading puts dim[0] in 1..=7.
        let dim0_le = LittleEndian::read_i16(&raw[offset::DIM..]);
        let dim0_be = BigEndian::read_i16(&raw[offset::DIM..]);
        let big_endian = if (1..=7).contains(&dim0_le) {
            false
        } else if (1..=7).contains(&dim0_be) {
            true
        } else {
            return Err(NiftiError::DimCount(dim0_le));
        };

        let sizeof_hdr = read_i32(&raw[offset::SIZEOF_HDR..], big_endian);
        if sizeof_hdr != HEADER_SIZE as i32 {
            return Err(NiftiError::HeaderSize(sizeof_hdr));
        }

        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = read_i16(&raw[offset::DIM + 2 * i..], big_endian);
        }
        if !(3..=4).contains(&dim[0]) {
            return Err(NiftiError::DimCount(dim[0]));
        }
        for (index, &value) in dim.iter().enumerate().skip(1).take(dim[0] as usize) {
            if value < 1 {
                return Err(NiftiError::DimExtent { index, value });
            }
        }

        let code = read_i16(&raw[offset::DATATYPE..], big_endian);
        let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;

        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = read_f32(&raw[offset::PIXDIM + 4 * i..], big_endian);
        }
        let vox_offset = read_f32(&raw[offset::VOX_OFFSET..], big_endian);
        let min_offset = if single_file { SINGLE_FILE_OFFSET as f32 } else { 0.0 };
        if !vox_offset.is_finite() || vox_offset < min_offset || vox_offset.fract() != 0.0 {
            return Err(NiftiError::VoxOffset(vox_offset));
        }

        Ok(NiftiHeader {
            raw: *raw,
            big_endian,
            dim,
            datatype,
            pixdim,
            vox_offset,
            scl_slope: read_f32(&raw[offset::SCL_SLOPE..], big_endian),
            scl_inter: read_f32(&raw[offset::SCL_INTER..], big_endian),
            single_file,
        })
    }

    pub fn raw(&self) -> &[u8; HEADER_SIZE] {
        &self.raw
    }

    /// Spatial and temporal extents; 3D volumes report one scan.
    pub fn extents(&self) -> [usize; 4] {
        let ndim = self.dim[0] as usize;
        let mut out = [1usize; 4];
        for (i, o) in out.iter_mut().enumerate().take(ndim) {
            *o = self.dim[i + 1] as usize;
        }
        out
    }

    pub fn ndim(&self) -> usize {
        self.dim[0] as usize
    }

    pub fn voxel_sizes(&self) -> [f64; 3] {
        [self.pixdim[1] as f64, self.pixdim[2] as f64, self.pixdim[3] as f64]
    }

    pub fn payload_len(&self) -> std::result::Result<usize, NiftiError> {
        let voxels: u128 = self.extents().iter().map(|d| *d as u128).product();
        let bytes = voxels * self.datatype.size() as u128;
        usize::try_from(bytes).map_err(|_| NiftiError::TooLarge { voxels })
    }

    fn scaling(&self) -> Option<(f64, f64)> {
        let (slope, inter) = (self.scl_slope as f64, self.scl_inter as f64);
        if slope == 0.0 || !slope.is_finite() || !inter.is_finite() || (slope == 1.0 && inter == 0.0) {
            None
        } else {
            Some((slope, inter))
        }
    }

    /// Decodes one stored value at the start of `b`, scaling applied.
    #[inline]
    pub fn decode(&self, b: &[u8]) -> f64 {
        let big = self.big_endian;
        let raw = match self.datatype {
            Datatype::U8 => b[0] as f64,
            Datatype::I16 => read_i16(b, big) as f64,
            Datatype::I32 => read_i32(b, big) as f64,
            Datatype::F32 => read_f32(b, big) as f64,
            Datatype::F64 => {
                if big {
                    BigEndian::read_f64(b)
                } else {
                    LittleEndian::read_f64(b)
                }
            }
        };
        match self.scaling() {
            Some((slope, inter)) => raw * slope + inter,
            None => raw,
        }
    }

    pub fn decode_all(&self, payload: &[u8]) -> Vec<f64> {
        payload.chunks_exact(self.datatype.size()).map(|c| self.decode(c)).collect()
    }
}

/// Grid extents, spacing and provenance of an in-memory volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    pub voxel_sizes: [f64; 3],
    /// On-disk type of the source file.
    pub datatype: Datatype,
    /// Source header, reused as the template for derived outputs.
    pub header: Option<NiftiHeader>,
}

impl Default for VolumeMeta {
    fn default() -> Self {
        VolumeMeta {
            voxel_sizes: [1.0; 3],
            datatype: Datatype::F32,
            header: None,
        }
    }
}

/// fMRI scan: `d1×d2×d3×T` values, `i` fastest then `j`, `k`, `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
    pub meta: VolumeMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    pub meta: VolumeMeta,
}

impl Volume4D {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_shape(&dims, data.len())?;
        Ok(Volume4D {
            dims,
            data,
            meta: VolumeMeta::default(),
        })
    }

    pub fn voxels(&self) -> usize {
        self.dims[..3].iter().product()
    }

    pub fn scans(&self) -> usize {
        self.dims[3]
    }

    pub fn get(&self, voxel: usize, t: usize) -> f64 {
        self.data[voxel + t * self.voxels()]
    }

    /// Spatial volume sharing this scan's geometry.
    pub fn map_like(&self, data: Vec<f64>) -> Result<Volume3D> {
        let dims = [self.dims[0], self.dims[1], self.dims[2]];
        check_shape(&dims, data.len())?;
        Ok(Volume3D {
            dims,
            data,
            meta: self.meta.clone(),
        })
    }
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_shape(&dims, data.len())?;
        Ok(Volume3D {
            dims,
            data,
            meta: VolumeMeta::default(),
        })
    }
}

fn check_shape(dims: &[usize], len: usize) -> Result<()> {
    if dims.iter().any(|d| *d == 0 || *d > i16::MAX as usize) {
        return Err(Error::Config(format!("invalid volume extents {dims:?}")));
    }
    let n: usize = dims.iter().product();
    if n != len {
        return Err(Error::Config(format!("extents {dims:?} need {n} values, got {len}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum NiftiVolume {
    Three(Volume3D),
    Four(Volume4D),
}

impl NiftiVolume {
    pub fn meta(&self) -> &VolumeMeta {
        match self {
            NiftiVolume::Three(v) => &v.meta,
            NiftiVolume::Four(v) => &v.meta,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            NiftiVolume::Three(v) => v.dims.to_vec(),
            NiftiVolume::Four(v) => v.dims.to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            NiftiVolume::Three(v) => &v.data,
            NiftiVolume::Four(v) => &v.data,
        }
    }

    pub fn into_4d(self) -> Result<Volume4D> {
        match self {
            NiftiVolume::Four(v) => Ok(v),
            NiftiVolume::Three(v) => Err(Error::Config(format!("expected a 4D volume, got 3D {:?}", v.dims))),
        }
    }

    /// A 4D volume with a single scan also counts as 3D.
    pub fn into_3d(self) -> Result<Volume3D> {
        match self {
            NiftiVolume::Three(v) => Ok(v),
            NiftiVolume::Four(v) if v.dims[3] == 1 => Ok(Volume3D {
                dims: [v.dims[0], v.dims[1], v.dims[2]],
                data: v.data,
                meta: v.meta,
            }),
            NiftiVolume::Four(v) => Err(Error::Config(format!("expected a 3D volume, got 4D {:?}", v.dims))),
        }
    }
}

/// Anything with a shape, values and geometry that can be written out.
pub trait NiftiData {
    fn shape(&self) -> Vec<usize>;
    fn values(&self) -> &[f64];
    fn meta(&self) -> &VolumeMeta;
}

impl NiftiData for Volume3D {
    fn shape(&self) -> Vec<usize> {
        self.dims.to_vec()
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }
}

impl NiftiData for Volume4D {
    fn shape(&self) -> Vec<usize> {
        self.dims.to_vec()
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }
}

impl NiftiData for NiftiVolume {
    fn shape(&self) -> Vec<usize> {
        NiftiVolume::shape(self)
    }
    fn values(&self) -> &[f64] {
        NiftiVolume::values(self)
    }
    fn meta(&self) -> &VolumeMeta {
        NiftiVolume::meta(self)
    }
}

pub(crate) fn is_gzip(prefix: &[u8]) -> bool {
    prefix.len() >= 2 && prefix[0] == 0x1F && prefix[1] == 0x8B
}

/// Opens `path` for reading, transparently inflating gzip content.
pub(crate) fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prefix = [0u8; 2];
    let n = read_up_to(&mut file, &mut prefix).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if is_gzip(&prefix[..n]) {
        Ok(Box::new(GzDecoder::new(BufReader::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_up_to<R: Read + ?Sized>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub(crate) fn read_header_from<R: Read + ?Sized>(r: &mut R, path: &Path) -> Result<NiftiHeader> {
    let mut raw = [0u8; HEADER_SIZE];
    let n = read_up_to(r, &mut raw).map_err(|e| Error::io(path, e))?;
    if n < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            expected: HEADER_SIZE,
            found: n,
        }
        .into());
    }
    Ok(NiftiHeader::parse(&raw)?)
}

/// Image file that holds the voxel data of a header/image pair.
pub(crate) fn pair_image_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let image = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        format!("{name}.img")
    };
    path.with_file_name(image)
}

fn read_payload<R: Read + ?Sized>(r: &mut R, len: usize, path: &Path) -> Result<Vec<u8>> {
    let mut payload = vec![0u8; len];
    let n = read_up_to(r, &mut payload).map_err(|e| Error::io(path, e))?;
    if n < len {
        return Err(NiftiError::Truncated { expected: len, found: n }.into());
    }
    Ok(payload)
}

fn skip<R: Read + ?Sized>(r: &mut R, bytes: u64, path: &Path) -> Result<()> {
    let skipped = io::copy(&mut r.take(bytes), &mut io::sink()).map_err(|e| Error::io(path, e))?;
    if skipped < bytes {
        return Err(NiftiError::Truncated {
            expected: bytes as usize,
            found: skipped as usize,
        }
        .into());
    }
    Ok(())
}

pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    let path = path.as_ref();
    let mut reader = open_maybe_gz(path)?;
    read_header_from(&mut reader, path)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let mut reader = open_maybe_gz(path)?;
    let header = read_header_from(&mut reader, path)?;
    let len = header.payload_len()?;
    let payload = if header.single_file {
        skip(&mut reader, header.vox_offset as u64 - HEADER_SIZE as u64, path)?;
        read_payload(&mut reader, len, path)?
    } else {
        let image = pair_image_path(path);
        let mut reader = open_maybe_gz(&image)?;
        skip(&mut reader, header.vox_offset as u64, &image)?;
        read_payload(&mut reader, len, &image)?
    };
    let data = header.decode_all(&payload);
    let meta = VolumeMeta {
        voxel_sizes: header.voxel_sizes(),
        datatype: header.datatype,
        header: Some(header.clone()),
    };
    let [d1, d2, d3, d4] = header.extents();
    Ok(if header.ndim() == 3 {
        NiftiVolume::Three(Volume3D {
            dims: [d1, d2, d3],
            data,
            meta,
        })
    } else {
        NiftiVolume::Four(Volume4D {
            dims: [d1, d2, d3, d4],
            data,
            meta,
        })
    })
}

/// On-disk precision of written volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputPrecision {
    #[default]
    Float32,
    Float64,
}

/// Serialises `volume` as a single-file NIfTI-1 image.
///
/// When the volume came from a file, its header bytes are the template:
/// only the size, extent, type, offset, scaling, display-range and magic
/// fields are rewritten, in the template's byte order.
pub fn encode_nifti<V: NiftiData + ?Sized>(volume: &V, precision: OutputPrecision) -> Result<Vec<u8>> {
    let shape = volume.shape();
    if !(3..=4).contains(&shape.len()) {
        return Err(Error::Config(format!("cannot write a {}-dimensional volume", shape.len())));
    }
    check_shape(&shape, volume.values().len())?;
    let meta = volume.meta();
    let template = meta.header.as_ref();
    let big = template.map(|h| h.big_endian).unwrap_or(false);
    let mut raw = match template {
        Some(h) => *h.raw(),
        None => {
            let mut raw = [0u8; HEADER_SIZE];
            put_f32(&mut raw[offset::PIXDIM..], 1.0, big);
            // Millimetres and seconds.
            raw[offset::XYZT_UNITS] = 2 | 8;
            raw
        }
    };

    let datatype = match precision {
        OutputPrecision::Float32 => Datatype::F32,
        OutputPrecision::Float64 => Datatype::F64,
    };
    put_i32(&mut raw[offset::SIZEOF_HDR..], HEADER_SIZE as i32, big);
    let mut dim = [1i16; 8];
    dim[0] = shape.len() as i16;
    for (i, d) in shape.iter().enumerate() {
        dim[i + 1] = *d as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut raw[offset::DIM + 2 * i..], *d, big);
    }
    put_i16(&mut raw[offset::DATATYPE..], datatype.code(), big);
    put_i16(&mut raw[offset::BITPIX..], (datatype.size() * 8) as i16, big);
    for (i, size) in meta.voxel_sizes.iter().enumerate() {
        put_f32(&mut raw[offset::PIXDIM + 4 * (i + 1)..], *size as f32, big);
    }
    put_f32(&mut raw[offset::VOX_OFFSET..], SINGLE_FILE_OFFSET as f32, big);
    put_f32(&mut raw[offset::SCL_SLOPE..], 1.0, big);
    put_f32(&mut raw[offset::SCL_INTER..], 0.0, big);
    put_f32(&mut raw[offset::CAL_MAX..], 0.0, big);
    put_f32(&mut raw[offset::CAL_MIN..], 0.0, big);
    raw[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(MAGIC_SINGLE);

    let values = volume.values();
    let mut out = Vec::with_capacity(SINGLE_FILE_OFFSET + values.len() * datatype.size());
    out.extend_from_slice(&raw);
    out.extend_from_slice(&[0u8; 4]);
    let mut buf = [0u8; 8];
    for v in values {
        match datatype {
            Datatype::F32 => {
                put_f32(&mut buf, *v as f32, big);
                out.extend_from_slice(&buf[..4]);
            }
            _ => {
                if big {
                    BigEndian::write_f64(&mut buf, *v)
                } else {
                    LittleEndian::write_f64(&mut buf, *v)
                }
                out.extend_from_slice(&buf);
            }
        }
    }
    Ok(out)
}

/// Writes a float32 NIfTI-1 file, gzip-compressed when `compress` is set.
pub fn write_nifti<V: NiftiData + ?Sized>(volume: &V, path: impl AsRef<Path>, compress: bool) -> Result<()> {
    write_nifti_with(volume, path, compress, OutputPrecision::Float32)
}

pub fn write_nifti_with<V: NiftiData + ?Sized>(
    volume: &V,
    path: impl AsRef<Path>,
    compress: bool,
    precision: OutputPrecision,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(volume, precision)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let result = if compress {
        // No timestamp or name in the gzip header keeps output byte-stable.
        let mut gz = GzEncoder::new(writer, Compression::default());
        gz.write_all(&bytes).and_then(|_| gz.finish()).and_then(|mut w| w.flush())
    } else {
        writer.write_all(&bytes).and_then(|_| writer.flush())
    };
    result.map_err(|e| Error::io(path, e))
}
