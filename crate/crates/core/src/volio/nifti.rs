//! NIfTI-1 single-file (`n+1`) reader and writer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{ReadOptions, Volume, MAX_PAYLOAD_BYTES};
use crate::error::{Error, Result};
use crate::grid::{Shape, Spacing};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            other => Err(Error::UnsupportedDatatype(format!("NIfTI datatype code {other}"))),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }
}

/// The header fields this crate reads or writes.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    /// `dim[0..8]`.
    pub dims: [i16; 8],
    pub datatype: Datatype,
    pub pixdim: [f32; 8],
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub vox_offset: f32,
    pub big_endian: bool,
}

struct Cursor<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Cursor<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.buf[at], self.buf[at + 1]];
        if self.big {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b = [self.buf[at], self.buf[at + 1], self.buf[at + 2], self.buf[at + 3]];
        if self.big {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_bits(self.i32(at) as u32)
    }
}

impl NiftiHeader {
    fn parse(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_SIZE {
            return Err(Error::CorruptHeader(format!("header is {} bytes, expected {HEADER_SIZE}", buf.len())));
        }
        let big = match (
            i32::from_le_bytes(buf[0..4].try_into().unwrap()),
            i32::from_be_bytes(buf[0..4].try_into().unwrap()),
        ) {
            (348, _) => false,
            (_, 348) => true,
            _ => return Err(Error::CorruptHeader("sizeof_hdr is not 348".into())),
        };
        if &buf[344..347] != b"n+1" {
            return Err(Error::CorruptHeader("magic is not \"n+1\"".into()));
        }
        let c = Cursor { buf, big };
        let mut dims = [0i16; 8];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = c.i16(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = c.f32(76 + 4 * i);
        }
        let datatype = Datatype::from_code(c.i16(70))?;
        Ok(NiftiHeader {
            dims,
            datatype,
            pixdim,
            scl_slope: c.f32(112),
            scl_inter: c.f32(116),
            vox_offset: c.f32(108),
            big_endian: big,
        })
    }

    fn encode(&self) -> Vec<u8> {
        let mut h = vec![0u8; VOX_OFFSET];
        h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
        h[38] = b'r';
        for (i, d) in self.dims.iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&self.datatype.code().to_le_bytes());
        h[72..74].copy_from_slice(&((self.datatype.bytes() * 8) as i16).to_le_bytes());
        for (i, p) in self.pixdim.iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&self.vox_offset.to_le_bytes());
        h[112..116].copy_from_slice(&self.scl_slope.to_le_bytes());
        h[116..120].copy_from_slice(&self.scl_inter.to_le_bytes());
        // Spatial units: millimetres.
        h[123] = 2;
        let descrip = b"tubetopo";
        h[148..148 + descrip.len()].copy_from_slice(descrip);
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let head = std::io::Cursor::new(magic[..n].to_vec());
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(MultiGzDecoder::new(chained)))
    } else {
        Ok(Box::new(chained))
    }
}

pub(super) fn read(path: &Path, opts: ReadOptions) -> Result<Volume> {
    let mut reader = open(path)?;
    let mut head = Vec::with_capacity(HEADER_SIZE);
    (&mut reader).take(HEADER_SIZE as u64).read_to_end(&mut head)?;
    let header = NiftiHeader::parse(&head)?;

    let rank = header.dims[0];
    if !(2..=4).contains(&rank) {
        return Err(Error::DimensionalityMismatch(format!("dim[0] = {rank}; only 2D, 3D and 4D are supported")));
    }
    let d = |i: usize| -> Result<usize> {
        let v = if i as i16 <= rank { header.dims[i] } else { 1 };
        if v < 1 {
            return Err(Error::CorruptHeader(format!("dim[{i}] = {v}")));
        }
        Ok(v as usize)
    };
    let (nx, ny, nz, nc) = (d(1)?, d(2)?, d(3)?, d(4)?);
    if rank == 4 && !opts.channels_last {
        return Err(Error::DimensionalityMismatch("4D volume; enable channel reading to load it as scores".into()));
    }
    let shape = if rank == 2 { Shape::new_2d(ny, nx) } else { Shape::new_3d(nz, ny, nx) };

    let mut repaired = false;
    let mut sp = |i: usize| -> f64 {
        let v = f64::from(header.pixdim[i]).abs();
        if i as i16 > rank.min(3) {
            return 1.0;
        }
        if v.is_finite() && v > 0.0 {
            v
        } else {
            repaired = true;
            1.0
        }
    };
    let spacing = Spacing([sp(3), sp(2), sp(1)]);

    let offset = header.vox_offset as usize;
    if header.vox_offset < HEADER_SIZE as f32 || header.vox_offset.fract() != 0.0 {
        return Err(Error::CorruptHeader(format!("vox_offset = {}", header.vox_offset)));
    }
    let skip = (offset - HEADER_SIZE) as u64;
    let skipped = std::io::copy(&mut (&mut reader).take(skip), &mut std::io::sink())?;
    if skipped != skip {
        return Err(Error::CorruptHeader("file ends before vox_offset".into()));
    }

    let count = (shape.len() as u64).checked_mul(nc as u64);
    let expected = count.and_then(|c| c.checked_mul(header.datatype.bytes() as u64));
    let expected = match expected {
        Some(e) if e <= MAX_PAYLOAD_BYTES => e,
        _ => return Err(Error::CorruptHeader("declared payload exceeds the size limit".into())),
    };
    let mut payload = Vec::new();
    reader.take(expected).read_to_end(&mut payload)?;
    if payload.len() as u64 != expected {
        return Err(Error::CorruptHeader(format!("payload is {} bytes, header declares {expected}", payload.len())));
    }

    let slope =
        if header.scl_slope == 0.0 || !header.scl_slope.is_finite() { 1.0 } else { f64::from(header.scl_slope) };
    let inter = if header.scl_inter.is_finite() { f64::from(header.scl_inter) } else { 0.0 };
    let big = header.big_endian;
    let raw: Vec<f64> = match header.datatype {
        Datatype::U8 => payload.iter().map(|&b| f64::from(b)).collect(),
        Datatype::I16 => payload
            .chunks_exact(2)
            .map(|c| f64::from(if big { i16::from_be_bytes([c[0], c[1]]) } else { i16::from_le_bytes([c[0], c[1]]) }))
            .collect(),
        Datatype::F32 => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                f64::from(if big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) })
            })
            .collect(),
    };
    let data = if slope == 1.0 && inter == 0.0 { raw } else { raw.into_iter().map(|v| v * slope + inter).collect() };

    Ok(Volume { shape, spacing, channels: nc, datatype: header.datatype, data, spacing_repaired: repaired })
}

fn encode_payload(vol: &Volume) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(vol.data.len() * vol.datatype.bytes());
    for &v in &vol.data {
        match vol.datatype {
            Datatype::U8 => {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::UnsupportedDatatype(format!("{v} does not fit uint8")));
                }
                out.push(v as u8);
            }
            Datatype::I16 => {
                if !(f64::from(i16::MIN)..=f64::from(i16::MAX)).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::UnsupportedDatatype(format!("{v} does not fit int16")));
                }
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
            Datatype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(out)
}

pub(super) fn write(vol: &Volume, path: &Path, gzip: bool) -> Result<()> {
    let [nz, ny, nx] = vol.shape.dims();
    let too_big = |n: usize| n > i16::MAX as usize;
    if too_big(nx) || too_big(ny) || too_big(nz) || too_big(vol.channels) {
        return Err(Error::DimensionalityMismatch(format!("{:?} exceeds NIfTI-1 dimension limits", vol.shape.dims())));
    }
    let mut dims = [1i16; 8];
    let rank: i16 = if vol.channels > 1 {
        4
    } else if vol.shape.rank() == 2 {
        2
    } else {
        3
    };
    dims[0] = rank;
    dims[1] = nx as i16;
    dims[2] = ny as i16;
    dims[3] = nz as i16;
    dims[4] = vol.channels as i16;
    let s = vol.spacing.0;
    let mut pixdim = [0f32; 8];
    pixdim[0] = 1.0;
    pixdim[1] = s[2] as f32;
    pixdim[2] = s[1] as f32;
    pixdim[3] = if rank == 2 { 1.0 } else { s[0] as f32 };
    for p in pixdim.iter_mut().skip(4) {
        *p = 1.0;
    }
    let header = NiftiHeader {
        dims,
        datatype: vol.datatype,
        pixdim,
        scl_slope: 1.0,
        scl_inter: 0.0,
        vox_offset: VOX_OFFSET as f32,
        big_endian: false,
    };
    let payload = encode_payload(vol)?;
    let file = BufWriter::new(File::create(path)?);
    if gzip {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&header.encode())?;
        enc.write_all(&payload)?;
        enc.finish()?.flush()?;
    } else {
        let mut file = file;
        file.write_all(&header.encode())?;
        file.write_all(&payload)?;
        file.flush()?;
    }
    Ok(())
}
