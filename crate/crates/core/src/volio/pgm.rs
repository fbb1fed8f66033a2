//! Binary PGM (`P5`) images as 2D uint8 grids with unit spacing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Datatype, Volume};
use crate::error::{Error, Result};
use crate::grid::{Shape, Spacing};

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::CorruptHeader("PGM header ends early".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::CorruptHeader(format!("PGM magic {magic:?}, expected \"P5\"")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = next_token(bytes, &mut pos)?;
        t.parse().map_err(|_| Error::CorruptHeader(format!("PGM {what} {t:?} is not a number")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::CorruptHeader(format!("PGM size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedDatatype(format!("PGM maxval {maxval}; only 8-bit images are supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::CorruptHeader("PGM header is not terminated".into()));
    }
    Ok((Header { width, height, maxval }, pos + 1))
}

pub(super) fn read(path: &Path) -> Result<Volume> {
    let mut file = BufReader::new(File::open(path)?);
    // Headers are short; read a bounded prefix, then exactly the raster.
    let mut head = Vec::new();
    (&mut file).take(4096).read_to_end(&mut head)?;
    let (h, offset) = parse_header(&head)?;
    let expected = h
        .width
        .checked_mul(h.height)
        .filter(|&n| n as u64 <= super::MAX_PAYLOAD_BYTES)
        .ok_or_else(|| Error::CorruptHeader("PGM raster exceeds the size limit".into()))?;
    let mut raster = head.split_off(offset.min(head.len()));
    raster.truncate(expected);
    let rest = (expected - raster.len()) as u64;
    file.take(rest).read_to_end(&mut raster)?;
    if raster.len() != expected {
        return Err(Error::CorruptHeader(format!("PGM raster is {} bytes, header declares {expected}", raster.len())));
    }
    if let Some(&v) = raster.iter().find(|&&v| usize::from(v) > h.maxval) {
        return Err(Error::CorruptHeader(format!("PGM value {v} exceeds maxval {}", h.maxval)));
    }
    Ok(Volume {
        shape: Shape::new_2d(h.height, h.width),
        spacing: Spacing::UNIT,
        channels: 1,
        datatype: Datatype::U8,
        data: raster.into_iter().map(f64::from).collect(),
        spacing_repaired: false,
    })
}

pub(super) fn write(vol: &Volume, path: &Path) -> Result<()> {
    if vol.shape.rank() != 2 || vol.channels != 1 {
        return Err(Error::DimensionalityMismatch("PGM holds a single-channel 2D image".into()));
    }
    if vol.datatype != Datatype::U8 {
        return Err(Error::UnsupportedDatatype(format!("PGM stores uint8, got {:?}", vol.datatype)));
    }
    let mut raster = Vec::with_capacity(vol.data.len());
    for &v in &vol.data {
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::UnsupportedDatatype(format!("{v} does not fit uint8")));
        }
        raster.push(v as u8);
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", vol.shape.x(), vol.shape.y())?;
    out.write_all(&raster)?;
    out.flush()?;
    Ok(())
}
