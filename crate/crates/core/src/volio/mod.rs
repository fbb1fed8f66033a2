//! File I/O: NIfTI-1 volumes, binary PGM images and JSON documents.
//!
//! NIfTI orientation (qform/sform) is ignored; only `pixdim` spacing is read
//! and written.

mod json;
mod nifti;
mod pgm;

pub use json::{
    channelmap_to_value, parse_channelmap, read_channelmap, read_json, read_report, read_sidecar, to_json_string,
    write_channelmap, write_json, write_report, write_sidecar, Report, SCHEMA_VERSION,
};
pub use nifti::{Datatype, NiftiHeader};

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, LabelVolume, ProbVolume, Shape, Spacing, ValueKind, VoxelGrid};

/// Upper bound on the payload a reader accepts, in bytes.
pub const MAX_PAYLOAD_BYTES: u64 = 1 << 34;

/// Decoded volume. Multi-channel data is channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub shape: Shape,
    pub spacing: Spacing,
    pub channels: usize,
    pub datatype: Datatype,
    pub data: Vec<f64>,
    /// Set when a zero or invalid spacing in the file was replaced by 1.
    pub spacing_repaired: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Accept 4D NIfTI files and read the fourth axis as channels.
    pub channels_last: bool,
}

/// A prediction as stored on disk: integer labels or float scores.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictionData {
    Labels(LabelVolume),
    Scores(ProbVolume),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Nifti { gzip: bool },
    Pgm,
}

fn format_of(path: &Path) -> Result<Format> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_ascii_lowercase();
    if name.ends_with(".nii.gz") {
        Ok(Format::Nifti { gzip: true })
    } else if name.ends_with(".nii") {
        Ok(Format::Nifti { gzip: false })
    } else if name.ends_with(".pgm") {
        Ok(Format::Pgm)
    } else {
        Err(Error::UnsupportedExtension(path.to_path_buf()))
    }
}

/// Reads a `.nii`, `.nii.gz` or `.pgm` file.
pub fn read_volume(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Volume> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Nifti { .. } => nifti::read(path, opts),
        Format::Pgm => pgm::read(path),
    }
}

/// Writes a volume; the format follows the extension.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Nifti { gzip } => nifti::write(vol, path, gzip),
        Format::Pgm => pgm::write(vol, path),
    }
}

impl Volume {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Volume {
            shape: mask.shape(),
            spacing: mask.spacing(),
            channels: 1,
            datatype: Datatype::U8,
            data: mask.data().iter().map(|&v| f64::from(v)).collect(),
            spacing_repaired: false,
        }
    }

    pub fn from_labels(labels: &LabelVolume) -> Result<Self> {
        let max = labels.max_label();
        let datatype = if max <= u8::MAX as u32 {
            Datatype::U8
        } else if max <= i16::MAX as u32 {
            Datatype::I16
        } else {
            return Err(Error::UnsupportedDatatype(format!("label {max} does not fit a supported integer type")));
        };
        Ok(Volume {
            shape: labels.shape(),
            spacing: labels.spacing(),
            channels: 1,
            datatype,
            data: labels.data().iter().map(|&v| f64::from(v)).collect(),
            spacing_repaired: false,
        })
    }

    /// Stored as float32; values are rounded to single precision.
    pub fn from_prob(p: &ProbVolume) -> Self {
        Volume {
            shape: p.shape(),
            spacing: p.spacing(),
            channels: p.channels(),
            datatype: Datatype::F32,
            data: p.data().iter().map(|&v| f64::from(v as f32)).collect(),
            spacing_repaired: false,
        }
    }

    pub fn from_grid(grid: &VoxelGrid<f64>, datatype: Datatype) -> Self {
        Volume {
            shape: grid.shape(),
            spacing: grid.spacing(),
            channels: 1,
            datatype,
            data: grid.data().to_vec(),
            spacing_repaired: false,
        }
    }

    fn single_channel(&self) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::DimensionalityMismatch(format!("expected one channel, found {}", self.channels)));
        }
        Ok(())
    }

    /// Nonzero voxels are foreground.
    pub fn to_mask(&self) -> Result<BinaryMask> {
        self.single_channel()?;
        BinaryMask::new(self.shape, self.spacing, self.data.iter().map(|&v| u8::from(v != 0.0)).collect())
    }

    pub fn to_labels(&self) -> Result<LabelVolume> {
        self.single_channel()?;
        let mut out = Vec::with_capacity(self.data.len());
        for &v in &self.data {
            if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::InvalidGrid(format!("value {v} is not a label")));
            }
            out.push(v as u32);
        }
        LabelVolume::new(self.shape, self.spacing, out)
    }

    /// Multi-channel data as scores. A single channel is read as the
    /// foreground probability `p` and expanded to `(1 - p, p)`, or as a
    /// foreground logit `l` and expanded to `(0, l)`.
    pub fn to_prob(&self, kind: ValueKind) -> Result<ProbVolume> {
        if self.channels == 1 && kind == ValueKind::Logits {
            let mut data = vec![0.0; self.data.len()];
            data.extend_from_slice(&self.data);
            return ProbVolume::new(self.shape, self.spacing, 2, ValueKind::Logits, data);
        }
        if self.channels == 1 {
            if let Some(bad) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidGrid(format!("single-channel probability {bad} outside [0, 1]")));
            }
            let mut data: Vec<f64> = self.data.iter().map(|p| 1.0 - p).collect();
            data.extend_from_slice(&self.data);
            return ProbVolume::new(self.shape, self.spacing, 2, ValueKind::Probabilities, data);
        }
        ProbVolume::new(self.shape, self.spacing, self.channels, kind, self.data.clone())
    }

    /// Float data becomes scores of the given kind, integer data labels.
    pub fn to_prediction(&self, kind: ValueKind) -> Result<PredictionData> {
        match self.datatype {
            Datatype::F32 => self.to_prob(kind).map(PredictionData::Scores),
            Datatype::U8 | Datatype::I16 => self.to_labels().map(PredictionData::Labels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extension_dispatch() {
        assert_eq!(format_of(Path::new("a/b.NII.GZ")).unwrap(), Format::Nifti { gzip: true });
        assert_eq!(format_of(Path::new("b.nii")).unwrap(), Format::Nifti { gzip: false });
        assert_eq!(format_of(Path::new("b.pgm")).unwrap(), Format::Pgm);
        assert!(matches!(format_of(Path::new("b.mha")), Err(Error::UnsupportedExtension(_))));
    }

    #[test]
    fn conversions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = Shape::new_3d(3, 4, 5);
        let labels = LabelVolume::new(shape, Spacing::UNIT, (0..60).map(|_| rng.gen_range(0..3)).collect()).unwrap();
        let v = Volume::from_labels(&labels).unwrap();
        assert_eq!(v.to_labels().unwrap(), labels);
        assert_eq!(v.to_mask().unwrap(), labels.foreground());

        let probs: Vec<f64> = (0..60).map(|i| i as f64 / 64.0).collect();
        let single = Volume { data: probs.clone(), datatype: Datatype::F32, ..v.clone() };
        let p = single.to_prob(ValueKind::Probabilities).unwrap();
        assert_eq!(p.channel(1), probs.as_slice());
        assert!(Volume { data: vec![-1.0; 60], ..v }.to_labels().is_err());
    }
}
