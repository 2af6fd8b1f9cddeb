//! Binary dataset file.
//!
//! ```text
//! "BTDS" | version u8 | num_classes u32 | n_train u32 | n_test u32 | images...
//! image: height u32 | width u32 | channels u32 | cohort f64
//!        | features f64 x (height*width*channels) | labels u32 x (height*width)
//! ```
//!
//! All integers and reals little-endian; train images precede test images.

use std::io::{Read, Write};

use super::{DataError, Dataset, SegImage};

pub const DATASET_MAGIC: &[u8; 4] = b"BTDS";
pub const DATASET_FORMAT_VERSION: u8 = 1;

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<(), DataError> {
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&[DATASET_FORMAT_VERSION])?;
    write_u32(&mut out, ds.num_classes)?;
    write_u32(&mut out, ds.train.len())?;
    write_u32(&mut out, ds.test.len())?;
    for img in ds.train.iter().chain(&ds.test) {
        write_u32(&mut out, img.height)?;
        write_u32(&mut out, img.width)?;
        write_u32(&mut out, img.channels)?;
        out.write_all(&img.cohort.to_le_bytes())?;
        let mut buf = Vec::with_capacity(img.features.len() * 8 + img.labels.len() * 4);
        for f in &img.features {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        for &l in &img.labels {
            buf.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset, DataError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::Format("bad magic bytes".into()));
    }
    let mut version = [0u8; 1];
    input.read_exact(&mut version)?;
    if version[0] != DATASET_FORMAT_VERSION {
        return Err(DataError::Format(format!("unsupported format version {}", version[0])));
    }
    let num_classes = read_u32(&mut input)?;
    let n_train = read_u32(&mut input)?;
    let n_test = read_u32(&mut input)?;
    let mut images = Vec::with_capacity(n_train + n_test);
    for _ in 0..n_train + n_test {
        let height = read_u32(&mut input)?;
        let width = read_u32(&mut input)?;
        let channels = read_u32(&mut input)?;
        let cohort = read_f64(&mut input)?;
        let pixels = height
            .checked_mul(width)
            .filter(|p| p.checked_mul(channels).is_some_and(|n| n <= 1 << 28))
            .ok_or_else(|| DataError::Format("image dimensions too large".into()))?;
        let features = (0..pixels * channels)
            .map(|_| read_f64(&mut input))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = (0..pixels).map(|_| read_u32(&mut input)).collect::<Result<Vec<_>, _>>()?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Format(format!("label {bad} out of range")));
        }
        images.push(SegImage {
            height,
            width,
            channels,
            features,
            labels,
            cohort,
        });
    }
    let test = images.split_off(n_train);
    Ok(Dataset {
        num_classes,
        train: images,
        test,
    })
}

fn write_u32<W: Write>(out: &mut W, value: usize) -> Result<(), DataError> {
    let value = u32::try_from(value).map_err(|_| DataError::Format(format!("{value} does not fit in u32")))?;
    out.write_all(&value.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<usize, DataError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64, DataError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
