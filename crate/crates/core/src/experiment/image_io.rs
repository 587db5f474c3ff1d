//! Flat little-endian f64 images with an 8-value header
//! `[magic, version, height, width, channels, 0, 0, 0]`.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: f64 = 1_229_801_286.0;
pub const IMAGE_VERSION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

pub fn encode_image(header: ImageHeader, data: &DVector<f64>) -> Result<Vec<u8>> {
    let expected = header.height * header.width * header.channels;
    if data.len() != expected {
        return Err(Error::dims("image payload", expected, data.len()));
    }
    let head = [
        IMAGE_MAGIC,
        IMAGE_VERSION,
        header.height as f64,
        header.width as f64,
        header.channels as f64,
        0.0,
        0.0,
        0.0,
    ];
    let mut out = Vec::with_capacity(8 * (8 + data.len()));
    for v in head.iter().chain(data.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<(ImageHeader, DVector<f64>)> {
    if bytes.len() % 8 != 0 || bytes.len() < 64 {
        return Err(Error::invalid("image file is not a whole number of f64 values"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values[0] != IMAGE_MAGIC {
        return Err(Error::invalid("bad image magic"));
    }
    if values[1] != IMAGE_VERSION {
        return Err(Error::invalid(format!("unsupported image version {}", values[1])));
    }
    let dim = |v: f64| {
        if v >= 0.0 && v.fract() == 0.0 && v < 1e12 {
            Ok(v as usize)
        } else {
            Err(Error::invalid(format!("bad image dimension {v}")))
        }
    };
    let header = ImageHeader {
        height: dim(values[2])?,
        width: dim(values[3])?,
        channels: dim(values[4])?,
    };
    let expected = header.height * header.width * header.channels;
    if values.len() - 8 != expected {
        return Err(Error::dims("image payload", expected, values.len() - 8));
    }
    Ok((header, DVector::from_column_slice(&values[8..])))
}

pub fn write_image(path: &Path, header: ImageHeader, data: &DVector<f64>) -> Result<()> {
    std::fs::write(path, encode_image(header, data)?)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<(ImageHeader, DVector<f64>)> {
    decode_image(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let h = ImageHeader {
            height: 2,
            width: 3,
            channels: 1,
        };
        let data = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let (h2, d2) = decode_image(&encode_image(h, &data).unwrap()).unwrap();
        assert_eq!(h, h2);
        assert_eq!(data, d2);
    }

    #[test]
    fn rejects_truncated_payload() {
        let h = ImageHeader {
            height: 2,
            width: 2,
            channels: 1,
        };
        let bytes = encode_image(h, &DVector::zeros(4)).unwrap();
        assert!(decode_image(&bytes[..bytes.len() - 8]).is_err());
    }
}
