//! Binary 8-bit PGM (`P5`) reading and writing.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn malformed(msg: impl Into<String>) -> Error {
    Error::Format { what: "PGM", msg: msg.into() }
}

/// Raw 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        let pixels = values.iter().map(|&v| quantize(v)).collect();
        GrayImage { width, height, pixels }
    }

    /// `1×H×W` tensor with values in `[0,1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("pixel count matches")
    }
}

/// Maps `[0,1]` onto `0..=255` with rounding; out-of-range values saturate.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a binary PGM with maxval 255. Header comments (`#`) are skipped.
pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(malformed(format!("expected magic P5, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| malformed(format!("bad {what} {s:?}")))
    };
    let (width, height, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval != 255 {
        return Err(malformed(format!("maxval {maxval} unsupported, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing raster"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != width * height {
        return Err(malformed(format!("raster has {} bytes, expected {}", raster.len(), width * height)));
    }
    Ok(GrayImage { width, height, pixels: raster.to_vec() })
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { what, msg } => Error::Format { what, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// Loads a PGM as a `1×H×W` tensor and checks its size.
pub fn decode_image(path: impl AsRef<Path>, expect: (usize, usize)) -> Result<Tensor> {
    let img = read_pgm(&path)?;
    if (img.height, img.width) != expect {
        return Err(Error::shape(
            "decode_image",
            format!(
                "{} is {}×{}, expected {}×{}",
                path.as_ref().display(),
                img.height,
                img.width,
                expect.0,
                expect.1
            ),
        ));
    }
    Ok(img.to_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_and_full_scale() {
        let mut img = GrayImage { width: 2, height: 2, pixels: vec![0; 4] };
        let t = decode(&encode(&img)).unwrap().to_tensor();
        assert!(t.data().iter().all(|&v| v == 0.0));
        img.pixels[3] = 255;
        let t = decode(&encode(&img)).unwrap().to_tensor();
        assert_eq!(t.data()[3], 1.0);
        assert_eq!(t.shape(), &[1, 2, 2]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x01\x02";
        let img = decode(bytes).unwrap();
        assert_eq!(img.pixels, vec![1, 2]);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode(b"P2\n1 1\n255\n\x00").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode(b"P5\n2").is_err());
    }
}
