//! Binary PGM (`P5`) reading and writing.
//!
//! Source images are 16-bit (maxval 65535, big-endian samples); previews
//! and compressed images are written with maxval 255.

use std::path::Path;

use crate::error::{Error, PgmError, Result};

/// Grayscale raster with row-major samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray<T> {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<T>,
}

pub type Gray16 = Gray<u16>;
pub type Gray8 = Gray<u8>;

impl<T: Copy + Default> Gray<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Gray {
            width,
            height,
            pixels: vec![T::default(); width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.pixels[y * self.width + x] = v;
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PgmError::Malformed("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::Malformed(format!("field {} is not a number", i + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| PgmError::Malformed(format!("field {} out of range: {text}", i + 1)))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PgmError::Malformed("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PgmError::Malformed(format!("empty raster {width}x{height}")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos,
    })
}

fn samples<'a>(bytes: &'a [u8], h: &Header, bytes_per_sample: usize) -> std::result::Result<&'a [u8], PgmError> {
    let expected = h.width * h.height * bytes_per_sample;
    let data = &bytes[h.data_start..];
    if data.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: data.len(),
        });
    }
    Ok(&data[..expected])
}

/// Decodes a 16-bit PGM; any maxval other than 65535 is rejected.
pub fn decode_pgm16(bytes: &[u8]) -> std::result::Result<Gray16, PgmError> {
    let h = parse_header(bytes)?;
    if h.maxval != 65535 {
        return Err(PgmError::UnsupportedDepth(h.maxval));
    }
    let data = samples(bytes, &h, 2)?;
    Ok(Gray {
        width: h.width,
        height: h.height,
        pixels: data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect(),
    })
}

/// Decodes an 8-bit PGM (maxval 255).
pub fn decode_pgm8(bytes: &[u8]) -> std::result::Result<Gray8, PgmError> {
    let h = parse_header(bytes)?;
    if h.maxval != 255 {
        return Err(PgmError::UnsupportedDepth(h.maxval));
    }
    let data = samples(bytes, &h, 1)?;
    Ok(Gray {
        width: h.width,
        height: h.height,
        pixels: data.to_vec(),
    })
}

pub fn encode_pgm16(img: &Gray16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() * 2);
    for v in &img.pixels {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn encode_pgm8(img: &Gray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn pgm_err(path: &Path) -> impl Fn(PgmError) -> Error + '_ {
    move |source| Error::Pgm {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_pgm16(path: impl AsRef<Path>) -> Result<Gray16> {
    let path = path.as_ref();
    decode_pgm16(&read(path)?).map_err(pgm_err(path))
}

pub fn read_pgm8(path: impl AsRef<Path>) -> Result<Gray8> {
    let path = path.as_ref();
    decode_pgm8(&read(path)?).map_err(pgm_err(path))
}

pub fn write_pgm16(img: &Gray16, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm16(img)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm8(img: &Gray8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm8(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_bytes_decode() {
        let mut bytes = b"P5\n3 2\n65535\n".to_vec();
        for v in [0u16, 1, 256, 65535, 4660, 43981] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img = decode_pgm16(&bytes).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, vec![0, 1, 256, 65535, 0x1234, 0xabcd]);
        assert_eq!(img.get(2, 1), 0xabcd);
        assert_eq!(encode_pgm16(&img), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n2 # w\n1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 7, 1, 0]);
        assert_eq!(decode_pgm16(&bytes).unwrap().pixels, vec![7, 256]);
    }

    #[test]
    fn rejections_are_distinct() {
        assert_eq!(decode_pgm16(b"P2\n1 1\n65535\n00"), Err(PgmError::BadMagic));
        assert_eq!(decode_pgm16(b"P5\n1 1\n255\n\x00"), Err(PgmError::UnsupportedDepth(255)));
        assert_eq!(
            decode_pgm16(b"P5\n2 2\n65535\n\x00\x01\x02"),
            Err(PgmError::Truncated { expected: 8, found: 3 })
        );
        assert!(matches!(decode_pgm16(b"P5\nx 2\n65535\n"), Err(PgmError::Malformed(_))));
    }

    #[test]
    fn eight_bit_round_trip() {
        let img = Gray8 {
            width: 2,
            height: 2,
            pixels: vec![0, 10, 200, 255],
        };
        assert_eq!(decode_pgm8(&encode_pgm8(&img)).unwrap(), img);
    }
}
