//! Binary interchange formats: `DMAP` density maps and 8-bit PGM images.

use std::io::{Read, Write};

use crate::density::DensityMap;
use crate::error::{Error, Result};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
pub const DMAP_VERSION: u8 = 1;

/// Encodes a map as `DMAP`: magic, version byte, rows and cols as u32 LE, then
/// row-major f32 LE values.
pub fn encode_dmap(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * map.values().len());
    out.extend_from_slice(DMAP_MAGIC);
    out.push(DMAP_VERSION);
    out.extend_from_slice(&(map.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(map.cols() as u32).to_le_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn dmap_err(message: impl Into<String>) -> Error {
    Error::Format {
        format: "DMAP",
        message: message.into(),
    }
}

pub fn decode_dmap(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < 13 || &bytes[..4] != DMAP_MAGIC {
        return Err(dmap_err("missing DMAP header"));
    }
    if bytes[4] != DMAP_VERSION {
        return Err(dmap_err(format!("unsupported version {}", bytes[4])));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if body.len() != rows * cols * 4 {
        return Err(dmap_err(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            rows * cols * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DensityMap::from_values(rows, cols, values)
}

pub fn write_dmap<W: Write>(mut w: W, map: &DensityMap) -> std::io::Result<()> {
    w.write_all(&encode_dmap(map))
}

pub fn read_dmap<R: Read>(mut r: R) -> Result<DensityMap> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("<dmap stream>", e))?;
    decode_dmap(&buf)
}

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} pixels for a {rows}x{cols} image",
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: u8) -> Self {
        Self {
            rows,
            cols,
            pixels: vec![value; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.pixels[row * self.cols + col] = v;
    }

    /// Window `[row, row + h) x [col, col + w)`; the window must fit.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<GrayImage> {
        if row + h > self.rows || col + w > self.cols {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({row}, {col}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        let mut pixels = Vec::with_capacity(h * w);
        for r in row..row + h {
            pixels.extend_from_slice(&self.pixels[r * self.cols + col..][..w]);
        }
        Ok(GrayImage {
            rows: h,
            cols: w,
            pixels,
        })
    }
}

/// Binary PGM (`P5`, maxval 255).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Linear rendering of a map: the map maximum becomes 255, zero stays black.
pub fn render_map(map: &DensityMap) -> GrayImage {
    let max = map.max();
    let pixels = if max > 0.0 {
        map.values()
            .iter()
            .map(|&v| (v.max(0.0) / max * 255.0).round() as u8)
            .collect()
    } else {
        vec![0; map.values().len()]
    };
    GrayImage {
        rows: map.rows(),
        cols: map.cols(),
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dmap_header_layout() {
        let map = DensityMap::from_values(2, 3, vec![0.0, 1.0, 0.5, 0.25, 2.0, 3.0]).unwrap();
        let bytes = encode_dmap(&map);
        assert_eq!(&bytes[..5], b"DMAP\x01");
        assert_eq!(&bytes[5..9], &[2, 0, 0, 0]);
        assert_eq!(&bytes[9..13], &[3, 0, 0, 0]);
        assert_eq!(&bytes[13..17], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[17..21], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 13 + 24);
        assert_eq!(decode_dmap(&bytes).unwrap(), map);
    }

    #[test]
    fn dmap_rejects_garbage() {
        assert!(decode_dmap(b"DMAX\x01\0\0\0\0\0\0\0\0").is_err());
        assert!(decode_dmap(b"DMAP\x02\0\0\0\0\0\0\0\0").is_err());
        assert!(decode_dmap(b"DMAP\x01\x01\0\0\0\x01\0\0\0").is_err());
    }

    #[test]
    fn zero_map_renders_black() {
        let img = render_map(&DensityMap::zeros(3, 4));
        assert!(img.pixels().iter().all(|&p| p == 0));
        let pgm = encode_pgm(&img);
        assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(pgm.len(), 11 + 12);
    }

    #[test]
    fn render_scales_to_max() {
        let map = DensityMap::from_values(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(render_map(&map).pixels(), &[0, 128, 255]);
    }

    proptest! {
        #[test]
        fn dmap_round_trip_is_f32_exact(vals in proptest::collection::vec(0.0f32..100.0, 12)) {
            let map = DensityMap::from_values(3, 4, vals.iter().map(|&v| v as f64).collect()).unwrap();
            prop_assert_eq!(decode_dmap(&encode_dmap(&map)).unwrap(), map);
        }
    }
}
