//! Filter visualization as binary PPM (P6) images.

use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::dictionary::Dictionary;
use crate::error::{PdlError, Result};
use crate::patches::ZcaWhitener;
use crate::selection::ExemplarSet;

/// Gray level used for tiles whose values span a zero range.
pub const FLAT_GRAY: u8 = 128;
/// Pixels of separator between tiles.
pub const GAP: usize = 1;

/// An RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![value; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| PdlError::io(path, e))
    }
}

/// Parse a binary P6 image with maxval 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut fields = Vec::new();
    let mut pos = 0;
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
            return Err(PdlError::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| PdlError::Format(format!("bad PPM field `{s}`")))
    };
    if fields[0] != "P6" || num(&fields[3])? != 255 {
        return Err(PdlError::Format(
            "expected a P6 image with maxval 255".into(),
        ));
    }
    let (width, height) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes
        .get(pos..pos + width * height * 3)
        .ok_or_else(|| PdlError::Format("truncated PPM data".into()))?;
    Ok(RgbImage {
        width,
        height,
        pixels: pixels.to_vec(),
    })
}

/// Codes mapped back to pixel space for display: `pinv(T) d + mean`, one row
/// per code.
pub fn unwhiten_codes(dict: &Dictionary, whitener: Option<&ZcaWhitener>) -> Result<Vec<Vec<f64>>> {
    match whitener {
        None => Ok((0..dict.size()).map(|k| dict.code(k).to_vec()).collect()),
        Some(w) => {
            if w.dim() != dict.dim() {
                return Err(PdlError::DimensionMismatch {
                    expected: dict.dim(),
                    actual: w.dim(),
                });
            }
            let inv = w.inverse_transform();
            Ok((0..dict.size())
                .map(|k| {
                    let v = &inv * DVector::from_column_slice(dict.code(k));
                    v.iter().zip(&w.mean).map(|(a, m)| a + m).collect()
                })
                .collect())
        }
    }
}

/// Linear map of `values` onto `[0, 255]` using their own min and max.
pub fn map_to_bytes(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![FLAT_GRAY; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn draw_tile(img: &mut RgbImage, x0: usize, y0: usize, bytes: &[u8], side: usize, channels: usize) {
    let plane = side * side;
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            let rgb = match channels {
                3 => [bytes[i], bytes[plane + i], bytes[2 * plane + i]],
                _ => [bytes[i]; 3],
            };
            img.put(x0 + c, y0 + r, rgb);
        }
    }
}

fn tiled(tiles: &[Vec<Vec<u8>>], side: usize, channels: usize) -> RgbImage {
    let cols = tiles.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
    let rows = tiles.len().max(1);
    let step = side + GAP;
    let mut img = RgbImage::filled(cols * step + GAP, rows * step + GAP, 0);
    for (ty, row) in tiles.iter().enumerate() {
        for (tx, tile) in row.iter().enumerate() {
            draw_tile(
                &mut img,
                GAP + tx * step,
                GAP + ty * step,
                tile,
                side,
                channels,
            );
        }
    }
    img
}

fn code_tiles(dict: &Dictionary, whitener: Option<&ZcaWhitener>) -> Result<Vec<Vec<u8>>> {
    if dict.size() == 0 {
        return Err(PdlError::arg("dictionary is empty"));
    }
    if dict.channels != 1 && dict.channels != 3 {
        return Err(PdlError::arg(format!(
            "cannot display {} channels",
            dict.channels
        )));
    }
    Ok(unwhiten_codes(dict, whitener)?
        .iter()
        .map(|v| map_to_bytes(v))
        .collect())
}

/// Grid of `ceil(sqrt(n))` columns holding every code in order.
pub fn filter_grid(dict: &Dictionary, whitener: Option<&ZcaWhitener>) -> Result<RgbImage> {
    let tiles = code_tiles(dict, whitener)?;
    let cols = (tiles.len() as f64).sqrt().ceil() as usize;
    let rows: Vec<Vec<Vec<u8>>> = tiles.chunks(cols).map(|c| c.to_vec()).collect();
    Ok(tiled(&rows, dict.patch_side, dict.channels))
}

/// One row per cluster: exemplar first, then its members in index order.
pub fn cluster_strips(
    dict: &Dictionary,
    whitener: Option<&ZcaWhitener>,
    selection: &ExemplarSet,
) -> Result<RgbImage> {
    if selection.assignment.len() != dict.size() {
        return Err(PdlError::DimensionMismatch {
            expected: dict.size(),
            actual: selection.assignment.len(),
        });
    }
    let tiles = code_tiles(dict, whitener)?;
    let rows: Vec<Vec<Vec<u8>>> = selection
        .clusters()
        .iter()
        .map(|members| members.iter().map(|&k| tiles[k].clone()).collect())
        .collect();
    Ok(tiled(&rows, dict.patch_side, dict.channels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Provenance;
    use crate::linalg::RowMatrix;

    fn dict(rows: Vec<Vec<f64>>, side: usize, channels: usize) -> Dictionary {
        Dictionary::new(
            RowMatrix::from_rows(&rows).unwrap(),
            side,
            channels,
            Provenance::Random,
        )
        .unwrap()
    }

    #[test]
    fn byte_mapping() {
        assert_eq!(map_to_bytes(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
        assert_eq!(map_to_bytes(&[0.3; 4]), vec![FLAT_GRAY; 4]);
    }

    #[test]
    fn single_code_is_single_tile() {
        let d = dict(vec![vec![0.0, 1.0, 2.0, 3.0]], 2, 1);
        let img = filter_grid(&d, None).unwrap();
        assert_eq!((img.width, img.height), (2 + 2 * GAP, 2 + 2 * GAP));
        assert_eq!(img.get(GAP, GAP), [0, 0, 0]);
        assert_eq!(img.get(GAP + 1, GAP + 1), [255, 255, 255]);
    }

    #[test]
    fn ppm_round_trip() {
        let d = dict(
            vec![vec![0.5; 12], (0..12).map(|i| i as f64).collect()],
            2,
            3,
        );
        let img = filter_grid(&d, None).unwrap();
        let back = parse_ppm(&img.to_ppm()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.get(GAP, GAP), [FLAT_GRAY; 3]);
    }
}
