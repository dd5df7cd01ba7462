//! Hematoxylin/eosin colour deconvolution.
//!
//! An RGB tile is mapped into optical-density space (`log10(255 / v)` per
//! channel) and unmixed by a fixed 2×3 stain matrix into hematoxylin and eosin
//! intensities. The raw intensities are then mapped to `[0, 1]` with a fixed
//! affine transform whose bounds follow from the matrix itself, so the result
//! never depends on the content of other tiles.
//!
//! All arithmetic before storage is done in `f64`; channel images are stored
//! as `f32`.

use std::io::{Read, Write};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// `log10(255)`, the optical density of a fully dark (clamped) channel value.
pub const MAX_OPTICAL_DENSITY: f64 = 2.406_540_180_433_955;

/// An 8-bit RGB image, row-major, interleaved `RGBRGB...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbTile {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RgbTile {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty tile {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "tile {height}x{width}x3 needs {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// A tile where every pixel has the same colour.
    pub fn uniform(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        assert!(height > 0 && width > 0, "empty tile");
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// One colour channel (0 = R, 1 = G, 2 = B) scaled to `[0, 1]`.
    pub fn channel(&self, index: usize) -> Plane {
        assert!(index < 3, "rgb channel index {index}");
        let data = self
            .pixels
            .chunks_exact(3)
            .map(|px| px[index] as f32 / 255.0)
            .collect();
        Plane::new(self.height, self.width, data).expect("tile shape is valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainKind {
    Hematoxylin,
    Eosin,
}

impl StainKind {
    fn row(self) -> usize {
        match self {
            StainKind::Hematoxylin => 0,
            StainKind::Eosin => 1,
        }
    }
}

/// Linear map from RGB optical densities to (H, E) stain intensities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainMatrix {
    pub coefficients: [[f64; 3]; 2],
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self {
            coefficients: [[1.838, 0.034, -0.760], [-1.373, 0.772, 1.215]],
        }
    }
}

impl StainMatrix {
    /// Theoretical `(min, max)` of the raw channel over all 8-bit inputs.
    ///
    /// Each optical density lies in `[0, log10 255]`, so the extremes of a row
    /// are reached by saturating the channels with negative (resp. positive)
    /// coefficients.
    pub fn bounds(&self, kind: StainKind) -> (f64, f64) {
        let row = &self.coefficients[kind.row()];
        let neg: f64 = row.iter().filter(|c| **c < 0.0).sum();
        let pos: f64 = row.iter().filter(|c| **c > 0.0).sum();
        (neg * MAX_OPTICAL_DENSITY, pos * MAX_OPTICAL_DENSITY)
    }

    /// Optical-density colour vectors of the two stains.
    ///
    /// These are the columns of the Moore–Penrose pseudo-inverse of the
    /// matrix, so `matrix · vector(kind)` is the unit vector for `kind`.
    pub fn stain_vectors(&self) -> [[f64; 3]; 2] {
        let m = &self.coefficients;
        let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        // (M Mᵀ)⁻¹ for the 2×2 Gram matrix.
        let (a, b, d) = (dot(&m[0], &m[0]), dot(&m[0], &m[1]), dot(&m[1], &m[1]));
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let mut out = [[0.0; 3]; 2];
        for (s, col) in out.iter_mut().enumerate() {
            for (c, v) in col.iter_mut().enumerate() {
                *v = m[0][c] * inv[0][s] + m[1][c] * inv[1][s];
            }
        }
        out
    }

    /// Renders stain concentrations back to an 8-bit RGB pixel through the
    /// Beer–Lambert absorbance model.
    pub fn compose_pixel(&self, hematoxylin: f64, eosin: f64) -> [u8; 3] {
        let [h, e] = self.stain_vectors();
        let mut out = [0u8; 3];
        for c in 0..3 {
            let od = (hematoxylin * h[c] + eosin * e[c]).max(0.0);
            out[c] = (255.0 * 10f64.powf(-od)).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

static OD_TABLE: LazyLock<[f64; 256]> = LazyLock::new(|| {
    let mut table = [0.0; 256];
    for (v, slot) in table.iter_mut().enumerate() {
        *slot = od_direct(v as u8);
    }
    table
});

#[inline]
fn od_direct(v: u8) -> f64 {
    (255.0 / f64::from(v.max(1))).log10()
}

/// `log10(255 / max(v, 1))`. Zero is clamped to one so black pixels stay finite.
#[inline]
pub fn optical_density(v: u8) -> f64 {
    OD_TABLE[v as usize]
}

/// Un-normalized stain intensities of a tile, one `f64` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RawStains {
    pub height: usize,
    pub width: usize,
    pub hematoxylin: Vec<f64>,
    pub eosin: Vec<f64>,
}

impl RawStains {
    pub fn channel(&self, kind: StainKind) -> &[f64] {
        match kind {
            StainKind::Hematoxylin => &self.hematoxylin,
            StainKind::Eosin => &self.eosin,
        }
    }
}

pub fn rgb_to_he_raw(tile: &RgbTile, matrix: &StainMatrix) -> RawStains {
    let n = tile.height * tile.width;
    let mut hematoxylin = Vec::with_capacity(n);
    let mut eosin = Vec::with_capacity(n);
    let [mh, me] = &matrix.coefficients;
    for px in tile.pixels.chunks_exact(3) {
        let od = [
            optical_density(px[0]),
            optical_density(px[1]),
            optical_density(px[2]),
        ];
        hematoxylin.push(mh[0] * od[0] + mh[1] * od[1] + mh[2] * od[2]);
        eosin.push(me[0] * od[0] + me[1] * od[1] + me[2] * od[2]);
    }
    RawStains {
        height: tile.height,
        width: tile.width,
        hematoxylin,
        eosin,
    }
}

/// Affine map of one raw channel value onto `[0, 1]` using the matrix bounds.
#[inline]
pub fn normalize_value(raw: f64, kind: StainKind, matrix: &StainMatrix) -> f64 {
    let (lo, hi) = matrix.bounds(kind);
    ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn normalize_stain(
    raw: &[f64],
    height: usize,
    width: usize,
    kind: StainKind,
    matrix: &StainMatrix,
) -> Result<Plane> {
    let (lo, hi) = matrix.bounds(kind);
    let span = hi - lo;
    let data = raw
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0) as f32)
        .collect();
    Plane::new(height, width, data)
}

/// The two co-training views of one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct StainPair {
    h: Plane,
    e: Plane,
}

impl StainPair {
    pub fn new(h: Plane, e: Plane) -> Result<Self> {
        if h.shape() != e.shape() {
            return Err(Error::Shape(format!(
                "stain channels differ: {:?} vs {:?}",
                h.shape(),
                e.shape()
            )));
        }
        Ok(Self { h, e })
    }

    pub fn h(&self) -> &Plane {
        &self.h
    }

    pub fn e(&self) -> &Plane {
        &self.e
    }

    pub fn shape(&self) -> (usize, usize) {
        self.h.shape()
    }

    pub fn into_planes(self) -> (Plane, Plane) {
        (self.h, self.e)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let (height, width) = self.shape();
        w.write_all(&(height as u32).to_le_bytes())?;
        w.write_all(&(width as u32).to_le_bytes())?;
        for plane in [&self.h, &self.e] {
            let mut buf = Vec::with_capacity(plane.data().len() * 4);
            for v in plane.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads the container written by [`StainPair::write_to`]: two `u32`
    /// (height, width) followed by the H then E planes as little-endian `f32`.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|e| Error::InvalidInput(format!("stain pair header: {e}")))?;
        let height = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::InvalidInput("stain pair dimensions overflow".into()))?;
        let mut read_plane = || -> Result<Plane> {
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)
                .map_err(|e| Error::InvalidInput(format!("stain pair body: {e}")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Plane::new(height, width, data)
        };
        let h = read_plane()?;
        let e = read_plane()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::InvalidInput(e.to_string()))? != 0 {
            return Err(Error::InvalidInput("trailing bytes after stain pair".into()));
        }
        StainPair::new(h, e)
    }
}

pub fn rgb_to_stain_pair_with(tile: &RgbTile, matrix: &StainMatrix) -> StainPair {
    let raw = rgb_to_he_raw(tile, matrix);
    let (hgt, wid) = (raw.height, raw.width);
    let h = normalize_stain(&raw.hematoxylin, hgt, wid, StainKind::Hematoxylin, matrix)
        .expect("raw stains share the tile shape");
    let e = normalize_stain(&raw.eosin, hgt, wid, StainKind::Eosin, matrix)
        .expect("raw stains share the tile shape");
    StainPair { h, e }
}

pub fn rgb_to_stain_pair(tile: &RgbTile) -> StainPair {
    rgb_to_stain_pair_with(tile, &StainMatrix::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_optical_density_constant() {
        assert_eq!(MAX_OPTICAL_DENSITY, 255f64.log10());
        assert_eq!(optical_density(0), optical_density(1));
        assert_eq!(optical_density(1), 255f64.log10());
    }

    #[test]
    fn stain_vectors_invert_the_matrix() {
        let m = StainMatrix::default();
        let v = m.stain_vectors();
        for (s, col) in v.iter().enumerate() {
            for (r, row) in m.coefficients.iter().enumerate() {
                let dot: f64 = row.iter().zip(col).map(|(a, b)| a * b).sum();
                let want = if r == s { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
            assert!(col.iter().all(|c| *c > 0.0), "absorbance must be positive");
        }
    }

    #[test]
    fn compose_then_deconvolve_recovers_concentrations() {
        let m = StainMatrix::default();
        let px = m.compose_pixel(0.6, 0.3);
        let tile = RgbTile::new(1, 1, px.to_vec()).unwrap();
        let raw = rgb_to_he_raw(&tile, &m);
        // 8-bit quantization bounds the error.
        assert!((raw.hematoxylin[0] - 0.6).abs() < 0.02);
        assert!((raw.eosin[0] - 0.3).abs() < 0.02);
    }

    #[test]
    fn truncated_container_is_rejected() {
        let pair = rgb_to_stain_pair(&RgbTile::uniform(2, 3, [10, 20, 30]));
        let mut bytes = Vec::new();
        pair.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 2 * 6 * 4);
        assert!(StainPair::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(StainPair::read_from(&long[..]).is_err());
        assert_eq!(StainPair::read_from(&bytes[..]).unwrap(), pair);
    }
}
