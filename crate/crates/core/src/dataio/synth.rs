//! Synthetic two-stain tile corpus.
//!
//! Tiles are rendered as hematoxylin and eosin concentration maps and turned
//! into RGB through the absorbance model of [`StainMatrix::compose_pixel`].
//! Class 0 ("nested") places nuclei in round nests outlined by thin
//! eosin-rich septa; class 1 ("diffuse") scatters nuclei over a patchy eosin
//! background. The class is most visible in the eosin channel.
//!
//! Tiles are grouped into "polygons" that share a style (stain amounts,
//! nucleus size, texture scale), and polygons into "patients" that are kept
//! within one split, mirroring annotated slides.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::manifest::{write_manifest, Split, TileRecord};
use crate::dataio::tiles::{write_png_tile, TileDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, streams};
use crate::stain::{RgbTile, StainMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tiles: usize,
    /// Fraction of class-1 ("diffuse") tiles.
    pub class_balance: f64,
    pub tile_size: usize,
    pub seed: u64,
    #[serde(default = "default_tiles_per_polygon")]
    pub tiles_per_polygon: usize,
    #[serde(default = "default_polygons_per_patient")]
    pub polygons_per_patient: usize,
    /// Train and validation shares of the patients; the rest is test.
    #[serde(default = "default_split")]
    pub split_fractions: (f64, f64),
    /// Strength in `[0, 1]` of the class-free variation: stray nuclei, weak
    /// nest rims, stain-specific texture and pixel noise.
    #[serde(default = "default_nuisance")]
    pub nuisance: f64,
}

pub const DEFAULT_NUISANCE: f64 = 0.3;

fn default_nuisance() -> f64 {
    DEFAULT_NUISANCE
}

fn default_tiles_per_polygon() -> usize {
    10
}

fn default_polygons_per_patient() -> usize {
    4
}

fn default_split() -> (f64, f64) {
    (0.7, 0.15)
}

impl SynthConfig {
    pub fn new(n_tiles: usize, tile_size: usize, seed: u64) -> Self {
        Self {
            n_tiles,
            class_balance: 0.5,
            tile_size,
            seed,
            tiles_per_polygon: default_tiles_per_polygon(),
            polygons_per_patient: default_polygons_per_patient(),
            split_fractions: default_split(),
            nuisance: DEFAULT_NUISANCE,
        }
    }
}

/// Appearance shared by every tile of one polygon.
#[derive(Clone, Debug)]
struct PolygonStyle {
    class: u8,
    h_strength: f64,
    e_strength: f64,
    nucleus_radius: f64,
    nucleus_density: f64,
    stroma_level: f64,
    blob_width: f64,
    /// Share of nuclei of a nested polygon that fall outside the nests.
    stray: f64,
    /// Height of the eosin rim around a nest.
    rim: f64,
    /// Amplitude of the class-free eosin texture.
    fiber: f64,
    /// Density of class-free small hematoxylin dots.
    dots: f64,
    noise: f64,
}

impl PolygonStyle {
    fn draw(class: u8, nuisance: f64, rng: &mut ChaCha8Rng) -> Self {
        let a = nuisance;
        let spread = 0.45 + 0.15 * a;
        let range = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        Self {
            class,
            h_strength: rng.random_range(1.0 - spread..1.0 + spread),
            e_strength: rng.random_range(1.0 - spread..1.0 + spread),
            nucleus_radius: rng.random_range(0.8..1.6),
            nucleus_density: rng.random_range(0.03..0.06),
            stroma_level: rng.random_range(0.12..0.3),
            blob_width: rng.random_range(2.0..4.0),
            stray: range(rng, 0.1 * a, 0.4 * a),
            rim: range(rng, 0.55 - 0.4 * a, 0.55 - 0.1 * a),
            fiber: range(rng, 0.05 * a, 0.25 * a),
            dots: range(rng, 0.0, 0.03 * a),
            noise: 0.03 + 0.02 * a,
        }
    }
}

struct Nest {
    cy: f64,
    cx: f64,
    radius: f64,
}

/// Concentration maps `(hematoxylin, eosin)` for one tile.
fn render_concentrations(style: &PolygonStyle, size: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = size * size;
    let s = size as f64;
    let mut h = vec![0.0; n];
    let mut e = vec![0.0; n];
    let h_gain = style.h_strength * rng.random_range(0.9..1.1);
    let e_gain = style.e_strength * rng.random_range(0.9..1.1);

    let nests: Vec<Nest> = if style.class == 0 {
        let k = rng.random_range(1..=3);
        (0..k)
            .map(|_| Nest {
                cy: rng.random_range(0.0..s),
                cx: rng.random_range(0.0..s),
                radius: rng.random_range(0.16 * s..0.3 * s),
            })
            .collect()
    } else {
        Vec::new()
    };
    let inside = |y: f64, x: f64| nests.iter().any(|nest| (y - nest.cy).hypot(x - nest.cx) < nest.radius - 1.0);

    // Eosin background.
    if style.class == 0 {
        for y in 0..size {
            for x in 0..size {
                let (fy, fx) = (y as f64, x as f64);
                let mut v = style.stroma_level;
                let mut ring: f64 = 0.0;
                for nest in &nests {
                    let d = (fy - nest.cy).hypot(fx - nest.cx);
                    if d < nest.radius {
                        v = style.stroma_level * 0.35;
                    }
                    ring = ring.max((-((d - nest.radius) / 1.1).powi(2)).exp());
                }
                e[y * size + x] = v + style.rim * ring;
            }
        }
    } else {
        let blobs = rng.random_range(4..=8);
        let centers: Vec<(f64, f64, f64)> = (0..blobs)
            .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.1..0.35)))
            .collect();
        let w2 = 2.0 * style.blob_width * style.blob_width;
        for y in 0..size {
            for x in 0..size {
                let (fy, fx) = (y as f64, x as f64);
                let bump: f64 = centers
                    .iter()
                    .map(|(cy, cx, a)| a * (-((fy - cy).powi(2) + (fx - cx).powi(2)) / w2).exp())
                    .sum();
                e[y * size + x] = style.stroma_level * 0.8 + bump;
            }
        }
    }

    // Nuclei.
    let target = (style.nucleus_density * s * s).round().max(1.0) as usize;
    let mut placed = 0;
    let mut attempts = 0;
    while placed < target && attempts < target * 50 {
        attempts += 1;
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        if style.class == 0 && !inside(cy, cx) && rng.random::<f64>() >= style.stray {
            continue;
        }
        placed += 1;
        let r = style.nucleus_radius * rng.random_range(0.8..1.25);
        let depth = rng.random_range(0.7..1.1);
        let reach = r.ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let y = cy as isize + dy;
                let x = cx as isize + dx;
                if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
                    continue;
                }
                let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                let v = depth * (1.0 - (d / r).powi(2)).max(0.0).sqrt();
                let i = y as usize * size + x as usize;
                h[i] = f64::max(h[i], v);
            }
        }
    }

    add_nuisance(style, size, rng, &mut h, &mut e);

    for v in h.iter_mut() {
        *v = (*v * h_gain + 0.05 + style.noise * standard_normal(rng)).max(0.0);
    }
    for v in e.iter_mut() {
        *v = (*v * e_gain + style.noise * standard_normal(rng)).max(0.0);
    }
    (h, e)
}

/// Content that belongs to one stain only and says nothing about the class:
/// a smooth eosin texture and small scattered hematoxylin dots.
fn add_nuisance(style: &PolygonStyle, size: usize, rng: &mut ChaCha8Rng, h: &mut [f64], e: &mut [f64]) {
    let s = size as f64;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(0.3..0.9);
            (angle.cos() * freq, angle.sin() * freq, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let t: f64 = waves
                .iter()
                .map(|(fy, fx, phase, a)| a * (fy * y as f64 + fx * x as f64 + phase).sin())
                .sum();
            e[y * size + x] += style.fiber * (0.5 + t / 3.0).max(0.0);
        }
    }
    let n_dots = (style.dots * s * s).round() as usize;
    for _ in 0..n_dots {
        let (y, x) = (rng.random_range(0..size), rng.random_range(0..size));
        let i = y * size + x;
        h[i] = h[i].max(rng.random_range(0.5..0.9));
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn compose_tile(h: &[f64], e: &[f64], size: usize, matrix: &StainMatrix) -> RgbTile {
    let pixels = h
        .iter()
        .zip(e)
        .flat_map(|(&ch, &ce)| matrix.compose_pixel(ch, ce))
        .collect();
    RgbTile::new(size, size, pixels).expect("size > 0")
}

/// Renders a single tile of the given class with a fresh polygon style.
pub fn render_tile(class: u8, tile_size: usize, seed: u64) -> RgbTile {
    let mut rng = stream(seed, &[streams::SYNTH, u64::MAX]);
    let style = PolygonStyle::draw(class, DEFAULT_NUISANCE, &mut rng);
    let (h, e) = render_concentrations(&style, tile_size, &mut rng);
    compose_tile(&h, &e, tile_size, &StainMatrix::default())
}

pub fn generate_synthetic_dataset(config: &SynthConfig) -> Result<TileDataset> {
    if config.n_tiles == 0 {
        return Err(Error::Config("n_tiles must be at least 1".into()));
    }
    if config.tile_size < 4 {
        return Err(Error::Config(format!("tile size {} is too small", config.tile_size)));
    }
    if !(0.0..=1.0).contains(&config.class_balance) {
        return Err(Error::Config("class_balance must lie in [0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&config.nuisance) {
        return Err(Error::Config("nuisance must lie in [0, 1]".into()));
    }
    if config.tiles_per_polygon == 0 || config.polygons_per_patient == 0 {
        return Err(Error::Config("polygon and patient sizes must be positive".into()));
    }
    let matrix = StainMatrix::default();
    let n1 = (config.n_tiles as f64 * config.class_balance).round() as usize;
    let counts = [config.n_tiles - n1, n1];

    // Single-class polygons, then shuffled so group ids carry no class order.
    let mut polygons: Vec<(u8, usize)> = Vec::new();
    for (class, &count) in counts.iter().enumerate() {
        let mut left = count;
        while left > 0 {
            let take = left.min(config.tiles_per_polygon);
            polygons.push((class as u8, take));
            left -= take;
        }
    }
    let mut order_rng = stream(config.seed, &[streams::SYNTH, 0]);
    polygons.shuffle(&mut order_rng);

    let n_patients = polygons.len().div_ceil(config.polygons_per_patient);
    let mut patients: Vec<usize> = (0..n_patients).collect();
    patients.shuffle(&mut order_rng);
    let (n_train, n_val) = split_counts(n_patients, config.split_fractions);
    let split_of = |patient: usize| {
        let rank = patients.iter().position(|&p| p == patient).expect("patient exists");
        if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };

    let mut records = Vec::with_capacity(config.n_tiles);
    let mut tiles = Vec::with_capacity(config.n_tiles);
    for (gid, &(class, count)) in polygons.iter().enumerate() {
        let mut style_rng = stream(config.seed, &[streams::SYNTH, 1, gid as u64]);
        let style = PolygonStyle::draw(class, config.nuisance, &mut style_rng);
        let split = split_of(gid / config.polygons_per_patient);
        for _ in 0..count {
            let idx = records.len();
            let mut rng = stream(config.seed, &[streams::SYNTH, 2, idx as u64]);
            let (h, e) = render_concentrations(&style, config.tile_size, &mut rng);
            tiles.push(compose_tile(&h, &e, config.tile_size, &matrix));
            let tile_id = format!("syn-{idx:05}");
            records.push(TileRecord {
                locator: format!("tiles/{tile_id}.png"),
                tile_id,
                label: Some(class),
                group_id: gid as u32,
                split,
            });
        }
    }
    TileDataset::new(records, tiles)
}

fn split_counts(n: usize, (train, val): (f64, f64)) -> (usize, usize) {
    if n < 3 {
        return (n, 0);
    }
    let n_test = ((n as f64 * (1.0 - train - val)).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * val).round() as usize).clamp(1, n - 1 - n_test);
    (n - n_val - n_test, n_val)
}

/// Writes `tiles/<id>.png` and `manifest.csv` under `out_dir`.
pub fn write_dataset(dataset: &TileDataset, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let tile_dir = out_dir.join("tiles");
    std::fs::create_dir_all(&tile_dir).map_err(|e| Error::io(&tile_dir, e))?;
    for (record, tile) in dataset.records.iter().zip(&dataset.tiles) {
        write_png_tile(out_dir.join(&record.locator), tile)?;
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &dataset.records)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_cover_everything() {
        for n in 1..40 {
            let (t, v) = split_counts(n, (0.7, 0.15));
            assert!(t >= 1 && t + v <= n, "n={n} t={t} v={v}");
            if n >= 3 {
                assert!(v >= 1 && n - t - v >= 1, "n={n}");
            }
        }
    }

    #[test]
    fn classes_follow_balance() {
        let ds = generate_synthetic_dataset(&SynthConfig::new(200, 12, 1)).unwrap();
        let ones = ds.records.iter().filter(|r| r.label == Some(1)).count();
        assert_eq!(ones, 100);
        let groups: std::collections::BTreeSet<_> = ds.records.iter().map(|r| r.group_id).collect();
        assert_eq!(groups.len(), 20);
    }

    #[test]
    fn polygons_stay_in_one_split() {
        let ds = generate_synthetic_dataset(&SynthConfig::new(300, 8, 4)).unwrap();
        let mut by_group = std::collections::BTreeMap::new();
        for r in &ds.records {
            let s = by_group.entry(r.group_id).or_insert(r.split);
            assert_eq!(*s, r.split);
        }
        for split in [Split::Train, Split::Val, Split::Test] {
            assert!(ds.records.iter().any(|r| r.split == split));
        }
    }
}
