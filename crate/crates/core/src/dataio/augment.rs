//! Paired augmentation of multi-view samples.
//!
//! A sample is a list of [`View`]s (for co-training: the H view and the E
//! view). One geometric transform (rotation, crop, flips) is drawn per sample
//! and applied to every view; photometric jitter (brightness, contrast) is
//! drawn independently per view. Standardization with training-split channel
//! statistics is applied last.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::rng::{stream, streams};
use crate::stain::StainPair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub crop_size: usize,
    pub jitter_strength: f64,
    #[serde(default = "yes")]
    pub shared_geometric: bool,
    #[serde(default = "yes")]
    pub independent_photometric: bool,
    #[serde(default = "yes")]
    pub rotation: bool,
    #[serde(default = "yes")]
    pub flips: bool,
    #[serde(default)]
    pub rng_seed: u64,
}

fn yes() -> bool {
    true
}

impl AugmentationPolicy {
    pub fn new(crop_size: usize, jitter_strength: f64) -> Self {
        Self {
            crop_size,
            jitter_strength,
            shared_geometric: true,
            independent_photometric: true,
            rotation: true,
            flips: true,
            rng_seed: 0,
        }
    }

    /// Seed for one sample of one epoch.
    pub fn sample_seed(&self, epoch: usize, sample: u64) -> u64 {
        crate::rng::derive_seed(self.rng_seed, &[streams::AUGMENT, epoch as u64, sample])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-channel mean/std, computed once over the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub channels: BTreeMap<Channel, ChannelStats>,
}

impl Standardization {
    /// Zero mean and unit std for every channel: standardization is a no-op.
    pub fn identity() -> Self {
        let channels = Channel::ALL
            .iter()
            .map(|&c| (c, ChannelStats { mean: 0.0, std: 1.0 }))
            .collect();
        Self { channels }
    }

    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a View>) -> Result<Self> {
        let mut acc: BTreeMap<Channel, (f64, f64, u64)> = BTreeMap::new();
        for view in samples {
            for (c, p) in view.channels.iter().zip(&view.planes) {
                let e = acc.entry(*c).or_insert((0.0, 0.0, 0));
                for &v in p.data() {
                    let v = v as f64;
                    e.0 += v;
                    e.1 += v * v;
                }
                e.2 += p.data().len() as u64;
            }
        }
        if acc.is_empty() {
            return Err(Error::InvalidInput("no samples to fit standardization".into()));
        }
        let channels = acc
            .into_iter()
            .map(|(c, (s, ss, n))| {
                let mean = s / n as f64;
                let var = (ss / n as f64 - mean * mean).max(0.0);
                (c, ChannelStats { mean, std: var.sqrt() })
            })
            .collect();
        Ok(Self { channels })
    }

    pub fn get(&self, c: Channel) -> Result<ChannelStats> {
        self.channels
            .get(&c)
            .copied()
            .ok_or_else(|| Error::Config(format!("no standardization statistics for channel {c}")))
    }
}

/// One encoder input: a stack of same-shaped channel planes.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub channels: Vec<Channel>,
    pub planes: Vec<Plane>,
}

impl View {
    pub fn new(channels: Vec<Channel>, planes: Vec<Plane>) -> Result<Self> {
        if channels.is_empty() || channels.len() != planes.len() {
            return Err(Error::Shape(format!(
                "{} channel tags for {} planes",
                channels.len(),
                planes.len()
            )));
        }
        let shape = planes[0].shape();
        if planes.iter().any(|p| p.shape() != shape) {
            return Err(Error::Shape("view planes differ in shape".into()));
        }
        Ok(Self { channels, planes })
    }

    pub fn single(channel: Channel, plane: Plane) -> Self {
        Self {
            channels: vec![channel],
            planes: vec![plane],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.planes[0].shape()
    }

    fn map_planes(&self, f: impl Fn(&Plane) -> Plane) -> View {
        View {
            channels: self.channels.clone(),
            planes: self.planes.iter().map(f).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricDraw {
    pub angle_deg: f64,
    pub top: usize,
    pub left: usize,
    pub hflip: bool,
    pub vflip: bool,
}

impl GeometricDraw {
    /// Unrotated, unflipped central crop.
    pub fn center(shape: (usize, usize), crop: usize) -> Self {
        Self {
            angle_deg: 0.0,
            top: (shape.0 - crop) / 2,
            left: (shape.1 - crop) / 2,
            hflip: false,
            vflip: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricDraw {
    pub brightness: f64,
    pub contrast: f64,
}

impl PhotometricDraw {
    pub const IDENTITY: PhotometricDraw = PhotometricDraw {
        brightness: 1.0,
        contrast: 1.0,
    };
}

/// Every random choice made for one sample, per view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub geometric: Vec<GeometricDraw>,
    pub photometric: Vec<PhotometricDraw>,
}

#[inline]
fn reflect(u: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let mut r = u.rem_euclid(period);
    if r > last {
        r = period - r;
    }
    r
}

/// Rotation about the tile centre (reflection padding, bilinear sampling),
/// then the crop window, then flips.
pub fn apply_geometric(plane: &Plane, draw: &GeometricDraw, crop: usize) -> Result<Plane> {
    let (h, w) = plane.shape();
    if crop == 0 || draw.top + crop > h || draw.left + crop > w {
        return Err(Error::Shape(format!(
            "crop {crop}@({},{}) outside {h}x{w}",
            draw.top, draw.left
        )));
    }
    let mut out = if draw.angle_deg == 0.0 {
        plane.crop(draw.top, draw.left, crop, crop)?.into_data()
    } else {
        let (sin, cos) = draw.angle_deg.to_radians().sin_cos();
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let mut data = Vec::with_capacity(crop * crop);
        for i in 0..crop {
            let dy = (draw.top + i) as f64 - cy;
            for j in 0..crop {
                let dx = (draw.left + j) as f64 - cx;
                // Inverse rotation maps the output pixel back into the source.
                let sy = reflect(cos * dy + sin * dx + cy, h);
                let sx = reflect(-sin * dy + cos * dx + cx, w);
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fy = sy - y0 as f64;
                let fx = sx - x0 as f64;
                let top = plane.get(y0, x0) as f64 * (1.0 - fx) + plane.get(y0, x1) as f64 * fx;
                let bot = plane.get(y1, x0) as f64 * (1.0 - fx) + plane.get(y1, x1) as f64 * fx;
                data.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
        data
    };
    if draw.hflip {
        for row in out.chunks_exact_mut(crop) {
            row.reverse();
        }
    }
    if draw.vflip {
        let rows: Vec<Vec<f32>> = out.chunks_exact(crop).rev().map(<[f32]>::to_vec).collect();
        out = rows.concat();
    }
    Plane::new(crop, crop, out)
}

/// Brightness scaling then contrast around the plane mean, clamping to
/// `[0, 1]` after each step.
pub fn apply_photometric(plane: &Plane, draw: &PhotometricDraw) -> Plane {
    if *draw == PhotometricDraw::IDENTITY {
        return plane.map(|v| v.clamp(0.0, 1.0));
    }
    let b = draw.brightness as f32;
    let bright = plane.map(|v| (v * b).clamp(0.0, 1.0));
    let mean = bright.mean() as f32;
    let c = draw.contrast as f32;
    bright.map(|v| ((v - mean) * c + mean).clamp(0.0, 1.0))
}

pub fn standardize(view: &View, stats: &Standardization) -> Result<View> {
    let mut planes = Vec::with_capacity(view.planes.len());
    for (c, p) in view.channels.iter().zip(&view.planes) {
        let s = stats.get(*c)?;
        let (mean, inv) = (s.mean as f32, (1.0 / s.std.max(1e-6)) as f32);
        planes.push(p.map(|v| (v - mean) * inv));
    }
    Ok(View {
        channels: view.channels.clone(),
        planes,
    })
}

fn draw_geometric(rng: &mut impl Rng, shape: (usize, usize), policy: &AugmentationPolicy) -> GeometricDraw {
    let crop = policy.crop_size;
    GeometricDraw {
        angle_deg: if policy.rotation {
            rng.random_range(-180.0..180.0)
        } else {
            0.0
        },
        top: rng.random_range(0..=shape.0 - crop),
        left: rng.random_range(0..=shape.1 - crop),
        hflip: policy.flips && rng.random_bool(0.5),
        vflip: policy.flips && rng.random_bool(0.5),
    }
}

fn draw_photometric(rng: &mut impl Rng, strength: f64) -> PhotometricDraw {
    if strength <= 0.0 {
        return PhotometricDraw::IDENTITY;
    }
    let lo = (1.0 - strength).max(0.0);
    let hi = 1.0 + strength;
    PhotometricDraw {
        brightness: rng.random_range(lo..hi),
        contrast: rng.random_range(lo..hi),
    }
}

fn check_views(source: &[View], crop: usize) -> Result<(usize, usize)> {
    let first = source
        .first()
        .ok_or_else(|| Error::InvalidInput("sample has no views".into()))?;
    let shape = first.shape();
    if source.iter().any(|v| v.shape() != shape) {
        return Err(Error::Shape("views of one sample differ in shape".into()));
    }
    if crop == 0 || crop > shape.0 || crop > shape.1 {
        return Err(Error::Shape(format!(
            "crop {crop} does not fit a {}x{} sample",
            shape.0, shape.1
        )));
    }
    Ok(shape)
}

pub fn draw_augmentation(source: &[View], policy: &AugmentationPolicy, sample_seed: u64) -> Result<AugmentDraw> {
    let shape = check_views(source, policy.crop_size)?;
    let mut rng = stream(sample_seed, &[]);
    let shared = draw_geometric(&mut rng, shape, policy);
    let geometric = (0..source.len())
        .map(|i| {
            if policy.shared_geometric || i == 0 {
                shared
            } else {
                draw_geometric(&mut rng, shape, policy)
            }
        })
        .collect();
    let first = draw_photometric(&mut rng, policy.jitter_strength);
    let photometric = (0..source.len())
        .map(|i| {
            if policy.independent_photometric && i > 0 {
                draw_photometric(&mut rng, policy.jitter_strength)
            } else {
                first
            }
        })
        .collect();
    Ok(AugmentDraw {
        geometric,
        photometric,
    })
}

/// Applies a recorded draw. `augment_views` is exactly `draw` then `replay`.
pub fn replay_views(source: &[View], draw: &AugmentDraw, crop: usize, stats: &Standardization) -> Result<Vec<View>> {
    check_views(source, crop)?;
    if draw.geometric.len() != source.len() || draw.photometric.len() != source.len() {
        return Err(Error::Shape("draw does not match the number of views".into()));
    }
    source
        .iter()
        .zip(draw.geometric.iter().zip(&draw.photometric))
        .map(|(view, (g, p))| {
            let mut planes = Vec::with_capacity(view.planes.len());
            for plane in &view.planes {
                planes.push(apply_photometric(&apply_geometric(plane, g, crop)?, p));
            }
            standardize(&View { channels: view.channels.clone(), planes }, stats)
        })
        .collect()
}

pub fn augment_views(
    source: &[View],
    policy: &AugmentationPolicy,
    stats: &Standardization,
    sample_seed: u64,
) -> Result<(Vec<View>, AugmentDraw)> {
    let draw = draw_augmentation(source, policy, sample_seed)?;
    let views = replay_views(source, &draw, policy.crop_size, stats)?;
    Ok((views, draw))
}

/// Deterministic centre crop and standardization.
pub fn eval_views(source: &[View], crop: usize, stats: &Standardization) -> Result<Vec<View>> {
    check_views(source, crop)?;
    source
        .iter()
        .map(|v| {
            let cropped = v.map_planes(|p| p.center_crop(crop, crop).expect("crop checked"));
            standardize(&cropped, stats)
        })
        .collect()
}

fn pair_views(pair: &StainPair) -> [View; 2] {
    [
        View::single(Channel::H, pair.h().clone()),
        View::single(Channel::E, pair.e().clone()),
    ]
}

fn views_to_pair(mut views: Vec<View>) -> StainPair {
    let e = views.pop().expect("two views").planes.remove(0);
    let h = views.pop().expect("two views").planes.remove(0);
    StainPair::new(h, e).expect("shared geometry keeps shapes equal")
}

pub fn augment_stain_pair(
    pair: &StainPair,
    policy: &AugmentationPolicy,
    stats: &Standardization,
    sample_seed: u64,
) -> Result<(StainPair, AugmentDraw)> {
    let (views, draw) = augment_views(&pair_views(pair), policy, stats, sample_seed)?;
    Ok((views_to_pair(views), draw))
}

pub fn eval_stain_pair(pair: &StainPair, crop: usize, stats: &Standardization) -> Result<StainPair> {
    Ok(views_to_pair(eval_views(&pair_views(pair), crop, stats)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Plane {
        Plane::new(h, w, (0..h * w).map(|i| i as f32 / (h * w) as f32).collect()).unwrap()
    }

    #[test]
    fn reflect_folds_into_range() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(8.0, 5), 0.0);
    }

    #[test]
    fn half_turn_equals_double_flip() {
        let p = ramp(8, 8);
        let rot = GeometricDraw { angle_deg: 180.0, ..GeometricDraw::center((8, 8), 8) };
        let flip = GeometricDraw { hflip: true, vflip: true, ..GeometricDraw::center((8, 8), 8) };
        let a = apply_geometric(&p, &rot, 8).unwrap();
        let b = apply_geometric(&p, &flip, 8).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn flips_are_involutions() {
        let p = ramp(6, 6);
        let d = GeometricDraw { hflip: true, vflip: true, ..GeometricDraw::center((6, 6), 6) };
        let once = apply_geometric(&p, &d, 6).unwrap();
        assert_eq!(apply_geometric(&once, &d, 6).unwrap(), p);
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let v = [View::single(Channel::H, ramp(4, 4))];
        assert!(eval_views(&v, 5, &Standardization::identity()).is_err());
    }

    #[test]
    fn fitted_stats_standardize_to_zero_mean() {
        let v = View::single(Channel::E, ramp(10, 10));
        let stats = Standardization::fit([&v]).unwrap();
        let s = standardize(&v, &stats).unwrap();
        assert!(s.planes[0].mean().abs() < 1e-6);
    }

    #[test]
    fn photometric_identity_only_clamps() {
        let p = Plane::new(1, 3, vec![-0.5, 0.25, 2.0]).unwrap();
        let q = apply_photometric(&p, &PhotometricDraw::IDENTITY);
        assert_eq!(q.data(), &[0.0, 0.25, 1.0]);
    }
}
