use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use stainco::stain::{
    normalize_value, optical_density, rgb_to_he_raw, rgb_to_stain_pair_with, StainKind, StainMatrix,
};
use stainco::{rgb_to_stain_pair, RgbTile, StainPair};

const LOG10_255: f64 = 2.406_540_180_433_955;

/// Direct evaluation of the unmixing for one pixel, written out term by term.
fn oracle(px: [u8; 3]) -> (f64, f64) {
    let od = |v: u8| (255.0f64 / f64::from(v.max(1))).log10();
    let (r, g, b) = (od(px[0]), od(px[1]), od(px[2]));
    (1.838 * r + 0.034 * g + -0.760 * b, -1.373 * r + 0.772 * g + 1.215 * b)
}

#[test]
fn optical_density_values() {
    assert_eq!(optical_density(255), 0.0);
    assert_abs_diff_eq!(optical_density(1), LOG10_255, epsilon = 1e-15);
    // Clamped: black behaves like 1.
    assert_eq!(optical_density(0), optical_density(1));
    assert_abs_diff_eq!(optical_density(128), 0.299_330_210_786_086_8, epsilon = 1e-15);
}

#[test]
fn default_matrix_is_exact() {
    assert_eq!(
        StainMatrix::default().coefficients,
        [[1.838, 0.034, -0.760], [-1.373, 0.772, 1.215]]
    );
}

#[test]
fn white_tile_has_no_stain() {
    let raw = rgb_to_he_raw(&RgbTile::uniform(3, 4, [255; 3]), &StainMatrix::default());
    assert!(raw.hematoxylin.iter().chain(&raw.eosin).all(|&v| v == 0.0));
}

#[test]
fn known_pixels() {
    let m = StainMatrix::default();
    let raw = rgb_to_he_raw(&RgbTile::uniform(1, 1, [128, 64, 192]), &m);
    assert_abs_diff_eq!(raw.hematoxylin[0], 0.476_919_571_129_021_6, epsilon = 1e-9);
    assert_abs_diff_eq!(raw.eosin[0], 0.202_233_026_322_598_1, epsilon = 1e-9);
    // Rounded figures quoted for the same pixel.
    assert_abs_diff_eq!(raw.hematoxylin[0], 0.4771, epsilon = 5e-4);
    assert_abs_diff_eq!(raw.eosin[0], 0.2021, epsilon = 5e-4);

    let raw = rgb_to_he_raw(&RgbTile::uniform(1, 1, [1, 1, 1]), &m);
    assert_abs_diff_eq!(raw.hematoxylin[0], 1.112 * LOG10_255, epsilon = 1e-12);
    assert_abs_diff_eq!(raw.eosin[0], 0.614 * LOG10_255, epsilon = 1e-12);
    assert_abs_diff_eq!(raw.hematoxylin[0], 2.6761, epsilon = 1e-4);
    assert_abs_diff_eq!(raw.eosin[0], 1.4776, epsilon = 1e-4);
}

#[test]
fn theoretical_bounds() {
    let m = StainMatrix::default();
    let (h_lo, h_hi) = m.bounds(StainKind::Hematoxylin);
    let (e_lo, e_hi) = m.bounds(StainKind::Eosin);
    assert_abs_diff_eq!(h_lo, -0.760 * LOG10_255, epsilon = 1e-12);
    assert_abs_diff_eq!(h_hi, 1.872 * LOG10_255, epsilon = 1e-12);
    assert_abs_diff_eq!(e_lo, -1.373 * LOG10_255, epsilon = 1e-12);
    assert_abs_diff_eq!(e_hi, 1.987 * LOG10_255, epsilon = 1e-12);
    assert_abs_diff_eq!(h_lo, -1.82897, epsilon = 1e-5);
    assert_abs_diff_eq!(h_hi, 4.50504, epsilon = 1e-5);
    assert_abs_diff_eq!(e_lo, -3.30418, epsilon = 1e-5);
    assert_abs_diff_eq!(e_hi, 4.78180, epsilon = 1e-5);
    assert_eq!(normalize_value(h_hi, StainKind::Hematoxylin, &m), 1.0);
    assert_eq!(normalize_value(h_lo, StainKind::Hematoxylin, &m), 0.0);
}

#[test]
fn white_tile_normalizes_to_the_image_of_zero() {
    let pair = rgb_to_stain_pair(&RgbTile::uniform(2, 2, [255; 3]));
    // 0.760 / 2.632 and 1.373 / 3.360.
    for &v in pair.h().data() {
        assert_abs_diff_eq!(f64::from(v), 0.288_753_799_392_097_3, epsilon = 1e-7);
    }
    for &v in pair.e().data() {
        assert_abs_diff_eq!(f64::from(v), 0.408_630_952_380_952_4, epsilon = 1e-7);
    }
}

#[test]
fn shapes_are_preserved() {
    let tile = RgbTile::uniform(40, 30, [200, 100, 150]);
    let pair = rgb_to_stain_pair(&tile);
    assert_eq!(pair.shape(), (40, 30));
}

#[test]
fn bad_tiles_are_rejected() {
    assert!(RgbTile::new(0, 3, vec![]).is_err());
    assert!(RgbTile::new(2, 2, vec![0; 11]).is_err());
}

#[test]
fn container_layout() {
    let tile = RgbTile::uniform(2, 3, [10, 120, 250]);
    let pair = rgb_to_stain_pair(&tile);
    let mut bytes = Vec::new();
    pair.write_to(&mut bytes).unwrap();
    assert_eq!(bytes.len(), 8 + 2 * 6 * 4);
    assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
    assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
    let first_h = f32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let first_e = f32::from_le_bytes(bytes[32..36].try_into().unwrap());
    assert_eq!(first_h, pair.h().data()[0]);
    assert_eq!(first_e, pair.e().data()[0]);
    assert_eq!(StainPair::read_from(bytes.as_slice()).unwrap(), pair);

    assert!(StainPair::read_from(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(StainPair::read_from(long.as_slice()).is_err());
}

fn tiles() -> impl Strategy<Value = RgbTile> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<u8>(), h * w * 3).prop_map(move |px| RgbTile::new(h, w, px).unwrap())
    })
}

proptest! {
    #[test]
    fn raw_matches_oracle(tile in tiles()) {
        let raw = rgb_to_he_raw(&tile, &StainMatrix::default());
        for (i, px) in tile.pixels().chunks_exact(3).enumerate() {
            let (h, e) = oracle([px[0], px[1], px[2]]);
            prop_assert!((raw.hematoxylin[i] - h).abs() <= 1e-9);
            prop_assert!((raw.eosin[i] - e).abs() <= 1e-9);
        }
    }

    #[test]
    fn optical_density_is_non_increasing(v in 1u8..255) {
        prop_assert!(optical_density(v + 1) <= optical_density(v));
        prop_assert!((0.0..=LOG10_255).contains(&optical_density(v)));
    }

    #[test]
    fn normalization_is_monotone(a in -1.8f64..4.5, b in -1.8f64..4.5) {
        let m = StainMatrix::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(
            normalize_value(lo, StainKind::Hematoxylin, &m) <= normalize_value(hi, StainKind::Hematoxylin, &m)
        );
    }

    #[test]
    fn pairs_are_bounded_and_deterministic(tile in tiles()) {
        let a = rgb_to_stain_pair(&tile);
        let b = rgb_to_stain_pair_with(&tile, &StainMatrix::default());
        prop_assert_eq!(&a, &b);
        prop_assert!(a.h().data().iter().chain(a.e().data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn container_round_trips(tile in tiles()) {
        let pair = rgb_to_stain_pair(&tile);
        let mut bytes = Vec::new();
        pair.write_to(&mut bytes).unwrap();
        prop_assert_eq!(StainPair::read_from(bytes.as_slice()).unwrap(), pair);
    }
}
