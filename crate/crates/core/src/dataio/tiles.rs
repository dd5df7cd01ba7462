//! PNG tile storage and in-memory datasets.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::dataio::manifest::{load_manifest, Split, TileRecord};
use crate::error::{Error, Result};
use crate::stain::RgbTile;

pub fn read_png_tile(path: impl AsRef<Path>) -> Result<RgbTile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let pixels = match info.color_type {
        png::ColorType::Rgb => bytes.to_vec(),
        png::ColorType::Rgba => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => bytes.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported png colour type {other:?}",
                path.display()
            )))
        }
    };
    RgbTile::new(h, w, pixels)
}

pub fn write_png_tile(path: impl AsRef<Path>, tile: &RgbTile) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), tile.width() as u32, tile.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(tile.pixels())?;
    writer.finish()?;
    Ok(())
}

/// Manifest records with their decoded tiles, index-aligned.
#[derive(Clone, Debug)]
pub struct TileDataset {
    pub records: Vec<TileRecord>,
    pub tiles: Vec<RgbTile>,
}

impl TileDataset {
    pub fn new(records: Vec<TileRecord>, tiles: Vec<RgbTile>) -> Result<Self> {
        if records.len() != tiles.len() {
            return Err(Error::InvalidInput(format!(
                "{} records but {} tiles",
                records.len(),
                tiles.len()
            )));
        }
        Ok(Self { records, tiles })
    }

    /// Loads a manifest and every tile it references.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let records = load_manifest(manifest)?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let tiles = records
            .iter()
            .map(|r| read_png_tile(r.resolve(base)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records, tiles)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Positions of the records in `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn subset(&self, split: Split) -> TileDataset {
        let idx = self.indices(split);
        TileDataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            tiles: idx.iter().map(|&i| self.tiles[i].clone()).collect(),
        }
    }
}
