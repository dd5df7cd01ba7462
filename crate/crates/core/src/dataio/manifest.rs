//! Tile manifests: `tile_id,locator,label,group_id,split`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["tile_id", "locator", "label", "group_id", "split"];

/// Environment variable that prefixes relative locators when set.
pub const DATA_ROOT_ENV: &str = "STAINCO_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile_id: String,
    pub locator: String,
    pub label: Option<u8>,
    pub group_id: u32,
    pub split: Split,
}

impl TileRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.tile_id.is_empty() {
            return Err("empty tile_id".into());
        }
        if self.locator.is_empty() {
            return Err("empty locator".into());
        }
        if let Some(label) = self.label {
            if label > 1 {
                return Err(format!("label {label} is not a binary class index"));
            }
        }
        if self.split != Split::Train && self.label.is_none() {
            return Err(format!("{} record without a label", self.split));
        }
        Ok(())
    }

    /// Resolves the locator against `STAINCO_DATA_ROOT`, falling back to `base`.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        resolve_locator(&self.locator, base)
    }
}

pub fn resolve_locator(locator: &str, base: &Path) -> PathBuf {
    let path = Path::new(locator);
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => base.join(path),
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<TileRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, path)
}

/// Parses manifest CSV from any reader; `origin` is used in error messages.
pub fn parse_manifest(reader: impl std::io::Read, origin: &Path) -> Result<Vec<TileRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let headers = csv
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(
            1,
            format!("expected header {:?}, found {:?}", MANIFEST_HEADER.join(","), headers),
        ));
    }

    let mut records = Vec::new();
    for row in csv.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let label = match field(2) {
            "" => None,
            s => Some(
                s.parse::<u8>()
                    .map_err(|_| parse_err(line, format!("bad label {s:?}")))?,
            ),
        };
        let group = field(3);
        let group_id = group
            .parse::<u32>()
            .map_err(|_| parse_err(line, format!("bad group_id {group:?} (need integer >= 0)")))?;
        let split = field(4)
            .parse::<Split>()
            .map_err(|e| parse_err(line, e.to_string()))?;
        let record = TileRecord {
            tile_id: field(0).to_string(),
            locator: field(1).to_string(),
            label,
            group_id,
            split,
        };
        record.validate().map_err(|m| parse_err(line, m))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[TileRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("tile_id,locator,label,group_id,split\n");
    for r in records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.tile_id, r.locator, label, r.group_id, r.split
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<TileRecord>> {
        parse_manifest(text.as_bytes(), Path::new("m.csv"))
    }

    #[test]
    fn well_formed_rows() {
        let recs = parse(
            "tile_id,locator,label,group_id,split\n\
             a,tiles/a.png,0,3,train\n\
             b,tiles/b.png,,3,train\n\
             c,tiles/c.png,1,7,test\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].label, None);
        assert_eq!(recs[2].split, Split::Test);
    }

    #[test]
    fn rejects_unlabeled_val() {
        let err = parse("tile_id,locator,label,group_id,split\na,x.png,,0,val\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_negative_group() {
        let err = parse("tile_id,locator,label,group_id,split\na,x.png,1,-1,train\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_wrong_header_and_bad_split() {
        assert!(parse("id,locator,label,group_id,split\n").is_err());
        let err = parse("tile_id,locator,label,group_id,split\na,x.png,1,0,holdout\n").unwrap_err();
        assert!(err.to_string().contains("holdout"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_manifest("/definitely/not/here.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
