//! Dataset ingestion, the canonical JSON manifest, deterministic page
//! synthesis and annotated-image rendering.

pub mod draw;
pub mod png_io;
pub mod render;
pub mod synth;
pub mod voc;

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_box, BBox, ClassLabel, LabelSet};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("png error on {path}: {detail}")]
    Png { path: PathBuf, detail: String },
    #[error("parse error in {path}{}: {detail}", location.as_deref().map(|l| format!(" ({l})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        location: Option<String>,
        detail: String,
    },
    #[error("missing image files: {}", paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingImages { paths: Vec<PathBuf> },
    #[error("unknown class names {names:?}; manifest labels are {known:?}")]
    UnknownLabels { names: Vec<String>, known: Vec<String> },
    #[error("page {page_w}x{page_h} too small for the requested objects (need {needed} rows)")]
    PageTooSmall { page_w: u32, page_h: u32, needed: u32 },
    #[error("invalid synthesis config: {0}")]
    BadSynthConfig(String),
    #[error("invalid split fraction {0}; must lie strictly between 0 and 1")]
    BadSplitFraction(f64),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl DocumentImage {
    pub fn blank(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image dims must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// A ground-truth region on a page.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub bbox: BBox,
    pub label: ClassLabel,
}

/// An image with its ground truth, ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct AnnotatedDocument {
    pub id: String,
    pub image: DocumentImage,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One box in the serialized manifest; labels are stored by name so ids
/// stay stable under label-set extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestBox {
    pub label: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path, relative to the manifest's directory.
    pub image: String,
    pub boxes: Vec<ManifestBox>,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// The canonical dataset description. Field-by-field schema lives in
/// `docs/file_formats.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, labels: &LabelSet) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            name: name.into(),
            labels: labels.names().to_vec(),
            split: None,
            entries: Vec::new(),
        }
    }

    pub fn label_set(&self) -> LabelSet {
        LabelSet::new(self.labels.iter().cloned())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        crate::write_atomic(path, json.as_bytes()).map_err(|e| DataError::io(path, e))
    }
}

/// A manifest together with its on-disk location and load diagnostics.
#[derive(Debug, Clone)]
pub struct ManifestLoad {
    pub manifest: DatasetManifest,
    /// Directory that entry image paths are relative to.
    pub root: PathBuf,
    /// Number of ground-truth boxes clipped to their image bounds.
    pub clip_warnings: usize,
}

/// Parses and fully validates a manifest: schema version, label names,
/// image resolvability (every image's PNG header is read) and box bounds.
/// Out-of-bounds boxes are clipped and counted rather than rejected.
pub fn load_manifest(path: &Path) -> Result<ManifestLoad, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            location: Some(format!("line {} column {}", e.line(), e.column())),
            detail: e.to_string(),
        })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            location: Some("schema_version".into()),
            detail: format!(
                "unsupported schema version {} (expected {})",
                manifest.schema_version, MANIFEST_SCHEMA_VERSION
            ),
        });
    }
    if manifest.labels.is_empty() {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            location: Some("labels".into()),
            detail: "label set must not be empty".into(),
        });
    }
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let known: BTreeSet<&str> = manifest.labels.iter().map(String::as_str).collect();
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    let mut missing: Vec<PathBuf> = Vec::new();
    let mut clip_warnings = 0usize;

    for entry in &mut manifest.entries {
        let img_path = root.join(&entry.image);
        let dims = match png_io::png_dimensions(&img_path) {
            Ok(d) => Some(d),
            Err(DataError::Io { path, .. }) => {
                missing.push(path);
                None
            }
            Err(other) => return Err(other),
        };
        for b in &mut entry.boxes {
            if !known.contains(b.label.as_str()) {
                unknown.insert(b.label.clone());
            }
            if let Some((w, h)) = dims {
                let raw = BBox::from_corners(b.x_min, b.y_min, b.x_max, b.y_max);
                let clipped = clip_box(&raw, w as f64, h as f64);
                if clipped != raw
                    || b.x_min > b.x_max
                    || b.y_min > b.y_max
                {
                    clip_warnings += 1;
                }
                b.x_min = clipped.x_min;
                b.y_min = clipped.y_min;
                b.x_max = clipped.x_max;
                b.y_max = clipped.y_max;
            }
        }
    }
    if !missing.is_empty() {
        return Err(DataError::MissingImages { paths: missing });
    }
    if !unknown.is_empty() {
        return Err(DataError::UnknownLabels {
            names: unknown.into_iter().collect(),
            known: manifest.labels.clone(),
        });
    }
    Ok(ManifestLoad { manifest, root, clip_warnings })
}

/// Materializes every entry of a manifest into memory.
pub fn load_documents(
    manifest: &DatasetManifest,
    root: &Path,
) -> Result<Vec<AnnotatedDocument>, DataError> {
    let labels = manifest.label_set();
    manifest
        .entries
        .iter()
        .map(|entry| {
            let image = png_io::load_png(&root.join(&entry.image))?;
            let annotations = entry
                .boxes
                .iter()
                .map(|b| {
                    let label =
                        labels
                            .lookup(&b.label)
                            .ok_or_else(|| DataError::UnknownLabels {
                                names: vec![b.label.clone()],
                                known: manifest.labels.clone(),
                            })?;
                    Ok(Annotation {
                        bbox: BBox::from_corners(b.x_min, b.y_min, b.x_max, b.y_max),
                        label,
                    })
                })
                .collect::<Result<Vec<_>, DataError>>()?;
            Ok(AnnotatedDocument { id: entry.id.clone(), image, annotations })
        })
        .collect()
}

/// Deterministic shuffle-and-cut partition. The train side receives
/// round(n * train_fraction) entries; together the two sides are exactly
/// the input set.
pub fn split(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadSplitFraction(train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((manifest.entries.len() as f64) * train_fraction).round() as usize;

    let mut train = DatasetManifest {
        split: Some(Split::Train),
        entries: Vec::with_capacity(n_train),
        ..manifest.clone()
    };
    let mut test = DatasetManifest {
        split: Some(Split::Test),
        entries: Vec::with_capacity(manifest.entries.len() - n_train),
        ..manifest.clone()
    };
    train.entries.clear();
    test.entries.clear();
    for (rank, &idx) in order.iter().enumerate() {
        if rank < n_train {
            train.entries.push(manifest.entries[idx].clone());
        } else {
            test.entries.push(manifest.entries[idx].clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("docdet-data-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_white_png(path: &Path, w: u32, h: u32) {
        png_io::save_png(path, &DocumentImage::blank(w, h, [255, 255, 255])).unwrap();
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tmpdir("empty");
        let m = DatasetManifest::new("empty", &LabelSet::graphical());
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.manifest, m);
        assert_eq!(loaded.clip_warnings, 0);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let dir = tmpdir("roundtrip");
        write_white_png(&dir.join("a.png"), 100, 80);
        let mut m = DatasetManifest::new("rt", &LabelSet::graphical());
        m.split = Some(Split::Train);
        m.entries.push(ManifestEntry {
            id: "a".into(),
            image: "a.png".into(),
            boxes: vec![ManifestBox {
                label: "table".into(),
                x_min: 5.0,
                y_min: 6.0,
                x_max: 50.0,
                y_max: 40.0,
            }],
        });
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.manifest, m);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn out_of_bounds_box_is_clipped_with_warning() {
        let dir = tmpdir("clip");
        write_white_png(&dir.join("a.png"), 600, 600);
        let mut m = DatasetManifest::new("clip", &LabelSet::graphical());
        m.entries.push(ManifestEntry {
            id: "a".into(),
            image: "a.png".into(),
            boxes: vec![ManifestBox {
                label: "table".into(),
                x_min: -5.0,
                y_min: 0.0,
                x_max: 10.0,
                y_max: 10.0,
            }],
        });
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.clip_warnings, 1);
        let b = &loaded.manifest.entries[0].boxes[0];
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (0.0, 0.0, 10.0, 10.0));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn missing_image_listed_by_path() {
        let dir = tmpdir("missing");
        let mut m = DatasetManifest::new("missing", &LabelSet::graphical());
        m.entries.push(ManifestEntry {
            id: "gone".into(),
            image: "nowhere.png".into(),
            boxes: vec![],
        });
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        match load_manifest(&path) {
            Err(DataError::MissingImages { paths }) => {
                assert!(paths[0].ends_with("nowhere.png"));
            }
            other => panic!("expected MissingImages, got {other:?}"),
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn unknown_label_rejected_with_listing() {
        let dir = tmpdir("unknown");
        write_white_png(&dir.join("a.png"), 50, 50);
        let mut m = DatasetManifest::new("u", &LabelSet::graphical());
        m.entries.push(ManifestEntry {
            id: "a".into(),
            image: "a.png".into(),
            boxes: vec![ManifestBox {
                label: "chart".into(),
                x_min: 0.0,
                y_min: 0.0,
                x_max: 10.0,
                y_max: 10.0,
            }],
        });
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        match load_manifest(&path) {
            Err(DataError::UnknownLabels { names, .. }) => assert_eq!(names, vec!["chart"]),
            other => panic!("expected UnknownLabels, got {other:?}"),
        }
        std::fs::remove_dir_all(dir).ok();
    }

    fn manifest_with_n(n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("s", &LabelSet::graphical());
        for i in 0..n {
            m.entries.push(ManifestEntry {
                id: format!("e{i}"),
                image: format!("e{i}.png"),
                boxes: vec![],
            });
        }
        m
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = manifest_with_n(10);
        let (tr, te) = split(&m, 0.6, 99).unwrap();
        assert_eq!(tr.entries.len(), 6);
        assert_eq!(te.entries.len(), 4);
        assert_eq!(tr.split, Some(Split::Train));
        assert_eq!(te.split, Some(Split::Test));
        let (tr2, te2) = split(&m, 0.6, 99).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
    }

    #[test]
    fn split_is_a_partition() {
        let m = manifest_with_n(23);
        let (tr, te) = split(&m, 0.37, 5).unwrap();
        let mut ids: Vec<&str> = tr
            .entries
            .iter()
            .chain(te.entries.iter())
            .map(|e| e.id.as_str())
            .collect();
        ids.sort();
        let mut expect: Vec<String> = m.entries.iter().map(|e| e.id.clone()).collect();
        expect.sort();
        assert_eq!(ids, expect.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(split(&m, 0.0, 1).is_err());
        assert!(split(&m, 1.0, 1).is_err());
    }
}
