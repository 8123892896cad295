//! VOC-style per-image XML ground truth: importer and exporter.
//!
//! The importer accepts the usual `<annotation>` layout with `<object>`
//! blocks holding `<name>` and `<bndbox>`. VOC pixel coordinates are
//! 1-based inclusive; the canonical manifest is 0-based continuous, so
//! xmin maps to xmin-1 and xmax stays, making the conversion exact and
//! reversible.

use std::collections::BTreeSet;
use std::path::Path;

use super::{DataError, DatasetManifest, ManifestBox, ManifestEntry};
use crate::geometry::LabelSet;

fn parse_err(path: &Path, detail: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        location: None,
        detail: detail.into(),
    }
}

/// Extracts the inner text of every `<tag>...</tag>` block, in order.
fn tag_blocks<'a>(s: &'a str, tag: &str, path: &Path) -> Result<Vec<&'a str>, DataError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = s;
    loop {
        let Some(start) = rest.find(&open) else { break };
        let body = &rest[start + open.len()..];
        let Some(end) = body.find(&close) else {
            return Err(parse_err(path, format!("unterminated <{tag}> element")));
        };
        out.push(&body[..end]);
        rest = &body[end + close.len()..];
    }
    Ok(out)
}

fn tag_text<'a>(s: &'a str, tag: &str, path: &Path) -> Result<&'a str, DataError> {
    tag_blocks(s, tag, path)?
        .first()
        .copied()
        .map(str::trim)
        .ok_or_else(|| parse_err(path, format!("missing <{tag}> element")))
}

fn tag_number(s: &str, tag: &str, path: &Path) -> Result<f64, DataError> {
    let text = tag_text(s, tag, path)?;
    text.parse::<f64>()
        .map_err(|_| parse_err(path, format!("<{tag}> is not a number: {text:?}")))
}

/// Converts a directory of VOC XML files (one per image) into a canonical
/// manifest. Files are visited in name order so the result is stable.
/// Class names outside `labels` abort with a listing of the offenders.
pub fn import_voc_xml(dir: &Path, labels: &LabelSet) -> Result<DatasetManifest, DataError> {
    let mut xml_paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    xml_paths.sort();

    let mut manifest = DatasetManifest::new(
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "voc-import".into()),
        labels,
    );
    let mut unknown: BTreeSet<String> = BTreeSet::new();

    for path in &xml_paths {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let ann = tag_blocks(&text, "annotation", path)?;
        let ann = ann
            .first()
            .copied()
            .ok_or_else(|| parse_err(path, "missing <annotation> root"))?;
        let filename = tag_text(ann, "filename", path)?.to_string();
        let mut boxes = Vec::new();
        for obj in tag_blocks(ann, "object", path)? {
            let name = tag_text(obj, "name", path)?.to_string();
            if labels.lookup(&name).is_none() {
                unknown.insert(name.clone());
            }
            let bnd = tag_blocks(obj, "bndbox", path)?;
            let bnd = bnd
                .first()
                .copied()
                .ok_or_else(|| parse_err(path, "object without <bndbox>"))?;
            boxes.push(ManifestBox {
                label: name,
                x_min: tag_number(bnd, "xmin", path)? - 1.0,
                y_min: tag_number(bnd, "ymin", path)? - 1.0,
                x_max: tag_number(bnd, "xmax", path)?,
                y_max: tag_number(bnd, "ymax", path)?,
            });
        }
        let id = Path::new(&filename)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| filename.clone());
        manifest.entries.push(ManifestEntry { id, image: filename, boxes });
    }

    if !unknown.is_empty() {
        return Err(DataError::UnknownLabels {
            names: unknown.into_iter().collect(),
            known: labels.names().to_vec(),
        });
    }
    Ok(manifest)
}

/// Writes one VOC XML per manifest entry into `dir`, the inverse of
/// [`import_voc_xml`].
pub fn export_voc_xml(manifest: &DatasetManifest, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for entry in &manifest.entries {
        let mut xml = String::from("<annotation>\n");
        xml.push_str(&format!("  <filename>{}</filename>\n", entry.image));
        for b in &entry.boxes {
            xml.push_str("  <object>\n");
            xml.push_str(&format!("    <name>{}</name>\n", b.label));
            xml.push_str("    <bndbox>\n");
            xml.push_str(&format!("      <xmin>{}</xmin>\n", b.x_min + 1.0));
            xml.push_str(&format!("      <ymin>{}</ymin>\n", b.y_min + 1.0));
            xml.push_str(&format!("      <xmax>{}</xmax>\n", b.x_max));
            xml.push_str(&format!("      <ymax>{}</ymax>\n", b.y_max));
            xml.push_str("    </bndbox>\n");
            xml.push_str("  </object>\n");
        }
        xml.push_str("</annotation>\n");
        let path = dir.join(format!("{}.xml", entry.id));
        crate::write_atomic(&path, xml.as_bytes()).map_err(|e| DataError::io(&path, e))?;
    }
    Ok(())
}
