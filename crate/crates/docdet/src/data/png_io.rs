//! PNG read/write for 8-bit RGB document images.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{DataError, DocumentImage};

pub fn save_png(path: &Path, img: &DocumentImage) -> Result<(), DataError> {
    let tmp = path.with_extension("png.tmp");
    {
        let file = File::create(&tmp).map_err(|e| DataError::io(&tmp, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| DataError::Png { path: path.to_path_buf(), detail: e.to_string() })?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| DataError::Png { path: path.to_path_buf(), detail: e.to_string() })?;
    }
    std::fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

pub fn load_png(path: &Path) -> Result<DocumentImage, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| DataError::Png { path: path.to_path_buf(), detail: e.to_string() })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DataError::Png { path: path.to_path_buf(), detail: e.to_string() })?;
    buf.truncate(info.buffer_size());
    let (width, height) = (info.width, info.height);
    let n = width as usize * height as usize;

    let pixels = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => buf,
        (png::ColorType::Rgba, png::BitDepth::Eight) => {
            let mut rgb = Vec::with_capacity(n * 3);
            for px in buf.chunks_exact(4) {
                rgb.extend_from_slice(&px[..3]);
            }
            rgb
        }
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            let mut rgb = Vec::with_capacity(n * 3);
            for &g in &buf {
                rgb.extend_from_slice(&[g, g, g]);
            }
            rgb
        }
        (ct, bd) => {
            return Err(DataError::Png {
                path: path.to_path_buf(),
                detail: format!("unsupported color type {ct:?} / bit depth {bd:?}"),
            })
        }
    };
    Ok(DocumentImage { width, height, pixels })
}

/// Reads only the header, for cheap bounds validation.
pub fn png_dimensions(path: &Path) -> Result<(u32, u32), DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let reader = decoder
        .read_info()
        .map_err(|e| DataError::Png { path: path.to_path_buf(), detail: e.to_string() })?;
    let info = reader.info();
    Ok((info.width, info.height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let dir = std::env::temp_dir().join(format!("docdet-png-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = DocumentImage::blank(7, 5, [255, 255, 255]);
        img.set_pixel(3, 2, [10, 200, 30]);
        let path = dir.join("t.png");
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(png_dimensions(&path).unwrap(), (7, 5));
        std::fs::remove_dir_all(dir).ok();
    }
}
