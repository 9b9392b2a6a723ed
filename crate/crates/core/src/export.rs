//! Viewable 8-bit grayscale output: PGM (P5), PNG and image montages.
//!
//! Magnitudes are windowed from the minimum to the maximum occurring value.
//! A constant image has no window and is written mid-gray.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};

use crate::container::write_image;
use crate::data::Image;
use crate::{Error, Result};

pub const MID_GRAY: u8 = 128;

/// Min→max window onto `0..=255`.
pub fn to_gray8(values: ArrayView2<f64>) -> Array2<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = hi - lo;
    if !(width > 0.0) || !width.is_finite() {
        return Array2::from_elem(values.raw_dim(), MID_GRAY);
    }
    values.mapv(|v| ((v - lo) / width * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn io_err(path: &Path, e: impl ToString) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_pgm(path: &Path, gray: ArrayView2<u8>) -> Result<()> {
    let (rows, cols) = gray.dim();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{cols} {rows}\n255\n").map_err(|e| io_err(path, e))?;
    let bytes: Vec<u8> = gray.iter().copied().collect();
    w.write_all(&bytes).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads back a binary PGM written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(io_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|e| io_err(path, e));
    if fields[0] != "P5" || parse(&fields[3])? != 255 {
        return Err(io_err(path, "not an 8-bit binary PGM"));
    }
    let (cols, rows) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..pos + rows * cols).ok_or_else(|| io_err(path, "truncated PGM data"))?;
    Array2::from_shape_vec((rows, cols), data.to_vec()).map_err(|e| io_err(path, e))
}

pub fn write_png(path: &Path, gray: ArrayView2<u8>) -> Result<()> {
    let (rows, cols) = gray.dim();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), cols as u32, rows as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| io_err(path, e))?;
    let bytes: Vec<u8> = gray.iter().copied().collect();
    writer.write_image_data(&bytes).map_err(|e| io_err(path, e))?;
    writer.finish().map_err(|e| io_err(path, e))
}

/// Which viewable files accompany the full-precision container.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExportFormats {
    pub png: bool,
    pub pgm: bool,
}

impl Default for ExportFormats {
    fn default() -> Self {
        Self { png: true, pgm: true }
    }
}

/// Writes `<stem>.h5` (complex, full precision) plus the grayscale
/// magnitude as `<stem>.pgm` and `<stem>.png`. Returns the paths written.
pub fn write_image_files(image: &Image, stem: &Path, formats: ExportFormats) -> Result<Vec<PathBuf>> {
    if !image.is_finite() {
        return Err(Error::Range(format!(
            "{}: image has non-finite pixels",
            stem.display()
        )));
    }
    let with_ext = |ext: &str| {
        let mut p = stem.as_os_str().to_owned();
        p.push(".");
        p.push(ext);
        PathBuf::from(p)
    };
    let mut written = vec![with_ext("h5")];
    write_image(&written[0], image)?;
    let gray = to_gray8(image.magnitude().view());
    if formats.pgm {
        let p = with_ext("pgm");
        write_pgm(&p, gray.view())?;
        written.push(p);
    }
    if formats.png {
        let p = with_ext("png");
        write_png(&p, gray.view())?;
        written.push(p);
    }
    Ok(written)
}

/// Tiles magnitude images row-major into a grid with `columns` tiles per
/// row. Each tile is windowed on its own; empty slots and the one-pixel
/// gutters are black.
pub fn montage(images: &[ArrayView2<f64>], columns: usize) -> Result<Array2<u8>> {
    if images.is_empty() || columns == 0 {
        return Err(Error::Parameter("montage needs at least one image and column".into()));
    }
    let (h, w) = images[0].dim();
    if images.iter().any(|im| im.dim() != (h, w)) {
        return Err(Error::Shape("montage tiles differ in size".into()));
    }
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let gutter = 1;
    let mut out = Array2::zeros((rows * (h + gutter) - gutter, cols * (w + gutter) - gutter));
    for (i, im) in images.iter().enumerate() {
        let (r0, c0) = ((i / cols) * (h + gutter), (i % cols) * (w + gutter));
        out.slice_mut(s![r0..r0 + h, c0..c0 + w]).assign(&to_gray8(im.view()));
    }
    Ok(out)
}
