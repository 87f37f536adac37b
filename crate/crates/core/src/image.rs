//! Grayscale pixel grids and binary PGM (P5) codec.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image. The `u8` storage keeps every pixel in
/// `[0, 255]` by construction.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel values as reals, in pixel units.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    /// Largest absolute per-pixel difference.
    pub fn linf_distance(&self, other: &GrayImage) -> u8 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }

    /// Number of pixels that differ.
    pub fn change_count(&self, other: &GrayImage) -> usize {
        self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a != b).count()
    }
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_header_int(bytes: &[u8], pos: usize, what: &str) -> Result<(u32, usize)> {
    let start = skip_ws_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::MalformedPgm(format!("missing {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<u32>()
        .map_err(|_| Error::MalformedPgm(format!("{what} out of range: {text}")))?;
    Ok((value, end))
}

/// Decodes a binary PGM (P5, maxval 255).
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedPgm("missing P5 magic".into()));
    }
    let (width, pos) = read_header_int(bytes, 2, "width")?;
    let (height, pos) = read_header_int(bytes, pos, "height")?;
    let (maxval, pos) = read_header_int(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedPgm("zero dimension".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedPgm("missing separator after maxval".into()));
    }
    let data = &bytes[pos + 1..];
    let expected = width as usize * height as usize;
    if data.len() < expected {
        return Err(Error::Truncated { expected, found: data.len() });
    }
    GrayImage::new(width as usize, height as usize, data[..expected].to_vec())
}

/// Canonical P5 encoding: `P5 <w> <h> 255\n` followed by the raw raster.
pub fn save_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5 {} {} 255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm_file(path: &Path) -> Result<GrayImage> {
    load_pgm(&fs::read(path)?)
}

pub fn write_pgm_file(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, save_pgm(img))?;
    Ok(())
}

/// Lists the `.pgm` files of a directory in lexicographic order, which
/// defines dataset order.
pub fn list_pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `.pgm` in `dir`, lexicographically ordered, paired with its file stem.
pub fn load_pgm_dir(dir: &Path) -> Result<Vec<(String, GrayImage)>> {
    list_pgm_files(dir)?
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            read_pgm_file(&p).map(|img| (id, img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_simple_header() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 7]);
        let img = load_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels(), &[0, 128, 255, 7]);
        assert_eq!(save_pgm(&img), bytes);
    }

    #[test]
    fn canonical_one_pixel() {
        let img = GrayImage::filled(1, 1, 0);
        assert_eq!(save_pgm(&img), b"P5 1 1 255\n\x00".to_vec());
    }

    #[test]
    fn saturated_payload() {
        let img = GrayImage::filled(3, 2, 255);
        let bytes = save_pgm(&img);
        assert!(bytes[bytes.len() - 6..].iter().all(|&b| b == 0xFF));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = b"P5 4 4 255\n".to_vec();
        bytes.extend_from_slice(&[1u8; 15]);
        assert!(matches!(load_pgm(&bytes), Err(Error::Truncated { expected: 16, found: 15 })));
    }

    #[test]
    fn rejects_other_maxval_and_magic() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(load_pgm(&bytes), Err(Error::UnsupportedMaxval(65535))));
        assert!(matches!(load_pgm(b"P2 1 1 255\n0"), Err(Error::MalformedPgm(_))));
        assert!(matches!(load_pgm(b"P5 1"), Err(Error::MalformedPgm(_))));
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 10]);
        let img = load_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[9, 10]);
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut state = seed;
            let img = GrayImage::from_fn(w, h, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 56) as u8
            });
            let bytes = save_pgm(&img);
            let back = load_pgm(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(save_pgm(&back), bytes);
        }
    }
}
