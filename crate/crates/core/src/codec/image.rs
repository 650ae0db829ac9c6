//! 8-bit images and binary PGM (P5) I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit image, samples row-major per channel (plane after plane).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            samples: vec![0; width * height * channels],
        }
    }

    pub fn from_samples(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<u8>,
    ) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(Error::shape(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Grayscale shorthand.
    pub fn gray(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        Image::from_samples(width, height, 1, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        &self.samples[c * self.width * self.height..(c + 1) * self.width * self.height]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> u8 {
        self.samples[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.samples[(c * self.height + y) * self.width + x] = v;
    }
}

/// Reads a binary PGM (P5, maxval 255). Errors name the offending file.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    parse_pgm(&bytes).map_err(|msg| Error::Ingest {
        path: path.to_path_buf(),
        msg,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let magic = take_token(bytes, &mut pos).ok_or("missing magic")?;
    if magic != b"P5" {
        return Err(format!(
            "not a binary PGM (magic {:?})",
            String::from_utf8_lossy(magic)
        ));
    }
    let width: usize = parse_token(bytes, &mut pos, "width")?;
    let height: usize = parse_token(bytes, &mut pos, "height")?;
    let maxval: usize = parse_token(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".to_string());
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!(
            "truncated raster: need {need} bytes, found {}",
            raster.len()
        ));
    }
    Image::gray(width, height, raster[..need].to_vec()).map_err(|e| e.to_string())
}

/// Next whitespace-delimited token, skipping `#` comment lines.
fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn parse_token(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, String> {
    let tok = take_token(bytes, pos).ok_or_else(|| format!("missing {what}"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad {what}: {:?}", String::from_utf8_lossy(tok)))
}

/// Writes a single-channel image as binary PGM.
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::param(format!(
            "PGM output requires 1 channel, image has {}",
            img.channels()
        )));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())?;
    f.write_all(img.samples())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = Image::gray(3, 2, vec![0, 128, 255, 7, 8, 9]).unwrap();
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn pgm_with_comments_parses() {
        let data = b"P5\n# a comment\n2 2\n# another\n255\nabcd";
        let img = parse_pgm(data).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.samples(), b"abcd");
    }

    #[test]
    fn truncated_pgm_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        fs::write(&path, b"P5\n4 4\n255\nxy").unwrap();
        match read_pgm(&path) {
            Err(Error::Ingest { path: p, msg }) => {
                assert!(p.ends_with("short.pgm"));
                assert!(msg.contains("truncated"));
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn ascii_pgm_is_rejected() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn multi_channel_pgm_write_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 2, 3);
        assert!(write_pgm(&img, &dir.path().join("x.pgm")).is_err());
    }
}
