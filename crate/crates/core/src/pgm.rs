//! Binary PGM (P5, 8-bit) reading and writing, plus plain-text stack
//! manifests listing one PGM path per line in temporal order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, ImageStack};

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Parses a P5 byte buffer. Grid dims are `[height, width]` with unit spacing.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(Error::MalformedHeader("file too short".into()));
    }
    if &bytes[..2] != b"P5" {
        return Err(Error::UnsupportedFormat(format!(
            "magic {:?}, expected \"P5\"",
            String::from_utf8_lossy(&bytes[..2])
        )));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        *field = next_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    if width < 1 || height < 1 {
        return Err(Error::MalformedHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = w * h;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let grid = Grid::with_dims(&[h, w])?;
    let values = payload[..expected].iter().map(|&b| f64::from(b)).collect();
    Image::new(grid, values)
}

fn next_header_number(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::MalformedHeader("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader(format!(
            "expected a decimal number at byte {start}"
        )));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader("header number out of range".into()))
}

/// Intensity clamped to `[0, 255]` and rounded half-up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor() as u8
}

/// Encodes a 2D image as P5. Values are clamped and rounded.
pub fn encode_pgm(image: &Image) -> Result<Vec<u8>> {
    let dims = image.grid().dims();
    if dims.len() != 2 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM needs a 2D image, got {} dimensions",
            dims.len()
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", dims[1], dims[0]).into_bytes();
    out.extend(image.values().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn save_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Paths listed in a manifest. Relative entries resolve against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn load_stack(manifest: impl AsRef<Path>) -> Result<ImageStack> {
    let frames = read_manifest(manifest)?
        .iter()
        .map(load_pgm)
        .collect::<Result<Vec<_>>>()?;
    ImageStack::new(frames)
}

/// Writes `entries` (as given) one per line.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[PathBuf]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_string_lossy());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p5(w: u32, h: u32, maxval: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn decodes_bytes_in_order() {
        let img = decode_pgm(&p5(2, 2, 255, &[0, 64, 128, 255])).unwrap();
        assert_eq!(img.values(), &[0.0, 64.0, 128.0, 255.0]);
        assert_eq!(img.grid().spacing(), &[1.0, 1.0]);
    }

    #[test]
    fn width_is_the_fast_axis() {
        let img = decode_pgm(&p5(3, 2, 255, &[1, 2, 3, 4, 5, 6])).unwrap();
        assert_eq!(img.grid().dims(), &[2, 3]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut b = b"P5 # made by hand\n2 # width\n1\n255\n".to_vec();
        b.extend_from_slice(&[9, 10]);
        assert_eq!(decode_pgm(&b).unwrap().values(), &[9.0, 10.0]);
    }

    #[test]
    fn rejects_wide_maxval() {
        let err = decode_pgm(&p5(1, 1, 65535, &[0, 0])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedMaxval(65535)));
        assert!(err.to_string().contains("unsupported maxval"));
    }

    #[test]
    fn rejects_ascii_pgm() {
        let err = decode_pgm(b"P2\n1 1\n255\n0\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
        assert!(err.to_string().contains("unsupported format"));
    }

    #[test]
    fn rejects_truncated_and_malformed() {
        assert!(matches!(
            decode_pgm(&p5(2, 2, 255, &[1, 2, 3])).unwrap_err(),
            Error::TruncatedPayload {
                expected: 4,
                found: 3
            }
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 x\n255\n").unwrap_err(),
            Error::MalformedHeader(_)
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 2").unwrap_err(),
            Error::MalformedHeader(_)
        ));
    }

    #[test]
    fn encode_clamps_and_rounds_half_up() {
        let g = Grid::with_dims(&[2, 2]).unwrap();
        let img = Image::new(g, vec![-3.2, 12.6, 300.0, 255.0]).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 13, 255, 255]);
        assert_eq!(quantize(127.4), 127);
        assert_eq!(quantize(127.5), 128);
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::with_dims(&[3, 5]).unwrap();
        let img = Image::new(g, (0..15).map(|i| (i * 17) as f64).collect()).unwrap();
        let p = dir.path().join("a.pgm");
        save_pgm(&img, &p).unwrap();
        assert_eq!(load_pgm(&p).unwrap(), img);
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::with_dims(&[2, 2]).unwrap();
        for (i, name) in ["f0.pgm", "f1.pgm"].iter().enumerate() {
            let img = Image::new(g.clone(), vec![i as f64; 4]).unwrap();
            save_pgm(&img, dir.path().join(name)).unwrap();
        }
        let m = dir.path().join("stack.txt");
        std::fs::write(&m, "# frames\nf0.pgm\n\nf1.pgm\n").unwrap();
        let stack = load_stack(&m).unwrap();
        assert_eq!(stack.len(), 2);
        assert_eq!(stack.frames()[1].values(), &[1.0; 4]);
    }
}
