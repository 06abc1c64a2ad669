//! Minimal 8-bit PGM (P2 / P5) reading and P5 writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{CellField, ImageGrid, NodalField};

/// How nodal values are mapped to 8-bit gray levels on output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveMode {
    /// `round(255 * clamp(v, 0, 1))`.
    Clamp,
    /// Affine map of `[min, max]` onto `[0, 255]`; a constant field becomes 128.
    Rescale,
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Decodes a PGM byte stream into a grid whose nodes are the image pixels.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token().ok_or(Error::Parse {
        field: "magic number",
        token: "<eof>".into(),
    })?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(Error::Format(format!(
                "magic number `{}` is not P2 or P5",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("max value")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "max value {maxval} is unsupported (only 8-bit images with max value 255)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Size(format!("image is {width}x{height}")));
    }
    let count = width * height;

    let raw: Vec<u8> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let end = start + count;
        if end > bytes.len() {
            return Err(Error::Parse {
                field: "raster",
                token: format!("<eof after {} of {count} bytes>", bytes.len().saturating_sub(start)),
            });
        }
        bytes[start..end].to_vec()
    } else {
        let mut raw = Vec::with_capacity(count);
        for _ in 0..count {
            let v = cur.number("pixel value")?;
            if v > 255 {
                return Err(Error::Parse {
                    field: "pixel value",
                    token: v.to_string(),
                });
            }
            raw.push(v as u8);
        }
        raw
    };

    let f = raw.iter().map(|&p| f64::from(p) / 255.0).collect();
    ImageGrid::new(width - 1, height - 1, f)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, field: &'static str) -> Result<usize> {
        let tok = self.token().ok_or(Error::Parse {
            field,
            token: "<eof>".into(),
        })?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                field,
                token: String::from_utf8_lossy(tok).into_owned(),
            })
    }
}

fn quantize(v: f64) -> u8 {
    // round half up; NaN maps to 0
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Converts nodal values to gray levels according to `mode`.
pub fn to_gray(values: &[f64], mode: SaveMode) -> Vec<u8> {
    match mode {
        SaveMode::Clamp => values.iter().map(|&v| quantize(v)).collect(),
        SaveMode::Rescale => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                values.iter().map(|&v| quantize((v - lo) / (hi - lo))).collect()
            } else {
                vec![128; values.len()]
            }
        }
    }
}

pub fn encode_p5(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Writes a nodal field as a binary PGM with one pixel per node.
pub fn save_pgm(field: &NodalField, path: impl AsRef<Path>, mode: SaveMode) -> Result<()> {
    let (nx, ny) = field.dims();
    let bytes = encode_p5(nx + 1, ny + 1, &to_gray(field.values(), mode));
    write(path.as_ref(), &bytes)
}

/// Writes a cell field as a binary PGM with one pixel per cell.
pub fn save_cell_pgm(field: &CellField, path: impl AsRef<Path>, mode: SaveMode) -> Result<()> {
    let (nx, ny) = field.dims();
    write(path.as_ref(), &encode_p5(nx, ny, &to_gray(field.values(), mode)))
}

/// Writes a 0/1 cell map as a black/white PGM with one pixel per cell.
pub fn save_mask_pgm(mask: &CellField, path: impl AsRef<Path>) -> Result<()> {
    let (nx, ny) = mask.dims();
    let pixels: Vec<u8> = mask
        .values()
        .iter()
        .map(|&m| if m > 0.5 { 255 } else { 0 })
        .collect();
    write(path.as_ref(), &encode_p5(nx, ny, &pixels))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
