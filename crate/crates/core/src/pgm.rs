//! PGM image I/O: reads P2 (ASCII) and P5 (binary) with maxval up to 255,
//! writes P5. Pixel values map to [0,1] on read (v / maxval); export rounds
//! round(clamp(v,0,1)·255).

use crate::blend::GrayImage;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes)
}

/// Reads a PGM as a boolean mask: nonzero = true.
pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let img = read_pgm(path)?;
    Ok(img.pixels().iter().map(|v| *v != 0.0).collect())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let data: Vec<u8> = img
        .pixels()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&data)?;
    Ok(())
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cursor = std::io::Cursor::new(bytes);
    let magic = read_token(&mut cursor)?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(Error::Pgm(format!("unsupported magic `{other}`"))),
    };
    let width: usize = parse_number(&read_token(&mut cursor)?, "width")?;
    let height: usize = parse_number(&read_token(&mut cursor)?, "height")?;
    let maxval: usize = parse_number(&read_token(&mut cursor)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} outside 1..=255")));
    }
    let count = width * height;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let mut raw = vec![0u8; count];
        cursor
            .read_exact(&mut raw)
            .map_err(|_| Error::Pgm("truncated P5 raster".into()))?;
        pixels.extend(raw.iter().map(|b| *b as f64 / maxval as f64));
    } else {
        for _ in 0..count {
            let tok = read_token(&mut cursor)?;
            let v: usize = parse_number(&tok, "pixel")?;
            if v > maxval {
                return Err(Error::Pgm(format!("pixel {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64 / maxval as f64);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Next whitespace-delimited token, skipping `#` comments. For P5 the header
/// tokens are read this way and the raster starts right after the single
/// whitespace byte that terminates the maxval token.
fn read_token(cursor: &mut std::io::Cursor<&[u8]>) -> Result<String> {
    let mut tok = Vec::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        match cursor.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(e.into()),
        }
        let b = byte[0];
        if in_comment {
            if b == b'\n' {
                in_comment = false;
            }
            continue;
        }
        if b == b'#' {
            in_comment = true;
            continue;
        }
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b);
    }
    if tok.is_empty() {
        return Err(Error::Pgm("unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Pgm("non-ascii header token".into()))
}

fn parse_number(tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::Pgm(format!("bad {what}: `{tok}`")))
}
