//! Minimal binary PGM (P5, maxval 255) reader and writer.
//!
//! Used for 8-bit label maps and channel visualizations. Only the subset
//! of the format this toolkit produces is accepted: binary encoding, one
//! byte per pixel.

use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("not a binary PGM (expected magic \"P5\")")]
    BadMagic,
    #[error("malformed PGM header")]
    MalformedHeader,
    #[error("unsupported maxval {0} (only 255 is handled)")]
    UnsupportedMaxval(u32),
    #[error("PGM raster truncated")]
    Truncated,
    #[error("image dimensions must be positive")]
    ZeroDimension,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes a `width`×`height` byte raster as binary PGM.
pub fn write_pgm<W: Write>(
    width: u16,
    height: u16,
    data: &[u8],
    writer: &mut W,
) -> Result<(), PgmError> {
    if width == 0 || height == 0 {
        return Err(PgmError::ZeroDimension);
    }
    assert_eq!(
        data.len(),
        width as usize * height as usize,
        "raster length must match dimensions"
    );
    write!(writer, "P5\n{} {}\n255\n", width, height)?;
    writer.write_all(data)?;
    Ok(())
}

/// Reads a binary PGM, returning `(width, height, row-major bytes)`.
///
/// `#` comments inside the header are skipped; bytes after the raster are
/// ignored.
pub fn read_pgm<R: BufRead>(mut reader: R) -> Result<(u16, u16, Vec<u8>), PgmError> {
    let mut magic = [0u8; 2];
    reader.read_exact(&mut magic).map_err(|_| PgmError::BadMagic)?;
    if &magic != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let width = read_header_number(&mut reader)?;
    let height = read_header_number(&mut reader)?;
    let maxval = read_header_number(&mut reader)?;
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::ZeroDimension);
    }
    if width > u16::MAX as u32 || height > u16::MAX as u32 {
        return Err(PgmError::MalformedHeader);
    }
    let len = width as usize * height as usize;
    let mut data = vec![0u8; len];
    reader.read_exact(&mut data).map_err(|_| PgmError::Truncated)?;
    Ok((width as u16, height as u16, data))
}

/// Reads one decimal header token, skipping whitespace and `#` comments,
/// consuming exactly the single whitespace byte that terminates it.
fn read_header_number<R: BufRead>(reader: &mut R) -> Result<u32, PgmError> {
    let mut byte = [0u8; 1];
    // Skip whitespace and comments preceding the token.
    loop {
        reader.read_exact(&mut byte).map_err(|_| PgmError::MalformedHeader)?;
        match byte[0] {
            b' ' | b'\t' | b'\r' | b'\n' => continue,
            b'#' => {
                let mut skipped = Vec::new();
                reader.read_until(b'\n', &mut skipped)?;
            }
            b'0'..=b'9' => break,
            _ => return Err(PgmError::MalformedHeader),
        }
    }
    let mut value: u64 = (byte[0] - b'0') as u64;
    loop {
        if reader.read_exact(&mut byte).is_err() {
            return Err(PgmError::MalformedHeader);
        }
        match byte[0] {
            b'0'..=b'9' => {
                value = value * 10 + (byte[0] - b'0') as u64;
                if value > u32::MAX as u64 {
                    return Err(PgmError::MalformedHeader);
                }
            }
            b' ' | b'\t' | b'\r' | b'\n' => return Ok(value as u32),
            _ => return Err(PgmError::MalformedHeader),
        }
    }
}
