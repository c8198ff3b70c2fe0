//! Binary PGM (P5) emission for saliency maps and mask ingestion.

use crate::error::NnError;
use crate::metrics::aggregate_channels;
use crate::tensor::Tensor;
use std::io::Read;
use std::path::Path;

type Result<T> = std::result::Result<T, NnError>;

/// Writes a 2-D map as an 8-bit binary PGM, min–max normalized so the
/// smallest value maps to 0 and the largest to 255. Multi-channel maps are
/// collapsed by channel aggregation first. A constant map renders as 0.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let flat = aggregate_channels(map)?;
    let (h, w) = (flat.shape[0], flat.shape[1]);
    let lo = flat.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = flat.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for v in &flat.data {
        let b = if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0u8
        };
        bytes.push(b);
    }
    std::fs::write(path, bytes).map_err(NnError::io(format!("writing {}", path.display())))
}

/// Reads a binary PGM as a 0/1 mask: pixels above 127 become 1.0.
pub fn read_pgm_mask(path: &Path) -> Result<Tensor> {
    let mut file =
        std::fs::File::open(path).map_err(NnError::io(format!("opening {}", path.display())))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(NnError::io(format!("reading {}", path.display())))?;
    let text_end = parse_pgm_header(&raw, path)?;
    let (w, h, start) = text_end;
    if raw.len() < start + w * h {
        return Err(NnError::TruncatedFile {
            path: path.display().to_string(),
        });
    }
    let data = raw[start..start + w * h]
        .iter()
        .map(|&b| if b > 127 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: vec![h, w],
        data,
    })
}

/// Parses the P5 header, returning (width, height, pixel offset).
fn parse_pgm_header(raw: &[u8], path: &Path) -> Result<(usize, usize, usize)> {
    let bad = || NnError::TruncatedFile {
        path: path.display().to_string(),
    };
    if raw.len() < 2 || &raw[0..2] != b"P5" {
        return Err(NnError::BadMagic {
            expected: "P5".to_string(),
            got: String::from_utf8_lossy(&raw[..raw.len().min(2)]).to_string(),
        });
    }
    // Read three whitespace-separated integers (width, height, maxval),
    // skipping '#' comment lines.
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && raw[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad());
        }
        let text = std::str::from_utf8(&raw[start..pos]).map_err(|_| bad())?;
        fields.push(text.parse::<usize>().map_err(|_| bad())?);
    }
    // Exactly one whitespace byte separates the header from the pixels.
    if pos >= raw.len() || !raw[pos].is_ascii_whitespace() {
        return Err(bad());
    }
    pos += 1;
    Ok((fields[0], fields[1], pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let map = Tensor {
            shape: vec![2, 3],
            data: vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
        };
        write_pgm(&path, &map).unwrap();
        let mask = read_pgm_mask(&path).unwrap();
        assert_eq!(mask.shape, vec![2, 3]);
        assert_eq!(mask.data, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        let map = Tensor {
            shape: vec![1, 4],
            data: vec![0.0, 0.25, 0.5, 1.0],
        };
        write_pgm(&path, &map).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P5\n4 1\n255\n"));
        let px = &raw[raw.len() - 4..];
        assert_eq!(px, &[0u8, 64, 128, 255]);
    }

    #[test]
    fn constant_map_renders_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let map = Tensor::filled(&[2, 2], 0.7);
        write_pgm(&path, &map).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[raw.len() - 4..], &[0u8, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        std::fs::write(&path, b"P2\n1 1\n255\n0").unwrap();
        match read_pgm_mask(&path) {
            Err(NnError::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }
}
