//! Binary PGM (P5) rasters. Depth images are stored as 16-bit big-endian
//! millimeters with maxval 65535; label images as 8-bit with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{DepthImage, LabelImage};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic number".into());
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err("expected a decimal header field".into());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|e| format!("header field {text:?}: {e}"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("header must end in a single whitespace byte".into()),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos,
    })
}

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode_depth(img: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    out.reserve(img.width() * img.height() * 2);
    for mm in img.to_millimeters() {
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    let h = parse_header(bytes).map_err(|r| format_err("depth PGM", path, r))?;
    if h.maxval < 256 {
        return Err(format_err("depth PGM", path, format!("expected 16-bit samples, maxval is {}", h.maxval)));
    }
    let n = h.width * h.height;
    let data = &bytes[h.data_start..];
    if data.len() < n * 2 {
        return Err(format_err(
            "depth PGM",
            path,
            format!("{} data bytes for {n} 16-bit samples", data.len()),
        ));
    }
    let mm: Vec<u16> = data[..n * 2]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    DepthImage::from_millimeters(h.width, h.height, &mm).map_err(|e| format_err("depth PGM", path, e.to_string()))
}

pub fn encode_labels(labels: &LabelImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelImage> {
    let h = parse_header(bytes).map_err(|r| format_err("label PGM", path, r))?;
    if h.maxval > 255 {
        return Err(format_err("label PGM", path, format!("expected 8-bit samples, maxval is {}", h.maxval)));
    }
    let n = h.width * h.height;
    let data = &bytes[h.data_start..];
    if data.len() < n {
        return Err(format_err("label PGM", path, format!("{} data bytes for {n} samples", data.len())));
    }
    LabelImage::new(h.width, h.height, data[..n].to_vec()).map_err(|e| format_err("label PGM", path, e.to_string()))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&bytes, path)
}

pub fn write_depth(path: impl AsRef<Path>, img: &DepthImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_depth(img)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes, path)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}
