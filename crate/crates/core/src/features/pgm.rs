use std::path::Path;

use crate::error::{Error, Result};

/// Minimum image side accepted by [`GrayImage::new`].
pub const MIN_IMAGE_SIDE: usize = 16;

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {width}x{height}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel ({}, {})", p / width, p % width)));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(height, width, (0..height * width).map(|p| f(p / width, p % width)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// Pixels at or above 0.5 as `true`.
    pub fn binarize(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v >= 0.5).collect()
    }
}

struct Header {
    binary: bool,
    width: usize,
    height: usize,
    maxval: u32,
    payload_start: usize,
}

fn parse_header(bytes: &[u8], origin: &str) -> Result<Header> {
    let mut pos = 0;
    let mut line = 1;
    let perr = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let next_token = |pos: &mut usize, line: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                if bytes[*pos] == b'\n' {
                    *line += 1;
                }
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
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos, &mut line).ok_or_else(|| perr(1, "empty file".into()))?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(perr(line, format!("unsupported magic {other:?}, expected P2 or P5"))),
    };
    let mut field = |name: &str| -> Result<u32> {
        let tok = next_token(&mut pos, &mut line).ok_or_else(|| perr(line, format!("missing {name}")))?;
        tok.parse::<u32>().map_err(|_| perr(line, format!("bad {name} {tok:?}")))
    };
    let width = field("width")? as usize;
    let height = field("height")? as usize;
    let maxval = field("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(perr(line, format!("maxval {maxval} out of range 1..=65535")));
    }
    // exactly one whitespace byte separates the header from a binary payload
    if pos >= bytes.len() && binary {
        return Err(perr(line, "missing payload".into()));
    }
    Ok(Header { binary, width, height, maxval, payload_start: (pos + 1).min(bytes.len()) })
}

/// Decodes a P2 or P5 graymap.
pub fn decode_pgm(bytes: &[u8], origin: &str) -> Result<GrayImage> {
    let h = parse_header(bytes, origin)?;
    let n = h.width * h.height;
    let scale = h.maxval as f64;
    let perr = |msg: String| Error::Parse { path: origin.to_string(), line: 0, msg };
    let values: Vec<f64> = if h.binary {
        let payload = &bytes[h.payload_start..];
        let bpp = if h.maxval < 256 { 1 } else { 2 };
        if payload.len() != n * bpp {
            return Err(perr(format!("payload has {} bytes, expected {}", payload.len(), n * bpp)));
        }
        if bpp == 1 {
            payload.iter().map(|&b| b as f64 / scale).collect()
        } else {
            payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
        }
    } else {
        let text = String::from_utf8_lossy(&bytes[h.payload_start..]);
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| perr(format!("bad sample {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n {
            return Err(perr(format!("found {} samples, expected {n}", vals.len())));
        }
        vals.into_iter().map(|v| v as f64 / scale).collect()
    };
    if values.iter().any(|&v| v > 1.0) {
        return Err(perr(format!("sample exceeds maxval {}", h.maxval)));
    }
    GrayImage::new(h.height, h.width, values)
}

/// Encodes as binary P5 with maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
