//! Binary 8-bit PPM (P6) and PGM (P5).

use std::path::Path;

use crate::error::{DlgError, Result};
use crate::tensor::{Scalar, Tensor};

fn quantize(v: Scalar) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode a `[C,H,W]` tensor with `C` 3 (P6) or 1 (P5).
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || (s[0] != 3 && s[0] != 1) {
        return Err(DlgError::shape(format!(
            "PNM images must be [3,H,W] or [1,H,W], got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    let data = image.data();
    for i in 0..h * w {
        for ch in 0..c {
            out.push(quantize(data[ch * h * w + i]));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> DlgError {
        DlgError::Parse {
            what: "pnm".into(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DlgError::Parse {
                what: "pnm".into(),
                offset: start,
                msg: "number out of range".into(),
            })
    }
}

/// Decode P6 into `[3,H,W]` or P5 into `[1,H,W]`, values in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(cur.err("bad magic, expected P5 or P6")),
    };
    cur.pos = 2;
    let w = cur.number()?;
    let h = cur.number()?;
    let maxval = cur.number()?;
    if w == 0 || h == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(cur.err(format!("only maxval 255 is supported, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected a single whitespace before the raster")),
    }
    let need = channels * h * w;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        cur.pos = bytes.len();
        return Err(cur.err(format!(
            "truncated raster: need {need} bytes, have {}",
            raster.len()
        )));
    }
    let mut data = vec![0.0 as Scalar; need];
    for i in 0..h * w {
        for ch in 0..channels {
            data[ch * h * w + i] = raster[i * channels + ch] as Scalar / 255.0;
        }
    }
    Tensor::new(&[channels, h, w], data)
}

pub fn write(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode(image)?).map_err(|e| DlgError::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| DlgError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        DlgError::Parse { offset, msg, .. } => DlgError::Parse {
            what: path.display().to_string(),
            offset,
            msg,
        },
        other => other,
    })
}
