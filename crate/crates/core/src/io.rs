//! File formats: `.pxi` images, `.pxp` probability volumes, `.mask` text
//! masks, plain PGM rasters, and small CSV helpers.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{PixcueError, Result};
use crate::forward_model::{ComplexImage, RealImage, SamplingMask};
use crate::quantizer::ClassProbabilityVolume;

const PXI_MAGIC: &[u8; 4] = b"PIXI";
const PXP_MAGIC: &[u8; 4] = b"PIXP";
pub const PXI_VERSION: u32 = 1;
pub const PXP_VERSION: u32 = 1;

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PixcueError::io(path, e))
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PixcueError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| PixcueError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PixcueError::io(path, e))
}

/// Contents of a `.pxi` file.
#[derive(Debug, Clone, PartialEq)]
pub enum PxiData {
    Real(RealImage),
    Complex(ComplexImage),
}

fn header(magic: &[u8; 4], version: u32, dims: &[u32]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&version.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn encode_pxi(data: &PxiData) -> Vec<u8> {
    match data {
        PxiData::Real(img) => {
            let mut out = header(PXI_MAGIC, PXI_VERSION, &[img.rows() as u32, img.cols() as u32]);
            out.push(0);
            for &v in img.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out
        }
        PxiData::Complex(img) => {
            let mut out = header(PXI_MAGIC, PXI_VERSION, &[img.rows() as u32, img.cols() as u32]);
            out.push(1);
            for v in img.values() {
                out.extend_from_slice(&(v.re as f32).to_le_bytes());
                out.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
            out
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.at..self.at + len)
            .ok_or_else(|| PixcueError::Format(format!("{} truncated at byte {}", self.what, self.at)))?;
        self.at += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * count)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(PixcueError::Format(format!("{} has trailing bytes", self.what)));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader, magic: &[u8; 4], version: u32) -> Result<()> {
    if r.take(4)? != magic {
        return Err(PixcueError::Format(format!("{}: bad magic bytes", r.what)));
    }
    let v = r.u32()?;
    if v != version {
        return Err(PixcueError::Format(format!("{}: unsupported version {v}", r.what)));
    }
    Ok(())
}

pub fn decode_pxi(bytes: &[u8]) -> Result<PxiData> {
    let mut r = Reader { bytes, at: 0, what: "pxi image" };
    check_magic(&mut r, PXI_MAGIC, PXI_VERSION)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let dtype = r.take(1)?[0];
    let out = match dtype {
        0 => PxiData::Real(RealImage::new(rows, cols, r.f32s(rows * cols)?)?),
        1 => {
            let v = r.f32s(2 * rows * cols)?;
            let values = v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
            PxiData::Complex(ComplexImage::new(rows, cols, values)?)
        }
        other => return Err(PixcueError::Format(format!("pxi image: unknown dtype {other}"))),
    };
    r.finish()?;
    Ok(out)
}

pub fn write_pxi(path: &Path, data: &PxiData) -> Result<()> {
    write_atomic(path, &encode_pxi(data))
}

pub fn read_pxi(path: &Path) -> Result<PxiData> {
    decode_pxi(&read_file(path)?)
}

pub fn read_real_pxi(path: &Path) -> Result<RealImage> {
    match read_pxi(path)? {
        PxiData::Real(img) => Ok(img),
        PxiData::Complex(_) => Err(PixcueError::Format(format!("{} holds complex data", path.display()))),
    }
}

pub fn read_complex_pxi(path: &Path) -> Result<ComplexImage> {
    match read_pxi(path)? {
        PxiData::Complex(img) => Ok(img),
        PxiData::Real(img) => Ok(ComplexImage::from_real(&img)),
    }
}

pub fn encode_pxp(v: &ClassProbabilityVolume) -> Vec<u8> {
    let mut out = header(
        PXP_MAGIC,
        PXP_VERSION,
        &[v.rows() as u32, v.cols() as u32, v.classes() as u32],
    );
    out.reserve(4 * v.probs().len());
    for &p in v.probs() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn decode_pxp(bytes: &[u8]) -> Result<ClassProbabilityVolume> {
    let mut r = Reader { bytes, at: 0, what: "pxp volume" };
    check_magic(&mut r, PXP_MAGIC, PXP_VERSION)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let probs = r.f32s(rows * cols * classes)?;
    r.finish()?;
    ClassProbabilityVolume::new(rows, cols, classes, probs)
}

pub fn write_pxp(path: &Path, v: &ClassProbabilityVolume) -> Result<()> {
    write_atomic(path, &encode_pxp(v))
}

pub fn read_pxp(path: &Path) -> Result<ClassProbabilityVolume> {
    decode_pxp(&read_file(path)?)
}

pub fn encode_mask(m: &SamplingMask) -> String {
    let lines: Vec<String> = m.sampled().iter().map(|i| i.to_string()).collect();
    format!("{}\n{}\n", m.n_lines(), lines.join(","))
}

pub fn decode_mask(text: &str) -> Result<SamplingMask> {
    let mut lines = text.lines();
    let n = lines
        .next()
        .and_then(|l| l.trim().parse::<usize>().ok())
        .ok_or_else(|| PixcueError::Format("mask file: first line must be the line count".into()))?;
    let indices = match lines.next().map(str::trim) {
        None | Some("") => Vec::new(),
        Some(l) => l
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| PixcueError::Format(format!("mask file: {e}")))?,
    };
    SamplingMask::new(n, indices)
}

pub fn write_mask(path: &Path, m: &SamplingMask) -> Result<()> {
    write_atomic(path, encode_mask(m).as_bytes())
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| PixcueError::Format("mask file is not UTF-8".into()))?;
    decode_mask(&text)
}

/// Min-max normalized plain (P2) 8-bit PGM. A constant image maps to 0.
pub fn encode_pgm(img: &RealImage) -> String {
    let (lo, hi) = (img.min(), img.max());
    let span = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", img.cols(), img.rows());
    for row in img.values().chunks(img.cols()) {
        let px: Vec<String> = row
            .iter()
            .map(|&v| {
                let level = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                (level as u8).to_string()
            })
            .collect();
        out.push_str(&px.join(" "));
        out.push('\n');
    }
    out
}

/// Minimal CSV writer; fields are written verbatim (no quoting needed for
/// the numeric and identifier columns this crate emits).
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
