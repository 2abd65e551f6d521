//! File formats: raw volumes with a JSON sidecar, PNG frames, transfer
//! functions and JSON-lines trajectories.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mrvol_core::{Aabb, Frame, PointOfView, ScalarVolume, TransferFunction};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub bounds: Aabb,
    pub value_range: [f32; 2],
}

/// Sidecar path for a raw volume: `vol.raw -> vol.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Writes headerless little-endian f32 samples (x fastest) and the sidecar.
pub fn write_raw(path: &Path, volume: &ScalarVolume) -> Result<()> {
    fs::write(path, volume.to_le_bytes()).map_err(Error::io(path))?;
    let (lo, hi) = volume.value_range();
    let meta = VolumeMeta { dims: volume.dims(), bounds: *volume.bounds(), value_range: [lo, hi] };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_raw(path: &Path, dims: [usize; 3], bounds: Aabb) -> Result<ScalarVolume> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(ScalarVolume::from_le_bytes(dims, bounds, &bytes)?)
}

/// Reads a raw volume whose dims and bounds come from its sidecar.
pub fn read_raw_with_sidecar(path: &Path) -> Result<ScalarVolume> {
    let meta: VolumeMeta = read_json(&sidecar_path(path))?;
    read_raw(path, meta.dims, meta.bounds)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

pub fn read_tf(path: &Path) -> Result<TransferFunction> {
    read_json(path)
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(&frame.rgba).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("expected 8-bit RGBA, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame::new(info.width, info.height, buf)?)
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_png(frame)?).map_err(Error::io(path))
}

pub fn read_png(path: &Path) -> Result<Frame> {
    decode_png(&fs::read(path).map_err(Error::io(path))?)
}

/// One trajectory line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PovRecord {
    pub pos: [f64; 3],
    pub dir: [f64; 3],
    pub up: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov: Option<f64>,
}

pub const DEFAULT_FOV: f64 = 45.0;

impl PovRecord {
    pub fn to_pov(&self) -> mrvol_core::Result<PointOfView> {
        PointOfView::new(self.pos, self.dir, self.up, self.fov.unwrap_or(DEFAULT_FOV))
    }
}

impl From<&PointOfView> for PovRecord {
    fn from(p: &PointOfView) -> Self {
        PovRecord { pos: p.position, dir: p.direction, up: p.up, fov: Some(p.fov_y) }
    }
}

pub fn parse_trajectory(text: &str) -> std::result::Result<Vec<PointOfView>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec: PovRecord = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        out.push(rec.to_pov().map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<PointOfView>> {
    let f = fs::File::open(path).map_err(Error::io(path))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(Error::io(path))?);
        text.push('\n');
    }
    parse_trajectory(&text).map_err(|m| Error::Core(mrvol_core::Error::Format(format!("{}: {m}", path.display()))))
}

pub fn write_trajectory(path: &Path, povs: &[PointOfView]) -> Result<()> {
    let f = fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    for p in povs {
        let line = serde_json::to_string(&PovRecord::from(p)).map_err(Error::json(path))?;
        writeln!(w, "{line}").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}
