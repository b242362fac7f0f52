//! File formats.
//!
//! `EVT1` (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `EVT1` |
//! | 4     | `u32` width |
//! | 4     | `u32` height |
//! | 8     | `u64` event count |
//! | 14 each | `u16` x, `u16` y, `u64` t (µs), `i8` p, `i8` padding (0) |
//!
//! `VOX1` (little-endian): magic, `u32` bins, `u32` height, `u32` width,
//! `u64` window start and end (µs), `u32` scale, then `bins * height * width`
//! `f64` values, bin-major.
//!
//! CSV files carry a header line `x,y,t,p`. Frames and label maps are 8-bit
//! binary PGM (`P5`); label pixels are raw class indices.

use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{check_event, Event, EventStream, VoxelGrid};
use crate::error::{Error, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
pub const VOX1_MAGIC: &[u8; 4] = b"VOX1";
const VOX1_HEADER_LEN: usize = 36;
const HEADER_LEN: usize = 20;
const RECORD_LEN: usize = 14;

pub fn encode_evt1(stream: &EventStream) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    buf.extend_from_slice(EVT1_MAGIC);
    buf.extend_from_slice(&stream.width().to_le_bytes());
    buf.extend_from_slice(&stream.height().to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.push(e.p as u8);
        buf.push(0);
    }
    buf
}

pub fn decode_evt1(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 4 || &bytes[..4] != EVT1_MAGIC {
        return Err(Error::Format("missing EVT1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated EVT1 header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let available = body.len() / RECORD_LEN;
    if (available as u64) < count {
        return Err(Error::EventRecord {
            index: available,
            reason: format!("truncated record (header declares {count} events)"),
        });
    }
    let count = count as usize;
    if body.len() != count * RECORD_LEN {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            body.len() - count * RECORD_LEN
        )));
    }
    let mut events = Vec::with_capacity(count);
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let e = Event {
            x: u16::from_le_bytes([rec[0], rec[1]]),
            y: u16::from_le_bytes([rec[2], rec[3]]),
            t: u64::from_le_bytes(rec[4..12].try_into().unwrap()),
            p: rec[12] as i8,
        };
        if rec[13] != 0 {
            return Err(Error::EventRecord {
                index,
                reason: "non-zero padding byte".into(),
            });
        }
        check_event(&e, width, height, index)?;
        events.push(e);
    }
    EventStream::new(width, height, events)
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        return write_events_csv(stream, path);
    }
    fs::write(path, encode_evt1(stream)).map_err(|e| Error::io(path, e))
}

/// Reads an EVT1 file, or a CSV file when the extension is `.csv` (geometry is
/// then inferred from the largest coordinates).
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    if is_csv(path) {
        return read_events_csv(path, None);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_evt1(&bytes)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_events_csv(stream: &EventStream, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "t", "p"])?;
    for e in stream.events() {
        w.write_record([e.x.to_string(), e.y.to_string(), e.t.to_string(), e.p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `x,y,t,p` rows. With `geometry = None` the sensor size is inferred
/// as one past the largest coordinate seen.
pub fn read_events_csv(path: &Path, geometry: Option<(u32, u32)>) -> Result<EventStream> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().map(str::trim).ne(["x", "y", "t", "p"]) {
        return Err(Error::Format(format!("CSV header must be x,y,t,p, got {headers:?}")));
    }
    let mut events = Vec::new();
    for (index, row) in r.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let bad = |what: &str| Error::EventRecord {
            index,
            reason: format!("unparseable {what}"),
        };
        events.push(Event {
            x: field(0).parse().map_err(|_| bad("x"))?,
            y: field(1).parse().map_err(|_| bad("y"))?,
            t: field(2).parse().map_err(|_| bad("t"))?,
            p: field(3).parse().map_err(|_| bad("p"))?,
        });
    }
    let (width, height) = geometry.unwrap_or_else(|| {
        let w = events.iter().map(|e| e.x as u32 + 1).max().unwrap_or(1);
        let h = events.iter().map(|e| e.y as u32 + 1).max().unwrap_or(1);
        (w, h)
    });
    EventStream::new(width, height, events)
}

pub fn write_pgm(path: impl AsRef<Path>, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    write_pnm(path.as_ref(), width, height, pixels, ExtendedColorType::L8, PnmSubtype::Graymap(SampleEncoding::Binary))
}

pub fn write_ppm(path: impl AsRef<Path>, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    write_pnm(path.as_ref(), width, height, rgb, ExtendedColorType::Rgb8, PnmSubtype::Pixmap(SampleEncoding::Binary))
}

fn write_pnm(
    path: &Path,
    width: u32,
    height: u32,
    pixels: &[u8],
    color: ExtendedColorType,
    subtype: PnmSubtype,
) -> Result<()> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(pixels, width, height, color)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit grayscale PGM as `(width, height, pixels)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Format(format!(
                "{}: expected 8-bit grayscale PGM, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((gray.width(), gray.height(), gray.into_raw()))
}

pub fn encode_vox1(v: &VoxelGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(VOX1_HEADER_LEN + 8 * v.data.len());
    buf.extend_from_slice(VOX1_MAGIC);
    for d in [v.bins, v.height, v.width] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&v.t_start.to_le_bytes());
    buf.extend_from_slice(&v.t_end.to_le_bytes());
    buf.extend_from_slice(&(v.scale as u32).to_le_bytes());
    for x in &v.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_vox1(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.len() < 4 || &bytes[..4] != VOX1_MAGIC {
        return Err(Error::Format("missing VOX1 magic".into()));
    }
    if bytes.len() < VOX1_HEADER_LEN {
        return Err(Error::Format("truncated VOX1 header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (bins, height, width) = (u32_at(4), u32_at(8), u32_at(12));
    let body = &bytes[VOX1_HEADER_LEN..];
    let n = bins
        .checked_mul(height)
        .and_then(|x| x.checked_mul(width))
        .ok_or_else(|| Error::Format("VOX1 dimensions overflow".into()))?;
    if body.len() != n * 8 {
        return Err(Error::Format(format!(
            "VOX1 body holds {} bytes, {bins}x{height}x{width} needs {}",
            body.len(),
            n * 8
        )));
    }
    Ok(VoxelGrid {
        bins,
        height,
        width,
        t_start: u64_at(16),
        t_end: u64_at(24),
        scale: u32_at(32),
        data: body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

pub fn write_voxel(v: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_vox1(v)).map_err(|e| Error::io(path, e))
}

pub fn read_voxel(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    decode_vox1(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
