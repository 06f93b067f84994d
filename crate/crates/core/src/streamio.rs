//! Event stream codecs and event-frame accumulation.
//!
//! Binary layout (all little-endian), 24-byte header:
//!
//! | offset | size | field                  |
//! |--------|------|------------------------|
//! | 0      | 4    | magic `EREV`           |
//! | 4      | 2    | version (1)            |
//! | 6      | 2    | width                  |
//! | 8      | 2    | height                 |
//! | 10     | 6    | reserved, zero         |
//! | 16     | 8    | event count            |
//!
//! followed by one 16-byte record per event: `t_us: u64`, `x: u16`,
//! `y: u16`, `polarity: i8`, three zero pad bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};

pub const EREV_MAGIC: &[u8; 4] = b"EREV";
pub const EREV_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const RECORD_LEN: usize = 16;
pub const CSV_HEADER: &str = "t_us,x,y,p";

pub fn write_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 * (stream.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in &stream.events {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.polarity.as_i8());
    }
    out
}

/// Parses CSV produced by [`write_csv`]. The text carries no dimensions, so
/// the caller supplies them and every event is bounds-checked.
pub fn read_csv(text: &str, width: usize, height: usize) -> Result<EventStream> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse {
            line: line_no,
            reason: format!("{what} in `{line}`"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let t = f[0].trim().parse::<u64>().map_err(|_| bad("bad t_us"))?;
        let x = f[1].trim().parse::<u16>().map_err(|_| bad("bad x"))?;
        let y = f[2].trim().parse::<u16>().map_err(|_| bad("bad y"))?;
        let p = f[3]
            .trim()
            .parse::<i8>()
            .ok()
            .and_then(Polarity::from_i8)
            .ok_or_else(|| bad("bad polarity"))?;
        if x as usize >= width || y as usize >= height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (x as usize + 1, y as usize + 1),
            });
        }
        events.push(Event::new(t, x, y, p));
    }
    Ok(EventStream::new(width, height, events))
}

pub fn write_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(EREV_MAGIC);
    out.extend_from_slice(&EREV_VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.width as u16).to_le_bytes());
    out.extend_from_slice(&(stream.height as u16).to_le_bytes());
    out.extend_from_slice(&[0u8; 6]);
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.as_i8() as u8);
        out.extend_from_slice(&[0u8; 3]);
    }
    out
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u64(b: &[u8], at: usize) -> u64 {
    let mut a = [0u8; 8];
    a.copy_from_slice(&b[at..at + 8]);
    u64::from_le_bytes(a)
}

pub fn read_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 4 || &bytes[..4] != EREV_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic {
            expected: "EREV".into(),
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let version = le_u16(bytes, 4);
    if version != EREV_VERSION {
        return Err(Error::Format(format!("unsupported EREV version {version}")));
    }
    let width = le_u16(bytes, 6) as usize;
    let height = le_u16(bytes, 8) as usize;
    let count = le_u64(bytes, 16);
    let needed = (count as u128) * RECORD_LEN as u128 + HEADER_LEN as u128;
    if needed > bytes.len() as u128 {
        return Err(Error::Truncated {
            needed: needed.min(usize::MAX as u128) as usize,
            available: bytes.len(),
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in bytes[HEADER_LEN..needed as usize]
        .chunks_exact(RECORD_LEN)
        .enumerate()
    {
        if rec[13..16] != [0, 0, 0] {
            return Err(Error::NonzeroPadding { record: i });
        }
        let polarity = Polarity::from_i8(rec[12] as i8)
            .ok_or_else(|| Error::Format(format!("record {i}: bad polarity {}", rec[12] as i8)))?;
        events.push(Event::new(
            le_u64(rec, 0),
            le_u16(rec, 8),
            le_u16(rec, 10),
            polarity,
        ));
    }
    Ok(EventStream::new(width, height, events))
}

/// Events binned over `[t_start_us, t_end_us)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    pub width: usize,
    pub height: usize,
    pub t_start_us: u64,
    pub t_end_us: u64,
    /// ON minus OFF count per pixel.
    pub signed: Vec<i32>,
    /// Total count per pixel.
    pub count: Vec<u32>,
}

impl EventFrame {
    pub fn empty(width: usize, height: usize, t_start_us: u64, t_end_us: u64) -> Self {
        Self {
            width,
            height,
            t_start_us,
            t_end_us,
            signed: vec![0; width * height],
            count: vec![0; width * height],
        }
    }
}

/// Accumulates the events with `t_start_us <= t < t_end_us`. Relies on the
/// stream's time ordering to locate the window.
pub fn accumulate(stream: &EventStream, t_start_us: u64, t_end_us: u64) -> EventFrame {
    assert!(t_start_us < t_end_us, "empty accumulation window");
    let mut frame = EventFrame::empty(stream.width, stream.height, t_start_us, t_end_us);
    let lo = stream.events.partition_point(|e| e.t < t_start_us);
    let hi = stream.events.partition_point(|e| e.t < t_end_us);
    for e in &stream.events[lo..hi] {
        let i = e.y as usize * stream.width + e.x as usize;
        frame.signed[i] += e.polarity.as_i8() as i32;
        frame.count[i] += 1;
    }
    frame
}

/// Number of `window_us` windows covering `[0, last event]`; zero for an
/// empty stream.
pub fn window_count(stream: &EventStream, window_us: u64) -> usize {
    match stream.events.last() {
        Some(e) => (e.t + 1).div_ceil(window_us) as usize,
        None => 0,
    }
}

/// Consecutive windows of `window_us` starting at t = 0 ("DVS video").
pub fn accumulate_windows(stream: &EventStream, window_us: u64) -> Vec<EventFrame> {
    (0..window_count(stream, window_us) as u64)
        .map(|j| accumulate(stream, j * window_us, (j + 1) * window_us))
        .collect()
}

/// Mid-gray visualization: `clamp(128 + gain * signed, 0, 255)`.
pub fn event_frame_to_image(frame: &EventFrame, gain: f64) -> Vec<u8> {
    frame
        .signed
        .iter()
        .map(|&s| (128.0 + gain * s as f64).round().clamp(0.0, 255.0) as u8)
        .collect()
}
