//! Event and stream domain types, stream parsing/serialization and
//! time-window slicing.
//!
//! Timestamps are microseconds since the stream epoch throughout; DVS
//! sensors resolve single-microsecond gaps, so nothing coarser is safe.

use std::io::{self, BufRead, BufReader, Read, Write};

use thiserror::Error;

/// Magic bytes of the EVS1 binary stream container.
pub const EVS1_MAGIC: [u8; 4] = *b"EVS1";
const EVS1_HEADER_LEN: usize = 16;
const EVS1_RECORD_LEN: usize = 16;

/// Errors raised while parsing, validating or slicing event streams.
///
/// `line` is the 1-based source line for CSV input and the 1-based record
/// index for binary input (0 marks the header).
#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: malformed event record")]
    MalformedLine { line: u64 },
    #[error("line {line}: event coordinates outside sensor bounds")]
    OutOfBounds { line: u64 },
    #[error("line {line}: timestamp decreases")]
    NonMonotonicTimestamp { line: u64 },
    #[error("line {line}: polarity value not in the accepted set")]
    BadPolarity { line: u64 },
    #[error("bad magic bytes (expected \"EVS1\")")]
    BadMagic,
    #[error("truncated record at index {record}")]
    TruncatedRecord { record: u64 },
    #[error("header count {expected} does not match {found} records present")]
    CountMismatch { expected: u64, found: u64 },
    #[error("stream header is {found_width}x{found_height}, expected {width}x{height}")]
    HeaderGeometryMismatch {
        width: u16,
        height: u16,
        found_width: u16,
        found_height: u16,
    },
    #[error("cannot tile windows over an empty stream")]
    EmptyStream,
    #[error("window duration must be positive")]
    ZeroDuration,
    #[error("anchor {anchor} is earlier than the window duration {duration}")]
    AnchorTooEarly { anchor: u64, duration: u64 },
    #[error("sensor geometry must be at least 1x1")]
    BadGeometry,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Sign of the intensity change: `Positive` brightening, `Negative` darkening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    /// The signed value used on the wire and in formulas: -1 or +1.
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    /// Channel index used by all per-polarity encodings: negative first.
    pub fn channel(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn from_sign(value: i8) -> Option<Polarity> {
        match value {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// One asynchronous brightness-change record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Microseconds since the stream epoch.
    pub t_us: u64,
    /// Pixel column, 0-based.
    pub x: u16,
    /// Pixel row, 0-based.
    pub y: u16,
    pub polarity: Polarity,
}

/// Sensor resolution; pure configuration, never inferred from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::BadGeometry);
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// A half-open integration interval `[t_start, t_start + duration)`.
///
/// Half-open bounds guarantee that tiled windows partition a stream: an
/// event stamped exactly `t_start + duration` belongs to the next window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub t_start_us: u64,
    pub duration_us: u64,
}

impl Window {
    pub fn new(t_start_us: u64, duration_us: u64) -> Result<Self, EventError> {
        if duration_us == 0 {
            return Err(EventError::ZeroDuration);
        }
        Ok(Window {
            t_start_us,
            duration_us,
        })
    }

    /// Exclusive end of the window.
    pub fn end_us(&self) -> u64 {
        self.t_start_us + self.duration_us
    }

    pub fn contains(&self, t_us: u64) -> bool {
        t_us >= self.t_start_us && t_us < self.end_us()
    }
}

/// A validated, time-ordered event sequence bound to a sensor geometry.
///
/// Immutable after construction; timestamps are non-decreasing (real
/// sensors emit simultaneous events at distinct pixels) and every event is
/// in bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self, EventError> {
        let mut last_t = 0u64;
        for (i, e) in events.iter().enumerate() {
            let line = i as u64 + 1;
            if !geometry.contains(e.x, e.y) {
                return Err(EventError::OutOfBounds { line });
            }
            if e.t_us < last_t {
                return Err(EventError::NonMonotonicTimestamp { line });
            }
            last_t = e.t_us;
        }
        Ok(EventStream { geometry, events })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        EventStream {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// How polarity is encoded in CSV input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarityMode {
    /// `-1` / `+1` as stored internally.
    Signed,
    /// `0` / `1`; 0 maps to -1, 1 maps to +1.
    ZeroOne,
}

/// Parses `timestamp_us,x,y,p` lines into a validated stream.
///
/// Lines starting with `#` and blank lines are skipped. Polarity is
/// canonicalized to -1/+1 according to `mode`.
pub fn parse_csv<R: Read>(
    reader: R,
    geometry: SensorGeometry,
    mode: PolarityMode,
) -> Result<EventStream, EventError> {
    let reader = BufReader::new(reader);
    let mut events = Vec::new();
    let mut last_t = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let text = line?;
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',');
        let (t, x, y, p) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(t), Some(x), Some(y), Some(p), None) => (t, x, y, p),
            _ => return Err(EventError::MalformedLine { line: line_no }),
        };
        let t_us: u64 = t
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedLine { line: line_no })?;
        let x: u16 = x
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedLine { line: line_no })?;
        let y: u16 = y
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedLine { line: line_no })?;
        let raw_p: i8 = p
            .trim()
            .parse()
            .map_err(|_| EventError::MalformedLine { line: line_no })?;
        let polarity = match mode {
            PolarityMode::Signed => Polarity::from_sign(raw_p),
            PolarityMode::ZeroOne => match raw_p {
                0 => Some(Polarity::Negative),
                1 => Some(Polarity::Positive),
                _ => None,
            },
        }
        .ok_or(EventError::BadPolarity { line: line_no })?;
        if !geometry.contains(x, y) {
            return Err(EventError::OutOfBounds { line: line_no });
        }
        if t_us < last_t {
            return Err(EventError::NonMonotonicTimestamp { line: line_no });
        }
        last_t = t_us;
        events.push(Event {
            t_us,
            x,
            y,
            polarity,
        });
    }
    Ok(EventStream { geometry, events })
}

/// Writes a stream as `timestamp_us,x,y,p` lines with signed polarity.
pub fn write_csv<W: Write>(stream: &EventStream, writer: &mut W) -> Result<(), EventError> {
    for e in stream.events() {
        writeln!(writer, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity.sign())?;
    }
    Ok(())
}

/// Parses the EVS1 binary container.
///
/// Layout (all little-endian): a 16-byte header `magic "EVS1", u16 width,
/// u16 height, u64 event count`, followed by `count` 16-byte records
/// `u64 timestamp_us, u16 x, u16 y, i8 polarity, 3 pad bytes`. Pad bytes
/// are written as zero and ignored on read. The header geometry must match
/// `geometry`.
pub fn parse_binary<R: Read>(
    mut reader: R,
    geometry: SensorGeometry,
) -> Result<EventStream, EventError> {
    let (found, count) = read_evs1_header(&mut reader)?;
    if found != geometry {
        return Err(EventError::HeaderGeometryMismatch {
            width: geometry.width,
            height: geometry.height,
            found_width: found.width,
            found_height: found.height,
        });
    }
    read_evs1_records(reader, geometry, count)
}

/// Like [`parse_binary`] but takes the sensor geometry from the file
/// header instead of validating it against an expected one.
pub fn parse_binary_auto<R: Read>(mut reader: R) -> Result<EventStream, EventError> {
    let (geometry, count) = read_evs1_header(&mut reader)?;
    read_evs1_records(reader, geometry, count)
}

fn read_evs1_header<R: Read>(reader: &mut R) -> Result<(SensorGeometry, u64), EventError> {
    let mut header = [0u8; EVS1_HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| EventError::BadMagic)?;
    if header[0..4] != EVS1_MAGIC {
        return Err(EventError::BadMagic);
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    let count = u64::from_le_bytes(header[8..16].try_into().expect("8-byte slice"));
    Ok((SensorGeometry::new(width, height)?, count))
}

fn read_evs1_records<R: Read>(
    mut reader: R,
    geometry: SensorGeometry,
    count: u64,
) -> Result<EventStream, EventError> {
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut last_t = 0u64;
    let mut record = [0u8; EVS1_RECORD_LEN];
    for i in 0..count {
        let line = i + 1;
        read_record(&mut reader, &mut record).map_err(|_| EventError::TruncatedRecord {
            record: line,
        })?;
        let t_us = u64::from_le_bytes(record[0..8].try_into().expect("8-byte slice"));
        let x = u16::from_le_bytes([record[8], record[9]]);
        let y = u16::from_le_bytes([record[10], record[11]]);
        let polarity = Polarity::from_sign(record[12] as i8)
            .ok_or(EventError::BadPolarity { line })?;
        if !geometry.contains(x, y) {
            return Err(EventError::OutOfBounds { line });
        }
        if t_us < last_t {
            return Err(EventError::NonMonotonicTimestamp { line });
        }
        last_t = t_us;
        events.push(Event {
            t_us,
            x,
            y,
            polarity,
        });
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(EventError::CountMismatch {
            expected: count,
            found: count + 1,
        });
    }
    Ok(EventStream { geometry, events })
}

fn read_record<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<()> {
    reader.read_exact(buf)
}

/// Writes the EVS1 container; returns the number of bytes written.
pub fn write_binary<W: Write>(stream: &EventStream, writer: &mut W) -> Result<u64, EventError> {
    let geometry = stream.geometry();
    let mut header = [0u8; EVS1_HEADER_LEN];
    header[0..4].copy_from_slice(&EVS1_MAGIC);
    header[4..6].copy_from_slice(&geometry.width.to_le_bytes());
    header[6..8].copy_from_slice(&geometry.height.to_le_bytes());
    header[8..16].copy_from_slice(&(stream.len() as u64).to_le_bytes());
    writer.write_all(&header)?;
    let mut written = EVS1_HEADER_LEN as u64;
    for e in stream.events() {
        let mut record = [0u8; EVS1_RECORD_LEN];
        record[0..8].copy_from_slice(&e.t_us.to_le_bytes());
        record[8..10].copy_from_slice(&e.x.to_le_bytes());
        record[10..12].copy_from_slice(&e.y.to_le_bytes());
        record[12] = e.polarity.sign() as u8;
        writer.write_all(&record)?;
        written += EVS1_RECORD_LEN as u64;
    }
    Ok(written)
}

/// Window placement strategy for [`slice_windows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode<'a> {
    /// Contiguous half-open windows anchored at the first event timestamp,
    /// covering through the last event. Every event lands in exactly one
    /// window.
    Tiled,
    /// For each anchor `a`, the window `[a - duration, a)`: the last
    /// `duration` of events before the anchor.
    CenteredAt(&'a [u64]),
}

/// Splits a stream into `(window, events)` pairs without copying events.
pub fn slice_windows<'s>(
    stream: &'s EventStream,
    duration_us: u64,
    mode: WindowMode<'_>,
) -> Result<Vec<(Window, &'s [Event])>, EventError> {
    if duration_us == 0 {
        return Err(EventError::ZeroDuration);
    }
    let events = stream.events();
    match mode {
        WindowMode::Tiled => {
            if events.is_empty() {
                return Err(EventError::EmptyStream);
            }
            let first = events[0].t_us;
            let last = events[events.len() - 1].t_us;
            let window_count = (last - first) / duration_us + 1;
            let mut out = Vec::with_capacity(window_count as usize);
            let mut lo = 0usize;
            for k in 0..window_count {
                let window = Window {
                    t_start_us: first + k * duration_us,
                    duration_us,
                };
                let end = window.end_us();
                let hi = lo + events[lo..].partition_point(|e| e.t_us < end);
                out.push((window, &events[lo..hi]));
                lo = hi;
            }
            Ok(out)
        }
        WindowMode::CenteredAt(anchors) => {
            let mut out = Vec::with_capacity(anchors.len());
            for &anchor in anchors {
                if anchor < duration_us {
                    return Err(EventError::AnchorTooEarly {
                        anchor,
                        duration: duration_us,
                    });
                }
                let window = Window {
                    t_start_us: anchor - duration_us,
                    duration_us,
                };
                let lo = events.partition_point(|e| e.t_us < window.t_start_us);
                let hi = events.partition_point(|e| e.t_us < anchor);
                out.push((window, &events[lo..hi]));
            }
            Ok(out)
        }
    }
}
