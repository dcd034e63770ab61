//! Dense window encodings of event streams.
//!
//! Four representations are supported, all per-pixel and (except the last)
//! per-polarity, computed over a single time window:
//!
//! * `Hist2` — event count per polarity.
//! * `HistRecent4` — counts plus the normalized timestamp of the most
//!   recent event per polarity.
//! * `HistMeanStd6` — counts plus mean and sample standard deviation of
//!   normalized timestamps per polarity.
//! * `LastEvent1` — sign of the latest event at each pixel (0 if none).
//!
//! Two computation routes exist and must agree: [`encode_batch`] makes two
//! compensated passes over a window slice, while [`StreamingAccumulator`]
//! folds events one at a time (and merges sub-accumulators) without
//! storing them. The agreement is checked to 1e-12 absolute in the tests;
//! disagreement beyond that indicates a numerics bug in one of the routes.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::event::{Event, SensorGeometry, Window};

/// Magic bytes of the RPT1 tensor container.
pub const RPT1_MAGIC: [u8; 4] = *b"RPT1";
const RPT1_HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("timestamp {t_us} outside window [{start}, {end})")]
    OutsideWindow { t_us: u64, start: u64, end: u64 },
    #[error("event at {t_us} outside window [{start}, {end})")]
    EventOutOfWindow { t_us: u64, start: u64, end: u64 },
    #[error("event at ({x}, {y}) outside sensor bounds")]
    EventOutOfBounds { x: u16, y: u16 },
    #[error("channel {channel} out of range for a {channels}-channel tensor")]
    BadChannel { channel: usize, channels: usize },
    #[error("accumulators cover different geometries or windows")]
    MergeMismatch,
    #[error("bad magic bytes (expected \"RPT1\")")]
    BadMagic,
    #[error("unknown representation code {0}")]
    BadKindCode(u8),
    #[error("unknown dtype code {0}")]
    BadDtypeCode(u8),
    #[error("channel count {found} does not match representation ({expected})")]
    ChannelCountMismatch { expected: usize, found: usize },
    #[error("data length {found} does not match geometry and channel count ({expected})")]
    DataLength { expected: usize, found: usize },
    #[error("tensor data truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which dense encoding a tensor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprKind {
    LastEvent1,
    Hist2,
    HistRecent4,
    HistMeanStd6,
}

impl ReprKind {
    pub fn channels(self) -> usize {
        match self {
            ReprKind::LastEvent1 => 1,
            ReprKind::Hist2 => 2,
            ReprKind::HistRecent4 => 4,
            ReprKind::HistMeanStd6 => 6,
        }
    }

    /// Stable on-disk code used by the RPT1 header.
    pub fn code(self) -> u8 {
        match self {
            ReprKind::LastEvent1 => 0,
            ReprKind::Hist2 => 1,
            ReprKind::HistRecent4 => 2,
            ReprKind::HistMeanStd6 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ReprError> {
        match code {
            0 => Ok(ReprKind::LastEvent1),
            1 => Ok(ReprKind::Hist2),
            2 => Ok(ReprKind::HistRecent4),
            3 => Ok(ReprKind::HistMeanStd6),
            other => Err(ReprError::BadKindCode(other)),
        }
    }
}

/// Element width used when serializing a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprDtype {
    F32,
    F64,
}

impl ReprDtype {
    pub fn code(self) -> u8 {
        match self {
            ReprDtype::F32 => 0,
            ReprDtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ReprError> {
        match code {
            0 => Ok(ReprDtype::F32),
            1 => Ok(ReprDtype::F64),
            other => Err(ReprError::BadDtypeCode(other)),
        }
    }
}

/// A dense H×W×C raster over one window.
///
/// Data is row-major with channels interleaved: element `(x, y, c)` lives
/// at `(y·W + x)·C + c`. Channel order per kind:
///
/// * `Hist2`: `[count−, count+]`
/// * `HistRecent4`: `[count−, count+, recent−, recent+]`
/// * `HistMeanStd6`: `[count−, count+, mean−, mean+, std−, std+]`
/// * `LastEvent1`: one channel holding −1, +1 or 0.
///
/// Counts are stored as reals; mean/std/recent lie in `[0, 1]`; pixels
/// that saw no event of the relevant polarity hold 0 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprTensor {
    geometry: SensorGeometry,
    kind: ReprKind,
    window: Window,
    data: Vec<f64>,
}

impl ReprTensor {
    pub fn zeros(geometry: SensorGeometry, kind: ReprKind, window: Window) -> Self {
        let len = geometry.pixel_count() * kind.channels();
        ReprTensor {
            geometry,
            kind,
            window,
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor from an existing raster in storage order.
    pub fn from_data(
        geometry: SensorGeometry,
        kind: ReprKind,
        window: Window,
        data: Vec<f64>,
    ) -> Result<Self, ReprError> {
        let expected = geometry.pixel_count() * kind.channels();
        if data.len() != expected {
            return Err(ReprError::DataLength {
                expected,
                found: data.len(),
            });
        }
        Ok(ReprTensor {
            geometry,
            kind,
            window,
            data,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn kind(&self) -> ReprKind {
        self.kind
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn index(&self, x: u16, y: u16, channel: usize) -> usize {
        (y as usize * self.geometry.width as usize + x as usize) * self.channels() + channel
    }

    pub fn value(&self, x: u16, y: u16, channel: usize) -> f64 {
        self.data[self.index(x, y, channel)]
    }

    /// All channel values of one pixel, contiguous in memory.
    pub fn pixel(&self, x: u16, y: u16) -> &[f64] {
        let base = self.index(x, y, 0);
        &self.data[base..base + self.channels()]
    }
}

/// Maps an in-window timestamp to `[0, 1)` relative to the window.
pub fn normalize_timestamp(t_us: u64, window: Window) -> Result<f64, ReprError> {
    if !window.contains(t_us) {
        return Err(ReprError::OutsideWindow {
            t_us,
            start: window.t_start_us,
            end: window.end_us(),
        });
    }
    Ok((t_us - window.t_start_us) as f64 / window.duration_us as f64)
}

/// Compensated accumulator; keeps float summation error independent of
/// the number of addends so the batch route can serve as a reference.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn check_event(e: &Event, window: Window, geometry: SensorGeometry) -> Result<(), ReprError> {
    if !window.contains(e.t_us) {
        return Err(ReprError::EventOutOfWindow {
            t_us: e.t_us,
            start: window.t_start_us,
            end: window.end_us(),
        });
    }
    if !geometry.contains(e.x, e.y) {
        return Err(ReprError::EventOutOfBounds { x: e.x, y: e.y });
    }
    Ok(())
}

/// Encodes a window slice in two compensated passes (count+mean, then
/// squared deviations). This is the reference numeric route.
pub fn encode_batch(
    events: &[Event],
    window: Window,
    geometry: SensorGeometry,
    kind: ReprKind,
) -> Result<ReprTensor, ReprError> {
    for e in events {
        check_event(e, window, geometry)?;
    }

    let width = geometry.width as usize;
    let slots = geometry.pixel_count() * 2;
    let slot = |e: &Event| (e.y as usize * width + e.x as usize) * 2 + e.polarity.channel();

    let mut tensor = ReprTensor::zeros(geometry, kind, window);
    let channels = kind.channels();

    if kind == ReprKind::LastEvent1 {
        // Later events overwrite earlier ones; `>=` keeps the later
        // sequence position on timestamp ties.
        let mut last_t = vec![0u64; geometry.pixel_count()];
        let mut last_sign = vec![0i8; geometry.pixel_count()];
        for e in events {
            let px = e.y as usize * width + e.x as usize;
            if last_sign[px] == 0 || e.t_us >= last_t[px] {
                last_t[px] = e.t_us;
                last_sign[px] = e.polarity.sign();
            }
        }
        for px in 0..geometry.pixel_count() {
            tensor.data[px] = last_sign[px] as f64;
        }
        return Ok(tensor);
    }

    let mut counts = vec![0u64; slots];
    let mut sums = vec![KahanSum::default(); slots];
    let mut maxima = vec![0f64; slots];
    for e in events {
        let s = slot(e);
        let t_norm = normalize_timestamp(e.t_us, window)?;
        counts[s] += 1;
        sums[s].add(t_norm);
        if t_norm > maxima[s] {
            maxima[s] = t_norm;
        }
    }

    for px in 0..geometry.pixel_count() {
        for pol in 0..2 {
            let s = px * 2 + pol;
            tensor.data[px * channels + pol] = counts[s] as f64;
        }
    }

    match kind {
        ReprKind::Hist2 => {}
        ReprKind::HistRecent4 => {
            for px in 0..geometry.pixel_count() {
                for pol in 0..2 {
                    let s = px * 2 + pol;
                    if counts[s] > 0 {
                        tensor.data[px * channels + 2 + pol] = maxima[s];
                    }
                }
            }
        }
        ReprKind::HistMeanStd6 => {
            let mut means = vec![0f64; slots];
            for s in 0..slots {
                if counts[s] > 0 {
                    means[s] = sums[s].value() / counts[s] as f64;
                }
            }
            let mut sq_dev = vec![KahanSum::default(); slots];
            for e in events {
                let s = slot(e);
                let t_norm = normalize_timestamp(e.t_us, window)?;
                let d = t_norm - means[s];
                sq_dev[s].add(d * d);
            }
            for px in 0..geometry.pixel_count() {
                for pol in 0..2 {
                    let s = px * 2 + pol;
                    if counts[s] > 0 {
                        tensor.data[px * channels + 2 + pol] = means[s];
                    }
                    // Sample deviation needs two observations; a single
                    // event shows no spread, so its std is pinned to 0.
                    if counts[s] > 1 {
                        tensor.data[px * channels + 4 + pol] =
                            (sq_dev[s].value() / (counts[s] - 1) as f64).sqrt();
                    }
                }
            }
        }
        ReprKind::LastEvent1 => unreachable!("handled above"),
    }
    Ok(tensor)
}

/// Single-pass statistics over a window, updatable one event at a time.
///
/// Tracks, per pixel and polarity: event count, running mean of normalized
/// timestamps, running sum of squared deviations, and the maximum
/// normalized timestamp; plus the latest event's polarity per pixel. From
/// these every [`ReprKind`] can be finalized without revisiting events.
#[derive(Debug, Clone)]
pub struct StreamingAccumulator {
    geometry: SensorGeometry,
    window: Window,
    count: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    max_t: Vec<f64>,
    last_t: Vec<u64>,
    last_sign: Vec<i8>,
}

impl StreamingAccumulator {
    pub fn new(geometry: SensorGeometry, window: Window) -> Self {
        let slots = geometry.pixel_count() * 2;
        StreamingAccumulator {
            geometry,
            window,
            count: vec![0; slots],
            mean: vec![0.0; slots],
            m2: vec![0.0; slots],
            max_t: vec![0.0; slots],
            last_t: vec![0; geometry.pixel_count()],
            last_sign: vec![0; geometry.pixel_count()],
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Folds one event in. Events must arrive in stream order for the
    /// last-event channel's tie-breaking to match the batch route.
    pub fn accumulate(&mut self, e: &Event) -> Result<(), ReprError> {
        check_event(e, self.window, self.geometry)?;
        let px = e.y as usize * self.geometry.width as usize + e.x as usize;
        let s = px * 2 + e.polarity.channel();
        let t_norm = normalize_timestamp(e.t_us, self.window)?;

        self.count[s] += 1;
        let delta = t_norm - self.mean[s];
        self.mean[s] += delta / self.count[s] as f64;
        self.m2[s] += delta * (t_norm - self.mean[s]);
        if t_norm > self.max_t[s] {
            self.max_t[s] = t_norm;
        }
        if self.last_sign[px] == 0 || e.t_us >= self.last_t[px] {
            self.last_t[px] = e.t_us;
            self.last_sign[px] = e.polarity.sign();
        }
        Ok(())
    }

    /// Absorbs an accumulator over a *later* chunk of the same window, as
    /// if its events had been accumulated after this one's. Mean and
    /// squared-deviation totals combine by the standard pairwise rule; the
    /// last-event channel prefers `later` on timestamp ties, preserving
    /// equality with a single sequential pass over the concatenation.
    pub fn merge(&mut self, later: &StreamingAccumulator) -> Result<(), ReprError> {
        if self.geometry != later.geometry || self.window != later.window {
            return Err(ReprError::MergeMismatch);
        }
        for s in 0..self.count.len() {
            let na = self.count[s];
            let nb = later.count[s];
            if nb == 0 {
                continue;
            }
            if na == 0 {
                self.count[s] = nb;
                self.mean[s] = later.mean[s];
                self.m2[s] = later.m2[s];
            } else {
                let n = na + nb;
                let delta = later.mean[s] - self.mean[s];
                self.mean[s] += delta * (nb as f64 / n as f64);
                self.m2[s] += later.m2[s]
                    + delta * delta * (na as f64 * (nb as f64 / n as f64));
                self.count[s] = n;
            }
            if later.max_t[s] > self.max_t[s] {
                self.max_t[s] = later.max_t[s];
            }
        }
        for px in 0..self.last_sign.len() {
            if later.last_sign[px] != 0
                && (self.last_sign[px] == 0 || later.last_t[px] >= self.last_t[px])
            {
                self.last_t[px] = later.last_t[px];
                self.last_sign[px] = later.last_sign[px];
            }
        }
        Ok(())
    }

    /// Materializes any representation from the accumulated statistics.
    pub fn finalize(&self, kind: ReprKind) -> ReprTensor {
        let mut tensor = ReprTensor::zeros(self.geometry, kind, self.window);
        let channels = kind.channels();
        if kind == ReprKind::LastEvent1 {
            for px in 0..self.last_sign.len() {
                tensor.data[px] = self.last_sign[px] as f64;
            }
            return tensor;
        }
        for px in 0..self.geometry.pixel_count() {
            for pol in 0..2 {
                let s = px * 2 + pol;
                let n = self.count[s];
                tensor.data[px * channels + pol] = n as f64;
                if n == 0 {
                    continue;
                }
                match kind {
                    ReprKind::Hist2 => {}
                    ReprKind::HistRecent4 => {
                        tensor.data[px * channels + 2 + pol] = self.max_t[s];
                    }
                    ReprKind::HistMeanStd6 => {
                        tensor.data[px * channels + 2 + pol] = self.mean[s];
                        if n > 1 {
                            tensor.data[px * channels + 4 + pol] =
                                (self.m2[s] / (n - 1) as f64).sqrt();
                        }
                    }
                    ReprKind::LastEvent1 => unreachable!("handled above"),
                }
            }
        }
        tensor
    }
}

/// How channel values map to bytes in [`visualize_channel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelScaling {
    /// Linear map of the observed `[min, max]` onto `[0, 255]`; a
    /// constant channel renders all-zero. Suits count channels, whose
    /// range is data-dependent.
    MinMax,
    /// Linear map of `[0, 1]` onto `[0, 255]`, clamping outliers. Suits
    /// mean/std/recent channels, which are already normalized.
    FixedUnit,
}

/// Renders one channel as an 8-bit grayscale raster (row-major).
pub fn visualize_channel(
    tensor: &ReprTensor,
    channel: usize,
    scaling: ChannelScaling,
) -> Result<Vec<u8>, ReprError> {
    let channels = tensor.channels();
    if channel >= channels {
        return Err(ReprError::BadChannel { channel, channels });
    }
    let pixels = tensor.geometry.pixel_count();
    let mut out = vec![0u8; pixels];
    match scaling {
        ChannelScaling::MinMax => {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for px in 0..pixels {
                let v = tensor.data[px * channels + channel];
                min = min.min(v);
                max = max.max(v);
            }
            if max > min {
                let span = max - min;
                for px in 0..pixels {
                    let v = tensor.data[px * channels + channel];
                    out[px] = (((v - min) / span) * 255.0).floor() as u8;
                }
            }
        }
        ChannelScaling::FixedUnit => {
            for px in 0..pixels {
                let v = tensor.data[px * channels + channel].clamp(0.0, 1.0);
                out[px] = (v * 255.0).floor() as u8;
            }
        }
    }
    Ok(out)
}

/// Writes the RPT1 tensor container; returns bytes written.
///
/// Layout (little-endian): 32-byte header `magic "RPT1", u16 width, u16
/// height, u16 channels, u8 representation code, u8 dtype code (0 = f32,
/// 1 = f64), u64 window start, u64 window duration, 4 pad bytes`, then the
/// raster in storage order at the chosen width.
pub fn write_rpt1<W: Write>(
    tensor: &ReprTensor,
    dtype: ReprDtype,
    writer: &mut W,
) -> Result<u64, ReprError> {
    let mut header = [0u8; RPT1_HEADER_LEN];
    header[0..4].copy_from_slice(&RPT1_MAGIC);
    header[4..6].copy_from_slice(&tensor.geometry.width.to_le_bytes());
    header[6..8].copy_from_slice(&tensor.geometry.height.to_le_bytes());
    header[8..10].copy_from_slice(&(tensor.channels() as u16).to_le_bytes());
    header[10] = tensor.kind.code();
    header[11] = dtype.code();
    header[12..20].copy_from_slice(&tensor.window.t_start_us.to_le_bytes());
    header[20..28].copy_from_slice(&tensor.window.duration_us.to_le_bytes());
    writer.write_all(&header)?;
    let mut written = RPT1_HEADER_LEN as u64;
    match dtype {
        ReprDtype::F32 => {
            for &v in &tensor.data {
                writer.write_all(&(v as f32).to_le_bytes())?;
                written += 4;
            }
        }
        ReprDtype::F64 => {
            for &v in &tensor.data {
                writer.write_all(&v.to_le_bytes())?;
                written += 8;
            }
        }
    }
    Ok(written)
}

/// Reads an RPT1 container, returning the tensor (widened to f64) and the
/// dtype it was stored at.
pub fn read_rpt1<R: Read>(mut reader: R) -> Result<(ReprTensor, ReprDtype), ReprError> {
    let mut header = [0u8; RPT1_HEADER_LEN];
    reader.read_exact(&mut header).map_err(|_| ReprError::BadMagic)?;
    if header[0..4] != RPT1_MAGIC {
        return Err(ReprError::BadMagic);
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    let channels = u16::from_le_bytes([header[8], header[9]]) as usize;
    let kind = ReprKind::from_code(header[10])?;
    let dtype = ReprDtype::from_code(header[11])?;
    let t_start_us = u64::from_le_bytes(header[12..20].try_into().expect("8-byte slice"));
    let duration_us = u64::from_le_bytes(header[20..28].try_into().expect("8-byte slice"));
    if channels != kind.channels() {
        return Err(ReprError::ChannelCountMismatch {
            expected: kind.channels(),
            found: channels,
        });
    }
    let geometry = SensorGeometry::new(width, height).map_err(|_| ReprError::Truncated)?;
    let window = Window {
        t_start_us,
        duration_us,
    };
    let len = geometry.pixel_count() * channels;
    let mut data = Vec::with_capacity(len);
    match dtype {
        ReprDtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..len {
                reader.read_exact(&mut buf).map_err(|_| ReprError::Truncated)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        ReprDtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..len {
                reader.read_exact(&mut buf).map_err(|_| ReprError::Truncated)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    Ok((
        ReprTensor {
            geometry,
            kind,
            window,
            data,
        },
        dtype,
    ))
}
