//! Dataset plumbing: label maps, sequence-interval manifests, bottom-row
//! cropping, geometric augmentation, and paired (tensor, labels) samples.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::event::SensorGeometry;
use crate::pgm::{self, PgmError};
use crate::repr::{read_rpt1, ReprError, ReprTensor};

/// Label value marking pixels excluded from loss and metrics.
pub const IGNORE_ID: u8 = 255;

/// The six driving-scene categories, in class-id order. "background"
/// covers construction and sky, which are annotated as one category.
pub const CLASS_NAMES: [&str; 6] = [
    "flat",
    "background",
    "object",
    "vegetation",
    "human",
    "vehicle",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("label raster length {found} does not match geometry ({expected})")]
    DataLength { expected: usize, found: usize },
    #[error("line {line}: cannot parse manifest entry")]
    ParseError { line: u64 },
    #[error("line {line}: intervals overlap or are out of order")]
    OverlappingIntervals { line: u64 },
    #[error("cannot crop {rows} rows from a {height}-row raster")]
    CropTooLarge { rows: u16, height: u16 },
    #[error("crop rectangle is empty or extends past the raster")]
    DegenerateCrop,
    #[error("tensor and label geometries differ")]
    GeometryMismatch,
    #[error("label value {value} exceeds class count {num_classes}")]
    BadLabelValue { value: u8, num_classes: u8 },
    #[error("sample `{stem}` is missing its tensor or label file")]
    MissingPair { stem: String },
    #[error("file name is not valid UTF-8")]
    BadFileName,
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A per-pixel class-id raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    geometry: SensorGeometry,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(geometry: SensorGeometry, data: Vec<u8>) -> Result<Self, DatasetError> {
        if data.len() != geometry.pixel_count() {
            return Err(DatasetError::DataLength {
                expected: geometry.pixel_count(),
                found: data.len(),
            });
        }
        Ok(LabelMap { geometry, data })
    }

    pub fn filled(geometry: SensorGeometry, value: u8) -> Self {
        LabelMap {
            geometry,
            data: vec![value; geometry.pixel_count()],
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn value(&self, x: u16, y: u16) -> u8 {
        self.data[y as usize * self.geometry.width as usize + x as usize]
    }

    /// Checks that every non-ignore label is a valid class id.
    pub fn validate_classes(&self, num_classes: u8) -> Result<(), DatasetError> {
        for &v in &self.data {
            if v != IGNORE_ID && v >= num_classes {
                return Err(DatasetError::BadLabelValue {
                    value: v,
                    num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn read_pgm_file(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path)?;
        let (w, h, data) = pgm::read_pgm(BufReader::new(file))?;
        let geometry = SensorGeometry::new(w, h).expect("reader rejects zero dimensions");
        LabelMap::new(geometry, data)
    }

    pub fn write_pgm_file(&self, path: &Path) -> Result<(), DatasetError> {
        let mut file = fs::File::create(path)?;
        pgm::write_pgm(self.geometry.width, self.geometry.height, &self.data, &mut file)?;
        Ok(())
    }
}

/// Whether a sequence's frames are used for fitting or held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// One recorded sequence and the half-open frame intervals selected from
/// it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceManifest {
    pub name: String,
    pub role: Role,
    /// Half-open `[start, end)` frame-index intervals, ascending and
    /// non-overlapping.
    pub intervals: Vec<(u64, u64)>,
}

impl SequenceManifest {
    /// Number of frames selected across all intervals.
    pub fn frames(&self) -> u64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// Parses the manifest text format:
///
/// ```text
/// sequence <name> <train|test>
/// [a, b), [c, d)
/// ```
///
/// A `sequence` line opens a block; following lines list one or more
/// comma-separated half-open intervals. Blank lines and `#` comments are
/// skipped. Intervals must be ascending and non-overlapping.
pub fn load_manifest(text: &str) -> Result<Vec<SequenceManifest>, DatasetError> {
    let mut manifests: Vec<SequenceManifest> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("sequence ") {
            let mut parts = rest.split_whitespace();
            let (name, role) = match (parts.next(), parts.next(), parts.next()) {
                (Some(name), Some(role), None) => (name, role),
                _ => return Err(DatasetError::ParseError { line }),
            };
            let role = match role {
                "train" => Role::Train,
                "test" => Role::Test,
                _ => return Err(DatasetError::ParseError { line }),
            };
            manifests.push(SequenceManifest {
                name: name.to_string(),
                role,
                intervals: Vec::new(),
            });
            continue;
        }
        let current = manifests
            .last_mut()
            .ok_or(DatasetError::ParseError { line })?;
        for piece in trimmed.split(')') {
            let piece = piece.trim_start_matches([',', ' ', '\t']);
            if piece.is_empty() {
                continue;
            }
            let inner = piece
                .strip_prefix('[')
                .ok_or(DatasetError::ParseError { line })?;
            let (a, b) = inner
                .split_once(',')
                .ok_or(DatasetError::ParseError { line })?;
            let a: u64 = a.trim().parse().map_err(|_| DatasetError::ParseError { line })?;
            let b: u64 = b.trim().parse().map_err(|_| DatasetError::ParseError { line })?;
            if a >= b {
                return Err(DatasetError::ParseError { line });
            }
            if let Some(&(_, prev_end)) = current.intervals.last() {
                if a < prev_end {
                    return Err(DatasetError::OverlappingIntervals { line });
                }
            }
            current.intervals.push((a, b));
        }
    }
    Ok(manifests)
}

/// Total selected frames across manifests.
pub fn total_frames(manifests: &[SequenceManifest]) -> u64 {
    manifests.iter().map(SequenceManifest::frames).sum()
}

fn cropped_geometry(
    geometry: SensorGeometry,
    rows: u16,
) -> Result<SensorGeometry, DatasetError> {
    if rows >= geometry.height {
        return Err(DatasetError::CropTooLarge {
            rows,
            height: geometry.height,
        });
    }
    Ok(SensorGeometry::new(geometry.width, geometry.height - rows)
        .expect("remaining height is positive"))
}

/// Removes the bottom `rows` rows (dashboard region) from a label map.
pub fn crop_bottom_labels(labels: &LabelMap, rows: u16) -> Result<LabelMap, DatasetError> {
    let geometry = cropped_geometry(labels.geometry, rows)?;
    let data = labels.data[..geometry.pixel_count()].to_vec();
    LabelMap::new(geometry, data)
}

/// Removes the bottom `rows` rows from a tensor, all channels alike.
pub fn crop_bottom_tensor(tensor: &ReprTensor, rows: u16) -> Result<ReprTensor, DatasetError> {
    let geometry = cropped_geometry(tensor.geometry(), rows)?;
    let keep = geometry.pixel_count() * tensor.channels();
    let data = tensor.data()[..keep].to_vec();
    Ok(ReprTensor::from_data(geometry, tensor.kind(), tensor.window(), data)?)
}

/// A geometric transform applied identically to a tensor and its labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    /// Mirror left-right.
    HFlip,
    /// Rotate counterclockwise about the raster center.
    Rotate { degrees: f64 },
    /// Translate content by (dx, dy) pixels; positive dx moves right.
    Shift { dx: i32, dy: i32 },
    /// Keep only the given rectangle; output shrinks to its size.
    Crop { x: u16, y: u16, width: u16, height: u16 },
}

/// Draws one random augmentation: rotations in (−15°, 15°), shifts within
/// ±25% of each dimension, crops keeping at least half of each dimension,
/// or a horizontal flip.
pub fn sample_augment_op<R: Rng>(geometry: SensorGeometry, rng: &mut R) -> AugmentOp {
    match rng.gen_range(0..4u8) {
        0 => AugmentOp::HFlip,
        1 => AugmentOp::Rotate {
            degrees: rng.gen_range(-15.0..=15.0),
        },
        2 => {
            let max_dx = (geometry.width as i32) / 4;
            let max_dy = (geometry.height as i32) / 4;
            AugmentOp::Shift {
                dx: rng.gen_range(-max_dx..=max_dx),
                dy: rng.gen_range(-max_dy..=max_dy),
            }
        }
        _ => {
            let min_w = (geometry.width / 2).max(1);
            let min_h = (geometry.height / 2).max(1);
            let width = rng.gen_range(min_w..=geometry.width);
            let height = rng.gen_range(min_h..=geometry.height);
            AugmentOp::Crop {
                x: rng.gen_range(0..=geometry.width - width),
                y: rng.gen_range(0..=geometry.height - height),
                width,
                height,
            }
        }
    }
}

/// A paired tensor and label map sharing one geometry.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tensor: ReprTensor,
    pub labels: LabelMap,
    pub id: String,
}

impl Sample {
    pub fn new(tensor: ReprTensor, labels: LabelMap, id: String) -> Result<Self, DatasetError> {
        if tensor.geometry() != labels.geometry() {
            return Err(DatasetError::GeometryMismatch);
        }
        Ok(Sample { tensor, labels, id })
    }
}

/// Maps each output pixel to its source pixel, or `None` for pixels that
/// fall outside the source frame (filled with 0 / ignore).
fn source_pixel(
    op: &AugmentOp,
    geometry: SensorGeometry,
    x: u16,
    y: u16,
) -> Option<(u16, u16)> {
    match *op {
        AugmentOp::HFlip => Some((geometry.width - 1 - x, y)),
        AugmentOp::Rotate { degrees } => {
            let theta = degrees.to_radians();
            let (sin, cos) = theta.sin_cos();
            let cx = (geometry.width as f64 - 1.0) / 2.0;
            let cy = (geometry.height as f64 - 1.0) / 2.0;
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse rotation: where did this output pixel come from?
            let sx = (cos * dx + sin * dy + cx).round();
            let sy = (-sin * dx + cos * dy + cy).round();
            if sx < 0.0 || sy < 0.0 || sx >= geometry.width as f64 || sy >= geometry.height as f64
            {
                None
            } else {
                Some((sx as u16, sy as u16))
            }
        }
        AugmentOp::Shift { dx, dy } => {
            let sx = x as i64 - dx as i64;
            let sy = y as i64 - dy as i64;
            if sx < 0 || sy < 0 || sx >= geometry.width as i64 || sy >= geometry.height as i64 {
                None
            } else {
                Some((sx as u16, sy as u16))
            }
        }
        AugmentOp::Crop { x: x0, y: y0, .. } => Some((x0 + x, y0 + y)),
    }
}

/// Applies `op` to tensor and labels with identical parameters.
///
/// Resampling is nearest-neighbor for both rasters so count channels stay
/// integral; pixels mapped from outside the frame get 0 in every tensor
/// channel and the ignore id in labels.
pub fn augment(sample: &Sample, op: &AugmentOp) -> Result<Sample, DatasetError> {
    let geometry = sample.tensor.geometry();
    let out_geometry = match *op {
        AugmentOp::Crop { x, y, width, height } => {
            if width == 0
                || height == 0
                || x as u32 + width as u32 > geometry.width as u32
                || y as u32 + height as u32 > geometry.height as u32
            {
                return Err(DatasetError::DegenerateCrop);
            }
            SensorGeometry::new(width, height).expect("checked nonzero")
        }
        _ => geometry,
    };

    let channels = sample.tensor.channels();
    let mut tensor_data = vec![0.0; out_geometry.pixel_count() * channels];
    let mut label_data = vec![IGNORE_ID; out_geometry.pixel_count()];
    for y in 0..out_geometry.height {
        for x in 0..out_geometry.width {
            let out_px = y as usize * out_geometry.width as usize + x as usize;
            if let Some((sx, sy)) = source_pixel(op, geometry, x, y) {
                let src = sample.tensor.pixel(sx, sy);
                tensor_data[out_px * channels..(out_px + 1) * channels].copy_from_slice(src);
                label_data[out_px] = sample.labels.value(sx, sy);
            }
        }
    }
    let tensor = ReprTensor::from_data(
        out_geometry,
        sample.tensor.kind(),
        sample.tensor.window(),
        tensor_data,
    )?;
    let labels = LabelMap::new(out_geometry, label_data)?;
    Sample::new(tensor, labels, sample.id.clone())
}

/// Loads samples paired by file stem: `<id>.rpt1` under `tensors_dir`
/// with `<id>.pgm` under `labels_dir`. Every stem must appear on both
/// sides; results are sorted by id.
pub fn load_samples(tensors_dir: &Path, labels_dir: &Path) -> Result<Vec<Sample>, DatasetError> {
    let tensor_stems = stems_with_extension(tensors_dir, "rpt1")?;
    let label_stems = stems_with_extension(labels_dir, "pgm")?;
    for stem in &tensor_stems {
        if !label_stems.contains(stem) {
            return Err(DatasetError::MissingPair { stem: stem.clone() });
        }
    }
    for stem in &label_stems {
        if !tensor_stems.contains(stem) {
            return Err(DatasetError::MissingPair { stem: stem.clone() });
        }
    }
    let mut samples = Vec::with_capacity(tensor_stems.len());
    for stem in tensor_stems {
        let tensor_path = tensors_dir.join(format!("{stem}.rpt1"));
        let file = fs::File::open(&tensor_path)?;
        let (tensor, _) = read_rpt1(BufReader::new(file))?;
        let labels = LabelMap::read_pgm_file(&labels_dir.join(format!("{stem}.pgm")))?;
        samples.push(Sample::new(tensor, labels, stem)?);
    }
    Ok(samples)
}

fn stems_with_extension(dir: &Path, extension: &str) -> Result<Vec<String>, DatasetError> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or(DatasetError::BadFileName)?;
        stems.push(stem.to_string());
    }
    stems.sort();
    Ok(stems)
}
