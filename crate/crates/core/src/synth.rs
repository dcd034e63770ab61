//! Synthetic event generation with exact ground-truth labels.
//!
//! Simulates the brightness-change trigger of an event camera over a
//! scene of moving flat-intensity shapes: each pixel keeps a reference
//! log-intensity and emits one event per threshold-sized log step, so the
//! emitted stream is a deterministic, independently checkable function of
//! the scene. Because the scene is analytic, the matching per-pixel class
//! labels are exact at any instant — no annotation noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::dataset::{LabelMap, IGNORE_ID};
use crate::event::{Event, EventStream, Polarity, SensorGeometry};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    BadScene(&'static str),
    #[error("invalid generator configuration: {0}")]
    BadConfig(&'static str),
    #[error("cannot parse scene file: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Geometry of a scene object, described by its size; the object's
/// position gives its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rectangle { width: f64, height: f64 },
    Disk { radius: f64 },
}

/// A flat-intensity shape moving at constant velocity. Objects later in
/// the scene list occlude earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    /// Ground-truth class of this object's pixels; 0 is reserved for the
    /// background and 255 for the ignore sentinel.
    pub class_id: u8,
    /// Rendered intensity; must be positive so its log exists.
    pub intensity: f64,
    /// Center (x, y) in pixel units at t = 0.
    pub position: (f64, f64),
    /// Pixels per second (vx, vy).
    pub velocity: (f64, f64),
}

impl SceneObject {
    fn validate(&self) -> Result<(), SynthError> {
        if self.class_id == 0 {
            return Err(SynthError::BadScene("class_id 0 is reserved for the background"));
        }
        if self.class_id == IGNORE_ID {
            return Err(SynthError::BadScene("class_id 255 is the ignore sentinel"));
        }
        if !(self.intensity > 0.0) {
            return Err(SynthError::BadScene("object intensity must be positive"));
        }
        let size_ok = match self.shape {
            Shape::Rectangle { width, height } => width > 0.0 && height > 0.0,
            Shape::Disk { radius } => radius > 0.0,
        };
        if !size_ok {
            return Err(SynthError::BadScene("object dimensions must be positive"));
        }
        Ok(())
    }

    fn center_at(&self, t_us: u64) -> (f64, f64) {
        let t_s = t_us as f64 / 1e6;
        (
            self.position.0 + self.velocity.0 * t_s,
            self.position.1 + self.velocity.1 * t_s,
        )
    }

    /// Whether the object covers the point at time `t_us`. Rectangle
    /// edges are half-open on the right/bottom so adjacent rectangles
    /// tile without double coverage.
    fn covers(&self, px: f64, py: f64, t_us: u64) -> bool {
        let (cx, cy) = self.center_at(t_us);
        match self.shape {
            Shape::Rectangle { width, height } => {
                px >= cx - width / 2.0
                    && px < cx + width / 2.0
                    && py >= cy - height / 2.0
                    && py < cy + height / 2.0
            }
            Shape::Disk { radius } => {
                let dx = px - cx;
                let dy = py - cy;
                dx * dx + dy * dy <= radius * radius
            }
        }
    }
}

/// Generator parameters: sensor size, photometry and simulation clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub geometry: SensorGeometry,
    /// Intensity of uncovered pixels; must be positive.
    pub background_intensity: f64,
    /// Log-intensity step per event; smaller values fire more events.
    pub threshold_sigma: f64,
    /// Simulation step in microseconds; intensity is sampled at every
    /// tick and events are stamped within the tick that produced them.
    pub tick_us: u64,
    pub duration_us: u64,
    pub seed: u64,
    /// Upper bound on the uniform backdating applied to each event's
    /// timestamp within its tick; 0 stamps events exactly at tick times.
    /// Effective jitter is capped at `tick_us − 1` so events never leave
    /// their tick.
    pub timestamp_jitter_us: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if !(self.background_intensity > 0.0) {
            return Err(SynthError::BadConfig("background intensity must be positive"));
        }
        if !(self.threshold_sigma > 0.0) {
            return Err(SynthError::BadConfig("threshold must be positive"));
        }
        if self.tick_us == 0 {
            return Err(SynthError::BadConfig("tick must be at least 1 µs"));
        }
        Ok(())
    }
}

/// Pixels are sampled at their centers.
fn sample_point(x: u16, y: u16) -> (f64, f64) {
    (x as f64 + 0.5, y as f64 + 0.5)
}

fn intensity_at(scene: &[SceneObject], config: &SynthConfig, x: u16, y: u16, t_us: u64) -> f64 {
    let (px, py) = sample_point(x, y);
    let mut value = config.background_intensity;
    for object in scene {
        if object.covers(px, py, t_us) {
            value = object.intensity;
        }
    }
    value
}

/// Renders the per-pixel intensity raster at one instant, row-major.
pub fn render_intensity(scene: &[SceneObject], config: &SynthConfig, t_us: u64) -> Vec<f64> {
    let g = config.geometry;
    let mut raster = Vec::with_capacity(g.pixel_count());
    for y in 0..g.height {
        for x in 0..g.width {
            raster.push(intensity_at(scene, config, x, y, t_us));
        }
    }
    raster
}

/// Evaluates exact ground-truth labels for a scene at any instant.
#[derive(Debug, Clone)]
pub struct SceneLabeler {
    geometry: SensorGeometry,
    objects: Vec<SceneObject>,
}

impl SceneLabeler {
    pub fn new(geometry: SensorGeometry, objects: Vec<SceneObject>) -> Self {
        SceneLabeler { geometry, objects }
    }

    /// Per-pixel class ids at time `t_us`: the topmost covering object's
    /// class, or 0 for background.
    pub fn label_at(&self, t_us: u64) -> LabelMap {
        let g = self.geometry;
        let mut data = vec![0u8; g.pixel_count()];
        for y in 0..g.height {
            for x in 0..g.width {
                let (px, py) = sample_point(x, y);
                let mut class = 0u8;
                for object in &self.objects {
                    if object.covers(px, py, t_us) {
                        class = object.class_id;
                    }
                }
                data[y as usize * g.width as usize + x as usize] = class;
            }
        }
        LabelMap::new(g, data).expect("sized to geometry")
    }
}

/// Simulates the stream a threshold-trigger sensor would emit.
///
/// Each pixel holds a reference log-intensity, initialized at t = 0. At
/// every tick the current log-intensity is compared against it: each full
/// threshold step above emits one positive event and raises the
/// reference by one step; below, symmetrically. A change spanning k steps
/// in one tick therefore emits k events. Timestamps sit at the tick time,
/// optionally backdated by uniform jitter within the tick; the stream is
/// stably ordered by (t, y, x, polarity).
pub fn generate_events(
    scene: &[SceneObject],
    config: &SynthConfig,
) -> Result<(EventStream, SceneLabeler), SynthError> {
    config.validate()?;
    for object in scene {
        object.validate()?;
    }
    let g = config.geometry;
    let sigma = config.threshold_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = config.timestamp_jitter_us.min(config.tick_us - 1);

    let mut reference: Vec<f64> = render_intensity(scene, config, 0)
        .into_iter()
        .map(f64::ln)
        .collect();
    let mut events: Vec<Event> = Vec::new();
    let ticks = config.duration_us / config.tick_us;
    for k in 1..=ticks {
        let t = k * config.tick_us;
        for y in 0..g.height {
            for x in 0..g.width {
                let px = y as usize * g.width as usize + x as usize;
                let log_i = intensity_at(scene, config, x, y, t).ln();
                let mut emit = |polarity: Polarity, rng: &mut ChaCha8Rng| {
                    let backdate = if jitter > 0 { rng.gen_range(0..=jitter) } else { 0 };
                    events.push(Event {
                        t_us: t - backdate,
                        x,
                        y,
                        polarity,
                    });
                };
                while log_i - reference[px] >= sigma {
                    emit(Polarity::Positive, &mut rng);
                    reference[px] += sigma;
                }
                while reference[px] - log_i >= sigma {
                    emit(Polarity::Negative, &mut rng);
                    reference[px] -= sigma;
                }
            }
        }
    }
    events.sort_by_key(|e| (e.t_us, e.y, e.x, e.polarity.sign()));
    let stream = EventStream::new(g, events).expect("generated events are ordered and in bounds");
    Ok((stream, SceneLabeler::new(g, scene.to_vec())))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    config: RawConfig,
    #[serde(default, rename = "object")]
    objects: Vec<RawObject>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    width: u16,
    height: u16,
    background_intensity: f64,
    threshold_sigma: f64,
    tick_us: u64,
    duration_us: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    timestamp_jitter_us: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    shape: String,
    radius: Option<f64>,
    width: Option<f64>,
    height: Option<f64>,
    class_id: u8,
    intensity: f64,
    position: [f64; 2],
    velocity: Option<[f64; 2]>,
}

/// Parses a TOML scene description:
///
/// ```toml
/// [config]
/// width = 64
/// height = 64
/// background_intensity = 1.0
/// threshold_sigma = 0.4
/// tick_us = 1000
/// duration_us = 500000
/// seed = 7                  # optional, default 0
/// timestamp_jitter_us = 0   # optional, default 0
///
/// [[object]]
/// shape = "disk"            # or "rectangle" (width/height instead of radius)
/// radius = 5.0
/// class_id = 4
/// intensity = 2.0
/// position = [10.0, 32.0]
/// velocity = [120.0, 0.0]   # optional, default static
/// ```
pub fn parse_scene(text: &str) -> Result<(SynthConfig, Vec<SceneObject>), SynthError> {
    let raw: RawScene = toml::from_str(text)?;
    let geometry = SensorGeometry::new(raw.config.width, raw.config.height)
        .map_err(|_| SynthError::BadConfig("sensor must be at least 1x1"))?;
    let config = SynthConfig {
        geometry,
        background_intensity: raw.config.background_intensity,
        threshold_sigma: raw.config.threshold_sigma,
        tick_us: raw.config.tick_us,
        duration_us: raw.config.duration_us,
        seed: raw.config.seed,
        timestamp_jitter_us: raw.config.timestamp_jitter_us,
    };
    config.validate()?;
    let mut objects = Vec::with_capacity(raw.objects.len());
    for o in raw.objects {
        let shape = match o.shape.as_str() {
            "rectangle" => {
                if o.radius.is_some() {
                    return Err(SynthError::BadScene("rectangle does not take a radius"));
                }
                Shape::Rectangle {
                    width: o.width.ok_or(SynthError::BadScene("rectangle needs a width"))?,
                    height: o.height.ok_or(SynthError::BadScene("rectangle needs a height"))?,
                }
            }
            "disk" => {
                if o.width.is_some() || o.height.is_some() {
                    return Err(SynthError::BadScene("disk does not take width/height"));
                }
                Shape::Disk {
                    radius: o.radius.ok_or(SynthError::BadScene("disk needs a radius"))?,
                }
            }
            _ => return Err(SynthError::BadScene("shape must be \"rectangle\" or \"disk\"")),
        };
        let object = SceneObject {
            shape,
            class_id: o.class_id,
            intensity: o.intensity,
            position: (o.position[0], o.position[1]),
            velocity: o.velocity.map_or((0.0, 0.0), |v| (v[0], v[1])),
        };
        object.validate()?;
        objects.push(object);
    }
    Ok((config, objects))
}
