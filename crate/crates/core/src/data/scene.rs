//! Procedural bouncing-shape scenes with injectable anomalies.
//!
//! Objects move linearly and reflect elastically off the frame borders.
//! Rendering is additive and clamped to `[0, 1]`. Anything left unspecified
//! (initial position, velocity direction) is drawn from the seed.
//!
//! # Scene file
//!
//! ```text
//! frame_size = 16
//! bounce = true          # false wraps objects around the borders
//! speed = 1              # per-axis speed for objects without vx/vy
//! objects.0.shape = square     # square | disc | cross
//! objects.0.size = 4
//! objects.0.x = 2              # optional, top-left column
//! objects.0.y = 5              # optional, top-left row
//! objects.0.vx = 1             # optional, pixels per frame
//! objects.0.vy = -1
//! objects.0.intensity = 1.0
//! anomalies.0.kind = speedup   # speedup | reverse | intrusion
//! anomalies.0.object = 0
//! anomalies.0.factor = 3
//! anomalies.0.start = 100
//! anomalies.0.end = 219
//! ```
//!
//! An `intrusion` anomaly takes the object keys (`shape`, `size`, `x`, ...)
//! directly under `anomalies.N.` and exists only during its interval.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::VideoClip;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::kv::KvDoc;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Disc,
    Cross,
}

impl FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "square" => Ok(ShapeKind::Square),
            "disc" => Ok(ShapeKind::Disc),
            "cross" => Ok(ShapeKind::Cross),
            other => Err(format!("unknown shape `{other}`")),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Square => "square",
            ShapeKind::Disc => "disc",
            ShapeKind::Cross => "cross",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    /// Bounding-box side in pixels.
    pub size: usize,
    /// Top-left `(x, y)`; random when `None`.
    pub position: Option<(f64, f64)>,
    /// `(vx, vy)` in pixels per frame; `(±speed, ±speed)` with random signs when `None`.
    pub velocity: Option<(f64, f64)>,
    pub intensity: f64,
}

impl ObjectSpec {
    pub fn new(shape: ShapeKind, size: usize) -> Self {
        ObjectSpec {
            shape,
            size,
            position: None,
            velocity: None,
            intensity: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnomalyKind {
    /// Multiply an object's velocity by `factor` during the interval.
    SpeedUp { object: usize, factor: f64 },
    /// Move an object against its normal direction during the interval.
    WrongDirection { object: usize },
    /// An extra object present only during the interval.
    Intrusion(ObjectSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Inclusive frame interval.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub frame_size: usize,
    pub objects: Vec<ObjectSpec>,
    pub bounce: bool,
    /// Speed used for randomly oriented velocities.
    pub speed: f64,
    pub anomalies: Vec<AnomalySpec>,
}

impl SceneSpec {
    pub fn new(frame_size: usize, objects: Vec<ObjectSpec>) -> Self {
        SceneSpec {
            frame_size,
            objects,
            bounce: true,
            speed: 1.0,
            anomalies: Vec::new(),
        }
    }

    fn check_object(&self, o: &ObjectSpec, what: &str) -> Result<()> {
        if o.size == 0 || o.size > self.frame_size {
            return Err(Error::config(format!(
                "{what}: size {} does not fit a {} pixel frame",
                o.size, self.frame_size
            )));
        }
        if let Some((x, y)) = o.position {
            let hi = (self.frame_size - o.size) as f64;
            if !(0.0..=hi).contains(&x) || !(0.0..=hi).contains(&y) {
                return Err(Error::config(format!(
                    "{what}: spawn position ({x}, {y}) leaves the frame (valid 0..={hi})"
                )));
            }
        }
        if !(0.0..=1.0).contains(&o.intensity) {
            return Err(Error::config(format!("{what}: intensity must be in [0, 1]")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 {
            return Err(Error::config("frame_size must be positive"));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::config("speed must be positive"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            self.check_object(o, &format!("object {i}"))?;
        }
        for (i, a) in self.anomalies.iter().enumerate() {
            if a.start > a.end {
                return Err(Error::config(format!("anomaly {i}: start > end")));
            }
            match &a.kind {
                AnomalyKind::SpeedUp { object, factor } => {
                    if *object >= self.objects.len() {
                        return Err(Error::config(format!("anomaly {i}: no object {object}")));
                    }
                    if !(factor.is_finite() && *factor > 0.0) {
                        return Err(Error::config(format!("anomaly {i}: factor must be positive")));
                    }
                }
                AnomalyKind::WrongDirection { object } => {
                    if *object >= self.objects.len() {
                        return Err(Error::config(format!("anomaly {i}: no object {object}")));
                    }
                }
                AnomalyKind::Intrusion(o) => self.check_object(o, &format!("anomaly {i}"))?,
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        let frame_size: usize = doc.require("frame_size")?;
        let mut spec = SceneSpec::new(frame_size, Vec::new());
        spec.bounce = doc.parse_or("bounce", true)?;
        spec.speed = doc.parse_or("speed", 1.0)?;

        let mut object_ids = BTreeSet::new();
        let mut anomaly_ids = BTreeSet::new();
        for key in doc.keys() {
            let mut parts = key.splitn(3, '.');
            let (group, id, field) = (parts.next(), parts.next(), parts.next());
            match (group, id, field) {
                (Some("frame_size" | "bounce" | "speed"), None, None) => {}
                (Some(g @ ("objects" | "anomalies")), Some(id), Some(field)) => {
                    let n: usize = id
                        .parse()
                        .map_err(|_| Error::config(format!("bad index in key `{key}`")))?;
                    let known = if g == "objects" {
                        OBJECT_FIELDS.contains(&field)
                    } else {
                        ANOMALY_FIELDS.contains(&field) || OBJECT_FIELDS.contains(&field)
                    };
                    if !known {
                        return Err(Error::config(format!("unknown key `{key}`")));
                    }
                    if g == "objects" {
                        object_ids.insert(n);
                    } else {
                        anomaly_ids.insert(n);
                    }
                }
                _ => return Err(Error::config(format!("unknown key `{key}`"))),
            }
        }
        for (expected, &n) in object_ids.iter().enumerate() {
            if n != expected {
                return Err(Error::config(format!("object indices must be 0..N, missing {expected}")));
            }
            spec.objects.push(parse_object(&doc, &format!("objects.{n}"))?);
        }
        for (expected, &n) in anomaly_ids.iter().enumerate() {
            if n != expected {
                return Err(Error::config(format!("anomaly indices must be 0..N, missing {expected}")));
            }
            let p = format!("anomalies.{n}");
            let kind: String = doc.require(&format!("{p}.kind"))?;
            let start = doc.require(&format!("{p}.start"))?;
            let end = doc.require(&format!("{p}.end"))?;
            let kind = match kind.as_str() {
                "speedup" => AnomalyKind::SpeedUp {
                    object: doc.require(&format!("{p}.object"))?,
                    factor: doc.parse_or(&format!("{p}.factor"), 3.0)?,
                },
                "reverse" => AnomalyKind::WrongDirection {
                    object: doc.require(&format!("{p}.object"))?,
                },
                "intrusion" => AnomalyKind::Intrusion(parse_object(&doc, &p)?),
                other => return Err(Error::config(format!("{p}.kind: unknown anomaly `{other}`"))),
            };
            spec.anomalies.push(AnomalySpec { kind, start, end });
        }
        spec.validate()?;
        Ok(spec)
    }
}

const OBJECT_FIELDS: &[&str] = &["shape", "size", "x", "y", "vx", "vy", "intensity"];
const ANOMALY_FIELDS: &[&str] = &["kind", "object", "factor", "start", "end"];

fn pair(doc: &KvDoc, a: &str, b: &str) -> Result<Option<(f64, f64)>> {
    match (doc.parse_opt::<f64>(a)?, doc.parse_opt::<f64>(b)?) {
        (Some(x), Some(y)) => Ok(Some((x, y))),
        (None, None) => Ok(None),
        _ => Err(Error::config(format!("`{a}` and `{b}` must be given together"))),
    }
}

fn parse_object(doc: &KvDoc, prefix: &str) -> Result<ObjectSpec> {
    Ok(ObjectSpec {
        shape: doc.require(&format!("{prefix}.shape"))?,
        size: doc.require(&format!("{prefix}.size"))?,
        position: pair(doc, &format!("{prefix}.x"), &format!("{prefix}.y"))?,
        velocity: pair(doc, &format!("{prefix}.vx"), &format!("{prefix}.vy"))?,
        intensity: doc.parse_or(&format!("{prefix}.intensity"), 1.0)?,
    })
}

struct Body {
    shape: ShapeKind,
    size: usize,
    pos: (f64, f64),
    vel: (f64, f64),
    intensity: f64,
    /// Frames during which the body is drawn.
    alive: Interval,
}

fn resolve(o: &ObjectSpec, side: usize, speed: f64, alive: Interval, rng: &mut ChaCha8Rng) -> Body {
    let hi = (side - o.size) as f64;
    let pos = o
        .position
        .unwrap_or_else(|| (rng.gen_range(0.0..=hi).round(), rng.gen_range(0.0..=hi).round()));
    let vel = o.velocity.unwrap_or_else(|| {
        let sx = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let sy = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        (sx * speed, sy * speed)
    });
    Body {
        shape: o.shape,
        size: o.size,
        pos,
        vel,
        intensity: o.intensity,
        alive,
    }
}

/// Reflect `p` into `[0, hi]`; returns the new position and whether the direction flipped.
fn reflect(mut p: f64, hi: f64) -> (f64, bool) {
    if hi <= 0.0 {
        return (0.0, false);
    }
    let mut flipped = false;
    loop {
        if p < 0.0 {
            p = -p;
        } else if p > hi {
            p = 2.0 * hi - p;
        } else {
            return (p, flipped);
        }
        flipped = !flipped;
    }
}

fn draw(frame: &mut [f64], side: usize, body: &Body, wrap: bool) {
    let x0 = body.pos.0.round() as isize;
    let y0 = body.pos.1.round() as isize;
    let s = body.size as isize;
    let arm = (body.size / 3).max(1) as isize;
    let arm_lo = (s - arm) / 2;
    let r = body.size as f64 / 2.0;
    for dy in 0..s {
        for dx in 0..s {
            let inside = match body.shape {
                ShapeKind::Square => true,
                ShapeKind::Disc => {
                    let cx = dx as f64 + 0.5 - r;
                    let cy = dy as f64 + 0.5 - r;
                    cx * cx + cy * cy <= r * r
                }
                ShapeKind::Cross => {
                    (arm_lo..arm_lo + arm).contains(&dx) || (arm_lo..arm_lo + arm).contains(&dy)
                }
            };
            if !inside {
                continue;
            }
            let (mut x, mut y) = (x0 + dx, y0 + dy);
            let n = side as isize;
            if wrap {
                x = x.rem_euclid(n);
                y = y.rem_euclid(n);
            } else if x < 0 || y < 0 || x >= n || y >= n {
                continue;
            }
            frame[y as usize * side + x as usize] += body.intensity;
        }
    }
}

/// Render `length` frames of `spec`; the returned clip's ground truth is the
/// union of the anomaly intervals (clipped to the clip).
pub fn generate(spec: &SceneSpec, length: usize, seed: u64) -> Result<VideoClip> {
    if length == 0 {
        return Err(Error::usage("clip length must be >= 1"));
    }
    spec.validate()?;
    let side = spec.frame_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forever = Interval {
        start: 0,
        end: usize::MAX,
    };
    let mut bodies: Vec<Body> = spec
        .objects
        .iter()
        .map(|o| resolve(o, side, spec.speed, forever, &mut rng))
        .collect();
    for a in &spec.anomalies {
        if let AnomalyKind::Intrusion(o) = &a.kind {
            let alive = Interval {
                start: a.start,
                end: a.end,
            };
            bodies.push(resolve(o, side, spec.speed, alive, &mut rng));
        }
    }

    // per-body step multiplier for the move into frame `f`
    let multiplier = |b: usize, f: usize| -> f64 {
        spec.anomalies
            .iter()
            .filter(|a| a.start <= f && f <= a.end)
            .map(|a| match a.kind {
                AnomalyKind::SpeedUp { object, factor } if object == b => factor,
                AnomalyKind::WrongDirection { object } if object == b => -1.0,
                _ => 1.0,
            })
            .product()
    };

    let mut frames = Vec::with_capacity(length);
    for f in 0..length {
        if f > 0 {
            for (i, body) in bodies.iter_mut().enumerate() {
                if f <= body.alive.start {
                    continue;
                }
                let m = multiplier(i, f);
                let hi = (side - body.size) as f64;
                let nx = body.pos.0 + body.vel.0 * m;
                let ny = body.pos.1 + body.vel.1 * m;
                if spec.bounce {
                    let (x, fx) = reflect(nx, hi);
                    let (y, fy) = reflect(ny, hi);
                    body.pos = (x, y);
                    if fx {
                        body.vel.0 = -body.vel.0;
                    }
                    if fy {
                        body.vel.1 = -body.vel.1;
                    }
                } else {
                    let n = side as f64;
                    body.pos = (nx.rem_euclid(n), ny.rem_euclid(n));
                }
            }
        }
        let mut data = vec![0.0; side * side];
        for body in bodies.iter().filter(|b| b.alive.contains(f)) {
            draw(&mut data, side, body, !spec.bounce);
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        frames.push(Tensor::new([1, side, side], data)?);
    }

    let gt = spec
        .anomalies
        .iter()
        .filter(|a| a.start < length)
        .map(|a| Interval {
            start: a.start,
            end: a.end.min(length - 1),
        })
        .collect();
    VideoClip::new(frames, gt)
}
