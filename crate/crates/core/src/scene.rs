//! Seeded construction of the underwater world and the camera trajectory.
//!
//! World frame: `z` points up, the seabed is the plane `z = seabed_depth`
//! (negative), the water surface is `z = 0`. The patch spans
//! `[-ex/2, ex/2] x [-ey/2, ey/2]` horizontally. Particles live in the box
//! formed by the patch and the depth interval `[seabed_depth, 0)` and wrap
//! around it as they drift.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::rng::{stream, SplitMix64};

/// One keyframe of the camera path. Yaw is measured about `+z` from `+x`,
/// pitch is positive upwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub time: f64,
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl Waypoint {
    pub fn new(time: f64, position: Vec3, yaw: f64, pitch: f64) -> Self {
        Self {
            time,
            position,
            yaw,
            pitch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    /// Horizontal (x, y) span of the seabed patch in meters.
    pub world_extent: (f64, f64),
    pub seabed_depth: f64,
    pub seabed_albedo: f64,
    pub rock_count: usize,
    pub rock_radius_range: (f64, f64),
    pub particle_count: usize,
    pub particle_radius_base: f64,
    pub particle_scale: f64,
    pub particle_drift: Vec3,
    pub attenuation_coeff: f64,
    pub spotlight_power: f64,
    pub spotlight_cone_deg: f64,
    pub spotlight_falloff_exp: f64,
    /// Surface-lighting floor as a fraction of `spotlight_power`.
    pub ambient_fraction: f64,
    /// Peak-to-peak relative albedo variation of the rock texture.
    pub rock_texture_amp: f64,
    /// Rock texture lattice cells per meter.
    pub rock_texture_freq: f64,
    pub camera_waypoints: Vec<Waypoint>,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub duration: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            world_extent: (20.0, 20.0),
            seabed_depth: -5.0,
            seabed_albedo: 0.35,
            rock_count: 25,
            rock_radius_range: (0.2, 0.8),
            particle_count: 5000,
            particle_radius_base: 0.01,
            particle_scale: 1.0,
            particle_drift: Vec3::new(0.05, 0.02, 0.0),
            attenuation_coeff: 0.4,
            spotlight_power: 10.0,
            spotlight_cone_deg: 90.0,
            spotlight_falloff_exp: 1.0,
            ambient_fraction: 0.001,
            rock_texture_amp: 0.9,
            rock_texture_freq: 20.0,
            camera_waypoints: vec![
                Waypoint::new(0.0, Vec3::new(-4.0, 0.0, -2.5), 0.0, -0.6),
                Waypoint::new(10.0, Vec3::new(4.0, 0.0, -2.5), 0.0, -0.6),
            ],
            fov_deg: 70.0,
            width: 320,
            height: 240,
            fps: 30.0,
            duration: 10.0,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

fn finite(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (ex, ey) = self.world_extent;
        finite("world_extent", ex)?;
        finite("world_extent", ey)?;
        if ex <= 0.0 || ey <= 0.0 {
            return Err(invalid("world_extent", "both spans must be > 0"));
        }
        finite("seabed_depth", self.seabed_depth)?;
        if self.seabed_depth >= 0.0 {
            return Err(invalid("seabed_depth", "must be below the surface (< 0)"));
        }
        if !(0.0..=1.0).contains(&self.seabed_albedo) {
            return Err(invalid("seabed_albedo", "must lie in [0, 1]"));
        }
        if self.rock_count > u16::MAX as usize {
            return Err(invalid("rock_count", "at most 65535 rocks fit a 16-bit mask"));
        }
        let (rmin, rmax) = self.rock_radius_range;
        finite("rock_radius_range", rmin)?;
        finite("rock_radius_range", rmax)?;
        if !(rmin > 0.0 && rmin <= rmax) {
            return Err(invalid("rock_radius_range", "need 0 < min <= max"));
        }
        finite("particle_radius_base", self.particle_radius_base)?;
        if self.particle_radius_base <= 0.0 {
            return Err(invalid("particle_radius_base", "must be > 0"));
        }
        finite("particle_scale", self.particle_scale)?;
        if self.particle_scale <= 0.0 {
            return Err(invalid("particle_scale", "must be > 0"));
        }
        for c in self.particle_drift.to_array() {
            finite("particle_drift", c)?;
        }
        finite("attenuation_coeff", self.attenuation_coeff)?;
        if self.attenuation_coeff < 0.0 {
            return Err(invalid("attenuation_coeff", "must be >= 0"));
        }
        finite("spotlight_power", self.spotlight_power)?;
        if self.spotlight_power < 0.0 {
            return Err(invalid("spotlight_power", "must be >= 0"));
        }
        if !(self.spotlight_cone_deg > 0.0 && self.spotlight_cone_deg < 180.0) {
            return Err(invalid("spotlight_cone_deg", "must lie in (0, 180)"));
        }
        finite("spotlight_falloff_exp", self.spotlight_falloff_exp)?;
        if self.spotlight_falloff_exp < 0.0 {
            return Err(invalid("spotlight_falloff_exp", "must be >= 0"));
        }
        finite("ambient_fraction", self.ambient_fraction)?;
        if self.ambient_fraction < 0.0 {
            return Err(invalid("ambient_fraction", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.rock_texture_amp) {
            return Err(invalid("rock_texture_amp", "must lie in [0, 1]"));
        }
        finite("rock_texture_freq", self.rock_texture_freq)?;
        if self.rock_texture_freq <= 0.0 {
            return Err(invalid("rock_texture_freq", "must be > 0"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(invalid("fov_deg", "must lie in (0, 180)"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(invalid("width", "width and height must be >= 16"));
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(invalid("width", "width and height must fit in 16 bits"));
        }
        finite("fps", self.fps)?;
        if self.fps <= 0.0 {
            return Err(invalid("fps", "must be > 0"));
        }
        finite("duration", self.duration)?;
        if self.duration < 0.0 {
            return Err(invalid("duration", "must be >= 0"));
        }
        self.validate_waypoints()
    }

    fn validate_waypoints(&self) -> Result<()> {
        let wps = &self.camera_waypoints;
        let (Some(first), Some(last)) = (wps.first(), wps.last()) else {
            return Err(invalid("camera_waypoints", "at least one waypoint required"));
        };
        for w in wps {
            for c in [w.time, w.position.x, w.position.y, w.position.z, w.yaw, w.pitch] {
                finite("camera_waypoints", c)?;
            }
            if w.pitch.abs() >= PI / 2.0 {
                return Err(invalid("camera_waypoints", "pitch must lie in (-pi/2, pi/2)"));
            }
        }
        if wps.windows(2).any(|p| p[1].time <= p[0].time) {
            return Err(invalid(
                "camera_waypoints",
                "times must be strictly increasing",
            ));
        }
        if first.time > 0.0 || last.time < self.duration {
            return Err(invalid(
                "camera_waypoints",
                format!(
                    "must cover [0, {}], got [{}, {}]",
                    self.duration, first.time, last.time
                ),
            ));
        }
        Ok(())
    }

    /// Number of frames rendered over `[0, duration)`.
    pub fn frame_count(&self) -> usize {
        // Guard against 2.9999999 style products.
        (self.fps * self.duration + 1e-9).floor() as usize
    }

    /// Lower corner of the particle volume.
    pub fn volume_min(&self) -> Vec3 {
        Vec3::new(
            -self.world_extent.0 / 2.0,
            -self.world_extent.1 / 2.0,
            self.seabed_depth,
        )
    }

    /// Edge lengths of the particle volume.
    pub fn volume_size(&self) -> Vec3 {
        Vec3::new(self.world_extent.0, self.world_extent.1, -self.seabed_depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rock {
    pub center: Vec3,
    /// Axis-aligned ellipsoid semi-axes.
    pub radii: Vec3,
    pub albedo: f64,
    pub instance_id: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec3,
    pub radius: f64,
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rocks: Vec<Rock>,
    pub particles: Vec<Particle>,
    pub config: SceneConfig,
}

/// Camera pose as position plus yaw/pitch. Roll is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
    pub time: f64,
}

/// Orthonormal camera basis in world coordinates. Camera space is
/// `x` right, `y` down, `z` forward.
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
}

impl CameraPose {
    pub fn basis(&self) -> CameraBasis {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Vec3::new(cp * cy, cp * sy, sp);
        let right = Vec3::new(sy, -cy, 0.0);
        let down = forward.cross(right);
        CameraBasis {
            right,
            down,
            forward,
        }
    }

    /// Unit viewing direction.
    pub fn forward(&self) -> Vec3 {
        self.basis().forward
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let b = self.basis();
        let d = p - self.position;
        Vec3::new(d.dot(b.right), d.dot(b.down), d.dot(b.forward))
    }
}

fn rock_at(config: &SceneConfig, index: usize) -> Rock {
    let mut rng = SplitMix64::keyed(config.seed, stream::ROCK, index as u64);
    let (ex, ey) = config.world_extent;
    let (rmin, rmax) = config.rock_radius_range;
    let x = rng.uniform(-ex / 2.0, ex / 2.0);
    let y = rng.uniform(-ey / 2.0, ey / 2.0);
    let radii = Vec3::new(
        rng.uniform(rmin, rmax),
        rng.uniform(rmin, rmax),
        rng.uniform(rmin, rmax),
    );
    let albedo = rng.uniform(0.45, 0.85);
    Rock {
        center: Vec3::new(x, y, config.seabed_depth + radii.z),
        radii,
        albedo,
        instance_id: (index + 1) as u16,
    }
}

fn particle_at(config: &SceneConfig, index: usize) -> Particle {
    let mut rng = SplitMix64::keyed(config.seed, stream::PARTICLE, index as u64);
    let lo = config.volume_min();
    let size = config.volume_size();
    let position = Vec3::new(
        lo.x + size.x * rng.next_f64(),
        lo.y + size.y * rng.next_f64(),
        lo.z + size.z * rng.next_f64(),
    );
    let jitter = rng.uniform(0.5, 1.5);
    let brightness = rng.uniform(0.1, 0.5);
    Particle {
        position,
        // Scale applied last so radii are exactly proportional to it.
        radius: config.particle_radius_base * jitter * config.particle_scale,
        brightness,
    }
}

/// Builds the scene. Every rock and particle draws from its own keyed
/// stream, so the result is independent of construction order.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let rocks = (0..config.rock_count).map(|i| rock_at(config, i)).collect();
    let particles = (0..config.particle_count)
        .map(|i| particle_at(config, i))
        .collect();
    Ok(Scene {
        rocks,
        particles,
        config: config.clone(),
    })
}

/// Wraps `v` into the shortest equivalent angle in `(-pi, pi]`.
fn wrap_angle(v: f64) -> f64 {
    let w = (v + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Camera pose at time `t`: linear in position and pitch, shortest-arc in
/// yaw between the bracketing waypoints.
pub fn camera_pose_at(config: &SceneConfig, t: f64) -> Result<CameraPose> {
    if !(0.0..=config.duration).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            duration: config.duration,
        });
    }
    let wps = &config.camera_waypoints;
    // Last waypoint with time <= t.
    let k = wps.partition_point(|w| w.time <= t);
    let pose = |w: &Waypoint| CameraPose {
        position: w.position,
        yaw: w.yaw,
        pitch: w.pitch,
        time: t,
    };
    if k == 0 {
        return Ok(pose(&wps[0]));
    }
    let a = &wps[k - 1];
    if a.time == t || k == wps.len() {
        return Ok(pose(a));
    }
    let b = &wps[k];
    let s = (t - a.time) / (b.time - a.time);
    let lerp = |x: f64, y: f64| x + (y - x) * s;
    Ok(CameraPose {
        position: Vec3::new(
            lerp(a.position.x, b.position.x),
            lerp(a.position.y, b.position.y),
            lerp(a.position.z, b.position.z),
        ),
        yaw: a.yaw + wrap_angle(b.yaw - a.yaw) * s,
        pitch: lerp(a.pitch, b.pitch),
        time: t,
    })
}

#[inline]
fn wrap_into(v: f64, lo: f64, span: f64) -> f64 {
    let w = lo + (v - lo).rem_euclid(span);
    // rem_euclid may round up to exactly `span` for tiny negatives.
    if w >= lo + span {
        lo
    } else {
        w
    }
}

/// Moves every particle by `particle_drift * dt`, wrapping around the
/// world volume.
pub fn advect_particles(scene: &Scene, dt: f64) -> Scene {
    let cfg = &scene.config;
    let lo = cfg.volume_min();
    let size = cfg.volume_size();
    let shift = cfg.particle_drift * dt;
    let particles = scene
        .particles
        .iter()
        .map(|p| {
            if dt == 0.0 {
                return p.clone();
            }
            let q = p.position + shift;
            Particle {
                position: Vec3::new(
                    wrap_into(q.x, lo.x, size.x),
                    wrap_into(q.y, lo.y, size.y),
                    wrap_into(q.z, lo.z, size.z),
                ),
                ..p.clone()
            }
        })
        .collect();
    Scene {
        rocks: scene.rocks.clone(),
        particles,
        config: scene.config.clone(),
    }
}

/// Line-oriented scene manifest. Floats use the shortest round-trip
/// representation, so [`parse_scene_dump`] restores the scene exactly.
pub fn scene_dump(scene: &Scene) -> String {
    let mut out = String::new();
    out.push_str("# rock id cx cy cz rx ry rz albedo\n");
    out.push_str("# particle x y z r b\n");
    for r in &scene.rocks {
        let _ = writeln!(
            out,
            "rock {} {} {} {} {} {} {} {}",
            r.instance_id,
            r.center.x,
            r.center.y,
            r.center.z,
            r.radii.x,
            r.radii.y,
            r.radii.z,
            r.albedo
        );
    }
    for p in &scene.particles {
        let _ = writeln!(
            out,
            "particle {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.radius, p.brightness
        );
    }
    out
}

pub fn parse_scene_dump(text: &str, config: &SceneConfig) -> Result<Scene> {
    let mut rocks = Vec::new();
    let mut particles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let tag = fields.next().unwrap_or_default();
        let nums: Vec<&str> = fields.collect();
        let float = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                reason: format!("bad number `{s}`"),
            })
        };
        match (tag, nums.len()) {
            ("rock", 8) => {
                let id = nums[0].parse::<u16>().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("bad instance id `{}`", nums[0]),
                })?;
                let v: Vec<f64> = nums[1..].iter().map(|s| float(s)).collect::<Result<_>>()?;
                rocks.push(Rock {
                    center: Vec3::new(v[0], v[1], v[2]),
                    radii: Vec3::new(v[3], v[4], v[5]),
                    albedo: v[6],
                    instance_id: id,
                });
            }
            ("particle", 5) => {
                let v: Vec<f64> = nums.iter().map(|s| float(s)).collect::<Result<_>>()?;
                particles.push(Particle {
                    position: Vec3::new(v[0], v[1], v[2]),
                    radius: v[3],
                    brightness: v[4],
                });
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("unrecognized record `{line}`"),
                })
            }
        }
    }
    Ok(Scene {
        rocks,
        particles,
        config: config.clone(),
    })
}
