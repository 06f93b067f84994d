//! Flat `key = value` configuration files.
//!
//! One pair per line, `#` starts a comment, keys are field names. Tuples
//! are written in parentheses, `(0.2, 0.8)`; the waypoint list is a
//! comma-separated run of `(t, x, y, z, yaw, pitch)` tuples. Unknown keys
//! are rejected.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::DvsParams;
use crate::math::Vec3;
use crate::scene::{SceneConfig, Waypoint};

/// Everything a pipeline run needs: the scene plus the sensor model and the
/// downstream knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub dvs: DvsParams,
    /// Linear radiance to 8-bit scale for preview images.
    pub exposure: f64,
    pub window_us: u64,
    pub event_gain: f64,
    pub density_threshold: f64,
    pub blob_min_area: usize,
    /// Ground-truth visibility floor; `None` scales 16 px at 320x240 to the
    /// configured resolution.
    pub min_visible_area: Option<usize>,
    pub iou_threshold: f64,
    pub split_ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            dvs: DvsParams::default(),
            exposure: 255.0,
            window_us: 33_333,
            event_gain: 64.0,
            density_threshold: 1.0,
            blob_min_area: 150,
            min_visible_area: None,
            iou_threshold: 0.5,
            split_ratio: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.dvs.validate()?;
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.exposure.is_finite() && self.exposure > 0.0) {
            return bad("exposure", "must be finite and > 0");
        }
        if self.window_us == 0 {
            return bad("window_us", "must be > 0");
        }
        if !(self.event_gain.is_finite() && self.event_gain >= 0.0) {
            return bad("event_gain", "must be finite and >= 0");
        }
        if !(self.density_threshold.is_finite() && self.density_threshold > 0.0) {
            return bad("density_threshold", "must be finite and > 0");
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return bad("iou_threshold", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return bad("split_ratio", "must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn min_visible_area(&self) -> usize {
        self.min_visible_area.unwrap_or_else(|| {
            let pixels = (self.scene.width * self.scene.height) as f64;
            ((16.0 * pixels / (320.0 * 240.0)).round() as usize).max(1)
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::parse(&text)
    }

    /// Parses a config file. Keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigParse {
                    line: line_no,
                    key: line.to_string(),
                    reason: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            cfg.set(key, value.trim()).map_err(|reason| Error::ConfigParse {
                line: line_no,
                key: key.to_string(),
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let s = &mut self.scene;
        let d = &mut self.dvs;
        match key {
            "seed" => s.seed = scalar(v)?,
            "world_extent" => s.world_extent = pair(v)?,
            "seabed_depth" => s.seabed_depth = scalar(v)?,
            "seabed_albedo" => s.seabed_albedo = scalar(v)?,
            "rock_count" => s.rock_count = scalar(v)?,
            "rock_radius_range" => s.rock_radius_range = pair(v)?,
            "particle_count" => s.particle_count = scalar(v)?,
            "particle_radius_base" => s.particle_radius_base = scalar(v)?,
            "particle_scale" => s.particle_scale = scalar(v)?,
            "particle_drift" => s.particle_drift = vec3(v)?,
            "attenuation_coeff" => s.attenuation_coeff = scalar(v)?,
            "spotlight_power" => s.spotlight_power = scalar(v)?,
            "spotlight_cone_deg" => s.spotlight_cone_deg = scalar(v)?,
            "spotlight_falloff_exp" => s.spotlight_falloff_exp = scalar(v)?,
            "ambient_fraction" => s.ambient_fraction = scalar(v)?,
            "rock_texture_amp" => s.rock_texture_amp = scalar(v)?,
            "rock_texture_freq" => s.rock_texture_freq = scalar(v)?,
            "camera_waypoints" => s.camera_waypoints = waypoints(v)?,
            "fov_deg" => s.fov_deg = scalar(v)?,
            "width" => s.width = scalar(v)?,
            "height" => s.height = scalar(v)?,
            "fps" => s.fps = scalar(v)?,
            "duration" => s.duration = scalar(v)?,
            "theta_on" => d.theta_on = scalar(v)?,
            "theta_off" => d.theta_off = scalar(v)?,
            "refractory_us" => d.refractory_us = scalar(v)?,
            "log_eps" => d.log_eps = scalar(v)?,
            "leak_rate_hz" => d.leak_rate_hz = scalar(v)?,
            "noise_seed" => d.noise_seed = scalar(v)?,
            "noise_enabled" => d.noise_enabled = scalar(v)?,
            "exposure" => self.exposure = scalar(v)?,
            "window_us" => self.window_us = scalar(v)?,
            "event_gain" => self.event_gain = scalar(v)?,
            "density_threshold" => self.density_threshold = scalar(v)?,
            "blob_min_area" => self.blob_min_area = scalar(v)?,
            "min_visible_area" => {
                self.min_visible_area = if v == "auto" { None } else { Some(scalar(v)?) }
            }
            "iou_threshold" => self.iou_threshold = scalar(v)?,
            "split_ratio" => self.split_ratio = scalar(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Canonical text form listing every field. Parsing it gives back an
    /// identical config.
    pub fn to_canonical_string(&self) -> String {
        let s = &self.scene;
        let d = &self.dvs;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", s.seed.to_string());
        kv("world_extent", format!("({}, {})", s.world_extent.0, s.world_extent.1));
        kv("seabed_depth", s.seabed_depth.to_string());
        kv("seabed_albedo", s.seabed_albedo.to_string());
        kv("rock_count", s.rock_count.to_string());
        kv(
            "rock_radius_range",
            format!("({}, {})", s.rock_radius_range.0, s.rock_radius_range.1),
        );
        kv("particle_count", s.particle_count.to_string());
        kv("particle_radius_base", s.particle_radius_base.to_string());
        kv("particle_scale", s.particle_scale.to_string());
        let p = s.particle_drift;
        kv("particle_drift", format!("({}, {}, {})", p.x, p.y, p.z));
        kv("attenuation_coeff", s.attenuation_coeff.to_string());
        kv("spotlight_power", s.spotlight_power.to_string());
        kv("spotlight_cone_deg", s.spotlight_cone_deg.to_string());
        kv("spotlight_falloff_exp", s.spotlight_falloff_exp.to_string());
        kv("ambient_fraction", s.ambient_fraction.to_string());
        kv("rock_texture_amp", s.rock_texture_amp.to_string());
        kv("rock_texture_freq", s.rock_texture_freq.to_string());
        let wps: Vec<String> = s
            .camera_waypoints
            .iter()
            .map(|w| {
                format!(
                    "({}, {}, {}, {}, {}, {})",
                    w.time, w.position.x, w.position.y, w.position.z, w.yaw, w.pitch
                )
            })
            .collect();
        kv("camera_waypoints", wps.join(", "));
        kv("fov_deg", s.fov_deg.to_string());
        kv("width", s.width.to_string());
        kv("height", s.height.to_string());
        kv("fps", s.fps.to_string());
        kv("duration", s.duration.to_string());
        kv("theta_on", d.theta_on.to_string());
        kv("theta_off", d.theta_off.to_string());
        kv("refractory_us", d.refractory_us.to_string());
        kv("log_eps", d.log_eps.to_string());
        kv("leak_rate_hz", d.leak_rate_hz.to_string());
        kv("noise_seed", d.noise_seed.to_string());
        kv("noise_enabled", d.noise_enabled.to_string());
        kv("exposure", self.exposure.to_string());
        kv("window_us", self.window_us.to_string());
        kv("event_gain", self.event_gain.to_string());
        kv("density_threshold", self.density_threshold.to_string());
        kv("blob_min_area", self.blob_min_area.to_string());
        kv(
            "min_visible_area",
            self.min_visible_area
                .map_or_else(|| "auto".to_string(), |a| a.to_string()),
        );
        kv("iou_threshold", self.iou_threshold.to_string());
        kv("split_ratio", self.split_ratio.to_string());
        out
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn scalar<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("cannot parse `{}`", v.trim()))
}

fn tuple(v: &str) -> std::result::Result<Vec<f64>, String> {
    let inner = v
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("expected parenthesized tuple, got `{v}`"))?;
    inner.split(',').map(scalar).collect()
}

fn pair(v: &str) -> std::result::Result<(f64, f64), String> {
    match tuple(v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err("expected 2 components".into()),
    }
}

fn vec3(v: &str) -> std::result::Result<Vec3, String> {
    match tuple(v)?[..] {
        [a, b, c] => Ok(Vec3::new(a, b, c)),
        _ => Err("expected 3 components".into()),
    }
}

fn waypoints(v: &str) -> std::result::Result<Vec<Waypoint>, String> {
    let mut out = Vec::new();
    let mut rest = v.trim();
    while !rest.is_empty() {
        let close = rest
            .find(')')
            .ok_or_else(|| "unterminated waypoint tuple".to_string())?;
        match tuple(&rest[..=close])?[..] {
            [t, x, y, z, yaw, pitch] => {
                out.push(Waypoint::new(t, Vec3::new(x, y, z), yaw, pitch))
            }
            _ => return Err("waypoints need 6 components (t, x, y, z, yaw, pitch)".into()),
        }
        rest = rest[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("unexpected `{rest}` after waypoint"));
        }
    }
    if out.is_empty() {
        return Err("empty waypoint list".into());
    }
    Ok(out)
}
