//! Ray-cast renderer: spotlight-only shading with Beer-Lambert water
//! attenuation, additive particle backscatter, rock instance masks and
//! ground-truth boxes.
//!
//! The spotlight sits at the camera and points along the optical axis, so
//! light travels the camera-to-surface distance twice.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::par;
use crate::rng::mix64;
use crate::scene::{advect_particles, camera_pose_at, CameraPose, Rock, Scene, SceneConfig};

/// Particles closer than this (camera-space depth, meters) are skipped.
const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceFrame {
    pub width: usize,
    pub height: usize,
    /// Seconds.
    pub timestamp: f64,
    /// Row-major linear radiance.
    pub pixels: Vec<f32>,
}

impl LuminanceFrame {
    /// Timestamp rounded to whole microseconds.
    pub fn timestamp_us(&self) -> u64 {
        seconds_to_us(self.timestamp)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

pub fn seconds_to_us(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub timestamp: f64,
    /// Row-major rock instance ids, 0 for anything else.
    pub labels: Vec<u16>,
}

impl LabelMask {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }
}

/// Pixel-space box, inclusive min and exclusive max.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthBox {
    pub instance_id: u16,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    pub pixel_area: usize,
}

/// Beer-Lambert decay `i0 * exp(-coeff * distance)`.
#[inline]
pub fn attenuate(intensity_in: f64, coeff: f64, distance: f64) -> f64 {
    intensity_in * (-coeff * distance).exp()
}

/// Pinhole intrinsics derived from the horizontal field of view.
#[derive(Debug, Clone, Copy)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fov_deg: f64, width: usize, height: usize) -> Self {
        let half = (fov_deg.to_radians() / 2.0).tan();
        Self {
            focal: width as f64 / 2.0 / half,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    /// Camera-space unit ray through the center of pixel `(x, y)`.
    #[inline]
    fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.focal,
            (y as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        )
        .normalized()
    }
}

/// Projects a world point to continuous pixel coordinates, `None` when it is
/// behind (or on) the camera plane. The returned point may lie off-screen.
pub fn project(
    point: Vec3,
    pose: &CameraPose,
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Option<(f64, f64)> {
    let k = Intrinsics::new(fov_deg, width, height);
    let pc = pose.world_to_camera(point);
    if pc.z <= 0.0 {
        return None;
    }
    Some((k.cx + k.focal * pc.x / pc.z, k.cy + k.focal * pc.y / pc.z))
}

/// Ray/ellipsoid intersection distance (nearest positive root).
#[inline]
fn hit_ellipsoid(origin: Vec3, dir: Vec3, rock: &Rock) -> Option<f64> {
    // Map into the unit sphere frame.
    let o = (origin - rock.center).div_elem(rock.radii);
    let d = dir.div_elem(rock.radii);
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    if t0 > 1e-9 {
        return Some(t0);
    }
    let t1 = (-b + sq) / a;
    (t1 > 1e-9).then_some(t1)
}

/// Smooth 3D value noise in [0, 1], keyed by `key` so every rock carries
/// its own pattern.
fn value_noise(key: u64, p: Vec3) -> f64 {
    let cell = |i: i64, j: i64, k: i64| {
        let h = mix64(key ^ mix64((i as u64) ^ mix64((j as u64) ^ mix64(k as u64))));
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    };
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (i, j, k) = (fx as i64, fy as i64, fz as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (u, v, w) = (smooth(p.x - fx), smooth(p.y - fy), smooth(p.z - fz));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let x00 = lerp(cell(i, j, k), cell(i + 1, j, k), u);
    let x10 = lerp(cell(i, j + 1, k), cell(i + 1, j + 1, k), u);
    let x01 = lerp(cell(i, j, k + 1), cell(i + 1, j, k + 1), u);
    let x11 = lerp(cell(i, j + 1, k + 1), cell(i + 1, j + 1, k + 1), u);
    lerp(lerp(x00, x10, v), lerp(x01, x11, v), w)
}

/// Textured rock albedo at a surface point, in `[0, 1]`.
fn rock_albedo(rock: &Rock, local: Vec3, cfg: &SceneConfig) -> f64 {
    if cfg.rock_texture_amp == 0.0 {
        return rock.albedo;
    }
    let key = mix64(cfg.seed ^ mix64(0x524f_434b ^ rock.instance_id as u64));
    let q = local * cfg.rock_texture_freq;
    let n = 0.65 * value_noise(key, q) + 0.35 * value_noise(key ^ 1, q * 2.3);
    let a = cfg.rock_texture_amp;
    (rock.albedo * (1.0 - a / 2.0 + a * n)).clamp(0.0, 1.0)
}

struct Lighting {
    power: f64,
    cos_half: f64,
    falloff_exp: f64,
    ambient: f64,
    coeff: f64,
}

impl Lighting {
    fn new(cfg: &SceneConfig) -> Self {
        Self {
            power: cfg.spotlight_power,
            cos_half: (cfg.spotlight_cone_deg.to_radians() / 2.0).cos(),
            falloff_exp: cfg.spotlight_falloff_exp,
            ambient: cfg.ambient_fraction * cfg.spotlight_power,
            coeff: cfg.attenuation_coeff,
        }
    }

    /// Spotlight intensity profile; 1 on the axis, 0 at and beyond the cone
    /// edge.
    #[inline]
    fn cone(&self, cos_angle: f64) -> f64 {
        if cos_angle <= self.cos_half {
            return 0.0;
        }
        let s = ((cos_angle - self.cos_half) / (1.0 - self.cos_half)).min(1.0);
        s.powf(self.falloff_exp)
    }

    #[inline]
    fn surface(&self, cos_angle: f64, cos_surface: f64, albedo: f64, dist: f64) -> f64 {
        let direct = self.power * self.cone(cos_angle) * cos_surface.max(0.0);
        attenuate((direct + self.ambient) * albedo, self.coeff, 2.0 * dist)
    }
}

/// A particle as seen from one pose.
#[derive(Debug, Clone, Copy)]
struct Splat {
    u: f64,
    v: f64,
    radius_px: f64,
    distance: f64,
    radiance: f64,
}

impl Splat {
    fn row_span(&self, height: usize) -> Option<(usize, usize)> {
        let r = self.radius_px.max(0.5);
        let lo = (self.v - r).floor().max(0.0);
        let hi = (self.v + r).ceil().min(height as f64);
        (lo < hi).then_some((lo as usize, hi as usize))
    }

    /// Fraction of pixel `(x, y)` the disk covers. Disks larger than a pixel
    /// cover pixels whose centers lie inside them; sub-pixel disks deposit
    /// their area on the pixel containing the center.
    #[inline]
    fn coverage(&self, x: usize, y: usize) -> f64 {
        if self.radius_px >= 0.5 {
            let dx = x as f64 + 0.5 - self.u;
            let dy = y as f64 + 0.5 - self.v;
            if dx * dx + dy * dy <= self.radius_px * self.radius_px {
                1.0
            } else {
                0.0
            }
        } else if self.u.floor() == x as f64 && self.v.floor() == y as f64 {
            std::f64::consts::PI * self.radius_px * self.radius_px
        } else {
            0.0
        }
    }
}

fn splats(scene: &Scene, pose: &CameraPose, k: &Intrinsics, light: &Lighting) -> Vec<Splat> {
    let cfg = &scene.config;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut out: Vec<(usize, Splat)> = scene
        .particles
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let pc = pose.world_to_camera(p.position);
            if pc.z <= NEAR_PLANE {
                return None;
            }
            let u = k.cx + k.focal * pc.x / pc.z;
            let v = k.cy + k.focal * pc.y / pc.z;
            let radius_px = k.focal * p.radius / pc.z;
            let reach = radius_px.max(0.5);
            if u + reach < 0.0 || u - reach > w || v + reach < 0.0 || v - reach > h {
                return None;
            }
            let distance = pc.length();
            let cos_angle = pc.z / distance;
            let radiance = attenuate(
                light.power * light.cone(cos_angle) * p.brightness,
                light.coeff,
                2.0 * distance,
            );
            (radiance > 0.0).then_some((
                i,
                Splat {
                    u,
                    v,
                    radius_px,
                    distance,
                    radiance,
                },
            ))
        })
        .collect();
    // Front to back, index breaks ties.
    out.sort_by(|a, b| a.1.distance.total_cmp(&b.1.distance).then(a.0.cmp(&b.0)));
    out.into_iter().map(|(_, s)| s).collect()
}

/// Renders one frame of `scene` (particles already at their positions for
/// this instant) from `pose`.
///
/// Per pixel the nearest of seabed plane and rock ellipsoids is shaded;
/// particles then add their backscatter to every pixel whose surface lies
/// behind them. Rows are rendered in parallel and the per-pixel sum order
/// is fixed, so the output does not depend on the worker count.
pub fn render_frame(scene: &Scene, pose: &CameraPose) -> (LuminanceFrame, LabelMask) {
    let cfg = &scene.config;
    let (w, h) = (cfg.width, cfg.height);
    let k = Intrinsics::new(cfg.fov_deg, w, h);
    let light = Lighting::new(cfg);
    let basis = pose.basis();
    let origin = pose.position;
    let splats = splats(scene, pose, &k, &light);

    // Rock bounding spheres for a cheap rejection test.
    let bounds: Vec<(Vec3, f64)> = scene
        .rocks
        .iter()
        .map(|r| (r.center, r.radii.x.max(r.radii.y).max(r.radii.z)))
        .collect();

    // Splats touching each row, in compositing order.
    let mut row_splats: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (i, s) in splats.iter().enumerate() {
        if let Some((lo, hi)) = s.row_span(h) {
            for row in &mut row_splats[lo..hi] {
                row.push(i as u32);
            }
        }
    }

    let rows: Vec<(Vec<f32>, Vec<u16>)> = par::map_indexed(h, |y| {
        let mut lum = vec![0f32; w];
        let mut lab = vec![0u16; w];
        let mut depth = vec![f64::INFINITY; w];
        for x in 0..w {
            let rc = k.pixel_ray(x, y);
            let dir = basis.right * rc.x + basis.down * rc.y + basis.forward * rc.z;
            let cos_angle = rc.z;

            let mut best = f64::INFINITY;
            let mut best_rock = None;
            if dir.z < 0.0 {
                let t = (cfg.seabed_depth - origin.z) / dir.z;
                if t > 0.0 {
                    best = t;
                }
            }
            for (ri, (rock, &(c, r))) in scene.rocks.iter().zip(&bounds).enumerate() {
                let oc = origin - c;
                let b = oc.dot(dir);
                let disc = b * b - (oc.dot(oc) - r * r);
                if disc < 0.0 || -b + disc.sqrt() <= 0.0 {
                    continue;
                }
                if let Some(t) = hit_ellipsoid(origin, dir, rock) {
                    if t < best {
                        best = t;
                        best_rock = Some(ri);
                    }
                }
            }
            let (normal, albedo) = match best_rock {
                Some(ri) => {
                    let rock = &scene.rocks[ri];
                    let p = origin + dir * best - rock.center;
                    let rr = rock.radii.hadamard(rock.radii);
                    lab[x] = rock.instance_id;
                    (p.div_elem(rr).normalized(), rock_albedo(rock, p, cfg))
                }
                None => (Vec3::new(0.0, 0.0, 1.0), cfg.seabed_albedo),
            };
            let mut value = 0.0;
            if best.is_finite() {
                let cos_surface = -normal.dot(dir);
                value = light.surface(cos_angle, cos_surface, albedo, best);
            }
            lum[x] = value as f32;
            depth[x] = best;
        }
        // Particle backscatter, accumulated in a fixed order per pixel.
        let mut extra = vec![0f64; w];
        for &si in &row_splats[y] {
            let s = &splats[si as usize];
            let r = s.radius_px.max(0.5);
            let x0 = (s.u - r).floor().max(0.0) as usize;
            let x1 = ((s.u + r).ceil().max(0.0) as usize).min(w);
            for x in x0..x1 {
                if s.distance >= depth[x] {
                    continue;
                }
                let cov = s.coverage(x, y);
                if cov > 0.0 {
                    extra[x] += s.radiance * cov;
                }
            }
        }
        for x in 0..w {
            if extra[x] > 0.0 {
                lum[x] = (lum[x] as f64 + extra[x]) as f32;
            }
        }
        (lum, lab)
    });

    let mut pixels = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for (l, m) in rows {
        pixels.extend(l);
        labels.extend(m);
    }
    (
        LuminanceFrame {
            width: w,
            height: h,
            timestamp: pose.time,
            pixels,
        },
        LabelMask {
            width: w,
            height: h,
            timestamp: pose.time,
            labels,
        },
    )
}

/// One tight box per label whose pixel count reaches `min_visible_area`,
/// ordered by instance id.
pub fn mask_to_boxes(mask: &LabelMask, min_visible_area: usize) -> Vec<GroundTruthBox> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<u16, GroundTruthBox> = BTreeMap::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let id = mask.get(x, y);
            if id == 0 {
                continue;
            }
            let b = acc.entry(id).or_insert(GroundTruthBox {
                instance_id: id,
                x_min: x,
                y_min: y,
                x_max: x + 1,
                y_max: y + 1,
                pixel_area: 0,
            });
            b.x_min = b.x_min.min(x);
            b.y_min = b.y_min.min(y);
            b.x_max = b.x_max.max(x + 1);
            b.y_max = b.y_max.max(y + 1);
            b.pixel_area += 1;
        }
    }
    acc.into_values()
        .filter(|b| b.pixel_area >= min_visible_area)
        .collect()
}

/// Frame timestamps `k / fps` for the configured duration.
pub fn frame_times(cfg: &SceneConfig) -> Vec<f64> {
    (0..cfg.frame_count()).map(|k| k as f64 / cfg.fps).collect()
}

/// Renders every frame `k` at `t = k / fps` with particles advected from
/// their initial positions to `t`.
pub fn render_sequence(scene: &Scene) -> Result<Vec<(LuminanceFrame, LabelMask)>> {
    let cfg = &scene.config;
    let n = cfg.frame_count();
    if n < 2 {
        return Err(Error::TooFewFrames(n));
    }
    frame_times(cfg)
        .into_iter()
        .map(|t| {
            let pose = camera_pose_at(cfg, t)?;
            let at_t = advect_particles(scene, t);
            Ok(render_frame(&at_t, &pose))
        })
        .collect()
}

/// Linear 8-bit tone map, `clamp(round(v * exposure), 0, 255)`.
pub fn tone_map(frame: &LuminanceFrame, exposure: f64) -> Vec<u8> {
    frame
        .pixels
        .iter()
        .map(|&v| (v as f64 * exposure).round().clamp(0.0, 255.0) as u8)
        .collect()
}
