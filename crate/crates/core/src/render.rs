//! Pinhole raycaster over a [`Scene`]: local Lambertian shading, no shadows.
//!
//! Camera convention: yaw 0 looks along +x, yaw grows counterclockwise in the
//! xy-plane, the camera stays level. The image's right-hand side shows the
//! direction at `yaw + 90`, so a positive yaw change pans the view right.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scene::{LightingPreset, PrimitiveId, Scene, Solid};
use crate::trajectory::Pose;

pub const SKY: [f64; 3] = [0.62, 0.74, 0.90];
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, row 0 at the top.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Per-pixel category id, -1 where the ray hit a wall, the floor or nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_deg: 70.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("render: image dimensions must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config("render: fov_deg must lie in (0, 180)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub category_id: i32,
    pub normal: Vec3,
    pub primitive: PrimitiveId,
}

/// Nearest intersection of the ray with the scene, or `None` when the ray
/// leaves the bounds (including upward over the walls).
pub fn ray_hit(scene: &Scene, origin: Vec3, direction: Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (id, solid) in scene.solids() {
        let limit = best.map_or(f64::INFINITY, |h| h.distance);
        if let Some((t, normal)) = intersect(&solid, origin, direction) {
            if t < limit {
                let category_id = match id {
                    PrimitiveId::Object(i) => scene.objects[i].category_id as i32,
                    _ => -1,
                };
                best = Some(Hit {
                    distance: t,
                    category_id,
                    normal,
                    primitive: id,
                });
            }
        }
    }
    if direction.z < 0.0 {
        let t = -origin.z / direction.z;
        let p = origin + direction * t;
        if t >= 0.0
            && best.is_none_or(|h| t < h.distance)
            && scene.bounds.contains_strict(p.x, p.y)
        {
            best = Some(Hit {
                distance: t,
                category_id: -1,
                normal: Vec3::UP,
                primitive: PrimitiveId::Floor,
            });
        }
    }
    best
}

/// Entry distance and outward normal, for rays starting outside the solid.
fn intersect(solid: &Solid, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    match *solid {
        Solid::Box { min, max } => {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut axis = 0;
            let mut sign = 0.0;
            for i in 0..3 {
                let (oi, di, lo, hi) = (o.axis(i), d.axis(i), min.axis(i), max.axis(i));
                if di.abs() < EPS {
                    if oi < lo || oi > hi {
                        return None;
                    }
                    continue;
                }
                let (mut t0, mut t1) = ((lo - oi) / di, (hi - oi) / di);
                let mut s = -1.0;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                    s = 1.0;
                }
                if t0 > t_near {
                    t_near = t0;
                    axis = i;
                    sign = s;
                }
                t_far = t_far.min(t1);
                if t_near > t_far {
                    return None;
                }
            }
            if t_near < 0.0 {
                return None;
            }
            let normal = match axis {
                0 => Vec3::new(sign, 0.0, 0.0),
                1 => Vec3::new(0.0, sign, 0.0),
                _ => Vec3::new(0.0, 0.0, sign),
            };
            Some((t_near, normal))
        }
        Solid::Cylinder {
            center,
            radius,
            z_min,
            z_max,
        } => {
            let mut best: Option<(f64, Vec3)> = None;
            let mut consider = |t: f64, n: Vec3| {
                if t >= 0.0 && best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, n));
                }
            };
            let (px, py) = (o.x - center[0], o.y - center[1]);
            let a = d.x * d.x + d.y * d.y;
            if a > EPS * EPS {
                let b = px * d.x + py * d.y;
                let c = px * px + py * py - radius * radius;
                let disc = b * b - a * c;
                if disc >= 0.0 && c > 0.0 {
                    let t = (-b - disc.sqrt()) / a;
                    let z = o.z + t * d.z;
                    if (z_min..=z_max).contains(&z) {
                        let hx = px + t * d.x;
                        let hy = py + t * d.y;
                        consider(t, Vec3::new(hx / radius, hy / radius, 0.0));
                    }
                }
            }
            if d.z.abs() > EPS {
                for (z, n) in [(z_max, Vec3::UP), (z_min, -Vec3::UP)] {
                    let outside = if n.z > 0.0 { o.z > z } else { o.z < z };
                    if !outside {
                        continue;
                    }
                    let t = (z - o.z) / d.z;
                    let hx = px + t * d.x;
                    let hy = py + t * d.y;
                    if hx * hx + hy * hy <= radius * radius {
                        consider(t, n);
                    }
                }
            }
            best
        }
    }
}

/// Level pinhole camera at a pose.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    tan_half_h: f64,
    tan_half_v: f64,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(pose: &Pose, config: &RenderConfig) -> Self {
        let yaw = pose.yaw.to_radians();
        let hfov = config.fov_deg.to_radians();
        let vfov = hfov * config.height as f64 / config.width as f64;
        Self {
            origin: pose.position,
            forward: Vec3::new(yaw.cos(), yaw.sin(), 0.0),
            right: Vec3::new(-yaw.sin(), yaw.cos(), 0.0),
            tan_half_h: (0.5 * hfov).tan(),
            tan_half_v: (0.5 * vfov).tan(),
            width: config.width,
            height: config.height,
        }
    }

    /// Unit ray through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Vec3 {
        let u = 2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0;
        let v = 1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64;
        (self.forward + self.right * (u * self.tan_half_h) + Vec3::UP * (v * self.tan_half_v))
            .normalized()
    }
}

/// Hit along the optical axis (debug query).
pub fn center_hit(scene: &Scene, pose: &Pose) -> Option<Hit> {
    let yaw = pose.yaw.to_radians();
    ray_hit(scene, pose.position, Vec3::new(yaw.cos(), yaw.sin(), 0.0))
}

fn shade(scene: &Scene, origin: Vec3, dir: Vec3, light: &LightingPreset) -> ([u8; 3], i32) {
    let Some(hit) = ray_hit(scene, origin, dir) else {
        return (quantize(SKY), -1);
    };
    let albedo = match hit.primitive {
        PrimitiveId::Object(i) => scene.objects[i].albedo,
        PrimitiveId::Wall(_) => scene.wall_albedo(),
        PrimitiveId::Floor => {
            let p = origin + dir * hit.distance;
            scene.floor_albedo(p.x, p.y)
        }
    };
    let lambert = hit.normal.dot(light.sun_direction).max(0.0);
    let k = light.ambient + light.sun_intensity * lambert;
    (quantize(albedo.map(|a| a * k)), hit.category_id)
}

fn quantize(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
}

fn check_pose(scene: &Scene, pose: &Pose) -> Result<()> {
    let p = pose.position;
    if !p.is_finite() || !scene.bounds.contains_strict(p.x, p.y) || p.z < 0.0 {
        return Err(Error::OutOfBounds {
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    Ok(())
}

/// Render one egocentric view and its category map. Rows are shaded in
/// parallel; the result does not depend on scheduling.
pub fn render(
    scene: &Scene,
    pose: &Pose,
    light: &LightingPreset,
    config: &RenderConfig,
) -> Result<(Image, CategoryMap)> {
    render_with(scene, pose, light, config, true)
}

/// Single-threaded variant of [`render`].
pub fn render_sequential(
    scene: &Scene,
    pose: &Pose,
    light: &LightingPreset,
    config: &RenderConfig,
) -> Result<(Image, CategoryMap)> {
    render_with(scene, pose, light, config, false)
}

fn render_with(
    scene: &Scene,
    pose: &Pose,
    light: &LightingPreset,
    config: &RenderConfig,
    parallel: bool,
) -> Result<(Image, CategoryMap)> {
    config.validate()?;
    check_pose(scene, pose)?;
    let cam = Camera::new(pose, config);
    let (w, h) = (config.width, config.height);
    let mut image = Image::new(w, h);
    let mut ids = vec![-1; w * h];
    let row = |py: usize, rgb: &mut [u8], id: &mut [i32]| {
        for px in 0..w {
            let (c, cat) = shade(scene, cam.origin, cam.ray(px, py), light);
            rgb[3 * px..3 * px + 3].copy_from_slice(&c);
            id[px] = cat;
        }
    };
    if parallel {
        image
            .pixels
            .par_chunks_mut(3 * w)
            .zip(ids.par_chunks_mut(w))
            .enumerate()
            .for_each(|(py, (rgb, id))| row(py, rgb, id));
    } else {
        for (py, (rgb, id)) in image.pixels.chunks_mut(3 * w).zip(ids.chunks_mut(w)).enumerate() {
            row(py, rgb, id);
        }
    }
    Ok((
        image,
        CategoryMap {
            width: w,
            height: h,
            ids,
        },
    ))
}
