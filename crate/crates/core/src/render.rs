//! Pinhole raycaster for the forest: synchronized grayscale and metric depth.
//!
//! The camera looks along +x with no roll or pitch; image columns run from
//! +y (left) to -y (right) and rows from top to bottom. Trunks are vertical,
//! so each column first intersects its horizontal ray with every nearby trunk
//! and every row then only has to decide which of those hits (or the ground)
//! its vertical angle reaches first.

use crate::control::QuadState;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::world::{splitmix64, World};
use serde::{Deserialize, Serialize};

/// Rendered trunk height.
pub const TREE_HEIGHT: f64 = 12.0;
const BARK_STRIPES: f64 = 8.0;
const BARK_CONTRAST: f64 = 0.35;
const GROUND_CELL: f64 = 0.3;
const HAZE_LENGTH: f64 = 40.0;
const HAZE_LEVEL: f64 = 0.6;
/// Trunks farther than this (horizontally) are invisible through the haze.
const CULL_RANGE: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub horizontal_fov: f64,
    pub fps: f64,
    pub max_depth: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 346,
            height: 260,
            horizontal_fov: 1.57,
            fps: 30.0,
            max_depth: 20.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.width <= u16::MAX as usize
            && self.height <= u16::MAX as usize
            && self.horizontal_fov > 0.0
            && self.horizontal_fov < std::f64::consts::PI
            && self.fps > 0.0
            && self.max_depth > 0.0;
        if !ok {
            return Err(Error::Validation(format!("invalid camera config {:?}", self)));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.horizontal_fov / 2.0).tan()
    }

    pub fn frame_dt(&self) -> f64 {
        1.0 / self.fps
    }
}

/// Grayscale image with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub t: f64,
    pub intensity: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, t: f64, intensity: Vec<f32>) -> Result<Self> {
        if intensity.len() != width * height {
            return Err(Error::shape(width * height, intensity.len()));
        }
        Ok(Self {
            width,
            height,
            t,
            intensity,
        })
    }

    pub fn filled(width: usize, height: usize, t: f64, value: f32) -> Self {
        Self {
            width,
            height,
            t,
            intensity: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.intensity[y * self.width + x]
    }
}

/// Metric depth per pixel in (0, max_depth], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub t: f64,
    pub depth: Vec<f32>,
}

impl DepthMap {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    pub fn min(&self) -> f32 {
        self.depth.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// A trunk hit along one column's horizontal ray.
#[derive(Clone, Copy)]
struct ColumnHit {
    /// Ray parameter: forward distance from the camera to the hit.
    t: f64,
    tree: usize,
    /// Outward surface normal (horizontal).
    nx: f64,
    ny: f64,
}

/// Renders the forest from `pose`. Deterministic: equal inputs give bit-identical outputs.
pub fn render(world: &World, pose: &QuadState, cam: &CameraConfig) -> (Frame, DepthMap) {
    if !world.bounds.contains(pose.xy()) {
        log::debug!("rendering from outside the world bounds at {:?}", pose.position);
    }
    let (w, h) = (cam.width, cam.height);
    let f = cam.focal();
    let eye = pose.position;

    let visible: Vec<usize> = world
        .trees
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            let dx = t.x - eye.x;
            dx > -t.radius && dx.hypot(t.y - eye.y) < CULL_RANGE
        })
        .map(|(i, _)| i)
        .collect();

    let rows: Vec<f64> = (0..h).map(|r| -((r as f64 + 0.5) - h as f64 / 2.0) / f).collect();

    let mut intensity = vec![0f32; w * h];
    let mut depth = vec![0f32; w * h];
    let mut hits: Vec<ColumnHit> = Vec::with_capacity(visible.len());

    for c in 0..w {
        let dy = -((c as f64 + 0.5) - w as f64 / 2.0) / f;
        hits.clear();
        for &i in &visible {
            let tree = &world.trees[i];
            if let Some(t) = ray_circle(eye.x - tree.x, eye.y - tree.y, dy, tree.radius) {
                let hx = eye.x + t - tree.x;
                let hy = eye.y + t * dy - tree.y;
                hits.push(ColumnHit {
                    t,
                    tree: i,
                    nx: hx / tree.radius,
                    ny: hy / tree.radius,
                });
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.tree.cmp(&b.tree)));

        for (r, &dz) in rows.iter().enumerate() {
            let dir_norm = (1.0 + dy * dy + dz * dz).sqrt();
            // Forward distance at which this ray meets the ground plane.
            let t_ground = if dz < 0.0 { eye.z / -dz } else { f64::INFINITY };
            let tree_hit = hits.iter().find(|hit| {
                let z = eye.z + hit.t * dz;
                hit.t < t_ground && (0.0..=TREE_HEIGHT).contains(&z)
            });

            let (dist, surface) = match tree_hit {
                Some(hit) => {
                    let tree = &world.trees[hit.tree];
                    (hit.t * dir_norm, bark_shade(tree.albedo, tree.orientation(), hit))
                }
                None if t_ground.is_finite() => {
                    let gx = eye.x + t_ground;
                    let gy = eye.y + t_ground * dy;
                    (t_ground * dir_norm, ground_texture(gx, gy))
                }
                None => (f64::INFINITY, sky(dz / dir_norm)),
            };

            let value = if dist.is_finite() {
                let a = (-dist / HAZE_LENGTH).exp();
                surface * a + HAZE_LEVEL * (1.0 - a)
            } else {
                surface
            };
            let idx = r * w + c;
            intensity[idx] = value.clamp(0.0, 1.0) as f32;
            depth[idx] = dist.min(cam.max_depth) as f32;
        }
    }

    (
        Frame {
            width: w,
            height: h,
            t: pose.t,
            intensity,
        },
        DepthMap {
            width: w,
            height: h,
            t: pose.t,
            depth,
        },
    )
}

/// Forward distance along the horizontal ray (1, dy) from offset (ox, oy)
/// relative to the circle center, or `None` if it misses or lies behind.
fn ray_circle(ox: f64, oy: f64, dy: f64, radius: f64) -> Option<f64> {
    let a = 1.0 + dy * dy;
    let b = ox + oy * dy;
    let c = ox * ox + oy * oy - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t_near = (-b - sq) / a;
    if t_near > 0.0 {
        return Some(t_near);
    }
    // Inside the trunk: the far wall is what the camera sees.
    let t_far = (-b + sq) / a;
    (t_far > 0.0).then_some(t_far)
}

fn bark_shade(albedo: f64, orientation: f64, hit: &ColumnHit) -> f64 {
    // Angle measured from +x using |y| keeps the pattern mirror-symmetric.
    let theta = hit.ny.abs().atan2(hit.nx);
    let stripe = 1.0 - BARK_CONTRAST * (0.5 + 0.5 * (BARK_STRIPES * theta + orientation).cos());
    // Fixed light from behind the camera and above: L = (-1, 0, 1) / sqrt(2).
    let lambert = (-hit.nx * std::f64::consts::FRAC_1_SQRT_2).max(0.0);
    albedo * stripe * (0.35 + 0.65 * lambert)
}

fn ground_texture(x: f64, y: f64) -> f64 {
    let cx = (x / GROUND_CELL).floor() as i64;
    let cy = (y.abs() / GROUND_CELL).floor() as i64;
    let hsh = splitmix64((cx as u64).wrapping_mul(0x9E37_79B9) ^ (cy as u64).rotate_left(32));
    let u = (hsh >> 11) as f64 / (1u64 << 53) as f64;
    0.25 + 0.3 * u
}

/// `elevation` is the sine of the ray's elevation angle.
fn sky(elevation: f64) -> f64 {
    0.7 + 0.25 * elevation
}

/// Projects a world point to continuous pixel coordinates `(column, row)`.
/// Pixel `(c, r)` covers `[c, c+1) x [r, r+1)`. `None` when behind the camera
/// or off the sensor.
pub fn project_point(p: Vec3, pose: &QuadState, cam: &CameraConfig) -> Option<(f64, f64)> {
    let rel = p - pose.position;
    if rel.x <= 0.0 {
        return None;
    }
    let f = cam.focal();
    let col = cam.width as f64 / 2.0 - f * rel.y / rel.x;
    let row = cam.height as f64 / 2.0 - f * rel.z / rel.x;
    let inside = (0.0..cam.width as f64).contains(&col) && (0.0..cam.height as f64).contains(&row);
    inside.then_some((col, row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bounds, Tree, WorldConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(x: f64, y: f64) -> QuadState {
        QuadState::at_rest(Vec3::new(x, y, 1.5))
    }

    fn one_tree(x: f64, r: f64) -> World {
        World::with_trees(
            Bounds::default(),
            vec![Tree {
                x,
                y: 0.0,
                radius: r,
                albedo: 0.6,
            }],
        )
    }

    #[test]
    fn empty_world_sky_and_ground() {
        let cam = CameraConfig::default();
        let (frame, depth) = render(&World::empty(Bounds::default()), &pose(0.0, 0.0), &cam);
        for r in 0..cam.height / 2 {
            for c in 0..cam.width {
                assert_eq!(depth.at(c, r), cam.max_depth as f32);
                assert!(frame.at(c, r) >= 0.7);
            }
        }
        // Sky gets brighter towards the top.
        assert!(frame.at(10, 0) > frame.at(10, cam.height / 2 - 1));
        // Ground directly below the horizon is far away; the bottom row is near.
        let bottom = depth.at(cam.width / 2, cam.height - 1);
        assert!(bottom < 3.0, "bottom depth {}", bottom);
        let row_vals: Vec<f32> = (0..cam.width).map(|c| frame.at(c, cam.height - 1)).collect();
        assert!(row_vals.iter().any(|&v| v != row_vals[0]), "ground is textured");
    }

    #[test]
    fn head_on_tree_depth() {
        let cam = CameraConfig::default();
        let (_, depth) = render(&one_tree(5.0, 0.3), &pose(0.0, 0.0), &cam);
        let (cx, cy) = (cam.width / 2, cam.height / 2);
        // Pixel centers sit half a pixel off the optical axis.
        let f = cam.focal();
        let off = 0.5 / f;
        let hand = {
            // Ray (1, -off, -off) from the origin to the circle at (5, 0), r = 0.3.
            let a = 1.0 + off * off;
            let b = -5.0 + 0.0;
            let c = 25.0 - 0.09;
            let t = (-b - (b * b - a * c).sqrt()) / a;
            t * (1.0 + 2.0 * off * off).sqrt()
        };
        assert!((depth.at(cx, cy) as f64 - hand).abs() < 1e-5);
        assert!((depth.at(cx, cy) as f64 - 4.7).abs() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let w = WorldConfig::default().generate(3).unwrap();
        let cam = CameraConfig::default();
        let a = render(&w, &pose(1.0, 0.5), &cam);
        let b = render(&w, &pose(1.0, 0.5), &cam);
        assert_eq!(a, b);
    }

    #[test]
    fn project_axis_and_behind() {
        let cam = CameraConfig::default();
        let p = pose(0.0, 0.0);
        let (c, r) = project_point(Vec3::new(7.0, 0.0, 1.5), &p, &cam).unwrap();
        assert_eq!((c, r), (cam.width as f64 / 2.0, cam.height as f64 / 2.0));
        assert!(project_point(Vec3::new(-1.0, 0.0, 1.5), &p, &cam).is_none());
        assert!(project_point(Vec3::new(1.0, 50.0, 1.5), &p, &cam).is_none());
    }

    #[test]
    fn projection_brackets_silhouette() {
        let cam = CameraConfig::default();
        let world = World::with_trees(
            Bounds::default(),
            vec![Tree {
                x: 15.0,
                y: 1.0,
                radius: 0.4,
                albedo: 0.6,
            }],
        );
        let p = pose(0.0, 0.0);
        let (_, depth) = render(&world, &p, &cam);
        let (_, bare) = render(&World::empty(Bounds::default()), &p, &cam);
        let (axis_col, _) = project_point(Vec3::new(15.0, 1.0, 0.0), &p, &cam).unwrap();
        let mut cols = Vec::new();
        let mut rows = Vec::new();
        for r in 0..cam.height {
            for c in 0..cam.width {
                if depth.at(c, r) != bare.at(c, r) {
                    cols.push(c);
                    rows.push(r);
                }
            }
        }
        let (cmin, cmax) = (*cols.iter().min().unwrap(), *cols.iter().max().unwrap());
        assert!((cmin as f64) <= axis_col && axis_col <= (cmax + 1) as f64);

        // The nearest point of the trunk surface, projected at the trunk's
        // top and base, lands on the silhouette's first and last rows.
        let d = Vec3::new(15.0, 1.0, 0.0) - p.position;
        let s = 0.4 / d.xy().norm();
        let front = |z: f64| Vec3::new(15.0 - d.x * s, 1.0 - d.y * s, z);
        let (_, top_row) = project_point(front(TREE_HEIGHT), &p, &cam).unwrap();
        let (_, bottom_row) = project_point(front(0.0), &p, &cam).unwrap();
        let (rmin, rmax) = (*rows.iter().min().unwrap(), *rows.iter().max().unwrap());
        assert!((top_row - rmin as f64).abs() <= 1.0, "top {} vs {}", top_row, rmin);
        assert!((bottom_row - (rmax + 1) as f64).abs() <= 1.0, "bottom {} vs {}", bottom_row, rmax);
    }

    #[test]
    fn moving_closer_reduces_min_depth_by_one_meter() {
        let cam = CameraConfig::default();
        let world = one_tree(8.0, 0.3);
        // The near ground at the bottom of the image is closer than the tree,
        // so look along the horizon row only.
        let row_min = |d: &DepthMap| {
            (0..cam.width)
                .map(|c| d.at(c, cam.height / 2))
                .fold(f32::INFINITY, f32::min)
        };
        let (_, d0) = render(&world, &pose(0.0, 0.0), &cam);
        let (_, d1) = render(&world, &pose(1.0, 0.0), &cam);
        let step = 1e-3;
        let (m0, m1) = (row_min(&d0), row_min(&d1));
        assert!(((m0 - m1) as f64 - 1.0).abs() <= step, "{} {}", m0, m1);
    }

    #[test]
    fn mirroring_world_mirrors_images() {
        let cam = CameraConfig {
            width: 120,
            height: 90,
            ..CameraConfig::default()
        };
        let world = WorldConfig::default().generate(12).unwrap();
        let mirrored = world.mirrored_y();
        let (fa, da) = render(&world, &pose(2.0, 0.7), &cam);
        let (fb, db) = render(&mirrored, &pose(2.0, -0.7), &cam);
        for r in 0..cam.height {
            for c in 0..cam.width {
                let m = cam.width - 1 - c;
                assert_eq!(fa.at(c, r), fb.at(m, r), "intensity ({},{})", c, r);
                assert_eq!(da.at(c, r), db.at(m, r), "depth ({},{})", c, r);
            }
        }
    }

    #[test]
    fn values_respect_invariants_for_random_poses() {
        let cam = CameraConfig {
            width: 16,
            height: 12,
            ..CameraConfig::default()
        };
        let world = WorldConfig::default().generate(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = pose(rng.gen_range(-2.0..55.0), rng.gen_range(-22.0..22.0));
            let (f, d) = render(&world, &p, &cam);
            assert!(f.intensity.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
            assert!(d
                .depth
                .iter()
                .all(|v| *v > 0.0 && *v <= cam.max_depth as f32));
        }
    }
}
