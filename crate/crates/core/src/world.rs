//! Procedural forests and the planar geometric queries used by the planner,
//! the collision accounting and the renderer.
//!
//! Trees are vertical cylinders. Planning and collision treat them as discs in
//! the horizontal plane; only the renderer cares about their height.

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Attempts per tree before generation gives up.
const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Albedo range for generated trunks. Kept away from 0 and 1 so trunks stay
/// distinguishable from both the sky and the ground.
const ALBEDO_RANGE: (f64, f64) = (0.25, 0.85);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub x: f64,
    pub y: f64,
    /// Trunk radius in meters.
    pub radius: f64,
    pub albedo: f64,
}

impl Tree {
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Rotation of the bark pattern about the trunk axis, in radians.
    ///
    /// Derived from the trunk's own parameters so that it survives
    /// serialization and is unchanged by mirroring the world across y = 0.
    pub fn orientation(&self) -> f64 {
        let h = splitmix64(self.radius.to_bits() ^ self.albedo.to_bits().rotate_left(17));
        (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// Rectangle `length` meters deep along +x starting at x = 0 and `width`
    /// meters wide centered on y = 0.
    pub fn forest(width: f64, length: f64) -> Self {
        Self::new(0.0, length, -width / 2.0, width / 2.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::forest(40.0, 50.0)
    }
}

/// Obstacle inflation used by the planner: trunk radius + `quad_radius` + `margin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationConfig {
    pub quad_radius: f64,
    pub margin: f64,
}

impl InflationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quad_radius > 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Validation(format!(
                "inflation requires quad_radius > 0 and margin >= 0, got {:?}",
                self
            )));
        }
        Ok(())
    }

    pub fn inflated_radius(&self, tree: &Tree) -> f64 {
        tree.radius + self.quad_radius + self.margin
    }
}

impl Default for InflationConfig {
    fn default() -> Self {
        Self {
            quad_radius: 0.25,
            margin: 0.25,
        }
    }
}

/// Parameters of [`generate_world`] bundled for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_trees: usize,
    pub bounds: Bounds,
    pub radius_range: [f64; 2],
    pub start_clearance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            bounds: Bounds::default(),
            radius_range: [0.15, 0.45],
            start_clearance: 2.0,
        }
    }
}

impl WorldConfig {
    pub fn generate(&self, seed: u64) -> Result<World> {
        generate_world(
            seed,
            self.n_trees,
            self.bounds,
            self.radius_range,
            self.start_clearance,
        )
    }
}

/// A static forest. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub bounds: Bounds,
    pub start_clearance: f64,
    pub trees: Vec<Tree>,
}

/// Scatters `n_trees` trunks uniformly over `bounds`, rejecting any center
/// closer than `start_clearance` to the origin.
///
/// Coordinates, radii and albedos are rounded to 9 significant digits so the
/// text serialization is lossless.
pub fn generate_world(
    seed: u64,
    n_trees: usize,
    bounds: Bounds,
    radius_range: [f64; 2],
    start_clearance: f64,
) -> Result<World> {
    if !bounds.is_valid() {
        return Err(Error::Validation(format!("degenerate bounds {:?}", bounds)));
    }
    let [r_lo, r_hi] = radius_range;
    if !(r_lo > 0.0 && r_hi >= r_lo && r_hi.is_finite()) {
        return Err(Error::Validation(format!(
            "invalid radius range [{}, {}]",
            r_lo, r_hi
        )));
    }
    if !(start_clearance >= 0.0 && start_clearance.is_finite()) {
        return Err(Error::Validation(format!(
            "start_clearance must be >= 0, got {}",
            start_clearance
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(n_trees);
    for i in 0..n_trees {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let x = rng.gen_range(bounds.x_min..=bounds.x_max);
            let y = rng.gen_range(bounds.y_min..=bounds.y_max);
            let c = Vec2::new(round_sig9(x), round_sig9(y));
            if c.norm() >= start_clearance && bounds.contains(c) {
                placed = Some(c);
                break;
            }
        }
        let c = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place tree {} outside the {} m start clearance after {} tries",
                i, start_clearance, MAX_PLACEMENT_TRIES
            ))
        })?;
        let radius = if r_hi > r_lo {
            rng.gen_range(r_lo..r_hi)
        } else {
            r_lo
        };
        let albedo = rng.gen_range(ALBEDO_RANGE.0..ALBEDO_RANGE.1);
        trees.push(Tree {
            x: c.x,
            y: c.y,
            radius: round_sig9(radius),
            albedo: round_sig9(albedo),
        });
    }

    Ok(World {
        seed,
        bounds,
        start_clearance,
        trees,
    })
}

impl World {
    pub fn empty(bounds: Bounds) -> Self {
        Self {
            seed: 0,
            bounds,
            start_clearance: 0.0,
            trees: Vec::new(),
        }
    }

    pub fn with_trees(bounds: Bounds, trees: Vec<Tree>) -> Self {
        Self {
            seed: 0,
            bounds,
            start_clearance: 0.0,
            trees,
        }
    }

    /// Trees whose center lies within `r` of `p` (inclusive), in index order.
    pub fn obstacles_within(&self, p: Vec2, r: f64) -> Vec<Tree> {
        self.trees
            .iter()
            .filter(|t| t.center().dist(p) <= r)
            .copied()
            .collect()
    }

    /// True iff segment `ab` keeps strictly more than the inflated radius from every tree.
    pub fn segment_clear(&self, a: Vec2, b: Vec2, inflate: &InflationConfig) -> bool {
        segment_clear_among(&self.trees, a, b, inflate)
    }

    /// True iff `p` lies strictly inside some trunk grown by `quad_radius`.
    pub fn in_collision(&self, p: Vec2, quad_radius: f64) -> bool {
        self.trees
            .iter()
            .any(|t| t.center().dist(p) < t.radius + quad_radius)
    }

    /// The same forest reflected across y = 0.
    pub fn mirrored_y(&self) -> World {
        World {
            seed: self.seed,
            bounds: Bounds::new(
                self.bounds.x_min,
                self.bounds.x_max,
                -self.bounds.y_max,
                -self.bounds.y_min,
            ),
            start_clearance: self.start_clearance,
            trees: self
                .trees
                .iter()
                .map(|t| Tree { y: -t.y, ..*t })
                .collect(),
        }
    }

    /// Canonical text form: fixed key order, values carried at 9 significant digits.
    pub fn to_text(&self) -> String {
        let canon = World {
            seed: self.seed,
            bounds: Bounds::new(
                round_sig9(self.bounds.x_min),
                round_sig9(self.bounds.x_max),
                round_sig9(self.bounds.y_min),
                round_sig9(self.bounds.y_max),
            ),
            start_clearance: round_sig9(self.start_clearance),
            trees: self
                .trees
                .iter()
                .map(|t| Tree {
                    x: round_sig9(t.x),
                    y: round_sig9(t.y),
                    radius: round_sig9(t.radius),
                    albedo: round_sig9(t.albedo),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&canon).expect("world serializes");
        s.push('\n');
        s
    }

    pub fn from_text(s: &str) -> Result<World> {
        let w: World = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<World> {
        World::from_text(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if !self.bounds.is_valid() {
            return Err(Error::Format(format!("degenerate bounds {:?}", self.bounds)));
        }
        for (i, t) in self.trees.iter().enumerate() {
            if !(t.radius > 0.0) || !(0.0..=1.0).contains(&t.albedo) {
                return Err(Error::Format(format!("tree {} violates its invariants: {:?}", i, t)));
            }
        }
        Ok(())
    }
}

/// [`World::segment_clear`] over an arbitrary subset of trees.
pub fn segment_clear_among(trees: &[Tree], a: Vec2, b: Vec2, inflate: &InflationConfig) -> bool {
    trees
        .iter()
        .all(|t| point_segment_distance(t.center(), a, b) > inflate.inflated_radius(t))
}

/// Smallest surface clearance of segment `ab` to the inflated trees (negative when blocked).
pub fn segment_clearance(trees: &[Tree], a: Vec2, b: Vec2, inflate: &InflationConfig) -> f64 {
    trees
        .iter()
        .map(|t| point_segment_distance(t.center(), a, b) - inflate.inflated_radius(t))
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.8e}", v).parse().expect("formatted float parses")
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
