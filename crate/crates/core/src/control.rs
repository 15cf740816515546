//! Planar quadrotor kinematics, the privileged receding-horizon expert and
//! the lateral-velocity command decomposition shared by expert and student.

use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};
use crate::world::{segment_clear_among, segment_clearance, InflationConfig, World};
use serde::{Deserialize, Serialize};

/// Kinematic state. Flight is planar: `velocity.z` is always zero and
/// `position.z` never changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub t: f64,
}

impl QuadState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::default(),
            t: 0.0,
        }
    }

    pub fn xy(&self) -> Vec2 {
        self.position.xy()
    }
}

/// Unit forward/lateral direction scaled by a desired speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v_y_unit: f64,
    pub v_x_unit: f64,
    pub speed: f64,
}

impl VelocityCommand {
    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.speed * self.v_x_unit, self.speed * self.v_y_unit, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Distance of the query line ahead of the vehicle.
    pub horizon: f64,
    pub query_half_width: f64,
    pub query_spacing: f64,
    pub replan_hz: f64,
    /// Only trees within this radius of the vehicle are considered.
    pub sense_radius: f64,
    pub inflate: InflationConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            query_half_width: 5.0,
            query_spacing: 0.5,
            replan_hz: 5.0,
            sense_radius: 10.0,
            inflate: InflationConfig::default(),
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon > 0.0
            && self.query_spacing > 0.0
            && self.query_half_width >= 0.0
            && self.replan_hz > 0.0
            && self.sense_radius >= 0.0;
        if !ok {
            return Err(Error::Validation(format!("invalid expert config {:?}", self)));
        }
        self.inflate.validate()
    }

    /// Number of query points on each side of the center.
    pub fn half_count(&self) -> i32 {
        (self.query_half_width / self.query_spacing + 1e-9).floor() as i32
    }
}

/// Output of one expert planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPlan {
    pub waypoint: Vec2,
    /// Lateral grid index of the chosen query point.
    pub k: i32,
    /// Free/blocked flag per query point, ordered from k = -K to k = +K.
    pub free_flags: Vec<bool>,
}

/// Picks the collision-free query point closest to the center of the
/// horizon line, preferring +y on ties. When every point is blocked, the
/// point with the largest clearance is returned instead.
pub fn expert_waypoint(world: &World, state: &QuadState, cfg: &ExpertConfig) -> ExpertPlan {
    let origin = state.xy();
    let nearby = world.obstacles_within(origin, cfg.sense_radius);
    let half = cfg.half_count();
    let point = |k: i32| {
        Vec2::new(
            origin.x + cfg.horizon,
            origin.y + k as f64 * cfg.query_spacing,
        )
    };

    let free_flags: Vec<bool> = (-half..=half)
        .map(|k| segment_clear_among(&nearby, origin, point(k), &cfg.inflate))
        .collect();
    let is_free = |k: i32| free_flags[(k + half) as usize];

    // 0, +1, -1, +2, -2, ...
    let preference = std::iter::once(0).chain((1..=half).flat_map(|m| [m, -m]));

    let k = match preference.clone().find(|&k| is_free(k)) {
        Some(k) => k,
        None => {
            let mut best_k = 0;
            let mut best = f64::NEG_INFINITY;
            for k in preference {
                let c = segment_clearance(&nearby, origin, point(k), &cfg.inflate);
                if c > best {
                    best = c;
                    best_k = k;
                }
            }
            best_k
        }
    };

    ExpertPlan {
        waypoint: point(k),
        k,
        free_flags,
    }
}

/// Normalizes the offset to `waypoint` into a unit direction scaled by `speed`.
pub fn command_from_waypoint(state: &QuadState, waypoint: Vec2, speed: f64) -> Result<VelocityCommand> {
    let d = waypoint - state.xy();
    if !(d.x > 0.0) {
        return Err(Error::Contract(format!(
            "waypoint must lie ahead of the vehicle (dx = {})",
            d.x
        )));
    }
    let n = d.norm();
    Ok(VelocityCommand {
        v_y_unit: d.y / n,
        v_x_unit: d.x / n,
        speed,
    })
}

/// Completes a lateral unit component into a unit (forward, lateral) direction.
/// Out-of-range inputs are clamped with a warning.
pub fn decompose_v_y(v_y_unit: f64, speed: f64) -> VelocityCommand {
    let v_y = if v_y_unit.abs() > 1.0 || v_y_unit.is_nan() {
        log::warn!("lateral command {} outside [-1, 1], clamping", v_y_unit);
        if v_y_unit.is_nan() {
            0.0
        } else {
            v_y_unit.clamp(-1.0, 1.0)
        }
    } else {
        v_y_unit
    };
    VelocityCommand {
        v_y_unit: v_y,
        v_x_unit: (1.0 - v_y * v_y).max(0.0).sqrt(),
        speed,
    }
}

/// First-order velocity response with time constant `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub tau: f64,
    pub physics_dt: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            tau: 0.3,
            physics_dt: 1.0 / 120.0,
        }
    }
}

/// One explicit Euler step: `v += dt/tau (v_cmd - v)`, then `p += dt v`.
pub fn step_dynamics(state: &QuadState, cmd: &VelocityCommand, dt: f64, tau: f64) -> QuadState {
    let target = cmd.velocity();
    let gain = dt / tau;
    let v = Vec3::new(
        state.velocity.x + gain * (target.x - state.velocity.x),
        state.velocity.y + gain * (target.y - state.velocity.y),
        0.0,
    );
    QuadState {
        position: Vec3::new(
            state.position.x + dt * v.x,
            state.position.y + dt * v.y,
            state.position.z,
        ),
        velocity: v,
        t: state.t + dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bounds, Tree};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn state_at(x: f64, y: f64) -> QuadState {
        QuadState::at_rest(Vec3::new(x, y, 1.5))
    }

    /// One trunk 5 m ahead whose inflated radius is exactly 1.0.
    fn single_tree_world() -> (World, ExpertConfig) {
        let cfg = ExpertConfig {
            inflate: InflationConfig {
                quad_radius: 0.5,
                margin: 0.2,
            },
            ..ExpertConfig::default()
        };
        let world = World::with_trees(
            Bounds::default(),
            vec![Tree {
                x: 5.0,
                y: 0.0,
                radius: 0.3,
                albedo: 0.5,
            }],
        );
        (world, cfg)
    }

    #[test]
    fn empty_world_goes_straight() {
        let plan = expert_waypoint(
            &World::empty(Bounds::default()),
            &state_at(0.0, 0.0),
            &ExpertConfig::default(),
        );
        assert_eq!(plan.k, 0);
        assert_eq!(plan.free_flags.len(), 21);
        let cmd = command_from_waypoint(&state_at(0.0, 0.0), plan.waypoint, 5.0).unwrap();
        assert_eq!(cmd.v_y_unit, 0.0);
        assert_eq!(cmd.v_x_unit, 1.0);
    }

    #[test]
    fn single_tree_waypoint_matches_line_distance_oracle() {
        let (world, cfg) = single_tree_world();
        // Oracle: distance from (5, 0) to the ray towards (10, y) is 5|y|/sqrt(100 + y^2).
        let oracle = (0..=10)
            .map(|k| k as f64 * 0.5)
            .find(|&y| 5.0 * y / (100.0 + y * y).sqrt() > 1.0)
            .unwrap();
        assert_eq!(oracle, 2.5);
        let plan = expert_waypoint(&world, &state_at(0.0, 0.0), &cfg);
        assert_eq!(plan.waypoint, Vec2::new(10.0, 2.5));
        assert_eq!(plan.k, 5);
        let cmd = command_from_waypoint(&state_at(0.0, 0.0), plan.waypoint, 5.0).unwrap();
        assert!((cmd.v_y_unit - 2.5 / 106.25f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mirrored_world_mirrors_waypoint() {
        let world = World::with_trees(
            Bounds::default(),
            vec![Tree {
                x: 5.0,
                y: 0.4,
                radius: 0.3,
                albedo: 0.5,
            }],
        );
        let cfg = ExpertConfig::default();
        let s = state_at(0.0, 0.0);
        let a = expert_waypoint(&world, &s, &cfg);
        let b = expert_waypoint(&world.mirrored_y(), &s, &cfg);
        assert_ne!(a.k, 0);
        assert_eq!(a.k, -b.k);
    }

    #[test]
    fn fully_blocked_falls_back_to_max_clearance() {
        // A wall of trunks right in front blocks every query segment.
        let trees = (-12..=12)
            .map(|i| Tree {
                x: 2.0,
                y: i as f64 * 0.5,
                radius: 0.3,
                albedo: 0.5,
            })
            .collect();
        let world = World::with_trees(Bounds::default(), trees);
        let cfg = ExpertConfig::default();
        let plan = expert_waypoint(&world, &state_at(0.0, 0.0), &cfg);
        assert!(plan.free_flags.iter().all(|f| !f));
        let nearby = world.obstacles_within(Vec2::default(), cfg.sense_radius);
        let chosen = segment_clearance(&nearby, Vec2::default(), plan.waypoint, &cfg.inflate);
        for k in -10..=10 {
            let p = Vec2::new(10.0, k as f64 * 0.5);
            assert!(segment_clearance(&nearby, Vec2::default(), p, &cfg.inflate) <= chosen);
        }
    }

    #[test]
    fn waypoint_behind_is_rejected() {
        let s = state_at(3.0, 0.0);
        assert!(matches!(
            command_from_waypoint(&s, Vec2::new(3.0, 1.0), 5.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn command_normalization() {
        let s = state_at(0.0, 0.0);
        let c = command_from_waypoint(&s, Vec2::new(10.0, 2.5), 5.0).unwrap();
        assert!((c.v_y_unit - 0.24253562503633297).abs() < 1e-12);
        let c = decompose_v_y(0.6, 1.0);
        assert!((c.v_x_unit - 0.8).abs() < 1e-15);
    }

    #[test]
    fn decompose_cases() {
        let v = decompose_v_y(0.0, 5.0).velocity();
        assert_eq!((v.x, v.y, v.z), (5.0, 0.0, 0.0));
        let v = decompose_v_y(1.0, 5.0).velocity();
        assert_eq!((v.x, v.y, v.z), (0.0, 5.0, 0.0));
        let v = decompose_v_y(-0.24254, 5.0).velocity();
        assert!((v.x - 4.8507).abs() < 1e-4);
        assert!((v.y + 1.2127).abs() < 1e-4);
        let c = decompose_v_y(1.7, 2.0);
        assert_eq!(c.v_y_unit, 1.0);
        assert_eq!(c.v_x_unit, 0.0);
    }

    #[test]
    fn dynamics_fixed_point() {
        let cmd = decompose_v_y(0.3, 4.0);
        let mut s = state_at(0.0, 0.0);
        s.velocity = cmd.velocity();
        let n = step_dynamics(&s, &cmd, 0.01, 0.3);
        assert_eq!(n.velocity, s.velocity);
        assert!((n.position.x - 0.01 * cmd.velocity().x).abs() < 1e-15);
        assert_eq!(n.position.z, 1.5);
    }

    #[test]
    fn dynamics_reaches_63_percent_after_tau() {
        let cmd = decompose_v_y(0.0, 5.0);
        let (dt, tau): (f64, f64) = (1.0 / 120.0, 0.3);
        let mut s = state_at(0.0, 0.0);
        for _ in 0..(tau / dt).round() as usize {
            s = step_dynamics(&s, &cmd, dt, tau);
        }
        let frac = s.velocity.x / 5.0;
        let expected = 1.0 - (-1.0f64).exp();
        assert!((frac - expected).abs() / expected < 0.02, "frac={}", frac);
    }

    #[test]
    fn dynamics_step_refinement() {
        // Explicit Euler is first order: halving dt halves the discrepancy
        // against the next refinement, and the 1/120 s vs 1/240 s gap stays
        // below speed * dt / 2 (the steady-state lag difference).
        let cmd = decompose_v_y(0.4, 6.0);
        let run = |dt: f64| {
            let mut s = state_at(0.0, 0.0);
            for _ in 0..(1.0 / dt).round() as usize {
                s = step_dynamics(&s, &cmd, dt, 0.3);
            }
            s.position
        };
        let d1 = (run(1.0 / 120.0) - run(1.0 / 240.0)).norm();
        let d2 = (run(1.0 / 240.0) - run(1.0 / 480.0)).norm();
        assert!(d1 < 6.0 / 240.0, "d1={}", d1);
        assert!((d1 / d2 - 2.0).abs() < 0.05, "ratio={}", d1 / d2);
        // Starting on the commanded velocity the refinement is exact to rounding.
        let mut s0 = state_at(0.0, 0.0);
        s0.velocity = cmd.velocity();
        let mut a = s0;
        let mut b = s0;
        for _ in 0..120 {
            a = step_dynamics(&a, &cmd, 1.0 / 120.0, 0.3);
        }
        for _ in 0..240 {
            b = step_dynamics(&b, &cmd, 1.0 / 240.0, 0.3);
        }
        assert!((a.position - b.position).norm() < 1e-3);
    }

    proptest! {
        #[test]
        fn decompose_is_unit_norm(v in -1.0f64..=1.0, speed in 0.1f64..10.0) {
            let c = decompose_v_y(v, speed);
            prop_assert!((c.v_x_unit.powi(2) + c.v_y_unit.powi(2) - 1.0).abs() < 1e-9);
            prop_assert!(c.v_x_unit >= 0.0);
        }

        #[test]
        fn expert_prefers_nearest_free_point(seed in 0u64..300, y in -5.0f64..5.0) {
            let world = crate::world::WorldConfig::default().generate(seed).unwrap();
            let s = state_at(3.0, y);
            let cfg = ExpertConfig::default();
            if world.in_collision(s.xy(), cfg.inflate.quad_radius) {
                return Ok(());
            }
            let plan = expert_waypoint(&world, &s, &cfg);
            let half = cfg.half_count();
            if plan.free_flags.iter().any(|&f| f) {
                prop_assert!(plan.free_flags[(plan.k + half) as usize]);
                for (i, &f) in plan.free_flags.iter().enumerate() {
                    if f {
                        prop_assert!(plan.k.abs() <= (i as i32 - half).abs());
                    }
                }
            }
        }

        #[test]
        fn mirror_negates_label(seed in 0u64..300) {
            let world = crate::world::WorldConfig::default().generate(seed).unwrap();
            let cfg = ExpertConfig::default();
            let s = state_at(4.0, 0.0);
            let a = expert_waypoint(&world, &s, &cfg);
            let b = expert_waypoint(&world.mirrored_y(), &s, &cfg);
            // Exact ties only arise when both +k and -k are free at the chosen |k|.
            let half = cfg.half_count();
            let tie = a.k != 0
                && a.free_flags[(half + a.k) as usize]
                && a.free_flags[(half - a.k) as usize];
            let all_blocked = !a.free_flags.iter().any(|&f| f);
            if !tie && !all_blocked {
                prop_assert_eq!(a.k, -b.k);
            }
        }
    }
}
