//! Oval track: two straights joined by two semicircles, driven
//! counter-clockwise (left turns), with arc-length parameterization,
//! centerline projection, and signed lateral error.

use serde::{Deserialize, Serialize};

use crate::mppi::{RefPoint, ReferenceTrajectory};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackSpec {
    /// Length of each straight, m.
    pub straight_len: f64,
    /// Radius of each semicircle, m.
    pub radius: f64,
    /// Constant reference speed along the centerline, m/s.
    pub v_ref: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            straight_len: 3.0,
            radius: 1.5,
            // Cornering at v_ref needs v^2/r = 11.8 m/s^2, past the grip
            // limit of every sampled vehicle: the corners are driven at the
            // handling limit, so tire-model errors (not feedback replanning)
            // dominate the lateral-error metric.
            v_ref: 4.2,
        }
    }
}

impl TrackSpec {
    pub fn perimeter(&self) -> f64 {
        2.0 * self.straight_len + 2.0 * std::f64::consts::PI * self.radius
    }

    /// Centerline point and unit tangent at arc length s (s taken mod the
    /// perimeter). s = 0 is the start of the bottom straight, heading +x.
    pub fn point_and_tangent(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let l = self.straight_len;
        let r = self.radius;
        let p = self.perimeter();
        let arc = std::f64::consts::PI * r;
        let s = s.rem_euclid(p);
        if s < l {
            ([s, 0.0], [1.0, 0.0])
        } else if s < l + arc {
            let a = -std::f64::consts::FRAC_PI_2 + (s - l) / r;
            ([l + r * a.cos(), r + r * a.sin()], [-a.sin(), a.cos()])
        } else if s < 2.0 * l + arc {
            let x = l - (s - l - arc);
            ([x, 2.0 * r], [-1.0, 0.0])
        } else {
            let a = std::f64::consts::FRAC_PI_2 + (s - 2.0 * l - arc) / r;
            ([r * a.cos(), r + r * a.sin()], [-a.sin(), a.cos()])
        }
    }

    /// Arc-length coordinate of the centerline point nearest to (x, y).
    /// Ties are broken toward smaller s.
    pub fn project(&self, x: f64, y: f64) -> f64 {
        let l = self.straight_len;
        let r = self.radius;
        let arc = std::f64::consts::PI * r;
        let mut candidates: Vec<f64> = Vec::with_capacity(8);

        // Bottom and top straights: clamp the perpendicular foot.
        candidates.push(x.clamp(0.0, l)); // s in [0, l]
        candidates.push(l + arc + (l - x).clamp(0.0, l)); // top straight

        // Right semicircle, angles in [-pi/2, pi/2].
        let a = f64::atan2(y - r, x - l).clamp(
            -std::f64::consts::FRAC_PI_2,
            std::f64::consts::FRAC_PI_2,
        );
        candidates.push(l + (a + std::f64::consts::FRAC_PI_2) * r);

        // Left semicircle, angles in [pi/2, 3pi/2].
        let mut a2 = f64::atan2(y - r, x);
        if a2 < std::f64::consts::FRAC_PI_2 {
            a2 += 2.0 * std::f64::consts::PI;
        }
        let a2 = a2.clamp(std::f64::consts::FRAC_PI_2, 1.5 * std::f64::consts::PI);
        candidates.push(2.0 * l + arc + (a2 - std::f64::consts::FRAC_PI_2) * r);

        candidates.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let mut best_s = 0.0;
        let mut best_d = f64::INFINITY;
        for s in candidates {
            let (pt, _) = self.point_and_tangent(s);
            let d = (x - pt[0]).hypot(y - pt[1]);
            if d < best_d {
                best_d = d;
                best_s = s;
            }
        }
        best_s.rem_euclid(self.perimeter())
    }

    /// Signed perpendicular distance to the centerline; positive is left of
    /// the direction of travel.
    pub fn lateral_error(&self, state: &VehicleState) -> f64 {
        let s = self.project(state.p_x, state.p_y);
        let (pt, t) = self.point_and_tangent(s);
        // Left normal of the tangent.
        let n = [-t[1], t[0]];
        (state.p_x - pt[0]) * n[0] + (state.p_y - pt[1]) * n[1]
    }
}

/// Project the state onto the centerline and emit the next `horizon` points
/// advanced by v_ref * dt each along arc length.
pub fn make_oval_reference(
    track: &TrackSpec,
    horizon: usize,
    state: &VehicleState,
    dt: f64,
) -> ReferenceTrajectory {
    let s0 = track.project(state.p_x, state.p_y);
    let step = track.v_ref * dt;
    let points = (0..horizon)
        .map(|k| {
            let (pt, _) = track.point_and_tangent(s0 + (k as f64 + 1.0) * step);
            RefPoint {
                p_x: pt[0],
                p_y: pt[1],
                speed: track.v_ref,
            }
        })
        .collect();
    ReferenceTrajectory { points }
}
