//! Angle conventions and planar frame transformations.
//!
//! Three planar frames are involved:
//!
//! - the ground frame (X east, Y north),
//! - the body frame (X to the right of the car, Y straight ahead),
//! - the ZED tracking frame, fixed at the pose the stereo camera had when it
//!   initialised.
//!
//! Headings `ψ` and velocity attitudes `θ` are measured anticlockwise from the
//! ground X axis, so the sideslip is simply `β = θ − ψ`. Frame rotations use
//! the row-vector convention `p_ground = p_body · T(yaw)` with
//!
//! ```text
//! T(yaw) = [  cos yaw   sin yaw ]
//!          [ -sin yaw   cos yaw ]
//! ```
//!
//! where `yaw` is the angle between the body Y axis and the ground Y axis.
//! For a heading `ψ` that is `ψ − π/2`; see [`body_yaw`].

use core::f64::consts::{FRAC_PI_2, PI, TAU};

#[allow(unused_imports)] // resolved to inherent methods when std is linked
use num_traits::Float;

use crate::{Error, Result, Vec2};

/// Ground-frame position and heading of the vehicle centre.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundPose {
    pub x: f64,
    pub y: f64,
    /// Heading, anticlockwise from ground X, wrapped to (−π, π].
    pub psi: f64,
}

impl GroundPose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        GroundPose {
            x,
            y,
            psi: wrap(psi),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Rotation angle of the body frame, see [`body_yaw`].
    pub fn yaw(&self) -> f64 {
        body_yaw(self.psi)
    }
}

/// Ground-frame velocity `(ẋ, ẏ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanarVelocity {
    pub dx: f64,
    pub dy: f64,
}

impl PlanarVelocity {
    pub fn new(dx: f64, dy: f64) -> Self {
        PlanarVelocity { dx, dy }
    }

    /// Builds the velocity of magnitude `speed` along attitude `theta`.
    pub fn from_polar(speed: f64, theta: f64) -> Self {
        PlanarVelocity {
            dx: speed * theta.cos(),
            dy: speed * theta.sin(),
        }
    }

    pub fn speed(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Velocity attitude `θ = atan2(ẏ, ẋ)`; `None` for a stationary car.
    pub fn attitude(&self) -> Option<f64> {
        if self.speed() > 0.0 {
            Some(self.dy.atan2(self.dx))
        } else {
            None
        }
    }
}

/// Body-frame offset of a sensor mount, applied as `offset · T(yaw)` when
/// moving from the sensor position to the vehicle centre.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MountOffset {
    pub px: f64,
    pub py: f64,
}

impl MountOffset {
    pub fn new(px: f64, py: f64) -> Self {
        MountOffset { px, py }
    }

    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.px, self.py)
    }
}

/// Wraps `a` to (−π, π]. Non-finite input is rejected.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::Domain("angle must be finite"));
    }
    Ok(wrap(a))
}

/// Infallible [`wrap_angle`]; NaN and infinities propagate as NaN.
pub fn wrap(a: f64) -> f64 {
    let mut r = a % TAU;
    if r <= -PI {
        r += TAU;
    } else if r > PI {
        r -= TAU;
    }
    r
}

/// Rotation angle of the body frame for a vehicle heading `psi`.
pub fn body_yaw(psi: f64) -> f64 {
    wrap(psi - FRAC_PI_2)
}

/// Row-vector product `p · T(yaw)`.
pub fn rotate_row(p: Vec2, yaw: f64) -> Vec2 {
    let (s, c) = yaw.sin_cos();
    Vec2::new(p.x * c - p.y * s, p.x * s + p.y * c)
}

/// Row-vector product `p · T(yaw)ᵀ`, the inverse of [`rotate_row`].
pub fn unrotate_row(p: Vec2, yaw: f64) -> Vec2 {
    let (s, c) = yaw.sin_cos();
    Vec2::new(p.x * c + p.y * s, -p.x * s + p.y * c)
}

/// Maps a ZED-frame position to the ground-frame vehicle centre:
/// `p_zed · T(yaw0) + offset · T(yaw)`.
///
/// `yaw0` is the body yaw recorded when the ZED initialised and `yaw` the
/// current body yaw.
pub fn zed_to_ground(p_zed: Vec2, yaw0: f64, yaw: f64, offset: &MountOffset) -> Result<Vec2> {
    if !(p_zed.x.is_finite()
        && p_zed.y.is_finite()
        && yaw0.is_finite()
        && yaw.is_finite()
        && offset.px.is_finite()
        && offset.py.is_finite())
    {
        return Err(Error::Domain("ZED correction inputs must be finite"));
    }
    Ok(rotate_row(p_zed, yaw0) + rotate_row(offset.as_vec(), yaw))
}

/// Sideslip `β = θ − ψ`, wrapped.
pub fn sideslip_of(theta: f64, psi: f64) -> f64 {
    wrap(theta - psi)
}

/// Circumnavigation angle: velocity attitude minus the bearing of the vehicle
/// seen from `center`. Equals π/2 on an anticlockwise circle about `center`.
pub fn phi_of(pos: Vec2, vel: &PlanarVelocity, center: Vec2) -> Result<f64> {
    let theta = vel
        .attitude()
        .ok_or(Error::Domain("velocity attitude undefined at zero speed"))?;
    let rel = pos - center;
    if rel.x == 0.0 && rel.y == 0.0 {
        return Err(Error::Domain("bearing undefined at the circle center"));
    }
    Ok(wrap(theta - rel.y.atan2(rel.x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_angle(1.5 * PI).unwrap(), -FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn zed_examples() {
        let z = MountOffset::default();
        let p = zed_to_ground(Vec2::new(1.0, 0.0), 0.0, 0.0, &z).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(1.0, 0.0), epsilon = 1e-15);

        let p = zed_to_ground(Vec2::new(1.0, 0.0), FRAC_PI_2, 0.0, &z).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(0.0, 1.0), epsilon = 1e-15);

        let p = zed_to_ground(Vec2::new(1.0, 0.0), 0.0, PI, &MountOffset::new(0.1, 0.0)).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(0.9, 0.0), epsilon = 1e-15);

        assert!(zed_to_ground(Vec2::new(f64::NAN, 0.0), 0.0, 0.0, &z).is_err());
    }

    #[test]
    fn body_yaw_maps_forward_axis_onto_heading() {
        for &psi in &[0.0, 0.3, 2.0, -1.2, PI] {
            let fwd = rotate_row(Vec2::new(0.0, 1.0), body_yaw(psi));
            assert_abs_diff_eq!(fwd, Vec2::new(psi.cos(), psi.sin()), epsilon = 1e-14);
            let right = rotate_row(Vec2::new(1.0, 0.0), body_yaw(psi));
            assert_abs_diff_eq!(right, Vec2::new(psi.sin(), -psi.cos()), epsilon = 1e-14);
        }
    }

    #[test]
    fn sideslip_examples() {
        assert_eq!(sideslip_of(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(sideslip_of(0.1, 1.5), -1.4, epsilon = 1e-15);
        // wrap(-6) = 2π - 6
        assert_abs_diff_eq!(sideslip_of(-3.0, 3.0), TAU - 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sideslip_of(-3.0, 3.0), 0.28319, epsilon = 1e-5);
    }

    #[test]
    fn phi_examples() {
        let o = Vec2::zeros();
        let phi = phi_of(Vec2::new(1.0, 0.0), &PlanarVelocity::new(0.0, 1.0), o).unwrap();
        assert_abs_diff_eq!(phi, FRAC_PI_2, epsilon = 1e-15);
        let phi = phi_of(Vec2::new(0.0, 1.0), &PlanarVelocity::new(-1.0, 0.0), o).unwrap();
        assert_abs_diff_eq!(phi, FRAC_PI_2, epsilon = 1e-15);
        let phi = phi_of(Vec2::new(1.0, 0.0), &PlanarVelocity::new(1.0, 1.0), o).unwrap();
        assert_abs_diff_eq!(phi, PI / 4.0, epsilon = 1e-15);

        assert!(phi_of(Vec2::new(1.0, 0.0), &PlanarVelocity::new(0.0, 0.0), o).is_err());
        assert!(phi_of(o, &PlanarVelocity::new(1.0, 0.0), o).is_err());
    }

    fn angle_close(a: f64, b: f64, tol: f64) -> bool {
        wrap(a - b).abs() < tol
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(a in -1e4f64..1e4) {
            let w = wrap_angle(a).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap(w), w);
            // same class mod 2π
            let k = ((a - w) / TAU).round();
            prop_assert!((a - w - k * TAU).abs() < 1e-9);
        }

        #[test]
        fn zed_identity_without_rotation(x in -50.0f64..50.0, y in -50.0f64..50.0, yaw in -PI..PI) {
            let p = zed_to_ground(Vec2::new(x, y), 0.0, yaw, &MountOffset::default()).unwrap();
            prop_assert_eq!(p, Vec2::new(x, y));
        }

        #[test]
        fn sideslip_is_two_pi_periodic(theta in -PI..PI, psi in -PI..PI) {
            let a = sideslip_of(theta + TAU, psi);
            let b = sideslip_of(theta, psi);
            // equal up to the rounding of θ + 2π
            prop_assert!(angle_close(a, b, 1e-14));
        }

        #[test]
        fn phi_is_rotation_invariant(
            px in -5.0f64..5.0, py in -5.0f64..5.0,
            vx in -3.0f64..3.0, vy in -3.0f64..3.0,
            cx in -5.0f64..5.0, cy in -5.0f64..5.0,
            rot in -PI..PI,
        ) {
            prop_assume!((px - cx).hypot(py - cy) > 1e-3 && vx.hypot(vy) > 1e-3);
            let pos = Vec2::new(px, py);
            let c = Vec2::new(cx, cy);
            let v = Vec2::new(vx, vy);
            let phi = phi_of(pos, &PlanarVelocity::new(v.x, v.y), c).unwrap();
            let (pr, cr, vr) = (rotate_row(pos, rot), rotate_row(c, rot), rotate_row(v, rot));
            let phi_r = phi_of(pr, &PlanarVelocity::new(vr.x, vr.y), cr).unwrap();
            prop_assert!(angle_close(phi, phi_r, 1e-12));
        }
    }
}
