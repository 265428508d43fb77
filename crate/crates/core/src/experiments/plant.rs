//! Four-species chronic inflammation plant: bacteria `x_B`, pro-inflammatory
//! `x_P`, anti-inflammatory `x_A` and tissue damage `x_D`.
//!
//! ```text
//! ẋ_B = r_B·x_B·(1 − x_B/κ_B) − p·x_P·x_B/(h_B + x_B)
//! ẋ_P = (a_B·x_B/(h_PB + x_B) + a_D·x_D/(h_PD + x_D)) / (1 + (x_A/h_A)²) − d_P·x_P
//! ẋ_D = a_DP·x_P²/(h_DP² + x_P²) + s_D − d_D·x_D·(1 + a_r·x_A/(h_r + x_A))
//! ẋ_A = a_AP·x_P/(h_AP + x_P) + a_ADg·x_D/(h_AD + x_D) + κ_u·u − d_A·x_A
//! ```
//!
//! Without control the damage loop drifts to a chronic state far above
//! 150. A constant strong anti-inflammatory action keeps damage low but
//! leaves an infection uncleared, so a useful controller has to back off
//! while bacteria are present.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Scalar;

pub const B: usize = 0;
pub const P: usize = 1;
pub const A: usize = 2;
pub const D: usize = 3;

pub const SPECIES: [&str; 4] = ["x_B", "x_P", "x_A", "x_D"];

/// Calibrated constants; the same values ship in `configs/immune_plant.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmunePlantParams {
    pub r_b: f64,
    pub kappa_b: f64,
    pub h_b: f64,
    pub a_b: f64,
    pub h_pb: f64,
    pub a_d: f64,
    pub h_pd: f64,
    pub h_a: f64,
    pub d_p: f64,
    pub a_dp: f64,
    pub h_dp: f64,
    pub s_d: f64,
    pub d_d: f64,
    pub a_r: f64,
    pub h_r: f64,
    pub a_ap: f64,
    pub h_ap: f64,
    pub a_adg: f64,
    pub h_ad: f64,
    pub d_a: f64,
    pub kappa_u: f64,
    /// Damage level of the initial state.
    pub x_d0: f64,
}

impl Default for ImmunePlantParams {
    fn default() -> Self {
        Self {
            r_b: 0.6,
            kappa_b: 1000.0,
            h_b: 2.0,
            a_b: 30.0,
            h_pb: 20.0,
            a_d: 3.0,
            h_pd: 100.0,
            h_a: 1.0,
            d_p: 1.0,
            a_dp: 3.0,
            h_dp: 2.0,
            s_d: 0.25,
            d_d: 0.005,
            a_r: 1.0,
            h_r: 1.0,
            a_ap: 0.5,
            h_ap: 5.0,
            a_adg: 0.2,
            h_ad: 100.0,
            d_a: 0.5,
            kappa_u: 5.0,
            x_d0: 50.0,
        }
    }
}

impl ImmunePlantParams {
    pub fn validate(&self) -> Result<()> {
        let v = serde_json::to_value(self)?;
        for (name, value) in v.as_object().expect("struct serializes to an object") {
            let x = value.as_f64().unwrap_or(f64::NAN);
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("plant constant {name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Untreated, uninfected state at damage `x_d0` with the fast pair
    /// `(x_P, x_A)` at equilibrium.
    pub fn initial_state(&self) -> [f64; 4] {
        let dmg = self.x_d0;
        let drive_p = self.a_d * dmg / (self.h_pd + dmg);
        let pro = |anti: f64| drive_p / (1.0 + (anti / self.h_a).powi(2)) / self.d_p;
        let base_a = self.a_adg * dmg / (self.h_ad + dmg);
        // anti − A(pro(anti)) is increasing in anti, so bisection finds the root.
        let residual = |anti: f64| {
            let p = pro(anti);
            anti - (self.a_ap * p / (self.h_ap + p) + base_a) / self.d_a
        };
        let (mut lo, mut hi) = (0.0, (self.a_ap + base_a) / self.d_a + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let anti = 0.5 * (lo + hi);
        [0.0, pro(anti), anti, dmg]
    }
}

/// Plant derivative for kill rate `p` and control action `u`.
pub fn immune_rhs<S: Scalar>(x: &[S], u: S, p: f64, k: &ImmunePlantParams, dx: &mut [S]) {
    let (xb, xp, xa, xd) = (x[B], x[P], x[A], x[D]);
    dx[B] = xb * (S::constant(1.0) - xb / k.kappa_b) * k.r_b - xp * xb / (xb + k.h_b) * p;
    let drive = xb / (xb + k.h_pb) * k.a_b + xd / (xd + k.h_pd) * k.a_d;
    let inhibit = (xa / k.h_a).square() + 1.0;
    dx[P] = drive / inhibit - xp * k.d_p;
    let pp = xp.square();
    let clearance = xa / (xa + k.h_r) * k.a_r + 1.0;
    dx[D] = pp / (pp + k.h_dp * k.h_dp) * k.a_dp + k.s_d - xd * clearance * k.d_d;
    dx[A] = xp / (xp + k.h_ap) * k.a_ap + xd / (xd + k.h_ad) * k.a_adg + u * k.kappa_u - xa * k.d_a;
}

/// Checked variant of [`immune_rhs`] on plain values.
pub fn immune_rhs_checked(x: &[f64], u: f64, p: f64, k: &ImmunePlantParams) -> Result<[f64; 4]> {
    if x.len() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, got: x.len() });
    }
    if x.iter().chain([&u, &p]).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("plant state {x:?}, u={u}, p={p}")));
    }
    let mut dx = [0.0; 4];
    immune_rhs(x, u, p, k, &mut dx);
    Ok(dx)
}
