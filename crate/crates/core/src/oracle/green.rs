use super::{check_open_unit, Profile1D};
use crate::error::{Error, Result};

const SHOOTING_STEPS: usize = 8192;

/// Integrates the homogeneous system `u' = f / D`, `f' = 0` (with `f = D u'`)
/// from `from` to `to` by classical Runge–Kutta, returning `(u, f)` at `to`.
fn shoot(profile: &Profile1D, from: f64, to: f64, u0: f64, f0: f64) -> (f64, f64) {
    let h = (to - from) / SHOOTING_STEPS as f64;
    let rhs = |x: f64, f: f64| f / profile.d(x);
    let (mut u, f) = (u0, f0);
    for i in 0..SHOOTING_STEPS {
        let x = from + i as f64 * h;
        let k1 = rhs(x, f);
        let k2 = rhs(x + 0.5 * h, f);
        let k3 = rhs(x + 0.5 * h, f);
        let k4 = rhs(x + h, f);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    (u, f)
}

/// Probability of absorption at `ξ = 1` as `D(1) g'(1⁻)`, where `g` is the
/// Green function of `L = d/dξ (D d/dξ)` with Dirichlet ends and a unit
/// source at `α`.
///
/// `g` is built from the left solution (`u(0) = 0`) and the right solution
/// (`u(1) = 0`), scaled to be continuous at `α` with the flux jump
/// `D(α) [g']_α = 1`.
pub fn green_hitting_probability(profile: &Profile1D, alpha: f64) -> Result<f64> {
    check_open_unit(alpha)?;
    profile.validate()?;
    if profile.nu != 0.0 {
        return Err(Error::Profile("the Green-function oracle needs an undrifted profile".into()));
    }
    let (ul, fl) = shoot(profile, 0.0, alpha, 0.0, 1.0);
    let (ur, fr) = shoot(profile, 1.0, alpha, 0.0, -1.0);
    // g = a u_L on [0, α], b u_R on [α, 1]:
    //   a u_L(α) − b u_R(α) = 0,   b f_R(α) − a f_L(α) = 1.
    let det = -ul * fr + ur * fl;
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(Error::Numerical(format!("Green-function matching failed (det = {det:e})")));
    }
    let a = -ur / det;
    let b = -ul / det;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical("Green-function matching produced non-finite weights".into()));
    }
    // D(1) g'(1⁻) = b · f_R(1), and f is constant along each branch.
    Ok(b * fr)
}
