//! Analytic and numerical oracles for absorption on the unit interval.
//!
//! A walk on `[0, 1]` with diffusion coefficient `D(ξ)`, constant drift `ν`
//! and absorbing ends is the two-outcome case of the simplex walk. The
//! functions here compute its probability of ending at `ξ = 1` in several
//! independent ways so the Monte Carlo engine can be checked against them.

mod green;
mod profile;
mod spectral;

pub use green::green_hitting_probability;
pub use profile::{
    Diffusivity, MonotoneCubic, Profile1D, DEFAULT_GRID, DEFAULT_MODES, D_MIN, MIN_GRID,
};
pub use spectral::{
    flux_hitting_probability, flux_series, reconstruct_density, sturm_liouville_modes,
    DensitySnapshot, FluxSeries, SpectralSolution, FLUX_TOLERANCE,
};

use crate::error::{Error, Result};

const QUAD_TOLERANCE: f64 = 1e-13;
/// Below this `|ν / D|` the drifted closed form is replaced by its limit `α`.
const DRIFT_LIMIT: f64 = 1e-12;

fn check_open_unit(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            value: alpha,
            domain: "(0, 1)",
        })
    }
}

/// `∫_a^b f`, split at the profile's breakpoints.
pub(crate) fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
    let mut cuts = vec![a];
    cuts.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    cuts.push(b);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let out = quadrature::double_exponential::integrate(&f, w[0], w[1], QUAD_TOLERANCE);
        if !out.integral.is_finite() || out.error_estimate > 1e-10 * (1.0 + out.integral.abs()) {
            return Err(Error::Numerical(format!(
                "quadrature on [{}, {}] did not converge (estimate {:e})",
                w[0], w[1], out.error_estimate
            )));
        }
        total += out.integral;
    }
    Ok(total)
}

/// Probability of absorption at `ξ = 1` from `α`, from the stationary
/// backward equation `(D P')' + ν P' = 0` with `P(0) = 0`, `P(1) = 1`.
///
/// Undrifted profiles give `P(α) = ∫₀^α 1/D / ∫₀^1 1/D`. Drifted profiles with
/// constant `D` use [`biased_closed_form`]; otherwise the flux weight
/// `exp(−∫ ν/D) / D` is integrated numerically.
pub fn hitting_probability_ode(profile: &Profile1D, alpha: f64) -> Result<f64> {
    check_open_unit(alpha)?;
    profile.validate()?;
    let breaks = profile.diffusivity.breakpoints();
    if profile.nu == 0.0 {
        let w = |x: f64| 1.0 / profile.d(x);
        let head = integrate(w, 0.0, alpha, &breaks)?;
        let tail = integrate(w, alpha, 1.0, &breaks)?;
        return Ok(head / (head + tail));
    }
    if profile.diffusivity.is_constant() {
        return biased_closed_form(profile.nu, profile.d(0.0), alpha);
    }
    let nu = profile.nu;
    let phi = |x: f64| integrate(|s| nu / profile.d(s), 0.0, x, &breaks);
    let weight = |x: f64| match phi(x) {
        Ok(p) => (-p).exp() / profile.d(x),
        Err(_) => f64::NAN,
    };
    let head = integrate(weight, 0.0, alpha, &breaks)?;
    let tail = integrate(weight, alpha, 1.0, &breaks)?;
    Ok(head / (head + tail))
}

/// `(1 − e^{−να/D}) / (1 − e^{−ν/D})`, the absorption probability at `ξ = 1`
/// for constant `D` and drift `ν`; equals `α` when `ν = 0`.
pub fn biased_closed_form(nu: f64, d: f64, alpha: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain {
            value: d,
            domain: "D > 0",
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain {
            value: alpha,
            domain: "[0, 1]",
        });
    }
    if !nu.is_finite() {
        return Err(Error::Domain {
            value: nu,
            domain: "finite drift",
        });
    }
    let r = nu / d;
    if r.abs() < DRIFT_LIMIT {
        return Ok(alpha);
    }
    Ok((-r * alpha).exp_m1() / (-r).exp_m1())
}
