//! Cross-checks of the interval oracles against discrete birth–death chains.

use approx::assert_abs_diff_eq;
use simplex_reduction::oracle::{
    biased_closed_form, flux_hitting_probability, green_hitting_probability,
    hitting_probability_ode, reconstruct_density, sturm_liouville_modes, Profile1D,
};

/// Probability that a nearest-neighbour chain on `{0, h, …, 1}` reaches 1
/// before 0, with up/down rates `D(x ± h/2)/h² ± ν/(2h)`.
fn chain_hitting(d: impl Fn(f64) -> f64, nu: f64, nodes: usize) -> Vec<f64> {
    let h = 1.0 / nodes as f64;
    let m = nodes - 1;
    // Row k (interior node k+1): −(up+down) P_k + up P_{k+1} + down P_{k−1} = 0.
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for k in 0..m {
        let x = (k + 1) as f64 * h;
        let up = d(x + 0.5 * h) / (h * h) + nu / (2.0 * h);
        let down = d(x - 0.5 * h) / (h * h) - nu / (2.0 * h);
        assert!(up > 0.0 && down > 0.0);
        lower[k] = down;
        diag[k] = -(up + down);
        upper[k] = up;
        if k == m - 1 {
            rhs[k] = -up;
        }
    }
    for k in 1..m {
        let w = lower[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut p = vec![0.0; m];
    p[m - 1] = rhs[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        p[k] = (rhs[k] - upper[k] * p[k + 1]) / diag[k];
    }
    let mut full = vec![0.0];
    full.extend(p);
    full.push(1.0);
    full
}

#[test]
fn linear_profile_agrees_with_chain() {
    let chain = chain_hitting(|x| 1.0 + x, 0.0, 2000);
    let exact = 1.5f64.ln() / 2f64.ln();
    assert_abs_diff_eq!(chain[1000], exact, epsilon = 1e-6);
    assert_abs_diff_eq!(
        hitting_probability_ode(&Profile1D::linear(1.0), 0.5).unwrap(),
        chain[1000],
        epsilon = 1e-6
    );
}

#[test]
fn biased_closed_form_agrees_with_chain() {
    // ν/D = 1 selects the denominator 1 − e^{−ν/D}; the alternative printed
    // with e^{ν/D} − 1 would give ≈ 0.229 here.
    let chain = chain_hitting(|_| 1.0, 1.0, 2000);
    let closed = biased_closed_form(1.0, 1.0, 0.5).unwrap();
    assert_abs_diff_eq!(closed, 0.622_459_33, epsilon = 1e-8);
    assert_abs_diff_eq!(chain[1000], closed, epsilon = 1e-6);
    for (nu, d) in [(-2.0, 0.5), (3.0, 2.0)] {
        let chain = chain_hitting(|_| d, nu, 2000);
        for k in [200, 700, 1500] {
            let a = k as f64 / 2000.0;
            assert_abs_diff_eq!(chain[k], biased_closed_form(nu, d, a).unwrap(), epsilon = 1e-5);
        }
    }
}

#[test]
fn drifted_inhomogeneous_ode_agrees_with_chain() {
    let prof = Profile1D::sinusoidal(0.5).with_nu(0.8);
    let chain = chain_hitting(|x| 1.0 + 0.5 * (std::f64::consts::PI * x).sin(), 0.8, 2000);
    for k in [300, 1000, 1700] {
        let a = k as f64 / 2000.0;
        assert_abs_diff_eq!(hitting_probability_ode(&prof, a).unwrap(), chain[k], epsilon = 1e-5);
    }
}

#[test]
fn three_oracles_agree() {
    let xs: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
    let ds: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x * x).collect();
    let profiles = [
        Profile1D::constant(1.0),
        Profile1D::constant(3.5),
        Profile1D::linear(1.0),
        Profile1D::linear(4.0),
        Profile1D::sinusoidal(0.5),
        Profile1D::sinusoidal(-0.4),
        Profile1D::tabulated(xs, ds).unwrap(),
    ];
    for prof in &profiles {
        for a in [0.1, 0.3, 0.5, 0.77, 0.9] {
            let ode = hitting_probability_ode(prof, a).unwrap();
            let flux = flux_hitting_probability(prof, a, 64).unwrap();
            let green = green_hitting_probability(prof, a).unwrap();
            assert_abs_diff_eq!(flux, ode, epsilon = 1e-4);
            assert_abs_diff_eq!(green, ode, epsilon = 1e-8);
        }
    }
}

#[test]
fn constant_profiles_return_the_start() {
    for d in [0.5, 1.0, 2.0] {
        let prof = Profile1D::constant(d);
        for a in [0.2, 0.5, 0.65] {
            assert_abs_diff_eq!(hitting_probability_ode(&prof, a).unwrap(), a, epsilon = 1e-10);
            assert_abs_diff_eq!(flux_hitting_probability(&prof, a, 64).unwrap(), a, epsilon = 1e-4);
            assert_abs_diff_eq!(green_hitting_probability(&prof, a).unwrap(), a, epsilon = 1e-8);
        }
    }
}

#[test]
fn laplacian_eigenvalues_to_five_modes() {
    let sol = sturm_liouville_modes(&Profile1D::constant(1.0), 64).unwrap();
    for n in 1..=5 {
        let exact = (n as f64 * std::f64::consts::PI).powi(2);
        assert!((sol.eigenvalues[n - 1] - exact).abs() / exact < 1e-4);
    }
    assert!(sol.eigenvalues.iter().all(|l| *l > 0.0));
    assert!(sol.orthonormality_error() < 1e-8);
}

#[test]
fn density_mass_decays_for_every_profile() {
    for prof in [Profile1D::constant(1.0), Profile1D::linear(1.0), Profile1D::sinusoidal(0.7)] {
        let sol = sturm_liouville_modes(&prof, 64).unwrap();
        let masses: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.5]
            .iter()
            .map(|t| reconstruct_density(&sol, 0.4, *t).unwrap().mass)
            .collect();
        assert!(masses.windows(2).all(|w| w[1] < w[0]));
        assert!(masses[0] <= 1.0 + 1e-6);
    }
}
