//! Edge transfer functions with the branch `Im sqrt(E) >= 0`.
//!
//! For a segment of length `l` the reduction uses `sqrt(E)/sin(l sqrt(E))`
//! and `sqrt(E) cot(l sqrt(E))`. Both are real-analytic in `E` away from the
//! Dirichlet values and become hyperbolic for `E < 0`; near `E = 0` they are
//! evaluated from their Taylor series in `z = E l^2`.

/// Below this `|E| l^2` the series branch is used.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// `sqrt(E) / sin(l sqrt(E))`.
pub fn hop(e: f64, l: f64) -> f64 {
    let z = e * l * l;
    if z.abs() < SERIES_THRESHOLD {
        // x / sin x = 1 + z/6 + 7 z^2/360 + 31 z^3/15120
        return (1.0 + z * (1.0 / 6.0 + z * (7.0 / 360.0 + z * 31.0 / 15120.0))) / l;
    }
    if e > 0.0 {
        let k = e.sqrt();
        k / (l * k).sin()
    } else {
        let k = (-e).sqrt();
        k / (l * k).sinh()
    }
}

/// `sqrt(E) cot(l sqrt(E))`.
pub fn cot_term(e: f64, l: f64) -> f64 {
    let z = e * l * l;
    if z.abs() < SERIES_THRESHOLD {
        // x cot x = 1 - z/3 - z^2/45 - 2 z^3/945
        return (1.0 - z * (1.0 / 3.0 + z * (1.0 / 45.0 + z * 2.0 / 945.0))) / l;
    }
    if e > 0.0 {
        let k = e.sqrt();
        k / (l * k).tan()
    } else {
        let k = (-e).sqrt();
        k / (l * k).tanh()
    }
}

/// `sin(l sqrt(E)) / sqrt(E)`, continued through `E = 0` (value `l`).
pub fn sinc_len(e: f64, l: f64) -> f64 {
    let z = e * l * l;
    if z.abs() < SERIES_THRESHOLD {
        // sin x / x = 1 - z/6 + z^2/120 - z^3/5040
        return l * (1.0 - z * (1.0 / 6.0 - z * (1.0 / 120.0 - z / 5040.0)));
    }
    if e > 0.0 {
        let k = e.sqrt();
        (l * k).sin() / k
    } else {
        let k = (-e).sqrt();
        (l * k).sinh() / k
    }
}

/// `cos(l sqrt(E))`, i.e. `cosh(l sqrt(-E))` for negative energies.
pub fn cos_len(e: f64, l: f64) -> f64 {
    if e >= 0.0 {
        (l * e.sqrt()).cos()
    } else {
        (l * (-e).sqrt()).cosh()
    }
}

/// `d/dE` of [`hop`].
pub fn hop_de(e: f64, l: f64) -> f64 {
    let z = e * l * l;
    if z.abs() < 1e-3 {
        return l * (1.0 / 6.0 + z * (7.0 / 180.0 + z * 31.0 / 5040.0));
    }
    if e > 0.0 {
        let x = l * e.sqrt();
        let s = x.sin();
        l * (s - x * x.cos()) / (2.0 * x * s * s)
    } else {
        let y = l * (-e).sqrt();
        let s = y.sinh();
        l * (y * y.cosh() - s) / (2.0 * y * s * s)
    }
}

/// `d/dE` of [`cot_term`].
pub fn cot_term_de(e: f64, l: f64) -> f64 {
    let z = e * l * l;
    if z.abs() < 1e-3 {
        return -l * (1.0 / 3.0 + z * (2.0 / 45.0 + z * 2.0 / 315.0));
    }
    if e > 0.0 {
        let x = l * e.sqrt();
        let s = x.sin();
        l * (x.cos() / s - x / (s * s)) / (2.0 * x)
    } else {
        let y = l * (-e).sqrt();
        let s = y.sinh();
        -l * (y.cosh() / s - y / (s * s)) / (2.0 * y)
    }
}

/// Distance in energy from `e` to the nearest Dirichlet value `(pi k / l)^2`, `k >= 1`.
pub fn dirichlet_gap(e: f64, l: f64) -> f64 {
    let first = (std::f64::consts::PI / l).powi(2);
    if e <= first {
        return first - e;
    }
    let k = (e.sqrt() * l / std::f64::consts::PI).floor().max(1.0);
    let below = (std::f64::consts::PI * k / l).powi(2);
    let above = (std::f64::consts::PI * (k + 1.0) / l).powi(2);
    (e - below).abs().min((above - e).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_closed_forms_agree_across_threshold() {
        for &l in &[0.8, 1.0, 1.2] {
            for &sign in &[-1.0, 1.0] {
                // just above the switch the closed form is used
                let e = sign * 1.01 * SERIES_THRESHOLD / (l * l);
                let k = e.abs().sqrt();
                let (hop_cf, cot_cf) = if e > 0.0 {
                    (k / (l * k).sin(), k / (l * k).tan())
                } else {
                    (k / (l * k).sinh(), k / (l * k).tanh())
                };
                assert!((hop(e, l) - hop_cf).abs() < 1e-12);
                assert!((cot_term(e, l) - cot_cf).abs() < 1e-12);
                let e2 = sign * 0.99 * SERIES_THRESHOLD / (l * l);
                let k2 = e2.abs().sqrt();
                let hop_cf2 = if e2 > 0.0 {
                    k2 / (l * k2).sin()
                } else {
                    k2 / (l * k2).sinh()
                };
                assert!((hop(e2, l) - hop_cf2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_energy_limits() {
        assert!((hop(0.0, 1.25) - 0.8).abs() < 1e-15);
        assert!((cot_term(0.0, 1.25) - 0.8).abs() < 1e-15);
        assert!((sinc_len(0.0, 1.25) - 1.25).abs() < 1e-15);
        assert!((hop(1e-12, 0.9) - 1.0 / 0.9).abs() < 1e-8);
        assert!((cot_term(-1e-12, 0.9) - 1.0 / 0.9).abs() < 1e-8);
    }

    #[test]
    fn dirichlet_gap_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((dirichlet_gap(pi2 + 0.5, 1.0) - 0.5).abs() < 1e-12);
        assert!((dirichlet_gap(4.0 * pi2 - 0.25, 1.0) - 0.25).abs() < 1e-12);
        assert!((dirichlet_gap(-3.0, 1.0) - (pi2 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn energy_derivatives_match_differences() {
        for &l in &[0.8, 1.0, 1.2] {
            for &e in &[-4.0, -0.5, -1e-4, 0.0, 2e-4, 0.7, 3.0, 20.0] {
                let h = 1e-6;
                let fd_hop = (hop(e + h, l) - hop(e - h, l)) / (2.0 * h);
                let fd_cot = (cot_term(e + h, l) - cot_term(e - h, l)) / (2.0 * h);
                assert!((hop_de(e, l) - fd_hop).abs() < 1e-6 * (1.0 + fd_hop.abs()), "hop {e} {l}");
                assert!((cot_term_de(e, l) - fd_cot).abs() < 1e-6 * (1.0 + fd_cot.abs()), "cot {e} {l}");
            }
        }
    }
}
