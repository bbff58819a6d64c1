//! First-order correction to a rigid-rotation torus.
//!
//! On the zeroth-order torus each action is `v_l = r_l e^{iθ_l}`. Its exact
//! phase rate `φ_l = -i v̇_l / v_l - μ_l` is a function on the torus; the mean
//! shifts the frequency and the oscillating part integrates, line by line, to
//! the phase deviation `Δθ_l = Σ θ̃_lnm e^{i(nθ1 + mθ2)}`.

use num_complex::Complex64;

use crate::dynamics::ModelSpec;
use crate::error::{Error, Result};
use crate::polyalg::real_to_resonance;
use crate::torusmap::{fourier2d, synthesize_grid, Combination, FourierTable, TorusGrid};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Actions smaller than this at a node make `φ` meaningless.
pub const MIN_ACTION: f64 = 1e-12;

/// Phase rates sampled on a torus grid.
#[derive(Clone, Debug)]
pub struct PhiField {
    pub n1: usize,
    pub n2: usize,
    /// `φ_l` at node `i * n2 + k`.
    pub values: [Vec<Complex64>; 2],
    /// Plane averages `φ̄_l`, the `(0, 0)` coefficients of `tables`.
    pub mean: [Complex64; 2],
    pub tables: [FourierTable; 2],
}

/// `φ_l` at every node of `grid`, with `v̇` taken from the model's own vector
/// field through the chain rule.
pub fn phi_fields(comb: &Combination, model: &ModelSpec, grid: &TorusGrid, window: usize) -> Result<PhiField> {
    let map = comb.action_map()?;
    let mu = [model.mu_x, model.mu_y];
    let n = grid.states.len();
    let mut values = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (idx, s) in grid.states.iter().enumerate() {
        let (v, grad) = map.values_and_gradient(s);
        let zdot = model.resonance_rhs(&real_to_resonance(s));
        for l in 0..2 {
            if !(v[l].norm() >= MIN_ACTION) {
                return Err(Error::DivisionBlowup { i: idx / grid.n2, k: idx % grid.n2, magnitude: v[l].norm() });
            }
            let vdot: Complex64 = grad[l].iter().zip(&zdot).map(|(g, z)| g * z).sum();
            values[l].push(-I * vdot / v[l] - mu[l]);
        }
    }
    let tables = [
        fourier2d(&values[0], grid.n1, grid.n2, window)?,
        fourier2d(&values[1], grid.n1, grid.n2, window)?,
    ];
    let mean = [tables[0].get(0, 0), tables[1].get(0, 0)];
    Ok(PhiField { n1: grid.n1, n2: grid.n2, values, mean, tables })
}

/// `ω_l = μ_l + Re φ̄_l`, plus `max_l |Im φ̄_l|`, which vanishes on a true torus.
pub fn update_frequencies(phi: &PhiField, mu: [f64; 2]) -> ([f64; 2], f64) {
    let omega = [mu[0] + phi.mean[0].re, mu[1] + phi.mean[1].re];
    (omega, phi.mean[0].im.abs().max(phi.mean[1].im.abs()))
}

/// What to do with a line whose divisor `nω1 + mω2` is nearly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivisorPolicy {
    /// Zero the line and report it.
    #[default]
    Suppress,
    /// Stop with a resonance error.
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuppressedLine {
    pub action: usize,
    pub n: i32,
    pub m: i32,
    pub divisor: f64,
    pub magnitude: f64,
}

/// Phase-deviation spectra `θ̃_l`, fixed so that `Δθ_l` vanishes at the
/// initial phases.
#[derive(Clone, Debug)]
pub struct ThetaTables {
    pub tables: [FourierTable; 2],
    pub omega: [f64; 2],
    pub theta0: [f64; 2],
    pub suppressed: Vec<SuppressedLine>,
}

impl ThetaTables {
    /// `Δθ_l` at phases `(t1, t2)`.
    pub fn deviation(&self, l: usize, t1: f64, t2: f64) -> Complex64 {
        self.tables[l].synthesize(t1, t2)
    }

    /// Largest `Σ_nm |θ̃_lnm|` over both actions; bounds `|Δθ_l|` everywhere.
    pub fn total_magnitude(&self) -> f64 {
        self.tables.iter().map(|t| t.lines().map(|x| x.2.norm()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Smallest divisor treated as regular for frequencies `omega`.
pub fn divisor_floor(omega: [f64; 2]) -> f64 {
    1e-3 * omega[0].min(omega[1])
}

/// Divide each `φ̃_lnm` by `i(nω1 + mω2)` and set the `(0, 0)` lines so that
/// `Δθ_l(θ10, θ20) = 0`. The mean of `φ` is not used; it belongs to `ω`.
pub fn theta_tables(
    phi_tables: &[FourierTable; 2],
    omega: [f64; 2],
    theta0: [f64; 2],
    policy: DivisorPolicy,
) -> Result<ThetaTables> {
    let floor = divisor_floor(omega);
    let mut suppressed = Vec::new();
    let mut tables = [FourierTable::zeros(phi_tables[0].window()), FourierTable::zeros(phi_tables[1].window())];
    for l in 0..2 {
        let noise = 1e-12 * phi_tables[l].lines().map(|x| x.2.norm()).fold(0.0, f64::max);
        let mut at_start = Complex64::new(0.0, 0.0);
        for (n, m, c) in phi_tables[l].lines() {
            if n == 0 && m == 0 {
                continue;
            }
            let divisor = n as f64 * omega[0] + m as f64 * omega[1];
            if divisor.abs() < floor {
                if c.norm() > noise {
                    if policy == DivisorPolicy::Fail {
                        return Err(Error::ResonanceObstruction { action: l + 1, n, m, divisor });
                    }
                    suppressed.push(SuppressedLine { action: l + 1, n, m, divisor, magnitude: c.norm() });
                }
                continue;
            }
            let t = c / (I * divisor);
            tables[l].set(n, m, t);
            at_start += t * Complex64::from_polar(1.0, n as f64 * theta0[0] + m as f64 * theta0[1]);
        }
        tables[l].set(0, 0, -at_start);
    }
    if !suppressed.is_empty() {
        log::warn!("{} near-resonant lines suppressed", suppressed.len());
    }
    Ok(ThetaTables { tables, omega, theta0, suppressed })
}

/// Spectra of the linearized first-order actions `v_l / r_l = e^{iθ_l}(1 + iΔθ_l)`
/// in torus phases. Action 1 has main line `(1, 0) = 1 + iθ̃_1,00` and side
/// lines `(k, m) = iθ̃_1,k-1,m`; action 2 is shifted in `m` instead. The window
/// grows by one so every shifted line fits.
pub fn linearized_actions(theta: &ThetaTables) -> [FourierTable; 2] {
    let w = theta.tables[0].window();
    let mut out = [FourierTable::zeros(w + 1), FourierTable::zeros(w + 1)];
    for (n, m, c) in theta.tables[0].lines() {
        out[0].set(n + 1, m, I * c);
    }
    for (n, m, c) in theta.tables[1].lines() {
        out[1].set(n, m + 1, I * c);
    }
    for (l, (n, m)) in [(1, 0), (0, 1)].into_iter().enumerate() {
        let v = out[l].get(n, m);
        out[l].set(n, m, v + 1.0);
    }
    out
}

/// First-order action spectra with the constant phase `θ̃_l,00` factored out:
/// main line exactly 1, side lines `iθ̃` as in [`linearized_actions`]. This is
/// the first-order expansion of `e^{iθ_l} e^{iΔθ_l}`, whose constant part is a
/// pure phase factor and carries no fluctuation.
pub fn first_order_actions(theta: &ThetaTables) -> [FourierTable; 2] {
    let mut out = linearized_actions(theta);
    out[0].set(1, 0, Complex64::new(1.0, 0.0));
    out[1].set(0, 1, Complex64::new(1.0, 0.0));
    out
}

/// The same spectra referenced to time: the coefficient of `e^{i(kω1+mω2)t}`
/// in `v_l e^{-iθ_l0} / r_l`, which picks up the initial-phase factors of the
/// deviation lines.
pub fn time_referenced(first_order: &[FourierTable; 2], theta0: [f64; 2]) -> [FourierTable; 2] {
    let shifts = [(1, 0), (0, 1)];
    let mut out = first_order.clone();
    for l in 0..2 {
        let (dn, dm) = shifts[l];
        out[l] = first_order[l].map(|k, m, c| {
            c * Complex64::from_polar(1.0, (k - dn) as f64 * theta0[0] + (m - dm) as f64 * theta0[1])
        });
    }
    out
}

/// Targets `r_l e^{iθ_l}(1 + iΔθ_l)` at every node of an `n1 x n2` grid.
pub fn first_order_targets(theta: &ThetaTables, r: [f64; 2], n1: usize, n2: usize) -> Result<Vec<[Complex64; 2]>> {
    let d1 = synthesize_grid(&theta.tables[0], n1, n2)?;
    let d2 = synthesize_grid(&theta.tables[1], n1, n2)?;
    let step1 = 2.0 * std::f64::consts::PI / n1 as f64;
    let step2 = 2.0 * std::f64::consts::PI / n2 as f64;
    let mut out = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for k in 0..n2 {
            let idx = i * n2 + k;
            out.push([
                Complex64::from_polar(r[0], i as f64 * step1) * (1.0 + I * d1[idx]),
                Complex64::from_polar(r[1], k as f64 * step2) * (1.0 + I * d2[idx]),
            ]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::henon_heiles;
    use crate::polyalg::{BasisLayout, TruncPoly};
    use crate::torusmap::{max_window, sample_torus, NewtonOptions};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn phi_with(lines: &[(i32, i32, Complex64)]) -> [FourierTable; 2] {
        let mut t = FourierTable::zeros(4);
        for &(n, m, v) in lines {
            t.set(n, m, v);
        }
        [t.clone(), t.scale(c(0.0, 2.0))]
    }

    #[test]
    fn constant_phi_gives_no_deviation() {
        let th = theta_tables(&phi_with(&[(0, 0, c(0.3, 0.01))]), [0.9, 1.1], [0.2, -0.4], DivisorPolicy::Fail)
            .unwrap();
        assert!(th.tables.iter().all(|t| t.power() == 0.0));
        let v = linearized_actions(&th);
        assert_eq!(v[0].get(1, 0), c(1.0, 0.0));
        assert_eq!(v[1].get(0, 1), c(1.0, 0.0));
        assert_eq!(v[0].power() + v[1].power(), 2.0);
    }

    #[test]
    fn single_line_division() {
        let (w1, w2) = (0.912, 1.030);
        let p = c(0.02, -0.01);
        let th = theta_tables(&phi_with(&[(1, -1, p)]), [w1, w2], [0.0, 0.0], DivisorPolicy::Fail).unwrap();
        let expect = p / c(0.0, w1 - w2);
        assert!((th.tables[0].get(1, -1) - expect).norm() < 1e-15);
        assert!((th.tables[0].get(0, 0) + expect).norm() < 1e-15);
        // action 2 carries the shifted line at (1, 0)
        let v = first_order_actions(&th);
        assert!((v[1].get(1, 0) - I * th.tables[1].get(1, -1)).norm() < 1e-15);
        assert!((v[0].get(2, -1) - I * expect).norm() < 1e-15);
        assert_eq!(v[0].get(1, 0), c(1.0, 0.0));
        let lin = linearized_actions(&th);
        assert!((lin[0].get(1, 0) - (1.0 + I * th.tables[0].get(0, 0))).norm() < 1e-15);
    }

    #[test]
    fn deviation_vanishes_at_initial_phases() {
        let theta0 = [1.1, -2.3];
        let th = theta_tables(
            &phi_with(&[(1, 0, c(0.1, 0.2)), (2, -1, c(-0.03, 0.0)), (0, 3, c(0.0, 0.05)), (-1, 2, c(0.01, 0.01))]),
            [0.86, 1.098],
            theta0,
            DivisorPolicy::Fail,
        )
        .unwrap();
        for l in 0..2 {
            assert!(th.deviation(l, theta0[0], theta0[1]).norm() < 1e-12);
        }
    }

    #[test]
    fn small_divisors_follow_policy() {
        let phi = phi_with(&[(1, -1, c(0.01, 0.0)), (1, 0, c(0.01, 0.0))]);
        let err = theta_tables(&phi, [1.0, 1.0], [0.0, 0.0], DivisorPolicy::Fail).unwrap_err();
        assert!(matches!(err, Error::ResonanceObstruction { n: 1, m: -1, .. }));
        let th = theta_tables(&phi, [1.0, 1.0], [0.0, 0.0], DivisorPolicy::Suppress).unwrap();
        assert_eq!(th.suppressed.len(), 2);
        assert_eq!(th.tables[0].get(1, -1), c(0.0, 0.0));
        assert!(th.tables[0].get(1, 0).norm() > 0.0);
    }

    #[test]
    fn time_reference_only_rotates_phases() {
        let th = theta_tables(&phi_with(&[(2, -1, c(0.05, 0.0))]), [0.9, 1.1], [0.7, 0.3], DivisorPolicy::Fail)
            .unwrap();
        let v = first_order_actions(&th);
        let t = time_referenced(&v, [0.7, 0.3]);
        for l in 0..2 {
            for ((_, _, a), (_, _, b)) in v[l].lines().zip(t[l].lines()) {
                assert!((a.norm() - b.norm()).abs() < 1e-15);
            }
        }
        let expect = I * th.tables[0].get(2, -1) * Complex64::from_polar(1.0, 2.0 * 0.7 - 0.3);
        assert!((t[0].get(3, -1) - expect).norm() < 1e-15);
    }

    /// A linear model with two uncoupled oscillators: the linear actions are
    /// exactly rigid, so φ is the constant `ω - μ = 0`.
    #[test]
    fn rigid_input_has_flat_phi() {
        let layout = BasisLayout::new(4, 3, true).unwrap();
        let h = {
            let mut h = TruncPoly::zero(&layout);
            for e in [[2u8, 0, 0, 0], [0, 2, 0, 0], [0, 0, 2, 0], [0, 0, 0, 2]] {
                h.coeffs_mut()[layout.index_of(&e).unwrap()] = c(0.5, 0.0);
            }
            h
        };
        let model = ModelSpec::from_hamiltonian(h).unwrap();
        let rl = BasisLayout::new(4, 3, false).unwrap();
        let rows = vec![TruncPoly::variable(&rl, 0).unwrap(), TruncPoly::variable(&rl, 2).unwrap()];
        let comb = Combination {
            a: [vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
            rows,
            r: [0.1, 0.2],
            omega: [1.0, 1.0],
            theta0: [0.0, 0.0],
        };
        let grid = sample_torus(&comb, 16, 16, &[0.1, 0.0, 0.2, 0.0], &NewtonOptions::default()).unwrap();
        let phi = phi_fields(&comb, &model, &grid, max_window(16, 16)).unwrap();
        for l in 0..2 {
            assert!(phi.values[l].iter().all(|p| p.norm() < 1e-12));
        }
        let (omega, im) = update_frequencies(&phi, [1.0, 1.0]);
        assert!((omega[0] - 1.0).abs() < 1e-12 && (omega[1] - 1.0).abs() < 1e-12);
        assert!(im < 1e-12);
    }

    #[test]
    fn mean_is_the_zero_line() {
        let model = henon_heiles();
        let rl = BasisLayout::new(4, 3, false).unwrap();
        let rows = vec![TruncPoly::variable(&rl, 0).unwrap(), TruncPoly::variable(&rl, 2).unwrap()];
        let comb = Combination {
            a: [vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
            rows,
            r: [0.05, 0.05],
            omega: [1.0, 1.0],
            theta0: [0.0, 0.0],
        };
        let grid = sample_torus(&comb, 16, 16, &[0.05, 0.0, 0.05, 0.0], &NewtonOptions::default()).unwrap();
        let phi = phi_fields(&comb, &model, &grid, 7).unwrap();
        for l in 0..2 {
            let avg: Complex64 = phi.values[l].iter().sum::<Complex64>() / 256.0;
            assert!((avg - phi.mean[l]).norm() < 1e-12);
        }
    }
}
