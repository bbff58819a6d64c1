//! Property checks shared by the property suite and the acceptance run.
//! Each check drives a deterministic proptest runner and reports the first
//! failing case as a string.
#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use kamtori::combiner::{fluctuation_of, gram_matrix, initial_combination, minimize_fluctuation, MAIN_LINES};
use kamtori::dynamics::{fundamental_frequencies, henon_heiles, integrate, SpectralLine, State, StepControl};
use kamtori::iteration::{chains_for, solve, Solution, SolveConfig};
use kamtori::kaminvariant::{forward_transform, laurent_sum};
use kamtori::perturbation::{theta_tables, DivisorPolicy};
use kamtori::polyalg::{real_to_resonance, resonance_to_real, BasisLayout, TruncPoly};
use kamtori::torusmap::{fourier2d, synthesize_grid, ActionMap, FourierTable, NewtonOptions};
use kamtori::Complex64;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub const ENERGY: f64 = 1.0 / 12.0;
pub const REFERENCE_PY: f64 = 0.18;

const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn reference_state() -> State {
    henon_heiles().initial_state(ENERGY, 0.0, 0.0, REFERENCE_PY).unwrap()
}

/// The reference solve, computed once per test binary.
pub fn reference_solution() -> &'static Solution {
    static SOL: OnceLock<Solution> = OnceLock::new();
    SOL.get_or_init(|| solve(&henon_heiles(), &reference_state(), &SolveConfig::default()).unwrap())
}

/// Spectral lines of the lead chain rows along the oracle orbit, relative
/// to each row's value at the initial state.
pub fn lead_row_lines() -> [Vec<SpectralLine>; 2] {
    let model = henon_heiles();
    let s0 = reference_state();
    let rows = chains_for(&model, 5).unwrap().interleaved(2);
    let layout = rows[0].layout().clone();
    let dt = 0.1;
    let traj = integrate(&model, &s0, 3276.8, StepControl::Fixed(dt)).unwrap();
    let m0 = layout.monomial_values(&real_to_resonance(&s0));
    [0, 1].map(|j| {
        let norm = rows[j].dot_values(&m0).norm();
        let signal: Vec<Complex64> = traj
            .states
            .iter()
            .map(|s| rows[j].dot_values(&layout.monomial_values(&real_to_resonance(s))) / norm)
            .collect();
        fundamental_frequencies(&signal, dt, 3)
    })
}

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn complex(scale: f64) -> impl Strategy<Value = Complex64> {
    (-scale..scale, -scale..scale).prop_map(|(a, b)| Complex64::new(a, b))
}

fn poly_of_degree(layout: &Arc<BasisLayout>, max_degree: usize) -> impl Strategy<Value = TruncPoly> {
    let layout = layout.clone();
    vec(complex(1.0), layout.len()).prop_map(move |mut c| {
        for (k, x) in c.iter_mut().enumerate() {
            if layout.degree(k) > max_degree {
                *x = Complex64::new(0.0, 0.0);
            }
        }
        TruncPoly::from_coeffs(&layout, c).unwrap()
    })
}

fn table(window: usize, scale: f64) -> impl Strategy<Value = FourierTable> {
    let side = 2 * window + 1;
    vec(complex(scale), side * side).prop_map(move |c| {
        let w = window as i32;
        let mut t = FourierTable::zeros(window);
        let mut it = c.into_iter();
        for n in -w..=w {
            for m in -w..=w {
                t.set(n, m, it.next().unwrap());
            }
        }
        t
    })
}

fn close(a: &TruncPoly, b: &TruncPoly, tol: f64) -> Result<(), TestCaseError> {
    let d = a.sub(b).unwrap().max_abs();
    prop_assert!(d <= tol, "difference {d:e}");
    Ok(())
}

/// Commutativity, associativity, distributivity, the product rule and
/// evaluation homomorphism of truncated multiplication.
pub fn polynomial_laws(cases: u32) -> Result<(), String> {
    let layout = BasisLayout::new(4, 6, true).unwrap();
    let s = (poly_of_degree(&layout, 3), poly_of_degree(&layout, 2), poly_of_degree(&layout, 2), vec(complex(0.7), 4));
    report(runner(cases).run(&s, |(a, b, c, pt)| {
        let ab = a.mul_trunc(&b).unwrap();
        close(&ab, &b.mul_trunc(&a).unwrap(), 1e-13)?;
        // degree 7 products overflow n_s = 6; truncation keeps them associative
        let bc = b.mul_trunc(&c).unwrap();
        close(&ab.mul_trunc(&c).unwrap(), &a.mul_trunc(&bc).unwrap(), 1e-12)?;
        let sum = a.add(&c).unwrap().mul_trunc(&b).unwrap();
        close(&sum, &ab.add(&c.mul_trunc(&b).unwrap()).unwrap(), 1e-12)?;
        for var in 0..4 {
            let lhs = ab.partial_derivative(var).unwrap();
            let rhs = a
                .partial_derivative(var)
                .unwrap()
                .mul_trunc(&b)
                .unwrap()
                .add(&a.mul_trunc(&b.partial_derivative(var).unwrap()).unwrap())
                .unwrap();
            close(&lhs, &rhs, 1e-12)?;
        }
        let pv = [pt[0], pt[1], pt[2], pt[3]];
        let e = ab.evaluate(&pv) - a.evaluate(&pv) * b.evaluate(&pv);
        prop_assert!(e.norm() < 1e-11, "evaluation {e}");
        prop_assert!((bc.evaluate(&pv) - b.evaluate(&pv) * c.evaluate(&pv)).norm() < 1e-11);
        close(&a.conjugate_pairs().conjugate_pairs(), &a, 0.0)?;
        Ok(())
    }))
}

/// Real/resonance coordinates and Fourier analysis/synthesis invert each other.
pub fn transform_round_trips(cases: u32) -> Result<(), String> {
    let s = (proptest::array::uniform4(-1.0..1.0f64), table(7, 1.0));
    report(runner(cases).run(&s, |(state, t)| {
        let back = resonance_to_real(&real_to_resonance(&state), 1e-12).unwrap();
        for k in 0..4 {
            prop_assert!((back[k] - state[k]).abs() < 1e-15);
        }
        let grid = synthesize_grid(&t, 16, 16).unwrap();
        let again = fourier2d(&grid, 16, 16, 7).unwrap();
        let err = t.lines().map(|(n, m, c)| (c - again.get(n, m)).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10, "round trip error {err:e}");
        Ok(())
    }))
}

fn reference_action_map() -> ActionMap {
    let model = henon_heiles();
    let chains = chains_for(&model, 5).unwrap();
    let boot = initial_combination(&chains, &reference_state()).unwrap();
    boot.combination.action_map().unwrap()
}

/// Newton inversion recovers states from their action values.
pub fn newton_round_trips(cases: u32) -> Result<(), String> {
    let map = reference_action_map();
    let s = (proptest::array::uniform4(-0.2..0.2f64), proptest::array::uniform4(-1e-2..1e-2f64));
    let opts = NewtonOptions::default();
    report(runner(cases).run(&s, |(state, nudge)| {
        let v = map.values(&state);
        let seed = [state[0] + nudge[0], state[1] + nudge[1], state[2] + nudge[2], state[3] + nudge[3]];
        let back = map.invert(&v, &seed, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let err = (0..4).map(|k| (back[k] - state[k]).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9, "state error {err:e}");
        Ok(())
    }))
}

/// The minimizer meets its unit-main-line constraint, and no admissible
/// perturbation of its coefficients lowers the fluctuation.
pub fn minimizer_optimality(cases: u32, perturbations: usize) -> Result<(), String> {
    let s = (vec(table(3, 0.2), 4), vec(vec(complex(1.0), 4), perturbations));
    report(runner(cases).run(&s, |(mut tables, deltas)| {
        // give each row a distinct dominant line so the constraint is well posed
        for (j, (n, m)) in [(1, 0), (0, 1), (1, 1), (2, -1)].into_iter().enumerate() {
            let c = tables[j].get(n, m);
            tables[j].set(n, m, c + Complex64::new(1.0, 0.0));
        }
        let (a, rep) = minimize_fluctuation(&tables).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for l in 0..2 {
            let (n, m) = MAIN_LINES[l];
            let main = rep.tables[l].get(n, m);
            prop_assert!((main - 1.0).norm() < 1e-12, "main line {main}");
        }
        for d in &deltas {
            for l in 0..2 {
                let (n, m) = MAIN_LINES[l];
                let c: Vec<Complex64> = tables.iter().map(|t| t.get(n, m)).collect();
                // remove the component that would move the main line
                let cc: f64 = c.iter().map(|x| x.norm_sqr()).sum();
                let along: Complex64 = c.iter().zip(d).map(|(ci, di)| ci * di).sum::<Complex64>() / cc;
                let mut b = a.clone();
                for j in 0..4 {
                    b[l][j] += 1e-3 * (d[j] - along * c[j].conj());
                }
                let moved = fluctuation_of(&tables, &b).unwrap();
                let main = moved.tables[l].get(n, m);
                prop_assert!((main - 1.0).norm() < 1e-12);
                prop_assert!(
                    moved.side_power[l] >= rep.side_power[l] * (1.0 - 1e-12),
                    "perturbation lowered side power {} -> {}",
                    rep.side_power[l],
                    moved.side_power[l]
                );
            }
        }
        Ok(())
    }))
}

/// Gram matrices are Hermitian and positive semi-definite, rescaling one
/// row leaves the minimized spectra unchanged, and with two rows the
/// minimizer does not depend on their order.
pub fn minimizer_structure(cases: u32) -> Result<(), String> {
    let s = (vec(table(3, 0.3), 4), complex(2.0));
    report(runner(cases).run(&s, |(mut tables, scale)| {
        prop_assume!(scale.norm() > 0.1);
        for (j, (n, m)) in [(1, 0), (0, 1), (1, 1), (2, -1)].into_iter().enumerate() {
            let c = tables[j].get(n, m);
            tables[j].set(n, m, c + Complex64::new(1.0, 0.0));
        }
        let g = gram_matrix(&tables, (1, 0));
        prop_assert!((&g - g.adjoint()).norm() < 1e-12);
        let eig = g.clone().symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&e| e > -1e-12 * g.norm()));

        let (_, base) = minimize_fluctuation(&tables).unwrap();
        let mut scaled = tables.clone();
        scaled[2] = scaled[2].scale(scale);
        let (_, again) = minimize_fluctuation(&scaled).unwrap();
        prop_assert!((base.g0 - again.g0).abs() < 1e-10 * base.g0.max(1e-12));

        let pair = vec![tables[0].clone(), tables[1].clone()];
        let swapped = vec![tables[1].clone(), tables[0].clone()];
        let (a, _) = minimize_fluctuation(&pair).unwrap();
        let (b, _) = minimize_fluctuation(&swapped).unwrap();
        for l in 0..2 {
            prop_assert!((a[l][0] - b[l][1]).norm() < 1e-12 && (a[l][1] - b[l][0]).norm() < 1e-12);
        }
        Ok(())
    }))
}

fn phi_pair(scale: f64) -> impl Strategy<Value = [FourierTable; 2]> {
    (table(3, scale), table(3, scale)).prop_map(|(a, b)| [a, b])
}

const OMEGA: [f64; 2] = [0.912, 1.030];

/// Phase tables are linear in the phase-rate tables, vanish at the
/// reference phases and are bounded by their total line magnitude.
pub fn theta_table_properties(cases: u32) -> Result<(), String> {
    let s = (phi_pair(0.05), phi_pair(0.05), complex(2.0), complex(2.0), proptest::array::uniform2(-3.0..3.0f64));
    report(runner(cases).run(&s, |(p, q, alpha, beta, theta0)| {
        let tp = theta_tables(&p, OMEGA, theta0, DivisorPolicy::Fail).unwrap();
        let tq = theta_tables(&q, OMEGA, theta0, DivisorPolicy::Fail).unwrap();
        let mix = [0, 1].map(|l| {
            let mut t = p[l].scale(alpha);
            t.axpy(beta, &q[l]).unwrap();
            t
        });
        let tm = theta_tables(&mix, OMEGA, theta0, DivisorPolicy::Fail).unwrap();
        for l in 0..2 {
            for (n, m, c) in tm.tables[l].lines() {
                let want = alpha * tp.tables[l].get(n, m) + beta * tq.tables[l].get(n, m);
                prop_assert!((c - want).norm() < 1e-13, "line ({n}, {m}): {c} vs {want}");
            }
            let at0 = tp.deviation(l, theta0[0], theta0[1]);
            prop_assert!(at0.norm() < 1e-12, "initial deviation {at0}");
            let bound = tp.tables[l].lines().map(|x| x.2.norm()).sum::<f64>();
            for k in 0..16 {
                let d = tp.deviation(l, 0.4 * k as f64, -0.7 * k as f64);
                prop_assert!(d.norm() <= bound * (1.0 + 1e-12));
            }
        }
        Ok(())
    }))
}

/// The invariant of a forward-transformed point is a rotation up to
/// second order in the phase tables.
pub fn inverse_consistency(cases: u32) -> Result<(), String> {
    let s = (phi_pair(0.003), proptest::array::uniform2(-3.0..3.0f64), proptest::array::uniform2(0.0..6.3f64));
    report(runner(cases).run(&s, |(p, theta0, at)| {
        let th = theta_tables(&p, OMEGA, theta0, DivisorPolicy::Fail).unwrap();
        let total = th.total_magnitude();
        // the bound is a statement about small phase deviations
        prop_assume!(total < 0.3);
        let v = forward_transform(&th, at[0], at[1]);
        for l in 0..2 {
            let back = v[l] * (-I * laurent_sum(&th.tables[l], v[0], v[1])).exp();
            prop_assert!((back.norm() - 1.0).abs() < total * total, "radius {} bound {}", back.norm(), total * total);
        }
        Ok(())
    }))
}

/// Two solves from the same inputs give bitwise-identical histories.
pub fn solve_determinism() -> Result<(), String> {
    let model = henon_heiles();
    let s0 = reference_state();
    let cfg = SolveConfig::default();
    let a = solve(&model, &s0, &cfg).map_err(|e| e.to_string())?;
    let b = solve(&model, &s0, &cfg).map_err(|e| e.to_string())?;
    if a.history.len() != b.history.len() {
        return Err(format!("{} vs {} iterations", a.history.len(), b.history.len()));
    }
    for (x, y) in a.history.iter().zip(&b.history) {
        if x.g0.to_bits() != y.g0.to_bits() || x.omega != y.omega || x.side_ratio != y.side_ratio {
            return Err(format!("iteration {} differs", x.iteration));
        }
    }
    if a.next.a != b.next.a || a.refined_omega != b.refined_omega {
        return Err("final combinations differ".into());
    }
    Ok(())
}
