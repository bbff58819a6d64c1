//! Approximate invariants built from a solved torus.
//!
//! The solve gives `v̄_l = e^{iθ_l} exp(iΔθ_l(θ))` with rigid phases `θ`.
//! Putting the observed normalized actions in place of `e^{iθ}` inside the
//! exponent and inverting gives
//! `v̄0_l = v̄_l exp(-i Σ θ̃_lnm v̄_1^n v̄_2^m)`, whose exponent holds negative
//! powers as well as positive ones. Its modulus stays nearly constant along
//! an orbit, much more so than `|v̄_l|`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::iteration::Solution;
use crate::perturbation::ThetaTables;
use crate::polyalg::{real_to_resonance, BasisLayout, TruncPoly};
use crate::torusmap::{fourier2d, invert_grid, max_window, sample_torus, ActionMap, Combination, FourierTable, NewtonOptions};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Normalized actions below this make the negative powers meaningless.
pub const MIN_NORMALIZED_ACTION: f64 = 1e-6;

/// `(v̄_1^(1), v̄_2^(1))` at rigid phases `(t1, t2)`:
/// `e^{iθ_l} exp(i Σ θ̃_lnm e^{i(n t1 + m t2)})`.
pub fn forward_transform(theta: &ThetaTables, t1: f64, t2: f64) -> [Complex64; 2] {
    let e = [Complex64::from_polar(1.0, t1), Complex64::from_polar(1.0, t2)];
    [e[0] * (I * theta.deviation(0, t1, t2)).exp(), e[1] * (I * theta.deviation(1, t1, t2)).exp()]
}

/// `Σ_nm c_nm u1^n u2^m` with negative exponents as reciprocal powers.
pub fn laurent_sum(table: &FourierTable, u1: Complex64, u2: Complex64) -> Complex64 {
    let w = table.window() as i32;
    let pows = |u: Complex64| -> Vec<Complex64> { (-w..=w).map(|k| u.powi(k)).collect() };
    let (p1, p2) = (pows(u1), pows(u2));
    table.lines().map(|(n, m, c)| c * p1[(n + w) as usize] * p2[(m + w) as usize]).sum()
}

/// The invariant of a solved torus.
#[derive(Clone, Debug)]
pub struct KamInvariant {
    pub theta: ThetaTables,
    pub combination: Combination,
    map: ActionMap,
}

impl KamInvariant {
    pub fn new(combination: Combination, theta: ThetaTables) -> Result<Self> {
        let map = combination.action_map()?;
        Ok(Self { theta, combination, map })
    }

    pub fn from_solution(sol: &Solution) -> Result<Self> {
        let theta = sol.theta.clone().ok_or_else(|| Error::InvalidArgument("solve produced no phase tables".into()))?;
        Self::new(sol.combination.clone(), theta)
    }

    pub fn radii(&self) -> [f64; 2] {
        self.combination.r
    }

    /// `v_l / r_l`.
    pub fn normalized_actions(&self, state: &State) -> [Complex64; 2] {
        let v = self.map.values(state);
        [v[0] / self.combination.r[0], v[1] / self.combination.r[1]]
    }

    /// `(v̄0_1, v̄0_2)` at a state.
    pub fn values(&self, state: &State) -> Result<[Complex64; 2]> {
        let u = self.normalized_actions(state);
        for x in &u {
            if !(x.norm() > MIN_NORMALIZED_ACTION) {
                return Err(Error::LaurentSingularity { magnitude: x.norm() });
            }
        }
        Ok([
            u[0] * (-I * laurent_sum(&self.theta.tables[0], u[0], u[1])).exp(),
            u[1] * (-I * laurent_sum(&self.theta.tables[1], u[0], u[1])).exp(),
        ])
    }
}

/// Standard deviation of `|v|` over its mean.
pub fn radius_fluctuation(values: &[Complex64]) -> f64 {
    let n = values.len() as f64;
    if values.is_empty() {
        return f64::NAN;
    }
    let mean = values.iter().map(|v| v.norm()).sum::<f64>() / n;
    let var = values.iter().map(|v| (v.norm() - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Plane average of `|v̄_l^(1)|²` over an `n x n` grid of rigid phases.
pub fn mean_square_radius(theta: &ThetaTables, n: usize) -> [f64; 2] {
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let mut acc = [0.0; 2];
    for a in 0..n {
        for b in 0..n {
            let v = forward_transform(theta, a as f64 * step, b as f64 * step);
            acc[0] += v[0].norm_sqr();
            acc[1] += v[1].norm_sqr();
        }
    }
    let count = (n * n) as f64;
    [acc[0] / count, acc[1] / count]
}

/// Power-series form of the invariant, truncated at a total order in
/// `z_x, z_x*, z_y, z_y*`. A power series cannot hold `v̄^{-k}`, so negative
/// powers use `(conj(v̄) / ρ²)^k` with `ρ²` the torus average of `|v̄|²`,
/// which equals `v̄^{-k}` where `|v̄|² = ρ²`.
#[derive(Clone, Debug)]
pub struct TaylorInvariant {
    pub order: usize,
    pub polys: [TruncPoly; 2],
}

fn powers(base: &TruncPoly, count: usize) -> Result<Vec<TruncPoly>> {
    let mut out = vec![TruncPoly::constant(base.layout(), Complex64::new(1.0, 0.0))?];
    for k in 1..=count {
        let next = out[k - 1].mul_trunc(base)?;
        out.push(next);
    }
    Ok(out)
}

/// `exp(p)` truncated at the layout order.
fn exp_trunc(p: &TruncPoly) -> Result<TruncPoly> {
    let layout = p.layout();
    let zero = vec![0u8; layout.n_vars()];
    let c0 = p.coeff(&zero);
    let mut rest = p.clone();
    rest.coeffs_mut()[layout.index_of(&zero)?] = Complex64::new(0.0, 0.0);
    let mut term = TruncPoly::constant(layout, Complex64::new(1.0, 0.0))?;
    let mut sum = term.clone();
    for k in 1..=layout.n_s() {
        term = term.mul_trunc(&rest)?.scale(Complex64::new(1.0 / k as f64, 0.0));
        if term.is_zero() {
            break;
        }
        sum.axpy(Complex64::new(1.0, 0.0), &term)?;
    }
    Ok(sum.scale(c0.exp()))
}

impl TaylorInvariant {
    pub fn new(inv: &KamInvariant, order: usize) -> Result<Self> {
        if !(1..=20).contains(&order) {
            return Err(Error::InvalidArgument(format!("Taylor order {order} outside 1..=20")));
        }
        let layout: Arc<BasisLayout> = BasisLayout::new(4, order, true)?;
        let actions = inv.combination.action_polys()?;
        let mut u = Vec::with_capacity(2);
        for (l, p) in actions.iter().enumerate() {
            let (e, _) = p.embed(&layout)?;
            u.push(e.scale(Complex64::new(1.0 / inv.combination.r[l], 0.0)));
        }
        let rho2 = mean_square_radius(&inv.theta, 64);
        let pos = [powers(&u[0], order)?, powers(&u[1], order)?];
        let neg = [
            powers(&u[0].conjugate_pairs().scale(Complex64::new(1.0 / rho2[0], 0.0)), order)?,
            powers(&u[1].conjugate_pairs().scale(Complex64::new(1.0 / rho2[1], 0.0)), order)?,
        ];
        let power = |l: usize, k: i32| -> &TruncPoly {
            if k >= 0 {
                &pos[l][k as usize]
            } else {
                &neg[l][(-k) as usize]
            }
        };
        let reach = order as i32;
        let mut out = Vec::with_capacity(2);
        for l in 0..2 {
            let table = &inv.theta.tables[l];
            let w = (table.window() as i32).min(reach);
            let mut exponent = TruncPoly::zero(&layout);
            for n in -w..=w {
                // every factor starts at degree one, so |n| + |m| bounds the lowest degree
                let mut inner = TruncPoly::zero(&layout);
                for m in -(w - n.abs()).min(w)..=(w - n.abs()).min(w) {
                    let c = table.get(n, m);
                    if c != Complex64::new(0.0, 0.0) {
                        inner.axpy(c, power(1, m))?;
                    }
                }
                if !inner.is_zero() {
                    exponent.axpy(Complex64::new(1.0, 0.0), &power(0, n).mul_trunc(&inner)?)?;
                }
            }
            let factor = exp_trunc(&exponent.scale(-I))?;
            out.push(u[l].mul_trunc(&factor)?);
        }
        let polys = [out.remove(0), out.remove(0)];
        Ok(Self { order, polys })
    }

    pub fn values(&self, state: &State) -> [Complex64; 2] {
        let m = self.polys[0].layout().monomial_values(&real_to_resonance(state));
        [self.polys[0].dot_values(&m), self.polys[1].dot_values(&m)]
    }
}

/// Radius fluctuation of action `l` of the Taylor form at each order, over
/// the given states, paired with the exponential form's.
pub fn taylor_compare(inv: &KamInvariant, orders: &[usize], states: &[State], l: usize) -> Result<TaylorComparison> {
    let exact: Vec<Complex64> = states.iter().map(|s| inv.values(s).map(|v| v[l])).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(orders.len());
    for &order in orders {
        let t = TaylorInvariant::new(inv, order)?;
        let vals: Vec<Complex64> = states.iter().map(|s| t.values(s)[l]).collect();
        rows.push((order, radius_fluctuation(&vals)));
    }
    Ok(TaylorComparison { exponential: radius_fluctuation(&exact), by_order: rows })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TaylorComparison {
    pub exponential: f64,
    pub by_order: Vec<(usize, f64)>,
}

// ---------------------------------------------------------------------------
// Section contours

/// Level set a traced torus follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContourKind {
    /// `|v_l| = r_l`, the square-matrix torus.
    ConstantAction,
    /// `|v̄0_l|` held at its value at the reference state.
    KamInvariant,
}

impl ContourKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::ConstantAction => "constant-action",
            Self::KamInvariant => "kam-invariant",
        }
    }
}

/// A torus in phase space: Fourier series of `x, p_x, y, p_y` over its
/// rigid phases.
#[derive(Clone, Debug)]
pub struct PhaseTorus {
    pub tables: [FourierTable; 4],
}

/// Normalized actions with `|v̄0_l| = rho_l` and `arg v̄0_l = θ_l`, found by
/// fixed-point iteration of `u_l = rho_l e^{iθ_l} exp(i Σ θ̃_lnm u_1^n u_2^m)`.
fn level_set_actions(theta: &ThetaTables, rho: [f64; 2], t1: f64, t2: f64) -> Result<[Complex64; 2]> {
    let f = forward_transform(theta, t1, t2);
    let mut u = [f[0] * rho[0], f[1] * rho[1]];
    let base = [Complex64::from_polar(rho[0], t1), Complex64::from_polar(rho[1], t2)];
    for _ in 0..200 {
        let next = [
            base[0] * (I * laurent_sum(&theta.tables[0], u[0], u[1])).exp(),
            base[1] * (I * laurent_sum(&theta.tables[1], u[0], u[1])).exp(),
        ];
        let change = (next[0] - u[0]).norm().max((next[1] - u[1]).norm());
        u = next;
        if change < 1e-14 {
            return Ok(u);
        }
    }
    Err(Error::Consistency(format!("invariant level set did not converge at phases ({t1:.3}, {t2:.3})")))
}

impl PhaseTorus {
    /// Trace the level set of `kind` through `state0` on an `n x n` grid.
    pub fn level_set(inv: &KamInvariant, kind: ContourKind, state0: &State, n: usize, opts: &NewtonOptions) -> Result<Self> {
        let comb = inv.combination.anchored_at(state0)?;
        let seeds = sample_torus(&comb, n, n, state0, opts)?;
        let grid = match kind {
            ContourKind::ConstantAction => seeds,
            ContourKind::KamInvariant => {
                let v0 = inv.values(state0)?;
                let rho = [v0[0].norm(), v0[1].norm()];
                let mut targets = Vec::with_capacity(n * n);
                for i in 0..n {
                    for k in 0..n {
                        let (t1, t2) = seeds.phases(i, k);
                        let u = level_set_actions(&inv.theta, rho, t1, t2)?;
                        targets.push([u[0] * inv.combination.r[0], u[1] * inv.combination.r[1]]);
                    }
                }
                invert_grid(&inv.map, n, n, &targets, &seeds.states, opts)?
            }
        };
        let w = max_window(n, n);
        let component = |c: usize| -> Result<FourierTable> {
            let samples: Vec<Complex64> = grid.states.iter().map(|s| Complex64::new(s[c], 0.0)).collect();
            fourier2d(&samples, n, n, w)
        };
        Ok(Self { tables: [component(0)?, component(1)?, component(2)?, component(3)?] })
    }

    pub fn state(&self, t1: f64, t2: f64) -> State {
        let mut s = [0.0; 4];
        for (x, t) in s.iter_mut().zip(&self.tables) {
            *x = t.synthesize(t1, t2).re;
        }
        s
    }

    /// Closed polyline of `(y, p_y)` where the torus crosses `x = 0` with
    /// `p_x > 0`. The crossing set is traced as a graph over one phase, so
    /// each of `lines` phase lines must cross exactly once.
    pub fn section(&self, lines: usize) -> Result<Vec<(f64, f64)>> {
        let scan = 8 * self.tables[0].window().max(8);
        'axis: for axis in 0..2 {
            let mut curve = Vec::with_capacity(lines + 1);
            for j in 0..lines {
                let fixed = 2.0 * PI * j as f64 / lines as f64;
                let series: Vec<Vec<Complex64>> = self.tables.iter().map(|t| line_series(t, axis, fixed)).collect();
                let eval = |c: usize, t: f64| eval_line(&series[c], t);
                let mut hits = Vec::new();
                for k in 0..scan {
                    let (mut a, mut b) = (2.0 * PI * k as f64 / scan as f64, 2.0 * PI * (k + 1) as f64 / scan as f64);
                    let (fa, fb) = (eval(0, a), eval(0, b));
                    if (fa < 0.0) == (fb < 0.0) {
                        continue;
                    }
                    for _ in 0..60 {
                        let mid = 0.5 * (a + b);
                        if (eval(0, mid) < 0.0) == (fa < 0.0) {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    let t = 0.5 * (a + b);
                    if eval(1, t) > 0.0 {
                        hits.push((eval(2, t), eval(3, t)));
                    }
                }
                if hits.len() != 1 {
                    continue 'axis;
                }
                curve.push(hits[0]);
            }
            if let Some(&first) = curve.first() {
                curve.push(first);
            }
            return Ok(curve);
        }
        Err(Error::Consistency("section curve is not a graph over either torus phase".into()))
    }
}

/// One-dimensional coefficients along the line where phase `1 - axis` is
/// held at `fixed` and phase `axis` runs.
fn line_series(table: &FourierTable, axis: usize, fixed: f64) -> Vec<Complex64> {
    let w = table.window() as i32;
    let mut out = vec![Complex64::new(0.0, 0.0); (2 * w + 1) as usize];
    for (n, m, c) in table.lines() {
        let (run, held) = if axis == 0 { (n, m) } else { (m, n) };
        out[(run + w) as usize] += c * Complex64::from_polar(1.0, held as f64 * fixed);
    }
    out
}

fn eval_line(series: &[Complex64], t: f64) -> f64 {
    let w = (series.len() / 2) as i32;
    let e = Complex64::from_polar(1.0, t);
    let mut p = e.powi(-w);
    let mut acc = Complex64::new(0.0, 0.0);
    for c in series {
        acc += c * p;
        p *= e;
    }
    acc.re
}

/// Mean distance from each point to the closed polyline `curve`.
pub fn contour_distance(curve: &[(f64, f64)], points: &[(f64, f64)]) -> f64 {
    if curve.len() < 2 || points.is_empty() {
        return f64::NAN;
    }
    let segment = |p: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        ((p.0 - a.0 - s * dx).powi(2) + (p.1 - a.1 - s * dy).powi(2)).sqrt()
    };
    let total: f64 = points
        .iter()
        .map(|&p| curve.windows(2).map(|w| segment(p, w[0], w[1])).fold(f64::INFINITY, f64::min))
        .sum();
    total / points.len() as f64
}
