//! Functions on the 2-torus of angle variables: the action map built from a
//! linear combination of chain rows, its Newton inverse, grid sampling and
//! 2-D Fourier tables.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::polyalg::{real_to_resonance, BasisLayout, TruncPoly};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Newton settings for [`ActionMap::invert`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-11 }
    }
}

/// Coefficients `a_lj` combining the chain rows `w_j` into the two actions,
/// together with the rigid-rotation parameters of the current approximation.
#[derive(Clone, Debug)]
pub struct Combination {
    /// Two rows of `n_v` coefficients.
    pub a: [Vec<Complex64>; 2],
    /// `w_x0, w_y0, w_x1, w_y1, ...`
    pub rows: Vec<TruncPoly>,
    pub r: [f64; 2],
    pub omega: [f64; 2],
    pub theta0: [f64; 2],
}

impl Combination {
    pub fn n_v(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if n == 0 || self.a[0].len() != n || self.a[1].len() != n {
            return Err(Error::InvalidArgument(format!(
                "combination shapes disagree: {} rows, coefficient rows of {} and {}",
                n,
                self.a[0].len(),
                self.a[1].len()
            )));
        }
        if !(self.r[0] > 0.0 && self.r[1] > 0.0) {
            return Err(Error::InvalidArgument(format!("radii must be positive, got {:?}", self.r)));
        }
        Ok(())
    }

    /// The two action polynomials `v_l = Σ_j a_lj w_j`.
    pub fn action_polys(&self) -> Result<[TruncPoly; 2]> {
        let mut out = [TruncPoly::zero(self.rows[0].layout()), TruncPoly::zero(self.rows[0].layout())];
        for l in 0..2 {
            for (a, w) in self.a[l].iter().zip(&self.rows) {
                out[l].axpy(*a, w)?;
            }
        }
        Ok(out)
    }

    pub fn action_map(&self) -> Result<ActionMap> {
        self.validate()?;
        ActionMap::new(self.action_polys()?)
    }

    /// `(v_1, v_2)` at a real state.
    pub fn action_values(&self, state: &State) -> Result<[Complex64; 2]> {
        Ok(self.action_map()?.values(state))
    }

    /// Copy with radii and initial phases taken from the actions at `state`.
    pub fn anchored_at(&self, state: &State) -> Result<Self> {
        let v = self.action_values(state)?;
        let mut out = self.clone();
        out.r = [v[0].norm(), v[1].norm()];
        out.theta0 = [v[0].arg(), v[1].arg()];
        out.validate()?;
        Ok(out)
    }
}

/// Evaluates two action polynomials and their real Jacobian.
#[derive(Clone, Debug)]
pub struct ActionMap {
    polys: [TruncPoly; 2],
    /// `∂v_l/∂z_k` in the constant-including layout.
    derivs: [[TruncPoly; 4]; 2],
    full: Arc<BasisLayout>,
}

impl ActionMap {
    pub fn new(polys: [TruncPoly; 2]) -> Result<Self> {
        let d = |p: &TruncPoly| -> Result<[TruncPoly; 4]> {
            Ok([p.partial_derivative(0)?, p.partial_derivative(1)?, p.partial_derivative(2)?, p.partial_derivative(3)?])
        };
        let derivs = [d(&polys[0])?, d(&polys[1])?];
        let full = derivs[0][0].layout().clone();
        if polys[0].layout().includes_constant() {
            return Err(Error::LayoutMismatch("action polynomials must not carry a constant".into()));
        }
        Ok(Self { polys, derivs, full })
    }

    pub fn polys(&self) -> &[TruncPoly; 2] {
        &self.polys
    }

    fn monomials(&self, state: &State) -> Vec<Complex64> {
        self.full.monomial_values(&real_to_resonance(state))
    }

    pub fn values(&self, state: &State) -> [Complex64; 2] {
        let m = self.monomials(state);
        [self.polys[0].dot_values(&m[1..]), self.polys[1].dot_values(&m[1..])]
    }

    /// Values and the 4x4 real Jacobian of `(Re v1, Im v1, Re v2, Im v2)`
    /// with respect to `(x, p_x, y, p_y)`.
    pub fn values_and_jacobian(&self, state: &State) -> ([Complex64; 2], Matrix4<f64>) {
        let m = self.monomials(state);
        let v = [self.polys[0].dot_values(&m[1..]), self.polys[1].dot_values(&m[1..])];
        let mut jac = Matrix4::zeros();
        for l in 0..2 {
            let dz: Vec<Complex64> = self.derivs[l].iter().map(|p| p.dot_values(&m)).collect();
            // z = q - i p, z* = q + i p
            let cols = [dz[0] + dz[1], -I * dz[0] + I * dz[1], dz[2] + dz[3], -I * dz[2] + I * dz[3]];
            for (k, c) in cols.iter().enumerate() {
                jac[(2 * l, k)] = c.re;
                jac[(2 * l + 1, k)] = c.im;
            }
        }
        (v, jac)
    }

    /// Values and the complex gradients `∂v_l/∂z_k`.
    pub fn values_and_gradient(&self, state: &State) -> ([Complex64; 2], [[Complex64; 4]; 2]) {
        let m = self.monomials(state);
        let v = [self.polys[0].dot_values(&m[1..]), self.polys[1].dot_values(&m[1..])];
        let mut g = [[ZERO; 4]; 2];
        for l in 0..2 {
            for k in 0..4 {
                g[l][k] = self.derivs[l][k].dot_values(&m);
            }
        }
        (v, g)
    }

    fn residual(v: &[Complex64; 2], target: &[Complex64; 2]) -> Vector4<f64> {
        let d0 = v[0] - target[0];
        let d1 = v[1] - target[1];
        Vector4::new(d0.re, d0.im, d1.re, d1.im)
    }

    /// Damped Newton solve of `v(state) = target` from `seed`.
    pub fn invert(&self, target: &[Complex64; 2], seed: &State, opts: &NewtonOptions) -> Result<State> {
        let mut s = *seed;
        let (v, mut jac) = self.values_and_jacobian(&s);
        let mut res = Self::residual(&v, target);
        let mut norm = res.amax();
        for it in 0..opts.max_iterations {
            if norm < opts.tolerance {
                return Ok(s);
            }
            let Some(step) = jac.lu().solve(&res) else {
                return Err(Error::Inversion { iterations: it, residual: norm });
            };
            let mut lambda = 1.0;
            loop {
                let trial = [s[0] - lambda * step[0], s[1] - lambda * step[1], s[2] - lambda * step[2], s[3] - lambda * step[3]];
                let (tv, tj) = self.values_and_jacobian(&trial);
                let tres = Self::residual(&tv, target);
                let tnorm = tres.amax();
                if tnorm.is_finite() && (tnorm < norm || lambda < 1e-6) {
                    s = trial;
                    jac = tj;
                    res = tres;
                    norm = tnorm;
                    break;
                }
                lambda *= 0.5;
                if lambda < 1e-6 {
                    return Err(Error::Inversion { iterations: it, residual: norm });
                }
            }
        }
        if norm < opts.tolerance {
            Ok(s)
        } else {
            Err(Error::Inversion { iterations: opts.max_iterations, residual: norm })
        }
    }

    /// Invert along a straight path of targets from the seed's own action
    /// values, subdividing the path where a direct solve fails.
    pub fn invert_continued(&self, target: &[Complex64; 2], seed: &State, opts: &NewtonOptions) -> Result<State> {
        if let Ok(s) = self.invert(target, seed, opts) {
            return Ok(s);
        }
        let start = self.values(seed);
        let mut s = *seed;
        let mut done = 0.0f64;
        let mut step = 0.25f64;
        while done < 1.0 {
            let t = (done + step).min(1.0);
            let tgt = [start[0] + (target[0] - start[0]) * t, start[1] + (target[1] - start[1]) * t];
            match self.invert(&tgt, &s, opts) {
                Ok(ns) => {
                    s = ns;
                    done = t;
                    step = (step * 1.5).min(0.25);
                }
                Err(e) => {
                    step *= 0.5;
                    if step < 1e-4 {
                        return Err(e);
                    }
                }
            }
        }
        Ok(s)
    }
}

/// Uniform `n1 x n2` phase grid; node `(i, k)` has phases
/// `(2π i / n1, 2π k / n2)` and is stored at `i * n2 + k`.
#[derive(Clone, Debug)]
pub struct TorusGrid {
    pub n1: usize,
    pub n2: usize,
    pub states: Vec<State>,
}

impl TorusGrid {
    pub fn phases(&self, i: usize, k: usize) -> (f64, f64) {
        (2.0 * PI * i as f64 / self.n1 as f64, 2.0 * PI * k as f64 / self.n2 as f64)
    }

    #[inline]
    pub fn index(&self, i: usize, k: usize) -> usize {
        i * self.n2 + k
    }

    /// Values of each polynomial at every node, one vector per polynomial.
    pub fn observe(&self, polys: &[TruncPoly]) -> Vec<Vec<Complex64>> {
        if polys.is_empty() {
            return Vec::new();
        }
        let layout = polys[0].layout().clone();
        let mut out = vec![Vec::with_capacity(self.states.len()); polys.len()];
        for s in &self.states {
            let m = layout.monomial_values(&real_to_resonance(s));
            for (o, p) in out.iter_mut().zip(polys) {
                o.push(p.dot_values(&m));
            }
        }
        out
    }
}

/// Invert `targets` node by node, each node seeded from `seeds`.
pub fn invert_grid(
    map: &ActionMap,
    n1: usize,
    n2: usize,
    targets: &[[Complex64; 2]],
    seeds: &[State],
    opts: &NewtonOptions,
) -> Result<TorusGrid> {
    let mut states = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for k in 0..n2 {
            let idx = i * n2 + k;
            let s = map.invert_continued(&targets[idx], &seeds[idx], opts).map_err(|e| match e {
                Error::Inversion { residual, .. } => Error::GridInversion { i, k, residual },
                other => other,
            })?;
            states.push(s);
        }
    }
    Ok(TorusGrid { n1, n2, states })
}

/// Sample the zeroth-order torus `v_l = r_l e^{iθ_l}`. The first node is
/// reached by continuation in phase from `seed` (a state on the torus with
/// phases `theta0`); then θ1 is swept along the first column and each row is
/// swept in θ2 from its first node.
pub fn sample_torus(comb: &Combination, n1: usize, n2: usize, seed: &State, opts: &NewtonOptions) -> Result<TorusGrid> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidArgument(format!("grid {n1}x{n2} is too small")));
    }
    let map = comb.action_map()?;
    let target = |t1: f64, t2: f64| [Complex64::from_polar(comb.r[0], t1), Complex64::from_polar(comb.r[1], t2)];
    let wrap = |a: f64| (a + PI).rem_euclid(2.0 * PI) - PI;

    // walk the phases from theta0 to (0, 0)
    let (d1, d2) = (wrap(-comb.theta0[0]), wrap(-comb.theta0[1]));
    let steps = ((d1.abs().max(d2.abs()) / 0.1).ceil() as usize).max(1);
    let mut s = map.invert_continued(&target(comb.theta0[0], comb.theta0[1]), seed, opts)?;
    for j in 1..=steps {
        let f = j as f64 / steps as f64;
        s = map
            .invert_continued(&target(comb.theta0[0] + f * d1, comb.theta0[1] + f * d2), &s, opts)
            .map_err(|e| match e {
                Error::Inversion { residual, .. } => Error::GridInversion { i: 0, k: 0, residual },
                other => other,
            })?;
    }

    let mut states = vec![[0.0; 4]; n1 * n2];
    let fail = |i: usize, k: usize, e: Error| match e {
        Error::Inversion { residual, .. } => Error::GridInversion { i, k, residual },
        other => other,
    };
    for i in 0..n1 {
        let t1 = 2.0 * PI * i as f64 / n1 as f64;
        let prev = if i == 0 { s } else { states[(i - 1) * n2] };
        let first = map.invert_continued(&target(t1, 0.0), &prev, opts).map_err(|e| fail(i, 0, e))?;
        states[i * n2] = first;
        for k in 1..n2 {
            let t2 = 2.0 * PI * k as f64 / n2 as f64;
            let prev = states[i * n2 + k - 1];
            states[i * n2 + k] = map.invert_continued(&target(t1, t2), &prev, opts).map_err(|e| fail(i, k, e))?;
        }
    }
    Ok(TorusGrid { n1, n2, states })
}

/// Truncated 2-D Fourier series `Σ c_nm e^{i(nθ1 + mθ2)}` with
/// `|n|, |m| ≤ window`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierTable {
    window: usize,
    coeffs: Vec<Complex64>,
}

impl FourierTable {
    pub fn zeros(window: usize) -> Self {
        let w = 2 * window + 1;
        Self { window, coeffs: vec![ZERO; w * w] }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    #[inline]
    fn slot(&self, n: i32, m: i32) -> Option<usize> {
        let w = self.window as i32;
        if n.abs() > w || m.abs() > w {
            return None;
        }
        Some(((n + w) * (2 * w + 1) + (m + w)) as usize)
    }

    pub fn get(&self, n: i32, m: i32) -> Complex64 {
        self.slot(n, m).map_or(ZERO, |s| self.coeffs[s])
    }

    /// Set a coefficient; lines outside the window are ignored.
    pub fn set(&mut self, n: i32, m: i32, v: Complex64) {
        if let Some(s) = self.slot(n, m) {
            self.coeffs[s] = v;
        }
    }

    /// Every `(n, m, coefficient)` in the window.
    pub fn lines(&self) -> impl Iterator<Item = (i32, i32, Complex64)> + '_ {
        let w = self.window as i32;
        let side = 2 * w + 1;
        self.coeffs.iter().enumerate().map(move |(s, c)| (s as i32 / side - w, s as i32 % side - w, *c))
    }

    pub fn map(&self, f: impl Fn(i32, i32, Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        let w = self.window as i32;
        let side = 2 * w + 1;
        for (s, c) in out.coeffs.iter_mut().enumerate() {
            *c = f(s as i32 / side - w, s as i32 % side - w, *c);
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map(|_, _, c| c * s)
    }

    /// `self + s * other` over a common window.
    pub fn axpy(&mut self, s: Complex64, other: &Self) -> Result<()> {
        if self.window != other.window {
            return Err(Error::LayoutMismatch(format!("windows {} and {}", self.window, other.window)));
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn synthesize(&self, t1: f64, t2: f64) -> Complex64 {
        let w = self.window as i32;
        let e1 = Complex64::from_polar(1.0, t1);
        let e2 = Complex64::from_polar(1.0, t2);
        let p1: Vec<Complex64> = (-w..=w).map(|n| e1.powi(n)).collect();
        let p2: Vec<Complex64> = (-w..=w).map(|m| e2.powi(m)).collect();
        let side = (2 * w + 1) as usize;
        let mut acc = ZERO;
        for (a, pa) in p1.iter().enumerate() {
            let row = &self.coeffs[a * side..(a + 1) * side];
            let inner: Complex64 = row.iter().zip(&p2).map(|(c, pb)| c * pb).sum();
            acc += pa * inner;
        }
        acc
    }

    /// Sum of `|c|²` over every line.
    pub fn power(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// The `k` largest lines by magnitude, ties broken by index.
    pub fn top_lines(&self, k: usize) -> Vec<(i32, i32, Complex64)> {
        let mut all: Vec<_> = self.lines().filter(|l| l.2 != ZERO).collect();
        all.sort_by(|a, b| b.2.norm().total_cmp(&a.2.norm()).then((a.0, a.1).cmp(&(b.0, b.1))));
        all.truncate(k);
        all
    }

    /// Largest line other than `main`, relative to `|main|`.
    pub fn largest_side_ratio(&self, main: (i32, i32)) -> f64 {
        let m = self.get(main.0, main.1).norm();
        let side = self.lines().filter(|l| (l.0, l.1) != main).map(|l| l.2.norm()).fold(0.0, f64::max);
        side / m
    }

    /// Writes `n,m,re,im,abs,frequency` rows with `frequency = n ω1 + m ω2`,
    /// strongest lines first, keeping lines above `floor` in magnitude.
    pub fn write_csv<W: Write>(&self, mut out: W, omega: [f64; 2], floor: f64) -> std::io::Result<()> {
        writeln!(out, "n,m,re,im,abs,frequency")?;
        for (n, m, c) in self.top_lines(usize::MAX) {
            if c.norm() < floor {
                break;
            }
            let f = n as f64 * omega[0] + m as f64 * omega[1];
            writeln!(out, "{n},{m},{:.12e},{:.12e},{:.12e},{:.12}", c.re, c.im, c.norm(), f)?;
        }
        Ok(())
    }
}

/// Largest window a grid of `n1 x n2` resolves without folding.
pub fn max_window(n1: usize, n2: usize) -> usize {
    (n1.min(n2) / 2).saturating_sub(1)
}

/// Forward transform of grid samples, normalized so `e^{i(nθ1+mθ2)}` gives
/// coefficient 1 at `(n, m)`.
pub fn fourier2d(samples: &[Complex64], n1: usize, n2: usize, window: usize) -> Result<FourierTable> {
    if samples.len() != n1 * n2 {
        return Err(Error::LayoutMismatch(format!("{} samples for a {n1}x{n2} grid", samples.len())));
    }
    if window > max_window(n1, n2) {
        return Err(Error::InvalidArgument(format!("window {window} exceeds what a {n1}x{n2} grid resolves")));
    }
    let mut planner = FftPlanner::new();
    let f1 = planner.plan_fft_forward(n1);
    let f2 = planner.plan_fft_forward(n2);
    let mut buf = samples.to_vec();
    for row in buf.chunks_mut(n2) {
        f2.process(row);
    }
    let mut col = vec![ZERO; n1];
    for k in 0..n2 {
        for i in 0..n1 {
            col[i] = buf[i * n2 + k];
        }
        f1.process(&mut col);
        for i in 0..n1 {
            buf[i * n2 + k] = col[i];
        }
    }
    let norm = 1.0 / (n1 * n2) as f64;
    let mut t = FourierTable::zeros(window);
    let w = window as i32;
    for n in -w..=w {
        for m in -w..=w {
            let i = n.rem_euclid(n1 as i32) as usize;
            let k = m.rem_euclid(n2 as i32) as usize;
            t.set(n, m, buf[i * n2 + k] * norm);
        }
    }
    Ok(t)
}

/// Values of a table at every node of an `n1 x n2` grid (inverse transform).
pub fn synthesize_grid(table: &FourierTable, n1: usize, n2: usize) -> Result<Vec<Complex64>> {
    let w = table.window();
    if w > max_window(n1, n2) {
        return Err(Error::InvalidArgument(format!("window {w} exceeds what a {n1}x{n2} grid resolves")));
    }
    let mut buf = vec![ZERO; n1 * n2];
    for (n, m, c) in table.lines() {
        buf[n.rem_euclid(n1 as i32) as usize * n2 + m.rem_euclid(n2 as i32) as usize] = c;
    }
    let mut planner = FftPlanner::new();
    let f1 = planner.plan_fft_inverse(n1);
    let f2 = planner.plan_fft_inverse(n2);
    for row in buf.chunks_mut(n2) {
        f2.process(row);
    }
    let mut col = vec![ZERO; n1];
    for k in 0..n2 {
        for i in 0..n1 {
            col[i] = buf[i * n2 + k];
        }
        f1.process(&mut col);
        for i in 0..n1 {
            buf[i * n2 + k] = col[i];
        }
    }
    Ok(buf)
}
