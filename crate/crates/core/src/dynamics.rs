//! Polynomial models, the forward-integration oracle, Poincaré sections and
//! spectral line estimation.
//!
//! The oracle integrator is a fixed-step Gragg–Bulirsch–Stoer scheme: the
//! modified midpoint rule with 2, 4, 6 and 8 substeps, extrapolated in `h²`
//! to eighth order. It is an explicit Runge–Kutta method in disguise.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyalg::{BasisLayout, TruncPoly};

pub type State = [f64; 4];

/// Relative energy drift allowed for an oracle trajectory.
pub const ENERGY_DRIFT_GATE: f64 = 1e-8;

/// Sparse real polynomial in `(x, p_x, y, p_y)` for fast evaluation.
#[derive(Clone, Debug, Default)]
struct RealTerms {
    terms: Vec<(f64, [u8; 4])>,
}

impl RealTerms {
    fn from_poly(p: &TruncPoly) -> Self {
        let l = p.layout();
        let terms = p
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.re != 0.0)
            .map(|(pos, c)| {
                let e = l.exponents(pos);
                (c.re, [e[0], e[1], e[2], e[3]])
            })
            .collect();
        Self { terms }
    }

    #[inline]
    fn eval(&self, s: &State) -> f64 {
        let mut acc = 0.0;
        for (c, e) in &self.terms {
            let mut t = *c;
            for v in 0..4 {
                for _ in 0..e[v] {
                    t *= s[v];
                }
            }
            acc += t;
        }
        acc
    }
}

/// One `{exponents, coefficient}` entry of a model config.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Term {
    pub exponents: Vec<u8>,
    pub coefficient: f64,
}

/// Model section of a run config: either a Hamiltonian or an explicit vector
/// field, both as real polynomials in `(x, p_x, y, p_y)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    #[serde(default)]
    pub hamiltonian: Option<Vec<Term>>,
    #[serde(default)]
    pub vector_field: Option<Vec<Vec<Term>>>,
}

/// A two-degree-of-freedom polynomial model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub n_dof: usize,
    hamiltonian: Option<TruncPoly>,
    real_field: [TruncPoly; 4],
    resonance_field: [TruncPoly; 4],
    pub mu_x: f64,
    pub mu_y: f64,
    h_terms: Option<RealTerms>,
    field_terms: [RealTerms; 4],
}

fn real_layout(degree: usize) -> Result<Arc<BasisLayout>> {
    BasisLayout::new(4, degree.max(1), true)
}

fn poly_from_terms(layout: &Arc<BasisLayout>, terms: &[Term]) -> Result<TruncPoly> {
    let mut p = TruncPoly::zero(layout);
    for t in terms {
        if t.exponents.len() != 4 {
            return Err(Error::Model(format!("term {:?} needs 4 exponents", t.exponents)));
        }
        if !t.coefficient.is_finite() {
            return Err(Error::Model(format!("non-finite coefficient in term {:?}", t.exponents)));
        }
        let pos = layout.index_of(&t.exponents)?;
        p.coeffs_mut()[pos] += Complex64::new(t.coefficient, 0.0);
    }
    Ok(p)
}

fn terms_degree(terms: &[Term]) -> usize {
    terms.iter().map(|t| t.exponents.iter().map(|&e| e as usize).sum::<usize>()).max().unwrap_or(1)
}

impl ModelSpec {
    /// Build from a real Hamiltonian. A constant term is dropped with a warning.
    pub fn from_hamiltonian(h: TruncPoly) -> Result<Self> {
        if h.layout().n_vars() != 4 {
            return Err(Error::Model("Hamiltonian must be a polynomial in 4 variables".into()));
        }
        if h.coeffs().iter().any(|c| c.im != 0.0) {
            return Err(Error::Model("Hamiltonian coefficients must be real".into()));
        }
        let layout = if h.layout().includes_constant() { h.layout().clone() } else { real_layout(h.layout().n_s())? };
        let (mut h, _) = h.embed(&layout)?;
        if h.coeffs()[0] != Complex64::new(0.0, 0.0) {
            log::warn!("dropping constant term {} from the Hamiltonian", h.coeffs()[0].re);
            h.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        }
        let neg = Complex64::new(-1.0, 0.0);
        let field = [
            h.partial_derivative(1)?,
            h.partial_derivative(0)?.scale(neg),
            h.partial_derivative(3)?,
            h.partial_derivative(2)?.scale(neg),
        ];
        let mut m = Self::from_field_polys(field)?;
        m.h_terms = Some(RealTerms::from_poly(&h));
        m.hamiltonian = Some(h);
        Ok(m)
    }

    /// Build from an explicit real vector field `(ẋ, ṗ_x, ẏ, ṗ_y)`.
    pub fn from_vector_field(field: [TruncPoly; 4]) -> Result<Self> {
        for f in &field {
            if f.coeffs().iter().any(|c| c.im != 0.0) {
                return Err(Error::Model("vector field coefficients must be real".into()));
            }
        }
        Self::from_field_polys(field)
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        if let Some(vars) = &cfg.variables {
            if vars.len() != 4 {
                return Err(Error::Model(format!("expected 4 variables, got {}", vars.len())));
            }
        }
        match (&cfg.hamiltonian, &cfg.vector_field) {
            (Some(h), None) => {
                let layout = real_layout(terms_degree(h))?;
                Self::from_hamiltonian(poly_from_terms(&layout, h)?)
            }
            (None, Some(vf)) => {
                if vf.len() != 4 {
                    return Err(Error::Model(format!("vector_field needs 4 components, got {}", vf.len())));
                }
                let deg = vf.iter().map(|c| terms_degree(c)).max().unwrap_or(1);
                let layout = real_layout(deg)?;
                let f = [
                    poly_from_terms(&layout, &vf[0])?,
                    poly_from_terms(&layout, &vf[1])?,
                    poly_from_terms(&layout, &vf[2])?,
                    poly_from_terms(&layout, &vf[3])?,
                ];
                Self::from_vector_field(f)
            }
            (Some(_), Some(_)) => Err(Error::Model("give either hamiltonian or vector_field, not both".into())),
            (None, None) => Err(Error::Model("model needs a hamiltonian or a vector_field".into())),
        }
    }

    fn from_field_polys(field: [TruncPoly; 4]) -> Result<Self> {
        let deg = field.iter().filter_map(|f| f.degree()).max().unwrap_or(1).max(1);
        let layout = real_layout(deg)?;
        let mut real = Vec::with_capacity(4);
        for f in field.iter() {
            let (p, _) = f.embed(&layout)?;
            if p.coeffs()[0].norm() != 0.0 {
                return Err(Error::Model("vector field has a constant (forcing) term".into()));
            }
            real.push(p);
        }
        let real_field: [TruncPoly; 4] = real.try_into().expect("four components");

        // x = (z + z*)/2, p = i (z - z*)/2 for each canonical pair
        let zl = layout.clone();
        let z: Vec<TruncPoly> = (0..4).map(|v| TruncPoly::variable(&zl, v)).collect::<Result<_>>()?;
        let half = Complex64::new(0.5, 0.0);
        let ihalf = Complex64::new(0.0, 0.5);
        let subs = [
            z[0].add(&z[1])?.scale(half),
            z[0].sub(&z[1])?.scale(ihalf),
            z[2].add(&z[3])?.scale(half),
            z[2].sub(&z[3])?.scale(ihalf),
        ];
        let f: Vec<TruncPoly> = real_field.iter().map(|p| p.substitute(&subs)).collect::<Result<_>>()?;
        let i = Complex64::new(0.0, 1.0);
        let zdot = |q: &TruncPoly, p: &TruncPoly, sign: f64| -> Result<TruncPoly> {
            let mut out = q.clone();
            out.axpy(i * sign, p)?;
            Ok(out)
        };
        let resonance_field = [
            zdot(&f[0], &f[1], -1.0)?,
            zdot(&f[0], &f[1], 1.0)?,
            zdot(&f[2], &f[3], -1.0)?,
            zdot(&f[2], &f[3], 1.0)?,
        ];

        // linear part must be diag(i mu_x, -i mu_x, i mu_y, -i mu_y)
        let mut mus = [0.0f64; 4];
        for (k, fk) in resonance_field.iter().enumerate() {
            for v in 0..4 {
                let mut e = [0u8; 4];
                e[v] = 1;
                let c = fk.coeff(&e);
                if v == k {
                    if c.re.abs() > 1e-12 {
                        return Err(Error::Model(format!("linear part of component {k} is not conservative")));
                    }
                    mus[k] = c.im;
                } else if c.norm() > 1e-12 {
                    return Err(Error::Model(format!(
                        "linear part is not diagonal in resonance variables (component {k}, variable {v})"
                    )));
                }
            }
        }
        if (mus[0] + mus[1]).abs() > 1e-12 || (mus[2] + mus[3]).abs() > 1e-12 {
            return Err(Error::Model("linear frequencies of conjugate variables disagree".into()));
        }
        if mus[0] <= 0.0 || mus[2] <= 0.0 {
            return Err(Error::Model("linear frequencies must be positive".into()));
        }
        let field_terms = [
            RealTerms::from_poly(&real_field[0]),
            RealTerms::from_poly(&real_field[1]),
            RealTerms::from_poly(&real_field[2]),
            RealTerms::from_poly(&real_field[3]),
        ];
        Ok(Self {
            n_dof: 2,
            hamiltonian: None,
            real_field,
            resonance_field,
            mu_x: mus[0],
            mu_y: mus[2],
            h_terms: None,
            field_terms,
        })
    }

    pub fn hamiltonian(&self) -> Option<&TruncPoly> {
        self.hamiltonian.as_ref()
    }

    /// Real field components `(ẋ, ṗ_x, ẏ, ṗ_y)`.
    pub fn real_field(&self) -> &[TruncPoly; 4] {
        &self.real_field
    }

    /// Field components `(ż_x, ż_x*, ż_y, ż_y*)` in the resonance variables.
    pub fn resonance_field(&self) -> &[TruncPoly; 4] {
        &self.resonance_field
    }

    /// Highest degree in the vector field.
    pub fn field_degree(&self) -> usize {
        self.resonance_field.iter().filter_map(|f| f.degree()).max().unwrap_or(1)
    }

    pub fn is_resonant(&self) -> bool {
        (self.mu_x - self.mu_y).abs() < 1e-12
    }

    #[inline]
    pub fn rhs(&self, s: &State) -> State {
        [
            self.field_terms[0].eval(s),
            self.field_terms[1].eval(s),
            self.field_terms[2].eval(s),
            self.field_terms[3].eval(s),
        ]
    }

    /// Resonance-variable velocities evaluated at a point.
    pub fn resonance_rhs(&self, z: &[Complex64; 4]) -> [Complex64; 4] {
        // derive from the real field to avoid a second polynomial evaluation path
        let s = [z[0].re, -z[0].im, z[2].re, -z[2].im];
        let f = self.rhs(&s);
        [
            Complex64::new(f[0], -f[1]),
            Complex64::new(f[0], f[1]),
            Complex64::new(f[2], -f[3]),
            Complex64::new(f[2], f[3]),
        ]
    }

    pub fn energy(&self, s: &State) -> Option<f64> {
        self.h_terms.as_ref().map(|h| h.eval(s))
    }

    /// Solve `H(x0, p_x, y0, p_y0) = E` for the non-negative root `p_x`.
    pub fn initial_state(&self, energy: f64, x0: f64, y0: f64, py0: f64) -> Result<State> {
        let h = self.hamiltonian.as_ref().ok_or_else(|| Error::Model("no Hamiltonian to fix p_x".into()))?;
        let l = h.layout();
        let mut c = [0.0f64; 3];
        for (pos, coef) in h.coeffs().iter().enumerate() {
            if coef.re == 0.0 {
                continue;
            }
            let e = l.exponents(pos);
            let k = e[1] as usize;
            if k > 2 {
                return Err(Error::Model("Hamiltonian is not quadratic in p_x".into()));
            }
            c[k] += coef.re * x0.powi(e[0] as i32) * y0.powi(e[2] as i32) * py0.powi(e[3] as i32);
        }
        let (a, b, c0) = (c[2], c[1], c[0] - energy);
        let px = if a.abs() < 1e-300 {
            if b == 0.0 {
                return Err(Error::Model("Hamiltonian does not depend on p_x".into()));
            }
            -c0 / b
        } else {
            let radicand = b * b - 4.0 * a * c0;
            if radicand < 0.0 {
                return Err(Error::InfeasibleEnergy { energy, radicand });
            }
            (-b + radicand.sqrt()) / (2.0 * a)
        };
        Ok([x0, px, y0, py0])
    }
}

/// The Hénon–Heiles system `H = (x² + p_x² + y² + p_y²)/2 + x² y − y³/3`.
pub fn henon_heiles() -> ModelSpec {
    let cfg = henon_heiles_config();
    ModelSpec::from_config(&cfg).expect("built-in model is valid")
}

pub fn henon_heiles_config() -> ModelConfig {
    let t = |e: [u8; 4], c: f64| Term { exponents: e.to_vec(), coefficient: c };
    ModelConfig {
        variables: Some(vec!["x".into(), "px".into(), "y".into(), "py".into()]),
        hamiltonian: Some(vec![
            t([2, 0, 0, 0], 0.5),
            t([0, 2, 0, 0], 0.5),
            t([0, 0, 2, 0], 0.5),
            t([0, 0, 0, 2], 0.5),
            t([2, 0, 1, 0], 1.0),
            t([0, 0, 3, 0], -1.0 / 3.0),
        ]),
        vector_field: None,
    }
}

// ---------------------------------------------------------------------------
// integration

const GBS_SUBSTEPS: [usize; 4] = [2, 4, 6, 8];

fn axpy4(a: &State, h: f64, b: &State) -> State {
    [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2], a[3] + h * b[3]]
}

/// One eighth-order extrapolated midpoint step of size `h`.
pub fn gbs_step(model: &ModelSpec, s: &State, h: f64) -> State {
    let f0 = model.rhs(s);
    let mut table: [State; 4] = [[0.0; 4]; 4];
    for (row, &n) in GBS_SUBSTEPS.iter().enumerate() {
        let hs = h / n as f64;
        let mut z0 = *s;
        let mut z1 = axpy4(s, hs, &f0);
        for _ in 1..n {
            let f = model.rhs(&z1);
            let z2 = axpy4(&z0, 2.0 * hs, &f);
            z0 = z1;
            z1 = z2;
        }
        let f = model.rhs(&z1);
        let mut y = [0.0; 4];
        for v in 0..4 {
            y[v] = 0.5 * (z0[v] + z1[v] + hs * f[v]);
        }
        table[row] = y;
    }
    // Aitken–Neville in h^2
    for k in 1..GBS_SUBSTEPS.len() {
        for j in (k..GBS_SUBSTEPS.len()).rev() {
            let ratio = (GBS_SUBSTEPS[j] as f64 / GBS_SUBSTEPS[j - k] as f64).powi(2);
            for v in 0..4 {
                table[j][v] += (table[j][v] - table[j - 1][v]) / (ratio - 1.0);
            }
        }
    }
    table[GBS_SUBSTEPS.len() - 1]
}

/// Step-size control for [`integrate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepControl {
    Fixed(f64),
    /// Halve the step from `dt_start` until the energy drift over
    /// `t_check` stays below `tol` (relative).
    EnergyGate { dt_start: f64, t_check: f64, tol: f64 },
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::EnergyGate { dt_start: 0.1, t_check: 200.0, tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub energy0: Option<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Largest `|H(t) - H(0)| / |H(0)|` over the samples.
    pub fn max_relative_energy_drift(&self, model: &ModelSpec) -> Option<f64> {
        let e0 = self.energy0?;
        let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
        Some(self.states.iter().map(|s| (model.energy(s).unwrap_or(e0) - e0).abs() / scale).fold(0.0, f64::max))
    }
}

fn run_fixed(model: &ModelSpec, s0: &State, t_end: f64, dt: f64) -> Result<Trajectory> {
    let steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut s = *s0;
    times.push(0.0);
    states.push(s);
    for k in 1..=steps {
        s = gbs_step(model, &s, dt);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: k as f64 * dt, reason: "state left the finite range".into() });
        }
        times.push(k as f64 * dt);
        states.push(s);
    }
    Ok(Trajectory { times, states, energy0: model.energy(s0), dt })
}

/// Pick a fixed step from an energy-drift pre-check.
pub fn choose_step(model: &ModelSpec, s0: &State, dt_start: f64, t_check: f64, tol: f64) -> Result<f64> {
    let mut dt = dt_start;
    let Some(e0) = model.energy(s0) else {
        return Ok(dt);
    };
    if e0 == 0.0 {
        return Ok(dt);
    }
    loop {
        if dt < 1e-6 {
            return Err(Error::Integration { t: 0.0, reason: format!("step size underflow ({dt:e})") });
        }
        let drift = match run_fixed(model, s0, t_check, dt) {
            Ok(tr) => tr.max_relative_energy_drift(model).unwrap_or(0.0),
            Err(_) => f64::INFINITY,
        };
        if drift < tol {
            return Ok(dt);
        }
        dt *= 0.5;
    }
}

/// Forward integration from `state0` to `t_end`; samples every step.
pub fn integrate(model: &ModelSpec, state0: &State, t_end: f64, control: StepControl) -> Result<Trajectory> {
    if !t_end.is_finite() || t_end < 0.0 || state0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite integration input".into()));
    }
    let dt = match control {
        StepControl::Fixed(dt) => {
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!("step {dt} must be positive")));
            }
            dt
        }
        StepControl::EnergyGate { dt_start, t_check, tol } => choose_step(model, state0, dt_start, t_check.min(t_end.max(1.0)), tol)?,
    };
    run_fixed(model, state0, t_end, dt)
}

// ---------------------------------------------------------------------------
// Poincaré sections

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossingDirection {
    /// `x` goes from negative to positive.
    IntoPositive,
    IntoNegative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionPoint {
    pub t: f64,
    pub y: f64,
    pub py: f64,
    pub state: State,
}

#[derive(Clone, Debug)]
pub struct SectionPoints {
    pub direction: CrossingDirection,
    pub points: Vec<SectionPoint>,
}

impl SectionPoints {
    pub fn yp(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.y, p.py)).collect()
    }
}

/// Crossings of the `x = 0` plane, polished by Newton steps in time.
pub fn poincare_section(model: &ModelSpec, traj: &Trajectory, direction: CrossingDirection) -> SectionPoints {
    let mut points = Vec::new();
    for k in 0..traj.states.len().saturating_sub(1) {
        let (a, b) = (traj.states[k][0], traj.states[k + 1][0]);
        let hit = match direction {
            CrossingDirection::IntoPositive => a < 0.0 && b >= 0.0,
            CrossingDirection::IntoNegative => a > 0.0 && b <= 0.0,
        };
        if !hit {
            continue;
        }
        // start from the nearer bracket end
        let (mut s, mut t) = if a.abs() < b.abs() {
            (traj.states[k], traj.times[k])
        } else {
            (traj.states[k + 1], traj.times[k + 1])
        };
        for _ in 0..30 {
            if s[0].abs() < 1e-13 {
                break;
            }
            let xdot = model.rhs(&s)[0];
            if xdot == 0.0 {
                break;
            }
            let h = -s[0] / xdot;
            s = gbs_step(model, &s, h);
            t += h;
        }
        points.push(SectionPoint { t, y: s[2], py: s[3], state: s });
    }
    SectionPoints { direction, points }
}

/// Energy limit of the `x = 0` section for Hénon–Heiles:
/// `p_y² / 2 + y² / 2 − y³ / 3 ≤ E`.
pub fn henon_heiles_section_allowed(energy: f64, y: f64, py: f64) -> bool {
    0.5 * py * py + 0.5 * y * y - y * y * y / 3.0 <= energy + 1e-12
}

// ---------------------------------------------------------------------------
// spectral lines

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralLine {
    /// Angular frequency.
    pub frequency: f64,
    pub amplitude: Complex64,
}

fn window(n: usize) -> Vec<f64> {
    // squared Hann, normalized to unit sum
    let w: Vec<f64> = (0..n)
        .map(|k| {
            let h = 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos());
            h * h
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn correlate(signal: &[Complex64], w: &[f64], dt: f64, omega: f64) -> Complex64 {
    // phase recursion keeps this O(n) without per-sample trig
    let step = Complex64::from_polar(1.0, -omega * dt);
    let mut ph = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, (s, wk)) in signal.iter().zip(w).enumerate() {
        acc += s * ph * *wk;
        ph *= step;
        if k % 1024 == 1023 {
            ph = Complex64::from_polar(1.0, -omega * dt * (k + 1) as f64);
        }
    }
    acc
}

/// The `count` strongest spectral lines of a uniformly sampled complex
/// signal. Each line is located on a windowed FFT, refined by a parabolic
/// fit of the log amplitude and then by maximizing the windowed
/// correlation, and removed before the next search.
pub fn fundamental_frequencies(signal: &[Complex64], dt: f64, count: usize) -> Vec<SpectralLine> {
    let n = signal.len();
    if n < 8 || count == 0 {
        return Vec::new();
    }
    let w = window(n);
    let nfft = (2 * n).next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut residual = signal.to_vec();
    let mut lines = Vec::with_capacity(count);
    let bin = 2.0 * PI / (nfft as f64 * dt);
    for _ in 0..count {
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for k in 0..n {
            buf[k] = residual[k] * w[k];
        }
        fft.process(&mut buf);
        let (kmax, _) = buf
            .iter()
            .enumerate()
            .map(|(k, v)| (k, v.norm()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let freq_of = |k: isize| {
            let kk = if k as usize >= nfft / 2 { k - nfft as isize } else { k };
            kk as f64 * bin
        };
        let at = |k: isize| buf[k.rem_euclid(nfft as isize) as usize].norm().max(1e-300).ln();
        let km = kmax as isize;
        let (l, c, r) = (at(km - 1), at(km), at(km + 1));
        let denom = l - 2.0 * c + r;
        let shift = if denom.abs() > 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        let guess = freq_of(km) + shift * bin;

        // golden-section maximization of |correlation|
        let f = |om: f64| -correlate(&residual, &w, dt, om).norm();
        let (mut a, mut b) = (guess - bin, guess + bin);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..200 {
            if (b - a).abs() < 1e-13 * (1.0 + guess.abs()) {
                break;
            }
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = f(x2);
            }
        }
        let omega = 0.5 * (a + b);
        let amp = correlate(&residual, &w, dt, omega);
        for (k, r) in residual.iter_mut().enumerate() {
            *r -= amp * Complex64::from_polar(1.0, omega * dt * k as f64);
        }
        lines.push(SpectralLine { frequency: omega, amplitude: amp });
    }
    lines.sort_by(|x, y| y.amplitude.norm().total_cmp(&x.amplitude.norm()));
    lines
}
