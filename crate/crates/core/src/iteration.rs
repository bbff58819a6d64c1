//! The torus solve: bootstrap, then repeat
//! sample torus → phase rates → first-order actions → invert → re-minimize
//! until the first-order spectra and the re-minimized ones agree.
//!
//! Forward integration is never used here; see [`trajectory_deviation`] and
//! [`section_dispersion`] for after-the-fact checks against it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::combiner::{fluctuation_of, initial_combination, minimize_fluctuation, FluctuationReport, MAIN_LINES};
use crate::dynamics::{integrate, poincare_section, CrossingDirection, ModelSpec, State, StepControl, Trajectory};
use crate::error::{Error, Result};
use crate::perturbation::{
    first_order_actions, first_order_targets, linearized_actions, phi_fields, theta_tables, update_frequencies, DivisorPolicy,
    ThetaTables,
};
use crate::sqmatrix::{build_square_matrix, chain_pair, ChainPair};
use crate::torusmap::{fourier2d, invert_grid, max_window, sample_torus, Combination, FourierTable, NewtonOptions, TorusGrid};

/// Side power of unit-main-line spectra below this is roundoff; changes of
/// `g0` under it carry no information.
pub const G0_NOISE_FLOOR: f64 = 1e-18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Truncation order of the square matrix.
    pub n_s: usize,
    /// Chain rows combined before the main lines dominate.
    pub n_v: usize,
    /// Chain rows combined once they do.
    pub n_v_max: usize,
    /// Nodes per torus angle.
    pub grid: usize,
    /// Fourier window of the phase-rate tables; action tables use one more.
    /// `None` takes the largest the grid allows.
    pub window: Option<usize>,
    pub max_iterations: usize,
    /// Relative change of `g0` between iterations.
    pub tol_g: f64,
    /// Largest `|Im φ̄|`.
    pub tol_im: f64,
    /// Largest line difference between first-order and re-minimized spectra.
    pub tol_spectrum: f64,
    /// Main line must be this many times every side line.
    pub dominance_ratio: f64,
    /// Consecutive iterations, after dominance, in which both `g0` and the
    /// spectrum mismatch grow before the solve is declared divergent.
    pub divergence_run: usize,
    pub divisor_policy: DivisorPolicy,
    pub newton_max_iterations: usize,
    pub newton_tolerance: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            n_s: 5,
            n_v: 2,
            n_v_max: 4,
            grid: 64,
            window: None,
            max_iterations: 30,
            tol_g: 1e-3,
            tol_im: 1e-3,
            tol_spectrum: 5e-3,
            dominance_ratio: 2.0,
            divergence_run: 3,
            divisor_policy: DivisorPolicy::Suppress,
            newton_max_iterations: 50,
            newton_tolerance: 1e-11,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_s < 3 {
            return bad(format!("n_s = {} is too small; chains need order 3 or more", self.n_s));
        }
        if ![2, 4].contains(&self.n_v) || ![2, 4].contains(&self.n_v_max) || self.n_v > self.n_v_max {
            return bad(format!("n_v schedule {} -> {} must use 2 or 4 and not shrink", self.n_v, self.n_v_max));
        }
        if self.grid < 8 || self.grid % 2 != 0 {
            return bad(format!("grid = {} must be even and at least 8", self.grid));
        }
        if self.window() == 0 || self.window() + 1 > max_window(self.grid, self.grid) {
            return bad(format!("window {:?} does not fit a grid of {}", self.window, self.grid));
        }
        if self.max_iterations == 0 || self.divergence_run == 0 || self.newton_max_iterations == 0 {
            return bad("iteration counts must be positive".into());
        }
        for (name, v) in [
            ("tol_g", self.tol_g),
            ("tol_im", self.tol_im),
            ("tol_spectrum", self.tol_spectrum),
            ("newton_tolerance", self.newton_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.dominance_ratio >= 1.0) {
            return bad(format!("dominance_ratio must be at least 1, got {}", self.dominance_ratio));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.window.unwrap_or_else(|| max_window(self.grid, self.grid).saturating_sub(1))
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions { max_iterations: self.newton_max_iterations, tolerance: self.newton_tolerance }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Running,
    Converged,
    Diverged,
    Obstructed,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Running => "running",
            SolveStatus::Converged => "converged",
            SolveStatus::Diverged => "diverged",
            SolveStatus::Obstructed => "obstructed",
        }
    }
}

/// What one iteration produced.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Rows in the combination that was iterated.
    pub n_v: usize,
    /// Rows in the re-minimized combination.
    pub n_v_next: usize,
    pub omega: [f64; 2],
    pub im_residual: f64,
    /// Fluctuation of the re-minimized combination.
    pub g0: f64,
    /// Largest side line over main, first-order spectra.
    pub first_order_side_ratio: [f64; 2],
    /// Largest side line over main, re-minimized spectra.
    pub side_ratio: [f64; 2],
    /// Largest line difference between the two, main lines scaled to one.
    pub spectrum_mismatch: f64,
    /// Old combination re-evaluated on the improved states against the
    /// first-order spectra; small unless the inversion misbehaved.
    pub inversion_check: f64,
    pub dominant: bool,
    pub suppressed_lines: usize,
    #[serde(skip)]
    pub first_order: [FourierTable; 2],
    #[serde(skip)]
    pub minimized: [FourierTable; 2],
}

/// Outcome of a solve with everything needed to continue it or build
/// invariants from it.
#[derive(Clone, Debug)]
pub struct Solution {
    pub status: SolveStatus,
    pub reason: Option<String>,
    pub config: SolveConfig,
    pub state0: State,
    pub mu: [f64; 2],
    pub chains: ChainPair,
    /// Combination of the last completed iteration, anchored at `state0`,
    /// with updated frequencies.
    pub combination: Combination,
    /// Its phase-deviation tables.
    pub theta: Option<ThetaTables>,
    /// Re-minimized combination, the seed of a further iteration.
    pub next: Combination,
    /// First-order torus states.
    pub grid: Option<TorusGrid>,
    /// Chain-row spectra on `grid`, `n_v_max` of them.
    pub w_tables: Vec<FourierTable>,
    pub report: Option<FluctuationReport>,
    pub history: Vec<IterationRecord>,
    /// Plane-averaged phase rates over the first-order torus; second-order
    /// accurate where `omega()` is first-order.
    pub refined_omega: Option<[f64; 2]>,
}

impl Solution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Largest side line over main line of the final re-minimized actions.
    pub fn residual(&self) -> Option<f64> {
        self.history.last().map(|r| r.side_ratio[0].max(r.side_ratio[1]))
    }

    pub fn omega(&self) -> [f64; 2] {
        self.combination.omega
    }

    /// Fourier tables of `x, p_x, y, p_y` over the first-order torus.
    pub fn state_tables(&self) -> Result<[FourierTable; 4]> {
        let grid = self.grid.as_ref().ok_or_else(|| Error::InvalidArgument("solve produced no torus".into()))?;
        let w = max_window(grid.n1, grid.n2);
        let coord = |c: usize| -> Result<FourierTable> {
            let v: Vec<Complex64> = grid.states.iter().map(|s| Complex64::new(s[c], 0.0)).collect();
            fourier2d(&v, grid.n1, grid.n2, w)
        };
        Ok([coord(0)?, coord(1)?, coord(2)?, coord(3)?])
    }
}

/// `μ + Re φ̄` with `φ` averaged over the first-order torus instead of the
/// rigid-rotation one. The grid is uniform in the torus phases, which is the
/// invariant measure of the flow, so the mean phase rate is the frequency.
pub fn refine_frequencies(model: &ModelSpec, sol: &Solution) -> Result<[f64; 2]> {
    let grid = sol.grid.as_ref().ok_or_else(|| Error::InvalidArgument("solve produced no torus".into()))?;
    let phi = phi_fields(&sol.combination, model, grid, sol.config.window())?;
    Ok(update_frequencies(&phi, sol.mu).0)
}

/// Quasi-periodic trajectory `x(θ10 + ω1 t, θ20 + ω2 t)` of a solution.
pub struct Reconstruction {
    tables: [FourierTable; 4],
    omega: [f64; 2],
    theta0: [f64; 2],
}

impl Reconstruction {
    pub fn new(sol: &Solution) -> Result<Self> {
        let omega = sol.refined_omega.unwrap_or(sol.combination.omega);
        Ok(Self { tables: sol.state_tables()?, omega, theta0: sol.combination.theta0 })
    }

    pub fn at(&self, t: f64) -> State {
        let t1 = self.theta0[0] + self.omega[0] * t;
        let t2 = self.theta0[1] + self.omega[1] * t;
        let mut s = [0.0; 4];
        for (c, tab) in s.iter_mut().zip(&self.tables) {
            *c = tab.synthesize(t1, t2).re;
        }
        s
    }
}

/// Largest distance between the reconstructed and the integrated trajectory,
/// relative to the largest distance of the integrated one from the origin.
pub fn trajectory_deviation(sol: &Solution, oracle: &Trajectory) -> Result<f64> {
    let rec = Reconstruction::new(sol)?;
    let norm = |s: &State| s.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (t, s) in oracle.times.iter().zip(&oracle.states) {
        let r = rec.at(*t);
        let d = [r[0] - s[0], r[1] - s[1], r[2] - s[2], r[3] - s[3]];
        worst = worst.max(norm(&d));
        scale = scale.max(norm(s));
    }
    Ok(worst / scale)
}

struct Step {
    comb: Combination,
    theta: ThetaTables,
    grid: TorusGrid,
    w_tables: Vec<FourierTable>,
    next_a: [Vec<Complex64>; 2],
    report: FluctuationReport,
    record: IterationRecord,
}

fn max_line_difference(a: &FourierTable, b: &FourierTable) -> f64 {
    a.lines().map(|(n, m, c)| (c - b.get(n, m)).norm()).fold(0.0, f64::max)
}

fn iterate_once(
    model: &ModelSpec,
    state0: &State,
    chains: &ChainPair,
    comb: &Combination,
    cfg: &SolveConfig,
) -> Result<Step> {
    let g = cfg.grid;
    let window = cfg.window();
    let newton = cfg.newton();
    let mu = [model.mu_x, model.mu_y];

    let comb = comb.anchored_at(state0)?;
    let grid0 = sample_torus(&comb, g, g, state0, &newton)?;
    let phi = phi_fields(&comb, model, &grid0, window)?;
    let (omega, im_residual) = update_frequencies(&phi, mu);
    let theta = theta_tables(&phi.tables, omega, comb.theta0, cfg.divisor_policy)?;
    let first_order = first_order_actions(&theta);
    let linearized = linearized_actions(&theta);

    let targets = first_order_targets(&theta, comb.r, g, g)?;
    let grid1 = invert_grid(&comb.action_map()?, g, g, &targets, &grid0.states, &newton)?;
    let rows = chains.interleaved(cfg.n_v_max);
    let w_tables = grid1
        .observe(&rows)
        .iter()
        .map(|s| fourier2d(s, g, g, window + 1))
        .collect::<Result<Vec<_>>>()?;

    let n_v = comb.n_v();
    let old = fluctuation_of(&w_tables[..n_v], &comb.a)?;
    let inversion_check = (0..2)
        .map(|l| max_line_difference(&old.tables[l].scale(Complex64::from(1.0 / comb.r[l])), &linearized[l]))
        .fold(0.0, f64::max);

    let first_order_side_ratio =
        [first_order[0].largest_side_ratio(MAIN_LINES[0]), first_order[1].largest_side_ratio(MAIN_LINES[1])];
    let dominant = first_order_side_ratio.iter().all(|r| r * cfg.dominance_ratio <= 1.0);
    let n_v_next = if dominant { cfg.n_v_max } else { n_v };
    let (next_a, report) = minimize_fluctuation(&w_tables[..n_v_next])?;
    let spectrum_mismatch = (0..2)
        .map(|l| max_line_difference(&first_order[l], &report.tables[l]))
        .fold(0.0, f64::max);

    let mut comb = comb;
    comb.omega = omega;
    let record = IterationRecord {
        iteration: 0,
        n_v,
        n_v_next,
        omega,
        im_residual,
        g0: report.g0,
        first_order_side_ratio,
        side_ratio: report.largest_side_ratio,
        spectrum_mismatch,
        inversion_check,
        dominant,
        suppressed_lines: theta.suppressed.len(),
        first_order: first_order.clone(),
        minimized: report.tables.clone(),
    };
    Ok(Step { comb, theta, grid: grid1, w_tables, next_a, report, record })
}

/// Square matrix and chain pair for `model` at order `n_s`.
pub fn chains_for(model: &ModelSpec, n_s: usize) -> Result<ChainPair> {
    let m = build_square_matrix(model, n_s)?;
    chain_pair(&m)
}

/// Solve from the bootstrap combination at `state0`.
pub fn solve(model: &ModelSpec, state0: &State, cfg: &SolveConfig) -> Result<Solution> {
    cfg.validate()?;
    let chains = chains_for(model, cfg.n_s)?;
    let boot = initial_combination(&chains, state0)?;
    run(model, state0, chains, boot.combination, cfg)
}

/// Solve at `state0` seeded from an earlier solution instead of the
/// bootstrap; the seed's radii and phases are re-derived at `state0`.
pub fn continue_amplitude(prev: &Solution, model: &ModelSpec, state0: &State, cfg: &SolveConfig) -> Result<Solution> {
    cfg.validate()?;
    if prev.config.n_s != cfg.n_s {
        return Err(Error::InvalidArgument(format!(
            "seed solved at n_s = {}, continuation asks for {}",
            prev.config.n_s, cfg.n_s
        )));
    }
    if prev.next.n_v() > cfg.n_v_max {
        return Err(Error::InvalidArgument(format!("seed uses {} rows, n_v_max is {}", prev.next.n_v(), cfg.n_v_max)));
    }
    run(model, state0, prev.chains.clone(), prev.next.clone(), cfg)
}

/// Run the iteration from a given combination.
pub fn run(model: &ModelSpec, state0: &State, chains: ChainPair, seed: Combination, cfg: &SolveConfig) -> Result<Solution> {
    cfg.validate()?;
    seed.validate()?;
    let mut sol = Solution {
        status: SolveStatus::Running,
        reason: None,
        config: cfg.clone(),
        state0: *state0,
        mu: [model.mu_x, model.mu_y],
        chains,
        combination: seed.clone(),
        theta: None,
        next: seed,
        grid: None,
        w_tables: Vec::new(),
        report: None,
        history: Vec::new(),
        refined_omega: None,
    };
    let mut rises = 0;
    let mut dominance_seen = false;
    for it in 1..=cfg.max_iterations {
        let current = sol.next.clone();
        let step = match iterate_once(model, state0, &sol.chains, &current, cfg) {
            Ok(s) => s,
            Err(e) => {
                log::info!("iteration {it} stopped: {e}");
                sol.status = SolveStatus::Obstructed;
                sol.reason = Some(format!("iteration {it}: {e}"));
                return Ok(sol);
            }
        };
        let mut rec = step.record;
        rec.iteration = it;
        let prev = sol.history.last();
        let same_rows = prev.is_some_and(|p| p.n_v_next == rec.n_v_next);
        let g_change = match prev {
            Some(p) if same_rows && rec.g0.max(p.g0) < G0_NOISE_FLOOR => 0.0,
            Some(p) if same_rows => (rec.g0 - p.g0).abs() / rec.g0.max(f64::MIN_POSITIVE),
            _ => f64::INFINITY,
        };
        if dominance_seen && same_rows {
            // g0 climbs toward its limit while earlier tori underestimate the
            // fluctuation; only growth together with the mismatch is divergence
            let p = prev.unwrap();
            if rec.g0 > p.g0.max(G0_NOISE_FLOOR) && rec.spectrum_mismatch > p.spectrum_mismatch {
                rises += 1;
            } else {
                rises = 0;
            }
        }
        dominance_seen |= rec.dominant;
        log::debug!(
            "iteration {it}: n_v {} -> {}, omega ({:.5}, {:.5}), g0 {:.3e}, im {:.2e}, sides {:?}, mismatch {:.2e}",
            rec.n_v,
            rec.n_v_next,
            rec.omega[0],
            rec.omega[1],
            rec.g0,
            rec.im_residual,
            rec.side_ratio,
            rec.spectrum_mismatch
        );

        let converged = rec.dominant
            && rec.n_v_next == cfg.n_v_max
            && g_change < cfg.tol_g
            && rec.im_residual < cfg.tol_im
            && rec.spectrum_mismatch < cfg.tol_spectrum;

        let mut next = Combination {
            a: step.next_a,
            rows: sol.chains.interleaved(rec.n_v_next),
            r: [1.0, 1.0],
            omega: step.comb.omega,
            theta0: step.comb.theta0,
        };
        // keep the radii meaningful for callers that evaluate `next` directly
        if let Ok(anchored) = next.anchored_at(state0) {
            next = anchored;
        }
        sol.combination = step.comb;
        sol.theta = Some(step.theta);
        sol.next = next;
        sol.grid = Some(step.grid);
        sol.w_tables = step.w_tables;
        sol.report = Some(step.report);
        sol.history.push(rec);

        if converged {
            sol.status = SolveStatus::Converged;
            sol.refined_omega = refine_frequencies(model, &sol).ok();
            return Ok(sol);
        }
        if rises >= cfg.divergence_run {
            sol.status = SolveStatus::Diverged;
            sol.reason = Some(format!("g0 and spectrum mismatch grew {rises} iterations in a row"));
            return Ok(sol);
        }
    }
    sol.status = SolveStatus::Diverged;
    sol.reason = Some(format!("no convergence in {} iterations", cfg.max_iterations));
    Ok(sol)
}

/// One probe of a boundary scan.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeOutcome {
    pub y0: f64,
    pub py0: f64,
    pub status: SolveStatus,
    pub residual: Option<f64>,
    pub iterations: usize,
    pub omega: Option<[f64; 2]>,
    pub seeded: bool,
    pub reason: Option<String>,
    /// Section dispersion of the integrated orbit, when annotated.
    pub dispersion: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryScan {
    pub energy: f64,
    pub probes: Vec<ProbeOutcome>,
    /// First probe, in scan order, whose integrated orbit looks irregular.
    pub chaos_onset: Option<f64>,
}

/// Section dispersion above this marks an orbit as irregular; regular orbits
/// sit around `1e-3`.
pub const IRREGULAR_DISPERSION: f64 = 1e-2;

impl BoundaryScan {
    /// Integrate every probe for `t_end` and record its section dispersion
    /// and the first irregular probe.
    pub fn annotate_irregularity(&mut self, model: &ModelSpec, t_end: f64) {
        self.chaos_onset = None;
        for p in &mut self.probes {
            p.dispersion = model
                .initial_state(self.energy, 0.0, p.y0, p.py0)
                .and_then(|s| section_dispersion(model, &s, t_end))
                .ok();
            if self.chaos_onset.is_none() && p.dispersion.is_some_and(|d| d > IRREGULAR_DISPERSION) {
                self.chaos_onset = Some(p.py0);
            }
        }
    }

    /// Writes `y0,py0,status,residual,iterations,omega1,omega2,dispersion,chaos_onset`;
    /// the onset estimate repeats on every row.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "y0,py0,status,residual,iterations,omega1,omega2,dispersion,chaos_onset")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10e}"));
        for p in &self.probes {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                p.y0,
                p.py0,
                p.status.as_str(),
                opt(p.residual),
                p.iterations,
                opt(p.omega.map(|w| w[0])),
                opt(p.omega.map(|w| w[1])),
                opt(p.dispersion),
                opt(self.chaos_onset)
            )?;
        }
        Ok(())
    }
}

/// Solve each probe `(y0, p_y0)` at `x0 = 0` and the given energy, in order,
/// seeding each from the last converged solution of the chain.
pub fn scan_boundary(model: &ModelSpec, energy: f64, probes: &[(f64, f64)], cfg: &SolveConfig) -> Result<BoundaryScan> {
    cfg.validate()?;
    let mut seed: Option<Solution> = None;
    let mut out = Vec::with_capacity(probes.len());
    for &(y0, py0) in probes {
        let outcome = |status, reason: Option<String>, sol: Option<&Solution>, seeded| ProbeOutcome {
            y0,
            py0,
            status,
            residual: sol.and_then(|s| s.residual()),
            iterations: sol.map_or(0, |s| s.iterations()),
            omega: sol.filter(|s| !s.history.is_empty()).map(|s| s.omega()),
            seeded,
            reason,
            dispersion: None,
        };
        let state0 = match model.initial_state(energy, 0.0, y0, py0) {
            Ok(s) => s,
            Err(e) => {
                out.push(outcome(SolveStatus::Obstructed, Some(e.to_string()), None, false));
                continue;
            }
        };
        let result = match &seed {
            Some(prev) => continue_amplitude(prev, model, &state0, cfg),
            None => solve(model, &state0, cfg),
        };
        match result {
            Ok(sol) => {
                out.push(outcome(sol.status, sol.reason.clone(), Some(&sol), seed.is_some()));
                if sol.status == SolveStatus::Converged {
                    seed = Some(sol);
                }
            }
            Err(e) => out.push(outcome(SolveStatus::Obstructed, Some(e.to_string()), None, seed.is_some())),
        }
    }
    Ok(BoundaryScan { energy, probes: out, chaos_onset: None })
}

/// Scatter of the Poincaré section of the orbit through `state0` about a
/// smooth curve: for every section point, its distance from the chord through
/// its two nearest neighbours relative to that chord's length; the median over
/// all points. Regular orbits give values near zero, chaotic ones order one.
pub fn section_dispersion(model: &ModelSpec, state0: &State, t_end: f64) -> Result<f64> {
    let traj = integrate(model, state0, t_end, StepControl::default())?;
    let pts = poincare_section(model, &traj, CrossingDirection::IntoPositive).yp();
    if pts.len() < 8 {
        return Err(Error::InvalidArgument(format!("only {} section points; integrate longer", pts.len())));
    }
    let mut scores = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let mut near: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, q)| ((q.0 - p.0).hypot(q.1 - p.1), j))
            .collect();
        near.select_nth_unstable_by(1, |a, b| a.0.total_cmp(&b.0));
        let (a, b) = (pts[near[0].1], pts[near[1].1]);
        let chord = (b.0 - a.0).hypot(b.1 - a.1);
        if chord == 0.0 {
            continue;
        }
        let cross = ((b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)).abs();
        scores.push(cross / (chord * chord));
    }
    scores.sort_by(f64::total_cmp);
    Ok(scores[scores.len() / 2])
}
