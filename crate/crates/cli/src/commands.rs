use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use kamtori::dynamics::{integrate, poincare_section, CrossingDirection, ModelSpec, State, StepControl};
use kamtori::iteration::*;
use kamtori::kaminvariant::{contour_distance, radius_fluctuation, ContourKind, KamInvariant, PhaseTorus};
use kamtori::sqmatrix::{build_square_matrix, chain_pair, JordanDecomposition};
use kamtori::torusmap::{Combination, FourierTable};
use kamtori::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::output::{Outputs, FORMAT_VERSION};

/// How a command ended, mapped to the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Diverged,
    Obstructed,
}

impl Outcome {
    fn of(status: SolveStatus) -> Self {
        match status {
            SolveStatus::Converged => Outcome::Success,
            SolveStatus::Diverged => Outcome::Diverged,
            SolveStatus::Running | SolveStatus::Obstructed => Outcome::Obstructed,
        }
    }
}

/// Lines below this magnitude are left out of spectrum files.
const LINE_FLOOR: f64 = 1e-14;

fn write_lines(out: &mut dyn Write, prefix: &str, table: &FourierTable) -> std::io::Result<()> {
    for (n, m, c) in table.lines() {
        if c.norm() > LINE_FLOOR {
            writeln!(out, "{prefix}{n},{m},{:.17e},{:.17e}", c.re, c.im)?;
        }
    }
    Ok(())
}

pub fn matrix(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.validate_matrix()?;
    let m = build_square_matrix(&model, cfg.solve.n_s)?;
    let mut out = Outputs::create(cfg)?;
    out.csv("matrix.csv", |w| m.write_csv(w))?;

    let layout = m.layout().clone();
    let diagonal = m.diagonal();
    let mismatches = (0..m.dim()).filter(|&k| diagonal[k] != m.expected_diagonal(k)).count();
    out.csv("diagonal.csv", |w| {
        writeln!(w, "index,exponents,re,im,expected_re,expected_im")?;
        for (k, d) in diagonal.iter().enumerate() {
            let e = m.expected_diagonal(k);
            let exps: Vec<String> = layout.exponents(k).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{k},{},{},{},{},{}", exps.join(" "), d.re, d.im, e.re, e.im)?;
        }
        Ok(())
    })?;

    let mut chains = Vec::new();
    let mut chain_lengths = Vec::new();
    let mut chain_note = None;
    match JordanDecomposition::new(&m, Complex64::new(0.0, model.mu_x)).and_then(|d| {
        chain_lengths = d.chain_lengths();
        chain_pair(&m)
    }) {
        Ok(pair) => {
            for (name, chain) in [("x", &pair.chain_x), ("y", &pair.chain_y)] {
                chains.push((name, chain.eigenvalue, chain.len(), chain.residual(&m)));
            }
        }
        Err(e) => chain_note = Some(e.to_string()),
    }
    out.csv("chains.csv", |w| {
        writeln!(w, "chain,eigenvalue_re,eigenvalue_im,length,residual")?;
        for (name, ev, len, res) in &chains {
            writeln!(w, "{name},{},{},{len},{res:.6e}", ev.re, ev.im)?;
        }
        Ok(())
    })?;

    println!("dimension {}", m.dim());
    println!("diagonal mismatches {mismatches}, structure violation {:e}", m.structure_violation());
    if let Some(longest) = chain_lengths.iter().max() {
        println!("longest chain {longest}");
    }
    for (name, _, len, res) in &chains {
        println!("chain {name}: length {len}, residual {res:.3e}");
    }
    if let Some(note) = &chain_note {
        println!("no chains: {note}");
    }
    let summary = json!({
        "dimension": m.dim(),
        "diagonal_mismatches": mismatches,
        "structure_violation": m.structure_violation(),
        "chain_lengths": chain_lengths,
        "chain_residuals": chains.iter().map(|c| c.3).collect::<Vec<_>>(),
        "chain_error": chain_note,
    });
    out.finish("matrix", cfg, "ok", summary)?;
    Ok(Outcome::Success)
}

/// Converged combination saved for continuation.
#[derive(Serialize, Deserialize)]
struct Seed {
    format_version: u32,
    n_s: usize,
    a: [Vec<[f64; 2]>; 2],
    r: [f64; 2],
    omega: [f64; 2],
    theta0: [f64; 2],
}

impl Seed {
    fn of(sol: &Solution) -> Self {
        let row = |l: usize| sol.next.a[l].iter().map(|c| [c.re, c.im]).collect();
        Seed {
            format_version: FORMAT_VERSION,
            n_s: sol.config.n_s,
            a: [row(0), row(1)],
            r: sol.next.r,
            omega: sol.next.omega,
            theta0: sol.next.theta0,
        }
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| ConfigError { field: "seed_solution".into(), message: e.to_string() }.into())
    }

    fn resume(&self, model: &ModelSpec, state0: &State, cfg: &SolveConfig) -> Result<kamtori::Result<Solution>> {
        let bad = |message: String| ConfigError { field: "seed_solution".into(), message };
        if self.n_s != cfg.n_s {
            return Err(bad(format!("seed solved at n_s = {}, config asks for {}", self.n_s, cfg.n_s)).into());
        }
        let n_v = self.a[0].len();
        if self.a[1].len() != n_v || n_v > cfg.n_v_max {
            return Err(bad(format!("seed rows of {} and {} do not fit n_v_max = {}", n_v, self.a[1].len(), cfg.n_v_max)).into());
        }
        let chains = chains_for(model, cfg.n_s)?;
        let row = |l: usize| self.a[l].iter().map(|c| Complex64::new(c[0], c[1])).collect();
        let seed = Combination {
            a: [row(0), row(1)],
            rows: chains.interleaved(n_v),
            r: self.r,
            omega: self.omega,
            theta0: self.theta0,
        };
        Ok(run(model, state0, chains, seed, cfg))
    }
}

pub fn solve_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let (model, state0) = cfg.validate_solve()?;
    let result = match &cfg.seed_solution {
        Some(path) => Seed::load(path)?.resume(&model, &state0, &cfg.solve)?,
        None => solve(&model, &state0, &cfg.solve),
    };
    let mut out = Outputs::create(cfg)?;
    let sol = match result {
        Ok(sol) => sol,
        Err(e) => {
            eprintln!("solve obstructed: {e}");
            out.finish("solve", cfg, SolveStatus::Obstructed.as_str(), json!({ "reason": e.to_string() }))?;
            return Ok(Outcome::Obstructed);
        }
    };

    out.csv("history.csv", |w| {
        writeln!(
            w,
            "iteration,n_v,n_v_next,omega1,omega2,im_residual,g0,side_ratio1,side_ratio2,\
             first_order_side_ratio1,first_order_side_ratio2,spectrum_mismatch,inversion_check,dominant,suppressed_lines"
        )?;
        for r in &sol.history {
            writeln!(
                w,
                "{},{},{},{:.12},{:.12},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
                r.iteration,
                r.n_v,
                r.n_v_next,
                r.omega[0],
                r.omega[1],
                r.im_residual,
                r.g0,
                r.side_ratio[0],
                r.side_ratio[1],
                r.first_order_side_ratio[0],
                r.first_order_side_ratio[1],
                r.spectrum_mismatch,
                r.inversion_check,
                r.dominant,
                r.suppressed_lines
            )?;
        }
        Ok(())
    })?;
    out.csv("spectra.csv", |w| {
        writeln!(w, "iteration,stage,action,n,m,re,im")?;
        for r in &sol.history {
            for (stage, tables) in [("first-order", &r.first_order), ("minimized", &r.minimized)] {
                for (l, t) in tables.iter().enumerate() {
                    write_lines(w, &format!("{},{stage},{},", r.iteration, l + 1), t)?;
                }
            }
        }
        Ok(())
    })?;
    out.csv("w_tables.csv", |w| {
        writeln!(w, "row,n,m,re,im")?;
        for (j, t) in sol.w_tables.iter().enumerate() {
            write_lines(w, &format!("{j},"), t)?;
        }
        Ok(())
    })?;
    if let Some(theta) = &sol.theta {
        out.csv("invariant.csv", |w| {
            writeln!(w, "action,n,m,re,im")?;
            for (l, t) in theta.tables.iter().enumerate() {
                write_lines(w, &format!("{},", l + 1), t)?;
            }
            Ok(())
        })?;
    }

    let mut summary = json!({
        "status": sol.status.as_str(),
        "reason": sol.reason,
        "iterations": sol.iterations(),
        "omega": sol.omega(),
        "refined_omega": sol.refined_omega,
        "residual": sol.residual(),
        "side_ratio": sol.history.last().map(|r| r.side_ratio),
        "radii": sol.combination.r,
        "theta0": sol.combination.theta0,
    });
    if sol.status == SolveStatus::Converged {
        out.json("seed.json", &Seed::of(&sol))?;
        let traj = integrate(&model, &state0, 100.0, StepControl::Fixed(0.05))?;
        summary["trajectory_deviation"] = json!(trajectory_deviation(&sol, &traj)?);
        if let Ok(inv) = KamInvariant::from_solution(&sol) {
            let traj = integrate(&model, &state0, 400.0, StepControl::Fixed(0.1))?;
            let plain: Vec<[Complex64; 2]> = traj.states.iter().map(|s| inv.normalized_actions(s)).collect();
            let kam: kamtori::Result<Vec<[Complex64; 2]>> = traj.states.iter().map(|s| inv.values(s)).collect();
            let fluct = |v: &[[Complex64; 2]], l: usize| radius_fluctuation(&v.iter().map(|x| x[l]).collect::<Vec<_>>());
            summary["action_fluctuation"] = json!([fluct(&plain, 0), fluct(&plain, 1)]);
            if let Ok(kam) = kam {
                summary["invariant_fluctuation"] = json!([fluct(&kam, 0), fluct(&kam, 1)]);
            }
        }
    }
    println!(
        "{} after {} iterations, omega = ({:.6}, {:.6}), residual {}",
        sol.status.as_str(),
        sol.iterations(),
        sol.omega()[0],
        sol.omega()[1],
        sol.residual().map_or("-".into(), |r| format!("{:.2}%", 100.0 * r))
    );
    if let Some(reason) = &sol.reason {
        if sol.status != SolveStatus::Converged {
            eprintln!("{reason}");
        }
    }
    out.finish("solve", cfg, sol.status.as_str(), summary)?;
    Ok(Outcome::of(sol.status))
}

fn read_overlay(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading overlay {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(iy), Some(ipy)) = (col("y"), col("py")) else {
        return Err(ConfigError { field: "overlays".into(), message: format!("{} needs y and py columns", path.display()) }.into());
    };
    let mut pts = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        pts.push((rec[iy].trim().parse()?, rec[ipy].trim().parse()?));
    }
    Ok(pts)
}

pub fn poincare(cfg: &RunConfig) -> Result<Outcome> {
    let (model, probes) = cfg.validate_probes()?;
    let overlays: Vec<(String, Vec<(f64, f64)>)> = cfg
        .overlays
        .iter()
        .map(|p| Ok((p.file_stem().map_or("overlay".into(), |s| s.to_string_lossy().into_owned()), read_overlay(p)?)))
        .collect::<Result<_>>()?;
    let mut out = Outputs::create(cfg)?;
    let mut rows: Vec<(String, &'static str, Vec<(f64, f64)>)> = Vec::new();
    let mut summaries = Vec::new();
    let mut outcome = Outcome::Success;
    let mut seed: Option<Solution> = None;
    for (k, &(y0, py0)) in probes.iter().enumerate() {
        let tag = format!("{k},{y0},{py0}");
        let state0 = model.initial_state(cfg.energy, 0.0, y0, py0)?;
        let traj = integrate(&model, &state0, cfg.oracle_t_end, StepControl::Fixed(0.1))?;
        let oracle = poincare_section(&model, &traj, CrossingDirection::IntoPositive).yp();
        let result = match &seed {
            Some(prev) => continue_amplitude(prev, &model, &state0, &cfg.solve),
            None => solve(&model, &state0, &cfg.solve),
        };
        let mut probe = json!({ "y0": y0, "py0": py0, "oracle_points": oracle.len() });
        match result {
            Ok(sol) if sol.status == SolveStatus::Converged => {
                let inv = KamInvariant::from_solution(&sol)?;
                for kind in [ContourKind::ConstantAction, ContourKind::KamInvariant] {
                    let curve = PhaseTorus::level_set(&inv, kind, &state0, cfg.contour_nodes, &cfg.solve.newton())
                        .and_then(|t| t.section(cfg.section_lines));
                    match curve {
                        Ok(curve) => {
                            probe[kind.tag()] = json!({ "points": curve.len(), "oracle_distance": contour_distance(&curve, &oracle) });
                            rows.push((tag.clone(), kind.tag(), curve));
                        }
                        Err(e) => probe[kind.tag()] = json!({ "error": e.to_string() }),
                    }
                }
                probe["status"] = json!("converged");
                seed = Some(sol);
            }
            Ok(sol) => {
                probe["status"] = json!(sol.status.as_str());
                probe["reason"] = json!(sol.reason);
                if outcome == Outcome::Success {
                    outcome = Outcome::of(sol.status);
                }
            }
            Err(e) => {
                probe["status"] = json!("obstructed");
                probe["reason"] = json!(e.to_string());
                if outcome == Outcome::Success {
                    outcome = Outcome::Obstructed;
                }
            }
        }
        rows.push((tag, "oracle", oracle));
        summaries.push(probe);
    }
    out.csv("sections.csv", |w| {
        writeln!(w, "probe,y0,py0,contour,y,py")?;
        for (tag, kind, pts) in &rows {
            for (y, py) in pts {
                writeln!(w, "{tag},{kind},{y:.15e},{py:.15e}")?;
            }
        }
        for (name, pts) in &overlays {
            for (y, py) in pts {
                writeln!(w, ",,,external:{name},{y:.15e},{py:.15e}")?;
            }
        }
        Ok(())
    })?;
    println!("{} probes written to {}", probes.len(), out.dir().display());
    let status = if outcome == Outcome::Success { "ok" } else { "partial" };
    out.finish("poincare", cfg, status, json!({ "probes": summaries }))?;
    Ok(outcome)
}

pub fn scan(cfg: &RunConfig) -> Result<Outcome> {
    let (model, probes) = cfg.validate_probes()?;
    let mut result = scan_boundary(&model, cfg.energy, &probes, &cfg.solve)?;
    if cfg.chaos_t_end > 0.0 {
        result.annotate_irregularity(&model, cfg.chaos_t_end);
    }
    let mut out = Outputs::create(cfg)?;
    for (k, p) in result.probes.iter().enumerate() {
        out.json(&format!("probes/probe_{k:03}.json"), p)?;
    }
    out.csv("scan.csv", |w| result.write_csv(w))?;
    let last = result.probes.iter().rev().find(|p| p.status == SolveStatus::Converged);
    for p in &result.probes {
        println!(
            "p_y0 = {:<8} {:<10} residual {}",
            p.py0,
            p.status.as_str(),
            p.residual.map_or("-".into(), |r| format!("{:.2}%", 100.0 * r))
        );
    }
    if let Some(onset) = result.chaos_onset {
        println!("chaos onset near p_y0 = {onset}");
    }
    let summary = json!({
        "probes": result.probes.len(),
        "converged": result.probes.iter().filter(|p| p.status == SolveStatus::Converged).count(),
        "last_converged_py0": last.map(|p| p.py0),
        "last_converged_residual": last.and_then(|p| p.residual),
        "chaos_onset": result.chaos_onset,
    });
    out.finish("scan", cfg, "ok", summary)?;
    Ok(Outcome::Success)
}
