//! Linear combinations of chain rows: the small-amplitude bootstrap and the
//! constrained least-squares minimization of the fluctuation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::polyalg::real_to_resonance;
use crate::sqmatrix::ChainPair;
use crate::torusmap::{Combination, FourierTable};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Main lines of the two actions.
pub const MAIN_LINES: [(i32, i32); 2] = [(1, 0), (0, 1)];

/// Largest condition number of the bordered system accepted by
/// [`minimize_fluctuation`].
pub const MAX_CONDITION: f64 = 1e12;

/// Result of the bootstrap eigenproblem.
#[derive(Clone, Debug)]
pub struct Bootstrap {
    pub combination: Combination,
    /// Eigenvalues `iφ_l` in the order of the combination rows.
    pub eigenvalues: [Complex64; 2],
    /// `‖(P⁻¹Q − iφ) A‖ / ‖A‖` per eigenpair.
    pub residuals: [f64; 2],
}

/// Bootstrap from the chain rows at `state0`: with
/// `P = [[w_x0, w_y0], [w_x1, w_y1]]` and `Q = [[w_x1, w_y1], [w_x2, w_y2]]`
/// the eigenvectors of `P⁻¹Q` give the coefficients of `v = a_1 w_x0 + a_2 w_y0`
/// and the eigenvalues `iφ` the frequency shifts `ω = μ + Re φ`.
/// Actions are ordered by increasing frequency and scaled to unit radius.
pub fn initial_combination(chains: &ChainPair, state0: &State) -> Result<Bootstrap> {
    let mu = chains.chain_x.eigenvalue.im;
    if (chains.chain_x.eigenvalue - chains.chain_y.eigenvalue).norm() > 1e-12 {
        return Err(Error::Bootstrap("chains do not share an eigenvalue".into()));
    }
    let rows = chains.interleaved(6);
    let layout = rows[0].layout().clone();
    let m = layout.monomial_values(&real_to_resonance(state0));
    let w: Vec<Complex64> = rows.iter().map(|p| p.dot_values(&m)).collect();
    let (p00, p01, p10, p11) = (w[0], w[1], w[2], w[3]);
    let (q00, q01, q10, q11) = (w[2], w[3], w[4], w[5]);
    let det = p00 * p11 - p01 * p10;
    let scale = (p00.norm() * p11.norm()).max(p01.norm() * p10.norm());
    if scale == 0.0 || det.norm() <= 1e-12 * scale {
        return Err(Error::Bootstrap(format!(
            "chain matrix at the initial state is singular (|det| = {:e}); start from a smaller amplitude and continue",
            det.norm()
        )));
    }
    // K = P^{-1} Q
    let inv = [[p11 / det, -p01 / det], [-p10 / det, p00 / det]];
    let k = [
        [inv[0][0] * q00 + inv[0][1] * q10, inv[0][0] * q01 + inv[0][1] * q11],
        [inv[1][0] * q00 + inv[1][1] * q10, inv[1][0] * q01 + inv[1][1] * q11],
    ];
    let tr = k[0][0] + k[1][1];
    let dk = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    let disc = (tr * tr * 0.25 - dk).sqrt();
    let lambdas = [tr * 0.5 + disc, tr * 0.5 - disc];
    let kscale = k.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
    if disc.norm() <= 1e-12 * kscale.max(1e-300) {
        return Err(Error::Bootstrap("degenerate frequency shifts; the two actions cannot be separated".into()));
    }
    let mut pairs: Vec<(Complex64, [Complex64; 2])> = lambdas
        .iter()
        .map(|&lam| {
            let a1 = [k[0][1], lam - k[0][0]];
            let a2 = [lam - k[1][1], k[1][0]];
            let n1 = a1[0].norm_sqr() + a1[1].norm_sqr();
            let n2 = a2[0].norm_sqr() + a2[1].norm_sqr();
            (lam, if n1 >= n2 { a1 } else { a2 })
        })
        .collect();
    // iφ = λ, so ω = μ + Re φ = μ + Im λ
    pairs.sort_by(|a, b| a.0.im.total_cmp(&b.0.im));

    let mut a = [Vec::new(), Vec::new()];
    let mut r = [0.0; 2];
    let mut theta0 = [0.0; 2];
    let mut omega = [0.0; 2];
    let mut residuals = [0.0; 2];
    let mut eigenvalues = [ZERO; 2];
    for (l, (lam, vec)) in pairs.iter().enumerate() {
        let v = vec[0] * w[0] + vec[1] * w[1];
        if v.norm() == 0.0 {
            return Err(Error::Bootstrap("eigenvector gives a vanishing action".into()));
        }
        let s = 1.0 / v.norm();
        let coeffs = [vec[0] * s, vec[1] * s];
        let res = [
            k[0][0] * coeffs[0] + k[0][1] * coeffs[1] - lam * coeffs[0],
            k[1][0] * coeffs[0] + k[1][1] * coeffs[1] - lam * coeffs[1],
        ];
        residuals[l] = (res[0].norm_sqr() + res[1].norm_sqr()).sqrt()
            / (coeffs[0].norm_sqr() + coeffs[1].norm_sqr()).sqrt();
        a[l] = coeffs.to_vec();
        r[l] = 1.0;
        theta0[l] = v.arg();
        omega[l] = mu + (-I * lam).re;
        eigenvalues[l] = *lam;
    }
    let combination = Combination { a, rows: rows[0..2].to_vec(), r, omega, theta0 };
    Ok(Bootstrap { combination, eigenvalues, residuals })
}

/// Action spectra and the fluctuation `g0` of a combination.
#[derive(Clone, Debug)]
pub struct FluctuationReport {
    pub g0: f64,
    /// Off-main power of each action.
    pub side_power: [f64; 2],
    /// Largest off-main line relative to the main line, per action.
    pub largest_side_ratio: [f64; 2],
    pub tables: [FourierTable; 2],
}

impl FluctuationReport {
    /// Writes `action,n,m,frequency,abs` for lines above `floor`.
    pub fn write_csv<W: Write>(&self, mut out: W, omega: [f64; 2], floor: f64) -> std::io::Result<()> {
        writeln!(out, "action,n,m,frequency,abs")?;
        for (l, t) in self.tables.iter().enumerate() {
            for (n, m, c) in t.top_lines(usize::MAX) {
                if c.norm() < floor {
                    break;
                }
                let f = n as f64 * omega[0] + m as f64 * omega[1];
                writeln!(out, "{},{n},{m},{f:.12},{:.12e}", l + 1, c.norm())?;
            }
        }
        Ok(())
    }
}

/// Spectra `ṽ_l = Σ_j a_lj w̃_j` and their fluctuation.
pub fn fluctuation_of(tables: &[FourierTable], a: &[Vec<Complex64>; 2]) -> Result<FluctuationReport> {
    if tables.is_empty() || a[0].len() != tables.len() || a[1].len() != tables.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} tables against coefficient rows of {} and {}",
            tables.len(),
            a[0].len(),
            a[1].len()
        )));
    }
    let window = tables[0].window();
    let mut out = [FourierTable::zeros(window), FourierTable::zeros(window)];
    for l in 0..2 {
        for (coef, t) in a[l].iter().zip(tables) {
            out[l].axpy(*coef, t)?;
        }
    }
    let mut side_power = [0.0; 2];
    let mut ratio = [0.0; 2];
    for l in 0..2 {
        let main = MAIN_LINES[l];
        side_power[l] =
            out[l].lines().filter(|x| (x.0, x.1) != main).map(|x| x.2.norm_sqr()).sum::<f64>();
        ratio[l] = out[l].largest_side_ratio(main);
    }
    Ok(FluctuationReport { g0: side_power[0] + side_power[1], side_power, largest_side_ratio: ratio, tables: out })
}

/// Hermitian Gram matrix of the tables with line `exclude` left out.
pub fn gram_matrix(tables: &[FourierTable], exclude: (i32, i32)) -> DMatrix<Complex64> {
    let n = tables.len();
    let lines: Vec<Vec<Complex64>> =
        tables.iter().map(|t| t.lines().filter(|x| (x.0, x.1) != exclude).map(|x| x.2).collect()).collect();
    DMatrix::from_fn(n, n, |j, k| lines[j].iter().zip(&lines[k]).map(|(a, b)| a.conj() * b).sum())
}

/// Minimize `a^H F a` subject to `c^T a = 1` through the bordered system
/// `[[F, -c̄], [c^T, 0]] [a; ν] = [0; 1]`. Unlike `F⁻¹c̄` this stays
/// well posed when `F` is singular but the constraint picks out a unique
/// minimizer, as in the linear limit where every row has a single side line.
fn constrained_minimum(tables: &[FourierTable], main: (i32, i32)) -> Result<Vec<Complex64>> {
    let n = tables.len();
    let c: Vec<Complex64> = tables.iter().map(|t| t.get(main.0, main.1)).collect();
    if n == 1 {
        if c[0] == ZERO {
            return Err(Error::RankDeficient { condition: f64::INFINITY });
        }
        return Ok(vec![1.0 / c[0]]);
    }
    let f = gram_matrix(tables, main);
    // Jacobi scaling so rows of very different magnitude compare fairly
    let d: Vec<f64> = (0..n)
        .map(|j| {
            let s = f[(j, j)].re.max(c[j].norm_sqr());
            if s > 0.0 { 1.0 / s.sqrt() } else { 1.0 }
        })
        .collect();
    let mut k = DMatrix::from_element(n + 1, n + 1, ZERO);
    for j in 0..n {
        for l in 0..n {
            k[(j, l)] = f[(j, l)] * d[j] * d[l];
        }
        k[(j, n)] = -(c[j] * d[j]).conj();
        k[(n, j)] = c[j] * d[j];
    }
    let sv = k.clone().singular_values();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let mut rhs = DVector::from_element(n + 1, ZERO);
    rhs[n] = Complex64::new(1.0, 0.0);
    let y = k.lu().solve(&rhs).ok_or(Error::RankDeficient { condition })?;
    Ok((0..n).map(|j| y[j] * d[j]).collect())
}

/// Minimize `g0` subject to unit main lines `ṽ_1(1,0) = ṽ_2(0,1) = 1`.
pub fn minimize_fluctuation(tables: &[FourierTable]) -> Result<([Vec<Complex64>; 2], FluctuationReport)> {
    if tables.is_empty() {
        return Err(Error::InvalidArgument("no tables to combine".into()));
    }
    if tables.iter().any(|t| t.window() != tables[0].window()) {
        return Err(Error::LayoutMismatch("tables must share a window".into()));
    }
    let a = [constrained_minimum(tables, MAIN_LINES[0])?, constrained_minimum(tables, MAIN_LINES[1])?];
    let report = fluctuation_of(tables, &a)?;
    Ok((a, report))
}

/// Distance between two coefficient sets, each row taken up to a complex
/// factor (actions are only defined up to normalization): the largest over
/// rows of `min_c ‖b_l − c a_l‖ / ‖b_l‖`.
pub fn coefficient_distance(a: &[Vec<Complex64>; 2], b: &[Vec<Complex64>; 2]) -> f64 {
    let mut worst = 0.0f64;
    for l in 0..2 {
        if a[l].len() != b[l].len() {
            return f64::INFINITY;
        }
        let aa: f64 = a[l].iter().map(|x| x.norm_sqr()).sum();
        let bb: f64 = b[l].iter().map(|x| x.norm_sqr()).sum();
        if aa == 0.0 || bb == 0.0 {
            return f64::INFINITY;
        }
        let ab: Complex64 = a[l].iter().zip(&b[l]).map(|(x, y)| x.conj() * y).sum();
        let scale = ab / aa;
        let residual: f64 = a[l].iter().zip(&b[l]).map(|(x, y)| (y - scale * x).norm_sqr()).sum();
        worst = worst.max((residual / bb).sqrt());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn table(lines: &[(i32, i32, Complex64)]) -> FourierTable {
        let mut t = FourierTable::zeros(3);
        for &(n, m, v) in lines {
            t.set(n, m, v);
        }
        t
    }

    #[test]
    fn coefficient_distance_ignores_row_factors() {
        let a = [vec![c(1.0, 2.0), c(0.5, 0.0)], vec![c(0.0, 1.0), c(3.0, -1.0)]];
        let b = [a[0].iter().map(|x| x * c(0.3, 0.7)).collect(), a[1].iter().map(|x| x * c(-2.0, 0.0)).collect()];
        assert!(coefficient_distance(&a, &b) < 1e-15);
        let mut d = b.clone();
        d[1][0] += c(0.01, 0.0);
        assert!(coefficient_distance(&a, &d) > 1e-4);
    }

    #[test]
    fn single_table_is_pure_normalization() {
        let t = table(&[(1, 0, c(0.5, 0.5)), (0, 1, c(2.0, 0.0)), (2, -1, c(0.1, 0.0))]);
        let (a, rep) = minimize_fluctuation(std::slice::from_ref(&t)).unwrap();
        assert!((a[0][0] - 1.0 / c(0.5, 0.5)).norm() < 1e-15);
        assert!((a[1][0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((rep.tables[0].get(1, 0) - 1.0).norm() < 1e-15);
    }

    #[test]
    fn single_line_tables_have_no_fluctuation() {
        let t1 = table(&[(1, 0, c(0.9, 0.1))]);
        let t2 = table(&[(0, 1, c(0.0, 1.3))]);
        let a = [vec![1.0 / c(0.9, 0.1), ZERO], vec![ZERO, 1.0 / c(0.0, 1.3)]];
        assert!(fluctuation_of(&[t1, t2], &a).unwrap().g0 < 1e-30);
    }

    #[test]
    fn table_one_lines_separate_the_actions() {
        // magnitudes of the six strongest lines of w_x0 and w_y0 along the
        // reference orbit; relative phases are arbitrary here
        let wx = table(&[
            (1, 0, c(0.972, 0.0)),
            (0, 1, c(0.0, 0.049)),
            (2, -1, c(0.013, 0.0)),
            (0, 0, c(0.012, 0.0)),
            (2, 0, c(0.006, 0.0)),
        ]);
        let wy = table(&[
            (1, 0, c(1.089, 0.0)),
            (0, 1, c(0.0, -0.164)),
            (2, -1, c(0.043, 0.0)),
            (0, 0, c(0.014, 0.0)),
            (2, 0, c(0.006, 0.0)),
            (3, -1, c(0.005, 0.0)),
        ]);
        let (_, rep) = minimize_fluctuation(&[wx, wy]).unwrap();
        assert!(rep.largest_side_ratio[0] < 0.1, "{:?}", rep.largest_side_ratio);
        assert!(rep.largest_side_ratio[1] < 0.5, "{:?}", rep.largest_side_ratio);
    }
}
