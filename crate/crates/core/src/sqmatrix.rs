//! The square matrix `M` with `Ż = M Z` on the monomial basis, and its left
//! Jordan chains.
//!
//! Chains come from a graded block diagonalization `S M = B S`, where `S` is
//! the identity on every degree block and `B` couples only monomials with
//! equal diagonal entries. `S` and `B` are built by back-substitution over
//! increasing degree gaps. The rows of `S` belonging to the resonant
//! monomials (those with `M_kk = iμ`) span the left generalized eigenspace,
//! and on that span `M` acts as `B_RR = iμ + N` with `N` nilpotent, so chains
//! are read off by repeated multiplication with `N`.
//!
//! The gauge: `S` vanishes on every resonant column except its own. Each
//! lead row therefore has unit coefficient on its degree-1 monomial and zero
//! coefficient on every other monomial with the same diagonal entry, which
//! includes all `z (z_x z_x*)^a (z_y z_y*)^b` terms.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::ModelSpec;
use crate::error::{Error, Result};
use crate::polyalg::{BasisLayout, TruncPoly};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance for deciding that two diagonal entries coincide.
const RESONANCE_TOL: f64 = 1e-10;

/// Dense `D x D` matrix of `d/dt` on the non-constant monomial basis.
#[derive(Clone, Debug)]
pub struct SquareMatrix {
    layout: Arc<BasisLayout>,
    entries: Vec<Complex64>,
    pub mu_x: f64,
    pub mu_y: f64,
}

impl SquareMatrix {
    pub fn layout(&self) -> &Arc<BasisLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.dim() + j]
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        let d = self.dim();
        &self.entries[i * d..(i + 1) * d]
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.dim()).map(|i| self.entry(i, i)).collect()
    }

    /// The expected diagonal entry `i(e1−e2)μx + i(e3−e4)μy` of a monomial.
    pub fn expected_diagonal(&self, pos: usize) -> Complex64 {
        let e = self.layout.exponents(pos);
        let im = (e[0] as f64 - e[1] as f64) * self.mu_x + (e[2] as f64 - e[3] as f64) * self.mu_y;
        Complex64::new(0.0, im)
    }

    /// Sub-block between degree `di` rows and degree `dj` columns, row-major.
    pub fn block(&self, di: usize, dj: usize) -> Vec<Vec<Complex64>> {
        let (r, c) = (self.layout.block(di), self.layout.block(dj));
        r.map(|i| c.clone().map(|j| self.entry(i, j)).collect()).collect()
    }

    /// Row vector times matrix: `u M`.
    pub fn left_mul(&self, u: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim();
        let mut out = vec![ZERO; d];
        for (i, &ui) in u.iter().enumerate() {
            if ui == ZERO {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.row(i)).skip(i) {
                *o += ui * m;
            }
        }
        out
    }

    /// Largest magnitude of any entry below the graded block diagonal or
    /// off-diagonal inside a degree block.
    pub fn structure_violation(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let (di, dj) = (self.layout.degree(i), self.layout.degree(j));
                if dj < di || (dj == di && i != j) {
                    worst = worst.max(self.entry(i, j).norm());
                }
            }
        }
        worst
    }

    /// Writes `row,col,re,im` for every nonzero entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,re,im")?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = self.entry(i, j);
                if v != ZERO {
                    writeln!(out, "{i},{j},{:.17e},{:.17e}", v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

/// Row `i` is the truncated expansion of `d(m_i)/dt` by the product rule.
pub fn build_square_matrix(model: &ModelSpec, n_s: usize) -> Result<SquareMatrix> {
    if n_s == 0 {
        return Err(Error::InvalidArgument("n_s must be at least 1".into()));
    }
    let layout = BasisLayout::new(4, n_s, false)?;
    let d = layout.len();
    let field: Vec<Vec<(Complex64, [u8; 4], usize)>> = model
        .resonance_field()
        .iter()
        .map(|f| {
            let l = f.layout();
            f.coeffs()
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != ZERO)
                .map(|(pos, c)| {
                    let e = l.exponents(pos);
                    (*c, [e[0], e[1], e[2], e[3]], l.degree(pos))
                })
                .collect()
        })
        .collect();
    let mut entries = vec![ZERO; d * d];
    let mut e = [0u8; 4];
    for i in 0..d {
        let src = layout.exponents(i);
        let deg = layout.degree(i);
        for v in 0..4 {
            let k = src[v];
            if k == 0 {
                continue;
            }
            for (c, fe, fd) in &field[v] {
                let nd = deg - 1 + fd;
                if nd > n_s || nd == 0 {
                    continue;
                }
                for w in 0..4 {
                    e[w] = src[w] + fe[w];
                }
                e[v] -= 1;
                let j = layout.rank_unchecked(&e, nd);
                entries[i * d + j] += c * k as f64;
            }
        }
    }
    Ok(SquareMatrix { layout, entries, mu_x: model.mu_x, mu_y: model.mu_y })
}

/// A left Jordan chain `u_0 .. u_{k-1}` with `u_j M = λ u_j + u_{j+1}`.
#[derive(Clone, Debug)]
pub struct JordanChain {
    pub eigenvalue: Complex64,
    pub rows: Vec<TruncPoly>,
}

impl JordanChain {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `‖u_j M − λ u_j − u_{j+1}‖ / ‖u_0‖`, maximized over the chain.
    pub fn residual(&self, m: &SquareMatrix) -> f64 {
        let norm = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let scale = norm(self.rows[0].coeffs()).max(1e-300);
        let mut worst = 0.0f64;
        for j in 0..self.rows.len() {
            let um = m.left_mul(self.rows[j].coeffs());
            let r: Vec<Complex64> = um
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let next = self.rows.get(j + 1).map_or(ZERO, |n| n.coeffs()[k]);
                    v - self.eigenvalue * self.rows[j].coeffs()[k] - next
                })
                .collect();
            worst = worst.max(norm(&r) / scale);
        }
        worst
    }
}

/// Jordan-approximate derivative of `w_j`: `λ u_j + u_{j+1}`.
pub fn chain_time_derivative(chain: &JordanChain, j: usize) -> Result<TruncPoly> {
    let row = chain
        .rows
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("row {j} of a chain of length {}", chain.rows.len())))?;
    let mut out = row.scale(chain.eigenvalue);
    if let Some(next) = chain.rows.get(j + 1) {
        out.axpy(ONE, next)?;
    }
    Ok(out)
}

/// The two chains led by `z_x` and `z_y`.
#[derive(Clone, Debug)]
pub struct ChainPair {
    pub chain_x: JordanChain,
    pub chain_y: JordanChain,
}

impl ChainPair {
    /// `w_x0, w_y0, w_x1, w_y1, ...` up to `count` rows; rows past the end
    /// of a chain are zero polynomials.
    pub fn interleaved(&self, count: usize) -> Vec<TruncPoly> {
        let zero = TruncPoly::zero(self.chain_x.rows[0].layout());
        (0..count)
            .map(|k| {
                let chain = if k % 2 == 0 { &self.chain_x } else { &self.chain_y };
                chain.rows.get(k / 2).cloned().unwrap_or_else(|| zero.clone())
            })
            .collect()
    }
}

/// Left generalized eigenspace of one eigenvalue.
#[derive(Clone, Debug)]
pub struct JordanDecomposition {
    pub eigenvalue: Complex64,
    layout: Arc<BasisLayout>,
    /// Basis positions whose diagonal entry equals the eigenvalue.
    pub resonant: Vec<usize>,
    /// Rows of `S` for the resonant positions, each of length `D`.
    basis_rows: Vec<Vec<Complex64>>,
    /// Nilpotent part `N = B_RR − λ`, indexed like `resonant`.
    nilpotent: Vec<Vec<Complex64>>,
}

impl JordanDecomposition {
    pub fn new(m: &SquareMatrix, eigenvalue: Complex64) -> Result<Self> {
        let layout = m.layout.clone();
        let d = m.dim();
        let diag = m.diagonal();
        let same = |a: Complex64, b: Complex64| (a - b).norm() <= RESONANCE_TOL * (1.0 + a.norm());
        let resonant: Vec<usize> = (0..d).filter(|&k| same(diag[k], eigenvalue)).collect();
        if resonant.is_empty() {
            return Err(Error::InvalidArgument(format!("{eigenvalue} is not on the diagonal of M")));
        }
        let mut is_res = vec![usize::MAX; d];
        for (slot, &k) in resonant.iter().enumerate() {
            is_res[k] = slot;
        }

        // rows of S and B restricted to resonant rows, full column range
        let nr = resonant.len();
        let mut s = vec![vec![ZERO; d]; nr];
        let mut b = vec![vec![ZERO; d]; nr];
        for (slot, &i) in resonant.iter().enumerate() {
            s[slot][i] = ONE;
            b[slot][i] = diag[i];
        }
        let max_deg = layout.n_s();
        for gap in 1..max_deg {
            for (slot, &i) in resonant.iter().enumerate() {
                let di = layout.degree(i);
                if di + gap > max_deg {
                    continue;
                }
                for j in layout.block(di + gap) {
                    let mut rhs = -m.entry(i, j);
                    for dk in di + 1..di + gap {
                        for k in layout.block(dk) {
                            let mkj = m.entry(k, j);
                            if mkj != ZERO {
                                rhs -= s[slot][k] * mkj;
                            }
                            let bik = b[slot][k];
                            if bik != ZERO {
                                // B is nonzero only on resonant columns
                                rhs += bik * s[is_res[k]][j];
                            }
                        }
                    }
                    let gap_value = diag[j] - diag[i];
                    if same(diag[j], diag[i]) {
                        b[slot][j] = -rhs;
                    } else {
                        if gap_value.norm() < 1e-8 {
                            return Err(Error::SingularChain {
                                degree: di + gap,
                                reason: format!("near-resonant divisor {gap_value}"),
                            });
                        }
                        s[slot][j] = rhs / gap_value;
                    }
                }
            }
        }
        let nilpotent = (0..nr)
            .map(|a| resonant.iter().enumerate().map(|(bb, &k)| if a == bb { b[a][k] - eigenvalue } else { b[a][k] }).collect())
            .collect();
        Ok(Self { eigenvalue, layout, resonant, basis_rows: s, nilpotent })
    }

    pub fn dimension(&self) -> usize {
        self.resonant.len()
    }

    fn slot_of(&self, pos: usize) -> Option<usize> {
        self.resonant.iter().position(|&k| k == pos)
    }

    fn combine(&self, coeffs: &[Complex64]) -> Result<TruncPoly> {
        let d = self.layout.len();
        let mut out = vec![ZERO; d];
        for (c, row) in coeffs.iter().zip(&self.basis_rows) {
            if *c == ZERO {
                continue;
            }
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
        TruncPoly::from_coeffs(&self.layout, out)
    }

    fn apply_nilpotent(&self, c: &[Complex64]) -> Vec<Complex64> {
        let nr = self.dimension();
        let mut out = vec![ZERO; nr];
        for (a, ca) in c.iter().enumerate() {
            if *ca == ZERO {
                continue;
            }
            for (o, n) in out.iter_mut().zip(&self.nilpotent[a]) {
                *o += ca * n;
            }
        }
        out
    }

    /// The chain whose lead row has unit coefficient on the monomial at `pos`.
    pub fn chain_from(&self, pos: usize) -> Result<JordanChain> {
        let slot = self
            .slot_of(pos)
            .ok_or_else(|| Error::InvalidArgument(format!("position {pos} is not resonant")))?;
        let mut c = vec![ZERO; self.dimension()];
        c[slot] = ONE;
        let mut rows = Vec::new();
        let scale = self.nilpotent.iter().flatten().map(|v| v.norm()).fold(1.0, f64::max);
        for _ in 0..=self.dimension() {
            if c.iter().all(|v| v.norm() <= 1e-14 * scale) {
                break;
            }
            rows.push(self.combine(&c)?);
            c = self.apply_nilpotent(&c);
        }
        Ok(JordanChain { eigenvalue: self.eigenvalue, rows })
    }

    /// Chain lengths of the full eigenspace, longest first, from the ranks
    /// of the powers of the nilpotent part.
    pub fn chain_lengths(&self) -> Vec<usize> {
        let nr = self.dimension();
        let n = DMatrix::from_fn(nr, nr, |a, b| self.nilpotent[a][b]);
        let rank = |m: &DMatrix<Complex64>| {
            let sv = m.clone().svd(false, false).singular_values;
            let top = sv.iter().cloned().fold(0.0, f64::max);
            if top == 0.0 {
                return 0;
            }
            sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count()
        };
        let mut ranks = vec![nr];
        let mut p = DMatrix::<Complex64>::identity(nr, nr);
        while *ranks.last().unwrap() > 0 {
            p = &p * &n;
            ranks.push(rank(&p));
            if ranks.len() > nr + 1 {
                break;
            }
        }
        // chains of length >= k: rank(N^{k-1}) - rank(N^k)
        let at_least: Vec<usize> = ranks.windows(2).map(|w| w[0] - w[1]).collect();
        let mut lengths = Vec::new();
        for k in (1..=at_least.len()).rev() {
            let longer = at_least.get(k).copied().unwrap_or(0);
            for _ in 0..at_least[k - 1].saturating_sub(longer) {
                lengths.push(k);
            }
        }
        lengths
    }

    /// Remove the components along every other resonant lead, so the
    /// covector has zero coefficient on all resonant monomials except `pos`.
    pub fn gauge_project(&self, u: &TruncPoly, pos: usize) -> Result<TruncPoly> {
        let mut out = u.coeffs().to_vec();
        for (slot, &k) in self.resonant.iter().enumerate() {
            if k == pos {
                continue;
            }
            let c = u.coeffs()[k];
            if c == ZERO {
                continue;
            }
            for (o, r) in out.iter_mut().zip(&self.basis_rows[slot]) {
                *o -= c * r;
            }
        }
        TruncPoly::from_coeffs(&self.layout, out)
    }
}

/// Gauged chains led by `z_x` (eigenvalue `iμ_x`) and `z_y` (eigenvalue `iμ_y`).
pub fn chain_pair(m: &SquareMatrix) -> Result<ChainPair> {
    let px = m.layout.index_of(&[1, 0, 0, 0])?;
    let py = m.layout.index_of(&[0, 0, 1, 0])?;
    let dx = JordanDecomposition::new(m, Complex64::new(0.0, m.mu_x))?;
    let chain_x = dx.chain_from(px)?;
    let chain_y = if (m.mu_x - m.mu_y).abs() < RESONANCE_TOL {
        dx.chain_from(py)?
    } else {
        JordanDecomposition::new(m, Complex64::new(0.0, m.mu_y))?.chain_from(py)?
    };
    Ok(ChainPair { chain_x, chain_y })
}

/// Chain pair for eigenvalue `iμ` (both linear frequencies equal to `μ`).
pub fn jordan_chains(m: &SquareMatrix, mu: f64) -> Result<ChainPair> {
    if (m.mu_x - mu).abs() > RESONANCE_TOL || (m.mu_y - mu).abs() > RESONANCE_TOL {
        return Err(Error::InvalidArgument(format!(
            "μ = {mu} does not match the linear frequencies ({}, {})",
            m.mu_x, m.mu_y
        )));
    }
    chain_pair(m)
}
