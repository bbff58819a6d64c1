//! Truncated multivariate polynomials with complex coefficients.
//!
//! Monomials are graded by total degree. Inside a degree block the first
//! variable's exponent runs from high to low, and the remaining variables
//! follow the same rule recursively. For the four resonance variables
//! `(z_x, z_x*, z_y, z_y*)` the degree-2 block therefore reads
//! `z_x², z_x z_x*, z_x z_y, z_x z_y*, z_x*², z_x* z_y, z_x* z_y*, z_y², z_y z_y*, z_y*²`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Binomial coefficient, exact for the small arguments used here.
fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Number of monomials of exact degree `d` in `n_vars` variables.
pub fn block_size(n_vars: usize, d: usize) -> usize {
    binom(d + n_vars - 1, n_vars - 1)
}

/// Number of non-constant monomials of total degree `<= n_s`.
pub fn basis_dimension(n_vars: usize, n_s: usize) -> usize {
    binom(n_s + n_vars, n_vars) - 1
}

/// Monomial exponents together with their total degree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MonomialIndex {
    pub exponents: Vec<u8>,
    pub degree: usize,
}

impl MonomialIndex {
    pub fn new(exponents: Vec<u8>) -> Self {
        let degree = exponents.iter().map(|&e| e as usize).sum();
        Self { exponents, degree }
    }
}

/// Monomial ordering and per-degree block structure for one basis.
pub struct BasisLayout {
    n_vars: usize,
    n_s: usize,
    includes_constant: bool,
    /// Flat exponent table, stride `n_vars`.
    exps: Vec<u8>,
    /// `offsets[d]` is the position of the first monomial of degree `d`
    /// (for `d` below the first stored degree it equals 0).
    offsets: Vec<usize>,
    /// `cum[v][k]` = number of monomials of degree `<= k` in `v` variables.
    cum: Vec<Vec<usize>>,
}

impl fmt::Debug for BasisLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisLayout")
            .field("n_vars", &self.n_vars)
            .field("n_s", &self.n_s)
            .field("includes_constant", &self.includes_constant)
            .field("len", &self.len())
            .finish()
    }
}

impl PartialEq for BasisLayout {
    fn eq(&self, other: &Self) -> bool {
        self.n_vars == other.n_vars
            && self.n_s == other.n_s
            && self.includes_constant == other.includes_constant
    }
}

impl BasisLayout {
    pub fn new(n_vars: usize, n_s: usize, includes_constant: bool) -> Result<Arc<Self>> {
        if n_vars == 0 || n_vars > 16 {
            return Err(Error::InvalidArgument(format!("n_vars = {n_vars} out of range")));
        }
        if n_s > 64 {
            return Err(Error::InvalidArgument(format!("n_s = {n_s} out of range")));
        }
        let first = if includes_constant { 0 } else { 1 };
        let mut exps = Vec::new();
        let mut offsets = vec![0usize; n_s + 2];
        let mut count = 0usize;
        for d in 0..=n_s {
            offsets[d] = count;
            if d < first {
                continue;
            }
            let mut cur = vec![0u8; n_vars];
            push_degree(&mut exps, &mut cur, 0, d);
            count += block_size(n_vars, d);
        }
        offsets[n_s + 1] = count;
        let cum = (0..=n_vars)
            .map(|v| (0..=n_s).map(|k| if v == 0 { 1 } else { binom(k + v, v) }).collect())
            .collect();
        let layout = Self { n_vars, n_s, includes_constant, exps, offsets, cum };
        debug_assert_eq!(layout.exps.len(), count * n_vars);
        Ok(Arc::new(layout))
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn includes_constant(&self) -> bool {
        self.includes_constant
    }

    /// Number of stored monomials.
    pub fn len(&self) -> usize {
        self.exps.len() / self.n_vars
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn exponents(&self, pos: usize) -> &[u8] {
        &self.exps[pos * self.n_vars..(pos + 1) * self.n_vars]
    }

    pub fn degree(&self, pos: usize) -> usize {
        self.exponents(pos).iter().map(|&e| e as usize).sum()
    }

    /// Positions of the degree-`d` block.
    pub fn block(&self, d: usize) -> std::ops::Range<usize> {
        if d > self.n_s || (d == 0 && !self.includes_constant) {
            return 0..0;
        }
        self.offsets[d]..self.offsets[d + 1]
    }

    /// Positions of all monomials with degree `<= d`.
    pub fn up_to(&self, d: usize) -> std::ops::Range<usize> {
        0..self.offsets[d.min(self.n_s) + 1]
    }

    pub fn exponents_of(&self, pos: usize) -> Result<MonomialIndex> {
        if pos >= self.len() {
            return Err(Error::OutOfBasis(format!("position {pos} >= {}", self.len())));
        }
        Ok(MonomialIndex::new(self.exponents(pos).to_vec()))
    }

    pub fn index_of(&self, exponents: &[u8]) -> Result<usize> {
        if exponents.len() != self.n_vars {
            return Err(Error::OutOfBasis(format!(
                "expected {} exponents, got {}",
                self.n_vars,
                exponents.len()
            )));
        }
        let deg: usize = exponents.iter().map(|&e| e as usize).sum();
        if deg > self.n_s || (deg == 0 && !self.includes_constant) {
            return Err(Error::OutOfBasis(format!("degree {deg} not in basis (n_s = {})", self.n_s)));
        }
        Ok(self.rank_unchecked(exponents, deg))
    }

    /// Position of a monomial already known to lie in the basis.
    #[inline]
    pub(crate) fn rank_unchecked(&self, exponents: &[u8], deg: usize) -> usize {
        let mut r = self.offsets[deg];
        let mut rem = deg;
        let n = self.n_vars;
        for (idx, &e) in exponents[..n - 1].iter().enumerate() {
            let e = e as usize;
            if e < rem {
                // monomials whose exponent in this slot exceeds `e`
                let vars_left = n - idx - 1;
                r += self.cum[vars_left][rem - e - 1];
            }
            rem -= e;
        }
        r
    }

    /// Values of every stored monomial at `point`.
    pub fn monomial_values(&self, point: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(point.len(), self.n_vars);
        let mut pows = vec![Complex64::new(1.0, 0.0); self.n_vars * (self.n_s + 1)];
        for v in 0..self.n_vars {
            for k in 1..=self.n_s {
                pows[v * (self.n_s + 1) + k] = pows[v * (self.n_s + 1) + k - 1] * point[v];
            }
        }
        (0..self.len())
            .map(|pos| {
                let mut acc = Complex64::new(1.0, 0.0);
                for (v, &e) in self.exponents(pos).iter().enumerate() {
                    if e > 0 {
                        acc *= pows[v * (self.n_s + 1) + e as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

fn push_degree(out: &mut Vec<u8>, cur: &mut [u8], var: usize, rem: usize) {
    let n = cur.len();
    if var == n - 1 {
        cur[var] = rem as u8;
        out.extend_from_slice(cur);
        return;
    }
    for e in (0..=rem).rev() {
        cur[var] = e as u8;
        push_degree(out, cur, var + 1, rem - e);
    }
    cur[var] = 0;
}

/// A polynomial truncated at the layout's maximum degree.
#[derive(Clone)]
pub struct TruncPoly {
    layout: Arc<BasisLayout>,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for TruncPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = f.debug_map();
        for (pos, c) in self.coeffs.iter().enumerate() {
            if c.norm() > 0.0 {
                terms.entry(&self.layout.exponents(pos), c);
            }
        }
        terms.finish()
    }
}

impl PartialEq for TruncPoly {
    fn eq(&self, other: &Self) -> bool {
        *self.layout == *other.layout && self.coeffs == other.coeffs
    }
}

impl TruncPoly {
    pub fn zero(layout: &Arc<BasisLayout>) -> Self {
        Self { layout: layout.clone(), coeffs: vec![ZERO; layout.len()] }
    }

    pub fn from_coeffs(layout: &Arc<BasisLayout>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} coefficients for a basis of {}",
                coeffs.len(),
                layout.len()
            )));
        }
        Ok(Self { layout: layout.clone(), coeffs })
    }

    pub fn monomial(layout: &Arc<BasisLayout>, exponents: &[u8], coeff: Complex64) -> Result<Self> {
        let mut p = Self::zero(layout);
        let pos = layout.index_of(exponents)?;
        p.coeffs[pos] = coeff;
        Ok(p)
    }

    /// The coordinate polynomial of variable `var`.
    pub fn variable(layout: &Arc<BasisLayout>, var: usize) -> Result<Self> {
        let mut e = vec![0u8; layout.n_vars()];
        e[var] = 1;
        Self::monomial(layout, &e, Complex64::new(1.0, 0.0))
    }

    pub fn constant(layout: &Arc<BasisLayout>, c: Complex64) -> Result<Self> {
        Self::monomial(layout, &vec![0u8; layout.n_vars()], c)
    }

    pub fn layout(&self) -> &Arc<BasisLayout> {
        &self.layout
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn coeff(&self, exponents: &[u8]) -> Complex64 {
        match self.layout.index_of(exponents) {
            Ok(pos) => self.coeffs[pos],
            Err(_) => ZERO,
        }
    }

    /// Highest degree carrying a nonzero coefficient, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|c| c.norm() > 0.0).map(|pos| self.layout.degree(pos))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm() == 0.0)
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if *self.layout != *other.layout {
            return Err(Error::LayoutMismatch(format!("{:?} vs {:?}", self.layout, other.layout)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self { layout: self.layout.clone(), coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Self { layout: self.layout.clone(), coeffs })
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { layout: self.layout.clone(), coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: Complex64, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
        Ok(())
    }

    /// Product with every monomial above the truncation degree dropped.
    pub fn mul_trunc(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let layout = &self.layout;
        let n = layout.n_vars();
        let n_s = layout.n_s();
        let mut out = vec![ZERO; layout.len()];
        let mut sum = vec![0u8; n];
        let nz_b: Vec<usize> = (0..other.coeffs.len()).filter(|&j| other.coeffs[j] != ZERO).collect();
        for (i, &ca) in self.coeffs.iter().enumerate() {
            if ca == ZERO {
                continue;
            }
            let da = layout.degree(i);
            let ea = layout.exponents(i);
            let limit = layout.up_to(n_s - da).end;
            for &j in nz_b.iter().take_while(|&&j| j < limit) {
                let eb = layout.exponents(j);
                for v in 0..n {
                    sum[v] = ea[v] + eb[v];
                }
                let db = layout.degree(j);
                let pos = layout.rank_unchecked(&sum, da + db);
                out[pos] += ca * other.coeffs[j];
            }
        }
        Ok(Self { layout: layout.clone(), coeffs: out })
    }

    /// Term-wise derivative. The result lives in the constant-including
    /// layout of the same variable count and truncation degree.
    pub fn partial_derivative(&self, var: usize) -> Result<Self> {
        let n = self.layout.n_vars();
        if var >= n {
            return Err(Error::InvalidArgument(format!("variable {var} >= {n}")));
        }
        let target = if self.layout.includes_constant() {
            self.layout.clone()
        } else {
            BasisLayout::new(n, self.layout.n_s(), true)?
        };
        let mut out = vec![ZERO; target.len()];
        let mut e = vec![0u8; n];
        for (pos, c) in self.coeffs.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            let src = self.layout.exponents(pos);
            if src[var] == 0 {
                continue;
            }
            e.copy_from_slice(src);
            let k = e[var];
            e[var] -= 1;
            let d = self.layout.degree(pos) - 1;
            out[target.rank_unchecked(&e, d)] += c * k as f64;
        }
        Ok(Self { layout: target, coeffs: out })
    }

    pub fn evaluate(&self, point: &[Complex64]) -> Complex64 {
        let vals = self.layout.monomial_values(point);
        self.dot_values(&vals)
    }

    /// Evaluate against precomputed monomial values of a layout that
    /// starts with this polynomial's layout (a larger `n_s` is fine as
    /// long as both include or both exclude the constant).
    #[inline]
    pub fn dot_values(&self, values: &[Complex64]) -> Complex64 {
        self.coeffs.iter().zip(values).fold(ZERO, |acc, (c, v)| acc + c * v)
    }

    /// Re-express in another layout with the same variable count. Terms that do
    /// not fit are dropped; a dropped constant is reported through the return flag.
    pub fn embed(&self, target: &Arc<BasisLayout>) -> Result<(Self, bool)> {
        if target.n_vars() != self.layout.n_vars() {
            return Err(Error::LayoutMismatch("variable count differs".into()));
        }
        let mut out = vec![ZERO; target.len()];
        let mut dropped_constant = false;
        for (pos, c) in self.coeffs.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            let e = self.layout.exponents(pos);
            let d = self.layout.degree(pos);
            if d > target.n_s() {
                continue;
            }
            if d == 0 && !target.includes_constant() {
                dropped_constant = true;
                continue;
            }
            out[target.rank_unchecked(e, d)] += c;
        }
        Ok((Self { layout: target.clone(), coeffs: out }, dropped_constant))
    }

    /// Swap conjugate variable pairs `(0,1), (2,3), ...` and conjugate the
    /// coefficients: the polynomial `q` with `q(z) = conj(p(z))` when the
    /// odd variables are the complex conjugates of the even ones.
    pub fn conjugate_pairs(&self) -> Self {
        let n = self.layout.n_vars();
        let mut out = vec![ZERO; self.coeffs.len()];
        let mut e = vec![0u8; n];
        for (pos, c) in self.coeffs.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            e.copy_from_slice(self.layout.exponents(pos));
            for k in (0..n.saturating_sub(1)).step_by(2) {
                e.swap(k, k + 1);
            }
            out[self.layout.rank_unchecked(&e, self.layout.degree(pos))] += c.conj();
        }
        Self { layout: self.layout.clone(), coeffs: out }
    }

    /// Compose with polynomials for every variable: `p(q_0, .., q_{n-1})`,
    /// truncated in the layout of the substituted polynomials.
    pub fn substitute(&self, subs: &[TruncPoly]) -> Result<TruncPoly> {
        let n = self.layout.n_vars();
        if subs.len() != n {
            return Err(Error::InvalidArgument(format!("{} substitutions for {n} variables", subs.len())));
        }
        let target = subs[0].layout.clone();
        if !target.includes_constant() {
            return Err(Error::LayoutMismatch("substitution target needs a constant slot".into()));
        }
        for s in subs {
            s.check_same(&subs[0])?;
        }
        let max_e = self.layout.n_s();
        let one = TruncPoly::constant(&target, Complex64::new(1.0, 0.0))?;
        let mut powers: Vec<Vec<TruncPoly>> = Vec::with_capacity(n);
        for s in subs {
            let mut pw = vec![one.clone()];
            for k in 1..=max_e {
                let next = pw[k - 1].mul_trunc(s)?;
                pw.push(next);
            }
            powers.push(pw);
        }
        let mut out = TruncPoly::zero(&target);
        for (pos, c) in self.coeffs.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            let e = self.layout.exponents(pos);
            let mut term = TruncPoly::constant(&target, *c)?;
            for (v, &ev) in e.iter().enumerate() {
                if ev > 0 {
                    term = term.mul_trunc(&powers[v][ev as usize])?;
                }
            }
            out.axpy(Complex64::new(1.0, 0.0), &term)?;
        }
        Ok(out)
    }
}

/// Map real phase-space coordinates `(x, p_x, y, p_y)` to resonance variables
/// `(z_x, z_x*, z_y, z_y*)` with `z = q - i p`.
pub fn real_to_resonance(state: &[f64; 4]) -> [Complex64; 4] {
    let [x, px, y, py] = *state;
    [
        Complex64::new(x, -px),
        Complex64::new(x, px),
        Complex64::new(y, -py),
        Complex64::new(y, py),
    ]
}

/// Inverse of [`real_to_resonance`]. The conjugate slots must agree with the
/// conjugates of the primary slots to within `tol`.
pub fn resonance_to_real(z: &[Complex64; 4], tol: f64) -> Result<[f64; 4]> {
    for k in [0usize, 2] {
        let mismatch = (z[k + 1] - z[k].conj()).norm();
        if mismatch > tol {
            return Err(Error::Consistency(format!(
                "variable pair {k}/{} is not conjugate (mismatch {mismatch:e})",
                k + 1
            )));
        }
    }
    Ok([z[0].re, -z[0].im, z[2].re, -z[2].im])
}
