//! Multivariate probabilists' Hermite polynomial chaos basis for a
//! standard-normal germ.
//!
//! Basis polynomials are un-normalized: `E[Ψ_α²] = ∏_k α_k!`. Indices are
//! graded (ascending total degree) and, inside a grade, sorted in decreasing
//! lexicographic order of the degree tuple, so index 1 is `Y_1`, index 2 is
//! `Y_2`, and so on. Truncating to a lower order is therefore a prefix.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Per-component polynomial degrees of one basis function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(degrees: Vec<usize>) -> Self {
        Self(degrees)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn degrees(&self) -> &[usize] {
        &self.0
    }

    pub fn total_degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `E[Ψ_α²] = ∏ α_k!`.
    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|&d| factorial(d)).product()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, d) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Number of multi-indices of dimension `dim` with total degree at most
/// `degree`, i.e. `(degree + dim)! / (degree! dim!)`. `None` on overflow.
pub fn basis_size(dim: usize, degree: usize) -> Option<usize> {
    // C(degree + dim, dim) built incrementally; each partial product is an
    // exact binomial coefficient so the division is exact.
    let mut acc: usize = 1;
    for i in 1..=dim {
        acc = acc.checked_mul(degree + i)? / i;
    }
    Some(acc)
}

/// Graded polynomial chaos basis `{Ψ_0, …, Ψ_N}`.
#[derive(Debug, Clone)]
pub struct PcBasisSet {
    dim: usize,
    degree: usize,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

/// Generate all multi-indices of dimension `dim` with total degree `≤ degree`.
pub fn generate_basis(dim: usize, degree: usize) -> Result<PcBasisSet> {
    if dim == 0 {
        return Err(Error::InvalidConfig("germ dimension must be at least 1".into()));
    }
    let size = basis_size(dim, degree).ok_or(Error::BasisTooLarge { dim, degree })?;
    // Refuse sizes that could not possibly be allocated.
    if size.checked_mul(dim).is_none_or(|n| n > (1usize << 32)) {
        return Err(Error::BasisTooLarge { dim, degree });
    }
    let mut indices = Vec::with_capacity(size);
    let mut current = vec![0usize; dim];
    for total in 0..=degree {
        push_grade(&mut indices, &mut current, 0, total);
    }
    debug_assert_eq!(indices.len(), size);
    let lookup = indices
        .iter()
        .enumerate()
        .map(|(j, a)| (a.clone(), j))
        .collect();
    Ok(PcBasisSet {
        dim,
        degree,
        indices,
        lookup,
    })
}

// Emits every tuple with the given remaining degree in decreasing
// lexicographic order.
fn push_grade(out: &mut Vec<MultiIndex>, current: &mut [usize], pos: usize, remaining: usize) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        current[pos] = 0;
        return;
    }
    for d in (0..=remaining).rev() {
        current[pos] = d;
        push_grade(out, current, pos + 1, remaining - d);
    }
    current[pos] = 0;
}

/// Probabilists' Hermite polynomial `He_n(y)`.
pub fn eval_univariate(n: usize, y: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => y,
        _ => {
            let (mut prev, mut cur) = (1.0, y);
            for k in 1..n {
                let next = y * cur - k as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Fill `out[0..=n]` with `He_0(y), …, He_n(y)`.
pub fn eval_univariate_all(n: usize, y: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if n >= 1 {
        out[1] = y;
    }
    for k in 1..n {
        out[k + 1] = y * out[k] - k as f64 * out[k - 1];
    }
}

impl PcBasisSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions, `N + 1`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn index(&self, j: usize) -> &MultiIndex {
        &self.indices[j]
    }

    /// Position of a multi-index in the basis, if present.
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// Evaluate every basis function at `y`.
    pub fn eval_all(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_all_into(y, &mut out)?;
        Ok(out)
    }

    /// Allocation-light variant of [`eval_all`](Self::eval_all).
    pub fn eval_all_into(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "germ",
                expected: self.dim,
                actual: y.len(),
            });
        }
        if out.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "basis output",
                expected: self.len(),
                actual: out.len(),
            });
        }
        let stride = self.degree + 1;
        let mut table = vec![0.0; self.dim * stride];
        for (k, &yk) in y.iter().enumerate() {
            eval_univariate_all(self.degree, yk, &mut table[k * stride..(k + 1) * stride]);
        }
        for (slot, alpha) in out.iter_mut().zip(&self.indices) {
            *slot = alpha
                .0
                .iter()
                .enumerate()
                .map(|(k, &d)| table[k * stride + d])
                .product();
        }
        Ok(())
    }

    /// `E[Ψ_a Ψ_b]`.
    pub fn pair_moment(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.indices[a].norm_squared()
        } else {
            0.0
        }
    }

    /// `E[Y_k Ψ_a Ψ_b]`, from `y He_n = He_{n+1} + n He_{n-1}` on component `k`.
    pub fn linear_weighted_moment(&self, k: usize, a: usize, b: usize) -> f64 {
        let (alpha, beta) = (&self.indices[a].0, &self.indices[b].0);
        let mut value = 1.0;
        for m in 0..self.dim {
            if m == k {
                let (n, l) = (alpha[m], beta[m]);
                // E[y He_n He_l] = (n+1)! if l = n+1, n! if l = n-1.
                if l == n + 1 {
                    value *= factorial(n + 1);
                } else if n >= 1 && l == n - 1 {
                    value *= factorial(n);
                } else {
                    return 0.0;
                }
            } else if alpha[m] == beta[m] {
                value *= factorial(alpha[m]);
            } else {
                return 0.0;
            }
        }
        value
    }

    /// Precompute the moment tables used by the control variates.
    pub fn moment_table(&self) -> MomentTable {
        let norms = self.indices.iter().map(MultiIndex::norm_squared).collect();
        let mut linear = vec![Vec::new(); self.dim];
        for (a, alpha) in self.indices.iter().enumerate() {
            for (k, entries) in linear.iter_mut().enumerate() {
                let mut up = alpha.clone();
                up.0[k] += 1;
                if let Some(b) = self.position(&up) {
                    entries.push((a, b, self.linear_weighted_moment(k, a, b)));
                }
                if alpha.0[k] > 0 {
                    let mut down = alpha.clone();
                    down.0[k] -= 1;
                    if let Some(b) = self.position(&down) {
                        entries.push((a, b, self.linear_weighted_moment(k, a, b)));
                    }
                }
            }
        }
        MomentTable { norms, linear }
    }
}

/// Analytic moments `E[Ψ_a Ψ_b]` and `E[Y_k Ψ_a Ψ_b]`.
///
/// The pair moments are diagonal and stored as the vector of norms; the
/// linear moments are stored sparsely as `(a, b, value)` triples per germ
/// component (only neighbours differing by one degree in component `k` are
/// non-zero).
#[derive(Debug, Clone)]
pub struct MomentTable {
    norms: Vec<f64>,
    linear: Vec<Vec<(usize, usize, f64)>>,
}

impl MomentTable {
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn pair_moment(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.norms[a]
        } else {
            0.0
        }
    }

    /// Non-zero entries of `E[Y_k Ψ_a Ψ_b]`.
    pub fn linear_entries(&self, k: usize) -> &[(usize, usize, f64)] {
        &self.linear[k]
    }

    pub fn linear_moment(&self, k: usize, a: usize, b: usize) -> f64 {
        self.linear[k]
            .iter()
            .find(|&&(x, y, _)| x == a && y == b)
            .map_or(0.0, |e| e.2)
    }
}
