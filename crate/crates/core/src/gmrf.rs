//! Sparse symmetric positive-definite linear algebra for Gaussian Markov
//! random fields in canonical form.
//!
//! Matrices are stored as the upper triangle in compressed-column form
//! (row indices `i <= j` within column `j`, sorted, diagonal last). The
//! Cholesky factor is computed with an up-looking algorithm driven by the
//! elimination tree, in natural ordering. The joint precision assembled by
//! the engines is an arrowhead (site blocks followed by a small dense
//! coefficient block), so natural ordering keeps fill at `O(n k)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Symmetric sparse matrix, upper triangle stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Builds a matrix from `(row, col, value)` triplets. Either triangle may
    /// be given; duplicates are summed. Every diagonal entry is materialised
    /// (as zero if absent) so the factorization can detect a missing pivot.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let assembler = TripletAssembler::new(n, triplets.iter().map(|&(i, j, _)| (i, j)))?;
        let values: Vec<f64> = triplets.iter().map(|t| t.2).collect();
        assembler.assemble(&values)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds from a dense symmetric matrix, keeping exact zeros out of the
    /// structure (except the diagonal).
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            for (j, &v) in row.iter().enumerate().skip(i) {
                if v != 0.0 || i == j {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &triplets)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(pos) => self.values[self.col_ptr[c] + pos],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored upper-triangle entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.entries() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    /// Quadratic form `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n, x.len())?;
        Ok(self
            .entries()
            .map(|(i, j, v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] })
            .sum())
    }

    /// Conditions the Gaussian `N_c(b, Q)` on the coordinates outside
    /// `free` taking the values in `v` (a full-length vector). Returns the
    /// precision `Q_FF` and canonical mean `b_F − Q_FC v_C` of the free part.
    pub fn condition(&self, b: &[f64], free: &[usize], v: &[f64]) -> Result<(SparseSpd, Vec<f64>)> {
        check_dim(self.n, b.len())?;
        check_dim(self.n, v.len())?;
        let mut pos = vec![NONE; self.n];
        for (k, &i) in free.iter().enumerate() {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!("free index {i} out of range")));
            }
            pos[i] = k;
        }
        let mut bf: Vec<f64> = free.iter().map(|&i| b[i]).collect();
        let mut triplets = Vec::new();
        for (i, j, q) in self.entries() {
            match (pos[i], pos[j]) {
                (NONE, NONE) => {}
                (pi, NONE) => bf[pi] -= q * v[j],
                (NONE, pj) => bf[pj] -= q * v[i],
                (pi, pj) => triplets.push((pi, pj, q)),
            }
        }
        Ok((Self::from_triplets(free.len(), &triplets)?, bf))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.entries() {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Precomputed mapping from a fixed triplet sequence to storage slots, so
/// matrices with the same structure can be refilled without sorting.
#[derive(Debug, Clone)]
pub struct TripletAssembler {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    slots: Vec<usize>,
}

impl TripletAssembler {
    pub fn new(n: usize, coords: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut keyed: Vec<(usize, usize, usize)> = Vec::new();
        for (k, (i, j)) in coords.into_iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            keyed.push((c, r, k));
        }
        let n_triplets = keyed.len();
        for d in 0..n {
            keyed.push((d, d, NONE));
        }
        keyed.sort_unstable();

        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(keyed.len());
        let mut slots = vec![0; n_triplets];
        let mut last: Option<(usize, usize)> = None;
        for (c, r, k) in keyed {
            if last != Some((c, r)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
            if k != NONE {
                slots[k] = row_idx.len() - 1;
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self { n, col_ptr, row_idx, slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Fills a matrix from values given in the same order as the coordinates.
    pub fn assemble(&self, values: &[f64]) -> Result<SparseSpd> {
        check_dim(self.slots.len(), values.len())?;
        let mut out = vec![0.0; self.row_idx.len()];
        for (&slot, &v) in self.slots.iter().zip(values) {
            out[slot] += v;
        }
        Ok(SparseSpd {
            n: self.n,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values: out,
        })
    }
}

/// Elimination tree and column structure of the Cholesky factor.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
}

impl Symbolic {
    pub fn analyze(q: &SparseSpd) -> Self {
        let n = q.n;
        let parent = etree(q);
        let mut counts = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(q, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut l_col_ptr = vec![0; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + counts[j];
        }
        Self { n, parent, l_col_ptr }
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }
}

fn etree(q: &SparseSpd) -> Vec<usize> {
    let n = q.n;
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for p in q.col_ptr[k]..q.col_ptr[k + 1] {
            let mut i = q.row_idx[p];
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of L, written to `stack[top..]` in
/// topological order. `mark[i] == k` flags nodes visited for this row.
fn ereach(q: &SparseSpd, k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = q.n;
    let mut top = n;
    mark[k] = k;
    let mut path = Vec::new();
    for p in q.col_ptr[k]..q.col_ptr[k + 1] {
        let mut i = q.row_idx[p];
        if i >= k {
            continue;
        }
        path.clear();
        while mark[i] != k {
            path.push(i);
            mark[i] = k;
            i = parent[i];
        }
        while let Some(node) = path.pop() {
            top -= 1;
            stack[top] = node;
        }
    }
    top
}

/// Lower-triangular factor `L` with `Q = L Lᵀ` (natural ordering, no
/// permutation). Columns stored with the diagonal first.
#[derive(Debug, Clone)]
pub struct CholFactor {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Factorizes `q`, computing the symbolic structure on the fly.
pub fn factorize(q: &SparseSpd) -> Result<CholFactor> {
    factorize_with(&Symbolic::analyze(q), q)
}

/// Numeric factorization reusing a symbolic analysis of a matrix with the
/// same structure.
pub fn factorize_with(sym: &Symbolic, q: &SparseSpd) -> Result<CholFactor> {
    let n = q.n;
    if n == 0 {
        return Err(Error::InvalidArgument("cannot factorize an empty matrix".into()));
    }
    check_dim(sym.n, n)?;
    let nnz = sym.factor_nnz();
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![0.0; nnz];
    let mut next: Vec<usize> = sym.l_col_ptr[..n].to_vec();
    let mut x = vec![0.0; n];
    let mut stack = vec![0usize; n];
    let mut mark = vec![NONE; n];

    for k in 0..n {
        let top = ereach(q, k, &sym.parent, &mut stack, &mut mark);
        x[k] = 0.0;
        for p in q.col_ptr[k]..q.col_ptr[k + 1] {
            x[q.row_idx[p]] = q.values[p];
        }
        let mut d = x[k];
        x[k] = 0.0;
        for &i in &stack[top..] {
            let lki = x[i] / values[sym.l_col_ptr[i]];
            x[i] = 0.0;
            for p in sym.l_col_ptr[i] + 1..next[i] {
                x[row_idx[p]] -= values[p] * lki;
            }
            d -= lki * lki;
            let p = next[i];
            next[i] += 1;
            row_idx[p] = k;
            values[p] = lki;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: k + 1 });
        }
        // diagonal goes first in column k
        let p = next[k];
        debug_assert_eq!(p, sym.l_col_ptr[k]);
        next[k] += 1;
        row_idx[p] = k;
        values[p] = d.sqrt();
    }
    Ok(CholFactor { n, col_ptr: sym.l_col_ptr.clone(), row_idx, values })
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `L[i][i]`.
    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.col_ptr[i]]
    }

    /// Iterates entries of L as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn to_dense_lower(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.entries() {
            d[i][j] = v;
        }
        d
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) -> Result<()> {
        check_dim(self.n, b.len())?;
        for j in 0..self.n {
            let start = self.col_ptr[j];
            b[j] /= self.values[start];
            let bj = b[j];
            if bj != 0.0 {
                for p in start + 1..self.col_ptr[j + 1] {
                    b[self.row_idx[p]] -= self.values[p] * bj;
                }
            }
        }
        Ok(())
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) -> Result<()> {
        check_dim(self.n, y.len())?;
        for j in (0..self.n).rev() {
            let start = self.col_ptr[j];
            let mut acc = y[j];
            for p in start + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = acc / self.values[start];
        }
        Ok(())
    }

    /// Returns `Q⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x)?;
        self.backward_in_place(&mut x)?;
        Ok(x)
    }

    /// `log det Q = 2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// One exact draw from `N(Q⁻¹ b, Q⁻¹)` where `b` is the canonical mean.
    pub fn sample_canonical<R: Rng + ?Sized>(&self, canonical_mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_dim(self.n, canonical_mean.len())?;
        let mut mean = self.solve(canonical_mean)?;
        let mut z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        self.backward_in_place(&mut z)?;
        for (m, dz) in mean.iter_mut().zip(&z) {
            *m += dz;
        }
        Ok(mean)
    }

    /// Marginal variances `diag(Q⁻¹)` by the Takahashi recursions on the
    /// pattern of L.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let sigma = self.selected_inverse();
        (0..self.n).map(|i| sigma[self.col_ptr[i]]).collect()
    }

    /// `diag(Q⁻¹)[start..]`, computing only the trailing columns of the
    /// selected inverse.
    pub fn marginal_variances_from(&self, start: usize) -> Vec<f64> {
        let sigma = self.selected_inverse_from(start);
        (start..self.n).map(|i| sigma[self.col_ptr[i]]).collect()
    }

    /// Entries of `Q⁻¹` on the pattern of L, laid out like `values`.
    pub fn selected_inverse(&self) -> Vec<f64> {
        self.selected_inverse_from(0)
    }

    /// As [`CholFactor::selected_inverse`], filled only for columns
    /// `>= start` (the recursion runs backwards, so these are
    /// self-contained).
    pub fn selected_inverse_from(&self, start: usize) -> Vec<f64> {
        let mut sigma = vec![0.0; self.values.len()];
        for i in (start.min(self.n)..self.n).rev() {
            let start = self.col_ptr[i];
            let end = self.col_ptr[i + 1];
            let lii = self.values[start];
            // off-diagonals of column i, rows j > i
            for pj in start + 1..end {
                let j = self.row_idx[pj];
                let mut acc = 0.0;
                for pk in start + 1..end {
                    let k = self.row_idx[pk];
                    acc += self.values[pk] * self.sigma_at(&sigma, k, j);
                }
                sigma[pj] = -acc / lii;
            }
            let mut acc = 0.0;
            for pk in start + 1..end {
                acc += self.values[pk] * sigma[pk];
            }
            sigma[start] = 1.0 / (lii * lii) - acc / lii;
        }
        sigma
    }

    fn sigma_at(&self, sigma: &[f64], a: usize, b: usize) -> f64 {
        let (row, col) = if a >= b { (a, b) } else { (b, a) };
        let start = self.col_ptr[col];
        let end = self.col_ptr[col + 1];
        if row == col {
            return sigma[start];
        }
        match self.row_idx[start + 1..end].binary_search(&row) {
            Ok(pos) => sigma[start + 1 + pos],
            // the pattern of L is closed under the recursion; unreachable
            // for a valid factor
            Err(_) => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m2() -> SparseSpd {
        SparseSpd::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap()
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = factorize(&SparseSpd::identity(3)).unwrap();
        assert_eq!(f.to_dense_lower(), SparseSpd::identity(3).to_dense());
    }

    #[test]
    fn two_by_two_factor() {
        let l = factorize(&m2()).unwrap().to_dense_lower();
        assert_eq!(l[0][0], 2.0);
        assert_eq!(l[1][0], 1.0);
        assert!((l[1][1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[0][1], 0.0);
    }

    #[test]
    fn indefinite_reports_second_pivot() {
        let q = SparseSpd::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match factorize(&q) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn solve_examples() {
        let f = factorize(&m2()).unwrap();
        let x = f.solve(&[8.0, 7.0]).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-14 && (x[1] - 1.5).abs() < 1e-14);
        assert_eq!(f.solve(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let id = factorize(&SparseSpd::identity(3)).unwrap();
        assert_eq!(id.solve(&[1.5, -2.0, 7.0]).unwrap(), vec![1.5, -2.0, 7.0]);
        assert!(matches!(f.solve(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(factorize(&SparseSpd::identity(4)).unwrap().logdet(), 0.0);
        let d = factorize(&SparseSpd::diagonal(&[2.0, 8.0])).unwrap().logdet();
        assert!((d - 16f64.ln()).abs() < 1e-14);
        assert!((factorize(&m2()).unwrap().logdet() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn duplicate_triplets_are_summed_and_lower_entries_fold() {
        let q = SparseSpd::from_triplets(2, &[(0, 0, 1.0), (0, 0, 3.0), (1, 0, 2.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(q.to_dense(), m2().to_dense());
    }

    #[test]
    fn zero_diagonal_is_caught() {
        let q = SparseSpd::from_triplets(2, &[(0, 0, 1.0)]).unwrap();
        assert!(matches!(factorize(&q), Err(Error::NotPositiveDefinite { pivot: 2 })));
    }

    #[test]
    fn sampler_is_deterministic_and_centered() {
        let f = factorize(&SparseSpd::diagonal(&[4.0])).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(f.sample_canonical(&[4.0], &mut a).unwrap(), f.sample_canonical(&[4.0], &mut b).unwrap());
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| f.sample_canonical(&[4.0], &mut a).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 4.0 * 0.5 / (n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.05 * 0.25);
    }

    #[test]
    fn selected_inverse_matches_two_by_two() {
        // inverse of [[4,2],[2,3]] is [[3,-2],[-2,4]] / 8
        let f = factorize(&m2()).unwrap();
        let v = f.marginal_variances();
        assert!((v[0] - 3.0 / 8.0).abs() < 1e-14);
        assert!((v[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tail_variances_match_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = factorize(&random_spd(&mut rng, 9)).unwrap();
        let full = f.marginal_variances();
        assert_eq!(f.marginal_variances_from(6), full[6..].to_vec());
    }

    #[test]
    fn arrowhead_fill_stays_in_coefficient_rows() {
        // sites 0..n coupled only to the last two coefficients
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            t.push((i, n, 0.3));
            t.push((i, n + 1, -0.2));
        }
        t.push((n, n, 40.0));
        t.push((n + 1, n + 1, 40.0));
        let q = SparseSpd::from_triplets(n + 2, &t).unwrap();
        let sym = Symbolic::analyze(&q);
        assert_eq!(sym.factor_nnz(), 3 * n + 3);
    }

    #[test]
    fn conditioning_matches_dense_formula() {
        // Q = [[4,1,0],[1,3,1],[0,1,2]], condition on x1 = 2
        let q = SparseSpd::from_dense(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let (qf, bf) = q.condition(&[1.0, 1.0, 1.0], &[0, 2], &[0.0, 2.0, 0.0]).unwrap();
        assert_eq!(qf.to_dense(), vec![vec![4.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(bf, vec![-1.0, -1.0]);
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SparseSpd {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d[i][j] = (0..n).map(|k| a[i][k] * a[j][k]).sum::<f64>();
            }
            d[i][i] += n as f64;
        }
        SparseSpd::from_dense(&d).unwrap()
    }

    fn inf_norm(m: &[Vec<f64>]) -> f64 {
        m.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn factor_round_trip(seed in any::<u64>(), n in 1usize..=50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, n);
            let l = factorize(&q).unwrap().to_dense_lower();
            let qd = q.to_dense();
            let mut diff = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let llt: f64 = (0..n).map(|k| l[i][k] * l[j][k]).sum();
                    diff[i][j] = llt - qd[i][j];
                }
            }
            prop_assert!(inf_norm(&diff) <= 1e-9 * inf_norm(&qd));
        }

        #[test]
        fn solve_is_linear(seed in any::<u64>(), n in 1usize..=30, a in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = factorize(&random_spd(&mut rng, n)).unwrap();
            let b1: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b2: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let comb: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + y).collect();
            let lhs = f.solve(&comb).unwrap();
            let (s1, s2) = (f.solve(&b1).unwrap(), f.solve(&b2).unwrap());
            for i in 0..n {
                prop_assert!((lhs[i] - (a * s1[i] + s2[i])).abs() <= 1e-10);
            }
        }

        #[test]
        fn solver_residual_is_small(seed in any::<u64>(), n in 1usize..=50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = factorize(&q).unwrap().solve(&b).unwrap();
            let r = q.mul_vec(&x).unwrap();
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn logdet_matches_dense_determinant(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, n);
            let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| q.get(i, j));
            let expect = dense.determinant().ln();
            prop_assert!((factorize(&q).unwrap().logdet() - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }

        #[test]
        fn selected_inverse_matches_dense(seed in any::<u64>(), n in 1usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, n);
            let inv = nalgebra::DMatrix::from_fn(n, n, |i, j| q.get(i, j)).try_inverse().unwrap();
            let v = factorize(&q).unwrap().marginal_variances();
            for i in 0..n {
                prop_assert!((v[i] - inv[(i, i)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sample_precision_matches_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_spd(&mut rng, 5);
        let f = factorize(&q).unwrap();
        let b = vec![0.5, -1.0, 0.0, 2.0, 1.0];
        let mu = f.solve(&b).unwrap();
        let m = 10_000;
        let mut cov = nalgebra::DMatrix::<f64>::zeros(5, 5);
        for _ in 0..m {
            let s = f.sample_canonical(&b, &mut rng).unwrap();
            let d = nalgebra::DVector::from_iterator(5, s.iter().zip(&mu).map(|(a, b)| a - b));
            cov += &d * d.transpose();
        }
        cov /= m as f64;
        let sigma = nalgebra::DMatrix::from_fn(5, 5, |i, j| q.get(i, j)).try_inverse().unwrap();
        for i in 0..5 {
            for j in 0..5 {
                // sd of a sample covariance entry is about sqrt((s_ii s_jj + s_ij²) / m)
                let tol = 5.0 * ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / m as f64).sqrt();
                assert!((cov[(i, j)] - sigma[(i, j)]).abs() < tol, "({i},{j})");
            }
        }
        let emp_precision = cov.try_inverse().unwrap();
        for i in 0..5 {
            assert!((emp_precision[(i, i)] / q.get(i, i) - 1.0).abs() < 0.1);
        }
    }
}
