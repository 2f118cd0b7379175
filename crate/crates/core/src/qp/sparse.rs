use crate::scalar::Real;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![T::one(); n],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped. Panics on out-of-range indices.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, T)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = T::zero();
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != T::zero() {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_dense(rows: &[Vec<T>], ncols: usize) -> Self {
        let mut trip = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols, "ragged dense matrix");
            for (c, v) in row.iter().enumerate() {
                if *v != T::zero() {
                    trip.push((r, c, *v));
                }
            }
        }
        Self::from_triplets(rows.len(), ncols, &trip)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.data[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub(crate) fn row_spans(&self) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
        (0..self.nrows).map(|r| (r, self.indptr[r]..self.indptr[r + 1]))
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *o = acc;
        }
    }

    /// `out = Aᵀ y`
    pub fn tmul_vec(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (r, yr) in y.iter().enumerate() {
            if *yr == T::zero() {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[k]] += self.data[k] * *yr;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(blocks: &[&CsrMatrix<T>]) -> Self {
        let ncols = blocks.first().map_or(0, |b| b.ncols);
        let mut out = Self::zeros(0, ncols);
        out.indptr = vec![0];
        for b in blocks {
            assert_eq!(b.ncols, ncols, "vstack column mismatch");
            let base = out.indices.len();
            out.indices.extend_from_slice(&b.indices);
            out.data.extend_from_slice(&b.data);
            out.indptr.extend(b.indptr[1..].iter().map(|p| p + base));
            out.nrows += b.nrows;
        }
        out
    }

    /// Largest `|A_ij − A_ji|`; requires a square matrix.
    pub fn asymmetry(&self) -> T {
        let t = self.transpose();
        let mut worst = T::zero();
        let d = self.to_sparse_diff(&t);
        for v in d {
            worst = worst.max(v.abs());
        }
        worst
    }

    fn to_sparse_diff(&self, other: &Self) -> Vec<T> {
        let mut trip = self.triplets();
        trip.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, -v)));
        Self::from_triplets(self.nrows, self.ncols, &trip).data
    }

    /// `(A + Aᵀ)/2`
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        let mut trip: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (r, c, v * half)).collect();
        trip.extend(self.triplets().into_iter().map(|(r, c, v)| (c, r, v * half)));
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    /// Column-wise infinity norms.
    pub(crate) fn col_norms_inf(&self, out: &mut [T]) {
        for (_, span) in self.row_spans() {
            for k in span {
                let c = self.indices[k];
                out[c] = out[c].max(self.data[k].abs());
            }
        }
    }

    pub(crate) fn row_norm_inf(&self, r: usize) -> T {
        self.row(r).fold(T::zero(), |a, (_, v)| a.max(v.abs()))
    }

    /// `A ← diag(left) · A · diag(right)`
    pub(crate) fn scale(&mut self, left: &[T], right: &[T]) {
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                self.data[k] = left[r] * self.data[k] * right[self.indices[k]];
            }
        }
    }
}
