//! Envelope (profile) LDLᵀ factorization of symmetric quasi-definite
//! matrices under a reverse Cuthill–McKee ordering.
//!
//! Quasi-definite matrices admit an LDLᵀ factorization for every symmetric
//! permutation, so no pivoting is performed. Fill-in stays inside the row
//! envelope, which the bandwidth-reducing ordering keeps narrow for the
//! banded structure of horizon-stacked KKT systems.

use std::collections::VecDeque;

use crate::error::{DmpcError, Result};
use crate::scalar::Real;

/// Reverse Cuthill–McKee ordering of the graph given by `adj`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, seed, &degree);
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// George–Liu style search for a node of large eccentricity within the
/// component of `seed`.
fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize, degree: &[usize]) -> usize {
    let mut root = seed;
    let mut last_depth = 0;
    for _ in 0..8 {
        let (levels, depth) = bfs_levels(adj, root);
        if depth <= last_depth && root != seed {
            break;
        }
        last_depth = depth;
        let candidate = levels
            .iter()
            .filter(|(_, l)| *l == depth)
            .map(|(v, _)| *v)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(root);
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (Vec<(usize, usize)>, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut out = vec![(root, 0)];
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        let lv = level[v];
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = lv + 1;
                depth = depth.max(lv + 1);
                out.push((w, lv + 1));
                queue.push_back(w);
            }
        }
    }
    (out, depth)
}

/// Symbolic structure shared by refactorizations with identical pattern.
#[derive(Debug, Clone)]
struct Envelope {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    /// First column of the envelope of each permuted row.
    first: Vec<usize>,
    /// Offset of each permuted row's strictly-lower envelope in `l`.
    start: Vec<usize>,
    len: usize,
}

impl Envelope {
    fn analyze(n: usize, lower: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in lower {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j) in lower {
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(n);
        let mut len = 0;
        for (r, f) in first.iter().enumerate() {
            start.push(len);
            len += r - f;
        }
        Self {
            n,
            perm,
            iperm,
            first,
            start,
            len,
        }
    }
}

/// `P K Pᵀ = L D Lᵀ` with unit lower-triangular `L` stored by row envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeLdl<T> {
    env: Envelope,
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> EnvelopeLdl<T> {
    /// Factors the symmetric matrix given by its lower-triangular entries
    /// `(i, j, v)` with `i ≥ j` (upper entries are mirrored if supplied).
    pub fn new(n: usize, lower: &[(usize, usize, T)]) -> Result<Self> {
        let pattern: Vec<(usize, usize)> = lower.iter().map(|&(i, j, _)| (i.max(j), i.min(j))).collect();
        let env = Envelope::analyze(n, &pattern);
        let mut f = Self {
            l: vec![T::zero(); env.len],
            d: vec![T::zero(); n],
            env,
        };
        f.refactor(lower)?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.env.n
    }

    /// Number of stored strictly-lower entries.
    pub fn envelope_len(&self) -> usize {
        self.env.len
    }

    /// Numeric refactorization with new values on a pattern contained in the
    /// one passed to [`new`](Self::new).
    pub fn refactor(&mut self, lower: &[(usize, usize, T)]) -> Result<()> {
        let env = &self.env;
        self.l.iter_mut().for_each(|v| *v = T::zero());
        self.d.iter_mut().for_each(|v| *v = T::zero());
        for &(i, j, v) in lower {
            let (a, b) = (env.iperm[i], env.iperm[j]);
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            if r == c {
                self.d[r] += v;
            } else {
                if c < env.first[r] {
                    return Err(DmpcError::InvalidArgument(
                        "refactor pattern outside analyzed envelope".into(),
                    ));
                }
                self.l[env.start[r] + c - env.first[r]] += v;
            }
        }
        let tiny = T::tiny();
        for i in 0..env.n {
            let fi = env.first[i];
            let si = env.start[i];
            // g_ij = a_ij − Σ_k g_ik l_jk, kept in place of row i.
            for j in fi..i {
                let fj = env.first[j];
                let sj = env.start[j];
                let lo = fi.max(fj);
                let mut acc = T::zero();
                if lo < j {
                    let gi = &self.l[si + lo - fi..si + j - fi];
                    let lj = &self.l[sj + lo - fj..sj + j - fj];
                    for (a, b) in gi.iter().zip(lj) {
                        acc += *a * *b;
                    }
                }
                self.l[si + j - fi] -= acc;
            }
            let mut di = self.d[i];
            for j in fi..i {
                let g = self.l[si + j - fi];
                let lij = g / self.d[j];
                self.l[si + j - fi] = lij;
                di -= g * lij;
            }
            if !(di.abs() > tiny) || !di.is_finite() {
                return Err(DmpcError::Singular(env.perm[i]));
            }
            self.d[i] = di;
        }
        Ok(())
    }

    /// Diagonal of `D` in permuted order.
    pub fn pivots(&self) -> &[T] {
        &self.d
    }

    /// Original row index of permuted pivot `k`.
    pub fn pivot_row(&self, k: usize) -> usize {
        self.env.perm[k]
    }

    /// Solves `K x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T], work: &mut Vec<T>) {
        let env = &self.env;
        let n = env.n;
        work.clear();
        work.extend(env.perm.iter().map(|&old| b[old]));
        for i in 0..n {
            let fi = env.first[i];
            let si = env.start[i];
            let row = &self.l[si..si + i - fi];
            let mut acc = T::zero();
            for (a, y) in row.iter().zip(&work[fi..i]) {
                acc += *a * *y;
            }
            work[i] -= acc;
        }
        for i in 0..n {
            work[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = env.first[i];
            let si = env.start[i];
            let xi = work[i];
            if xi != T::zero() {
                for (k, a) in self.l[si..si + i - fi].iter().enumerate() {
                    work[fi + k] -= *a * xi;
                }
            }
        }
        for (new, &old) in env.perm.iter().enumerate() {
            b[old] = work[new];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        let mut w = Vec::with_capacity(b.len());
        self.solve_in_place(&mut x, &mut w);
        x
    }

    /// Returns `(positive, negative)` pivot counts.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|d| **d > T::zero()).count();
        (pos, self.d.len() - pos)
    }
}

/// Checks `λ_min(H) ≥ −shift` by factoring `H + shift·I`: by Sylvester's law of
/// inertia every pivot is positive exactly when that matrix is positive definite.
pub fn check_psd<T: Real>(n: usize, lower: &[(usize, usize, T)], shift: T) -> Result<()> {
    let mut entries: Vec<(usize, usize, T)> = lower.to_vec();
    entries.extend((0..n).map(|i| (i, i, shift)));
    match EnvelopeLdl::new(n, &entries) {
        Ok(f) => match f.pivots().iter().position(|d| *d <= T::zero()) {
            None => Ok(()),
            Some(k) => Err(DmpcError::NotPsd {
                row: f.pivot_row(k),
                pivot: f.pivots()[k].to_f64_lossy(),
            }),
        },
        Err(DmpcError::Singular(row)) => Err(DmpcError::NotPsd { row, pivot: 0.0 }),
        Err(e) => Err(e),
    }
}
