//! Transaction similarity graph.
//!
//! Nodes are transactions (rows of the feature matrix). Each node links to
//! its `k` most strongly correlated rows by absolute Pearson correlation,
//! provided that correlation reaches `tau`; edges are unweighted and the
//! result is symmetrised by union. The adjacency used by the GCN layers is
//! the self-loop normalisation `D^-1/2 (A + I) D^-1/2` with `D` the degree
//! matrix of `A + I`.

use std::io::Write;

use crate::numcore::Tensor;
use crate::{Error, Result, Scalar};

/// Default number of chronologically contiguous rows per graph block.
pub const DEFAULT_BLOCK_SIZE: usize = 2048;

/// Sample Pearson correlation; 0 when either input is constant.
pub fn pearson<S: Scalar>(x: &[S], y: &[S]) -> Result<S> {
    if x.len() != y.len() {
        return Err(Error::param(format!(
            "pearson: length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::param("pearson: need at least two observations"));
    }
    let cx = Centered::new(x);
    let cy = Centered::new(y);
    Ok(cx.correlation(&cy))
}

/// A row shifted to zero mean, with its sum of squares.
struct Centered<S> {
    values: Vec<S>,
    sum_sq: S,
}

impl<S: Scalar> Centered<S> {
    fn new(x: &[S]) -> Self {
        let n = S::from_usize(x.len()).unwrap();
        let mean = x.iter().fold(S::zero(), |a, &v| a + v) / n;
        let values: Vec<S> = x.iter().map(|&v| v - mean).collect();
        let sum_sq = values.iter().fold(S::zero(), |a, &v| a + v * v);
        Self { values, sum_sq }
    }

    fn correlation(&self, other: &Self) -> S {
        if self.sum_sq <= S::zero() || other.sum_sq <= S::zero() {
            return S::zero();
        }
        let cross = self
            .values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |a, (&p, &q)| a + p * q);
        let r = cross / (self.sum_sq * other.sum_sq).sqrt();
        r.max(-S::one()).min(S::one())
    }
}

/// Unnormalized adjacency in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency<S> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<S>,
    symmetric: bool,
}

impl<S: Scalar> SparseAdjacency<S> {
    /// Builds from `(i, j, w)` triples; duplicates keep the first weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, S)], symmetric: bool) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, S)> = edges.to_vec();
        for &(i, j, w) in &sorted {
            if i >= n || j >= n {
                return Err(Error::Index {
                    what: "edge endpoint",
                    index: i.max(j),
                    bound: n,
                });
            }
            if !w.is_finite() {
                return Err(Error::param("edge weight must be finite"));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        sorted.dedup_by(|b, a| a.0 == b.0 && a.1 == b.1);
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &sorted {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let adj = Self {
            n,
            row_ptr,
            cols: sorted.iter().map(|e| e.1).collect(),
            weights: sorted.iter().map(|e| e.2).collect(),
            symmetric,
        };
        if symmetric && !adj.is_symmetric() {
            return Err(Error::param("edge list flagged symmetric is not"));
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored directed entries.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn edges(&self) -> Vec<(usize, usize, S)> {
        (0..self.n)
            .flat_map(|i| self.neighbors(i).map(move |(j, w)| (i, j, w)))
            .collect()
    }

    /// Undirected edges `i < j`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.edges()
            .into_iter()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<S> {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.weights[range.start + k])
    }

    fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.neighbors(i).all(|(j, w)| self.weight(j, i) == Some(w)))
    }
}

/// `D^-1/2 (A + I) D^-1/2` in compressed sparse row form, self-loops included.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedGraph<S> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> NormalizedGraph<S> {
    /// Â = I on `n` nodes.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![S::one(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries, self-loops included.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => S::zero(),
        }
    }

    pub fn entries(&self) -> Vec<(usize, usize, S)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        for (i, j, v) in self.entries() {
            t.data_mut()[i * self.n + j] = v;
        }
        t
    }

    /// Sparse-dense product `Â · h`.
    pub fn propagate(&self, h: &Tensor<S>) -> Result<Tensor<S>> {
        if h.shape().len() != 2 || h.rows() != self.n {
            return Err(Error::shape("propagate", &[self.n, self.n], h.shape()));
        }
        let c = h.cols();
        let mut out = Tensor::zeros(&[self.n, c]);
        for i in 0..self.n {
            let out_row = &mut out.data_mut()[i * c..(i + 1) * c];
            for (j, v) in self.row(i) {
                for (o, &x) in out_row.iter_mut().zip(h.row(j)) {
                    *o = *o + v * x;
                }
            }
        }
        Ok(out)
    }

    /// `Âᵀ · g`, the adjoint of [`propagate`](Self::propagate).
    pub fn propagate_transpose(&self, g: &Tensor<S>) -> Result<Tensor<S>> {
        if g.shape().len() != 2 || g.rows() != self.n {
            return Err(Error::shape("propagate_transpose", &[self.n, self.n], g.shape()));
        }
        let c = g.cols();
        let mut out = Tensor::zeros(&[self.n, c]);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let src = &g.data()[i * c..(i + 1) * c];
                let dst = &mut out.data_mut()[j * c..(j + 1) * c];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o = *o + v * x;
                }
            }
        }
        Ok(out)
    }

    /// Writes `n m` followed by one `i j weight` line per stored entry.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.n, self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(w, "{i} {j} {v}")?;
        }
        Ok(())
    }
}

/// k-nearest-neighbour graph over rows by absolute Pearson correlation.
///
/// Candidates for node `i` are all `j != i`, ranked by `|corr(i, j)|`
/// descending with ties going to the smaller index. The top `k` whose
/// `|corr|` is at least `tau` become unweighted edges, and the edge set is
/// symmetrised by union.
pub fn knn_corr_graph<S: Scalar>(x: &Tensor<S>, k: usize, tau: S) -> Result<SparseAdjacency<S>> {
    if x.shape().len() != 2 {
        return Err(Error::shape("knn_corr_graph", x.shape(), &[0, 0]));
    }
    let (n, f) = (x.rows(), x.cols());
    if f < 2 {
        return Err(Error::param(format!(
            "knn_corr_graph: need at least 2 features per row, got {f}"
        )));
    }
    if k == 0 {
        return Err(Error::param("knn_corr_graph: k must be at least 1"));
    }
    let centered: Vec<Centered<S>> = (0..n).map(|i| Centered::new(x.row(i))).collect();
    let mut edges: Vec<(usize, usize, S)> = Vec::with_capacity(2 * n * k);
    let mut candidates: Vec<(S, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        candidates.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let r = centered[i].correlation(&centered[j]).abs();
            if r >= tau {
                candidates.push((r, j));
            }
        }
        let by_rank = |a: &(S, usize), b: &(S, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, by_rank);
            candidates.truncate(k);
        }
        for &(_, j) in &candidates {
            edges.push((i, j, S::one()));
            edges.push((j, i, S::one()));
        }
    }
    SparseAdjacency::from_edges(n, &edges, true)
}

/// Self-loop symmetric normalisation of a symmetric adjacency without
/// self-loops.
pub fn normalize_adjacency<S: Scalar>(a: &SparseAdjacency<S>) -> Result<NormalizedGraph<S>> {
    if !a.symmetric() {
        return Err(Error::param("normalize_adjacency: adjacency must be symmetric"));
    }
    let n = a.n();
    let mut degree = vec![S::one(); n];
    for (i, d) in degree.iter_mut().enumerate() {
        for (j, w) in a.neighbors(i) {
            if j == i {
                return Err(Error::param("normalize_adjacency: unexpected self-loop"));
            }
            *d = *d + w;
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let mut self_done = false;
        for (j, w) in a.neighbors(i) {
            if !self_done && j > i {
                cols.push(i);
                values.push(S::one() / degree[i]);
                self_done = true;
            }
            cols.push(j);
            values.push(w / (degree[i] * degree[j]).sqrt());
        }
        if !self_done {
            cols.push(i);
            values.push(S::one() / degree[i]);
        }
        row_ptr.push(cols.len());
    }
    Ok(NormalizedGraph {
        n,
        row_ptr,
        cols,
        values,
    })
}

/// Block-diagonal graph over contiguous chronological blocks of at most
/// `block_size` rows, each block built with [`knn_corr_graph`] and
/// normalised independently.
pub fn chunked_graph<S: Scalar>(
    x: &Tensor<S>,
    block_size: usize,
    k: usize,
    tau: S,
) -> Result<NormalizedGraph<S>> {
    if block_size < 2 {
        return Err(Error::param("chunked_graph: block_size must be at least 2"));
    }
    let n = x.rows();
    let mut row_ptr = vec![0usize];
    let mut cols = Vec::new();
    let mut values = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + block_size).min(n);
        let block_rows: Vec<usize> = (start..end).collect();
        let block = x.gather_rows(&block_rows)?;
        let g = if end - start >= 2 {
            normalize_adjacency(&knn_corr_graph(&block, k, tau)?)?
        } else {
            NormalizedGraph::identity(end - start)
        };
        for i in 0..g.n() {
            for (j, v) in g.row(i) {
                cols.push(start + j);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        start = end;
    }
    Ok(NormalizedGraph {
        n,
        row_ptr,
        cols,
        values,
    })
}
