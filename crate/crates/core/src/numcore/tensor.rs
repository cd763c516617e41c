use crate::{Error, Result, Scalar};

/// Dense row-major tensor.
///
/// `shape.iter().product() == data.len()` always holds. Two-dimensional
/// tensors are the common case; vectors are stored with a one-element shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[S]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::shape("Tensor::from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    /// Converts from `f64` values.
    pub fn from_f64_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let converted: Vec<Vec<S>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| S::of(x)).collect())
            .collect();
        Self::from_rows(&converted)
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Number of rows of a matrix (length of a vector).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns of a matrix; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.check_same(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: S) {
        for a in &mut self.data {
            *a = *a * alpha;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc + x)
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_2d("transpose")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Copies the listed rows into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let c = self.cols();
        let n = self.rows();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= n {
                return Err(Error::Index {
                    what: "row",
                    index: i,
                    bound: n,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            shape: vec![indices.len(), c],
            data,
        })
    }

    /// Matrix product `self · other`.
    ///
    /// Accumulation is row-major: for each output row `i`, the rows of
    /// `other` are added in increasing `k` order, so every entry is summed
    /// as `((a_i0 b_0j + a_i1 b_1j) + a_i2 b_2j) + ...` on every platform.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_nn(m, k, n, &self.data, &other.data, &mut out);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.dims2("matmul_tn")?;
        let (k2, n) = other.dims2("matmul_tn")?;
        if k != k2 {
            return Err(Error::shape("matmul_tn", &self.shape, &other.shape));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_tn(k, m, n, &self.data, &other.data, &mut out);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", &self.shape, &other.shape));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_nt(m, k, n, &self.data, &other.data, &mut out);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row_vector(&mut self, bias: &Self) -> Result<()> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::shape("add_row_vector", &self.shape, &bias.shape));
        }
        for row in self.data.chunks_exact_mut(c) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x = *x + b;
            }
        }
        Ok(())
    }

    /// Column sums of a matrix, as a vector.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![S::zero(); c];
        for row in self.data.chunks_exact(c.max(1)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        Self::vector(out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        self.expect_2d(op)?;
        Ok((self.shape[0], self.shape[1]))
    }

    fn expect_2d(&self, op: &'static str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::shape(op, &self.shape, &[0, 0]));
        }
        Ok(())
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }
}

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`, all row-major.
pub(crate) fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cij, &bpj) in c_row.iter_mut().zip(b_row) {
                *cij = *cij + a_ip * bpj;
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm_tn<S: Scalar>(k: usize, m: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == S::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cij, &bpj) in c_row.iter_mut().zip(b_row) {
                *cij = *cij + a_pi * bpj;
            }
        }
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`, `c: m×n`.
pub(crate) fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            c[i * n + j] = c[i * n + j] + acc;
        }
    }
}
