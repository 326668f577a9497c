//! Dense complex matrix kernels: tensor products, partial traces, Hermitian
//! eigendecomposition and spectral functions of positive semidefinite operators.
//!
//! All tolerances are relative to `1 + max |entry|` so that the same checks
//! work for dimensionless states and for Hamiltonians in joules.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Default eigenvalue clip for `log` and `sqrt` of nearly-PSD matrices.
pub const DEFAULT_CLIP: f64 = 1e-12;

/// Relative Hermiticity tolerance used by [`hermitian_eigen`].
pub const HERMITIAN_TOL: f64 = 1e-12;

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Largest entrywise deviation `max |M - M†|`.
pub fn hermitian_residual(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &CMatrix, rel_tol: f64) -> bool {
    m.is_square() && hermitian_residual(m) <= rel_tol * (1.0 + max_abs(m))
}

/// `(M + M†) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

/// Kronecker product; block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn tensor_product(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, left to right.
pub fn tensor_all(factors: &[CMatrix]) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for f in factors {
        out = out.kronecker(f);
    }
    out
}

fn check_subsystems(dims: &[usize], total: usize, indices: &[usize]) -> Result<()> {
    let product: usize = dims.iter().product();
    if product != total {
        return Err(Error::Structural(format!(
            "subsystem dimensions {dims:?} multiply to {product}, matrix has dimension {total}"
        )));
    }
    if indices.is_empty() {
        return Err(Error::Structural("no subsystem kept".into()));
    }
    let mut seen = vec![false; dims.len()];
    for &k in indices {
        if k >= dims.len() {
            return Err(Error::Structural(format!(
                "subsystem index {k} out of range for {} subsystems",
                dims.len()
            )));
        }
        if seen[k] {
            return Err(Error::Structural(format!("subsystem {k} listed twice")));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Traces out every subsystem not in `keep`; the output keeps the original
/// subsystem order.
pub fn partial_trace(rho: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    reduce_ordered(rho, dims, &sorted)
}

/// Traces out every subsystem not in `order` and returns the reduced
/// operator with its factors arranged as listed in `order`.
pub fn reduce_ordered(rho: &CMatrix, dims: &[usize], order: &[usize]) -> Result<CMatrix> {
    if !rho.is_square() {
        return Err(Error::Structural(
            "partial trace of a non-square matrix".into(),
        ));
    }
    check_subsystems(dims, rho.nrows(), order)?;

    let n_sub = dims.len();
    let mut strides = vec![1usize; n_sub];
    for k in (0..n_sub.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let kept_dim: usize = order.iter().map(|&k| dims[k]).product();
    let mut kept_strides = vec![1usize; order.len()];
    for k in (0..order.len().saturating_sub(1)).rev() {
        kept_strides[k] = kept_strides[k + 1] * dims[order[k + 1]];
    }
    let mut in_order = vec![None; n_sub];
    for (pos, &k) in order.iter().enumerate() {
        in_order[k] = Some(pos);
    }
    let traced: Vec<usize> = (0..n_sub).filter(|k| in_order[*k].is_none()).collect();
    let traced_dim: usize = traced.iter().map(|&k| dims[k]).product();

    // Bucket every full index by its traced multi-index.
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(kept_dim); traced_dim];
    for full in 0..rho.nrows() {
        let mut kept_idx = 0;
        let mut traced_idx = 0;
        for k in 0..n_sub {
            let digit = (full / strides[k]) % dims[k];
            match in_order[k] {
                Some(pos) => kept_idx += digit * kept_strides[pos],
                None => traced_idx = traced_idx * dims[k] + digit,
            }
        }
        buckets[traced_idx].push((kept_idx, full));
    }

    let mut out = CMatrix::zeros(kept_dim, kept_dim);
    for bucket in &buckets {
        for &(ki, ri) in bucket {
            for &(kj, cj) in bucket {
                out[(ki, kj)] += rho[(ri, cj)];
            }
        }
    }
    Ok(out)
}

/// Spectrum of a Hermitian matrix, eigenvalues ascending, eigenvectors as
/// the columns of a unitary matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    /// `V f(Λ) V†`.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

pub fn hermitian_eigen(h: &CMatrix) -> Result<HermitianEigen> {
    if !h.is_square() {
        return Err(Error::Structural(
            "eigendecomposition of a non-square matrix".into(),
        ));
    }
    if !is_hermitian(h, HERMITIAN_TOL) {
        return Err(Error::Structural(format!(
            "matrix is not Hermitian (residual {:e})",
            hermitian_residual(h)
        )));
    }
    let n = h.nrows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: vec![],
            vectors: CMatrix::zeros(0, 0),
        });
    }
    let eig = hermitize(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigen { values, vectors })
}

pub fn eigenvalues(h: &CMatrix) -> Result<Vec<f64>> {
    Ok(hermitian_eigen(h)?.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdFunction {
    /// Natural logarithm. Eigenvalues at or below the clip map to 0, so they
    /// contribute nothing to `tr(ρ ln ρ)`-type aggregates.
    Log,
    Sqrt,
    /// `V |Λ| V†`; accepts indefinite input.
    Abs,
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn psd_matrix_function(rho: &CMatrix, f: PsdFunction, clip: f64) -> Result<CMatrix> {
    if clip < 0.0 {
        return Err(Error::Parameter(format!("negative eigenvalue clip {clip}")));
    }
    let eig = hermitian_eigen(rho)?;
    if f != PsdFunction::Abs && eig.min() < -clip {
        return Err(Error::Positivity {
            eigenvalue: eig.min(),
            clip,
        });
    }
    Ok(match f {
        PsdFunction::Log => eig.map(|x| if x > clip { x.ln() } else { 0.0 }),
        PsdFunction::Sqrt => eig.map(|x| x.max(0.0).sqrt()),
        PsdFunction::Abs => eig.map(f64::abs),
    })
}

/// `exp(H)` for Hermitian `H`.
pub fn expm_hermitian(h: &CMatrix) -> Result<CMatrix> {
    Ok(hermitian_eigen(h)?.map(f64::exp))
}

/// Shannon-type sum `-Σ λ ln λ` with `0 ln 0 = 0`.
pub fn entropy_of_spectrum(values: &[f64]) -> f64 {
    values
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

/// Square sparse matrix indexed both by column and by row, for operators
/// with a handful of entries per column (ladder operators, couplings).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    by_col: Vec<Vec<(usize, C64)>>,
    by_row: Vec<Vec<(usize, C64)>>,
}

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            by_col: vec![Vec::new(); dim],
            by_row: vec![Vec::new(); dim],
        }
    }

    /// Duplicate positions are summed; exact zeros are dropped.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
    ) -> Self {
        let mut acc: std::collections::BTreeMap<(usize, usize), C64> =
            std::collections::BTreeMap::new();
        for (r, c, v) in triplets {
            assert!(
                r < dim && c < dim,
                "sparse entry ({r}, {c}) outside dimension {dim}"
            );
            *acc.entry((c, r)).or_insert(c64(0.0, 0.0)) += v;
        }
        let mut out = Self::zeros(dim);
        for ((c, r), v) in acc {
            if v != c64(0.0, 0.0) {
                out.by_col[c].push((r, v));
                out.by_row[r].push((c, v));
            }
        }
        out
    }

    pub fn from_diagonal(values: &[f64]) -> Self {
        Self::from_triplets(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i, i, c64(v, 0.0))),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.by_col.iter().map(Vec::len).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.by_col
            .iter()
            .enumerate()
            .flat_map(|(c, col)| col.iter().map(move |&(r, v)| (r, c, v)))
    }

    /// Entries `(row, value)` of column `c`.
    pub fn column(&self, c: usize) -> &[(usize, C64)] {
        &self.by_col[c]
    }

    /// Entries `(col, value)` of row `r`.
    pub fn row(&self, r: usize) -> &[(usize, C64)] {
        &self.by_row[r]
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            out[(r, c)] = v;
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_triplets(
            self.dim,
            self.triplets().map(|(r, c, v)| (r, c, v * factor)),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_triplets(self.dim, self.triplets().chain(other.triplets()))
    }

    /// `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut triplets = Vec::new();
        for (k, c, b) in other.triplets() {
            for &(r, a) in &self.by_col[k] {
                triplets.push((r, c, a * b));
            }
        }
        Self::from_triplets(self.dim, triplets)
    }

    /// `self * rho`.
    pub fn mul_dense(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, rho.ncols());
        for (k, col) in self.by_col.iter().enumerate() {
            for &(r, v) in col {
                for j in 0..rho.ncols() {
                    out[(r, j)] += v * rho[(k, j)];
                }
            }
        }
        out
    }

    /// `rho * self`.
    pub fn dense_mul(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), self.dim);
        for (c, col) in self.by_col.iter().enumerate() {
            for &(k, v) in col {
                let mut target = out.column_mut(c);
                target.axpy(v, &rho.column(k), c64(1.0, 0.0));
            }
        }
        out
    }

    /// `rho * self†`.
    pub fn dense_mul_adjoint(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), self.dim);
        for (c, row) in self.by_row.iter().enumerate() {
            for &(k, v) in row {
                let mut target = out.column_mut(c);
                target.axpy(v.conj(), &rho.column(k), c64(1.0, 0.0));
            }
        }
        out
    }

    /// `tr(self * rho)`.
    pub fn expectation(&self, rho: &CMatrix) -> C64 {
        self.triplets().map(|(r, c, v)| v * rho[(c, r)]).sum()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        hermitize(&random_matrix(rng, n))
    }

    /// Full-rank random density matrix `G G† / tr(G G†)`.
    pub fn random_density(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let g = random_matrix(rng, n);
        let m = &g * g.adjoint();
        let t = trace(&m);
        hermitize(&(m / t))
    }

    pub fn random_pure(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let v = nalgebra::DVector::from_fn(n, |_, _| {
            c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let v = &v / c64(v.norm(), 0.0);
        &v * v.adjoint()
    }
}
