//! Stationary state of the generator and time-domain integration.
//!
//! Both work in the frame rotating with the free Hamiltonian. The generator
//! is covariant under the free evolution, so populations, entropies and every
//! flux are frame independent, while the ~10¹⁴ rad/s free frequencies no
//! longer swamp the ~1 s⁻¹ dissipative scales.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, c64, frobenius, hermitian_eigen, hermitize, trace, CMatrix, C64};
use crate::model::{Frame, Liouvillian};

/// Singular values at or below this fraction of the largest count as zero.
pub const NULL_TOL: f64 = 1e-12;
/// Required stationarity: `‖L(ρ)‖ ≤ RESIDUAL_TOL · ‖L‖ · ‖ρ‖` (Frobenius).
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub matrix: CMatrix,
    pub dims: Vec<usize>,
}

impl DensityMatrix {
    /// Checks Hermiticity and unit trace within 1e-10 and positivity within
    /// -1e-9.
    pub fn new(matrix: CMatrix, dims: Vec<usize>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if matrix.shape() != (d, d) {
            return Err(Error::Structural(format!(
                "state of shape {:?} does not match subsystem dimensions {dims:?}",
                matrix.shape()
            )));
        }
        if linalg::hermitian_residual(&matrix) > 1e-10 {
            return Err(Error::Structural("state is not Hermitian".into()));
        }
        let tr = trace(&matrix);
        if (tr - c64(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::Structural(format!("state has trace {tr}")));
        }
        let min = hermitian_eigen(&hermitize(&matrix))?.min();
        if min < -1e-9 {
            return Err(Error::Positivity {
                eigenvalue: min,
                clip: 1e-9,
            });
        }
        Ok(Self { matrix, dims })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Reduced state of the listed subsystems, in the listed order.
    pub fn reduce(&self, order: &[usize]) -> Result<CMatrix> {
        linalg::reduce_ordered(&self.matrix, &self.dims, order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullSpaceMethod {
    Svd,
    InverseIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Largest invariant-sector dimension handled by a dense SVD.
    pub dense_limit: usize,
    /// Largest sector handled at all (dense memory grows as its square).
    pub max_sector: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dense_limit: 1500,
            max_sector: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// `‖L(ρ)‖ / (‖L‖ ‖ρ‖)`, rotating frame, Frobenius norms.
    pub residual: f64,
    /// Smallest eigenvalue after Hermitization, before clipping.
    pub min_eigenvalue: f64,
    pub method: NullSpaceMethod,
}

pub fn steady_state(l: &Liouvillian) -> Result<SteadyState> {
    steady_state_with(l, SolverOptions::default())
}

pub fn steady_state_with(l: &Liouvillian, options: SolverOptions) -> Result<SteadyState> {
    let sector = l.neutral_sector();
    if sector.len() > options.max_sector {
        return Err(Error::Structural(format!(
            "invariant sector of dimension {} exceeds the dense solver limit {}",
            sector.len(),
            options.max_sector
        )));
    }
    let s = l.superoperator_on(&sector, Frame::Rotating)?;
    let (x, method) = if sector.len() <= options.dense_limit {
        let x = match HermitianBasis::new(&sector).and_then(|b| b.real_null_vector(&s)) {
            Some(x) => x?,
            None => null_vector_svd(&s)?,
        };
        (x, NullSpaceMethod::Svd)
    } else {
        (
            null_vector_inverse_iteration(&s)?,
            NullSpaceMethod::InverseIteration,
        )
    };

    let d = l.dim();
    let mut rho = CMatrix::zeros(d, d);
    for (k, &(a, b)) in sector.iter().enumerate() {
        rho[(a, b)] = x[k];
    }
    let tr = trace(&rho);
    if tr.norm() <= 1e-300 || !tr.norm().is_finite() {
        return Err(Error::Structural(
            "stationary vector has no trace-one representative".into(),
        ));
    }
    let (rho, min_eigenvalue) = normalize_state(&(rho / tr))?;
    let residual = frobenius(&l.apply(&rho, Frame::Rotating)) / (frobenius(&s) * frobenius(&rho));
    Ok(SteadyState {
        rho: DensityMatrix::new(rho, l.dims())?,
        residual,
        min_eigenvalue,
        method,
    })
}

/// Hermitize, clip negative eigenvalues, renormalize. Returns the state and
/// its smallest eigenvalue before clipping.
pub fn normalize_state(rho: &CMatrix) -> Result<(CMatrix, f64)> {
    let h = hermitize(rho);
    let eig = hermitian_eigen(&h)?;
    let min = eig.min();
    let clipped = if min < 0.0 {
        eig.map(|x| x.max(0.0))
    } else {
        h
    };
    let tr = trace(&clipped).re;
    if !(tr > 0.0) {
        return Err(Error::Structural("state has no positive part".into()));
    }
    Ok((clipped / c64(tr, 0.0), min))
}

pub(crate) fn null_vector_svd(s: &CMatrix) -> Result<DVector<C64>> {
    let svd = s.clone().svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Structural("SVD produced no right vectors".into()))?;
    let k = null_index(svd.singular_values.as_slice())?;
    Ok(v_t.row(k).adjoint())
}

/// Index of the single singular value below the nullity threshold.
fn null_index(values: &[f64]) -> Result<usize> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let nullity = values.iter().filter(|&&v| v <= NULL_TOL * max).count();
    if nullity > 1 {
        return Err(Error::Degeneracy {
            context: "stationary manifold".into(),
            dimension: nullity,
        });
    }
    let k = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < values[best] { i } else { best });
    if nullity == 0 {
        return Err(Error::Structural(format!(
            "generator has no null vector (smallest singular value {:e} of {max:e})",
            values[k]
        )));
    }
    Ok(k)
}

/// Unitary change of coordinates on a transpose-closed sector,
/// `ρ_aa`, `(ρ_ab + ρ_ba)/√2`, `i(ρ_ab - ρ_ba)/√2`, in which Hermitian
/// matrices have real coordinates. A Hermiticity-preserving generator is a
/// real matrix there, and a real SVD is several times cheaper.
struct HermitianBasis {
    /// Row `k` of the transform as `(column, coefficient)` pairs.
    rows: Vec<Vec<(usize, C64)>>,
}

impl HermitianBasis {
    fn new(sector: &[(usize, usize)]) -> Option<Self> {
        let position: std::collections::HashMap<(usize, usize), usize> =
            sector.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut rows = vec![Vec::new(); sector.len()];
        for (k, &(a, b)) in sector.iter().enumerate() {
            let partner = *position.get(&(b, a))?;
            if a == b {
                rows[k] = vec![(k, c64(1.0, 0.0))];
            } else if a < b {
                rows[k] = vec![(k, c64(h, 0.0)), (partner, c64(h, 0.0))];
                rows[partner] = vec![(k, c64(0.0, h)), (partner, c64(0.0, -h))];
            }
        }
        Some(Self { rows })
    }

    /// `None` when the generator is not real in this basis.
    fn real_null_vector(&self, s: &CMatrix) -> Option<Result<DVector<C64>>> {
        let n = s.nrows();
        let mut left = CMatrix::zeros(n, n);
        for (k, row) in self.rows.iter().enumerate() {
            for &(j, u) in row {
                for c in 0..n {
                    left[(k, c)] += u * s[(j, c)];
                }
            }
        }
        let mut real = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut imag: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (k, row) in self.rows.iter().enumerate() {
            for r in 0..n {
                let v: C64 = row.iter().map(|&(j, u)| left[(r, j)] * u.conj()).sum();
                real[(r, k)] = v.re;
                imag = imag.max(v.im.abs());
                scale = scale.max(v.norm());
            }
        }
        if imag > 1e-12 * scale {
            return None;
        }
        // rates span many decades; unit rows keep the right null space and
        // unit columns only rescale it, and both sharpen the singular gap
        for mut row in real.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        let cols: Vec<f64> = real.column_iter().map(|c| c.norm()).collect();
        for (mut c, norm) in real.column_iter_mut().zip(&cols) {
            if *norm > 0.0 {
                c /= *norm;
            }
        }
        let svd = real.svd(false, true);
        let v_t = svd.v_t.as_ref()?;
        Some(null_index(svd.singular_values.as_slice()).map(|k| {
            let mut x = DVector::<C64>::zeros(n);
            for (i, row) in self.rows.iter().enumerate() {
                for &(j, u) in row {
                    let w = if cols[i] > 0.0 {
                        v_t[(k, i)] / cols[i]
                    } else {
                        v_t[(k, i)]
                    };
                    x[j] += u.conj() * w;
                }
            }
            x
        }))
    }
}

/// Smallest right singular vectors by inverse iteration on `S†S`, applied
/// through LU factors of `S - μ` and its adjoint so that the Gram matrix
/// (whose condition number is squared) is never formed.
fn null_vector_inverse_iteration(s: &CMatrix) -> Result<DVector<C64>> {
    let n = s.ncols();
    let sigma_max = largest_singular_value(s);
    if sigma_max == 0.0 {
        return Err(Error::Degeneracy {
            context: "stationary manifold".into(),
            dimension: n,
        });
    }
    let mut shifted = s.clone();
    for i in 0..n {
        shifted[(i, i)] -= c64(1e-13 * sigma_max, 0.0);
    }
    let forward = shifted.clone().lu();
    let backward = shifted.adjoint().lu();
    let solve = |x: &DVector<C64>| -> Result<DVector<C64>> {
        let y = backward
            .solve(x)
            .ok_or_else(|| Error::Structural("singular shifted generator".into()))?;
        forward
            .solve(&y)
            .ok_or_else(|| Error::Structural("singular shifted generator".into()))
    };
    let iterate = |deflate: Option<&DVector<C64>>| -> Result<DVector<C64>> {
        let project = |x: &mut DVector<C64>| {
            if let Some(v) = deflate {
                let overlap = v.dotc(x);
                *x -= v * overlap;
            }
            let norm = x.norm();
            *x /= c64(norm, 0.0);
        };
        let mut x = DVector::from_fn(n, |i, _| {
            c64(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05)
        });
        project(&mut x);
        for _ in 0..30 {
            x = solve(&x)?;
            project(&mut x);
        }
        Ok(x)
    };
    let first = iterate(None)?;
    let second = iterate(Some(&first))?;
    let threshold = NULL_TOL * sigma_max;
    if (s * &first).norm() > threshold {
        return Err(Error::Structural(format!(
            "generator has no null vector (smallest singular value {:e} of {sigma_max:e})",
            (s * &first).norm()
        )));
    }
    if (s * &second).norm() <= threshold {
        return Err(Error::Degeneracy {
            context: "stationary manifold".into(),
            dimension: 2,
        });
    }
    Ok(first)
}

fn largest_singular_value(s: &CMatrix) -> f64 {
    let n = s.ncols();
    let mut x = DVector::from_element(n, c64(1.0, 0.0)) / c64((n as f64).sqrt(), 0.0);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let y = s.adjoint() * (s * &x);
        let next = y.norm();
        if next == 0.0 {
            return 0.0;
        }
        x = y / c64(next, 0.0);
        let converged = (next - lambda).abs() <= 1e-6 * next;
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.sqrt()
}

/// Largest step accepted by [`evolve`].
pub fn max_step(l: &Liouvillian) -> f64 {
    let rate = l.max_rate();
    if rate > 0.0 {
        0.1 / rate
    } else {
        f64::INFINITY
    }
}

/// Classical fourth-order Runge-Kutta in the rotating frame, calling
/// `observe(t, ρ)` at the start and after every step. Steps are shortened
/// evenly so that the last one lands on `duration`.
pub fn evolve_observed<F>(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    duration: f64,
    dt: f64,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(f64, &CMatrix) -> Result<()>,
{
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Parameter(format!(
            "need dt > 0 and duration >= 0, got dt = {dt}, duration = {duration}"
        )));
    }
    if dt > max_step(l) {
        return Err(Error::Parameter(format!(
            "time step {dt:e} s exceeds the stability bound {:e} s",
            max_step(l)
        )));
    }
    let steps = (duration / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if steps > 0 {
        duration / steps as f64
    } else {
        0.0
    };
    let f = |rho: &CMatrix| l.apply(rho, Frame::Rotating);
    let mut rho = rho0.matrix.clone();
    observe(0.0, &rho)?;
    let half = c64(0.5 * h, 0.0);
    let full = c64(h, 0.0);
    let sixth = c64(h / 6.0, 0.0);
    for step in 1..=steps {
        let k1 = f(&rho);
        let k2 = f(&(&rho + &k1 * half));
        let k3 = f(&(&rho + &k2 * half));
        let k4 = f(&(&rho + &k3 * full));
        rho += (k1 + (k2 + k3) * c64(2.0, 0.0) + k4) * sixth;
        rho = hermitize(&rho);
        observe(step as f64 * h, &rho)?;
    }
    Ok(())
}

/// Like [`evolve_observed`] but collects every state.
pub fn evolve(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    duration: f64,
    dt: f64,
) -> Result<Vec<(f64, DensityMatrix)>> {
    let mut out = Vec::new();
    evolve_observed(l, rho0, duration, dt, |t, rho| {
        out.push((
            t,
            DensityMatrix {
                matrix: rho.clone(),
                dims: rho0.dims.clone(),
            },
        ));
        Ok(())
    })?;
    Ok(out)
}
