//! Controllability and observability: Kalman matrices, numerical rank and
//! Gramians (closed form, quadrature and discrete sums).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::DenseLtiSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianKind {
    Controllability,
    Observability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianMethod {
    ClosedFormDiagonal,
    QuadratureDense,
    DiscreteSum,
}

/// Exponent orientation of the controllability integrand.
///
/// `AsWritten` integrates `e^{A(t0-τ)} B Bᵀ e^{Aᵀ(t0-τ)}`; `Standard` is the
/// reachability form `e^{A(tf-τ)} B Bᵀ e^{Aᵀ(tf-τ)}`. The observability
/// integrand `e^{Aᵀ(τ-t0)} CᵀC e^{A(τ-t0)}` is the same under both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    AsWritten,
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianResult {
    pub matrix: DMatrix<f64>,
    pub horizon: (f64, f64),
    pub kind: GramianKind,
    pub method: GramianMethod,
    pub orientation: Orientation,
}

impl GramianResult {
    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }
}

/// `[B, AB, A²B, …, A^{N-1}B]`.
pub fn controllability_matrix(sys: &DenseLtiSystem) -> DMatrix<f64> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = sys.b().clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = sys.a() * block;
    }
    out
}

/// `[C; CA; …; CA^{N-1}]`.
pub fn observability_matrix(sys: &DenseLtiSystem) -> DMatrix<f64> {
    let (n, p) = (sys.state_dim(), sys.output_dim());
    let mut out = DMatrix::zeros(n * p, n);
    let mut block = sys.c().clone();
    for i in 0..n {
        out.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block *= sys.a();
    }
    out
}

/// Default relative tolerance for rank decisions: `1e-10 · max(rows, cols)`.
pub fn default_rank_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-10 * m.nrows().max(m.ncols()).max(1) as f64
}

/// Number of singular values above `tol_rel` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, tol_rel: f64) -> Result<usize> {
    if !(tol_rel > 0.0 && tol_rel < 1.0) {
        return Err(Error::Domain(format!("rank tolerance {tol_rel} outside (0,1)")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    if m.is_empty() {
        return Ok(0);
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol_rel * smax).count())
}

/// `∫_0^T e^{s t} dt`, with the `s → 0` limit `T`.
fn phi(s: f64, t: f64) -> f64 {
    if (s * t).abs() < 1e-12 {
        t * (1.0 + 0.5 * s * t)
    } else {
        (s * t).exp_m1() / s
    }
}

fn gramian_core(kind: GramianKind, b_or_c: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        GramianKind::Controllability => b_or_c * b_or_c.transpose(),
        GramianKind::Observability => b_or_c.transpose() * b_or_c,
    }
}

/// Closed-form Gramian over `[0, T]` for `A = diag(a)`.
///
/// `b_or_c` is `B` (`N × M`) for controllability or `C` (`P × N`) for
/// observability.
pub fn gramian_ct_diagonal(
    a: &[f64],
    b_or_c: &DMatrix<f64>,
    horizon: f64,
    kind: GramianKind,
    orientation: Orientation,
) -> Result<GramianResult> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if a.iter().chain(b_or_c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite system entries".into()));
    }
    let n = a.len();
    let core = gramian_core(kind, b_or_c);
    if core.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "{:?} map does not match state dimension {n}",
            kind
        )));
    }
    let sign = match (kind, orientation) {
        (GramianKind::Controllability, Orientation::AsWritten) => -1.0,
        _ => 1.0,
    };
    let matrix = DMatrix::from_fn(n, n, |i, j| core[(i, j)] * phi(sign * (a[i] + a[j]), horizon));
    Ok(GramianResult {
        matrix,
        horizon: (0.0, horizon),
        kind,
        method: GramianMethod::ClosedFormDiagonal,
        orientation,
    })
}

/// Integrand at offset `s = τ - t0` of a `[t0, t0 + T]` horizon.
fn integrand(sys: &DenseLtiSystem, s: f64, span: f64, kind: GramianKind, orientation: Orientation) -> DMatrix<f64> {
    match kind {
        GramianKind::Controllability => {
            let arg = match orientation {
                Orientation::AsWritten => -s,
                Orientation::Standard => span - s,
            };
            let e = (sys.a() * arg).exp();
            let eb = &e * sys.b();
            &eb * eb.transpose()
        }
        GramianKind::Observability => {
            let e = (sys.a() * s).exp();
            let ce = sys.c() * &e;
            ce.transpose() * ce
        }
    }
}

/// Composite Simpson approximation of the Gramian integral on `[t0, tf]`.
///
/// An odd `steps` is rounded up to the next even count.
pub fn gramian_quadrature_dense(
    sys: &DenseLtiSystem,
    t0: f64,
    tf: f64,
    steps: usize,
    kind: GramianKind,
    orientation: Orientation,
) -> Result<GramianResult> {
    if steps < 2 {
        return Err(Error::Domain("quadrature needs at least 2 steps".into()));
    }
    if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
        return Err(Error::Domain(format!("invalid horizon [{t0}, {tf}]")));
    }
    let steps = steps + steps % 2;
    let span = tf - t0;
    let h = span / steps as f64;
    let n = sys.state_dim();
    let mut acc = DMatrix::zeros(n, n);
    for i in 0..=steps {
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += integrand(sys, i as f64 * h, span, kind, orientation) * w;
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("Gramian integrand diverged at node {i}")));
        }
    }
    acc *= h / 3.0;
    let matrix = (&acc + acc.transpose()) * 0.5;
    Ok(GramianResult {
        matrix,
        horizon: (t0, tf),
        kind,
        method: GramianMethod::QuadratureDense,
        orientation,
    })
}

/// Discrete-time Gramian of a time-varying sequence.
///
/// Controllability: `Σ_k Φ_k B_k B_kᵀ Φ_kᵀ` with `Φ_k = Ā_{L-1}⋯Ā_{k+1}`
/// (reachability of the final state). Observability:
/// `Σ_k Ψ_kᵀ C_kᵀ C_k Ψ_k` with `Ψ_k = Ā_k⋯Ā_1` (`Ψ_0 = I`).
pub fn gramian_discrete_sum(
    a_bar: &[DMatrix<f64>],
    b_or_c: &[DMatrix<f64>],
    kind: GramianKind,
) -> Result<GramianResult> {
    let len = a_bar.len();
    if len == 0 || b_or_c.len() != len {
        return Err(Error::Dimension("sequences must be non-empty and equally long".into()));
    }
    let n = a_bar[0].nrows();
    for k in 0..len {
        if a_bar[k].shape() != (n, n) {
            return Err(Error::Dimension(format!("A_bar[{k}] is not {n}x{n}")));
        }
        let ok = match kind {
            GramianKind::Controllability => b_or_c[k].nrows() == n,
            GramianKind::Observability => b_or_c[k].ncols() == n,
        };
        if !ok {
            return Err(Error::Dimension(format!("input/output map {k} does not match state dim")));
        }
    }
    if a_bar.iter().chain(b_or_c).flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sequence entries".into()));
    }
    let mut acc = DMatrix::zeros(n, n);
    match kind {
        GramianKind::Controllability => {
            let mut phi = DMatrix::identity(n, n);
            for k in (0..len).rev() {
                let pb = &phi * &b_or_c[k];
                acc += &pb * pb.transpose();
                phi = &phi * &a_bar[k];
            }
        }
        GramianKind::Observability => {
            let mut psi = DMatrix::identity(n, n);
            for k in 0..len {
                if k > 0 {
                    psi = &a_bar[k] * &psi;
                }
                let cp = &b_or_c[k] * &psi;
                acc += cp.transpose() * cp;
            }
        }
    }
    let matrix = (&acc + acc.transpose()) * 0.5;
    Ok(GramianResult {
        matrix,
        horizon: (0.0, len as f64),
        kind,
        method: GramianMethod::DiscreteSum,
        orientation: Orientation::Standard,
    })
}
