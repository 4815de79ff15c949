//! Token influence scores.
//!
//! Three routes compute the same quantity: the linear-time backward
//! recurrence ([`influence_fast`]), the quadratic elementwise sum
//! ([`influence_direct_sum`]) and Frobenius norms of exact Jacobians
//! ([`influence_exact_norms`]). [`fd_jacobian`] is the independent check on
//! the Jacobians themselves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{DenseLtvSequence, DiagonalLtvSequence, InputScaling};

/// Index convention for the transition product between token `k` and output `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdjacencyConvention {
    /// `∏_{i=k+1}^{j-1} Ā_i`: the product is empty for `j = k + 1`.
    #[serde(rename = "empty_product_at_j_eq_k_plus_1")]
    Paper,
    /// `∏_{i=k+1}^{j} Ā_i`: the recurrence's own indexing.
    #[serde(rename = "one_abar_at_j_eq_k_plus_1")]
    Standard,
}

impl AdjacencyConvention {
    /// Last transition index included in the product for output `j`.
    fn product_end(self, j: usize) -> usize {
        match self {
            AdjacencyConvention::Paper => j,
            AdjacencyConvention::Standard => j + 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdjacencyConvention::Paper => "empty_product_at_j_eq_k_plus_1",
            AdjacencyConvention::Standard => "one_abar_at_j_eq_k_plus_1",
        }
    }
}

/// Backward accumulator of future readout mass, one entry per `(channel, state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorState {
    pub p: Vec<f64>,
}

impl PropagatorState {
    pub fn new(channels: usize, state_dim: usize) -> Self {
        Self {
            p: vec![0.0; channels * state_dim],
        }
    }

    /// Folds token `next` into the accumulator so that it describes token `next - 1`.
    fn absorb(&mut self, seq: &DiagonalLtvSequence, next: usize, convention: AdjacencyConvention) {
        let ns = seq.state_dim();
        for d in 0..seq.channels() {
            for n in 0..ns {
                let s = d * ns + n;
                let a = seq.a_bar(next, d, n).abs();
                let c = seq.c(next, d, n).abs();
                self.p[s] = match convention {
                    AdjacencyConvention::Paper => c + a * self.p[s],
                    AdjacencyConvention::Standard => a * (c + self.p[s]),
                };
            }
        }
    }
}

fn mean_over_channels(seq: &DiagonalLtvSequence, per_channel: &[f64]) -> Vec<f64> {
    let dm = seq.channels();
    per_channel
        .chunks(dm)
        .map(|row| row.iter().sum::<f64>() / dm as f64)
        .collect()
}

/// Per-channel scores (`L × Dm`, summed over the state dimension) via the
/// O(L) backward recurrence.
pub fn influence_fast_channels(
    seq: &DiagonalLtvSequence,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Vec<f64> {
    let (len, dm, ns) = (seq.len(), seq.channels(), seq.state_dim());
    let mut out = vec![0.0; len * dm];
    if len == 0 {
        return out;
    }
    let mut prop = PropagatorState::new(dm, ns);
    for k in (0..len).rev() {
        if k + 1 < len {
            prop.absorb(seq, k + 1, convention);
        }
        for d in 0..dm {
            let mut acc = 0.0;
            for n in 0..ns {
                let b = seq.input_gain(k, d, n, scaling).abs();
                let direct = (seq.c(k, d, n) * b).abs();
                let propagated = if k + 1 < len { b * prop.p[d * ns + n] } else { 0.0 };
                acc += direct + propagated;
            }
            out[k * dm + d] = acc;
        }
    }
    out
}

/// Influence score per token: backward recurrence, summed over states and
/// averaged over channels.
pub fn influence_fast(
    seq: &DiagonalLtvSequence,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<Vec<f64>> {
    let scores = mean_over_channels(seq, &influence_fast_channels(seq, scaling, convention));
    ensure_finite(&scores)?;
    Ok(scores)
}

/// Averages [`influence_fast`] over a batch of equally long sequences.
pub fn influence_fast_batch(
    batch: &[DiagonalLtvSequence],
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<Vec<f64>> {
    let Some(first) = batch.first() else {
        return Err(Error::Input("empty batch".into()));
    };
    let len = first.len();
    let mut acc = vec![0.0; len];
    for seq in batch {
        if seq.len() != len {
            return Err(Error::Dimension("batch sequences differ in length".into()));
        }
        for (a, s) in acc.iter_mut().zip(influence_fast(seq, scaling, convention)?) {
            *a += s;
        }
    }
    acc.iter_mut().for_each(|a| *a /= batch.len() as f64);
    Ok(acc)
}

/// Per-channel scores by explicit O(L²) summation of the elementwise terms.
pub fn influence_direct_sum_channels(
    seq: &DiagonalLtvSequence,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Vec<f64> {
    let (len, dm, ns) = (seq.len(), seq.channels(), seq.state_dim());
    let mut out = vec![0.0; len * dm];
    for k in 0..len {
        for d in 0..dm {
            let mut acc = 0.0;
            for n in 0..ns {
                let b = seq.input_gain(k, d, n, scaling).abs();
                acc += (seq.c(k, d, n) * b).abs();
                for j in k + 1..len {
                    let mut prod = 1.0;
                    for i in k + 1..convention.product_end(j) {
                        prod *= seq.a_bar(i, d, n).abs();
                    }
                    acc += seq.c(j, d, n).abs() * prod * b;
                }
            }
            out[k * dm + d] = acc;
        }
    }
    out
}

pub fn influence_direct_sum(
    seq: &DiagonalLtvSequence,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<Vec<f64>> {
    let scores = mean_over_channels(seq, &influence_direct_sum_channels(seq, scaling, convention));
    ensure_finite(&scores)?;
    Ok(scores)
}

fn ensure_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite influence score at token {i}"))),
        None => Ok(()),
    }
}

fn check_order(k: usize, j: usize, len: usize) -> Result<()> {
    if k > j {
        return Err(Error::Ordering { k, j });
    }
    if j >= len {
        return Err(Error::Input(format!("output index {j} out of range for length {len}")));
    }
    Ok(())
}

/// Signed transfer `∂y_j[d]/∂u_k[d]` of one channel of a diagonal sequence.
pub fn jacobian_channel(
    seq: &DiagonalLtvSequence,
    k: usize,
    j: usize,
    d: usize,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<f64> {
    check_order(k, j, seq.len())?;
    let ns = seq.state_dim();
    let mut acc = 0.0;
    for n in 0..ns {
        let b = seq.input_gain(k, d, n, scaling);
        let prod: f64 = if j == k {
            1.0
        } else {
            (k + 1..convention.product_end(j)).map(|i| seq.a_bar(i, d, n)).product()
        };
        acc += seq.c(j, d, n) * prod * b;
    }
    if j == k {
        acc += seq.d_skip(d);
    }
    Ok(acc)
}

/// Exact Jacobian `∂y_j/∂u_k` of a diagonal sequence (a `Dm × Dm` diagonal matrix).
pub fn jacobian_exact(
    seq: &DiagonalLtvSequence,
    k: usize,
    j: usize,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<DMatrix<f64>> {
    check_order(k, j, seq.len())?;
    let dm = seq.channels();
    let mut m = DMatrix::zeros(dm, dm);
    for d in 0..dm {
        m[(d, d)] = jacobian_channel(seq, k, j, d, scaling, convention)?;
    }
    Ok(m)
}

/// Exact Jacobian `∂y_j/∂u_k` (`P × M`) of a dense time-varying sequence.
pub fn jacobian_exact_dense(
    seq: &DenseLtvSequence,
    k: usize,
    j: usize,
    convention: AdjacencyConvention,
) -> Result<DMatrix<f64>> {
    check_order(k, j, seq.len())?;
    if j == k {
        return Ok(&seq.c[k] * &seq.b_bar[k] + &seq.d[k]);
    }
    // Propagate B̄_k forward through Ā_{k+1}, …, then read out with C_j.
    let mut m = seq.b_bar[k].clone();
    for i in k + 1..convention.product_end(j) {
        m = &seq.a_bar[i] * m;
    }
    Ok(&seq.c[j] * m)
}

/// `Σ_{j≥k} ‖∂y_j/∂u_k‖_F` for a diagonal sequence.
pub fn influence_exact_norms(
    seq: &DiagonalLtvSequence,
    k: usize,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<f64> {
    check_order(k, k, seq.len())?;
    (k..seq.len())
        .map(|j| jacobian_exact(seq, k, j, scaling, convention).map(|m| m.norm()))
        .sum()
}

pub fn influence_exact_norms_dense(
    seq: &DenseLtvSequence,
    k: usize,
    convention: AdjacencyConvention,
) -> Result<f64> {
    check_order(k, k, seq.len())?;
    (k..seq.len())
        .map(|j| jacobian_exact_dense(seq, k, j, convention).map(|m| m.norm()))
        .sum()
}

/// `Σ_{j≥k} |∂y_j[d]/∂u_k[d]|` for one channel (the signed-Jacobian
/// counterpart of the elementwise absolute-value score).
pub fn exact_channel_magnitude(
    seq: &DiagonalLtvSequence,
    k: usize,
    d: usize,
    scaling: InputScaling,
    convention: AdjacencyConvention,
) -> Result<f64> {
    (k..seq.len())
        .map(|j| jacobian_channel(seq, k, j, d, scaling, convention).map(f64::abs))
        .sum()
}

/// Central-difference Jacobian of `f` with respect to the `input_dim`
/// components of token `k` in the flattened input `u`.
///
/// Returns a `f(u).len() × input_dim` matrix.
pub fn fd_jacobian<F>(f: F, u: &[f64], k: usize, input_dim: usize, epsilon: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(1e-6..=1e-2).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [1e-6, 1e-2]")));
    }
    if (k + 1) * input_dim > u.len() {
        return Err(Error::Dimension(format!("token {k} out of range")));
    }
    let mut cols = Vec::with_capacity(input_dim);
    let mut probe = u.to_vec();
    for m in 0..input_dim {
        let idx = k * input_dim + m;
        probe[idx] = u[idx] + epsilon;
        let plus = f(&probe)?;
        probe[idx] = u[idx] - epsilon;
        let minus = f(&probe)?;
        probe[idx] = u[idx];
        if plus.len() != minus.len() {
            return Err(Error::Dimension("function output length changed".into()));
        }
        let col: Vec<f64> = plus.iter().zip(&minus).map(|(p, q)| (p - q) / (2.0 * epsilon)).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite finite-difference output".into()));
        }
        cols.push(col);
    }
    let rows = cols.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows, input_dim, |r, c| cols[c][r]))
}

/// Rows `j·P .. (j+1)·P` of a stacked finite-difference Jacobian.
pub fn output_block(stacked: &DMatrix<f64>, j: usize, output_dim: usize) -> DMatrix<f64> {
    stacked.rows(j * output_dim, output_dim).into_owned()
}

/// Arithmetic mean over the layer axis.
pub fn aggregate_layers(per_layer: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = per_layer.first() else {
        return Err(Error::Input("at least one layer is required".into()));
    };
    let len = first.len();
    if per_layer.iter().any(|l| l.len() != len) {
        return Err(Error::Dimension("ragged per-layer scores".into()));
    }
    let nl = per_layer.len() as f64;
    Ok((0..len)
        .map(|t| per_layer.iter().map(|l| l[t]).sum::<f64>() / nl)
        .collect())
}

/// Influence of every token at every layer plus the layer mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceProfile {
    pub per_layer: Vec<Vec<f64>>,
    pub holistic: Vec<f64>,
    pub token_ids: Vec<u32>,
    pub generated_from: usize,
    pub scaling_mode: InputScaling,
    pub adjacency_convention: AdjacencyConvention,
}

impl InfluenceProfile {
    /// Scores each layer's captured sequence with [`influence_fast`] and averages.
    pub fn from_sequences(
        layers: &[&DiagonalLtvSequence],
        token_ids: Vec<u32>,
        generated_from: usize,
        scaling: InputScaling,
        convention: AdjacencyConvention,
    ) -> Result<Self> {
        let per_layer = layers
            .iter()
            .map(|seq| {
                if seq.len() != token_ids.len() {
                    return Err(Error::Dimension(format!(
                        "captured length {} differs from {} tokens",
                        seq.len(),
                        token_ids.len()
                    )));
                }
                influence_fast(seq, scaling, convention)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layer_scores(per_layer, token_ids, generated_from, scaling, convention)
    }

    pub fn from_layer_scores(
        per_layer: Vec<Vec<f64>>,
        token_ids: Vec<u32>,
        generated_from: usize,
        scaling: InputScaling,
        convention: AdjacencyConvention,
    ) -> Result<Self> {
        let holistic = aggregate_layers(&per_layer)?;
        if holistic.len() != token_ids.len() {
            return Err(Error::Dimension("scores and token ids differ in length".into()));
        }
        if per_layer.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric("influence scores must be finite and non-negative".into()));
        }
        let generated_from = generated_from.min(holistic.len());
        Ok(Self {
            per_layer,
            holistic,
            token_ids,
            generated_from,
            scaling_mode: scaling,
            adjacency_convention: convention,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.per_layer.len()
    }

    pub fn len(&self) -> usize {
        self.holistic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holistic.is_empty()
    }

    /// Mean of the holistic score over all tokens; `None` when empty.
    pub fn mean_influence(&self) -> Option<f64> {
        mean(&self.holistic)
    }

    /// Keeps only the listed layers (in the given order).
    pub fn select_layers(&self, layers: &[usize]) -> Result<Self> {
        let per_layer = layers
            .iter()
            .map(|&l| {
                self.per_layer
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("layer {l} out of range (n_layers={})", self.n_layers())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layer_scores(
            per_layer,
            self.token_ids.clone(),
            self.generated_from,
            self.scaling_mode,
            self.adjacency_convention,
        )
    }
}

pub(crate) fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{forward_scan_diagonal, DenseLtvSequence};

    const PAPER: AdjacencyConvention = AdjacencyConvention::Paper;
    const STANDARD: AdjacencyConvention = AdjacencyConvention::Standard;
    const RAW: InputScaling = InputScaling::Raw;

    fn scalar(a: &[f64], b: &[f64], c: &[f64]) -> DiagonalLtvSequence {
        DiagonalLtvSequence::from_abc(a.len(), 1, 1, a.to_vec(), b.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn direct_term_only_for_single_token() {
        let seq = DiagonalLtvSequence::from_abc(1, 1, 2, vec![0.3, 0.9], vec![3.0, -4.0], vec![1.0, -2.0]).unwrap();
        assert_eq!(influence_fast(&seq, RAW, PAPER).unwrap(), vec![11.0]);
        assert_eq!(influence_direct_sum(&seq, RAW, PAPER).unwrap(), vec![11.0]);
    }

    #[test]
    fn hand_unrolled_recurrence() {
        let seq = scalar(&[0.5; 3], &[1.0; 3], &[1.0; 3]);
        assert_eq!(influence_fast(&seq, RAW, PAPER).unwrap(), vec![2.5, 2.0, 1.0]);
        assert_eq!(influence_direct_sum(&seq, RAW, PAPER).unwrap(), vec![2.5, 2.0, 1.0]);
    }

    #[test]
    fn hand_unrolled_standard_convention() {
        // k=1: 1 + 0.5; k=0: 1 + 0.5 + 0.25
        let seq = scalar(&[0.5; 3], &[1.0; 3], &[1.0; 3]);
        assert_eq!(influence_fast(&seq, RAW, STANDARD).unwrap(), vec![1.75, 1.5, 1.0]);
        assert_eq!(influence_direct_sum(&seq, RAW, STANDARD).unwrap(), vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn zero_input_map() {
        let seq = scalar(&[0.5; 4], &[0.0; 4], &[1.0; 4]);
        assert!(influence_fast(&seq, RAW, PAPER).unwrap().iter().all(|&v| v == 0.0));
        assert!(influence_direct_sum(&seq, RAW, PAPER).unwrap().iter().all(|&v| v == 0.0));
        for k in 0..4 {
            assert_eq!(influence_exact_norms(&seq, k, RAW, STANDARD).unwrap(), 0.0);
        }
    }

    #[test]
    fn empty_sequence_scores_empty() {
        let seq = DiagonalLtvSequence::from_abc(0, 2, 3, vec![], vec![], vec![]).unwrap();
        assert!(influence_fast(&seq, RAW, PAPER).unwrap().is_empty());
        assert!(influence_direct_sum(&seq, RAW, PAPER).unwrap().is_empty());
    }

    #[test]
    fn zero_transition_keeps_adjacent_term() {
        let b = [0.7, -1.2, 2.0];
        let c = [1.5, 0.4, -0.9];
        let seq = scalar(&[0.0; 3], &b, &c);
        let s = influence_direct_sum(&seq, RAW, PAPER).unwrap();
        for k in 0..2 {
            let expect = (c[k] * b[k]).abs() + (c[k + 1] * b[k]).abs();
            assert!((s[k] - expect).abs() < 1e-15);
        }
        assert!((s[2] - (c[2] * b[2]).abs()).abs() < 1e-15);
        assert_eq!(influence_fast(&seq, RAW, PAPER).unwrap(), s);
    }

    #[test]
    fn homogeneous_in_b() {
        let seq = scalar(&[0.3, -0.6, 0.8, 0.1], &[0.4, -0.2, 1.1, 0.5], &[1.0, 0.7, -0.3, 0.2]);
        let scaled = seq.with_b(seq.b_slice().iter().map(|v| v * 2.5).collect()).unwrap();
        let s0 = influence_direct_sum(&seq, RAW, PAPER).unwrap();
        let s1 = influence_direct_sum(&scaled, RAW, PAPER).unwrap();
        for (x, y) in s0.iter().zip(&s1) {
            assert!((y - 2.5 * x).abs() < 1e-13);
        }
    }

    #[test]
    fn jacobian_conventions_differ_on_hand_case() {
        let seq = scalar(&[0.5; 3], &[1.0; 3], &[1.0; 3]);
        let std = jacobian_exact(&seq, 0, 2, RAW, STANDARD).unwrap()[(0, 0)];
        let paper = jacobian_exact(&seq, 0, 2, RAW, PAPER).unwrap()[(0, 0)];
        assert_eq!(std, 0.25);
        assert_eq!(paper, 0.5);
    }

    #[test]
    fn direct_jacobian_includes_feedthrough() {
        let seq = DiagonalLtvSequence::new(1, 1, 1, vec![0.5], vec![2.0], vec![3.0], vec![1.0], vec![0.5]).unwrap();
        assert_eq!(jacobian_exact(&seq, 0, 0, RAW, STANDARD).unwrap()[(0, 0)], 6.5);
        let nod = scalar(&[0.5], &[2.0], &[3.0]);
        assert_eq!(jacobian_exact(&nod, 0, 0, RAW, STANDARD).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn ordering_error() {
        let seq = scalar(&[0.5; 3], &[1.0; 3], &[1.0; 3]);
        assert!(matches!(jacobian_exact(&seq, 2, 1, RAW, STANDARD), Err(Error::Ordering { k: 2, j: 1 })));
    }

    #[test]
    fn fd_matches_exact_on_scalar_scan() {
        let seq = scalar(&[0.9, -0.4, 0.6, 0.2], &[0.5, 1.0, -0.7, 0.3], &[1.2, -0.8, 0.4, 1.0]);
        let u = [0.3, -0.1, 0.8, 0.5];
        let f = |x: &[f64]| forward_scan_diagonal(&seq, x, None, RAW).map(|r| r.outputs);
        for k in 0..4 {
            let fd = fd_jacobian(f, &u, k, 1, 1e-3).unwrap();
            for j in k..4 {
                let exact = jacobian_exact(&seq, k, j, RAW, STANDARD).unwrap()[(0, 0)];
                assert!((fd[(j, 0)] - exact).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fd_step_halving_is_stable_for_linear_maps() {
        let seq = scalar(&[0.9, 0.4, 0.6], &[0.5, 1.0, -0.7], &[1.2, -0.8, 0.4]);
        let u = [0.3, -0.1, 0.8];
        let f = |x: &[f64]| forward_scan_diagonal(&seq, x, None, RAW).map(|r| r.outputs);
        let a = fd_jacobian(f, &u, 0, 1, 2e-3).unwrap();
        let b = fd_jacobian(f, &u, 0, 1, 1e-3).unwrap();
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn fd_rejects_bad_epsilon() {
        let f = |x: &[f64]| Ok(x.to_vec());
        assert!(fd_jacobian(f, &[1.0], 0, 1, 0.5).is_err());
        assert!(fd_jacobian(f, &[1.0], 0, 1, 1e-9).is_err());
        let nan = |_: &[f64]| Ok(vec![f64::NAN]);
        assert!(matches!(fd_jacobian(nan, &[1.0], 0, 1, 1e-3), Err(Error::Numeric(_))));
    }

    #[test]
    fn dense_jacobian_matches_diagonal_embedding() {
        let seq = DiagonalLtvSequence::from_abc(
            3,
            2,
            2,
            (0..12).map(|i| 0.1 * i as f64 - 0.5).collect(),
            (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect(),
            (0..12).map(|i| 0.3 * ((i * 3) % 4) as f64).collect(),
        )
        .unwrap();
        let dense: DenseLtvSequence = seq.to_dense(RAW);
        for conv in [PAPER, STANDARD] {
            for k in 0..3 {
                for j in k..3 {
                    let a = jacobian_exact(&seq, k, j, RAW, conv).unwrap();
                    let b = jacobian_exact_dense(&dense, k, j, conv).unwrap();
                    assert!((a - b).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn exact_norms_equal_abs_score_for_nonnegative_single_channel() {
        let seq = DiagonalLtvSequence::from_abc(
            4,
            1,
            3,
            vec![0.2, 0.5, 0.9, 0.1, 0.4, 0.3, 0.7, 0.6, 0.8, 0.5, 0.5, 0.5],
            vec![1.0, 0.3, 0.2, 0.5, 0.6, 0.1, 0.7, 0.2, 0.9, 0.4, 0.4, 0.4],
            vec![0.3, 0.8, 0.5, 0.2, 0.1, 0.9, 0.6, 0.4, 0.3, 0.7, 0.2, 0.1],
        )
        .unwrap();
        let abs = influence_direct_sum(&seq, RAW, PAPER).unwrap();
        for (k, expect) in abs.iter().enumerate() {
            let v = influence_exact_norms(&seq, k, RAW, PAPER).unwrap();
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_layers(&[vec![1.0, 2.0, 3.0]]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(aggregate_layers(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(aggregate_layers(&[vec![0.0, 2.0], vec![2.0]]), Err(Error::Dimension(_))));
        assert!(aggregate_layers(&[]).is_err());
    }

    #[test]
    fn aggregate_many_layers() {
        let layers: Vec<Vec<f64>> = (0..24).map(|l| vec![l as f64, 2.0 * l as f64, 1.0]).collect();
        let h = aggregate_layers(&layers).unwrap();
        assert!((h[0] - 11.5).abs() < 1e-12);
        assert!((h[1] - 23.0).abs() < 1e-12);
        assert!((h[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_mean() {
        let a = scalar(&[0.5; 3], &[1.0; 3], &[1.0; 3]);
        let b = scalar(&[0.5; 3], &[3.0; 3], &[1.0; 3]);
        let m = influence_fast_batch(&[a, b], RAW, PAPER).unwrap();
        assert_eq!(m, vec![5.0, 4.0, 2.0]);
    }

    #[test]
    fn profile_layer_selection() {
        let p = InfluenceProfile::from_layer_scores(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]],
            vec![7, 9],
            1,
            RAW,
            PAPER,
        )
        .unwrap();
        assert_eq!(p.holistic, vec![3.0, 2.0]);
        let q = p.select_layers(&[0, 2]).unwrap();
        assert_eq!(q.holistic, vec![3.0, 1.0]);
        assert!(p.select_layers(&[5]).is_err());
    }
}
