//! State-space representations, zero-order-hold discretization and forward scans.
//!
//! Naming follows the control convention used across the crate: `u` is the
//! input, `h` the latent state and `y` the output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-token input vector enters the recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum InputScaling {
    /// `h_k = Ā_k h_{k-1} + B_k u_k`, the raw projection.
    #[default]
    #[serde(rename = "raw_b")]
    Raw,
    /// `h_k = Ā_k h_{k-1} + Δ_k B_k u_k`, simplified ZOH on `B`.
    #[serde(rename = "delta_scaled_b")]
    DeltaScaled,
}

impl InputScaling {
    pub fn as_str(self) -> &'static str {
        match self {
            InputScaling::Raw => "raw_b",
            InputScaling::DeltaScaled => "delta_scaled_b",
        }
    }
}

/// Continuous-time linear time-invariant system `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl DenseLtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}xM, got {}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!("C must be Px{n}, got {}x{}", c.nrows(), c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D must be {}x{}, got {}x{}",
                c.nrows(),
                b.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// System with zero feedthrough.
    pub fn without_feedthrough(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Per-token, per-channel diagonal discrete parameters of a selective scan.
///
/// Arrays are row-major: `a_bar`, `b`, `c` are `L × Dm × N`, `delta` is
/// `L × Dm`, `d_skip` is `Dm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalLtvSequence {
    len: usize,
    channels: usize,
    state_dim: usize,
    a_bar: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    delta: Vec<f64>,
    d_skip: Vec<f64>,
}

impl DiagonalLtvSequence {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        len: usize,
        channels: usize,
        state_dim: usize,
        a_bar: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        delta: Vec<f64>,
        d_skip: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || state_dim == 0 {
            return Err(Error::Dimension("channels and state_dim must be positive".into()));
        }
        let full = len * channels * state_dim;
        for (name, v, want) in [
            ("a_bar", &a_bar, full),
            ("b", &b, full),
            ("c", &c, full),
            ("delta", &delta, len * channels),
            ("d_skip", &d_skip, channels),
        ] {
            if v.len() != want {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, expected {want}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("{name} has non-finite entries")));
            }
        }
        if delta.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("delta must be strictly positive".into()));
        }
        Ok(Self {
            len,
            channels,
            state_dim,
            a_bar,
            b,
            c,
            delta,
            d_skip,
        })
    }

    /// Sequence with unit timestep and no feedthrough, handy when only
    /// `(Ā, B, C)` matter.
    pub fn from_abc(
        len: usize,
        channels: usize,
        state_dim: usize,
        a_bar: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            len,
            channels,
            state_dim,
            a_bar,
            b,
            c,
            vec![1.0; len * channels],
            vec![0.0; channels],
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    #[inline]
    pub(crate) fn idx(&self, k: usize, d: usize, n: usize) -> usize {
        (k * self.channels + d) * self.state_dim + n
    }

    #[inline]
    pub fn a_bar(&self, k: usize, d: usize, n: usize) -> f64 {
        self.a_bar[self.idx(k, d, n)]
    }
    #[inline]
    pub fn b(&self, k: usize, d: usize, n: usize) -> f64 {
        self.b[self.idx(k, d, n)]
    }
    #[inline]
    pub fn c(&self, k: usize, d: usize, n: usize) -> f64 {
        self.c[self.idx(k, d, n)]
    }
    #[inline]
    pub fn delta(&self, k: usize, d: usize) -> f64 {
        self.delta[k * self.channels + d]
    }
    #[inline]
    pub fn d_skip(&self, d: usize) -> f64 {
        self.d_skip[d]
    }

    /// Input gain `B̄[k,d,n]` under the chosen scaling.
    #[inline]
    pub fn input_gain(&self, k: usize, d: usize, n: usize, scaling: InputScaling) -> f64 {
        match scaling {
            InputScaling::Raw => self.b(k, d, n),
            InputScaling::DeltaScaled => self.delta(k, d) * self.b(k, d, n),
        }
    }

    pub fn a_bar_slice(&self) -> &[f64] {
        &self.a_bar
    }
    pub fn b_slice(&self) -> &[f64] {
        &self.b
    }
    pub fn c_slice(&self) -> &[f64] {
        &self.c
    }
    pub fn delta_slice(&self) -> &[f64] {
        &self.delta
    }
    pub fn d_skip_slice(&self) -> &[f64] {
        &self.d_skip
    }

    /// Copy with `b` replaced, e.g. to zero the input map on chosen tokens.
    pub fn with_b(&self, b: Vec<f64>) -> Result<Self> {
        Self::new(
            self.len,
            self.channels,
            self.state_dim,
            self.a_bar.clone(),
            b,
            self.c.clone(),
            self.delta.clone(),
            self.d_skip.clone(),
        )
    }

    /// Embed into a dense time-varying system with state `Dm·N`, input and
    /// output `Dm` (block-diagonal per channel).
    pub fn to_dense(&self, scaling: InputScaling) -> DenseLtvSequence {
        let (dm, ns) = (self.channels, self.state_dim);
        let big = dm * ns;
        let mut seq = DenseLtvSequence {
            a_bar: Vec::with_capacity(self.len),
            b_bar: Vec::with_capacity(self.len),
            c: Vec::with_capacity(self.len),
            d: Vec::with_capacity(self.len),
        };
        for k in 0..self.len {
            let mut a = DMatrix::zeros(big, big);
            let mut b = DMatrix::zeros(big, dm);
            let mut c = DMatrix::zeros(dm, big);
            for d in 0..dm {
                for n in 0..ns {
                    let s = d * ns + n;
                    a[(s, s)] = self.a_bar(k, d, n);
                    b[(s, d)] = self.input_gain(k, d, n, scaling);
                    c[(d, s)] = self.c(k, d, n);
                }
            }
            let dmat = DMatrix::from_diagonal(&DVector::from_column_slice(&self.d_skip));
            seq.a_bar.push(a);
            seq.b_bar.push(b);
            seq.c.push(c);
            seq.d.push(dmat);
        }
        seq
    }
}

/// Dense linear time-varying system, one `(Ā_k, B̄_k, C_k, D_k)` per token.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLtvSequence {
    pub a_bar: Vec<DMatrix<f64>>,
    pub b_bar: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
}

impl DenseLtvSequence {
    /// Builds a sequence and checks that every token's matrices agree in shape.
    pub fn new(
        a_bar: Vec<DMatrix<f64>>,
        b_bar: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        d: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let len = a_bar.len();
        if b_bar.len() != len || c.len() != len {
            return Err(Error::Dimension("A_bar, B_bar and C sequences differ in length".into()));
        }
        let d = match d {
            Some(d) => d,
            None => (0..len)
                .map(|k| DMatrix::zeros(c[k].nrows(), b_bar[k].ncols()))
                .collect(),
        };
        if d.len() != len {
            return Err(Error::Dimension("D sequence length mismatch".into()));
        }
        let seq = Self { a_bar, b_bar, c, d };
        if len > 0 {
            let (n, m, p) = (seq.a_bar[0].nrows(), seq.b_bar[0].ncols(), seq.c[0].nrows());
            for k in 0..len {
                let ok = seq.a_bar[k].shape() == (n, n)
                    && seq.b_bar[k].shape() == (n, m)
                    && seq.c[k].shape() == (p, n)
                    && seq.d[k].shape() == (p, m);
                if !ok {
                    return Err(Error::Dimension(format!("inconsistent shapes at token {k}")));
                }
            }
        }
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.a_bar.len()
    }
    pub fn is_empty(&self) -> bool {
        self.a_bar.is_empty()
    }
    pub fn state_dim(&self) -> usize {
        self.a_bar.first().map_or(0, |a| a.nrows())
    }
    pub fn input_dim(&self) -> usize {
        self.b_bar.first().map_or(0, |b| b.ncols())
    }
    pub fn output_dim(&self) -> usize {
        self.c.first().map_or(0, |c| c.nrows())
    }
}

/// Hidden states and per-channel outputs of a diagonal scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub len: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub scaling: InputScaling,
    /// `L × Dm × N`.
    pub states: Vec<f64>,
    /// `L × Dm`.
    pub outputs: Vec<f64>,
}

impl ScanResult {
    pub fn state(&self, k: usize, d: usize, n: usize) -> f64 {
        self.states[(k * self.channels + d) * self.state_dim + n]
    }
    pub fn output(&self, k: usize, d: usize) -> f64 {
        self.outputs[k * self.channels + d]
    }
}

/// Zero-order-hold discretization of a diagonal continuous `A`:
/// `Ā[k,d,n] = exp(Δ[k,d] · A[d,n])`.
///
/// `a_cont` is `Dm × N`, `delta` is `L × Dm`. A zero timestep is accepted and
/// yields the identity; negative or non-finite inputs are rejected.
pub fn discretize_zoh(a_cont: &[f64], delta: &[f64], channels: usize, state_dim: usize) -> Result<Vec<f64>> {
    if a_cont.len() != channels * state_dim {
        return Err(Error::Dimension(format!(
            "A has {} entries, expected {}",
            a_cont.len(),
            channels * state_dim
        )));
    }
    if channels == 0 || delta.len() % channels != 0 {
        return Err(Error::Dimension("delta length is not a multiple of channels".into()));
    }
    if a_cont.iter().chain(delta).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input to discretization".into()));
    }
    if delta.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("timestep must be non-negative".into()));
    }
    let len = delta.len() / channels;
    let mut out = Vec::with_capacity(len * channels * state_dim);
    for k in 0..len {
        for d in 0..channels {
            let dt = delta[k * channels + d];
            for n in 0..state_dim {
                out.push((dt * a_cont[d * state_dim + n]).exp());
            }
        }
    }
    Ok(out)
}

/// Runs the diagonal recurrence `h_k = Ā_k ⊙ h_{k-1} + B̄_k u_k`,
/// `y_k = Σ_n C_k h_k + D u_k` channel by channel.
///
/// `u` is `L × Dm`; `h0` is `Dm × N` and defaults to zero.
pub fn forward_scan_diagonal(
    seq: &DiagonalLtvSequence,
    u: &[f64],
    h0: Option<&[f64]>,
    scaling: InputScaling,
) -> Result<ScanResult> {
    let (len, dm, ns) = (seq.len(), seq.channels(), seq.state_dim());
    if u.len() != len * dm {
        return Err(Error::Dimension(format!("u has {} entries, expected {}", u.len(), len * dm)));
    }
    let mut h = match h0 {
        Some(h0) if h0.len() != dm * ns => {
            return Err(Error::Dimension(format!("h0 has {} entries, expected {}", h0.len(), dm * ns)))
        }
        Some(h0) => h0.to_vec(),
        None => vec![0.0; dm * ns],
    };
    let mut states = Vec::with_capacity(len * dm * ns);
    let mut outputs = Vec::with_capacity(len * dm);
    for k in 0..len {
        for d in 0..dm {
            let uk = u[k * dm + d];
            let mut y = seq.d_skip(d) * uk;
            for n in 0..ns {
                let s = d * ns + n;
                h[s] = seq.a_bar(k, d, n) * h[s] + seq.input_gain(k, d, n, scaling) * uk;
                y += seq.c(k, d, n) * h[s];
            }
            outputs.push(y);
        }
        states.extend_from_slice(&h);
    }
    Ok(ScanResult {
        len,
        channels: dm,
        state_dim: ns,
        scaling,
        states,
        outputs,
    })
}

/// Dense recurrence `h_k = Ā_k h_{k-1} + B̄_k u_k`, `y_k = C_k h_k + D_k u_k`.
pub fn forward_scan_dense(
    seq: &DenseLtvSequence,
    u: &[DVector<f64>],
    h0: Option<&DVector<f64>>,
) -> Result<Vec<DVector<f64>>> {
    if u.len() != seq.len() {
        return Err(Error::Dimension(format!("{} inputs for {} tokens", u.len(), seq.len())));
    }
    let n = seq.state_dim();
    let mut h = match h0 {
        Some(h0) if h0.len() != n => return Err(Error::Dimension("h0 length mismatch".into())),
        Some(h0) => h0.clone(),
        None => DVector::zeros(n),
    };
    let mut out = Vec::with_capacity(u.len());
    for (k, uk) in u.iter().enumerate() {
        if uk.len() != seq.input_dim() {
            return Err(Error::Dimension(format!("input {k} has wrong length")));
        }
        h = &seq.a_bar[k] * &h + &seq.b_bar[k] * uk;
        out.push(&seq.c[k] * &h + &seq.d[k] * uk);
    }
    Ok(out)
}
