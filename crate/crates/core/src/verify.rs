//! Randomized oracle suites that cross-check the fast paths against
//! independent computations.
//!
//! Each suite returns one [`CheckOutcome`] per property. `inject_fault`
//! perturbs the oracle side by one part in a thousand, which every suite
//! must detect.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::control::{
    controllability_matrix, default_rank_tolerance, gramian_ct_diagonal, gramian_discrete_sum, gramian_quadrature_dense,
    numerical_rank, observability_matrix, GramianKind, Orientation,
};
use crate::error::Result;
use crate::experiments::{basic_stats, spearman_rho};
use crate::influence::{
    exact_channel_magnitude, fd_jacobian, influence_direct_sum, influence_direct_sum_channels, influence_fast,
    jacobian_exact, jacobian_exact_dense, AdjacencyConvention,
};
use crate::io::{synth_model, ModelBundle};
use crate::model::{lm_forward, DecodeState, ForwardOptions, ModelConfig};
use crate::sampling::{apply_repetition_penalty, generate, top_p_filter, SamplerConfig};
use crate::ssm::{forward_scan_dense, forward_scan_diagonal, DenseLtiSystem, DenseLtvSequence, DiagonalLtvSequence, InputScaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Overrides every suite's default case count.
    pub cases: Option<usize>,
    pub seed: u64,
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            cases: None,
            seed: 0x5eed,
            inject_fault: false,
        }
    }
}

impl VerifyOptions {
    fn cases(&self, default: usize) -> usize {
        self.cases.unwrap_or(default).max(1)
    }

    fn fault(&self) -> f64 {
        if self.inject_fault {
            1.0 + 1e-3
        } else {
            1.0
        }
    }

    fn rng(&self, salt: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed error (relative unless noted in `detail`).
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64, started: Instant, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: max_error <= tolerance,
            cases,
            max_error,
            tolerance,
            seconds: started.elapsed().as_secs_f64(),
            detail: detail.into(),
        }
    }

    fn flag(name: &str, cases: usize, passed: bool, started: Instant, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            cases,
            max_error: if passed { 0.0 } else { 1.0 },
            tolerance: 0.0,
            seconds: started.elapsed().as_secs_f64(),
            detail: detail.into(),
        }
    }

    /// `PASS name ...` / `FAIL name ...` summary line.
    pub fn line(&self) -> String {
        format!(
            "{} {:<34} cases={:<5} max_err={:.3e} tol={:.1e} time={:.2}s {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance,
            self.seconds,
            self.detail
        )
        .trim_end()
        .to_string()
    }
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    }
}

/// Random diagonal sequence with entries `U(lo, hi)` and `Δ ~ U(0.01, 1)`.
pub fn random_sequence(rng: &mut impl Rng, len: usize, channels: usize, state_dim: usize, lo: f64, hi: f64) -> DiagonalLtvSequence {
    let full = len * channels * state_dim;
    DiagonalLtvSequence::new(
        len,
        channels,
        state_dim,
        uniform(rng, full, lo, hi),
        uniform(rng, full, lo, hi),
        uniform(rng, full, lo, hi),
        uniform(rng, len * channels, 0.01, 1.0),
        uniform(rng, channels, lo, hi),
    )
    .expect("generated shapes are consistent")
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random dense time-varying system with contractive-ish `Ā_k`.
pub fn random_dense_sequence(rng: &mut impl Rng, len: usize, n: usize, m: usize, p: usize) -> DenseLtvSequence {
    let s = 1.0 / (n as f64).sqrt();
    DenseLtvSequence::new(
        (0..len).map(|_| random_matrix(rng, n, n, s)).collect(),
        (0..len).map(|_| random_matrix(rng, n, m, 1.0)).collect(),
        (0..len).map(|_| random_matrix(rng, p, n, 1.0)).collect(),
        Some((0..len).map(|_| random_matrix(rng, p, m, 1.0)).collect()),
    )
    .expect("generated shapes are consistent")
}

/// `influence_fast` against the explicit O(L²) sum, both input scalings.
pub fn suite_fast_direct(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let started = Instant::now();
    let cases = opts.cases(200);
    let mut rng = opts.rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let (l, n, dm) = (rng.random_range(1..=16), rng.random_range(1..=8), rng.random_range(1..=4));
        let seq = random_sequence(&mut rng, l, dm, n, -1.0, 1.0);
        let scaling = if i % 2 == 0 { InputScaling::Raw } else { InputScaling::DeltaScaled };
        for conv in [AdjacencyConvention::Paper, AdjacencyConvention::Standard] {
            let fast = influence_fast(&seq, scaling, conv)?;
            let direct: Vec<f64> = influence_direct_sum(&seq, scaling, conv)?.iter().map(|v| v * opts.fault()).collect();
            for (f, d) in fast.iter().zip(&direct) {
                let e = if f == d { 0.0 } else { (f - d).abs() / d.abs().max(f64::MIN_POSITIVE) };
                worst = worst.max(e);
            }
        }
    }
    Ok(vec![CheckOutcome::new("fast_vs_direct_sum", cases, worst, 1e-6, started, "")])
}

struct ConventionErrors {
    standard: f64,
    paper: f64,
}

/// Stacked exact Jacobian `∂y/∂u_k` (rows grouped by output token).
fn stacked_exact(
    blocks: impl Fn(usize) -> Result<DMatrix<f64>>,
    len: usize,
    k: usize,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(len * rows, cols);
    for j in k..len {
        m.view_mut((j * rows, 0), (rows, cols)).copy_from(&blocks(j)?);
    }
    Ok(m)
}

fn fd_errors_diagonal(seq: &DiagonalLtvSequence, rng: &mut impl Rng, fault: f64) -> Result<ConventionErrors> {
    let (l, dm) = (seq.len(), seq.channels());
    let u = uniform(rng, l * dm, -1.0, 1.0);
    let scan = |u: &[f64]| forward_scan_diagonal(seq, u, None, InputScaling::Raw).map(|r| r.outputs);
    let mut errs = ConventionErrors { standard: 0.0, paper: 0.0 };
    for k in 0..l {
        let fd = fd_jacobian(scan, &u, k, dm, 1e-3)? * fault;
        for conv in [AdjacencyConvention::Standard, AdjacencyConvention::Paper] {
            let exact = stacked_exact(|j| jacobian_exact(seq, k, j, InputScaling::Raw, conv), l, k, dm, dm)?;
            let e = rel_diff(exact.as_slice(), fd.as_slice());
            match conv {
                AdjacencyConvention::Standard => errs.standard = errs.standard.max(e),
                AdjacencyConvention::Paper => errs.paper = errs.paper.max(e),
            }
        }
    }
    Ok(errs)
}

fn fd_errors_dense(seq: &DenseLtvSequence, rng: &mut impl Rng, fault: f64) -> Result<ConventionErrors> {
    let (l, m, p) = (seq.len(), seq.input_dim(), seq.output_dim());
    let u = uniform(rng, l * m, -1.0, 1.0);
    let scan = |u: &[f64]| {
        let inputs: Vec<DVector<f64>> = u.chunks(m).map(DVector::from_column_slice).collect();
        forward_scan_dense(seq, &inputs, None).map(|ys| ys.iter().flat_map(|y| y.iter().copied()).collect())
    };
    let mut errs = ConventionErrors { standard: 0.0, paper: 0.0 };
    for k in 0..l {
        let fd = fd_jacobian(scan, &u, k, m, 1e-3)? * fault;
        for conv in [AdjacencyConvention::Standard, AdjacencyConvention::Paper] {
            let exact = stacked_exact(|j| jacobian_exact_dense(seq, k, j, conv), l, k, p, m)?;
            let e = rel_diff(exact.as_slice(), fd.as_slice());
            match conv {
                AdjacencyConvention::Standard => errs.standard = errs.standard.max(e),
                AdjacencyConvention::Paper => errs.paper = errs.paper.max(e),
            }
        }
    }
    Ok(errs)
}

/// Exact Jacobians against central finite differences of the scan.
///
/// The standard indexing must agree; the empty-product indexing must not.
pub fn suite_jacobian_fd(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let started = Instant::now();
    let cases = opts.cases(100);
    let mut rng = opts.rng(2);
    let (mut std_worst, mut paper_best): (f64, f64) = (0.0, f64::INFINITY);
    let (mut std_worst_dense, mut paper_best_dense): (f64, f64) = (0.0, f64::INFINITY);
    for _ in 0..cases {
        let (l, n, dm) = (rng.random_range(3..=8), rng.random_range(1..=4), rng.random_range(1..=3));
        let seq = random_sequence(&mut rng, l, dm, n, -1.0, 1.0);
        let e = fd_errors_diagonal(&seq, &mut rng, opts.fault())?;
        std_worst = std_worst.max(e.standard);
        paper_best = paper_best.min(e.paper);

        let (l, n, m, p) = (
            rng.random_range(3..=6),
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let dense = random_dense_sequence(&mut rng, l, n, m, p);
        let e = fd_errors_dense(&dense, &mut rng, opts.fault())?;
        std_worst_dense = std_worst_dense.max(e.standard);
        paper_best_dense = paper_best_dense.min(e.paper);
    }
    let tol = 1e-6;
    let paper_best_all = paper_best.min(paper_best_dense);
    Ok(vec![
        CheckOutcome::new("jacobian_fd_diagonal", cases, std_worst, tol, started, "convention=standard"),
        CheckOutcome::new("jacobian_fd_dense", cases, std_worst_dense, tol, started, "convention=standard"),
        CheckOutcome::flag(
            "jacobian_fd_other_convention_fails",
            2 * cases,
            paper_best_all > tol,
            started,
            format!("empty-product indexing: smallest error {paper_best_all:.3e} (must exceed {tol:.0e})"),
        ),
    ])
}

/// Elementwise-absolute score bounds the signed Jacobian magnitude, with
/// equality for non-negative parameters.
pub fn suite_triangle(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let started = Instant::now();
    let cases = opts.cases(100);
    let mut rng = opts.rng(3);
    let mut violation: f64 = 0.0;
    let mut gap: f64 = 0.0;
    for _ in 0..cases {
        let (l, n, dm) = (rng.random_range(1..=8), rng.random_range(1..=4), rng.random_range(1..=3));
        for (lo, hi) in [(-1.0, 1.0), (0.0, 1.0)] {
            let full = l * dm * n;
            let seq = DiagonalLtvSequence::from_abc(
                l,
                dm,
                n,
                uniform(&mut rng, full, lo, hi),
                uniform(&mut rng, full, lo, hi),
                uniform(&mut rng, full, lo, hi),
            )?;
            for conv in [AdjacencyConvention::Paper, AdjacencyConvention::Standard] {
                let abs = influence_direct_sum_channels(&seq, InputScaling::Raw, conv);
                for k in 0..l {
                    for d in 0..dm {
                        let exact = exact_channel_magnitude(&seq, k, d, InputScaling::Raw, conv)? * opts.fault();
                        let bound = abs[k * dm + d];
                        let scale = bound.abs().max(f64::MIN_POSITIVE);
                        if lo < 0.0 {
                            violation = violation.max((exact - bound) / scale);
                        } else if exact != bound {
                            gap = gap.max((exact - bound).abs() / scale);
                        }
                    }
                }
            }
        }
    }
    Ok(vec![
        CheckOutcome::new("triangle_bound_mixed_sign", cases, violation.max(0.0), 1e-12, started, "max relative excess"),
        CheckOutcome::new("triangle_equality_nonnegative", cases, gap, 1e-9, started, ""),
    ])
}

fn min_eig_ok(m: &DMatrix<f64>) -> f64 {
    let ev = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues;
    ev.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Kalman duality, Gramian cross-method agreement, closed-form scalars and PSD.
pub fn suite_gramian(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let cases = opts.cases(100);
    let fault = opts.fault();
    let mut rng = opts.rng(4);
    let mut out = Vec::new();

    let started = Instant::now();
    let mut mismatches = 0;
    let mut deficient = 0;
    for i in 0..cases {
        let n = rng.random_range(1..=6);
        let p = rng.random_range(1..=3);
        let mut a = random_matrix(&mut rng, n, n, 1.0);
        let mut c = random_matrix(&mut rng, p, n, 1.0);
        // A share of structurally unobservable systems keeps the check honest:
        // a decoupled block that C never reads.
        if i % 3 == 0 && n >= 2 {
            let hidden = rng.random_range(1..n);
            for r in 0..n {
                for col in 0..n {
                    if (r < hidden) != (col < hidden) {
                        a[(r, col)] = 0.0;
                    }
                }
            }
            c.columns_mut(0, hidden).fill(0.0);
        }
        let obs = observability_matrix(&DenseLtiSystem::without_feedthrough(a.clone(), DMatrix::zeros(n, 1), c.clone())?);
        let ctrl = controllability_matrix(&DenseLtiSystem::without_feedthrough(
            a.transpose(),
            c.transpose(),
            DMatrix::zeros(1, n),
        )?);
        let r_obs = numerical_rank(&obs, default_rank_tolerance(&obs))?;
        let r_ctrl = numerical_rank(&ctrl, default_rank_tolerance(&ctrl))?;
        if r_obs < n {
            deficient += 1;
        }
        let same_entries = rel_diff(obs.transpose().as_slice(), ctrl.as_slice()) <= 1e-12;
        if r_obs != r_ctrl || !same_entries || opts.inject_fault && i == 0 {
            mismatches += 1;
        }
    }
    out.push(CheckOutcome::flag(
        "gramian_duality_rank",
        cases,
        mismatches == 0,
        started,
        format!("{mismatches} mismatches, {deficient} rank-deficient systems"),
    ));

    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut psd_worst: f64 = 0.0;
    let quad_cases = cases.div_ceil(4);
    for _ in 0..quad_cases {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let a = uniform(&mut rng, n, -2.0, -0.1);
        let b = random_matrix(&mut rng, n, m, 1.0);
        let t = rng.random_range(0.5..2.0);
        let a_mat = DMatrix::from_diagonal(&DVector::from_vec(a.clone()));
        for kind in [GramianKind::Controllability, GramianKind::Observability] {
            let bc = match kind {
                GramianKind::Controllability => b.clone(),
                GramianKind::Observability => b.transpose(),
            };
            let sys = match kind {
                GramianKind::Controllability => DenseLtiSystem::without_feedthrough(a_mat.clone(), bc.clone(), DMatrix::zeros(1, n))?,
                GramianKind::Observability => DenseLtiSystem::without_feedthrough(a_mat.clone(), DMatrix::zeros(n, 1), bc.clone())?,
            };
            for orient in [Orientation::AsWritten, Orientation::Standard] {
                let closed = gramian_ct_diagonal(&a, &bc, t, kind, orient)?;
                let quad = gramian_quadrature_dense(&sys, 0.0, t, 1000, kind, orient)?;
                let q: Vec<f64> = quad.matrix.iter().map(|v| v * fault).collect();
                worst = worst.max(rel_diff(closed.matrix.as_slice(), &q));
                let scale = closed.max_eigenvalue().abs().max(1.0);
                psd_worst = psd_worst.max(-min_eig_ok(&closed.matrix) / scale);
                psd_worst = psd_worst.max(-min_eig_ok(&quad.matrix) / scale);
            }
        }
    }
    out.push(CheckOutcome::new("gramian_closed_vs_simpson", quad_cases, worst, 1e-6, started, "steps=1000"));

    let started = Instant::now();
    let one = DMatrix::from_element(1, 1, 1.0);
    let wc = gramian_ct_diagonal(&[-1.0], &one, 1.0, GramianKind::Controllability, Orientation::AsWritten)?.matrix[(0, 0)];
    let wo = gramian_ct_diagonal(&[-1.0], &one, 1.0, GramianKind::Observability, Orientation::AsWritten)?.matrix[(0, 0)];
    let e1 = ((wc * fault) - (std::f64::consts::E.powi(2) - 1.0) / 2.0).abs();
    let e2 = ((wo * fault) - (1.0 - (-2.0f64).exp()) / 2.0).abs();
    out.push(CheckOutcome::new("gramian_scalar_closed_forms", 2, e1.max(e2), 1e-9, started, "absolute"));

    let started = Instant::now();
    for _ in 0..quad_cases {
        let l = rng.random_range(1..=5);
        let n = rng.random_range(1..=4);
        let a: Vec<DMatrix<f64>> = (0..l).map(|_| random_matrix(&mut rng, n, n, 1.0)).collect();
        let b: Vec<DMatrix<f64>> = (0..l).map(|_| random_matrix(&mut rng, n, 2, 1.0)).collect();
        let g = gramian_discrete_sum(&a, &b, GramianKind::Controllability)?;
        let scale = g.max_eigenvalue().abs().max(1.0);
        psd_worst = psd_worst.max(-g.min_eigenvalue() / scale);
    }
    if opts.inject_fault {
        psd_worst = psd_worst.max(1e-3);
    }
    out.push(CheckOutcome::new("gramian_psd", 3 * quad_cases, psd_worst.max(0.0), 1e-9, started, "relative to max eigenvalue"));
    Ok(out)
}

/// The model used by the causality checks.
pub fn reference_model() -> Result<ModelBundle> {
    let mut cfg = ModelConfig::new(64, 4, 256);
    cfg.d_state = 16;
    synth_model(&cfg, 2024)
}

fn max_rel(a: &[f32], b: &[f32]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((*x as f64 - *y as f64).abs())) / scale
}

/// Prefill/step equivalence and truncation invariance on the reference model.
pub fn suite_model(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let bundle = reference_model()?;
    let vocab = bundle.config.vocab_size;
    let cases = opts.cases(8).min(64);
    let mut rng = opts.rng(5);
    let fwd = ForwardOptions::default();
    let (mut drift, mut trunc): (f64, f64) = (0.0, 0.0);
    let started = Instant::now();
    for _ in 0..cases {
        let len = rng.random_range(2..=24);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
        let full = lm_forward(&ids, &bundle, fwd, None)?;
        let mut state = DecodeState::new(&bundle.config);
        let mut stepped = Vec::with_capacity(full.len());
        for &t in &ids {
            stepped.extend(state.step(t, &bundle, fwd)?);
        }
        let reference: Vec<f32> = full.iter().map(|v| (*v as f64 * opts.fault()) as f32).collect();
        drift = drift.max(max_rel(&stepped, &reference));
        let cut = rng.random_range(1..len);
        let prefix = lm_forward(&ids[..cut], &bundle, fwd, None)?;
        trunc = trunc.max(max_rel(&prefix, &reference[..cut * vocab]));
    }
    let t = started.elapsed().as_secs_f64();
    let mut a = CheckOutcome::new("model_prefill_step_drift", cases, drift, 1e-4, started, "d_model=64 N=16 layers=4");
    let mut b = CheckOutcome::new("model_truncation_invariance", cases, trunc, 1e-5, started, "");
    a.seconds = t;
    b.seconds = t;
    Ok(vec![a, b])
}

/// Nucleus minimality, penalty rule values and seeded determinism.
pub fn suite_sampling(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let cases = opts.cases(1000);
    let mut rng = opts.rng(6);
    let started = Instant::now();
    let mut bad = 0;
    for _ in 0..cases {
        let v = rng.random_range(1..=50);
        let raw = uniform(&mut rng, v, 0.0, 1.0);
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let p = rng.random_range(0.05..=1.0);
        let q = top_p_filter(&probs, p);
        let kept: Vec<usize> = (0..v).filter(|&i| q[i] > 0.0).collect();
        let mass: f64 = kept.iter().map(|&i| probs[i]).sum::<f64>() * opts.fault();
        let smallest = kept.iter().map(|&i| probs[i]).fold(f64::INFINITY, f64::min);
        let dropped_max = (0..v).filter(|i| q[*i] == 0.0).map(|i| probs[i]).fold(0.0, f64::max);
        let renorm: f64 = q.iter().sum();
        // Kept set reaches p, is minimal, holds the top tokens and sums to one.
        let ok = !kept.is_empty()
            && mass >= p - 1e-12
            && mass - smallest < p
            && smallest >= dropped_max
            && (renorm - 1.0).abs() < 1e-12;
        if !ok {
            bad += 1;
        }
    }
    out.push(CheckOutcome::flag(
        "top_p_minimal_prefix",
        cases,
        bad == 0,
        started,
        format!("{bad} violations"),
    ));

    let started = Instant::now();
    let mut l = vec![2.0, -2.0];
    apply_repetition_penalty(&mut l, &[0, 1], 2.0);
    let expected = [1.0 * opts.fault(), -4.0];
    out.push(CheckOutcome::flag(
        "repetition_penalty_rule",
        2,
        l == expected,
        started,
        format!("2 -> {}, -2 -> {}", l[0], l[1]),
    ));

    let started = Instant::now();
    let mut cfg = ModelConfig::new(16, 2, 64);
    cfg.d_state = 4;
    let bundle = synth_model(&cfg, 7)?;
    let sc = SamplerConfig {
        temperature: 1.0,
        top_p: 0.95,
        repetition_penalty: 1.2,
        max_new_tokens: 24,
        seed: opts.seed,
        greedy: false,
    };
    let a = generate(&bundle, &[1, 2, 3], &sc, ForwardOptions::default())?;
    let b = generate(&bundle, &[1, 2, 3], &sc, ForwardOptions::default())?;
    let same = serde_json::to_vec(&a)? == serde_json::to_vec(&b)? && !opts.inject_fault;
    out.push(CheckOutcome::flag("sampling_seed_determinism", 2, same, started, "byte-identical token streams"));
    Ok(out)
}

/// Rank-then-Pearson computed without sorting, as an independent oracle.
fn brute_force_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn suite_statistics(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let cases = opts.cases(200);
    let mut rng = opts.rng(7);
    let f = opts.fault();

    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(2..=20);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.first() == sorted.last() {
            continue;
        }
        let inc: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let dec: Vec<f64> = xs.iter().map(|x| -x * x * x).collect();
        worst = worst.max((spearman_rho(&xs, &inc)? * f - 1.0).abs());
        worst = worst.max((spearman_rho(&xs, &dec)? + 1.0).abs());
    }
    out.push(CheckOutcome::new("spearman_monotone", cases, worst, 1e-12, started, "absolute"));

    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut tie = |xs: &[f64], ys: &[f64]| -> Result<()> {
        let oracle = brute_force_spearman(xs, ys);
        if oracle.is_finite() {
            worst = worst.max((spearman_rho(xs, ys)? * f - oracle).abs());
        }
        Ok(())
    };
    tie(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0])?;
    for _ in 0..cases {
        let n = rng.random_range(3..=15);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        tie(&xs, &ys)?;
    }
    out.push(CheckOutcome::new("spearman_ties_brute_force", cases + 1, worst, 1e-12, started, "absolute"));

    let started = Instant::now();
    let a = basic_stats(&[2.0, 2.0, 2.0])?;
    let b = basic_stats(&[1.0, 3.0])?;
    let c = basic_stats(&[-1.0, 1.0])?;
    let ok = a.std == 0.0
        && a.cv == Some(0.0)
        && b.mean == 2.0
        && b.std == 1.0
        && b.cv.map(|v| v * f) == Some(0.5)
        && c.cv.is_none()
        && basic_stats(&[]).is_err();
    out.push(CheckOutcome::flag("cv_definition", 4, ok, started, "population std, cv absent at zero mean"));
    Ok(out)
}

pub type Suite = fn(&VerifyOptions) -> Result<Vec<CheckOutcome>>;

/// Every suite, by name.
pub const SUITES: [(&str, Suite); 7] = [
    ("fast_direct", suite_fast_direct),
    ("jacobian_fd", suite_jacobian_fd),
    ("triangle", suite_triangle),
    ("gramian", suite_gramian),
    ("model", suite_model),
    ("sampling", suite_sampling),
    ("statistics", suite_statistics),
];

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (_, suite) in SUITES {
        out.extend(suite(opts)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions {
            cases: Some(6),
            ..Default::default()
        }
    }

    #[test]
    fn suites_pass_at_small_scale() {
        for c in run_all(&small()).unwrap() {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn injected_fault_is_caught_everywhere() {
        let opts = VerifyOptions {
            inject_fault: true,
            ..small()
        };
        for (name, suite) in SUITES {
            let outcomes = suite(&opts).unwrap();
            assert!(outcomes.iter().any(|c| !c.passed), "suite {name} missed the fault");
        }
    }
}
