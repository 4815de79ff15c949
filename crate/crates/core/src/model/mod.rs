//! CPU inference for Mamba-style language models.
//!
//! Two execution paths exist: [`lm_forward`] processes a whole sequence one
//! layer at a time (and can capture each layer's selective-scan parameters),
//! while [`DecodeState::step`] advances every layer by one token with
//! recurrent conv/SSM state. They must agree; tests hold them to it.

pub mod nn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ModelBundle;
use crate::ssm::DiagonalLtvSequence;
use nn::{depthwise_conv1d_causal, dot, rmsnorm, silu, softplus, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub dt_rank: usize,
    pub vocab_size: usize,
    pub norm_epsilon: f32,
}

impl ModelConfig {
    /// Reference defaults: expand 2, 16 states, width-4 conv, `dt_rank = ceil(d_model/16)`.
    pub fn new(d_model: usize, n_layers: usize, vocab_size: usize) -> Self {
        Self {
            d_model,
            n_layers,
            d_inner: 2 * d_model,
            d_state: 16,
            d_conv: 4,
            dt_rank: d_model.div_ceil(16),
            vocab_size,
            norm_epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("d_inner", self.d_inner),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("dt_rank", self.dt_rank),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Input(format!("config field {name} must be positive")));
        }
        if self.dt_rank > self.d_model {
            return Err(Error::Input("dt_rank must not exceed d_model".into()));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::Input("norm_epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Output width of `x_proj`: `dt_rank + 2N`.
    pub fn x_proj_dim(&self) -> usize {
        self.dt_rank + 2 * self.d_state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `(2·d_inner) × d_model`; rows `0..d_inner` feed the scan, the rest the gate.
    pub in_proj: Matrix,
    /// `d_inner × d_conv`.
    pub conv_kernel: Vec<f32>,
    pub conv_bias: Vec<f32>,
    /// `(dt_rank + 2N) × d_inner`, split as `(Δ_raw, B, C)`.
    pub x_proj: Matrix,
    /// `d_inner × dt_rank`.
    pub dt_proj: Matrix,
    pub dt_bias: Vec<f32>,
    /// `d_inner × N`; `A = -exp(a_log)`.
    pub a_log: Vec<f32>,
    pub d_skip: Vec<f32>,
    /// `d_model × d_inner`.
    pub out_proj: Matrix,
    pub norm_weight: Vec<f32>,
}

impl LayerWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            in_proj: Matrix::zeros(2 * cfg.d_inner, cfg.d_model),
            conv_kernel: vec![0.0; cfg.d_inner * cfg.d_conv],
            conv_bias: vec![0.0; cfg.d_inner],
            x_proj: Matrix::zeros(cfg.x_proj_dim(), cfg.d_inner),
            dt_proj: Matrix::zeros(cfg.d_inner, cfg.dt_rank),
            dt_bias: vec![0.0; cfg.d_inner],
            a_log: vec![0.0; cfg.d_inner * cfg.d_state],
            d_skip: vec![0.0; cfg.d_inner],
            out_proj: Matrix::zeros(cfg.d_model, cfg.d_inner),
            norm_weight: vec![1.0; cfg.d_model],
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let check = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Dimension(format!("{name} is {got:?}, expected {want:?}")))
            }
        };
        let (di, dm, n) = (cfg.d_inner, cfg.d_model, cfg.d_state);
        check("in_proj", (self.in_proj.rows, self.in_proj.cols), (2 * di, dm))?;
        check("conv_kernel", (self.conv_kernel.len(), 1), (di * cfg.d_conv, 1))?;
        check("conv_bias", (self.conv_bias.len(), 1), (di, 1))?;
        check("x_proj", (self.x_proj.rows, self.x_proj.cols), (cfg.x_proj_dim(), di))?;
        check("dt_proj", (self.dt_proj.rows, self.dt_proj.cols), (di, cfg.dt_rank))?;
        check("dt_bias", (self.dt_bias.len(), 1), (di, 1))?;
        check("a_log", (self.a_log.len(), 1), (di * n, 1))?;
        check("d_skip", (self.d_skip.len(), 1), (di, 1))?;
        check("out_proj", (self.out_proj.rows, self.out_proj.cols), (dm, di))?;
        check("norm_weight", (self.norm_weight.len(), 1), (dm, 1))?;
        if self.a_log.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("a_log has non-finite entries".into()));
        }
        Ok(())
    }

    /// Continuous diagonal `A = -exp(a_log)`, `d_inner × N`.
    pub fn a_cont(&self) -> Vec<f64> {
        self.a_log.iter().map(|&v| -(v as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Accumulate reductions in 64-bit floats.
    pub accumulate_f64: bool,
}

/// Selective-scan parameters seen by one layer during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedLayerParams {
    pub layer: usize,
    /// `Ā`, raw `B`, raw `C` (broadcast over channels), `Δ` and `D`.
    pub seq: DiagonalLtvSequence,
    /// Post-conv, post-SiLU activations (`L × d_inner`) that produced them.
    pub activations: Vec<f32>,
}

/// Callback receiving one layer's capture.
pub type CaptureFn<'a> = dyn FnMut(CapturedLayerParams) -> Result<()> + 'a;

/// Per-token intermediate of the x-branch: `(Δ, B_raw, C_raw)`.
struct SelectiveParams {
    delta: Vec<f32>,
    b: Vec<f32>,
    c: Vec<f32>,
}

fn selective_params(w: &LayerWeights, cfg: &ModelConfig, x_act: &[f32], acc64: bool) -> SelectiveParams {
    let proj = w.x_proj.matvec(x_act, acc64);
    let (dt_raw, rest) = proj.split_at(cfg.dt_rank);
    let (b, c) = rest.split_at(cfg.d_state);
    let mut delta = w.dt_proj.matvec(dt_raw, acc64);
    for (v, bias) in delta.iter_mut().zip(&w.dt_bias) {
        *v = softplus(*v + bias);
    }
    SelectiveParams {
        delta,
        b: b.to_vec(),
        c: c.to_vec(),
    }
}

/// One scan step for all channels; returns `y` (before gating).
fn scan_step(
    h: &mut [f32],
    a_cont: &[f64],
    p: &SelectiveParams,
    u: &[f32],
    d_skip: &[f32],
    n_state: usize,
    acc64: bool,
) -> Vec<f32> {
    let mut y = vec![0.0f32; u.len()];
    for (d, yd) in y.iter_mut().enumerate() {
        let dt = p.delta[d];
        let row = &mut h[d * n_state..(d + 1) * n_state];
        for n in 0..n_state {
            let a_bar = (dt as f64 * a_cont[d * n_state + n]).exp() as f32;
            row[n] = a_bar * row[n] + dt * p.b[n] * u[d];
        }
        *yd = dot(row, &p.c, acc64) + d_skip[d] * u[d];
    }
    y
}

fn check_finite(layer: usize, what: &str, v: &[f32]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        Err(Error::NonFiniteLayer {
            layer,
            what: what.to_string(),
        })
    } else {
        Ok(())
    }
}

/// Mixer of one layer over a whole sequence (`x` is `L × d_model`, already normalized).
///
/// The capture callback receives the layer's selective-scan parameters
/// before the output gate is applied.
pub fn mamba_block_forward(
    x: &[f32],
    w: &LayerWeights,
    cfg: &ModelConfig,
    layer: usize,
    opts: ForwardOptions,
    capture: Option<&mut CaptureFn<'_>>,
) -> Result<Vec<f32>> {
    let (dm, di, ns) = (cfg.d_model, cfg.d_inner, cfg.d_state);
    if x.len() % dm != 0 {
        return Err(Error::Dimension(format!("input length {} not a multiple of d_model {dm}", x.len())));
    }
    check_finite(layer, "block input", x)?;
    let acc64 = opts.accumulate_f64;
    let len = x.len() / dm;

    let mut x_in = Vec::with_capacity(len * di);
    let mut z = Vec::with_capacity(len * di);
    for t in 0..len {
        let proj = w.in_proj.matvec(&x[t * dm..(t + 1) * dm], acc64);
        x_in.extend_from_slice(&proj[..di]);
        z.extend_from_slice(&proj[di..]);
    }
    let mut x_act = depthwise_conv1d_causal(&x_in, di, &w.conv_kernel, &w.conv_bias, cfg.d_conv);
    x_act.iter_mut().for_each(|v| *v = silu(*v));

    let a_cont = w.a_cont();
    let mut h = vec![0.0f32; di * ns];
    let mut out = Vec::with_capacity(len * dm);
    let mut cap = capture.map(|cb| (cb, CaptureBuffers::new(len, di, ns)));
    for t in 0..len {
        let u = &x_act[t * di..(t + 1) * di];
        let p = selective_params(w, cfg, u, acc64);
        check_finite(layer, "delta", &p.delta)?;
        if let Some((_, buf)) = cap.as_mut() {
            buf.push(&p, &a_cont, ns);
        }
        let mut y = scan_step(&mut h, &a_cont, &p, u, &w.d_skip, ns, acc64);
        for (yd, zd) in y.iter_mut().zip(&z[t * di..(t + 1) * di]) {
            *yd *= silu(*zd);
        }
        out.extend(w.out_proj.matvec(&y, acc64));
    }
    check_finite(layer, "block output", &out)?;
    if let Some((cb, buf)) = cap {
        let seq = buf.finish(&w.d_skip, len, di, ns).map_err(|e| match e {
            Error::Numeric(what) | Error::Domain(what) => Error::NonFiniteLayer { layer, what },
            other => other,
        })?;
        cb(CapturedLayerParams {
            layer,
            seq,
            activations: x_act,
        })?;
    }
    Ok(out)
}

struct CaptureBuffers {
    a_bar: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    delta: Vec<f64>,
}

impl CaptureBuffers {
    fn new(len: usize, di: usize, ns: usize) -> Self {
        let full = len * di * ns;
        Self {
            a_bar: Vec::with_capacity(full),
            b: Vec::with_capacity(full),
            c: Vec::with_capacity(full),
            delta: Vec::with_capacity(len * di),
        }
    }

    fn push(&mut self, p: &SelectiveParams, a_cont: &[f64], ns: usize) {
        for (d, &dt) in p.delta.iter().enumerate() {
            self.delta.push(dt as f64);
            for n in 0..ns {
                self.a_bar.push((dt as f64 * a_cont[d * ns + n]).exp());
                self.b.push(p.b[n] as f64);
                self.c.push(p.c[n] as f64);
            }
        }
    }

    fn finish(self, d_skip: &[f32], len: usize, di: usize, ns: usize) -> Result<DiagonalLtvSequence> {
        DiagonalLtvSequence::new(
            len,
            di,
            ns,
            self.a_bar,
            self.b,
            self.c,
            self.delta,
            d_skip.iter().map(|&v| v as f64).collect(),
        )
    }
}

fn check_ids(ids: &[u32], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab) {
        Some(id) => Err(Error::Input(format!("token id {id} out of range for vocab {vocab}"))),
        None => Ok(()),
    }
}

fn logits_row(bundle: &ModelBundle, h: &[f32], acc64: bool) -> Vec<f32> {
    let normed = rmsnorm(h, &bundle.norm_f, bundle.config.norm_epsilon);
    bundle.embedding.matvec(&normed, acc64)
}

/// Full stack over a sequence; returns `L × vocab` logits.
///
/// When `capture` is given it is called once per layer, in layer order.
pub fn lm_forward(
    token_ids: &[u32],
    bundle: &ModelBundle,
    opts: ForwardOptions,
    mut capture: Option<&mut CaptureFn<'_>>,
) -> Result<Vec<f32>> {
    let cfg = &bundle.config;
    check_ids(token_ids, cfg.vocab_size)?;
    let dm = cfg.d_model;
    let mut hidden: Vec<f32> = token_ids
        .iter()
        .flat_map(|&id| bundle.embedding.row(id as usize).iter().copied())
        .collect();
    for (l, w) in bundle.layers.iter().enumerate() {
        let normed: Vec<f32> = hidden
            .chunks(dm)
            .flat_map(|row| rmsnorm(row, &w.norm_weight, cfg.norm_epsilon))
            .collect();
        let mixed = mamba_block_forward(&normed, w, cfg, l, opts, capture.as_deref_mut())?;
        hidden.iter_mut().zip(&mixed).for_each(|(h, m)| *h += m);
    }
    let mut logits = Vec::with_capacity(token_ids.len() * cfg.vocab_size);
    for row in hidden.chunks(dm) {
        logits.extend(logits_row(bundle, row, opts.accumulate_f64));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(logits)
}

/// Runs [`lm_forward`] and collects every layer's capture.
pub fn lm_forward_captured(
    token_ids: &[u32],
    bundle: &ModelBundle,
    opts: ForwardOptions,
) -> Result<(Vec<f32>, Vec<CapturedLayerParams>)> {
    let mut captured = Vec::with_capacity(bundle.config.n_layers);
    let mut cb = |c: CapturedLayerParams| {
        captured.push(c);
        Ok(())
    };
    let logits = lm_forward(token_ids, bundle, opts, Some(&mut cb))?;
    Ok((logits, captured))
}

#[derive(Debug, Clone)]
struct LayerState {
    /// Last `d_conv - 1` conv inputs, oldest first (`(d_conv-1) × d_inner`).
    conv: Vec<f32>,
    /// `d_inner × N`.
    ssm: Vec<f32>,
}

/// Recurrent state for token-by-token decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    layers: Vec<LayerState>,
    pos: usize,
}

impl DecodeState {
    pub fn new(cfg: &ModelConfig) -> Self {
        let layer = LayerState {
            conv: vec![0.0; (cfg.d_conv - 1) * cfg.d_inner],
            ssm: vec![0.0; cfg.d_inner * cfg.d_state],
        };
        Self {
            layers: vec![layer; cfg.n_layers],
            pos: 0,
        }
    }

    /// Number of tokens consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token through every layer and returns its logits row.
    pub fn step(&mut self, token: u32, bundle: &ModelBundle, opts: ForwardOptions) -> Result<Vec<f32>> {
        let cfg = &bundle.config;
        check_ids(&[token], cfg.vocab_size)?;
        let acc64 = opts.accumulate_f64;
        let (di, ns, width) = (cfg.d_inner, cfg.d_state, cfg.d_conv);
        let mut hidden = bundle.embedding.row(token as usize).to_vec();
        for (l, (w, st)) in bundle.layers.iter().zip(self.layers.iter_mut()).enumerate() {
            let normed = rmsnorm(&hidden, &w.norm_weight, cfg.norm_epsilon);
            let proj = w.in_proj.matvec(&normed, acc64);
            let (x_in, z) = proj.split_at(di);

            let mut u = vec![0.0f32; di];
            for d in 0..di {
                let mut acc = w.conv_bias[d];
                for i in 0..width - 1 {
                    acc += w.conv_kernel[d * width + i] * st.conv[i * di + d];
                }
                acc += w.conv_kernel[d * width + width - 1] * x_in[d];
                u[d] = silu(acc);
            }
            if width > 1 {
                st.conv.drain(..di);
                st.conv.extend_from_slice(x_in);
            }

            let p = selective_params(w, cfg, &u, acc64);
            let a_cont = w.a_cont();
            let mut y = scan_step(&mut st.ssm, &a_cont, &p, &u, &w.d_skip, ns, acc64);
            for (yd, zd) in y.iter_mut().zip(z) {
                *yd *= silu(*zd);
            }
            let mixed = w.out_proj.matvec(&y, acc64);
            check_finite(l, "block output", &mixed)?;
            hidden.iter_mut().zip(&mixed).for_each(|(h, m)| *h += m);
        }
        self.pos += 1;
        let logits = logits_row(bundle, &hidden, acc64);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth_model;

    fn small() -> ModelBundle {
        let mut cfg = ModelConfig::new(16, 2, 32);
        cfg.d_state = 4;
        synth_model(&cfg, 7).unwrap()
    }

    #[test]
    fn default_config() {
        let c = ModelConfig::new(768, 24, 50280);
        assert_eq!((c.d_inner, c.d_state, c.d_conv, c.dt_rank), (1536, 16, 4, 48));
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.dt_rank = 1000;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_gate_silences_block() {
        let b = small();
        let mut w = b.layers[0].clone();
        let di = b.config.d_inner;
        // Gate rows of in_proj are zero, so z = 0 and SiLU(z) = 0.
        for v in &mut w.in_proj.data[di * b.config.d_model..] {
            *v = 0.0;
        }
        let x: Vec<f32> = (0..3 * b.config.d_model).map(|i| (i as f32 * 0.37).sin()).collect();
        let y = mamba_block_forward(&x, &w, &b.config, 0, ForwardOptions::default(), None).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_conv_and_projection_feed_scan_directly() {
        let mut cfg = ModelConfig::new(4, 1, 8);
        cfg.d_inner = 4;
        cfg.d_state = 2;
        cfg.dt_rank = 1;
        let mut w = LayerWeights::zeros(&cfg);
        for i in 0..4 {
            w.in_proj.data[i * 4 + i] = 1.0;
            w.conv_kernel[i * cfg.d_conv + cfg.d_conv - 1] = 1.0;
        }
        let x: Vec<f32> = (0..8).map(|i| i as f32 * 0.25 - 1.0).collect();
        let mut seen = Vec::new();
        let mut cb = |c: CapturedLayerParams| {
            seen.push(c.activations);
            Ok(())
        };
        mamba_block_forward(&x, &w, &cfg, 0, ForwardOptions::default(), Some(&mut cb)).unwrap();
        let expect: Vec<f32> = x.iter().map(|&v| silu(v)).collect();
        assert_eq!(seen[0], expect);
    }

    #[test]
    fn capture_is_deterministic_and_well_formed() {
        let b = small();
        let ids = [1, 5, 9, 2, 30, 4];
        let (la, ca) = lm_forward_captured(&ids, &b, ForwardOptions::default()).unwrap();
        let (lb, cb) = lm_forward_captured(&ids, &b, ForwardOptions::default()).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ca, cb);
        assert_eq!(ca.len(), b.config.n_layers);
        for c in &ca {
            assert_eq!(c.seq.len(), ids.len());
            assert!(c.seq.delta_slice().iter().all(|&v| v > 0.0));
            assert!(c.seq.a_bar_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn out_of_range_token() {
        let b = small();
        assert!(matches!(
            lm_forward(&[40], &b, ForwardOptions::default(), None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn single_token_matches_step() {
        let b = small();
        let full = lm_forward(&[3], &b, ForwardOptions::default(), None).unwrap();
        let mut st = DecodeState::new(&b.config);
        let step = st.step(3, &b, ForwardOptions::default()).unwrap();
        assert_eq!(full, step);
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let b = small();
        let mut x = vec![0.1f32; 2 * b.config.d_model];
        x[3] = f32::NAN;
        let err = mamba_block_forward(&x, &b.layers[1], &b.config, 1, ForwardOptions::default(), None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLayer { layer: 1, .. }));
    }
}
