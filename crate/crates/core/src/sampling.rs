//! Seeded decoding: repetition penalty, temperature, nucleus filtering and a
//! categorical draw from a ChaCha20 stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ModelBundle;
use crate::model::{DecodeState, ForwardOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Argmax decoding; `temperature` and `top_p` are ignored.
    #[serde(default)]
    pub greedy: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            repetition_penalty: 1.2,
            max_new_tokens: 30,
            seed: 0,
            greedy: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.greedy && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Input(format!(
                "temperature must be positive (got {}); use greedy decoding instead of 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Input(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::Input(format!(
                "repetition penalty must be >= 1, got {}",
                self.repetition_penalty
            )));
        }
        Ok(())
    }
}

/// Divides positive logits of already-seen tokens by `r` and multiplies
/// negative ones by `r`. Each distinct id is penalized once.
pub fn apply_repetition_penalty(logits: &mut [f64], seen: &[u32], r: f64) {
    if r == 1.0 {
        return;
    }
    let mut hit = vec![false; logits.len()];
    for &id in seen {
        let i = id as usize;
        if i < logits.len() && !hit[i] {
            hit[i] = true;
            logits[i] = if logits[i] > 0.0 { logits[i] / r } else { logits[i] * r };
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / total).collect()
}

/// Token ids ordered by descending probability, lower id first on ties.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// Keeps the smallest probability-ranked prefix whose mass reaches `p` and
/// renormalizes it; every other entry becomes zero.
pub fn top_p_filter(probs: &[f64], p: f64) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    let mut kept = Vec::new();
    for i in ranked(probs) {
        kept.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    for &i in &kept {
        out[i] = probs[i] / mass;
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Stateful sampler owning its random stream.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha20Rng,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, rng })
    }

    /// Picks the next token: repetition penalty → temperature → softmax →
    /// top-p → categorical draw.
    pub fn next_token(&mut self, logits: &[f32], seen: &[u32]) -> u32 {
        let mut l: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
        apply_repetition_penalty(&mut l, seen, self.cfg.repetition_penalty);
        if self.cfg.greedy {
            return argmax(&l) as u32;
        }
        l.iter_mut().for_each(|v| *v /= self.cfg.temperature);
        let probs = top_p_filter(&softmax(&l), self.cfg.top_p);
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for i in ranked(&probs) {
            if probs[i] == 0.0 {
                break;
            }
            acc += probs[i];
            last = i;
            if u < acc {
                return i as u32;
            }
        }
        last as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    /// Prompt followed by the generated tokens.
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
    pub stopped_at_eos: bool,
}

impl Generation {
    pub fn new_tokens(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }
}

/// Autoregressive decoding from `prompt` with recurrent state.
///
/// Stops after `max_new_tokens` or right after emitting the vocabulary's EOS id.
pub fn generate(bundle: &ModelBundle, prompt: &[u32], cfg: &SamplerConfig, opts: ForwardOptions) -> Result<Generation> {
    if prompt.is_empty() {
        return Err(Error::Input("prompt must contain at least one token".into()));
    }
    let mut sampler = Sampler::new(cfg.clone())?;
    let mut state = DecodeState::new(&bundle.config);
    let mut tokens = prompt.to_vec();
    let mut stopped_at_eos = false;
    if cfg.max_new_tokens == 0 {
        crate::model::lm_forward(prompt, bundle, opts, None)?;
        return Ok(Generation {
            tokens,
            prompt_len: prompt.len(),
            stopped_at_eos,
        });
    }
    let mut logits = Vec::new();
    for &t in prompt {
        logits = state.step(t, bundle, opts)?;
    }
    for i in 0..cfg.max_new_tokens {
        let next = sampler.next_token(&logits, &tokens);
        tokens.push(next);
        if bundle.vocab.eos_id == Some(next) {
            stopped_at_eos = true;
            break;
        }
        if i + 1 < cfg.max_new_tokens {
            logits = state.step(next, bundle, opts)?;
        }
    }
    Ok(Generation {
        tokens,
        prompt_len: prompt.len(),
        stopped_at_eos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth_model;
    use crate::model::ModelConfig;
    use rand::RngCore;

    #[test]
    fn chacha20_matches_published_keystream() {
        // RFC 7539 section 2.3.2 block function test vector with an all-zero key and nonce.
        let mut rng = ChaCha20Rng::from_seed([0u8; 32]);
        assert_eq!(rng.next_u32(), 0xade0_b876);
        assert_eq!(rng.next_u32(), 0x903d_f1a0);
    }

    #[test]
    fn repetition_penalty_rule() {
        let mut l = vec![2.0, -2.0, 0.5];
        apply_repetition_penalty(&mut l, &[0, 1, 0], 2.0);
        assert_eq!(l, vec![1.0, -4.0, 0.5]);
        let mut same = vec![2.0, -2.0];
        apply_repetition_penalty(&mut same, &[0, 1], 1.0);
        assert_eq!(same, vec![2.0, -2.0]);
    }

    #[test]
    fn top_p_examples() {
        let q = top_p_filter(&[0.5, 0.3, 0.2], 0.7);
        assert!((q[0] - 0.625).abs() < 1e-15 && (q[1] - 0.375).abs() < 1e-15 && q[2] == 0.0);
        assert_eq!(top_p_filter(&[0.5, 0.3, 0.2], 1.0), vec![0.5, 0.3, 0.2]);
        assert_eq!(top_p_filter(&[1.0], 0.9), vec![1.0]);
    }

    #[test]
    fn top_p_tie_prefers_lower_id() {
        let q = top_p_filter(&[0.25, 0.25, 0.25, 0.25], 0.5);
        assert_eq!(q, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = SamplerConfig::default();
        assert!(c.validate().is_ok());
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        c.greedy = true;
        assert!(c.validate().is_ok());
        c.top_p = 0.0;
        assert!(c.validate().is_err());
        c.top_p = 0.9;
        c.repetition_penalty = 0.5;
        assert!(c.validate().is_err());
    }

    fn bundle() -> ModelBundle {
        let mut cfg = ModelConfig::new(16, 2, 64);
        cfg.d_state = 4;
        synth_model(&cfg, 21).unwrap()
    }

    #[test]
    fn zero_new_tokens_keeps_prompt() {
        let b = bundle();
        let cfg = SamplerConfig {
            max_new_tokens: 0,
            ..Default::default()
        };
        let g = generate(&b, &[1, 2, 3], &cfg, ForwardOptions::default()).unwrap();
        assert_eq!(g.tokens, vec![1, 2, 3]);
        assert!(g.new_tokens().is_empty());
    }

    #[test]
    fn empty_prompt_rejected() {
        let b = bundle();
        assert!(matches!(
            generate(&b, &[], &SamplerConfig::default(), ForwardOptions::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn same_seed_same_tokens() {
        let b = bundle();
        let cfg = SamplerConfig {
            temperature: 1.0,
            seed: 99,
            max_new_tokens: 12,
            ..Default::default()
        };
        let g1 = generate(&b, &[5, 6], &cfg, ForwardOptions::default()).unwrap();
        let g2 = generate(&b, &[5, 6], &cfg, ForwardOptions::default()).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.new_tokens().len(), 12);
    }

    #[test]
    fn eos_stops_generation() {
        let mut b = bundle();
        let greedy = SamplerConfig {
            greedy: true,
            max_new_tokens: 5,
            ..Default::default()
        };
        let free = generate(&b, &[5, 6], &greedy, ForwardOptions::default()).unwrap();
        b.vocab.eos_id = Some(free.new_tokens()[0]);
        let g = generate(&b, &[5, 6], &greedy, ForwardOptions::default()).unwrap();
        assert!(g.stopped_at_eos);
        assert_eq!(g.new_tokens().len(), 1);
    }

    #[test]
    fn cold_temperature_follows_argmax() {
        let b = bundle();
        let cold = SamplerConfig {
            temperature: 1e-3,
            top_p: 0.9,
            max_new_tokens: 10,
            seed: 4,
            ..Default::default()
        };
        let greedy = SamplerConfig {
            greedy: true,
            ..cold.clone()
        };
        let a = generate(&b, &[10, 20, 30], &cold, ForwardOptions::default()).unwrap();
        let g = generate(&b, &[10, 20, 30], &greedy, ForwardOptions::default()).unwrap();
        assert_eq!(a.tokens, g.tokens);
    }
}
