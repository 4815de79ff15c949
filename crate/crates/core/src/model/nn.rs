//! Dense kernels shared by the sequence and step paths.

/// Row-major `rows × cols` matrix of 32-bit weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = W x`.
    pub fn matvec_into(&self, x: &[f32], out: &mut [f32], acc64: bool) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x, acc64);
        }
    }

    pub fn matvec(&self, x: &[f32], acc64: bool) -> Vec<f32> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out, acc64);
        out
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32], acc64: bool) -> f32 {
    if acc64 {
        a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32
    } else {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }
}

/// `x · weight / sqrt(mean(x²) + eps)`; an all-zero row with `eps = 0` maps to zero.
pub fn rmsnorm(x: &[f32], weight: &[f32], eps: f32) -> Vec<f32> {
    let ms = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len().max(1) as f64;
    let denom = (ms + eps as f64).sqrt();
    if denom == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter()
        .zip(weight)
        .map(|(&v, &w)| (v as f64 * w as f64 / denom) as f32)
        .collect()
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Causal depthwise convolution over `L × channels` input.
///
/// `kernel` is `channels × width`; tap `width - 1` multiplies the current
/// position, earlier taps reach back in time, out-of-range input is zero.
pub fn depthwise_conv1d_causal(x: &[f32], channels: usize, kernel: &[f32], bias: &[f32], width: usize) -> Vec<f32> {
    let len = x.len() / channels;
    let mut out = vec![0.0; x.len()];
    for t in 0..len {
        for d in 0..channels {
            let mut acc = bias[d];
            for i in 0..width {
                let src = t as isize - width as isize + 1 + i as isize;
                if src >= 0 {
                    acc += kernel[d * width + i] * x[src as usize * channels + d];
                }
            }
            out[t * channels + d] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsnorm_examples() {
        assert_eq!(rmsnorm(&[1.0; 4], &[1.0; 4], 0.0), vec![1.0; 4]);
        assert_eq!(rmsnorm(&[0.0; 3], &[1.0; 3], 0.0), vec![0.0; 3]);
        let r = rmsnorm(&[3.0, 4.0], &[1.0, 1.0], 0.0);
        let s = 12.5f64.sqrt();
        assert!((r[0] as f64 - 3.0 / s).abs() < 1e-6);
        assert!((r[1] as f64 - 4.0 / s).abs() < 1e-6);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(silu(0.0), 0.0);
        assert!((softplus(0.0) - std::f32::consts::LN_2).abs() < 1e-7);
        assert!((softplus(30.0) - 30.0).abs() < 1e-9);
        assert!(softplus(-30.0) > 0.0);
    }

    #[test]
    fn conv_identity_and_box() {
        let (c, w) = (2, 4);
        let mut k = vec![0.0; c * w];
        k[w - 1] = 1.0;
        k[2 * w - 1] = 1.0;
        let x: Vec<f32> = (0..10).map(|v| v as f32 * 0.5 - 1.0).collect();
        assert_eq!(depthwise_conv1d_causal(&x, c, &k, &[0.0, 0.0], w), x);

        let mut impulse = vec![0.0; 8];
        impulse[1] = 1.0;
        let ones = vec![1.0; w];
        let y = depthwise_conv1d_causal(&impulse, 1, &ones, &[0.0], w);
        assert_eq!(y, vec![0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_is_causal() {
        let k = [0.3, -0.2, 0.5, 1.1];
        let x: Vec<f32> = (0..6).map(|v| (v as f32).sin()).collect();
        let base = depthwise_conv1d_causal(&x, 1, &k, &[0.1], 4);
        for t in 0..5 {
            let mut y = x.clone();
            y[t + 1] += 10.0;
            let pert = depthwise_conv1d_causal(&y, 1, &k, &[0.1], 4);
            assert_eq!(base[..=t], pert[..=t]);
        }
    }
}
