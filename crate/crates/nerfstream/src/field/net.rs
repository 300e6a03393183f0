//! The small fully-connected network behind the encoding.
//!
//! Density branch: 16-dim encoding -> 64 rectified units -> raw density
//! plus a 15-dim geometry feature. Color branch: feature concatenated with
//! a degree-3 spherical-harmonic direction basis (16 dims) -> 64 rectified
//! units -> 3 values squashed to (0,1). Density passes through softplus so
//! it stays nonnegative with bounded gradients.
//!
//! Weight matrices are stored input-major (`w[input * OUT + output]`) so the
//! inner loops run over contiguous output lanes and vectorize.

use super::{COLOR_IN, ENC_DIM, GEO_FEAT, HIDDEN, SH_DIM};
use rand::Rng;

pub const DENSITY_OUT: usize = 1 + GEO_FEAT; // raw sigma + feature

/// All learnable network parameters as flat slices.
#[derive(Debug, Clone)]
pub struct NetParams {
    pub w1: Vec<f32>, // ENC_DIM x HIDDEN
    pub b1: Vec<f32>, // HIDDEN
    pub w2: Vec<f32>, // HIDDEN x DENSITY_OUT
    pub b2: Vec<f32>, // DENSITY_OUT
    pub w3: Vec<f32>, // COLOR_IN x HIDDEN
    pub b3: Vec<f32>, // HIDDEN
    pub w4: Vec<f32>, // HIDDEN x 3
    pub b4: Vec<f32>, // 3
}

impl NetParams {
    /// Xavier-uniform weights, zero biases except the raw-density bias,
    /// which starts negative so a fresh field is near-transparent.
    pub fn init<R: Rng>(rng: &mut R, density_bias: f32) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize| -> Vec<f32> {
            let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
            (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect()
        };
        let w1 = layer(ENC_DIM, HIDDEN);
        let w2 = layer(HIDDEN, DENSITY_OUT);
        let w3 = layer(COLOR_IN, HIDDEN);
        let w4 = layer(HIDDEN, 3);
        let mut b2 = vec![0f32; DENSITY_OUT];
        b2[0] = density_bias;
        Self {
            w1,
            b1: vec![0f32; HIDDEN],
            w2,
            b2,
            w3: w3.clone(),
            b3: vec![0f32; HIDDEN],
            w4,
            b4: vec![0f32; 3],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
            + self.w4.len()
            + self.b4.len()
    }
}

/// Numerically stable softplus.
#[inline]
pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// d softplus(x) / dx recovered from the activation value.
#[inline]
pub fn softplus_grad_from_output(sigma: f32) -> f32 {
    1.0 - (-sigma).exp()
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Real spherical-harmonic basis up to degree 3 for a unit direction.
#[inline]
pub fn sh_basis(d: [f32; 3]) -> [f32; SH_DIM] {
    let [x, y, z] = d;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        0.282_094_79,
        -0.488_602_51 * y,
        0.488_602_51 * z,
        -0.488_602_51 * x,
        1.092_548_4 * x * y,
        -1.092_548_4 * y * z,
        0.946_174_7 * zz - 0.315_391_57,
        -1.092_548_4 * x * z,
        0.546_274_2 * (xx - yy),
        -0.590_043_6 * y * (3.0 * xx - yy),
        2.890_611_4 * x * y * z,
        -0.457_045_8 * y * (5.0 * zz - 1.0),
        0.373_176_33 * z * (5.0 * zz - 3.0),
        -0.457_045_8 * x * (5.0 * zz - 1.0),
        1.445_305_7 * z * (xx - yy),
        -0.590_043_6 * x * (xx - 3.0 * yy),
    ]
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NetTrace {
    pub enc: [f32; ENC_DIM],
    pub h1: [f32; HIDDEN],        // post-relu
    pub d16: [f32; DENSITY_OUT],  // raw sigma + feature
    pub sh: [f32; SH_DIM],
    pub h2: [f32; HIDDEN],        // post-relu
    pub color: [f32; 3],          // post-sigmoid
    pub sigma: f32,
}

impl Default for NetTrace {
    fn default() -> Self {
        Self {
            enc: [0.0; ENC_DIM],
            h1: [0.0; HIDDEN],
            d16: [0.0; DENSITY_OUT],
            sh: [0.0; SH_DIM],
            h2: [0.0; HIDDEN],
            color: [0.0; 3],
            sigma: 0.0,
        }
    }
}

/// y += x * row, the vector axpy at the heart of every layer here.
#[inline(always)]
fn axpy(y: &mut [f32], x: f32, row: &[f32]) {
    for (v, r) in y.iter_mut().zip(row) {
        *v += x * r;
    }
}

/// Dot product with eight partial lanes so the reduction vectorizes.
#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    let mut s: f32 = lanes.iter().sum();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

/// Density half of the forward pass: encoding -> (sigma, feature).
#[inline]
pub fn forward_density(p: &NetParams, enc: &[f32; ENC_DIM], trace: &mut NetTrace) {
    let mut h1 = [0f32; HIDDEN];
    h1.copy_from_slice(&p.b1);
    for (i, &e) in enc.iter().enumerate() {
        axpy(&mut h1, e, &p.w1[i * HIDDEN..(i + 1) * HIDDEN]);
    }
    for v in h1.iter_mut() {
        *v = v.max(0.0);
    }

    let mut d16 = [0f32; DENSITY_OUT];
    d16.copy_from_slice(&p.b2);
    for (k, &h) in h1.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        axpy(&mut d16, h, &p.w2[k * DENSITY_OUT..(k + 1) * DENSITY_OUT]);
    }

    trace.enc = *enc;
    trace.h1 = h1;
    trace.d16 = d16;
    trace.sigma = softplus(d16[0]);
}

/// Color half of the forward pass; requires `forward_density` to have
/// filled the trace.
#[inline]
pub fn forward_color(p: &NetParams, sh: &[f32; SH_DIM], trace: &mut NetTrace) {
    let mut h2 = [0f32; HIDDEN];
    h2.copy_from_slice(&p.b3);
    for i in 0..GEO_FEAT {
        axpy(&mut h2, trace.d16[1 + i], &p.w3[i * HIDDEN..(i + 1) * HIDDEN]);
    }
    for (i, &s) in sh.iter().enumerate() {
        axpy(
            &mut h2,
            s,
            &p.w3[(GEO_FEAT + i) * HIDDEN..(GEO_FEAT + i + 1) * HIDDEN],
        );
    }
    for v in h2.iter_mut() {
        *v = v.max(0.0);
    }

    let mut rgb = [p.b4[0], p.b4[1], p.b4[2]];
    for (k, &h) in h2.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        let row = &p.w4[k * 3..k * 3 + 3];
        rgb[0] += h * row[0];
        rgb[1] += h * row[1];
        rgb[2] += h * row[2];
    }

    trace.sh = *sh;
    trace.h2 = h2;
    trace.color = rgb.map(sigmoid);
}

/// Gradient buffers matching `NetParams`.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
    pub w3: Vec<f32>,
    pub b3: Vec<f32>,
    pub w4: Vec<f32>,
    pub b4: Vec<f32>,
}

impl NetGrads {
    pub fn zeros_like(p: &NetParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
            w3: vec![0.0; p.w3.len()],
            b3: vec![0.0; p.b3.len()],
            w4: vec![0.0; p.w4.len()],
            b4: vec![0.0; p.b4.len()],
        }
    }

    pub fn clear(&mut self) {
        for g in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
        ] {
            g.fill(0.0);
        }
    }
}

/// Backpropagates one sample's (d sigma, d color) through the network,
/// accumulating parameter gradients and returning the gradient w.r.t. the
/// encoding for the grid scatter.
pub fn backward_sample(
    p: &NetParams,
    trace: &NetTrace,
    d_sigma: f32,
    d_color: [f32; 3],
    g: &mut NetGrads,
) -> [f32; ENC_DIM] {
    // color head: sigmoid then linear
    let mut d_rgbpre = [0f32; 3];
    for j in 0..3 {
        let c = trace.color[j];
        d_rgbpre[j] = d_color[j] * c * (1.0 - c);
    }

    let mut d_h2 = [0f32; HIDDEN];
    if d_rgbpre != [0.0; 3] {
        for (k, &h) in trace.h2.iter().enumerate() {
            let row = &p.w4[k * 3..k * 3 + 3];
            if h > 0.0 {
                d_h2[k] = row[0] * d_rgbpre[0] + row[1] * d_rgbpre[1] + row[2] * d_rgbpre[2];
                let grow = &mut g.w4[k * 3..k * 3 + 3];
                grow[0] += h * d_rgbpre[0];
                grow[1] += h * d_rgbpre[1];
                grow[2] += h * d_rgbpre[2];
            }
        }
        for j in 0..3 {
            g.b4[j] += d_rgbpre[j];
        }
    }

    // color hidden layer back to the geometry feature (the SH part of the
    // input is not learnable upstream)
    let mut d_feat = [0f32; GEO_FEAT];
    if d_h2 != [0.0; HIDDEN] {
        for (i, df) in d_feat.iter_mut().enumerate() {
            *df = dot(&p.w3[i * HIDDEN..(i + 1) * HIDDEN], &d_h2);
            axpy(
                &mut g.w3[i * HIDDEN..(i + 1) * HIDDEN],
                trace.d16[1 + i],
                &d_h2,
            );
        }
        for (i, &s) in trace.sh.iter().enumerate() {
            axpy(
                &mut g.w3[(GEO_FEAT + i) * HIDDEN..(GEO_FEAT + i + 1) * HIDDEN],
                s,
                &d_h2,
            );
        }
        axpy(&mut g.b3, 1.0, &d_h2);
    }

    // density head
    let mut d_d16 = [0f32; DENSITY_OUT];
    d_d16[0] = d_sigma * softplus_grad_from_output(trace.sigma);
    d_d16[1..].copy_from_slice(&d_feat);

    let mut d_h1 = [0f32; HIDDEN];
    for (k, &h) in trace.h1.iter().enumerate() {
        if h <= 0.0 {
            continue;
        }
        d_h1[k] = dot(&p.w2[k * DENSITY_OUT..(k + 1) * DENSITY_OUT], &d_d16);
        axpy(&mut g.w2[k * DENSITY_OUT..(k + 1) * DENSITY_OUT], h, &d_d16);
    }
    axpy(&mut g.b2, 1.0, &d_d16);

    // first layer back to the encoding
    let mut d_enc = [0f32; ENC_DIM];
    for (i, de) in d_enc.iter_mut().enumerate() {
        *de = dot(&p.w1[i * HIDDEN..(i + 1) * HIDDEN], &d_h1);
        axpy(
            &mut g.w1[i * HIDDEN..(i + 1) * HIDDEN],
            trace.enc[i],
            &d_h1,
        );
    }
    axpy(&mut g.b1, 1.0, &d_h1);

    d_enc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softplus_is_stable_and_positive() {
        assert!(softplus(-100.0) >= 0.0);
        assert!(softplus(100.0).is_finite());
        assert!((softplus(100.0) - 100.0).abs() < 1e-4);
        assert!((softplus(0.0) - 0.693_147_2).abs() < 1e-6);
    }

    #[test]
    fn sh_basis_first_band_is_constant() {
        let a = sh_basis([1.0, 0.0, 0.0]);
        let b = sh_basis([0.0, 0.5f32.sqrt(), -(0.5f32.sqrt())]);
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn fresh_network_outputs_are_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = NetParams::init(&mut rng, -3.0);
        let mut trace = NetTrace::default();
        let enc = [0.05f32; ENC_DIM];
        forward_density(&p, &enc, &mut trace);
        forward_color(&p, &sh_basis([0.0, 0.0, 1.0]), &mut trace);
        assert!(trace.sigma.is_finite() && trace.sigma >= 0.0);
        for c in trace.color {
            assert!(c > 0.0 && c < 1.0);
        }
    }

    /// Double-precision reference forward of the network, independent of
    /// the f32 implementation; the objective is
    /// d_sigma * sigma + d_color . color.
    struct NetF64 {
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        w3: Vec<f64>,
        b3: Vec<f64>,
        w4: Vec<f64>,
        b4: Vec<f64>,
    }

    impl NetF64 {
        fn from(p: &NetParams) -> Self {
            let up = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
            Self {
                w1: up(&p.w1),
                b1: up(&p.b1),
                w2: up(&p.w2),
                b2: up(&p.b2),
                w3: up(&p.w3),
                b3: up(&p.b3),
                w4: up(&p.w4),
                b4: up(&p.b4),
            }
        }

        fn tensor(&mut self, which: usize) -> &mut Vec<f64> {
            [
                &mut self.w1,
                &mut self.b1,
                &mut self.w2,
                &mut self.b2,
                &mut self.w3,
                &mut self.b3,
                &mut self.w4,
                &mut self.b4,
            ][which]
        }

        fn objective(
            &self,
            enc: &[f32; ENC_DIM],
            sh: &[f32; SH_DIM],
            d_sigma: f64,
            d_color: [f64; 3],
        ) -> f64 {
            let mut h1 = self.b1.clone();
            for (i, &e) in enc.iter().enumerate() {
                for k in 0..HIDDEN {
                    h1[k] += e as f64 * self.w1[i * HIDDEN + k];
                }
            }
            for v in h1.iter_mut() {
                *v = v.max(0.0);
            }
            let mut d16 = self.b2.clone();
            for (k, &h) in h1.iter().enumerate() {
                for j in 0..DENSITY_OUT {
                    d16[j] += h * self.w2[k * DENSITY_OUT + j];
                }
            }
            let sigma = d16[0].max(0.0) + (-d16[0].abs()).exp().ln_1p();
            let mut h2 = self.b3.clone();
            for i in 0..GEO_FEAT {
                for k in 0..HIDDEN {
                    h2[k] += d16[1 + i] * self.w3[i * HIDDEN + k];
                }
            }
            for (i, &s) in sh.iter().enumerate() {
                for k in 0..HIDDEN {
                    h2[k] += s as f64 * self.w3[(GEO_FEAT + i) * HIDDEN + k];
                }
            }
            for v in h2.iter_mut() {
                *v = v.max(0.0);
            }
            let mut rgb = self.b4.clone();
            for (k, &h) in h2.iter().enumerate() {
                for j in 0..3 {
                    rgb[j] += h * self.w4[k * 3 + j];
                }
            }
            let color: Vec<f64> = rgb.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
            d_sigma * sigma + d_color.iter().zip(color).map(|(d, c)| d * c).sum::<f64>()
        }
    }

    /// Finite-difference check of the per-sample backward pass against the
    /// double-precision reference forward.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let p = NetParams::init(&mut rng, -0.5);
        let enc: [f32; ENC_DIM] = std::array::from_fn(|i| 0.3 - 0.04 * i as f32);
        let sh = sh_basis([0.267, -0.534, 0.802]);
        let d_sigma = 0.7f32;
        let d_color = [0.3f32, -0.2, 0.5];

        let mut trace = NetTrace::default();
        forward_density(&p, &enc, &mut trace);
        forward_color(&p, &sh, &mut trace);
        let mut grads = NetGrads::zeros_like(&p);
        backward_sample(&p, &trace, d_sigma, d_color, &mut grads);

        // (tensor, index, analytic gradient)
        let cases = [
            (0usize, 7usize, grads.w1[7]),
            (0, 100, grads.w1[100]),
            (2, 40, grads.w2[40]),
            (4, 3, grads.w3[3]),
            (4, 900, grads.w3[900]),
            (6, 11, grads.w4[11]),
            (3, 0, grads.b2[0]),
            (3, 8, grads.b2[8]),
        ];
        let d_color64 = [0.3f64, -0.2, 0.5];
        let h = 1e-5f64;
        for (which, idx, analytic) in cases {
            let mut hi = NetF64::from(&p);
            hi.tensor(which)[idx] += h;
            let mut lo = NetF64::from(&p);
            lo.tensor(which)[idx] -= h;
            let fd = (hi.objective(&enc, &sh, d_sigma as f64, d_color64)
                - lo.objective(&enc, &sh, d_sigma as f64, d_color64))
                / (2.0 * h);
            let denom = (analytic as f64).abs().max(fd.abs());
            if denom < 1e-6 {
                continue; // both effectively zero
            }
            // the f32 backward carries ~1e-6 absolute rounding noise
            assert!(
                (analytic as f64 - fd).abs() / denom < 5e-3,
                "tensor {which} idx {idx}: analytic {analytic}, fd {fd}"
            );
        }
    }
}
