//! Double-precision reference evaluation of the photometric loss.
//!
//! Re-implements the encoding gather, network forward and quadrature in
//! f64, sharing no arithmetic with the f32 training path; the gradient
//! verification suites difference this reference against the analytic
//! backward pass. Runs exact quadrature (no early stopping), so compare
//! only against gradients accumulated with `min_transmittance = 0`.
//!
//! Grid footprints (corner indices and trilinear weights) are taken from
//! the implementation: they are constants with respect to the parameters
//! being differentiated, and the reference must probe the same table
//! entries the field reads.

use super::net::DENSITY_OUT;
use super::train::RayBatch;
use super::{RadianceField, ENC_DIM, FEATURES, GEO_FEAT, HIDDEN, LEVELS, SH_DIM};

pub struct FieldF64 {
    grid: Vec<f64>,
    /// w1, b1, w2, b2, w3, b3, w4, b4
    net: [Vec<f64>; 8],
}

impl FieldF64 {
    pub fn from_field(field: &RadianceField) -> Self {
        let up = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        Self {
            grid: up(&field.grid_table),
            net: [
                up(&field.net.w1),
                up(&field.net.b1),
                up(&field.net.w2),
                up(&field.net.b2),
                up(&field.net.w3),
                up(&field.net.b3),
                up(&field.net.w4),
                up(&field.net.b4),
            ],
        }
    }

    /// Mean-squared photometric error of the batch with one parameter
    /// (global index, trainer ordering) offset by `delta`.
    pub fn loss_perturbed(
        &self,
        field: &RadianceField,
        batch: &RayBatch,
        global_idx: usize,
        delta: f64,
    ) -> f64 {
        let grid_len = self.grid.len();
        let (net_tensor, net_idx) = if global_idx >= grid_len {
            let mut idx = global_idx - grid_len;
            let mut which = 0usize;
            for (w, t) in self.net.iter().enumerate() {
                if idx < t.len() {
                    which = w;
                    break;
                }
                idx -= t.len();
            }
            (Some(which), idx)
        } else {
            (None, 0)
        };
        let grid_at = |i: usize| -> f64 {
            if net_tensor.is_none() && i == global_idx {
                self.grid[i] + delta
            } else {
                self.grid[i]
            }
        };
        let net_at = |which: usize, i: usize| -> f64 {
            if net_tensor == Some(which) && i == net_idx {
                self.net[which][i] + delta
            } else {
                self.net[which][i]
            }
        };

        let mut sum = 0f64;
        let mut rays = 0usize;
        for (ray, target, ts) in batch.iter() {
            rays += 1;
            let mut color = [0f64; 3];
            if !ray.is_empty() && !ts.is_empty() {
                let mut transmittance = 1f64;
                for (i, &t) in ts.iter().enumerate() {
                    let delta_t = if i + 1 < ts.len() {
                        (ts[i + 1] - t) as f64
                    } else {
                        (ray.t_far - t) as f64
                    };
                    let (sigma, c) =
                        self.sample(field, ray.point_at(t), ray.direction, &grid_at, &net_at);
                    let alpha = 1.0 - (-sigma * delta_t.max(0.0)).exp();
                    let w = transmittance * alpha;
                    for ch in 0..3 {
                        color[ch] += w * c[ch];
                    }
                    transmittance *= 1.0 - alpha;
                }
            }
            for ch in 0..3 {
                let r = color[ch] - target[ch] as f64;
                sum += r * r;
            }
        }
        sum / (rays * 3) as f64
    }

    fn sample(
        &self,
        field: &RadianceField,
        q: [f32; 3],
        dir: [f32; 3],
        grid_at: &dyn Fn(usize) -> f64,
        net_at: &dyn Fn(usize, usize) -> f64,
    ) -> (f64, [f64; 3]) {
        // encoding via the implementation's footprint
        let fp = field.grid.footprint(q);
        let mut enc = [0f64; ENC_DIM];
        for l in 0..LEVELS {
            let off = field.grid.level_offset(l);
            let mut f0 = 0f64;
            let mut f1 = 0f64;
            for &(idx, w) in &fp.corners[l] {
                let o = off + idx as usize * FEATURES;
                f0 += w as f64 * grid_at(o);
                f1 += w as f64 * grid_at(o + 1);
            }
            enc[l * FEATURES] = f0;
            enc[l * FEATURES + 1] = f1;
        }

        let mut h1 = [0f64; HIDDEN];
        for (k, v) in h1.iter_mut().enumerate() {
            *v = net_at(1, k);
        }
        for (i, &e) in enc.iter().enumerate() {
            for k in 0..HIDDEN {
                h1[k] += e * net_at(0, i * HIDDEN + k);
            }
        }
        for v in h1.iter_mut() {
            *v = v.max(0.0);
        }

        let mut d16 = [0f64; DENSITY_OUT];
        for (j, v) in d16.iter_mut().enumerate() {
            *v = net_at(3, j);
        }
        for (k, &h) in h1.iter().enumerate() {
            for j in 0..DENSITY_OUT {
                d16[j] += h * net_at(2, k * DENSITY_OUT + j);
            }
        }
        let sigma = d16[0].max(0.0) + (-d16[0].abs()).exp().ln_1p();

        let sh = sh_basis_f64(dir);
        let mut h2 = [0f64; HIDDEN];
        for (k, v) in h2.iter_mut().enumerate() {
            *v = net_at(5, k);
        }
        for i in 0..GEO_FEAT {
            for k in 0..HIDDEN {
                h2[k] += d16[1 + i] * net_at(4, i * HIDDEN + k);
            }
        }
        for (i, &s) in sh.iter().enumerate() {
            for k in 0..HIDDEN {
                h2[k] += s * net_at(4, (GEO_FEAT + i) * HIDDEN + k);
            }
        }
        for v in h2.iter_mut() {
            *v = v.max(0.0);
        }

        let mut rgb = [net_at(7, 0), net_at(7, 1), net_at(7, 2)];
        for (k, &h) in h2.iter().enumerate() {
            for (j, v) in rgb.iter_mut().enumerate() {
                *v += h * net_at(6, k * 3 + j);
            }
        }
        (sigma, rgb.map(|x| 1.0 / (1.0 + (-x).exp())))
    }
}

fn sh_basis_f64(d: [f32; 3]) -> [f64; SH_DIM] {
    let (x, y, z) = (d[0] as f64, d[1] as f64, d[2] as f64);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        0.28209479177387814,
        -0.4886025119029199 * y,
        0.4886025119029199 * z,
        -0.4886025119029199 * x,
        1.0925484305920792 * x * y,
        -1.0925484305920792 * y * z,
        0.9461746957575601 * zz - 0.31539156525252005,
        -1.0925484305920792 * x * z,
        0.5462742152960396 * (xx - yy),
        -0.5900435899266435 * y * (3.0 * xx - yy),
        2.890611442640554 * x * y * z,
        -0.4570457994644658 * y * (5.0 * zz - 1.0),
        0.3731763325901154 * z * (5.0 * zz - 3.0),
        -0.4570457994644658 * x * (5.0 * zz - 1.0),
        1.445305721320277 * z * (xx - yy),
        -0.5900435899266435 * x * (xx - 3.0 * yy),
    ]
}
