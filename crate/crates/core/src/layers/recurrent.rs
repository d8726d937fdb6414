//! LSTM and GRU layers over `[batch, time, channels]` with zero initial state.
//!
//! Kernels are laid out `[channels, gates * units]` with gate blocks in the
//! order i, f, g, o for the LSTM and z, r, h for the GRU.

use super::activation::sigmoid;
use super::{expect_rank3, fan_limit, missing_cache, single, Backward, Layer, LayerKind, Mode};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, SeededRng, Tensor};

fn step_input(x: &[f64], b: usize, t: usize, c: usize, step: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * c);
    for bi in 0..b {
        out.extend_from_slice(&x[(bi * t + step) * c..][..c]);
    }
    out
}

fn scatter_step(dst: &mut [f64], src: &[f64], b: usize, t: usize, c: usize, step: usize) {
    for bi in 0..b {
        for (d, s) in dst[(bi * t + step) * c..][..c].iter_mut().zip(&src[bi * c..][..c]) {
            *d += s;
        }
    }
}

fn collect_output(hs: &[Vec<f64>], b: usize, u: usize, seq: bool) -> Result<Tensor> {
    let t = hs.len() - 1;
    if seq {
        let mut out = vec![0.0; b * t * u];
        for (step, h) in hs[1..].iter().enumerate() {
            for bi in 0..b {
                out[(bi * t + step) * u..][..u].copy_from_slice(&h[bi * u..][..u]);
            }
        }
        Tensor::new(&[b, t, u], out)
    } else {
        Tensor::new(&[b, u], hs[t].clone())
    }
}

/// Upstream gradient for hidden state `step`, shaped `[batch, units]`.
fn step_grad(grad: &Tensor, b: usize, t: usize, u: usize, step: usize, seq: bool) -> Vec<f64> {
    if seq {
        step_input(grad.data(), b, t, u, step)
    } else if step == t - 1 {
        grad.data().to_vec()
    } else {
        vec![0.0; b * u]
    }
}

fn check_grad_shape(grad: &Tensor, b: usize, t: usize, u: usize, seq: bool) -> Result<()> {
    let want: &[usize] = if seq { &[b, t, u] } else { &[b, u] };
    if grad.shape() != want {
        return Err(shape_err!(
            "recurrent gradient shape {:?}, expected {want:?}",
            grad.shape()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct LstmCache {
    x: Tensor,
    /// Post-activation gates per step, `[batch, 4 * units]`.
    gates: Vec<Vec<f64>>,
    /// Cell states, index 0 is the zero initial state.
    cells: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    kernel: Tensor,
    recurrent: Tensor,
    bias: Tensor,
    units: usize,
    return_sequences: bool,
    cache: Option<LstmCache>,
}

impl Lstm {
    pub fn new(channels: usize, units: usize, return_sequences: bool, rng: &mut SeededRng) -> Self {
        let mut bias = Tensor::zeros(&[4 * units]);
        bias.data_mut()[units..2 * units].fill(1.0);
        Self {
            kernel: Tensor::uniform_f32(&[channels, 4 * units], fan_limit(channels, 4 * units), rng),
            recurrent: Tensor::uniform_f32(&[units, 4 * units], 1.0 / (units as f64).sqrt(), rng),
            bias,
            units,
            return_sequences,
            cache: None,
        }
    }

    pub fn from_weights(
        kernel: Tensor,
        recurrent: Tensor,
        bias: Tensor,
        return_sequences: bool,
    ) -> Result<Self> {
        let units = recurrent.shape()[0];
        if kernel.rank() != 2
            || kernel.shape()[1] != 4 * units
            || recurrent.shape() != [units, 4 * units]
            || bias.shape() != [4 * units]
        {
            return Err(shape_err!(
                "inconsistent lstm weights {:?} {:?} {:?}",
                kernel.shape(),
                recurrent.shape(),
                bias.shape()
            ));
        }
        Ok(Self {
            kernel,
            recurrent,
            bias,
            units,
            return_sequences,
            cache: None,
        })
    }

    fn run(&self, x: &Tensor) -> Result<LstmCache> {
        let (b, t, c) = expect_rank3(x, "lstm")?;
        if c != self.kernel.shape()[0] {
            return Err(shape_err!(
                "lstm expects {} channels, got {c}",
                self.kernel.shape()[0]
            ));
        }
        let u = self.units;
        let g4 = 4 * u;
        let mut gates = Vec::with_capacity(t);
        let mut cells = vec![vec![0.0; b * u]];
        let mut hs = vec![vec![0.0; b * u]];
        for step in 0..t {
            let xt = step_input(x.data(), b, t, c, step);
            let mut z: Vec<f64> = (0..b).flat_map(|_| self.bias.data().iter().cloned()).collect();
            gemm_acc(&xt, self.kernel.data(), &mut z, b, c, g4);
            gemm_acc(&hs[step], self.recurrent.data(), &mut z, b, u, g4);
            let c_prev = &cells[step];
            let mut c_new = vec![0.0; b * u];
            let mut h_new = vec![0.0; b * u];
            for bi in 0..b {
                let zr = &mut z[bi * g4..][..g4];
                for k in 0..u {
                    let i = sigmoid(zr[k]);
                    let f = sigmoid(zr[u + k]);
                    let g = zr[2 * u + k].tanh();
                    let o = sigmoid(zr[3 * u + k]);
                    zr[k] = i;
                    zr[u + k] = f;
                    zr[2 * u + k] = g;
                    zr[3 * u + k] = o;
                    let cv = f * c_prev[bi * u + k] + i * g;
                    c_new[bi * u + k] = cv;
                    h_new[bi * u + k] = o * cv.tanh();
                }
            }
            gates.push(z);
            cells.push(c_new);
            hs.push(h_new);
        }
        Ok(LstmCache {
            x: x.clone(),
            gates,
            cells,
            hs,
        })
    }
}

impl Layer for Lstm {
    fn kind(&self) -> LayerKind {
        LayerKind::Lstm
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let cache = self.run(single(inputs, "lstm")?)?;
        let b = cache.x.shape()[0];
        let y = collect_output(&cache.hs, b, self.units, self.return_sequences)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "lstm")?;
        let cache = self.run(x)?;
        collect_output(&cache.hs, x.shape()[0], self.units, self.return_sequences)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("lstm"))?;
        let (b, t, c) = expect_rank3(&cache.x, "lstm")?;
        let u = self.units;
        let g4 = 4 * u;
        check_grad_shape(grad, b, t, u, self.return_sequences)?;
        let mut dx = vec![0.0; cache.x.len()];
        let mut dw = vec![0.0; c * g4];
        let mut dr = vec![0.0; u * g4];
        let mut db = vec![0.0; g4];
        let mut dh_next = vec![0.0; b * u];
        let mut dc_next = vec![0.0; b * u];
        for step in (0..t).rev() {
            let gates = &cache.gates[step];
            let c_prev = &cache.cells[step];
            let c_cur = &cache.cells[step + 1];
            let mut dh = step_grad(grad, b, t, u, step, self.return_sequences);
            for (d, n) in dh.iter_mut().zip(&dh_next) {
                *d += n;
            }
            let mut dz = vec![0.0; b * g4];
            for bi in 0..b {
                let gr = &gates[bi * g4..][..g4];
                let dzr = &mut dz[bi * g4..][..g4];
                for k in 0..u {
                    let idx = bi * u + k;
                    let (i, f, g, o) = (gr[k], gr[u + k], gr[2 * u + k], gr[3 * u + k]);
                    let tc = c_cur[idx].tanh();
                    let dhv = dh[idx];
                    let dc = dhv * o * (1.0 - tc * tc) + dc_next[idx];
                    dzr[k] = dc * g * i * (1.0 - i);
                    dzr[u + k] = dc * c_prev[idx] * f * (1.0 - f);
                    dzr[2 * u + k] = dc * i * (1.0 - g * g);
                    dzr[3 * u + k] = dhv * tc * o * (1.0 - o);
                    dc_next[idx] = dc * f;
                }
            }
            let xt = step_input(cache.x.data(), b, t, c, step);
            gemm_at_b_acc(&xt, &dz, &mut dw, b, c, g4);
            gemm_at_b_acc(&cache.hs[step], &dz, &mut dr, b, u, g4);
            for row in dz.chunks(g4) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            let mut dxt = vec![0.0; b * c];
            gemm_a_bt_acc(&dz, self.kernel.data(), &mut dxt, b, g4, c);
            scatter_step(&mut dx, &dxt, b, t, c, step);
            dh_next = vec![0.0; b * u];
            gemm_a_bt_acc(&dz, self.recurrent.data(), &mut dh_next, b, g4, u);
        }
        Ok(Backward {
            inputs: vec![Tensor::new(cache.x.shape(), dx)?],
            params: vec![
                Tensor::new(&[c, g4], dw)?,
                Tensor::new(&[u, g4], dr)?,
                Tensor::new(&[g4], db)?,
            ],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("kernel".into(), &self.kernel),
            ("recurrent_kernel".into(), &self.recurrent),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("kernel".into(), &mut self.kernel),
            ("recurrent_kernel".into(), &mut self.recurrent),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone)]
struct GruCache {
    x: Tensor,
    /// Post-activation z, r, candidate per step, `[batch, 3 * units]`.
    gates: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
}

/// GRU with the reset gate applied before the recurrent product:
/// `h~ = tanh(x W_h + (r * h) U_h + b_h)`, `h = (1 - z) * h_prev + z * h~`.
#[derive(Debug, Clone)]
pub struct Gru {
    kernel: Tensor,
    recurrent: Tensor,
    bias: Tensor,
    units: usize,
    return_sequences: bool,
    cache: Option<GruCache>,
}

impl Gru {
    pub fn new(channels: usize, units: usize, return_sequences: bool, rng: &mut SeededRng) -> Self {
        Self {
            kernel: Tensor::uniform_f32(&[channels, 3 * units], fan_limit(channels, 3 * units), rng),
            recurrent: Tensor::uniform_f32(&[units, 3 * units], 1.0 / (units as f64).sqrt(), rng),
            bias: Tensor::zeros(&[3 * units]),
            units,
            return_sequences,
            cache: None,
        }
    }

    pub fn from_weights(
        kernel: Tensor,
        recurrent: Tensor,
        bias: Tensor,
        return_sequences: bool,
    ) -> Result<Self> {
        let units = recurrent.shape()[0];
        if kernel.rank() != 2
            || kernel.shape()[1] != 3 * units
            || recurrent.shape() != [units, 3 * units]
            || bias.shape() != [3 * units]
        {
            return Err(shape_err!(
                "inconsistent gru weights {:?} {:?} {:?}",
                kernel.shape(),
                recurrent.shape(),
                bias.shape()
            ));
        }
        Ok(Self {
            kernel,
            recurrent,
            bias,
            units,
            return_sequences,
            cache: None,
        })
    }

    fn run(&self, x: &Tensor) -> Result<GruCache> {
        let (b, t, c) = expect_rank3(x, "gru")?;
        if c != self.kernel.shape()[0] {
            return Err(shape_err!(
                "gru expects {} channels, got {c}",
                self.kernel.shape()[0]
            ));
        }
        let u = self.units;
        let g3 = 3 * u;
        let mut gates = Vec::with_capacity(t);
        let mut hs = vec![vec![0.0; b * u]];
        for step in 0..t {
            let xt = step_input(x.data(), b, t, c, step);
            let h_prev = &hs[step];
            let mut zx: Vec<f64> = (0..b).flat_map(|_| self.bias.data().iter().cloned()).collect();
            gemm_acc(&xt, self.kernel.data(), &mut zx, b, c, g3);
            let mut zh = vec![0.0; b * g3];
            gemm_acc(h_prev, self.recurrent.data(), &mut zh, b, u, g3);
            let mut act = vec![0.0; b * g3];
            let mut rh = vec![0.0; b * u];
            for bi in 0..b {
                for k in 0..u {
                    let z = sigmoid(zx[bi * g3 + k] + zh[bi * g3 + k]);
                    let r = sigmoid(zx[bi * g3 + u + k] + zh[bi * g3 + u + k]);
                    act[bi * g3 + k] = z;
                    act[bi * g3 + u + k] = r;
                    rh[bi * u + k] = r * h_prev[bi * u + k];
                }
            }
            // candidate uses only the last gate block of the recurrent kernel
            let mut zc = vec![0.0; b * g3];
            gemm_acc(&rh, self.recurrent.data(), &mut zc, b, u, g3);
            let mut h_new = vec![0.0; b * u];
            for bi in 0..b {
                for k in 0..u {
                    let hh = (zx[bi * g3 + 2 * u + k] + zc[bi * g3 + 2 * u + k]).tanh();
                    act[bi * g3 + 2 * u + k] = hh;
                    let z = act[bi * g3 + k];
                    h_new[bi * u + k] = (1.0 - z) * h_prev[bi * u + k] + z * hh;
                }
            }
            gates.push(act);
            hs.push(h_new);
        }
        Ok(GruCache {
            x: x.clone(),
            gates,
            hs,
        })
    }
}

impl Layer for Gru {
    fn kind(&self) -> LayerKind {
        LayerKind::Gru
    }

    fn forward(&mut self, inputs: &[&Tensor], _mode: Mode) -> Result<Tensor> {
        let cache = self.run(single(inputs, "gru")?)?;
        let b = cache.x.shape()[0];
        let y = collect_output(&cache.hs, b, self.units, self.return_sequences)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = single(inputs, "gru")?;
        let cache = self.run(x)?;
        collect_output(&cache.hs, x.shape()[0], self.units, self.return_sequences)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Backward> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("gru"))?;
        let (b, t, c) = expect_rank3(&cache.x, "gru")?;
        let u = self.units;
        let g3 = 3 * u;
        check_grad_shape(grad, b, t, u, self.return_sequences)?;
        let rk = self.recurrent.data();
        let mut dx = vec![0.0; cache.x.len()];
        let mut dw = vec![0.0; c * g3];
        let mut dr = vec![0.0; u * g3];
        let mut db = vec![0.0; g3];
        let mut dh_next = vec![0.0; b * u];
        for step in (0..t).rev() {
            let act = &cache.gates[step];
            let h_prev = &cache.hs[step];
            let mut dh = step_grad(grad, b, t, u, step, self.return_sequences);
            for (d, n) in dh.iter_mut().zip(&dh_next) {
                *d += n;
            }
            // gate pre-activation grads: a_zr feeds z/r blocks, a_c feeds the candidate block
            let mut a_zr = vec![0.0; b * g3];
            let mut a_c = vec![0.0; b * g3];
            let mut dh_prev = vec![0.0; b * u];
            for bi in 0..b {
                for k in 0..u {
                    let idx = bi * u + k;
                    let z = act[bi * g3 + k];
                    let hh = act[bi * g3 + 2 * u + k];
                    let dz = dh[idx] * (hh - h_prev[idx]);
                    a_zr[bi * g3 + k] = dz * z * (1.0 - z);
                    a_c[bi * g3 + 2 * u + k] = dh[idx] * z * (1.0 - hh * hh);
                    dh_prev[idx] = dh[idx] * (1.0 - z);
                }
            }
            let mut drh = vec![0.0; b * u];
            gemm_a_bt_acc(&a_c, rk, &mut drh, b, g3, u);
            let mut rh = vec![0.0; b * u];
            for bi in 0..b {
                for k in 0..u {
                    let idx = bi * u + k;
                    let r = act[bi * g3 + u + k];
                    a_zr[bi * g3 + u + k] = drh[idx] * h_prev[idx] * r * (1.0 - r);
                    dh_prev[idx] += drh[idx] * r;
                    rh[idx] = r * h_prev[idx];
                }
            }
            gemm_at_b_acc(h_prev, &a_zr, &mut dr, b, u, g3);
            gemm_at_b_acc(&rh, &a_c, &mut dr, b, u, g3);
            gemm_a_bt_acc(&a_zr, rk, &mut dh_prev, b, g3, u);
            let a: Vec<f64> = a_zr.iter().zip(&a_c).map(|(p, q)| p + q).collect();
            let xt = step_input(cache.x.data(), b, t, c, step);
            gemm_at_b_acc(&xt, &a, &mut dw, b, c, g3);
            for row in a.chunks(g3) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            let mut dxt = vec![0.0; b * c];
            gemm_a_bt_acc(&a, self.kernel.data(), &mut dxt, b, g3, c);
            scatter_step(&mut dx, &dxt, b, t, c, step);
            dh_next = dh_prev;
        }
        Ok(Backward {
            inputs: vec![Tensor::new(cache.x.shape(), dx)?],
            params: vec![
                Tensor::new(&[c, g3], dw)?,
                Tensor::new(&[u, g3], dr)?,
                Tensor::new(&[g3], db)?,
            ],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("kernel".into(), &self.kernel),
            ("recurrent_kernel".into(), &self.recurrent),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("kernel".into(), &mut self.kernel),
            ("recurrent_kernel".into(), &mut self.recurrent),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
