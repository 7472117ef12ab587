use super::{ConvLstmModel, ConvLstmState, Tensor3};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;

/// Intermediates of one forward step, consumed by [`ConvLstmModel::cell_backward`].
#[derive(Debug, Clone)]
pub struct CellCache {
    version: u64,
    input_channels: usize,
    hidden: usize,
    kernel: usize,
    height: usize,
    width: usize,
    /// im2col expansion of `[o_t, h_{t-1}]`, `[(K + C_h) k k][H W]`.
    col: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, o, g]`, each `[C_h][H W]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Gradients produced by one backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradients {
    /// Same layout as [`ConvLstmModel::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to `(h_{t-1}, c_{t-1})`.
    pub state_prev: ConvLstmState,
    /// Gradient with respect to the backbone heatmaps `o_t`.
    pub input: Tensor3,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `c = alpha * a * b + beta * c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index touched by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid destination range `lo..hi` along one axis for a tap offset `d`.
fn valid_range(d: isize, len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

fn im2col(input: &[f64], channels: usize, height: usize, width: usize, kernel: usize) -> Vec<f64> {
    let plane = height * width;
    let r = (kernel / 2) as isize;
    let mut col = vec![0.0; channels * kernel * kernel * plane];
    for ch in 0..channels {
        let src = &input[ch * plane..(ch + 1) * plane];
        for ky in 0..kernel {
            let dy = ky as isize - r;
            let (y0, y1) = valid_range(dy, height);
            for kx in 0..kernel {
                let dx = kx as isize - r;
                let (x0, x1) = valid_range(dx, width);
                let row = (ch * kernel + ky) * kernel + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * width + x0..y * width + x1].copy_from_slice(&src[sy * width + sx0..sy * width + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], channels: usize, height: usize, width: usize, kernel: usize) -> Vec<f64> {
    let plane = height * width;
    let r = (kernel / 2) as isize;
    let mut out = vec![0.0; channels * plane];
    for ch in 0..channels {
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for ky in 0..kernel {
            let dy = ky as isize - r;
            let (y0, y1) = valid_range(dy, height);
            for kx in 0..kernel {
                let dx = kx as isize - r;
                let (x0, x1) = valid_range(dx, width);
                let row = (ch * kernel + ky) * kernel + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let d = &mut dst[sy * width + sx0..sy * width + sx0 + (x1 - x0)];
                    for (a, b) in d.iter_mut().zip(&src[y * width + x0..y * width + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

impl ConvLstmModel {
    fn check_frame(&self, state: &ConvLstmState, frame: &HeatmapStack) -> Result<()> {
        if frame.landmarks() != self.input_channels {
            return Err(Error::shape(
                format!("{} input channels", self.input_channels),
                format!("{} channels", frame.landmarks()),
            ));
        }
        let expected = Tensor3::zeros(self.hidden_channels, frame.height(), frame.width());
        if !state.h.same_shape(&expected) || !state.c.same_shape(&expected) {
            return Err(Error::shape(expected.shape_string(), state.h.shape_string()));
        }
        Ok(())
    }

    /// One recurrent step: returns the next state, the stabilized heatmaps and the backward cache.
    pub fn cell_forward(
        &self,
        state: &ConvLstmState,
        frame: &HeatmapStack,
    ) -> Result<(ConvLstmState, HeatmapStack, CellCache)> {
        self.check_frame(state, frame)?;
        let (height, width) = (frame.height(), frame.width());
        let plane = height * width;
        let (k_in, hidden, kernel) = (self.input_channels, self.hidden_channels, self.kernel_size);
        let cin = k_in + hidden;
        let taps = cin * kernel * kernel;

        let o_t = frame.to_flat();
        let mut x = Vec::with_capacity(cin * plane);
        x.extend_from_slice(&o_t);
        x.extend_from_slice(&state.h.data);
        let col = im2col(&x, cin, height, width, kernel);

        let biases = self.gate_biases();
        let mut z = vec![0.0; 4 * hidden * plane];
        for (row, b) in z.chunks_exact_mut(plane).zip(biases) {
            row.fill(*b);
        }
        gemm(4 * hidden, taps, plane, self.gate_weights(), (taps, 1), &col, (plane, 1), 1.0, &mut z);

        let (ifo, g) = z.split_at_mut(3 * hidden * plane);
        ifo.iter_mut().for_each(|v| *v = sigmoid(*v));
        g.iter_mut().for_each(|v| *v = v.tanh());
        let gates = z;

        let mut c = vec![0.0; hidden * plane];
        let mut tanh_c = vec![0.0; hidden * plane];
        let mut h = vec![0.0; hidden * plane];
        let n = hidden * plane;
        let (gi, gf, go, gg) = (&gates[..n], &gates[n..2 * n], &gates[2 * n..3 * n], &gates[3 * n..]);
        for p in 0..n {
            c[p] = gf[p] * state.c.data[p] + gi[p] * gg[p];
            tanh_c[p] = c[p].tanh();
            h[p] = go[p] * tanh_c[p];
        }

        let proj_w = self.proj_weights();
        let proj_b = self.proj_biases();
        let mut s = vec![0.0; k_in * plane];
        for k in 0..k_in {
            let acc = &mut s[k * plane..(k + 1) * plane];
            for j in 0..hidden {
                let w = proj_w[k * hidden + j];
                for (a, hv) in acc.iter_mut().zip(&h[j * plane..(j + 1) * plane]) {
                    *a += w * hv;
                }
            }
            for (a, o) in acc.iter_mut().zip(&o_t[k * plane..(k + 1) * plane]) {
                *a = o + (*a + proj_b[k]);
            }
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "stabilized heatmap".into(),
            });
        }

        let next = ConvLstmState {
            h: Tensor3 {
                channels: hidden,
                height,
                width,
                data: h.clone(),
            },
            c: Tensor3 {
                channels: hidden,
                height,
                width,
                data: c,
            },
        };
        let cache = CellCache {
            version: self.version(),
            input_channels: k_in,
            hidden,
            kernel,
            height,
            width,
            col,
            c_prev: state.c.data.clone(),
            gates,
            tanh_c,
            h,
        };
        Ok((next, HeatmapStack::from_flat_raw(k_in, height, width, &s), cache))
    }

    /// Reverse-mode gradients of one step.
    ///
    /// `grad_s` is the gradient flowing into the stabilized heatmaps and
    /// `grad_state_next` the gradient flowing back from step `t + 1` (zeros at
    /// the last step). Chaining calls in reverse order gives BPTT.
    pub fn cell_backward(
        &self,
        cache: &CellCache,
        grad_s: &Tensor3,
        grad_state_next: &ConvLstmState,
    ) -> Result<CellGradients> {
        let mut params = vec![0.0; self.num_params()];
        let (state_prev, input) = self.backward_accumulate(cache, grad_s, grad_state_next, &mut params)?;
        Ok(CellGradients {
            params,
            state_prev,
            input,
        })
    }

    /// Same as [`ConvLstmModel::cell_backward`] but adds parameter gradients into `param_grad`.
    pub fn backward_accumulate(
        &self,
        cache: &CellCache,
        grad_s: &Tensor3,
        grad_state_next: &ConvLstmState,
        param_grad: &mut [f64],
    ) -> Result<(ConvLstmState, Tensor3)> {
        let (height, width) = (cache.height, cache.width);
        let plane = height * width;
        let (k_in, hidden, kernel) = (self.input_channels, self.hidden_channels, self.kernel_size);
        if cache.version != self.version()
            || cache.input_channels != k_in
            || cache.hidden != hidden
            || cache.kernel != kernel
        {
            return Err(Error::shape(
                "a cache produced by this model's current parameters",
                "a stale or foreign cache",
            ));
        }
        let out_shape = Tensor3::zeros(k_in, height, width);
        if !grad_s.same_shape(&out_shape) {
            return Err(Error::shape(out_shape.shape_string(), grad_s.shape_string()));
        }
        let state_shape = Tensor3::zeros(hidden, height, width);
        if !grad_state_next.h.same_shape(&state_shape) || !grad_state_next.c.same_shape(&state_shape) {
            return Err(Error::shape(state_shape.shape_string(), grad_state_next.h.shape_string()));
        }
        if param_grad.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), param_grad.len()));
        }

        let cin = k_in + hidden;
        let taps = cin * kernel * kernel;
        let offsets = self.offsets();
        let proj_w = self.proj_weights();
        let ds = &grad_s.data;

        // Projection and residual.
        let mut dh = grad_state_next.h.data.clone();
        {
            let (_, rest) = param_grad.split_at_mut(offsets.proj_weights);
            let (d_proj_w, d_proj_b) = rest.split_at_mut(k_in * hidden);
            for k in 0..k_in {
                let dsk = &ds[k * plane..(k + 1) * plane];
                d_proj_b[k] += dsk.iter().sum::<f64>();
                for j in 0..hidden {
                    let hj = &cache.h[j * plane..(j + 1) * plane];
                    d_proj_w[k * hidden + j] += dsk.iter().zip(hj).map(|(a, b)| a * b).sum::<f64>();
                    let w = proj_w[k * hidden + j];
                    for (d, s) in dh[j * plane..(j + 1) * plane].iter_mut().zip(dsk) {
                        *d += w * s;
                    }
                }
            }
        }

        // Gates.
        let n = hidden * plane;
        let gates = &cache.gates;
        let (gi, gf, go, gg) = (&gates[..n], &gates[n..2 * n], &gates[2 * n..3 * n], &gates[3 * n..]);
        let mut dz = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for p in 0..n {
            let tc = cache.tanh_c[p];
            let dc = dh[p] * go[p] * (1.0 - tc * tc) + grad_state_next.c.data[p];
            let d_o = dh[p] * tc;
            let d_f = dc * cache.c_prev[p];
            let d_i = dc * gg[p];
            let d_g = dc * gi[p];
            dc_prev[p] = dc * gf[p];
            dz[p] = d_i * gi[p] * (1.0 - gi[p]);
            dz[n + p] = d_f * gf[p] * (1.0 - gf[p]);
            dz[2 * n + p] = d_o * go[p] * (1.0 - go[p]);
            dz[3 * n + p] = d_g * (1.0 - gg[p] * gg[p]);
        }

        {
            let (d_w, rest) = param_grad.split_at_mut(offsets.gate_biases);
            let d_b = &mut rest[..4 * hidden];
            for (b, row) in d_b.iter_mut().zip(dz.chunks_exact(plane)) {
                *b += row.iter().sum::<f64>();
            }
            // dW += dZ * col^T
            gemm(4 * hidden, plane, taps, &dz, (plane, 1), &cache.col, (1, plane), 1.0, d_w);
        }

        // dcol = W^T * dZ, then scatter back onto the input grid.
        let mut dcol = vec![0.0; taps * plane];
        gemm(taps, 4 * hidden, plane, self.gate_weights(), (1, taps), &dz, (plane, 1), 0.0, &mut dcol);
        let dx = col2im(&dcol, cin, height, width, kernel);

        let mut d_input = dx[..k_in * plane].to_vec();
        for (a, b) in d_input.iter_mut().zip(ds) {
            *a += b;
        }
        let dh_prev = dx[k_in * plane..].to_vec();

        Ok((
            ConvLstmState {
                h: Tensor3 {
                    channels: hidden,
                    height,
                    width,
                    data: dh_prev,
                },
                c: Tensor3 {
                    channels: hidden,
                    height,
                    width,
                    data: dc_prev,
                },
            },
            Tensor3 {
                channels: k_in,
                height,
                width,
                data: d_input,
            },
        ))
    }

    /// Forward pass over a sequence from a zero state, keeping every cache for BPTT.
    pub fn forward_with_caches(&self, frames: &[HeatmapStack]) -> Result<(Vec<HeatmapStack>, Vec<CellCache>)> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Empty("sequence without frames".into()))?;
        let mut state = self.zero_state(first.height(), first.width());
        let mut outputs = Vec::with_capacity(frames.len());
        let mut caches = Vec::with_capacity(frames.len());
        for frame in frames {
            let (next, s_t, cache) = self.cell_forward(&state, frame)?;
            state = next;
            outputs.push(s_t);
            caches.push(cache);
        }
        Ok((outputs, caches))
    }

    /// Backpropagation through time: `grad_outputs[t]` is the loss gradient with
    /// respect to the stabilized heatmaps of frame `t`. Returns the summed parameter gradient.
    pub fn backward_through_time(&self, caches: &[CellCache], grad_outputs: &[Tensor3]) -> Result<Vec<f64>> {
        if caches.len() != grad_outputs.len() || caches.is_empty() {
            return Err(Error::shape(
                format!("{} output gradients", caches.len()),
                grad_outputs.len(),
            ));
        }
        let (height, width) = (caches[0].height, caches[0].width);
        let mut grad = vec![0.0; self.num_params()];
        let mut state_grad = self.zero_state(height, width);
        for (cache, ds) in caches.iter().zip(grad_outputs).rev() {
            let (prev, _) = self.backward_accumulate(cache, ds, &state_grad, &mut grad)?;
            state_grad = prev;
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convlstm::ModelConfig;
    use crate::diagnostics::oracle_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> HeatmapStack {
        let vals: Vec<f64> = (0..k * h * w).map(|_| rng.random::<f64>()).collect();
        HeatmapStack::from_flat(k, h, w, &vals).unwrap()
    }

    /// Model with every parameter (projection included) random, so all paths carry gradient.
    fn random_model(k: usize, hidden: usize, seed: u64, scale: f64) -> ConvLstmModel {
        let cfg = ModelConfig {
            hidden_channels: hidden,
            kernel_size: 3,
        };
        let mut model = ConvLstmModel::new(k, cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let params: Vec<f64> = (0..model.num_params()).map(|_| rng.random_range(-scale..scale)).collect();
        model.set_params(&params).unwrap();
        model
    }

    /// Reference direct convolution for the im2col path.
    fn direct_conv(model: &ConvLstmModel, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let cin = model.in_channels();
        let kk = model.kernel_size();
        let r = (kk / 2) as isize;
        let outs = 4 * model.hidden_channels();
        let wts = model.gate_weights();
        let mut z = vec![0.0; outs * h * w];
        for o in 0..outs {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = model.gate_biases()[o];
                    for i in 0..cin {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let sy = y as isize + ky as isize - r;
                                let sx = xx as isize + kx as isize - r;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += wts[((o * cin + i) * kk + ky) * kk + kx] * x[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    z[(o * h + y) * w + xx] = acc;
                }
            }
        }
        z
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(2, 3, 1, 0.5);
        let (h, w) = (5, 6);
        let x: Vec<f64> = (0..model.in_channels() * h * w).map(|_| rng.random::<f64>()).collect();
        let taps = model.in_channels() * 9;
        let col = im2col(&x, model.in_channels(), h, w, 3);
        let mut z = vec![0.0; 12 * h * w];
        for (row, b) in z.chunks_exact_mut(h * w).zip(model.gate_biases()) {
            row.fill(*b);
        }
        gemm(12, taps, h * w, model.gate_weights(), (taps, 1), &col, (h * w, 1), 1.0, &mut z);
        let reference = direct_conv(&model, &x, h, w);
        for (a, b) in z.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_at_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ConvLstmModel::new(3, ModelConfig::default(), 9).unwrap();
        let frames: Vec<_> = (0..4).map(|_| random_stack(&mut rng, 3, 8, 7)).collect();
        assert_eq!(model.run_sequence(&frames).unwrap(), frames);
    }

    #[test]
    fn zero_weights_zero_input_give_zero_hidden() {
        let cfg = ModelConfig {
            hidden_channels: 4,
            kernel_size: 3,
        };
        let model = ConvLstmModel::with_weight_scale(2, cfg, 0, 0.0).unwrap();
        let zero = HeatmapStack::from_flat(2, 5, 5, &[0.0; 50]).unwrap();
        let (state, s, _) = model.cell_forward(&model.zero_state(5, 5), &zero).unwrap();
        assert!(state.h.data.iter().all(|&v| v == 0.0));
        assert!(state.c.data.iter().all(|&v| v == 0.0));
        assert_eq!(s, zero);
    }

    #[test]
    fn forward_is_deterministic_and_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(2, 3, 4, 0.5);
        let frame = random_stack(&mut rng, 2, 6, 6);
        let state = model.zero_state(6, 6);
        let a = model.cell_forward(&state, &frame).unwrap();
        let b = model.cell_forward(&state, &frame).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(model.cell_forward(&model.zero_state(5, 6), &frame).is_err());
        assert!(model.cell_forward(&state, &random_stack(&mut rng, 3, 6, 6)).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = random_model(2, 3, 4, 0.5);
        let frame = random_stack(&mut rng, 2, 5, 5);
        let (_, _, cache) = model.cell_forward(&model.zero_state(5, 5), &frame).unwrap();
        let grads = model
            .cell_backward(&cache, &Tensor3::zeros(2, 5, 5), &model.zero_state(5, 5))
            .unwrap();
        assert!(grads.params.iter().all(|&g| g == 0.0));
        assert!(grads.state_prev.h.data.iter().all(|&g| g == 0.0));
        assert!(grads.state_prev.c.data.iter().all(|&g| g == 0.0));
        assert!(grads.input.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = random_model(1, 2, 4, 0.5);
        let frame = random_stack(&mut rng, 1, 4, 4);
        let (_, _, cache) = model.cell_forward(&model.zero_state(4, 4), &frame).unwrap();
        let params = model.params().to_vec();
        model.set_params(&params).unwrap();
        let err = model.cell_backward(&cache, &Tensor3::zeros(1, 4, 4), &model.zero_state(4, 4));
        assert!(err.is_err());
        let other = random_model(1, 3, 4, 0.5);
        assert!(other
            .cell_backward(&cache, &Tensor3::zeros(1, 4, 4), &other.zero_state(4, 4))
            .is_err());
    }

    /// Scalar objective: sum over frames of <weights_t, s_t>.
    fn sequence_objective(model: &ConvLstmModel, frames: &[HeatmapStack], weights: &[Vec<f64>]) -> f64 {
        model
            .run_sequence(frames)
            .unwrap()
            .iter()
            .zip(weights)
            .map(|(s, w)| s.to_flat().iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    fn check_bptt(len: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(1, 2, seed, 0.6);
        let frames: Vec<_> = (0..len).map(|_| random_stack(&mut rng, 1, 4, 4)).collect();
        let weights: Vec<Vec<f64>> = (0..len).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

        let (_, caches) = model.forward_with_caches(&frames).unwrap();
        let grad_out: Vec<Tensor3> = weights
            .iter()
            .map(|w| Tensor3 {
                channels: 1,
                height: 4,
                width: 4,
                data: w.clone(),
            })
            .collect();
        let analytic = model.backward_through_time(&caches, &grad_out).unwrap();
        let numeric = oracle_grad(
            |p| {
                let mut m = model.clone();
                m.set_params(p).unwrap();
                sequence_objective(&m, &frames, &weights)
            },
            model.params(),
            1e-5,
        )
        .unwrap();
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_step_gradients_match_finite_differences() {
        assert!(check_bptt(1, 21) < 1e-4);
    }

    #[test]
    fn two_step_bptt_matches_finite_differences() {
        for seed in 0..3 {
            assert!(check_bptt(2, seed) < 1e-4);
        }
    }

    #[test]
    fn input_and_state_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = random_model(2, 2, 77, 0.6);
        let frame = random_stack(&mut rng, 2, 4, 5);
        let mut state = model.zero_state(4, 5);
        state.h.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        state.c.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let w_s: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w_h: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w_c: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let objective = |frame: &HeatmapStack, st: &ConvLstmState| {
            let (next, s, _) = model.cell_forward(st, frame).unwrap();
            dot(&s.to_flat(), &w_s) + dot(&next.h.data, &w_h) + dot(&next.c.data, &w_c)
        };
        let (_, _, cache) = model.cell_forward(&state, &frame).unwrap();
        let grads = model
            .cell_backward(
                &cache,
                &Tensor3 { channels: 2, height: 4, width: 5, data: w_s.clone() },
                &ConvLstmState {
                    h: Tensor3 { channels: 2, height: 4, width: 5, data: w_h.clone() },
                    c: Tensor3 { channels: 2, height: 4, width: 5, data: w_c.clone() },
                },
            )
            .unwrap();
        let num_in = oracle_grad(|x| objective(&HeatmapStack::from_flat(2, 4, 5, x).unwrap(), &state), &frame.to_flat(), 1e-5).unwrap();
        let num_h = oracle_grad(
            |x| {
                let mut st = state.clone();
                st.h.data.copy_from_slice(x);
                objective(&frame, &st)
            },
            &state.h.data,
            1e-5,
        )
        .unwrap();
        let num_c = oracle_grad(
            |x| {
                let mut st = state.clone();
                st.c.data.copy_from_slice(x);
                objective(&frame, &st)
            },
            &state.c.data,
            1e-5,
        )
        .unwrap();
        for (a, n) in grads.input.data.iter().zip(&num_in) {
            assert!((a - n).abs() < 1e-7);
        }
        for (a, n) in grads.state_prev.h.data.iter().zip(&num_h) {
            assert!((a - n).abs() < 1e-7);
        }
        for (a, n) in grads.state_prev.c.data.iter().zip(&num_c) {
            assert!((a - n).abs() < 1e-7);
        }
    }

    #[test]
    fn cell_state_growth_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..3 {
            let model = ConvLstmModel::with_weight_scale(2, ModelConfig { hidden_channels: 4, kernel_size: 3 }, seed, 1.0).unwrap();
            let mut state = model.zero_state(6, 6);
            for _ in 0..100 {
                let frame = random_stack(&mut rng, 2, 6, 6);
                let (next, _, _) = model.cell_forward(&state, &frame).unwrap();
                for (c_new, c_old) in next.c.data.iter().zip(&state.c.data) {
                    assert!(c_new.abs() <= c_old.abs() + 1.0);
                }
                state = next;
            }
        }
    }

    #[test]
    fn warm_up_frames_change_later_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(1, 3, 12, 0.5);
        let frames: Vec<_> = (0..4).map(|_| random_stack(&mut rng, 1, 6, 6)).collect();
        let alone = model.run_sequence(&frames[3..]).unwrap();
        let warmed = model.run_sequence(&frames).unwrap();
        assert_ne!(alone[0], warmed[3]);
        // A one-frame sequence is exactly one cell step from the zero state.
        let (_, single, _) = model.cell_forward(&model.zero_state(6, 6), &frames[3]).unwrap();
        assert_eq!(alone[0], single);
    }
}
