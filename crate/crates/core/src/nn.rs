//! Neural network layers with hand-written backward passes.
//!
//! The model zoo here is small and fixed (dense, dilated 1-D convolution,
//! GRU), so each layer carries an explicit backward instead of a general
//! autodiff graph; everything is verified against central finite differences
//! in `gradcheck`. Sequence tensors are (channels, time), row-major.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tensor};

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

pub fn tanh_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Backward through tanh given the cached OUTPUT `y = tanh(x)`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(y, g)| g * (1.0 - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let e = p - t;
        loss += e * e;
        grad.push(2.0 * e / n);
    }
    (loss / n, grad)
}

/// Sinusoidal position/step embedding of dimension `dim` (even).
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "embedding dimension must be even");
    let half = dim / 2;
    let mut e = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000.0_f64).ln() * i as f64 / half as f64).exp();
        e.push((t * freq).sin());
        e.push((t * freq).cos());
    }
    e
}

/// Closed-form receptive field of a stack of (kernel, dilation) convolutions:
/// 1 + sum of dilation * (kernel - 1).
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    1 + layers.iter().map(|&(k, d)| d * (k - 1)).sum::<usize>()
}

// ---------------------------------------------------------------------------
// Dense (applied per time step over a (channels, time) tensor)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Dense {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = store.add(&format!("{name}.w"), Tensor::uniform(&[out_dim, in_dim], scale, rng));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Dense { w, b, in_dim, out_dim }
    }

    /// Zero-initialized head: output starts at exactly zero.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Dense {
        let w = store.add(&format!("{name}.w"), Tensor::zeros(&[out_dim, in_dim]));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Dense { w, b, in_dim, out_dim }
    }

    /// (in_dim, T) -> (out_dim, T)
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        assert_eq!(x.shape()[0], self.in_dim);
        let t = x.shape()[1];
        let w = store.value(self.w);
        let b = store.value(self.b);
        let mut y = Tensor::zeros(&[self.out_dim, t]);
        for o in 0..self.out_dim {
            let bo = b.data()[o];
            let yrow = y.row_mut(o);
            yrow.iter_mut().for_each(|v| *v = bo);
            for i in 0..self.in_dim {
                let wv = w.data()[o * self.in_dim + i];
                if wv == 0.0 {
                    continue;
                }
                let xrow = x.row(i);
                for (yv, xv) in yrow.iter_mut().zip(xrow) {
                    *yv += wv * xv;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients, returns gradient w.r.t. the input.
    pub fn backward(&self, store: &mut ParamStore, x: &Tensor, dy: &Tensor) -> Tensor {
        let t = x.shape()[1];
        let mut dx = Tensor::zeros(&[self.in_dim, t]);
        // dW and db
        {
            let mut dw = std::mem::replace(store.grad_mut(self.w), Tensor::zeros(&[0]));
            let mut db = std::mem::replace(store.grad_mut(self.b), Tensor::zeros(&[0]));
            for o in 0..self.out_dim {
                let dyrow = dy.row(o);
                db.data_mut()[o] += dyrow.iter().sum::<f64>();
                for i in 0..self.in_dim {
                    let xrow = x.row(i);
                    let dot: f64 = dyrow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                    dw.data_mut()[o * self.in_dim + i] += dot;
                }
            }
            *store.grad_mut(self.w) = dw;
            *store.grad_mut(self.b) = db;
        }
        // dX
        let w = store.value(self.w);
        for o in 0..self.out_dim {
            let dyrow = dy.row(o);
            for i in 0..self.in_dim {
                let wv = w.data()[o * self.in_dim + i];
                if wv == 0.0 {
                    continue;
                }
                let dxrow = dx.row_mut(i);
                for (dv, gv) in dxrow.iter_mut().zip(dyrow) {
                    *dv += wv * gv;
                }
            }
        }
        dx
    }

    /// Single-vector convenience used by the recurrent decoder.
    pub fn forward_vec(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.value(self.w);
        let b = store.value(self.b);
        let mut y = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            let wrow = &w.data()[o * self.in_dim..(o + 1) * self.in_dim];
            y[o] = b.data()[o] + wrow.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution with dilation (cross-correlation along the time axis)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output length equals the input length (odd kernels).
    Same,
    /// No padding; output length shrinks by dilation * (kernel - 1).
    Valid,
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId, // (out_ch, in_ch, kernel)
    pub b: ParamId, // (out_ch)
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
        rng: &mut Rng,
    ) -> Conv1d {
        assert!(dilation >= 1);
        if padding == Padding::Same {
            assert!(kernel % 2 == 1, "Same padding requires an odd kernel");
        }
        let scale = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let w = store.add(
            &format!("{name}.w"),
            Tensor::uniform(&[out_ch, in_ch, kernel], scale, rng),
        );
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out_ch]));
        Conv1d {
            w,
            b,
            in_ch,
            out_ch,
            kernel,
            dilation,
            padding,
        }
    }

    pub fn new_zeroed(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
    ) -> Conv1d {
        if padding == Padding::Same {
            assert!(kernel % 2 == 1, "Same padding requires an odd kernel");
        }
        let w = store.add(&format!("{name}.w"), Tensor::zeros(&[out_ch, in_ch, kernel]));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out_ch]));
        Conv1d {
            w,
            b,
            in_ch,
            out_ch,
            kernel,
            dilation,
            padding,
        }
    }

    fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => self.dilation * (self.kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn out_len(&self, t: usize) -> Result<usize> {
        let padded = t + 2 * self.pad();
        if self.span() > padded {
            return Err(Error::shape(format!(
                "kernel span {} exceeds padded input length {}",
                self.span(),
                padded
            )));
        }
        Ok(padded - self.span() + 1)
    }

    /// (in_ch, T) -> (out_ch, T')
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        assert_eq!(x.shape()[0], self.in_ch);
        let t_in = x.shape()[1];
        let t_out = self.out_len(t_in)?;
        let pad = self.pad() as isize;
        let w = store.value(self.w);
        let b = store.value(self.b);
        let mut y = Tensor::zeros(&[self.out_ch, t_out]);
        for o in 0..self.out_ch {
            let bo = b.data()[o];
            y.row_mut(o).iter_mut().for_each(|v| *v = bo);
            for i in 0..self.in_ch {
                let xrow = x.row(i);
                for k in 0..self.kernel {
                    let wv = w.data()[(o * self.in_ch + i) * self.kernel + k];
                    if wv == 0.0 {
                        continue;
                    }
                    let offset = (k * self.dilation) as isize - pad;
                    // y[t] += wv * x[t + offset] over the in-range span
                    let t0 = (-offset).max(0) as usize;
                    let t1 = (t_out as isize).min(t_in as isize - offset).max(0) as usize;
                    if t0 >= t1 {
                        continue;
                    }
                    let xs = &xrow[(t0 as isize + offset) as usize..(t1 as isize + offset) as usize];
                    let yrow = y.row_mut(o);
                    for (yv, xv) in yrow[t0..t1].iter_mut().zip(xs) {
                        *yv += wv * xv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients, returns gradient w.r.t. the input.
    pub fn backward(&self, store: &mut ParamStore, x: &Tensor, dy: &Tensor) -> Tensor {
        let t_in = x.shape()[1];
        let t_out = dy.shape()[1];
        let pad = self.pad() as isize;
        let mut dx = Tensor::zeros(&[self.in_ch, t_in]);
        let mut dw = std::mem::replace(store.grad_mut(self.w), Tensor::zeros(&[0]));
        let mut db = std::mem::replace(store.grad_mut(self.b), Tensor::zeros(&[0]));
        let w = store.value(self.w);
        for o in 0..self.out_ch {
            let dyrow = dy.row(o);
            db.data_mut()[o] += dyrow.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xrow = x.row(i);
                for k in 0..self.kernel {
                    let offset = (k * self.dilation) as isize - pad;
                    let t0 = (-offset).max(0) as usize;
                    let t1 = (t_out as isize).min(t_in as isize - offset).max(0) as usize;
                    if t0 >= t1 {
                        continue;
                    }
                    let base = (t0 as isize + offset) as usize;
                    let end = (t1 as isize + offset) as usize;
                    // dW[o,i,k] += sum_t dy[t] * x[t + offset]
                    let dot: f64 = dyrow[t0..t1]
                        .iter()
                        .zip(&xrow[base..end])
                        .map(|(a, b)| a * b)
                        .sum();
                    dw.data_mut()[(o * self.in_ch + i) * self.kernel + k] += dot;
                    // dX[t + offset] += w * dy[t]
                    let wv = w.data()[(o * self.in_ch + i) * self.kernel + k];
                    if wv != 0.0 {
                        let dxrow = dx.row_mut(i);
                        for (dv, gv) in dxrow[base..end].iter_mut().zip(&dyrow[t0..t1]) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
        *store.grad_mut(self.w) = dw;
        *store.grad_mut(self.b) = db;
        dx
    }
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

/// Standard update/reset-gate GRU cell:
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r . h) + bn)
/// h' = (1 - z) . n + z . h
/// ```
///
/// With `h0 = 0` every component of `h` stays in (-1, 1).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Values cached by one forward step, needed for the backward pass.
#[derive(Clone, Debug)]
pub struct GruStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut Rng) -> GruCell {
        let si = 1.0 / (input_dim as f64).sqrt();
        let sh = 1.0 / (hidden as f64).sqrt();
        let mut mk_w = |suffix: &str, rng: &mut Rng| {
            store.add(&format!("{name}.{suffix}"), Tensor::uniform(&[hidden, input_dim], si, rng))
        };
        let wz = mk_w("wz", rng);
        let wr = mk_w("wr", rng);
        let wn = mk_w("wn", rng);
        let mut mk_u = |suffix: &str, rng: &mut Rng| {
            store.add(&format!("{name}.{suffix}"), Tensor::uniform(&[hidden, hidden], sh, rng))
        };
        let uz = mk_u("uz", rng);
        let ur = mk_u("ur", rng);
        let un = mk_u("un", rng);
        let bz = store.add(&format!("{name}.bz"), Tensor::zeros(&[hidden]));
        let br = store.add(&format!("{name}.br"), Tensor::zeros(&[hidden]));
        let bn = store.add(&format!("{name}.bn"), Tensor::zeros(&[hidden]));
        GruCell {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
            input_dim,
            hidden,
        }
    }

    fn affine(
        store: &ParamStore,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        x: &[f64],
        h: &[f64],
        hidden: usize,
        input_dim: usize,
    ) -> Vec<f64> {
        let wt = store.value(w);
        let ut = store.value(u);
        let bt = store.value(b);
        let mut out = Vec::with_capacity(hidden);
        for o in 0..hidden {
            let wrow = &wt.data()[o * input_dim..(o + 1) * input_dim];
            let urow = &ut.data()[o * hidden..(o + 1) * hidden];
            let mut acc = bt.data()[o];
            acc += wrow.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            acc += urow.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
            out.push(acc);
        }
        out
    }

    pub fn step(&self, store: &ParamStore, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
        if x.len() != self.input_dim || h_prev.len() != self.hidden {
            return Err(Error::shape(format!(
                "gru step expects input {} / hidden {}, got {} / {}",
                self.input_dim,
                self.hidden,
                x.len(),
                h_prev.len()
            )));
        }
        let az = Self::affine(store, self.wz, self.uz, self.bz, x, h_prev, self.hidden, self.input_dim);
        let ar = Self::affine(store, self.wr, self.ur, self.br, x, h_prev, self.hidden, self.input_dim);
        let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        let an = Self::affine(store, self.wn, self.un, self.bn, x, &rh, self.hidden, self.input_dim);
        let n: Vec<f64> = an.iter().map(|&v| v.tanh()).collect();
        let h: Vec<f64> = z
            .iter()
            .zip(&n)
            .zip(h_prev)
            .map(|((z, n), hp)| (1.0 - z) * n + z * hp)
            .collect();
        let cache = GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
        };
        Ok((h, cache))
    }

    /// Backward through one step. Returns (dx, dh_prev); parameter gradients
    /// accumulate into the store.
    pub fn step_backward(&self, store: &mut ParamStore, cache: &GruStepCache, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hdim = self.hidden;
        let idim = self.input_dim;
        let mut dh_prev = vec![0.0; hdim];
        let mut dx = vec![0.0; idim];

        // Per-component gate gradients.
        let mut dan = vec![0.0; hdim];
        let mut daz = vec![0.0; hdim];
        let mut dar = vec![0.0; hdim];
        let mut drh = vec![0.0; hdim];
        for i in 0..hdim {
            let dz = dh[i] * (cache.h_prev[i] - cache.n[i]);
            let dn = dh[i] * (1.0 - cache.z[i]);
            dh_prev[i] += dh[i] * cache.z[i];
            dan[i] = dn * (1.0 - cache.n[i] * cache.n[i]);
            daz[i] = dz * cache.z[i] * (1.0 - cache.z[i]);
        }
        // Through n: an = Wn x + Un rh + bn
        self.accumulate_affine(store, self.wn, self.un, self.bn, &cache.x, &cache.rh, &dan, &mut dx, &mut drh);
        for i in 0..hdim {
            let dr = drh[i] * cache.h_prev[i];
            dh_prev[i] += drh[i] * cache.r[i];
            dar[i] = dr * cache.r[i] * (1.0 - cache.r[i]);
        }
        // Through z and r affines.
        self.accumulate_affine(store, self.wz, self.uz, self.bz, &cache.x, &cache.h_prev, &daz, &mut dx, &mut dh_prev);
        self.accumulate_affine(store, self.wr, self.ur, self.br, &cache.x, &cache.h_prev, &dar, &mut dx, &mut dh_prev);
        (dx, dh_prev)
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_affine(
        &self,
        store: &mut ParamStore,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        x: &[f64],
        h: &[f64],
        da: &[f64],
        dx: &mut [f64],
        dh: &mut [f64],
    ) {
        let hdim = self.hidden;
        let idim = self.input_dim;
        {
            let mut dw = std::mem::replace(store.grad_mut(w), Tensor::zeros(&[0]));
            let mut du = std::mem::replace(store.grad_mut(u), Tensor::zeros(&[0]));
            let mut db = std::mem::replace(store.grad_mut(b), Tensor::zeros(&[0]));
            for o in 0..hdim {
                let d = da[o];
                if d != 0.0 {
                    db.data_mut()[o] += d;
                    let dwrow = &mut dw.data_mut()[o * idim..(o + 1) * idim];
                    for (dv, xv) in dwrow.iter_mut().zip(x) {
                        *dv += d * xv;
                    }
                    let durow = &mut du.data_mut()[o * hdim..(o + 1) * hdim];
                    for (dv, hv) in durow.iter_mut().zip(h) {
                        *dv += d * hv;
                    }
                }
            }
            *store.grad_mut(w) = dw;
            *store.grad_mut(u) = du;
            *store.grad_mut(b) = db;
        }
        let wt = store.value(w);
        let ut = store.value(u);
        for o in 0..hdim {
            let d = da[o];
            if d == 0.0 {
                continue;
            }
            let wrow = &wt.data()[o * idim..(o + 1) * idim];
            for (dv, wv) in dx.iter_mut().zip(wrow) {
                *dv += d * wv;
            }
            let urow = &ut.data()[o * hdim..(o + 1) * hdim];
            for (dv, uv) in dh.iter_mut().zip(urow) {
                *dv += d * uv;
            }
        }
    }

    /// Run over a (input_dim, T) tensor, forward or reversed in time.
    /// Returns the (hidden, T) state sequence and the per-step caches.
    pub fn run(&self, store: &ParamStore, xs: &Tensor, reverse: bool) -> Result<(Tensor, Vec<GruStepCache>)> {
        let t_len = xs.shape()[1];
        let mut h = vec![0.0; self.hidden];
        let mut out = Tensor::zeros(&[self.hidden, t_len]);
        let mut caches = Vec::with_capacity(t_len);
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for &t in &order {
            let x: Vec<f64> = (0..self.input_dim).map(|i| xs.row(i)[t]).collect();
            let (h_new, cache) = self.step(store, &x, &h)?;
            for i in 0..self.hidden {
                out.row_mut(i)[t] = h_new[i];
            }
            caches.push(cache);
            h = h_new;
        }
        Ok((out, caches))
    }

    /// Backward over a full run; `dhs` is (hidden, T). Returns (input_dim, T).
    pub fn run_backward(
        &self,
        store: &mut ParamStore,
        caches: &[GruStepCache],
        dhs: &Tensor,
        reverse: bool,
    ) -> Tensor {
        let t_len = dhs.shape()[1];
        let mut dxs = Tensor::zeros(&[self.input_dim, t_len]);
        let mut dh_carry = vec![0.0; self.hidden];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        // Walk the time steps in reverse processing order.
        for (step_idx, &t) in order.iter().enumerate().rev() {
            let mut dh: Vec<f64> = (0..self.hidden).map(|i| dhs.row(i)[t]).collect();
            for (a, b) in dh.iter_mut().zip(&dh_carry) {
                *a += b;
            }
            let (dx, dh_prev) = self.step_backward(store, &caches[step_idx], &dh);
            for i in 0..self.input_dim {
                dxs.row_mut(i)[t] = dx[i];
            }
            dh_carry = dh_prev;
        }
        dxs
    }
}
