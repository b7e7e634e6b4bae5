//! Stacked LSTM with optional output projection, evaluated a whole chunk of
//! time steps at a time so input transforms become single matrix products.
//!
//! Gate layout along the `4H` axis is `[input, forget, cell, output]`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::params::{Frozen, Param, ParamMut};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F> {
    /// `d_in × 4H`
    pub wx: Array2<F>,
    /// `d_rec × 4H`, where `d_rec` is the projection size or `H`.
    pub wh: Array2<F>,
    /// `4H`
    pub b: Array1<F>,
    /// `H × p` output projection.
    pub proj: Option<Array2<F>>,
}

impl<F: Real> LstmLayer<F> {
    pub fn zeros(d_in: usize, hidden: usize, proj: usize) -> Self {
        let d_rec = if proj > 0 { proj } else { hidden };
        Self {
            wx: Array2::zeros((d_in, 4 * hidden)),
            wh: Array2::zeros((d_rec, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
            proj: (proj > 0).then(|| Array2::zeros((hidden, proj))),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        let mut fill = |a: &mut [F]| {
            for v in a {
                *v = F::of(rng.gen_range(-scale..scale));
            }
        };
        fill(self.wx.as_slice_mut().expect("standard layout"));
        fill(self.wh.as_slice_mut().expect("standard layout"));
        if let Some(p) = &mut self.proj {
            fill(p.as_slice_mut().expect("standard layout"));
        }
        let h = self.hidden();
        self.b.fill(F::zero());
        self.b.slice_mut(s![h..2 * h]).fill(F::one());
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.wx.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.wh.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            proj: self.proj.as_ref().map(|p| Array2::zeros(p.raw_dim())),
        }
    }

    pub fn param_count(d_in: usize, hidden: usize, proj: usize) -> usize {
        let d_rec = if proj > 0 { proj } else { hidden };
        (d_in + d_rec + 1) * 4 * hidden + hidden * proj
    }

    pub(crate) fn push_params<'a>(&'a self, prefix: &str, out: &mut Vec<Param<'a, F>>) {
        let mut push = |name: &str, dims: Vec<usize>, data: &'a [F]| {
            out.push(Param {
                name: format!("{prefix}.{name}"),
                dims,
                data,
                frozen: Frozen::Nothing,
            })
        };
        push("wx", self.wx.shape().to_vec(), self.wx.as_slice().expect("standard layout"));
        push("wh", self.wh.shape().to_vec(), self.wh.as_slice().expect("standard layout"));
        push("b", self.b.shape().to_vec(), self.b.as_slice().expect("standard layout"));
        if let Some(p) = &self.proj {
            push("proj", p.shape().to_vec(), p.as_slice().expect("standard layout"));
        }
    }

    pub(crate) fn push_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, F>>) {
        let mut push = |name: &str, dims: Vec<usize>, data: &'a mut [F]| {
            out.push(ParamMut {
                name: format!("{prefix}.{name}"),
                dims,
                data,
                frozen: Frozen::Nothing,
            })
        };
        push("wx", self.wx.shape().to_vec(), self.wx.as_slice_mut().expect("standard layout"));
        push("wh", self.wh.shape().to_vec(), self.wh.as_slice_mut().expect("standard layout"));
        push("b", self.b.shape().to_vec(), self.b.as_slice_mut().expect("standard layout"));
        if let Some(p) = &mut self.proj {
            push("proj", p.shape().to_vec(), p.as_slice_mut().expect("standard layout"));
        }
    }
}

/// Recurrent state of every layer for a batch of `B` streams.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    /// Per layer, `B × d_rec` layer outputs.
    pub h: Vec<Array2<F>>,
    /// Per layer, `B × H` cell states.
    pub c: Vec<Array2<F>>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(layers: &[LstmLayer<F>], batch: usize) -> Self {
        Self {
            h: layers.iter().map(|l| Array2::zeros((batch, l.output_dim()))).collect(),
            c: layers.iter().map(|l| Array2::zeros((batch, l.hidden()))).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.c.first().map_or(0, |c| c.nrows())
    }
}

/// Activations kept for the backward pass of one layer over a chunk.
pub(crate) struct LayerCache<F> {
    /// `T·B × d_in`, rows ordered time-major.
    x: Array2<F>,
    /// Previous outputs fed into the recurrence, `T·B × d_rec`.
    r_prev: Array2<F>,
    c_prev: Array2<F>,
    /// Activated gates `T·B × 4H`.
    gates: Array2<F>,
    tanh_c: Array2<F>,
    /// Pre-projection outputs `T·B × H` (projection layers only).
    h_raw: Option<Array2<F>>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> LstmLayer<F> {
    /// Runs `steps` time steps over `x` (`steps·B × d_in`, time-major) from
    /// state `(h0, c0)`. Returns outputs (`steps·B × d_rec`) and the cache.
    pub(crate) fn forward(
        &self,
        x: Array2<F>,
        steps: usize,
        h0: &Array2<F>,
        c0: &Array2<F>,
        keep_cache: bool,
    ) -> (Array2<F>, Array2<F>, Array2<F>, Option<LayerCache<F>>) {
        let batch = h0.nrows();
        let hid = self.hidden();
        let mut pre = x.dot(&self.wx);
        pre += &self.b;
        let mut gates = Array2::zeros((steps * batch, 4 * hid));
        let mut c_all = Array2::zeros((steps * batch, hid));
        let mut tanh_all = Array2::zeros((steps * batch, hid));
        let mut h_raw_all = self.proj.as_ref().map(|_| Array2::zeros((steps * batch, hid)));
        let mut out = Array2::zeros((steps * batch, self.output_dim()));
        let mut r_prev_all = if keep_cache { Array2::zeros((steps * batch, self.output_dim())) } else { Array2::zeros((0, 0)) };
        let mut c_prev_all = if keep_cache { Array2::zeros((steps * batch, hid)) } else { Array2::zeros((0, 0)) };

        let mut r = h0.clone();
        let mut c = c0.clone();
        for t in 0..steps {
            let rows = t * batch..(t + 1) * batch;
            if keep_cache {
                r_prev_all.slice_mut(s![rows.clone(), ..]).assign(&r);
                c_prev_all.slice_mut(s![rows.clone(), ..]).assign(&c);
            }
            let mut z = pre.slice(s![rows.clone(), ..]).to_owned();
            z += &r.dot(&self.wh);
            let mut g = gates.slice_mut(s![rows.clone(), ..]);
            let mut c_new = c_all.slice_mut(s![rows.clone(), ..]);
            let mut tc = tanh_all.slice_mut(s![rows.clone(), ..]);
            let mut h_new = Array2::zeros((batch, hid));
            for bi in 0..batch {
                for j in 0..hid {
                    let i_g = sigmoid(z[(bi, j)]);
                    let f_g = sigmoid(z[(bi, hid + j)]);
                    let c_g = z[(bi, 2 * hid + j)].tanh();
                    let o_g = sigmoid(z[(bi, 3 * hid + j)]);
                    g[(bi, j)] = i_g;
                    g[(bi, hid + j)] = f_g;
                    g[(bi, 2 * hid + j)] = c_g;
                    g[(bi, 3 * hid + j)] = o_g;
                    let cv = f_g * c[(bi, j)] + i_g * c_g;
                    c_new[(bi, j)] = cv;
                    let t_c = cv.tanh();
                    tc[(bi, j)] = t_c;
                    h_new[(bi, j)] = o_g * t_c;
                }
            }
            c = c_new.to_owned();
            r = match &self.proj {
                Some(p) => {
                    if let Some(hr) = h_raw_all.as_mut() {
                        hr.slice_mut(s![rows.clone(), ..]).assign(&h_new);
                    }
                    h_new.dot(p)
                }
                None => h_new,
            };
            out.slice_mut(s![rows, ..]).assign(&r);
        }
        let cache = keep_cache.then(|| LayerCache {
            x,
            r_prev: r_prev_all,
            c_prev: c_prev_all,
            gates,
            tanh_c: tanh_all,
            h_raw: h_raw_all,
        });
        (out, r, c, cache)
    }

    /// Backpropagates `d_out` (`steps·B × d_rec`) through the chunk,
    /// accumulating into `grad`; returns the gradient w.r.t. the inputs.
    /// Gradients into the initial state are dropped (truncated BPTT).
    pub(crate) fn backward(&self, cache: &LayerCache<F>, d_out: ArrayView2<F>, steps: usize, grad: &mut Self) -> Array2<F> {
        let batch = d_out.nrows() / steps;
        let hid = self.hidden();
        let mut dz_all = Array2::zeros((steps * batch, 4 * hid));
        let mut dr_next = Array2::<F>::zeros((batch, self.output_dim()));
        let mut dc_next = Array2::<F>::zeros((batch, hid));
        let one = F::one();
        for t in (0..steps).rev() {
            let rows = t * batch..(t + 1) * batch;
            let mut dr = d_out.slice(s![rows.clone(), ..]).to_owned();
            dr += &dr_next;
            let dh = match &self.proj {
                Some(p) => {
                    let hr = cache.h_raw.as_ref().expect("projection cache");
                    grad.proj.as_mut().expect("projection grad").scaled_add(
                        one,
                        &hr.slice(s![rows.clone(), ..]).t().dot(&dr),
                    );
                    dr.dot(&p.t())
                }
                None => dr,
            };
            let g = cache.gates.slice(s![rows.clone(), ..]);
            let tc = cache.tanh_c.slice(s![rows.clone(), ..]);
            let cp = cache.c_prev.slice(s![rows.clone(), ..]);
            let mut dz = dz_all.slice_mut(s![rows.clone(), ..]);
            for bi in 0..batch {
                for j in 0..hid {
                    let i_g = g[(bi, j)];
                    let f_g = g[(bi, hid + j)];
                    let c_g = g[(bi, 2 * hid + j)];
                    let o_g = g[(bi, 3 * hid + j)];
                    let t_c = tc[(bi, j)];
                    let dhv = dh[(bi, j)];
                    let dc = dc_next[(bi, j)] + dhv * o_g * (one - t_c * t_c);
                    dz[(bi, j)] = dc * c_g * i_g * (one - i_g);
                    dz[(bi, hid + j)] = dc * cp[(bi, j)] * f_g * (one - f_g);
                    dz[(bi, 2 * hid + j)] = dc * i_g * (one - c_g * c_g);
                    dz[(bi, 3 * hid + j)] = dhv * t_c * o_g * (one - o_g);
                    dc_next[(bi, j)] = dc * f_g;
                }
            }
            dr_next = dz.dot(&self.wh.t());
        }
        grad.wx.scaled_add(one, &cache.x.t().dot(&dz_all));
        grad.wh.scaled_add(one, &cache.r_prev.t().dot(&dz_all));
        grad.b.scaled_add(one, &dz_all.sum_axis(Axis(0)));
        dz_all.dot(&self.wx.t())
    }
}
