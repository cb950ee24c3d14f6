//! Forward and backward passes over a flat weight vector.
//!
//! Activations are `batch x features` matrices with image features laid out
//! channel-major (`c, h, w`). Linear weights are `[out, in]` row-major and
//! convolution weights `[out_ch, in_ch, k, k]`; each is followed by its bias.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};

use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether a pass runs dropout. Evaluation never touches a generator.
pub enum Pass<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

enum LayerCache<T> {
    Linear { input: Array2<T> },
    Conv { input: Array2<T> },
    Relu { output: Array2<T> },
    MaxPool { argmax: Vec<usize>, in_len: usize },
    Identity,
    Dropout { mask: Option<Array2<T>> },
}

/// Everything [`backward`] needs from a matching [`forward`].
pub struct Cache<T> {
    spec: NetworkSpec,
    weights: Vec<T>,
    shapes: Vec<Vec<usize>>,
    layers: Vec<LayerCache<T>>,
    batch: usize,
}

impl<T> Cache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn check_inputs<T: Scalar>(
    spec: &NetworkSpec,
    weights: &[T],
    input: &ArrayView2<T>,
) -> Result<Vec<Vec<usize>>> {
    let shapes = spec.shapes()?;
    let n = spec.num_params();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if input.ncols() != spec.input_len() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            input.ncols(),
            spec.input_len()
        )));
    }
    Ok(shapes)
}

/// Runs the network; returns `batch x k` logits and the backward cache.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    weights: &[T],
    input: ArrayView2<T>,
    pass: Pass<'_>,
) -> Result<(Array2<T>, Cache<T>)> {
    let shapes = check_inputs(spec, weights, &input)?;
    let (out, layers) = run(spec, &shapes, weights, input, pass, true);
    let cache = Cache {
        spec: spec.clone(),
        weights: weights.to_vec(),
        shapes,
        layers,
        batch: input.nrows(),
    };
    Ok((out, cache))
}

/// Evaluation-mode logits without keeping a cache.
pub fn predict<T: Scalar>(
    spec: &NetworkSpec,
    weights: &[T],
    input: ArrayView2<T>,
) -> Result<Array2<T>> {
    let shapes = check_inputs(spec, weights, &input)?;
    Ok(run(spec, &shapes, weights, input, Pass::Eval, false).0)
}

fn run<T: Scalar>(
    spec: &NetworkSpec,
    shapes: &[Vec<usize>],
    weights: &[T],
    input: ArrayView2<T>,
    mut pass: Pass<'_>,
    keep: bool,
) -> (Array2<T>, Vec<LayerCache<T>>) {
    let mut x = input.to_owned();
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut offset = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = &shapes[i];
        let out_shape = &shapes[i + 1];
        let (y, cache) = match *layer {
            LayerSpec::Linear { input, out } => {
                let w =
                    ArrayView2::from_shape((out, input), &weights[offset..offset + out * input])
                        .unwrap();
                let b = &weights[offset + out * input..offset + out * input + out];
                offset += out * input + out;
                let mut y = x.dot(&w.t());
                for mut row in y.rows_mut() {
                    for (v, bias) in row.iter_mut().zip(b) {
                        *v += *bias;
                    }
                }
                (
                    y,
                    LayerCache::Linear {
                        input: if keep { x } else { Array2::zeros((0, 0)) },
                    },
                )
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let fan = in_ch * kernel * kernel;
                let w =
                    ArrayView2::from_shape((out_ch, fan), &weights[offset..offset + out_ch * fan])
                        .unwrap();
                let b = &weights[offset + out_ch * fan..offset + out_ch * fan + out_ch];
                offset += out_ch * fan + out_ch;
                let geom = ConvGeom::new(in_shape, out_shape, kernel, stride);
                let mut y = Array2::zeros((x.nrows(), out_shape.iter().product()));
                let mut cols = Array2::zeros((geom.positions(), fan));
                for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
                    geom.im2col(xr.as_slice().unwrap(), &mut cols);
                    let o = w.dot(&cols.t());
                    for (c, orow) in o.rows().into_iter().enumerate() {
                        let dst =
                            yr.slice_mut(s![c * geom.positions()..(c + 1) * geom.positions()]);
                        for (d, v) in dst.into_iter().zip(orow) {
                            *d = *v + b[c];
                        }
                    }
                }
                (
                    y,
                    LayerCache::Conv {
                        input: if keep { x } else { Array2::zeros((0, 0)) },
                    },
                )
            }
            LayerSpec::Relu => {
                x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                let cache = if keep {
                    LayerCache::Relu { output: x.clone() }
                } else {
                    LayerCache::Identity
                };
                (x, cache)
            }
            LayerSpec::MaxPool { window } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut y = Array2::zeros((x.nrows(), c * oh * ow));
                let mut argmax = Vec::with_capacity(if keep { y.len() } else { 0 });
                for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
                    let xs = xr.as_slice().unwrap();
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = ch * h * w + (oy * window) * w + ox * window;
                                for ky in 0..window {
                                    for kx in 0..window {
                                        let idx =
                                            ch * h * w + (oy * window + ky) * w + ox * window + kx;
                                        if xs[idx] > xs[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                yr[ch * oh * ow + oy * ow + ox] = xs[best];
                                if keep {
                                    argmax.push(best);
                                }
                            }
                        }
                    }
                }
                (
                    y,
                    LayerCache::MaxPool {
                        argmax,
                        in_len: c * h * w,
                    },
                )
            }
            LayerSpec::Flatten => (x, LayerCache::Identity),
            LayerSpec::Dropout { p } => match &mut pass {
                Pass::Train(rng) if p > 0.0 => {
                    let scale = T::cast(1.0 / (1.0 - p));
                    let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
                        if rng.random::<f64>() >= p {
                            scale
                        } else {
                            T::zero()
                        }
                    });
                    x *= &mask;
                    (x, LayerCache::Dropout { mask: Some(mask) })
                }
                _ => (x, LayerCache::Dropout { mask: None }),
            },
        };
        x = y;
        caches.push(cache);
    }
    (x, caches)
}

/// Gradient of the loss with respect to every weight, given `dL/dlogits`.
pub fn backward<T: Scalar>(cache: &Cache<T>, grad_logits: ArrayView2<T>) -> Result<Vec<T>> {
    let spec = &cache.spec;
    if grad_logits.nrows() != cache.batch
        || grad_logits.ncols() != spec.num_classes
        || cache.layers.len() != spec.layers.len()
    {
        return Err(Error::StaleCache);
    }
    let weights = &cache.weights;
    let mut grad = vec![T::zero(); weights.len()];
    let mut offset = weights.len();
    let mut g = grad_logits.to_owned();
    for i in (0..spec.layers.len()).rev() {
        let in_shape = &cache.shapes[i];
        let out_shape = &cache.shapes[i + 1];
        g = match (&spec.layers[i], &cache.layers[i]) {
            (&LayerSpec::Linear { input, out }, LayerCache::Linear { input: x }) => {
                offset -= out * input + out;
                let w =
                    ArrayView2::from_shape((out, input), &weights[offset..offset + out * input])
                        .unwrap();
                let dw = g.t().dot(x);
                for (d, v) in grad[offset..offset + out * input].iter_mut().zip(dw.iter()) {
                    *d += *v;
                }
                let db = g.sum_axis(Axis(0));
                for (d, v) in grad[offset + out * input..offset + out * input + out]
                    .iter_mut()
                    .zip(db.iter())
                {
                    *d += *v;
                }
                g.dot(&w)
            }
            (
                &LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                },
                LayerCache::Conv { input: x },
            ) => {
                let fan = in_ch * kernel * kernel;
                offset -= out_ch * fan + out_ch;
                let w =
                    ArrayView2::from_shape((out_ch, fan), &weights[offset..offset + out_ch * fan])
                        .unwrap();
                let geom = ConvGeom::new(in_shape, out_shape, kernel, stride);
                let mut dw = Array2::<T>::zeros((out_ch, fan));
                let mut db = vec![T::zero(); out_ch];
                let mut dx = Array2::zeros(x.raw_dim());
                let mut cols = Array2::zeros((geom.positions(), fan));
                for ((xr, gr), mut dxr) in x.rows().into_iter().zip(g.rows()).zip(dx.rows_mut()) {
                    geom.im2col(xr.as_slice().unwrap(), &mut cols);
                    let gm = gr
                        .into_shape_with_order((out_ch, geom.positions()))
                        .unwrap();
                    dw += &gm.dot(&cols);
                    for (c, row) in gm.rows().into_iter().enumerate() {
                        db[c] += row.sum();
                    }
                    let dcols = gm.t().dot(&w);
                    geom.col2im(&dcols, dxr.as_slice_mut().unwrap());
                }
                for (d, v) in grad[offset..offset + out_ch * fan]
                    .iter_mut()
                    .zip(dw.iter())
                {
                    *d += *v;
                }
                for (d, v) in grad[offset + out_ch * fan..offset + out_ch * fan + out_ch]
                    .iter_mut()
                    .zip(&db)
                {
                    *d += *v;
                }
                dx
            }
            (LayerSpec::Relu, LayerCache::Relu { output }) => {
                g.zip_mut_with(output, |d, &y| {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                });
                g
            }
            (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax, in_len }) => {
                let per = g.ncols();
                let mut dx = Array2::zeros((g.nrows(), *in_len));
                for (b, (gr, mut dxr)) in g.rows().into_iter().zip(dx.rows_mut()).enumerate() {
                    for (j, v) in gr.iter().enumerate() {
                        dxr[argmax[b * per + j]] += *v;
                    }
                }
                dx
            }
            (LayerSpec::Flatten, LayerCache::Identity) => g,
            (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                if let Some(m) = mask {
                    g *= m;
                }
                g
            }
            _ => return Err(Error::StaleCache),
        };
    }
    Ok(grad)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
}

impl ConvGeom {
    fn new(in_shape: &[usize], out_shape: &[usize], k: usize, stride: usize) -> Self {
        Self {
            c: in_shape[0],
            h: in_shape[1],
            w: in_shape[2],
            oh: out_shape[1],
            ow: out_shape[2],
            k,
            stride,
        }
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut Array2<T>) {
        let k = self.k;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let mut row = cols.row_mut(oy * self.ow + ox);
                let row = row.as_slice_mut().unwrap();
                let mut j = 0;
                for ci in 0..self.c {
                    for ky in 0..k {
                        let base = ci * self.h * self.w
                            + (oy * self.stride + ky) * self.w
                            + ox * self.stride;
                        row[j..j + k].copy_from_slice(&x[base..base + k]);
                        j += k;
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, dcols: &Array2<T>, dx: &mut [T]) {
        let k = self.k;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = dcols.row(oy * self.ow + ox);
                let mut j = 0;
                for ci in 0..self.c {
                    for ky in 0..k {
                        let base = ci * self.h * self.w
                            + (oy * self.stride + ky) * self.w
                            + ox * self.stride;
                        for kx in 0..k {
                            dx[base + kx] += row[j];
                            j += 1;
                        }
                    }
                }
            }
        }
    }
}
