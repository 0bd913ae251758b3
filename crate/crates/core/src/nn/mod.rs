//! Small convolutional encoder with hand-written reverse mode.
//!
//! Everything is generic over [`Scalar`] so the exact same code runs in `f32`
//! for training and in `f64` for finite-difference verification. Samples in a
//! batch are independent (no batch norm), which keeps forward results
//! batch-size invariant and lets samples fan out across threads.

mod params;
mod scalar;

pub use params::{conv_out, read_checkpoint, write_checkpoint, EncoderArch, ParamSet, Tensor};
pub use scalar::{matmul, Scalar};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Samples per backward work unit. Fixed so gradient sums are reduced in
/// the same order regardless of thread count.
const BACKWARD_CHUNK: usize = 8;

/// Saved activations of one sample.
#[derive(Debug, Clone)]
pub struct SampleTape<T> {
    cols: Vec<Vec<T>>,
    acts: Vec<Vec<T>>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    norm: T,
    out: Vec<T>,
}

impl<T: Scalar> SampleTape<T> {
    /// Sign pattern of every ReLU; equal patterns mean two inputs lie in the
    /// same linear region of the backbone and hidden layer.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.acts
            .iter()
            .flatten()
            .chain(self.hidden.iter())
            .map(|v| *v > T::zero())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub samples: Vec<SampleTape<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// Backbone output after global average pooling (probe features).
    pub pooled: Vec<Vec<T>>,
    /// L2-normalized projection-head output.
    pub features: Vec<Vec<T>>,
    pub tape: Tape<T>,
}

fn im2col<T: Scalar>(x: &[T], c: usize, s: usize, col: &mut [T]) {
    let so = conv_out(s);
    let p = so * so;
    for ci in 0..c {
        let plane = &x[ci * s * s..(ci + 1) * s * s];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * p..][..p];
                for oy in 0..so {
                    let iy = (2 * oy + ky) as isize - 1;
                    let dst = &mut row[oy * so..(oy + 1) * so];
                    if iy < 0 || iy >= s as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * s..(iy as usize + 1) * s];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        *d = if ix < 0 || ix >= s as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], c: usize, s: usize, dx: &mut [T]) {
    let so = conv_out(s);
    let p = so * so;
    dx.fill(T::zero());
    for ci in 0..c {
        let plane = &mut dx[ci * s * s..(ci + 1) * s * s];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * p..][..p];
                for oy in 0..so {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    for ox in 0..so {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s as isize {
                            let d = &mut plane[iy as usize * s + ix as usize];
                            *d = *d + row[oy * so + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_finite<T: Scalar>(v: &[T], layer: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure {
            layer: layer.to_string(),
        })
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// `out = w * x + b` for a dense layer with `w` stored `(out, in)`.
fn dense<T: Scalar>(w: &[T], b: &[T], x: &[T], out_dim: usize) -> Vec<T> {
    let mut y = b.to_vec();
    matmul(w, false, x, false, &mut y, out_dim, x.len(), 1, true);
    y
}

fn forward_sample<T: Scalar>(
    arch: &EncoderArch,
    params: &ParamSet<T>,
    input: &[T],
    keep_tape: bool,
) -> Result<SampleTape<T>> {
    if input.len() != arch.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, architecture expects {}",
            input.len(),
            arch.input_len()
        )));
    }
    let t = &params.tensors;
    let blocks = arch.conv_channels.len();
    let mut cols = Vec::with_capacity(blocks);
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(blocks);
    for (i, &(c_in, s)) in arch.conv_inputs().iter().enumerate() {
        let c_out = arch.conv_channels[i];
        let so = conv_out(s);
        let p = so * so;
        let x: &[T] = if i == 0 { input } else { &acts[i - 1] };
        let mut col = vec![T::zero(); c_in * 9 * p];
        im2col(x, c_in, s, &mut col);
        let mut z = vec![T::zero(); c_out * p];
        for (row, &b) in z.chunks_mut(p).zip(&t[2 * i + 1].data) {
            row.fill(b);
        }
        matmul(&t[2 * i].data, false, &col, false, &mut z, c_out, c_in * 9, p, true);
        relu_in_place(&mut z);
        check_finite(&z, &t[2 * i].name)?;
        cols.push(if keep_tape { col } else { Vec::new() });
        acts.push(z);
    }

    let last = acts.last().expect("at least one block");
    let p = last.len() / arch.pooled_dim();
    let inv = T::one() / T::lit(p as f64);
    let pooled: Vec<T> = last
        .chunks(p)
        .map(|ch| ch.iter().copied().sum::<T>() * inv)
        .collect();

    let h = 2 * blocks;
    let mut hidden = dense(&t[h].data, &t[h + 1].data, &pooled, arch.hidden_dim);
    relu_in_place(&mut hidden);
    check_finite(&hidden, &t[h].name)?;
    let raw = dense(&t[h + 2].data, &t[h + 3].data, &hidden, arch.feat_dim);
    check_finite(&raw, &t[h + 2].name)?;
    let norm = raw.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::NumericFailure {
            layer: "normalize".into(),
        });
    }
    let out = raw.iter().map(|v| *v / norm).collect();

    if !keep_tape {
        acts.clear();
    }
    Ok(SampleTape {
        cols,
        acts,
        pooled,
        hidden,
        norm,
        out,
    })
}

/// Encode a batch and keep everything needed for [`backward`].
pub fn forward<T: Scalar>(
    arch: &EncoderArch,
    params: &ParamSet<T>,
    batch: &[&[T]],
) -> Result<ForwardOutput<T>> {
    let samples = batch
        .par_iter()
        .map(|x| forward_sample(arch, params, x, true))
        .collect::<Result<Vec<_>>>()?;
    let pooled = samples.iter().map(|s| s.pooled.clone()).collect();
    let features = samples.iter().map(|s| s.out.clone()).collect();
    Ok(ForwardOutput {
        pooled,
        features,
        tape: Tape { samples },
    })
}

/// Inference-only encoding: `(pooled, normalized features)` per sample.
pub fn encode<T: Scalar>(
    arch: &EncoderArch,
    params: &ParamSet<T>,
    batch: &[&[T]],
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let samples = batch
        .par_iter()
        .map(|x| forward_sample(arch, params, x, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(samples.into_iter().map(|s| (s.pooled, s.out)).unzip())
}

fn backward_sample<T: Scalar>(
    arch: &EncoderArch,
    params: &ParamSet<T>,
    tape: &SampleTape<T>,
    g: &[T],
    grads: &mut ParamSet<T>,
) {
    let t = &params.tensors;
    let blocks = arch.conv_channels.len();
    let h = 2 * blocks;

    // d(v / |v|) = (I - u u^T) / |v|
    let proj = tape.out.iter().zip(g).map(|(u, gi)| *u * *gi).sum::<T>();
    let dv: Vec<T> = tape
        .out
        .iter()
        .zip(g)
        .map(|(u, gi)| (*gi - *u * proj) / tape.norm)
        .collect();

    let (feat, hid, pool) = (arch.feat_dim, arch.hidden_dim, arch.pooled_dim());
    matmul(&dv, false, &tape.hidden, false, &mut grads.tensors[h + 2].data, feat, 1, hid, true);
    for (gb, d) in grads.tensors[h + 3].data.iter_mut().zip(&dv) {
        *gb = *gb + *d;
    }
    let mut dh = vec![T::zero(); hid];
    matmul(&t[h + 2].data, true, &dv, false, &mut dh, hid, feat, 1, false);
    for (d, a) in dh.iter_mut().zip(&tape.hidden) {
        if *a <= T::zero() {
            *d = T::zero();
        }
    }
    matmul(&dh, false, &tape.pooled, false, &mut grads.tensors[h].data, hid, 1, pool, true);
    for (gb, d) in grads.tensors[h + 1].data.iter_mut().zip(&dh) {
        *gb = *gb + *d;
    }
    let mut dpool = vec![T::zero(); pool];
    matmul(&t[h].data, true, &dh, false, &mut dpool, pool, hid, 1, false);

    let inputs = arch.conv_inputs();
    let last = &tape.acts[blocks - 1];
    let p_last = last.len() / pool;
    let inv = T::one() / T::lit(p_last as f64);
    let mut da: Vec<T> = dpool
        .iter()
        .flat_map(|d| std::iter::repeat_n(*d * inv, p_last))
        .collect();

    for i in (0..blocks).rev() {
        let (c_in, s) = inputs[i];
        let c_out = arch.conv_channels[i];
        let p = conv_out(s).pow(2);
        for (d, a) in da.iter_mut().zip(&tape.acts[i]) {
            if *a <= T::zero() {
                *d = T::zero();
            }
        }
        let col = &tape.cols[i];
        matmul(&da, false, col, true, &mut grads.tensors[2 * i].data, c_out, p, c_in * 9, true);
        for (gb, row) in grads.tensors[2 * i + 1].data.iter_mut().zip(da.chunks(p)) {
            *gb = *gb + row.iter().copied().sum::<T>();
        }
        if i > 0 {
            let mut dcol = vec![T::zero(); c_in * 9 * p];
            matmul(&t[2 * i].data, true, &da, false, &mut dcol, c_in * 9, c_out, p, false);
            let mut dx = vec![T::zero(); c_in * s * s];
            col2im(&dcol, c_in, s, &mut dx);
            da = dx;
        }
    }
}

/// Parameter gradients of `sum_i grad_features[i] . features[i]`, i.e. the
/// reverse pass for an upstream gradient on the normalized outputs.
pub fn backward<T: Scalar>(
    arch: &EncoderArch,
    params: &ParamSet<T>,
    tape: &Tape<T>,
    grad_features: &[Vec<T>],
) -> Result<ParamSet<T>> {
    if grad_features.len() != tape.samples.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} output gradients for {} taped samples",
            grad_features.len(),
            tape.samples.len()
        )));
    }
    if let Some(g) = grad_features.iter().find(|g| g.len() != arch.feat_dim) {
        return Err(Error::ShapeMismatch(format!(
            "output gradient has {} values, feat_dim is {}",
            g.len(),
            arch.feat_dim
        )));
    }
    let partials: Vec<ParamSet<T>> = tape
        .samples
        .par_chunks(BACKWARD_CHUNK)
        .zip(grad_features.par_chunks(BACKWARD_CHUNK))
        .map(|(samples, gs)| {
            let mut acc = params.zeros_like();
            for (s, g) in samples.iter().zip(gs) {
                backward_sample(arch, params, s, g, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = params.zeros_like();
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}

/// Heavy-ball SGD: `v <- momentum * v + g; theta <- theta - lr * v`.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    lr: T,
    momentum: T,
    velocity: &mut ParamSet<T>,
) -> Result<()> {
    params.check_shape(grads)?;
    params.check_shape(velocity)?;
    if !(lr >= T::zero()) || !(momentum >= T::zero() && momentum < T::one()) {
        return Err(Error::Config(
            "sgd: lr must be non-negative and momentum in [0, 1)".into(),
        ));
    }
    if let Some(t) = grads.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NumericFailure {
            layer: format!("{} gradient", t.name),
        });
    }
    for ((p, g), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(velocity.values_mut())
    {
        *v = momentum * *v + *g;
        *p = *p - lr * *v;
    }
    Ok(())
}
