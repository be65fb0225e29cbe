use super::{Batch, ModelSpec, Nonlinearity, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Analytic gradient of [`ModelSpec::forward_loss`] with respect to θ.
pub fn backprop_gradient<T: Scalar>(spec: &ModelSpec, theta: &[T], batch: &Batch<T>) -> Result<ParamVector<T>> {
    if theta.len() != spec.param_count() {
        return Err(Error::config(format!(
            "θ has {} parameters, model expects {}",
            theta.len(),
            spec.param_count()
        )));
    }
    if batch.dim != spec.input_dim() {
        return Err(Error::config("batch feature width does not match the model"));
    }
    let layers = spec.layers();
    let rows = batch.rows();

    // outputs[i] is the post-nonlinearity output of layer i; inputs of layer i are outputs[i-1].
    let mut offsets = Vec::with_capacity(layers.len());
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for (idx, layer) in layers.iter().enumerate() {
        offsets.push(offset);
        let n = layer.param_count();
        let input = if idx == 0 { &batch.inputs } else { &outputs[idx - 1] };
        let out = super::dense_forward(layer, &theta[offset..offset + n], input, rows, idx)?;
        outputs.push(out);
        offset += n;
    }

    let classes = spec.num_classes();
    let inv_rows = T::from_f64(1.0 / rows as f64);
    // dL/dlogits = (softmax − onehot) / rows
    let mut delta: Vec<T> = Vec::with_capacity(rows * classes);
    for (row, &y) in outputs.last().unwrap().chunks_exact(classes).zip(&batch.labels) {
        if y >= classes {
            return Err(Error::config(format!("label {y} outside 0..{classes}")));
        }
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum = row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
        for (c, &v) in row.iter().enumerate() {
            let p = (v - m).exp() / sum;
            let target = if c == y { T::one() } else { T::zero() };
            delta.push((p - target) * inv_rows);
        }
    }

    let mut grad = vec![T::zero(); theta.len()];
    for idx in (0..layers.len()).rev() {
        let layer = &layers[idx];
        let (n_in, n_out) = (layer.input, layer.output);
        let out = &outputs[idx];
        // through this layer's nonlinearity
        match layer.nonlinearity {
            Nonlinearity::Identity => {}
            Nonlinearity::Tanh => {
                for (d, &y) in delta.iter_mut().zip(out) {
                    *d = *d * (T::one() - y * y);
                }
            }
            Nonlinearity::Relu => {
                for (d, &y) in delta.iter_mut().zip(out) {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
        }
        let input: &[T] = if idx == 0 { &batch.inputs } else { &outputs[idx - 1] };
        let base = offsets[idx];
        let (gw, gb) = grad[base..base + layer.param_count()].split_at_mut(n_in * n_out);
        for (d_row, x_row) in delta.chunks_exact(n_out).zip(input.chunks_exact(n_in)) {
            for (o, &d) in d_row.iter().enumerate() {
                gb[o] = gb[o] + d;
                for (g, &x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x_row) {
                    *g = *g + d * x;
                }
            }
        }
        if idx > 0 {
            let weights = &theta[base..base + n_in * n_out];
            let mut prev = vec![T::zero(); rows * n_in];
            for (d_row, p_row) in delta.chunks_exact(n_out).zip(prev.chunks_exact_mut(n_in)) {
                for (o, &d) in d_row.iter().enumerate() {
                    for (p, &w) in p_row.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p = *p + d * w;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok(ParamVector::from_vec(grad))
}
