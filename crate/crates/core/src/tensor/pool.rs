use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Flat input index of the maximum chosen for each pooled output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_dims: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling. Ties go to the first element of the window
/// in row-major order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (b, c, h, w) = input.dims4("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(
            "maxpool2x2",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![b, c, ho, wo], out)?,
        PoolIndices {
            input_dims: input.dims().to_vec(),
            argmax,
        },
    ))
}

/// Route each pooled gradient to its recorded argmax; zeros elsewhere.
pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    indices: &PoolIndices,
) -> Result<Tensor<T>> {
    if grad_out.numel() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool2x2_backward",
            indices.argmax.len(),
            grad_out.shape(),
        ));
    }
    let mut dx = Tensor::zeros(indices.input_dims.clone())?;
    let d = dx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(&indices.argmax) {
        d[i] += g;
    }
    Ok(dx)
}

/// Mean over spatial positions: `[B, C, H, W]` to `[B, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4("global_avg_pool")?;
    let hw = h * w;
    let inv = T::one() / T::of_usize(hw);
    let out = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![b, c], out)
}

/// Spread each pooled gradient uniformly as `g / (H*W)`.
pub fn global_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_dims: &[usize],
) -> Result<Tensor<T>> {
    let [b, c, h, w] = *input_dims else {
        return Err(Error::shape("global_avg_pool_backward", "rank-4 input", format!("{input_dims:?}")));
    };
    if grad_out.dims() != [b, c] {
        return Err(Error::shape("global_avg_pool_backward", format!("[{b}, {c}]"), grad_out.shape()));
    }
    let hw = h * w;
    let inv = T::one() / T::of_usize(hw);
    let mut data = Vec::with_capacity(b * c * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat(g * inv).take(hw));
    }
    Tensor::new(input_dims.to_vec(), data)
}
