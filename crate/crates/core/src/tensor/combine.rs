use super::{check_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_shape(a.shape().clone(), data)
}

/// Concatenate `[B, Ca, H, W]` and `[B, Cb, H, W]` into `[B, Ca+Cb, H, W]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, ca, ha, wa) = a.dims4("concat_channels")?;
    let (bb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let (pa, pb) = (ca * ha * wa, cb * hb * wb);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..ba {
        data.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::new(vec![ba, ca + cb, ha, wa], data)
}

/// Backward of [`concat_channels`]: split the first `first` channels from the
/// rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = x.dims4("split_channels")?;
    if first == 0 || first >= c {
        return Err(Error::invalid(
            "split_channels",
            format!("cannot split {c} channels at {first}"),
        ));
    }
    let hw = h * w;
    let mut lo = Vec::with_capacity(b * first * hw);
    let mut hi = Vec::with_capacity(b * (c - first) * hw);
    for n in 0..b {
        let item = &x.data()[n * c * hw..(n + 1) * c * hw];
        lo.extend_from_slice(&item[..first * hw]);
        hi.extend_from_slice(&item[first * hw..]);
    }
    Ok((
        Tensor::new(vec![b, first, h, w], lo)?,
        Tensor::new(vec![b, c - first, h, w], hi)?,
    ))
}

/// Multiply every spatial position of channel `c` in item `b` by `s[b, c]`.
pub fn channelwise_scale<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("channelwise_scale")?;
    if s.dims() != [b, c] {
        return Err(Error::shape("channelwise_scale", format!("[{b}, {c}]"), s.shape()));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(x.numel());
    for (plane, &sc) in x.data().chunks(hw).zip(s.data()) {
        data.extend(plane.iter().map(|&v| v * sc));
    }
    Tensor::from_shape(x.shape().clone(), data)
}

/// Gradients of [`channelwise_scale`] with respect to `x` and `s`.
pub fn channelwise_scale_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    s: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_same_shape("channelwise_scale_backward", grad_out, x)?;
    let dx = channelwise_scale(grad_out, s)?;
    let (_, _, h, w) = x.dims4("channelwise_scale_backward")?;
    let hw = h * w;
    let ds = grad_out
        .data()
        .chunks(hw)
        .zip(x.data().chunks(hw))
        .map(|(g, xv)| g.iter().zip(xv).map(|(&a, &b)| a * b).sum())
        .collect();
    Ok((dx, Tensor::from_shape(s.shape().clone(), ds)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_is_identity() {
        let x = Tensor::<f32>::from_fn(vec![2, 3, 2, 2], |i| i as f32 - 5.0).unwrap();
        let s = Tensor::<f32>::ones(vec![2, 3]).unwrap();
        assert_eq!(channelwise_scale(&x, &s).unwrap(), x);
    }

    #[test]
    fn concat_then_split_roundtrip() {
        let a = Tensor::<f32>::from_fn(vec![2, 1, 2, 2], |i| i as f32).unwrap();
        let b = Tensor::<f32>::from_fn(vec![2, 3, 2, 2], |i| -(i as f32)).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), &[2, 4, 2, 2]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = Tensor::<f32>::zeros(vec![1, 1, 2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1, 1, 4, 4]).unwrap();
        assert!(concat_channels(&a, &b).is_err());
        assert!(add(&a, &b).is_err());
        let s = Tensor::<f32>::zeros(vec![1, 2]).unwrap();
        assert!(channelwise_scale(&a, &s).is_err());
    }
}
