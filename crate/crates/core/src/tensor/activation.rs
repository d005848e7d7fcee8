use super::{check_same_shape, Scalar, Tensor};
use crate::error::Result;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the forward input was strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("relu_backward", grad_out, input)?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_shape(input.shape().clone(), data)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        // split by sign so exp never overflows
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Backward through the sigmoid given its forward *output*.
pub fn sigmoid_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("sigmoid_backward", grad_out, output)?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &s)| g * s * (T::one() - s))
        .collect();
    Tensor::from_shape(output.shape().clone(), data)
}
