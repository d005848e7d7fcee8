use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (b, c_in) = input.dims2(op)?;
    let (c_out, w_in) = weight.dims2(op)?;
    if w_in != c_in {
        return Err(Error::shape(op, format!("weight [Cout, {c_in}]"), weight.shape()));
    }
    Ok((b, c_in, c_out))
}

/// `y = input * weight^T + bias` with `input [B, Cin]`, `weight [Cout, Cin]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c_in, c_out) = check("dense", input, weight)?;
    if bias.dims() != [c_out] {
        return Err(Error::shape("dense", format!("bias [{c_out}]"), bias.shape()));
    }
    let mut out: Vec<T> = (0..b).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(b, c_in, c_out, T::one(), input.data(), false, weight.data(), true, T::one(), &mut out);
    Tensor::new(vec![b, c_out], out)
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (b, c_in, c_out) = check("dense_backward", input, weight)?;
    if grad_out.dims() != [b, c_out] {
        return Err(Error::shape("dense_backward", format!("[{b}, {c_out}]"), grad_out.shape()));
    }
    let g = grad_out.data();
    let mut dx = vec![T::zero(); b * c_in];
    T::gemm(b, c_out, c_in, T::one(), g, false, weight.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); c_out * c_in];
    T::gemm(c_out, b, c_in, T::one(), g, true, input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); c_out];
    for row in g.chunks(c_out) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![b, c_in], dx)?,
        weight: Tensor::new(vec![c_out, c_in], dw)?,
        bias: Tensor::new(vec![c_out], db)?,
    })
}
