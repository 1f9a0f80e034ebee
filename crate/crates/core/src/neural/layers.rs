use rand::Rng;

use super::matrix::{axpy, Matrix};
use super::params::{glorot_uniform, ParamId, ParameterSet};
use crate::error::{Error, Result};

/// Initial PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// `input · weight + bias`, bias broadcast over rows.
pub fn dense_forward(input: &Matrix, weight: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if input.cols() != weight.rows() {
        return Err(Error::dim("dense input width", weight.rows(), input.cols()));
    }
    if bias.shape() != (1, weight.cols()) {
        return Err(Error::dim(
            "dense bias",
            format!("(1, {})", weight.cols()),
            format!("{:?}", bias.shape()),
        ));
    }
    let mut out = input.matmul(weight)?;
    for r in 0..out.rows() {
        axpy(1.0, bias.as_slice(), out.row_mut(r));
    }
    Ok(out)
}

/// Elementwise `x` if `x > 0`, else `slope[channel] * x`.
pub fn prelu(input: &Matrix, slopes: &[f64]) -> Result<Matrix> {
    if slopes.len() != input.cols() {
        return Err(Error::dim("prelu slopes", input.cols(), slopes.len()));
    }
    let mut out = input.clone();
    for r in 0..out.rows() {
        for (v, &a) in out.row_mut(r).iter_mut().zip(slopes) {
            if *v <= 0.0 {
                *v *= a;
            }
        }
    }
    Ok(out)
}

/// Fully connected layer handle.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: params.add(format!("{prefix}.w"), glorot_uniform(input, output, rng))?,
            bias: params.add(format!("{prefix}.b"), Matrix::zeros(1, output))?,
        })
    }

    pub fn zeroed(params: &mut ParameterSet, prefix: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: params.add(format!("{prefix}.w"), Matrix::zeros(input, output))?,
            bias: params.add(format!("{prefix}.b"), Matrix::zeros(1, output))?,
        })
    }

    pub fn bind(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: lookup(params, &format!("{prefix}.w"))?,
            bias: lookup(params, &format!("{prefix}.b"))?,
        })
    }

    pub fn output_size(&self, params: &ParameterSet) -> usize {
        params.value(self.weight).cols()
    }

    pub fn forward(&self, params: &ParameterSet, input: &Matrix) -> Result<Matrix> {
        dense_forward(input, params.value(self.weight), params.value(self.bias))
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, params: &mut ParameterSet, input: &Matrix, d_out: &Matrix) -> Matrix {
        input.matmul_tn_acc(d_out, params.grad_mut(self.weight));
        let db = params.grad_mut(self.bias).as_mut_slice();
        for r in 0..d_out.rows() {
            axpy(1.0, d_out.row(r), db);
        }
        d_out.matmul_nt(params.value(self.weight))
    }
}

/// Per-channel PReLU handle.
#[derive(Clone, Copy, Debug)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub fn new(params: &mut ParameterSet, prefix: &str, channels: usize) -> Result<Self> {
        let slopes = Matrix::row_vector(&vec![PRELU_INIT_SLOPE; channels]);
        Ok(Self {
            slope: params.add(format!("{prefix}.slope"), slopes)?,
        })
    }

    pub fn bind(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            slope: lookup(params, &format!("{prefix}.slope"))?,
        })
    }

    pub fn forward(&self, params: &ParameterSet, input: &Matrix) -> Result<Matrix> {
        prelu(input, params.value(self.slope).as_slice())
    }

    pub fn backward(&self, params: &mut ParameterSet, input: &Matrix, d_out: &Matrix) -> Matrix {
        let mut d_in = d_out.clone();
        let cols = input.cols();
        let mut d_slope = vec![0.0; cols];
        {
            let slopes = params.value(self.slope).as_slice();
            for r in 0..input.rows() {
                let x = input.row(r);
                let g = d_in.row_mut(r);
                for c in 0..cols {
                    if x[c] <= 0.0 {
                        d_slope[c] += x[c] * g[c];
                        g[c] *= slopes[c];
                    }
                }
            }
        }
        axpy(1.0, &d_slope, params.grad_mut(self.slope).as_mut_slice());
        d_in
    }
}

pub(crate) fn lookup(params: &ParameterSet, name: &str) -> Result<ParamId> {
    params
        .id(name)
        .ok_or_else(|| Error::State(format!("missing parameter {name:?}")))
}
