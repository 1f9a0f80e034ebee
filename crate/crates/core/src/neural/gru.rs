//! Gated recurrent cell and a bidirectional encoder built from two of them.
//!
//! Cell equations, with row-vector inputs:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! h̃  = tanh(x·Wh + (r⊙h)·Uh + bh)
//! h' = (1 − z)⊙h + z⊙h̃
//! ```
//!
//! Input projections `x·W + b` are computed for a whole sequence at once; only
//! the `U` products run inside the recurrence. Backpropagation through time is
//! exact.

use rand::Rng;

use super::layers::lookup;
use super::matrix::{axpy, matvec_acc, outer_acc, vecmat_acc, Matrix};
use super::params::{glorot_uniform, ParamId, ParameterSet};
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

/// Gate activations of one step.
#[derive(Clone, Debug, Default)]
pub struct StepCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// Gradients w.r.t. the pre-activations of one step plus the previous state.
#[derive(Clone, Debug)]
pub struct StepGrad {
    pub d_pre_z: Vec<f64>,
    pub d_pre_r: Vec<f64>,
    pub d_pre_h: Vec<f64>,
    pub d_h_prev: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = |params: &mut ParameterSet, n: &str, rows: usize, rng: &mut R| {
            params.add(format!("{prefix}.{n}"), glorot_uniform(rows, hidden, rng))
        };
        let w_z = w(params, "w_z", input, rng)?;
        let w_r = w(params, "w_r", input, rng)?;
        let w_h = w(params, "w_h", input, rng)?;
        let u_z = w(params, "u_z", hidden, rng)?;
        let u_r = w(params, "u_r", hidden, rng)?;
        let u_h = w(params, "u_h", hidden, rng)?;
        let b = |params: &mut ParameterSet, n: &str| params.add(format!("{prefix}.{n}"), Matrix::zeros(1, hidden));
        Ok(Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: b(params, "b_z")?,
            b_r: b(params, "b_r")?,
            b_h: b(params, "b_h")?,
        })
    }

    pub fn bind(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let id = |n: &str| lookup(params, &format!("{prefix}.{n}"));
        Ok(Self {
            w_z: id("w_z")?,
            w_r: id("w_r")?,
            w_h: id("w_h")?,
            u_z: id("u_z")?,
            u_r: id("u_r")?,
            u_h: id("u_h")?,
            b_z: id("b_z")?,
            b_r: id("b_r")?,
            b_h: id("b_h")?,
        })
    }

    pub fn hidden_size(&self, params: &ParameterSet) -> usize {
        params.value(self.u_z).rows()
    }

    pub fn input_size(&self, params: &ParameterSet) -> usize {
        params.value(self.w_z).rows()
    }

    /// One step from precomputed input projections (`x·W + b` per gate).
    pub fn step(&self, params: &ParameterSet, pz: &[f64], pr: &[f64], ph: &[f64], h_prev: &[f64]) -> StepCache {
        let n = h_prev.len();
        let mut z = pz.to_vec();
        vecmat_acc(h_prev, params.value(self.u_z), &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = pr.to_vec();
        vecmat_acc(h_prev, params.value(self.u_r), &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut candidate = ph.to_vec();
        vecmat_acc(&rh, params.value(self.u_h), &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());
        let h = (0..n)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
            .collect();
        StepCache { z, r, candidate, h }
    }

    /// Backward through one step; accumulates `U` gradients only.
    pub fn step_backward(
        &self,
        params: &mut ParameterSet,
        cache: &StepCache,
        h_prev: &[f64],
        dh: &[f64],
    ) -> StepGrad {
        let n = h_prev.len();
        let StepCache { z, r, candidate, .. } = cache;
        let mut d_h_prev: Vec<f64> = (0..n).map(|i| dh[i] * (1.0 - z[i])).collect();
        let d_pre_h: Vec<f64> = (0..n)
            .map(|i| dh[i] * z[i] * (1.0 - candidate[i] * candidate[i]))
            .collect();
        let d_pre_z: Vec<f64> = (0..n)
            .map(|i| dh[i] * (candidate[i] - h_prev[i]) * z[i] * (1.0 - z[i]))
            .collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut d_rh = vec![0.0; n];
        matvec_acc(params.value(self.u_h), &d_pre_h, &mut d_rh);
        let d_pre_r: Vec<f64> = (0..n)
            .map(|i| d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..n {
            d_h_prev[i] += d_rh[i] * r[i];
        }
        matvec_acc(params.value(self.u_z), &d_pre_z, &mut d_h_prev);
        matvec_acc(params.value(self.u_r), &d_pre_r, &mut d_h_prev);
        outer_acc(&rh, &d_pre_h, params.grad_mut(self.u_h));
        outer_acc(h_prev, &d_pre_z, params.grad_mut(self.u_z));
        outer_acc(h_prev, &d_pre_r, params.grad_mut(self.u_r));
        StepGrad {
            d_pre_z,
            d_pre_r,
            d_pre_h,
            d_h_prev,
        }
    }

    fn project(&self, params: &ParameterSet, inputs: &Matrix) -> Result<[Matrix; 3]> {
        let p = |w: ParamId, b: ParamId| super::layers::dense_forward(inputs, params.value(w), params.value(b));
        Ok([p(self.w_z, self.b_z)?, p(self.w_r, self.b_r)?, p(self.w_h, self.b_h)?])
    }

    /// Runs the cell over every row of `inputs` from a zero state, in reverse
    /// order when `reverse` is set. `states` row `t` is the state after frame `t`.
    pub fn run(&self, params: &ParameterSet, inputs: &Matrix, reverse: bool) -> Result<GruTrace> {
        let hidden = self.hidden_size(params);
        if inputs.cols() != self.input_size(params) {
            return Err(Error::dim("gru input width", self.input_size(params), inputs.cols()));
        }
        let [pz, pr, ph] = self.project(params, inputs)?;
        let t_len = inputs.rows();
        let mut steps = vec![StepCache::default(); t_len];
        let mut states = Matrix::zeros(t_len, hidden);
        let zero = vec![0.0; hidden];
        let mut prev: Option<usize> = None;
        for t in order(t_len, reverse) {
            let h_prev = prev.map_or(&zero[..], |p| states.row(p));
            let cache = self.step(params, pz.row(t), pr.row(t), ph.row(t), h_prev);
            states.row_mut(t).copy_from_slice(&cache.h);
            steps[t] = cache;
            prev = Some(t);
        }
        Ok(GruTrace {
            steps,
            states,
            reverse,
        })
    }

    /// Backpropagates `d_states` through a trace; accumulates all cell
    /// gradients and returns the input gradient.
    pub fn run_backward(
        &self,
        params: &mut ParameterSet,
        inputs: &Matrix,
        trace: &GruTrace,
        d_states: &Matrix,
    ) -> Matrix {
        let hidden = self.hidden_size(params);
        let t_len = inputs.rows();
        let zero = vec![0.0; hidden];
        let mut d_pz = Matrix::zeros(t_len, hidden);
        let mut d_pr = Matrix::zeros(t_len, hidden);
        let mut d_ph = Matrix::zeros(t_len, hidden);
        let mut carry = vec![0.0; hidden];
        let fwd: Vec<usize> = order(t_len, trace.reverse).collect();
        for (k, &t) in fwd.iter().enumerate().rev() {
            let h_prev = if k == 0 { &zero[..] } else { trace.states.row(fwd[k - 1]) };
            let mut dh = d_states.row(t).to_vec();
            axpy(1.0, &carry, &mut dh);
            let g = self.step_backward(params, &trace.steps[t], h_prev, &dh);
            d_pz.row_mut(t).copy_from_slice(&g.d_pre_z);
            d_pr.row_mut(t).copy_from_slice(&g.d_pre_r);
            d_ph.row_mut(t).copy_from_slice(&g.d_pre_h);
            carry = g.d_h_prev;
        }
        let mut d_inputs = Matrix::zeros(t_len, inputs.cols());
        for (d_pre, w, b) in [
            (&d_pz, self.w_z, self.b_z),
            (&d_pr, self.w_r, self.b_r),
            (&d_ph, self.w_h, self.b_h),
        ] {
            inputs.matmul_tn_acc(d_pre, params.grad_mut(w));
            let gb = params.grad_mut(b).as_mut_slice();
            for t in 0..t_len {
                axpy(1.0, d_pre.row(t), gb);
            }
            d_inputs.add_assign(&d_pre.matmul_nt(params.value(w)));
        }
        d_inputs
    }
}

fn order(len: usize, reverse: bool) -> Box<dyn DoubleEndedIterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

/// Cached activations of one directional pass.
#[derive(Clone, Debug)]
pub struct GruTrace {
    pub steps: Vec<StepCache>,
    pub states: Matrix,
    pub reverse: bool,
}

/// Single cell step on a raw input vector.
pub fn gru_cell(params: &ParameterSet, cell: &GruCell, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    Ok(gru_cell_trace(params, cell, x, h)?.h)
}

fn gru_cell_trace(params: &ParameterSet, cell: &GruCell, x: &[f64], h: &[f64]) -> Result<StepCache> {
    let hidden = cell.hidden_size(params);
    if h.len() != hidden {
        return Err(Error::dim("gru hidden state", hidden, h.len()));
    }
    if x.len() != cell.input_size(params) {
        return Err(Error::dim("gru input", cell.input_size(params), x.len()));
    }
    let [pz, pr, ph] = cell.project(params, &Matrix::row_vector(x))?;
    Ok(cell.step(params, pz.as_slice(), pr.as_slice(), ph.as_slice(), h))
}

/// Backward of [`gru_cell`] for upstream gradient `dh_next`; accumulates all
/// cell gradients and returns `(dx, dh)`.
pub fn gru_cell_backward(
    params: &mut ParameterSet,
    cell: &GruCell,
    x: &[f64],
    h: &[f64],
    dh_next: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = gru_cell_trace(params, cell, x, h)?;
    let g = cell.step_backward(params, &cache, h, dh_next);
    let mut dx = vec![0.0; x.len()];
    for (d_pre, w, b) in [
        (&g.d_pre_z, cell.w_z, cell.b_z),
        (&g.d_pre_r, cell.w_r, cell.b_r),
        (&g.d_pre_h, cell.w_h, cell.b_h),
    ] {
        outer_acc(x, d_pre, params.grad_mut(w));
        axpy(1.0, d_pre, params.grad_mut(b).as_mut_slice());
        matvec_acc(params.value(w), d_pre, &mut dx);
    }
    Ok((dx, g.d_h_prev))
}

/// Forward and backward cells over the same inputs, outputs concatenated.
#[derive(Clone, Copy, Debug)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

#[derive(Clone, Debug)]
pub struct BiGruTrace {
    pub forward: GruTrace,
    pub backward: GruTrace,
    /// `T × 2H`: forward state then backward state per row.
    pub output: Matrix,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: GruCell::new(params, &format!("{prefix}.fwd"), input, hidden, rng)?,
            backward: GruCell::new(params, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn bind(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            forward: GruCell::bind(params, &format!("{prefix}.fwd"))?,
            backward: GruCell::bind(params, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn output_size(&self, params: &ParameterSet) -> usize {
        2 * self.forward.hidden_size(params)
    }

    pub fn encode(&self, params: &ParameterSet, seq: &Matrix) -> Result<BiGruTrace> {
        if seq.rows() == 0 {
            return Err(Error::EmptyInput("bidirectional encoder needs at least one frame"));
        }
        let forward = self.forward.run(params, seq, false)?;
        let backward = self.backward.run(params, seq, true)?;
        let h = forward.states.cols();
        let mut output = Matrix::zeros(seq.rows(), 2 * h);
        for t in 0..seq.rows() {
            let row = output.row_mut(t);
            row[..h].copy_from_slice(forward.states.row(t));
            row[h..].copy_from_slice(backward.states.row(t));
        }
        Ok(BiGruTrace {
            forward,
            backward,
            output,
        })
    }

    pub fn backward(&self, params: &mut ParameterSet, seq: &Matrix, trace: &BiGruTrace, d_output: &Matrix) -> Matrix {
        let h = trace.forward.states.cols();
        let t_len = seq.rows();
        let mut d_fwd = Matrix::zeros(t_len, h);
        let mut d_bwd = Matrix::zeros(t_len, h);
        for t in 0..t_len {
            let row = d_output.row(t);
            d_fwd.row_mut(t).copy_from_slice(&row[..h]);
            d_bwd.row_mut(t).copy_from_slice(&row[h..]);
        }
        let mut d_seq = self.forward.run_backward(params, seq, &trace.forward, &d_fwd);
        d_seq.add_assign(&self.backward.run_backward(params, seq, &trace.backward, &d_bwd));
        d_seq
    }
}

/// Bidirectional encoding of `seq`; row `t` is `[forward_t, backward_t]`.
pub fn bigru_encode(params: &ParameterSet, bigru: &BiGru, seq: &Matrix) -> Result<Matrix> {
    Ok(bigru.encode(params, seq)?.output)
}
