//! The peephole Conv-LSTM cell.
//!
//! ```text
//! I   = sigmoid(W_xi * X + W_hi * H_prev + W_ci . C_prev + b_i)
//! F   = sigmoid(W_xf * X + W_hf * H_prev + W_cf . C_prev + b_f)
//! C   = F . C_prev + I . tanh(W_xc * X + W_hc * H_prev + b_c)
//! O   = sigmoid(W_xo * X + W_ho * H_prev + W_co . C + b_o)
//! H   = O . tanh(C)
//! ```
//!
//! `*` is a same-size convolution and `.` the Hadamard product. The output gate
//! peeks at the updated cell state, the input and forget gates at the previous one.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{xavier_init, Tensor};

/// Weights of one Conv-LSTM layer.
///
/// Input-to-hidden kernels are `[hidden, in, k, k]`, hidden-to-hidden kernels
/// `[hidden, hidden, k, k]`, peepholes `[hidden, h, w]` and biases `[hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub w_ci: Tensor,
    pub w_cf: Tensor,
    pub w_co: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

pub(crate) const CELL_TENSOR_NAMES: [&str; 15] = [
    "w_xi", "w_hi", "w_xf", "w_hf", "w_xc", "w_hc", "w_xo", "w_ho", "w_ci", "w_cf", "w_co", "b_i",
    "b_f", "b_c", "b_o",
];

/// Hidden and cell state of one layer, each `[hidden, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        CellState {
            h: Tensor::zeros([channels, height, width]),
            c: Tensor::zeros([channels, height, width]),
        }
    }
}

/// Gate activations of a single step, for inspection.
#[derive(Clone, Debug)]
pub struct CellGates {
    pub input: Tensor,
    pub forget: Tensor,
    pub output: Tensor,
    pub state: CellState,
}

impl CellParams {
    /// All-zero weights.
    pub fn zeros(in_channels: usize, hidden: usize, filter: usize, map: (usize, usize)) -> Self {
        let wx = || Tensor::zeros([hidden, in_channels, filter, filter]);
        let wh = || Tensor::zeros([hidden, hidden, filter, filter]);
        let peep = || Tensor::zeros([hidden, map.0, map.1]);
        let b = || Tensor::zeros([hidden]);
        CellParams {
            w_xi: wx(),
            w_hi: wh(),
            w_xf: wx(),
            w_hf: wh(),
            w_xc: wx(),
            w_hc: wh(),
            w_xo: wx(),
            w_ho: wh(),
            w_ci: peep(),
            w_cf: peep(),
            w_co: peep(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    /// Xavier-uniform convolution kernels; peepholes and biases start at zero.
    pub fn xavier<R: Rng + ?Sized>(
        in_channels: usize,
        hidden: usize,
        filter: usize,
        map: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let area = filter * filter;
        let mut p = Self::zeros(in_channels, hidden, filter, map);
        for (i, w) in [
            &mut p.w_xi,
            &mut p.w_hi,
            &mut p.w_xf,
            &mut p.w_hf,
            &mut p.w_xc,
            &mut p.w_hc,
            &mut p.w_xo,
            &mut p.w_ho,
        ]
        .into_iter()
        .enumerate()
        {
            let fan_in = if i % 2 == 0 { in_channels } else { hidden } * area;
            *w = xavier_init(w.shape().to_vec(), fan_in, hidden * area, rng);
        }
        p
    }

    pub fn in_channels(&self) -> usize {
        self.w_xi.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_xi.shape()[0]
    }

    pub fn filter_size(&self) -> usize {
        self.w_xi.shape()[2]
    }

    /// Spatial size the peephole weights were built for.
    pub fn map_shape(&self) -> (usize, usize) {
        (self.w_ci.shape()[1], self.w_ci.shape()[2])
    }

    pub fn tensors(&self) -> [&Tensor; 15] {
        [
            &self.w_xi, &self.w_hi, &self.w_xf, &self.w_hf, &self.w_xc, &self.w_hc, &self.w_xo,
            &self.w_ho, &self.w_ci, &self.w_cf, &self.w_co, &self.b_i, &self.b_f, &self.b_c,
            &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 15] {
        [
            &mut self.w_xi,
            &mut self.w_hi,
            &mut self.w_xf,
            &mut self.w_hf,
            &mut self.w_xc,
            &mut self.w_hc,
            &mut self.w_xo,
            &mut self.w_ho,
            &mut self.w_ci,
            &mut self.w_cf,
            &mut self.w_co,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }

    /// Check the shared-filter and channel-consistency invariants.
    pub fn validate(&self) -> Result<()> {
        let (hid, cin, k) = (self.hidden(), self.in_channels(), self.filter_size());
        let (mh, mw) = self.map_shape();
        let ok = [&self.w_xi, &self.w_xf, &self.w_xc, &self.w_xo]
            .iter()
            .all(|w| w.shape() == [hid, cin, k, k])
            && [&self.w_hi, &self.w_hf, &self.w_hc, &self.w_ho]
                .iter()
                .all(|w| w.shape() == [hid, hid, k, k])
            && [&self.w_ci, &self.w_cf, &self.w_co]
                .iter()
                .all(|w| w.shape() == [hid, mh, mw])
            && [&self.b_i, &self.b_f, &self.b_c, &self.b_o]
                .iter()
                .all(|b| b.shape() == [hid]);
        if !ok {
            return Err(Error::config("inconsistent Conv-LSTM cell parameter shapes"));
        }
        Ok(())
    }
}

/// Cell parameters registered on a tape, with the eight kernels fused into one
/// `[4*hidden, in+hidden, k, k]` convolution over `concat(X, H_prev)`.
pub(crate) struct CellVars {
    pub leaves: [Var; 15],
    fused_kernel: Var,
    fused_bias: Var,
    hidden: usize,
}

impl CellVars {
    pub fn register(tape: &mut Tape, params: &CellParams, trainable: bool) -> Result<Self> {
        let leaves = params.tensors().map(|t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        });
        let [w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho, _, _, _, b_i, b_f, b_c, b_o] = leaves;
        let mut gate_kernels = Vec::with_capacity(4);
        for (wx, wh) in [(w_xi, w_hi), (w_xf, w_hf), (w_xc, w_hc), (w_xo, w_ho)] {
            gate_kernels.push(tape.concat(&[wx, wh], 1)?);
        }
        let fused_kernel = tape.concat(&gate_kernels, 0)?;
        let fused_bias = tape.concat(&[b_i, b_f, b_c, b_o], 0)?;
        Ok(CellVars {
            leaves,
            fused_kernel,
            fused_bias,
            hidden: params.hidden(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StateVars {
    pub h: Var,
    pub c: Var,
}

pub(crate) struct GateVars {
    pub input: Var,
    pub forget: Var,
    pub output: Var,
}

/// One recorded step of the cell.
pub(crate) fn step_on_tape(
    tape: &mut Tape,
    cell: &CellVars,
    x: Var,
    prev: StateVars,
) -> Result<(StateVars, GateVars)> {
    let (xs, hs, cs) = (
        tape.value(x).shape().to_vec(),
        tape.value(prev.h).shape().to_vec(),
        tape.value(prev.c).shape().to_vec(),
    );
    if xs.len() != 3 || xs[1..] != hs[1..] || hs != cs {
        return Err(Error::config(format!(
            "cell step shape mismatch: input {xs:?}, hidden {hs:?}, cell {cs:?}"
        )));
    }
    let n = cell.hidden;
    let [_, _, _, _, _, _, _, _, w_ci, w_cf, w_co, _, _, _, _] = cell.leaves;

    let xh = tape.concat(&[x, prev.h], 0)?;
    let z = tape.conv2d_same(xh, cell.fused_kernel, cell.fused_bias)?;
    let zi = tape.slice(z, 0, 0, n)?;
    let zf = tape.slice(z, 0, n, n)?;
    let zc = tape.slice(z, 0, 2 * n, n)?;
    let zo = tape.slice(z, 0, 3 * n, n)?;

    let pi = tape.mul(w_ci, prev.c)?;
    let ai = tape.add(zi, pi)?;
    let i = tape.sigmoid(ai);

    let pf = tape.mul(w_cf, prev.c)?;
    let af = tape.add(zf, pf)?;
    let f = tape.sigmoid(af);

    let cand = tape.tanh(zc);
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;

    let po = tape.mul(w_co, c)?;
    let ao = tape.add(zo, po)?;
    let o = tape.sigmoid(ao);

    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((
        StateVars { h, c },
        GateVars {
            input: i,
            forget: f,
            output: o,
        },
    ))
}

/// Advance one Conv-LSTM cell by a single timestep.
pub fn cell_step(params: &CellParams, x: &Tensor, prev: &CellState) -> Result<CellState> {
    cell_step_gates(params, x, prev).map(|g| g.state)
}

/// [`cell_step`] that also reports the gate activations.
pub fn cell_step_gates(params: &CellParams, x: &Tensor, prev: &CellState) -> Result<CellGates> {
    params.validate()?;
    if x.rank() != 3 || x.shape()[0] != params.in_channels() {
        return Err(Error::config(format!(
            "cell input {:?} does not match {} input channels",
            x.shape(),
            params.in_channels()
        )));
    }
    let mut tape = Tape::new();
    let cell = CellVars::register(&mut tape, params, false)?;
    let xv = tape.constant(x.clone());
    let state = StateVars {
        h: tape.constant(prev.h.clone()),
        c: tape.constant(prev.c.clone()),
    };
    let (next, gates) = step_on_tape(&mut tape, &cell, xv, state)?;
    Ok(CellGates {
        input: tape.value(gates.input).clone(),
        forget: tape.value(gates.forget).clone(),
        output: tape.value(gates.output).clone(),
        state: CellState {
            h: tape.value(next.h).clone(),
            c: tape.value(next.c).clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_halve_the_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = CellParams::zeros(3, 2, 3, (4, 4));
        let x = Tensor::uniform([3, 4, 4], 1.0, &mut rng);
        let prev = CellState {
            h: Tensor::uniform([2, 4, 4], 1.0, &mut rng),
            c: Tensor::uniform([2, 4, 4], 2.0, &mut rng),
        };
        let g = cell_step_gates(&p, &x, &prev).unwrap();
        for gate in [&g.input, &g.forget, &g.output] {
            assert!(gate.data().iter().all(|&v| v == 0.5));
        }
        let c_expected = prev.c.scale(0.5);
        assert!(g.state.c.max_abs_diff(&c_expected) < 1e-15);
        let h_expected = c_expected.map(|c| 0.5 * c.tanh());
        assert!(g.state.h.max_abs_diff(&h_expected) < 1e-15);
    }

    #[test]
    fn zero_state_zero_input_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = CellParams::xavier(2, 3, 3, (5, 5), &mut rng);
        for w in [&mut p.w_ci, &mut p.w_cf, &mut p.w_co] {
            *w = Tensor::uniform(w.shape().to_vec(), 1.0, &mut rng);
        }
        let next = cell_step(&p, &Tensor::zeros([2, 5, 5]), &CellState::zeros(3, 5, 5)).unwrap();
        assert!(next.h.data().iter().all(|&v| v == 0.0));
        assert!(next.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let p = CellParams::zeros(2, 3, 3, (4, 4));
        let r = cell_step(&p, &Tensor::zeros([2, 5, 5]), &CellState::zeros(3, 4, 4));
        assert!(matches!(r, Err(Error::Config(_))));
        let r = cell_step(&p, &Tensor::zeros([1, 4, 4]), &CellState::zeros(3, 4, 4));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn gates_and_hidden_in_open_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut p = CellParams::xavier(2, 2, 3, (4, 4), &mut rng);
            for w in p.tensors_mut() {
                *w = Tensor::uniform(w.shape().to_vec(), 0.5, &mut rng);
            }
            let x = Tensor::uniform([2, 4, 4], 1.0, &mut rng);
            let prev = CellState {
                h: Tensor::uniform([2, 4, 4], 1.0, &mut rng),
                c: Tensor::uniform([2, 4, 4], 2.0, &mut rng),
            };
            let g = cell_step_gates(&p, &x, &prev).unwrap();
            for gate in [&g.input, &g.forget, &g.output] {
                assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            assert!(g.state.h.data().iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}
