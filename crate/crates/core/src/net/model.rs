//! Composite encoder / past-decoder / future-decoder network.

use rand::Rng;

use super::cell::{step_on_tape, CellParams, CellState, CellVars, StateVars, CELL_TENSOR_NAMES};
use super::config::{NetworkConfig, OutputNonlinearity};
use super::patch::{patchify, unpatchify};
use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{xavier_init, Tensor};

/// Stacked decoder layers plus the 1x1 convolution that merges every layer's
/// hidden state into one patchified output frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub layers: Vec<CellParams>,
    /// `[k*k, sum(layer_channels), 1, 1]`
    pub agg_w: Tensor,
    /// `[k*k]`
    pub agg_b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<CellParams>,
    /// Absent for the future-only baseline.
    pub past: Option<DecoderParams>,
    pub future: DecoderParams,
}

fn xavier_stack<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Vec<CellParams> {
    let m = cfg.map_size();
    (0..cfg.num_layers())
        .map(|l| {
            CellParams::xavier(
                cfg.layer_input_channels(l),
                cfg.layer_channels[l],
                cfg.filter_size,
                (m, m),
                rng,
            )
        })
        .collect()
}

impl DecoderParams {
    fn xavier<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let layers = xavier_stack(cfg, rng);
        let total: usize = cfg.layer_channels.iter().sum();
        let out = cfg.frame_channels();
        DecoderParams {
            layers,
            agg_w: xavier_init([out, total, 1, 1], total, out, rng),
            agg_b: Tensor::zeros([out]),
        }
    }
}

impl ModelParams {
    /// Xavier-initialised parameters for `cfg`.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = xavier_stack(cfg, rng);
        let past = if cfg.composite {
            Some(DecoderParams::xavier(cfg, rng))
        } else {
            None
        };
        let future = DecoderParams::xavier(cfg, rng);
        Ok(ModelParams {
            encoder,
            past,
            future,
        })
    }

    /// Correctly shaped all-zero parameters.
    pub fn zeros(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.map_size();
        let stack = || -> Vec<CellParams> {
            (0..cfg.num_layers())
                .map(|l| {
                    CellParams::zeros(
                        cfg.layer_input_channels(l),
                        cfg.layer_channels[l],
                        cfg.filter_size,
                        (m, m),
                    )
                })
                .collect()
        };
        let total: usize = cfg.layer_channels.iter().sum();
        let dec = || DecoderParams {
            layers: stack(),
            agg_w: Tensor::zeros([cfg.frame_channels(), total, 1, 1]),
            agg_b: Tensor::zeros([cfg.frame_channels()]),
        };
        Ok(ModelParams {
            encoder: stack(),
            past: cfg.composite.then(dec),
            future: dec(),
        })
    }

    /// Every trainable tensor with a stable dotted name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, cell) in self.encoder.iter().enumerate() {
            for (n, t) in CELL_TENSOR_NAMES.iter().zip(cell.tensors()) {
                out.push((format!("encoder.{l}.{n}"), t));
            }
        }
        let decoders = self
            .past
            .iter()
            .map(|d| ("past", d))
            .chain(std::iter::once(("future", &self.future)));
        for (prefix, dec) in decoders {
            for (l, cell) in dec.layers.iter().enumerate() {
                for (n, t) in CELL_TENSOR_NAMES.iter().zip(cell.tensors()) {
                    out.push((format!("{prefix}.{l}.{n}"), t));
                }
            }
            out.push((format!("{prefix}.agg.w"), &dec.agg_w));
            out.push((format!("{prefix}.agg.b"), &dec.agg_b));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for cell in &mut self.encoder {
            out.extend(cell.tensors_mut());
        }
        for dec in self.past.iter_mut().chain(std::iter::once(&mut self.future)) {
            for cell in &mut dec.layers {
                out.extend(cell.tensors_mut());
            }
            out.push(&mut dec.agg_w);
            out.push(&mut dec.agg_b);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Shapes implied by `cfg`, used to validate loaded checkpoints.
    pub fn check_against(&self, cfg: &NetworkConfig) -> Result<()> {
        let reference = ModelParams::zeros(cfg)?;
        let (a, b) = (self.named(), reference.named());
        if a.len() != b.len() {
            return Err(Error::config(format!(
                "parameter set has {} tensors, configuration needs {}",
                a.len(),
                b.len()
            )));
        }
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::config(format!(
                    "parameter {na} {:?} does not match expected {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Which decoder to run and how to feed it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Reconstruct the input window (emitted newest-first, returned chronologically).
    Past,
    FutureUnconditioned,
    FutureConditioned,
}

/// Output of a full composite pass.
#[derive(Clone, Debug)]
pub struct CompositeOutput {
    /// `[T_in, 1, S, S]`, chronological; `None` for the baseline.
    pub reconstruction: Option<Tensor>,
    /// `[T_out, 1, S, S]`
    pub prediction: Tensor,
    /// Mean squared error over all reconstructed and predicted frames.
    pub loss: f64,
    pub reconstruction_loss: Option<f64>,
    pub prediction_loss: f64,
}

/// Split a `[T, 1, S, S]` stack into its frames.
pub fn unstack_frames(seq: &Tensor) -> Result<Vec<Tensor>> {
    let s = seq.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::config(format!("expected a [T, 1, S, S] sequence, got {s:?}")));
    }
    let n = s[2] * s[3];
    seq.data()
        .chunks(n)
        .map(|c| Tensor::new([1, s[2], s[3]], c.to_vec()))
        .collect()
}

/// Stack equally-sized `[1, S, S]` frames into `[T, 1, S, S]`.
pub fn stack_frames(frames: &[Tensor]) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::usage("cannot stack an empty frame list"))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(frames.len() * first.len());
    for f in frames {
        if f.shape() != shape.as_slice() {
            return Err(Error::config(format!("frame shape {:?} differs from {shape:?}", f.shape())));
        }
        data.extend_from_slice(f.data());
    }
    let mut full = vec![frames.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

struct DecoderVars {
    layers: Vec<CellVars>,
    agg_w: Var,
    agg_b: Var,
}

struct ModelVars {
    encoder: Vec<CellVars>,
    past: Option<DecoderVars>,
    future: DecoderVars,
}

impl ModelVars {
    fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Result<Self> {
        let leaf = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let mut encoder = Vec::new();
        for cell in &params.encoder {
            encoder.push(CellVars::register(tape, cell, trainable)?);
        }
        let reg_dec = |tape: &mut Tape, d: &DecoderParams| -> Result<DecoderVars> {
            let mut layers = Vec::new();
            for cell in &d.layers {
                layers.push(CellVars::register(tape, cell, trainable)?);
            }
            Ok(DecoderVars {
                layers,
                agg_w: leaf(tape, &d.agg_w),
                agg_b: leaf(tape, &d.agg_b),
            })
        };
        let past = params.past.as_ref().map(|d| reg_dec(tape, d)).transpose()?;
        let future = reg_dec(tape, &params.future)?;
        Ok(ModelVars {
            encoder,
            past,
            future,
        })
    }

    /// Leaf vars in [`ModelParams::named`] order.
    fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for c in &self.encoder {
            out.extend(c.leaves);
        }
        for d in self.past.iter().chain(std::iter::once(&self.future)) {
            for c in &d.layers {
                out.extend(c.leaves);
            }
            out.push(d.agg_w);
            out.push(d.agg_b);
        }
        out
    }
}

/// A configuration bound to a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: ModelParams,
}

/// Loss value and per-tensor gradients, ordered like [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

struct Recorded {
    tape: Tape,
    vars: ModelVars,
    recon: Option<Vec<Var>>,
    pred: Vec<Var>,
    loss: Var,
    recon_loss: Option<Var>,
    pred_loss: Var,
}

impl Model {
    pub fn new(config: NetworkConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Model { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Model { config, params })
    }

    fn zero_state(&self, tape: &mut Tape, layer: usize) -> StateVars {
        let m = self.config.map_size();
        let ch = self.config.layer_channels[layer];
        StateVars {
            h: tape.constant(Tensor::zeros([ch, m, m])),
            c: tape.constant(Tensor::zeros([ch, m, m])),
        }
    }

    fn patch_frames(&self, seq: &Tensor) -> Result<Vec<Tensor>> {
        let s = seq.shape();
        let side = self.config.frame_size;
        if s.len() != 4 || s[1] != 1 || s[2] != side || s[3] != side {
            return Err(Error::config(format!(
                "expected a [T, 1, {side}, {side}] sequence, got {s:?}"
            )));
        }
        unstack_frames(seq)?
            .iter()
            .map(|f| patchify(f, self.config.patch_factor))
            .collect()
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        layers: &[CellVars],
        frames: &[Var],
    ) -> Result<Vec<StateVars>> {
        if frames.is_empty() {
            return Err(Error::usage("encode needs at least one frame"));
        }
        let mut states: Vec<StateVars> = (0..layers.len()).map(|l| self.zero_state(tape, l)).collect();
        for &frame in frames {
            let mut x = frame;
            for (l, cell) in layers.iter().enumerate() {
                let (next, _) = step_on_tape(tape, cell, x, states[l])?;
                states[l] = next;
                x = next.h;
            }
        }
        Ok(states)
    }

    /// Patch-space output frames in emission order.
    fn decode_on_tape(
        &self,
        tape: &mut Tape,
        dec: &DecoderVars,
        init: &[StateVars],
        steps: usize,
        conditioned: bool,
    ) -> Result<Vec<Var>> {
        if steps == 0 {
            return Err(Error::usage("decode needs steps >= 1"));
        }
        if init.len() != dec.layers.len() {
            return Err(Error::config(format!(
                "encoding has {} layers, decoder has {}",
                init.len(),
                dec.layers.len()
            )));
        }
        let m = self.config.map_size();
        let zeros = tape.constant(Tensor::zeros([self.config.frame_channels(), m, m]));
        let mut states = init.to_vec();
        let mut outputs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut x = match outputs.last() {
                Some(&prev) if conditioned => prev,
                _ => zeros,
            };
            let mut hiddens = Vec::with_capacity(dec.layers.len());
            for (l, cell) in dec.layers.iter().enumerate() {
                let (next, _) = step_on_tape(tape, cell, x, states[l])?;
                states[l] = next;
                hiddens.push(next.h);
                x = next.h;
            }
            let cat = tape.concat(&hiddens, 0)?;
            let z = tape.conv2d_same(cat, dec.agg_w, dec.agg_b)?;
            let y = match self.config.output_nonlinearity {
                OutputNonlinearity::Sigmoid => tape.sigmoid(z),
                OutputNonlinearity::Relu => tape.relu(z),
            };
            outputs.push(y);
        }
        Ok(outputs)
    }

    /// Mean of per-frame MSEs over the given (output, target) pairs.
    fn mean_mse(tape: &mut Tape, pairs: &[(Var, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(o, t) in pairs {
            let e = tape.mse(o, t)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, e)?,
                None => e,
            });
        }
        let sum = acc.ok_or_else(|| Error::usage("loss over zero frames"))?;
        Ok(tape.scale(sum, 1.0 / pairs.len() as f64))
    }

    fn record(&self, input: &Tensor, target: &Tensor, trainable: bool) -> Result<Recorded> {
        let cfg = &self.config;
        let inp = self.patch_frames(input)?;
        let tgt = self.patch_frames(target)?;
        if inp.len() != cfg.input_len || tgt.len() != cfg.output_len {
            return Err(Error::config(format!(
                "window needs {} input and {} target frames, got {} and {}",
                cfg.input_len,
                cfg.output_len,
                inp.len(),
                tgt.len()
            )));
        }
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &self.params, trainable)?;
        let in_vars: Vec<Var> = inp.into_iter().map(|f| tape.constant(f)).collect();
        let tgt_vars: Vec<Var> = tgt.into_iter().map(|f| tape.constant(f)).collect();

        let enc = self.encode_on_tape(&mut tape, &vars.encoder, &in_vars)?;

        let recon = match &vars.past {
            Some(past) => {
                let mut out = self.decode_on_tape(&mut tape, past, &enc, cfg.input_len, false)?;
                out.reverse();
                Some(out)
            }
            None => None,
        };
        let pred = self.decode_on_tape(&mut tape, &vars.future, &enc, cfg.output_len, cfg.conditioned)?;

        let pred_pairs: Vec<(Var, Var)> = pred.iter().copied().zip(tgt_vars.iter().copied()).collect();
        let pred_loss = Self::mean_mse(&mut tape, &pred_pairs)?;
        let (loss, recon_loss) = match &recon {
            Some(r) => {
                let recon_pairs: Vec<(Var, Var)> = r.iter().copied().zip(in_vars.iter().copied()).collect();
                let recon_loss = Self::mean_mse(&mut tape, &recon_pairs)?;
                let all: Vec<(Var, Var)> = recon_pairs.into_iter().chain(pred_pairs).collect();
                (Self::mean_mse(&mut tape, &all)?, Some(recon_loss))
            }
            None => (pred_loss, None),
        };
        Ok(Recorded {
            tape,
            vars,
            recon,
            pred,
            loss,
            recon_loss,
            pred_loss,
        })
    }

    fn frames_from(&self, tape: &Tape, vars: &[Var]) -> Result<Tensor> {
        let frames: Vec<Tensor> = vars
            .iter()
            .map(|v| unpatchify(tape.value(*v), self.config.patch_factor))
            .collect::<Result<_>>()?;
        stack_frames(&frames)
    }

    /// Run the encoder over `input_seq` (`[T_in, 1, S, S]`) from zero states and
    /// return each layer's final state.
    pub fn encode(&self, input_seq: &Tensor) -> Result<Vec<CellState>> {
        let frames = self.patch_frames(input_seq)?;
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &self.params, false)?;
        let fv: Vec<Var> = frames.into_iter().map(|f| tape.constant(f)).collect();
        let states = self.encode_on_tape(&mut tape, &vars.encoder, &fv)?;
        Ok(states
            .into_iter()
            .map(|s| CellState {
                h: tape.value(s.h).clone(),
                c: tape.value(s.c).clone(),
            })
            .collect())
    }

    /// Unroll a decoder from `encoding` for `steps` frames; returns `[steps, 1, S, S]`.
    pub fn decode(&self, encoding: &[CellState], mode: DecodeMode, steps: usize) -> Result<Tensor> {
        if steps == 0 {
            return Err(Error::usage("decode needs steps >= 1"));
        }
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &self.params, false)?;
        let init: Vec<StateVars> = encoding
            .iter()
            .map(|s| StateVars {
                h: tape.constant(s.h.clone()),
                c: tape.constant(s.c.clone()),
            })
            .collect();
        let (dec, conditioned) = match mode {
            DecodeMode::Past => (
                vars.past
                    .as_ref()
                    .ok_or_else(|| Error::usage("baseline model has no past decoder"))?,
                false,
            ),
            DecodeMode::FutureUnconditioned => (&vars.future, false),
            DecodeMode::FutureConditioned => (&vars.future, true),
        };
        let mut out = self.decode_on_tape(&mut tape, dec, &init, steps, conditioned)?;
        if mode == DecodeMode::Past {
            out.reverse();
        }
        self.frames_from(&tape, &out)
    }

    /// Reconstruct `input_seq`, predict `target_future` and score both.
    pub fn forward_composite(&self, input_seq: &Tensor, target_future: &Tensor) -> Result<CompositeOutput> {
        let r = self.record(input_seq, target_future, false)?;
        let reconstruction = r
            .recon
            .as_ref()
            .map(|v| self.frames_from(&r.tape, v))
            .transpose()?;
        Ok(CompositeOutput {
            reconstruction,
            prediction: self.frames_from(&r.tape, &r.pred)?,
            loss: r.tape.value(r.loss).item(),
            reconstruction_loss: r.recon_loss.map(|v| r.tape.value(v).item()),
            prediction_loss: r.tape.value(r.pred_loss).item(),
        })
    }

    /// Composite loss and its gradient w.r.t. every parameter tensor.
    pub fn loss_and_grads(&self, input_seq: &Tensor, target_future: &Tensor) -> Result<LossGrad> {
        let r = self.record(input_seq, target_future, true)?;
        let mut g: Gradients = r.tape.backward(r.loss)?;
        let grads = r.vars.leaves().into_iter().map(|v| g.take(v)).collect();
        Ok(LossGrad {
            loss: r.tape.value(r.loss).item(),
            grads,
        })
    }

    /// Loss only, without building gradients.
    pub fn loss(&self, input_seq: &Tensor, target_future: &Tensor) -> Result<f64> {
        let r = self.record(input_seq, target_future, false)?;
        Ok(r.tape.value(r.loss).item())
    }
}
