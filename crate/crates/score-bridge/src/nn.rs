//! Minimal feed-forward score networks with reverse-mode gradients.
//!
//! The architecture is fixed up to widths: a sinusoidal encoding of time
//! feeds a small MLP (block 1a), the state — concatenated with the initial
//! condition when the net is amortized over x0 — feeds a second MLP (block
//! 1b), and the two embeddings are concatenated into a head MLP (block 2)
//! that outputs a d-dimensional score value. Every layer applies a Leaky
//! ReLU except the final output layer. Parameters live in one flat vector so
//! the optimizer and the serializer stay trivial.
//!
//! # Network file format (version 1)
//!
//! Little-endian, produced by [`ScoreNet::write_to`]:
//!
//! ```text
//! magic          8  bytes  b"SBNETv01"
//! version        u32      1
//! dim            u32
//! conditioned    u8       0 or 1
//! encode_dim     u32
//! time_embed     u32
//! state_embed    u32
//! leaky_slope    f64
//! time_hidden    u32 count, then u32 widths
//! state_hidden   u32 count, then u32 widths
//! head_hidden    u32 count, then u32 widths
//! init_seed      u64
//! param_count    u64
//! params         f64 × param_count
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngSource;
use crate::scalar::Scalar;

/// Anything that evaluates an approximate (or exact) score s(t, x).
///
/// Implemented by [`ScoreNet`] and by the closed-form transition scores of
/// the benchmark models, so bridge proposals accept either interchangeably.
pub trait ScoreFunction<F: Scalar> {
    fn score(&self, t: F, x: &[F], out: &mut [F]);

    /// Evaluate at a shared time for `n` stacked states (`xs` is n × d).
    fn score_batch(&self, t: F, xs: &[F], dim: usize, out: &mut [F]) {
        for (x, o) in xs.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
            self.score(t, x, o);
        }
    }
}

/// Layer widths and activation settings for the three MLP blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Arch {
    /// Output dimension d (and state input dimension).
    pub dim: usize,
    /// When set, the state block takes [x, x0] and `forward` requires x0.
    pub conditioned_on_x0: bool,
    /// Even number of sinusoidal time features.
    pub encode_dim: usize,
    pub time_hidden: Vec<usize>,
    pub time_embed: usize,
    pub state_hidden: Vec<usize>,
    pub state_embed: usize,
    pub head_hidden: Vec<usize>,
    /// Negative slope of the Leaky ReLU.
    pub leaky_slope: f64,
}

impl Arch {
    /// Default widths: one hidden layer of 32 units in each embedding block,
    /// 32-dimensional embeddings, and a 128/128 head.
    pub fn new(dim: usize, conditioned_on_x0: bool) -> Self {
        Self {
            dim,
            conditioned_on_x0,
            encode_dim: 32,
            time_hidden: vec![32],
            time_embed: 32,
            state_hidden: vec![32],
            state_embed: 32,
            head_hidden: vec![128, 128],
            leaky_slope: 0.01,
        }
    }

    pub fn state_input_dim(&self) -> usize {
        self.dim * if self.conditioned_on_x0 { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("dim must be positive".into()));
        }
        if self.encode_dim == 0 || self.encode_dim % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "encode_dim must be even and positive, got {}",
                self.encode_dim
            )));
        }
        if self.time_embed == 0 || self.state_embed == 0 {
            return Err(Error::InvalidInput("embedding widths must be positive".into()));
        }
        Ok(())
    }

    fn width_chains(&self) -> [Vec<usize>; 3] {
        let chain = |input: usize, hidden: &[usize], output: usize| {
            let mut c = Vec::with_capacity(hidden.len() + 2);
            c.push(input);
            c.extend_from_slice(hidden);
            c.push(output);
            c
        };
        [
            chain(self.encode_dim, &self.time_hidden, self.time_embed),
            chain(self.state_input_dim(), &self.state_hidden, self.state_embed),
            chain(self.time_embed + self.state_embed, &self.head_hidden, self.dim),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.width_chains()
            .iter()
            .flat_map(|c| c.windows(2).map(|w| w[0] * w[1] + w[1]))
            .sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    inp: usize,
    out: usize,
    w_off: usize,
    b_off: usize,
    /// Leaky ReLU after this layer?
    activated: bool,
}

#[derive(Clone, Debug)]
struct Plan {
    time: Vec<Layer>,
    state: Vec<Layer>,
    head: Vec<Layer>,
    param_count: usize,
}

impl Plan {
    fn build(arch: &Arch) -> Self {
        let chains = arch.width_chains();
        let mut off = 0usize;
        let mut block = |chain: &[usize], last_activated: bool| -> Vec<Layer> {
            let n = chain.len() - 1;
            (0..n)
                .map(|i| {
                    let (inp, out) = (chain[i], chain[i + 1]);
                    let layer = Layer {
                        inp,
                        out,
                        w_off: off,
                        b_off: off + inp * out,
                        activated: i + 1 < n || last_activated,
                    };
                    off += inp * out + out;
                    layer
                })
                .collect()
        };
        let time = block(&chains[0], true);
        let state = block(&chains[1], true);
        let head = block(&chains[2], false);
        Plan {
            time,
            state,
            head,
            param_count: off,
        }
    }
}

/// Interleaved sinusoidal features of a scalar time:
/// out[2k] = sin(t·ω_k), out[2k+1] = cos(t·ω_k) with ω_k = 10000^{-2k/D}.
pub fn time_encode<F: Scalar>(t: F, encode_dim: usize) -> Vec<F> {
    debug_assert!(encode_dim % 2 == 0);
    let mut out = vec![F::zero(); encode_dim];
    time_encode_into(t, &mut out);
    out
}

fn time_encode_into<F: Scalar>(t: F, out: &mut [F]) {
    let encode_dim = out.len();
    let base = F::cast(10_000.0);
    let d = F::cast(encode_dim);
    for k in 0..encode_dim / 2 {
        let freq = base.powf(-F::cast(2 * k) / d);
        let arg = t * freq;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
}

#[inline]
fn mat_row<F>(mat: &[F], j: usize, width: usize) -> &[F] {
    &mat[j * width..(j + 1) * width]
}

/// Activations recorded by a traced forward pass, consumed by backprop.
///
/// Reusable: keep one around and pass it to every call so the buffers are
/// allocated once and stay cache-warm across a training loop.
pub struct ForwardTrace<F> {
    n: usize,
    /// Per block: layer inputs (one more entry than layers; the last entry
    /// is the block output) and pre-activations per layer.
    time_inputs: Vec<Vec<F>>,
    time_pre: Vec<Vec<F>>,
    state_inputs: Vec<Vec<F>>,
    state_pre: Vec<Vec<F>>,
    head_inputs: Vec<Vec<F>>,
    head_pre: Vec<Vec<F>>,
    // ping-pong scratch for the backward sweep
    back_a: Vec<F>,
    back_b: Vec<F>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn new() -> Self {
        Self {
            n: 0,
            time_inputs: Vec::new(),
            time_pre: Vec::new(),
            state_inputs: Vec::new(),
            state_pre: Vec::new(),
            head_inputs: Vec::new(),
            head_pre: Vec::new(),
            back_a: Vec::new(),
            back_b: Vec::new(),
        }
    }
}

impl<F: Scalar> Default for ForwardTrace<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_len<F: Scalar>(buf: &mut Vec<F>, len: usize) {
    buf.resize(len, F::zero());
}

fn ensure_slots<F>(store: &mut Vec<Vec<F>>, slots: usize) {
    store.resize_with(slots, Vec::new);
}

/// Score approximation with a flat parameter vector.
#[derive(Clone, Debug)]
pub struct ScoreNet<F> {
    arch: Arch,
    plan: Plan,
    params: Vec<F>,
    init_seed: u64,
}

impl<F: Scalar> ScoreNet<F> {
    /// Fan-in uniform initialization, U(−1/√fan_in, 1/√fan_in) for weights
    /// and biases, drawn from the given seed.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let plan = Plan::build(&arch);
        let mut params = vec![F::zero(); plan.param_count];
        let mut rng = RngSource::new(seed).stream(0);
        for layer in plan.time.iter().chain(&plan.state).chain(&plan.head) {
            let bound = (1.0 / layer.inp as f64).sqrt();
            let span = layer.inp * layer.out + layer.out;
            for p in params[layer.w_off..layer.w_off + span].iter_mut() {
                *p = F::cast((rng.gen::<f64>() * 2.0 - 1.0) * bound);
            }
        }
        Ok(Self {
            arch,
            plan,
            params,
            init_seed: seed,
        })
    }

    /// All-zero parameters; the net evaluates to the zero function.
    pub fn zeroed(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let plan = Plan::build(&arch);
        let params = vec![F::zero(); plan.param_count];
        Ok(Self {
            arch,
            plan,
            params,
            init_seed: 0,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    #[inline]
    fn slope(&self) -> F {
        F::cast(self.arch.leaky_slope)
    }

    /// y = x Wᵀ + b for a batch of rows, tiled 4 rows × 4 outputs so both
    /// the weight rows and the input rows stay hot while 16 independent
    /// accumulators keep the FP pipelines busy.
    fn linear(&self, layer: &Layer, input: &[F], out: &mut [F]) {
        let inp = layer.inp;
        let n = input.len() / inp;
        debug_assert_eq!(out.len(), n * layer.out);
        let w = &self.params[layer.w_off..layer.w_off + inp * layer.out];
        let b = &self.params[layer.b_off..layer.b_off + layer.out];
        let mut r = 0;
        while r + 4 <= n {
            let x0 = &input[r * inp..(r + 1) * inp];
            let x1 = &input[(r + 1) * inp..(r + 2) * inp];
            let x2 = &input[(r + 2) * inp..(r + 3) * inp];
            let x3 = &input[(r + 3) * inp..(r + 4) * inp];
            let mut o = 0;
            while o + 4 <= layer.out {
                let w0 = mat_row(w, o, inp);
                let w1 = mat_row(w, o + 1, inp);
                let w2 = mat_row(w, o + 2, inp);
                let w3 = mat_row(w, o + 3, inp);
                let mut acc = [[F::zero(); 4]; 4];
                for i in 0..inp {
                    let xv = [x0[i], x1[i], x2[i], x3[i]];
                    let wv = [w0[i], w1[i], w2[i], w3[i]];
                    for a in 0..4 {
                        for c in 0..4 {
                            acc[a][c] = acc[a][c] + xv[a] * wv[c];
                        }
                    }
                }
                for a in 0..4 {
                    for c in 0..4 {
                        out[(r + a) * layer.out + o + c] = b[o + c] + acc[a][c];
                    }
                }
                o += 4;
            }
            while o < layer.out {
                let w_row = mat_row(w, o, inp);
                let mut acc = [F::zero(); 4];
                for i in 0..inp {
                    let wi = w_row[i];
                    acc[0] = acc[0] + wi * x0[i];
                    acc[1] = acc[1] + wi * x1[i];
                    acc[2] = acc[2] + wi * x2[i];
                    acc[3] = acc[3] + wi * x3[i];
                }
                for a in 0..4 {
                    out[(r + a) * layer.out + o] = b[o] + acc[a];
                }
                o += 1;
            }
            r += 4;
        }
        while r < n {
            let x = &input[r * inp..(r + 1) * inp];
            for o in 0..layer.out {
                out[r * layer.out + o] = b[o] + crate::linalg::dot(mat_row(w, o, inp), x);
            }
            r += 1;
        }
    }

    fn activate(&self, pre: &[F], out: &mut [F]) {
        let slope = self.slope();
        for (p, o) in pre.iter().zip(out.iter_mut()) {
            *o = if *p > F::zero() { *p } else { slope * *p };
        }
    }

    /// Run one MLP block in place. `inputs[0]` must hold the block input
    /// (n × layers[0].inp); afterwards `inputs[k+1]` holds layer k's
    /// activated output and `pres[k]` its pre-activation.
    fn run_block(
        &self,
        layers: &[Layer],
        n: usize,
        inputs: &mut Vec<Vec<F>>,
        pres: &mut Vec<Vec<F>>,
    ) {
        ensure_slots(inputs, layers.len() + 1);
        ensure_slots(pres, layers.len());
        for (k, layer) in layers.iter().enumerate() {
            let (before, after) = inputs.split_at_mut(k + 1);
            let input = &before[k];
            debug_assert_eq!(input.len(), n * layer.inp);
            let pre = &mut pres[k];
            ensure_len(pre, n * layer.out);
            self.linear(layer, input, pre);
            let next = &mut after[0];
            ensure_len(next, n * layer.out);
            if layer.activated {
                self.activate(pre, next);
            } else {
                next.copy_from_slice(pre);
            }
        }
    }

    fn fill_state_input(&self, xs: &[F], x0s: Option<&[F]>, n: usize, out: &mut Vec<F>) -> Result<()> {
        let d = self.arch.dim;
        if self.arch.conditioned_on_x0 {
            let x0s = x0s.ok_or_else(|| {
                Error::InvalidInput("net is conditioned on x0 but no x0 was supplied".into())
            })?;
            if x0s.len() != n * d {
                return Err(Error::InvalidInput(format!(
                    "x0 batch has length {}, expected {}",
                    x0s.len(),
                    n * d
                )));
            }
            ensure_len(out, n * 2 * d);
            for r in 0..n {
                out[r * 2 * d..r * 2 * d + d].copy_from_slice(&xs[r * d..(r + 1) * d]);
                out[r * 2 * d + d..(r + 1) * 2 * d].copy_from_slice(&x0s[r * d..(r + 1) * d]);
            }
        } else {
            if x0s.is_some() {
                return Err(Error::InvalidInput(
                    "net is not conditioned on x0 but an x0 was supplied".into(),
                ));
            }
            ensure_len(out, xs.len());
            out.copy_from_slice(xs);
        }
        Ok(())
    }

    fn forward_into(&self, t: F, xs: &[F], x0s: Option<&[F]>, trace: &mut ForwardTrace<F>) -> Result<()> {
        let d = self.arch.dim;
        if xs.is_empty() || xs.len() % d != 0 {
            return Err(Error::InvalidInput(format!(
                "state batch length {} is not a multiple of dim {}",
                xs.len(),
                d
            )));
        }
        let n = xs.len() / d;
        trace.n = n;

        ensure_slots(&mut trace.time_inputs, self.plan.time.len() + 1);
        let enc = &mut trace.time_inputs[0];
        ensure_len(enc, self.arch.encode_dim);
        time_encode_into(t, enc);
        ensure_slots(&mut trace.state_inputs, self.plan.state.len() + 1);
        self.fill_state_input(xs, x0s, n, &mut trace.state_inputs[0])?;

        self.run_block(&self.plan.time, 1, &mut trace.time_inputs, &mut trace.time_pre);
        self.run_block(&self.plan.state, n, &mut trace.state_inputs, &mut trace.state_pre);

        // The time embedding (one row) is broadcast across the batch.
        let te = self.arch.time_embed;
        let se = self.arch.state_embed;
        ensure_slots(&mut trace.head_inputs, self.plan.head.len() + 1);
        {
            let ForwardTrace {
                time_inputs,
                state_inputs,
                head_inputs,
                ..
            } = trace;
            let time_embed = time_inputs.last().unwrap();
            let state_out = state_inputs.last().unwrap();
            let head_in = &mut head_inputs[0];
            ensure_len(head_in, n * (te + se));
            for r in 0..n {
                head_in[r * (te + se)..r * (te + se) + te].copy_from_slice(time_embed);
                head_in[r * (te + se) + te..(r + 1) * (te + se)]
                    .copy_from_slice(&state_out[r * se..(r + 1) * se]);
            }
        }
        self.run_block(&self.plan.head, n, &mut trace.head_inputs, &mut trace.head_pre);
        Ok(())
    }

    /// Evaluate the net at a shared time for a batch of states.
    /// `xs` is n × d; `out` must be n × d.
    pub fn forward_batch(&self, t: F, xs: &[F], x0s: Option<&[F]>, out: &mut [F]) -> Result<()> {
        let mut trace = ForwardTrace::new();
        self.forward_batch_reusing(&mut trace, t, xs, x0s, out)
    }

    /// As [`ScoreNet::forward_batch`], reusing the caller's buffers; the hot
    /// path for simulation and evaluation loops.
    pub fn forward_batch_reusing(
        &self,
        trace: &mut ForwardTrace<F>,
        t: F,
        xs: &[F],
        x0s: Option<&[F]>,
        out: &mut [F],
    ) -> Result<()> {
        self.forward_into(t, xs, x0s, trace)?;
        out.copy_from_slice(trace.head_inputs.last().unwrap());
        Ok(())
    }

    /// Traced evaluation for a subsequent [`ScoreNet::backward`] call;
    /// returns the n × d outputs.
    pub fn forward_traced(
        &self,
        trace: &mut ForwardTrace<F>,
        t: F,
        xs: &[F],
        x0s: Option<&[F]>,
    ) -> Result<Vec<F>> {
        self.forward_into(t, xs, x0s, trace)?;
        Ok(trace.head_inputs.last().unwrap().clone())
    }

    /// Single-state evaluation.
    pub fn forward(&self, t: F, x: &[F], x0: Option<&[F]>) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); self.arch.dim];
        self.forward_batch(t, x, x0, &mut out)?;
        Ok(out)
    }

    /// Backpropagate one block. On entry `d_cur` holds dL/d(block output);
    /// on exit it holds dL/d(block input). Parameter gradients accumulate
    /// into `grad`.
    fn block_backward(
        &self,
        layers: &[Layer],
        inputs: &[Vec<F>],
        pres: &[Vec<F>],
        d_cur: &mut Vec<F>,
        d_scratch: &mut Vec<F>,
        grad: &mut [F],
    ) {
        let slope = self.slope();
        for (idx, layer) in layers.iter().enumerate().rev() {
            let pre = &pres[idx];
            let input = &inputs[idx];
            let n = pre.len() / layer.out;
            // through the activation
            if layer.activated {
                for (g, p) in d_cur.iter_mut().zip(pre.iter()) {
                    if !(*p > F::zero()) {
                        *g = *g * slope;
                    }
                }
            }
            let inp = layer.inp;
            let out = layer.out;
            let w = &self.params[layer.w_off..layer.w_off + inp * out];
            let (gw, gb) = {
                let (head, tail) = grad[layer.w_off..layer.b_off + out].split_at_mut(inp * out);
                (head, tail)
            };
            // dW[o] += Σ_r dy[r][o] x[r], folding four batch rows per pass
            // over each gradient row
            for o in 0..out {
                let gw_row = &mut gw[o * inp..(o + 1) * inp];
                let mut r = 0;
                while r + 4 <= n {
                    let x0 = mat_row(input, r, inp);
                    let x1 = mat_row(input, r + 1, inp);
                    let x2 = mat_row(input, r + 2, inp);
                    let x3 = mat_row(input, r + 3, inp);
                    let dy = [
                        d_cur[r * out + o],
                        d_cur[(r + 1) * out + o],
                        d_cur[(r + 2) * out + o],
                        d_cur[(r + 3) * out + o],
                    ];
                    gb[o] += (dy[0] + dy[1]) + (dy[2] + dy[3]);
                    for i in 0..inp {
                        gw_row[i] = gw_row[i]
                            + ((dy[0] * x0[i] + dy[1] * x1[i]) + (dy[2] * x2[i] + dy[3] * x3[i]));
                    }
                    r += 4;
                }
                while r < n {
                    let x = mat_row(input, r, inp);
                    let dy_o = d_cur[r * out + o];
                    gb[o] += dy_o;
                    for i in 0..inp {
                        gw_row[i] = gw_row[i] + dy_o * x[i];
                    }
                    r += 1;
                }
            }
            // dX[r] = Σ_o dy[r][o] W[o], folding four weight rows per pass
            ensure_len(d_scratch, n * inp);
            d_scratch.fill(F::zero());
            for r in 0..n {
                let dy = &d_cur[r * out..(r + 1) * out];
                let dx = &mut d_scratch[r * inp..(r + 1) * inp];
                let mut o = 0;
                while o + 4 <= out {
                    let w0 = mat_row(w, o, inp);
                    let w1 = mat_row(w, o + 1, inp);
                    let w2 = mat_row(w, o + 2, inp);
                    let w3 = mat_row(w, o + 3, inp);
                    let dyv = [dy[o], dy[o + 1], dy[o + 2], dy[o + 3]];
                    for i in 0..inp {
                        dx[i] = dx[i]
                            + ((dyv[0] * w0[i] + dyv[1] * w1[i])
                                + (dyv[2] * w2[i] + dyv[3] * w3[i]));
                    }
                    o += 4;
                }
                while o < out {
                    let w_row = mat_row(w, o, inp);
                    let dy_o = dy[o];
                    for i in 0..inp {
                        dx[i] = dx[i] + dy_o * w_row[i];
                    }
                    o += 1;
                }
            }
            core::mem::swap(d_cur, d_scratch);
        }
    }

    /// Accumulate ∂L/∂params into `grad` given ∂L/∂outputs (n × d).
    pub fn backward(&self, trace: &mut ForwardTrace<F>, d_out: &[F], grad: &mut [F]) {
        debug_assert_eq!(grad.len(), self.plan.param_count);
        let ForwardTrace {
            n,
            time_inputs,
            time_pre,
            state_inputs,
            state_pre,
            head_inputs,
            head_pre,
            back_a,
            back_b,
        } = trace;
        let n = *n;
        ensure_len(back_a, d_out.len());
        back_a.copy_from_slice(d_out);
        self.block_backward(&self.plan.head, head_inputs, head_pre, back_a, back_b, grad);
        let te = self.arch.time_embed;
        let se = self.arch.state_embed;
        // Broadcast embedding: its gradient is the sum over batch rows.
        let d_joined = &*back_a;
        let mut d_time = vec![F::zero(); te];
        let mut d_state = vec![F::zero(); n * se];
        for r in 0..n {
            for i in 0..te {
                d_time[i] += d_joined[r * (te + se) + i];
            }
            d_state[r * se..(r + 1) * se]
                .copy_from_slice(&d_joined[r * (te + se) + te..(r + 1) * (te + se)]);
        }
        self.block_backward(&self.plan.state, state_inputs, state_pre, &mut d_state, back_b, grad);
        self.block_backward(&self.plan.time, time_inputs, time_pre, &mut d_time, back_b, grad);
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.arch.dim as u32).to_le_bytes())?;
        w.write_all(&[self.arch.conditioned_on_x0 as u8])?;
        w.write_all(&(self.arch.encode_dim as u32).to_le_bytes())?;
        w.write_all(&(self.arch.time_embed as u32).to_le_bytes())?;
        w.write_all(&(self.arch.state_embed as u32).to_le_bytes())?;
        w.write_all(&self.arch.leaky_slope.to_le_bytes())?;
        for widths in [
            &self.arch.time_hidden,
            &self.arch.state_hidden,
            &self.arch.head_hidden,
        ] {
            w.write_all(&(widths.len() as u32).to_le_bytes())?;
            for width in widths {
                w.write_all(&(*width as u32).to_le_bytes())?;
            }
        }
        w.write_all(&self.init_seed.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidFormat("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::InvalidFormat(format!("unsupported version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let encode_dim = read_u32(r)? as usize;
        let time_embed = read_u32(r)? as usize;
        let state_embed = read_u32(r)? as usize;
        let mut slope_bytes = [0u8; 8];
        r.read_exact(&mut slope_bytes)?;
        let leaky_slope = f64::from_le_bytes(slope_bytes);
        let widths = |r: &mut R| -> Result<Vec<usize>> {
            let count = read_u32(r)? as usize;
            if count > 64 {
                return Err(Error::InvalidFormat("implausible hidden layer count".into()));
            }
            (0..count).map(|_| Ok(read_u32(r)? as usize)).collect()
        };
        let time_hidden = widths(r)?;
        let state_hidden = widths(r)?;
        let head_hidden = widths(r)?;
        let mut seed_bytes = [0u8; 8];
        r.read_exact(&mut seed_bytes)?;
        let init_seed = u64::from_le_bytes(seed_bytes);
        let mut count_bytes = [0u8; 8];
        r.read_exact(&mut count_bytes)?;
        let param_count = u64::from_le_bytes(count_bytes) as usize;
        let arch = Arch {
            dim,
            conditioned_on_x0: flag[0] != 0,
            encode_dim,
            time_hidden,
            time_embed,
            state_hidden,
            state_embed,
            head_hidden,
            leaky_slope,
        };
        arch.validate()?;
        if arch.param_count() != param_count {
            return Err(Error::InvalidFormat(format!(
                "parameter count {} does not match architecture ({})",
                param_count,
                arch.param_count()
            )));
        }
        let mut params = Vec::with_capacity(param_count);
        let mut buf = [0u8; 8];
        for _ in 0..param_count {
            r.read_exact(&mut buf)?;
            params.push(F::cast(f64::from_le_bytes(buf)));
        }
        let plan = Plan::build(&arch);
        Ok(Self {
            arch,
            plan,
            params,
            init_seed,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        Self::read_from(&mut file)
    }
}

const MAGIC: &[u8; 8] = b"SBNETv01";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

impl<F: Scalar> ScoreFunction<F> for ScoreNet<F> {
    fn score(&self, t: F, x: &[F], out: &mut [F]) {
        assert!(
            !self.arch.conditioned_on_x0,
            "conditioned net used as unconditional score; wrap it in ConditionedScore"
        );
        self.forward_batch(t, x, None, out)
            .expect("dimension mismatch in score evaluation");
    }

    fn score_batch(&self, t: F, xs: &[F], _dim: usize, out: &mut [F]) {
        assert!(!self.arch.conditioned_on_x0);
        self.forward_batch(t, xs, None, out)
            .expect("dimension mismatch in score evaluation");
    }
}

/// An amortized net pinned to one initial condition, usable wherever an
/// unconditional score is expected.
pub struct ConditionedScore<'a, F> {
    net: &'a ScoreNet<F>,
    x0: Vec<F>,
}

impl<'a, F: Scalar> ConditionedScore<'a, F> {
    pub fn new(net: &'a ScoreNet<F>, x0: Vec<F>) -> Result<Self> {
        if !net.arch.conditioned_on_x0 {
            return Err(Error::InvalidInput(
                "ConditionedScore needs a net conditioned on x0".into(),
            ));
        }
        if x0.len() != net.arch.dim {
            return Err(Error::InvalidInput("x0 dimension mismatch".into()));
        }
        Ok(Self { net, x0 })
    }
}

impl<F: Scalar> ScoreFunction<F> for ConditionedScore<'_, F> {
    fn score(&self, t: F, x: &[F], out: &mut [F]) {
        self.net
            .forward_batch(t, x, Some(&self.x0), out)
            .expect("dimension mismatch in score evaluation");
    }

    fn score_batch(&self, t: F, xs: &[F], dim: usize, out: &mut [F]) {
        let n = xs.len() / dim;
        let mut x0s = vec![F::zero(); n * dim];
        for r in 0..n {
            x0s[r * dim..(r + 1) * dim].copy_from_slice(&self.x0);
        }
        self.net
            .forward_batch(t, xs, Some(&x0s), out)
            .expect("dimension mismatch in score evaluation");
    }
}

/// Loss and exact reverse-mode parameter gradient of a scalar loss of the
/// net outputs. `loss` receives the n × d outputs and must return the loss
/// value together with ∂loss/∂outputs.
pub fn loss_gradient<F: Scalar, L>(
    net: &ScoreNet<F>,
    t: F,
    xs: &[F],
    x0s: Option<&[F]>,
    loss: L,
) -> Result<(F, Vec<F>)>
where
    L: FnOnce(&[F]) -> (F, Vec<F>),
{
    let mut trace = ForwardTrace::new();
    let out = net.forward_traced(&mut trace, t, xs, x0s)?;
    let (value, d_out) = loss(&out);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            interval: 0,
            path: 0,
        });
    }
    let mut grad = vec![F::zero(); net.params().len()];
    net.backward(&mut trace, &d_out, &mut grad);
    Ok((value, grad))
}

/// Adam hyperparameters. Defaults: learning rate 0.01, momentum 0.99,
/// second momentum 0.999, epsilon 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams<F> {
    pub learning_rate: F,
    pub momentum: F,
    pub second_momentum: F,
    pub epsilon: F,
}

impl<F: Scalar> Default for AdamParams<F> {
    fn default() -> Self {
        Self {
            learning_rate: F::cast(0.01),
            momentum: F::cast(0.99),
            second_momentum: F::cast(0.999),
            epsilon: F::cast(1e-8),
        }
    }
}

/// Optimizer state: first/second moment vectors and the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    first_moment: Vec<F>,
    second_moment: Vec<F>,
    step_count: u64,
    pub hyper: AdamParams<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(param_count: usize, hyper: AdamParams<F>) -> Self {
        Self {
            first_moment: vec![F::zero(); param_count],
            second_moment: vec![F::zero(); param_count],
            step_count: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected adaptive-moment update, in place.
pub fn adam_step<F: Scalar>(params: &mut [F], grad: &[F], state: &mut AdamState<F>) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.first_moment.len());
    state.step_count += 1;
    let h = state.hyper;
    let one = F::one();
    let b1 = h.momentum;
    let b2 = h.second_momentum;
    let c1 = one - b1.powi(state.step_count as i32);
    let c2 = one - b2.powi(state.step_count as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.first_moment[i] = b1 * state.first_moment[i] + (one - b1) * g;
        state.second_moment[i] = b2 * state.second_moment[i] + (one - b2) * g * g;
        let m_hat = state.first_moment[i] / c1;
        let v_hat = state.second_moment[i] / c2;
        params[i] = params[i] - h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
    }
}
