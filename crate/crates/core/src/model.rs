//! The attention temporal graph network.
//!
//! Two stacked TGCN cells process the node-feature sequence. Each cell runs a
//! two-layer graph convolution over the normalized adjacency and feeds the
//! result into GRU gates; the second cell's gates also see the first
//! convolution layer, widening their input to 48 columns at hidden width 16.
//! A temporal attention readout pools the second cell's hidden sequence per
//! node, and a linear head maps the 16 pooled features to the predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::graph::ComposedGraph;
use crate::tensor::Tensor2;

pub const IN_FEATURES: usize = 8;
pub const HIDDEN: usize = 16;

/// What the second cell's GRU gates consume alongside the hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateStyle {
    /// Both convolution layers: gate input width `3 * hidden` (48).
    WideContext,
    /// Only the final convolution layer, like the first cell (32).
    ConvOnly,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub in_features: usize,
    pub hidden: usize,
    /// Number of simultaneous predictions the head emits.
    pub horizon: usize,
    pub seq_len: usize,
    pub cell2_gates: GateStyle,
}

impl ModelConfig {
    pub fn new(n_nodes: usize, seq_len: usize, horizon: usize) -> Self {
        Self {
            n_nodes,
            in_features: IN_FEATURES,
            hidden: HIDDEN,
            horizon,
            seq_len,
            cell2_gates: GateStyle::WideContext,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.horizon == 0 || self.seq_len == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Gate input width of a cell: the convolution context plus the hidden
    /// state.
    fn gate_width(&self, cell: usize) -> usize {
        match (cell, self.cell2_gates) {
            (1, _) | (2, GateStyle::ConvOnly) => 2 * self.hidden,
            (2, GateStyle::WideContext) => 3 * self.hidden,
            _ => unreachable!("cells are numbered 1 and 2"),
        }
    }
}

pub struct A3tGcn {
    cfg: ModelConfig,
}

impl A3tGcn {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// (name, rows, cols, is_bias) for every parameter, in creation order.
    fn param_specs(&self) -> Vec<(String, usize, usize, bool)> {
        let c = &self.cfg;
        let mut specs = Vec::new();
        for cell in [1usize, 2] {
            let f_in = if cell == 1 { c.in_features } else { c.hidden };
            let g = c.gate_width(cell);
            specs.push((format!("tgcn{cell}.gcn1.weight"), f_in, c.hidden, false));
            specs.push((format!("tgcn{cell}.gcn2.weight"), c.hidden, c.hidden, false));
            for gate in ["lin_u", "lin_r", "lin_c"] {
                specs.push((format!("tgcn{cell}.{gate}.weight"), g, c.hidden, false));
                specs.push((format!("tgcn{cell}.{gate}.bias"), 1, c.hidden, true));
            }
        }
        specs.push(("attention.proj.weight".into(), c.hidden, c.hidden, false));
        specs.push(("attention.proj.bias".into(), 1, c.hidden, true));
        specs.push(("attention.score".into(), c.hidden, 1, false));
        specs.push(("head.weight".into(), c.hidden, c.horizon, false));
        specs.push(("head.bias".into(), 1, c.horizon, true));
        specs
    }

    /// Glorot-uniform weights, zero biases, fully determined by the seed.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, rows, cols, bias) in self.param_specs() {
            let tensor = if bias {
                Tensor2::zeros(rows, cols)
            } else {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
            };
            store.insert(&name, tensor).expect("spec names are unique");
        }
        store
    }

    /// Registers every parameter on the tape once; the returned handles are
    /// reused across all samples of a batch so gradients accumulate.
    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> Result<BoundModel> {
        let cell = |tape: &mut Tape, idx: usize| -> Result<BoundCell> {
            Ok(BoundCell {
                gcn1_w: tape.param(store, &format!("tgcn{idx}.gcn1.weight"))?,
                gcn2_w: tape.param(store, &format!("tgcn{idx}.gcn2.weight"))?,
                update_w: tape.param(store, &format!("tgcn{idx}.lin_u.weight"))?,
                update_b: tape.param(store, &format!("tgcn{idx}.lin_u.bias"))?,
                reset_w: tape.param(store, &format!("tgcn{idx}.lin_r.weight"))?,
                reset_b: tape.param(store, &format!("tgcn{idx}.lin_r.bias"))?,
                cand_w: tape.param(store, &format!("tgcn{idx}.lin_c.weight"))?,
                cand_b: tape.param(store, &format!("tgcn{idx}.lin_c.bias"))?,
            })
        };
        Ok(BoundModel {
            cfg: self.cfg,
            cell1: cell(tape, 1)?,
            cell2: cell(tape, 2)?,
            attn: BoundAttention {
                proj_w: tape.param(store, "attention.proj.weight")?,
                proj_b: tape.param(store, "attention.proj.bias")?,
                score_v: tape.param(store, "attention.score")?,
            },
            head_w: tape.param(store, "head.weight")?,
            head_b: tape.param(store, "head.bias")?,
        })
    }

    /// Layer listing in the spirit of a module string representation.
    pub fn describe(&self) -> String {
        let c = &self.cfg;
        let mut out = String::new();
        out.push_str("A3TGCN(\n");
        for cell in [1usize, 2] {
            let f_in = if cell == 1 { c.in_features } else { c.hidden };
            let g = c.gate_width(cell);
            out.push_str(&format!("  (tgcn{cell}): TGCNCell(\n"));
            out.push_str(&format!("    (gcn1): GCNConv({f_in} -> {})\n", c.hidden));
            out.push_str(&format!("    (gcn2): GCNConv({} -> {})\n", c.hidden, c.hidden));
            for gate in ["lin_u", "lin_r", "lin_c"] {
                out.push_str(&format!("    ({gate}): Linear({g} -> {})\n", c.hidden));
            }
            out.push_str("  )\n");
        }
        out.push_str(&format!(
            "  (attention): TemporalAttention(proj: {h} -> {h}, score: {h} -> 1)\n",
            h = c.hidden
        ));
        out.push_str(&format!("  (head): Linear({} -> {})\n", c.hidden, c.horizon));
        out.push_str(")\n");
        let n_params: usize = self
            .param_specs()
            .iter()
            .map(|(_, r, c, _)| r * c)
            .sum();
        out.push_str(&format!(
            "nodes: {}, sequence length: {}, horizon: {}, trainable scalars: {}\n",
            c.n_nodes, c.seq_len, c.horizon, n_params
        ));
        out
    }
}

#[derive(Clone, Copy)]
pub struct BoundCell {
    pub gcn1_w: NodeId,
    pub gcn2_w: NodeId,
    pub update_w: NodeId,
    pub update_b: NodeId,
    pub reset_w: NodeId,
    pub reset_b: NodeId,
    pub cand_w: NodeId,
    pub cand_b: NodeId,
}

#[derive(Clone, Copy)]
pub struct BoundAttention {
    pub proj_w: NodeId,
    pub proj_b: NodeId,
    pub score_v: NodeId,
}

pub struct BoundModel {
    cfg: ModelConfig,
    pub cell1: BoundCell,
    pub cell2: BoundCell,
    pub attn: BoundAttention,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

/// Two ReLU graph-convolution layers over the normalized operator:
/// `layer1 = relu(A x W1)`, `layer2 = relu(A layer1 W2)`.
pub fn gcn_two_layer(
    tape: &mut Tape,
    adjacency: NodeId,
    x: NodeId,
    w1: NodeId,
    w2: NodeId,
) -> Result<(NodeId, NodeId)> {
    let agg1 = tape.matmul(adjacency, x)?;
    let lin1 = tape.matmul(agg1, w1)?;
    let layer1 = tape.relu(lin1);
    let agg2 = tape.matmul(adjacency, layer1)?;
    let lin2 = tape.matmul(agg2, w2)?;
    let layer2 = tape.relu(lin2);
    Ok((layer1, layer2))
}

/// One GRU step over graph-convolved context.
///
/// `conv_parts` is the convolution context the gates see ([layer2] for the
/// first cell, [layer1, layer2] for the wide second cell). The candidate
/// applies the reset gate to the hidden state only:
///
/// ```text
/// u  = sigmoid([ctx | h] Wu + bu)
/// r  = sigmoid([ctx | h] Wr + br)
/// c  = tanh([ctx | r .* h] Wc + bc)
/// h' = u .* h + (1 - u) .* c
/// ```
pub fn tgcn_cell_step(
    tape: &mut Tape,
    conv_parts: &[NodeId],
    h: NodeId,
    cell: &BoundCell,
) -> Result<NodeId> {
    let mut gate_in_parts = conv_parts.to_vec();
    gate_in_parts.push(h);
    let gate_in = tape.concat_cols(&gate_in_parts)?;

    let u_lin = tape.matmul(gate_in, cell.update_w)?;
    let u_lin = tape.add_row_bias(u_lin, cell.update_b)?;
    let update = tape.sigmoid(u_lin);

    let r_lin = tape.matmul(gate_in, cell.reset_w)?;
    let r_lin = tape.add_row_bias(r_lin, cell.reset_b)?;
    let reset = tape.sigmoid(r_lin);

    let gated_h = tape.hadamard(reset, h)?;
    let mut cand_parts = conv_parts.to_vec();
    cand_parts.push(gated_h);
    let cand_in = tape.concat_cols(&cand_parts)?;
    let c_lin = tape.matmul(cand_in, cell.cand_w)?;
    let c_lin = tape.add_row_bias(c_lin, cell.cand_b)?;
    let candidate = tape.tanh(c_lin);

    let keep = tape.hadamard(update, h)?;
    let blend_gate = tape.one_minus(update);
    let blend = tape.hadamard(blend_gate, candidate)?;
    tape.add(keep, blend)
}

/// Temporal attention over a hidden-state sequence, per node:
/// `score_t = tanh(H_t W + b) v`, weights softmaxed over timesteps, context
/// is the weight-blended sum of the states.
pub fn attention_pool(
    tape: &mut Tape,
    hidden_seq: &[NodeId],
    attn: &BoundAttention,
) -> Result<NodeId> {
    if hidden_seq.is_empty() {
        return Err(Error::EmptySequence("attention over zero states".into()));
    }
    let mut scores = Vec::with_capacity(hidden_seq.len());
    for &h in hidden_seq {
        let proj = tape.matmul(h, attn.proj_w)?;
        let proj = tape.add_row_bias(proj, attn.proj_b)?;
        let act = tape.tanh(proj);
        scores.push(tape.matmul(act, attn.score_v)?); // N x 1 per step
    }
    let stacked = tape.concat_cols(&scores)?; // N x T
    let by_step = tape.transpose(stacked); // T x N
    let weights = tape.softmax_cols(by_step); // per node over timesteps
    let by_node = tape.transpose(weights); // N x T

    let mut context: Option<NodeId> = None;
    for (t, &h) in hidden_seq.iter().enumerate() {
        let w_t = tape.slice_cols(by_node, t, t + 1)?;
        let term = tape.scale_rows(h, w_t)?;
        context = Some(match context {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(context.expect("nonempty sequence"))
}

/// Full forward pass: first cell unrolled over the inputs, second cell over
/// the first's hidden sequence, attention pooling, linear head.
/// Returns the `n_nodes x horizon` prediction node.
pub fn forward(
    tape: &mut Tape,
    bound: &BoundModel,
    adjacency: NodeId,
    x_seq: &[NodeId],
) -> Result<NodeId> {
    let cfg = &bound.cfg;
    if x_seq.len() != cfg.seq_len {
        return Err(Error::ShapeError(format!(
            "expected {} input steps, got {}",
            cfg.seq_len,
            x_seq.len()
        )));
    }
    for &x in x_seq {
        let shape = tape.value(x).shape();
        if shape != (cfg.n_nodes, cfg.in_features) {
            return Err(Error::ShapeError(format!(
                "input step is {shape:?}, expected ({}, {})",
                cfg.n_nodes, cfg.in_features
            )));
        }
    }

    let mut h1 = tape.constant(Tensor2::zeros(cfg.n_nodes, cfg.hidden));
    let mut seq1 = Vec::with_capacity(x_seq.len());
    for &x in x_seq {
        let (_, layer2) = gcn_two_layer(tape, adjacency, x, bound.cell1.gcn1_w, bound.cell1.gcn2_w)?;
        h1 = tgcn_cell_step(tape, &[layer2], h1, &bound.cell1)?;
        seq1.push(h1);
    }

    let mut h2 = tape.constant(Tensor2::zeros(cfg.n_nodes, cfg.hidden));
    let mut seq2 = Vec::with_capacity(seq1.len());
    for &x in &seq1 {
        let (layer1, layer2) =
            gcn_two_layer(tape, adjacency, x, bound.cell2.gcn1_w, bound.cell2.gcn2_w)?;
        let parts: Vec<NodeId> = match cfg.cell2_gates {
            GateStyle::WideContext => vec![layer1, layer2],
            GateStyle::ConvOnly => vec![layer2],
        };
        h2 = tgcn_cell_step(tape, &parts, h2, &bound.cell2)?;
        seq2.push(h2);
    }

    let context = attention_pool(tape, &seq2, &bound.attn)?;
    let out = tape.matmul(context, bound.head_w)?;
    tape.add_row_bias(out, bound.head_b)
}

/// Convenience inference entry point: fresh tape, no gradients.
pub fn predict(
    model: &A3tGcn,
    store: &ParameterStore,
    graph: &ComposedGraph,
    x_seq: &[Tensor2],
) -> Result<Tensor2> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, store)?;
    let adj = tape.constant(graph.normalized.clone());
    let xs: Vec<NodeId> = x_seq.iter().map(|x| tape.constant(x.clone())).collect();
    let pred = forward(&mut tape, &bound, adj, &xs)?;
    Ok(tape.value(pred).clone())
}
