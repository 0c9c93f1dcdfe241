use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::batch::GraphBatch;
use super::config::{ConvKind, ModelConfig};
use super::pna::{pna_aggregate, DegreeTerms};
use crate::error::{Error, Result};
use crate::numeric::{
    Activation, BoundParams, NumericError, ParamId, ParamStore, SeededRng, SegmentKind, Tape, Tensor, Var,
};
use crate::smiles::{EDGE_DIM, NODE_DIM};

type NResult<T> = std::result::Result<T, NumericError>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-limit..limit))
            .collect();
        let weight = self
            .store
            .add(format!("{name}.weight"), Tensor::matrix(fan_in, fan_out, w));
        let bias = bias.then(|| self.store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Linear { weight, bias }
    }

    fn mlp(&mut self, name: &str, dims: &[usize], act: Activation) -> Mlp {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| self.linear(&format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Mlp { layers, act }
    }

    fn norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gain: self.store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }
}

/// `x·W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> NResult<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add_row_vec(y, p.var(b)),
            None => Ok(y),
        }
    }
}

/// Linear stack with the activation between layers and none after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, mut x: Var) -> NResult<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = tape.activation(x, self.act)?;
            }
            x = l.forward(tape, p, x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> NResult<Var> {
        let y = tape.layer_norm(x, LAYER_NORM_EPS)?;
        let y = tape.mul_row_vec(y, p.var(self.gain))?;
        tape.add_row_vec(y, p.var(self.bias))
    }
}

/// One PNA tower: message stack, aggregation, update stack.
#[derive(Clone, Debug)]
pub struct PnaTower {
    pub pre: Mlp,
    pub post: Mlp,
}

/// Inputs shared by the convolutions of one forward pass.
pub struct ConvContext<'a> {
    pub batch: &'a GraphBatch,
    pub edge_features: Var,
    pub terms: DegreeTerms,
    pub gcn_coef: Option<Var>,
}

impl ConvContext<'_> {
    pub fn new<'a>(tape: &mut Tape, cfg: &ModelConfig, batch: &'a GraphBatch) -> Result<ConvContext<'a>> {
        let stats = cfg
            .degree_stats
            .ok_or_else(|| Error::Config("degree_stats must be populated from the training split".into()))?;
        let terms = DegreeTerms::new(tape, &batch.edge_dst, &batch.degrees, &cfg.scalers, &stats);
        let gcn_coef = (cfg.conv_kind == ConvKind::Gcn).then(|| {
            let c = batch
                .edge_src
                .iter()
                .zip(batch.edge_dst.iter())
                .map(|(&j, &i)| 1.0 / (((batch.degrees[i] + 1) * (batch.degrees[j] + 1)) as f64).sqrt())
                .collect();
            tape.constant(Tensor::vector(c))
        });
        Ok(ConvContext {
            batch,
            edge_features: tape.constant(batch.edge_features.clone()),
            terms,
            gcn_coef,
        })
    }
}

impl PnaTower {
    /// `h` is the per-node input (`x ⊕ p`); messages see `[h_i, h_j, e_ji]`
    /// when `with_edges` is set, else `[h_i, h_j]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        h: Var,
        ctx: &ConvContext,
        cfg: &ModelConfig,
        with_edges: bool,
    ) -> NResult<Var> {
        let agg = if ctx.batch.num_edges() == 0 {
            let width = cfg.aggregators.len() * cfg.scalers.len() * self.message_width(p, tape);
            tape.constant(Tensor::zeros(&[ctx.batch.num_nodes(), width]))
        } else {
            let hi = tape.gather_rows(h, &ctx.batch.edge_dst)?;
            let hj = tape.gather_rows(h, &ctx.batch.edge_src)?;
            let input = if with_edges {
                tape.concat(&[hi, hj, ctx.edge_features], 1)?
            } else {
                tape.concat(&[hi, hj], 1)?
            };
            let messages = self.pre.forward(tape, p, input)?;
            pna_aggregate(tape, messages, &ctx.terms, &cfg.aggregators)?
        };
        let u = tape.concat(&[h, agg], 1)?;
        self.post.forward(tape, p, u)
    }

    fn message_width(&self, p: &BoundParams, tape: &Tape) -> usize {
        let last = self.pre.layers.last().expect("non-empty pre stack");
        tape.value(p.var(last.weight)).cols()
    }
}

#[derive(Clone, Debug)]
pub struct GcnConv {
    pub self_lin: Linear,
    pub neighbor_lin: Linear,
}

#[derive(Clone, Debug)]
pub enum FeatureConv {
    Pna { towers: Vec<PnaTower>, mix: Linear },
    Gcn(GcnConv),
}

impl FeatureConv {
    /// Feature-stream update from `h = x ⊕ p` to `[n, hidden]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        h: Var,
        ctx: &ConvContext,
        cfg: &ModelConfig,
    ) -> NResult<Var> {
        match self {
            FeatureConv::Pna { towers, mix } => {
                let outs = towers
                    .iter()
                    .map(|t| t.forward(tape, p, h, ctx, cfg, true))
                    .collect::<NResult<Vec<_>>>()?;
                let cat = if outs.len() == 1 {
                    outs[0]
                } else {
                    tape.concat(&outs, 1)?
                };
                mix.forward(tape, p, cat)
            }
            FeatureConv::Gcn(g) => {
                let own = g.self_lin.forward(tape, p, h)?;
                if ctx.batch.num_edges() == 0 {
                    return Ok(own);
                }
                let coef = ctx.gcn_coef.expect("gcn coefficients");
                let t = g.neighbor_lin.forward(tape, p, h)?;
                let tj = tape.gather_rows(t, &ctx.batch.edge_src)?;
                let weighted = tape.mul_col(tj, coef)?;
                let summed =
                    tape.segment_reduce(weighted, SegmentKind::Sum, &ctx.batch.edge_dst, ctx.batch.num_nodes())?;
                tape.add(own, summed)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        x: Var,
        batch: &GraphBatch,
        cfg: &ModelConfig,
        training: bool,
        rng: &SeededRng,
    ) -> NResult<Var> {
        let q = self.q.forward(tape, p, x)?;
        let k = self.k.forward(tape, p, x)?;
        let v = self.v.forward(tape, p, x)?;
        let a = tape.block_attention(
            q,
            k,
            v,
            &batch.ranges,
            cfg.attention_heads,
            cfg.dropout_attn,
            training,
            rng,
        )?;
        self.out.forward(tape, p, a)
    }
}

#[derive(Clone, Debug)]
pub struct GpsLayer {
    pub conv: FeatureConv,
    pub pe_conv: Option<PnaTower>,
    pub attention: Attention,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

impl GpsLayer {
    /// PE-stream update `P' = residual_weight·P + pna_pe(P)`.
    #[allow(clippy::too_many_arguments)]
    pub fn pe_update(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        pe: Var,
        ctx: &ConvContext,
        cfg: &ModelConfig,
        training: bool,
        rng: &SeededRng,
    ) -> NResult<Var> {
        let tower = self.pe_conv.as_ref().expect("PE stream enabled");
        let y = tower.forward(tape, p, pe, ctx, cfg, false)?;
        let y = tape.activation(y, cfg.activation_pe)?;
        let y = tape.dropout(y, cfg.dropout_pe, training, rng)?;
        let skip = tape.scale(pe, cfg.residual_weight)?;
        tape.add(skip, y)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        x: Var,
        pe: Option<Var>,
        ctx: &ConvContext,
        cfg: &ModelConfig,
        training: bool,
        rng: &SeededRng,
    ) -> NResult<(Var, Option<Var>)> {
        let h = match pe {
            Some(pe) => tape.concat(&[x, pe], 1)?,
            None => x,
        };
        let m = self.conv.forward(tape, p, h, ctx, cfg)?;
        let m = tape.dropout(m, cfg.dropout, training, &rng.fork(1))?;
        let a = self
            .attention
            .forward(tape, p, x, ctx.batch, cfg, training, &rng.fork(2))?;
        let a = tape.dropout(a, cfg.dropout, training, &rng.fork(3))?;
        let skip = tape.scale(x, cfg.residual_weight)?;
        let s = tape.add(skip, m)?;
        let s = tape.add(s, a)?;
        let x1 = self.norm1.forward(tape, p, s)?;
        let f = self.ffn1.forward(tape, p, x1)?;
        let f = tape.activation(f, cfg.activation)?;
        let f = self.ffn2.forward(tape, p, f)?;
        let s2 = tape.add(x1, f)?;
        let x2 = self.norm2.forward(tape, p, s2)?;
        let pe_next = match pe {
            Some(pe) => Some(self.pe_update(tape, p, pe, ctx, cfg, training, &rng.fork(4))?),
            None => None,
        };
        Ok((x2, pe_next))
    }
}

/// Graph-transformer score regressor.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub input_x: Linear,
    pub input_pe: Option<Linear>,
    pub layers: Vec<GpsLayer>,
    pub readout: Mlp,
    /// Predictions are `raw·target_std + target_mean`.
    pub target_mean: f64,
    pub target_std: f64,
}

pub fn build_model(cfg: &ModelConfig, rng: &SeededRng) -> Result<Model> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: rng.generator(),
    };
    let hd = cfg.hidden_dim;
    let k = cfg.pe_dim();
    let td = cfg.tower_dim();
    let blocks = cfg.aggregators.len() * cfg.scalers.len();
    let input_x = init.linear("input.x", NODE_DIM, hd, true);
    let input_pe = cfg.use_rwpe.then(|| init.linear("input.pe", k, k, true));
    let stack = |first: usize, width: usize, depth: usize| {
        let mut dims = vec![first];
        dims.extend(std::iter::repeat_n(width, depth));
        dims
    };
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let name = format!("layer{l}");
        let conv = match cfg.conv_kind {
            ConvKind::Pna => {
                let towers = (0..cfg.towers)
                    .map(|t| PnaTower {
                        pre: init.mlp(
                            &format!("{name}.conv.tower{t}.pre"),
                            &stack(2 * (hd + k) + EDGE_DIM, td, cfg.pre_fc_layers),
                            cfg.activation,
                        ),
                        post: init.mlp(
                            &format!("{name}.conv.tower{t}.post"),
                            &stack(hd + k + blocks * td, td, cfg.post_fc_layers),
                            cfg.activation,
                        ),
                    })
                    .collect();
                let mix = init.linear(&format!("{name}.conv.mix"), hd, hd, true);
                FeatureConv::Pna { towers, mix }
            }
            ConvKind::Gcn => FeatureConv::Gcn(GcnConv {
                self_lin: init.linear(&format!("{name}.conv.self"), hd + k, hd, true),
                neighbor_lin: init.linear(&format!("{name}.conv.neighbor"), hd + k, hd, false),
            }),
        };
        let pe_conv = cfg.use_rwpe.then(|| PnaTower {
            pre: init.mlp(
                &format!("{name}.pe.pre"),
                &stack(2 * k, k, cfg.pre_fc_layers),
                cfg.activation_pe,
            ),
            post: init.mlp(
                &format!("{name}.pe.post"),
                &stack(k + blocks * k, k, cfg.post_fc_layers),
                cfg.activation_pe,
            ),
        });
        let attention = Attention {
            q: init.linear(&format!("{name}.attn.q"), hd, hd, true),
            k: init.linear(&format!("{name}.attn.k"), hd, hd, true),
            v: init.linear(&format!("{name}.attn.v"), hd, hd, true),
            out: init.linear(&format!("{name}.attn.out"), hd, hd, true),
        };
        let norm1 = init.norm(&format!("{name}.norm1"), hd);
        let ffn1 = init.linear(&format!("{name}.ffn.0"), hd, 2 * hd, true);
        let ffn2 = init.linear(&format!("{name}.ffn.1"), 2 * hd, hd, true);
        let norm2 = init.norm(&format!("{name}.norm2"), hd);
        layers.push(GpsLayer {
            conv,
            pe_conv,
            attention,
            norm1,
            norm2,
            ffn1,
            ffn2,
        });
    }
    let mut dims = vec![hd + k];
    dims.extend(&cfg.readout_mlp_dims);
    dims.push(1);
    let readout = init.mlp("readout", &dims, cfg.activation);
    Ok(Model {
        config: cfg.clone(),
        params: store,
        input_x,
        input_pe,
        layers,
        readout,
        target_mean: 0.0,
        target_std: 1.0,
    })
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Collates graphs with the positional encodings this model expects.
    pub fn collate(&self, graphs: &[&crate::smiles::FeaturizedGraph]) -> Result<GraphBatch> {
        GraphBatch::collate(graphs, self.config.use_rwpe.then_some(self.config.rw_length))
    }

    /// Lifts node features and positional encodings to the block inputs.
    pub fn embed(&self, tape: &mut Tape, p: &BoundParams, batch: &GraphBatch) -> Result<(Var, Option<Var>)> {
        let x = tape.constant(batch.node_features.clone());
        let x = self.input_x.forward(tape, p, x)?;
        let pe = match &self.input_pe {
            Some(lin) => {
                let raw = batch
                    .pe
                    .as_ref()
                    .ok_or_else(|| Error::Data("batch has no RWPE but the model requires it".into()))?;
                let raw = tape.constant(raw.clone());
                let y = lin.forward(tape, p, raw)?;
                Some(tape.activation(y, self.config.activation_pe)?)
            }
            None => None,
        };
        Ok((x, pe))
    }

    /// Unscaled per-graph outputs `[G, 1]` in normalized target units.
    pub fn forward_raw(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &GraphBatch,
        training: bool,
        rng: &SeededRng,
    ) -> Result<Var> {
        let ctx = ConvContext::new(tape, &self.config, batch)?;
        let (mut x, mut pe) = self.embed(tape, p, batch)?;
        for (l, layer) in self.layers.iter().enumerate() {
            (x, pe) = layer.forward(tape, p, x, pe, &ctx, &self.config, training, &rng.fork(l as u64))?;
        }
        let h = match pe {
            Some(pe) => tape.concat(&[x, pe], 1)?,
            None => x,
        };
        let pooled = tape.segment_reduce(h, SegmentKind::Mean, &batch.node_graph, batch.num_graphs())?;
        Ok(self.readout.forward(tape, p, pooled)?)
    }

    /// Per-graph predictions `[G, 1]` in score units.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        batch: &GraphBatch,
        training: bool,
        rng: &SeededRng,
    ) -> Result<Var> {
        let raw = self.forward_raw(tape, p, batch, training, rng)?;
        let scaled = tape.scale(raw, self.target_std)?;
        let shift = tape.constant(Tensor::full(&[batch.num_graphs(), 1], self.target_mean));
        Ok(tape.add(scaled, shift)?)
    }

    /// Inference with dropout off and no gradient bookkeeping.
    pub fn predict(&self, batch: &GraphBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &p, batch, false, &SeededRng::new(0))?;
        Ok(tape.value(out).data().to_vec())
    }
}
