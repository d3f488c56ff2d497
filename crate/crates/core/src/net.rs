//! Encoder, pointing decoder and value head over a 2-opt search state.
//!
//! A state is the pair (current tour, best tour so far). Each tour is encoded
//! by an embedding, a stack of residual graph convolutions over normalized
//! edge weights and a bidirectional LSTM that reads the nodes in tour order.
//! The decoder picks the two positions of a 2-opt move with two rounds of
//! masked pointing attention.

use std::collections::HashMap;

use rand::Rng as _;

use crate::env::SearchState;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};
use crate::tsp::{Instance, Move, Tour};

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Embedding width; must be even.
    pub d: usize,
    /// Number of graph convolution layers.
    pub layers: usize,
    /// Pointing scores are squashed into `[-clip, clip]`.
    pub clip: f64,
    pub use_gcn: bool,
    /// Without the LSTM the tour embeddings are the node embeddings and the
    /// tour summary is their mean.
    pub use_lstm: bool,
    pub use_bidirectional: bool,
    pub use_best_solution: bool,
    pub share_encoders: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d: 128,
            layers: 3,
            clip: 10.0,
            use_gcn: true,
            use_lstm: true,
            use_bidirectional: true,
            use_best_solution: true,
            share_encoders: false,
        }
    }
}

impl NetConfig {
    pub fn new(d: usize, layers: usize) -> Self {
        Self {
            d,
            layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return Err(Error::Config(format!("d must be positive and even, got {}", self.d)));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }

    /// Number of independent encoder stacks.
    pub fn encoder_count(&self) -> usize {
        if self.use_best_solution && !self.share_encoders {
            2
        } else {
            1
        }
    }

    /// Ablation switches packed into a bit set (checkpoint header).
    pub fn flag_bits(&self) -> u32 {
        [
            self.use_gcn,
            self.use_lstm,
            self.use_bidirectional,
            self.use_best_solution,
            self.share_encoders,
        ]
        .iter()
        .enumerate()
        .fold(0, |acc, (k, &on)| acc | (u32::from(on) << k))
    }

    pub fn set_flag_bits(&mut self, bits: u32) {
        let on = |k: u32| bits & (1 << k) != 0;
        self.use_gcn = on(0);
        self.use_lstm = on(1);
        self.use_bidirectional = on(2);
        self.use_best_solution = on(3);
        self.share_encoders = on(4);
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Zero tensors matching every parameter, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(Tensor::zeros_like).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Clone, Debug)]
struct LstmIds {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Clone, Debug)]
struct SeqIds {
    fwd: LstmIds,
    bwd: Option<LstmIds>,
    w_f: usize,
    b_f: usize,
    w_b: Option<usize>,
    b_b: Option<usize>,
}

#[derive(Clone, Debug)]
struct EncoderIds {
    w_x: usize,
    b_x: usize,
    gcn: Vec<(usize, usize)>,
    seq: Option<SeqIds>,
}

#[derive(Clone, Debug)]
struct Layout {
    entries: Vec<(String, Vec<usize>, f64)>,
    encoders: Vec<EncoderIds>,
    w_s: usize,
    b_s: usize,
    w_s2: usize,
    b_s2: usize,
    w_q: usize,
    b_q: usize,
    w_o: usize,
    b_o: usize,
    o0: usize,
    key: usize,
    query: usize,
    v: usize,
    w_z: usize,
    b_z: usize,
    w_r: usize,
    b_r: usize,
    w_v: usize,
    b_v: usize,
    w_v2: usize,
    b_v2: usize,
}

struct LayoutBuilder {
    entries: Vec<(String, Vec<usize>, f64)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, bound: f64) -> usize {
        self.entries.push((name, shape, bound));
        self.entries.len() - 1
    }

    /// Weight `out × inp` and bias `out`, both `U(±1/√inp)`.
    fn linear(&mut self, prefix: &str, out: usize, inp: usize) -> (usize, usize) {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = self.add(format!("{prefix}.weight"), vec![out, inp], bound);
        let b = self.add(format!("{prefix}.bias"), vec![out], bound);
        (w, b)
    }

    fn lstm(&mut self, prefix: &str, d: usize) -> LstmIds {
        let bound = 1.0 / (d as f64).sqrt();
        LstmIds {
            w_ih: self.add(format!("{prefix}.w_ih"), vec![4 * d, d], bound),
            w_hh: self.add(format!("{prefix}.w_hh"), vec![4 * d, d], bound),
            b_ih: self.add(format!("{prefix}.b_ih"), vec![4 * d], bound),
            b_hh: self.add(format!("{prefix}.b_hh"), vec![4 * d], bound),
        }
    }
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let d = cfg.d;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut b = LayoutBuilder { entries: Vec::new() };
        let mut encoders = Vec::new();
        for e in 0..cfg.encoder_count() {
            let p = format!("enc{e}");
            let (w_x, b_x) = b.linear(&format!("{p}.embed"), d, 2);
            let gcn = if cfg.use_gcn {
                (0..cfg.layers).map(|l| b.linear(&format!("{p}.gcn{l}"), d, d)).collect()
            } else {
                Vec::new()
            };
            let seq = cfg.use_lstm.then(|| {
                let fwd = b.lstm(&format!("{p}.lstm_fwd"), d);
                let bwd = cfg.use_bidirectional.then(|| b.lstm(&format!("{p}.lstm_bwd"), d));
                let (w_f, b_f) = b.linear(&format!("{p}.out_fwd"), d, d);
                let (w_b, b_b) = if cfg.use_bidirectional {
                    let (w, bb) = b.linear(&format!("{p}.out_bwd"), d, d);
                    (Some(w), Some(bb))
                } else {
                    (None, None)
                };
                SeqIds {
                    fwd,
                    bwd,
                    w_f,
                    b_f,
                    w_b,
                    b_b,
                }
            });
            encoders.push(EncoderIds { w_x, b_x, gcn, seq });
        }
        let (w_s, b_s) = b.linear("dec.tour", d / 2, d);
        let (w_s2, b_s2) = b.linear("dec.best", d / 2, d);
        let (w_q, b_q) = b.linear("dec.query", d, d);
        let (w_o, b_o) = b.linear("dec.prev", d, d);
        let o0 = b.add("dec.o0".into(), vec![d], inv_sqrt_d);
        let key = b.add("dec.key".into(), vec![d, d], inv_sqrt_d);
        let query = b.add("dec.qproj".into(), vec![d, d], inv_sqrt_d);
        let v = b.add("dec.v".into(), vec![d], inv_sqrt_d);
        let (w_z, b_z) = b.linear("val.hidden", d, d);
        let (w_r, b_r) = b.linear("val.out", 1, d);
        let (w_v, b_v) = b.linear("val.tour", d / 2, d);
        let (w_v2, b_v2) = b.linear("val.best", d / 2, d);
        Self {
            entries: b.entries,
            encoders,
            w_s,
            b_s,
            w_s2,
            b_s2,
            w_q,
            b_q,
            w_o,
            b_o,
            o0,
            key,
            query,
            v,
            w_z,
            b_z,
            w_r,
            b_r,
            w_v,
            b_v,
            w_v2,
            b_v2,
        }
    }
}

/// Fresh parameters: every entry `U(±1/√fan_in)`, LSTM tensors, `o₀` and `v`
/// with fan-in `d`. Deterministic per seed.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = rng::stream(seed, 0);
    let mut names = Vec::with_capacity(layout.entries.len());
    let mut tensors = Vec::with_capacity(layout.entries.len());
    for (name, shape, bound) in &layout.entries {
        let count: usize = shape.iter().product();
        let data = (0..count).map(|_| rng.gen_range(-bound..=*bound)).collect();
        names.push(name.clone());
        tensors.push(Tensor::new(shape.clone(), data)?);
    }
    ModelParams::from_parts(names, tensors)
}

/// Configuration, layout and parameters bundled for evaluation.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    config: NetConfig,
    layout: Layout,
    params: ModelParams,
}

impl PolicyNet {
    pub fn new(config: NetConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if layout.entries.len() != params.len() {
            return Err(Error::Config(format!(
                "configuration expects {} tensors, got {}",
                layout.entries.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pname, t)) in layout.entries.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "expected tensor {name} {shape:?}, found {pname} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// A tape bound to a network, with each parameter entered at most once.
pub struct Ctx<'a> {
    pub g: Graph<'a>,
    net: &'a PolicyNet,
    vars: HashMap<usize, Var>,
    // tour-independent nodes keyed by (instance address, tag)
    memo: HashMap<(usize, usize), Var>,
}

impl<'a> Ctx<'a> {
    pub fn new(net: &'a PolicyNet) -> Self {
        Self {
            g: Graph::new(),
            net,
            vars: HashMap::new(),
            memo: HashMap::new(),
        }
    }

    pub fn net(&self) -> &'a PolicyNet {
        self.net
    }

    fn p(&mut self, id: usize) -> Var {
        if let Some(&v) = self.vars.get(&id) {
            return v;
        }
        let v = self.g.param(&self.net.params.tensors[id], id);
        self.vars.insert(id, v);
        v
    }

    /// `x Wᵀ + b`.
    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var> {
        let (wv, bv) = (self.p(w), self.p(b));
        let y = self.g.matmul_bt(x, wv)?;
        self.g.add(y, bv)
    }

    /// Backpropagates from a scalar and adds parameter gradients into `out`.
    pub fn backward_into(&self, root: Var, out: &mut [Tensor]) -> Result<()> {
        let grads = self.g.backward(root)?;
        self.g.accumulate_param_grads(&grads, out);
        Ok(())
    }
}

/// Node-ordered embedding `x W_xᵀ + b_x` of the policy-facing coordinates.
pub fn embed(ctx: &mut Ctx<'_>, encoder: usize, instance: &Instance) -> Result<Var> {
    let ids = &ctx.net.layout.encoders[encoder];
    let (w, b) = (ids.w_x, ids.b_x);
    let coords: Vec<f64> = instance.features().iter().flat_map(|p| [p[0], p[1]]).collect();
    let x = ctx.g.leaf(Tensor::matrix(instance.len(), 2, coords)?);
    ctx.linear(x, w, b)
}

/// Residual graph convolutions over a dense `n × n` edge weight matrix with
/// zero diagonal; rows of `x` and `edges` share one ordering.
pub fn gcn_forward(ctx: &mut Ctx<'_>, encoder: usize, x: Var, edges: &[f64]) -> Result<Var> {
    let n = ctx.g.value(x).rows();
    if edges.len() != n * n {
        return Err(Error::Shape {
            op: "gcn_forward",
            detail: format!("{} edge weights for {n} nodes", edges.len()),
        });
    }
    let layers = ctx.net.layout.encoders[encoder].gcn.clone();
    if layers.is_empty() {
        return Ok(x);
    }
    let e = ctx.g.leaf(Tensor::matrix(n, n, edges.to_vec())?);
    let mut h = x;
    for (w, b) in layers {
        let msg = ctx.linear(h, w, b)?;
        let agg = ctx.g.matmul(e, msg)?;
        let act = ctx.g.relu(agg);
        h = ctx.g.add(h, act)?;
    }
    Ok(h)
}

fn lstm_cell(ctx: &mut Ctx<'_>, ids: &LstmIds, x_proj: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let d = ctx.net.config.d;
    let b_hh = ctx.p(ids.b_hh);
    let mut gates = ctx.g.add(x_proj, b_hh)?;
    let c_prev = match state {
        Some((h, c)) => {
            let w_hh = ctx.p(ids.w_hh);
            let rec = ctx.g.matmul_bt(h, w_hh)?;
            gates = ctx.g.add(gates, rec)?;
            c
        }
        None => ctx.g.leaf(Tensor::vector(vec![0.0; d])),
    };
    let hc = ctx.g.lstm_cell(gates, c_prev)?;
    Ok((ctx.g.slice_cols(hc, 0, d)?, ctx.g.slice_cols(hc, d, d)?))
}

/// Runs one LSTM over the rows of `z` taken in `order`. The initial state is
/// the cell applied to the first or last of those rows from a zero state.
fn lstm_scan(ctx: &mut Ctx<'_>, ids: &LstmIds, z: Var, order: &[usize], forward: bool, key: Option<usize>) -> Result<Vec<Var>> {
    let n = order.len();
    let proj = match key.and_then(|k| ctx.memo.get(&(k, ids.w_ih)).copied()) {
        Some(v) => v,
        None => {
            let (w_ih, b_ih) = (ctx.p(ids.w_ih), ctx.p(ids.b_ih));
            let xw = ctx.g.matmul_bt(z, w_ih)?;
            let v = ctx.g.add(xw, b_ih)?;
            if let Some(k) = key {
                ctx.memo.insert((k, ids.w_ih), v);
            }
            v
        }
    };
    let init_row = if forward { order[n - 1] } else { order[0] };
    let first = ctx.g.row(proj, init_row)?;
    let mut state = lstm_cell(ctx, ids, first, None)?;
    let mut hs = vec![state.0; n];
    let positions: Vec<usize> = if forward { (0..n).collect() } else { (0..n).rev().collect() };
    for pos in positions {
        let xr = ctx.g.row(proj, order[pos])?;
        state = lstm_cell(ctx, ids, xr, Some(state))?;
        hs[pos] = state.0;
    }
    Ok(hs)
}

/// Tour-ordered sequence encoding: per-position outputs `o` (`n × d`) and the
/// tour summary `h_n`.
pub fn sequence_encode(ctx: &mut Ctx<'_>, encoder: usize, z: Var) -> Result<(Var, Var)> {
    let order: Vec<usize> = (0..ctx.g.value(z).rows()).collect();
    encode_in_order(ctx, encoder, z, &order, None)
}

/// Sequence encoding of the rows of `z_nodes` visited in `order`. With a `key`
/// the input projections are shared by every call on the same tape.
fn encode_in_order(ctx: &mut Ctx<'_>, encoder: usize, z_nodes: Var, order: &[usize], key: Option<usize>) -> Result<(Var, Var)> {
    let Some(seq) = ctx.net.layout.encoders[encoder].seq.clone() else {
        let z = ctx.g.gather_rows(z_nodes, order)?;
        let mean = ctx.g.mean_axis(z, 0)?;
        return Ok((z, mean));
    };
    let n = order.len();
    let fwd = lstm_scan(ctx, &seq.fwd, z_nodes, order, true, key)?;
    let hf = ctx.g.stack_rows(&fwd)?;
    let mut pre = ctx.linear(hf, seq.w_f, seq.b_f)?;
    let mut h_n = fwd[n - 1];
    if let (Some(bwd_ids), Some(w_b), Some(b_b)) = (&seq.bwd, seq.w_b, seq.b_b) {
        let bwd = lstm_scan(ctx, bwd_ids, z_nodes, order, false, key)?;
        let hb = ctx.g.stack_rows(&bwd)?;
        let pb = ctx.linear(hb, w_b, b_b)?;
        pre = ctx.g.add(pre, pb)?;
        h_n = ctx.g.add(h_n, bwd[n - 1])?;
    }
    let o = ctx.g.tanh(pre);
    Ok((o, h_n))
}

/// Graph variables describing one search state.
#[derive(Clone, Copy, Debug)]
pub struct StateEncoding {
    /// Node embeddings of the current tour's encoder, node order.
    pub z: Var,
    /// Tour-position embeddings of the current tour.
    pub o: Var,
    pub h_n: Var,
    /// Summary of the best tour (equal to `h_n` when the best tour is ignored).
    pub h_best: Var,
    pub z_g: Var,
    pub q0: Var,
    pub n: usize,
}

fn instance_key(instance: &Instance) -> usize {
    instance.features().as_ptr() as usize
}

fn tour_encoding(ctx: &mut Ctx<'_>, encoder: usize, z_nodes: Var, instance: &Instance, tour: &Tour) -> Result<(Var, Var)> {
    encode_in_order(ctx, encoder, z_nodes, tour.order(), Some(instance_key(instance)))
}

fn node_features(ctx: &mut Ctx<'_>, encoder: usize, instance: &Instance) -> Result<Var> {
    let key = (instance_key(instance), usize::MAX - encoder);
    if let Some(&z) = ctx.memo.get(&key) {
        return Ok(z);
    }
    let x = embed(ctx, encoder, instance)?;
    let z = gcn_forward(ctx, encoder, x, instance.norm_edges())?;
    ctx.memo.insert(key, z);
    Ok(z)
}

pub fn encode_state(ctx: &mut Ctx<'_>, instance: &Instance, state: &SearchState) -> Result<StateEncoding> {
    let n = instance.len();
    if state.current.len() != n || state.best.len() != n {
        return Err(Error::InvalidInput(format!(
            "state tours of {} and {} nodes for an instance of {n}",
            state.current.len(),
            state.best.len()
        )));
    }
    let cfg = ctx.net.config.clone();
    let z = node_features(ctx, 0, instance)?;
    let (o, h_n) = tour_encoding(ctx, 0, z, instance, &state.current)?;
    let h_best = if !cfg.use_best_solution {
        h_n
    } else if cfg.share_encoders {
        tour_encoding(ctx, 0, z, instance, &state.best)?.1
    } else {
        let z2 = node_features(ctx, 1, instance)?;
        tour_encoding(ctx, 1, z2, instance, &state.best)?.1
    };
    let l = ctx.net.layout.clone();
    let a = ctx.linear(h_n, l.w_s, l.b_s)?;
    let b = ctx.linear(h_best, l.w_s2, l.b_s2)?;
    let h_s = ctx.g.concat_cols(&[a, b])?;
    let z_g = ctx.g.max_axis(z, 0)?;
    let q0 = ctx.g.add(h_s, z_g)?;
    Ok(StateEncoding {
        z,
        o,
        h_n,
        h_best,
        z_g,
        q0,
        n,
    })
}

/// How the decoder turns distributions into a move.
pub enum DecodeMode<'r> {
    Sample(&'r mut rng::Rng),
    Greedy,
    /// Scores a given move (used to recompute log-probabilities for training).
    Forced(Move),
}

/// Decoder output. `probs` holds both step distributions over positions.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub mv: Move,
    pub log_prob: Var,
    pub entropy: Var,
    pub probs: [Vec<f64>; 2],
    pub masks: [Vec<bool>; 2],
}

struct StepOut {
    pick: usize,
    log_prob: Var,
    entropy: Var,
    probs: Vec<f64>,
}

fn choose(probs: &[f64], mask: &[bool], mode: &mut DecodeMode<'_>, forced: Option<usize>) -> usize {
    match mode {
        DecodeMode::Forced(_) => forced.expect("forced index"),
        DecodeMode::Greedy => {
            let mut best = None;
            for (k, (&p, &m)) in probs.iter().zip(mask).enumerate() {
                if !m && best.is_none_or(|b: usize| p > probs[b]) {
                    best = Some(k);
                }
            }
            best.expect("nonempty support")
        }
        DecodeMode::Sample(r) => {
            let u: f64 = r.gen();
            let mut acc = 0.0;
            let mut last = None;
            for (k, (&p, &m)) in probs.iter().zip(mask).enumerate() {
                if m {
                    continue;
                }
                acc += p;
                last = Some(k);
                if u < acc {
                    return k;
                }
            }
            last.expect("nonempty support")
        }
    }
}

fn pointing_step(
    ctx: &mut Ctx<'_>,
    keys: Var,
    q: Var,
    mask: &[bool],
    mode: &mut DecodeMode<'_>,
    forced: Option<usize>,
) -> Result<StepOut> {
    let l = &ctx.net.layout;
    let (qid, vid) = (l.query, l.v);
    let clip = ctx.net.config.clip;
    let qw = ctx.p(qid);
    let qq = ctx.g.matmul_bt(q, qw)?;
    let s = ctx.g.add(keys, qq)?;
    let t = ctx.g.tanh(s);
    let v = ctx.p(vid);
    let u = ctx.g.matmul_bt(t, v)?;
    let tu = ctx.g.tanh(u);
    let logits = ctx.g.scale(tu, clip);
    let logp = ctx.g.masked_log_softmax(logits, mask)?;
    let p = ctx.g.masked_softmax(logits, mask)?;
    let keep = ctx.g.leaf(Tensor::matrix(
        mask.len(),
        1,
        mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect(),
    )?);
    let lm = ctx.g.mul(logp, keep)?;
    let plp = ctx.g.mul(p, lm)?;
    let s = ctx.g.sum(plp);
    let entropy = ctx.g.scale(s, -1.0);
    let probs = ctx.g.value(p).data().to_vec();
    let pick = choose(&probs, mask, mode, forced);
    let log_prob = ctx.g.pick(logp, pick)?;
    Ok(StepOut {
        pick,
        log_prob,
        entropy,
        probs,
    })
}

fn query_update(ctx: &mut Ctx<'_>, q: Var, prev: Var) -> Result<Var> {
    let l = ctx.net.layout.clone();
    let a = ctx.linear(q, l.w_q, l.b_q)?;
    let b = ctx.linear(prev, l.w_o, l.b_o)?;
    let s = ctx.g.add(a, b)?;
    Ok(ctx.g.tanh(s))
}

/// Picks positions `a₁ < a₂` with two masked pointing rounds.
pub fn policy_decode(ctx: &mut Ctx<'_>, enc: &StateEncoding, mut mode: DecodeMode<'_>) -> Result<Decoded> {
    let n = enc.n;
    let forced = match &mode {
        DecodeMode::Forced(mv) => {
            if mv.j >= n || mv.i >= mv.j {
                return Err(Error::InvalidInput(format!("move ({}, {}) for {n} nodes", mv.i, mv.j)));
            }
            Some(*mv)
        }
        _ => None,
    };
    let kid = ctx.net.layout.key;
    let o0id = ctx.net.layout.o0;
    let kw = ctx.p(kid);
    let keys = ctx.g.matmul_bt(enc.o, kw)?;

    let o0 = ctx.p(o0id);
    let q1 = query_update(ctx, enc.q0, o0)?;
    let mask1: Vec<bool> = (0..n).map(|j| j == n - 1).collect();
    let s1 = pointing_step(ctx, keys, q1, &mask1, &mut mode, forced.map(|m| m.i))?;

    let o_prev = ctx.g.row(enc.o, s1.pick)?;
    let q2 = query_update(ctx, q1, o_prev)?;
    let mask2: Vec<bool> = (0..n).map(|j| j <= s1.pick).collect();
    let s2 = pointing_step(ctx, keys, q2, &mask2, &mut mode, forced.map(|m| m.j))?;

    let log_prob = ctx.g.add(s1.log_prob, s2.log_prob)?;
    let entropy = ctx.g.add(s1.entropy, s2.entropy)?;
    Ok(Decoded {
        mv: Move { i: s1.pick, j: s2.pick },
        log_prob,
        entropy,
        probs: [s1.probs, s2.probs],
        masks: [mask1, mask2],
    })
}

/// State value from mean-pooled node embeddings plus projected tour summaries.
pub fn value_estimate(ctx: &mut Ctx<'_>, enc: &StateEncoding) -> Result<Var> {
    let l = ctx.net.layout.clone();
    let a = ctx.linear(enc.h_n, l.w_v, l.b_v)?;
    let b = ctx.linear(enc.h_best, l.w_v2, l.b_v2)?;
    let h_v = ctx.g.concat_cols(&[a, b])?;
    let mean = ctx.g.mean_axis(enc.z, 0)?;
    let x = ctx.g.add(mean, h_v)?;
    let hidden = ctx.linear(x, l.w_z, l.b_z)?;
    let act = ctx.g.relu(hidden);
    ctx.linear(act, l.w_r, l.b_r)
}

/// Full forward pass for one state.
#[derive(Clone, Debug)]
pub struct Forward {
    pub decoded: Decoded,
    pub value: Var,
}

pub fn forward(ctx: &mut Ctx<'_>, instance: &Instance, state: &SearchState, mode: DecodeMode<'_>) -> Result<Forward> {
    let enc = encode_state(ctx, instance, state)?;
    let decoded = policy_decode(ctx, &enc, mode)?;
    let value = value_estimate(ctx, &enc)?;
    Ok(Forward { decoded, value })
}
