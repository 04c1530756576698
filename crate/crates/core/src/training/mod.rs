//! Junction-continuity training of the gradient-derivative network.
//!
//! The trial function is affine in the network outputs, so every stress
//! value the loss needs is compiled once into an offset plus a short list of
//! (query, coefficient) terms, where a query is one network input row
//! (node, time). Loss and gradient then cost one batched forward and one
//! batched backward pass.

pub mod lbfgs;

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generate_random_tree, NodeContext, RandomTreeSpec, SegmentContext, Side, TreeContexts};
use crate::neural::{init_xavier, MlpModel, EXTENDED_INPUTS, OUTPUT_SIZE, STANDARD_INPUTS};
use crate::physics::{scale_problem, MaterialParams, ScalingFactors};
use crate::trial::{h_matrix, initial_gradient, Trial};

pub use lbfgs::{IterRecord, LbfgsConfig, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    PerCase,
    /// Extended inputs (far-end coordinates) for training across many trees.
    Parameterized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Time samples per junction.
    pub n_c: usize,
    /// Observation horizon, s.
    pub t_steady_s: f64,
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub grad_tolerance: f64,
    pub loss_tolerance: f64,
    /// Largest parameter change of the first line-search trial step.
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: TrainingMode,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Number of generated trees in parameterized mode.
    pub n_cases: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_c: 30,
            t_steady_s: 1e8,
            max_iters: 2000,
            lbfgs_memory: 8,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            grad_tolerance: 1e-8,
            loss_tolerance: 1e-10,
            learning_rate: 1e-3,
            seed: 0,
            mode: TrainingMode::PerCase,
            hidden_width: 50,
            hidden_layers: 5,
            n_cases: 1000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 {
            return Err(Error::field("training.n_c", "must be at least 1"));
        }
        if !(self.t_steady_s > 0.0 && self.t_steady_s.is_finite()) {
            return Err(Error::field("training.t_steady_s", "must be positive"));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::field("training.wolfe_c1", "need 0 < c1 < c2 < 1"));
        }
        if !(3..=20).contains(&self.lbfgs_memory) {
            return Err(Error::field("training.lbfgs_memory", "must lie in [3, 20]"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::field("training.learning_rate", "must be positive"));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::field("training.hidden_width", "network needs at least one hidden unit"));
        }
        if self.mode == TrainingMode::Parameterized && self.n_cases == 0 {
            return Err(Error::field("training.n_cases", "must be at least 1"));
        }
        Ok(())
    }

    pub fn extended(&self) -> bool {
        self.mode == TrainingMode::Parameterized
    }

    pub fn n_inputs(&self) -> usize {
        if self.extended() {
            STANDARD_INPUTS + EXTENDED_INPUTS
        } else {
            STANDARD_INPUTS
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        crate::neural::architecture(self.n_inputs(), self.hidden_width, self.hidden_layers)
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            memory: self.lbfgs_memory,
            c1: self.wolfe_c1,
            c2: self.wolfe_c2,
            max_iters: self.max_iters,
            grad_tolerance: self.grad_tolerance,
            loss_tolerance: self.loss_tolerance,
            loss_window: 20,
            initial_step: self.learning_rate,
        }
    }
}

/// Stress at a junction seen from two adjacent incident segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityPair {
    pub junction: usize,
    pub segment_a: usize,
    pub segment_b: usize,
    pub x_a: f64,
    pub x_b: f64,
    /// Time in the units of the contexts.
    pub t: f64,
}

fn end_position(seg: &SegmentContext, node: &NodeContext, slot: usize) -> f64 {
    if node.signs[slot] == Side::Next.sign() {
        seg.length
    } else {
        0.0
    }
}

/// Chained pairs (i₁,i₂), (i₂,i₃), … at every junction, each at the same
/// `n_c` times drawn uniformly from (0, t_steady].
pub fn build_training_set(contexts: &TreeContexts, n_c: usize, t_steady: f64, seed: u64) -> Vec<ContinuityPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for node in contexts.nodes.iter().filter(|n| n.degree > 1) {
        let times: Vec<f64> = (0..n_c).map(|_| t_steady * (1.0 - rng.random::<f64>())).collect();
        for m in 0..node.degree - 1 {
            let (a, b) = (node.segments[m], node.segments[m + 1]);
            let x_a = end_position(&contexts.segments[a], node, m);
            let x_b = end_position(&contexts.segments[b], node, m + 1);
            for &t in &times {
                pairs.push(ContinuityPair {
                    junction: node.node_id,
                    segment_a: a,
                    segment_b: b,
                    x_a,
                    x_b,
                    t,
                });
            }
        }
    }
    pairs
}

/// Network input row for a node at time `t`.
pub fn node_features(ctx: &NodeContext, t: f64, extended: bool) -> Vec<f64> {
    let mut f = Vec::with_capacity(STANDARD_INPUTS + EXTENDED_INPUTS);
    f.push(t);
    f.extend_from_slice(&ctx.coord);
    f.extend_from_slice(&ctx.adj_g);
    if extended {
        for m in 0..4 {
            f.extend_from_slice(&ctx.far_coords[m]);
        }
    }
    f
}

/// A stress value written as `offset + Σ coef · F(query)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineStress {
    pub offset: f64,
    pub terms: Vec<(usize, [f64; OUTPUT_SIZE])>,
}

impl AffineStress {
    fn add_term(&mut self, query: usize, coef: [f64; OUTPUT_SIZE]) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.0 == query) {
            for c in 0..OUTPUT_SIZE {
                t.1[c] += coef[c];
            }
        } else {
            self.terms.push((query, coef));
        }
    }

    pub fn eval(&self, outputs: &Array2<f64>) -> f64 {
        let mut v = self.offset;
        for (q, c) in &self.terms {
            for k in 0..OUTPUT_SIZE {
                v += c[k] * outputs[[*q, k]];
            }
        }
        v
    }
}

/// Deduplicated network queries shared by many affine stresses.
#[derive(Debug, Clone, Default)]
pub struct QueryTable {
    index: HashMap<(usize, usize, u64), usize>,
    rows: Vec<f64>,
    width: usize,
}

impl QueryTable {
    pub fn new(extended: bool) -> Self {
        QueryTable {
            width: if extended { STANDARD_INPUTS + EXTENDED_INPUTS } else { STANDARD_INPUTS },
            ..Default::default()
        }
    }

    fn extended(&self) -> bool {
        self.width > STANDARD_INPUTS
    }

    fn query(&mut self, case: usize, ctx: &NodeContext, t: f64) -> usize {
        let key = (case, ctx.node_id, t.to_bits());
        if let Some(&q) = self.index.get(&key) {
            return q;
        }
        let q = self.index.len();
        self.rows.extend(node_features(ctx, t, self.extended()));
        self.index.insert(key, q);
        q
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn inputs(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.len(), self.width), self.rows.clone()).expect("rows have fixed width")
    }
}

/// Accumulate `sign · σ(x, t)` on `seg` into `out`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_stress(
    trial: &Trial,
    seg: &SegmentContext,
    x: f64,
    t: f64,
    sign: f64,
    case: usize,
    table: &mut QueryTable,
    out: &mut AffineStress,
) -> Result<()> {
    let st = trial.stencil(x, t, seg.length, seg.kappa)?;
    let k_prev = initial_gradient(&seg.ctx_prev)?[seg.slot_prev];
    let k_next = initial_gradient(&seg.ctx_next)?[seg.slot_next];
    out.offset += sign * (st.base_prev * k_prev + st.base_next * k_next);
    if t == 0.0 {
        return Ok(());
    }
    for (ctx, slot, coefs) in [
        (&seg.ctx_prev, seg.slot_prev, &st.coef_prev),
        (&seg.ctx_next, seg.slot_next, &st.coef_next),
    ] {
        if ctx.is_terminal() {
            continue;
        }
        let h = h_matrix(ctx)[slot];
        for (j, &tj) in st.times.iter().enumerate() {
            let q = table.query(case, ctx, tj);
            let c = sign * coefs[j];
            out.add_term(q, [c * h[0], c * h[1], c * h[2]]);
        }
    }
    Ok(())
}

/// The loss of one or more trees, compiled to affine form.
#[derive(Debug, Clone)]
pub struct LossProblem {
    inputs: Array2<f64>,
    residuals: Vec<AffineStress>,
}

impl LossProblem {
    pub fn build(cases: &[(&TreeContexts, &[ContinuityPair])], trial: &Trial, extended: bool) -> Result<Self> {
        let mut table = QueryTable::new(extended);
        let mut residuals = Vec::new();
        for (case, (contexts, pairs)) in cases.iter().enumerate() {
            for p in pairs.iter() {
                let mut r = AffineStress::default();
                accumulate_stress(trial, &contexts.segments[p.segment_a], p.x_a, p.t, 1.0, case, &mut table, &mut r)?;
                accumulate_stress(trial, &contexts.segments[p.segment_b], p.x_b, p.t, -1.0, case, &mut table, &mut r)?;
                residuals.push(r);
            }
        }
        Ok(LossProblem {
            inputs: table.inputs(),
            residuals,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.residuals.len()
    }

    pub fn n_queries(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    /// Per-feature `1 / max |value|` over all queries (1 for all-zero features).
    pub fn input_scale(&self) -> Vec<f64> {
        (0..self.inputs.ncols())
            .map(|c| {
                let m = self.inputs.column(c).fold(0.0f64, |m, v| m.max(v.abs()));
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            })
            .collect()
    }

    fn outputs(&self, model: &MlpModel) -> Result<Option<crate::neural::ForwardCache>> {
        if self.inputs.nrows() == 0 {
            return Ok(None);
        }
        Ok(Some(model.forward_batch(self.inputs.view())?))
    }

    /// Continuity residuals σ_a − σ_b for every pair.
    pub fn residuals(&self, model: &MlpModel) -> Result<Vec<f64>> {
        let cache = self.outputs(model)?;
        let empty = Array2::zeros((0, OUTPUT_SIZE));
        let out = cache.as_ref().map_or(&empty, |c| c.output());
        Ok(self.residuals.iter().map(|r| r.eval(out)).collect())
    }

    /// E = Σ r², without a finiteness check.
    pub fn raw_loss(&self, model: &MlpModel) -> Result<f64> {
        Ok(self.residuals(model)?.iter().map(|r| r * r).sum())
    }

    pub fn loss(&self, model: &MlpModel) -> Result<f64> {
        let e = self.raw_loss(model)?;
        if !e.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss is {e} over {} pairs and {} queries",
                self.n_pairs(),
                self.n_queries()
            )));
        }
        Ok(e)
    }

    /// Loss and exact gradient with respect to the flat parameters.
    pub fn loss_and_gradient(&self, model: &MlpModel) -> Result<(f64, Vec<f64>)> {
        let Some(cache) = self.outputs(model)? else {
            let e: f64 = self.residuals.iter().map(|r| r.offset * r.offset).sum();
            return Ok((e, vec![0.0; model.n_params()]));
        };
        let out = cache.output();
        let mut upstream = Array2::<f64>::zeros(out.dim());
        let mut e = 0.0;
        for r in &self.residuals {
            let v = r.eval(out);
            e += v * v;
            for (q, c) in &r.terms {
                for k in 0..OUTPUT_SIZE {
                    upstream[[*q, k]] += 2.0 * v * c[k];
                }
            }
        }
        let (g, _) = model.backward_batch(&cache, upstream.view())?;
        Ok((e, g))
    }
}

/// E[α] for a single tree.
pub fn loss(model: &MlpModel, pairs: &[ContinuityPair], contexts: &TreeContexts, trial: &Trial) -> Result<f64> {
    let extended = model.n_inputs() > STANDARD_INPUTS;
    LossProblem::build(&[(contexts, pairs)], trial, extended)?.loss(model)
}

/// ∇_α E for a single tree.
pub fn loss_gradient(model: &MlpModel, pairs: &[ContinuityPair], contexts: &TreeContexts, trial: &Trial) -> Result<Vec<f64>> {
    let extended = model.n_inputs() > STANDARD_INPUTS;
    let problem = LossProblem::build(&[(contexts, pairs)], trial, extended)?;
    let (e, g) = problem.loss_and_gradient(model)?;
    if !e.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss is {e}")));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_history: Vec<IterRecord>,
    pub wall_time_s: f64,
    pub stop_reason: StopReason,
    pub n_pairs: usize,
    pub n_queries: usize,
    pub learning_rate: f64,
}

impl TrainReport {
    fn trivial(learning_rate: f64) -> Self {
        TrainReport {
            iterations: 0,
            evaluations: 0,
            initial_loss: 0.0,
            final_loss: 0.0,
            loss_history: vec![],
            wall_time_s: 0.0,
            stop_reason: StopReason::Converged,
            n_pairs: 0,
            n_queries: 0,
            learning_rate,
        }
    }
}

/// Minimize a compiled loss starting from `model`.
///
/// Input scaling is fitted to the training queries before optimization.
pub fn train_problem(mut model: MlpModel, problem: &LossProblem, cfg: &TrainingConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if problem.n_pairs() == 0 {
        return Ok((model, TrainReport::trivial(cfg.learning_rate)));
    }
    if problem.inputs().ncols() != model.n_inputs() {
        return Err(Error::DimensionMismatch {
            expected: problem.inputs().ncols(),
            got: model.n_inputs(),
        });
    }
    model.input_scale = problem.input_scale();
    let start = Instant::now();
    let mut scratch = model.clone();
    let result = lbfgs::minimize(model.params(), &cfg.lbfgs(), |p| {
        scratch.set_params(p)?;
        problem.loss_and_gradient(&scratch)
    })?;
    model.set_params(&result.x)?;
    let report = TrainReport {
        iterations: result.iterations,
        evaluations: result.evaluations,
        initial_loss: result.history[0].loss,
        final_loss: result.loss,
        loss_history: result.history,
        wall_time_s: start.elapsed().as_secs_f64(),
        stop_reason: result.stop_reason,
        n_pairs: problem.n_pairs(),
        n_queries: problem.n_queries(),
        learning_rate: cfg.learning_rate,
    };
    log::info!(
        "trained {} pairs: loss {:.3e} -> {:.3e} in {} iterations ({:?})",
        report.n_pairs,
        report.initial_loss,
        report.final_loss,
        report.iterations,
        report.stop_reason
    );
    Ok((model, report))
}

/// Train on one tree. `contexts` and `t_steady` are in scaled units.
pub fn train(
    model: MlpModel,
    contexts: &TreeContexts,
    t_steady: f64,
    trial: &Trial,
    cfg: &TrainingConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    let pairs = build_training_set(contexts, cfg.n_c, t_steady, cfg.seed);
    let problem = LossProblem::build(&[(contexts, &pairs)], trial, cfg.extended())?;
    train_problem(model, &problem, cfg)
}

/// Scaled contexts of the random trees used in parameterized training.
pub fn parameterized_cases(
    spec: &RandomTreeSpec,
    n_cases: usize,
    material: &MaterialParams,
    factors: &ScalingFactors,
    temperature_k: f64,
) -> Result<Vec<TreeContexts>> {
    (0..n_cases)
        .map(|i| {
            let tree = generate_random_tree(&RandomTreeSpec {
                seed: spec.seed.wrapping_add(i as u64),
                ..spec.clone()
            })?;
            Ok(scale_problem(&tree, material, factors, temperature_k)?.contexts)
        })
        .collect()
}

/// Train one network over many generated trees with extended inputs.
///
/// Case `i` uses tree seed `spec.seed + i` and sampling seed `cfg.seed + i`.
#[allow(clippy::too_many_arguments)]
pub fn train_parameterized(
    model: MlpModel,
    spec: &RandomTreeSpec,
    material: &MaterialParams,
    factors: &ScalingFactors,
    temperature_k: f64,
    trial: &Trial,
    cfg: &TrainingConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if !cfg.extended() {
        return Err(Error::field("training.mode", "parameterized training needs mode = parameterized"));
    }
    let cases = parameterized_cases(spec, cfg.n_cases, material, factors, temperature_k)?;
    let t_steady = factors.time(cfg.t_steady_s);
    let pairs: Vec<Vec<ContinuityPair>> = cases
        .iter()
        .enumerate()
        .map(|(i, c)| build_training_set(c, cfg.n_c, t_steady, cfg.seed.wrapping_add(i as u64)))
        .collect();
    let refs: Vec<(&TreeContexts, &[ContinuityPair])> = cases.iter().zip(&pairs).map(|(c, p)| (c, p.as_slice())).collect();
    let problem = LossProblem::build(&refs, trial, true)?;
    train_problem(model, &problem, cfg)
}

/// Fresh Xavier-initialized model for the configured architecture.
pub fn initial_model(cfg: &TrainingConfig) -> Result<MlpModel> {
    init_xavier(&cfg.layer_sizes(), cfg.seed)
}
