//! Stochastic-gradient minimization of the penalized dual objective
//!
//! ```text
//! Σ_j ∫ h_j dμ_j  +  a  +  ∫ β_γ(f − Σ_j e_j·h_j∘π_j − a) dθ
//! ```
//!
//! over the networks `h_j`, free scalars and the constant `a`, plus the
//! estimators derived from a trained hedge: the dual value (mean
//! objective over the final report window), the primal value
//! `∫ f·β'_γ(f−ĥ) dθ` induced by the approximate optimizer
//! `dμ̂/dθ = β'_γ(f−ĥ)`, duality-gap bounds, and the reference-measure
//! update that reweights `θ` by those same weights.
//!
//! Every expectation is replaced by a fresh Monte-Carlo batch each
//! iteration; batch evaluation is single-threaded and deterministic
//! given the config seed, so identical configs reproduce identical
//! reports bit for bit. Distinct solves are independent and may run on
//! separate threads.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::batch::PointBatch;
use crate::error::{Error, Result};
use crate::measures::{SamplingMeasure, WeightFunction};
use crate::network::{
    self, Activation, AdamConfig, AdamState, BatchCache, NetworkSpec,
};
use crate::penalty::PenaltySpec;
use crate::problems::{
    build_portfolio_inner, portfolio_theta_correlated, HedgeFunction, Integrator,
    ProblemSpec, Projection, TermFunction,
};
use crate::rng;

const STREAM_INIT_SCAN: u64 = 0;
const STREAM_THETA: u64 = 1;
const STREAM_MU0_BASE: u64 = 16;
const CONSTANT_INIT_SCAN: usize = 4096;
const CONSTANT_INIT_MARGIN: f64 = 0.01;
const REFERENCE_SCAN_SAMPLES: usize = 1_000_000;
const EVAL_CHUNK: usize = 8192;

/// Hidden width of a term network, either scaled by the input
/// dimension or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenSize {
    /// `hidden = factor · input_dim`.
    Scaled(usize),
    Fixed(usize),
}

/// Architecture template applied to hedging terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub layers: usize,
    pub hidden: HiddenSize,
    pub activation: Activation,
    pub clamp_box: Option<f64>,
}

impl Default for NetworkShape {
    /// Five affine maps (four hidden activations) of width `64·d`.
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: HiddenSize::Scaled(64),
            activation: Activation::ReLU,
            clamp_box: None,
        }
    }
}

impl NetworkShape {
    pub fn compact(layers: usize, hidden: usize) -> Self {
        Self {
            layers,
            hidden: HiddenSize::Fixed(hidden),
            activation: Activation::ReLU,
            clamp_box: None,
        }
    }

    pub fn to_spec(&self, input_dim: usize) -> NetworkSpec {
        let hidden_dim = match self.hidden {
            HiddenSize::Scaled(factor) => factor * input_dim.max(1),
            HiddenSize::Fixed(n) => n,
        };
        NetworkSpec {
            layers: self.layers,
            input_dim,
            hidden_dim,
            activation: self.activation,
            clamp_box: self.clamp_box,
        }
    }
}

/// Training configuration of one solve.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Fraction of final iterations averaged into the dual value.
    pub report_window_fraction: f64,
    pub seed: u64,
    pub penalty: PenaltySpec,
    /// Architecture for every network term…
    pub network: NetworkShape,
    /// …with optional per-term overrides (term index → shape).
    pub network_overrides: BTreeMap<usize, NetworkShape>,
    pub adam: AdamConfig,
    /// Abort once the running objective mean exceeds this magnitude…
    pub divergence_ceiling: f64,
    /// …but only after this many iterations.
    pub divergence_grace: usize,
    /// Trace thinning; `None` keeps every iteration up to 10⁵ and every
    /// tenth beyond.
    pub trace_stride: Option<usize>,
    /// Sample count of the post-training primal estimate.
    pub primal_samples: usize,
}

impl TrainConfig {
    pub fn new(penalty: PenaltySpec) -> Self {
        Self {
            iterations: 20_000,
            batch_size: 256,
            report_window_fraction: 0.05,
            seed: 0,
            penalty,
            network: NetworkShape::default(),
            network_overrides: BTreeMap::new(),
            adam: AdamConfig::default(),
            divergence_ceiling: 1e6,
            divergence_grace: 500,
            trace_stride: None,
            primal_samples: 1 << 17,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.batch_size < 1 {
            return Err(Error::InvalidSpec(
                "iterations and batch size must be at least 1".into(),
            ));
        }
        if !(self.report_window_fraction > 0.0 && self.report_window_fraction <= 1.0) {
            return Err(Error::InvalidSpec(
                "report window fraction must lie in (0, 1]".into(),
            ));
        }
        self.penalty.validate()
    }

    fn stride(&self) -> usize {
        self.trace_stride
            .unwrap_or(if self.iterations <= 100_000 { 1 } else { 10 })
            .max(1)
    }

    /// Stable digest of the numeric configuration (FNV-1a).
    pub fn digest(&self) -> u64 {
        fn fold(h: &mut u64, x: u64) {
            *h ^= x;
            *h = h.wrapping_mul(0x1000_0000_01b3);
        }
        fn fold_shape(h: &mut u64, s: &NetworkShape) {
            fold(h, s.layers as u64);
            match s.hidden {
                HiddenSize::Scaled(k) => {
                    fold(h, 3);
                    fold(h, k as u64);
                }
                HiddenSize::Fixed(k) => {
                    fold(h, 4);
                    fold(h, k as u64);
                }
            }
            fold(
                h,
                match s.activation {
                    Activation::ReLU => 5,
                    Activation::ClampedReLU => 6,
                },
            );
            fold(h, s.clamp_box.map_or(0, f64::to_bits));
        }
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        fold(&mut h, self.iterations as u64);
        fold(&mut h, self.batch_size as u64);
        fold(&mut h, self.report_window_fraction.to_bits());
        fold(&mut h, self.seed);
        fold(&mut h, self.penalty.gamma.to_bits());
        match self.penalty.family {
            crate::penalty::PenaltyFamily::Exponential => fold(&mut h, 1),
            crate::penalty::PenaltyFamily::Power(p) => {
                fold(&mut h, 2);
                fold(&mut h, p.to_bits());
            }
        }
        fold_shape(&mut h, &self.network);
        for (k, s) in &self.network_overrides {
            fold(&mut h, *k as u64);
            fold_shape(&mut h, s);
        }
        fold(&mut h, self.adam.learning_rate.to_bits());
        fold(&mut h, self.adam.beta1.to_bits());
        fold(&mut h, self.adam.beta2.to_bits());
        fold(&mut h, self.adam.epsilon.to_bits());
        fold(&mut h, self.divergence_ceiling.to_bits());
        fold(&mut h, self.divergence_grace as u64);
        fold(&mut h, self.stride() as u64);
        fold(&mut h, self.primal_samples as u64);
        h
    }
}

/// Objective values recorded during training, possibly thinned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub stride: usize,
    pub objectives: Vec<f64>,
}

impl TrainingTrace {
    /// `(iteration, objective)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.objectives.iter().enumerate().map(|(i, v)| (i * self.stride, *v))
    }
}

/// Everything a solve produces.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Mean objective over the final report window.
    pub dual_value: f64,
    /// `∫ f·β'_γ(f−ĥ) dθ` estimate from the trained hedge.
    pub primal_value: Option<f64>,
    /// Mean of the optimizer weights `β'_γ(f−ĥ)` over `θ`; close to 1
    /// at convergence because constants belong to the hedging space.
    pub weight_normalization: f64,
    pub trace: TrainingTrace,
    /// Trained networks, free scalars and constant.
    pub hedge: HedgeFunction,
    pub config_digest: u64,
    /// Filled when the `std` feature provides a clock.
    pub wall_time: Option<core::time::Duration>,
}

/// Per-term scratch buffers shared by objective and gradient passes.
struct TermScratch {
    input: PointBatch,
    cache: BatchCache,
    mu_cache: BatchCache,
    mult: Vec<f64>,
}

impl TermScratch {
    fn for_terms(spec: &ProblemSpec) -> Vec<TermScratch> {
        spec.hedging
            .terms
            .iter()
            .map(|t| TermScratch {
                input: PointBatch::new(t.projection.dim().max(1)),
                cache: BatchCache::default(),
                mu_cache: BatchCache::default(),
                mult: Vec::new(),
            })
            .collect()
    }
}

/// Evaluates `h` on a batch, filling `out_h` and leaving per-term
/// forward caches in `scratch` for a following backward pass. An empty
/// `mult` buffer encodes a constant multiplier of one.
fn hedge_values(
    spec: &ProblemSpec,
    hedge: &HedgeFunction,
    batch: &PointBatch,
    scratch: &mut [TermScratch],
    out_h: &mut Vec<f64>,
) -> Result<()> {
    let n = batch.len();
    out_h.clear();
    out_h.resize(n, hedge.constant);
    for ((term, function), ts) in
        spec.hedging.terms.iter().zip(&hedge.terms).zip(scratch.iter_mut())
    {
        ts.mult.clear();
        if !term.multiplier.is_one() {
            ts.mult.extend(batch.rows().map(|row| term.multiplier.eval(row)));
        }
        match (function, &term.projection) {
            (TermFunction::FreeScalar(v), _) => {
                if ts.mult.is_empty() {
                    for h in out_h.iter_mut() {
                        *h += v;
                    }
                } else {
                    for (h, e) in out_h.iter_mut().zip(&ts.mult) {
                        *h += e * v;
                    }
                }
            }
            (TermFunction::Network { spec: net, params }, Projection::Coords(coords)) => {
                batch.gather_columns(coords, &mut ts.input);
                network::forward_batch(net, params, &ts.input, &mut ts.cache)?;
                let outputs = ts.cache.output();
                if ts.mult.is_empty() {
                    for (h, y) in out_h.iter_mut().zip(outputs) {
                        *h += y;
                    }
                } else {
                    for ((h, y), e) in out_h.iter_mut().zip(outputs).zip(&ts.mult) {
                        *h += e * y;
                    }
                }
            }
            (TermFunction::Network { .. }, Projection::Scalar) => {
                return Err(Error::InvalidSpec(
                    "scalar projection cannot feed a network".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Monte-Carlo objective on explicit batches: marginal-term means plus
/// the constant plus the mean penalty on the `θ` batch. `mu0_batches`
/// runs parallel to the hedging terms (`None` for zero-integrator
/// terms). Deterministic given the batches.
pub fn objective(
    spec: &ProblemSpec,
    penalty: &PenaltySpec,
    hedge: &HedgeFunction,
    theta_batch: &PointBatch,
    mu0_batches: &[Option<PointBatch>],
) -> Result<f64> {
    spec.validate()?;
    penalty.validate()?;
    if theta_batch.is_empty() {
        return Err(Error::InvalidSpec("objective needs a nonempty theta batch".into()));
    }
    if mu0_batches.len() != spec.hedging.terms.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.hedging.terms.len(),
            got: mu0_batches.len(),
        });
    }
    let mut scratch = TermScratch::for_terms(spec);
    let mut hvals = Vec::new();
    hedge_values(spec, hedge, theta_batch, &mut scratch, &mut hvals)?;

    let mut total = hedge.constant;
    for ((term, function), batch) in
        spec.hedging.terms.iter().zip(&hedge.terms).zip(mu0_batches)
    {
        if !matches!(term.integrator, Integrator::Marginal(_)) {
            continue;
        }
        let Some(batch) = batch else {
            return Err(Error::InvalidSpec(
                "marginal-integrated term is missing its batch".into(),
            ));
        };
        let TermFunction::Network { spec: net, params } = function else {
            return Err(Error::InvalidSpec(
                "marginal-integrated terms must carry a network".into(),
            ));
        };
        let mut cache = BatchCache::default();
        network::forward_batch(net, params, batch, &mut cache)?;
        total += cache.output().iter().sum::<f64>() / batch.len() as f64;
    }

    let mut pen = 0.0;
    for (row, h) in theta_batch.rows().zip(&hvals) {
        pen += penalty.beta_raw(spec.cost.eval(row) - h);
    }
    total += pen / theta_batch.len() as f64;
    if !total.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(total)
}

/// Builds the initial hedge: freshly initialized networks, zero
/// scalars, and the constant set to the scanned maximum of `f` over
/// `θ` plus a small margin, so the penalty starts inactive and training
/// descends smoothly for every penalty family and factor.
fn initial_hedge(spec: &ProblemSpec, cfg: &TrainConfig) -> Result<HedgeFunction> {
    let mut terms = Vec::with_capacity(spec.hedging.terms.len());
    for (j, term) in spec.hedging.terms.iter().enumerate() {
        match &term.projection {
            Projection::Scalar => terms.push(TermFunction::FreeScalar(0.0)),
            Projection::Coords(coords) => {
                let shape = cfg.network_overrides.get(&j).unwrap_or(&cfg.network);
                let net_spec = shape.to_spec(coords.len());
                net_spec.validate()?;
                let params =
                    network::init_params(&net_spec, rng::derive_seed(cfg.seed, 100 + j as u64));
                terms.push(TermFunction::Network { spec: net_spec, params });
            }
        }
    }

    let mut rng = rng::stream_rng(cfg.seed, STREAM_INIT_SCAN);
    let scan = spec.theta.sample_with(CONSTANT_INIT_SCAN, &mut rng)?;
    let mut max_f = f64::NEG_INFINITY;
    for row in scan.rows() {
        let v = spec.cost.eval(row);
        if !v.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        max_f = max_f.max(v);
    }
    Ok(HedgeFunction { terms, constant: max_f + CONSTANT_INIT_MARGIN })
}

/// Runs the training loop and returns the full report.
///
/// Aborts with [`Error::Diverged`] when the running objective mean
/// leaves the configured ceiling after the grace period — the typical
/// symptom of martingale marginals out of convex order or a sampling
/// measure under which the constraint set is unreachable.
pub fn solve(spec: &ProblemSpec, cfg: &TrainConfig) -> Result<SolveReport> {
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();

    spec.validate()?;
    cfg.validate()?;
    let batch = cfg.batch_size;
    let stride = cfg.stride();
    let mut hedge = initial_hedge(spec, cfg)?;

    // One Adam state per trainable block; Adam is elementwise, so
    // block-wise states match a single concatenated state exactly.
    let mut adam_terms: Vec<Option<AdamState>> = hedge
        .terms
        .iter()
        .map(|t| match t {
            TermFunction::Network { params, .. } => {
                Some(AdamState::new(params.flat().len(), cfg.adam))
            }
            TermFunction::FreeScalar(_) => Some(AdamState::new(1, cfg.adam)),
        })
        .collect();
    let mut adam_constant = AdamState::new(1, cfg.adam);

    let mut grads: Vec<Vec<f64>> = hedge
        .terms
        .iter()
        .map(|t| match t {
            TermFunction::Network { params, .. } => vec![0.0; params.flat().len()],
            TermFunction::FreeScalar(_) => vec![0.0; 1],
        })
        .collect();

    let mut scratch = TermScratch::for_terms(spec);
    let mut theta_rng = rng::stream_rng(cfg.seed, STREAM_THETA);
    let mut mu0_rngs: Vec<_> = (0..spec.hedging.terms.len())
        .map(|j| rng::stream_rng(cfg.seed, STREAM_MU0_BASE + j as u64))
        .collect();

    let mut hvals: Vec<f64> = Vec::new();
    let mut fvals: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut upstream: Vec<f64> = Vec::new();
    let ones_upstream = vec![1.0 / batch as f64; batch];
    let mut mu_batches: Vec<Option<PointBatch>> =
        spec.hedging
            .terms
            .iter()
            .map(|t| match &t.integrator {
                Integrator::Marginal(m) => Some(PointBatch::new(m.dim())),
                Integrator::Zero => None,
            })
            .collect();

    let mut trace = Vec::with_capacity(cfg.iterations / stride + 1);
    let window = cfg.divergence_grace.max(1);
    let mut recent = VecDeque::with_capacity(window);
    let mut recent_sum = 0.0;

    for iteration in 0..cfg.iterations {
        let theta_batch = spec.theta.sample_with(batch, &mut theta_rng)?;
        fvals.clear();
        fvals.extend(theta_batch.rows().map(|row| spec.cost.eval(row)));
        hedge_values(spec, &hedge, &theta_batch, &mut scratch, &mut hvals)?;

        let mut penalty_sum = 0.0;
        weights.clear();
        for (f, h) in fvals.iter().zip(&hvals) {
            let r = f - h;
            penalty_sum += cfg.penalty.beta_raw(r);
            weights.push(cfg.penalty.beta_prime_raw(r));
        }

        // Marginal-term batches and their means.
        let mut mu0_mean_total = 0.0;
        for (j, term) in spec.hedging.terms.iter().enumerate() {
            let Integrator::Marginal(measure) = &term.integrator else {
                continue;
            };
            let TermFunction::Network { spec: net, params } = &hedge.terms[j] else {
                return Err(Error::InvalidSpec(
                    "marginal-integrated terms must carry a network".into(),
                ));
            };
            let mb = measure.sample_with(batch, &mut mu0_rngs[j])?;
            network::forward_batch(net, params, &mb, &mut scratch[j].mu_cache)?;
            mu0_mean_total +=
                scratch[j].mu_cache.output().iter().sum::<f64>() / batch as f64;
            mu_batches[j] = Some(mb);
        }

        let objective_value = mu0_mean_total + hedge.constant + penalty_sum / batch as f64;
        if !objective_value.is_finite() {
            return Err(Error::NonFiniteObjective { iteration });
        }
        if iteration % stride == 0 {
            trace.push(objective_value);
        }
        recent.push_back(objective_value);
        recent_sum += objective_value;
        if recent.len() > window {
            recent_sum -= recent.pop_front().unwrap();
        }
        if iteration + 1 >= cfg.divergence_grace {
            let running = recent_sum / recent.len() as f64;
            if running.abs() > cfg.divergence_ceiling {
                return Err(Error::Diverged {
                    iteration,
                    value: running,
                    ceiling: cfg.divergence_ceiling,
                });
            }
        }

        // Gradients and updates, term by term.
        let inv_b = 1.0 / batch as f64;
        let weight_mean = weights.iter().sum::<f64>() * inv_b;
        for (j, term) in spec.hedging.terms.iter().enumerate() {
            let ts = &mut scratch[j];
            match &mut hedge.terms[j] {
                TermFunction::Network { spec: net, params } => {
                    let grad = &mut grads[j];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    upstream.clear();
                    if ts.mult.is_empty() {
                        upstream.extend(weights.iter().map(|w| -w * inv_b));
                    } else {
                        upstream.extend(
                            weights.iter().zip(&ts.mult).map(|(w, e)| -w * e * inv_b),
                        );
                    }
                    network::backward_with_cache(
                        net, params, &ts.input, &mut ts.cache, &upstream, 1.0, grad,
                    )?;
                    if let Integrator::Marginal(_) = term.integrator {
                        let mb = mu_batches[j].as_ref().expect("sampled above");
                        network::backward_with_cache(
                            net,
                            params,
                            mb,
                            &mut ts.mu_cache,
                            &ones_upstream,
                            1.0,
                            grad,
                        )?;
                    }
                    let adam = adam_terms[j].as_mut().expect("network term state");
                    network::adam_step(adam, params.flat_mut(), grad, net.clamp_box);
                }
                TermFunction::FreeScalar(value) => {
                    // dObj/dλ = −mean(w·e); zero integrator contributes nothing.
                    let g = if ts.mult.is_empty() {
                        -weight_mean
                    } else {
                        -weights.iter().zip(&ts.mult).map(|(w, e)| w * e).sum::<f64>() * inv_b
                    };
                    let adam = adam_terms[j].as_mut().expect("scalar term state");
                    let mut slot = [*value];
                    network::adam_step(adam, &mut slot, &[g], None);
                    *value = slot[0];
                }
            }
        }
        let grad_a = 1.0 - weight_mean;
        let mut slot = [hedge.constant];
        network::adam_step(&mut adam_constant, &mut slot, &[grad_a], None);
        hedge.constant = slot[0];
    }

    let trace = TrainingTrace { stride, objectives: trace };
    let dual_value = report_window_mean(&trace, cfg.iterations, cfg.report_window_fraction);
    let (primal, weight_normalization) = primal_value(
        spec,
        &cfg.penalty,
        &hedge,
        cfg.primal_samples,
        rng::derive_seed(cfg.seed, 0x7072_696d),
    )?;

    Ok(SolveReport {
        dual_value,
        primal_value: Some(primal),
        weight_normalization,
        trace,
        hedge,
        config_digest: cfg.digest(),
        #[cfg(feature = "std")]
        wall_time: Some(started.elapsed()),
        #[cfg(not(feature = "std"))]
        wall_time: None,
    })
}

fn report_window_mean(trace: &TrainingTrace, iterations: usize, fraction: f64) -> f64 {
    let window = ((iterations as f64 * fraction).round() as usize).max(1);
    let start = iterations.saturating_sub(window);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (it, v) in trace.iter() {
        if it >= start {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        *trace.objectives.last().expect("nonempty trace")
    } else {
        sum / count as f64
    }
}

/// Estimates `(∫ f·w dθ, ∫ w dθ)` with `w = β'_γ(f − ĥ)`: the primal
/// value under the approximate optimizer and its mass normalization.
pub fn primal_value(
    spec: &ProblemSpec,
    penalty: &PenaltySpec,
    hedge: &HedgeFunction,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(Error::InvalidSpec("primal estimate needs n >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut scratch = TermScratch::for_terms(spec);
    let mut hvals = Vec::new();
    let mut value_sum = 0.0;
    let mut weight_sum = 0.0;
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(EVAL_CHUNK);
        let batch = spec.theta.sample_with(take, &mut rng)?;
        hedge_values(spec, hedge, &batch, &mut scratch, &mut hvals)?;
        for (row, h) in batch.rows().zip(&hvals) {
            let f = spec.cost.eval(row);
            let w = penalty.beta_prime_raw(f - h);
            value_sum += f * w;
            weight_sum += w;
        }
        remaining -= take;
    }
    Ok((value_sum / n as f64, weight_sum / n as f64))
}

/// Monte-Carlo estimate of the conjugate penalization term
/// `(1/γ)∫ β*(ratio) dθ` for a candidate density `ratio = dμ/dθ`.
/// Together with `β(0)/γ` this brackets the unpenalized value around
/// the dual value.
pub fn gap_bound(
    penalty: &PenaltySpec,
    ratio: &WeightFunction,
    theta: &SamplingMeasure,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidSpec("gap bound needs n >= 1".into()));
    }
    penalty.validate()?;
    theta.validate()?;
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(EVAL_CHUNK);
        let batch = theta.sample_with(take, &mut rng)?;
        for r in ratio.eval_batch(&batch) {
            total += penalty.beta_conjugate(r)?;
        }
        remaining -= take;
    }
    Ok(total / n as f64)
}

/// A reweighted sampling measure together with the envelope diagnostics
/// from the scan that sized it.
#[derive(Debug, Clone)]
pub struct ImportanceWeightedMeasure {
    /// `Reweighted { base: θ, weight: β'_γ(f−ĥ), bound }`.
    pub measure: SamplingMeasure,
    pub observed_max_weight: f64,
}

/// Builds the updated reference measure `dν*/dθ = β'_γ(f − ĥ)` from a
/// trained hedge. Replacing `θ` by `ν*` can only shrink the
/// penalization error, at the price of acceptance-rejection sampling.
///
/// The envelope defaults to 1.2 times the maximum weight observed over
/// a million-sample scan of `θ`.
pub fn update_reference(
    spec: &ProblemSpec,
    penalty: &PenaltySpec,
    hedge: &HedgeFunction,
    envelope_bound: Option<f64>,
    seed: u64,
) -> Result<ImportanceWeightedMeasure> {
    spec.validate()?;
    penalty.validate()?;
    let weight = optimizer_weight(spec, penalty, hedge);

    let mut observed_max = 0.0f64;
    let mut rng = rng::seeded(seed);
    let mut remaining = REFERENCE_SCAN_SAMPLES;
    while remaining > 0 {
        let take = remaining.min(EVAL_CHUNK * 4);
        let batch = spec.theta.sample_with(take, &mut rng)?;
        for w in weight.eval_batch(&batch) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidSpec(alloc::format!(
                    "optimizer weight produced an invalid value {w}"
                )));
            }
            observed_max = observed_max.max(w);
        }
        remaining -= take;
    }
    let bound = envelope_bound.unwrap_or(1.2 * observed_max);
    if bound <= 0.0 {
        return Err(Error::InvalidSpec(
            "reweighting envelope collapsed to zero (weights vanish everywhere)".into(),
        ));
    }
    Ok(ImportanceWeightedMeasure {
        measure: SamplingMeasure::Reweighted {
            base: alloc::boxed::Box::new(spec.theta.clone()),
            weight,
            bound,
        },
        observed_max_weight: observed_max,
    })
}

/// The optimizer density factor `x ↦ β'_γ(f(x) − ĥ(x))` as a batch
/// evaluator.
pub fn optimizer_weight(
    spec: &ProblemSpec,
    penalty: &PenaltySpec,
    hedge: &HedgeFunction,
) -> WeightFunction {
    let spec = spec.clone();
    let penalty = *penalty;
    let hedge = hedge.clone();
    WeightFunction::new(move |batch: &PointBatch| {
        let mut scratch = TermScratch::for_terms(&spec);
        let mut hvals = Vec::new();
        hedge_values(&spec, &hedge, batch, &mut scratch, &mut hvals)
            .expect("hedge evaluation on sampled batch");
        batch
            .rows()
            .zip(&hvals)
            .map(|(row, h)| penalty.beta_prime_raw(spec.cost.eval(row) - h))
            .collect()
    })
}

/// Which sampling measure the portfolio runs use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioReference {
    /// Product of the marginals.
    Product,
    /// Half product, half perfectly correlated mass.
    Correlated,
}

/// Worst-case utility curve over portfolio weights.
#[derive(Debug, Clone)]
pub struct PortfolioCurve {
    pub reference: PortfolioReference,
    /// `(x, worst-case utility)` per grid point.
    pub points: Vec<(f64, f64)>,
    /// The maximizing grid point.
    pub best: (f64, f64),
    pub reports: Vec<SolveReport>,
}

/// One inner solve per grid weight (independent seeds derived from the
/// config seed); the utility is the negated solver value.
pub fn portfolio_outer(
    lambda: f64,
    x_grid: &[f64],
    cfg: &TrainConfig,
    reference: PortfolioReference,
) -> Result<PortfolioCurve> {
    if x_grid.is_empty() {
        return Err(Error::InvalidSpec("portfolio grid is empty".into()));
    }
    let mut points = Vec::with_capacity(x_grid.len());
    let mut reports = Vec::with_capacity(x_grid.len());
    for (i, &x) in x_grid.iter().enumerate() {
        let mut spec = build_portfolio_inner(x, lambda)?;
        if reference == PortfolioReference::Correlated {
            spec.theta = portfolio_theta_correlated();
        }
        let mut run_cfg = cfg.clone();
        run_cfg.seed = rng::derive_seed(cfg.seed, i as u64);
        let report = solve(&spec, &run_cfg)?;
        points.push((x, -report.dual_value));
        reports.push(report);
    }
    let best = points
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty grid");
    Ok(PortfolioCurve { reference, points, best, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::SamplingMeasure;
    use crate::problems::{build_mmot, build_threshold, CostFunction};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn std_uniform() -> SamplingMeasure {
        SamplingMeasure::uniform_1d(0.0, 1.0)
    }

    fn constant_hedge(spec: &ProblemSpec, a: f64) -> HedgeFunction {
        HedgeFunction::zero_networks(&spec.hedging, |_| NetworkSpec::new(1, 1, 2), a)
    }

    fn small_cfg(penalty: PenaltySpec) -> TrainConfig {
        let mut cfg = TrainConfig::new(penalty);
        cfg.iterations = 400;
        cfg.batch_size = 32;
        cfg.network = NetworkShape::compact(1, 8);
        cfg.primal_samples = 4096;
        cfg
    }

    #[test]
    fn objective_dominating_constant_embeds_no_penalty() {
        // h ≡ a = sup f: the power penalty vanishes exactly.
        let spec = build_threshold(vec![std_uniform(), std_uniform()], 1.5).unwrap();
        let hedge = constant_hedge(&spec, 1.0);
        let theta = spec.theta.sample(512, 1).unwrap();
        let mu: Vec<Option<PointBatch>> = spec
            .hedging
            .terms
            .iter()
            .map(|t| match &t.integrator {
                crate::problems::Integrator::Marginal(m) => Some(m.sample(512, 2).unwrap()),
                _ => None,
            })
            .collect();
        let v = objective(&spec, &PenaltySpec::power(2.0, 7.0), &hedge, &theta, &mu).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_constant_cost_closed_form() {
        // f ≡ 1, h ≡ 0, Power(2) γ=2: objective = β_γ(1) = 1.
        let spec = build_threshold(vec![std_uniform(), std_uniform()], -1.0).unwrap();
        let hedge = constant_hedge(&spec, 0.0);
        let theta = spec.theta.sample(64, 3).unwrap();
        let mu: Vec<Option<PointBatch>> = spec
            .hedging
            .terms
            .iter()
            .map(|t| match &t.integrator {
                crate::problems::Integrator::Marginal(m) => Some(m.sample(64, 4).unwrap()),
                _ => None,
            })
            .collect();
        let v = objective(&spec, &PenaltySpec::power(2.0, 2.0), &hedge, &theta, &mu).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn objective_monotone_in_gamma_for_power_family() {
        let spec = build_threshold(vec![std_uniform(), std_uniform()], 1.2).unwrap();
        let hedge = constant_hedge(&spec, 0.3);
        let theta = spec.theta.sample(256, 5).unwrap();
        let mu: Vec<Option<PointBatch>> = spec
            .hedging
            .terms
            .iter()
            .map(|t| match &t.integrator {
                crate::problems::Integrator::Marginal(m) => Some(m.sample(256, 6).unwrap()),
                _ => None,
            })
            .collect();
        let mut last = f64::NEG_INFINITY;
        for gamma in [1.0, 5.0, 25.0, 125.0] {
            let v =
                objective(&spec, &PenaltySpec::power(2.0, gamma), &hedge, &theta, &mu).unwrap();
            assert!(v >= last - 1e-12, "gamma {gamma}: {v} < {last}");
            last = v;
        }
    }

    #[test]
    fn solve_point_mass_problem_reaches_cost_value() {
        // Point-mass marginals and θ: the solver value tends to f(0,0),
        // up to the 1/(2γ) penalty offset.
        let cost = CostFunction::Custom(crate::problems::PointFunction::new(|x| {
            -(x[0] - x[1]).abs()
        }));
        let spec = build_mmot(
            vec![
                SamplingMeasure::dirac(vec![0.0]),
                SamplingMeasure::dirac(vec![0.0]),
            ],
            cost,
        )
        .unwrap();
        assert_eq!(spec.known_value, Some(0.0));
        let mut cfg = small_cfg(PenaltySpec::power(2.0, 1000.0));
        cfg.iterations = 800;
        cfg.batch_size = 4;
        let report = solve(&spec, &cfg).unwrap();
        assert!(report.dual_value.abs() < 1e-3, "dual {}", report.dual_value);
    }

    #[test]
    fn primal_constant_residual_factorizes() {
        // f ≡ 1 and h ≡ a: the weight is the constant β'_γ(1−a).
        let spec = build_threshold(vec![std_uniform(), std_uniform()], -1.0).unwrap();
        let penalty = PenaltySpec::power(2.0, 4.0);
        let hedge = constant_hedge(&spec, 0.75);
        let (value, norm) = primal_value(&spec, &penalty, &hedge, 2048, 9).unwrap();
        let w = penalty.beta_prime(0.25).unwrap();
        assert_relative_eq!(value, w, max_relative = 1e-12);
        assert_relative_eq!(norm, w, max_relative = 1e-12);
    }

    #[test]
    fn primal_unit_weights_give_plain_mean() {
        // h chosen so that β'_γ(f−h) = 1: primal equals the θ-mean of f.
        let spec = build_threshold(vec![std_uniform(), std_uniform()], -1.0).unwrap();
        let gamma = 8.0;
        let penalty = PenaltySpec::power(2.0, gamma);
        let hedge = constant_hedge(&spec, 1.0 - 1.0 / gamma);
        let (value, norm) = primal_value(&spec, &penalty, &hedge, 1024, 13).unwrap();
        assert_relative_eq!(value, 1.0, max_relative = 1e-12);
        assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn gap_bound_constant_ratios() {
        let theta = std_uniform();
        let one = WeightFunction::from_pointwise(|_| 1.0);
        let v = gap_bound(&PenaltySpec::power(2.0, 10.0), &one, &theta, 512, 1).unwrap();
        assert_abs_diff_eq!(v, 0.05, epsilon = 1e-12);
        let v = gap_bound(&PenaltySpec::exponential(3.0), &one, &theta, 512, 1).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_bound_two_block_density() {
        // Density 4/3 on [0,z] and 4 on [z,1] with z = (0.5, 0.75):
        // (1/2)((16/9)·0.375 + 16·0.125) = 4/3.
        let theta = SamplingMeasure::BoxUniform {
            lower: alloc::vec![0.0, 0.0],
            upper: alloc::vec![1.0, 1.0],
        };
        let ratio = WeightFunction::from_pointwise(|x| {
            if x[0] <= 0.5 && x[1] <= 0.75 {
                4.0 / 3.0
            } else if x[0] >= 0.5 && x[1] >= 0.75 {
                4.0
            } else {
                0.0
            }
        });
        let n = 400_000;
        let gamma = 1.0;
        let v = gap_bound(&PenaltySpec::power(2.0, gamma), &ratio, &theta, n, 2).unwrap();
        // σ ≈ 2.6 for the conjugate values; 4σ/√n band.
        assert!((v - 4.0 / 3.0).abs() < 4.0 * 2.6 / (n as f64).sqrt(), "gap {v}");
    }

    #[test]
    fn gap_bound_rejects_negative_ratio() {
        let theta = std_uniform();
        let bad = WeightFunction::from_pointwise(|x| x[0] - 0.5);
        assert_eq!(
            gap_bound(&PenaltySpec::power(2.0, 1.0), &bad, &theta, 128, 1),
            Err(Error::ConjugateDomain)
        );
    }

    #[test]
    fn update_reference_constant_weights_reproduce_theta() {
        // Zero networks and constant cost: the optimizer weight is
        // constant, so the reweighted measure is θ itself.
        let spec = build_threshold(vec![std_uniform(), std_uniform()], -1.0).unwrap();
        let penalty = PenaltySpec::power(2.0, 4.0);
        let hedge = constant_hedge(&spec, 0.5);
        let updated = update_reference(&spec, &penalty, &hedge, None, 3).unwrap();
        let expected_w = penalty.beta_prime(0.5).unwrap();
        assert_relative_eq!(updated.observed_max_weight, expected_w, max_relative = 1e-12);
        let batch = updated.measure.sample(20_000, 4).unwrap();
        let mean0 = batch.rows().map(|r| r[0]).sum::<f64>() / batch.len() as f64;
        assert!((mean0 - 0.5).abs() < 0.01, "mean {mean0}");
        if let SamplingMeasure::Reweighted { bound, .. } = &updated.measure {
            assert_relative_eq!(*bound, 1.2 * expected_w, max_relative = 1e-12);
        } else {
            panic!("expected a reweighted measure");
        }
    }

    #[test]
    fn solve_is_deterministic_per_config() {
        let spec = build_threshold(vec![std_uniform(), std_uniform()], 1.5).unwrap();
        let cfg = small_cfg(PenaltySpec::power(2.0, 64.0)).with_seed(17);
        let a = solve(&spec, &cfg).unwrap();
        let b = solve(&spec, &cfg).unwrap();
        assert_eq!(a.dual_value, b.dual_value);
        assert_eq!(a.primal_value, b.primal_value);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.config_digest, b.config_digest);
        let c = solve(&spec, &cfg.clone().with_seed(18)).unwrap();
        assert_ne!(a.dual_value, c.dual_value);
    }

    #[test]
    fn divergence_guard_trips_past_ceiling() {
        // Constant cost of 50 with a tiny ceiling: the initial constant
        // sits near 50, so the guard fires right after the grace period.
        let cost = CostFunction::Custom(crate::problems::PointFunction::new(|_| 50.0));
        let spec = build_mmot(vec![std_uniform(), std_uniform()], cost).unwrap();
        let mut cfg = small_cfg(PenaltySpec::power(2.0, 10.0));
        cfg.divergence_ceiling = 10.0;
        cfg.divergence_grace = 20;
        match solve(&spec, &cfg) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration >= 19),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn smoke_train_copula_bound() {
        // Small-scale run of the copula problem; generous band, just
        // catching wiring regressions.
        let spec = build_mmot(
            vec![std_uniform(), std_uniform()],
            CostFunction::CopulaIndicator { z: alloc::vec![0.5, 0.75] },
        )
        .unwrap();
        let mut cfg = TrainConfig::new(PenaltySpec::power(2.0, 100.0));
        cfg.iterations = 2000;
        cfg.batch_size = 128;
        cfg.network = NetworkShape::compact(2, 16);
        cfg.primal_samples = 8192;
        cfg.seed = 5;
        let report = solve(&spec, &cfg).unwrap();
        assert!(
            (0.40..0.60).contains(&report.dual_value),
            "dual {}",
            report.dual_value
        );
        assert!(report.weight_normalization > 0.0);
        let primal = report.primal_value.unwrap();
        assert!((0.3..0.7).contains(&primal), "primal {primal}");
    }

    #[test]
    fn portfolio_outer_lambda_zero_is_linear() {
        let mut cfg = small_cfg(PenaltySpec::power(2.0, 160.0));
        cfg.iterations = 1500;
        cfg.batch_size = 128;
        cfg.network = NetworkShape::compact(2, 16);
        let curve =
            portfolio_outer(0.0, &[0.0, 1.0], &cfg, PortfolioReference::Product).unwrap();
        assert_eq!(curve.points.len(), 2);
        // Coupling-free case: utilities near 0.5 and 2/3, maximum at x=1.
        assert!((curve.points[0].1 - 0.5).abs() < 0.05, "{:?}", curve.points);
        assert!((curve.points[1].1 - 2.0 / 3.0).abs() < 0.05, "{:?}", curve.points);
        assert_eq!(curve.best.0, 1.0);
    }

    #[test]
    fn train_config_digest_tracks_fields() {
        let a = TrainConfig::new(PenaltySpec::power(2.0, 10.0));
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.batch_size += 1;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.penalty = PenaltySpec::exponential(10.0);
        assert_ne!(a.digest(), c.digest());
    }
}
