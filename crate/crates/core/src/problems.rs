//! Problem specifications: cost functions, hedging structures and
//! builders for the supported problem classes.
//!
//! A [`ProblemSpec`] packages a cost `f`, a hedging structure
//! `h(x) = Σ_j e_j(x)·h_j(π_j(x)) + a` and a sampling measure `θ`. The
//! constraint set it encodes is implicit: a measure `μ` is feasible
//! exactly when `∫ h dμ = ∫ h dμ0` for every hedge `h`, so the pricing
//! measure `μ0` never needs to be materialized — each marginal term
//! integrates against its own marginal sampler and structurally
//! centered terms (martingale increments, moment constraints)
//! integrate to zero by construction.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::batch::PointBatch;
use crate::error::{Error, Result};
use crate::measures::{PushforwardMap, SamplingMeasure};
use crate::network::{self, BatchCache, NetworkParams, NetworkSpec};
use crate::rng;

/// Opaque scalar evaluator on points of the state space.
#[derive(Clone)]
pub struct PointFunction(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl PointFunction {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

impl core::fmt::Debug for PointFunction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("PointFunction(..)")
    }
}

impl PartialEq for PointFunction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Cost functions `f` of the supported experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    /// `1{x_i ≤ z_i for all i}`: copula value at `z`.
    CopulaIndicator { z: Vec<f64> },
    /// `−(Σ_j |Σ_i (−1)^{i+1} x_{i,j}|^q)^{p/q}` over `marginals`
    /// blocks of `dim` coordinates each (alternating signs, 0-based
    /// block index `i`).
    NegPowerDistance { p: f64, q: f64, marginals: usize, dim: usize },
    /// Base cost modulated by `sin(Σ_i x_{i,1})`, the sum running over
    /// the first coordinate of each block.
    SinModulated { base: Box<CostFunction>, marginals: usize, dim: usize },
    /// `−|x_1 − x_2|^rho` on two scalar coordinates.
    NegAbsPower { rho: f64 },
    /// Negated mean–variance utility of the portfolio
    /// `(1−weight)·ξ_1 + weight·ξ_2` with risk aversion `lambda` and
    /// precomputed marginal means.
    PortfolioMeanVariance { weight: f64, lambda: f64, mean1: f64, mean2: f64 },
    /// `1{x_1 + … + x_d ≥ s}`: tail indicator of the coordinate sum.
    ThresholdIndicator { s: f64 },
    /// Library-provided evaluator.
    Custom(PointFunction),
}

impl CostFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CostFunction::CopulaIndicator { z } => {
                if x.iter().zip(z).all(|(xi, zi)| xi <= zi) {
                    1.0
                } else {
                    0.0
                }
            }
            CostFunction::NegPowerDistance { p, q, marginals, dim } => {
                let mut total = 0.0;
                for j in 0..*dim {
                    let mut s = 0.0;
                    for i in 0..*marginals {
                        let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
                        s += sign * x[i * dim + j];
                    }
                    total += s.abs().powf(*q);
                }
                -total.powf(p / q)
            }
            CostFunction::SinModulated { base, marginals, dim } => {
                let mut s = 0.0;
                for i in 0..*marginals {
                    s += x[i * dim];
                }
                base.eval(x) * s.sin()
            }
            CostFunction::NegAbsPower { rho } => -(x[0] - x[1]).abs().powf(*rho),
            CostFunction::PortfolioMeanVariance { weight, lambda, mean1, mean2 } => {
                let portfolio = (1.0 - weight) * x[0] + weight * x[1];
                let mean = (1.0 - weight) * mean1 + weight * mean2;
                let dev = portfolio - mean;
                -(portfolio - lambda * dev * dev)
            }
            CostFunction::ThresholdIndicator { s } => {
                if x.iter().sum::<f64>() >= *s {
                    1.0
                } else {
                    0.0
                }
            }
            CostFunction::Custom(f) => f.eval(x),
        }
    }

    /// Ambient dimension implied by the cost parameters, if any.
    pub fn expected_dim(&self) -> Option<usize> {
        match self {
            CostFunction::CopulaIndicator { z } => Some(z.len()),
            CostFunction::NegPowerDistance { marginals, dim, .. } => Some(marginals * dim),
            CostFunction::SinModulated { base, .. } => base.expected_dim(),
            CostFunction::NegAbsPower { .. } => Some(2),
            CostFunction::PortfolioMeanVariance { .. } => Some(2),
            CostFunction::ThresholdIndicator { .. } => None,
            CostFunction::Custom(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CostFunction::CopulaIndicator { z } => {
                if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidSpec(
                        "copula indicator point must lie in the unit cube".into(),
                    ));
                }
            }
            CostFunction::NegPowerDistance { p, q, marginals, dim } => {
                if !(*p >= 1.0 && *q >= 1.0) || *marginals < 2 || *dim < 1 {
                    return Err(Error::InvalidSpec(
                        "power distance needs p, q >= 1 and at least two blocks".into(),
                    ));
                }
            }
            CostFunction::SinModulated { base, .. } => base.validate()?,
            CostFunction::NegAbsPower { rho } => {
                if !(rho.is_finite() && *rho > 0.0) {
                    return Err(Error::InvalidSpec("exponent rho must be positive".into()));
                }
            }
            CostFunction::PortfolioMeanVariance { weight, lambda, .. } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::InvalidSpec(
                        "portfolio weight must lie in [0, 1]".into(),
                    ));
                }
                if *lambda < 0.0 {
                    return Err(Error::InvalidSpec("risk aversion must be >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// The multiplier `e_j` in front of one hedging term.
#[derive(Debug, Clone, PartialEq)]
pub enum Multiplier {
    /// `e ≡ 1` (plain marginal term).
    One,
    /// `e(x) = x[to] − x[from]`: a martingale/trading increment.
    Increment { from: usize, to: usize },
    /// `e(x) = g(x) − target`: a centered moment constraint.
    CenteredMoment { g: PointFunction, target: f64 },
    Custom(PointFunction),
}

impl Multiplier {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Multiplier::One => 1.0,
            Multiplier::Increment { from, to } => x[*to] - x[*from],
            Multiplier::CenteredMoment { g, target } => g.eval(x) - target,
            Multiplier::Custom(f) => f.eval(x),
        }
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Multiplier::One)
    }
}

/// The input map `π_j` feeding one hedging term.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    /// Selected coordinates of the state vector.
    Coords(Vec<usize>),
    /// Zero-dimensional input: the term's function is a free scalar.
    Scalar,
}

impl Projection {
    pub fn dim(&self) -> usize {
        match self {
            Projection::Coords(c) => c.len(),
            Projection::Scalar => 0,
        }
    }
}

/// How a term enters `∫ h dμ0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Integrator {
    /// The term's function integrates against its own marginal law.
    Marginal(SamplingMeasure),
    /// The term vanishes under every feasible measure (centered by
    /// construction), so it contributes exactly zero.
    Zero,
}

/// One structured term `e_j · h_j ∘ π_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgingTerm {
    pub multiplier: Multiplier,
    pub projection: Projection,
    pub integrator: Integrator,
}

/// The hedging space structure `{Σ_j e_j·h_j∘π_j + a}`; the free
/// constant `a` lives with the trained parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HedgingStructure {
    pub terms: Vec<HedgingTerm>,
}

/// Parameters of one concrete hedge `h`: one function per term plus
/// the free constant.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeFunction {
    pub terms: Vec<TermFunction>,
    pub constant: f64,
}

/// The function `h_j` of one term: a network, or a free scalar for
/// zero-dimensional terms.
#[derive(Debug, Clone, PartialEq)]
pub enum TermFunction {
    Network { spec: NetworkSpec, params: NetworkParams },
    FreeScalar(f64),
}

impl HedgeFunction {
    /// A hedge evaluating to the constant `a` (all networks zero).
    pub fn zero_networks(structure: &HedgingStructure, net_spec: impl Fn(usize) -> NetworkSpec, constant: f64) -> Self {
        let terms = structure
            .terms
            .iter()
            .enumerate()
            .map(|(j, term)| match term.projection {
                Projection::Scalar => TermFunction::FreeScalar(0.0),
                Projection::Coords(_) => {
                    let spec = net_spec(j);
                    TermFunction::Network { spec, params: NetworkParams::zeros(&spec) }
                }
            })
            .collect();
        Self { terms, constant }
    }
}

/// The state box of a problem; coordinates may be unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn concat(parts: &[StateBox]) -> StateBox {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for p in parts {
            lower.extend_from_slice(&p.lower);
            upper.extend_from_slice(&p.upper);
        }
        StateBox { lower, upper }
    }
}

/// Bounding box of a measure's support (±∞ where unbounded).
pub fn measure_box(m: &SamplingMeasure) -> StateBox {
    let d = m.dim();
    match m {
        SamplingMeasure::BoxUniform { lower, upper } => {
            StateBox { lower: lower.clone(), upper: upper.clone() }
        }
        SamplingMeasure::GaussianMixture { .. } => {
            StateBox { lower: vec![f64::NEG_INFINITY; d], upper: vec![f64::INFINITY; d] }
        }
        SamplingMeasure::DiscreteAtoms { points, .. } => {
            let mut lower = vec![f64::INFINITY; d];
            let mut upper = vec![f64::NEG_INFINITY; d];
            for p in points {
                for i in 0..d {
                    lower[i] = lower[i].min(p[i]);
                    upper[i] = upper[i].max(p[i]);
                }
            }
            StateBox { lower, upper }
        }
        SamplingMeasure::Mixture { components, .. } => {
            let mut lower = vec![f64::INFINITY; d];
            let mut upper = vec![f64::NEG_INFINITY; d];
            for c in components {
                let b = measure_box(c);
                for i in 0..d {
                    lower[i] = lower[i].min(b.lower[i]);
                    upper[i] = upper[i].max(b.upper[i]);
                }
            }
            StateBox { lower, upper }
        }
        SamplingMeasure::Product { factors } => {
            StateBox::concat(&factors.iter().map(measure_box).collect::<Vec<_>>())
        }
        SamplingMeasure::Reweighted { base, .. } => measure_box(base),
        SamplingMeasure::Pushforward { base, map } => {
            let b = measure_box(base);
            match map {
                PushforwardMap::Identity => b,
                PushforwardMap::Affine { scale, shift } => {
                    let (mut lower, mut upper) = (Vec::new(), Vec::new());
                    for (lo, hi) in b.lower.iter().zip(&b.upper) {
                        let (a, c) = (scale * lo + shift, scale * hi + shift);
                        lower.push(a.min(c));
                        upper.push(a.max(c));
                    }
                    StateBox { lower, upper }
                }
                PushforwardMap::ScaleSquare => {
                    let (mut lower, mut upper) = (Vec::new(), Vec::new());
                    for (lo, hi) in b.lower.iter().zip(&b.upper) {
                        let vals = [2.0 * lo * lo, 2.0 * hi * hi];
                        let contains_zero = *lo <= 0.0 && *hi >= 0.0;
                        let min = if contains_zero { 0.0 } else { vals[0].min(vals[1]) };
                        lower.push(min);
                        upper.push(vals[0].max(vals[1]));
                    }
                    StateBox { lower, upper }
                }
                PushforwardMap::GraphScaleSquare => {
                    let (lo, hi) = (b.lower[0], b.upper[0]);
                    let contains_zero = lo <= 0.0 && hi >= 0.0;
                    let y = [2.0 * lo * lo, 2.0 * hi * hi];
                    let ylo = if contains_zero { 0.0 } else { y[0].min(y[1]) };
                    StateBox { lower: vec![lo, ylo], upper: vec![hi, y[0].max(y[1])] }
                }
                PushforwardMap::ParetoQuantile { scale, .. } => {
                    StateBox { lower: vec![*scale; d], upper: vec![f64::INFINITY; d] }
                }
            }
        }
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub state_space: StateBox,
    pub cost: CostFunction,
    pub hedging: HedgingStructure,
    pub theta: SamplingMeasure,
    /// Analytic reference value of `phi(f)`, when one is known.
    pub known_value: Option<f64>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.state_space.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        self.cost.validate()?;
        self.theta.validate()?;
        if self.theta.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.theta.dim() });
        }
        if let Some(cd) = self.cost.expected_dim() {
            if cd != d {
                return Err(Error::DimensionMismatch { expected: d, got: cd });
            }
        }
        for term in &self.hedging.terms {
            if let Projection::Coords(coords) = &term.projection {
                if coords.iter().any(|c| *c >= d) {
                    return Err(Error::InvalidSpec(
                        "projection coordinate outside the state space".into(),
                    ));
                }
            }
            match (&term.projection, &term.integrator) {
                (Projection::Scalar, Integrator::Marginal(_)) => {
                    return Err(Error::InvalidSpec(
                        "scalar terms must use the zero integrator".into(),
                    ));
                }
                (Projection::Coords(coords), Integrator::Marginal(m)) => {
                    m.validate()?;
                    if m.dim() != coords.len() {
                        return Err(Error::DimensionMismatch {
                            expected: coords.len(),
                            got: m.dim(),
                        });
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Multi-marginal transport: one plain term per marginal, sampling
/// measure defaulting to the product of the marginals.
pub fn build_mmot(marginals: Vec<SamplingMeasure>, cost: CostFunction) -> Result<ProblemSpec> {
    if marginals.len() < 2 {
        return Err(Error::InvalidSpec("need at least two marginals".into()));
    }
    for m in &marginals {
        m.validate()?;
    }
    cost.validate()?;
    let dims: Vec<usize> = marginals.iter().map(|m| m.dim()).collect();
    let total: usize = dims.iter().sum();
    if let Some(cd) = cost.expected_dim() {
        if cd != total {
            return Err(Error::DimensionMismatch { expected: cd, got: total });
        }
    }

    let mut terms = Vec::with_capacity(marginals.len());
    let mut offset = 0;
    for (m, d) in marginals.iter().zip(&dims) {
        terms.push(HedgingTerm {
            multiplier: Multiplier::One,
            projection: Projection::Coords((offset..offset + d).collect()),
            integrator: Integrator::Marginal(m.clone()),
        });
        offset += d;
    }

    let known_value = mmot_known_value(&marginals, &cost);
    let state_space =
        StateBox::concat(&marginals.iter().map(measure_box).collect::<Vec<_>>());
    Ok(ProblemSpec {
        state_space,
        cost,
        hedging: HedgingStructure { terms },
        theta: SamplingMeasure::Product { factors: marginals },
        known_value,
    })
}

fn mmot_known_value(marginals: &[SamplingMeasure], cost: &CostFunction) -> Option<f64> {
    // All single-atom marginals: the unique coupling is their product.
    if marginals.iter().all(|m| matches!(m, SamplingMeasure::DiscreteAtoms { points, .. } if points.len() == 1)) {
        let mut x = Vec::new();
        for m in marginals {
            if let SamplingMeasure::DiscreteAtoms { points, .. } = m {
                x.extend_from_slice(&points[0]);
            }
        }
        return Some(cost.eval(&x));
    }
    match cost {
        CostFunction::CopulaIndicator { z } => {
            let all_std_uniform = marginals.iter().all(|m| {
                matches!(m, SamplingMeasure::BoxUniform { lower, upper }
                    if lower.as_slice() == [0.0] && upper.as_slice() == [1.0])
            });
            if all_std_uniform && z.len() == marginals.len() {
                return z.iter().copied().min_by(f64::total_cmp);
            }
            None
        }
        CostFunction::ThresholdIndicator { s } => {
            let all_std_uniform = marginals.len() == 2
                && marginals.iter().all(|m| {
                    matches!(m, SamplingMeasure::BoxUniform { lower, upper }
                        if lower.as_slice() == [0.0] && upper.as_slice() == [1.0])
                });
            if all_std_uniform {
                // Best-case P(X+Y ≥ s) with uniform marginals: mass 2−s
                // on the antidiagonal for s in [1,2].
                return Some(threshold_value_uniform_pair(*s));
            }
            None
        }
        // Identical pair of marginals with a distance-type cost: the
        // identity coupling attains 0.
        CostFunction::NegAbsPower { .. } => {
            if marginals.len() == 2 && marginals[0] == marginals[1] {
                Some(0.0)
            } else {
                None
            }
        }
        CostFunction::NegPowerDistance { marginals: m, .. } => {
            if *m == 2 && marginals.len() == 2 && marginals[0] == marginals[1] {
                Some(0.0)
            } else {
                None
            }
        }
        _ => None,
    }
}

fn threshold_value_uniform_pair(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s <= 2.0 {
        2.0 - s
    } else {
        0.0
    }
}

/// Two-period martingale transport: marginal terms plus a trading term
/// `g(x_1)·(x_2 − x_1)` with zero integrator.
pub fn build_mot(
    marginal1: SamplingMeasure,
    marginal2: SamplingMeasure,
    cost: CostFunction,
) -> Result<ProblemSpec> {
    for m in [&marginal1, &marginal2] {
        m.validate()?;
        if m.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: m.dim() });
        }
    }
    cost.validate()?;
    let terms = vec![
        HedgingTerm {
            multiplier: Multiplier::One,
            projection: Projection::Coords(vec![0]),
            integrator: Integrator::Marginal(marginal1.clone()),
        },
        HedgingTerm {
            multiplier: Multiplier::One,
            projection: Projection::Coords(vec![1]),
            integrator: Integrator::Marginal(marginal2.clone()),
        },
        HedgingTerm {
            multiplier: Multiplier::Increment { from: 0, to: 1 },
            projection: Projection::Coords(vec![0]),
            integrator: Integrator::Zero,
        },
    ];

    let known_value = mot_known_value(&marginal1, &marginal2, &cost);
    let state_space = StateBox::concat(&[measure_box(&marginal1), measure_box(&marginal2)]);
    Ok(ProblemSpec {
        state_space,
        cost,
        hedging: HedgingStructure { terms },
        theta: SamplingMeasure::Product { factors: vec![marginal1, marginal2] },
        known_value,
    })
}

fn mot_known_value(
    m1: &SamplingMeasure,
    m2: &SamplingMeasure,
    cost: &CostFunction,
) -> Option<f64> {
    if let (
        SamplingMeasure::DiscreteAtoms { points: p1, .. },
        SamplingMeasure::DiscreteAtoms { points: p2, .. },
    ) = (m1, m2)
    {
        if p1.len() == 1 && p2.len() == 1 {
            return Some(cost.eval(&[p1[0][0], p2[0][0]]));
        }
    }
    if let CostFunction::NegAbsPower { rho } = cost {
        if *rho == 2.0 {
            // Under any martingale coupling, E|X−Y|² = Var(μ2) − Var(μ1).
            let var = |m: &SamplingMeasure| -> Option<f64> {
                match m {
                    SamplingMeasure::BoxUniform { lower, upper } if lower.len() == 1 => {
                        let w = upper[0] - lower[0];
                        Some(w * w / 12.0)
                    }
                    _ => None,
                }
            };
            return Some(-(var(m2)? - var(m1)?));
        }
        if *rho > 2.0 {
            let is_u = |m: &SamplingMeasure, lo: f64, hi: f64| {
                matches!(m, SamplingMeasure::BoxUniform { lower, upper }
                    if lower.as_slice() == [lo] && upper.as_slice() == [hi])
            };
            if is_u(m1, -1.0, 1.0) && is_u(m2, -2.0, 2.0) {
                return Some(-1.0);
            }
        }
    }
    None
}

/// Transport with extra moment equalities `∫ g_j dμ = c_j`, enforced
/// dually by free scalars multiplying the centered constraint terms.
pub fn build_constrained_ot(
    marginals: Vec<SamplingMeasure>,
    cost: CostFunction,
    moment_functions: Vec<(PointFunction, f64)>,
) -> Result<ProblemSpec> {
    let mut spec = build_mmot(marginals, cost)?;
    if !moment_functions.is_empty() {
        spec.known_value = None;
    }
    for (g, target) in moment_functions {
        spec.hedging.terms.push(HedgingTerm {
            multiplier: Multiplier::CenteredMoment { g, target },
            projection: Projection::Scalar,
            integrator: Integrator::Zero,
        });
    }
    Ok(spec)
}

/// Tail-probability problem: `P(x_1 + … + x_d ≥ s)` maximized over all
/// couplings of the given marginals.
pub fn build_threshold(marginals: Vec<SamplingMeasure>, s: f64) -> Result<ProblemSpec> {
    build_mmot(marginals, CostFunction::ThresholdIndicator { s })
}

/// Marginal mean of `U[0,1]` pushed through `x ↦ 2x²`: `∫ 2t² dt = 2/3`.
pub const PORTFOLIO_MEAN_SECOND: f64 = 2.0 / 3.0;
/// Marginal mean of `U[0,1]`.
pub const PORTFOLIO_MEAN_FIRST: f64 = 0.5;

/// Inner worst-case problem of the robust portfolio selection: returns
/// the spec whose solver value is `phi(−f_x)`, so the worst-case
/// utility is its negative. The sampling measure defaults to the
/// product of the marginals; see [`portfolio_theta_correlated`] for
/// the positively correlated alternative.
pub fn build_portfolio_inner(weight: f64, lambda: f64) -> Result<ProblemSpec> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidSpec(alloc::format!(
            "portfolio weight must lie in [0, 1], got {weight}"
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidSpec("risk aversion must be >= 0".into()));
    }
    let theta1 = SamplingMeasure::uniform_1d(0.0, 1.0);
    let theta2 = SamplingMeasure::Pushforward {
        base: Box::new(SamplingMeasure::uniform_1d(0.0, 1.0)),
        map: PushforwardMap::ScaleSquare,
    };
    let cost = CostFunction::PortfolioMeanVariance {
        weight,
        lambda,
        mean1: PORTFOLIO_MEAN_FIRST,
        mean2: PORTFOLIO_MEAN_SECOND,
    };
    let mut spec = build_mmot(vec![theta1, theta2], cost)?;
    spec.known_value = portfolio_known_value(weight, lambda);
    Ok(spec)
}

fn portfolio_known_value(weight: f64, lambda: f64) -> Option<f64> {
    let mean = (1.0 - weight) * PORTFOLIO_MEAN_FIRST + weight * PORTFOLIO_MEAN_SECOND;
    if lambda == 0.0 {
        // Variance term gone: the value is coupling-free.
        return Some(-mean);
    }
    if weight == 0.0 {
        // Single asset: Var U[0,1] = 1/12.
        return Some(-(PORTFOLIO_MEAN_FIRST - lambda / 12.0));
    }
    if weight == 1.0 {
        // Var(2U²) = 4/5 − 4/9 = 16/45.
        return Some(-(PORTFOLIO_MEAN_SECOND - lambda * 16.0 / 45.0));
    }
    None
}

/// The positively correlated sampling measure for the portfolio
/// problem: half product measure, half mass on the graph of `2x²`.
pub fn portfolio_theta_correlated() -> SamplingMeasure {
    let product = SamplingMeasure::Product {
        factors: vec![
            SamplingMeasure::uniform_1d(0.0, 1.0),
            SamplingMeasure::Pushforward {
                base: Box::new(SamplingMeasure::uniform_1d(0.0, 1.0)),
                map: PushforwardMap::ScaleSquare,
            },
        ],
    };
    let correlated = SamplingMeasure::Pushforward {
        base: Box::new(SamplingMeasure::uniform_1d(0.0, 1.0)),
        map: PushforwardMap::GraphScaleSquare,
    };
    SamplingMeasure::Mixture { weights: vec![0.5, 0.5], components: vec![product, correlated] }
}

/// Evaluates the hedge `h(x) = Σ_j e_j(x)·h_j(π_j(x)) + a` at one point.
pub fn eval_hedge(spec: &ProblemSpec, hedge: &HedgeFunction, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    if hedge.terms.len() != spec.hedging.terms.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.hedging.terms.len(),
            got: hedge.terms.len(),
        });
    }
    let mut total = hedge.constant;
    let mut projected = Vec::new();
    for (term, function) in spec.hedging.terms.iter().zip(&hedge.terms) {
        let e = term.multiplier.eval(x);
        let value = match (function, &term.projection) {
            (TermFunction::FreeScalar(v), _) => *v,
            (TermFunction::Network { spec: net, params }, Projection::Coords(coords)) => {
                projected.clear();
                projected.extend(coords.iter().map(|&c| x[c]));
                network::forward(net, params, &projected)?
            }
            (TermFunction::Network { .. }, Projection::Scalar) => {
                return Err(Error::InvalidSpec(
                    "scalar projection cannot feed a network".into(),
                ));
            }
        };
        total += e * value;
    }
    Ok(total)
}

/// Monte-Carlo estimate of `∫ h dμ0`: every marginal term averages its
/// function over `n` draws of its own marginal, centered terms
/// contribute exactly zero, and the free constant is added.
pub fn mu0_integral(spec: &ProblemSpec, hedge: &HedgeFunction, n: usize, seed: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidSpec("integration needs n >= 1".into()));
    }
    if hedge.terms.len() != spec.hedging.terms.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.hedging.terms.len(),
            got: hedge.terms.len(),
        });
    }
    let mut total = hedge.constant;
    let mut cache = BatchCache::default();
    for (j, (term, function)) in spec.hedging.terms.iter().zip(&hedge.terms).enumerate() {
        let Integrator::Marginal(measure) = &term.integrator else {
            continue;
        };
        let TermFunction::Network { spec: net, params } = function else {
            return Err(Error::InvalidSpec(
                "marginal-integrated terms must carry a network".into(),
            ));
        };
        let mut rng = rng::stream_rng(seed, j as u64);
        let batch = measure.sample_with(n, &mut rng)?;
        network::forward_batch(net, params, &batch, &mut cache)?;
        total += cache.output().iter().sum::<f64>() / n as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn std_uniform() -> SamplingMeasure {
        SamplingMeasure::uniform_1d(0.0, 1.0)
    }

    /// Network that computes `slope · t` exactly: relu(t) − relu(−t),
    /// scaled on the output affine.
    fn linear_net(slope: f64) -> (NetworkSpec, NetworkParams) {
        let spec = NetworkSpec::new(1, 1, 2);
        let params = NetworkParams::from_flat(
            &spec,
            vec![1.0, -1.0, 0.0, 0.0, slope, -slope, 0.0],
        )
        .unwrap();
        (spec, params)
    }

    fn constant_net(d: usize, value: f64) -> (NetworkSpec, NetworkParams) {
        let spec = NetworkSpec::new(1, d, 1);
        let mut params = NetworkParams::zeros(&spec);
        let n = params.flat().len();
        params.flat_mut()[n - 1] = value;
        (spec, params)
    }

    #[test]
    fn frechet_hoeffding_problem_has_known_value() {
        let spec = build_mmot(
            vec![std_uniform(), std_uniform()],
            CostFunction::CopulaIndicator { z: vec![0.5, 0.75] },
        )
        .unwrap();
        assert_eq!(spec.known_value, Some(0.5));
        assert_eq!(spec.dim(), 2);
        spec.validate().unwrap();
    }

    #[test]
    fn identical_marginals_metric_cost_known_zero() {
        let spec = build_mmot(
            vec![std_uniform(), std_uniform()],
            CostFunction::NegPowerDistance { p: 1.0, q: 1.0, marginals: 2, dim: 1 },
        )
        .unwrap();
        assert_eq!(spec.known_value, Some(0.0));
    }

    #[test]
    fn mot_known_values() {
        let m1 = SamplingMeasure::uniform_1d(-1.0, 1.0);
        let m2 = SamplingMeasure::uniform_1d(-2.0, 2.0);
        let spec =
            build_mot(m1.clone(), m2.clone(), CostFunction::NegAbsPower { rho: 2.3 }).unwrap();
        assert_eq!(spec.known_value, Some(-1.0));
        spec.validate().unwrap();

        // rho = 2: variance difference 4/3 − 1/3 = 1.
        let spec = build_mot(m1, m2, CostFunction::NegAbsPower { rho: 2.0 }).unwrap();
        assert_relative_eq!(spec.known_value.unwrap(), -1.0, max_relative = 1e-12);

        // Point masses: only coupling is the pair of atoms.
        let spec = build_mot(
            SamplingMeasure::dirac(vec![0.0]),
            SamplingMeasure::dirac(vec![0.0]),
            CostFunction::NegAbsPower { rho: 1.0 },
        )
        .unwrap();
        assert_eq!(spec.known_value, Some(0.0));
    }

    #[test]
    fn constrained_without_constraints_is_mmot() {
        let cost = CostFunction::ThresholdIndicator { s: 1.0 };
        let a = build_mmot(vec![std_uniform(), std_uniform()], cost.clone()).unwrap();
        let b =
            build_constrained_ot(vec![std_uniform(), std_uniform()], cost, Vec::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constrained_adds_scalar_terms() {
        let g = PointFunction::new(|x| x[0] * x[1]);
        let spec = build_constrained_ot(
            vec![std_uniform(), std_uniform()],
            CostFunction::ThresholdIndicator { s: 1.9 },
            vec![(g, 1.0 / 3.0)],
        )
        .unwrap();
        assert_eq!(spec.hedging.terms.len(), 3);
        let last = &spec.hedging.terms[2];
        assert_eq!(last.projection, Projection::Scalar);
        assert_eq!(last.integrator, Integrator::Zero);
        // e(x) = g(x) − c
        assert_relative_eq!(last.multiplier.eval(&[0.5, 1.0]), 0.5 - 1.0 / 3.0);
        spec.validate().unwrap();
    }

    #[test]
    fn threshold_known_values() {
        let spec = build_threshold(vec![std_uniform(), std_uniform()], 1.9).unwrap();
        assert_abs_diff_eq!(spec.known_value.unwrap(), 0.1, epsilon = 1e-12);
        let spec = build_threshold(vec![std_uniform(), std_uniform()], -0.5).unwrap();
        assert_eq!(spec.known_value, Some(1.0));
        let spec = build_threshold(vec![std_uniform(), std_uniform()], 1.0).unwrap();
        assert_eq!(spec.known_value, Some(1.0));
    }

    #[test]
    fn portfolio_known_values() {
        // lambda = 0: linear mean, no coupling dependence.
        for x in [0.0, 0.3, 1.0] {
            let spec = build_portfolio_inner(x, 0.0).unwrap();
            let expected = -((1.0 - x) * 0.5 + x * 2.0 / 3.0);
            assert_relative_eq!(spec.known_value.unwrap(), expected, max_relative = 1e-12);
        }
        let spec = build_portfolio_inner(0.0, 1.0).unwrap();
        assert_relative_eq!(spec.known_value.unwrap(), -(0.5 - 1.0 / 12.0));
        let spec = build_portfolio_inner(1.0, 1.0).unwrap();
        assert_relative_eq!(spec.known_value.unwrap(), -(2.0 / 3.0 - 16.0 / 45.0));
        assert!(build_portfolio_inner(1.5, 0.0).is_err());
    }

    #[test]
    fn portfolio_correlated_theta_is_valid() {
        let theta = portfolio_theta_correlated();
        theta.validate().unwrap();
        assert_eq!(theta.dim(), 2);
    }

    #[test]
    fn cost_evaluations() {
        let f = CostFunction::CopulaIndicator { z: vec![0.5, 0.75] };
        assert_eq!(f.eval(&[0.4, 0.7]), 1.0);
        assert_eq!(f.eval(&[0.6, 0.7]), 0.0);

        // M=2, D=1, p=q=2: −|x2 − x1|².
        let f = CostFunction::NegPowerDistance { p: 2.0, q: 2.0, marginals: 2, dim: 1 };
        assert_relative_eq!(f.eval(&[0.5, 2.0]), -2.25);

        // Sign alternation over blocks: −x1 + x2 − x3 per coordinate.
        let f = CostFunction::NegPowerDistance { p: 1.0, q: 1.0, marginals: 3, dim: 1 };
        assert_relative_eq!(f.eval(&[1.0, 5.0, 2.0]), -2.0);

        let base = CostFunction::NegPowerDistance { p: 2.0, q: 2.0, marginals: 2, dim: 2 };
        let f = CostFunction::SinModulated {
            base: Box::new(base.clone()),
            marginals: 2,
            dim: 2,
        };
        let x = [0.3, 0.8, 1.1, -0.2];
        assert_relative_eq!(f.eval(&x), base.eval(&x) * (0.3f64 + 1.1).sin());

        let f = CostFunction::NegAbsPower { rho: 2.3 };
        assert_relative_eq!(f.eval(&[0.5, -0.5]), -1.0f64.powf(2.3));

        let f = CostFunction::ThresholdIndicator { s: 1.9 };
        assert_eq!(f.eval(&[0.95, 0.96]), 1.0);
        assert_eq!(f.eval(&[0.5, 0.5]), 0.0);
    }

    #[test]
    fn eval_hedge_zero_networks_is_constant() {
        let spec = build_threshold(vec![std_uniform(), std_uniform()], 1.9).unwrap();
        let hedge = HedgeFunction::zero_networks(
            &spec.hedging,
            |_| NetworkSpec::new(1, 1, 4),
            3.0,
        );
        assert_eq!(eval_hedge(&spec, &hedge, &[0.2, 0.9]).unwrap(), 3.0);
    }

    #[test]
    fn eval_hedge_mot_trading_term() {
        let spec = build_mot(
            SamplingMeasure::uniform_1d(-1.0, 1.0),
            SamplingMeasure::uniform_1d(-2.0, 2.0),
            CostFunction::NegAbsPower { rho: 2.3 },
        )
        .unwrap();
        let (cspec, cparams) = constant_net(1, 1.0);
        let (zspec, zparams) = constant_net(1, 0.0);
        let hedge = HedgeFunction {
            terms: vec![
                TermFunction::Network { spec: zspec, params: zparams.clone() },
                TermFunction::Network { spec: zspec, params: zparams },
                TermFunction::Network { spec: cspec, params: cparams },
            ],
            constant: 0.0,
        };
        // (x2 − x1)·1 = 0.3
        assert_relative_eq!(eval_hedge(&spec, &hedge, &[0.2, 0.5]).unwrap(), 0.3);
    }

    #[test]
    fn eval_hedge_mmot_linear_terms() {
        let spec = build_mmot(
            vec![std_uniform(), std_uniform()],
            CostFunction::ThresholdIndicator { s: 1.0 },
        )
        .unwrap();
        let (s1, p1) = linear_net(1.0);
        let (s2, p2) = linear_net(2.0);
        let hedge = HedgeFunction {
            terms: vec![
                TermFunction::Network { spec: s1, params: p1 },
                TermFunction::Network { spec: s2, params: p2 },
            ],
            constant: 0.0,
        };
        // h1(0.1) + h2(0.2) = 0.1 + 0.4
        assert_relative_eq!(eval_hedge(&spec, &hedge, &[0.1, 0.2]).unwrap(), 0.5);
    }

    #[test]
    fn mu0_integral_constant_and_marginal_terms() {
        let spec = build_mmot(
            vec![std_uniform(), std_uniform()],
            CostFunction::ThresholdIndicator { s: 1.0 },
        )
        .unwrap();
        let zero = HedgeFunction::zero_networks(&spec.hedging, |_| NetworkSpec::new(1, 1, 2), 1.5);
        assert_eq!(mu0_integral(&spec, &zero, 100, 0).unwrap(), 1.5);

        // h1(t) = t on U[0,1]: mean 1/2 ± 3σ/√n with σ² = 1/12.
        let (s1, p1) = linear_net(1.0);
        let (s2, p2) = constant_net(1, 0.0);
        let hedge = HedgeFunction {
            terms: vec![
                TermFunction::Network { spec: s1, params: p1 },
                TermFunction::Network { spec: s2, params: p2 },
            ],
            constant: 0.0,
        };
        let n = 40_000;
        let estimate = mu0_integral(&spec, &hedge, n, 7).unwrap();
        let tol = 3.0 / (12.0f64).sqrt() / (n as f64).sqrt();
        assert!((estimate - 0.5).abs() < tol, "estimate {estimate}");
    }

    #[test]
    fn mu0_integral_ignores_trading_term_parameters() {
        let spec = build_mot(
            SamplingMeasure::uniform_1d(-1.0, 1.0),
            SamplingMeasure::uniform_1d(-2.0, 2.0),
            CostFunction::NegAbsPower { rho: 2.3 },
        )
        .unwrap();
        let (s, zero_params) = constant_net(1, 0.0);
        let (_, wild_params) = constant_net(1, 123.0);
        let base = HedgeFunction {
            terms: vec![
                TermFunction::Network { spec: s, params: zero_params.clone() },
                TermFunction::Network { spec: s, params: zero_params.clone() },
                TermFunction::Network { spec: s, params: zero_params },
            ],
            constant: 0.25,
        };
        let mut changed = base.clone();
        changed.terms[2] = TermFunction::Network { spec: s, params: wild_params };
        assert_eq!(
            mu0_integral(&spec, &base, 512, 3).unwrap(),
            mu0_integral(&spec, &changed, 512, 3).unwrap()
        );
    }

    #[test]
    fn mu0_integral_constant_networks_bookkeeping() {
        // Constant networks c_j: the estimate equals Σ c_j + a exactly
        // (dyadic constants keep the float arithmetic exact).
        let spec = build_mmot(
            vec![std_uniform(), std_uniform()],
            CostFunction::ThresholdIndicator { s: 1.0 },
        )
        .unwrap();
        let (s1, p1) = constant_net(1, 0.25);
        let (s2, p2) = constant_net(1, 0.5);
        let hedge = HedgeFunction {
            terms: vec![
                TermFunction::Network { spec: s1, params: p1 },
                TermFunction::Network { spec: s2, params: p2 },
            ],
            constant: 1.5,
        };
        assert_eq!(mu0_integral(&spec, &hedge, 1000, 11).unwrap(), 0.25 + 0.5 + 1.5);
    }

    #[test]
    fn builders_reject_dimension_mismatches() {
        assert!(build_mmot(
            vec![std_uniform()],
            CostFunction::ThresholdIndicator { s: 1.0 }
        )
        .is_err());
        assert!(build_mmot(
            vec![std_uniform(), std_uniform(), std_uniform()],
            CostFunction::CopulaIndicator { z: vec![0.5, 0.5] },
        )
        .is_err());
        let square = SamplingMeasure::BoxUniform {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert!(build_mot(
            square,
            std_uniform(),
            CostFunction::NegAbsPower { rho: 1.0 }
        )
        .is_err());
    }

    #[test]
    fn state_boxes_track_supports() {
        let spec = build_portfolio_inner(0.5, 1.0).unwrap();
        assert_eq!(spec.state_space.lower, vec![0.0, 0.0]);
        assert_eq!(spec.state_space.upper, vec![1.0, 2.0]);
        let g = SamplingMeasure::GaussianMixture {
            weights: vec![1.0],
            means: vec![vec![0.0]],
            stddevs: vec![vec![1.0]],
        };
        let b = measure_box(&g);
        assert_eq!(b.lower, vec![f64::NEG_INFINITY]);
    }
}
