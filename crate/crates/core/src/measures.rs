//! Composable sampling measures with seeded Monte-Carlo sampling.
//!
//! A [`SamplingMeasure`] describes a Borel probability measure on some
//! `R^d` as a small expression tree: box-uniforms, Gaussian mixtures,
//! pushforwards under built-in maps, mixtures, products, reweightings
//! by a nonnegative density factor, and finite atom sets. Sampling is
//! deterministic given `(measure, n, seed)`.
//!
//! Reweighted measures are sampled by acceptance-rejection against the
//! declared envelope bound ([`accept_reject`]); everything else samples
//! directly. 1-D measures additionally expose CDF/quantile evaluation
//! where a usable form exists, which backs quantile-grid quantization
//! ([`quantize`]) and the comonotone coupling oracle.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::batch::PointBatch;
use crate::error::{Error, Result};
use crate::rng;

const SIMPLEX_TOL: f64 = 1e-12;

/// Built-in pushforward maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PushforwardMap {
    Identity,
    /// Elementwise `x ↦ scale·x + shift`.
    Affine { scale: f64, shift: f64 },
    /// Elementwise `x ↦ 2x²`.
    ScaleSquare,
    /// `x ↦ (x, 2x²)` for 1-D bases: mass on the graph of `2x²`.
    GraphScaleSquare,
    /// Quantile map of a type-I Pareto law: `u ↦ scale·(1−u)^{−1/alpha}`
    /// for 1-D bases supported in `[0, 1)`.
    ParetoQuantile { alpha: f64, scale: f64 },
}

impl PushforwardMap {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            PushforwardMap::GraphScaleSquare => 2,
            _ => input_dim,
        }
    }

    /// Applies the map to one point, appending to `out`.
    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        match self {
            PushforwardMap::Identity => out.extend_from_slice(x),
            PushforwardMap::Affine { scale, shift } => {
                out.extend(x.iter().map(|v| scale * v + shift))
            }
            PushforwardMap::ScaleSquare => out.extend(x.iter().map(|v| 2.0 * v * v)),
            PushforwardMap::GraphScaleSquare => {
                out.push(x[0]);
                out.push(2.0 * x[0] * x[0]);
            }
            PushforwardMap::ParetoQuantile { alpha, scale } => {
                out.extend(x.iter().map(|u| scale * (1.0 - u).powf(-1.0 / alpha)))
            }
        }
    }

    /// Whether the map is increasing on `[lo, ∞)` as a 1-D map, which
    /// is what lets quantiles commute with the pushforward.
    fn increasing_1d_from(&self, lo: f64) -> bool {
        match self {
            PushforwardMap::Identity => true,
            PushforwardMap::Affine { scale, .. } => *scale > 0.0,
            PushforwardMap::ScaleSquare => lo >= 0.0,
            PushforwardMap::GraphScaleSquare => false,
            PushforwardMap::ParetoQuantile { .. } => lo >= 0.0,
        }
    }

    /// Inverse of the 1-D map on its increasing branch.
    fn invert_1d(&self, y: f64) -> Option<f64> {
        match self {
            PushforwardMap::Identity => Some(y),
            PushforwardMap::Affine { scale, shift } => Some((y - shift) / scale),
            PushforwardMap::ScaleSquare => {
                if y < 0.0 {
                    None
                } else {
                    Some((y / 2.0).sqrt())
                }
            }
            PushforwardMap::GraphScaleSquare => None,
            PushforwardMap::ParetoQuantile { alpha, scale } => {
                if y < *scale {
                    None
                } else {
                    Some(1.0 - (scale / y).powf(*alpha))
                }
            }
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        match self {
            PushforwardMap::Affine { scale, shift } => {
                if !scale.is_finite() || !shift.is_finite() || *scale == 0.0 {
                    return Err(Error::InvalidSpec(
                        "affine pushforward needs finite parameters and nonzero scale".into(),
                    ));
                }
            }
            PushforwardMap::GraphScaleSquare => {
                if input_dim != 1 {
                    return Err(Error::InvalidSpec(
                        "graph pushforward requires a 1-D base measure".into(),
                    ));
                }
            }
            PushforwardMap::ParetoQuantile { alpha, scale } => {
                if !(alpha.is_finite() && *alpha > 0.0 && scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidSpec(
                        "Pareto quantile map needs alpha > 0 and scale > 0".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Opaque nonnegative density factor, evaluated batchwise so callers
/// can amortize network passes over many points.
#[derive(Clone)]
pub struct WeightFunction(Arc<dyn Fn(&PointBatch) -> Vec<f64> + Send + Sync>);

impl WeightFunction {
    pub fn new(f: impl Fn(&PointBatch) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    /// Wraps a pointwise evaluator.
    pub fn from_pointwise(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |batch| batch.rows().map(&f).collect())
    }

    pub fn eval_batch(&self, batch: &PointBatch) -> Vec<f64> {
        (self.0)(batch)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut batch = PointBatch::with_capacity(x.len(), 1);
        batch.push_row(x);
        self.eval_batch(&batch)[0]
    }
}

impl core::fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("WeightFunction(..)")
    }
}

impl PartialEq for WeightFunction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// A sampling measure on `R^d`, built compositionally.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingMeasure {
    /// Uniform distribution on the box `[lower, upper]`.
    BoxUniform { lower: Vec<f64>, upper: Vec<f64> },
    /// Mixture of diagonal Gaussians.
    GaussianMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, stddevs: Vec<Vec<f64>> },
    /// Image of `base` under a built-in map.
    Pushforward { base: Box<SamplingMeasure>, map: PushforwardMap },
    /// Convex combination of component measures.
    Mixture { weights: Vec<f64>, components: Vec<SamplingMeasure> },
    /// Product measure of independent factors.
    Product { factors: Vec<SamplingMeasure> },
    /// `base` reweighted by a density factor `weight`, with
    /// `bound ≥ sup weight` as acceptance-rejection envelope.
    Reweighted { base: Box<SamplingMeasure>, weight: WeightFunction, bound: f64 },
    /// Finite atom set with probability weights.
    DiscreteAtoms { points: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl SamplingMeasure {
    /// Uniform distribution on a 1-D interval.
    pub fn uniform_1d(lo: f64, hi: f64) -> Self {
        SamplingMeasure::BoxUniform { lower: vec![lo], upper: vec![hi] }
    }

    /// Point mass at `x`.
    pub fn dirac(x: Vec<f64>) -> Self {
        SamplingMeasure::DiscreteAtoms { points: vec![x], weights: vec![1.0] }
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            SamplingMeasure::BoxUniform { lower, .. } => lower.len(),
            SamplingMeasure::GaussianMixture { means, .. } => {
                means.first().map_or(0, |m| m.len())
            }
            SamplingMeasure::Pushforward { base, map } => map.output_dim(base.dim()),
            SamplingMeasure::Mixture { components, .. } => {
                components.first().map_or(0, |c| c.dim())
            }
            SamplingMeasure::Product { factors } => factors.iter().map(|f| f.dim()).sum(),
            SamplingMeasure::Reweighted { base, .. } => base.dim(),
            SamplingMeasure::DiscreteAtoms { points, .. } => {
                points.first().map_or(0, |p| p.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingMeasure::BoxUniform { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidSpec("box bounds must match and be nonempty".into()));
                }
                for (lo, hi) in lower.iter().zip(upper) {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::InvalidSpec(alloc::format!(
                            "box needs lower < upper componentwise, got [{lo}, {hi}]"
                        )));
                    }
                }
            }
            SamplingMeasure::GaussianMixture { weights, means, stddevs } => {
                check_simplex(weights)?;
                if means.len() != weights.len() || stddevs.len() != weights.len() {
                    return Err(Error::InvalidSpec(
                        "mixture needs one mean/stddev vector per weight".into(),
                    ));
                }
                let d = self.dim();
                for (m, s) in means.iter().zip(stddevs) {
                    if m.len() != d || s.len() != d {
                        return Err(Error::InvalidSpec(
                            "mixture components must share one dimension".into(),
                        ));
                    }
                    if m.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteInput);
                    }
                    if s.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                        return Err(Error::InvalidSpec("stddevs must be positive".into()));
                    }
                }
            }
            SamplingMeasure::Pushforward { base, map } => {
                base.validate()?;
                map.validate(base.dim())?;
            }
            SamplingMeasure::Mixture { weights, components } => {
                check_simplex(weights)?;
                if components.len() != weights.len() || components.is_empty() {
                    return Err(Error::InvalidSpec(
                        "mixture needs one component per weight".into(),
                    ));
                }
                let d = components[0].dim();
                for c in components {
                    c.validate()?;
                    if c.dim() != d {
                        return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
                    }
                }
            }
            SamplingMeasure::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidSpec("product needs at least one factor".into()));
                }
                for f in factors {
                    f.validate()?;
                }
            }
            SamplingMeasure::Reweighted { base, bound, .. } => {
                base.validate()?;
                if !bound.is_finite() || *bound <= 0.0 {
                    return Err(Error::InvalidSpec(alloc::format!(
                        "reweighting envelope bound must be positive, got {bound}"
                    )));
                }
            }
            SamplingMeasure::DiscreteAtoms { points, weights } => {
                check_simplex(weights)?;
                if points.len() != weights.len() || points.is_empty() {
                    return Err(Error::InvalidSpec("need one atom per weight".into()));
                }
                let d = points[0].len();
                for p in points {
                    if p.len() != d {
                        return Err(Error::DimensionMismatch { expected: d, got: p.len() });
                    }
                    if p.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteInput);
                    }
                }
            }
        }
        Ok(())
    }

    /// Draws `n` i.i.d. points; bit-identical for identical
    /// `(self, n, seed)`. Reweighted measures delegate to
    /// [`accept_reject`].
    pub fn sample(&self, n: usize, seed: u64) -> Result<PointBatch> {
        self.validate()?;
        let mut rng = rng::seeded(seed);
        self.sample_with(n, &mut rng)
    }

    /// Like [`SamplingMeasure::sample`] but drawing from a live
    /// generator, so consecutive calls continue one stream.
    pub fn sample_with(&self, n: usize, rng: &mut ChaCha12Rng) -> Result<PointBatch> {
        if let SamplingMeasure::Reweighted { base, weight, bound } = self {
            return Ok(accept_reject_with(base, weight, *bound, n, rng)?.0);
        }
        let mut out = PointBatch::with_capacity(self.dim(), n);
        let mut row = Vec::with_capacity(self.dim());
        for _ in 0..n {
            row.clear();
            self.sample_row(rng, &mut row)?;
            out.push_row(&row);
        }
        Ok(out)
    }

    fn sample_row(&self, rng: &mut ChaCha12Rng, out: &mut Vec<f64>) -> Result<()> {
        match self {
            SamplingMeasure::BoxUniform { lower, upper } => {
                for (lo, hi) in lower.iter().zip(upper) {
                    out.push(lo + rng.random::<f64>() * (hi - lo));
                }
            }
            SamplingMeasure::GaussianMixture { weights, means, stddevs } => {
                let k = pick_index(weights, rng);
                for (m, s) in means[k].iter().zip(&stddevs[k]) {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(m + s * z);
                }
            }
            SamplingMeasure::Pushforward { base, map } => {
                let mut inner = Vec::with_capacity(base.dim());
                base.sample_row(rng, &mut inner)?;
                map.apply(&inner, out);
            }
            SamplingMeasure::Mixture { weights, components } => {
                let k = pick_index(weights, rng);
                components[k].sample_row(rng, out)?;
            }
            SamplingMeasure::Product { factors } => {
                for f in factors {
                    f.sample_row(rng, out)?;
                }
            }
            SamplingMeasure::Reweighted { base, weight, bound } => {
                let batch = accept_reject_with(base, weight, *bound, 1, rng)?.0;
                out.extend_from_slice(batch.row(0));
            }
            SamplingMeasure::DiscreteAtoms { points, weights } => {
                let k = pick_index(weights, rng);
                out.extend_from_slice(&points[k]);
            }
        }
        Ok(())
    }

    /// CDF of a 1-D measure, when it has a usable form.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        if self.dim() != 1 {
            return None;
        }
        match self {
            SamplingMeasure::BoxUniform { lower, upper } => {
                Some(((x - lower[0]) / (upper[0] - lower[0])).clamp(0.0, 1.0))
            }
            SamplingMeasure::GaussianMixture { weights, means, stddevs } => {
                let mut acc = 0.0;
                for ((w, m), s) in weights.iter().zip(means).zip(stddevs) {
                    acc += w * normal_cdf((x - m[0]) / s[0]);
                }
                Some(acc)
            }
            SamplingMeasure::Pushforward { base, map } => {
                let lo = base.lower_bound_1d()?;
                if !map.increasing_1d_from(lo) {
                    return None;
                }
                match map.invert_1d(x) {
                    Some(u) => base.cdf(u),
                    // Below the increasing branch's range.
                    None => Some(0.0),
                }
            }
            SamplingMeasure::Mixture { weights, components } => {
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w * c.cdf(x)?;
                }
                Some(acc)
            }
            SamplingMeasure::DiscreteAtoms { points, weights } => Some(
                points
                    .iter()
                    .zip(weights)
                    .filter(|(p, _)| p[0] <= x)
                    .map(|(_, w)| *w)
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Generalized inverse CDF `inf { x : F(x) ≥ u }` of a 1-D measure,
    /// for `u` in `(0, 1)`. Closed forms where available, otherwise
    /// bisection on [`SamplingMeasure::cdf`].
    pub fn inverse_cdf(&self, u: f64) -> Option<f64> {
        if self.dim() != 1 || !(0.0..=1.0).contains(&u) {
            return None;
        }
        match self {
            SamplingMeasure::BoxUniform { lower, upper } => {
                Some(lower[0] + u * (upper[0] - lower[0]))
            }
            SamplingMeasure::Pushforward { base, map } => {
                let lo = base.lower_bound_1d()?;
                if !map.increasing_1d_from(lo) {
                    return None;
                }
                let x = base.inverse_cdf(u)?;
                let mut out = Vec::with_capacity(1);
                map.apply(&[x], &mut out);
                Some(out[0])
            }
            SamplingMeasure::DiscreteAtoms { points, weights } => {
                let mut order: Vec<usize> = (0..points.len()).collect();
                order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
                let mut acc = 0.0;
                for &i in &order {
                    acc += weights[i];
                    if acc >= u - SIMPLEX_TOL {
                        return Some(points[i][0]);
                    }
                }
                Some(points[order[points.len() - 1]][0])
            }
            SamplingMeasure::GaussianMixture { .. } | SamplingMeasure::Mixture { .. } => {
                self.bisect_quantile(u)
            }
            _ => None,
        }
    }

    /// Whether 1-D quantile evaluation is available.
    pub fn has_inverse_cdf(&self) -> bool {
        self.dim() == 1 && self.inverse_cdf(0.5).is_some()
    }

    fn bisect_quantile(&self, u: f64) -> Option<f64> {
        // Expand a bracket, then bisect the monotone CDF.
        let (mut lo, mut hi) = self.rough_range_1d()?;
        let mut width = (hi - lo).max(1.0);
        for _ in 0..128 {
            if self.cdf(lo)? <= u {
                break;
            }
            lo -= width;
            width *= 2.0;
        }
        width = (hi - lo).max(1.0);
        for _ in 0..128 {
            if self.cdf(hi)? >= u {
                break;
            }
            hi += width;
            width *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? >= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// A crude interval containing most of the mass of a 1-D measure.
    fn rough_range_1d(&self) -> Option<(f64, f64)> {
        match self {
            SamplingMeasure::BoxUniform { lower, upper } => Some((lower[0], upper[0])),
            SamplingMeasure::GaussianMixture { means, stddevs, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (m, s) in means.iter().zip(stddevs) {
                    lo = lo.min(m[0] - 10.0 * s[0]);
                    hi = hi.max(m[0] + 10.0 * s[0]);
                }
                Some((lo, hi))
            }
            SamplingMeasure::Mixture { components, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in components {
                    let (a, b) = c.rough_range_1d()?;
                    lo = lo.min(a);
                    hi = hi.max(b);
                }
                Some((lo, hi))
            }
            SamplingMeasure::DiscreteAtoms { points, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in points {
                    lo = lo.min(p[0]);
                    hi = hi.max(p[0]);
                }
                Some((lo, hi))
            }
            SamplingMeasure::Pushforward { .. } => {
                let a = self.inverse_cdf_direct_ends()?;
                Some(a)
            }
            _ => None,
        }
    }

    fn inverse_cdf_direct_ends(&self) -> Option<(f64, f64)> {
        Some((self.inverse_cdf(1e-9)?, self.inverse_cdf(1.0 - 1e-9)?))
    }

    /// Lower edge of the support of a 1-D measure, if known.
    fn lower_bound_1d(&self) -> Option<f64> {
        match self {
            SamplingMeasure::BoxUniform { lower, .. } if lower.len() == 1 => Some(lower[0]),
            SamplingMeasure::DiscreteAtoms { points, .. } if self.dim() == 1 => points
                .iter()
                .map(|p| p[0])
                .min_by(f64::total_cmp),
            SamplingMeasure::Mixture { components, .. } if self.dim() == 1 => {
                let mut lo = f64::INFINITY;
                for c in components {
                    lo = lo.min(c.lower_bound_1d()?);
                }
                Some(lo)
            }
            SamplingMeasure::Pushforward { base, map } => {
                let lo = base.lower_bound_1d()?;
                if !map.increasing_1d_from(lo) {
                    return None;
                }
                let mut out = Vec::with_capacity(1);
                map.apply(&[lo], &mut out);
                Some(out[0])
            }
            _ => None,
        }
    }
}

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidSpec("weight vector is empty".into()));
    }
    let mut sum = 0.0;
    for w in weights {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::InvalidSpec(alloc::format!(
                "weights must be nonnegative and finite, got {w}"
            )));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL * weights.len() as f64 {
        return Err(Error::InvalidSpec(alloc::format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

fn pick_index(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / core::f64::consts::SQRT_2))
}

/// Samples `n` points distributed as `w·d(base)` (up to normalization)
/// by acceptance-rejection with envelope `bound ≥ sup w`; also returns
/// the observed acceptance rate.
///
/// Fails with [`Error::BoundViolated`] if any candidate weight exceeds
/// the envelope, and with [`Error::EnvelopeTooLoose`] when fewer than
/// one in `10^4` candidates is accepted after a warm-up volume.
pub fn accept_reject(
    base: &SamplingMeasure,
    weight: &WeightFunction,
    bound: f64,
    n: usize,
    seed: u64,
) -> Result<(PointBatch, f64)> {
    base.validate()?;
    let mut rng = rng::seeded(seed);
    accept_reject_with(base, weight, bound, n, &mut rng)
}

const MIN_ACCEPT_RATE: f64 = 1e-4;
const RATE_CHECK_AFTER: usize = 10_000;

pub fn accept_reject_with(
    base: &SamplingMeasure,
    weight: &WeightFunction,
    bound: f64,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(PointBatch, f64)> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::InvalidSpec(alloc::format!(
            "acceptance-rejection bound must be positive, got {bound}"
        )));
    }
    let mut accepted = PointBatch::with_capacity(base.dim(), n);
    let mut drawn = 0usize;
    while accepted.len() < n {
        let missing = n - accepted.len();
        let chunk = (4 * missing).clamp(64, 65_536);
        let candidates = base.sample_with(chunk, rng)?;
        let weights = weight.eval_batch(&candidates);
        for (row, &w) in candidates.rows().zip(&weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidSpec(alloc::format!(
                    "weight function produced an invalid value {w}"
                )));
            }
            if w > bound * (1.0 + 1e-12) {
                return Err(Error::BoundViolated { observed: w, bound });
            }
            let u: f64 = rng.random();
            if u * bound < w && accepted.len() < n {
                accepted.push_row(row);
            }
        }
        drawn += chunk;
        let rate = accepted.len() as f64 / drawn as f64;
        if drawn >= RATE_CHECK_AFTER && rate < MIN_ACCEPT_RATE {
            return Err(Error::EnvelopeTooLoose { rate, candidates: drawn });
        }
    }
    let rate = accepted.len() as f64 / drawn as f64;
    Ok((accepted, rate))
}

const KMEANS_SAMPLES: usize = 100_000;
const KMEANS_ITERATIONS: usize = 40;

/// Quantizes a marginal into `k` atoms.
///
/// 1-D measures with quantile evaluation get the midpoint-quantile grid
/// `F⁻¹((i−0.5)/k)` with uniform weights (atoms ascending). Atom sets
/// with at most `k` atoms pass through unchanged. Everything else is
/// quantized by k-means on a large sample, with cluster masses as
/// weights.
pub fn quantize(marginal: &SamplingMeasure, k: usize, seed: u64) -> Result<SamplingMeasure> {
    if k < 1 {
        return Err(Error::InvalidSpec("quantization needs k >= 1".into()));
    }
    marginal.validate()?;
    if let SamplingMeasure::DiscreteAtoms { points, .. } = marginal {
        if points.len() <= k {
            return Ok(marginal.clone());
        }
    }
    if marginal.dim() == 1 && marginal.has_inverse_cdf() {
        let mut atoms = Vec::with_capacity(k);
        for i in 0..k {
            let u = (i as f64 + 0.5) / k as f64;
            atoms.push(vec![marginal.inverse_cdf(u).expect("quantile availability checked")]);
        }
        return Ok(SamplingMeasure::DiscreteAtoms {
            points: atoms,
            weights: vec![1.0 / k as f64; k],
        });
    }
    kmeans_quantize(marginal, k, seed)
}

fn kmeans_quantize(marginal: &SamplingMeasure, k: usize, seed: u64) -> Result<SamplingMeasure> {
    let sample = marginal.sample(KMEANS_SAMPLES, seed)?;
    let d = sample.dim();
    let n = sample.len();
    let mut rng = rng::stream_rng(seed, 1);

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(sample.row(rng.random_range(0..n)).to_vec());
    let mut dist2 = vec![f64::INFINITY; n];
    while centers.len() < k {
        let newest = &centers[centers.len() - 1];
        let mut total = 0.0;
        for (i, row) in sample.rows().enumerate() {
            let d2 = sq_dist(row, newest);
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
            total += dist2[i];
        }
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                target -= d2;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(sample.row(pick).to_vec());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        let mut moved = false;
        for (i, row) in sample.rows().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d2 = sq_dist(row, center);
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                moved = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, row) in sample.rows().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (ctr, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *ctr = s / counts[c] as f64;
                }
            }
        }
        if !moved {
            break;
        }
    }

    let mut counts = vec![0usize; k];
    for &a in &assign {
        counts[a] += 1;
    }
    let mut pairs: Vec<(Vec<f64>, f64)> = centers
        .into_iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(ctr, c)| (ctr, c as f64 / n as f64))
        .collect();
    if d == 1 {
        pairs.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
    }
    let (points, weights): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(SamplingMeasure::DiscreteAtoms { points, weights })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
