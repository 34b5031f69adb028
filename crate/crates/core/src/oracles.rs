//! Exact and analytic reference values: a dense two-phase simplex for
//! discretized transport instances, comonotone-coupling references and
//! closed-form values. These are the verification backbone — every
//! solver result on a desk-scale instance can be sandwiched between
//! oracle values.
//!
//! The LP solver is a plain dense tableau simplex (Dantzig pricing with
//! a Bland fallback against cycling). That is deliberate: instances
//! here stay below ~10⁴ variables and an exact, easily-audited solver
//! beats a fast one.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::measures::SamplingMeasure;
use crate::problems::CostFunction;
use crate::rng;

/// Hard cap on the number of coupling variables of an instance.
const MAX_VARIABLES: usize = 1_000_000;

/// Optimization sense for [`discrete_lp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

/// One extra equality row `Σ_cells coeff·w = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub coeffs: Vec<f64>,
    pub target: f64,
}

/// A fully discretized transport instance.
///
/// Cells of the coupling are indexed row-major over the marginal atom
/// indices (last marginal fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    /// Atom locations per marginal.
    pub supports: Vec<Vec<Vec<f64>>>,
    /// Probability weights per marginal.
    pub weights: Vec<Vec<f64>>,
    /// Cost tensor, flattened over cells.
    pub cost: Vec<f64>,
    /// Optional moment equality rows.
    pub moment_rows: Vec<MomentRow>,
    /// Adds the martingale rows `Σ_s w(t,s)·(y_s − x_t) = 0` per first-
    /// marginal atom `t`; requires exactly two 1-D marginals.
    pub martingale: bool,
}

impl DiscreteInstance {
    /// Builds a plain marginal-constrained instance with the cost
    /// evaluated on every cell.
    pub fn from_cost_fn(
        marginals: &[SamplingMeasure],
        cost: &CostFunction,
    ) -> Result<DiscreteInstance> {
        let mut supports = Vec::new();
        let mut weights = Vec::new();
        for m in marginals {
            match m {
                SamplingMeasure::DiscreteAtoms { points, weights: w } => {
                    supports.push(points.clone());
                    weights.push(w.clone());
                }
                _ => {
                    return Err(Error::InvalidSpec(
                        "discrete instances need atomic marginals (quantize first)".into(),
                    ))
                }
            }
        }
        let sizes: Vec<usize> = supports.iter().map(|s| s.len()).collect();
        let cells: usize = sizes.iter().product();
        let mut cost_values = Vec::with_capacity(cells);
        let mut point = Vec::new();
        for cell in 0..cells {
            point.clear();
            let mut rem = cell;
            let mut idx = vec![0usize; sizes.len()];
            for i in (0..sizes.len()).rev() {
                idx[i] = rem % sizes[i];
                rem /= sizes[i];
            }
            for (i, s) in supports.iter().enumerate() {
                point.extend_from_slice(&s[idx[i]]);
            }
            cost_values.push(cost.eval(&point));
        }
        Ok(DiscreteInstance {
            supports,
            weights,
            cost: cost_values,
            moment_rows: Vec::new(),
            martingale: false,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.supports.iter().map(|s| s.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.supports.len() < 2 || self.supports.len() != self.weights.len() {
            return Err(Error::InvalidSpec(
                "instance needs at least two marginals with matching weights".into(),
            ));
        }
        let cells = self.cell_count();
        if cells == 0 || cells > MAX_VARIABLES {
            return Err(Error::InvalidSpec(alloc::format!(
                "cell count {cells} outside (0, {MAX_VARIABLES}]"
            )));
        }
        if self.cost.len() != cells {
            return Err(Error::DimensionMismatch { expected: cells, got: self.cost.len() });
        }
        for (s, w) in self.supports.iter().zip(&self.weights) {
            if s.len() != w.len() || s.is_empty() {
                return Err(Error::InvalidSpec("one weight per atom required".into()));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSpec(alloc::format!(
                    "marginal weights must be a probability vector (sum {sum})"
                )));
            }
        }
        for row in &self.moment_rows {
            if row.coeffs.len() != cells {
                return Err(Error::DimensionMismatch { expected: cells, got: row.coeffs.len() });
            }
        }
        if self.martingale {
            let two_scalar = self.supports.len() == 2
                && self.supports.iter().all(|s| s.iter().all(|p| p.len() == 1));
            if !two_scalar {
                return Err(Error::InvalidSpec(
                    "martingale rows need exactly two scalar marginals".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Exact LP optimum and optimizer of a discrete instance.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    /// Optimal coupling weights, one per cell.
    pub coupling: Vec<f64>,
}

/// Solves the finite transport LP exactly (feasibility/optimality to
/// ~1e-9): coupling weights ≥ 0, marginal sums fixed, plus optional
/// moment and martingale equality rows.
pub fn discrete_lp(inst: &DiscreteInstance, sense: Sense) -> Result<LpSolution> {
    inst.validate()?;
    let sizes: Vec<usize> = inst.supports.iter().map(|s| s.len()).collect();
    let cells = inst.cell_count();

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    // Marginal rows: Σ_{cells hitting atom t of marginal i} w = weight.
    let mut stride = vec![1usize; sizes.len()];
    for i in (0..sizes.len().saturating_sub(1)).rev() {
        stride[i] = stride[i + 1] * sizes[i + 1];
    }
    for (i, &ni) in sizes.iter().enumerate() {
        for t in 0..ni {
            let mut coeffs = vec![0.0; cells];
            for (cell, c) in coeffs.iter_mut().enumerate() {
                if (cell / stride[i]) % ni == t {
                    *c = 1.0;
                }
            }
            rows.push((coeffs, inst.weights[i][t]));
        }
    }
    for m in &inst.moment_rows {
        rows.push((m.coeffs.clone(), m.target));
    }
    if inst.martingale {
        let xs = &inst.supports[0];
        let ys = &inst.supports[1];
        for (t, xt) in xs.iter().enumerate() {
            let mut coeffs = vec![0.0; cells];
            for (s, ysv) in ys.iter().enumerate() {
                coeffs[t * ys.len() + s] = ysv[0] - xt[0];
            }
            rows.push((coeffs, 0.0));
        }
    }

    let objective: Vec<f64> = match sense {
        Sense::Max => inst.cost.clone(),
        Sense::Min => inst.cost.iter().map(|c| -c).collect(),
    };
    let solution = simplex_max(&objective, &rows)?;
    let value = match sense {
        Sense::Max => solution.value,
        Sense::Min => -solution.value,
    };
    Ok(LpSolution { value, coupling: solution.coupling })
}

struct SimplexResult {
    value: f64,
    coupling: Vec<f64>,
}

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;

/// Dense two-phase primal simplex for `max cᵀx, Ax = b, x ≥ 0`.
fn simplex_max(c: &[f64], rows: &[(Vec<f64>, f64)]) -> Result<SimplexResult> {
    let n = c.len();
    let m = rows.len();
    let total = n + m; // structural + one artificial per row
    let width = total + 1; // plus RHS column
    let mut tab = vec![0.0; (m + 1) * width];
    let mut basis = vec![0usize; m];

    for (i, (coeffs, rhs)) in rows.iter().enumerate() {
        let flip = if *rhs < 0.0 { -1.0 } else { 1.0 };
        let row = &mut tab[i * width..(i + 1) * width];
        for (j, &a) in coeffs.iter().enumerate() {
            row[j] = flip * a;
        }
        row[n + i] = 1.0;
        row[total] = flip * rhs;
        basis[i] = n + i;
    }

    // Phase 1: maximize −Σ artificials. Objective row = Σ constraint
    // rows over the artificial basis (so reduced costs start canonical).
    for j in 0..width {
        let mut s = 0.0;
        for i in 0..m {
            s += tab[i * width + j];
        }
        if j < n || j == total {
            tab[m * width + j] = s;
        } else {
            tab[m * width + j] = 0.0;
        }
    }
    run_simplex(&mut tab, &mut basis, m, n, width, n)?;
    let infeasibility = tab[m * width + total];
    if infeasibility.abs() > FEAS_TOL * (1.0 + m as f64) {
        return Err(Error::Infeasible(alloc::format!(
            "phase-1 residual {infeasibility:.3e} (constraints cannot all hold)"
        )));
    }

    // Drive artificials out of the basis where a structural pivot exists;
    // rows with no structural support are redundant and stay inert.
    for i in 0..m {
        if basis[i] >= n {
            let pivot_col = (0..n).find(|&j| tab[i * width + j].abs() > PIVOT_TOL);
            if let Some(j) = pivot_col {
                pivot(&mut tab, &mut basis, m, width, i, j);
            }
        }
    }

    // Phase 2 objective row: z_j − c_j over the current basis.
    for j in 0..width {
        let mut s = if j < n { -c[j] } else { 0.0 };
        for i in 0..m {
            let cb = if basis[i] < n { c[basis[i]] } else { 0.0 };
            s += cb * tab[i * width + j];
        }
        tab[m * width + j] = s;
    }
    let rhs_obj = {
        let mut s = 0.0;
        for i in 0..m {
            let cb = if basis[i] < n { c[basis[i]] } else { 0.0 };
            s += cb * tab[i * width + total];
        }
        s
    };
    tab[m * width + total] = rhs_obj;
    run_simplex(&mut tab, &mut basis, m, n, width, n)?;

    let mut coupling = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            coupling[basis[i]] = tab[i * width + total];
        }
    }
    Ok(SimplexResult { value: tab[m * width + total], coupling })
}

/// Pivots until no entering column improves the objective. Columns at
/// index `allowed` and beyond never enter (artificials in phase 2).
fn run_simplex(
    tab: &mut [f64],
    basis: &mut [usize],
    m: usize,
    _n: usize,
    width: usize,
    allowed: usize,
) -> Result<()> {
    let total = width - 1;
    let mut degenerate_streak = 0usize;
    let max_iterations = 20_000 + 200 * (m + allowed);
    for _ in 0..max_iterations {
        // Entering column: most negative reduced cost (Dantzig); after
        // a long degenerate streak switch to Bland's rule.
        let bland = degenerate_streak > 64;
        let mut enter = None;
        let mut best = -PIVOT_TOL;
        for j in 0..allowed {
            let r = tab[m * width + j];
            if r < -PIVOT_TOL {
                if bland {
                    enter = Some(j);
                    break;
                }
                if r < best {
                    best = r;
                    enter = Some(j);
                }
            }
        }
        let Some(j) = enter else {
            return Ok(());
        };

        // Ratio test (Bland ties on the basis index to prevent cycling).
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = tab[i * width + j];
            if a > PIVOT_TOL {
                let ratio = tab[i * width + total] / a;
                let better = ratio < best_ratio - 1e-12
                    || (ratio < best_ratio + 1e-12
                        && leave.is_some_and(|l: usize| basis[i] < basis[l]));
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(i) = leave else {
            return Err(Error::Unbounded);
        };
        if best_ratio < 1e-12 {
            degenerate_streak += 1;
        } else {
            degenerate_streak = 0;
        }
        pivot(tab, basis, m, width, i, j);
    }
    Err(Error::Infeasible(String::from(
        "simplex iteration limit exceeded (numerically degenerate instance)",
    )))
}

fn pivot(tab: &mut [f64], basis: &mut [usize], m: usize, width: usize, row: usize, col: usize) {
    let p = tab[row * width + col];
    for v in &mut tab[row * width..(row + 1) * width] {
        *v /= p;
    }
    for i in 0..=m {
        if i == row {
            continue;
        }
        let factor = tab[i * width + col];
        if factor == 0.0 {
            continue;
        }
        for j in 0..width {
            tab[i * width + j] -= factor * tab[row * width + j];
        }
        tab[i * width + col] = 0.0;
    }
    basis[row] = col;
}

/// Monte-Carlo value of `∫ cost d(comonotone coupling)` of two 1-D
/// marginals: common uniforms through both quantile maps when both
/// marginals expose one, otherwise sorted independent samples.
pub fn comonotone_value(
    mu1: &SamplingMeasure,
    mu2: &SamplingMeasure,
    cost: &CostFunction,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if mu1.dim() != 1 || mu2.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu1.dim().max(mu2.dim()) });
    }
    if n < 1 {
        return Err(Error::InvalidSpec("need n >= 1 samples".into()));
    }
    mu1.validate()?;
    mu2.validate()?;
    let mut total = 0.0;
    if mu1.has_inverse_cdf() && mu2.has_inverse_cdf() {
        let mut rng = rng::seeded(seed);
        for _ in 0..n {
            let u: f64 = rng.random();
            let x = mu1.inverse_cdf(u).expect("quantile availability checked");
            let y = mu2.inverse_cdf(u).expect("quantile availability checked");
            total += cost.eval(&[x, y]);
        }
    } else {
        let mut xs: Vec<f64> =
            mu1.sample(n, rng::derive_seed(seed, 1))?.data().to_vec();
        let mut ys: Vec<f64> =
            mu2.sample(n, rng::derive_seed(seed, 2))?.data().to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        for (x, y) in xs.iter().zip(&ys) {
            total += cost.eval(&[*x, *y]);
        }
    }
    Ok(total / n as f64)
}

/// Deterministic quadrature flavor of [`comonotone_value`]: pairs the
/// midpoint quantiles `F⁻¹((i−0.5)/k)` of both marginals. On matching
/// uniform-weight atom grids this reproduces the sorted atom pairing
/// exactly.
pub fn comonotone_grid_value(
    mu1: &SamplingMeasure,
    mu2: &SamplingMeasure,
    cost: &CostFunction,
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidSpec("need k >= 1 quantile levels".into()));
    }
    if !(mu1.has_inverse_cdf() && mu2.has_inverse_cdf()) {
        return Err(Error::InvalidSpec(
            "comonotone grid values need quantile evaluation on both marginals".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..k {
        let u = (i as f64 + 0.5) / k as f64;
        let x = mu1.inverse_cdf(u).expect("checked");
        let y = mu2.inverse_cdf(u).expect("checked");
        total += cost.eval(&[x, y]);
    }
    Ok(total / k as f64)
}

/// Sharp upper bound for the copula value at `z`: `min_i z_i`.
pub fn frechet_hoeffding(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::InvalidSpec("need at least one coordinate".into()));
    }
    if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidSpec("coordinates must lie in [0, 1]".into()));
    }
    Ok(z.iter().copied().min_by(f64::total_cmp).unwrap())
}

/// Reference value of the two-period martingale problem with uniform
/// marginals on `[−1,1]` and `[−2,2]` and cost `−|x−y|^rho`: `−1` for
/// every `rho > 2`, unknown otherwise.
pub fn mot_reference(rho: f64) -> Option<f64> {
    if rho > 2.0 {
        Some(-1.0)
    } else {
        None
    }
}
