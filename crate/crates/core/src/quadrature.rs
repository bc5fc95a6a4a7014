//! Globally adaptive tensor Gauss-Legendre cubature, and the integrals built
//! on it: the index integral, the rotation index of a plane curve, and the
//! Laplace integral
//!
//! ```text
//! J(f) = int exp(-lambda |f(x) - f(y)|^2 / 2) det [D_f(x)^T ; D_f(y)^T] dx dy
//! ```
//!
//! which vanishes identically. As `lambda` grows its mass concentrates on the
//! diagonal and on the double points; each double point `a` contributes
//! `2 (2 pi / lambda)^n sigma(a)` to leading order, and the diagonal cancels
//! the sum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::immersion::{outside, Immersion};
use crate::intersections::{
    find_self_intersections, index_from_records, stacked_determinant, IntersectionRecord,
    SolverConfig,
};
use crate::stiefel_form::{integrand_pullback, whitney_integrand_1d, OmegaEvaluator};

/// Cells split per batch; fixed so results do not depend on the thread count.
const BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Gauss points per axis per cell.
    pub rule_order: usize,
    /// The box is first cut into this many equal pieces per axis.
    pub initial_divisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-4,
            rel_tol: 1e-4,
            max_subdivisions: 100_000,
            rule_order: 9,
            initial_divisions: 4,
        }
    }
}

impl QuadratureConfig {
    /// Looser settings for the `2n`-dimensional Laplace integrals.
    pub fn laplace() -> Self {
        QuadratureConfig {
            abs_tol: 1e-3,
            rel_tol: 1e-3,
            max_subdivisions: 200_000,
            rule_order: 5,
            initial_divisions: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(3..=15).contains(&self.rule_order) {
            return Err(Error::InvalidConfig(format!(
                "rule_order must be in 3..=15, got {}",
                self.rule_order
            )));
        }
        if self.initial_divisions == 0 {
            return Err(Error::InvalidConfig(
                "initial_divisions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: u64,
    pub cells: usize,
}

/// Gauss-Legendre rule on `[-1, 1]` with the orthonormal Legendre values at
/// its nodes, used for the coefficient-tail error estimate.
#[derive(Clone, Debug)]
struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `legendre[k][i]` = normalized `P_k(nodes[i])`.
    legendre: Vec<Vec<f64>>,
}

impl Rule {
    fn new(m: usize) -> Rule {
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(m, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(m, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        let legendre = (0..m)
            .map(|k| {
                let scale = ((2 * k + 1) as f64 / 2.0).sqrt();
                nodes
                    .iter()
                    .map(|&x| scale * legendre_with_derivative(k, x).0)
                    .collect()
            })
            .collect();
        Rule {
            nodes,
            weights,
            legendre,
        }
    }

    fn order(&self) -> usize {
        self.nodes.len()
    }
}

fn legendre_with_derivative(k: usize, x: f64) -> (f64, f64) {
    if k == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=k {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = k as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[derive(Clone, Debug)]
struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: f64,
    error: f64,
    axis: usize,
    id: u64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    // max-heap on error; older cells first among ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Value and error estimate of the tensor rule on one cell.
///
/// The samples are expanded in orthonormal Legendre polynomials; the energy
/// in the two highest degree shells, damped once by its ratio to the next two
/// shells, estimates the unresolved part. The cell is later split along the
/// axis holding the most high-degree energy.
fn apply_rule<G>(g: &G, rule: &Rule, lo: &[f64], hi: &[f64]) -> Result<(f64, f64, usize)>
where
    G: Fn(&[f64]) -> Result<f64> + Sync,
{
    let d = lo.len();
    let m = rule.order();
    let total = m.pow(d as u32);
    let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b + a)).collect();
    let volume: f64 = half.iter().map(|h| 2.0 * h).product();

    // weighted samples, axis 0 slowest
    let mut values = vec![0.0; total];
    let mut point = vec![0.0; d];
    let mut sum = 0.0;
    let mut all_zero = true;
    for (code, slot) in values.iter_mut().enumerate() {
        let mut c = code;
        let mut w = 1.0;
        for a in (0..d).rev() {
            let i = c % m;
            c /= m;
            point[a] = mid[a] + half[a] * rule.nodes[i];
            w *= rule.weights[i];
        }
        let v = g(&point)?;
        if !v.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "integrand is not finite at {point:?}"
            )));
        }
        all_zero &= v == 0.0;
        sum += w * v;
        *slot = w * v;
    }
    let value = sum * volume / 2f64.powi(d as i32);
    let widest = widest_axis(lo, hi);
    if all_zero {
        return Ok((0.0, 0.0, widest));
    }

    // orthonormal Legendre coefficients by one transform per axis
    let mut coeffs = values;
    let mut scratch = vec![0.0; total];
    let mut stride = total;
    for _ in 0..d {
        stride /= m;
        let block = stride * m;
        for base in (0..total).step_by(block) {
            for inner in 0..stride {
                for k in 0..m {
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += rule.legendre[k][i] * coeffs[base + i * stride + inner];
                    }
                    scratch[base + k * stride + inner] = acc;
                }
            }
        }
        std::mem::swap(&mut coeffs, &mut scratch);
    }
    // energy per shell of maximal degree, and high-degree energy per axis
    let mut shells = vec![0.0; m];
    let mut per_axis = vec![0.0; d];
    for (code, c) in coeffs.iter().enumerate() {
        let mut rest = code;
        let mut top = 0;
        for a in (0..d).rev() {
            let k = rest % m;
            rest /= m;
            top = top.max(k);
            if k + 2 >= m {
                per_axis[a] += c * c;
            }
        }
        shells[top] += c * c;
    }
    let tail = (shells[m - 1] + shells[m - 2]).sqrt();
    let below = if m >= 5 {
        (shells[m - 3] + shells[m - 4]).sqrt()
    } else {
        0.0
    };
    // one further step of the observed decay, never more optimistic than that
    let decay = if below > 0.0 {
        (tail / below).min(1.0)
    } else {
        1.0
    };
    let scale = volume / 2f64.powf(d as f64 / 2.0);
    let error = scale * tail * decay + 1e-15 * value.abs();
    let mut axis = widest;
    for a in 0..d {
        if per_axis[a] > per_axis[axis] {
            axis = a;
        }
    }
    Ok((value, error, axis))
}

fn widest_axis(lo: &[f64], hi: &[f64]) -> usize {
    let mut best = 0;
    for a in 1..lo.len() {
        if hi[a] - lo[a] > hi[best] - lo[best] {
            best = a;
        }
    }
    best
}

/// Splits `[lo, hi]` into `divisions` equal pieces per axis.
pub fn uniform_cells(lo: &[f64], hi: &[f64], divisions: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let d = lo.len();
    let total = divisions.pow(d as u32);
    (0..total)
        .map(|mut code| {
            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            for axis in (0..d).rev() {
                let i = code % divisions;
                code /= divisions;
                let w = (hi[axis] - lo[axis]) / divisions as f64;
                a[axis] = lo[axis] + w * i as f64;
                b[axis] = if i + 1 == divisions {
                    hi[axis]
                } else {
                    lo[axis] + w * (i + 1) as f64
                };
            }
            (a, b)
        })
        .collect()
}

/// Adaptive integral of `g` over the box `[lo, hi]`.
///
/// Returns [`Error::Budget`] (carrying the current value and estimate) if
/// `max_subdivisions` splits do not reach the tolerance.
pub fn integrate_adaptive<G>(
    g: G,
    lo: &[f64],
    hi: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    G: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::InvalidConfig(format!("bad box {lo:?} .. {hi:?}")));
    }
    integrate_cells(g, uniform_cells(lo, hi, cfg.initial_divisions), cfg)
}

/// Adaptive integral over a union of non-overlapping boxes.
pub fn integrate_cells<G>(
    g: G,
    initial: Vec<(Vec<f64>, Vec<f64>)>,
    cfg: &QuadratureConfig,
) -> Result<Integral>
where
    G: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let rule = Rule::new(cfg.rule_order);
    let per_cell = initial
        .first()
        .map_or(0, |(lo, _)| cfg.rule_order.pow(lo.len() as u32)) as u64;
    let evaluate = |boxes: Vec<(Vec<f64>, Vec<f64>)>, first_id: u64| -> Result<Vec<Cell>> {
        boxes
            .into_par_iter()
            .enumerate()
            .map(|(k, (lo, hi))| {
                let (value, error, axis) = apply_rule(&g, &rule, &lo, &hi)?;
                Ok(Cell {
                    lo,
                    hi,
                    value,
                    error,
                    axis,
                    id: first_id + k as u64,
                })
            })
            .collect()
    };

    let mut next_id = initial.len() as u64;
    let mut evaluations = per_cell * initial.len() as u64;
    let mut heap: BinaryHeap<Cell> = evaluate(initial, 0)?.into_iter().collect();
    let mut splits = 0usize;
    let totals = |heap: &BinaryHeap<Cell>| {
        let mut cells: Vec<&Cell> = heap.iter().collect();
        cells.sort_by_key(|c| c.id);
        let value: f64 = cells.iter().map(|c| c.value).sum();
        let error: f64 = cells.iter().map(|c| c.error).sum();
        (value, error)
    };
    let (mut value, mut error) = totals(&heap);
    let mut since_refresh = 0;
    loop {
        if since_refresh >= 64 {
            (value, error) = totals(&heap);
            since_refresh = 0;
        }
        if error <= cfg.abs_tol.max(cfg.rel_tol * value.abs()) {
            (value, error) = totals(&heap);
            if error <= cfg.abs_tol.max(cfg.rel_tol * value.abs()) {
                break;
            }
        }
        if splits >= cfg.max_subdivisions {
            let (value, error) = totals(&heap);
            return Err(Error::Budget {
                value,
                error_estimate: error,
            });
        }
        let mut children = Vec::with_capacity(2 * BATCH);
        while children.len() < 2 * BATCH && splits < cfg.max_subdivisions {
            let Some(cell) = heap.pop() else { break };
            if cell.error == 0.0 && !children.is_empty() {
                heap.push(cell);
                break;
            }
            value -= cell.value;
            error -= cell.error;
            let axis = cell.axis;
            let cut = 0.5 * (cell.lo[axis] + cell.hi[axis]);
            let mut left_hi = cell.hi.clone();
            left_hi[axis] = cut;
            let mut right_lo = cell.lo.clone();
            right_lo[axis] = cut;
            children.push((cell.lo, left_hi));
            children.push((right_lo, cell.hi));
            splits += 1;
        }
        if children.is_empty() {
            break;
        }
        evaluations += per_cell * children.len() as u64;
        let count = children.len() as u64;
        for cell in evaluate(children, next_id)? {
            value += cell.value;
            error += cell.error;
            heap.push(cell);
        }
        next_id += count;
        since_refresh += 1;
    }
    let cells = heap.len();
    Ok(Integral {
        value,
        error_estimate: error,
        evaluations,
        cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sign-sum")]
    SignSum,
    #[serde(rename = "integral")]
    Integral,
    #[serde(rename = "whitney-1d")]
    Whitney1d,
    #[serde(rename = "parity")]
    Parity,
}

/// An index computed one way. For [`Method::Parity`] the index is 0 or 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub method: Method,
    pub raw_value: f64,
    pub index: i64,
    pub residual: f64,
    pub error_estimate: f64,
    /// Integrand evaluations, or double points for counting methods.
    pub evaluations: u64,
}

impl IndexReport {
    pub fn exact(method: Method, index: i64, evaluations: u64) -> Self {
        IndexReport {
            method,
            raw_value: index as f64,
            index,
            residual: 0.0,
            error_estimate: 0.0,
            evaluations,
        }
    }

    /// Rounds a quadrature value; refuses when it is 0.1 or more from an integer.
    pub fn rounded(method: Method, integral: &Integral) -> Result<Self> {
        let raw = integral.value;
        let index = raw.round();
        let residual = (raw - index).abs();
        if !(residual < 0.1) {
            return Err(Error::RoundingAmbiguous {
                raw_value: raw,
                residual,
            });
        }
        Ok(IndexReport {
            method,
            raw_value: raw,
            index: index as i64,
            residual,
            error_estimate: integral.error_estimate,
            evaluations: integral.evaluations,
        })
    }
}

fn padded_box(f: &dyn Immersion) -> (Vec<f64>, Vec<f64>) {
    let r = f.support_halfwidth() + 0.05;
    (vec![-r; f.dim()], vec![r; f.dim()])
}

/// Integral of the pullback `(D_f)^* omega` (zero outside the support cube).
pub fn index_integral(f: &dyn Immersion, cfg: &QuadratureConfig) -> Result<Integral> {
    let eval = OmegaEvaluator::new(f.dim())?;
    let (lo, hi) = padded_box(f);
    integrate_adaptive(|x| integrand_pullback(&eval, f, x), &lo, &hi, cfg)
}

pub fn index_by_integral(f: &dyn Immersion, cfg: &QuadratureConfig) -> Result<IndexReport> {
    IndexReport::rounded(Method::Integral, &index_integral(f, cfg)?)
}

/// Rotation index of a plane curve: `(1 / 2 pi) int (f1'' f2' - f2'' f1') / |f'|^2`.
pub fn index_whitney_1d(f: &dyn Immersion, cfg: &QuadratureConfig) -> Result<IndexReport> {
    if f.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "rotation index needs n = 1, got n = {}",
            f.dim()
        )));
    }
    let (lo, hi) = padded_box(f);
    let integral = integrate_adaptive(
        |x| Ok(whitney_integrand_1d(f, x[0])? / (2.0 * PI)),
        &lo,
        &hi,
        cfg,
    )?;
    IndexReport::rounded(Method::Whitney1d, &integral)
}

/// Distance beyond which `exp(-lambda d^2 / 2)` drops below `1e-14`.
pub fn gaussian_reach(lambda: f64) -> f64 {
    (2.0 * (1e14f64).ln() / lambda).sqrt()
}

/// Gaussian factors below this are dropped along with the determinant.
const NEGLIGIBLE_WEIGHT: f64 = 1e-17;

/// `exp(-lambda |f(x) - f(y)|^2 / 2) det [D_f(x)^T ; D_f(y)^T]`.
pub fn laplace_integrand(f: &dyn Immersion, lambda: f64, x: &[f64], y: &[f64]) -> f64 {
    let (fx, fy) = (f.value(x), f.value(y));
    let d2: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum();
    let weight = (-0.5 * lambda * d2).exp();
    if weight < NEGLIGIBLE_WEIGHT {
        return 0.0;
    }
    weight * stacked_determinant(f, x, y)
}

/// `J(f)` for even `n`.
///
/// Coordinates are `(x, h = y - x)` with `x` and `y` restricted to
/// `[-L, L]^n`, `L = r + gaussian_reach(lambda)`. Where both points lie
/// outside the support cube the determinant vanishes exactly; where one lies
/// beyond `L` the Gaussian is below `1e-14` (assuming the image of the
/// support cube projects into it, as for all builders here). The `h` axes are
/// cut at `0` and at multiples of the Gaussian width so that the initial
/// cells resolve the diagonal ridge.
pub fn laplace_j(f: &dyn Immersion, lambda: f64, cfg: &QuadratureConfig) -> Result<Integral> {
    let n = f.dim();
    if n % 2 == 1 {
        return Err(Error::OddDimension(n));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let r = f.support_halfwidth();
    let l = r + gaussian_reach(lambda);
    let integrand = |z: &[f64]| -> Result<f64> {
        let x = &z[..n];
        let y: Vec<f64> = x.iter().zip(&z[n..]).map(|(a, h)| a + h).collect();
        if y.iter().any(|v| v.abs() > l) || (outside(x, r) && outside(&y, r)) {
            return Ok(0.0);
        }
        Ok(2.0 * laplace_integrand(f, lambda, x, &y))
    };

    let x_breaks = breakpoints(l, 0.5);
    let width = 1.0 / lambda.sqrt();
    let mut h_breaks = vec![0.0];
    let mut b = 0.5 * width;
    while b < 0.5 && b < 2.0 * l {
        h_breaks.push(b);
        b *= 2.0;
    }
    let mut edge = *h_breaks.last().unwrap_or(&0.0);
    while edge + 0.5 < 2.0 * l {
        edge += 0.5;
        h_breaks.push(edge);
    }
    h_breaks.push(2.0 * l);
    let mut h_full: Vec<f64> = h_breaks.iter().rev().map(|v| -v).collect();
    h_full.pop();
    h_full.extend(h_breaks.iter().copied());

    // the integrand is symmetric under (x, y) -> (y, x) for even n, which
    // maps h_1 > 0 onto h_1 < 0; integrate the first half twice
    let mut axes: Vec<&[f64]> = vec![&x_breaks; n];
    axes.push(&h_breaks);
    axes.extend(std::iter::repeat_n(h_full.as_slice(), n - 1));
    let cells: Vec<_> = product_cells(&axes)
        .into_iter()
        .filter(|(lo, hi)| !laplace_cell_vanishes(lo, hi, n, r, l))
        .collect();
    integrate_cells(integrand, cells, cfg)
}

/// `[-l, l]` cut into pieces of width at most `step`.
fn breakpoints(l: f64, step: f64) -> Vec<f64> {
    let pieces = ((2.0 * l) / step).ceil().max(1.0) as usize;
    (0..=pieces)
        .map(|k| -l + 2.0 * l * k as f64 / pieces as f64)
        .collect()
}

fn product_cells(axes: &[&[f64]]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut cells = vec![(vec![], vec![])];
    for breaks in axes {
        let mut next = Vec::with_capacity(cells.len() * (breaks.len() - 1));
        for (lo, hi) in &cells {
            for w in breaks.windows(2) {
                let mut a: Vec<f64> = lo.clone();
                let mut b: Vec<f64> = hi.clone();
                a.push(w[0]);
                b.push(w[1]);
                next.push((a, b));
            }
        }
        cells = next;
    }
    cells
}

/// True when the `(x, h)` cell certainly contributes nothing: every `y`
/// leaves `[-l, l]`, or both `x` and `y` stay outside the support cube.
fn laplace_cell_vanishes(lo: &[f64], hi: &[f64], n: usize, r: f64, l: f64) -> bool {
    let y_range = |a: usize| (lo[a] + lo[n + a], hi[a] + hi[n + a]);
    let beyond = |(a, b): (f64, f64), limit: f64| a >= limit || b <= -limit;
    if (0..n).any(|a| beyond(y_range(a), l)) {
        return true;
    }
    let x_out = (0..n).any(|a| beyond((lo[a], hi[a]), r));
    let y_out = (0..n).any(|a| beyond(y_range(a), r));
    x_out && y_out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaplaceConfig {
    /// For `J(f)` itself.
    pub quadrature: QuadratureConfig,
    /// For the index integral behind the diagonal term.
    pub index_quadrature: QuadratureConfig,
    /// For the localized double-point integrals.
    pub local_quadrature: QuadratureConfig,
    pub solver: SolverConfig,
    /// Upper bound on the half-width of the boxes around double points.
    pub local_radius: f64,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        LaplaceConfig {
            quadrature: QuadratureConfig::laplace(),
            index_quadrature: QuadratureConfig::default(),
            local_quadrature: QuadratureConfig {
                abs_tol: 1e-12,
                rel_tol: 1e-5,
                max_subdivisions: 100_000,
                rule_order: 9,
                initial_divisions: 4,
            },
            solver: SolverConfig {
                check_completeness: false,
                ..SolverConfig::default()
            },
            local_radius: 0.4,
        }
    }
}

/// `J(f)` next to the two leading-order pieces it is made of.
///
/// * `diag_value` = `-2 (2 pi / lambda)^n` times the index integral: the
///   diagonal's leading contribution.
/// * `selfint_value` = `2 (2 pi / lambda)^n` times the sign-sum index: the
///   predicted double-point contribution.
/// * `selfint_local` = the Laplace integrand integrated over boxes around
///   each double point `(x1, x2)` and its mirror `(x2, x1)`.
/// * `defect` = `selfint_local - selfint_value`, the part of the double-point
///   contribution beyond leading order; `normalized_defect` divides it by
///   `2 (2 pi / lambda)^n` and should shrink like `1 / lambda`.
/// * `cancellation` = `(diag_value + selfint_value) / (2 (2 pi / lambda)^n)`,
///   zero when the two index methods agree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub lambda: f64,
    pub j_value: f64,
    pub j_error: f64,
    /// Set when the `J` quadrature hit its subdivision budget.
    pub j_budget_exhausted: bool,
    pub diag_value: f64,
    pub selfint_value: f64,
    pub selfint_local: f64,
    pub defect: f64,
    pub normalized_defect: f64,
    pub cancellation: f64,
    pub evaluations: u64,
}

/// Scale of one double point's leading contribution, `2 (2 pi / lambda)^n`.
pub fn laplace_unit(n: usize, lambda: f64) -> f64 {
    2.0 * (2.0 * PI / lambda).powi(n as i32)
}

/// Integral of the Laplace integrand over the `2n`-boxes of half-width `rho`
/// centred at `(x1, x2)` and `(x2, x1)` for every record.
pub fn selfint_local(
    f: &dyn Immersion,
    lambda: f64,
    records: &[IntersectionRecord],
    radius: f64,
    cfg: &QuadratureConfig,
) -> Result<Integral> {
    let n = f.dim();
    let mut points: Vec<&[f64]> = Vec::new();
    for rec in records {
        points.push(&rec.preimage_1);
        points.push(&rec.preimage_2);
    }
    let mut separation = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d = p
                .iter()
                .zip(q.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            separation = separation.min(d);
        }
    }
    let rho = radius.min(0.4 * separation);
    let mut cells = Vec::new();
    for rec in records {
        for (a, b) in [
            (&rec.preimage_1, &rec.preimage_2),
            (&rec.preimage_2, &rec.preimage_1),
        ] {
            let centre: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
            let lo: Vec<f64> = centre.iter().map(|c| c - rho).collect();
            let hi: Vec<f64> = centre.iter().map(|c| c + rho).collect();
            cells.extend(uniform_cells(&lo, &hi, cfg.initial_divisions));
        }
    }
    if cells.is_empty() {
        return Ok(Integral {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
            cells: 0,
        });
    }
    integrate_cells(
        |z| Ok(laplace_integrand(f, lambda, &z[..n], &z[n..])),
        cells,
        cfg,
    )
}

/// [`LaplaceReport`]s over several `lambda`, sharing the intersection search
/// and the index integral.
pub fn laplace_sweep(
    f: &dyn Immersion,
    lambdas: &[f64],
    cfg: &LaplaceConfig,
) -> Result<Vec<LaplaceReport>> {
    let n = f.dim();
    if n % 2 == 1 {
        return Err(Error::OddDimension(n));
    }
    let records = find_self_intersections(f, &cfg.solver)?;
    let signs = index_from_records(f, &records, &cfg.solver)?;
    let raw = index_integral(f, &cfg.index_quadrature)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let unit = laplace_unit(n, lambda);
            let (j, exhausted) = match laplace_j(f, lambda, &cfg.quadrature) {
                Ok(j) => (j, false),
                Err(Error::Budget {
                    value,
                    error_estimate,
                }) => {
                    warn!("J(f) at lambda = {lambda} hit the subdivision budget");
                    (
                        Integral {
                            value,
                            error_estimate,
                            evaluations: 0,
                            cells: 0,
                        },
                        true,
                    )
                }
                Err(e) => return Err(e),
            };
            let local =
                selfint_local(f, lambda, &records, cfg.local_radius, &cfg.local_quadrature)?;
            let diag_value = -unit * raw.value;
            let selfint_value = unit * signs.index as f64;
            let defect = local.value - selfint_value;
            Ok(LaplaceReport {
                lambda,
                j_value: j.value,
                j_error: j.error_estimate,
                j_budget_exhausted: exhausted,
                diag_value,
                selfint_value,
                selfint_local: local.value,
                defect,
                normalized_defect: defect / unit,
                cancellation: (diag_value + selfint_value) / unit,
                evaluations: j.evaluations + local.evaluations,
            })
        })
        .collect()
}

pub fn laplace_decomposition(
    f: &dyn Immersion,
    lambda: f64,
    cfg: &LaplaceConfig,
) -> Result<LaplaceReport> {
    Ok(laplace_sweep(f, &[lambda], cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials() {
        for m in 3..=15 {
            let rule = Rule::new(m);
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-14, "m={m}");
            for deg in 0..2 * m {
                let q: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg + 1) as f64
                };
                assert!((q - exact).abs() < 1e-13, "m={m} deg={deg}: {q}");
            }
        }
    }

    #[test]
    fn constant_and_polynomial() {
        let cfg = QuadratureConfig::default();
        let one = integrate_adaptive(|_| Ok(1.0), &[0.0, 0.0], &[1.0, 1.0], &cfg).unwrap();
        assert!((one.value - 1.0).abs() < 1e-14);
        let p = integrate_adaptive(
            |x| Ok(x[0] * x[0] * x[1] * x[1]),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &QuadratureConfig {
                initial_divisions: 1,
                ..cfg
            },
        )
        .unwrap();
        assert!((p.value - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(p.cells, 1);
    }

    #[test]
    fn adapts_to_a_peak() {
        let cfg = QuadratureConfig {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            initial_divisions: 1,
            ..Default::default()
        };
        let r =
            integrate_adaptive(|x| Ok(1.0 / (1e-4 + x[0] * x[0])), &[-1.0], &[1.0], &cfg).unwrap();
        let exact = 2.0 * (1.0 / 1e-2f64).atan() / 1e-2;
        assert!(
            (r.value - exact).abs() < 1e-6 * exact,
            "{} vs {exact}",
            r.value
        );
        assert!(r.cells > 1);
    }

    #[test]
    fn budget_is_reported() {
        let cfg = QuadratureConfig {
            abs_tol: 1e-15,
            rel_tol: 1e-15,
            max_subdivisions: 3,
            initial_divisions: 1,
            ..Default::default()
        };
        let e = integrate_adaptive(|x| Ok(x[0].abs().sqrt()), &[-1.0], &[1.0], &cfg).unwrap_err();
        match e {
            Error::Budget { value, .. } => assert!((value - 4.0 / 3.0).abs() < 1e-2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_checks() {
        let bad = QuadratureConfig {
            rule_order: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig {
            abs_tol: 0.0,
            ..Default::default()
        };
        assert!(integrate_adaptive(|_| Ok(1.0), &[0.0], &[1.0], &bad).is_err());
    }

    #[test]
    fn rounding() {
        let i = |v| Integral {
            value: v,
            error_estimate: 0.0,
            evaluations: 1,
            cells: 1,
        };
        assert_eq!(
            IndexReport::rounded(Method::Integral, &i(-0.97))
                .unwrap()
                .index,
            -1
        );
        assert!(matches!(
            IndexReport::rounded(Method::Integral, &i(0.5)),
            Err(Error::RoundingAmbiguous { .. })
        ));
        assert_eq!(
            serde_json::to_string(&Method::Whitney1d).unwrap(),
            "\"whitney-1d\""
        );
    }

    #[test]
    fn laplace_cells_vanish_where_expected() {
        // x far left, y pushed further out: beyond l
        assert!(laplace_cell_vanishes(
            &[-2.0, 0.0, -1.0, 0.0],
            &[-1.8, 0.1, -0.5, 0.1],
            2,
            1.0,
            2.2
        ));
        // both outside the support on the same side
        assert!(laplace_cell_vanishes(
            &[1.2, 0.0, 0.0, 0.0],
            &[1.4, 0.1, 0.1, 0.1],
            2,
            1.0,
            2.2
        ));
        assert!(!laplace_cell_vanishes(
            &[0.0, 0.0, 0.0, 0.0],
            &[0.1, 0.1, 0.1, 0.1],
            2,
            1.0,
            2.2
        ));
    }
}
