//! Self-intersection search and the sign-sum index.
//!
//! Double points are roots of `F(x, y) = f(x) - f(y)` away from the diagonal.
//! Roots are found by damped Gauss-Newton from a grid of seeds over
//! `[-L, L]^2n`, deduplicated, certified, and signed by
//! `sgn det [D_f(x)^T ; D_f(y)^T]`.

use std::collections::HashMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::immersion::{outside, Immersion};
use crate::linalg::Matrix;
use crate::quadrature::{IndexReport, Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grid_points_per_axis: usize,
    /// Resolution of the `n`-dimensional sampling whose close image pairs
    /// become extra seeds; 0 or 1 disables it.
    pub sample_points_per_axis: usize,
    pub domain_halfwidth: f64,
    pub diagonal_exclusion: f64,
    pub newton_max_iter: usize,
    /// Convergence threshold on the Newton step norm.
    pub newton_tol: f64,
    pub cluster_radius: f64,
    pub transversality_threshold: f64,
    /// Largest accepted `|f(x) - f(y)|` for a certified root.
    pub residual_tol: f64,
    /// Rerun on a grid of twice the density (and shifted image samples) and
    /// warn if the set changes.
    pub check_completeness: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_points_per_axis: 9,
            sample_points_per_axis: 65,
            domain_halfwidth: 1.1,
            diagonal_exclusion: 0.05,
            newton_max_iter: 50,
            newton_tol: 1e-12,
            cluster_radius: 1e-6,
            transversality_threshold: 1e-8,
            residual_tol: 1e-10,
            check_completeness: true,
        }
    }
}

impl SolverConfig {
    /// Defaults with the grid thinned for `n >= 3` (the search space is `2n`-dimensional).
    pub fn for_dim(n: usize) -> Self {
        SolverConfig {
            grid_points_per_axis: if n <= 2 { 9 } else { 5 },
            sample_points_per_axis: match n {
                0 | 1 => 257,
                2 => 65,
                3 => 17,
                _ => 9,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("domain_halfwidth", self.domain_halfwidth),
            ("diagonal_exclusion", self.diagonal_exclusion),
            ("newton_tol", self.newton_tol),
            ("cluster_radius", self.cluster_radius),
            ("transversality_threshold", self.transversality_threshold),
            ("residual_tol", self.residual_tol),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "{name} must be positive, got {v}"
            )));
        }
        if self.grid_points_per_axis < 2 || self.newton_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "need at least 2 grid points per axis and 1 Newton iteration".into(),
            ));
        }
        if self.newton_tol >= self.cluster_radius {
            return Err(Error::InvalidConfig(
                "newton_tol must be smaller than cluster_radius".into(),
            ));
        }
        Ok(())
    }
}

/// One transversal double point `a = f(x1) = f(x2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionRecord {
    pub ambient_point: Vec<f64>,
    pub preimage_1: Vec<f64>,
    pub preimage_2: Vec<f64>,
    pub sign: i8,
    pub transversality_det: f64,
    pub residual: f64,
}

/// `det [D_f(x)^T ; D_f(y)^T]`: rows `0..n` are `df/dx_k` at `x`, rows
/// `n..2n` the same at `y`.
pub fn stacked_determinant(f: &dyn Immersion, x: &[f64], y: &[f64]) -> f64 {
    let n = f.dim();
    let (a, b) = (f.jacobian(x), f.jacobian(y));
    Matrix::from_fn(2 * n, 2 * n, |r, c| {
        if r < n {
            a.get(c, r)
        } else {
            b.get(c, r - n)
        }
    })
    .determinant()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p - q).collect()
}

fn residual_vec(f: &dyn Immersion, z: &[f64]) -> Vec<f64> {
    let n = f.dim();
    diff(&f.value(&z[..n]), &f.value(&z[n..]))
}

/// Gauss-Newton step for `F(x, y) = f(x) - f(y)`; falls back to slightly
/// regularized normal equations when the square system is singular.
fn newton_step(f: &dyn Immersion, z: &[f64], fz: &[f64]) -> Option<Vec<f64>> {
    let n = f.dim();
    let (a, b) = (f.jacobian(&z[..n]), f.jacobian(&z[n..]));
    let jac = Matrix::from_fn(2 * n, 2 * n, |r, c| {
        if c < n {
            a.get(r, c)
        } else {
            -b.get(r, c - n)
        }
    });
    let rhs: Vec<f64> = fz.iter().map(|v| -v).collect();
    if let Some(step) = jac.solve(&rhs) {
        if step.iter().all(|s| s.is_finite()) {
            return Some(step);
        }
    }
    let jt = jac.transpose();
    let mut normal = jt.matmul(&jac);
    let ridge = 1e-10 * normal.frobenius_norm().max(1e-300);
    for i in 0..2 * n {
        normal[(i, i)] += ridge;
    }
    let rhs: Vec<f64> = (0..2 * n)
        .map(|i| (0..2 * n).map(|k| jt[(i, k)] * rhs[k]).sum())
        .collect();
    normal.solve(&rhs)
}

/// Damped Gauss-Newton from `z`. Returns the root if it converges away from
/// the diagonal.
fn solve_from(f: &dyn Immersion, z0: Vec<f64>, cfg: &SolverConfig) -> Option<Vec<f64>> {
    let n = f.dim();
    let mut z = z0;
    let mut fz = residual_vec(f, &z);
    let mut fnorm = norm(&fz);
    for _ in 0..cfg.newton_max_iter {
        if fnorm == 0.0 {
            break;
        }
        let step = newton_step(f, &z, &fz)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = z.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
            let ft = residual_vec(f, &trial);
            let tn = norm(&ft);
            if tn < fnorm || (tn == fnorm && alpha * norm(&step) < cfg.newton_tol) {
                accepted = Some((trial, ft, tn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft, tn)) = accepted else {
            break;
        };
        let moved = alpha * norm(&step);
        z = trial;
        fz = ft;
        fnorm = tn;
        if norm(&diff(&z[..n], &z[n..])) < cfg.diagonal_exclusion {
            return None;
        }
        if moved < cfg.newton_tol {
            break;
        }
    }
    let off_diagonal = norm(&diff(&z[..n], &z[n..])) >= cfg.diagonal_exclusion;
    (fnorm < cfg.residual_tol && off_diagonal).then_some(z)
}

/// Lexicographically smaller preimage first.
fn canonical(z: Vec<f64>, n: usize) -> Vec<f64> {
    let (x, y) = z.split_at(n);
    if x.partial_cmp(y) == Some(std::cmp::Ordering::Greater) {
        [y, x].concat()
    } else {
        z
    }
}

fn seeds(n: usize, cfg: &SolverConfig, r: f64) -> Vec<Vec<f64>> {
    let g = cfg.grid_points_per_axis;
    let l = cfg.domain_halfwidth;
    let coords: Vec<f64> = (0..g)
        .map(|m| -l + 2.0 * l * m as f64 / (g - 1) as f64)
        .collect();
    let total = g.pow(2 * n as u32);
    (0..total)
        .map(|mut code| {
            let mut z = vec![0.0; 2 * n];
            for slot in z.iter_mut().rev() {
                *slot = coords[code % g];
                code /= g;
            }
            z
        })
        .filter(|z| {
            // both points on the standard embedding: no off-diagonal roots nearby
            let both_outside = outside(&z[..n], r) && outside(&z[n..], r);
            !both_outside && norm(&diff(&z[..n], &z[n..])) >= cfg.diagonal_exclusion
        })
        .collect()
}

/// Mixed-radix digits of `code`, most significant first.
fn digits(mut code: usize, g: usize, len: usize) -> Vec<usize> {
    let mut d = vec![0; len];
    for slot in d.iter_mut().rev() {
        *slot = code % g;
        code /= g;
    }
    d
}

/// Codes of the grid points within one step (in every axis) of `d`.
fn neighbourhood(d: &[usize], g: usize) -> Vec<usize> {
    let mut out = vec![0usize];
    for &k in d {
        let lo = k.saturating_sub(1);
        let hi = (k + 1).min(g - 1);
        out = out
            .iter()
            .flat_map(|&c| (lo..=hi).map(move |m| c * g + m))
            .collect();
    }
    out
}

/// Seeds from an `n`-dimensional sampling: pairs of samples whose images are
/// close and whose distance `|f(p) - f(q)|` is a discrete local minimum over
/// all neighbouring pairs. These find double points squeezed between the
/// nodes of the `2n`-dimensional seed grid.
fn image_seeds(f: &dyn Immersion, cfg: &SolverConfig) -> Vec<Vec<f64>> {
    let n = f.dim();
    let g = cfg.sample_points_per_axis;
    if g < 2 {
        return Vec::new();
    }
    let l = cfg.domain_halfwidth;
    let r = f.support_halfwidth();
    let total = g.pow(n as u32);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|c| {
            digits(c, g, n)
                .into_iter()
                .map(|m| -l + 2.0 * l * m as f64 / (g - 1) as f64)
                .collect()
        })
        .collect();
    let images: Vec<Vec<f64>> = points.par_iter().map(|p| f.value(p)).collect();
    let dist = |i: usize, j: usize| norm(&diff(&images[i], &images[j]));

    let mut edge = 0.0_f64;
    let mut stride = 1;
    for _ in 0..n {
        for c in 0..total {
            if (c / stride) % g + 1 < g {
                edge = edge.max(dist(c, c + stride));
            }
        }
        stride *= g;
    }
    let reach = edge * (n as f64).sqrt();
    if !(reach > 0.0) {
        return Vec::new();
    }

    let key = |v: &[f64]| -> Vec<i64> { v.iter().map(|a| (a / reach).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, v) in images.iter().enumerate() {
        buckets.entry(key(v)).or_default().push(i);
    }
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(2 * n as u32))
        .map(|c| {
            digits(c, 3, 2 * n)
                .into_iter()
                .map(|d| d as i64 - 1)
                .collect()
        })
        .collect();

    let neighbours: Vec<Vec<usize>> = (0..total)
        .map(|c| neighbourhood(&digits(c, g, n), g))
        .collect();
    let mut seeds = Vec::new();
    for i in 0..total {
        let home = key(&images[i]);
        for off in &offsets {
            let k: Vec<i64> = home.iter().zip(off).map(|(a, b)| a + b).collect();
            let Some(members) = buckets.get(&k) else {
                continue;
            };
            for &j in members {
                if j <= i {
                    continue;
                }
                let (p, q) = (&points[i], &points[j]);
                if outside(p, r) && outside(q, r) {
                    continue;
                }
                if norm(&diff(p, q)) < cfg.diagonal_exclusion {
                    continue;
                }
                let d = dist(i, j);
                if d >= reach {
                    continue;
                }
                let minimal = neighbours[i]
                    .iter()
                    .all(|&a| neighbours[j].iter().all(|&b| dist(a, b) >= d));
                if minimal {
                    seeds.push([p.as_slice(), q.as_slice()].concat());
                }
            }
        }
    }
    debug!("{} seeds from image sampling", seeds.len());
    seeds
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut k = i;
        while self.0[k] != root {
            let next = self.0[k];
            self.0[k] = root;
            k = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Canonical, clustered, polished roots (unsigned, uncertified).
fn search(f: &dyn Immersion, cfg: &SolverConfig) -> Vec<Vec<f64>> {
    let n = f.dim();
    let mut seeds = seeds(n, cfg, f.support_halfwidth());
    seeds.extend(image_seeds(f, cfg));
    let roots: Vec<Vec<f64>> = seeds
        .into_par_iter()
        .map(|z| solve_from(f, z, cfg).map(|r| canonical(r, n)))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    debug!("{} converged seeds", roots.len());

    let mut uf = UnionFind((0..roots.len()).collect());
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            if norm(&diff(&roots[i], &roots[j])) < cfg.cluster_radius {
                uf.union(i, j);
            }
        }
    }
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..roots.len() {
        let r = uf.find(i);
        match clusters.iter_mut().find(|(root, _)| *root == r) {
            Some((_, members)) => members.push(i),
            None => clusters.push((r, vec![i])),
        }
    }
    let mut reps: Vec<Vec<f64>> = clusters
        .into_iter()
        .map(|(_, members)| {
            let mut mean = vec![0.0; 2 * n];
            for &m in &members {
                for (acc, v) in mean.iter_mut().zip(&roots[m]) {
                    *acc += v / members.len() as f64;
                }
            }
            polish(f, mean)
        })
        .collect();
    reps.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    reps
}

/// One Newton step, kept only if it does not increase the residual.
fn polish(f: &dyn Immersion, z: Vec<f64>) -> Vec<f64> {
    let fz = residual_vec(f, &z);
    let Some(step) = newton_step(f, &z, &fz) else {
        return z;
    };
    let trial: Vec<f64> = z.iter().zip(&step).map(|(a, s)| a + s).collect();
    if norm(&residual_vec(f, &trial)) <= norm(&fz) {
        trial
    } else {
        z
    }
}

fn record(f: &dyn Immersion, z: &[f64], cfg: &SolverConfig) -> Result<IntersectionRecord> {
    let n = f.dim();
    let (x, y) = z.split_at(n);
    let (fx, fy) = (f.value(x), f.value(y));
    let det = stacked_determinant(f, x, y);
    if det.abs() < cfg.transversality_threshold {
        return Err(Error::NonTransversal {
            preimage_1: x.to_vec(),
            preimage_2: y.to_vec(),
            det,
        });
    }
    Ok(IntersectionRecord {
        ambient_point: fx.iter().zip(&fy).map(|(a, b)| 0.5 * (a + b)).collect(),
        preimage_1: x.to_vec(),
        preimage_2: y.to_vec(),
        sign: if det > 0.0 { 1 } else { -1 },
        transversality_det: det,
        residual: norm(&diff(&fx, &fy)),
    })
}

/// All transversal self-intersections found from the seed grid, sorted by
/// preimage, each unordered pair once.
pub fn find_self_intersections(
    f: &dyn Immersion,
    cfg: &SolverConfig,
) -> Result<Vec<IntersectionRecord>> {
    cfg.validate()?;
    let roots = search(f, cfg);
    if cfg.check_completeness {
        let finer = SolverConfig {
            grid_points_per_axis: 2 * cfg.grid_points_per_axis - 1,
            // shifted samples, so the second pass does not reuse the first one's seeds
            sample_points_per_axis: match cfg.sample_points_per_axis {
                g if g < 2 => g,
                g => g + 2,
            },
            ..cfg.clone()
        };
        let again = search(f, &finer);
        let same = again.len() == roots.len()
            && roots
                .iter()
                .zip(&again)
                .all(|(a, b)| norm(&diff(a, b)) < cfg.cluster_radius);
        if !same {
            warn!(
                "self-intersection search is grid dependent: {} roots at {} points per axis, {} at {}",
                roots.len(),
                cfg.grid_points_per_axis,
                again.len(),
                finer.grid_points_per_axis
            );
        }
    }
    roots.iter().map(|z| record(f, z, cfg)).collect()
}

/// Sign of a double point from fresh Jacobians. For `n = 1` the preimages are
/// taken in increasing order; for even `n` the order does not matter.
pub fn sign_of_intersection(
    rec: &IntersectionRecord,
    f: &dyn Immersion,
    threshold: f64,
) -> Result<i8> {
    let n = f.dim();
    if n > 1 && n % 2 == 1 {
        return Err(Error::InvalidConfig(format!(
            "intersection signs are defined for n = 1 and even n, got n = {n}"
        )));
    }
    let (mut a, mut b) = (&rec.preimage_1, &rec.preimage_2);
    if n == 1 && a[0] > b[0] {
        std::mem::swap(&mut a, &mut b);
    }
    let det = stacked_determinant(f, a, b);
    if det.abs() < threshold {
        return Err(Error::DegenerateDeterminant { det });
    }
    Ok(if det > 0.0 { 1 } else { -1 })
}

/// Sum of signs (`n = 1` or even `n`) or number of double points mod 2
/// (odd `n >= 3`).
pub fn index_by_signs(f: &dyn Immersion, cfg: &SolverConfig) -> Result<IndexReport> {
    let records = find_self_intersections(f, cfg)?;
    index_from_records(f, &records, cfg)
}

/// [`index_by_signs`] for an already computed intersection list.
pub fn index_from_records(
    f: &dyn Immersion,
    records: &[IntersectionRecord],
    cfg: &SolverConfig,
) -> Result<IndexReport> {
    let n = f.dim();
    if n > 1 && n % 2 == 1 {
        let parity = (records.len() % 2) as i64;
        return Ok(IndexReport::exact(
            Method::Parity,
            parity,
            records.len() as u64,
        ));
    }
    let mut sum = 0i64;
    for rec in records {
        sum += sign_of_intersection(rec, f, cfg.transversality_threshold)? as i64;
    }
    Ok(IndexReport::exact(
        Method::SignSum,
        sum,
        records.len() as u64,
    ))
}
