//! The Stiefel `n`-form `omega`, its pullback along `x -> D_f(x)`, and a
//! finite-difference exterior derivative for checking closedness.
//!
//! For even `n`,
//!
//! ```text
//! omega(phi) = C_n u(phi) sum_i u_{i1 i2} ... u_{i(n-1) in}
//!              sum_sigma sum_J (-1)^mu(J) M_J(phi)
//!              dphi^{j1}_{i sigma(1)} ^ ... ^ dphi^{jn}_{i sigma(n)}
//! ```
//!
//! with `C_n = -1 / (2^(n+1) pi^(n/2) (n/2)!)`. Tangent vectors are plain
//! `2n x n` matrices (the Stiefel variety is open in matrix space) and
//! `<dphi^j_i, T> = T[j][i]`.

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::immersion::{outside, Immersion};
use crate::linalg::{
    complementary_minor, det_in_place, gram, mu_sign, permutations_signed, IndexSet, Matrix,
    SignedPermutation, StiefelPoint,
};

/// A tangent vector to the Stiefel variety: any `2n x n` matrix.
pub type TangentVector = Matrix;

/// `-1 / (2^(n+1) pi^(n/2) (n/2)!)`.
pub fn omega_constant(n: usize) -> f64 {
    let half = n / 2;
    let factorial: f64 = (1..=half).map(|k| k as f64).product();
    -1.0 / (2f64.powi(n as i32 + 1) * std::f64::consts::PI.powf(n as f64 / 2.0) * factorial)
}

/// Precomputed combinatorics for evaluating `omega` in a fixed dimension.
///
/// Summing over `i` and `sigma` is reorganised by the column tuple
/// `k_a = i_sigma(a)`, so each wedge determinant is computed once per
/// `(k, J)` and weighted by `sum_tau prod_p u[k_tau(2p-1)][k_tau(2p)]`.
#[derive(Clone, Debug)]
pub struct OmegaEvaluator {
    n: usize,
    sets: Vec<IndexSet>,
    set_rows: Vec<Vec<usize>>,
    signs: Vec<f64>,
    perms: Vec<SignedPermutation>,
    tuples: Vec<Vec<usize>>,
}

impl OmegaEvaluator {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n % 2 == 1 {
            return Err(Error::OddDimension(n));
        }
        let perms = permutations_signed(n)?;
        let sets = IndexSet::all(n);
        let set_rows = sets.iter().map(|s| s.rows()).collect();
        let signs = sets.iter().map(mu_sign).collect();
        let tuples = all_tuples(n);
        Ok(OmegaEvaluator {
            n,
            sets,
            set_rows,
            signs,
            perms,
            tuples,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `omega(phi)(T_1, ..., T_n)`.
    pub fn eval(&self, phi: &StiefelPoint, tangents: &[TangentVector]) -> Result<f64> {
        let n = self.n;
        if phi.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "point has n = {}, evaluator has n = {n}",
                phi.n()
            )));
        }
        check_tangents(n, tangents, n)?;
        let g = gram(phi)?;
        let coeffs: Vec<f64> = self
            .sets
            .iter()
            .zip(&self.signs)
            .map(|(set, s)| s * complementary_minor(phi, set))
            .collect();

        let mut buf = vec![0.0; n * n];
        let mut total = 0.0;
        for k in &self.tuples {
            let weight: f64 = self
                .perms
                .iter()
                .map(|(tau, _)| {
                    (0..n / 2)
                        .map(|p| g.gram_inv[(k[tau[2 * p]], k[tau[2 * p + 1]])])
                        .product::<f64>()
                })
                .sum();
            if weight == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for (rows, c) in self.set_rows.iter().zip(&coeffs) {
                if *c == 0.0 {
                    continue;
                }
                for a in 0..n {
                    for (b, t) in tangents.iter().enumerate() {
                        buf[a * n + b] = t[(rows[a], k[a])];
                    }
                }
                inner += c * det_in_place(&mut buf, n);
            }
            total += weight * inner;
        }
        Ok(omega_constant(n) * g.u * total)
    }
}

/// All `n^n` tuples over `0..n`, lexicographic.
fn all_tuples(n: usize) -> Vec<Vec<usize>> {
    let count = n.pow(n as u32);
    (0..count)
        .map(|mut code| {
            let mut t = vec![0; n];
            for slot in t.iter_mut().rev() {
                *slot = code % n;
                code /= n;
            }
            t
        })
        .collect()
}

fn check_tangents(n: usize, tangents: &[TangentVector], expected: usize) -> Result<()> {
    if tangents.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "expected {expected} tangent vectors, got {}",
            tangents.len()
        )));
    }
    if let Some(t) = tangents.iter().find(|t| t.rows() != 2 * n || t.cols() != n) {
        return Err(Error::DimensionMismatch(format!(
            "tangent is {}x{}, expected {}x{n}",
            t.rows(),
            t.cols(),
            2 * n
        )));
    }
    Ok(())
}

/// One-off evaluation of `omega(phi)(T_1, ..., T_n)`.
pub fn omega_eval(phi: &StiefelPoint, tangents: &[TangentVector]) -> Result<f64> {
    OmegaEvaluator::new(phi.n())?.eval(phi, tangents)
}

/// Hessian slices `T_k[j][i] = d^2 f_j / dx_i dx_k`: the derivatives of
/// `x -> D_f(x)` along the coordinate directions.
pub fn holonomic_tangents(f: &dyn Immersion, x: &[f64]) -> Vec<TangentVector> {
    let h = f.hessian(x);
    (0..f.dim()).map(|k| h.slice(k)).collect()
}

/// Coefficient of `dx_1 ^ ... ^ dx_n` in `(D_f)^* omega` at `x`.
pub fn integrand_pullback(eval: &OmegaEvaluator, f: &dyn Immersion, x: &[f64]) -> Result<f64> {
    if outside(x, f.support_halfwidth()) {
        return Ok(0.0);
    }
    eval.eval(&f.jacobian(x), &holonomic_tangents(f, x))
}

/// The same coefficient from the coordinate formula
///
/// ```text
/// C_n g(x) sum_i g_{i1 i2} ... g_{i(n-1) in}
///     sum_sigma det [ d f_j / dx_k ; d^2 f_j / dx_k dx_{i sigma(k)} ]
/// ```
///
/// where `g = (det G)^(-1/2)`, `(g_ij) = G^(-1)` for the Gram matrix `G` of
/// `D_f(x)`, and each determinant stacks `n` Jacobian rows (indexed by `k`)
/// over `n` Hessian rows.
pub fn integrand_direct(f: &dyn Immersion, x: &[f64]) -> Result<f64> {
    let n = f.dim();
    if n % 2 == 1 {
        return Err(Error::OddDimension(n));
    }
    if outside(x, f.support_halfwidth()) {
        return Ok(0.0);
    }
    let jac = f.jacobian(x);
    let hess = f.hessian(x);
    let g = gram(&jac)?;
    let perms = permutations_signed(n)?;
    let m = 2 * n;
    let mut buf = vec![0.0; m * m];
    let mut total = 0.0;
    for i in all_tuples(n) {
        let weight: f64 = (0..n / 2)
            .map(|p| g.gram_inv[(i[2 * p], i[2 * p + 1])])
            .product();
        let mut inner = 0.0;
        for (sigma, _) in &perms {
            for k in 0..n {
                for j in 0..m {
                    buf[k * m + j] = jac.get(j, k);
                    buf[(n + k) * m + j] = hess.get(j, k, i[sigma[k]]);
                }
            }
            inner += det_in_place(&mut buf, m);
        }
        total += weight * inner;
    }
    Ok(omega_constant(n) * g.u * total)
}

/// `(f1'' f2' - f2'' f1') / (f1'^2 + f2'^2)` for a plane curve; its integral
/// is `2 pi` times the rotation index.
pub fn whitney_integrand_1d(f: &dyn Immersion, x: f64) -> Result<f64> {
    if f.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "Whitney integrand needs n = 1, got n = {}",
            f.dim()
        )));
    }
    if outside(&[x], f.support_halfwidth()) {
        return Ok(0.0);
    }
    let d = f.jacobian(&[x]);
    let h = f.hessian(&[x]);
    let (d1, d2) = (d.get(0, 0), d.get(1, 0));
    let (dd1, dd2) = (h.get(0, 0, 0), h.get(1, 0, 0));
    let speed2 = d1 * d1 + d2 * d2;
    if speed2 <= 1e-24 {
        return Err(Error::RankDeficient { det_gram: speed2 });
    }
    Ok((dd1 * d2 - dd2 * d1) / speed2)
}

/// A form that is not closed: `omega + phi^1_1 dphi^2_1 ^ ... ^ dphi^2_n`.
/// Used to confirm that the closedness test can fail.
pub fn omega_perturbed(
    eval: &OmegaEvaluator,
    phi: &StiefelPoint,
    tangents: &[TangentVector],
) -> Result<f64> {
    let n = eval.n();
    let base = eval.eval(phi, tangents)?;
    let block = Matrix::from_fn(n, n, |a, b| tangents[b][(1, a)]);
    Ok(base + phi.get(0, 0) * block.determinant())
}

/// The terms `D_{T_i} [phi -> form(phi)(T_0, ..., ^T_i, ..., T_n)]`, each by
/// a central difference with step `h |phi|_F / |T_i|_F` (optionally with one
/// Richardson step). `d form(T_0..T_n) = sum_i (-1)^i term_i` since the
/// tangent fields are constant.
pub fn exterior_derivative_terms<F>(
    form: F,
    phi: &StiefelPoint,
    tangents: &[TangentVector],
    h: f64,
    richardson: bool,
) -> Result<Vec<f64>>
where
    F: Fn(&StiefelPoint, &[TangentVector]) -> Result<f64>,
{
    let n = phi.n();
    check_tangents(n, tangents, n + 1)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step must be positive, got {h}"
        )));
    }
    let scale = phi.entries().frobenius_norm();
    let mut terms = Vec::with_capacity(n + 1);
    for (i, ti) in tangents.iter().enumerate() {
        let rest: Vec<TangentVector> = tangents
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != i)
            .map(|(_, t)| t.clone())
            .collect();
        let norm = ti.frobenius_norm();
        if norm == 0.0 {
            terms.push(0.0);
            continue;
        }
        let central = |s: f64| -> Result<f64> {
            let plus = StiefelPoint::new(phi.entries().add_scaled(ti, s))?;
            let minus = StiefelPoint::new(phi.entries().add_scaled(ti, -s))?;
            Ok((form(&plus, &rest)? - form(&minus, &rest)?) / (2.0 * s))
        };
        let derivative = |s: f64| -> Result<f64> {
            if richardson {
                Ok((4.0 * central(s / 2.0)? - central(s)?) / 3.0)
            } else {
                central(s)
            }
        };
        let step = h * scale / norm;
        let d = match derivative(step) {
            Err(Error::RankDeficient { .. }) => derivative(step / 10.0)?,
            other => other?,
        };
        terms.push(d);
    }
    Ok(terms)
}

/// `sum_i (-1)^i term_i`.
pub fn alternating_sum(terms: &[f64]) -> f64 {
    terms
        .iter()
        .enumerate()
        .map(|(i, t)| if i % 2 == 0 { *t } else { -*t })
        .sum()
}

/// `|sum_i (-1)^i term_i| / max_i |term_i|`, zero when every term vanishes.
pub fn normalized_exterior_derivative(terms: &[f64]) -> f64 {
    let scale = terms.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
    if scale == 0.0 {
        0.0
    } else {
        alternating_sum(terms).abs() / scale
    }
}

/// `d omega(T_0, ..., T_n)` at `phi` by central differences.
pub fn exterior_derivative_fd(
    phi: &StiefelPoint,
    tangents: &[TangentVector],
    h: f64,
) -> Result<f64> {
    let eval = OmegaEvaluator::new(phi.n())?;
    let terms = exterior_derivative_terms(|p, t| eval.eval(p, t), phi, tangents, h, false)?;
    Ok(alternating_sum(&terms))
}

/// Settings for [`check_closedness`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClosednessConfig {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub h: f64,
    pub richardson: bool,
    pub threshold: f64,
    /// Random entries are drawn from `[-entry_bound, entry_bound]`.
    pub entry_bound: f64,
    /// Points with `det U` at or below this are redrawn.
    pub min_gram_det: f64,
    /// Test the deliberately non-closed form instead of `omega`.
    pub perturbed: bool,
}

impl Default for ClosednessConfig {
    fn default() -> Self {
        ClosednessConfig {
            n: 2,
            samples: 100,
            seed: 7,
            h: 1e-4,
            richardson: false,
            threshold: 1e-4,
            entry_bound: 2.0,
            min_gram_det: 1e-3,
            perturbed: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClosednessReport {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub perturbed: bool,
    /// Largest `|d omega|`, unnormalized.
    pub max_abs_d_omega: f64,
    /// Largest `|d omega| / max_i |term_i|`; this is what is compared with
    /// the threshold.
    pub max_normalized_d_omega: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Draws a random point of the Stiefel variety with entries in
/// `[-bound, bound]` and `det U > min_det`.
pub fn random_stiefel_point(rng: &mut Pcg32, n: usize, bound: f64, min_det: f64) -> StiefelPoint {
    loop {
        let m = random_matrix(rng, 2 * n, n, bound);
        let phi = StiefelPoint::new(m).expect("2n x n");
        if matches!(gram(&phi), Ok(g) if g.det > min_det) {
            return phi;
        }
    }
}

pub fn random_matrix(rng: &mut Pcg32, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Evaluates the normalized exterior derivative at `samples` seeded random
/// `(phi, T_0, ..., T_n)`.
pub fn check_closedness(cfg: &ClosednessConfig) -> Result<ClosednessReport> {
    let n = cfg.n;
    let eval = OmegaEvaluator::new(n)?;
    let mut rng = Pcg32::seed_from_u64(cfg.seed);
    let mut max_abs = 0.0_f64;
    let mut max_norm = 0.0_f64;
    for _ in 0..cfg.samples {
        let phi = random_stiefel_point(&mut rng, n, cfg.entry_bound, cfg.min_gram_det);
        let tangents: Vec<TangentVector> = (0..=n)
            .map(|_| random_matrix(&mut rng, 2 * n, n, cfg.entry_bound))
            .collect();
        let terms = if cfg.perturbed {
            exterior_derivative_terms(
                |p, t| omega_perturbed(&eval, p, t),
                &phi,
                &tangents,
                cfg.h,
                cfg.richardson,
            )?
        } else {
            exterior_derivative_terms(
                |p, t| eval.eval(p, t),
                &phi,
                &tangents,
                cfg.h,
                cfg.richardson,
            )?
        };
        max_abs = max_abs.max(alternating_sum(&terms).abs());
        max_norm = max_norm.max(normalized_exterior_derivative(&terms));
    }
    Ok(ClosednessReport {
        n,
        samples: cfg.samples,
        seed: cfg.seed,
        perturbed: cfg.perturbed,
        max_abs_d_omega: max_abs,
        max_normalized_d_omega: max_norm,
        threshold: cfg.threshold,
        pass: max_norm < cfg.threshold,
    })
}
