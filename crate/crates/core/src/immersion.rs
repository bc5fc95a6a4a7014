//! Smooth maps `R^n -> R^2n` fixed at infinity, with analytic derivatives.
//!
//! Every map here agrees with the standard embedding `x -> (x, 0)` once
//! `max |x_i| >= support_halfwidth`, and the builders return that value (and
//! the constant differential `[I; 0]`, zero Hessian) exactly there.
//!
//! Builders:
//! * [`Trivial`] - the standard embedding itself.
//! * [`OneLoopCurve`] - a long plane curve with a single transversal double
//!   point `f(-1/2) = f(1/2)`.
//! * [`Lift`] - raises dimension by one, keeping a single double point at
//!   `(-1/2, 0, ..., 0) ~ (1/2, 0, ..., 0)`.
//! * [`Concat`] - the product gluing two maps along `x_1`.
//! * [`Perturb`] / [`Mirror`] - small interior bumps and reflections of the
//!   zero block, used to probe invariance.
//!
//! Maps that only know how to evaluate themselves can implement
//! [`Immersion::value`] alone; derivatives then fall back to
//! Richardson-extrapolated central differences.

use std::fmt;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, StiefelPoint};

/// Step used by the finite-difference fallback derivatives.
pub const FALLBACK_STEP: f64 = 1e-4;

/// Second derivatives: `2n x n x n` array with `[j][k][l] = d^2 f_j / dx_k dx_l`.
#[derive(Clone, PartialEq)]
pub struct Hessian {
    rows: usize,
    n: usize,
    data: Vec<f64>,
}

impl Hessian {
    pub fn zeros(rows: usize, n: usize) -> Self {
        Hessian {
            rows,
            n,
            data: vec![0.0; rows * n * n],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize, l: usize) -> f64 {
        self.data[(j * self.n + k) * self.n + l]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, l: usize, v: f64) {
        self.data[(j * self.n + k) * self.n + l] = v;
    }

    /// Sets both `[j][k][l]` and `[j][l][k]`.
    #[inline]
    pub fn set_sym(&mut self, j: usize, k: usize, l: usize, v: f64) {
        self.set(j, k, l, v);
        self.set(j, l, k, v);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// The `k`-th coordinate slice as a `2n x n` matrix: `[j][i] = H[j][i][k]`.
    pub fn slice(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, self.n, |j, i| self.get(j, i, k))
    }
}

impl fmt::Debug for Hessian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Hessian {}x{}x{} {:?}",
            self.rows, self.n, self.n, self.data
        )
    }
}

/// A smooth map `R^n -> R^2n` that equals `(x, 0)` outside the cube
/// `max |x_i| < support_halfwidth`.
pub trait Immersion: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn support_halfwidth(&self) -> f64;

    fn value(&self, x: &[f64]) -> Vec<f64>;

    fn jacobian(&self, x: &[f64]) -> StiefelPoint {
        if outside(x, self.support_halfwidth()) {
            return StiefelPoint::standard(self.dim());
        }
        richardson_jacobian(self, x, FALLBACK_STEP)
    }

    fn hessian(&self, x: &[f64]) -> Hessian {
        if outside(x, self.support_halfwidth()) {
            return Hessian::zeros(2 * self.dim(), self.dim());
        }
        richardson_hessian(self, x, FALLBACK_STEP)
    }

    /// Preimages of a distinguished double point, if the builder knows one.
    fn marked_crossing(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

pub type SharedImmersion = Arc<dyn Immersion>;

#[inline]
pub fn outside(x: &[f64], halfwidth: f64) -> bool {
    x.iter().any(|v| v.abs() >= halfwidth)
}

/// `(x, 0)`.
pub fn standard_value(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.resize(2 * x.len(), 0.0);
    v
}

fn richardson_jacobian<F: Immersion + ?Sized>(f: &F, x: &[f64], h: f64) -> StiefelPoint {
    let n = f.dim();
    let central = |step: f64, i: usize| -> Vec<f64> {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let (fp, fm) = (f.value(&xp), f.value(&xm));
        fp.iter()
            .zip(&fm)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect()
    };
    let mut m = Matrix::zeros(2 * n, n);
    for i in 0..n {
        let coarse = central(h, i);
        let fine = central(h / 2.0, i);
        for j in 0..2 * n {
            m[(j, i)] = (4.0 * fine[j] - coarse[j]) / 3.0;
        }
    }
    StiefelPoint::new(m).expect("2n x n by construction")
}

fn richardson_hessian<F: Immersion + ?Sized>(f: &F, x: &[f64], h: f64) -> Hessian {
    let n = f.dim();
    let at = |dk: (usize, f64), dl: (usize, f64)| -> Vec<f64> {
        let mut y = x.to_vec();
        y[dk.0] += dk.1;
        y[dl.0] += dl.1;
        f.value(&y)
    };
    let second = |step: f64, k: usize, l: usize| -> Vec<f64> {
        if k == l {
            let (p, m, c) = (
                at((k, step), (k, 0.0)),
                at((k, -step), (k, 0.0)),
                f.value(x),
            );
            (0..2 * n)
                .map(|j| (p[j] - 2.0 * c[j] + m[j]) / (step * step))
                .collect()
        } else {
            let pp = at((k, step), (l, step));
            let pm = at((k, step), (l, -step));
            let mp = at((k, -step), (l, step));
            let mm = at((k, -step), (l, -step));
            (0..2 * n)
                .map(|j| (pp[j] - pm[j] - mp[j] + mm[j]) / (4.0 * step * step))
                .collect()
        }
    };
    let mut hess = Hessian::zeros(2 * n, n);
    for k in 0..n {
        for l in k..n {
            let coarse = second(h, k, l);
            let fine = second(h / 2.0, k, l);
            for j in 0..2 * n {
                hess.set_sym(j, k, l, (4.0 * fine[j] - coarse[j]) / 3.0);
            }
        }
    }
    hess
}

/// `amplitude * b((t - center) / halfwidth)` with the normalized profile
/// `b(s) = exp(1 - 1/(1 - s^2))` on `|s| < 1` (so `b(0) = 1`), zero elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub center: f64,
    pub halfwidth: f64,
    pub amplitude: f64,
}

impl BumpFunction {
    pub const STANDARD: BumpFunction = BumpFunction {
        center: 0.0,
        halfwidth: 1.0,
        amplitude: 1.0,
    };

    pub fn new(center: f64, halfwidth: f64, amplitude: f64) -> Result<Self> {
        if !(halfwidth > 0.0) || !center.is_finite() || !amplitude.is_finite() {
            return Err(Error::InvalidBump(format!(
                "center {center}, halfwidth {halfwidth}, amplitude {amplitude}"
            )));
        }
        Ok(BumpFunction {
            center,
            halfwidth,
            amplitude,
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        self.jet(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.jet(t).1
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        self.jet(t).2
    }

    /// Value, first and second derivative.
    pub fn jet(&self, t: f64) -> (f64, f64, f64) {
        let w = self.halfwidth;
        let (b, db, ddb) = profile((t - self.center) / w);
        let a = self.amplitude;
        (a * b, a * db / w, a * ddb / (w * w))
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.halfwidth, self.center + self.halfwidth)
    }
}

/// `exp(1 - 1/(1 - s^2))` and its first two derivatives.
fn profile(s: f64) -> (f64, f64, f64) {
    let q = 1.0 - s * s;
    // exp underflows long before the polynomial factors overflow
    if q <= 0.0 || 1.0 / q > 700.0 {
        return (0.0, 0.0, 0.0);
    }
    let iq = 1.0 / q;
    let b = (1.0 - iq).exp();
    let iq2 = iq * iq;
    let d = -2.0 * s * b * iq2;
    let dd = b * (-2.0 * iq2 - 8.0 * s * s * iq2 * iq + 4.0 * s * s * iq2 * iq2);
    (b, d, dd)
}

/// Value, gradient and Hessian of `prod_k g_k(y_k)` given each factor's jet.
fn separable_product(factors: &[(f64, f64, f64)]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let m = factors.len();
    let prod_except = |skip: &[usize]| -> f64 {
        factors
            .iter()
            .enumerate()
            .filter(|(k, _)| !skip.contains(k))
            .map(|(_, f)| f.0)
            .product()
    };
    let value = prod_except(&[]);
    let grad = (0..m).map(|k| factors[k].1 * prod_except(&[k])).collect();
    let mut hess = vec![vec![0.0; m]; m];
    for k in 0..m {
        hess[k][k] = factors[k].2 * prod_except(&[k]);
        for l in k + 1..m {
            let v = factors[k].1 * factors[l].1 * prod_except(&[k, l]);
            hess[k][l] = v;
            hess[l][k] = v;
        }
    }
    (value, grad, hess)
}

/// The standard embedding `x -> (x, 0)`.
#[derive(Clone, Debug)]
pub struct Trivial {
    n: usize,
}

impl Trivial {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        Ok(Trivial { n })
    }
}

impl Immersion for Trivial {
    fn dim(&self) -> usize {
        self.n
    }

    fn support_halfwidth(&self) -> f64 {
        1.0
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        standard_value(x)
    }

    fn jacobian(&self, _x: &[f64]) -> StiefelPoint {
        StiefelPoint::standard(self.n)
    }

    fn hessian(&self, _x: &[f64]) -> Hessian {
        Hessian::zeros(2 * self.n, self.n)
    }
}

/// Long plane curve `x -> (x + a(x), B b(x))` with exactly one transversal
/// double point, `f(-1/2) = f(1/2)`.
///
/// `b` is the standard bump on `[-1, 1]` and
/// `a(x) = -x b(x) / b(1/2) - W (b_+(x) - b_-(x))`, where `b_+`, `b_-` are
/// narrow bumps on `(0, 1/2)` and `(-1/2, 0)`. The first term puts the first
/// coordinate back to zero at `x = +-1/2`; the narrow bumps widen the loop
/// without touching the crossing. The first coordinate stays in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct OneLoopCurve {
    main: BumpFunction,
    right: BumpFunction,
    left: BumpFunction,
    height: f64,
    main_at_half: f64,
}

impl OneLoopCurve {
    pub const LOOP_WIDTH: f64 = 0.8;
    pub const HEIGHT: f64 = 5.0;

    pub fn new() -> Self {
        let main = BumpFunction::STANDARD;
        OneLoopCurve {
            main,
            right: BumpFunction {
                center: 0.25,
                halfwidth: 0.25,
                amplitude: Self::LOOP_WIDTH,
            },
            left: BumpFunction {
                center: -0.25,
                halfwidth: 0.25,
                amplitude: Self::LOOP_WIDTH,
            },
            height: Self::HEIGHT,
            main_at_half: main.value(0.5),
        }
    }

    /// `(f, f', f'')` as plane vectors.
    pub fn jet(&self, x: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        if x.abs() >= 1.0 {
            return ([x, 0.0], [1.0, 0.0], [0.0, 0.0]);
        }
        let (m, dm, ddm) = self.main.jet(x);
        let (r, dr, ddr) = self.right.jet(x);
        let (l, dl, ddl) = self.left.jet(x);
        let c = 1.0 / self.main_at_half;
        let a = -x * m * c - (r - l);
        let da = -(m + x * dm) * c - (dr - dl);
        let dda = -(2.0 * dm + x * ddm) * c - (ddr - ddl);
        let h = self.height;
        ([x + a, h * m], [1.0 + da, h * dm], [dda, h * ddm])
    }
}

impl Default for OneLoopCurve {
    fn default() -> Self {
        Self::new()
    }
}

impl Immersion for OneLoopCurve {
    fn dim(&self) -> usize {
        1
    }

    fn support_halfwidth(&self) -> f64 {
        1.0
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x[0]).0.to_vec()
    }

    fn jacobian(&self, x: &[f64]) -> StiefelPoint {
        let d = self.jet(x[0]).1;
        StiefelPoint::new(Matrix::from_row_major(2, 1, d.to_vec())).expect("2 x 1")
    }

    fn hessian(&self, x: &[f64]) -> Hessian {
        let dd = self.jet(x[0]).2;
        let mut h = Hessian::zeros(2, 1);
        h.set(0, 0, 0, dd[0]);
        h.set(1, 0, 0, dd[1]);
        h
    }

    fn marked_crossing(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![-0.5], vec![0.5]))
    }
}

/// Raises an immersion `f: R^n -> R^2n` with a double point at
/// `(-1/2, 0, ..., 0) ~ (1/2, 0, ..., 0)` to `R^(n+1) -> R^(2n+2)`:
///
/// ```text
/// g(x, t) = (x + c(t) P_head(x), t, c(t) P_tail(x), s(t) phi(x_1) prod_{i>1} b(x_i))
/// ```
///
/// where `P = f - (x, 0)`, `c` is the standard bump and `s(t) = t b(t)`.
/// Near `t = 0` this agrees to first order with
/// `(f_1..f_n, t, f_{n+1}..f_2n, t phi(x_1))`; the cutoffs make the result
/// fixed at infinity in every direction.
#[derive(Clone, Debug)]
pub struct Lift {
    base: SharedImmersion,
    bump: BumpFunction,
}

impl Lift {
    pub fn new(base: SharedImmersion, bump: BumpFunction) -> Result<Self> {
        let n = base.dim();
        let (a, b) = base.marked_crossing().ok_or_else(|| {
            Error::PreimageMismatch("base has no marked self-intersection".into())
        })?;
        let pattern = |p: &[f64], first: f64| {
            p.len() == n && (p[0] - first).abs() < 1e-12 && p[1..].iter().all(|v| v.abs() < 1e-12)
        };
        if !pattern(&a, -0.5) || !pattern(&b, 0.5) {
            return Err(Error::PreimageMismatch(format!("{a:?} ~ {b:?}")));
        }
        let gap = dist(&base.value(&a), &base.value(&b));
        if gap > 1e-10 {
            return Err(Error::PreimageMismatch(format!(
                "|f(a) - f(b)| = {gap:e} at {a:?} ~ {b:?}"
            )));
        }
        if base.support_halfwidth() > 1.0 {
            return Err(Error::InvalidConfig(
                "lift needs a base supported in the unit cube".into(),
            ));
        }
        let (lo, hi) = bump.support();
        if lo < -1.0 || hi > 1.0 {
            return Err(Error::InvalidBump(format!(
                "support [{lo}, {hi}] leaves [-1, 1]"
            )));
        }
        // Shrinking the base loop by c(t) moves its double points along
        // symmetric pairs (-x_1, x_1) with 0 < x_1 <= 1/2; phi must tell every
        // such pair apart, with the same sign, or the lift acquires a
        // degenerate family of double points.
        let gaps: Vec<f64> = (1..=1000)
            .map(|k| {
                let x = 0.5 * k as f64 / 1000.0;
                bump.value(x) - bump.value(-x)
            })
            .collect();
        let separated = gaps.iter().all(|g| *g > 1e-12) || gaps.iter().all(|g| *g < -1e-12);
        if !separated {
            return Err(Error::InvalidBump(
                "phi(x) - phi(-x) must keep one strict sign for 0 < x <= 1/2".into(),
            ));
        }
        Ok(Lift { base, bump })
    }

    /// The bump of the standard lifted example.
    pub fn default_bump() -> BumpFunction {
        BumpFunction {
            center: 0.25,
            halfwidth: 0.75,
            amplitude: 4.0,
        }
    }

    fn jet(&self, x: &[f64], order: usize) -> (Vec<f64>, Option<Matrix>, Option<Hessian>) {
        let n = self.base.dim();
        let m = n + 1;
        if outside(x, 1.0) {
            return (
                standard_value(x),
                (order >= 1).then(|| StiefelPoint::standard(m).into_entries()),
                (order >= 2).then(|| Hessian::zeros(2 * m, m)),
            );
        }
        let (xs, t) = (&x[..n], x[n]);
        let fv = self.base.value(xs);
        let pert: Vec<f64> = (0..2 * n)
            .map(|j| if j < n { fv[j] - xs[j] } else { fv[j] })
            .collect();
        let cut = BumpFunction::STANDARD.jet(t);
        let tb = cut;
        let slope = (t * tb.0, tb.0 + t * tb.1, 2.0 * tb.1 + t * tb.2);
        let mut factors = vec![slope, self.bump.jet(xs[0])];
        for &xi in &xs[1..] {
            factors.push(BumpFunction::STANDARD.jet(xi));
        }
        // factor order: t, x_1, x_2, ..., x_n
        let (last, last_grad, last_hess) = separable_product(&factors);
        let var = |k: usize| if k == n { 0 } else { k + 1 };

        // output row for base row j
        let out_row = |j: usize| if j < n { j } else { j + 1 };
        let mut value = vec![0.0; 2 * m];
        for j in 0..2 * n {
            let lin = if j < n { xs[j] } else { 0.0 };
            value[out_row(j)] = lin + cut.0 * pert[j];
        }
        value[n] = t;
        value[2 * m - 1] = last;
        if order == 0 {
            return (value, None, None);
        }

        let df = self.base.jacobian(xs);
        let dp = |j: usize, i: usize| df.get(j, i) - if j == i { 1.0 } else { 0.0 };
        let mut jac = Matrix::zeros(2 * m, m);
        for (j, p) in pert.iter().enumerate() {
            let r = out_row(j);
            for i in 0..n {
                jac[(r, i)] = if j == i { 1.0 } else { 0.0 } + cut.0 * dp(j, i);
            }
            jac[(r, n)] = cut.1 * p;
        }
        jac[(n, n)] = 1.0;
        for k in 0..m {
            jac[(2 * m - 1, k)] = last_grad[var(k)];
        }
        if order == 1 {
            return (value, Some(jac), None);
        }

        let hf = self.base.hessian(xs);
        let mut hess = Hessian::zeros(2 * m, m);
        for (j, p) in pert.iter().enumerate() {
            let r = out_row(j);
            for k in 0..n {
                for l in k..n {
                    hess.set_sym(r, k, l, cut.0 * hf.get(j, k, l));
                }
                hess.set_sym(r, k, n, cut.1 * dp(j, k));
            }
            hess.set(r, n, n, cut.2 * p);
        }
        for k in 0..m {
            for l in 0..m {
                hess.set(2 * m - 1, k, l, last_hess[var(k)][var(l)]);
            }
        }
        (value, Some(jac), Some(hess))
    }
}

impl Immersion for Lift {
    fn dim(&self) -> usize {
        self.base.dim() + 1
    }

    fn support_halfwidth(&self) -> f64 {
        1.0
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x, 0).0
    }

    fn jacobian(&self, x: &[f64]) -> StiefelPoint {
        StiefelPoint::new(self.jet(x, 1).1.expect("order 1")).expect("2m x m")
    }

    fn hessian(&self, x: &[f64]) -> Hessian {
        self.jet(x, 2).2.expect("order 2")
    }

    fn marked_crossing(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        a[0] = -0.5;
        b[0] = 0.5;
        Some((a, b))
    }
}

/// Product of two immersions: the first is squeezed into `x_1 < 0`, the
/// second into `x_1 > 0`.
///
/// With `u = (2 x_1 + 1, x_2, ...)` on the left half, the value is
/// `(x, 0) + S (f_left(u) - (u, 0))` where `S` halves the first ambient
/// coordinate. `S` is the linear part of the ambient rescaling that takes the
/// image of `f_left` back to the left half of the support, so each half is an
/// orientation-preserving copy of its factor and the two halves' images stay
/// apart when the factors' first coordinates stay in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Concat {
    left: SharedImmersion,
    right: SharedImmersion,
}

impl Concat {
    pub fn new(left: SharedImmersion, right: SharedImmersion) -> Result<Self> {
        if left.dim() != right.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate n = {} with n = {}",
                left.dim(),
                right.dim()
            )));
        }
        if left.support_halfwidth() > 1.0 || right.support_halfwidth() > 1.0 {
            return Err(Error::InvalidConfig(
                "concatenation needs factors supported in the unit cube".into(),
            ));
        }
        Ok(Concat { left, right })
    }

    /// Factor and its argument for the half containing `x`.
    fn locate(&self, x: &[f64]) -> (&SharedImmersion, Vec<f64>) {
        let mut u = x.to_vec();
        if x[0] <= 0.0 {
            u[0] = 2.0 * x[0] + 1.0;
            (&self.left, u)
        } else {
            u[0] = 2.0 * x[0] - 1.0;
            (&self.right, u)
        }
    }
}

impl Immersion for Concat {
    fn dim(&self) -> usize {
        self.left.dim()
    }

    fn support_halfwidth(&self) -> f64 {
        1.0
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        if outside(x, 1.0) {
            return standard_value(x);
        }
        let (f, u) = self.locate(x);
        let fu = f.value(&u);
        let mut out = standard_value(x);
        for j in 0..out.len() {
            let p = fu[j] - if j < u.len() { u[j] } else { 0.0 };
            out[j] += if j == 0 { 0.5 * p } else { p };
        }
        out
    }

    fn jacobian(&self, x: &[f64]) -> StiefelPoint {
        let n = self.dim();
        if outside(x, 1.0) {
            return StiefelPoint::standard(n);
        }
        let (f, u) = self.locate(x);
        let df = f.jacobian(&u);
        let mut m = StiefelPoint::standard(n).into_entries();
        for j in 0..2 * n {
            let sj = if j == 0 { 0.5 } else { 1.0 };
            for i in 0..n {
                let ci = if i == 0 { 2.0 } else { 1.0 };
                let dp = df.get(j, i) - if i == j { 1.0 } else { 0.0 };
                m[(j, i)] += sj * ci * dp;
            }
        }
        StiefelPoint::new(m).expect("2n x n")
    }

    fn hessian(&self, x: &[f64]) -> Hessian {
        let n = self.dim();
        if outside(x, 1.0) {
            return Hessian::zeros(2 * n, n);
        }
        let (f, u) = self.locate(x);
        let hf = f.hessian(&u);
        let mut h = Hessian::zeros(2 * n, n);
        for j in 0..2 * n {
            let sj = if j == 0 { 0.5 } else { 1.0 };
            for k in 0..n {
                for l in 0..n {
                    let ck = if k == 0 { 2.0 } else { 1.0 };
                    let cl = if l == 0 { 2.0 } else { 1.0 };
                    h.set(j, k, l, sj * ck * cl * hf.get(j, k, l));
                }
            }
        }
        h
    }
}

/// `f + amplitude * prod_i b((x_i - c_i) / radius) * e_component`.
#[derive(Clone, Debug)]
pub struct Perturb {
    base: SharedImmersion,
    component: usize,
    bumps: Vec<BumpFunction>,
}

impl Perturb {
    /// `component` is 0-based here.
    pub fn new(
        base: SharedImmersion,
        component: usize,
        amplitude: f64,
        center: &[f64],
        radius: f64,
    ) -> Result<Self> {
        let n = base.dim();
        if component >= 2 * n {
            return Err(Error::InvalidConfig(format!(
                "component {} out of range for 2n = {}",
                component + 1,
                2 * n
            )));
        }
        if center.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "perturbation center has {} coordinates, expected {n}",
                center.len()
            )));
        }
        let r = base.support_halfwidth();
        if center.iter().any(|c| c.abs() + radius > r) {
            return Err(Error::InvalidBump(format!(
                "perturbation box {center:?} +- {radius} leaves the support cube"
            )));
        }
        let bumps = center
            .iter()
            .enumerate()
            .map(|(i, &c)| BumpFunction::new(c, radius, if i == 0 { amplitude } else { 1.0 }))
            .collect::<Result<_>>()?;
        Ok(Perturb {
            base,
            component,
            bumps,
        })
    }

    fn bump(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let jets: Vec<_> = self.bumps.iter().zip(x).map(|(b, &xi)| b.jet(xi)).collect();
        separable_product(&jets)
    }
}

impl Immersion for Perturb {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn support_halfwidth(&self) -> f64 {
        self.base.support_halfwidth()
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.base.value(x);
        if !outside(x, self.support_halfwidth()) {
            v[self.component] += self.bump(x).0;
        }
        v
    }

    fn jacobian(&self, x: &[f64]) -> StiefelPoint {
        let jac = self.base.jacobian(x);
        if outside(x, self.support_halfwidth()) {
            return jac;
        }
        let mut m = jac.into_entries();
        let (_, g, _) = self.bump(x);
        for (i, gi) in g.iter().enumerate() {
            m[(self.component, i)] += gi;
        }
        StiefelPoint::new(m).expect("2n x n")
    }

    fn hessian(&self, x: &[f64]) -> Hessian {
        let mut h = self.base.hessian(x);
        if outside(x, self.support_halfwidth()) {
            return h;
        }
        let (_, _, hb) = self.bump(x);
        let j = self.component;
        for (k, row) in hb.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                h.set(j, k, l, h.get(j, k, l) + v);
            }
        }
        h
    }
}

/// Negates one coordinate of the zero block (`component >= n`, 0-based).
#[derive(Clone, Debug)]
pub struct Mirror {
    base: SharedImmersion,
    component: usize,
}

impl Mirror {
    pub fn new(base: SharedImmersion, component: usize) -> Result<Self> {
        let n = base.dim();
        if component < n || component >= 2 * n {
            return Err(Error::InvalidConfig(format!(
                "mirror component must lie in the zero block {}..={} (1-based), got {}",
                n + 1,
                2 * n,
                component + 1
            )));
        }
        Ok(Mirror { base, component })
    }
}

impl Immersion for Mirror {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn support_halfwidth(&self) -> f64 {
        self.base.support_halfwidth()
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.base.value(x);
        v[self.component] = -v[self.component];
        v
    }

    fn jacobian(&self, x: &[f64]) -> StiefelPoint {
        let mut m = self.base.jacobian(x).into_entries();
        for i in 0..self.dim() {
            m[(self.component, i)] = -m[(self.component, i)];
        }
        StiefelPoint::new(m).expect("2n x n")
    }

    fn hessian(&self, x: &[f64]) -> Hessian {
        let mut h = self.base.hessian(x);
        let n = self.dim();
        for k in 0..n {
            for l in 0..n {
                h.set(self.component, k, l, -h.get(self.component, k, l));
            }
        }
        h
    }

    fn marked_crossing(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.base.marked_crossing()
    }
}

/// An immersion known only through its values; derivatives use the
/// finite-difference fallback.
pub struct ValueOnly<F> {
    n: usize,
    halfwidth: f64,
    f: F,
}

impl<F> ValueOnly<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    pub fn new(n: usize, halfwidth: f64, f: F) -> Self {
        ValueOnly { n, halfwidth, f }
    }
}

impl<F> fmt::Debug for ValueOnly<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueOnly")
            .field("n", &self.n)
            .field("halfwidth", &self.halfwidth)
            .finish_non_exhaustive()
    }
}

impl<F> Immersion for ValueOnly<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn support_halfwidth(&self) -> f64 {
        self.halfwidth
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        if outside(x, self.halfwidth) {
            return standard_value(x);
        }
        (self.f)(x)
    }
}

/// Declarative description of an immersion, as stored in spec files.
///
/// ```json
/// {"builder": "lift", "base": {"builder": "one_loop_curve"},
///  "bump": {"center": 0.25, "halfwidth": 0.75, "amplitude": 4.0}}
/// ```
///
/// Ambient component numbers are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImmersionSpec {
    Trivial {
        n: usize,
    },
    OneLoopCurve,
    Lift {
        base: Box<ImmersionSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bump: Option<BumpFunction>,
    },
    Concat {
        left: Box<ImmersionSpec>,
        right: Box<ImmersionSpec>,
    },
    Perturb {
        base: Box<ImmersionSpec>,
        component: usize,
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    Mirror {
        base: Box<ImmersionSpec>,
        component: usize,
    },
}

impl ImmersionSpec {
    pub fn build(&self) -> Result<SharedImmersion> {
        Ok(match self {
            ImmersionSpec::Trivial { n } => Arc::new(Trivial::new(*n)?),
            ImmersionSpec::OneLoopCurve => Arc::new(OneLoopCurve::new()),
            ImmersionSpec::Lift { base, bump } => Arc::new(Lift::new(
                base.build()?,
                bump.unwrap_or_else(Lift::default_bump),
            )?),
            ImmersionSpec::Concat { left, right } => {
                Arc::new(Concat::new(left.build()?, right.build()?)?)
            }
            ImmersionSpec::Perturb {
                base,
                component,
                amplitude,
                center,
                radius,
            } => Arc::new(Perturb::new(
                base.build()?,
                one_based(*component)?,
                *amplitude,
                center,
                *radius,
            )?),
            ImmersionSpec::Mirror { base, component } => {
                Arc::new(Mirror::new(base.build()?, one_based(*component)?)?)
            }
        })
    }
}

fn one_based(component: usize) -> Result<usize> {
    component
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidConfig("components are numbered from 1".into()))
}

/// Shorthand constructors.
pub fn trivial_immersion(n: usize) -> Result<SharedImmersion> {
    Ok(Arc::new(Trivial::new(n)?))
}

pub fn one_loop_curve() -> SharedImmersion {
    Arc::new(OneLoopCurve::new())
}

pub fn lift(base: SharedImmersion, bump: BumpFunction) -> Result<SharedImmersion> {
    Ok(Arc::new(Lift::new(base, bump)?))
}

pub fn concat(left: SharedImmersion, right: SharedImmersion) -> Result<SharedImmersion> {
    Ok(Arc::new(Concat::new(left, right)?))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Worst disagreement between analytic and finite-difference derivatives.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub samples: usize,
    pub step: f64,
    pub max_jacobian_deviation: f64,
    pub jacobian_location: Vec<f64>,
    pub max_hessian_deviation: f64,
    pub hessian_location: Vec<f64>,
}

impl DerivativeReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_jacobian_deviation.max(self.max_hessian_deviation)
    }
}

/// Compares the analytic Jacobian with central differences of the value and
/// the analytic Hessian with central differences of the analytic Jacobian,
/// at `samples` seeded-random points of the support cube. Differences use
/// steps `h` and `h/2` combined by one Richardson step, since the bump
/// flanks have large third derivatives.
pub fn validate_derivatives(
    f: &dyn Immersion,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<DerivativeReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step must be positive, got {h}"
        )));
    }
    let n = f.dim();
    let r = f.support_halfwidth();
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut report = DerivativeReport {
        samples,
        step: h,
        max_jacobian_deviation: 0.0,
        jacobian_location: vec![0.0; n],
        max_hessian_deviation: 0.0,
        hessian_location: vec![0.0; n],
    };
    for _ in 0..samples {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-r..r)).collect();
        let jac = f.jacobian(&x);
        let hess = f.hessian(&x);
        let mut worst_j = 0.0_f64;
        let mut worst_h = 0.0_f64;
        for i in 0..n {
            let diff = |step: f64| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                (f.value(&xp), f.value(&xm), f.jacobian(&xp), f.jacobian(&xm))
            };
            let (vp, vm, jp, jm) = diff(h);
            let (vp2, vm2, jp2, jm2) = diff(h / 2.0);
            // one Richardson step: (4 D(h/2) - D(h)) / 3
            let extrapolate = |coarse: f64, fine: f64| (4.0 * fine - coarse) / 3.0;
            for j in 0..2 * n {
                let fd = extrapolate((vp[j] - vm[j]) / (2.0 * h), (vp2[j] - vm2[j]) / h);
                worst_j = worst_j.max((fd - jac.get(j, i)).abs());
                for k in 0..n {
                    let fd2 = extrapolate(
                        (jp.get(j, k) - jm.get(j, k)) / (2.0 * h),
                        (jp2.get(j, k) - jm2.get(j, k)) / h,
                    );
                    worst_h = worst_h.max((fd2 - hess.get(j, k, i)).abs());
                }
            }
        }
        if worst_j > report.max_jacobian_deviation {
            report.max_jacobian_deviation = worst_j;
            report.jacobian_location = x.clone();
        }
        if worst_h > report.max_hessian_deviation {
            report.max_hessian_deviation = worst_h;
            report.hessian_location = x;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram;

    fn lifted() -> SharedImmersion {
        lift(one_loop_curve(), Lift::default_bump()).unwrap()
    }

    #[test]
    fn trivial_examples() {
        let f = trivial_immersion(2).unwrap();
        assert_eq!(f.value(&[0.3, -0.7]), vec![0.3, -0.7, 0.0, 0.0]);
        assert_eq!(f.jacobian(&[0.1, 0.2]), StiefelPoint::standard(2));
        assert_eq!(f.hessian(&[0.1, 0.2]).max_abs(), 0.0);
    }

    #[test]
    fn bump_profile() {
        let b = BumpFunction::STANDARD;
        assert_eq!(b.value(0.0), 1.0);
        assert_eq!(b.value(1.0), 0.0);
        assert_eq!(b.value(-1.5), 0.0);
        assert_eq!(b.derivative(0.0), 0.0);
        assert!((b.second_derivative(0.0) + 2.0).abs() < 1e-15);
        assert_eq!(b.jet(0.99999), (0.0, 0.0, 0.0));
        let h = 1e-6;
        for &t in &[-0.8, -0.3, 0.1, 0.6, 0.95] {
            let c = BumpFunction::new(0.2, 0.7, 3.0).unwrap();
            let (_, d, dd) = c.jet(t);
            let fd = (c.value(t + h) - c.value(t - h)) / (2.0 * h);
            let fd2 = (c.derivative(t + h) - c.derivative(t - h)) / (2.0 * h);
            assert!((fd - d).abs() < 1e-6, "{t}: {fd} vs {d}");
            assert!((fd2 - dd).abs() < 1e-5, "{t}: {fd2} vs {dd}");
        }
        assert!(BumpFunction::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn one_loop_crossing() {
        let f = one_loop_curve();
        let a = f.value(&[-0.5]);
        let b = f.value(&[0.5]);
        assert!(dist(&a, &b) < 1e-15, "{a:?} {b:?}");
        let ta = f.jacobian(&[-0.5]);
        let tb = f.jacobian(&[0.5]);
        let cross = ta.get(0, 0) * tb.get(1, 0) - ta.get(1, 0) * tb.get(0, 0);
        assert!(cross.abs() > 1.0);
        assert_eq!(f.value(&[2.0]), vec![2.0, 0.0]);
        assert_eq!(f.value(&[-2.0]), vec![-2.0, 0.0]);
    }

    #[test]
    fn one_loop_first_coordinate_stays_in_unit_interval() {
        let f = one_loop_curve();
        for k in 0..=2000 {
            let x = -1.0 + k as f64 / 1000.0;
            let v = f.value(&[x])[0];
            assert!((-1.0..=1.0).contains(&v), "f_1({x}) = {v}");
        }
    }

    #[test]
    fn lift_keeps_the_crossing() {
        let g = lifted();
        assert_eq!(g.dim(), 2);
        let a = g.value(&[-0.5, 0.0]);
        let b = g.value(&[0.5, 0.0]);
        assert!(dist(&a, &b) < 1e-15);
        assert_eq!(g.value(&[1.0, 0.3]), vec![1.0, 0.3, 0.0, 0.0]);
        assert_eq!(g.value(&[0.2, -1.4]), vec![0.2, -1.4, 0.0, 0.0]);
    }

    #[test]
    fn lift_rejects_bad_inputs() {
        let t = trivial_immersion(1).unwrap();
        assert!(matches!(
            lift(t, Lift::default_bump()),
            Err(Error::PreimageMismatch(_))
        ));
        let symmetric = BumpFunction::STANDARD;
        assert!(matches!(
            lift(one_loop_curve(), symmetric),
            Err(Error::InvalidBump(_))
        ));
        let wide = BumpFunction::new(0.5, 0.75, 1.0).unwrap();
        assert!(matches!(
            lift(one_loop_curve(), wide),
            Err(Error::InvalidBump(_))
        ));
        // distinct at +-1/2, but equal (zero) at +-0.05
        let narrow = BumpFunction::new(0.5, 0.4, 2.0).unwrap();
        assert!(matches!(
            lift(one_loop_curve(), narrow),
            Err(Error::InvalidBump(_))
        ));
        assert!(lift(one_loop_curve(), BumpFunction::new(0.3, 0.7, 2.0).unwrap()).is_ok());
        assert!(lift(one_loop_curve(), BumpFunction::new(-0.3, 0.7, 1.0).unwrap()).is_ok());
    }

    #[test]
    fn concat_of_trivials_is_trivial() {
        let t = trivial_immersion(2).unwrap();
        let c = concat(t.clone(), t).unwrap();
        let mut rng = Pcg32::seed_from_u64(3);
        for _ in 0..200 {
            let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            assert_eq!(c.value(&x), standard_value(&x));
            assert_eq!(c.jacobian(&x), StiefelPoint::standard(2));
            assert_eq!(c.hessian(&x).max_abs(), 0.0);
        }
        assert!(matches!(
            concat(trivial_immersion(1).unwrap(), trivial_immersion(2).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn fixed_at_infinity_exactly() {
        let maps: Vec<SharedImmersion> = vec![
            one_loop_curve(),
            lifted(),
            concat(lifted(), lifted()).unwrap(),
            concat(one_loop_curve(), one_loop_curve()).unwrap(),
            Arc::new(Perturb::new(lifted(), 3, 0.01, &[-0.4, 0.1], 0.3).unwrap()),
        ];
        let mut rng = Pcg32::seed_from_u64(11);
        for f in maps {
            let n = f.dim();
            let r = f.support_halfwidth();
            for _ in 0..100 {
                let mut x: Vec<f64> = (0..n)
                    .map(|_| rng.random_range(-2.0 * r..2.0 * r))
                    .collect();
                let k = rng.random_range(0..n);
                let mag = rng.random_range(r..2.0 * r);
                x[k] = if rng.random_bool(0.5) { mag } else { -mag };
                assert_eq!(f.value(&x), standard_value(&x), "{f:?} at {x:?}");
                assert_eq!(f.jacobian(&x), StiefelPoint::standard(n));
                assert_eq!(f.hessian(&x).max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn hessians_are_symmetric() {
        let maps: Vec<SharedImmersion> = vec![lifted(), concat(lifted(), lifted()).unwrap()];
        let mut rng = Pcg32::seed_from_u64(5);
        for f in maps {
            for _ in 0..50 {
                let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let h = f.hessian(&x);
                for j in 0..4 {
                    assert_eq!(h.get(j, 0, 1), h.get(j, 1, 0));
                }
            }
        }
    }

    #[test]
    fn immersion_property_on_grid() {
        let maps: Vec<SharedImmersion> = vec![lifted(), concat(lifted(), lifted()).unwrap()];
        for f in maps {
            let mut min_det = f64::INFINITY;
            for a in 0..33 {
                for b in 0..33 {
                    let x = [-1.0 + a as f64 / 16.0, -1.0 + b as f64 / 16.0];
                    min_det = min_det.min(gram(&f.jacobian(&x)).unwrap().det);
                }
            }
            assert!(min_det > 0.0, "{f:?}: {min_det}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = trivial_immersion(2).unwrap();
        let rep = validate_derivatives(f.as_ref(), 20, 1e-3, 1).unwrap();
        assert!(rep.max_deviation() < 1e-12, "{rep:?}");

        let rep = validate_derivatives(one_loop_curve().as_ref(), 200, 1e-5, 1).unwrap();
        assert!(rep.max_jacobian_deviation < 1e-8, "{rep:?}");
        assert!(rep.max_hessian_deviation < 1e-5, "{rep:?}");

        let rep = validate_derivatives(lifted().as_ref(), 200, 1e-5, 2).unwrap();
        assert!(rep.max_deviation() < 1e-5, "{rep:?}");

        assert!(validate_derivatives(f.as_ref(), 1, 0.0, 1).is_err());
    }

    #[test]
    fn value_only_fallback_derivatives() {
        let loop_curve = OneLoopCurve::new();
        let g = ValueOnly::new(1, 1.0, move |x: &[f64]| loop_curve.jet(x[0]).0.to_vec());
        let exact = one_loop_curve();
        for &x in &[-0.7, -0.2, 0.35, 0.8] {
            let a = g.jacobian(&[x]);
            let b = exact.jacobian(&[x]);
            assert!((a.get(0, 0) - b.get(0, 0)).abs() < 1e-7);
            assert!((a.get(1, 0) - b.get(1, 0)).abs() < 1e-7);
            let ha = g.hessian(&[x]);
            let hb = exact.hessian(&[x]);
            assert!((ha.get(1, 0, 0) - hb.get(1, 0, 0)).abs() < 1e-4);
        }
        assert_eq!(g.jacobian(&[1.5]), StiefelPoint::standard(1));
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"builder": "lift", "base": {"builder": "one_loop_curve"},
                       "bump": {"center": 0.25, "halfwidth": 0.75, "amplitude": 4.0}}"#;
        let spec: ImmersionSpec = serde_json::from_str(json).unwrap();
        let f = spec.build().unwrap();
        assert_eq!(f.dim(), 2);
        let back: ImmersionSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"builder": "mirror", "base": {"builder": "one_loop_curve"}, "component": 1}"#;
        let spec: ImmersionSpec = serde_json::from_str(bad).unwrap();
        assert!(spec.build().is_err());
    }
}
