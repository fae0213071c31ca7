//! Dense convex QP solver: primal-dual interior point with Mehrotra predictor-corrector steps.
//!
//! Solves `min ½xᵀHx + gᵀx` subject to `A_eq x = b_eq` and `lb ≤ A_in x ≤ ub`.
//! Multipliers follow the convention that a positive value presses against an
//! upper bound and a negative one against a lower bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("factorization failed after regularization")]
    NumericalBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    /// Magnitude of the gradient terms; stationarity, dual and
    /// complementarity residuals are measured against it.
    pub scale: f64,
    /// Magnitude of the constraint data and `A x`; the primal residual is
    /// measured against it, so large multipliers cannot hide a violation.
    pub primal_scale: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }

    pub fn relative(&self) -> f64 {
        let dual = self.stationarity.max(self.dual).max(self.complementarity) / self.scale;
        dual.max(self.primal / self.primal_scale)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.relative() <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktReport,
    pub multipliers: Multipliers,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub regularization: f64,
    /// Iterations without halving the infeasibility measure before giving up.
    pub stall_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 4000,
            regularization: 1e-9,
            stall_iterations: 30,
        }
    }
}

/// Row-major dense dump for offline reproduction. Missing bounds are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDump {
    pub dim: usize,
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<Vec<f64>>,
    pub lb: Vec<Option<f64>>,
    pub ub: Vec<Option<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>, QpError> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(QpError::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Problem with no constraints of either kind.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            lb: DVector::zeros(0),
            ub: DVector::zeros(0),
        }
    }

    pub fn check_dims(&self) -> Result<(), QpError> {
        let n = self.dim();
        let bad = |what: &str| Err(QpError::DimensionMismatch(what.to_string()));
        if self.h.nrows() != n || self.h.ncols() != n {
            return bad("H must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality system");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.lb.len() || self.lb.len() != self.ub.len() {
            return bad("inequality system");
        }
        Ok(())
    }

    pub fn to_dump(&self) -> QpDump {
        let opt = |v: &DVector<f64>| v.iter().map(|&x| x.is_finite().then_some(x)).collect();
        QpDump {
            dim: self.dim(),
            h: rows_of(&self.h),
            g: self.g.iter().copied().collect(),
            a_eq: rows_of(&self.a_eq),
            b_eq: self.b_eq.iter().copied().collect(),
            a_in: rows_of(&self.a_in),
            lb: opt(&self.lb),
            ub: opt(&self.ub),
        }
    }

    pub fn from_dump(d: &QpDump) -> Result<Self, QpError> {
        let n = d.dim;
        let bound = |v: &[Option<f64>], inf: f64| DVector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(inf)));
        let p = Self {
            h: from_rows(&d.h, n)?,
            g: DVector::from_column_slice(&d.g),
            a_eq: from_rows(&d.a_eq, n)?,
            b_eq: DVector::from_column_slice(&d.b_eq),
            a_in: from_rows(&d.a_in, n)?,
            lb: bound(&d.lb, f64::NEG_INFINITY),
            ub: bound(&d.ub, f64::INFINITY),
        };
        p.check_dims()?;
        Ok(p)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn check_kkt(p: &QpProblem, x: &DVector<f64>, mult: &Multipliers) -> Result<KktReport, QpError> {
    p.check_dims()?;
    if x.len() != p.dim() || mult.eq.len() != p.b_eq.len() || mult.ineq.len() != p.lb.len() {
        return Err(QpError::DimensionMismatch("iterate or multipliers".into()));
    }
    let hx = &p.h * x;
    let at_eq = p.a_eq.tr_mul(&mult.eq);
    let at_in = p.a_in.tr_mul(&mult.ineq);
    let stationarity = inf_norm(&(&hx + &p.g + &at_eq + &at_in));

    let ax_eq = &p.a_eq * x;
    let ax_in = &p.a_in * x;
    let mut primal = inf_norm(&(&ax_eq - &p.b_eq));
    let mut dual: f64 = 0.0;
    let mut compl: f64 = 0.0;
    for i in 0..p.lb.len() {
        let (l, u, a, y) = (p.lb[i], p.ub[i], ax_in[i], mult.ineq[i]);
        primal = primal.max(l - a).max(a - u);
        if y > 0.0 {
            if u.is_finite() {
                compl = compl.max(y * (u - a).abs());
            } else {
                dual = dual.max(y);
            }
        } else if y < 0.0 {
            if l.is_finite() {
                compl = compl.max(-y * (a - l).abs());
            } else {
                dual = dual.max(-y);
            }
        }
    }
    let scale = 1.0_f64
        .max(inf_norm(&hx))
        .max(inf_norm(&p.g))
        .max(inf_norm(&at_eq))
        .max(inf_norm(&at_in));
    let finite_bound = p.lb.iter().chain(p.ub.iter()).filter(|v| v.is_finite()).fold(0.0_f64, |m, v| m.max(v.abs()));
    let primal_scale = 1.0_f64
        .max(inf_norm(&ax_eq))
        .max(inf_norm(&ax_in))
        .max(inf_norm(&p.b_eq))
        .max(finite_bound);
    Ok(KktReport {
        stationarity,
        primal,
        dual,
        complementarity: compl,
        scale,
        primal_scale,
    })
}

/// Constraints rewritten as `A x = b` and one-sided rows `G x ≥ h`, every row
/// scaled to unit max-norm.
struct Form {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Original equality row and the factor mapping `y` back to `λ`.
    eq_src: Vec<(usize, f64)>,
    g: Vec<Vec<(usize, f64)>>,
    h: DVector<f64>,
    /// Original inequality row and the factor mapping `z` back to `μ`.
    in_src: Vec<(usize, f64)>,
}

const ZERO_ROW: f64 = 1e-14;

impl Form {
    /// `None` when a constraint row without coefficients is violated.
    fn new(p: &QpProblem) -> Option<Self> {
        let n = p.dim();
        let mut eq_src = Vec::new();
        let mut eq_rows = Vec::new();
        let mut b = Vec::new();
        for i in 0..p.b_eq.len() {
            let r = p.a_eq.row(i).amax();
            if r <= ZERO_ROW {
                if p.b_eq[i].abs() > 1e-9 {
                    return None;
                }
                continue;
            }
            eq_rows.push(i);
            eq_src.push((i, -1.0 / r));
            b.push(p.b_eq[i] / r);
        }
        let a = DMatrix::from_fn(eq_rows.len(), n, |k, j| p.a_eq[(eq_rows[k], j)] * (-eq_src[k].1));

        let mut g = Vec::new();
        let mut h = Vec::new();
        let mut in_src = Vec::new();
        for i in 0..p.lb.len() {
            let (l, u) = (p.lb[i], p.ub[i]);
            if l > u {
                return None;
            }
            let r = p.a_in.row(i).amax();
            if r <= ZERO_ROW {
                if l > 1e-9 || u < -1e-9 {
                    return None;
                }
                continue;
            }
            let row: Vec<(usize, f64)> =
                (0..n).filter(|&j| p.a_in[(i, j)] != 0.0).map(|j| (j, p.a_in[(i, j)] / r)).collect();
            if l.is_finite() {
                g.push(row.clone());
                h.push(l / r);
                in_src.push((i, -1.0 / r));
            }
            if u.is_finite() {
                g.push(row.iter().map(|&(j, v)| (j, -v)).collect());
                h.push(-u / r);
                in_src.push((i, 1.0 / r));
            }
        }
        Some(Self { a, b: DVector::from_vec(b), eq_src, g, h: DVector::from_vec(h), in_src })
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.g.len(), self.g.iter().map(|row| row.iter().map(|&(j, v)| v * x[j]).sum()))
    }

    fn g_mul_t(&self, z: &DVector<f64>, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for (row, &zi) in self.g.iter().zip(z.iter()) {
            for &(j, v) in row {
                out[j] += v * zi;
            }
        }
        out
    }

    fn multipliers(&self, p: &QpProblem, y: &DVector<f64>, z: &DVector<f64>) -> Multipliers {
        let mut eq = DVector::zeros(p.b_eq.len());
        for (k, &(i, f)) in self.eq_src.iter().enumerate() {
            eq[i] = f * y[k];
        }
        let mut ineq = DVector::zeros(p.lb.len());
        for (k, &(i, f)) in self.in_src.iter().enumerate() {
            ineq[i] += f * z[k];
        }
        Multipliers { eq, ineq }
    }

    fn data_norm(&self, p: &QpProblem) -> f64 {
        1.0_f64
            .max(p.h.amax())
            .max(p.g.amax())
            .max(self.b.amax())
            .max(self.h.amax())
            .max(if self.a.is_empty() { 0.0 } else { self.a.amax() })
    }
}

/// Factorized Newton system `[[H + εI + GᵀWG, Aᵀ], [A, −δI]]`.
struct Newton {
    n: usize,
    /// Unregularized matrix used for iterative refinement.
    exact: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Newton {
    fn factor(p: &QpProblem, f: &Form, w: &[f64], reg: f64) -> Result<Self, QpError> {
        let n = p.dim();
        let me = f.b.len();
        let mut exact = DMatrix::zeros(n + me, n + me);
        exact.view_mut((0, 0), (n, n)).copy_from(&p.h);
        for (row, &wi) in f.g.iter().zip(w) {
            for &(i, vi) in row {
                for &(j, vj) in row {
                    exact[(i, j)] += wi * vi * vj;
                }
            }
        }
        for r in 0..me {
            for j in 0..n {
                exact[(n + r, j)] = f.a[(r, j)];
                exact[(j, n + r)] = f.a[(r, j)];
            }
        }
        let mut eps = reg;
        for _ in 0..6 {
            let mut k = exact.clone();
            for j in 0..n + me {
                k[(j, j)] += if j < n { eps } else { -eps };
            }
            let lu = k.lu();
            if lu.is_invertible() && lu_finite(&lu) {
                return Ok(Self { n, exact, lu });
            }
            eps = (eps * 100.0).max(1e-10);
        }
        Err(QpError::NumericalBreakdown)
    }

    /// Returns `(Δx, Δy)` for primal rhs `r1` and equality rhs `r2`.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.n;
        let mut rhs = DVector::zeros(n + r2.len());
        rhs.rows_mut(0, n).copy_from(r1);
        rhs.rows_mut(n, r2.len()).copy_from(r2);
        let mut sol = self.lu.solve(&rhs)?;
        for _ in 0..REFINE_STEPS {
            sol += self.lu.solve(&(&rhs - &self.exact * &sol))?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), -sol.rows(n, r2.len()).into_owned()))
    }
}

const REFINE_STEPS: usize = 2;

fn lu_finite(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    lu.u().diagonal().iter().all(|v| v.is_finite() && *v != 0.0)
}

/// Largest step in `(0, 1]` keeping `v + αΔv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, &d)| d < 0.0).fold(1.0, |a, (&x, &d)| a.min(-x / d))
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

struct Direction {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

fn direction(
    f: &Form,
    k: &Newton,
    it: &Iterate,
    r_d: &DVector<f64>,
    r_p: &DVector<f64>,
    r_g: &DVector<f64>,
    r_sz: &DVector<f64>,
) -> Option<Direction> {
    let n = it.x.len();
    let t = DVector::from_fn(it.s.len(), |i, _| (r_sz[i] + it.z[i] * r_g[i]) / it.s[i]);
    let r1 = -r_d - f.g_mul_t(&t, n);
    let (dx, dy) = k.solve(&r1, &(-r_p))?;
    let ds = f.g_mul(&dx) + r_g;
    let dz = DVector::from_fn(it.s.len(), |i, _| -(r_sz[i] + it.z[i] * ds[i]) / it.s[i]);
    Some(Direction { x: dx, y: dy, z: dz, s: ds })
}

/// Re-solves the KKT system with the strictly active rows held as equalities.
fn polish(p: &QpProblem, f: &Form, it: &Iterate, reg: f64) -> Option<(DVector<f64>, Multipliers)> {
    let n = p.dim();
    let active: Vec<usize> = (0..f.g.len()).filter(|&i| it.z[i] > it.s[i]).collect();
    let me = f.b.len();
    let na = active.len();
    if me + na > n {
        return None;
    }
    let dim = n + me + na;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for r in 0..me {
        for j in 0..n {
            k[(n + r, j)] = f.a[(r, j)];
            k[(j, n + r)] = f.a[(r, j)];
        }
    }
    for (r, &i) in active.iter().enumerate() {
        for &(j, v) in &f.g[i] {
            k[(n + me + r, j)] = v;
            k[(j, n + me + r)] = v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.g));
    rhs.rows_mut(n, me).copy_from(&f.b);
    for (r, &i) in active.iter().enumerate() {
        rhs[n + me + r] = f.h[i];
    }
    let mut kr = k.clone();
    for j in 0..dim {
        kr[(j, j)] += if j < n { reg } else { -reg };
    }
    let lu = kr.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..3 {
        let corr = lu.solve(&(&rhs - &k * &sol))?;
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let y = -sol.rows(n, me).into_owned();
    let mut z = DVector::zeros(f.g.len());
    for (r, &i) in active.iter().enumerate() {
        z[i] = -sol[n + me + r];
    }
    Some((x, f.multipliers(p, &y, &z)))
}

const STEP_FRACTION: f64 = 0.995;
/// Accuracy pursued past the requested tolerance while progress is cheap.
const EXTRA_ACCURACY: f64 = 1e-3;

pub fn solve(p: &QpProblem, opt: &SolverOptions) -> Result<QpSolution, QpError> {
    p.check_dims()?;
    let n = p.dim();
    let tol = opt.tolerance;
    let finish = |x: DVector<f64>, mult: Multipliers, status, iterations| -> Result<QpSolution, QpError> {
        let kkt = check_kkt(p, &x, &mult)?;
        Ok(QpSolution { objective: p.objective(&x), x, status, kkt, multipliers: mult, iterations })
    };
    let Some(f) = Form::new(p) else {
        let mult = Multipliers { eq: DVector::zeros(p.b_eq.len()), ineq: DVector::zeros(p.lb.len()) };
        return finish(DVector::zeros(n), mult, QpStatus::Infeasible, 0);
    };
    let m = f.g.len();

    let k0 = Newton::factor(p, &f, &vec![1.0; m], opt.regularization)?;
    let (x, y) = k0
        .solve(&(-&p.g + f.g_mul_t(&f.h, n)), &f.b)
        .ok_or(QpError::NumericalBreakdown)?;
    let data = f.data_norm(p);
    let start = data.sqrt();
    let r0 = f.g_mul(&x) - &f.h;
    let s = r0.map(|v| v.max(0.0) + start);
    let z = DVector::from_element(m, start);
    let mut it = Iterate { x, y, z, s };

    let mut phi_min = f64::INFINITY;
    let mut phi_hist: Vec<f64> = Vec::new();
    let mut best: Option<(f64, DVector<f64>, Multipliers)> = None;
    let mut since_best = 0usize;

    for iter in 0..opt.max_iterations {
        let r_d = &p.h * &it.x + &p.g - f.a.tr_mul(&it.y) - f.g_mul_t(&it.z, n);
        let r_p = &f.a * &it.x - &f.b;
        let r_g = f.g_mul(&it.x) - &it.s - &f.h;
        let mu = if m == 0 { 0.0 } else { it.s.dot(&it.z) / m as f64 };

        let mult = f.multipliers(p, &it.y, &it.z);
        let kkt = check_kkt(p, &it.x, &mult)?;
        let rel = kkt.relative();
        if best.as_ref().is_none_or(|b| rel < b.0) {
            if best.as_ref().is_some_and(|b| rel < 0.5 * b.0) || best.is_none() {
                since_best = 0;
            }
            best = Some((rel, it.x.clone(), mult));
        } else {
            since_best += 1;
        }
        let best_rel = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if best_rel <= tol * EXTRA_ACCURACY || (best_rel <= tol && since_best >= 3) {
            let (_, mut x, mut mult) = best.unwrap();
            if let Some((px, pm)) = polish(p, &f, &it, opt.regularization) {
                let pk = check_kkt(p, &px, &pm)?;
                if pk.relative() < best_rel {
                    (x, mult) = (px, pm);
                }
            }
            return finish(x, mult, QpStatus::Optimal, iter);
        }

        let gap = it.x.dot(&(&p.h * &it.x)) + p.g.dot(&it.x) - f.b.dot(&it.y) - f.h.dot(&it.z);
        let phi = (r_d.amax().max(r_p.amax()).max(r_g.amax()) + gap.abs()) / data;
        phi_min = phi_min.min(phi);
        phi_hist.push(phi);
        let diverging = phi > 1e-8 && phi >= 1e4 * phi_min;
        let stalled = iter >= opt.stall_iterations && phi >= 0.5 * phi_hist[iter - opt.stall_iterations];
        if diverging || stalled {
            break;
        }

        let w: Vec<f64> = (0..m).map(|i| it.z[i] / it.s[i]).collect();
        let Ok(kn) = Newton::factor(p, &f, &w, opt.regularization) else { break };
        let r_sz = it.s.component_mul(&it.z);
        let Some(aff) = direction(&f, &kn, &it, &r_d, &r_p, &r_g, &r_sz) else { break };
        let a_aff = max_step(&it.s, &aff.s).min(max_step(&it.z, &aff.z));
        let sigma = if m == 0 || mu <= 0.0 {
            0.0
        } else {
            let mu_aff = (&it.s + &aff.s * a_aff).dot(&(&it.z + &aff.z * a_aff)) / m as f64;
            (mu_aff / mu).powi(3)
        };
        let r_sz = &r_sz + aff.s.component_mul(&aff.z) - DVector::from_element(m, sigma * mu);
        let Some(d) = direction(&f, &kn, &it, &r_d, &r_p, &r_g, &r_sz) else { break };
        let alpha = (STEP_FRACTION * max_step(&it.s, &d.s).min(max_step(&it.z, &d.z))).min(1.0);
        it.x += &d.x * alpha;
        it.y += &d.y * alpha;
        it.z += &d.z * alpha;
        it.s += &d.s * alpha;
    }

    let iterations = phi_hist.len();
    match best {
        Some((rel, x, mult)) if rel <= tol => finish(x, mult, QpStatus::Optimal, iterations),
        Some((_, x, mult)) => {
            let status = if iterations >= opt.max_iterations { QpStatus::MaxIterations } else { QpStatus::Infeasible };
            finish(x, mult, status, iterations)
        }
        None => unreachable!("at least one iterate is evaluated when max_iterations > 0"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn scalar_lower_bound() {
        let p = QpProblem {
            h: m(1, 1, &[2.0]),
            g: v(&[0.0]),
            a_eq: DMatrix::zeros(0, 1),
            b_eq: v(&[]),
            a_in: m(1, 1, &[1.0]),
            lb: v(&[1.0]),
            ub: v(&[f64::INFINITY]),
        };
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!((sol.objective - 1.0).abs() < 1e-8);
        assert!(sol.kkt.passes(1e-6));
    }

    #[test]
    fn symmetric_equality() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), v(&[0.0, 0.0]));
        p.a_eq = m(1, 2, &[1.0, 1.0]);
        p.b_eq = v(&[2.0]);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8 && (sol.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn box_matches_grid_search() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), v(&[-1.0, -2.0]));
        p.a_in = DMatrix::identity(2, 2);
        p.lb = v(&[0.0, 0.0]);
        p.ub = v(&[0.5, 3.0]);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=500 {
            for j in 0..=3000 {
                let (a, b) = (i as f64 * 1e-3, j as f64 * 1e-3);
                let f = 0.5 * (a * a + b * b) - a - 2.0 * b;
                if f < best.0 {
                    best = (f, a, b);
                }
            }
        }
        assert!((sol.x[0] - best.1).abs() <= 1e-3 && (sol.x[1] - best.2).abs() <= 1e-3);
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_box() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(1, 1), v(&[0.0]));
        p.a_in = m(2, 1, &[1.0, 1.0]);
        p.lb = v(&[2.0, f64::NEG_INFINITY]);
        p.ub = v(&[f64::INFINITY, 1.0]);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn large_multipliers_do_not_hide_primal_violation() {
        // x = 0 against x >= 1e-3: huge multipliers would dominate a shared scale
        let mut p = QpProblem::unconstrained(DMatrix::identity(1, 1), v(&[0.0]));
        p.a_eq = m(1, 1, &[1.0]);
        p.b_eq = v(&[0.0]);
        p.a_in = m(1, 1, &[1.0]);
        p.lb = v(&[1e-3]);
        p.ub = v(&[f64::INFINITY]);
        let mult = Multipliers { eq: v(&[1e6]), ineq: v(&[-1e6]) };
        let r = check_kkt(&p, &v(&[5e-4]), &mult).unwrap();
        assert!(!r.passes(1e-6));
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_ne!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn dimension_mismatch() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), v(&[0.0]));
        assert!(matches!(solve(&p, &SolverOptions::default()), Err(QpError::DimensionMismatch(_))));
        p.g = v(&[0.0, 0.0]);
        p.a_eq = DMatrix::zeros(1, 2);
        assert!(solve(&p, &SolverOptions::default()).is_err());
    }

    fn lower_bound_as_upper() -> QpProblem {
        // x >= 1 written as -x <= -1
        QpProblem {
            h: m(1, 1, &[2.0]),
            g: v(&[0.0]),
            a_eq: DMatrix::zeros(0, 1),
            b_eq: v(&[]),
            a_in: m(1, 1, &[-1.0]),
            lb: v(&[f64::NEG_INFINITY]),
            ub: v(&[-1.0]),
        }
    }

    #[test]
    fn kkt_at_optimum_is_zero() {
        let p = lower_bound_as_upper();
        let mult = Multipliers { eq: v(&[]), ineq: v(&[2.0]) };
        let r = check_kkt(&p, &v(&[1.0]), &mult).unwrap();
        assert_eq!(r.max_residual(), 0.0);
    }

    #[test]
    fn kkt_interior_point_not_stationary() {
        let p = lower_bound_as_upper();
        let mult = Multipliers { eq: v(&[]), ineq: v(&[0.0]) };
        let r = check_kkt(&p, &v(&[2.0]), &mult).unwrap();
        assert!(r.stationarity > 0.0);
    }

    #[test]
    fn kkt_wrong_sign_multiplier() {
        let p = lower_bound_as_upper();
        let mult = Multipliers { eq: v(&[]), ineq: v(&[-2.0]) };
        let r = check_kkt(&p, &v(&[1.0]), &mult).unwrap();
        assert!(r.dual > 0.0);
    }

    #[test]
    fn dump_round_trip() {
        let mut p = QpProblem::unconstrained(m(2, 2, &[2.0, 0.5, 0.5, 1.0]), v(&[1.0, -1.0]));
        p.a_in = m(1, 2, &[1.0, 2.0]);
        p.lb = v(&[f64::NEG_INFINITY]);
        p.ub = v(&[3.0]);
        let json = serde_json::to_string(&p.to_dump()).unwrap();
        let back = QpProblem::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.to_dump().h, vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
    }

    fn random_problem(seed: &[f64], n: usize) -> QpProblem {
        let mut it = seed.iter().cycle().copied();
        let mut next = || it.next().unwrap();
        let mm = DMatrix::from_fn(n, n, |_, _| next());
        let h = mm.transpose() * &mm + DMatrix::identity(n, n) * 1e-3;
        let g = DVector::from_fn(n, |_, _| next() * 3.0);
        let x0 = DVector::from_fn(n, |_, _| next());
        let a_in = DMatrix::from_fn(n + 2, n, |_, _| next());
        let ax = &a_in * &x0;
        let lb = DVector::from_fn(n + 2, |i, _| ax[i] - 0.1 - next().abs());
        let ub = DVector::from_fn(n + 2, |i, _| ax[i] + 0.1 + next().abs());
        let a_eq = DMatrix::from_fn(1, n, |_, _| next());
        let b_eq = &a_eq * &x0;
        QpProblem { h, g, a_eq, b_eq, a_in, lb, ub }
    }

    #[test]
    fn deterministic() {
        let seed: Vec<f64> = (0..97).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let p = random_problem(&seed, 6);
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn optimal_passes_kkt_and_scales(seed in prop::collection::vec(-1.0..1.0f64, 64..128), n in 2usize..8, k in 0.1..10.0f64) {
            let p = random_problem(&seed, n);
            let sol = solve(&p, &SolverOptions::default()).unwrap();
            prop_assert_eq!(sol.status, QpStatus::Optimal);
            prop_assert!(sol.kkt.passes(1e-6));
            let mut scaled = p.clone();
            scaled.h *= k;
            scaled.g *= k;
            let s2 = solve(&scaled, &SolverOptions::default()).unwrap();
            prop_assert!((&s2.x - &sol.x).amax() < 1e-6);
        }
    }
}
