//! Time-scaled piecewise quintic Bezier curves in the (s, d) plane.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEGREE: usize = 5;
pub const N_CTRL: usize = DEGREE + 1;

const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BezierError {
    #[error("t = {t} outside segment span [{lt}, {ut}]")]
    OutOfSpan { t: f64, lt: f64, ut: f64 },
    #[error("derivative order {0} not supported")]
    BadOrder(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    S,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BezierSegment {
    pub s: [f64; N_CTRL],
    pub d: [f64; N_CTRL],
    pub lt: f64,
    pub ut: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Bernstein sum of arbitrary degree at `u` via de Casteljau.
pub fn bernstein_sum(points: &[f64], u: f64) -> f64 {
    let mut buf = [0.0; N_CTRL];
    let n = points.len();
    buf[..n].copy_from_slice(points);
    for level in 1..n {
        for k in 0..n - level {
            buf[k] = (1.0 - u) * buf[k] + u * buf[k + 1];
        }
    }
    buf[0]
}

/// Control points of the `order`-th time derivative of a scaled segment.
pub fn derivative_control_points(points: &[f64; N_CTRL], dt: f64, order: usize) -> Vec<f64> {
    let mut cur: Vec<f64> = points.to_vec();
    for r in 1..=order {
        let deg = (N_CTRL - r) as f64;
        // The first derivative absorbs the time scale exactly.
        let scale = if r == 1 { deg } else { deg / dt };
        cur = cur.windows(2).map(|w| scale * (w[1] - w[0])).collect();
    }
    cur
}

/// Linear map from the 6 raw control points to the physical control points
/// of the given derivative order (order 0 is position, `dt * p`).
pub fn derivative_map(order: usize, dt: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::identity(N_CTRL, N_CTRL);
    if order == 0 {
        return m * dt;
    }
    for r in 1..=order {
        let rows = N_CTRL - r;
        let deg = rows as f64;
        let scale = if r == 1 { deg } else { deg / dt };
        let mut diff = DMatrix::<f64>::zeros(rows, rows + 1);
        for k in 0..rows {
            diff[(k, k)] = -scale;
            diff[(k, k + 1)] = scale;
        }
        m = diff * m;
    }
    m
}

/// De Casteljau split at `t`: control points of the pieces on `[0, t]` and `[t, 1]`.
fn split(points: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let n = points.len();
    let mut cur = points.to_vec();
    let (mut left, mut right) = (Vec::with_capacity(n), vec![0.0; n]);
    for level in 0..n {
        left.push(cur[0]);
        right[n - 1 - level] = cur[n - 1 - level];
        for k in 0..n - 1 - level {
            cur[k] = (1.0 - t) * cur[k] + t * cur[k + 1];
        }
    }
    (left, right)
}

/// Linear map from the `m` control points of a Bezier curve on [0, 1] to the
/// control points of its restriction to `[a, b]`.
pub fn subdivision_map(m: usize, a: f64, b: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    for col in 0..m {
        let mut e = vec![0.0; m];
        e[col] = 1.0;
        let tail = if a > 0.0 { split(&e, a).1 } else { e };
        let piece = if a < 1.0 { split(&tail, (b - a) / (1.0 - a)).0 } else { tail };
        for (row, v) in piece.into_iter().enumerate() {
            out[(row, col)] = v;
        }
    }
    out
}

/// Gram matrix of the degree-`m` Bernstein basis on [0, 1].
pub fn bernstein_gram(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m + 1, m + 1, |j, k| {
        binomial(m, j) * binomial(m, k) / ((2 * m + 1) as f64 * binomial(2 * m, j + k))
    })
}

/// Quadratic form `Q` with `pᵀQp = ∫ (d^order ξ / dt^order)² dt` over the segment.
pub fn squared_derivative_integral(order: usize, dt: f64) -> DMatrix<f64> {
    let d = derivative_map(order, dt);
    let g = bernstein_gram(DEGREE - order);
    (d.transpose() * g * d) * dt
}

impl BezierSegment {
    pub fn duration(&self) -> f64 {
        self.ut - self.lt
    }

    pub fn points(&self, axis: Axis) -> &[f64; N_CTRL] {
        match axis {
            Axis::S => &self.s,
            Axis::D => &self.d,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.ut > self.lt && self.s.iter().chain(&self.d).all(|v| v.is_finite())
    }

    /// Value or time derivative (order 0..=3) at absolute time `t`.
    pub fn evaluate(&self, t: f64, axis: Axis, order: usize) -> Result<f64, BezierError> {
        if order > 3 {
            return Err(BezierError::BadOrder(order));
        }
        if t < self.lt - SPAN_TOL || t > self.ut + SPAN_TOL {
            return Err(BezierError::OutOfSpan { t, lt: self.lt, ut: self.ut });
        }
        let dt = self.duration();
        let u = ((t - self.lt) / dt).clamp(0.0, 1.0);
        let p = self.points(axis);
        if order == 0 {
            return Ok(dt * bernstein_sum(p, u));
        }
        Ok(bernstein_sum(&derivative_control_points(p, dt, order), u))
    }

    /// Physical position at the end of the span.
    pub fn end_position(&self, axis: Axis) -> f64 {
        self.duration() * self.points(axis)[N_CTRL - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBezier {
    pub segments: Vec<BezierSegment>,
}

/// One row of a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub s: f64,
    pub d: f64,
    pub v_s: f64,
    pub v_d: f64,
    pub a_s: f64,
    pub a_d: f64,
    pub jerk_s: f64,
    pub jerk_d: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurvatureProfile {
    pub samples: Vec<(f64, f64)>,
    /// Sample times skipped because the speed was near zero.
    pub degenerate: Vec<f64>,
}

impl PiecewiseBezier {
    pub fn new(segments: Vec<BezierSegment>) -> Self {
        Self { segments }
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.lt)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.ut)
    }

    pub fn segment_index(&self, t: f64) -> usize {
        let idx = self.segments.partition_point(|seg| seg.ut <= t);
        idx.min(self.segments.len().saturating_sub(1))
    }

    /// Evaluates at `t`, clamped into the curve's span.
    pub fn eval(&self, t: f64, axis: Axis, order: usize) -> f64 {
        let t = t.clamp(self.start(), self.end());
        let seg = &self.segments[self.segment_index(t)];
        seg.evaluate(t, axis, order).expect("clamped time inside span")
    }

    pub fn sample_times(&self, step: f64) -> Vec<f64> {
        let (a, b) = (self.start(), self.end());
        let n = ((b - a) / step + 1e-9).floor() as usize;
        let mut ts: Vec<f64> = (0..=n).map(|k| a + k as f64 * step).collect();
        if b - ts.last().copied().unwrap_or(a) > 1e-9 {
            ts.push(b);
        }
        ts
    }

    pub fn sample(&self, step: f64) -> Vec<TrajectorySample> {
        self.sample_times(step)
            .into_iter()
            .map(|t| {
                let v_s = self.eval(t, Axis::S, 1);
                let v_d = self.eval(t, Axis::D, 1);
                let a_s = self.eval(t, Axis::S, 2);
                let a_d = self.eval(t, Axis::D, 2);
                TrajectorySample {
                    t,
                    s: self.eval(t, Axis::S, 0),
                    d: self.eval(t, Axis::D, 0),
                    v_s,
                    v_d,
                    a_s,
                    a_d,
                    jerk_s: self.eval(t, Axis::S, 3),
                    jerk_d: self.eval(t, Axis::D, 3),
                    kappa: curvature(v_s, v_d, a_s, a_d).unwrap_or(f64::NAN),
                }
            })
            .collect()
    }

    /// Shifts every position by a constant offset.
    pub fn translated(&self, ds: f64, dd: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|seg| {
                let dt = seg.duration();
                let mut out = *seg;
                out.s.iter_mut().for_each(|p| *p += ds / dt);
                out.d.iter_mut().for_each(|p| *p += dd / dt);
                out
            })
            .collect();
        Self { segments }
    }

    /// Writes sampled rows as CSV.
    pub fn write_csv<W: std::io::Write>(&self, step: f64, out: W) -> csv::Result<()> {
        write_samples_csv(&self.sample(step), out)
    }
}

pub fn write_samples_csv<W: std::io::Write>(samples: &[TrajectorySample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in samples {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Planar curvature from first and second derivatives, `None` near standstill.
pub fn curvature(v_s: f64, v_d: f64, a_s: f64, a_d: f64) -> Option<f64> {
    let sq = v_s * v_s + v_d * v_d;
    if sq < 1e-6 {
        return None;
    }
    Some((v_s * a_d - v_d * a_s).abs() / sq.powf(1.5))
}

pub fn curvature_profile(traj: &PiecewiseBezier, sample_dt: f64) -> CurvatureProfile {
    let mut out = CurvatureProfile::default();
    for t in traj.sample_times(sample_dt) {
        let k = curvature(
            traj.eval(t, Axis::S, 1),
            traj.eval(t, Axis::D, 1),
            traj.eval(t, Axis::S, 2),
            traj.eval(t, Axis::D, 2),
        );
        match k {
            Some(k) => out.samples.push((t, k)),
            None => out.degenerate.push(t),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: [f64; 6], d: [f64; 6], lt: f64, ut: f64) -> BezierSegment {
        BezierSegment { s, d, lt, ut }
    }

    #[test]
    fn constant_points() {
        let b = seg([3.0; 6], [0.0; 6], 1.0, 3.0);
        for t in [1.0, 1.7, 3.0] {
            assert!((b.evaluate(t, Axis::S, 0).unwrap() - 6.0).abs() < 1e-12);
            assert_eq!(b.evaluate(t, Axis::S, 1).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_precision() {
        let b = seg([0.0, 0.2, 0.4, 0.6, 0.8, 1.0], [0.0; 6], 0.0, 1.0);
        let v = b.evaluate(0.5, Axis::S, 0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_span() {
        let b = seg([0.0; 6], [0.0; 6], 0.0, 1.0);
        assert!(matches!(b.evaluate(1.1, Axis::S, 0), Err(BezierError::OutOfSpan { .. })));
        assert!(b.evaluate(1.0 + 1e-10, Axis::S, 0).is_ok());
    }

    #[test]
    fn derivative_points_examples() {
        assert_eq!(derivative_control_points(&[2.0; 6], 1.0, 1), vec![0.0; 5]);
        assert_eq!(
            derivative_control_points(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 1.0, 1),
            vec![5.0; 5]
        );
        assert_eq!(
            derivative_control_points(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 2.0, 2),
            vec![10.0, -20.0, 10.0, 0.0]
        );
    }

    #[test]
    fn derivative_points_match_finite_differences() {
        let p = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let b = seg(p, [0.0; 6], 0.0, 1.0);
        let h = 1e-5;
        for k in 1..1000 {
            let t = k as f64 * 1e-3;
            let fd = (b.evaluate(t + h, Axis::S, 0).unwrap() - b.evaluate(t - h, Axis::S, 0).unwrap()) / (2.0 * h);
            assert!((fd - 5.0).abs() < 1e-6);
        }
        let q = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let b = seg(q, [0.0; 6], 0.0, 2.0);
        let acc = derivative_control_points(&q, 2.0, 2);
        for k in 1..100 {
            let t = k as f64 * 0.02;
            let fd = (b.evaluate(t + h, Axis::S, 1).unwrap() - b.evaluate(t - h, Axis::S, 1).unwrap()) / (2.0 * h);
            let via = bernstein_sum(&acc, t / 2.0);
            assert!((fd - via).abs() < 1e-5 * (1.0 + via.abs()));
        }
    }

    #[test]
    fn derivative_map_matches_points() {
        let p = [0.3, -1.0, 2.5, 4.0, 0.1, 7.0];
        for order in 0..=3 {
            let m = derivative_map(order, 1.7);
            let got = &m * nalgebra::DVector::from_column_slice(&p);
            let want: Vec<f64> = if order == 0 {
                p.iter().map(|v| v * 1.7).collect()
            } else {
                derivative_control_points(&p, 1.7, order)
            };
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn gram_integral_matches_quadrature() {
        let p = [0.0, 2.0, -1.0, 3.0, 5.0, 4.0];
        let b = seg(p, [0.0; 6], 2.0, 3.5);
        let pv = nalgebra::DVector::from_column_slice(&p);
        for order in 1..=3 {
            let q = squared_derivative_integral(order, 1.5);
            let exact = (pv.transpose() * &q * &pv)[(0, 0)];
            let num = simpson(|t| b.evaluate(t, Axis::S, order).unwrap().powi(2), 2.0, 3.5, 2000);
            assert!((exact - num).abs() < 1e-9 * (1.0 + num.abs()), "order {order}: {exact} vs {num}");
        }
    }

    #[test]
    fn straight_line_has_zero_curvature() {
        let b = seg([0.0, 2.0, 4.0, 6.0, 8.0, 10.0], [0.0; 6], 0.0, 1.0);
        let prof = curvature_profile(&PiecewiseBezier::new(vec![b]), 0.02);
        assert!(prof.degenerate.is_empty());
        assert!(prof.samples.iter().all(|&(_, k)| k == 0.0));
    }

    #[test]
    fn circle_curvature() {
        // s = R sin(w t), d = R (1 - cos(w t)), R = 50, speed 10
        let (r, w) = (50.0f64, 0.2f64);
        for t in [0.0f64, 0.7, 1.9] {
            let (vs, vd) = (r * w * (w * t).cos(), r * w * (w * t).sin());
            let (a_s, a_d) = (-r * w * w * (w * t).sin(), r * w * w * (w * t).cos());
            let k = curvature(vs, vd, a_s, a_d).unwrap();
            assert!((k - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn standstill_is_degenerate() {
        let b = seg([1.0; 6], [0.0; 6], 0.0, 1.0);
        let prof = curvature_profile(&PiecewiseBezier::new(vec![b]), 0.25);
        assert!(prof.samples.is_empty());
        assert_eq!(prof.degenerate.len(), 5);
    }

    #[test]
    fn translation_shifts_positions() {
        let b = seg([0.0, 1.0, 2.0, 3.0, 4.0, 5.0], [0.0; 6], 0.0, 2.0);
        let pw = PiecewiseBezier::new(vec![b]).translated(10.0, -2.0);
        assert!((pw.eval(1.0, Axis::S, 0) - 15.0).abs() < 1e-12);
        assert!((pw.eval(1.0, Axis::D, 0) + 2.0).abs() < 1e-12);
        assert!((pw.eval(1.0, Axis::S, 1) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sample_grid_includes_end() {
        let b = seg([0.0; 6], [0.0; 6], 0.0, 1.01);
        let ts = PiecewiseBezier::new(vec![b]).sample_times(0.02);
        assert_eq!(ts.len(), 52);
        assert_eq!(*ts.last().unwrap(), 1.01);
    }

    #[test]
    fn subdivision_traces_the_same_curve() {
        let q = [1.0, -2.0, 0.5, 3.0, 2.0];
        let m = subdivision_map(5, 0.25, 0.75);
        let piece: Vec<f64> = (&m * nalgebra::DVector::from_column_slice(&q)).iter().copied().collect();
        for k in 0..=10 {
            let v = k as f64 / 10.0;
            let want = bernstein_sum(&q, 0.25 + 0.5 * v);
            assert!((bernstein_sum(&piece, v) - want).abs() < 1e-12);
        }
        let whole = subdivision_map(5, 0.0, 1.0);
        assert!((whole - DMatrix::<f64>::identity(5, 5)).amax() < 1e-15);
    }

    proptest! {
        #[test]
        fn endpoints_interpolate(p in prop::array::uniform6(-50.0..50.0f64), dt in 0.1..5.0f64) {
            let b = seg(p, p, 1.0, 1.0 + dt);
            let span = b.duration();
            prop_assert_eq!(b.evaluate(b.lt, Axis::S, 0).unwrap(), span * p[0]);
            prop_assert_eq!(b.evaluate(b.ut, Axis::S, 0).unwrap(), span * p[5]);
        }

        #[test]
        fn convex_hull(p in prop::array::uniform6(-50.0..50.0f64), dt in 0.1..5.0f64) {
            let b = seg(p, [0.0; 6], 0.0, dt);
            let lo = p.iter().cloned().fold(f64::INFINITY, f64::min) * dt;
            let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * dt;
            for k in 0..=50 {
                let v = b.evaluate(dt * k as f64 / 50.0, Axis::S, 0).unwrap();
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}
