//! Leaves of the invariant foliations on the universal cover and the geometric
//! diagnostics built from them: su-closure defects, holonomies, quasi-isometry,
//! homology deviation and the holonomy ratio test.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundles::{self, Bundle, Depths};
use crate::error::{Error, Result};
use crate::model::MapModel;
use crate::orbits::PeriodicOrbit;
use crate::torus::{LiftPoint, Mat3, Vec3};

pub const DEFAULT_STEP: f64 = 0.01;
const SHOOT_TOL: f64 = 1e-13;
const SHOOT_ITER: usize = 40;
/// Largest shooting residual accepted when the iteration stalls.
const SHOOT_ACCEPT: f64 = 1e-8;
/// Closest-approach gap accepted by [`holonomy`]: two traced curves only meet up to
/// the center tracing error, about `1e-7` on perturbed models.
const HOLONOMY_ACCEPT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    /// Largest integration step in leaf parameter.
    pub step: f64,
    pub depths: Option<Depths>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { step: DEFAULT_STEP, depths: None }
    }
}

impl TraceOptions {
    pub fn with_step(step: f64) -> Self {
        TraceOptions { step, depths: None }
    }

    /// Same options with the step divided by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        TraceOptions { step: self.step / factor, ..*self }
    }

    fn depths_for(&self, m: &MapModel) -> Depths {
        self.depths.unwrap_or_else(|| Depths::for_automorphism(m.base()))
    }

    /// Step count used for a nominal leg length.
    pub fn steps_for(&self, length: f64) -> usize {
        ((length.abs() / self.step).ceil() as usize).max(1)
    }
}

/// Polyline through a leaf with unit tangents at the nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafSegment {
    pub bundle: Bundle,
    pub base: LiftPoint,
    pub points: Vec<LiftPoint>,
    /// Unit tangents in the direction of travel.
    pub tangents: Vec<Vec3>,
    /// Integration parameter at each node (unit speed, so approximately arclength).
    pub params: Vec<f64>,
    /// Sum of the segment lengths.
    pub arclength: f64,
    /// `+1` when traced along the oriented field, `-1` against it.
    pub sign: f64,
}

fn field(m: &MapModel, x: &LiftPoint, bundle: Bundle, depths: &Depths) -> Result<Vec3> {
    bundles::direction(m, x, bundle, depths).map_err(|e| match e {
        Error::DegenerateIntersection { .. } => Error::FrameDegeneracy(bundle),
        other => other,
    })
}

/// Traces the `bundle` leaf through `x` for signed parameter `length` with `RK4`.
pub fn trace_leaf(m: &MapModel, x: &LiftPoint, bundle: Bundle, length: f64, opts: &TraceOptions) -> Result<LeafSegment> {
    trace_leaf_steps(m, x, bundle, length, opts.steps_for(length), opts)
}

/// As [`trace_leaf`] with an explicit step count, so that the endpoint depends
/// smoothly on `length`.
///
/// Unstable leaves of nonlinear models are integrated on a short piece at
/// `F⁻ⁿ(x)` and pushed forward: `E^u` is only Hölder along the stable direction,
/// which caps direct integration at first order.
pub fn trace_leaf_steps(
    m: &MapModel,
    x: &LiftPoint,
    bundle: Bundle,
    length: f64,
    steps: usize,
    opts: &TraceOptions,
) -> Result<LeafSegment> {
    if !length.is_finite() || !x.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput("non-finite leaf trace input".into()));
    }
    let mut steps = steps.max(1);
    if length != 0.0 && (length / steps as f64).abs() < 1e-15 {
        if length.abs() >= 1e-12 {
            return Err(Error::StepUnderflow(length / steps as f64));
        }
        // sub-resolution legs: a single step is exact to rounding
        steps = 1;
    }
    let h = length / steps as f64;
    let depths = opts.depths_for(m);
    let sign = if length < 0.0 { -1.0 } else { 1.0 };
    // trace from the unit-cube representative so integer shifts commute with tracing
    let shift = x.map(f64::floor);
    let x0 = x - shift;
    let (mut points, tangents) = if length == 0.0 {
        (vec![x0], vec![field(m, &x0, bundle, &depths)? * sign])
    } else if bundle == Bundle::U && !m.is_linear() {
        unstable_polyline(m, &x0, length, steps, &depths)?
    } else {
        rk4_polyline(m, &x0, bundle, h, steps, &depths)?
    };
    let arclength = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    points[0] = *x;
    for p in points.iter_mut().skip(1) {
        *p += shift;
    }
    let params = (0..points.len()).map(|i| h.abs() * i as f64).collect();
    Ok(LeafSegment { bundle, base: *x, points, tangents, params, arclength, sign })
}

/// Nodes and travel-direction tangents of `steps` `RK4` steps of signed size `h`.
fn rk4_polyline(
    m: &MapModel,
    x: &LiftPoint,
    bundle: Bundle,
    h: f64,
    steps: usize,
    depths: &Depths,
) -> Result<(Vec<LiftPoint>, Vec<Vec3>)> {
    let sign = h.signum();
    let mut points = Vec::with_capacity(steps + 1);
    let mut tangents = Vec::with_capacity(steps + 1);
    let mut p = *x;
    let mut k1 = field(m, &p, bundle, depths)?;
    points.push(p);
    tangents.push(k1 * sign);
    for _ in 0..steps {
        let k2 = field(m, &(p + k1 * (0.5 * h)), bundle, depths)?;
        let k3 = field(m, &(p + k2 * (0.5 * h)), bundle, depths)?;
        let k4 = field(m, &(p + k3 * h), bundle, depths)?;
        let next = p + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if !next.iter().all(|c| c.is_finite()) {
            return Err(Error::StepUnderflow(h));
        }
        p = next;
        k1 = field(m, &p, bundle, depths)?;
        points.push(p);
        tangents.push(k1 * sign);
    }
    Ok((points, tangents))
}

/// Length scale of the pulled-back piece.
const PULLBACK_SCALE: f64 = 1e-6;
const PULLBACK_STEPS: usize = 8;
const DENSE_FACTOR: usize = 4;

/// Pushes a curve sample and its unit tangents `n` times, keeping coordinates
/// near the unit cube by a common integer shift. Returns the stretch of the
/// first tangent.
fn push_forward(m: &MapModel, pts: &mut [LiftPoint], tgs: &mut [Vec3], n: usize) -> f64 {
    let mut stretch = 1.0;
    for _ in 0..n {
        for (i, (p, t)) in pts.iter_mut().zip(tgs.iter_mut()).enumerate() {
            let (q, d) = m.eval_with_derivative(p);
            let v = d * *t;
            let norm = v.norm();
            if i == 0 {
                stretch *= norm;
            }
            *p = q;
            *t = v / norm;
        }
        let k = pts[0].map(f64::floor);
        pts.iter_mut().for_each(|p| *p -= k);
    }
    stretch
}

fn unstable_polyline(
    m: &MapModel,
    x: &LiftPoint,
    length: f64,
    steps: usize,
    depths: &Depths,
) -> Result<(Vec<LiftPoint>, Vec<Vec3>)> {
    let sign = length.signum();
    let target = length.abs();
    let lam_u = m.base().eigenvalues()[2];
    let n = if target > PULLBACK_SCALE { ((target / PULLBACK_SCALE).ln() / lam_u.ln()).ceil().min(40.0) as usize } else { 0 };
    let mut z = *x;
    for _ in 0..n {
        z = m.invert(&z, 1e-12)?;
        z -= z.map(f64::floor);
    }
    let ez = field(m, &z, Bundle::U, depths)? * sign;
    let stretch = push_forward(m, &mut [z], &mut [ez], n);
    let dense = DENSE_FACTOR * steps;
    let mut ell = 1.2 * target / stretch;
    for _ in 0..8 {
        let h = sign * ell / PULLBACK_STEPS as f64;
        let (nodes, tans) = rk4_polyline(m, &z, Bundle::U, h, PULLBACK_STEPS, depths)?;
        let piece = LeafSegment {
            bundle: Bundle::U,
            base: z,
            params: (0..=PULLBACK_STEPS).map(|i| h.abs() * i as f64).collect(),
            points: nodes,
            tangents: tans,
            arclength: ell,
            sign,
        };
        let mut pts = Vec::with_capacity(dense + 1);
        let mut tgs = Vec::with_capacity(dense + 1);
        for i in 0..=dense {
            let s = piece.length() * i as f64 / dense as f64;
            let v = piece.velocity_at(s);
            pts.push(piece.point_at(s));
            tgs.push(v / v.norm());
        }
        push_forward(m, &mut pts, &mut tgs, n);
        let k = (pts[0] - x).map(f64::round);
        pts.iter_mut().for_each(|p| *p -= k);
        let widths: Vec<f64> =
            pts.windows(2).zip(tgs.windows(2)).map(|(w, t)| hermite_width(&w[0], &t[0], &w[1], &t[1])).collect();
        let total: f64 = widths.iter().sum();
        if total >= target * (1.0 + 1e-9) {
            return Ok(resample_arclength(&pts, &tgs, &widths, target, steps));
        }
        ell *= 1.2 * target / total;
    }
    Err(Error::StepUnderflow(length / steps as f64))
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Arclength of the Hermite cubic of width `h` over `[0, tau]`.
fn hermite_arc(p0: &Vec3, m0: &Vec3, p1: &Vec3, m1: &Vec3, h: f64, tau: f64) -> f64 {
    GAUSS5.iter().map(|(x, w)| w * hermite_velocity(p0, m0, p1, m1, h, 0.5 * tau * (x + 1.0)).norm()).sum::<f64>() * 0.5 * tau * h
}

/// Width for which the Hermite cubic between unit tangents is close to unit speed.
fn hermite_width(p0: &Vec3, m0: &Vec3, p1: &Vec3, m1: &Vec3) -> f64 {
    let mut h = (p1 - p0).norm();
    for _ in 0..3 {
        h = hermite_arc(p0, m0, p1, m1, h, 1.0);
    }
    h
}

fn resample_arclength(pts: &[LiftPoint], tgs: &[Vec3], widths: &[f64], target: f64, steps: usize) -> (Vec<LiftPoint>, Vec<Vec3>) {
    let mut out_p = Vec::with_capacity(steps + 1);
    let mut out_t = Vec::with_capacity(steps + 1);
    out_p.push(pts[0]);
    out_t.push(tgs[0]);
    let (mut j, mut base) = (0usize, 0.0);
    for i in 1..=steps {
        let s = target * i as f64 / steps as f64;
        while j + 1 < widths.len() && base + widths[j] < s {
            base += widths[j];
            j += 1;
        }
        let (p0, m0, p1, m1, w) = (&pts[j], &tgs[j], &pts[j + 1], &tgs[j + 1], widths[j]);
        let want = s - base;
        let mut tau = (want / w).clamp(0.0, 1.0);
        for _ in 0..3 {
            let speed = hermite_velocity(p0, m0, p1, m1, w, tau).norm() * w;
            tau = (tau - (hermite_arc(p0, m0, p1, m1, w, tau) - want) / speed).clamp(0.0, 1.0);
        }
        let v = hermite_velocity(p0, m0, p1, m1, w, tau);
        out_p.push(hermite(p0, m0, p1, m1, w, tau));
        out_t.push(v / v.norm());
    }
    (out_p, out_t)
}

fn hermite(p0: &Vec3, m0: &Vec3, p1: &Vec3, m1: &Vec3, h: f64, tau: f64) -> Vec3 {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    p0 * (2.0 * t3 - 3.0 * t2 + 1.0) + m0 * (h * (t3 - 2.0 * t2 + tau)) + p1 * (-2.0 * t3 + 3.0 * t2) + m1 * (h * (t3 - t2))
}

fn hermite_velocity(p0: &Vec3, m0: &Vec3, p1: &Vec3, m1: &Vec3, h: f64, tau: f64) -> Vec3 {
    let t2 = tau * tau;
    (p0 * (6.0 * t2 - 6.0 * tau)
        + m0 * (h * (3.0 * t2 - 4.0 * tau + 1.0))
        + p1 * (-6.0 * t2 + 6.0 * tau)
        + m1 * (h * (3.0 * t2 - 2.0 * tau)))
        / h
}

impl LeafSegment {
    pub fn start(&self) -> LiftPoint {
        self.points[0]
    }

    pub fn end(&self) -> LiftPoint {
        *self.points.last().expect("segment has a base point")
    }

    /// Total parameter length.
    pub fn length(&self) -> f64 {
        *self.params.last().expect("segment has a base point")
    }

    /// Parameter length signed by the direction of travel.
    pub fn signed_length(&self) -> f64 {
        self.sign * self.length()
    }

    /// Translates every node by an integer deck vector.
    pub fn translated(&self, k: &Vec3) -> LeafSegment {
        LeafSegment { base: self.base + k, points: self.points.iter().map(|p| p + k).collect(), ..self.clone() }
    }

    fn segment_of(&self, s: f64) -> (usize, f64) {
        let n = self.points.len() - 1;
        if n == 0 {
            return (0, 0.0);
        }
        let h = self.length() / n as f64;
        let i = ((s / h).floor() as isize).clamp(0, n as isize - 1) as usize;
        (i, (s - self.params[i]) / h)
    }

    /// Cubic Hermite interpolant at parameter `s ∈ [0, length]`.
    pub fn point_at(&self, s: f64) -> LiftPoint {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let (i, tau) = self.segment_of(s);
        let h = self.params[i + 1] - self.params[i];
        hermite(&self.points[i], &self.tangents[i], &self.points[i + 1], &self.tangents[i + 1], h, tau)
    }

    pub fn velocity_at(&self, s: f64) -> Vec3 {
        if self.points.len() == 1 {
            return self.tangents[0];
        }
        let (i, tau) = self.segment_of(s);
        let h = self.params[i + 1] - self.params[i];
        hermite_velocity(&self.points[i], &self.tangents[i], &self.points[i + 1], &self.tangents[i + 1], h, tau)
    }

    /// `count ≥ 2` points at uniform parameter spacing.
    pub fn resample(&self, count: usize) -> Vec<LiftPoint> {
        let count = count.max(2);
        let len = self.length();
        (0..count).map(|i| self.point_at(len * i as f64 / (count - 1) as f64)).collect()
    }

    /// Closest point of the interpolated curve: `(parameter, distance)`.
    pub fn project(&self, y: &LiftPoint) -> (f64, f64) {
        let (best, _) = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - y).norm_squared()))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if self.points.len() == 1 {
            return (0.0, (self.points[0] - y).norm());
        }
        let lo = self.params[best.saturating_sub(1)];
        let hi = self.params[(best + 1).min(self.points.len() - 1)];
        let dist = |s: f64| (self.point_at(s) - y).norm();
        // golden section on the two neighbouring segments
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (dist(c), dist(d));
        for _ in 0..200 {
            if (b - a).abs() < 1e-15 * (1.0 + hi.abs()) {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = dist(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = dist(d);
            }
        }
        let s = 0.5 * (a + b);
        (s, dist(s))
    }

    /// One-sided Hausdorff distance from `other` (densified `refine`-fold) to `self`.
    pub fn distance_from(&self, other: &LeafSegment, refine: usize) -> f64 {
        let count = (other.points.len() - 1) * refine.max(1) + 1;
        other.resample(count).iter().map(|p| self.project(p).1).fold(0.0, f64::max)
    }

    /// Writes `t,x,y,z` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z"])?;
        for (t, p) in self.params.iter().zip(&self.points) {
            w.write_record([t, &p[0], &p[1], &p[2]].map(|v| format!("{v:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Alternating stable/unstable legs.
#[derive(Clone, Debug, PartialEq)]
pub struct SuPath {
    pub legs: Vec<LeafSegment>,
}

impl SuPath {
    pub fn start(&self) -> LiftPoint {
        self.legs[0].start()
    }

    pub fn end(&self) -> LiftPoint {
        self.legs.last().expect("path has legs").end()
    }

    pub fn leg_lengths(&self) -> Vec<(Bundle, f64)> {
        self.legs.iter().map(|l| (l.bundle, l.signed_length())).collect()
    }
}

/// Traces consecutive legs `(bundle, signed length)` from `x`.
pub fn su_path(m: &MapModel, x: &LiftPoint, legs: &[(Bundle, f64)], opts: &TraceOptions) -> Result<SuPath> {
    if legs.is_empty() {
        return Err(Error::InvalidInput("an su-path needs at least one leg".into()));
    }
    let mut out = Vec::with_capacity(legs.len());
    let mut p = *x;
    for &(b, len) in legs {
        if b == Bundle::C {
            return Err(Error::InvalidInput("su-path legs must be stable or unstable".into()));
        }
        let seg = trace_leaf(m, &p, b, len, opts)?;
        p = seg.end();
        out.push(seg);
    }
    Ok(SuPath { legs: out })
}

fn endpoint(m: &MapModel, x: &LiftPoint, b: Bundle, len: f64, steps: usize, opts: &TraceOptions) -> Result<LiftPoint> {
    Ok(trace_leaf_steps(m, x, b, len, steps, opts)?.end())
}

/// Which metric measured the center gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMetric {
    CenterMetric,
    EuclideanArclength,
}

/// A leafwise metric density `exp(φ)` on center leaves.
pub trait CenterDensity: Sync {
    fn log_density(&self, x: &LiftPoint) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuDefect {
    /// Signed center parameter from `w₁` to `w₂`.
    pub offset: f64,
    /// Center-leaf distance between `w₁` and `w₂`.
    pub defect: f64,
    pub metric: GapMetric,
    pub shooting_residual: f64,
    pub legs: [f64; 2],
}

/// Order of the closed-form legs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LegOrder {
    /// `w₁` from an s-leg then a u-leg.
    Su,
    /// `w₁` from a u-leg then an s-leg.
    Us,
}

/// Four-leg closure defect at `x` with the su convention.
pub fn su_defect(m: &MapModel, x: &LiftPoint, l_s: f64, l_u: f64, opts: &TraceOptions) -> Result<SuDefect> {
    su_defect_with(m, x, l_s, l_u, LegOrder::Su, None, opts)
}

/// Four-leg closure defect. `w₁` follows the legs in `order`; `w₂` is reached by
/// the opposite order with lengths shot so that it lands on the center leaf of `w₁`.
pub fn su_defect_with(
    m: &MapModel,
    x: &LiftPoint,
    l_s: f64,
    l_u: f64,
    order: LegOrder,
    density: Option<&dyn CenterDensity>,
    opts: &TraceOptions,
) -> Result<SuDefect> {
    let (first, l1, second, l2) = match order {
        LegOrder::Su => (Bundle::S, l_s, Bundle::U, l_u),
        LegOrder::Us => (Bundle::U, l_u, Bundle::S, l_s),
    };
    let (n1, n2) = (opts.steps_for(l1), opts.steps_for(l2));
    let mid = endpoint(m, x, first, l1, n1, opts)?;
    let w1 = endpoint(m, &mid, second, l2, n2, opts)?;
    // shoot the opposite order: legs (second, first) with lengths (a, b)
    let nc = 4;
    let depths = opts.depths_for(m);
    let eval = |v: &Vec3| -> Result<(Vec3, Vec3, Vec3)> {
        let y = endpoint(m, x, second, v[0], n2, opts)?;
        let z = endpoint(m, &y, first, v[1], n1, opts)?;
        let c = endpoint(m, &w1, Bundle::C, v[2], nc, opts)?;
        Ok((z - c, z, c))
    };
    let mut v = Vec3::new(l2, l1, 0.0);
    let (mut r, z, c) = eval(&v)?;
    let mut jac =
        Mat3::from_columns(&[field(m, &z, second, &depths)?, field(m, &z, first, &depths)?, -field(m, &c, Bundle::C, &depths)?]);
    let mut best = (v, r.amax());
    for _ in 0..SHOOT_ITER {
        if best.1 < SHOOT_TOL {
            break;
        }
        let step = match jac.lu().solve(&(-r)) {
            Some(s) if s.amax() <= 1.0 => s,
            _ => break,
        };
        v += step;
        let (rn, _, _) = eval(&v)?;
        // Broyden rank-one update
        let dr = rn - r;
        jac += (dr - jac * step) * step.transpose() / step.norm_squared();
        r = rn;
        if r.amax() < best.1 {
            best = (v, r.amax());
        }
        if step.amax() < 1e-15 * (1.0 + v.amax()) {
            break;
        }
    }
    // transversally Hölder fields put a floor under the attainable residual
    if best.1 > SHOOT_ACCEPT {
        return Err(Error::ShootingNoIntersection { residual: best.1 });
    }
    let (v, residual) = best;
    let t = v[2];
    let (defect, metric) = match density {
        Some(d) => {
            let arc = trace_leaf_steps(m, &w1, Bundle::C, t, nc.max(opts.steps_for(t)), opts)?;
            (center_length(&arc, d), GapMetric::CenterMetric)
        }
        None => (t.abs(), GapMetric::EuclideanArclength),
    };
    Ok(SuDefect { offset: t, defect, metric, shooting_residual: residual, legs: [v[0], v[1]] })
}

/// `∫ exp(φ∘γ) |γ'|` by composite Simpson on each Hermite segment.
pub fn center_length(arc: &LeafSegment, density: &dyn CenterDensity) -> f64 {
    let n = arc.points.len() - 1;
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (arc.params[i], arc.params[i + 1]);
        let h = b - a;
        let sub = 4;
        let mut acc = 0.0;
        for j in 0..=2 * sub {
            let s = a + h * j as f64 / (2 * sub) as f64;
            let w = if j == 0 || j == 2 * sub {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * density.log_density(&arc.point_at(s)).exp() * arc.velocity_at(s).norm();
        }
        total += acc * h / (6.0 * sub as f64);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDefect {
    pub x: [f64; 3],
    pub defect: Option<f64>,
    pub offset: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityScan {
    pub max_defect: f64,
    pub mean_defect: f64,
    pub samples: Vec<SampleDefect>,
    pub skipped: usize,
}

pub fn sample_points(samples: usize, seed: u64) -> Vec<LiftPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect()
}

/// su-defects at seeded uniform samples.
pub fn accessibility_scan(
    m: &MapModel,
    samples: usize,
    l_s: f64,
    l_u: f64,
    seed: u64,
    density: Option<&dyn CenterDensity>,
    opts: &TraceOptions,
) -> AccessibilityScan {
    let points = sample_points(samples, seed);
    let results: Vec<SampleDefect> = points
        .par_iter()
        .map(|x| match su_defect_with(m, x, l_s, l_u, LegOrder::Su, density, opts) {
            Ok(d) => SampleDefect { x: (*x).into(), defect: Some(d.defect), offset: Some(d.offset), error: None },
            Err(e) => SampleDefect { x: (*x).into(), defect: None, offset: None, error: Some(e.to_string()) },
        })
        .collect();
    let ok: Vec<f64> = results.iter().filter_map(|s| s.defect).collect();
    AccessibilityScan {
        max_defect: ok.iter().copied().fold(0.0, f64::max),
        mean_defect: if ok.is_empty() { 0.0 } else { ok.iter().sum::<f64>() / ok.len() as f64 },
        skipped: results.len() - ok.len(),
        samples: results,
    }
}

/// Slides `y` along its `along` leaf onto the center leaf through `target`:
/// returns the intersection point and the signed parameters `(b, t)` with
/// `γ_along(y, b) = γ_c(target, t)`.
pub fn holonomy(
    m: &MapModel,
    y: &LiftPoint,
    along: Bundle,
    target: &LiftPoint,
    guess: (f64, f64),
    opts: &TraceOptions,
) -> Result<(LiftPoint, f64, f64)> {
    let depths = opts.depths_for(m);
    let nb = opts.steps_for(guess.0).max(2);
    let nt = opts.steps_for(guess.1).max(2);
    let (mut b, mut t) = guess;
    let mut residual = f64::INFINITY;
    for _ in 0..SHOOT_ITER {
        let z = endpoint(m, y, along, b, nb, opts)?;
        let c = endpoint(m, target, Bundle::C, t, nt, opts)?;
        let r = z - c;
        let eb = field(m, &z, along, &depths)?;
        let ec = field(m, &c, Bundle::C, &depths)?;
        // Gauss-Newton on the 3×2 system [e_b, -e_c] (db, dt) = -r
        let g = [[eb.dot(&eb), -eb.dot(&ec)], [-eb.dot(&ec), ec.dot(&ec)]];
        let rhs = [-eb.dot(&r), ec.dot(&r)];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateIntersection { angle: det.abs().sqrt() });
        }
        let db = (rhs[0] * g[1][1] - g[0][1] * rhs[1]) / det;
        let dt = (g[0][0] * rhs[1] - g[1][0] * rhs[0]) / det;
        b += db;
        t += dt;
        let prev = residual;
        residual = r.norm();
        if db.abs().max(dt.abs()) < 1e-15 * (1.0 + b.abs() + t.abs()) || (residual >= prev && residual < 1e-12) {
            break;
        }
    }
    let z = endpoint(m, y, along, b, nb, opts)?;
    let c = endpoint(m, target, Bundle::C, t, nt, opts)?;
    let residual = (z - c).norm();
    if residual > HOLONOMY_ACCEPT {
        return Err(Error::ShootingNoIntersection { residual });
    }
    Ok((c, b, t))
}

/// Signed center parameter from `base` to the point of its center leaf nearest `y`.
pub fn center_parameter(m: &MapModel, base: &LiftPoint, y: &LiftPoint, opts: &TraceOptions) -> Result<f64> {
    let depths = opts.depths_for(m);
    let e0 = field(m, base, Bundle::C, &depths)?;
    let mut t = e0.dot(&(y - base));
    let steps = opts.steps_for(t).max(2);
    for _ in 0..SHOOT_ITER {
        let c = endpoint(m, base, Bundle::C, t, steps, opts)?;
        let ec = field(m, &c, Bundle::C, &depths)?;
        let dt = ec.dot(&(y - c));
        t += dt;
        if dt.abs() <= 1e-15 * (1.0 + t.abs()) {
            break;
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiIsometryFit {
    pub a_hat: f64,
    pub b_hat: f64,
    /// RMS residual of the least-squares line.
    pub residual: f64,
    /// `(chord, arclength)` samples.
    pub samples: Vec<(f64, f64)>,
}

/// Fits `arclength ≤ a·chord + b` over leaves of the given lengths from three fixed bases.
pub fn quasi_isometry_fit(m: &MapModel, bundle: Bundle, lengths: &[f64], opts: &TraceOptions) -> Result<QuasiIsometryFit> {
    let lo = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lengths.iter().copied().fold(0.0, f64::max);
    if lengths.len() < 2 || !(lo > 0.0) || hi / lo < 100.0 {
        return Err(Error::InsufficientSpread(format!("leaf lengths must span two decades, got [{lo}, {hi}]")));
    }
    let bases = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.7, 0.4, 0.15), Vec3::new(0.35, 0.85, 0.6)];
    let jobs: Vec<(Vec3, f64)> = bases.iter().flat_map(|b| lengths.iter().map(move |&l| (*b, l))).collect();
    let samples: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|(b, l)| {
            let seg = trace_leaf(m, b, bundle, *l, opts)?;
            Ok(((seg.end() - seg.start()).norm(), seg.arclength))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let a = sxy / sxx;
    let b0 = my - a * mx;
    let residual = (samples.iter().map(|s| (s.1 - a * s.0 - b0).powi(2)).sum::<f64>() / n).sqrt();
    let b = samples.iter().map(|s| s.1 - a * s.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(QuasiIsometryFit { a_hat: a, b_hat: b, residual, samples })
}

/// Largest distance of the unstable leaf through `x`, traced to parameter `radii[i]`
/// both ways, from the line `x + t v_u`. Monotone in the radius by construction.
pub fn homology_profile(m: &MapModel, x: &LiftPoint, radii: &[f64], opts: &TraceOptions) -> Result<Vec<f64>> {
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let vu = m.base().eigenvectors()[2];
    let sides: Vec<LeafSegment> =
        [r_max, -r_max].par_iter().map(|&len| trace_leaf(m, x, Bundle::U, len, opts)).collect::<Result<_>>()?;
    Ok(radii
        .iter()
        .map(|&r| {
            sides
                .iter()
                .flat_map(|seg| seg.params.iter().zip(&seg.points).take_while(|(t, _)| **t <= r + 1e-12))
                .map(|(_, p)| {
                    let d = p - x;
                    (d - vu * d.dot(&vu)).norm()
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

pub fn homology_deviation(m: &MapModel, x: &LiftPoint, r: f64, opts: &TraceOptions) -> Result<f64> {
    Ok(homology_profile(m, x, &[r], opts)?[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSequence {
    /// `r_n` for `n = 0..=last_reliable`.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `ln r_n` over the second half of the sequence.
    pub trend: f64,
    pub last_reliable: usize,
    pub collapsed: bool,
}

impl RatioSequence {
    pub fn bounds(&self) -> (f64, f64) {
        let lo = self.ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.ratios.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }
}

/// Least-squares slope of `ln r` against the index over `range`.
pub fn log_slope(r: &[f64], range: std::ops::RangeInclusive<usize>) -> f64 {
    let pts: Vec<(f64, f64)> = range.filter(|&i| i < r.len()).map(|i| (i as f64, r[i].ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

/// Pulls back a center arc given by its endpoints and re-measures it on its leaf.
struct CenterArc {
    a: LiftPoint,
    b: LiftPoint,
    len: f64,
}

impl CenterArc {
    fn new(m: &MapModel, a: LiftPoint, b: LiftPoint, opts: &TraceOptions) -> Result<Self> {
        let t = center_parameter(m, &a, &b, opts)?;
        let arc = trace_leaf(m, &a, Bundle::C, t, &scaled_opts(opts, t))?;
        Ok(CenterArc { a, b: arc.end(), len: arc.arclength })
    }

    /// Pulls both endpoints back; a common integer shift keeps the lift near the unit cube.
    fn pull_back(&self, m: &MapModel, opts: &TraceOptions) -> Result<Self> {
        let (a, b) = (m.inverse(&self.a), m.inverse(&self.b));
        let k = a.map(f64::floor);
        CenterArc::new(m, a - k, b - k, opts)
    }
}

/// Keeps at least 16 steps on short arcs.
fn scaled_opts(opts: &TraceOptions, len: f64) -> TraceOptions {
    TraceOptions { step: opts.step.min(len.abs() / 16.0).max(1e-14), ..*opts }
}

/// `r_n = |f^{-n}(J₁)| / |f^{-n}(J₀)|` where `J₀` is the center arc of length
/// `j0_len` at the periodic point `p` and `J₁` its holonomy image along `su`.
pub fn holonomy_ratio_test(
    m: &MapModel,
    p: &PeriodicOrbit,
    j0_len: f64,
    su: &SuPath,
    n_max: usize,
    opts: &TraceOptions,
) -> Result<RatioSequence> {
    let x = p.lift_point();
    if (su.start() - x).norm() > 1e-9 {
        return Err(Error::InvalidInput("su-path must start at the periodic point".into()));
    }
    let e1 = trace_leaf(m, &x, Bundle::C, j0_len, &scaled_opts(opts, j0_len))?.end();
    // transport the far endpoint leg by leg; the near one follows the legs themselves
    let mut far = e1;
    let mut guess_t = j0_len;
    for leg in &su.legs {
        let target = leg.end();
        let (z, _, t) = holonomy(m, &far, leg.bundle, &target, (leg.signed_length(), guess_t), opts)?;
        far = z;
        guess_t = t;
    }
    let mut j0 = CenterArc::new(m, x, e1, opts)?;
    let mut j1 = CenterArc::new(m, su.end(), far, opts)?;
    let mut ratios = vec![j1.len / j0.len];
    let mut collapsed = false;
    for _ in 1..=n_max {
        let n0 = j0.pull_back(m, opts);
        let n1 = j1.pull_back(m, opts);
        match (n0, n1) {
            (Ok(a), Ok(b)) if a.len > 1e-11 && b.len > 1e-11 && a.len.is_finite() && b.len.is_finite() => {
                j0 = a;
                j1 = b;
                ratios.push(j1.len / j0.len);
            }
            _ => {
                collapsed = true;
                break;
            }
        }
    }
    let last = ratios.len() - 1;
    if collapsed && last < 2 {
        return Err(Error::ArcCollapse { last_reliable: last });
    }
    let trend = log_slope(&ratios, last / 2..=last);
    Ok(RatioSequence { ratios, trend, last_reliable: last, collapsed })
}
