//! Invariant splitting `E^s ⊕ E^c ⊕ E^u` by transport along finite orbit pieces.
//!
//! Lines are pushed forward from the past (`e_u`) or pulled back from the future
//! (`e_s`). The two-dimensional bundles are carried as plane normals: the
//! center-unstable normal by `Df^{-T}` from the past, the center-stable normal by
//! `Dfᵀ` from the future. `e_c` is their intersection.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MapModel;
use crate::torus::{wrap, LiftPoint, Mat3, ToralAutomorphism, TorusPoint, Vec3};

pub const MIN_TRIPLE_PRODUCT: f64 = 1e-3;
pub const MIN_PLANE_ANGLE: f64 = 1e-6;
pub const MAX_DEPTH: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bundle {
    S,
    C,
    U,
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bundle::S => "s",
            Bundle::C => "c",
            Bundle::U => "u",
        })
    }
}

impl Bundle {
    pub fn index(self) -> usize {
        match self {
            Bundle::S => 0,
            Bundle::C => 1,
            Bundle::U => 2,
        }
    }
}

/// Orbit lengths used by each transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Depths {
    pub stable: usize,
    pub unstable: usize,
    /// Past steps for the center-unstable plane.
    pub cu: usize,
    /// Future steps for the center-stable plane.
    pub cs: usize,
}

impl Depths {
    pub fn uniform(n: usize) -> Self {
        Depths { stable: n, unstable: n, cu: n, cs: n }
    }

    /// Enough steps for the linear contraction ratios to reach `1e-16`, with 35% slack
    /// for the perturbation.
    pub fn for_automorphism(a: &ToralAutomorphism) -> Self {
        let [s, c, u] = a.eigenvalues().map(f64::abs);
        let steps = |ratio: f64| ((1.35 * (1e-16f64).ln() / ratio.ln()).ceil() as usize).clamp(1, MAX_DEPTH);
        let sc = steps(s / c);
        let cu = steps(c / u);
        Depths { stable: sc, unstable: cu, cu: sc, cs: cu }
    }

    fn past(&self) -> usize {
        self.unstable.max(self.cu)
    }

    fn future(&self) -> usize {
        self.stable.max(self.cs)
    }
}

/// A frame without the base point or diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub e_s: Vec3,
    pub e_c: Vec3,
    pub e_u: Vec3,
    /// Sine of the angle between the two planes that cut out `e_c`.
    pub plane_angle: f64,
}

impl Frame {
    pub fn get(&self, b: Bundle) -> Vec3 {
        match b {
            Bundle::S => self.e_s,
            Bundle::C => self.e_c,
            Bundle::U => self.e_u,
        }
    }

    pub fn triple_product(&self) -> f64 {
        self.e_s.dot(&self.e_c.cross(&self.e_u)).abs()
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_columns(&[self.e_s, self.e_c, self.e_u])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingFrame {
    pub at: TorusPoint,
    pub e_s: [f64; 3],
    pub e_c: [f64; 3],
    pub e_u: [f64; 3],
    /// Invariance defects `sin ∠(Df e_*(x), e_*(f x))` for `s, c, u`.
    pub residuals: [f64; 3],
}

impl SplittingFrame {
    pub fn vector(&self, b: Bundle) -> Vec3 {
        Vec3::from(match b {
            Bundle::S => self.e_s,
            Bundle::C => self.e_c,
            Bundle::U => self.e_u,
        })
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub sigma_hat: f64,
    pub mu_hat: f64,
    pub center_range: (f64, f64),
    pub samples: usize,
}

impl RateEstimate {
    pub fn is_partially_hyperbolic(&self) -> bool {
        let (cmin, cmax) = self.center_range;
        self.sigma_hat < cmin && cmax < self.mu_hat && self.sigma_hat < 1.0 && 1.0 < self.mu_hat
    }
}

pub fn sine_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm() / (a.norm() * b.norm())
}

fn orient(v: Vec3, reference: &Vec3) -> Vec3 {
    let v = v.normalize();
    if v.dot(reference) < 0.0 {
        -v
    } else {
        v
    }
}

/// Jacobians along an orbit piece: `jac[i] = Df(F^{i - past} x)`.
struct OrbitJacobians {
    jac: Vec<Mat3>,
    past: usize,
}

impl OrbitJacobians {
    fn new(m: &MapModel, x: &LiftPoint, past: usize, future: usize) -> Self {
        let mut back = Vec::with_capacity(past);
        let mut y = wrap(x);
        for _ in 0..past {
            y = wrap(&m.inverse(&y));
            back.push(m.derivative(&y));
        }
        back.reverse();
        let mut jac = back;
        let mut y = wrap(x);
        for _ in 0..future {
            let (fy, d) = m.eval_with_derivative(&y);
            jac.push(d);
            y = wrap(&fy);
        }
        OrbitJacobians { jac, past }
    }

    /// `Df(F^t x)`.
    fn at(&self, t: isize) -> &Mat3 {
        &self.jac[(t + self.past as isize) as usize]
    }
}

fn transport_unstable(o: &OrbitJacobians, time: isize, depth: usize, seed: Vec3) -> Vec3 {
    let mut v = seed;
    for k in (1..=depth as isize).rev() {
        v = (o.at(time - k) * v).normalize();
    }
    v
}

fn transport_stable(o: &OrbitJacobians, time: isize, depth: usize, seed: Vec3) -> Vec3 {
    let mut v = seed;
    for k in (0..depth as isize).rev() {
        let d = o.at(time + k);
        v = d.lu().solve(&v).expect("certified model has invertible derivative").normalize();
    }
    v
}

fn transport_cu_normal(o: &OrbitJacobians, time: isize, depth: usize, seed: Vec3) -> Vec3 {
    let mut n = seed;
    for k in (1..=depth as isize).rev() {
        let d = o.at(time - k);
        n = d.transpose().lu().solve(&n).expect("certified model has invertible derivative").normalize();
    }
    n
}

fn transport_cs_normal(o: &OrbitJacobians, time: isize, depth: usize, seed: Vec3) -> Vec3 {
    let mut n = seed;
    for k in (0..depth as isize).rev() {
        n = (o.at(time + k).transpose() * n).normalize();
    }
    n
}

fn frame_from(o: &OrbitJacobians, time: isize, depths: &Depths, a: &ToralAutomorphism) -> Result<Frame> {
    let v = a.eigenvectors();
    let w = a.dual_basis();
    let e_u = orient(transport_unstable(o, time, depths.unstable, v[2]), &v[2]);
    let e_s = orient(transport_stable(o, time, depths.stable, v[0]), &v[0]);
    let n_cu = transport_cu_normal(o, time, depths.cu, w[0].normalize());
    let n_cs = transport_cs_normal(o, time, depths.cs, w[2].normalize());
    let cross = n_cu.cross(&n_cs);
    let plane_angle = cross.norm();
    if plane_angle < MIN_PLANE_ANGLE {
        return Err(Error::DegenerateIntersection { angle: plane_angle });
    }
    let e_c = orient(cross, &v[1]);
    Ok(Frame { e_s, e_c, e_u, plane_angle })
}

/// The splitting at `x` with every transport run for `n_iter` steps, plus invariance
/// residuals against the frame at `f(x)`.
pub fn splitting_at(m: &MapModel, x: &TorusPoint, n_iter: usize) -> Result<SplittingFrame> {
    if n_iter == 0 {
        return Err(Error::InvalidInput("n_iter must be at least 1".into()));
    }
    splitting_with(m, x, &Depths::uniform(n_iter))
}

/// As [`splitting_at`] with per-bundle depths.
pub fn splitting_with(m: &MapModel, x: &TorusPoint, depths: &Depths) -> Result<SplittingFrame> {
    let o = OrbitJacobians::new(m, &x.lift(), depths.past(), depths.future() + 1);
    let here = frame_from(&o, 0, depths, m.base())?;
    if here.triple_product() < MIN_TRIPLE_PRODUCT {
        return Err(Error::DegenerateIntersection { angle: here.triple_product() });
    }
    let there = frame_from(&o, 1, depths, m.base())?;
    let d = o.at(0);
    let residuals = [Bundle::S, Bundle::C, Bundle::U].map(|b| sine_angle(&(d * here.get(b)), &there.get(b)));
    Ok(SplittingFrame { at: *x, e_s: here.e_s.into(), e_c: here.e_c.into(), e_u: here.e_u.into(), residuals })
}

/// Increases the depth until every residual is below `1e-10` or the depth reaches 200.
pub fn splitting_converged(m: &MapModel, x: &TorusPoint) -> Result<(SplittingFrame, usize)> {
    let mut n = 10;
    loop {
        let f = splitting_at(m, x, n)?;
        if f.max_residual() < 1e-10 || n >= MAX_DEPTH {
            return Ok((f, n));
        }
        n = (2 * n).min(MAX_DEPTH);
    }
}

/// The full frame at `x` with the automorphism's default depths.
pub fn frame(m: &MapModel, x: &LiftPoint) -> Result<Frame> {
    let depths = Depths::for_automorphism(m.base());
    frame_with(m, x, &depths)
}

pub fn frame_with(m: &MapModel, x: &LiftPoint, depths: &Depths) -> Result<Frame> {
    if m.is_linear() {
        let v = m.base().eigenvectors();
        return Ok(Frame { e_s: v[0], e_c: v[1], e_u: v[2], plane_angle: 1.0 });
    }
    let o = OrbitJacobians::new(m, x, depths.past(), depths.future());
    frame_from(&o, 0, depths, m.base())
}

/// A single unit direction field, computing only the transports it needs.
pub fn direction(m: &MapModel, x: &LiftPoint, bundle: Bundle, depths: &Depths) -> Result<Vec3> {
    let a = m.base();
    let v = a.eigenvectors();
    if m.is_linear() {
        return Ok(v[bundle.index()]);
    }
    match bundle {
        Bundle::U => {
            let o = OrbitJacobians::new(m, x, depths.unstable, 0);
            Ok(orient(transport_unstable(&o, 0, depths.unstable, v[2]), &v[2]))
        }
        Bundle::S => {
            let o = OrbitJacobians::new(m, x, 0, depths.stable);
            Ok(orient(transport_stable(&o, 0, depths.stable, v[0]), &v[0]))
        }
        Bundle::C => {
            let o = OrbitJacobians::new(m, x, depths.cu, depths.cs);
            let w = a.dual_basis();
            let n_cu = transport_cu_normal(&o, 0, depths.cu, w[0].normalize());
            let n_cs = transport_cs_normal(&o, 0, depths.cs, w[2].normalize());
            let cross = n_cu.cross(&n_cs);
            if cross.norm() < MIN_PLANE_ANGLE {
                return Err(Error::DegenerateIntersection { angle: cross.norm() });
            }
            Ok(orient(cross, &v[1]))
        }
    }
}

/// `‖Df(x) e_c(x)‖`, the pointwise center stretch.
pub fn center_stretch(m: &MapModel, x: &LiftPoint) -> Result<f64> {
    let e = direction(m, x, Bundle::C, &Depths::for_automorphism(m.base()))?;
    Ok((m.derivative(x) * e).norm())
}

/// Extremal stretches of `Df` along the three frame directions over seeded samples.
pub fn estimate_rates(m: &MapModel, samples: usize, seed: u64) -> Result<RateEstimate> {
    if samples == 0 {
        return Err(Error::InvalidInput("at least one sample required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..samples).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let stretches: Vec<[f64; 3]> = points
        .par_iter()
        .map(|x| {
            let f = frame(m, x)?;
            let d = m.derivative(x);
            Ok([(d * f.e_s).norm(), (d * f.e_c).norm(), (d * f.e_u).norm()])
        })
        .collect::<Result<_>>()?;
    let mut est = RateEstimate { sigma_hat: 0.0, mu_hat: f64::INFINITY, center_range: (f64::INFINITY, 0.0), samples };
    for [s, c, u] in stretches {
        est.sigma_hat = est.sigma_hat.max(s);
        est.mu_hat = est.mu_hat.min(u);
        est.center_range = (est.center_range.0.min(c), est.center_range.1.max(c));
    }
    Ok(est)
}
