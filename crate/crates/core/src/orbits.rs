//! Periodic orbits continued from the linear model and their center exponents.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundles::{self, Bundle, Depths, SplittingFrame};
use crate::error::{Error, Result};
use crate::foliation::{self, TraceOptions};
use crate::model::MapModel;
use crate::torus::{canonical_coords, linear_periodic_points, LiftPoint, Mat3, PeriodicSeed, TorusPoint, Vec3};

/// Newton stops once the closure defect is this small.
pub const CLOSURE_TOL: f64 = 1e-12;
/// Smallest homotopy step in the normalized parameter `s = ε'/ε`.
pub const MIN_HOMOTOPY_STEP: f64 = 1e-3;
/// Largest point displacement accepted in one homotopy step.
const MAX_DRIFT: f64 = 0.25;
const NEWTON_ITER: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub points: Vec<TorusPoint>,
    /// Lift of `points[0]` with `F^n(lift) = lift + deck`.
    pub lift: [f64; 3],
    pub deck: [i64; 3],
    /// Product-of-stretches center exponent.
    pub lambda_c: f64,
    /// Middle eigenvalue modulus of the monodromy, `n`-th root.
    pub lambda_c_monodromy: f64,
    pub frames: Vec<SplittingFrame>,
    pub residual: f64,
    /// Linear ancestor `numerators / denominator`.
    pub label: [i64; 3],
    pub denominator: i64,
    pub homotopy_steps: usize,
}

impl PeriodicOrbit {
    pub fn lift_point(&self) -> LiftPoint {
        Vec3::from(self.lift)
    }
}

/// `F^n(x̃) - x̃ - deck` evaluated with wrapped intermediate points and exact
/// integer bookkeeping of the lattice translations.
fn closure_map(m: &MapModel, x: &LiftPoint, n: usize, deck: &[i64; 3], with_jac: bool) -> (Vec3, Mat3) {
    let a = m.base().matrix();
    let (w0, k0) = canonical_coords(x);
    let mut w = w0.lift();
    let mut total = k0;
    let mut jac = Mat3::identity();
    for _ in 0..n {
        let (fw, d) = if with_jac { m.eval_with_derivative(&w) } else { (m.eval_lift(&w), Mat3::identity()) };
        if with_jac {
            jac = d * jac;
        }
        let (wn, k) = canonical_coords(&fw);
        let ak = a.apply(&total);
        total = [ak[0] + k[0], ak[1] + k[1], ak[2] + k[2]];
        w = wn.lift();
    }
    let shift =
        Vec3::new((total[0] - k0[0] - deck[0]) as f64, (total[1] - k0[1] - deck[1]) as f64, (total[2] - k0[2] - deck[2]) as f64);
    (w - w0.lift() + shift, jac - Mat3::identity())
}

/// Closure defect `‖F^n(x̃) - x̃ - deck‖_∞`.
pub fn closure_residual(m: &MapModel, x: &LiftPoint, n: usize, deck: &[i64; 3]) -> f64 {
    closure_map(m, x, n, deck, false).0.amax()
}

/// Newton for `F^n(x̃) = x̃ + deck` from `x`.
pub fn newton_periodic(m: &MapModel, x: &LiftPoint, n: usize, deck: &[i64; 3]) -> Result<(LiftPoint, f64)> {
    let mut x = *x;
    let mut best = f64::INFINITY;
    for _ in 0..NEWTON_ITER {
        let (g, j) = closure_map(m, &x, n, deck, true);
        let r = g.amax();
        if !r.is_finite() {
            break;
        }
        if r < CLOSURE_TOL {
            return Ok((x, r));
        }
        // roundoff floor: the defect stopped improving at a tiny level
        if r < 1e-11 && r >= 0.5 * best {
            return Ok((x, r));
        }
        best = best.min(r);
        let step = match j.lu().solve(&g) {
            Some(s) => s,
            None => break,
        };
        if step.amax() > 1.0 {
            break;
        }
        x -= step;
    }
    Err(Error::NewtonDivergence { period: n, step: 1.0 })
}

/// Monodromy `Df^n(x̃)` along the orbit.
pub fn monodromy(m: &MapModel, x: &LiftPoint, n: usize) -> Mat3 {
    let mut y = *x;
    let mut jac = Mat3::identity();
    for _ in 0..n {
        let (fy, d) = m.eval_with_derivative(&y);
        jac = d * jac;
        y = fy;
    }
    jac
}

fn dominant_modulus(m: &Mat3) -> f64 {
    let mut v = Vec3::new(0.57, 0.61, 0.55).normalize();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = m * v;
        let norm = w.norm();
        let next = w / norm;
        let done = (norm - est).abs() <= 1e-15 * norm && (next - v).norm().min((next + v).norm()) < 1e-14;
        est = norm;
        v = next;
        if done {
            break;
        }
    }
    // Rayleigh-style refinement on the converged direction
    (m * v).norm()
}

/// Modulus of the middle eigenvalue of a 3×3 matrix with three real eigenvalues of
/// distinct moduli: `|det| / (|λ_max| |λ_min|)`, the extremes by power and inverse iteration.
pub fn middle_eigenvalue_modulus(m: &Mat3) -> f64 {
    let inv = m.try_inverse().expect("monodromy of a diffeomorphism is invertible");
    let top = dominant_modulus(m);
    let bottom = 1.0 / dominant_modulus(&inv);
    m.determinant().abs() / (top * bottom)
}

fn build_orbit(
    m: &MapModel,
    x0: LiftPoint,
    n: usize,
    deck: [i64; 3],
    seed: &PeriodicSeed,
    steps: usize,
) -> Result<PeriodicOrbit> {
    let depths = Depths::for_automorphism(m.base());
    let mut pts = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    let mut y = x0;
    let mut log_sum = 0.0;
    for _ in 0..n {
        let p = canonical_coords(&y).0;
        let f = bundles::splitting_with(m, &p, &depths)?;
        let d = m.derivative(&p.lift());
        log_sum += (d * f.vector(Bundle::C)).norm().ln();
        pts.push(p);
        frames.push(f);
        y = m.eval_lift(&p.lift());
    }
    let lambda_c = (log_sum / n as f64).exp();
    let mono = monodromy(m, &x0, n);
    let lambda_c_monodromy = middle_eigenvalue_modulus(&mono).powf(1.0 / n as f64);
    Ok(PeriodicOrbit {
        period: n,
        points: pts,
        lift: x0.into(),
        deck,
        lambda_c,
        lambda_c_monodromy,
        frames,
        residual: closure_residual(m, &x0, n, &deck),
        label: seed.numerators,
        denominator: seed.denominator,
        homotopy_steps: steps,
    })
}

/// Continues a linear periodic seed to `m` through the family `m.scaled(s ε)`, `s ∈ [0, 1]`.
pub fn continue_orbit(m: &MapModel, seed: &PeriodicSeed) -> Result<PeriodicOrbit> {
    let n = seed.period;
    let deck = seed.deck;
    let mut x = seed.point.lift();
    if m.is_linear() {
        return build_orbit(m, x, n, deck, seed, 0);
    }
    let eps = m.epsilon();
    let mut s = 0.0f64;
    let mut ds = 1.0f64;
    let mut steps = 0;
    while s < 1.0 {
        let target = (s + ds).min(1.0);
        let stage = m.scaled(target * eps);
        match newton_periodic(&stage, &x, n, &deck) {
            Ok((xn, _)) if (xn - x).amax() <= MAX_DRIFT => {
                x = xn;
                s = target;
                steps += 1;
                ds = (2.0 * ds).min(1.0);
            }
            _ => {
                ds *= 0.5;
                if ds < MIN_HOMOTOPY_STEP {
                    return Err(Error::NewtonDivergence { period: n, step: ds });
                }
            }
        }
    }
    build_orbit(m, x, n, deck, seed, steps)
}

/// Solves directly from an arbitrary start; used by the oracle sweeps.
pub fn orbit_from_point(m: &MapModel, x: &LiftPoint, n: usize, deck: [i64; 3]) -> Result<LiftPoint> {
    newton_periodic(m, x, n, &deck).map(|(x, _)| x)
}

/// Product-of-stretches center exponent along a stored orbit.
pub fn center_exponent(o: &PeriodicOrbit, m: &MapModel) -> f64 {
    let log_sum: f64 =
        o.points.iter().zip(&o.frames).map(|(p, f)| (m.derivative(&p.lift()) * f.vector(Bundle::C)).norm().ln()).sum();
    (log_sum / o.period as f64).exp()
}

/// Smallest `d` with `A^d x ≡ x`, computed on exact numerators.
pub fn minimal_period(seed: &PeriodicSeed, a: &crate::torus::ToralAutomorphism) -> usize {
    let mut cur = seed.clone();
    for d in 1..=seed.period {
        let img = cur.image(a);
        if img == seed.numerators {
            return d;
        }
        cur.numerators = img;
    }
    seed.period
}

/// One representative seed per linear orbit of minimal period `n` (the smallest numerators).
pub fn orbit_representatives(a: &crate::torus::ToralAutomorphism, n: usize, limit: usize) -> Result<Vec<PeriodicSeed>> {
    let seeds = linear_periodic_points(a, n as u32, limit)?;
    let mut seen: HashSet<[i64; 3]> = HashSet::new();
    let mut reps = Vec::new();
    for s in seeds {
        if seen.contains(&s.numerators) || minimal_period(&s, a) != n {
            continue;
        }
        let mut cur = s.clone();
        for _ in 0..n {
            seen.insert(cur.numerators);
            cur.numerators = cur.image(a);
        }
        reps.push(s);
    }
    Ok(reps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentEntry {
    pub period: usize,
    pub label: [i64; 3],
    pub denominator: i64,
    pub lambda_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeed {
    pub period: usize,
    pub label: [i64; 3],
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub values: Vec<ExponentEntry>,
    pub dispersion: f64,
    pub min: f64,
    pub max: f64,
    pub skipped: Vec<SkippedSeed>,
    pub partial: bool,
}

/// Center exponents of every orbit of minimal period `≤ n_max`.
pub fn exponent_spectrum(m: &MapModel, n_max: usize, limit: usize) -> Result<SpectrumReport> {
    let (orbits, skipped) = all_orbits(m, n_max, limit)?;
    let values: Vec<ExponentEntry> = orbits
        .iter()
        .map(|o| ExponentEntry { period: o.period, label: o.label, denominator: o.denominator, lambda_c: o.lambda_c })
        .collect();
    let min = values.iter().map(|v| v.lambda_c).fold(f64::INFINITY, f64::min);
    let max = values.iter().map(|v| v.lambda_c).fold(f64::NEG_INFINITY, f64::max);
    let dispersion = if values.is_empty() { 0.0 } else { max - min };
    Ok(SpectrumReport { values, dispersion, min, max, partial: !skipped.is_empty(), skipped })
}

/// Continues every orbit of minimal period `≤ n_max`, in seed order.
pub fn all_orbits(m: &MapModel, n_max: usize, limit: usize) -> Result<(Vec<PeriodicOrbit>, Vec<SkippedSeed>)> {
    let mut seeds = Vec::new();
    for n in 1..=n_max {
        seeds.extend(orbit_representatives(m.base(), n, limit)?);
    }
    let results: Vec<(PeriodicSeed, Result<PeriodicOrbit>)> = seeds
        .into_par_iter()
        .map(|s| {
            let r = continue_orbit(m, &s);
            (s, r)
        })
        .collect();
    let mut orbits = Vec::new();
    let mut skipped = Vec::new();
    for (s, r) in results {
        match r {
            Ok(o) => orbits.push(o),
            Err(e) => skipped.push(SkippedSeed { period: s.period, label: s.numerators, reason: e.to_string() }),
        }
    }
    Ok((orbits, skipped))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRates {
    pub lower: f64,
    pub upper: f64,
}

/// Growth exponents of a center arc of length `arc_len` under `F^k`, `k ∈ [n/2, n]`:
/// the extremes of `(1/k) log(|F^k J| / |J|)`.
pub fn center_arc_growth(m: &MapModel, arc_len: f64, n: usize) -> Result<GrowthRates> {
    center_arc_growth_at(m, &Vec3::new(0.1234, 0.5678, 0.3141), arc_len, n, 1)
}

/// As [`center_arc_growth`] from a chosen base point, with `refine`-fold node density.
///
/// `|F^k J| = ∫_J ‖DF^k e_c‖ ds` and the integrand is the product of center stretches
/// along each node's orbit, so off-leaf roundoff never enters the measured length.
pub fn center_arc_growth_at(m: &MapModel, base: &LiftPoint, arc_len: f64, n: usize, refine: usize) -> Result<GrowthRates> {
    if !(arc_len.is_finite() && arc_len > 1e-9) {
        return Err(Error::InvalidInput(format!("center arc length {arc_len} is below resolution")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let opts = TraceOptions::default().refined(refine as f64);
    let leaf = foliation::trace_leaf(m, base, Bundle::C, arc_len, &opts)?;
    let count = 64 * refine.max(1) + 1;
    let nodes = leaf.resample(count);
    let depths = Depths::for_automorphism(m.base());
    // cumulative log-stretch per node and iterate
    let logs: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|x| {
            let mut y = *x;
            let mut acc = 0.0;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let e = bundles::direction(m, &y, Bundle::C, &depths)?;
                let (fy, d) = m.eval_with_derivative(&y);
                acc += (d * e).norm().ln();
                out.push(acc);
                y = crate::torus::wrap(&fy);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for k in 1..=n {
        if 2 * k < n {
            continue;
        }
        // trapezoid in arclength, relative to |J|
        let vals: Vec<f64> = logs.iter().map(|l| l[k - 1].exp()).collect();
        let mean = (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[count - 1])) / (count - 1) as f64;
        let rate = mean.ln() / k as f64;
        lower = lower.min(rate);
        upper = upper.max(rate);
    }
    Ok(GrowthRates { lower, upper })
}
