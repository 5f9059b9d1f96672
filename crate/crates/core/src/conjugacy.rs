//! The Franks map `H = Id + u` with `H∘F = A∘H`, evaluated pointwise from
//! truncated orbit sums in the eigenbasis of `A`, and leafwise probes of it.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundles::Bundle;
use crate::error::{Error, Result};
use crate::foliation::{center_length, sample_points, trace_leaf, trace_leaf_steps, CenterDensity, TraceOptions};
use crate::model::{MapModel, ModelKind};
use crate::torus::{wrap, LiftPoint, Vec3};

const INVERT_TOL: f64 = 1e-12;
/// Samples behind the stored `residual_sup`.
const RESIDUAL_SAMPLES: usize = 1000;
const RESIDUAL_SEED: u64 = 0x5eed;

#[derive(Clone, Debug)]
pub struct ConjugacyField {
    model: MapModel,
    pub depth: usize,
    pub grid: usize,
    /// `u` at the nodes `(i, j, k) / grid`, `i` fastest.
    pub samples: Vec<[f64; 3]>,
    /// Geometric-series bound on `‖u‖_∞`.
    pub l_bound: f64,
    /// Bound on the truncation tail of `u`.
    pub tail_bound: f64,
    pub residual_sup: f64,
}

/// Per-eigendirection `sup |p_λ|` of the displacement `F - A`.
fn displacement_bounds(m: &MapModel) -> [f64; 3] {
    let a = m.base();
    let lam = a.eigenvalues();
    let dual = a.dual_basis();
    let eps = m.epsilon().abs();
    let mut out = [0.0; 3];
    for i in 0..3 {
        let along =
            |f: &crate::model::TrigField| -> f64 { f.modes.iter().map(|md| dual[i].dot(&Vec3::from(md.amplitude)).abs()).sum() };
        out[i] = match m.kind() {
            ModelKind::Linear => 0.0,
            ModelKind::Perturbed(f) => eps * along(f),
            // p = ε q(A y) - ε A q(y) with y = φ⁻¹(x)
            ModelKind::Conjugated(q) => eps * (1.0 + lam[i].abs()) * along(q),
        };
    }
    out
}

impl ConjugacyField {
    /// `H = Id`: the zero-depth series.
    pub fn identity(m: &MapModel) -> Self {
        ConjugacyField {
            model: m.clone(),
            depth: 0,
            grid: 0,
            samples: Vec::new(),
            l_bound: 0.0,
            tail_bound: 0.0,
            residual_sup: f64::NAN,
        }
    }

    pub fn model(&self) -> &MapModel {
        &self.model
    }

    /// `u(x)`; depends on `x` only through its class on the torus.
    pub fn displacement(&self, x: &LiftPoint) -> Result<Vec3> {
        let m = &self.model;
        if self.depth == 0 || m.is_linear() {
            return Ok(Vec3::zeros());
        }
        let a = m.base();
        let lam = a.eigenvalues();
        let dual = a.dual_basis();
        let vecs = a.eigenvectors();
        let expanding: Vec<usize> = (0..3).filter(|&i| lam[i].abs() > 1.0).collect();
        let contracting: Vec<usize> = (0..3).filter(|&i| lam[i].abs() < 1.0).collect();
        let mut coef = [0.0; 3];
        // Σ_{k≥0} λ^{-(k+1)} p_λ(F^k x)
        let mut y = wrap(x);
        let mut w = [1.0 / lam[0], 1.0 / lam[1], 1.0 / lam[2]];
        for _ in 0..self.depth {
            let p = m.displacement(&y);
            for &i in &expanding {
                coef[i] += w[i] * dual[i].dot(&p);
                w[i] /= lam[i];
            }
            y = wrap(&m.eval_lift(&y));
        }
        // -Σ_{k≥1} λ^{k-1} p_λ(F^{-k} x)
        if !contracting.is_empty() {
            let mut y = wrap(x);
            let mut w = [1.0; 3];
            for _ in 0..self.depth {
                y = wrap(&m.invert(&y, INVERT_TOL)?);
                let p = m.displacement(&y);
                for &i in &contracting {
                    coef[i] -= w[i] * dual[i].dot(&p);
                    w[i] *= lam[i];
                }
            }
        }
        Ok(vecs[0] * coef[0] + vecs[1] * coef[1] + vecs[2] * coef[2])
    }

    /// `H(x) = x + u(x)` on the cover.
    pub fn eval(&self, x: &LiftPoint) -> Result<LiftPoint> {
        Ok(x + self.displacement(x)?)
    }

    /// Largest stored grid displacement.
    pub fn grid_sup(&self) -> f64 {
        self.samples.iter().map(|u| Vec3::from(*u).norm()).fold(0.0, f64::max)
    }

    /// Plain-text dump: a header with grid size, depth and matrix, then one node per line.
    pub fn write_grid<W: Write>(&self, mut out: W) -> Result<()> {
        let a = self.model.base().matrix().0;
        writeln!(out, "# phlab conjugacy grid")?;
        writeln!(out, "grid {}", self.grid)?;
        writeln!(out, "depth {}", self.depth)?;
        let flat: Vec<String> = a.iter().flatten().map(|v| v.to_string()).collect();
        writeln!(out, "matrix {}", flat.join(" "))?;
        for u in &self.samples {
            writeln!(out, "{:.16e} {:.16e} {:.16e}", u[0], u[1], u[2])?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDump {
    pub grid: usize,
    pub depth: usize,
    pub matrix: [[i64; 3]; 3],
    pub samples: Vec<[f64; 3]>,
}

pub fn read_grid<R: BufRead>(input: R) -> Result<GridDump> {
    let bad = |what: &str| Error::InvalidInput(format!("conjugacy grid: {what}"));
    let mut lines = input.lines();
    let mut next = || -> Result<String> { lines.next().ok_or_else(|| bad("truncated header"))?.map_err(Error::from) };
    if !next()?.starts_with('#') {
        return Err(bad("missing banner"));
    }
    let field = |line: String, key: &str| -> Result<String> {
        line.strip_prefix(key).map(|s| s.trim().to_string()).ok_or_else(|| bad(key))
    };
    let grid: usize = field(next()?, "grid")?.parse().map_err(|_| bad("grid"))?;
    let depth: usize = field(next()?, "depth")?.parse().map_err(|_| bad("depth"))?;
    let entries: Vec<i64> =
        field(next()?, "matrix")?.split_whitespace().map(|t| t.parse().map_err(|_| bad("matrix"))).collect::<Result<_>>()?;
    if entries.len() != 9 {
        return Err(bad("matrix needs nine entries"));
    }
    let mut matrix = [[0i64; 3]; 3];
    for (i, v) in entries.iter().enumerate() {
        matrix[i / 3][i % 3] = *v;
    }
    let mut samples = Vec::with_capacity(grid.pow(3));
    for line in lines {
        let line = line?;
        let v: Vec<f64> = line.split_whitespace().map(|t| t.parse().map_err(|_| bad("sample"))).collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(bad("sample needs three components"));
        }
        samples.push([v[0], v[1], v[2]]);
    }
    if samples.len() != grid.pow(3) {
        return Err(bad("sample count does not match grid"));
    }
    Ok(GridDump { grid, depth, matrix, samples })
}

/// Truncated Franks series of depth `depth`, tabulated on a `grid³` lattice (`0` skips the table).
pub fn solve_franks(m: &MapModel, depth: usize, grid: usize) -> Result<ConjugacyField> {
    if depth == 0 {
        return Err(Error::InvalidInput("franks depth must be at least 1".into()));
    }
    if !m.is_certified() {
        return Err(Error::NotCertified { margin: m.invertibility_margin() });
    }
    let lam = m.base().eigenvalues();
    let sup_p = displacement_bounds(m);
    let mut l_bound = 0.0;
    let mut tail_bound = 0.0;
    for i in 0..3 {
        let r = lam[i].abs();
        let gap = (r - 1.0).abs();
        l_bound += sup_p[i] / gap;
        let rho = if r > 1.0 { 1.0 / r } else { r };
        tail_bound += sup_p[i] * rho.powi(depth as i32) / gap;
    }
    let mut hf = ConjugacyField { model: m.clone(), depth, grid, samples: Vec::new(), l_bound, tail_bound, residual_sup: 0.0 };
    if grid > 0 {
        let g = grid as f64;
        hf.samples = (0..grid.pow(3))
            .into_par_iter()
            .map(|n| {
                let x = Vec3::new((n % grid) as f64 / g, ((n / grid) % grid) as f64 / g, (n / (grid * grid)) as f64 / g);
                hf.displacement(&x).map(|u| [u[0], u[1], u[2]])
            })
            .collect::<Result<_>>()?;
    }
    hf.residual_sup = conjugacy_residual(&hf, m, RESIDUAL_SAMPLES, RESIDUAL_SEED)?;
    Ok(hf)
}

/// `sup ‖H(F(x)) - A H(x)‖` over seeded uniform samples, `F` taken from `m`.
pub fn conjugacy_residual(hf: &ConjugacyField, m: &MapModel, samples: usize, seed: u64) -> Result<f64> {
    let a = *m.base().as_f64();
    let worst = sample_points(samples, seed)
        .par_iter()
        .map(|x| Ok((hf.eval(&m.eval_lift(x))? - a * hf.eval(x)?).norm()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

fn linear_direction(m: &MapModel, leaf: Bundle) -> Result<(Vec3, Vec3)> {
    if leaf == Bundle::C {
        return Err(Error::InvalidInput("leafwise sections of H are defined on s and u leaves".into()));
    }
    let a = m.base();
    Ok((a.eigenvectors()[leaf.index()], a.dual_basis()[leaf.index()]))
}

/// A point `x` on the `F`-leaf through `anchor` with `H(x) = y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafPreimage {
    pub point: [f64; 3],
    /// Signed leaf parameter of `point` from `anchor`.
    pub param: f64,
    /// `‖H(point) - y‖`.
    pub residual: f64,
}

/// Solves `H(x) = y` along the `leaf` through `anchor`, where `y` lies on the linear
/// leaf through `H(anchor)`, by a bracketed monotone root search.
pub fn invert_h_on_leaf(
    hf: &ConjugacyField,
    anchor: &LiftPoint,
    y: &LiftPoint,
    leaf: Bundle,
    opts: &TraceOptions,
) -> Result<LeafPreimage> {
    let m = &hf.model;
    let (v, w) = linear_direction(m, leaf)?;
    let h0 = hf.eval(anchor)?;
    let d = y - h0;
    let target = w.dot(&d);
    if (d - v * target).norm() > 1e-6 * (1.0 + d.norm()) {
        return Err(Error::InvalidInput("target is not on the linear leaf through H(anchor)".into()));
    }
    if target == 0.0 {
        return Ok(LeafPreimage { point: (*anchor).into(), param: 0.0, residual: (h0 - y).norm() });
    }
    let steps = opts.steps_for(2.0 * target.abs()).max(4);
    let at = |t: f64| -> Result<(LiftPoint, f64)> {
        let x = trace_leaf_steps(m, anchor, leaf, t, steps, opts)?.end();
        Ok((x, w.dot(&(hf.eval(&x)? - h0)) - target))
    };
    // bracket: g(0) = -target, expand from the identity guess
    let (mut lo, mut glo) = (0.0, -target);
    let mut hi = target;
    let (_, mut ghi) = at(hi)?;
    let mut grow = 0;
    while glo.signum() == ghi.signum() {
        grow += 1;
        if grow > 30 || !ghi.is_finite() {
            return Err(Error::NotInjective(format!("no sign change along the {leaf} leaf up to {hi:.3e}")));
        }
        lo = hi;
        glo = ghi;
        hi *= 1.5;
        ghi = at(hi)?.1;
    }
    // Illinois false position
    let mut side = 0;
    let mut best = if glo.abs() < ghi.abs() { lo } else { hi };
    for _ in 0..100 {
        let t = (lo * ghi - hi * glo) / (ghi - glo);
        let (_, g) = at(t)?;
        best = t;
        if g == 0.0 || (hi - lo).abs() < 1e-15 * (1.0 + t.abs()) || g.abs() < 1e-14 {
            break;
        }
        if g.signum() == ghi.signum() {
            hi = t;
            ghi = g;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        } else {
            lo = t;
            glo = g;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        }
    }
    let (x, _) = at(best)?;
    let residual = (hf.eval(&x)? - y).norm();
    Ok(LeafPreimage { point: x.into(), param: best, residual })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub c_hat: f64,
    pub beta_hat: f64,
    /// `(linear-leaf distance, F-leaf distance)` pairs.
    pub samples: Vec<(f64, f64)>,
}

/// Fits `d_F(h⁻¹ y₀, h⁻¹ y) ≈ C·|y - y₀|^β` along the `leaf` through `anchor`.
pub fn holder_probe(
    hf: &ConjugacyField,
    anchor: &LiftPoint,
    leaf: Bundle,
    scales: &[f64],
    opts: &TraceOptions,
) -> Result<HolderFit> {
    let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().copied().fold(0.0, f64::max);
    if scales.len() < 2 || !(lo > 0.0) || hi / lo < 1e3 {
        return Err(Error::InsufficientSpread(format!("holder scales must span three decades, got [{lo:e}, {hi:e}]")));
    }
    let (v, _) = linear_direction(&hf.model, leaf)?;
    let y0 = hf.eval(anchor)?;
    let samples: Vec<(f64, f64)> = scales
        .par_iter()
        .map(|&s| {
            let pre = invert_h_on_leaf(hf, anchor, &(y0 + v * s), leaf, opts)?;
            Ok((s, pre.param.abs()))
        })
        .collect::<Result<_>>()?;
    if let Some(&(s, _)) = samples.iter().find(|p| p.1 < 1e-12) {
        return Err(Error::InsufficientSpread(format!("leaf distance collapsed at scale {s:e}")));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|(s, d)| (s.ln(), d.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let beta = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if !(beta > 0.0 && beta <= 1.05) {
        return Err(Error::FitFailure(beta));
    }
    Ok(HolderFit { c_hat: (my - beta * mx).exp(), beta_hat: beta.min(1.0), samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterDiffReport {
    pub lengths: Vec<f64>,
    /// `|H(I)|` for each nested arc.
    pub image_lengths: Vec<f64>,
    /// `d^c(I)` for each nested arc.
    pub metric_lengths: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `(max - min) / min` of the ratios.
    pub drift: f64,
}

/// Compares `|H(I)|` with `d^c(I)` on the nested center arcs `[0, L]` at `base`.
pub fn center_diff_probe(
    hf: &ConjugacyField,
    density: &dyn CenterDensity,
    base: &LiftPoint,
    lengths: &[f64],
    opts: &TraceOptions,
) -> Result<CenterDiffReport> {
    let m = &hf.model;
    let lo = lengths.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
    let hi = lengths.iter().map(|l| l.abs()).fold(0.0, f64::max);
    if !(lo > 0.0) || hi / lo < 1e3 * (1.0 - 1e-12) {
        return Err(Error::InsufficientSpread(format!("center arcs must span three decades, got [{lo:e}, {hi:e}]")));
    }
    let h0 = hf.eval(base)?;
    let rows: Vec<(f64, f64)> = lengths
        .par_iter()
        .map(|&l| {
            let o = TraceOptions { step: opts.step.min(l.abs() / 16.0), ..*opts };
            let arc = trace_leaf(m, base, Bundle::C, l, &o)?;
            Ok(((hf.eval(&arc.end())? - h0).norm(), center_length(&arc, density)))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = rows.iter().map(|(a, b)| a / b).collect();
    let rmin = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = ratios.iter().copied().fold(0.0, f64::max);
    Ok(CenterDiffReport {
        lengths: lengths.to_vec(),
        image_lengths: rows.iter().map(|r| r.0).collect(),
        metric_lengths: rows.iter().map(|r| r.1).collect(),
        drift: (rmax - rmin) / rmin,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    struct Flat;
    impl CenterDensity for Flat {
        fn log_density(&self, _: &LiftPoint) -> f64 {
            0.0
        }
    }

    #[test]
    fn zero_displacement_gives_identity() {
        let m = MapModel::linear(fixtures::a0());
        let hf = solve_franks(&m, 10, 4).unwrap();
        assert!(hf.samples.iter().all(|u| *u == [0.0; 3]));
        assert_eq!(hf.residual_sup, 0.0);
        assert_eq!(conjugacy_residual(&ConjugacyField::identity(&m), &m, 50, 1).unwrap(), 0.0);
    }

    #[test]
    fn identity_is_detected_as_wrong() {
        let m = fixtures::stock_perturbed(0.02);
        let r = conjugacy_residual(&ConjugacyField::identity(&m), &m, 200, 3).unwrap();
        assert!(r > 1e-3, "{r}");
    }

    #[test]
    fn stock_solution_and_bound() {
        let m = fixtures::stock_perturbed(0.02);
        let hf = solve_franks(&m, 60, 6).unwrap();
        assert!(hf.residual_sup < 1e-8, "{}", hf.residual_sup);
        let lam = m.base().eigenvalues();
        let bound = 0.02 * (1.0 / (lam[2] - 1.0) + 1.0 / (lam[1] - 1.0) + 1.0 / (1.0 - lam[0]));
        assert!(hf.grid_sup() <= hf.l_bound + 1e-15 && hf.l_bound <= bound, "{} {} {bound}", hf.grid_sup(), hf.l_bound);
        assert!(hf.tail_bound < 1e-12);
    }

    #[test]
    fn residual_decays_with_depth() {
        let m = fixtures::non_rigid();
        let lam = m.base().eigenvalues();
        let rate = (lam[2].powi(-10)).max(lam[0].abs().powi(10)).max(lam[1].powi(-10)) + 0.05;
        let r: Vec<f64> =
            [5, 15, 25].iter().map(|&d| conjugacy_residual(&solve_franks(&m, d, 0).unwrap(), &m, 200, 9).unwrap()).collect();
        for w in r.windows(2) {
            assert!(w[1] / w[0] <= rate, "{r:?}");
        }
    }

    #[test]
    fn conjugated_h_is_phi_inverse() {
        let m = fixtures::rigid();
        let hf = solve_franks(&m, 60, 0).unwrap();
        for x in sample_points(50, 4) {
            let want = m.phi_inverse(&x).unwrap();
            assert!((hf.eval(&x).unwrap() - want).norm() < 1e-10);
        }
    }

    #[test]
    fn grid_dump_round_trip() {
        let m = fixtures::stock_perturbed(0.01);
        let hf = solve_franks(&m, 20, 3).unwrap();
        let mut buf = Vec::new();
        hf.write_grid(&mut buf).unwrap();
        let dump = read_grid(buf.as_slice()).unwrap();
        assert_eq!(dump.grid, 3);
        assert_eq!(dump.depth, 20);
        assert_eq!(dump.matrix, fixtures::A0);
        assert_eq!(dump.samples, hf.samples);
        assert!(read_grid(&b"# x\ngrid 2\ndepth 1\nmatrix 1 0 0\n"[..]).is_err());
    }

    #[test]
    fn linear_leaf_inverse_is_identity() {
        let m = MapModel::linear(fixtures::a0());
        let hf = ConjugacyField::identity(&m);
        let x = Vec3::new(0.2, 0.7, 0.1);
        let v = m.base().eigenvectors()[0];
        let pre = invert_h_on_leaf(&hf, &x, &(x + v * 0.3), Bundle::S, &TraceOptions::default()).unwrap();
        assert!((Vec3::from(pre.point) - x - v * 0.3).norm() < 1e-12);
        assert!(invert_h_on_leaf(&hf, &x, &(x + Vec3::new(0.1, 0.0, 0.0)), Bundle::S, &TraceOptions::default()).is_err());
    }

    #[test]
    fn conjugated_leaf_inverse_matches_phi() {
        let m = fixtures::rigid();
        let hf = solve_franks(&m, 60, 0).unwrap();
        let anchor = Vec3::new(0.3, 0.45, 0.8);
        let y0 = hf.eval(&anchor).unwrap();
        for leaf in [Bundle::S, Bundle::U] {
            let v = m.base().eigenvectors()[leaf.index()];
            for s in [-0.4, 0.05, 0.3] {
                let y = y0 + v * s;
                let pre = invert_h_on_leaf(&hf, &anchor, &y, leaf, &TraceOptions::default()).unwrap();
                assert!(pre.residual < 1e-8, "{leaf} {s} {}", pre.residual);
                assert!((Vec3::from(pre.point) - m.phi(&y)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn stable_leaf_order_is_preserved() {
        let m = fixtures::non_rigid();
        let hf = solve_franks(&m, 40, 0).unwrap();
        let x = Vec3::new(0.6, 0.2, 0.35);
        let seg = trace_leaf(&m, &x, Bundle::S, 0.6, &TraceOptions::default()).unwrap();
        let w = m.base().dual_basis()[0];
        let coords: Vec<f64> = seg.points.iter().step_by(3).map(|p| w.dot(&hf.eval(p).unwrap())).collect();
        assert!(coords.windows(2).all(|c| c[1] > c[0]));
    }

    #[test]
    fn linear_holder_exponent_is_one() {
        let m = MapModel::linear(fixtures::a0());
        let hf = ConjugacyField::identity(&m);
        let fit =
            holder_probe(&hf, &Vec3::new(0.1, 0.1, 0.1), Bundle::U, &[1e-4, 1e-3, 1e-2, 1e-1], &TraceOptions::default()).unwrap();
        assert!((fit.beta_hat - 1.0).abs() < 0.02);
        assert!(matches!(
            holder_probe(&hf, &Vec3::zeros(), Bundle::U, &[1e-2, 1e-1], &TraceOptions::default()),
            Err(Error::InsufficientSpread(_))
        ));
    }

    #[test]
    fn conjugated_holder_exponent() {
        let m = fixtures::rigid();
        let hf = solve_franks(&m, 60, 0).unwrap();
        let fit =
            holder_probe(&hf, &Vec3::new(0.4, 0.3, 0.2), Bundle::S, &[1e-4, 1e-3, 1e-2, 1e-1], &TraceOptions::default()).unwrap();
        assert!(fit.beta_hat >= 0.95 && fit.beta_hat <= 1.0, "{fit:?}");
    }

    #[test]
    fn linear_center_ratio_is_one() {
        let m = MapModel::linear(fixtures::a0());
        let hf = ConjugacyField::identity(&m);
        let rep =
            center_diff_probe(&hf, &Flat, &Vec3::new(0.2, 0.5, 0.9), &[1e-3, 1e-2, 1e-1, 1.0], &TraceOptions::default()).unwrap();
        assert!(rep.ratios.iter().all(|r| (r - 1.0).abs() < 1e-12), "{rep:?}");
    }
}
