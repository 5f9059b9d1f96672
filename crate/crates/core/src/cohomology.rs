//! Least-squares solution of `φ - φ∘f = ψ - c` with `ψ = log‖Df e_c‖` and
//! `c = log λ_c(A)`, and the conformal center metric `d^c` built from it.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundles::{self, Bundle, Depths};
use crate::error::{Error, Result};
use crate::foliation::{self, center_length, CenterDensity, LeafSegment, TraceOptions};
use crate::model::MapModel;
use crate::orbits::PeriodicOrbit;
use crate::torus::{LiftPoint, Vec3};

/// Samples per unknown in the least-squares system.
const OVERSAMPLING: usize = 4;
const CHECK_SAMPLES: usize = 2000;
const MAX_CONDITION: f64 = 1e12;

/// Additive recurrence with the generalized golden ratio in three dimensions.
pub fn r3_sequence(count: usize, offset: usize) -> Vec<LiftPoint> {
    let g = 1.220_744_084_605_759_5_f64;
    let alpha = Vec3::new(1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g));
    (offset..offset + count).map(|n| (Vec3::repeat(0.5) + alpha * (n + 1) as f64).map(|c| c.fract())).collect()
}

/// `ψ(x) = log‖Df(x) e_c(x)‖`.
pub fn center_log_jacobian(m: &MapModel, x: &LiftPoint) -> Result<f64> {
    bundles::center_stretch(m, x).map(f64::ln)
}

fn center_log_jacobian_with(m: &MapModel, x: &LiftPoint, depths: &Depths) -> Result<f64> {
    let e = bundles::direction(m, x, Bundle::C, depths)?;
    Ok((m.derivative(x) * e).norm().ln())
}

/// Frequencies `k ≠ 0` in a half space with `|k|₁ ≤ modes`.
fn frequencies(modes: usize) -> Vec<[i64; 3]> {
    let n = modes as i64;
    let mut out = Vec::new();
    for a in -n..=n {
        for b in -n..=n {
            for c in -n..=n {
                let k = [a, b, c];
                let first = k.iter().find(|&&v| v != 0);
                if a.abs() + b.abs() + c.abs() <= n && first.is_some_and(|&v| v > 0) {
                    out.push(k);
                }
            }
        }
    }
    out
}

/// `e^{2πi k·x}` for all frequencies via per-axis power tables.
fn characters(freqs: &[[i64; 3]], modes: usize, x: &LiftPoint) -> Vec<Complex<f64>> {
    let n = modes as i64;
    let tables: Vec<Vec<Complex<f64>>> = (0..3)
        .map(|d| {
            let w = Complex::from_polar(1.0, TAU * x[d]);
            let mut pos = vec![Complex::new(1.0, 0.0); modes + 1];
            for j in 1..=modes {
                pos[j] = pos[j - 1] * w;
            }
            (-n..=n).map(|j| if j >= 0 { pos[j as usize] } else { pos[(-j) as usize].conj() }).collect()
        })
        .collect();
    freqs
        .iter()
        .map(|k| tables[0][(k[0] + n) as usize] * tables[1][(k[1] + n) as usize] * tables[2][(k[2] + n) as usize])
        .collect()
}

/// Mean-zero trigonometric solution with its residual budget.
#[derive(Clone, Debug)]
pub struct CohomologySolution {
    pub modes: usize,
    pub grid: usize,
    /// `log λ_c(A)`.
    pub c: f64,
    /// Gauge constant added to `φ`; zero after solving.
    pub kappa: f64,
    pub freqs: Vec<[i64; 3]>,
    /// Coefficients of `cos(2πk·x)` and `sin(2πk·x)`.
    pub coeffs: Vec<(f64, f64)>,
    pub residual_l2: f64,
    pub residual_sup: f64,
    /// Observed change of `ψ` under deeper bundle transport.
    pub psi_error: f64,
    /// `φ` at the nodes `(i, j, k) / grid`, `i` fastest.
    pub table: Vec<f64>,
}

impl CohomologySolution {
    /// `φ(x)` without the gauge constant.
    pub fn phi(&self, x: &LiftPoint) -> f64 {
        characters(&self.freqs, self.modes, x).iter().zip(&self.coeffs).map(|(z, (a, b))| a * z.re + b * z.im).sum()
    }

    /// Copy with `κ` added to `φ`.
    pub fn with_gauge(&self, kappa: f64) -> Self {
        CohomologySolution { kappa: self.kappa + kappa, ..self.clone() }
    }

    /// `Σ (|a_k| + |b_k|) + |κ|`, an upper bound for `‖φ + κ‖_∞`.
    pub fn sup_bound(&self) -> f64 {
        self.coeffs.iter().map(|(a, b)| a.abs() + b.abs()).sum::<f64>() + self.kappa.abs()
    }

    /// Largest tabulated `|φ + κ|`.
    pub fn table_sup(&self) -> f64 {
        self.table.iter().map(|v| (v + self.kappa).abs()).fold(0.0, f64::max)
    }

    /// Plain-text dump of the table with a small header.
    pub fn write_grid<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# phlab center cocycle grid")?;
        writeln!(out, "grid {}", self.grid)?;
        writeln!(out, "modes {}", self.modes)?;
        writeln!(out, "c {:.16e}", self.c)?;
        for v in &self.table {
            writeln!(out, "{:.16e}", v + self.kappa)?;
        }
        Ok(())
    }
}

impl CenterDensity for CohomologySolution {
    fn log_density(&self, x: &LiftPoint) -> f64 {
        self.phi(x) + self.kappa
    }
}

/// Residual `φ(x) - φ(f x) - ψ(x) + c` at the given points.
fn residuals(sol: &CohomologySolution, m: &MapModel, points: &[LiftPoint]) -> Result<Vec<f64>> {
    points.par_iter().map(|x| Ok(sol.phi(x) - sol.phi(&m.eval_lift(x)) - center_log_jacobian(m, x)? + sol.c)).collect()
}

/// Least squares over `|k|₁ ≤ modes` with `grid³` tabulation; `2·modes < grid` is required.
pub fn solve_transfer(m: &MapModel, modes: usize, grid: usize) -> Result<CohomologySolution> {
    if !m.is_certified() {
        return Err(Error::NotCertified { margin: m.invertibility_margin() });
    }
    if modes == 0 {
        return Err(Error::InvalidInput("cohomology needs at least one mode".into()));
    }
    if 2 * modes >= grid {
        return Err(Error::IllConditioned(format!("{modes} modes are not resolved by a grid of {grid}")));
    }
    let c = m.base().center_rate().ln();
    let freqs = frequencies(modes);
    let unknowns = 2 * freqs.len();
    let points = r3_sequence(OVERSAMPLING * unknowns, 0);
    let rows: Vec<(Vec<f64>, f64)> = points
        .par_iter()
        .map(|x| {
            let zx = characters(&freqs, modes, x);
            let zf = characters(&freqs, modes, &m.eval_lift(x));
            let mut row = Vec::with_capacity(unknowns);
            for (a, b) in zx.iter().zip(&zf) {
                row.push(a.re - b.re);
                row.push(a.im - b.im);
            }
            Ok((row, center_log_jacobian(m, x)? - c))
        })
        .collect::<Result<_>>()?;
    let design = DMatrix::from_fn(rows.len(), unknowns, |i, j| rows[i].0[j]);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let normal = design.tr_mul(&design);
    let chol = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned(format!("normal matrix of order {unknowns} is not positive definite")))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if (hi / lo).powi(2) > MAX_CONDITION {
        return Err(Error::IllConditioned(format!("normal matrix condition estimate {:.3e}", (hi / lo).powi(2))));
    }
    let sol = chol.solve(&design.tr_mul(&rhs));
    let coeffs: Vec<(f64, f64)> = sol.as_slice().chunks(2).map(|p| (p[0], p[1])).collect();
    let mut out = CohomologySolution {
        modes,
        grid,
        c,
        kappa: 0.0,
        freqs,
        coeffs,
        residual_l2: 0.0,
        residual_sup: 0.0,
        psi_error: 0.0,
        table: Vec::new(),
    };
    let check = r3_sequence(CHECK_SAMPLES, OVERSAMPLING * unknowns);
    let res = residuals(&out, m, &check)?;
    out.residual_l2 = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    out.residual_sup = res.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let base = Depths::for_automorphism(m.base());
    let deeper =
        Depths { stable: base.stable * 3 / 2, unstable: base.unstable * 3 / 2, cu: base.cu * 3 / 2, cs: base.cs * 3 / 2 };
    out.psi_error = check
        .iter()
        .take(32)
        .map(|x| Ok((center_log_jacobian(m, x)? - center_log_jacobian_with(m, x, &deeper)?).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let g = grid as f64;
    out.table = (0..grid.pow(3))
        .into_par_iter()
        .map(|n| out.phi(&Vec3::new((n % grid) as f64 / g, ((n / grid) % grid) as f64 / g, (n / (grid * grid)) as f64 / g)))
        .collect();
    Ok(out)
}

/// Partial sums `S_k = Σ_{j<k} (ψ(f^j x) - c)` for `k = 1..=n`.
pub fn birkhoff_defect(m: &MapModel, x: &LiftPoint, n: usize) -> Result<Vec<f64>> {
    let c = m.base().center_rate().ln();
    let mut orbit = Vec::with_capacity(n);
    let mut y = crate::torus::wrap(x);
    for _ in 0..n {
        orbit.push(y);
        y = crate::torus::wrap(&m.eval_lift(&y));
    }
    let terms: Vec<f64> = orbit.par_iter().map(|p| Ok(center_log_jacobian(m, p)? - c)).collect::<Result<_>>()?;
    let mut acc = 0.0;
    Ok(terms
        .iter()
        .map(|t| {
            acc += t;
            acc
        })
        .collect())
}

/// `d^c` along a traced center arc.
pub fn center_distance(sol: &CohomologySolution, arc: &LeafSegment) -> Result<f64> {
    if arc.bundle != Bundle::C {
        return Err(Error::InvalidInput("center distance needs a center arc".into()));
    }
    Ok(center_length(arc, sol))
}

/// `d^c` of the image arc divided by `d^c` of the arc.
pub fn conformality_ratio(sol: &CohomologySolution, m: &MapModel, arc: &LeafSegment, opts: &TraceOptions) -> Result<f64> {
    let a = m.eval_lift(&arc.start());
    let b = m.eval_lift(&arc.end());
    let t = foliation::center_parameter(m, &a, &b, opts)?;
    let image = foliation::trace_leaf(m, &a, Bundle::C, t, &TraceOptions { step: opts.step / 4.0, ..*opts })?;
    Ok(center_distance(sol, &image)? / center_distance(sol, arc)?)
}

/// Largest `|d^c(h(y₁), h(y₂)) - d^c(y₁, y₂)|` over the center arcs `[0, t]` at `x`,
/// `h` the holonomy along `along` leaves of signed length `leg`.
pub fn holonomy_isometry_check(
    sol: &CohomologySolution,
    m: &MapModel,
    x: &LiftPoint,
    along: Bundle,
    leg: f64,
    arcs: &[f64],
    opts: &TraceOptions,
) -> Result<f64> {
    if along == Bundle::C {
        return Err(Error::InvalidInput("holonomy runs along s or u leaves".into()));
    }
    let z = foliation::trace_leaf(m, x, along, leg, opts)?.end();
    let defects: Vec<f64> = arcs
        .par_iter()
        .map(|&t| {
            let o = TraceOptions { step: opts.step.min(t.abs() / 8.0), ..*opts };
            let arc = foliation::trace_leaf(m, x, Bundle::C, t, &o)?;
            let (_, _, t1) = foliation::holonomy(m, &arc.end(), along, &z, (leg, t), opts)?;
            let image =
                foliation::trace_leaf(m, &z, Bundle::C, t1, &TraceOptions { step: opts.step.min(t1.abs() / 8.0), ..*opts })?;
            Ok((center_distance(sol, &image)? - center_distance(sol, &arc)?).abs())
        })
        .collect::<Result<_>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstructionCheck {
    pub period: usize,
    pub label: [i64; 3],
    /// `Σ (ψ - c)` over the orbit.
    pub orbit_sum: f64,
    /// `π(p)·log(λ_c(p)/λ_c(A))` from the monodromy.
    pub predicted: f64,
}

impl ObstructionCheck {
    pub fn defect(&self) -> f64 {
        (self.orbit_sum - self.predicted).abs()
    }
}

/// Links the orbit sums of `ψ - c` with the monodromy multiplier of `p`.
pub fn obstruction(m: &MapModel, p: &PeriodicOrbit) -> Result<ObstructionCheck> {
    let c = m.base().center_rate().ln();
    let orbit_sum =
        p.points.iter().map(|q| Ok(center_log_jacobian(m, &q.lift())? - c)).collect::<Result<Vec<f64>>>()?.iter().sum();
    let predicted = p.period as f64 * (p.lambda_c_monodromy.ln() - c);
    Ok(ObstructionCheck { period: p.period, label: p.label, orbit_sum, predicted })
}
