//! Arithmetic on `T³ = R³/Z³`, integer matrices and the linear model `A`.
//!
//! Everything here is exact where it can be: determinants and periodic point
//! enumeration run in 128-bit integers, and the eigen-structure of `A` comes
//! from the characteristic cubic rather than a general eigen-solver.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A point of the universal cover `R³`.
pub type LiftPoint = Vec3;

/// Coordinates within this distance of an integer are snapped to `0.0`.
pub const BOUNDARY_SNAP: f64 = 1e-14;

/// A point of `T³` with every coordinate in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint([f64; 3]);

impl TorusPoint {
    /// Projects any finite triple onto the torus.
    pub fn new(coords: [f64; 3]) -> Self {
        canonical_coords(&Vec3::from(coords)).0
    }

    pub fn origin() -> Self {
        TorusPoint([0.0; 3])
    }

    pub fn coords(&self) -> [f64; 3] {
        self.0
    }

    /// The representative in the unit cube.
    pub fn lift(&self) -> LiftPoint {
        Vec3::from(self.0)
    }

    /// Distance in the flat metric of the torus.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        let d = self.lift() - other.lift();
        d.map(|c| c - c.round()).norm()
    }
}

fn snap(c: f64) -> (f64, i64) {
    let k = c.floor();
    let r = c - k;
    let k = k as i64;
    if r < BOUNDARY_SNAP {
        (0.0, k)
    } else if 1.0 - r < BOUNDARY_SNAP {
        (0.0, k + 1)
    } else {
        (r, k)
    }
}

/// Splits a lift into its canonical torus representative and deck vector,
/// `x = lift(point) + deck`.
pub fn canonical_coords(x: &LiftPoint) -> (TorusPoint, [i64; 3]) {
    let (r0, k0) = snap(x[0]);
    let (r1, k1) = snap(x[1]);
    let (r2, k2) = snap(x[2]);
    (TorusPoint([r0, r1, r2]), [k0, k1, k2])
}

/// Canonical representative as a lift, without the deck vector.
#[inline]
pub fn wrap(x: &LiftPoint) -> LiftPoint {
    Vec3::new(snap(x[0]).0, snap(x[1]).0, snap(x[2]).0)
}

/// Componentwise `x - round(x)`: the shortest lattice-translate of a difference.
#[inline]
pub fn torus_delta(d: &Vec3) -> Vec3 {
    d.map(|c| c - c.round())
}

/// A 3×3 integer matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntMatrix(pub [[i64; 3]; 3]);

type Wide = [[i128; 3]; 3];

fn widen(m: &[[i64; 3]; 3]) -> Wide {
    let mut w = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            w[i][j] = m[i][j] as i128;
        }
    }
    w
}

fn wide_mul(a: &Wide, b: &Wide) -> Result<Wide> {
    let mut out = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc: i128 = 0;
            for k in 0..3 {
                let p = a[i][k].checked_mul(b[k][j]).ok_or(Error::Overflow("matrix power"))?;
                acc = acc.checked_add(p).ok_or(Error::Overflow("matrix power"))?;
            }
            out[i][j] = acc;
        }
    }
    Ok(out)
}

fn wide_det(m: &Wide) -> Result<i128> {
    let term = |a: i128, b: i128, c: i128, d: i128| -> Result<i128> {
        let x = a.checked_mul(b).ok_or(Error::Overflow("determinant"))?;
        let y = c.checked_mul(d).ok_or(Error::Overflow("determinant"))?;
        x.checked_sub(y).ok_or(Error::Overflow("determinant"))
    };
    let c0 = term(m[1][1], m[2][2], m[1][2], m[2][1])?;
    let c1 = term(m[1][0], m[2][2], m[1][2], m[2][0])?;
    let c2 = term(m[1][0], m[2][1], m[1][1], m[2][0])?;
    let ov = || Error::Overflow("determinant");
    let a = m[0][0].checked_mul(c0).ok_or_else(ov)?;
    let b = m[0][1].checked_mul(c1).ok_or_else(ov)?;
    let c = m[0][2].checked_mul(c2).ok_or_else(ov)?;
    a.checked_sub(b).and_then(|v| v.checked_add(c)).ok_or_else(ov)
}

fn wide_adjugate(m: &Wide) -> Result<Wide> {
    let ov = || Error::Overflow("adjugate");
    let mut adj = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // cofactor of (j, i)
            let r: Vec<usize> = (0..3).filter(|&r| r != j).collect();
            let c: Vec<usize> = (0..3).filter(|&c| c != i).collect();
            let x = m[r[0]][c[0]].checked_mul(m[r[1]][c[1]]).ok_or_else(ov)?;
            let y = m[r[0]][c[1]].checked_mul(m[r[1]][c[0]]).ok_or_else(ov)?;
            let minor = x.checked_sub(y).ok_or_else(ov)?;
            adj[i][j] = if (i + j) % 2 == 0 { minor } else { -minor };
        }
    }
    Ok(adj)
}

impl IntMatrix {
    pub fn identity() -> Self {
        IntMatrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    }

    pub fn det(&self) -> i128 {
        wide_det(&widen(&self.0)).expect("3x3 i64 determinant fits in i128")
    }

    pub fn trace(&self) -> i64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Sum of the principal 2×2 minors.
    pub fn minor_sum(&self) -> i64 {
        let m = &self.0;
        (m[0][0] * m[1][1] - m[0][1] * m[1][0])
            + (m[0][0] * m[2][2] - m[0][2] * m[2][0])
            + (m[1][1] * m[2][2] - m[1][2] * m[2][1])
    }

    pub fn to_f64(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.0[i][j] as f64)
    }

    pub fn apply(&self, k: &[i64; 3]) -> [i64; 3] {
        let m = &self.0;
        [0, 1, 2].map(|i| m[i][0] * k[0] + m[i][1] * k[1] + m[i][2] * k[2])
    }

    /// Inverse of a unimodular matrix, or `None` when `|det| != 1`.
    pub fn unimodular_inverse(&self) -> Option<IntMatrix> {
        let det = self.det();
        if det.abs() != 1 {
            return None;
        }
        let adj = wide_adjugate(&widen(&self.0)).ok()?;
        let mut inv = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                inv[i][j] = i64::try_from(adj[i][j] * det).ok()?;
            }
        }
        Some(IntMatrix(inv))
    }

    fn wide_pow(&self, n: u32) -> Result<Wide> {
        let mut acc = widen(&IntMatrix::identity().0);
        let mut base = widen(&self.0);
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                acc = wide_mul(&acc, &base)?;
            }
            e >>= 1;
            if e > 0 {
                base = wide_mul(&base, &base)?;
            }
        }
        Ok(acc)
    }
}

/// Linear classification of an integer 3×3 matrix acting on `T³`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    /// Three real eigenvalues with pairwise distinct moduli, none of modulus one.
    PhAnosov,
    /// Hyperbolic but without a real splitting into three distinct rates.
    AnosovNonPh,
    NotAnosov,
    NotUnimodular,
}

/// Monic cubic `λ³ + b λ² + c λ + d`.
#[derive(Clone, Copy, Debug)]
struct Cubic {
    b: f64,
    c: f64,
    d: f64,
}

impl Cubic {
    fn eval(&self, x: f64) -> (f64, f64) {
        let p = ((x + self.b) * x + self.c) * x + self.d;
        let dp = (3.0 * x + 2.0 * self.b) * x + self.c;
        (p, dp)
    }

    /// Safeguarded Newton on a bracket where the cubic changes sign.
    fn root_in(&self, mut lo: f64, mut hi: f64) -> f64 {
        let (plo, _) = self.eval(lo);
        let increasing = plo < 0.0;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (p, dp) = self.eval(x);
            if p == 0.0 {
                return x;
            }
            if (p < 0.0) == increasing {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - p / dp;
            let next = if dp != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                return next;
            }
            x = next;
        }
        x
    }

    fn polish(&self, mut x: f64) -> f64 {
        for _ in 0..4 {
            let (p, dp) = self.eval(x);
            if dp == 0.0 {
                break;
            }
            let next = x - p / dp;
            if !next.is_finite() || (next - x).abs() > 1e-6 * x.abs().max(1.0) {
                break;
            }
            x = next;
        }
        x
    }

    /// Real roots, sorted by absolute value, via deflation of the largest root.
    fn real_roots(&self) -> Vec<f64> {
        let bound = 1.0 + self.b.abs().max(self.c.abs()).max(self.d.abs());
        // critical points of the cubic bound its monotone pieces
        let disc_d = self.b * self.b - 3.0 * self.c;
        let top = if disc_d > 0.0 {
            let hi_crit = (-self.b + disc_d.sqrt()) / 3.0;
            if self.eval(hi_crit).0 <= 0.0 {
                Some(self.root_in(hi_crit, bound))
            } else {
                None
            }
        } else {
            None
        };
        let r1 = match top {
            Some(r) => r,
            None => {
                // single real root, below the low critical point (or no critical points)
                let hi = if disc_d > 0.0 { (-self.b - disc_d.sqrt()) / 3.0 } else { bound };
                self.root_in(-bound, hi)
            }
        };
        let q1 = self.b + r1;
        let q0 = if r1.abs() > 1e-300 { -self.d / r1 } else { self.c + r1 * q1 };
        let disc = q1 * q1 - 4.0 * q0;
        let mut roots = vec![r1];
        if disc >= 0.0 {
            let s = disc.sqrt();
            let t = -0.5 * (q1 + q1.signum() * s);
            let other = if t != 0.0 { q0 / t } else { 0.0 };
            roots.push(self.polish(t));
            roots.push(self.polish(other));
        }
        roots.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
        roots
    }
}

fn null_vector(m: &Mat3) -> Vec3 {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.norm() > best.norm() {
            best = *c;
        }
    }
    let mut v = best.normalize();
    let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        v = -v;
    }
    v
}

/// A partially hyperbolic Anosov automorphism together with its real eigen-structure.
///
/// Eigen-data is ordered `(s, c, u)` by increasing modulus.
#[derive(Clone, Debug, PartialEq)]
pub struct ToralAutomorphism {
    matrix: IntMatrix,
    inverse: IntMatrix,
    det: i64,
    eigenvalues: [f64; 3],
    eigenvectors: [Vec3; 3],
    dual: [Vec3; 3],
    float: Mat3,
    float_inverse: Mat3,
}

/// Classifies `m` by its characteristic polynomial.
pub fn classify_automorphism(m: &IntMatrix) -> Classification {
    classify_with_roots(m).0
}

fn classify_with_roots(m: &IntMatrix) -> (Classification, Vec<f64>) {
    let det = m.det();
    if det.abs() != 1 {
        return (Classification::NotUnimodular, Vec::new());
    }
    let (tr, c2, det) = (m.trace() as i128, m.minor_sum() as i128, det);
    // p(λ) = λ³ - tr λ² + c2 λ - det
    let p_at = |x: i128| x * x * x - tr * x * x + c2 * x - det;
    if p_at(1) == 0 || p_at(-1) == 0 {
        return (Classification::NotAnosov, Vec::new());
    }
    let (b, c, d) = (-tr, c2, -det);
    let disc = 18 * b * c * d - 4 * b * b * b * d + b * b * c * c - 4 * c * c * c - 27 * d * d;
    let cubic = Cubic { b: b as f64, c: c as f64, d: d as f64 };
    let roots = cubic.real_roots();
    if disc <= 0 || roots.len() != 3 {
        return (Classification::AnosovNonPh, roots);
    }
    let distinct = roots.windows(2).all(|w| w[1].abs() - w[0].abs() > 1e-9 * w[1].abs());
    if distinct {
        (Classification::PhAnosov, roots)
    } else {
        (Classification::AnosovNonPh, roots)
    }
}

impl ToralAutomorphism {
    pub fn new(matrix: IntMatrix) -> Result<Self> {
        let (class, roots) = classify_with_roots(&matrix);
        if class != Classification::PhAnosov {
            return Err(Error::NotPartiallyHyperbolic(class));
        }
        let float = matrix.to_f64();
        let mut eigenvalues = [0.0; 3];
        let mut eigenvectors = [Vec3::zeros(); 3];
        for (i, &lam) in roots.iter().enumerate() {
            eigenvalues[i] = lam;
            eigenvectors[i] = null_vector(&(float - Mat3::identity() * lam));
        }
        let basis = Mat3::from_columns(&eigenvectors);
        let inv = basis.try_inverse().ok_or(Error::NotPartiallyHyperbolic(class))?;
        let dual = [0, 1, 2].map(|i| inv.row(i).transpose());
        let inverse = matrix.unimodular_inverse().ok_or(Error::Overflow("inverse"))?;
        Ok(ToralAutomorphism {
            matrix,
            inverse,
            det: matrix.det() as i64,
            eigenvalues,
            eigenvectors,
            dual,
            float,
            float_inverse: inverse.to_f64(),
        })
    }

    pub fn from_rows(rows: [[i64; 3]; 3]) -> Result<Self> {
        Self::new(IntMatrix(rows))
    }

    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &IntMatrix {
        &self.inverse
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    /// Signed eigenvalues `(λ_s, λ_c, λ_u)`.
    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    /// Unit eigenvectors `(v_s, v_c, v_u)`; the largest component of each is positive.
    pub fn eigenvectors(&self) -> [Vec3; 3] {
        self.eigenvectors
    }

    /// Dual basis: `dual[i] · eigenvectors[j] = δ_ij`.
    pub fn dual_basis(&self) -> [Vec3; 3] {
        self.dual
    }

    /// `λ_c(A) = |λ_c|`.
    pub fn center_rate(&self) -> f64 {
        self.eigenvalues[1].abs()
    }

    pub fn as_f64(&self) -> &Mat3 {
        &self.float
    }

    pub fn inverse_f64(&self) -> &Mat3 {
        &self.float_inverse
    }

    pub fn apply(&self, x: &LiftPoint) -> LiftPoint {
        self.float * x
    }

    pub fn apply_inverse(&self, x: &LiftPoint) -> LiftPoint {
        self.float_inverse * x
    }
}

/// `|det(Aⁿ - I)|`, the number of points of `T³` fixed by `Aⁿ`.
pub fn linear_periodic_count(a: &ToralAutomorphism, n: u32) -> Result<u128> {
    if n == 0 {
        return Err(Error::InvalidInput("period must be positive".into()));
    }
    let mut b = a.matrix.wide_pow(n)?;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] = row[i].checked_sub(1).ok_or(Error::Overflow("A^n - I"))?;
    }
    Ok(wide_det(&b)?.unsigned_abs())
}

/// An exact `Aⁿ`-fixed point `numerators / denominator (mod Z³)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSeed {
    pub period: usize,
    pub numerators: [i64; 3],
    pub denominator: i64,
    /// `Aⁿ x̃ = x̃ + deck` for the representative `x̃ = numerators / denominator`.
    pub deck: [i64; 3],
    pub point: TorusPoint,
}

impl PeriodicSeed {
    /// The seed's image under `A`, again in lowest canonical numerators.
    pub fn image(&self, a: &ToralAutomorphism) -> [i64; 3] {
        let d = self.denominator as i128;
        let m = &a.matrix.0;
        let k = self.numerators.map(|v| v as i128);
        [0, 1, 2].map(|i| {
            let v = m[i][0] as i128 * k[0] + m[i][1] as i128 * k[1] + m[i][2] as i128 * k[2];
            v.rem_euclid(d) as i64
        })
    }
}

/// All solutions of `Aⁿ x ≡ x (mod Z³)`, sorted by numerators.
///
/// The solution set is the group `(Aⁿ - I)⁻¹ Z³ / Z³`; it is generated by the
/// columns of `adj(Aⁿ - I) / det`, so a closure over those three generators
/// enumerates it exactly in integer arithmetic.
pub fn linear_periodic_points(a: &ToralAutomorphism, n: u32, limit: usize) -> Result<Vec<PeriodicSeed>> {
    let count = linear_periodic_count(a, n)?;
    if count > limit as u128 {
        return Err(Error::CountExceedsLimit { count, limit });
    }
    let mut b = a.matrix.wide_pow(n)?;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] -= 1;
    }
    let det = wide_det(&b)?;
    let denom = det.unsigned_abs() as i128;
    let adj = wide_adjugate(&b)?;
    let sign = det.signum();
    let gens: Vec<[i128; 3]> = (0..3).map(|j| [0, 1, 2].map(|i| (sign * adj[i][j]).rem_euclid(denom))).collect();

    let mut seen: HashSet<[i128; 3]> = HashSet::with_capacity(count as usize);
    let mut stack = vec![[0i128; 3]];
    seen.insert([0; 3]);
    while let Some(k) = stack.pop() {
        for g in &gens {
            let next = [0, 1, 2].map(|i| (k[i] + g[i]).rem_euclid(denom));
            if seen.insert(next) {
                stack.push(next);
            }
        }
    }
    debug_assert_eq!(seen.len() as u128, count);

    let mut nums: Vec<[i128; 3]> = seen.into_iter().collect();
    nums.sort_unstable();
    nums.into_iter()
        .map(|k| {
            let bk = [0, 1, 2].map(|i| b[i][0] * k[0] + b[i][1] * k[1] + b[i][2] * k[2]);
            if bk.iter().any(|v| v % denom != 0) {
                return Err(Error::Overflow("periodic point deck vector"));
            }
            let coords = k.map(|v| v as f64 / denom as f64);
            Ok(PeriodicSeed {
                period: n as usize,
                numerators: k.map(|v| v as i64),
                denominator: denom as i64,
                deck: bk.map(|v| (v / denom) as i64),
                point: TorusPoint::new(coords),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a0() -> ToralAutomorphism {
        ToralAutomorphism::from_rows([[2, 1, 0], [1, 2, 1], [0, 1, 1]]).unwrap()
    }

    /// Plain bisection on a sign change; independent of the deflation solver.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(lo) < 0.0) == (f(mid) < 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn canonical_coords_examples() {
        let (p, k) = canonical_coords(&Vec3::new(0.25, 0.5, 0.75));
        assert_eq!(p.coords(), [0.25, 0.5, 0.75]);
        assert_eq!(k, [0, 0, 0]);

        let (p, k) = canonical_coords(&Vec3::new(1.25, -0.5, 2.0));
        assert_eq!(p.coords(), [0.25, 0.5, 0.0]);
        assert_eq!(k, [1, -1, 2]);

        let (p, k) = canonical_coords(&Vec3::new(-1e-16, 0.0, 0.0));
        assert_eq!(p.coords(), [0.0, 0.0, 0.0]);
        assert_eq!(k, [0, 0, 0]);
    }

    #[test]
    fn a0_eigenvalues_match_bisection_and_closed_form() {
        let a = a0();
        let p = |x: f64| x * x * x - 5.0 * x * x + 6.0 * x - 1.0;
        let oracle = [bisect(p, 0.0, 0.5), bisect(p, 1.0, 2.0), bisect(p, 3.0, 4.0)];
        let closed = [6.0, 4.0, 2.0].map(|k: f64| 2.0 + 2.0 * (k * std::f64::consts::PI / 7.0).cos());
        let ev = a.eigenvalues();
        for i in 0..3 {
            assert!((ev[i] - oracle[i]).abs() < 1e-12, "{ev:?} vs {oracle:?}");
            assert!((ev[i] - closed[i]).abs() < 1e-12);
        }
        assert!((ev[0] - 0.1980623).abs() < 1e-7);
        assert!((ev[1] - 1.5549581).abs() < 1e-7);
        assert!((ev[2] - 3.2469796).abs() < 1e-7);
    }

    #[test]
    fn eigen_structure_residuals() {
        let a = a0();
        let m = a.as_f64();
        let ev = a.eigenvalues();
        let vs = a.eigenvectors();
        let dual = a.dual_basis();
        for i in 0..3 {
            assert!((m * vs[i] - vs[i] * ev[i]).norm() < 1e-12);
            assert!((vs[i].norm() - 1.0).abs() < 1e-15);
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dual[i].dot(&vs[j]) - expect).abs() < 1e-12);
            }
        }
        assert!((ev[0] * ev[1] * ev[2] - a.det() as f64).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_automorphism(&IntMatrix([[2, 1, 0], [1, 2, 1], [0, 1, 1]])), Classification::PhAnosov);
        assert_eq!(classify_automorphism(&IntMatrix::identity()), Classification::NotAnosov);
        // one real root 1.8393 and a complex pair of modulus 0.737: hyperbolic, no real splitting
        let trib = IntMatrix([[0, 1, 0], [0, 0, 1], [1, 1, 1]]);
        assert_eq!(classify_automorphism(&trib), Classification::AnosovNonPh);
        let (_, roots) = classify_with_roots(&trib);
        let oracle = bisect(|x| x * x * x - x * x - x - 1.0, 1.0, 2.0);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - oracle).abs() < 1e-12);
        assert!((roots[0] - 1.8393).abs() < 1e-4);

        assert_eq!(classify_automorphism(&IntMatrix([[2, 0, 0], [0, 1, 0], [0, 0, 1]])), Classification::NotUnimodular);
        // eigenvalue -1
        assert_eq!(classify_automorphism(&IntMatrix([[-1, 0, 0], [0, 2, 1], [0, 1, 1]])), Classification::NotAnosov);
        assert!(ToralAutomorphism::new(IntMatrix::identity()).is_err());
    }

    #[test]
    fn periodic_counts() {
        let a = a0();
        assert_eq!(linear_periodic_count(&a, 1).unwrap(), 1);
        assert_eq!(linear_periodic_count(&a, 2).unwrap(), 13);
        let mut prev = 0;
        for n in 1..=6 {
            let c = linear_periodic_count(&a, n).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        // integer determinant oracle, computed by hand from A0²
        let sq = IntMatrix([[5 - 1, 4, 1], [4, 6 - 1, 3], [1, 3, 2 - 1]]);
        assert_eq!(sq.det().unsigned_abs(), 13);
        assert!(matches!(linear_periodic_count(&a, 60), Err(Error::Overflow(_))));
    }

    #[test]
    fn periodic_points_of_a0() {
        let a = a0();
        let fixed = linear_periodic_points(&a, 1, 100).unwrap();
        assert_eq!(fixed.len(), 1);
        assert_eq!(fixed[0].point.coords(), [0.0; 3]);

        let two = linear_periodic_points(&a, 2, 100).unwrap();
        assert_eq!(two.len(), 13);
        let a2 = a.as_f64() * a.as_f64();
        for s in &two {
            let x = s.point.lift();
            let d = torus_delta(&(a2 * x - x));
            assert!(d.norm() < 1e-12);
            let deck = Vec3::from(s.deck.map(|v| v as f64));
            assert!((a2 * x - x - deck).norm() < 1e-12);
        }

        // exhaustive enumeration oracle: x = (A²-I)⁻¹ m over a box of integer m
        let b = a2 - Mat3::identity();
        let binv = b.try_inverse().unwrap();
        let mut brute: Vec<[i64; 3]> = Vec::new();
        for i in -8..=8 {
            for j in -8..=8 {
                for k in -8..=8 {
                    let x = binv * Vec3::new(i as f64, j as f64, k as f64);
                    let key = wrap(&x).map(|c| ((c * 13.0).round() as i64).rem_euclid(13));
                    let key = [key[0], key[1], key[2]];
                    if !brute.contains(&key) {
                        brute.push(key);
                    }
                }
            }
        }
        brute.sort();
        let mut ours: Vec<[i64; 3]> = two.iter().map(|s| s.numerators).collect();
        ours.sort();
        assert_eq!(brute, ours);

        assert!(matches!(linear_periodic_points(&a, 2, 5), Err(Error::CountExceedsLimit { .. })));
    }

    #[test]
    fn periodic_points_are_permuted_by_a() {
        let a = a0();
        for n in 1..=4 {
            let pts = linear_periodic_points(&a, n, 10_000).unwrap();
            let set: HashSet<[i64; 3]> = pts.iter().map(|s| s.numerators).collect();
            for s in &pts {
                assert!(set.contains(&s.image(&a)));
            }
        }
    }

    #[test]
    fn unimodular_inverse_roundtrip() {
        let a = a0();
        let prod = a.as_f64() * a.inverse_f64();
        assert!((prod - Mat3::identity()).norm() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn wrap_lift_roundtrip(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0) {
            let v = Vec3::new(x, y, z);
            let (p, k) = canonical_coords(&v);
            for c in p.coords() {
                proptest::prop_assert!((0.0..1.0).contains(&c));
            }
            let back = p.lift() + Vec3::from(k.map(|v| v as f64));
            proptest::prop_assert!((back - v).amax() <= 2.0 * BOUNDARY_SNAP.max(f64::EPSILON * 64.0));
            let (q, k2) = canonical_coords(&p.lift());
            proptest::prop_assert_eq!(q, p);
            proptest::prop_assert_eq!(k2, [0, 0, 0]);
        }
    }
}
