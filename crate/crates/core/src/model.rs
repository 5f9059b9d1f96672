//! The two parametric families of diffeomorphisms homotopic to `A`:
//! `F(x) = A x + ε p(x)` and `G = φ ∘ A ∘ φ⁻¹` with `φ = Id + ε q`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{LiftPoint, Mat3, ToralAutomorphism, TorusPoint, Vec3};

/// Fraction of the stable gap `1 - |λ_s|` the perturbation's Lipschitz bound may use.
pub const CERTIFICATE_FRACTION: f64 = 0.9;

const NEWTON_MAX_ITER: usize = 60;

/// One term `amplitude · sin(2π k·x + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub k: [i64; 3],
    pub amplitude: [f64; 3],
    #[serde(default)]
    pub phase: f64,
}

impl TrigMode {
    pub fn new(k: [i64; 3], amplitude: [f64; 3]) -> Self {
        TrigMode { k, amplitude, phase: 0.0 }
    }

    fn kvec(&self) -> Vec3 {
        Vec3::new(self.k[0] as f64, self.k[1] as f64, self.k[2] as f64)
    }

    fn amp(&self) -> Vec3 {
        Vec3::from(self.amplitude)
    }
}

/// A Z³-periodic vector field given by finitely many sine modes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigField {
    pub modes: Vec<TrigMode>,
}

impl TrigField {
    pub fn new(modes: Vec<TrigMode>) -> Self {
        TrigField { modes }
    }

    pub fn zero() -> Self {
        TrigField::default()
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.amplitude == [0.0; 3] || m.k == [0; 3] && m.phase == 0.0)
    }

    pub fn eval(&self, x: &LiftPoint) -> Vec3 {
        let mut out = Vec3::zeros();
        for m in &self.modes {
            let arg = TAU * m.kvec().dot(x) + m.phase;
            out += m.amp() * arg.sin();
        }
        out
    }

    pub fn jacobian(&self, x: &LiftPoint) -> Mat3 {
        self.eval_with_jacobian(x).1
    }

    pub fn eval_with_jacobian(&self, x: &LiftPoint) -> (Vec3, Mat3) {
        let mut v = Vec3::zeros();
        let mut j = Mat3::zeros();
        for m in &self.modes {
            let k = m.kvec();
            let (s, c) = (TAU * k.dot(x) + m.phase).sin_cos();
            let a = m.amp();
            v += a * s;
            j += a * k.transpose() * (TAU * c);
        }
        (v, j)
    }

    /// `Σ 2π|k|·|amplitude|`, an upper bound for `sup ‖Dp‖_op`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.modes.iter().map(|m| TAU * m.kvec().norm() * m.amp().norm()).sum()
    }

    /// `Σ |amplitude|`, an upper bound for `sup ‖p‖`.
    pub fn sup_bound(&self) -> f64 {
        self.modes.iter().map(|m| m.amp().norm()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", tag = "kind", content = "field")]
pub enum ModelKind {
    Linear,
    /// `F(x) = A x + ε p(x)`.
    Perturbed(TrigField),
    /// `G = φ ∘ A ∘ φ⁻¹`, `φ(x) = x + ε q(x)`.
    Conjugated(TrigField),
}

/// A certified diffeomorphism of `T³` in the isotopy class of its base automorphism.
#[derive(Clone, Debug)]
pub struct MapModel {
    base: ToralAutomorphism,
    kind: ModelKind,
    epsilon: f64,
    margin: f64,
}

impl MapModel {
    pub fn linear(base: ToralAutomorphism) -> Self {
        let margin = CERTIFICATE_FRACTION * (1.0 - base.eigenvalues()[0].abs());
        MapModel { base, kind: ModelKind::Linear, epsilon: 0.0, margin }
    }

    pub fn perturbed(base: ToralAutomorphism, field: TrigField, epsilon: f64) -> Self {
        Self::build(base, ModelKind::Perturbed(field), epsilon)
    }

    pub fn conjugated(base: ToralAutomorphism, field: TrigField, epsilon: f64) -> Self {
        Self::build(base, ModelKind::Conjugated(field), epsilon)
    }

    fn build(base: ToralAutomorphism, kind: ModelKind, epsilon: f64) -> Self {
        let lip = match &kind {
            ModelKind::Linear => 0.0,
            ModelKind::Perturbed(f) | ModelKind::Conjugated(f) => f.lipschitz_bound(),
        };
        let margin = CERTIFICATE_FRACTION * (1.0 - base.eigenvalues()[0].abs()) - epsilon.abs() * lip;
        MapModel { base, kind, epsilon, margin }
    }

    /// Same family and field at another parameter value.
    pub fn scaled(&self, epsilon: f64) -> Self {
        Self::build(self.base.clone(), self.kind.clone(), epsilon)
    }

    pub fn base(&self) -> &ToralAutomorphism {
        &self.base
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Positive margin certifies a global diffeomorphism with contracting Newton inverse.
    pub fn invertibility_margin(&self) -> f64 {
        self.margin
    }

    pub fn is_certified(&self) -> bool {
        self.margin > 0.0
    }

    /// True when the model is exactly `A` (linear kind or vanishing perturbation).
    pub fn is_linear(&self) -> bool {
        match &self.kind {
            ModelKind::Linear => true,
            ModelKind::Perturbed(f) | ModelKind::Conjugated(f) => self.epsilon == 0.0 || f.is_zero(),
        }
    }

    pub fn field(&self) -> Option<&TrigField> {
        match &self.kind {
            ModelKind::Linear => None,
            ModelKind::Perturbed(f) | ModelKind::Conjugated(f) => Some(f),
        }
    }

    fn require_certified(&self) -> Result<()> {
        if self.is_certified() {
            Ok(())
        } else {
            Err(Error::NotCertified { margin: self.margin })
        }
    }

    /// The conjugating map `φ = Id + ε q`; identity for the other kinds.
    pub fn phi(&self, y: &LiftPoint) -> LiftPoint {
        match &self.kind {
            ModelKind::Conjugated(q) => y + q.eval(y) * self.epsilon,
            _ => *y,
        }
    }

    pub fn phi_jacobian(&self, y: &LiftPoint) -> Mat3 {
        match &self.kind {
            ModelKind::Conjugated(q) => Mat3::identity() + q.jacobian(y) * self.epsilon,
            _ => Mat3::identity(),
        }
    }

    /// `φ⁻¹(x)` by Newton from `x`.
    pub fn phi_inverse(&self, x: &LiftPoint) -> Result<LiftPoint> {
        let q = match &self.kind {
            ModelKind::Conjugated(q) => q,
            _ => return Ok(*x),
        };
        self.require_certified()?;
        let eps = self.epsilon;
        newton_solve(*x, x, |y| {
            let (v, j) = q.eval_with_jacobian(y);
            (y + v * eps, Mat3::identity() + j * eps)
        })
    }

    /// Lift `F(x̃)`; satisfies `F(x̃ + k) = F(x̃) + A k`.
    pub fn eval_lift(&self, x: &LiftPoint) -> LiftPoint {
        let a = self.base.as_f64();
        match &self.kind {
            ModelKind::Linear => a * x,
            ModelKind::Perturbed(p) => a * x + p.eval(x) * self.epsilon,
            ModelKind::Conjugated(_) => {
                let y = self.phi_inverse(x).expect("conjugated model evaluated outside its certificate");
                self.phi(&(a * y))
            }
        }
    }

    /// Analytic Jacobian of the lift; Z³-periodic in `x`.
    pub fn derivative(&self, x: &LiftPoint) -> Mat3 {
        self.eval_with_derivative(x).1
    }

    pub fn derivative_at(&self, x: &TorusPoint) -> Mat3 {
        self.derivative(&x.lift())
    }

    pub fn eval_with_derivative(&self, x: &LiftPoint) -> (LiftPoint, Mat3) {
        let a = self.base.as_f64();
        match &self.kind {
            ModelKind::Linear => (a * x, *a),
            ModelKind::Perturbed(p) => {
                let (v, j) = p.eval_with_jacobian(x);
                (a * x + v * self.epsilon, a + j * self.epsilon)
            }
            ModelKind::Conjugated(q) => {
                let y = self.phi_inverse(x).expect("conjugated model evaluated outside its certificate");
                let (_, jy) = q.eval_with_jacobian(&y);
                let ay = a * y;
                let (vay, jay) = q.eval_with_jacobian(&ay);
                let dphi_y = Mat3::identity() + jy * self.epsilon;
                let dphi_ay = Mat3::identity() + jay * self.epsilon;
                let inv = dphi_y.try_inverse().expect("certified conjugation has invertible Jacobian");
                (ay + vay * self.epsilon, dphi_ay * a * inv)
            }
        }
    }

    /// `F(x) - A x`, the periodic displacement.
    pub fn displacement(&self, x: &LiftPoint) -> Vec3 {
        match &self.kind {
            ModelKind::Linear => Vec3::zeros(),
            ModelKind::Perturbed(p) => p.eval(x) * self.epsilon,
            ModelKind::Conjugated(_) => self.eval_lift(x) - self.base.as_f64() * x,
        }
    }

    /// `F⁻¹(y)` with `‖F(x) - y‖ < tol`, Newton seeded at `A⁻¹ y`.
    pub fn invert(&self, y: &LiftPoint, tol: f64) -> Result<LiftPoint> {
        self.require_certified()?;
        let ainv = self.base.inverse_f64();
        let x = match &self.kind {
            ModelKind::Linear => ainv * y,
            ModelKind::Perturbed(_) => {
                let seed = ainv * y;
                newton_solve(seed, y, |x| self.eval_with_derivative(x))?
            }
            ModelKind::Conjugated(_) => {
                let z = self.phi_inverse(y)?;
                self.phi(&(ainv * z))
            }
        };
        let residual = (self.eval_lift(&x) - y).amax();
        if residual < tol {
            Ok(x)
        } else {
            Err(Error::NoConvergence { iterations: NEWTON_MAX_ITER, residual })
        }
    }

    /// `F⁻¹(y)` to working precision; panics outside the certificate.
    pub fn inverse(&self, y: &LiftPoint) -> LiftPoint {
        let ainv = self.base.inverse_f64();
        match &self.kind {
            ModelKind::Linear => ainv * y,
            ModelKind::Perturbed(_) => {
                newton_solve(ainv * y, y, |x| self.eval_with_derivative(x)).expect("certified model must invert")
            }
            ModelKind::Conjugated(_) => {
                let z = self.phi_inverse(y).expect("certified model must invert");
                self.phi(&(ainv * z))
            }
        }
    }

    /// Largest sampled `|det Df - det A|`; the families are not volume preserving in general.
    pub fn volume_defect(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let det_a = self.base.det() as f64;
        (0..samples)
            .map(|_| {
                let x = Vec3::new(rng.gen(), rng.gen(), rng.gen());
                (self.derivative(&x).determinant() - det_a).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Newton for `f(x) = target`, stopping once the step stalls at roundoff.
fn newton_solve(mut x: Vec3, target: &Vec3, f: impl Fn(&Vec3) -> (Vec3, Mat3)) -> Result<Vec3> {
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let (fx, j) = f(&x);
        let r = fx - target;
        residual = r.amax();
        let step = match j.lu().solve(&r) {
            Some(s) => s,
            None => break,
        };
        x -= step;
        if step.amax() <= 4.0 * f64::EPSILON * (1.0 + x.amax()) {
            return Ok(x);
        }
    }
    let (fx, _) = f(&x);
    let last = (fx - target).amax();
    if last <= 64.0 * f64::EPSILON * (1.0 + target.amax()) {
        return Ok(x);
    }
    Err(Error::NoConvergence { iterations: NEWTON_MAX_ITER, residual: last.min(residual) })
}
