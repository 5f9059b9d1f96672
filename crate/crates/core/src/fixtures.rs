//! Reference models shared by the tests, the CLI examples and the acceptance suite.

use crate::model::{MapModel, TrigField, TrigMode};
use crate::torus::ToralAutomorphism;

pub const A0: [[i64; 3]; 3] = [[2, 1, 0], [1, 2, 1], [0, 1, 1]];

/// Parameter of the non-rigid fixture.
pub const NON_RIGID_EPSILON: f64 = 0.05;

/// Parameter of the rigid (conjugated) fixture.
pub const RIGID_EPSILON: f64 = 0.02;

pub fn a0() -> ToralAutomorphism {
    ToralAutomorphism::from_rows(A0).expect("A0 is partially hyperbolic")
}

/// `sin(2π x₁) v_u`. Only the unstable row of `Df` changes in the eigenbasis, so
/// every periodic center multiplier stays `λ_c`: a rigid family.
pub fn stock_field() -> TrigField {
    let vu = a0().eigenvectors()[2];
    TrigField::new(vec![TrigMode::new([1, 0, 0], [vu[0], vu[1], vu[2]])])
}

pub fn stock_perturbed(epsilon: f64) -> MapModel {
    MapModel::perturbed(a0(), stock_field(), epsilon)
}

/// `sin(2π x₁) e₁`: couples the center row to position and breaks rigidity.
pub fn non_rigid_field() -> TrigField {
    TrigField::new(vec![TrigMode::new([1, 0, 0], [1.0, 0.0, 0.0])])
}

pub fn non_rigid_at(epsilon: f64) -> MapModel {
    MapModel::perturbed(a0(), non_rigid_field(), epsilon)
}

pub fn non_rigid() -> MapModel {
    non_rigid_at(NON_RIGID_EPSILON)
}

/// Conjugating displacement `q` with `φ = Id + ε q`.
pub fn conjugacy_field() -> TrigField {
    TrigField::new(vec![
        TrigMode::new([0, 1, 0], [1.0, 0.0, 0.0]),
        TrigMode::new([0, 0, 1], [0.0, 1.0, 0.0]),
        TrigMode::new([1, 1, 0], [0.0, 0.0, 0.1]),
    ])
}

pub fn rigid_at(epsilon: f64) -> MapModel {
    MapModel::conjugated(a0(), conjugacy_field(), epsilon)
}

pub fn rigid() -> MapModel {
    rigid_at(RIGID_EPSILON)
}
