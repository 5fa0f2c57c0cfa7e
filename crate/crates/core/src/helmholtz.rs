//! The momentum/velocity map `y = u - u_xx` on a Dirichlet interval.
//!
//! The operator is inverted directly with a banded factorization. The
//! whole-line Green kernel `exp(-|x|)/2` does not satisfy the boundary
//! condition on a bounded interval, so it is not used.

use crate::banded::SymTridiagonal;
use crate::error::Result;
use crate::grid::{self, Domain1D, Field};

/// Prefactored discrete `I - d2` with homogeneous Dirichlet boundary.
#[derive(Debug, Clone)]
pub struct HelmholtzOperator {
    domain: Domain1D,
    factor: SymTridiagonal,
}

/// Velocity recovered from a momentum field.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub u: Field,
    /// `d1(u)`
    pub u_x: Field,
    /// `u - y`, exact by construction.
    pub u_xx: Field,
}

impl HelmholtzOperator {
    pub fn new(domain: Domain1D) -> Self {
        let h2 = domain.h() * domain.h();
        Self {
            domain,
            factor: SymTridiagonal::new(domain.n(), 1.0 + 2.0 / h2, -1.0 / h2),
        }
    }

    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    /// `y = u - d2(u)`
    pub fn apply(&self, u: &[f64]) -> Field {
        Field::from(self.factor.apply(u))
    }

    pub fn try_apply(&self, u: &[f64]) -> Result<Field> {
        self.domain.check(u)?;
        Ok(self.apply(u))
    }

    /// `u` with `(I - d2) u = y`.
    pub fn solve(&self, y: &[f64]) -> Field {
        Field::from(self.factor.solve(y))
    }

    pub fn try_solve(&self, y: &[f64]) -> Result<Field> {
        self.domain.check(y)?;
        Ok(self.solve(y))
    }

    pub fn velocity(&self, y: &[f64]) -> Velocity {
        let u = self.solve(y);
        let u_x = Field::from(grid::d1(&u, self.domain.h()));
        let u_xx = Field::from(u.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
        Velocity { u, u_x, u_xx }
    }
}
