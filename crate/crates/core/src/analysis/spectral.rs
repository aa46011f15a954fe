//! Linearisation at a free-flow equilibrium, Hurwitz checks and the l1
//! matrix measure.

use nalgebra::{DMatrix, Schur};

use crate::analysis::basin::{delta_bar, DeltaBar};
use crate::dynamics::free_flow_slacks;
use crate::error::{Error, Result};
use crate::model::Mtn;
use crate::state::StateArray;

/// Eigenvalue real parts must be below `-HURWITZ_MARGIN` to count as stable.
pub const HURWITZ_MARGIN: f64 = 1e-10;

/// Fails unless every supply strictly exceeds its incoming demand at `x`.
pub(crate) fn require_free_flow(mtn: &Mtn, x: &StateArray) -> Result<()> {
    for (j, slack) in free_flow_slacks(mtn, x).into_iter().enumerate() {
        if let Some(slack) = slack {
            if !(slack > 0.0) {
                return Err(Error::NotFreeFlow {
                    cell: mtn.topology().cell_id(j).to_owned(),
                    slack,
                });
            }
        }
    }
    Ok(())
}

/// Jacobian of commodity `k`'s dynamics at a free-flow state:
/// `((R^k)ᵀ − I) D^k` with `D^k = diag(d_i^k'(x_i^k))`.
///
/// Inside the free-flow region the commodity blocks decouple, so this is the
/// full derivative of `ẋ^k` with respect to `x^k`.
pub fn jacobian_free_flow(mtn: &Mtn, x_star: &StateArray, k: usize) -> Result<DMatrix<f64>> {
    if k >= mtn.num_commodities() {
        return Err(Error::InvalidArgument(format!("commodity index {k} out of range")));
    }
    require_free_flow(mtn, x_star)?;
    let n = mtn.num_cells();
    let mut j = mtn.routing(k).transpose() - DMatrix::identity(n, n);
    for col in 0..n {
        let slope = mtn.demand(col, k).derivative(x_star.get(col, k));
        j.column_mut(col).scale_mut(slope);
    }
    Ok(j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurwitzCheck {
    pub is_hurwitz: bool,
    pub max_real_part: f64,
}

pub fn hurwitz_check(j: &DMatrix<f64>) -> Result<HurwitzCheck> {
    if j.nrows() != j.ncols() {
        return Err(Error::Dimension {
            what: "Hurwitz check needs a square matrix; columns",
            expected: j.nrows(),
            found: j.ncols(),
        });
    }
    if j.is_empty() {
        return Ok(HurwitzCheck {
            is_hurwitz: true,
            max_real_part: f64::NEG_INFINITY,
        });
    }
    let schur = Schur::try_new(j.clone(), f64::EPSILON, 100_000).ok_or(Error::EigenSolver)?;
    let max_real_part = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(HurwitzCheck {
        is_hurwitz: max_real_part < -HURWITZ_MARGIN,
        max_real_part,
    })
}

/// Matrix measure induced by the l1 norm: `max_j (J_jj + Σ_{i≠j} |J_ij|)`.
pub fn l1_matrix_measure(j: &DMatrix<f64>) -> f64 {
    (0..j.ncols())
        .map(|c| {
            j.column(c)
                .iter()
                .enumerate()
                .map(|(r, v)| if r == c { *v } else { v.abs() })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Local stability evidence for a free-flow equilibrium.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub jacobians: Vec<DMatrix<f64>>,
    pub max_real_eigenvalue: Vec<f64>,
    pub l1_measure: Vec<f64>,
    pub delta_bar: DeltaBar,
}

impl StabilityCertificate {
    pub fn is_hurwitz(&self) -> bool {
        self.max_real_eigenvalue
            .iter()
            .all(|&m| m < -HURWITZ_MARGIN)
    }
}

pub fn certify(mtn: &Mtn, x_star: &StateArray) -> Result<StabilityCertificate> {
    let mut jacobians = Vec::new();
    let mut max_real_eigenvalue = Vec::new();
    let mut l1_measure = Vec::new();
    for k in 0..mtn.num_commodities() {
        let j = jacobian_free_flow(mtn, x_star, k)?;
        max_real_eigenvalue.push(hurwitz_check(&j)?.max_real_part);
        l1_measure.push(l1_matrix_measure(&j));
        jacobians.push(j);
    }
    Ok(StabilityCertificate {
        jacobians,
        max_real_eigenvalue,
        l1_measure,
        delta_bar: delta_bar(mtn, x_star)?,
    })
}
