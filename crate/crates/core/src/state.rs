//! Dense `(cell, commodity)` arrays.
//!
//! Entries are stored cell-major: index `i * K + k` for cell `i` and commodity
//! `k`. This is also the order in which states are printed and exported.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Mtn;

/// Entries this far below zero are treated as round-off and clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

/// Traffic volumes, one nonnegative entry per `(cell, commodity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateArray {
    cells: usize,
    commodities: usize,
    values: Vec<f64>,
}

impl StateArray {
    pub fn zeros(cells: usize, commodities: usize) -> Self {
        Self {
            cells,
            commodities,
            values: vec![0.0; cells * commodities],
        }
    }

    pub fn zeros_for(mtn: &Mtn) -> Self {
        Self::zeros(mtn.num_cells(), mtn.num_commodities())
    }

    /// Entries in `(−CLAMP_TOLERANCE, 0)` are clamped to zero; anything more
    /// negative, or non-finite, is rejected.
    pub fn from_vec(cells: usize, commodities: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != cells * commodities {
            return Err(Error::Dimension {
                what: "state array",
                expected: cells * commodities,
                found: values.len(),
            });
        }
        for (idx, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v <= -CLAMP_TOLERANCE {
                return Err(Error::NegativeState {
                    cell: (idx / commodities).to_string(),
                    commodity: (idx % commodities).to_string(),
                    value: *v,
                });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self {
            cells,
            commodities,
            values,
        })
    }

    pub fn for_mtn(mtn: &Mtn, values: Vec<f64>) -> Result<Self> {
        Self::from_vec(mtn.num_cells(), mtn.num_commodities(), values)
    }

    pub fn from_fn(
        cells: usize,
        commodities: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(cells * commodities);
        for i in 0..cells {
            for k in 0..commodities {
                values.push(f(i, k));
            }
        }
        Self::from_vec(cells, commodities, values)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn commodities(&self) -> usize {
        self.commodities
    }

    #[inline]
    pub fn get(&self, cell: usize, commodity: usize) -> f64 {
        self.values[cell * self.commodities + commodity]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Aggregate density of a cell.
    pub fn cell_total(&self, cell: usize) -> f64 {
        self.values[cell * self.commodities..(cell + 1) * self.commodities]
            .iter()
            .sum()
    }

    /// Densities of one commodity across all cells.
    pub fn commodity_vector(&self, commodity: usize) -> DVector<f64> {
        DVector::from_iterator(self.cells, (0..self.cells).map(|i| self.get(i, commodity)))
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn l1_distance(&self, other: &StateArray) -> f64 {
        l1_distance(&self.values, &other.values)
    }
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Exogenous inflow rates; nonzero only on on-ramps.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowArray {
    cells: usize,
    commodities: usize,
    values: Vec<f64>,
}

impl InflowArray {
    pub fn zeros(mtn: &Mtn) -> Self {
        Self {
            cells: mtn.num_cells(),
            commodities: mtn.num_commodities(),
            values: vec![0.0; mtn.num_cells() * mtn.num_commodities()],
        }
    }

    pub fn new(mtn: &Mtn, values: Vec<f64>) -> Result<Self> {
        let (n, kc) = (mtn.num_cells(), mtn.num_commodities());
        if values.len() != n * kc {
            return Err(Error::Dimension {
                what: "inflow array",
                expected: n * kc,
                found: values.len(),
            });
        }
        for (idx, &v) in values.iter().enumerate() {
            let (i, k) = (idx / kc, idx % kc);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "inflow of commodity {} on cell {} must be finite and nonnegative, got {v}",
                    mtn.commodity(k).id,
                    mtn.topology().cell_id(i)
                )));
            }
            if v != 0.0 && !mtn.topology().is_onramp(i) {
                return Err(Error::InvalidArgument(format!(
                    "cell {} is not an on-ramp but has inflow {v}",
                    mtn.topology().cell_id(i)
                )));
            }
        }
        Ok(Self {
            cells: n,
            commodities: kc,
            values,
        })
    }

    /// Builds an inflow array from `(cell, commodity, rate)` index triples.
    pub fn from_entries(mtn: &Mtn, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let kc = mtn.num_commodities();
        let mut values = vec![0.0; mtn.num_cells() * kc];
        for &(i, k, v) in entries {
            if i >= mtn.num_cells() || k >= kc {
                return Err(Error::InvalidArgument(format!("inflow index ({i}, {k}) out of range")));
            }
            values[i * kc + k] = v;
        }
        Self::new(mtn, values)
    }

    #[inline]
    pub fn get(&self, cell: usize, commodity: usize) -> f64 {
        self.values[cell * self.commodities + commodity]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn commodity_vector(&self, commodity: usize) -> DVector<f64> {
        DVector::from_iterator(self.cells, (0..self.cells).map(|i| self.get(i, commodity)))
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            cells: self.cells,
            commodities: self.commodities,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::diverge_junction;

    #[test]
    fn state_clamps_round_off_and_rejects_negatives() {
        let s = StateArray::from_vec(1, 2, vec![-1e-13, 1.0]).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 1.0]);
        assert!(StateArray::from_vec(1, 2, vec![-1e-6, 1.0]).is_err());
        assert!(StateArray::from_vec(1, 2, vec![f64::NAN, 1.0]).is_err());
        assert!(StateArray::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn layout_is_cell_major() {
        let s = StateArray::from_fn(3, 2, |i, k| (10 * i + k) as f64).unwrap();
        assert_eq!(s.get(2, 1), 21.0);
        assert_eq!(s.as_slice()[5], 21.0);
        assert_eq!(s.cell_total(1), 21.0);
        assert_eq!(s.commodity_vector(1).as_slice(), &[1.0, 11.0, 21.0]);
    }

    #[test]
    fn inflow_must_vanish_off_onramps() {
        let mtn = diverge_junction();
        assert!(InflowArray::from_entries(&mtn, &[(0, 0, 0.5), (0, 1, 0.5)]).is_ok());
        assert!(InflowArray::from_entries(&mtn, &[(1, 0, 0.5)]).is_err());
        assert!(InflowArray::from_entries(&mtn, &[(0, 0, -0.5)]).is_err());
    }
}
