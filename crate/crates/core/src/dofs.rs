//! Unknown bookkeeping shared by the flow and elasticity systems.
//!
//! Field entries are numbered `2·pixel + component`. Pinned (Dirichlet)
//! entries are removed from the linear system and their known values moved
//! to the right-hand side.

use crate::boundary::DirichletMap;
use crate::field::{GridGeometry, VectorField};
use crate::linalg::CsrMatrix;

/// Status of one scalar unknown (pixel, component).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dof {
    Free(usize),
    Pinned(f64),
}

/// Mapping between field entries `2·pixel + component` and system unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    geometry: GridGeometry,
    dofs: Vec<Dof>,
    free: usize,
}

impl DofMap {
    pub(crate) fn new(geometry: GridGeometry, pinned: &DirichletMap) -> Self {
        let mut dofs = Vec::with_capacity(2 * geometry.len());
        let mut free = 0;
        for p in 0..geometry.len() {
            match pinned.get(p) {
                Some(g) => {
                    dofs.push(Dof::Pinned(g[0]));
                    dofs.push(Dof::Pinned(g[1]));
                }
                None => {
                    dofs.push(Dof::Free(free));
                    dofs.push(Dof::Free(free + 1));
                    free += 2;
                }
            }
        }
        Self {
            geometry,
            dofs,
            free,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Entry for pixel `p`, component `c`.
    pub fn dof(&self, p: usize, c: usize) -> Dof {
        self.dofs[2 * p + c]
    }

    pub fn dofs(&self) -> &[Dof] {
        &self.dofs
    }

    pub fn free_count(&self) -> usize {
        self.free
    }

    /// Full field from a vector of free unknowns; pinned values re-inserted.
    pub fn expand(&self, free: &[f64]) -> VectorField {
        assert_eq!(free.len(), self.free);
        let n = self.geometry.len();
        let mut u1 = Vec::with_capacity(n);
        let mut u2 = Vec::with_capacity(n);
        for p in 0..n {
            for (c, out) in [&mut u1, &mut u2].into_iter().enumerate() {
                out.push(match self.dofs[2 * p + c] {
                    Dof::Free(k) => free[k],
                    Dof::Pinned(v) => v,
                });
            }
        }
        VectorField::from_vecs_unchecked(self.geometry, u1, u2)
    }

    /// Free unknowns of a full field (pinned entries are dropped).
    pub fn restrict(&self, field: &VectorField) -> Vec<f64> {
        let mut out = vec![0.0; self.free];
        for p in 0..self.geometry.len() {
            let v = [field.u1()[p], field.u2()[p]];
            for (c, value) in v.into_iter().enumerate() {
                if let Dof::Free(k) = self.dofs[2 * p + c] {
                    out[k] = value;
                }
            }
        }
        out
    }
}

/// Linear system `A·v = b` of the stationarity condition.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub operator: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
}

/// Restrict the full system to free unknowns, moving pinned columns to the
/// right-hand side.
pub(crate) fn eliminate(full: &CsrMatrix, rhs: &[f64], dof_map: DofMap) -> AssembledSystem {
    let mut triplets = Vec::with_capacity(full.nnz());
    let mut reduced_rhs = vec![0.0; dof_map.free_count()];
    for (i, dof_i) in dof_map.dofs().iter().enumerate() {
        let Dof::Free(ri) = *dof_i else { continue };
        let mut b = rhs[i];
        for (j, v) in full.row(i) {
            match dof_map.dofs()[j] {
                Dof::Free(rj) => triplets.push((ri, rj, v)),
                Dof::Pinned(g) => b -= v * g,
            }
        }
        reduced_rhs[ri] = b;
    }
    AssembledSystem {
        operator: CsrMatrix::from_triplets(dof_map.free_count(), &triplets),
        rhs: reduced_rhs,
        dof_map,
    }
}

