//! Reduced degree-of-freedom numbering for a nodal field: homogeneous
//! restrictions remove DOFs, tied groups collapse several DOFs onto one
//! master so a boundary can translate rigidly. The same reduced space is
//! shared by a primal field and its adjoint.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("dof (node {node}, comp {comp}) appears in more than one restriction")]
    Conflict { node: usize, comp: usize },
    #[error("dof index (node {node}, comp {comp}) out of range")]
    OutOfRange { node: usize, comp: usize },
    #[error("a tie group needs at least two members")]
    ShortTieGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofTarget {
    /// Index into the reduced vector; tied DOFs share their master's index.
    Free(usize),
    /// Removed from the system, value pinned to zero.
    Fixed,
}

#[derive(Debug, Clone, Default)]
pub struct Restrictions {
    pub fixed: Vec<(usize, usize)>,
    /// Each group is tied to its first member.
    pub tied: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct FieldSpace {
    n_nodes: usize,
    ncomp: usize,
    map: Vec<DofTarget>,
    n_free: usize,
}

impl FieldSpace {
    pub fn new(
        n_nodes: usize,
        ncomp: usize,
        restrictions: &Restrictions,
    ) -> Result<Self, SpaceError> {
        let n_raw = n_nodes * ncomp;
        // 0 = untouched, 1 = fixed, 2 = tied follower, 3 = tie master.
        let mut role = vec![0u8; n_raw];
        let raw = |node: usize, comp: usize| -> Result<usize, SpaceError> {
            if node >= n_nodes || comp >= ncomp {
                return Err(SpaceError::OutOfRange { node, comp });
            }
            Ok(node * ncomp + comp)
        };
        for &(node, comp) in &restrictions.fixed {
            let r = raw(node, comp)?;
            if role[r] != 0 {
                return Err(SpaceError::Conflict { node, comp });
            }
            role[r] = 1;
        }
        for group in &restrictions.tied {
            if group.len() < 2 {
                return Err(SpaceError::ShortTieGroup);
            }
            for (k, &(node, comp)) in group.iter().enumerate() {
                let r = raw(node, comp)?;
                if role[r] != 0 {
                    return Err(SpaceError::Conflict { node, comp });
                }
                role[r] = if k == 0 { 3 } else { 2 };
            }
        }

        let mut map = vec![DofTarget::Fixed; n_raw];
        let mut n_free = 0;
        for r in 0..n_raw {
            match role[r] {
                0 | 3 => {
                    map[r] = DofTarget::Free(n_free);
                    n_free += 1;
                }
                _ => {}
            }
        }
        for group in &restrictions.tied {
            let master = group[0].0 * ncomp + group[0].1;
            let target = map[master];
            for &(node, comp) in &group[1..] {
                map[node * ncomp + comp] = target;
            }
        }
        Ok(FieldSpace {
            n_nodes,
            ncomp,
            map,
            n_free,
        })
    }

    pub fn unrestricted(n_nodes: usize, ncomp: usize) -> Self {
        Self::new(n_nodes, ncomp, &Restrictions::default()).expect("no restrictions")
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> DofTarget {
        self.map[node * self.ncomp + comp]
    }

    /// Expands a reduced vector to one value per (node, comp), zeros at
    /// fixed DOFs and master values at tied DOFs.
    pub fn scatter(&self, reduced: &[f64], full: &mut [f64]) {
        assert_eq!(reduced.len(), self.n_free);
        assert_eq!(full.len(), self.map.len());
        for (r, target) in self.map.iter().enumerate() {
            full[r] = match *target {
                DofTarget::Free(i) => reduced[i],
                DofTarget::Fixed => 0.0,
            };
        }
    }

    pub fn scattered(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.map.len()];
        self.scatter(reduced, &mut full);
        full
    }
}
