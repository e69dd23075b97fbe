//! Problem definition shared by the equilibrium solver and the optimizer:
//! mesh, field spaces with boundary restrictions, material parameters, and
//! the driven boundary region whose average traction is the load measure.

use crate::fem::mesh::{EdgeRef, Mesh, MeshError, Side};
use crate::fem::shape::ShapeTable;
use crate::fem::space::{DofTarget, FieldSpace, Restrictions, SpaceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("exactly one driven boundary region is required, found {0}")]
    DrivenRegionCount(usize),
    #[error("driven region '{0}' needs at least one constrained component")]
    EmptyComponentMask(String),
    #[error("material parameters must be positive: {0}")]
    BadMaterial(&'static str),
}

/// Bulk / shear moduli of the solid phase plus the design interpolation and
/// void-regularization constants.
#[derive(Debug, Clone, Copy)]
pub struct MaterialParams {
    pub bulk: f64,
    pub shear: f64,
    /// RAMP convexity parameter.
    pub ramp_p: f64,
    /// Residual stiffness scale of fully void material.
    pub e0: f64,
    /// Dimensionless regularization scaling.
    pub kbar_r: f64,
    /// Design value below which material counts as void.
    pub chi_void: f64,
    /// Characteristic length entering the regularization scale.
    pub length: f64,
}

impl MaterialParams {
    /// Absolute weight of the higher-order term, `kbar_r L^2 K_s`.
    pub fn k_r(&self) -> f64 {
        self.kbar_r * self.length * self.length * self.bulk
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !self.bulk.is_finite() || self.bulk <= 0.0 {
            return Err(ModelError::BadMaterial("bulk modulus"));
        }
        if !self.shear.is_finite() || self.shear <= 0.0 {
            return Err(ModelError::BadMaterial("shear modulus"));
        }
        if !self.length.is_finite() || self.length <= 0.0 {
            return Err(ModelError::BadMaterial("characteristic length"));
        }
        if !self.e0.is_finite() || self.e0 < 0.0 {
            return Err(ModelError::BadMaterial("void stiffness contrast"));
        }
        if !self.kbar_r.is_finite() || self.kbar_r < 0.0 {
            return Err(ModelError::BadMaterial("regularization scaling"));
        }
        Ok(())
    }
}

/// How the driven boundary enforces its displacement data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrivenMode {
    /// Displacement prescribed in the mean over the region; nodes move
    /// freely otherwise.
    Average,
    /// Driven components tied to one master DOF (rigid translation of the
    /// region); remaining components fixed to zero.
    MasterTied,
}

#[derive(Debug, Clone)]
pub enum RegionKind {
    Fixed,
    Driven { mode: DrivenMode, comps: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub name: String,
    pub side: Side,
    pub span: [f64; 2],
    pub kind: RegionKind,
}

/// Resolved driven boundary: edges, constrained components, and the
/// assembled coupling vectors `b_c[i] = int_Gamma N_i dGamma` in reduced
/// displacement numbering. One scalar multiplier exists per component.
#[derive(Debug, Clone)]
pub struct Driven {
    pub name: String,
    pub mode: DrivenMode,
    pub comps: Vec<usize>,
    pub edges: Vec<EdgeRef>,
    pub b: Vec<Vec<f64>>,
    /// Total region length.
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub mesh: Mesh,
    pub material: MaterialParams,
    pub table: ShapeTable,
    pub u_space: FieldSpace,
    pub elem_q8: Vec<[usize; 8]>,
    pub elem_q4: Vec<[usize; 4]>,
    /// Reduced DOF targets per element in (node-major, component-minor)
    /// order; avoids map lookups in the assembly loops.
    pub elem_udofs: Vec<[DofTarget; 16]>,
    pub driven: Driven,
}

impl Model {
    pub fn build(
        mesh: Mesh,
        material: MaterialParams,
        regions: &[RegionSpec],
    ) -> Result<Self, ModelError> {
        material.validate()?;
        let driven_specs: Vec<&RegionSpec> = regions
            .iter()
            .filter(|r| matches!(r.kind, RegionKind::Driven { .. }))
            .collect();
        if driven_specs.len() != 1 {
            return Err(ModelError::DrivenRegionCount(driven_specs.len()));
        }
        let driven_spec = driven_specs[0];
        let (mode, comps) = match &driven_spec.kind {
            RegionKind::Driven { mode, comps } => (*mode, comps.clone()),
            RegionKind::Fixed => unreachable!(),
        };
        if comps.is_empty() || comps.iter().any(|&c| c > 1) {
            return Err(ModelError::EmptyComponentMask(driven_spec.name.clone()));
        }

        let mut restrictions = Restrictions::default();
        for region in regions.iter().filter(|r| matches!(r.kind, RegionKind::Fixed)) {
            let edges = mesh.region_edges(&region.name, region.side, region.span)?;
            for edge in edges {
                for node in mesh.edge_nodes(edge) {
                    restrictions.fixed.push((node, 0));
                    restrictions.fixed.push((node, 1));
                }
            }
        }
        restrictions.fixed.sort_unstable();
        restrictions.fixed.dedup();

        let driven_edges = mesh.region_edges(&driven_spec.name, driven_spec.side, driven_spec.span)?;
        if mode == DrivenMode::MasterTied {
            let mut nodes: Vec<usize> = driven_edges
                .iter()
                .flat_map(|&e| mesh.edge_nodes(e))
                .collect();
            nodes.sort_unstable();
            nodes.dedup();
            for comp in 0..2usize {
                if comps.contains(&comp) {
                    restrictions
                        .tied
                        .push(nodes.iter().map(|&n| (n, comp)).collect());
                } else {
                    restrictions
                        .fixed
                        .extend(nodes.iter().map(|&n| (n, comp)));
                }
            }
        }

        let u_space = FieldSpace::new(mesh.n_q8_nodes(), 2, &restrictions)?;
        let table = ShapeTable::new(mesh.hx(), mesh.hy());

        let mut elem_q8 = Vec::with_capacity(mesh.n_elements());
        let mut elem_q4 = Vec::with_capacity(mesh.n_elements());
        let mut elem_udofs = Vec::with_capacity(mesh.n_elements());
        for e in 0..mesh.n_elements() {
            let q8 = mesh.q8_nodes(e);
            let mut dofs = [DofTarget::Fixed; 16];
            for (a, &node) in q8.iter().enumerate() {
                for comp in 0..2 {
                    dofs[2 * a + comp] = u_space.dof(node, comp);
                }
            }
            elem_q8.push(q8);
            elem_q4.push(mesh.q4_nodes(e));
            elem_udofs.push(dofs);
        }

        // Edge coupling vectors: one per constrained component.
        let mut b = vec![vec![0.0; u_space.n_free()]; comps.len()];
        let mut gamma = 0.0;
        for &edge in &driven_edges {
            let nodes = mesh.edge_nodes(edge);
            let shapes = match edge.side {
                Side::Bottom | Side::Top => &table.edge_x,
                Side::Left | Side::Right => &table.edge_y,
            };
            for gp in shapes {
                gamma += gp.weight;
                for (a, &node) in nodes.iter().enumerate() {
                    for (c, &comp) in comps.iter().enumerate() {
                        if let DofTarget::Free(i) = u_space.dof(node, comp) {
                            b[c][i] += gp.weight * gp.n[a];
                        }
                    }
                }
            }
        }

        Ok(Model {
            mesh,
            material,
            table,
            u_space,
            elem_q8,
            elem_q4,
            elem_udofs,
            driven: Driven {
                name: driven_spec.name.clone(),
                mode,
                comps,
                edges: driven_edges,
                b,
                gamma,
            },
        })
    }

    /// Reduced displacement DOF count.
    pub fn n_u(&self) -> usize {
        self.u_space.n_free()
    }

    /// Number of boundary multiplier scalars.
    pub fn n_q(&self) -> usize {
        self.driven.comps.len()
    }

    /// Design DOF count (corner nodes).
    pub fn n_chi(&self) -> usize {
        self.mesh.n_q4_nodes()
    }
}

/// Design field over the mesh: either one value per element (sharp material
/// assignments for benchmark geometries) or one value per corner node
/// (interpolated; the representation the optimizer evolves).
#[derive(Debug, Clone)]
pub enum DesignField {
    Elementwise(Vec<f64>),
    Nodal(Vec<f64>),
}

impl DesignField {
    pub fn validate(&self, model: &Model) -> bool {
        match self {
            DesignField::Elementwise(v) => v.len() == model.mesh.n_elements(),
            DesignField::Nodal(v) => v.len() == model.n_chi(),
        }
    }

    /// Value and spatial gradient at a quadrature point.
    #[inline]
    pub fn at_gp(&self, model: &Model, element: usize, gp: usize) -> (f64, [f64; 2]) {
        match self {
            DesignField::Elementwise(v) => (v[element], [0.0, 0.0]),
            DesignField::Nodal(v) => nodal_at_gp(model, v, element, gp),
        }
    }
}

/// Value and spatial gradient of a corner-node field at a quadrature point.
#[inline]
pub fn nodal_at_gp(model: &Model, values: &[f64], element: usize, gp: usize) -> (f64, [f64; 2]) {
    let shapes = &model.table.gps[gp];
    let nodes = &model.elem_q4[element];
    let mut value = 0.0;
    let mut grad = [0.0, 0.0];
    for a in 0..4 {
        let c = values[nodes[a]];
        value += shapes.n4[a] * c;
        grad[0] += shapes.g4[a][0] * c;
        grad[1] += shapes.g4[a][1] * c;
    }
    (value, grad)
}

/// Integral of `f(chi)` over the domain with the standard rule; used for
/// volume bookkeeping.
pub fn integrate_design<F: Fn(f64) -> f64>(model: &Model, design: &DesignField, f: F) -> f64 {
    let mut acc = 0.0;
    for e in 0..model.mesh.n_elements() {
        for (g, gp) in model.table.gps.iter().enumerate() {
            let (chi, _) = design.at_gp(model, e, g);
            acc += gp.weight * f(chi);
        }
    }
    acc
}
