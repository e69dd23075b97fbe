//! Structured rectangular meshes: serendipity (corner + midside) nodes for
//! displacement fields, corner nodes for the design field, and named
//! boundary regions resolved to element edges.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh must have at least one element per direction, got {0}x{1}")]
    EmptyMesh(usize, usize),
    #[error("mesh extents must be positive, got {0}x{1}")]
    NonPositiveExtent(f64, f64),
    #[error("region '{name}' interval [{lo}, {hi}] is invalid or outside the domain")]
    RegionOutsideDomain { name: String, lo: f64, hi: f64 },
    #[error("region '{name}' does not cover any boundary edge")]
    EmptyRegion { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// One element edge on the domain boundary.
#[derive(Debug, Clone, Copy)]
pub struct EdgeRef {
    pub element: usize,
    pub side: Side,
}

/// Axis-aligned structured mesh of `nx * ny` identical rectangles.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Origin offset; physics must be invariant under it.
    pub x0: f64,
    pub y0: f64,
    /// Serendipity node id per fine-grid point, -1 where no node exists
    /// (odd-odd fine coordinates are element centers).
    fine_ids: Vec<i64>,
    /// Fine-grid coordinates per serendipity node id.
    node_fine: Vec<(u32, u32)>,
    n_serendipity: usize,
}

impl Mesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, MeshError> {
        Self::with_origin(nx, ny, lx, ly, 0.0, 0.0)
    }

    pub fn with_origin(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        x0: f64,
        y0: f64,
    ) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::EmptyMesh(nx, ny));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(MeshError::NonPositiveExtent(lx, ly));
        }
        let fw = 2 * nx + 1;
        let fh = 2 * ny + 1;
        let mut fine_ids = vec![-1i64; fw * fh];
        let mut node_fine = Vec::new();
        let mut next = 0i64;
        for fj in 0..fh {
            for fi in 0..fw {
                if fi % 2 == 1 && fj % 2 == 1 {
                    continue;
                }
                fine_ids[fj * fw + fi] = next;
                node_fine.push((fi as u32, fj as u32));
                next += 1;
            }
        }
        Ok(Mesh {
            nx,
            ny,
            lx,
            ly,
            x0,
            y0,
            fine_ids,
            node_fine,
            n_serendipity: next as usize,
        })
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn element_xy(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    /// Number of serendipity (displacement) nodes.
    pub fn n_q8_nodes(&self) -> usize {
        self.n_serendipity
    }

    /// Number of corner (design) nodes.
    pub fn n_q4_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    fn fine_id(&self, fi: usize, fj: usize) -> usize {
        let id = self.fine_ids[fj * (2 * self.nx + 1) + fi];
        debug_assert!(id >= 0);
        id as usize
    }

    /// Serendipity connectivity in local order: four corners
    /// counterclockwise from the lower-left, then midsides bottom, right,
    /// top, left.
    pub fn q8_nodes(&self, e: usize) -> [usize; 8] {
        let (ex, ey) = self.element_xy(e);
        let (fi, fj) = (2 * ex, 2 * ey);
        [
            self.fine_id(fi, fj),
            self.fine_id(fi + 2, fj),
            self.fine_id(fi + 2, fj + 2),
            self.fine_id(fi, fj + 2),
            self.fine_id(fi + 1, fj),
            self.fine_id(fi + 2, fj + 1),
            self.fine_id(fi + 1, fj + 2),
            self.fine_id(fi, fj + 1),
        ]
    }

    /// Corner connectivity, counterclockwise from the lower-left.
    pub fn q4_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.element_xy(e);
        let w = self.nx + 1;
        [
            ey * w + ex,
            ey * w + ex + 1,
            (ey + 1) * w + ex + 1,
            (ey + 1) * w + ex,
        ]
    }

    pub fn q8_coords(&self, node: usize) -> (f64, f64) {
        let (fi, fj) = self.node_fine[node];
        (
            self.x0 + fi as f64 * self.hx() / 2.0,
            self.y0 + fj as f64 * self.hy() / 2.0,
        )
    }

    pub fn q4_coords(&self, node: usize) -> (f64, f64) {
        let w = self.nx + 1;
        (
            self.x0 + (node % w) as f64 * self.hx(),
            self.y0 + (node / w) as f64 * self.hy(),
        )
    }

    pub fn element_center(&self, e: usize) -> (f64, f64) {
        let (ex, ey) = self.element_xy(e);
        (
            self.x0 + (ex as f64 + 0.5) * self.hx(),
            self.y0 + (ey as f64 + 0.5) * self.hy(),
        )
    }

    /// The three serendipity nodes of an element edge, ordered along the
    /// increasing boundary coordinate: corner, midside, corner.
    pub fn edge_nodes(&self, edge: EdgeRef) -> [usize; 3] {
        let (ex, ey) = self.element_xy(edge.element);
        let (fi, fj) = (2 * ex, 2 * ey);
        match edge.side {
            Side::Bottom => [
                self.fine_id(fi, fj),
                self.fine_id(fi + 1, fj),
                self.fine_id(fi + 2, fj),
            ],
            Side::Top => [
                self.fine_id(fi, fj + 2),
                self.fine_id(fi + 1, fj + 2),
                self.fine_id(fi + 2, fj + 2),
            ],
            Side::Left => [
                self.fine_id(fi, fj),
                self.fine_id(fi, fj + 1),
                self.fine_id(fi, fj + 2),
            ],
            Side::Right => [
                self.fine_id(fi + 2, fj),
                self.fine_id(fi + 2, fj + 1),
                self.fine_id(fi + 2, fj + 2),
            ],
        }
    }

    /// Resolves a coordinate interval on a boundary side to the element
    /// edges fully contained in it (with a small snapping tolerance).
    /// The interval is given in absolute coordinates along the side.
    pub fn region_edges(
        &self,
        name: &str,
        side: Side,
        span: [f64; 2],
    ) -> Result<Vec<EdgeRef>, MeshError> {
        let (axis_lo, axis_len, n_along) = match side {
            Side::Bottom | Side::Top => (self.x0, self.lx, self.nx),
            Side::Left | Side::Right => (self.y0, self.ly, self.ny),
        };
        let tol = 1e-9 * self.lx.max(self.ly);
        let [lo, hi] = span;
        if lo.is_nan() || hi.is_nan() || lo >= hi || lo < axis_lo - tol || hi > axis_lo + axis_len + tol {
            return Err(MeshError::RegionOutsideDomain {
                name: name.to_string(),
                lo,
                hi,
            });
        }
        let h = axis_len / n_along as f64;
        let mut edges = Vec::new();
        for k in 0..n_along {
            let e_lo = axis_lo + k as f64 * h;
            let e_hi = e_lo + h;
            if e_lo >= lo - tol && e_hi <= hi + tol {
                let element = match side {
                    Side::Bottom => k,
                    Side::Top => (self.ny - 1) * self.nx + k,
                    Side::Left => k * self.nx,
                    Side::Right => k * self.nx + self.nx - 1,
                };
                edges.push(EdgeRef { element, side });
            }
        }
        if edges.is_empty() {
            return Err(MeshError::EmptyRegion {
                name: name.to_string(),
            });
        }
        Ok(edges)
    }

    pub fn edge_length(&self, side: Side) -> f64 {
        match side {
            Side::Bottom | Side::Top => self.hx(),
            Side::Left | Side::Right => self.hy(),
        }
    }
}
