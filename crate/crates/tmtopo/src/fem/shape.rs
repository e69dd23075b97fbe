//! Reference-element shape functions and quadrature for the two element
//! types in use: 8-node serendipity quadrilaterals for displacement-like
//! fields and bilinear quadrilaterals for the design field. Meshes are
//! axis-aligned rectangles, so the geometric map is bilinear with a constant
//! diagonal Jacobian and physical derivatives follow by scaling; in
//! particular the second-derivative chain rule is exact.

/// Corner sign pairs in counterclockwise local order.
const CORNER: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Midside reference positions in local order 4..8: bottom, right, top, left.
const MIDSIDE: [(f64, f64); 4] = [(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)];

/// Values, gradients `(d/dxi, d/deta)` and second derivatives
/// `(d2/dxi2, d2/dxideta, d2/deta2)` of the 8 serendipity functions.
pub fn q8_shape(xi: f64, eta: f64) -> ([f64; 8], [[f64; 2]; 8], [[f64; 3]; 8]) {
    let mut n = [0.0; 8];
    let mut g = [[0.0; 2]; 8];
    let mut h = [[0.0; 3]; 8];
    for (a, &(sx, sy)) in CORNER.iter().enumerate() {
        let px = 1.0 + sx * xi;
        let py = 1.0 + sy * eta;
        n[a] = 0.25 * px * py * (sx * xi + sy * eta - 1.0);
        g[a][0] = 0.25 * sx * py * (2.0 * sx * xi + sy * eta);
        g[a][1] = 0.25 * sy * px * (2.0 * sy * eta + sx * xi);
        h[a][0] = 0.5 * py;
        h[a][1] = 0.25 * sx * sy * (2.0 * sx * xi + 2.0 * sy * eta + 1.0);
        h[a][2] = 0.5 * px;
    }
    for (m, &(sx, sy)) in MIDSIDE.iter().enumerate() {
        let a = 4 + m;
        if sx == 0.0 {
            let py = 1.0 + sy * eta;
            n[a] = 0.5 * (1.0 - xi * xi) * py;
            g[a][0] = -xi * py;
            g[a][1] = 0.5 * sy * (1.0 - xi * xi);
            h[a][0] = -py;
            h[a][1] = -xi * sy;
            h[a][2] = 0.0;
        } else {
            let px = 1.0 + sx * xi;
            n[a] = 0.5 * px * (1.0 - eta * eta);
            g[a][0] = 0.5 * sx * (1.0 - eta * eta);
            g[a][1] = -eta * px;
            h[a][0] = 0.0;
            h[a][1] = -eta * sx;
            h[a][2] = -px;
        }
    }
    (n, g, h)
}

/// Values and gradients of the 4 bilinear functions.
pub fn q4_shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let mut n = [0.0; 4];
    let mut g = [[0.0; 2]; 4];
    for (a, &(sx, sy)) in CORNER.iter().enumerate() {
        n[a] = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta);
        g[a][0] = 0.25 * sx * (1.0 + sy * eta);
        g[a][1] = 0.25 * sy * (1.0 + sx * xi);
    }
    (n, g)
}

/// Three-point Gauss rule on [-1, 1], exact through degree 5.
pub const GAUSS_1D: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Per-Gauss-point shape data in physical coordinates for one (identical)
/// element of a structured mesh.
#[derive(Debug, Clone)]
pub struct GpShapes {
    /// Quadrature weight times the geometric Jacobian determinant.
    pub weight: f64,
    pub n8: [f64; 8],
    /// Physical gradients (d/dX1, d/dX2).
    pub g8: [[f64; 2]; 8],
    /// Physical second derivatives (d2/dX1dX1, d2/dX1dX2, d2/dX2dX2).
    pub h8: [[f64; 3]; 8],
    pub n4: [f64; 4],
    pub g4: [[f64; 2]; 4],
    /// Reference coordinates, used to locate the point inside an element.
    pub xi: f64,
    pub eta: f64,
}

/// Quadratic trace of the serendipity element along one edge, evaluated at
/// the edge quadrature points. Node order along the edge: corner, midside,
/// corner, in the direction of increasing coordinate.
#[derive(Debug, Clone)]
pub struct EdgeShapes {
    /// Quadrature weight times the edge Jacobian (half the edge length).
    pub weight: f64,
    pub n: [f64; 3],
}

/// All domain and edge quadrature data for the uniform element size
/// `(hx, hy)`. The 3x3 domain rule integrates every weak-form term here
/// exactly enough that no element-level locking treatment is needed.
#[derive(Debug, Clone)]
pub struct ShapeTable {
    pub gps: Vec<GpShapes>,
    pub edge_x: Vec<EdgeShapes>,
    pub edge_y: Vec<EdgeShapes>,
}

impl ShapeTable {
    pub fn new(hx: f64, hy: f64) -> Self {
        let ax = 2.0 / hx;
        let ay = 2.0 / hy;
        let det = hx * hy / 4.0;
        let mut gps = Vec::with_capacity(9);
        for &(eta, wy) in GAUSS_1D.iter() {
            for &(xi, wx) in GAUSS_1D.iter() {
                let (n8, gr, hr) = q8_shape(xi, eta);
                let mut g8 = [[0.0; 2]; 8];
                let mut h8 = [[0.0; 3]; 8];
                for a in 0..8 {
                    g8[a][0] = ax * gr[a][0];
                    g8[a][1] = ay * gr[a][1];
                    h8[a][0] = ax * ax * hr[a][0];
                    h8[a][1] = ax * ay * hr[a][1];
                    h8[a][2] = ay * ay * hr[a][2];
                }
                let (n4r, g4r) = q4_shape(xi, eta);
                let mut g4 = [[0.0; 2]; 4];
                for a in 0..4 {
                    g4[a][0] = ax * g4r[a][0];
                    g4[a][1] = ay * g4r[a][1];
                }
                gps.push(GpShapes {
                    weight: wx * wy * det,
                    n8,
                    g8,
                    h8,
                    n4: n4r,
                    g4,
                    xi,
                    eta,
                });
            }
        }
        let edge = |h: f64| -> Vec<EdgeShapes> {
            GAUSS_1D
                .iter()
                .map(|&(t, w)| EdgeShapes {
                    weight: w * h / 2.0,
                    n: [0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)],
                })
                .collect()
        };
        ShapeTable {
            gps,
            edge_x: edge(hx),
            edge_y: edge(hy),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn q8_partition_of_unity(xi in -1.0..1.0f64, eta in -1.0..1.0f64) {
            let (n, g, h) = q8_shape(xi, eta);
            let sum: f64 = n.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for d in 0..2 {
                let gs: f64 = g.iter().map(|v| v[d]).sum();
                prop_assert!(gs.abs() < 1e-12);
            }
            for d in 0..3 {
                let hs: f64 = h.iter().map(|v| v[d]).sum();
                prop_assert!(hs.abs() < 1e-12);
            }
        }

        #[test]
        fn q4_partition_of_unity(xi in -1.0..1.0f64, eta in -1.0..1.0f64) {
            let (n, g) = q4_shape(xi, eta);
            prop_assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for d in 0..2 {
                prop_assert!(g.iter().map(|v| v[d]).sum::<f64>().abs() < 1e-12);
            }
        }

        #[test]
        fn q8_reproduces_bilinear(xi in -1.0..1.0f64, eta in -1.0..1.0f64) {
            // Nodal interpolation of f = xi * eta is exact for serendipity.
            let coords: [(f64, f64); 8] = [
                (-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0),
                (0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0),
            ];
            let (n, _, _) = q8_shape(xi, eta);
            let val: f64 = (0..8).map(|a| n[a] * coords[a].0 * coords[a].1).sum();
            prop_assert!((val - xi * eta).abs() < 1e-12);
        }
    }

    #[test]
    fn q8_derivatives_match_differences() {
        let d = 1e-6;
        for &(xi, eta) in &[(0.3, -0.7), (-0.9, 0.2), (0.0, 0.0), (0.64, 0.64)] {
            let (_, g, h) = q8_shape(xi, eta);
            let (np, _, _) = q8_shape(xi + d, eta);
            let (nm, _, _) = q8_shape(xi - d, eta);
            let (_, gp, _) = q8_shape(xi, eta + d);
            let (_, gm, _) = q8_shape(xi, eta - d);
            for a in 0..8 {
                assert_abs_diff_eq!(g[a][0], (np[a] - nm[a]) / (2.0 * d), epsilon = 1e-9);
                assert_abs_diff_eq!(h[a][1], (gp[a][0] - gm[a][0]) / (2.0 * d), epsilon = 1e-9);
                assert_abs_diff_eq!(h[a][2], (gp[a][1] - gm[a][1]) / (2.0 * d), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn quadrature_integrates_quintics_on_edge() {
        // int_{-1}^{1} t^5 + t^4 dt = 2/5.
        let val: f64 = GAUSS_1D
            .iter()
            .map(|&(t, w)| w * (t.powi(5) + t.powi(4)))
            .sum();
        assert_abs_diff_eq!(val, 0.4, epsilon = 1e-14);
    }

    #[test]
    fn table_weights_sum_to_element_area() {
        let table = ShapeTable::new(0.25, 0.5);
        let area: f64 = table.gps.iter().map(|gp| gp.weight).sum();
        assert_abs_diff_eq!(area, 0.125, epsilon = 1e-14);
        let lx: f64 = table.edge_x.iter().map(|e| e.weight).sum();
        assert_abs_diff_eq!(lx, 0.25, epsilon = 1e-14);
        let ly: f64 = table.edge_y.iter().map(|e| e.weight).sum();
        assert_abs_diff_eq!(ly, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn physical_second_derivatives_scale_correctly() {
        // On a 2x1 element the function x^2 (x in [0,2]) equals (1+xi)^2,
        // interpolated exactly; its physical second derivative is 2.
        let table = ShapeTable::new(2.0, 1.0);
        let nodal_x2: [f64; 8] = [0.0, 4.0, 4.0, 0.0, 1.0, 4.0, 1.0, 0.0];
        for gp in &table.gps {
            let val: f64 = (0..8).map(|a| gp.h8[a][0] * nodal_x2[a]).sum();
            assert_abs_diff_eq!(val, 2.0, epsilon = 1e-12);
            let cross: f64 = (0..8).map(|a| gp.h8[a][1] * nodal_x2[a]).sum();
            assert_abs_diff_eq!(cross, 0.0, epsilon = 1e-12);
        }
    }
}
