//! Piecewise-linear finite element matrices on [`Mesh`].
//!
//! Matrices are assembled dense: every driver in this crate works at desk
//! scale (a few thousand nodes), where dense Cholesky/LU beats the
//! bookkeeping of a sparse stack and keeps the linear algebra in one place.

use nalgebra::DMatrix;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::mesh::{Elements, Mesh};

/// Mass and stiffness matrices for a scalar field on the mesh, unconstrained
/// (boundary conditions are imposed by the model modules, not here).
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub mass: DMatrix<f64>,
    pub stiff: DMatrix<f64>,
}

/// Assemble mass and stiffness with exact element quadrature.
pub fn assemble(mesh: &Mesh) -> FemMatrices {
    let n = mesh.num_nodes();
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    match &mesh.elements {
        Elements::Intervals(els) => {
            for &[a, b] in els {
                let h = mesh.coords[b][0] - mesh.coords[a][0];
                let (ma, mb) = (h / 3.0, h / 6.0);
                mass[(a, a)] += ma;
                mass[(b, b)] += ma;
                mass[(a, b)] += mb;
                mass[(b, a)] += mb;
                let k = 1.0 / h;
                stiff[(a, a)] += k;
                stiff[(b, b)] += k;
                stiff[(a, b)] -= k;
                stiff[(b, a)] -= k;
            }
        }
        Elements::Triangles(els) => {
            for (e, &tri) in els.iter().enumerate() {
                let area = mesh.element_measure(e);
                let grads = p1_gradients(mesh, tri, area);
                for i in 0..3 {
                    for j in 0..3 {
                        let m = if i == j { area / 6.0 } else { area / 12.0 };
                        mass[(tri[i], tri[j])] += m;
                        let k = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                        stiff[(tri[i], tri[j])] += k;
                    }
                }
            }
        }
    }
    FemMatrices { mass, stiff }
}

/// Convection matrix `C[i][j] = \int (v . grad phi_j) phi_i` for a constant
/// velocity `v` (2D meshes).
pub fn assemble_advection(mesh: &Mesh, v: [f64; 2]) -> DMatrix<f64> {
    let n = mesh.num_nodes();
    let mut c = DMatrix::zeros(n, n);
    if let Elements::Triangles(els) = &mesh.elements {
        for (e, &tri) in els.iter().enumerate() {
            let area = mesh.element_measure(e);
            let grads = p1_gradients(mesh, tri, area);
            for j in 0..3 {
                let adv = v[0] * grads[j][0] + v[1] * grads[j][1];
                for i in 0..3 {
                    // \int phi_i dx over the element is area/3 for each hat.
                    c[(tri[i], tri[j])] += adv * area / 3.0;
                }
            }
        }
    }
    c
}

/// Gradients of the three barycentric hats on a triangle.
pub fn p1_gradients(mesh: &Mesh, tri: [usize; 3], area: f64) -> [[f64; 2]; 3] {
    let p = [mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]];
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)];
    }
    g
}

/// Two-point Gauss-Legendre nodes/weights on (0, 1); exact through cubics.
pub const GAUSS_2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

/// Three-point Gauss-Legendre nodes/weights on (0, 1); exact through quintics.
pub const GAUSS_3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 0.277_777_777_777_777_8),
    (0.5, 0.444_444_444_444_444_4),
    (0.887_298_334_620_741_7, 0.277_777_777_777_777_8),
];

/// Write the nonzeros of `m` as `row col value` lines, 17 significant digits.
pub fn write_triplets(path: &Path, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(out, "{} {} {:.16e}", i, j, v)?;
            }
        }
    }
    out.flush()
}

/// Read a triplet file written by [`write_triplets`].
pub fn read_triplets(path: &Path, nrows: usize, ncols: usize) -> std::io::Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(nrows, ncols);
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse_err = |what: &str| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: bad {what}", lineno + 1),
            )
        };
        let i: usize = parts
            .next()
            .ok_or_else(|| parse_err("row"))?
            .parse()
            .map_err(|_| parse_err("row"))?;
        let j: usize = parts
            .next()
            .ok_or_else(|| parse_err("col"))?
            .parse()
            .map_err(|_| parse_err("col"))?;
        let v: f64 = parts
            .next()
            .ok_or_else(|| parse_err("value"))?
            .parse()
            .map_err(|_| parse_err("value"))?;
        if i >= nrows || j >= ncols {
            return Err(parse_err("index"));
        }
        m[(i, j)] = v;
    }
    Ok(m)
}
