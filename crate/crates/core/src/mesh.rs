//! Interval and structured-rectangle meshes with piecewise-linear elements.

use crate::error::MeshError;

/// Boundary condition marker attached to each boundary node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// Element connectivity: 2-node segments in 1D, 3-node triangles in 2D.
#[derive(Debug, Clone)]
pub enum Elements {
    Intervals(Vec<[usize; 2]>),
    Triangles(Vec<[usize; 3]>),
}

/// A conforming simplicial mesh.  Nodes are stored as `(x, y)` pairs; 1D
/// meshes keep `y = 0`.  Every boundary node carries exactly one tag.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub coords: Vec<[f64; 2]>,
    pub elements: Elements,
    pub boundary: Vec<(usize, BoundaryTag)>,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elements(&self) -> usize {
        match &self.elements {
            Elements::Intervals(e) => e.len(),
            Elements::Triangles(e) => e.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.elements {
            Elements::Intervals(_) => 1,
            Elements::Triangles(_) => 2,
        }
    }

    /// Indices of nodes tagged Dirichlet, ascending.
    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .boundary
            .iter()
            .filter(|(_, t)| *t == BoundaryTag::Dirichlet)
            .map(|(i, _)| *i)
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Signed length (1D) or area (2D) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        match &self.elements {
            Elements::Intervals(els) => {
                let [a, b] = els[e];
                self.coords[b][0] - self.coords[a][0]
            }
            Elements::Triangles(els) => {
                let [a, b, c] = els[e];
                let (pa, pb, pc) = (self.coords[a], self.coords[b], self.coords[c]);
                0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
            }
        }
    }
}

/// Uniform mesh of `n_elems` segments on `(a, b)`.  Both endpoints are tagged
/// Neumann; models that need constrained ends re-tag or ignore as required.
pub fn build_interval_mesh(a: f64, b: f64, n_elems: usize) -> Result<Mesh, MeshError> {
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(MeshError::BadInterval { a, b });
    }
    if n_elems == 0 {
        return Err(MeshError::NoElements(0));
    }
    let h = (b - a) / n_elems as f64;
    let coords = (0..=n_elems).map(|i| [a + i as f64 * h, 0.0]).collect();
    let elements = Elements::Intervals((0..n_elems).map(|i| [i, i + 1]).collect());
    let boundary = vec![
        (0, BoundaryTag::Neumann),
        (n_elems, BoundaryTag::Neumann),
    ];
    Ok(Mesh {
        coords,
        elements,
        boundary,
    })
}

/// Structured triangulation of `(x0, x1) x (y0, y1)` with `nx * ny` cells,
/// each split into two triangles.  The left (`x = x0`) and bottom (`y = y0`)
/// sides are tagged Dirichlet, the right and top sides Neumann; corners that
/// touch a Dirichlet side are Dirichlet.
pub fn build_rect_mesh(
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<Mesh, MeshError> {
    let (x0, x1) = x_range;
    let (y0, y1) = y_range;
    if !(x1 > x0) {
        return Err(MeshError::BadInterval { a: x0, b: x1 });
    }
    if !(y1 > y0) {
        return Err(MeshError::BadInterval { a: y0, b: y1 });
    }
    if nx == 0 || ny == 0 {
        return Err(MeshError::NoElements(nx.min(ny)));
    }
    let hx = (x1 - x0) / nx as f64;
    let hy = (y1 - y0) / ny as f64;
    let node = |i: usize, j: usize| j * (nx + 1) + i;

    let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push([x0 + i as f64 * hx, y0 + j as f64 * hy]);
        }
    }

    // Counter-clockwise split along the cell diagonal (i,j) -- (i+1,j+1).
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            tris.push([node(i, j), node(i + 1, j), node(i + 1, j + 1)]);
            tris.push([node(i, j), node(i + 1, j + 1), node(i, j + 1)]);
        }
    }

    let mut boundary = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let on_left = i == 0;
            let on_bottom = j == 0;
            let on_right = i == nx;
            let on_top = j == ny;
            if on_left || on_bottom {
                boundary.push((node(i, j), BoundaryTag::Dirichlet));
            } else if on_right || on_top {
                boundary.push((node(i, j), BoundaryTag::Neumann));
            }
        }
    }

    Ok(Mesh {
        coords,
        elements: Elements::Triangles(tris),
        boundary,
    })
}
