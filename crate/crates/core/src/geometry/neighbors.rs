use super::{AtomicStructure, GeometryError};
use crate::numeric::mat3::{self, Mat3};
use crate::numeric::Scalar;

/// Directed edge `i → j` to the periodic image of `j` displaced by
/// `shift · h` (integer combination of cell rows).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub shift: [i32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pub r_cut: f64,
    pub edges: Vec<Edge>,
    /// `r_ij = r_j + shift·h − r_i`.
    pub vectors: Vec<[f64; 3]>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn shift_vector(h: &Mat3<f64>, s: [i32; 3]) -> [f64; 3] {
    let mut v = [0.0; 3];
    for (k, row) in h.iter().enumerate() {
        for a in 0..3 {
            v[a] += s[k] as f64 * row[a];
        }
    }
    v
}

/// All directed pairs within `r_cut` over periodic images, enumerated
/// shell by shell. Edges are ordered by `(i, j, shift)`. With
/// `max_neighbors`, each center keeps its nearest neighbors, ties broken
/// by neighbor index then shift.
pub fn build_neighbor_list(
    s: &AtomicStructure,
    r_cut: f64,
    max_neighbors: Option<usize>,
) -> Result<NeighborList, GeometryError> {
    if !(r_cut > 0.0) {
        return Err(GeometryError::BadCutoff(r_cut));
    }
    s.validate()?;
    let n = s.n_atoms();
    let mut reach = [0i32; 3];
    let h = s.cell.unwrap_or([[0.0; 3]; 3]);
    if s.is_periodic() {
        let vol = mat3::det(&h).abs();
        let inv = invert(&h);
        // spread of fractional coordinates, so unwrapped inputs are covered
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &s.positions {
            for k in 0..3 {
                let f = p[0] * inv[0][k] + p[1] * inv[1][k] + p[2] * inv[2][k];
                lo[k] = lo[k].min(f);
                hi[k] = hi[k].max(f);
            }
        }
        for k in 0..3 {
            if s.pbc[k] {
                let c = cross(&h[(k + 1) % 3], &h[(k + 2) % 3]);
                let width = vol / norm(&c);
                reach[k] = (r_cut / width + (hi[k] - lo[k])).ceil() as i32;
            }
        }
    }
    let mut per_center: Vec<Vec<(f64, Edge, [f64; 3])>> = vec![Vec::new(); n];
    for (i, pi) in s.positions.iter().enumerate() {
        for a in -reach[0]..=reach[0] {
            for b in -reach[1]..=reach[1] {
                for c in -reach[2]..=reach[2] {
                    let shift = [a, b, c];
                    let off = shift_vector(&h, shift);
                    for (j, pj) in s.positions.iter().enumerate() {
                        if i == j && shift == [0, 0, 0] {
                            continue;
                        }
                        let v = [
                            pj[0] + off[0] - pi[0],
                            pj[1] + off[1] - pi[1],
                            pj[2] + off[2] - pi[2],
                        ];
                        let d = norm(&v);
                        if d <= r_cut {
                            if d == 0.0 {
                                return Err(GeometryError::DegenerateEdge(i, j));
                            }
                            per_center[i].push((d, Edge { i, j, shift }, v));
                        }
                    }
                }
            }
        }
    }
    let mut nl = NeighborList {
        r_cut,
        edges: Vec::new(),
        vectors: Vec::new(),
        distances: Vec::new(),
    };
    for mut list in per_center {
        if let Some(k) = max_neighbors {
            list.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            list.truncate(k);
        }
        list.sort_by(|x, y| x.1.cmp(&y.1));
        for (d, e, v) in list {
            nl.edges.push(e);
            nl.vectors.push(v);
            nl.distances.push(d);
        }
    }
    Ok(nl)
}

fn invert(h: &Mat3<f64>) -> Mat3<f64> {
    let d = mat3::det(h);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
            let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (h[i1][j1] * h[i2][j2] - h[i1][j2] * h[i2][j1]) / d;
        }
    }
    inv
}

/// Unit vectors and lengths of every edge, recomputed from positions.
pub fn edge_vectors(
    s: &AtomicStructure,
    nl: &NeighborList,
) -> Result<Vec<([f64; 3], f64)>, GeometryError> {
    edge_geometry(&s.positions, s.cell.as_ref(), nl)
}

/// Differentiable edge geometry: `r_ij = r_j + shift·h − r_i`, returned as
/// `(r̂_ij, |r_ij|)`. Positions and cell may be tape variables, so forces
/// and cell gradients flow through here.
pub fn edge_geometry<S: Scalar>(
    positions: &[[S; 3]],
    cell: Option<&Mat3<S>>,
    nl: &NeighborList,
) -> Result<Vec<([S; 3], S)>, GeometryError> {
    let mut out = Vec::with_capacity(nl.len());
    for e in &nl.edges {
        let (pi, pj) = (positions[e.i], positions[e.j]);
        let mut v = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
        if e.shift != [0, 0, 0] {
            let h = cell.ok_or(GeometryError::BadCell(0.0))?;
            for k in 0..3 {
                if e.shift[k] != 0 {
                    let s = S::cst(e.shift[k] as f64);
                    for a in 0..3 {
                        v[a] += s * h[k][a];
                    }
                }
            }
        }
        let d = S::dot(&v, &v).sqrt();
        if !(d.val() > 0.0) {
            return Err(GeometryError::DegenerateEdge(e.i, e.j));
        }
        let inv = d.recip();
        out.push(([v[0] * inv, v[1] * inv, v[2] * inv], d));
    }
    Ok(out)
}
