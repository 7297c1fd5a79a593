//! Structured triangulations of the unit square and the barycentric dual split.
//!
//! Every triangle `τ` with vertices `x, y, z` is cut by the segments joining
//! its barycenter to the three edge midpoints into quadrilaterals `t_x, t_y,
//! t_z`. The quadrilateral `t_ξ` is the part of the control volume `C^ξ` that
//! lies inside `τ`; control volumes are never stitched into global polygons.

use std::io::{self, BufRead, Write};

use crate::geometry::{polygon_signed_area, Point, Triangle, Vec2};
use crate::{Error, Result};

const BOUNDARY_EPS: f64 = 1e-14;

/// Conforming triangulation with counter-clockwise elements.
#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    vertex_to_elements: Vec<Vec<usize>>,
}

impl TriMesh {
    /// Uniform `n x n` grid of squares, each cut along its lower-left to
    /// upper-right diagonal.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidResolution(n));
        }
        let stride = n + 1;
        let inv = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Vec2::new(i as f64 * inv, j as f64 * inv));
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * stride + i;
                let v10 = v00 + 1;
                let v01 = v00 + stride;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_parts(vertices, triangles)
    }

    /// Builds a mesh of the unit square from explicit data. Boundary vertices
    /// are those with a coordinate equal to 0 or 1.
    pub fn from_parts(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        let mut vertex_to_elements = vec![Vec::new(); nv];
        for (e, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(Error::VertexOutOfRange { index: v, count: nv });
                }
                vertex_to_elements[v].push(e);
            }
            let area = Triangle::new(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]).signed_area();
            if area <= 0.0 {
                return Err(Error::DegenerateTriangle { area });
            }
        }
        let on_edge = |c: f64| c.abs() < BOUNDARY_EPS || (c - 1.0).abs() < BOUNDARY_EPS;
        let boundary = vertices.iter().map(|p| on_edge(p.x) || on_edge(p.y)).collect();
        Ok(Self {
            vertices,
            triangles,
            boundary,
            vertex_to_elements,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, z: usize) -> bool {
        self.boundary[z]
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vertices()).filter(|&z| self.boundary[z])
    }

    pub fn interior_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vertices()).filter(|&z| !self.boundary[z])
    }

    /// Elements sharing vertex `z` (the support `Ω^z` of its hat function).
    pub fn vertex_elements(&self, z: usize) -> &[usize] {
        &self.vertex_to_elements[z]
    }

    /// Position of global vertex `z` within element `e`, if it is one of its vertices.
    pub fn local_index(&self, e: usize, z: usize) -> Option<usize> {
        self.triangles[e].iter().position(|&v| v == z)
    }

    pub fn triangle(&self, e: usize) -> Triangle {
        let [a, b, c] = self.triangles[e];
        Triangle::new(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    /// Largest element diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_elements())
            .map(|e| self.triangle(e).diameter())
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.triangle(e).area()).sum()
    }

    pub fn check_element(&self, e: usize) -> Result<()> {
        if e >= self.num_elements() {
            return Err(Error::ElementOutOfRange {
                index: e,
                count: self.num_elements(),
            });
        }
        Ok(())
    }

    /// Barycentric split of element `e`.
    pub fn split_element(&self, e: usize) -> Result<ElementSplit> {
        self.check_element(e)?;
        Ok(ElementSplit::new(e, &self.triangle(e)))
    }

    /// Dual-mesh segments of `∂C^z`, each with its normal pointing out of `C^z`.
    /// For boundary vertices the returned pieces are closed by `∂Ω`.
    pub fn control_volume_boundary(&self, z: usize) -> Vec<Segment> {
        self.vertex_elements(z)
            .iter()
            .flat_map(|&e| {
                let split = ElementSplit::new(e, &self.triangle(e));
                let xi = self.local_index(e, z).expect("adjacency is consistent");
                split.cv_segments[xi]
            })
            .collect()
    }

    pub fn control_volume_area(&self, z: usize) -> f64 {
        self.vertex_elements(z)
            .iter()
            .map(|&e| {
                let split = ElementSplit::new(e, &self.triangle(e));
                let xi = self.local_index(e, z).expect("adjacency is consistent");
                split.quad_area(xi)
            })
            .sum()
    }

    /// Plain-text dump: `v x y` per vertex then `t i j k` per triangle.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for p in &self.vertices {
            writeln!(w, "v {:.17e} {:.17e}", p.x, p.y)?;
        }
        for t in &self.triangles {
            writeln!(w, "t {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: &str| Error::InvalidConfig(format!("malformed mesh line: {line}"));
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for line in r.lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut c = it.map(|s| s.parse::<f64>());
                    match (c.next(), c.next()) {
                        (Some(Ok(x)), Some(Ok(y))) => vertices.push(Vec2::new(x, y)),
                        _ => return Err(bad(&line)),
                    }
                }
                Some("t") => {
                    let ids: Vec<usize> = it.map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad(&line))?;
                    if ids.len() != 3 {
                        return Err(bad(&line));
                    }
                    triangles.push([ids[0], ids[1], ids[2]]);
                }
                None => {}
                Some(_) => return Err(bad(&line)),
            }
        }
        Self::from_parts(vertices, triangles)
    }
}

/// Free-function form of [`TriMesh::uniform`].
pub fn build_uniform_mesh(n: usize) -> Result<TriMesh> {
    TriMesh::uniform(n)
}

/// Directed segment with a unit normal. Barycentric coordinates of the end
/// points (relative to the owning element) let P1 traces be evaluated exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    pub normal: Vec2,
    pub bary_start: [f64; 3],
    pub bary_end: [f64; 3],
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn point_at(&self, t: f64) -> Point {
        self.start + (self.end - self.start) * t
    }

    pub fn bary_at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|i| (1.0 - t) * self.bary_start[i] + t * self.bary_end[i])
    }

    fn flipped_normal(mut self) -> Self {
        self.normal = -self.normal;
        self
    }
}

/// Sub-triangle of an element with the barycentric coordinates (relative to
/// the element) of its corners.
#[derive(Clone, Copy, Debug)]
pub struct SubTriangle {
    pub triangle: Triangle,
    pub bary: [[f64; 3]; 3],
}

impl SubTriangle {
    pub fn bary_at(&self, local: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (0..3).map(|j| local[j] * self.bary[j][i]).sum())
    }
}

/// Barycenter/midpoint decomposition of one element.
///
/// Local vertex `ξ` owns the quadrilateral `(p_ξ, m_{ξ,ξ+1}, c, m_{ξ-1,ξ})`.
/// `edge_midpoints[i]` is the midpoint of the edge from local vertex `i` to
/// `i + 1`. Dual segments always run midpoint to barycenter so the two
/// quadrilaterals sharing one see the same quadrature points with opposite
/// normals.
#[derive(Clone, Copy, Debug)]
pub struct ElementSplit {
    pub element: usize,
    pub barycenter: Point,
    pub edge_midpoints: [Point; 3],
    pub quads: [[Point; 4]; 3],
    pub cv_segments: [[Segment; 2]; 3],
    pub boundary_segments: [[Segment; 2]; 3],
    vertices: [Point; 3],
}

const THIRD: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

fn unit(i: usize) -> [f64; 3] {
    let mut b = [0.0; 3];
    b[i] = 1.0;
    b
}

fn half(i: usize, j: usize) -> [f64; 3] {
    let mut b = [0.0; 3];
    b[i] = 0.5;
    b[j] = 0.5;
    b
}

impl ElementSplit {
    pub fn new(element: usize, tri: &Triangle) -> Self {
        let p = tri.vertices;
        let c = tri.barycenter();
        let m: [Point; 3] = std::array::from_fn(|i| p[i].midpoint(p[(i + 1) % 3]));

        // Dual segment i joins m[i] to c; t_i lies on its left, t_{i+1} on
        // its right, so the right-hand normal points out of t_i.
        let dual: [Segment; 3] = std::array::from_fn(|i| Segment {
            start: m[i],
            end: c,
            normal: unit_normal(m[i], c),
            bary_start: half(i, (i + 1) % 3),
            bary_end: THIRD,
        });

        let quads = std::array::from_fn(|i| [p[i], m[i], c, m[(i + 2) % 3]]);
        let cv_segments = std::array::from_fn(|i| [dual[i], dual[(i + 2) % 3].flipped_normal()]);
        let boundary_segments = std::array::from_fn(|i| {
            let prev = (i + 2) % 3;
            [
                Segment {
                    start: p[i],
                    end: m[i],
                    normal: unit_normal(p[i], m[i]),
                    bary_start: unit(i),
                    bary_end: half(i, (i + 1) % 3),
                },
                Segment {
                    start: p[i],
                    end: m[prev],
                    normal: unit_normal(m[prev], p[i]),
                    bary_start: unit(i),
                    bary_end: half(prev, i),
                },
            ]
        });

        Self {
            element,
            barycenter: c,
            edge_midpoints: m,
            quads,
            cv_segments,
            boundary_segments,
            vertices: p,
        }
    }

    pub fn quad_area(&self, xi: usize) -> f64 {
        polygon_signed_area(&self.quads[xi])
    }

    /// The quadrilateral `t_ξ` as two sub-triangles sharing the diagonal `p_ξ c`.
    pub fn quad_subtriangles(&self, xi: usize) -> [SubTriangle; 2] {
        let next = (xi + 1) % 3;
        let prev = (xi + 2) % 3;
        let p = self.vertices[xi];
        let c = self.barycenter;
        [
            SubTriangle {
                triangle: Triangle::new(p, self.edge_midpoints[xi], c),
                bary: [unit(xi), half(xi, next), THIRD],
            },
            SubTriangle {
                triangle: Triangle::new(p, c, self.edge_midpoints[prev]),
                bary: [unit(xi), THIRD, half(prev, xi)],
            },
        ]
    }

    /// All six sub-triangles, grouped by owning quadrilateral.
    pub fn subtriangles(&self) -> [SubTriangle; 6] {
        let [a, b] = self.quad_subtriangles(0);
        let [c, d] = self.quad_subtriangles(1);
        let [e, f] = self.quad_subtriangles(2);
        [a, b, c, d, e, f]
    }
}

/// Right-hand unit normal of the directed segment `a -> b`.
fn unit_normal(a: Point, b: Point) -> Vec2 {
    let d = b - a;
    d.perp_right() * (1.0 / d.norm())
}
