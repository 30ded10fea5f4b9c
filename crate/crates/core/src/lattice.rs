//! The Z^d lattice graph and its finite cubes.
//!
//! An edge is the directed pair `(m, m + h_j)`; a cube of radius `n` keeps
//! every edge with at least one endpoint inside the ball `|v| <= n`. Vertices
//! and edges are stored in lexicographic order and indexed densely, so the
//! same `(d, n)` always produces the same numbering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice point of Z^d.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vertex(pub Vec<i64>);

impl Vertex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn origin(d: usize) -> Self {
        Vertex(vec![0; d])
    }

    /// The vertex `self + h_dir` (direction is zero based).
    pub fn step(&self, dir: usize) -> Self {
        let mut c = self.0.clone();
        c[dir] += 1;
        Vertex(c)
    }

    pub fn norm(&self, norm: Norm) -> f64 {
        match norm {
            Norm::Sup => self.0.iter().map(|c| c.abs()).max().unwrap_or(0) as f64,
            Norm::Taxicab => self.0.iter().map(|c| c.abs()).sum::<i64>() as f64,
            Norm::Euclidean => (self.0.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt(),
        }
    }

    /// Graph distance in Z^d (the l1 distance).
    pub fn lattice_distance(&self, other: &Vertex) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).unsigned_abs() as usize)
            .sum()
    }
}

/// Directed lattice edge `(base, base + h_direction)`; `direction` is zero based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub base: Vertex,
    pub direction: usize,
}

impl Edge {
    pub fn initial(&self) -> Vertex {
        self.base.clone()
    }

    pub fn terminal(&self) -> Vertex {
        self.base.step(self.direction)
    }

    pub fn is_incident(&self, v: &Vertex) -> bool {
        self.base == *v || self.terminal() == *v
    }
}

/// Norm used for the cube criterion `|v| <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Norm {
    #[default]
    Sup,
    Taxicab,
    Euclidean,
}

/// Finite edge set of Z^d together with its vertex set and dense indices.
#[derive(Debug, Clone)]
pub struct Cube {
    d: usize,
    n: i64,
    center: Vertex,
    norm: Norm,
    edges: Vec<Edge>,
    vertices: Vec<Vertex>,
    vertex_index: HashMap<Vertex, usize>,
    edge_index: HashMap<Edge, usize>,
    endpoints: Vec<(usize, usize)>,
    incident: Vec<Vec<usize>>,
}

/// Cube `Lambda(n)` around the origin with the sup-norm.
pub fn build_cube(d: usize, n: i64) -> Result<Cube> {
    Cube::new(d, n, Vertex::origin(d.max(1)), Norm::Sup)
}

impl Cube {
    /// Cube of radius `n` around `center` using `norm` for `|v - center| <= n`.
    pub fn new(d: usize, n: i64, center: Vertex, norm: Norm) -> Result<Cube> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension d must be >= 1".into()));
        }
        if n < 0 {
            return Err(Error::InvalidParameter("radius n must be >= 0".into()));
        }
        if center.dim() != d {
            return Err(Error::InvalidParameter(format!(
                "center has dimension {} but d = {d}",
                center.dim()
            )));
        }
        let inside = |v: &Vertex| {
            let rel = Vertex(v.0.iter().zip(&center.0).map(|(a, c)| a - c).collect());
            rel.norm(norm) <= n as f64 + 1e-12
        };

        // Every candidate base lies in the box [c - n - 1, c + n]^d; the box is
        // walked in lexicographic order so edges come out sorted.
        let lo: Vec<i64> = center.0.iter().map(|c| c - n - 1).collect();
        let hi: Vec<i64> = center.0.iter().map(|c| c + n).collect();
        let mut edges = Vec::new();
        let mut cur = lo.clone();
        'outer: loop {
            let base = Vertex(cur.clone());
            let base_in = inside(&base);
            for dir in 0..d {
                let e = Edge {
                    base: base.clone(),
                    direction: dir,
                };
                if base_in || inside(&e.terminal()) {
                    edges.push(e);
                }
            }
            // odometer increment, last coordinate fastest
            let mut k = d;
            loop {
                if k == 0 {
                    break 'outer;
                }
                k -= 1;
                if cur[k] < hi[k] {
                    cur[k] += 1;
                    for (j, item) in cur.iter_mut().enumerate().skip(k + 1) {
                        *item = lo[j];
                    }
                    break;
                }
            }
        }

        let mut vertices: Vec<Vertex> = edges
            .iter()
            .flat_map(|e| [e.initial(), e.terminal()])
            .collect();
        vertices.sort();
        vertices.dedup();
        let vertex_index: HashMap<Vertex, usize> = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        let edge_index: HashMap<Edge, usize> = edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let endpoints: Vec<(usize, usize)> = edges
            .iter()
            .map(|e| (vertex_index[&e.initial()], vertex_index[&e.terminal()]))
            .collect();
        let mut incident = vec![Vec::new(); vertices.len()];
        for (k, &(a, b)) in endpoints.iter().enumerate() {
            incident[a].push(k);
            incident[b].push(k);
        }
        Ok(Cube {
            d,
            n,
            center,
            norm,
            edges,
            vertices,
            vertex_index,
            edge_index,
            endpoints,
            incident,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> i64 {
        self.n
    }

    pub fn center(&self) -> &Vertex {
        &self.center
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_index(&self, v: &Vertex) -> Option<usize> {
        self.vertex_index.get(v).copied()
    }

    pub fn edge_index(&self, e: &Edge) -> Option<usize> {
        self.edge_index.get(e).copied()
    }

    /// `(initial, terminal)` vertex indices of edge `k`.
    pub fn endpoints(&self, k: usize) -> (usize, usize) {
        self.endpoints[k]
    }

    pub fn all_endpoints(&self) -> &[(usize, usize)] {
        &self.endpoints
    }

    /// Indices of the edges incident to vertex index `v`.
    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    /// Number of incident edges of `v` inside the cube.
    pub fn degree(&self, v: &Vertex) -> Result<usize> {
        let i = self
            .vertex_index(v)
            .ok_or_else(|| Error::UnknownVertex(v.0.clone()))?;
        Ok(self.incident[i].len())
    }

    pub fn degree_at(&self, v: usize) -> usize {
        self.incident[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.incident.iter().map(Vec::len).max().unwrap_or(0)
    }
}
