//! The vertex reduction `M(l, E)` of the quantum-graph Hamiltonian on a cube.
//!
//! For every edge `e = (a, b)` the operator picks up the hopping term
//! `sqrt(E) / sin(l_e sqrt(E))` between `a` and `b` and the diagonal term
//! `-sqrt(E) cot(l_e sqrt(E))` at both endpoints. `E` is an eigenvalue of the
//! graph Hamiltonian with coupling `alpha` iff `alpha` is an eigenvalue of
//! `M(l, E)`, away from the Dirichlet values `(pi k / l_e)^2`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kp_bands::DeltaSet;
use crate::lattice::Cube;
use crate::linalg::{dense_eigenvalues, SymMatrix};
use crate::special::{cot_term, cot_term_de, dirichlet_gap, hop, hop_de, sinc_len};

/// Default half-width (in energy) of the excluded band around each Dirichlet value.
pub const DELTA_DIR: f64 = 1e-8;

/// Edge lengths indexed like `Cube::edges`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthField {
    values: Vec<f64>,
    l_min: f64,
    l_max: f64,
}

impl LengthField {
    /// `l_min == l_max` is allowed here so that periodic fields can be expressed.
    pub fn new(values: Vec<f64>, l_min: f64, l_max: f64) -> Result<Self> {
        if !(l_min > 0.0 && l_min <= l_max && l_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < l_min <= l_max < inf, got ({l_min}, {l_max})"
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= l_min && **v <= l_max))
        {
            return Err(Error::InvalidParameter(format!(
                "length {v} of edge {k} outside [{l_min}, {l_max}]"
            )));
        }
        Ok(LengthField {
            values,
            l_min,
            l_max,
        })
    }

    pub fn constant(num_edges: usize, l: f64) -> Result<Self> {
        Self::new(vec![l; num_edges], l, l)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.l_min, self.l_max)
    }

    /// Copy with one length replaced; bounds are widened if necessary.
    pub fn with_edge(&self, k: usize, l: f64) -> LengthField {
        let mut out = self.clone();
        out.values[k] = l;
        out.l_min = out.l_min.min(l);
        out.l_max = out.l_max.max(l);
        out
    }

    fn check_cube(&self, cube: &Cube) -> Result<()> {
        if self.values.len() != cube.num_edges() {
            return Err(Error::InvalidParameter(format!(
                "length field has {} entries, cube has {} edges",
                self.values.len(),
                cube.num_edges()
            )));
        }
        Ok(())
    }
}

/// All `(pi k / l_e)^2 <= e_max` with multiplicity, sorted.
pub fn dirichlet_spectrum(lengths: &LengthField, e_max: f64) -> Result<Vec<f64>> {
    if !(e_max > 0.0) {
        return Err(Error::InvalidParameter(format!("E_max = {e_max} must be > 0")));
    }
    let mut out = Vec::new();
    for &l in lengths.values() {
        let mut k = 1.0;
        loop {
            let v = (PI * k / l).powi(2);
            if v > e_max {
                break;
            }
            out.push(v);
            k += 1.0;
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Distance in energy from `e` to the Dirichlet spectrum (infinite for `e <= 0`).
pub fn dirichlet_distance(lengths: &LengthField, e: f64) -> f64 {
    if e <= 0.0 {
        return f64::INFINITY;
    }
    lengths
        .values()
        .iter()
        .map(|&l| dirichlet_gap(e, l))
        .fold(f64::INFINITY, f64::min)
}

/// `M(l, E)` for a validated energy.
#[derive(Debug, Clone)]
pub struct ReducedOperator<'a> {
    pub cube: &'a Cube,
    pub lengths: &'a LengthField,
    pub energy: f64,
    pub matrix: SymMatrix,
    pub dirichlet_distance: f64,
}

impl ReducedOperator<'_> {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Coordinate dump: a `# n n nnz` header followed by `row col value` lines.
    pub fn write_triplets<W: Write>(&self, w: W) -> Result<()> {
        self.matrix.write_triplets(w)
    }
}

/// Assembles `M(l, E)` without any proximity check.
pub fn m_matrix(cube: &Cube, lengths: &LengthField, e: f64) -> SymMatrix {
    let n = cube.num_vertices();
    let mut diag = vec![0.0; n];
    let mut upper = Vec::with_capacity(cube.num_edges());
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let l = lengths.get(k);
        let c = cot_term(e, l);
        diag[a] -= c;
        diag[b] -= c;
        upper.push((a, b, hop(e, l)));
    }
    SymMatrix::from_parts(diag, upper)
}

/// `M(l, E)`, refusing energies within [`DELTA_DIR`] of a Dirichlet value.
pub fn assemble_m<'a>(cube: &'a Cube, lengths: &'a LengthField, e: f64) -> Result<ReducedOperator<'a>> {
    assemble_m_with(cube, lengths, e, DELTA_DIR)
}

pub fn assemble_m_with<'a>(
    cube: &'a Cube,
    lengths: &'a LengthField,
    e: f64,
    delta_dir: f64,
) -> Result<ReducedOperator<'a>> {
    lengths.check_cube(cube)?;
    if !e.is_finite() {
        return Err(Error::InvalidParameter(format!("energy {e} is not finite")));
    }
    let dist = dirichlet_distance(lengths, e);
    if dist <= delta_dir {
        return Err(Error::DirichletProximity {
            energy: e,
            distance: dist,
            threshold: delta_dir,
        });
    }
    Ok(ReducedOperator {
        cube,
        lengths,
        energy: e,
        matrix: m_matrix(cube, lengths, e),
        dirichlet_distance: dist,
    })
}

/// The 2x2 block of `dM/dl_e` on `{ie, te}`: `diag` at both endpoints and `off` between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeBlock {
    pub a: usize,
    pub b: usize,
    pub diag: f64,
    pub off: f64,
}

impl EdgeBlock {
    pub fn min_eigenvalue(&self) -> f64 {
        self.diag - self.off.abs()
    }

    pub fn to_matrix(&self, n: usize) -> SymMatrix {
        let mut d = vec![0.0; n];
        d[self.a] = self.diag;
        d[self.b] = self.diag;
        SymMatrix::from_parts(d, vec![(self.a, self.b, self.off)])
    }
}

/// `h^2` on the diagonal and `-h c` off it, with `h = sqrt(E)/sin(l sqrt E)`
/// and `c = sqrt(E) cot(l sqrt E)`; this is `E / sin^2 (I - cos (P1 - P2))`.
fn edge_block_values(e: f64, l: f64) -> (f64, f64) {
    let h = hop(e, l);
    let c = cot_term(e, l);
    (h * h, -h * c)
}

pub fn dm_dl_block(cube: &Cube, lengths: &LengthField, e: f64, edge: usize) -> Result<EdgeBlock> {
    lengths.check_cube(cube)?;
    if edge >= cube.num_edges() {
        return Err(Error::UnknownEdge);
    }
    let dist = dirichlet_distance(lengths, e);
    if dist <= DELTA_DIR {
        return Err(Error::DirichletProximity {
            energy: e,
            distance: dist,
            threshold: DELTA_DIR,
        });
    }
    let (a, b) = cube.endpoints(edge);
    let (diag, off) = edge_block_values(e, lengths.get(edge));
    Ok(EdgeBlock { a, b, diag, off })
}

/// `dM/dl_e` as a full-size sparse matrix (rank at most 2).
pub fn dm_dl(cube: &Cube, lengths: &LengthField, e: f64, edge: usize) -> Result<SymMatrix> {
    Ok(dm_dl_block(cube, lengths, e, edge)?.to_matrix(cube.num_vertices()))
}

/// `sum_e dM/dl_e`.
pub fn dm_dl_sum(cube: &Cube, lengths: &LengthField, e: f64) -> Result<SymMatrix> {
    lengths.check_cube(cube)?;
    let mut diag = vec![0.0; cube.num_vertices()];
    let mut upper = Vec::with_capacity(cube.num_edges());
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let (d, o) = edge_block_values(e, lengths.get(k));
        diag[a] += d;
        diag[b] += d;
        upper.push((a, b, o));
    }
    Ok(SymMatrix::from_parts(diag, upper))
}

/// Lower bounds on an energy interval free of the forbidden set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBounds {
    pub lo: f64,
    pub hi: f64,
    pub l_min: f64,
    pub l_max: f64,
    /// Lower bound of `1 - |cos(l sqrt E)|`.
    pub c1: f64,
    /// Lower bound of `E / sin^2(l sqrt E)`.
    pub c2: f64,
    pub beta: f64,
    /// Upper bound of `||dM/dE||` on the interval for dimension `d`.
    pub b: f64,
    pub d: usize,
}

const GAP_GRID: usize = 401;

/// Constants `c1`, `c2`, `beta = c1 c2` and `b` on `[lo, hi]`.
pub fn gap_constants(lo: f64, hi: f64, d: usize, l_min: f64, l_max: f64) -> Result<GapBounds> {
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "interval [{lo}, {hi}] must satisfy 0 < lo < hi"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension d must be >= 1".into()));
    }
    let delta = DeltaSet::new(l_min, l_max, hi)?;
    if !delta.interval_is_disjoint(lo, hi) {
        return Err(Error::IntervalMeetsDelta { lo, hi });
    }

    // c1 depends on the phase x = l sqrt(E) only; |d/dx (1 - |cos x|)| <= 1
    let (x_lo, x_hi) = (l_min * lo.sqrt(), l_max * hi.sqrt());
    let nx = 8 * GAP_GRID;
    let hx = (x_hi - x_lo) / (nx - 1) as f64;
    let c1_grid = (0..nx)
        .map(|i| 1.0 - (x_lo + hx * i as f64).cos().abs())
        .fold(f64::INFINITY, f64::min);
    let c1 = c1_grid - 0.5 * hx;

    let he = (hi - lo) / (GAP_GRID - 1) as f64;
    let hl = (l_max - l_min) / (GAP_GRID - 1) as f64;
    // h^2 minus a full cell of its local first-order variation
    let mut c2 = f64::INFINITY;
    let mut dh_max: f64 = 0.0;
    let mut dc_max: f64 = 0.0;
    for i in 0..GAP_GRID {
        let e = lo + he * i as f64;
        for j in 0..GAP_GRID {
            let l = l_min + hl * j as f64;
            let h = hop(e, l);
            let c = cot_term(e, l);
            // d(h^2)/dE = 2 h h_E, d(h^2)/dl = -2 h^2 c
            let de = 2.0 * h * hop_de(e, l);
            let dl = -2.0 * h * h * c;
            c2 = c2.min(h * h - (de.abs() * he + dl.abs() * hl));
            dh_max = dh_max.max(hop_de(e, l).abs());
            dc_max = dc_max.max(cot_term_de(e, l).abs());
        }
    }
    // each row of dM/dE has 2d edges contributing one hop and one diagonal term
    let pad = 1.0 + 2.0 / GAP_GRID as f64;
    let b = 2.0 * d as f64 * (dh_max + dc_max) * pad;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::IntervalMeetsDelta { lo, hi });
    }
    Ok(GapBounds {
        lo,
        hi,
        l_min,
        l_max,
        c1,
        c2,
        beta: c1 * c2,
        b,
        d,
    })
}

/// Result of the negative-energy positivity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeGap {
    pub gamma: f64,
    /// Smallest eigenvalue of `K - gamma id`.
    pub margin: f64,
    /// Largest entry of `F M - M - K`.
    pub factorization_residual: f64,
}

/// `K = sqrt(-E) sum_e tanh(l_e sqrt(-E)) I^e`, a diagonal matrix.
pub fn k_matrix(cube: &Cube, lengths: &LengthField, e: f64) -> Vec<f64> {
    let kappa = (-e).sqrt();
    let mut diag = vec![0.0; cube.num_vertices()];
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let t = kappa * (lengths.get(k) * kappa).tanh();
        diag[a] += t;
        diag[b] += t;
    }
    diag
}

/// Checks `K >= gamma id` with `gamma = sqrt(E-) tanh(l_min sqrt(E-))` and
/// the identity `F M = M + K`, where `F = -sum_e tanh(l_e sqrt(-E)) / sqrt(-E) d/dl_e`.
pub fn negative_gap_check(
    cube: &Cube,
    lengths: &LengthField,
    e: f64,
    e_minus: f64,
    e_plus: f64,
) -> Result<NegativeGap> {
    lengths.check_cube(cube)?;
    if !(e_minus > 0.0 && e_minus < e_plus && -e_plus <= e && e <= -e_minus) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < E- < E+ and -E+ <= E <= -E-, got E = {e}, E- = {e_minus}, E+ = {e_plus}"
        )));
    }
    let (l_min, _) = lengths.bounds();
    let km = e_minus.sqrt();
    let gamma = km * (l_min * km).tanh();
    let kdiag = k_matrix(cube, lengths, e);
    let margin = kdiag.iter().fold(f64::INFINITY, |m, &x| m.min(x)) - gamma;

    let kappa = (-e).sqrt();
    let m = m_matrix(cube, lengths, e);
    let mut fm_diag = vec![0.0; cube.num_vertices()];
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let l = lengths.get(k);
        let w = -(l * kappa).tanh() / kappa;
        let (d, o) = edge_block_values(e, l);
        fm_diag[a] += w * d;
        fm_diag[b] += w * d;
        // off-diagonal entries are touched by this edge only
        let want = hop(e, l);
        residual = residual.max((w * o - want).abs());
        scale = scale.max(want.abs());
    }
    for v in 0..cube.num_vertices() {
        let want = m.diag()[v] + kdiag[v];
        residual = residual.max((fm_diag[v] - want).abs());
        scale = scale.max(m.diag()[v].abs());
    }
    Ok(NegativeGap {
        gamma,
        margin,
        factorization_residual: residual / scale.max(1.0),
    })
}

/// Samples of one edge function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSamples {
    pub edge: usize,
    pub length: f64,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

/// Solution of `-f'' = E f` on every edge with the given vertex values.
pub fn reconstruct_eigenfunction(
    cube: &Cube,
    lengths: &LengthField,
    e: f64,
    vertex_values: &[f64],
    samples_per_edge: usize,
) -> Result<Vec<EdgeSamples>> {
    lengths.check_cube(cube)?;
    if vertex_values.len() != cube.num_vertices() {
        return Err(Error::InvalidParameter(format!(
            "{} vertex values for {} vertices",
            vertex_values.len(),
            cube.num_vertices()
        )));
    }
    if samples_per_edge < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples per edge".into()));
    }
    let dist = dirichlet_distance(lengths, e);
    if dist <= DELTA_DIR {
        return Err(Error::DirichletProximity {
            energy: e,
            distance: dist,
            threshold: DELTA_DIR,
        });
    }
    let mut out = Vec::with_capacity(cube.num_edges());
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let l = lengths.get(k);
        let s_l = sinc_len(e, l);
        let (fa, fb) = (vertex_values[a], vertex_values[b]);
        let m = samples_per_edge - 1;
        let mut t = Vec::with_capacity(samples_per_edge);
        let mut values = Vec::with_capacity(samples_per_edge);
        for i in 0..=m {
            let ti = l * i as f64 / m as f64;
            let v = if i == 0 {
                fa
            } else if i == m {
                fb
            } else {
                (fa * sinc_len(e, l - ti) + fb * sinc_len(e, ti)) / s_l
            };
            t.push(ti);
            values.push(v);
        }
        out.push(EdgeSamples {
            edge: k,
            length: l,
            t,
            values,
        });
    }
    Ok(out)
}

/// Sorted eigenvalues of a dense copy; intended for small operators.
pub fn spectrum_of(op: &ReducedOperator) -> Result<Vec<f64>> {
    dense_eigenvalues(&op.matrix.to_dense())
}
