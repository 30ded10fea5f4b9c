//! Eigenvalues of the cube Hamiltonian `H(l, alpha)`.
//!
//! `spectrum_h` works on the vertex reduction: away from the Dirichlet values
//! the number of eigenvalues of `H` below `E` equals the number of
//! eigenvalues of `M(E)` above `alpha` plus the number of Dirichlet values
//! below `E`. Both counts are integers obtained from Sylvester inertia, so
//! eigenvalues are located by bisection on a counting function and their
//! multiplicity is the size of the jump.
//!
//! `fd_oracle_spectrum` is an independent second-order discretisation of the
//! same operator on the metric graph.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, Table};
use crate::lattice::{Cube, Vertex};
use crate::linalg::{dense_eigh, dense_eigenvalues, jacobi_eigenvalues, SymMatrix};
use crate::special::{cot_term, hop};
use crate::reduction::{dirichlet_distance, dirichlet_spectrum, m_matrix, LengthField, ReducedOperator, DELTA_DIR};

pub const TOL_E: f64 = 1e-9;
pub const TOL_EIG: f64 = 1e-6;
/// Smallest grid step before a non-monotone count is reported as an error.
pub const MIN_STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Reduction,
    FdOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub energy: f64,
    pub multiplicity: usize,
    /// Reduction: ascending index of the branch `mu_j(E)` that crosses `alpha`.
    /// Oracle: index of the eigenvalue in the full discrete spectrum.
    pub branch_id: usize,
    /// Reduction: distance from `alpha` to the `multiplicity`-th nearest
    /// eigenvalue of `M(E)`. Oracle: Richardson error estimate.
    pub residual: f64,
}

/// A Dirichlet guard band left out of the reduction solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcludedInterval {
    pub lo: f64,
    pub hi: f64,
    /// Dirichlet values (with multiplicity) inside.
    pub dirichlet_values: usize,
    /// Eigenvalues of `H` inside, from the counts at both ends.
    pub hidden_eigenvalues: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub panels: usize,
    pub grid_points: usize,
    pub count_evaluations: usize,
    pub refinements: usize,
    pub fd_points_per_edge: Option<usize>,
    pub richardson: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub window: (f64, f64),
    pub alpha: f64,
    pub eigenvalues: Vec<Eigenvalue>,
    pub excluded_intervals: Vec<ExcludedInterval>,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl SpectrumResult {
    /// Energies repeated according to multiplicity.
    pub fn energies(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.energy, e.multiplicity))
            .collect()
    }

    pub fn total_count(&self) -> usize {
        self.eigenvalues.iter().map(|e| e.multiplicity).sum()
    }

    pub fn is_excluded(&self, e: f64) -> bool {
        self.excluded_intervals
            .iter()
            .any(|x| x.lo <= e && e <= x.hi)
    }

    pub fn excluded_length(&self) -> f64 {
        self.excluded_intervals.iter().map(|x| x.hi - x.lo).sum()
    }

    /// Columns `E,multiplicity,branch_id,residual`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["E", "multiplicity", "branch_id", "residual"]);
        for e in &self.eigenvalues {
            t.push(vec![
                fmt_f64(e.energy),
                e.multiplicity.to_string(),
                e.branch_id.to_string(),
                fmt_f64(e.residual),
            ]);
        }
        t
    }
}

/// Eigenvalues of `M(E)` in ascending order, optionally with eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct MEigen {
    pub values: Vec<f64>,
    pub vectors: Option<DMatrix<f64>>,
}

pub fn eigs_m(op: &ReducedOperator, with_vectors: bool) -> Result<MEigen> {
    let dense = op.matrix.to_dense();
    if with_vectors {
        let (values, vectors) = dense_eigh(&dense)?;
        Ok(MEigen {
            values,
            vectors: Some(vectors),
        })
    } else {
        Ok(MEigen {
            values: dense_eigenvalues(&dense)?,
            vectors: None,
        })
    }
}

/// Same spectrum through cyclic Jacobi rotations, used as a cross-check.
pub fn eigs_m_jacobi(op: &ReducedOperator) -> Result<Vec<f64>> {
    jacobi_eigenvalues(&op.matrix.to_dense())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub tol_e: f64,
    pub tol_eig: f64,
    pub delta_dir: f64,
    pub points_per_eigenvalue: usize,
    pub min_step: f64,
    pub parallel: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            tol_e: TOL_E,
            tol_eig: TOL_EIG,
            delta_dir: DELTA_DIR,
            points_per_eigenvalue: 16,
            min_step: MIN_STEP,
            parallel: true,
        }
    }
}

/// Number of Dirichlet values strictly below `e`.
fn dirichlet_count(lengths: &LengthField, e: f64) -> usize {
    if e <= 0.0 {
        return 0;
    }
    let s = e.sqrt() / std::f64::consts::PI;
    lengths
        .values()
        .iter()
        .map(|&l| {
            let k = (s * l).floor();
            // guard the rounding of sqrt at an exact Dirichlet value
            let k = if k >= 1.0 && (std::f64::consts::PI * k / l).powi(2) >= e {
                k - 1.0
            } else {
                k
            };
            k as usize
        })
        .sum()
}

/// Number of eigenvalues of `M(E)` above `alpha`.
fn up_count(cube: &Cube, lengths: &LengthField, alpha: f64, e: f64) -> usize {
    let m = SplitM::new(cube, lengths, e);
    m.n - m.count_below(alpha)
}

/// Phase `|sin(l sqrt E)|` below which an edge is treated as resonant.
const RESONANT_SIN: f64 = 1e-2;

/// `M(E)` prepared for inertia counts.
///
/// Each edge contributes `t P+ + g P-` with `t = sqrt(E) tan(x/2)`,
/// `g = -sqrt(E) cot(x/2)`, `x = l sqrt E` and `P+-` the projections onto
/// `(d_a +- d_b)/sqrt 2`. Close to a Dirichlet value one coefficient blows up;
/// that rank-one term `gamma u u^T` is kept out of the matrix and enters
/// through the bordered matrix `[[R - s, U], [U^T, -1/gamma]]`, whose inertia
/// exceeds that of `M - s` by the number of positive `gamma`.
pub struct SplitM {
    pub n: usize,
    diag: Vec<f64>,
    upper: Vec<(usize, usize, f64)>,
    /// `(a, b, sign of d_b in u, gamma)`
    resonant: Vec<(usize, usize, f64, f64)>,
}

impl SplitM {
    pub fn new(cube: &Cube, lengths: &LengthField, e: f64) -> Self {
        let n = cube.num_vertices();
        let mut diag = vec![0.0; n];
        let mut upper = Vec::with_capacity(cube.num_edges());
        let mut resonant = Vec::new();
        let k = if e > 0.0 { e.sqrt() } else { 0.0 };
        for (idx, &(a, b)) in cube.all_endpoints().iter().enumerate() {
            let l = lengths.get(idx);
            if e > 0.0 {
                let x = l * k;
                if x.sin().abs() < RESONANT_SIN {
                    let half = 0.5 * x;
                    let t = k * half.tan();
                    let g = -k / half.tan();
                    if x.cos() > 0.0 {
                        diag[a] += 0.5 * t;
                        diag[b] += 0.5 * t;
                        upper.push((a, b, 0.5 * t));
                        resonant.push((a, b, -1.0, 0.5 * g));
                    } else {
                        diag[a] += 0.5 * g;
                        diag[b] += 0.5 * g;
                        upper.push((a, b, -0.5 * g));
                        resonant.push((a, b, 1.0, 0.5 * t));
                    }
                    continue;
                }
            }
            let c = cot_term(e, l);
            diag[a] -= c;
            diag[b] -= c;
            upper.push((a, b, hop(e, l)));
        }
        SplitM {
            n,
            diag,
            upper,
            resonant,
        }
    }

    /// Number of eigenvalues of `M(E)` strictly below `shift`.
    pub fn count_below(&self, shift: f64) -> usize {
        if self.resonant.is_empty() {
            let m = SymMatrix::from_parts(self.diag.clone(), self.upper.clone());
            return m.count_below(shift);
        }
        // place each bordering unknown right after the later of its endpoints
        let mut after: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (j, r) in self.resonant.iter().enumerate() {
            after[r.0.max(r.1)].push(j);
        }
        let total = self.n + self.resonant.len();
        let mut pos = vec![0; self.n];
        let mut aux = vec![0; self.resonant.len()];
        let mut next = 0;
        for v in 0..self.n {
            pos[v] = next;
            next += 1;
            for &j in &after[v] {
                aux[j] = next;
                next += 1;
            }
        }
        let mut diag = vec![0.0; total];
        for v in 0..self.n {
            diag[pos[v]] = self.diag[v] - shift;
        }
        let mut upper: Vec<(usize, usize, f64)> = self
            .upper
            .iter()
            .map(|&(a, b, x)| (pos[a], pos[b], x))
            .collect();
        let mut positive = 0;
        for (j, &(a, b, sign, gamma)) in self.resonant.iter().enumerate() {
            diag[aux[j]] = -1.0 / gamma;
            upper.push((pos[a], aux[j], 1.0));
            upper.push((pos[b], aux[j], sign));
            if gamma > 0.0 {
                positive += 1;
            }
        }
        SymMatrix::from_parts(diag, upper).count_below(0.0) - positive
    }
}

/// Number of eigenvalues of `H(l, alpha)` below `e`.
pub fn count_below_h(cube: &Cube, lengths: &LengthField, alpha: f64, e: f64) -> Result<usize> {
    let dist = dirichlet_distance(lengths, e);
    if dist <= DELTA_DIR {
        return Err(Error::DirichletProximity {
            energy: e,
            distance: dist,
            threshold: DELTA_DIR,
        });
    }
    if lengths.len() != cube.num_edges() {
        return Err(Error::InvalidParameter("length field does not match cube".into()));
    }
    Ok(up_count(cube, lengths, alpha, e) + dirichlet_count(lengths, e))
}

struct PanelOut {
    eigenvalues: Vec<Eigenvalue>,
    grid_points: usize,
    evaluations: usize,
    refinements: usize,
    count_lo: usize,
    count_hi: usize,
}

struct Counter<'a> {
    cube: &'a Cube,
    lengths: &'a LengthField,
    alpha: f64,
    evaluations: usize,
}

impl Counter<'_> {
    fn up(&mut self, e: f64) -> usize {
        self.evaluations += 1;
        up_count(self.cube, self.lengths, self.alpha, e)
    }
}

/// Distance from `alpha` to the `k`-th nearest eigenvalue of `m`.
fn kth_distance(m: &SplitM, alpha: f64, k: usize) -> f64 {
    // rounding at a singular shift can invert the two counts for tiny r
    let inside = |r: f64| m.count_below(alpha + r).saturating_sub(m.count_below(alpha - r));
    let scale = 1.0 + alpha.abs() + m.diag.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    let mut hi = f64::EPSILON * scale;
    while inside(hi) < k {
        hi *= 2.0;
        if hi > 4.0 * scale {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn solve_panel(
    cube: &Cube,
    lengths: &LengthField,
    alpha: f64,
    a: f64,
    b: f64,
    expected: f64,
    opts: &SpectrumOptions,
) -> Result<PanelOut> {
    let mut ctr = Counter {
        cube,
        lengths,
        alpha,
        evaluations: 0,
    };
    let npts = ((opts.points_per_eigenvalue as f64 * expected).ceil() as usize).max(opts.points_per_eigenvalue) + 1;
    let mut grid: Vec<f64> = (0..npts)
        .map(|i| a + (b - a) * i as f64 / (npts - 1) as f64)
        .collect();
    *grid.last_mut().unwrap() = b;
    let mut counts: Vec<usize> = grid.iter().map(|&e| ctr.up(e)).collect();
    let grid_points = grid.len();

    // the count must not decrease inside a panel; refine where it does
    let mut refinements = 0;
    let mut i = 0;
    while i + 1 < grid.len() {
        if counts[i + 1] < counts[i] {
            let step = grid[i + 1] - grid[i];
            if step < opts.min_step {
                return Err(Error::BranchAmbiguity {
                    energy: grid[i],
                    step,
                });
            }
            let mid = 0.5 * (grid[i] + grid[i + 1]);
            let c = ctr.up(mid);
            grid.insert(i + 1, mid);
            counts.insert(i + 1, c);
            refinements += 1;
            i = i.saturating_sub(1);
            continue;
        }
        i += 1;
    }

    let mut eigenvalues = Vec::new();
    for w in 0..grid.len() - 1 {
        if counts[w + 1] > counts[w] {
            let mut found = Vec::new();
            bisect_jumps(&mut ctr, grid[w], grid[w + 1], counts[w], counts[w + 1], opts.tol_e, &mut found)?;
            for (lo, hi, c_lo, c_hi) in found {
                eigenvalues.push(finish_jump(&mut ctr, lo, hi, c_lo, c_hi, opts)?);
            }
        }
    }
    Ok(PanelOut {
        eigenvalues,
        grid_points,
        evaluations: ctr.evaluations,
        refinements,
        count_lo: counts[0],
        count_hi: *counts.last().unwrap(),
    })
}

fn bisect_jumps(
    ctr: &mut Counter,
    a: f64,
    b: f64,
    ca: usize,
    cb: usize,
    tol: f64,
    out: &mut Vec<(f64, f64, usize, usize)>,
) -> Result<()> {
    if cb <= ca {
        return Ok(());
    }
    let mid = 0.5 * (a + b);
    if b - a <= tol || mid <= a || mid >= b {
        out.push((a, b, ca, cb));
        return Ok(());
    }
    let cm = ctr.up(mid);
    if cm < ca || cm > cb {
        return Err(Error::BranchAmbiguity {
            energy: mid,
            step: b - a,
        });
    }
    bisect_jumps(ctr, a, mid, ca, cm, tol, out)?;
    bisect_jumps(ctr, mid, b, cm, cb, tol, out)
}

/// Midpoint of a jump bracket, narrowed further if the residual is too large.
fn finish_jump(
    ctr: &mut Counter,
    mut lo: f64,
    mut hi: f64,
    c_lo: usize,
    c_hi: usize,
    opts: &SpectrumOptions,
) -> Result<Eigenvalue> {
    let mult = c_hi - c_lo;
    loop {
        let e = 0.5 * (lo + hi);
        let m = SplitM::new(ctr.cube, ctr.lengths, e);
        let residual = kth_distance(&m, ctr.alpha, mult);
        if residual < opts.tol_eig || e <= lo || e >= hi {
            return Ok(Eigenvalue {
                energy: e,
                multiplicity: mult,
                branch_id: m.n - c_lo - 1,
                residual,
            });
        }
        // keep the half that still holds the whole jump, otherwise stop here
        let c = ctr.up(e);
        if c == c_lo {
            lo = e;
        } else if c == c_hi {
            hi = e;
        } else {
            return Ok(Eigenvalue {
                energy: e,
                multiplicity: mult,
                branch_id: m.n - c_lo - 1,
                residual,
            });
        }
    }
}

/// Guard bands of half-width `1.5 delta_dir` around the Dirichlet values in the window, merged.
fn guard_bands(lengths: &LengthField, lo: f64, hi: f64, delta_dir: f64) -> Result<Vec<(f64, f64, usize)>> {
    if hi <= 0.0 {
        return Ok(Vec::new());
    }
    let w = 1.5 * delta_dir;
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for d in dirichlet_spectrum(lengths, hi + w)? {
        if d + w < lo {
            continue;
        }
        if let Some(last) = out.last_mut() {
            if d - w <= last.1 {
                last.1 = d + w;
                last.2 += 1;
                continue;
            }
        }
        out.push((d - w, d + w, 1));
    }
    Ok(out)
}

/// Eigenvalues of `H(l, alpha)` in `[lo, hi]`, excluding Dirichlet guard bands.
pub fn spectrum_h(
    cube: &Cube,
    lengths: &LengthField,
    alpha: f64,
    window: (f64, f64),
    opts: &SpectrumOptions,
) -> Result<SpectrumResult> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!("window [{lo}, {hi}] must be bounded with lo < hi")));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter("alpha must be finite".into()));
    }
    if lengths.len() != cube.num_edges() {
        return Err(Error::InvalidParameter("length field does not match cube".into()));
    }
    let bands = guard_bands(lengths, lo, hi, opts.delta_dir)?;
    let mut panels = Vec::new();
    let mut start = lo;
    for &(a, b, _) in &bands {
        if a > start {
            panels.push((start, a.min(hi)));
        }
        start = start.max(b);
    }
    if start < hi {
        panels.push((start, hi));
    }

    let (_, l_max) = lengths.bounds();
    let density = cube.num_edges() as f64 * l_max / std::f64::consts::PI;
    let expected = |a: f64, b: f64| density * (b.max(0.0).sqrt() - a.max(0.0).sqrt()) + 1.0;
    let run = |&(a, b): &(f64, f64)| solve_panel(cube, lengths, alpha, a, b, expected(a, b), opts);
    let outs: Vec<PanelOut> = if opts.parallel {
        panels.par_iter().map(run).collect::<Result<_>>()?
    } else {
        panels.iter().map(run).collect::<Result<_>>()?
    };

    let mut diagnostics = Diagnostics {
        panels: panels.len(),
        ..Default::default()
    };
    let mut eigenvalues = Vec::new();
    for o in &outs {
        diagnostics.grid_points += o.grid_points;
        diagnostics.count_evaluations += o.evaluations;
        diagnostics.refinements += o.refinements;
        eigenvalues.extend_from_slice(&o.eigenvalues);
    }
    eigenvalues.sort_by(|a, b| a.energy.total_cmp(&b.energy));

    // eigenvalues hidden in a guard band: difference of the full counts on both sides
    let mut excluded = Vec::new();
    for &(a, b, nd) in &bands {
        let (a, b) = (a.max(lo), b.min(hi));
        let left = panels.iter().position(|p| p.1 == a);
        let right = panels.iter().position(|p| p.0 == b);
        let hidden = match (left, right) {
            (Some(l), Some(r)) => {
                let cl = outs[l].count_hi + dirichlet_count(lengths, a);
                let cr = outs[r].count_lo + dirichlet_count(lengths, b);
                cr.saturating_sub(cl)
            }
            _ => 0,
        };
        excluded.push(ExcludedInterval {
            lo: a,
            hi: b,
            dirichlet_values: nd,
            hidden_eigenvalues: hidden,
        });
    }
    Ok(SpectrumResult {
        window,
        alpha,
        eigenvalues,
        excluded_intervals: excluded,
        method: Method::Reduction,
        diagnostics,
    })
}

/// Finite-difference discretisation: stiffness `K` and lumped mass `B` on
/// the vertices followed by the interior nodes of every edge.
#[derive(Debug, Clone)]
pub struct FdSystem {
    pub stiffness: SymMatrix,
    pub mass: Vec<f64>,
    /// Index of the first interior node of each edge.
    pub edge_offset: Vec<usize>,
    pub points_per_edge: usize,
}

pub fn fd_system(cube: &Cube, lengths: &LengthField, alpha: f64, m: usize) -> Result<FdSystem> {
    if m < 2 {
        return Err(Error::InvalidParameter("need at least 2 subintervals per edge".into()));
    }
    let nv = cube.num_vertices();
    let n = nv + cube.num_edges() * (m - 1);
    let mut diag = vec![0.0; n];
    let mut mass = vec![0.0; n];
    let mut upper = Vec::new();
    let mut edge_offset = Vec::with_capacity(cube.num_edges());
    for v in diag.iter_mut().take(nv) {
        *v = alpha;
    }
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let h = lengths.get(k) / m as f64;
        let off = nv + k * (m - 1);
        edge_offset.push(off);
        diag[a] += 1.0 / h;
        diag[b] += 1.0 / h;
        mass[a] += 0.5 * h;
        mass[b] += 0.5 * h;
        for i in 0..m - 1 {
            diag[off + i] = 2.0 / h;
            mass[off + i] = h;
            if i + 1 < m - 1 {
                upper.push((off + i, off + i + 1, -1.0 / h));
            }
        }
        upper.push((a, off, -1.0 / h));
        upper.push((off + m - 2, b, -1.0 / h));
    }
    Ok(FdSystem {
        stiffness: SymMatrix::from_parts(diag, upper),
        mass,
        edge_offset,
        points_per_edge: m,
    })
}

/// Number of eigenvalues of the discrete pencil `(K, B)` below `sigma`.
///
/// The interior chain of every edge is eliminated first (its inertia is a
/// Sturm count), then the inertia of the vertex Schur complement is added.
pub fn fd_count_below(cube: &Cube, lengths: &LengthField, alpha: f64, m: usize, sigma: f64) -> usize {
    let nv = cube.num_vertices();
    let mut sdiag = vec![alpha; nv];
    let mut upper = Vec::with_capacity(cube.num_edges());
    let mut negative = 0;
    for (k, &(a, b)) in cube.all_endpoints().iter().enumerate() {
        let h = lengths.get(k) / m as f64;
        let t = 2.0 / h - sigma * h;
        let o = -1.0 / h;
        let floor = 1e-300_f64.max(f64::MIN_POSITIVE * 1e10) * (1.0 + t.abs() + o.abs());
        // forward pivots of the constant tridiagonal chain
        let nint = m - 1;
        let mut d = t;
        if d.abs() < floor {
            d = -floor;
        }
        if d < 0.0 {
            negative += 1;
        }
        // (T^-1)_{1,n} = prod_{i<n} (-o / d_i) / d_n
        let mut prod = 1.0;
        for _ in 1..nint {
            prod *= -o / d;
            d = t - o * o / d;
            if d.abs() < floor {
                d = -floor;
            }
            if d < 0.0 {
                negative += 1;
            }
        }
        let inv_end = 1.0 / d; // (T^-1)_{nn} = (T^-1)_{11} by persymmetry
        let inv_corner = prod / d;
        let c2 = o * o;
        sdiag[a] += 1.0 / h - sigma * 0.5 * h - c2 * inv_end;
        sdiag[b] += 1.0 / h - sigma * 0.5 * h - c2 * inv_end;
        upper.push((a, b, -c2 * inv_corner));
    }
    let s = SymMatrix::from_parts(sdiag, upper);
    negative + s.count_below(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub richardson: bool,
    /// Absolute bisection tolerance scaled by `max(|E|, 1)`.
    pub tol_rel: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            richardson: true,
            tol_rel: 1e-11,
        }
    }
}

/// Global index and value of every discrete eigenvalue in `[lo, hi]`.
fn fd_eigenvalues(cube: &Cube, lengths: &LengthField, alpha: f64, m: usize, lo: f64, hi: f64, tol_rel: f64) -> Vec<(usize, f64)> {
    let count = |s: f64| fd_count_below(cube, lengths, alpha, m, s);
    let base = count(lo);
    let tol = tol_rel * lo.abs().max(hi.abs()).max(1.0);
    let jumps = crate::linalg::locate_jumps(count, lo, hi, tol);
    let mut out = Vec::new();
    let mut idx = base;
    for (e, mult) in jumps {
        for _ in 0..mult {
            out.push((idx, e));
            idx += 1;
        }
    }
    out
}

/// Eigenvalues of the finite-difference discretisation in `window`, with
/// Richardson extrapolation from `m` and `2m` points per edge.
pub fn fd_oracle_spectrum(
    cube: &Cube,
    lengths: &LengthField,
    alpha: f64,
    m: usize,
    window: (f64, f64),
    opts: &OracleOptions,
) -> Result<SpectrumResult> {
    let (lo, hi) = window;
    if m < 16 {
        return Err(Error::InvalidParameter(format!("m = {m} points per edge; need m >= 16")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!("window [{lo}, {hi}] must be bounded with lo < hi")));
    }
    if lengths.len() != cube.num_edges() {
        return Err(Error::InvalidParameter("length field does not match cube".into()));
    }
    let (_, l_max) = lengths.bounds();
    let h = l_max / m as f64;
    let mut warnings = Vec::new();
    let emax = lo.abs().max(hi.abs());
    if emax * h * h > 0.01 {
        warnings.push(format!(
            "window too large for resolution: E_max h^2 = {:.3e} > 0.01",
            emax * h * h
        ));
    }
    let mut values: Vec<(usize, f64, f64)> = if opts.richardson {
        // pair by global index on a padded window so that boundary eigenvalues are not lost
        let pad = 0.05 * (hi - lo) + 0.05 * emax.max(1.0);
        let coarse = fd_eigenvalues(cube, lengths, alpha, m, lo - pad, hi + pad, opts.tol_rel);
        let fine = fd_eigenvalues(cube, lengths, alpha, 2 * m, lo - pad, hi + pad, opts.tol_rel);
        let mut out = Vec::new();
        for &(i, ef) in &fine {
            if let Some(&(_, ec)) = coarse.iter().find(|(j, _)| *j == i) {
                let er = (4.0 * ef - ec) / 3.0;
                if er >= lo && er <= hi {
                    out.push((i, er, (ef - ec).abs() / 3.0));
                }
            }
        }
        out
    } else {
        fd_eigenvalues(cube, lengths, alpha, m, lo, hi, opts.tol_rel)
            .into_iter()
            .map(|(i, e)| (i, e, f64::NAN))
            .collect()
    };
    values.sort_by(|a, b| a.1.total_cmp(&b.1));
    // group numerically coincident values
    let mut eigenvalues: Vec<Eigenvalue> = Vec::new();
    for (i, e, err) in values {
        if let Some(last) = eigenvalues.last_mut() {
            if (e - last.energy).abs() <= 1e-9 * e.abs().max(1.0) {
                last.multiplicity += 1;
                last.residual = last.residual.max(err);
                continue;
            }
        }
        eigenvalues.push(Eigenvalue {
            energy: e,
            multiplicity: 1,
            branch_id: i,
            residual: err,
        });
    }
    Ok(SpectrumResult {
        window,
        alpha,
        eigenvalues,
        excluded_intervals: Vec::new(),
        method: Method::FdOracle,
        diagnostics: Diagnostics {
            panels: 1,
            fd_points_per_edge: Some(m),
            richardson: opts.richardson,
            warnings,
            ..Default::default()
        },
    })
}

/// Dense generalised eigenvalues of the discretisation; small systems only.
pub fn fd_dense_eigenvalues(cube: &Cube, lengths: &LengthField, alpha: f64, m: usize) -> Result<Vec<f64>> {
    let sys = fd_system(cube, lengths, alpha, m)?;
    let mut k = sys.stiffness.to_dense();
    let n = k.nrows();
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] /= (sys.mass[i] * sys.mass[j]).sqrt();
        }
    }
    dense_eigenvalues(&k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelDims {
    pub dim_ker_h: usize,
    pub dim_ker_m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    pub tol_eig: f64,
    pub fd_points_per_edge: usize,
    /// Relative tolerance (against `max(|E|, 1)`) for oracle eigenvalues.
    pub fd_tol: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            tol_eig: TOL_EIG,
            fd_points_per_edge: 32,
            fd_tol: 1e-3,
        }
    }
}

/// `dim ker(M(E) - alpha)` from the reduction and `dim ker(H - E)` from the oracle.
pub fn kernel_dims(
    cube: &Cube,
    lengths: &LengthField,
    e: f64,
    alpha: f64,
    opts: &KernelOptions,
) -> Result<KernelDims> {
    let dist = dirichlet_distance(lengths, e);
    if dist <= DELTA_DIR {
        return Err(Error::DirichletProximity {
            energy: e,
            distance: dist,
            threshold: DELTA_DIR,
        });
    }
    let m = SplitM::new(cube, lengths, e);
    let dim_ker_m = m.count_below(alpha + opts.tol_eig).saturating_sub(m.count_below(alpha - opts.tol_eig));
    let tau = opts.fd_tol * e.abs().max(1.0);
    let fd = fd_oracle_spectrum(
        cube,
        lengths,
        alpha,
        opts.fd_points_per_edge,
        (e - 2.0 * tau, e + 2.0 * tau),
        &OracleOptions::default(),
    )?;
    let dim_ker_h = fd
        .eigenvalues
        .iter()
        .filter(|x| (x.energy - e).abs() <= tau)
        .map(|x| x.multiplicity)
        .sum();
    Ok(KernelDims { dim_ker_h, dim_ker_m })
}

/// Unit vector in `ker(M(E) - alpha)`, or the eigenvector of `M(E)` closest to `alpha`.
pub fn vertex_eigenvector(cube: &Cube, lengths: &LengthField, e: f64, alpha: f64) -> Result<Vec<f64>> {
    let (values, vectors) = dense_eigh(&m_matrix(cube, lengths, e).to_dense())?;
    let j = values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - alpha).abs().total_cmp(&(b.1 - alpha).abs()))
        .map(|(j, _)| j)
        .ok_or_else(|| Error::InvalidParameter("empty cube".into()))?;
    Ok(vectors.column(j).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationProfile {
    pub energy: f64,
    pub amplitudes: Vec<f64>,
    pub center: usize,
    pub center_coords: Vec<i64>,
    /// `lambda` in `log|f(v)| ~ c - lambda dist(v, center)`.
    pub decay_rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub fit_points: usize,
    pub ipr: f64,
    pub distance: String,
}

/// Inverse participation ratio `sum |f|^4 / (sum |f|^2)^2`.
pub fn ipr(vector: &[f64]) -> f64 {
    let s2: f64 = vector.iter().map(|a| a * a).sum();
    let s4: f64 = vector.iter().map(|a| a.powi(4)).sum();
    s4 / (s2 * s2)
}

/// Amplitude statistics and an exponential decay fit around the maximum.
pub fn localization_profile(cube: &Cube, e: f64, vector: &[f64]) -> Result<LocalizationProfile> {
    if vector.len() != cube.num_vertices() {
        return Err(Error::InvalidParameter(format!(
            "{} entries for {} vertices",
            vector.len(),
            cube.num_vertices()
        )));
    }
    let amplitudes: Vec<f64> = vector.iter().map(|x| x.abs()).collect();
    let s2: f64 = amplitudes.iter().map(|a| a * a).sum();
    if !(s2 > 0.0) {
        return Err(Error::InvalidParameter("zero vector".into()));
    }
    let ipr = ipr(vector);
    let center = amplitudes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let norm = s2.sqrt();
    let c: &Vertex = &cube.vertices()[center];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (v, &a) in cube.vertices().iter().zip(&amplitudes) {
        let a = a / norm;
        if a >= 1e-14 {
            xs.push(v.lattice_distance(c) as f64);
            ys.push(a.ln());
        }
    }
    let mut radii: Vec<u64> = xs.iter().map(|&x| x as u64).collect();
    radii.sort_unstable();
    radii.dedup();
    if radii.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} usable radii, need at least 3",
            radii.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LocalizationProfile {
        energy: e,
        amplitudes,
        center,
        center_coords: c.0.clone(),
        decay_rate: -slope,
        intercept: my - slope * mx,
        r_squared,
        fit_points: xs.len(),
        ipr,
        distance: "lattice graph distance".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_cube, Norm};
    use crate::reduction::assemble_m;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_lengths(cube: &Cube, seed: u64) -> LengthField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..cube.num_edges()).map(|_| rng.random_range(0.8..1.2)).collect();
        LengthField::new(v, 0.8, 1.2).unwrap()
    }

    #[test]
    fn split_count_matches_dense() {
        let cube = build_cube(2, 1).unwrap();
        let lf = random_lengths(&cube, 17);
        let l0 = lf.get(0);
        // energies near the first two Dirichlet values of edge 0 and a generic one
        for e in [(PI / l0).powi(2) + 3e-3, (2.0 * PI / l0).powi(2) - 2e-3, 4.4] {
            let m = SplitM::new(&cube, &lf, e);
            let ev = dense_eigenvalues(&m_matrix(&cube, &lf, e).to_dense()).unwrap();
            for &s in &[-30.0, -2.0, 0.0, 1.5, 9.0, 80.0] {
                let want = ev.iter().filter(|x| **x < s).count();
                assert_eq!(m.count_below(s), want, "E {e} shift {s}");
            }
        }
    }

    #[test]
    fn eigs_of_single_edge_block() {
        let cube = build_cube(1, 0).unwrap();
        let lf = LengthField::constant(2, 1.0).unwrap();
        let op = assemble_m(&cube, &lf, PI * PI / 4.0).unwrap();
        let ev = eigs_m(&op, false).unwrap().values;
        let tr: f64 = ev.iter().sum();
        assert!((tr - op.matrix.trace()).abs() < 1e-12);
        // path of two edges at phase pi/2: eigenvalues 0 and +-pi/sqrt(2)
        let want = [-PI / 2f64.sqrt(), 0.0, PI / 2f64.sqrt()];
        for (a, b) in ev.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn dual_solver_agreement() {
        let cube = build_cube(2, 2).unwrap();
        let lf = random_lengths(&cube, 4);
        let op = assemble_m(&cube, &lf, 2.7).unwrap();
        let a = eigs_m(&op, false).unwrap().values;
        let b = eigs_m_jacobi(&op).unwrap();
        let scale = op.matrix.inf_norm();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn neumann_path() {
        // d = 1, n: path of 2n+2 unit edges, alpha = 0
        let n = 3;
        let cube = build_cube(1, n).unwrap();
        let k_edges = cube.num_edges();
        let lf = LengthField::constant(k_edges, 1.0).unwrap();
        let r = spectrum_h(&cube, &lf, 0.0, (-1.0, 30.0), &SpectrumOptions::default()).unwrap();
        let mut want = Vec::new();
        for k in 0.. {
            let e = (PI * k as f64 / k_edges as f64).powi(2);
            if e > 30.0 {
                break;
            }
            if !r.is_excluded(e) {
                want.push(e);
            }
        }
        let got = r.energies();
        assert_eq!(got.len(), want.len(), "{got:?}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "{g} vs {w}");
        }
        // the hidden eigenvalue at pi^2 is accounted for
        assert_eq!(r.excluded_intervals.len(), 1);
        assert_eq!(r.excluded_intervals[0].hidden_eigenvalues, 1);
        assert!(r.excluded_length() < 4.0 * DELTA_DIR * k_edges as f64);
    }

    #[test]
    fn residuals_and_ordering() {
        let cube = build_cube(2, 2).unwrap();
        let lf = random_lengths(&cube, 8);
        let r = spectrum_h(&cube, &lf, 0.5, (-2.0, 12.0), &SpectrumOptions::default()).unwrap();
        assert!(!r.eigenvalues.is_empty());
        assert!(r.eigenvalues.windows(2).all(|w| w[0].energy < w[1].energy));
        for e in &r.eigenvalues {
            assert!(e.residual < TOL_EIG);
            assert!(e.energy >= 0.0);
        }
        assert!(r.eigenvalues[0].energy > 0.0);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cube = build_cube(1, 6).unwrap();
        let lf = random_lengths(&cube, 12);
        let mut o = SpectrumOptions::default();
        let a = spectrum_h(&cube, &lf, 2.0, (0.0, 40.0), &o).unwrap();
        o.parallel = false;
        let b = spectrum_h(&cube, &lf, 2.0, (0.0, 40.0), &o).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
    }

    #[test]
    fn fd_count_matches_dense() {
        let cube = build_cube(2, 0).unwrap();
        let lf = random_lengths(&cube, 13);
        for &alpha in &[-1.0, 0.0, 2.0] {
            let ev = fd_dense_eigenvalues(&cube, &lf, alpha, 16).unwrap();
            for &s in &[-3.0, 0.5, 7.0, 25.0, 60.0] {
                let dense = ev.iter().filter(|x| **x < s).count();
                assert_eq!(fd_count_below(&cube, &lf, alpha, 16, s), dense, "alpha {alpha} sigma {s}");
            }
        }
    }

    #[test]
    fn fd_neumann_interval_converges_at_second_order() {
        // the d = 1, n = 0 cube is a path of two edges; unit lengths give [0, 2]
        let cube = build_cube(1, 0).unwrap();
        let lf = LengthField::constant(2, 1.0).unwrap();
        let exact = (PI / 2.0).powi(2);
        let mut errs = Vec::new();
        for m in [16usize, 32, 64] {
            let ev = fd_oracle_spectrum(
                &cube,
                &lf,
                0.0,
                m,
                (1.0, 4.0),
                &OracleOptions {
                    richardson: false,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(ev.eigenvalues.len(), 1);
            errs.push((ev.eigenvalues[0].energy - exact).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
        }
        let r = fd_oracle_spectrum(&cube, &lf, 0.0, 32, (1.0, 4.0), &OracleOptions::default()).unwrap();
        assert!((r.eigenvalues[0].energy - exact).abs() < 1e-6);
        let r = fd_oracle_spectrum(&cube, &lf, 0.0, 32, (-0.5, 0.5), &OracleOptions::default()).unwrap();
        assert!(r.eigenvalues[0].energy.abs() < 1e-9);
        assert!(fd_oracle_spectrum(&cube, &lf, 0.0, 8, (1.0, 4.0), &OracleOptions::default()).is_err());
    }

    #[test]
    fn fd_covers_guard_bands() {
        let cube = build_cube(1, 1).unwrap();
        let lf = LengthField::constant(cube.num_edges(), 1.0).unwrap();
        let h = spectrum_h(&cube, &lf, 0.0, (5.0, 12.0), &SpectrumOptions::default()).unwrap();
        let fd = fd_oracle_spectrum(&cube, &lf, 0.0, 64, (5.0, 12.0), &OracleOptions::default()).unwrap();
        assert!(h.total_count() < fd.total_count());
        assert!(fd.excluded_intervals.is_empty());
        assert!(fd.eigenvalues.iter().any(|e| (e.energy - PI * PI).abs() < 1e-4));
    }

    #[test]
    fn reduction_matches_oracle_small() {
        let cube = build_cube(2, 1).unwrap();
        let lf = random_lengths(&cube, 21);
        for &alpha in &[-1.0, 0.5, 2.0] {
            let w = (-6.0, 6.7);
            let h = spectrum_h(&cube, &lf, alpha, w, &SpectrumOptions::default()).unwrap().energies();
            let fd = fd_oracle_spectrum(&cube, &lf, alpha, 32, w, &OracleOptions::default()).unwrap().energies();
            assert_eq!(h.len(), fd.len(), "alpha {alpha}: {h:?} vs {fd:?}");
            for (a, b) in h.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-3 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn positive_coupling_has_no_negative_eigenvalues() {
        let cube = build_cube(2, 2).unwrap();
        let lf = random_lengths(&cube, 30);
        let r = spectrum_h(&cube, &lf, 0.7, (-10.0, 0.5), &SpectrumOptions::default()).unwrap();
        assert!(r.eigenvalues.iter().all(|e| e.energy >= 0.0));
    }

    #[test]
    fn lattice_shift_invariance() {
        let c0 = build_cube(2, 1).unwrap();
        let c1 = Cube::new(2, 1, Vertex(vec![3, -2]), Norm::Sup).unwrap();
        let lf = random_lengths(&c0, 5);
        let a = spectrum_h(&c0, &lf, 1.0, (0.0, 20.0), &SpectrumOptions::default()).unwrap();
        let b = spectrum_h(&c1, &lf, 1.0, (0.0, 20.0), &SpectrumOptions::default()).unwrap();
        assert_eq!(a.energies(), b.energies());
    }

    #[test]
    fn kernel_dims_examples() {
        let cube = build_cube(1, 2).unwrap();
        let lf = random_lengths(&cube, 6);
        let r = spectrum_h(&cube, &lf, 0.5, (0.1, 6.0), &SpectrumOptions::default()).unwrap();
        let e0 = r.eigenvalues[0].energy;
        let k = kernel_dims(&cube, &lf, e0, 0.5, &KernelOptions::default()).unwrap();
        assert!(k.dim_ker_m >= 1);
        assert_eq!(k.dim_ker_h, k.dim_ker_m);
        let gap = 0.5 * (r.eigenvalues[0].energy + r.eigenvalues[1].energy);
        let k = kernel_dims(&cube, &lf, gap, 0.5, &KernelOptions::default()).unwrap();
        assert_eq!((k.dim_ker_h, k.dim_ker_m), (0, 0));
    }

    #[test]
    fn kernel_dims_degenerate() {
        // the x <-> y reflection of a constant square forces double eigenvalues
        let cube = build_cube(2, 2).unwrap();
        let lf = LengthField::constant(cube.num_edges(), 1.0).unwrap();
        let r = spectrum_h(&cube, &lf, 0.5, (0.1, 6.0), &SpectrumOptions::default()).unwrap();
        let multiple: Vec<_> = r.eigenvalues.iter().filter(|e| e.multiplicity > 1).collect();
        assert!(!multiple.is_empty());
        for ev in multiple {
            let k = kernel_dims(&cube, &lf, ev.energy, 0.5, &KernelOptions::default()).unwrap();
            assert_eq!((k.dim_ker_h, k.dim_ker_m), (ev.multiplicity, ev.multiplicity), "E = {}", ev.energy);
        }
    }

    #[test]
    fn ipr_limits() {
        let cube = build_cube(2, 1).unwrap();
        let n = cube.num_vertices();
        let mut delta = vec![0.0; n];
        delta[3] = 1.0;
        assert_eq!(ipr(&delta), 1.0);
        let e = localization_profile(&cube, 1.0, &delta);
        assert!(matches!(e, Err(Error::DegenerateFit(_))));
        let uniform = vec![1.0 / (n as f64).sqrt(); n];
        let p = localization_profile(&cube, 1.0, &uniform).unwrap();
        assert!((p.ipr - 1.0 / n as f64).abs() < 1e-14);
        assert!(p.decay_rate.abs() < 1e-12);

        let cube = build_cube(1, 10).unwrap();
        let mut v: Vec<f64> = cube
            .vertices()
            .iter()
            .map(|x| (-0.7 * x.0[0].abs() as f64).exp())
            .collect();
        v[cube.vertex_index(&Vertex(vec![0])).unwrap()] = 1.0;
        let p = localization_profile(&cube, 1.0, &v).unwrap();
        assert!((p.decay_rate - 0.7).abs() < 1e-10);
        assert!(p.r_squared > 0.999999);
        let mut spike = vec![1e-3; cube.num_vertices()];
        spike[0] = 1.0;
        let p = localization_profile(&cube, 1.0, &spike).unwrap();
        assert!(p.ipr > 0.99 && p.ipr <= 1.0);
    }
}
