//! Random edge lengths and the Monte Carlo experiments built on them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_json, Table};
use crate::kp_bands::{admissible_negative_alpha, sigma_union, DeltaSet};
use crate::lattice::{build_cube, Cube, Edge};
use crate::linalg::SymMatrix;
use crate::reduction::{dirichlet_distance, m_matrix, LengthField, DELTA_DIR};
use crate::roots::bisect;
use crate::special::{cot_term, hop};
use crate::spectra::{count_below_h, spectrum_h, SpectrumOptions, SplitM};
use crate::stats::{fit_line, fit_through_origin, mean_and_stderr, wilson, Proportion, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Uniform,
    Triangular,
    RaisedCosine,
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistKind::Uniform => "uniform",
            DistKind::Triangular => "triangular",
            DistKind::RaisedCosine => "raised_cosine",
        })
    }
}

impl FromStr for DistKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(DistKind::Uniform),
            "triangular" => Ok(DistKind::Triangular),
            "raised_cosine" | "raised-cosine" => Ok(DistKind::RaisedCosine),
            _ => Err(Error::InvalidParameter(format!(
                "unknown distribution '{s}' (uniform, triangular, raised_cosine)"
            ))),
        }
    }
}

/// Density of a single edge length, supported on `[l_min, l_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub kind: DistKind,
    pub l_min: f64,
    pub l_max: f64,
}

impl LengthDistribution {
    pub fn new(kind: DistKind, l_min: f64, l_max: f64) -> Result<Self> {
        if !(l_min > 0.0 && l_min < l_max && l_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < l_min < l_max < inf (l_min < l_max), got l_min = {l_min}, l_max = {l_max}"
            )));
        }
        Ok(LengthDistribution { kind, l_min, l_max })
    }

    fn center(&self) -> f64 {
        0.5 * (self.l_min + self.l_max)
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.l_max - self.l_min)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.l_min || x > self.l_max {
            return 0.0;
        }
        let s = self.half_width();
        let u = (x - self.center()) / s;
        match self.kind {
            DistKind::Uniform => 0.5 / s,
            DistKind::Triangular => (1.0 - u.abs()) / s,
            DistKind::RaisedCosine => (1.0 + (PI * u).cos()) / (2.0 * s),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.l_min {
            return 0.0;
        }
        if x >= self.l_max {
            return 1.0;
        }
        let u = (x - self.center()) / self.half_width();
        match self.kind {
            DistKind::Uniform => 0.5 * (1.0 + u),
            DistKind::Triangular => {
                if u <= 0.0 {
                    0.5 * (1.0 + u) * (1.0 + u)
                } else {
                    1.0 - 0.5 * (1.0 - u) * (1.0 - u)
                }
            }
            DistKind::RaisedCosine => 0.5 * (1.0 + u + (PI * u).sin() / PI),
        }
    }

    pub fn inverse_cdf(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let (c, s) = (self.center(), self.half_width());
        let u = match self.kind {
            DistKind::Uniform => 2.0 * p - 1.0,
            DistKind::Triangular => {
                if p <= 0.5 {
                    (2.0 * p).sqrt() - 1.0
                } else {
                    1.0 - (2.0 * (1.0 - p)).sqrt()
                }
            }
            DistKind::RaisedCosine => {
                let f = |u: f64| 0.5 * (1.0 + u + (PI * u).sin() / PI) - p;
                match bisect(f, -1.0, 1.0, 1e-15) {
                    Ok(r) => r.x,
                    Err(_) => {
                        if p < 0.5 {
                            -1.0
                        } else {
                            1.0
                        }
                    }
                }
            }
        };
        (c + s * u).clamp(self.l_min, self.l_max)
    }

    pub fn mean(&self) -> f64 {
        self.center()
    }

    pub fn variance(&self) -> f64 {
        let s = self.half_width();
        match self.kind {
            DistKind::Uniform => s * s / 3.0,
            DistKind::Triangular => s * s / 6.0,
            DistKind::RaisedCosine => s * s * (1.0 / 3.0 - 2.0 / (PI * PI)),
        }
    }

    /// Whether the density is Lipschitz as a function on all of R.
    pub fn lipschitz_on_real_line(&self) -> bool {
        !matches!(self.kind, DistKind::Uniform)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream key of an edge, from its absolute lattice position.
pub fn edge_key(edge: &Edge) -> u64 {
    let mut h = splitmix(edge.direction as u64 ^ ((edge.base.0.len() as u64) << 32));
    for &c in &edge.base.0 {
        h = splitmix(h ^ c as u64);
    }
    h
}

/// Seed of realization `index` under `master`.
pub fn realization_seed(master: u64, index: u64) -> u64 {
    splitmix(master ^ splitmix(index.wrapping_mul(0xd1b5_4a32_d192_ed03)))
}

/// One length per edge. Each draw uses its own ChaCha stream selected by the
/// edge's absolute position, so cubes of different size share the lengths of
/// common edges.
pub fn sample_lengths(dist: &LengthDistribution, cube: &Cube, seed: u64) -> LengthField {
    let base = ChaCha8Rng::seed_from_u64(seed);
    let values = cube
        .edges()
        .iter()
        .map(|e| {
            let mut rng = base.clone();
            rng.set_stream(edge_key(e));
            let p = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            dist.inverse_cdf(p)
        })
        .collect();
    LengthField::new(values, dist.l_min, dist.l_max).expect("inverse cdf stays in the support")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTable {
    pub name: String,
    pub table: Table,
}

/// Parameters, seeds and result tables of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub parameters: serde_json::Value,
    pub master_seed: u64,
    pub realizations: usize,
    pub tables: Vec<NamedTable>,
    pub fits: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name).map(|t| &t.table)
    }

    /// Writes `<name>.csv` for every table and `report.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for t in &self.tables {
            let f = format!("{}.csv", t.name);
            t.table.write_csv(&dir.join(&f))?;
            files.push(f);
        }
        write_json(self, &dir.join("report.json"))?;
        files.push("report.json".into());
        Ok(files)
    }
}

fn parallel_map<T: Send, F: Fn(usize) -> Result<T> + Sync + Send>(count: usize, f: F) -> Result<Vec<T>> {
    (0..count).into_par_iter().map(f).collect()
}

/// Which counting function the IDS is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdsVariant {
    /// Eigenvalues of `H` below `E` (the grid is in energy).
    H,
    /// Eigenvalues of `M(E)` below `t` at fixed `E` (the grid is in `t`).
    M { energy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsCurve {
    pub variant: IdsVariant,
    pub d: usize,
    pub n: i64,
    pub vertices: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub realizations: usize,
}

impl IdsCurve {
    pub fn to_table(&self) -> Table {
        let x = match self.variant {
            IdsVariant::H => "E",
            IdsVariant::M { .. } => "t",
        };
        let mut t = Table::new(&[x, "ids", "stderr", "lower", "upper"]);
        for i in 0..self.grid.len() {
            t.push(vec![
                fmt_f64(self.grid[i]),
                fmt_f64(self.mean[i]),
                fmt_f64(self.stderr[i]),
                fmt_f64(self.lower[i]),
                fmt_f64(self.upper[i]),
            ]);
        }
        t
    }
}

/// `N_H(E)` with energies inside a Dirichlet guard band moved just past it.
fn count_h_nudged(cube: &Cube, lengths: &LengthField, alpha: f64, e: f64) -> Result<usize> {
    match count_below_h(cube, lengths, alpha, e) {
        Err(Error::DirichletProximity { .. }) => {
            let mut x = e;
            while dirichlet_distance(lengths, x) <= DELTA_DIR {
                x += DELTA_DIR;
            }
            count_below_h(cube, lengths, alpha, x)
        }
        r => r,
    }
}

/// Normalised counting function of one realization.
pub fn ids_for_field(cube: &Cube, lengths: &LengthField, alpha: f64, grid: &[f64], variant: IdsVariant) -> Result<Vec<f64>> {
    let v = cube.num_vertices() as f64;
    match variant {
        IdsVariant::H => grid
            .iter()
            .map(|&e| Ok(count_h_nudged(cube, lengths, alpha, e)? as f64 / v))
            .collect(),
        IdsVariant::M { energy } => {
            let dist = dirichlet_distance(lengths, energy);
            if dist <= DELTA_DIR {
                return Err(Error::DirichletProximity {
                    energy,
                    distance: dist,
                    threshold: DELTA_DIR,
                });
            }
            let m = SplitM::new(cube, lengths, energy);
            Ok(grid.iter().map(|&t| m.count_below(t) as f64 / v).collect())
        }
    }
}

fn aggregate_curve(rows: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut mean = Vec::with_capacity(k);
    let mut se = Vec::with_capacity(k);
    let mut lo = Vec::with_capacity(k);
    let mut hi = Vec::with_capacity(k);
    for i in 0..k {
        let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let (m, s) = mean_and_stderr(&col);
        let s = if s.is_nan() { 0.0 } else { s };
        mean.push(m);
        se.push(s);
        lo.push((m - Z95 * s).max(0.0));
        hi.push((m + Z95 * s).min(1.0));
    }
    (mean, se, lo, hi)
}

/// Averaged integrated density of states over `realizations` random fields on `Lambda(n)`.
#[allow(clippy::too_many_arguments)]
pub fn ids_estimate(
    d: usize,
    n: i64,
    alpha: f64,
    dist: &LengthDistribution,
    realizations: usize,
    grid: &[f64],
    variant: IdsVariant,
    seed: u64,
) -> Result<IdsCurve> {
    if n < 2 || realizations == 0 {
        return Err(Error::InvalidParameter("need n >= 2 and realizations >= 1".into()));
    }
    let cube = build_cube(d, n)?;
    let rows = parallel_map(realizations, |r| {
        let lf = sample_lengths(dist, &cube, realization_seed(seed, r as u64));
        ids_for_field(&cube, &lf, alpha, grid, variant)
    })?;
    let (mean, stderr, lower, upper) = aggregate_curve(&rows, grid.len());
    Ok(IdsCurve {
        variant,
        d,
        n,
        vertices: cube.num_vertices(),
        grid: grid.to_vec(),
        mean,
        stderr,
        lower,
        upper,
        realizations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WegnerCase {
    /// `I` in `(0, inf)` and disjoint from the forbidden set.
    PositiveGap,
    /// `I` below zero with an admissible negative coupling.
    NegativeBottom,
    /// `I` below zero with `alpha >= 0`: no eigenvalues can occur there.
    NegativeControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WegnerParams {
    pub d: usize,
    pub n_list: Vec<i64>,
    pub alpha: f64,
    pub interval: (f64, f64),
    /// Strictly decreasing widths `|J|`.
    pub widths: Vec<f64>,
    pub dist: LengthDistribution,
    pub realizations: usize,
    pub seed: u64,
    /// Centers of `J`; the midpoint of `I` when empty.
    pub centers: Vec<f64>,
    pub raw: bool,
}

pub fn classify_wegner_interval(p: &WegnerParams) -> Result<WegnerCase> {
    let (lo, hi) = p.interval;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("interval [{lo}, {hi}] is not a bounded interval")));
    }
    if lo > 0.0 {
        let delta = DeltaSet::new(p.dist.l_min, p.dist.l_max, hi)?;
        if !delta.interval_is_disjoint(lo, hi) {
            return Err(Error::IntervalMeetsDelta { lo, hi });
        }
        return Ok(WegnerCase::PositiveGap);
    }
    if hi < 0.0 {
        if p.alpha >= 0.0 {
            return Ok(WegnerCase::NegativeControl);
        }
        let ranges = admissible_negative_alpha(p.d, p.dist.l_min)?;
        if !ranges.contains(p.alpha) {
            return Err(Error::Precondition(format!(
                "alpha = {} is outside the admissible negative ranges {:?}",
                p.alpha, ranges.ranges
            )));
        }
        return Ok(WegnerCase::NegativeBottom);
    }
    Err(Error::Precondition(format!(
        "interval [{lo}, {hi}] contains 0, which belongs to the forbidden set"
    )))
}

/// Probability that the cube spectrum meets `J`, for every `(n, |J|)` and center.
pub fn wegner_experiment(p: &WegnerParams) -> Result<ExperimentReport> {
    let case = classify_wegner_interval(p)?;
    if p.widths.is_empty() || p.widths.iter().any(|w| w.is_nan() || *w <= 0.0) || p.widths.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("widths must be positive and strictly decreasing".into()));
    }
    if p.realizations == 0 || p.n_list.is_empty() {
        return Err(Error::InvalidParameter("need realizations >= 1 and a non-empty n list".into()));
    }
    let centers = if p.centers.is_empty() {
        vec![0.5 * (p.interval.0 + p.interval.1)]
    } else {
        p.centers.clone()
    };
    let wmax = p.widths[0];
    for &c in &centers {
        if c - 0.5 * wmax < p.interval.0 || c + 0.5 * wmax > p.interval.1 {
            return Err(Error::InvalidParameter(format!(
                "J = [{}, {}] is not inside I",
                c - 0.5 * wmax,
                c + 0.5 * wmax
            )));
        }
    }
    let cubes: Vec<Cube> = p.n_list.iter().map(|&n| build_cube(p.d, n)).collect::<Result<_>>()?;
    let opts = SpectrumOptions {
        parallel: false,
        ..Default::default()
    };
    // per realization: hits[n][center][width] and the raw eigenvalues
    type Hits = (Vec<Vec<Vec<bool>>>, Vec<(usize, f64, f64, usize)>);
    let per: Vec<Hits> = parallel_map(p.realizations, |r| {
        let seed = realization_seed(p.seed, r as u64);
        let mut hits = Vec::with_capacity(cubes.len());
        let mut raw = Vec::new();
        for (ci, cube) in cubes.iter().enumerate() {
            let lf = sample_lengths(&p.dist, cube, seed);
            let mut by_center = Vec::with_capacity(centers.len());
            for &c in &centers {
                let res = spectrum_h(cube, &lf, p.alpha, (c - 0.5 * wmax, c + 0.5 * wmax), &opts)?;
                let row = p
                    .widths
                    .iter()
                    .map(|&w| {
                        res.eigenvalues.iter().any(|e| (e.energy - c).abs() <= 0.5 * w)
                            || res
                                .excluded_intervals
                                .iter()
                                .any(|x| x.hidden_eigenvalues > 0 && x.hi >= c - 0.5 * w && x.lo <= c + 0.5 * w)
                    })
                    .collect();
                by_center.push(row);
                if p.raw {
                    for e in &res.eigenvalues {
                        raw.push((ci, c, e.energy, e.multiplicity));
                    }
                }
            }
            hits.push(by_center);
        }
        Ok((hits, raw))
    })?;

    let mut table = Table::new(&[
        "n", "edges", "center", "width", "hits", "realizations", "probability", "lower", "upper", "ratio",
    ]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ratios = Vec::new();
    let mut monotone = true;
    let mut strictly_decreasing = true;
    let mut cells: Vec<(i64, f64, f64, Proportion)> = Vec::new();
    for (ci, cube) in cubes.iter().enumerate() {
        let edges = cube.num_edges() as f64;
        for (k, &c) in centers.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for (wi, &w) in p.widths.iter().enumerate() {
                let hits = per.iter().filter(|h| h.0[ci][k][wi]).count();
                let pr = wilson(hits, p.realizations, Z95);
                if let Some(prev) = prev {
                    monotone &= hits <= prev;
                    strictly_decreasing &= hits < prev;
                }
                prev = Some(hits);
                let x = edges * w;
                let ratio = pr.estimate / x;
                xs.push(x);
                ys.push(pr.estimate);
                if pr.estimate > 0.0 {
                    ratios.push(ratio);
                }
                table.push(vec![
                    p.n_list[ci].to_string(),
                    cube.num_edges().to_string(),
                    fmt_f64(c),
                    fmt_f64(w),
                    hits.to_string(),
                    p.realizations.to_string(),
                    fmt_f64(pr.estimate),
                    fmt_f64(pr.lower),
                    fmt_f64(pr.upper),
                    fmt_f64(ratio),
                ]);
                cells.push((p.n_list[ci], c, w, pr));
            }
        }
    }
    let mut fits = BTreeMap::new();
    let c_fit = fit_through_origin(&xs, &ys).unwrap_or(f64::NAN);
    fits.insert("c_fit".into(), c_fit);
    let rmax = ratios.iter().cloned().fold(f64::NAN, f64::max);
    let rmin = ratios.iter().cloned().fold(f64::NAN, f64::min);
    fits.insert("ratio_max".into(), rmax);
    fits.insert("ratio_min".into(), rmin);
    fits.insert("ratio_spread".into(), rmax / rmin);
    // smallest constant compatible with every cell's upper confidence limit
    let c_bound = cells
        .iter()
        .zip(&xs)
        .map(|(c, x)| c.3.lower / x)
        .fold(0.0, f64::max);
    fits.insert("c_bound".into(), c_bound);
    let mut checks = BTreeMap::new();
    checks.insert("nested_monotone".into(), monotone);
    checks.insert("strictly_decreasing_in_width".into(), strictly_decreasing);
    checks.insert(
        "bounded_by_fitted_constant".into(),
        cells.iter().zip(&xs).all(|(c, x)| c.3.lower <= c_fit.max(c_bound) * x),
    );
    let mut tables = vec![NamedTable {
        name: "wegner".into(),
        table,
    }];
    if p.raw {
        let mut raw = Table::new(&["realization", "n", "center", "E", "multiplicity"]);
        for (r, h) in per.iter().enumerate() {
            for &(ci, c, e, m) in &h.1 {
                raw.push(vec![r.to_string(), p.n_list[ci].to_string(), fmt_f64(c), fmt_f64(e), m.to_string()]);
            }
        }
        tables.push(NamedTable { name: "raw_eigenvalues".into(), table: raw });
    }
    let mut notes = vec![format!("case: {case:?}")];
    if !p.dist.lipschitz_on_real_line() {
        notes.push("uniform density is Lipschitz on its support only".into());
    }
    Ok(ExperimentReport {
        kind: "wegner".into(),
        parameters: serde_json::to_value(p)?,
        master_seed: p.seed,
        realizations: p.realizations,
        tables,
        fits,
        checks,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifshitzParams {
    pub d: usize,
    pub n_list: Vec<i64>,
    pub alpha: f64,
    pub e0: f64,
    pub beta_exponent: f64,
    pub dist: LengthDistribution,
    pub realizations: usize,
    pub seed: u64,
    /// Offsets `eps` above `E0` for the IDS tail.
    pub eps_grid: Vec<f64>,
    /// Runs even when `E0` is not an admissible edge (for negative controls).
    pub control: bool,
    pub raw: bool,
}

/// Checks that `e0` is an edge of the almost-sure spectrum lying outside the forbidden set.
pub fn check_lifshitz_edge(p: &LifshitzParams) -> Result<()> {
    let delta = DeltaSet::new(p.dist.l_min, p.dist.l_max, p.e0.max(1.0))?;
    if delta.contains(p.e0) {
        return Err(Error::Precondition(format!("E0 = {} lies in the forbidden set", p.e0)));
    }
    let s = sigma_union(p.alpha, p.d, p.dist.l_min, p.dist.l_max, p.e0.max(0.0) + 1.0)?;
    let tol = 1e-6 * p.e0.abs().max(1.0);
    if !s.edges.iter().any(|e| (e.energy - p.e0).abs() <= tol) {
        return Err(Error::Precondition(format!("E0 = {} is not an edge of the almost-sure spectrum", p.e0)));
    }
    Ok(())
}

/// Finite-volume probabilities near `E0` and the IDS tail at `E0`.
pub fn lifshitz_experiment(p: &LifshitzParams) -> Result<ExperimentReport> {
    if !p.control {
        check_lifshitz_edge(p)?;
    }
    if p.realizations == 0 || p.n_list.is_empty() {
        return Err(Error::InvalidParameter("need realizations >= 1 and a non-empty n list".into()));
    }
    let cubes: Vec<Cube> = p.n_list.iter().map(|&n| build_cube(p.d, n)).collect::<Result<_>>()?;
    let big = cubes
        .iter()
        .enumerate()
        .max_by_key(|(_, c)| c.num_vertices())
        .map(|(i, _)| i)
        .unwrap();
    let opts = SpectrumOptions {
        parallel: false,
        ..Default::default()
    };
    let radii: Vec<f64> = p.n_list.iter().map(|&n| (n as f64).powf(p.beta_exponent - 1.0)).collect();
    struct Real {
        hits: Vec<bool>,
        ids_h: Vec<f64>,
        ids_m: Vec<f64>,
        raw: Vec<(usize, f64, usize)>,
    }
    let per: Vec<Real> = parallel_map(p.realizations, |r| {
        let seed = realization_seed(p.seed, r as u64);
        let mut hits = Vec::with_capacity(cubes.len());
        let mut raw = Vec::new();
        let mut ids_h = Vec::new();
        let mut ids_m = Vec::new();
        for (ci, cube) in cubes.iter().enumerate() {
            let lf = sample_lengths(&p.dist, cube, seed);
            let rad = radii[ci];
            let res = spectrum_h(cube, &lf, p.alpha, (p.e0 - rad, p.e0 + rad), &opts)?;
            hits.push(!res.eigenvalues.is_empty() || res.excluded_intervals.iter().any(|x| x.hidden_eigenvalues > 0));
            if p.raw {
                for e in &res.eigenvalues {
                    raw.push((ci, e.energy, e.multiplicity));
                }
            }
            if ci == big && !p.eps_grid.is_empty() {
                let grid: Vec<f64> = p.eps_grid.iter().map(|eps| p.e0 + eps).collect();
                ids_h = ids_for_field(cube, &lf, p.alpha, &grid, IdsVariant::H)?;
                // 1 - k_M(alpha - eps) at E0: share of eigenvalues of M(E0) at or above alpha - eps
                if dirichlet_distance(&lf, p.e0) > DELTA_DIR {
                    let m = SplitM::new(cube, &lf, p.e0);
                    let v = cube.num_vertices() as f64;
                    ids_m = p
                        .eps_grid
                        .iter()
                        .map(|eps| (m.n - m.count_below(p.alpha - eps)) as f64 / v)
                        .collect();
                }
            }
        }
        Ok(Real { hits, ids_h, ids_m, raw })
    })?;

    let mut prob = Table::new(&["n", "radius", "hits", "realizations", "probability", "lower", "upper"]);
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut props = Vec::new();
    for (ci, &n) in p.n_list.iter().enumerate() {
        let hits = per.iter().filter(|r| r.hits[ci]).count();
        let pr = wilson(hits, p.realizations, Z95);
        prob.push(vec![
            n.to_string(),
            fmt_f64(radii[ci]),
            hits.to_string(),
            p.realizations.to_string(),
            fmt_f64(pr.estimate),
            fmt_f64(pr.lower),
            fmt_f64(pr.upper),
        ]);
        if pr.estimate > 0.0 {
            lx.push((n as f64).ln());
            ly.push(pr.estimate.ln());
        }
        props.push(pr);
    }
    let mut fits = BTreeMap::new();
    let mut checks = BTreeMap::new();
    if let Some(f) = fit_line(&lx, &ly) {
        fits.insert("xi".into(), -f.slope);
        fits.insert("xi_stderr".into(), f.slope_stderr);
    }
    checks.insert(
        "probability_non_increasing".into(),
        props.windows(2).all(|w| w[1].estimate <= w[0].estimate),
    );
    // a decrease that is not explained by noise: confidence intervals of the ends separate
    checks.insert(
        "probability_decreasing_trend".into(),
        props.len() >= 2 && props.last().unwrap().upper < props[0].lower,
    );
    checks.insert("probability_one".into(), props.iter().all(|p| p.successes == p.trials));

    let mut tables = vec![NamedTable {
        name: "lifshitz_probability".into(),
        table: prob,
    }];
    if !p.eps_grid.is_empty() {
        let rows_h: Vec<Vec<f64>> = per.iter().map(|r| r.ids_h.clone()).collect();
        let (mh, sh, _, _) = aggregate_curve(&rows_h, p.eps_grid.len());
        let rows_m: Vec<Vec<f64>> = per.iter().filter(|r| !r.ids_m.is_empty()).map(|r| r.ids_m.clone()).collect();
        let (mm, sm, _, _) = if rows_m.is_empty() {
            let nan = vec![f64::NAN; p.eps_grid.len()];
            (nan.clone(), nan.clone(), nan.clone(), nan)
        } else {
            aggregate_curve(&rows_m, p.eps_grid.len())
        };
        let mut t = Table::new(&["eps", "ids_h", "ids_h_stderr", "loglog_h", "tail_m", "tail_m_stderr", "loglog_m"]);
        let (mut xh, mut yh, mut xm, mut ym) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, &eps) in p.eps_grid.iter().enumerate() {
            let llh = if mh[i] > 0.0 && mh[i] < 1.0 { mh[i].ln().abs().ln() } else { f64::NAN };
            let llm = if mm[i] > 0.0 && mm[i] < 1.0 { mm[i].ln().abs().ln() } else { f64::NAN };
            if llh.is_finite() {
                xh.push(eps.ln());
                yh.push(llh);
            }
            if llm.is_finite() {
                xm.push(eps.ln());
                ym.push(llm);
            }
            t.push(vec![
                fmt_f64(eps),
                fmt_f64(mh[i]),
                fmt_f64(sh[i]),
                fmt_f64(llh),
                fmt_f64(mm[i]),
                fmt_f64(sm[i]),
                fmt_f64(llm),
            ]);
        }
        if let Some(f) = fit_line(&xh, &yh) {
            fits.insert("loglog_slope_h".into(), f.slope);
            fits.insert("loglog_slope_h_stderr".into(), f.slope_stderr);
            fits.insert("loglog_points_h".into(), f.points as f64);
        }
        if let Some(f) = fit_line(&xm, &ym) {
            fits.insert("loglog_slope_m".into(), f.slope);
            fits.insert("loglog_slope_m_stderr".into(), f.slope_stderr);
        }
        tables.push(NamedTable { name: "lifshitz_ids".into(), table: t });
    }
    if p.raw {
        let mut raw = Table::new(&["realization", "n", "E", "multiplicity"]);
        for (r, x) in per.iter().enumerate() {
            for &(ci, e, m) in &x.raw {
                raw.push(vec![r.to_string(), p.n_list[ci].to_string(), fmt_f64(e), m.to_string()]);
            }
        }
        tables.push(NamedTable { name: "raw_eigenvalues".into(), table: raw });
    }
    let mut notes = Vec::new();
    if p.control {
        notes.push("negative control: edge admissibility not enforced".into());
    }
    notes.push(format!("IDS tail measured on n = {}", p.n_list[big]));
    Ok(ExperimentReport {
        kind: "lifshitz".into(),
        parameters: serde_json::to_value(p)?,
        master_seed: p.seed,
        realizations: p.realizations,
        tables,
        fits,
        checks,
        notes,
    })
}

/// `sup |sqrt(E) / sin(l sqrt E)|` over `l` in `[l_min, l_max]`.
pub fn hopping_sup(e: f64, l_min: f64, l_max: f64) -> f64 {
    let n = 4096;
    let mut best: f64 = 0.0;
    for i in 0..=n {
        let l = l_min + (l_max - l_min) * i as f64 / n as f64;
        best = best.max(hop(e, l).abs());
    }
    if e > 0.0 {
        // a sine zero inside the support makes the supremum infinite
        let k = e.sqrt();
        let first = (l_min * k / PI).ceil().max(1.0);
        if first * PI <= l_max * k {
            return f64::INFINITY;
        }
    }
    best
}

pub fn beta_threshold(t: f64, a: f64) -> f64 {
    if t.abs() >= a {
        -t.abs()
    } else {
        -a
    }
}

/// The potential `W(v) = sum_{e~v} beta(t_e) - sum_{e~v} sqrt(E) cot(l_e sqrt E)`.
pub fn w_potential(cube: &Cube, lengths: &LengthField, e: f64, a: f64) -> Vec<f64> {
    let mut w = vec![0.0; cube.num_vertices()];
    for (k, &(u, v)) in cube.all_endpoints().iter().enumerate() {
        let l = lengths.get(k);
        let x = beta_threshold(hop(e, l), a) - cot_term(e, l);
        w[u] += x;
        w[v] += x;
    }
    w
}

/// `<phi, M phi> - <phi, W phi> - a <|phi|, H0 |phi|>` with `H0` the Laplacian of the cube's edges.
pub fn local_energy_margin(cube: &Cube, m: &SymMatrix, w: &[f64], a: f64, phi: &[f64]) -> f64 {
    let mut q = m.quadratic_form(phi);
    for (x, wv) in phi.iter().zip(w) {
        q -= wv * x * x;
    }
    for &(u, v) in cube.all_endpoints() {
        let diff = phi[u].abs() - phi[v].abs();
        q -= a * diff * diff;
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergyParams {
    pub d: usize,
    pub n: i64,
    pub energy: f64,
    pub dist: LengthDistribution,
    pub a: f64,
    pub trials: usize,
    pub realizations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergyReport {
    pub a: f64,
    pub b: f64,
    pub min_margin: f64,
    pub min_random_margin: f64,
    pub min_coordinate_margin: f64,
    pub vectors_tested: usize,
    pub realizations: usize,
}

/// Smallest margin of the local energy estimate over random unit vectors and all coordinate vectors.
pub fn local_energy_check(p: &LocalEnergyParams) -> Result<LocalEnergyReport> {
    let b = hopping_sup(p.energy, p.dist.l_min, p.dist.l_max);
    if !(p.a > 0.0 && p.a < b) {
        return Err(Error::InvalidParameter(format!("threshold a = {} must lie in (0, b) with b = {b}", p.a)));
    }
    if p.realizations == 0 {
        return Err(Error::InvalidParameter("need realizations >= 1".into()));
    }
    let cube = build_cube(p.d, p.n)?;
    let nv = cube.num_vertices();
    let results = parallel_map(p.realizations, |r| {
        let seed = realization_seed(p.seed, r as u64);
        let lf = sample_lengths(&p.dist, &cube, seed);
        let dist = dirichlet_distance(&lf, p.energy);
        if dist <= DELTA_DIR {
            return Err(Error::DirichletProximity {
                energy: p.energy,
                distance: dist,
                threshold: DELTA_DIR,
            });
        }
        let m = m_matrix(&cube, &lf, p.energy);
        let w = w_potential(&cube, &lf, p.energy, p.a);
        let mut coord = f64::INFINITY;
        let mut phi = vec![0.0; nv];
        for v in 0..nv {
            phi[v] = 1.0;
            coord = coord.min(local_energy_margin(&cube, &m, &w, p.a, &phi));
            phi[v] = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e57);
        let mut random = f64::INFINITY;
        for _ in 0..p.trials {
            for x in phi.iter_mut() {
                *x = ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
            }
            let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in phi.iter_mut() {
                *x /= norm;
            }
            random = random.min(local_energy_margin(&cube, &m, &w, p.a, &phi));
        }
        Ok((random, coord))
    })?;
    let min_random_margin = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let min_coordinate_margin = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(LocalEnergyReport {
        a: p.a,
        b,
        min_margin: min_random_margin.min(min_coordinate_margin),
        min_random_margin,
        min_coordinate_margin,
        vectors_tested: p.realizations * (p.trials + nv),
        realizations: p.realizations,
    })
}
