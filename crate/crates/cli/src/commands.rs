use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use qgl_core::ensemble::{
    hopping_sup, ids_estimate, lifshitz_experiment, local_energy_check, realization_seed, sample_lengths,
    wegner_experiment, IdsVariant, LengthDistribution, LifshitzParams, LocalEnergyParams, WegnerParams,
};
use qgl_core::io::{fmt_f64, write_json, Table};
use qgl_core::kp_bands::{bands_p_tol, dispersion, inf_sigma, sigma_union_with, DeltaSet, SigmaOptions};
use qgl_core::linalg::dense_eigenvalues;
use qgl_core::reduction::{dm_dl, dm_dl_sum, gap_constants, m_matrix, negative_gap_check, LengthField};
use qgl_core::spectra::{
    fd_oracle_spectrum, kernel_dims, localization_profile, spectrum_h, vertex_eigenvector, KernelOptions,
    OracleOptions, SpectrumOptions,
};
use qgl_core::{build_cube, Cube};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::error::{CliError, Op};
use crate::svg::plot_csv;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    /// Values filled in at run time, such as a default spectral edge.
    derived: &'a BTreeMap<&'static str, f64>,
    files: &'a [String],
    wall_clock_seconds: f64,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    files: Vec<String>,
    derived: BTreeMap<&'static str, f64>,
}

impl Run<'_> {
    fn dir(&self) -> &Path {
        &self.cfg.out
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let f = format!("{name}.csv");
        table.write_csv(&self.dir().join(&f)).op("write")?;
        self.files.push(f);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let f = format!("{name}.json");
        write_json(value, &self.dir().join(&f)).op("write")?;
        self.files.push(f);
        Ok(())
    }

    /// Plots are read back from the CSV already written.
    fn plot(&mut self, csv: &str, x: &str, ys: &[&str], group: Option<&str>, title: &str, ylabel: &str) -> Result<(), CliError> {
        if !self.cfg.plot {
            return Ok(());
        }
        let f = format!("{csv}.svg");
        plot_csv(
            &self.dir().join(format!("{csv}.csv")),
            x,
            ys,
            group,
            title,
            ylabel,
            &self.dir().join(&f),
        )?;
        self.files.push(f);
        Ok(())
    }
}

fn dist(cfg: &RunConfig) -> Result<LengthDistribution, CliError> {
    LengthDistribution::new(cfg.dist, cfg.l_min, cfg.l_max).op("length distribution")
}

fn realization(cfg: &RunConfig) -> Result<(Cube, LengthField), CliError> {
    let cube = build_cube(cfg.d, cfg.n).op("build_cube")?;
    let lf = sample_lengths(&dist(cfg)?, &cube, realization_seed(cfg.seed, 0));
    Ok((cube, lf))
}

fn spectrum_opts(cfg: &RunConfig) -> SpectrumOptions {
    SpectrumOptions {
        tol_eig: cfg.tol_eig,
        ..Default::default()
    }
}

fn lengths_table(cube: &Cube, lf: &LengthField) -> Table {
    let mut t = Table::new(&["edge", "base", "direction", "length"]);
    for (k, e) in cube.edges().iter().enumerate() {
        let base: Vec<String> = e.base.0.iter().map(|c| c.to_string()).collect();
        t.push(vec![k.to_string(), base.join(" "), e.direction.to_string(), fmt_f64(lf.get(k))]);
    }
    t
}

/// Runs one subcommand, writing all artifacts and manifest.json into `cfg.out`.
/// `Ok(false)` means the command ran but a check failed.
pub fn run_command(command: Command, cfg: &RunConfig) -> Result<bool, CliError> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", cfg.out.display())))?;
    let mut run = Run {
        cfg,
        files: Vec::new(),
        derived: BTreeMap::new(),
    };
    let ok = match command {
        Command::Bands => bands(&mut run)?,
        Command::Sigma => sigma(&mut run)?,
        Command::Infspec => infspec(&mut run)?,
        Command::Spectrum => spectrum(&mut run)?,
        Command::Oracle => oracle(&mut run)?,
        Command::Ids => ids(&mut run)?,
        Command::Wegner => wegner(&mut run)?,
        Command::Lifshitz => lifshitz(&mut run)?,
        Command::Localize => localize(&mut run)?,
        Command::Check => check(&mut run)?,
    };
    let manifest = Manifest {
        tool: "qgl",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        seed: cfg.seed,
        config: cfg,
        derived: &run.derived,
        files: &run.files,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&manifest, &cfg.out.join("manifest.json")).op("write")?;
    Ok(ok)
}

fn bands(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let beta = cfg.alpha / cfg.d as f64;
    let list = bands_p_tol(cfg.u, beta, cfg.window.1, cfg.tol_root).op("bands_p")?;
    let mut t = list.to_table();
    t.header.extend(["left_truncated".to_string(), "right_truncated".to_string()]);
    for (row, b) in t.rows.iter_mut().zip(&list.bands) {
        row.push(b.left_truncated.to_string());
        row.push(b.right_truncated.to_string());
    }
    run.table("bands", &t)?;
    let mut disp = Table::new(&["E", "D"]);
    for i in 0..cfg.points {
        let e = cfg.window.0 + (cfg.window.1 - cfg.window.0) * i as f64 / (cfg.points - 1) as f64;
        disp.push(vec![fmt_f64(e), fmt_f64(dispersion(e, cfg.u, beta).op("dispersion")?)]);
    }
    run.table("dispersion", &disp)?;
    run.plot("dispersion", "E", &["D"], None, "dispersion function", "D(E)")?;
    Ok(true)
}

fn sigma(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let opts = SigmaOptions {
        tol_root: cfg.tol_root,
        ..Default::default()
    };
    let s = sigma_union_with(cfg.alpha, cfg.d, cfg.l_min, cfg.l_max, cfg.window.1, opts).op("sigma_union")?;
    run.table("sigma_bands", &s.bands.to_table())?;
    run.table("sigma_edges", &s.edges_table())?;
    let delta = DeltaSet::new(cfg.l_min, cfg.l_max, cfg.window.1).op("delta_set")?;
    let mut t = Table::new(&["n", "lo", "hi"]);
    t.push(vec!["0".into(), fmt_f64(0.0), fmt_f64(0.0)]);
    for &(n, lo, hi) in &delta.intervals {
        t.push(vec![n.to_string(), fmt_f64(lo), fmt_f64(hi)]);
    }
    run.table("delta", &t)?;
    let mut conv = Table::new(&["refinement", "drift"]);
    for (i, d) in s.drift_history.iter().enumerate() {
        conv.push(vec![i.to_string(), fmt_f64(*d)]);
    }
    run.table("sigma_convergence", &conv)?;
    Ok(s.converged)
}

fn infspec(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let r = inf_sigma(cfg.alpha, cfg.d, cfg.l_min, cfg.l_max).op("inf_sigma")?;
    let mut t = Table::new(&["alpha", "d", "l_min", "l_max", "energy", "residual", "iterations"]);
    t.push(vec![
        fmt_f64(cfg.alpha),
        cfg.d.to_string(),
        fmt_f64(cfg.l_min),
        fmt_f64(cfg.l_max),
        fmt_f64(r.energy),
        fmt_f64(r.residual),
        r.iterations.to_string(),
    ]);
    run.table("infspec", &t)?;
    Ok(true)
}

fn excluded_table(res: &qgl_core::SpectrumResult) -> Table {
    let mut t = Table::new(&["lo", "hi", "dirichlet_values", "hidden_eigenvalues"]);
    for x in &res.excluded_intervals {
        t.push(vec![
            fmt_f64(x.lo),
            fmt_f64(x.hi),
            x.dirichlet_values.to_string(),
            x.hidden_eigenvalues.to_string(),
        ]);
    }
    t
}

/// Eigenvalues with the running count, for staircase plots.
fn counting_table(res: &qgl_core::SpectrumResult) -> Table {
    let mut t = Table::new(&["E", "count"]);
    let mut c = 0;
    for e in &res.eigenvalues {
        c += e.multiplicity;
        t.push(vec![fmt_f64(e.energy), c.to_string()]);
    }
    t
}

fn spectrum(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let (cube, lf) = realization(cfg)?;
    let res = spectrum_h(&cube, &lf, cfg.alpha, cfg.window, &spectrum_opts(cfg)).op("spectrum_h")?;
    run.table("eigenvalues", &res.to_table())?;
    run.table("excluded", &excluded_table(&res))?;
    run.table("lengths", &lengths_table(&cube, &lf))?;
    run.table("counting", &counting_table(&res))?;
    run.json("diagnostics", &res.diagnostics)?;
    run.plot("counting", "E", &["count"], None, "eigenvalue counting function", "N(E)")?;
    Ok(true)
}

fn oracle(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let (cube, lf) = realization(cfg)?;
    let fd = fd_oracle_spectrum(&cube, &lf, cfg.alpha, cfg.fd_points, cfg.window, &OracleOptions::default())
        .op("fd_oracle_spectrum")?;
    let h = spectrum_h(&cube, &lf, cfg.alpha, cfg.window, &spectrum_opts(cfg)).op("spectrum_h")?;
    run.table("oracle", &fd.to_table())?;
    run.table("eigenvalues", &h.to_table())?;
    let expand = |r: &qgl_core::SpectrumResult| -> Vec<f64> {
        r.eigenvalues
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.energy, e.multiplicity))
            .collect()
    };
    let (a, b) = (expand(&h), expand(&fd));
    let mut t = Table::new(&["index", "E_reduction", "E_oracle", "relative_difference"]);
    for i in 0..a.len().max(b.len()) {
        let x = a.get(i).copied().unwrap_or(f64::NAN);
        let y = b.get(i).copied().unwrap_or(f64::NAN);
        t.push(vec![i.to_string(), fmt_f64(x), fmt_f64(y), fmt_f64((x - y).abs() / x.abs().max(1.0))]);
    }
    run.table("comparison", &t)?;
    run.json("diagnostics", &fd.diagnostics)?;
    run.plot("comparison", "index", &["E_reduction", "E_oracle"], None, "reduction against oracle", "E")?;
    Ok(true)
}

fn ids(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let variant = if cfg.variant == "m" {
        IdsVariant::M { energy: cfg.energy }
    } else {
        IdsVariant::H
    };
    let grid: Vec<f64> = (0..cfg.points)
        .map(|i| cfg.window.0 + (cfg.window.1 - cfg.window.0) * i as f64 / (cfg.points - 1) as f64)
        .collect();
    if cfg.n < 2 {
        return Err(CliError::Usage(format!("ids: constraint violated: n >= 2 (n = {})", cfg.n)));
    }
    let curve = ids_estimate(cfg.d, cfg.n, cfg.alpha, &dist(cfg)?, cfg.realizations, &grid, variant, cfg.seed)
        .op("ids_estimate")?;
    run.table("ids", &curve.to_table())?;
    let x = if cfg.variant == "m" { "t" } else { "E" };
    run.plot("ids", x, &["ids", "lower", "upper"], None, "integrated density of states", "k")?;
    Ok(true)
}

fn write_report(run: &mut Run, report: &qgl_core::ExperimentReport) -> Result<(), CliError> {
    for t in &report.tables {
        run.table(&t.name, &t.table)?;
    }
    run.json("report", report)
}

fn wegner(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let p = WegnerParams {
        d: cfg.d,
        n_list: cfg.n_list.clone(),
        alpha: cfg.alpha,
        interval: cfg.window,
        widths: cfg.widths.clone(),
        dist: dist(cfg)?,
        realizations: cfg.realizations,
        seed: cfg.seed,
        centers: cfg.centers.clone(),
        raw: cfg.raw,
    };
    let report = wegner_experiment(&p).op("wegner_experiment")?;
    write_report(run, &report)?;
    run.plot("wegner", "width", &["probability"], Some("n"), "P(spectrum meets J)", "probability")?;
    Ok(true)
}

fn lifshitz(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let e0 = match cfg.e0 {
        Some(e) => e,
        None => inf_sigma(cfg.alpha, cfg.d, cfg.l_min, cfg.l_max).op("inf_sigma")?.energy,
    };
    run.derived.insert("e0", e0);
    let (lo, hi) = cfg.window;
    if !(lo > 0.0) {
        return Err(CliError::Usage(format!(
            "lifshitz: constraint violated: eps window lo > 0 (window = {:?})",
            cfg.window
        )));
    }
    let r = (hi / lo).powf(1.0 / (cfg.points - 1) as f64);
    let eps_grid = (0..cfg.points).map(|i| lo * r.powi(i as i32)).collect();
    let p = LifshitzParams {
        d: cfg.d,
        n_list: cfg.n_list.clone(),
        alpha: cfg.alpha,
        e0,
        beta_exponent: cfg.beta_exp,
        dist: dist(cfg)?,
        realizations: cfg.realizations,
        seed: cfg.seed,
        eps_grid,
        control: cfg.control,
        raw: cfg.raw,
    };
    let report = lifshitz_experiment(&p).op("lifshitz_experiment")?;
    write_report(run, &report)?;
    run.plot("lifshitz_probability", "n", &["probability", "lower", "upper"], None, "P(dist(spec, E0) <= n^(beta-1))", "probability")?;
    run.plot("lifshitz_ids", "eps", &["loglog_h", "loglog_m"], None, "log|log k| near the edge", "log|log k|")?;
    Ok(true)
}

fn localize(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let (cube, lf) = realization(cfg)?;
    let res = spectrum_h(&cube, &lf, cfg.alpha, cfg.window, &spectrum_opts(cfg)).op("spectrum_h")?;
    let mut t = Table::new(&["E", "multiplicity", "center", "decay_rate", "r_squared", "fit_points", "ipr"]);
    for e in &res.eigenvalues {
        let phi = vertex_eigenvector(&cube, &lf, e.energy, cfg.alpha).op("vertex_eigenvector")?;
        let (center, rate, r2, pts, ipr) = match localization_profile(&cube, e.energy, &phi) {
            Ok(p) => {
                let c: Vec<String> = p.center_coords.iter().map(|x| x.to_string()).collect();
                (c.join(" "), p.decay_rate, p.r_squared, p.fit_points, p.ipr)
            }
            Err(qgl_core::Error::DegenerateFit(_)) => (String::new(), f64::NAN, f64::NAN, 0, qgl_core::spectra::ipr(&phi)),
            Err(e) => return Err(CliError::Run { op: "localization_profile", source: e }),
        };
        t.push(vec![
            fmt_f64(e.energy),
            e.multiplicity.to_string(),
            center,
            fmt_f64(rate),
            fmt_f64(r2),
            pts.to_string(),
            fmt_f64(ipr),
        ]);
    }
    run.table("localization", &t)?;
    run.table("lengths", &lengths_table(&cube, &lf))?;
    run.plot("localization", "E", &["ipr"], None, "inverse participation ratio", "IPR")?;
    Ok(true)
}

struct Suite {
    table: Table,
    ok: bool,
}

impl Suite {
    fn row(&mut self, name: &str, pass: bool, value: f64, threshold: &str) {
        self.ok &= pass;
        self.table.push(vec![
            name.to_string(),
            if pass { "pass" } else { "fail" }.to_string(),
            fmt_f64(value),
            threshold.to_string(),
        ]);
    }
}

fn check(run: &mut Run) -> Result<bool, CliError> {
    let cfg = run.cfg;
    let mut s = Suite {
        table: Table::new(&["check", "status", "value", "threshold"]),
        ok: true,
    };
    let (cube, lf) = realization(cfg)?;
    let e = cfg.energy;

    let mut fd_err: f64 = 0.0;
    let step = 1e-5;
    for k in 0..cube.num_edges().min(8) {
        let l = lf.get(k);
        let plus = m_matrix(&cube, &lf.with_edge(k, l + step), e).to_dense();
        let minus = m_matrix(&cube, &lf.with_edge(k, l - step), e).to_dense();
        let exact = dm_dl(&cube, &lf, e, k).op("dm_dl")?.to_dense();
        fd_err = fd_err.max(((plus - minus) / (2.0 * step) - exact).abs().max());
    }
    s.row("dM/dl against central differences", fd_err < 1e-5, fd_err, "< 1e-5");

    let (lo, hi) = cfg.window;
    let gap = gap_constants(lo, hi, cfg.d, cfg.l_min, cfg.l_max).op("gap_constants")?;
    let mut slack = f64::INFINITY;
    for i in 0..5 {
        let x = lo + (hi - lo) * i as f64 / 4.0;
        let sum = dm_dl_sum(&cube, &lf, x).op("dm_dl_sum")?;
        let lam = dense_eigenvalues(&sum.to_dense()).op("eigenvalues")?[0];
        slack = slack.min(lam - gap.beta);
    }
    s.row("lambda_min(sum dM/dl) - beta on the window", slack >= 0.0, slack, ">= 0");

    let neg = negative_gap_check(&cube, &lf, -1.0, 0.5, 2.0).op("negative_gap_check")?;
    s.row("K - gamma id at E = -1", neg.margin >= -1e-10, neg.margin, ">= -1e-10");
    s.row("F M - M - K at E = -1", neg.factorization_residual < 1e-12, neg.factorization_residual, "< 1e-12");

    let b = hopping_sup(e, cfg.l_min, cfg.l_max);
    let le = local_energy_check(&LocalEnergyParams {
        d: cfg.d,
        n: cfg.n,
        energy: e,
        dist: dist(cfg)?,
        a: 0.5 * b,
        trials: cfg.trials,
        realizations: 3,
        seed: cfg.seed,
    })
    .op("local_energy_check")?;
    s.row("local energy estimate margin", le.min_margin >= -1e-10, le.min_margin, ">= -1e-10");

    let res = spectrum_h(&cube, &lf, cfg.alpha, cfg.window, &spectrum_opts(cfg)).op("spectrum_h")?;
    let mut mismatches = 0;
    for ev in &res.eigenvalues {
        let k = kernel_dims(&cube, &lf, ev.energy, cfg.alpha, &KernelOptions::default()).op("kernel_dims")?;
        if k.dim_ker_h != k.dim_ker_m {
            mismatches += 1;
        }
    }
    s.row(
        &format!("dim ker(H - E) = dim ker(M(E) - alpha) on {} eigenvalues", res.eigenvalues.len()),
        mismatches == 0,
        mismatches as f64,
        "= 0",
    );
    run.table("check", &s.table)?;
    Ok(s.ok)
}
