use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use qgl_core::ensemble::DistKind;
use serde::Serialize;

use crate::error::CliError;

const CONFIG_HELP: &str = "\
CONFIG FILE
  One `key = value` pair per line. Keys are the long flag names without the
  leading dashes (`l-min` and `l_min` are the same key). Lists are comma
  separated, `#` starts a comment, blank lines are ignored. Flags given on the
  command line override file values, which override the built-in defaults.

      # wegner.cfg
      d = 1
      n-list = 32,64,128
      window = 1,2
      widths = 0.04,0.02,0.01
      realizations = 2000

OUTPUT
  Every run writes manifest.json (resolved configuration, seed, version,
  wall-clock) and its CSV tables into --out, or $QGL_OUT/<command> when --out
  is absent, or ./qgl-out/<command>. Energies carry 17 significant digits.

EXIT CODES
  0 success, 1 numerical failure or failed check, 2 usage error.";

#[derive(Parser, Debug)]
#[command(
    name = "qgl",
    version,
    about = "Spectra and Monte Carlo experiments for Z^d quantum-graph lattices with random edge lengths",
    arg_required_else_help = true,
    after_help = CONFIG_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Bands of the periodic chain with spacing --u and coupling alpha/d.
    Bands,
    /// Almost-sure spectrum, forbidden set and spectral edges.
    Sigma,
    /// Bottom of the almost-sure spectrum.
    Infspec,
    /// Eigenvalues in --window for one random realization.
    Spectrum,
    /// Finite-difference eigenvalues for the same realization, with a comparison.
    Oracle,
    /// Averaged integrated density of states.
    Ids,
    /// Probability of eigenvalues in shrinking intervals J.
    Wegner,
    /// Eigenvalues near a spectral edge and the IDS tail there.
    Lifshitz,
    /// Eigenvalues with eigenvector decay rates and participation ratios.
    Localize,
    /// Invariant suite: gradients, gap constants, local energy, multiplicities.
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bands => "bands",
            Command::Sigma => "sigma",
            Command::Infspec => "infspec",
            Command::Spectrum => "spectrum",
            Command::Oracle => "oracle",
            Command::Ids => "ids",
            Command::Wegner => "wegner",
            Command::Lifshitz => "lifshitz",
            Command::Localize => "localize",
            Command::Check => "check",
        }
    }

    fn default_window(self) -> (f64, f64) {
        match self {
            Command::Bands | Command::Sigma => (-5.0, 40.0),
            Command::Wegner | Command::Check => (1.0, 2.0),
            Command::Lifshitz => (0.08, 0.65),
            _ => (-2.0, 6.5),
        }
    }

    fn default_points(self) -> usize {
        match self {
            Command::Bands => 401,
            Command::Lifshitz => 16,
            _ => 101,
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Lattice dimension [default: 1].
    #[arg(long, global = true)]
    pub d: Option<usize>,
    /// Cube size, |v| <= n [default: 8].
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub n: Option<i64>,
    /// Cube sizes for finite-size experiments [default: 16,32,64].
    #[arg(long = "n-list", global = true, value_delimiter = ',')]
    pub n_list: Option<Vec<i64>>,
    /// Vertex coupling [default: 1].
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Lower end of the length support [default: 0.8].
    #[arg(long = "l-min", global = true, allow_negative_numbers = true)]
    pub l_min: Option<f64>,
    /// Upper end of the length support [default: 1.2].
    #[arg(long = "l-max", global = true, allow_negative_numbers = true)]
    pub l_max: Option<f64>,
    /// Length density: uniform, triangular, raised_cosine [default: raised_cosine].
    #[arg(long, global = true)]
    pub dist: Option<String>,
    /// Master seed [default: 1].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo realizations [default: 100].
    #[arg(long, global = true)]
    pub realizations: Option<usize>,
    /// Energy window `lo,hi`; the interval I for wegner, the eps range for lifshitz.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// Decreasing widths |J| [default: 0.04,0.02,0.01].
    #[arg(long, global = true, value_delimiter = ',')]
    pub widths: Option<Vec<f64>>,
    /// Spectral edge for lifshitz [default: bottom of the almost-sure spectrum].
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub e0: Option<f64>,
    /// Exponent beta in the radius n^(beta - 1) [default: 0.5].
    #[arg(long = "beta-exp", global = true)]
    pub beta_exp: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available parallelism].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write SVG line plots.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Root tolerance for band edges [default: 1e-10].
    #[arg(long = "tol-root", global = true)]
    pub tol_root: Option<f64>,
    /// Tolerance on eigenvalues of M(E) [default: 1e-6].
    #[arg(long = "tol-eig", global = true)]
    pub tol_eig: Option<f64>,
    /// Chain spacing for bands [default: 1].
    #[arg(long, global = true)]
    pub u: Option<f64>,
    /// Grid points (bands, ids, lifshitz).
    #[arg(long, global = true)]
    pub points: Option<usize>,
    /// IDS variant: h or m [default: h].
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Fixed energy for the m variant and for check [default: 1.5].
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub energy: Option<f64>,
    /// Centers of J for wegner [default: midpoint of the window].
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub centers: Option<Vec<f64>>,
    /// Random vectors per realization in the local energy check [default: 1000].
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Finite-difference points per edge for the oracle [default: 32].
    #[arg(long = "fd-points", global = true)]
    pub fd_points: Option<usize>,
    /// Run lifshitz without the edge admissibility check (negative control).
    #[arg(long, global = true)]
    pub control: bool,
    /// Dump per-realization eigenvalues.
    #[arg(long, global = true)]
    pub raw: bool,
}

/// Fully resolved run parameters; echoed into manifest.json.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub d: usize,
    pub n: i64,
    pub n_list: Vec<i64>,
    pub alpha: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub dist: DistKind,
    pub seed: u64,
    pub realizations: usize,
    pub window: (f64, f64),
    pub widths: Vec<f64>,
    pub e0: Option<f64>,
    pub beta_exp: f64,
    pub out: PathBuf,
    pub threads: usize,
    pub plot: bool,
    pub tol_root: f64,
    pub tol_eig: f64,
    pub u: f64,
    pub points: usize,
    pub variant: String,
    pub energy: f64,
    pub centers: Vec<f64>,
    pub trials: usize,
    pub fd_points: usize,
    pub control: bool,
    pub raw: bool,
}

/// Key = value pairs from a config file, with `-` and `_` unified.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn take<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let from_file = self.file.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, flag: Option<Vec<T>>) -> Result<Option<Vec<T>>, CliError> {
        let from_file = self.file.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match from_file {
            None => Ok(None),
            Some(v) => parse_list(&v)
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse list `{v}`"))),
        }
    }

    fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        Ok(flag || self.take::<bool>(key, None)?.unwrap_or(false))
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, ()> {
    s.split(',').map(|x| x.trim().parse().map_err(|_| ())).collect()
}

fn parse_window(s: &str) -> Result<(f64, f64), CliError> {
    let v: Vec<f64> = parse_list(s).map_err(|_| CliError::Usage(format!("window `{s}`: expected `lo,hi`")))?;
    match v.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(CliError::Usage(format!("window `{s}`: expected `lo,hi`"))),
    }
}

fn violated(what: &str, detail: String) -> CliError {
    CliError::Usage(format!("constraint violated: {what} ({detail})"))
}

/// Flags override file values, which override defaults. All physical
/// constraints are checked here, before any computation.
pub fn resolve(command: Command, flags: Flags, env_out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let file = match &flags.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let mut r = Resolver { file };
    let d = r.take("d", flags.d)?.unwrap_or(1);
    let n = r.take("n", flags.n)?.unwrap_or(8);
    let n_list = r.list("n-list", flags.n_list)?.unwrap_or_else(|| vec![16, 32, 64]);
    let alpha = r.take("alpha", flags.alpha)?.unwrap_or(1.0);
    let l_min = r.take("l-min", flags.l_min)?.unwrap_or(0.8);
    let l_max = r.take("l-max", flags.l_max)?.unwrap_or(1.2);
    let dist_name = r.take("dist", flags.dist)?.unwrap_or_else(|| "raised_cosine".into());
    let dist: DistKind = dist_name.parse().map_err(|e: qgl_core::Error| CliError::Usage(e.to_string()))?;
    let seed = r.take("seed", flags.seed)?.unwrap_or(1);
    let realizations = r.take("realizations", flags.realizations)?.unwrap_or(100);
    let window = match r.take::<String>("window", flags.window)? {
        Some(w) => parse_window(&w)?,
        None => command.default_window(),
    };
    let widths = r.list("widths", flags.widths)?.unwrap_or_else(|| vec![0.04, 0.02, 0.01]);
    let e0 = r.take("e0", flags.e0)?;
    let beta_exp = r.take("beta-exp", flags.beta_exp)?.unwrap_or(0.5);
    let out = r.take::<PathBuf>("out", flags.out)?.unwrap_or_else(|| {
        env_out
            .unwrap_or_else(|| PathBuf::from("qgl-out"))
            .join(command.name())
    });
    let threads = r.take("threads", flags.threads)?.unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    });
    let plot = r.switch("plot", flags.plot)?;
    let tol_root = r.take("tol-root", flags.tol_root)?.unwrap_or(1e-10);
    let tol_eig = r.take("tol-eig", flags.tol_eig)?.unwrap_or(1e-6);
    let u = r.take("u", flags.u)?.unwrap_or(1.0);
    let points = r.take("points", flags.points)?.unwrap_or(command.default_points());
    let variant = r.take("variant", flags.variant)?.unwrap_or_else(|| "h".into());
    let energy = r.take("energy", flags.energy)?.unwrap_or(1.5);
    let centers = r.list("centers", flags.centers)?.unwrap_or_default();
    let trials = r.take("trials", flags.trials)?.unwrap_or(1000);
    let fd_points = r.take("fd-points", flags.fd_points)?.unwrap_or(32);
    let control = r.switch("control", flags.control)?;
    let raw = r.switch("raw", flags.raw)?;
    if let Some(k) = r.file.keys().next() {
        return Err(CliError::Usage(format!("unknown config key `{k}`")));
    }

    if !(l_min > 0.0) {
        return Err(violated("l_min > 0", format!("l_min = {l_min}")));
    }
    if !(l_min < l_max) {
        return Err(violated("l_min < l_max", format!("l_min = {l_min}, l_max = {l_max}")));
    }
    if d < 1 {
        return Err(violated("d >= 1", format!("d = {d}")));
    }
    if n < 0 || n_list.iter().any(|&m| m < 0) {
        return Err(violated("n >= 0", format!("n = {n}, n_list = {n_list:?}")));
    }
    if n_list.is_empty() {
        return Err(violated("n_list non-empty", "empty list".into()));
    }
    if realizations < 1 {
        return Err(violated("realizations >= 1", format!("realizations = {realizations}")));
    }
    if !(window.0 < window.1) || !window.0.is_finite() || !window.1.is_finite() {
        return Err(violated("window lo < hi", format!("window = {window:?}")));
    }
    if widths.is_empty() || widths.iter().any(|w| !(*w > 0.0)) || widths.windows(2).any(|w| w[1] >= w[0]) {
        return Err(violated("widths positive and strictly decreasing", format!("widths = {widths:?}")));
    }
    if threads < 1 {
        return Err(violated("threads >= 1", format!("threads = {threads}")));
    }
    if points < 2 {
        return Err(violated("points >= 2", format!("points = {points}")));
    }
    if !(tol_root > 0.0 && tol_eig > 0.0) {
        return Err(violated("tolerances > 0", format!("tol_root = {tol_root}, tol_eig = {tol_eig}")));
    }
    if !(u > 0.0) {
        return Err(violated("u > 0", format!("u = {u}")));
    }
    if variant != "h" && variant != "m" {
        return Err(violated("variant in {h, m}", format!("variant = {variant}")));
    }
    if fd_points < 16 {
        return Err(violated("fd_points >= 16", format!("fd_points = {fd_points}")));
    }
    Ok(RunConfig {
        command: command.name().into(),
        d,
        n,
        n_list,
        alpha,
        l_min,
        l_max,
        dist,
        seed,
        realizations,
        window,
        widths,
        e0,
        beta_exp,
        out,
        threads,
        plot,
        tol_root,
        tol_eig,
        u,
        points,
        variant,
        energy,
        centers,
        trials,
        fd_points,
        control,
        raw,
    })
}
