//! Fixed workloads shared by the benchmarks.

use qgl_core::ensemble::{realization_seed, sample_lengths, DistKind, LengthDistribution};
use qgl_core::reduction::LengthField;
use qgl_core::{build_cube, Cube};

/// A cube with one raised-cosine realization on `[0.8, 1.2]`.
pub fn workload(d: usize, n: i64, seed: u64) -> (Cube, LengthField) {
    let cube = build_cube(d, n).expect("valid cube");
    let dist = LengthDistribution::new(DistKind::RaisedCosine, 0.8, 1.2).expect("valid support");
    let lf = sample_lengths(&dist, &cube, realization_seed(seed, 0));
    (cube, lf)
}
