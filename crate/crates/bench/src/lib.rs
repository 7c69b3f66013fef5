//! Fixtures shared by the kernel benchmarks.

use invdim_core::systems::default_system;
use invdim_core::{PointCloud, SystemDescriptor};

pub const SEED: u64 = 42;

/// A built-in system at default parameters with a sample of `budget` points.
pub fn fixture(name: &str, budget: usize) -> (SystemDescriptor, PointCloud) {
    let sys = default_system(name).expect("built-in system");
    let cloud = sys.sample_invariant_set(budget, SEED).expect("sampling a built-in system");
    (sys, cloud)
}
