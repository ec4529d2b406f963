//! Benchmark fixtures.

use svcplace::experiments::{service_types, table1_config};
use svcplace::{CandidateSet, ServiceParams, SystemConfig};

pub fn service(s_max: usize) -> ServiceParams {
    ServiceParams::new(20.0, 5.0, s_max).expect("valid parameters")
}

/// Two-service system with load ratio 4 at the given truncation.
pub fn pair(s_max: usize) -> SystemConfig {
    table1_config(4, s_max).expect("valid system")
}

/// `n` identical services, one slot, and the 3 x 3 candidate grid.
pub fn learning_system(n: usize) -> (SystemConfig, CandidateSet) {
    let p = ServiceParams::new(10.0, 5.0, 5).expect("valid parameters");
    let config = SystemConfig::new(vec![p; n], 1).expect("valid system");
    let f = [2.0 / 3.0, 1.0, 1.5];
    let cands = CandidateSet::grid_around(&config, service_types(&config), &f, &f).expect("valid grid");
    (config, cands)
}
