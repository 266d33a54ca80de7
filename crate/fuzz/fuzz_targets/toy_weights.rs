//! Fuzzes the toy-denoiser weights decoder.
//!
//! ```bash
//! cargo +nightly fuzz run toy_weights
//! ```

#![no_main]

use std::sync::OnceLock;

use lanegraph::diffusion::{parse_toy_weights, VarianceSchedule};
use libfuzzer_sys::fuzz_target;

static SCHED: OnceLock<VarianceSchedule> = OnceLock::new();

fuzz_target!(|data: &[u8]| {
    let sched = SCHED.get_or_init(VarianceSchedule::default);
    if let Ok(net) = parse_toy_weights(data, sched.clone()) {
        // Accepted files must describe a usable network.
        assert!(net.n_params() > 0);
    }
});
