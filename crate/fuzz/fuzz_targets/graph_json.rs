//! Fuzzes the lane-graph JSON parser.
//!
//! ```bash
//! cargo +nightly fuzz run graph_json
//! ```

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = lanegraph::graph::parse_graph_json(data) {
        // Anything the parser accepts must satisfy the structural contract:
        // edge endpoints are valid dense node ids.
        let n = g.n_nodes() as u32;
        assert!(g.edges().iter().all(|&(a, b)| a < n && b < n));
        assert!(g.nodes().iter().all(|p| p.x.is_finite() && p.y.is_finite()));
    }
});
