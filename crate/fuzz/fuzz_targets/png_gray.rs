//! Fuzzes PNG decoding into a gray raster.
//!
//! ```bash
//! cargo +nightly fuzz run png_gray
//! ```

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = lanegraph::raster::decode_gray_png(data) {
        assert_eq!(r.data().len(), r.width * r.height);
        assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
