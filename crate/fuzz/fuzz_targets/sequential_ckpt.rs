#![no_main]

use hpcfair_core::converters::{convert_checkpoint, Backend};
use hpcfair_core::interchange::validate_graph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = convert_checkpoint(Backend::Pt, data, "m", 10) {
        assert!(validate_graph(&g).ok);
    }
});
