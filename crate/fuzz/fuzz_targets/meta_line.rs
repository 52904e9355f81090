#![no_main]

use hpcfair_core::registry::parse_meta_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = parse_meta_line(line);
    }
});
