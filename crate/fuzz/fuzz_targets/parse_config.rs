#![no_main]

use hpcfair_core::tasks::{parse_config, validate_config};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = parse_config(data) {
        let text = cfg.to_canonical_text();
        let again = parse_config(text.as_bytes()).expect("canonical text reparses");
        assert_eq!(again.to_canonical_text(), text);
        let _ = validate_config(&cfg);
    }
});
