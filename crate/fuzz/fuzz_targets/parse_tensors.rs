#![no_main]

use hpcfair_core::interchange::{parse_tensors, serialize_tensors};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ts) = parse_tensors(data) {
        let bytes = serialize_tensors(&ts);
        let again = parse_tensors(&bytes).expect("serialized tensors reparse");
        assert_eq!(serialize_tensors(&again), bytes);
    }
});
