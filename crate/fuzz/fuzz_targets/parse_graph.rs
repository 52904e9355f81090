#![no_main]

use hpcfair_core::interchange::{infer_declared, parse_graph, serialize_graph, validate_graph};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = parse_graph(data) {
        let bytes = serialize_graph(&g);
        let again = parse_graph(&bytes).expect("serialized graph reparses");
        assert_eq!(serialize_graph(&again), bytes);
        if validate_graph(&g).ok {
            let _ = infer_declared(&g);
        }
    }
});
