#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::chain::{chain_from_canonical, chain_to_canonical};

// Accepted documents must normalize to a canonical fixed point.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(chain) = chain_from_canonical(text) {
        let doc = chain_to_canonical(&chain);
        let again = chain_from_canonical(&doc).expect("canonical form must reparse");
        assert_eq!(again, chain);
        assert_eq!(chain_to_canonical(&again), doc);
    }
});
