#![no_main]

use libfuzzer_sys::fuzz_target;

// Model output is untrusted: the parser must be total, and anything it
// accepts must satisfy the chain invariants.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(parsed) = loca::augmenter::parse_chain(text, "fuzz") {
        assert!(loca::chain::validate_chain(&parsed.chain).is_empty());
    }
});
