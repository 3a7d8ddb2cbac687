#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(problem) = loca::interpreter::parse_structured(text) {
        assert!(!problem.objectives.is_empty());
    }
});
