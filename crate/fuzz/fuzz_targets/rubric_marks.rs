#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::scoring::{MarkSheet, Rubric};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rubric) = Rubric::parse(text) {
        let _ = rubric.validate();
        let _ = rubric.full_score();
    }
    let _ = MarkSheet::parse(text);
});
