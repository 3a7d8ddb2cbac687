#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::interpreter::{structured_from_document, structured_to_document};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(problem) = structured_from_document(text) {
        let doc = structured_to_document(&problem);
        let again = structured_from_document(&doc).expect("canonical form must reparse");
        assert_eq!(again, problem);
    }
});
