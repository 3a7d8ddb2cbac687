#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::session::{summary_from_document, summary_to_document};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(summary) = summary_from_document(text) {
        let doc = summary_to_document(&summary);
        let again = summary_from_document(&doc).expect("canonical form must reparse");
        assert_eq!(again, summary);
    }
});
