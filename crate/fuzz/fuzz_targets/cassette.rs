#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::provider::Cassette;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cassette) = Cassette::parse(text) {
        let doc = cassette.to_document();
        let again = Cassette::parse(&doc).expect("canonical form must reparse");
        assert_eq!(again, cassette);
    }
});
