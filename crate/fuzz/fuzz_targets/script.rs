#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::provider::ScriptedProvider;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rules) = ScriptedProvider::parse_script(text) {
        let doc = ScriptedProvider::script_to_document(&rules);
        let again = ScriptedProvider::parse_script(&doc).expect("canonical form must reparse");
        assert_eq!(again, rules);
    }
});
