#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::config::ConfigFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ConfigFile::parse(text) {
        let toml = config.to_toml();
        let again = ConfigFile::parse(&toml).expect("canonical form must reparse");
        assert_eq!(again, config);
    }
});
