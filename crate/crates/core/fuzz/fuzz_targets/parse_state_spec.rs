#![no_main]

use libfuzzer_sys::fuzz_target;
use lisa::abstraction::StateSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = StateSpec::parse(text) {
        assert_eq!(StateSpec::parse(&spec.to_string()).expect("rendered spec parses"), spec);
    }
});
