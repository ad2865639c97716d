#![no_main]

use libfuzzer_sys::fuzz_target;
use lisa::prism::parse_prism;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = parse_prism(text) {
        let again = parse_prism(&doc.to_string()).expect("rendered document parses");
        assert_eq!(again, doc);
    }
});
