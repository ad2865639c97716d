#![no_main]

use libfuzzer_sys::fuzz_target;
use lisa::abstraction::{read_model, write_model};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = read_model(text) {
        let again = read_model(&write_model(&model)).expect("written model reads back");
        assert_eq!(write_model(&again), write_model(&model));
    }
});
