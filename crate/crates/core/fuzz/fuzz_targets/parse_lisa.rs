#![no_main]

use libfuzzer_sys::fuzz_target;
use lisa::agent_model::AgentSpec;
use lisa::dsl;

/// Source text is kept for display only and is not always printable.
fn without_sources(mut spec: AgentSpec) -> AgentSpec {
    for b in &mut spec.beliefs {
        b.source.clear();
    }
    for a in &mut spec.actions {
        a.source.clear();
    }
    spec
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(parsed) = dsl::parse(text) {
        let printed = dsl::print(&parsed.spec);
        let again = dsl::parse(&printed).expect("printed program parses");
        assert_eq!(dsl::print(&again.spec), printed);
        assert_eq!(without_sources(again.spec), without_sources(parsed.spec));
    }
});
