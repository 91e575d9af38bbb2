#![no_main]

use basket_core::config::RunConfig;
use basket_core::output::Provenance;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(p) = Provenance::from_json(src) {
        let json = p.to_json().unwrap();
        Provenance::from_json(&json).expect("provenance round trips");
    }
    let _ = RunConfig::from_provenance(src);
});
