#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(list) = std::str::from_utf8(data) else { return };
    let src = format!("preset = \"paper_4plus1\"\n[calibration]\nmethod = \"rcap\"\nscenarios = {list}\n");
    if let Ok(run) = basket_core::config::load_run(&src) {
        let spec = run.calibration.expect("calibration section present");
        for s in &spec.scenarios {
            assert_eq!(s.p.len(), run.design.k());
            assert!(s.p.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
});
