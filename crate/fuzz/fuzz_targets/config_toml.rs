#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(run) = basket_core::config::load_run(src) {
            let again = run.effective_toml().expect("resolved config serialises");
            basket_core::config::load_run(&again).expect("effective config reloads");
        }
    }
});
