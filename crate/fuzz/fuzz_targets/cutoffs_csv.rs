#![no_main]

use basket_core::output::{read_cutoffs, write_cutoffs};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sets) = read_cutoffs(data) {
        let mut buf = Vec::new();
        write_cutoffs(&mut buf, &sets).unwrap();
        read_cutoffs(&buf[..]).expect("written cutoffs read back");
    }
});
