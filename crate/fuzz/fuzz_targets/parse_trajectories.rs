#![no_main]

use crowdfc::simdata::{format_trajectories, parse_trajectories};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = parse_trajectories(text) {
        let again = parse_trajectories(&format_trajectories(&ds)).expect("formatted output parses");
        assert_eq!(again, ds);
    }
});
