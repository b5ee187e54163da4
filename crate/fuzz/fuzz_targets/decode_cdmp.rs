#![no_main]

use crowdfc::density::io::{decode_cdmp, encode_cdmp};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(seq) = decode_cdmp(data) {
        assert_eq!(encode_cdmp(&seq), data);
    }
});
