//! Fingerprint ASCII parser must never panic; accepted inputs must
//! survive a serialize/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rofl::fpgen::{fingerprints_to_bytes, parse_fingerprints};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(fps) = parse_fingerprints(text) {
        let bytes = fingerprints_to_bytes(&fps);
        let again = parse_fingerprints(std::str::from_utf8(&bytes).unwrap())
            .expect("canonical bytes must re-parse");
        assert_eq!(fps.len(), again.len());
    }
});
