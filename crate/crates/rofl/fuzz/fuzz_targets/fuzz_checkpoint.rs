//! Checkpoint binary decoder must never panic or overallocate; anything
//! it accepts must round-trip through the canonical serialization.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rofl::tinylm::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let bytes = ck.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).expect("canonical bytes must re-parse");
        assert_eq!(again.to_bytes(), bytes, "canonical serialization must be stable");
    }
});
