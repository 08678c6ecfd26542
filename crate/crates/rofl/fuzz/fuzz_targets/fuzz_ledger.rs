//! Ledger text parser must never panic; accepted records must keep
//! their integrity invariants.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rofl::ledger::Ledger;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = Ledger::parse(text) {
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.seq, i as u64);
            if i > 0 {
                assert!(r.timestamp_ms >= records[i - 1].timestamp_ms);
            }
        }
    }
});
