#![no_main]

use libfuzzer_sys::fuzz_target;
use pointsup_core::objectness::{prior_from_windows, windows_from_jsonl, windows_to_jsonl, PriorOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(windows) = windows_from_jsonl(text) else {
        return;
    };
    assert_eq!(windows_from_jsonl(&windows_to_jsonl(&windows)).unwrap(), windows);
    if let Ok(prior) = prior_from_windows(&windows, 16, 16, &PriorOptions::default()) {
        assert!(prior.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
