#![no_main]

use libfuzzer_sys::fuzz_target;
use pointsup_core::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&params)).expect("re-encoded checkpoint decodes");
        assert_eq!(again.shape, params.shape);
    }
});
