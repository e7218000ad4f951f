#![no_main]

use libfuzzer_sys::fuzz_target;
use pointsup_core::io::{decode_label_png, decode_rgb_png, encode_label_png, encode_rgb_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = decode_label_png(data) {
        assert_eq!(decode_label_png(&encode_label_png(&labels).unwrap()).unwrap(), labels);
    }
    if let Ok(image) = decode_rgb_png(data) {
        assert_eq!(decode_rgb_png(&encode_rgb_png(&image).unwrap()).unwrap(), image);
    }
});
