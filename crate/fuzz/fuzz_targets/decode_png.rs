#![no_main]

use blurwarp::io::{decode_png, encode_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png(data) {
        // Decoded values sit on the 8-bit grid, so a re-encode is lossless.
        let again = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(again.data(), img.data());
    }
});
