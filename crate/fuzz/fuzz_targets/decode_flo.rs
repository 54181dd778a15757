#![no_main]

use blurwarp::io::{decode_flo, encode_flo};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = decode_flo(data) {
        assert_eq!(encode_flo(&flow).unwrap(), data);
    }
});
