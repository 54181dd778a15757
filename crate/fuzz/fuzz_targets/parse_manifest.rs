#![no_main]

use blurwarp::synth::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::from_json(text) {
        let back = DatasetManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
});
