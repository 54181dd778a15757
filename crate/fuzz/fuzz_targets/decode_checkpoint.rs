#![no_main]

use blurwarp_tensor::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = Checkpoint::decode(data) else { return };
    assert_eq!(ckpt.encode(), data);
    if let Ok(params) = ckpt.params() {
        let _ = ckpt.optimizer(&params);
    }
});
