#![no_main]

use blurwarp::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&flag, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    // Low bit picks JSON or TOML; the rest of the flag byte adds an override.
    let overrides: Vec<String> = if flag & 2 == 0 { vec![] } else { text.lines().last().map(String::from).into_iter().collect() };
    if let Ok(cfg) = RunConfig::from_text(text, flag & 1 == 1, &overrides) {
        let back = RunConfig::from_text(&cfg.to_json(), true, &[]).unwrap();
        assert_eq!(back, cfg);
    }
});
