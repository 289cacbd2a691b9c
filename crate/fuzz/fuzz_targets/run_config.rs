#![no_main]

use adaeq::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        if let Ok(again) = cfg.to_toml() {
            assert_eq!(RunConfig::from_toml(&again).ok(), Some(cfg));
        }
    }
});
