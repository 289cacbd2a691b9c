#![no_main]

use adaeq::config::{parse_env_name, parse_f64_list, parse_u32_list};
use adaeq::mdp::EnvSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(xs) = parse_u32_list(text) {
        assert!(!xs.is_empty() && xs.len() <= 1 << 16);
    }
    if let Ok(xs) = parse_f64_list(text) {
        assert!(xs.iter().all(|x| x.is_finite()));
    }
    if let Ok(env) = parse_env_name(text) {
        let small = match &env {
            EnvSpec::Gridworld { width, height, .. } => width * height <= 4096,
            _ => true,
        };
        if small {
            let mdp = env.build().expect("named environments always build");
            assert!(mdp.validate().is_ok());
        }
    }
});
