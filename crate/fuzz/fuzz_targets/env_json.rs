#![no_main]

use adaeq::mdp::{EnvSpec, MdpSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mdp) = MdpSpec::from_json(text) {
        let again = MdpSpec::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(again, mdp);
    }
    if let Ok(env) = serde_json::from_str::<EnvSpec>(text) {
        // keep builds small
        let size = match &env {
            EnvSpec::Gridworld { width, height, .. } => width.saturating_mul(*height),
            EnvSpec::RandomMdp { n_states, n_actions, .. } | EnvSpec::Ring { n_states, n_actions, .. } => n_states.saturating_mul(*n_actions),
            EnvSpec::Explicit(m) => m.n_states,
        };
        if size <= 4096 {
            let _ = env.build();
        }
    }
});
