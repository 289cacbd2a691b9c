use adaeq::config::{parse_env_name, parse_f64_list, parse_u32_list, RunConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn integer_lists_round_trip(xs in prop::collection::vec(any::<u32>(), 1..40)) {
        let text = xs.iter().map(u32::to_string).collect::<Vec<_>>().join(", ");
        prop_assert_eq!(parse_u32_list(&text).unwrap(), xs);
    }

    #[test]
    fn ranges_are_inclusive(lo in 0u32..1000, len in 0u32..500, eq in any::<bool>()) {
        let hi = lo + len;
        let text = if eq { format!("{lo}..={hi}") } else { format!("{lo}..{hi}") };
        prop_assert_eq!(parse_u32_list(&text).unwrap(), (lo..=hi).collect::<Vec<_>>());
    }

    #[test]
    fn float_lists_round_trip(xs in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let text = xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_f64_list(&text).unwrap(), xs);
    }

    #[test]
    fn parsers_never_panic(s in ".{0,40}") {
        let _ = parse_u32_list(&s);
        let _ = parse_f64_list(&s);
        let _ = parse_env_name(&s);
        let _ = RunConfig::from_toml(&s);
    }

    #[test]
    fn named_grids_build(w in 1usize..12, h in 1usize..12, det in any::<bool>()) {
        prop_assume!(w * h >= 2);
        let name = format!("grid{w}x{h}{}", if det { "-det" } else { "" });
        let mdp = parse_env_name(&name).unwrap().build().unwrap();
        prop_assert_eq!(mdp.n_states, w * h);
    }

    #[test]
    fn config_toml_round_trip(steps in 1u64..1_000_000, seeds in 1u32..20, master in any::<u64>()) {
        let cfg = RunConfig { steps, seeds, master_seed: master, ..Default::default() };
        prop_assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
