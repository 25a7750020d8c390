use drsc::config::parse_config;
use proptest::prelude::*;
use serde_json::json;

fn config() -> impl Strategy<Value = serde_json::Value> {
    let ambiguity = prop_oneof![
        (0.0..1.0f64, any::<bool>())
            .prop_map(|(d, sq)| json!({"family": "wasserstein", "delta": d, "cost": if sq { "sq" } else { "abs" }})),
        (0.0..1.0f64, 1.01..5.0f64).prop_map(|(d, k)| json!({"family": "fk", "delta": d, "k": k})),
    ];
    let noise = prop_oneof![
        (0.01..0.99f64).prop_map(|p| json!({"kind": "exact", "atoms": [0.0, 1.0], "weights": [p, 1.0 - p]})),
        (0.0..1.0f64, 1..100usize, any::<u64>())
            .prop_map(|(p, n, seed)| json!({"kind": "bernoulli", "p": p, "n": n, "seed": seed})),
        Just(json!({"kind": "samples", "path": "data/w.csv", "header": true})),
    ];
    let model = prop_oneof![
        Just(json!({"kind": "lemma5"})),
        Just(json!({"kind": "queue", "actions": [1.0, 2.0], "service_cost": [0.1, 0.4], "x_max": 3.0, "r_max": 5.0})),
        Just(
            json!({"kind": "custom", "expr_dynamics": "min(x_0 + w_0 - a_0, 1)", "expr_reward": "x_0", "actions": [[0.0], [0.5]]})
        ),
    ];
    (
        model,
        0.01..0.99f64,
        ambiguity,
        any::<bool>(),
        proptest::option::of(2..50usize),
        noise,
        1e-10..1e-3f64,
        proptest::option::of(1..1000usize),
        proptest::option::of(2..300usize),
    )
        .prop_map(|(model, discount, ambiguity, cau, nodes, noise, tol, max_iters, cands)| {
            let mut v = json!({
                "model": model,
                "discount": discount,
                "ambiguity": ambiguity,
                "adversary": if cau { "cau" } else { "caa" },
                "noise": noise,
                "solver": {"tol": tol},
            });
            if let Some(n) = nodes {
                v["state_grid"] = json!([n]);
            }
            if let Some(m) = max_iters {
                v["solver"]["max_iters"] = json!(m);
            }
            if let Some(c) = cands {
                v["solver"]["candidates"] = json!(c);
            }
            v
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_serialize_parse_is_identity(v in config()) {
        let cfg = parse_config(&v.to_string()).unwrap();
        let back = parse_config(&cfg.to_json()).unwrap();
        prop_assert_eq!(&cfg, &back);
        prop_assert_eq!(cfg.digest(), back.digest());
        prop_assert_eq!(cfg.to_json(), back.to_json());
    }
}
