use incremental_lpv_cli::{ExperimentConfig, PlantConfig};
use proptest::prelude::*;
use serde_json::Value;

/// Every object key in the document, as a path of keys.
fn key_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                prefix.push(k.clone());
                out.push(prefix.clone());
                key_paths(child, prefix, out);
                prefix.pop();
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                prefix.push(format!("#{i}"));
                key_paths(child, prefix, out);
                prefix.pop();
            }
        }
        _ => {}
    }
}

fn rename(v: &mut Value, path: &[String], new: &str) {
    let (last, parents) = path.split_last().unwrap();
    let mut cur = v;
    for p in parents {
        cur = match p.strip_prefix('#') {
            Some(i) => &mut cur[i.parse::<usize>().unwrap()],
            None => &mut cur[p.as_str()],
        };
    }
    let m = cur.as_object_mut().unwrap();
    let child = m.remove(last).unwrap();
    m.insert(new.to_string(), child);
}

fn lti_config() -> ExperimentConfig {
    ExperimentConfig::parse(
        r#"{"plant": {"kind": "lti", "a": [[0.5, 0.1], [0.0, 0.3]], "b": [[1, 0], [0, 1]],
            "c": [[1, 0], [0, 1]], "d": [[0, 0], [0, 0]], "n_w": 1, "n_z": 1},
            "seed": 11, "quadrature_order": 8}"#,
    )
    .unwrap()
}

#[test]
fn configs_round_trip() {
    for cfg in [ExperimentConfig::default(), lti_config()] {
        let back = ExperimentConfig::parse(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }
    assert!(matches!(lti_config().plant, PlantConfig::Lti { .. }));
}

fn full_json() -> Value {
    serde_json::from_str(&ExperimentConfig::default().to_json()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Misspelling any key of the full default document is rejected.
    #[test]
    fn misspelled_key_rejected(index in any::<prop::sample::Index>(), pos in any::<prop::sample::Index>(), c in "[a-z_]") {
        let doc = full_json();
        let mut paths = Vec::new();
        key_paths(&doc, &mut Vec::new(), &mut paths);
        let path = index.get(&paths).clone();
        let key = path.last().unwrap().clone();
        let mut chars: Vec<char> = key.chars().collect();
        let i = pos.index(chars.len() + 1);
        chars.insert(i, c.chars().next().unwrap());
        let new: String = chars.into_iter().collect();
        let mut mutated = doc.clone();
        rename(&mut mutated, &path, &new);
        prop_assert!(ExperimentConfig::parse(&mutated.to_string()).is_err(), "accepted {new} for {key}");
    }
}
