//! Conformance of the Gaussian stream against vectors produced by an
//! independent implementation (`testdata/gen_gaussian_vectors.py`).

use fedspzo::perturb::{gaussian_stream, Seed};
use serde_json::Value;

fn reference() -> Vec<(u64, Vec<f64>)> {
    let text = include_str!("../testdata/gaussian_vectors.json");
    let doc: Value = serde_json::from_str(text).unwrap();
    doc["vectors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| {
            let seed = v["seed"].as_u64().unwrap();
            let normals = v["normals"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            (seed, normals)
        })
        .collect()
}

#[test]
fn stream_matches_reference_vectors() {
    let vectors = reference();
    for required in [0, 1, 42, 100_000_000] {
        assert!(vectors.iter().any(|(s, _)| *s == required), "missing seed {required}");
    }
    for (seed, normals) in vectors {
        assert_eq!(normals.len(), 16);
        let mut stream = gaussian_stream(Seed(seed));
        for (i, &want) in normals.iter().enumerate() {
            let got = stream.next_normal();
            assert!(
                (got - want).abs() <= 1e-14 * want.abs().max(1.0),
                "seed {seed}, index {i}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn perturbation_uses_the_stream_prefix() {
    let mut theta = vec![0.0f64; 3];
    fedspzo::perturb::perturb_in_place(&mut theta, fedspzo::perturb::PerturbationSpec::new(Seed(7), 0.1)).unwrap();
    let mut stream = gaussian_stream(Seed(7));
    for v in theta {
        assert_eq!(v, 0.1 * stream.next_normal());
    }
}
