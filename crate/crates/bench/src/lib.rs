//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use otemachine::harness::LoadedScenario;
use otemachine::model::Liouvillian;

/// Generator of the shipped default scenario with `n_q` qubits at height `z` (μm).
pub fn default_generator(n_q: usize, z: f64) -> Liouvillian {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml");
    let text = std::fs::read_to_string(&path).expect("default scenario");
    let text = text.replace("n_q = 4", &format!("n_q = {n_q}"));
    let loaded = LoadedScenario::parse(&text, path.parent().unwrap()).expect("scenario parses");
    let p = loaded.point(z).expect("sweep point");
    p.liouvillian(&p.layout).expect("generator builds")
}
