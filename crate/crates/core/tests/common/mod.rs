#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use otemachine::dynamics::{steady_state, SteadyState};
use otemachine::harness::LoadedScenario;
use otemachine::linalg::{c64, trace, CMatrix};
use otemachine::model::Liouvillian;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load_scenario(name: &str) -> LoadedScenario {
    LoadedScenario::load(&scenario_path(name)).expect("shipped scenario parses")
}

/// Replaces the `[sweep]` table of a shipped scenario.
pub fn with_sweep(name: &str, sweep: &str) -> LoadedScenario {
    let path = scenario_path(name);
    let text = std::fs::read_to_string(&path).unwrap();
    let head = text.split("[sweep]").next().unwrap();
    let tail = text.split("[sweep]").nth(1).map(|t| match t.find("\n[") {
        Some(k) => t[k..].to_string(),
        None => String::new(),
    });
    let source = format!("{head}[sweep]\n{sweep}\n{}", tail.unwrap_or_default());
    LoadedScenario::parse(&source, path.parent().unwrap()).expect("edited scenario parses")
}

pub struct SolvedPoint {
    pub value: f64,
    pub l: Liouvillian,
    pub ss: SteadyState,
}

pub fn solve_sweep(s: &LoadedScenario) -> Vec<SolvedPoint> {
    s.sweep_values()
        .into_iter()
        .map(|value| {
            let p = s.point(value).unwrap();
            let l = p.liouvillian(&p.layout).unwrap();
            let ss = steady_state(&l).unwrap();
            SolvedPoint { value, l, ss }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    DMatrix::from_fn(n, n, |_, _| {
        c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

/// Full-rank mixed state `G G† / tr`.
pub fn random_density(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let g = random_matrix(rng, n);
    let rho = &g * g.adjoint();
    let t = trace(&rho);
    rho / t
}
