#![allow(dead_code)]

use lanetopo::numerics::{Matrix, ParamId, ParamStore, Tape, Var};
use lanetopo::scene_gen::{generate_scene, perturb_scene, Layout, NoiseConfig, SceneConfig};
use lanetopo::training::Sample;
use lanetopo::types::{LaneLine, Point3};
use rand::Rng;

pub fn sample(layout: Layout, seed: u64, sigma: f64) -> Sample {
    let scene = generate_scene(&SceneConfig::standard(layout, seed)).unwrap();
    let candidates = perturb_scene(
        &scene,
        &NoiseConfig {
            endpoint_sigma: sigma,
            drop_prob: 0.0,
            distractor_count: 2,
            rng_seed: seed ^ 0x5eed,
        },
    )
    .unwrap();
    Sample { scene, candidates }
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_lane<R: Rng>(rng: &mut R, points: usize) -> LaneLine {
    let pts = (0..points)
        .map(|_| {
            Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap()
        })
        .collect();
    LaneLine::new(pts).unwrap()
}

/// `sum(out ⊙ r)` so every output entry contributes to the scalar.
pub fn project(tape: &mut Tape, out: Var, r: &Matrix) -> Var {
    let c = tape.constant(r.clone()).unwrap();
    let p = tape.mul(out, c).unwrap();
    tape.sum(p).unwrap()
}

pub fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}
