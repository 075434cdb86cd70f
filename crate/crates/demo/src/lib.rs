//! wasm-bindgen entry points for the static page in `www/`.
//! Every function returns a JSON string; errors become JS exceptions.

use serde::Serialize;
use singlab::experiments::{mc_singularity, ExperimentConfig};
use singlab::levy::{levy, sum_dist, Coeffs};
use singlab::rational::{format_rational, to_f64};
use singlab::DiscreteDist;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PredictedPoint {
    n: u32,
    p_e1: f64,
    p_e1_minus: f64,
    p_e1_plus: f64,
    conjecture: f64,
}

pub fn predicted_curve_json(dist: &str, n_max: u32) -> Result<String, String> {
    let d = DiscreteDist::parse(dist).map_err(|e| e.to_string())?;
    let pts: Vec<PredictedPoint> = (1..=n_max.min(200))
        .map(|n| {
            let p = d.predicted(n);
            PredictedPoint {
                n,
                p_e1: to_f64(&p.p_e1),
                p_e1_minus: to_f64(&p.p_e1_minus),
                p_e1_plus: to_f64(&p.p_e1_plus),
                conjecture: to_f64(&p.conjecture),
            }
        })
        .collect();
    Ok(serde_json::to_string(&pts).unwrap())
}

#[derive(Serialize)]
struct LevyPoint {
    r: f64,
    value: f64,
    exact: String,
}

/// L(Σ b_i x_i, r) on `points` radii evenly spaced in [0, r_max].
pub fn levy_profile_json(dist: &str, x: &str, r_max: f64, points: u32) -> Result<String, String> {
    let d = DiscreteDist::parse(dist).map_err(|e| e.to_string())?;
    let text = if x.trim_start().starts_with('[') { x.to_string() } else { x.replace(',', "\n") };
    let coeffs = Coeffs::parse_text(&text).map_err(|e| e.to_string())?;
    if coeffs.len() > 24 {
        return Err("at most 24 coordinates in the browser".into());
    }
    let s = match sum_dist(&d, &coeffs, 1 << 22) {
        Err(singlab::Error::Overflow(_)) => sum_dist(&d, &Coeffs::Float(coeffs.to_f64()), 1 << 22),
        other => other,
    }
    .map_err(|e| e.to_string())?;
    let points = points.clamp(2, 1000);
    let out: Vec<LevyPoint> = (0..points)
        .map(|i| {
            let r = r_max.max(0.0) * i as f64 / (points - 1) as f64;
            let l = levy(&s, r);
            LevyPoint { r, value: to_f64(&l), exact: format_rational(&l) }
        })
        .collect();
    Ok(serde_json::to_string(&out).unwrap())
}

pub fn mc_singularity_json(dist: &str, n: u32, samples: u32, seed: u32) -> Result<String, String> {
    let cfg = ExperimentConfig {
        dist: dist.to_string(),
        n: n as usize,
        samples: samples.clamp(1, 2_000_000) as u64,
        seed: seed as u64,
        workers: 1,
        union_check: true,
        ..Default::default()
    };
    let r = mc_singularity(&cfg).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&r).unwrap())
}

#[wasm_bindgen]
pub fn predicted_curve(dist: &str, n_max: u32) -> Result<String, JsValue> {
    predicted_curve_json(dist, n_max).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn levy_profile(dist: &str, x: &str, r_max: f64, points: u32) -> Result<String, JsValue> {
    levy_profile_json(dist, x, r_max, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mc_singularity_demo(dist: &str, n: u32, samples: u32, seed: u32) -> Result<String, JsValue> {
    mc_singularity_json(dist, n, samples, seed).map_err(|e| JsValue::from_str(&e))
}
