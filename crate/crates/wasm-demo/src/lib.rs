//! WebAssembly bindings for the static page in `www/`.
//!
//! Every entry point takes plain numbers and strings and returns JSON text,
//! so the page needs no generated type glue beyond `wasm-bindgen` itself.

use define_core::analysis::{self, correlation_map, Stage};
use define_core::embedder::{define_param_count, DefineConfig, Embedder, ExpansionVariant};
use define_core::transforms::{dim_schedule, group_schedule};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn config(variant: &str, vocab: usize, n: usize, k: usize, m: usize, depth: usize, g_max: usize) -> Result<DefineConfig, String> {
    let variant: ExpansionVariant = variant.parse().map_err(|e: define_core::Error| e.to_string())?;
    let cfg = DefineConfig {
        vocab_size: vocab,
        n,
        k,
        m,
        depth,
        g_max,
        variant,
        ..DefineConfig::default()
    };
    let problems = cfg.violations();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(problems.join("; "))
    }
}

/// Parameter breakdown of every variant. Variants the sizes are invalid
/// for carry an `error` field instead of counts.
pub fn param_table_value(vocab: usize, n: usize, k: usize, m: usize, depth: usize, g_max: usize) -> Value {
    let rows: Vec<Value> = ExpansionVariant::ALL
        .iter()
        .map(|v| {
            match config(v.name(), vocab, n, k, m, depth, g_max).and_then(|c| define_param_count(&c).map_err(|e| e.to_string())) {
                Ok(p) => json!({
                    "variant": v.name(),
                    "map": p.map,
                    "expansion": p.expansion,
                    "reduce": p.reduce,
                    "total": p.total,
                }),
                Err(e) => json!({ "variant": v.name(), "error": e }),
            }
        })
        .collect();
    json!({ "dense_baseline": vocab * m, "rows": rows })
}

/// Group and width schedules of an HGT stack.
pub fn schedules_value(n: usize, k: usize, depth: usize, g_max: usize) -> Value {
    if depth == 0 || g_max == 0 {
        return json!({ "error": "depth and g_max must be >= 1" });
    }
    match dim_schedule(n, k, depth, g_max) {
        Ok(dims) => json!({ "groups": group_schedule(g_max, depth), "dims": dims }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Correlation map of a randomly initialized unit at `stage`, plus the
/// group correlation of the first grouped expansion layer.
#[allow(clippy::too_many_arguments)]
pub fn correlation_value(
    variant: &str,
    vocab: usize,
    n: usize,
    k: usize,
    m: usize,
    depth: usize,
    g_max: usize,
    seed: u64,
    stage: &str,
) -> Value {
    let result = (|| -> Result<Value, String> {
        let mut cfg = config(variant, vocab, n, k, m, depth, g_max)?;
        cfg.seed = seed;
        let embedder = Embedder::new(cfg).map_err(|e| e.to_string())?;
        let stage: Stage = stage.parse().map_err(|e: define_core::Error| e.to_string())?;
        let table = analysis::effective_embedding_table(&embedder.unit, &embedder.store, stage)
            .map_err(|e| e.to_string())?;
        let map = correlation_map(&table);
        let grouped = embedder
            .unit
            .expansion
            .layers()
            .iter()
            .position(|l| l.groups >= 2)
            .map(|i| {
                analysis::group_correlation(&embedder.unit, &embedder.store, i + 1)
                    .map(|t| json!({ "layer": i + 1, "size": t.cols(), "values": t.data() }))
                    .map_err(|e| e.to_string())
            })
            .transpose()?;
        let stages: Vec<String> = analysis::stages(&embedder.unit).iter().map(Stage::to_string).collect();
        Ok(json!({
            "dim": map.dim(),
            "values": map.values(),
            "stages": stages,
            "groups": grouped,
        }))
    })();
    result.unwrap_or_else(|e| json!({ "error": e }))
}

#[wasm_bindgen]
pub fn param_table(vocab: usize, n: usize, k: usize, m: usize, depth: usize, g_max: usize) -> String {
    param_table_value(vocab, n, k, m, depth, g_max).to_string()
}

#[wasm_bindgen]
pub fn schedules(n: usize, k: usize, depth: usize, g_max: usize) -> String {
    schedules_value(n, k, depth, g_max).to_string()
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn correlation(
    variant: &str,
    vocab: usize,
    n: usize,
    k: usize,
    m: usize,
    depth: usize,
    g_max: usize,
    seed: u32,
    stage: &str,
) -> String {
    correlation_value(variant, vocab, n, k, m, depth, g_max, u64::from(seed), stage).to_string()
}
