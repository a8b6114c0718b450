//! Embedding-table analysis and finite-difference gradient verification.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedder::DefineUnit;
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Normalized `EᵀE` of a `V × m` table; entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    dim: usize,
    values: Vec<f64>,
}

/// `M = EᵀE`, then `(|M| - min|M|) / (max|M| - min|M|)`. A constant `|M|`
/// maps to all zeros.
pub fn correlation_map(table: &Tensor) -> CorrelationMap {
    let (rows, m) = (table.rows(), table.cols());
    let data = table.data();
    let mut gram = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let mut s = 0.0;
            for v in 0..rows {
                s += data[v * m + a] * data[v * m + b];
            }
            gram[a * m + b] = s.abs();
            gram[b * m + a] = s.abs();
        }
    }
    let lo = gram.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gram.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        gram.iter().map(|&x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; m * m]
    };
    CorrelationMap { dim: m, values }
}

impl CorrelationMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.dim + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Header line `m=<dim>`, then one comma-separated row per line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("m={}\n", self.dim);
        for row in self.values.chunks(self.dim) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit grayscale PGM (P5), pixel = round(255 · entry).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.dim, self.dim).into_bytes();
        out.extend(self.values.iter().map(|v| (255.0 * v).round() as u8));
        out
    }
}

/// A point in the unit at which activations can be read out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Map,
    /// Expansion layer, 1-based.
    Layer(usize),
    Reduce,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Map => f.write_str("map"),
            Stage::Layer(l) => write!(f, "layer{l}"),
            Stage::Reduce => f.write_str("reduce"),
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "map" => return Ok(Stage::Map),
            "reduce" => return Ok(Stage::Reduce),
            _ => {}
        }
        lower
            .strip_prefix("layer")
            .map(|rest| rest.trim_start_matches([':', '-', '_', ' ']))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&l| l >= 1)
            .map(Stage::Layer)
            .ok_or_else(|| Error::Contract(format!("unknown stage {s:?}; use map, layer<N> or reduce")))
    }
}

/// Stages available on `unit`.
pub fn stages(unit: &DefineUnit) -> Vec<Stage> {
    let mut out = vec![Stage::Map];
    out.extend((1..=unit.expansion.layers().len()).map(Stage::Layer));
    if unit.reduce.is_some() {
        out.push(Stage::Reduce);
    }
    out
}

/// Runs every vocabulary entry through the unit and returns the
/// activations at `stage` as a `V × width` table.
pub fn effective_embedding_table(unit: &DefineUnit, store: &ParamStore, stage: Stage) -> Result<Tensor> {
    let available = stages(unit);
    if !available.contains(&stage) {
        let names: Vec<String> = available.iter().map(Stage::to_string).collect();
        return Err(Error::Contract(format!(
            "stage {stage} does not exist; available stages: {}",
            names.join(", ")
        )));
    }
    if stage == Stage::Map {
        return Ok(store.get(unit.map_table).clone().with_requires_grad(false));
    }
    let ids: Vec<usize> = (0..unit.config.vocab_size).collect();
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let out = unit.forward_stages(&mut tape, &bound, &ids)?;
    let v = match stage {
        Stage::Map => unreachable!(),
        Stage::Layer(l) => out.layers[l - 1],
        Stage::Reduce => out.output,
    };
    Ok(tape.tensor(v))
}

/// `g × g` similarity between the groups of expansion layer `layer`
/// (1-based): cosine of the mean-centered, flattened per-group activation
/// blocks over the whole vocabulary. Groups with constant output score 0
/// everywhere, including against themselves.
pub fn group_correlation(unit: &DefineUnit, store: &ParamStore, layer: usize) -> Result<Tensor> {
    let groups = unit
        .expansion
        .layers()
        .get(layer.wrapping_sub(1))
        .map(|l| l.groups)
        .ok_or_else(|| {
            Error::Contract(format!(
                "layer {layer} does not exist; the unit has {} expansion layers",
                unit.expansion.layers().len()
            ))
        })?;
    if groups < 2 {
        return Err(Error::Contract(format!(
            "layer {layer} has {groups} group; group correlation needs at least 2"
        )));
    }
    let table = effective_embedding_table(unit, store, Stage::Layer(layer))?;
    Ok(block_correlation(&table, groups))
}

/// Cosine similarity between mean-centered column blocks of `table`.
pub fn block_correlation(table: &Tensor, groups: usize) -> Tensor {
    let (rows, cols) = (table.rows(), table.cols());
    let w = cols / groups;
    let blocks: Vec<Vec<f64>> = (0..groups)
        .map(|j| {
            let flat: Vec<f64> = (0..rows)
                .flat_map(|r| table.row(r)[j * w..(j + 1) * w].iter().copied())
                .collect();
            let mean = flat.iter().sum::<f64>() / flat.len() as f64;
            flat.into_iter().map(|x| x - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = blocks
        .iter()
        .map(|b| b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut out = vec![0.0; groups * groups];
    for a in 0..groups {
        for b in a..groups {
            let denom = norms[a] * norms[b];
            let c = if denom > 0.0 {
                let dot: f64 = blocks[a].iter().zip(&blocks[b]).map(|(x, y)| x * y).sum();
                (dot / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out[a * groups + b] = c;
            out[b * groups + a] = c;
        }
        if norms[a] > 0.0 {
            out[a * groups + a] = 1.0;
        }
    }
    Tensor::matrix(groups, groups, out).expect("square")
}

// ---- gradient checking ----------------------------------------------------

/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Check every coordinate when the model has at most this many.
    pub exhaustive_limit: usize,
    /// Coordinates sampled otherwise.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            exhaustive_limit: 10_000,
            samples: 2_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub total_params: usize,
    pub exhaustive: bool,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    /// Largest relative error per parameter tensor, in store order.
    pub fn per_param(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(n, _)| *n == e.param) {
                Some((_, m)) => *m = m.max(e.rel_err),
                None => out.push((e.param.clone(), e.rel_err)),
            }
        }
        out
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check: {} of {} coordinates ({}), max rel err {:.3e}, tolerance {:.1e}: {}",
            self.entries.len(),
            self.total_params,
            if self.exhaustive { "exhaustive" } else { "sampled" },
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for (name, err) in self.per_param() {
            writeln!(f, "  {name:<24} {err:.3e}")?;
        }
        Ok(())
    }
}

/// Gradients of the scalar built by `build` with respect to every parameter
/// in `store`, in store order (zeros where no path exists).
pub fn tape_gradients<F>(store: &ParamStore, build: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    tape.backward(loss)?;
    Ok(store
        .tensors()
        .iter()
        .zip(bound.vars())
        .map(|(t, &v)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect())
}

fn tape_loss<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let loss = build(&mut tape, &bound)?;
    Ok(tape.scalar(loss))
}

/// Compares `analytic` against central differences of `loss`.
pub fn check_gradients<L>(
    store: &mut ParamStore,
    loss: L,
    analytic: &[Vec<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore) -> Result<f64>,
{
    let total = store.scalar_count();
    let mut coords: Vec<(usize, usize)> = store
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    let exhaustive = total <= opts.exhaustive_limit;
    if !exhaustive {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        coords = (0..opts.samples)
            .map(|_| coords[rng.gen_range(0..coords.len())])
            .collect();
    }
    let mut entries = Vec::with_capacity(coords.len());
    let mut max_rel_err: f64 = 0.0;
    for (p, i) in coords {
        let original = store.tensors()[p].data()[i];
        store.tensors_mut()[p].data_mut()[i] = original + opts.step;
        let up = loss(store)?;
        store.tensors_mut()[p].data_mut()[i] = original - opts.step;
        let down = loss(store)?;
        store.tensors_mut()[p].data_mut()[i] = original;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[p][i];
        let rel_err = relative_error(a, numeric);
        max_rel_err = if rel_err.is_nan() { f64::INFINITY } else { max_rel_err.max(rel_err) };
        entries.push(GradCheckEntry {
            param: store.names()[p].clone(),
            index: i,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    Ok(GradCheckReport {
        entries,
        max_rel_err,
        tolerance: opts.tolerance,
        total_params: total,
        exhaustive,
    })
}

/// Tape gradients of `build` against central differences.
pub fn grad_check<F>(store: &mut ParamStore, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let analytic = tape_gradients(store, &build)?;
    check_gradients(store, |s| tape_loss(s, &build), &analytic, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{DefineConfig, Embedder, ExpansionVariant};

    #[test]
    fn orthonormal_columns_give_identity() {
        let s = 1.0 / 2f64.sqrt();
        let e = Tensor::from_rows(&[vec![s, 0.0], vec![s, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = correlation_map(&e);
        for (got, want) in m.values().iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_table_is_degenerate() {
        let m = correlation_map(&Tensor::zeros(vec![4, 3]).unwrap());
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let e = Tensor::uniform(vec![5, 3], 1.0, &mut rng).unwrap();
        // EᵀE via an explicit transpose and triple loop
        let et = e.transpose().unwrap();
        let mut raw = [[0.0f64; 3]; 3];
        for (a, row) in raw.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = (0..5).map(|v| et.at(a, v) * e.at(v, b)).sum::<f64>().abs();
            }
        }
        let flat: Vec<f64> = raw.iter().flatten().copied().collect();
        let lo = flat.iter().copied().fold(f64::MAX, f64::min);
        let hi = flat.iter().copied().fold(f64::MIN, f64::max);
        let m = correlation_map(&e);
        for (got, want) in m.values().iter().zip(flat.iter().map(|x| (x - lo) / (hi - lo))) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_and_pgm_layout() {
        let m = correlation_map(&Tensor::identity(2));
        assert_eq!(m.to_csv(), "m=2\n1.000000000,0.000000000\n0.000000000,1.000000000\n");
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 4..], &[255, 0, 0, 255]);
    }

    #[test]
    fn stage_parsing() {
        assert_eq!("map".parse::<Stage>().unwrap(), Stage::Map);
        assert_eq!("layer2".parse::<Stage>().unwrap(), Stage::Layer(2));
        assert_eq!("layer:3".parse::<Stage>().unwrap(), Stage::Layer(3));
        assert_eq!("Reduce".parse::<Stage>().unwrap(), Stage::Reduce);
        assert!("layer0".parse::<Stage>().is_err());
        assert!("expand".parse::<Stage>().is_err());
    }

    fn toy() -> Embedder {
        Embedder::new(DefineConfig {
            vocab_size: 3,
            n: 4,
            k: 8,
            m: 4,
            depth: 2,
            g_max: 2,
            variant: ExpansionVariant::Define,
            seed: 2,
            ..DefineConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn stage_tables() {
        let e = toy();
        let map = effective_embedding_table(&e.unit, &e.store, Stage::Map).unwrap();
        assert_eq!(map.data(), e.store.get(e.unit.map_table).data());

        let reduce = effective_embedding_table(&e.unit, &e.store, Stage::Reduce).unwrap();
        assert_eq!(reduce.data(), crate::cache::embed_vocab(&e.unit, &e.store).unwrap().data());

        // layer 1 by hand: row v · block-diagonal weight
        let layer1 = effective_embedding_table(&e.unit, &e.store, Stage::Layer(1)).unwrap();
        let w = e.unit.expansion.layers()[0].block_diagonal(&e.store);
        for v in 0..3 {
            for c in 0..w.cols() {
                let want: f64 = (0..4).map(|r| map.at(v, r) * w.at(r, c)).sum();
                assert!((layer1.at(v, c) - want).abs() < 1e-12);
            }
        }

        let err = effective_embedding_table(&e.unit, &e.store, Stage::Layer(3)).unwrap_err();
        assert!(err.to_string().contains("map, layer1, layer2, reduce"), "{err}");
    }

    #[test]
    fn duplicated_groups_correlate_fully() {
        let mut e = toy();
        // identical input chunks and identical weights in both groups
        let table = e.unit.map_table;
        for v in 0..3 {
            let d = e.store.get_mut(table).data_mut();
            d[v * 4 + 2] = d[v * 4];
            d[v * 4 + 3] = d[v * 4 + 1];
        }
        let ws = e.unit.expansion.layers()[0].weights.clone();
        let w0 = e.store.get(ws[0]).clone();
        *e.store.get_mut(ws[1]) = w0;
        let c = group_correlation(&e.unit, &e.store, 1).unwrap();
        assert!((c.at(0, 1) - 1.0).abs() < 1e-12);
        assert!(group_correlation(&e.unit, &e.store, 2).is_err());
    }

    #[test]
    fn constant_groups_score_zero() {
        let t = Tensor::matrix(3, 4, vec![1.0, 1.0, 0.5, -0.5, 1.0, 1.0, 0.2, 0.9, 1.0, 1.0, 0.0, 0.3]).unwrap();
        let c = block_correlation(&t, 2);
        assert_eq!(c.at(0, 0), 0.0);
        assert_eq!(c.at(0, 1), 0.0);
        assert_eq!(c.at(1, 1), 1.0);
    }

    #[test]
    fn quadratic_loss_on_linear_layer() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = store.add("w", Tensor::uniform(vec![3, 2], 1.0, &mut rng).unwrap());
        let x = Tensor::uniform(vec![4, 3], 1.0, &mut rng).unwrap();
        let report = grad_check(
            &mut store,
            |tape, bound| {
                let xv = tape.leaf(&x);
                let y = tape.matmul(xv, bound.var(w))?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report}");
        assert!(report.exhaustive);
        assert_eq!(report.entries.len(), 6);
    }

    #[test]
    fn corrupted_gradients_fail() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.5, -1.5]));
        let build = |tape: &mut Tape, bound: &Bindings| {
            let sq = tape.mul(bound.var(w), bound.var(w))?;
            Ok(tape.sum(sq))
        };
        let mut analytic = tape_gradients(&store, &build).unwrap();
        analytic[0][1] *= 1.01;
        let report = check_gradients(
            &mut store,
            |s| tape_loss(s, &build),
            &analytic,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst().unwrap().index, 1);
    }
}
