//! The factorized embedding unit: map, expand, reduce.
//!
//! A token id is looked up in an `n`-wide table (map), pushed through an
//! expansion stack up to width `k` (expand) and projected to width `m` by a
//! dense layer (reduce). Besides the plain transform stacks, two expansion
//! variants give every layer after the first a direct view of the mapped
//! input:
//!
//! * `DEFINE`: layer `l` splits both the mapped input `e` and the previous
//!   output `p` into `g_l` chunks and feeds group `j` with
//!   `[e_j, p_j]` (input chunk first).
//! * `DEFINE_NO_MIXER`: layer `l` chunks the plain concatenation `[e, p]`.
//!
//! Both allocate `(n + d_{l-1})·d_l / g_l` weights at layer `l > 1`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::transforms::{
    dim_schedule, group_schedule, Activation, GroupLinearLayer, TransformSpec, TransformStack,
    TransformVariant,
};

/// Half-width of the uniform initialization of the map table.
pub const MAP_INIT_BOUND: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpansionVariant {
    #[serde(rename = "HGT")]
    Hgt,
    #[serde(rename = "HGT_RESIDUAL")]
    HgtResidual,
    #[serde(rename = "DEFINE")]
    Define,
    #[serde(rename = "DEFINE_NO_MIXER")]
    DefineNoMixer,
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "GLT")]
    Glt,
    #[serde(rename = "GLT_SHUFFLE")]
    GltShuffle,
}

impl ExpansionVariant {
    pub const ALL: [ExpansionVariant; 7] = [
        ExpansionVariant::Lt,
        ExpansionVariant::Glt,
        ExpansionVariant::GltShuffle,
        ExpansionVariant::Hgt,
        ExpansionVariant::HgtResidual,
        ExpansionVariant::DefineNoMixer,
        ExpansionVariant::Define,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpansionVariant::Hgt => "HGT",
            ExpansionVariant::HgtResidual => "HGT_RESIDUAL",
            ExpansionVariant::Define => "DEFINE",
            ExpansionVariant::DefineNoMixer => "DEFINE_NO_MIXER",
            ExpansionVariant::Lt => "LT",
            ExpansionVariant::Glt => "GLT",
            ExpansionVariant::GltShuffle => "GLT_SHUFFLE",
        }
    }

    /// The plain transform stack behind this variant, if any.
    pub fn transform(self) -> Option<TransformVariant> {
        match self {
            ExpansionVariant::Hgt => Some(TransformVariant::Hgt),
            ExpansionVariant::HgtResidual => Some(TransformVariant::HgtResidual),
            ExpansionVariant::Lt => Some(TransformVariant::Lt),
            ExpansionVariant::Glt => Some(TransformVariant::Glt),
            ExpansionVariant::GltShuffle => Some(TransformVariant::GltShuffle),
            ExpansionVariant::Define | ExpansionVariant::DefineNoMixer => None,
        }
    }

    pub fn is_define(self) -> bool {
        self.transform().is_none()
    }
}

impl fmt::Display for ExpansionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpansionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExpansionVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = ExpansionVariant::ALL.iter().map(|v| v.name()).collect();
                Error::Contract(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefineConfig {
    pub vocab_size: usize,
    /// Width of the map table.
    pub n: usize,
    /// Width after expansion.
    pub k: usize,
    /// Output width.
    pub m: usize,
    /// Number of expansion layers.
    pub depth: usize,
    pub g_max: usize,
    pub variant: ExpansionVariant,
    pub use_reduce: bool,
    pub seed: u64,
    /// Explicit expansion widths `[n, …, k]`; linearly spaced when absent.
    pub dims: Option<Vec<usize>>,
    pub bias: bool,
    pub activation: Activation,
}

impl Default for DefineConfig {
    fn default() -> Self {
        DefineConfig {
            vocab_size: 1,
            n: 64,
            k: 256,
            m: 64,
            depth: 3,
            g_max: 4,
            variant: ExpansionVariant::Define,
            use_reduce: true,
            seed: 0,
            dims: None,
            bias: false,
            activation: Activation::None,
        }
    }
}

/// Exact parameter counts of a unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub map: usize,
    pub expansion: usize,
    pub reduce: usize,
    pub total: usize,
}

impl DefineConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("model.vocab_size", self.vocab_size),
            ("model.n", self.n),
            ("model.k", self.k),
            ("model.m", self.m),
            ("model.depth", self.depth),
            ("model.g_max", self.g_max),
        ] {
            if v == 0 {
                out.push(format!("{name} must be >= 1"));
            }
        }
        if !out.is_empty() {
            return out;
        }
        if self.n > self.k {
            out.push(format!("model.n ({}) must be <= model.k ({})", self.n, self.k));
        }
        for (name, v) in [("model.n", self.n), ("model.k", self.k)] {
            if v % self.g_max != 0 {
                out.push(format!(
                    "{name} ({v}) must be divisible by model.g_max ({})",
                    self.g_max
                ));
            }
        }
        if !self.use_reduce && self.m != self.k {
            out.push(format!(
                "model.m ({}) must equal model.k ({}) when model.use_reduce is false",
                self.m, self.k
            ));
        }
        if let Some(dims) = &self.dims {
            if self.variant == ExpansionVariant::HgtResidual {
                out.push("model.dims cannot be set for HGT_RESIDUAL (widths are fixed at k/2)".into());
            } else if dims.len() != self.depth + 1 {
                out.push(format!(
                    "model.dims has {} entries, expected depth + 1 = {}",
                    dims.len(),
                    self.depth + 1
                ));
            } else {
                if dims.first() != Some(&self.n) || dims.last() != Some(&self.k) {
                    out.push(format!("model.dims must start at n and end at k, got {dims:?}"));
                }
                if dims.windows(2).any(|w| w[0] > w[1]) {
                    out.push(format!("model.dims must be non-decreasing, got {dims:?}"));
                }
            }
        }
        if self.variant == ExpansionVariant::HgtResidual && !self.k.is_multiple_of(2) {
            out.push(format!("model.k ({}) must be even for HGT_RESIDUAL", self.k));
        }
        if out.is_empty() {
            out.extend(self.layer_violations());
        }
        out
    }

    fn layer_violations(&self) -> Vec<String> {
        let dims = match self.expansion_dims() {
            Ok(d) => d,
            Err(e) => return vec![e.to_string()],
        };
        let groups = self.expansion_groups();
        let mut out = Vec::new();
        for (l, &g) in groups.iter().enumerate() {
            let mut check = |what: &str, dim: usize| {
                if !dim.is_multiple_of(g) {
                    out.push(format!(
                        "layer {}: {what} width {dim} is not divisible by g = {g}",
                        l + 1
                    ));
                }
            };
            check("input", dims[l]);
            check("output", dims[l + 1]);
            if self.variant.is_define() && l > 0 {
                check("mapped-input", self.n);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Widths `[n, d_1, …, k]` of the expansion stack.
    pub fn expansion_dims(&self) -> Result<Vec<usize>> {
        if let Some(d) = &self.dims {
            return Ok(d.clone());
        }
        match self.variant.transform() {
            Some(t) => Ok(TransformSpec::new(t, self.n, self.k, self.depth, self.g_max, self.seed)?.dims),
            None => dim_schedule(self.n, self.k, self.depth, self.g_max),
        }
    }

    /// Group count of every expansion layer.
    pub fn expansion_groups(&self) -> Vec<usize> {
        match self.variant {
            ExpansionVariant::Lt => vec![1; self.depth],
            ExpansionVariant::Glt | ExpansionVariant::GltShuffle => vec![self.g_max; self.depth],
            _ => group_schedule(self.g_max, self.depth),
        }
    }

    /// Transform spec for the plain-stack variants.
    pub fn transform_spec(&self) -> Result<Option<TransformSpec>> {
        match self.variant.transform() {
            None => Ok(None),
            Some(t) => {
                let spec = match &self.dims {
                    Some(d) => TransformSpec::with_dims(t, d.clone(), self.g_max, self.seed)?,
                    None => TransformSpec::new(t, self.n, self.k, self.depth, self.g_max, self.seed)?,
                };
                Ok(Some(spec.with_bias(self.bias)))
            }
        }
    }

    /// Output width of the unit.
    pub fn output_dim(&self) -> usize {
        if self.use_reduce {
            self.m
        } else {
            self.k
        }
    }
}

/// Closed-form parameter accounting for a configuration.
pub fn define_param_count(cfg: &DefineConfig) -> Result<ParamBreakdown> {
    cfg.validate()?;
    let map = cfg.vocab_size * cfg.n;
    let dims = cfg.expansion_dims()?;
    let groups = cfg.expansion_groups();
    let bias = |d: usize| if cfg.bias { d } else { 0 };
    let expansion = match cfg.transform_spec()? {
        Some(spec) => spec.param_count(),
        None => groups
            .iter()
            .enumerate()
            .map(|(l, &g)| {
                let fan_in = if l == 0 { dims[0] } else { cfg.n + dims[l] };
                fan_in * dims[l + 1] / g + bias(dims[l + 1])
            })
            .sum(),
    };
    let reduce = if cfg.use_reduce {
        cfg.k * cfg.m + bias(cfg.m)
    } else {
        0
    };
    Ok(ParamBreakdown {
        map,
        expansion,
        reduce,
        total: map + expansion + reduce,
    })
}

/// One expansion layer with a direct link to the mapped input `e`.
///
/// With `mixer`, group `j` sees `[chunk_j(e), chunk_j(prev)]`; without it,
/// group `j` sees `chunk_j([e, prev])`.
pub fn define_layer_forward(
    tape: &mut Tape,
    bound: &Bindings,
    layer: &GroupLinearLayer,
    index: usize,
    e: Var,
    prev: Var,
    mixer: bool,
) -> Result<Var> {
    let g = layer.groups;
    let n = *tape.shape(e).last().unwrap();
    let d = *tape.shape(prev).last().unwrap();
    if n + d != layer.in_dim {
        return Err(Error::Shape {
            op: "define layer",
            left: vec![n, d],
            right: vec![layer.in_dim, layer.out_dim],
        });
    }
    for dim in [n, d] {
        if dim % g != 0 {
            return Err(Error::Divisibility {
                context: format!("expansion layer {index} (g = {g})"),
                dim,
                groups: g,
            });
        }
    }
    if !mixer || g == 1 {
        let joined = tape.concat(&[e, prev])?;
        return layer.forward(tape, bound, joined);
    }
    let e_chunks = tape.split(e, g)?;
    let p_chunks = tape.split(prev, g)?;
    let mut outs = Vec::with_capacity(g);
    for j in 0..g {
        let mixed = tape.concat(&[e_chunks[j], p_chunks[j]])?;
        outs.push(tape.matmul(mixed, bound.var(layer.weights[j]))?);
    }
    let y = tape.concat(&outs)?;
    match layer.bias {
        Some(b) => tape.add_row(y, bound.var(b)),
        None => Ok(y),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expansion {
    Stack(TransformStack),
    Define {
        mixer: bool,
        layers: Vec<GroupLinearLayer>,
        activation: Activation,
    },
}

impl Expansion {
    pub fn layers(&self) -> &[GroupLinearLayer] {
        match self {
            Expansion::Stack(s) => &s.layers,
            Expansion::Define { layers, .. } => layers,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(GroupLinearLayer::param_count).sum()
    }
}

/// Activations captured at every stage of the unit.
#[derive(Clone, Debug)]
pub struct StageOutputs {
    pub map: Var,
    pub layers: Vec<Var>,
    pub output: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefineUnit {
    pub config: DefineConfig,
    pub map_table: ParamId,
    pub expansion: Expansion,
    pub reduce: Option<GroupLinearLayer>,
}

impl DefineUnit {
    /// Allocates the unit's parameters in `store`: map table, expansion
    /// layers in order, then the reduce layer.
    pub fn new<R: Rng>(config: DefineConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let table = Tensor::uniform(vec![config.vocab_size, config.n], MAP_INIT_BOUND, rng)?;
        let map_table = store.add("map", table);
        let expansion = match config.transform_spec()? {
            Some(spec) => Expansion::Stack(
                TransformStack::new(spec, store, "expand", rng)?.with_activation(config.activation),
            ),
            None => {
                let dims = config.expansion_dims()?;
                let layers = config
                    .expansion_groups()
                    .iter()
                    .enumerate()
                    .map(|(l, &g)| {
                        let fan_in = if l == 0 { dims[0] } else { config.n + dims[l] };
                        GroupLinearLayer::new(
                            store,
                            &format!("expand.layer{}", l + 1),
                            fan_in,
                            dims[l + 1],
                            g,
                            config.bias,
                            rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Expansion::Define {
                    mixer: config.variant == ExpansionVariant::Define,
                    layers,
                    activation: config.activation,
                }
            }
        };
        let reduce = if config.use_reduce {
            Some(GroupLinearLayer::new(
                store,
                "reduce",
                config.k,
                config.m,
                1,
                config.bias,
                rng,
            )?)
        } else {
            None
        };
        Ok(DefineUnit {
            config,
            map_table,
            expansion,
            reduce,
        })
    }

    /// Counts of the parameters this unit actually allocated.
    pub fn allocated(&self, store: &ParamStore) -> ParamBreakdown {
        let map = store.get(self.map_table).len();
        let count = |layers: &[GroupLinearLayer]| -> usize {
            layers
                .iter()
                .flat_map(|l| l.weights.iter().copied().chain(l.bias))
                .map(|id| store.get(id).len())
                .sum()
        };
        let expansion = count(self.expansion.layers());
        let reduce = self.reduce.as_ref().map_or(0, |r| count(std::slice::from_ref(r)));
        ParamBreakdown {
            map,
            expansion,
            reduce,
            total: map + expansion + reduce,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Embeds a batch of ids, recording every stage.
    pub fn forward_stages(&self, tape: &mut Tape, bound: &Bindings, ids: &[usize]) -> Result<StageOutputs> {
        let map = tape.embedding_lookup(bound.var(self.map_table), ids)?;
        let layers = match &self.expansion {
            Expansion::Stack(stack) => stack.forward_layers(tape, bound, map)?,
            Expansion::Define {
                mixer,
                layers,
                activation,
            } => {
                let mut outs: Vec<Var> = Vec::with_capacity(layers.len());
                for (l, layer) in layers.iter().enumerate() {
                    let y = match outs.last() {
                        None => layer.forward(tape, bound, map)?,
                        Some(&prev) => {
                            define_layer_forward(tape, bound, layer, l + 1, map, prev, *mixer)?
                        }
                    };
                    outs.push(activation.apply(tape, y));
                }
                outs
            }
        };
        let expanded = *layers.last().unwrap();
        let output = match &self.reduce {
            Some(r) => r.forward(tape, bound, expanded)?,
            None => expanded,
        };
        Ok(StageOutputs {
            map,
            layers,
            output,
        })
    }

    /// `[ids.len() × m]` embeddings.
    pub fn forward_embed(&self, tape: &mut Tape, bound: &Bindings, ids: &[usize]) -> Result<Var> {
        Ok(self.forward_stages(tape, bound, ids)?.output)
    }
}

/// A unit together with its own parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    pub store: ParamStore,
    pub unit: DefineUnit,
}

impl Embedder {
    /// Builds a unit with parameters drawn from `config.seed`.
    pub fn new(config: DefineConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let unit = DefineUnit::new(config, &mut store, &mut rng)?;
        Ok(Embedder { store, unit })
    }

    /// Gradient-free embedding of `ids`.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let out = self.unit.forward_embed(&mut tape, &bound, ids)?;
        Ok(tape.tensor(out))
    }

    pub fn config(&self) -> &DefineConfig {
        &self.unit.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(variant: ExpansionVariant) -> DefineConfig {
        DefineConfig {
            vocab_size: 10,
            n: 4,
            k: 16,
            m: 4,
            depth: 2,
            g_max: 2,
            variant,
            dims: Some(vec![4, 8, 16]),
            ..DefineConfig::default()
        }
    }

    #[test]
    fn param_count_examples() {
        let hgt = define_param_count(&toy(ExpansionVariant::Hgt)).unwrap();
        assert_eq!(
            hgt,
            ParamBreakdown {
                map: 40,
                expansion: 144,
                reduce: 64,
                total: 248
            }
        );
        let define = define_param_count(&toy(ExpansionVariant::Define)).unwrap();
        assert_eq!(define.expansion, 208);
        assert_eq!(define.total, 312);
        let no_mixer = define_param_count(&toy(ExpansionVariant::DefineNoMixer)).unwrap();
        assert_eq!(no_mixer, define);

        let mut no_reduce = toy(ExpansionVariant::Hgt);
        no_reduce.use_reduce = false;
        no_reduce.m = 16;
        let nr = define_param_count(&no_reduce).unwrap();
        assert_eq!(nr.total, hgt.total - 16 * 4);
        assert_eq!(nr.reduce, 0);
    }

    #[test]
    fn allocation_matches_closed_form() {
        for v in ExpansionVariant::ALL {
            let mut cfg = toy(v);
            if v == ExpansionVariant::HgtResidual {
                cfg.dims = None;
            }
            let e = Embedder::new(cfg.clone()).unwrap();
            let closed = define_param_count(&cfg).unwrap();
            assert_eq!(e.unit.allocated(&e.store), closed, "{v}");
            assert_eq!(e.store.scalar_count(), closed.total, "{v}");
        }
    }

    #[test]
    fn violations_are_all_reported() {
        let cfg = DefineConfig {
            n: 6,
            k: 5,
            m: 3,
            g_max: 4,
            use_reduce: false,
            ..DefineConfig::default()
        };
        let v = cfg.violations();
        assert!(v.len() >= 4, "{v:?}");
        assert!(v.iter().any(|s| s.contains("model.n (6) must be <= model.k")));
        assert!(v.iter().any(|s| s.contains("model.k (5) must be divisible")));
        assert!(v.iter().any(|s| s.contains("use_reduce")));
    }

    #[test]
    fn zero_map_row_gives_zero_output() {
        let mut e = Embedder::new(toy(ExpansionVariant::Define)).unwrap();
        let table = e.unit.map_table;
        e.store.get_mut(table).data_mut()[3 * 4..4 * 4].fill(0.0);
        let out = e.embed(&[3]).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_unit_passes_input_through() {
        let cfg = DefineConfig {
            vocab_size: 5,
            n: 4,
            k: 4,
            m: 4,
            depth: 1,
            g_max: 1,
            variant: ExpansionVariant::Hgt,
            ..DefineConfig::default()
        };
        let mut e = Embedder::new(cfg).unwrap();
        let ids: Vec<ParamId> = e.unit.expansion.layers()[0]
            .weights
            .iter()
            .copied()
            .chain(e.unit.reduce.as_ref().unwrap().weights.iter().copied())
            .collect();
        for id in ids {
            *e.store.get_mut(id) = Tensor::identity(4).with_requires_grad(true);
        }
        let out = e.embed(&[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(out.data(), e.store.get(e.unit.map_table).data());
    }

    #[test]
    fn out_of_range_id_is_an_index_error() {
        let e = Embedder::new(toy(ExpansionVariant::Hgt)).unwrap();
        assert!(matches!(
            e.embed(&[10]),
            Err(Error::Index { index: 10, bound: 10, .. })
        ));
    }

    #[test]
    fn mixer_interleaves_chunks() {
        // n = d = 4, g = 2, weights select their whole group input: group 1
        // must see [e1, e2, p1, p2], group 2 [e3, e4, p3, p4].
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GroupLinearLayer::new(&mut store, "l", 8, 8, 2, false, &mut rng).unwrap();
        for &w in &layer.weights {
            *store.get_mut(w) = Tensor::identity(4).with_requires_grad(true);
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let e = tape.constant(vec![1, 4], vec![1., 2., 3., 4.]).unwrap();
        let p = tape.constant(vec![1, 4], vec![10., 20., 30., 40.]).unwrap();
        let mixed = define_layer_forward(&mut tape, &bound, &layer, 2, e, p, true).unwrap();
        assert_eq!(tape.value(mixed), &[1., 2., 10., 20., 3., 4., 30., 40.]);
        let plain = define_layer_forward(&mut tape, &bound, &layer, 2, e, p, false).unwrap();
        assert_eq!(tape.value(plain), &[1., 2., 3., 4., 10., 20., 30., 40.]);
    }

    #[test]
    fn mixer_divisibility_error_names_layer() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = GroupLinearLayer::new(&mut store, "l", 8, 4, 4, false, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let e = tape.constant(vec![1, 2], vec![1., 2.]).unwrap();
        let p = tape.constant(vec![1, 6], vec![0.; 6]).unwrap();
        let err = define_layer_forward(&mut tape, &bound, &layer, 3, e, p, true).unwrap_err();
        assert!(err.to_string().contains("layer 3"), "{err}");
    }
}
