//! Group linear transforms and the expansion stacks built from them.
//!
//! A group linear layer splits its input into `g` contiguous chunks, maps
//! chunk `j` through its own `(in/g) × (out/g)` matrix and concatenates the
//! results. That is a dense product against a block-diagonal weight, with
//! `in·out/g` parameters instead of `in·out`.
//!
//! Five stacks are provided:
//!
//! | variant        | groups per layer                    | extras                        |
//! |----------------|-------------------------------------|-------------------------------|
//! | `LT`           | 1                                   |                               |
//! | `GLT`          | `g_max`                             |                               |
//! | `GLT_SHUFFLE`  | `g_max`                             | fixed feature permutation     |
//! | `HGT`          | `max(g_max / 2^(l-1), 1)`           |                               |
//! | `HGT_RESIDUAL` | `max(g_max / 2^(l-1), 1)`           | interior width `k/2`, residual |
//!
//! `LT` and `GLT` are `HGT` with the schedule pinned to 1 or `g_max`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformVariant {
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "GLT")]
    Glt,
    #[serde(rename = "GLT_SHUFFLE")]
    GltShuffle,
    #[serde(rename = "HGT")]
    Hgt,
    #[serde(rename = "HGT_RESIDUAL")]
    HgtResidual,
}

impl TransformVariant {
    pub const ALL: [TransformVariant; 5] = [
        TransformVariant::Lt,
        TransformVariant::Glt,
        TransformVariant::GltShuffle,
        TransformVariant::Hgt,
        TransformVariant::HgtResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformVariant::Lt => "LT",
            TransformVariant::Glt => "GLT",
            TransformVariant::GltShuffle => "GLT_SHUFFLE",
            TransformVariant::Hgt => "HGT",
            TransformVariant::HgtResidual => "HGT_RESIDUAL",
        }
    }
}

impl fmt::Display for TransformVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Contract(format!("unknown transform variant {s:?}")))
    }
}

/// Optional element-wise nonlinearity after each expansion layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Activation::None),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Contract(format!("unknown activation {s:?}"))),
        }
    }
}

/// Group counts halving per layer from `g_max`, floored at 1.
pub fn group_schedule(g_max: usize, depth: usize) -> Vec<usize> {
    (0..depth)
        .map(|l| {
            let shifted = if l >= usize::BITS as usize {
                0
            } else {
                g_max >> l
            };
            shifted.max(1)
        })
        .collect()
}

/// Linearly spaced widths from `n` to `k`, interior values rounded to the
/// nearest multiple of `g_max` (ties round up).
pub fn dim_schedule(n: usize, k: usize, depth: usize, g_max: usize) -> Result<Vec<usize>> {
    if depth == 0 || g_max == 0 {
        return Err(Error::Contract(format!(
            "dim_schedule needs depth >= 1 and g_max >= 1, got depth {depth}, g_max {g_max}"
        )));
    }
    if n > k {
        return Err(Error::Contract(format!(
            "dim_schedule needs n <= k, got n {n}, k {k}"
        )));
    }
    for (what, dim) in [("n", n), ("k", k)] {
        if dim % g_max != 0 {
            return Err(Error::Divisibility {
                context: format!("dim_schedule: {what}"),
                dim,
                groups: g_max,
            });
        }
    }
    let mut dims = Vec::with_capacity(depth + 1);
    dims.push(n);
    for l in 1..depth {
        // exact value is num / depth; round num / (depth · g_max) half up
        let num = n * depth + (k - n) * l;
        let unit = depth * g_max;
        dims.push((2 * num + unit) / (2 * unit) * g_max);
    }
    dims.push(k);
    Ok(dims)
}

/// Shape and wiring of an expansion stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub variant: TransformVariant,
    /// `dims[0]` is the input width, `dims[depth]` the output width.
    pub dims: Vec<usize>,
    /// One group count per layer.
    pub groups: Vec<usize>,
    /// Group count of the GLT variants; `g_max` otherwise.
    pub fixed_g: usize,
    pub shuffle_seed: u64,
    pub bias: bool,
}

impl TransformSpec {
    /// Derives widths and group counts for `variant` from `(n, k, depth,
    /// g_max)`.
    pub fn new(
        variant: TransformVariant,
        n: usize,
        k: usize,
        depth: usize,
        g_max: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        let dims = match variant {
            TransformVariant::HgtResidual => residual_dims(n, k, depth)?,
            _ => dim_schedule(n, k, depth, g_max)?,
        };
        TransformSpec::with_dims(variant, dims, g_max, shuffle_seed)
    }

    /// Uses caller-chosen widths; group counts still follow `variant`.
    pub fn with_dims(
        variant: TransformVariant,
        dims: Vec<usize>,
        g_max: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "a transform stack needs at least two widths, got {dims:?}"
            )));
        }
        let depth = dims.len() - 1;
        let groups = match variant {
            TransformVariant::Lt => vec![1; depth],
            TransformVariant::Glt | TransformVariant::GltShuffle => vec![g_max; depth],
            TransformVariant::Hgt | TransformVariant::HgtResidual => group_schedule(g_max, depth),
        };
        let spec = TransformSpec {
            variant,
            dims,
            groups,
            fixed_g: g_max,
            shuffle_seed,
            bias: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn depth(&self) -> usize {
        self.groups.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() != self.groups.len() + 1 || self.groups.is_empty() {
            return Err(Error::Contract(format!(
                "{} widths for {} layers",
                self.dims.len(),
                self.groups.len()
            )));
        }
        if self.dims.contains(&0) || self.groups.contains(&0) {
            return Err(Error::Contract(
                "widths and group counts must be positive".into(),
            ));
        }
        for (l, &g) in self.groups.iter().enumerate() {
            for dim in [self.dims[l], self.dims[l + 1]] {
                if dim % g != 0 {
                    return Err(Error::Divisibility {
                        context: format!("layer {}", l + 1),
                        dim,
                        groups: g,
                    });
                }
            }
        }
        Ok(())
    }

    /// Closed-form weight count: `Σ_l d_{l-1}·d_l / g_l`, plus output widths
    /// when biases are enabled.
    pub fn param_count(&self) -> usize {
        self.groups
            .iter()
            .enumerate()
            .map(|(l, &g)| {
                let weights = self.dims[l] * self.dims[l + 1] / g;
                weights + if self.bias { self.dims[l + 1] } else { 0 }
            })
            .sum()
    }

    /// One permutation per boundary between consecutive layers, drawn with
    /// Fisher-Yates from `shuffle_seed`. Empty for non-shuffle variants.
    pub fn permutations(&self) -> Vec<Vec<usize>> {
        if self.variant != TransformVariant::GltShuffle {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
        self.dims[1..self.depth()]
            .iter()
            .map(|&d| {
                let mut perm: Vec<usize> = (0..d).collect();
                perm.shuffle(&mut rng);
                perm
            })
            .collect()
    }
}

/// `[n, k/2, …, k/2, k]` for the residual stack.
fn residual_dims(n: usize, k: usize, depth: usize) -> Result<Vec<usize>> {
    if depth == 0 {
        return Err(Error::Contract("depth must be >= 1".into()));
    }
    if !k.is_multiple_of(2) {
        return Err(Error::Divisibility {
            context: "HGT_RESIDUAL interior width k/2".into(),
            dim: k,
            groups: 2,
        });
    }
    let mut dims = vec![n];
    dims.extend(std::iter::repeat_n(k / 2, depth - 1));
    dims.push(k);
    Ok(dims)
}

/// Splits `x: [B×in]` into `weights.len()` chunks, multiplies chunk `j` by
/// `weights[j]` and concatenates the products.
pub fn group_transform(tape: &mut Tape, x: Var, weights: &[Var]) -> Result<Var> {
    let g = weights.len();
    if g == 0 {
        return Err(Error::Contract("group_transform with no weights".into()));
    }
    let in_dim = *tape.shape(x).last().unwrap();
    let w0 = tape.shape(weights[0]).to_vec();
    if w0.len() != 2 || w0[0] * g != in_dim {
        return Err(Error::Shape {
            op: "group_transform",
            left: tape.shape(x).to_vec(),
            right: vec![g, w0[0], *w0.last().unwrap()],
        });
    }
    if g == 1 {
        return tape.matmul(x, weights[0]);
    }
    let chunks = tape.split(x, g)?;
    let outs = chunks
        .into_iter()
        .zip(weights)
        .map(|(c, &w)| tape.matmul(c, w))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&outs)
}

/// One layer of per-group weight matrices, no bias unless asked for.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupLinearLayer {
    pub groups: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<ParamId>,
    pub bias: Option<ParamId>,
}

impl GroupLinearLayer {
    /// Allocates `groups` matrices of `(in/g) × (out/g)`, each drawn from
    /// `uniform(±1/sqrt(in/g))`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Contract(format!("{name}: zero groups")));
        }
        for dim in [in_dim, out_dim] {
            if dim == 0 || dim % groups != 0 {
                return Err(Error::Divisibility {
                    context: name.to_string(),
                    dim,
                    groups,
                });
            }
        }
        let (gi, go) = (in_dim / groups, out_dim / groups);
        let bound = 1.0 / (gi as f64).sqrt();
        let weights = (0..groups)
            .map(|j| {
                let w = Tensor::uniform(vec![gi, go], bound, rng)?;
                Ok(store.add(format!("{name}.w{j}"), w))
            })
            .collect::<Result<Vec<_>>>()?;
        let bias = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(vec![out_dim])?))
        } else {
            None
        };
        Ok(GroupLinearLayer {
            groups,
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim / self.groups + self.bias.map_or(0, |_| self.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bindings, x: Var) -> Result<Var> {
        let width = *tape.shape(x).last().unwrap();
        if width != self.in_dim {
            return Err(Error::Shape {
                op: "group linear layer",
                left: tape.shape(x).to_vec(),
                right: vec![self.in_dim, self.out_dim],
            });
        }
        let ws: Vec<Var> = self.weights.iter().map(|&w| bound.var(w)).collect();
        let y = group_transform(tape, x, &ws)?;
        match self.bias {
            Some(b) => tape.add_row(y, bound.var(b)),
            None => Ok(y),
        }
    }

    /// Dense `in × out` matrix with the group blocks on the diagonal.
    pub fn block_diagonal(&self, store: &ParamStore) -> Tensor {
        let (gi, go) = (self.in_dim / self.groups, self.out_dim / self.groups);
        let mut dense = vec![0.0; self.in_dim * self.out_dim];
        for (j, &w) in self.weights.iter().enumerate() {
            let block = store.get(w);
            for r in 0..gi {
                for c in 0..go {
                    dense[(j * gi + r) * self.out_dim + j * go + c] = block.at(r, c);
                }
            }
        }
        Tensor::matrix(self.in_dim, self.out_dim, dense).expect("block shape")
    }
}

/// An expansion stack built from a [`TransformSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct TransformStack {
    pub spec: TransformSpec,
    pub layers: Vec<GroupLinearLayer>,
    /// Feature permutations applied between layers (GLT_SHUFFLE only).
    /// They are applied even when `g == 1`, where they cannot change which
    /// inputs reach which outputs.
    pub permutations: Vec<Vec<usize>>,
    pub activation: Activation,
}

impl TransformStack {
    pub fn new<R: Rng>(
        spec: TransformSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .groups
            .iter()
            .enumerate()
            .map(|(l, &g)| {
                GroupLinearLayer::new(
                    store,
                    &format!("{prefix}.layer{}", l + 1),
                    spec.dims[l],
                    spec.dims[l + 1],
                    g,
                    spec.bias,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let permutations = spec.permutations();
        Ok(TransformStack {
            spec,
            layers,
            permutations,
            activation: Activation::None,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(GroupLinearLayer::param_count).sum()
    }

    /// Runs the stack and returns the output of every layer.
    pub fn forward_layers(&self, tape: &mut Tape, bound: &Bindings, x: Var) -> Result<Vec<Var>> {
        let residual = self.spec.variant == TransformVariant::HgtResidual;
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut prev = x;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                if let Some(perm) = self.permutations.get(l - 1) {
                    prev = tape.permute_cols(prev, perm)?;
                }
            }
            let mut y = layer.forward(tape, bound, prev)?;
            y = self.activation.apply(tape, y);
            if residual && l > 0 && layer.in_dim == layer.out_dim {
                y = tape.add(y, outs[l - 1])?;
            }
            outs.push(y);
            prev = y;
        }
        Ok(outs)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bindings, x: Var) -> Result<Var> {
        Ok(*self.forward_layers(tape, bound, x)?.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_schedule_examples() {
        assert_eq!(group_schedule(8, 4), vec![8, 4, 2, 1]);
        assert_eq!(group_schedule(1, 3), vec![1, 1, 1]);
        assert_eq!(group_schedule(4, 5), vec![4, 2, 1, 1, 1]);
        assert_eq!(group_schedule(6, 3), vec![6, 3, 1]);
    }

    #[test]
    fn dim_schedule_examples() {
        assert_eq!(dim_schedule(64, 1024, 3, 4).unwrap(), vec![64, 384, 704, 1024]);
        assert_eq!(dim_schedule(128, 1024, 3, 4).unwrap(), vec![128, 428, 724, 1024]);
        assert_eq!(dim_schedule(32, 32, 4, 4).unwrap(), vec![32; 5]);
        assert!(matches!(
            dim_schedule(6, 32, 2, 4),
            Err(Error::Divisibility { dim: 6, .. })
        ));
        assert!(dim_schedule(64, 32, 2, 4).is_err());
    }

    #[test]
    fn dim_schedule_ties_round_up() {
        // 2 + (8-2)/4 = 3.5 lies exactly between 2 and 4 → 4
        assert_eq!(dim_schedule(2, 8, 4, 2).unwrap(), vec![2, 4, 6, 6, 8]);
    }

    #[test]
    fn param_count_examples() {
        let dims = vec![4, 8, 16, 32];
        let hgt = TransformSpec::with_dims(TransformVariant::Hgt, dims.clone(), 4, 0).unwrap();
        assert_eq!(hgt.groups, vec![4, 2, 1]);
        assert_eq!(hgt.param_count(), 584);
        let lt = TransformSpec::with_dims(TransformVariant::Lt, dims.clone(), 4, 0).unwrap();
        assert_eq!(lt.param_count(), 672);
        let glt = TransformSpec::with_dims(TransformVariant::Glt, dims, 4, 0).unwrap();
        assert_eq!(glt.param_count(), 168);
    }

    #[test]
    fn residual_layout() {
        let spec = TransformSpec::new(TransformVariant::HgtResidual, 16, 64, 4, 4, 0).unwrap();
        assert_eq!(spec.dims, vec![16, 32, 32, 32, 64]);
        assert_eq!(spec.groups, vec![4, 2, 1, 1]);
        let single = TransformSpec::new(TransformVariant::HgtResidual, 16, 64, 1, 4, 0).unwrap();
        assert_eq!(single.dims, vec![16, 64]);
    }

    #[test]
    fn validate_names_the_layer() {
        let err = TransformSpec::with_dims(TransformVariant::Glt, vec![4, 6, 8], 4, 0).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in TransformVariant::ALL {
            assert_eq!(v.name().parse::<TransformVariant>().unwrap(), v);
        }
        assert!("hgt".parse::<TransformVariant>().is_ok());
        assert!("nope".parse::<TransformVariant>().is_err());
    }

    #[test]
    fn group_transform_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4], vec![1., 2., 3., 4.]).unwrap();
        let id = tape.leaf(&Tensor::identity(2));
        let two = tape.constant(vec![2, 2], vec![2., 0., 0., 2.]).unwrap();
        let y = group_transform(&mut tape, x, &[id, id]).unwrap();
        assert_eq!(tape.value(y), &[1., 2., 3., 4.]);
        let y = group_transform(&mut tape, x, &[id, two]).unwrap();
        assert_eq!(tape.value(y), &[1., 2., 6., 8.]);

        let wide = tape.constant(vec![3, 2], vec![0.; 6]).unwrap();
        assert!(matches!(
            group_transform(&mut tape, x, &[wide, wide]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn shuffle_permutations_are_seeded() {
        let spec = TransformSpec::new(TransformVariant::GltShuffle, 8, 32, 3, 2, 11).unwrap();
        let a = spec.permutations();
        assert_eq!(a, spec.permutations());
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].len(), spec.dims[1]);
        let other = TransformSpec { shuffle_seed: 12, ..spec.clone() };
        assert_ne!(a, other.permutations());
        let hgt = TransformSpec::new(TransformVariant::Hgt, 8, 32, 3, 2, 11).unwrap();
        assert!(hgt.permutations().is_empty());
    }
}
