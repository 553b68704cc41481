//! The full learnable parameter set and generic operations over it.
//!
//! Gradients share the parameter layout, so a `ModelParams` doubles as a
//! gradient accumulator (`zeros_like`) and SGD is a single `axpy`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Attention over images, implicit feedback only.
    Vecf,
    /// Review model plus implicit feedback, no image input.
    ReCf,
    /// Review-enhanced visual model.
    ReVecf,
}

impl Variant {
    pub fn has_text(self) -> bool {
        !matches!(self, Variant::Vecf)
    }

    pub fn uses_images(self) -> bool {
        !matches!(self, Variant::ReCf)
    }

    pub fn code(self) -> u32 {
        match self {
            Variant::Vecf => 0,
            Variant::ReCf => 1,
            Variant::ReVecf => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Variant::Vecf),
            1 => Some(Variant::ReCf),
            2 => Some(Variant::ReVecf),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vecf => "vecf",
            Variant::ReCf => "re-cf",
            Variant::ReVecf => "re-vecf",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vecf" => Ok(Variant::Vecf),
            "re-cf" | "recf" => Ok(Variant::ReCf),
            "re-vecf" | "revecf" => Ok(Variant::ReVecf),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected vecf, re-cf or re-vecf)"
            ))),
        }
    }
}

/// Model sizes. Text sizes (`z`, `vocab`, `o`) are zero for the image-only variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub users: usize,
    pub items: usize,
    /// Embedding size K.
    pub k: usize,
    /// Region feature size D (also the context vector size).
    pub d: usize,
    /// Regions per image h.
    pub regions: usize,
    /// GRU hidden size Z.
    pub z: usize,
    /// Vocabulary size N^w, reserved markers included.
    pub vocab: usize,
    /// Word embedding size O.
    pub o: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecfParams {
    /// P, N×K.
    pub user_emb: DenseMatrix,
    /// Q, M×K.
    pub item_emb: DenseMatrix,
    /// D×K projection applied to the merged image before the element-wise merge.
    pub img_proj: DenseMatrix,
    pub attention: AttentionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: DenseMatrix,
    pub w_r: DenseMatrix,
    pub w_h: DenseMatrix,
    pub u_z: DenseMatrix,
    pub u_r: DenseMatrix,
    pub u_h: DenseMatrix,
    /// Visual injection into the update gate, Z×D.
    pub v_z: DenseMatrix,
    /// Visual injection into the reset gate, Z×D.
    pub v_r: DenseMatrix,
    pub b_z: DenseVector,
    pub b_r: DenseVector,
    pub b_h: DenseVector,
    /// Word embeddings E, O×N^w (column per token).
    pub embed: DenseMatrix,
    /// N^w×Z output projection.
    pub w_out: DenseMatrix,
    pub b_out: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextGateParams {
    /// K×D.
    pub w_user: DenseMatrix,
    /// K×D.
    pub w_item: DenseMatrix,
    /// D×D.
    pub w_image: DenseMatrix,
    /// Z; feeds the β gate.
    pub w_hidden: DenseVector,
    /// D.
    pub bias: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextParams {
    pub gru: GruParams,
    pub gate: ContextGateParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    UserEmb,
    ItemEmb,
    ImgProj,
    Attention,
    Gru,
    ContextGate,
    Output,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::UserEmb,
        ParamGroup::ItemEmb,
        ParamGroup::ImgProj,
        ParamGroup::Attention,
        ParamGroup::Gru,
        ParamGroup::ContextGate,
        ParamGroup::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::UserEmb => "P",
            ParamGroup::ItemEmb => "Q",
            ParamGroup::ImgProj => "W_img_proj",
            ParamGroup::Attention => "attention",
            ParamGroup::Gru => "gru",
            ParamGroup::ContextGate => "context_gate",
            ParamGroup::Output => "W_out",
        }
    }

    pub fn is_text(self) -> bool {
        matches!(
            self,
            ParamGroup::Gru | ParamGroup::ContextGate | ParamGroup::Output
        )
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?}")))
    }
}

/// Borrowed view of one named tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    /// Fan-in used by the scaled initializer; zero marks a bias.
    pub fan_in: usize,
    pub values: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: &'static str,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub fan_in: usize,
    pub values: &'a mut [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Every entry uniform on (0, 1).
    #[default]
    UnitUniform,
    /// Weights uniform on ±1/√fan_in, biases zero.
    Scaled,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" | "unit-uniform" => Ok(InitScheme::UnitUniform),
            "scaled" => Ok(InitScheme::Scaled),
            other => Err(Error::Config(format!(
                "unknown init scheme {other:?} (expected uniform or scaled)"
            ))),
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::UnitUniform => "uniform",
            InitScheme::Scaled => "scaled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub dims: ModelDims,
    pub vecf: VecfParams,
    pub text: Option<TextParams>,
}

macro_rules! tensor_list {
    ($self:ident, $ctor:ident, $as:ident, $from:path $(, $m:tt)?) => {{
        let dims = $self.dims;
        let (k, d, z, o) = (dims.k, dims.d, dims.z, dims.o);
        let mut out = Vec::with_capacity(32);
        let v = &$($m)? $self.vecf;
        out.push($ctor { name: "user_emb", group: ParamGroup::UserEmb, rows: v.user_emb.rows(), cols: k, fan_in: k, values: v.user_emb.$as() });
        out.push($ctor { name: "item_emb", group: ParamGroup::ItemEmb, rows: v.item_emb.rows(), cols: k, fan_in: k, values: v.item_emb.$as() });
        out.push($ctor { name: "img_proj", group: ParamGroup::ImgProj, rows: d, cols: k, fan_in: d, values: v.img_proj.$as() });
        out.push($ctor { name: "att.w_user", group: ParamGroup::Attention, rows: k, cols: 1, fan_in: k, values: v.attention.w_user.$as() });
        out.push($ctor { name: "att.w_region", group: ParamGroup::Attention, rows: d, cols: 1, fan_in: d, values: v.attention.w_region.$as() });
        out.push($ctor { name: "att.bias", group: ParamGroup::Attention, rows: 1, cols: 1, fan_in: 0, values: $from(&$($m)? v.attention.bias) });
        if let Some(t) = &$($m)? $self.text {
            let g = &$($m)? t.gru;
            let nw = dims.vocab;
            out.push($ctor { name: "gru.w_z", group: ParamGroup::Gru, rows: z, cols: o, fan_in: o, values: g.w_z.$as() });
            out.push($ctor { name: "gru.w_r", group: ParamGroup::Gru, rows: z, cols: o, fan_in: o, values: g.w_r.$as() });
            out.push($ctor { name: "gru.w_h", group: ParamGroup::Gru, rows: z, cols: o, fan_in: o, values: g.w_h.$as() });
            out.push($ctor { name: "gru.u_z", group: ParamGroup::Gru, rows: z, cols: z, fan_in: z, values: g.u_z.$as() });
            out.push($ctor { name: "gru.u_r", group: ParamGroup::Gru, rows: z, cols: z, fan_in: z, values: g.u_r.$as() });
            out.push($ctor { name: "gru.u_h", group: ParamGroup::Gru, rows: z, cols: z, fan_in: z, values: g.u_h.$as() });
            out.push($ctor { name: "gru.v_z", group: ParamGroup::Gru, rows: z, cols: d, fan_in: d, values: g.v_z.$as() });
            out.push($ctor { name: "gru.v_r", group: ParamGroup::Gru, rows: z, cols: d, fan_in: d, values: g.v_r.$as() });
            out.push($ctor { name: "gru.b_z", group: ParamGroup::Gru, rows: z, cols: 1, fan_in: 0, values: g.b_z.$as() });
            out.push($ctor { name: "gru.b_r", group: ParamGroup::Gru, rows: z, cols: 1, fan_in: 0, values: g.b_r.$as() });
            out.push($ctor { name: "gru.b_h", group: ParamGroup::Gru, rows: z, cols: 1, fan_in: 0, values: g.b_h.$as() });
            out.push($ctor { name: "gru.embed", group: ParamGroup::Gru, rows: o, cols: nw, fan_in: o, values: g.embed.$as() });
            out.push($ctor { name: "out.w", group: ParamGroup::Output, rows: nw, cols: z, fan_in: z, values: g.w_out.$as() });
            out.push($ctor { name: "out.b", group: ParamGroup::Output, rows: nw, cols: 1, fan_in: 0, values: g.b_out.$as() });
            let c = &$($m)? t.gate;
            out.push($ctor { name: "gate.w_user", group: ParamGroup::ContextGate, rows: k, cols: d, fan_in: k, values: c.w_user.$as() });
            out.push($ctor { name: "gate.w_item", group: ParamGroup::ContextGate, rows: k, cols: d, fan_in: k, values: c.w_item.$as() });
            out.push($ctor { name: "gate.w_image", group: ParamGroup::ContextGate, rows: d, cols: d, fan_in: d, values: c.w_image.$as() });
            out.push($ctor { name: "gate.w_hidden", group: ParamGroup::ContextGate, rows: z, cols: 1, fan_in: z, values: c.w_hidden.$as() });
            out.push($ctor { name: "gate.bias", group: ParamGroup::ContextGate, rows: d, cols: 1, fan_in: 0, values: c.bias.$as() });
        }
        out
    }};
}

impl ModelParams {
    /// All-zero parameters for the given shape.
    pub fn zeros(variant: Variant, dims: ModelDims) -> Self {
        let (k, d, z, o, nw) = (dims.k, dims.d, dims.z, dims.o, dims.vocab);
        let vecf = VecfParams {
            user_emb: DenseMatrix::zeros(dims.users, k),
            item_emb: DenseMatrix::zeros(dims.items, k),
            img_proj: DenseMatrix::zeros(d, k),
            attention: AttentionParams::zeros(k, d),
        };
        let text = variant.has_text().then(|| TextParams {
            gru: GruParams {
                w_z: DenseMatrix::zeros(z, o),
                w_r: DenseMatrix::zeros(z, o),
                w_h: DenseMatrix::zeros(z, o),
                u_z: DenseMatrix::zeros(z, z),
                u_r: DenseMatrix::zeros(z, z),
                u_h: DenseMatrix::zeros(z, z),
                v_z: DenseMatrix::zeros(z, d),
                v_r: DenseMatrix::zeros(z, d),
                b_z: DenseVector::zeros(z),
                b_r: DenseVector::zeros(z),
                b_h: DenseVector::zeros(z),
                embed: DenseMatrix::zeros(o, nw),
                w_out: DenseMatrix::zeros(nw, z),
                b_out: DenseVector::zeros(nw),
            },
            gate: ContextGateParams {
                w_user: DenseMatrix::zeros(k, d),
                w_item: DenseMatrix::zeros(k, d),
                w_image: DenseMatrix::zeros(d, d),
                w_hidden: DenseVector::zeros(z),
                bias: DenseVector::zeros(d),
            },
        });
        let dims = if variant.has_text() {
            dims
        } else {
            ModelDims {
                z: 0,
                vocab: 0,
                o: 0,
                ..dims
            }
        };
        Self {
            variant,
            dims,
            vecf,
            text,
        }
    }

    /// Random initialization. Shared recommendation tensors are drawn first so
    /// that variants with the same seed start from the same P, Q, projection
    /// and attention values.
    pub fn init(variant: Variant, dims: ModelDims, scheme: InitScheme, seed: u64) -> Result<Self> {
        if dims.k == 0 || dims.d == 0 || dims.users == 0 || dims.items == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {dims:?}")));
        }
        if variant.has_text() && (dims.z == 0 || dims.o == 0 || dims.vocab < 3) {
            return Err(Error::Config(format!(
                "text variants need Z, O >= 1 and a vocabulary: {dims:?}"
            )));
        }
        let mut params = Self::zeros(variant, dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in params.tensors_mut() {
            match scheme {
                InitScheme::UnitUniform => {
                    for v in t.values.iter_mut() {
                        *v = rng.gen::<f64>();
                    }
                }
                InitScheme::Scaled => {
                    if t.fan_in == 0 {
                        continue;
                    }
                    let r = 1.0 / (t.fan_in as f64).sqrt();
                    for v in t.values.iter_mut() {
                        *v = rng.gen_range(-r..r);
                    }
                }
            }
        }
        Ok(params)
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        tensor_list!(self, TensorRef, as_slice, std::slice::from_ref)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        tensor_list!(self, TensorMut, as_mut_slice, std::slice::from_mut, mut)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.variant, self.dims)
    }

    pub fn text(&self) -> Option<&TextParams> {
        self.text.as_ref()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += scale · other`; layouts must match.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        assert_eq!(self.dims, other.dims, "parameter layouts differ");
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.values.iter_mut().zip(src.values) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.values.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `‖Θ‖²_F` over every tensor.
    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn group_norm(&self, group: ParamGroup) -> f64 {
        self.tensors()
            .iter()
            .filter(|t| t.group == group)
            .flat_map(|t| t.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// All values in tensor order.
    pub fn flatten(&self) -> DenseVector {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors() {
            out.extend_from_slice(t.values);
        }
        DenseVector::from_vec(out)
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has wrong length");
    }

    /// Flat index ranges of each tensor belonging to `group`.
    pub fn group_ranges(&self, group: ParamGroup) -> Vec<std::ops::Range<usize>> {
        let mut offset = 0;
        let mut out = Vec::new();
        for t in self.tensors() {
            let n = t.values.len();
            if t.group == group {
                out.push(offset..offset + n);
            }
            offset += n;
        }
        out
    }

    pub fn groups_present(&self) -> Vec<ParamGroup> {
        let mut groups: Vec<ParamGroup> = self.tensors().iter().map(|t| t.group).collect();
        groups.dedup();
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            users: 3,
            items: 4,
            k: 4,
            d: 6,
            regions: 4,
            z: 3,
            vocab: 5,
            o: 2,
        }
    }

    #[test]
    fn flatten_round_trip() {
        let p = ModelParams::init(Variant::ReVecf, dims(), InitScheme::Scaled, 3).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.dim(), p.num_values());
        let mut q = p.zeros_like();
        q.assign_flat(flat.as_slice());
        assert_eq!(p, q);
    }

    #[test]
    fn unit_uniform_is_in_open_interval() {
        let p = ModelParams::init(Variant::ReVecf, dims(), InitScheme::UnitUniform, 1).unwrap();
        for t in p.tensors() {
            assert!(t.values.iter().all(|&v| v > 0.0 && v < 1.0), "{}", t.name);
        }
    }

    #[test]
    fn shared_tensors_do_not_depend_on_variant() {
        let a = ModelParams::init(Variant::Vecf, dims(), InitScheme::UnitUniform, 9).unwrap();
        let b = ModelParams::init(Variant::ReVecf, dims(), InitScheme::UnitUniform, 9).unwrap();
        assert_eq!(a.vecf, b.vecf);
        assert!(a.text.is_none() && b.text.is_some());
        assert_eq!(a.dims.z, 0);
    }

    #[test]
    fn group_bookkeeping() {
        let p = ModelParams::init(Variant::ReVecf, dims(), InitScheme::Scaled, 0).unwrap();
        let total: usize = ParamGroup::ALL
            .iter()
            .flat_map(|&g| p.group_ranges(g))
            .map(|r| r.len())
            .sum();
        assert_eq!(total, p.num_values());
        assert_eq!(p.groups_present().len(), 7);
        let v = ModelParams::init(Variant::Vecf, dims(), InitScheme::Scaled, 0).unwrap();
        assert_eq!(v.groups_present().len(), 4);
        assert_eq!("W_out".parse::<ParamGroup>().unwrap(), ParamGroup::Output);
    }

    #[test]
    fn variant_names() {
        for v in [Variant::Vecf, Variant::ReCf, Variant::ReVecf] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
        assert!("bpr".parse::<Variant>().is_err());
    }
}
