//! Feature pyramids and the six information paths that map a four-level
//! pyramid `{P2, P3, P4, P5}` to an output pyramid `{F2, F3, F4, F5}`.
//!
//! `U` is nearest-neighbour 2x upsampling and `D` is 2x2 max pooling. Every
//! path preserves the channel count `c`; no path contains a nonlinearity.
//!
//! | kind               | convs | output                                                  |
//! |--------------------|-------|---------------------------------------------------------|
//! | `top_down`         | 4     | `F5 = W5*P5`, `Fi = Wi*(U(F{i+1}) + Pi)`                  |
//! | `bottom_up`        | 4     | `F2 = W2*P2`, `Fi = Wi*(D(F{i-1}) + Pi)`                  |
//! | `scale_equalizing` | 3     | `Fi = U(W1*P{i+1}) + W0*Pi + W-1 *s2 P{i-1}`, edges drop |
//! | `fusing_splitting` | 2     | fuse top two and bottom two levels, mix, resize back    |
//! | `skip_connect`     | 0     | identity                                                |
//! | `none`             | 0     | zeros                                                   |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEVELS: usize = 4;

/// A validated 4-level pyramid `[P2, P3, P4, P5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: [Tensor; LEVELS],
}

impl FeaturePyramid {
    pub fn new(levels: [Tensor; LEVELS]) -> Result<Self> {
        let (c, mut h, mut w) = levels[0].chw()?;
        for (i, t) in levels.iter().enumerate().skip(1) {
            let (ci, hi, wi) = t.chw()?;
            if ci != c {
                return Err(Error::ShapeMismatch {
                    op: "pyramid",
                    dim: "channels",
                    expected: c,
                    got: ci,
                });
            }
            if h % 2 != 0 || w % 2 != 0 || hi != h / 2 || wi != w / 2 {
                return Err(Error::InvalidShape {
                    op: "pyramid",
                    detail: format!("level {i} is {hi}x{wi}, expected half of {h}x{w}"),
                });
            }
            h = hi;
            w = wi;
        }
        Ok(FeaturePyramid { levels })
    }

    /// A pyramid whose P2 level is `c x h x w`.
    pub fn from_fn(
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let levels = std::array::from_fn(|l| Tensor::from_fn(&[c, h >> l, w >> l], |i| f(l, i)));
        Self::new(levels)
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Result<Self> {
        Self::from_fn(c, h, w, |_, _| 0.0)
    }

    pub fn levels(&self) -> &[Tensor; LEVELS] {
        &self.levels
    }

    pub fn into_levels(self) -> [Tensor; LEVELS] {
        self.levels
    }

    pub fn channels(&self) -> usize {
        self.levels[0].shape()[0]
    }

    pub fn shapes(&self) -> [Vec<usize>; LEVELS] {
        std::array::from_fn(|l| self.levels[l].shape().to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(Tensor::is_finite)
    }

    pub fn max_abs_diff(&self, other: &FeaturePyramid) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// A pyramid living in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidVar {
    pub levels: [Var; LEVELS],
}

impl PyramidVar {
    pub fn constant(g: &mut Graph, p: &FeaturePyramid) -> Self {
        PyramidVar {
            levels: std::array::from_fn(|l| g.constant(p.levels[l].clone())),
        }
    }

    pub fn leaf(g: &mut Graph, p: &FeaturePyramid) -> Self {
        PyramidVar {
            levels: std::array::from_fn(|l| g.leaf(p.levels[l].clone())),
        }
    }

    pub fn value(&self, g: &Graph) -> Result<FeaturePyramid> {
        FeaturePyramid::new(std::array::from_fn(|l| g.value(self.levels[l]).clone()))
    }

    pub fn add(&self, g: &mut Graph, other: &PyramidVar) -> Result<PyramidVar> {
        let mut levels = self.levels;
        for (l, slot) in levels.iter_mut().enumerate() {
            *slot = g.add(self.levels[l], other.levels[l])?;
        }
        Ok(PyramidVar { levels })
    }

    pub fn scale(&self, g: &mut Graph, factor: Var) -> Result<PyramidVar> {
        let mut levels = self.levels;
        for (l, slot) in levels.iter_mut().enumerate() {
            *slot = g.scale(self.levels[l], factor)?;
        }
        Ok(PyramidVar { levels })
    }

    pub fn zeros_like(&self, g: &mut Graph) -> PyramidVar {
        PyramidVar {
            levels: std::array::from_fn(|l| {
                let z = g.value(self.levels[l]).zeros_like();
                g.constant(z)
            }),
        }
    }

    /// Scalar sum over every element of every level.
    pub fn sum(&self, g: &mut Graph) -> Result<Var> {
        let sums: Vec<Var> = self.levels.iter().map(|&v| g.sum(v)).collect();
        g.add_all(&sums)
    }
}

/// The six information-path kinds. The first four carry convolution weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    TopDown,
    BottomUp,
    ScaleEqualizing,
    FusingSplitting,
    SkipConnect,
    None,
}

impl PathKind {
    pub const ALL: [PathKind; 6] = [
        PathKind::TopDown,
        PathKind::BottomUp,
        PathKind::ScaleEqualizing,
        PathKind::FusingSplitting,
        PathKind::SkipConnect,
        PathKind::None,
    ];

    pub const PARAMETERIZED: [PathKind; 4] = [
        PathKind::TopDown,
        PathKind::BottomUp,
        PathKind::ScaleEqualizing,
        PathKind::FusingSplitting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_parameterized(self) -> bool {
        self.conv_count() > 0
    }

    /// Number of 3x3 convolutions the kind owns.
    pub fn conv_count(self) -> usize {
        match self {
            PathKind::TopDown | PathKind::BottomUp => 4,
            PathKind::ScaleEqualizing => 3,
            PathKind::FusingSplitting => 2,
            PathKind::SkipConnect | PathKind::None => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::TopDown => "top_down",
            PathKind::BottomUp => "bottom_up",
            PathKind::ScaleEqualizing => "scale_equalizing",
            PathKind::FusingSplitting => "fusing_splitting",
            PathKind::SkipConnect => "skip_connect",
            PathKind::None => "none",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PathKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Genotype(format!("unknown path kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvParams {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, stride: usize) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv3x3(x, w, b, stride)
    }
}

/// Weight bank of one path. Conv order per kind:
/// top_down / bottom_up `[W2, W3, W4, W5]`; scale_equalizing `[W1, W0, W-1]`;
/// fusing_splitting `[Ws, Wl]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathParams {
    kind: PathKind,
    convs: Vec<ConvParams>,
}

impl PathParams {
    pub fn new(kind: PathKind, convs: Vec<ConvParams>) -> Result<Self> {
        if convs.len() != kind.conv_count() {
            return Err(Error::InvalidShape {
                op: "path_params",
                detail: format!(
                    "{kind} needs {} convolutions, got {}",
                    kind.conv_count(),
                    convs.len()
                ),
            });
        }
        Ok(PathParams { kind, convs })
    }

    /// Registers freshly initialised weights for `kind` under `prefix`.
    pub fn init(
        kind: PathKind,
        prefix: &str,
        channels: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let c_in = if kind == PathKind::FusingSplitting {
            2 * channels
        } else {
            channels
        };
        let convs = (0..kind.conv_count())
            .map(|i| {
                let (weight, bias) =
                    store.add_conv(&format!("{prefix}.{kind}.conv{i}"), c_in, channels, rng);
                ConvParams { weight, bias }
            })
            .collect();
        PathParams { kind, convs }
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn convs(&self) -> &[ConvParams] {
        &self.convs
    }

    fn expect(&self, kind: PathKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Genotype(format!(
                "expected {kind} weights, got {}",
                self.kind
            )))
        }
    }
}

pub fn top_down(
    g: &mut Graph,
    store: &ParamStore,
    params: &PathParams,
    p: &PyramidVar,
) -> Result<PyramidVar> {
    params.expect(PathKind::TopDown)?;
    let w = &params.convs;
    let mut out = p.levels;
    out[3] = w[3].apply(g, store, p.levels[3], 1)?;
    for l in (0..3).rev() {
        let up = g.upsample2x(out[l + 1])?;
        let merged = g.add(up, p.levels[l])?;
        out[l] = w[l].apply(g, store, merged, 1)?;
    }
    Ok(PyramidVar { levels: out })
}

pub fn bottom_up(
    g: &mut Graph,
    store: &ParamStore,
    params: &PathParams,
    p: &PyramidVar,
) -> Result<PyramidVar> {
    params.expect(PathKind::BottomUp)?;
    let w = &params.convs;
    let mut out = p.levels;
    out[0] = w[0].apply(g, store, p.levels[0], 1)?;
    for l in 1..LEVELS {
        let down = g.downsample2x(out[l - 1])?;
        let merged = g.add(down, p.levels[l])?;
        out[l] = w[l].apply(g, store, merged, 1)?;
    }
    Ok(PyramidVar { levels: out })
}

pub fn scale_equalizing(
    g: &mut Graph,
    store: &ParamStore,
    params: &PathParams,
    p: &PyramidVar,
) -> Result<PyramidVar> {
    params.expect(PathKind::ScaleEqualizing)?;
    let [w_up, w_same, w_down] = [params.convs[0], params.convs[1], params.convs[2]];
    let mut out = p.levels;
    for l in 0..LEVELS {
        let mut terms = vec![w_same.apply(g, store, p.levels[l], 1)?];
        if l + 1 < LEVELS {
            let higher = w_up.apply(g, store, p.levels[l + 1], 1)?;
            terms.insert(0, g.upsample2x(higher)?);
        }
        if l > 0 {
            terms.push(w_down.apply(g, store, p.levels[l - 1], 2)?);
        }
        out[l] = g.add_all(&terms)?;
    }
    Ok(PyramidVar { levels: out })
}

pub fn fusing_splitting(
    g: &mut Graph,
    store: &ParamStore,
    params: &PathParams,
    p: &PyramidVar,
) -> Result<PyramidVar> {
    params.expect(PathKind::FusingSplitting)?;
    let [w_s, w_l] = [params.convs[0], params.convs[1]];
    let [p2, p3, p4, p5] = p.levels;

    let up5 = g.upsample2x(p5)?;
    let alpha_s = g.add(p4, up5)?;
    let down2 = g.downsample2x(p2)?;
    let alpha_l = g.add(down2, p3)?;

    let alpha_l_down = g.downsample2x(alpha_l)?;
    let cat_s = g.concat_channels(alpha_s, alpha_l_down)?;
    let beta_s = w_s.apply(g, store, cat_s, 1)?;

    let alpha_s_up = g.upsample2x(alpha_s)?;
    let cat_l = g.concat_channels(alpha_s_up, alpha_l)?;
    let beta_l = w_l.apply(g, store, cat_l, 1)?;

    let f2 = g.upsample2x(beta_l)?;
    let f5 = g.downsample2x(beta_s)?;
    Ok(PyramidVar {
        levels: [f2, beta_l, beta_s, f5],
    })
}

pub fn skip_connect(p: &PyramidVar) -> PyramidVar {
    *p
}

pub fn none_path(g: &mut Graph, p: &PyramidVar) -> PyramidVar {
    p.zeros_like(g)
}

/// Dispatches on `kind`. Parameterized kinds require `params`.
pub fn apply_path(
    g: &mut Graph,
    store: &ParamStore,
    kind: PathKind,
    params: Option<&PathParams>,
    p: &PyramidVar,
) -> Result<PyramidVar> {
    let need = || params.ok_or_else(|| Error::Genotype(format!("no weights bound for {kind}")));
    match kind {
        PathKind::TopDown => top_down(g, store, need()?, p),
        PathKind::BottomUp => bottom_up(g, store, need()?, p),
        PathKind::ScaleEqualizing => scale_equalizing(g, store, need()?, p),
        PathKind::FusingSplitting => fusing_splitting(g, store, need()?, p),
        PathKind::SkipConnect => Ok(skip_connect(p)),
        PathKind::None => Ok(none_path(g, p)),
    }
}
