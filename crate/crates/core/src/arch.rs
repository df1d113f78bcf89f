//! Flat-text architecture descriptions.
//!
//! One layer per line, a kind followed by `key=value` hyperparameters:
//!
//! ```text
//! input channels=3 height=32 width=32
//! conv out=16 kernel=3 stride=1 padding=1 bias=false
//! batchnorm
//! relu
//! maxpool kernel=2 stride=2
//! globalavgpool
//! flatten
//! linear out=10
//! ```
//!
//! `residual_begin`, `shortcut` and `residual_end` describe residual blocks.
//! They are accepted for FLOPs auditing but cannot be built into a
//! trainable [`ModelGraph`](crate::model::ModelGraph).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::{Conv2dParams, PoolParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDesc {
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvDesc {
    pub fn params(&self) -> Conv2dParams {
        Conv2dParams::new(self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv(ConvDesc),
    BatchNorm,
    Relu,
    MaxPool(PoolParams),
    GlobalAvgPool,
    Flatten,
    Linear { out: usize, bias: bool },
    ResidualBegin,
    Shortcut(ConvDesc),
    ResidualEnd,
}

impl LayerDesc {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerDesc::Conv(_) => "conv",
            LayerDesc::BatchNorm => "batchnorm",
            LayerDesc::Relu => "relu",
            LayerDesc::MaxPool(_) => "maxpool",
            LayerDesc::GlobalAvgPool => "globalavgpool",
            LayerDesc::Flatten => "flatten",
            LayerDesc::Linear { .. } => "linear",
            LayerDesc::ResidualBegin => "residual_begin",
            LayerDesc::Shortcut(_) => "shortcut",
            LayerDesc::ResidualEnd => "residual_end",
        }
    }

    pub fn is_residual(&self) -> bool {
        matches!(
            self,
            LayerDesc::ResidualBegin | LayerDesc::Shortcut(_) | LayerDesc::ResidualEnd
        )
    }
}

/// Activation shape between layers, batch axis excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { d: usize },
}

impl FeatureShape {
    pub fn size(&self) -> usize {
        match *self {
            FeatureShape::Spatial { c, h, w } => c * h * w,
            FeatureShape::Flat { d } => d,
        }
    }

    pub fn with_batch(&self, n: usize) -> Vec<usize> {
        match *self {
            FeatureShape::Spatial { c, h, w } => vec![n, c, h, w],
            FeatureShape::Flat { d } => vec![n, d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// `(channels, height, width)` of one input image.
    pub input: [usize; 3],
    pub layers: Vec<LayerDesc>,
    /// Source line of each layer, 0 when built programmatically.
    pub lines: Vec<usize>,
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected key=value, got `{tok}`"),
            })?;
            if map.insert(k, v).is_some() {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(Fields { line, map })
    }

    fn usize_or(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.map.remove(key) {
            Some(v) => v.parse().map_err(|_| Error::Parse {
                line: self.line,
                msg: format!("`{key}` must be a nonnegative integer, got `{v}`"),
            }),
            None => default.ok_or_else(|| Error::Parse {
                line: self.line,
                msg: format!("missing required key `{key}`"),
            }),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.map.remove(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Parse {
                line: self.line,
                msg: format!("`{key}` must be true or false, got `{v}`"),
            }),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::Parse {
                line: self.line,
                msg: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }

    fn conv(&mut self) -> Result<ConvDesc> {
        let out = self.usize_or("out", None)?;
        let kernel = self.usize_or("kernel", None)?;
        let stride = self.usize_or("stride", Some(1))?;
        let padding = self.usize_or("padding", Some(0))?;
        let bias = self.bool_or("bias", false)?;
        if out == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Parse {
                line: self.line,
                msg: "out, kernel and stride must be positive".into(),
            });
        }
        Ok(ConvDesc {
            out,
            kernel,
            stride,
            padding,
            bias,
        })
    }
}

impl Architecture {
    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        let mut lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let mut f = Fields::parse(line, &tokens[1..])?;
            let kind = tokens[0];
            if kind == "input" {
                if input.is_some() || !layers.is_empty() {
                    return Err(Error::Parse {
                        line,
                        msg: "`input` must appear exactly once, before any layer".into(),
                    });
                }
                let dims = [
                    f.usize_or("channels", None)?,
                    f.usize_or("height", None)?,
                    f.usize_or("width", None)?,
                ];
                f.finish()?;
                if dims.contains(&0) {
                    return Err(Error::Parse {
                        line,
                        msg: "input dimensions must be positive".into(),
                    });
                }
                input = Some(dims);
                continue;
            }
            if input.is_none() {
                return Err(Error::Parse {
                    line,
                    msg: "`input` line must come first".into(),
                });
            }
            let layer = match kind {
                "conv" => LayerDesc::Conv(f.conv()?),
                "shortcut" => LayerDesc::Shortcut(f.conv()?),
                "batchnorm" => LayerDesc::BatchNorm,
                "relu" => LayerDesc::Relu,
                "maxpool" => {
                    let kernel = f.usize_or("kernel", None)?;
                    let stride = f.usize_or("stride", Some(kernel))?;
                    let padding = f.usize_or("padding", Some(0))?;
                    if kernel == 0 || stride == 0 {
                        return Err(Error::Parse {
                            line,
                            msg: "maxpool kernel and stride must be positive".into(),
                        });
                    }
                    LayerDesc::MaxPool(PoolParams {
                        kernel,
                        stride,
                        padding,
                    })
                }
                "globalavgpool" => LayerDesc::GlobalAvgPool,
                "flatten" => LayerDesc::Flatten,
                "linear" => {
                    let out = f.usize_or("out", None)?;
                    let bias = f.bool_or("bias", true)?;
                    if out == 0 {
                        return Err(Error::Parse {
                            line,
                            msg: "linear out must be positive".into(),
                        });
                    }
                    LayerDesc::Linear { out, bias }
                }
                "residual_begin" => LayerDesc::ResidualBegin,
                "residual_end" => LayerDesc::ResidualEnd,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown layer kind `{other}`"),
                    })
                }
            };
            f.finish()?;
            layers.push(layer);
            lines.push(line);
        }
        let input = input.ok_or(Error::Parse {
            line: 0,
            msg: "empty architecture: no `input` line".into(),
        })?;
        if layers.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "empty architecture: no layers".into(),
            });
        }
        let arch = Architecture {
            input,
            layers,
            lines,
        };
        arch.shapes()?;
        Ok(arch)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn new(input: [usize; 3], layers: Vec<LayerDesc>) -> Result<Self> {
        let lines = vec![0; layers.len()];
        let arch = Architecture {
            input,
            layers,
            lines,
        };
        arch.shapes()?;
        Ok(arch)
    }

    /// Bundled ResNet-50 description at 224x224 (FLOPs auditing only).
    pub fn resnet50() -> Self {
        Self::parse(include_str!("../archs/resnet50.arch")).expect("bundled resnet50 parses")
    }

    /// Bundled four-conv CNN for 32x32, 10-class inputs.
    pub fn toy4() -> Self {
        Self::parse(include_str!("../archs/toy4.arch")).expect("bundled toy4 parses")
    }

    /// Resolves `resnet50`/`toy4` to a bundled description, anything else as a path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "resnet50" => Ok(Self::resnet50()),
            "toy4" => Ok(Self::toy4()),
            path => Self::from_file(path),
        }
    }

    pub fn is_sequential(&self) -> bool {
        !self.layers.iter().any(LayerDesc::is_residual)
    }

    fn err(&self, idx: usize, msg: String) -> Error {
        Error::Parse {
            line: self.lines.get(idx).copied().unwrap_or(0),
            msg,
        }
    }

    /// Shape after every layer. Fails on incompatible layers.
    pub fn shapes(&self) -> Result<Vec<FeatureShape>> {
        let [c, h, w] = self.input;
        let mut cur = FeatureShape::Spatial { c, h, w };
        // (shape at block entry, shortcut output)
        let mut blocks: Vec<(FeatureShape, Option<FeatureShape>)> = Vec::new();
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let spatial = |s: FeatureShape| match s {
                FeatureShape::Spatial { c, h, w } => Ok((c, h, w)),
                FeatureShape::Flat { .. } => Err(self.err(
                    idx,
                    format!("{} needs a spatial input, got {s:?}", layer.kind()),
                )),
            };
            let conv_out = |desc: &ConvDesc, s: FeatureShape| -> Result<FeatureShape> {
                let (_, h, w) = spatial(s)?;
                let p = desc.params();
                match (p.output_extent(h, desc.kernel), p.output_extent(w, desc.kernel)) {
                    (Some(ho), Some(wo)) => Ok(FeatureShape::Spatial {
                        c: desc.out,
                        h: ho,
                        w: wo,
                    }),
                    _ => Err(self.err(idx, format!("kernel does not fit input {s:?}"))),
                }
            };
            cur = match layer {
                LayerDesc::Conv(desc) => conv_out(desc, cur)?,
                LayerDesc::BatchNorm => {
                    spatial(cur)?;
                    cur
                }
                LayerDesc::Relu => cur,
                LayerDesc::MaxPool(p) => {
                    let (c, h, w) = spatial(cur)?;
                    match (p.output_extent(h), p.output_extent(w)) {
                        (Some(ho), Some(wo)) => FeatureShape::Spatial { c, h: ho, w: wo },
                        _ => return Err(self.err(idx, format!("pool does not fit input {cur:?}"))),
                    }
                }
                LayerDesc::GlobalAvgPool => {
                    let (c, _, _) = spatial(cur)?;
                    FeatureShape::Flat { d: c }
                }
                LayerDesc::Flatten => FeatureShape::Flat { d: cur.size() },
                LayerDesc::Linear { out, .. } => match cur {
                    FeatureShape::Flat { .. } => FeatureShape::Flat { d: *out },
                    _ => return Err(self.err(idx, "linear needs a flattened input".into())),
                },
                LayerDesc::ResidualBegin => {
                    blocks.push((cur, None));
                    cur
                }
                LayerDesc::Shortcut(desc) => {
                    let (entry, shortcut) = blocks
                        .last_mut()
                        .ok_or_else(|| self.err(idx, "shortcut outside a residual block".into()))?;
                    *shortcut = Some(conv_out(desc, *entry)?);
                    cur
                }
                LayerDesc::ResidualEnd => {
                    let (entry, shortcut) = blocks
                        .pop()
                        .ok_or_else(|| self.err(idx, "residual_end without residual_begin".into()))?;
                    let skip = shortcut.unwrap_or(entry);
                    if skip != cur {
                        return Err(self.err(
                            idx,
                            format!("residual branch shape {cur:?} does not match skip {skip:?}"),
                        ));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        if !blocks.is_empty() {
            return Err(self.err(self.layers.len() - 1, "unterminated residual block".into()));
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<FeatureShape> {
        Ok(*self.shapes()?.last().expect("nonempty architecture"))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [c, h, w] = self.input;
        let _ = writeln!(s, "input channels={c} height={h} width={w}");
        let conv = |d: &ConvDesc| {
            format!(
                "out={} kernel={} stride={} padding={} bias={}",
                d.out, d.kernel, d.stride, d.padding, d.bias
            )
        };
        for layer in &self.layers {
            let line = match layer {
                LayerDesc::Conv(d) => format!("conv {}", conv(d)),
                LayerDesc::Shortcut(d) => format!("shortcut {}", conv(d)),
                LayerDesc::MaxPool(p) => format!(
                    "maxpool kernel={} stride={} padding={}",
                    p.kernel, p.stride, p.padding
                ),
                LayerDesc::Linear { out, bias } => format!("linear out={out} bias={bias}"),
                other => other.kind().to_string(),
            };
            let _ = writeln!(s, "{line}");
        }
        s
    }
}
