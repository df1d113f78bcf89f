//! Multiply-accumulate counting for conv and linear layers.
//!
//! Every cost term is `in_count * out_count * factor`, where each count is
//! either a fixed number or the kept-channel count of a prunable unit (a
//! conv layer of a sequential network). Removing one channel of unit `u`
//! therefore changes only the terms that mention `u`, and by an amount that
//! is exact integer arithmetic.

use std::fmt::Write as _;

use crate::arch::{Architecture, ConvDesc, FeatureShape, LayerDesc};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Unit(usize),
    Fixed(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsTerm {
    pub layer_id: usize,
    pub kind: &'static str,
    pub input: Extent,
    pub output: Extent,
    pub factor: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrunableUnit {
    pub layer_id: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsModel {
    pub units: Vec<PrunableUnit>,
    pub terms: Vec<FlopsTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub layer_id: usize,
    pub kind: &'static str,
    pub macs: u64,
}

impl FlopsModel {
    /// Cost model of an architecture description. Conv layers of a purely
    /// sequential network become prunable units; networks with residual
    /// blocks are counted with every extent fixed.
    pub fn from_architecture(arch: &Architecture) -> Result<Self> {
        if arch.layers.is_empty() {
            return Err(Error::InvalidArgument("empty architecture".into()));
        }
        let shapes = arch.shapes()?;
        let sequential = arch.is_sequential();
        let [c0, h0, w0] = arch.input;
        let mut prev = FeatureShape::Spatial { c: c0, h: h0, w: w0 };
        let mut units = Vec::new();
        let mut terms = Vec::new();
        // Unit feeding the current activation, and how many features each of
        // its channels contributes once flattened.
        let mut carrier: Option<usize> = None;
        let mut per_channel = 1u64;
        let mut block_entry = Vec::new();
        for (idx, (layer, &shape)) in arch.layers.iter().zip(&shapes).enumerate() {
            let spatial_out = |s: FeatureShape| match s {
                FeatureShape::Spatial { h, w, .. } => (h * w) as u64,
                FeatureShape::Flat { .. } => 1,
            };
            match layer {
                LayerDesc::Conv(ConvDesc { out, kernel, .. }) => {
                    let c_in = channels(prev);
                    let input = match carrier {
                        Some(u) if sequential => Extent::Unit(u),
                        _ => Extent::Fixed(c_in as u64),
                    };
                    let output = if sequential {
                        units.push(PrunableUnit {
                            layer_id: idx,
                            channels: *out,
                        });
                        carrier = Some(units.len() - 1);
                        Extent::Unit(units.len() - 1)
                    } else {
                        Extent::Fixed(*out as u64)
                    };
                    terms.push(FlopsTerm {
                        layer_id: idx,
                        kind: "conv",
                        input,
                        output,
                        factor: (kernel * kernel) as u64 * spatial_out(shape),
                    });
                }
                LayerDesc::Shortcut(ConvDesc { out, kernel, .. }) => {
                    let entry: FeatureShape = *block_entry.last().ok_or_else(|| {
                        Error::InvalidArgument("shortcut outside residual block".into())
                    })?;
                    let p = layer_shortcut_out(arch, idx, entry)?;
                    terms.push(FlopsTerm {
                        layer_id: idx,
                        kind: "shortcut",
                        input: Extent::Fixed(channels(entry) as u64),
                        output: Extent::Fixed(*out as u64),
                        factor: (kernel * kernel) as u64 * p,
                    });
                }
                LayerDesc::ResidualBegin => block_entry.push(prev),
                LayerDesc::ResidualEnd => {
                    block_entry.pop();
                }
                LayerDesc::Flatten => {
                    if let FeatureShape::Spatial { h, w, .. } = prev {
                        per_channel *= (h * w) as u64;
                    }
                }
                LayerDesc::GlobalAvgPool => {}
                LayerDesc::Linear { out, .. } => {
                    let input = match carrier {
                        Some(u) => Extent::Unit(u),
                        None => Extent::Fixed(prev.size() as u64),
                    };
                    let factor = if carrier.is_some() { per_channel } else { 1 };
                    terms.push(FlopsTerm {
                        layer_id: idx,
                        kind: "linear",
                        input,
                        output: Extent::Fixed(*out as u64),
                        factor,
                    });
                    carrier = None;
                    per_channel = 1;
                }
                LayerDesc::BatchNorm | LayerDesc::Relu | LayerDesc::MaxPool(_) => {}
            }
            prev = shape;
        }
        Ok(FlopsModel { units, terms })
    }

    pub fn from_graph<T: Scalar>(graph: &ModelGraph<T>) -> Result<Self> {
        Self::from_architecture(&graph.architecture()?)
    }

    pub fn full_counts(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.channels).collect()
    }

    pub fn unit_of_layer(&self, layer_id: usize) -> Option<usize> {
        self.units.iter().position(|u| u.layer_id == layer_id)
    }

    fn check(&self, kept: &[usize]) -> Result<()> {
        if kept.len() != self.units.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} kept counts, got {}",
                self.units.len(),
                kept.len()
            )));
        }
        for (u, (&k, unit)) in kept.iter().zip(&self.units).enumerate() {
            if k > unit.channels {
                return Err(Error::InvalidArgument(format!(
                    "unit {u} (layer {}) keeps {k} of {} channels",
                    unit.layer_id, unit.channels
                )));
            }
        }
        Ok(())
    }

    fn count(extent: Extent, kept: &[usize]) -> u64 {
        match extent {
            Extent::Unit(u) => kept[u] as u64,
            Extent::Fixed(n) => n,
        }
    }

    fn term_cost(term: &FlopsTerm, kept: &[usize]) -> u64 {
        Self::count(term.input, kept) * Self::count(term.output, kept) * term.factor
    }

    pub fn total(&self, kept: &[usize]) -> Result<u64> {
        self.check(kept)?;
        Ok(self.terms.iter().map(|t| Self::term_cost(t, kept)).sum())
    }

    pub fn baseline(&self) -> u64 {
        self.total(&self.full_counts()).expect("full counts are valid")
    }

    /// Fractional reduction `1 - total(kept) / baseline`.
    pub fn rate(&self, kept: &[usize]) -> Result<f64> {
        Ok(reduction(self.baseline(), self.total(kept)?))
    }

    /// Cost removed by dropping one channel of `unit` from `kept`.
    pub fn removal_delta(&self, kept: &[usize], unit: usize) -> u64 {
        self.terms
            .iter()
            .map(|t| match (t.input, t.output) {
                (Extent::Unit(u), out) if u == unit => Self::count(out, kept) * t.factor,
                (inp, Extent::Unit(u)) if u == unit => Self::count(inp, kept) * t.factor,
                _ => 0,
            })
            .sum()
    }

    pub fn layer_costs(&self, kept: &[usize]) -> Result<Vec<LayerCost>> {
        self.check(kept)?;
        Ok(self
            .terms
            .iter()
            .map(|t| LayerCost {
                layer_id: t.layer_id,
                kind: t.kind,
                macs: Self::term_cost(t, kept),
            })
            .collect())
    }

    /// Cost of the term belonging to `layer_id`, or 0 if it has none.
    pub fn layer_cost(&self, layer_id: usize, kept: &[usize]) -> u64 {
        self.terms
            .iter()
            .filter(|t| t.layer_id == layer_id)
            .map(|t| Self::term_cost(t, kept))
            .sum()
    }

    /// Table of per-layer costs, either aligned text or CSV.
    pub fn render_table(&self, kept: &[usize], csv: bool) -> Result<String> {
        let rows = self.layer_costs(kept)?;
        let total: u64 = rows.iter().map(|r| r.macs).sum();
        let mut s = String::new();
        if csv {
            s.push_str("layer,kind,macs\n");
            for r in &rows {
                let _ = writeln!(s, "{},{},{}", r.layer_id, r.kind, r.macs);
            }
            let _ = writeln!(s, "total,,{total}");
        } else {
            let _ = writeln!(s, "{:>6}  {:<9} {:>15}", "layer", "kind", "MACs");
            for r in &rows {
                let _ = writeln!(s, "{:>6}  {:<9} {:>15}", r.layer_id, r.kind, r.macs);
            }
            let _ = writeln!(s, "total {} ({})", total, human(total));
        }
        Ok(s)
    }
}

pub fn reduction(baseline: u64, pruned: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        1.0 - pruned as f64 / baseline as f64
    }
}

/// `4089184256` -> `4.09G`.
pub fn human(n: u64) -> String {
    let v = n as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2}K", v / 1e3)
    } else {
        n.to_string()
    }
}

/// Multiply-accumulate count of a graph with the given kept-channel counts
/// per conv layer, in layer order.
pub fn model_flops<T: Scalar>(graph: &ModelGraph<T>, kept: &[usize]) -> Result<u64> {
    FlopsModel::from_graph(graph)?.total(kept)
}

fn channels(s: FeatureShape) -> usize {
    match s {
        FeatureShape::Spatial { c, .. } => c,
        FeatureShape::Flat { d } => d,
    }
}

fn layer_shortcut_out(arch: &Architecture, idx: usize, entry: FeatureShape) -> Result<u64> {
    let LayerDesc::Shortcut(desc) = &arch.layers[idx] else {
        unreachable!("called on shortcut layers only")
    };
    let FeatureShape::Spatial { h, w, .. } = entry else {
        return Err(Error::InvalidArgument("shortcut on flat features".into()));
    };
    let p = desc.params();
    match (p.output_extent(h, desc.kernel), p.output_extent(w, desc.kernel)) {
        (Some(ho), Some(wo)) => Ok((ho * wo) as u64),
        _ => Err(Error::InvalidArgument(format!("shortcut does not fit {entry:?}"))),
    }
}
