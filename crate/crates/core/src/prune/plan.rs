//! Pruning plans and their text form.
//!
//! ```text
//! # pruning plan
//! target_rate 0.5
//! achieved_rate 0.5031
//! score_kind abs_sum
//! mu 0.5
//! baseline_flops 2506752
//! pruned_flops 1245696
//! removal_order 0:3 4:11 ...
//! layer 0 kept 12/16 flops 442368 -> 331776 channels 0,1,2,4,...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prune::flops::{reduction, FlopsModel};
use crate::prune::score::ScoreKind;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub layer_id: usize,
    pub original: usize,
    /// Sorted kept output-channel indices.
    pub kept: Vec<usize>,
    pub flops_before: u64,
    pub flops_after: u64,
}

impl LayerPlan {
    pub fn pruning_rate(&self) -> f64 {
        1.0 - self.kept.len() as f64 / self.original as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningPlan {
    pub target_rate: f64,
    pub achieved_rate: f64,
    pub score_kind: ScoreKind,
    pub mu: f64,
    pub baseline_flops: u64,
    pub pruned_flops: u64,
    /// `(layer_id, channel)` in removal order.
    pub removal_order: Vec<(usize, usize)>,
    pub layers: Vec<LayerPlan>,
}

impl PruningPlan {
    /// Plan for the given kept sets, with FLOPs filled in from `flops`.
    pub fn from_kept(
        flops: &FlopsModel,
        kept: Vec<Vec<usize>>,
        target_rate: f64,
        score_kind: ScoreKind,
        mu: f64,
        removal_order: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if kept.len() != flops.units.len() {
            return Err(Error::InvalidArgument(format!(
                "plan covers {} layers, model has {} prunable layers",
                kept.len(),
                flops.units.len()
            )));
        }
        let full = flops.full_counts();
        let counts: Vec<usize> = kept.iter().map(Vec::len).collect();
        let pruned_flops = flops.total(&counts)?;
        let baseline_flops = flops.baseline();
        let layers = flops
            .units
            .iter()
            .zip(kept)
            .map(|(unit, kept)| LayerPlan {
                layer_id: unit.layer_id,
                original: unit.channels,
                flops_before: flops.layer_cost(unit.layer_id, &full),
                flops_after: flops.layer_cost(unit.layer_id, &counts),
                kept,
            })
            .collect();
        let plan = PruningPlan {
            target_rate,
            achieved_rate: reduction(baseline_flops, pruned_flops),
            score_kind,
            mu,
            baseline_flops,
            pruned_flops,
            removal_order,
            layers,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn keep_all(flops: &FlopsModel, score_kind: ScoreKind, mu: f64) -> Result<Self> {
        let kept = flops.units.iter().map(|u| (0..u.channels).collect()).collect();
        Self::from_kept(flops, kept, 0.0, score_kind, mu, Vec::new())
    }

    pub fn layer(&self, layer_id: usize) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.kept.len()).collect()
    }

    /// Every layer keeps a nonempty, sorted, in-range set of channels.
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if l.kept.is_empty() {
                return Err(Error::InvalidArgument(format!("layer {} keeps no channels", l.layer_id)));
            }
            if l.kept.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "kept channels of layer {} are not strictly increasing",
                    l.layer_id
                )));
            }
            if let Some(&c) = l.kept.iter().find(|&&c| c >= l.original) {
                return Err(Error::InvalidArgument(format!(
                    "layer {} keeps channel {c} of {}",
                    l.layer_id, l.original
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# pruning plan\n");
        let _ = writeln!(s, "target_rate {}", self.target_rate);
        let _ = writeln!(s, "achieved_rate {}", self.achieved_rate);
        let _ = writeln!(s, "score_kind {}", self.score_kind);
        let _ = writeln!(s, "mu {}", self.mu);
        let _ = writeln!(s, "baseline_flops {}", self.baseline_flops);
        let _ = writeln!(s, "pruned_flops {}", self.pruned_flops);
        s.push_str("removal_order");
        for (l, c) in &self.removal_order {
            let _ = write!(s, " {l}:{c}");
        }
        s.push('\n');
        for l in &self.layers {
            let channels: Vec<String> = l.kept.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "layer {} kept {}/{} flops {} -> {} channels {}",
                l.layer_id,
                l.kept.len(),
                l.original,
                l.flops_before,
                l.flops_after,
                channels.join(",")
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = PruningPlan {
            target_rate: f64::NAN,
            achieved_rate: f64::NAN,
            score_kind: ScoreKind::default(),
            mu: f64::NAN,
            baseline_flops: 0,
            pruned_flops: 0,
            removal_order: Vec::new(),
            layers: Vec::new(),
        };
        let mut seen = [false; 6];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: n, msg };
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number `{v}`")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("bad integer `{v}`")));
            match key {
                "target_rate" => (plan.target_rate, seen[0]) = (num(rest)?, true),
                "achieved_rate" => (plan.achieved_rate, seen[1]) = (num(rest)?, true),
                "score_kind" => {
                    plan.score_kind = rest.parse().map_err(|e: Error| err(e.to_string()))?;
                    seen[2] = true;
                }
                "mu" => (plan.mu, seen[3]) = (num(rest)?, true),
                "baseline_flops" => (plan.baseline_flops, seen[4]) = (int(rest)?, true),
                "pruned_flops" => (plan.pruned_flops, seen[5]) = (int(rest)?, true),
                "removal_order" => {
                    for pair in rest.split_whitespace() {
                        let (l, c) = pair
                            .split_once(':')
                            .ok_or_else(|| err(format!("bad removal `{pair}`")))?;
                        plan.removal_order.push((int(l)? as usize, int(c)? as usize));
                    }
                }
                "layer" => plan.layers.push(parse_layer(rest).map_err(err)?),
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let names = ["target_rate", "achieved_rate", "score_kind", "mu", "baseline_flops", "pruned_flops"];
            return Err(Error::Parse {
                line: 0,
                msg: format!("missing `{}`", names[missing]),
            });
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `layer,original,kept,pruning_rate,flops_before,flops_after`
    pub fn rates_csv(&self) -> String {
        let mut s = String::from("layer,original,kept,pruning_rate,flops_before,flops_after\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{},{}",
                l.layer_id,
                l.original,
                l.kept.len(),
                l.pruning_rate(),
                l.flops_before,
                l.flops_after
            );
        }
        s
    }
}

fn parse_layer(rest: &str) -> std::result::Result<LayerPlan, String> {
    let t: Vec<&str> = rest.split_whitespace().collect();
    let shape_ok = t.len() >= 8 && t[1] == "kept" && t[3] == "flops" && t[5] == "->" && t[7] == "channels";
    if !shape_ok {
        return Err(format!("malformed layer line `{rest}`"));
    }
    let int = |v: &str| v.parse::<u64>().map_err(|_| format!("bad integer `{v}`"));
    let (kept_n, original) = t[2].split_once('/').ok_or_else(|| format!("bad count `{}`", t[2]))?;
    let kept: Vec<usize> = match t.get(8) {
        Some(list) => list
            .split(',')
            .map(|c| int(c).map(|v| v as usize))
            .collect::<std::result::Result<_, _>>()?,
        None => Vec::new(),
    };
    if kept.len() as u64 != int(kept_n)? {
        return Err(format!("layer {} lists {} channels, header says {kept_n}", t[0], kept.len()));
    }
    Ok(LayerPlan {
        layer_id: int(t[0])? as usize,
        original: int(original)? as usize,
        kept,
        flops_before: int(t[4])?,
        flops_after: int(t[6])?,
    })
}
