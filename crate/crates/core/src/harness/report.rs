use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::Phase;
use crate::prune::flops::human;
use crate::prune::PruningPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Unweighted sparsity penalty at the end of a mask epoch.
    pub penalty: Option<f64>,
    /// Mean mask column norm at the end of a mask epoch.
    pub mask_norm: Option<f64>,
}

const CURVE_HEADER: &str = "phase,epoch,lr,loss,train_accuracy,test_accuracy,penalty,mask_norm";

impl EpochRecord {
    pub fn csv(records: &[EpochRecord]) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = format!("{CURVE_HEADER}\n");
        for r in records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.phase,
                r.epoch,
                r.lr,
                r.loss,
                r.train_accuracy,
                r.test_accuracy,
                opt(r.penalty),
                opt(r.mask_norm)
            );
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == CURVE_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: "missing curve header".into() }),
        }
        lines
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let err = |msg: String| Error::Parse { line: i + 1, msg };
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 8 {
                    return Err(err(format!("expected 8 fields, got {}", f.len())));
                }
                let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number `{v}`")));
                let opt = |v: &str| if v.is_empty() { Ok(None) } else { num(v).map(Some) };
                Ok(EpochRecord {
                    phase: f[0].parse().map_err(|e: Error| err(e.to_string()))?,
                    epoch: f[1].parse().map_err(|_| err(format!("bad epoch `{}`", f[1])))?,
                    lr: num(f[2])?,
                    loss: num(f[3])?,
                    train_accuracy: num(f[4])?,
                    test_accuracy: num(f[5])?,
                    penalty: opt(f[6])?,
                    mask_norm: opt(f[7])?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub curves: Vec<EpochRecord>,
    /// Accuracy of the dense masked model at the end of the mask phase.
    pub dense_accuracy: f64,
    pub final_accuracy: f64,
    pub plan: PruningPlan,
    /// Wall-clock seconds per phase. Left out of
    /// [`results_text`](Self::results_text), which is reproducible.
    pub timings: Vec<(Phase, f64)>,
}

impl RunReport {
    pub fn achieved_rate(&self) -> f64 {
        self.plan.achieved_rate
    }

    pub fn summary_line(&self) -> String {
        summary_line(self.dense_accuracy, self.final_accuracy, &self.plan)
    }

    /// Everything except timings.
    pub fn results_text(&self) -> String {
        let p = &self.plan;
        let mut s = String::from("# run report\n");
        let _ = writeln!(s, "dense_accuracy {}", self.dense_accuracy);
        let _ = writeln!(s, "final_accuracy {}", self.final_accuracy);
        let _ = writeln!(s, "target_rate {}", p.target_rate);
        let _ = writeln!(s, "achieved_rate {}", p.achieved_rate);
        let _ = writeln!(s, "baseline_flops {}", p.baseline_flops);
        let _ = writeln!(s, "pruned_flops {}", p.pruned_flops);
        let _ = writeln!(s, "summary {}", self.summary_line());
        for l in &p.layers {
            let _ = writeln!(
                s,
                "layer {} kept {}/{} rate {:.2}%",
                l.layer_id,
                l.kept.len(),
                l.original,
                100.0 * l.pruning_rate()
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = self.results_text();
        for (phase, secs) in &self.timings {
            let _ = writeln!(s, "timing {phase} {secs:.3}");
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        EpochRecord::csv(&self.curves)
    }
}

/// `Top-1 91.20% -> 90.85% | FLOPs 2.51M -> 1.25M (50.12% reduction)`
pub fn summary_line(dense: f64, pruned: f64, plan: &PruningPlan) -> String {
    let reduction = 1.0 - plan.pruned_flops as f64 / plan.baseline_flops as f64;
    format!(
        "Top-1 {:.2}% \u{2192} {:.2}% | FLOPs {} \u{2192} {} ({:.2}% reduction)",
        100.0 * dense,
        100.0 * pruned,
        human(plan.baseline_flops),
        human(plan.pruned_flops),
        100.0 * reduction
    )
}

/// The scalar results of a saved report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSummary {
    pub dense_accuracy: f64,
    pub final_accuracy: f64,
}

impl ReportSummary {
    pub fn parse(text: &str) -> Result<Self> {
        let find = |key: &str| -> Result<f64> {
            text.lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix(' '))
                .ok_or_else(|| Error::Parse { line: 0, msg: format!("report has no `{key}`") })?
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: 0, msg: format!("bad `{key}` value") })
        };
        Ok(ReportSummary {
            dense_accuracy: find("dense_accuracy")?,
            final_accuracy: find("final_accuracy")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_round_trip() {
        let r = vec![
            EpochRecord {
                phase: Phase::Mask,
                epoch: 0,
                lr: 0.1,
                loss: 2.5,
                train_accuracy: 0.3,
                test_accuracy: 0.25,
                penalty: Some(12.5),
                mask_norm: Some(0.9),
            },
            EpochRecord {
                phase: Phase::Finetune,
                epoch: 3,
                lr: 0.01,
                loss: 0.1,
                train_accuracy: 0.99,
                test_accuracy: 0.97,
                penalty: None,
                mask_norm: None,
            },
        ];
        assert_eq!(EpochRecord::parse_csv(&EpochRecord::csv(&r)).unwrap(), r);
    }
}
