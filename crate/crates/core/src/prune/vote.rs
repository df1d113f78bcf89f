use crate::error::{Error, Result};
use crate::prune::flops::{reduction, FlopsModel};
use crate::prune::plan::PruningPlan;
use crate::prune::score::ChannelScoreTable;

/// Greedy global removal of the lowest-scored channels.
///
/// All channels are sorted by `(score, layer, channel)` ascending and removed
/// in that order, skipping any channel whose removal would leave its layer
/// empty, until the FLOPs reduction first reaches `alpha`. Because scores do
/// not change during voting, the removed set is the shortest admissible
/// prefix of the sorted list.
pub fn global_vote(
    scores: &ChannelScoreTable,
    flops: &FlopsModel,
    alpha: f64,
    mu: f64,
) -> Result<PruningPlan> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let units: Vec<usize> = scores
        .layers
        .iter()
        .map(|l| {
            let u = flops.unit_of_layer(l.layer_id).ok_or_else(|| {
                Error::InvalidArgument(format!("layer {} is not prunable", l.layer_id))
            })?;
            if flops.units[u].channels != l.scores.len() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has {} channels but {} scores",
                    l.layer_id,
                    flops.units[u].channels,
                    l.scores.len()
                )));
            }
            Ok(u)
        })
        .collect::<Result<_>>()?;
    if units.len() != flops.units.len() {
        return Err(Error::InvalidArgument(format!(
            "scores cover {} of {} prunable layers",
            units.len(),
            flops.units.len()
        )));
    }

    let mut kept_count = flops.full_counts();
    let baseline = flops.baseline();
    let max_rate = {
        let ones = vec![1; kept_count.len()];
        reduction(baseline, flops.total(&ones)?)
    };
    if alpha > max_rate {
        return Err(Error::UnreachableRate { target: alpha, max: max_rate });
    }

    let mut order: Vec<(f64, usize, usize, usize)> = scores
        .layers
        .iter()
        .zip(&units)
        .flat_map(|(l, &u)| l.scores.iter().enumerate().map(move |(c, &s)| (s, l.layer_id, c, u)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut removed: Vec<Vec<bool>> = flops.units.iter().map(|u| vec![false; u.channels]).collect();
    let mut total = baseline;
    let mut removal_order = Vec::new();
    for &(_, layer_id, c, u) in &order {
        if reduction(baseline, total) >= alpha {
            break;
        }
        if kept_count[u] == 1 {
            continue;
        }
        total -= flops.removal_delta(&kept_count, u);
        kept_count[u] -= 1;
        removed[u][c] = true;
        removal_order.push((layer_id, c));
    }

    let kept = removed
        .iter()
        .map(|r| r.iter().enumerate().filter(|(_, &x)| !x).map(|(c, _)| c).collect())
        .collect();
    let plan = PruningPlan::from_kept(flops, kept, alpha, scores.kind, mu, removal_order)?;
    debug_assert_eq!(plan.pruned_flops, total);
    Ok(plan)
}
