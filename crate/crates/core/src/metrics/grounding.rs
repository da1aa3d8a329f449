use serde::Serialize;

use super::MetricError;
use crate::geometry::{hbb_overlap, HorizontalBox};

pub const PR_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingScores {
    /// `(t, Pr@t)` for each entry of [`PR_THRESHOLDS`].
    pub precision_at: Vec<(f64, f64)>,
    pub miou: f64,
    pub ciou: f64,
    pub pairs: usize,
    pub unparseable: usize,
}

/// `None` predictions (unparseable model output) count as IoU 0 and add the
/// truth area to the cumulative union.
pub fn grounding_metrics(pairs: &[(Option<HorizontalBox>, HorizontalBox)]) -> Result<GroundingScores, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("grounding pairs"));
    }
    let mut ious = Vec::with_capacity(pairs.len());
    let (mut inter_sum, mut union_sum) = (0.0, 0.0);
    let mut unparseable = 0;
    for (pred, truth) in pairs {
        let (inter, union) = match pred {
            Some(p) => hbb_overlap(p, truth)?,
            None => {
                unparseable += 1;
                (0.0, truth.area())
            }
        };
        inter_sum += inter;
        union_sum += union;
        ious.push(if union > 0.0 { inter / union } else { 0.0 });
    }
    let n = pairs.len() as f64;
    let precision_at = PR_THRESHOLDS
        .iter()
        .map(|&t| (t, ious.iter().filter(|&&v| v >= t).count() as f64 / n))
        .collect();
    Ok(GroundingScores {
        precision_at,
        miou: ious.iter().sum::<f64>() / n,
        ciou: if union_sum > 0.0 { inter_sum / union_sum } else { 0.0 },
        pairs: pairs.len(),
        unparseable,
    })
}
