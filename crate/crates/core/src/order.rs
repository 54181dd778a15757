//! Resolving the temporal direction of each decoded window from the
//! magnitudes of the four extremum flows.

use blurwarp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexing::FrameIndexing;

/// Mean-magnitude difference (px) below which a decision is a tie.
pub const RULE_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderDecision {
    pub direction: Direction,
    /// Mean magnitudes of the flows from the window's earliest and latest
    /// slots toward the other reference.
    pub earliest: f64,
    pub latest: f64,
    /// Magnitude at the extremum farther from the other reference minus
    /// the magnitude at the nearer one; negative means reversed.
    pub margin: f64,
    pub tie: bool,
}

impl OrderDecision {
    fn from_margin(earliest: f64, latest: f64, margin: f64) -> Self {
        let tie = margin.abs() <= RULE_EPSILON;
        let direction = if margin < -RULE_EPSILON { Direction::Reversed } else { Direction::Forward };
        Self { direction, earliest, latest, margin, tie }
    }

    pub fn is_reversed(&self) -> bool {
        self.direction == Direction::Reversed
    }
}

/// Mean per-pixel Euclidean norm of a `[B, 2, H, W]` flow.
pub fn flow_magnitude(flow: &Tensor) -> Result<f64> {
    let [b, c, h, w] = flow.dims4("flow_magnitude")?;
    if c != 2 {
        return Err(Error::Contract(format!("flow must have 2 channels, got {c}")));
    }
    let plane = h * w;
    let d = flow.data();
    let mut acc = 0.0f64;
    for i in 0..b {
        let (u, v) = (&d[2 * i * plane..(2 * i + 1) * plane], &d[(2 * i + 1) * plane..(2 * i + 2) * plane]);
        acc += u.iter().zip(v).map(|(x, y)| (*x as f64).hypot(*y as f64)).sum::<f64>();
    }
    Ok(acc / (b * plane).max(1) as f64)
}

/// Decisions for `B_t0` and `B_t1` from the flows
/// `t0-h -> t1`, `t0+h -> t1`, `t1-h -> t0` and `t1+h -> t0`.
///
/// A window is in order when its extremum farther from the other
/// reference carries the larger flow.
pub fn decide_order(
    t0_early_to_t1: &Tensor,
    t0_late_to_t1: &Tensor,
    t1_early_to_t0: &Tensor,
    t1_late_to_t0: &Tensor,
) -> Result<[OrderDecision; 2]> {
    let (a, b) = (flow_magnitude(t0_early_to_t1)?, flow_magnitude(t0_late_to_t1)?);
    let (c, d) = (flow_magnitude(t1_early_to_t0)?, flow_magnitude(t1_late_to_t0)?);
    Ok([OrderDecision::from_margin(a, b, a - b), OrderDecision::from_margin(c, d, d - c)])
}

/// `decide_order` on a full flow list in `FrameIndexing::flow_pairs` order.
pub fn decide_from_flows(ix: &FrameIndexing, flows: &[Tensor]) -> Result<[OrderDecision; 2]> {
    if flows.len() != ix.num_flows() {
        return Err(Error::Contract(format!("expected {} flows, got {}", ix.num_flows(), flows.len())));
    }
    let [a, b, c, d] = ix.extremum_flows();
    decide_order(&flows[a], &flows[b], &flows[c], &flows[d])
}

/// Slot permutation: output slot `s` takes the item at `perm[s]`.
pub fn slot_permutation(ix: &FrameIndexing, reversed: [bool; 2]) -> Vec<usize> {
    (0..ix.total()).map(|s| if reversed[ix.window_of(s)] { ix.mirror(s) } else { s }).collect()
}

fn reversed_flags(decisions: &[OrderDecision; 2]) -> [bool; 2] {
    [decisions[0].is_reversed(), decisions[1].is_reversed()]
}

/// Reverses each window whose decision says so; reference frames stay at
/// their window centers.
pub fn apply_order<T: Clone>(ix: &FrameIndexing, frames: &[T], decisions: &[OrderDecision; 2]) -> Result<Vec<T>> {
    if frames.len() != ix.total() {
        return Err(Error::Contract(format!("expected {} frames, got {}", ix.total(), frames.len())));
    }
    Ok(slot_permutation(ix, reversed_flags(decisions)).into_iter().map(|s| frames[s].clone()).collect())
}

/// Re-indexes flows to follow `apply_order` on their source frames.
pub fn apply_order_flows<T: Clone>(ix: &FrameIndexing, flows: &[T], decisions: &[OrderDecision; 2]) -> Result<Vec<T>> {
    if flows.len() != ix.num_flows() {
        return Err(Error::Contract(format!("expected {} flows, got {}", ix.num_flows(), flows.len())));
    }
    let perm = slot_permutation(ix, reversed_flags(decisions));
    Ok(ix.flow_pairs().into_iter().map(|(s, r)| flows[ix.flow_index(perm[s], r)].clone()).collect())
}

/// Orders frames restored by any method, using `oracle(source, target)`
/// to estimate the four extremum flows.
pub fn flow_fix<F>(ix: &FrameIndexing, frames: &[Tensor], mut oracle: F) -> Result<(Vec<Tensor>, [OrderDecision; 2])>
where
    F: FnMut(&Tensor, &Tensor) -> Result<Tensor>,
{
    if frames.len() != ix.total() {
        return Err(Error::Contract(format!("expected {} frames, got {}", ix.total(), frames.len())));
    }
    let h = ix.half() as i32;
    let (r0, r1) = (&frames[ix.ref_slot(0)], &frames[ix.ref_slot(1)]);
    let decisions = decide_order(
        &oracle(&frames[ix.slot(0, -h)], r1)?,
        &oracle(&frames[ix.slot(0, h)], r1)?,
        &oracle(&frames[ix.slot(1, -h)], r0)?,
        &oracle(&frames[ix.slot(1, h)], r0)?,
    )?;
    Ok((apply_order(ix, frames, &decisions)?, decisions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(u: f32, v: f32) -> Tensor {
        let mut t = Tensor::zeros(&[1, 2, 4, 4]);
        t.data_mut()[..16].fill(u);
        t.data_mut()[16..].fill(v);
        t
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(flow_magnitude(&constant(0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(flow_magnitude(&constant(3.0, 4.0)).unwrap(), 5.0);
        let mut half = Tensor::zeros(&[1, 2, 2, 2]);
        half.data_mut()[6..8].fill(2.0);
        assert_eq!(flow_magnitude(&half).unwrap(), 1.0);
    }

    #[test]
    fn rule_examples() {
        let (ten, four, five) = (constant(6.0, 8.0), constant(0.0, 4.0), constant(3.0, 4.0));
        let [d0, _] = decide_order(&ten, &four, &four, &ten).unwrap();
        assert_eq!(d0.direction, Direction::Forward);
        assert!((d0.margin - 6.0).abs() < 1e-12);
        let [d0, d1] = decide_order(&four, &ten, &ten, &four).unwrap();
        assert_eq!((d0.direction, d1.direction), (Direction::Reversed, Direction::Reversed));
        let [d0, _] = decide_order(&five, &five, &five, &five).unwrap();
        assert_eq!(d0.direction, Direction::Forward);
        assert!(d0.tie);
    }

    #[test]
    fn apply_order_permutes_windows() {
        let ix = FrameIndexing::new(7).unwrap();
        let frames: Vec<usize> = (0..14).collect();
        let fwd = OrderDecision::from_margin(1.0, 0.0, 1.0);
        let rev = OrderDecision::from_margin(0.0, 1.0, -1.0);
        assert_eq!(apply_order(&ix, &frames, &[fwd, fwd]).unwrap(), frames);
        let out = apply_order(&ix, &frames, &[rev, fwd]).unwrap();
        assert_eq!(out, vec![6, 5, 4, 3, 2, 1, 0, 7, 8, 9, 10, 11, 12, 13]);
    }

    #[test]
    fn flows_follow_their_sources() {
        let ix = FrameIndexing::new(5).unwrap();
        let ids: Vec<(usize, usize)> = ix.flow_pairs();
        let rev = OrderDecision::from_margin(0.0, 1.0, -1.0);
        let fwd = OrderDecision::from_margin(1.0, 0.0, 1.0);
        let out = apply_order_flows(&ix, &ids, &[fwd, rev]).unwrap();
        for (i, (s, r)) in ix.flow_pairs().into_iter().enumerate() {
            let want = if ix.window_of(s) == 1 { ix.mirror(s) } else { s };
            assert_eq!(out[i], (want, r));
        }
    }
}
