//! Multiples schedules and the hierarchical slice/merge rearrangements.
//!
//! A look-back window of length `L` is factored as `L = L_1 * L_2 * ... * L_n`
//! (segment-unit `L_1` first), and the feature axis as `M = M_1 * M_2 * ...`.
//! The encoder-direction rearrangement turns a `(B, L, M)` batch into a
//! large batch of `(L_1, M_1)` slices; every level of the network then
//! regroups consecutive slices with a plain reshape. All rearrangements are
//! bijective relabelings, so the decoder direction restores the original
//! layout bit-exactly.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, TensorId};

/// Validated schedule of look-back and feature multiples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    /// Look-back window length L.
    pub lookback: usize,
    /// Feature count M.
    pub features: usize,
    /// Segment-unit length L_1 seen by the outermost kernel.
    pub l_unit: usize,
    /// Look-back multiples L_2..L_n, outermost first.
    pub l_multiples: Vec<usize>,
    /// Feature-unit size M_1.
    pub m_unit: usize,
    /// Feature multiples M_2..M_m.
    pub m_multiples: Vec<usize>,
    /// Hidden width per layer.
    pub hidden: usize,
    /// Latent length L_h.
    pub latent_len: usize,
    /// Latent width M_h.
    pub latent_width: usize,
}

impl PartitionPlan {
    /// Channel-independent plan (feature unit 1, no feature multiples) with
    /// latent shape (1, hidden) — the default experimental configuration.
    pub fn channel_independent(lookback: usize, l_unit: usize, l_multiples: Vec<usize>, hidden: usize) -> Self {
        PartitionPlan {
            lookback,
            features: 1,
            l_unit,
            l_multiples,
            m_unit: 1,
            m_multiples: Vec::new(),
            hidden,
            latent_len: 1,
            latent_width: hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_unit < 1 || self.m_unit < 1 {
            return Err(Error::Config("segment units must be >= 1".into()));
        }
        if self.l_multiples.iter().any(|&m| m < 1) || self.m_multiples.iter().any(|&m| m < 1) {
            return Err(Error::Config("multiples must be >= 1".into()));
        }
        if self.hidden < 1 || self.latent_len < 1 || self.latent_width < 1 {
            return Err(Error::Config("hidden and latent extents must be >= 1".into()));
        }
        let lprod = self.l_unit * self.l_multiples.iter().product::<usize>();
        if lprod != self.lookback {
            return Err(Error::Config(format!(
                "look-back product mismatch: unit {} x multiples {:?} = {}, expected {}",
                self.l_unit, self.l_multiples, lprod, self.lookback
            )));
        }
        let mprod = self.m_unit * self.m_multiples.iter().product::<usize>();
        if mprod != self.features {
            return Err(Error::Config(format!(
                "feature product mismatch: unit {} x multiples {:?} = {}, expected {}",
                self.m_unit, self.m_multiples, mprod, self.features
            )));
        }
        Ok(())
    }

    /// Product of the look-back multiples (slices of the window per feature
    /// group).
    pub fn l_groups(&self) -> usize {
        self.l_multiples.iter().product()
    }

    /// Product of the feature multiples.
    pub fn m_groups(&self) -> usize {
        self.m_multiples.iter().product()
    }

    /// Number of look-back levels (incl. the segment-unit level).
    pub fn lookback_levels(&self) -> usize {
        1 + self.l_multiples.len()
    }

    /// Number of feature levels.
    pub fn feature_levels(&self) -> usize {
        self.m_multiples.len()
    }
}

/// Split a long sequence into `k` contiguous, order-preserving slices:
/// `(batch, seg_len*k, width) -> (batch*k, seg_len, width)`.
pub fn slice_level(g: &mut Graph, x: TensorId, k: usize) -> Result<TensorId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(dim_err("slice_level", format!("expected rank 3, got {shape:?}")));
    }
    if k == 0 || !shape[1].is_multiple_of(k) {
        return Err(dim_err(
            "slice_level",
            format!("middle extent {} not divisible by {k}", shape[1]),
        ));
    }
    g.reshape(x, alloc::vec![shape[0] * k, shape[1] / k, shape[2]])
}

/// Exact inverse of [`slice_level`]:
/// `(batch*k, seg_len, width) -> (batch, seg_len*k, width)`.
pub fn merge_level(g: &mut Graph, x: TensorId, k: usize) -> Result<TensorId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(dim_err("merge_level", format!("expected rank 3, got {shape:?}")));
    }
    if k == 0 || !shape[0].is_multiple_of(k) {
        return Err(dim_err(
            "merge_level",
            format!("leading extent {} not divisible by {k}", shape[0]),
        ));
    }
    g.reshape(x, alloc::vec![shape[0] / k, shape[1] * k, shape[2]])
}

fn check_plan_tensor(op: &'static str, g: &Graph, x: TensorId, len: usize, width: usize) -> Result<usize> {
    let shape = g.shape(x);
    if shape.len() != 3 || shape[1] != len || shape[2] != width {
        return Err(dim_err(
            op,
            format!("expected (B, {len}, {width}), got {shape:?}"),
        ));
    }
    Ok(shape[0])
}

/// Rearrange `(B, L, M)` so the feature axis can be sliced:
/// reshape to `(B, l_groups, L_1, m_groups, M_1)` then move the feature
/// groups outward, giving `(B, m_groups, l_groups, L_1, M_1)`.
pub fn feature_transpose(g: &mut Graph, x: TensorId, plan: &PartitionPlan) -> Result<TensorId> {
    plan.validate()?;
    let b = check_plan_tensor("feature_transpose", g, x, plan.lookback, plan.features)?;
    let five = g.reshape(
        x,
        alloc::vec![b, plan.l_groups(), plan.l_unit, plan.m_groups(), plan.m_unit],
    )?;
    g.permute(five, &[0, 3, 1, 2, 4])
}

/// Exact inverse of [`feature_transpose`], restoring `(B, L, M)`.
pub fn feature_untranspose(g: &mut Graph, x: TensorId, plan: &PartitionPlan) -> Result<TensorId> {
    plan.validate()?;
    let shape = g.shape(x).to_vec();
    let want = [plan.m_groups(), plan.l_groups(), plan.l_unit, plan.m_unit];
    if shape.len() != 5 || shape[1..] != want {
        return Err(dim_err(
            "feature_untranspose",
            format!("expected (B, {}, {}, {}, {}), got {shape:?}", want[0], want[1], want[2], want[3]),
        ));
    }
    let five = g.permute(x, &[0, 2, 3, 1, 4])?;
    g.reshape(five, alloc::vec![shape[0], plan.lookback, plan.features])
}

/// Full encoder-direction rearrangement:
/// `(B, L, M) -> (B * m_groups * l_groups, L_1, M_1)`.
pub fn encode_arrange(g: &mut Graph, x: TensorId, plan: &PartitionPlan) -> Result<TensorId> {
    let b = check_plan_tensor("encode_arrange", g, x, plan.lookback, plan.features)?;
    let t = feature_transpose(g, x, plan)?;
    g.reshape(t, alloc::vec![b * plan.m_groups() * plan.l_groups(), plan.l_unit, plan.m_unit])
}

/// Full decoder-direction rearrangement, the inverse of [`encode_arrange`]
/// against an output schedule `T = t_unit * prod(t_multiples)` (the feature
/// side always mirrors the encoder plan):
/// `(B * m_groups * t_groups, T_1, M_1) -> (B, T, M)`.
pub fn decode_arrange(
    g: &mut Graph,
    y: TensorId,
    batch: usize,
    t_unit: usize,
    t_multiples: &[usize],
    plan: &PartitionPlan,
) -> Result<TensorId> {
    let t_groups: usize = t_multiples.iter().product();
    let horizon = t_unit * t_groups;
    let shape = g.shape(y).to_vec();
    if shape.len() != 3
        || shape[0] != batch * plan.m_groups() * t_groups
        || shape[1] != t_unit
        || shape[2] != plan.m_unit
    {
        return Err(dim_err(
            "decode_arrange",
            format!(
                "expected ({}, {t_unit}, {}), got {shape:?}",
                batch * plan.m_groups() * t_groups,
                plan.m_unit
            ),
        ));
    }
    let five = g.reshape(
        y,
        alloc::vec![batch, plan.m_groups(), t_groups, t_unit, plan.m_unit],
    )?;
    let back = g.permute(five, &[0, 2, 3, 1, 4])?;
    g.reshape(back, alloc::vec![batch, horizon, plan.features])
}
