//! Forward values of the training objectives and the refinement operator.
//!
//! Everything here consumes head outputs as plain volumes; no gradients are
//! tracked. The stop-gradient marker exists so callers can state which
//! operand it applies to, but it never changes a value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{softmax, BinaryMask, LabelVolume, ProbVolume, ValueKind};

/// Floor applied to probabilities before taking logarithms.
pub const KL_EPSILON: f64 = 1e-8;
/// Smoothing term of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Pointwise linear map across channels: `out = W · in + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMap {
    in_channels: usize,
    out_channels: usize,
    /// Row-major `out × in`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ChannelMap {
    pub fn new(in_channels: usize, out_channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::DimensionMismatch("channel map needs at least one input and output".into()));
        }
        if weight.len() != in_channels * out_channels {
            return Err(Error::DimensionMismatch(format!(
                "weight has {} entries, expected {out_channels}x{in_channels}",
                weight.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::DimensionMismatch(format!("bias has {} entries, expected {out_channels}", bias.len())));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("channel map entries must be finite".into()));
        }
        Ok(ChannelMap { in_channels, out_channels, weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        let mut weight = vec![0.0; n * n];
        for i in 0..n {
            weight[i * n + i] = 1.0;
        }
        ChannelMap { in_channels: n, out_channels: n, weight, bias: vec![0.0; n] }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_at(&self, out: usize, inp: usize) -> f64 {
        self.weight[out * self.in_channels + inp]
    }

    /// Scales weight and bias by `c`.
    pub fn scaled(&self, c: f64) -> ChannelMap {
        ChannelMap {
            weight: self.weight.iter().map(|w| w * c).collect(),
            bias: self.bias.iter().map(|b| b * c).collect(),
            ..self.clone()
        }
    }

    fn apply_voxel(&self, input: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_channels..(o + 1) * self.in_channels];
            *slot = self.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Weights of the auxiliary terms in the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Component losses fed to [`total_loss`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParts {
    pub l_seg: f64,
    pub l_dis: f64,
    pub l_ske: f64,
    pub l_con: f64,
    pub l_dar: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_seg: f64,
    pub l_dis: f64,
    pub l_ske: f64,
    pub l_ims: f64,
    pub l_con: f64,
    pub l_dar: f64,
    pub l_total: f64,
}

/// Marks an operand whose gradient would be truncated during training.
/// Forward values pass through unchanged.
#[derive(Clone, Copy, Debug)]
pub struct StopGrad<'a, T>(pub &'a T);

impl<T> StopGrad<'_, T> {
    pub fn value(&self) -> &T {
        self.0
    }
}

/// Voxels over which a divergence is averaged.
#[derive(Clone, Copy, Debug)]
pub enum Support<'a> {
    All,
    Mask(&'a BinaryMask),
}

fn check_pair(p: &ProbVolume, q: &ProbVolume) -> Result<()> {
    if p.shape() != q.shape() {
        return Err(Error::shape_mismatch(p.shape(), q.shape()));
    }
    if p.channels() != q.channels() {
        return Err(Error::DimensionMismatch(format!("{} channels vs {}", p.channels(), q.channels())));
    }
    Ok(())
}

/// Clamps at [`KL_EPSILON`] and renormalizes one voxel's distribution.
fn smooth(values: &mut [f64]) {
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = v.max(KL_EPSILON);
        sum += *v;
    }
    values.iter_mut().for_each(|v| *v /= sum);
}

fn voxel_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Mean KL divergence over `support`, with both operands smoothed per voxel.
fn kl_on(p: &[f64], q: &[f64], n: usize, channels: usize, voxels: &[usize]) -> f64 {
    let mut pa = vec![0.0; channels];
    let mut qa = vec![0.0; channels];
    let mut total = 0.0;
    for &i in voxels {
        for c in 0..channels {
            pa[c] = p[c * n + i];
            qa[c] = q[c * n + i];
        }
        smooth(&mut pa);
        smooth(&mut qa);
        total += voxel_kl(&pa, &qa);
    }
    total / voxels.len() as f64
}

fn support_voxels(n: usize, support: Support<'_>) -> Vec<usize> {
    match support {
        Support::All => (0..n).collect(),
        Support::Mask(m) => m.data().iter().enumerate().filter(|(_, v)| **v != 0).map(|(i, _)| i).collect(),
    }
}

/// Categorical KL divergence `Σ_c p_c ln(p_c / q_c)` averaged over the
/// support voxels.
pub fn kl_divergence(p: &ProbVolume, q: &ProbVolume, support: Support<'_>) -> Result<f64> {
    check_pair(p, q)?;
    for v in [p, q] {
        if v.kind() != ValueKind::Probabilities {
            return Err(Error::InvalidGrid("divergence operands must be probabilities".into()));
        }
    }
    if let Support::Mask(m) = support {
        if m.shape() != p.shape() {
            return Err(Error::shape_mismatch(m.shape(), p.shape()));
        }
    }
    let n = p.shape().len();
    let voxels = support_voxels(n, support);
    if voxels.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(kl_on(p.data(), q.data(), n, p.channels(), &voxels))
}

/// Value of the skeleton consistency term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyLoss {
    pub value: f64,
    /// KL(masked segmentation, skeleton head).
    pub forward: f64,
    /// KL(skeleton head, masked segmentation).
    pub backward: f64,
    pub support_voxels: usize,
    /// Set when the support was empty and the value defaulted to 0.
    pub degenerate: bool,
}

/// Symmetric KL between the skeleton-masked segmentation distribution and
/// the skeleton head distribution.
///
/// `A = softmax(seg) ⊙ Ŝ`, smoothed and renormalized per voxel, and
/// `B = softmax(ske)`. The value is `KL(A, ψB) + KL(B, ψA)` averaged over
/// `Ŝ ∪ {argmax B ≠ 0}`.
pub fn consistency_loss(
    seg_logits: &ProbVolume,
    seg_skeleton: &BinaryMask,
    ske_logits: &ProbVolume,
) -> Result<ConsistencyLoss> {
    check_pair(seg_logits, ske_logits)?;
    if seg_skeleton.shape() != seg_logits.shape() {
        return Err(Error::shape_mismatch(seg_skeleton.shape(), seg_logits.shape()));
    }
    let n = seg_logits.shape().len();
    let channels = seg_logits.channels();

    let mut a = softmax(seg_logits).data().to_vec();
    for (i, &s) in seg_skeleton.data().iter().enumerate() {
        if s == 0 {
            for c in 0..channels {
                a[c * n + i] = 0.0;
            }
        }
    }
    let b = softmax(ske_logits);
    let b_fg = b.argmax();
    let voxels: Vec<usize> = (0..n).filter(|&i| seg_skeleton.data()[i] != 0 || b_fg.data()[i] != 0).collect();
    if voxels.is_empty() {
        return Ok(ConsistencyLoss { value: 0.0, forward: 0.0, backward: 0.0, support_voxels: 0, degenerate: true });
    }

    let psi_b = StopGrad(&b);
    let psi_a = StopGrad(&a);
    let forward = kl_on(&a, psi_b.value().data(), n, channels, &voxels);
    let backward = kl_on(b.data(), psi_a.value(), n, channels, &voxels);
    Ok(ConsistencyLoss {
        value: forward + backward,
        forward,
        backward,
        support_voxels: voxels.len(),
        degenerate: false,
    })
}

fn check_labels(logits: &ProbVolume, gt: &LabelVolume) -> Result<()> {
    if logits.shape() != gt.shape() {
        return Err(Error::shape_mismatch(logits.shape(), gt.shape()));
    }
    if let Some(&bad) = gt.data().iter().find(|&&l| l as usize >= logits.channels()) {
        return Err(Error::LabelOutOfRange { label: bad, channels: logits.channels() });
    }
    Ok(())
}

/// Mean over voxels of `-ln softmax(logits)[gt]`.
pub fn ce_loss(logits: &ProbVolume, gt: &LabelVolume) -> Result<f64> {
    check_labels(logits, gt)?;
    let n = logits.shape().len();
    let channels = logits.channels();
    let mut total = 0.0;
    for (i, &label) in gt.data().iter().enumerate() {
        let max = (0..channels).map(|c| logits.value(c, i)).fold(f64::NEG_INFINITY, f64::max);
        let lse = (0..channels).map(|c| (logits.value(c, i) - max).exp()).sum::<f64>().ln();
        total += lse - (logits.value(label as usize, i) - max);
    }
    Ok(total / n as f64)
}

/// `1 -` mean over foreground channels of the smoothed soft Dice.
pub fn dice_loss(logits: &ProbVolume, gt: &LabelVolume) -> Result<f64> {
    check_labels(logits, gt)?;
    let probs = softmax(logits);
    let channels = logits.channels();
    let mut score = 0.0;
    for c in 1..channels {
        let p = probs.channel(c);
        let (mut inter, mut psum, mut gsum) = (0.0, 0.0, 0.0);
        for (pv, &l) in p.iter().zip(gt.data()) {
            let g = if l as usize == c { 1.0 } else { 0.0 };
            inter += pv * g;
            psum += pv;
            gsum += g;
        }
        score += (2.0 * inter + DICE_SMOOTH) / (psum + gsum + DICE_SMOOTH);
    }
    Ok(1.0 - score / (channels - 1) as f64)
}

pub fn seg_loss(logits: &ProbVolume, gt: &LabelVolume) -> Result<f64> {
    Ok(ce_loss(logits, gt)? + dice_loss(logits, gt)?)
}

struct DarInputs {
    attention_s: ProbVolume,
    attention_d: ProbVolume,
}

fn dar_check(
    seg: &ProbVolume,
    ske: &ProbVolume,
    dis: &ProbVolume,
    hr: &ChannelMap,
    hc: &ChannelMap,
) -> Result<DarInputs> {
    for other in [ske, dis] {
        if other.shape() != seg.shape() {
            return Err(Error::shape_mismatch(other.shape(), seg.shape()));
        }
    }
    if ske.channels() != dis.channels() {
        return Err(Error::DimensionMismatch(format!(
            "skeleton head has {} channels, discontinuity head {}",
            ske.channels(),
            dis.channels()
        )));
    }
    if hr.in_channels != seg.channels() {
        return Err(Error::DimensionMismatch(format!(
            "H_r expects {} input channels, segmentation has {}",
            hr.in_channels,
            seg.channels()
        )));
    }
    if hc.in_channels != hr.out_channels {
        return Err(Error::DimensionMismatch(format!(
            "H_c expects {} input channels, H_r produces {}",
            hc.in_channels, hr.out_channels
        )));
    }
    if !hr.out_channels.is_multiple_of(ske.channels()) {
        return Err(Error::DimensionMismatch(format!(
            "H_r width {} is not a multiple of the attention channel count {}",
            hr.out_channels,
            ske.channels()
        )));
    }
    Ok(DarInputs { attention_s: softmax(ske), attention_d: softmax(dis) })
}

/// Runs the refinement per voxel; `combine(u, a_s, a_d, out)` fills the
/// pre-`H_c` activations from the lifted features and attention values.
fn dar_run(
    seg: &ProbVolume,
    hr: &ChannelMap,
    hc: &ChannelMap,
    att: &DarInputs,
    combine: impl Fn(&[f64], &[f64], &[f64], &mut [f64]),
) -> ProbVolume {
    let n = seg.shape().len();
    let ca = att.attention_s.channels();
    let width = hr.out_channels;
    let mut f = vec![0.0; seg.channels()];
    let mut u = vec![0.0; width];
    let mut a_s = vec![0.0; width];
    let mut a_d = vec![0.0; width];
    let mut mixed = vec![0.0; width];
    let mut y = vec![0.0; hc.out_channels];
    let mut out = vec![0.0; hc.out_channels * n];
    for i in 0..n {
        for (c, slot) in f.iter_mut().enumerate() {
            *slot = seg.value(c, i);
        }
        hr.apply_voxel(&f, &mut u);
        for k in 0..width {
            a_s[k] = att.attention_s.value(k % ca, i);
            a_d[k] = att.attention_d.value(k % ca, i);
        }
        combine(&u, &a_s, &a_d, &mut mixed);
        hc.apply_voxel(&mixed, &mut y);
        for (c, v) in y.iter().enumerate() {
            out[c * n + i] = *v;
        }
    }
    ProbVolume::from_parts_unchecked(seg.shape(), seg.spacing(), hc.out_channels, ValueKind::Logits, out)
}

/// Refined logits `H_c((1 + σ(F_s) + σ(F_d)) ⊙ H_r(F_g))`.
///
/// Attention maps are tiled channelwise to the width of `H_r`.
pub fn dar_apply(
    seg: &ProbVolume,
    ske: &ProbVolume,
    dis: &ProbVolume,
    hr: &ChannelMap,
    hc: &ChannelMap,
) -> Result<ProbVolume> {
    let att = dar_check(seg, ske, dis, hr, hc)?;
    Ok(dar_run(seg, hr, hc, &att, |u, s, d, out| {
        for k in 0..u.len() {
            out[k] = (1.0 + s[k] + d[k]) * u[k];
        }
    }))
}

/// Same operator evaluated term by term:
/// `H_c(σ(F_s) ⊙ H_r(F_g) + σ(F_d) ⊙ H_r(F_g) + H_r(F_g))`.
pub fn dar_apply_expanded(
    seg: &ProbVolume,
    ske: &ProbVolume,
    dis: &ProbVolume,
    hr: &ChannelMap,
    hc: &ChannelMap,
) -> Result<ProbVolume> {
    let att = dar_check(seg, ske, dis, hr, hc)?;
    Ok(dar_run(seg, hr, hc, &att, |u, s, d, out| {
        for k in 0..u.len() {
            out[k] = s[k] * u[k] + d[k] * u[k] + u[k];
        }
    }))
}

/// `l_ims = l_seg + l_dis + l_ske`, `l_total = l_ims + α·l_con + β·l_dar`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    for (name, value) in [
        ("l_seg", parts.l_seg),
        ("l_dis", parts.l_dis),
        ("l_ske", parts.l_ske),
        ("l_con", parts.l_con),
        ("l_dar", parts.l_dar),
    ] {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NegativeLoss { name, value });
        }
    }
    let l_ims = parts.l_seg + parts.l_dis + parts.l_ske;
    Ok(LossBreakdown {
        l_seg: parts.l_seg,
        l_dis: parts.l_dis,
        l_ske: parts.l_ske,
        l_ims,
        l_con: parts.l_con,
        l_dar: parts.l_dar,
        l_total: l_ims + w.alpha * parts.l_con + w.beta * parts.l_dar,
    })
}
