//! The parametric keyframe policy.
//!
//! An action is drawn in three stages, all from log-linear models over the
//! per-frame feature vector `phi(t)`:
//!
//! 1. the keyframe count `K` from `softmax(w_count)` restricted to
//!    `1..=min(K_max, T)`;
//! 2. `K` distinct frames by sequential softmax over `w_select . phi(t)`
//!    without replacement (Plackett-Luce);
//! 3. for every chosen frame, which attribute slots its local instruction
//!    mentions, from `softmax(U_instr phi(t))`.
//!
//! The log-probability of an action is the sum over all stages and is exact,
//! as is its gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::{exp, log_sum_exp};
use crate::{Error, Result};

/// Names of the per-frame features, in `phi(t)` order. The last entry is the
/// constant bias input.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "presence_score",
    "time_position",
    "sound_active",
    "post_gap",
    "crowding",
    "bias",
];
pub const FEATURE_DIM: usize = 6;

/// What the policy sees of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameObservation {
    /// Noisy low-resolution evidence that the queried object is on screen.
    pub presence_score: f64,
    /// `t / T`.
    pub time_position: f64,
    /// 1 while a sound event attributed to the queried object is active.
    pub sound_active: f64,
    /// 1 on the first frames after the queried object reappears.
    pub post_gap: f64,
    /// Visible distractors on the frame, normalized.
    pub crowding: f64,
}

impl FrameObservation {
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        [
            self.presence_score,
            self.time_position,
            self.sound_active,
            self.post_gap,
            self.crowding,
            1.0,
        ]
    }
}

/// Attribute slots an instruction may use to describe the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeSlot {
    Color,
    Shape,
    Size,
    Position,
}

impl AttributeSlot {
    pub const ALL: [AttributeSlot; 4] = [
        AttributeSlot::Color,
        AttributeSlot::Shape,
        AttributeSlot::Size,
        AttributeSlot::Position,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeSlot::Color => "color",
            AttributeSlot::Shape => "shape",
            AttributeSlot::Size => "size",
            AttributeSlot::Position => "position",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Number of distinct non-empty slot subsets.
pub const INSTRUCTION_OPTIONS: usize = (1 << AttributeSlot::ALL.len()) - 1;

/// A local instruction: the non-empty subset of attribute slots used to
/// describe the target on one keyframe. The concrete words come from the
/// target's attributes on that frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LocalInstruction(u8);

impl LocalInstruction {
    pub fn from_slots(slots: &[AttributeSlot]) -> Result<Self> {
        let bits = slots.iter().fold(0, |acc, s| acc | s.bit());
        LocalInstruction::try_from(bits)
    }

    /// All slots; always the most specific instruction.
    pub fn all() -> Self {
        LocalInstruction(INSTRUCTION_OPTIONS as u8)
    }

    pub fn from_option(index: usize) -> Self {
        debug_assert!(index < INSTRUCTION_OPTIONS);
        LocalInstruction(index as u8 + 1)
    }

    /// Row of `U_instr` that scores this instruction.
    pub fn option(&self) -> usize {
        self.0 as usize - 1
    }

    pub fn contains(&self, slot: AttributeSlot) -> bool {
        self.0 & slot.bit() != 0
    }

    pub fn slots(&self) -> impl Iterator<Item = AttributeSlot> + '_ {
        AttributeSlot::ALL.into_iter().filter(|s| self.contains(*s))
    }
}

impl TryFrom<u8> for LocalInstruction {
    type Error = Error;

    fn try_from(bits: u8) -> Result<Self> {
        if bits == 0 || bits as usize > INSTRUCTION_OPTIONS {
            return Err(Error::InfeasibleAction(format!("instruction slot mask {bits}")));
        }
        Ok(LocalInstruction(bits))
    }
}

impl From<LocalInstruction> for u8 {
    fn from(i: LocalInstruction) -> u8 {
        i.0
    }
}

/// Output of the policy for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeAction {
    /// Selected frames in selection order.
    pub selected: Vec<usize>,
    /// One instruction per selected frame.
    pub instructions: Vec<LocalInstruction>,
    /// Log-probability under the policy that produced the action.
    pub logprob: f64,
}

impl KeyframeAction {
    pub fn count(&self) -> usize {
        self.selected.len()
    }
}

/// Array sizes of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub features: usize,
    pub k_max: usize,
    pub instruction_options: usize,
}

impl PolicyShape {
    pub fn new(k_max: usize) -> Self {
        PolicyShape {
            features: FEATURE_DIM,
            k_max,
            instruction_options: INSTRUCTION_OPTIONS,
        }
    }
}

/// Learnable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Frame-score weights, one per feature.
    pub w_select: Vec<f64>,
    /// Logits over `K = 1..=K_max`.
    pub w_count: Vec<f64>,
    /// `instruction_options x features`, row-major.
    pub u_instr: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            w_select: vec![0.0; shape.features],
            w_count: vec![0.0; shape.k_max],
            u_instr: vec![0.0; shape.instruction_options * shape.features],
        }
    }

    /// Independent `N(0, scale^2)` entries.
    pub fn random(shape: PolicyShape, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let normal =
            Normal::new(0.0, scale).map_err(|_| Error::config("policy.init_scale", "must be finite and >= 0"))?;
        let mut p = PolicyParams::zeros(shape);
        for v in p.w_select.iter_mut().chain(&mut p.w_count).chain(&mut p.u_instr) {
            *v = normal.sample(rng);
        }
        Ok(p)
    }

    pub fn shape(&self) -> PolicyShape {
        PolicyShape {
            features: self.w_select.len(),
            k_max: self.w_count.len(),
            instruction_options: if self.w_select.is_empty() {
                0
            } else {
                self.u_instr.len() / self.w_select.len()
            },
        }
    }

    /// Reject arrays whose lengths disagree with `shape`.
    pub fn check_shape(&self, shape: PolicyShape) -> Result<()> {
        let check = |field: &str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    field: field.into(),
                    expected,
                    found,
                })
            }
        };
        check("w_select", shape.features, self.w_select.len())?;
        check("w_count", shape.k_max, self.w_count.len())?;
        check(
            "u_instr",
            shape.instruction_options * shape.features,
            self.u_instr.len(),
        )
    }

    pub fn named_arrays(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("w_select", &self.w_select),
            ("w_count", &self.w_count),
            ("u_instr", &self.u_instr),
        ]
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_select
            .iter_mut()
            .chain(&mut self.w_count)
            .chain(&mut self.u_instr)
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w_select.iter().chain(&self.w_count).chain(&self.u_instr)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.values().map(|v| v * v).sum())
    }

    /// Name of the first array holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named_arrays()
            .into_iter()
            .find(|(_, vals)| vals.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    fn instr_row(&self, option: usize) -> &[f64] {
        let f = self.w_select.len();
        &self.u_instr[option * f..(option + 1) * f]
    }

    fn frame_scores(&self, observations: &[FrameObservation]) -> Vec<f64> {
        observations
            .iter()
            .map(|o| dot(&self.w_select, &o.features()))
            .collect()
    }

    fn instr_logits(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.shape().instruction_options)
            .map(|r| dot(self.instr_row(r), phi))
            .collect()
    }

    fn feasible_k(&self, frames: usize) -> usize {
        self.w_count.len().min(frames)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `softmax(logits)` as probabilities.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|l| exp(l - lse)).collect()
}

/// Inverse-CDF draw from `softmax(logits)`; returns the index and its
/// log-probability.
fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> (usize, f64) {
    let lse = log_sum_exp(logits.iter().copied());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logits.iter().enumerate() {
        acc += exp(l - lse);
        if u < acc {
            return (i, l - lse);
        }
    }
    // rounding left `u` past the final bucket
    let last = logits.len() - 1;
    (last, logits[last] - lse)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// How an action is extracted from the policy.
enum Decode<'a, R> {
    Sample(&'a mut R),
    Greedy,
}

impl<R: Rng> Decode<'_, R> {
    fn pick(&mut self, logits: &[f64]) -> (usize, f64) {
        match self {
            Decode::Sample(rng) => sample_categorical(logits, *rng),
            Decode::Greedy => {
                let i = argmax(logits);
                (i, logits[i] - log_sum_exp(logits.iter().copied()))
            }
        }
    }
}

fn decode<R: Rng>(
    params: &PolicyParams,
    observations: &[FrameObservation],
    mut how: Decode<'_, R>,
) -> Result<KeyframeAction> {
    if observations.is_empty() {
        return Err(Error::InfeasibleAction("episode has no frames".into()));
    }
    params.check_shape(params.shape())?;
    let k_cap = params.feasible_k(observations.len());
    if k_cap == 0 {
        return Err(Error::InfeasibleAction("policy has no count logits".into()));
    }
    let (k_index, mut logprob) = how.pick(&params.w_count[..k_cap]);
    let k = k_index + 1;

    let scores = params.frame_scores(observations);
    let mut remaining: Vec<usize> = (0..observations.len()).collect();
    let mut selected = Vec::with_capacity(k);
    for _ in 0..k {
        let logits: Vec<f64> = remaining.iter().map(|&t| scores[t]).collect();
        let (i, lp) = how.pick(&logits);
        logprob += lp;
        selected.push(remaining.remove(i));
    }

    let mut instructions = Vec::with_capacity(k);
    for &t in &selected {
        let logits = params.instr_logits(&observations[t].features());
        let (option, lp) = how.pick(&logits);
        logprob += lp;
        instructions.push(LocalInstruction::from_option(option));
    }
    Ok(KeyframeAction {
        selected,
        instructions,
        logprob,
    })
}

/// Draw an action. If `K_max` exceeds the frame count, `K` is drawn from the
/// count distribution restricted to feasible values.
pub fn sample_action(
    params: &PolicyParams,
    observations: &[FrameObservation],
    rng: &mut impl Rng,
) -> Result<KeyframeAction> {
    decode(params, observations, Decode::Sample(rng))
}

/// Argmax at every stage; ties go to the lowest index.
pub fn greedy_action(params: &PolicyParams, observations: &[FrameObservation]) -> Result<KeyframeAction> {
    decode::<rand_chacha::ChaCha8Rng>(params, observations, Decode::Greedy)
}

fn check_feasible(params: &PolicyParams, observations: &[FrameObservation], action: &KeyframeAction) -> Result<()> {
    let frames = observations.len();
    let k = action.selected.len();
    if k == 0 || k > params.feasible_k(frames) {
        return Err(Error::InfeasibleAction(format!(
            "{k} keyframes with K_max {} and {frames} frames",
            params.w_count.len()
        )));
    }
    if action.instructions.len() != k {
        return Err(Error::InfeasibleAction(format!(
            "{} instructions for {k} keyframes",
            action.instructions.len()
        )));
    }
    let mut seen = vec![false; frames];
    for &t in &action.selected {
        if t >= frames || seen[t] {
            return Err(Error::InfeasibleAction(format!("frame {t} out of range or repeated")));
        }
        seen[t] = true;
    }
    if action
        .instructions
        .iter()
        .any(|i| i.option() >= params.shape().instruction_options)
    {
        return Err(Error::InfeasibleAction(
            "instruction outside the policy's options".into(),
        ));
    }
    Ok(())
}

/// Exact log-probability of `action`.
pub fn logprob(params: &PolicyParams, observations: &[FrameObservation], action: &KeyframeAction) -> Result<f64> {
    Ok(logprob_and_grad(params, observations, action, false)?.0)
}

/// Gradient of [`logprob`] with respect to every parameter.
pub fn grad_logprob(
    params: &PolicyParams,
    observations: &[FrameObservation],
    action: &KeyframeAction,
) -> Result<PolicyParams> {
    Ok(logprob_and_grad(params, observations, action, true)?.1)
}

/// Log-probability and (optionally) its gradient in one pass.
pub fn logprob_and_grad(
    params: &PolicyParams,
    observations: &[FrameObservation],
    action: &KeyframeAction,
    with_grad: bool,
) -> Result<(f64, PolicyParams)> {
    check_feasible(params, observations, action)?;
    let shape = params.shape();
    let mut grad = PolicyParams::zeros(shape);
    let k = action.selected.len();

    // count
    let k_logits = &params.w_count[..params.feasible_k(observations.len())];
    let mut lp = k_logits[k - 1] - log_sum_exp(k_logits.iter().copied());
    if with_grad {
        for (i, p) in softmax(k_logits).into_iter().enumerate() {
            grad.w_count[i] = if i == k - 1 { 1.0 - p } else { -p };
        }
    }

    // ordered frame selection
    let feats: Vec<[f64; FEATURE_DIM]> = observations.iter().map(FrameObservation::features).collect();
    let scores = params.frame_scores(observations);
    let mut remaining: Vec<usize> = (0..observations.len()).collect();
    for &t in &action.selected {
        let logits: Vec<f64> = remaining.iter().map(|&r| scores[r]).collect();
        lp += scores[t] - log_sum_exp(logits.iter().copied());
        if with_grad {
            let probs = softmax(&logits);
            for (j, g) in grad.w_select.iter_mut().enumerate() {
                let expected: f64 = remaining.iter().zip(&probs).map(|(&r, p)| p * feats[r][j]).sum();
                *g += feats[t][j] - expected;
            }
        }
        let pos = remaining.iter().position(|&r| r == t).expect("feasibility checked");
        remaining.remove(pos);
    }

    // instructions
    let f = shape.features;
    for (&t, instr) in action.selected.iter().zip(&action.instructions) {
        let logits = params.instr_logits(&feats[t]);
        let chosen = instr.option();
        lp += logits[chosen] - log_sum_exp(logits.iter().copied());
        if with_grad {
            for (r, p) in softmax(&logits).into_iter().enumerate() {
                let coef = if r == chosen { 1.0 - p } else { -p };
                for (g, x) in grad.u_instr[r * f..(r + 1) * f].iter_mut().zip(&feats[t]) {
                    *g += coef * x;
                }
            }
        }
    }
    Ok((lp, grad))
}
