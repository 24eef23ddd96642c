//! Brute-force oracles run against the library, one pass/fail line per
//! property.

use std::collections::BTreeSet;

use keysel_core::geometry::{BinaryMask, MaskSequence};
use keysel_core::grpo::{group_advantages, kl_estimate};
use keysel_core::matching::{hungarian, CostMatrix};
use keysel_core::policy::{
    grad_logprob, logprob, sample_action, FrameObservation, KeyframeAction, LocalInstruction, PolicyParams, PolicyShape,
};
use keysel_core::protocol::{parse_response, serialize_answer, AnswerEntry, KeyframeAnswer, Timestamp};
use keysel_core::rewards::{
    diversity_reward, global_consistency_reward, saliency_reward, total_reward, KeyframeComponents, RewardWeights,
};
use keysel_core::seed::{rng_for, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Deliberate corruption used to check that the audit notices failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negate one entry of every matrix handed to the Hungarian solver.
    FlipHungarianEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub cases: usize,
    /// Largest deviation from the oracle over all cases.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub seed: u64,
    pub cases: usize,
    pub fault: Option<Fault>,
    pub properties: Vec<PropertyResult>,
}

impl AuditReport {
    pub fn failures(&self) -> usize {
        self.properties.iter().filter(|p| !p.passed).count()
    }
}

/// Run every property `cases` times.
pub fn run_audit(weights: &RewardWeights, seed: u64, cases: usize, fault: Option<Fault>) -> AuditReport {
    let cases = cases.max(1);
    let checks: [(&str, f64, Check); 10] = [
        ("hungarian_matches_brute_force", 1e-9, hungarian_case),
        ("diversity_closed_form", 0.0, diversity_case),
        ("saliency_direct_formula", 1e-12, saliency_case),
        ("consistency_direct_formula", 1e-12, consistency_case),
        ("total_reward_projection", 0.0, projection_case),
        ("policy_normalization", 1e-9, normalization_case),
        ("gradient_finite_difference", 1e-5, gradient_case),
        ("advantage_standardization", 1e-9, advantage_case),
        ("kl_nonnegative", 0.0, kl_case),
        ("protocol_round_trip", 0.0, protocol_case),
    ];
    let properties = checks
        .iter()
        .enumerate()
        .map(|(p, &(name, tolerance, check))| {
            let mut max_error: f64 = 0.0;
            for case in 0..cases {
                let mut rng = rng_for(seed, Stream::Audit, p as u64, case as u64);
                let err = check(&mut rng, weights, fault);
                // NaN counts as a failure
                max_error = if err.is_nan() {
                    f64::INFINITY
                } else {
                    max_error.max(err)
                };
            }
            PropertyResult {
                name: name.to_string(),
                cases,
                max_error,
                tolerance,
                passed: max_error <= tolerance,
            }
        })
        .collect();
    AuditReport {
        seed,
        cases,
        fault,
        properties,
    }
}

type Check = fn(&mut rand_chacha::ChaCha8Rng, &RewardWeights, Option<Fault>) -> f64;

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    let (rows, cols) = (cost.len(), cost[0].len());
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, left: usize) -> f64 {
        if left == 0 {
            return 0.0;
        }
        let rows = cost.len();
        let mut best = f64::INFINITY;
        // rows may stay unassigned only while enough rows remain for the rest
        if rows - row > left {
            best = go(cost, row + 1, used, left);
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(cost, row + 1, used, left - 1));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cols], rows.min(cols))
}

fn hungarian_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, fault: Option<Fault>) -> f64 {
    let (rows, cols) = (rng.random_range(1..=5), rng.random_range(1..=5));
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let mut fed = cost.clone();
    if fault == Some(Fault::FlipHungarianEntry) {
        fed[0][0] = -fed[0][0] - 1.0;
    }
    let matrix = CostMatrix::from_rows(&fed).expect("finite matrix");
    let solved = hungarian(&matrix).expect("solvable");
    (solved.total_cost - brute_force_min(&cost)).abs()
}

fn random_selection(rng: &mut impl Rng, frames: usize) -> Vec<usize> {
    let k = rng.random_range(1..=10);
    (0..k).map(|_| rng.random_range(0..frames)).collect()
}

fn diversity_case(rng: &mut rand_chacha::ChaCha8Rng, w: &RewardWeights, _: Option<Fault>) -> f64 {
    let sel = random_selection(rng, 8);
    let distinct = sel.iter().collect::<BTreeSet<_>>().len();
    let expected = w.overlap_punish * (sel.len() - distinct) as f64 + w.dist_reward * distinct as f64;
    (diversity_reward(&sel, w.overlap_punish, w.dist_reward).unwrap_or(f64::NAN) - expected).abs()
}

fn saliency_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    let frames = rng.random_range(1..=24);
    let mut areas: Vec<usize> = (0..frames).map(|_| rng.random_range(0..200)).collect();
    areas[0] += 1;
    let sel = random_selection(rng, frames);
    let max = *areas.iter().max().unwrap() as f64;
    let expected = sel.iter().map(|&f| areas[f] as f64 / max).sum::<f64>() / sel.len() as f64;
    (saliency_reward(&sel, &areas).unwrap_or(f64::NAN) - expected).abs()
}

fn random_mask(rng: &mut impl Rng, density: f64) -> BinaryMask {
    let bits: Vec<bool> = (0..64).map(|_| rng.random_bool(density)).collect();
    BinaryMask::from_bits(8, 8, &bits).expect("8x8")
}

fn consistency_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    let frames = rng.random_range(1..=6);
    let density = rng.random_range(0.0..0.6);
    let pred: Vec<BinaryMask> = (0..frames).map(|_| random_mask(rng, density)).collect();
    let gt: Vec<BinaryMask> = (0..frames).map(|_| random_mask(rng, density)).collect();
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(&gt) {
        let (mut inter, mut union) = (0, 0);
        for y in 0..8 {
            for x in 0..8 {
                inter += (p.get(x, y) && g.get(x, y)) as usize;
                union += (p.get(x, y) || g.get(x, y)) as usize;
            }
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    let expected = sum / frames as f64;
    let got = global_consistency_reward(&MaskSequence::new(pred).unwrap(), &MaskSequence::new(gt).unwrap());
    (got.unwrap_or(f64::NAN) - expected).abs()
}

fn projection_case(rng: &mut rand_chacha::ChaCha8Rng, w: &RewardWeights, _: Option<Fault>) -> f64 {
    let components = KeyframeComponents {
        diversity: rng.random_range(-1.0..2.0),
        num: rng.random(),
        saliency: rng.random(),
    };
    let (ra, rg) = (rng.random::<f64>(), rng.random::<f64>());
    let rk = components.weighted(w);
    let mut err: f64 = 0.0;
    for (i, expected) in [rk, ra, rg].into_iter().enumerate() {
        let one_hot = RewardWeights {
            alpha_k: (i == 0) as u8 as f64,
            alpha_a: (i == 1) as u8 as f64,
            alpha_g: (i == 2) as u8 as f64,
            ..w.clone()
        };
        let got = total_reward(components, ra, rg, &one_hot).map_or(f64::NAN, |b| b.r_total);
        err = err.max((got - expected).abs());
    }
    err
}

fn random_observations(rng: &mut impl Rng, frames: usize) -> Vec<FrameObservation> {
    (0..frames)
        .map(|_| FrameObservation {
            presence_score: rng.random(),
            time_position: rng.random(),
            sound_active: rng.random_bool(0.3) as u8 as f64,
            post_gap: rng.random_bool(0.2) as u8 as f64,
            crowding: rng.random(),
        })
        .collect()
}

fn random_params(rng: &mut impl Rng, shape: PolicyShape) -> PolicyParams {
    let mut p = PolicyParams::zeros(shape);
    for v in p.w_select.iter_mut().chain(&mut p.w_count).chain(&mut p.u_instr) {
        *v = rng.random_range(-1.5..1.5);
    }
    p
}

fn normalization_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    let frames = rng.random_range(1..=3);
    let shape = PolicyShape {
        instruction_options: 3,
        ..PolicyShape::new(2)
    };
    let params = random_params(rng, shape);
    let obs = random_observations(rng, frames);
    let mut total = 0.0;
    for k in 1..=2.min(frames) {
        let orders: Vec<Vec<usize>> = if k == 1 {
            (0..frames).map(|a| vec![a]).collect()
        } else {
            (0..frames)
                .flat_map(|a| (0..frames).filter(move |&b| b != a).map(move |b| vec![a, b]))
                .collect()
        };
        for sel in orders {
            for code in 0..3usize.pow(k as u32) {
                let instructions = (0..k)
                    .map(|i| LocalInstruction::from_option(code / 3usize.pow(i as u32) % 3))
                    .collect();
                let action = KeyframeAction {
                    selected: sel.clone(),
                    instructions,
                    logprob: 0.0,
                };
                total += logprob(&params, &obs, &action).map_or(f64::NAN, f64::exp);
            }
        }
    }
    (total - 1.0).abs()
}

fn gradient_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    let frames = rng.random_range(2..=6);
    let params = random_params(rng, PolicyShape::new(3));
    let obs = random_observations(rng, frames);
    let Ok(action) = sample_action(&params, &obs, rng) else {
        return f64::NAN;
    };
    let Ok(grad) = grad_logprob(&params, &obs, &action) else {
        return f64::NAN;
    };
    let h = 1e-5;
    let analytic: Vec<f64> = grad
        .w_select
        .iter()
        .chain(&grad.w_count)
        .chain(&grad.u_instr)
        .copied()
        .collect();
    let shifted = |i: usize, delta: f64| {
        let mut p = params.clone();
        let v = p
            .w_select
            .iter_mut()
            .chain(&mut p.w_count)
            .chain(&mut p.u_instr)
            .nth(i)
            .expect("index in range");
        *v += delta;
        logprob(&p, &obs, &action).unwrap_or(f64::NAN)
    };
    let mut worst: f64 = 0.0;
    for (i, an) in analytic.iter().enumerate() {
        let fd = (shifted(i, h) - shifted(i, -h)) / (2.0 * h);
        worst = worst.max((fd - an).abs() / an.abs().max(1.0));
    }
    worst
}

fn advantage_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    let n = rng.random_range(2..=16);
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let Ok(a) = group_advantages(&rewards, 1e-8) else {
        return f64::NAN;
    };
    let m = a.iter().sum::<f64>() / n as f64;
    let std = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
    let flat = group_advantages(&vec![rewards[0]; n], 1e-8).map_or(f64::NAN, |z| z.iter().map(|x| x.abs()).sum());
    m.abs().max((std - 1.0).abs()).max(flat)
}

fn kl_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    let (a, b) = (rng.random_range(-30.0..5.0), rng.random_range(-30.0..5.0));
    let k = kl_estimate(a, b).unwrap_or(f64::NAN);
    let same = kl_estimate(a, a).unwrap_or(f64::NAN);
    (-k).max(0.0).max(same.abs())
}

fn protocol_case(rng: &mut rand_chacha::ChaCha8Rng, _: &RewardWeights, _: Option<Fault>) -> f64 {
    const CHARS: &[u8] = b"abc XYZ<>&\"\\/:{}[]'\n\t019";
    let text = |rng: &mut rand_chacha::ChaCha8Rng, len: usize| -> String {
        (0..len)
            .map(|_| CHARS[rng.random_range(0..CHARS.len())] as char)
            .collect()
    };
    let duration = rng.random_range(1..=120);
    let entries = (0..rng.random_range(1..=6))
        .map(|_| {
            let (a, b) = (rng.random_range(0..=duration), rng.random_range(0..=duration));
            AnswerEntry {
                start_time: Timestamp::from_secs(a.min(b)).unwrap(),
                end_time: Timestamp::from_secs(a.max(b)).unwrap(),
                description: format!("{}x", text(rng, 8)),
            }
        })
        .collect();
    let think_len = rng.random_range(0..20);
    let answer = KeyframeAnswer {
        entries,
        think: text(rng, think_len),
    };
    let ok = parse_response(&serialize_answer(&answer), duration).as_ref() == Ok(&answer);
    // arbitrary text must come back as a value or an error, never a panic
    let noise_len = rng.random_range(0..60);
    let _ = parse_response(&text(rng, noise_len), duration);
    if ok {
        0.0
    } else {
        1.0
    }
}
