//! Seeded episode generator.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::episode::{Appearance, Attribute, Episode, EpisodeParts, Interval, Query, Shape, SimObject, SizeBand};
use super::query::{resolve_target, single_frame_solvable};
use crate::policy::AttributeSlot;
use crate::seed::{rng_for, Stream};
use crate::{Error, Result};

/// Everything needed to regenerate an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub seed: u64,
    pub config: EnvConfig,
}

impl EpisodeSpec {
    pub fn generate(&self) -> Result<Episode> {
        generate_episode(&self.config, self.seed)
    }
}

/// Deterministic in `(config, seed)`. The query always has exactly one
/// answer, and temporal queries cannot be answered from a single frame.
pub fn generate_episode(config: &EnvConfig, seed: u64) -> Result<Episode> {
    config.validate()?;
    for attempt in 0..config.max_retries {
        let mut rng = rng_for(seed, Stream::Env, attempt as u64, 0);
        let Some(parts) = draw_scene(config, seed, &mut rng) else {
            continue;
        };
        if resolve_target(&parts.objects, parts.frames, parts.grid, &parts.query) != Some(parts.target) {
            continue;
        }
        if parts.query.is_temporal() && single_frame_solvable(&parts.objects, parts.frames, &parts.query, parts.target)
        {
            continue;
        }
        let episode = Episode::assemble(parts, config.presence_noise, config.post_gap_frames, &mut rng)?;
        if episode.gt_masks.masks().iter().all(|m| m.is_empty()) {
            continue;
        }
        return Ok(episode);
    }
    Err(Error::Unsolvable { seed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Disappear,
    Sound,
    Attribute,
}

fn pick_kind(config: &EnvConfig, objects: usize, rng: &mut impl Rng) -> Kind {
    let m = &config.query_mix;
    let (d, s) = if objects < 2 {
        (0.0, 0.0)
    } else {
        (m.last_to_disappear, m.last_to_sound)
    };
    let total = d + s + m.attribute_match;
    let u = rng.random::<f64>() * total;
    if u < d {
        Kind::Disappear
    } else if u < d + s {
        Kind::Sound
    } else {
        Kind::Attribute
    }
}

fn draw_scene(config: &EnvConfig, seed: u64, rng: &mut impl Rng) -> Option<EpisodeParts> {
    let frames = rng.random_range(config.frames_min..=config.frames_max);
    let count = rng.random_range(config.objects_min..=config.objects_max);
    let kind = pick_kind(config, count, rng);
    if kind == Kind::Attribute && config.query_mix.attribute_match <= 0.0 {
        return None;
    }
    let ncolors = config.colors.len();

    let target_look = Appearance {
        color: rng.random_range(0..ncolors),
        shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
        size: SizeBand::ALL[rng.random_range(0..SizeBand::ALL.len())],
    };
    let unique_slot = match kind {
        Kind::Attribute => {
            Some([AttributeSlot::Color, AttributeSlot::Shape, AttributeSlot::Size][rng.random_range(0..3)])
        }
        _ => None,
    };
    let mut looks = vec![target_look];
    for _ in 1..count {
        looks.push(distractor_look(target_look, unique_slot, ncolors, &looks, rng)?);
    }

    // The target sits at index 0 while drawing, then moves to a random slot.
    let nseg = rng.random_range(config.target_segments_min..=config.target_segments_max);
    let target_vis = layout_segments(frames, nseg, kind == Kind::Disappear, rng)?;
    if target_vis.len() < config.target_segments_min {
        return None;
    }
    let target_end = target_vis.last()?.end;
    let target_sound = target_sound(&target_vis, kind == Kind::Sound, rng)?;

    let mut vis = vec![target_vis.clone()];
    let mut sounds = vec![target_sound.clone()];
    for d in 1..count {
        let (v, s) = match kind {
            Kind::Disappear => {
                let v = if d == 1 || target_end < 4 || rng.random_bool(0.4) {
                    // covers the target and never leaves
                    let start = if d == 1 { 0 } else { rng.random_range(0..frames / 2) };
                    vec![Interval::new(start, frames)]
                } else {
                    let end = rng.random_range(2..target_end);
                    let start = rng.random_range(0..end - 1);
                    split_with_gap(Interval::new(start, end), config.occlusion_prob, rng)
                };
                (v, random_sound(frames, None, rng))
            }
            Kind::Sound => {
                let last_onset = target_sound.last()?.start;
                let s = if d == 1 {
                    let first = target_sound.first()?.start;
                    let end = target_sound.last()?.end;
                    vec![Interval::new(
                        rng.random_range(0..first),
                        rng.random_range(end..=frames),
                    )]
                } else {
                    random_sound(frames, Some(last_onset), rng)
                };
                (generic_visibility(frames, config.occlusion_prob, rng), s)
            }
            Kind::Attribute => (
                generic_visibility(frames, config.occlusion_prob, rng),
                random_sound(frames, None, rng),
            ),
        };
        vis.push(v);
        sounds.push(s);
    }

    let target = rng.random_range(0..count);
    looks.swap(0, target);
    vis.swap(0, target);
    sounds.swap(0, target);

    let objects: Vec<SimObject> = (0..count)
        .map(|id| SimObject {
            id,
            appearance: looks[id],
            trajectory: trajectory(frames, config.grid, looks[id].size, rng),
            visibility: vis[id].clone(),
            sound: sounds[id].clone(),
        })
        .collect();

    let query = match kind {
        Kind::Disappear => Query::LastToDisappear,
        Kind::Sound => Query::LastToSound,
        Kind::Attribute => {
            let value = match unique_slot? {
                AttributeSlot::Color => Attribute::Color(target_look.color),
                AttributeSlot::Shape => Attribute::Shape(target_look.shape),
                _ => Attribute::Size(target_look.size),
            };
            Query::AttributeMatch { value }
        }
    };
    Some(EpisodeParts {
        seed,
        frames,
        grid: config.grid,
        colors: config.colors.clone(),
        objects,
        target,
        query,
    })
}

/// Distractor sharing some, never all, attributes with the target; never
/// sharing `unique`.
fn distractor_look(
    target: Appearance,
    unique: Option<AttributeSlot>,
    ncolors: usize,
    taken: &[Appearance],
    rng: &mut impl Rng,
) -> Option<Appearance> {
    for _ in 0..64 {
        let mut share = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        match unique {
            Some(AttributeSlot::Color) => share[0] = false,
            Some(AttributeSlot::Shape) => share[1] = false,
            Some(AttributeSlot::Size) => share[2] = false,
            _ => {}
        }
        if share.iter().all(|s| *s) {
            continue;
        }
        let color = if share[0] {
            target.color
        } else {
            (target.color + rng.random_range(1..ncolors)) % ncolors
        };
        let shape = if share[1] {
            target.shape
        } else {
            let i = Shape::ALL.iter().position(|s| *s == target.shape)?;
            Shape::ALL[(i + rng.random_range(1..Shape::ALL.len())) % Shape::ALL.len()]
        };
        let size = if share[2] {
            target.size
        } else {
            match target.size {
                SizeBand::Small => SizeBand::Large,
                SizeBand::Large => SizeBand::Small,
            }
        };
        let look = Appearance { color, shape, size };
        if !taken.contains(&look) {
            return Some(look);
        }
    }
    None
}

/// `count` visibility segments (at least 2 frames each) separated by gaps of
/// at least 2 frames. With `leaves`, the object is gone for the final frames.
fn layout_segments(frames: usize, count: usize, leaves: bool, rng: &mut impl Rng) -> Option<Vec<Interval>> {
    const MIN_SEG: usize = 2;
    const MIN_GAP: usize = 2;
    let lead = if rng.random_bool(0.5) {
        0
    } else {
        rng.random_range(1..=3)
    };
    let tail = if leaves {
        rng.random_range(1..=3)
    } else if rng.random_bool(0.5) {
        0
    } else {
        rng.random_range(1..=2)
    };
    let needed = lead + tail + count * MIN_SEG + (count - 1) * MIN_GAP;
    if needed > frames {
        return None;
    }
    // Spread the slack: segments get most of it.
    let mut seg_len = vec![MIN_SEG; count];
    let mut gap_len = vec![MIN_GAP; count - 1];
    let seg_w: Vec<f64> = (0..count).map(|_| rng.random_range(1.0..2.0)).collect();
    let gap_w: Vec<f64> = (0..count - 1).map(|_| rng.random_range(0.0..0.8)).collect();
    let total_w: f64 = seg_w.iter().chain(&gap_w).sum();
    for _ in 0..frames - needed {
        let mut u = rng.random::<f64>() * total_w;
        let mut placed = false;
        for (i, w) in seg_w.iter().enumerate() {
            if u < *w {
                seg_len[i] += 1;
                placed = true;
                break;
            }
            u -= w;
        }
        if !placed {
            let i = gap_w.iter().position(|w| {
                let hit = u < *w;
                u -= w;
                hit
            });
            match i {
                Some(i) => gap_len[i] += 1,
                None => seg_len[count - 1] += 1,
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut t = lead;
    for i in 0..count {
        out.push(Interval::new(t, t + seg_len[i]));
        t += seg_len[i];
        if i + 1 < count {
            t += gap_len[i];
        }
    }
    Some(out)
}

fn target_sound(vis: &[Interval], required: bool, rng: &mut impl Rng) -> Option<Vec<Interval>> {
    if !required {
        if rng.random_bool(0.5) {
            let seg = vis[rng.random_range(0..vis.len())];
            let start = rng.random_range(seg.start..seg.end);
            let end = (start + rng.random_range(1..=3)).min(seg.end);
            return Some(vec![Interval::new(start, end)]);
        }
        return Some(Vec::new());
    }
    // one or two sound bursts inside visible frames, never at frame 0
    let bursts = rng.random_range(1..=2).min(vis.len());
    let mut chosen: Vec<usize> = (0..vis.len()).collect();
    while chosen.len() > bursts {
        chosen.remove(rng.random_range(0..chosen.len()));
    }
    let mut out = Vec::new();
    for i in chosen {
        let seg = vis[i];
        let lo = seg.start.max(1);
        if lo >= seg.end {
            continue;
        }
        let start = rng.random_range(lo..seg.end);
        let end = (start + rng.random_range(1..=3)).min(seg.end);
        out.push(Interval::new(start, end));
    }
    (!out.is_empty()).then_some(out)
}

fn random_sound(frames: usize, onset_before: Option<usize>, rng: &mut impl Rng) -> Vec<Interval> {
    let limit = onset_before.unwrap_or(frames);
    if limit == 0 || !rng.random_bool(0.5) {
        return Vec::new();
    }
    let start = rng.random_range(0..limit);
    let end = (start + rng.random_range(1..=4)).min(frames);
    vec![Interval::new(start, end)]
}

fn generic_visibility(frames: usize, occlusion_prob: f64, rng: &mut impl Rng) -> Vec<Interval> {
    split_with_gap(Interval::new(0, frames), occlusion_prob, rng)
}

/// With probability `p`, punch a 2-4 frame hole into `span`.
fn split_with_gap(span: Interval, p: f64, rng: &mut impl Rng) -> Vec<Interval> {
    let gap = rng.random_range(2..=4);
    if span.len() < gap + 2 || !rng.random_bool(p) {
        return vec![span];
    }
    let cut = rng.random_range(span.start + 1..span.end - gap);
    vec![Interval::new(span.start, cut), Interval::new(cut + gap, span.end)]
}

/// Straight-line motion that bounces off the grid margins.
fn trajectory(frames: usize, grid: usize, size: SizeBand, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let h = size.half_extent();
    let (lo, hi) = (h + 1.0, grid as f64 - h - 1.0);
    let mut pos = (rng.random_range(lo..hi), rng.random_range(lo..hi));
    let mut vel = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(pos);
        pos.0 += vel.0;
        pos.1 += vel.1;
        if pos.0 < lo || pos.0 > hi {
            vel.0 = -vel.0;
            pos.0 = pos.0.clamp(lo, hi);
        }
        if pos.1 < lo || pos.1 > hi {
            vel.1 = -vel.1;
            pos.1 = pos.1.clamp(lo, hi);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::QueryMix;
    use alloc::vec::Vec;

    fn sound_onsets(o: &SimObject, frames: usize) -> Vec<usize> {
        (0..frames)
            .filter(|&t| o.sounding(t) && (t == 0 || !o.sounding(t - 1)))
            .collect()
    }

    /// Frame-by-frame reading of the query templates.
    fn check_target(ep: &Episode) -> Option<usize> {
        let n = ep.frames;
        let keyed: Vec<(usize, usize)> = match ep.query {
            Query::LastToDisappear => ep
                .objects
                .iter()
                .filter_map(|o| {
                    let last = (0..n).rev().find(|&t| o.visible(t))?;
                    (last + 1 < n).then_some((o.id, last))
                })
                .collect(),
            Query::LastToSound => ep
                .objects
                .iter()
                .filter_map(|o| sound_onsets(o, n).last().map(|&t| (o.id, t)))
                .collect(),
            Query::AttributeMatch { value } => {
                let ids: Vec<usize> = ep
                    .objects
                    .iter()
                    .filter(|o| (0..n).any(|t| o.has(value, t, ep.grid)))
                    .map(|o| o.id)
                    .collect();
                return (ids.len() == 1).then(|| ids[0]);
            }
        };
        let best = keyed.iter().map(|k| k.1).max()?;
        let top: Vec<_> = keyed.iter().filter(|k| k.1 == best).collect();
        (top.len() == 1).then(|| top[0].0)
    }

    #[test]
    fn same_seed_same_episode() {
        let cfg = EnvConfig::default();
        assert_eq!(generate_episode(&cfg, 7).unwrap(), generate_episode(&cfg, 7).unwrap());
        assert_ne!(generate_episode(&cfg, 7).unwrap(), generate_episode(&cfg, 8).unwrap());
    }

    #[test]
    fn generated_episodes_satisfy_their_contract() {
        let cfg = EnvConfig::default();
        let mut kinds = [0usize; 3];
        for seed in 0..300 {
            let ep = generate_episode(&cfg, seed).unwrap();
            assert!((cfg.frames_min..=cfg.frames_max).contains(&ep.frames));
            assert!((cfg.objects_min..=cfg.objects_max).contains(&ep.objects.len()));
            assert_eq!(ep.observations.len(), ep.frames);
            assert_eq!(ep.gt_masks.len(), ep.frames);
            assert!(ep.gt_areas().iter().any(|&a| a > 0));
            assert_eq!(check_target(&ep), Some(ep.target), "seed {seed}");
            let segs = ep.target_segments().len();
            assert!((cfg.target_segments_min..=cfg.target_segments_max).contains(&segs));
            for o in &ep.objects {
                for list in [&o.visibility, &o.sound] {
                    assert!(list.iter().all(|i| i.start < i.end && i.end <= ep.frames));
                    assert!(list.windows(2).all(|w| w[0].end < w[1].start));
                }
            }
            for t in 0..ep.frames {
                assert_eq!(ep.gt_masks.masks()[t].is_empty(), !ep.target_object().visible(t));
                assert!(ep.observations[t].features().iter().all(|v| v.is_finite()));
            }
            if ep.query.is_temporal() {
                // no frame shows the target as the only candidate
                for t in 0..ep.frames {
                    let active: Vec<usize> = ep
                        .objects
                        .iter()
                        .filter(|o| match ep.query {
                            Query::LastToDisappear => o.visible(t),
                            _ => o.sounding(t),
                        })
                        .map(|o| o.id)
                        .collect();
                    assert_ne!(active, [ep.target], "seed {seed} frame {t}");
                }
            }
            kinds[match ep.query {
                Query::LastToDisappear => 0,
                Query::LastToSound => 1,
                Query::AttributeMatch { .. } => 2,
            }] += 1;
        }
        assert!(kinds.iter().all(|&k| k > 50), "{kinds:?}");
    }

    #[test]
    fn single_object_presence_tracks_visibility() {
        let cfg = EnvConfig {
            objects_min: 1,
            objects_max: 1,
            frames_min: 24,
            frames_max: 24,
            query_mix: QueryMix {
                last_to_disappear: 0.0,
                last_to_sound: 0.0,
                attribute_match: 1.0,
            },
            ..EnvConfig::default()
        };
        let ep = generate_episode(&cfg, 11).unwrap();
        assert_eq!(ep.target, 0);
        assert!(matches!(ep.query, Query::AttributeMatch { .. }));
        // point-biserial correlation between presence and visibility
        let x: Vec<f64> = ep.observations.iter().map(|o| o.presence_score).collect();
        let y: Vec<f64> = (0..ep.frames).map(|t| ep.objects[0].visible(t) as u8 as f64).collect();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        let r = cov / libm::sqrt(vx * vy);
        assert!(r > 0.5, "r = {r}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = EnvConfig::default();
        let bad = [
            EnvConfig {
                frames_min: 4,
                ..base.clone()
            },
            EnvConfig {
                frames_max: 80,
                ..base.clone()
            },
            EnvConfig {
                objects_max: 7,
                ..base.clone()
            },
            EnvConfig {
                occlusion_prob: 1.5,
                ..base.clone()
            },
            EnvConfig {
                gamma: 0.0,
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_episode(&cfg, 1), Err(Error::InvalidConfig { .. })));
        }
    }

    #[test]
    fn exhausted_retries_report_the_seed() {
        // four long segments cannot fit in eight frames
        let cfg = EnvConfig {
            frames_min: 8,
            frames_max: 8,
            target_segments_min: 4,
            target_segments_max: 4,
            query_mix: QueryMix {
                last_to_disappear: 1.0,
                last_to_sound: 0.0,
                attribute_match: 0.0,
            },
            max_retries: 5,
            ..EnvConfig::default()
        };
        assert_eq!(generate_episode(&cfg, 42), Err(Error::Unsolvable { seed: 42 }));
    }

    #[test]
    fn spec_regenerates_the_episode() {
        let spec = EpisodeSpec {
            seed: 3,
            config: EnvConfig::default().for_inference(),
        };
        let ep = spec.generate().unwrap();
        assert_eq!(ep.frames, 24);
        assert_eq!(ep, generate_episode(&spec.config, 3).unwrap());
    }
}
