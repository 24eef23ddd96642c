//! Query resolution from full-episode information, used to certify that a
//! generated episode has exactly one correct answer.

use alloc::vec::Vec;

use super::episode::{Query, SimObject};

/// The unique object satisfying `query`, if there is one.
pub fn resolve_target(objects: &[SimObject], frames: usize, grid: usize, query: &Query) -> Option<usize> {
    let keyed: Vec<(usize, usize)> = match query {
        Query::LastToDisappear => objects
            .iter()
            .filter_map(|o| {
                let end = o.visibility.iter().map(|i| i.end).max()?;
                (end < frames).then_some((o.id, end))
            })
            .collect(),
        Query::LastToSound => objects
            .iter()
            .filter_map(|o| Some((o.id, o.sound.iter().map(|i| i.start).max()?)))
            .collect(),
        Query::AttributeMatch { value } => {
            let matching: Vec<usize> = objects
                .iter()
                .filter(|o| (0..frames).any(|t| o.has(*value, t, grid)))
                .map(|o| o.id)
                .collect();
            return match matching.as_slice() {
                [only] => Some(*only),
                _ => None,
            };
        }
    };
    let best = keyed.iter().map(|k| k.1).max()?;
    let mut winners = keyed.iter().filter(|k| k.1 == best);
    let first = winners.next()?;
    winners.next().is_none().then_some(first.0)
}

/// Whether some single frame, seen alone, already singles out `target`.
///
/// A lone frame carries no ordering information, so a temporal query can
/// only be answered from it when the target is the only candidate in view:
/// the only visible object for disappearance, the only sounding object for
/// sound. Attribute queries are not temporal and always answerable.
pub fn single_frame_solvable(objects: &[SimObject], frames: usize, query: &Query, target: usize) -> bool {
    let active = |o: &SimObject, t: usize| match query {
        Query::LastToDisappear => o.visible(t),
        Query::LastToSound => o.sounding(t),
        Query::AttributeMatch { .. } => true,
    };
    if !query.is_temporal() {
        return true;
    }
    (0..frames).any(|t| {
        let mut in_view = objects.iter().filter(|o| active(o, t));
        matches!((in_view.next(), in_view.next()), (Some(o), None) if o.id == target)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::episode::{Appearance, Attribute, Interval, Shape, SizeBand};
    use alloc::vec;

    fn object(id: usize, vis: &[(usize, usize)], sound: &[(usize, usize)], color: usize) -> SimObject {
        SimObject {
            id,
            appearance: Appearance {
                color,
                shape: Shape::Square,
                size: SizeBand::Small,
            },
            trajectory: vec![(10.0, 10.0); 20],
            visibility: vis.iter().map(|&(s, e)| Interval::new(s, e)).collect(),
            sound: sound.iter().map(|&(s, e)| Interval::new(s, e)).collect(),
        }
    }

    #[test]
    fn last_to_disappear_picks_latest_end() {
        let objs = vec![
            object(0, &[(0, 5)], &[], 0),
            object(1, &[(2, 9)], &[], 1),
            object(2, &[(1, 4), (7, 14)], &[], 2),
        ];
        assert_eq!(resolve_target(&objs, 20, 64, &Query::LastToDisappear), Some(2));
    }

    #[test]
    fn objects_visible_to_the_end_never_disappear() {
        let objs = vec![object(0, &[(0, 20)], &[], 0), object(1, &[(0, 9)], &[], 1)];
        assert_eq!(resolve_target(&objs, 20, 64, &Query::LastToDisappear), Some(1));
        let tie = vec![object(0, &[(0, 9)], &[], 0), object(1, &[(3, 9)], &[], 1)];
        assert_eq!(resolve_target(&tie, 20, 64, &Query::LastToDisappear), None);
    }

    #[test]
    fn last_to_sound_uses_latest_onset() {
        let objs = vec![
            object(0, &[(0, 20)], &[(1, 19)], 0),
            object(1, &[(0, 20)], &[(3, 5), (9, 12)], 1),
        ];
        assert_eq!(resolve_target(&objs, 20, 64, &Query::LastToSound), Some(1));
        // covered by object 0's sound on every frame it sounds
        assert!(!single_frame_solvable(&objs, 20, &Query::LastToSound, 1));
        let alone = vec![
            object(0, &[(0, 20)], &[(1, 4)], 0),
            object(1, &[(0, 20)], &[(9, 12)], 1),
        ];
        assert!(single_frame_solvable(&alone, 20, &Query::LastToSound, 1));
    }

    #[test]
    fn attribute_match_needs_uniqueness() {
        let objs = vec![object(0, &[(0, 20)], &[], 0), object(1, &[(0, 20)], &[], 1)];
        let q = Query::AttributeMatch {
            value: Attribute::Color(1),
        };
        assert_eq!(resolve_target(&objs, 20, 64, &q), Some(1));
        let q = Query::AttributeMatch {
            value: Attribute::Shape(Shape::Square),
        };
        assert_eq!(resolve_target(&objs, 20, 64, &q), None);
    }
}
