//! Splitting a segment into pieces that each stay inside one subdomain.

use super::covering::Covering;
use crate::error::{Error, Result};
use crate::grid::Segment;

/// Waypoints `y_1 = x0, ..., y_{K+1} = x` and the subdomain used on each piece.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPlan {
    pub waypoints: Vec<[f64; 3]>,
    pub assignment: Vec<usize>,
}

impl PathPlan {
    /// Number of pieces `K`.
    pub fn pieces(&self) -> usize {
        self.assignment.len()
    }

    pub fn segment(&self, k: usize) -> Segment {
        Segment::new(&self.waypoints[k], &self.waypoints[k + 1])
    }

    /// Follow `self`, then `next`, which must start where `self` ends.
    pub fn concat(mut self, next: PathPlan) -> Result<PathPlan> {
        let end = *self.waypoints.last().expect("a plan has two waypoints");
        if next.waypoints[0] != end {
            return Err(Error::InvalidArgument("plans do not join".into()));
        }
        self.waypoints.extend_from_slice(&next.waypoints[1..]);
        self.assignment.extend(next.assignment);
        Ok(self)
    }

    /// Whether every piece lies in its assigned subdomain (boxes are convex, so endpoints suffice).
    pub fn is_contained(&self, covering: &Covering) -> bool {
        (0..self.pieces()).all(|k| {
            let sub = &covering.subdomains[self.assignment[k]];
            sub.contains(&self.waypoints[k]) && sub.contains(&self.waypoints[k + 1])
        })
    }
}

/// Fewest pieces by furthest reach along the segment; waypoints sit at the middle of
/// each overlap. Ties go to the smallest subdomain index.
pub fn plan_path(x0: &[f64], x: &[f64], covering: &Covering) -> Result<PathPlan> {
    let seg = Segment::new(x0, x);
    let intervals: Vec<Option<(f64, f64)>> = covering
        .subdomains
        .iter()
        .map(|s| s.segment_interval(&seg))
        .collect();
    let uncoverable = || Error::Uncoverable {
        from: x0.to_vec(),
        to: x.to_vec(),
    };

    let mut first: Option<(usize, f64)> = None;
    for (k, iv) in intervals.iter().enumerate() {
        if let Some((a, b)) = *iv {
            if a <= 0.0 && first.is_none_or(|(_, bb)| b > bb) {
                first = Some((k, b));
            }
        }
    }
    let (first, mut reach) = first.ok_or_else(uncoverable)?;
    let mut waypoints = vec![seg.point(0.0)];
    let mut assignment = vec![first];
    let mut t_prev = 0.0;
    while reach < 1.0 {
        // the next piece must start strictly before the current reach
        let mut best: Option<(usize, f64, f64)> = None;
        for (k, iv) in intervals.iter().enumerate() {
            if let Some((a, b)) = *iv {
                if a < reach && b > reach && best.is_none_or(|(_, _, bb)| b > bb) {
                    best = Some((k, a, b));
                }
            }
        }
        let (next, a, b) = best.ok_or_else(uncoverable)?;
        let t_way = 0.5 * (a.max(t_prev) + reach);
        waypoints.push(seg.point(t_way));
        assignment.push(next);
        t_prev = t_way;
        reach = b;
    }
    waypoints.push(seg.point(1.0));
    Ok(PathPlan {
        waypoints,
        assignment,
    })
}
