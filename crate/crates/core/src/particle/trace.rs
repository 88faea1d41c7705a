//! Per-interval path traces and sup-distance merging.
//!
//! A particle path is represented by knots `(t, left, right)`: `left` is the
//! left limit and `right` the càdlàg value at `t`. Between consecutive knots
//! the path is the straight line from the previous `right` to the next
//! `left`. For the hybrid scheme this is exact; for the event-driven scheme it
//! interpolates the exponential flow between recorded points.

/// A knot of a piecewise-linear càdlàg path.
#[derive(Debug, Clone, Copy)]
pub struct Knot<'a> {
    pub t: f64,
    pub left: &'a [f64],
    pub right: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventScope {
    /// Only the jumper moved.
    One,
    /// Every particle moved (main jump plus collateral jumps), or a
    /// continuity breakpoint of a refined step.
    All,
}

#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub time: f64,
    pub jumper: usize,
    pub scope: EventScope,
    /// `d` values for `One`, `n·d` values for `All`.
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    /// False for refinement breakpoints.
    pub is_jump: bool,
}

/// Everything a system did over one grid interval `[t0, t1]`.
#[derive(Debug, Clone, Default)]
pub struct StepTrace {
    pub t0: f64,
    pub t1: f64,
    pub d: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub events: Vec<TraceEvent>,
}

impl StepTrace {
    pub(crate) fn begin(&mut self, t0: f64, d: usize, start: &[f64]) {
        self.t0 = t0;
        self.t1 = t0;
        self.d = d;
        self.start.clear();
        self.start.extend_from_slice(start);
        self.end.clear();
        self.events.clear();
    }

    pub(crate) fn finish(&mut self, t1: f64, end: &[f64]) {
        self.t1 = t1;
        self.end.clear();
        self.end.extend_from_slice(end);
    }

    pub fn n(&self) -> usize {
        self.start.len().checked_div(self.d).unwrap_or(0)
    }

    /// Knots of particle `i`, from `t0` to `t1` inclusive.
    pub fn knots(&self, i: usize) -> impl Iterator<Item = Knot<'_>> + '_ {
        let d = self.d;
        let start = &self.start[i * d..(i + 1) * d];
        let end = &self.end[i * d..(i + 1) * d];
        std::iter::once(Knot {
            t: self.t0,
            left: start,
            right: start,
        })
        .chain(self.events.iter().filter_map(move |e| match e.scope {
            EventScope::One if e.jumper == i => Some(Knot {
                t: e.time,
                left: &e.pre,
                right: &e.post,
            }),
            EventScope::One => None,
            EventScope::All => Some(Knot {
                t: e.time,
                left: &e.pre[i * d..(i + 1) * d],
                right: &e.post[i * d..(i + 1) * d],
            }),
        }))
        .chain(std::iter::once(Knot {
            t: self.t1,
            left: end,
            right: end,
        }))
    }

    pub fn jump_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_jump).count()
    }
}

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Cursor<'a, I: Iterator<Item = Knot<'a>>> {
    iter: std::iter::Peekable<I>,
    last_t: f64,
    last: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl<'a, I: Iterator<Item = Knot<'a>>> Cursor<'a, I> {
    fn new(iter: I, d: usize) -> Option<(Self, Knot<'a>)> {
        let mut iter = iter.peekable();
        let first = iter.next()?;
        Some((
            Self {
                iter,
                last_t: first.t,
                last: first.right.to_vec(),
                left: vec![0.0; d],
                right: vec![0.0; d],
            },
            first,
        ))
    }

    fn next_time(&mut self) -> Option<f64> {
        self.iter.peek().map(|k| k.t)
    }

    /// Values at `tau`; consumes the knot if it sits exactly at `tau`.
    fn values_at(&mut self, tau: f64) {
        match self.iter.peek() {
            Some(k) if k.t == tau => {
                self.left.copy_from_slice(k.left);
                self.right.copy_from_slice(k.right);
                self.last_t = tau;
                self.last.copy_from_slice(k.right);
                self.iter.next();
            }
            Some(k) => {
                let w = (tau - self.last_t) / (k.t - self.last_t);
                for c in 0..self.left.len() {
                    let v = self.last[c] + w * (k.left[c] - self.last[c]);
                    self.left[c] = v;
                    self.right[c] = v;
                }
            }
            None => {
                self.left.copy_from_slice(&self.last);
                self.right.copy_from_slice(&self.last);
            }
        }
    }
}

/// `sup_t ‖a(t) − b(t)‖` over the merged knot set, using both left limits
/// and càdlàg values. Exact for the piecewise-linear representation.
pub fn sup_between<'a, 'b>(a: impl Iterator<Item = Knot<'a>>, b: impl Iterator<Item = Knot<'b>>) -> f64
where
    'b: 'a,
{
    let Some((mut ca, ka)) = Cursor::new(a, 0) else {
        return 0.0;
    };
    let d = ka.right.len();
    ca.left.resize(d, 0.0);
    ca.right.resize(d, 0.0);
    let Some((mut cb, kb)) = Cursor::new(b, d) else {
        return 0.0;
    };
    let mut sup = dist(ka.left, kb.left).max(dist(ka.right, kb.right));
    loop {
        let tau = match (ca.next_time(), cb.next_time()) {
            (None, None) => break,
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (Some(x), Some(y)) => x.min(y),
        };
        ca.values_at(tau);
        cb.values_at(tau);
        sup = sup.max(dist(&ca.left, &cb.left)).max(dist(&ca.right, &cb.right));
    }
    sup
}

/// Running per-particle sup distance between two coupled systems.
#[derive(Debug, Clone)]
pub struct SupTracker {
    pub sup: Vec<f64>,
}

impl SupTracker {
    pub fn new(n: usize) -> Self {
        Self { sup: vec![0.0; n] }
    }

    pub fn update(&mut self, a: &StepTrace, b: &StepTrace) {
        for (i, s) in self.sup.iter_mut().enumerate() {
            let v = sup_between(a.knots(i), b.knots(i));
            if v > *s {
                *s = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knots<'a>(pts: &'a [(f64, Vec<f64>, Vec<f64>)]) -> impl Iterator<Item = Knot<'a>> {
        pts.iter().map(|(t, l, r)| Knot {
            t: *t,
            left: l,
            right: r,
        })
    }

    #[test]
    fn identical_paths_are_at_distance_zero() {
        let p = vec![
            (0.0, vec![0.0], vec![0.0]),
            (0.5, vec![1.0], vec![3.0]),
            (1.0, vec![2.0], vec![2.0]),
        ];
        assert_eq!(sup_between(knots(&p), knots(&p)), 0.0);
    }

    #[test]
    fn step_function_is_caught_at_the_jump() {
        let zero = vec![(0.0, vec![0.0], vec![0.0]), (2.0, vec![0.0], vec![0.0])];
        let step = vec![
            (0.0, vec![0.0], vec![0.0]),
            (1.0, vec![0.0], vec![1.0]),
            (2.0, vec![1.0], vec![1.0]),
        ];
        assert_eq!(sup_between(knots(&zero), knots(&step)), 1.0);
    }

    #[test]
    fn interpolates_between_foreign_knots() {
        let a = vec![(0.0, vec![0.0], vec![0.0]), (1.0, vec![1.0], vec![1.0])];
        let b = vec![
            (0.0, vec![0.0], vec![0.0]),
            (0.5, vec![0.5], vec![-0.5]),
            (1.0, vec![1.0], vec![1.0]),
        ];
        // b jumps from the line down by 1 at t = 0.5
        assert!((sup_between(knots(&a), knots(&b)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_times_are_handled() {
        let a = vec![
            (0.0, vec![0.0], vec![0.0]),
            (1.0, vec![0.0], vec![2.0]),
            (1.0, vec![2.0], vec![2.0]),
        ];
        let b = vec![(0.0, vec![0.0], vec![0.0]), (1.0, vec![0.0], vec![0.0])];
        assert_eq!(sup_between(knots(&a), knots(&b)), 2.0);
    }
}
