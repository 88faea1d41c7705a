//! Counter-based random drivers.
//!
//! Every random quantity in a run is a pure function of a [`StreamKey`] and a
//! counter, so coupled processes can consume identical noise and results do
//! not depend on how work is scheduled across threads.
//!
//! Derivation (also documented in the README, with test vectors):
//!
//! ```text
//! mix64(z)      = splitmix64 finaliser
//! absorb(h, x)  = mix64(h ^ mix64(x + GOLDEN))
//! key           = absorb(absorb(absorb(absorb(0, seed), replica), particle), kind)
//! output(c)     = mix64(key ^ mix64(c + GOLDEN))
//! substream(t)  = stream with key absorb(key, t), counter 0
//! ```
//!
//! Uniforms take the top 53 bits; normals use Box–Muller on two consecutive
//! outputs.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, x: u64) -> u64 {
    mix64(h ^ mix64(x.wrapping_add(GOLDEN)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Brownian,
    Poisson,
    Marks,
    Init,
}

impl StreamKind {
    fn code(self) -> u64 {
        match self {
            StreamKind::Brownian => 1,
            StreamKind::Poisson => 2,
            StreamKind::Marks => 3,
            StreamKind::Init => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub replica: u64,
    pub particle: u64,
    pub kind: StreamKind,
}

impl StreamKey {
    pub fn new(master_seed: u64, replica: u64, particle: u64, kind: StreamKind) -> Self {
        Self {
            master_seed,
            replica,
            particle,
            kind,
        }
    }

    pub fn stream(&self) -> StreamState {
        derive_stream(*self)
    }
}

/// Position in a keyed stream. Cheap to copy; advancing one copy never
/// affects another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    key: u64,
    counter: u64,
}

pub fn derive_stream(key: StreamKey) -> StreamState {
    let mut h = absorb(0, key.master_seed);
    h = absorb(h, key.replica);
    h = absorb(h, key.particle);
    h = absorb(h, key.kind.code());
    StreamState { key: h, counter: 0 }
}

impl StreamState {
    /// Output at an arbitrary counter, without moving the cursor.
    #[inline]
    pub fn value_at(&self, counter: u64) -> u64 {
        mix64(self.key ^ mix64(counter.wrapping_add(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.value_at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
    }

    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        (r * c, r * s)
    }

    pub fn fill_normals(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.next_normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.next_normal_pair().0;
        }
    }

    pub fn substream(&self, tag: u64) -> StreamState {
        StreamState {
            key: absorb(self.key, tag),
            counter: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }
}

/// `√dt · Z` with `Z ~ N(0, I_{d1})`, drawn sequentially from `stream`.
pub fn brownian_increment(stream: &mut StreamState, dt: f64, d1: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut out = vec![0.0; d1];
    stream.fill_normals(&mut out);
    let s = dt.sqrt();
    out.iter_mut().for_each(|v| *v *= s);
    Ok(out)
}

/// Brownian increments of one grid interval `[0, dt]`, split into `2^level`
/// equal sub-steps by Lévy's midpoint construction. Every level refines the
/// same path, so systems that subdivide differently still share the noise.
pub fn dyadic_increments(stream: &StreamState, interval: u64, dt: f64, d1: usize, level: u32) -> Vec<f64> {
    let base = stream.substream(interval);
    let steps = 1usize << level;
    // path values at j * dt / 2^level, j = 0..=steps
    let mut w = vec![0.0; (steps + 1) * d1];
    {
        let mut s = base.substream(0);
        let mut z = vec![0.0; d1];
        s.fill_normals(&mut z);
        let sd = dt.sqrt();
        for c in 0..d1 {
            w[steps * d1 + c] = sd * z[c];
        }
    }
    let mut z = vec![0.0; d1];
    for l in 1..=level {
        let stride = steps >> l;
        let sd = (dt / (1u64 << (l + 1)) as f64).sqrt();
        let lvl = base.substream(l as u64);
        let mut j = 1usize;
        while j < (1usize << l) {
            let pos = j * stride;
            let mut s = lvl.substream(j as u64);
            s.fill_normals(&mut z);
            for c in 0..d1 {
                let left = w[(pos - stride) * d1 + c];
                let right = w[(pos + stride) * d1 + c];
                w[pos * d1 + c] = 0.5 * (left + right) + sd * z[c];
            }
            j += 2;
        }
    }
    let mut inc = vec![0.0; steps * d1];
    for k in 0..steps {
        for c in 0..d1 {
            inc[k * d1 + c] = w[(k + 1) * d1 + c] - w[k * d1 + c];
        }
    }
    inc
}

/// A candidate point of a Poisson random measure on time × rate level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonEvent {
    pub time: f64,
    /// Level in `(0, rate_bound]`; the event is accepted iff `u ≤ λ(state)`.
    pub u: f64,
    /// Counter of the exponential draw that produced this event.
    pub index: u64,
}

/// Next arrival of a homogeneous Poisson process with intensity `rate_bound`
/// after `t`, or `None` when it falls beyond `horizon`.
pub fn next_candidate_event(
    stream: &mut StreamState,
    t: f64,
    horizon: f64,
    rate_bound: f64,
) -> Result<Option<PoissonEvent>> {
    if !(rate_bound > 0.0) {
        return Err(Error::invalid(format!("rate bound must be positive, got {rate_bound}")));
    }
    let index = stream.counter();
    let gap = -stream.next_open01().ln() / rate_bound;
    let time = t + gap;
    if time > horizon {
        return Ok(None);
    }
    let u = rate_bound * stream.next_open01();
    Ok(Some(PoissonEvent { time, u, index }))
}

/// Mark coordinates of the product law on `[0,1]^ℕ`, materialised on demand.
#[derive(Debug, Clone, Copy)]
pub struct MarkSource {
    stream: StreamState,
}

impl MarkSource {
    pub fn new(stream: StreamState) -> Self {
        Self { stream }
    }

    /// Coordinate `target` of the mark attached to event `event_uid`.
    #[inline]
    pub fn mark(&self, event_uid: u64, target: u64) -> f64 {
        let s = self.stream.substream(event_uid).substream(target);
        (s.value_at(0) >> 11) as f64 * TWO_POW_M53
    }
}

/// One accepted-or-rejected candidate from a [`PoissonMeasure`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub time: f64,
    pub u: f64,
    /// Identifies the point for mark lookups; stable across coupled systems.
    pub uid: u64,
}

const BAND_BASE: f64 = 1.0;
const BAND_SHIFT: u32 = 40;

#[derive(Debug, Clone)]
struct Band {
    lo: f64,
    width: f64,
    stream: StreamState,
    generated_until: f64,
    count: u64,
    index: u64,
    buffer: VecDeque<Candidate>,
}

impl Band {
    fn new(index: u64, root: &StreamState) -> Self {
        let (lo, hi) = if index == 0 {
            (0.0, BAND_BASE)
        } else {
            let hi = BAND_BASE * (1u64 << index) as f64;
            (hi / 2.0, hi)
        };
        Self {
            lo,
            width: hi - lo,
            stream: root.substream(index),
            generated_until: 0.0,
            count: 0,
            index,
            buffer: VecDeque::new(),
        }
    }

    fn prune(&mut self, t: f64) {
        while self.buffer.front().is_some_and(|c| c.time <= t) {
            self.buffer.pop_front();
        }
    }

    fn generate_one(&mut self) {
        let ev = next_candidate_event(&mut self.stream, self.generated_until, f64::INFINITY, self.width)
            .expect("band width is positive")
            .expect("infinite horizon");
        self.generated_until = ev.time;
        let uid = (self.index << BAND_SHIFT) | self.count;
        self.count += 1;
        self.buffer.push_back(Candidate {
            time: ev.time,
            u: self.lo + ev.u,
            uid,
        });
    }

    fn ensure_until(&mut self, t: f64) {
        while self.generated_until <= t {
            self.generate_one();
        }
    }
}

/// Poisson random measure on `[0,∞) × [0,∞)` (time × level) for one particle.
///
/// The level axis is cut into bands `(0,1], (1,2], (2,4], …`, each an
/// independent homogeneous process on its own substream. Restricting to
/// `u ≤ R` for any `R` therefore always sees the same underlying points,
/// which is what lets systems with different thinning bounds stay coupled.
#[derive(Debug, Clone)]
pub struct PoissonMeasure {
    root: StreamState,
    bands: Vec<Band>,
}

impl PoissonMeasure {
    pub fn new(stream: StreamState) -> Self {
        Self {
            root: stream,
            bands: Vec::new(),
        }
    }

    fn bands_below(&mut self, bound: f64) -> &mut [Band] {
        loop {
            let next = self.bands.len() as u64;
            let lo = if next == 0 {
                0.0
            } else {
                BAND_BASE * (1u64 << (next - 1)) as f64
            };
            if lo >= bound || next >= 62 {
                break;
            }
            self.bands.push(Band::new(next, &self.root));
        }
        let active = self.bands.iter().take_while(|b| b.lo < bound).count();
        &mut self.bands[..active]
    }

    /// Appends all points in `(t0, t1]` with `u ≤ bound`. Points are not
    /// consumed, so the same window can be queried again with another bound;
    /// call [`discard_until`](Self::discard_until) once a window is final.
    pub fn candidates_in(&mut self, t0: f64, t1: f64, bound: f64, out: &mut Vec<Candidate>) {
        if !(bound > 0.0) {
            return;
        }
        for band in self.bands_below(bound) {
            band.ensure_until(t1);
            out.extend(
                band.buffer
                    .iter()
                    .skip_while(|c| c.time <= t0)
                    .take_while(|c| c.time <= t1)
                    .filter(|c| c.u <= bound),
            );
        }
    }

    /// Drops buffered points at or before `t`.
    pub fn discard_until(&mut self, t: f64) {
        for band in &mut self.bands {
            band.prune(t);
        }
    }

    /// Earliest point with time in `(t, horizon]` and `u ≤ bound`.
    pub fn next_after(&mut self, t: f64, bound: f64, horizon: f64) -> Option<Candidate> {
        if !(bound > 0.0) {
            return None;
        }
        let mut best: Option<Candidate> = None;
        for band in self.bands_below(bound) {
            band.prune(t);
            let limit = best.map_or(horizon, |b| b.time);
            let mut k = 0;
            loop {
                if k == band.buffer.len() {
                    if band.generated_until > limit {
                        break;
                    }
                    band.generate_one();
                    continue;
                }
                let c = band.buffer[k];
                if c.time <= t {
                    // a band opened late starts generating from time 0
                    band.buffer.pop_front();
                    continue;
                }
                if c.time > limit {
                    break;
                }
                if c.u <= bound {
                    if best.is_none_or(|b| c.time < b.time) {
                        best = Some(c);
                    }
                    break;
                }
                k += 1;
            }
        }
        best
    }
}
