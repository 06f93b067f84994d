//! Frame-to-event conversion with a log-intensity DVS pixel model.
//!
//! Between two frames each pixel's log intensity is taken as linear in
//! time. Whenever it reaches `ref_level + theta_on` (or
//! `ref_level - theta_off`) an event fires at the floor of the crossing
//! time and the reference moves by one threshold. Crossings are inclusive:
//! landing exactly on a level fires. Events inside the refractory window,
//! or on the same microsecond as the pixel's previous event, are dropped
//! but still move the reference.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::par;
use crate::render::LuminanceFrame;
use crate::rng::{stream, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Polarity {
    Off = -1,
    On = 1,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        self as i8
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }

    /// Stream sort key `(t, y, x, polarity)`.
    #[inline]
    pub fn key(&self) -> (u64, u16, u16, i8) {
        (self.t, self.y, self.x, self.polarity.as_i8())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Self {
        Self {
            width,
            height,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks bounds and the strict `(t, y, x, polarity)` ordering.
    pub fn is_valid(&self) -> bool {
        self.events
            .iter()
            .all(|e| (e.x as usize) < self.width && (e.y as usize) < self.height)
            && self.events.windows(2).all(|w| w[0].key() < w[1].key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DvsParams {
    pub theta_on: f64,
    pub theta_off: f64,
    pub refractory_us: u64,
    pub log_eps: f64,
    pub leak_rate_hz: f64,
    pub noise_seed: u64,
    pub noise_enabled: bool,
}

impl Default for DvsParams {
    fn default() -> Self {
        Self {
            theta_on: 0.2,
            theta_off: 0.2,
            refractory_us: 1000,
            log_eps: 1e-3,
            leak_rate_hz: 0.1,
            noise_seed: 0,
            noise_enabled: false,
        }
    }
}

impl DvsParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !(self.theta_on.is_finite() && self.theta_on > 0.0) {
            return bad("theta_on", "must be finite and > 0");
        }
        if !(self.theta_off.is_finite() && self.theta_off > 0.0) {
            return bad("theta_off", "must be finite and > 0");
        }
        if !(self.log_eps.is_finite() && self.log_eps > 0.0) {
            return bad("log_eps", "must be finite and > 0");
        }
        if !(self.leak_rate_hz.is_finite() && self.leak_rate_hz >= 0.0) {
            return bad("leak_rate_hz", "must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelState {
    /// Log intensity at the last (possibly suppressed) event.
    pub ref_level: f64,
    /// Time of the last emitted event.
    pub last_event_t: Option<u64>,
}

impl PixelState {
    pub fn new(ref_level: f64) -> Self {
        Self {
            ref_level,
            last_event_t: None,
        }
    }
}

#[inline]
pub fn log_intensity(i: f64, log_eps: f64) -> f64 {
    (i + log_eps).ln()
}

/// Walks the threshold crossings of one pixel over `[t0_us, t1_us]`,
/// pushing events for pixel `(x, y)` into `out` and updating `state`.
///
/// The k-th level is computed as `ref + k * theta` from the reference at
/// entry rather than by repeated addition, so a signal that lands on an
/// exact multiple of the threshold fires exactly that many times.
#[allow(clippy::too_many_arguments)]
pub fn pixel_crossings_into(
    l_prev: f64,
    l_next: f64,
    state: &mut PixelState,
    t0_us: u64,
    t1_us: u64,
    params: &DvsParams,
    (x, y): (u16, u16),
    out: &mut Vec<Event>,
) {
    debug_assert!(t0_us < t1_us);
    let base = state.ref_level;
    let (polarity, theta, sign) = if l_next >= base {
        (Polarity::On, params.theta_on, 1.0)
    } else {
        (Polarity::Off, params.theta_off, -1.0)
    };
    let span = (t1_us - t0_us) as f64;
    let slope = l_next - l_prev;
    let mut k = 1u64;
    loop {
        let level = base + sign * (k as f64) * theta;
        let reached = if sign > 0.0 {
            l_next >= level
        } else {
            l_next <= level
        };
        if !reached {
            break;
        }
        // Crossing time along the linear segment; a level already passed at
        // t0 fires at t0.
        let frac = if level == l_next {
            1.0
        } else if slope == 0.0 {
            0.0
        } else {
            ((level - l_prev) / slope).clamp(0.0, 1.0)
        };
        let t = t0_us + ((span * frac).floor() as u64).min(t1_us - t0_us);
        let blocked = state
            .last_event_t
            .is_some_and(|last| t <= last || t - last < params.refractory_us);
        if !blocked {
            out.push(Event::new(t, x, y, polarity));
            state.last_event_t = Some(t);
        }
        state.ref_level = level;
        k += 1;
    }
}

/// Single-pixel crossings; see [`pixel_crossings_into`].
pub fn pixel_crossings(
    l_prev: f64,
    l_next: f64,
    state: PixelState,
    t0_us: u64,
    t1_us: u64,
    params: &DvsParams,
) -> (Vec<Event>, PixelState) {
    let mut state = state;
    let mut out = Vec::new();
    pixel_crossings_into(l_prev, l_next, &mut state, t0_us, t1_us, params, (0, 0), &mut out);
    (out, state)
}

fn check_frames(frames: &[LuminanceFrame]) -> Result<Vec<u64>> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames(frames.len()));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let mut times = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if (f.width, f.height) != (w, h) || f.pixels.len() != w * h {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: (f.width, f.height),
            });
        }
        let t = f.timestamp_us();
        if times.last().is_some_and(|&p| t <= p) {
            return Err(Error::NonMonotoneTimestamps { index: i });
        }
        times.push(t);
    }
    Ok(times)
}

/// Converts a frame sequence into a sorted event stream.
///
/// Frame 0 only initializes the reference levels. Rows are processed in
/// parallel; the final sort over unique `(t, y, x, polarity)` keys makes the
/// result independent of scheduling.
pub fn frames_to_events(frames: &[LuminanceFrame], params: &DvsParams) -> Result<EventStream> {
    let times = check_frames(frames)?;
    let (w, h) = (frames[0].width, frames[0].height);
    let eps = params.log_eps;

    let rows: Vec<Vec<Event>> = par::map_indexed(h, |y| {
        let mut out = Vec::new();
        let row = y * w;
        let mut logs: Vec<f64> = frames[0].pixels[row..row + w]
            .iter()
            .map(|&v| log_intensity(v as f64, eps))
            .collect();
        let mut states: Vec<PixelState> = logs.iter().map(|&l| PixelState::new(l)).collect();
        for (f, pair) in frames[1..].iter().zip(times.windows(2)) {
            for x in 0..w {
                let next = log_intensity(f.pixels[row + x] as f64, eps);
                let prev = logs[x];
                if next != prev || next != states[x].ref_level {
                    pixel_crossings_into(
                        prev,
                        next,
                        &mut states[x],
                        pair[0],
                        pair[1],
                        params,
                        (x as u16, y as u16),
                        &mut out,
                    );
                }
                logs[x] = next;
            }
        }
        out
    });

    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    par::sort_unstable_by_key(&mut events, Event::key);
    Ok(EventStream::new(w, h, events))
}

/// Adds leak ON events: an independent Poisson process of rate
/// `leak_rate_hz` per pixel over `[t0_us, t1_us)`, each pixel drawing from
/// its own keyed stream. Returns the input unchanged when noise is disabled
/// or the rate is zero. Leak events colliding with an existing event key
/// are dropped.
pub fn inject_noise(stream: &EventStream, params: &DvsParams, t0_us: u64, t1_us: u64) -> EventStream {
    if !params.noise_enabled || params.leak_rate_hz <= 0.0 || t1_us <= t0_us {
        return stream.clone();
    }
    let (w, h) = (stream.width, stream.height);
    let rate_per_us = params.leak_rate_hz * 1e-6;
    let noise: Vec<Vec<Event>> = par::map_indexed(h, |y| {
        let mut out = Vec::new();
        for x in 0..w {
            let mut rng =
                SplitMix64::keyed(params.noise_seed, stream::NOISE, (y * w + x) as u64);
            let mut t = t0_us as f64;
            let mut last = None;
            loop {
                t += rng.exponential(rate_per_us);
                if t >= t1_us as f64 {
                    break;
                }
                let ti = t.floor() as u64;
                if last != Some(ti) {
                    out.push(Event::new(ti, x as u16, y as u16, Polarity::On));
                    last = Some(ti);
                }
            }
        }
        out
    });
    let mut events = stream.events.clone();
    events.extend(noise.into_iter().flatten());
    par::sort_unstable_by_key(&mut events, Event::key);
    events.dedup_by_key(|e| e.key());
    EventStream::new(w, h, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(refractory_us: u64) -> DvsParams {
        DvsParams {
            refractory_us,
            ..DvsParams::default()
        }
    }

    #[test]
    fn log_intensity_examples() {
        assert_eq!(log_intensity(0.0, 1.0), 0.0);
        let e = std::f64::consts::E;
        assert!((log_intensity(e - 0.001, 0.001) - 1.0).abs() < 1e-15);
        assert!((log_intensity(2.5, 0.001) - 2.501f64.ln()).abs() < 1e-15);
        assert!((log_intensity(2.5, 0.001) - 0.91669).abs() < 1e-5);
    }

    #[test]
    fn no_change_no_events() {
        let s = PixelState::new(0.3);
        let (ev, s2) = pixel_crossings(0.3, 0.3, s, 0, 1000, &params(0));
        assert!(ev.is_empty());
        assert_eq!(s, s2);
    }

    #[test]
    fn three_on_events() {
        let (ev, s) = pixel_crossings(0.0, 0.65, PixelState::new(0.0), 0, 1000, &params(0));
        let ts: Vec<u64> = ev.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![307, 615, 923]);
        for k in 1..=3u64 {
            assert_eq!(ts[k as usize - 1], (1000.0 * 0.2 * k as f64 / 0.65).floor() as u64);
        }
        assert!(ev.iter().all(|e| e.polarity == Polarity::On));
        assert!((s.ref_level - 0.6).abs() < 1e-12);
    }

    #[test]
    fn exact_threshold_off_event_at_endpoint() {
        let p = params(0);
        let target = 0.5 - p.theta_off;
        let (ev, s) = pixel_crossings(0.5, target, PixelState::new(0.5), 0, 1000, &p);
        assert_eq!(ev, vec![Event::new(1000, 0, 0, Polarity::Off)]);
        assert_eq!(s.ref_level, target);
    }

    #[test]
    fn refractory_suppresses_but_advances() {
        let (ev, s) = pixel_crossings(0.0, 0.65, PixelState::new(0.0), 0, 1000, &params(500));
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].t, 307);
        assert_eq!(ev[1].t, 923);
        assert!((s.ref_level - 0.6).abs() < 1e-12);
    }

    fn frame(w: usize, h: usize, t: f64, px: Vec<f32>) -> LuminanceFrame {
        LuminanceFrame {
            width: w,
            height: h,
            timestamp: t,
            pixels: px,
        }
    }

    #[test]
    fn identical_frames_no_events() {
        let a = frame(4, 4, 0.0, vec![0.25; 16]);
        let b = frame(4, 4, 0.001, vec![0.25; 16]);
        let s = frames_to_events(&[a, b], &params(0)).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn two_pixel_composition() {
        let eps = 1e-3;
        // Pixel B goes from log 0 to log 0.65.
        let i0 = 1.0 - eps;
        let i1 = 0.65f64.exp() - eps;
        let a = frame(2, 1, 0.0, vec![0.5, i0 as f32]);
        let b = frame(2, 1, 0.001, vec![0.5, i1 as f32]);
        let s = frames_to_events(&[a, b], &params(0)).unwrap();
        let ts: Vec<(u64, u16)> = s.events.iter().map(|e| (e.t, e.x)).collect();
        assert_eq!(ts, vec![(307, 1), (615, 1), (923, 1)]);
        assert!(s.is_valid());
    }

    #[test]
    fn frame_errors() {
        let a = frame(2, 1, 0.0, vec![0.5, 0.5]);
        let b = frame(1, 2, 0.001, vec![0.5, 0.5]);
        assert!(matches!(
            frames_to_events(&[a.clone(), b], &params(0)),
            Err(Error::DimensionMismatch { .. })
        ));
        let c = frame(2, 1, 0.0, vec![0.5, 0.5]);
        assert!(matches!(
            frames_to_events(&[a.clone(), c], &params(0)),
            Err(Error::NonMonotoneTimestamps { index: 1 })
        ));
        assert!(matches!(
            frames_to_events(&[a], &params(0)),
            Err(Error::TooFewFrames(1))
        ));
    }

    fn noisy(rate: f64, seed: u64) -> DvsParams {
        DvsParams {
            leak_rate_hz: rate,
            noise_seed: seed,
            noise_enabled: true,
            ..DvsParams::default()
        }
    }

    #[test]
    fn noise_zero_rate_is_identity() {
        let s = EventStream::new(2, 2, vec![Event::new(5, 1, 1, Polarity::Off)]);
        assert_eq!(inject_noise(&s, &noisy(0.0, 1), 0, 1_000_000), s);
    }

    #[test]
    fn noise_poisson_count_and_seed() {
        let s = EventStream::new(1, 1, Vec::new());
        let a = inject_noise(&s, &noisy(10.0, 1), 0, 1_000_000);
        assert!((2..=25).contains(&a.len()), "count {}", a.len());
        assert_eq!(a, inject_noise(&s, &noisy(10.0, 1), 0, 1_000_000));
        let b = inject_noise(&s, &noisy(10.0, 2), 0, 1_000_000);
        assert_ne!(a.events, b.events);
        assert!(a.is_valid());
        assert!(a.events.iter().all(|e| e.polarity == Polarity::On));
    }

    #[test]
    fn noise_mean_rate() {
        // 400 pixels x 1 s at 10 Hz: mean 4000, sd ~63.
        let s = EventStream::new(20, 20, Vec::new());
        let n = inject_noise(&s, &noisy(10.0, 9), 0, 1_000_000).len() as f64;
        assert!((n - 4000.0).abs() < 300.0, "{n}");
    }
}
