//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use erebus::detect::{iou, BBox, Detection, ImageEval};
use erebus::events::{log_intensity, DvsParams, Event, EventStream, Polarity};
use erebus::render::LuminanceFrame;
use erebus::rng::SplitMix64;

pub fn frame(width: usize, height: usize, t_us: u64, pixels: Vec<f32>) -> LuminanceFrame {
    LuminanceFrame {
        width,
        height,
        timestamp: t_us as f64 / 1e6,
        pixels,
    }
}

/// Steps every pixel through time one microsecond at a time and fires each
/// threshold level inside the microsecond the linear signal reaches it.
/// Returns `(t, y, x, polarity)` keys in stream order.
pub fn brute_force_events(frames: &[LuminanceFrame], p: &DvsParams) -> Vec<(u64, u16, u16, i8)> {
    let (w, h) = (frames[0].width, frames[0].height);
    let times: Vec<u64> = frames.iter().map(|f| (f.timestamp * 1e6).round() as u64).collect();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = |k: usize| log_intensity(frames[k].pixels[y * w + x] as f64, p.log_eps);
            let mut reference = l(0);
            let mut last: Option<u64> = None;
            for k in 0..frames.len() - 1 {
                let (a, b) = (l(k), l(k + 1));
                let (t0, t1) = (times[k], times[k + 1]);
                let at = |t: u64| {
                    if t == t1 {
                        b
                    } else {
                        a + (b - a) * ((t - t0) as f64 / (t1 - t0) as f64)
                    }
                };
                let up = b >= reference;
                let (sign, theta, pol) = if up {
                    (1.0, p.theta_on, 1i8)
                } else {
                    (-1.0, p.theta_off, -1i8)
                };
                let base = reference;
                let mut n = 1.0;
                for t in t0..=t1 {
                    loop {
                        let level = base + sign * n * theta;
                        // Reached strictly before t + 1, or exactly at the end.
                        let hit = if t == t1 {
                            if up { b >= level } else { b <= level }
                        } else if up {
                            at(t + 1) > level
                        } else {
                            at(t + 1) < level
                        };
                        if !hit {
                            break;
                        }
                        let blocked = last.is_some_and(|s| t <= s || t - s < p.refractory_us);
                        if !blocked {
                            out.push((t, y as u16, x as u16, pol));
                            last = Some(t);
                        }
                        reference = level;
                        n += 1.0;
                    }
                }
            }
        }
    }
    out.sort();
    out
}

pub fn keys(stream: &EventStream) -> Vec<(u64, u16, u16, i8)> {
    stream.events.iter().map(|e| e.key()).collect()
}

/// Random sorted stream of `n` distinct events.
pub fn random_stream(rng: &mut SplitMix64, width: usize, height: usize, n: usize) -> EventStream {
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        let t = rng.below(2_000_000);
        let x = rng.below(width as u64) as u16;
        let y = rng.below(height as u64) as u16;
        let p: i8 = if rng.below(2) == 0 { -1 } else { 1 };
        set.insert((t, y, x, p));
    }
    let events = set
        .into_iter()
        .map(|(t, y, x, p)| Event::new(t, x, y, Polarity::from_i8(p).unwrap()))
        .collect();
    EventStream::new(width, height, events)
}

/// Brute-force single-class AP: replays the greedy matching one pick at a
/// time and integrates the precision envelope at every recall step.
pub fn brute_force_map(images: &[ImageEval], thr: f64) -> f64 {
    let mut order: Vec<&ImageEval> = images.iter().collect();
    order.sort_by(|a, b| a.name.cmp(&b.name));
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut total_gt = 0;
    for (ii, img) in order.iter().enumerate() {
        total_gt += img.ground_truths.len();
        let mut used_det = vec![false; img.detections.len()];
        let mut used_gt = vec![false; img.ground_truths.len()];
        for _ in 0..img.detections.len() {
            // Highest remaining score, earliest index on ties.
            let mut pick = None;
            for (di, d) in img.detections.iter().enumerate() {
                if used_det[di] {
                    continue;
                }
                match pick {
                    None => pick = Some(di),
                    Some(pj) if d.score > img.detections[pj].score => pick = Some(di),
                    _ => {}
                }
            }
            let di = pick.unwrap();
            used_det[di] = true;
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in img.ground_truths.iter().enumerate() {
                if used_gt[gi] {
                    continue;
                }
                let v = iou(&img.detections[di].bbox, g);
                if best.is_none() || v > best.unwrap().1 {
                    best = Some((gi, v));
                }
            }
            let tp = match best {
                Some((gi, v)) if v >= thr => {
                    used_gt[gi] = true;
                    true
                }
                _ => false,
            };
            ranked.push((img.detections[di].score, ii, di, tp));
        }
    }
    if total_gt == 0 {
        return 0.0;
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let precision: Vec<f64> = ranked
        .iter()
        .scan(0usize, |tp, r| {
            *tp += r.3 as usize;
            Some(*tp)
        })
        .enumerate()
        .map(|(i, tp)| tp as f64 / (i + 1) as f64)
        .collect();
    let mut ap = 0.0;
    for (k, r) in ranked.iter().enumerate() {
        if r.3 {
            let env = precision[k..].iter().cloned().fold(0.0, f64::max);
            ap += env / total_gt as f64;
        }
    }
    ap
}

pub fn random_box(rng: &mut SplitMix64, span: i64) -> BBox {
    let x = rng.below(span as u64) as i64;
    let y = rng.below(span as u64) as i64;
    let w = 1 + rng.below(span as u64 / 2) as i64;
    let h = 1 + rng.below(span as u64 / 2) as i64;
    BBox::new(x, y, x + w, y + h)
}

/// A few images with at most 4 detections and 3 ground truths each, boxes
/// crowded into a small canvas so overlaps are common. Scores come from a
/// coarse grid so ties occur.
pub fn random_eval_instance(rng: &mut SplitMix64) -> Vec<ImageEval> {
    let n_img = 1 + rng.below(3) as usize;
    (0..n_img)
        .map(|i| {
            let gts: Vec<BBox> = (0..rng.below(4)).map(|_| random_box(rng, 12)).collect();
            let dets = (0..rng.below(5))
                .map(|_| {
                    let bbox = if !gts.is_empty() && rng.below(2) == 0 {
                        let g = gts[rng.below(gts.len() as u64) as usize];
                        let dx = rng.below(3) as i64 - 1;
                        let dy = rng.below(3) as i64 - 1;
                        g.translated(dx, dy)
                    } else {
                        random_box(rng, 12)
                    };
                    Detection {
                        bbox,
                        score: (1 + rng.below(5)) as f64 / 5.0,
                        class_id: 0,
                    }
                })
                .collect();
            ImageEval {
                name: format!("img{}", n_img - i),
                detections: dets,
                ground_truths: gts,
            }
        })
        .collect()
}

pub fn desk_config_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.conf")
}
