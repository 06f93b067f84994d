mod common;

use common::*;
use erebus::detect::{average_precision, blob_detect, evaluate_map, iou, parse_yolo_line, yolo_label_line, BBox};
use erebus::events::{frames_to_events, pixel_crossings, DvsParams, PixelState, Polarity};
use erebus::par;
use erebus::rng::SplitMix64;
use erebus::scene::{advect_particles, generate_scene, SceneConfig};
use erebus::streamio::{accumulate, read_binary, read_csv, write_binary, write_csv, EventFrame};
use proptest::prelude::*;

fn small_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        seed,
        rock_count: 3,
        particle_count: 200,
        width: 32,
        height: 24,
        ..SceneConfig::default()
    }
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0i64..100, 0i64..100, 1i64..60, 1i64..60).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn pixels(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..4.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn advection_composes(seed in 0u64..1000, a in 0.0f64..30.0, b in 0.0f64..30.0) {
        let scene = generate_scene(&small_scene(seed)).unwrap();
        let two = advect_particles(&advect_particles(&scene, a), b);
        let one = advect_particles(&scene, a + b);
        let size = scene.config.volume_size();
        for (p, q) in two.particles.iter().zip(&one.particles) {
            for ((u, v), s) in p.position.to_array().iter().zip(q.position.to_array()).zip(size.to_array()) {
                let d = (u - v).abs();
                prop_assert!(d.min(s - d) < 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn codecs_roundtrip(seed: u64, n in 0usize..300) {
        let s = random_stream(&mut SplitMix64::new(seed), 64, 48, n);
        let bin = write_binary(&s);
        prop_assert_eq!(bin.len(), 24 + 16 * n);
        prop_assert_eq!(&read_binary(&bin).unwrap(), &s);
        prop_assert_eq!(&read_csv(&write_csv(&s), 64, 48).unwrap(), &s);
    }

    #[test]
    fn accumulated_counts_match_window(seed: u64, lo in 0u64..1_000_000, len in 1u64..1_000_000) {
        let s = random_stream(&mut SplitMix64::new(seed), 16, 16, 200);
        let f = accumulate(&s, lo, lo + len);
        let inside = s.events.iter().filter(|e| e.t >= lo && e.t < lo + len).count();
        prop_assert_eq!(f.count.iter().sum::<u32>() as usize, inside);
        for (c, v) in f.count.iter().zip(&f.signed) {
            prop_assert!(v.unsigned_abs() <= *c);
        }
    }

    #[test]
    fn crossing_count_is_floor(base in -5.0f64..0.0, delta in -3.0f64..3.0, theta in 0.05f64..0.5) {
        let p = DvsParams { theta_on: theta, theta_off: theta, refractory_us: 0, ..DvsParams::default() };
        let (ev, st) = pixel_crossings(base, base + delta, PixelState::new(base), 0, 1_000_000, &p);
        let want = (delta.abs() / theta).floor() as usize;
        // Float rounding may move a near-exact multiple by one level.
        prop_assert!(ev.len().abs_diff(want) <= 1, "{} vs {want}", ev.len());
        prop_assert!((st.ref_level - (base + delta)).abs() < theta + 1e-9);
        let pol = if delta >= 0.0 { Polarity::On } else { Polarity::Off };
        prop_assert!(ev.iter().all(|e| e.polarity == pol));
        prop_assert!(ev.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn matches_microsecond_oracle(a in pixels(9), b in pixels(9), c in pixels(9),
                                  t1 in 200u64..3000, t2 in 200u64..3000,
                                  theta in 0.05f64..0.4, refractory in 0u64..400) {
        let p = DvsParams { theta_on: theta, theta_off: theta * 1.3, refractory_us: refractory, ..DvsParams::default() };
        let frames = vec![frame(3, 3, 0, a), frame(3, 3, t1, b), frame(3, 3, t1 + t2, c)];
        let got = keys(&frames_to_events(&frames, &p).unwrap());
        prop_assert_eq!(got, brute_force_events(&frames, &p));
    }

    #[test]
    fn constant_frames_are_silent(a in pixels(16), n in 2usize..6) {
        let frames: Vec<_> = (0..n).map(|k| frame(4, 4, 1000 * k as u64, a.clone())).collect();
        prop_assert!(frames_to_events(&frames, &DvsParams::default()).unwrap().is_empty());
    }

    #[test]
    fn brightening_gives_only_on(a in pixels(16), gain in 1.0f32..50.0) {
        let b: Vec<f32> = a.iter().map(|v| v * gain + 0.01).collect();
        let s = frames_to_events(&[frame(4, 4, 0, a), frame(4, 4, 33_333, b)], &DvsParams::default()).unwrap();
        prop_assert!(s.events.iter().all(|e| e.polarity == Polarity::On));
        prop_assert!(s.is_valid());
    }

    #[test]
    fn refractory_caps_events_per_pair(a in pixels(16), b in pixels(16)) {
        let p = DvsParams { refractory_us: 10_000, ..DvsParams::default() };
        let s = frames_to_events(&[frame(4, 4, 0, a), frame(4, 4, 5_000, b)], &p).unwrap();
        let mut seen = std::collections::HashSet::new();
        for e in &s.events {
            prop_assert!(seen.insert((e.x, e.y)), "pixel fired twice");
        }
    }

    #[test]
    fn worker_count_does_not_change_events(a in pixels(64), b in pixels(64), workers in 2usize..5) {
        let frames = [frame(8, 8, 0, a), frame(8, 8, 10_000, b)];
        let p = DvsParams { refractory_us: 0, ..DvsParams::default() };
        let one = par::with_workers(Some(1), || frames_to_events(&frames, &p).unwrap());
        let many = par::with_workers(Some(workers), || frames_to_events(&frames, &p).unwrap());
        prop_assert_eq!(one, many);
    }

    #[test]
    fn blob_detection_translates(cells in prop::collection::vec((0usize..12, 0usize..12), 1..40),
                                 dx in 0usize..8, dy in 0usize..8) {
        let (w, h) = (24, 24);
        let mut f = EventFrame::empty(w, h, 0, 1);
        let mut g = EventFrame::empty(w, h, 0, 1);
        for (x, y) in cells {
            f.count[y * w + x] += 1;
            g.count[(y + dy) * w + x + dx] += 1;
        }
        let a = blob_detect(&f, 1.0, 1);
        let b = blob_detect(&g, 1.0, 1);
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(p.bbox.translated(dx as i64, dy as i64), q.bbox);
            prop_assert_eq!(p.score, q.score);
        }
    }

    #[test]
    fn yolo_roundtrip(w in 1usize..4000, h in 1usize..4000, fx in 0.0f64..1.0, fy in 0.0f64..1.0,
                      fw in 0.0f64..1.0, fh in 0.0f64..1.0) {
        let x0 = (fx * (w - 1) as f64) as i64;
        let y0 = (fy * (h - 1) as f64) as i64;
        let x1 = x0 + 1 + (fw * (w as i64 - x0 - 1) as f64) as i64;
        let y1 = y0 + 1 + (fh * (h as i64 - y0 - 1) as f64) as i64;
        let (class, cx, cy, bw, bh) = parse_yolo_line(&yolo_label_line(&BBox::new(x0, y0, x1, y1), w, h), w, h).unwrap();
        prop_assert_eq!(class, 0);
        prop_assert!((cx - (x0 + x1) as f64 / 2.0).abs() <= 0.5);
        prop_assert!((cy - (y0 + y1) as f64 / 2.0).abs() <= 0.5);
        prop_assert!((bw - (x1 - x0) as f64).abs() <= 0.5);
        prop_assert!((bh - (y1 - y0) as f64).abs() <= 0.5);
    }

    #[test]
    fn map_matches_brute_force(seed: u64, thr in 0.1f64..0.9) {
        let images = random_eval_instance(&mut SplitMix64::new(seed));
        let got = evaluate_map(&images, thr).map;
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((got - brute_force_map(&images, thr)).abs() < 1e-12);
    }

    #[test]
    fn ap_monotone(flags in prop::collection::vec(any::<bool>(), 0..20), extra_gt in 0usize..4, pos in 0usize..21) {
        let total = flags.iter().filter(|&&f| f).count() + extra_gt + 1;
        let ap = average_precision(&flags, total);
        let mut with_tp = flags.clone();
        with_tp.insert(pos.min(flags.len()), true);
        prop_assert!(average_precision(&with_tp, total) >= ap - 1e-12);
        let mut with_fp = flags.clone();
        with_fp.extend([false, false]);
        prop_assert!(average_precision(&with_fp, total) <= ap + 1e-12);
    }
}
