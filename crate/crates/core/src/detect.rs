//! Downstream perception: YOLO dataset export, an event-density blob
//! detector, and IoU-matched average precision.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::write_pgm8;
use crate::render::GroundTruthBox;
use crate::rng::{stream, SplitMix64};
use crate::streamio::EventFrame;

/// Pixel box, inclusive min and exclusive max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        debug_assert!(x_min < x_max && y_min < y_max, "degenerate box");
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn area(&self) -> i64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }
}

impl From<&GroundTruthBox> for BBox {
    fn from(b: &GroundTruthBox) -> Self {
        BBox::new(b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0);
    let inter = iw * ih;
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

// ---------------------------------------------------------------------------
// YOLO export

/// One image of a YOLO dataset.
#[derive(Debug, Clone)]
pub struct YoloSample {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// 8-bit grayscale, row-major.
    pub image: Vec<u8>,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// `0 cx cy w h`, normalized by the image size, six decimals.
pub fn yolo_label_line(b: &BBox, width: usize, height: usize) -> String {
    let (w, h) = (width as f64, height as f64);
    let cx = (b.x_min + b.x_max) as f64 / 2.0 / w;
    let cy = (b.y_min + b.y_max) as f64 / 2.0 / h;
    let bw = (b.x_max - b.x_min) as f64 / w;
    let bh = (b.y_max - b.y_min) as f64 / h;
    format!("0 {cx:.6} {cy:.6} {bw:.6} {bh:.6}")
}

/// Parses a label line back to pixel-space `(class, cx, cy, w, h)`.
pub fn parse_yolo_line(line: &str, width: usize, height: usize) -> Option<(u32, f64, f64, f64, f64)> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 5 {
        return None;
    }
    let class = f[0].parse().ok()?;
    let v: Vec<f64> = f[1..].iter().map(|s| s.parse().ok()).collect::<Option<_>>()?;
    let (w, h) = (width as f64, height as f64);
    Some((class, v[0] * w, v[1] * h, v[2] * w, v[3] * h))
}

/// Deterministic train/val assignment: a seeded Fisher-Yates shuffle, the
/// first `round(n * ratio)` shuffled entries train.
pub fn split_assignment(n: usize, ratio: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::keyed(seed, stream::SPLIT, 0);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let n_train = ((n as f64) * ratio).round() as usize;
    let mut out = vec![Split::Val; n];
    for &i in &order[..n_train.min(n)] {
        out[i] = Split::Train;
    }
    out
}

/// Writes `images/{name}.pgm`, `labels/{name}.txt` and `manifest.txt`
/// (`name split` per line, in sample order) under `dir`.
pub fn export_yolo(
    dir: &Path,
    samples: &[YoloSample],
    split_ratio: f64,
    seed: u64,
) -> Result<Vec<(String, Split)>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in samples {
        if s.image.len() != s.width * s.height {
            return Err(Error::DimensionMismatch {
                expected: (s.width, s.height),
                actual: (s.image.len(), 1),
            });
        }
        for b in &s.boxes {
            if b.x_min < 0 || b.y_min < 0 || b.x_max > s.width as i64 || b.y_max > s.height as i64 {
                return Err(Error::DimensionMismatch {
                    expected: (s.width, s.height),
                    actual: (b.x_max.max(0) as usize, b.y_max.max(0) as usize),
                });
            }
        }
    }
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let splits = split_assignment(samples.len(), split_ratio, seed);
    let mut manifest = String::new();
    let mut out = Vec::with_capacity(samples.len());
    for (s, split) in samples.iter().zip(splits) {
        let img_path = images.join(format!("{}.pgm", s.name));
        fs::write(&img_path, write_pgm8(s.width, s.height, &s.image))
            .map_err(|e| Error::io(&img_path, e))?;
        let mut text = String::new();
        for b in &s.boxes {
            text.push_str(&yolo_label_line(b, s.width, s.height));
            text.push('\n');
        }
        let lbl_path = labels.join(format!("{}.txt", s.name));
        fs::write(&lbl_path, text).map_err(|e| Error::io(&lbl_path, e))?;
        let _ = writeln!(manifest, "{} {}", s.name, split.as_str());
        out.push((s.name.clone(), split));
    }
    let m = dir.join("manifest.txt");
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Blob detector

/// Thresholds the total-count plane at `density_threshold`, labels
/// 4-connected components and keeps those of at least `min_area` pixels.
///
/// Score is `min(1, mean count / (2 * density_threshold))`; detections come
/// out by descending score, ties in raster order of their first pixel.
pub fn blob_detect(frame: &EventFrame, density_threshold: f64, min_area: usize) -> Vec<Detection> {
    let (w, h) = (frame.width, frame.height);
    let on: Vec<bool> = frame
        .count
        .iter()
        .map(|&c| c as f64 >= density_threshold)
        .collect();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut dets = Vec::new();
    for start in 0..w * h {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut area, mut total) = (0usize, 0u64);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            area += 1;
            total += frame.count[i] as u64;
            let mut visit = |j: usize| {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area >= min_area {
            let mean = total as f64 / area as f64;
            dets.push(Detection {
                bbox: BBox::new(x0 as i64, y0 as i64, x1 as i64, y1 as i64),
                score: (mean / (2.0 * density_threshold)).min(1.0),
                class_id: 0,
            });
        }
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets
}

// ---------------------------------------------------------------------------
// Evaluation

/// Detections and ground truth of one image.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub name: String,
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatches {
    pub name: String,
    /// Per detection (in input order): matched ground-truth index, if any.
    pub matched_gt: Vec<Option<usize>>,
    /// Ground-truth indices nobody matched.
    pub missed_gt: Vec<usize>,
}

impl ImageMatches {
    pub fn tp(&self) -> usize {
        self.matched_gt.iter().filter(|m| m.is_some()).count()
    }

    pub fn fp(&self) -> usize {
        self.matched_gt.len() - self.tp()
    }

    pub fn fn_(&self) -> usize {
        self.missed_gt.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_threshold: f64,
    /// `(class_id, ap)`; a single rock class.
    pub ap_per_class: Vec<(u32, f64)>,
    pub map: f64,
    /// Sorted by image name.
    pub images: Vec<ImageMatches>,
}

/// Greedy matching inside one image: detections by descending score (input
/// order on ties) each take the unmatched ground truth of highest IoU
/// (lowest index on ties), counting as TP when that IoU reaches the
/// threshold.
pub fn match_image(img: &ImageEval, iou_threshold: f64) -> ImageMatches {
    let mut order: Vec<usize> = (0..img.detections.len()).collect();
    order.sort_by(|&a, &b| {
        img.detections[b]
            .score
            .total_cmp(&img.detections[a].score)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; img.ground_truths.len()];
    let mut matched_gt = vec![None; img.detections.len()];
    for di in order {
        let d = &img.detections[di].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in img.ground_truths.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(d, g);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            if v >= iou_threshold {
                taken[gi] = true;
                matched_gt[di] = Some(gi);
            }
        }
    }
    ImageMatches {
        name: img.name.clone(),
        matched_gt,
        missed_gt: (0..taken.len()).filter(|&g| !taken[g]).collect(),
    }
}

/// All-point interpolated AP from detections `(score, is_tp)` already in
/// ranking order.
pub fn average_precision(ranked_tp: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked_tp.len());
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / total_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Precision envelope, right to left.
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Single-class AP over all images, pooled. Images are processed in name
/// order; detections of equal score rank by (image, detection index).
pub fn evaluate_map(images: &[ImageEval], iou_threshold: f64) -> EvalReport {
    let mut sorted: Vec<&ImageEval> = images.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let matches: Vec<ImageMatches> = sorted.iter().map(|img| match_image(img, iou_threshold)).collect();

    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut total_gt = 0;
    for (ii, (img, m)) in sorted.iter().zip(&matches).enumerate() {
        total_gt += img.ground_truths.len();
        for (di, d) in img.detections.iter().enumerate() {
            ranked.push((d.score, ii, di, m.matched_gt[di].is_some()));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
    let ap = average_precision(&flags, total_gt);
    EvalReport {
        iou_threshold,
        ap_per_class: vec![(0, ap)],
        map: ap,
        images: matches,
    }
}

impl EvalReport {
    /// `class ap` lines, a `map value` line, then `name tp fp fn` per image.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# iou_threshold {}", self.iou_threshold);
        let _ = writeln!(out, "# class ap");
        for (c, ap) in &self.ap_per_class {
            let _ = writeln!(out, "{c} {ap:.6}");
        }
        let _ = writeln!(out, "map {:.6}", self.map);
        let _ = writeln!(out, "# name tp fp fn");
        for m in &self.images {
            let _ = writeln!(out, "{} {} {} {}", m.name, m.tp(), m.fp(), m.fn_());
        }
        out
    }
}

/// `name class score x_min y_min x_max y_max`, one detection per line.
pub fn detections_to_text(images: &[ImageEval]) -> String {
    let mut out = String::from("# name class score x_min y_min x_max y_max\n");
    for img in images {
        for d in &img.detections {
            let b = d.bbox;
            let _ = writeln!(
                out,
                "{} {} {:.6} {} {} {} {}",
                img.name, d.class_id, d.score, b.x_min, b.y_min, b.x_max, b.y_max
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0, 0, 2, 2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5, 5, 6, 6)), 0.0);
        assert_eq!(iou(&a, &BBox::new(2, 0, 4, 2)), 0.0);
        assert!((iou(&a, &BBox::new(1, 0, 3, 2)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn label_line_example() {
        assert_eq!(
            yolo_label_line(&BBox::new(80, 60, 160, 120), 320, 240),
            "0 0.375000 0.375000 0.250000 0.250000"
        );
        let (c, cx, cy, w, h) =
            parse_yolo_line("0 0.375000 0.375000 0.250000 0.250000", 320, 240).unwrap();
        assert_eq!((c, cx, cy, w, h), (0, 120.0, 90.0, 80.0, 60.0));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_assignment(10, 0.5, 3);
        assert_eq!(a, split_assignment(10, 0.5, 3));
        assert_eq!(a.iter().filter(|&&s| s == Split::Train).count(), 5);
        assert!(split_assignment(10, 1.0, 3).iter().all(|&s| s == Split::Train));
        assert!(split_assignment(10, 0.0, 3).iter().all(|&s| s == Split::Val));
    }

    #[test]
    fn export_writes_layout() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<YoloSample> = (0..10)
            .map(|i| YoloSample {
                name: format!("frame_{i:04}"),
                width: 320,
                height: 240,
                image: vec![128; 320 * 240],
                boxes: if i == 0 {
                    vec![]
                } else {
                    vec![BBox::new(80, 60, 160, 120)]
                },
            })
            .collect();
        let m = export_yolo(dir.path(), &samples, 0.5, 1).unwrap();
        assert_eq!(m, export_yolo(dir.path(), &samples, 0.5, 1).unwrap());
        let empty = fs::read_to_string(dir.path().join("labels/frame_0000.txt")).unwrap();
        assert!(empty.is_empty());
        let one = fs::read_to_string(dir.path().join("labels/frame_0003.txt")).unwrap();
        assert_eq!(one, "0 0.375000 0.375000 0.250000 0.250000\n");
        assert!(dir.path().join("images/frame_0003.pgm").exists());
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 10);
        assert_eq!(manifest.matches(" train").count(), 5);

        assert!(matches!(export_yolo(dir.path(), &[], 0.5, 1), Err(Error::EmptyDataset)));
        let mut bad = samples[1].clone();
        bad.boxes = vec![BBox::new(300, 0, 330, 10)];
        assert!(matches!(
            export_yolo(dir.path(), &[bad], 0.5, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn frame_with(w: usize, h: usize, blocks: &[(usize, usize, usize, usize, u32)]) -> EventFrame {
        let mut f = EventFrame::empty(w, h, 0, 1);
        for &(x0, y0, x1, y1, c) in blocks {
            for y in y0..y1 {
                for x in x0..x1 {
                    f.count[y * w + x] = c;
                }
            }
        }
        f
    }

    #[test]
    fn blob_examples() {
        assert!(blob_detect(&EventFrame::empty(32, 32, 0, 1), 1.0, 16).is_empty());
        let f = frame_with(32, 32, &[(5, 7, 15, 17, 5)]);
        let d = blob_detect(&f, 1.0, 16);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(5, 7, 15, 17));
        assert_eq!(d[0].score, 1.0);
        let f = frame_with(32, 32, &[(0, 0, 5, 5, 1), (6, 0, 11, 5, 3)]);
        let d = blob_detect(&f, 1.0, 16);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].bbox, BBox::new(6, 0, 11, 5));
        assert_eq!(d[1].score, 0.5);
        // Diagonal neighbours are not 4-connected.
        let f = frame_with(8, 8, &[(0, 0, 1, 1, 2), (1, 1, 2, 2, 2)]);
        assert_eq!(blob_detect(&f, 1.0, 1).len(), 2);
    }

    fn det(b: BBox, score: f64) -> Detection {
        Detection {
            bbox: b,
            score,
            class_id: 0,
        }
    }

    #[test]
    fn map_hand_traced_cases() {
        let gt = vec![BBox::new(0, 0, 10, 10), BBox::new(20, 20, 30, 30)];
        let perfect = ImageEval {
            name: "a".into(),
            detections: gt.iter().map(|&b| det(b, 1.0)).collect(),
            ground_truths: gt.clone(),
        };
        assert_eq!(evaluate_map(&[perfect], 0.5).map, 1.0);
        let none = ImageEval {
            name: "a".into(),
            detections: vec![],
            ground_truths: gt.clone(),
        };
        let r = evaluate_map(&[none], 0.5);
        assert_eq!(r.map, 0.0);
        assert_eq!(r.images[0].fn_(), 2);

        // IoU 0.6: (0,0,10,10) vs (0,0,10,6) is 60/100.
        let g = BBox::new(0, 0, 10, 10);
        let hit = BBox::new(0, 0, 10, 6);
        assert!((iou(&hit, &g) - 0.6).abs() < 1e-12);
        let miss = BBox::new(50, 50, 60, 60);
        let img = |s_hit: f64, s_miss: f64| ImageEval {
            name: "a".into(),
            detections: vec![det(hit, s_hit), det(miss, s_miss)],
            ground_truths: vec![g],
        };
        assert_eq!(evaluate_map(&[img(0.9, 0.8)], 0.5).map, 1.0);
        assert_eq!(evaluate_map(&[img(0.8, 0.9)], 0.5).map, 0.5);
    }

    #[test]
    fn report_text() {
        let r = evaluate_map(
            &[ImageEval {
                name: "frame_0001".into(),
                detections: vec![det(BBox::new(0, 0, 4, 4), 0.7)],
                ground_truths: vec![BBox::new(0, 0, 4, 4), BBox::new(9, 9, 12, 12)],
            }],
            0.5,
        );
        let text = r.to_text();
        assert!(text.contains("\n0 0.500000\n"));
        assert!(text.contains("map 0.500000\n"));
        assert!(text.contains("frame_0001 1 0 1\n"));
    }
}
