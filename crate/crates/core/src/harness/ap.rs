//! Average precision at IoU 0.5 with all-point interpolation.

use std::collections::BTreeSet;

use crate::estimation::Detection;
use crate::geometry::BoxCorners;

pub const AP_IOU: f64 = 0.5;

/// One ground-truth object of an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BoxCorners,
    pub category: usize,
}

/// Area under the precision envelope of a ranked list of hits.
fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP50 averaged over categories that have at least one ground truth.
/// Detections of each category are ranked by score across all images and
/// matched greedily to the best-overlapping ground truth of their image.
/// Returns `None` when there are no ground truths at all.
pub fn evaluate_ap50(detections: &[Vec<Detection>], gts: &[Vec<GroundTruth>]) -> Option<f64> {
    let categories: BTreeSet<usize> = gts.iter().flatten().map(|g| g.category).collect();
    if categories.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &c in &categories {
        let num_gt = gts.iter().flatten().filter(|g| g.category == c).count();
        let mut ranked: Vec<(usize, &Detection)> = detections
            .iter()
            .enumerate()
            .flat_map(|(img, ds)| ds.iter().filter(|d| d.category == c).map(move |d| (img, d)))
            .collect();
        ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
        let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let hits: Vec<bool> = ranked
            .iter()
            .map(|(img, d)| {
                let Some(image_gts) = gts.get(*img) else { return false };
                let best = image_gts
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.category == c)
                    .map(|(k, g)| (k, d.bbox.iou(&g.bbox)))
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                match best {
                    Some((k, v)) if v >= AP_IOU && !matched[*img][k] => {
                        matched[*img][k] = true;
                        true
                    }
                    _ => false,
                }
            })
            .collect();
        total += average_precision(&hits, num_gt);
    }
    Some(total / categories.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: [f64; 4], score: f64) -> Detection {
        Detection {
            bbox: BoxCorners::from_array(b).unwrap(),
            score,
            category: 1,
            variance: [1.0; 4],
        }
    }

    fn gt(b: [f64; 4]) -> GroundTruth {
        GroundTruth {
            bbox: BoxCorners::from_array(b).unwrap(),
            category: 1,
        }
    }

    #[test]
    fn ap_examples() {
        let g = vec![vec![gt([0., 0., 10., 10.])]];
        assert_eq!(evaluate_ap50(&[vec![det([0., 0., 10., 10.], 0.9)]], &g), Some(1.0));
        let tp_then_fp = vec![vec![det([0., 0., 10., 10.], 0.9), det([50., 50., 60., 60.], 0.3)]];
        assert_eq!(evaluate_ap50(&tp_then_fp, &g), Some(1.0));
        let disjoint = vec![vec![det([50., 50., 60., 60.], 0.9), det([70., 70., 80., 80.], 0.5)]];
        assert_eq!(evaluate_ap50(&disjoint, &g), Some(0.0));
        assert_eq!(evaluate_ap50(&[vec![]], &[vec![]]), None);
    }

    #[test]
    fn fp_then_tp_halves_precision() {
        let g = vec![vec![gt([0., 0., 10., 10.])]];
        let d = vec![vec![det([50., 50., 60., 60.], 0.9), det([0., 0., 10., 10.], 0.3)]];
        assert_eq!(evaluate_ap50(&d, &g), Some(0.5));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = vec![vec![gt([0., 0., 10., 10.]), gt([20., 0., 30., 10.])]];
        let d = vec![vec![
            det([0., 0., 10., 10.], 0.9),
            det([0., 0., 10., 10.], 0.8),
            det([20., 0., 30., 10.], 0.7),
        ]];
        // precision after ranks: 1, 1/2, 2/3; envelope 1, 2/3, 2/3; recall steps 0.5, 0.5, 1
        let ap = evaluate_ap50(&d, &g).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn categories_are_averaged() {
        let mut g2 = gt([20., 0., 30., 10.]);
        g2.category = 2;
        let g = vec![vec![gt([0., 0., 10., 10.]), g2]];
        let d = vec![vec![det([0., 0., 10., 10.], 0.9)]];
        assert_eq!(evaluate_ap50(&d, &g), Some(0.5));
    }
}
