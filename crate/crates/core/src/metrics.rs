//! Hard label extraction, overlap metrics and overlay rendering.

use image::{Rgb, RgbImage};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageGrid, LabelMap, SoftLabelField};

/// Overlay colors for classes `1..`, cycled every ten classes.
pub const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Largest class count accepted by best-permutation matching.
pub const MAX_PERMUTATION_CLASSES: usize = 6;

pub fn palette_color(class: u8) -> Option<[u8; 3]> {
    (class > 0).then(|| PALETTE[(class as usize - 1) % PALETTE.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMatching {
    Fixed,
    BestPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub per_class_dice: Vec<f64>,
    pub per_class_iou: Vec<f64>,
    pub pixel_accuracy: f64,
    /// `confusion[t][p]`: pixels of true class `t` predicted as `p` (after matching).
    pub confusion: Vec<Vec<u64>>,
    /// `permutation[l]` is the class predicted label `l` was mapped to.
    pub permutation: Vec<usize>,
    pub mean_dice: f64,
}

/// Label each pixel with the argmax over `(1 - sum u, u_1, ..., u_K)`, ties to the lowest index.
pub fn extract_labels(u: &SoftLabelField) -> LabelMap {
    let (k, h, w) = u.dim();
    let values = u.values();
    let residual = 1.0 - values.sum_axis(Axis(0));
    let labels = Array2::from_shape_fn((h, w), |(i, j)| {
        let mut best = 0usize;
        let mut best_val = residual[[i, j]];
        for c in 0..k {
            let v = values[[c, i, j]];
            if v > best_val {
                best_val = v;
                best = c + 1;
            }
        }
        best as u8
    });
    LabelMap::new(labels, k + 1).expect("argmax stays below K + 1")
}

fn confusion_matrix(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.labels().iter().zip(truth.labels().iter()) {
        m[t as usize][p as usize] += 1;
    }
    m
}

fn permuted_scores(confusion: &[Vec<u64>], perm: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = confusion.len();
    let mut dice = Vec::with_capacity(n);
    let mut iou = Vec::with_capacity(n);
    for c in 0..n {
        let truth_count: u64 = confusion[c].iter().sum();
        let (mut pred_count, mut inter) = (0u64, 0u64);
        for (l, &target) in perm.iter().enumerate() {
            if target == c {
                pred_count += (0..n).map(|t| confusion[t][l]).sum::<u64>();
                inter += confusion[c][l];
            }
        }
        let union = truth_count + pred_count - inter;
        if truth_count + pred_count == 0 {
            dice.push(1.0);
            iou.push(1.0);
        } else {
            dice.push(2.0 * inter as f64 / (truth_count + pred_count) as f64);
            iou.push(inter as f64 / union as f64);
        }
    }
    (dice, iou)
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    // Heap's algorithm would be shorter but lexicographic order gives a stable tie-break.
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        f(&perm);
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).expect("pivot exists");
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Dice, IoU, accuracy and confusion of `pred` against `truth`.
///
/// With [`ClassMatching::BestPermutation`] predicted labels are relabeled by
/// the permutation maximizing mean Dice (lexicographically first on ties).
pub fn evaluate(pred: &LabelMap, truth: &LabelMap, matching: ClassMatching) -> Result<EvaluationReport> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let classes = pred.classes().max(truth.classes());
    let raw = confusion_matrix(pred, truth, classes);

    let permutation: Vec<usize> = match matching {
        ClassMatching::Fixed => (0..classes).collect(),
        ClassMatching::BestPermutation => {
            if classes > MAX_PERMUTATION_CLASSES {
                return Err(Error::validation(format!(
                    "best-permutation matching supports at most {MAX_PERMUTATION_CLASSES} classes, got {classes}"
                )));
            }
            let mut best: Option<(f64, Vec<usize>)> = None;
            for_each_permutation(classes, |perm| {
                let (dice, _) = permuted_scores(&raw, perm);
                let mean = dice.iter().sum::<f64>() / classes as f64;
                if best.as_ref().map_or(true, |(m, _)| mean > *m) {
                    best = Some((mean, perm.to_vec()));
                }
            });
            best.expect("at least one permutation").1
        }
    };

    let (per_class_dice, per_class_iou) = permuted_scores(&raw, &permutation);
    let mut confusion = vec![vec![0u64; classes]; classes];
    for t in 0..classes {
        for (l, &target) in permutation.iter().enumerate() {
            confusion[t][target] += raw[t][l];
        }
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mean_dice = per_class_dice.iter().sum::<f64>() / classes as f64;
    Ok(EvaluationReport {
        per_class_dice,
        per_class_iou,
        pixel_accuracy: if total == 0 { 1.0 } else { trace as f64 / total as f64 },
        confusion,
        permutation,
        mean_dice,
    })
}

fn is_boundary(labels: &Array2<u8>, i: usize, j: usize) -> bool {
    let (h, w) = labels.dim();
    let l = labels[[i, j]];
    (i > 0 && labels[[i - 1, j]] != l)
        || (i + 1 < h && labels[[i + 1, j]] != l)
        || (j > 0 && labels[[i, j - 1]] != l)
        || (j + 1 < w && labels[[i, j + 1]] != l)
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Gray image tinted at 50% with each class color; foreground pixels with a
/// differently labeled 4-neighbor are painted in the full class color.
/// Class 0 is left untinted.
pub fn render_overlay(f: &ImageGrid, labels: &LabelMap) -> Result<RgbImage> {
    if f.dim() != labels.dim() {
        return Err(Error::shape(format!(
            "image {:?} vs labels {:?}",
            f.dim(),
            labels.dim()
        )));
    }
    let (h, w) = f.dim();
    let lab = labels.labels();
    let mut out = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let gray = f.data()[[i, j]].clamp(0.0, 1.0) * 255.0;
            let px = match palette_color(lab[[i, j]]) {
                None => {
                    let g = to_byte(gray);
                    [g, g, g]
                }
                Some(color) if is_boundary(lab, i, j) => color,
                Some(color) => color.map(|c| to_byte(0.5 * gray + 0.5 * c as f64)),
            };
            out.put_pixel(j as u32, i as u32, Rgb(px));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub label: u8,
    pub area: usize,
}

/// 4-connected components of equal label, largest first.
pub fn connected_components(labels: &LabelMap) -> Vec<Component> {
    let lab = labels.labels();
    let (h, w) = lab.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    for si in 0..h {
        for sj in 0..w {
            if seen[[si, sj]] {
                continue;
            }
            let label = lab[[si, sj]];
            let mut area = 0;
            seen[[si, sj]] = true;
            stack.push((si, sj));
            while let Some((i, j)) = stack.pop() {
                area += 1;
                let mut visit = |a: usize, b: usize| {
                    if !seen[[a, b]] && lab[[a, b]] == label {
                        seen[[a, b]] = true;
                        stack.push((a, b));
                    }
                };
                if i > 0 {
                    visit(i - 1, j);
                }
                if i + 1 < h {
                    visit(i + 1, j);
                }
                if j > 0 {
                    visit(i, j - 1);
                }
                if j + 1 < w {
                    visit(i, j + 1);
                }
            }
            comps.push(Component { label, area });
        }
    }
    comps.sort_by(|a, b| b.area.cmp(&a.area));
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};
    use proptest::prelude::*;

    fn pixel_label(values: &[f64]) -> u8 {
        let u = Array3::from_shape_vec((values.len(), 1, 1), values.to_vec()).unwrap();
        extract_labels(&SoftLabelField::new(u).unwrap()).get(0, 0)
    }

    #[test]
    fn extraction_examples() {
        assert_eq!(pixel_label(&[0.7, 0.1, 0.1]), 1);
        assert_eq!(pixel_label(&[0.2, 0.2, 0.2]), 0);
        assert_eq!(pixel_label(&[0.5, 0.5, 0.0]), 1);
    }

    fn row(labels: &[u8]) -> LabelMap {
        LabelMap::from_labels(Array2::from_shape_vec((1, labels.len()), labels.to_vec()).unwrap())
    }

    #[test]
    fn identical_maps_score_one() {
        let m = LabelMap::from_labels(arr2(&[[0, 1, 2], [2, 1, 0]]));
        let r = evaluate(&m, &m, ClassMatching::Fixed).unwrap();
        assert!(r.per_class_dice.iter().all(|&d| d == 1.0));
        assert_eq!(r.pixel_accuracy, 1.0);
    }

    #[test]
    fn disjoint_masks_have_zero_dice() {
        let r = evaluate(&row(&[1, 1, 0, 0]), &row(&[0, 0, 1, 1]), ClassMatching::Fixed).unwrap();
        assert_eq!(r.per_class_dice[1], 0.0);
        assert_eq!(r.pixel_accuracy, 0.0);
        let best = evaluate(&row(&[1, 1, 0, 0]), &row(&[0, 0, 1, 1]), ClassMatching::BestPermutation).unwrap();
        assert_eq!(best.per_class_dice, vec![1.0, 1.0]);
        assert_eq!(best.permutation, vec![1, 0]);
    }

    #[test]
    fn four_pixel_hand_count() {
        let r = evaluate(&row(&[0, 0, 1, 1]), &row(&[0, 1, 1, 1]), ClassMatching::Fixed).unwrap();
        assert!((r.per_class_dice[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class_dice[1] - 4.0 / 5.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 0], vec![1, 2]]);
        assert_eq!(r.pixel_accuracy, 0.75);
    }

    #[test]
    fn empty_class_counts_as_perfect() {
        let pred = LabelMap::new(arr2(&[[1u8, 1]]), 3).unwrap();
        let r = evaluate(&pred, &pred, ClassMatching::Fixed).unwrap();
        assert_eq!(r.per_class_dice, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            evaluate(&row(&[0, 1]), &row(&[0, 1, 1]), ClassMatching::Fixed),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn permutation_enumeration_is_complete() {
        let mut count = 0;
        for_each_permutation(4, |_| count += 1);
        assert_eq!(count, 24);
    }

    #[test]
    fn overlay_background_is_gray() {
        let f = ImageGrid::from_fn(3, 4, |i, j| (i * 4 + j) as f64 / 11.0).unwrap();
        let labels = LabelMap::new(Array2::zeros((3, 4)), 3).unwrap();
        let img = render_overlay(&f, &labels).unwrap();
        for (x, y, p) in img.enumerate_pixels() {
            let g = (f.data()[[y as usize, x as usize]] * 255.0).round() as u8;
            assert_eq!(p.0, [g, g, g]);
        }
    }

    #[test]
    fn overlay_uniform_tint_and_boundaries() {
        let f = ImageGrid::from_fn(4, 4, |_, _| 0.4).unwrap();
        let all_one = LabelMap::new(Array2::from_elem((4, 4), 1u8), 2).unwrap();
        let img = render_overlay(&f, &all_one).unwrap();
        let expect = PALETTE[0].map(|c| (0.5 * 0.4 * 255.0 + 0.5 * c as f64).round() as u8);
        assert!(img.pixels().all(|p| p.0 == expect));

        let split = LabelMap::new(Array2::from_shape_fn((4, 4), |(_, j)| if j < 2 { 1 } else { 2 }), 3).unwrap();
        let img = render_overlay(&f, &split).unwrap();
        assert_eq!(img.get_pixel(1, 0).0, PALETTE[0]);
        assert_eq!(img.get_pixel(2, 3).0, PALETTE[1]);
        assert_ne!(img.get_pixel(0, 0).0, PALETTE[0]);
    }

    #[test]
    fn components_counts() {
        let m = LabelMap::from_labels(arr2(&[[1, 1, 0], [0, 0, 0], [2, 0, 1]]));
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 4);
        assert_eq!(comps[0], Component { label: 0, area: 5 });
        assert_eq!(comps.iter().map(|c| c.area).sum::<usize>(), 9);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_map(v in proptest::collection::vec(0.0f64..0.25, 1..5)) {
            // compare against the same candidates passed through t -> t^3 + 2t
            let residual = 1.0 - v.iter().sum::<f64>();
            let mut cands = vec![residual];
            cands.extend(&v);
            let g = |t: f64| t * t * t + 2.0 * t;
            let mapped: Vec<f64> = cands.iter().map(|&t| g(t)).collect();
            let argmax = |s: &[f64]| s.iter().enumerate().fold(0, |b, (i, x)| if *x > s[b] { i } else { b });
            prop_assert_eq!(pixel_label(&v) as usize, argmax(&mapped));
        }

        #[test]
        fn best_permutation_ignores_relabeling(
            pred in proptest::collection::vec(0u8..3, 12),
            truth in proptest::collection::vec(0u8..3, 12),
            perm_idx in 0usize..6,
        ) {
            let perms = [[0u8, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_idx];
            let relabeled: Vec<u8> = pred.iter().map(|&l| p[l as usize]).collect();
            let t = LabelMap::new(Array2::from_shape_vec((3, 4), truth).unwrap(), 3).unwrap();
            let a = LabelMap::new(Array2::from_shape_vec((3, 4), pred).unwrap(), 3).unwrap();
            let b = LabelMap::new(Array2::from_shape_vec((3, 4), relabeled).unwrap(), 3).unwrap();
            let ra = evaluate(&a, &t, ClassMatching::BestPermutation).unwrap();
            let rb = evaluate(&b, &t, ClassMatching::BestPermutation).unwrap();
            prop_assert!((ra.mean_dice - rb.mean_dice).abs() < 1e-12);
            prop_assert_eq!(ra.pixel_accuracy, rb.pixel_accuracy);
        }

        #[test]
        fn iou_dice_relation(
            pred in proptest::collection::vec(0u8..4, 20),
            truth in proptest::collection::vec(0u8..4, 20),
        ) {
            let a = LabelMap::new(Array2::from_shape_vec((4, 5), pred).unwrap(), 4).unwrap();
            let t = LabelMap::new(Array2::from_shape_vec((4, 5), truth).unwrap(), 4).unwrap();
            let r = evaluate(&a, &t, ClassMatching::Fixed).unwrap();
            for (d, i) in r.per_class_dice.iter().zip(&r.per_class_iou) {
                prop_assert!((i - d / (2.0 - d)).abs() < 1e-12);
            }
            let row_sums: Vec<u64> = r.confusion.iter().map(|row| row.iter().sum()).collect();
            for c in 0..4 {
                let count = t.labels().iter().filter(|&&l| l as usize == c).count() as u64;
                prop_assert_eq!(row_sums[c], count);
            }
        }
    }
}
