//! Segmentation evaluation: per-class Dice overlap (percent) and average
//! symmetric surface distance (pixel units).
//!
//! Class 0 is treated as background and excluded from reports and macro
//! averages. Degenerate cases follow fixed rules so they cannot poison
//! averages: a class absent from both masks scores Dice 100 and ASD 0; a
//! class absent from exactly one mask has undefined ASD and is excluded from
//! the ASD average (the report counts such cases).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::LabelMask;

/// Per-class Dice in percent for classes `1..n_c`.
/// Both-empty classes score 100.
pub fn dice_scores(pred: &LabelMask, gt: &LabelMask, n_c: usize) -> Result<Vec<f64>> {
    check_pair(pred, gt, n_c)?;
    let mut inter = vec![0u64; n_c];
    let mut p_count = vec![0u64; n_c];
    let mut g_count = vec![0u64; n_c];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        p_count[p as usize] += 1;
        g_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    Ok((1..n_c)
        .map(|c| {
            let denom = p_count[c] + g_count[c];
            if denom == 0 {
                100.0
            } else {
                100.0 * 2.0 * inter[c] as f64 / denom as f64
            }
        })
        .collect())
}

/// Pixels of class `c` with at least one 4-neighbor outside the class; the
/// image border counts as outside.
pub fn boundary_pixels(mask: &LabelMask, class: u8) -> Vec<(usize, usize)> {
    let (h, w) = mask.shape();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) != class {
                continue;
            }
            let exposed = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || mask.get(y - 1, x) != class
                || mask.get(y + 1, x) != class
                || mask.get(y, x - 1) != class
                || mask.get(y, x + 1) != class;
            if exposed {
                out.push((y, x));
            }
        }
    }
    out
}

/// Average symmetric surface distance between the class-`c` boundaries, in
/// pixel units. `None` when exactly one boundary is empty; 0 when both are.
pub fn asd(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<Option<f64>> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            expected: pred.shape(),
            got: gt.shape(),
        });
    }
    let bp = boundary_pixels(pred, class);
    let bg = boundary_pixels(gt, class);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(Some(0.0)),
        (true, false) | (false, true) => return Ok(None),
        _ => {}
    }
    let sum_nearest = |from: &[(usize, usize)], to: &[(usize, usize)]| -> f64 {
        from.iter()
            .map(|&(y, x)| {
                to.iter()
                    .map(|&(ty, tx)| {
                        let dy = y as f64 - ty as f64;
                        let dx = x as f64 - tx as f64;
                        (dy * dy + dx * dx).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    let total = sum_nearest(&bp, &bg) + sum_nearest(&bg, &bp);
    Ok(Some(total / (bp.len() + bg.len()) as f64))
}

/// Aggregated evaluation over a set of prediction/ground-truth pairs.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub dice_percent: f64,
    /// Mean over the cases where ASD is defined; absent if it never is.
    pub asd_pixels: Option<f64>,
    pub asd_undefined_cases: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub case_count: usize,
    pub per_class: Vec<ClassReport>,
    pub macro_dice_percent: f64,
    /// Mean of the defined per-class ASD means.
    pub macro_asd_pixels: Option<f64>,
}

impl EvalReport {
    /// Aligned text table, one row per foreground class plus the average.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>10} {:>10} {:>14}\n",
            "class", "Dice(%)", "ASD(px)", "ASD undefined"
        ));
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<10} {:>10.2} {:>10} {:>14}\n",
                c.class,
                c.dice_percent,
                c.asd_pixels.map_or("n/a".to_string(), |v| format!("{v:.3}")),
                c.asd_undefined_cases
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>10.2} {:>10}\n",
            "average",
            self.macro_dice_percent,
            self.macro_asd_pixels
                .map_or("n/a".to_string(), |v| format!("{v:.3}")),
        ));
        out
    }
}

/// Evaluates every `(prediction, ground truth)` pair and aggregates per class.
pub fn evaluate_cases(cases: &[(LabelMask, LabelMask)], n_c: usize) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::invalid("no evaluation cases"));
    }
    let mut per_class = Vec::with_capacity(n_c.saturating_sub(1));
    for class in 1..n_c {
        let mut dice_sum = 0.0;
        let mut asd_sum = 0.0;
        let mut asd_defined = 0usize;
        let mut asd_undefined = 0usize;
        for (pred, gt) in cases {
            dice_sum += dice_scores(pred, gt, n_c)?[class - 1];
            match asd(pred, gt, class as u8)? {
                Some(v) => {
                    asd_sum += v;
                    asd_defined += 1;
                }
                None => asd_undefined += 1,
            }
        }
        per_class.push(ClassReport {
            class,
            dice_percent: dice_sum / cases.len() as f64,
            asd_pixels: (asd_defined > 0).then(|| asd_sum / asd_defined as f64),
            asd_undefined_cases: asd_undefined,
        });
    }
    let macro_dice = per_class.iter().map(|c| c.dice_percent).sum::<f64>()
        / per_class.len().max(1) as f64;
    let defined: Vec<f64> = per_class.iter().filter_map(|c| c.asd_pixels).collect();
    let macro_asd = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalReport {
        case_count: cases.len(),
        per_class,
        macro_dice_percent: macro_dice,
        macro_asd_pixels: macro_asd,
    })
}

fn check_pair(pred: &LabelMask, gt: &LabelMask, n_c: usize) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            expected: pred.shape(),
            got: gt.shape(),
        });
    }
    pred.validate_classes(n_c)?;
    gt.validate_classes(n_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(h: usize, w: usize, ones: &[(usize, usize)]) -> LabelMask {
        let mut m = LabelMask::zeros(h, w);
        for &(y, x) in ones {
            m.set(y, x, 1);
        }
        m
    }

    fn block(y0: usize, x0: usize, side: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                v.push((y, x));
            }
        }
        v
    }

    /// Independent exhaustive ASD reference, O(|Bp| * |Bg|).
    fn oracle_asd(pred: &LabelMask, gt: &LabelMask, class: u8) -> Option<f64> {
        let bp = boundary_pixels(pred, class);
        let bg = boundary_pixels(gt, class);
        if bp.is_empty() && bg.is_empty() {
            return Some(0.0);
        }
        if bp.is_empty() || bg.is_empty() {
            return None;
        }
        let nearest = |p: (usize, usize), set: &[(usize, usize)]| {
            set.iter()
                .map(|&(y, x)| {
                    let dy = p.0 as f64 - y as f64;
                    let dx = p.1 as f64 - x as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut forward = 0.0;
        for &p in &bp {
            forward += nearest(p, &bg);
        }
        let mut backward = 0.0;
        for &g in &bg {
            backward += nearest(g, &bp);
        }
        Some((forward + backward) / (bp.len() + bg.len()) as f64)
    }

    #[test]
    fn dice_identities() {
        let a = mask_with(8, 8, &block(2, 2, 3));
        assert_eq!(dice_scores(&a, &a, 2).unwrap(), vec![100.0]);

        let b = mask_with(8, 8, &block(5, 5, 3));
        assert_eq!(dice_scores(&a, &b, 2).unwrap(), vec![0.0]);

        // |P| = |G| = 2 with overlap 1 -> 50%.
        let p = mask_with(4, 4, &[(0, 0), (0, 1)]);
        let g = mask_with(4, 4, &[(0, 1), (0, 2)]);
        assert_eq!(dice_scores(&p, &g, 2).unwrap(), vec![50.0]);
    }

    #[test]
    fn dice_both_empty_is_100() {
        let a = LabelMask::zeros(4, 4);
        assert_eq!(dice_scores(&a, &a, 3).unwrap(), vec![100.0, 100.0]);
    }

    #[test]
    fn dice_is_symmetric() {
        let a = mask_with(8, 8, &block(1, 1, 4));
        let b = mask_with(8, 8, &block(3, 2, 4));
        assert_eq!(dice_scores(&a, &b, 2).unwrap(), dice_scores(&b, &a, 2).unwrap());
    }

    #[test]
    fn boundary_of_full_image_is_border_ring() {
        let m = {
            let mut m = LabelMask::zeros(5, 6);
            for y in 0..5 {
                for x in 0..6 {
                    m.set(y, x, 1);
                }
            }
            m
        };
        let b = boundary_pixels(&m, 1);
        assert_eq!(b.len(), 2 * 5 + 2 * 6 - 4);
        assert!(b.contains(&(0, 0)) && b.contains(&(4, 5)));
        assert!(!b.contains(&(2, 2)));
    }

    #[test]
    fn boundary_of_single_pixel_is_itself() {
        let m = mask_with(5, 5, &[(2, 3)]);
        assert_eq!(boundary_pixels(&m, 1), vec![(2, 3)]);
    }

    #[test]
    fn boundary_of_solid_block_is_perimeter() {
        let m = mask_with(8, 8, &block(2, 2, 3));
        let b = boundary_pixels(&m, 1);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(3, 3)));
    }

    #[test]
    fn asd_identities() {
        let a = mask_with(8, 8, &block(2, 2, 3));
        assert_eq!(asd(&a, &a, 1).unwrap(), Some(0.0));

        // Single pixel versus the same pixel shifted by one: every nearest
        // distance is exactly 1.
        let p = mask_with(6, 6, &[(2, 2)]);
        let g = mask_with(6, 6, &[(2, 3)]);
        assert_eq!(asd(&p, &g, 1).unwrap(), Some(1.0));
    }

    #[test]
    fn asd_shifted_square_matches_oracle() {
        let p = mask_with(16, 16, &block(6, 4, 4));
        let g = mask_with(16, 16, &block(6, 6, 4));
        let got = asd(&p, &g, 1).unwrap().unwrap();
        let expect = oracle_asd(&p, &g, 1).unwrap();
        assert_eq!(got, expect);
        assert!(got > 0.0);
    }

    #[test]
    fn asd_is_symmetric_and_empty_rules_hold() {
        let p = mask_with(8, 8, &block(1, 1, 3));
        let g = mask_with(8, 8, &block(4, 4, 2));
        assert_eq!(asd(&p, &g, 1).unwrap(), asd(&g, &p, 1).unwrap());

        let empty = LabelMask::zeros(8, 8);
        assert_eq!(asd(&p, &empty, 1).unwrap(), None);
        assert_eq!(asd(&empty, &p, 1).unwrap(), None);
        assert_eq!(asd(&empty, &empty, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn metrics_match_oracle_on_random_masks() {
        let mut state = 0xFEEDu64;
        let mut next = move |m: u64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % m
        };
        for case in 0..100 {
            let mk = |next: &mut dyn FnMut(u64) -> u64| {
                let labels: Vec<u8> = (0..256).map(|_| next(3) as u8).collect();
                LabelMask::new(16, 16, labels).unwrap()
            };
            let p = mk(&mut next);
            let g = mk(&mut next);
            for class in 1u8..3 {
                let got = asd(&p, &g, class).unwrap();
                let expect = oracle_asd(&p, &g, class);
                assert_eq!(got, expect, "case {case} class {class}");
            }
            // Dice against a direct set computation.
            let dices = dice_scores(&p, &g, 3).unwrap();
            for class in 1usize..3 {
                let pc = p.labels().iter().filter(|&&l| l as usize == class).count();
                let gc = g.labels().iter().filter(|&&l| l as usize == class).count();
                let inter = p
                    .labels()
                    .iter()
                    .zip(g.labels())
                    .filter(|(&a, &b)| a as usize == class && b as usize == class)
                    .count();
                let expect = if pc + gc == 0 {
                    100.0
                } else {
                    200.0 * inter as f64 / (pc + gc) as f64
                };
                assert_eq!(dices[class - 1], expect, "case {case} class {class}");
            }
        }
    }

    #[test]
    fn joint_translation_leaves_metrics_unchanged() {
        let p = mask_with(16, 16, &block(3, 3, 4));
        let g = mask_with(16, 16, &block(4, 5, 4));
        let shift = |m: &LabelMask, dy: usize, dx: usize| {
            let mut out = LabelMask::zeros(16, 16);
            for y in 0..16 {
                for x in 0..16 {
                    out.set((y + dy) % 16, (x + dx) % 16, m.get(y, x));
                }
            }
            out
        };
        // Shift keeps both regions away from the border.
        let (ps, gs) = (shift(&p, 2, 3), shift(&g, 2, 3));
        assert_eq!(dice_scores(&p, &g, 2).unwrap(), dice_scores(&ps, &gs, 2).unwrap());
        assert_eq!(asd(&p, &g, 1).unwrap(), asd(&ps, &gs, 1).unwrap());
    }

    #[test]
    fn report_aggregates_and_renders() {
        let p = mask_with(8, 8, &block(1, 1, 3));
        let g = mask_with(8, 8, &block(2, 2, 3));
        let report = evaluate_cases(&[(p.clone(), g.clone()), (g.clone(), g)], 2).unwrap();
        assert_eq!(report.case_count, 2);
        assert_eq!(report.per_class.len(), 1);
        assert!(report.per_class[0].dice_percent > 0.0);
        assert_eq!(report.per_class[0].asd_undefined_cases, 0);
        let table = report.render_table();
        assert!(table.contains("average"));
        assert!(serde_json::to_string(&report).unwrap().contains("macro_dice_percent"));
    }
}
