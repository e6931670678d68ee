//! Training objectives: cross-entropy, soft Dice, temperature-softened KL
//! distillation, and the entropy-weighted two-teacher combination — each with
//! an analytic gradient with respect to the student logits.
//!
//! Gradients here are hand-derived and checked against central finite
//! differences in the test suite; teachers are always treated as constants.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::LabelMask;

/// Floor applied to probabilities before `ln`.
const LOG_FLOOR: f64 = 1e-12;

/// Per-pixel class scores before the softmax, `classes x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LogitMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("logit map dimensions must be positive"));
        }
        if data.len() != classes * height * width {
            return Err(Error::invalid(format!(
                "logit buffer length {} does not match {classes}x{height}x{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn zeros(classes: usize, height: usize, width: usize) -> Self {
        Self {
            classes,
            height,
            width,
            data: vec![0.0; classes * height * width],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, pix: usize) -> f64 {
        self.data[c * self.pixels() + pix]
    }

    #[inline]
    pub fn set(&mut self, c: usize, pix: usize, v: f64) {
        let n = self.pixels();
        self.data[c * n + pix] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn check_same_shape(&self, other: &LogitMap) -> Result<()> {
        if (self.classes, self.height, self.width) != (other.classes, other.height, other.width) {
            return Err(Error::invalid(format!(
                "logit shape mismatch: {}x{}x{} vs {}x{}x{}",
                self.classes, self.height, self.width, other.classes, other.height, other.width
            )));
        }
        Ok(())
    }

    fn check_mask(&self, mask: &LabelMask) -> Result<()> {
        if (self.height, self.width) != mask.shape() {
            return Err(Error::ShapeMismatch {
                expected: (self.height, self.width),
                got: mask.shape(),
            });
        }
        mask.validate_classes(self.classes)
    }
}

/// Per-pixel class probabilities, same layout as [`LogitMap`]; every pixel
/// sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMap {
    /// Validates non-negativity and per-pixel normalization (1e-9).
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::invalid("probability buffer length mismatch"));
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let pixels = height * width;
        for pix in 0..pixels {
            let sum: f64 = (0..classes).map(|c| data[c * pixels + pix]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "pixel {pix} probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, pix: usize) -> f64 {
        self.data[c * self.pixels() + pix]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Hard per-pixel decision, smallest class index on ties.
    pub fn argmax_mask(&self) -> LabelMask {
        let pixels = self.pixels();
        let mut labels = vec![0u8; pixels];
        for pix in 0..pixels {
            let mut best = 0usize;
            for c in 1..self.classes {
                if self.get(c, pix) > self.get(best, pix) {
                    best = c;
                }
            }
            labels[pix] = best as u8;
        }
        LabelMask::new(self.height, self.width, labels).expect("shape is valid")
    }
}

/// Loss weights and constants.
#[derive(Debug, Clone, Serialize)]
pub struct LossConfig {
    /// Weight of the supervised term in the distillation objective.
    pub alpha: f64,
    /// Distillation temperature.
    pub tau: f64,
    /// Dice smoothing constant.
    pub eps_dice: f64,
    /// Report per-pixel entropies as mean (default) or sum. The teacher
    /// weights are a ratio, so this only changes the logged magnitudes.
    pub entropy_sum: bool,
    /// Multiply the KL term by tau^2 (conventional variant, off by default).
    pub kd_tau_sq_rescale: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            tau: 2.0,
            eps_dice: 1e-5,
            entropy_sum: false,
            kd_tau_sq_rescale: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.tau <= 0.0 || self.eps_dice <= 0.0 {
            return Err(Error::invalid("alpha, tau and eps_dice must be positive"));
        }
        Ok(())
    }
}

/// Temperature softmax over the class axis, stabilized by max subtraction.
pub fn softmax(z: &LogitMap, tau: f64) -> Result<ProbMap> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let pixels = z.pixels();
    let mut data = vec![0.0f64; z.data.len()];
    for pix in 0..pixels {
        let max = (0..z.classes)
            .map(|c| z.get(c, pix))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..z.classes {
            let e = ((z.get(c, pix) - max) / tau).exp();
            data[c * pixels + pix] = e;
            sum += e;
        }
        for c in 0..z.classes {
            data[c * pixels + pix] /= sum;
        }
    }
    ProbMap::new(z.classes, z.height, z.width, data)
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(p: &ProbMap, y: &LabelMask) -> Result<f64> {
    check_prob_mask(p, y)?;
    let pixels = p.pixels();
    let mut sum = 0.0;
    for pix in 0..pixels {
        let c = y.labels()[pix] as usize;
        sum -= p.get(c, pix).max(LOG_FLOOR).ln();
    }
    Ok(sum / pixels as f64)
}

/// Soft Dice loss averaged over all classes (background included), with the
/// squared-probability denominator:
/// `1 - mean_c (2*sum(p_c*g_c) + eps) / (sum(p_c^2) + sum(g_c) + eps)`.
pub fn soft_dice_loss(p: &ProbMap, y: &LabelMask, eps: f64) -> Result<f64> {
    check_prob_mask(p, y)?;
    let pixels = p.pixels();
    let mut acc = 0.0;
    for c in 0..p.classes() {
        let (mut inter, mut psq, mut gsum) = (0.0, 0.0, 0.0);
        for pix in 0..pixels {
            let pc = p.get(c, pix);
            psq += pc * pc;
            if y.labels()[pix] as usize == c {
                inter += pc;
                gsum += 1.0;
            }
        }
        acc += (2.0 * inter + eps) / (psq + gsum + eps);
    }
    Ok(1.0 - acc / p.classes() as f64)
}

/// Mean per-pixel Shannon entropy (nats), with `0 ln 0 = 0`.
pub fn mean_entropy(p: &ProbMap) -> f64 {
    let pixels = p.pixels();
    let mut sum = 0.0;
    for pix in 0..pixels {
        for c in 0..p.classes() {
            let v = p.get(c, pix);
            if v > 0.0 {
                sum -= v * v.ln();
            }
        }
    }
    sum / pixels as f64
}

/// Confidence weights of the two teachers from their prediction entropies:
/// the lower-entropy (more confident) teacher receives the larger weight.
/// Both zero is declared to mean equal confidence.
pub fn kd_weights(h_f: f64, h_s: f64) -> (f64, f64) {
    if h_f == 0.0 && h_s == 0.0 {
        return (0.5, 0.5);
    }
    let total = h_f + h_s;
    (h_s / total, h_f / total)
}

/// Mean per-pixel `KL(softmax(teacher/tau) || softmax(student/tau))`.
pub fn kd_loss(teacher: &LogitMap, student: &LogitMap, tau: f64) -> Result<f64> {
    teacher.check_same_shape(student)?;
    let t = softmax(teacher, tau)?;
    let s = softmax(student, tau)?;
    let pixels = t.pixels();
    let mut sum = 0.0;
    for pix in 0..pixels {
        for c in 0..t.classes() {
            let tv = t.get(c, pix);
            if tv > 0.0 {
                sum += tv * (tv.max(LOG_FLOOR).ln() - s.get(c, pix).max(LOG_FLOOR).ln());
            }
        }
    }
    Ok(sum / pixels as f64)
}

/// Supervised teacher objective: cross-entropy plus Dice at unit weights.
pub fn teacher_loss(p: &ProbMap, y: &LabelMask, cfg: &LossConfig) -> Result<f64> {
    Ok(cross_entropy(p, y)? + soft_dice_loss(p, y, cfg.eps_dice)?)
}

/// Per-term diagnostics of the distillation objective.
#[derive(Debug, Clone, Serialize)]
pub struct MkdDiagnostics {
    pub omega_f: f64,
    pub omega_s: f64,
    pub entropy_f: f64,
    pub entropy_s: f64,
    pub supervised_ce: f64,
    pub supervised_dice: f64,
    pub kd_f: f64,
    pub kd_s: f64,
    pub total: f64,
}

/// Entropy-weighted two-teacher distillation objective:
/// `alpha * (CE + Dice)(student) + omega_f * KL(tF || student) + omega_s *
/// KL(tS || student)`, weights from the teachers' tempered entropies.
pub fn mkd_loss(
    student: &LogitMap,
    teacher_f: &LogitMap,
    teacher_s: &LogitMap,
    y: &LabelMask,
    cfg: &LossConfig,
) -> Result<(f64, MkdDiagnostics)> {
    let (value, _, diag) = mkd_parts(student, teacher_f, teacher_s, y, cfg, false)?;
    Ok((value, diag))
}

/// Cross-entropy through the softmax (tau = 1) with its gradient w.r.t. the
/// logits: `(p - onehot) / (H*W)` per pixel.
pub fn cross_entropy_with_grad(z: &LogitMap, y: &LabelMask) -> Result<(f64, LogitMap)> {
    z.check_mask(y)?;
    let p = softmax(z, 1.0)?;
    let value = cross_entropy(&p, y)?;
    let pixels = z.pixels();
    let inv = 1.0 / pixels as f64;
    let mut grad = LogitMap::zeros(z.classes, z.height, z.width);
    for pix in 0..pixels {
        let target = y.labels()[pix] as usize;
        for c in 0..z.classes {
            let g = (p.get(c, pix) - if c == target { 1.0 } else { 0.0 }) * inv;
            grad.set(c, pix, g);
        }
    }
    Ok((value, grad))
}

/// Soft Dice through the softmax (tau = 1) with its gradient w.r.t. logits.
pub fn dice_with_grad(z: &LogitMap, y: &LabelMask, eps: f64) -> Result<(f64, LogitMap)> {
    z.check_mask(y)?;
    let p = softmax(z, 1.0)?;
    let value = soft_dice_loss(&p, y, eps)?;
    let pixels = z.pixels();
    let classes = z.classes;

    // Per-class numerator/denominator of the Dice terms.
    let mut numer = vec![0.0f64; classes];
    let mut denom = vec![0.0f64; classes];
    for c in 0..classes {
        let (mut inter, mut psq, mut gsum) = (0.0, 0.0, 0.0);
        for pix in 0..pixels {
            let pc = p.get(c, pix);
            psq += pc * pc;
            if y.labels()[pix] as usize == c {
                inter += pc;
                gsum += 1.0;
            }
        }
        numer[c] = 2.0 * inter + eps;
        denom[c] = psq + gsum + eps;
    }

    // d(loss)/d(p_c) then chain through the softmax Jacobian.
    let inv_classes = 1.0 / classes as f64;
    let mut grad = LogitMap::zeros(classes, z.height, z.width);
    for pix in 0..pixels {
        let target = y.labels()[pix] as usize;
        let mut dp = vec![0.0f64; classes];
        for c in 0..classes {
            let g = if c == target { 1.0 } else { 0.0 };
            let d = denom[c];
            dp[c] = -inv_classes * (2.0 * g * d - numer[c] * 2.0 * p.get(c, pix)) / (d * d);
        }
        let dot: f64 = (0..classes).map(|c| dp[c] * p.get(c, pix)).sum();
        for c in 0..classes {
            grad.set(c, pix, p.get(c, pix) * (dp[c] - dot));
        }
    }
    Ok((value, grad))
}

/// KL distillation term with its gradient w.r.t. the student logits:
/// `(softmax(student/tau) - softmax(teacher/tau)) / (tau * H*W)` per pixel.
pub fn kd_with_grad(teacher: &LogitMap, student: &LogitMap, tau: f64) -> Result<(f64, LogitMap)> {
    teacher.check_same_shape(student)?;
    let value = kd_loss(teacher, student, tau)?;
    let t = softmax(teacher, tau)?;
    let s = softmax(student, tau)?;
    let pixels = student.pixels();
    let scale = 1.0 / (tau * pixels as f64);
    let mut grad = LogitMap::zeros(student.classes, student.height, student.width);
    for pix in 0..pixels {
        for c in 0..student.classes {
            grad.set(c, pix, (s.get(c, pix) - t.get(c, pix)) * scale);
        }
    }
    Ok((value, grad))
}

/// Supervised teacher objective with gradient (CE + Dice at unit weights).
pub fn teacher_loss_with_grad(
    z: &LogitMap,
    y: &LabelMask,
    cfg: &LossConfig,
) -> Result<(f64, LogitMap)> {
    let (ce, g_ce) = cross_entropy_with_grad(z, y)?;
    let (dice, g_dice) = dice_with_grad(z, y, cfg.eps_dice)?;
    let mut grad = g_ce;
    for (g, d) in grad.data_mut().iter_mut().zip(g_dice.data()) {
        *g += d;
    }
    Ok((ce + dice, grad))
}

/// Distillation objective with gradient w.r.t. the student logits; the
/// teachers (and hence the weights) are constants.
pub fn mkd_with_grad(
    student: &LogitMap,
    teacher_f: &LogitMap,
    teacher_s: &LogitMap,
    y: &LabelMask,
    cfg: &LossConfig,
) -> Result<(f64, LogitMap, MkdDiagnostics)> {
    let (value, grad, diag) = mkd_parts(student, teacher_f, teacher_s, y, cfg, true)?;
    Ok((value, grad.expect("gradient requested"), diag))
}

fn mkd_parts(
    student: &LogitMap,
    teacher_f: &LogitMap,
    teacher_s: &LogitMap,
    y: &LabelMask,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(f64, Option<LogitMap>, MkdDiagnostics)> {
    cfg.validate()?;
    student.check_same_shape(teacher_f)?;
    student.check_same_shape(teacher_s)?;
    student.check_mask(y)?;

    let entropy_scale = if cfg.entropy_sum {
        student.pixels() as f64
    } else {
        1.0
    };
    let entropy_f = mean_entropy(&softmax(teacher_f, cfg.tau)?) * entropy_scale;
    let entropy_s = mean_entropy(&softmax(teacher_s, cfg.tau)?) * entropy_scale;
    let (omega_f, omega_s) = kd_weights(entropy_f, entropy_s);
    let kd_scale = if cfg.kd_tau_sq_rescale {
        cfg.tau * cfg.tau
    } else {
        1.0
    };

    let (ce, dice, kd_f, kd_s, grad);
    if with_grad {
        let (ce_v, g_ce) = cross_entropy_with_grad(student, y)?;
        let (dice_v, g_dice) = dice_with_grad(student, y, cfg.eps_dice)?;
        let (kdf_v, g_kdf) = kd_with_grad(teacher_f, student, cfg.tau)?;
        let (kds_v, g_kds) = kd_with_grad(teacher_s, student, cfg.tau)?;
        let mut g = LogitMap::zeros(student.classes, student.height, student.width);
        for i in 0..g.data.len() {
            g.data[i] = cfg.alpha * (g_ce.data[i] + g_dice.data[i])
                + kd_scale * (omega_f * g_kdf.data[i] + omega_s * g_kds.data[i]);
        }
        ce = ce_v;
        dice = dice_v;
        kd_f = kdf_v;
        kd_s = kds_v;
        grad = Some(g);
    } else {
        let p = softmax(student, 1.0)?;
        ce = cross_entropy(&p, y)?;
        dice = soft_dice_loss(&p, y, cfg.eps_dice)?;
        kd_f = kd_loss(teacher_f, student, cfg.tau)?;
        kd_s = kd_loss(teacher_s, student, cfg.tau)?;
        grad = None;
    }

    let total = cfg.alpha * (ce + dice) + kd_scale * (omega_f * kd_f + omega_s * kd_s);
    Ok((
        total,
        grad,
        MkdDiagnostics {
            omega_f,
            omega_s,
            entropy_f,
            entropy_s,
            supervised_ce: ce,
            supervised_dice: dice,
            kd_f,
            kd_s,
            total,
        },
    ))
}

fn check_prob_mask(p: &ProbMap, y: &LabelMask) -> Result<()> {
    if (p.height, p.width) != y.shape() {
        return Err(Error::ShapeMismatch {
            expected: (p.height, p.width),
            got: y.shape(),
        });
    }
    y.validate_classes(p.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_logits(classes: usize, h: usize, w: usize, seed: u64) -> LogitMap {
        let mut s = seed.max(1);
        let data = (0..classes * h * w).map(|_| lcg(&mut s) * 4.0 - 2.0).collect();
        LogitMap::new(classes, h, w, data).unwrap()
    }

    fn random_mask(classes: usize, h: usize, w: usize, seed: u64) -> LabelMask {
        let mut s = seed.max(1);
        let labels = (0..h * w).map(|_| (lcg(&mut s) * classes as f64) as u8).collect();
        LabelMask::new(h, w, labels).unwrap()
    }

    /// Central finite differences of `f` w.r.t. every logit.
    fn numeric_grad(z: &LogitMap, f: impl Fn(&LogitMap) -> f64) -> LogitMap {
        let h = 1e-5;
        let mut grad = LogitMap::zeros(z.classes(), z.height(), z.width());
        for i in 0..z.data().len() {
            let mut plus = z.clone();
            plus.data_mut()[i] += h;
            let mut minus = z.clone();
            minus.data_mut()[i] -= h;
            grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grad
    }

    fn rel_linf(a: &LogitMap, b: &LogitMap) -> f64 {
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let denom = b.data().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-10);
        diff / denom
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let z = LogitMap::new(3, 1, 2, vec![0.7; 6]).unwrap();
        for tau in [0.5, 1.0, 2.0] {
            let p = softmax(&z, tau).unwrap();
            assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn high_temperature_flattens() {
        let z = LogitMap::new(3, 1, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let peak = |tau: f64| {
            softmax(&z, tau)
                .unwrap()
                .data()
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max)
        };
        assert!(peak(1.0) > peak(4.0));
        assert!(peak(4.0) > peak(64.0));
        assert!((peak(1e6) - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = random_logits(4, 2, 2, 3);
        let shifted = LogitMap::new(
            4,
            2,
            2,
            z.data().iter().map(|v| v + 11.5).collect(),
        )
        .unwrap();
        let a = softmax(&z, 2.0).unwrap();
        let b = softmax(&shifted, 2.0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_basics() {
        // One-hot on the true class -> 0 (up to the log floor).
        let y = random_mask(2, 2, 2, 5);
        let pixels = 4;
        let mut data = vec![0.0; 2 * pixels];
        for pix in 0..pixels {
            data[y.labels()[pix] as usize * pixels + pix] = 1.0;
        }
        let p = ProbMap::new(2, 2, 2, data).unwrap();
        assert!(cross_entropy(&p, &y).unwrap().abs() < 1e-12);

        // Uniform -> ln(n_c).
        let p = ProbMap::new(3, 2, 2, vec![1.0 / 3.0; 12]).unwrap();
        let y = random_mask(3, 2, 2, 6);
        assert!((cross_entropy(&p, &y).unwrap() - 3.0f64.ln()).abs() < 1e-12);

        // Single pixel, p_true = 0.5 -> ln 2.
        let p = ProbMap::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        let y = LabelMask::new(1, 1, vec![1]).unwrap();
        assert!((cross_entropy(&p, &y).unwrap() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dice_of_perfect_prediction_is_zero() {
        let y = random_mask(3, 4, 4, 7);
        let pixels = 16;
        let mut data = vec![0.0; 3 * pixels];
        for pix in 0..pixels {
            data[y.labels()[pix] as usize * pixels + pix] = 1.0;
        }
        let p = ProbMap::new(3, 4, 4, data).unwrap();
        assert!(soft_dice_loss(&p, &y, 1e-5).unwrap().abs() < 1e-5);
    }

    #[test]
    fn dice_of_uniform_on_balanced_mask_is_one_third() {
        // Uniform two-class prediction on a half/half mask: each class term is
        // (2 * 0.5 * HW/2) / (0.25*HW + HW/2) = 2/3, so the loss is 1/3.
        let (h, w) = (4, 4);
        let labels: Vec<u8> = (0..16).map(|i| (i % 2) as u8).collect();
        let y = LabelMask::new(h, w, labels).unwrap();
        let p = ProbMap::new(2, h, w, vec![0.5; 32]).unwrap();
        let loss = soft_dice_loss(&p, &y, 1e-12).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn dice_of_disjoint_hard_prediction_approaches_one() {
        let (h, w) = (2, 2);
        let y = LabelMask::new(h, w, vec![0; 4]).unwrap();
        let p = ProbMap::new(2, h, w, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let loss = soft_dice_loss(&p, &y, 1e-12).unwrap();
        assert!(loss > 1.0 - 1e-9);
    }

    #[test]
    fn entropy_values() {
        let one_hot = ProbMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mean_entropy(&one_hot), 0.0);
        let uniform = ProbMap::new(4, 1, 2, vec![0.25; 8]).unwrap();
        assert!((mean_entropy(&uniform) - 4.0f64.ln()).abs() < 1e-12);
        let halves = ProbMap::new(2, 1, 3, vec![0.5; 6]).unwrap();
        assert!((mean_entropy(&halves) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kd_weight_identities() {
        assert_eq!(kd_weights(2.0, 2.0), (0.5, 0.5));
        assert_eq!(kd_weights(1.0, 3.0), (0.75, 0.25));
        assert_eq!(kd_weights(0.0, 0.7), (1.0, 0.0));
        assert_eq!(kd_weights(0.0, 0.0), (0.5, 0.5));
        // Swapping the arguments swaps the weights.
        let (a, b) = kd_weights(0.3, 1.9);
        assert_eq!(kd_weights(1.9, 0.3), (b, a));
    }

    #[test]
    fn kd_loss_zero_at_equality_and_nonnegative() {
        let z = random_logits(3, 3, 3, 11);
        assert!(kd_loss(&z, &z, 2.0).unwrap().abs() < 1e-12);
        for seed in 0..20 {
            let t = random_logits(3, 2, 2, 100 + seed);
            let s = random_logits(3, 2, 2, 200 + seed);
            assert!(kd_loss(&t, &s, 2.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kd_loss_hand_computed_value() {
        // teacher probs (0.8, 0.2), student (0.5, 0.5), tau = 1:
        // 0.8 ln(0.8/0.5) + 0.2 ln(0.2/0.5) = 0.19274475702175753
        let teacher = LogitMap::new(2, 1, 1, vec![0.8f64.ln(), 0.2f64.ln()]).unwrap();
        let student = LogitMap::new(2, 1, 1, vec![0.0, 0.0]).unwrap();
        let v = kd_loss(&teacher, &student, 1.0).unwrap();
        assert!((v - 0.19274475702175753).abs() < 1e-9, "{v}");
    }

    #[test]
    fn teacher_loss_is_compositional() {
        let z = random_logits(3, 4, 4, 13);
        let y = random_mask(3, 4, 4, 14);
        let cfg = LossConfig::default();
        let p = softmax(&z, 1.0).unwrap();
        let expect = cross_entropy(&p, &y).unwrap() + soft_dice_loss(&p, &y, cfg.eps_dice).unwrap();
        let (got, _) = teacher_loss_with_grad(&z, &y, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((teacher_loss(&p, &y, &cfg).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn teacher_loss_uniform_balanced_binary() {
        let labels: Vec<u8> = (0..16).map(|i| (i % 2) as u8).collect();
        let y = LabelMask::new(4, 4, labels).unwrap();
        let p = ProbMap::new(2, 4, 4, vec![0.5; 32]).unwrap();
        let mut cfg = LossConfig::default();
        cfg.eps_dice = 1e-12;
        let v = teacher_loss(&p, &y, &cfg).unwrap();
        assert!((v - (2.0f64.ln() + 1.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn mkd_zero_when_everything_agrees_and_is_perfect() {
        let y = random_mask(2, 2, 2, 21);
        let pixels = 4;
        let mut data = vec![-30.0; 2 * pixels];
        for pix in 0..pixels {
            data[y.labels()[pix] as usize * pixels + pix] = 30.0;
        }
        let z = LogitMap::new(2, 2, 2, data).unwrap();
        let (total, diag) = mkd_loss(&z, &z, &z, &y, &LossConfig::default()).unwrap();
        assert!(total.abs() < 1e-4, "{total}");
        assert!(diag.kd_f.abs() < 1e-12 && diag.kd_s.abs() < 1e-12);
    }

    #[test]
    fn mkd_weights_sum_to_one_and_kd_free_total_matches() {
        let cfg = LossConfig::default();
        let y = random_mask(3, 3, 3, 31);
        let student = random_logits(3, 3, 3, 32);
        let (_, diag) = mkd_loss(&student, &student, &student, &y, &cfg).unwrap();
        assert!((diag.omega_f + diag.omega_s - 1.0).abs() < 1e-12);
        // Teachers equal to the student make both KD terms vanish, so the
        // total is alpha times the supervised teacher objective.
        let p = softmax(&student, 1.0).unwrap();
        let expect = cfg.alpha * teacher_loss(&p, &y, &cfg).unwrap();
        assert!((diag.total - expect).abs() < 1e-9);
    }

    #[test]
    fn mkd_is_shift_invariant() {
        let cfg = LossConfig::default();
        let y = random_mask(3, 2, 2, 41);
        let student = random_logits(3, 2, 2, 42);
        let tf = random_logits(3, 2, 2, 43);
        let ts = random_logits(3, 2, 2, 44);
        let (a, _) = mkd_loss(&student, &tf, &ts, &y, &cfg).unwrap();
        let shift = |z: &LogitMap| {
            LogitMap::new(3, 2, 2, z.data().iter().map(|v| v + 7.25).collect()).unwrap()
        };
        let (b, _) = mkd_loss(&shift(&student), &shift(&tf), &shift(&ts), &y, &cfg).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn losses_are_pixel_permutation_invariant() {
        let z = random_logits(3, 2, 4, 51);
        let y = random_mask(3, 2, 4, 52);
        let perm: Vec<usize> = vec![5, 2, 7, 0, 3, 6, 1, 4];
        let permute_logits = |z: &LogitMap| {
            let mut out = LogitMap::zeros(3, 2, 4);
            for c in 0..3 {
                for (new_pix, &old_pix) in perm.iter().enumerate() {
                    out.set(c, new_pix, z.get(c, old_pix));
                }
            }
            out
        };
        let permuted_mask = LabelMask::new(
            2,
            4,
            perm.iter().map(|&i| y.labels()[i]).collect(),
        )
        .unwrap();
        let zp = permute_logits(&z);
        let p = softmax(&z, 1.0).unwrap();
        let pp = softmax(&zp, 1.0).unwrap();
        assert!(
            (cross_entropy(&p, &y).unwrap() - cross_entropy(&pp, &permuted_mask).unwrap()).abs()
                < 1e-12
        );
        assert!(
            (soft_dice_loss(&p, &y, 1e-5).unwrap()
                - soft_dice_loss(&pp, &permuted_mask, 1e-5).unwrap())
            .abs()
                < 1e-12
        );
        assert!((mean_entropy(&p) - mean_entropy(&pp)).abs() < 1e-12);
    }

    #[test]
    fn ce_gradient_matches_textbook_identity() {
        let z = random_logits(3, 2, 2, 61);
        let y = random_mask(3, 2, 2, 62);
        let (_, grad) = cross_entropy_with_grad(&z, &y).unwrap();
        let p = softmax(&z, 1.0).unwrap();
        let pixels = 4;
        for pix in 0..pixels {
            for c in 0..3 {
                let onehot = if y.labels()[pix] as usize == c { 1.0 } else { 0.0 };
                let expect = (p.get(c, pix) - onehot) / pixels as f64;
                assert!((grad.get(c, pix) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kd_gradient_is_zero_at_the_minimum() {
        let z = random_logits(3, 2, 2, 71);
        let (_, grad) = kd_with_grad(&z, &z, 2.0).unwrap();
        assert!(grad.data().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = LossConfig::default();
        for seed in 0..20u64 {
            let z = random_logits(3, 4, 4, 1000 + seed);
            let y = random_mask(3, 4, 4, 2000 + seed);
            let tf = random_logits(3, 4, 4, 3000 + seed);
            let ts = random_logits(3, 4, 4, 4000 + seed);

            let (_, g) = cross_entropy_with_grad(&z, &y).unwrap();
            let n = numeric_grad(&z, |zz| {
                cross_entropy(&softmax(zz, 1.0).unwrap(), &y).unwrap()
            });
            assert!(rel_linf(&g, &n) < 1e-4, "CE seed {seed}");

            let (_, g) = dice_with_grad(&z, &y, cfg.eps_dice).unwrap();
            let n = numeric_grad(&z, |zz| {
                soft_dice_loss(&softmax(zz, 1.0).unwrap(), &y, cfg.eps_dice).unwrap()
            });
            assert!(rel_linf(&g, &n) < 1e-4, "Dice seed {seed}");

            let (_, g) = kd_with_grad(&tf, &z, cfg.tau).unwrap();
            let n = numeric_grad(&z, |zz| kd_loss(&tf, zz, cfg.tau).unwrap());
            assert!(rel_linf(&g, &n) < 1e-4, "KD seed {seed}");

            let (_, g, _) = mkd_with_grad(&z, &tf, &ts, &y, &cfg).unwrap();
            let n = numeric_grad(&z, |zz| mkd_loss(zz, &tf, &ts, &y, &cfg).unwrap().0);
            assert!(rel_linf(&g, &n) < 1e-4, "MKD seed {seed}");
        }
    }

    #[test]
    fn alpha_zero_limit_is_pure_weighted_kd() {
        // alpha must be positive in configs; check the structural limit by
        // comparing against the explicitly weighted KD terms.
        let cfg = LossConfig::default();
        let y = random_mask(3, 2, 2, 81);
        let z = random_logits(3, 2, 2, 82);
        let tf = random_logits(3, 2, 2, 83);
        let ts = random_logits(3, 2, 2, 84);
        let (total, diag) = mkd_loss(&z, &tf, &ts, &y, &cfg).unwrap();
        let supervised = diag.supervised_ce + diag.supervised_dice;
        let kd_only = diag.omega_f * diag.kd_f + diag.omega_s * diag.kd_s;
        assert!((total - (cfg.alpha * supervised + kd_only)).abs() < 1e-12);
    }

    #[test]
    fn argmax_mask_breaks_ties_low() {
        let p = ProbMap::new(2, 1, 2, vec![0.5, 0.2, 0.5, 0.8]).unwrap();
        let m = p.argmax_mask();
        assert_eq!(m.labels(), &[0, 1]);
    }
}
