//! Caption losses: cross-entropy, the appearance confusion loss on masked
//! images, the confident loss on original images, the up-weighted
//! cross-entropy baseline, and their weighted combination.
//!
//! Every term is a batch mean over records (1/N) of a sum over timesteps.
//! Distribution `t` of a record predicts `caption[t + 1]`.

use serde::{Deserialize, Serialize};

use crate::dataset::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{softmax_backward, LogitGrads, WordDistribution};

/// Floor for probabilities inside the log of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub upweight_factor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 10.0,
            mu: 1.0,
            epsilon: 1e-6,
            upweight_factor: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.mu >= 0.0) {
            return Err(Error::Config("alpha, beta and mu must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.upweight_factor >= 1.0) {
            return Err(Error::Config("upweight_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Value of one loss term plus its gradient on every step's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub dlogits: LogitGrads,
    /// Timesteps that contributed.
    pub active_steps: usize,
    /// Log-probabilities floored at [`LOG_CLAMP`].
    pub clamp_events: usize,
}

impl Term {
    fn zeros(dists: &[Vec<WordDistribution>]) -> Self {
        Self {
            value: 0.0,
            dlogits: dists
                .iter()
                .map(|d| d.iter().map(|w| vec![0.0; w.len()]).collect())
                .collect(),
            active_steps: 0,
            clamp_events: 0,
        }
    }
}

fn check_alignment(dists: &[Vec<WordDistribution>], captions: &[&[TokenId]]) -> Result<()> {
    if dists.len() != captions.len() {
        return Err(Error::InvalidInput(format!(
            "{} distribution sequences for {} captions",
            dists.len(),
            captions.len()
        )));
    }
    for (d, c) in dists.iter().zip(captions) {
        if d.len() + 1 != c.len() {
            return Err(Error::InvalidInput(format!(
                "caption of length {} needs {} distributions, got {}",
                c.len(),
                c.len() - 1,
                d.len()
            )));
        }
    }
    Ok(())
}

/// Cross-entropy with per-target weights; zero-weight steps are skipped.
fn weighted_ce(
    dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    weight: impl Fn(TokenId) -> f64,
) -> Result<Term> {
    check_alignment(dists, captions)?;
    let n = dists.len().max(1) as f64;
    let mut term = Term::zeros(dists);
    for (r, (ds, cap)) in dists.iter().zip(captions).enumerate() {
        for (t, d) in ds.iter().enumerate() {
            let target = cap[t + 1];
            let w = weight(target);
            if w == 0.0 {
                continue;
            }
            term.active_steps += 1;
            let lp = d.log_prob(target);
            if lp < LOG_CLAMP.ln() {
                term.clamp_events += 1;
                term.value -= w * LOG_CLAMP.ln() / n;
                continue;
            }
            term.value -= w * lp / n;
            let g = &mut term.dlogits[r][t];
            for (gj, pj) in g.iter_mut().zip(d.probs()) {
                *gj = w * pj / n;
            }
            g[target] -= w / n;
        }
    }
    Ok(term)
}

/// −(1/N) Σ_n Σ_t log p(w_t).
pub fn cross_entropy_term(dists: &[Vec<WordDistribution>], captions: &[&[TokenId]]) -> Result<Term> {
    weighted_ce(dists, captions, |_| 1.0)
}

pub fn cross_entropy(dists: &[Vec<WordDistribution>], captions: &[&[TokenId]]) -> Result<f64> {
    Ok(cross_entropy_term(dists, captions)?.value)
}

/// Cross-entropy restricted to timesteps whose target is not gendered.
pub fn masked_nongender_ce_term(
    dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
) -> Result<Term> {
    weighted_ce(dists, captions, |t| if vocab.is_gendered(t) { 0.0 } else { 1.0 })
}

pub fn masked_nongender_ce(dists: &[Vec<WordDistribution>], captions: &[&[TokenId]], vocab: &Vocabulary) -> Result<f64> {
    Ok(masked_nongender_ce_term(dists, captions, vocab)?.value)
}

/// Cross-entropy with gendered-target steps multiplied by `factor`.
pub fn upweight_term(
    dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
    factor: f64,
) -> Result<Term> {
    weighted_ce(dists, captions, |t| if vocab.is_gendered(t) { factor } else { 1.0 })
}

pub fn upweight_loss(
    dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
    factor: f64,
) -> Result<f64> {
    Ok(upweight_term(dists, captions, vocab, factor)?.value)
}

/// |Σ p(woman words) − Σ p(man words)|.
pub fn confusion(dist: &WordDistribution, vocab: &Vocabulary) -> f64 {
    (dist.mass(vocab.woman_set()) - dist.mass(vocab.man_set())).abs()
}

/// Appearance confusion loss on masked-image distributions:
/// (1/N) Σ_n Σ_t 1(w_t gendered) · confusion(p_t).
pub fn appearance_confusion_term(
    masked_dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
) -> Result<Term> {
    check_alignment(masked_dists, captions)?;
    let n = masked_dists.len().max(1) as f64;
    let mut term = Term::zeros(masked_dists);
    for (r, (ds, cap)) in masked_dists.iter().zip(captions).enumerate() {
        for (t, d) in ds.iter().enumerate() {
            if !vocab.is_gendered(cap[t + 1]) {
                continue;
            }
            term.active_steps += 1;
            let diff = d.mass(vocab.woman_set()) - d.mass(vocab.man_set());
            term.value += diff.abs() / n;
            // subgradient 0 at diff == 0
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign == 0.0 {
                continue;
            }
            let mut dp = vec![0.0; d.len()];
            for &w in vocab.woman_set() {
                dp[w] = sign / n;
            }
            for &m in vocab.man_set() {
                dp[m] = -sign / n;
            }
            term.dlogits[r][t] = softmax_backward(d.probs(), &dp);
        }
    }
    Ok(term)
}

pub fn appearance_confusion_loss(
    masked_dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
) -> Result<f64> {
    Ok(appearance_confusion_term(masked_dists, captions, vocab)?.value)
}

/// (F_W, F_M) with F_W = Σp(man)/(Σp(woman)+ε) and F_M = Σp(woman)/(Σp(man)+ε).
pub fn confidence_quotients(dist: &WordDistribution, vocab: &Vocabulary, epsilon: f64) -> (f64, f64) {
    let w = dist.mass(vocab.woman_set());
    let m = dist.mass(vocab.man_set());
    (m / (w + epsilon), w / (m + epsilon))
}

/// Confident loss on original-image distributions:
/// (1/N) Σ_n Σ_t [1(w_t ∈ G_w)·F_W + 1(w_t ∈ G_m)·F_M].
pub fn confident_term(
    dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
    epsilon: f64,
) -> Result<Term> {
    check_alignment(dists, captions)?;
    let n = dists.len().max(1) as f64;
    let mut term = Term::zeros(dists);
    for (r, (ds, cap)) in dists.iter().zip(captions).enumerate() {
        for (t, d) in ds.iter().enumerate() {
            let target = cap[t + 1];
            // (own set, opposite set)
            let (own, other) = if vocab.is_woman(target) {
                (vocab.woman_set(), vocab.man_set())
            } else if vocab.is_man(target) {
                (vocab.man_set(), vocab.woman_set())
            } else {
                continue;
            };
            term.active_steps += 1;
            let s_own = d.mass(own);
            let s_other = d.mass(other);
            let denom = s_own + epsilon;
            term.value += s_other / denom / n;
            let mut dp = vec![0.0; d.len()];
            for &o in other {
                dp[o] = 1.0 / denom / n;
            }
            for &o in own {
                dp[o] = -s_other / (denom * denom) / n;
            }
            term.dlogits[r][t] = softmax_backward(d.probs(), &dp);
        }
    }
    Ok(term)
}

pub fn confident_loss(
    dists: &[Vec<WordDistribution>],
    captions: &[&[TokenId]],
    vocab: &Vocabulary,
    epsilon: f64,
) -> Result<f64> {
    Ok(confident_term(dists, captions, vocab, epsilon)?.value)
}

/// Named loss components of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    /// Cross-entropy on original images (up-weighted for the UpWeight baseline).
    pub ce: f64,
    /// Cross-entropy on non-gendered targets of masked images.
    pub masked_ce: f64,
    pub acl: f64,
    pub conf: f64,
    pub total: f64,
    pub weights: LossWeights,
    pub acl_steps: usize,
    pub conf_steps: usize,
    pub clamp_events: usize,
}

impl LossBundle {
    /// |total − (α(ce + masked_ce) + β·acl + μ·conf)|.
    pub fn linearity_gap(&self) -> f64 {
        let w = &self.weights;
        (self.total - (w.alpha * (self.ce + self.masked_ce) + w.beta * self.acl + w.mu * self.conf)).abs()
    }
}

/// total = α·(ce_I + masked_ce_I′) + β·acl_I′ + μ·conf_I.
pub fn total_loss(ce: f64, acl: f64, masked_ce: f64, conf: f64, weights: LossWeights) -> Result<LossBundle> {
    for (name, v) in [("ce", ce), ("acl", acl), ("masked_ce", masked_ce), ("conf", conf)] {
        if !v.is_finite() {
            return Err(Error::numeric(name, format!("loss component is {v}")));
        }
    }
    Ok(LossBundle {
        ce,
        masked_ce,
        acl,
        conf,
        total: weights.alpha * (ce + masked_ce) + weights.beta * acl + weights.mu * conf,
        weights,
        acl_steps: 0,
        conf_steps: 0,
        clamp_events: 0,
    })
}

/// Which terms a training objective includes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub weights: LossWeights,
    /// Multiply gendered-target cross-entropy by `upweight_factor`.
    pub upweight: bool,
    /// Run the masked-image pass (needed for the ACL and masked CE terms).
    pub masked_pass: bool,
}

/// Objective value and the logit gradients for the original and masked views.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub bundle: LossBundle,
    pub original: LogitGrads,
    pub masked: Option<LogitGrads>,
}

fn axpy(acc: &mut LogitGrads, scale: f64, g: &LogitGrads) {
    for (ar, gr) in acc.iter_mut().zip(g) {
        for (a, b) in ar.iter_mut().zip(gr) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

impl Objective {
    /// Evaluates the objective. Terms with zero weight are neither computed
    /// nor added, so degenerate settings reproduce the plain cross-entropy
    /// computation exactly.
    pub fn evaluate(
        &self,
        vocab: &Vocabulary,
        captions: &[&[TokenId]],
        original: &[Vec<WordDistribution>],
        masked: Option<&[Vec<WordDistribution>]>,
    ) -> Result<Evaluated> {
        let w = self.weights;
        let ce = if self.upweight {
            upweight_term(original, captions, vocab, w.upweight_factor)?
        } else {
            cross_entropy_term(original, captions)?
        };
        let mut grad_orig = Term::zeros(original).dlogits;
        axpy(&mut grad_orig, w.alpha, &ce.dlogits);
        let mut clamp_events = ce.clamp_events;

        let (mut conf_v, mut conf_steps) = (0.0, 0);
        if w.mu != 0.0 {
            let conf = confident_term(original, captions, vocab, w.epsilon)?;
            axpy(&mut grad_orig, w.mu, &conf.dlogits);
            conf_v = conf.value;
            conf_steps = conf.active_steps;
        }

        let (mut mce_v, mut acl_v, mut acl_steps) = (0.0, 0.0, 0);
        let grad_masked = match (self.masked_pass, masked) {
            (true, Some(md)) => {
                let mce = masked_nongender_ce_term(md, captions, vocab)?;
                clamp_events += mce.clamp_events;
                let mut g = Term::zeros(md).dlogits;
                axpy(&mut g, w.alpha, &mce.dlogits);
                mce_v = mce.value;
                if w.beta != 0.0 {
                    let acl = appearance_confusion_term(md, captions, vocab)?;
                    axpy(&mut g, w.beta, &acl.dlogits);
                    acl_v = acl.value;
                    acl_steps = acl.active_steps;
                }
                Some(g)
            }
            (true, None) => {
                return Err(Error::InvalidInput("objective needs masked-image distributions".into()));
            }
            (false, _) => None,
        };

        let mut bundle = total_loss(ce.value, acl_v, mce_v, conf_v, w)?;
        bundle.acl_steps = acl_steps;
        bundle.conf_steps = conf_steps;
        bundle.clamp_events = clamp_events;
        Ok(Evaluated {
            bundle,
            original: grad_orig,
            masked: grad_masked,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GenderSetMode;

    fn vocab() -> Vocabulary {
        Vocabulary::scene(GenderSetMode::Singleton)
    }

    /// Distribution with the given (token, prob) entries and the rest spread
    /// uniformly over the remaining tokens.
    fn dist(v: &Vocabulary, entries: &[(&str, f64)]) -> WordDistribution {
        let mut p = vec![0.0; v.len()];
        let fixed: f64 = entries.iter().map(|e| e.1).sum();
        let rest = v.len() - entries.len();
        for x in p.iter_mut() {
            *x = (1.0 - fixed) / rest as f64;
        }
        for (w, q) in entries {
            p[v.id(w).unwrap()] = *q;
        }
        WordDistribution::from_probs(p).unwrap()
    }

    fn one_hot(v: &Vocabulary, w: &str) -> WordDistribution {
        let mut p = vec![0.0; v.len()];
        p[v.id(w).unwrap()] = 1.0;
        WordDistribution::from_probs(p).unwrap()
    }

    fn uniform(n: usize) -> WordDistribution {
        WordDistribution::from_probs(vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn ce_of_correct_one_hot_is_zero() {
        let v = vocab();
        let cap = v.caption(&["a", "dog"]).unwrap();
        let d = vec![one_hot(&v, "a"), one_hot(&v, "dog"), one_hot(&v, "<eos>")];
        assert_eq!(cross_entropy(&[d], &[&cap]).unwrap(), 0.0);
    }

    #[test]
    fn ce_uniform_closed_form() {
        // 40-token toy vocabulary, 5 predicted positions
        let d: Vec<_> = (0..5).map(|_| uniform(40)).collect();
        let cap = [0usize, 7, 8, 9, 10, 1];
        let ce = cross_entropy(&[d], &[&cap]).unwrap();
        assert!((ce - 5.0 * 40f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_batch_mean_is_mean_of_records() {
        let v = vocab();
        let c1 = v.caption(&["a", "dog"]).unwrap();
        let c2 = v.caption(&["a", "man"]).unwrap();
        let d1 = vec![dist(&v, &[("a", 0.6)]), dist(&v, &[("dog", 0.2)]), dist(&v, &[("<eos>", 0.9)])];
        let d2 = vec![dist(&v, &[("a", 0.3)]), dist(&v, &[("man", 0.5)]), dist(&v, &[("<eos>", 0.4)])];
        let both = cross_entropy(&[d1.clone(), d2.clone()], &[&c1, &c2]).unwrap();
        let sep = (cross_entropy(&[d1], &[&c1]).unwrap() + cross_entropy(&[d2], &[&c2]).unwrap()) / 2.0;
        assert!((both - sep).abs() < 1e-12);
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let v = vocab();
        let cap = v.caption(&["dog"]).unwrap();
        let d = vec![one_hot(&v, "a"), one_hot(&v, "<eos>")];
        let t = cross_entropy_term(&[d], &[&cap]).unwrap();
        assert_eq!(t.clamp_events, 1);
        assert!((t.value + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn confusion_values() {
        let v = vocab();
        assert_eq!(confusion(&dist(&v, &[("woman", 0.3), ("man", 0.3)]), &v), 0.0);
        assert!((confusion(&dist(&v, &[("woman", 0.5), ("man", 0.2)]), &v) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn confusion_over_multiword_sets_equals_merged_mass() {
        let v = Vocabulary::scene(GenderSetMode::MultiWord);
        let d = dist(&v, &[("woman", 0.2), ("girl", 0.15), ("lady", 0.15), ("man", 0.1), ("boy", 0.05), ("guy", 0.05)]);
        // merged masses 0.5 and 0.2
        assert!((confusion(&d, &v) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn acl_examples() {
        let v = vocab();
        let neutral = v.caption(&["a", "person"]).unwrap();
        let ds = vec![dist(&v, &[("woman", 0.7), ("man", 0.1)]); 3];
        assert_eq!(appearance_confusion_loss(&[ds.clone()], &[&neutral], &v).unwrap(), 0.0);

        let gendered = v.caption(&["a", "woman"]).unwrap();
        let eq = vec![dist(&v, &[("woman", 0.4), ("man", 0.4)]); 3];
        assert_eq!(appearance_confusion_loss(&[eq], &[&gendered], &v).unwrap(), 0.0);
        let acl = appearance_confusion_loss(&[ds.clone()], &[&gendered], &v).unwrap();
        assert!((acl - 0.6).abs() < 1e-12);

        // duplicating the record keeps the batch mean
        let dup = appearance_confusion_loss(&[ds.clone(), ds], &[&gendered, &gendered], &v).unwrap();
        assert!((dup - acl).abs() < 1e-12);
    }

    #[test]
    fn masked_ce_restriction() {
        let v = vocab();
        let ds = vec![dist(&v, &[("a", 0.6)]), dist(&v, &[("man", 0.3)]), dist(&v, &[("<eos>", 0.8)])];
        let all_gendered = [0usize, v.id("man").unwrap()];
        assert_eq!(masked_nongender_ce(&[ds[..1].to_vec()], &[&all_gendered], &v).unwrap(), 0.0);

        let neutral = v.caption(&["a", "person"]).unwrap();
        let nd = vec![dist(&v, &[("a", 0.6)]), dist(&v, &[("person", 0.3)]), dist(&v, &[("<eos>", 0.8)])];
        assert_eq!(
            masked_nongender_ce(&[nd.clone()], &[&neutral], &v).unwrap(),
            cross_entropy(&[nd], &[&neutral]).unwrap()
        );

        let mixed = v.caption(&["a", "man"]).unwrap();
        let full = cross_entropy(&[ds.clone()], &[&mixed]).unwrap();
        let restricted = masked_nongender_ce(&[ds], &[&mixed], &v).unwrap();
        assert!((full - (-(0.3f64).ln()) - restricted).abs() < 1e-12);
    }

    #[test]
    fn confidence_quotient_examples() {
        let v = vocab();
        let d = dist(&v, &[("man", 0.2), ("woman", 0.5), ("person", 0.3)]);
        let (fw, fm) = confidence_quotients(&d, &v, 1e-6);
        assert!((fw - 0.2 / (0.5 + 1e-6)).abs() < 1e-12);
        assert!((fw - 0.4).abs() < 1e-5);
        assert!((fm - 0.5 / (0.2 + 1e-6)).abs() < 1e-9);

        let eq = dist(&v, &[("man", 0.3), ("woman", 0.3)]);
        let (a, b) = confidence_quotients(&eq, &v, 1e-6);
        assert!((a - 1.0).abs() < 1e-5 && (b - 1.0).abs() < 1e-5);
        assert_eq!(a, b);

        let no_man = dist(&v, &[("man", 0.0), ("woman", 0.4)]);
        assert_eq!(confidence_quotients(&no_man, &v, 1e-6).0, 0.0);
    }

    #[test]
    fn confident_loss_examples() {
        let v = vocab();
        let woman = v.caption(&["a", "woman"]).unwrap();
        let neutral = v.caption(&["a", "person"]).unwrap();
        let worked = vec![dist(&v, &[("a", 0.9)]), dist(&v, &[("man", 0.2), ("woman", 0.5), ("person", 0.3)]), dist(&v, &[])];
        assert_eq!(confident_loss(&[worked.clone()], &[&neutral], &v, 1e-6).unwrap(), 0.0);
        let c = confident_loss(&[worked], &[&woman], &v, 1e-6).unwrap();
        assert!((c - 0.4).abs() < 1e-5);
        let perfect = vec![dist(&v, &[]), one_hot(&v, "woman"), dist(&v, &[])];
        assert!(confident_loss(&[perfect], &[&woman], &v, 1e-6).unwrap() < 1e-12);
    }

    #[test]
    fn upweight_examples() {
        let v = vocab();
        let cap = v.caption(&["a", "man", "is", "standing"]).unwrap();
        let ds = vec![
            dist(&v, &[("a", 0.5)]),
            dist(&v, &[("man", 0.3)]),
            dist(&v, &[("is", 0.7)]),
            dist(&v, &[("standing", 0.6)]),
            dist(&v, &[("<eos>", 0.9)]),
        ];
        let ce = cross_entropy(&[ds.clone()], &[&cap]).unwrap();
        assert_eq!(upweight_loss(&[ds.clone()], &[&cap], &v, 1.0).unwrap(), ce);
        let up = upweight_loss(&[ds.clone()], &[&cap], &v, 10.0).unwrap();
        assert!((up - (ce + 9.0 * -(0.3f64).ln())).abs() < 1e-12);

        let neutral = v.caption(&["a", "person", "is", "standing"]).unwrap();
        assert_eq!(
            upweight_loss(&[ds.clone()], &[&neutral], &v, 10.0).unwrap(),
            cross_entropy(&[ds], &[&neutral]).unwrap()
        );
    }

    #[test]
    fn total_loss_linearity() {
        let w = LossWeights { beta: 0.0, mu: 0.0, ..Default::default() };
        let b = total_loss(1.5, 0.7, 0.25, 0.3, w).unwrap();
        assert_eq!(b.total, 1.75);
        let d = LossWeights::default();
        assert_eq!((d.alpha, d.beta, d.mu), (1.0, 10.0, 1.0));
        let b1 = total_loss(1.0, 0.3, 0.2, 0.1, d).unwrap();
        let b2 = total_loss(1.0, 0.3, 0.2, 0.1, LossWeights { beta: 20.0, ..d }).unwrap();
        assert!((b2.total - b1.total - 10.0 * 0.3).abs() < 1e-12);
        assert!(b1.linearity_gap() < 1e-9);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, 0.0, d), Err(Error::Numeric { .. })));
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { upweight_factor: 0.5, ..Default::default() }.validate().is_err());
    }
}
