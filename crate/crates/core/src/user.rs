//! Candidate-aware user modeling and click scoring.
//!
//! For a candidate with encodings `(r_t_c, r_p_c)` and a click history
//! stacked into `R_t`, `R_p` (`P × d`), four masked softmaxes over the
//! history weight the clicked news:
//!
//! ```text
//! a_tt = softmax(R_t r_t_c)   a_tp = softmax(R_p r_t_c)
//! a_pt = softmax(R_t r_p_c)   a_pp = softmax(R_p r_p_c)
//! u    = R_pᵀ(a_tp + a_pp) + R_tᵀ(a_tt + a_pt)
//! ŷ    = (r_t_c + r_p_c) · u
//! ```
//!
//! The user vector depends on the candidate, so it is recomputed for every
//! candidate. News encodings themselves can be cached.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_row, ParamId, ParamStore, Tape, Var};
use crate::encoder::NewsEncoding;
use crate::error::{Error, Result};
use crate::nn::uniform_param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stacked encodings of a user's clicked news.
#[derive(Clone, Debug, PartialEq)]
pub struct UserState<T> {
    pub r_t: Tensor<T>,
    pub r_p: Tensor<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> UserState<T> {
    pub fn new(r_t: Tensor<T>, r_p: Tensor<T>, mask: Vec<bool>) -> Result<Self> {
        if r_t.shape() != r_p.shape() || r_t.shape().len() != 2 || r_t.rows() != mask.len() {
            return Err(Error::shape("user state", r_t.shape(), r_p.shape()));
        }
        Ok(UserState { r_t, r_p, mask })
    }

    /// Stacks the given encodings as fully valid history rows.
    pub fn from_history(history: &[&NewsEncoding<T>], d: usize) -> Result<Self> {
        let mut t = Vec::with_capacity(history.len() * d);
        let mut p = Vec::with_capacity(history.len() * d);
        for enc in history {
            if enc.dim() != d {
                return Err(Error::shape("user state", &[enc.dim()], &[d]));
            }
            t.extend_from_slice(enc.r_t.data());
            p.extend_from_slice(enc.r_p.data());
        }
        let n = history.len();
        UserState::new(Tensor::matrix(n, d, t)?, Tensor::matrix(n, d, p)?, vec![true; n])
    }

    pub fn dim(&self) -> usize {
        self.r_t.cols()
    }

    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_cold(&self) -> bool {
        self.num_valid() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossmodalWeights<T> {
    pub a_tt: Vec<T>,
    pub a_tp: Vec<T>,
    pub a_pt: Vec<T>,
    pub a_pp: Vec<T>,
}

/// Options of the crossmodal attention. `scaled` divides the logits by `√d`;
/// it is off by default so the logits are raw inner products.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerOptions {
    pub scaled: bool,
}

fn history_softmax<T: Scalar>(rows: &Tensor<T>, query: &[T], mask: &[bool], scale: T) -> Vec<T> {
    let logits: Vec<T> = (0..rows.rows())
        .map(|i| rows.row_slice(i).iter().zip(query).map(|(a, b)| *a * *b).sum::<T>() * scale)
        .collect();
    let mut out = vec![T::zero(); logits.len()];
    softmax_row(&logits, mask, &mut out);
    out
}

fn logit_scale<T: Scalar>(d: usize, opts: ScorerOptions) -> T {
    if opts.scaled {
        T::one() / T::c(d as f64).sqrt()
    } else {
        T::one()
    }
}

pub fn crossmodal_weights<T: Scalar>(
    state: &UserState<T>,
    cand: &NewsEncoding<T>,
    opts: ScorerOptions,
) -> Result<CrossmodalWeights<T>> {
    if state.is_cold() {
        return Err(Error::EmptyAttention {
            context: "click history",
        });
    }
    if cand.dim() != state.dim() {
        return Err(Error::shape("crossmodal_weights", &[cand.dim()], &[state.dim()]));
    }
    let s = logit_scale(state.dim(), opts);
    let (rt, rp) = (cand.r_t.data(), cand.r_p.data());
    Ok(CrossmodalWeights {
        a_tt: history_softmax(&state.r_t, rt, &state.mask, s),
        a_tp: history_softmax(&state.r_p, rt, &state.mask, s),
        a_pt: history_softmax(&state.r_t, rp, &state.mask, s),
        a_pp: history_softmax(&state.r_p, rp, &state.mask, s),
    })
}

/// `u = R_pᵀ(a_tp + a_pp) + R_tᵀ(a_tt + a_pt)`. A cold-start user gets `u = 0`.
pub fn user_embedding<T: Scalar>(state: &UserState<T>, weights: Option<&CrossmodalWeights<T>>) -> Vec<T> {
    let d = state.dim();
    let mut u = vec![T::zero(); d];
    let Some(w) = weights else {
        return u;
    };
    for i in 0..state.r_t.rows() {
        if !state.mask[i] {
            continue;
        }
        let wp = w.a_tp[i] + w.a_pp[i];
        let wt = w.a_tt[i] + w.a_pt[i];
        for ((o, p), t) in u.iter_mut().zip(state.r_p.row_slice(i)).zip(state.r_t.row_slice(i)) {
            *o += wp * *p + wt * *t;
        }
    }
    u
}

/// `ŷ = (r_t_c + r_p_c) · u`.
pub fn click_score<T: Scalar>(cand: &NewsEncoding<T>, u: &[T]) -> Result<T> {
    if u.len() != cand.dim() {
        return Err(Error::shape("click_score", &[cand.dim()], &[u.len()]));
    }
    Ok(cand
        .r_t
        .data()
        .iter()
        .zip(cand.r_p.data())
        .zip(u)
        .map(|((t, p), u)| (*t + *p) * *u)
        .sum())
}

/// Sorts `(index, score)` pairs by score descending, ties by index ascending.
pub fn rank_scores<T: Scalar>(scores: &[T]) -> Vec<(usize, T)> {
    let mut ranked: Vec<(usize, T)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked
}

/// Scores every candidate against the history with the crossmodal attention
/// and returns them best first.
pub fn rank_candidates<T: Scalar>(
    state: &UserState<T>,
    candidates: &[NewsEncoding<T>],
    opts: ScorerOptions,
) -> Result<Vec<(usize, T)>> {
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let w = if state.is_cold() {
            None
        } else {
            Some(crossmodal_weights(state, cand, opts)?)
        };
        let u = user_embedding(state, w.as_ref());
        scores.push(click_score(cand, &u)?);
    }
    Ok(rank_scores(&scores))
}

/// How the user vector is formed from the history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserMode {
    /// Four candidate-aware attentions, both modalities scored.
    Crossmodal,
    /// `u = R_tᵀ a_tt`, `ŷ = r_t_c · u`.
    TextOnly,
    /// `u = R_pᵀ a_pp`, `ŷ = r_p_c · u`.
    ImageOnly,
    /// Candidate-independent additive attention per modality:
    /// `a_m = softmax(q · tanh(W R_mᵀ))`, `u = R_tᵀ a_t + R_pᵀ a_p`.
    Vanilla,
}

/// Parameters of the candidate-independent user attention.
#[derive(Clone, Debug)]
pub struct VanillaParams {
    pub text_w: ParamId,
    pub text_q: ParamId,
    pub image_w: ParamId,
    pub image_q: ParamId,
}

impl VanillaParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        d: usize,
        d_a: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(VanillaParams {
            text_w: uniform_param(store, "user.text.w".into(), &[d_a, d], d, rng)?,
            text_q: uniform_param(store, "user.text.q".into(), &[d_a, 1], d_a, rng)?,
            image_w: uniform_param(store, "user.image.w".into(), &[d_a, d], d, rng)?,
            image_q: uniform_param(store, "user.image.q".into(), &[d_a, 1], d_a, rng)?,
        })
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.text_w, self.text_q, self.image_w, self.image_q]
    }
}

/// Click scorer on the tape. Scores all candidates of one sample at once.
#[derive(Clone, Debug)]
pub struct UserScorer {
    pub mode: UserMode,
    pub options: ScorerOptions,
    pub vanilla: Option<VanillaParams>,
}

impl UserScorer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        mode: UserMode,
        options: ScorerOptions,
        store: &mut ParamStore<T>,
        d: usize,
        d_a: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let vanilla = match mode {
            UserMode::Vanilla => Some(VanillaParams::new(store, d, d_a, rng)?),
            _ => None,
        };
        Ok(UserScorer { mode, options, vanilla })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.vanilla.as_ref().map(|v| v.params().to_vec()).unwrap_or_default()
    }

    /// Scores `C` candidates (`cand_t`, `cand_p`: `[C × d]`) against a history
    /// (`hist_t`, `hist_p`: `[P × d]`, `None` for a cold user). Returns `[C × 1]`.
    pub fn score<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        history: Option<(Var, Var, &[bool])>,
        cand_t: Var,
        cand_p: Var,
    ) -> Result<Var> {
        let (c, d) = {
            let v = tape.value(cand_t);
            (v.rows(), v.cols())
        };
        let Some((hist_t, hist_p, mask)) = history.filter(|h| h.2.iter().any(|m| *m)) else {
            return Ok(tape.constant(Tensor::zeros(&[c, 1])));
        };
        let ones = tape.constant(Tensor::ones(&[d, 1]));
        let scale = logit_scale::<T>(d, self.options);
        let attend = |tape: &mut Tape<T>, query: Var, keys: Var| -> Result<Var> {
            let s = tape.matmul_t(query, keys)?;
            let s = if self.options.scaled { tape.scale(s, scale) } else { s };
            tape.softmax_masked(s, mask)
        };
        match self.mode {
            UserMode::Crossmodal => {
                let a_tt = attend(tape, cand_t, hist_t)?;
                let a_tp = attend(tape, cand_t, hist_p)?;
                let a_pt = attend(tape, cand_p, hist_t)?;
                let a_pp = attend(tape, cand_p, hist_p)?;
                let wp = tape.add(a_tp, a_pp)?;
                let wt = tape.add(a_tt, a_pt)?;
                let up = tape.matmul(wp, hist_p)?;
                let ut = tape.matmul(wt, hist_t)?;
                let u = tape.add(up, ut)?;
                let cand = tape.add(cand_t, cand_p)?;
                let prod = tape.mul(cand, u)?;
                tape.matmul(prod, ones)
            }
            UserMode::TextOnly | UserMode::ImageOnly => {
                let (cand, hist) = if self.mode == UserMode::TextOnly {
                    (cand_t, hist_t)
                } else {
                    (cand_p, hist_p)
                };
                let a = attend(tape, cand, hist)?;
                let u = tape.matmul(a, hist)?;
                let prod = tape.mul(cand, u)?;
                tape.matmul(prod, ones)
            }
            UserMode::Vanilla => {
                let params = self
                    .vanilla
                    .as_ref()
                    .ok_or(Error::MissingParameter("user.text.w".into()))?;
                let ut = vanilla_pool(tape, store, hist_t, mask, params.text_w, params.text_q)?;
                let up = vanilla_pool(tape, store, hist_p, mask, params.image_w, params.image_q)?;
                let u = tape.add(ut, up)?;
                let cand = tape.add(cand_t, cand_p)?;
                tape.matmul_t(cand, u)
            }
        }
    }

    /// Candidate-independent user vector, or `None` for modes where the user
    /// vector depends on the candidate.
    pub fn static_user<T: Scalar>(&self, store: &ParamStore<T>, state: &UserState<T>) -> Result<Option<Vec<T>>> {
        if self.mode != UserMode::Vanilla {
            return Ok(None);
        }
        if state.is_cold() {
            return Ok(Some(vec![T::zero(); state.dim()]));
        }
        let params = self
            .vanilla
            .as_ref()
            .ok_or(Error::MissingParameter("user.text.w".into()))?;
        let mut tape = Tape::new();
        let ht = tape.constant(state.r_t.clone());
        let hp = tape.constant(state.r_p.clone());
        let ut = vanilla_pool(&mut tape, store, ht, &state.mask, params.text_w, params.text_q)?;
        let up = vanilla_pool(&mut tape, store, hp, &state.mask, params.image_w, params.image_q)?;
        let u = tape.add(ut, up)?;
        Ok(Some(tape.value(u).data().to_vec()))
    }
}

fn vanilla_pool<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    hist: Var,
    mask: &[bool],
    w: ParamId,
    q: ParamId,
) -> Result<Var> {
    let p = tape.value(hist).rows();
    let w = tape.param(store, w);
    let q = tape.param(store, q);
    let proj = tape.matmul_t(hist, w)?;
    let proj = tape.tanh(proj);
    let s = tape.matmul(proj, q)?;
    let s = tape.reshape(s, &[1, p])?;
    let a = tape.softmax_masked(s, mask)?;
    tape.matmul(a, hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc(t: &[f64], p: &[f64]) -> NewsEncoding<f64> {
        NewsEncoding::new(t.to_vec(), p.to_vec()).unwrap()
    }

    fn random_enc(rng: &mut ChaCha8Rng, d: usize) -> NewsEncoding<f64> {
        let t = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        NewsEncoding::new(t, p).unwrap()
    }

    fn state(history: &[NewsEncoding<f64>]) -> UserState<f64> {
        let refs: Vec<_> = history.iter().collect();
        UserState::from_history(&refs, history[0].dim()).unwrap()
    }

    #[test]
    fn singleton_history_closed_form() {
        let h = enc(&[1.0, -2.0], &[0.5, 3.0]);
        let s = state(std::slice::from_ref(&h));
        let c = enc(&[0.3, 0.1], &[-1.0, 2.0]);
        let w = crossmodal_weights(&s, &c, ScorerOptions::default()).unwrap();
        for a in [&w.a_tt, &w.a_tp, &w.a_pt, &w.a_pp] {
            assert_eq!(a, &vec![1.0]);
        }
        let u = user_embedding(&s, Some(&w));
        assert_eq!(u, vec![2.0 * 0.5 + 2.0 * 1.0, 2.0 * 3.0 + 2.0 * -2.0]);
    }

    #[test]
    fn text_text_weights_example() {
        let s = state(&[enc(&[1.0, 0.0], &[0.0, 0.0]), enc(&[0.0, 1.0], &[0.0, 0.0])]);
        let w = crossmodal_weights(&s, &enc(&[10.0, 0.0], &[0.0, 0.0]), ScorerOptions::default()).unwrap();
        let e = 10f64.exp();
        assert!((w.a_tt[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((w.a_tt[0] - 0.9999546).abs() < 1e-7);
        assert!((w.a_tt[1] - 0.0000454).abs() < 1e-7);
    }

    #[test]
    fn identical_history_gives_uniform_weights() {
        let h = enc(&[0.2, 0.4, -0.1], &[1.0, 0.0, 0.3]);
        let s = state(&[h.clone(), h.clone(), h.clone()]);
        let w = crossmodal_weights(&s, &enc(&[5.0, -1.0, 2.0], &[0.0, 3.0, 1.0]), ScorerOptions::default()).unwrap();
        for a in [&w.a_tt, &w.a_tp, &w.a_pt, &w.a_pp] {
            for v in a {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_weights_example() {
        let s = state(&[enc(&[1.0, 2.0], &[5.0, 6.0]), enc(&[3.0, 4.0], &[7.0, 8.0])]);
        let half = vec![0.5, 0.5];
        let w = CrossmodalWeights {
            a_tt: half.clone(),
            a_tp: half.clone(),
            a_pt: half.clone(),
            a_pp: half,
        };
        assert_eq!(
            user_embedding(&s, Some(&w)),
            vec![1.0 + 3.0 + 5.0 + 7.0, 2.0 + 4.0 + 6.0 + 8.0]
        );
    }

    #[test]
    fn cold_start_scores_zero() {
        let s = UserState::<f64>::new(Tensor::zeros(&[0, 3]), Tensor::zeros(&[0, 3]), vec![]).unwrap();
        assert!(crossmodal_weights(&s, &enc(&[1.0; 3], &[1.0; 3]), ScorerOptions::default()).is_err());
        let u = user_embedding(&s, None);
        assert_eq!(u, vec![0.0; 3]);
        assert_eq!(click_score(&enc(&[4.0; 3], &[-2.0; 3]), &u).unwrap(), 0.0);
    }

    #[test]
    fn click_score_examples() {
        let c = enc(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(click_score(&c, &[2.0, 3.0]).unwrap(), 5.0);
        assert_eq!(click_score(&c, &[6.0, 9.0]).unwrap(), 15.0);
        assert!(click_score(&c, &[1.0]).is_err());
    }

    #[test]
    fn ranking_ties_keep_input_order() {
        let s = state(&[enc(&[1.0, 0.0], &[0.0, 1.0])]);
        let c = enc(&[0.5, 0.5], &[0.1, 0.2]);
        let ranked = rank_candidates(&s, &[c.clone(), c.clone(), c], ScorerOptions::default()).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(ranked[0].1, ranked[2].1);
        let single = rank_candidates(&s, &[enc(&[1.0, 1.0], &[1.0, 1.0])], ScorerOptions::default()).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].0, 0);
    }

    #[test]
    fn weights_depend_on_candidate() {
        let s = state(&[enc(&[1.0, 0.0], &[0.0, 0.0]), enc(&[0.0, 1.0], &[0.0, 0.0])]);
        let a = crossmodal_weights(&s, &enc(&[10.0, 0.0], &[0.0, 0.0]), ScorerOptions::default()).unwrap();
        let b = crossmodal_weights(&s, &enc(&[0.0, 10.0], &[0.0, 0.0]), ScorerOptions::default()).unwrap();
        assert!(a.a_tt[0] > a.a_tt[1]);
        assert!(b.a_tt[1] > b.a_tt[0]);
    }

    #[test]
    fn masked_rows_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<_> = (0..3).map(|_| random_enc(&mut rng, 4)).collect();
        let c = random_enc(&mut rng, 4);
        let mut padded = state(&h);
        padded.mask[1] = false;
        let trimmed = state(&[h[0].clone(), h[2].clone()]);
        let w = crossmodal_weights(&padded, &c, ScorerOptions::default()).unwrap();
        assert_eq!(w.a_pp[1], 0.0);
        let u1 = user_embedding(&padded, Some(&w));
        let w2 = crossmodal_weights(&trimmed, &c, ScorerOptions::default()).unwrap();
        let u2 = user_embedding(&trimmed, Some(&w2));
        for (a, b) in u1.iter().zip(&u2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn permuting_history_leaves_score_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<_> = (0..4).map(|_| random_enc(&mut rng, 5)).collect();
        let c = random_enc(&mut rng, 5);
        let score = |hist: &[NewsEncoding<f64>]| {
            let s = state(hist);
            let w = crossmodal_weights(&s, &c, ScorerOptions::default()).unwrap();
            click_score(&c, &user_embedding(&s, Some(&w))).unwrap()
        };
        let base = score(&h);
        let perm = [h[2].clone(), h[0].clone(), h[3].clone(), h[1].clone()];
        assert!((base - score(&perm)).abs() < 1e-12);
    }

    fn tape_scores(
        scorer: &UserScorer,
        store: &ParamStore<f64>,
        s: &UserState<f64>,
        cands: &[NewsEncoding<f64>],
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let d = s.dim();
        let ct: Vec<f64> = cands.iter().flat_map(|c| c.r_t.data().to_vec()).collect();
        let cp: Vec<f64> = cands.iter().flat_map(|c| c.r_p.data().to_vec()).collect();
        let ct = tape.constant(Tensor::matrix(cands.len(), d, ct).unwrap());
        let cp = tape.constant(Tensor::matrix(cands.len(), d, cp).unwrap());
        let ht = tape.constant(s.r_t.clone());
        let hp = tape.constant(s.r_p.clone());
        let out = scorer.score(&mut tape, store, Some((ht, hp, &s.mask)), ct, cp).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn tape_scorer_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let scorer = UserScorer::new(
            UserMode::Crossmodal,
            ScorerOptions::default(),
            &mut store,
            4,
            3,
            &mut rng,
        )
        .unwrap();
        for _ in 0..20 {
            let h: Vec<_> = (0..3).map(|_| random_enc(&mut rng, 4)).collect();
            let cands: Vec<_> = (0..5).map(|_| random_enc(&mut rng, 4)).collect();
            let mut s = state(&h);
            s.mask[rng.random_range(0..3)] = false;
            let got = tape_scores(&scorer, &store, &s, &cands);
            for (c, g) in cands.iter().zip(&got) {
                let w = crossmodal_weights(&s, c, ScorerOptions::default()).unwrap();
                let want = click_score(c, &user_embedding(&s, Some(&w))).unwrap();
                assert!((want - g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_modality_modes_ignore_the_other_modality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let text = UserScorer::new(UserMode::TextOnly, ScorerOptions::default(), &mut store, 3, 2, &mut rng).unwrap();
        let image = UserScorer::new(
            UserMode::ImageOnly,
            ScorerOptions::default(),
            &mut store,
            3,
            2,
            &mut rng,
        )
        .unwrap();
        let h: Vec<_> = (0..3).map(|_| random_enc(&mut rng, 3)).collect();
        let cands: Vec<_> = (0..4).map(|_| random_enc(&mut rng, 3)).collect();
        let jitter = |e: &NewsEncoding<f64>, text_side: bool| {
            let bump = |v: &Tensor<f64>| v.data().iter().map(|x| x + 0.7).collect::<Vec<_>>();
            if text_side {
                NewsEncoding::new(bump(&e.r_t), e.r_p.data().to_vec()).unwrap()
            } else {
                NewsEncoding::new(e.r_t.data().to_vec(), bump(&e.r_p)).unwrap()
            }
        };
        let s = state(&h);
        let s_img: Vec<_> = h.iter().map(|e| jitter(e, false)).collect();
        let c_img: Vec<_> = cands.iter().map(|e| jitter(e, false)).collect();
        assert_eq!(
            tape_scores(&text, &store, &s, &cands),
            tape_scores(&text, &store, &state(&s_img), &c_img)
        );
        let s_txt: Vec<_> = h.iter().map(|e| jitter(e, true)).collect();
        let c_txt: Vec<_> = cands.iter().map(|e| jitter(e, true)).collect();
        assert_eq!(image.mode, UserMode::ImageOnly);
        assert_eq!(
            tape_scores(&image, &store, &s, &cands),
            tape_scores(&image, &store, &state(&s_txt), &c_txt)
        );
    }

    #[test]
    fn vanilla_user_vector_is_candidate_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let scorer = UserScorer::new(UserMode::Vanilla, ScorerOptions::default(), &mut store, 4, 3, &mut rng).unwrap();
        let h: Vec<_> = (0..3).map(|_| random_enc(&mut rng, 4)).collect();
        let cands: Vec<_> = (0..5).map(|_| random_enc(&mut rng, 4)).collect();
        let s = state(&h);
        let u = scorer.static_user(&store, &s).unwrap().unwrap();
        let got = tape_scores(&scorer, &store, &s, &cands);
        for (c, g) in cands.iter().zip(&got) {
            assert!((click_score(c, &u).unwrap() - g).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_knob_divides_logits() {
        let s = state(&[
            enc(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]),
            enc(&[0.0, 1.0, 0.0, 0.0], &[0.0; 4]),
        ]);
        let c = enc(&[4.0, 0.0, 0.0, 0.0], &[0.0; 4]);
        let w = crossmodal_weights(&s, &c, ScorerOptions { scaled: true }).unwrap();
        let e = 2f64.exp();
        assert!((w.a_tt[0] - e / (e + 1.0)).abs() < 1e-15);
    }
}
