//! Embedding fusion.
//!
//! Two multi-scale rules combine the crops of one detection into `f_MS`, and
//! two multi-view rules combine an instance's per-view `f_MS` into `f_MV`:
//!
//! | rule                         | formula                                           |
//! |------------------------------|---------------------------------------------------|
//! | [`fuse_multiscale_direct`]   | `(1/k) Σ f_i`                                     |
//! | [`fuse_multiscale_weighted`] | `(1/k) Σ cos(f_1, f_i) · f_i`, `f_1` best-fit crop |
//! | [`fuse_multiview_direct`]    | `(1/m) Σ f_MS,i`                                  |
//! | [`fuse_multiview_global`]    | `(1/m) Σ (f_MS,i + cos(f_MS,i, f_G,i) · f_G,i)`   |
//!
//! Fused vectors are not renormalized; cosine scoring at query time is scale
//! free.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scene::Embedding;
use crate::{Error, Result};

/// Pairing of a multi-scale rule with a multi-view rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FusionScheme {
    /// Direct multi-scale, direct multi-view.
    Scheme1,
    /// Direct multi-scale, global-weighted multi-view.
    Scheme2,
    /// Similarity-weighted multi-scale, direct multi-view.
    Scheme3,
    /// Similarity-weighted multi-scale, global-weighted multi-view.
    #[default]
    Scheme4,
}

impl FusionScheme {
    pub const ALL: [FusionScheme; 4] = [Self::Scheme1, Self::Scheme2, Self::Scheme3, Self::Scheme4];

    pub fn number(self) -> u8 {
        match self {
            Self::Scheme1 => 1,
            Self::Scheme2 => 2,
            Self::Scheme3 => 3,
            Self::Scheme4 => 4,
        }
    }

    pub fn weighted_multiscale(self) -> bool {
        matches!(self, Self::Scheme3 | Self::Scheme4)
    }

    pub fn global_multiview(self) -> bool {
        matches!(self, Self::Scheme2 | Self::Scheme4)
    }

    /// Crop ratios used with this scheme in the qualitative comparison.
    /// Scheme 3 widens crops to `[1, 2, 4]`; the others use the defaults.
    pub fn reference_crop_ratios(self) -> Vec<f64> {
        match self {
            Self::Scheme3 => vec![1.0, 2.0, 4.0],
            _ => vec![0.8, 1.0, 1.2],
        }
    }

    /// Multi-scale step for one detection; `crops[0]` must be the best-fit crop.
    pub fn fuse_crops(self, crops: &[Embedding]) -> Result<Embedding> {
        if self.weighted_multiscale() {
            fuse_multiscale_weighted(crops)
        } else {
            fuse_multiscale_direct(crops)
        }
    }

    /// Multi-view step over aligned per-view instance and whole-image vectors.
    pub fn fuse_views(self, views: &[Embedding], globals: &[Embedding]) -> Result<Embedding> {
        if self.global_multiview() {
            if views.len() != globals.len() {
                return Err(Error::DimensionMismatch { expected: views.len(), found: globals.len() });
            }
            let pairs: Vec<_> = views.iter().zip(globals).collect();
            fuse_multiview_global(&pairs)
        } else {
            fuse_multiview_direct(views)
        }
    }
}

impl From<FusionScheme> for u8 {
    fn from(s: FusionScheme) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for FusionScheme {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::Scheme1),
            2 => Ok(Self::Scheme2),
            3 => Ok(Self::Scheme3),
            4 => Ok(Self::Scheme4),
            _ => Err(format!("fusion scheme must be 1..=4, got {v}")),
        }
    }
}

impl fmt::Display for FusionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scheme {}", self.number())
    }
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; errors on a zero vector or mismatched dimensions.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    let (a, b) = (a.as_slice(), b.as_slice());
    let (na2, nb2) = (dot(a, a), dot(b, b));
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt(x * x) == x exactly, so a vector's similarity with itself is exactly 1
    Ok((dot(a, b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

/// `(1/n) Σ w_i · v_i`.
fn weighted_mean<'a>(items: impl ExactSizeIterator<Item = (f64, &'a Embedding)>) -> Result<Embedding> {
    let n = items.len();
    let mut acc: Option<Vec<f64>> = None;
    for (w, v) in items {
        let acc = acc.get_or_insert_with(|| vec![0.0; v.dim()]);
        if acc.len() != v.dim() {
            return Err(Error::DimensionMismatch { expected: acc.len(), found: v.dim() });
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += w * x;
        }
    }
    let acc = acc.ok_or(Error::Empty("no vectors to fuse"))?;
    Ok(Embedding::new(acc.into_iter().map(|x| x / n as f64).collect()))
}

/// Plain mean of crop vectors.
pub fn fuse_multiscale_direct(crops: &[Embedding]) -> Result<Embedding> {
    weighted_mean(crops.iter().map(|f| (1.0, f)))
}

/// Cosine weight of every crop against the best-fit crop `crops[0]`.
pub fn multiscale_weights(crops: &[Embedding]) -> Result<Vec<f64>> {
    let best = crops.first().ok_or(Error::Empty("no crops to fuse"))?;
    crops.iter().map(|f| cosine(best, f)).collect()
}

/// Mean of crops weighted by their similarity to the best-fit crop
/// `crops[0]`, so wide crops that drift from the object count less.
pub fn fuse_multiscale_weighted(crops: &[Embedding]) -> Result<Embedding> {
    let weights = multiscale_weights(crops)?;
    weighted_mean(weights.into_iter().zip(crops))
}

/// Plain mean of per-view vectors.
pub fn fuse_multiview_direct(views: &[Embedding]) -> Result<Embedding> {
    weighted_mean(views.iter().map(|f| (1.0, f)))
}

/// Per-view vectors augmented by their whole-image vector, scaled by how
/// similar the two are, then averaged.
pub fn fuse_multiview_global(views: &[(&Embedding, &Embedding)]) -> Result<Embedding> {
    let (first, _) = views.first().ok_or(Error::Empty("no views to fuse"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for (local, global) in views {
        check_dims(first, local)?;
        let w = cosine(local, global)?;
        for ((a, l), g) in acc.iter_mut().zip(local.as_slice()).zip(global.as_slice()) {
            *a += l + w * g;
        }
    }
    let m = views.len() as f64;
    Ok(Embedding::new(acc.into_iter().map(|x| x / m).collect()))
}

/// Index of the best-fit crop: ratio 1.0 if present, else the smallest ratio.
pub fn best_fit_crop(ratios: &[f64]) -> Option<usize> {
    ratios.iter().position(|&r| r == 1.0).or_else(|| {
        ratios
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    })
}

/// Reorder crops so the best-fit crop comes first; the rest keep their order.
pub fn best_fit_first(crops: &[Embedding], ratios: &[f64]) -> Result<Vec<Embedding>> {
    if crops.len() != ratios.len() {
        return Err(Error::DimensionMismatch { expected: ratios.len(), found: crops.len() });
    }
    let best = best_fit_crop(ratios).ok_or(Error::Empty("no crops to fuse"))?;
    let mut out = Vec::with_capacity(crops.len());
    out.push(crops[best].clone());
    out.extend(crops.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, c)| c.clone()));
    Ok(out)
}

/// Full scheme: multi-scale per view, then multi-view across views.
/// Each crop set must list its best-fit crop first.
pub fn fuse_for_scheme(scheme: FusionScheme, crop_sets: &[Vec<Embedding>], globals: &[Embedding]) -> Result<Embedding> {
    let views = crop_sets
        .iter()
        .map(|crops| scheme.fuse_crops(crops))
        .collect::<Result<Vec<_>>>()?;
    scheme.fuse_views(&views, globals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&e(&[3.0, 4.0]), &e(&[3.0, 4.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])), Err(Error::ZeroVector)));
        assert!(matches!(cosine(&e(&[1.0]), &e(&[1.0, 0.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn direct_rules() {
        assert_eq!(fuse_multiscale_direct(&[e(&[1.0, 0.0]), e(&[0.0, 1.0])]).unwrap(), e(&[0.5, 0.5]));
        assert_eq!(fuse_multiview_direct(&[e(&[2.0, 0.0]), e(&[0.0, 2.0])]).unwrap(), e(&[1.0, 1.0]));
        assert_eq!(fuse_multiview_direct(&[e(&[0.3, -2.0])]).unwrap(), e(&[0.3, -2.0]));
        assert!(matches!(fuse_multiscale_direct(&[]), Err(Error::Empty(_))));
        assert!(fuse_multiview_direct(&[e(&[1.0]), e(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn weighted_multiscale_orthogonal_crop_contributes_nothing() {
        let f = fuse_multiscale_weighted(&[e(&[1.0, 0.0]), e(&[0.0, 1.0])]).unwrap();
        assert_eq!(f, e(&[0.5, 0.0]));
        let single = fuse_multiscale_weighted(&[e(&[0.25, 0.5])]).unwrap();
        assert_eq!(single, e(&[0.25, 0.5]));
        assert!(matches!(fuse_multiscale_weighted(&[e(&[1.0, 0.0]), e(&[0.0, 0.0])]), Err(Error::ZeroVector)));
    }

    #[test]
    fn global_multiview_identities() {
        let u = e(&[0.6, 0.8]);
        assert_eq!(fuse_multiview_global(&[(&u, &u)]).unwrap(), e(&[1.2, 1.6]));
        let ms = e(&[1.0, 0.0]);
        let g = e(&[0.0, 5.0]);
        assert_eq!(fuse_multiview_global(&[(&ms, &g)]).unwrap(), ms);
        assert!(matches!(fuse_multiview_global(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn scheme_identity_chains() {
        let u = e(&[0.0, 1.0, 0.0]);
        let g = e(&[1.0, 0.0, 0.0]);
        assert_eq!(fuse_for_scheme(FusionScheme::Scheme1, &[vec![u.clone()]], &[g.clone()]).unwrap(), u);
        assert_eq!(fuse_for_scheme(FusionScheme::Scheme4, &[vec![u.clone()]], &[g.clone()]).unwrap(), u);
        assert!(FusionScheme::Scheme2.fuse_views(&[u.clone()], &[]).is_err());
    }

    #[test]
    fn best_fit_crop_selection() {
        assert_eq!(best_fit_crop(&[0.8, 1.0, 1.2]), Some(1));
        assert_eq!(best_fit_crop(&[2.0, 1.5, 4.0]), Some(1));
        assert_eq!(best_fit_crop(&[]), None);
        let crops = [e(&[1.0]), e(&[2.0]), e(&[3.0])];
        let ordered = best_fit_first(&crops, &[0.8, 1.0, 1.2]).unwrap();
        assert_eq!(ordered, vec![e(&[2.0]), e(&[1.0]), e(&[3.0])]);
    }

    #[test]
    fn scheme_serde_as_number() {
        assert_eq!(serde_json::to_string(&FusionScheme::Scheme3).unwrap(), "3");
        assert_eq!(serde_json::from_str::<FusionScheme>("2").unwrap(), FusionScheme::Scheme2);
        assert!(serde_json::from_str::<FusionScheme>("5").is_err());
        assert_eq!(FusionScheme::Scheme3.reference_crop_ratios(), vec![1.0, 2.0, 4.0]);
    }

    fn vecs(k: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), 1..=k)
    }

    proptest! {
        #[test]
        fn mean_scale_covariance(vs in vecs(6, 5), alpha in 0.01f64..50.0) {
            let base: Vec<Embedding> = vs.iter().map(|v| e(v)).collect();
            let scaled: Vec<Embedding> = base.iter().map(|v| v.scaled(alpha)).collect();
            let a = fuse_multiscale_direct(&scaled).unwrap();
            let b = fuse_multiscale_direct(&base).unwrap().scaled(alpha);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn direct_rules_permutation_invariant(vs in vecs(6, 4), rot in 0usize..6) {
            let base: Vec<Embedding> = vs.iter().map(|v| e(v)).collect();
            let mut perm = base.clone();
            perm.rotate_left(rot % base.len());
            for f in [fuse_multiscale_direct, fuse_multiview_direct] {
                let a = f(&base).unwrap();
                let b = f(&perm).unwrap();
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn weighted_rule_privileges_first_crop(vs in vecs(5, 4)) {
            prop_assume!(vs.len() >= 2 && vs.iter().all(|v| e(v).norm() > 1e-3));
            let base: Vec<Embedding> = vs.iter().map(|v| e(v)).collect();
            let mut swapped = base.clone();
            swapped.swap(0, 1);
            let w0 = multiscale_weights(&base).unwrap();
            let w1 = multiscale_weights(&swapped).unwrap();
            // weight of the reference crop is always one
            prop_assert!((w0[0] - 1.0).abs() < 1e-12 && (w1[0] - 1.0).abs() < 1e-12);
            // weights are symmetric in the pair, so swapping preserves w(f1, f2)
            prop_assert!((w0[1] - w1[1]).abs() < 1e-12);
        }

        #[test]
        fn weights_ignore_positive_rescaling(vs in vecs(5, 4), alpha in 0.01f64..100.0, which in 0usize..5) {
            prop_assume!(vs.iter().all(|v| e(v).norm() > 1e-3));
            let base: Vec<Embedding> = vs.iter().map(|v| e(v)).collect();
            let mut scaled = base.clone();
            let i = which % base.len();
            scaled[i] = scaled[i].scaled(alpha);
            let w0 = multiscale_weights(&base).unwrap();
            let w1 = multiscale_weights(&scaled).unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
