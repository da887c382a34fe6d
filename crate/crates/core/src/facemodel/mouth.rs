use serde::{Deserialize, Serialize};

use super::{FaceModel, FaceParams};
use crate::error::{check_len, Error, Result};

pub const N_MOUTH: usize = 35;

/// Name prefixes of the default mouth group.
pub const MOUTH_PREFIXES: [&str; 4] = ["jaw", "mouth", "cheek", "nose"];

/// The 35 blendshape indices replaced during lip-sync, in clip column order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MouthIndexSet(Vec<usize>);

impl TryFrom<Vec<usize>> for MouthIndexSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v, usize::MAX)
    }
}

impl From<MouthIndexSet> for Vec<usize> {
    fn from(s: MouthIndexSet) -> Self {
        s.0
    }
}

impl MouthIndexSet {
    pub fn new(indices: Vec<usize>, n_blendshapes: usize) -> Result<Self> {
        if indices.len() != N_MOUTH {
            return Err(Error::MouthIndexSet(format!(
                "expected {N_MOUTH} indices, got {}",
                indices.len()
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::MouthIndexSet("duplicate index".into()));
        }
        if let Some(&i) = sorted.last().filter(|&&i| i >= n_blendshapes) {
            return Err(Error::MouthIndexSet(format!(
                "index {i} out of range for {n_blendshapes} blendshapes"
            )));
        }
        Ok(Self(indices))
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], model: &FaceModel) -> Result<Self> {
        let indices = names
            .iter()
            .map(|n| {
                model.blendshape_index(n.as_ref()).ok_or_else(|| {
                    Error::MouthIndexSet(format!("unknown blendshape {:?}", n.as_ref()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices, model.n_blendshapes())
    }

    /// Every blendshape whose name starts with one of [`MOUTH_PREFIXES`].
    pub fn from_prefixes(model: &FaceModel) -> Result<Self> {
        let indices = model
            .blendshape_names
            .iter()
            .enumerate()
            .filter(|(_, n)| MOUTH_PREFIXES.iter().any(|p| n.starts_with(p)))
            .map(|(i, _)| i)
            .collect();
        Self::new(indices, model.n_blendshapes())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }
}

/// Copy of `target` whose mouth entries are replaced by `mouth_values`.
pub fn fuse_mouth(
    target: &FaceParams,
    mouth_values: &[f64],
    set: &MouthIndexSet,
) -> Result<FaceParams> {
    check_len("mouth values", N_MOUTH, mouth_values.len())?;
    if let Some(&i) = set.indices().iter().find(|&&i| i >= target.beta.len()) {
        return Err(Error::MouthIndexSet(format!(
            "index {i} out of range for {} blendshapes",
            target.beta.len()
        )));
    }
    let mut out = target.clone();
    for (&i, &v) in set.indices().iter().zip(mouth_values) {
        out.beta[i] = v;
    }
    Ok(out)
}

pub fn extract_mouth(params: &FaceParams, set: &MouthIndexSet) -> Vec<f64> {
    set.indices().iter().map(|&i| params.beta[i]).collect()
}

/// `mean(max(|b - 0.5|, 0.5) - 0.5)`: zero on the unit box, linear outside.
pub fn constraint_violation(beta: &[f64]) -> f64 {
    if beta.is_empty() {
        return 0.0;
    }
    beta.iter()
        .map(|b| (b - 0.5).abs().max(0.5) - 0.5)
        .sum::<f64>()
        / beta.len() as f64
}

pub fn constraint_violation_grad(beta: &[f64]) -> Vec<f64> {
    let n = beta.len() as f64;
    beta.iter()
        .map(|&b| {
            let d = b - 0.5;
            if d.abs() > 0.5 {
                d.signum() / n
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticHead, SyntheticHeadConfig};
    use proptest::prelude::*;

    fn setup() -> (FaceModel, MouthIndexSet) {
        let m = SyntheticHead::build(&SyntheticHeadConfig::small()).model;
        let s = MouthIndexSet::from_prefixes(&m).unwrap();
        (m, s)
    }

    #[test]
    fn constraint_examples() {
        assert_eq!(constraint_violation(&[0.0, 0.3, 1.0]), 0.0);
        assert_eq!(constraint_violation(&[1.5]), 0.5);
        assert_eq!(constraint_violation(&[-0.25, 0.5]), 0.125);
    }

    #[test]
    fn prefix_heuristic_selects_35() {
        let (m, s) = setup();
        assert_eq!(s.indices().len(), N_MOUTH);
        for &i in s.indices() {
            let n = &m.blendshape_names[i];
            assert!(MOUTH_PREFIXES.iter().any(|p| n.starts_with(p)), "{n}");
        }
    }

    #[test]
    fn bad_index_sets_rejected() {
        assert!(MouthIndexSet::new((0..34).collect(), 55).is_err());
        let mut dup: Vec<usize> = (0..35).collect();
        dup[3] = 4;
        assert!(MouthIndexSet::new(dup, 55).is_err());
        assert!(MouthIndexSet::new((20..55).collect(), 54).is_err());
    }

    #[test]
    fn fusing_current_values_is_identity() {
        let (m, s) = setup();
        let mut p = FaceParams::neutral_for(&m);
        p.beta.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 / 60.0);
        let same = fuse_mouth(&p, &extract_mouth(&p, &s), &s).unwrap();
        assert_eq!(same, p);
    }

    #[test]
    fn zero_mouth_only_touches_index_set() {
        let (m, s) = setup();
        let mut p = FaceParams::neutral_for(&m);
        p.beta.iter_mut().for_each(|b| *b = 0.7);
        let f = fuse_mouth(&p, &[0.0; N_MOUTH], &s).unwrap();
        for (i, b) in f.beta.iter().enumerate() {
            assert_eq!(*b, if s.contains(i) { 0.0 } else { 0.7 });
        }
    }

    #[test]
    fn wrong_mouth_length_rejected() {
        let (m, s) = setup();
        let p = FaceParams::neutral_for(&m);
        assert!(fuse_mouth(&p, &[0.0; 34], &s).is_err());
    }

    proptest! {
        #[test]
        fn fusion_preserves_other_entries(
            beta in prop::collection::vec(-1.0f64..2.0, 55),
            mouth in prop::collection::vec(0.0f64..1.0, 35),
        ) {
            let (m, s) = setup();
            let mut p = FaceParams::neutral_for(&m);
            p.beta = beta.clone();
            let f = fuse_mouth(&p, &mouth, &s).unwrap();
            for i in 0..55 {
                if !s.contains(i) {
                    prop_assert_eq!(f.beta[i].to_bits(), beta[i].to_bits());
                }
            }
            prop_assert_eq!(extract_mouth(&f, &s), mouth);
            prop_assert_eq!(&f.alpha, &p.alpha);
            prop_assert_eq!(f.rot_head, p.rot_head);
        }

        #[test]
        fn constraint_zero_iff_in_box(beta in prop::collection::vec(-2.0f64..3.0, 1..20)) {
            let inside = beta.iter().all(|b| (0.0..=1.0).contains(b));
            let c = constraint_violation(&beta);
            prop_assert!(c >= 0.0);
            prop_assert_eq!(c == 0.0, inside);
        }

        #[test]
        fn constraint_convex_per_coordinate(x in -2.0f64..3.0, y in -2.0f64..3.0, t in 0.0f64..1.0) {
            let f = |b: f64| constraint_violation(&[b, 0.5]);
            let mid = f(t * x + (1.0 - t) * y);
            prop_assert!(mid <= t * f(x) + (1.0 - t) * f(y) + 1e-12);
        }
    }
}
