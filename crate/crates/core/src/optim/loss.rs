use serde::{Deserialize, Serialize};

use super::Result;
use crate::drag::{Cell, Mask};
use crate::model::FeatureMap;
use crate::tensor::{l1_loss_with, Reduction, Tensor};

/// Token-major (H·W)×channels expansion of a grid mask.
pub fn expand_mask(mask: &Mask, channels: usize) -> Tensor {
    let data = mask
        .as_slice()
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, channels))
        .collect();
    Tensor::new(vec![mask.height() * mask.width(), channels], data).expect("0/1 values")
}

/// `F_ref[Π]`: each target cell takes the feature column of its source;
/// colliding targets take the mean of their sources; untargeted cells are 0.
pub fn build_reference(f_ref: &FeatureMap, mapping: &[(Cell, Cell)]) -> FeatureMap {
    let d = f_ref.channels();
    let n = f_ref.tokens();
    let mut acc = vec![0.0; n * d];
    let mut hits = vec![0usize; n];
    for &(src, dst) in mapping {
        let p = dst.0 * f_ref.width + dst.1;
        for (a, s) in acc[p * d..(p + 1) * d].iter_mut().zip(f_ref.column(src)) {
            *a += s;
        }
        hits[p] += 1;
    }
    for (p, &k) in hits.iter().enumerate() {
        if k > 1 {
            acc[p * d..(p + 1) * d].iter_mut().for_each(|a| *a /= k as f64);
        }
    }
    FeatureMap {
        height: f_ref.height,
        width: f_ref.width,
        data: Tensor::new(vec![n, d], acc).expect("finite features"),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub cst: f64,
    pub total: f64,
}

/// `‖(F − F_ref[Π])·Y‖₁ + ‖(F − F_init)·M‖₁` on detached values.
pub fn total_loss(
    f: &FeatureMap,
    f_ref_mapped: &FeatureMap,
    y: &Mask,
    f_init: &FeatureMap,
    m: &Mask,
    reduction: Reduction,
) -> Result<LossTerms> {
    let d = f.channels();
    let rec = l1_loss_with(&f.data, &f_ref_mapped.data, &expand_mask(y, d), reduction)?;
    let cst = l1_loss_with(&f.data, &f_init.data, &expand_mask(m, d), reduction)?;
    Ok(LossTerms {
        rec,
        cst,
        total: rec + cst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmap(h: usize, w: usize, d: usize, f: impl Fn(usize) -> f64) -> FeatureMap {
        FeatureMap {
            height: h,
            width: w,
            data: Tensor::from_fn(vec![h * w, d], f).unwrap(),
        }
    }

    #[test]
    fn reference_mapping_cases() {
        let f = fmap(3, 3, 2, |i| i as f64);
        let region = Mask::rect(3, 3, 0, 0, 1, 1);
        let id: Vec<_> = region.iter_set().map(|c| (c, c)).collect();
        let out = build_reference(&f, &id);
        for c in region.iter_set() {
            assert_eq!(out.column(c), f.column(c));
        }
        assert_eq!(out.column((2, 2)), &[0.0, 0.0]);
        let single = build_reference(&f, &[((0, 1), (2, 0))]);
        assert_eq!(single.column((2, 0)), f.column((0, 1)));
        let collide = build_reference(&f, &[((0, 0), (1, 1)), ((2, 2), (1, 1))]);
        assert_eq!(collide.column((1, 1)), &[8.0, 9.0]);
    }

    #[test]
    fn counting_example() {
        let d = 5;
        let f = fmap(4, 4, d, |_| 1.0);
        let zero = fmap(4, 4, d, |_| 0.0);
        let y = Mask::rect(4, 4, 0, 0, 0, 2);
        let m = Mask::rect(4, 4, 2, 0, 3, 3);
        let l = total_loss(&f, &zero, &y, &zero, &m, Reduction::Sum).unwrap();
        assert_eq!(l.total, (d * (3 + 8)) as f64);
        let same = total_loss(&f, &f, &y, &f, &m, Reduction::Sum).unwrap();
        assert_eq!(same.total, 0.0);
    }
}
