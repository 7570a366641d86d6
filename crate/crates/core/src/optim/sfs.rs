use std::sync::Arc;

use rand::Rng;

use super::Result;
use crate::model::SfsSpec;
use crate::tensor::{GradTape, SpatialFilter, Tensor};

/// Uniform draw from the cutoff set.
pub fn draw_cutoff(cutoffs: &[f64], rng: &mut impl Rng) -> f64 {
    cutoffs[rng.random_range(0..cutoffs.len())]
}

/// Filter spec for the given cutoff over `layers`.
pub fn sfs_spec(omega: f64, order: u32, grid: (usize, usize), layers: &[usize]) -> Result<SfsSpec> {
    Ok(SfsSpec {
        filter: Arc::new(SpatialFilter::butterworth(grid.0, grid.1, omega, order)?),
        layers: layers.to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct SfsOutput {
    pub output: Tensor,
    pub omega: f64,
    /// Filtered keys and values, all frames stacked.
    pub keys: Tensor,
    pub values: Tensor,
}

/// Attention whose keys/values `Concat(cached, current)` are low-pass
/// filtered per frame grid with a cutoff drawn from `cutoffs`.
#[allow(clippy::too_many_arguments)]
pub fn sfs_attention(
    q: &Tensor,
    cached: &[(Tensor, Tensor)],
    current: (&Tensor, &Tensor),
    grid: (usize, usize),
    heads: usize,
    cutoffs: &[f64],
    order: u32,
    rng: &mut impl Rng,
) -> Result<SfsOutput> {
    let omega = draw_cutoff(cutoffs, rng);
    let filter = Arc::new(SpatialFilter::butterworth(grid.0, grid.1, omega, order)?);
    let mut tape = GradTape::new();
    let mut ks = Vec::with_capacity(cached.len() + 1);
    let mut vs = Vec::with_capacity(cached.len() + 1);
    for (k, v) in cached.iter().map(|(k, v)| (k, v)).chain(std::iter::once(current)) {
        let kc = tape.constant(k.clone());
        let vc = tape.constant(v.clone());
        ks.push(tape.spatial_filter(kc, filter.clone())?);
        vs.push(tape.spatial_filter(vc, filter.clone())?);
    }
    let k_all = tape.concat_rows(&ks)?;
    let v_all = tape.concat_rows(&vs)?;
    let qv = tape.constant(q.clone());
    let out = tape.attention(qv, k_all, v_all, heads)?;
    Ok(SfsOutput {
        output: tape.value(out),
        omega,
        keys: tape.value(k_all),
        values: tape.value(v_all),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::attention;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(seed: u64, rows: usize, cols: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![rows, cols], |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn unit_cutoff_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = field(1, 16, 4);
        let cached = vec![(field(2, 16, 4), field(3, 16, 4))];
        let (k, v) = (field(4, 16, 4), field(5, 16, 4));
        let out = sfs_attention(&q, &cached, (&k, &v), (4, 4), 1, &[1.0], 2, &mut rng).unwrap();
        let mut kk = cached[0].0.data().to_vec();
        kk.extend_from_slice(k.data());
        let mut vv = cached[0].1.data().to_vec();
        vv.extend_from_slice(v.data());
        let plain = attention(
            &q,
            &Tensor::new(vec![32, 4], kk).unwrap(),
            &Tensor::new(vec![32, 4], vv).unwrap(),
        )
        .unwrap();
        assert_eq!(out.omega, 1.0);
        assert!(out.output.max_abs_diff(&plain) < 1e-12);
    }

    #[test]
    fn constant_keys_pass_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = field(1, 16, 2);
        let k = Tensor::full(vec![16, 2], 0.7);
        let v = field(2, 16, 2);
        let out = sfs_attention(&q, &[], (&k, &v), (4, 4), 1, &[0.2], 2, &mut rng).unwrap();
        assert!(out.keys.max_abs_diff(&k) < 1e-12);
    }

    #[test]
    fn draws_cover_the_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = [0.2, 0.4, 0.6, 1.0];
        let mut seen = [0usize; 4];
        for _ in 0..400 {
            let w = draw_cutoff(&set, &mut rng);
            seen[set.iter().position(|x| *x == w).unwrap()] += 1;
        }
        assert!(seen.iter().all(|&n| n > 60), "{seen:?}");
    }
}
