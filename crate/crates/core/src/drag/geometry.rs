use std::f64::consts::PI;

use super::{DragError, Mask, Point, TargetResolution};

/// Shifts every set cell by `(dr, dc)`, dropping cells that leave the grid.
pub fn translate_region(region: &Mask, offset: (i64, i64), grid: (usize, usize)) -> TargetResolution {
    map_region(region, grid, |r, c| (r + offset.0, c + offset.1))
}

/// Rotates every set cell about `center` by `theta` (radians, row/col
/// frame: `dr' = dr·cosθ − dc·sinθ`, `dc' = dr·sinθ + dc·cosθ`) and rounds to
/// the nearest cell. Colliding targets keep all their source pairs.
pub fn rotate_region(region: &Mask, center: Point, theta: f64, grid: (usize, usize)) -> TargetResolution {
    let (cos, sin) = (theta.cos(), theta.sin());
    let (cr, cc) = (center.0 as f64, center.1 as f64);
    map_region(region, grid, |r, c| {
        let (dr, dc) = (r as f64 - cr, c as f64 - cc);
        (
            (cr + dr * cos - dc * sin).round() as i64,
            (cc + dr * sin + dc * cos).round() as i64,
        )
    })
}

fn map_region(region: &Mask, grid: (usize, usize), f: impl Fn(i64, i64) -> (i64, i64)) -> TargetResolution {
    let (h, w) = grid;
    let mut target = Mask::new(h, w);
    let mut mapping = Vec::with_capacity(region.count());
    for (r, c) in region.iter_set() {
        let (tr, tc) = f(r as i64, c as i64);
        if tr < 0 || tc < 0 || tr >= h as i64 || tc >= w as i64 {
            continue;
        }
        let dst = (tr as usize, tc as usize);
        target.set(dst.0, dst.1, true);
        mapping.push(((r, c), dst));
    }
    TargetResolution { target, mapping }
}

/// Signed angle from `p_src − c` to `p_dst − c`, in (−π, π].
pub fn angle_at_center(p_src: Point, center: Point, p_dst: Point) -> Result<f64, DragError> {
    if p_src == center || p_dst == center {
        return Err(DragError::Degenerate("trajectory point coincides with the rotation center".into()));
    }
    let a = ((p_src.1 - center.1) as f64).atan2((p_src.0 - center.0) as f64);
    let b = ((p_dst.1 - center.1) as f64).atan2((p_dst.0 - center.0) as f64);
    let mut d = b - a;
    if d <= -PI {
        d += 2.0 * PI;
    } else if d > PI {
        d -= 2.0 * PI;
    }
    Ok(d)
}

/// Latent-resolution mask: a cell is set iff at least a quarter of its
/// `s×s` pixel block is set.
pub fn downsample_mask(pixels: &Mask, upscale: usize) -> Result<Mask, DragError> {
    let (hp, wp) = pixels.dims();
    if upscale == 0 || hp % upscale != 0 || wp % upscale != 0 {
        return Err(DragError::Invalid {
            field: "mask".into(),
            message: format!("{hp}x{wp} pixel mask is not divisible by upscale {upscale}"),
        });
    }
    let (h, w) = (hp / upscale, wp / upscale);
    let block = upscale * upscale;
    Ok(Mask::from_fn(h, w, |r, c| {
        let mut n = 0;
        for pr in r * upscale..(r + 1) * upscale {
            for pc in c * upscale..(c + 1) * upscale {
                n += pixels.get(pr, pc) as usize;
            }
        }
        4 * n >= block
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translation_examples() {
        let h = Mask::from_cells(16, 16, [(4, 4), (4, 5)]).unwrap();
        let res = translate_region(&h, (0, 3), (16, 16));
        assert_eq!(res.target, Mask::from_cells(16, 16, [(4, 7), (4, 8)]).unwrap());
        assert_eq!(res.mapping, vec![((4, 4), (4, 7)), ((4, 5), (4, 8))]);
        let id = translate_region(&h, (0, 0), (16, 16));
        assert_eq!(id.target, h);
        assert!(id.mapping.iter().all(|(a, b)| a == b));
        let corner = Mask::from_cells(16, 16, [(0, 0)]).unwrap();
        let gone = translate_region(&corner, (-1, 0), (16, 16));
        assert!(gone.target.is_empty() && gone.mapping.is_empty());
    }

    #[test]
    fn rotation_examples() {
        let theta = angle_at_center((6, 4), (4, 4), (4, 6)).unwrap();
        assert!((theta - PI / 2.0).abs() < 1e-15);
        let h = Mask::from_cells(16, 16, [(6, 4)]).unwrap();
        assert_eq!(rotate_region(&h, (4, 4), theta, (16, 16)).mapping, vec![((6, 4), (4, 6))]);
        let p = Mask::from_cells(16, 16, [(5, 4)]).unwrap();
        let flipped = rotate_region(&p, (4, 4), PI, (16, 16));
        assert_eq!(flipped.target, Mask::from_cells(16, 16, [(3, 4)]).unwrap());
        let id = rotate_region(&h, (4, 4), 0.0, (16, 16));
        assert_eq!(id.target, h);
    }

    #[test]
    fn angle_conventions() {
        let c = (0, 0);
        assert!((angle_at_center((1, 0), c, (0, 1)).unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(angle_at_center((1, 0), c, (1, 0)).unwrap(), 0.0);
        assert_eq!(angle_at_center((1, 0), c, (-1, 0)).unwrap(), PI);
        assert_eq!(angle_at_center((-1, 0), c, (1, 0)).unwrap(), PI);
        assert!(angle_at_center(c, c, (1, 0)).is_err());
    }

    #[test]
    fn downsample_threshold() {
        assert_eq!(downsample_mask(&Mask::full(16, 16), 8).unwrap(), Mask::full(2, 2));
        let one = Mask::from_cells(16, 16, [(3, 3)]).unwrap();
        assert!(downsample_mask(&one, 8).unwrap().is_empty());
        let quarter = Mask::from_fn(16, 16, |r, c| r < 2 && c < 8);
        let down = downsample_mask(&quarter, 8).unwrap();
        assert_eq!(down, Mask::from_cells(2, 2, [(0, 0)]).unwrap());
        let just_under = Mask::from_fn(16, 16, |r, c| (r < 2 && c < 8) && !(r == 0 && c == 0));
        assert!(downsample_mask(&just_under, 8).unwrap().is_empty());
        assert!(downsample_mask(&Mask::full(10, 16), 8).is_err());
    }
}
