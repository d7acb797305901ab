use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

/// Source coordinate for output index `i` on a corner-aligned grid.
fn source_coord(i: usize, out: usize, src: usize) -> f64 {
    if out <= 1 || src <= 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (out - 1) as f64
    }
}

fn neighbors(x: f64, src: usize) -> (usize, usize, f64) {
    let lo = (x.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, x - lo as f64)
}

/// Linear resampling of a 1D series to `target` points, first and last samples aligned.
pub fn resample_linear<T: Scalar>(series: &[T], target: usize) -> Result<Vec<T>> {
    if series.is_empty() || target == 0 {
        return Err(Error::Config(format!(
            "cannot resample {} samples to {target}",
            series.len()
        )));
    }
    Ok((0..target)
        .map(|i| {
            let (lo, hi, frac) = neighbors(source_coord(i, target, series.len()), series.len());
            let f = T::of(frac);
            series[lo] + (series[hi] - series[lo]) * f
        })
        .collect())
}

/// Bilinear resize of an `H'×W'` plane with a corner-aligned sampling grid.
pub fn resize_bilinear<T: Scalar>(plane: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config(format!(
            "resize target must be positive, got {target_h}x{target_w}"
        )));
    }
    let (h, w) = match plane.shape() {
        &[h, w] if h >= 1 && w >= 1 => (h, w),
        s => {
            return Err(Error::Dimension {
                op: "resize_bilinear",
                lhs: s.to_vec(),
                rhs: vec![target_h, target_w],
            })
        }
    };
    if (h, w) == (target_h, target_w) {
        return Ok(plane.clone());
    }
    let src = plane.data();
    let cols: Vec<(usize, usize, T)> = (0..target_w)
        .map(|j| {
            let (lo, hi, f) = neighbors(source_coord(j, target_w, w), w);
            (lo, hi, T::of(f))
        })
        .collect();
    let mut out = Vec::with_capacity(target_h * target_w);
    for i in 0..target_h {
        let (r0, r1, fy) = neighbors(source_coord(i, target_h, h), h);
        let fy = T::of(fy);
        for &(c0, c1, fx) in &cols {
            let top = src[r0 * w + c0] + (src[r0 * w + c1] - src[r0 * w + c0]) * fx;
            let bottom = src[r1 * w + c0] + (src[r1 * w + c1] - src[r1 * w + c0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    Tensor::new(vec![target_h, target_w], out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn constant_plane_stays_constant() {
        let p = Tensor::full(vec![3, 5], 2.5f64).unwrap();
        let r = resize_bilinear(&p, 7, 11).unwrap();
        assert!(r.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn same_size_is_identity() {
        let p = Tensor::new(vec![2, 3], vec![0.1f64, 0.7, -3.0, 4.0, 5.5, 6.0]).unwrap();
        let r = resize_bilinear(&p, 2, 3).unwrap();
        for (a, b) in r.data().iter().zip(p.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn middle_column_is_half() {
        let p = Tensor::new(vec![2, 2], vec![0.0f64, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&p, 2, 3).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn single_pixel_source() {
        let p = Tensor::new(vec![1, 1], vec![4.0f64]).unwrap();
        let r = resize_bilinear(&p, 3, 2).unwrap();
        assert!(r.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn rejects_zero_target() {
        let p = Tensor::<f64>::zeros(vec![2, 2]);
        assert!(matches!(resize_bilinear(&p, 0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn resample_endpoints_align() {
        let r = resample_linear(&[0.0f64, 10.0], 5).unwrap();
        assert_eq!(r, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
    }

    proptest! {
        #[test]
        fn output_within_source_range(
            h in 1usize..6, w in 1usize..6, th in 1usize..9, tw in 1usize..9, seed in any::<u64>()
        ) {
            let data: Vec<f64> = (0..h * w).map(|i| ((i as u64 ^ seed) % 97) as f64 - 40.0).collect();
            let p = Tensor::new(vec![h, w], data.clone()).unwrap();
            let r = resize_bilinear(&p, th, tw).unwrap();
            let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            // corners are sampled exactly
            prop_assert_eq!(r.at(&[0, 0]), data[0]);
            if th > 1 && tw > 1 {
                prop_assert_eq!(r.at(&[th - 1, tw - 1]), data[h * w - 1]);
            }
        }
    }
}
