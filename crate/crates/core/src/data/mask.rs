use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::lesion::NUM_LESIONS;

/// Stacks up to four per-lesion rasters (order EX, HE, MA, SE) into a binary
/// (4, H, W) mask. Absent rasters become all-zero channels; any non-zero pixel
/// value counts as lesion.
pub fn encode_mask(rasters: &[Option<Array2<u8>>; NUM_LESIONS], shape: (usize, usize)) -> Result<Array3<u8>> {
    let (h, w) = shape;
    let mut out = Array3::<u8>::zeros((NUM_LESIONS, h, w));
    for (k, r) in rasters.iter().enumerate() {
        let Some(r) = r else { continue };
        if r.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "lesion raster {k} is {:?}, expected {:?}",
                r.dim(),
                (h, w)
            )));
        }
        out.index_axis_mut(ndarray::Axis(0), k)
            .zip_mut_with(r, |o, &v| *o = (v > 0) as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_ex_present() {
        let ex = Array2::from_shape_fn((4, 5), |(y, x)| if (y + x) % 2 == 0 { 255 } else { 0 });
        let m = encode_mask(&[Some(ex), None, None, None], (4, 5)).unwrap();
        assert!(m.index_axis(ndarray::Axis(0), 0).iter().any(|&v| v == 1));
        for k in 1..4 {
            assert!(m.index_axis(ndarray::Axis(0), k).iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn all_absent_is_zero() {
        let m = encode_mask(&[None, None, None, None], (3, 7)).unwrap();
        assert_eq!(m.dim(), (4, 3, 7));
        assert!(m.iter().all(|&v| v == 0));
    }

    #[test]
    fn binarizes_255() {
        let r = Array2::from_shape_vec((1, 3), vec![0u8, 255, 255]).unwrap();
        let m = encode_mask(&[None, Some(r), None, None], (1, 3)).unwrap();
        assert_eq!(m.index_axis(ndarray::Axis(0), 1).iter().copied().collect::<Vec<_>>(), vec![0, 1, 1]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = Array2::<u8>::zeros((4, 4));
        let b = Array2::<u8>::zeros((4, 5));
        assert!(encode_mask(&[Some(a), Some(b), None, None], (4, 4)).is_err());
    }
}
