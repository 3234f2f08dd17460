//! Pixel-permutation views: rotations, flips, skews, patch and pixel
//! shuffles, inner rotations, plus negation.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Admissibility, Operator, Permutation, View, ViewError, ViewKind};
use crate::tensor::{seeded_rng, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quarter {
    Cw90,
    Cw180,
    Cw270,
}

impl Quarter {
    pub fn from_degrees(deg: i64) -> Option<Self> {
        match deg.rem_euclid(360) {
            90 => Some(Self::Cw90),
            180 => Some(Self::Cw180),
            270 => Some(Self::Cw270),
            _ => None,
        }
    }

    pub fn degrees(self) -> i64 {
        match self {
            Self::Cw90 => 90,
            Self::Cw180 => 180,
            Self::Cw270 => 270,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipAxis {
    /// Upside down: rows reversed.
    Vertical,
    /// Mirror: columns reversed.
    Horizontal,
}

fn plane_perm(dims: Dims, source: impl Fn(usize, usize) -> (usize, usize)) -> Permutation {
    let (h, w) = (dims.height, dims.width);
    let mut map = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y, x);
            map.push(sy * w + sx);
        }
    }
    Permutation::from_map_unchecked(map)
}

fn roll_offsets(dims: Dims, slope: f64) -> Vec<i64> {
    (0..dims.width).map(|j| (slope * j as f64).round() as i64).collect()
}

impl View {
    pub fn identity(dims: Dims) -> Self {
        Self::from_plane_perm(ViewKind::Identity, dims, Permutation::identity(dims.plane()))
    }

    pub fn rotate_cw(dims: Dims, quarter: Quarter) -> Result<Self, ViewError> {
        let (h, w) = (dims.height, dims.width);
        if quarter != Quarter::Cw180 && !dims.is_square() {
            return Err(ViewError::NotSquare(dims));
        }
        let p = match quarter {
            Quarter::Cw90 => plane_perm(dims, |y, x| (h - 1 - x, y)),
            Quarter::Cw180 => plane_perm(dims, |y, x| (h - 1 - y, w - 1 - x)),
            Quarter::Cw270 => plane_perm(dims, |y, x| (x, w - 1 - y)),
        };
        Ok(Self::from_plane_perm(ViewKind::RotateCw(quarter), dims, p))
    }

    pub fn flip(dims: Dims, axis: FlipAxis) -> Self {
        let (h, w) = (dims.height, dims.width);
        let p = match axis {
            FlipAxis::Vertical => plane_perm(dims, |y, x| (h - 1 - y, x)),
            FlipAxis::Horizontal => plane_perm(dims, |y, x| (y, w - 1 - x)),
        };
        Self::from_plane_perm(ViewKind::Flip(axis), dims, p)
    }

    /// Skew approximated by rolling column `j` down by `round(slope * j)`.
    pub fn skew(dims: Dims, slope: f64) -> Result<Self, ViewError> {
        if !slope.is_finite() {
            return Err(ViewError::Invalid(format!("skew slope {slope} is not finite")));
        }
        Self::skew_offsets(dims, roll_offsets(dims, slope))
    }

    /// Rolls column `j` down (cyclically) by `offsets[j]` rows.
    pub fn skew_offsets(dims: Dims, offsets: Vec<i64>) -> Result<Self, ViewError> {
        if offsets.len() != dims.width {
            return Err(ViewError::Invalid(format!(
                "skew needs {} column offsets, got {}",
                dims.width,
                offsets.len()
            )));
        }
        let h = dims.height as i64;
        let p = plane_perm(dims, |y, x| (((y as i64 - offsets[x]).rem_euclid(h)) as usize, x));
        Ok(Self::from_plane_perm(ViewKind::Skew { offsets }, dims, p))
    }

    /// Splits the image into `grid × grid` equal patches and rearranges
    /// them: output patch `i` is input patch `patches[i]` (row-major).
    pub fn patch_permutation(dims: Dims, grid: usize, patches: Permutation) -> Result<Self, ViewError> {
        if grid == 0 || !dims.height.is_multiple_of(grid) || !dims.width.is_multiple_of(grid) {
            return Err(ViewError::Invalid(format!("grid {grid} does not divide image {}x{}", dims.height, dims.width)));
        }
        if patches.len() != grid * grid {
            return Err(ViewError::Invalid(format!(
                "patch permutation has {} entries, grid needs {}",
                patches.len(),
                grid * grid
            )));
        }
        let (ph, pw) = (dims.height / grid, dims.width / grid);
        let map = patches.map().to_vec();
        let p = plane_perm(dims, |y, x| {
            let src = map[(y / ph) * grid + x / pw];
            ((src / grid) * ph + y % ph, (src % grid) * pw + x % pw)
        });
        Ok(Self::from_plane_perm(ViewKind::PatchPermutation { grid, patches }, dims, p))
    }

    pub fn random_patch_permutation(dims: Dims, grid: usize, seed: u64) -> Result<Self, ViewError> {
        let patches = Permutation::random(grid * grid, &mut seeded_rng(seed));
        Self::patch_permutation(dims, grid, patches)
    }

    /// A pixel permutation given either over one plane (applied to every
    /// channel) or over the full flattened vector.
    pub fn pixel_permutation(dims: Dims, perm: Permutation) -> Result<Self, ViewError> {
        if perm.len() == dims.plane() {
            Ok(Self::from_plane_perm(ViewKind::PixelPermutation, dims, perm))
        } else if perm.len() == dims.len() {
            Ok(Self::from_operator(
                ViewKind::PixelPermutation,
                Admissibility::ExactPermutation,
                dims,
                Operator::Perm(Arc::new(perm)),
            ))
        } else {
            Err(ViewError::Invalid(format!(
                "permutation of length {} fits neither the plane ({}) nor the full image ({}) of {dims}",
                perm.len(),
                dims.plane(),
                dims.len()
            )))
        }
    }

    pub fn random_pixel_permutation(dims: Dims, seed: u64) -> Self {
        let p = Permutation::random(dims.plane(), &mut seeded_rng(seed));
        Self::from_plane_perm(ViewKind::PixelPermutation, dims, p)
    }

    /// A signed permutation over the full vector.
    pub fn from_signed_permutation(dims: Dims, perm: Permutation, negate: Vec<bool>) -> Result<Self, ViewError> {
        if perm.len() != dims.len() || negate.len() != dims.len() {
            return Err(ViewError::Invalid(format!("signed permutation must have {} entries", dims.len())));
        }
        Ok(Self::from_operator(
            ViewKind::PixelPermutation,
            Admissibility::SignedPermutation,
            dims,
            Operator::SignedPerm { perm: Arc::new(perm), negate: Arc::new(negate) },
        ))
    }

    /// Color inversion `x -> -x` over every element.
    pub fn negate(dims: Dims) -> Self {
        Self::from_operator(
            ViewKind::Negate,
            Admissibility::SignedPermutation,
            dims,
            Operator::SignedPerm {
                perm: Arc::new(Permutation::identity(dims.len())),
                negate: Arc::new(vec![true; dims.len()]),
            },
        )
    }

    /// Rotates a disc by rolling each discrete ring of pixels.
    ///
    /// A pixel at distance `d` from `center` (in pixel-centre coordinates,
    /// `(row, col)`) belongs to ring `round(d)` when `d < radius`. Within a
    /// ring, pixels are ordered by angle (clockwise on screen) and rolled by
    /// `round(angle / 2π · ring_len)` (stored modulo the ring length).
    /// Pixels outside stay put.
    pub fn inner_rotation(dims: Dims, center: (f64, f64), radius: f64, angle: f64) -> Result<Self, ViewError> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(ViewError::Invalid(format!("inner rotation radius must be positive, got {radius}")));
        }
        if !angle.is_finite() || !center.0.is_finite() || !center.1.is_finite() {
            return Err(ViewError::Invalid("inner rotation parameters must be finite".into()));
        }
        let (cy, cx) = center;
        let (h, w) = (dims.height as f64, dims.width as f64);
        if cy - radius < -0.5 || cx - radius < -0.5 || cy + radius > h - 0.5 || cx + radius > w - 0.5 {
            return Err(ViewError::Invalid(format!(
                "circle centre ({cy}, {cx}) radius {radius} does not fit in {}x{}",
                dims.height, dims.width
            )));
        }
        let mut rings: Vec<Vec<(f64, f64, usize)>> = Vec::new();
        for y in 0..dims.height {
            for x in 0..dims.width {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let d = dy.hypot(dx);
                if d < radius {
                    let k = d.round() as usize;
                    if rings.len() <= k {
                        rings.resize_with(k + 1, Vec::new);
                    }
                    rings[k].push((dy.atan2(dx), d, y * dims.width + x));
                }
            }
        }
        let mut map: Vec<usize> = (0..dims.plane()).collect();
        let mut ring_offsets = Vec::with_capacity(rings.len());
        for ring in &mut rings {
            ring.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let len = ring.len() as i64;
            let shift = ((angle / TAU * len as f64).round() as i64).rem_euclid(len.max(1));
            ring_offsets.push(shift);
            for (i, &(_, _, dst)) in ring.iter().enumerate() {
                let src = (i as i64 - shift).rem_euclid(len) as usize;
                map[dst] = ring[src].2;
            }
        }
        let kind = ViewKind::InnerRotation { center, radius, ring_offsets };
        Ok(Self::from_plane_perm(kind, dims, Permutation::from_map_unchecked(map)))
    }

    /// Convenience: inner rotation about the image centre.
    pub fn inner_rotation_centered(dims: Dims, radius: f64, angle: f64) -> Result<Self, ViewError> {
        let center = ((dims.height as f64 - 1.0) / 2.0, (dims.width as f64 - 1.0) / 2.0);
        Self::inner_rotation(dims, center, radius, angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ImageTensor;
    use std::f64::consts::PI;

    fn ramp(dims: Dims) -> ImageTensor {
        ImageTensor::from_fn(dims, |c, y, x| (c * 100 + y * 10 + x) as f64)
    }

    #[test]
    fn identity_leaves_input() {
        let d = Dims::new(3, 4, 5);
        let x = ImageTensor::randn_seeded(d, 0);
        assert!(View::identity(d).apply(&x).unwrap().bit_eq(&x));
    }

    #[test]
    fn rotate_90_moves_bottom_left_to_top_left() {
        let d = Dims::new(1, 3, 3);
        let out = View::rotate_cw(d, Quarter::Cw90).unwrap().apply(&ramp(d)).unwrap();
        // input rows: [0 1 2] [10 11 12] [20 21 22]
        assert_eq!(out.data(), &[20.0, 10.0, 0.0, 21.0, 11.0, 1.0, 22.0, 12.0, 2.0]);
    }

    #[test]
    fn rotations_compose_to_full_turn() {
        let d = Dims::new(2, 5, 5);
        let x = ImageTensor::randn_seeded(d, 1);
        let r90 = View::rotate_cw(d, Quarter::Cw90).unwrap();
        let r180 = View::rotate_cw(d, Quarter::Cw180).unwrap();
        let r270 = View::rotate_cw(d, Quarter::Cw270).unwrap();
        let twice = r90.apply(&r90.apply(&x).unwrap()).unwrap();
        assert!(twice.bit_eq(&r180.apply(&x).unwrap()));
        assert!(r270.apply(&r90.apply(&x).unwrap()).unwrap().bit_eq(&x));
        assert!(r180.apply(&r180.apply(&x).unwrap()).unwrap().bit_eq(&x));
    }

    #[test]
    fn quarter_turn_needs_square() {
        let d = Dims::new(1, 2, 3);
        assert!(matches!(View::rotate_cw(d, Quarter::Cw90), Err(ViewError::NotSquare(_))));
        assert!(View::rotate_cw(d, Quarter::Cw180).is_ok());
    }

    #[test]
    fn flips() {
        let d = Dims::new(1, 2, 3);
        let v = View::flip(d, FlipAxis::Vertical).apply(&ramp(d)).unwrap();
        assert_eq!(v.data(), &[10.0, 11.0, 12.0, 0.0, 1.0, 2.0]);
        let h = View::flip(d, FlipAxis::Horizontal).apply(&ramp(d)).unwrap();
        assert_eq!(h.data(), &[2.0, 1.0, 0.0, 12.0, 11.0, 10.0]);
        let back = View::flip(d, FlipAxis::Vertical).apply_inverse(&v).unwrap();
        assert!(back.bit_eq(&ramp(d)));
    }

    #[test]
    fn skew_inverse_is_negated_offsets() {
        let d = Dims::new(1, 4, 4);
        let offsets = vec![0, 1, 2, 3];
        let v = View::skew_offsets(d, offsets.clone()).unwrap();
        let neg = View::skew_offsets(d, offsets.iter().map(|o| -o).collect()).unwrap();
        let x = ramp(d);
        let y = v.apply(&x).unwrap();
        assert!(v.apply_inverse(&y).unwrap().bit_eq(&x));
        assert!(neg.apply(&y).unwrap().bit_eq(&x));
        assert!(v.apply_inverse(&x).unwrap().bit_eq(&neg.apply(&x).unwrap()));
        // column 1 rolled down by one
        assert_eq!(y.get(0, 0, 1), x.get(0, 3, 1));
        assert_eq!(y.get(0, 1, 1), x.get(0, 0, 1));
    }

    #[test]
    fn skew_slope_rounds_offsets() {
        let d = Dims::new(1, 4, 5);
        let v = View::skew(d, 0.5).unwrap();
        // round() is half-away-from-zero
        assert_eq!(v.kind(), &ViewKind::Skew { offsets: vec![0, 1, 1, 2, 2] });
    }

    #[test]
    fn patch_swap() {
        let d = Dims::new(1, 4, 4);
        let v = View::patch_permutation(d, 2, Permutation::new(vec![1, 0, 2, 3]).unwrap()).unwrap();
        let x = ramp(d);
        let y = v.apply(&x).unwrap();
        assert_eq!(y.get(0, 0, 0), x.get(0, 0, 2));
        assert_eq!(y.get(0, 1, 3), x.get(0, 1, 1));
        assert_eq!(y.get(0, 3, 3), x.get(0, 3, 3));
        assert!(View::patch_permutation(d, 3, Permutation::identity(9)).is_err());
    }

    #[test]
    fn pixel_permutation_example() {
        let d = Dims::new(1, 1, 3);
        let x = ImageTensor::new(d, vec![1.0, 2.0, 3.0]).unwrap();
        let v = View::pixel_permutation(d, Permutation::new(vec![2, 0, 1]).unwrap()).unwrap();
        assert_eq!(v.apply(&x).unwrap().data(), &[3.0, 1.0, 2.0]);
    }

    #[test]
    fn pixel_permutation_is_per_channel() {
        let d = Dims::new(2, 1, 2);
        let v = View::pixel_permutation(d, Permutation::new(vec![1, 0]).unwrap()).unwrap();
        let x = ImageTensor::new(d, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v.apply(&x).unwrap().data(), &[2.0, 1.0, 4.0, 3.0]);
        let full = View::pixel_permutation(d, Permutation::new(vec![3, 2, 1, 0]).unwrap()).unwrap();
        assert_eq!(full.apply(&x).unwrap().data(), &[4.0, 3.0, 2.0, 1.0]);
        assert!(View::pixel_permutation(d, Permutation::identity(3)).is_err());
    }

    #[test]
    fn negate_example() {
        let d = Dims::new(1, 1, 2);
        let x = ImageTensor::new(d, vec![0.5, -0.2]).unwrap();
        assert_eq!(View::negate(d).apply(&x).unwrap().data(), &[-0.5, 0.2]);
    }

    #[test]
    fn inner_rotation_zero_angle_is_identity() {
        let d = Dims::new(1, 9, 9);
        let v = View::inner_rotation_centered(d, 4.0, 0.0).unwrap();
        assert!(v.permutation().unwrap().is_identity());
    }

    #[test]
    fn inner_rotation_ring_of_eight_rolls_by_four() {
        let d = Dims::new(1, 5, 5);
        // radius 1.5 keeps the centre pixel (ring 0) and the 8-pixel ring 1
        let v = View::inner_rotation(d, (2.0, 2.0), 1.5, PI).unwrap();
        match v.kind() {
            ViewKind::InnerRotation { ring_offsets, .. } => assert_eq!(ring_offsets, &vec![0, 4]),
            k => panic!("{k:?}"),
        }
        let x = ramp(d);
        let y = v.apply(&x).unwrap();
        // a rotation by π on the ring swaps opposite neighbours
        assert_eq!(y.get(0, 1, 1), x.get(0, 3, 3));
        assert_eq!(y.get(0, 1, 2), x.get(0, 3, 2));
        assert_eq!(y.get(0, 2, 2), x.get(0, 2, 2));
        assert_eq!(y.get(0, 0, 0), x.get(0, 0, 0));
    }

    #[test]
    fn inner_rotation_round_trip_over_all_pixels() {
        let d = Dims::new(1, 16, 16);
        for deg in [10.0f64, 45.0, 90.0, 137.0] {
            let th = deg.to_radians();
            let fwd = View::inner_rotation_centered(d, 7.0, th).unwrap();
            let back = View::inner_rotation_centered(d, 7.0, -th).unwrap();
            let composed = fwd.permutation().unwrap().then(back.permutation().unwrap());
            assert!(composed.is_identity(), "θ = {deg}");
        }
    }

    #[test]
    fn inner_rotation_errors() {
        let d = Dims::new(1, 8, 8);
        assert!(View::inner_rotation_centered(d, 0.0, 1.0).is_err());
        assert!(View::inner_rotation_centered(d, -1.0, 1.0).is_err());
        assert!(View::inner_rotation_centered(d, 6.0, 1.0).is_err());
        assert!(View::inner_rotation_centered(d, 4.0, 1.0).is_ok());
    }
}
