//! Geometric kernels: sampling, grouping, interpolation, depth binning and
//! calibrated coordinate transforms.
//!
//! Everything here is a pure function of its inputs. Ties are always broken
//! towards the smaller index.

mod calib;
mod interp;
mod lid;
mod sampling;

pub use calib::Calibration;
pub use interp::{
    bilinear_sample, bilinear_weights, idw_interpolate, idw_weights, trilinear_sample, trilinear_weights,
    Sample, IDW_EPS,
};
pub use lid::{LidBinning, LidCode};
pub use sampling::{farthest_point_sampling, knn_group, sq_dist};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A 3D coordinate in meters.
pub type Point3 = [f64; 3];

/// Coordinates in the LiDAR frame (X forward, Y left, Z up) with optional
/// per-point feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub coords: Vec<Point3>,
    pub feats: Option<Tensor>,
}

impl PointSet {
    pub fn new(coords: Vec<Point3>, feats: Option<Tensor>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite coordinate".into()));
        }
        if let Some(f) = &feats {
            if f.shape().len() != 2 || f.rows() != coords.len() {
                return Err(Error::dim(
                    "point_set",
                    format!("{} coords with features {:?}", coords.len(), f.shape()),
                ));
            }
        }
        Ok(PointSet { coords, feats })
    }

    pub fn from_coords(coords: Vec<Point3>) -> Result<Self> {
        Self::new(coords, None)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Subset in the given index order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let coords = idx.iter().map(|&i| self.coords[i]).collect();
        let feats = match &self.feats {
            Some(f) => {
                let c = f.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &i in idx {
                    data.extend_from_slice(f.row(i));
                }
                Some(Tensor::new(vec![idx.len(), c], data)?)
            }
            None => None,
        };
        Self::new(coords, feats)
    }
}
