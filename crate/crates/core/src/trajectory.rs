use nalgebra::Vector3;

use crate::so3::Quaternion;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub stamp: f64,
    pub q_gi: Quaternion,
    pub p_gi: Vector3<f64>,
    pub v_gi: Option<Vector3<f64>>,
}

/// Time-ordered poses of the IMU frame in the global frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<PoseSample>,
}

impl Trajectory {
    pub fn new(poses: Vec<PoseSample>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.poses.windows(2).all(|w| w[0].stamp < w[1].stamp)
    }

    /// Total travelled distance.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].p_gi - w[0].p_gi).norm()).sum()
    }
}
