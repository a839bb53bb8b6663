//! Pinhole camera model: projection of world points into a view, the inverse
//! back-projection, and floor-indexed reads from captured depth maps.
//!
//! Pixel convention: `u` is the column coordinate and `v` the row coordinate.
//! Depth maps are stored row-major and read at `(row = ⌊v⌋, col = ⌊u⌋)`.

use nalgebra::{Matrix3, Matrix4, Vector3};

/// Tolerance used when checking that a rotation is orthonormal.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("intrinsic matrix bottom row must be (0, 0, 1), got {0:?}")]
    BadBottomRow([f64; 3]),
    #[error("intrinsic matrix is not invertible")]
    SingularIntrinsics,
    #[error("rotation is not orthonormal with determinant +1 (error {0:e})")]
    NotARotation(f64),
    #[error("pose matrix bottom row must be (0, 0, 0, 1), got {0:?}")]
    BadPoseBottomRow([f64; 4]),
    #[error("non-finite value in camera parameters")]
    NonFinite,
    #[error("cannot unproject with non-positive depth {0}")]
    NonPositiveDepth(f64),
}

/// Camera calibration `Γ`: focal lengths and principal point in pixels.
///
/// The full 3×3 matrix is kept so that skew terms, if present, take part in
/// projection. The bottom row is always exactly `(0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let (fx, fy) = (matrix[(0, 0)], matrix[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::NonPositiveFocal { fx, fy });
        }
        let bottom = [matrix[(2, 0)], matrix[(2, 1)], matrix[(2, 2)]];
        if bottom != [0.0, 0.0, 1.0] {
            return Err(GeometryError::BadBottomRow(bottom));
        }
        let inverse = matrix
            .try_inverse()
            .ok_or(GeometryError::SingularIntrinsics)?;
        Ok(Self { matrix, inverse })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn fx(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.matrix[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.matrix[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.matrix[(1, 2)]
    }
}

/// Which way a pose's `[R|v]` maps points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseDirection {
    WorldToCamera,
    CameraToWorld,
}

/// Rigid camera pose, always held internally as world-to-camera `[R|v]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn check_rotation(rotation: &Matrix3<f64>) -> Result<(), GeometryError> {
    if rotation.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    let det = (rotation.determinant() - 1.0).abs();
    let err = ortho.max(det);
    if err > ROTATION_TOLERANCE {
        return Err(GeometryError::NotARotation(err));
    }
    Ok(())
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation and translation interpreted according to
    /// `direction`; camera-to-world input is inverted.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        direction: PoseDirection,
    ) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if translation.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(match direction {
            PoseDirection::WorldToCamera => Self {
                rotation,
                translation,
            },
            PoseDirection::CameraToWorld => {
                let rt = rotation.transpose();
                Self {
                    rotation: rt,
                    translation: -(rt * translation),
                }
            }
        })
    }

    /// Builds a pose from a homogeneous 4×4 rigid transform.
    pub fn from_matrix4(m: &Matrix4<f64>, direction: PoseDirection) -> Result<Self, GeometryError> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::BadPoseBottomRow(bottom));
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation, direction)
    }

    /// Camera looking from `eye` toward `target`, with image rows running
    /// against `up`. Camera axes follow the x-right, y-down, z-forward convention.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if !(right.norm() > 1e-9) || !forward.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NotARotation(f64::NAN));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let cam_to_world = Matrix3::from_columns(&[right, down, forward]);
        Self::new(cam_to_world, eye, PoseDirection::CameraToWorld)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// World-to-camera as a homogeneous matrix.
    pub fn world_to_camera(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera-to-world as a homogeneous matrix (the on-disk pose convention).
    pub fn camera_to_world(&self) -> Matrix4<f64> {
        let rt = self.rotation.transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * self.translation)));
        m
    }

    #[inline]
    pub fn to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }
}

/// Image-plane location of a projected point together with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl PixelProjection {
    /// Floor-indexed pixel `(col, row)` if the projection is in front of the
    /// camera and lands inside a `width × height` image.
    #[inline]
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        if !(self.d > 0.0) {
            return None;
        }
        floor_index(self.u, self.v, width, height)
    }
}

#[inline]
fn floor_index(u: f64, v: f64, width: usize, height: usize) -> Option<(usize, usize)> {
    // NaN fails both comparisons.
    if !(u >= 0.0 && v >= 0.0) {
        return None;
    }
    let (col, row) = (u.floor(), v.floor());
    if col < width as f64 && row < height as f64 {
        Some((col as usize, row as usize))
    } else {
        None
    }
}

/// Solves `d·(u, v, 1)ᵀ = Γ·[R|v]·(x, y, z, 1)ᵀ`.
///
/// Points behind the camera come back with `d ≤ 0`; points on the camera
/// plane give non-finite `u`, `v`. Both are left for the caller to filter.
#[inline]
pub fn project_point(
    point: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> PixelProjection {
    let h = intrinsics.matrix * pose.to_camera(point);
    let d = h.z;
    PixelProjection {
        u: h.x / d,
        v: h.y / d,
        d,
    }
}

/// Inverse of [`project_point`] for a pixel with known depth.
pub fn unproject_pixel(
    u: f64,
    v: f64,
    d: f64,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vector3<f64>, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    let camera = intrinsics.inverse * Vector3::new(u * d, v * d, d);
    Ok(pose.rotation.transpose() * (camera - pose.translation))
}

/// Depth image in meters, row-major. A stored value of zero marks a missing sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    meters: Vec<f64>,
}

/// Scale of the on-disk 16-bit depth encoding (millimeters).
pub const DEPTH_UNITS_PER_METER: f64 = 1000.0;

impl DepthMap {
    /// An all-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            meters: vec![0.0; width * height],
        }
    }

    /// # Panics
    /// If `meters.len() != width * height`.
    pub fn from_meters(width: usize, height: usize, meters: Vec<f64>) -> Self {
        assert_eq!(meters.len(), width * height, "depth buffer size mismatch");
        Self {
            width,
            height,
            meters,
        }
    }

    /// Decodes 16-bit millimeter samples.
    pub fn from_millimeters(width: usize, height: usize, raw: &[u16]) -> Self {
        Self::from_meters(
            width,
            height,
            raw.iter()
                .map(|&mm| mm as f64 / DEPTH_UNITS_PER_METER)
                .collect(),
        )
    }

    /// Encodes to 16-bit millimeters, rounding to nearest and saturating at
    /// `u16::MAX`. Non-positive and non-finite samples become 0 (invalid).
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.meters
            .iter()
            .map(|&m| {
                if m.is_finite() && m > 0.0 {
                    (m * DEPTH_UNITS_PER_METER).round().min(u16::MAX as f64) as u16
                } else {
                    0
                }
            })
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.meters
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.meters
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.meters[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, meters: f64) {
        self.meters[row * self.width + col] = meters;
    }

    /// Depth at `(row = ⌊v⌋, col = ⌊u⌋)`, or `None` when out of bounds or missing.
    #[inline]
    pub fn lookup(&self, u: f64, v: f64) -> Option<f64> {
        let (col, row) = floor_index(u, v, self.width, self.height)?;
        let d = self.get(col, row);
        (d > 0.0).then_some(d)
    }
}

/// Free-function form of [`DepthMap::lookup`].
#[inline]
pub fn depth_lookup(depth_map: &DepthMap, u: f64, v: f64) -> Option<f64> {
    depth_map.lookup(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let p = project_point(&Vector3::new(0.0, 0.0, 2.0), &k500(), &CameraPose::identity());
        assert_eq!(p, PixelProjection { u: 320.0, v: 240.0, d: 2.0 });
    }

    #[test]
    fn off_axis_projection() {
        // 500 * 0.5 / 2 + 320 = 445; 500 * -0.25 / 2 + 240 = 177.5
        let p = project_point(&Vector3::new(0.5, -0.25, 2.0), &k500(), &CameraPose::identity());
        assert_eq!((p.u, p.v, p.d), (445.0, 177.5, 2.0));
    }

    #[test]
    fn translated_pose_adds_depth() {
        let pose = CameraPose::new(
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 1.0),
            PoseDirection::WorldToCamera,
        )
        .unwrap();
        let p = project_point(&Vector3::new(0.0, 0.0, 1.0), &k500(), &pose);
        assert_eq!((p.u, p.v, p.d), (320.0, 240.0, 2.0));
    }

    #[test]
    fn camera_to_world_is_inverted() {
        // Camera sits at z = -1 looking down +z: the world origin is 1 m ahead.
        let pose = CameraPose::new(
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, -1.0),
            PoseDirection::CameraToWorld,
        )
        .unwrap();
        let p = project_point(&Vector3::new(0.0, 0.0, 0.0), &k500(), &pose);
        assert_eq!(p.d, 1.0);
        let back = CameraPose::from_matrix4(&pose.camera_to_world(), PoseDirection::CameraToWorld)
            .unwrap();
        assert!((back.translation() - pose.translation()).norm() < 1e-15);
    }

    #[test]
    fn unproject_known_pixels() {
        let id = CameraPose::identity();
        let p = unproject_pixel(320.0, 240.0, 2.0, &k500(), &id).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let p = unproject_pixel(445.0, 177.5, 2.0, &k500(), &id).unwrap();
        assert!((p - Vector3::new(0.5, -0.25, 2.0)).norm() < 1e-12);
        assert_eq!(
            unproject_pixel(1.0, 1.0, 0.0, &k500(), &id),
            Err(GeometryError::NonPositiveDepth(0.0))
        );
    }

    #[test]
    fn behind_camera_is_representable() {
        let p = project_point(&Vector3::new(0.1, 0.1, -1.0), &k500(), &CameraPose::identity());
        assert!(p.d < 0.0);
        assert_eq!(p.pixel(640, 480), None);
        let p = project_point(&Vector3::new(0.1, 0.1, 0.0), &k500(), &CameraPose::identity());
        assert_eq!(p.pixel(640, 480), None);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(matches!(
            CameraIntrinsics::new(-1.0, 500.0, 0.0, 0.0),
            Err(GeometryError::NonPositiveFocal { .. })
        ));
        let mut m = *k500().matrix();
        m[(2, 0)] = 1e-12;
        assert!(matches!(
            CameraIntrinsics::from_matrix(m),
            Err(GeometryError::BadBottomRow(_))
        ));
    }

    #[test]
    fn rejects_non_rotation() {
        let scaled = Matrix3::identity() * 1.001;
        assert!(matches!(
            CameraPose::new(scaled, Vector3::zeros(), PoseDirection::WorldToCamera),
            Err(GeometryError::NotARotation(_))
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraPose::new(reflection, Vector3::zeros(), PoseDirection::WorldToCamera).is_err());
    }

    #[test]
    fn depth_lookup_conventions() {
        let mut raw = vec![0u16; 30 * 40];
        raw[20 * 30 + 10] = 1500; // row 20, col 10
        let map = DepthMap::from_millimeters(30, 40, &raw);
        assert_eq!(depth_lookup(&map, -1.0, 5.0), None);
        assert_eq!(depth_lookup(&map, 10.9, 20.1), Some(1.5));
        assert_eq!(depth_lookup(&map, 20.1, 10.9), None); // transposed read hits a zero sample
        assert_eq!(depth_lookup(&map, 30.0, 0.0), None);
        assert_eq!(depth_lookup(&map, 29.99, 39.99), None);
        assert_eq!(depth_lookup(&map, f64::NAN, 1.0), None);
    }

    #[test]
    fn millimeter_encoding() {
        let map = DepthMap::from_meters(3, 1, vec![1.2344, -1.0, 100.0]);
        assert_eq!(map.to_millimeters(), vec![1234, 0, u16::MAX]);
    }

    fn arb_pose() -> impl Strategy<Value = CameraPose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter_map("degenerate axis", |(axis, angle, t)| {
                let axis = Vector3::from(axis);
                (axis.norm() > 1e-3).then(|| {
                    let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
                    CameraPose::new(*r.matrix(), Vector3::from(t), PoseDirection::WorldToCamera)
                        .unwrap()
                })
            })
    }

    fn arb_intrinsics() -> impl Strategy<Value = CameraIntrinsics> {
        (100.0f64..1000.0, 100.0f64..1000.0, 0.0f64..640.0, 0.0f64..480.0)
            .prop_map(|(fx, fy, cx, cy)| CameraIntrinsics::new(fx, fy, cx, cy).unwrap())
    }

    proptest! {
        #[test]
        fn unproject_then_project_round_trips(
            k in arb_intrinsics(),
            pose in arb_pose(),
            u in 0.0f64..640.0,
            v in 0.0f64..480.0,
            d in 0.1f64..10.0,
        ) {
            let p = unproject_pixel(u, v, d, &k, &pose).unwrap();
            let q = project_point(&p, &k, &pose);
            prop_assert!((q.u - u).abs() <= 1e-9 * u.abs().max(1.0));
            prop_assert!((q.v - v).abs() <= 1e-9 * v.abs().max(1.0));
            prop_assert!((q.d - d).abs() <= 1e-9 * d);
        }

        #[test]
        fn rigid_motion_of_scene_and_camera_is_invisible(
            k in arb_intrinsics(),
            pose in arb_pose(),
            motion in arb_pose(),
            p in prop::array::uniform3(-5.0f64..5.0),
        ) {
            // Move the world by x' = Q x + w and compensate the camera.
            let (q, w) = (motion.rotation(), motion.translation());
            let moved_pose = CameraPose::new(
                pose.rotation() * q.transpose(),
                pose.translation() - pose.rotation() * q.transpose() * w,
                PoseDirection::WorldToCamera,
            ).unwrap();
            let p = Vector3::from(p);
            let a = project_point(&p, &k, &pose);
            let b = project_point(&(q * p + w), &k, &moved_pose);
            prop_assume!(a.d.abs() > 1e-3);
            let scale = a.u.abs().max(a.v.abs()).max(1.0);
            prop_assert!((a.u - b.u).abs() <= 1e-9 * scale);
            prop_assert!((a.v - b.v).abs() <= 1e-9 * scale);
            prop_assert!((a.d - b.d).abs() <= 1e-9 * a.d.abs().max(1.0));
        }

        #[test]
        fn scaling_camera_frame_scales_depth_only(
            k in arb_intrinsics(),
            p in prop::array::uniform3(-2.0f64..2.0),
            s in 0.1f64..10.0,
        ) {
            let p = Vector3::new(p[0], p[1], p[2].abs() + 0.5);
            let id = CameraPose::identity();
            let a = project_point(&p, &k, &id);
            let b = project_point(&(p * s), &k, &id);
            prop_assert!((b.d - s * a.d).abs() <= 1e-12 * b.d);
            prop_assert!((a.u - b.u).abs() <= 1e-9 * a.u.abs().max(1.0));
            prop_assert!((a.v - b.v).abs() <= 1e-9 * a.v.abs().max(1.0));
        }
    }
}
