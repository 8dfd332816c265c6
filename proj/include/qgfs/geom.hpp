#pragma once

#include "qgfs/common.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace qgfs::geom {

using Vec2 = Eigen::Matrix<real, 2, 1>;
using Vec3 = Eigen::Matrix<real, 3, 1>;
using Vec4 = Eigen::Matrix<real, 4, 1>;
using Mat2 = Eigen::Matrix<real, 2, 2>;
using Mat3 = Eigen::Matrix<real, 3, 3>;
using Mat23 = Eigen::Matrix<real, 2, 3>;
using Mat34 = Eigen::Matrix<real, 3, 4>;

inline constexpr real kCovDilation = real(0.3);   // pixel-space diagonal floor
inline constexpr real kMinDepth = real(1e-6);     // behind-camera threshold
inline constexpr real kDegenerateDet = real(1e-12);

struct Quaternion {
    real w = 1, x = 0, y = 0, z = 0;

    real norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quaternion normalized() const {
        real n = norm();
        if (n < real(1e-12)) throw DomainError("quaternion has zero norm");
        return {w / n, x / n, y / n, z / n};
    }
};

// Pinhole camera with a world-from-camera pose. Camera frame: x right,
// y down, z forward. Pixel (row, col) has image coordinates (u, v) = (col, row).
struct Camera {
    real fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 0, height = 0;
    Mat3 R_wc = Mat3::Identity();  // world-from-camera rotation
    Vec3 t_wc = Vec3::Zero();      // camera center in world

    void validate() const;
    Vec3 world_to_cam(const Vec3& p) const { return R_wc.transpose() * (p - t_wc); }
    Vec3 cam_to_world(const Vec3& p) const { return R_wc * p + t_wc; }
    Mat3 cam_from_world_rot() const { return R_wc.transpose(); }
    // K * [R|t] (camera-from-world), as used for view conditioning.
    Mat34 projection_matrix() const;
};

// Camera on the canonical ring looking at the origin (world +z up).
Camera look_at_camera(const Vec3& position, const Vec3& target, real fx, real fy,
                      real cx, real cy, int width, int height);

struct ProjectedPoint {
    real u = 0, v = 0, depth = 0;
    bool behind = false;
};

// Unit-quaternion rotation matrix; normalizes its input, throws DomainError on
// a zero quaternion.
Mat3 quat_to_rotmat(const Quaternion& q);

// d(R)/d(q_hat) for a unit quaternion, one 3x3 per component (w, x, y, z).
void rotmat_quat_jacobian(const Quaternion& q_unit, Mat3 J[4]);

// Sigma = R S S^T R^T with S = diag(s). Throws DomainError on s <= 0.
Mat3 covariance_3d(const Quaternion& q, const Vec3& s);

ProjectedPoint project_point(const Vec3& x_world, const Camera& cam);

// Inverse pinhole: pixel (u, v) with depth d -> world point.
Vec3 unproject_pixel(real u, real v, real depth, const Camera& cam);

struct CovProjection {
    Mat2 cov = Mat2::Zero();   // dilated 2D covariance
    bool degenerate = false;   // det(J W Sigma W^T J^T) <= kDegenerateDet
};

// Core EWA projection given an explicit Jacobian and world-to-camera rotation;
// adds the dilation after the degeneracy check.
CovProjection project_covariance_jw(const Mat23& J, const Mat3& W, const Mat3& sigma);

// Projection Jacobian of the pinhole at camera-frame point t (z > 0).
Mat23 projection_jacobian(const Vec3& t_cam, real fx, real fy);

// Full chain: world covariance + mean -> dilated pixel-space covariance.
CovProjection project_covariance(const Mat3& sigma, const Vec3& mean_world, const Camera& cam);

}  // namespace qgfs::geom
