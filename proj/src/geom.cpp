#include "qgfs/geom.hpp"

namespace qgfs::geom {

void Camera::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ContractError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ContractError("camera resolution must be positive");
    Mat3 e = R_wc * R_wc.transpose() - Mat3::Identity();
    if (e.cwiseAbs().maxCoeff() > real(1e-6)) throw ContractError("camera rotation not orthonormal");
}

Mat34 Camera::projection_matrix() const {
    Mat3 K = Mat3::Zero();
    K(0, 0) = fx; K(1, 1) = fy;
    K(0, 2) = cx; K(1, 2) = cy;
    K(2, 2) = 1;
    Mat34 Rt;
    Rt.template leftCols<3>() = R_wc.transpose();
    Rt.col(3) = -R_wc.transpose() * t_wc;
    return K * Rt;
}

Camera look_at_camera(const Vec3& position, const Vec3& target, real fx, real fy,
                      real cx, real cy, int width, int height) {
    Vec3 f = (target - position).normalized();
    Vec3 up(0, 0, 1);
    Vec3 r = f.cross(up);
    real rn = r.norm();
    if (rn < real(1e-9)) throw DomainError("look_at: view direction parallel to up");
    r /= rn;
    Vec3 d = f.cross(r);  // points "down" in world, matching y-down image axes
    Camera cam;
    cam.fx = fx; cam.fy = fy; cam.cx = cx; cam.cy = cy;
    cam.width = width; cam.height = height;
    cam.R_wc.col(0) = r;
    cam.R_wc.col(1) = d;
    cam.R_wc.col(2) = f;
    cam.t_wc = position;
    return cam;
}

Mat3 quat_to_rotmat(const Quaternion& q_in) {
    Quaternion q = q_in.normalized();
    const real w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y);
    return R;
}

void rotmat_quat_jacobian(const Quaternion& q, Mat3 J[4]) {
    const real w = q.w, x = q.x, y = q.y, z = q.z;
    J[0] << 0, -z, y,
            z, 0, -x,
            -y, x, 0;
    J[1] << 0, y, z,
            y, -2 * x, -w,
            z, w, -2 * x;
    J[2] << -2 * y, x, w,
            x, 0, z,
            -w, z, -2 * y;
    J[3] << -2 * z, -w, x,
            w, -2 * z, y,
            x, y, 0;
    for (int k = 0; k < 4; ++k) J[k] *= real(2);
}

Mat3 covariance_3d(const Quaternion& q, const Vec3& s) {
    if (!(s.x() > 0 && s.y() > 0 && s.z() > 0))
        throw DomainError("covariance_3d: scales must be positive");
    Mat3 R = quat_to_rotmat(q);
    Mat3 M = R * s.asDiagonal();
    return M * M.transpose();
}

ProjectedPoint project_point(const Vec3& x_world, const Camera& cam) {
    Vec3 t = cam.world_to_cam(x_world);
    ProjectedPoint p;
    p.depth = t.z();
    if (t.z() <= kMinDepth) {
        p.behind = true;
        return p;
    }
    p.u = cam.fx * t.x() / t.z() + cam.cx;
    p.v = cam.fy * t.y() / t.z() + cam.cy;
    return p;
}

Vec3 unproject_pixel(real u, real v, real depth, const Camera& cam) {
    if (!(depth > 0)) throw DomainError("unproject_pixel: depth must be positive");
    Vec3 t((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
    return cam.cam_to_world(t);
}

Mat23 projection_jacobian(const Vec3& t, real fx, real fy) {
    const real z = t.z();
    Mat23 J;
    J << fx / z, 0, -fx * t.x() / (z * z),
         0, fy / z, -fy * t.y() / (z * z);
    return J;
}

CovProjection project_covariance_jw(const Mat23& J, const Mat3& W, const Mat3& sigma) {
    Mat23 T = J * W;
    CovProjection out;
    Mat2 c = T * sigma * T.transpose();
    out.degenerate = c.determinant() <= kDegenerateDet;
    c(0, 0) += kCovDilation;
    c(1, 1) += kCovDilation;
    out.cov = c;
    return out;
}

CovProjection project_covariance(const Mat3& sigma, const Vec3& mean_world, const Camera& cam) {
    Vec3 t = cam.world_to_cam(mean_world);
    if (t.z() <= kMinDepth) {
        CovProjection out;
        out.degenerate = true;
        return out;
    }
    return project_covariance_jw(projection_jacobian(t, cam.fx, cam.fy),
                                 cam.cam_from_world_rot(), sigma);
}

}  // namespace qgfs::geom
