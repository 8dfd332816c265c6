#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qgfs/geom.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

using namespace qgfs;
using namespace qgfs::geom;

namespace {

Quaternion random_quat(Rng& rng) {
    Quaternion q{real(rng.normal()), real(rng.normal()), real(rng.normal()), real(rng.normal())};
    return q.normalized();
}

// Independent oracle: Eigen's quaternion-to-rotation conversion.
Mat3 eigen_rotmat(const Quaternion& q) {
    Eigen::Quaternion<real> eq(q.w, q.x, q.y, q.z);
    return eq.normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("quat_to_rotmat identity") {
    Mat3 R = quat_to_rotmat({1, 0, 0, 0});
    CHECK((R - Mat3::Identity()).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("quat_to_rotmat pure z flip") {
    // (0,0,0,1): 180 degrees about z.
    Mat3 R = quat_to_rotmat({0, 0, 0, 1});
    Mat3 expect;
    expect << -1, 0, 0, 0, -1, 0, 0, 0, 1;
    CHECK((R - expect).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("quat_to_rotmat 90deg about z") {
    real h = std::sqrt(real(2)) / 2;
    Mat3 R = quat_to_rotmat({h, 0, 0, h});
    Mat3 expect;
    expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK((R - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("quat_to_rotmat matches reference formula on random quaternions") {
    Rng rng(101);
    for (int i = 0; i < 200; ++i) {
        Quaternion q = random_quat(rng);
        Mat3 R = quat_to_rotmat(q);
        CHECK((R - eigen_rotmat(q)).cwiseAbs().maxCoeff() < 1e-12);
        // proper rotation
        CHECK((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("quat_to_rotmat double cover: R(q) == R(-q) exactly") {
    Rng rng(102);
    for (int i = 0; i < 50; ++i) {
        Quaternion q = random_quat(rng);
        Quaternion n{-q.w, -q.x, -q.y, -q.z};
        Mat3 a = quat_to_rotmat(q), b = quat_to_rotmat(n);
        CHECK((a - b).cwiseAbs().maxCoeff() == 0);
    }
}

TEST_CASE("quat_to_rotmat rejects the zero quaternion") {
    CHECK_THROWS_AS(quat_to_rotmat({0, 0, 0, 0}), DomainError);
}

TEST_CASE("quat_to_rotmat normalizes non-unit input") {
    Quaternion q{2, 0, 0, 0};
    CHECK((quat_to_rotmat(q) - Mat3::Identity()).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("rotmat_quat_jacobian matches finite differences of the raw formula") {
    // The Jacobian is of the polynomial R(q) (no renormalization), evaluated
    // at unit quaternions.
    auto raw_R = [](real w, real x, real y, real z) {
        Mat3 R;
        R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return R;
    };
    Rng rng(103);
    const real h = real(1e-6);
    for (int i = 0; i < 20; ++i) {
        Quaternion q = random_quat(rng);
        Mat3 J[4];
        rotmat_quat_jacobian(q, J);
        real comp[4] = {q.w, q.x, q.y, q.z};
        for (int k = 0; k < 4; ++k) {
            real cp[4] = {comp[0], comp[1], comp[2], comp[3]};
            cp[k] += h;
            Mat3 Rp = raw_R(cp[0], cp[1], cp[2], cp[3]);
            cp[k] -= 2 * h;
            Mat3 Rm = raw_R(cp[0], cp[1], cp[2], cp[3]);
            Mat3 fd = (Rp - Rm) / (2 * h);
            CHECK((fd - J[k]).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("covariance_3d identity") {
    Mat3 S = covariance_3d({1, 0, 0, 0}, Vec3(1, 1, 1));
    CHECK((S - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("covariance_3d axis-aligned scales") {
    Mat3 S = covariance_3d({1, 0, 0, 0}, Vec3(2, 1, 1));
    Mat3 expect = Vec3(4, 1, 1).asDiagonal();
    CHECK((S - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("covariance_3d rotated by 90deg about z swaps axes") {
    real h = std::sqrt(real(2)) / 2;
    Mat3 S = covariance_3d({h, 0, 0, h}, Vec3(2, 1, 1));
    Mat3 expect = Vec3(1, 4, 1).asDiagonal();
    CHECK((S - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance_3d matches direct triple product and has the right spectrum") {
    Rng rng(104);
    for (int i = 0; i < 100; ++i) {
        Quaternion q = random_quat(rng);
        Vec3 s(real(rng.uniform(0.1, 2.0)), real(rng.uniform(0.1, 2.0)), real(rng.uniform(0.1, 2.0)));
        Mat3 S = covariance_3d(q, s);

        // direct R * diag(s^2) * R^T oracle
        Mat3 R = quat_to_rotmat(q);
        Mat3 direct = R * Vec3(s.x() * s.x(), s.y() * s.y(), s.z() * s.z()).asDiagonal() * R.transpose();
        CHECK((S - direct).cwiseAbs().maxCoeff() < 1e-12);

        CHECK((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> es(S);
        Vec3 ev = es.eigenvalues();
        Vec3 want(s.x() * s.x(), s.y() * s.y(), s.z() * s.z());
        std::sort(want.data(), want.data() + 3);
        for (int k = 0; k < 3; ++k) {
            CHECK(ev[k] > 0);
            CHECK(ev[k] == doctest::Approx(want[k]).epsilon(1e-9));
        }
    }
}

TEST_CASE("covariance_3d rejects non-positive scales") {
    CHECK_THROWS_AS(covariance_3d({1, 0, 0, 0}, Vec3(1, 0, 1)), DomainError);
    CHECK_THROWS_AS(covariance_3d({1, 0, 0, 0}, Vec3(1, 1, -2)), DomainError);
}

TEST_CASE("project_point pinhole example") {
    Camera cam;
    cam.fx = cam.fy = 100;
    cam.cx = cam.cy = 32;
    cam.width = cam.height = 64;
    auto p = project_point(Vec3(1, 0, 1), cam);
    CHECK(!p.behind);
    CHECK(p.u == doctest::Approx(132.0));
    CHECK(p.v == doctest::Approx(32.0));
    CHECK(p.depth == doctest::Approx(1.0));
}

TEST_CASE("project_point flags points behind the camera") {
    Camera cam;
    cam.fx = cam.fy = 100;
    cam.cx = cam.cy = 32;
    cam.width = cam.height = 64;
    CHECK(project_point(Vec3(0, 0, -1), cam).behind);
    CHECK(project_point(Vec3(0, 0, 0), cam).behind);
}

TEST_CASE("project/unproject round trip") {
    Rng rng(105);
    for (int i = 0; i < 100; ++i) {
        Vec3 pos(real(rng.uniform(-2, 2)), real(rng.uniform(-2, 2)), real(rng.uniform(0.5, 2)));
        Camera cam = look_at_camera(pos, Vec3(0, 0, 0), 64, 64, real(31.5), real(31.5), 64, 64);
        cam.validate();
        real u = real(rng.uniform(0, 63)), v = real(rng.uniform(0, 63));
        real d = real(rng.uniform(0.5, 3.0));
        Vec3 x = unproject_pixel(u, v, d, cam);
        auto p = project_point(x, cam);
        CHECK(!p.behind);
        CHECK(std::abs(p.u - u) < 1e-9);
        CHECK(std::abs(p.v - v) < 1e-9);
        CHECK(std::abs(p.depth - d) < 1e-9);
    }
}

TEST_CASE("unproject rejects non-positive depth") {
    Camera cam;
    cam.fx = cam.fy = 64;
    cam.width = cam.height = 64;
    CHECK_THROWS_AS(unproject_pixel(1, 1, 0, cam), DomainError);
}

TEST_CASE("look_at_camera centers the target") {
    const real r = real(1.5);
    Camera cam = look_at_camera(Vec3(r * std::sqrt(real(3)) / 2, 0, r / 2), Vec3(0, 0, 0),
                                64, 64, real(31.5), real(31.5), 64, 64);
    auto p = project_point(Vec3(0, 0, 0), cam);
    CHECK(p.u == doctest::Approx(31.5).epsilon(1e-9));
    CHECK(p.v == doctest::Approx(31.5).epsilon(1e-9));
    CHECK(p.depth == doctest::Approx(1.5).epsilon(1e-9));
}

TEST_CASE("project_covariance_jw synthetic identity slice") {
    geom::Mat23 J;
    J << 1, 0, 0, 0, 1, 0;
    auto out = project_covariance_jw(J, Mat3::Identity(), Mat3::Identity());
    CHECK(!out.degenerate);
    CHECK(out.cov(0, 0) == doctest::Approx(1.3));
    CHECK(out.cov(1, 1) == doctest::Approx(1.3));
    CHECK(out.cov(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("project_covariance on-axis point at depth 2") {
    Camera cam;
    cam.fx = cam.fy = 1;
    cam.cx = cam.cy = 0;
    cam.width = cam.height = 8;
    auto out = project_covariance(Mat3::Identity(), Vec3(0, 0, 2), cam);
    CHECK(!out.degenerate);
    CHECK(out.cov(0, 0) == doctest::Approx(0.55));
    CHECK(out.cov(1, 1) == doctest::Approx(0.55));
    CHECK(std::abs(out.cov(0, 1)) < 1e-15);
}

TEST_CASE("project_covariance dilation floor on a zero covariance") {
    Camera cam;
    cam.fx = cam.fy = 1;
    cam.width = cam.height = 8;
    auto out = project_covariance(Mat3::Zero(), Vec3(0, 0, 2), cam);
    CHECK(out.degenerate);  // det before dilation is zero
    CHECK(out.cov(0, 0) == doctest::Approx(0.3));
    CHECK(out.cov(1, 1) == doctest::Approx(0.3));
}

TEST_CASE("project_covariance matches explicit J W S W^T J^T") {
    Rng rng(106);
    for (int i = 0; i < 50; ++i) {
        Vec3 pos(real(rng.uniform(-2, 2)), real(rng.uniform(-2, 2)), real(rng.uniform(1.0, 2.5)));
        Camera cam = look_at_camera(pos, Vec3(0, 0, 0), 64, 64, real(31.5), real(31.5), 64, 64);
        Quaternion q = random_quat(rng);
        Vec3 s(real(rng.uniform(0.05, 0.5)), real(rng.uniform(0.05, 0.5)), real(rng.uniform(0.05, 0.5)));
        Mat3 sigma = covariance_3d(q, s);
        Vec3 mean(real(rng.uniform(-0.3, 0.3)), real(rng.uniform(-0.3, 0.3)), real(rng.uniform(-0.3, 0.3)));

        Vec3 t = cam.world_to_cam(mean);
        Mat23 J = projection_jacobian(t, cam.fx, cam.fy);
        Mat3 W = cam.cam_from_world_rot();
        Mat2 direct = (J * W) * sigma * (J * W).transpose();
        direct(0, 0) += kCovDilation;
        direct(1, 1) += kCovDilation;

        auto out = project_covariance(sigma, mean, cam);
        CHECK(!out.degenerate);
        CHECK((out.cov - direct).cwiseAbs().maxCoeff() < 1e-12);
        // positive definite after dilation
        CHECK(out.cov(0, 0) > 0);
        CHECK(out.cov.determinant() > 0);
    }
}

TEST_CASE("camera validate rejects bad intrinsics and rotations") {
    Camera cam;
    cam.fx = 0;
    cam.fy = 1;
    cam.width = cam.height = 4;
    CHECK_THROWS_AS(cam.validate(), ContractError);
    cam.fx = 1;
    cam.R_wc(0, 0) = 2;
    CHECK_THROWS_AS(cam.validate(), ContractError);
}
