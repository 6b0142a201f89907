#include <catch2/catch_amalgamated.hpp>

#include "wavepot/geometry.hpp"

using namespace wavepot;

namespace {

ManifoldConfig disk_cfg(int n = 64, double margin = 0.2) {
    ManifoldConfig c;
    c.kind = ManifoldKind::EuclideanDisk;
    c.radius = 1.0;
    c.resolution = n;
    c.extension_margin = margin;
    return c;
}

ManifoldConfig conf_cfg(int n = 32) {
    ManifoldConfig c;
    c.kind = ManifoldKind::RadialConformalDisk;
    c.radius = 1.0;
    c.resolution = n;
    c.extension_margin = 0.2;
    c.conformal_coefficients = {0.2};  // c(rho) = 1 + 0.2 rho^2
    return c;
}

}  // namespace

TEST_CASE("build_manifold: three kinds satisfy the basic invariants") {
    SimpleManifold disk = build_manifold(disk_cfg());
    CHECK(disk.R1 == Catch::Approx(1.4));
    CHECK(disk.min_boundary_curvature() > 0.0);

    ManifoldConfig rc;
    rc.kind = ManifoldKind::EuclideanRectangle;
    rc.side_x = 1.0;
    rc.side_y = 1.0;
    rc.resolution = 32;
    SimpleManifold rect = build_manifold(rc);
    CHECK(rect.min_boundary_curvature() == 0.0);

    SimpleManifold conf = build_manifold(conf_cfg());
    CHECK(conf.min_boundary_curvature() > 0.0);
    CHECK(conf.conformal({0.5, 0.0}) == Catch::Approx(1.05));

    // M strictly inside M1: every in_M node is in_M1 and some in_M1 nodes are not in_M
    for (const SimpleManifold* m : {&disk, &rect, &conf}) {
        int extra = 0;
        for (int id = 0; id < m->grid.size(); ++id) {
            if (m->in_M[id]) CHECK(m->in_M1[id] == 1);
            if (m->in_M1[id] && !m->in_M[id]) ++extra;
        }
        CHECK(extra > 0);
    }
}

TEST_CASE("build_manifold rejects a non-convex conformal profile") {
    ManifoldConfig c = conf_cfg();
    c.extension_margin = 0.05;
    c.conformal_coefficients = {-0.505};  // k_g < 0 at the boundary
    CHECK_THROWS_AS(build_manifold(c), Error);
}

TEST_CASE("distance: Euclidean closed forms") {
    SimpleManifold disk = build_manifold(disk_cfg());
    CHECK(distance(disk, {-1.0, 0.0}, {1.0, 0.0}) == Catch::Approx(2.0));
    CHECK(distance(disk, {-1.4, 0.0}, {-1.4, 0.0}) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("distance: radial-conformal matches the arc-length oracle") {
    SimpleManifold m = build_manifold(conf_cfg());
    // radial geodesic from (-R1, 0) to the center: length = int_0^R1 sqrt(c)
    int n = 2001;
    std::vector<double> f(n);
    for (int i = 0; i < n; ++i) {
        double rho = m.R1 * i / (n - 1.0);
        f[i] = std::sqrt(m.c_of_s(rho * rho));
    }
    double oracle = simpson(f, m.R1 / (n - 1.0));
    double d = distance(m, {-m.R1, 0.0}, {0.0, 0.0});
    CHECK(d == Catch::Approx(oracle).margin(1e-4));
}

TEST_CASE("distance: triangle inequality on sampled triples") {
    SimpleManifold m = build_manifold(conf_cfg());
    Vec2 y1{-m.R1, 0.0};
    Vec2 y2{0.0, m.R1};
    std::vector<Vec2> xs{{0.0, 0.0}, {0.3, 0.2}, {-0.4, 0.5}, {0.6, -0.3}};
    for (const Vec2& x : xs) {
        double d1 = distance(m, y1, x);
        double d2 = distance(m, y2, x);
        double d12 = distance(m, y1, y2);
        CHECK(d12 <= d1 + d2 + 1e-6);
    }
}

TEST_CASE("shoot_ray: disk chords and unit-speed conservation") {
    SimpleManifold disk = build_manifold(disk_cfg());
    double R1 = disk.R1;

    GeodesicRay normal_ray = shoot_ray(disk, {-R1, 0.0}, {1.0, 0.0});
    CHECK(normal_ray.tau_plus == Catch::Approx(2.0 * R1).margin(1e-8));
    CHECK(normal_ray.speed_drift <= 1e-6);

    // 60 degrees to the inward normal: tau+ = 2 R1 cos(60) = R1
    double a = kPi / 3;
    GeodesicRay oblique = shoot_ray(disk, {-R1, 0.0}, {std::cos(a), std::sin(a)});
    CHECK(oblique.tau_plus == Catch::Approx(R1).margin(1e-8));

    // exit point on the boundary
    CHECK(disk.sdf_M1(oblique.pts.back()) == Catch::Approx(0.0).margin(1e-8));

    CHECK_THROWS_AS(shoot_ray(disk, {-R1, 0.0}, {-1.0, 0.0}), Error);
}

TEST_CASE("shoot_ray: time reversal retraces the ray (conformal)") {
    SimpleManifold m = build_manifold(conf_cfg());
    Vec2 x0{-m.R1, 0.0};
    Vec2 dir{std::cos(0.4), std::sin(0.4)};
    GeodesicRay fwd = shoot_ray(m, x0, dir);
    CHECK(fwd.speed_drift <= 1e-6);
    Vec2 xe = fwd.pts.back();
    Vec2 ve = fwd.vels.back();
    GeodesicRay bwd = shoot_ray(m, xe, -1.0 * ve);
    CHECK((bwd.pts.back() - x0).norm() <= 1e-5);
    CHECK(bwd.tau_plus == Catch::Approx(fwd.tau_plus).margin(1e-6));
}

TEST_CASE("polar_chart: Euclidean disk has b = r^2") {
    SimpleManifold disk = build_manifold(disk_cfg(48));
    PolarChart ch = polar_chart(disk, {-disk.R1, 0.0}, 40, 32);
    for (int ir = 0; ir < ch.n_r(); ++ir)
        for (int it = 0; it < ch.n_theta(); ++it) {
            int id = ch.at(ir, it);
            if (!ch.valid[id]) continue;
            CHECK(std::abs(ch.b[id] - ch.r[ir] * ch.r[ir]) < 1e-10);
        }
    CHECK(ch.speed_drift <= 1e-10);
    // node tables: r equals the Euclidean distance
    for (int id = 0; id < disk.grid.size(); ++id)
        if (disk.in_M[id]) {
            int i = id % disk.grid.nx, j = id / disk.grid.nx;
            Vec2 p = disk.grid.point(i, j);
            CHECK(ch.node_r[id] == Catch::Approx((p - ch.y).norm()).margin(1e-12));
        }
}

TEST_CASE("polar_chart: conformal b matches the FD Jacobian of exp_y") {
    SimpleManifold m = build_manifold(conf_cfg(32));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 30, 256);
    double dth = ch.theta[1] - ch.theta[0];
    int checked = 0;
    for (int ir = 2; ir < ch.n_r(); ir += 4)
        for (int it = 1; it + 1 < ch.n_theta(); it += 17) {
            int id0 = ch.at(ir, it - 1), id1 = ch.at(ir, it), id2 = ch.at(ir, it + 1);
            if (!(ch.valid[id0] && ch.valid[id1] && ch.valid[id2])) continue;
            Vec2 dpdth = (1.0 / (2.0 * dth)) * (ch.pts[id2] - ch.pts[id0]);
            double bfd = m.conformal(ch.pts[id1]) * dpdth.dot(dpdth);
            CHECK(std::abs(std::sqrt(ch.b[id1]) - std::sqrt(bfd)) < 1e-3);
            ++checked;
        }
    CHECK(checked > 20);
}

TEST_CASE("polar_chart: Gauss lemma, node_r equals geodesic distance") {
    SimpleManifold m = build_manifold(conf_cfg(24));
    Vec2 y{-m.R1, 0.0};
    PolarChart ch = polar_chart(m, y, 20, 32);
    int checked = 0;
    for (int j = 2; j < m.grid.ny; j += 7)
        for (int i = 2; i < m.grid.nx; i += 7) {
            int id = m.grid.idx(i, j);
            if (!m.in_M[id]) continue;
            double d = distance(m, y, m.grid.point(i, j));
            CHECK(ch.node_r[id] == Catch::Approx(d).margin(1e-5));
            ++checked;
        }
    CHECK(checked >= 3);
}

TEST_CASE("resample_ray returns uniform arc samples with matched endpoints") {
    SimpleManifold m = build_manifold(conf_cfg());
    GeodesicRay ray = shoot_ray(m, {-m.R1, 0.0}, {1.0, 0.2});
    auto pts = resample_ray(m, ray, 65);
    REQUIRE(pts.size() == 65);
    CHECK((pts.front() - ray.x0).norm() < 1e-12);
    CHECK((pts.back() - ray.pts.back()).norm() < 1e-7);
}
