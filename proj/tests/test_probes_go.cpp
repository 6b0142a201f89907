#include <catch2/catch_amalgamated.hpp>

#include "wavepot/probes.hpp"

using namespace wavepot;

namespace {

ManifoldConfig disk_cfg(int n, double margin = 0.2) {
    ManifoldConfig c;
    c.kind = ManifoldKind::EuclideanDisk;
    c.radius = 1.0;
    c.resolution = n;
    c.extension_margin = margin;
    return c;
}

ManifoldConfig conf_cfg(int n) {
    ManifoldConfig c;
    c.kind = ManifoldKind::RadialConformalDisk;
    c.radius = 1.0;
    c.resolution = n;
    c.extension_margin = 0.2;
    c.conformal_coefficients = {0.2};
    return c;
}

Potential smooth_q(double amp) {
    Potential q;
    q.f = [amp](double t, const Vec2& x) {
        return amp * std::cos(1.3 * t) * std::exp(-(x.x * x.x + x.y * x.y) / 0.5);
    };
    q.linf = amp;
    return q;
}

}  // namespace

TEST_CASE("solve_eikonal: Euclidean disk is the radial distance") {
    SimpleManifold m = build_manifold(disk_cfg(64));
    Vec2 y{-m.R1, 0.0};
    Eikonal e = solve_eikonal(m, y);
    double dev = 0.0;
    for (int j = 0; j < m.grid.ny; ++j)
        for (int i = 0; i < m.grid.nx; ++i) {
            int id = m.grid.idx(i, j);
            if (!m.in_M1[id] || !std::isfinite(e.psi[id])) continue;
            CHECK(e.psi[id] >= 0.0);
            dev = std::max(dev, std::abs(e.psi[id] - (m.grid.point(i, j) - y).norm()));
        }
    CHECK(dev <= 1e-8);
    // phase vanishes at the base point
    CHECK(distance(m, y, y) == Catch::Approx(0.0).margin(1e-14));
    // discrete gradient satisfies the unit-speed equation
    CHECK(eikonal_residual(m, e) <= 1e-3);
    // base point must sit on the extended boundary
    CHECK_THROWS_AS(solve_eikonal(m, Vec2{0.0, 0.0}), Error);
}

TEST_CASE("solve_eikonal: conformal residual at fine resolution") {
    SimpleManifold m = build_manifold(conf_cfg(128));
    Eikonal e = solve_eikonal(m, {-m.R1, 0.0});
    CHECK(eikonal_residual(m, e) <= 1e-3);
}

TEST_CASE("transport_amplitude: Euclidean closed form and residuals") {
    SimpleManifold m = build_manifold(disk_cfg(48));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 60, 48);

    Amplitude a = transport_amplitude(ch, 0.7);
    for (int ir = 0; ir < ch.n_r(); ir += 5)
        for (int it = 0; it < ch.n_theta(); it += 7) {
            int id = ch.at(ir, it);
            if (!ch.valid[id]) continue;
            double r = ch.r[ir];
            double expect = std::exp(-0.7 * (r + 0.3) / 2.0) / std::sqrt(r);
            CHECK(a.chart_value(0.3, r, ch.theta[it], ch.b[id]) ==
                  Catch::Approx(expect).margin(1e-10));
        }
    // grid pullback agrees with the chart evaluation
    for (int id = 0; id < m.grid.size(); id += 97) {
        if (!m.in_M[id]) continue;
        double r = ch.node_r[id];
        CHECK(a.at_node(0.3, id) ==
              Catch::Approx(std::exp(-0.7 * (r + 0.3) / 2.0) / std::sqrt(r)).margin(1e-10));
    }

    // vanishing attenuation: time independent r^{-1/2}
    Amplitude a0 = transport_amplitude(ch, 0.0);
    for (int id = 0; id < m.grid.size(); id += 53) {
        if (!m.in_M[id]) continue;
        CHECK(a0.at_node(0.0, id) == Catch::Approx(a0.at_node(0.7, id)).margin(1e-14));
        CHECK(a0.at_node(0.0, id) ==
              Catch::Approx(1.0 / std::sqrt(ch.node_r[id])).margin(1e-10));
    }

    CHECK(transport_residual_flat(a, 0.0) <= 1e-6);
    CHECK(transport_residual_flat(a, 0.4) <= 1e-6);
    GaussBump h{0.1, 0.3, 1.0};
    Plateau1D chi{-0.1, 4.0, 0.1};
    Amplitude ahc = transport_amplitude(ch, 1.1, h, chi);
    CHECK(transport_residual_flat(ahc, 0.2) <= 1e-6);

    CHECK_THROWS_AS(transport_amplitude(ch, -0.5), Error);
}

TEST_CASE("transport_amplitude: conformal chart residual by finite differences") {
    SimpleManifold m = build_manifold(conf_cfg(32));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 320, 48);
    Amplitude a = transport_amplitude(ch, 0.8, GaussBump{0.0, 0.4, 1.0});
    // checked on r >= R1 - R, the radii the probes actually visit inside M
    CHECK(transport_residual(a, 0.0, 0.4) <= 5e-3);
    CHECK(transport_residual(a, 0.5, 0.4) <= 5e-3);
}

TEST_CASE("make_go_probe: remainder honors boundary and endpoint conditions") {
    SimpleManifold m = build_manifold(disk_cfg(32));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 40, 40);
    Eikonal eik = eikonal_from_chart(ch);
    Amplitude amp = transport_amplitude(ch, 1.0, GaussBump{0.0, 0.35, 1.0});

    GoProbeOptions opt;
    opt.T = 0.7;
    opt.store_field = true;

    GoProbe p0 = make_go_probe(m, Potential::zero(), eik, amp, 20.0, +1, 0.0, opt);
    REQUIRE(p0.has_R);
    CHECK(p0.R_norm_t.front() == 0.0);
    CHECK(p0.R_norm_t.back() > 0.0);
    CHECK(p0.R_l2 > 0.0);
    CHECK(p0.eta > 0.0);
    // R vanishes identically at the endpoint frame and on the lateral boundary
    WaveSolver ws(m);
    const auto& types = ws.node_types();
    for (int id = 0; id < m.grid.size(); ++id) {
        CHECK(std::abs(p0.R.at(0, id)) == 0.0);
        if (types[id] == NodeType::Boundary)
            for (int k = 0; k < p0.time.nt; k += 7) CHECK(std::abs(p0.R.at(k, id)) == 0.0);
    }

    // endpoint T: remainder vanishes at the far end instead
    GoProbe pT = make_go_probe(m, smooth_q(0.4), eik, amp, 20.0, -1, opt.T, opt);
    CHECK(pT.R_norm_t.back() == 0.0);
    CHECK(pT.R_norm_t.front() > 0.0);

    CHECK_THROWS_AS(make_go_probe(m, Potential::zero(), eik, amp, 0.5, +1, 0.0, opt), Error);
}

TEST_CASE("make_go_probe: sigma ladder decay and the eta envelope") {
    SimpleManifold m = build_manifold(disk_cfg(48));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 40, 40);
    Eikonal eik = eikonal_from_chart(ch);
    Amplitude amp = transport_amplitude(ch, 1.0, GaussBump{0.0, 0.35, 1.0});
    Potential q = smooth_q(0.5);

    GoProbeOptions opt;
    opt.T = 0.8;

    std::vector<double> ladder{20.0, 40.0, 80.0, 160.0};
    std::vector<GoProbe> probes;
    for (double s : ladder) probes.push_back(make_go_probe(m, q, eik, amp, s, +1, 0.0, opt));

    for (std::size_t k = 0; k + 1 < probes.size(); ++k) {
        CHECK(probes[k + 1].R_l2 <= 1.05 * probes[k].R_l2);
        CHECK(probes[k + 1].eta <= 1.10 * probes[k].eta);
    }
    CHECK(probes.back().R_l2 <= 0.25 * probes.front().R_l2);
    CHECK(probes.back().eta <= 0.25 * probes.front().eta);

    // Gronwall-type envelope ||R(t)|| <= sqrt(2) eta e^{Ct}: fit C on the
    // coarsest run, verify the envelope across the ladder with mild slack
    const GoProbe& base = probes.front();
    double C = 0.0;
    for (int k = 0; k < base.time.nt; ++k) {
        double t = k * base.time.dt;
        if (t < 0.2 * opt.T) continue;
        double ratio = base.R_norm_t[k] / (std::sqrt(2.0) * base.eta);
        if (ratio > 0.0) C = std::max(C, std::log(ratio) / t);
    }
    for (const GoProbe& p : probes)
        for (int k = 0; k < p.time.nt; ++k) {
            double t = k * p.time.dt;
            if (t < 0.1 * opt.T) continue;
            CHECK(p.R_norm_t[k] <=
                  2.0 * std::sqrt(2.0) * p.eta * std::exp((C + 0.5) * t) + 1e-12);
        }
}

TEST_CASE("reflected_probe_pair: bottom-zero probe vanishes at t = 0") {
    SimpleManifold m = build_manifold(disk_cfg(32));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 40, 40);

    ReflectedOptions opt;
    opt.T = 1.0;
    opt.mu = 1.0;
    opt.h = GaussBump{0.0, 0.35, 1.0};
    opt.store_field = true;

    auto [u1, u2] = reflected_probe_pair(m, smooth_q(0.3), smooth_q(0.4), 16.0,
                                         DataMask::BottomZero, ch, opt);
    for (int id = 0; id < m.grid.size(); ++id) {
        if (!m.in_M[id]) continue;
        CHECK(std::abs(u2.ansatz_at(0.0, id)) == 0.0);
        CHECK(std::abs(u2.total_at(0, id)) == 0.0);
    }
    CHECK(u2.R_norm_t.front() == 0.0);
    // the first probe carries its zero Cauchy data at t = T
    CHECK(u1.R_norm_t.back() == 0.0);
    CHECK(u1.R_norm_t.front() > 0.0);
}

TEST_CASE("reflected_probe_pair: bottom-top cutoff product vanishes") {
    SimpleManifold m = build_manifold(disk_cfg(32));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 40, 40);

    ReflectedOptions opt;
    opt.T = 3.2;  // > Diam(M1) = 2.8
    opt.mu = 0.8;
    opt.h = GaussBump{0.0, 0.35, 1.0};
    opt.eps = 0.05;

    auto [u1, u2] = reflected_probe_pair(m, smooth_q(0.3), smooth_q(0.3), 16.0,
                                         DataMask::BottomTop, ch, opt);
    (void)u1;
    (void)u2;
    const Amplitude& a1 = u1.amp;
    const Amplitude& a2 = u2.amp;
    double T = opt.T;
    for (int k = 0; k <= 40; ++k) {
        double t = T * k / 40.0;
        for (int id = 0; id < m.grid.size(); id += 3) {
            if (!m.in_M[id]) continue;
            CHECK(std::abs(a1.at_node(2.0 * T - t, id) * a2.at_node(-t, id)) == 0.0);
        }
    }
    // both probes still vanish at their respective endpoints
    CHECK(u2.R_norm_t.front() == 0.0);
    CHECK(u1.R_norm_t.back() == 0.0);

    // margin violation is rejected
    ReflectedOptions bad = opt;
    bad.eps = 0.25;  // 2*eps = 0.5 > T - Diam(M1) = 0.4
    CHECK_THROWS_AS(reflected_probe_pair(m, smooth_q(0.3), smooth_q(0.3), 16.0,
                                         DataMask::BottomTop, ch, bad),
                    Error);
    CHECK_THROWS_AS(reflected_probe_pair(m, smooth_q(0.3), smooth_q(0.3), 16.0,
                                         DataMask::Full, ch, opt),
                    Error);
}

TEST_CASE("make_go_probe: conformal kind runs with the FD source") {
    SimpleManifold m = build_manifold(conf_cfg(24));
    PolarChart ch = polar_chart(m, {-m.R1, 0.0}, 30, 32);
    Eikonal eik = eikonal_from_chart(ch);
    Amplitude amp = transport_amplitude(ch, 1.0, GaussBump{0.0, 0.35, 1.0});

    GoProbeOptions opt;
    opt.T = 0.4;
    GoProbe lo = make_go_probe(m, Potential::zero(), eik, amp, 12.0, +1, 0.0, opt);
    GoProbe hi = make_go_probe(m, Potential::zero(), eik, amp, 48.0, +1, 0.0, opt);
    CHECK(std::isfinite(lo.R_l2));
    CHECK(lo.R_l2 > 0.0);
    CHECK(hi.R_l2 <= lo.R_l2);
}
