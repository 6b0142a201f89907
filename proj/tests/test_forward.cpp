#include <catch2/catch_amalgamated.hpp>

#include "wavepot/forward.hpp"

using namespace wavepot;

namespace {

ManifoldConfig rect_cfg(int n) {
    ManifoldConfig c;
    c.kind = ManifoldKind::EuclideanRectangle;
    c.side_x = 1.0;
    c.side_y = 1.0;
    c.resolution = n;
    return c;
}

SpaceFunc eigenmode() {
    return [](const Vec2& p) { return cplx(std::sin(kPi * p.x) * std::sin(kPi * p.y)); };
}

double mode_error(const SimpleManifold& m, const SpaceTimeField& u, double omega) {
    // L2 error at the final time against v0 * cos(omega t)
    int k = u.time.nt - 1;
    double t = k * u.time.dt;
    std::vector<cplx> diff(m.grid.size(), cplx(0.0));
    for (int id = 0; id < m.grid.size(); ++id) {
        if (!m.in_M[id]) continue;
        Vec2 p = m.grid.point(id % m.grid.nx, id / m.grid.nx);
        cplx exact = std::sin(kPi * p.x) * std::sin(kPi * p.y) * std::cos(omega * t);
        diff[id] = u.at(k, id) - exact;
    }
    return l2_norm_M(m, diff.data());
}

}  // namespace

TEST_CASE("zero data gives the zero solution") {
    SimpleManifold m = build_manifold(rect_cfg(16));
    SpaceTimeField u = solve_ibvp(m, Potential::zero(), {}, {}, {}, 0.5);
    for (const cplx& z : u.v) CHECK(z == cplx(0.0));
}

TEST_CASE("rectangle eigenmode: second-order convergence") {
    double omega = std::sqrt(2.0) * kPi;
    double err[2];
    int idx = 0;
    for (int n : {24, 48}) {
        SimpleManifold m = build_manifold(rect_cfg(n));
        SpaceTimeField u = solve_ibvp(m, Potential::zero(), {}, eigenmode(), {}, 0.75);
        err[idx++] = mode_error(m, u, omega);
    }
    double ratio = err[0] / err[1];
    INFO("errors " << err[0] << " " << err[1] << " ratio " << ratio);
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
}

TEST_CASE("constant potential shifts the eigenmode frequency") {
    // q = 1: omega = sqrt(2 pi^2 + 1); first zero crossing of the mode
    // coefficient happens at t = pi / (2 omega)
    SimpleManifold m = build_manifold(rect_cfg(48));
    SpaceTimeField u = solve_ibvp(m, Potential::constant(1.0), {}, eigenmode(), {}, 0.5);
    double prev = 1.0, tzero = -1.0;
    for (int k = 0; k < u.time.nt; ++k) {
        double c = 0.0;
        for (int id = 0; id < m.grid.size(); ++id)
            if (m.in_M[id]) {
                Vec2 p = m.grid.point(id % m.grid.nx, id / m.grid.nx);
                c += (u.at(k, id) * std::sin(kPi * p.x) * std::sin(kPi * p.y)).real();
            }
        if (k > 0 && prev > 0.0 && c <= 0.0) {
            double t1 = (k - 1) * u.time.dt, t2 = k * u.time.dt;
            tzero = t1 + (t2 - t1) * prev / (prev - c);
            break;
        }
        prev = c;
    }
    double omega = std::sqrt(2.0 * kPi * kPi + 1.0);
    REQUIRE(tzero > 0.0);
    CHECK(std::abs(tzero - kPi / (2.0 * omega)) / (kPi / (2.0 * omega)) < 0.01);
}

TEST_CASE("energy drift stays within 1e-3 for q=0, f=0 over T=2") {
    SimpleManifold m = build_manifold(rect_cfg(32));
    WaveSolver solver(m);
    TimeGrid tg = make_time_grid(2.0, solver.cfl_dt());

    struct Rec {
        const WaveSolver* s;
        TimeGrid tg;
        std::vector<std::vector<cplx>> last;
        double emin = 1e300, emax = 0.0;
        void frame(int, double, const cplx* u) {
            last.emplace_back(u, u + s->manifold().grid.size());
            if (last.size() > 3) last.erase(last.begin());
            if (last.size() == 3) {
                double e = s->energy(last[0].data(), last[2].data(), last[1].data(), tg.dt);
                emin = std::min(emin, e);
                emax = std::max(emax, e);
            }
        }
    } rec{&solver, tg, {}, 1e300, 0.0};

    SpaceFunc v1 = [](const Vec2& p) {
        return cplx(0.0, std::sin(2 * kPi * p.x) * std::sin(kPi * p.y));
    };
    solver.run(Potential::zero(), {}, eigenmode(), v1, tg, rec);
    CHECK((rec.emax - rec.emin) / rec.emax <= 1e-3);
}

TEST_CASE("discrete finite speed of propagation") {
    SimpleManifold m = build_manifold(rect_cfg(32));
    WaveSolver solver(m);
    double t0 = 0.3;
    LateralFunc f = [t0](double t, const Vec2& p) {
        if (t <= t0) return cplx(0.0);
        return cplx(sqr(std::sin(kPi * (t - t0))) * std::sin(kPi * p.x) * std::sin(kPi * p.y) +
                    sqr(t - t0));
    };
    TimeGrid tg = make_time_grid(0.42, solver.cfl_dt());
    SpaceTimeField u = solver.solve(Potential::zero(), f, {}, {}, tg);

    // the numerical domain of dependence grows one cell per step: the center
    // is 16 cells from the boundary, so it must be exactly zero while
    // (k - k0) < 16
    int k0 = static_cast<int>(t0 / tg.dt);
    int kprobe = k0 + 14;
    REQUIRE(kprobe < tg.nt);
    int ic = static_cast<int>(std::round((0.5 - m.grid.x0) / m.grid.h));
    int id = m.grid.idx(ic, ic);
    REQUIRE(m.in_M[id] == 1);
    CHECK(u.at(kprobe, id) == cplx(0.0));

    // physically, u vanishes where dist(x, bd M) > t - t0; allow a small
    // dispersive tail outside the light cone
    double tend = tg.T();
    REQUIRE(0.5 - 16.0 / 32.0 <= 0.0);  // center is 0.5 from the boundary
    if (tend - t0 < 0.5) {
        double mag = std::abs(u.at(tg.nt - 1, id));
        CHECK(mag < 1e-8);
    }
}

TEST_CASE("solver is linear in the data") {
    SimpleManifold m = build_manifold(rect_cfg(24));
    LateralFunc f1 = [](double t, const Vec2& p) {
        return cplx(std::sin(3 * t) * p.x, std::cos(2 * t) * p.y);
    };
    LateralFunc f2 = [](double t, const Vec2& p) {
        return cplx(t * t * std::sin(kPi * p.y), std::sin(5 * t));
    };
    LateralFunc fc = [&](double t, const Vec2& p) { return 2.0 * f1(t, p) + f2(t, p); };
    Potential q = Potential::constant(0.7);
    SpaceTimeField u1 = solve_ibvp(m, q, f1, {}, {}, 0.6);
    SpaceTimeField u2 = solve_ibvp(m, q, f2, {}, {}, 0.6);
    SpaceTimeField uc = solve_ibvp(m, q, fc, {}, {}, 0.6);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < uc.v.size(); ++i) {
        num += std::norm(uc.v[i] - 2.0 * u1.v[i] - u2.v[i]);
        den += std::norm(uc.v[i]);
    }
    CHECK(std::sqrt(num / std::max(den, 1e-300)) < 1e-12);
}

TEST_CASE("CFL violation is rejected") {
    SimpleManifold m = build_manifold(rect_cfg(16));
    WaveSolver solver(m);
    TimeGrid bad{solver.cfl_dt() * 2.0, 10};
    struct Rec { void frame(int, double, const cplx*) {} } rec;
    CHECK_THROWS_AS(solver.run(Potential::zero(), {}, {}, {}, bad, rec), Error);
}

TEST_CASE("boundary operator: Neumann trace matches the eigenmode") {
    SimpleManifold m = build_manifold(rect_cfg(64));
    double omega = std::sqrt(2.0) * kPi;
    CauchyRecord rec = boundary_operator(m, Potential::zero(), {}, eigenmode(), {}, 0.4, 64);
    double maxerr = 0.0;
    for (int k = 0; k < rec.time.nt; k += 16)
        for (int b = 0; b < rec.n_b(); ++b) {
            Vec2 p = rec.bpts[b];
            Vec2 nu = rec.bnormals[b];
            // skip corners where the normal is ambiguous
            bool on_x = std::abs(p.x) < 1e-9 || std::abs(p.x - 1.0) < 1e-9;
            bool on_y = std::abs(p.y) < 1e-9 || std::abs(p.y - 1.0) < 1e-9;
            if (on_x && on_y) continue;
            double t = k * rec.time.dt;
            double gx = kPi * std::cos(kPi * p.x) * std::sin(kPi * p.y);
            double gy = kPi * std::sin(kPi * p.x) * std::cos(kPi * p.y);
            double exact = (gx * nu.x + gy * nu.y) * std::cos(omega * t);
            maxerr = std::max(maxerr, std::abs(rec.neu_at(k, b) - exact));
        }
    CHECK(maxerr < 0.02);
}

TEST_CASE("boundary operator is deterministic (bit-for-bit)") {
    SimpleManifold m = build_manifold(rect_cfg(16));
    LateralFunc f = [](double t, const Vec2& p) { return cplx(std::sin(2 * t) * p.x, 0.1 * t); };
    CauchyRecord a = boundary_operator(m, Potential::constant(0.5), f, {}, {}, 0.5, 32);
    CauchyRecord b = boundary_operator(m, Potential::constant(0.5), f, {}, {}, 0.5, 32);
    CHECK(a.neumann == b.neumann);
    CHECK(a.uT == b.uT);
    CHECK(a.utT == b.utT);
}

TEST_CASE("restrict: masks behave per the data-set definitions") {
    SimpleManifold m = build_manifold(rect_cfg(16));
    // driven run (u(0)=0) and an eigenmode run (u(0) != 0)
    LateralFunc fright = [](double t, const Vec2& p) {
        if (p.x < 1.0 - 1e-9) return cplx(0.0);  // supported on the right face only
        return cplx(std::sin(4 * t) * std::sin(kPi * p.y));
    };
    CauchyRecord driven = boundary_operator(m, Potential::zero(), fright, {}, {}, 0.5, 32);
    CauchyRecord modal = boundary_operator(m, Potential::zero(), {}, eigenmode(), {}, 0.5, 32);

    SECTION("full mask is the identity") {
        CauchyRecord r = restrict_record(m, modal, DataMask::Full);
        CHECK(r.neumann == modal.neumann);
        CHECK(r.has_u0);
    }
    SECTION("bottom-zero rejects nonzero initial trace") {
        CHECK_THROWS_AS(restrict_record(m, modal, DataMask::BottomZero), Error);
        CauchyRecord r = restrict_record(m, driven, DataMask::BottomZero);
        CHECK_FALSE(r.has_u0);
        CHECK(r.has_uT);
    }
    SECTION("bottom-top withholds u at the bottom and d_t u at the top") {
        CHECK_THROWS_AS(restrict_record(m, modal, DataMask::BottomTop), Error);
        CauchyRecord r = restrict_record(m, driven, DataMask::BottomTop);
        CHECK_FALSE(r.has_u0);
        CHECK_FALSE(r.has_utT);
        CHECK(r.has_ut0);
        CHECK(r.has_uT);
        CHECK(!r.neumann.empty());
    }
    SECTION("partial-lateral exposes (u|_U, d_t u|_0, d_nu u|_V, u|_T)") {
        BoundaryPartition part{0.25};
        CauchyRecord r = restrict_record(m, driven, DataMask::PartialLateral, part);
        CHECK(r.has_ut0);
        CHECK(r.has_uT);
        CHECK_FALSE(r.has_u0);
        CHECK_FALSE(r.has_utT);
        bool any_neu_hidden = false, any_neu_obs = false;
        for (int b = 0; b < r.n_b(); ++b) {
            if (r.bnormals[b].x > part.eps) {
                CHECK(r.neumann_obs[b] == 0);
                any_neu_hidden = true;
            } else {
                any_neu_obs = true;
            }
        }
        CHECK(any_neu_hidden);
        CHECK(any_neu_obs);

        // f supported outside U is rejected
        LateralFunc fleft = [](double t, const Vec2& p) {
            if (p.x > 1e-9) return cplx(0.0);
            return cplx(std::sin(4 * t) * std::sin(kPi * p.y));
        };
        CauchyRecord bad = boundary_operator(m, Potential::zero(), fleft, {}, {}, 0.5, 32);
        CHECK_THROWS_AS(restrict_record(m, bad, DataMask::PartialLateral, part), Error);
    }
}

TEST_CASE("disk solve: cut cells stay stable and zero data stays zero") {
    ManifoldConfig c;
    c.kind = ManifoldKind::EuclideanDisk;
    c.radius = 1.0;
    c.resolution = 48;
    SimpleManifold m = build_manifold(c);
    SpaceFunc v0 = [](const Vec2& p) {
        double r2 = p.dot(p);
        return cplx(r2 < 0.49 ? std::pow(1.0 - r2 / 0.49, 3.0) : 0.0);
    };
    SpaceTimeField u = solve_ibvp(m, Potential::constant(1.0), {}, v0, {}, 1.5);
    double mx = 0.0;
    for (const cplx& z : u.v) mx = std::max(mx, std::abs(z));
    CHECK(mx < 5.0);  // no instability
    CHECK(mx > 0.05);  // and the field actually moved
}
