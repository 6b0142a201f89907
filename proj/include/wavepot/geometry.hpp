#pragma once

// Simple 2D manifolds with boundary: Euclidean disk, Euclidean rectangle and
// a radially conformal disk (g = c(|x|) * identity).  Provides geodesic
// shooting, boundary-point distance, polar normal coordinates around a
// boundary point of the extension M1, and the Jacobi-field volume factor
// b(r,theta) = det g0 used by the transport amplitudes.
//
// All supported metrics are conformal to the Euclidean one, which keeps the
// machinery uniform: |v|_g^2 = c |v|^2, angles agree with Euclidean angles,
// and the Gaussian curvature has a closed radial form.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "wavepot/core.hpp"
#include "wavepot/io.hpp"

namespace wavepot {

enum class ManifoldKind { EuclideanDisk, EuclideanRectangle, RadialConformalDisk };

struct ManifoldConfig {
    ManifoldKind kind = ManifoldKind::EuclideanDisk;
    double radius = 1.0;             // disk kinds
    double side_x = 1.0, side_y = 1.0;  // rectangle
    int resolution = 64;             // grid cells across the diameter of M
    double extension_margin = 0.2;   // fraction of diam(M) added around M
    // c(rho) = 1 + sum_k coeff[k] * rho^{2(k+1)}
    std::vector<double> conformal_coefficients;
};

inline ManifoldKind parse_kind(const std::string& s) {
    if (s == "euclidean-disk") return ManifoldKind::EuclideanDisk;
    if (s == "euclidean-rectangle") return ManifoldKind::EuclideanRectangle;
    if (s == "radial-conformal-disk") return ManifoldKind::RadialConformalDisk;
    throw Error("unsupported manifold kind: " + s);
}

inline ManifoldConfig manifold_config_from(const Config& c, const std::string& section = "manifold") {
    auto key = [&](const std::string& k) { return section.empty() ? k : section + "." + k; };
    ManifoldConfig mc;
    mc.kind = parse_kind(c.get(key("kind"), "euclidean-disk"));
    mc.radius = c.get_double(key("radius"), 1.0);
    mc.side_x = c.get_double(key("side_x"), c.get_double(key("side"), 1.0));
    mc.side_y = c.get_double(key("side_y"), c.get_double(key("side"), 1.0));
    mc.resolution = c.get_int(key("resolution"), 64);
    mc.extension_margin = c.get_double(key("extension_margin"), 0.2);
    mc.conformal_coefficients = c.get_list(key("conformal_coefficients"), {});
    return mc;
}

class SimpleManifold {
public:
    ManifoldConfig cfg;
    ManifoldKind kind = ManifoldKind::EuclideanDisk;
    Grid2D grid;                      // covers M1 plus a small pad
    std::vector<std::uint8_t> in_M, in_M1;
    double R = 0.0, R1 = 0.0;         // disk kinds
    Vec2 rlo, rhi, r1lo, r1hi;        // rectangle kind

    bool is_flat() const { return kind != ManifoldKind::RadialConformalDisk; }

    // conformal factor and helpers; c is a polynomial in s = rho^2
    double c_of_s(double s) const {
        double c = 1.0, p = s;
        for (double a : cfg.conformal_coefficients) { c += a * p; p *= s; }
        return c;
    }
    double dc_ds(double s) const {
        double d = 0.0, p = 1.0;
        for (std::size_t k = 0; k < cfg.conformal_coefficients.size(); ++k) {
            d += (k + 1.0) * cfg.conformal_coefficients[k] * p;
            p *= s;
        }
        return d;
    }
    double d2c_ds2(double s) const {
        double d = 0.0, p = 1.0;
        for (std::size_t k = 1; k < cfg.conformal_coefficients.size(); ++k) {
            d += (k + 1.0) * k * cfg.conformal_coefficients[k] * p;
            p *= s;
        }
        return d;
    }
    double conformal(const Vec2& x) const {
        if (is_flat()) return 1.0;
        return c_of_s(x.dot(x));
    }
    Vec2 grad_conformal(const Vec2& x) const {
        if (is_flat()) return {0.0, 0.0};
        return 2.0 * dc_ds(x.dot(x)) * x;
    }
    // Gaussian curvature of g = c * delta: K = -(1/c) Lap(log(c)/2),
    // radially: Lap phi = 2 c_s / c + 2 s (c_ss c - c_s^2) / c^2, s = rho^2.
    double curvature(const Vec2& x) const {
        if (is_flat()) return 0.0;
        double s = x.dot(x);
        double c = c_of_s(s), cs = dc_ds(s), css = d2c_ds2(s);
        double lap_phi = 2.0 * cs / c + 2.0 * s * (css * c - cs * cs) / (c * c);
        return -lap_phi / c;
    }

    // Euclidean signed distance functions, negative inside.
    double sdf_M(const Vec2& x) const {
        if (kind == ManifoldKind::EuclideanRectangle) return sdf_rect(x, rlo, rhi);
        return x.norm() - R;
    }
    double sdf_M1(const Vec2& x) const {
        if (kind == ManifoldKind::EuclideanRectangle) return sdf_rect(x, r1lo, r1hi);
        return x.norm() - R1;
    }
    static double sdf_rect(const Vec2& x, const Vec2& lo, const Vec2& hi) {
        double dx = std::max(lo.x - x.x, x.x - hi.x);
        double dy = std::max(lo.y - x.y, x.y - hi.y);
        if (dx <= 0.0 && dy <= 0.0) return std::max(dx, dy);
        return std::sqrt(sqr(std::max(dx, 0.0)) + sqr(std::max(dy, 0.0)));
    }

    Vec2 outward_normal_M1(const Vec2& x) const {
        if (kind != ManifoldKind::EuclideanRectangle) {
            double n = x.norm();
            return {x.x / n, x.y / n};
        }
        // nearest face of the extension rectangle
        double d[4] = {x.x - r1lo.x, r1hi.x - x.x, x.y - r1lo.y, r1hi.y - x.y};
        int best = 0;
        for (int k = 1; k < 4; ++k)
            if (std::abs(d[k]) < std::abs(d[best])) best = k;
        switch (best) {
            case 0: return {-1.0, 0.0};
            case 1: return {1.0, 0.0};
            case 2: return {0.0, -1.0};
            default: return {0.0, 1.0};
        }
    }
    Vec2 outward_normal_M(const Vec2& x) const {
        if (kind != ManifoldKind::EuclideanRectangle) {
            double n = x.norm();
            return {x.x / n, x.y / n};
        }
        double d[4] = {x.x - rlo.x, rhi.x - x.x, x.y - rlo.y, rhi.y - x.y};
        int best = 0;
        for (int k = 1; k < 4; ++k)
            if (std::abs(d[k]) < std::abs(d[best])) best = k;
        switch (best) {
            case 0: return {-1.0, 0.0};
            case 1: return {1.0, 0.0};
            case 2: return {0.0, -1.0};
            default: return {0.0, 1.0};
        }
    }

    // metric diameter of M1 (upper bound used to cap ray lengths)
    double diam_M1() const {
        if (kind == ManifoldKind::EuclideanRectangle) return (r1hi - r1lo).norm();
        if (is_flat()) return 2.0 * R1;
        // radial geodesic through the center, by symmetry
        int n = 401;
        std::vector<double> f(n);
        for (int i = 0; i < n; ++i) {
            double rho = R1 * i / (n - 1.0);
            f[i] = std::sqrt(c_of_s(rho * rho));
        }
        return 2.0 * simpson(f, R1 / (n - 1.0));
    }
    double diam_M() const {
        if (kind == ManifoldKind::EuclideanRectangle) return (rhi - rlo).norm();
        if (is_flat()) return 2.0 * R;
        int n = 401;
        std::vector<double> f(n);
        for (int i = 0; i < n; ++i) {
            double rho = R * i / (n - 1.0);
            f[i] = std::sqrt(c_of_s(rho * rho));
        }
        return 2.0 * simpson(f, R / (n - 1.0));
    }

    // arc-length samples of a boundary curve (Euclidean parametrization)
    std::vector<Vec2> boundary_points(bool extension, int n) const {
        std::vector<Vec2> out(n);
        if (kind != ManifoldKind::EuclideanRectangle) {
            double rad = extension ? R1 : R;
            for (int i = 0; i < n; ++i) {
                double a = 2.0 * kPi * i / n;
                out[i] = {rad * std::cos(a), rad * std::sin(a)};
            }
            return out;
        }
        Vec2 lo = extension ? r1lo : rlo, hi = extension ? r1hi : rhi;
        double sx = hi.x - lo.x, sy = hi.y - lo.y, per = 2.0 * (sx + sy);
        for (int i = 0; i < n; ++i) {
            double s = per * i / n;
            if (s < sx) out[i] = {lo.x + s, lo.y};
            else if (s < sx + sy) out[i] = {hi.x, lo.y + (s - sx)};
            else if (s < 2 * sx + sy) out[i] = {hi.x - (s - sx - sy), hi.y};
            else out[i] = {lo.x, hi.y - (s - 2 * sx - sy)};
        }
        return out;
    }

    // geodesic curvature of the boundary of M (discrete second fundamental
    // form); for the rectangle this is the per-face value (corners excluded).
    double min_boundary_curvature() const {
        if (kind == ManifoldKind::EuclideanRectangle) return 0.0;
        // circle of radius R in metric c*delta: k_g = (1/R + c'/(2c)) / sqrt(c)
        double s = R * R;
        double c = c_of_s(s);
        double cp = 2.0 * R * dc_ds(s);  // dc/drho at rho = R
        return (1.0 / R + cp / (2.0 * c)) / std::sqrt(c);
    }
};

inline SimpleManifold build_manifold(const ManifoldConfig& cfg) {
    SimpleManifold m;
    m.cfg = cfg;
    m.kind = cfg.kind;
    double diam, h;
    Vec2 lo, hi;
    if (cfg.kind == ManifoldKind::EuclideanRectangle) {
        m.rlo = {0.0, 0.0};
        m.rhi = {cfg.side_x, cfg.side_y};
        diam = (m.rhi - m.rlo).norm();
        // align the grid with the rectangle: h divides side_x, and the
        // extension pad is a whole number of cells
        h = cfg.side_x / cfg.resolution;
        double pad = std::ceil(cfg.extension_margin * diam / h) * h;
        m.r1lo = m.rlo - Vec2(pad, pad);
        m.r1hi = m.rhi + Vec2(pad, pad);
        lo = m.r1lo - Vec2(2 * h, 2 * h);
        hi = m.r1hi + Vec2(2 * h, 2 * h);
    } else {
        m.R = cfg.radius;
        diam = 2.0 * cfg.radius;
        m.R1 = m.R + cfg.extension_margin * diam;
        h = diam / cfg.resolution;
        lo = {-m.R1 - 2 * h, -m.R1 - 2 * h};
        hi = {m.R1 + 2 * h, m.R1 + 2 * h};
    }
    m.grid.h = h;
    m.grid.x0 = lo.x;
    m.grid.y0 = lo.y;
    m.grid.nx = static_cast<int>(std::ceil((hi.x - lo.x) / h)) + 1;
    m.grid.ny = static_cast<int>(std::ceil((hi.y - lo.y) / h)) + 1;

    m.in_M.resize(m.grid.size());
    m.in_M1.resize(m.grid.size());
    double cmin = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m.grid.ny; ++j)
        for (int i = 0; i < m.grid.nx; ++i) {
            Vec2 p = m.grid.point(i, j);
            int id = m.grid.idx(i, j);
            m.in_M[id] = m.sdf_M(p) <= 1e-9 * h ? 1 : 0;
            m.in_M1[id] = m.sdf_M1(p) <= 1e-9 * h ? 1 : 0;
            cmin = std::min(cmin, m.conformal(p));
        }
    if (cmin <= 0.0) throw Error("build_manifold: conformal factor not positive definite on grid");
    if (m.min_boundary_curvature() < 0.0)
        throw Error("build_manifold: boundary not convex for the given conformal profile");
    return m;
}

// ---------------------------------------------------------------------------
// Geodesic integration (Hamiltonian form, fixed-step RK4).  State carries the
// Jacobi field J with J(0)=0, J'(0)=1 so that b = J^2 comes for free.
// ---------------------------------------------------------------------------

struct GeoState {
    Vec2 x;   // position
    Vec2 p;   // momentum (p = c * velocity)
    double J = 0.0, Jp = 1.0;
};

namespace detail {

inline GeoState geo_rhs(const SimpleManifold& m, const GeoState& s) {
    double c = m.conformal(s.x);
    Vec2 gc = m.grad_conformal(s.x);
    double p2 = s.p.dot(s.p);
    GeoState d;
    d.x = (1.0 / c) * s.p;
    d.p = (p2 / (2.0 * c * c)) * gc;
    d.J = s.Jp;
    d.Jp = -m.curvature(s.x) * s.J;
    return d;
}

inline GeoState geo_step(const SimpleManifold& m, const GeoState& s, double ds) {
    auto axpy = [](const GeoState& a, double t, const GeoState& b) {
        GeoState r;
        r.x = a.x + t * b.x;
        r.p = a.p + t * b.p;
        r.J = a.J + t * b.J;
        r.Jp = a.Jp + t * b.Jp;
        return r;
    };
    GeoState k1 = geo_rhs(m, s);
    GeoState k2 = geo_rhs(m, axpy(s, ds / 2, k1));
    GeoState k3 = geo_rhs(m, axpy(s, ds / 2, k2));
    GeoState k4 = geo_rhs(m, axpy(s, ds, k3));
    GeoState r;
    r.x = s.x + (ds / 6) * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    r.p = s.p + (ds / 6) * (k1.p + 2 * k2.p + 2 * k3.p + k4.p);
    r.J = s.J + (ds / 6) * (k1.J + 2 * k2.J + 2 * k3.J + k4.J);
    r.Jp = s.Jp + (ds / 6) * (k1.Jp + 2 * k2.Jp + 2 * k3.Jp + k4.Jp);
    return r;
}

// initial state for a unit-speed geodesic from x0 in Euclidean direction dir
inline GeoState geo_init(const SimpleManifold& m, const Vec2& x0, const Vec2& dir) {
    double c = m.conformal(x0);
    double n = dir.norm();
    GeoState s;
    s.x = x0;
    // |p|_g = |p|/sqrt(c) = 1  =>  |p| = sqrt(c); p parallel to dir
    s.p = (std::sqrt(c) / n) * dir;
    s.J = 0.0;
    s.Jp = 1.0;
    return s;
}

}  // namespace detail

struct GeodesicRay {
    Vec2 x0, dir;              // launch point and Euclidean unit direction
    double tau_plus = 0.0;     // metric arc length to the exit through bd M1
    double ds = 0.0;           // sample spacing (arc length)
    std::vector<Vec2> pts;     // samples at s = k*ds, last one at tau_plus
    std::vector<Vec2> vels;    // velocities (Euclidean components)
    double speed_drift = 0.0;  // max | |gamma'|_g - 1 | along the ray
};

// Shoot a unit-speed geodesic from x on (or inside) bd M1 in an inward
// direction; exit through bd M1 located by bisection on the signed distance.
inline GeodesicRay shoot_ray(const SimpleManifold& m, const Vec2& x, const Vec2& dir,
                             double step = 0.0) {
    Vec2 nout = m.outward_normal_M1(x);
    if (m.sdf_M1(x) > -1e-9 && dir.dot(nout) >= -1e-12)
        throw Error("shoot_ray: direction not inward at the boundary point");
    double ds = step > 0.0 ? step : m.grid.h / 4.0;
    double smax = 1.5 * m.diam_M1() + 1.0;
    GeodesicRay ray;
    ray.x0 = x;
    ray.dir = (1.0 / dir.norm()) * dir;
    ray.ds = ds;

    GeoState s = detail::geo_init(m, x, dir);
    GeoState prev = s;
    double arc = 0.0;
    ray.pts.push_back(s.x);
    ray.vels.push_back((1.0 / m.conformal(s.x)) * s.p);
    bool exited = false;
    while (arc < smax) {
        prev = s;
        s = detail::geo_step(m, s, ds);
        arc += ds;
        double drift = std::abs(s.p.dot(s.p) / m.conformal(s.x) - 1.0);
        ray.speed_drift = std::max(ray.speed_drift, drift);
        if (m.sdf_M1(s.x) > 0.0 && arc > ds) {
            // bisection on the fractional step
            double lo = 0.0, hi = ds;
            GeoState mid = s;
            for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
                double half = 0.5 * (lo + hi);
                mid = detail::geo_step(m, prev, half);
                if (m.sdf_M1(mid.x) > 0.0) hi = half;
                else lo = half;
            }
            double frac = 0.5 * (lo + hi);
            mid = detail::geo_step(m, prev, frac);
            ray.tau_plus = arc - ds + frac;
            ray.pts.push_back(mid.x);
            ray.vels.push_back((1.0 / m.conformal(mid.x)) * mid.p);
            exited = true;
            break;
        }
        ray.pts.push_back(s.x);
        ray.vels.push_back((1.0 / m.conformal(s.x)) * s.p);
    }
    if (!exited) throw Error("shoot_ray: step count exceeded (trapped ray?)");
    return ray;
}

// Re-sample a geodesic at exactly n uniform arc-length samples over
// [0, tau_plus] by re-integration (used by the ray-transform quadrature).
inline std::vector<Vec2> resample_ray(const SimpleManifold& m, const GeodesicRay& ray, int n) {
    std::vector<Vec2> out(n);
    double ds = ray.tau_plus / (n - 1);
    GeoState s = detail::geo_init(m, ray.x0, ray.dir);
    out[0] = s.x;
    for (int i = 1; i < n; ++i) {
        s = detail::geo_step(m, s, ds);
        out[i] = s.x;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Polar normal coordinates around a boundary point y of M1.
// ---------------------------------------------------------------------------

// Inversion result: x = exp_y(r * theta-direction), theta measured from the
// inward normal at y, b = Jacobi volume factor at (r, theta).
struct ChartInverse {
    double r = 0.0, theta = 0.0, b = 0.0;
    bool ok = false;
};

// Fan of geodesics out of y used to invert the exponential map on the
// conformal kind.  Flat kinds bypass it with closed forms.
class PolarFan {
public:
    PolarFan(const SimpleManifold& m, const Vec2& y, int n_fan = 129)
        : m_(&m), y_(y), n_fan_(n_fan) {
        nin_ = -1.0 * m.outward_normal_M1(y);
        base_angle_ = std::atan2(nin_.y, nin_.x);
        ds_ = m.grid.h / 4.0;
        if (m_->is_flat()) return;
        alpha_lo_ = -kPi / 2 * 0.999;
        dalpha_ = (kPi * 0.999) / (n_fan - 1);
        pos_.resize(n_fan);
        for (int k = 0; k < n_fan; ++k) {
            double alpha = alpha_lo_ + k * dalpha_;
            GeoState s = detail::geo_init(*m_, y_, dir_at(alpha));
            double smax = 1.3 * m_->diam_M1();
            pos_[k].push_back(s.x);
            for (double arc = 0.0; arc < smax; arc += ds_) {
                s = detail::geo_step(*m_, s, ds_);
                pos_[k].push_back(s.x);
                if (m_->sdf_M1(s.x) > 0.05 * m_->diam_M1()) break;
            }
        }
    }

    Vec2 dir_at(double alpha) const {
        double ca = std::cos(base_angle_ + alpha), sa = std::sin(base_angle_ + alpha);
        return {ca, sa};
    }

    // Invert exp_y at x; guess_alpha (if finite) warm-starts the solve.
    ChartInverse invert(const Vec2& x, double guess_alpha =
                            std::numeric_limits<double>::quiet_NaN()) const {
        ChartInverse out;
        if (m_->is_flat()) {
            Vec2 d = x - y_;
            out.r = d.norm();
            if (out.r < 1e-14) return out;
            double a = std::atan2(d.y, d.x) - base_angle_;
            while (a > kPi) a -= 2 * kPi;
            while (a < -kPi) a += 2 * kPi;
            out.theta = a;
            out.b = out.r * out.r;
            out.ok = std::abs(a) < kPi / 2;
            return out;
        }
        double alpha = guess_alpha;
        if (!std::isfinite(alpha)) alpha = coarse_alpha(x);
        // secant-style correction using the Jacobi field as the derivative
        double r = 0.0, b = 0.0, miss = 1e9;
        for (int it = 0; it < 60; ++it) {
            double m_perp = 0.0;
            if (!trace_closest(alpha, x, r, b, m_perp, miss)) return out;
            double J = std::sqrt(std::max(b, 1e-12));
            alpha += std::sqrt(m_->conformal(x)) * m_perp / J;
            if (std::abs(m_perp) < 1e-11) break;
        }
        out.r = r;
        out.theta = alpha;
        out.b = b;
        out.ok = miss < 1e-8 && std::abs(alpha) < kPi / 2;
        return out;
    }

private:
    double coarse_alpha(const Vec2& x) const {
        double best = 1e30;
        int bk = n_fan_ / 2;
        for (int k = 0; k < n_fan_; ++k)
            for (std::size_t i = 0; i < pos_[k].size(); i += 3) {
                double d = (pos_[k][i] - x).norm();
                if (d < best) { best = d; bk = k; }
            }
        return alpha_lo_ + bk * dalpha_;
    }

    // Integrate the ray at angle alpha, find the closest approach to x.
    // Outputs arc length r, Jacobi b, signed perpendicular miss (Euclidean),
    // and the total miss distance.
    bool trace_closest(double alpha, const Vec2& x, double& r, double& b,
                       double& m_perp, double& miss) const {
        GeoState s = detail::geo_init(*m_, y_, dir_at(alpha));
        double smax = 1.3 * m_->diam_M1();
        double arc = 0.0;
        double dprev2 = 1e30, dcur2 = (s.x - x).dot(s.x - x);
        GeoState prev = s, prev2 = s;
        double best_arc = 0.0;
        bool increasing_seen = false;
        while (arc < smax) {
            prev2 = prev;
            prev = s;
            s = detail::geo_step(*m_, s, ds_);
            arc += ds_;
            double d2 = (s.x - x).dot(s.x - x);
            if (d2 > dcur2 && dcur2 <= dprev2) {
                // minimum bracketed around the previous sample; refine the
                // arc parameter by Newton on d/ds |pos - x|^2 = 0
                double dm = dprev2, d0 = dcur2, dp = d2;
                double denom = dm - 2 * d0 + dp;
                double off = denom > 1e-30 ? 0.5 * (dm - dp) / denom : 0.0;
                off = std::clamp(off, -1.0, 1.0);
                double step_len = ds_ + off * ds_;
                GeoState at = detail::geo_step(*m_, prev2, step_len);
                Vec2 vhat{0.0, 0.0};
                Vec2 e{0.0, 0.0};
                for (int nit = 0; nit < 8; ++nit) {
                    Vec2 v = (1.0 / m_->conformal(at.x)) * at.p;
                    double vn = v.norm();
                    vhat = {v.x / vn, v.y / vn};
                    e = x - at.x;
                    double dlong = e.dot(vhat) / vn;  // arc-length correction
                    step_len = std::clamp(step_len + dlong, -ds_, 3.0 * ds_);
                    at = detail::geo_step(*m_, prev2, step_len);
                    if (std::abs(dlong) < 1e-13) break;
                }
                Vec2 v = (1.0 / m_->conformal(at.x)) * at.p;
                double vn = v.norm();
                vhat = {v.x / vn, v.y / vn};
                e = x - at.x;
                m_perp = -e.x * vhat.y + e.y * vhat.x;  // component along rot90(vhat)
                best_arc = arc - 2 * ds_ + step_len;
                r = best_arc;
                b = at.J * at.J;
                miss = e.norm();
                increasing_seen = true;
                break;
            }
            dprev2 = dcur2;
            dcur2 = d2;
            if (m_->sdf_M1(s.x) > 0.05 * m_->diam_M1()) break;
        }
        return increasing_seen;
    }

    const SimpleManifold* m_;
    Vec2 y_, nin_;
    double base_angle_ = 0.0;
    int n_fan_;
    double alpha_lo_ = 0.0, dalpha_ = 0.0, ds_ = 0.0;
    std::vector<std::vector<Vec2>> pos_;
};

// Geodesic distance from a boundary point y of M1 to x in M.
inline double distance(const SimpleManifold& m, const Vec2& y, const Vec2& x) {
    if (m.is_flat()) return (x - y).norm();
    PolarFan fan(m, y);
    ChartInverse inv = fan.invert(x);
    if (!inv.ok && (x - y).norm() > 1e-12)
        throw Error("distance: shooting failed to bracket the target");
    return inv.r;
}

struct PolarChart {
    Vec2 y;                       // base point on bd M1
    Vec2 inward_normal;
    std::vector<double> r;        // n_r radial samples, starting at r0
    std::vector<double> theta;    // n_theta angles from the inward normal
    std::vector<double> b;        // n_r x n_theta, row-major in (ir, ith)
    std::vector<Vec2> pts;        // chart sample points (exp_y)
    std::vector<std::uint8_t> valid;  // sample stayed inside M1
    double speed_drift = 0.0;     // max | |gamma'|_g - 1 | over chart rays

    // pullback tables on the manifold grid (NaN where not in M1 / not covered)
    Grid2D grid;
    std::vector<double> node_r, node_theta, node_b;

    int n_r() const { return static_cast<int>(r.size()); }
    int n_theta() const { return static_cast<int>(theta.size()); }
    int at(int ir, int ith) const { return ir * n_theta() + ith; }
};

// Build the polar normal chart at y (on bd M1): b(r,theta) along geodesic
// rays plus the inverse tables (r, theta, b as functions of the grid node).
inline PolarChart polar_chart(const SimpleManifold& m, const Vec2& y, int n_r, int n_theta) {
    PolarChart ch;
    ch.y = y;
    ch.inward_normal = -1.0 * m.outward_normal_M1(y);
    ch.grid = m.grid;
    double base_angle = std::atan2(ch.inward_normal.y, ch.inward_normal.x);

    double r0 = m.grid.h;  // pole regularization: start one grid cell out
    double rmax = 1.05 * m.diam_M1();
    ch.r.resize(n_r);
    for (int i = 0; i < n_r; ++i) ch.r[i] = r0 + (rmax - r0) * i / (n_r - 1.0);
    ch.theta.resize(n_theta);
    for (int k = 0; k < n_theta; ++k)
        ch.theta[k] = -kPi / 2 + kPi * (k + 0.5) / n_theta;

    ch.b.assign(static_cast<std::size_t>(n_r) * n_theta, 0.0);
    ch.pts.assign(static_cast<std::size_t>(n_r) * n_theta, Vec2());
    ch.valid.assign(static_cast<std::size_t>(n_r) * n_theta, 0);

    double ds = m.grid.h / 4.0;
    for (int k = 0; k < n_theta; ++k) {
        double a = base_angle + ch.theta[k];
        Vec2 dir{std::cos(a), std::sin(a)};
        GeoState s = detail::geo_init(m, y, dir);
        double arc = 0.0;
        int ir = 0;
        bool inside = true;
        while (ir < n_r && arc < rmax + ds) {
            double target = ch.r[ir];
            while (arc + ds <= target) {
                s = detail::geo_step(m, s, ds);
                arc += ds;
                ch.speed_drift = std::max(
                    ch.speed_drift, std::abs(s.p.dot(s.p) / m.conformal(s.x) - 1.0));
                if (m.sdf_M1(s.x) > 0.05 * m.diam_M1()) { inside = false; break; }
            }
            if (!inside) break;
            GeoState at = detail::geo_step(m, s, target - arc);
            int id = ch.at(ir, k);
            ch.pts[id] = at.x;
            ch.b[id] = at.J * at.J;
            ch.valid[id] = m.sdf_M1(at.x) <= 0.0 ? 1 : 0;
            ++ir;
        }
    }

    // inverse tables over the grid
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ch.node_r.assign(m.grid.size(), nan);
    ch.node_theta.assign(m.grid.size(), nan);
    ch.node_b.assign(m.grid.size(), nan);
    std::vector<std::string> failures;
    if (m.is_flat()) {
        for (int j = 0; j < m.grid.ny; ++j)
            for (int i = 0; i < m.grid.nx; ++i) {
                int id = m.grid.idx(i, j);
                if (!m.in_M1[id]) continue;
                Vec2 d = m.grid.point(i, j) - y;
                double rr = d.norm();
                if (rr < 1e-14) continue;
                double th = std::atan2(d.y, d.x) - base_angle;
                while (th > kPi) th -= 2 * kPi;
                while (th < -kPi) th += 2 * kPi;
                ch.node_r[id] = rr;
                ch.node_theta[id] = th;
                ch.node_b[id] = rr * rr;
            }
    } else {
        PolarFan fan(m, y);
        for (int j = 0; j < m.grid.ny; ++j) {
            double warm = nan;
            for (int i = 0; i < m.grid.nx; ++i) {
                int id = m.grid.idx(i, j);
                if (!m.in_M1[id]) { warm = nan; continue; }
                ChartInverse inv = fan.invert(m.grid.point(i, j), warm);
                if (!inv.ok) {
                    inv = fan.invert(m.grid.point(i, j));  // retry with coarse scan
                }
                if (inv.ok) {
                    ch.node_r[id] = inv.r;
                    ch.node_theta[id] = inv.theta;
                    ch.node_b[id] = inv.b;
                    warm = inv.theta;
                } else {
                    if (m.in_M[id])
                        failures.push_back("(" + std::to_string(i) + "," + std::to_string(j) + ")");
                    warm = nan;
                }
            }
        }
    }
    if (!failures.empty()) {
        std::string list;
        for (const auto& f : failures) list += f + " ";
        throw Error("polar_chart: inversion failed at nodes: " + list);
    }
    return ch;
}

}  // namespace wavepot
