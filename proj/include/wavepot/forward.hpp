#pragma once

// Explicit finite-difference solver for the initial-boundary value problem
//   a(x)^{-1} d_tt u - Lap_g u + q(t,x) u = 0   on (0,T) x M
//   u = f on (0,T) x bd M,  u(0) = v0,  d_t u(0) = v1
// with g = c * delta (so Lap_g = Lap / c in 2D) and a a positive conformal
// factor (unity by default).  Leapfrog in time, 5-point Laplacian with
// Shortley-Weller cut cells at the embedded disk boundary.  Also assembles
// the restricted Cauchy data records (full / bottom-zero / bottom-top /
// partial-lateral masks).

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "wavepot/core.hpp"
#include "wavepot/geometry.hpp"

namespace wavepot {

struct TimeGrid {
    double dt = 0.0;
    int nt = 0;  // samples t_k = k*dt, k = 0..nt-1
    double T() const { return dt * (nt - 1); }
};

struct SpaceTimeField {
    Grid2D grid;
    TimeGrid time;
    std::vector<cplx> v;  // nt * grid.size(), frame-major

    SpaceTimeField() = default;
    SpaceTimeField(const Grid2D& g, const TimeGrid& t)
        : grid(g), time(t), v(static_cast<std::size_t>(t.nt) * g.size(), cplx(0.0)) {}

    cplx& at(int k, int id) { return v[static_cast<std::size_t>(k) * grid.size() + id]; }
    const cplx& at(int k, int id) const {
        return v[static_cast<std::size_t>(k) * grid.size() + id];
    }
    const cplx* frame(int k) const { return v.data() + static_cast<std::size_t>(k) * grid.size(); }
    cplx* frame(int k) { return v.data() + static_cast<std::size_t>(k) * grid.size(); }
};

struct Potential {
    std::function<double(double, const Vec2&)> f;
    double linf = 0.0;

    double operator()(double t, const Vec2& x) const { return f ? f(t, x) : 0.0; }
    bool is_zero() const { return !f; }

    static Potential zero() { return {}; }
    static Potential constant(double v) {
        Potential p;
        p.f = [v](double, const Vec2&) { return v; };
        p.linf = std::abs(v);
        return p;
    }
    // restrict support to (0,T) x M (the zero extension used by the probes)
    static Potential restricted(const SimpleManifold& m, double T, Potential q) {
        Potential p;
        p.linf = q.linf;
        p.f = [&m, T, q](double t, const Vec2& x) {
            if (t < 0.0 || t > T || m.sdf_M(x) > 0.0) return 0.0;
            return q(t, x);
        };
        return p;
    }
};

using SpaceFunc = std::function<cplx(const Vec2&)>;
using LateralFunc = std::function<cplx(double, const Vec2&)>;
using ConformalFactor = std::function<double(const Vec2&)>;
// right-hand side S(t, node, x) of a^{-1} d_tt u - Lap_g u + q u = S
using SourceFunc = std::function<cplx(double, int, const Vec2&)>;

// L2 norm over M with the metric volume form dV_g = c dx.
inline double l2_norm_M(const SimpleManifold& m, const cplx* u) {
    double s = 0.0;
    for (int id = 0; id < m.grid.size(); ++id)
        if (m.in_M[id]) {
            int i = id % m.grid.nx, j = id / m.grid.nx;
            s += std::norm(u[id]) * m.conformal(m.grid.point(i, j));
        }
    return std::sqrt(s) * m.grid.h;
}

inline double l2_norm_spacetime(const SimpleManifold& m, const SpaceTimeField& u) {
    double s = 0.0;
    for (int k = 0; k < u.time.nt; ++k) {
        double w = (k == 0 || k == u.time.nt - 1) ? 0.5 : 1.0;
        double nk = l2_norm_M(m, u.frame(k));
        s += w * nk * nk;
    }
    return std::sqrt(s * u.time.dt);
}

enum class NodeType : std::uint8_t { Outside, Interior, Boundary, Cut };

class WaveSolver {
public:
    struct Arm {
        double alpha = 1.0;   // fractional arm length (1 = full cell)
        bool cut = false;     // arm ends on bd M
        Vec2 bpt;             // boundary intersection point when cut
    };
    struct CutData {
        int node = -1;
        Arm arm[4];  // -x, +x, -y, +y
    };

    explicit WaveSolver(const SimpleManifold& m, ConformalFactor a = {})
        : m_(&m), a_(std::move(a)) {
        const Grid2D& g = m.grid;
        type_.assign(g.size(), NodeType::Outside);
        speed2_.assign(g.size(), 0.0);
        double vmax2 = 0.0;
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                int id = g.idx(i, j);
                if (!m.in_M[id]) continue;
                Vec2 p = g.point(i, j);
                double av = a_ ? a_(p) : 1.0;
                if (av <= 0.0) throw Error("WaveSolver: conformal factor a must be positive");
                speed2_[id] = av / m.conformal(p);
                vmax2 = std::max(vmax2, speed2_[id]);
                if (std::abs(m.sdf_M(p)) <= 1e-9 * g.h) {
                    type_[id] = NodeType::Boundary;
                    continue;
                }
                bool cut = false;
                const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
                CutData cd;
                cd.node = id;
                for (int d = 0; d < 4; ++d) {
                    int ii = i + di[d], jj = j + dj[d];
                    bool nb_in = ii >= 0 && jj >= 0 && ii < g.nx && jj < g.ny &&
                                 (type_of_raw(ii, jj) != NodeType::Outside);
                    if (nb_in) continue;
                    cut = true;
                    Vec2 dir{static_cast<double>(di[d]), static_cast<double>(dj[d])};
                    // bisection for the boundary crossing along the arm
                    double lo = 0.0, hi = 1.0;
                    for (int it = 0; it < 50; ++it) {
                        double mid = 0.5 * (lo + hi);
                        if (m.sdf_M(p + (mid * g.h) * dir) > 0.0) hi = mid;
                        else lo = mid;
                    }
                    cd.arm[d].cut = true;
                    cd.arm[d].bpt = p + (0.5 * (lo + hi) * g.h) * dir;
                    // arm clamp keeps the stencil stable (first order at cuts)
                    cd.arm[d].alpha = std::max(0.5 * (lo + hi), 0.3);
                }
                if (cut) {
                    type_[id] = NodeType::Cut;
                    cut_index_.push_back(static_cast<int>(cuts_.size()));
                    cuts_.push_back(cd);
                    cut_of_node_[id] = static_cast<int>(cuts_.size()) - 1;
                } else {
                    type_[id] = NodeType::Interior;
                }
            }
        vmax_ = std::sqrt(vmax2);
        // CFL bound for the 5-point scheme, with headroom for the cut-cell
        // arm clamp (alpha >= 0.3)
        dt_cfl_ = 0.5 * std::sqrt(0.3) * g.h / (std::sqrt(2.0) * vmax_);
    }

    double cfl_dt() const { return dt_cfl_; }
    const std::vector<NodeType>& node_types() const { return type_; }
    const SimpleManifold& manifold() const { return *m_; }
    double conf_a(const Vec2& p) const { return a_ ? a_(p) : 1.0; }

    // Advance the scheme; rec.frame(k, t, u) is called for every time level.
    template <class Recorder>
    void run(const Potential& q, const LateralFunc& f, const SpaceFunc& v0, const SpaceFunc& v1,
             const TimeGrid& tg, Recorder&& rec, const SourceFunc& src = {}) const {
        const Grid2D& g = m_->grid;
        if (tg.dt > dt_cfl_ * (1.0 + 1e-12))
            throw Error("WaveSolver: CFL violation (dt too large)");
        const double dt = tg.dt, h = g.h;
        std::vector<cplx> um(g.size(), cplx(0.0)), uc(g.size(), cplx(0.0)),
            un(g.size(), cplx(0.0));

        // t = 0
        for (int id = 0; id < g.size(); ++id) {
            if (type_[id] == NodeType::Outside) continue;
            Vec2 p = point_of(id);
            uc[id] = type_[id] == NodeType::Boundary ? (f ? f(0.0, p) : cplx(0.0))
                                                     : (v0 ? v0(p) : cplx(0.0));
        }
        rec.frame(0, 0.0, uc.data());
        if (tg.nt == 1) return;

        // t = dt via Taylor start: u1 = u0 + dt v1 + dt^2/2 a (Lap_g u0 - q u0)
        for (int id = 0; id < g.size(); ++id) {
            if (type_[id] == NodeType::Outside) continue;
            Vec2 p = point_of(id);
            if (type_[id] == NodeType::Boundary) {
                un[id] = f ? f(dt, p) : cplx(0.0);
                continue;
            }
            cplx lap = laplacian(uc, id, 0.0, f);
            double qv = q(0.0, p);
            double av = a_ ? a_(p) : 1.0;
            cplx acc = av * (lap / m_->conformal(p) - qv * uc[id] +
                             (src ? src(0.0, id, p) : cplx(0.0)));
            un[id] = uc[id] + dt * (v1 ? v1(p) : cplx(0.0)) + 0.5 * dt * dt * acc;
        }
        um.swap(uc);
        uc.swap(un);
        rec.frame(1, dt, uc.data());

        for (int k = 2; k < tg.nt; ++k) {
            double t = k * dt, tc = (k - 1) * dt;
            for (int id = 0; id < g.size(); ++id) {
                switch (type_[id]) {
                    case NodeType::Outside: un[id] = cplx(0.0); break;
                    case NodeType::Boundary: un[id] = f ? f(t, point_of(id)) : cplx(0.0); break;
                    default: {
                        Vec2 p = point_of(id);
                        cplx lap = laplacian(uc, id, tc, f);
                        double qv = q(tc, p);
                        double av = a_ ? a_(p) : 1.0;
                        cplx acc = av * (lap / m_->conformal(p) - qv * uc[id] +
                                         (src ? src(tc, id, p) : cplx(0.0)));
                        un[id] = 2.0 * uc[id] - um[id] + dt * dt * acc;
                        if (!std::isfinite(un[id].real()) || !std::isfinite(un[id].imag()))
                            throw Error("WaveSolver: NaN detected (unstable run)");
                    }
                }
            }
            um.swap(uc);
            uc.swap(un);
            rec.frame(k, t, uc.data());
        }
        (void)h;
    }

    SpaceTimeField solve(const Potential& q, const LateralFunc& f, const SpaceFunc& v0,
                         const SpaceFunc& v1, const TimeGrid& tg, const SourceFunc& src = {}) const {
        SpaceTimeField out(m_->grid, tg);
        struct Rec {
            SpaceTimeField* out;
            void frame(int k, double, const cplx* u) {
                std::copy(u, u + out->grid.size(), out->frame(k));
            }
        } rec{&out};
        run(q, f, v0, v1, tg, rec, src);
        return out;
    }

    // 5-point Laplacian with Shortley-Weller arms at cut nodes; cut arms read
    // the Dirichlet value f at the boundary intersection.
    cplx laplacian(const std::vector<cplx>& u, int id, double t, const LateralFunc& f) const {
        const Grid2D& g = m_->grid;
        const double h2 = g.h * g.h;
        int i = id % g.nx, j = id / g.nx;
        if (type_[id] == NodeType::Interior) {
            return (u[g.idx(i - 1, j)] + u[g.idx(i + 1, j)] + u[g.idx(i, j - 1)] +
                    u[g.idx(i, j + 1)] - 4.0 * u[id]) /
                   h2;
        }
        const CutData& cd = cuts_[cut_of_node_.at(id)];
        auto arm_val = [&](int d, int ii, int jj) -> cplx {
            if (!cd.arm[d].cut) return u[g.idx(ii, jj)];
            return f ? f(t, cd.arm[d].bpt) : cplx(0.0);
        };
        cplx uw = arm_val(0, i - 1, j), ue = arm_val(1, i + 1, j);
        cplx us = arm_val(2, i, j - 1), uno = arm_val(3, i, j + 1);
        double aw = cd.arm[0].alpha, ae = cd.arm[1].alpha;
        double as = cd.arm[2].alpha, an = cd.arm[3].alpha;
        cplx lxx = 2.0 / h2 * (uw / (aw * (aw + ae)) + ue / (ae * (aw + ae)) - u[id] / (aw * ae));
        cplx lyy = 2.0 / h2 * (us / (as * (as + an)) + uno / (an * (as + an)) - u[id] / (as * an));
        return lxx + lyy;
    }

    // physical energy E(t) = 1/2 int ( a^{-1} |du/dt|^2 + |grad u|^2 / c ) dV_g
    // with dV_g = c dx; du/dt by the symmetric difference of adjacent frames.
    double energy(const cplx* uprev, const cplx* unext, const cplx* uc, double dt) const {
        const Grid2D& g = m_->grid;
        double kin = 0.0, pot = 0.0;
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                int id = g.idx(i, j);
                if (type_[id] == NodeType::Outside) continue;
                Vec2 p = g.point(i, j);
                double c = m_->conformal(p);
                double av = a_ ? a_(p) : 1.0;
                cplx ut = (unext[id] - uprev[id]) / (2.0 * dt);
                kin += std::norm(ut) * c / av;
                // |grad u|_g^2 dV_g = |grad u|^2 dx: plain Dirichlet edge sum
                if (i + 1 < g.nx && type_[g.idx(i + 1, j)] != NodeType::Outside)
                    pot += std::norm(uc[g.idx(i + 1, j)] - uc[id]);
                if (j + 1 < g.ny && type_[g.idx(i, j + 1)] != NodeType::Outside)
                    pot += std::norm(uc[g.idx(i, j + 1)] - uc[id]);
            }
        return 0.5 * (kin * g.h * g.h + pot);
    }

private:
    NodeType type_of_raw(int i, int j) const {
        // used during classification before type_ is final: inside test only
        return m_->in_M[m_->grid.idx(i, j)] ? NodeType::Interior : NodeType::Outside;
    }
    Vec2 point_of(int id) const {
        return m_->grid.point(id % m_->grid.nx, id / m_->grid.nx);
    }

    const SimpleManifold* m_;
    ConformalFactor a_;
    std::vector<NodeType> type_;
    std::vector<double> speed2_;
    std::vector<CutData> cuts_;
    std::vector<int> cut_index_;
    std::map<int, int> cut_of_node_;
    double vmax_ = 1.0, dt_cfl_ = 0.0;
};

inline TimeGrid make_time_grid(double T, double dt_limit, double dt_request = 0.0) {
    double dt = dt_limit;
    if (dt_request > 0.0) dt = std::min(dt, dt_request);
    int nt = static_cast<int>(std::ceil(T / dt)) + 1;
    TimeGrid tg;
    tg.nt = nt;
    tg.dt = T / (nt - 1);
    return tg;
}

// convenience wrapper matching the operation signature
inline SpaceTimeField solve_ibvp(const SimpleManifold& m, const Potential& q, const LateralFunc& f,
                                 const SpaceFunc& v0, const SpaceFunc& v1, double T,
                                 ConformalFactor a = {}, double dt_request = 0.0) {
    WaveSolver solver(m, std::move(a));
    TimeGrid tg = make_time_grid(T, solver.cfl_dt(), dt_request);
    return solver.solve(q, f, v0, v1, tg);
}

// ---------------------------------------------------------------------------
// Cauchy data records and restriction masks
// ---------------------------------------------------------------------------

enum class DataMask { Full, BottomZero, BottomTop, PartialLateral };

inline DataMask parse_mask(const std::string& s) {
    if (s == "full") return DataMask::Full;
    if (s == "bottom-zero") return DataMask::BottomZero;
    if (s == "bottom-top") return DataMask::BottomTop;
    if (s == "partial-lateral") return DataMask::PartialLateral;
    throw Error("unknown data mask: " + s);
}

// Lateral boundary partition driven by phi(x) = x_1:
//   bd M_+ = { nu_1 >= 0 },  bd M_- = { nu_1 <= 0 },
//   U' = { nu_1 >= -eps } (closed neighborhood of bd M_+),
//   V' = { nu_1 <= +eps } (neighborhood of bd M_-),
//   growing-probe vanishing set: { nu_1 < -eps/2 }.
struct BoundaryPartition {
    double eps = 0.25;

    bool in_U(const Vec2& nu) const { return nu.x >= -eps; }
    bool in_V(const Vec2& nu) const { return nu.x <= eps; }
    bool in_plus(const Vec2& nu) const { return nu.x >= 0.0; }
    bool in_minus(const Vec2& nu) const { return nu.x <= 0.0; }
    bool in_plus_eps2_minus(const Vec2& nu) const { return nu.x < -0.5 * eps; }
};

struct CauchyRecord {
    DataMask mask = DataMask::Full;
    // lateral traces: nt x n_b samples over boundary_points(M)
    std::vector<Vec2> bpts, bnormals;
    TimeGrid time;
    std::vector<cplx> dirichlet, neumann;        // nt * n_b
    std::vector<std::uint8_t> dirichlet_obs, neumann_obs;  // per boundary sample
    // time-endpoint traces over the manifold grid (in_M nodes)
    std::vector<cplx> u0, ut0, uT, utT;
    bool has_u0 = true, has_ut0 = true, has_uT = true, has_utT = true;

    int n_b() const { return static_cast<int>(bpts.size()); }
    cplx& dir_at(int k, int b) { return dirichlet[static_cast<std::size_t>(k) * n_b() + b]; }
    cplx& neu_at(int k, int b) { return neumann[static_cast<std::size_t>(k) * n_b() + b]; }
    const cplx& dir_at(int k, int b) const {
        return dirichlet[static_cast<std::size_t>(k) * n_b() + b];
    }
    const cplx& neu_at(int k, int b) const {
        return neumann[static_cast<std::size_t>(k) * n_b() + b];
    }
};

// Neumann trace at boundary point p (outward normal nu) by a 3-point
// one-sided stencil along the inward normal with offsets 1.5h and 3h (both
// interpolation patches stay inside M for the supported boundary shapes).
inline cplx neumann_trace(const SimpleManifold& m, const cplx* u, const Vec2& p, const Vec2& nu,
                          cplx boundary_value) {
    double h = m.grid.h;
    double t1 = 1.5 * h, t2 = 3.0 * h;
    cplx g0 = boundary_value;
    auto sample = [&](const Vec2& x) -> cplx {
        const Grid2D& g = m.grid;
        double fx = (x.x - g.x0) / g.h, fy = (x.y - g.y0) / g.h;
        int i = std::min(static_cast<int>(fx), g.nx - 2);
        int j = std::min(static_cast<int>(fy), g.ny - 2);
        double ax = fx - i, ay = fy - j;
        return (1 - ax) * (1 - ay) * u[g.idx(i, j)] + ax * (1 - ay) * u[g.idx(i + 1, j)] +
               (1 - ax) * ay * u[g.idx(i, j + 1)] + ax * ay * u[g.idx(i + 1, j + 1)];
    };
    cplx ga = sample(p - t1 * nu);
    cplx gb = sample(p - t2 * nu);
    // derivative of the quadratic through (0,g0), (t1,ga), (t2,gb) at 0,
    // in the inward direction; Neumann = minus that
    cplx dg = g0 * (-(t1 + t2) / (t1 * t2)) + ga * (t2 / (t1 * (t2 - t1))) +
              gb * (-t1 / (t2 * (t2 - t1)));
    return -dg;
}

inline CauchyRecord boundary_operator(const SimpleManifold& m, const Potential& q,
                                      const LateralFunc& f, const SpaceFunc& v0,
                                      const SpaceFunc& v1, double T, int n_b,
                                      ConformalFactor a = {}, double dt_request = 0.0) {
    WaveSolver solver(m, std::move(a));
    TimeGrid tg = make_time_grid(T, solver.cfl_dt(), dt_request);

    CauchyRecord rec;
    rec.time = tg;
    rec.bpts = m.boundary_points(false, n_b);
    rec.bnormals.resize(n_b);
    for (int b = 0; b < n_b; ++b) rec.bnormals[b] = m.outward_normal_M(rec.bpts[b]);
    rec.dirichlet.assign(static_cast<std::size_t>(tg.nt) * n_b, cplx(0.0));
    rec.neumann.assign(static_cast<std::size_t>(tg.nt) * n_b, cplx(0.0));
    rec.dirichlet_obs.assign(n_b, 1);
    rec.neumann_obs.assign(n_b, 1);
    rec.u0.assign(m.grid.size(), cplx(0.0));
    rec.ut0.assign(m.grid.size(), cplx(0.0));
    rec.uT.assign(m.grid.size(), cplx(0.0));
    rec.utT.assign(m.grid.size(), cplx(0.0));

    struct Rec {
        const SimpleManifold* m;
        const LateralFunc* f;
        CauchyRecord* out;
        TimeGrid tg;
        std::vector<cplx> prev2, prev1;
        void frame(int k, double t, const cplx* u) {
            int nb = out->n_b();
            for (int b = 0; b < nb; ++b) {
                cplx bv = (*f) ? (*f)(t, out->bpts[b]) : cplx(0.0);
                out->dir_at(k, b) = bv;
                out->neu_at(k, b) = neumann_trace(*m, u, out->bpts[b], out->bnormals[b], bv);
            }
            if (k == 0) std::copy(u, u + m->grid.size(), out->u0.begin());
            if (k == tg.nt - 1) {
                std::copy(u, u + m->grid.size(), out->uT.begin());
                for (int id = 0; id < m->grid.size(); ++id)
                    out->utT[id] =
                        (3.0 * u[id] - 4.0 * prev1[id] + prev2[id]) / (2.0 * tg.dt);
            }
            prev2.swap(prev1);
            prev1.assign(u, u + m->grid.size());
        }
    } r{&m, &f, &rec, tg, std::vector<cplx>(m.grid.size()), std::vector<cplx>(m.grid.size())};

    solver.run(q, f, v0, v1, tg, r);
    for (int id = 0; id < m.grid.size(); ++id)
        rec.ut0[id] = m.in_M[id] && v1 ? v1(m.grid.point(id % m.grid.nx, id / m.grid.nx))
                                       : cplx(0.0);
    return rec;
}

// Apply a data-set mask: withheld fields are erased, preconditions checked.
inline CauchyRecord restrict_record(const SimpleManifold& m, CauchyRecord rec, DataMask mask,
                                    const BoundaryPartition& part = {}) {
    auto max_abs = [](const std::vector<cplx>& v) {
        double mx = 0.0;
        for (const cplx& z : v) mx = std::max(mx, std::abs(z));
        return mx;
    };
    switch (mask) {
        case DataMask::Full:
            break;
        case DataMask::BottomZero: {
            if (max_abs(rec.u0) > 1e-10)
                throw Error("restrict: bottom-zero mask requires u(0,.) = 0");
            rec.u0.clear();
            rec.has_u0 = false;
            break;
        }
        case DataMask::BottomTop: {
            // field observed away from the bottom, normal derivative away
            // from the top: u(0,.) must vanish, d_t u(T,.) is withheld,
            // while d_t u(0,.) and u(T,.) remain part of the record
            if (max_abs(rec.u0) > 1e-10)
                throw Error("restrict: bottom-top mask requires u(0,.) = 0");
            rec.u0.clear();
            rec.utT.clear();
            rec.has_u0 = rec.has_utT = false;
            break;
        }
        case DataMask::PartialLateral: {
            // C_{q,*} = (u|_U, d_t u|_{t=0}, d_nu u|_V, u|_{t=T})
            for (int b = 0; b < rec.n_b(); ++b) {
                bool inU = part.in_U(rec.bnormals[b]);
                bool inV = part.in_V(rec.bnormals[b]);
                if (!inU) {
                    double mx = 0.0;
                    for (int k = 0; k < rec.time.nt; ++k)
                        mx = std::max(mx, std::abs(rec.dir_at(k, b)));
                    if (mx > 1e-10)
                        throw Error("restrict: partial-lateral requires supp f inside U");
                    rec.dirichlet_obs[b] = 0;
                    for (int k = 0; k < rec.time.nt; ++k) rec.dir_at(k, b) = cplx(0.0);
                }
                if (!inV) {
                    rec.neumann_obs[b] = 0;
                    for (int k = 0; k < rec.time.nt; ++k) rec.neu_at(k, b) = cplx(0.0);
                }
            }
            rec.u0.clear();
            rec.utT.clear();
            rec.has_u0 = rec.has_utT = false;
            break;
        }
    }
    rec.mask = mask;
    return rec;
}

}  // namespace wavepot
