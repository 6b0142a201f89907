#pragma once

// Oscillating geometric-optics probes.  A probe is a high-frequency ansatz
//   u(t,x) = sum_j coef_j a(tau_j(t), x) e^{i sigma s_j (psi(x) + tau_j(t))} + R(t,x)
// with psi the distance phase from a boundary point y of the extension M1,
// a the transport amplitude a = e^{-mu(r+t)/2} chi(r+t) h(theta) b^{-1/4},
// and a remainder R computed by the forward solver from the analytic
// residual source, with zero lateral data and zero Cauchy data at a chosen
// time endpoint (t = 0 or t = T).  Time-reflected pairs give probes whose
// total field vanishes at t = 0 (and, with the cutoff chi, whose reflected
// amplitude products vanish identically).
//
// The complex-geometric-optics spectral branch lives in probes_cgo.hpp.

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "wavepot/core.hpp"
#include "wavepot/forward.hpp"
#include "wavepot/geometry.hpp"

namespace wavepot {

// ---------------------------------------------------------------------------
// Eikonal phase psi(x) = dist(y, x)
// ---------------------------------------------------------------------------

struct Eikonal {
    Vec2 y;          // base point on bd M1
    Grid2D grid;
    std::vector<double> psi;  // NaN where the chart does not cover

    double at(int id) const { return psi[id]; }
};

inline Eikonal eikonal_from_chart(const PolarChart& ch) {
    Eikonal e;
    e.y = ch.y;
    e.grid = ch.grid;
    e.psi = ch.node_r;
    return e;
}

inline Eikonal solve_eikonal(const SimpleManifold& m, const Vec2& y) {
    if (std::abs(m.sdf_M1(y)) > 1e-7)
        throw Error("solve_eikonal: base point must lie on bd M1");
    // the chart node tables carry the distance; the chart arrays are not used
    PolarChart ch = polar_chart(m, y, 8, 64);
    return eikonal_from_chart(ch);
}

// max | |grad psi|^2_g - 1 | over interior nodes of M, 4th-order central FD
inline double eikonal_residual(const SimpleManifold& m, const Eikonal& e) {
    const Grid2D& g = m.grid;
    const double h = g.h;
    double worst = 0.0;
    int checked = 0;
    auto ok = [&](int i, int j) {
        return i >= 0 && j >= 0 && i < g.nx && j < g.ny && std::isfinite(e.psi[g.idx(i, j)]);
    };
    for (int j = 2; j + 2 < g.ny; ++j)
        for (int i = 2; i + 2 < g.nx; ++i) {
            int id = g.idx(i, j);
            if (!m.in_M[id]) continue;
            bool cov = true;
            for (int o = -2; o <= 2; ++o) cov = cov && ok(i + o, j) && ok(i, j + o);
            if (!cov) continue;
            auto p = [&](int ii, int jj) { return e.psi[g.idx(ii, jj)]; };
            double dx = (-p(i + 2, j) + 8 * p(i + 1, j) - 8 * p(i - 1, j) + p(i - 2, j)) / (12 * h);
            double dy = (-p(i, j + 2) + 8 * p(i, j + 1) - 8 * p(i, j - 1) + p(i, j - 2)) / (12 * h);
            double c = m.conformal(g.point(i, j));
            worst = std::max(worst, std::abs((dx * dx + dy * dy) / c - 1.0));
            ++checked;
        }
    if (checked == 0) throw Error("eikonal_residual: no interior node with a full stencil");
    return worst;
}

// ---------------------------------------------------------------------------
// Transport amplitude a(t,r,theta) = e^{-mu(r+t)/2} chi(r+t) h(theta) b^{-1/4}
// ---------------------------------------------------------------------------

struct Amplitude {
    const PolarChart* chart = nullptr;
    double mu = 1.0;
    std::optional<GaussBump> h;    // angular weight; 1 when absent
    std::optional<Plateau1D> chi;  // cutoff in s = r + t; 1 when absent

    // E(s) = e^{-mu s/2} chi(s) and its first two derivatives
    double E(double s) const { return std::exp(-0.5 * mu * s) * (chi ? (*chi)(s) : 1.0); }
    double E1(double s) const {
        double g = std::exp(-0.5 * mu * s);
        if (!chi) return -0.5 * mu * g;
        return g * (-0.5 * mu * (*chi)(s) + chi->d1(s));
    }
    double E2(double s) const {
        double g = std::exp(-0.5 * mu * s);
        if (!chi) return 0.25 * mu * mu * g;
        return g * (0.25 * mu * mu * (*chi)(s) - mu * chi->d1(s) + chi->d2(s));
    }
    double hval(double th) const { return h ? (*h)(th) : 1.0; }
    double h2val(double th) const { return h ? h->d2(th) : 0.0; }

    double chart_value(double t, double r, double th, double b) const {
        return E(r + t) * hval(th) * std::pow(b, -0.25);
    }
    // value at a grid node (0 where the chart tables do not cover)
    double at_node(double t, int id) const {
        double r = chart->node_r[id];
        if (!std::isfinite(r)) return 0.0;
        return chart_value(t, r, chart->node_theta[id], chart->node_b[id]);
    }
};

inline Amplitude transport_amplitude(const PolarChart& chart, double mu,
                                     std::optional<GaussBump> h = {},
                                     std::optional<Plateau1D> chi = {}) {
    if (mu < 0.0) throw Error("transport_amplitude: attenuation mu must be nonnegative");
    Amplitude a;
    a.chart = &chart;
    a.mu = mu;
    a.h = std::move(h);
    a.chi = std::move(chi);
    return a;
}

// transport residual d_t a - d_r a - (d_r b / 4b) a on the chart at time t,
// radial derivatives by central differences, away from the pole (r >= r_min)
inline double transport_residual(const Amplitude& amp, double t, double r_min = 0.05) {
    const PolarChart& ch = *amp.chart;
    double dr = ch.r[1] - ch.r[0];
    double worst = 0.0;
    int checked = 0;
    for (int it = 0; it < ch.n_theta(); ++it)
        for (int ir = 1; ir + 1 < ch.n_r(); ++ir) {
            if (ch.r[ir] < r_min) continue;
            int im = ch.at(ir - 1, it), i0 = ch.at(ir, it), ip = ch.at(ir + 1, it);
            if (!(ch.valid[im] && ch.valid[i0] && ch.valid[ip])) continue;
            double th = ch.theta[it];
            double am = amp.chart_value(t, ch.r[ir - 1], th, ch.b[im]);
            double a0 = amp.chart_value(t, ch.r[ir], th, ch.b[i0]);
            double ap = amp.chart_value(t, ch.r[ir + 1], th, ch.b[ip]);
            double da_dr = (ap - am) / (2 * dr);
            double db_dr = (ch.b[ip] - ch.b[im]) / (2 * dr);
            double da_dt = amp.E1(ch.r[ir] + t) * amp.hval(th) * std::pow(ch.b[i0], -0.25);
            worst = std::max(worst, std::abs(da_dt - da_dr - db_dr / (4 * ch.b[i0]) * a0));
            ++checked;
        }
    if (checked == 0) throw Error("transport_residual: no valid chart triple");
    return worst;
}

// same residual with fully analytic derivatives on flat kinds (b = r^2)
inline double transport_residual_flat(const Amplitude& amp, double t, double r_min = 0.05) {
    const PolarChart& ch = *amp.chart;
    if (ch.b.empty()) throw Error("transport_residual_flat: empty chart");
    double worst = 0.0;
    for (int it = 0; it < ch.n_theta(); ++it)
        for (int ir = 0; ir < ch.n_r(); ++ir) {
            double r = ch.r[ir];
            if (r < r_min) continue;
            double th = ch.theta[it];
            double hv = amp.hval(th);
            double B = std::pow(r, -0.5), B1 = -0.5 * std::pow(r, -1.5);
            double da_dt = amp.E1(r + t) * hv * B;
            double da_dr = amp.E1(r + t) * hv * B + amp.E(r + t) * hv * B1;
            // d_r b / 4b = 2r / 4r^2 = 1/(2r)
            double res = da_dt - da_dr - amp.E(r + t) * hv * B / (2 * r);
            worst = std::max(worst, std::abs(res));
        }
    return worst;
}

// ---------------------------------------------------------------------------
// GO probe with remainder control
// ---------------------------------------------------------------------------

// one oscillating summand: coef * a(tau(t), x) e^{i sigma psign (psi + tau(t))}
// with tau(t) = tscale * t + tshift
struct ProbeTerm {
    double coef = 1.0;
    double tscale = 1.0;
    double tshift = 0.0;
    double psign = 1.0;
};

struct GoProbeOptions {
    double T = 1.0;
    double dt = 0.0;  // 0: min(CFL, 0.25/|sigma|)
    bool store_field = false;
};

struct GoProbe {
    const SimpleManifold* m = nullptr;
    Amplitude amp;
    Potential q;
    double sigma = 0.0;
    double endpoint = 0.0;  // R and d_t R vanish at t = endpoint
    std::vector<ProbeTerm> terms;

    TimeGrid time;
    std::vector<double> R_norm_t;  // ||R(t_k, .)||_{L2(M)}, physical time order
    double R_l2 = 0.0;             // ||R||_{L2((0,T) x M)}
    double eta = 0.0;              // sup_t || int of the oscillating source ||
    SpaceTimeField R;              // physical time order when stored
    bool has_R = false;

    cplx ansatz_at(double t, int id) const {
        double r = amp.chart->node_r[id];
        if (!std::isfinite(r)) return cplx(0.0);
        double th = amp.chart->node_theta[id], b = amp.chart->node_b[id];
        cplx s(0.0);
        for (const ProbeTerm& tm : terms) {
            double tau = tm.tscale * t + tm.tshift;
            double av = amp.chart_value(tau, r, th, b);
            s += tm.coef * av * std::exp(cplx(0.0, sigma * tm.psign * (r + tau)));
        }
        return s;
    }
    // total field (requires store_field)
    cplx total_at(int k, int id) const { return ansatz_at(time.dt * k, id) + R.at(k, id); }
};

inline GoProbe assemble_go_probe(const SimpleManifold& m, const Potential& q, const Eikonal& eik,
                                 const Amplitude& amp, double sigma,
                                 std::vector<ProbeTerm> terms, double endpoint,
                                 const GoProbeOptions& opt = {}) {
    if (std::abs(sigma) <= 1.0) throw Error("make_go_probe: |sigma| must exceed 1");
    if ((eik.y - amp.chart->y).norm() > 1e-9)
        throw Error("make_go_probe: eikonal and amplitude use different base points");
    const Grid2D& g = m.grid;
    const PolarChart& ch = *amp.chart;
    const bool flat = m.is_flat();
    const double T = opt.T;

    WaveSolver solver(m);
    TimeGrid tg = make_time_grid(T, solver.cfl_dt(),
                                 opt.dt > 0.0 ? opt.dt : 0.25 / std::abs(sigma));
    const bool reversed = endpoint > 0.5 * T;

    // static per-node tables over the covered part of the grid
    const int n = g.size();
    std::vector<double> r_(n, 0.0), hv_(n, 0.0), binv4_(n, 0.0), wflat_(n, 0.0);
    std::vector<std::uint8_t> cov(n, 0);
    const std::vector<NodeType>& types = solver.node_types();
    for (int id = 0; id < n; ++id) {
        double r = ch.node_r[id];
        if (!std::isfinite(r)) {
            if (types[id] == NodeType::Interior || types[id] == NodeType::Cut)
                throw Error("make_go_probe: chart does not cover an interior node of M");
            continue;
        }
        cov[id] = 1;
        r_[id] = r;
        double th = ch.node_theta[id];
        hv_[id] = amp.hval(th);
        binv4_[id] = std::pow(ch.node_b[id], -0.25);
        if (flat) wflat_[id] = (amp.h2val(th) + 0.25 * amp.hval(th)) * std::pow(r, -2.5);
    }

    // wave-operator value (d_tau^2 - Lap_g) a at chart time tau and node id;
    // closed form on flat kinds (b = r^2), grid FD Laplacian otherwise
    auto boxa = [&](double tau, int id) -> double {
        if (flat) return -wflat_[id] * amp.E(r_[id] + tau);
        int i = id % g.nx, j = id / g.nx;
        auto aval = [&](int nid) -> double {
            if (!cov[nid]) throw Error("make_go_probe: FD stencil leaves the chart coverage");
            return amp.E(r_[nid] + tau) * hv_[nid] * binv4_[nid];
        };
        double a0 = aval(id);
        double lap = (aval(g.idx(i - 1, j)) + aval(g.idx(i + 1, j)) + aval(g.idx(i, j - 1)) +
                      aval(g.idx(i, j + 1)) - 4.0 * a0) /
                     (g.h * g.h);
        double dtt = amp.E2(r_[id] + tau) * hv_[id] * binv4_[id];
        return dtt - lap / m.conformal(g.point(i, j));
    };

    // oscillating residual source G(t, id); R solves d_tt R - Lap_g R + qR = -G
    auto source_G = [&](double t, int id, const Vec2& p) -> cplx {
        cplx s(0.0);
        for (const ProbeTerm& tm : terms) {
            double tau = tm.tscale * t + tm.tshift;
            double av = amp.E(r_[id] + tau) * hv_[id] * binv4_[id];
            cplx phase = std::exp(cplx(0.0, sigma * tm.psign * (r_[id] + tau)));
            s += tm.coef * phase * (boxa(tau, id) + q(t, p) * av);
        }
        return s;
    };
    // solver time ts runs from the endpoint toward the far end
    auto phys_t = [&](double ts) { return reversed ? T - ts : ts; };
    SourceFunc src = [&](double ts, int id, const Vec2& p) -> cplx {
        return -source_G(phys_t(ts), id, p);
    };

    GoProbe probe;
    probe.m = &m;
    probe.amp = amp;
    probe.q = q;
    probe.sigma = sigma;
    probe.endpoint = endpoint;
    probe.time = tg;
    probe.R_norm_t.assign(tg.nt, 0.0);
    if (opt.store_field) {
        probe.R = SpaceTimeField(g, tg);
        probe.has_R = true;
    }

    std::vector<cplx> cum(n, cplx(0.0)), Gprev(n, cplx(0.0)), Gcur(n, cplx(0.0));
    struct Rec {
        const SimpleManifold* m;
        GoProbe* probe;
        const std::function<cplx(double, int, const Vec2&)>* G;
        std::function<double(double)> phys;
        std::vector<cplx>*cum, *Gprev, *Gcur;
        double dt;
        bool store;
        void frame(int k, double ts, const cplx* u) {
            probe->R_norm_t[k] = l2_norm_M(*m, u);
            const Grid2D& g = m->grid;
            for (int id = 0; id < g.size(); ++id)
                (*Gcur)[id] = m->in_M[id]
                                  ? (*G)(phys(ts), id, g.point(id % g.nx, id / g.nx))
                                  : cplx(0.0);
            if (k > 0)
                for (int id = 0; id < g.size(); ++id)
                    (*cum)[id] += 0.5 * dt * ((*Gcur)[id] + (*Gprev)[id]);
            probe->eta = std::max(probe->eta, l2_norm_M(*m, cum->data()));
            Gprev->swap(*Gcur);
            if (store) std::copy(u, u + g.size(), probe->R.frame(k));
        }
    };
    std::function<cplx(double, int, const Vec2&)> Gfun = [&](double t, int id,
                                                             const Vec2& p) -> cplx {
        return cov[id] ? source_G(t, id, p) : cplx(0.0);
    };
    Rec rec{&m, &probe, &Gfun, phys_t, &cum, &Gprev, &Gcur, tg.dt, opt.store_field};
    solver.run(q, {}, {}, {}, tg, rec, src);
    probe.terms = std::move(terms);

    if (reversed) {
        std::reverse(probe.R_norm_t.begin(), probe.R_norm_t.end());
        if (opt.store_field)
            for (int k = 0; k < tg.nt / 2; ++k)
                std::swap_ranges(probe.R.frame(k), probe.R.frame(k) + g.size(),
                                 probe.R.frame(tg.nt - 1 - k));
    }
    double acc = 0.0;
    for (int k = 0; k < tg.nt; ++k) {
        double w = (k == 0 || k == tg.nt - 1) ? 0.5 : 1.0;
        acc += w * sqr(probe.R_norm_t[k]);
    }
    probe.R_l2 = std::sqrt(acc * tg.dt);
    return probe;
}

inline GoProbe make_go_probe(const SimpleManifold& m, const Potential& q, const Eikonal& eik,
                             const Amplitude& amp, double sigma, int sign, double endpoint,
                             const GoProbeOptions& opt = {}) {
    ProbeTerm t;
    t.psign = sign >= 0 ? 1.0 : -1.0;
    return assemble_go_probe(m, q, eik, amp, sigma, {t}, endpoint, opt);
}

// ---------------------------------------------------------------------------
// Time-reflected probe pairs
// ---------------------------------------------------------------------------

struct ReflectedOptions {
    double T = 1.0;
    double mu = 1.0;
    std::optional<GaussBump> h;  // angular weight for the first probe
    double eps = 0.05;           // cutoff margin (bottom-top variant)
    double dt = 0.0;
    bool store_field = false;
};

// Returns (u1, u2) built on the caller-owned chart (the probes keep a
// reference to it).  Variant bottom-zero:
//   u2 = a2(t) e^{i sigma(psi+t)} - a2(-t) e^{i sigma(psi-t)} + R2 (R2 = 0 at t=0)
//   u1 = a1(t) e^{-i sigma(psi+t)} + R1                          (R1 = 0 at t=T)
// Variant bottom-top additionally reflects u1 about t = T and equips both
// amplitudes with the cutoff chi(r +- t), so that a1(2T-t) a2(-t) = 0.
inline std::pair<GoProbe, GoProbe> reflected_probe_pair(
    const SimpleManifold& m, const Potential& q1, const Potential& q2, double sigma,
    DataMask variant, const PolarChart& chart, const ReflectedOptions& opt = {}) {
    if (variant != DataMask::BottomZero && variant != DataMask::BottomTop)
        throw Error("reflected_probe_pair: variant must be bottom-zero or bottom-top");
    const double T = opt.T;
    std::optional<Plateau1D> chi;
    if (variant == DataMask::BottomTop) {
        double D = m.diam_M1();
        if (!(T > D + 2.0 * opt.eps))
            throw Error("reflected_probe_pair: cutoff support needs 2*eps < T - Diam(M1)");
        chi = Plateau1D{-opt.eps, D + T + opt.eps, opt.eps};
    }
    Eikonal eik = eikonal_from_chart(chart);
    Amplitude a1 = transport_amplitude(chart, opt.mu, opt.h, chi);
    Amplitude a2 = transport_amplitude(chart, opt.mu, {}, chi);

    GoProbeOptions go;
    go.T = T;
    go.dt = opt.dt;
    go.store_field = opt.store_field;

    std::vector<ProbeTerm> t2{{+1.0, +1.0, 0.0, +1.0}, {-1.0, -1.0, 0.0, +1.0}};
    std::vector<ProbeTerm> t1{{+1.0, +1.0, 0.0, -1.0}};
    if (variant == DataMask::BottomTop) t1.push_back({-1.0, -1.0, 2.0 * T, -1.0});

    GoProbe u1 = assemble_go_probe(m, q1, eik, a1, sigma, t1, T, go);
    GoProbe u2 = assemble_go_probe(m, q2, eik, a2, sigma, t2, 0.0, go);
    return {std::move(u1), std::move(u2)};
}

}  // namespace wavepot
