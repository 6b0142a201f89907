#pragma once

// Attenuated geodesic ray transform on the influx boundary of the extension
// M1, time Laplace transform, their composition, and a regularized
// variational inversion (conjugate gradients on the normal equations with a
// gradient penalty).  Moments against an angular basis convert to sinogram
// samples by solving the angular quadrature system.

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "wavepot/core.hpp"
#include "wavepot/forward.hpp"
#include "wavepot/geometry.hpp"
#include "wavepot/io.hpp"

namespace wavepot {

// ---------------------------------------------------------------------------
// Laplace transform in time over the support [0, T]
// ---------------------------------------------------------------------------

inline double laplace_in_time(const std::vector<double>& f, double dt, double mu) {
    if (mu <= 0.0) throw Error("laplace_in_time: mu must be positive");
    std::vector<double> g(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) g[i] = f[i] * std::exp(-mu * i * dt);
    return trapezoid(g, dt);
}

inline cplx laplace_in_time(const std::vector<cplx>& f, double dt, double mu) {
    if (mu <= 0.0) throw Error("laplace_in_time: mu must be positive");
    std::vector<cplx> g(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) g[i] = f[i] * std::exp(-mu * i * dt);
    return trapezoid(g, dt);
}

// ---------------------------------------------------------------------------
// Sinogram container
// ---------------------------------------------------------------------------

struct SinogramGrid {
    std::vector<Vec2> ypts;       // boundary points of M1
    std::vector<double> thetas;   // directions measured from the inward normal
    std::vector<double> mus;      // attenuation ladder
    std::vector<cplx> value;      // [imu][iy][ith]

    int n_y() const { return static_cast<int>(ypts.size()); }
    int n_theta() const { return static_cast<int>(thetas.size()); }
    int n_mu() const { return static_cast<int>(mus.size()); }
    std::size_t index(int imu, int iy, int ith) const {
        return (static_cast<std::size_t>(imu) * n_y() + iy) * n_theta() + ith;
    }
    cplx& at(int imu, int iy, int ith) { return value[index(imu, iy, ith)]; }
    const cplx& at(int imu, int iy, int ith) const { return value[index(imu, iy, ith)]; }

    void save_csv(const std::string& path) const {
        CsvWriter csv(path);
        csv.header({"iy", "itheta", "mu", "y_x", "y_y", "theta", "re", "im"});
        for (int imu = 0; imu < n_mu(); ++imu)
            for (int iy = 0; iy < n_y(); ++iy)
                for (int ith = 0; ith < n_theta(); ++ith) {
                    const cplx& v = at(imu, iy, ith);
                    csv.row({std::to_string(iy), std::to_string(ith), CsvWriter::num(mus[imu]),
                             CsvWriter::num(ypts[iy].x), CsvWriter::num(ypts[iy].y),
                             CsvWriter::num(thetas[ith]), CsvWriter::num(v.real()),
                             CsvWriter::num(v.imag())});
                }
    }
};

inline SinogramGrid make_sinogram(const SimpleManifold& m, int n_y, int n_theta,
                                  std::vector<double> mus) {
    if (n_y < 1 || n_theta < 1 || mus.empty()) throw Error("make_sinogram: empty grid");
    SinogramGrid sg;
    sg.ypts = m.boundary_points(true, n_y);
    sg.thetas.resize(n_theta);
    for (int k = 0; k < n_theta; ++k) sg.thetas[k] = -kPi / 2 + kPi * (k + 0.5) / n_theta;
    sg.mus = std::move(mus);
    sg.value.assign(static_cast<std::size_t>(sg.n_mu()) * n_y * n_theta, cplx(0.0));
    return sg;
}

// Euclidean launch direction for the ray (y, theta), theta from inward normal
inline Vec2 ray_direction(const SimpleManifold& m, const Vec2& y, double theta) {
    Vec2 nin = -1.0 * m.outward_normal_M1(y);
    double base = std::atan2(nin.y, nin.x);
    return {std::cos(base + theta), std::sin(base + theta)};
}

namespace detail {

// quadrature weights for int_0^{(n-1) ds} f(r) e^{-mu r} dr with piecewise
// linear f on uniform samples (product integration; exact for constant f)
inline std::vector<double> attenuation_weights(int n, double ds, double mu) {
    std::vector<double> w(n, 0.0);
    double alpha = mu * ds;
    for (int i = 0; i + 1 < n; ++i) {
        double Ei = std::exp(-mu * i * ds);
        double j0, j1;
        if (alpha < 1e-5) {
            j1 = 0.5 - alpha / 3.0 + alpha * alpha / 8.0;
            j0 = 0.5 - alpha / 6.0 + alpha * alpha / 24.0;
        } else {
            double ea = std::exp(-alpha);
            double jt = (1.0 - ea) / alpha;
            j1 = (1.0 - (1.0 + alpha) * ea) / (alpha * alpha);
            j0 = jt - j1;
        }
        w[i] += ds * Ei * j0;
        w[i + 1] += ds * Ei * j1;
    }
    return w;
}

}  // namespace detail

// Single-ray attenuated integral of an analytically sampled integrand,
// zero-extended outside M when restrict_to_M is set.
inline cplx ray_integral(const SimpleManifold& m, const std::function<cplx(const Vec2&)>& f,
                         const Vec2& y, double theta, double mu, bool restrict_to_M = true,
                         double ds_request = 0.0) {
    GeodesicRay ray = shoot_ray(m, y, ray_direction(m, y, theta));
    double ds = ds_request > 0.0 ? ds_request : m.grid.h / 4.0;
    int n = std::max(2, static_cast<int>(std::ceil(ray.tau_plus / ds)) + 1);
    std::vector<Vec2> pts = resample_ray(m, ray, n);
    std::vector<double> w = detail::attenuation_weights(n, ray.tau_plus / (n - 1), mu);
    cplx s(0.0);
    for (int k = 0; k < n; ++k) {
        if (restrict_to_M && m.sdf_M(pts[k]) > 0.0) continue;
        s += w[k] * f(pts[k]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Discrete ray operator: sparse rays-by-nodes matrix built once per mu
// ---------------------------------------------------------------------------

class RayOperator {
public:
    RayOperator(const SimpleManifold& m, const std::vector<Vec2>& ypts,
                const std::vector<double>& thetas, double mu, bool restrict_to_M = true,
                double ds_request = 0.0)
        : m_(&m) {
        const Grid2D& g = m.grid;
        double ds = ds_request > 0.0 ? ds_request : g.h;
        row_ptr_.push_back(0);
        for (const Vec2& y : ypts)
            for (double th : thetas) {
                GeodesicRay ray = shoot_ray(m, y, ray_direction(m, y, th));
                int n = std::max(2, static_cast<int>(std::ceil(ray.tau_plus / ds)) + 1);
                std::vector<Vec2> pts = resample_ray(m, ray, n);
                std::vector<double> w =
                    detail::attenuation_weights(n, ray.tau_plus / (n - 1), mu);
                for (int k = 0; k < n; ++k) {
                    const Vec2& p = pts[k];
                    double fx = (p.x - g.x0) / g.h, fy = (p.y - g.y0) / g.h;
                    if (fx < 0.0 || fy < 0.0 || fx > g.nx - 1 || fy > g.ny - 1) continue;
                    int i = std::min(static_cast<int>(fx), g.nx - 2);
                    int j = std::min(static_cast<int>(fy), g.ny - 2);
                    double ax = fx - i, ay = fy - j;
                    const int ids[4] = {g.idx(i, j), g.idx(i + 1, j), g.idx(i, j + 1),
                                        g.idx(i + 1, j + 1)};
                    const double cw[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay,
                                          ax * ay};
                    for (int q = 0; q < 4; ++q) {
                        if (restrict_to_M && !m.in_M[ids[q]]) continue;
                        if (cw[q] == 0.0) continue;
                        col_.push_back(ids[q]);
                        w_.push_back(cw[q] * w[k]);
                    }
                }
                row_ptr_.push_back(col_.size());
            }
    }

    int n_rays() const { return static_cast<int>(row_ptr_.size()) - 1; }

    std::vector<cplx> apply(const std::vector<cplx>& f) const {
        std::vector<cplx> out(n_rays(), cplx(0.0));
        for (int r = 0; r < n_rays(); ++r) {
            cplx s(0.0);
            for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e)
                s += w_[e] * f[col_[e]];
            out[r] = s;
        }
        return out;
    }

    std::vector<cplx> apply_adjoint(const std::vector<cplx>& s) const {
        std::vector<cplx> out(m_->grid.size(), cplx(0.0));
        for (int r = 0; r < n_rays(); ++r)
            for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e)
                out[col_[e]] += w_[e] * s[r];
        return out;
    }

    // fraction of M nodes touched by at least one ray
    double coverage_fraction() const {
        std::vector<char> hit(m_->grid.size(), 0);
        for (std::size_t e = 0; e < col_.size(); ++e) hit[col_[e]] = 1;
        int covered = 0, total = 0;
        for (int id = 0; id < m_->grid.size(); ++id)
            if (m_->in_M[id]) {
                ++total;
                covered += hit[id];
            }
        return total > 0 ? static_cast<double>(covered) / total : 0.0;
    }

    // number of distinct rays touching each node of M
    int min_coverage() const {
        std::vector<int> count(m_->grid.size(), 0);
        std::vector<int> seen(m_->grid.size(), -1);
        for (int r = 0; r < n_rays(); ++r)
            for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e)
                if (seen[col_[e]] != r) {
                    seen[col_[e]] = r;
                    ++count[col_[e]];
                }
        int mn = 1 << 30;
        for (int id = 0; id < m_->grid.size(); ++id)
            if (m_->in_M[id]) mn = std::min(mn, count[id]);
        return mn;
    }

private:
    const SimpleManifold* m_;
    std::vector<std::size_t> row_ptr_{};
    std::vector<int> col_;
    std::vector<double> w_;
};

// grid-field forward transform over all attenuation values of the sinogram
inline SinogramGrid ray_transform(const SimpleManifold& m, const std::vector<cplx>& f,
                                  SinogramGrid sg, bool restrict_to_M = true) {
    if (static_cast<int>(f.size()) != m.grid.size())
        throw Error("ray_transform: field size does not match the grid");
    for (int imu = 0; imu < sg.n_mu(); ++imu) {
        RayOperator op(m, sg.ypts, sg.thetas, sg.mus[imu], restrict_to_M);
        std::vector<cplx> vals = op.apply(f);
        for (int iy = 0; iy < sg.n_y(); ++iy)
            for (int ith = 0; ith < sg.n_theta(); ++ith)
                sg.at(imu, iy, ith) = vals[static_cast<std::size_t>(iy) * sg.n_theta() + ith];
    }
    return sg;
}

// function-sampled forward transform (no interpolation error)
inline SinogramGrid ray_transform(const SimpleManifold& m,
                                  const std::function<cplx(const Vec2&)>& f, SinogramGrid sg,
                                  bool restrict_to_M = true) {
    for (int imu = 0; imu < sg.n_mu(); ++imu)
        for (int iy = 0; iy < sg.n_y(); ++iy)
            for (int ith = 0; ith < sg.n_theta(); ++ith)
                sg.at(imu, iy, ith) =
                    ray_integral(m, f, sg.ypts[iy], sg.thetas[ith], sg.mus[imu], restrict_to_M);
    return sg;
}

// ---------------------------------------------------------------------------
// Variational inversion: min ||A f - s||^2 + lambda ||grad f||^2 by CG
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<cplx> graph_laplacian(const SimpleManifold& m, const std::vector<cplx>& f) {
    const Grid2D& g = m.grid;
    std::vector<cplx> out(g.size(), cplx(0.0));
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            int id = g.idx(i, j);
            if (!m.in_M[id]) continue;
            const int ni[4] = {i - 1, i + 1, i, i};
            const int nj[4] = {j, j, j - 1, j + 1};
            for (int d = 0; d < 4; ++d) {
                // zero extension outside M: edges across bd M read a zero value
                bool inside = ni[d] >= 0 && nj[d] >= 0 && ni[d] < g.nx && nj[d] < g.ny &&
                              m.in_M[g.idx(ni[d], nj[d])];
                out[id] += inside ? f[id] - f[g.idx(ni[d], nj[d])] : f[id];
            }
        }
    return out;
}

inline cplx dot(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    cplx s(0.0);
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

}  // namespace detail

inline std::vector<cplx> invert_ray_transform(const SimpleManifold& m, const SinogramGrid& sg,
                                              int imu, double lambda, int max_iter = 800,
                                              double tol = 1e-8) {
    if (imu < 0 || imu >= sg.n_mu()) throw Error("invert_ray_transform: bad mu index");
    RayOperator A(m, sg.ypts, sg.thetas, sg.mus[imu]);
    // a bounded direction fan cannot reach a thin rim of near-boundary cells
    // (impact parameter capped below 1); the smoothing term extends the
    // solution across such gaps, so only a substantial coverage deficit is an
    // error
    if (A.coverage_fraction() < 0.9)
        throw Error("invert_ray_transform: sinogram rays do not cover M");

    std::vector<cplx> b(A.n_rays());
    for (int iy = 0; iy < sg.n_y(); ++iy)
        for (int ith = 0; ith < sg.n_theta(); ++ith)
            b[static_cast<std::size_t>(iy) * sg.n_theta() + ith] = sg.at(imu, iy, ith);

    auto N = [&](const std::vector<cplx>& f) {
        std::vector<cplx> out = A.apply_adjoint(A.apply(f));
        std::vector<cplx> lap = detail::graph_laplacian(m, f);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * lap[i];
        return out;
    };

    std::vector<cplx> rhs = A.apply_adjoint(b);
    std::vector<cplx> x(m.grid.size(), cplx(0.0)), r = rhs, p = r;
    double rr = detail::dot(r, r).real();
    double rhs_norm = std::sqrt(rr);
    if (rhs_norm == 0.0) return x;
    for (int it = 0; it < max_iter; ++it) {
        std::vector<cplx> Np = N(p);
        double pNp = detail::dot(p, Np).real();
        if (pNp <= 0.0) throw Error("invert_ray_transform: CG breakdown");
        double alpha = rr / pNp;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Np[i];
        }
        double rr_new = detail::dot(r, r).real();
        if (std::sqrt(rr_new) <= tol * rhs_norm) return x;
        double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    }
    throw Error("invert_ray_transform: CG did not converge within the iteration cap");
}

// ---------------------------------------------------------------------------
// Moments against an angular basis -> sinogram samples
// ---------------------------------------------------------------------------

struct MomentSet {
    std::vector<double> mus;
    std::vector<Vec2> ypts;
    int n_h = 0;                 // angular basis size
    std::vector<cplx> value;     // [imu][iy][k]

    std::size_t index(int imu, int iy, int k) const {
        return (static_cast<std::size_t>(imu) * ypts.size() + iy) * n_h + k;
    }
    cplx& at(int imu, int iy, int k) { return value[index(imu, iy, k)]; }
    const cplx& at(int imu, int iy, int k) const { return value[index(imu, iy, k)]; }
};

namespace detail {

// dense LU with partial pivoting; returns permuted factors in place
struct DenseLU {
    int n = 0;
    std::vector<double> a;   // row-major
    std::vector<int> perm;

    explicit DenseLU(std::vector<double> mat, int n_) : n(n_), a(std::move(mat)), perm(n_) {
        double amax = 0.0;
        for (double v : a) amax = std::max(amax, std::abs(v));
        for (int i = 0; i < n; ++i) perm[i] = i;
        for (int k = 0; k < n; ++k) {
            int piv = k;
            for (int i = k + 1; i < n; ++i)
                if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
            if (std::abs(a[piv * n + k]) < 1e-10 * amax)
                throw Error("moment_to_sinogram: angular basis ill-conditioned");
            if (piv != k) {
                for (int j = 0; j < n; ++j) std::swap(a[piv * n + j], a[k * n + j]);
                std::swap(perm[piv], perm[k]);
            }
            for (int i = k + 1; i < n; ++i) {
                double f = a[i * n + k] / a[k * n + k];
                a[i * n + k] = f;
                for (int j = k + 1; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
            }
        }
    }

    std::vector<cplx> solve(const std::vector<cplx>& b) const {
        std::vector<cplx> x(n);
        for (int i = 0; i < n; ++i) x[i] = b[perm[i]];
        for (int i = 1; i < n; ++i)
            for (int j = 0; j < i; ++j) x[i] -= a[i * n + j] * x[j];
        for (int i = n - 1; i >= 0; --i) {
            for (int j = i + 1; j < n; ++j) x[i] -= a[i * n + j] * x[j];
            x[i] /= a[i * n + i];
        }
        return x;
    }
};

}  // namespace detail

// Fit the grid field directly to the angular-basis moments:
//   min_f  sum_{y,k} | sum_j W[k][j] (A f)(y, theta_j) - m(y,k) |^2
//          + lambda ||grad f||^2
// with W[k][j] = h_k(theta_j) dtheta the angular smearing quadrature and A
// the attenuated ray operator.  Row-by-row deconvolution of the overlapping
// angular bumps (see moment_to_sinogram) amplifies structured moment error
// by the condition number of W; composing W with A inside the normal
// equations keeps the data misfit in moment units and lets the smoothing
// term absorb the unresolved angular scales instead.
inline std::vector<cplx> invert_moment_transform(
    const SimpleManifold& m, const MomentSet& mom,
    const std::vector<std::vector<double>>& basis_at_theta, const std::vector<double>& thetas,
    int imu, double lambda, int max_iter = 2000, double tol = 1e-8) {
    if (imu < 0 || imu >= static_cast<int>(mom.mus.size()))
        throw Error("invert_moment_transform: bad mu index");
    const int nth = static_cast<int>(thetas.size());
    const int nh = mom.n_h;
    if (static_cast<int>(basis_at_theta.size()) != nh)
        throw Error("invert_moment_transform: basis size must match the moment set");
    const int ny = static_cast<int>(mom.ypts.size());
    const double dth = nth > 1 ? thetas[1] - thetas[0] : kPi;

    RayOperator A(m, mom.ypts, thetas, mom.mus[imu]);
    if (A.coverage_fraction() < 0.9)
        throw Error("invert_moment_transform: sinogram rays do not cover M");

    auto applyW = [&](const std::vector<cplx>& rays) {
        std::vector<cplx> out(static_cast<std::size_t>(ny) * nh, cplx(0.0));
        for (int iy = 0; iy < ny; ++iy)
            for (int k = 0; k < nh; ++k) {
                cplx s(0.0);
                for (int j = 0; j < nth; ++j)
                    s += basis_at_theta[k][j] * rays[static_cast<std::size_t>(iy) * nth + j];
                out[static_cast<std::size_t>(iy) * nh + k] = s * dth;
            }
        return out;
    };
    auto applyWt = [&](const std::vector<cplx>& moms) {
        std::vector<cplx> out(static_cast<std::size_t>(ny) * nth, cplx(0.0));
        for (int iy = 0; iy < ny; ++iy)
            for (int k = 0; k < nh; ++k) {
                cplx v = moms[static_cast<std::size_t>(iy) * nh + k] * dth;
                for (int j = 0; j < nth; ++j)
                    out[static_cast<std::size_t>(iy) * nth + j] += basis_at_theta[k][j] * v;
            }
        return out;
    };

    std::vector<cplx> b(static_cast<std::size_t>(ny) * nh);
    for (int iy = 0; iy < ny; ++iy)
        for (int k = 0; k < nh; ++k)
            b[static_cast<std::size_t>(iy) * nh + k] = mom.at(imu, iy, k);

    auto N = [&](const std::vector<cplx>& f) {
        std::vector<cplx> out = A.apply_adjoint(applyWt(applyW(A.apply(f))));
        std::vector<cplx> lap = detail::graph_laplacian(m, f);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * lap[i];
        return out;
    };

    std::vector<cplx> rhs = A.apply_adjoint(applyWt(b));
    std::vector<cplx> x(m.grid.size(), cplx(0.0)), r = rhs, p = r;
    double rr = detail::dot(r, r).real();
    double rhs_norm = std::sqrt(rr);
    if (rhs_norm == 0.0) return x;
    for (int it = 0; it < max_iter; ++it) {
        std::vector<cplx> Np = N(p);
        double pNp = detail::dot(p, Np).real();
        if (pNp <= 0.0) throw Error("invert_moment_transform: CG breakdown");
        double alpha = rr / pNp;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Np[i];
        }
        double rr_new = detail::dot(r, r).real();
        if (std::sqrt(rr_new) <= tol * rhs_norm) return x;
        double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    }
    throw Error("invert_moment_transform: CG did not converge within the iteration cap");
}

// The moment with angular weight h_k equals int h_k(theta) S(y,theta) dtheta;
// recover S on the theta grid by solving the quadrature system per (mu, y).
inline SinogramGrid moment_to_sinogram(const MomentSet& mom,
                                       const std::vector<std::vector<double>>& basis_at_theta,
                                       const std::vector<double>& thetas) {
    int nth = static_cast<int>(thetas.size());
    if (mom.n_h != nth || static_cast<int>(basis_at_theta.size()) != nth)
        throw Error("moment_to_sinogram: basis size must match the theta grid");
    double dth = nth > 1 ? thetas[1] - thetas[0] : kPi;
    std::vector<double> B(static_cast<std::size_t>(nth) * nth);
    for (int k = 0; k < nth; ++k)
        for (int j = 0; j < nth; ++j) B[static_cast<std::size_t>(k) * nth + j] =
            basis_at_theta[k][j] * dth;
    detail::DenseLU lu(std::move(B), nth);

    SinogramGrid sg;
    sg.ypts = mom.ypts;
    sg.thetas = thetas;
    sg.mus = mom.mus;
    sg.value.assign(static_cast<std::size_t>(sg.n_mu()) * sg.n_y() * nth, cplx(0.0));
    std::vector<cplx> rhs(nth);
    for (int imu = 0; imu < sg.n_mu(); ++imu)
        for (int iy = 0; iy < sg.n_y(); ++iy) {
            for (int k = 0; k < nth; ++k) rhs[k] = mom.at(imu, iy, k);
            std::vector<cplx> s = lu.solve(rhs);
            for (int j = 0; j < nth; ++j) sg.at(imu, iy, j) = s[j];
        }
    return sg;
}

}  // namespace wavepot
