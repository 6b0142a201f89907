#pragma once

// Core containers and small numeric utilities shared by every module:
// structured 2D grids with inside/outside masks, complex space-time fields,
// trapezoid quadrature, smooth bump functions and a seeded RNG wrapper.

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavepot {

using cplx = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

// Uniform Cartesian grid over [x0, x0+(nx-1)h] x [y0, y0+(ny-1)h].
struct Grid2D {
    int nx = 0, ny = 0;
    double x0 = 0.0, y0 = 0.0;
    double h = 0.0;

    int size() const { return nx * ny; }
    int idx(int i, int j) const { return j * nx + i; }
    Vec2 point(int i, int j) const { return {x0 + i * h, y0 + j * h}; }
    double xmax() const { return x0 + (nx - 1) * h; }
    double ymax() const { return y0 + (ny - 1) * h; }
};

// Scalar field sampled on a Grid2D, complex valued.
struct GridField {
    Grid2D grid;
    std::vector<cplx> v;

    GridField() = default;
    explicit GridField(const Grid2D& g) : grid(g), v(g.size(), cplx(0.0)) {}

    cplx& at(int i, int j) { return v[grid.idx(i, j)]; }
    const cplx& at(int i, int j) const { return v[grid.idx(i, j)]; }
};

// Bilinear interpolation; out-of-grid points read as zero.
inline cplx interp_bilinear(const Grid2D& g, const std::vector<cplx>& v, const Vec2& p) {
    double fx = (p.x - g.x0) / g.h;
    double fy = (p.y - g.y0) / g.h;
    if (fx < 0.0 || fy < 0.0 || fx > g.nx - 1 || fy > g.ny - 1) return cplx(0.0);
    int i = std::min(static_cast<int>(fx), g.nx - 2);
    int j = std::min(static_cast<int>(fy), g.ny - 2);
    double ax = fx - i, ay = fy - j;
    const cplx v00 = v[g.idx(i, j)], v10 = v[g.idx(i + 1, j)];
    const cplx v01 = v[g.idx(i, j + 1)], v11 = v[g.idx(i + 1, j + 1)];
    return (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 + (1 - ax) * ay * v01 + ax * ay * v11;
}

inline double interp_bilinear_real(const Grid2D& g, const std::vector<double>& v, const Vec2& p) {
    double fx = (p.x - g.x0) / g.h;
    double fy = (p.y - g.y0) / g.h;
    if (fx < 0.0 || fy < 0.0 || fx > g.nx - 1 || fy > g.ny - 1) return 0.0;
    int i = std::min(static_cast<int>(fx), g.nx - 2);
    int j = std::min(static_cast<int>(fy), g.ny - 2);
    double ax = fx - i, ay = fy - j;
    return (1 - ax) * (1 - ay) * v[g.idx(i, j)] + ax * (1 - ay) * v[g.idx(i + 1, j)] +
           (1 - ax) * ay * v[g.idx(i, j + 1)] + ax * ay * v[g.idx(i + 1, j + 1)];
}

// Composite trapezoid weights on n uniformly spaced samples of spacing d.
inline double trapezoid(const std::vector<double>& f, double d) {
    if (f.size() < 2) return 0.0;
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * d;
}

inline cplx trapezoid(const std::vector<cplx>& f, double d) {
    if (f.size() < 2) return cplx(0.0);
    cplx s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * d;
}

// Composite Simpson rule; n samples must be odd (even interval count).
inline double simpson(const std::vector<double>& f, double d) {
    const std::size_t n = f.size();
    if (n < 3 || n % 2 == 0) throw Error("simpson: need odd sample count >= 3");
    double s = f.front() + f.back();
    for (std::size_t i = 1; i + 1 < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * f[i];
    return s * d / 3.0;
}

// Smooth C^2 bump on [center-width, center+width] built from a quintic
// spline profile: p(s) = (1-s^2)^3 on |s|<=1, zero outside. p, p', p''
// vanish at the endpoints.
struct Bump1D {
    double center = 0.0;
    double width = 1.0;
    double amplitude = 1.0;

    double operator()(double x) const {
        double s = (x - center) / width;
        if (std::abs(s) >= 1.0) return 0.0;
        double u = 1.0 - s * s;
        return amplitude * u * u * u;
    }
    double d1(double x) const {
        double s = (x - center) / width;
        if (std::abs(s) >= 1.0) return 0.0;
        double u = 1.0 - s * s;
        return amplitude * (-6.0 * s * u * u) / width;
    }
    double d2(double x) const {
        double s = (x - center) / width;
        if (std::abs(s) >= 1.0) return 0.0;
        double u = 1.0 - s * s;
        return amplitude * (-6.0 * u * u + 24.0 * s * s * u) / (width * width);
    }
};

// Plateau cutoff: 1 on [a+ramp, b-ramp], 0 outside (a, b), quintic ramps
// (C^2). Used for the chi factor of the reflected probe amplitudes.
struct Plateau1D {
    double a = 0.0, b = 1.0;
    double ramp = 0.1;

    static double smooth01(double s) {
        // quintic smoothstep: 0 at 0, 1 at 1, zero 1st/2nd derivatives there
        if (s <= 0.0) return 0.0;
        if (s >= 1.0) return 1.0;
        return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    }
    static double smooth01_d1(double s) {
        if (s <= 0.0 || s >= 1.0) return 0.0;
        return 30.0 * s * s * (1.0 - s) * (1.0 - s);
    }
    static double smooth01_d2(double s) {
        if (s <= 0.0 || s >= 1.0) return 0.0;
        return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    }

    double operator()(double x) const {
        return smooth01((x - a) / ramp) * smooth01((b - x) / ramp);
    }
    double d1(double x) const {
        double u = (x - a) / ramp, w = (b - x) / ramp;
        return (smooth01_d1(u) * smooth01(w) - smooth01(u) * smooth01_d1(w)) / ramp;
    }
    double d2(double x) const {
        double u = (x - a) / ramp, w = (b - x) / ramp;
        return (smooth01_d2(u) * smooth01(w) - 2.0 * smooth01_d1(u) * smooth01_d1(w) +
                smooth01(u) * smooth01_d2(w)) /
               (ramp * ramp);
    }
};

// Gaussian angular weight on the direction circle, with derivatives.
struct GaussBump {
    double center = 0.0;
    double sigma = 0.2;
    double amplitude = 1.0;

    double operator()(double t) const {
        double s = (t - center) / sigma;
        return amplitude * std::exp(-0.5 * s * s);
    }
    double d1(double t) const {
        double s = (t - center) / sigma;
        return -(*this)(t)*s / sigma;
    }
    double d2(double t) const {
        double s = (t - center) / sigma;
        return (*this)(t) * (s * s - 1.0) / (sigma * sigma);
    }
};

// Deterministic RNG used by every randomized suite.
struct Rng {
    std::mt19937_64 gen;

    explicit Rng(std::uint64_t seed) : gen(seed) {}
    double uniform(double a, double b) {
        std::uniform_real_distribution<double> d(a, b);
        return d(gen);
    }
    int uniform_int(int a, int b) {
        std::uniform_int_distribution<int> d(a, b);
        return d(gen);
    }
    double normal() {
        std::normal_distribution<double> d(0.0, 1.0);
        return d(gen);
    }
};

inline double sqr(double x) { return x * x; }

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error("loglog_slope: bad input");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace wavepot
