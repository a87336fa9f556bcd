#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "gesc/complex.hpp"
#include "gesc/errors.hpp"
#include "gesc/rng.hpp"

using namespace gesc;
using namespace gesc::core;

namespace {

ComplexVector random_vec(std::size_t d, Rng& rng, double scale = 1.0) {
    ComplexVector v(d);
    for (std::size_t k = 0; k < d; ++k) v.set(k, {scale * rng.normal(), scale * rng.normal()});
    return v;
}

Eigen::VectorXcd to_eigen(ConstCView v) {
    Eigen::VectorXcd e(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) e[k] = v[k];
    return e;
}

// dense outer-product form of the regularised projector
Eigen::MatrixXcd dense_projector(const ComplexVector& h, double eps) {
    const auto e = to_eigen(h);
    return e * e.adjoint() / (e.squaredNorm() + eps);
}

double diff(const ComplexVector& a, const Eigen::VectorXcd& b) {
    return (to_eigen(a) - b).norm();
}

}  // namespace

TEST_CASE("inner product examples") {
    CHECK(inner_product(ComplexVector{{1, 0}, {0, 0}}, ComplexVector{{1, 0}, {0, 0}}) == cplx(1, 0));
    CHECK(inner_product(ComplexVector{{0, 1}}, ComplexVector{{0, 1}}) == cplx(1, 0));
    const ComplexVector u{{1, 2}, {3, 0}}, v{{2, 0}, {0, 1}};
    CHECK(inner_product(u, v) == cplx(2, -1));
    // brute force over components
    cplx acc = 0;
    for (std::size_t k = 0; k < 2; ++k) acc += std::conj(u[k]) * v[k];
    CHECK(inner_product(u, v) == acc);
    CHECK_THROWS_AS(inner_product(ComplexVector(2), ComplexVector(3)), DimensionError);
}

TEST_CASE("norms") {
    CHECK(norm2(ComplexVector{{3, 4}}) == doctest::Approx(5.0));
    CHECK(norm2(ComplexVector(7)) == 0.0);
    CHECK(norm2(ComplexVector{{1, 1}, {1, -1}}) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("phase rotation") {
    Rng rng(1);
    const auto u = random_vec(5, rng);
    CHECK(phase_rotate(u, 0.0) == u);
    const auto r = phase_rotate(ComplexVector{{1, 0}}, std::numbers::pi / 2);
    CHECK(std::abs(r[0] - cplx(0, 1)) < 1e-15);
    for (int t = 0; t < 100; ++t) {
        const auto v = random_vec(6, rng);
        const double psi = rng.uniform(-10, 10);
        const auto w = phase_rotate(v, psi);
        CHECK(std::abs(norm2(w) - norm2(v)) <= 1e-12 * norm2(v));
        const auto back = phase_rotate(w, -psi);
        for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(back[k] - v[k]) < 1e-12);
    }
}

TEST_CASE("projector examples") {
    ProjectorHandle p(ComplexVector{{2, 0}, {0, 0}}, 1.0);
    const auto y = project_parallel(p, ComplexVector{{1, 0}, {0, 0}});
    CHECK(std::abs(y[0] - cplx(0.8, 0)) < 1e-15);
    CHECK(std::abs(y[1]) == 0.0);
    CHECK(p.cached_sqnorm() == 4.0);
    CHECK(p.eigenvalue() == doctest::Approx(0.8));

    const auto orth = project_parallel(p, ComplexVector{{0, 0}, {5, -2}});
    CHECK(norm2(orth) == 0.0);

    ProjectorHandle zero(ComplexVector(3), 1e-4);
    CHECK(norm2(project_parallel(zero, ComplexVector{{1, 2}, {3, 4}, {5, 6}})) == 0.0);
    CHECK(zero.eigenvalue() == 0.0);

    CHECK_THROWS_AS(ProjectorHandle(ComplexVector{{1, 0}}, 0.0), ParameterError);
    CHECK_THROWS_AS(project_parallel(p, ComplexVector(3)), DimensionError);
}

TEST_CASE("sic_apply examples") {
    ProjectorHandle p(ComplexVector{{1, 0}, {0, 0}}, 1e-12);
    const ComplexVector x{{3, 0}, {4, 0}};
    CHECK(sic_apply(p, 0.0, x) == x);
    const auto full = sic_apply(p, 1.0, x);
    CHECK(std::abs(full[0]) < 1e-11);
    CHECK(std::abs(full[1] - cplx(4, 0)) < 1e-15);

    const ComplexVector h{{1, 0}, {0, 0}};
    ProjectorHandle q(h, 1e-4);
    const ComplexVector x2{{2, 0}, {0, 0}};
    const auto y = sic_apply(q, 0.5, x2);
    const Eigen::MatrixXcd P = dense_projector(h, 1e-4);
    const Eigen::VectorXcd want = to_eigen(x2) - 0.5 * P * to_eigen(x2);
    CHECK(diff(y, want) < 1e-14);
    // 2 - 0.5 * 2 / (1 + 1e-4)
    CHECK(y[0].real() == doctest::Approx(2.0 - 1.0 / 1.0001).epsilon(1e-12));

    CHECK_THROWS_AS(sic_apply(q, -0.1, x2), ParameterError);
    CHECK_THROWS_AS(sic_apply(q, 1.1, x2), ParameterError);
}

TEST_CASE("projector agrees with dense oracle and its algebra") {
    Rng rng(2);
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 1 + rng.below(9);
        const auto h = random_vec(d, rng, rng.uniform(0.01, 3.0));
        const double eps = std::pow(10.0, rng.uniform(-6, -2));
        const auto x = random_vec(d, rng);
        ProjectorHandle p(h, eps);
        const auto P = dense_projector(h, eps);
        const auto px = project_parallel(p, x);
        CHECK(diff(px, P * to_eigen(x)) < 1e-12 * (1 + norm2(x)));
        // idempotent up to the eigenvalue
        const auto ppx = project_parallel(p, px);
        for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(ppx[k] - p.eigenvalue() * px[k]) < 1e-10);
        // eigenvalue in [0, 1) and consistent with the dense spectrum
        CHECK(p.eigenvalue() >= 0.0);
        CHECK(p.eigenvalue() < 1.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(P);
        CHECK(std::abs(es.eigenvalues().maxCoeff() - p.eigenvalue()) < 1e-12);
    }
}

TEST_CASE("sesquilinearity") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const auto u = random_vec(4, rng), v = random_vec(4, rng);
        const cplx a(rng.normal(), rng.normal());
        ComplexVector au(4);
        for (std::size_t k = 0; k < 4; ++k) au.set(k, a * u[k]);
        const cplx lhs = inner_product(au, v), rhs = std::conj(a) * inner_product(u, v);
        CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
    }
}

TEST_CASE("SIC energy and non-expansiveness over 10^4 draws") {
    Rng rng(4);
    double worst_parallel = -1.0, worst_norm = -1.0, worst_perp = 0.0, worst_decomp = 0.0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t d = 1 + rng.below(16);
        const auto h = random_vec(d, rng, rng.uniform(0.0, 3.0));
        const auto x = random_vec(d, rng, rng.uniform(0.0, 3.0));
        const double eta = rng.uniform();
        const double eps = std::pow(10.0, rng.uniform(-6, -2));
        ProjectorHandle p(h, eps);
        const auto y = sic_apply(p, eta, x);
        worst_parallel = std::max(worst_parallel, norm2(project_parallel(p, y)) - norm2(project_parallel(p, x)));
        worst_norm = std::max(worst_norm, norm2(y) - norm2(x));
        // (1 - eta lambda) x_par + x_perp, with x_par along h
        const double hh = squared_norm(h);
        const cplx c = hh > 0 ? inner_product(h, x) / hh : cplx(0);
        const double lam = p.eigenvalue();
        for (std::size_t k = 0; k < d; ++k) {
            const cplx par = c * h[k], perp = x[k] - par;
            const cplx want = (1.0 - eta * lam) * par + perp;
            worst_decomp = std::max(worst_decomp, std::abs(y[k] - want));
            // orthogonal part passes unchanged
            const cplx ypar = c * h[k] * (1.0 - eta * lam);
            worst_perp = std::max(worst_perp, std::abs((y[k] - ypar) - perp));
        }
    }
    CHECK(worst_parallel <= 1e-12);
    CHECK(worst_norm <= 1e-12);
    CHECK(worst_perp <= 1e-12);
    CHECK(worst_decomp <= 1e-12);
}

TEST_CASE("SIC is gauge covariant") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const auto h = random_vec(5, rng), x = random_vec(5, rng);
        const double psi = rng.uniform(0, 2 * std::numbers::pi);
        ProjectorHandle p(h, 1e-4), pr(phase_rotate(h, psi), 1e-4);
        const auto a = sic_apply(pr, 0.7, phase_rotate(x, psi));
        const auto b = phase_rotate(sic_apply(p, 0.7, x), psi);
        for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-10);
    }
}

TEST_CASE("matrix helpers") {
    Rng rng(6);
    ComplexMatrix a(3, 4);
    for (auto& v : a.re()) v = rng.normal();
    for (auto& v : a.im()) v = rng.normal();
    Eigen::MatrixXcd e(3, 4);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) e(r, c) = a.at(r, c);
    const auto x = random_vec(4, rng);
    CHECK(diff(a.apply(x), e * to_eigen(x)) < 1e-13);
    const auto z = random_vec(3, rng);
    ComplexVector y(4);
    matvec_adjoint(a, z, y.view());
    CHECK(diff(y, e.adjoint() * to_eigen(z)) < 1e-13);
    CHECK(ComplexMatrix::identity(3).apply(z) == z);
    ComplexVector acc = z;
    axpy({0, 2}, z, acc.view());
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(acc[k] - cplx(1, 2) * z[k]) < 1e-15);
}
