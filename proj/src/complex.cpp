#include "gesc/complex.hpp"

#include <cmath>
#include <string>

#include "gesc/errors.hpp"

namespace gesc::core {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw DimensionError(std::string(what) + ": length " + std::to_string(a) + " vs " +
                             std::to_string(b));
    }
}

bool all_finite(std::span<const double> xs) noexcept {
    for (double x : xs) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace

ComplexVector::ComplexVector(std::vector<double> re, std::vector<double> im)
    : re_(std::move(re)), im_(std::move(im)) {
    require_same_size(re_.size(), im_.size(), "ComplexVector");
}

ComplexVector::ComplexVector(std::initializer_list<cplx> values) {
    re_.reserve(values.size());
    im_.reserve(values.size());
    for (const cplx& v : values) {
        re_.push_back(v.real());
        im_.push_back(v.imag());
    }
}

ComplexVector::ComplexVector(ConstCView v)
    : re_(v.re.begin(), v.re.end()), im_(v.im.begin(), v.im.end()) {}

bool ComplexVector::is_finite() const noexcept { return all_finite(re_) && all_finite(im_); }

ComplexMatrix ComplexMatrix::identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t k = 0; k < n; ++k) m.re_[k * n + k] = 1.0;
    return m;
}

ComplexVector ComplexMatrix::apply(ConstCView x) const {
    ComplexVector y(rows_);
    matvec(*this, x, y.view());
    return y;
}

bool ComplexMatrix::is_finite() const noexcept { return all_finite(re_) && all_finite(im_); }

cplx inner_product(ConstCView u, ConstCView v) {
    require_same_size(u.size(), v.size(), "inner_product");
    double sr = 0.0;
    double si = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        // conj(u_k) * v_k
        sr += u.re[k] * v.re[k] + u.im[k] * v.im[k];
        si += u.re[k] * v.im[k] - u.im[k] * v.re[k];
    }
    return {sr, si};
}

double squared_norm(ConstCView u) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) s += u.re[k] * u.re[k] + u.im[k] * u.im[k];
    return s;
}

double norm2(ConstCView u) noexcept { return std::sqrt(squared_norm(u)); }

ComplexVector phase_rotate(ConstCView u, double psi) {
    const double c = std::cos(psi);
    const double s = std::sin(psi);
    ComplexVector out(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        out.re()[k] = c * u.re[k] - s * u.im[k];
        out.im()[k] = s * u.re[k] + c * u.im[k];
    }
    return out;
}

void axpy(cplx a, ConstCView x, CView y) {
    require_same_size(x.size(), y.size(), "axpy");
    const double ar = a.real();
    const double ai = a.imag();
    for (std::size_t k = 0; k < x.size(); ++k) {
        y.re[k] += ar * x.re[k] - ai * x.im[k];
        y.im[k] += ar * x.im[k] + ai * x.re[k];
    }
}

void matvec(const ComplexMatrix& a, ConstCView x, CView y) {
    require_same_size(a.cols(), x.size(), "matvec input");
    require_same_size(a.rows(), y.size(), "matvec output");
    const std::size_t n = a.cols();
    const double* ar = a.re().data();
    const double* ai = a.im().data();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double sr = 0.0;
        double si = 0.0;
        const double* rr = ar + r * n;
        const double* ri = ai + r * n;
        for (std::size_t c = 0; c < n; ++c) {
            sr += rr[c] * x.re[c] - ri[c] * x.im[c];
            si += rr[c] * x.im[c] + ri[c] * x.re[c];
        }
        y.re[r] = sr;
        y.im[r] = si;
    }
}

void matvec_adjoint(const ComplexMatrix& a, ConstCView x, CView y) {
    require_same_size(a.rows(), x.size(), "matvec_adjoint input");
    require_same_size(a.cols(), y.size(), "matvec_adjoint output");
    const std::size_t n = a.cols();
    for (std::size_t c = 0; c < n; ++c) {
        y.re[c] = 0.0;
        y.im[c] = 0.0;
    }
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* rr = a.re().data() + r * n;
        const double* ri = a.im().data() + r * n;
        const double xr = x.re[r];
        const double xi = x.im[r];
        for (std::size_t c = 0; c < n; ++c) {
            // conj(a_rc) * x_r
            y.re[c] += rr[c] * xr + ri[c] * xi;
            y.im[c] += rr[c] * xi - ri[c] * xr;
        }
    }
}

ProjectorHandle::ProjectorHandle(ComplexVector anchor, double epsilon)
    : anchor_(std::move(anchor)), epsilon_(epsilon), sqnorm_(squared_norm(anchor_)) {
    if (!(epsilon > 0.0)) throw ParameterError("projector epsilon must be > 0");
    if (anchor_.size() == 0) throw DimensionError("projector anchor must have d >= 1");
}

cplx ProjectorHandle::coefficient(ConstCView x) const {
    return inner_product(anchor_, x) / (sqnorm_ + epsilon_);
}

ComplexVector project_parallel(const ProjectorHandle& p, ConstCView x) {
    const cplx coef = p.coefficient(x);
    ComplexVector out(x.size());
    axpy(coef, p.anchor(), out.view());
    return out;
}

ComplexVector sic_apply(const ProjectorHandle& p, double eta, ConstCView x) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta_sic must lie in [0, 1]");
    const cplx coef = p.coefficient(x);
    ComplexVector out(x);
    axpy(-eta * coef, p.anchor(), out.view());
    return out;
}

}  // namespace gesc::core
