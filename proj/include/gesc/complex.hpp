#pragma once

// Split real/imaginary complex linear algebra.
//
// Every complex array in the project is stored as two parallel real64 arrays
// (structure of arrays). Views are thin span pairs so the layer kernels can
// operate on rows of an N x d state without copying.

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace gesc::core {

using cplx = std::complex<double>;

struct ConstCView {
    std::span<const double> re;
    std::span<const double> im;

    std::size_t size() const noexcept { return re.size(); }
    cplx operator[](std::size_t k) const noexcept { return {re[k], im[k]}; }
};

struct CView {
    std::span<double> re;
    std::span<double> im;

    std::size_t size() const noexcept { return re.size(); }
    cplx operator[](std::size_t k) const noexcept { return {re[k], im[k]}; }
    void set(std::size_t k, cplx v) noexcept {
        re[k] = v.real();
        im[k] = v.imag();
    }
    operator ConstCView() const noexcept { return {re, im}; }
};

class ComplexVector {
public:
    ComplexVector() = default;
    explicit ComplexVector(std::size_t d) : re_(d, 0.0), im_(d, 0.0) {}
    ComplexVector(std::vector<double> re, std::vector<double> im);
    ComplexVector(std::initializer_list<cplx> values);
    explicit ComplexVector(ConstCView v);

    std::size_t size() const noexcept { return re_.size(); }
    cplx operator[](std::size_t k) const noexcept { return {re_[k], im_[k]}; }
    void set(std::size_t k, cplx v) noexcept {
        re_[k] = v.real();
        im_[k] = v.imag();
    }

    std::span<const double> re() const noexcept { return re_; }
    std::span<const double> im() const noexcept { return im_; }
    std::span<double> re() noexcept { return re_; }
    std::span<double> im() noexcept { return im_; }

    ConstCView view() const noexcept { return {re_, im_}; }
    CView view() noexcept { return {re_, im_}; }
    operator ConstCView() const noexcept { return view(); }

    bool is_finite() const noexcept;

    friend bool operator==(const ComplexVector&, const ComplexVector&) = default;

private:
    std::vector<double> re_;
    std::vector<double> im_;
};

/// Dense row-major complex matrix. Rows of an N x d matrix double as the
/// per-node state vectors h_i.
class ComplexMatrix {
public:
    ComplexMatrix() = default;
    ComplexMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), re_(rows * cols, 0.0), im_(rows * cols, 0.0) {}

    static ComplexMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    cplx at(std::size_t r, std::size_t c) const noexcept {
        return {re_[r * cols_ + c], im_[r * cols_ + c]};
    }
    void set(std::size_t r, std::size_t c, cplx v) noexcept {
        re_[r * cols_ + c] = v.real();
        im_[r * cols_ + c] = v.imag();
    }

    ConstCView row(std::size_t r) const noexcept {
        return {std::span<const double>(re_).subspan(r * cols_, cols_),
                std::span<const double>(im_).subspan(r * cols_, cols_)};
    }
    CView row(std::size_t r) noexcept {
        return {std::span<double>(re_).subspan(r * cols_, cols_),
                std::span<double>(im_).subspan(r * cols_, cols_)};
    }

    std::span<const double> re() const noexcept { return re_; }
    std::span<const double> im() const noexcept { return im_; }
    std::span<double> re() noexcept { return re_; }
    std::span<double> im() noexcept { return im_; }

    /// y = A x
    ComplexVector apply(ConstCView x) const;
    bool is_finite() const noexcept;

    friend bool operator==(const ComplexMatrix&, const ComplexMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> re_;
    std::vector<double> im_;
};

/// <u, v> = u^H v. Conjugate-linear in u.
cplx inner_product(ConstCView u, ConstCView v);
double squared_norm(ConstCView u) noexcept;
double norm2(ConstCView u) noexcept;
ComplexVector phase_rotate(ConstCView u, double psi);

/// y += a * x
void axpy(cplx a, ConstCView x, CView y);
/// y = A x without allocation; y must not alias x.
void matvec(const ComplexMatrix& a, ConstCView x, CView y);
/// y = A^H x without allocation.
void matvec_adjoint(const ComplexMatrix& a, ConstCView x, CView y);

/// Tikhonov-regularised rank-1 projector  P = h h^H / (|h|^2 + eps).
///
/// Only ever applied to vectors; the d x d operator is not formed.
class ProjectorHandle {
public:
    ProjectorHandle(ComplexVector anchor, double epsilon);

    const ComplexVector& anchor() const noexcept { return anchor_; }
    double epsilon() const noexcept { return epsilon_; }
    double cached_sqnorm() const noexcept { return sqnorm_; }
    /// The single nonzero eigenvalue |h|^2 / (|h|^2 + eps), in [0, 1).
    double eigenvalue() const noexcept { return sqnorm_ / (sqnorm_ + epsilon_); }
    /// <h, x> / (|h|^2 + eps); P x = coefficient(x) * h.
    cplx coefficient(ConstCView x) const;

private:
    ComplexVector anchor_;
    double epsilon_;
    double sqnorm_;
};

ComplexVector project_parallel(const ProjectorHandle& p, ConstCView x);

/// x - eta * P x. Throws ParameterError unless 0 <= eta <= 1.
ComplexVector sic_apply(const ProjectorHandle& p, double eta, ConstCView x);

}  // namespace gesc::core
