#include "ptlab/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ptlab/errors.hpp"

namespace ptlab {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorKind::InvalidInput,
                    std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::InvalidInput, "matrix data length != rows*cols");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require(r.size() == cols_, ErrorKind::InvalidInput, "ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

Matrix Matrix::from_columns(std::span<const Vector> columns) {
    if (columns.empty()) return {};
    const std::size_t d = columns.front().size();
    Matrix m(d, columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) m.set_col(c, columns[c]);
    return m;
}

Matrix Matrix::column(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

Vector Matrix::col(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
}

void Matrix::set_col(std::size_t c, std::span<const double> v) {
    require(v.size() == rows_, ErrorKind::InvalidInput, "set_col: length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

Matrix Matrix::cols_range(std::size_t first, std::size_t count) const {
    require(first + count <= cols_, ErrorKind::InvalidInput, "cols_range out of bounds");
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = (*this)(r, first + c);
    return out;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    require_same_shape(*this, o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix operator*(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorKind::InvalidInput,
            "matmul: inner dimension mismatch " + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto crow = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
    require(a.cols() == x.size(), ErrorKind::InvalidInput, "matvec: dimension mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
    return y;
}

Vector transpose_times(const Matrix& a, std::span<const double> x) {
    require(a.rows() == x.size(), ErrorKind::InvalidInput, "transpose_times: dimension mismatch");
    Vector y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) axpy(x[i], a.row(i), y);
    return y;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
    if (a.cols() == 0) return b;
    if (b.cols() == 0) return a;
    require(a.rows() == b.rows(), ErrorKind::InvalidInput, "hcat: row count mismatch");
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
        std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<long>(a.cols()));
    }
    return out;
}

double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::InvalidInput, "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) {
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double s = 0.0;
    for (double v : a) s += (v / scale) * (v / scale);
    return scale * std::sqrt(s);
}

Vector add(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::InvalidInput, "add: length mismatch");
    Vector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

Vector sub(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::InvalidInput, "sub: length mismatch");
    Vector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

Vector scaled(std::span<const double> a, double s) {
    Vector r(a.begin(), a.end());
    for (auto& v : r) v *= s;
    return r;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
    require(x.size() == y.size(), ErrorKind::InvalidInput, "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

Matrix outer(std::span<const double> a, std::span<const double> b) {
    Matrix m(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
    return m;
}

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::InvalidMatrix: return "InvalidMatrix";
        case ErrorKind::DegenerateInput: return "DegenerateInput";
        case ErrorKind::NoComplement: return "NoComplement";
        case ErrorKind::NotContractive: return "NotContractive";
        case ErrorKind::NotConverged: return "NotConverged";
        case ErrorKind::NotCertified: return "NotCertified";
        case ErrorKind::NoImprovement: return "NoImprovement";
        case ErrorKind::PerpendicularObstruction: return "PerpendicularObstruction";
        case ErrorKind::NoAlignment: return "NoAlignment";
        case ErrorKind::ConeNotDisjoint: return "ConeNotDisjoint";
        case ErrorKind::DimensionTooSmall: return "DimensionTooSmall";
        case ErrorKind::DegenerateFeatures: return "DegenerateFeatures";
        case ErrorKind::WidthTooSmall: return "WidthTooSmall";
        case ErrorKind::Diverged: return "Diverged";
    }
    return "Unknown";
}

}  // namespace ptlab
