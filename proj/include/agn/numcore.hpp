#pragma once

// Dense double-precision numeric core shared by every learned module:
// row-major matrices, the sigmoid activation, a named parameter store,
// SGD with Nesterov momentum, central-difference gradient checking and a
// plain-text checkpoint format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace agn {

/// Error raised for rejected inputs anywhere in the library. The message
/// names the failing stage.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
template <class... Args>
[[nodiscard]] std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}
}  // namespace detail

template <class... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(detail::concat(std::forward<Args>(args)...));
}

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      fail("Matrix: data length ", data_.size(), " != ", rows_, "x", cols_);
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) fail("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<double> values() noexcept { return data_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
  [[nodiscard]] double* data() noexcept { return data_.data(); }
  [[nodiscard]] const double* data() const noexcept { return data_.data(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  [[nodiscard]] bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void require_same(const Matrix& o, const char* what) const {
    if (!same_shape(o))
      fail(what, ": shape mismatch ", rows_, "x", cols_, " vs ", o.rows_, "x", o.cols_);
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

/// a * b. The inner sum runs left to right over k for every output entry.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    fail("matmul: dimension mismatch ", a.rows(), "x", a.cols(), " * ", b.rows(), "x", b.cols());
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

/// aᵀ * b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    fail("matmul_tn: dimension mismatch ", a.rows(), "x", a.cols(), "ᵀ * ", b.rows(), "x", b.cols());
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

/// a * bᵀ.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    fail("matmul_nt: dimension mismatch ", a.rows(), "x", a.cols(), " * ", b.rows(), "x", b.cols(), "ᵀ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) fail("hadamard: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

[[nodiscard]] inline double sigmoid(double x) noexcept {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Matrix sigmoid(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

/// Given s = sigmoid(z) and dL/ds, returns dL/dz.
inline Matrix sigmoid_backward(const Matrix& s, const Matrix& grad_s) {
  if (!s.same_shape(grad_s)) fail("sigmoid_backward: shape mismatch");
  Matrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = grad_s[i] * s[i] * (1.0 - s[i]);
  return out;
}

inline double sum(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Portable seeded generator (splitmix64 seeding of xoshiro256**). Outputs
/// do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix(x);
  }

  std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  long long integer(long long lo, long long hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long long>(next() % span);
  }
  double normal() noexcept {
    // Box-Muller; one draw per call keeps the stream position simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derives an independent stream for a sub-task.
  [[nodiscard]] static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) noexcept {
    std::uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
    return splitmix(x);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
};

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix velocity;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()),
        velocity(value.rows(), value.cols()) {}
  Param(std::string n, std::size_t rows, std::size_t cols)
      : Param(std::move(n), Matrix(rows, cols)) {}

  void zero_grad() { grad.fill(0.0); }
  void accumulate(const Matrix& g) {
    if (!g.same_shape(value))
      fail("Param '", name, "': gradient shape ", g.rows(), "x", g.cols(), " != ", value.rows(), "x",
           value.cols());
    grad += g;
  }
};

/// Uniform initialization in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Param& p, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : p.value.values()) v = rng.uniform(-a, a);
}

struct SgdOptions {
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  bool nesterov = true;
};

/// In-place SGD update with L2 weight decay and
/// optional Nesterov momentum; gradients are zeroed afterwards.
inline void sgd_step(std::span<Param* const> params, const SgdOptions& opt) {
  for (const Param* p : params) {
    for (std::size_t i = 0; i < p->grad.size(); ++i)
      if (!std::isfinite(p->grad[i]))
        fail("sgd_step: non-finite gradient in '", p->name, "' at index ", i, " (", p->grad[i], ")");
  }
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i] + opt.weight_decay * p->value[i];
      if (opt.momentum != 0.0) {
        double& v = p->velocity[i];
        v = opt.momentum * v + g;
        g = opt.nesterov ? g + opt.momentum * v : v;
      }
      p->value[i] -= opt.lr * g;
    }
    p->zero_grad();
  }
}

struct GradCheckReport {
  std::string param_name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Loss callback for grad_check. With `accumulate_grads` true it must add the
/// analytic gradient into each Param::grad; either way it returns the loss.
using LossFn = std::function<double(bool accumulate_grads)>;

inline std::vector<GradCheckReport> grad_check(const LossFn& loss_fn, std::span<Param* const> params,
                                               double eps = 1e-6, double tolerance = 1e-4) {
  if (!(eps > 0.0)) fail("grad_check: eps must be positive");
  for (Param* p : params) p->zero_grad();
  const double base = loss_fn(true);
  const double again = loss_fn(false);
  const double third = loss_fn(false);
  if (base != again || again != third)
    fail("grad_check: loss function is not deterministic (", base, ", ", again, ", ", third, ")");

  std::vector<GradCheckReport> reports;
  reports.reserve(params.size());
  for (Param* p : params) {
    GradCheckReport r{p->name, 0.0, false};
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double w = p->value[i];
      p->value[i] = w + eps;
      const double up = loss_fn(false);
      p->value[i] = w - eps;
      const double down = loss_fn(false);
      p->value[i] = w;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      // The floor keeps exact-zero gradients, whose central difference is pure
      // round-off (~1e-11), from reading as large relative errors.
      const double rel =
          std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
      r.max_rel_error = std::max(r.max_rel_error, rel);
    }
    r.passed = r.max_rel_error < tolerance;
    reports.push_back(std::move(r));
  }
  for (Param* p : params) p->zero_grad();
  return reports;
}

// Checkpoint format:
//   agn-params 1
//   param <name> <rows> <cols>
//   <one line per row, values printed with 17 significant digits>
//   end
inline void write_params(std::ostream& os, std::span<const Param* const> params) {
  os << "agn-params 1\n";
  os << std::setprecision(17);
  for (const Param* p : params) {
    os << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (std::size_t r = 0; r < p->value.rows(); ++r) {
      const auto row = p->value.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << row[c];
      os << '\n';
    }
  }
  os << "end\n";
}

inline void save_params(const std::string& path, std::span<const Param* const> params) {
  std::ofstream os(path);
  if (!os) fail("save_params: cannot open '", path, "'");
  write_params(os, params);
  if (!os) fail("save_params: write failed for '", path, "'");
}

struct NamedMatrix {
  std::string name;
  Matrix value;
};

inline std::vector<NamedMatrix> read_params(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "agn-params" || version != 1)
    fail("read_params: missing 'agn-params 1' header");
  std::vector<NamedMatrix> out;
  while (is >> tag) {
    if (tag == "end") return out;
    if (tag != "param") fail("read_params: unexpected token '", tag, "'");
    NamedMatrix nm;
    std::size_t rows = 0, cols = 0;
    if (!(is >> nm.name >> rows >> cols)) fail("read_params: bad param header");
    std::vector<double> data(rows * cols);
    for (double& v : data) {
      std::string tok;
      if (!(is >> tok)) fail("read_params: truncated values for '", nm.name, "'");
      v = std::stod(tok);
    }
    nm.value = Matrix(rows, cols, std::move(data));
    out.push_back(std::move(nm));
  }
  fail("read_params: missing 'end'");
}

/// Loads values into existing params by name; shapes must match and every
/// param must be present.
inline void load_params(const std::string& path, std::span<Param* const> params) {
  std::ifstream is(path);
  if (!is) fail("load_params: cannot open '", path, "'");
  const auto stored = read_params(is);
  for (Param* p : params) {
    auto it = std::find_if(stored.begin(), stored.end(), [&](const NamedMatrix& nm) { return nm.name == p->name; });
    if (it == stored.end()) fail("load_params: '", path, "' has no param '", p->name, "'");
    if (!it->value.same_shape(p->value)) fail("load_params: shape mismatch for '", p->name, "'");
    p->value = it->value;
    p->zero_grad();
    p->velocity.fill(0.0);
  }
}

}  // namespace agn
