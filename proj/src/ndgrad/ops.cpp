#include "dhmlm/ndgrad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace dhmlm::ndgrad {

std::string shape_string(const Shape& shape) {
    std::ostringstream ss;
    ss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        ss << (i ? "," : "") << shape[i];
    }
    ss << ']';
    return ss.str();
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using BlockMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstBlockMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
MatMap<T> as_mat(Tensor<T>& t) {
    return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
ConstMatMap<T> as_mat(const Tensor<T>& t) {
    return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
    const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(t.data(), static_cast<Eigen::Index>(t.size()));
    // (x - x) is 0 for finite x and NaN otherwise; one vectorised reduction.
    require(std::isfinite((a - a).sum()), ErrorKind::NumericalError, std::string(op) + " produced a non-finite value");
}

template <class T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
ArrMap<T> as_arr(Tensor<T>& t) {
    return ArrMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}
template <class T>
ConstArrMap<T> as_arr(const Tensor<T>& t) {
    return ConstArrMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}

void check(bool ok, const std::string& message) { require(ok, ErrorKind::InvalidArgument, message); }

template <class T>
bool tracked(Tape<T>& tape, Var<T> v) {
    return tape.requires_grad(v);
}

template <class T>
bool is_matrix(const Tensor<T>& t) {
    return t.rank() == 2;
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    auto& tape = *a.tape;
    const auto& A = a.value();
    const auto& B = b.value();
    check(is_matrix(A) && is_matrix(B) && A.cols() == B.rows(),
          "matmul shape mismatch " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
    Tensor<T> out({A.rows(), B.cols()});
    as_mat(out).noalias() = as_mat(A) * as_mat(B);
    check_finite(out, "matmul");
    return tape.push(std::move(out), {a, b}, [a, b](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        if (tracked(t, a)) {
            as_mat(t.grad_slot(a)).noalias() += as_mat(g) * as_mat(t.value(b)).transpose();
        }
        if (tracked(t, b)) {
            as_mat(t.grad_slot(b)).noalias() += as_mat(t.value(a)).transpose() * as_mat(g);
        }
    });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    auto& tape = *x.tape;
    const auto& X = x.value();
    const auto& W = w.value();
    const auto& B = bias.value();
    check(is_matrix(X) && is_matrix(W) && X.cols() == W.rows() && B.size() == W.cols(),
          "linear shape mismatch " + shape_string(X.shape()) + " x " + shape_string(W.shape()) + " + " +
              shape_string(B.shape()));
    Tensor<T> out({X.rows(), W.cols()});
    auto o = as_mat(out);
    o.noalias() = as_mat(X) * as_mat(W);
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(B.data(), static_cast<Eigen::Index>(B.size()));
    o.rowwise() += b;
    check_finite(out, "linear");
    return tape.push(std::move(out), {x, w, bias}, [x, w, bias](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        const auto G = as_mat(g);
        if (tracked(t, x)) {
            as_mat(t.grad_slot(x)).noalias() += G * as_mat(t.value(w)).transpose();
        }
        if (tracked(t, w)) {
            as_mat(t.grad_slot(w)).noalias() += as_mat(t.value(x)).transpose() * G;
        }
        if (tracked(t, bias)) {
            auto& gb = t.grad_slot(bias);
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(gb.data(), static_cast<Eigen::Index>(gb.size()));
            db += G.colwise().sum();
        }
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    const auto& A = a.value();
    const auto& B = b.value();
    check(A.shape() == B.shape(), "add shape mismatch " + shape_string(A.shape()) + " + " + shape_string(B.shape()));
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] + B[i];
    }
    check_finite(out, "add");
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        for (Var<T> in : {a, b}) {
            if (tracked(t, in)) {
                auto& gi = t.grad_slot(in);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gi[i] += g[i];
                }
            }
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    const auto& A = a.value();
    const auto& B = b.value();
    check(A.shape() == B.shape(), "mul shape mismatch " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] * B[i];
    }
    check_finite(out, "mul");
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        const auto& A = t.value(a);
        const auto& B = t.value(b);
        if (tracked(t, a)) {
            auto& ga = t.grad_slot(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * B[i];
            }
        }
        if (tracked(t, b)) {
            auto& gb = t.grad_slot(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * A[i];
            }
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, double factor) {
    const auto& A = a.value();
    const T f = static_cast<T>(factor);
    Tensor<T> out(A.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = A[i] * f;
    }
    check_finite(out, "scale");
    return a.tape->push(std::move(out), {a}, [a, f](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        auto& ga = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * f;
        }
    });
}

template <class T>
Var<T> sum(Var<T> a) {
    const auto& A = a.value();
    T s = 0;
    for (T v : A.values()) {
        s += v;
    }
    Tensor<T> out({1}, s);
    check_finite(out, "sum");
    return a.tape->push(std::move(out), {a}, [a](Tape<T>& t) {
        const T g = t.grad(t.current())[0];
        auto& ga = t.grad_slot(a);
        for (auto& v : ga.values()) {
            v += g;
        }
    });
}

template <class T>
Var<T> mean(Var<T> a) {
    const std::size_t n = a.value().size();
    check(n > 0, "mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
    const auto& E = table.value();
    check(is_matrix(E), "embedding table must be a matrix");
    const std::size_t vocab = E.rows();
    const std::size_t d = E.cols();
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
              "embedding id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(E.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    auto saved = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    return table.tape->push(std::move(out), {table}, [table, saved, d](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        auto& ge = t.grad_slot(table);
        for (std::size_t i = 0; i < saved->size(); ++i) {
            T* dst = ge.data() + static_cast<std::size_t>((*saved)[i]) * d;
            const T* src = g.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

template <class T>
Var<T> take_rows(Var<T> x, std::span<const std::size_t> rows) {
    const auto& X = x.value();
    check(is_matrix(X), "take_rows needs a matrix");
    const std::size_t d = X.cols();
    Tensor<T> out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        check(rows[i] < X.rows(), "take_rows index " + std::to_string(rows[i]) + " out of range");
        std::copy_n(X.data() + rows[i] * d, d, out.data() + i * d);
    }
    auto saved = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    return x.tape->push(std::move(out), {x}, [x, saved, d](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        auto& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < saved->size(); ++i) {
            T* dst = gx.data() + (*saved)[i] * d;
            const T* src = g.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* in = x.data() + r * n;
        T* o = out.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T z = 0;
        for (std::size_t c = 0; c < n; ++c) {
            o[c] = std::exp(in[c] - mx);
            z += o[c];
        }
        const T inv = T(1) / z;
        for (std::size_t c = 0; c < n; ++c) {
            o[c] *= inv;
        }
    }
    return out;
}

template <class T>
Var<T> softmax(Var<T> x) {
    Tensor<T> out = softmax_rows(x.value());
    check_finite(out, "softmax");
    return x.tape->push(std::move(out), {x}, [x](Tape<T>& t) {
        const auto self = t.current();
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& gx = t.grad_slot(x);
        const std::size_t n = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const T* yr = y.data() + r * n;
            const T* gr = g.data() + r * n;
            T dot = 0;
            for (std::size_t c = 0; c < n; ++c) {
                dot += yr[c] * gr[c];
            }
            T* dst = gx.data() + r * n;
            for (std::size_t c = 0; c < n; ++c) {
                dst[c] += yr[c] * (gr[c] - dot);
            }
        }
    });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
    const auto& X = x.value();
    const std::size_t n = X.cols();
    check(gain.value().size() == n && bias.value().size() == n, "layer_norm parameter size mismatch");
    const std::size_t rows = X.rows();
    Tensor<T> out(X.shape());
    auto xhat = std::make_shared<Storage<T>>(X.size());
    auto rstd = std::make_shared<Storage<T>>(rows);
    const T* gv = gain.value().data();
    const T* bv = bias.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = X.data() + r * n;
        T mu = 0;
        for (std::size_t c = 0; c < n; ++c) {
            mu += in[c];
        }
        mu /= static_cast<T>(n);
        T var = 0;
        for (std::size_t c = 0; c < n; ++c) {
            var += (in[c] - mu) * (in[c] - mu);
        }
        var /= static_cast<T>(n);
        const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
        (*rstd)[r] = rs;
        T* xh = xhat->data() + r * n;
        T* o = out.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) {
            xh[c] = (in[c] - mu) * rs;
            o[c] = xh[c] * gv[c] + bv[c];
        }
    }
    check_finite(out, "layer_norm");
    return x.tape->push(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd, n](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        const std::size_t rows = g.rows();
        if (tracked(t, gain) || tracked(t, bias)) {
            Storage<T> dg(n, T(0)), db(n, T(0));
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * n;
                const T* xh = xhat->data() + r * n;
                for (std::size_t c = 0; c < n; ++c) {
                    dg[c] += gr[c] * xh[c];
                    db[c] += gr[c];
                }
            }
            if (tracked(t, gain)) {
                auto& s = t.grad_slot(gain);
                for (std::size_t c = 0; c < n; ++c) {
                    s[c] += dg[c];
                }
            }
            if (tracked(t, bias)) {
                auto& s = t.grad_slot(bias);
                for (std::size_t c = 0; c < n; ++c) {
                    s[c] += db[c];
                }
            }
        }
        if (tracked(t, x)) {
            auto& gx = t.grad_slot(x);
            const T* gv = t.value(gain).data();
            Storage<T> dxh(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * n;
                const T* xh = xhat->data() + r * n;
                T s1 = 0, s2 = 0;
                for (std::size_t c = 0; c < n; ++c) {
                    dxh[c] = gr[c] * gv[c];
                    s1 += dxh[c];
                    s2 += dxh[c] * xh[c];
                }
                const T k = (*rstd)[r] / static_cast<T>(n);
                T* dst = gx.data() + r * n;
                for (std::size_t c = 0; c < n; ++c) {
                    dst[c] += k * (static_cast<T>(n) * dxh[c] - s1 - xh[c] * s2);
                }
            }
        }
    });
}

template <class T>
Var<T> gelu(Var<T> x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T k = static_cast<T>(0.044715);
    const auto& X = x.value();
    const auto xa = as_arr(X);
    auto th = std::make_shared<Tensor<T>>(X.shape());
    as_arr(*th) = (c * (xa + k * xa.cube())).tanh();
    Tensor<T> out(X.shape());
    as_arr(out) = T(0.5) * xa * (T(1) + as_arr(*th));
    check_finite(out, "gelu");
    return x.tape->push(std::move(out), {x}, [x, th, c, k](Tape<T>& t) {
        const auto g = as_arr(t.grad(t.current()));
        const auto xa = as_arr(t.value(x));
        const auto tha = as_arr(*th);
        as_arr(t.grad_slot(x)) +=
            g * (T(0.5) * (T(1) + tha) + T(0.5) * xa * (T(1) - tha.square()) * c * (T(1) + T(3) * k * xa.square()));
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    const auto& X = x.value();
    Tensor<T> out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
        out[i] = X[i] > T(0) ? X[i] : T(0);
    }
    return x.tape->push(std::move(out), {x}, [x](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        const auto& X = t.value(x);
        auto& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < X.size(); ++i) {
            gx[i] += X[i] > T(0) ? g[i] : T(0);
        }
    });
}

template <class T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
    check(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0, 1)");
    if (rate == 0.0) {
        return x;
    }
    const auto& X = x.value();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<Storage<T>>(X.size());
    Tensor<T> out(X.shape());
    // Four 16-bit draws per engine output; the drop threshold is rate rounded to 1/65536.
    const auto threshold = static_cast<std::uint32_t>(std::lround(rate * 65536.0));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (i % 4 == 0) {
            bits = rng.next();
        }
        const auto u = static_cast<std::uint32_t>(bits & 0xffffu);
        bits >>= 16;
        (*mask)[i] = u < threshold ? T(0) : keep_scale;
        out[i] = X[i] * (*mask)[i];
    }
    return x.tape->push(std::move(out), {x}, [x, mask](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        auto& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * (*mask)[i];
        }
    });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets) {
    const auto& Z = logits.value();
    check(is_matrix(Z) && Z.rows() == targets.size() && !targets.empty(),
          "cross_entropy: logits " + shape_string(Z.shape()) + " vs " + std::to_string(targets.size()) + " targets");
    const std::size_t n = Z.cols();
    auto probs = std::make_shared<Tensor<T>>(softmax_rows(Z));
    double loss = 0.0;
    for (std::size_t r = 0; r < Z.rows(); ++r) {
        check(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < n, "cross_entropy target out of range");
        const T* z = Z.data() + r * n;
        const T mx = *std::max_element(z, z + n);
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            s += std::exp(static_cast<double>(z[c] - mx));
        }
        loss += std::log(s) + static_cast<double>(mx) - static_cast<double>(z[targets[r]]);
    }
    Tensor<T> out({1}, static_cast<T>(loss / static_cast<double>(Z.rows())));
    check_finite(out, "cross_entropy");
    auto saved = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    return logits.tape->push(std::move(out), {logits}, [logits, probs, saved](Tape<T>& t) {
        const T g = t.grad(t.current())[0];
        auto& gz = t.grad_slot(logits);
        const std::size_t n = probs->cols();
        const std::size_t m = probs->rows();
        const T k = g / static_cast<T>(m);
        for (std::size_t r = 0; r < m; ++r) {
            const T* p = probs->data() + r * n;
            T* dst = gz.data() + r * n;
            for (std::size_t c = 0; c < n; ++c) {
                dst[c] += k * p[c];
            }
            dst[(*saved)[r]] -= k;
        }
    });
}

template <class T>
Var<T> nll_from_probs(Var<T> probs, std::span<const std::int32_t> targets) {
    const auto& P = probs.value();
    check(is_matrix(P) && P.rows() == targets.size() && !targets.empty(), "nll_from_probs shape mismatch");
    const std::size_t n = P.cols();
    double loss = 0.0;
    for (std::size_t r = 0; r < P.rows(); ++r) {
        check(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < n, "nll target out of range");
        loss -= std::log(static_cast<double>(P.at(r, static_cast<std::size_t>(targets[r]))));
    }
    Tensor<T> out({1}, static_cast<T>(loss / static_cast<double>(P.rows())));
    check_finite(out, "nll_from_probs");
    auto saved = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    return probs.tape->push(std::move(out), {probs}, [probs, saved](Tape<T>& t) {
        const T g = t.grad(t.current())[0];
        const auto& P = t.value(probs);
        auto& gp = t.grad_slot(probs);
        const T k = g / static_cast<T>(P.rows());
        for (std::size_t r = 0; r < P.rows(); ++r) {
            const std::size_t c = static_cast<std::size_t>((*saved)[r]);
            gp.at(r, c) -= k / P.at(r, c);
        }
    });
}

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t seq, std::size_t heads,
                 std::span<const std::uint8_t> key_valid) {
    const auto& Q = q.value();
    const auto& K = k.value();
    const auto& V = v.value();
    check(is_matrix(Q) && Q.shape() == K.shape() && Q.shape() == V.shape(), "attention q/k/v shape mismatch");
    check(Q.rows() == batch * seq, "attention rows must equal batch*seq");
    check(key_valid.size() == batch * seq, "attention key mask size mismatch");
    const std::size_t d = Q.cols();
    check(heads >= 1 && d % heads == 0, "model dim must be divisible by head count");
    const std::size_t dh = d / heads;
    const T scale_factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const auto S = static_cast<Eigen::Index>(seq);
    const auto DH = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

    auto probs = std::make_shared<Storage<T>>(batch * heads * seq * seq);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(key_valid.begin(), key_valid.end());
    Tensor<T> out({batch * seq, d});

    // Additive key bias: 0 for valid keys, -inf for masked ones (exp gives exactly 0).
    Eigen::Matrix<T, Eigen::Dynamic, 1> bias(S);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::uint8_t* valid = mask->data() + b * seq;
        check(std::any_of(valid, valid + seq, [](std::uint8_t m) { return m != 0; }),
              "attention row without any valid key");
        for (std::size_t j = 0; j < seq; ++j) {
            bias(static_cast<Eigen::Index>(j)) = valid[j] ? T(0) : -std::numeric_limits<T>::infinity();
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * seq * d + h * dh;
            ConstBlockMap<T> Qh(Q.data() + off, S, DH, stride);
            ConstBlockMap<T> Kh(K.data() + off, S, DH, stride);
            ConstBlockMap<T> Vh(V.data() + off, S, DH, stride);
            MatMap<T> P(probs->data() + (b * heads + h) * seq * seq, S, S);
            P.noalias() = (Qh * Kh.transpose()) * scale_factor;
            P.rowwise() += bias.transpose();
            for (Eigen::Index i = 0; i < S; ++i) {
                auto row = P.row(i).array();
                row = (row - row.maxCoeff()).exp();
                row /= row.sum();
            }
            BlockMap<T> Oh(out.data() + off, S, DH, stride);
            Oh.noalias() = P * Vh;
        }
    }
    check_finite(out, "attention");
    return q.tape->push(std::move(out), {q, k, v}, [=](Tape<T>& t) {
        const auto& g = t.grad(t.current());
        const auto& Q = t.value(q);
        const auto& K = t.value(k);
        const auto& V = t.value(v);
        T* gq = tracked(t, q) ? t.grad_slot(q).data() : nullptr;
        T* gk = tracked(t, k) ? t.grad_slot(k).data() : nullptr;
        T* gv = tracked(t, v) ? t.grad_slot(v).data() : nullptr;
        RowMat<T> dP(S, S);
        Eigen::Array<T, Eigen::Dynamic, 1> rowdot(S);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = b * seq * d + h * dh;
                ConstBlockMap<T> Qh(Q.data() + off, S, DH, stride);
                ConstBlockMap<T> Kh(K.data() + off, S, DH, stride);
                ConstBlockMap<T> Vh(V.data() + off, S, DH, stride);
                ConstBlockMap<T> dO(g.data() + off, S, DH, stride);
                ConstMatMap<T> P(probs->data() + (b * heads + h) * seq * seq, S, S);
                if (gv != nullptr) {
                    BlockMap<T>(gv + off, S, DH, stride).noalias() += P.transpose() * dO;
                }
                if (gq == nullptr && gk == nullptr) {
                    continue;
                }
                dP.noalias() = dO * Vh.transpose();
                rowdot = (dP.array() * P.array()).rowwise().sum();
                dP = (P.array() * (dP.array().colwise() - rowdot)) * scale_factor;
                if (gq != nullptr) {
                    BlockMap<T>(gq + off, S, DH, stride).noalias() += dP * Kh;
                }
                if (gk != nullptr) {
                    BlockMap<T>(gk + off, S, DH, stride).noalias() += dP.transpose() * Qh;
                }
            }
        }
    });
}

#define DHMLM_INSTANTIATE_OPS(T)                                                                                \
    template Var<T> matmul(Var<T>, Var<T>);                                                                    \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                            \
    template Var<T> add(Var<T>, Var<T>);                                                                       \
    template Var<T> mul(Var<T>, Var<T>);                                                                       \
    template Var<T> scale(Var<T>, double);                                                                     \
    template Var<T> sum(Var<T>);                                                                               \
    template Var<T> mean(Var<T>);                                                                              \
    template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                                          \
    template Var<T> take_rows(Var<T>, std::span<const std::size_t>);                                           \
    template Var<T> softmax(Var<T>);                                                                           \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                                                \
    template Var<T> gelu(Var<T>);                                                                              \
    template Var<T> relu(Var<T>);                                                                              \
    template Var<T> dropout(Var<T>, double, Rng&);                                                             \
    template Var<T> cross_entropy(Var<T>, std::span<const std::int32_t>);                                      \
    template Var<T> nll_from_probs(Var<T>, std::span<const std::int32_t>);                                     \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::size_t,                   \
                              std::span<const std::uint8_t>);                                                  \
    template Tensor<T> softmax_rows(const Tensor<T>&);

DHMLM_INSTANTIATE_OPS(float)
DHMLM_INSTANTIATE_OPS(double)

}  // namespace dhmlm::ndgrad
