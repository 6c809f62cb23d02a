#pragma once

// Dense row-major tensor with a thread-local reverse-mode tape.
// Forward ops append nodes to the active tape; backward() walks the
// tape once in reverse and then clears it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace t4t {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

template <typename T>
struct TensorStorage {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad; // sized on first accumulation

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T(0)) {
        auto n = shape_numel(shape);
        store_ = std::make_shared<TensorStorage<T>>();
        store_->shape = std::move(shape);
        store_->data.assign(static_cast<std::size_t>(n), fill);
    }

    static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.store_ = std::make_shared<TensorStorage<T>>();
        t.store_->shape = std::move(shape);
        t.store_->data = std::move(data);
        return t;
    }

    bool defined() const { return store_ != nullptr; }
    const std::vector<int>& shape() const { return store_->shape; }
    int dim(int i) const { return store_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(store_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(store_->data.size()); }

    std::vector<T>& data() { return store_->data; }
    const std::vector<T>& data() const { return store_->data; }
    T* raw() { return store_->data.data(); }
    const T* raw() const { return store_->data.data(); }

    bool requires_grad() const { return store_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        store_->requires_grad = v;
        return *this;
    }
    std::vector<T>& grad() {
        store_->ensure_grad();
        return store_->grad;
    }
    void zero_grad() {
        if (store_) std::fill(store_->grad.begin(), store_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ValueError("item() on tensor of shape " + shape_str(shape()));
        return store_->data[0];
    }
    T at(int i) const { return store_->data[static_cast<std::size_t>(i)]; }
    T at(int i, int j) const { return store_->data[idx2(i, j)]; }
    T at(int i, int j, int k) const { return store_->data[idx3(i, j, k)]; }
    T& ref(int i) { return store_->data[static_cast<std::size_t>(i)]; }
    T& ref(int i, int j) { return store_->data[idx2(i, j)]; }
    T& ref(int i, int j, int k) { return store_->data[idx3(i, j, k)]; }

    const std::shared_ptr<TensorStorage<T>>& storage() const { return store_; }

    bool all_finite() const {
        for (T v : store_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(store_->shape[1]) +
               static_cast<std::size_t>(j);
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(store_->shape[1]) +
                static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(store_->shape[2]) +
               static_cast<std::size_t>(k);
    }

    std::shared_ptr<TensorStorage<T>> store_;
};

// One executed op: input/output references plus the rule that maps the
// output gradient back onto the inputs.
template <typename T>
struct TapeNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorStorage<T>>> inputs;
    std::shared_ptr<TensorStorage<T>> output;
    std::function<void()> backward;
};

template <typename T>
class Tape {
public:
    static Tape& active() {
        thread_local Tape tape;
        return tape;
    }

    bool enabled = true;
    std::vector<TapeNode<T>> nodes;

    void clear() { nodes.clear(); }
    std::size_t size() const { return nodes.size(); }

    // Every node's inputs must precede it: no input may be produced by a
    // later node, and no output may be produced twice.
    bool topologically_ordered() const {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            for (std::size_t j = i + 1; j < nodes.size(); ++j) {
                if (nodes[j].output.get() == nodes[i].output.get()) return false;
                for (const auto& in : nodes[i].inputs)
                    if (nodes[j].output.get() == in.get()) return false;
            }
        }
        return true;
    }
};

template <typename T>
class NoGradGuard {
public:
    NoGradGuard() : prev_(Tape<T>::active().enabled) { Tape<T>::active().enabled = false; }
    ~NoGradGuard() { Tape<T>::active().enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
inline bool grad_enabled() {
    return Tape<T>::active().enabled;
}

namespace detail {

template <typename T>
inline bool any_requires_grad(std::initializer_list<const Tensor<T>*> ts) {
    for (const auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
inline void record(const char* op, std::initializer_list<const Tensor<T>*> inputs,
                   Tensor<T>& out, std::function<void()> backward) {
    auto& tape = Tape<T>::active();
    if (!tape.enabled || !any_requires_grad<T>(inputs)) return;
    out.set_requires_grad(true);
    TapeNode<T> node;
    node.op = op;
    for (const auto* t : inputs) node.inputs.push_back(t->storage());
    node.output = out.storage();
    node.backward = std::move(backward);
    tape.nodes.push_back(std::move(node));
}

template <typename T>
inline void accumulate(const std::shared_ptr<TensorStorage<T>>& store,
                       const std::vector<T>& delta) {
    if (!store->requires_grad) return;
    store->ensure_grad();
    auto& g = store->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

} // namespace detail

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const T* pa = a.raw();
    const T* pb = b.raw();
    T* po = out.raw();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    detail::record<T>("add", {&a, &b}, out, [sa, sb, so]() {
        detail::accumulate(sa, so->grad);
        detail::accumulate(sb, so->grad);
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.raw()[i] = a.raw()[i] * b.raw()[i];
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    detail::record<T>("mul", {&a, &b}, out, [sa, sb, so]() {
        if (sa->requires_grad) {
            sa->ensure_grad();
            for (std::size_t i = 0; i < so->grad.size(); ++i)
                sa->grad[i] += so->grad[i] * sb->data[i];
        }
        if (sb->requires_grad) {
            sb->ensure_grad();
            for (std::size_t i = 0; i < so->grad.size(); ++i)
                sb->grad[i] += so->grad[i] * sa->data[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.raw()[i] = a.raw()[i] * factor;
    auto sa = a.storage(), so = out.storage();
    detail::record<T>("scale", {&a}, out, [sa, so, factor]() {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i) sa->grad[i] += so->grad[i] * factor;
    });
    return out;
}

// rows [N,C] + bias [C]
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0))
        throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " vs " +
                         shape_str(bias.shape()));
    const int n = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out.ref(i, j) = x.at(i, j) + bias.at(j);
    auto sx = x.storage(), sb = bias.storage(), so = out.storage();
    detail::record<T>("add_row_bias", {&x, &bias}, out, [sx, sb, so, n, c]() {
        if (sx->requires_grad) detail::accumulate(sx, so->grad);
        if (sb->requires_grad) {
            sb->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    sb->grad[static_cast<std::size_t>(j)] +=
                        so->grad[static_cast<std::size_t>(i) * c + j];
        }
    });
    return out;
}

// ---- matmul ----

namespace detail {

// c[m,n] += a[m,k] * b[k,n], ikj order for contiguous access
template <typename T>
inline void matmul_accum(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const T av = arow[l];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b^T where bt is [n,k]
template <typename T>
inline void matmul_accum_bt(const T* a, const T* bt, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bt + static_cast<std::size_t>(j) * k;
            T acc = T(0);
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// c[m,n] += a^T * b where at is [k,m], b is [k,n]
template <typename T>
inline void matmul_accum_at(const T* at, const T* b, T* c, int m, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const T* arow = at + static_cast<std::size_t>(l) * m;
        const T* brow = b + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    detail::matmul_accum(a.raw(), b.raw(), out.raw(), m, k, n);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    detail::record<T>("matmul", {&a, &b}, out, [sa, sb, so, m, k, n]() {
        // dA = dC * B^T, dB = A^T * dC
        if (sa->requires_grad) {
            sa->ensure_grad();
            detail::matmul_accum_bt(so->grad.data(), sb->data.data(), sa->grad.data(), m, n, k);
        }
        if (sb->requires_grad) {
            sb->ensure_grad();
            detail::matmul_accum_at(sa->data.data(), so->grad.data(), sb->grad.data(), k, m, n);
        }
    });
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d: rank != 2 " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor<T> out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.ref(j, i) = a.at(i, j);
    auto sa = a.storage(), so = out.storage();
    detail::record<T>("transpose2d", {&a}, out, [sa, so, m, n]() {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                sa->grad[static_cast<std::size_t>(i) * n + j] +=
                    so->grad[static_cast<std::size_t>(j) * m + i];
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), a.data());
    auto sa = a.storage(), so = out.storage();
    detail::record<T>("reshape", {&a}, out, [sa, so]() { detail::accumulate(sa, so->grad); });
    return out;
}

// [N,C] tokens -> [C,h,w] feature map (N must equal h*w)
template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& tokens, int h, int w) {
    if (tokens.rank() != 2 || tokens.dim(0) != h * w)
        throw ValueError("tokens_to_chw: " + shape_str(tokens.shape()) + " does not cover " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
    const int c = tokens.dim(1);
    Tensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.ref(ch, y, x) = tokens.at(y * w + x, ch);
    auto st = tokens.storage(), so = out.storage();
    detail::record<T>("tokens_to_chw", {&tokens}, out, [st, so, c, h, w]() {
        if (!st->requires_grad) return;
        st->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    st->grad[static_cast<std::size_t>(y * w + x) * c + ch] +=
                        so->grad[(static_cast<std::size_t>(ch) * h + y) * w + x];
    });
    return out;
}

template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& map) {
    if (map.rank() != 3) throw ShapeError("chw_to_tokens: rank != 3 " + shape_str(map.shape()));
    const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
    Tensor<T> out({h * w, c});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.ref(y * w + x, ch) = map.at(ch, y, x);
    auto sm = map.storage(), so = out.storage();
    detail::record<T>("chw_to_tokens", {&map}, out, [sm, so, c, h, w]() {
        if (!sm->requires_grad) return;
        sm->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    sm->grad[(static_cast<std::size_t>(ch) * h + y) * w + x] +=
                        so->grad[static_cast<std::size_t>(y * w + x) * c + ch];
    });
    return out;
}

// column slice of a [N,C] matrix: columns [c0, c1)
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
    if (a.rank() != 2 || c0 < 0 || c1 > a.dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1), cw = c1 - c0;
    Tensor<T> out({n, cw});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cw; ++j) out.ref(i, j) = a.at(i, c0 + j);
    auto sa = a.storage(), so = out.storage();
    detail::record<T>("slice_cols", {&a}, out, [sa, so, n, c, c0, cw]() {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cw; ++j)
                sa->grad[static_cast<std::size_t>(i) * c + c0 + j] +=
                    so->grad[static_cast<std::size_t>(i) * cw + j];
    });
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ValueError("concat_cols: no inputs");
    const int n = parts[0].dim(0);
    int ctot = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n)
            throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
        ctot += p.dim(1);
    }
    Tensor<T> out({n, ctot});
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < pc; ++j) out.ref(i, off + j) = p.at(i, j);
        off += pc;
    }
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    if (grad_enabled<T>() && needs) {
        std::vector<std::shared_ptr<TensorStorage<T>>> stores;
        for (const auto& p : parts) stores.push_back(p.storage());
        auto so = out.storage();
        out.set_requires_grad(true);
        TapeNode<T> node;
        node.op = "concat_cols";
        node.inputs = stores;
        node.output = so;
        node.backward = [stores, so, n, ctot]() {
            int off2 = 0;
            for (const auto& s : stores) {
                const int pc = static_cast<int>(s->data.size()) / n;
                if (s->requires_grad) {
                    s->ensure_grad();
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < pc; ++j)
                            s->grad[static_cast<std::size_t>(i) * pc + j] +=
                                so->grad[static_cast<std::size_t>(i) * ctot + off2 + j];
                }
                off2 += pc;
            }
        };
        Tape<T>::active().nodes.push_back(std::move(node));
    }
    return out;
}

// channel concat of [C_i,H,W] maps
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ValueError("concat_channels: no inputs");
    const int h = parts[0].dim(1), w = parts[0].dim(2);
    std::vector<Tensor<T>> as_tokens;
    for (const auto& p : parts) {
        if (p.rank() != 3 || p.dim(1) != h || p.dim(2) != w)
            throw ShapeError("concat_channels: shape mismatch " + shape_str(p.shape()));
        as_tokens.push_back(chw_to_tokens(p));
    }
    return tokens_to_chw(concat_cols(as_tokens), h, w);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    Tensor<T> out({1});
    T acc = T(0);
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += a.raw()[i];
    out.ref(0) = acc;
    auto sa = a.storage(), so = out.storage();
    detail::record<T>("sum_all", {&a}, out, [sa, so]() {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const T g = so->grad[0];
        for (auto& v : sa->grad) v += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// Seeds d(loss)/d(loss) = 1, replays the record once in reverse, clears it.
template <typename T>
void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ValueError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto& tape = Tape<T>::active();
    loss.storage()->ensure_grad();
    loss.storage()->grad[0] = T(1);
    for (std::size_t i = tape.nodes.size(); i-- > 0;) {
        auto& node = tape.nodes[i];
        // an unsized output gradient means no gradient reached this node
        if (node.output->grad.size() != node.output->data.size()) continue;
        node.backward();
    }
    tape.clear();
}

} // namespace t4t
