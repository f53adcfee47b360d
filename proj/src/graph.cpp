#include "jmvr/graph.hpp"

#include <cmath>
#include <cstring>

#include "jmvr/errors.hpp"

namespace jmvr {

using kernels::MatMode;

namespace {
void check(bool cond, const std::string& msg) {
    if (!cond) throw NumericError(msg);
}
} // namespace

Value Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Graph::leaf(Tensor t, bool requires_grad) {
    return push(std::move(t), requires_grad, nullptr);
}

const Tensor& Graph::value(Value v) const { return node(v.id).value; }
const Tensor& Graph::grad(Value v) const { return node(v.id).grad; }
bool Graph::has_grad(Value v) const { return !node(v.id).grad.empty(); }
bool Graph::requires_grad(Value v) const { return node(v.id).requires_grad; }

Tensor& Graph::grad_ref(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

void Graph::backward(Value loss) {
    check(node(loss.id).value.size() == 1, "backward: loss must be scalar");
    grad_ref(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = node(id);
        if (!n.requires_grad || !n.back || n.grad.empty()) continue;
        n.back(*this);
    }
}

// ---------------------------------------------------------------------------
// elementwise

// Each op builds its node first with an empty backward, then assigns the
// closure so it can capture its own output id.

Value Graph::add(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    const double* pb = tb.data();
    for (long long i = 0; i < out.size(); ++i) out[i] += pb[i];
    Value v = push(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
    int ia = a.id, ib = b.id, io = v.id;
    node(io).back = [ia, ib, io](Graph& g) {
        const Tensor& go = g.node(io).grad;
        if (g.node(ia).requires_grad) {
            Tensor& ga = g.grad_ref(ia);
            for (long long i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (g.node(ib).requires_grad) {
            Tensor& gb = g.grad_ref(ib);
            for (long long i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    };
    return v;
}

Value Graph::sub(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check(ta.same_shape(tb), "sub: shape mismatch");
    Tensor out = ta;
    const double* pb = tb.data();
    for (long long i = 0; i < out.size(); ++i) out[i] -= pb[i];
    Value v = push(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
    int ia = a.id, ib = b.id, io = v.id;
    node(io).back = [ia, ib, io](Graph& g) {
        const Tensor& go = g.node(io).grad;
        if (g.node(ia).requires_grad) {
            Tensor& ga = g.grad_ref(ia);
            for (long long i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (g.node(ib).requires_grad) {
            Tensor& gb = g.grad_ref(ib);
            for (long long i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    };
    return v;
}

Value Graph::mul(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    const double* pb = tb.data();
    for (long long i = 0; i < out.size(); ++i) out[i] *= pb[i];
    Value v = push(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
    int ia = a.id, ib = b.id, io = v.id;
    node(io).back = [ia, ib, io](Graph& g) {
        const Tensor& go = g.node(io).grad;
        const Tensor& ta = g.node(ia).value;
        const Tensor& tb = g.node(ib).value;
        if (g.node(ia).requires_grad) {
            Tensor& ga = g.grad_ref(ia);
            for (long long i = 0; i < go.size(); ++i) ga[i] += go[i] * tb[i];
        }
        if (g.node(ib).requires_grad) {
            Tensor& gb = g.grad_ref(ib);
            for (long long i = 0; i < go.size(); ++i) gb[i] += go[i] * ta[i];
        }
    };
    return v;
}

Value Graph::scale(Value a, double s) {
    Tensor out = value(a);
    for (long long i = 0; i < out.size(); ++i) out[i] *= s;
    Value v = push(std::move(out), requires_grad(a), nullptr);
    int ia = a.id, io = v.id;
    node(io).back = [ia, io, s](Graph& g) {
        if (!g.node(ia).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        Tensor& ga = g.grad_ref(ia);
        for (long long i = 0; i < go.size(); ++i) ga[i] += s * go[i];
    };
    return v;
}

Value Graph::add_rowvec(Value x, Value vv) {
    const Tensor& tx = value(x);
    const Tensor& tv = value(vv);
    check(tx.ndim() == 2 && tv.size() == tx.cols(), "add_rowvec: shape mismatch");
    Tensor out = tx;
    const int n = tx.rows(), d = tx.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) += tv[j];
    Value v = push(std::move(out), requires_grad(x) || requires_grad(vv), nullptr);
    int ix = x.id, iv = vv.id, io = v.id;
    node(io).back = [ix, iv, io, n, d](Graph& g) {
        const Tensor& go = g.node(io).grad;
        if (g.node(ix).requires_grad) {
            Tensor& gx = g.grad_ref(ix);
            for (long long i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
        if (g.node(iv).requires_grad) {
            Tensor& gv = g.grad_ref(iv);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gv[j] += go.at(i, j);
        }
    };
    return v;
}

Value Graph::mul_rowvec(Value x, Value vv) {
    const Tensor& tx = value(x);
    const Tensor& tv = value(vv);
    check(tx.ndim() == 2 && tv.size() == tx.cols(), "mul_rowvec: shape mismatch");
    Tensor out = tx;
    const int n = tx.rows(), d = tx.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) *= tv[j];
    Value v = push(std::move(out), requires_grad(x) || requires_grad(vv), nullptr);
    int ix = x.id, iv = vv.id, io = v.id;
    node(io).back = [ix, iv, io, n, d](Graph& g) {
        const Tensor& go = g.node(io).grad;
        const Tensor& tx = g.node(ix).value;
        const Tensor& tv = g.node(iv).value;
        if (g.node(ix).requires_grad) {
            Tensor& gx = g.grad_ref(ix);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gx.at(i, j) += go.at(i, j) * tv[j];
        }
        if (g.node(iv).requires_grad) {
            Tensor& gv = g.grad_ref(iv);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) gv[j] += go.at(i, j) * tx.at(i, j);
        }
    };
    return v;
}

// ---------------------------------------------------------------------------
// linear algebra

Value Graph::matmul(Value a, Value b, MatMode mode) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check(ta.ndim() == 2 && tb.ndim() == 2, "matmul: need 2-D tensors");
    int m, k, n;
    switch (mode) {
    case MatMode::NN:
        m = ta.rows(); k = ta.cols(); n = tb.cols();
        check(tb.rows() == k, "matmul NN: inner dim mismatch");
        break;
    case MatMode::NT:
        m = ta.rows(); k = ta.cols(); n = tb.rows();
        check(tb.cols() == k, "matmul NT: inner dim mismatch");
        break;
    case MatMode::TN:
        m = ta.cols(); k = ta.rows(); n = tb.cols();
        check(tb.rows() == k, "matmul TN: inner dim mismatch");
        break;
    default:
        throw NumericError("matmul: bad mode");
    }
    Tensor out({m, n});
    kernels::matmul(ta.data(), tb.data(), out.data(), m, k, n, mode, false);
    Value v = push(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
    int ia = a.id, ib = b.id, io = v.id;
    node(io).back = [ia, ib, io, m, k, n, mode](Graph& g) {
        const Tensor& go = g.node(io).grad;
        const Tensor& ta = g.node(ia).value;
        const Tensor& tb = g.node(ib).value;
        const bool need_a = g.node(ia).requires_grad;
        const bool need_b = g.node(ib).requires_grad;
        switch (mode) {
        case MatMode::NN:
            if (need_a)
                kernels::matmul(go.data(), tb.data(), g.grad_ref(ia).data(), m, n, k,
                                MatMode::NT, true);
            if (need_b)
                kernels::matmul(ta.data(), go.data(), g.grad_ref(ib).data(), k, m, n,
                                MatMode::TN, true);
            break;
        case MatMode::NT:
            if (need_a)
                kernels::matmul(go.data(), tb.data(), g.grad_ref(ia).data(), m, n, k,
                                MatMode::NN, true);
            if (need_b)
                kernels::matmul(go.data(), ta.data(), g.grad_ref(ib).data(), n, m, k,
                                MatMode::TN, true);
            break;
        case MatMode::TN:
            if (need_a)
                kernels::matmul(tb.data(), go.data(), g.grad_ref(ia).data(), k, n, m,
                                MatMode::NT, true);
            if (need_b)
                kernels::matmul(ta.data(), go.data(), g.grad_ref(ib).data(), k, m, n,
                                MatMode::NN, true);
            break;
        }
    };
    return v;
}

Value Graph::linear(Value x, Value w, Value b) {
    return add_rowvec(matmul(x, w, MatMode::NN), b);
}

// ---------------------------------------------------------------------------
// structure

Value Graph::concat_rows(const std::vector<Value>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    const int d = value(parts[0]).cols();
    int total = 0;
    bool rg = false;
    for (const Value& p : parts) {
        const Tensor& t = value(p);
        check(t.ndim() == 2 && t.cols() == d, "concat_rows: width mismatch");
        total += t.rows();
        rg = rg || requires_grad(p);
    }
    Tensor out({total, d});
    int at = 0;
    for (const Value& p : parts) {
        const Tensor& t = value(p);
        std::memcpy(out.data() + static_cast<size_t>(at) * d, t.data(),
                    sizeof(double) * static_cast<size_t>(t.size()));
        at += t.rows();
    }
    std::vector<int> ids;
    for (const Value& p : parts) ids.push_back(p.id);
    Value v = push(std::move(out), rg, nullptr);
    int io = v.id;
    node(io).back = [ids, io, d](Graph& g) {
        const Tensor& go = g.node(io).grad;
        int at = 0;
        for (int pid : ids) {
            const int rows = g.node(pid).value.rows();
            if (g.node(pid).requires_grad) {
                Tensor& gp = g.grad_ref(pid);
                const double* src = go.data() + static_cast<size_t>(at) * d;
                for (long long i = 0; i < gp.size(); ++i) gp[i] += src[i];
            }
            at += rows;
        }
    };
    return v;
}

Value Graph::slice_rows(Value x, int r0, int nrows) {
    const Tensor& tx = value(x);
    check(tx.ndim() == 2 && r0 >= 0 && r0 + nrows <= tx.rows(), "slice_rows: range");
    const int d = tx.cols();
    Tensor out({nrows, d});
    std::memcpy(out.data(), tx.data() + static_cast<size_t>(r0) * d,
                sizeof(double) * static_cast<size_t>(out.size()));
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io, r0, d](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        Tensor& gx = g.grad_ref(ix);
        double* dst = gx.data() + static_cast<size_t>(r0) * d;
        for (long long i = 0; i < go.size(); ++i) dst[i] += go[i];
    };
    return v;
}

Value Graph::concat_cols(const std::vector<Value>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    const int n = value(parts[0]).rows();
    int total = 0;
    bool rg = false;
    for (const Value& p : parts) {
        const Tensor& t = value(p);
        check(t.ndim() == 2 && t.rows() == n, "concat_cols: row mismatch");
        total += t.cols();
        rg = rg || requires_grad(p);
    }
    Tensor out({n, total});
    int at = 0;
    for (const Value& p : parts) {
        const Tensor& t = value(p);
        for (int i = 0; i < n; ++i)
            std::memcpy(out.data() + static_cast<size_t>(i) * total + at,
                        t.data() + static_cast<size_t>(i) * t.cols(),
                        sizeof(double) * static_cast<size_t>(t.cols()));
        at += t.cols();
    }
    std::vector<int> ids;
    for (const Value& p : parts) ids.push_back(p.id);
    Value v = push(std::move(out), rg, nullptr);
    int io = v.id;
    node(io).back = [ids, io, n, total](Graph& g) {
        const Tensor& go = g.node(io).grad;
        int at = 0;
        for (int pid : ids) {
            const int c = g.node(pid).value.cols();
            if (g.node(pid).requires_grad) {
                Tensor& gp = g.grad_ref(pid);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) gp.at(i, j) += go.at(i, at + j);
            }
            at += c;
        }
    };
    return v;
}

Value Graph::slice_cols(Value x, int c0, int ncols) {
    const Tensor& tx = value(x);
    check(tx.ndim() == 2 && c0 >= 0 && c0 + ncols <= tx.cols(), "slice_cols: range");
    const int n = tx.rows();
    Tensor out({n, ncols});
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data() + static_cast<size_t>(i) * ncols,
                    tx.data() + static_cast<size_t>(i) * tx.cols() + c0,
                    sizeof(double) * static_cast<size_t>(ncols));
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    const int stride = tx.cols();
    node(io).back = [ix, io, c0, ncols, n, stride](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        Tensor& gx = g.grad_ref(ix);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ncols; ++j)
                gx[static_cast<long long>(i) * stride + c0 + j] += go.at(i, j);
    };
    return v;
}

Value Graph::reshape(Value x, std::vector<int> shape) {
    const Tensor& tx = value(x);
    check(Tensor::count(shape) == tx.size(), "reshape: element count mismatch");
    Tensor out(shape, tx.vec());
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        Tensor& gx = g.grad_ref(ix);
        for (long long i = 0; i < go.size(); ++i) gx[i] += go[i];
    };
    return v;
}

Value Graph::gather_rows(Value table, std::vector<int> idx) {
    const Tensor& tt = value(table);
    check(tt.ndim() == 2, "gather_rows: table must be 2-D");
    const int d = tt.cols();
    Tensor out({static_cast<int>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < tt.rows(), "gather_rows: index out of range");
        std::memcpy(out.data() + i * d, tt.data() + static_cast<size_t>(idx[i]) * d,
                    sizeof(double) * static_cast<size_t>(d));
    }
    Value v = push(std::move(out), requires_grad(table), nullptr);
    int it = table.id, io = v.id;
    node(io).back = [it, io, idx, d](Graph& g) {
        if (!g.node(it).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        Tensor& gt = g.grad_ref(it);
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < d; ++j)
                gt.at(idx[i], j) += go.at(static_cast<int>(i), j);
    };
    return v;
}

Value Graph::replace_rows(Value x, Value null_row, const std::vector<uint8_t>& mask) {
    const Tensor& tx = value(x);
    const Tensor& tn = value(null_row);
    check(tx.ndim() == 2 && tn.size() == tx.cols(), "replace_rows: shape mismatch");
    check(static_cast<int>(mask.size()) == tx.rows(), "replace_rows: mask length");
    Tensor out = tx;
    const int n = tx.rows(), d = tx.cols();
    for (int i = 0; i < n; ++i)
        if (mask[static_cast<size_t>(i)])
            std::memcpy(out.data() + static_cast<size_t>(i) * d, tn.data(),
                        sizeof(double) * static_cast<size_t>(d));
    Value v = push(std::move(out), requires_grad(x) || requires_grad(null_row), nullptr);
    int ix = x.id, in = null_row.id, io = v.id;
    node(io).back = [ix, in, io, mask, n, d](Graph& g) {
        const Tensor& go = g.node(io).grad;
        if (g.node(ix).requires_grad) {
            Tensor& gx = g.grad_ref(ix);
            for (int i = 0; i < n; ++i)
                if (!mask[static_cast<size_t>(i)])
                    for (int j = 0; j < d; ++j) gx.at(i, j) += go.at(i, j);
        }
        if (g.node(in).requires_grad) {
            Tensor& gn = g.grad_ref(in);
            for (int i = 0; i < n; ++i)
                if (mask[static_cast<size_t>(i)])
                    for (int j = 0; j < d; ++j) gn[j] += go.at(i, j);
        }
    };
    return v;
}

// ---------------------------------------------------------------------------
// nonlinearities

Value Graph::silu(Value x) {
    const Tensor& tx = value(x);
    Tensor out = tx;
    for (long long i = 0; i < out.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-out[i]));
        out[i] = out[i] * s;
    }
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        const Tensor& tx = g.node(ix).value;
        Tensor& gx = g.grad_ref(ix);
        for (long long i = 0; i < go.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-tx[i]));
            gx[i] += go[i] * s * (1.0 + tx[i] * (1.0 - s));
        }
    };
    return v;
}

Value Graph::sigmoid(Value x) {
    const Tensor& tx = value(x);
    Tensor out = tx;
    for (long long i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        const Tensor& ty = g.node(io).value;
        Tensor& gx = g.grad_ref(ix);
        for (long long i = 0; i < go.size(); ++i) gx[i] += go[i] * ty[i] * (1.0 - ty[i]);
    };
    return v;
}

Value Graph::layer_norm_rows(Value x, double eps) {
    const Tensor& tx = value(x);
    check(tx.ndim() == 2, "layer_norm_rows: need 2-D");
    const int n = tx.rows(), d = tx.cols();
    Tensor out({n, d});
    Tensor inv_std({n});
    for (int i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += tx.at(i, j);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = tx.at(i, j) - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int j = 0; j < d; ++j) out.at(i, j) = (tx.at(i, j) - mean) * is;
    }
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io, n, d, inv_std](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        const Tensor& ty = g.node(io).value; // normalized output
        Tensor& gx = g.grad_ref(ix);
        for (int i = 0; i < n; ++i) {
            double mg = 0.0, mgy = 0.0;
            for (int j = 0; j < d; ++j) {
                mg += go.at(i, j);
                mgy += go.at(i, j) * ty.at(i, j);
            }
            mg /= d;
            mgy /= d;
            const double is = inv_std[i];
            for (int j = 0; j < d; ++j)
                gx.at(i, j) += is * (go.at(i, j) - mg - ty.at(i, j) * mgy);
        }
    };
    return v;
}

Value Graph::softmax_rows(Value x) {
    const Tensor& tx = value(x);
    check(tx.ndim() == 2, "softmax_rows: need 2-D");
    const int n = tx.rows(), d = tx.cols();
    Tensor out({n, d});
    kernels::softmax_rows(tx.data(), out.data(), n, d);
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io, n, d](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        const Tensor& ty = g.node(io).value;
        Tensor& gx = g.grad_ref(ix);
        for (int i = 0; i < n; ++i) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += go.at(i, j) * ty.at(i, j);
            for (int j = 0; j < d; ++j)
                gx.at(i, j) += ty.at(i, j) * (go.at(i, j) - dot);
        }
    };
    return v;
}

// ---------------------------------------------------------------------------
// reductions

Value Graph::mean_rows(Value x) {
    const Tensor& tx = value(x);
    check(tx.ndim() == 2, "mean_rows: need 2-D");
    const int n = tx.rows(), d = tx.cols();
    Tensor out({1, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[j] += tx.at(i, j);
    for (int j = 0; j < d; ++j) out[j] /= n;
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io, n, d](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        Tensor& gx = g.grad_ref(ix);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gx.at(i, j) += go[j] / n;
    };
    return v;
}

Value Graph::mean_all(Value x) {
    const Tensor& tx = value(x);
    const long long n = tx.size();
    double s = 0.0;
    for (long long i = 0; i < n; ++i) s += tx[i];
    Tensor out({1});
    out[0] = s / static_cast<double>(n);
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io, n](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const double go = g.node(io).grad[0] / static_cast<double>(n);
        Tensor& gx = g.grad_ref(ix);
        for (long long i = 0; i < n; ++i) gx[i] += go;
    };
    return v;
}

Value Graph::mse(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check(ta.same_shape(tb), "mse: shape mismatch");
    const long long n = ta.size();
    double s = 0.0;
    for (long long i = 0; i < n; ++i) {
        const double dlt = ta[i] - tb[i];
        s += dlt * dlt;
    }
    Tensor out({1});
    out[0] = s / static_cast<double>(n);
    Value v = push(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
    int ia = a.id, ib = b.id, io = v.id;
    node(io).back = [ia, ib, io, n](Graph& g) {
        const double go = g.node(io).grad[0] * 2.0 / static_cast<double>(n);
        const Tensor& ta = g.node(ia).value;
        const Tensor& tb = g.node(ib).value;
        if (g.node(ia).requires_grad) {
            Tensor& ga = g.grad_ref(ia);
            for (long long i = 0; i < n; ++i) ga[i] += go * (ta[i] - tb[i]);
        }
        if (g.node(ib).requires_grad) {
            Tensor& gb = g.grad_ref(ib);
            for (long long i = 0; i < n; ++i) gb[i] -= go * (ta[i] - tb[i]);
        }
    };
    return v;
}

// ---------------------------------------------------------------------------
// convolutions / pooling

Value Graph::conv1d_depthwise(Value x, Value w, Value b) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    check(tx.ndim() == 2 && tw.ndim() == 2 && tw.rows() == tx.rows(),
          "conv1d_depthwise: shape mismatch");
    check(tw.cols() % 2 == 1, "conv1d_depthwise: kernel must be odd");
    check(tb.size() == tx.rows(), "conv1d_depthwise: bias size");
    const int C = tx.rows(), T = tx.cols(), k = tw.cols();
    Tensor out({C, T});
    kernels::conv1d_depthwise(tx.data(), tw.data(), tb.data(), out.data(), C, T, k);
    Value v = push(std::move(out), requires_grad(x) || requires_grad(w) || requires_grad(b),
                   nullptr);
    int ix = x.id, iw = w.id, ibias = b.id, io = v.id;
    node(io).back = [ix, iw, ibias, io, C, T, k](Graph& g) {
        const Tensor& go = g.node(io).grad;
        const Tensor& tx = g.node(ix).value;
        const Tensor& tw = g.node(iw).value;
        double* dx = g.node(ix).requires_grad ? g.grad_ref(ix).data() : nullptr;
        double* dw = g.node(iw).requires_grad ? g.grad_ref(iw).data() : nullptr;
        double* db = g.node(ibias).requires_grad ? g.grad_ref(ibias).data() : nullptr;
        kernels::conv1d_depthwise_bwd(tx.data(), tw.data(), go.data(), dx, dw, db, C, T, k);
    };
    return v;
}

Value Graph::conv2d_single(Value x, Value w, Value b) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    check(tx.ndim() == 2 && tw.ndim() == 2, "conv2d_single: need 2-D");
    check(tw.rows() % 2 == 1 && tw.cols() % 2 == 1, "conv2d_single: kernel must be odd");
    check(tb.size() == 1, "conv2d_single: bias must be scalar");
    const int H = tx.rows(), W = tx.cols(), kh = tw.rows(), kw = tw.cols();
    Tensor out({H, W});
    kernels::conv2d_single(tx.data(), tw.data(), tb[0], out.data(), H, W, kh, kw);
    Value v = push(std::move(out), requires_grad(x) || requires_grad(w) || requires_grad(b),
                   nullptr);
    int ix = x.id, iw = w.id, ibias = b.id, io = v.id;
    node(io).back = [ix, iw, ibias, io, H, W, kh, kw](Graph& g) {
        const Tensor& go = g.node(io).grad;
        const Tensor& tx = g.node(ix).value;
        const Tensor& tw = g.node(iw).value;
        double* dx = g.node(ix).requires_grad ? g.grad_ref(ix).data() : nullptr;
        double* dw = g.node(iw).requires_grad ? g.grad_ref(iw).data() : nullptr;
        double* db = g.node(ibias).requires_grad ? g.grad_ref(ibias).data() : nullptr;
        kernels::conv2d_single_bwd(tx.data(), tw.data(), go.data(), dx, dw, db, H, W, kh, kw);
    };
    return v;
}

Value Graph::patchify(Value x, Value w, Value b, int p) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    check(tx.ndim() == 3, "patchify: input must be [Cin x H x W]");
    const int Cin = tx.dim(0), H = tx.dim(1), W = tx.dim(2);
    check(H % p == 0 && W % p == 0, "patchify: size not divisible by patch");
    const int L = (H / p) * (W / p);
    const int K = Cin * p * p;
    check(tw.ndim() == 2 && tw.cols() == K, "patchify: weight shape");
    const int d = tw.rows();
    check(tb.size() == d, "patchify: bias size");

    Tensor cols({L, K});
    kernels::im2col_patches(tx.data(), cols.data(), Cin, H, W, p);
    Tensor out({L, d});
    kernels::matmul(cols.data(), tw.data(), out.data(), L, K, d, MatMode::NT, false);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) += tb[j];

    Value v = push(std::move(out), requires_grad(x) || requires_grad(w) || requires_grad(b),
                   nullptr);
    int ix = x.id, iw = w.id, ibias = b.id, io = v.id;
    node(io).back = [ix, iw, ibias, io, cols, Cin, H, W, p, L, K, d](Graph& g) {
        const Tensor& go = g.node(io).grad;
        if (g.node(iw).requires_grad)
            kernels::matmul(go.data(), cols.data(), g.grad_ref(iw).data(), d, L, K,
                            MatMode::TN, true);
        if (g.node(ibias).requires_grad) {
            Tensor& gb = g.grad_ref(ibias);
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < d; ++j) gb[j] += go.at(i, j);
        }
        if (g.node(ix).requires_grad) {
            const Tensor& tw = g.node(iw).value;
            Tensor dcols({L, K});
            kernels::matmul(go.data(), tw.data(), dcols.data(), L, d, K, MatMode::NN, false);
            kernels::col2im_patches(dcols.data(), g.grad_ref(ix).data(), Cin, H, W, p);
        }
    };
    return v;
}

Value Graph::adaptive_pool_cols(Value x, int out_len) {
    const Tensor& tx = value(x);
    check(tx.ndim() == 2 && out_len >= 1 && out_len <= tx.cols(),
          "adaptive_pool_cols: bad output length");
    const int C = tx.rows(), T = tx.cols();
    Tensor out({C, out_len});
    kernels::adaptive_avg_pool_cols(tx.data(), out.data(), C, T, out_len);
    Value v = push(std::move(out), requires_grad(x), nullptr);
    int ix = x.id, io = v.id;
    node(io).back = [ix, io, C, T, out_len](Graph& g) {
        if (!g.node(ix).requires_grad) return;
        const Tensor& go = g.node(io).grad;
        kernels::adaptive_avg_pool_cols_bwd(go.data(), g.grad_ref(ix).data(), C, T, out_len);
    };
    return v;
}

} // namespace jmvr
