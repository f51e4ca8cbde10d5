#include "pclip/graph.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace pclip {

static double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

Graph::Id Graph::push(Node&& n) {
    if (n.op != Op::Leaf) {
        for (Id i : n.ins) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::leaf(const Mat& value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.val = value;
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    return push(std::move(n));
}

Graph::Id Graph::matmul(Id a, Id b) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dims differ");
    Node n;
    n.op = Op::MatMul;
    n.ins = {a, b};
    n.val = Mat(A.rows, B.cols);
    for (int r = 0; r < A.rows; ++r)
        for (int k = 0; k < A.cols; ++k) {
            double av = A.at(r, k);
            if (av == 0.0) continue;
            for (int c = 0; c < B.cols; ++c) n.val.at(r, c) += av * B.at(k, c);
        }
    return push(std::move(n));
}

Graph::Id Graph::matmul_nt(Id a, Id b) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
    Node n;
    n.op = Op::MatMulNT;
    n.ins = {a, b};
    n.val = Mat(A.rows, B.rows);
    for (int r = 0; r < A.rows; ++r)
        for (int c = 0; c < B.rows; ++c) {
            double acc = 0.0;
            for (int k = 0; k < A.cols; ++k) acc += A.at(r, k) * B.at(c, k);
            n.val.at(r, c) = acc;
        }
    return push(std::move(n));
}

Graph::Id Graph::add(Id a, Id b) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.ins = {a, b};
    n.val = A;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.a[i] += B.a[i];
    return push(std::move(n));
}

Graph::Id Graph::add_rowvec(Id a, Id bias) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[bias].val;
    if (B.rows != 1 || B.cols != A.cols) throw std::invalid_argument("add_rowvec: bias shape");
    Node n;
    n.op = Op::AddRowVec;
    n.ins = {a, bias};
    n.val = A;
    for (int r = 0; r < A.rows; ++r)
        for (int c = 0; c < A.cols; ++c) n.val.at(r, c) += B.at(0, c);
    return push(std::move(n));
}

Graph::Id Graph::scale(Id a, double s) {
    Node n;
    n.op = Op::Scale;
    n.ins = {a};
    n.scalar = s;
    n.val = nodes_[a].val;
    for (auto& x : n.val.a) x *= s;
    return push(std::move(n));
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    int cols = nodes_[parts[0]].val.cols;
    int rows = 0;
    for (Id p : parts) {
        if (nodes_[p].val.cols != cols) throw std::invalid_argument("concat_rows: col mismatch");
        rows += nodes_[p].val.rows;
    }
    Node n;
    n.op = Op::ConcatRows;
    n.ins = parts;
    n.val = Mat(rows, cols);
    int r0 = 0;
    for (Id p : parts) {
        const Mat& P = nodes_[p].val;
        for (int r = 0; r < P.rows; ++r)
            for (int c = 0; c < cols; ++c) n.val.at(r0 + r, c) = P.at(r, c);
        r0 += P.rows;
    }
    return push(std::move(n));
}

Graph::Id Graph::row_softmax(Id a) {
    const Mat& A = nodes_[a].val;
    Node n;
    n.op = Op::RowSoftmax;
    n.ins = {a};
    n.val = Mat(A.rows, A.cols);
    for (int r = 0; r < A.rows; ++r) {
        double mx = A.at(r, 0);
        for (int c = 1; c < A.cols; ++c) mx = std::max(mx, A.at(r, c));
        double z = 0.0;
        for (int c = 0; c < A.cols; ++c) z += std::exp(A.at(r, c) - mx);
        for (int c = 0; c < A.cols; ++c) n.val.at(r, c) = std::exp(A.at(r, c) - mx) / z;
    }
    return push(std::move(n));
}

Graph::Id Graph::layer_norm(Id a, Id gain, Id bias, double eps) {
    const Mat& A = nodes_[a].val;
    const Mat& G = nodes_[gain].val;
    const Mat& B = nodes_[bias].val;
    if (G.rows != 1 || G.cols != A.cols || B.rows != 1 || B.cols != A.cols)
        throw std::invalid_argument("layer_norm: param shape");
    Node n;
    n.op = Op::LayerNorm;
    n.ins = {a, gain, bias};
    n.scalar = eps;
    n.val = Mat(A.rows, A.cols);
    for (int r = 0; r < A.rows; ++r) {
        double mu = 0.0;
        for (int c = 0; c < A.cols; ++c) mu += A.at(r, c);
        mu /= A.cols;
        double var = 0.0;
        for (int c = 0; c < A.cols; ++c) {
            double d = A.at(r, c) - mu;
            var += d * d;
        }
        var /= A.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < A.cols; ++c)
            n.val.at(r, c) = (A.at(r, c) - mu) * inv * G.at(0, c) + B.at(0, c);
    }
    return push(std::move(n));
}

Graph::Id Graph::silu(Id a) {
    Node n;
    n.op = Op::Silu;
    n.ins = {a};
    n.val = nodes_[a].val;
    for (auto& x : n.val.a) x = x * sigmoid(x);
    return push(std::move(n));
}

Graph::Id Graph::mean_rows(Id a) {
    const Mat& A = nodes_[a].val;
    Node n;
    n.op = Op::MeanRows;
    n.ins = {a};
    n.val = Mat(1, A.cols);
    for (int r = 0; r < A.rows; ++r)
        for (int c = 0; c < A.cols; ++c) n.val.at(0, c) += A.at(r, c);
    for (auto& x : n.val.a) x /= A.rows;
    return push(std::move(n));
}

Graph::Id Graph::last_row(Id a) {
    const Mat& A = nodes_[a].val;
    Node n;
    n.op = Op::LastRow;
    n.ins = {a};
    n.val = Mat(1, A.cols);
    for (int c = 0; c < A.cols; ++c) n.val.at(0, c) = A.at(A.rows - 1, c);
    return push(std::move(n));
}

Graph::Id Graph::l2_normalize_rows(Id a, double eps) {
    const Mat& A = nodes_[a].val;
    Node n;
    n.op = Op::L2NormRows;
    n.ins = {a};
    n.scalar = eps;
    n.val = Mat(A.rows, A.cols);
    for (int r = 0; r < A.rows; ++r) {
        double ss = 0.0;
        for (int c = 0; c < A.cols; ++c) ss += A.at(r, c) * A.at(r, c);
        double inv = 1.0 / std::sqrt(ss + eps);
        for (int c = 0; c < A.cols; ++c) n.val.at(r, c) = A.at(r, c) * inv;
    }
    return push(std::move(n));
}

Graph::Id Graph::temp_scale(Id a, Id log_tau) {
    const Mat& T = nodes_[log_tau].val;
    if (T.rows != 1 || T.cols != 1) throw std::invalid_argument("temp_scale: log_tau must be 1x1");
    Node n;
    n.op = Op::TempScale;
    n.ins = {a, log_tau};
    n.val = nodes_[a].val;
    double f = std::exp(-T.at(0, 0));
    for (auto& x : n.val.a) x *= f;
    return push(std::move(n));
}

static double nce_diag(const Mat& L, bool over_rows) {
    int N = L.rows;
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        double mx = over_rows ? L.at(i, 0) : L.at(0, i);
        for (int j = 1; j < N; ++j) {
            double v = over_rows ? L.at(i, j) : L.at(j, i);
            mx = std::max(mx, v);
        }
        double z = 0.0;
        for (int j = 0; j < N; ++j) {
            double v = over_rows ? L.at(i, j) : L.at(j, i);
            z += std::exp(v - mx);
        }
        acc += std::log(z) + mx - L.at(i, i);
    }
    return acc / N;
}

Graph::Id Graph::info_nce_diag_rows(Id logits) {
    const Mat& L = nodes_[logits].val;
    if (L.rows != L.cols) throw std::invalid_argument("info_nce: matrix must be square");
    Node n;
    n.op = Op::NceRows;
    n.ins = {logits};
    n.val = Mat(1, 1);
    n.val.at(0, 0) = nce_diag(L, true);
    return push(std::move(n));
}

Graph::Id Graph::info_nce_diag_cols(Id logits) {
    const Mat& L = nodes_[logits].val;
    if (L.rows != L.cols) throw std::invalid_argument("info_nce: matrix must be square");
    Node n;
    n.op = Op::NceCols;
    n.ins = {logits};
    n.val = Mat(1, 1);
    n.val.at(0, 0) = nce_diag(L, false);
    return push(std::move(n));
}

Graph::Id Graph::weighted_sum(Id a, const Mat& weights) {
    const Mat& A = nodes_[a].val;
    if (!A.same_shape(weights)) throw std::invalid_argument("weighted_sum: shape mismatch");
    Node n;
    n.op = Op::WeightedSum;
    n.ins = {a};
    n.aux = weights;
    n.val = Mat(1, 1);
    double acc = 0.0;
    for (size_t i = 0; i < A.size(); ++i) acc += A.a[i] * weights.a[i];
    n.val.at(0, 0) = acc;
    return push(std::move(n));
}

void Graph::ensure_grad(Node& n) {
    if (n.grad.rows != n.val.rows || n.grad.cols != n.val.cols)
        n.grad = Mat(n.val.rows, n.val.cols);
}

void Graph::backward(Id scalar_node) {
    Node& out = nodes_[scalar_node];
    if (out.val.rows != 1 || out.val.cols != 1)
        throw std::invalid_argument("backward: output must be 1x1");
    for (auto& n : nodes_) n.grad = Mat();
    ensure_grad(out);
    out.grad.at(0, 0) = 1.0;
    for (Id id = scalar_node; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.size() == 0 || n.op == Op::Leaf) continue;
        backprop_node(id);
    }
}

void Graph::backprop_node(Id id) {
    Node& n = nodes_[id];
    const Mat& g = n.grad;
    auto in = [&](int k) -> Node& { return nodes_[n.ins[k]]; };
    auto want = [&](int k) -> bool { return nodes_[n.ins[k]].needs_grad; };
    auto gm = [&](int k) -> Mat& {
        ensure_grad(nodes_[n.ins[k]]);
        return nodes_[n.ins[k]].grad;
    };

    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::MatMul: {
        const Mat& A = in(0).val;
        const Mat& B = in(1).val;
        if (want(0)) {
            Mat& dA = gm(0);
            for (int r = 0; r < A.rows; ++r)
                for (int k = 0; k < A.cols; ++k) {
                    double acc = 0.0;
                    for (int c = 0; c < B.cols; ++c) acc += g.at(r, c) * B.at(k, c);
                    dA.at(r, k) += acc;
                }
        }
        if (want(1)) {
            Mat& dB = gm(1);
            for (int k = 0; k < B.rows; ++k)
                for (int c = 0; c < B.cols; ++c) {
                    double acc = 0.0;
                    for (int r = 0; r < A.rows; ++r) acc += A.at(r, k) * g.at(r, c);
                    dB.at(k, c) += acc;
                }
        }
        break;
    }
    case Op::MatMulNT: {
        const Mat& A = in(0).val;
        const Mat& B = in(1).val;
        if (want(0)) {
            Mat& dA = gm(0);
            for (int r = 0; r < A.rows; ++r)
                for (int k = 0; k < A.cols; ++k) {
                    double acc = 0.0;
                    for (int c = 0; c < B.rows; ++c) acc += g.at(r, c) * B.at(c, k);
                    dA.at(r, k) += acc;
                }
        }
        if (want(1)) {
            Mat& dB = gm(1);
            for (int c = 0; c < B.rows; ++c)
                for (int k = 0; k < B.cols; ++k) {
                    double acc = 0.0;
                    for (int r = 0; r < A.rows; ++r) acc += g.at(r, c) * A.at(r, k);
                    dB.at(c, k) += acc;
                }
        }
        break;
    }
    case Op::Add: {
        for (int k = 0; k < 2; ++k)
            if (want(k)) {
                Mat& d = gm(k);
                for (size_t i = 0; i < g.size(); ++i) d.a[i] += g.a[i];
            }
        break;
    }
    case Op::AddRowVec: {
        if (want(0)) {
            Mat& d = gm(0);
            for (size_t i = 0; i < g.size(); ++i) d.a[i] += g.a[i];
        }
        if (want(1)) {
            Mat& db = gm(1);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) db.at(0, c) += g.at(r, c);
        }
        break;
    }
    case Op::Scale: {
        if (want(0)) {
            Mat& d = gm(0);
            for (size_t i = 0; i < g.size(); ++i) d.a[i] += n.scalar * g.a[i];
        }
        break;
    }
    case Op::ConcatRows: {
        int r0 = 0;
        for (size_t k = 0; k < n.ins.size(); ++k) {
            const Mat& P = in(static_cast<int>(k)).val;
            if (want(static_cast<int>(k))) {
                Mat& d = gm(static_cast<int>(k));
                for (int r = 0; r < P.rows; ++r)
                    for (int c = 0; c < P.cols; ++c) d.at(r, c) += g.at(r0 + r, c);
            }
            r0 += P.rows;
        }
        break;
    }
    case Op::RowSoftmax: {
        if (want(0)) {
            Mat& d = gm(0);
            const Mat& y = n.val;
            for (int r = 0; r < y.rows; ++r) {
                double dot = 0.0;
                for (int c = 0; c < y.cols; ++c) dot += g.at(r, c) * y.at(r, c);
                for (int c = 0; c < y.cols; ++c)
                    d.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
            }
        }
        break;
    }
    case Op::LayerNorm: {
        const Mat& A = in(0).val;
        const Mat& G = in(1).val;
        double eps = n.scalar;
        for (int r = 0; r < A.rows; ++r) {
            double mu = 0.0;
            for (int c = 0; c < A.cols; ++c) mu += A.at(r, c);
            mu /= A.cols;
            double var = 0.0;
            for (int c = 0; c < A.cols; ++c) {
                double d = A.at(r, c) - mu;
                var += d * d;
            }
            var /= A.cols;
            double inv = 1.0 / std::sqrt(var + eps);
            // xhat and the two row means needed for dx
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int c = 0; c < A.cols; ++c) {
                double xh = (A.at(r, c) - mu) * inv;
                double dxh = g.at(r, c) * G.at(0, c);
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh;
            }
            mean_dxh /= A.cols;
            mean_dxh_xh /= A.cols;
            if (want(0)) {
                Mat& dA = gm(0);
                for (int c = 0; c < A.cols; ++c) {
                    double xh = (A.at(r, c) - mu) * inv;
                    double dxh = g.at(r, c) * G.at(0, c);
                    dA.at(r, c) += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
            if (want(1)) {
                Mat& dG = gm(1);
                for (int c = 0; c < A.cols; ++c)
                    dG.at(0, c) += g.at(r, c) * (A.at(r, c) - mu) * inv;
            }
            if (want(2)) {
                Mat& dB = gm(2);
                for (int c = 0; c < A.cols; ++c) dB.at(0, c) += g.at(r, c);
            }
        }
        break;
    }
    case Op::Silu: {
        if (want(0)) {
            Mat& d = gm(0);
            const Mat& A = in(0).val;
            for (size_t i = 0; i < g.size(); ++i) {
                double x = A.a[i];
                double s = sigmoid(x);
                d.a[i] += g.a[i] * s * (1.0 + x * (1.0 - s));
            }
        }
        break;
    }
    case Op::MeanRows: {
        if (want(0)) {
            Mat& d = gm(0);
            double inv = 1.0 / in(0).val.rows;
            for (int r = 0; r < d.rows; ++r)
                for (int c = 0; c < d.cols; ++c) d.at(r, c) += g.at(0, c) * inv;
        }
        break;
    }
    case Op::LastRow: {
        if (want(0)) {
            Mat& d = gm(0);
            for (int c = 0; c < d.cols; ++c) d.at(d.rows - 1, c) += g.at(0, c);
        }
        break;
    }
    case Op::L2NormRows: {
        if (want(0)) {
            Mat& d = gm(0);
            const Mat& A = in(0).val;
            double eps = n.scalar;
            for (int r = 0; r < A.rows; ++r) {
                double ss = 0.0;
                for (int c = 0; c < A.cols; ++c) ss += A.at(r, c) * A.at(r, c);
                double nrm = std::sqrt(ss + eps);
                double gx = 0.0;
                for (int c = 0; c < A.cols; ++c) gx += g.at(r, c) * A.at(r, c);
                double inv = 1.0 / nrm;
                double inv3 = inv * inv * inv;
                for (int c = 0; c < A.cols; ++c)
                    d.at(r, c) += g.at(r, c) * inv - A.at(r, c) * gx * inv3;
            }
        }
        break;
    }
    case Op::TempScale: {
        double f = std::exp(-in(1).val.at(0, 0));
        if (want(0)) {
            Mat& d = gm(0);
            for (size_t i = 0; i < g.size(); ++i) d.a[i] += g.a[i] * f;
        }
        if (want(1)) {
            // y = x * e^-t  =>  dL/dt = -sum(g . y)
            Mat& dt = gm(1);
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += g.a[i] * n.val.a[i];
            dt.at(0, 0) += -acc;
        }
        break;
    }
    case Op::WeightedSum: {
        if (want(0)) {
            Mat& d = gm(0);
            double gs = g.at(0, 0);
            for (size_t i = 0; i < d.size(); ++i) d.a[i] += gs * n.aux.a[i];
        }
        break;
    }
    case Op::NceRows:
    case Op::NceCols: {
        if (want(0)) {
            bool rows = n.op == Op::NceRows;
            const Mat& L = in(0).val;
            Mat& d = gm(0);
            int N = L.rows;
            double gs = g.at(0, 0) / N;
            for (int i = 0; i < N; ++i) {
                double mx = rows ? L.at(i, 0) : L.at(0, i);
                for (int j = 1; j < N; ++j) {
                    double v = rows ? L.at(i, j) : L.at(j, i);
                    mx = std::max(mx, v);
                }
                double z = 0.0;
                for (int j = 0; j < N; ++j) {
                    double v = rows ? L.at(i, j) : L.at(j, i);
                    z += std::exp(v - mx);
                }
                for (int j = 0; j < N; ++j) {
                    double v = rows ? L.at(i, j) : L.at(j, i);
                    double p = std::exp(v - mx) / z;
                    double delta = (i == j) ? 1.0 : 0.0;
                    if (rows)
                        d.at(i, j) += gs * (p - delta);
                    else
                        d.at(j, i) += gs * (p - delta);
                }
            }
        }
        break;
    }
    }
}

}  // namespace pclip
