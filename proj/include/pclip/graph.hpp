#pragma once

#include <vector>

#include "pclip/mat.hpp"

namespace pclip {

// Reverse-mode tape over Mat values. A fresh Graph is built per forward pass;
// backward() fills gradients for every leaf created with requires_grad=true.
// Frozen parameters enter as requires_grad=false leaves, so gradient flows
// through their ops but is never accumulated for them.
class Graph {
public:
    using Id = int;

    Id leaf(const Mat& value, bool requires_grad);

    Id matmul(Id a, Id b);       // [m,k] x [k,n] -> [m,n]
    Id matmul_nt(Id a, Id b);    // [m,k] x [n,k]^T -> [m,n]
    Id add(Id a, Id b);          // same shape
    Id add_rowvec(Id a, Id bias);  // bias [1,n] broadcast over rows of a
    Id scale(Id a, double s);
    Id concat_rows(const std::vector<Id>& parts);
    Id row_softmax(Id a);
    Id layer_norm(Id a, Id gain, Id bias, double eps = 1e-5);
    Id silu(Id a);               // x * sigmoid(x)
    Id mean_rows(Id a);          // [L,d] -> [1,d]
    Id last_row(Id a);           // [L,d] -> [1,d]
    Id l2_normalize_rows(Id a, double eps = 1e-12);
    Id temp_scale(Id a, Id log_tau);  // a * exp(-log_tau), log_tau [1,1]
    // Mean over rows of cross-entropy against the diagonal of a scaled logit
    // matrix; row-max subtraction keeps exp() in range. _cols is the same
    // over columns.
    Id info_nce_diag_rows(Id logits);
    Id info_nce_diag_cols(Id logits);
    Id weighted_sum(Id a, const Mat& weights);  // sum(weights .* a) -> [1,1]

    const Mat& val(Id id) const { return nodes_[id].val; }
    // Valid after backward(); zero matrix for nodes gradient never reached.
    const Mat& grad(Id id) const { return nodes_[id].grad; }

    void backward(Id scalar_node);

private:
    enum class Op {
        Leaf, MatMul, MatMulNT, Add, AddRowVec, Scale, ConcatRows,
        RowSoftmax, LayerNorm, Silu, MeanRows, LastRow, L2NormRows,
        TempScale, NceRows, NceCols, WeightedSum,
    };

    struct Node {
        Op op;
        std::vector<Id> ins;
        Mat val;
        Mat grad;
        Mat aux;                 // op-specific constants (weighted_sum weights)
        double scalar = 0.0;     // scale factor or epsilon, op-dependent
        bool requires_grad = false;  // leaves only
        bool needs_grad = false;     // reachable from a grad-requiring leaf
    };

    Id push(Node&& n);
    void ensure_grad(Node& n);
    void backprop_node(Id id);

    std::vector<Node> nodes_;
};

}  // namespace pclip
