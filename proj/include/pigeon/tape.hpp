#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace pigeon::nn {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a tape node. Cheap to copy; valid while its tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    int rows() const;
    int cols() const;
    double scalar() const;  // value()(0,0); requires a 1x1 node
};

// Reverse-mode autodiff over dense float64 matrices. One tape holds one
// forward graph; backward() walks it once in reverse creation order.
// Gradients of leaves are accumulated into caller-owned sink matrices, so a
// batch can run one tape per example and sum into shared parameter grads.
class Tape {
public:
    using BackFn = std::function<void(Tape&, int)>;

    Var constant(Matrix v);
    Var leaf(const Matrix& v, Matrix* grad_sink);
    Var make(Matrix value, std::vector<int> parents, BackFn back);

    void backward(Var loss);

    const Matrix& value(int id) const { return nodes_[id].value; }
    const Matrix& grad(int id) const { return nodes_[id].grad; }
    Matrix& grad_mut(int id) { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<int> parents;
        BackFn back;
        Matrix* sink = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

// --- primitive ops ------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
Var add_const(Var a, const Matrix& c);
Var add_rowvec(Var a, Var row);   // broadcast a 1xC row over all rows of a
Var mul_rowvec(Var a, Var row);   // broadcast multiply by a 1xC row
Var transpose(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, int start, int count);
Var slice_cols(Var a, int start, int count);
Var gather_rows(Var table, const std::vector<int>& ids);
Var row_scale(Var a, Var gates);  // gates is Nx1; scales each row of a
Var mean_rows(Var a);             // 1xC
Var sum_all(Var a);               // 1x1
Var entry(Var a, int i, int j);   // 1x1

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var pick_per_row(Var a, const std::vector<int>& cols);  // Nx1 of a(i, cols[i])
Var layer_norm_rows(Var a, double eps = 1e-6);          // per-row standardize
Var gelu(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var cosine_rows(Var a, Var b);  // Nx1 of per-row cosine similarities

Var stop_gradient(Var a);
// Forward emits `hard`; backward routes gradients into `soft` unchanged.
Var straight_through(const Matrix& hard, Var soft);

}  // namespace pigeon::nn
