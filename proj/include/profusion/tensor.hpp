#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace profusion {

// Dense row-major matrix of doubles. Rank-1 data is stored as a single row;
// batched data puts the batch on the leading (row) dimension.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<double> values);

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    void fill(double v) { std::fill(a.begin(), a.end(), v); }
    std::string shape_str() const;
};

// C += A * B, C += A^T * B, C += A * B^T. Plain loops ordered so the inner
// trip is contiguous; the compiler vectorizes them.
void gemm_nn_acc(const Mat& A, const Mat& B, Mat& C);
void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C);
void gemm_nt_acc(const Mat& A, const Mat& B, Mat& C);

class Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. Holds the forward result, a gradient
// buffer of the same shape, edges to the nodes it was computed from, and the
// backward rule that scatters this node's gradient into its parents.
// Parameter leaves carry their gradient buffer from birth; interior nodes get
// theirs on the first backward pass, so forward-only graphs allocate none.
class Node {
  public:
    Mat val;
    Mat grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    explicit Node(Mat v, bool req = false) : val(std::move(v)), requires_grad(req) {}
};

// Leaf constructors. Parameters want gradients; constants never get them.
Var make_param(Mat v);
Var make_const(Mat v);

// The graph in reverse-executable order: every node appears after all of its
// parents. Built once per backward pass from the loss node.
std::vector<Node*> tape_order(const Var& root);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into existing
// grad buffers; callers zero parameter grads between steps.
void backward(const Var& loss);

// Core ops. Elementwise binaries accept exact same-shape operands or a 1x1
// scalar on either side; anything else is a dimension error.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

// Adds a 1xC row vector to every row of an NxC matrix (layer bias).
Var add_rowvec(const Var& x, const Var& b);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double alpha = 0.01);
Var tanh(const Var& x);
Var sin(const Var& x);

// axis 0 stacks rows, axis 1 stacks columns.
Var concat(const std::vector<Var>& xs, int axis);

Var sum_all(const Var& x);

// Mean of squared differences over every entry.
Var mse_loss(const Var& pred, const Var& target);

// Fused stable softmax + negative log likelihood, averaged over the batch.
// labels[i] is the class index for row i.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Row-wise softmax probabilities of a raw matrix (no graph).
Mat softmax_rows(const Mat& logits);

} // namespace profusion
