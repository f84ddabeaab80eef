#include "profusion/tensor.hpp"

#include "profusion/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace profusion {

namespace {

// Batch-sized buffers churn fast; without this glibc hands them back to the
// kernel on every free and the run drowns in page faults.
struct MallocTuning {
    MallocTuning() {
#if defined(__GLIBC__)
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
    }
};
const MallocTuning malloc_tuning;

} // namespace

Mat::Mat(int r, int c, std::vector<double> values) : rows(r), cols(c), a(std::move(values)) {
    if (a.size() != static_cast<size_t>(r) * c)
        throw DimensionError("Mat init: " + std::to_string(a.size()) + " values for shape " +
                             shape_str());
}

std::string Mat::shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

namespace {

// Accumulator tile kept in registers so the j-lanes vectorize and C is
// loaded/stored once per k-sweep instead of once per k-step. Per-element
// addition order (ascending p, seeded from C) matches the textbook loop, so
// results are bit-identical to the unblocked version.
constexpr int kTile = 16;

// row = one row of the left operand read with the given stride; used for both
// the normal (stride 1) and transposed (stride = row length) orientations.
void tile_rows_acc(const double* row, int row_stride, const Mat& B, double* ci, int k,
                   int n) {
    int j0 = 0;
    for (; j0 + kTile <= n; j0 += kTile) {
        double acc[kTile];
        for (int t = 0; t < kTile; ++t) acc[t] = ci[j0 + t];
        const double* bp = &B.a[static_cast<size_t>(j0)];
        const double* ap = row;
        for (int p = 0; p < k; ++p, bp += n, ap += row_stride) {
            const double aip = *ap;
            for (int t = 0; t < kTile; ++t) acc[t] += aip * bp[t];
        }
        for (int t = 0; t < kTile; ++t) ci[j0 + t] = acc[t];
    }
    if (j0 < n) {
        const double* ap = row;
        for (int p = 0; p < k; ++p, ap += row_stride) {
            const double aip = *ap;
            const double* bp = &B.a[static_cast<size_t>(p) * n];
            for (int j = j0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

} // namespace

void gemm_nn_acc(const Mat& A, const Mat& B, Mat& C) {
    const int m = A.rows, k = A.cols, n = B.cols;
    for (int i = 0; i < m; ++i)
        tile_rows_acc(&A.a[static_cast<size_t>(i) * k], 1, B, &C.a[static_cast<size_t>(i) * n],
                      k, n);
}

void gemm_tn_acc(const Mat& A, const Mat& B, Mat& C) {
    // C[m x n] += A^T B where A is k x m, B is k x n.
    const int k = A.rows, m = A.cols, n = B.cols;
    for (int i = 0; i < m; ++i)
        tile_rows_acc(&A.a[static_cast<size_t>(i)], m, B,
                      &C.a[static_cast<size_t>(i) * n], k, n);
}

void gemm_nt_acc(const Mat& A, const Mat& B, Mat& C) {
    // C[m x n] += A B^T where A is m x k, B is n x k. B^T is materialized in a
    // per-thread scratch buffer so the inner loops keep unit stride; each dot
    // product still sums ascending p from zero, bit-matching the naive loop.
    const int m = A.rows, k = A.cols, n = B.rows;
    thread_local Mat bt;
    if (bt.rows != k || bt.cols != n) bt = Mat(k, n);
    for (int j = 0; j < n; ++j) {
        const double* bj = &B.a[static_cast<size_t>(j) * k];
        for (int p = 0; p < k; ++p) bt.a[static_cast<size_t>(p) * n + j] = bj[p];
    }
    thread_local std::vector<double> rowbuf;
    rowbuf.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < m; ++i) {
        std::fill(rowbuf.begin(), rowbuf.end(), 0.0);
        tile_rows_acc(&A.a[static_cast<size_t>(i) * k], 1, bt, rowbuf.data(), k, n);
        double* ci = &C.a[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) ci[j] += rowbuf[j];
    }
}

Var make_param(Mat v) {
    auto n = std::make_shared<Node>(std::move(v), true);
    n->grad = Mat(n->val.rows, n->val.cols);
    return n;
}

Var make_const(Mat v) { return std::make_shared<Node>(std::move(v), false); }

namespace {

Var make_op(Mat out, std::vector<Var> parents, std::function<void(Node&)> back) {
    bool req = false;
    for (const auto& p : parents) req = req || p->requires_grad;
    auto n = std::make_shared<Node>(std::move(out), req);
    if (req) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(back);
    }
    return n;
}

void check_binary_shapes(const char* op, const Mat& a, const Mat& b) {
    if (!a.same_shape(b) && !a.is_scalar() && !b.is_scalar())
        throw DimensionError(std::string(op) + ": shapes " + a.shape_str() + " vs " +
                             b.shape_str() + " (need equal shapes or a 1x1 scalar)");
}

// Accumulates g into target, collapsing to 1x1 by summation when the operand
// was a broadcast scalar.
void acc_grad(Mat& target, const Mat& g) {
    if (target.same_shape(g)) {
        for (size_t i = 0; i < g.size(); ++i) target.a[i] += g.a[i];
    } else {
        double s = 0.0;
        for (double v : g.a) s += v;
        target.a[0] += s;
    }
}

} // namespace

std::vector<Node*> tape_order(const Var& root) {
    // Iterative post-order DFS; parents land before users.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        size_t next_child;
    };
    std::vector<Frame> stack;
    if (!root->requires_grad) return order;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->parents.size()) {
            Node* child = f.n->parents[f.next_child++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    return order;
}

void backward(const Var& loss) {
    if (!loss->val.is_scalar())
        throw ContractError("backward: loss must be scalar, got " + loss->val.shape_str());
    if (!loss->requires_grad) return;
    std::vector<Node*> order = tape_order(loss);
    for (Node* n : order)
        if (!n->grad.same_shape(n->val)) n->grad = Mat(n->val.rows, n->val.cols);
    loss->grad.a[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Var matmul(const Var& a, const Var& b) {
    if (a->val.cols != b->val.rows)
        throw DimensionError("matmul: inner dims disagree, " + a->val.shape_str() + " * " +
                             b->val.shape_str());
    Mat out(a->val.rows, b->val.cols);
    gemm_nn_acc(a->val, b->val, out);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        if (A.requires_grad) gemm_nt_acc(self.grad, B.val, A.grad);
        if (B.requires_grad) gemm_tn_acc(A.val, self.grad, B.grad);
    });
}

Var add(const Var& a, const Var& b) {
    check_binary_shapes("add", a->val, b->val);
    const Mat &av = a->val, &bv = b->val;
    Mat out(std::max(av.rows, bv.rows), std::max(av.cols, bv.cols));
    const bool as = av.is_scalar(), bs = bv.is_scalar();
    for (size_t i = 0; i < out.size(); ++i)
        out.a[i] = (as ? av.a[0] : av.a[i]) + (bs ? bv.a[0] : bv.a[i]);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) acc_grad(self.parents[0]->grad, self.grad);
        if (self.parents[1]->requires_grad) acc_grad(self.parents[1]->grad, self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_binary_shapes("sub", a->val, b->val);
    const Mat &av = a->val, &bv = b->val;
    Mat out(std::max(av.rows, bv.rows), std::max(av.cols, bv.cols));
    const bool as = av.is_scalar(), bs = bv.is_scalar();
    for (size_t i = 0; i < out.size(); ++i)
        out.a[i] = (as ? av.a[0] : av.a[i]) - (bs ? bv.a[0] : bv.a[i]);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) acc_grad(self.parents[0]->grad, self.grad);
        if (self.parents[1]->requires_grad) {
            Mat neg = self.grad;
            for (double& v : neg.a) v = -v;
            acc_grad(self.parents[1]->grad, neg);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_binary_shapes("mul", a->val, b->val);
    const Mat &av = a->val, &bv = b->val;
    Mat out(std::max(av.rows, bv.rows), std::max(av.cols, bv.cols));
    const bool as = av.is_scalar(), bs = bv.is_scalar();
    for (size_t i = 0; i < out.size(); ++i)
        out.a[i] = (as ? av.a[0] : av.a[i]) * (bs ? bv.a[0] : bv.a[i]);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        Node& A = *self.parents[0];
        Node& B = *self.parents[1];
        const bool as = A.val.is_scalar(), bs = B.val.is_scalar();
        if (A.requires_grad) {
            Mat g(self.grad.rows, self.grad.cols);
            for (size_t i = 0; i < g.size(); ++i)
                g.a[i] = self.grad.a[i] * (bs ? B.val.a[0] : B.val.a[i]);
            acc_grad(A.grad, g);
        }
        if (B.requires_grad) {
            Mat g(self.grad.rows, self.grad.cols);
            for (size_t i = 0; i < g.size(); ++i)
                g.a[i] = self.grad.a[i] * (as ? A.val.a[0] : A.val.a[i]);
            acc_grad(B.grad, g);
        }
    });
}

Var scale(const Var& a, double s) {
    Mat out = a->val;
    for (double& v : out.a) v *= s;
    return make_op(std::move(out), {a}, [s](Node& self) {
        Node& A = *self.parents[0];
        if (!A.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) A.grad.a[i] += s * self.grad.a[i];
    });
}

Var add_rowvec(const Var& x, const Var& b) {
    if (b->val.rows != 1 || b->val.cols != x->val.cols)
        throw DimensionError("add_rowvec: bias " + b->val.shape_str() + " does not match " +
                             x->val.shape_str());
    Mat out = x->val;
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out(r, c) += b->val(0, c);
    return make_op(std::move(out), {x, b}, [](Node& self) {
        Node& X = *self.parents[0];
        Node& B = *self.parents[1];
        if (X.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) X.grad.a[i] += self.grad.a[i];
        if (B.requires_grad)
            for (int r = 0; r < self.grad.rows; ++r)
                for (int c = 0; c < self.grad.cols; ++c) B.grad(0, c) += self.grad(r, c);
    });
}

namespace {

// Shared scaffolding for unary elementwise ops whose derivative only needs
// the input value.
Var unary(const Var& x, double (*f)(double), double (*df)(double)) {
    Mat out(x->val.rows, x->val.cols);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] = f(x->val.a[i]);
    return make_op(std::move(out), {x}, [df](Node& self) {
        Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
            X.grad.a[i] += self.grad.a[i] * df(X.val.a[i]);
    });
}

} // namespace

Var relu(const Var& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double alpha) {
    Mat out(x->val.rows, x->val.cols);
    for (size_t i = 0; i < out.size(); ++i) {
        double v = x->val.a[i];
        out.a[i] = v > 0.0 ? v : alpha * v;
    }
    return make_op(std::move(out), {x}, [alpha](Node& self) {
        Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
            X.grad.a[i] += self.grad.a[i] * (X.val.a[i] > 0.0 ? 1.0 : alpha);
    });
}

Var tanh(const Var& x) {
    Mat out(x->val.rows, x->val.cols);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] = std::tanh(x->val.a[i]);
    // Uses the stored output: d tanh = 1 - tanh^2.
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double t = self.val.a[i];
            X.grad.a[i] += self.grad.a[i] * (1.0 - t * t);
        }
    });
}

Var sin(const Var& x) {
    return unary(
        x, [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw InputError("concat: no inputs");
    if (axis != 0 && axis != 1) throw InputError("concat: axis must be 0 or 1");
    int rows = xs[0]->val.rows, cols = xs[0]->val.cols;
    for (size_t i = 1; i < xs.size(); ++i) {
        const Mat& m = xs[i]->val;
        if (axis == 0 && m.cols != cols)
            throw DimensionError("concat axis 0: col mismatch " + m.shape_str() + " vs " +
                                 xs[0]->val.shape_str());
        if (axis == 1 && m.rows != rows)
            throw DimensionError("concat axis 1: row mismatch " + m.shape_str() + " vs " +
                                 xs[0]->val.shape_str());
        if (axis == 0)
            rows += m.rows;
        else
            cols += m.cols;
    }
    Mat out(rows, cols);
    if (axis == 0) {
        int r0 = 0;
        for (const auto& x : xs) {
            std::copy(x->val.a.begin(), x->val.a.end(),
                      out.a.begin() + static_cast<size_t>(r0) * cols);
            r0 += x->val.rows;
        }
    } else {
        int c0 = 0;
        for (const auto& x : xs) {
            const Mat& m = x->val;
            for (int r = 0; r < rows; ++r)
                std::copy(&m.a[static_cast<size_t>(r) * m.cols],
                          &m.a[static_cast<size_t>(r) * m.cols] + m.cols,
                          &out.a[static_cast<size_t>(r) * cols + c0]);
            c0 += m.cols;
        }
    }
    const int ax = axis;
    return make_op(std::move(out), xs, [ax](Node& self) {
        if (ax == 0) {
            int r0 = 0;
            for (auto& p : self.parents) {
                if (p->requires_grad) {
                    const size_t off = static_cast<size_t>(r0) * self.grad.cols;
                    for (size_t i = 0; i < p->grad.size(); ++i) p->grad.a[i] += self.grad.a[off + i];
                }
                r0 += p->val.rows;
            }
        } else {
            int c0 = 0;
            for (auto& p : self.parents) {
                const Mat& pv = p->val;
                if (p->requires_grad)
                    for (int r = 0; r < pv.rows; ++r)
                        for (int c = 0; c < pv.cols; ++c)
                            p->grad(r, c) += self.grad(r, c0 + c);
                c0 += pv.cols;
            }
        }
    });
}

Var sum_all(const Var& x) {
    Mat out(1, 1);
    for (double v : x->val.a) out.a[0] += v;
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& X = *self.parents[0];
        if (!X.requires_grad) return;
        const double g = self.grad.a[0];
        for (double& v : X.grad.a) v += g;
    });
}

Var mse_loss(const Var& pred, const Var& target) {
    if (!pred->val.same_shape(target->val))
        throw DimensionError("mse: shapes " + pred->val.shape_str() + " vs " +
                             target->val.shape_str());
    const size_t n = pred->val.size();
    Mat out(1, 1);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = pred->val.a[i] - target->val.a[i];
        s += d * d;
    }
    out.a[0] = s / static_cast<double>(n);
    return make_op(std::move(out), {pred, target}, [](Node& self) {
        Node& P = *self.parents[0];
        Node& T = *self.parents[1];
        const double g = self.grad.a[0] * 2.0 / static_cast<double>(P.val.size());
        if (P.requires_grad)
            for (size_t i = 0; i < P.val.size(); ++i)
                P.grad.a[i] += g * (P.val.a[i] - T.val.a[i]);
        if (T.requires_grad)
            for (size_t i = 0; i < T.val.size(); ++i)
                T.grad.a[i] -= g * (P.val.a[i] - T.val.a[i]);
    });
}

Mat softmax_rows(const Mat& logits) {
    Mat p(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        double mx = logits(r, 0);
        for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, logits(r, c));
        double z = 0.0;
        for (int c = 0; c < logits.cols; ++c) {
            p(r, c) = std::exp(logits(r, c) - mx);
            z += p(r, c);
        }
        for (int c = 0; c < logits.cols; ++c) p(r, c) /= z;
    }
    return p;
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    const Mat& z = logits->val;
    if (static_cast<int>(labels.size()) != z.rows)
        throw DimensionError("cross entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(z.rows) + " rows");
    for (int r = 0; r < z.rows; ++r)
        if (labels[r] < 0 || labels[r] >= z.cols)
            throw InputError("cross entropy: label " + std::to_string(labels[r]) +
                             " out of range [0," + std::to_string(z.cols) + ") at row " +
                             std::to_string(r));
    Mat probs = softmax_rows(z);
    Mat out(1, 1);
    double s = 0.0;
    for (int r = 0; r < z.rows; ++r) s -= std::log(probs(r, labels[r]));
    out.a[0] = s / z.rows;
    // Softmax probabilities are recomputed in backward from the stored logits;
    // cheaper than holding them for every minibatch node.
    return make_op(std::move(out), {logits}, [labels](Node& self) {
        Node& L = *self.parents[0];
        if (!L.requires_grad) return;
        Mat probs = softmax_rows(L.val);
        const double g = self.grad.a[0] / L.val.rows;
        for (int r = 0; r < probs.rows; ++r) {
            for (int c = 0; c < probs.cols; ++c)
                L.grad(r, c) += g * probs(r, c);
            L.grad(r, labels[r]) -= g;
        }
    });
}

} // namespace profusion
