#include "pigeon/tape.hpp"

#include <cmath>

#include "pigeon/errors.hpp"

namespace pigeon::nn {

const Matrix& Var::value() const { return tape->value(id); }
int Var::rows() const { return static_cast<int>(value().rows()); }
int Var::cols() const { return static_cast<int>(value().cols()); }
double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw shape_error("scalar() on non-1x1 node");
    return v(0, 0);
}

Var Tape::constant(Matrix v) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Matrix& v, Matrix* grad_sink) {
    Node n;
    n.value = v;
    n.sink = grad_sink;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make(Matrix value, std::vector<int> parents, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    for (int p : n.parents) {
        if (nodes_[p].needs_grad) {
            n.needs_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw error("backward on foreign tape");
    Node& top = nodes_[loss.id];
    if (top.value.rows() != 1 || top.value.cols() != 1)
        throw shape_error("backward requires a scalar loss node");
    for (int i = 0; i <= loss.id; ++i) {
        if (nodes_[i].needs_grad)
            nodes_[i].grad = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
    top.grad = Matrix::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.back) n.back(*this, i);
        if (n.sink) {
            if (n.sink->size() == 0) *n.sink = Matrix::Zero(n.value.rows(), n.value.cols());
            *n.sink += n.grad;
        }
    }
}

namespace {

void accum(Tape& t, int parent, const Matrix& g) {
    if (!t.needs_grad(parent)) return;
    t.grad_mut(parent) += g;
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    if (a.cols() != b.rows()) throw shape_error("matmul dims");
    Matrix out = a.value() * b.value();
    int ai = a.id, bi = b.id;
    return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        accum(tp, ai, g * tp.value(bi).transpose());
        accum(tp, bi, tp.value(ai).transpose() * g);
    });
}

Var add(Var a, Var b) {
    Tape& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("add dims");
    int ai = a.id, bi = b.id;
    return t.make(a.value() + b.value(), {ai, bi}, [ai, bi](Tape& tp, int self) {
        accum(tp, ai, tp.grad(self));
        accum(tp, bi, tp.grad(self));
    });
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("sub dims");
    int ai = a.id, bi = b.id;
    return t.make(a.value() - b.value(), {ai, bi}, [ai, bi](Tape& tp, int self) {
        accum(tp, ai, tp.grad(self));
        accum(tp, bi, -tp.grad(self));
    });
}

Var cmul(Var a, Var b) {
    Tape& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("cmul dims");
    int ai = a.id, bi = b.id;
    return t.make(a.value().cwiseProduct(b.value()), {ai, bi}, [ai, bi](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        accum(tp, ai, g.cwiseProduct(tp.value(bi)));
        accum(tp, bi, g.cwiseProduct(tp.value(ai)));
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    int ai = a.id;
    return t.make(a.value() * s, {ai}, [ai, s](Tape& tp, int self) {
        accum(tp, ai, tp.grad(self) * s);
    });
}

Var add_const(Var a, const Matrix& c) {
    Tape& t = *a.tape;
    if (a.rows() != c.rows() || a.cols() != c.cols()) throw shape_error("add_const dims");
    int ai = a.id;
    return t.make(a.value() + c, {ai}, [ai](Tape& tp, int self) {
        accum(tp, ai, tp.grad(self));
    });
}

Var add_rowvec(Var a, Var row) {
    Tape& t = *a.tape;
    if (row.rows() != 1 || row.cols() != a.cols()) throw shape_error("add_rowvec dims");
    Matrix out = a.value().rowwise() + row.value().row(0);
    int ai = a.id, ri = row.id;
    return t.make(std::move(out), {ai, ri}, [ai, ri](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        accum(tp, ai, g);
        accum(tp, ri, g.colwise().sum());
    });
}

Var mul_rowvec(Var a, Var row) {
    Tape& t = *a.tape;
    if (row.rows() != 1 || row.cols() != a.cols()) throw shape_error("mul_rowvec dims");
    Matrix out = a.value().array().rowwise() * row.value().row(0).array();
    int ai = a.id, ri = row.id;
    return t.make(std::move(out), {ai, ri}, [ai, ri](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.needs_grad(ai))
            tp.grad_mut(ai) +=
                (g.array().rowwise() * tp.value(ri).row(0).array()).matrix();
        if (tp.needs_grad(ri))
            tp.grad_mut(ri) += g.cwiseProduct(tp.value(ai)).colwise().sum();
    });
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    int ai = a.id;
    return t.make(a.value().transpose(), {ai}, [ai](Tape& tp, int self) {
        accum(tp, ai, tp.grad(self).transpose());
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_rows of nothing");
    Tape& t = *parts.front().tape;
    int cols = parts.front().cols();
    int rows = 0;
    std::vector<int> ids;
    std::vector<int> offsets;
    for (const Var& p : parts) {
        if (p.cols() != cols) throw shape_error("concat_rows column mismatch");
        ids.push_back(p.id);
        offsets.push_back(rows);
        rows += p.rows();
    }
    Matrix out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k)
        out.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
    return t.make(std::move(out), ids, [ids, offsets](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            int r = static_cast<int>(tp.value(ids[k]).rows());
            accum(tp, ids[k], g.middleRows(offsets[k], r));
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_cols of nothing");
    Tape& t = *parts.front().tape;
    int rows = parts.front().rows();
    int cols = 0;
    std::vector<int> ids;
    std::vector<int> offsets;
    for (const Var& p : parts) {
        if (p.rows() != rows) throw shape_error("concat_cols row mismatch");
        ids.push_back(p.id);
        offsets.push_back(cols);
        cols += p.cols();
    }
    Matrix out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k)
        out.middleCols(offsets[k], parts[k].cols()) = parts[k].value();
    return t.make(std::move(out), ids, [ids, offsets](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            int c = static_cast<int>(tp.value(ids[k]).cols());
            accum(tp, ids[k], g.middleCols(offsets[k], c));
        }
    });
}

Var slice_rows(Var a, int start, int count) {
    Tape& t = *a.tape;
    if (start < 0 || start + count > a.rows()) throw shape_error("slice_rows range");
    int ai = a.id;
    return t.make(a.value().middleRows(start, count), {ai},
                  [ai, start, count](Tape& tp, int self) {
                      if (!tp.needs_grad(ai)) return;
                      tp.grad_mut(ai).middleRows(start, count) += tp.grad(self);
                  });
}

Var slice_cols(Var a, int start, int count) {
    Tape& t = *a.tape;
    if (start < 0 || start + count > a.cols()) throw shape_error("slice_cols range");
    int ai = a.id;
    return t.make(a.value().middleCols(start, count), {ai},
                  [ai, start, count](Tape& tp, int self) {
                      if (!tp.needs_grad(ai)) return;
                      tp.grad_mut(ai).middleCols(start, count) += tp.grad(self);
                  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
    Tape& t = *table.tape;
    Matrix out(static_cast<int>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) throw index_error("gather_rows id out of range");
        out.row(static_cast<int>(i)) = table.value().row(ids[i]);
    }
    int ti = table.id;
    return t.make(std::move(out), {ti}, [ti, ids](Tape& tp, int self) {
        if (!tp.needs_grad(ti)) return;
        const Matrix& g = tp.grad(self);
        Matrix& tg = tp.grad_mut(ti);
        for (std::size_t i = 0; i < ids.size(); ++i)
            tg.row(ids[i]) += g.row(static_cast<int>(i));
    });
}

Var row_scale(Var a, Var gates) {
    Tape& t = *a.tape;
    if (gates.cols() != 1 || gates.rows() != a.rows()) throw shape_error("row_scale gate shape");
    Matrix out = gates.value().col(0).asDiagonal() * a.value();
    int ai = a.id, gi = gates.id;
    return t.make(std::move(out), {ai, gi}, [ai, gi](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.needs_grad(ai))
            tp.grad_mut(ai) += tp.value(gi).col(0).asDiagonal() * g;
        if (tp.needs_grad(gi))
            tp.grad_mut(gi) += g.cwiseProduct(tp.value(ai)).rowwise().sum();
    });
}

Var mean_rows(Var a) {
    Tape& t = *a.tape;
    const double inv = 1.0 / static_cast<double>(a.rows());
    Matrix out = a.value().colwise().mean();
    int ai = a.id;
    int rows = a.rows();
    return t.make(std::move(out), {ai}, [ai, inv, rows](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        accum(tp, ai, (g * inv).replicate(rows, 1));
    });
}

Var sum_all(Var a) {
    Tape& t = *a.tape;
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
        double g = tp.grad(self)(0, 0);
        if (!tp.needs_grad(ai)) return;
        tp.grad_mut(ai).array() += g;
    });
}

Var entry(Var a, int i, int j) {
    Tape& t = *a.tape;
    if (i < 0 || i >= a.rows() || j < 0 || j >= a.cols()) throw index_error("entry out of range");
    Matrix out(1, 1);
    out(0, 0) = a.value()(i, j);
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, i, j](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        tp.grad_mut(ai)(i, j) += tp.grad(self)(0, 0);
    });
}

Var softmax_rows(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        double mx = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - mx).exp();
        out.row(i) /= out.row(i).sum();
    }
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        if (!tp.needs_grad(ai)) return;
        Matrix da(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            double dot = g.row(i).dot(y.row(i));
            da.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
        }
        tp.grad_mut(ai) += da;
    });
}

Var log_softmax_rows(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        double mx = out.row(i).maxCoeff();
        double lse = std::log((out.row(i).array() - mx).exp().sum()) + mx;
        out.row(i).array() -= lse;
    }
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
        const Matrix& ls = tp.value(self);
        const Matrix& g = tp.grad(self);
        if (!tp.needs_grad(ai)) return;
        Matrix da(ls.rows(), ls.cols());
        for (Eigen::Index i = 0; i < ls.rows(); ++i) {
            double gsum = g.row(i).sum();
            da.row(i) = g.row(i) - gsum * ls.row(i).array().exp().matrix();
        }
        tp.grad_mut(ai) += da;
    });
}

Var pick_per_row(Var a, const std::vector<int>& cols) {
    Tape& t = *a.tape;
    if (static_cast<int>(cols.size()) != a.rows()) throw shape_error("pick_per_row count");
    Matrix out(a.rows(), 1);
    for (int i = 0; i < a.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= a.cols()) throw index_error("pick_per_row column");
        out(i, 0) = a.value()(i, cols[i]);
    }
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, cols](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_mut(ai);
        for (std::size_t i = 0; i < cols.size(); ++i)
            ga(static_cast<int>(i), cols[i]) += g(static_cast<int>(i), 0);
    });
}

Var layer_norm_rows(Var a, double eps) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    const int n = static_cast<int>(x.cols());
    Matrix out(x.rows(), x.cols());
    Matrix inv_sigma(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mu = x.row(i).mean();
        double var = (x.row(i).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(i, 0) = is;
        out.row(i) = (x.row(i).array() - mu) * is;
    }
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, inv_sigma, n](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Matrix& xn = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix da(xn.rows(), xn.cols());
        for (Eigen::Index i = 0; i < xn.rows(); ++i) {
            double gmean = g.row(i).mean();
            double gxmean = g.row(i).cwiseProduct(xn.row(i)).mean();
            da.row(i) = (inv_sigma(i, 0) *
                         (g.row(i).array() - gmean - xn.row(i).array() * gxmean))
                            .matrix();
        }
        (void)n;
        tp.grad_mut(ai) += da;
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    Matrix out = x.unaryExpr([](double v) {
        double u = kGeluC * (v + kGeluA * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
    });
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Matrix& x = tp.value(ai);
        Matrix d = x.unaryExpr([](double v) {
            double u = kGeluC * (v + kGeluA * v * v * v);
            double th = std::tanh(u);
            double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
        });
        tp.grad_mut(ai) += tp.grad(self).cwiseProduct(d);
    });
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value().unaryExpr([](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Matrix& y = tp.value(self);
        tp.grad_mut(ai) +=
            tp.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    });
}

Var log_sigmoid(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value().unaryExpr([](double v) {
        // log sigma(v) = -softplus(-v), computed stably
        return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
    });
    int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Matrix& x = tp.value(ai);
        Matrix d = x.unaryExpr([](double v) {
            // d/dv log sigma(v) = sigma(-v)
            return v >= 0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
        });
        tp.grad_mut(ai) += tp.grad(self).cwiseProduct(d);
    });
}

Var cosine_rows(Var a, Var b) {
    Tape& t = *a.tape;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw shape_error("cosine_rows dims");
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    Matrix out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double nx = x.row(i).norm();
        double ny = y.row(i).norm();
        if (nx < 1e-12 || ny < 1e-12)
            throw pigeon::degenerate_vector_error("zero-norm row in cosine");
        out(i, 0) = x.row(i).dot(y.row(i)) / (nx * ny);
    }
    int ai = a.id, bi = b.id;
    return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
        const Matrix& x = tp.value(ai);
        const Matrix& y = tp.value(bi);
        const Matrix& c = tp.value(self);
        const Matrix& g = tp.grad(self);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double nx = x.row(i).norm();
            double ny = y.row(i).norm();
            double gi = g(i, 0);
            if (tp.needs_grad(ai))
                tp.grad_mut(ai).row(i) +=
                    gi * (y.row(i) / (nx * ny) - c(i, 0) * x.row(i) / (nx * nx));
            if (tp.needs_grad(bi))
                tp.grad_mut(bi).row(i) +=
                    gi * (x.row(i) / (nx * ny) - c(i, 0) * y.row(i) / (ny * ny));
        }
    });
}

Var stop_gradient(Var a) {
    return a.tape->constant(a.value());
}

Var straight_through(const Matrix& hard, Var soft) {
    Tape& t = *soft.tape;
    if (hard.rows() != soft.rows() || hard.cols() != soft.cols())
        throw shape_error("straight_through shape mismatch");
    int si = soft.id;
    return t.make(hard, {si}, [si](Tape& tp, int self) {
        accum(tp, si, tp.grad(self));
    });
}

}  // namespace pigeon::nn
