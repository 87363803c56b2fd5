#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pigeon/tape.hpp"
#include "pigeon/rng.hpp"
#include "testutil.hpp"

using namespace pigeon;
using nn::Matrix;
using nn::Tape;
using nn::Var;

TEST_CASE("matmul chain gradients match finite differences") {
    Rng rng(1);
    Matrix a = rng.gaussian(3, 4);
    Matrix b = rng.gaussian(4, 5);

    Matrix grad_a;
    auto loss_of = [&](const Matrix& av) {
        Tape t;
        Var va = t.constant(av);
        Var vb = t.constant(b);
        Var out = nn::sum_all(nn::gelu(nn::matmul(va, vb)));
        return out.scalar();
    };
    {
        Tape t;
        Var va = t.leaf(a, &grad_a);
        Var vb = t.constant(b);
        Var out = nn::sum_all(nn::gelu(nn::matmul(va, vb)));
        t.backward(out);
    }
    for (auto [i, j] : testutil::probe_cells(a, 6, 7)) {
        double fd = testutil::central_diff([&] { return loss_of(a); }, a(i, j));
        CHECK(testutil::rel_err(grad_a(i, j), fd) < 1e-7);
    }
}

TEST_CASE("softmax, log-softmax, layer norm gradients") {
    Rng rng(2);
    Matrix x = rng.gaussian(4, 6);

    auto build = [&](const Matrix& xv) {
        Tape t;
        Var v = t.constant(xv);
        Var s = nn::softmax_rows(v);
        Var ls = nn::log_softmax_rows(v);
        Var ln = nn::layer_norm_rows(v);
        Var mix = nn::add(nn::add(s, ls), ln);
        return nn::sum_all(nn::cmul(mix, mix)).scalar();
    };
    Matrix grad;
    {
        Tape t;
        Var v = t.leaf(x, &grad);
        Var s = nn::softmax_rows(v);
        Var ls = nn::log_softmax_rows(v);
        Var ln = nn::layer_norm_rows(v);
        Var mix = nn::add(nn::add(s, ls), ln);
        t.backward(nn::sum_all(nn::cmul(mix, mix)));
    }
    for (auto [i, j] : testutil::probe_cells(x, 8, 3)) {
        double fd = testutil::central_diff([&] { return build(x); }, x(i, j));
        CHECK(testutil::rel_err(grad(i, j), fd) < 1e-6);
    }
}

TEST_CASE("row ops, gather, cosine gradients") {
    Rng rng(3);
    Matrix table = rng.gaussian(5, 4);
    Matrix other = rng.gaussian(3, 4);
    std::vector<int> ids{1, 4, 1};
    Matrix gates = rng.gaussian(3, 1).array().abs() + 0.5;

    auto build = [&](const Matrix& tv) {
        Tape t;
        Var tab = t.constant(tv);
        Var g = nn::gather_rows(tab, ids);
        Var scaled = nn::row_scale(g, t.constant(gates));
        Var cos = nn::cosine_rows(scaled, t.constant(other));
        Var m = nn::mean_rows(nn::cmul(scaled, scaled));
        return (nn::sum_all(cos).scalar() + nn::sum_all(m).scalar());
    };
    Matrix grad;
    {
        Tape t;
        Var tab = t.leaf(table, &grad);
        Var g = nn::gather_rows(tab, ids);
        Var scaled = nn::row_scale(g, t.constant(gates));
        Var cos = nn::cosine_rows(scaled, t.constant(other));
        Var m = nn::mean_rows(nn::cmul(scaled, scaled));
        t.backward(nn::add(nn::sum_all(cos), nn::sum_all(m)));
    }
    for (auto [i, j] : testutil::probe_cells(table, 8, 5)) {
        double fd = testutil::central_diff([&] { return build(table); }, table(i, j));
        CHECK(testutil::rel_err(grad(i, j), fd) < 1e-6);
    }
}

TEST_CASE("pick, sigmoid, log-sigmoid, broadcast gradients") {
    Rng rng(4);
    Matrix x = rng.gaussian(4, 5);
    Matrix row = rng.gaussian(1, 5);
    std::vector<int> picks{0, 3, 2, 4};

    auto graph_value = [&](Tape& t, Var vx) {
        Var vr = t.constant(row);
        Var a = nn::add_rowvec(vx, vr);
        Var b = nn::mul_rowvec(a, vr);
        Var p = nn::pick_per_row(nn::sigmoid(b), picks);
        Var q = nn::log_sigmoid(nn::slice_cols(b, 1, 2));
        return nn::add(nn::sum_all(p), nn::sum_all(q));
    };
    Matrix grad;
    {
        Tape t;
        Var vx = t.leaf(x, &grad);
        t.backward(graph_value(t, vx));
    }
    for (auto [i, j] : testutil::probe_cells(x, 8, 11)) {
        double fd = testutil::central_diff(
            [&] {
                Tape t;
                return graph_value(t, t.constant(x)).scalar();
            },
            x(i, j));
        CHECK(testutil::rel_err(grad(i, j), fd) < 1e-6);
    }
}

TEST_CASE("straight-through passes gradients to the soft path") {
    Matrix soft_in(3, 1);
    soft_in << 0.2, -0.4, 1.3;
    Matrix hard(3, 1);
    hard << 1, 0, 1;

    Matrix grad;
    Tape t;
    Var leaf = t.leaf(soft_in, &grad);
    Var gate = nn::sigmoid(leaf);
    Var st = nn::straight_through(hard, gate);
    CHECK(st.value() == hard);  // forward emits the hard values
    Var weighted = nn::cmul(st, t.constant(Matrix::Constant(3, 1, 2.0)));
    t.backward(nn::sum_all(weighted));
    // backward is d/dx [2 * sigmoid(x)] even though forward was hard
    for (int i = 0; i < 3; ++i) {
        double s = 1.0 / (1.0 + std::exp(-soft_in(i, 0)));
        CHECK(grad(i, 0) == doctest::Approx(2.0 * s * (1 - s)).epsilon(1e-12));
    }
}

TEST_CASE("gradients accumulate across tapes into the same sink") {
    Matrix w(2, 2);
    w << 1, 2, 3, 4;
    Matrix grad;
    for (int rep = 0; rep < 3; ++rep) {
        Tape t;
        Var leaf = t.leaf(w, &grad);
        t.backward(nn::sum_all(leaf));
    }
    CHECK(grad == Matrix::Constant(2, 2, 3.0));
}

TEST_CASE("concat and slice round trips") {
    Rng rng(5);
    Matrix a = rng.gaussian(2, 3), b = rng.gaussian(4, 3);
    Tape t;
    Var va = t.constant(a), vb = t.constant(b);
    Var cat = nn::concat_rows({va, vb});
    CHECK(cat.rows() == 6);
    CHECK(nn::slice_rows(cat, 0, 2).value() == a);
    CHECK(nn::slice_rows(cat, 2, 4).value() == b);

    Var cc = nn::concat_cols({va, va});
    CHECK(cc.cols() == 6);
    CHECK(nn::slice_cols(cc, 3, 3).value() == a);
}
