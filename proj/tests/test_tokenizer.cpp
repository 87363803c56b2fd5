#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pigeon/errors.hpp"
#include "pigeon/tokenizer.hpp"
#include "testutil.hpp"

using namespace pigeon;
using namespace pigeon::tokenizer;

namespace {

Codebook two_entry_codebook() {
    Codebook cb;
    cb.entries.resize(2, 2);
    cb.entries << 1, 0, 0, 1;
    return cb;
}

}  // namespace

TEST_CASE("tokenize picks nearest entries") {
    Codebook cb = two_entry_codebook();
    Matrix patches(2, 2);
    patches << 0.9, 0.1, 0.2, 0.8;
    TokenSequence seq = tokenize(patches, cb);
    CHECK(seq.ids == std::vector<int>{0, 1});
    CHECK(seq.embeddings.row(0) == cb.entries.row(0));
}

TEST_CASE("tokenize tie-break goes to the lowest index") {
    Codebook cb = two_entry_codebook();
    Matrix patch(1, 2);
    patch << 0.5, 0.5;  // exactly equidistant
    CHECK(tokenize(patch, cb).ids == std::vector<int>{0});
}

TEST_CASE("tokenize on codebook rows is a fixed point") {
    Codebook cb = random_codebook(8, 4, 123);
    TokenSequence seq = tokenize(cb.entries, cb);
    for (int i = 0; i < 8; ++i) CHECK(seq.ids[i] == i);
    CHECK(seq.embeddings == cb.entries);
}

TEST_CASE("tokenize rejects empty input") {
    Codebook cb = two_entry_codebook();
    Matrix empty(0, 2);
    CHECK_THROWS_AS(tokenize(empty, cb), shape_error);
}

TEST_CASE("embed repeats and validates ids") {
    Codebook cb = two_entry_codebook();
    Matrix out = embed({0, 0}, cb);
    CHECK(out.row(0) == cb.entries.row(0));
    CHECK(out.row(1) == cb.entries.row(0));
    CHECK_THROWS_AS(embed({2}, cb), index_error);
    CHECK_THROWS_AS(embed({-1}, cb), index_error);
}

TEST_CASE("tokenize then embed round-trips on codebook rows") {
    Codebook cb = random_codebook(16, 6, 9);
    TokenSequence seq = tokenize(cb.entries, cb);
    CHECK(embed(seq.ids, cb) == cb.entries);
}

TEST_CASE("codebook validation catches duplicates") {
    Codebook cb;
    cb.entries.resize(2, 3);
    cb.entries << 1, 2, 3, 1, 2, 3;
    CHECK_THROWS_AS(validate(cb), config_error);
    CHECK_THROWS_AS(random_codebook(1, 4, 5), config_error);
}

TEST_CASE("identity-initialized decoder reproduces its input") {
    DecoderParams p = identity_decoder(4, 8);
    Rng rng(3);
    Matrix embs = rng.gaussian(5, 4);
    VisualFeatures out = decode_tokens(embs, p);
    CHECK(out.features == embs);
}

TEST_CASE("decoder is positionwise") {
    Rng rng(4);
    DecoderParams p = random_decoder(4, 8, rng);
    Matrix row = rng.gaussian(1, 4);
    Matrix repeated = row.replicate(3, 1);
    VisualFeatures out = decode_tokens(repeated, p);
    for (int i = 1; i < 3; ++i) CHECK(out.features.row(i) == out.features.row(0));

    // row j of the output depends only on row j of the input
    Matrix mixed = rng.gaussian(3, 4);
    mixed.row(1) = row;
    CHECK(decode_tokens(mixed, p).features.row(1) == out.features.row(0));
}

TEST_CASE("decoder weight gradients match central differences") {
    Rng rng(5);
    DecoderParams p = random_decoder(4, 6, rng);
    Matrix embs = rng.gaussian(3, 4);
    Matrix probe = rng.gaussian(4, 1);  // scalar head over pooled features

    auto loss_value = [&]() {
        nn::Tape t;
        nn::Binder bind = nn::Binder::constants(t);
        nn::Var feats = decode_tokens_graph(t.constant(embs), p, bind);
        nn::Var pooled = nn::mean_rows(feats);
        return nn::matmul(pooled, t.constant(probe)).scalar();
    };

    nn::GradMap grads;
    {
        nn::Tape t;
        nn::Binder bind{&t, &grads, [](const std::string&) { return true; }, nullptr};
        nn::Var feats = decode_tokens_graph(t.constant(embs), p, bind);
        nn::Var pooled = nn::mean_rows(feats);
        t.backward(nn::matmul(pooled, t.constant(probe)));
    }

    int checked = 0;
    auto check_param = [&](const std::string& name, Matrix& value) {
        const Matrix& g = grads.g[name];
        for (auto [i, j] : testutil::probe_cells(value, 4, 77 + checked)) {
            double fd = testutil::central_diff(loss_value, value(i, j));
            CHECK(testutil::rel_err(g(i, j), fd) < 1e-4);
            ++checked;
        }
    };
    p.visit("decoder", check_param);
    CHECK(checked >= 12);
}

TEST_CASE("graph and plain decoder agree") {
    Rng rng(6);
    DecoderParams p = random_decoder(5, 7, rng);
    Matrix embs = rng.gaussian(4, 5);
    nn::Tape t;
    nn::Binder bind = nn::Binder::constants(t);
    Matrix graph_out = decode_tokens_graph(t.constant(embs), p, bind).value();
    Matrix plain_out = decode_tokens(embs, p).features;
    CHECK((graph_out - plain_out).cwiseAbs().maxCoeff() < 1e-12);
}
