#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pigeon/errors.hpp"
#include "pigeon/synthworld.hpp"

namespace pigeon {

// Deterministic map from a token sequence to a comparison vector. The plain
// embedder projects with the identity (mean of codebook rows); the metric
// embedders use fixed random projections to mimic independent feature
// extractors.
struct Embedder {
    std::string name;
    Eigen::MatrixXd codebook;    // K x d render table
    Eigen::MatrixXd projection;  // q x d

    Eigen::VectorXd embed_tokens(const std::vector<int>& token_ids) const {
        if (token_ids.empty()) throw undefined_score_error("cannot embed an empty sequence");
        return projection * synthworld::render(codebook, token_ids);
    }

    static Embedder plain(const Eigen::MatrixXd& codebook) {
        return Embedder{"plain", codebook,
                        Eigen::MatrixXd::Identity(codebook.cols(), codebook.cols())};
    }
};

}  // namespace pigeon
