#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace urbanclip::objectives {

// L2-normalized TF-IDF bag-of-words vectors (smoothed idf), one row per text.
Eigen::MatrixXd tfidf_vectors(const std::vector<std::string>& texts);

// Row-major m x m mask: cosine(tfidf_i, tfidf_j) >= threshold, i != j.
std::vector<std::uint8_t> tfidf_positive_mask(const std::vector<std::string>& texts,
                                              double threshold = 0.8);

struct PcaBasis {
  Eigen::VectorXd mean;        // [D]
  Eigen::MatrixXd components;  // [k, D], unit rows, descending eigenvalue
  Eigen::VectorXd eigenvalues; // [k]
};

// Principal components of the rows of `x` ([n, D]). Uses the n x n Gram
// matrix when D > n. DomainError when k exceeds the numerical rank.
PcaBasis pca_fit(const Eigen::MatrixXd& x, int k);
Eigen::VectorXd pca_project(const PcaBasis& basis, const Eigen::VectorXd& row);
Eigen::VectorXd pca_reconstruct(const PcaBasis& basis, const Eigen::VectorXd& code);

}  // namespace urbanclip::objectives
