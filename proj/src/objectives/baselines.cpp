#include "urbanclip/objectives/baselines.hpp"

#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>

#include "urbanclip/errors.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace urbanclip::objectives {

Eigen::MatrixXd tfidf_vectors(const std::vector<std::string>& texts) {
  std::map<std::string, int> column;
  std::vector<std::map<int, double>> counts(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& w : textpipe::normalize_words(texts[i])) {
      if (w == ".") continue;
      auto it = column.emplace(w, int(column.size())).first;
      counts[i][it->second] += 1.0;
    }
  }
  const double n = double(texts.size());
  std::vector<double> df(column.size(), 0.0);
  for (const auto& row : counts)
    for (const auto& [c, v] : row) df[std::size_t(c)] += 1.0;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Eigen::Index(texts.size()), Eigen::Index(column.size()));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const auto& [c, v] : counts[i]) {
      out(Eigen::Index(i), c) = v * (std::log((1.0 + n) / (1.0 + df[std::size_t(c)])) + 1.0);
    }
    const double norm = out.row(Eigen::Index(i)).norm();
    if (norm > 0) out.row(Eigen::Index(i)) /= norm;
  }
  return out;
}

std::vector<std::uint8_t> tfidf_positive_mask(const std::vector<std::string>& texts,
                                              double threshold) {
  const Eigen::MatrixXd v = tfidf_vectors(texts);
  const Eigen::MatrixXd cos = v * v.transpose();
  const std::size_t m = texts.size();
  std::vector<std::uint8_t> mask(m * m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      mask[i * m + j] = i != j && cos(Eigen::Index(i), Eigen::Index(j)) >= threshold - 1e-12;
  return mask;
}

PcaBasis pca_fit(const Eigen::MatrixXd& x, int k) {
  const Eigen::Index n = x.rows(), D = x.cols();
  if (k <= 0 || n < 2) throw DomainError("pca_fit needs k >= 1 and at least 2 rows");
  PcaBasis basis;
  basis.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - basis.mean.transpose();
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns are unit principal directions in R^D
  if (D > n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc * xc.transpose() / double(n - 1));
    values = eig.eigenvalues();
    vectors = xc.transpose() * eig.eigenvectors();
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
      const double norm = vectors.col(c).norm();
      if (norm > 0) vectors.col(c) /= norm;
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc.transpose() * xc / double(n - 1));
    values = eig.eigenvalues();
    vectors = eig.eigenvectors();
  }
  const double tol = std::max(1e-12, values.cwiseAbs().maxCoeff() * 1e-10);
  int rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) rank += values(i) > tol;
  if (k > rank) {
    throw DomainError("pca_fit: k=" + std::to_string(k) + " exceeds data rank " +
                      std::to_string(rank));
  }
  // Eigen returns ascending eigenvalues.
  basis.components.resize(k, D);
  basis.eigenvalues.resize(k);
  for (int i = 0; i < k; ++i) {
    const Eigen::Index src = values.size() - 1 - i;
    basis.components.row(i) = vectors.col(src).transpose();
    basis.eigenvalues(i) = values(src);
  }
  return basis;
}

Eigen::VectorXd pca_project(const PcaBasis& basis, const Eigen::VectorXd& row) {
  return basis.components * (row - basis.mean);
}

Eigen::VectorXd pca_reconstruct(const PcaBasis& basis, const Eigen::VectorXd& code) {
  return basis.mean + basis.components.transpose() * code;
}

}  // namespace urbanclip::objectives
