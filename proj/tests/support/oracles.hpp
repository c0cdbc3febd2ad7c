#pragma once

// Scalar reference implementations used to cross-check the library. They
// share no code with fcac_core: plain nested vectors and textbook formulas.

#include <complex>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat softmax_rows(const Mat& m);
Mat layer_norm_rows(const Mat& m, double eps = 1e-5);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// layer_norm(Psi4(softmax(X Psi1 (X Psi2)^T / sqrt(D)) X Psi3) + X), row convention.
Mat attention(const Mat& x, const Mat& w1, const Mat& w2, const Mat& w3, const Mat& w4);
/// Attention over every support row, then the mean of each class's `shots` rows.
Mat apgm(const Mat& support, std::size_t shots, const Mat& w1, const Mat& w2, const Mat& w3, const Mat& w4);

struct PqamResult {
  std::vector<Mat> prototypes;  // per query
  Mat queries;
  Mat scores;
};
/// Per query: attention over [old; novel; q], then temperature * cosine(q', P').
PqamResult pqam(const Mat& old_protos, const Mat& novel_protos, const Mat& queries, double temperature,
                const Mat& w1, const Mat& w2, const Mat& w3, const Mat& w4);

/// |X[k]|^2 for k = 0..n/2 by the O(n^2) definition, frame zero-padded to n.
std::vector<double> dft_power(const std::vector<double>& frame, std::size_t n);

/// Direct sliding-window cross-correlation. x: [ci][h][w], k: [co][ci][kh][kw].
using Vol = std::vector<Mat>;
Vol conv2d(const Vol& x, const std::vector<Vol>& k, std::size_t stride, std::size_t pad);

Mat random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
std::vector<double> flatten(const Mat& m);

}  // namespace oracle
