#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modest/adapter_net.hpp"
#include "modest/embedding_store.hpp"
#include "modest/loss_core.hpp"
#include "modest/matrix.hpp"

namespace modest {

struct RetrievalReport {
  std::string direction;          // "text_to_image" or "image_to_text"
  std::map<int, double> r_at;     // K -> recall fraction
  Index n_queries = 0;
};

/// Fraction of queries whose true gallery item ranks within the k highest
/// cosine similarities. Ties break toward the lower gallery index.
template <typename Scalar>
double recall_at_k(const RowMatrix<Scalar>& queries, const RowMatrix<Scalar>& gallery,
                   std::span<const Index> truth, int k) {
  if (k < 1) fail(Errc::invalid_argument, "k must be >= 1");
  if (queries.cols() != gallery.cols())
    fail(Errc::dim_mismatch, "query and gallery dims differ");
  if (Index(truth.size()) != queries.rows())
    fail(Errc::size_mismatch, "truth map length does not match query count");
  const Index m = queries.rows();
  const Index g = gallery.rows();
  for (Index t : truth)
    if (t < 0 || t >= g) fail(Errc::index_out_of_range, "truth index " + std::to_string(t));
  if (m == 0) return 0.0;

  VectorXd gnorms(g);
  for (Index j = 0; j < g; ++j) gnorms(j) = gallery.row(j).template cast<double>().norm();

  Index hits = 0;
  for (Index i = 0; i < m; ++i) {
    const VectorXd q = queries.row(i).template cast<double>().transpose();
    const double qn = q.norm();
    VectorXd sims(g);
    for (Index j = 0; j < g; ++j) {
      const double denom = qn * gnorms(j);
      sims(j) = denom > 0.0 ? gallery.row(j).template cast<double>().dot(q) / denom : 0.0;
    }
    const Index t = truth[std::size_t(i)];
    const double st = sims(t);
    // Rank of the truth item under (similarity desc, index asc) ordering.
    Index rank = 1;
    for (Index j = 0; j < g; ++j) {
      if (j == t) continue;
      if (sims(j) > st || (sims(j) == st && j < t)) ++rank;
    }
    if (rank <= Index(k)) ++hits;
  }
  return double(hits) / double(m);
}

/// Both retrieval directions at K in {1, 5, 10}, identity ground truth.
/// Adapters run without perturbation (the inference path).
std::pair<RetrievalReport, RetrievalReport> retrieval_report(
    const PairedDataset& ds, const AdapterNetwork<float>& adapter_x,
    const AdapterNetwork<float>& adapter_y);

inline constexpr std::array<double, 10> kHistogramEdges = {5, 10, 15, 20, 25, 30, 35, 40, 45, 50};

/// Per-pair cosine / tau scores bucketed into left-closed ranges
/// [5,10) ... [45,50), with explicit underflow (< 5) and overflow (>= 50).
struct SimilarityHistogram {
  std::array<double, 10> bin_edges = kHistogramEdges;
  std::array<std::int64_t, 9> counts{};
  std::int64_t underflow = 0;
  std::int64_t overflow = 0;
  double mean = 0.0;  // mean per-pair score
};

/// -1 for underflow, 0..8 for the bins, 9 for overflow.
inline int histogram_bin_index(double score) {
  if (score < kHistogramEdges.front()) return -1;
  if (score >= kHistogramEdges.back()) return 9;
  return int((score - kHistogramEdges.front()) / 5.0);
}

SimilarityHistogram similarity_histogram(const PairedDataset& ds, double tau = 0.01);

struct ConfidenceSummary {
  double mean_entropy = 0.0;
  double min_entropy = 0.0;
  double mean_diagonal = 0.0;
  double max_diagonal = 0.0;
  double mean_max_prob = 0.0;
};

ConfidenceSummary confidence_diagnostics(const AlignmentDistribution& p);

// Serialization for the CLI: JSON report, CSV (direction,K,recall) and CSV
// (bin_low,bin_high,count).
std::string retrieval_reports_to_json(const RetrievalReport& a, const RetrievalReport& b);
std::string retrieval_reports_to_csv(const RetrievalReport& a, const RetrievalReport& b);
std::string histogram_to_csv(const SimilarityHistogram& h);

}  // namespace modest
