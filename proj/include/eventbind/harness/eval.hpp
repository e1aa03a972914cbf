#pragma once

// Recognition and retrieval metrics.

#include "eventbind/autodiff.hpp"
#include "eventbind/errors.hpp"
#include "eventbind/harness/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace eventbind::harness {

/// p = softmax(f^e . text^T), no temperature.
inline std::vector<double> recognition_logits(const Eigen::RowVectorXd& embedding, const ad::Mat& text) {
  if (text.cols() != embedding.cols()) throw std::invalid_argument("recognition_logits: dimension mismatch");
  const Eigen::VectorXd sims = text * embedding.transpose();
  const double m = sims.maxCoeff();
  std::vector<double> p(static_cast<std::size_t>(sims.size()));
  double z = 0.0;
  for (Eigen::Index i = 0; i < sims.size(); ++i) z += (p[static_cast<std::size_t>(i)] = std::exp(sims(i) - m));
  for (double& v : p) v /= z;
  return p;
}

/// argmax with the lowest index winning ties.
inline int predict(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("predict: empty probability vector");
  int best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

/// Fraction of queries whose top-k gallery items (score descending, ties by
/// lower gallery index) contain a matching label. scores is Q x G.
inline double recall_at_k(const ad::Mat& scores, std::span<const int> query_labels, std::span<const int> gallery_labels, int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (gallery_labels.empty()) throw std::invalid_argument("recall_at_k: empty gallery");
  if (static_cast<std::size_t>(k) > gallery_labels.size()) throw std::invalid_argument("recall_at_k: k exceeds gallery size");
  if (static_cast<std::size_t>(scores.rows()) != query_labels.size() || static_cast<std::size_t>(scores.cols()) != gallery_labels.size()) {
    throw std::invalid_argument("recall_at_k: score matrix shape mismatch");
  }
  if (query_labels.empty()) return 0.0;
  std::vector<int> order(gallery_labels.size());
  std::size_t hits = 0;
  for (Eigen::Index q = 0; q < scores.rows(); ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      const double sa = scores(q, a), sb = scores(q, b);
      return sa > sb || (sa == sb && a < b);
    });
    for (int i = 0; i < k; ++i) {
      if (gallery_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] == query_labels[static_cast<std::size_t>(q)]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(query_labels.size());
}

/// Dot-product similarity version; rows are embeddings.
inline double recall_at_k(const ad::Mat& query_embs, const ad::Mat& gallery_embs, std::span<const int> query_labels,
                          std::span<const int> gallery_labels, int k) {
  if (query_embs.cols() != gallery_embs.cols()) throw std::invalid_argument("recall_at_k: embedding width mismatch");
  return recall_at_k(ad::Mat(query_embs * gallery_embs.transpose()), query_labels, gallery_labels, k);
}

/// Everything computed while evaluating a split.
struct EvalResult {
  double accuracy = 0.0;
  std::vector<int> labels;
  std::vector<int> predictions;
  ad::Mat event_embeddings;           // N x D'
  std::vector<ad::Mat> text_matrices; // per sample, N_cls x D'
  ad::Mat image_embeddings;           // N x D' (empty when images are unused)
  // Recall@{1,5,10}; nullopt when k exceeds the gallery.
  std::array<std::optional<double>, 3> text_to_event{};
  std::array<std::optional<double>, 3> image_to_event{};
};

inline constexpr std::array<int, 3> kRecallKs{1, 5, 10};

/// Recognition accuracy plus text->event and image->event retrieval over the
/// split used as gallery. Text queries are one per category; the score of
/// category c against gallery item g uses the text embedding conditioned on
/// g's own content prompt, i.e. the recognition similarity.
inline EvalResult evaluate(const EventBindModel& model, std::span<const PreparedSample> samples, bool with_images = true) {
  EvalResult r;
  const auto n = static_cast<Eigen::Index>(samples.size());
  const int d = model.config().event.embed_dim;
  const int n_cls = model.num_categories();
  r.event_embeddings.resize(n, d);
  std::size_t correct = 0;
  ad::Mat text_scores(n_cls, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PreparedSample& s = samples[static_cast<std::size_t>(i)];
    auto q = model.query(s.frames);
    const auto p = recognition_logits(q.embedding, q.text);
    const int pred = predict(p);
    r.labels.push_back(s.category);
    r.predictions.push_back(pred);
    correct += pred == s.category ? 1 : 0;
    r.event_embeddings.row(i) = q.embedding;
    text_scores.col(i) = q.text * q.embedding.transpose();
    r.text_matrices.push_back(std::move(q.text));
  }
  r.accuracy = n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
  if (n == 0) return r;

  std::vector<int> cls(static_cast<std::size_t>(n_cls));
  std::iota(cls.begin(), cls.end(), 0);
  for (std::size_t j = 0; j < kRecallKs.size(); ++j) {
    if (kRecallKs[j] <= n) r.text_to_event[j] = recall_at_k(text_scores, cls, r.labels, kRecallKs[j]);
  }
  if (with_images && !model.config().no_image) {
    r.image_embeddings.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) r.image_embeddings.row(i) = model.image_embedding(samples[static_cast<std::size_t>(i)].image);
    for (std::size_t j = 0; j < kRecallKs.size(); ++j) {
      if (kRecallKs[j] <= n) r.image_to_event[j] = recall_at_k(r.image_embeddings, r.event_embeddings, r.labels, r.labels, kRecallKs[j]);
    }
  }
  return r;
}

}  // namespace eventbind::harness
